//! Fit a two-layer network to a sine with the tape-based autodiff and Adam,
//! after checking one gradient against central differences.
//!
//! cargo run --example autodiff_fit

use brainage::autodiff::{Adam, AdamConfig, ParamStore, Session, Tensor};
use brainage::layers::{init_linear, linear};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss(s: &mut Session, x: &Tensor, y: &Tensor) -> brainage::Result<brainage::autodiff::Var> {
    let x = s.constant(x.clone());
    let h = linear(s, "fc1", x)?;
    let h = s.g.gelu(h)?;
    let out = linear(s, "fc2", h)?;
    let y = s.constant(y.clone());
    let d = s.g.sub(out, y)?;
    let sq = s.g.mul(d, d)?;
    s.g.mean(sq)
}

fn eval(params: &ParamStore, x: &Tensor, y: &Tensor) -> brainage::Result<f64> {
    let mut s = Session::new(params);
    let l = loss(&mut s, x, y)?;
    Ok(s.g.value(l).item())
}

fn main() -> brainage::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = ParamStore::new();
    init_linear(&mut params, "fc1", 1, 16, &mut rng);
    init_linear(&mut params, "fc2", 16, 1, &mut rng);

    let xs: Vec<f64> = (0..64).map(|i| -3.0 + 6.0 * i as f64 / 63.0).collect();
    let x = Tensor::new(vec![64, 1], xs.clone())?;
    let y = Tensor::new(vec![64, 1], xs.iter().map(|v| v.sin()).collect())?;

    let mut s = Session::new(&params);
    let l = loss(&mut s, &x, &y)?;
    s.backward(l)?;
    let analytic = s.grads()["fc1.weight"][3];
    let h = 1e-5;
    let mut probe = params.clone();
    probe.get_mut("fc1.weight")?.data_mut()[3] += h;
    let up = eval(&probe, &x, &y)?;
    probe.get_mut("fc1.weight")?.data_mut()[3] -= 2.0 * h;
    let down = eval(&probe, &x, &y)?;
    println!("d loss / d fc1.weight[3]: analytic {analytic:.9}, numeric {:.9}", (up - down) / (2.0 * h));

    let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..Default::default() })?;
    for step in 0..=1500 {
        let mut s = Session::new(&params);
        let l = loss(&mut s, &x, &y)?;
        let value = s.g.value(l).item();
        s.backward(l)?;
        let grads = s.grads();
        adam.step(&mut params, &grads)?;
        if step % 300 == 0 {
            println!("step {step:>4}  mse {value:.5}");
        }
    }
    Ok(())
}
