#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brainage::autodiff::{Graph, ParamStore, Session, Tensor, Var};
use brainage::config::RunConfig;
use brainage::pipeline::{
    init_pretrain, init_rng, init_stage1, init_stage2, mae_pretrain, predict_subject, train_stage1, train_stage2,
    AgePrediction,
};
use brainage::synth::{generate_cohort, generate_cohort_at, Sample};
use brainage::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_ABS: f64 = 1e-6;
pub const FD_REL: f64 = 1e-4;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn load_config(name: &str) -> RunConfig {
    RunConfig::load(workspace_root().join("configs").join(name)).expect("bundled config parses")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Outcome of a finite-difference sweep. An entry fails only when it
/// misses both the absolute and the relative tolerance.
#[derive(Clone, Copy, Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub worst_abs: f64,
    pub worst_rel: f64,
    pub failures: usize,
}

impl FdReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        self.checked += 1;
        if abs > FD_ABS && rel > FD_REL {
            self.failures += 1;
        }
        if abs > self.worst_abs {
            self.worst_abs = abs;
            self.worst_rel = rel;
        }
    }

    pub fn merge(&mut self, o: FdReport) {
        self.checked += o.checked;
        self.failures += o.failures;
        if o.worst_abs > self.worst_abs {
            self.worst_abs = o.worst_abs;
            self.worst_rel = o.worst_rel;
        }
    }

    pub fn ok(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// Central differences for a function of raw leaf tensors. `f` builds a
/// scalar from the leaves; every entry of every input is checked.
pub fn gradcheck_leaves(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> FdReport {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    g.backward(out).unwrap();
    let mut report = FdReport::default();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            report.record(analytic[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    report
}

/// Central differences for a loss over named parameters. At most
/// `per_tensor` randomly chosen entries of each parameter are probed.
pub fn gradcheck_params(
    params: &ParamStore,
    per_tensor: usize,
    seed: u64,
    f: impl Fn(&mut Session) -> Result<Var>,
) -> FdReport {
    let eval = |p: &ParamStore| -> f64 {
        let mut s = Session::new(p);
        let out = f(&mut s).unwrap();
        s.g.value(out).item()
    };
    let mut s = Session::new(params);
    let out = f(&mut s).unwrap();
    s.backward(out).unwrap();
    let grads = s.grads();
    let mut pick = rng(seed);
    let mut report = FdReport::default();
    let mut work = params.clone();
    for (name, t) in params.iter() {
        let n = t.numel();
        let idx: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| pick.random_range(0..n)).collect()
        };
        for i in idx {
            let analytic = grads.get(name).map_or(0.0, |g| g[i]);
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            report.record(analytic, (up - down) / (2.0 * FD_STEP));
        }
    }
    report
}

/// `Σ w ⊙ x` with fixed random weights, so every output entry matters.
pub fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let w = random_tensor(&mut rng(seed), g.shape(x), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    g.sum(p)
}

/// A single-file NIfTI-1 image with a 352-byte prefix (header plus empty
/// extension flag) followed by `payload`.
pub struct NiftiFixture {
    pub big_endian: bool,
    pub dims: [i16; 3],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 3],
    pub scl_slope: f32,
    pub scl_inter: f32,
}

impl NiftiFixture {
    pub fn new(dims: [i16; 3], datatype: i16, bitpix: i16) -> Self {
        Self {
            big_endian: false,
            dims,
            datatype,
            bitpix,
            pixdim: [1.0; 3],
            scl_slope: 0.0,
            scl_inter: 0.0,
        }
    }

    fn i16(&self, v: i16) -> [u8; 2] {
        if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    }

    fn f32(&self, v: f32) -> [u8; 4] {
        if self.big_endian {
            v.to_be_bytes()
        } else {
            v.to_le_bytes()
        }
    }

    pub fn build(&self, payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        let size = if self.big_endian { 348i32.to_be_bytes() } else { 348i32.to_le_bytes() };
        b[0..4].copy_from_slice(&size);
        let dim = [3, self.dims[0], self.dims[1], self.dims[2], 1, 1, 1, 1];
        for (k, d) in dim.iter().enumerate() {
            b[40 + 2 * k..42 + 2 * k].copy_from_slice(&self.i16(*d));
        }
        b[70..72].copy_from_slice(&self.i16(self.datatype));
        b[72..74].copy_from_slice(&self.i16(self.bitpix));
        let pixdim = [1.0, self.pixdim[0], self.pixdim[1], self.pixdim[2], 1.0, 1.0, 1.0, 1.0];
        for (k, p) in pixdim.iter().enumerate() {
            b[76 + 4 * k..80 + 4 * k].copy_from_slice(&self.f32(*p));
        }
        b[108..112].copy_from_slice(&self.f32(352.0));
        b[112..116].copy_from_slice(&self.f32(self.scl_slope));
        b[116..120].copy_from_slice(&self.f32(self.scl_inter));
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(payload);
        b
    }
}

/// Train and test cohorts as described by the `[cohort]` section.
pub fn cohorts(cfg: &RunConfig) -> (Vec<Sample>, Vec<Sample>) {
    let train = generate_cohort(&cfg.cohort.train()).unwrap();
    let (test_cfg, offset) = cfg.cohort.test();
    let test = generate_cohort_at(&test_cfg, offset).unwrap();
    (train, test)
}

pub struct TrainedRun {
    pub params: ParamStore,
    pub predictions: Vec<AgePrediction>,
}

/// Pretrain, stage 1 and stage 2 on `train`, then predict `test`.
pub fn train_and_predict(cfg: &RunConfig, seed: u64, train: &[Sample], test: &[Sample]) -> TrainedRun {
    let bb = &cfg.backbone;
    let tc = brainage::pipeline::TrainConfig { seed, ..cfg.train.clone() };
    let volumes: Vec<_> = train.iter().flat_map(|s| s.volumes.values()).collect();
    let mut pre = init_pretrain(bb, &mut init_rng(seed, 0));
    mae_pretrain(bb, &mut pre, &volumes, &tc, 1, |_, _| {}).unwrap();
    let mut s1 = init_stage1(bb, Some(&pre), &mut init_rng(seed, 1)).unwrap();
    train_stage1(bb, &mut s1, train, &tc, 1, |_, _| {}).unwrap();
    let mut s2 = init_stage2(bb, &s1, &mut init_rng(seed, 2));
    train_stage2(bb, &mut s2, train, &tc, 1, |_, _| {}).unwrap();
    let predictions = test.iter().map(|s| predict_subject(bb, &s2, s).unwrap()).collect();
    TrainedRun { params: s2, predictions }
}

/// Mean of the values sharing each key.
pub fn grouped_mean(items: impl IntoIterator<Item = (usize, f64)>) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (k, v) in items {
        let e = acc.entry(k).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn brainage_bin() -> &'static str {
    env!("CARGO_BIN_EXE_brainage")
}

/// Run the binary in `dir` with the given arguments.
pub fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(brainage_bin()).current_dir(dir).args(args).output().expect("binary runs")
}
