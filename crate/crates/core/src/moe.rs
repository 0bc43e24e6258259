//! Hard-routed expert banks keyed by modality or by lifespan stage.
//!
//! Every expert is a two-layer MLP (`in → 2·in → out`, gelu). Routing is a
//! lookup on the key: exactly one expert's parameters enter the tape, so
//! the others receive no gradient at all.

use std::fmt;

use rand::Rng;

use crate::autodiff::{ParamStore, Session, Var};
use crate::backbone::Latent;
use crate::error::{Error, Result};
use crate::layers::{init_linear, linear};
use crate::staging::Stage;
use crate::volume::Modality;

pub const MODALITY_MOE: &str = "modality_moe";
pub const STAGE_MOE: &str = "stage_moe";
const HIDDEN_RATIO: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeySpace {
    Modalities,
    Stages,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteKey {
    Modality(Modality),
    Stage(Stage),
}

impl From<Modality> for RouteKey {
    fn from(m: Modality) -> Self {
        RouteKey::Modality(m)
    }
}

impl From<Stage> for RouteKey {
    fn from(s: Stage) -> Self {
        RouteKey::Stage(s)
    }
}

impl fmt::Display for RouteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteKey::Modality(m) => write!(f, "modality {m}"),
            RouteKey::Stage(s) => write!(f, "stage {s}"),
        }
    }
}

impl KeySpace {
    pub fn keys(self) -> Vec<RouteKey> {
        match self {
            KeySpace::Modalities => Modality::ALL.iter().map(|&m| m.into()).collect(),
            KeySpace::Stages => Stage::ALL.iter().map(|&s| s.into()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertBank {
    prefix: String,
    space: KeySpace,
    in_dim: usize,
    out_dim: usize,
}

impl ExpertBank {
    pub fn new(prefix: impl Into<String>, space: KeySpace, in_dim: usize, out_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            space,
            in_dim,
            out_dim,
        }
    }

    /// Feature-preserving bank with one expert per modality.
    pub fn modality(prefix: impl Into<String>, dim: usize) -> Self {
        Self::new(prefix, KeySpace::Modalities, dim, dim)
    }

    /// Scalar-output bank with one expert per stage.
    pub fn stage(prefix: impl Into<String>, dim: usize) -> Self {
        Self::new(prefix, KeySpace::Stages, dim, 1)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn space(&self) -> KeySpace {
        self.space
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Parameter prefix of the expert serving `key`.
    pub fn expert_prefix(&self, key: RouteKey) -> Result<String> {
        let name = match (self.space, key) {
            (KeySpace::Modalities, RouteKey::Modality(m)) if m.index().is_some() => m.name(),
            (KeySpace::Stages, RouteKey::Stage(s)) => s.name(),
            _ => {
                return Err(Error::Routing(format!(
                    "{key} is not a key of bank `{}`",
                    self.prefix
                )))
            }
        };
        Ok(format!("{}.{name}", self.prefix))
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) {
        let hidden = HIDDEN_RATIO * self.in_dim;
        for key in self.space.keys() {
            let p = self.expert_prefix(key).expect("own key");
            init_linear(store, &format!("{p}.fc1"), self.in_dim, hidden, rng);
            init_linear(store, &format!("{p}.fc2"), hidden, self.out_dim, rng);
        }
    }

    /// Apply the expert for `key` to `z` of shape `[n, in_dim]`.
    pub fn route(&self, s: &mut Session, key: RouteKey, z: Var) -> Result<Var> {
        let p = self.expert_prefix(key)?;
        let cols = s.g.value(z).dims2()?.1;
        if cols != self.in_dim {
            return Err(Error::Dimension {
                op: "route",
                lhs: s.g.shape(z).to_vec(),
                rhs: vec![self.in_dim],
            });
        }
        let h = linear(s, &format!("{p}.fc1"), z)?;
        let h = s.g.gelu(h)?;
        linear(s, &format!("{p}.fc2"), h)
    }
}

/// Modality-specialised feature `[1, embed_dim]` from a pooled latent.
pub fn modality_moe_forward(s: &mut Session, bank: &ExpertBank, latent: &Latent, m: Modality) -> Result<Var> {
    bank.route(s, m.into(), latent.pooled)
}

/// Normalised within-stage age in (0, 1), shape `[1, 1]`.
pub fn stage_moe_forward(s: &mut Session, bank: &ExpertBank, feat: Var, stage: Stage) -> Result<Var> {
    let raw = bank.route(s, stage.into(), feat)?;
    s.g.sigmoid(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::staging::stage_bounded_age;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(bank: &ExpertBank) -> ParamStore {
        let mut store = ParamStore::new();
        bank.init(&mut store, &mut ChaCha8Rng::seed_from_u64(5));
        store
    }

    fn input(dim: usize) -> Tensor {
        Tensor::new(vec![1, dim], (0..dim).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn distinct_keys_give_distinct_outputs() {
        let bank = ExpertBank::modality(MODALITY_MOE, 8);
        let store = setup(&bank);
        let mut s = Session::new(&store);
        let z = s.constant(input(8));
        let a = bank.route(&mut s, Modality::T1w.into(), z).unwrap();
        let b = bank.route(&mut s, Modality::T2w.into(), z).unwrap();
        let diff: f64 = s.g.value(a).data().iter().zip(s.g.value(b).data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9);
        assert_eq!(s.g.shape(a), &[1, 8]);
    }

    #[test]
    fn only_routed_expert_gets_gradient() {
        let bank = ExpertBank::modality(MODALITY_MOE, 6);
        let store = setup(&bank);
        let mut s = Session::new(&store);
        let z = s.constant(input(6));
        let y = bank.route(&mut s, Modality::T1w.into(), z).unwrap();
        let loss = s.g.sum(y).unwrap();
        s.backward(loss).unwrap();
        let grads = s.grads();
        assert!(grads.keys().all(|k| k.starts_with("modality_moe.T1w.")));
        for (name, _) in store.iter() {
            if !name.starts_with("modality_moe.T1w.") {
                assert!(grads.get(name).is_none_or(|g| g.iter().all(|&v| v == 0.0)));
            }
        }
    }

    #[test]
    fn constant_experts() {
        let bank = ExpertBank::stage(STAGE_MOE, 4);
        let mut store = setup(&bank);
        for (i, st) in [Stage::Fetal, Stage::Child].into_iter().enumerate() {
            let p = bank.expert_prefix(st.into()).unwrap();
            store.get_mut(&format!("{p}.fc2.weight")).unwrap().data_mut().fill(0.0);
            let b = if i == 0 { 1.0 } else { -1.0 };
            store.insert(format!("{p}.fc2.bias"), Tensor::full(&[1, 1], b));
        }
        let mut s = Session::new(&store);
        let z = s.constant(input(4));
        let a = bank.route(&mut s, Stage::Fetal.into(), z).unwrap();
        let b = bank.route(&mut s, Stage::Child.into(), z).unwrap();
        assert_eq!(s.g.value(a).item(), 1.0);
        assert_eq!(s.g.value(b).item(), -1.0);
    }

    #[test]
    fn unknown_keys_are_routing_errors() {
        let m = ExpertBank::modality(MODALITY_MOE, 4);
        let st = ExpertBank::stage(STAGE_MOE, 4);
        assert!(matches!(m.expert_prefix(Stage::Adult.into()), Err(Error::Routing(_))));
        assert!(matches!(m.expert_prefix(Modality::Unknown.into()), Err(Error::Routing(_))));
        assert!(matches!(st.expert_prefix(Modality::Fa.into()), Err(Error::Routing(_))));
    }

    #[test]
    fn stage_output_is_bounded() {
        let bank = ExpertBank::stage(STAGE_MOE, 4);
        let store = setup(&bank);
        let mut s = Session::new(&store);
        for scale in [-1e3, -1.0, 0.0, 1.0, 1e3] {
            let mut t = input(4);
            t.data_mut().iter_mut().for_each(|v| *v *= scale);
            let z = s.constant(t);
            let u = stage_moe_forward(&mut s, &bank, z, Stage::Child).unwrap();
            let u = s.g.value(u).item();
            assert!((0.0..=1.0).contains(&u));
            assert!(Stage::Child.contains(stage_bounded_age(u, Stage::Child)));
        }
    }
}
