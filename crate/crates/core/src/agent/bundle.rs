//! Trained networks plus everything needed to run the greedy policy.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::select::{Selection, SubProblem, Surrogate};
use crate::error::{Error, Result};
use crate::es::EsConfig;
use crate::nnet::MlpNetwork;
use crate::sim::{ControlVector, EnvironmentSpec, Policy};

/// One tightening scalar per constraint, constant over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BackoffVector(pub Vec<f64>);

impl BackoffVector {
    pub fn zeros(n_g: usize) -> Self {
        Self(vec![0.0; n_g])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn validate(&self, n_g: usize) -> Result<()> {
        if self.0.len() != n_g {
            return Err(Error::Dimension {
                context: "backoff vector",
                expected: n_g,
                actual: self.0.len(),
            });
        }
        if self.0.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("backoff"));
        }
        Ok(())
    }
}

/// Writes the Q-network input `[x, t, u]`.
pub fn q_features(state: &[f64], t: usize, control: &[f64], out: &mut Vec<f64>) {
    out.extend_from_slice(state);
    out.push(t as f64);
    out.extend_from_slice(control);
}

/// Writes the constraint-network input `[x, t_f - t, u]`.
pub fn g_features(state: &[f64], steps_to_go: usize, control: &[f64], out: &mut Vec<f64>) {
    out.extend_from_slice(state);
    out.push(steps_to_go as f64);
    out.extend_from_slice(control);
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub env_id: String,
    pub horizon: usize,
    pub control_lo: Vec<f64>,
    pub control_hi: Vec<f64>,
    pub constraint_names: Vec<String>,
    pub constraint_scales: Vec<f64>,
    /// Penalty weights `C_j` of the selection fitness.
    pub penalty_weights: Vec<f64>,
    /// Deployment backoffs used by the greedy policy.
    pub backoffs: BackoffVector,
    /// Evolution-strategy budget of the greedy policy.
    pub selection: EsConfig,
    pub q_net: MlpNetwork,
    pub constraint_nets: Vec<MlpNetwork>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    env_id: String,
    horizon: usize,
    control_lo: Vec<f64>,
    control_hi: Vec<f64>,
    constraint_names: Vec<String>,
    constraint_scales: Vec<f64>,
    penalty_weights: Vec<f64>,
    backoffs: BackoffVector,
    selection: EsConfig,
    q_net: String,
    constraint_nets: Vec<String>,
}

const FORMAT: &str = "oracle-ql-bundle 1";
const MANIFEST: &str = "bundle.json";

impl PolicyBundle {
    /// Freshly initialized networks for `spec`. `C_j = penalty_scale / scale_j`.
    pub fn new<R: Rng + ?Sized>(spec: &EnvironmentSpec, hidden: &[usize], penalty_scale: f64, selection: EsConfig, rng: &mut R) -> Self {
        let input = spec.n_x() + 1 + spec.n_u();
        Self {
            env_id: spec.id.clone(),
            horizon: spec.horizon,
            control_lo: spec.control_lo.clone(),
            control_hi: spec.control_hi.clone(),
            constraint_names: spec.constraint_names.clone(),
            constraint_scales: spec.constraint_scales.clone(),
            penalty_weights: spec.constraint_scales.iter().map(|s| penalty_scale / s).collect(),
            backoffs: BackoffVector::zeros(spec.n_g()),
            selection,
            q_net: MlpNetwork::new(input, hidden, rng),
            constraint_nets: (0..spec.n_g()).map(|_| MlpNetwork::new(input, hidden, rng)).collect(),
        }
    }

    pub fn n_g(&self) -> usize {
        self.constraint_nets.len()
    }

    /// Checks that the bundle was built for an environment shaped like `spec`.
    pub fn check_environment(&self, spec: &EnvironmentSpec) -> Result<()> {
        if spec.id != self.env_id {
            return Err(Error::InvalidArgument(format!(
                "bundle was trained on `{}`, environment is `{}`",
                self.env_id, spec.id
            )));
        }
        let input = spec.n_x() + 1 + spec.n_u();
        for (context, expected, actual) in [
            ("bundle horizon", spec.horizon, self.horizon),
            ("bundle constraint count", spec.n_g(), self.n_g()),
            ("bundle control dimension", spec.n_u(), self.control_lo.len()),
            ("q-network input", input, self.q_net.input_dim()),
        ] {
            if expected != actual {
                return Err(Error::Dimension { context, expected, actual });
            }
        }
        if let Some(bad) = self.constraint_nets.iter().find(|n| n.input_dim() != input) {
            return Err(Error::Dimension {
                context: "constraint-network input",
                expected: input,
                actual: bad.input_dim(),
            });
        }
        Ok(())
    }

    pub fn sub_problem<'a>(&'a self, backoffs: &'a [f64]) -> SubProblem<'a, Self> {
        SubProblem {
            surrogate: self,
            lo: &self.control_lo,
            hi: &self.control_hi,
            backoffs,
            penalties: &self.penalty_weights,
        }
    }

    /// Greedy constrained selection with the bundle's deployment backoffs.
    pub fn select_control<R: Rng + ?Sized>(&self, state: &[f64], t: usize, rng: &mut R) -> Result<Selection> {
        self.sub_problem(self.backoffs.as_slice()).solve(state, t, &self.selection, rng)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut g_files = Vec::new();
        self.q_net.save(&dir.join("q.net"))?;
        for (j, net) in self.constraint_nets.iter().enumerate() {
            let name = format!("g{}.net", j + 1);
            net.save(&dir.join(&name))?;
            g_files.push(name);
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            env_id: self.env_id.clone(),
            horizon: self.horizon,
            control_lo: self.control_lo.clone(),
            control_hi: self.control_hi.clone(),
            constraint_names: self.constraint_names.clone(),
            constraint_scales: self.constraint_scales.clone(),
            penalty_weights: self.penalty_weights.clone(),
            backoffs: self.backoffs.clone(),
            selection: self.selection.clone(),
            q_net: "q.net".into(),
            constraint_nets: g_files,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format != FORMAT {
            return Err(Error::format(&path, format!("unsupported bundle format `{}`", m.format)));
        }
        let n_g = m.constraint_nets.len();
        for (what, len) in [
            ("constraint_names", m.constraint_names.len()),
            ("constraint_scales", m.constraint_scales.len()),
            ("penalty_weights", m.penalty_weights.len()),
            ("backoffs", m.backoffs.0.len()),
        ] {
            if len != n_g {
                return Err(Error::format(&path, format!("{what} has {len} entries for {n_g} constraint networks")));
            }
        }
        let bundle = Self {
            env_id: m.env_id,
            horizon: m.horizon,
            control_lo: m.control_lo,
            control_hi: m.control_hi,
            constraint_names: m.constraint_names,
            constraint_scales: m.constraint_scales,
            penalty_weights: m.penalty_weights,
            backoffs: m.backoffs,
            selection: m.selection,
            q_net: MlpNetwork::load(&dir.join(&m.q_net))?,
            constraint_nets: m
                .constraint_nets
                .iter()
                .map(|f| MlpNetwork::load(&dir.join(f)))
                .collect::<Result<_>>()?,
        };
        Ok(bundle)
    }
}

impl Surrogate for PolicyBundle {
    fn n_constraints(&self) -> usize {
        self.constraint_nets.len()
    }

    fn predict(&self, state: &[f64], t: usize, controls: &[Vec<f64>], q: &mut [f64], g: &mut [f64]) -> Result<()> {
        let n = controls.len();
        let n_g = self.n_g();
        let mut feats = Vec::with_capacity(n * self.q_net.input_dim());
        for u in controls {
            q_features(state, t, u, &mut feats);
        }
        self.q_net.forward_batch(&feats, q)?;
        if n_g > 0 {
            feats.clear();
            let to_go = self.horizon.saturating_sub(t);
            for u in controls {
                g_features(state, to_go, u, &mut feats);
            }
            let mut col = vec![0.0; n];
            for (j, net) in self.constraint_nets.iter().enumerate() {
                net.forward_batch(&feats, &mut col)?;
                for (i, v) in col.iter().enumerate() {
                    g[i * n_g + j] = *v;
                }
            }
        }
        Ok(())
    }
}

/// The trained policy: greedy selection with the bundle's backoffs.
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'a> {
    pub bundle: &'a PolicyBundle,
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, state: &[f64], t: usize, rng: &mut dyn rand::RngCore) -> Result<ControlVector> {
        Ok(self.bundle.select_control(state, t, rng)?.control)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{EnvironmentConfig, PhotoproductionConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bundle() -> PolicyBundle {
        let env = EnvironmentConfig::Cs1(PhotoproductionConfig::default()).build().unwrap();
        PolicyBundle::new(env.spec(), &[8, 8], 1e6, EsConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn shapes_and_penalties() {
        let b = bundle();
        assert_eq!(b.q_net.input_dim(), 3 + 1 + 2);
        assert_eq!(b.n_g(), 2);
        assert_eq!(b.penalty_weights, vec![1e6 / 800.0, 1e6 / 0.1]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = bundle();
        b.backoffs = BackoffVector(vec![12.5, 0.003]);
        b.save(dir.path()).unwrap();
        assert_eq!(PolicyBundle::load(dir.path()).unwrap(), b);
    }

    #[test]
    fn missing_network_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        bundle().save(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("g2.net")).unwrap();
        assert!(matches!(PolicyBundle::load(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn batch_prediction_matches_single_forward() {
        let b = bundle();
        let x = [1.0, 150.0, 0.0];
        let us = vec![vec![200.0, 10.0], vec![120.0, 0.0]];
        let mut q = vec![0.0; 2];
        let mut g = vec![0.0; 4];
        b.predict(&x, 3, &us, &mut q, &mut g).unwrap();
        for (i, u) in us.iter().enumerate() {
            let mut f = Vec::new();
            q_features(&x, 3, u, &mut f);
            assert_eq!(q[i], b.q_net.forward(&f).unwrap());
            f.clear();
            g_features(&x, 9, u, &mut f);
            assert_eq!(g[i * 2 + 1], b.constraint_nets[1].forward(&f).unwrap());
        }
    }

    #[test]
    fn environment_check() {
        let b = bundle();
        let cs2 = EnvironmentConfig::Cs2(Default::default()).build().unwrap();
        assert!(b.check_environment(cs2.spec()).is_err());
        let cs1 = EnvironmentConfig::Cs1(Default::default()).build().unwrap();
        b.check_environment(cs1.spec()).unwrap();
    }
}
