//! Stochastic approximations of Jacobian traces and downshifted dot products.
//!
//! Risk estimators for continuous families need `tr[g(y) df/dy]`, which is
//! `E <zeta, g(y) (df/dy) zeta>` over standard normal probes `zeta`. Discrete
//! families need `<y, f_down(y)>` with `f_down(y)_i = f_i(y - e_i)`, which is
//! either evaluated exactly (d re-evaluations, or a linearity shortcut) or
//! approximated to first order with Rademacher probes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sums::{mean_and_stderr, pairwise_sum};

/// Law of the Monte-Carlo probe directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Standard normal probes for Jacobian traces.
    GaussianProbe,
    /// Rademacher (+/-1) probes for the downshift approximation.
    RademacherDownshift,
}

/// How many probes to draw and from which seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub n_probes: usize,
    pub probe_kind: ProbeKind,
    pub seed: u64,
}

impl ProbePlan {
    pub fn gaussian(n_probes: usize, seed: u64) -> Self {
        ProbePlan { n_probes, probe_kind: ProbeKind::GaussianProbe, seed }
    }

    pub fn rademacher(n_probes: usize, seed: u64) -> Self {
        ProbePlan { n_probes, probe_kind: ProbeKind::RademacherDownshift, seed }
    }

    /// Default probe count for a problem of dimension `dim`: traces
    /// concentrate as the dimension grows, so images need far fewer probes
    /// than small vectors.
    pub fn default_probes_for_dim(dim: usize) -> usize {
        if dim >= 4096 {
            32
        } else if dim > 64 {
            128
        } else {
            1024
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_probes == 0 {
            return Err(Error::config("probe plan needs n_probes >= 1"));
        }
        Ok(())
    }
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEstimate {
    pub value: f64,
    /// Sample standard deviation over probes divided by sqrt(n_probes);
    /// zero when the estimate is exact or a single probe was drawn.
    pub stderr: f64,
}

/// Diagonal reweighting of a trace: `tr[diag(g) J]` for `Some(g)`,
/// plain `tr J` for `None`.
pub type TraceWeight<'a> = Option<&'a [f64]>;

/// Estimates `tr[g(y) df/dy]` with standard normal probes.
///
/// `jvp` must return the directional derivative of `f` along the probe.
pub fn mc_trace(
    dim: usize,
    plan: &ProbePlan,
    weight: TraceWeight,
    mut jvp: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<TraceEstimate> {
    let all = mc_traces(dim, plan, &[weight], &mut jvp)?;
    Ok(all[0])
}

/// Estimates several diagonally-reweighted traces of the same Jacobian from
/// one shared set of probes. Each probe costs one `jvp` evaluation however
/// many weights are requested.
pub fn mc_traces(
    dim: usize,
    plan: &ProbePlan,
    weights: &[TraceWeight],
    mut jvp: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<TraceEstimate>> {
    plan.validate()?;
    for w in weights {
        if let Some(g) = w {
            if g.len() != dim {
                return Err(Error::domain("trace weight length mismatch"));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut per_probe: Vec<Vec<f64>> = vec![Vec::with_capacity(plan.n_probes); weights.len()];
    let mut zeta = vec![0.0; dim];
    for _ in 0..plan.n_probes {
        for z in zeta.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let jz = jvp(&zeta)?;
        if jz.len() != dim {
            return Err(Error::Numerical("jvp returned wrong dimension".into()));
        }
        for (slot, w) in per_probe.iter_mut().zip(weights) {
            let terms: Vec<f64> = match w {
                Some(g) => zeta.iter().zip(&jz).zip(g.iter()).map(|((z, j), g)| z * g * j).collect(),
                None => zeta.iter().zip(&jz).map(|(z, j)| z * j).collect(),
            };
            slot.push(pairwise_sum(&terms));
        }
    }
    Ok(per_probe
        .into_iter()
        .map(|vals| {
            let (value, stderr) = mean_and_stderr(&vals);
            TraceEstimate { value, stderr }
        })
        .collect())
}

/// First-order approximation of `<y, f_down(y)>` with Rademacher probes:
/// the mean over probes of `<y, f(y) - (J zeta) o zeta>`.
///
/// When `jacobian_diag` is provided (an affine `f` with known Jacobian
/// diagonal) the first-order expansion is exact and the probe average is
/// replaced by the exact value `<y, f(y) - diag>` with zero standard error.
pub fn bernoulli_downshift_dot(
    y: &[f64],
    f_y: &[f64],
    jacobian_diag: Option<&[f64]>,
    plan: &ProbePlan,
    mut jvp: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<TraceEstimate> {
    if f_y.len() != y.len() {
        return Err(Error::domain("f(y) length mismatch"));
    }
    if let Some(diag) = jacobian_diag {
        if diag.len() != y.len() {
            return Err(Error::domain("jacobian diagonal length mismatch"));
        }
        let terms: Vec<f64> = y
            .iter()
            .zip(f_y.iter().zip(diag))
            .map(|(yi, (fi, di))| yi * (fi - di))
            .collect();
        return Ok(TraceEstimate { value: pairwise_sum(&terms), stderr: 0.0 });
    }
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let base = {
        let terms: Vec<f64> = y.iter().zip(f_y).map(|(a, b)| a * b).collect();
        pairwise_sum(&terms)
    };
    let mut zeta = vec![0.0; y.len()];
    let mut vals = Vec::with_capacity(plan.n_probes);
    for _ in 0..plan.n_probes {
        for z in zeta.iter_mut() {
            *z = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let jz = jvp(&zeta)?;
        if jz.len() != y.len() {
            return Err(Error::Numerical("jvp returned wrong dimension".into()));
        }
        let corr: Vec<f64> = y
            .iter()
            .zip(jz.iter().zip(&zeta))
            .map(|(yi, (ji, zi))| yi * ji * zi)
            .collect();
        vals.push(base - pairwise_sum(&corr));
    }
    let (value, stderr) = mean_and_stderr(&vals);
    Ok(TraceEstimate { value, stderr })
}

/// Exact `<y, f_down(y)> = sum_i y_i f_i(y - e_i)`.
///
/// `component` returns `f_i(y - e_i)`; indices with `y_i == 0` contribute
/// nothing and are never evaluated.
pub fn exact_downshift_dot(
    y: &[f64],
    mut component: impl FnMut(usize) -> Result<f64>,
) -> Result<f64> {
    let mut terms = Vec::with_capacity(y.len());
    for (i, &yi) in y.iter().enumerate() {
        if yi == 0.0 {
            continue;
        }
        if yi < 1.0 {
            return Err(Error::domain(format!(
                "downshift needs y[{i}] >= 1 where weighted, got {yi}"
            )));
        }
        terms.push(yi * component(i)?);
    }
    Ok(pairwise_sum(&terms))
}
