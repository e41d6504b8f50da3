//! Risk estimators for squared and Kullback-Leibler losses.
//!
//! Every estimator is computable from the observation alone and targets a
//! loss *up to a known additive constant* that depends only on the unknown
//! mean. The constant is part of the contract: [`RiskEstimate`] carries a
//! `constant_convention` tag, and sweep comparisons must only ever compare
//! differences across a tuning grid, never absolute values against oracles
//! with a different convention.
//!
//! | estimator | families   | loss (+ dropped constant)             |
//! |-----------|------------|---------------------------------------|
//! | SURE      | Gaussian   | MSE_mu                                |
//! | GSURE     | continuous | MSE_theta (or `- |theta|^2`)          |
//! | PURE      | Poisson    | MSE_mu                                |
//! | GPURE     | neg. binom | MSE_eta = E|p_hat - p|^2              |
//! | SUKLS     | continuous | MKLS - A(theta)                       |
//! | PUKLA     | Poisson    | MKLA + |mu|_1 - <mu, log mu>          |
//! | DKLA      | any        | MKLA - <mu, theta> + A(theta), O(1/n) |
//!
//! Jacobian traces fall back to Monte-Carlo probes for nonlinear predictors
//! and are exact for affine ones; downshifted dot products are exact by
//! default and use the Rademacher approximation on request.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{FamilyKind, FamilyModel};
use crate::jacobian::{self, ProbePlan, TraceEstimate};
use crate::predictors::{floor_in_place, mu_floor, JvpRequest, MeanPredictor};
use crate::sums::{dot, norm_sq, pairwise_sum};

/// The loss an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossId {
    MseMu,
    MseTheta,
    MseEta,
    Mkla,
    Mkls,
}

impl LossId {
    pub fn name(self) -> &'static str {
        match self {
            LossId::MseMu => "mse_mu",
            LossId::MseTheta => "mse_theta",
            LossId::MseEta => "mse_eta",
            LossId::Mkla => "mkla",
            LossId::Mkls => "mkls",
        }
    }
}

/// Estimator identifiers (for configs, reports and assumption checks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Sure,
    Gsure,
    Pure,
    GpureNegbin,
    Sukls,
    Pukla,
    Dkla,
}

impl EstimatorId {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Sure => "sure",
            EstimatorId::Gsure => "gsure",
            EstimatorId::Pure => "pure",
            EstimatorId::GpureNegbin => "gpure_negbin",
            EstimatorId::Sukls => "sukls",
            EstimatorId::Pukla => "pukla",
            EstimatorId::Dkla => "dkla",
        }
    }
}

/// How `<y, f(y - e_i)>` terms are evaluated for discrete families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownshiftMode {
    /// d re-evaluations, or the linearity shortcut for affine predictors.
    Exact,
    /// First-order Rademacher approximation (opt-in for large nonlinear
    /// predictors; exact again for affine ones).
    Bernoulli,
}

/// A fully-specified estimator request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "estimator")]
pub enum EstimatorSpec {
    Sure,
    Gsure {
        /// `None` resolves per family: kept for Gamma shapes L > 2 (and the
        /// Gaussian), dropped for 1 < L <= 2 where the estimator is only
        /// valid without it.
        include_last_term: Option<bool>,
    },
    Pure { mode: DownshiftMode },
    GpureNegbin,
    Sukls,
    Pukla { mode: DownshiftMode },
    Dkla,
}

impl EstimatorSpec {
    pub fn id(&self) -> EstimatorId {
        match self {
            EstimatorSpec::Sure => EstimatorId::Sure,
            EstimatorSpec::Gsure { .. } => EstimatorId::Gsure,
            EstimatorSpec::Pure { .. } => EstimatorId::Pure,
            EstimatorSpec::GpureNegbin => EstimatorId::GpureNegbin,
            EstimatorSpec::Sukls => EstimatorId::Sukls,
            EstimatorSpec::Pukla { .. } => EstimatorId::Pukla,
            EstimatorSpec::Dkla => EstimatorId::Dkla,
        }
    }

    /// The loss this estimator targets (up to its additive constant).
    pub fn loss_id(&self) -> LossId {
        match self.id() {
            EstimatorId::Sure | EstimatorId::Pure => LossId::MseMu,
            EstimatorId::Gsure => LossId::MseTheta,
            EstimatorId::GpureNegbin => LossId::MseEta,
            EstimatorId::Sukls => LossId::Mkls,
            EstimatorId::Pukla | EstimatorId::Dkla => LossId::Mkla,
        }
    }

    /// Default request for an estimator id: exact downshifts whenever the
    /// dimension is small or the predictor is affine, Rademacher otherwise.
    pub fn default_for(id: EstimatorId, dim: usize, affine: bool) -> Self {
        let mode = if affine || dim <= 256 { DownshiftMode::Exact } else { DownshiftMode::Bernoulli };
        match id {
            EstimatorId::Sure => EstimatorSpec::Sure,
            EstimatorId::Gsure => EstimatorSpec::Gsure { include_last_term: None },
            EstimatorId::Pure => EstimatorSpec::Pure { mode },
            EstimatorId::GpureNegbin => EstimatorSpec::GpureNegbin,
            EstimatorId::Sukls => EstimatorSpec::Sukls,
            EstimatorId::Pukla => EstimatorSpec::Pukla { mode },
            EstimatorId::Dkla => EstimatorSpec::Dkla,
        }
    }
}

/// A scalar risk estimate with its loss identity and constant convention.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub loss_id: LossId,
    /// Names the loss and the dropped mean-dependent constant.
    pub constant_convention: &'static str,
    /// Monte-Carlo standard error of the value, `None` when deterministic.
    pub stderr: Option<f64>,
    /// Entries raised to the positivity floor inside logs and inversions.
    pub floor_events: u64,
}

/// Machine-readable validity verdict for an estimator on a model.
#[derive(Debug, Clone)]
pub struct EstimatorAssumptions {
    pub estimator: EstimatorId,
    pub valid: bool,
    pub reasons: Vec<String>,
    pub required_family: Vec<FamilyKind>,
    pub nuisance_constraint: Option<String>,
    pub smoothness_note: String,
    pub bias_note: Option<String>,
}

fn resolve_include_last(model: &FamilyModel, requested: Option<bool>) -> bool {
    match requested {
        Some(v) => v,
        None => match model.gamma_shape() {
            Some(l) => l > 2.0,
            None => true,
        },
    }
}

/// Reports whether `spec` may run on `model`, with reasons.
pub fn assumptions_report<P: MeanPredictor + ?Sized>(
    spec: &EstimatorSpec,
    model: &FamilyModel,
    predictor: Option<&P>,
) -> EstimatorAssumptions {
    let kind = model.kind();
    let mut reasons = Vec::new();
    let mut required_family = Vec::new();
    let mut nuisance_constraint = None;
    let mut bias_note = None;
    let mut smoothness_note =
        "the predictor must be weakly differentiable with essentially bounded weak partial derivatives"
            .to_string();

    match spec {
        EstimatorSpec::Sure => {
            required_family.push(FamilyKind::Gaussian);
            if kind != FamilyKind::Gaussian {
                reasons.push("sure requires the Gaussian family".into());
            }
        }
        EstimatorSpec::Gsure { include_last_term } => {
            required_family.extend([FamilyKind::Gaussian, FamilyKind::Gamma]);
            if !model.is_continuous() {
                reasons.push("gsure requires a continuous family".into());
            }
            if let Some(l) = model.gamma_shape() {
                let include = resolve_include_last(model, *include_last_term);
                if include {
                    nuisance_constraint = Some("gamma shape L > 2 with the last term".into());
                    if l <= 2.0 {
                        reasons.push(format!("gamma gsure with last term requires L > 2, got L = {l}"));
                    }
                } else {
                    nuisance_constraint = Some("gamma shape L > 1 without the last term".into());
                    if l <= 1.0 {
                        reasons.push(format!("gamma gsure requires L > 1, got L = {l}"));
                    }
                }
            }
        }
        EstimatorSpec::Pure { .. } => {
            required_family.push(FamilyKind::Poisson);
            if kind != FamilyKind::Poisson {
                reasons.push("pure requires the Poisson family".into());
            }
            smoothness_note = "any mapping of the counts is admissible".into();
        }
        EstimatorSpec::GpureNegbin => {
            required_family.push(FamilyKind::NegBinomial);
            if kind != FamilyKind::NegBinomial {
                reasons.push("gpure_negbin requires the negative binomial family".into());
            }
            nuisance_constraint = Some("failure count r > 0 with r not in {1, 2}".into());
            if let Some(r) = model.negbin_failures() {
                if r == 1.0 || r == 2.0 {
                    reasons.push(format!("gpure_negbin is undefined for r = {r}"));
                }
            }
            smoothness_note = "any mapping of the counts is admissible".into();
        }
        EstimatorSpec::Sukls => {
            required_family.extend([FamilyKind::Gaussian, FamilyKind::Gamma]);
            if !model.is_continuous() {
                reasons.push("sukls requires a continuous family".into());
            }
            if let Some(l) = model.gamma_shape() {
                nuisance_constraint = Some("gamma shape L > 1".into());
                if l <= 1.0 {
                    reasons.push(format!("gamma sukls requires L > 1, got L = {l}"));
                }
            }
        }
        EstimatorSpec::Pukla { .. } => {
            required_family.push(FamilyKind::Poisson);
            if kind != FamilyKind::Poisson {
                reasons.push("pukla requires the Poisson family: Poisson only".into());
            }
            smoothness_note = "any mapping of the counts is admissible".into();
        }
        EstimatorSpec::Dkla => {
            required_family.extend([
                FamilyKind::Gaussian,
                FamilyKind::Gamma,
                FamilyKind::Poisson,
                FamilyKind::Binomial,
                FamilyKind::NegBinomial,
            ]);
            bias_note = Some("O(n^{-1})".into());
            smoothness_note =
                "needs k >= 3 times total differentiability with bounded k-th derivative".into();
        }
    }

    if let Some(p) = predictor {
        if p.describe() == "lasso_orthogonal" && matches!(spec, EstimatorSpec::Dkla) {
            smoothness_note.push_str(
                "; the lasso is not differentiable at its kinks, so the bias control does not apply there",
            );
        }
    }

    EstimatorAssumptions {
        estimator: spec.id(),
        valid: reasons.is_empty(),
        reasons,
        required_family,
        nuisance_constraint,
        smoothness_note,
        bias_note,
    }
}

fn check_assumptions<P: MeanPredictor + ?Sized>(
    spec: &EstimatorSpec,
    model: &FamilyModel,
    p: &P,
) -> Result<()> {
    let report = assumptions_report(spec, model, Some(p));
    if report.valid {
        Ok(())
    } else {
        Err(Error::assumption(report.reasons.join("; ")))
    }
}

// ---- shared evaluation state -------------------------------------------

struct Evaluated {
    /// Raw predictor output.
    mu_raw: Vec<f64>,
    /// Output after the positivity floor (used inside logs and inversions).
    mu_fl: Vec<f64>,
    floor_events: u64,
}

fn evaluate_floored<P: MeanPredictor + ?Sized>(
    p: &P,
    model: &FamilyModel,
    y: &[f64],
) -> Result<Evaluated> {
    let mu_raw = p.evaluate(y)?;
    if mu_raw.len() != y.len() {
        return Err(Error::Numerical("predictor returned wrong dimension".into()));
    }
    if mu_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("predictor returned non-finite values".into()));
    }
    let mut mu_fl = mu_raw.clone();
    let floor_events = floor_in_place(&mut mu_fl, mu_floor(model, y));
    Ok(Evaluated { mu_raw, mu_fl, floor_events })
}

/// `tr[diag(g) d mu_hat/d y]`: exact for affine predictors, Monte-Carlo
/// otherwise. Several weights share one probe set.
pub(crate) fn weighted_traces<P: MeanPredictor + ?Sized>(
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
    weights: &[Option<Vec<f64>>],
) -> Result<Vec<TraceEstimate>> {
    let d = y.len();
    if let Some(diag) = p.affine_diag(d) {
        return Ok(weights
            .iter()
            .map(|w| TraceEstimate {
                value: diag.weighted_trace(d, w.as_deref()),
                stderr: 0.0,
            })
            .collect());
    }
    let refs: Vec<Option<&[f64]>> = weights.iter().map(|w| w.as_deref()).collect();
    jacobian::mc_traces(d, plan, &refs, |z| p.jvp(&JvpRequest::new(y, z)))
}

/// `<y, f(mu_hat_down)>`-style downshift of the mean prediction itself:
/// returns `sum_i y_i transform(mu_hat_i(y - e_i))` plus floor events when a
/// positivity floor is applied inside `transform`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn downshift_sum<P: MeanPredictor + ?Sized>(
    p: &P,
    y: &[f64],
    mu_raw: &[f64],
    floor: Option<f64>,
    mode: DownshiftMode,
    plan: &ProbePlan,
    transform: impl Fn(f64) -> f64 + Copy,
    weight: impl Fn(usize) -> f64 + Copy,
) -> Result<(f64, f64, u64)> {
    let d = y.len();
    let mut floor_events = 0u64;
    let mut apply = |m: f64| -> f64 {
        let m = match floor {
            Some(f) if m < f => {
                floor_events += 1;
                f
            }
            _ => m,
        };
        transform(m)
    };
    match (mode, p.affine_diag(d)) {
        // mu_hat(y - e_i)_i = mu_hat_i - W_ii exactly for affine predictors.
        (_, Some(diag)) => {
            let mut terms = Vec::with_capacity(d);
            for i in 0..d {
                let w = weight(i);
                if w == 0.0 {
                    continue;
                }
                terms.push(w * apply(mu_raw[i] - diag.entry(i)));
            }
            Ok((pairwise_sum(&terms), 0.0, floor_events))
        }
        (DownshiftMode::Exact, None) => {
            let mut terms = Vec::with_capacity(d);
            for i in 0..d {
                let w = weight(i);
                if w == 0.0 {
                    continue;
                }
                if y[i] < 1.0 {
                    return Err(Error::domain(format!(
                        "downshift needs y[{i}] >= 1 where weighted"
                    )));
                }
                terms.push(w * apply(p.downshift_component(y, i)?));
            }
            Ok((pairwise_sum(&terms), 0.0, floor_events))
        }
        (DownshiftMode::Bernoulli, None) => {
            // First-order expansion of transform(mu_hat) around y.
            let f_y: Vec<f64> = mu_raw.iter().map(|&m| apply(m)).collect();
            let weights: Vec<f64> = (0..d).map(weight).collect();
            let est = jacobian::bernoulli_downshift_dot(&weights, &f_y, None, plan, |z| {
                // chain rule through the scalar transform via finite
                // differences of the composition
                let req = JvpRequest::new(y, z);
                let jv = p.jvp(&req)?;
                let mut floored = mu_raw.to_vec();
                floor_in_place(&mut floored, floor);
                Ok(jv
                    .iter()
                    .zip(&floored)
                    .map(|(j, m)| {
                        let h = 1e-6 * (1.0 + m.abs());
                        j * (transform(m + h) - transform(m - h)) / (2.0 * h)
                    })
                    .collect())
            })?;
            Ok((est.value, est.stderr, floor_events))
        }
    }
}

// ---- the estimators ------------------------------------------------------

/// Unbiased estimate of `MSE_mu` under Gaussian noise:
/// `|y - mu_hat|^2 - d sigma^2 + 2 sigma^2 tr d mu_hat/d y`.
pub fn sure<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
) -> Result<RiskEstimate> {
    one(model, p, y, plan, &EstimatorSpec::Sure)
}

/// Unbiased estimate of `MSE_theta` for continuous families. Without the
/// last (mean-free) term the target becomes `MSE_theta - |theta|^2`, which
/// for Gamma shapes `1 < L <= 2` is the only valid variant.
pub fn gsure<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
    include_last_term: Option<bool>,
) -> Result<RiskEstimate> {
    one(model, p, y, plan, &EstimatorSpec::Gsure { include_last_term })
}

/// Unbiased estimate of `MSE_mu` under Poisson noise:
/// `|mu_hat|^2 - 2 <y, mu_hat_down> + <y, y - 1>`.
pub fn pure<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    mode: DownshiftMode,
    plan: &ProbePlan,
) -> Result<RiskEstimate> {
    one(model, p, y, plan, &EstimatorSpec::Pure { mode })
}

/// Unbiased estimate of `E |p_hat(Y) - p|^2` under negative-binomial noise,
/// where `p_hat = mu_hat / (r + mu_hat)` estimates the success probability.
pub fn gpure_negbin<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
) -> Result<RiskEstimate> {
    let plan = ProbePlan::rademacher(1, 0);
    one(model, p, y, &plan, &EstimatorSpec::GpureNegbin)
}

/// Unbiased estimate of `MKLS - A(theta)` for continuous families:
/// `<theta_hat + grad h/h, mu_hat> + tr d mu_hat/d y - A(theta_hat)`.
pub fn sukls<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
) -> Result<RiskEstimate> {
    one(model, p, y, plan, &EstimatorSpec::Sukls)
}

/// Unbiased estimate of `MKLA + |mu|_1 - <mu, log mu>` under Poisson noise:
/// `|mu_hat|_1 - <y, log mu_hat_down>`.
pub fn pukla<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    mode: DownshiftMode,
    plan: &ProbePlan,
) -> Result<RiskEstimate> {
    one(model, p, y, plan, &EstimatorSpec::Pukla { mode })
}

/// Delta-method estimate of `MKLA - <mu, theta> + A(theta)` with `O(1/n)`
/// bias, valid for every family:
/// `A(theta_hat) - <y, theta_hat> + tr(Lambda(y) d theta_hat/d y)`.
pub fn dkla<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
) -> Result<RiskEstimate> {
    one(model, p, y, plan, &EstimatorSpec::Dkla)
}

fn one<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
    spec: &EstimatorSpec,
) -> Result<RiskEstimate> {
    let mut out = estimate_many(model, p, y, plan, std::slice::from_ref(spec))?;
    Ok(out.pop().expect("one spec in, one estimate out"))
}

/// Evaluates several estimators on one observation, sharing the predictor
/// evaluation and one probe set across all requested Jacobian traces.
pub fn estimate_many<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
    specs: &[EstimatorSpec],
) -> Result<Vec<RiskEstimate>> {
    for spec in specs {
        check_assumptions(spec, model, p)?;
    }
    model.y_domain_check(y)?;
    let d = y.len();
    let ev = evaluate_floored(p, model, y)?;

    // Collect the diagonal trace weights each estimator needs; one probing
    // pass serves them all.
    let mut weights: Vec<Option<Vec<f64>>> = Vec::new();
    let mut trace_slot: Vec<Option<usize>> = Vec::with_capacity(specs.len());
    for spec in specs {
        let w = match spec {
            EstimatorSpec::Sure | EstimatorSpec::Sukls => Some(None),
            EstimatorSpec::Gsure { .. } => Some(Some(model.link_derivative(&ev.mu_fl)?)),
            EstimatorSpec::Dkla => {
                let lam = model.variance_at_data(y)?;
                let phi_p = model.link_derivative(&ev.mu_fl)?;
                Some(Some(lam.iter().zip(&phi_p).map(|(a, b)| a * b).collect()))
            }
            _ => None,
        };
        match w {
            Some(w) => {
                trace_slot.push(Some(weights.len()));
                weights.push(w);
            }
            None => trace_slot.push(None),
        }
    }
    let traces = if weights.is_empty() {
        Vec::new()
    } else {
        weighted_traces(p, y, plan, &weights)?
    };

    let mut results = Vec::with_capacity(specs.len());
    for (spec, slot) in specs.iter().zip(&trace_slot) {
        let trace = slot.map(|i| traces[i]);
        results.push(assemble(model, p, y, plan, spec, &ev, trace, d)?);
    }
    Ok(results)
}

#[allow(clippy::too_many_arguments)]
fn assemble<P: MeanPredictor + ?Sized>(
    model: &FamilyModel,
    p: &P,
    y: &[f64],
    plan: &ProbePlan,
    spec: &EstimatorSpec,
    ev: &Evaluated,
    trace: Option<TraceEstimate>,
    d: usize,
) -> Result<RiskEstimate> {
    let floor = mu_floor(model, y);
    match spec {
        EstimatorSpec::Sure => {
            let sigma = model.sigma().expect("checked gaussian");
            let s2 = sigma * sigma;
            let t = trace.expect("sure uses a trace");
            let resid: Vec<f64> = y.iter().zip(&ev.mu_raw).map(|(a, b)| a - b).collect();
            let value = norm_sq(&resid) - d as f64 * s2 + 2.0 * s2 * t.value;
            Ok(RiskEstimate {
                value,
                loss_id: LossId::MseMu,
                constant_convention: "MSE_mu",
                stderr: mc_stderr(t, 2.0 * s2),
                floor_events: ev.floor_events,
            })
        }
        EstimatorSpec::Gsure { include_last_term } => {
            let include = resolve_include_last(model, *include_last_term);
            let theta_hat = model.link(&ev.mu_fl)?;
            let score = model.base_measure_score(y)?;
            let t = trace.expect("gsure uses a trace");
            let mut value =
                norm_sq(theta_hat.values()) + 2.0 * dot(&score, theta_hat.values()) + 2.0 * t.value;
            if include {
                value += gsure_last_term(model, y)?;
            }
            Ok(RiskEstimate {
                value,
                loss_id: LossId::MseTheta,
                constant_convention: if include { "MSE_theta" } else { "MSE_theta - |theta|^2" },
                stderr: mc_stderr(t, 2.0),
                floor_events: ev.floor_events,
            })
        }
        EstimatorSpec::Pure { mode } => {
            let (down, down_se, _) = downshift_sum(
                p,
                y,
                &ev.mu_raw,
                None,
                *mode,
                plan,
                |m| m,
                |i| y[i],
            )?;
            let yy1: Vec<f64> = y.iter().map(|v| v * (v - 1.0)).collect();
            let value = norm_sq(&ev.mu_raw) - 2.0 * down + pairwise_sum(&yy1);
            Ok(RiskEstimate {
                value,
                loss_id: LossId::MseMu,
                constant_convention: "MSE_mu",
                stderr: if down_se > 0.0 { Some(2.0 * down_se) } else { None },
                floor_events: ev.floor_events,
            })
        }
        EstimatorSpec::GpureNegbin => {
            let r = model.negbin_failures().expect("checked negbin");
            let p_hat: Vec<f64> = ev.mu_raw.iter().map(|&m| eta_negbin(m, r)).collect();
            let (down, _, _) = downshift_sum(
                p,
                y,
                &ev.mu_raw,
                None,
                DownshiftMode::Exact,
                plan,
                |m| eta_negbin(m, r),
                |i| y[i] / (y[i] + r - 1.0),
            )?;
            let tail: Vec<f64> = y
                .iter()
                .map(|&v| v * (v - 1.0) / ((v + r - 1.0) * (v + r - 2.0)))
                .collect();
            let value = norm_sq(&p_hat) - 2.0 * down + pairwise_sum(&tail);
            Ok(RiskEstimate {
                value,
                loss_id: LossId::MseEta,
                constant_convention: "MSE_eta",
                stderr: None,
                floor_events: ev.floor_events,
            })
        }
        EstimatorSpec::Sukls => {
            let theta_hat = model.link(&ev.mu_fl)?;
            let score = model.base_measure_score(y)?;
            let t = trace.expect("sukls uses a trace");
            let inner: Vec<f64> = theta_hat
                .values()
                .iter()
                .zip(&score)
                .zip(&ev.mu_fl)
                .map(|((th, sc), m)| (th + sc) * m)
                .collect();
            let value = pairwise_sum(&inner) + t.value - model.log_partition(&theta_hat)?;
            Ok(RiskEstimate {
                value,
                loss_id: LossId::Mkls,
                constant_convention: "MKLS - A(theta)",
                stderr: mc_stderr(t, 1.0),
                floor_events: ev.floor_events,
            })
        }
        EstimatorSpec::Pukla { mode } => {
            let (down, down_se, down_floors) = downshift_sum(
                p,
                y,
                &ev.mu_raw,
                floor,
                *mode,
                plan,
                |m| m.ln(),
                |i| y[i],
            )?;
            let value = pairwise_sum(&ev.mu_fl) - down;
            Ok(RiskEstimate {
                value,
                loss_id: LossId::Mkla,
                constant_convention: "MKLA + |mu|_1 - <mu, log mu>",
                stderr: if down_se > 0.0 { Some(down_se) } else { None },
                floor_events: ev.floor_events + down_floors,
            })
        }
        EstimatorSpec::Dkla => {
            let theta_hat = model.link(&ev.mu_fl)?;
            let t = trace.expect("dkla uses a trace");
            let value =
                model.log_partition(&theta_hat)? - dot(y, theta_hat.values()) + t.value;
            Ok(RiskEstimate {
                value,
                loss_id: LossId::Mkla,
                constant_convention: "MKLA - <mu, theta> + A(theta)",
                stderr: mc_stderr(t, 1.0),
                floor_events: ev.floor_events,
            })
        }
    }
}

fn mc_stderr(t: TraceEstimate, scale: f64) -> Option<f64> {
    if t.stderr > 0.0 {
        Some(scale * t.stderr)
    } else {
        None
    }
}

fn eta_negbin(m: f64, r: f64) -> f64 {
    let m = m.max(0.0);
    m / (r + m)
}

/// The mean-free last term of the generalized Stein identity,
/// `(1/h) tr d^2 h/d y^2`, in closed form per family.
fn gsure_last_term(model: &FamilyModel, y: &[f64]) -> Result<f64> {
    match model.kind() {
        FamilyKind::Gaussian => {
            let s2 = model.sigma().unwrap().powi(2);
            let terms: Vec<f64> = y.iter().map(|v| v * v / (s2 * s2) - 1.0 / s2).collect();
            Ok(pairwise_sum(&terms))
        }
        FamilyKind::Gamma => {
            let l = model.gamma_shape().unwrap();
            let terms: Vec<f64> = y.iter().map(|v| (l - 1.0) * (l - 2.0) / (v * v)).collect();
            Ok(pairwise_sum(&terms))
        }
        _ => Err(Error::UnsupportedFamily { family: model.kind().name(), op: "gsure" }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{AffineDiag, GridShape, LinearFilter, Predictor};

    /// Test predictor with output independent of y.
    struct Fixed(Vec<f64>);

    impl MeanPredictor for Fixed {
        fn evaluate(&self, _y: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
        fn jvp(&self, req: &JvpRequest) -> Result<Vec<f64>> {
            Ok(vec![0.0; req.y.len()])
        }
        fn affine_diag(&self, dim: usize) -> Option<AffineDiag> {
            Some(AffineDiag::Uniform(0.0)).filter(|_| dim == self.0.len())
        }
    }

    /// mu_hat(y) = y + 1, an affine predictor with unit diagonal.
    struct ShiftUp;

    impl MeanPredictor for ShiftUp {
        fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>> {
            Ok(y.iter().map(|v| v + 1.0).collect())
        }
        fn jvp(&self, req: &JvpRequest) -> Result<Vec<f64>> {
            Ok(req.direction.to_vec())
        }
        fn affine_diag(&self, _dim: usize) -> Option<AffineDiag> {
            Some(AffineDiag::Uniform(1.0))
        }
    }

    fn plan() -> ProbePlan {
        ProbePlan::gaussian(64, 7)
    }

    #[test]
    fn sure_identity_is_d_sigma_sq() {
        let model = FamilyModel::gaussian(4, 1.5).unwrap();
        let y = [0.3, -1.0, 2.0, 0.7];
        let est = sure(&model, &Predictor::Identity, &y, &plan()).unwrap();
        assert!((est.value - 4.0 * 2.25).abs() < 1e-12);
        assert_eq!(est.stderr, None);
    }

    #[test]
    fn sure_constant_mean_hand_formula() {
        let model = FamilyModel::gaussian(5, 2.0).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0, 10.0];
        let est = sure(&model, &Predictor::ConstantMean, &y, &plan()).unwrap();
        let mean = 4.0;
        let resid: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        // tr W = 1 for the averaging matrix
        let expect = resid - 5.0 * 4.0 + 2.0 * 4.0;
        assert!((est.value - expect).abs() < 1e-10);
    }

    #[test]
    fn sure_rejects_non_gaussian() {
        let model = FamilyModel::gamma(2, 3.0).unwrap();
        let err = sure(&model, &Predictor::Identity, &[1.0, 2.0], &plan());
        assert!(matches!(err, Err(Error::Assumption(_))));
    }

    #[test]
    fn gaussian_gsure_is_sure_over_sigma_fourth() {
        let model = FamilyModel::gaussian(16, 1.7).unwrap();
        let filt =
            Predictor::LinearFilter(LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 1.2).unwrap());
        let y = model.sample(&vec![3.0; 16], 42).unwrap();
        let s = sure(&model, &filt, &y, &plan()).unwrap();
        let g = gsure(&model, &filt, &y, &plan(), None).unwrap();
        let s4 = 1.7f64.powi(4);
        assert!(
            (g.value - s.value / s4).abs() <= 1e-8 * (s.value / s4).abs(),
            "gsure {} vs sure/s^4 {}",
            g.value,
            s.value / s4
        );
    }

    #[test]
    fn gamma_gsure_constant_predictor_hand_value() {
        // L = 3, d = 1, y = 2, mu_hat = c:
        //   9/c^2 - 12/(2c) + 0 + 2/4
        let model = FamilyModel::gamma(1, 3.0).unwrap();
        let c = 0.8;
        let est = gsure(&model, &Fixed(vec![c]), &[2.0], &plan(), None).unwrap();
        let expect = 9.0 / (c * c) - 6.0 / c + 0.5;
        assert!((est.value - expect).abs() < 1e-10, "{} vs {expect}", est.value);
        assert_eq!(est.constant_convention, "MSE_theta");
    }

    #[test]
    fn gamma_gsure_matches_generic_route() {
        // The family-agnostic identity assembled from raw pieces must agree
        // with the shipped estimator on the Gamma family.
        let model = FamilyModel::gamma(16, 3.0).unwrap();
        let filt =
            LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 1.4).unwrap();
        let mu = vec![2.5; 16];
        let y = model.sample(&mu, 3).unwrap();
        let est = gsure(&model, &filt, &y, &plan(), None).unwrap();

        let mu_hat = filt.evaluate(&y).unwrap();
        let theta_hat = model.link(&mu_hat).unwrap();
        let score = model.base_measure_score(&y).unwrap();
        let w = filt.matrix();
        // tr d theta_hat / d y = sum_i phi'(mu_hat_i) W_ii
        let phi_p = model.link_derivative(&mu_hat).unwrap();
        let tr: f64 = (0..16).map(|i| phi_p[i] * w[i][i]).sum();
        let l = 3.0;
        let last: f64 = y.iter().map(|v| (l - 1.0) * (l - 2.0) / (v * v)).sum();
        let generic = norm_sq(theta_hat.values())
            + 2.0 * dot(&score, theta_hat.values())
            + 2.0 * tr
            + last;
        assert!((est.value - generic).abs() < 1e-9 * generic.abs().max(1.0));
    }

    #[test]
    fn gsure_gamma_small_shape_needs_seminal_variant() {
        let model = FamilyModel::gamma(1, 1.5).unwrap();
        let p = Fixed(vec![1.0]);
        assert!(matches!(
            gsure(&model, &p, &[2.0], &plan(), Some(true)),
            Err(Error::Assumption(_))
        ));
        // defaults drop the last term for 1 < L <= 2
        let est = gsure(&model, &p, &[2.0], &plan(), None).unwrap();
        assert_eq!(est.constant_convention, "MSE_theta - |theta|^2");
    }

    #[test]
    fn pure_constant_mean_and_identity_examples() {
        let model = FamilyModel::poisson(3).unwrap();
        let y = [1.0, 2.0, 3.0];
        let plan = ProbePlan::rademacher(8, 1);

        let est = pure(&model, &Predictor::ConstantMean, &y, DownshiftMode::Exact, &plan).unwrap();
        assert!((est.value - 0.0).abs() < 1e-12, "got {}", est.value);

        let est = pure(&model, &Predictor::Identity, &y, DownshiftMode::Exact, &plan).unwrap();
        assert!((est.value - 6.0).abs() < 1e-12, "|y|_1 = 6, got {}", est.value);
    }

    #[test]
    fn pure_bernoulli_equals_exact_for_affine_predictors() {
        let model = FamilyModel::poisson(16).unwrap();
        let filt =
            Predictor::LinearFilter(LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 1.0).unwrap());
        let y = model.sample(&vec![4.0; 16], 8).unwrap();
        let plan = ProbePlan::rademacher(4, 9);
        let a = pure(&model, &filt, &y, DownshiftMode::Exact, &plan).unwrap();
        let b = pure(&model, &filt, &y, DownshiftMode::Bernoulli, &plan).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn gpure_zero_counts_keep_only_phat_norm() {
        let model = FamilyModel::neg_binomial(4, 3.0).unwrap();
        let c = 0.4; // constant probability predictor via mu = r c / (1 - c)
        let mu_c = 3.0 * c / (1.0 - c);
        let est = gpure_negbin(&model, &Fixed(vec![mu_c; 4]), &[0.0; 4]).unwrap();
        assert!((est.value - 4.0 * c * c).abs() < 1e-12);
    }

    #[test]
    fn gpure_constant_predictor_hand_value() {
        // r = 3, d = 1, y = 2, p_hat = c: c^2 - 2 (2c/4) + 2/(4*3)
        let model = FamilyModel::neg_binomial(1, 3.0).unwrap();
        let c = 0.35;
        let mu_c = 3.0 * c / (1.0 - c);
        let est = gpure_negbin(&model, &Fixed(vec![mu_c]), &[2.0]).unwrap();
        let expect = c * c - c + 1.0 / 6.0;
        assert!((est.value - expect).abs() < 1e-12, "{} vs {expect}", est.value);
    }

    #[test]
    fn gpure_rejects_r_one_and_two() {
        for r in [1.0, 2.0] {
            let model = FamilyModel::neg_binomial(1, r).unwrap();
            assert!(matches!(
                gpure_negbin(&model, &Fixed(vec![0.5]), &[2.0]),
                Err(Error::Assumption(_))
            ));
        }
    }

    #[test]
    fn gaussian_sukls_and_dkla_collapse_to_sure() {
        let model = FamilyModel::gaussian(16, 1.3).unwrap();
        let filt =
            Predictor::LinearFilter(LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 0.9).unwrap());
        let y = model.sample(&vec![2.0; 16], 10).unwrap();
        let s = sure(&model, &filt, &y, &plan()).unwrap();
        let k = sukls(&model, &filt, &y, &plan()).unwrap();
        let dk = dkla(&model, &filt, &y, &plan()).unwrap();
        let s2 = 1.3 * 1.3;
        let expect = (s.value - norm_sq(&y) + 16.0 * s2) / (2.0 * s2);
        assert!((k.value - expect).abs() <= 1e-8 * expect.abs().max(1.0));
        assert!((dk.value - expect).abs() <= 1e-8 * expect.abs().max(1.0));
    }

    #[test]
    fn gamma_sukls_matches_closed_form_route() {
        let model = FamilyModel::gamma(16, 3.0).unwrap();
        let filt = LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 1.1).unwrap();
        let y = model.sample(&vec![2.0; 16], 12).unwrap();
        let est = sukls(&model, &filt, &y, &plan()).unwrap();

        // sum [(L-1) mu_hat_i / y_i - L log mu_hat_i - L] + tr W
        let l = 3.0;
        let mu_hat = filt.evaluate(&y).unwrap();
        let closed: f64 = mu_hat
            .iter()
            .zip(&y)
            .map(|(m, v)| (l - 1.0) * m / v - l * m.ln() - l)
            .sum::<f64>()
            + filt.trace();
        assert!((est.value - closed).abs() <= 1e-9 * closed.abs().max(1.0));
    }

    #[test]
    fn pukla_shift_up_hand_value() {
        // mu_hat = y + 1 on y = (1,2,3): |mu_hat|_1 - sum y_i log y_i
        let model = FamilyModel::poisson(3).unwrap();
        let y = [1.0, 2.0, 3.0];
        let plan = ProbePlan::rademacher(4, 2);
        let est = pukla(&model, &ShiftUp, &y, DownshiftMode::Exact, &plan).unwrap();
        let expect = 9.0 - (2.0 * 2.0f64.ln() + 3.0 * 3.0f64.ln());
        assert!((est.value - expect).abs() < 1e-12);
        assert!((est.value - 4.3179).abs() < 1e-3);
    }

    #[test]
    fn pukla_zero_counts_keep_only_l1_norm() {
        let model = FamilyModel::poisson(3).unwrap();
        let plan = ProbePlan::rademacher(4, 2);
        let est = pukla(&model, &ShiftUp, &[0.0; 3], DownshiftMode::Exact, &plan).unwrap();
        assert!((est.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_dkla_matches_closed_form_route() {
        let model = FamilyModel::gamma(16, 3.0).unwrap();
        let filt = LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 1.1).unwrap();
        let y = model.sample(&vec![2.0; 16], 13).unwrap();
        let est = dkla(&model, &filt, &y, &plan()).unwrap();

        // sum [L log mu_hat_i + L y_i / mu_hat_i] + sum (y_i^2/mu_hat_i^2) W_ii
        let l = 3.0;
        let mu_hat = filt.evaluate(&y).unwrap();
        let w0 = filt.weight_zero_offset();
        let closed: f64 = mu_hat
            .iter()
            .zip(&y)
            .map(|(m, v)| l * m.ln() + l * v / m + (v * v) / (m * m) * w0)
            .sum();
        assert!((est.value - closed).abs() <= 1e-9 * closed.abs().max(1.0));
    }

    #[test]
    fn poisson_dkla_matches_closed_form_route() {
        let model = FamilyModel::poisson(16).unwrap();
        let filt = LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 1.2).unwrap();
        let y = model.sample(&vec![5.0; 16], 14).unwrap();
        let est = dkla(&model, &filt, &y, &plan()).unwrap();

        // |mu_hat|_1 - <y, log mu_hat> + sum y_i (d log mu_hat_i / d y_i)
        let mu_hat = filt.evaluate(&y).unwrap();
        let w0 = filt.weight_zero_offset();
        let closed: f64 = mu_hat
            .iter()
            .zip(&y)
            .map(|(m, v)| m - v * m.ln() + v * w0 / m)
            .sum();
        assert!((est.value - closed).abs() <= 1e-9 * closed.abs().max(1.0));
    }

    #[test]
    fn gamma_dkla_constant_predictor_has_no_trace_term() {
        // A(theta_hat) - <y, theta_hat> = L log c + L y / c for mu_hat = c.
        let model = FamilyModel::gamma(1, 2.0).unwrap();
        let c = 1.7;
        let y = [0.9];
        let est = dkla(&model, &Fixed(vec![c]), &y, &plan()).unwrap();
        let expect = 2.0 * c.ln() + 2.0 * y[0] / c;
        assert!((est.value - expect).abs() < 1e-12);
    }

    #[test]
    fn assumptions_report_examples() {
        let p = Predictor::Identity;

        let gamma_small = FamilyModel::gamma(1, 1.5).unwrap();
        let rep = assumptions_report(
            &EstimatorSpec::Gsure { include_last_term: Some(true) },
            &gamma_small,
            Some(&p),
        );
        assert!(!rep.valid);
        assert!(rep.reasons[0].contains("L > 2"));

        let gauss = FamilyModel::gaussian(1, 1.0).unwrap();
        let rep = assumptions_report(
            &EstimatorSpec::Pukla { mode: DownshiftMode::Exact },
            &gauss,
            Some(&p),
        );
        assert!(!rep.valid);
        assert!(rep.reasons[0].contains("Poisson only"));

        let poisson = FamilyModel::poisson(1).unwrap();
        let rep = assumptions_report(&EstimatorSpec::Dkla, &poisson, Some(&p));
        assert!(rep.valid);
        assert_eq!(rep.bias_note.as_deref(), Some("O(n^{-1})"));
    }

    #[test]
    fn estimate_many_matches_individual_calls() {
        let model = FamilyModel::gamma(16, 3.0).unwrap();
        let filt =
            Predictor::LinearFilter(LinearFilter::gaussian(GridShape::new(4, 4).unwrap(), 1.0).unwrap());
        let y = model.sample(&vec![2.0; 16], 15).unwrap();
        let specs = [
            EstimatorSpec::Gsure { include_last_term: None },
            EstimatorSpec::Sukls,
            EstimatorSpec::Dkla,
        ];
        let many = estimate_many(&model, &filt, &y, &plan(), &specs).unwrap();
        assert_eq!(many[0].value, gsure(&model, &filt, &y, &plan(), None).unwrap().value);
        assert_eq!(many[1].value, sukls(&model, &filt, &y, &plan()).unwrap().value);
        assert_eq!(many[2].value, dkla(&model, &filt, &y, &plan()).unwrap().value);
    }
}
