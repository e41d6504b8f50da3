//! Ground-truth losses and diagnostics, available when the clean mean is
//! known. These are the references the estimators are validated against:
//! per-realization squared errors in the mean, natural and exp-natural
//! parametrizations, KL analysis/synthesis losses, the fidelity/complexity
//! decomposition of the mean KL analysis loss, the MNAE image-quality score,
//! empirical reliability bounds and variable-selection metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, DownshiftMode, EstimatorId, EstimatorSpec, LossId};
use crate::expfam::FamilyModel;
use crate::jacobian::ProbePlan;
use crate::predictors::{floor_in_place, mu_floor, MeanPredictor};
use crate::seeding::{derive_seed, Stream};
use crate::sums::{dot, mean_and_stderr, norm_sq, pairwise_sum};

/// Squared error in the mean parametrization, `|mu - mu_hat|^2`.
pub fn se_mu(model: &FamilyModel, mu: &[f64], mu_hat: &[f64]) -> Result<f64> {
    if mu.len() != model.dim() || mu_hat.len() != model.dim() {
        return Err(Error::domain("dimension mismatch"));
    }
    let diff: Vec<f64> = mu.iter().zip(mu_hat).map(|(a, b)| a - b).collect();
    Ok(norm_sq(&diff))
}

/// Squared error in the natural parametrization, `|phi(mu) - phi(mu_hat)|^2`.
pub fn se_theta(model: &FamilyModel, mu: &[f64], mu_hat: &[f64]) -> Result<f64> {
    let t0 = model.link(mu)?;
    let t1 = model.link(mu_hat)?;
    let diff: Vec<f64> = t0.values().iter().zip(t1.values()).map(|(a, b)| a - b).collect();
    Ok(norm_sq(&diff))
}

/// Squared error in the exp-natural parametrization,
/// `|exp phi(mu) - exp phi(mu_hat)|^2`.
pub fn se_eta(model: &FamilyModel, mu: &[f64], mu_hat: &[f64]) -> Result<f64> {
    let e0 = model.eta_from_mean(mu)?;
    let e1 = model.eta_from_mean(mu_hat)?;
    let diff: Vec<f64> = e0.iter().zip(&e1).map(|(a, b)| a - b).collect();
    Ok(norm_sq(&diff))
}

/// KL analysis loss `D(P_phi(mu) || P_phi(mu_hat))`.
pub fn kla(model: &FamilyModel, mu: &[f64], mu_hat: &[f64]) -> Result<f64> {
    let t0 = model.link(mu)?;
    let t1 = model.link(mu_hat)?;
    model.kl_divergence(&t0, &t1)
}

/// KL synthesis loss `D(P_phi(mu_hat) || P_phi(mu))`.
pub fn kls(model: &FamilyModel, mu: &[f64], mu_hat: &[f64]) -> Result<f64> {
    let t0 = model.link(mu)?;
    let t1 = model.link(mu_hat)?;
    model.kl_divergence(&t1, &t0)
}

/// Mean normalized absolute deviation error:
/// `d^-1 sqrt(pi/2) sum |mu_i - mu_hat_i| / sqrt(Lambda(mu)_i)`.
///
/// Close to 1 when `mu_hat` behaves like a single noisy observation, close
/// to 0 when it improves on the data.
pub fn mnae(model: &FamilyModel, mu: &[f64], mu_hat: &[f64]) -> Result<f64> {
    let lam = model.variance_function(mu)?;
    if lam.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::domain("mnae needs Lambda(mu) > 0 entrywise"));
    }
    if mu_hat.len() != mu.len() {
        return Err(Error::domain("dimension mismatch"));
    }
    let terms: Vec<f64> = mu
        .iter()
        .zip(mu_hat)
        .zip(&lam)
        .map(|((m, mh), l)| (m - mh).abs() / l.sqrt())
        .collect();
    Ok((std::f64::consts::PI / 2.0).sqrt() * pairwise_sum(&terms) / mu.len() as f64)
}

/// Per-realization loss value for a given loss identity.
pub fn loss_value(
    model: &FamilyModel,
    mu: &[f64],
    loss: LossId,
    mu_hat: &[f64],
) -> Result<f64> {
    match loss {
        LossId::MseMu => se_mu(model, mu, mu_hat),
        LossId::MseTheta => se_theta(model, mu, mu_hat),
        LossId::MseEta => se_eta(model, mu, mu_hat),
        LossId::Mkla => kla(model, mu, mu_hat),
        LossId::Mkls => kls(model, mu, mu_hat),
    }
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McLoss {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

fn floored_prediction<P: MeanPredictor + ?Sized>(
    p: &P,
    model: &FamilyModel,
    y: &[f64],
) -> Result<Vec<f64>> {
    let mut mu_hat = p.evaluate(y)?;
    floor_in_place(&mut mu_hat, mu_floor(model, y));
    Ok(mu_hat)
}

/// Empirical mean and standard error of a per-realization loss over `n`
/// fresh noise draws. Realizations derive their seeds by index, so results
/// do not depend on the execution schedule.
pub fn mc_mean_loss<P: MeanPredictor + Sync + ?Sized>(
    model: &FamilyModel,
    mu: &[f64],
    p: &P,
    loss: LossId,
    n: usize,
    seed: u64,
) -> Result<McLoss> {
    if n < 2 {
        return Err(Error::config("mc_mean_loss needs n >= 2"));
    }
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let y = model.sample(mu, derive_seed(seed, Stream::Noise, j as u64))?;
            let mu_hat = floored_prediction(p, model, &y)?;
            loss_value(model, mu, loss, &mu_hat)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    Ok(McLoss { mean, stderr, n })
}

/// Monte-Carlo estimate of the expected-data-fidelity / model-complexity
/// split of the mean KL analysis loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MklaDecomposition {
    /// `E[A(theta_hat) - A(theta) - <Y, theta_hat - theta>]`.
    pub fidelity: f64,
    pub fidelity_stderr: f64,
    /// `tr Cov(theta_hat(Y), Y) = E <Y - mu, theta_hat(Y)>`.
    pub complexity: f64,
    pub complexity_stderr: f64,
    pub n: usize,
}

/// Splits the mean KL analysis loss into fidelity plus complexity; the two
/// parts sum to the MC estimate of MKLA up to sampling error.
pub fn mkla_decomposition<P: MeanPredictor + Sync + ?Sized>(
    model: &FamilyModel,
    mu: &[f64],
    p: &P,
    n: usize,
    seed: u64,
) -> Result<MklaDecomposition> {
    if n < 2 {
        return Err(Error::config("mkla_decomposition needs n >= 2"));
    }
    let theta = model.link(mu)?;
    let a_theta = model.log_partition(&theta)?;
    let d = model.dim();

    struct Piece {
        fidelity: f64,
        raw_complexity: f64,
        y: Vec<f64>,
        theta_hat: Vec<f64>,
    }

    let pieces: Vec<Piece> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<Piece> {
            let y = model.sample(mu, derive_seed(seed, Stream::Noise, j as u64))?;
            let mu_hat = floored_prediction(p, model, &y)?;
            let theta_hat = model.link(&mu_hat)?;
            let fidelity = model.log_partition(&theta_hat)? - a_theta
                - (dot(&y, theta_hat.values()) - dot(&y, theta.values()));
            let centered: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
            let raw_complexity = dot(&centered, theta_hat.values());
            Ok(Piece { fidelity, raw_complexity, y, theta_hat: theta_hat.into_values() })
        })
        .collect::<Result<Vec<Piece>>>()?;

    let (fidelity, fidelity_stderr) =
        mean_and_stderr(&pieces.iter().map(|p| p.fidelity).collect::<Vec<f64>>());

    // Centered covariance estimator: subtracting the empirical means makes
    // a constant predictor contribute exactly zero complexity.
    let mut y_bar = vec![0.0; d];
    let mut th_bar = vec![0.0; d];
    for piece in &pieces {
        for i in 0..d {
            y_bar[i] += piece.y[i] / n as f64;
            th_bar[i] += piece.theta_hat[i] / n as f64;
        }
    }
    let y_bar_centered: Vec<f64> = y_bar.iter().zip(mu).map(|(a, b)| a - b).collect();
    let correction = dot(&y_bar_centered, &th_bar);
    let raw: Vec<f64> = pieces.iter().map(|p| p.raw_complexity).collect();
    let (raw_mean, complexity_stderr) = mean_and_stderr(&raw);
    let complexity = raw_mean - correction;

    Ok(MklaDecomposition { fidelity, fidelity_stderr, complexity, complexity_stderr, n })
}

/// The additive constant linking an estimator's expectation to its loss:
/// `E[estimator] = E[loss] + declared_constant`.
pub fn declared_constant(
    model: &FamilyModel,
    mu: &[f64],
    spec: &EstimatorSpec,
) -> Result<f64> {
    Ok(match spec {
        EstimatorSpec::Sure | EstimatorSpec::Pure { .. } | EstimatorSpec::GpureNegbin => 0.0,
        EstimatorSpec::Gsure { include_last_term } => {
            let include = match include_last_term {
                Some(v) => *v,
                None => model.gamma_shape().map(|l| l > 2.0).unwrap_or(true),
            };
            if include {
                0.0
            } else {
                -norm_sq(model.link(mu)?.values())
            }
        }
        EstimatorSpec::Sukls => -model.log_partition(&model.link(mu)?)?,
        EstimatorSpec::Pukla { .. } => {
            let log_mu: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
            pairwise_sum(mu) - dot(mu, &log_mu)
        }
        EstimatorSpec::Dkla => {
            let theta = model.link(mu)?;
            model.log_partition(&theta)? - dot(mu, theta.values())
        }
    })
}

/// Empirical reliability check: root-mean-square gap between an estimator
/// and its per-realization loss (constants dropped on both sides), against
/// the two-term Cauchy-Schwarz bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reliability {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub n: usize,
}

fn rms_and_stderr(values: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    let (m, se) = mean_and_stderr(&sq);
    if m <= 0.0 {
        return (0.0, 0.0);
    }
    let root = m.sqrt();
    (root, se / (2.0 * root))
}

/// Evaluates one reliability row over paired noise realizations.
///
/// Supported rows: GSURE, SUKLS, PURE, PUKLA and DKLA. The halving on the
/// GSURE and PURE rows follows the displayed bounds.
pub fn reliability<P: MeanPredictor + Sync + ?Sized>(
    model: &FamilyModel,
    mu: &[f64],
    p: &P,
    estimator: EstimatorId,
    n: usize,
    seed: u64,
) -> Result<Reliability> {
    if n < 2 {
        return Err(Error::config("reliability needs n >= 2"));
    }
    let theta = model.link(mu)?;
    let a_theta = model.log_partition(&theta)?;
    let theta_norm_sq = norm_sq(theta.values());
    let mu_norm_sq = norm_sq(mu);
    let probes = ProbePlan::default_probes_for_dim(model.dim());

    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64, f64)> {
            let noise_seed = derive_seed(seed, Stream::Noise, j as u64);
            let probe_seed = derive_seed(seed, Stream::Probe, j as u64);
            let plan = ProbePlan::gaussian(probes, probe_seed);
            let y = model.sample(mu, noise_seed)?;
            let mu_hat = floored_prediction(p, model, &y)?;
            let theta_hat = model.link(&mu_hat)?;

            // (scaled gap, first bound term, second bound term)
            match estimator {
                EstimatorId::Gsure => {
                    let est = estimators::gsure(model, p, &y, &plan, Some(false))?.value;
                    let loss = se_theta(model, mu, &mu_hat)? - theta_norm_sq;
                    let score = model.base_measure_score(&y)?;
                    let shifted: Vec<f64> =
                        score.iter().zip(theta.values()).map(|(s, t)| s + t).collect();
                    let a = dot(&shifted, theta_hat.values());
                    let phi_p = model.link_derivative(&mu_hat)?;
                    let b = estimators::weighted_traces(p, &y, &plan, &[Some(phi_p)])?[0].value;
                    Ok((0.5 * (est - loss), a, b))
                }
                EstimatorId::Sukls => {
                    let est = estimators::sukls(model, p, &y, &plan)?.value;
                    let loss = kls(model, mu, &mu_hat)? - a_theta;
                    let score = model.base_measure_score(&y)?;
                    let shifted: Vec<f64> =
                        score.iter().zip(theta.values()).map(|(s, t)| s + t).collect();
                    let a = dot(&shifted, &mu_hat);
                    let b = estimators::weighted_traces(p, &y, &plan, &[None])?[0].value;
                    Ok((est - loss, a, b))
                }
                EstimatorId::Pure => {
                    let est = estimators::pure(model, p, &y, DownshiftMode::Exact, &plan)?.value;
                    let yy1: Vec<f64> = y.iter().map(|v| v * (v - 1.0)).collect();
                    let est_overline = est - pairwise_sum(&yy1);
                    let loss = se_mu(model, mu, &mu_hat)? - mu_norm_sq;
                    let a = dot(mu, &mu_hat);
                    let raw = p.evaluate(&y)?;
                    let (b, _, _) = estimators::downshift_sum(
                        p,
                        &y,
                        &raw,
                        None,
                        DownshiftMode::Exact,
                        &plan,
                        |m| m,
                        |i| y[i],
                    )?;
                    Ok((0.5 * (est_overline - loss), a, b))
                }
                EstimatorId::Pukla => {
                    let est = estimators::pukla(model, p, &y, DownshiftMode::Exact, &plan)?.value;
                    let loss = kla(model, mu, &mu_hat)? + a_theta - dot(mu, theta.values());
                    let log_mu_hat: Vec<f64> = mu_hat.iter().map(|m| m.ln()).collect();
                    let a = dot(mu, &log_mu_hat);
                    let raw = p.evaluate(&y)?;
                    let floor = mu_floor(model, &y);
                    let (b, _, _) = estimators::downshift_sum(
                        p,
                        &y,
                        &raw,
                        floor,
                        DownshiftMode::Exact,
                        &plan,
                        |m| m.ln(),
                        |i| y[i],
                    )?;
                    Ok((est - loss, a, b))
                }
                EstimatorId::Dkla => {
                    let est = estimators::dkla(model, p, &y, &plan)?.value;
                    let loss = kla(model, mu, &mu_hat)? + a_theta - dot(mu, theta.values());
                    let centered: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
                    let a = dot(&centered, theta_hat.values());
                    let lam = model.variance_at_data(&y)?;
                    let phi_p = model.link_derivative(&mu_hat)?;
                    let g: Vec<f64> = lam.iter().zip(&phi_p).map(|(a, b)| a * b).collect();
                    let b = estimators::weighted_traces(p, &y, &plan, &[Some(g)])?[0].value;
                    Ok((est - loss, a, b))
                }
                EstimatorId::Sure | EstimatorId::GpureNegbin => Err(Error::assumption(format!(
                    "no reliability bound row for {}",
                    estimator.name()
                ))),
            }
        })
        .collect::<Result<Vec<(f64, f64, f64)>>>()?;

    let gaps: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let first: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let second: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (lhs, lhs_stderr) = rms_and_stderr(&gaps);
    let (rhs_a, se_a) = rms_and_stderr(&first);
    let (rhs_b, se_b) = rms_and_stderr(&second);
    Ok(Reliability { lhs, lhs_stderr, rhs: rhs_a + rhs_b, rhs_stderr: se_a + se_b, n })
}

/// Variable-selection error rates against a known coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    /// Percentage of entries misclassified (false negatives or positives).
    pub errors_pct: f64,
    /// `beta_hat_i = 0` while `beta_i != 0`.
    pub false_negative_pct: f64,
    /// `beta_hat_i != 0` while `beta_i = 0`.
    pub false_positive_pct: f64,
}

/// Compares supports at tolerance `support_tol` (entries with magnitude at
/// most the tolerance count as zero).
pub fn selection_metrics(
    beta_true: &[f64],
    beta_hat: &[f64],
    support_tol: f64,
) -> Result<SelectionMetrics> {
    if beta_true.len() != beta_hat.len() {
        return Err(Error::domain("coefficient vectors differ in length"));
    }
    if beta_true.is_empty() {
        return Err(Error::domain("empty coefficient vectors"));
    }
    let q = beta_true.len() as f64;
    let mut false_neg = 0usize;
    let mut false_pos = 0usize;
    for (t, h) in beta_true.iter().zip(beta_hat) {
        let t_on = t.abs() > support_tol;
        let h_on = h.abs() > support_tol;
        match (t_on, h_on) {
            (true, false) => false_neg += 1,
            (false, true) => false_pos += 1,
            _ => {}
        }
    }
    Ok(SelectionMetrics {
        errors_pct: 100.0 * (false_neg + false_pos) as f64 / q,
        false_negative_pct: 100.0 * false_neg as f64 / q,
        false_positive_pct: 100.0 * false_pos as f64 / q,
    })
}
