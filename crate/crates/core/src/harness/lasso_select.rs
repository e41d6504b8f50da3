//! Variable-selection experiment: a lambda sweep of the Gamma LASSO with
//! per-realization selection of the regularization level by competing
//! objectives, scored against the known support.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorId, EstimatorSpec};
use crate::jacobian::ProbePlan;
use crate::oracles::{self, SelectionMetrics};
use crate::predictors::{floor_in_place, mu_floor, LassoOrthogonal};
use crate::seeding::{derive_seed, Stream};
use crate::sums::mean_and_stderr;

use super::config::{ExperimentConfig, SCHEMA_VERSION};

/// Selection performance of one guiding objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOutcome {
    /// Estimator name, or `oracle_*` for truth-guided selection.
    pub label: String,
    /// Index into `lambdas` chosen on each realization.
    pub lambda_star_index: Vec<usize>,
    pub metrics: Vec<SelectionMetrics>,
    pub mean_errors_pct: f64,
    pub stderr_errors_pct: f64,
    pub mean_false_negative_pct: f64,
    pub mean_false_positive_pct: f64,
}

impl ObjectiveOutcome {
    fn from_metrics(label: String, lambda_star_index: Vec<usize>, metrics: Vec<SelectionMetrics>) -> Self {
        let errs: Vec<f64> = metrics.iter().map(|m| m.errors_pct).collect();
        let fns: Vec<f64> = metrics.iter().map(|m| m.false_negative_pct).collect();
        let fps: Vec<f64> = metrics.iter().map(|m| m.false_positive_pct).collect();
        let (mean_errors_pct, stderr_errors_pct) = mean_and_stderr(&errs);
        ObjectiveOutcome {
            label,
            lambda_star_index,
            metrics,
            mean_errors_pct,
            stderr_errors_pct,
            mean_false_negative_pct: crate::sums::mean(&fns),
            mean_false_positive_pct: crate::sums::mean(&fps),
        }
    }
}

/// Result of [`run_lasso_selection`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSelectionResult {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Ascending lambda grid shared by all realizations.
    pub lambdas: Vec<f64>,
    /// Estimator-guided selections, in the order of `lasso.objectives`.
    pub estimator_outcomes: Vec<ObjectiveOutcome>,
    /// Truth-guided selections (natural squared error, KL synthesis, KL
    /// analysis), for reference.
    pub oracle_outcomes: Vec<ObjectiveOutcome>,
}

struct RealizationOutcome {
    /// Chosen lambda index and metrics per estimator objective.
    by_estimator: Vec<(usize, SelectionMetrics)>,
    /// Same for the three oracle objectives.
    by_oracle: Vec<(usize, SelectionMetrics)>,
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Sweeps the lambda grid on every realization, warm-starting solutions
/// down the path, and reports selection metrics for each objective at its
/// per-realization argmin.
pub fn run_lasso_selection(cfg: &ExperimentConfig) -> Result<LassoSelectionResult> {
    cfg.check_schema()?;
    let spec = cfg.lasso_section()?.clone();
    if spec.realizations < 2 {
        return Err(Error::config("lasso experiment needs >= 2 realizations"));
    }
    if spec.grid_points < 2 {
        return Err(Error::config("lasso experiment needs >= 2 grid points"));
    }
    for id in &spec.objectives {
        if !matches!(id, EstimatorId::Gsure | EstimatorId::Sukls | EstimatorId::Dkla) {
            return Err(Error::config(format!(
                "objective '{}' is not defined for the gamma lasso experiment",
                id.name()
            )));
        }
    }

    let problem = super::synth::build_gamma_lasso_problem(
        spec.q,
        spec.shape,
        spec.sparsity,
        spec.amplitude,
        spec.mu_base,
        cfg.seed,
    )?;
    let noise_model = &problem.model;
    // estimators may run under a misspecified shape
    let est_model = crate::expfam::FamilyModel::gamma(spec.q, spec.shape * spec.misspecify)?;

    // a reference realization pins the shared lambda grid
    let y_ref = noise_model.sample(&problem.mu, derive_seed(cfg.seed, Stream::Signal, 1))?;
    let lambda_max = LassoOrthogonal::lambda_max(&est_model, problem.design, &y_ref)?;
    let lambda_min = lambda_max * 10f64.powf(-spec.grid_decades);
    let n_grid = spec.grid_points;
    let lambdas: Vec<f64> = (0..n_grid)
        .map(|i| {
            let t = i as f64 / (n_grid - 1) as f64;
            (lambda_min.ln() + t * (lambda_max.ln() - lambda_min.ln())).exp()
        })
        .collect();

    let specs: Vec<EstimatorSpec> = spec
        .objectives
        .iter()
        .map(|id| EstimatorSpec::default_for(*id, spec.q, false))
        .collect();
    for s in &specs {
        let report = estimators::assumptions_report(&s.clone(), &est_model, None::<&LassoOrthogonal>);
        if !report.valid {
            return Err(Error::assumption(report.reasons.join("; ")));
        }
    }

    let support_tol = 0.0; // the proximal step produces exact zeros
    let outcomes: Vec<RealizationOutcome> = (0..spec.realizations)
        .into_par_iter()
        .map(|j| -> Result<RealizationOutcome> {
            let y = noise_model.sample(&problem.mu, derive_seed(cfg.seed, Stream::Noise, j as u64))?;

            // solve the path from the sparsest end down, carrying warm starts
            let mut paths: Vec<Vec<f64>> = vec![Vec::new(); n_grid];
            let mut warm: Option<Vec<f64>> = None;
            for k in (0..n_grid).rev() {
                let mut p = LassoOrthogonal::new(est_model.clone(), problem.design, lambdas[k])?;
                if let Some(w) = &warm {
                    p = p.with_warm_start(w.clone());
                }
                let fit = p.solve(&y)?;
                warm = Some(fit.beta.clone());
                paths[k] = fit.beta;
            }

            let mut est_curves = vec![vec![0.0; n_grid]; specs.len()];
            let mut oracle_curves = vec![vec![0.0; n_grid]; 3];
            for k in 0..n_grid {
                let p = LassoOrthogonal::new(est_model.clone(), problem.design, lambdas[k])?
                    .with_warm_start(paths[k].clone());
                let plan = ProbePlan::gaussian(
                    spec.probes,
                    derive_seed(cfg.seed, Stream::Probe, (j * n_grid + k) as u64),
                );
                let ests = estimators::estimate_many(&est_model, &p, &y, &plan, &specs)?;
                for (e, est) in ests.iter().enumerate() {
                    est_curves[e][k] = est.value;
                }
                let mut mu_hat = problem.design.apply(&paths[k]);
                floor_in_place(&mut mu_hat, mu_floor(noise_model, &y));
                oracle_curves[0][k] = oracles::se_theta(noise_model, &problem.mu, &mu_hat)?;
                oracle_curves[1][k] = oracles::kls(noise_model, &problem.mu, &mu_hat)?;
                oracle_curves[2][k] = oracles::kla(noise_model, &problem.mu, &mu_hat)?;
            }

            let score = |k: usize| -> Result<SelectionMetrics> {
                oracles::selection_metrics(&problem.beta_true, &paths[k], support_tol)
            };
            let mut by_estimator = Vec::with_capacity(specs.len());
            for curve in &est_curves {
                let k = argmin(curve);
                by_estimator.push((k, score(k)?));
            }
            let mut by_oracle = Vec::with_capacity(3);
            for curve in &oracle_curves {
                let k = argmin(curve);
                by_oracle.push((k, score(k)?));
            }
            Ok(RealizationOutcome { by_estimator, by_oracle })
        })
        .collect::<Result<Vec<_>>>()?;

    let collect = |labels: Vec<String>, pick: &dyn Fn(&RealizationOutcome) -> &Vec<(usize, SelectionMetrics)>| {
        labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let idx: Vec<usize> = outcomes.iter().map(|o| pick(o)[i].0).collect();
                let metrics: Vec<SelectionMetrics> = outcomes.iter().map(|o| pick(o)[i].1).collect();
                ObjectiveOutcome::from_metrics(label, idx, metrics)
            })
            .collect::<Vec<_>>()
    };

    let estimator_outcomes = collect(
        spec.objectives.iter().map(|id| id.name().to_string()).collect(),
        &|o| &o.by_estimator,
    );
    let oracle_outcomes = collect(
        vec!["oracle_mse_theta".into(), "oracle_mkls".into(), "oracle_mkla".into()],
        &|o| &o.by_oracle,
    );

    Ok(LassoSelectionResult {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        lambdas,
        estimator_outcomes,
        oracle_outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{LassoSpec, ModelSpec, ProbeSpec};

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: "lasso-unit".into(),
            seed: 5,
            model: ModelSpec::gamma(8.0),
            signal: None,
            predictor: None,
            sweep: None,
            probes: ProbeSpec::default(),
            denoise: None,
            lasso: Some(LassoSpec {
                q: 64,
                shape: 8.0,
                sparsity: 0.25,
                amplitude: 1.2,
                realizations: 3,
                grid_points: 8,
                grid_decades: 2.5,
                objectives: vec![EstimatorId::Gsure, EstimatorId::Sukls],
                misspecify: 1.0,
                mu_base: 1.0,
                probes: 4,
            }),
        }
    }

    #[test]
    fn selection_runs_and_reports_per_objective() {
        let res = run_lasso_selection(&tiny_config()).unwrap();
        assert_eq!(res.lambdas.len(), 8);
        assert_eq!(res.estimator_outcomes.len(), 2);
        assert_eq!(res.estimator_outcomes[0].lambda_star_index.len(), 3);
        assert_eq!(res.oracle_outcomes.len(), 3);
        for o in res.estimator_outcomes.iter().chain(&res.oracle_outcomes) {
            assert!(o.mean_errors_pct >= 0.0 && o.mean_errors_pct <= 100.0);
            assert!(o.lambda_star_index.iter().all(|k| *k < 8));
        }
    }

    #[test]
    fn rejects_discrete_objectives() {
        let mut cfg = tiny_config();
        cfg.lasso.as_mut().unwrap().objectives = vec![EstimatorId::Pukla];
        assert!(run_lasso_selection(&cfg).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run_lasso_selection(&tiny_config()).unwrap();
        let b = run_lasso_selection(&tiny_config()).unwrap();
        assert_eq!(a, b);
    }
}
