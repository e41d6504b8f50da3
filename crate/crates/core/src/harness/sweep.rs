//! Tuning-parameter sweeps with paired estimator and oracle curves.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorId, EstimatorSpec, LossId};
use crate::jacobian::ProbePlan;
use crate::oracles;
use crate::predictors::{floor_in_place, mu_floor, MeanPredictor};
use crate::seeding::{derive_seed, Stream};
use crate::sums::mean_and_stderr;

use super::config::{ExperimentConfig, SCHEMA_VERSION};

/// Mean and standard error of one curve at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStat {
    pub mean: f64,
    pub stderr: f64,
}

/// All recorded quantities at one grid point. `None` marks a point where
/// evaluation failed; failed points are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: f64,
    /// Parallel to `SweepResult::estimator_ids`.
    pub estimates: Vec<Option<CurveStat>>,
    /// Parallel to `SweepResult::oracle_ids`.
    pub oracles: Vec<Option<CurveStat>>,
    pub mnae: Option<CurveStat>,
    pub floor_events: u64,
}

/// Argmin indices over the grid and the MNAE observed at each argmin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgminReport {
    pub estimator_argmin: Vec<Option<usize>>,
    pub oracle_argmin: Vec<Option<usize>>,
    pub mnae_at_estimator_argmin: Vec<Option<f64>>,
    pub mnae_at_oracle_argmin: Vec<Option<f64>>,
}

/// Outcome of a sweep; serializes losslessly to the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub estimator_ids: Vec<EstimatorId>,
    pub oracle_ids: Vec<LossId>,
    pub points: Vec<SweepPoint>,
    pub argmins: ArgminReport,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.param).collect()
    }

    pub fn estimator_curve(&self, id: EstimatorId) -> Option<Vec<Option<CurveStat>>> {
        let k = self.estimator_ids.iter().position(|e| *e == id)?;
        Some(self.points.iter().map(|p| p.estimates[k]).collect())
    }

    pub fn oracle_curve(&self, id: LossId) -> Option<Vec<Option<CurveStat>>> {
        let k = self.oracle_ids.iter().position(|e| *e == id)?;
        Some(self.points.iter().map(|p| p.oracles[k]).collect())
    }

    pub fn estimator_argmin(&self, id: EstimatorId) -> Option<usize> {
        let k = self.estimator_ids.iter().position(|e| *e == id)?;
        self.argmins.estimator_argmin[k]
    }

    pub fn oracle_argmin(&self, id: LossId) -> Option<usize> {
        let k = self.oracle_ids.iter().position(|e| *e == id)?;
        self.argmins.oracle_argmin[k]
    }

    pub fn mnae_curve(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.mnae.map(|c| c.mean)).collect()
    }
}

fn argmin_of(curve: &[Option<CurveStat>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in curve.iter().enumerate() {
        if let Some(c) = c {
            if best.map(|(_, v)| c.mean < v).unwrap_or(true) {
                best = Some((i, c.mean));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Runs the configured sweep: shared noise realizations across all grid
/// points (paired curves), estimator means with standard errors, oracle
/// losses and the MNAE, argmin bookkeeping and flooring counters.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.check_schema()?;
    let signal = cfg.signal_section()?;
    let predictor_spec = cfg.predictor_section()?;
    let sweep = cfg.sweep_section()?;
    sweep.validate()?;

    let shape = signal.shape()?;
    let d = shape.len();
    let model = cfg.model.build(d)?;
    let mu = signal.generate()?;
    model.mu_domain_check(&mu)?;

    // fail early on estimators invalid for this family
    for id in &sweep.estimators {
        let spec = EstimatorSpec::default_for(*id, d, false);
        let report = estimators::assumptions_report(
            &spec,
            &model,
            None::<&crate::predictors::Predictor>,
        );
        if !report.valid {
            return Err(Error::assumption(report.reasons.join("; ")));
        }
    }

    let grid = sweep.grid()?;
    let n = sweep.realizations;
    let probe_count = cfg.probes.count.unwrap_or_else(|| ProbePlan::default_probes_for_dim(d));

    // one shared set of noise realizations pairs every curve
    let observations: Vec<Vec<f64>> = (0..n)
        .map(|j| model.sample(&mu, derive_seed(cfg.seed, Stream::Noise, j as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(grid.len());
    for (k, &param) in grid.iter().enumerate() {
        let point = (|| -> Result<SweepPoint> {
            let p = predictor_spec.build(&model, shape, param)?;
            let specs: Vec<EstimatorSpec> = sweep
                .estimators
                .iter()
                .map(|id| EstimatorSpec::default_for(*id, d, p.affine_diag(d).is_some()))
                .collect();

            struct RealizationRow {
                estimates: Vec<f64>,
                oracles: Vec<f64>,
                mnae: f64,
                floor_events: u64,
            }

            let rows: Vec<RealizationRow> = observations
                .par_iter()
                .enumerate()
                .map(|(j, y)| -> Result<RealizationRow> {
                    let plan = ProbePlan::gaussian(
                        probe_count,
                        derive_seed(cfg.seed, Stream::Probe, (j * grid.len() + k) as u64),
                    );
                    let ests = estimators::estimate_many(&model, &p, y, &plan, &specs)?;
                    let mut mu_hat = p.evaluate(y)?;
                    floor_in_place(&mut mu_hat, mu_floor(&model, y));
                    let mut oracle_vals = Vec::with_capacity(sweep.oracle_losses.len());
                    for loss in &sweep.oracle_losses {
                        oracle_vals.push(oracles::loss_value(&model, &mu, *loss, &mu_hat)?);
                    }
                    Ok(RealizationRow {
                        floor_events: ests.iter().map(|e| e.floor_events).sum(),
                        estimates: ests.into_iter().map(|e| e.value).collect(),
                        oracles: oracle_vals,
                        mnae: oracles::mnae(&model, &mu, &mu_hat)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;

            let stat_of = |get: &dyn Fn(&RealizationRow) -> f64| -> CurveStat {
                let vals: Vec<f64> = rows.iter().map(get).collect();
                let (mean, stderr) = mean_and_stderr(&vals);
                CurveStat { mean, stderr }
            };
            let estimates: Vec<Option<CurveStat>> = (0..specs.len())
                .map(|e| Some(stat_of(&|r: &RealizationRow| r.estimates[e])))
                .collect();
            let oracle_stats: Vec<Option<CurveStat>> = (0..sweep.oracle_losses.len())
                .map(|o| Some(stat_of(&|r: &RealizationRow| r.oracles[o])))
                .collect();
            let mnae = Some(stat_of(&|r: &RealizationRow| r.mnae));
            Ok(SweepPoint {
                param,
                estimates,
                oracles: oracle_stats,
                mnae,
                floor_events: rows.iter().map(|r| r.floor_events).sum(),
            })
        })();
        match point {
            Ok(pt) => points.push(pt),
            Err(Error::Assumption(msg)) => return Err(Error::Assumption(msg)),
            Err(_) => points.push(SweepPoint {
                param,
                estimates: vec![None; sweep.estimators.len()],
                oracles: vec![None; sweep.oracle_losses.len()],
                mnae: None,
                floor_events: 0,
            }),
        }
    }

    let mnae_means: Vec<Option<f64>> = points.iter().map(|p| p.mnae.map(|c| c.mean)).collect();
    let estimator_argmin: Vec<Option<usize>> = (0..sweep.estimators.len())
        .map(|e| {
            let curve: Vec<Option<CurveStat>> = points.iter().map(|p| p.estimates[e]).collect();
            argmin_of(&curve)
        })
        .collect();
    let oracle_argmin: Vec<Option<usize>> = (0..sweep.oracle_losses.len())
        .map(|o| {
            let curve: Vec<Option<CurveStat>> = points.iter().map(|p| p.oracles[o]).collect();
            argmin_of(&curve)
        })
        .collect();
    let mnae_at = |idx: &Option<usize>| idx.and_then(|i| mnae_means[i]);
    let argmins = ArgminReport {
        mnae_at_estimator_argmin: estimator_argmin.iter().map(mnae_at).collect(),
        mnae_at_oracle_argmin: oracle_argmin.iter().map(mnae_at).collect(),
        estimator_argmin,
        oracle_argmin,
    };

    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        estimator_ids: sweep.estimators.clone(),
        oracle_ids: sweep.oracle_losses.clone(),
        points,
        argmins,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "nan".into(),
    }
}

/// Writes `sweep.json` (lossless) and `sweep.csv` (primary estimator and
/// oracle curves; one row per grid point) into `dir`.
pub fn persist_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let json_path = dir.join("sweep.json");
    let json = serde_json::to_string_pretty(result)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
    fs::write(&json_path, json.as_bytes())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;

    let csv_path = dir.join("sweep.csv");
    let mut out = String::from("param,est_mean,est_se,oracle_mean,oracle_se,mnae_at_est_argmin,floor_count\n");
    let mnae_at_argmin = result.argmins.mnae_at_estimator_argmin.first().copied().flatten();
    for p in &result.points {
        let est = p.estimates.first().copied().flatten();
        let orc = p.oracles.first().copied().flatten();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.param,
            fmt_opt(est.map(|c| c.mean)),
            fmt_opt(est.map(|c| c.stderr)),
            fmt_opt(orc.map(|c| c.mean)),
            fmt_opt(orc.map(|c| c.stderr)),
            fmt_opt(mnae_at_argmin),
            p.floor_events,
        ));
    }
    let mut f = fs::File::create(&csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok(())
}

/// Reads a persisted sweep back from its JSON sidecar, rejecting unknown
/// schema versions.
pub fn load_sweep(dir: &Path) -> Result<SweepResult> {
    let json_path = dir.join("sweep.json");
    let text = fs::read_to_string(&json_path)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let result: SweepResult = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("cannot parse {}: {e}", json_path.display())))?;
    if result.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: result.schema_version, expected: SCHEMA_VERSION });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{GridScale, ModelSpec, PredictorSpec, ProbeSpec, SignalSpec, SweepSpec};

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: "unit".into(),
            seed: 11,
            model: ModelSpec::gamma(3.0),
            signal: Some(SignalSpec {
                kind: "stripes".into(),
                height: 8,
                width: 8,
                value: None,
                mu_min: Some(1.0),
                mu_max: Some(6.0),
                contrast: None,
                cycles: None,
                orientation: None,
                shade_to: None,
                period: Some(4.0),
                angle_deg: Some(30.0),
            }),
            predictor: Some(PredictorSpec {
                kind: "linear_filter".into(),
                patch_radius: None,
                search_radius: None,
                normalized: None,
                design: None,
            }),
            sweep: Some(SweepSpec {
                grid_scale: GridScale::Geometric,
                grid_min: 0.5,
                grid_max: 4.0,
                grid_points: 5,
                realizations: 6,
                estimators: vec![EstimatorId::Sukls, EstimatorId::Dkla],
                oracle_losses: vec![LossId::Mkls, LossId::Mkla],
            }),
            probes: ProbeSpec::default(),
            denoise: None,
            lasso: None,
        }
    }

    #[test]
    fn sweep_produces_full_grid_and_argmins() {
        let result = run_sweep(&small_config()).unwrap();
        assert_eq!(result.points.len(), 5);
        assert!(result.points.iter().all(|p| p.estimates.iter().all(Option::is_some)));
        let am = result.estimator_argmin(EstimatorId::Sukls).unwrap();
        assert!(am < 5);
    }

    #[test]
    fn single_point_grid_argmin_is_that_point() {
        let mut cfg = small_config();
        cfg.sweep.as_mut().unwrap().grid_points = 1;
        cfg.sweep.as_mut().unwrap().grid_min = 1.0;
        let result = run_sweep(&cfg).unwrap();
        assert_eq!(result.points.len(), 1);
        assert_eq!(result.estimator_argmin(EstimatorId::Sukls), Some(0));
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = run_sweep(&small_config()).unwrap();
        let b = run_sweep(&small_config()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn invalid_estimator_family_fails_early() {
        let mut cfg = small_config();
        cfg.sweep.as_mut().unwrap().estimators = vec![EstimatorId::Pukla];
        assert!(matches!(run_sweep(&cfg), Err(Error::Assumption(_))));
    }

    #[test]
    fn persist_round_trip_is_lossless() {
        let result = run_sweep(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        persist_sweep(&result, dir.path()).unwrap();
        let back = load_sweep(dir.path()).unwrap();
        assert_eq!(result, back);

        let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6, "header + 5 grid rows");
        assert!(csv.starts_with("param,est_mean,est_se,oracle_mean,oracle_se,"));
    }

    #[test]
    fn load_rejects_schema_mismatch() {
        let result = run_sweep(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        persist_sweep(&result, dir.path()).unwrap();
        let path = dir.path().join("sweep.json");
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"schema_version\": 1", "\"schema_version\": 99", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_sweep(dir.path()), Err(Error::SchemaVersion { found: 99, .. })));
    }

    #[test]
    fn load_missing_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sweep(dir.path());
        match err {
            Err(Error::Io { path, .. }) => assert!(path.contains("sweep.json")),
            other => panic!("expected io error, got {other:?}"),
        }
    }
}
