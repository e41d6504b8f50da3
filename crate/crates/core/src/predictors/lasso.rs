//! L1-penalized likelihood regression over an orthonormal design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{FamilyKind, FamilyModel};
use crate::predictors::{fd_domain_ok, fd_jvp, floor_in_place, mu_floor, JvpRequest, MeanPredictor};
use crate::sums::pairwise_sum;

/// Orthonormal design matrices with `q = d` columns.
///
/// Both choices are symmetric and self-inverse, so `X` and `X^T` are the same
/// operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMatrix {
    Identity,
    /// Walsh-Hadamard basis scaled by `1/sqrt(d)`; requires a power-of-two
    /// dimension. Its first column is constant, which lets sparse
    /// coefficient vectors produce strictly positive means.
    Hadamard,
}

impl DesignMatrix {
    pub fn validate_dim(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::domain("design needs a positive dimension"));
        }
        if matches!(self, DesignMatrix::Hadamard) && !d.is_power_of_two() {
            return Err(Error::domain(format!(
                "hadamard design needs a power-of-two dimension, got {d}"
            )));
        }
        Ok(())
    }

    /// `X v` (equal to `X^T v`).
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            DesignMatrix::Identity => v.to_vec(),
            DesignMatrix::Hadamard => {
                let mut out = v.to_vec();
                fwht(&mut out);
                let scale = 1.0 / (v.len() as f64).sqrt();
                for x in out.iter_mut() {
                    *x *= scale;
                }
                out
            }
        }
    }
}

/// In-place fast Walsh-Hadamard transform (unnormalized).
fn fwht(data: &mut [f64]) {
    let n = data.len();
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(h * 2) {
            for i in block..block + h {
                let (a, b) = (data[i], data[i + h]);
                data[i] = a + b;
                data[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Converged coefficients for one regularization level.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
}

/// `beta_hat(y) = argmin_beta  nll(y; mu = X beta) + lambda |beta|_1`, with
/// `mu_hat(y) = X beta_hat(y)`.
///
/// The Gaussian case is solved in closed form (entrywise soft threshold of
/// `X^T y` at level `lambda sigma^2`); other families run proximal gradient
/// with a backtracking line search. Warm starts carry solutions along a
/// regularization path.
#[derive(Debug, Clone)]
pub struct LassoOrthogonal {
    model: FamilyModel,
    design: DesignMatrix,
    lambda: f64,
    max_iters: usize,
    rel_tol: f64,
    warm_start: Option<Vec<f64>>,
}

/// Indices with `|beta_i| > 1e-9 max|beta|`.
pub fn support_of(beta: &[f64]) -> Vec<usize> {
    let max = beta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * max;
    beta.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > tol)
        .map(|(i, _)| i)
        .collect()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl LassoOrthogonal {
    pub fn new(model: FamilyModel, design: DesignMatrix, lambda: f64) -> Result<Self> {
        design.validate_dim(model.dim())?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::domain(format!("lambda must be >= 0, got {lambda}")));
        }
        if !matches!(
            model.kind(),
            FamilyKind::Gaussian | FamilyKind::Gamma | FamilyKind::Poisson
        ) {
            return Err(Error::UnsupportedFamily {
                family: model.kind().name(),
                op: "lasso likelihood",
            });
        }
        Ok(LassoOrthogonal {
            model,
            design,
            lambda,
            max_iters: 5000,
            rel_tol: 1e-10,
            warm_start: None,
        })
    }

    pub fn with_warm_start(mut self, beta: Vec<f64>) -> Self {
        self.warm_start = Some(beta);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn design(&self) -> DesignMatrix {
        self.design
    }

    pub fn model(&self) -> &FamilyModel {
        &self.model
    }

    /// Negative log-likelihood of `mu` (up to terms free of `mu`);
    /// infinite outside the mean domain.
    fn nll(&self, mu: &[f64], y: &[f64]) -> f64 {
        let terms: Vec<f64> = match self.model.kind() {
            FamilyKind::Gaussian => {
                let s2 = self.model.sigma().unwrap().powi(2);
                mu.iter().zip(y).map(|(m, v)| (v - m) * (v - m) / (2.0 * s2)).collect()
            }
            FamilyKind::Gamma => {
                let l = self.model.gamma_shape().unwrap();
                mu.iter()
                    .zip(y)
                    .map(|(m, v)| if *m > 0.0 { l * (m.ln() + v / m) } else { f64::INFINITY })
                    .collect()
            }
            FamilyKind::Poisson => mu
                .iter()
                .zip(y)
                .map(|(m, v)| {
                    if *m > 0.0 {
                        m - v * m.ln()
                    } else if *v == 0.0 && *m == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                })
                .collect(),
            _ => unreachable!(),
        };
        pairwise_sum(&terms)
    }

    fn nll_grad_mu(&self, mu: &[f64], y: &[f64]) -> Vec<f64> {
        match self.model.kind() {
            FamilyKind::Gaussian => {
                let s2 = self.model.sigma().unwrap().powi(2);
                mu.iter().zip(y).map(|(m, v)| (m - v) / s2).collect()
            }
            FamilyKind::Gamma => {
                let l = self.model.gamma_shape().unwrap();
                mu.iter().zip(y).map(|(m, v)| l * (m - v) / (m * m)).collect()
            }
            FamilyKind::Poisson => mu.iter().zip(y).map(|(m, v)| 1.0 - v / m).collect(),
            _ => unreachable!(),
        }
    }

    fn objective(&self, beta: &[f64], y: &[f64]) -> f64 {
        let mu = self.design.apply(beta);
        self.nll(&mu, y) + self.lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Solves the penalized problem at this `lambda`.
    pub fn solve(&self, y: &[f64]) -> Result<LassoFit> {
        if y.len() != self.model.dim() {
            return Err(Error::domain("observation length does not match design"));
        }
        // Gaussian likelihood over an orthonormal design decouples into the
        // entrywise soft threshold of X^T y at level lambda sigma^2.
        if matches!(self.model.kind(), FamilyKind::Gaussian) {
            let s2 = self.model.sigma().unwrap().powi(2);
            let xty = self.design.apply(y);
            let beta: Vec<f64> = xty
                .iter()
                .map(|v| soft_threshold(*v, self.lambda * s2))
                .collect();
            let objective = self.objective(&beta, y);
            return Ok(LassoFit { beta, iterations: 0, objective });
        }

        let mut beta = match &self.warm_start {
            Some(b) if b.len() == y.len() && self.objective(b, y).is_finite() => b.clone(),
            _ => self.design.apply(y),
        };
        let mut obj = self.objective(&beta, y);
        if !obj.is_finite() {
            return Err(Error::domain("infeasible starting point for lasso solve"));
        }
        let mut step = 1.0;
        for iter in 1..=self.max_iters {
            let mu = self.design.apply(&beta);
            let grad = self.design.apply(&self.nll_grad_mu(&mu, y));
            let smooth = self.nll(&mu, y);
            // backtracking on the proximal-gradient sufficient decrease
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = beta
                    .iter()
                    .zip(&grad)
                    .map(|(b, g)| soft_threshold(b - step * g, step * self.lambda))
                    .collect();
                let mu_c = self.design.apply(&cand);
                let smooth_c = self.nll(&mu_c, y);
                if smooth_c.is_finite() {
                    let dotg: f64 = cand
                        .iter()
                        .zip(&beta)
                        .zip(&grad)
                        .map(|((c, b), g)| (c - b) * g)
                        .sum();
                    let dist: f64 = cand
                        .iter()
                        .zip(&beta)
                        .map(|(c, b)| (c - b) * (c - b))
                        .sum();
                    if smooth_c <= smooth + dotg + dist / (2.0 * step) + 1e-12 {
                        beta = cand;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence(
                    "lasso line search failed to find a feasible step".into(),
                ));
            }
            let new_obj = self.objective(&beta, y);
            let rel = (obj - new_obj).abs() / obj.abs().max(1.0);
            obj = new_obj;
            if rel < self.rel_tol {
                return Ok(LassoFit { beta, iterations: iter, objective: obj });
            }
            step *= 1.5;
        }
        Err(Error::NonConvergence(format!(
            "lasso did not reach tolerance in {} iterations",
            self.max_iters
        )))
    }

    /// Indices of the nonzero coefficients at this `lambda`.
    pub fn support(&self, y: &[f64]) -> Result<Vec<usize>> {
        Ok(support_of(&self.solve(y)?.beta))
    }

    /// Grid upper bound for regularization paths: the largest penalized
    /// coordinate of the likelihood gradient at the null model. The null
    /// model is `beta = 0` for the Gaussian and the constant-mean fit
    /// `mu = mean(y)` for positive families (where `beta = 0` is
    /// infeasible); the constant coordinate of the Hadamard basis is
    /// excluded since it never vanishes.
    pub fn lambda_max(model: &FamilyModel, design: DesignMatrix, y: &[f64]) -> Result<f64> {
        design.validate_dim(y.len())?;
        let probe = LassoOrthogonal::new(model.clone(), design, 0.0)?;
        let mu0: Vec<f64> = if matches!(model.kind(), FamilyKind::Gaussian) {
            vec![0.0; y.len()]
        } else {
            let m = crate::sums::mean(y);
            if !(m > 0.0) {
                return Err(Error::domain("lambda_max needs mean(y) > 0"));
            }
            vec![m; y.len()]
        };
        let grad = design.apply(&probe.nll_grad_mu(&mu0, y));
        let skip_dc = matches!(design, DesignMatrix::Hadamard);
        let max = grad
            .iter()
            .enumerate()
            .filter(|(i, _)| !(skip_dc && *i == 0))
            .fold(0.0f64, |a, (_, g)| a.max(g.abs()));
        Ok(max)
    }
}

impl MeanPredictor for LassoOrthogonal {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>> {
        let fit = self.solve(y)?;
        let mut mu = self.design.apply(&fit.beta);
        floor_in_place(&mut mu, mu_floor(&self.model, y));
        Ok(mu)
    }

    fn jvp(&self, req: &JvpRequest) -> Result<Vec<f64>> {
        let eval = |p: &[f64]| self.evaluate(p);
        fd_jvp(&eval, req, &|p| fd_domain_ok(&self.model, p))
    }

    fn describe(&self) -> &'static str {
        "lasso_orthogonal"
    }
}
