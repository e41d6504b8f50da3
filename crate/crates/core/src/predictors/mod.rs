//! Predictors `y -> mu_hat(y)` with Jacobian-vector products and, where
//! cheap, exact downshift evaluation `mu_hat_i(y - e_i)`.
//!
//! The concrete predictors are a circulant Gaussian filter, non-local means
//! with family-adapted patch dissimilarities, and an orthogonal-design LASSO,
//! plus the trivial identity and constant-mean maps. All predictors are
//! immutable and their operations pure, so they can be evaluated from many
//! threads at once.

mod lasso;
mod linear;
mod nlm;

pub use lasso::{DesignMatrix, LassoFit, LassoOrthogonal};
pub use linear::LinearFilter;
pub use nlm::NonLocalMeans;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{FamilyModel, NaturalPoint};

/// Rectangular image geometry; vectors are stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("grid shape must be positive"));
        }
        Ok(GridShape { height, width })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

/// A directional-derivative request for finite differencing.
#[derive(Debug, Clone, Copy)]
pub struct JvpRequest<'a> {
    pub y: &'a [f64],
    pub direction: &'a [f64],
    /// Absolute step; `None` applies `1e-4 (1 + |y|_inf) / |dir|_inf`.
    pub epsilon: Option<f64>,
}

impl<'a> JvpRequest<'a> {
    pub fn new(y: &'a [f64], direction: &'a [f64]) -> Self {
        JvpRequest { y, direction, epsilon: None }
    }

    pub fn with_epsilon(y: &'a [f64], direction: &'a [f64], epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::domain("finite-difference epsilon must be > 0"));
        }
        Ok(JvpRequest { y, direction, epsilon: Some(epsilon) })
    }

    fn step(&self) -> f64 {
        match self.epsilon {
            Some(e) => e,
            None => {
                let y_inf = self.y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let d_inf = self.direction.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if d_inf == 0.0 {
                    0.0
                } else {
                    1e-4 * (1.0 + y_inf) / d_inf
                }
            }
        }
    }
}

/// Jacobian diagonal of an affine predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum AffineDiag {
    /// Every diagonal entry equals the same weight (circulant filters).
    Uniform(f64),
    PerIndex(Vec<f64>),
}

impl AffineDiag {
    pub fn entry(&self, i: usize) -> f64 {
        match self {
            AffineDiag::Uniform(w) => *w,
            AffineDiag::PerIndex(v) => v[i],
        }
    }

    pub fn materialize(&self, dim: usize) -> Vec<f64> {
        match self {
            AffineDiag::Uniform(w) => vec![*w; dim],
            AffineDiag::PerIndex(v) => v.clone(),
        }
    }

    /// `sum_i g_i diag_i`, or the plain trace when `g` is `None`.
    pub fn weighted_trace(&self, dim: usize, g: Option<&[f64]>) -> f64 {
        match (self, g) {
            (AffineDiag::Uniform(w), None) => w * dim as f64,
            (AffineDiag::Uniform(w), Some(g)) => w * crate::sums::pairwise_sum(g),
            (AffineDiag::PerIndex(v), None) => crate::sums::pairwise_sum(v),
            (AffineDiag::PerIndex(v), Some(g)) => crate::sums::dot(v, g),
        }
    }
}

/// The operations risk estimators need from a predictor.
pub trait MeanPredictor {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>>;

    /// Directional derivative `[d mu_hat / d y] direction`.
    fn jvp(&self, req: &JvpRequest) -> Result<Vec<f64>>;

    /// Exact `mu_hat_i(y - e_i)`; the default re-evaluates at the shifted
    /// point.
    fn downshift_component(&self, y: &[f64], i: usize) -> Result<f64> {
        let mut shifted = y.to_vec();
        shifted[i] -= 1.0;
        let out = self.evaluate(&shifted)?;
        Ok(out[i])
    }

    /// Jacobian diagonal when the predictor is affine; enables exact traces
    /// and exact downshifts.
    fn affine_diag(&self, _dim: usize) -> Option<AffineDiag> {
        None
    }

    fn describe(&self) -> &'static str {
        "custom"
    }
}

/// The predictor families shipped with the crate.
#[derive(Debug, Clone)]
pub enum Predictor {
    Identity,
    ConstantMean,
    LinearFilter(LinearFilter),
    NonLocalMeans(NonLocalMeans),
    LassoOrthogonal(LassoOrthogonal),
}

impl MeanPredictor for Predictor {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            Predictor::Identity => Ok(y.to_vec()),
            Predictor::ConstantMean => {
                let m = crate::sums::mean(y);
                Ok(vec![m; y.len()])
            }
            Predictor::LinearFilter(f) => f.evaluate(y),
            Predictor::NonLocalMeans(f) => f.evaluate(y),
            Predictor::LassoOrthogonal(f) => f.evaluate(y),
        }
    }

    fn jvp(&self, req: &JvpRequest) -> Result<Vec<f64>> {
        match self {
            // Linear maps short-circuit finite differences.
            Predictor::Identity => Ok(req.direction.to_vec()),
            Predictor::ConstantMean => {
                let m = crate::sums::mean(req.direction);
                Ok(vec![m; req.direction.len()])
            }
            Predictor::LinearFilter(f) => f.evaluate(req.direction),
            Predictor::NonLocalMeans(f) => f.jvp(req),
            Predictor::LassoOrthogonal(f) => f.jvp(req),
        }
    }

    fn downshift_component(&self, y: &[f64], i: usize) -> Result<f64> {
        match self {
            Predictor::Identity => Ok(y[i] - 1.0),
            Predictor::ConstantMean => {
                Ok((crate::sums::pairwise_sum(y) - 1.0) / y.len() as f64)
            }
            Predictor::LinearFilter(f) => f.downshift_component(y, i),
            Predictor::NonLocalMeans(f) => f.downshift_component(y, i),
            Predictor::LassoOrthogonal(f) => f.downshift_component(y, i),
        }
    }

    fn affine_diag(&self, dim: usize) -> Option<AffineDiag> {
        match self {
            Predictor::Identity => Some(AffineDiag::Uniform(1.0)),
            Predictor::ConstantMean => Some(AffineDiag::Uniform(1.0 / dim as f64)),
            Predictor::LinearFilter(f) => f.affine_diag(dim),
            Predictor::NonLocalMeans(_) | Predictor::LassoOrthogonal(_) => None,
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            Predictor::Identity => "identity",
            Predictor::ConstantMean => "constant_mean",
            Predictor::LinearFilter(_) => "linear_filter",
            Predictor::NonLocalMeans(_) => "nonlocal_means",
            Predictor::LassoOrthogonal(_) => "lasso_orthogonal",
        }
    }
}

/// Floor applied to predictor outputs feeding logs and inversions:
/// `1e-8 mean(y)` for positive-mean families, `None` for the Gaussian.
pub fn mu_floor(model: &FamilyModel, y: &[f64]) -> Option<f64> {
    if !model.positive_mean_domain() {
        return None;
    }
    let m = crate::sums::mean(y);
    Some(if m > 0.0 { 1e-8 * m } else { 1e-300 })
}

/// Raises entries below `floor`, returning how many were raised.
pub fn floor_in_place(values: &mut [f64], floor: Option<f64>) -> u64 {
    let Some(floor) = floor else { return 0 };
    let mut events = 0;
    for v in values.iter_mut() {
        if *v < floor {
            *v = floor;
            events += 1;
        }
    }
    events
}

/// Predictor output mapped to the natural parametrization.
pub struct NaturalEvaluation {
    pub theta_hat: NaturalPoint,
    /// Mean prediction after flooring, consistent with `theta_hat`.
    pub mu_hat: Vec<f64>,
    pub floor_events: u64,
}

/// `theta_hat(y) = phi(mu_hat(y))`, with positive-domain outputs floored
/// first so the link stays finite.
pub fn natural_evaluate<P: MeanPredictor + ?Sized>(
    p: &P,
    model: &FamilyModel,
    y: &[f64],
) -> Result<NaturalEvaluation> {
    let mut mu_hat = p.evaluate(y)?;
    let floor_events = floor_in_place(&mut mu_hat, mu_floor(model, y));
    let theta_hat = model.link(&mu_hat)?;
    Ok(NaturalEvaluation { theta_hat, mu_hat, floor_events })
}

/// Chain rule for the natural parametrization:
/// `[d theta_hat / d y] dir = diag(phi'(mu_hat)) [d mu_hat / d y] dir`.
pub fn natural_jvp<P: MeanPredictor + ?Sized>(
    p: &P,
    model: &FamilyModel,
    req: &JvpRequest,
) -> Result<Vec<f64>> {
    let nat = natural_evaluate(p, model, req.y)?;
    let phi_prime = model.link_derivative(&nat.mu_hat)?;
    let jv = p.jvp(req)?;
    Ok(jv.iter().zip(&phi_prime).map(|(j, d)| j * d).collect())
}

/// Central finite difference of `eval` along `req.direction`, shrinking the
/// step (up to 10 halvings) while a perturbed point leaves `domain_ok`. Falls
/// back to a one-sided difference when only one side is admissible.
pub(crate) fn fd_jvp(
    eval: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    req: &JvpRequest,
    domain_ok: &dyn Fn(&[f64]) -> bool,
) -> Result<Vec<f64>> {
    let mut eps = req.step();
    if eps == 0.0 {
        return Ok(vec![0.0; req.y.len()]);
    }
    let shift = |eps: f64, sign: f64| -> Vec<f64> {
        req.y
            .iter()
            .zip(req.direction)
            .map(|(y, d)| y + sign * eps * d)
            .collect()
    };
    for _ in 0..=10 {
        let plus = shift(eps, 1.0);
        let minus = shift(eps, -1.0);
        let plus_ok = domain_ok(&plus);
        let minus_ok = domain_ok(&minus);
        if plus_ok && minus_ok {
            let fp = eval(&plus)?;
            let fm = eval(&minus)?;
            return Ok(fp
                .iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * eps))
                .collect());
        }
        if plus_ok || minus_ok {
            let f0 = eval(req.y)?;
            let (side, sign) = if plus_ok { (plus, 1.0) } else { (minus, -1.0) };
            let fs = eval(&side)?;
            return Ok(fs
                .iter()
                .zip(&f0)
                .map(|(a, b)| sign * (a - b) / eps)
                .collect());
        }
        eps *= 0.5;
    }
    Err(Error::domain(
        "finite-difference step left the family domain after 10 halvings",
    ))
}

/// Admissible region for finite-difference perturbations: the closure of the
/// observation domain with integrality relaxed for discrete families.
pub(crate) fn fd_domain_ok(model: &FamilyModel, y: &[f64]) -> bool {
    use crate::expfam::FamilyKind::*;
    y.iter().all(|&v| {
        v.is_finite()
            && match model.kind() {
                Gaussian => true,
                Gamma => v > 0.0,
                Poisson | Binomial | NegBinomial => v >= 0.0,
            }
    })
}
