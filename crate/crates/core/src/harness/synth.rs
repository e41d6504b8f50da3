//! Synthetic test signals: shaded chirp textures, stripe textures and
//! sparse coefficient vectors.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expfam::FamilyModel;
use crate::predictors::{DesignMatrix, GridShape};
use crate::seeding::{derive_seed, Stream};

/// Shading axis of the chirp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Which end of the shading axis the texture fades into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadeTo {
    Dark,
    Bright,
}

#[derive(Debug, Clone, Copy)]
pub struct ChirpParams {
    pub mu_max: f64,
    /// Dynamic range: values live in `[mu_max (1 - contrast), mu_max]`.
    pub contrast: f64,
    /// Radial frequency count of the texture.
    pub cycles: f64,
    pub orientation: Orientation,
    pub shade_to: ShadeTo,
}

impl Default for ChirpParams {
    fn default() -> Self {
        ChirpParams {
            mu_max: 8.0,
            contrast: 0.85,
            cycles: 6.0,
            orientation: Orientation::Horizontal,
            shade_to: ShadeTo::Dark,
        }
    }
}

/// A two-dimensional chirp (radially increasing frequency) shaded gradually
/// into a homogeneous region along the chosen axis.
///
/// Strictly positive: values lie in `[mu_max (1 - contrast), mu_max]`, and
/// `contrast = 0` yields the constant image `mu_max`.
pub fn generate_chirp(shape: GridShape, params: &ChirpParams) -> Result<Vec<f64>> {
    if !(params.mu_max > 0.0) {
        return Err(Error::domain("chirp needs mu_max > 0"));
    }
    if !(0.0..1.0).contains(&params.contrast) {
        return Err(Error::domain("chirp contrast must lie in [0, 1)"));
    }
    if !(params.cycles >= 0.0) {
        return Err(Error::domain("chirp cycles must be >= 0"));
    }
    let (h, w) = (shape.height, shape.width);
    let mut out = Vec::with_capacity(shape.len());
    for r in 0..h {
        for c in 0..w {
            let x = if w > 1 { c as f64 / (w - 1) as f64 } else { 0.0 };
            let v = if h > 1 { r as f64 / (h - 1) as f64 } else { 0.0 };
            let u = match params.orientation {
                Orientation::Horizontal => x,
                Orientation::Vertical => v,
            };
            // radial chirp measured from the textured corner
            let rho_sq = (x * x + v * v) / 2.0;
            let s = (2.0 * std::f64::consts::PI * params.cycles * rho_sq).cos();
            let t = match params.shade_to {
                // texture at u = 0, homogeneous dark end at u = 1
                ShadeTo::Dark => u + (1.0 - u) * (1.0 - s) / 2.0,
                // texture at u = 0, homogeneous bright end at u = 1
                ShadeTo::Bright => (1.0 - u) * (1.0 - s) / 2.0,
            };
            out.push(params.mu_max * (1.0 - params.contrast * t));
        }
    }
    Ok(out)
}

/// Oriented sinusoidal stripe texture with values in `[mu_min, mu_max]`,
/// a high-frequency stand-in for ridge-like imagery.
pub fn generate_stripes(
    shape: GridShape,
    mu_min: f64,
    mu_max: f64,
    period: f64,
    angle_deg: f64,
) -> Result<Vec<f64>> {
    if !(mu_min > 0.0) || !(mu_max > mu_min) {
        return Err(Error::domain("stripes need 0 < mu_min < mu_max"));
    }
    if !(period > 0.0) {
        return Err(Error::domain("stripes need period > 0"));
    }
    let angle = angle_deg.to_radians();
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut out = Vec::with_capacity(shape.len());
    for r in 0..shape.height {
        for c in 0..shape.width {
            let proj = c as f64 * dx + r as f64 * dy;
            let v = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * proj / period).sin());
            out.push(mu_min + (mu_max - mu_min) * v);
        }
    }
    Ok(out)
}

/// A length-`q` coefficient vector with exactly `round(sparsity q)` nonzero
/// entries whose magnitudes lie in `[amplitude/2, amplitude]`.
pub fn generate_sparse_beta(
    q: usize,
    sparsity: f64,
    amplitude: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if q == 0 {
        return Err(Error::domain("beta length must be positive"));
    }
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::domain("sparsity must lie in (0, 1]"));
    }
    if !(amplitude > 0.0) {
        return Err(Error::domain("amplitude must be > 0"));
    }
    let k = ((sparsity * q as f64).round() as usize).clamp(1, q);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates for the support
    let mut idx: Vec<usize> = (0..q).collect();
    for i in 0..k {
        let j = i + rng.random_range(0..q - i);
        idx.swap(i, j);
    }
    let mut beta = vec![0.0; q];
    for &i in idx.iter().take(k) {
        let mag = amplitude * (0.5 + 0.5 * rng.random::<f64>());
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[i] = sign * mag;
    }
    Ok(beta)
}

/// A variable-selection problem instance under Gamma noise.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub model: FamilyModel,
    pub design: DesignMatrix,
    pub beta_true: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Sparse regression truth over the orthonormal Hadamard design whose first
/// column is constant: loading that coordinate with a positive baseline
/// keeps `mu = X beta` strictly positive (at least `mu_base`) while the
/// remaining support stays sparse with signed amplitudes.
pub fn build_gamma_lasso_problem(
    q: usize,
    gamma_shape: f64,
    sparsity: f64,
    amplitude: f64,
    mu_base: f64,
    seed: u64,
) -> Result<LassoProblem> {
    let design = DesignMatrix::Hadamard;
    design.validate_dim(q)?;
    if !(mu_base > 0.0) {
        return Err(Error::domain("mu_base must be > 0"));
    }
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::domain("sparsity must lie in (0, 1]"));
    }
    // The DC coordinate takes one slot of the support; the remaining k - 1
    // nonzeros are drawn over the other coordinates.
    let k = ((sparsity * q as f64).round() as usize).clamp(1, q);
    let mut beta = vec![0.0; q];
    if k > 1 {
        let tail_sparsity = (k - 1) as f64 / (q - 1) as f64;
        let tail = generate_sparse_beta(
            q - 1,
            tail_sparsity,
            amplitude,
            derive_seed(seed, Stream::Signal, 0),
        )?;
        beta[1..].copy_from_slice(&tail);
    }
    let rest = design.apply(&beta);
    let min_rest = rest.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    beta[0] = (q as f64).sqrt() * (mu_base - min_rest.min(0.0));
    let mu = design.apply(&beta);
    if mu.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Numerical("lasso problem produced non-positive means".into()));
    }
    let model = FamilyModel::gamma(q, gamma_shape)?;
    Ok(LassoProblem { model, design, beta_true: beta, mu })
}
