//! Non-local means with noise-adapted patch dissimilarities.

use crate::error::{Error, Result};
use crate::expfam::{FamilyKind, FamilyModel};
use crate::predictors::{fd_domain_ok, fd_jvp, floor_in_place, mu_floor, GridShape, JvpRequest, MeanPredictor};

/// `mu_hat(y)_i = sum_j W_ij(y) y_j` with `W_ij(y) = exp(-d(P_i y, P_j y) / tau)`,
/// where `P_i` extracts a square patch around pixel `i` and `d` is a patch
/// dissimilarity adapted to the noise family:
///
/// - Gaussian: squared Euclidean distance scaled by `1 / (2 sigma^2)`,
/// - Gamma: `sum log((a + b)^2 / (4 a b))`,
/// - Poisson: `sum [a log a + b log b - (a + b) log((a + b) / 2)]`
///   with `0 log 0 = 0`.
///
/// Rows are normalized to sum to one by default; the raw displayed form
/// (no normalization) stays available behind [`NonLocalMeans::normalized`].
/// Boundaries are periodic.
#[derive(Debug, Clone)]
pub struct NonLocalMeans {
    model: FamilyModel,
    shape: GridShape,
    tau: f64,
    patch_radius: usize,
    search_radius: usize,
    pub normalized: bool,
}

impl NonLocalMeans {
    /// Default geometry: 5x5 patches compared over an 11x11 search window.
    pub fn new(model: FamilyModel, shape: GridShape, tau: f64) -> Result<Self> {
        Self::with_windows(model, shape, tau, 2, 5, true)
    }

    pub fn with_windows(
        model: FamilyModel,
        shape: GridShape,
        tau: f64,
        patch_radius: usize,
        search_radius: usize,
        normalized: bool,
    ) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!("bandwidth tau must be > 0, got {tau}")));
        }
        if model.dim() != shape.len() {
            return Err(Error::domain("model dimension does not match grid shape"));
        }
        if !matches!(
            model.kind(),
            FamilyKind::Gaussian | FamilyKind::Gamma | FamilyKind::Poisson
        ) {
            return Err(Error::UnsupportedFamily {
                family: model.kind().name(),
                op: "non-local means dissimilarity",
            });
        }
        let min_dim = shape.height.min(shape.width);
        if 2 * patch_radius + 1 > min_dim || 2 * search_radius + 1 > min_dim {
            return Err(Error::domain(
                "patch and search windows must fit inside the grid",
            ));
        }
        Ok(NonLocalMeans { model, shape, tau, patch_radius, search_radius, normalized })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    fn point_dissim(&self, a: f64, b: f64) -> f64 {
        match self.model.kind() {
            FamilyKind::Gaussian => {
                let s = self.model.sigma().unwrap();
                (a - b) * (a - b) / (2.0 * s * s)
            }
            FamilyKind::Gamma => {
                if a <= 0.0 || b <= 0.0 {
                    return f64::INFINITY;
                }
                let s = a + b;
                (s * s / (4.0 * a * b)).ln()
            }
            FamilyKind::Poisson => {
                let xlx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
                let s = a + b;
                xlx(a) + xlx(b) - if s > 0.0 { s * (s / 2.0).ln() } else { 0.0 }
            }
            _ => unreachable!("constructor rejects other families"),
        }
    }

    fn check_input(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.shape.len() {
            return Err(Error::domain(format!(
                "non-local means expects {} entries, got {}",
                self.shape.len(),
                y.len()
            )));
        }
        for (i, &v) in y.iter().enumerate() {
            let ok = match self.model.kind() {
                FamilyKind::Gaussian => v.is_finite(),
                FamilyKind::Gamma => v > 0.0,
                _ => v >= 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::domain(format!("y[{i}] = {v} invalid for NLM input")));
            }
        }
        Ok(())
    }

    /// Raw (unnormalized) weights of row `i` over its search window,
    /// as `(flat_index, weight)` pairs.
    pub fn weight_row(&self, y: &[f64], i: usize) -> Result<Vec<(usize, f64)>> {
        self.check_input(y)?;
        let (h, w) = (self.shape.height, self.shape.width);
        let (r0, c0) = (i / w, i % w);
        let p = self.patch_radius as isize;
        let s = self.search_radius as isize;
        let mut out = Vec::new();
        for dr in -s..=s {
            for dc in -s..=s {
                let r1 = (r0 as isize + dr).rem_euclid(h as isize) as usize;
                let c1 = (c0 as isize + dc).rem_euclid(w as isize) as usize;
                let mut dist = 0.0;
                for pr in -p..=p {
                    for pc in -p..=p {
                        let ar = (r0 as isize + pr).rem_euclid(h as isize) as usize;
                        let ac = (c0 as isize + pc).rem_euclid(w as isize) as usize;
                        let br = (r1 as isize + pr).rem_euclid(h as isize) as usize;
                        let bc = (c1 as isize + pc).rem_euclid(w as isize) as usize;
                        dist += self.point_dissim(y[ar * w + ac], y[br * w + bc]);
                    }
                }
                out.push((r1 * w + c1, (-dist / self.tau).exp()));
            }
        }
        Ok(out)
    }
}

/// Circular moving-window sums of length `2r + 1` along one axis.
fn window_sum_axis(input: &[f64], out: &mut [f64], lines: usize, len: usize, stride: usize, line_stride: usize, r: usize) {
    for line in 0..lines {
        let base = line * line_stride;
        let at = |i: usize| input[base + (i % len) * stride];
        // start with the window [-r, r] around index 0
        let mut acc = 0.0;
        for k in 0..(2 * r + 1) {
            acc += at(len - r + k);
        }
        for i in 0..len {
            out[base + i * stride] = acc;
            acc -= at(len + i - r);
            acc += at(i + r + 1);
        }
    }
}

impl MeanPredictor for NonLocalMeans {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_input(y)?;
        let (h, w) = (self.shape.height, self.shape.width);
        let d = h * w;
        let s = self.search_radius as isize;
        let mut num = vec![0.0; d];
        let mut den = vec![0.0; d];
        let mut point = vec![0.0; d];
        let mut rows = vec![0.0; d];
        let mut dist = vec![0.0; d];
        for dr in -s..=s {
            for dc in -s..=s {
                // y shifted by (dr, dc) with periodic wrap, compared pointwise
                let shift_index = |r: usize, c: usize| {
                    let r1 = (r as isize + dr).rem_euclid(h as isize) as usize;
                    let c1 = (c as isize + dc).rem_euclid(w as isize) as usize;
                    r1 * w + c1
                };
                for r in 0..h {
                    for c in 0..w {
                        let i = r * w + c;
                        point[i] = self.point_dissim(y[i], y[shift_index(r, c)]);
                    }
                }
                // patch dissimilarity = box sum of pointwise dissimilarities
                window_sum_axis(&point, &mut rows, h, w, 1, w, self.patch_radius);
                window_sum_axis(&rows, &mut dist, w, h, w, 1, self.patch_radius);
                for r in 0..h {
                    for c in 0..w {
                        let i = r * w + c;
                        let weight = (-dist[i] / self.tau).exp();
                        num[i] += weight * y[shift_index(r, c)];
                        den[i] += weight;
                    }
                }
            }
        }
        let mut out: Vec<f64> = if self.normalized {
            num.iter().zip(&den).map(|(n, d)| n / d).collect()
        } else {
            num
        };
        floor_in_place(&mut out, mu_floor(&self.model, y));
        Ok(out)
    }

    fn jvp(&self, req: &JvpRequest) -> Result<Vec<f64>> {
        let eval = |p: &[f64]| self.evaluate(p);
        fd_jvp(&eval, req, &|p| fd_domain_ok(&self.model, p))
    }

    fn describe(&self) -> &'static str {
        "nonlocal_means"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chirp_8x8() -> Vec<f64> {
        let shape = GridShape::new(8, 8).unwrap();
        let mut y = Vec::with_capacity(64);
        for r in 0..8 {
            for c in 0..8 {
                let x = c as f64 / 7.0;
                let v = r as f64 / 7.0;
                let rho = (x * x + v * v) / 2.0;
                y.push(4.0 + 2.0 * (8.0 * rho * rho).cos());
            }
        }
        let _ = shape;
        y
    }

    fn nlm_gamma_8x8(tau: f64) -> NonLocalMeans {
        let model = FamilyModel::gamma(64, 3.0).unwrap();
        let shape = GridShape::new(8, 8).unwrap();
        NonLocalMeans::with_windows(model, shape, tau, 1, 3, true).unwrap()
    }

    #[test]
    fn self_weight_is_maximal_and_weights_in_unit_interval() {
        let nlm = nlm_gamma_8x8(0.8);
        let y = chirp_8x8();
        for i in [0usize, 17, 63] {
            let row = nlm.weight_row(&y, i).unwrap();
            let self_w = row.iter().find(|(j, _)| *j == i).unwrap().1;
            for &(j, wgt) in &row {
                assert!(wgt > 0.0 && wgt <= 1.0, "w[{i},{j}] = {wgt}");
                assert!(wgt <= self_w + 1e-15);
            }
            assert!((self_w - 1.0).abs() < 1e-12, "self dissimilarity is zero");
        }
    }

    #[test]
    fn evaluate_matches_direct_weight_row_computation() {
        let nlm = nlm_gamma_8x8(0.7);
        let y = chirp_8x8();
        let out = nlm.evaluate(&y).unwrap();
        for i in [3usize, 36] {
            let row = nlm.weight_row(&y, i).unwrap();
            let den: f64 = row.iter().map(|(_, w)| w).sum();
            let num: f64 = row.iter().map(|(j, w)| w * y[*j]).sum();
            assert!((out[i] - num / den).abs() < 1e-10, "pixel {i}");
        }
    }

    #[test]
    fn jvp_matches_dense_finite_difference_jacobian() {
        let nlm = nlm_gamma_8x8(0.9);
        let y = chirp_8x8();
        let dir: Vec<f64> = (0..64).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();

        let jv = nlm.jvp(&JvpRequest::new(&y, &dir)).unwrap();

        // Dense Jacobian action by 64 forward differences.
        let f0 = nlm.evaluate(&y).unwrap();
        let eps = 1e-6;
        let mut dense = vec![0.0; 64];
        for j in 0..64 {
            let mut yp = y.clone();
            yp[j] += eps;
            let fj = nlm.evaluate(&yp).unwrap();
            for i in 0..64 {
                dense[i] += (fj[i] - f0[i]) / eps * dir[j];
            }
        }
        let num: f64 = jv.iter().zip(&dense).map(|(a, b)| (a - b) * (a - b)).sum();
        let den: f64 = dense.iter().map(|b| b * b).sum();
        let rel = (num / den).sqrt();
        assert!(rel < 1e-4, "relative L2 error {rel}");
    }

    #[test]
    fn poisson_dissimilarity_handles_zero_counts() {
        let model = FamilyModel::poisson(64).unwrap();
        let shape = GridShape::new(8, 8).unwrap();
        let nlm = NonLocalMeans::with_windows(model, shape, 1.0, 1, 2, true).unwrap();
        let mut y = vec![0.0; 64];
        y[10] = 3.0;
        y[40] = 1.0;
        let out = nlm.evaluate(&y).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unnormalized_mode_differs() {
        let model = FamilyModel::gamma(64, 3.0).unwrap();
        let shape = GridShape::new(8, 8).unwrap();
        let a = NonLocalMeans::with_windows(model.clone(), shape, 0.7, 1, 2, true).unwrap();
        let b = NonLocalMeans::with_windows(model, shape, 0.7, 1, 2, false).unwrap();
        let y = chirp_8x8();
        let oa = a.evaluate(&y).unwrap();
        let ob = b.evaluate(&y).unwrap();
        assert!(oa.iter().zip(&ob).any(|(x, z)| (x - z).abs() > 1e-9));
    }
}
