//! Circulant Gaussian smoothing filter on a periodic grid.

use crate::error::{Error, Result};
use crate::predictors::{AffineDiag, GridShape, JvpRequest, MeanPredictor};

/// `mu_hat(y) = W y` with `W_{ij} = exp(-|delta_i - delta_j|^2 / tau^2) / Z_i`,
/// a discrete circular convolution with a row-normalized Gaussian kernel of
/// bandwidth `tau`. The toroidal distance makes `W` circulant and symmetric,
/// so its diagonal is constant and `tr W = d * w0` is exact.
///
/// The kernel separates across axes, so evaluation costs
/// `O(d (height + width))`.
#[derive(Debug, Clone)]
pub struct LinearFilter {
    shape: GridShape,
    tau: f64,
    /// Normalized 1-D kernels indexed by circular offset.
    kernel_rows: Vec<f64>,
    kernel_cols: Vec<f64>,
}

fn axis_kernel(len: usize, tau: f64) -> Vec<f64> {
    let mut k: Vec<f64> = (0..len)
        .map(|off| {
            let dist = off.min(len - off) as f64;
            (-(dist * dist) / (tau * tau)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Circular correlation of each length-`len` line with a symmetric kernel.
fn convolve_axis(input: &[f64], out: &mut [f64], lines: usize, len: usize, stride: usize, line_stride: usize, kernel: &[f64]) {
    for line in 0..lines {
        let base = line * line_stride;
        for i in 0..len {
            let mut acc = 0.0;
            for (off, &w) in kernel.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let j = (i + off) % len;
                acc += w * input[base + j * stride];
            }
            out[base + i * stride] = acc;
        }
    }
}

impl LinearFilter {
    pub fn gaussian(shape: GridShape, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!("bandwidth tau must be > 0, got {tau}")));
        }
        Ok(LinearFilter {
            shape,
            tau,
            kernel_rows: axis_kernel(shape.width, tau),
            kernel_cols: axis_kernel(shape.height, tau),
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// The (constant) diagonal entry `W_{ii}`.
    pub fn weight_zero_offset(&self) -> f64 {
        self.kernel_rows[0] * self.kernel_cols[0]
    }

    /// Exact trace `d * w0`.
    pub fn trace(&self) -> f64 {
        self.shape.len() as f64 * self.weight_zero_offset()
    }

    /// Dense `W` for small grids (test oracles).
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let (h, w) = (self.shape.height, self.shape.width);
        let d = h * w;
        let mut m = vec![vec![0.0; d]; d];
        for r0 in 0..h {
            for c0 in 0..w {
                let i = self.shape.index(r0, c0);
                for r1 in 0..h {
                    for c1 in 0..w {
                        let j = self.shape.index(r1, c1);
                        let dr = (r0 as isize - r1 as isize).unsigned_abs();
                        let dc = (c0 as isize - c1 as isize).unsigned_abs();
                        m[i][j] = self.kernel_cols[dr.min(h - dr)] * self.kernel_rows[dc.min(w - dc)];
                    }
                }
            }
        }
        m
    }
}

impl MeanPredictor for LinearFilter {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.shape.len() {
            return Err(Error::domain(format!(
                "linear filter expects {} entries, got {}",
                self.shape.len(),
                y.len()
            )));
        }
        let (h, w) = (self.shape.height, self.shape.width);
        let mut tmp = vec![0.0; y.len()];
        let mut out = vec![0.0; y.len()];
        // along rows (width axis), then along columns (height axis)
        convolve_axis(y, &mut tmp, h, w, 1, w, &self.kernel_rows);
        convolve_axis(&tmp, &mut out, w, h, w, 1, &self.kernel_cols);
        Ok(out)
    }

    fn jvp(&self, req: &JvpRequest) -> Result<Vec<f64>> {
        // Exact: the map is linear.
        self.evaluate(req.direction)
    }

    fn downshift_component(&self, y: &[f64], i: usize) -> Result<f64> {
        let out = self.evaluate(y)?;
        Ok(out[i] - self.weight_zero_offset())
    }

    fn affine_diag(&self, _dim: usize) -> Option<AffineDiag> {
        Some(AffineDiag::Uniform(self.weight_zero_offset()))
    }

    fn describe(&self) -> &'static str {
        "linear_filter"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobian::{mc_trace, ProbePlan};

    fn shape(h: usize, w: usize) -> GridShape {
        GridShape::new(h, w).unwrap()
    }

    #[test]
    fn rows_sum_to_one() {
        let f = LinearFilter::gaussian(shape(4, 6), 1.3).unwrap();
        for row in f.matrix() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_bandwidth_is_identity() {
        let f = LinearFilter::gaussian(shape(3, 3), 1e-3).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let out = f.evaluate(&y).unwrap();
        for (a, b) in out.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((f.trace() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_dense_matrix() {
        let f = LinearFilter::gaussian(shape(4, 5), 1.7).unwrap();
        let y: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let out = f.evaluate(&y).unwrap();
        let m = f.matrix();
        for i in 0..20 {
            let direct: f64 = m[i].iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((out[i] - direct).abs() < 1e-12, "entry {i}");
        }
    }

    #[test]
    fn jvp_is_column_of_w_for_basis_direction() {
        let f = LinearFilter::gaussian(shape(3, 4), 1.1).unwrap();
        let m = f.matrix();
        let mut e3 = vec![0.0; 12];
        e3[3] = 1.0;
        let y = vec![0.0; 12];
        let jv = f.jvp(&JvpRequest::new(&y, &e3)).unwrap();
        for i in 0..12 {
            assert!((jv[i] - m[i][3]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_trace_matches_monte_carlo_estimate() {
        let f = LinearFilter::gaussian(shape(8, 8), 1.5).unwrap();
        let exact = f.trace();
        let plan = ProbePlan::gaussian(20_000, 21);
        let est = mc_trace(64, &plan, None, |z| f.evaluate(z)).unwrap();
        assert!(
            (est.value - exact).abs() <= 3.0 * est.stderr,
            "mc {} vs exact {exact} (se {})",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn downshift_uses_linearity() {
        let f = LinearFilter::gaussian(shape(4, 4), 1.5).unwrap();
        let y: Vec<f64> = (0..16).map(|i| (i % 5) as f64 + 1.0).collect();
        for i in [0usize, 5, 15] {
            let mut shifted = y.clone();
            shifted[i] -= 1.0;
            let direct = f.evaluate(&shifted).unwrap()[i];
            let fast = f.downshift_component(&y, i).unwrap();
            assert!((fast - direct).abs() < 1e-12);
        }
    }
}
