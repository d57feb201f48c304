//! Maximum likelihood parameter generation: smooths per-frame predicted
//! [static, delta, delta-delta] distributions into the most likely static
//! trajectory by solving the banded normal equations W' P W c = W' P mu per
//! dimension (bandwidth 2, symmetric positive definite).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::features::{DELTA_DELTA_WINDOW, DELTA_WINDOW};

/// Per-frame predicted means and diagonal variances over a `[static, d, dd]`
/// block (T x 3D each). A variance of `f64::INFINITY` denotes precision 0.
#[derive(Debug, Clone)]
pub struct GenerationProblem {
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
}

impl GenerationProblem {
    pub fn static_dim(&self) -> usize {
        self.means.ncols() / 3
    }

    fn validate(&self) -> Result<()> {
        if self.means.dim() != self.variances.dim() {
            return Err(Error::DimensionMismatch(
                "means and variances must have the same shape".into(),
            ));
        }
        if self.means.nrows() == 0 || self.means.ncols() == 0 || self.means.ncols() % 3 != 0 {
            return Err(Error::InvalidArgument(
                "generation problem needs T >= 1 and a 3D-wide feature block".into(),
            ));
        }
        if self.variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "variances must be strictly positive (use INFINITY for precision 0)".into(),
            ));
        }
        Ok(())
    }
}

/// Window taps for the three stream rows, offsets relative to the frame.
/// Out-of-range taps are clamped to the edge frames (edge replication,
/// identical to `compute_dynamics`).
fn window_rows() -> [Vec<(isize, f64)>; 3] {
    [
        vec![(0, 1.0)],
        DELTA_WINDOW
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as isize - 1, c))
            .collect(),
        DELTA_DELTA_WINDOW
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as isize - 1, c))
            .collect(),
    ]
}

/// Symmetric banded matrix stored by diagonals: `band[k][i] = A[i][i+k]`.
struct Banded {
    n: usize,
    bands: [Vec<f64>; 3],
}

impl Banded {
    fn zeros(n: usize) -> Banded {
        Banded {
            n,
            bands: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = (i.min(j), i.max(j));
        debug_assert!(hi - lo <= 2);
        self.bands[hi - lo][lo] += v;
    }

    /// In-place Cholesky factorization A = L L' preserving the bandwidth,
    /// then forward/back substitution.
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut l = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in 0..n {
            let start = i.saturating_sub(2);
            for j in start..=i {
                // sum over k < j within the band
                let kmin = j.saturating_sub(2).max(i.saturating_sub(2));
                let mut sum = 0.0;
                for k in kmin..j {
                    sum += l[i - k][k] * l[j - k][k];
                }
                let a = self.bands[i - j][j];
                if i == j {
                    let d = a - sum;
                    if d <= 0.0 {
                        return Err(Error::NumericalFailure(format!(
                            "banded system is not positive definite at row {i}"
                        )));
                    }
                    l[0][i] = d.sqrt();
                } else {
                    l[i - j][j] = (a - sum) / l[0][j];
                }
            }
        }
        // L y = rhs
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = rhs[i];
            for k in i.saturating_sub(2)..i {
                sum -= l[i - k][k] * y[k];
            }
            y[i] = sum / l[0][i];
        }
        // L' x = y
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for j in i + 1..n.min(i + 3) {
                sum -= l[j - i][i] * x[j];
            }
            x[i] = sum / l[0][i];
        }
        Ok(x)
    }
}

/// Solves the MLPG trajectory for every static dimension independently.
pub fn mlpg_solve(problem: &GenerationProblem) -> Result<Array2<f64>> {
    problem.validate()?;
    let t_len = problem.means.nrows();
    let dim = problem.static_dim();
    let rows = window_rows();
    let mut out = Array2::zeros((t_len, dim));

    for d in 0..dim {
        let mut a = Banded::zeros(t_len);
        let mut rhs = vec![0.0; t_len];
        for (s_idx, taps) in rows.iter().enumerate() {
            let col = s_idx * dim + d;
            for t in 0..t_len {
                let var = problem.variances[[t, col]];
                let prec = if var.is_finite() { 1.0 / var } else { 0.0 };
                if prec == 0.0 {
                    continue;
                }
                let mu = problem.means[[t, col]];
                // Accumulate clamped window coefficients for this row.
                let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(3);
                for &(off, c) in taps {
                    let u = (t as isize + off).clamp(0, t_len as isize - 1) as usize;
                    match coeffs.iter_mut().find(|(idx, _)| *idx == u) {
                        Some((_, acc)) => *acc += c,
                        None => coeffs.push((u, c)),
                    }
                }
                for &(i, ci) in &coeffs {
                    if ci == 0.0 {
                        continue;
                    }
                    rhs[i] += ci * prec * mu;
                    for &(j, cj) in &coeffs {
                        if j >= i && cj != 0.0 {
                            a.add(i, j, ci * prec * cj);
                        }
                    }
                }
            }
        }
        let solution = a.solve(&rhs)?;
        for t in 0..t_len {
            out[[t, d]] = solution[t];
        }
    }
    Ok(out)
}

/// The weighted least-squares objective MLPG minimizes; exposed for tests.
pub fn mlpg_objective(problem: &GenerationProblem, trajectory: &Array2<f64>) -> f64 {
    let dim = problem.static_dim();
    let dyn_feats = crate::features::compute_dynamics(trajectory);
    let mut obj = 0.0;
    for t in 0..problem.means.nrows() {
        for col in 0..3 * dim {
            let var = problem.variances[[t, col]];
            let prec = if var.is_finite() { 1.0 / var } else { 0.0 };
            let r = dyn_feats[[t, col]] - problem.means[[t, col]];
            obj += prec * r * r;
        }
    }
    obj
}

/// Builds a dense version of the stacked window matrix W (3T x T) with the
/// same edge replication as the banded path; used by oracle tests and kept
/// independent of `mlpg_solve`.
pub fn dense_window_matrix(t_len: usize) -> Array2<f64> {
    let rows = window_rows();
    let mut w = Array2::zeros((3 * t_len, t_len));
    for (s_idx, taps) in rows.iter().enumerate() {
        for t in 0..t_len {
            for &(off, c) in taps {
                let u = (t as isize + off).clamp(0, t_len as isize - 1) as usize;
                w[[s_idx * t_len + t, u]] += c;
            }
        }
    }
    w
}
