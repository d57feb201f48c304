//! Feature conditioning: input min-max normalization, acoustic mean-variance
//! normalization with restoration, delta / delta-delta dynamic features and
//! F0 interpolation with a voicing flag.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delta window: coefficients (-0.5, 0, 0.5).
pub const DELTA_WINDOW: [f64; 3] = [-0.5, 0.0, 0.5];
/// Delta-delta window: coefficients (1, -2, 1).
pub const DELTA_DELTA_WINDOW: [f64; 3] = [1.0, -2.0, 1.0];

/// Per-dimension min/max statistics for linguistic input scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxStats {
    pub fn fit(frames: &[Array2<f64>], lo: f64, hi: f64) -> Result<MinMaxStats> {
        let dim = frames
            .first()
            .filter(|f| f.nrows() > 0)
            .map(|f| f.ncols())
            .ok_or_else(|| Error::EmptyInput("min-max fit needs at least one frame".into()))?;
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for m in frames {
            for row in m.rows() {
                for (d, &v) in row.iter().enumerate() {
                    min[d] = min[d].min(v);
                    max[d] = max[d].max(v);
                }
            }
        }
        Ok(MinMaxStats { min, max, lo, hi })
    }

    /// Affine map to [lo, hi]; constant dimensions go to the midpoint. Values
    /// outside the fitted range map outside [lo, hi] (no clamping).
    pub fn apply(&self, frames: &Array2<f64>) -> Array2<f64> {
        let mut out = frames.clone();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                let span = self.max[d] - self.min[d];
                *v = if span == 0.0 {
                    0.5 * (self.lo + self.hi)
                } else {
                    self.lo + (self.hi - self.lo) * (*v - self.min[d]) / span
                };
            }
        }
        out
    }
}

/// Fits min-max statistics on `frames` and returns the normalized frames.
pub fn minmax_fit_apply(
    frames: &[Array2<f64>],
    lo: f64,
    hi: f64,
) -> Result<(Vec<Array2<f64>>, MinMaxStats)> {
    let stats = MinMaxStats::fit(frames, lo, hi)?;
    Ok((frames.iter().map(|f| stats.apply(f)).collect(), stats))
}

/// Per-dimension mean/standard-deviation statistics for acoustic targets.
/// Zero-variance dimensions are flagged and passed through unscaled (std 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanVarStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl MeanVarStats {
    pub fn fit(frames: &[Array2<f64>]) -> Result<MeanVarStats> {
        let dim = frames
            .first()
            .filter(|f| f.nrows() > 0)
            .map(|f| f.ncols())
            .ok_or_else(|| Error::EmptyInput("mean-var fit needs at least one frame".into()))?;
        let n: usize = frames.iter().map(|f| f.nrows()).sum();
        let mut mean = vec![0.0; dim];
        for m in frames {
            for row in m.rows() {
                for (d, &v) in row.iter().enumerate() {
                    mean[d] += v;
                }
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for m in frames {
            for row in m.rows() {
                for (d, &v) in row.iter().enumerate() {
                    var[d] += (v - mean[d]) * (v - mean[d]);
                }
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut constant = Vec::with_capacity(dim);
        for v in var {
            let s = (v / n as f64).sqrt();
            if s > 0.0 {
                std.push(s);
                constant.push(false);
            } else {
                std.push(1.0);
                constant.push(true);
            }
        }
        Ok(MeanVarStats {
            mean,
            std,
            constant,
        })
    }

    pub fn apply(&self, frames: &Array2<f64>) -> Array2<f64> {
        let mut out = frames.clone();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.std[d];
            }
        }
        out
    }

    pub fn restore(&self, frames: &Array2<f64>) -> Array2<f64> {
        let mut out = frames.clone();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[d] + self.mean[d];
            }
        }
        out
    }
}

/// Appends delta and delta-delta features: output is `[static, d, dd]`,
/// T x 3D, with edge replication at the sequence boundaries.
pub fn compute_dynamics(statics: &Array2<f64>) -> Array2<f64> {
    let (t_len, dim) = statics.dim();
    let mut out = Array2::zeros((t_len, 3 * dim));
    let clamp = |t: isize| t.clamp(0, t_len as isize - 1) as usize;
    for t in 0..t_len {
        let prev = statics.row(clamp(t as isize - 1));
        let cur = statics.row(t);
        let next = statics.row(clamp(t as isize + 1));
        for d in 0..dim {
            out[[t, d]] = cur[d];
            out[[t, dim + d]] = 0.5 * (next[d] - prev[d]);
            out[[t, 2 * dim + d]] = prev[d] - 2.0 * cur[d] + next[d];
        }
    }
    out
}

/// Linearly interpolates unvoiced gaps of an F0 track (Hz, 0 = unvoiced) in
/// the log domain; leading/trailing unvoiced regions copy the nearest voiced
/// value. Returns per-frame log-F0 and the binary voicing flag.
pub fn interpolate_f0(f0_hz: &[f64]) -> Result<(Vec<f64>, Vec<u8>)> {
    let t_len = f0_hz.len();
    let vuv: Vec<u8> = f0_hz.iter().map(|&v| u8::from(v > 0.0)).collect();
    let voiced: Vec<usize> = (0..t_len).filter(|&t| vuv[t] == 1).collect();
    if voiced.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot interpolate an all-unvoiced utterance".into(),
        ));
    }
    let mut log_f0 = vec![0.0; t_len];
    for &t in &voiced {
        log_f0[t] = f0_hz[t].ln();
    }
    // Edge extension.
    for t in 0..voiced[0] {
        log_f0[t] = log_f0[voiced[0]];
    }
    for t in voiced[voiced.len() - 1] + 1..t_len {
        log_f0[t] = log_f0[voiced[voiced.len() - 1]];
    }
    // Interior gaps.
    for pair in voiced.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for t in a + 1..b {
            let w = (t - a) as f64 / (b - a) as f64;
            log_f0[t] = (1.0 - w) * log_f0[a] + w * log_f0[b];
        }
    }
    Ok((log_f0, vuv))
}

/// Layout of the network output vector. Each of the MCC / BAP / log-F0
/// streams occupies a contiguous `[static, d, dd]` block; the voicing flag is
/// the final dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamLayout {
    pub mcc_dim: usize,
    pub bap_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Mcc,
    Bap,
    LogF0,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Mcc, Stream::Bap, Stream::LogF0];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Mcc => "mcc",
            Stream::Bap => "bap",
            Stream::LogF0 => "lf0",
        }
    }
}

impl StreamLayout {
    pub fn new(mcc_dim: usize, bap_dim: usize) -> StreamLayout {
        StreamLayout { mcc_dim, bap_dim }
    }

    pub fn static_dim(&self, stream: Stream) -> usize {
        match stream {
            Stream::Mcc => self.mcc_dim,
            Stream::Bap => self.bap_dim,
            Stream::LogF0 => 1,
        }
    }

    /// Range of the full `[static, d, dd]` block of `stream` in the output
    /// vector.
    pub fn block(&self, stream: Stream) -> std::ops::Range<usize> {
        let start = match stream {
            Stream::Mcc => 0,
            Stream::Bap => 3 * self.mcc_dim,
            Stream::LogF0 => 3 * (self.mcc_dim + self.bap_dim),
        };
        start..start + 3 * self.static_dim(stream)
    }

    pub fn vuv_index(&self) -> usize {
        3 * (self.mcc_dim + self.bap_dim + 1)
    }

    pub fn output_dim(&self) -> usize {
        self.vuv_index() + 1
    }

    /// Assembles a full output frame matrix from per-stream statics and the
    /// voicing flag: dynamics per stream, then concatenation.
    pub fn assemble_targets(
        &self,
        mcc: &Array2<f64>,
        bap: &Array2<f64>,
        log_f0: &[f64],
        vuv: &[u8],
    ) -> Array2<f64> {
        let t_len = mcc.nrows();
        let mut out = Array2::zeros((t_len, self.output_dim()));
        let lf0 = Array2::from_shape_fn((t_len, 1), |(t, _)| log_f0[t]);
        for (stream, statics) in [
            (Stream::Mcc, mcc),
            (Stream::Bap, bap),
            (Stream::LogF0, &lf0),
        ] {
            let dyn_block = compute_dynamics(statics);
            out.slice_mut(s![.., self.block(stream)]).assign(&dyn_block);
        }
        for t in 0..t_len {
            out[[t, self.vuv_index()]] = f64::from(vuv[t]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn minmax_maps_range_to_bounds() {
        let frames = vec![array![[0.0], [1.0]]];
        let (normed, _) = minmax_fit_apply(&frames, 0.01, 0.99).unwrap();
        assert!((normed[0][[0, 0]] - 0.01).abs() < 1e-12);
        assert!((normed[0][[1, 0]] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn minmax_constant_dimension_goes_to_midpoint() {
        let frames = vec![array![[3.0], [3.0], [3.0]]];
        let (normed, _) = minmax_fit_apply(&frames, 0.01, 0.99).unwrap();
        assert!(normed[0].iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn minmax_does_not_clamp_out_of_range() {
        let stats = MinMaxStats::fit(&[array![[0.0], [1.0]]], 0.01, 0.99).unwrap();
        let out = stats.apply(&array![[2.0]]);
        assert!(out[[0, 0]] > 0.99);
    }

    #[test]
    fn minmax_inverse_recovers_inputs() {
        let frames = array![[0.2, -1.0], [0.8, 4.0], [0.5, 2.0]];
        let stats = MinMaxStats::fit(std::slice::from_ref(&frames), 0.01, 0.99).unwrap();
        let normed = stats.apply(&frames);
        for ((t, d), &v) in normed.indexed_iter() {
            let span = stats.max[d] - stats.min[d];
            let back = stats.min[d] + (v - stats.lo) / (stats.hi - stats.lo) * span;
            assert!((back - frames[[t, d]]).abs() < 1e-12);
        }
    }

    #[test]
    fn meanvar_roundtrip_identity() {
        let frames = array![[1.0, -2.0], [3.0, 0.5], [0.0, 10.0]];
        let stats = MeanVarStats::fit(std::slice::from_ref(&frames)).unwrap();
        let restored = stats.restore(&stats.apply(&frames));
        for (a, b) in restored.iter().zip(frames.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn meanvar_apply_standardizes_fit_set() {
        let frames = array![[1.0], [2.0], [3.0], [4.0], [10.0]];
        let stats = MeanVarStats::fit(std::slice::from_ref(&frames)).unwrap();
        let normed = stats.apply(&frames);
        let mean = normed.column(0).mean().unwrap();
        let var = normed.column(0).mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn meanvar_flags_constant_dimensions() {
        let frames = array![[5.0, 1.0], [5.0, 2.0]];
        let stats = MeanVarStats::fit(std::slice::from_ref(&frames)).unwrap();
        assert!(stats.constant[0] && !stats.constant[1]);
        assert_eq!(stats.std[0], 1.0);
        let normed = stats.apply(&frames);
        assert_eq!(normed[[0, 0]], 0.0); // mean removed, scale untouched
    }

    #[test]
    fn dynamics_of_constant_sequence_are_zero() {
        let dyns = compute_dynamics(&array![[2.0], [2.0], [2.0]]);
        for t in 0..3 {
            assert_eq!(dyns[[t, 1]], 0.0);
            assert_eq!(dyns[[t, 2]], 0.0);
        }
    }

    #[test]
    fn dynamics_hand_case() {
        let dyns = compute_dynamics(&array![[0.0], [1.0], [2.0], [3.0]]);
        let delta: Vec<f64> = (0..4).map(|t| dyns[[t, 1]]).collect();
        let accel: Vec<f64> = (0..4).map(|t| dyns[[t, 2]]).collect();
        assert_eq!(delta, vec![0.5, 1.0, 1.0, 0.5]);
        assert_eq!(accel, vec![1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn dynamics_single_frame() {
        let dyns = compute_dynamics(&array![[7.0]]);
        assert_eq!(dyns[[0, 0]], 7.0);
        assert_eq!(dyns[[0, 1]], 0.0);
        assert_eq!(dyns[[0, 2]], 0.0);
    }

    #[test]
    fn dynamics_are_linear() {
        let x = array![[1.0], [3.0], [-2.0], [0.5]];
        let y = array![[0.0], [1.0], [4.0], [2.0]];
        let lhs = compute_dynamics(&(&x * 2.0 + &y * -3.0));
        let rhs = &compute_dynamics(&x) * 2.0 + &compute_dynamics(&y) * -3.0;
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn f0_interpolates_gap_in_log_domain() {
        let (lf0, vuv) = interpolate_f0(&[100.0, 0.0, 200.0]).unwrap();
        assert_eq!(vuv, vec![1, 0, 1]);
        assert!((lf0[1] - 0.5 * (100.0f64.ln() + 200.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn f0_all_voiced_is_plain_log() {
        let (lf0, vuv) = interpolate_f0(&[100.0, 150.0]).unwrap();
        assert_eq!(vuv, vec![1, 1]);
        assert!((lf0[0] - 100.0f64.ln()).abs() < 1e-12);
        assert!((lf0[1] - 150.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn f0_edges_copy_nearest_voiced() {
        let (lf0, vuv) = interpolate_f0(&[0.0, 0.0, 150.0, 0.0]).unwrap();
        assert_eq!(vuv, vec![0, 0, 1, 0]);
        for v in lf0 {
            assert!((v - 150.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn f0_all_unvoiced_is_rejected() {
        assert!(interpolate_f0(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn f0_is_continuous_at_voicing_boundaries() {
        let (lf0, _) = interpolate_f0(&[120.0, 0.0, 0.0, 180.0, 180.0]).unwrap();
        assert_eq!(lf0[0], 120.0f64.ln());
        assert_eq!(lf0[3], 180.0f64.ln());
        assert!(lf0[1] > lf0[0] && lf0[2] < lf0[3]);
    }

    #[test]
    fn layout_blocks_are_disjoint_and_cover() {
        let layout = StreamLayout::new(12, 4);
        assert_eq!(layout.block(Stream::Mcc), 0..36);
        assert_eq!(layout.block(Stream::Bap), 36..48);
        assert_eq!(layout.block(Stream::LogF0), 48..51);
        assert_eq!(layout.vuv_index(), 51);
        assert_eq!(layout.output_dim(), 52);
    }
}
