//! Objective measures: Mel-cepstral distortion, BAP distortion, F0 RMSE on
//! the linear scale and voiced/unvoiced error rate.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub mcd_db: f64,
    pub bap_db: f64,
    pub f0_rmse_hz: f64,
    pub vuv_error_pct: f64,
    /// Frames entering the MCD/BAP/V-UV averages and the joint-voiced F0 count.
    pub frames_evaluated: usize,
    pub f0_frames_evaluated: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "model,mcd_db,bap_db,f0_rmse_hz,vuv_pct,frames";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            self.model, self.mcd_db, self.bap_db, self.f0_rmse_hz, self.vuv_error_pct, self.frames_evaluated
        )
    }
}

const MCD_CONST: f64 = 10.0 / std::f64::consts::LN_10;

fn cepstral_distortion(reference: &Array2<f64>, hypothesis: &Array2<f64>) -> Result<f64> {
    if reference.dim() != hypothesis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "distortion inputs differ in shape: {:?} vs {:?}",
            reference.dim(),
            hypothesis.dim()
        )));
    }
    if reference.nrows() == 0 {
        return Err(Error::EmptyInput("distortion over zero frames".into()));
    }
    let mut total = 0.0;
    for (r, h) in reference.rows().into_iter().zip(hypothesis.rows()) {
        let sq: f64 = r.iter().zip(h.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += MCD_CONST * (2.0 * sq).sqrt();
    }
    Ok(total / reference.nrows() as f64)
}

/// Mel-cepstral distortion in dB, averaged over frames. The caller excludes
/// the 0th (energy) coefficient.
pub fn mcd(reference: &Array2<f64>, hypothesis: &Array2<f64>) -> Result<f64> {
    cepstral_distortion(reference, hypothesis)
}

/// Band-aperiodicity distortion in dB; same formula as `mcd` over the BAP
/// dimensions.
pub fn bap_distortion(reference: &Array2<f64>, hypothesis: &Array2<f64>) -> Result<f64> {
    cepstral_distortion(reference, hypothesis)
}

/// RMSE between F0 tracks in Hz over frames voiced in both reference and
/// hypothesis. Inputs are log-F0; values are exponentiated before comparison.
/// Returns the RMSE and the joint-voiced frame count.
pub fn f0_rmse(
    ref_log_f0: &[f64],
    hyp_log_f0: &[f64],
    ref_vuv: &[u8],
    hyp_vuv: &[u8],
) -> Result<(f64, usize)> {
    let t_len = ref_log_f0.len();
    if hyp_log_f0.len() != t_len || ref_vuv.len() != t_len || hyp_vuv.len() != t_len {
        return Err(Error::DimensionMismatch("F0 tracks are not aligned".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..t_len {
        if ref_vuv[t] == 1 && hyp_vuv[t] == 1 {
            let d = ref_log_f0[t].exp() - hyp_log_f0[t].exp();
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("no jointly voiced frames".into()));
    }
    Ok(((sum / count as f64).sqrt(), count))
}

/// Percentage of frames with mismatched voicing decisions.
pub fn vuv_error(ref_vuv: &[u8], hyp_vuv: &[u8]) -> Result<f64> {
    if ref_vuv.len() != hyp_vuv.len() {
        return Err(Error::DimensionMismatch("voicing flags are not aligned".into()));
    }
    if ref_vuv.is_empty() {
        return Err(Error::EmptyInput("voicing error over zero frames".into()));
    }
    let mismatches = ref_vuv
        .iter()
        .zip(hyp_vuv)
        .filter(|(a, b)| a != b)
        .count();
    Ok(100.0 * mismatches as f64 / ref_vuv.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mcd_of_identical_inputs_is_zero() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(mcd(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn mcd_unit_difference_fixture() {
        let r = array![[1.0]];
        let h = array![[0.0]];
        let expected = (10.0 / 10.0f64.ln()) * 2.0f64.sqrt();
        assert!((mcd(&r, &h).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 6.141_85).abs() < 1e-4);
    }

    #[test]
    fn mcd_averages_over_frames() {
        let r = array![[1.0], [0.0]];
        let h = array![[0.0], [0.0]];
        let a = mcd(&array![[1.0]], &array![[0.0]]).unwrap();
        assert!((mcd(&r, &h).unwrap() - a / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mcd_is_permutation_invariant() {
        let r = array![[1.0, 2.0, 3.0]];
        let h = array![[0.5, 2.5, 2.0]];
        let rp = array![[3.0, 1.0, 2.0]];
        let hp = array![[2.0, 0.5, 2.5]];
        assert!((mcd(&r, &h).unwrap() - mcd(&rp, &hp).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn bap_matches_direct_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r: Array2<f64> = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0));
        let h: Array2<f64> = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-1.0..1.0));
        let mut expect = 0.0;
        for t in 0..5 {
            let mut sq = 0.0f64;
            for d in 0..4 {
                sq += (r[[t, d]] - h[[t, d]]).powi(2);
            }
            expect += (10.0 / 10.0f64.ln()) * (2.0 * sq).sqrt();
        }
        expect /= 5.0;
        assert!((bap_distortion(&r, &h).unwrap() - expect).abs() < 1e-12);
        assert_eq!(
            bap_distortion(&r, &h).unwrap(),
            mcd(&r, &h).unwrap() // shared formula
        );
    }

    #[test]
    fn distortion_rejects_shape_mismatch() {
        let r = array![[1.0, 2.0]];
        let h = array![[1.0]];
        assert!(mcd(&r, &h).is_err());
    }

    #[test]
    fn f0_rmse_identical_tracks() {
        let lf0 = [100.0f64.ln(), 120.0f64.ln()];
        let (rmse, n) = f0_rmse(&lf0, &lf0, &[1, 1], &[1, 1]).unwrap();
        assert_eq!(rmse, 0.0);
        assert_eq!(n, 2);
    }

    #[test]
    fn f0_rmse_constant_offset() {
        let r = [100.0f64.ln(); 4];
        let h = [110.0f64.ln(); 4];
        let (rmse, _) = f0_rmse(&r, &h, &[1; 4], &[1; 4]).unwrap();
        assert!((rmse - 10.0).abs() < 1e-9);
    }

    #[test]
    fn f0_rmse_skips_non_joint_voiced() {
        let r = [100.0f64.ln(), 500.0f64.ln(), 100.0f64.ln()];
        let h = [100.0f64.ln(), 900.0f64.ln(), 100.0f64.ln()];
        let (rmse, n) = f0_rmse(&r, &h, &[1, 1, 1], &[1, 0, 1]).unwrap();
        assert_eq!(rmse, 0.0);
        assert_eq!(n, 2);
    }

    #[test]
    fn f0_rmse_requires_joint_voiced_frames() {
        assert!(f0_rmse(&[1.0], &[1.0], &[1], &[0]).is_err());
    }

    #[test]
    fn vuv_error_cases() {
        assert_eq!(vuv_error(&[1, 0, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(vuv_error(&[1, 0, 1, 0], &[1, 1, 1, 0]).unwrap(), 25.0);
        assert_eq!(vuv_error(&[1, 0], &[0, 1]).unwrap(), 100.0);
        assert!(vuv_error(&[], &[]).is_err());
    }
}
