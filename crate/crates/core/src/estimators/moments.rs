use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::geometry::{PairedImage, RegionPair};
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Spatial first and second moments over the paired superpixels of one frame.
/// Variances use the population convention (divide by the pair count).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_s: f64,
    pub mean_i: f64,
    pub var_s: f64,
    pub var_i: f64,
    pub cov_si: f64,
    pub n_pixels: usize,
}

impl Moments {
    pub const ZERO: Moments = Moments {
        mean_s: 0.0,
        mean_i: 0.0,
        var_s: 0.0,
        var_i: 0.0,
        cov_si: 0.0,
        n_pixels: 0,
    };

    /// Variance of the difference `N_i - N_s`.
    pub fn var_diff(&self) -> f64 {
        self.var_s + self.var_i - 2.0 * self.cov_si
    }

    pub fn mean_sum(&self) -> f64 {
        self.mean_s + self.mean_i
    }

    /// Element-wise average of several moment records.
    pub fn average(items: &[Moments]) -> Result<Moments> {
        if items.is_empty() {
            return Err(Error::Degenerate("no moments to average".into()));
        }
        let n = items.len() as f64;
        let mut acc = Moments::ZERO;
        for m in items {
            acc.mean_s += m.mean_s;
            acc.mean_i += m.mean_i;
            acc.var_s += m.var_s;
            acc.var_i += m.var_i;
            acc.cov_si += m.cov_si;
        }
        acc.mean_s /= n;
        acc.mean_i /= n;
        acc.var_s /= n;
        acc.var_i /= n;
        acc.cov_si /= n;
        acc.n_pixels = items[0].n_pixels;
        Ok(acc)
    }
}

/// Moments over the valid pairs of `image`.
pub fn moments(image: &PairedImage) -> Result<Moments> {
    let n = image.valid_count();
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} valid pixel pairs, need at least 2")));
    }
    let pairs = || {
        image
            .signal
            .indexed_iter()
            .filter(|&((y, x), _)| image.is_valid(y, x))
            .map(|((y, x), &s)| (s, image.idler[[y, x]]))
    };
    let nf = n as f64;
    let (ss, si) = pairs().fold((0.0, 0.0), |(a, b), (s, i)| (a + s, b + i));
    let (mean_s, mean_i) = (ss / nf, si / nf);
    let (mut vs, mut vi, mut c) = (0.0, 0.0, 0.0);
    for (s, i) in pairs() {
        let (ds, di) = (s - mean_s, i - mean_i);
        vs += ds * ds;
        vi += di * di;
        c += ds * di;
    }
    Ok(Moments {
        mean_s,
        mean_i,
        var_s: vs / nf,
        var_i: vi / nf,
        cov_si: c / nf,
        n_pixels: n,
    })
}

/// Moments of one frame at analysis binning `bin` (fine pixels).
pub fn spatial_moments(frame: &Frame, regions: &RegionPair, bin: usize) -> Result<Moments> {
    moments(&PairedImage::from_frame(frame, regions, bin)?)
}

pub fn nrf(m: &Moments) -> Result<f64> {
    let d = m.mean_sum();
    if d <= 0.0 {
        return Err(Error::ZeroMean);
    }
    Ok(m.var_diff() / d)
}

pub fn fano(mean: f64, var: f64) -> Result<f64> {
    if mean <= 0.0 {
        return Err(Error::ZeroMean);
    }
    Ok(var / mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundCorrected {
    pub sigma: f64,
    pub fano_s: f64,
    pub fano_i: f64,
}

/// Subtracts the background mean and variance measured on a dark stack
/// (same geometry, no source light) from the lit-frame moments.
pub fn background_correct(lit: &Moments, bg: &Moments) -> Result<BackgroundCorrected> {
    let denom = lit.mean_sum() - bg.mean_sum();
    let ds = lit.mean_s - bg.mean_s;
    let di = lit.mean_i - bg.mean_i;
    if denom <= 0.0 || ds <= 0.0 || di <= 0.0 {
        return Err(Error::InvalidRegime(format!(
            "background mean {:.3} is not below the signal mean {:.3}",
            bg.mean_sum(),
            lit.mean_sum()
        )));
    }
    Ok(BackgroundCorrected {
        sigma: (lit.var_diff() - bg.var_s - bg.var_i) / denom,
        fano_s: (lit.var_s - bg.var_s) / ds,
        fano_i: (lit.var_i - bg.var_i) / di,
    })
}

/// One row of the per-frame noise reduction table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfReport {
    pub shot_id: u64,
    pub bin: usize,
    pub sigma: f64,
    pub fano_s: f64,
    pub fano_i: f64,
    pub mean_photons: f64,
    pub sigma_bg_corrected: Option<f64>,
    pub fano_bg_corrected: Option<f64>,
    pub flat_field_applied: bool,
}

impl NrfReport {
    pub fn from_moments(
        shot_id: u64,
        bin: usize,
        m: &Moments,
        bg: Option<&Moments>,
        flat_field_applied: bool,
    ) -> Result<Self> {
        let corrected = bg.map(|b| background_correct(m, b)).transpose()?;
        Ok(NrfReport {
            shot_id,
            bin,
            sigma: nrf(m)?,
            fano_s: fano(m.mean_s, m.var_s)?,
            fano_i: fano(m.mean_i, m.var_i)?,
            mean_photons: m.mean_sum() / 2.0,
            sigma_bg_corrected: corrected.map(|c| c.sigma),
            fano_bg_corrected: corrected.map(|c| (c.fano_s + c.fano_i) / 2.0),
            flat_field_applied,
        })
    }
}

/// Per-pixel temporal noise reduction factor across a stack, averaged over
/// pixels. Used as an independent check on the single-frame estimator.
pub fn ensemble_nrf(images: &[PairedImage]) -> Result<f64> {
    let first = images.first().ok_or_else(|| Error::Degenerate("empty stack".into()))?;
    if images.len() < 2 {
        return Err(Error::Degenerate("ensemble statistics need at least 2 frames".into()));
    }
    let dim = first.dim();
    let k = images.len() as f64;
    let mut sum_d = Array2::<f64>::zeros(dim);
    let mut sum_d2 = Array2::<f64>::zeros(dim);
    let mut sum_m = Array2::<f64>::zeros(dim);
    for img in images {
        if img.dim() != dim {
            return Err(Error::geometry("frames in the stack have different shapes"));
        }
        for ((y, x), &s) in img.signal.indexed_iter() {
            let i = img.idler[[y, x]];
            sum_d[[y, x]] += i - s;
            sum_d2[[y, x]] += (i - s) * (i - s);
            sum_m[[y, x]] += i + s;
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((y, x), &d) in sum_d.indexed_iter() {
        if !first.is_valid(y, x) {
            continue;
        }
        let mean_sum = sum_m[[y, x]] / k;
        if mean_sum <= 0.0 {
            continue;
        }
        let var = sum_d2[[y, x]] / k - (d / k).powi(2);
        total += var / mean_sum;
        count += 1;
    }
    if count == 0 {
        return Err(Error::ZeroMean);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn paired(s: Array2<f64>, i: Array2<f64>) -> PairedImage {
        PairedImage::new(s, i, 1).unwrap()
    }

    #[test]
    fn constant_frame() {
        let m = moments(&paired(Array2::from_elem((3, 3), 5.0), Array2::from_elem((3, 3), 5.0))).unwrap();
        assert_eq!((m.mean_s, m.var_s, m.cov_si), (5.0, 0.0, 0.0));
    }

    #[test]
    fn self_pairing_gives_zero_sigma() {
        let a = array![[1.0, 4.0], [9.0, 2.0]];
        let m = moments(&paired(a.clone(), a)).unwrap();
        assert_eq!(m.cov_si, m.var_s);
        assert_eq!(nrf(&m).unwrap(), 0.0);
    }

    #[test]
    fn population_convention() {
        let m = moments(&paired(array![[0.0, 2.0]], array![[1.0, 1.0]])).unwrap();
        assert_eq!(m.var_s, 1.0);
        assert_eq!(m.n_pixels, 2);
    }

    #[test]
    fn mask_excludes_pairs() {
        let p = paired(array![[1.0, 3.0, 100.0]], array![[1.0, 3.0, 0.0]])
            .with_mask(&array![[true, true, false]])
            .unwrap();
        let m = moments(&p).unwrap();
        assert_eq!(m.mean_s, 2.0);
        assert_eq!(nrf(&m).unwrap(), 0.0);
    }

    #[test]
    fn zero_mean_is_an_error() {
        let m = moments(&paired(Array2::zeros((2, 2)), Array2::zeros((2, 2)))).unwrap();
        assert!(matches!(nrf(&m), Err(Error::ZeroMean)));
        assert!(matches!(fano(0.0, 1.0), Err(Error::ZeroMean)));
    }

    #[test]
    fn zero_background_leaves_sigma() {
        let lit = Moments {
            mean_s: 10.0,
            mean_i: 12.0,
            var_s: 13.0,
            var_i: 15.0,
            cov_si: 9.0,
            n_pixels: 100,
        };
        let c = background_correct(&lit, &Moments::ZERO).unwrap();
        assert_eq!(c.sigma, nrf(&lit).unwrap());
        assert_eq!(c.fano_s, 1.3);
    }

    #[test]
    fn background_as_signal_is_invalid_regime() {
        let bg = Moments {
            mean_s: 4.0,
            mean_i: 4.0,
            var_s: 20.0,
            var_i: 20.0,
            cov_si: 0.0,
            n_pixels: 100,
        };
        assert!(matches!(background_correct(&bg, &bg), Err(Error::InvalidRegime(_))));
    }

    proptest! {
        #[test]
        fn covariance_bounded(data in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..40)) {
            let n = data.len();
            let s = Array2::from_shape_vec((1, n), data.iter().map(|d| d.0).collect()).unwrap();
            let i = Array2::from_shape_vec((1, n), data.iter().map(|d| d.1).collect()).unwrap();
            let m = moments(&paired(s, i)).unwrap();
            prop_assert!(m.var_s >= 0.0 && m.var_i >= 0.0);
            prop_assert!(m.cov_si.abs() <= (m.var_s * m.var_i).sqrt() * (1.0 + 1e-9) + 1e-9);
        }

        #[test]
        fn zero_background_is_exact(ms in 1.0f64..100.0, mi in 1.0f64..100.0, vs in 0.0f64..50.0, vi in 0.0f64..50.0, r in -1.0f64..1.0) {
            let lit = Moments { mean_s: ms, mean_i: mi, var_s: vs, var_i: vi, cov_si: r * (vs * vi).sqrt(), n_pixels: 10 };
            prop_assert_eq!(background_correct(&lit, &Moments::ZERO).unwrap().sigma, nrf(&lit).unwrap());
        }
    }
}
