//! Center-of-symmetry search: the idler region is moved over a window of
//! integer shifts and the shift with the lowest stack-averaged σ wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::geometry::{PairedImage, Rect, RegionPair};
use crate::estimators::moments::{moments, nrf};
use crate::frame::Frame;

pub const DEFAULT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsScanResult {
    /// Idler displacements in fine pixels, row-major over the window.
    pub shifts: Vec<[i64; 2]>,
    pub sigmas: Vec<f64>,
    pub best_shift: [i64; 2],
    pub best_sigma: f64,
    pub center_estimate: [f64; 2],
    pub scan_bin: usize,
    pub window: usize,
    pub signal: Rect,
    /// Idler region at zero shift.
    pub idler: Rect,
}

impl CsScanResult {
    pub fn sigma_at(&self, shift: [i64; 2]) -> Option<f64> {
        let w = self.window as i64;
        if shift[0].abs() > w || shift[1].abs() > w {
            return None;
        }
        let side = 2 * w + 1;
        Some(self.sigmas[((shift[1] + w) * side + shift[0] + w) as usize])
    }

    fn center_for(&self, shift: [f64; 2]) -> [f64; 2] {
        let s = self.signal.center();
        let i = self.idler.center();
        [(s[0] + i[0] + shift[0]) / 2.0, (s[1] + i[1] + shift[1]) / 2.0]
    }
}

fn stack_sigma(frames: &[Frame], signal: &Rect, idler: &Rect, bin: usize) -> Result<f64> {
    let mut total = 0.0;
    for f in frames {
        total += nrf(&moments(&PairedImage::from_rects(f, signal, idler, bin)?)?)?;
    }
    Ok(total / frames.len() as f64)
}

/// Exhaustive scan over the `(2 window + 1)²` idler shifts around `regions`.
pub fn cs_scan(
    frames: &[Frame],
    regions: &RegionPair,
    window: usize,
    scan_bin: usize,
    tolerance: f64,
) -> Result<CsScanResult> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Degenerate("center search needs at least one frame".into()))?;
    let (fw, fh) = (first.fine_width(), first.fine_height());
    let w = window as i64;
    let shifts: Vec<[i64; 2]> = (-w..=w).flat_map(|dy| (-w..=w).map(move |dx| [dx, dy])).collect();
    let rects = shifts
        .iter()
        .map(|&[dx, dy]| {
            regions
                .idler
                .offset(dx, dy)
                .filter(|r| r.fits_within(fw, fh))
                .ok_or_else(|| {
                    Error::geometry(format!(
                        "search window {window} moves the idler region {:?} off the sensor at shift ({dx}, {dy})",
                        regions.idler
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let sigmas = rects
        .par_iter()
        .map(|r| stack_sigma(frames, &regions.signal, r, scan_bin))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(bad) = sigmas.iter().find(|s| !s.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite sigma {bad} in scan")));
    }
    let (best, &best_sigma) = sigmas
        .iter()
        .enumerate()
        .min_by(|(a, sa), (b, sb)| sa.total_cmp(sb).then_with(|| shifts[*a].cmp(&shifts[*b])))
        .expect("window is non-empty");
    let threshold = 1.0 - tolerance;
    if best_sigma >= threshold {
        return Err(Error::NoCorrelation {
            min_sigma: best_sigma,
            threshold,
        });
    }
    let mut result = CsScanResult {
        best_shift: shifts[best],
        shifts,
        sigmas,
        best_sigma,
        center_estimate: [0.0; 2],
        scan_bin,
        window,
        signal: regions.signal,
        idler: regions.idler,
    };
    let b = result.best_shift;
    result.center_estimate = result.center_for([b[0] as f64, b[1] as f64]);
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedCenter {
    pub center: [f64; 2],
    /// Fractional idler shift at the interpolated minimum.
    pub shift: [f64; 2],
    /// `false` when the dip sits on the window boundary (or the surface is not
    /// convex there) and the integer optimum was returned instead.
    pub interpolated: bool,
}

fn vertex(minus: f64, zero: f64, plus: f64) -> Option<f64> {
    let curvature = minus - 2.0 * zero + plus;
    if curvature <= 0.0 {
        return None;
    }
    Some(0.5 * (minus - plus) / curvature)
}

/// Parabolic interpolation through the dip and its axial neighbours, per axis.
pub fn refine_center(scan: &CsScanResult) -> RefinedCenter {
    let b = scan.best_shift;
    let integer = [b[0] as f64, b[1] as f64];
    let fallback = RefinedCenter {
        center: scan.center_for(integer),
        shift: integer,
        interpolated: false,
    };
    let s0 = scan.best_sigma;
    let mut shift = integer;
    for axis in 0..2 {
        let mut lo = b;
        let mut hi = b;
        lo[axis] -= 1;
        hi[axis] += 1;
        let (Some(sm), Some(sp)) = (scan.sigma_at(lo), scan.sigma_at(hi)) else {
            return fallback;
        };
        match vertex(sm, s0, sp) {
            Some(v) => shift[axis] += v,
            None => return fallback,
        }
    }
    RefinedCenter {
        center: scan.center_for(shift),
        shift,
        interpolated: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn synthetic(window: usize, f: impl Fn(f64, f64) -> f64) -> CsScanResult {
        let w = window as i64;
        let shifts: Vec<[i64; 2]> = (-w..=w).flat_map(|dy| (-w..=w).map(move |dx| [dx, dy])).collect();
        let sigmas: Vec<f64> = shifts.iter().map(|s| f(s[0] as f64, s[1] as f64)).collect();
        let (i, &m) = sigmas.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        CsScanResult {
            best_shift: shifts[i],
            shifts,
            sigmas,
            best_sigma: m,
            center_estimate: [0.0; 2],
            scan_bin: 2,
            window,
            signal: Rect::new(0, 0, 4, 4),
            idler: Rect::new(8, 0, 4, 4),
        }
    }

    #[test]
    fn quadratic_surface_is_recovered() {
        let scan = synthetic(3, |x, y| 0.3 + 0.1 * (x - 1.5).powi(2) + 0.05 * y * y);
        let r = refine_center(&scan);
        assert!(r.interpolated);
        assert!((r.shift[0] - 1.5).abs() < 1e-6 && r.shift[1].abs() < 1e-6, "{r:?}");
        assert!((r.center[0] - (2.0 + 10.0 + 1.5) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn edge_dip_falls_back() {
        let scan = synthetic(2, |x, y| 0.3 + 0.1 * (x - 2.0).powi(2) + 0.1 * y * y);
        assert_eq!(scan.best_shift, [2, 0]);
        let r = refine_center(&scan);
        assert!(!r.interpolated);
        assert_eq!(r.shift, [2.0, 0.0]);
    }

    #[test]
    fn out_of_window_is_an_error() {
        let f = Frame::new(Array2::from_elem((8, 16), 3), 1, 0);
        let regions = RegionPair::reflected(Rect::new(0, 0, 4, 4), [8.0, 4.0], [1, 0]).unwrap();
        let err = cs_scan(&[f], &regions, 5, 2, DEFAULT_TOLERANCE).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)), "{err}");
    }

    #[test]
    fn ties_break_to_smallest_shift() {
        // identical constant idler content at every shift: sigma is zero everywhere
        let mut counts = Array2::from_elem((8, 16), 0u32);
        counts.slice_mut(ndarray::s![.., ..8]).fill(4);
        counts.slice_mut(ndarray::s![.., 8..]).fill(4);
        counts[[0, 0]] = 5;
        let f = Frame::new(counts, 1, 0);
        let regions = RegionPair::reflected(Rect::new(2, 2, 4, 4), [8.0, 4.0], [1, 0]).unwrap();
        let scan = cs_scan(&[f], &regions, 1, 1, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(scan.best_shift, [-1, -1]);
    }
}
