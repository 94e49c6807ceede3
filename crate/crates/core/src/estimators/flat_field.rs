use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::geometry::{PairedImage, RegionPair};
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Multiplicative efficiency correction per superpixel, in paired orientation.
///
/// Pixels that collected no light during calibration are dead: their gain is
/// stored as 1 and `live` is `false`, so they drop out of all statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatField {
    pub g_s: Array2<f64>,
    pub g_i: Array2<f64>,
    pub live: Array2<bool>,
    pub bin: usize,
    pub q_frames_used: usize,
}

impl FlatField {
    pub fn identity(dim: (usize, usize), bin: usize) -> Self {
        FlatField {
            g_s: Array2::ones(dim),
            g_i: Array2::ones(dim),
            live: Array2::from_elem(dim, true),
            bin,
            q_frames_used: 0,
        }
    }

    pub fn dead_pixels(&self) -> usize {
        self.live.iter().filter(|&&l| !l).count()
    }
}

/// Accumulates object-free frames into the per-superpixel sums `F_k`.
#[derive(Debug, Clone)]
pub struct FlatFieldBuilder {
    regions: RegionPair,
    bin: usize,
    sum_s: Option<Array2<f64>>,
    sum_i: Option<Array2<f64>>,
    frames: usize,
}

impl FlatFieldBuilder {
    pub fn new(regions: RegionPair, bin: usize) -> Self {
        FlatFieldBuilder {
            regions,
            bin,
            sum_s: None,
            sum_i: None,
            frames: 0,
        }
    }

    pub fn add(&mut self, frame: &Frame) -> Result<()> {
        let p = PairedImage::from_frame(frame, &self.regions, self.bin)?;
        match (&mut self.sum_s, &mut self.sum_i) {
            (Some(s), Some(i)) => {
                *s += &p.signal;
                *i += &p.idler;
            }
            _ => {
                self.sum_s = Some(p.signal);
                self.sum_i = Some(p.idler);
            }
        }
        self.frames += 1;
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn finish(self) -> Result<FlatField> {
        let (Some(fs), Some(fi)) = (self.sum_s, self.sum_i) else {
            return Err(Error::config("flat field needs at least one frame"));
        };
        let live = Zip::from(&fs).and(&fi).map_collect(|&s, &i| s > 0.0 && i > 0.0);
        let n_live = live.iter().filter(|&&l| l).count();
        if n_live == 0 {
            return Err(Error::Degenerate("calibration stack contains no light".into()));
        }
        let gains = |f: &Array2<f64>| {
            let mean = Zip::from(f)
                .and(&live)
                .fold(0.0, |acc, &v, &l| if l { acc + v } else { acc })
                / n_live as f64;
            Zip::from(f)
                .and(&live)
                .map_collect(|&v, &l| if l { mean / v } else { 1.0 })
        };
        Ok(FlatField {
            g_s: gains(&fs),
            g_i: gains(&fi),
            live,
            bin: self.bin,
            q_frames_used: self.frames,
        })
    }
}

/// Builds the flat field from the first `q` frames of an object-free stack.
pub fn build_flat_field(frames: &[Frame], regions: &RegionPair, bin: usize, q: usize) -> Result<FlatField> {
    if q == 0 {
        return Err(Error::config("flat field needs q >= 1 frames"));
    }
    if q > frames.len() {
        return Err(Error::config(format!(
            "flat field requested q = {q} frames but only {} are available",
            frames.len()
        )));
    }
    let mut b = FlatFieldBuilder::new(*regions, bin);
    for f in &frames[..q] {
        b.add(f)?;
    }
    b.finish()
}

/// Applies `N -> g N` to both arms and excludes dead pixels.
pub fn apply_flat_field(image: &PairedImage, flat: &FlatField) -> Result<PairedImage> {
    if image.dim() != flat.g_s.dim() || image.bin != flat.bin {
        return Err(Error::geometry(format!(
            "flat field {:?} at bin {} does not match image {:?} at bin {}",
            flat.g_s.dim(),
            flat.bin,
            image.dim(),
            image.bin
        )));
    }
    let out = PairedImage {
        signal: &image.signal * &flat.g_s,
        idler: &image.idler * &flat.g_i,
        bin: image.bin,
        valid: image.valid.clone(),
    };
    if flat.dead_pixels() == 0 {
        return Ok(out);
    }
    out.with_mask(&flat.live)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::geometry::Rect;
    use ndarray::array;

    fn regions() -> RegionPair {
        RegionPair::reflected(Rect::new(0, 0, 2, 2), [2.0, 1.0], [1, 0]).unwrap()
    }

    #[test]
    fn identity_gain_is_identity() {
        let p = PairedImage::new(array![[1.0, 2.0]], array![[3.0, 4.0]], 1).unwrap();
        let q = apply_flat_field(&p, &FlatField::identity((1, 2), 1)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn gains_normalise_to_region_mean() {
        let f = Frame::new(array![[1, 2, 6, 5], [3, 4, 8, 7]], 1, 0);
        let ff = build_flat_field(std::slice::from_ref(&f), &regions(), 1, 1).unwrap();
        let inv_mean = ff.g_s.iter().map(|g| 1.0 / g).sum::<f64>() / 4.0;
        assert!((inv_mean - 1.0).abs() < 1e-12);
        let p = apply_flat_field(&PairedImage::from_frame(&f, &regions(), 1).unwrap(), &ff).unwrap();
        assert!(p.signal.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(p.idler.iter().all(|&v| (v - 6.5).abs() < 1e-12));
    }

    #[test]
    fn dead_pixel_is_masked() {
        let f = Frame::new(array![[0, 2, 6, 5], [3, 4, 8, 7]], 1, 0);
        let ff = build_flat_field(std::slice::from_ref(&f), &regions(), 1, 1).unwrap();
        assert_eq!(ff.dead_pixels(), 1);
        assert!(!ff.live[[0, 0]]);
        assert!(ff.g_s.iter().all(|&g| g > 0.0));
        let p = apply_flat_field(&PairedImage::from_frame(&f, &regions(), 1).unwrap(), &ff).unwrap();
        assert_eq!(p.valid_count(), 3);
    }

    #[test]
    fn q_bounds_are_checked() {
        let f = Frame::new(array![[1, 2, 6, 5], [3, 4, 8, 7]], 1, 0);
        assert!(build_flat_field(std::slice::from_ref(&f), &regions(), 1, 2).is_err());
        assert!(build_flat_field(std::slice::from_ref(&f), &regions(), 1, 0).is_err());
    }
}
