//! Region geometry and the pairing of signal and idler superpixels.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Axis-aligned rectangle in fine-pixel coordinates, `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect { x, y, width, height }
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn center(&self) -> [f64; 2] {
        [
            self.x as f64 + self.width as f64 / 2.0,
            self.y as f64 + self.height as f64 / 2.0,
        ]
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn same_size(&self, other: &Rect) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Translated copy, or `None` if it would leave the non-negative quadrant.
    pub fn offset(&self, dx: i64, dy: i64) -> Option<Rect> {
        let x = i64::try_from(self.x).ok()? + dx;
        let y = i64::try_from(self.y).ok()? + dy;
        if x < 0 || y < 0 {
            return None;
        }
        Some(Rect {
            x: x as usize,
            y: y as usize,
            ..*self
        })
    }
}

/// Point reflection of `rect` about `center`, snapped to the pixel that
/// contains each reflected pixel center.
pub fn reflect_rect(rect: &Rect, center: [f64; 2]) -> Option<Rect> {
    let x = (2.0 * center[0] - rect.x as f64 - rect.width as f64 + 0.5).floor();
    let y = (2.0 * center[1] - rect.y as f64 - rect.height as f64 + 0.5).floor();
    if x < 0.0 || y < 0.0 {
        return None;
    }
    Some(Rect {
        x: x as usize,
        y: y as usize,
        width: rect.width,
        height: rect.height,
    })
}

/// Signal region `A_s`, idler region `A_i` and the DCI shift vector.
///
/// Pixel `(u, v)` of the signal region is paired with the idler pixel at the
/// reflected position, so the idler region is read out rotated by 180°.
/// `dci_shift` is expressed in superpixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionPair {
    pub signal: Rect,
    pub idler: Rect,
    pub center: [f64; 2],
    pub dci_shift: [i64; 2],
}

impl RegionPair {
    /// Builds the pair whose idler region is the reflection of `signal` about `center`.
    pub fn reflected(signal: Rect, center: [f64; 2], dci_shift: [i64; 2]) -> Result<Self> {
        let idler = reflect_rect(&signal, center)
            .ok_or_else(|| Error::geometry(format!("reflection of {signal:?} about {center:?} leaves the sensor")))?;
        let pair = RegionPair {
            signal,
            idler,
            center,
            dci_shift,
        };
        pair.check_consistency()?;
        Ok(pair)
    }

    /// Midpoint between the signal and idler region centers.
    pub fn midpoint(&self) -> [f64; 2] {
        let s = self.signal.center();
        let i = self.idler.center();
        [(s[0] + i[0]) / 2.0, (s[1] + i[1]) / 2.0]
    }

    /// Same signal region with the idler moved by `(dx, dy)` fine pixels; the
    /// center follows the midpoint.
    pub fn with_idler_offset(&self, dx: i64, dy: i64) -> Result<Self> {
        let idler = self
            .idler
            .offset(dx, dy)
            .ok_or_else(|| Error::geometry(format!("idler offset ({dx}, {dy}) leaves the sensor")))?;
        let mut pair = RegionPair { idler, ..*self };
        pair.center = pair.midpoint();
        Ok(pair)
    }

    pub fn check_consistency(&self) -> Result<()> {
        if !self.signal.same_size(&self.idler) {
            return Err(Error::geometry(format!(
                "signal {}x{} and idler {}x{} regions are not congruent",
                self.signal.width, self.signal.height, self.idler.width, self.idler.height
            )));
        }
        if self.signal.area() < 2 {
            return Err(Error::geometry("regions must contain at least two pixels"));
        }
        let mid = self.midpoint();
        if (mid[0] - self.center[0]).abs() > 0.5 + 1e-9 || (mid[1] - self.center[1]).abs() > 0.5 + 1e-9 {
            return Err(Error::geometry(format!(
                "idler region is not the reflection of the signal region about {:?} (midpoint {:?})",
                self.center, mid
            )));
        }
        Ok(())
    }

    /// Checks that both regions lie inside a `width × height` fine-pixel sensor.
    pub fn check_fits(&self, width: usize, height: usize) -> Result<()> {
        for (name, r) in [("signal", &self.signal), ("idler", &self.idler)] {
            if !r.fits_within(width, height) {
                return Err(Error::geometry(format!(
                    "{name} region {r:?} exceeds the {width}x{height} sensor"
                )));
            }
        }
        Ok(())
    }
}

/// Sums `n × n` blocks of a frame. The binning factor of the result is `n · frame.bin`.
pub fn bin_frame(frame: &Frame, n: usize) -> Result<Frame> {
    if n == 0 {
        return Err(Error::config("binning factor must be at least 1"));
    }
    let (h, w) = frame.counts.dim();
    if w % n != 0 {
        return Err(Error::NotDivisible {
            dimension: "frame width",
            size: w,
            factor: n,
        });
    }
    if h % n != 0 {
        return Err(Error::NotDivisible {
            dimension: "frame height",
            size: h,
            factor: n,
        });
    }
    let mut out = Array2::<u32>::zeros((h / n, w / n));
    for ((y, x), &c) in frame.counts.indexed_iter() {
        let cell = &mut out[[y / n, x / n]];
        *cell = cell
            .checked_add(c)
            .ok_or_else(|| Error::Degenerate(format!("superpixel ({}, {}) overflows u32", x / n, y / n)))?;
    }
    Ok(Frame::new(out, frame.bin * n, frame.shot_id))
}

fn block_sum(view: ArrayView2<'_, u32>, n: usize) -> Array2<f64> {
    let (h, w) = view.dim();
    let mut out = Array2::<f64>::zeros((h / n, w / n));
    for (y, row) in view.outer_iter().enumerate() {
        let by = y / n;
        for (x, &c) in row.iter().enumerate() {
            out[[by, x / n]] += f64::from(c);
        }
    }
    out
}

/// Sums `bin × bin` fine-pixel blocks of `rect` within `frame`.
///
/// `bin` is in fine pixels and must be a multiple of the frame's own binning;
/// the rectangle must be aligned to the frame grid and divisible by `bin`.
pub fn binned_region(frame: &Frame, rect: &Rect, bin: usize) -> Result<Array2<f64>> {
    if bin == 0 || !bin.is_multiple_of(frame.bin) {
        return Err(Error::config(format!(
            "analysis binning {bin} is not a multiple of the frame binning {}",
            frame.bin
        )));
    }
    if !rect.width.is_multiple_of(bin) {
        return Err(Error::NotDivisible {
            dimension: "region width",
            size: rect.width,
            factor: bin,
        });
    }
    if !rect.height.is_multiple_of(bin) {
        return Err(Error::NotDivisible {
            dimension: "region height",
            size: rect.height,
            factor: bin,
        });
    }
    let fb = frame.bin;
    if !rect.x.is_multiple_of(fb) || !rect.y.is_multiple_of(fb) {
        return Err(Error::geometry(format!(
            "region {rect:?} is not aligned to the {fb}x{fb} readout grid"
        )));
    }
    if !rect.fits_within(frame.fine_width(), frame.fine_height()) {
        return Err(Error::geometry(format!(
            "region {rect:?} exceeds the {}x{} frame",
            frame.fine_width(),
            frame.fine_height()
        )));
    }
    let (x0, y0) = (rect.x / fb, rect.y / fb);
    let (w, h) = (rect.width / fb, rect.height / fb);
    let view = frame.counts.slice(s![y0..y0 + h, x0..x0 + w]);
    Ok(block_sum(view, bin / fb))
}

/// Signal and idler superpixel grids in paired orientation: element `[[v, u]]`
/// of `idler` is the partner of element `[[v, u]]` of `signal`.
///
/// `valid` marks the pairs that enter statistics (dead pixels and masked areas
/// are `false`); `None` means every pair is used.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedImage {
    pub signal: Array2<f64>,
    pub idler: Array2<f64>,
    pub bin: usize,
    pub valid: Option<Array2<bool>>,
}

impl PairedImage {
    pub fn new(signal: Array2<f64>, idler: Array2<f64>, bin: usize) -> Result<Self> {
        if signal.dim() != idler.dim() {
            return Err(Error::geometry(format!(
                "signal grid {:?} and idler grid {:?} differ",
                signal.dim(),
                idler.dim()
            )));
        }
        Ok(PairedImage {
            signal,
            idler,
            bin,
            valid: None,
        })
    }

    pub fn from_frame(frame: &Frame, regions: &RegionPair, bin: usize) -> Result<Self> {
        Self::from_rects(frame, &regions.signal, &regions.idler, bin)
    }

    pub fn from_rects(frame: &Frame, signal: &Rect, idler: &Rect, bin: usize) -> Result<Self> {
        if !signal.same_size(idler) {
            return Err(Error::geometry("signal and idler regions are not congruent"));
        }
        let s = binned_region(frame, signal, bin)?;
        let i = rotate_half_turn(&binned_region(frame, idler, bin)?);
        Self::new(s, i, bin)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.signal.dim()
    }

    /// Restricts statistics to pairs where `mask` is `true`, on top of any existing mask.
    pub fn with_mask(mut self, mask: &Array2<bool>) -> Result<Self> {
        if mask.dim() != self.dim() {
            return Err(Error::geometry(format!(
                "mask {:?} does not match grid {:?}",
                mask.dim(),
                self.dim()
            )));
        }
        self.valid = Some(match self.valid.take() {
            Some(v) => ndarray::Zip::from(&v).and(mask).map_collect(|&a, &b| a && b),
            None => mask.clone(),
        });
        Ok(self)
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[[y, x]])
    }

    pub fn valid_count(&self) -> usize {
        match &self.valid {
            Some(v) => v.iter().filter(|&&b| b).count(),
            None => self.signal.len(),
        }
    }
}

/// 180° rotation, mapping reflected positions onto direct ones.
pub fn rotate_half_turn<T: Clone>(a: &Array2<T>) -> Array2<T> {
    a.slice(s![..;-1, ..;-1]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn bin_two_by_two() {
        let f = Frame::new(array![[1, 2], [3, 4]], 1, 0);
        let b = bin_frame(&f, 2).unwrap();
        assert_eq!(b.counts, array![[10]]);
        assert_eq!(b.bin, 2);
    }

    #[test]
    fn bin_one_is_identity() {
        let f = Frame::new(array![[1, 2, 3], [4, 5, 6]], 1, 9);
        assert_eq!(bin_frame(&f, 1).unwrap(), f);
    }

    #[test]
    fn bin_names_offending_dimension() {
        let f = Frame::new(Array2::zeros((4, 6)), 1, 0);
        let err = bin_frame(&f, 4).unwrap_err();
        assert!(err.to_string().contains("width"), "{err}");
        let f = Frame::new(Array2::zeros((6, 4)), 1, 0);
        let err = bin_frame(&f, 4).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn bin_48_by_12_preserves_total() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let counts = Array2::from_shape_fn((48, 48), |_| rng.random_range(0..1000u32));
        let f = Frame::new(counts, 1, 0);
        let expected: u64 = f.counts.iter().map(|&c| c as u64).sum();
        let b = bin_frame(&f, 12).unwrap();
        assert_eq!(b.counts.dim(), (4, 4));
        assert_eq!(b.total(), expected);
    }

    #[test]
    fn reflection_pairs_pixels() {
        // grid 20 wide, center at x = 10: pixel 3 pairs with 16
        let pair = RegionPair::reflected(Rect::new(2, 1, 4, 3), [10.0, 5.0], [1, 0]).unwrap();
        assert_eq!(pair.idler, Rect::new(14, 6, 4, 3));
        let mut counts = Array2::<u32>::zeros((10, 20));
        counts[[1, 3]] = 7;
        counts[[8, 16]] = 7;
        let f = Frame::new(counts, 1, 0);
        let p = PairedImage::from_frame(&f, &pair, 1).unwrap();
        assert_eq!(p.signal[[0, 1]], 7.0);
        assert_eq!(p.idler[[0, 1]], 7.0);
        assert_eq!(p.signal, p.idler);
    }

    #[test]
    fn fractional_center_snaps_to_containing_pixel() {
        let pair = RegionPair::reflected(Rect::new(0, 0, 4, 4), [6.25, 6.25], [1, 0]).unwrap();
        // 2c - x0 - w + 0.5 = 12.5 - 4 + 0.5 = 9
        assert_eq!(pair.idler.x, 9);
        assert!(pair.check_consistency().is_ok());
    }

    #[test]
    fn non_congruent_regions_rejected() {
        let pair = RegionPair {
            signal: Rect::new(0, 0, 4, 4),
            idler: Rect::new(10, 0, 4, 5),
            center: [7.0, 2.0],
            dci_shift: [1, 0],
        };
        assert!(matches!(pair.check_consistency(), Err(Error::Geometry(_))));
    }

    #[test]
    fn binned_region_handles_hardware_binned_frames() {
        let fine = Frame::new(Array2::from_shape_fn((8, 8), |(y, x)| (y * 8 + x) as u32), 1, 0);
        let hw = bin_frame(&fine, 2).unwrap();
        let r = Rect::new(4, 0, 4, 4);
        assert_eq!(binned_region(&fine, &r, 4).unwrap(), binned_region(&hw, &r, 4).unwrap());
        assert!(binned_region(&hw, &r, 3).is_err());
        assert!(binned_region(&hw, &Rect::new(1, 0, 4, 4), 4).is_err());
    }

    proptest! {
        #[test]
        fn binning_conserves_counts(
            n in 1usize..5, bw in 1usize..6, bh in 1usize..6, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let counts = Array2::from_shape_fn((bh * n, bw * n), |_| rng.random_range(0..5000u32));
            let f = Frame::new(counts, 1, 0);
            let b = bin_frame(&f, n).unwrap();
            prop_assert_eq!(b.total(), f.total());
        }
    }
}
