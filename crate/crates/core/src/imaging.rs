//! Absorption images from the quantum (SSNQI), differential classical (DCI)
//! and direct schemes, σ-class grouping and the SNR / correlation figures of merit.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::flat_field::{apply_flat_field, FlatField};
use crate::estimators::geometry::{PairedImage, RegionPair};
use crate::estimators::moments::{fano, moments, nrf};
use crate::estimators::theory::{r_dci_theory, r_direct_theory};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ssnqi,
    Dci,
    Direct,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ssnqi, Scheme::Dci, Scheme::Direct];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ssnqi => "ssnqi",
            Scheme::Dci => "dci",
            Scheme::Direct => "direct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionMap {
    pub alpha: Array2<f64>,
    pub scheme: Scheme,
    pub frames_used: usize,
    pub sigma_class: f64,
    pub fano_class: f64,
}

fn masked_mean(a: &Array2<f64>, image: &PairedImage) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((y, x), &v) in a.indexed_iter() {
        if image.is_valid(y, x) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Idler grid rolled cyclically so that element `x` holds the idler at `x - shift`.
pub fn shifted_idler(image: &PairedImage, shift: [i64; 2]) -> Array2<f64> {
    let (h, w) = image.dim();
    let (sx, sy) = (
        shift[0].rem_euclid(w as i64) as usize,
        shift[1].rem_euclid(h as i64) as usize,
    );
    Array2::from_shape_fn((h, w), |(y, x)| image.idler[[(y + h - sy) % h, (x + w - sx) % w]])
}

fn difference_alpha(image: &PairedImage, idler: &Array2<f64>) -> Result<Array2<f64>> {
    let norm = masked_mean(idler, image);
    if norm <= 0.0 {
        return Err(Error::ZeroMean);
    }
    Ok(Zip::from(idler).and(&image.signal).map_collect(|&i, &s| (i - s) / norm))
}

/// `α_k(x) = (N_i(-x) - N_s(x)) / <N_i>` on an already flat-fielded image.
pub fn ssnqi_alpha(image: &PairedImage) -> Result<Array2<f64>> {
    difference_alpha(image, &image.idler)
}

/// Same subtraction with the idler grid displaced by `shift` superpixels.
pub fn dci_alpha(image: &PairedImage, shift: [i64; 2]) -> Result<Array2<f64>> {
    difference_alpha(image, &shifted_idler(image, shift))
}

/// Object-free illumination levels measured on the calibration stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectReference {
    pub signal_level: f64,
    pub idler_level: f64,
}

impl DirectReference {
    /// Mean per-superpixel levels of flat-fielded object-free images.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a PairedImage>) -> Result<Self> {
        let (mut s, mut i, mut n) = (0.0, 0.0, 0usize);
        for img in images {
            s += masked_mean(&img.signal, img);
            i += masked_mean(&img.idler, img);
            n += 1;
        }
        if n == 0 || s <= 0.0 || i <= 0.0 {
            return Err(Error::ZeroMean);
        }
        Ok(DirectReference {
            signal_level: s / n as f64,
            idler_level: i / n as f64,
        })
    }
}

/// `α(x) = 1 - N_s(x) / <N_s>`, where the illumination `<N_s>` is the
/// calibration level rescaled by this shot's idler intensity.
pub fn direct_alpha(image: &PairedImage, reference: &DirectReference) -> Result<Array2<f64>> {
    let idler_mean = masked_mean(&image.idler, image);
    let level = reference.signal_level * idler_mean / reference.idler_level;
    if level <= 0.0 {
        return Err(Error::ZeroMean);
    }
    Ok(image.signal.mapv(|s| 1.0 - s / level))
}

/// Flat-fielded paired image of one object frame.
pub fn corrected_image(frame: &Frame, regions: &RegionPair, flat: &FlatField) -> Result<PairedImage> {
    apply_flat_field(&PairedImage::from_frame(frame, regions, flat.bin)?, flat)
}

pub fn ssnqi_image(frame: &Frame, regions: &RegionPair, flat: &FlatField) -> Result<Array2<f64>> {
    ssnqi_alpha(&corrected_image(frame, regions, flat)?)
}

pub fn dci_image(frame: &Frame, regions: &RegionPair, flat: &FlatField) -> Result<Array2<f64>> {
    dci_alpha(&corrected_image(frame, regions, flat)?, regions.dci_shift)
}

pub fn direct_image(
    frame: &Frame,
    regions: &RegionPair,
    flat: &FlatField,
    reference: &DirectReference,
) -> Result<Array2<f64>> {
    direct_alpha(&corrected_image(frame, regions, flat)?, reference)
}

/// Pixel-wise mean of a stack of images.
pub fn reference_image(images: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Degenerate("reference needs at least one image".into()))?;
    let mut acc = Array2::<f64>::zeros(first.dim());
    for img in images {
        if img.dim() != first.dim() {
            return Err(Error::geometry("images in the stack have different shapes"));
        }
        acc += img;
    }
    Ok(acc / images.len() as f64)
}

/// Squared Pearson correlation of two images over the pixels where `mask` holds.
pub fn correlation_coefficient(
    image: &Array2<f64>,
    reference: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<f64> {
    if image.dim() != reference.dim() || mask.is_some_and(|m| m.dim() != image.dim()) {
        return Err(Error::geometry("image, reference and mask shapes differ"));
    }
    let keep = |y: usize, x: usize| mask.is_none_or(|m| m[[y, x]]);
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for ((y, x), &a) in image.indexed_iter() {
        if keep(y, x) {
            n += 1;
            sa += a;
            sb += reference[[y, x]];
        }
    }
    if n < 2 {
        return Err(Error::Degenerate("correlation needs at least two pixels".into()));
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cab, mut caa, mut cbb) = (0.0, 0.0, 0.0);
    for ((y, x), &a) in image.indexed_iter() {
        if keep(y, x) {
            let (da, db) = (a - ma, reference[[y, x]] - mb);
            cab += da * db;
            caa += da * da;
            cbb += db * db;
        }
    }
    if caa == 0.0 || cbb == 0.0 {
        return Err(Error::Degenerate("constant image has no correlation".into()));
    }
    Ok((cab * cab / (caa * cbb)).clamp(0.0, 1.0))
}

/// Per-frame σ and mean Fano factor used for classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub shot_id: u64,
    pub sigma: f64,
    pub fano: f64,
}

pub fn frame_stats(image: &PairedImage, shot_id: u64) -> Result<FrameStats> {
    let m = moments(image)?;
    Ok(FrameStats {
        shot_id,
        sigma: nrf(&m)?,
        fano: (fano(m.mean_s, m.var_s)? + fano(m.mean_i, m.var_i)?) / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Keep only frames with `|F - 1| <= fano_band`.
    #[serde(default = "default_fano_band")]
    pub fano_band: Option<f64>,
    #[serde(default = "default_min_frames")]
    pub min_frames: usize,
}

fn default_bandwidth() -> f64 {
    0.1
}

fn default_fano_band() -> Option<f64> {
    Some(0.2)
}

fn default_min_frames() -> usize {
    10
}

impl Default for ClassSpec {
    fn default() -> Self {
        ClassSpec {
            bandwidth: default_bandwidth(),
            fano_band: default_fano_band(),
            min_frames: default_min_frames(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaClass {
    pub band: i64,
    pub lower: f64,
    pub upper: f64,
    /// Indices into the classified stack.
    pub members: Vec<usize>,
    pub sigma_mean: f64,
    pub fano_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub classes: Vec<SigmaClass>,
    pub rejected_by_fano: usize,
}

pub fn class_grouping(stats: &[FrameStats], spec: &ClassSpec) -> Result<Grouping> {
    if !(spec.bandwidth.is_finite() && spec.bandwidth > 0.0) {
        return Err(Error::config(format!(
            "class bandwidth {} must be positive",
            spec.bandwidth
        )));
    }
    let mut bands: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    let mut rejected = 0;
    for (k, s) in stats.iter().enumerate() {
        if let Some(fb) = spec.fano_band {
            if (s.fano - 1.0).abs() > fb {
                rejected += 1;
                continue;
            }
        }
        let band = (s.sigma / spec.bandwidth + 1e-9).floor() as i64;
        bands.entry(band).or_default().push(k);
    }
    let classes = bands
        .into_iter()
        .map(|(band, members)| {
            let n = members.len() as f64;
            SigmaClass {
                band,
                lower: band as f64 * spec.bandwidth,
                upper: (band + 1) as f64 * spec.bandwidth,
                sigma_mean: members.iter().map(|&k| stats[k].sigma).sum::<f64>() / n,
                fano_mean: members.iter().map(|&k| stats[k].fano).sum::<f64>() / n,
                members,
            }
        })
        .collect();
    Ok(Grouping {
        classes,
        rejected_by_fano: rejected,
    })
}

/// The three absorption estimates of one object frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImages {
    pub stats: FrameStats,
    pub ssnqi: Array2<f64>,
    pub dci: Array2<f64>,
    pub direct: Array2<f64>,
}

impl FrameImages {
    pub fn get(&self, scheme: Scheme) -> &Array2<f64> {
        match scheme {
            Scheme::Ssnqi => &self.ssnqi,
            Scheme::Dci => &self.dci,
            Scheme::Direct => &self.direct,
        }
    }
}

/// Forms all three images of an object frame. σ and Fano are measured only
/// where `stats_mask` holds, i.e. away from the object.
pub fn analyze_object_frame(
    frame: &Frame,
    regions: &RegionPair,
    flat: &FlatField,
    reference: &DirectReference,
    stats_mask: &Array2<bool>,
) -> Result<FrameImages> {
    let image = corrected_image(frame, regions, flat)?;
    let stats = frame_stats(&image.clone().with_mask(stats_mask)?, frame.shot_id)?;
    Ok(FrameImages {
        stats,
        ssnqi: ssnqi_alpha(&image)?,
        dci: dci_alpha(&image, regions.dci_shift)?,
        direct: direct_alpha(&image, reference)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub band: i64,
    pub sigma_j: f64,
    pub fano_j: f64,
    pub n_frames: usize,
    pub r_dci: f64,
    pub r_direct: f64,
    pub r_dci_theory: f64,
    pub r_direct_theory: f64,
    pub alpha_ssnqi: f64,
    pub alpha_dci: f64,
    pub alpha_direct: f64,
    pub snr_ssnqi: f64,
    pub snr_dci: f64,
    pub snr_direct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMaps {
    pub band: i64,
    pub mean: [Array2<f64>; 3],
    pub snr: [Array2<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrStudy {
    pub classes: Vec<ClassResult>,
    pub maps: Vec<ClassMaps>,
    /// `(band, frames)` of classes with too few frames.
    pub excluded: Vec<(i64, usize)>,
    pub rejected_by_fano: usize,
}

fn pixel_mean_std(images: &[&Array2<f64>]) -> (Array2<f64>, Array2<f64>) {
    let n = images.len() as f64;
    let dim = images[0].dim();
    let mut mean = Array2::<f64>::zeros(dim);
    for img in images {
        mean += *img;
    }
    mean /= n;
    let mut var = Array2::<f64>::zeros(dim);
    for img in images {
        Zip::from(&mut var)
            .and(*img)
            .and(&mean)
            .for_each(|v, &a, &m| *v += (a - m) * (a - m));
    }
    var /= n - 1.0;
    (mean, var.mapv(f64::sqrt))
}

fn support_mean(a: &Array2<f64>, support: &Array2<bool>) -> f64 {
    let (s, n) = Zip::from(a)
        .and(support)
        .fold((0.0, 0usize), |(s, n), &v, &k| if k { (s + v, n + 1) } else { (s, n) });
    s / n as f64
}

/// Per-class SNR maps, and SNRs pooled over `support` with their ratios and
/// the predictions for absorption `alpha`.
pub fn snr_study(frames: &[FrameImages], support: &Array2<bool>, alpha: f64, spec: &ClassSpec) -> Result<SnrStudy> {
    if frames.is_empty() {
        return Err(Error::Degenerate("no frames to study".into()));
    }
    if support.dim() != frames[0].ssnqi.dim() {
        return Err(Error::geometry("object support does not match the image grid"));
    }
    if !support.iter().any(|&s| s) {
        return Err(Error::geometry("object support is empty"));
    }
    let stats: Vec<FrameStats> = frames.iter().map(|f| f.stats).collect();
    let grouping = class_grouping(&stats, spec)?;
    let mut classes = Vec::new();
    let mut maps = Vec::new();
    let mut excluded = Vec::new();
    for class in &grouping.classes {
        let n = class.members.len();
        if n < spec.min_frames.max(2) {
            excluded.push((class.band, n));
            continue;
        }
        let per_scheme = Scheme::ALL.map(|scheme| {
            let imgs: Vec<&Array2<f64>> = class.members.iter().map(|&k| frames[k].get(scheme)).collect();
            let (mean, std) = pixel_mean_std(&imgs);
            let snr = Zip::from(&mean).and(&std).map_collect(|&m, &s| m.abs() / s);
            // Pooled over the support: a ratio of per-pixel SNRs blows up
            // wherever a pixel mean is consistent with zero.
            let pooled = support_mean(&mean, support).abs() / support_mean(&std.mapv(|s| s * s), support).sqrt();
            (mean, snr, pooled)
        });
        let [(m_q, snr_q, p_q), (m_c, snr_c, p_c), (m_d, snr_d, p_d)] = per_scheme;
        let e = class.fano_mean - 1.0;
        classes.push(ClassResult {
            band: class.band,
            sigma_j: class.sigma_mean,
            fano_j: class.fano_mean,
            n_frames: n,
            r_dci: p_q / p_c,
            r_direct: p_q / p_d,
            r_dci_theory: r_dci_theory(class.sigma_mean, alpha, e),
            r_direct_theory: r_direct_theory(class.sigma_mean, alpha, e),
            alpha_ssnqi: support_mean(&m_q, support),
            alpha_dci: support_mean(&m_c, support),
            alpha_direct: support_mean(&m_d, support),
            snr_ssnqi: p_q,
            snr_dci: p_c,
            snr_direct: p_d,
        });
        maps.push(ClassMaps {
            band: class.band,
            mean: [m_q, m_c, m_d],
            snr: [snr_q, snr_c, snr_d],
        });
    }
    Ok(SnrStudy {
        classes,
        maps,
        excluded,
        rejected_by_fano: grouping.rejected_by_fano,
    })
}

/// Superpixels of a `bin`-binned grid of shape `dim` touched by any absorbing
/// fine pixel of `alpha`.
pub fn object_footprint(alpha: &Array2<f64>, bin: usize) -> Array2<bool> {
    let (h, w) = alpha.dim();
    let mut out = Array2::from_elem((h / bin, w / bin), false);
    for ((y, x), &a) in alpha.indexed_iter() {
        if a > 0.0 && y / bin < h / bin && x / bin < w / bin {
            out[[y / bin, x / bin]] = true;
        }
    }
    out
}

/// Superpixels fully covered by absorbing fine pixels.
pub fn object_core(alpha: &Array2<f64>, bin: usize) -> Array2<bool> {
    let (h, w) = alpha.dim();
    let mut out = Array2::from_elem((h / bin, w / bin), true);
    for ((y, x), &a) in alpha.indexed_iter() {
        if a <= 0.0 && y / bin < h / bin && x / bin < w / bin {
            out[[y / bin, x / bin]] = false;
        }
    }
    out
}

/// Grows `mask` by one pixel in the 8-neighbourhood.
pub fn dilate(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        (y.saturating_sub(1)..(y + 2).min(h)).any(|yy| (x.saturating_sub(1)..(x + 2).min(w)).any(|xx| mask[[yy, xx]]))
    })
}

/// Shrinks `mask` by one pixel in the 8-neighbourhood; the border is dropped.
pub fn erode(mask: &Array2<bool>) -> Array2<bool> {
    let inv = mask.mapv(|m| !m);
    let (h, w) = mask.dim();
    let grown = dilate(&inv);
    Array2::from_shape_fn((h, w), |(y, x)| {
        mask[[y, x]] && !grown[[y, x]] && y > 0 && x > 0 && y + 1 < h && x + 1 < w
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn image(s: Array2<f64>, i: Array2<f64>) -> PairedImage {
        PairedImage::new(s, i, 1).unwrap()
    }

    #[test]
    fn identical_arms_give_zero_alpha() {
        let a = array![[10.0, 12.0], [9.0, 11.0]];
        let alpha = ssnqi_alpha(&image(a.clone(), a)).unwrap();
        assert!(alpha.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_shift_dci_is_ssnqi() {
        let p = image(
            array![[10.0, 12.0, 3.0], [9.0, 11.0, 4.0]],
            array![[11.0, 10.0, 5.0], [8.0, 13.0, 2.0]],
        );
        assert_eq!(dci_alpha(&p, [0, 0]).unwrap(), ssnqi_alpha(&p).unwrap());
        assert_ne!(dci_alpha(&p, [1, 0]).unwrap(), ssnqi_alpha(&p).unwrap());
    }

    #[test]
    fn roll_moves_content() {
        let p = image(Array2::zeros((2, 3)), array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(shifted_idler(&p, [1, 0]), array![[3.0, 1.0, 2.0], [6.0, 4.0, 5.0]]);
        assert_eq!(shifted_idler(&p, [0, -1]), array![[4.0, 5.0, 6.0], [1.0, 2.0, 3.0]]);
    }

    #[test]
    fn direct_uses_shot_intensity() {
        let reference = DirectReference {
            signal_level: 100.0,
            idler_level: 50.0,
        };
        // pump 10% brighter on this shot; signal absorbed by 5%
        let p = image(Array2::from_elem((2, 2), 110.0 * 0.95), Array2::from_elem((2, 2), 55.0));
        let a = direct_alpha(&p, &reference).unwrap();
        assert!(a.iter().all(|&v| (v - 0.05).abs() < 1e-12));
    }

    #[test]
    fn correlation_of_identical_images_is_one() {
        let a = array![[1.0, 3.0], [2.0, 7.0]];
        assert!((correlation_coefficient(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_image_reference_is_the_image() {
        let a = array![[1.0, 3.0], [2.0, 7.0]];
        assert_eq!(reference_image(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn classes() {
        let mk = |sigma, fano| FrameStats {
            shot_id: 0,
            sigma,
            fano,
        };
        let g = class_grouping(&[mk(0.43, 1.0), mk(0.41, 1.1), mk(0.49, 0.9)], &ClassSpec::default()).unwrap();
        assert_eq!(g.classes.len(), 1);
        let c = &g.classes[0];
        assert_eq!(c.band, 4);
        assert!((c.lower - 0.4).abs() < 1e-12 && (c.upper - 0.5).abs() < 1e-12);
        assert!((c.sigma_mean - 0.443_333_333_333).abs() < 1e-9);
        assert!((c.fano_mean - 1.0).abs() < 1e-12);

        let g = class_grouping(&[mk(0.3, 1.5), mk(0.31, 1.19), mk(0.35, 0.7)], &ClassSpec::default()).unwrap();
        assert_eq!(g.rejected_by_fano, 2);
        assert_eq!(g.classes[0].members, vec![1]);
        // a value sitting on a band edge does not fall through on rounding
        let g = class_grouping(&[mk(0.3, 1.0)], &ClassSpec::default()).unwrap();
        assert_eq!(g.classes[0].band, 3);
    }

    #[test]
    fn morphology() {
        let mut m = Array2::from_elem((5, 5), false);
        m[[2, 2]] = true;
        let d = dilate(&m);
        assert_eq!(d.iter().filter(|&&v| v).count(), 9);
        assert_eq!(erode(&d), m);
    }

    #[test]
    fn footprint_and_core() {
        let mut alpha = Array2::zeros((6, 6));
        alpha.slice_mut(ndarray::s![1..5, 2..4]).fill(0.1);
        let f = object_footprint(&alpha, 2);
        let c = object_core(&alpha, 2);
        assert_eq!(
            f,
            array![[false, true, false], [false, true, false], [false, true, false]]
        );
        assert_eq!(
            c,
            array![[false, false, false], [false, true, false], [false, false, false]]
        );
    }

    proptest! {
        #[test]
        fn correlation_in_unit_interval_and_affine_invariant(
            data in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..30),
            scale in 0.1f64..10.0, shift in -50.0f64..50.0,
        ) {
            let n = data.len();
            let a = Array2::from_shape_vec((1, n), data.iter().map(|d| d.0).collect()).unwrap();
            let b = Array2::from_shape_vec((1, n), data.iter().map(|d| d.1).collect()).unwrap();
            if let Ok(c) = correlation_coefficient(&a, &b, None) {
                prop_assert!((0.0..=1.0).contains(&c));
                let a2 = a.mapv(|v| -scale * v + shift);
                let c2 = correlation_coefficient(&a2, &b, None).unwrap();
                prop_assert!((c - c2).abs() < 1e-9);
            }
        }

        #[test]
        fn zero_shift_identity(vals in proptest::collection::vec(1.0f64..1e4, 8)) {
            let s = Array2::from_shape_vec((2, 2), vals[..4].to_vec()).unwrap();
            let i = Array2::from_shape_vec((2, 2), vals[4..].to_vec()).unwrap();
            let p = image(s, i);
            prop_assert_eq!(dci_alpha(&p, [0, 0]).unwrap(), ssnqi_alpha(&p).unwrap());
        }
    }
}
