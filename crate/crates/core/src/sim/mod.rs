//! Twin-beam frame generator.
//!
//! Each coherence cell of the signal half of the sensor emits a multi-thermal
//! number of photon pairs per shot. One photon of each pair lands uniformly
//! inside the cell; its twin lands at the point-symmetric position about the
//! center, displaced by Gaussian jitter. Both are thinned independently by the
//! detection efficiency (and the object, for the signal photon), then straylight
//! and read noise are added.

use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Open01, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::geometry::{Rect, RegionPair};
use crate::frame::Frame;
use crate::rng::{shot_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub grid_width: usize,
    pub grid_height: usize,
    pub cells_x: usize,
    pub cells_y: usize,
    pub mu: f64,
    pub m_temp: u64,
    pub gain_jitter: f64,
    pub coherence_jitter: f64,
    pub center: [f64; 2],
}

impl SourceParams {
    /// Width of the signal half of the sensor, `[0, split)`.
    pub fn split(&self) -> usize {
        self.grid_width / 2
    }

    pub fn cell_size(&self) -> (usize, usize) {
        (self.split() / self.cells_x, self.grid_height / self.cells_y)
    }

    /// Mean pairs per fine pixel per shot at unit gain.
    pub fn pairs_per_pixel(&self) -> f64 {
        let (w, h) = self.cell_size();
        self.mu * self.m_temp as f64 / (w * h) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Efficiency over the signal region, `[[y, x]]` relative to its origin.
    pub eta_s: Array2<f64>,
    /// Efficiency over the idler region in sensor orientation.
    pub eta_i: Array2<f64>,
    pub straylight_mean: f64,
    pub readout_sigma: f64,
    /// Fine pixels per side summed on chip before read noise is added.
    pub hardware_bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    /// Absorption over the signal region.
    pub alpha: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub source: SourceParams,
    pub detection: DetectionParams,
    pub object: Option<ObjectMask>,
    pub regions: RegionPair,
    pub seed: u64,
}

fn check_unit_map(name: &str, map: &Array2<f64>, rect: &Rect) -> Result<()> {
    if map.dim() != (rect.height, rect.width) {
        return Err(Error::geometry(format!(
            "{name} map is {}x{} but its region is {}x{}",
            map.ncols(),
            map.nrows(),
            rect.width,
            rect.height
        )));
    }
    if let Some(v) = map.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::config(format!("{name} value {v} outside [0, 1]")));
    }
    Ok(())
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.source;
        let d = &self.detection;
        if s.grid_width == 0 || s.grid_height == 0 || !s.grid_width.is_multiple_of(2) {
            return Err(Error::config(format!(
                "grid {}x{} must be non-empty with an even width",
                s.grid_width, s.grid_height
            )));
        }
        if s.cells_x == 0 || s.cells_y == 0 {
            return Err(Error::config("cells_x and cells_y must be at least 1"));
        }
        if !s.split().is_multiple_of(s.cells_x) {
            return Err(Error::NotDivisible {
                dimension: "signal half width",
                size: s.split(),
                factor: s.cells_x,
            });
        }
        if !s.grid_height.is_multiple_of(s.cells_y) {
            return Err(Error::NotDivisible {
                dimension: "grid height",
                size: s.grid_height,
                factor: s.cells_y,
            });
        }
        if !(s.mu.is_finite() && s.mu >= 0.0) {
            return Err(Error::config(format!("mu = {} must be finite and >= 0", s.mu)));
        }
        if s.m_temp == 0 {
            return Err(Error::config("m_temp must be at least 1"));
        }
        for (name, v) in [
            ("gain_jitter", s.gain_jitter),
            ("coherence_jitter", s.coherence_jitter),
            ("straylight_mean", d.straylight_mean),
            ("readout_sigma", d.readout_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if !s.center.iter().all(|c| c.is_finite()) {
            return Err(Error::config("center must be finite"));
        }
        let hb = d.hardware_bin;
        if hb == 0 {
            return Err(Error::config("hardware_bin must be at least 1"));
        }
        if !s.grid_width.is_multiple_of(hb) {
            return Err(Error::NotDivisible {
                dimension: "grid width",
                size: s.grid_width,
                factor: hb,
            });
        }
        if !s.grid_height.is_multiple_of(hb) {
            return Err(Error::NotDivisible {
                dimension: "grid height",
                size: s.grid_height,
                factor: hb,
            });
        }
        let r = &self.regions;
        if !r.signal.same_size(&r.idler) {
            return Err(Error::geometry("signal and idler regions are not congruent"));
        }
        r.check_fits(s.grid_width, s.grid_height)?;
        if r.signal.right() > s.split() {
            return Err(Error::geometry(format!(
                "signal region {:?} crosses into the idler half (x >= {})",
                r.signal,
                s.split()
            )));
        }
        if r.idler.x < s.split() {
            return Err(Error::geometry(format!(
                "idler region {:?} crosses into the signal half (x < {})",
                r.idler,
                s.split()
            )));
        }
        check_unit_map("eta_s", &d.eta_s, &r.signal)?;
        check_unit_map("eta_i", &d.eta_i, &r.idler)?;
        if let Some(obj) = &self.object {
            check_unit_map("alpha", &obj.alpha, &r.signal)?;
        }
        Ok(())
    }
}

/// Pair count of one coherence cell in one shot: the sum of `m_temp`
/// Bose-Einstein modes of mean `gain * mu`, drawn as a Gamma-Poisson mixture.
pub fn sample_mode_pair_counts<R: Rng + ?Sized>(mu: f64, m_temp: u64, gain: f64, rng: &mut R) -> u64 {
    let scale = gain * mu;
    if scale <= 0.0 || m_temp == 0 {
        return 0;
    }
    let lambda = Gamma::new(m_temp as f64, scale)
        .expect("shape and scale are positive")
        .sample(rng);
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("lambda is positive").sample(rng) as u64
}

/// Per-shot record kept alongside the frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotTruth {
    pub shot_id: u64,
    pub gain: f64,
    pub pairs: u64,
    /// Idler candidates that fell outside the idler half of the sensor.
    pub dropped_idler: u64,
    /// Readout pixels that were clamped to zero after read noise.
    pub clamped_pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub center: [f64; 2],
    pub regions: RegionPair,
    pub with_object: bool,
    pub shots: Vec<ShotTruth>,
}

#[derive(Debug, Clone)]
pub struct Stack {
    pub frames: Vec<Frame>,
    pub truth: GroundTruth,
}

/// Scene with its survival probabilities precomputed over the whole sensor.
///
/// Survival is stored as a threshold on a uniform `u32`, so a photon
/// survives with probability `threshold / 2^32`.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SceneConfig,
    signal_clear: Vec<u64>,
    signal_object: Vec<u64>,
    idler: Vec<u64>,
}

/// Samples `map` (congruent to `rect`) at sensor pixel `(x, y)`, clamping to
/// the nearest region pixel outside the region.
fn clamped(map: &Array2<f64>, rect: &Rect, x: usize, y: usize) -> f64 {
    let u = x.clamp(rect.x, rect.right() - 1) - rect.x;
    let v = y.clamp(rect.y, rect.bottom() - 1) - rect.y;
    map[[v, u]]
}

fn threshold(p: f64) -> u64 {
    (p.clamp(0.0, 1.0) * 4_294_967_296.0).round() as u64
}

const LOW: u64 = 0xffff_ffff;

// Uniform integer in [0, n) from 32 random bits.
#[inline]
fn below(bits: u64, n: usize) -> usize {
    (((bits & LOW) * n as u64) >> 32) as usize
}

impl Simulator {
    pub fn new(config: SceneConfig) -> Result<Self> {
        config.validate()?;
        let s = &config.source;
        let (h, w, split) = (s.grid_height, s.grid_width, s.split());
        let rs = config.regions.signal;
        let ri = config.regions.idler;
        let eta_s = &config.detection.eta_s;
        let eta_i = &config.detection.eta_i;
        let mut signal_clear = Vec::with_capacity(h * split);
        let mut signal_object = Vec::with_capacity(h * split);
        for y in 0..h {
            for x in 0..split {
                let eta = clamped(eta_s, &rs, x, y);
                let a = match &config.object {
                    Some(obj) if rs.contains(x, y) => obj.alpha[[y - rs.y, x - rs.x]],
                    _ => 0.0,
                };
                signal_clear.push(threshold(eta));
                signal_object.push(threshold(eta * (1.0 - a)));
            }
        }
        let mut idler = Vec::with_capacity(h * (w - split));
        for y in 0..h {
            for x in split..w {
                idler.push(threshold(clamped(eta_i, &ri, x, y)));
            }
        }
        Ok(Simulator {
            config,
            signal_clear,
            signal_object,
            idler,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    /// Incident photons on the fine grid, before background and read noise.
    pub fn photons(&self, shot_id: u64, with_object: bool) -> (Array2<u32>, ShotTruth) {
        let s = &self.config.source;
        let mut rng = shot_rng(self.config.seed, shot_id, Stream::Photons);
        let gain = draw_gain(s.gain_jitter, &mut rng);
        let (w, h, split) = (s.grid_width, s.grid_height, s.split());
        let iw = w - split;
        let (cw, ch) = s.cell_size();
        let [cx, cy] = s.center;
        let jitter = s.coherence_jitter;
        let fractional = (2.0 * cx).fract() != 0.0 || (2.0 * cy).fract() != 0.0;
        let sub_pixel = jitter > 0.0 || fractional;
        let surv_s = if with_object {
            &self.signal_object
        } else {
            &self.signal_clear
        };

        let mut counts = vec![0u32; h * w];
        let mut pairs = 0u64;
        let mut dropped = 0u64;
        for j in 0..s.cells_y {
            for i in 0..s.cells_x {
                let n = sample_mode_pair_counts(s.mu, s.m_temp, gain, &mut rng);
                pairs += n;
                for _ in 0..n {
                    let pos = rng.next_u64();
                    let x = i * cw + below(pos, cw);
                    let y = j * ch + below(pos >> 32, ch);
                    let survive = rng.next_u64();
                    if (survive & LOW) < surv_s[y * split + x] {
                        counts[y * w + x] += 1;
                    }
                    let (xi, yi) = if sub_pixel {
                        let ux: f64 = Open01.sample(&mut rng);
                        let uy: f64 = Open01.sample(&mut rng);
                        let mut xi = 2.0 * cx - (x as f64 + ux);
                        let mut yi = 2.0 * cy - (y as f64 + uy);
                        if jitter > 0.0 {
                            let dx: f64 = rng.sample(StandardNormal);
                            let dy: f64 = rng.sample(StandardNormal);
                            xi += jitter * dx;
                            yi += jitter * dy;
                        }
                        (xi.floor(), yi.floor())
                    } else {
                        ((2.0 * cx - x as f64 - 1.0), (2.0 * cy - y as f64 - 1.0))
                    };
                    if xi < split as f64 || xi >= w as f64 || yi < 0.0 || yi >= h as f64 {
                        dropped += 1;
                        continue;
                    }
                    let (xi, yi) = (xi as usize, yi as usize);
                    if (survive >> 32) < self.idler[yi * iw + xi - split] {
                        counts[yi * w + xi] += 1;
                    }
                }
            }
        }
        let truth = ShotTruth {
            shot_id,
            gain,
            pairs,
            dropped_idler: dropped,
            clamped_pixels: 0,
        };
        let counts = Array2::from_shape_vec((h, w), counts).expect("grid size");
        (counts, truth)
    }

    /// Adds straylight, sums hardware bins and applies read noise.
    /// Returns the readout frame and the number of pixels clamped at zero.
    ///
    /// Straylight is independent Poisson per fine pixel, so each hardware
    /// superpixel receives Poisson(`hardware_bin² · straylight_mean`).
    pub fn detect(&self, photons: Array2<u32>, shot_id: u64) -> (Frame, u64) {
        let d = &self.config.detection;
        let mut rng = shot_rng(self.config.seed, shot_id, Stream::Background);
        let hb = d.hardware_bin;
        let (h, w) = photons.dim();
        let mut binned = if hb == 1 {
            photons
        } else {
            let mut out = Array2::<u32>::zeros((h / hb, w / hb));
            for ((y, x), &c) in photons.indexed_iter() {
                out[[y / hb, x / hb]] += c;
            }
            out
        };
        let stray = d.straylight_mean * (hb * hb) as f64;
        if stray > 0.0 {
            let bg = Poisson::new(stray).expect("straylight mean is positive");
            for c in binned.iter_mut() {
                *c += bg.sample(&mut rng) as u32;
            }
        }
        let mut clamped = 0u64;
        if d.readout_sigma > 0.0 {
            let noise = Normal::new(0.0, d.readout_sigma).expect("readout sigma is finite");
            for c in binned.iter_mut() {
                let v = (f64::from(*c) + noise.sample(&mut rng)).round();
                if v < 0.0 {
                    clamped += 1;
                    *c = 0;
                } else {
                    *c = v as u32;
                }
            }
        }
        (Frame::new(binned, hb, shot_id), clamped)
    }

    pub fn frame(&self, shot_id: u64, with_object: bool) -> (Frame, ShotTruth) {
        let (photons, mut truth) = self.photons(shot_id, with_object);
        let (frame, clamped) = self.detect(photons, shot_id);
        truth.clamped_pixels = clamped;
        (frame, truth)
    }

    /// Frames for shots `first..first + n`, generated in parallel.
    pub fn stack(&self, first: u64, n: usize, with_object: bool) -> Stack {
        let (frames, shots): (Vec<Frame>, Vec<ShotTruth>) = (first..first + n as u64)
            .into_par_iter()
            .map(|id| self.frame(id, with_object))
            .unzip();
        Stack {
            frames,
            truth: GroundTruth {
                center: self.config.source.center,
                regions: self.config.regions,
                with_object,
                shots,
            },
        }
    }
}

fn draw_gain(jitter: f64, rng: &mut ChaCha8Rng) -> f64 {
    if jitter == 0.0 {
        return 1.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let g = 1.0 + jitter * z;
        if g > 0.0 {
            return g;
        }
    }
}

pub fn generate_frame(config: &SceneConfig, shot_id: u64, with_object: bool) -> Result<(Frame, ShotTruth)> {
    Ok(Simulator::new(config.clone())?.frame(shot_id, with_object))
}

pub fn generate_stack(config: &SceneConfig, n_frames: usize, with_object: bool) -> Result<Stack> {
    if n_frames == 0 {
        return Err(Error::config("n_frames must be at least 1"));
    }
    Ok(Simulator::new(config.clone())?.stack(0, n_frames, with_object))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::Geometric;

    pub(crate) fn uniform_scene(w: usize, h: usize, eta: f64) -> SceneConfig {
        let signal = Rect::new(0, 0, w / 2, h);
        let regions = RegionPair::reflected(signal, [w as f64 / 2.0, h as f64 / 2.0], [1, 0]).unwrap();
        SceneConfig {
            source: SourceParams {
                grid_width: w,
                grid_height: h,
                cells_x: w / 4,
                cells_y: h / 2,
                mu: 0.1,
                m_temp: 200,
                gain_jitter: 0.0,
                coherence_jitter: 0.0,
                center: regions.center,
            },
            detection: DetectionParams {
                eta_s: Array2::from_elem((h, w / 2), eta),
                eta_i: Array2::from_elem((h, w / 2), eta),
                straylight_mean: 0.0,
                readout_sigma: 0.0,
                hardware_bin: 1,
            },
            object: None,
            regions,
            seed: 11,
        }
    }

    // Oracle: direct sum of per-mode geometric draws.
    fn geometric_sum<R: Rng>(mean: f64, m: u64, rng: &mut R) -> u64 {
        let g = Geometric::new(1.0 / (1.0 + mean)).unwrap();
        (0..m).map(|_| g.sample(rng)).sum()
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn zero_mu_gives_zero_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [1, 7, 5000] {
            assert_eq!(sample_mode_pair_counts(0.0, m, 1.0, &mut rng), 0);
        }
    }

    #[test]
    fn pair_count_moments_match_geometric_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_mode_pair_counts(0.1, 5000, 1.0, &mut rng) as f64)
            .collect();
        let (m, v) = mean_var(&xs);
        assert!((m - 500.0).abs() < 3.0 * (550.0f64 / n as f64).sqrt(), "mean {m}");
        assert!((v / 550.0 - 1.0).abs() < 0.05, "var {v}");

        // the oracle itself reproduces the same moments on fewer draws
        let ys: Vec<f64> = (0..2_000).map(|_| geometric_sum(0.1, 5000, &mut rng) as f64).collect();
        let (mo, vo) = mean_var(&ys);
        assert!((mo - m).abs() < 4.0 * (550.0f64 / 2_000.0).sqrt());
        assert!((vo / v - 1.0).abs() < 0.15);
    }

    #[test]
    fn single_mode_is_geometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000usize;
        let mut observed = [0usize; 4];
        for _ in 0..n {
            let k = sample_mode_pair_counts(0.1, 1, 1.0, &mut rng) as usize;
            observed[k.min(3)] += 1;
        }
        let p: f64 = 1.0 / 1.1;
        let expected = [p, p * (1.0 - p), p * (1.0 - p).powi(2), (1.0 - p).powi(3)];
        let chi2: f64 = observed
            .iter()
            .zip(expected)
            .map(|(&o, e)| {
                let e = e * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // chi-square with 3 degrees of freedom, p = 0.01
        assert!(chi2 < 11.34, "chi2 {chi2}");
    }

    #[test]
    fn lossless_frame_is_symmetric() {
        let sim = Simulator::new(uniform_scene(16, 8, 1.0)).unwrap();
        let (f, truth) = sim.frame(0, false);
        assert!(truth.pairs > 0);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(f.counts[[y, x]], f.counts[[7 - y, 15 - x]]);
            }
        }
    }

    #[test]
    fn stack_is_deterministic_and_order_free() {
        let mut cfg = uniform_scene(16, 8, 0.7);
        cfg.detection.straylight_mean = 0.5;
        cfg.detection.readout_sigma = 1.0;
        cfg.source.gain_jitter = 0.1;
        cfg.source.coherence_jitter = 1.0;
        let sim = Simulator::new(cfg).unwrap();
        let a = sim.stack(0, 6, false);
        let b = sim.stack(0, 6, false);
        assert_eq!(a.frames, b.frames);
        let single: Vec<Frame> = (0..6).map(|i| sim.frame(i, false).0).collect();
        assert_eq!(a.frames, single);
        assert_ne!(a.frames[0], a.frames[1]);
    }

    #[test]
    fn hardware_bin_preserves_photons() {
        let mut cfg = uniform_scene(16, 8, 0.7);
        let sim1 = Simulator::new(cfg.clone()).unwrap();
        cfg.detection.hardware_bin = 4;
        let sim4 = Simulator::new(cfg).unwrap();
        let (a, _) = sim1.frame(3, false);
        let (b, _) = sim4.frame(3, false);
        assert_eq!(b.bin, 4);
        assert_eq!(b.counts.dim(), (2, 4));
        assert_eq!(a.total(), b.total());
    }

    #[test]
    fn mismatched_map_is_rejected() {
        let mut cfg = uniform_scene(16, 8, 0.7);
        cfg.detection.eta_i = Array2::from_elem((8, 7), 0.7);
        assert!(matches!(Simulator::new(cfg), Err(Error::Geometry(_))));
        let mut cfg = uniform_scene(16, 8, 0.7);
        cfg.object = Some(ObjectMask {
            alpha: Array2::zeros((3, 3)),
        });
        assert!(matches!(Simulator::new(cfg), Err(Error::Geometry(_))));
    }

    #[test]
    fn non_integer_center_needs_sub_pixel_positions() {
        let mut cfg = uniform_scene(16, 8, 1.0);
        cfg.source.center = [8.25, 4.0];
        let sim = Simulator::new(cfg).unwrap();
        let (f, truth) = sim.frame(0, false);
        let s: u64 = f.counts.slice(ndarray::s![.., ..8]).iter().map(|&c| c as u64).sum();
        let i: u64 = f.counts.slice(ndarray::s![.., 8..]).iter().map(|&c| c as u64).sum();
        assert_eq!(s, truth.pairs);
        assert_eq!(i + truth.dropped_idler, truth.pairs);
        assert!(truth.dropped_idler > 0);
    }
}
