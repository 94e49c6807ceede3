//! JSON scene and run descriptions, resolved into [`SceneConfig`].

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::geometry::{Rect, RegionPair};
use crate::imaging::ClassSpec;
use crate::sim::{DetectionParams, ObjectMask, SceneConfig, SourceParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// Generator for a per-pixel map over a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MapSpec {
    Uniform {
        value: f64,
    },
    /// Ramp whose extreme pixels differ by `peak_to_peak` around `mean`.
    Linear {
        mean: f64,
        peak_to_peak: f64,
        axis: Axis,
    },
    /// `peak · (1 − edge_drop · r²/r_max²)` about the region center, with
    /// `r_max` the half diagonal.
    Radial {
        peak: f64,
        edge_drop: f64,
    },
}

impl MapSpec {
    pub fn render(&self, width: usize, height: usize) -> Array2<f64> {
        match *self {
            MapSpec::Uniform { value } => Array2::from_elem((height, width), value),
            MapSpec::Linear {
                mean,
                peak_to_peak,
                axis,
            } => {
                let len = match axis {
                    Axis::X => width,
                    Axis::Y => height,
                };
                let t = |k: usize| {
                    if len < 2 {
                        0.0
                    } else {
                        k as f64 / (len - 1) as f64 - 0.5
                    }
                };
                Array2::from_shape_fn((height, width), |(y, x)| {
                    let k = if axis == Axis::X { x } else { y };
                    mean + peak_to_peak * t(k)
                })
            }
            MapSpec::Radial { peak, edge_drop } => {
                let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
                let r2max = cx * cx + cy * cy;
                Array2::from_shape_fn((height, width), |(y, x)| {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    peak * (1.0 - edge_drop * (dx * dx + dy * dy) / r2max)
                })
            }
        }
    }
}

/// Absorbing object placed inside the signal region (coordinates relative to it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectSpec {
    /// Uniform absorption over a rectangle.
    Rect { rect: Rect, alpha: f64 },
    /// A Π-shaped glyph inscribed in `rect`: a bar over the top quarter and two
    /// legs, each a fifth of the width.
    Pi { rect: Rect, alpha: f64 },
}

impl ObjectSpec {
    pub fn render(&self, width: usize, height: usize) -> Result<Array2<f64>> {
        let (ObjectSpec::Rect { rect, alpha } | ObjectSpec::Pi { rect, alpha }) = self;
        if !rect.fits_within(width, height) {
            return Err(Error::geometry(format!(
                "object {rect:?} exceeds the {width}x{height} signal region"
            )));
        }
        let mut a = Array2::zeros((height, width));
        let inside: Box<dyn Fn(usize, usize) -> bool> = match self {
            ObjectSpec::Rect { .. } => Box::new(|_, _| true),
            ObjectSpec::Pi { rect, .. } => {
                let (w, h) = (rect.width, rect.height);
                Box::new(move |u, v| {
                    v < h / 4 || (v >= h / 4 && ((u >= w / 5 && u < 2 * w / 5) || (u >= 3 * w / 5 && u < 4 * w / 5)))
                })
            }
        };
        for v in 0..rect.height {
            for u in 0..rect.width {
                if inside(u, v) {
                    a[[rect.y + v, rect.x + u]] = *alpha;
                }
            }
        }
        Ok(a)
    }
}

fn default_gain_jitter() -> f64 {
    0.1
}

fn default_hardware_bin() -> usize {
    1
}

fn default_dci_shift() -> [i64; 2] {
    [1, 0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub grid_width: usize,
    pub grid_height: usize,
    pub cells_x: usize,
    pub cells_y: usize,
    pub mu: f64,
    pub m_temp: u64,
    #[serde(default = "default_gain_jitter")]
    pub gain_jitter: f64,
    #[serde(default)]
    pub coherence_jitter: f64,
    /// Defaults to the grid center.
    #[serde(default)]
    pub center: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSpec {
    pub eta_s: MapSpec,
    pub eta_i: MapSpec,
    #[serde(default)]
    pub straylight_mean: f64,
    #[serde(default)]
    pub readout_sigma: f64,
    #[serde(default = "default_hardware_bin")]
    pub hardware_bin: usize,
}

/// Regions in fine pixels. The idler region defaults to the reflection of the
/// signal region about `center`, which defaults to the source center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub signal: Rect,
    #[serde(default)]
    pub center: Option<[f64; 2]>,
    #[serde(default)]
    pub idler: Option<Rect>,
    #[serde(default = "default_dci_shift")]
    pub dci_shift: [i64; 2],
}

impl RegionSpec {
    pub fn resolve(&self, default_center: [f64; 2]) -> Result<RegionPair> {
        let center = self.center.unwrap_or(default_center);
        match self.idler {
            None => RegionPair::reflected(self.signal, center, self.dci_shift),
            Some(idler) => {
                let pair = RegionPair {
                    signal: self.signal,
                    idler,
                    center,
                    dci_shift: self.dci_shift,
                };
                pair.check_consistency()?;
                Ok(pair)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub source: SourceSpec,
    pub detection: DetectionSpec,
    #[serde(default)]
    pub object: Option<ObjectSpec>,
    pub regions: RegionSpec,
    pub seed: u64,
}

impl SceneSpec {
    pub fn source_center(&self) -> [f64; 2] {
        self.source.center.unwrap_or([
            self.source.grid_width as f64 / 2.0,
            self.source.grid_height as f64 / 2.0,
        ])
    }

    pub fn resolve(&self) -> Result<SceneConfig> {
        let s = &self.source;
        let center = self.source_center();
        let regions = self.regions.resolve(center)?;
        let r = regions.signal;
        let object = self
            .object
            .as_ref()
            .map(|o| o.render(r.width, r.height).map(|alpha| ObjectMask { alpha }))
            .transpose()?;
        let config = SceneConfig {
            source: SourceParams {
                grid_width: s.grid_width,
                grid_height: s.grid_height,
                cells_x: s.cells_x,
                cells_y: s.cells_y,
                mu: s.mu,
                m_temp: s.m_temp,
                gain_jitter: s.gain_jitter,
                coherence_jitter: s.coherence_jitter,
                center,
            },
            detection: DetectionParams {
                eta_s: self.detection.eta_s.render(r.width, r.height),
                eta_i: self.detection.eta_i.render(regions.idler.width, regions.idler.height),
                straylight_mean: self.detection.straylight_mean,
                readout_sigma: self.detection.readout_sigma,
                hardware_bin: self.detection.hardware_bin,
            },
            object,
            regions,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Reads a JSON document, naming the file in errors.
pub fn load_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scene: SceneSpec,
    pub n_frames: usize,
    #[serde(default)]
    pub with_object: bool,
    #[serde(default)]
    pub first_shot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub bundle: std::path::PathBuf,
    pub q: usize,
    pub bins: Vec<usize>,
    /// Overrides the regions recorded in the bundle.
    #[serde(default)]
    pub regions: Option<RegionSpec>,
}

fn default_window() -> usize {
    6
}

fn default_scan_bin() -> usize {
    2
}

fn default_tolerance() -> f64 {
    crate::alignment::DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindCenterConfig {
    pub bundle: std::path::PathBuf,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_scan_bin")]
    pub scan_bin: usize,
    /// Frames used from the start of the bundle; all when absent.
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub regions: Option<RegionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NrfConfig {
    pub bundle: std::path::PathBuf,
    pub bins: Vec<usize>,
    /// Dark stack for the background correction.
    #[serde(default)]
    pub background: Option<std::path::PathBuf>,
    /// Object-free stack for the flat field; the analysed bundle itself when absent.
    #[serde(default)]
    pub flat_field: Option<std::path::PathBuf>,
    #[serde(default)]
    pub flat_field_q: Option<usize>,
    #[serde(default)]
    pub apply_flat_field: bool,
    #[serde(default)]
    pub regions: Option<RegionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageConfig {
    pub object: std::path::PathBuf,
    pub blank: std::path::PathBuf,
    pub bin: usize,
    #[serde(default)]
    pub flat_field_q: Option<usize>,
    #[serde(default)]
    pub regions: Option<RegionSpec>,
    /// Frames of the object bundle averaged per exported mean image.
    #[serde(default)]
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrStudyConfig {
    pub object: std::path::PathBuf,
    pub blank: std::path::PathBuf,
    pub bin: usize,
    /// Nominal absorption used for the theory curves.
    pub alpha: f64,
    #[serde(default)]
    pub flat_field_q: Option<usize>,
    #[serde(default)]
    pub classes: ClassSpec,
    #[serde(default)]
    pub regions: Option<RegionSpec>,
}
