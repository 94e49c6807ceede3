//! Frame bundles, raw grids, CSV tables and PGM previews.
//!
//! A bundle is a directory holding `manifest.json`, one little-endian `u32`
//! row-major grid per frame, `ground_truth.json` and the efficiency and
//! absorption maps as little-endian `f64` grids.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{load_json, SceneSpec};
use crate::error::{Error, Result};
use crate::estimators::flat_field::FlatField;
use crate::frame::Frame;
use crate::sim::{GroundTruth, SceneConfig, ShotTruth};

pub const BUNDLE_FORMAT: &str = "twinbeam-frame-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_raw_u32(path: &Path, grid: &Array2<u32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.len() * 4);
    for v in grid.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_raw_f64(path: &Path, grid: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.len() * 8);
    for v in grid.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_exact_bytes(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(expected);
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut r| r.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::geometry(format!(
            "{} holds {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

pub fn read_raw_u32(path: &Path, dim: (usize, usize)) -> Result<Array2<u32>> {
    let bytes = read_exact_bytes(path, dim.0 * dim.1 * 4)?;
    let v = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Ok(Array2::from_shape_vec(dim, v).expect("length checked"))
}

pub fn read_raw_f64(path: &Path, dim: (usize, usize)) -> Result<Array2<f64>> {
    let bytes = read_exact_bytes(path, dim.0 * dim.1 * 8)?;
    let v = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Array2::from_shape_vec(dim, v).expect("length checked"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub file: String,
    pub width: usize,
    pub height: usize,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFiles {
    pub record: String,
    pub eta_s: GridFile,
    pub eta_i: GridFile,
    #[serde(default)]
    pub alpha: Option<GridFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub dtype: String,
    /// Readout grid, i.e. after hardware binning.
    pub width: usize,
    pub height: usize,
    pub bin: usize,
    pub n_frames: usize,
    pub with_object: bool,
    pub scene: SceneSpec,
    pub frames: Vec<String>,
    pub ground_truth: GroundTruthFiles,
}

fn frame_name(shot_id: u64) -> String {
    format!("frame_{shot_id:06}.u32")
}

/// Writes frames of one stack as they are produced.
pub struct BundleWriter {
    dir: PathBuf,
    manifest: Manifest,
    config: SceneConfig,
    shots: Vec<ShotTruth>,
}

impl BundleWriter {
    pub fn create(dir: &Path, scene: &SceneSpec, config: &SceneConfig, with_object: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hb = config.detection.hardware_bin;
        let grid = |file: &str, a: &Array2<f64>| GridFile {
            file: file.into(),
            width: a.ncols(),
            height: a.nrows(),
            dtype: "f64".into(),
        };
        let alpha = config.object.as_ref().filter(|_| with_object);
        let manifest = Manifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            endianness: "little".into(),
            dtype: "u32".into(),
            width: config.source.grid_width / hb,
            height: config.source.grid_height / hb,
            bin: hb,
            n_frames: 0,
            with_object,
            scene: scene.clone(),
            frames: Vec::new(),
            ground_truth: GroundTruthFiles {
                record: "ground_truth.json".into(),
                eta_s: grid("eta_s.f64", &config.detection.eta_s),
                eta_i: grid("eta_i.f64", &config.detection.eta_i),
                alpha: alpha.map(|o| grid("alpha.f64", &o.alpha)),
            },
        };
        write_raw_f64(&dir.join("eta_s.f64"), &config.detection.eta_s)?;
        write_raw_f64(&dir.join("eta_i.f64"), &config.detection.eta_i)?;
        if let Some(o) = alpha {
            write_raw_f64(&dir.join("alpha.f64"), &o.alpha)?;
        }
        Ok(BundleWriter {
            dir: dir.to_path_buf(),
            manifest,
            config: config.clone(),
            shots: Vec::new(),
        })
    }

    pub fn push(&mut self, frame: &Frame, truth: ShotTruth) -> Result<()> {
        if frame.width() != self.manifest.width || frame.height() != self.manifest.height {
            return Err(Error::geometry("frame does not match the bundle grid"));
        }
        let name = frame_name(frame.shot_id);
        write_raw_u32(&self.dir.join(&name), &frame.counts)?;
        self.manifest.frames.push(name);
        self.manifest.n_frames += 1;
        self.shots.push(truth);
        Ok(())
    }

    pub fn finish(self) -> Result<Bundle> {
        let truth = GroundTruth {
            center: self.config.source.center,
            regions: self.config.regions,
            with_object: self.manifest.with_object,
            shots: self.shots,
        };
        write_json(&self.dir.join(&self.manifest.ground_truth.record), &truth)?;
        write_json(&self.dir.join(MANIFEST), &self.manifest)?;
        Ok(Bundle {
            dir: self.dir,
            manifest: self.manifest,
        })
    }
}

/// A bundle on disk; frames are read on demand.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Bundle {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let manifest: Manifest = load_json(&path)?;
        if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
            return Err(Error::config(format!(
                "{} is not a version {BUNDLE_VERSION} frame bundle",
                path.display()
            )));
        }
        if manifest.endianness != "little" || manifest.dtype != "u32" {
            return Err(Error::config(format!(
                "unsupported frame encoding {} {}",
                manifest.endianness, manifest.dtype
            )));
        }
        if manifest.frames.len() != manifest.n_frames {
            return Err(Error::config("manifest frame list does not match n_frames"));
        }
        Ok(Bundle {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.n_frames
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.n_frames == 0
    }

    pub fn frame(&self, index: usize) -> Result<Frame> {
        let name = self
            .manifest
            .frames
            .get(index)
            .ok_or_else(|| Error::config(format!("frame {index} not in bundle")))?;
        let counts = read_raw_u32(&self.dir.join(name), (self.manifest.height, self.manifest.width))?;
        let shot_id = name
            .trim_start_matches("frame_")
            .trim_end_matches(".u32")
            .parse()
            .unwrap_or(index as u64);
        Ok(Frame::new(counts, self.manifest.bin, shot_id))
    }

    pub fn frames(&self, limit: Option<usize>) -> Result<Vec<Frame>> {
        let n = limit.unwrap_or(self.len()).min(self.len());
        (0..n).map(|i| self.frame(i)).collect()
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        load_json(&self.dir.join(&self.manifest.ground_truth.record))
    }

    fn grid(&self, g: &GridFile) -> Result<Array2<f64>> {
        read_raw_f64(&self.dir.join(&g.file), (g.height, g.width))
    }

    pub fn eta_maps(&self) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((
            self.grid(&self.manifest.ground_truth.eta_s)?,
            self.grid(&self.manifest.ground_truth.eta_i)?,
        ))
    }

    pub fn alpha(&self) -> Result<Option<Array2<f64>>> {
        self.manifest
            .ground_truth
            .alpha
            .as_ref()
            .map(|g| self.grid(g))
            .transpose()
    }

    /// Fine-pixel sensor dimensions `(width, height)`.
    pub fn fine_dims(&self) -> (usize, usize) {
        (
            self.manifest.width * self.manifest.bin,
            self.manifest.height * self.manifest.bin,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlatFieldMeta {
    bin: usize,
    q_frames_used: usize,
    width: usize,
    height: usize,
    g_s: String,
    g_i: String,
    live: String,
    dead_pixels: usize,
}

/// Writes `<stem>.json` plus `<stem>_g_s.f64`, `<stem>_g_i.f64`, `<stem>_live.f64`.
pub fn save_flat_field(dir: &Path, stem: &str, flat: &FlatField) -> Result<()> {
    let (h, w) = flat.g_s.dim();
    let meta = FlatFieldMeta {
        bin: flat.bin,
        q_frames_used: flat.q_frames_used,
        width: w,
        height: h,
        g_s: format!("{stem}_g_s.f64"),
        g_i: format!("{stem}_g_i.f64"),
        live: format!("{stem}_live.f64"),
        dead_pixels: flat.dead_pixels(),
    };
    write_raw_f64(&dir.join(&meta.g_s), &flat.g_s)?;
    write_raw_f64(&dir.join(&meta.g_i), &flat.g_i)?;
    write_raw_f64(&dir.join(&meta.live), &flat.live.mapv(|l| if l { 1.0 } else { 0.0 }))?;
    write_json(&dir.join(format!("{stem}.json")), &meta)
}

pub fn load_flat_field(dir: &Path, stem: &str) -> Result<FlatField> {
    let meta: FlatFieldMeta = load_json(&dir.join(format!("{stem}.json")))?;
    let dim = (meta.height, meta.width);
    Ok(FlatField {
        g_s: read_raw_f64(&dir.join(&meta.g_s), dim)?,
        g_i: read_raw_f64(&dir.join(&meta.g_i), dim)?,
        live: read_raw_f64(&dir.join(&meta.live), dim)?.mapv(|v| v != 0.0),
        bin: meta.bin,
        q_frames_used: meta.q_frames_used,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a grid as `y,x,value` rows.
pub fn write_grid_csv(path: &Path, grid: &Array2<f64>) -> Result<()> {
    #[derive(Serialize)]
    struct Cell {
        y: usize,
        x: usize,
        value: f64,
    }
    let rows: Vec<Cell> = grid
        .indexed_iter()
        .map(|((y, x), &value)| Cell { y, x, value })
        .collect();
    write_csv(path, &rows)
}

/// Gray levels 0..=255 map linearly onto `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgmScale {
    pub min: f64,
    pub max: f64,
}

impl PgmScale {
    pub fn of(grid: &Array2<f64>) -> Self {
        let (min, max) = grid
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if min.is_finite() {
            PgmScale { min, max }
        } else {
            PgmScale { min: 0.0, max: 0.0 }
        }
    }

    fn level(&self, v: f64) -> u8 {
        if self.max.partial_cmp(&self.min) != Some(std::cmp::Ordering::Greater) || !v.is_finite() {
            return 0;
        }
        ((v - self.min) / (self.max - self.min) * 255.0)
            .round()
            .clamp(0.0, 255.0) as u8
    }
}

/// Writes a P5 (binary) or P2 (ASCII) grayscale image.
pub fn write_pgm(path: &Path, grid: &Array2<f64>, scale: PgmScale, binary: bool) -> Result<()> {
    let (h, w) = grid.dim();
    let mut out = create_file(path)?;
    let res = (|| {
        if binary {
            write!(out, "P5\n{w} {h}\n255\n")?;
            let bytes: Vec<u8> = grid.iter().map(|&v| scale.level(v)).collect();
            out.write_all(&bytes)?;
        } else {
            write!(out, "P2\n# scale {} {}\n{w} {h}\n255\n", scale.min, scale.max)?;
            for row in grid.rows() {
                let line: Vec<String> = row.iter().map(|&v| scale.level(v).to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}
