//! Python bindings: scenes, frame generation, estimators and theory curves.
//! Frames cross the boundary as numpy arrays indexed `[y, x]`.

use ndarray::{Array2, Array3, Axis};
use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use twinbeam::alignment::{cs_scan, refine_center, DEFAULT_TOLERANCE};
use twinbeam::config::SceneSpec;
use twinbeam::estimators::{self, theory, PairedImage};
use twinbeam::imaging;
use twinbeam::sim::Simulator;
use twinbeam::{Error, Frame};

create_exception!(twinbeam_py, TwinbeamError, PyException);
create_exception!(twinbeam_py, ConfigError, TwinbeamError);
create_exception!(twinbeam_py, GeometryError, TwinbeamError);
create_exception!(twinbeam_py, InvalidRegimeError, TwinbeamError);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) | Error::Json { .. } => ConfigError::new_err(msg),
        Error::Geometry(_) | Error::NotDivisible { .. } => GeometryError::new_err(msg),
        Error::InvalidRegime(_) => InvalidRegimeError::new_err(msg),
        _ => TwinbeamError::new_err(msg),
    }
}

type Pair<'py> = (Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>);

fn moments_dict<'py>(py: Python<'py>, m: &estimators::Moments) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean_s", m.mean_s)?;
    d.set_item("mean_i", m.mean_i)?;
    d.set_item("var_s", m.var_s)?;
    d.set_item("var_i", m.var_i)?;
    d.set_item("cov_si", m.cov_si)?;
    d.set_item("n_pixels", m.n_pixels)?;
    Ok(d)
}

/// A simulated twin-beam scene, built from the same JSON as the CLI's `scene` block.
#[pyclass(frozen)]
struct Scene {
    spec: SceneSpec,
    sim: Simulator,
}

impl Scene {
    fn frame_of(&self, counts: PyReadonlyArray2<'_, u32>) -> Frame {
        Frame::new(
            counts.as_array().to_owned(),
            self.sim.config().detection.hardware_bin,
            0,
        )
    }
}

#[pymethods]
impl Scene {
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        let spec: SceneSpec = serde_json::from_str(json).map_err(|e| ConfigError::new_err(e.to_string()))?;
        let config = spec.resolve().map_err(py_err)?;
        let sim = Simulator::new(config).map_err(py_err)?;
        Ok(Scene { spec, sim })
    }

    /// The scene as JSON with every default filled in.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.spec).map_err(|e| TwinbeamError::new_err(e.to_string()))
    }

    /// Readout grid shape `(height, width)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        let s = &self.sim.config().source;
        let hb = self.sim.config().detection.hardware_bin;
        (s.grid_height / hb, s.grid_width / hb)
    }

    /// Signal and idler rectangles and the centre of symmetry.
    #[getter]
    fn regions<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = &self.sim.config().regions;
        let rect = |x: &estimators::Rect| (x.x, x.y, x.width, x.height);
        let d = PyDict::new(py);
        d.set_item("signal", rect(&r.signal))?;
        d.set_item("idler", rect(&r.idler))?;
        d.set_item("center", (r.center[0], r.center[1]))?;
        d.set_item("dci_shift", (r.dci_shift[0], r.dci_shift[1]))?;
        Ok(d)
    }

    #[pyo3(signature = (shot_id, with_object = false))]
    fn frame<'py>(&self, py: Python<'py>, shot_id: u64, with_object: bool) -> Bound<'py, PyArray2<u32>> {
        let (f, _) = py.detach(|| self.sim.frame(shot_id, with_object));
        f.counts.into_pyarray(py)
    }

    /// Frames for shots `first..first + n` as an `(n, height, width)` array.
    #[pyo3(signature = (n, first = 0, with_object = false))]
    fn stack<'py>(&self, py: Python<'py>, n: usize, first: u64, with_object: bool) -> Bound<'py, PyArray3<u32>> {
        let (h, w) = self.shape();
        let out = py.detach(|| {
            let stack = self.sim.stack(first, n, with_object);
            let mut out = Array3::<u32>::zeros((n, h, w));
            for (mut slot, f) in out.axis_iter_mut(Axis(0)).zip(&stack.frames) {
                slot.assign(&f.counts);
            }
            out
        });
        out.into_pyarray(py)
    }

    /// Signal and point-reflected idler superpixels of a frame, paired element by element.
    fn paired<'py>(&self, py: Python<'py>, counts: PyReadonlyArray2<'_, u32>, bin: usize) -> PyResult<Pair<'py>> {
        let img = PairedImage::from_frame(&self.frame_of(counts), &self.sim.config().regions, bin).map_err(py_err)?;
        Ok((img.signal.into_pyarray(py), img.idler.into_pyarray(py)))
    }

    /// Spatial moments of one frame at analysis binning `bin`.
    fn moments<'py>(
        &self,
        py: Python<'py>,
        counts: PyReadonlyArray2<'_, u32>,
        bin: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let m = estimators::spatial_moments(&self.frame_of(counts), &self.sim.config().regions, bin).map_err(py_err)?;
        moments_dict(py, &m)
    }

    /// Noise reduction factor of one frame at analysis binning `bin`.
    fn nrf(&self, counts: PyReadonlyArray2<'_, u32>, bin: usize) -> PyResult<f64> {
        let m = estimators::spatial_moments(&self.frame_of(counts), &self.sim.config().regions, bin).map_err(py_err)?;
        estimators::nrf(&m).map_err(py_err)
    }

    /// Centre-of-symmetry scan over an `(n, height, width)` stack.
    #[pyo3(signature = (frames, window = 6, scan_bin = 2, tolerance = DEFAULT_TOLERANCE))]
    fn cs_scan<'py>(
        &self,
        py: Python<'py>,
        frames: PyReadonlyArray3<'_, u32>,
        window: usize,
        scan_bin: usize,
        tolerance: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let hb = self.sim.config().detection.hardware_bin;
        let frames: Vec<Frame> = frames
            .as_array()
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(k, a)| Frame::new(a.to_owned(), hb, k as u64))
            .collect();
        let regions = self.sim.config().regions;
        let (scan, refined) = py
            .detach(|| {
                cs_scan(&frames, &regions, window, scan_bin, tolerance).map(|s| {
                    let r = refine_center(&s);
                    (s, r)
                })
            })
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("best_shift", (scan.best_shift[0], scan.best_shift[1]))?;
        d.set_item("best_sigma", scan.best_sigma)?;
        d.set_item("center_estimate", (scan.center_estimate[0], scan.center_estimate[1]))?;
        d.set_item("refined_center", (refined.center[0], refined.center[1]))?;
        d.set_item("interpolated", refined.interpolated)?;
        let side = 2 * scan.window + 1;
        let surface = Array2::from_shape_vec((side, side), scan.sigmas).expect("square scan");
        d.set_item("sigma_surface", surface.into_pyarray(py))?;
        Ok(d)
    }
}

/// Sums `n × n` blocks of a count grid.
#[pyfunction]
fn bin_frame<'py>(py: Python<'py>, counts: PyReadonlyArray2<'_, u32>, n: usize) -> PyResult<Bound<'py, PyArray2<u32>>> {
    let f = estimators::bin_frame(&Frame::new(counts.as_array().to_owned(), 1, 0), n).map_err(py_err)?;
    Ok(f.counts.into_pyarray(py))
}

fn paired_image(signal: PyReadonlyArray2<'_, f64>, idler: PyReadonlyArray2<'_, f64>) -> PyResult<PairedImage> {
    PairedImage::new(signal.as_array().to_owned(), idler.as_array().to_owned(), 1).map_err(py_err)
}

/// Moments of already paired signal and idler grids.
#[pyfunction]
fn moments<'py>(
    py: Python<'py>,
    signal: PyReadonlyArray2<'_, f64>,
    idler: PyReadonlyArray2<'_, f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = estimators::moments(&paired_image(signal, idler)?).map_err(py_err)?;
    moments_dict(py, &m)
}

/// `(var_s + var_i - 2 cov) / (mean_s + mean_i)` of paired grids.
#[pyfunction]
fn nrf(signal: PyReadonlyArray2<'_, f64>, idler: PyReadonlyArray2<'_, f64>) -> PyResult<f64> {
    let m = estimators::moments(&paired_image(signal, idler)?).map_err(py_err)?;
    estimators::nrf(&m).map_err(py_err)
}

#[pyfunction]
fn fano(mean: f64, var: f64) -> PyResult<f64> {
    estimators::fano(mean, var).map_err(py_err)
}

/// `(σ, F_s, F_i)` after subtracting background moments given as dicts.
#[pyfunction]
fn background_correct(lit: &Bound<'_, PyDict>, bg: &Bound<'_, PyDict>) -> PyResult<(f64, f64, f64)> {
    let read = |d: &Bound<'_, PyDict>| -> PyResult<estimators::Moments> {
        let get = |k: &str| -> PyResult<f64> {
            d.get_item(k)?
                .ok_or_else(|| ConfigError::new_err(format!("moments dict is missing `{k}`")))?
                .extract()
        };
        Ok(estimators::Moments {
            mean_s: get("mean_s")?,
            mean_i: get("mean_i")?,
            var_s: get("var_s")?,
            var_i: get("var_i")?,
            cov_si: get("cov_si")?,
            n_pixels: get("n_pixels")? as usize,
        })
    };
    let c = estimators::background_correct(&read(lit)?, &read(bg)?).map_err(py_err)?;
    Ok((c.sigma, c.fano_s, c.fano_i))
}

/// Balanced-arm prediction `1 - η+ + ½ (η-² / η+) (n/M + ½)`.
#[pyfunction]
fn predicted_nrf(eta_s: f64, eta_i: f64, n_over_m: f64) -> f64 {
    theory::predicted_nrf(eta_s, eta_i, n_over_m)
}

#[pyfunction]
#[pyo3(signature = (sigma, alpha, excess = 0.0))]
fn r_dci_theory(sigma: f64, alpha: f64, excess: f64) -> f64 {
    theory::r_dci_theory(sigma, alpha, excess)
}

#[pyfunction]
#[pyo3(signature = (sigma, alpha, excess = 0.0))]
fn r_direct_theory(sigma: f64, alpha: f64, excess: f64) -> f64 {
    theory::r_direct_theory(sigma, alpha, excess)
}

/// Probability that both photons of a pair land in paired superpixels of side `n`.
#[pyfunction]
#[pyo3(signature = (n, jitter, offset = (0.0, 0.0)))]
fn correlated_fraction(n: f64, jitter: f64, offset: (f64, f64)) -> f64 {
    theory::correlated_fraction(n, jitter, [offset.0, offset.1])
}

/// Squared Pearson correlation of two images.
#[pyfunction]
fn correlation_coefficient(image: PyReadonlyArray2<'_, f64>, reference: PyReadonlyArray2<'_, f64>) -> PyResult<f64> {
    imaging::correlation_coefficient(&image.as_array().to_owned(), &reference.as_array().to_owned(), None)
        .map_err(py_err)
}

/// SSNQI absorption map `(N_i - N_s) / <N_i>` of paired grids.
#[pyfunction]
fn ssnqi_alpha<'py>(
    py: Python<'py>,
    signal: PyReadonlyArray2<'_, f64>,
    idler: PyReadonlyArray2<'_, f64>,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    Ok(imaging::ssnqi_alpha(&paired_image(signal, idler)?)
        .map_err(py_err)?
        .into_pyarray(py))
}

/// DCI absorption map with the idler rolled by `shift` superpixels.
#[pyfunction]
#[pyo3(signature = (signal, idler, shift = (1, 0)))]
fn dci_alpha<'py>(
    py: Python<'py>,
    signal: PyReadonlyArray2<'_, f64>,
    idler: PyReadonlyArray2<'_, f64>,
    shift: (i64, i64),
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let img = paired_image(signal, idler)?;
    Ok(imaging::dci_alpha(&img, [shift.0, shift.1])
        .map_err(py_err)?
        .into_pyarray(py))
}

#[pymodule]
fn twinbeam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_function(wrap_pyfunction!(bin_frame, m)?)?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(nrf, m)?)?;
    m.add_function(wrap_pyfunction!(fano, m)?)?;
    m.add_function(wrap_pyfunction!(background_correct, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_nrf, m)?)?;
    m.add_function(wrap_pyfunction!(r_dci_theory, m)?)?;
    m.add_function(wrap_pyfunction!(r_direct_theory, m)?)?;
    m.add_function(wrap_pyfunction!(correlated_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(ssnqi_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(dci_alpha, m)?)?;
    let py = m.py();
    m.add("TwinbeamError", py.get_type::<TwinbeamError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("GeometryError", py.get_type::<GeometryError>())?;
    m.add("InvalidRegimeError", py.get_type::<InvalidRegimeError>())?;
    Ok(())
}
