use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use twinbeam::alignment::{cs_scan, refine_center};
use twinbeam::config::{
    load_json, CalibrateConfig, FindCenterConfig, ImageConfig, NrfConfig, RegionSpec, SimulateConfig, SnrStudyConfig,
};
use twinbeam::estimators::theory::{r_dci_theory, r_direct_theory};
use twinbeam::estimators::{
    apply_flat_field, moments, FlatField, FlatFieldBuilder, Moments, NrfReport, PairedImage, Rect, RegionPair,
};
use twinbeam::imaging::{
    analyze_object_frame, corrected_image, correlation_coefficient, dilate, erode, object_core, object_footprint,
    reference_image, snr_study as study_classes, DirectReference, FrameImages, Scheme,
};
use twinbeam::io::{save_flat_field, write_csv, write_json, write_pgm, Bundle, BundleWriter, PgmScale};
use twinbeam::sim::{ShotTruth, Simulator};
use twinbeam::{Error, Frame, Result};

use crate::output::{self, mean_se, write_resolved};
use crate::{Failure, Run};

/// Frames loaded at once when a pass must visit them in order.
const CHUNK: usize = 64;

/// Regions recorded in the bundle's scene, or `over` resolved about the scene centre.
fn regions(bundle: &Bundle, over: Option<&RegionSpec>) -> Result<RegionPair> {
    let scene = &bundle.manifest.scene;
    let regions = match over {
        Some(r) => r.resolve(scene.source_center())?,
        None => scene.resolve()?.regions,
    };
    let (w, h) = bundle.fine_dims();
    regions.check_fits(w, h)?;
    Ok(regions)
}

fn check_bins(bundle: &Bundle, bins: &[usize]) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::Config("bins must list at least one binning".into()));
    }
    let (w, h) = bundle.fine_dims();
    for &bin in bins {
        if bin == 0 || bin % bundle.manifest.bin != 0 {
            return Err(Error::Config(format!(
                "binning {bin} is not a positive multiple of the readout binning {}",
                bundle.manifest.bin
            )));
        }
        if w % bin != 0 {
            return Err(Error::NotDivisible {
                dimension: "frame width",
                size: w,
                factor: bin,
            });
        }
        if h % bin != 0 {
            return Err(Error::NotDivisible {
                dimension: "frame height",
                size: h,
                factor: bin,
            });
        }
    }
    Ok(())
}

/// Visits frames `0..n` in order, loading them in parallel chunks.
fn for_each_frame(bundle: &Bundle, n: usize, mut f: impl FnMut(&Frame) -> Result<()>) -> Result<()> {
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let frames: Vec<Frame> = (start..end)
            .into_par_iter()
            .map(|i| bundle.frame(i))
            .collect::<Result<_>>()?;
        for frame in &frames {
            f(frame)?;
        }
    }
    Ok(())
}

/// Maps frames `0..n` through `f` in parallel, keeping frame order.
fn map_frames<T: Send>(bundle: &Bundle, n: usize, f: impl Fn(&Frame) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(|i| f(&bundle.frame(i)?)).collect()
}

fn check_q(q: usize, available: usize) -> Result<()> {
    if q == 0 || q > available {
        return Err(Error::Config(format!(
            "flat field needs 1 to {available} frames, got q = {q}"
        )));
    }
    Ok(())
}

fn flat_fields(bundle: &Bundle, regions: &RegionPair, bins: &[usize], q: usize) -> Result<Vec<FlatField>> {
    check_q(q, bundle.len())?;
    let mut builders: Vec<FlatFieldBuilder> = bins.iter().map(|&b| FlatFieldBuilder::new(*regions, b)).collect();
    for_each_frame(bundle, q, |f| builders.iter_mut().try_for_each(|b| b.add(f)))?;
    builders.into_iter().map(FlatFieldBuilder::finish).collect()
}

fn same_geometry(a: &Bundle, b: &Bundle, what: &str) -> Result<()> {
    if a.fine_dims() != b.fine_dims() || a.manifest.bin != b.manifest.bin {
        let (aw, ah) = a.fine_dims();
        let (bw, bh) = b.fine_dims();
        return Err(Error::Geometry(format!(
            "{what} is {bw}x{bh} at readout binning {}, the analysed bundle is {aw}x{ah} at {}",
            b.manifest.bin, a.manifest.bin
        )));
    }
    Ok(())
}

pub fn simulate(run: &Run) -> Result<(), Failure> {
    let mut cfg: SimulateConfig = load_json(run.config_path)?;
    if let Some(seed) = run.seed {
        cfg.scene.seed = seed;
    }
    if cfg.n_frames == 0 {
        return Err(Failure::config("n_frames must be at least 1"));
    }
    if cfg.with_object && cfg.scene.object.is_none() {
        return Err(Failure::config("with_object is set but the scene has no object"));
    }
    let config = cfg.scene.resolve()?;
    let sim = Simulator::new(config.clone())?;
    write_resolved(run.out, "simulate", run.format, &cfg)?;

    let mut writer = BundleWriter::create(run.out, &cfg.scene, &config, cfg.with_object)?;
    let mut shots: Vec<ShotTruth> = Vec::with_capacity(cfg.n_frames);
    let mut preview = None;
    for start in (0..cfg.n_frames).step_by(CHUNK) {
        let end = (start + CHUNK).min(cfg.n_frames);
        let batch: Vec<(Frame, ShotTruth)> = (start..end)
            .into_par_iter()
            .map(|k| sim.frame(cfg.first_shot + k as u64, cfg.with_object))
            .collect();
        for (frame, truth) in batch {
            writer.push(&frame, truth)?;
            shots.push(truth);
            if preview.is_none() {
                preview = Some(frame.counts.mapv(f64::from));
            }
        }
    }
    let bundle = writer.finish()?;
    if run.format.csv() {
        write_csv(&run.out.join("shots.csv"), &shots)?;
    }
    if let (true, Some(p)) = (run.format.pgm(), preview) {
        write_pgm(&run.out.join("preview.pgm"), &p, PgmScale::of(&p), true)?;
    }
    println!(
        "wrote {} frames of {}x{} to {}",
        bundle.len(),
        bundle.manifest.width,
        bundle.manifest.height,
        run.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GainSummary {
    bin: usize,
    q_frames_used: usize,
    dead_pixels: usize,
    g_s_min: f64,
    g_s_max: f64,
    g_s_rms_deviation: f64,
    g_i_min: f64,
    g_i_max: f64,
    g_i_rms_deviation: f64,
}

fn gain_stats(g: &Array2<f64>, live: &Array2<bool>) -> (f64, f64, f64) {
    let live: Vec<f64> = g.iter().zip(live).filter(|(_, &l)| l).map(|(&v, _)| v).collect();
    let min = live.iter().copied().fold(f64::INFINITY, f64::min);
    let max = live.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rms = (live.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / live.len().max(1) as f64).sqrt();
    (min, max, rms)
}

pub fn calibrate(run: &Run) -> Result<(), Failure> {
    let mut cfg: CalibrateConfig = load_json(run.config_path)?;
    cfg.bundle = run.path(&cfg.bundle);
    let bundle = Bundle::open(&cfg.bundle)?;
    let regions = regions(&bundle, cfg.regions.as_ref())?;
    check_bins(&bundle, &cfg.bins)?;
    write_resolved(run.out, "calibrate", run.format, &cfg)?;

    let flats = flat_fields(&bundle, &regions, &cfg.bins, cfg.q)?;
    let mut rows = Vec::new();
    for flat in &flats {
        let stem = format!("flat_b{}", flat.bin);
        save_flat_field(run.out, &stem, flat)?;
        output::grid(run.out, &format!("{stem}_g_s"), &flat.g_s, run.format)?;
        output::grid(run.out, &format!("{stem}_g_i"), &flat.g_i, run.format)?;
        let (g_s_min, g_s_max, g_s_rms_deviation) = gain_stats(&flat.g_s, &flat.live);
        let (g_i_min, g_i_max, g_i_rms_deviation) = gain_stats(&flat.g_i, &flat.live);
        rows.push(GainSummary {
            bin: flat.bin,
            q_frames_used: flat.q_frames_used,
            dead_pixels: flat.dead_pixels(),
            g_s_min,
            g_s_max,
            g_s_rms_deviation,
            g_i_min,
            g_i_max,
            g_i_rms_deviation,
        });
        println!(
            "bin {}: {} frames, {} dead pixels, rms gain deviation {:.4} / {:.4}",
            flat.bin,
            flat.q_frames_used,
            flat.dead_pixels(),
            g_s_rms_deviation,
            g_i_rms_deviation
        );
    }
    write_csv(&run.out.join("flat_field_summary.csv"), &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct CenterReport {
    frames_used: usize,
    window: usize,
    scan_bin: usize,
    nominal_center: [f64; 2],
    best_shift: [i64; 2],
    best_sigma: f64,
    center_estimate: [f64; 2],
    refined_center: [f64; 2],
    refined_shift: [f64; 2],
    interpolated: bool,
    signal: Rect,
    idler: Option<Rect>,
}

#[derive(Serialize)]
struct SurfaceRow {
    dx: i64,
    dy: i64,
    sigma: f64,
}

pub fn find_center(run: &Run) -> Result<(), Failure> {
    let mut cfg: FindCenterConfig = load_json(run.config_path)?;
    cfg.bundle = run.path(&cfg.bundle);
    let bundle = Bundle::open(&cfg.bundle)?;
    let regions = regions(&bundle, cfg.regions.as_ref())?;
    let n = cfg.frames.unwrap_or(bundle.len()).min(bundle.len());
    if n == 0 {
        return Err(Failure::config("find-center needs at least one frame"));
    }
    write_resolved(run.out, "find-center", run.format, &cfg)?;

    let frames = map_frames(&bundle, n, |f| Ok(f.clone()))?;
    let scan = cs_scan(&frames, &regions, cfg.window, cfg.scan_bin, cfg.tolerance)?;
    let refined = refine_center(&scan);
    let report = CenterReport {
        frames_used: n,
        window: scan.window,
        scan_bin: scan.scan_bin,
        nominal_center: regions.center,
        best_shift: scan.best_shift,
        best_sigma: scan.best_sigma,
        center_estimate: scan.center_estimate,
        refined_center: refined.center,
        refined_shift: refined.shift,
        interpolated: refined.interpolated,
        signal: scan.signal,
        idler: scan.idler.offset(scan.best_shift[0], scan.best_shift[1]),
    };
    write_json(&run.out.join("center_report.json"), &report)?;
    let rows: Vec<SurfaceRow> = scan
        .shifts
        .iter()
        .zip(&scan.sigmas)
        .map(|(s, &sigma)| SurfaceRow {
            dx: s[0],
            dy: s[1],
            sigma,
        })
        .collect();
    write_csv(&run.out.join("sigma_surface.csv"), &rows)?;
    if run.format.pgm() {
        let side = 2 * scan.window + 1;
        let surface = Array2::from_shape_vec((side, side), scan.sigmas.clone()).expect("square scan");
        write_pgm(
            &run.out.join("sigma_surface.pgm"),
            &surface,
            PgmScale::of(&surface),
            true,
        )?;
    }
    println!(
        "dip sigma {:.4} at shift ({}, {}); center ({:.2}, {:.2})",
        scan.best_sigma, scan.best_shift[0], scan.best_shift[1], refined.center[0], refined.center[1]
    );
    Ok(())
}

#[derive(Serialize)]
struct NrfSummary {
    bin: usize,
    n_frames: usize,
    sigma: f64,
    sigma_se: f64,
    fano_s: f64,
    fano_i: f64,
    mean_photons: f64,
    sigma_bg_corrected: Option<f64>,
    sigma_bg_corrected_se: Option<f64>,
    fano_bg_corrected: Option<f64>,
    flat_field_applied: bool,
}

pub fn nrf(run: &Run) -> Result<(), Failure> {
    let mut cfg: NrfConfig = load_json(run.config_path)?;
    cfg.bundle = run.path(&cfg.bundle);
    cfg.background = cfg.background.map(|p| run.path(&p));
    cfg.flat_field = cfg.flat_field.map(|p| run.path(&p));
    if !cfg.apply_flat_field && (cfg.flat_field.is_some() || cfg.flat_field_q.is_some()) {
        return Err(Failure::config(
            "flat_field or flat_field_q given but apply_flat_field is false",
        ));
    }
    let bundle = Bundle::open(&cfg.bundle)?;
    let regions = regions(&bundle, cfg.regions.as_ref())?;
    check_bins(&bundle, &cfg.bins)?;
    write_resolved(run.out, "nrf", run.format, &cfg)?;

    let flats = if cfg.apply_flat_field {
        let source = match &cfg.flat_field {
            Some(p) => {
                let b = Bundle::open(p)?;
                same_geometry(&bundle, &b, "the flat-field bundle")?;
                b
            }
            None => bundle.clone(),
        };
        let q = cfg.flat_field_q.unwrap_or(source.len());
        Some(flat_fields(&source, &regions, &cfg.bins, q)?)
    } else {
        None
    };
    let prepare = |f: &Frame, k: usize| -> Result<PairedImage> {
        let img = PairedImage::from_frame(f, &regions, cfg.bins[k])?;
        match &flats {
            Some(fl) => apply_flat_field(&img, &fl[k]),
            None => Ok(img),
        }
    };
    let background: Option<Vec<Moments>> = match &cfg.background {
        Some(p) => {
            let dark = Bundle::open(p)?;
            same_geometry(&bundle, &dark, "the background bundle")?;
            let per_frame = map_frames(&dark, dark.len(), |f| {
                (0..cfg.bins.len())
                    .map(|k| moments(&prepare(f, k)?))
                    .collect::<Result<Vec<_>>>()
            })?;
            let per_bin = (0..cfg.bins.len())
                .map(|k| Moments::average(&per_frame.iter().map(|m| m[k]).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            Some(per_bin)
        }
        None => None,
    };

    let rows: Vec<Vec<NrfReport>> = map_frames(&bundle, bundle.len(), |f| {
        (0..cfg.bins.len())
            .map(|k| {
                let m = moments(&prepare(f, k)?)?;
                NrfReport::from_moments(
                    f.shot_id,
                    cfg.bins[k],
                    &m,
                    background.as_ref().map(|b| &b[k]),
                    flats.is_some(),
                )
            })
            .collect()
    })?;
    let summary: Vec<NrfSummary> = (0..cfg.bins.len())
        .map(|k| {
            let col: Vec<&NrfReport> = rows.iter().map(|r| &r[k]).collect();
            let (sigma, sigma_se) = mean_se(col.iter().map(|r| r.sigma));
            let corrected = background
                .as_ref()
                .map(|_| mean_se(col.iter().filter_map(|r| r.sigma_bg_corrected)));
            NrfSummary {
                bin: cfg.bins[k],
                n_frames: col.len(),
                sigma,
                sigma_se,
                fano_s: mean_se(col.iter().map(|r| r.fano_s)).0,
                fano_i: mean_se(col.iter().map(|r| r.fano_i)).0,
                mean_photons: mean_se(col.iter().map(|r| r.mean_photons)).0,
                sigma_bg_corrected: corrected.map(|c| c.0),
                sigma_bg_corrected_se: corrected.map(|c| c.1),
                fano_bg_corrected: background
                    .as_ref()
                    .map(|_| mean_se(col.iter().filter_map(|r| r.fano_bg_corrected)).0),
                flat_field_applied: flats.is_some(),
            }
        })
        .collect();
    let flat_rows: Vec<NrfReport> = rows.into_iter().flatten().collect();
    write_csv(&run.out.join("nrf_frames.csv"), &flat_rows)?;
    write_csv(&run.out.join("nrf_summary.csv"), &summary)?;
    write_json(&run.out.join("nrf_summary.json"), &summary)?;
    for s in &summary {
        match s.sigma_bg_corrected {
            Some(c) => println!(
                "bin {}: sigma {:.4} ± {:.4}, background corrected {:.4}",
                s.bin, s.sigma, s.sigma_se, c
            ),
            None => println!("bin {}: sigma {:.4} ± {:.4}", s.bin, s.sigma, s.sigma_se),
        }
    }
    Ok(())
}

/// Calibration shared by `image` and `snr-study`.
struct Imaging {
    object: Bundle,
    regions: RegionPair,
    flat: FlatField,
    reference: DirectReference,
    /// Ground-truth absorption on the signal region, when the bundle has one
    /// and the analysis uses the scene's own signal region.
    alpha: Option<Array2<f64>>,
    stats_mask: Array2<bool>,
}

impl Imaging {
    fn prepare(object: &Path, blank: &Path, bin: usize, q: Option<usize>, over: Option<&RegionSpec>) -> Result<Self> {
        let object = Bundle::open(object)?;
        let blank = Bundle::open(blank)?;
        same_geometry(&object, &blank, "the blank bundle")?;
        let regions = regions(&object, over)?;
        let blank_regions = self::regions(&blank, over)?;
        if blank_regions != regions {
            return Err(Error::Geometry(format!(
                "object regions {:?} / {:?} differ from blank regions {:?} / {:?}",
                regions.signal, regions.idler, blank_regions.signal, blank_regions.idler
            )));
        }
        check_bins(&object, &[bin])?;
        let flat = flat_fields(&blank, &regions, &[bin], q.unwrap_or(blank.len()))?.remove(0);
        let images = map_frames(&blank, blank.len(), |f| corrected_image(f, &regions, &flat))?;
        let reference = DirectReference::from_images(&images)?;
        let scene_signal = object.manifest.scene.resolve()?.regions.signal;
        let alpha = object.alpha()?.filter(|_| scene_signal == regions.signal);
        let dim = (regions.signal.height / bin, regions.signal.width / bin);
        let stats_mask = match &alpha {
            Some(a) => dilate(&object_footprint(a, bin)).mapv(|v| !v),
            None => Array2::from_elem(dim, true),
        };
        Ok(Imaging {
            object,
            regions,
            flat,
            reference,
            alpha,
            stats_mask,
        })
    }

    fn analyze(&self, n: usize) -> Result<Vec<FrameImages>> {
        map_frames(&self.object, n, |f| {
            analyze_object_frame(f, &self.regions, &self.flat, &self.reference, &self.stats_mask)
        })
    }
}

fn shared_scale(grids: &[&Array2<f64>]) -> PgmScale {
    grids.iter().map(|g| PgmScale::of(g)).fold(
        PgmScale {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        },
        |a, b| PgmScale {
            min: a.min.min(b.min),
            max: a.max.max(b.max),
        },
    )
}

fn block_mean(a: &Array2<f64>, bin: usize) -> Array2<f64> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h / bin, w / bin), |(y, x)| {
        a.slice(ndarray::s![y * bin..(y + 1) * bin, x * bin..(x + 1) * bin])
            .mean()
            .unwrap_or(0.0)
    })
}

#[derive(Serialize)]
struct ImageRow {
    shot_id: u64,
    sigma: f64,
    fano: f64,
    c_ssnqi: f64,
    c_dci: f64,
    c_direct: f64,
}

#[derive(Serialize)]
struct SchemeSummary {
    scheme: Scheme,
    c_mean: f64,
    c_se: f64,
    mean_alpha: f64,
    rmse_vs_truth: Option<f64>,
}

#[derive(Serialize)]
struct ImageSummary {
    frames: usize,
    sigma: f64,
    fano: f64,
    schemes: Vec<SchemeSummary>,
}

pub fn image(run: &Run) -> Result<(), Failure> {
    let mut cfg: ImageConfig = load_json(run.config_path)?;
    cfg.object = run.path(&cfg.object);
    cfg.blank = run.path(&cfg.blank);
    let setup = Imaging::prepare(&cfg.object, &cfg.blank, cfg.bin, cfg.flat_field_q, cfg.regions.as_ref())?;
    write_resolved(run.out, "image", run.format, &cfg)?;

    let n = cfg.frames.unwrap_or(setup.object.len()).min(setup.object.len());
    if n == 0 {
        return Err(Failure::config("image needs at least one object frame"));
    }
    let frames = setup.analyze(n)?;
    let means: Vec<Array2<f64>> = Scheme::ALL
        .iter()
        .map(|&s| reference_image(&frames.iter().map(|f| f.get(s).clone()).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    // The averaged direct image is the noise-free reference for C.
    let reference = means[2].clone();
    let rows: Vec<ImageRow> = frames
        .par_iter()
        .map(|f| {
            let c = |s| correlation_coefficient(f.get(s), &reference, None);
            Ok(ImageRow {
                shot_id: f.stats.shot_id,
                sigma: f.stats.sigma,
                fano: f.stats.fano,
                c_ssnqi: c(Scheme::Ssnqi)?,
                c_dci: c(Scheme::Dci)?,
                c_direct: c(Scheme::Direct)?,
            })
        })
        .collect::<Result<_>>()?;
    let truth = setup.alpha.as_ref().map(|a| block_mean(a, cfg.bin));
    let scale = shared_scale(&means.iter().collect::<Vec<_>>());
    let mut schemes = Vec::new();
    for (k, &scheme) in Scheme::ALL.iter().enumerate() {
        output::grid_scaled(
            run.out,
            &format!("image_{}_mean", scheme.name()),
            &means[k],
            scale,
            run.format,
        )?;
        let cs = rows.iter().map(|r| [r.c_ssnqi, r.c_dci, r.c_direct][k]);
        let (c_mean, c_se) = mean_se(cs);
        let rmse = truth
            .as_ref()
            .map(|t| ((&means[k] - t).mapv(|d| d * d).mean().unwrap_or(0.0)).sqrt());
        schemes.push(SchemeSummary {
            scheme,
            c_mean,
            c_se,
            mean_alpha: means[k].mean().unwrap_or(0.0),
            rmse_vs_truth: rmse,
        });
    }
    if let Some(t) = &truth {
        output::grid_scaled(run.out, "alpha_truth", t, scale, run.format)?;
    }
    let summary = ImageSummary {
        frames: n,
        sigma: mean_se(rows.iter().map(|r| r.sigma)).0,
        fano: mean_se(rows.iter().map(|r| r.fano)).0,
        schemes,
    };
    write_csv(&run.out.join("image_frames.csv"), &rows)?;
    write_json(&run.out.join("image_summary.json"), &summary)?;
    println!(
        "{} frames, sigma {:.3}: C ssnqi {:.3}, dci {:.3}, direct {:.3}",
        n, summary.sigma, summary.schemes[0].c_mean, summary.schemes[1].c_mean, summary.schemes[2].c_mean
    );
    Ok(())
}

#[derive(Serialize)]
struct TheoryRow {
    sigma: f64,
    r_dci: f64,
    r_direct: f64,
    r_direct_small_alpha: f64,
}

#[derive(Serialize)]
struct StudySummary {
    frames: usize,
    classes: usize,
    excluded: Vec<(i64, usize)>,
    rejected_by_fano: usize,
}

pub fn snr_study(run: &Run) -> Result<(), Failure> {
    let mut cfg: SnrStudyConfig = load_json(run.config_path)?;
    cfg.object = run.path(&cfg.object);
    cfg.blank = run.path(&cfg.blank);
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Failure::config(format!("alpha {} must lie in (0, 1)", cfg.alpha)));
    }
    let setup = Imaging::prepare(&cfg.object, &cfg.blank, cfg.bin, cfg.flat_field_q, cfg.regions.as_ref())?;
    let alpha = setup.alpha.as_ref().ok_or_else(|| {
        Failure::config("snr-study needs an object bundle with ground-truth absorption on its own signal region")
    })?;
    let support = erode(&object_core(alpha, cfg.bin));
    if !support.iter().any(|&s| s) {
        return Err(Error::Geometry(format!(
            "no {0}x{0} superpixel lies inside the object with a one-pixel margin; use a finer bin",
            cfg.bin
        ))
        .into());
    }
    write_resolved(run.out, "snr-study", run.format, &cfg)?;

    let frames = setup.analyze(setup.object.len())?;
    let study = study_classes(&frames, &support, cfg.alpha, &cfg.classes)?;
    write_csv(&run.out.join("snr_classes.csv"), &study.classes)?;
    let theory: Vec<TheoryRow> = (5..=120)
        .map(|k| {
            let sigma = k as f64 / 100.0;
            TheoryRow {
                sigma,
                r_dci: r_dci_theory(sigma, cfg.alpha, 0.0),
                r_direct: r_direct_theory(sigma, cfg.alpha, 0.0),
                r_direct_small_alpha: 1.0 / (2.0 * sigma).sqrt(),
            }
        })
        .collect();
    write_csv(&run.out.join("theory_overlay.csv"), &theory)?;
    for maps in &study.maps {
        for (k, scheme) in Scheme::ALL.iter().enumerate() {
            let stem = format!("class{:02}_{}", maps.band, scheme.name());
            output::grid(run.out, &format!("{stem}_mean"), &maps.mean[k], run.format)?;
            output::grid(run.out, &format!("{stem}_snr"), &maps.snr[k], run.format)?;
        }
    }
    let summary = StudySummary {
        frames: frames.len(),
        classes: study.classes.len(),
        excluded: study.excluded.clone(),
        rejected_by_fano: study.rejected_by_fano,
    };
    write_json(&run.out.join("snr_summary.json"), &summary)?;
    for c in &study.classes {
        println!(
            "sigma {:.3} ({} frames): R_dci {:.3} (theory {:.3}), R_direct {:.3} (theory {:.3})",
            c.sigma_j, c.n_frames, c.r_dci, c.r_dci_theory, c.r_direct, c.r_direct_theory
        );
    }
    Ok(())
}
