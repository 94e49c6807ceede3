#![allow(dead_code)]

use twinbeam::config::{DetectionSpec, MapSpec, RegionSpec, SceneSpec, SourceSpec};
use twinbeam::estimators::Rect;
use twinbeam::sim::Simulator;

pub fn uniform(value: f64) -> MapSpec {
    MapSpec::Uniform { value }
}

/// Noise-free square scene: a `half × half` signal half lit by cells of side
/// `cell`, signal region covering the whole half, no gain jitter.
pub fn scene(half: usize, cell: usize, mu: f64, m_temp: u64, eta: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        source: SourceSpec {
            grid_width: 2 * half,
            grid_height: half,
            cells_x: half / cell,
            cells_y: half / cell,
            mu,
            m_temp,
            gain_jitter: 0.0,
            coherence_jitter: 0.0,
            center: None,
        },
        detection: DetectionSpec {
            eta_s: uniform(eta),
            eta_i: uniform(eta),
            straylight_mean: 0.0,
            readout_sigma: 0.0,
            hardware_bin: 1,
        },
        object: None,
        regions: RegionSpec {
            signal: Rect::new(0, 0, half, half),
            center: None,
            idler: None,
            dci_shift: [1, 0],
        },
        seed,
    }
}

pub fn sim(spec: &SceneSpec) -> Simulator {
    Simulator::new(spec.resolve().expect("valid scene")).expect("valid scene")
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
