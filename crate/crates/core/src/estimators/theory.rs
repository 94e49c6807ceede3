//! Closed-form predictions for the noise reduction factor and the SNR ratios.

use statrs::function::erf::erf;

/// Noise reduction factor of one pixel pair with efficiencies `eta_s`, `eta_i`
/// and `n_over_m` photons per mode.
pub fn predicted_nrf(eta_s: f64, eta_i: f64, n_over_m: f64) -> f64 {
    let plus = (eta_s + eta_i) / 2.0;
    let minus = eta_s - eta_i;
    1.0 - plus + 0.5 * minus * minus / plus * (n_over_m + 0.5)
}

/// Mean efficiency and spatial variance of an efficiency map.
pub fn map_stats<'a>(map: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let v: Vec<f64> = map.into_iter().copied().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Single-frame estimate including the excess noise of efficiency disuniformity.
///
/// `mean_s`, `mean_i` are the region-mean efficiencies, `var_s`, `var_i` their
/// spatial variances, `n` the incident photons per superpixel and `m` the
/// modes per superpixel.
pub fn predicted_experimental_nrf(mean_s: f64, mean_i: f64, var_s: f64, var_i: f64, n: f64, m: f64) -> f64 {
    let plus = (mean_s + mean_i) / 2.0;
    predicted_nrf(mean_s, mean_i, n / m) + (var_s + var_i) / (2.0 * plus) * (n + n / m)
}

/// Single-frame estimate after the flat-field correction.
pub fn predicted_flat_field_nrf(mean_s: f64, mean_i: f64, n: f64, m: f64) -> f64 {
    let plus = (mean_s + mean_i) / 2.0;
    let minus = mean_s - mean_i;
    1.0 - plus + 0.5 * minus * minus / plus * (n / m)
}

/// Noise reduction factor when a pixel pair shares `m_c` correlated modes and
/// sees `m_u` uncorrelated ones, with excess noise `e_n`.
pub fn predicted_nrf_uncorrelated(eta: f64, m_c: f64, m_u: f64, e_n: f64) -> f64 {
    let p = m_c / (m_c + m_u);
    1.0 - eta * p * (1.0 - m_u / m_c * e_n)
}

/// Same as [`predicted_nrf_uncorrelated`] in terms of the correlated fraction
/// `p = m_c / (m_c + m_u)`.
pub fn predicted_nrf_correlated_fraction(eta: f64, p: f64, e_n: f64) -> f64 {
    1.0 - eta * p * (1.0 - (1.0 - p) / p * e_n)
}

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * (1.0 + erf(t / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// Antiderivative of the normal CDF.
fn psi(t: f64) -> f64 {
    t * std_normal_cdf(t) + std_normal_pdf(t)
}

/// Probability that the twin of a photon, uniformly placed in a superpixel of
/// side `n`, lands in the paired superpixel when displaced by `offset` plus
/// Gaussian jitter of std `jitter` (one axis, fine pixels).
pub fn pair_capture_1d(n: f64, jitter: f64, offset: f64) -> f64 {
    if jitter <= 0.0 {
        return (1.0 - offset.abs() / n).max(0.0);
    }
    let s = jitter;
    let v = s / n * (psi((n - offset) / s) - 2.0 * psi(-offset / s) + psi((-n - offset) / s));
    v.clamp(0.0, 1.0)
}

/// Correlated-mode fraction of a square superpixel of side `n` for isotropic
/// jitter and a misalignment `offset` of the paired grid.
pub fn correlated_fraction(n: f64, jitter: f64, offset: [f64; 2]) -> f64 {
    pair_capture_1d(n, jitter, offset[0]) * pair_capture_1d(n, jitter, offset[1])
}

/// SNR ratio of quantum to differential classical imaging for absorption
/// `alpha`, noise reduction factor `sigma` and excess noise `e`.
pub fn r_dci_theory(sigma: f64, alpha: f64, e: f64) -> f64 {
    (((2.0 - alpha) + e * alpha * alpha) / (alpha * alpha * e + 2.0 * sigma * (1.0 - alpha) + alpha)).sqrt()
}

/// SNR ratio of quantum to direct imaging against a noiseless reference.
/// Tends to `1 / sqrt(2 sigma)` as the absorption vanishes.
pub fn r_direct_theory(sigma: f64, alpha: f64, e: f64) -> f64 {
    ((1.0 - alpha) * (1.0 + (1.0 - alpha) * e) / (alpha * alpha * e + 2.0 * sigma * (1.0 - alpha) + alpha)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn balanced_efficiency() {
        assert!((predicted_nrf(0.7, 0.7, 0.3) - 0.3).abs() < 1e-15);
        assert_eq!(predicted_nrf(1.0, 1.0, 5.0), 0.0);
    }

    #[test]
    fn imbalance_term() {
        // 1 - 0.65 + 0.5 * 0.01 / 0.65 * 0.6
        let direct = 0.35 + 0.003 / 0.65;
        assert!((predicted_nrf(0.7, 0.6, 0.1) - direct).abs() < 1e-12);
        assert!((predicted_nrf(0.7, 0.6, 0.1) - 0.3546).abs() < 5e-5);
    }

    #[test]
    fn disuniformity_excess() {
        let base = predicted_nrf(0.7, 0.7, 0.1);
        let exp = predicted_experimental_nrf(0.7, 0.7, 7.5e-5, 7.5e-5, 1e3, 1e4);
        let excess = exp - base;
        assert!((excess - 1.5e-4 / 1.4 * 1000.1).abs() < 1e-12);
        assert!((excess - 0.107).abs() < 1e-3);
        assert_eq!(
            predicted_experimental_nrf(0.8, 0.6, 0.0, 0.0, 50.0, 500.0),
            predicted_nrf(0.8, 0.6, 0.1)
        );
        assert!((predicted_flat_field_nrf(0.7, 0.7, 1e3, 1e4) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn uncorrelated_modes() {
        assert!((predicted_nrf_uncorrelated(0.7, 9.0, 0.0, 0.3) - 0.3).abs() < 1e-15);
        let v = predicted_nrf_uncorrelated(0.7, 9.0, 1.0, 0.1);
        assert!((v - (1.0 - 0.63 * (1.0 - 0.1 / 9.0))).abs() < 1e-12);
        assert!((v - 0.377).abs() < 5e-4);
        assert!((predicted_nrf_correlated_fraction(0.7, 0.9, 0.1) - v).abs() < 1e-12);
    }

    #[test]
    fn snr_ratios() {
        assert!((r_dci_theory(0.5, 0.05, 0.0) - (1.95f64 / 1.0).sqrt()).abs() < 1e-12);
        assert!((r_dci_theory(0.5, 0.05, 0.0) - 1.396).abs() < 5e-4);
        assert!((r_dci_theory(0.3, 0.05, 0.0) - 1.77).abs() < 5e-3);
        assert!((r_direct_theory(0.5, 1e-9, 0.0) - 1.0).abs() < 1e-6);
        assert!((r_direct_theory(0.18, 1e-9, 0.0) - 1.0 / 0.36f64.sqrt()).abs() < 1e-6);
    }

    // Oracle: midpoint quadrature of the capture probability over the source pixel.
    fn capture_quadrature(n: f64, s: f64, d: f64) -> f64 {
        let steps = 4000;
        (0..steps)
            .map(|k| {
                let x = (k as f64 + 0.5) / steps as f64 * n;
                std_normal_cdf((n - x - d) / s) - std_normal_cdf((-x - d) / s)
            })
            .sum::<f64>()
            / steps as f64
    }

    #[test]
    fn capture_matches_quadrature() {
        for &(n, s, d) in &[(6.0, 3.0, 0.0), (12.0, 3.0, 0.5), (24.0, 1.0, -2.0), (2.0, 0.3, 0.5)] {
            let a = pair_capture_1d(n, s, d);
            let b = capture_quadrature(n, s, d);
            assert!((a - b).abs() < 1e-6, "{n} {s} {d}: {a} vs {b}");
        }
        assert_eq!(pair_capture_1d(2.0, 0.0, 0.5), 0.75);
        assert!((pair_capture_1d(12.0, 1e-9, 3.0) - 0.75).abs() < 1e-6);
    }

    #[test]
    fn capture_grows_with_superpixel() {
        let ps: Vec<f64> = [6.0, 12.0, 24.0, 32.0]
            .iter()
            .map(|&n| correlated_fraction(n, 3.0, [0.0, 0.0]))
            .collect();
        assert!(ps.windows(2).all(|w| w[0] < w[1]), "{ps:?}");
    }

    proptest! {
        #[test]
        fn nrf_decreases_with_mean_efficiency(plus in 0.1f64..0.9, minus in 0.0f64..0.1, d in 0.001f64..0.05, nm in 0.0f64..1.0) {
            let at = |p: f64| predicted_nrf(p + minus / 2.0, p - minus / 2.0, nm);
            prop_assert!(at(plus + d) < at(plus));
        }

        #[test]
        fn uncorrelated_modes_hurt(eta in 0.05f64..1.0, mc in 1.0f64..100.0, mu in 0.0f64..50.0, dm in 0.01f64..10.0, e in 0.0f64..1.0) {
            prop_assert!(predicted_nrf_uncorrelated(eta, mc, mu + dm, e) > predicted_nrf_uncorrelated(eta, mc, mu, e));
        }

        #[test]
        fn no_variance_no_imbalance(eta in 0.0f64..1.0, n in 1.0f64..1e4, m in 1.0f64..1e5) {
            prop_assume!(eta > 0.0);
            prop_assert_eq!(predicted_experimental_nrf(eta, eta, 0.0, 0.0, n, m), 1.0 - eta);
        }

        #[test]
        fn capture_is_a_probability(n in 1.0f64..40.0, s in 0.0f64..10.0, d in -20.0f64..20.0) {
            let p = pair_capture_1d(n, s, d);
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
