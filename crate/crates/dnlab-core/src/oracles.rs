//! Closed-form and semi-analytic references for radial layered conductivities.
//!
//! For an isotropic radial field the conductivity equation separates per
//! angular mode: inside each layer the mode-k solution is `a r^k + b r^{-k}`,
//! and continuity of `u` and of the radial flux `gamma u_r` across interfaces
//! yields the exact DN eigenvalue at `r = 1`. These references validate every
//! finite-element result in the crate.

use nalgebra::Matrix2;

use crate::error::{Error, Result};

/// Piecewise-constant isotropic radial conductivity: value `values[j]` on the
/// annulus `(radii[j-1], radii[j])` with `radii[-1] = 0`, `radii[last] = 1`
/// implicit.
#[derive(Debug, Clone)]
pub struct RadialLayers {
    radii: Vec<f64>,
    values: Vec<f64>,
}

impl RadialLayers {
    /// `radii` are the interior interface radii, strictly increasing in (0,1);
    /// `values` has one more entry than `radii` (innermost layer first).
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<RadialLayers> {
        if values.len() != radii.len() + 1 {
            return Err(Error::Oracle(format!(
                "{} layer values do not fit {} interface radii",
                values.len(),
                radii.len()
            )));
        }
        for &r in &radii {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Oracle(format!("interface radius {r} outside (0,1)")));
            }
        }
        for w in radii.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Oracle(
                    "interface radii must strictly increase".into(),
                ));
            }
        }
        for &v in &values {
            if !(v > 0.0) {
                return Err(Error::Oracle(format!("layer value {v} must be positive")));
            }
        }
        Ok(RadialLayers { radii, values })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Layer value at radius `r`.
    pub fn value_at(&self, r: f64) -> f64 {
        for (j, &rj) in self.radii.iter().enumerate() {
            if r < rj {
                return self.values[j];
            }
        }
        *self.values.last().unwrap()
    }
}

/// DN eigenvalues `lambda_k` of a radial layered conductivity for `k = 0..=k_max`.
#[derive(Debug, Clone)]
pub struct ModeSpectrum {
    pub eigenvalues: Vec<f64>,
}

/// Exact DN eigenvalue of a radial layered conductivity at angular mode `k`.
///
/// Propagates the reflection ratio `rho(r) = (b r^{-k}) / (a r^k)` of the
/// per-layer solution `a r^k + b r^{-k}` outward from the regular inner
/// solution (`b = 0`). Within a layer `rho` scales by `(r1/r2)^{2k} <= 1` and
/// across an interface it maps through the continuity of `u` and
/// `gamma u_r`, so every intermediate quantity stays bounded for large `k`.
pub fn layered_dn(layers: &RadialLayers, k: usize) -> Result<f64> {
    if k == 0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    let mut rho = 0.0_f64;
    let mut prev_r = None::<f64>;
    for (j, &s) in layers.radii.iter().enumerate() {
        if let Some(p) = prev_r {
            rho *= (p / s).powf(2.0 * kf);
        }
        // Impedance continuity: gamma_j (1 - rho)/(1 + rho) is preserved.
        let g = layers.values[j] / layers.values[j + 1];
        let tau = g * (1.0 - rho) / (1.0 + rho);
        rho = (1.0 - tau) / (1.0 + tau);
        if !rho.is_finite() {
            return Err(Error::Oracle(format!(
                "transfer matrix degenerated at interface {s} (mode {k})"
            )));
        }
        prev_r = Some(s);
    }
    if let Some(p) = prev_r {
        rho *= p.powf(2.0 * kf);
    }
    let denom = 1.0 + rho;
    if denom.abs() < 1e-300 {
        return Err(Error::Oracle(format!(
            "outer coefficients cancel at r=1 (mode {k})"
        )));
    }
    Ok(layers.values.last().unwrap() * kf * (1.0 - rho) / denom)
}

/// DN eigenvalues for modes `0..=k_max`.
pub fn layered_spectrum(layers: &RadialLayers, k_max: usize) -> Result<ModeSpectrum> {
    let eigenvalues = (0..=k_max)
        .map(|k| layered_dn(layers, k))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ModeSpectrum { eigenvalues })
}

/// Relative DN defect of the ring conductivity `(1+alpha)` on the annulus
/// `R^2 < |x| < R` against free space, per angular mode:
/// `lambda_k = k (1 + m_k)`.
///
/// With `t = R^{2|k|}`:
/// `m = 2a(2+a)(t - t^2) / ((2+a)^2 - a^2 t - a(2+a)(t - t^2))`.
pub fn m_k(alpha: f64, r: f64, k: i64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Oracle(format!("alpha {alpha} must be positive")));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Oracle(format!("R {r} outside (0,1)")));
    }
    if k == 0 {
        return Err(Error::Oracle("mode k must be nonzero".into()));
    }
    let t = r.powf(2.0 * k.unsigned_abs() as f64);
    let a = alpha;
    let num = 2.0 * a * (2.0 + a) * (t - t * t);
    let den = (2.0 + a).powi(2) - a * a * t - a * (2.0 + a) * (t - t * t);
    Ok(num / den)
}

/// Threshold above which the critical mode `k*` is defined.
pub const CRITICAL_R_THRESHOLD: f64 = 0.930_604_859_102_099_5; // (3/4)^(1/4)

/// The angular mode `k* = floor(-1 / (2 log2 R))` at which the ring defect is
/// provably large; requires `R > (3/4)^{1/4}`.
pub fn critical_mode(r: f64) -> Result<usize> {
    if !(r > CRITICAL_R_THRESHOLD && r < 1.0) {
        return Err(Error::Oracle(format!(
            "R {r} outside ((3/4)^(1/4), 1) = ({CRITICAL_R_THRESHOLD}, 1)"
        )));
    }
    let k = (-1.0 / (2.0 * r.log2())).floor();
    Ok(k as usize)
}

/// Lower bound `alpha / (16 (2 + alpha))` for `sup_k m_k` when
/// `R > (3/4)^{1/4}`.
pub fn defect_lower_bound(alpha: f64) -> f64 {
    alpha / (16.0 * (2.0 + alpha))
}

/// Homogenized limit of the equal-proportion two-phase laminate: harmonic mean
/// `2ab/(a+b)` along `direction`, arithmetic mean `(a+b)/2` across it.
pub fn laminate_g_limit(a: f64, b: f64, direction: [f64; 2]) -> Result<Matrix2<f64>> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Oracle(format!(
            "laminate phases must be positive, got {a}, {b}"
        )));
    }
    let norm = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
    if norm < 1e-14 {
        return Err(Error::Oracle("laminate direction must be nonzero".into()));
    }
    let d = [direction[0] / norm, direction[1] / norm];
    let p = [-d[1], d[0]];
    let along = 2.0 * a * b / (a + b);
    let across = 0.5 * (a + b);
    Ok(Matrix2::new(
        along * d[0] * d[0] + across * p[0] * p[0],
        along * d[0] * d[1] + across * p[0] * p[1],
        along * d[1] * d[0] + across * p[1] * p[0],
        along * d[1] * d[1] + across * p[1] * p[1],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_layer_is_exactly_k() {
        let layers = RadialLayers::new(vec![], vec![1.0]).unwrap();
        for k in 0..=64 {
            let lam = layered_dn(&layers, k).unwrap();
            assert!(
                (lam - k as f64).abs() <= 1e-13 * (k as f64).max(1.0),
                "mode {k}: {lam}"
            );
        }
        let layers3 = RadialLayers::new(vec![], vec![3.0]).unwrap();
        assert_relative_eq!(layered_dn(&layers3, 5).unwrap(), 15.0, max_relative = 1e-13);
    }

    #[test]
    fn two_layer_closed_form() {
        // beta inside radius rho, 1 outside: lambda_k = k (1 - mu t)/(1 + mu t),
        // mu = (1-beta)/(1+beta), t = rho^{2k}.
        let layers = RadialLayers::new(vec![0.5], vec![4.0, 1.0]).unwrap();
        let lam = layered_dn(&layers, 1).unwrap();
        assert_relative_eq!(lam, 23.0 / 17.0, max_relative = 1e-13);
        for k in 1..=40 {
            let mu = (1.0 - 4.0) / (1.0 + 4.0);
            let t = 0.5_f64.powi(2 * k);
            let expected = k as f64 * (1.0 - mu * t) / (1.0 + mu * t);
            assert_relative_eq!(
                layered_dn(&layers, k as usize).unwrap(),
                expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn mode_zero_is_zero() {
        let layers = RadialLayers::new(vec![0.3, 0.6], vec![5.0, 0.2, 1.0]).unwrap();
        assert_eq!(layered_dn(&layers, 0).unwrap(), 0.0);
        let spectrum = layered_spectrum(&layers, 8).unwrap();
        assert_eq!(spectrum.eigenvalues[0], 0.0);
        assert_eq!(spectrum.eigenvalues.len(), 9);
    }

    #[test]
    fn ring_formula_matches_transfer_matrix() {
        // The module's central oracle equivalence: three layers (1, 1+a, 1) at
        // radii (R^2, R) give lambda_k = k (1 + m_k).
        for &alpha in &[0.5, 1.0, 2.0] {
            for &r in &[0.8, 0.9, 0.95] {
                let layers =
                    RadialLayers::new(vec![r * r, r], vec![1.0, 1.0 + alpha, 1.0]).unwrap();
                for k in 1..=32_i64 {
                    let lam = layered_dn(&layers, k as usize).unwrap();
                    let m = m_k(alpha, r, k).unwrap();
                    let expected = k as f64 * (1.0 + m);
                    assert!(
                        (lam - expected).abs() <= 1e-10 * expected.abs(),
                        "alpha={alpha} R={r} k={k}: {lam} vs {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn ring_formula_frozen_values() {
        // Independent transfer-matrix derivation, alpha = 1, R = 0.9.
        assert_relative_eq!(
            m_k(1.0, 0.9, 1).unwrap(),
            0.1194829393268895,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            m_k(1.0, 0.9, 3).unwrap(),
            0.1934940127351062,
            max_relative = 1e-12
        );
        // Peak value at t = 1/2 for alpha = 1: 1.5 / 7.75.
        let r_half = 0.5_f64.powf(1.0 / 6.0); // R^{2*3} = 1/2
        assert_relative_eq!(
            m_k(1.0, r_half, 3).unwrap(),
            1.5 / 7.75,
            max_relative = 1e-12
        );
        assert_relative_eq!(1.5 / 7.75, 0.193548, max_relative = 1e-5);
    }

    #[test]
    fn defect_is_small_positive_and_vanishing_in_k() {
        for &alpha in &[0.25, 1.0, 3.0] {
            for &r in &[0.5_f64, 0.8, 0.95] {
                // m is unimodal in t = R^{2k} with its peak at t >= 1/2, so
                // decay in k is guaranteed once t < 1/2.
                let k_dec = (-1.0 / (2.0 * r.log2())).floor() as i64 + 1;
                let mut prev = f64::INFINITY;
                let mut prev_k = 0;
                let mut last = f64::NAN;
                for k in [1, 2, 4, 8, 16, 32, 64, 128] {
                    let m = m_k(alpha, r, k).unwrap();
                    assert!(m > 0.0 && m < 1.0, "m out of (0,1): {m}");
                    if prev_k >= k_dec {
                        assert!(m < prev, "m_k not decaying at k={k} (R={r})");
                    }
                    prev = m;
                    prev_k = k;
                    last = m;
                }
                assert!(last < 1e-4, "tail m_128 = {last} not small");
            }
        }
    }

    #[test]
    fn critical_mode_values_and_bracket() {
        assert_eq!(critical_mode(0.95).unwrap(), 6);
        assert!((0.95_f64.powi(12) - 0.5404).abs() < 5e-4);
        assert_eq!(critical_mode(0.9306049).unwrap(), 4);
        assert!(critical_mode(0.71).is_err());
        assert!(critical_mode(0.93).is_err());
        for i in 0..50 {
            let r = CRITICAL_R_THRESHOLD + 1e-6 + (0.9989 - CRITICAL_R_THRESHOLD) * i as f64 / 49.0;
            let k = critical_mode(r).unwrap();
            assert!(k >= 1);
            let t = r.powi(2 * k as i32);
            assert!(
                t >= 0.5 - 1e-12 && t <= 0.5 / (r * r) + 1e-12,
                "R={r}: R^(2k*)={t} outside [1/2, R^-2/2]"
            );
        }
    }

    #[test]
    fn critical_mode_witnesses_lower_bound() {
        for &alpha in &[0.5, 1.0, 2.0] {
            let bound = defect_lower_bound(alpha);
            for i in 0..60 {
                let r = 0.94 + (0.999 - 0.94) * i as f64 / 59.0;
                let k = critical_mode(r).unwrap();
                let m = m_k(alpha, r, k as i64).unwrap();
                assert!(
                    m > bound,
                    "alpha={alpha} R={r}: m_(k*)={m} <= bound {bound}"
                );
            }
        }
        assert_relative_eq!(defect_lower_bound(1.0), 1.0 / 48.0, max_relative = 1e-15);
    }

    #[test]
    fn large_modes_with_small_radii_stay_finite() {
        let layers = RadialLayers::new(vec![1e-3, 2e-3], vec![100.0, 0.01, 1.0]).unwrap();
        for k in [1, 16, 64, 256] {
            let lam = layered_dn(&layers, k).unwrap();
            assert!(lam.is_finite() && lam > 0.0);
        }
        // Far from the interfaces the outer layer dominates: lambda_k ~ k.
        let lam = layered_dn(&layers, 256).unwrap();
        assert_relative_eq!(lam, 256.0, max_relative = 1e-10);
    }

    #[test]
    fn g_limit_means_and_rotation() {
        let m = laminate_g_limit(1.0, 2.0, [1.0, 0.0]).unwrap();
        assert_eq!(m[(0, 0)], 4.0 / 3.0);
        assert_eq!(m[(1, 1)], 1.5);
        assert_eq!(m[(0, 1)], 0.0);

        let c = laminate_g_limit(3.0, 3.0, [0.6, 0.8]).unwrap();
        assert_relative_eq!(c[(0, 0)], 3.0, max_relative = 1e-14);
        assert_relative_eq!(c[(1, 1)], 3.0, max_relative = 1e-14);
        assert!(c[(0, 1)].abs() < 1e-14);

        // Rotated direction keeps the eigenvalues {harmonic, arithmetic}.
        let rot = laminate_g_limit(1.0, 2.0, [0.6, 0.8]).unwrap();
        let eig = nalgebra::SymmetricEigen::new(rot);
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_relative_eq!(ev[0], 4.0 / 3.0, max_relative = 1e-13);
        assert_relative_eq!(ev[1], 1.5, max_relative = 1e-13);
        // Between the means, equality attained: ordering sanity check.
        assert!(ev[0] >= 2.0 * 1.0 * 2.0 / 3.0 - 1e-13 && ev[1] <= 1.5 + 1e-13);
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(RadialLayers::new(vec![0.5], vec![1.0]).is_err());
        assert!(RadialLayers::new(vec![0.5, 0.4], vec![1.0, 2.0, 3.0]).is_err());
        assert!(RadialLayers::new(vec![1.5], vec![1.0, 2.0]).is_err());
        assert!(RadialLayers::new(vec![0.5], vec![1.0, -2.0]).is_err());
        assert!(m_k(0.0, 0.9, 1).is_err());
        assert!(m_k(1.0, 1.0, 1).is_err());
        assert!(m_k(1.0, 0.9, 0).is_err());
        assert!(laminate_g_limit(0.0, 1.0, [1.0, 0.0]).is_err());
        assert!(laminate_g_limit(1.0, 1.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn layer_lookup_matches_annuli() {
        let layers = RadialLayers::new(vec![0.3, 0.6], vec![5.0, 0.2, 1.0]).unwrap();
        assert_eq!(layers.value_at(0.1), 5.0);
        assert_eq!(layers.value_at(0.4), 0.2);
        assert_eq!(layers.value_at(0.9), 1.0);
    }
}
