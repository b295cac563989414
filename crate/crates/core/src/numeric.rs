//! Shared numeric helpers: standard normal distribution functions and
//! Gauss–Hermite quadrature nodes.
//!
//! The normal CDF goes through the complementary error function so that both
//! tails keep full relative precision. The quantile starts from an inverse
//! erfc approximation and is polished by Newton steps against that CDF.
//! Both are accurate to well below 1e-12 absolute error on [-8, 8].

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, Φ(x).
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x), computed without cancellation.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Standard normal quantile, Φ⁻¹(p). Returns ±∞ at the endpoints and NaN
/// outside [0, 1].
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..3 {
        let d = norm_pdf(x);
        if d == 0.0 {
            break;
        }
        // work on the smaller tail so the residual keeps relative precision
        let step = if x < 0.0 { (norm_cdf(x) - p) / d } else { ((1.0 - p) - norm_sf(x)) / d };
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    x
}


/// 2Φ(x) − 1, odd in x to the last bit.
#[inline]
pub fn two_sided_mass(x: f64) -> f64 {
    libm::erf(x * FRAC_1_SQRT_2)
}

/// Upper critical value z_α with P(Z > z_α) = α.
#[inline]
pub fn upper_critical(alpha: f64) -> f64 {
    -norm_quantile(alpha)
}

/// Gauss–Hermite nodes and weights for the weight function exp(−x²).
///
/// Newton iteration on the orthonormal Hermite recurrence, seeded with the
/// usual asymptotic guesses for the largest roots. Nodes are returned in
/// increasing order.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let pim4 = PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Quadrature rule for E[f(Z)], Z ~ N(0, 1): returns (points, weights) with
/// weights summing to one.
pub fn standard_normal_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(n);
    let scale = 1.0 / PI.sqrt();
    (
        x.into_iter().map(|v| v * SQRT_2).collect(),
        w.into_iter().map(|v| v * scale).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed in extended precision.
    const CDF_REFERENCE: &[(f64, f64)] = &[
        (-8.0, 6.220_960_574_271_784e-16),
        (-5.0, 2.866_515_718_791_939e-7),
        (-1.959_963_984_540_054, 0.025),
        (-1.0, 0.158_655_253_931_457_05),
        (0.0, 0.5),
        (0.5, 0.691_462_461_274_013_1),
        (1.644_853_626_951_472_2, 0.95),
        (3.0, 0.998_650_101_968_369_9),
        (8.0, 0.999_999_999_999_999_4),
    ];

    #[test]
    fn cdf_matches_reference_values() {
        for &(x, p) in CDF_REFERENCE {
            assert!((norm_cdf(x) - p).abs() < 1e-15, "x = {x}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let mut x = -8.0;
        while x <= 8.0 {
            let p = norm_cdf(x);
            if p > 1e-300 && p < 1.0 - 1e-15 {
                let back = norm_quantile(p);
                // conditioning: dx = dp / φ(x)
                let tol = 1e-12_f64.max(4.0 * f64::EPSILON * p / norm_pdf(x));
                assert!((back - x).abs() < tol, "x = {x}, back = {back}");
            }
            x += 0.125;
        }
        assert_eq!(norm_quantile(0.5), 0.0);
        assert!((upper_critical(0.05) - 1.644_853_626_951_472_7).abs() < 1e-14);
        assert!((upper_critical(0.025) - 1.959_963_984_540_054).abs() < 1e-14);
    }

    #[test]
    fn quantile_edges() {
        assert_eq!(norm_quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(norm_quantile(1.0), f64::INFINITY);
        assert!(norm_quantile(-0.1).is_nan());
        assert!(norm_quantile(1.1).is_nan());
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let (z, w) = standard_normal_rule(64);
        let moment = |k: i32| z.iter().zip(&w).map(|(z, w)| w * z.powi(k)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-11);
        assert!((moment(6) - 15.0).abs() < 1e-10);
        assert!(z.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn hermite_small_rule_is_exact() {
        let (x, w) = gauss_hermite(2);
        assert!((x[1] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((w[0] - PI.sqrt() / 2.0).abs() < 1e-15);
    }
}
