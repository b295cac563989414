//! Design calculus: closed-form power, minimum sample size, and power
//! estimated from observed data with its delta-method variance.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::TrialData;
use crate::error::{LrstError, Result};
use crate::inference::{check_alpha, VARIANCE_FLOOR};
use crate::numeric::{norm_cdf, norm_pdf, norm_quantile, upper_critical};
use crate::ranks::rank_summary;
use crate::variance::{
    components_from_placements, moment_estimates, placements, sigma_total_asymptotic_variance,
    MomentEstimates, VarianceComponents,
};

/// Which variance to attach to an estimated power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerVarianceForm {
    /// Both delta-method terms: the effect-estimate term and the Σ̂ term.
    #[default]
    DeltaFull,
    /// Σ̂ term only.
    SigmaOnly,
    /// Σ̂ term multiplied by N.
    Printed,
}

impl PowerVarianceForm {
    pub const ALL: [PowerVarianceForm; 3] =
        [PowerVarianceForm::DeltaFull, PowerVarianceForm::SigmaOnly, PowerVarianceForm::Printed];

    pub fn name(self) -> &'static str {
        match self {
            PowerVarianceForm::DeltaFull => "delta_full",
            PowerVarianceForm::SigmaOnly => "sigma_only",
            PowerVarianceForm::Printed => "printed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub power: f64,
    /// Argument of Φ before subtracting z_α.
    pub noncentrality: f64,
    pub critical_value: f64,
    pub theta_bar: f64,
    /// J'(C+λD)J for theoretical power, J'Σ̂J for estimated power.
    pub quad_form: f64,
    pub n: usize,
    pub lambda: f64,
    pub t: usize,
    pub alpha: f64,
    pub variance: Option<f64>,
    pub se: Option<f64>,
    pub variance_form: Option<PowerVarianceForm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub n_raw: f64,
    pub n: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub achieved_power: f64,
    pub target_power: f64,
    pub lambda: f64,
    pub alpha: f64,
}

fn check_square(c: &Array2<f64>, d: &Array2<f64>) -> Result<usize> {
    let t = c.nrows();
    if t == 0 || c.ncols() != t || d.dim() != (t, t) {
        return Err(LrstError::InvalidArgument(format!(
            "C and D must be square and of equal size, got {:?} and {:?}",
            c.dim(),
            d.dim()
        )));
    }
    Ok(t)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(LrstError::InvalidArgument(format!("lambda must be positive, got {lambda}")))
    }
}

/// J'(C + λD)J.
pub fn design_quad_form(c: &Array2<f64>, d: &Array2<f64>, lambda: f64) -> f64 {
    c.sum() + lambda * d.sum()
}

pub fn theoretical_power(
    theta_bar: f64,
    c: &Array2<f64>,
    d: &Array2<f64>,
    lambda: f64,
    n: usize,
    alpha: f64,
) -> Result<PowerResult> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    let t = check_square(c, d)?;
    if n == 0 {
        return Err(LrstError::InvalidArgument("N must be positive".into()));
    }
    let q = design_quad_form(c, d, lambda);
    if !(q > 0.0) {
        return Err(LrstError::NonPositiveVariance(q));
    }
    let tf = t as f64;
    let scale = (4.0 * (1.0 + lambda) * q / (n as f64 * lambda * tf * tf)).sqrt();
    let nc = theta_bar / scale;
    let z = upper_critical(alpha);
    Ok(PowerResult {
        power: norm_cdf(nc - z),
        noncentrality: nc,
        critical_value: z,
        theta_bar,
        quad_form: q,
        n,
        lambda,
        t,
        alpha,
        variance: None,
        se: None,
        variance_form: None,
    })
}

/// Smallest trial meeting the target power.
///
/// The closed-form total is split as n_y = ⌈N/(1+λ)⌉, n_x = ⌈λ·n_y⌉; n_y is
/// then raised one at a time until the power at the realised split reaches
/// the target.
pub fn required_sample_size(
    theta_bar: f64,
    c: &Array2<f64>,
    d: &Array2<f64>,
    lambda: f64,
    alpha: f64,
    target_power: f64,
) -> Result<SampleSizeResult> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    let t = check_square(c, d)? as f64;
    if !(target_power > alpha && target_power < 1.0) {
        return Err(LrstError::InvalidArgument(format!(
            "target power must lie in (alpha, 1), got {target_power}"
        )));
    }
    if !(theta_bar > 0.0) {
        return Err(LrstError::NonPositiveEffect(theta_bar));
    }
    let q = design_quad_form(c, d, lambda);
    if !(q > 0.0) {
        return Err(LrstError::NonPositiveVariance(q));
    }
    let zsum = norm_quantile(target_power) + upper_critical(alpha);
    let n_raw = 4.0 * (1.0 + lambda) / (lambda * t * t) * (zsum / theta_bar).powi(2) * q;

    let split = |n_y: usize| {
        let n_x = ((lambda * n_y as f64).ceil() as usize).max(1);
        (n_x, n_y)
    };
    let power_at = |n_x: usize, n_y: usize| -> Result<f64> {
        let realised = n_x as f64 / n_y as f64;
        Ok(theoretical_power(theta_bar, c, d, realised, n_x + n_y, alpha)?.power)
    };
    let mut n_y = ((n_raw / (1.0 + lambda)).ceil() as usize).max(1);
    let (mut n_x, _) = split(n_y);
    let mut achieved = power_at(n_x, n_y)?;
    while achieved < target_power {
        n_y += 1;
        n_x = split(n_y).0;
        achieved = power_at(n_x, n_y)?;
    }
    Ok(SampleSizeResult {
        n_raw,
        n: n_x + n_y,
        n_x,
        n_y,
        achieved_power: achieved,
        target_power,
        lambda,
        alpha,
    })
}

/// Power from an effect and a J'ΣJ value, at total size `n`.
pub fn power_from_sigma_total(
    theta_bar: f64,
    sigma_total: f64,
    n: usize,
    t: usize,
    alpha: f64,
) -> Result<(f64, f64)> {
    if !(sigma_total > VARIANCE_FLOOR) {
        return Err(LrstError::DegenerateVariance(sigma_total));
    }
    let tf = t as f64;
    let nc = theta_bar / (4.0 * sigma_total / (n as f64 * tf * tf)).sqrt();
    Ok((nc, norm_cdf(nc - upper_critical(alpha))))
}

/// Estimated power from already computed pieces.
#[allow(clippy::too_many_arguments)]
pub fn estimated_power_from_parts(
    theta_bar_hat: f64,
    vc: &VarianceComponents,
    me: &MomentEstimates,
    n_observed: usize,
    alpha: f64,
    at_n: Option<usize>,
    form: PowerVarianceForm,
) -> Result<PowerResult> {
    check_alpha(alpha)?;
    let t = vc.sigma.nrows();
    let n = at_n.unwrap_or(n_observed);
    if n == 0 {
        return Err(LrstError::InvalidArgument("N must be positive".into()));
    }
    let y = vc.sigma_total();
    let (nc, power) = power_from_sigma_total(theta_bar_hat, y, n, t, alpha)?;
    let z = upper_critical(alpha);
    let dens2 = norm_pdf(nc - z).powi(2);
    let tf = t as f64;
    let sigma_term = theta_bar_hat.powi(2) * tf * tf * sigma_total_asymptotic_variance(me)
        / (16.0 * y.powi(3));
    // estimator variances scale with the observed size, the derivative of
    // Φ with the evaluated size
    let ratio = n as f64 / n_observed as f64;
    let variance = match form {
        PowerVarianceForm::DeltaFull => dens2 * ratio * (1.0 + sigma_term),
        PowerVarianceForm::SigmaOnly => dens2 * sigma_term,
        PowerVarianceForm::Printed => n as f64 * dens2 * sigma_term,
    }
    .max(0.0);
    Ok(PowerResult {
        power,
        noncentrality: nc,
        critical_value: z,
        theta_bar: theta_bar_hat,
        quad_form: y,
        n,
        lambda: vc.lambda,
        t,
        alpha,
        variance: Some(variance),
        se: Some(variance.sqrt()),
        variance_form: Some(form),
    })
}

pub fn estimated_power(
    data: &TrialData,
    alpha: f64,
    at_n: Option<usize>,
    form: PowerVarianceForm,
) -> Result<PowerResult> {
    let pt = placements(data);
    let vc = components_from_placements(&pt);
    let me = moment_estimates(&pt, &vc);
    let theta = rank_summary(data).theta_bar_hat;
    estimated_power_from_parts(theta, &vc, &me, data.n_total(), alpha, at_n, form)
}
