//! The one-sided longitudinal rank sum test.

use serde::{Deserialize, Serialize};

use crate::data::TrialData;
use crate::error::{LrstError, Result};
use crate::numeric::{norm_sf, upper_critical};
use crate::ranks::{rank_summary, RankSummary};
use crate::variance::{variance_components, VarianceComponents};

/// Below this J'Σ̂J is treated as zero.
pub const VARIANCE_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrstResult {
    /// Overall treatment minus control mean rank.
    pub rank_diff: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub t: usize,
    pub k: usize,
}

/// Statistic from precomputed pieces; shared with the simulation loop.
pub fn lrst_from_parts(
    data: &TrialData,
    ranks: &RankSummary,
    vc: &VarianceComponents,
    alpha: f64,
) -> Result<LrstResult> {
    check_alpha(alpha)?;
    let quad = vc.sigma_total();
    if !(quad > VARIANCE_FLOOR) {
        return Err(LrstError::DegenerateVariance(quad));
    }
    let n = data.n_total() as f64;
    let t_len = data.visits() as f64;
    let total: f64 = ranks.rank_diff_by_visit.sum();
    let z = total / n.sqrt() / quad.sqrt();
    let rank_diff = total / t_len;
    let se = (quad * n).sqrt() / t_len;
    Ok(LrstResult {
        rank_diff,
        se,
        z,
        p_value: norm_sf(z),
        reject: z > upper_critical(alpha),
        alpha,
        n_x: data.n_control(),
        n_y: data.n_treatment(),
        t: data.visits(),
        k: data.outcomes(),
    })
}

pub fn lrst_test(data: &TrialData, alpha: f64) -> Result<LrstResult> {
    lrst_from_parts(data, &rank_summary(data), &variance_components(data), alpha)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(LrstError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}
