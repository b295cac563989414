//! Pooled mid-ranks per (visit, outcome) and the relative effect estimates
//! built from them.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::TrialData;

/// Mid-ranks of `values`: ties get the average of the ranks they span.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; m];
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub ranks_control: Array3<f64>,
    pub ranks_treatment: Array3<f64>,
    pub mean_rank_control: Array2<f64>,
    pub mean_rank_treatment: Array2<f64>,
    /// Per visit, mean over outcomes of the treatment minus control mean rank.
    pub rank_diff_by_visit: Array1<f64>,
    pub theta_hat: Array2<f64>,
    pub theta_bar_hat: f64,
}

pub fn rank_summary(data: &TrialData) -> RankSummary {
    let (nx, ny) = (data.n_control(), data.n_treatment());
    let (t_len, k_len) = (data.visits(), data.outcomes());
    let n = (nx + ny) as f64;
    let mut rx = Array3::zeros((nx, t_len, k_len));
    let mut ry = Array3::zeros((ny, t_len, k_len));
    let mut mx = Array2::zeros((t_len, k_len));
    let mut my = Array2::zeros((t_len, k_len));
    let mut pooled = Vec::with_capacity(nx + ny);
    for t in 0..t_len {
        for k in 0..k_len {
            pooled.clear();
            pooled.extend(data.control_column(t, k).iter());
            pooled.extend(data.treatment_column(t, k).iter());
            let r = midranks(&pooled);
            for i in 0..nx {
                rx[[i, t, k]] = r[i];
            }
            for j in 0..ny {
                ry[[j, t, k]] = r[nx + j];
            }
            mx[[t, k]] = r[..nx].iter().sum::<f64>() / nx as f64;
            my[[t, k]] = r[nx..].iter().sum::<f64>() / ny as f64;
        }
    }
    let diff = &my - &mx;
    let theta_hat = diff.mapv(|d| 2.0 / n * d);
    let rank_diff_by_visit = diff.rows().into_iter().map(|r| r.mean().unwrap()).collect();
    let theta_bar_hat = theta_hat.mean().unwrap();
    RankSummary {
        ranks_control: rx,
        ranks_treatment: ry,
        mean_rank_control: mx,
        mean_rank_treatment: my,
        rank_diff_by_visit,
        theta_hat,
        theta_bar_hat,
    }
}

/// Pairwise estimate: mean over all (control, treatment) pairs of
/// I(x < y) − I(x > y), ties scoring zero.
pub fn theta_hat_pairwise(data: &TrialData) -> Array2<f64> {
    let (nx, ny) = (data.n_control(), data.n_treatment());
    let mut out = Array2::zeros((data.visits(), data.outcomes()));
    for ((t, k), cell) in out.indexed_iter_mut() {
        let mut ys: Vec<f64> = data.treatment_column(t, k).to_vec();
        ys.sort_by(f64::total_cmp);
        let mut score: i64 = 0;
        for &x in data.control_column(t, k) {
            let below = ys.partition_point(|&y| y < x);
            let not_above = ys.partition_point(|&y| y <= x);
            let above = ny - not_above;
            score += above as i64 - below as i64;
        }
        *cell = score as f64 / (nx * ny) as f64;
    }
    out
}
