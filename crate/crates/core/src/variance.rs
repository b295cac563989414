//! Placement-based covariance components, their aggregates, plug-in
//! fourth-moment quantities and standard errors of the aggregates.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::TrialData;

/// Placement of every observation against the opposite arm's column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementTables {
    /// Fraction of treatment values below each control value (ties ½).
    pub control: Array3<f64>,
    /// Fraction of control values below each treatment value (ties ½).
    pub treatment: Array3<f64>,
    pub control_centered: Array3<f64>,
    pub treatment_centered: Array3<f64>,
}

fn place_against(values: ndarray::ArrayView1<f64>, other: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let mut sorted = other.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    values
        .iter()
        .map(|&a| {
            let lo = sorted.partition_point(|&b| b < a);
            let hi = sorted.partition_point(|&b| b <= a);
            (lo as f64 + 0.5 * (hi - lo) as f64) / m
        })
        .collect()
}

fn center(a: &Array3<f64>) -> Array3<f64> {
    let mean = a.mean_axis(Axis(0)).unwrap();
    a - &mean.insert_axis(Axis(0))
}

pub fn placements(data: &TrialData) -> PlacementTables {
    let (t_len, k_len) = (data.visits(), data.outcomes());
    let mut u = Array3::zeros((data.n_control(), t_len, k_len));
    let mut v = Array3::zeros((data.n_treatment(), t_len, k_len));
    for t in 0..t_len {
        for k in 0..k_len {
            let (x, y) = (data.control_column(t, k), data.treatment_column(t, k));
            for (i, p) in place_against(x, y).into_iter().enumerate() {
                u[[i, t, k]] = p;
            }
            for (j, p) in place_against(y, x).into_iter().enumerate() {
                v[[j, t, k]] = p;
            }
        }
    }
    let control_centered = center(&u);
    let treatment_centered = center(&v);
    PlacementTables { control: u, treatment: v, control_centered, treatment_centered }
}

fn cross_moment(centered: &Array3<f64>, t1: usize, k1: usize, t2: usize, k2: usize) -> f64 {
    let n = centered.dim().0;
    (0..n).map(|i| centered[[i, t1, k1]] * centered[[i, t2, k2]]).sum::<f64>() / n as f64
}

/// Control-arm covariance of placements at (t1,k1) and (t2,k2), divisor n_x.
pub fn c_hat(pt: &PlacementTables, t1: usize, k1: usize, t2: usize, k2: usize) -> f64 {
    cross_moment(&pt.control_centered, t1, k1, t2, k2)
}

/// Treatment-arm counterpart of [`c_hat`], divisor n_y.
pub fn d_hat(pt: &PlacementTables, t1: usize, k1: usize, t2: usize, k2: usize) -> f64 {
    cross_moment(&pt.treatment_centered, t1, k1, t2, k2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub c4: Array4<f64>,
    pub d4: Array4<f64>,
    pub c: Array2<f64>,
    pub d: Array2<f64>,
    pub sigma: Array2<f64>,
    pub lambda: f64,
}

impl VarianceComponents {
    /// J'ΣJ, the sum of all entries of Σ.
    pub fn sigma_total(&self) -> f64 {
        self.sigma.sum()
    }
}

/// Symmetric [T][K][T][K] covariance tensor; only the upper triangle of
/// index pairs is computed so the mirror is exact.
fn covariance_tensor(centered: &Array3<f64>) -> Array4<f64> {
    let (_, t_len, k_len) = centered.dim();
    let tk = t_len * k_len;
    let mut out = Array4::zeros((t_len, k_len, t_len, k_len));
    for a in 0..tk {
        let (t1, k1) = (a / k_len, a % k_len);
        for b in a..tk {
            let (t2, k2) = (b / k_len, b % k_len);
            let v = cross_moment(centered, t1, k1, t2, k2);
            out[[t1, k1, t2, k2]] = v;
            out[[t2, k2, t1, k1]] = v;
        }
    }
    out
}

/// Average a [T][K][T][K] tensor over both outcome indices.
pub fn collapse_outcomes(c4: &Array4<f64>) -> Array2<f64> {
    let (t_len, k_len, _, _) = c4.dim();
    let scale = 1.0 / (k_len * k_len) as f64;
    let mut out = Array2::zeros((t_len, t_len));
    for t1 in 0..t_len {
        for t2 in t1..t_len {
            let mut s = 0.0;
            for k1 in 0..k_len {
                for k2 in 0..k_len {
                    s += c4[[t1, k1, t2, k2]];
                }
            }
            out[[t1, t2]] = s * scale;
            out[[t2, t1]] = s * scale;
        }
    }
    out
}

/// Σ from C and D for arm sizes n_x, n_y (weights N/n_x and N/n_y).
pub fn combine_sigma(c: &Array2<f64>, d: &Array2<f64>, n_x: f64, n_y: f64) -> Array2<f64> {
    let n = n_x + n_y;
    let (wc, wd) = (n / n_x, n / n_y);
    Array2::from_shape_fn(c.dim(), |ij| wc * c[ij] + wd * d[ij])
}

pub fn variance_components(data: &TrialData) -> VarianceComponents {
    components_from_placements(&placements(data))
}

pub fn components_from_placements(pt: &PlacementTables) -> VarianceComponents {
    let c4 = covariance_tensor(&pt.control_centered);
    let d4 = covariance_tensor(&pt.treatment_centered);
    let c = collapse_outcomes(&c4);
    let d = collapse_outcomes(&d4);
    let (nx, ny) = (pt.control.dim().0 as f64, pt.treatment.dim().0 as f64);
    let sigma = combine_sigma(&c, &d, nx, ny);
    VarianceComponents { c4, d4, c, d, sigma, lambda: nx / ny }
}

/// Plug-in fourth-moment quantities for one placement sample, or their
/// population values when filled by the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    pub k1: Array2<f64>,
    pub k2: Array2<f64>,
    pub l1: Array4<f64>,
    pub l2: Array4<f64>,
    pub g: Array4<f64>,
    pub h: Array2<f64>,
    pub fourth_control: Array2<f64>,
    pub fourth_treatment: Array2<f64>,
    /// (1/n)Σ a(t1)² a(t2)² with a(t) the outcome-averaged centered placement.
    pub agg_fourth_control: Option<Array2<f64>>,
    pub agg_fourth_treatment: Option<Array2<f64>>,
    pub lambda: f64,
}

fn fourth_moments(centered: &Array3<f64>) -> Array2<f64> {
    centered.mapv(|v| v.powi(4)).mean_axis(Axis(0)).unwrap()
}

fn agg_fourth(centered: &Array3<f64>) -> Array2<f64> {
    let (n, t_len, _) = centered.dim();
    let a = centered.mean_axis(Axis(2)).unwrap();
    let a2 = a.mapv(|v| v * v);
    Array2::from_shape_fn((t_len, t_len), |(t1, t2)| {
        (0..n).map(|i| a2[[i, t1]] * a2[[i, t2]]).sum::<f64>() / n as f64
    })
}

fn l_tensor(cov: &Array4<f64>) -> Array4<f64> {
    let (t_len, k_len, _, _) = cov.dim();
    Array4::from_shape_fn((t_len, k_len, t_len, k_len), |(t1, k1, t2, k2)| {
        let c = cov[[t1, k1, t2, k2]];
        cov[[t1, k1, t1, k1]] * cov[[t2, k2, t2, k2]] + c * c
    })
}

/// Assemble moments from per-arm fourth moments and covariance tensors.
pub fn assemble_moments(
    fourth_control: Array2<f64>,
    fourth_treatment: Array2<f64>,
    c4: &Array4<f64>,
    d4: &Array4<f64>,
    lambda: f64,
    agg_fourth_control: Option<Array2<f64>>,
    agg_fourth_treatment: Option<Array2<f64>>,
) -> MomentEstimates {
    let var_of = |cov: &Array4<f64>| {
        let (t_len, k_len, _, _) = cov.dim();
        Array2::from_shape_fn((t_len, k_len), |(t, k)| cov[[t, k, t, k]])
    };
    let (vu, vv) = (var_of(c4), var_of(d4));
    let k1 = &fourth_control - &vu.mapv(|v| v * v);
    let k2 = &fourth_treatment - &vv.mapv(|v| v * v);
    let l1 = l_tensor(c4);
    let l2 = l_tensor(d4);
    let (wc, wd) = (1.0 + 1.0 / lambda, 1.0 + lambda);
    let g = &l1 * wc + &l2 * wd;
    let h = &k1 * wc + &k2 * wd;
    MomentEstimates {
        k1,
        k2,
        l1,
        l2,
        g,
        h,
        fourth_control,
        fourth_treatment,
        agg_fourth_control,
        agg_fourth_treatment,
        lambda,
    }
}

pub fn moment_estimates(pt: &PlacementTables, vc: &VarianceComponents) -> MomentEstimates {
    assemble_moments(
        fourth_moments(&pt.control_centered),
        fourth_moments(&pt.treatment_centered),
        &vc.c4,
        &vc.d4,
        vc.lambda,
        Some(agg_fourth(&pt.control_centered)),
        Some(agg_fourth(&pt.treatment_centered)),
    )
}

/// Asymptotic variance of √N·(J'Σ̂J − J'ΣJ): ℋ on the exact diagonal of the
/// index pairs, 𝒢 elsewhere, scaled by 1/K⁴.
pub fn sigma_total_asymptotic_variance(me: &MomentEstimates) -> f64 {
    let k_len = me.h.dim().1;
    let mut s = 0.0;
    for ((t1, k1, t2, k2), &g) in me.g.indexed_iter() {
        s += if t1 == t2 && k1 == k2 { me.h[[t1, k1]] } else { g };
    }
    s / (k_len as f64).powi(4)
}

fn se_independent(k: ArrayView2<f64>, l: &Array4<f64>, n: f64) -> Array2<f64> {
    let (t_len, k_len, _, _) = l.dim();
    let scale = 1.0 / (k_len as f64).powi(4);
    Array2::from_shape_fn((t_len, t_len), |(t1, t2)| {
        let mut s = 0.0;
        for k1 in 0..k_len {
            for k2 in 0..k_len {
                s += if t1 == t2 && k1 == k2 { k[[t1, k1]] } else { l[[t1, k1, t2, k2]] };
            }
        }
        (s * scale / n).max(0.0).sqrt()
    })
}

/// SEs of Ĉ and D̂ treating distinct index quadruples as uncorrelated.
pub fn se_matrices_independent(
    me: &MomentEstimates,
    n_x: usize,
    n_y: usize,
) -> (Array2<f64>, Array2<f64>) {
    (
        se_independent(me.k1.view(), &me.l1, n_x as f64),
        se_independent(me.k2.view(), &me.l2, n_y as f64),
    )
}

fn se_joint(agg: &Array2<f64>, agg_cov: &Array2<f64>, n: f64) -> Array2<f64> {
    Array2::from_shape_fn(agg.dim(), |ij| {
        ((agg[ij] - agg_cov[ij] * agg_cov[ij]) / n).max(0.0).sqrt()
    })
}

/// SEs of Ĉ and D̂.
///
/// Each entry of Ĉ is the mean over subjects of a(t1)·a(t2), where a(t) is
/// the outcome-averaged centered placement, so its variance is taken from
/// the fourth moments of a directly. This keeps the covariance between
/// quadruples that share a subject. Falls back to
/// [`se_matrices_independent`] when the aggregated moments are absent.
pub fn se_matrices(
    me: &MomentEstimates,
    vc: &VarianceComponents,
    n_x: usize,
    n_y: usize,
) -> (Array2<f64>, Array2<f64>) {
    match (&me.agg_fourth_control, &me.agg_fourth_treatment) {
        (Some(ac), Some(ad)) => {
            (se_joint(ac, &vc.c, n_x as f64), se_joint(ad, &vc.d, n_y as f64))
        }
        _ => se_matrices_independent(me, n_x, n_y),
    }
}
