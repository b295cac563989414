//! Trial generation under a Gaussian scenario and the replicate studies
//! built on it: rejection rates, estimated power and estimator accuracy.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{validate_and_prune, TrialData};
use crate::error::{LrstError, Result};
use crate::inference::{check_alpha, lrst_from_parts};
use crate::oracle::{correlation_factor, GaussianScenario, OracleOutput};
use crate::power::{estimated_power_from_parts, PowerVarianceForm};
use crate::ranks::rank_summary;
use crate::variance::{
    components_from_placements, moment_estimates, placements, se_matrices,
    se_matrices_independent,
};

fn draw_arm(
    mu: &Array2<f64>,
    sd: &Array2<f64>,
    factor: &Array2<f64>,
    n: usize,
    rng: &mut ChaCha20Rng,
) -> Array3<f64> {
    let (t, k) = mu.dim();
    let m = t * k;
    let mut out = Array3::zeros((n, t, k));
    let mut w = vec![0.0; m];
    for i in 0..n {
        for wi in w.iter_mut() {
            *wi = StandardNormal.sample(rng);
        }
        for j in 0..m {
            let z: f64 = (0..m).map(|l| factor[[j, l]] * w[l]).sum();
            let (tt, kk) = (j / k, j % k);
            out[[i, tt, kk]] = mu[[tt, kk]] + sd[[tt, kk]] * z;
        }
    }
    out
}

fn generate_with(
    s: &GaussianScenario,
    factor: &Array2<f64>,
    n_x: usize,
    n_y: usize,
    rng: &mut ChaCha20Rng,
) -> Result<TrialData> {
    let x = draw_arm(&s.mu_control, &s.sd_control, factor, n_x, rng);
    let y = draw_arm(&s.mu_treatment, &s.sd_treatment, factor, n_y, rng);
    TrialData::new(x, y)
}

/// One simulated trial over every visit of the scenario, including
/// degenerate ones.
pub fn generate_trial(s: &GaussianScenario, n_x: usize, n_y: usize, seed: u64) -> Result<TrialData> {
    s.validate()?;
    let factor = correlation_factor(&s.joint_correlation())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    generate_with(s, &factor, n_x, n_y, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub scenario: GaussianScenario,
}

impl SimConfig {
    /// Split a total size by the scenario's allocation ratio (n_x rounded
    /// to nearest).
    pub fn with_total(scenario: GaussianScenario, n: usize, replicates: usize, alpha: f64, seed: u64) -> Self {
        let n_x = (n as f64 * scenario.lambda / (1.0 + scenario.lambda)).round() as usize;
        Self { n_x, n_y: n - n_x, replicates, alpha, seed, scenario }
    }

    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.replicates == 0 {
            return Err(LrstError::InvalidArgument("replicates must be at least 1".into()));
        }
        if self.n_x < 2 || self.n_y < 2 {
            return Err(LrstError::InvalidArgument(format!(
                "each arm needs at least 2 subjects, got n_x = {}, n_y = {}",
                self.n_x, self.n_y
            )));
        }
        self.scenario.validate()
    }
}

/// What one replicate contributes; `None` fields mark a degenerate draw.
#[derive(Debug, Clone)]
struct Replicate {
    reject: bool,
    power: Option<[f64; 4]>,
    theta_bar: f64,
    c: Array2<f64>,
    d: Array2<f64>,
    se_joint: (Array2<f64>, Array2<f64>),
    se_indep: (Array2<f64>, Array2<f64>),
}

fn run_replicate(cfg: &SimConfig, factor: &Array2<f64>, r: usize) -> Result<Replicate> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r as u64);
    let raw = generate_with(&cfg.scenario, factor, cfg.n_x, cfg.n_y, &mut rng)?;
    let (data, _) = validate_and_prune(raw)?;
    let ranks = rank_summary(&data);
    let pt = placements(&data);
    let vc = components_from_placements(&pt);
    let me = moment_estimates(&pt, &vc);
    let n = data.n_total();
    let (reject, power) = match lrst_from_parts(&data, &ranks, &vc, cfg.alpha) {
        Ok(res) => {
            let mut out = [0.0; 4];
            for (i, form) in PowerVarianceForm::ALL.into_iter().enumerate() {
                let p = estimated_power_from_parts(ranks.theta_bar_hat, &vc, &me, n, cfg.alpha, None, form)?;
                out[0] = p.power;
                out[i + 1] = p.se.unwrap_or(0.0);
            }
            (res.reject, Some(out))
        }
        Err(LrstError::DegenerateVariance(_)) => (false, None),
        Err(e) => return Err(e),
    };
    Ok(Replicate {
        reject,
        power,
        theta_bar: ranks.theta_bar_hat,
        se_joint: se_matrices(&me, &vc, cfg.n_x, cfg.n_y),
        se_indep: se_matrices_independent(&me, cfg.n_x, cfg.n_y),
        c: vc.c,
        d: vc.d,
    })
}

fn run_all(cfg: &SimConfig) -> Result<Vec<Replicate>> {
    cfg.validate()?;
    let factor = correlation_factor(&cfg.scenario.joint_correlation())?;
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &factor, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStats {
    pub empirical_power: f64,
    pub empirical_power_se: f64,
    pub mean_estimated_power: f64,
    pub sd_estimated_power: f64,
    /// Mean reported SE of the estimated power under each variance form.
    pub mean_power_se_delta_full: f64,
    pub mean_power_se_sigma_only: f64,
    pub mean_power_se_printed: f64,
    pub mean_theta_bar_hat: f64,
    pub sd_theta_bar_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mse_c: f64,
    pub mae_c: f64,
    pub mse_d: f64,
    pub mae_d: f64,
    #[serde(with = "crate::nested")]
    pub oracle_c: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub oracle_d: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub mean_c: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub mean_d: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub empirical_se_c: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub empirical_se_d: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub plugin_se_c: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub plugin_se_d: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub plugin_se_c_independent: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub plugin_se_d_independent: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub replicates: usize,
    pub seed: u64,
    pub n_x: usize,
    pub n_y: usize,
    pub alpha: f64,
    /// Replicates whose J'Σ̂J vanished; counted as non-rejections.
    pub degenerate_replicates: usize,
    pub power: Option<PowerStats>,
    pub accuracy: Option<AccuracyStats>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn power_stats(reps: &[Replicate]) -> PowerStats {
    let n = reps.len() as f64;
    let p = reps.iter().filter(|r| r.reject).count() as f64 / n;
    let col = |i: usize| -> Vec<f64> { reps.iter().filter_map(|r| r.power.map(|v| v[i])).collect() };
    let (mean_p, sd_p) = mean_sd(&col(0));
    let thetas: Vec<f64> = reps.iter().map(|r| r.theta_bar).collect();
    let (mean_t, sd_t) = mean_sd(&thetas);
    PowerStats {
        empirical_power: p,
        empirical_power_se: (p * (1.0 - p) / n).sqrt(),
        mean_estimated_power: mean_p,
        sd_estimated_power: sd_p,
        mean_power_se_delta_full: mean_sd(&col(1)).0,
        mean_power_se_sigma_only: mean_sd(&col(2)).0,
        mean_power_se_printed: mean_sd(&col(3)).0,
        mean_theta_bar_hat: mean_t,
        sd_theta_bar_hat: sd_t,
    }
}

fn entrywise(mats: &[&Array2<f64>]) -> (Array2<f64>, Array2<f64>) {
    let dim = mats[0].dim();
    let mut mean = Array2::zeros(dim);
    let mut sd = Array2::zeros(dim);
    let mut buf = Vec::with_capacity(mats.len());
    for idx in ndarray::indices(dim) {
        buf.clear();
        buf.extend(mats.iter().map(|m| m[idx]));
        let (a, b) = mean_sd(&buf);
        mean[idx] = a;
        sd[idx] = b;
    }
    (mean, sd)
}

fn errors(est: &[&Array2<f64>], truth: &Array2<f64>) -> (f64, f64) {
    let cells = truth.len() as f64;
    let (mut mse, mut mae) = (0.0, 0.0);
    for m in est {
        mse += m.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / cells;
        mae += m.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / cells;
    }
    let n = est.len() as f64;
    (mse / n, mae / n)
}

fn accuracy_stats(reps: &[Replicate], oracle: &OracleOutput) -> Result<AccuracyStats> {
    let t = reps[0].c.nrows();
    if oracle.c.dim() != (t, t) {
        return Err(LrstError::InvalidArgument(format!(
            "oracle has {} visits, simulated data {t} after pruning",
            oracle.c.nrows()
        )));
    }
    let cs: Vec<&Array2<f64>> = reps.iter().map(|r| &r.c).collect();
    let ds: Vec<&Array2<f64>> = reps.iter().map(|r| &r.d).collect();
    let (mse_c, mae_c) = errors(&cs, &oracle.c);
    let (mse_d, mae_d) = errors(&ds, &oracle.d);
    let (mean_c, empirical_se_c) = entrywise(&cs);
    let (mean_d, empirical_se_d) = entrywise(&ds);
    let avg = |f: &dyn Fn(&Replicate) -> &Array2<f64>| {
        entrywise(&reps.iter().map(f).collect::<Vec<_>>()).0
    };
    Ok(AccuracyStats {
        mse_c,
        mae_c,
        mse_d,
        mae_d,
        oracle_c: oracle.c.clone(),
        oracle_d: oracle.d.clone(),
        mean_c,
        mean_d,
        empirical_se_c,
        empirical_se_d,
        plugin_se_c: avg(&|r| &r.se_joint.0),
        plugin_se_d: avg(&|r| &r.se_joint.1),
        plugin_se_c_independent: avg(&|r| &r.se_indep.0),
        plugin_se_d_independent: avg(&|r| &r.se_indep.1),
    })
}

fn report(cfg: &SimConfig, reps: &[Replicate]) -> SimReport {
    SimReport {
        replicates: cfg.replicates,
        seed: cfg.seed,
        n_x: cfg.n_x,
        n_y: cfg.n_y,
        alpha: cfg.alpha,
        degenerate_replicates: reps.iter().filter(|r| r.power.is_none()).count(),
        power: None,
        accuracy: None,
    }
}

/// Rejection rate of the test and the spread of estimated power.
pub fn empirical_power(cfg: &SimConfig) -> Result<SimReport> {
    let reps = run_all(cfg)?;
    let mut out = report(cfg, &reps);
    out.power = Some(power_stats(&reps));
    Ok(out)
}

/// Accuracy of Ĉ and D̂ against oracle values, plus the power fields.
pub fn estimator_validation(cfg: &SimConfig, oracle: &OracleOutput) -> Result<SimReport> {
    let reps = run_all(cfg)?;
    let mut out = report(cfg, &reps);
    out.power = Some(power_stats(&reps));
    out.accuracy = Some(accuracy_stats(&reps, oracle)?);
    Ok(out)
}
