//! Population values of the effect, covariance-component and moment
//! quantities under a Gaussian scenario, by Monte Carlo or Gauss–Hermite
//! quadrature.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LrstError, Result};
use crate::numeric::{norm_cdf, standard_normal_rule, two_sided_mass};
use crate::variance::{assemble_moments, collapse_outcomes, MomentEstimates};

/// Eigenvalues down to this are treated as rounding noise and clamped to 0.
pub const EIGEN_CLAMP: f64 = -1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

/// Two-arm Gaussian scenario. Matrices are visit-by-outcome; the joint
/// within-subject correlation is `time_corr ⊗ outcome_corr` unless
/// `joint_corr` (indexed visit-major, `t*K + k`) is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScenario {
    #[serde(with = "crate::nested")]
    pub mu_control: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub mu_treatment: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub sd_control: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub sd_treatment: Array2<f64>,
    #[serde(with = "crate::nested")]
    pub outcome_corr: Array2<f64>,
    #[serde(default, with = "crate::nested::option", skip_serializing_if = "Option::is_none")]
    pub time_corr: Option<Array2<f64>>,
    #[serde(default, with = "crate::nested::option", skip_serializing_if = "Option::is_none")]
    pub joint_corr: Option<Array2<f64>>,
    pub lambda: f64,
}

/// Correlation structures offered for the bundled reference scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceCorrelation {
    /// Outcomes correlated 0.5 within a visit, visits independent.
    Independent,
    /// Compound symmetry 0.5 across visits times 0.5 across outcomes.
    Separable,
    /// Every pair of (visit, outcome) coordinates correlated 0.5.
    Exchangeable,
}

const REF_MU_CONTROL: [[f64; 7]; 2] = [
    [0.0, -1.38507, -2.77014, -4.15521, -5.54028, -6.92535, -8.31042],
    [0.0, -2.65461, -5.30922, -7.96383, -10.61844, -13.27305, -15.92766],
];
const REF_MU_TREATMENT: [[f64; 7]; 2] = [
    [0.0, -1.016737, -2.033473, -3.05021, -4.066947, -5.083683, -6.10042],
    [0.0, -1.757943, -3.515887, -5.27383, -7.031773, -8.789717, -10.54766],
];
const REF_SD: [[f64; 7]; 2] = [
    [0.0, 4.79, 5.43, 6.54, 7.37, 8.15, 9.11],
    [0.0, 10.27, 12.85, 14.95, 15.35, 16.87, 18.19],
];

fn compound_symmetry(n: usize, rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { rho })
}

fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (p, q) = (a.nrows(), b.nrows());
    Array2::from_shape_fn((p * q, p * q), |(i, j)| a[[i / q, j / q]] * b[[i % q, j % q]])
}

fn check_corr(m: &Array2<f64>, n: usize, what: &str) -> Result<()> {
    if m.dim() != (n, n) {
        return Err(LrstError::InvalidScenario(format!(
            "{what} must be {n}x{n}, got {:?}",
            m.dim()
        )));
    }
    for i in 0..n {
        if (m[[i, i]] - 1.0).abs() > SYMMETRY_TOL {
            return Err(LrstError::InvalidScenario(format!("{what} diagonal must be 1")));
        }
        for j in 0..n {
            let v = m[[i, j]];
            if !v.is_finite() || v.abs() > 1.0 + SYMMETRY_TOL || (v - m[[j, i]]).abs() > SYMMETRY_TOL
            {
                return Err(LrstError::InvalidScenario(format!(
                    "{what} must be symmetric with entries in [-1, 1]"
                )));
            }
        }
    }
    Ok(())
}

impl GaussianScenario {
    /// The bundled seven-visit, two-outcome scenario with λ = 2/3.
    pub fn reference(correlation: ReferenceCorrelation) -> Self {
        let grid = |src: &[[f64; 7]; 2]| Array2::from_shape_fn((7, 2), |(t, k)| src[k][t]);
        let outcome_corr = compound_symmetry(2, 0.5);
        let (time_corr, joint_corr) = match correlation {
            ReferenceCorrelation::Independent => (None, None),
            ReferenceCorrelation::Separable => (Some(compound_symmetry(7, 0.5)), None),
            ReferenceCorrelation::Exchangeable => (None, Some(compound_symmetry(14, 0.5))),
        };
        Self {
            mu_control: grid(&REF_MU_CONTROL),
            mu_treatment: grid(&REF_MU_TREATMENT),
            sd_control: grid(&REF_SD),
            sd_treatment: grid(&REF_SD),
            outcome_corr,
            time_corr,
            joint_corr,
            lambda: 2.0 / 3.0,
        }
    }

    /// Same scenario with the treatment means replaced by the control means.
    pub fn null_version(&self) -> Self {
        let mut s = self.clone();
        s.mu_treatment = s.mu_control.clone();
        s.sd_treatment = s.sd_control.clone();
        s
    }

    pub fn visits(&self) -> usize {
        self.mu_control.nrows()
    }

    pub fn outcomes(&self) -> usize {
        self.mu_control.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, k) = self.mu_control.dim();
        if t == 0 || k == 0 {
            return Err(LrstError::InvalidScenario("empty mean matrix".into()));
        }
        for (name, m) in [
            ("mu_treatment", &self.mu_treatment),
            ("sd_control", &self.sd_control),
            ("sd_treatment", &self.sd_treatment),
        ] {
            if m.dim() != (t, k) {
                return Err(LrstError::InvalidScenario(format!(
                    "{name} must be {t}x{k}, got {:?}",
                    m.dim()
                )));
            }
        }
        let all = self.mu_control.iter().chain(self.mu_treatment.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(LrstError::InvalidScenario("means must be finite".into()));
        }
        if self.sd_control.iter().chain(self.sd_treatment.iter()).any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return Err(LrstError::InvalidScenario("SDs must be finite and nonnegative".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(LrstError::InvalidScenario(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        check_corr(&self.outcome_corr, k, "outcome_corr")?;
        if let Some(tc) = &self.time_corr {
            check_corr(tc, t, "time_corr")?;
        }
        if let Some(j) = &self.joint_corr {
            check_corr(j, t * k, "joint_corr")?;
        }
        Ok(())
    }

    /// Within-subject correlation over all (visit, outcome) coordinates,
    /// visit-major.
    pub fn joint_correlation(&self) -> Array2<f64> {
        if let Some(j) = &self.joint_corr {
            return j.clone();
        }
        let tc = self
            .time_corr
            .clone()
            .unwrap_or_else(|| Array2::eye(self.visits()));
        kron(&tc, &self.outcome_corr)
    }

    /// Visits where some outcome has a positive SD in some arm.
    pub fn visits_kept(&self) -> Vec<usize> {
        (0..self.visits())
            .filter(|&t| {
                (0..self.outcomes())
                    .any(|k| self.sd_control[[t, k]] > 0.0 || self.sd_treatment[[t, k]] > 0.0)
            })
            .collect()
    }

    /// The scenario restricted to its non-degenerate visits.
    pub fn pruned(&self) -> Result<Self> {
        self.validate()?;
        let keep = self.visits_kept();
        if keep.is_empty() {
            return Err(LrstError::AllVisitsDegenerate);
        }
        if keep.len() == self.visits() {
            return Ok(self.clone());
        }
        let k = self.outcomes();
        let rows = |m: &Array2<f64>| Array2::from_shape_fn((keep.len(), k), |(i, j)| m[[keep[i], j]]);
        let joint = self.joint_corr.as_ref().map(|j| {
            let n = keep.len() * k;
            Array2::from_shape_fn((n, n), |(a, b)| {
                j[[keep[a / k] * k + a % k, keep[b / k] * k + b % k]]
            })
        });
        let time = self.time_corr.as_ref().map(|tc| {
            Array2::from_shape_fn((keep.len(), keep.len()), |(a, b)| tc[[keep[a], keep[b]]])
        });
        Ok(Self {
            mu_control: rows(&self.mu_control),
            mu_treatment: rows(&self.mu_treatment),
            sd_control: rows(&self.sd_control),
            sd_treatment: rows(&self.sd_treatment),
            outcome_corr: self.outcome_corr.clone(),
            time_corr: time,
            joint_corr: joint,
            lambda: self.lambda,
        })
    }
}

/// Factor L with L·L' equal to `corr`, from a symmetric eigendecomposition.
pub fn correlation_factor(corr: &Array2<f64>) -> Result<Array2<f64>> {
    let n = corr.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| corr[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < EIGEN_CLAMP {
        return Err(LrstError::NonPsdCorrelation(min));
    }
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, j)] * roots[j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    MonteCarlo,
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub method: OracleMethod,
    pub mc_samples: usize,
    pub seed: u64,
    pub quadrature_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            method: OracleMethod::MonteCarlo,
            mc_samples: 1_000_000,
            seed: 0,
            quadrature_nodes: 64,
        }
    }
}

pub const MIN_MC_SAMPLES: usize = 10_000;
/// Fixed number of independently seeded Monte Carlo substreams.
pub const MC_PARTITIONS: usize = 64;

/// CDF of one arm's (t,k) marginal, with the ½ convention for a point mass.
#[derive(Debug, Clone, Copy)]
struct Marginal {
    mu: f64,
    sd: f64,
}

impl Marginal {
    #[inline]
    fn cdf(self, v: f64) -> f64 {
        if self.sd > 0.0 {
            norm_cdf((v - self.mu) / self.sd)
        } else if v > self.mu {
            1.0
        } else if v == self.mu {
            0.5
        } else {
            0.0
        }
    }
}

/// Closed-form effects on the non-degenerate visits and their mean.
pub fn oracle_theta(s: &GaussianScenario) -> Result<(Array2<f64>, f64)> {
    let p = s.pruned()?;
    let mut theta = Array2::zeros(p.mu_control.dim());
    for ((t, k), out) in theta.indexed_iter_mut() {
        let (sx, sy) = (p.sd_control[[t, k]], p.sd_treatment[[t, k]]);
        if sx == 0.0 && sy == 0.0 {
            let visit = s.visits_kept()[t] + 1;
            return Err(LrstError::BothSdZero { visit, outcome: k + 1 });
        }
        let delta = p.mu_treatment[[t, k]] - p.mu_control[[t, k]];
        *out = two_sided_mass(delta / (sx * sx + sy * sy).sqrt());
    }
    let bar = theta.mean().unwrap();
    Ok((theta, bar))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutput {
    pub theta: Array2<f64>,
    pub theta_bar: f64,
    pub c4: Array4<f64>,
    pub d4: Array4<f64>,
    pub c: Array2<f64>,
    pub d: Array2<f64>,
    /// Monte Carlo standard errors; absent for quadrature.
    pub c4_se: Option<Array4<f64>>,
    pub d4_se: Option<Array4<f64>>,
    pub c_se: Option<Array2<f64>>,
    pub d_se: Option<Array2<f64>>,
    pub moments: MomentEstimates,
    pub lambda: f64,
    /// 0-based visits of the input scenario that were analysed.
    pub visits_kept: Vec<usize>,
    pub method: OracleMethod,
}

struct ArmSpec {
    mean_of: Vec<Marginal>,
    cdf_of: Vec<Marginal>,
    center: Vec<f64>,
}

fn arm_specs(p: &GaussianScenario, theta: &Array2<f64>) -> (ArmSpec, ArmSpec) {
    let k = p.outcomes();
    let n = p.visits() * k;
    let at = |m: &Array2<f64>, j: usize| m[[j / k, j % k]];
    let control = |j| Marginal { mu: at(&p.mu_control, j), sd: at(&p.sd_control, j) };
    let treatment = |j| Marginal { mu: at(&p.mu_treatment, j), sd: at(&p.sd_treatment, j) };
    let u = ArmSpec {
        mean_of: (0..n).map(control).collect(),
        cdf_of: (0..n).map(treatment).collect(),
        center: (0..n).map(|j| (1.0 - at(theta, j)) / 2.0).collect(),
    };
    let v = ArmSpec {
        mean_of: (0..n).map(treatment).collect(),
        cdf_of: (0..n).map(control).collect(),
        center: (0..n).map(|j| (1.0 + at(theta, j)) / 2.0).collect(),
    };
    (u, v)
}

#[derive(Clone)]
struct ArmSums {
    cross: Vec<f64>,
    cross_sq: Vec<f64>,
    agg: Vec<f64>,
}

impl ArmSums {
    fn new(n: usize, t: usize) -> Self {
        Self { cross: vec![0.0; n * n], cross_sq: vec![0.0; n * n], agg: vec![0.0; t * t] }
    }

    fn add(&mut self, u: &[f64], a: &mut [f64], k: usize) {
        let n = u.len();
        for i in 0..n {
            for j in i..n {
                let p = u[i] * u[j];
                self.cross[i * n + j] += p;
                self.cross_sq[i * n + j] += p * p;
            }
        }
        let t = a.len();
        for (tt, slot) in a.iter_mut().enumerate() {
            *slot = u[tt * k..(tt + 1) * k].iter().sum::<f64>() / k as f64;
            *slot *= *slot;
        }
        for t1 in 0..t {
            for t2 in t1..t {
                self.agg[t1 * t + t2] += a[t1] * a[t2];
            }
        }
    }

    fn merge(&mut self, other: &ArmSums) {
        for (a, b) in [
            (&mut self.cross, &other.cross),
            (&mut self.cross_sq, &other.cross_sq),
            (&mut self.agg, &other.agg),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn mc_partition(
    factor: &Array2<f64>,
    arms: &(ArmSpec, ArmSpec),
    t: usize,
    k: usize,
    draws: usize,
    seed: u64,
    stream: u64,
) -> (ArmSums, ArmSums) {
    let n = factor.nrows();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut a = vec![0.0; t];
    let mut su = ArmSums::new(n, t);
    let mut sv = ArmSums::new(n, t);
    for _ in 0..draws {
        for wi in w.iter_mut() {
            *wi = StandardNormal.sample(&mut rng);
        }
        for i in 0..n {
            z[i] = (0..n).map(|j| factor[[i, j]] * w[j]).sum();
        }
        for j in 0..n {
            let (mx, gx) = (arms.0.mean_of[j], arms.0.cdf_of[j]);
            u[j] = gx.cdf(mx.mu + mx.sd * z[j]) - arms.0.center[j];
            let (my, fy) = (arms.1.mean_of[j], arms.1.cdf_of[j]);
            v[j] = fy.cdf(my.mu + my.sd * z[j]) - arms.1.center[j];
        }
        su.add(&u, &mut a, k);
        sv.add(&v, &mut a, k);
    }
    (su, sv)
}

struct ArmOracle {
    c4: Array4<f64>,
    c4_se: Option<Array4<f64>>,
    fourth: Array2<f64>,
    agg: Option<Array2<f64>>,
}

fn finish_mc(s: &ArmSums, t: usize, k: usize, m: f64) -> ArmOracle {
    let n = t * k;
    let mut c4 = Array4::zeros((t, k, t, k));
    let mut se = Array4::zeros((t, k, t, k));
    for i in 0..n {
        for j in i..n {
            let c = s.cross[i * n + j] / m;
            let e = ((s.cross_sq[i * n + j] / m - c * c).max(0.0) / m).sqrt();
            for (a, b) in [(i, j), (j, i)] {
                c4[[a / k, a % k, b / k, b % k]] = c;
                se[[a / k, a % k, b / k, b % k]] = e;
            }
        }
    }
    let fourth = Array2::from_shape_fn((t, k), |(tt, kk)| {
        let i = tt * k + kk;
        s.cross_sq[i * n + i] / m
    });
    let mut agg = Array2::zeros((t, t));
    for t1 in 0..t {
        for t2 in t1..t {
            let v = s.agg[t1 * t + t2] / m;
            agg[[t1, t2]] = v;
            agg[[t2, t1]] = v;
        }
    }
    ArmOracle { c4, c4_se: Some(se), fourth, agg: Some(agg) }
}

fn oracle_mc(
    p: &GaussianScenario,
    theta: &Array2<f64>,
    cfg: &OracleConfig,
) -> Result<(ArmOracle, ArmOracle)> {
    if cfg.mc_samples < MIN_MC_SAMPLES {
        return Err(LrstError::InvalidArgument(format!(
            "mc_samples must be at least {MIN_MC_SAMPLES}, got {}",
            cfg.mc_samples
        )));
    }
    let factor = correlation_factor(&p.joint_correlation())?;
    let (t, k) = (p.visits(), p.outcomes());
    let arms = arm_specs(p, theta);
    let base = cfg.mc_samples / MC_PARTITIONS;
    let extra = cfg.mc_samples % MC_PARTITIONS;
    let parts: Vec<(ArmSums, ArmSums)> = (0..MC_PARTITIONS)
        .into_par_iter()
        .map(|i| {
            let draws = base + usize::from(i < extra);
            mc_partition(&factor, &arms, t, k, draws, cfg.seed, i as u64)
        })
        .collect();
    let n = t * k;
    let mut su = ArmSums::new(n, t);
    let mut sv = ArmSums::new(n, t);
    for (a, b) in &parts {
        su.merge(a);
        sv.merge(b);
    }
    let m = cfg.mc_samples as f64;
    Ok((finish_mc(&su, t, k, m), finish_mc(&sv, t, k, m)))
}

fn oracle_quadrature(
    p: &GaussianScenario,
    theta: &Array2<f64>,
    cfg: &OracleConfig,
) -> Result<(ArmOracle, ArmOracle)> {
    if cfg.quadrature_nodes < 2 {
        return Err(LrstError::InvalidArgument("need at least 2 quadrature nodes".into()));
    }
    let corr = p.joint_correlation();
    correlation_factor(&corr)?;
    let (t, k) = (p.visits(), p.outcomes());
    let n = t * k;
    let (z, w) = standard_normal_rule(cfg.quadrature_nodes);
    let arms = arm_specs(p, theta);
    let one = |spec: &ArmSpec| -> ArmOracle {
        let g = |j: usize, zz: f64| {
            let (m, c) = (spec.mean_of[j], spec.cdf_of[j]);
            c.cdf(m.mu + m.sd * zz) - spec.center[j]
        };
        let mut c4 = Array4::zeros((t, k, t, k));
        for i in 0..n {
            for j in i..n {
                let rho = if i == j { 1.0 } else { corr[[i, j]] };
                let tail = (1.0 - rho * rho).max(0.0).sqrt();
                let mut s = 0.0;
                for (z1, w1) in z.iter().zip(&w) {
                    let gi = g(i, *z1);
                    if i == j {
                        s += w1 * gi * gi;
                        continue;
                    }
                    let mut inner = 0.0;
                    for (z2, w2) in z.iter().zip(&w) {
                        inner += w2 * g(j, rho * z1 + tail * z2);
                    }
                    s += w1 * gi * inner;
                }
                c4[[i / k, i % k, j / k, j % k]] = s;
                c4[[j / k, j % k, i / k, i % k]] = s;
            }
        }
        let fourth = Array2::from_shape_fn((t, k), |(tt, kk)| {
            let j = tt * k + kk;
            z.iter().zip(&w).map(|(zz, ww)| ww * g(j, *zz).powi(4)).sum()
        });
        ArmOracle { c4, c4_se: None, fourth, agg: None }
    };
    Ok((one(&arms.0), one(&arms.1)))
}

pub fn oracle_cd(s: &GaussianScenario, cfg: &OracleConfig) -> Result<OracleOutput> {
    let p = s.pruned()?;
    let (theta, theta_bar) = oracle_theta(s)?;
    let (u, v) = match cfg.method {
        OracleMethod::MonteCarlo => oracle_mc(&p, &theta, cfg)?,
        OracleMethod::Quadrature => oracle_quadrature(&p, &theta, cfg)?,
    };
    let c = collapse_outcomes(&u.c4);
    let d = collapse_outcomes(&v.c4);
    let m = cfg.mc_samples as f64;
    let agg_se = |agg: &Option<Array2<f64>>, cc: &Array2<f64>| {
        agg.as_ref().map(|a| {
            Array2::from_shape_fn(cc.dim(), |ij| ((a[ij] - cc[ij] * cc[ij]).max(0.0) / m).sqrt())
        })
    };
    let c_se = agg_se(&u.agg, &c);
    let d_se = agg_se(&v.agg, &d);
    let moments = assemble_moments(u.fourth, v.fourth, &u.c4, &v.c4, p.lambda, u.agg, v.agg);
    Ok(OracleOutput {
        theta,
        theta_bar,
        c4: u.c4,
        d4: v.c4,
        c,
        d,
        c4_se: u.c4_se,
        d4_se: v.c4_se,
        c_se,
        d_se,
        moments,
        lambda: p.lambda,
        visits_kept: s.visits_kept(),
        method: cfg.method,
    })
}
