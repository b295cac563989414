//! `lrst`: command-line driver for the longitudinal rank sum test toolkit.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrst_core::power::estimated_power;
use lrst_core::{
    empirical_power, estimator_validation, lrst_test, oracle_cd, parse_trial_csv,
    required_sample_size, theoretical_power, validate_and_prune, ColumnMapping, GaussianScenario,
    LrstError, OracleConfig, OracleMethod, OracleOutput, PowerVarianceForm, ReferenceCorrelation,
    SimConfig, SimReport, TrialData,
};
use serde_json::{json, Value};

use report::{csv_summary, envelope, matrix};

#[derive(Parser)]
#[command(name = "lrst", version, about = "Longitudinal rank sum test, power and sample size")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the test on a trial CSV.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Closed-form power for a scenario at a given total size.
    PowerTheoretical {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Power estimated from observed data, optionally at another size.
    PowerEstimated {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Evaluate at this total size instead of the observed one.
        #[arg(long)]
        at_n: Option<usize>,
        #[arg(long, value_enum, default_value_t = VarianceForm::DeltaFull)]
        variance_form: VarianceForm,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Minimum total size reaching a target power.
    Samplesize {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Target power.
        #[arg(long)]
        power: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Rejection rate and estimated-power spread over simulated trials.
    SimulatePower {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Accuracy of the C and D estimators and their standard errors.
    SimulateValidate {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Population effect and covariance components for a scenario.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write the bundled reference scenario as JSON.
    ScenarioTemplate {
        #[arg(long, default_value = "bapi302_scenario.json")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Correlation::Separable)]
        correlation: Correlation,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV: subject_id, arm, visit, outcome, value.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "subject_id")]
    subject_col: String,
    #[arg(long, default_value = "arm")]
    arm_col: String,
    #[arg(long, default_value = "visit")]
    visit_col: String,
    #[arg(long, default_value = "outcome")]
    outcome_col: String,
    #[arg(long, default_value = "value")]
    value_col: String,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's allocation ratio n_x / n_y.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum, default_value_t = Method::Quadrature)]
    method: Method,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Required with --method monte-carlo.
    #[arg(long = "oracle-seed")]
    oracle_seed: Option<u64>,
    #[arg(long, default_value_t = 64)]
    quadrature_nodes: usize,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Total trial size; split by the allocation ratio.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct OutArgs {
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    CsvSummary,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    MonteCarlo,
    Quadrature,
}

#[derive(Clone, Copy, ValueEnum)]
enum VarianceForm {
    DeltaFull,
    SigmaOnly,
    Printed,
}

impl From<VarianceForm> for PowerVarianceForm {
    fn from(v: VarianceForm) -> Self {
        match v {
            VarianceForm::DeltaFull => PowerVarianceForm::DeltaFull,
            VarianceForm::SigmaOnly => PowerVarianceForm::SigmaOnly,
            VarianceForm::Printed => PowerVarianceForm::Printed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Correlation {
    Independent,
    Separable,
    Exchangeable,
}

impl From<Correlation> for ReferenceCorrelation {
    fn from(c: Correlation) -> Self {
        match c {
            Correlation::Independent => ReferenceCorrelation::Independent,
            Correlation::Separable => ReferenceCorrelation::Separable,
            Correlation::Exchangeable => ReferenceCorrelation::Exchangeable,
        }
    }
}

fn invalid(msg: impl Into<String>) -> LrstError {
    LrstError::InvalidArgument(msg.into())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn load_data(a: &DataArgs) -> Result<(TrialData, Value), LrstError> {
    let mapping = ColumnMapping {
        subject_id: a.subject_col.clone(),
        arm: a.arm_col.clone(),
        visit: a.visit_col.clone(),
        outcome: a.outcome_col.clone(),
        value: a.value_col.clone(),
    };
    let file = fs::File::open(&a.data)
        .map_err(|e| LrstError::Io(format!("{}: {e}", a.data.display())))?;
    let raw = parse_trial_csv(file, &mapping)?;
    let (data, pruned) = validate_and_prune(raw)?;
    let echo = json!({
        "data": path_str(&a.data),
        "columns": mapping,
        "removed_visits": pruned.removed_visits,
    });
    Ok((data, echo))
}

fn load_scenario(a: &ScenarioArgs) -> Result<(GaussianScenario, Value), LrstError> {
    let text = fs::read_to_string(&a.scenario)
        .map_err(|e| LrstError::Io(format!("{}: {e}", a.scenario.display())))?;
    let mut s: GaussianScenario = serde_json::from_str(&text)
        .map_err(|e| LrstError::InvalidScenario(format!("{}: {e}", a.scenario.display())))?;
    if let Some(l) = a.lambda {
        s.lambda = l;
    }
    s.validate()?;
    let echo = json!({ "scenario": path_str(&a.scenario), "lambda": s.lambda });
    Ok((s, echo))
}

fn oracle_config(a: &OracleArgs) -> Result<(OracleConfig, Value), LrstError> {
    let cfg = match a.method {
        Method::MonteCarlo => OracleConfig {
            method: OracleMethod::MonteCarlo,
            mc_samples: a.mc_samples.unwrap_or(1_000_000),
            seed: a
                .oracle_seed
                .ok_or_else(|| invalid("--method monte-carlo requires --oracle-seed"))?,
            quadrature_nodes: a.quadrature_nodes,
        },
        Method::Quadrature => {
            if a.mc_samples.is_some() || a.oracle_seed.is_some() {
                return Err(invalid("--mc-samples and --oracle-seed apply to --method monte-carlo only"));
            }
            OracleConfig {
                method: OracleMethod::Quadrature,
                quadrature_nodes: a.quadrature_nodes,
                ..OracleConfig::default()
            }
        }
    };
    let echo = match cfg.method {
        OracleMethod::MonteCarlo => json!({
            "method": "monte_carlo", "mc_samples": cfg.mc_samples, "seed": cfg.seed
        }),
        OracleMethod::Quadrature => json!({
            "method": "quadrature", "quadrature_nodes": cfg.quadrature_nodes
        }),
    };
    Ok((cfg, echo))
}

fn check_alpha(alpha: f64) -> Result<(), LrstError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn oracle_json(o: &OracleOutput) -> Value {
    let mut v = json!({
        "theta": matrix(&o.theta),
        "theta_bar": o.theta_bar,
        "C": matrix(&o.c),
        "D": matrix(&o.d),
        "K1": matrix(&o.moments.k1),
        "K2": matrix(&o.moments.k2),
        "visits_kept": o.visits_kept.iter().map(|t| t + 1).collect::<Vec<_>>(),
    });
    if let (Some(cs), Some(ds)) = (&o.c_se, &o.d_se) {
        v["C_mc_se"] = matrix(cs);
        v["D_mc_se"] = matrix(ds);
    }
    v
}

fn sim_config(a: &SimArgs) -> Result<(SimConfig, Value), LrstError> {
    check_alpha(a.alpha)?;
    if a.reps == 0 {
        return Err(invalid("--reps must be at least 1"));
    }
    let (s, scenario_echo) = load_scenario(&a.scenario)?;
    let cfg = SimConfig::with_total(s, a.n, a.reps, a.alpha, a.seed);
    if cfg.n_x < 2 || cfg.n_y < 2 {
        return Err(invalid(format!("--n {} leaves fewer than 2 subjects in an arm", a.n)));
    }
    let echo = json!({
        "scenario": scenario_echo,
        "n": a.n,
        "n_x": cfg.n_x,
        "n_y": cfg.n_y,
        "reps": a.reps,
        "seed": a.seed,
        "alpha": a.alpha,
    });
    Ok((cfg, echo))
}

fn sim_json(r: &SimReport) -> Value {
    serde_json::to_value(r).expect("report serializes")
}

fn run(command: Command) -> Result<(Value, Option<OutArgs>), LrstError> {
    Ok(match command {
        Command::Test { data, alpha, out } => {
            check_alpha(alpha)?;
            let (d, echo) = load_data(&data)?;
            let r = lrst_test(&d, alpha)?;
            let inputs = json!({ "data": echo, "alpha": alpha });
            (envelope("test", inputs, serde_json::to_value(&r).unwrap()), Some(out))
        }
        Command::PowerTheoretical { scenario, n, alpha, oracle, out } => {
            check_alpha(alpha)?;
            if n < 2 {
                return Err(invalid("--n must be at least 2"));
            }
            let (s, s_echo) = load_scenario(&scenario)?;
            let (cfg, o_echo) = oracle_config(&oracle)?;
            let o = oracle_cd(&s, &cfg)?;
            let p = theoretical_power(o.theta_bar, &o.c, &o.d, s.lambda, n, alpha)?;
            let inputs = json!({ "scenario": s_echo, "oracle": o_echo, "n": n, "alpha": alpha });
            let result = json!({ "power": p, "oracle": oracle_json(&o) });
            (envelope("power-theoretical", inputs, result), Some(out))
        }
        Command::PowerEstimated { data, alpha, at_n, variance_form, out } => {
            check_alpha(alpha)?;
            let (d, echo) = load_data(&data)?;
            let p = estimated_power(&d, alpha, at_n, variance_form.into())?;
            let inputs = json!({ "data": echo, "alpha": alpha, "at_n": at_n });
            (envelope("power-estimated", inputs, serde_json::to_value(&p).unwrap()), Some(out))
        }
        Command::Samplesize { scenario, power, alpha, oracle, out } => {
            check_alpha(alpha)?;
            if !(power > alpha && power < 1.0) {
                return Err(invalid(format!("--power must lie in (alpha, 1), got {power}")));
            }
            let (s, s_echo) = load_scenario(&scenario)?;
            let (cfg, o_echo) = oracle_config(&oracle)?;
            let o = oracle_cd(&s, &cfg)?;
            let r = required_sample_size(o.theta_bar, &o.c, &o.d, s.lambda, alpha, power)?;
            let inputs =
                json!({ "scenario": s_echo, "oracle": o_echo, "power": power, "alpha": alpha });
            let result = json!({
                "n": r.n,
                "n_raw": r.n_raw,
                "n_raw_ceil": r.n_raw.ceil(),
                "n_x": r.n_x,
                "n_y": r.n_y,
                "achieved_power": r.achieved_power,
                "target_power": r.target_power,
                "lambda": r.lambda,
                "theta_bar": o.theta_bar,
            });
            (envelope("samplesize", inputs, result), Some(out))
        }
        Command::SimulatePower { sim, out } => {
            let (cfg, inputs) = sim_config(&sim)?;
            let r = empirical_power(&cfg)?;
            (envelope("simulate-power", inputs, sim_json(&r)), Some(out))
        }
        Command::SimulateValidate { sim, oracle, out } => {
            let (cfg, mut inputs) = sim_config(&sim)?;
            let (ocfg, o_echo) = oracle_config(&oracle)?;
            let o = oracle_cd(&cfg.scenario, &ocfg)?;
            let r = estimator_validation(&cfg, &o)?;
            inputs["oracle"] = o_echo;
            (envelope("simulate-validate", inputs, sim_json(&r)), Some(out))
        }
        Command::Oracle { scenario, oracle, out } => {
            let (s, s_echo) = load_scenario(&scenario)?;
            let (cfg, o_echo) = oracle_config(&oracle)?;
            let o = oracle_cd(&s, &cfg)?;
            let inputs = json!({ "scenario": s_echo, "oracle": o_echo });
            (envelope("oracle", inputs, oracle_json(&o)), Some(out))
        }
        Command::ScenarioTemplate { out, correlation } => {
            let s = GaussianScenario::reference(correlation.into());
            let text = serde_json::to_string_pretty(&s).expect("scenario serializes") + "\n";
            fs::write(&out, text).map_err(|e| LrstError::Io(format!("{}: {e}", out.display())))?;
            let inputs = json!({ "out": path_str(&out) });
            (envelope("scenario-template", inputs, json!({ "written": path_str(&out) })), None)
        }
    })
}

fn emit(report: &Value, out: Option<OutArgs>) -> Result<(), LrstError> {
    let (path, format) = match out {
        Some(o) => (o.out, o.format),
        None => (None, Format::Json),
    };
    let text = match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        Format::CsvSummary => csv_summary(report),
    };
    match path {
        Some(p) => fs::write(&p, text).map_err(|e| LrstError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn configure_threads() -> Result<(), LrstError> {
    let Ok(raw) = std::env::var("LRST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| invalid(format!("LRST_THREADS must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(cli.command)).and_then(|(r, o)| emit(&r, o));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lrst: error [{}]: {e}", e.code());
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
