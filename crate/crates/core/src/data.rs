//! Two-arm longitudinal trial data: CSV ingestion, validation and
//! degenerate-visit pruning.
//!
//! Arrays are laid out subject-major, then visit, then outcome, so the
//! pooled column for a (visit, outcome) pair is a strided slice.

use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::{s, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{LrstError, Result};

/// Change-from-baseline values for both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialData {
    x: Array3<f64>,
    y: Array3<f64>,
    visit_labels: Vec<String>,
    outcome_labels: Vec<String>,
    control_ids: Vec<String>,
    treatment_ids: Vec<String>,
}

impl TrialData {
    /// Build from control (`x`) and treatment (`y`) arrays shaped
    /// `[subjects, visits, outcomes]`, with numeric labels and generated ids.
    pub fn new(x: Array3<f64>, y: Array3<f64>) -> Result<Self> {
        let (_, t, k) = x.dim();
        let visit_labels = (1..=t).map(|v| v.to_string()).collect();
        let outcome_labels = (1..=k).map(|v| v.to_string()).collect();
        let control_ids = (1..=x.dim().0).map(|i| format!("C{i}")).collect();
        let treatment_ids = (1..=y.dim().0).map(|i| format!("T{i}")).collect();
        Self::with_labels(x, y, visit_labels, outcome_labels, control_ids, treatment_ids)
    }

    pub fn with_labels(
        x: Array3<f64>,
        y: Array3<f64>,
        visit_labels: Vec<String>,
        outcome_labels: Vec<String>,
        control_ids: Vec<String>,
        treatment_ids: Vec<String>,
    ) -> Result<Self> {
        let (nx, t, k) = x.dim();
        let (ny, ty, ky) = y.dim();
        if t != ty || k != ky {
            return Err(LrstError::InvalidArgument(format!(
                "arm shapes disagree: control has {t} visits x {k} outcomes, treatment {ty} x {ky}"
            )));
        }
        if t == 0 || k == 0 {
            return Err(LrstError::InvalidArgument(
                "need at least one visit and one outcome".into(),
            ));
        }
        if nx < 2 {
            return Err(LrstError::TooFewSubjects { arm: "control", count: nx });
        }
        if ny < 2 {
            return Err(LrstError::TooFewSubjects { arm: "treatment", count: ny });
        }
        if visit_labels.len() != t || outcome_labels.len() != k {
            return Err(LrstError::InvalidArgument("label count mismatch".into()));
        }
        if control_ids.len() != nx || treatment_ids.len() != ny {
            return Err(LrstError::InvalidArgument("subject id count mismatch".into()));
        }
        if let Some(v) = x.iter().chain(y.iter()).find(|v| !v.is_finite()) {
            return Err(LrstError::NonFiniteValue { row: 0, value: v.to_string() });
        }
        Ok(Self { x, y, visit_labels, outcome_labels, control_ids, treatment_ids })
    }

    pub fn control(&self) -> &Array3<f64> {
        &self.x
    }

    pub fn treatment(&self) -> &Array3<f64> {
        &self.y
    }

    pub fn n_control(&self) -> usize {
        self.x.dim().0
    }

    pub fn n_treatment(&self) -> usize {
        self.y.dim().0
    }

    pub fn n_total(&self) -> usize {
        self.n_control() + self.n_treatment()
    }

    pub fn visits(&self) -> usize {
        self.x.dim().1
    }

    pub fn outcomes(&self) -> usize {
        self.x.dim().2
    }

    /// Allocation ratio n_x / n_y.
    pub fn lambda(&self) -> f64 {
        self.n_control() as f64 / self.n_treatment() as f64
    }

    pub fn visit_labels(&self) -> &[String] {
        &self.visit_labels
    }

    pub fn outcome_labels(&self) -> &[String] {
        &self.outcome_labels
    }

    pub fn control_ids(&self) -> &[String] {
        &self.control_ids
    }

    pub fn treatment_ids(&self) -> &[String] {
        &self.treatment_ids
    }

    pub fn control_column(&self, t: usize, k: usize) -> ArrayView1<'_, f64> {
        self.x.slice(s![.., t, k])
    }

    pub fn treatment_column(&self, t: usize, k: usize) -> ArrayView1<'_, f64> {
        self.y.slice(s![.., t, k])
    }

    /// The same data with the arms exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            visit_labels: self.visit_labels.clone(),
            outcome_labels: self.outcome_labels.clone(),
            control_ids: self.treatment_ids.clone(),
            treatment_ids: self.control_ids.clone(),
        }
    }

    /// Apply `f(t, k, value)` to every entry of both arms.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> Result<Self> {
        let apply = |a: &Array3<f64>| {
            let mut out = a.clone();
            for ((_, t, k), v) in out.indexed_iter_mut() {
                *v = f(t, k, *v);
            }
            out
        };
        Self::with_labels(
            apply(&self.x),
            apply(&self.y),
            self.visit_labels.clone(),
            self.outcome_labels.clone(),
            self.control_ids.clone(),
            self.treatment_ids.clone(),
        )
    }

    fn keep_visits(&self, keep: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(1), keep),
            y: self.y.select(Axis(1), keep),
            visit_labels: keep.iter().map(|&t| self.visit_labels[t].clone()).collect(),
            outcome_labels: self.outcome_labels.clone(),
            control_ids: self.control_ids.clone(),
            treatment_ids: self.treatment_ids.clone(),
        }
    }
}

/// Header names for the five required CSV columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub subject_id: String,
    pub arm: String,
    pub visit: String,
    pub outcome: String,
    pub value: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            subject_id: "subject_id".into(),
            arm: "arm".into(),
            visit: "visit".into(),
            outcome: "outcome".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arm {
    Control,
    Treatment,
}

struct SubjectCells {
    arm: Arm,
    cells: HashMap<(usize, usize), f64>,
}

fn parse_index(raw: &str, row: usize, what: &str) -> Result<usize> {
    match raw.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(LrstError::MalformedRow {
            row,
            message: format!("{what} must be a positive integer, got `{raw}`"),
        }),
    }
}

/// Read long-format trial data (one row per subject, visit and outcome).
///
/// Row numbers in errors are 1-based file lines, the header being line 1.
pub fn parse_trial_csv<R: Read>(source: R, schema: &ColumnMapping) -> Result<TrialData> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| LrstError::MalformedRow { row: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LrstError::MissingColumn(name.to_string()))
    };
    let (c_id, c_arm, c_visit, c_outcome, c_value) = (
        col(&schema.subject_id)?,
        col(&schema.arm)?,
        col(&schema.visit)?,
        col(&schema.outcome)?,
        col(&schema.value)?,
    );

    let mut order: Vec<String> = Vec::new();
    let mut subjects: HashMap<String, SubjectCells> = HashMap::new();
    let (mut t_max, mut k_max) = (0usize, 0usize);

    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record =
            record.map_err(|e| LrstError::MalformedRow { row, message: e.to_string() })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(LrstError::MalformedRow { row, message: "empty subject_id".into() });
        }
        let arm_raw = field(c_arm);
        let arm = match arm_raw.to_ascii_lowercase().as_str() {
            "control" => Arm::Control,
            "treatment" => Arm::Treatment,
            _ => return Err(LrstError::UnknownArm { row, value: arm_raw.to_string() }),
        };
        let visit = parse_index(field(c_visit), row, "visit")?;
        let outcome = parse_index(field(c_outcome), row, "outcome")?;
        let raw_value = field(c_value);
        let value: f64 = raw_value.parse().map_err(|_| LrstError::MalformedRow {
            row,
            message: format!("value `{raw_value}` is not a number"),
        })?;
        if !value.is_finite() {
            return Err(LrstError::NonFiniteValue { row, value: raw_value.to_string() });
        }

        let entry = subjects.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            SubjectCells { arm, cells: HashMap::new() }
        });
        if entry.arm != arm {
            return Err(LrstError::ArmConflict { row, subject: id });
        }
        if entry.cells.insert((visit, outcome), value).is_some() {
            return Err(LrstError::DuplicateCell { row, subject: id, visit, outcome });
        }
        t_max = t_max.max(visit);
        k_max = k_max.max(outcome);
    }

    let mut control_ids = Vec::new();
    let mut treatment_ids = Vec::new();
    for id in &order {
        match subjects[id].arm {
            Arm::Control => control_ids.push(id.clone()),
            Arm::Treatment => treatment_ids.push(id.clone()),
        }
    }

    let fill = |ids: &[String]| -> Result<Array3<f64>> {
        let mut out = Array3::<f64>::zeros((ids.len(), t_max, k_max));
        for (i, id) in ids.iter().enumerate() {
            let cells = &subjects[id].cells;
            for t in 0..t_max {
                for k in 0..k_max {
                    match cells.get(&(t + 1, k + 1)) {
                        Some(&v) => out[[i, t, k]] = v,
                        None => {
                            return Err(LrstError::MissingCell {
                                subject: id.clone(),
                                visit: t + 1,
                                outcome: k + 1,
                            })
                        }
                    }
                }
            }
        }
        Ok(out)
    };
    let x = fill(&control_ids)?;
    let y = fill(&treatment_ids)?;
    TrialData::with_labels(
        x,
        y,
        (1..=t_max).map(|v| v.to_string()).collect(),
        (1..=k_max).map(|v| v.to_string()).collect(),
        control_ids,
        treatment_ids,
    )
}

/// Write the data in the long CSV format read by [`parse_trial_csv`].
///
/// Visits and outcomes are written as their 1-based positions; values use
/// the shortest representation that round-trips exactly.
pub fn write_trial_csv<W: Write>(data: &TrialData, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| LrstError::Io(e.to_string());
    w.write_record(["subject_id", "arm", "visit", "outcome", "value"]).map_err(io)?;
    for (arm, ids, values) in [
        ("control", &data.control_ids, &data.x),
        ("treatment", &data.treatment_ids, &data.y),
    ] {
        for (i, id) in ids.iter().enumerate() {
            for t in 0..data.visits() {
                for k in 0..data.outcomes() {
                    w.write_record([
                        id.as_str(),
                        arm,
                        &(t + 1).to_string(),
                        &(k + 1).to_string(),
                        &values[[i, t, k]].to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Visits removed by [`validate_and_prune`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    /// 1-based positions in the input data.
    pub removed_visits: Vec<usize>,
    pub removed_labels: Vec<String>,
}

impl PruneReport {
    pub fn is_empty(&self) -> bool {
        self.removed_visits.is_empty()
    }
}

fn column_is_constant(data: &TrialData, t: usize, k: usize) -> bool {
    let first = data.x[[0, t, k]];
    data.control_column(t, k).iter().all(|&v| v == first)
        && data.treatment_column(t, k).iter().all(|&v| v == first)
}

/// Drop visits at which every outcome column is constant across both arms.
pub fn validate_and_prune(data: TrialData) -> Result<(TrialData, PruneReport)> {
    let (t, k) = (data.visits(), data.outcomes());
    let degenerate: Vec<bool> =
        (0..t).map(|tt| (0..k).all(|kk| column_is_constant(&data, tt, kk))).collect();
    if degenerate.iter().all(|&d| d) {
        return Err(LrstError::AllVisitsDegenerate);
    }
    if !degenerate.iter().any(|&d| d) {
        return Ok((data, PruneReport::default()));
    }
    let keep: Vec<usize> = (0..t).filter(|&tt| !degenerate[tt]).collect();
    let report = PruneReport {
        removed_visits: (0..t).filter(|&tt| degenerate[tt]).map(|tt| tt + 1).collect(),
        removed_labels: (0..t)
            .filter(|&tt| degenerate[tt])
            .map(|tt| data.visit_labels[tt].clone())
            .collect(),
    };
    Ok((data.keep_visits(&keep), report))
}
