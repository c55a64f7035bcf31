//! Post-hoc analysis of trajectory dumps.
//!
//! Every metric is recomputed from the answers in the dump, never read
//! from the stored reward, so a dump scored under any λ yields the same
//! numbers. Episodes without a schema-valid answer count as zero on every
//! constraint metric.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::classify_hallucinations;
use crate::episode::{EpisodeStatus, TrajectoryRecord};
use crate::plan::validate;
use crate::reward::{score_answer, LambdaVector, Rational};
use crate::sandbox::{QuerySpec, SandboxStore};
use crate::tools::ToolName;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("trajectories reference unknown queries: {}", .0.join(", "))]
    UnknownQueries(Vec<String>),
    #[error("invalid FLOPs record {index}: {reason}")]
    Flops { index: usize, reason: String },
    #[error("line {line}: {source}")]
    Jsonl { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Reads one [`TrajectoryRecord`] per non-blank line.
pub fn read_jsonl<R: Read>(mut input: R) -> Result<Vec<TrajectoryRecord>, AnalyticsError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| AnalyticsError::Jsonl { line: i + 1, source }))
        .collect()
}

pub fn write_jsonl<W: Write>(records: &[TrajectoryRecord], mut out: W) -> Result<(), AnalyticsError> {
    for r in records {
        writeln!(out, "{}", crate::json::canonical(r))?;
    }
    Ok(())
}

/// Run-level percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub episodes: usize,
    pub delivery_rate: f64,
    pub cs_micro: f64,
    pub cs_macro: f64,
    pub hard_micro: f64,
    pub hard_macro: f64,
    pub final_pass: f64,
}

fn lookup<'a>(
    records: &[TrajectoryRecord],
    queries: &'a BTreeMap<String, QuerySpec>,
) -> Result<Vec<&'a QuerySpec>, AnalyticsError> {
    let missing: BTreeSet<String> = records
        .iter()
        .filter(|r| !queries.contains_key(&r.query_id))
        .map(|r| r.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(AnalyticsError::UnknownQueries(missing.into_iter().collect()));
    }
    Ok(records.iter().map(|r| &queries[&r.query_id]).collect())
}

pub fn score_run(
    records: &[TrajectoryRecord],
    store: &SandboxStore,
    queries: &BTreeMap<String, QuerySpec>,
) -> Result<RunMetrics, AnalyticsError> {
    let specs = lookup(records, queries)?;
    let lambda = LambdaVector::stage(1).expect("stage 1");
    let mut sums = [Rational::zero(); 6];
    for (record, spec) in records.iter().zip(specs) {
        let b = score_answer(store, spec, record.answer(), lambda).reward;
        let terms = [b.r_schema, b.r_cs_micro, b.r_cs_macro, b.r_hard_micro, b.r_hard_macro, b.r_pass];
        for (s, t) in sums.iter_mut().zip(terms) {
            *s += t;
        }
    }
    let n = records.len();
    let pct = |s: Rational| {
        if n == 0 {
            0.0
        } else {
            (s * Rational::from_integer(100) / Rational::from_integer(n as i64)).to_f64().unwrap_or(f64::NAN)
        }
    };
    Ok(RunMetrics {
        episodes: n,
        delivery_rate: pct(sums[0]),
        cs_micro: pct(sums[1]),
        cs_macro: pct(sums[2]),
        hard_micro: pct(sums[3]),
        hard_macro: pct(sums[4]),
        final_pass: pct(sums[5]),
    })
}

/// Mean and 95% normal-approximation half-width over repeated runs.
pub fn confidence_interval(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    Hallucination,
    Budget,
    AccommodationRule,
    Route,
    Repetition,
    Incomplete,
    TransportConflict,
    Schema,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 8] = [
        Self::Hallucination,
        Self::Budget,
        Self::AccommodationRule,
        Self::Route,
        Self::Repetition,
        Self::Incomplete,
        Self::TransportConflict,
        Self::Schema,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hallucination => "hallucination",
            Self::Budget => "budget",
            Self::AccommodationRule => "accommodation_rule",
            Self::Route => "route",
            Self::Repetition => "repetition",
            Self::Incomplete => "incomplete",
            Self::TransportConflict => "transport_conflict",
            Self::Schema => "schema",
        }
    }

    /// Category of a failed constraint id.
    pub fn of_constraint(id: &str) -> Option<Self> {
        Some(match id {
            "within_sandbox" => Self::Hallucination,
            "complete_information" | "cuisines" => Self::Incomplete,
            "within_current_city" | "reasonable_city_route" | "dates" => Self::Route,
            "diverse_restaurants" | "diverse_attractions" => Self::Repetition,
            "non_conflicting_transportation" | "transport_exclusions" => Self::TransportConflict,
            "minimum_nights" | "room_rule" | "room_type" => Self::AccommodationRule,
            "budget" => Self::Budget,
            _ => return None,
        })
    }
}

/// Episodes per failure category; an episode counts at most once per
/// category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTaxonomy {
    pub counts: BTreeMap<FailureCategory, u64>,
    pub failed_episodes: u64,
}

impl FailureTaxonomy {
    pub fn get(&self, c: FailureCategory) -> u64 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalyticsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["category", "episodes"])?;
        for c in FailureCategory::ALL {
            w.write_record([c.as_str(), &self.get(c).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Failure categories of one episode; empty when it passed.
pub fn episode_failures(record: &TrajectoryRecord, store: &SandboxStore, query: &QuerySpec) -> BTreeSet<FailureCategory> {
    let mut out = BTreeSet::new();
    let Some(answer) = record.answer() else {
        out.insert(FailureCategory::Incomplete);
        return out;
    };
    let (_, plan) = validate(answer);
    let Some(plan) = plan else {
        out.insert(FailureCategory::Schema);
        return out;
    };
    let scored = score_answer(store, query, Some(answer), LambdaVector::stage(3).expect("stage 3"));
    if !classify_hallucinations(&plan, store).is_empty() {
        out.insert(FailureCategory::Hallucination);
    }
    for report in [scored.commonsense, scored.hard].into_iter().flatten() {
        out.extend(report.failed_ids().filter_map(FailureCategory::of_constraint));
    }
    out
}

pub fn classify_failures(
    records: &[TrajectoryRecord],
    store: &SandboxStore,
    queries: &BTreeMap<String, QuerySpec>,
) -> Result<FailureTaxonomy, AnalyticsError> {
    let specs = lookup(records, queries)?;
    let mut tax = FailureTaxonomy::default();
    for (record, spec) in records.iter().zip(specs) {
        let cats = episode_failures(record, store, spec);
        if !cats.is_empty() {
            tax.failed_episodes += 1;
        }
        for c in cats {
            *tax.counts.entry(c).or_default() += 1;
        }
    }
    Ok(tax)
}

pub const TRANSITION_STATES: usize = 9;

/// Labels of the matrix rows and columns: start, the seven tools, answer.
pub fn transition_labels() -> [&'static str; TRANSITION_STATES] {
    let mut out = ["start"; TRANSITION_STATES];
    for (i, t) in ToolName::ALL.iter().enumerate() {
        out[i + 1] = t.as_str();
    }
    out[TRANSITION_STATES - 1] = "answer";
    out
}

/// Counts of consecutive (previous, next) tool calls.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolTransitionMatrix {
    pub counts: [[u64; TRANSITION_STATES]; TRANSITION_STATES],
}

impl ToolTransitionMatrix {
    pub fn add(&mut self, record: &TrajectoryRecord) {
        let index = |t: ToolName| 1 + ToolName::ALL.iter().position(|x| *x == t).expect("known tool");
        let mut states = vec![0];
        states.extend(record.tool_sequence().into_iter().map(index));
        if matches!(record.status, EpisodeStatus::Answered { .. }) {
            states.push(TRANSITION_STATES - 1);
        }
        for w in states.windows(2) {
            self.counts[w[0]][w[1]] += 1;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, x) in row.iter_mut().zip(o) {
                *c += x;
            }
        }
    }

    /// Row-normalised probabilities; rows without mass stay zero.
    pub fn probabilities(&self) -> [[f64; TRANSITION_STATES]; TRANSITION_STATES] {
        let mut p = [[0.0; TRANSITION_STATES]; TRANSITION_STATES];
        for (row, counts) in p.iter_mut().zip(&self.counts) {
            let total: u64 = counts.iter().sum();
            if total > 0 {
                for (x, c) in row.iter_mut().zip(counts) {
                    *x = *c as f64 / total as f64;
                }
            }
        }
        p
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AnalyticsError> {
        let mut w = csv::Writer::from_writer(out);
        let labels = transition_labels();
        let mut header = vec!["previous"];
        header.extend(labels);
        w.write_record(&header)?;
        for (label, row) in labels.iter().zip(self.probabilities()) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn transition_matrix(records: &[TrajectoryRecord]) -> ToolTransitionMatrix {
    let mut m = ToolTransitionMatrix::default();
    for r in records {
        m.add(r);
    }
    m
}

/// Inputs of the per-update FLOPs reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsRecord {
    pub mfu: f64,
    /// Peak FLOP/s of one device.
    pub f_peak: f64,
    pub devices: f64,
    pub epochs: f64,
    /// Seconds spent in the policy update.
    pub t_policy: f64,
}

impl FlopsRecord {
    fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("mfu", self.mfu),
            ("f_peak", self.f_peak),
            ("devices", self.devices),
            ("epochs", self.epochs),
            ("t_policy", self.t_policy),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.mfu > 1.0 {
            return Err(format!("mfu {} exceeds 1", self.mfu));
        }
        Ok(())
    }
}

/// `MFU × f_peak × W × t_policy / E`.
pub fn flops_update(rec: &FlopsRecord) -> Result<f64, AnalyticsError> {
    rec.check().map_err(|reason| AnalyticsError::Flops { index: 0, reason })?;
    Ok(rec.mfu * rec.f_peak * rec.devices * rec.t_policy / rec.epochs)
}

/// Running totals of [`flops_update`].
pub fn cumulative_flops(records: &[FlopsRecord]) -> Result<Vec<f64>, AnalyticsError> {
    let mut total = 0.0;
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            r.check().map_err(|reason| AnalyticsError::Flops { index, reason })?;
            total += flops_update(r)?;
            Ok(total)
        })
        .collect()
}

pub fn read_flops_csv<R: Read>(input: R) -> Result<Vec<FlopsRecord>, AnalyticsError> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr.deserialize().collect::<Result<Vec<FlopsRecord>, _>>()?)
}

pub fn write_flops_csv<W: Write>(records: &[FlopsRecord], out: W) -> Result<(), AnalyticsError> {
    let totals = cumulative_flops(records)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "flops_update", "cumulative_flops"])?;
    for (i, (r, total)) in records.iter().zip(totals).enumerate() {
        w.write_record([(i + 1).to_string(), flops_update(r)?.to_string(), total.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
