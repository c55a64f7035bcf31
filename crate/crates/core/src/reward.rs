//! Schema-gated, lambda-weighted terminal reward.
//!
//! ```text
//! r = r_schema · (λ1·cs_micro + λ2·hard_micro + λ3·cs_macro + λ4·hard_macro + λ5·pass)
//! ```
//!
//! Every term is an exact rational so a fully satisfied category gives a
//! micro score of exactly one, and the macro indicators can never disagree
//! with it through rounding.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{eval_commonsense, eval_hard, Category, ConstraintReport};
use crate::plan::{validate, SchemaReport};
use crate::sandbox::{QuerySpec, SandboxStore};

pub type Rational = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("invalid lambda vector: {0}")]
    InvalidLambda(String),
    #[error("unknown stage {0}; expected 1, 2 or 3")]
    UnknownStage(u8),
    #[error("invalid curriculum schedule: {0}")]
    InvalidSchedule(String),
    #[error("reports do not describe the same plan: {0}")]
    Provenance(String),
}

/// Weights for cs_micro, hard_micro, cs_macro, hard_macro and pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LambdaVector([Rational; 5]);

impl LambdaVector {
    pub fn new(weights: [Rational; 5]) -> Result<Self, RewardError> {
        if weights.iter().any(|w| *w < Rational::zero()) {
            return Err(RewardError::InvalidLambda("weights must be nonnegative".into()));
        }
        Ok(Self(weights))
    }

    pub fn from_integers(weights: [i64; 5]) -> Result<Self, RewardError> {
        Self::new(weights.map(Rational::from_integer))
    }

    pub fn stage(stage: u8) -> Result<Self, RewardError> {
        let w = match stage {
            1 => [1, 1, 1, 1, 1],
            2 => [0, 0, 1, 1, 1],
            3 => [0, 0, 0, 0, 1],
            other => return Err(RewardError::UnknownStage(other)),
        };
        Self::from_integers(w)
    }

    pub fn weights(&self) -> &[Rational; 5] {
        &self.0
    }

    pub fn sum(&self) -> Rational {
        self.0.iter().sum()
    }

    /// Whether the pass indicator carries weight, which is what keeps the
    /// set of best plans the same as under the sparse pass-only reward.
    pub fn preserves_optimum(&self) -> bool {
        self.0[4] > Rational::zero()
    }
}

fn parse_decimal(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Ok(r) = s.parse::<Rational>() {
        return Some(r);
    }
    let (int, frac) = s.split_once('.')?;
    if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) || (int.is_empty() && frac.is_empty()) {
        return None;
    }
    let int: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let scale = 10i64.checked_pow(frac.len() as u32)?;
    let frac: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let numer = int.checked_mul(scale)?.checked_add(if int < 0 { -frac } else { frac })?;
    Some(Rational::new(numer, scale))
}

impl FromStr for LambdaVector {
    type Err = RewardError;

    /// `stage1`, `stage2`, `stage3`, or `custom:a,b,c,d,e` with decimal or
    /// `n/d` weights.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "stage1" | "1" => Self::stage(1),
            "stage2" | "2" => Self::stage(2),
            "stage3" | "3" => Self::stage(3),
            other => {
                let body = other
                    .strip_prefix("custom:")
                    .ok_or_else(|| RewardError::InvalidLambda(format!("unrecognised lambda {other:?}")))?;
                let parts: Vec<_> = body.split(',').collect();
                if parts.len() != 5 {
                    return Err(RewardError::InvalidLambda(format!("expected 5 weights, found {}", parts.len())));
                }
                let mut w = [Rational::zero(); 5];
                for (slot, p) in w.iter_mut().zip(parts) {
                    *slot = parse_decimal(p).ok_or_else(|| RewardError::InvalidLambda(format!("bad weight {p:?}")))?;
                }
                Self::new(w)
            }
        }
    }
}

impl fmt::Display for LambdaVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        write!(f, "custom:{}", parts.join(","))
    }
}

impl Serialize for LambdaVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|w| w.to_string()))
    }
}

impl<'de> Deserialize<'de> for LambdaVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let parts: Vec<serde_json::Value> = Vec::deserialize(d)?;
        let text: Vec<String> = parts
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        format!("custom:{}", text.join(",")).parse().map_err(serde::de::Error::custom)
    }
}

/// Step-indexed switching between lambda vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, LambdaVector)>", into = "Vec<(u64, LambdaVector)>")]
pub struct CurriculumSchedule {
    stages: Vec<(u64, LambdaVector)>,
}

impl CurriculumSchedule {
    pub fn new(stages: Vec<(u64, LambdaVector)>) -> Result<Self, RewardError> {
        match stages.first() {
            None => return Err(RewardError::InvalidSchedule("no stages".into())),
            Some((s, _)) if *s != 0 => return Err(RewardError::InvalidSchedule("first stage must start at 0".into())),
            _ => {}
        }
        if stages.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(RewardError::InvalidSchedule("start steps must increase strictly".into()));
        }
        Ok(Self { stages })
    }

    /// Three stages starting at the given steps.
    pub fn three_stage(stage2_at: u64, stage3_at: u64) -> Result<Self, RewardError> {
        Self::new(vec![
            (0, LambdaVector::stage(1)?),
            (stage2_at, LambdaVector::stage(2)?),
            (stage3_at, LambdaVector::stage(3)?),
        ])
    }

    /// 100 dense steps, 300 category-level, then sparse.
    pub fn eight_b() -> Self {
        Self::three_stage(100, 400).expect("valid")
    }

    /// 50 dense steps, 350 category-level, then sparse.
    pub fn thirty_two_b() -> Self {
        Self::three_stage(50, 400).expect("valid")
    }

    pub fn constant(lambda: LambdaVector) -> Self {
        Self { stages: vec![(0, lambda)] }
    }

    /// Zero-based index of the stage active at `step`.
    pub fn stage_index(&self, step: u64) -> usize {
        self.stages.iter().rposition(|(s, _)| *s <= step).unwrap_or(0)
    }

    pub fn lambda_at(&self, step: u64) -> LambdaVector {
        self.stages[self.stage_index(step)].1
    }

    pub fn stages(&self) -> &[(u64, LambdaVector)] {
        &self.stages
    }
}

impl TryFrom<Vec<(u64, LambdaVector)>> for CurriculumSchedule {
    type Error = RewardError;
    fn try_from(v: Vec<(u64, LambdaVector)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<CurriculumSchedule> for Vec<(u64, LambdaVector)> {
    fn from(s: CurriculumSchedule) -> Self {
        s.stages
    }
}

/// Every reward term. Indicators are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BreakdownWire", try_from = "BreakdownWire")]
pub struct RewardBreakdown {
    pub r_schema: Rational,
    pub r_cs_micro: Rational,
    pub r_hard_micro: Rational,
    pub r_cs_macro: Rational,
    pub r_hard_macro: Rational,
    pub r_pass: Rational,
    pub total: Rational,
    pub lambda: LambdaVector,
}

impl RewardBreakdown {
    /// The episode ended without an answer: every term is zero.
    pub fn undelivered(lambda: LambdaVector) -> Self {
        let z = Rational::zero();
        Self { r_schema: z, r_cs_micro: z, r_hard_micro: z, r_cs_macro: z, r_hard_macro: z, r_pass: z, total: z, lambda }
    }

    pub fn passed(&self) -> bool {
        self.r_pass.is_one()
    }

    pub fn delivered(&self) -> bool {
        self.r_schema.is_one()
    }

    pub fn total_f64(&self) -> f64 {
        to_f64(self.total)
    }

    /// Same plan, different weights. The component terms do not depend on λ.
    pub fn reweighted(&self, lambda: LambdaVector) -> Self {
        let mut out = self.clone();
        out.lambda = lambda;
        out.total = self.r_schema * weighted(&lambda, [self.r_cs_micro, self.r_hard_micro, self.r_cs_macro, self.r_hard_macro, self.r_pass]);
        out
    }
}

fn to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn weighted(lambda: &LambdaVector, terms: [Rational; 5]) -> Rational {
    lambda.0.iter().zip(terms).map(|(w, t)| *w * t).sum()
}

#[derive(Serialize, Deserialize)]
struct BreakdownWire {
    r_schema: f64,
    r_cs_micro: f64,
    r_hard_micro: f64,
    r_cs_macro: f64,
    r_hard_macro: f64,
    r_pass: f64,
    total: f64,
    lambda: LambdaVector,
    /// Exact `n/d` forms of the seven terms, in field order.
    exact: [String; 7],
}

impl From<RewardBreakdown> for BreakdownWire {
    fn from(b: RewardBreakdown) -> Self {
        let terms = [b.r_schema, b.r_cs_micro, b.r_hard_micro, b.r_cs_macro, b.r_hard_macro, b.r_pass, b.total];
        Self {
            r_schema: to_f64(b.r_schema),
            r_cs_micro: to_f64(b.r_cs_micro),
            r_hard_micro: to_f64(b.r_hard_micro),
            r_cs_macro: to_f64(b.r_cs_macro),
            r_hard_macro: to_f64(b.r_hard_macro),
            r_pass: to_f64(b.r_pass),
            total: to_f64(b.total),
            lambda: b.lambda,
            exact: terms.map(|t| t.to_string()),
        }
    }
}

impl TryFrom<BreakdownWire> for RewardBreakdown {
    type Error = String;

    fn try_from(w: BreakdownWire) -> Result<Self, Self::Error> {
        let mut t = [Rational::zero(); 7];
        for (slot, s) in t.iter_mut().zip(&w.exact) {
            *slot = s.parse().map_err(|_| format!("bad exact term {s:?}"))?;
        }
        Ok(Self {
            r_schema: t[0],
            r_cs_micro: t[1],
            r_hard_micro: t[2],
            r_cs_macro: t[3],
            r_hard_macro: t[4],
            r_pass: t[5],
            total: t[6],
            lambda: w.lambda,
        })
    }
}

fn indicator(b: bool) -> Rational {
    if b {
        Rational::one()
    } else {
        Rational::zero()
    }
}

/// Combines a schema report with the two constraint reports for the same
/// plan. When the schema gate fails the constraint reports are ignored.
pub fn compute_reward(
    schema: &SchemaReport,
    cs: &ConstraintReport,
    hard: &ConstraintReport,
    lambda: LambdaVector,
) -> Result<RewardBreakdown, RewardError> {
    if cs.category != Category::Commonsense || hard.category != Category::Hard {
        return Err(RewardError::Provenance("reports passed in the wrong slots".into()));
    }
    if !schema.valid {
        return Ok(RewardBreakdown::undelivered(lambda));
    }
    let digest = schema.plan_digest.as_deref().unwrap_or_default();
    if cs.plan_digest != digest || hard.plan_digest != digest {
        return Err(RewardError::Provenance(format!(
            "schema {digest}, commonsense {}, hard {}",
            cs.plan_digest, hard.plan_digest
        )));
    }
    if cs.total == 0 {
        return Err(RewardError::Provenance("commonsense report evaluated no constraints".into()));
    }
    let cs_micro = Rational::new(cs.passed.into(), cs.total.into());
    let hard_micro = if hard.total == 0 {
        Rational::one()
    } else {
        Rational::new(hard.passed.into(), hard.total.into())
    };
    let cs_macro = indicator(cs_micro.is_one());
    let hard_macro = indicator(hard_micro.is_one());
    let pass = cs_macro * hard_macro;
    let total = weighted(&lambda, [cs_micro, hard_micro, cs_macro, hard_macro, pass]);
    Ok(RewardBreakdown {
        r_schema: Rational::one(),
        r_cs_micro: cs_micro,
        r_hard_micro: hard_micro,
        r_cs_macro: cs_macro,
        r_hard_macro: hard_macro,
        r_pass: pass,
        total,
        lambda,
    })
}

/// Full scoring of an answer text, keeping every intermediate report.
#[derive(Debug, Clone, Serialize)]
pub struct ScoredAnswer {
    pub schema: Option<SchemaReport>,
    pub commonsense: Option<ConstraintReport>,
    pub hard: Option<ConstraintReport>,
    pub reward: RewardBreakdown,
}

/// Scores `answer` (the inner text of an answer block, or `None` when the
/// episode delivered nothing) for `query`.
pub fn score_answer(store: &SandboxStore, query: &QuerySpec, answer: Option<&str>, lambda: LambdaVector) -> ScoredAnswer {
    let Some(text) = answer else {
        return ScoredAnswer { schema: None, commonsense: None, hard: None, reward: RewardBreakdown::undelivered(lambda) };
    };
    let (schema, plan) = validate(text);
    let Some(plan) = plan else {
        return ScoredAnswer { schema: Some(schema), commonsense: None, hard: None, reward: RewardBreakdown::undelivered(lambda) };
    };
    let cs = eval_commonsense(&plan, store, query);
    let hard = eval_hard(&plan, query, store);
    let reward = compute_reward(&schema, &cs, &hard, lambda).expect("reports built from the same plan");
    ScoredAnswer { schema: Some(schema), commonsense: Some(cs), hard: Some(hard), reward }
}
