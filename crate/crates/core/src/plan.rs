//! Day-plan schema validation and the typed itinerary.
//!
//! [`validate`] is the schema gate: it accepts answer text and decides whether
//! it is a JSON array of day objects conforming to the shipped schema
//! (`assets/plan_schema.v1.json`). The check is hand-written so that each
//! violation can be reported with its day index and field path.
//!
//! The rule that day numbers run `1..=n` cannot be expressed in the schema.
//! It is reported separately as a structural violation and does not affect
//! `SchemaReport::valid`.

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::sandbox::TransportMode;

/// The plan schema document, byte-for-byte as distributed.
pub const PLAN_SCHEMA: &str = include_str!("../assets/plan_schema.v1.json");
pub const PLAN_SCHEMA_VERSION: &str = "v1";

/// Placeholder for an empty slot.
pub const NONE: &str = "-";

const DAY_FIELDS: [&str; 8] = [
    "days", "city", "transportation", "attraction", "accommodation", "breakfast", "lunch", "dinner",
];
const LEG_REQUIRED: [&str; 6] = ["mode", "from", "to", "duration", "distance", "cost"];
const LEG_OPTIONAL: [&str; 3] = ["flight_number", "departure_time", "arrival_time"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum DayCity {
    Stay(String),
    Transfer { from: String, to: String },
}

impl DayCity {
    /// City at the start of the day.
    pub fn start(&self) -> &str {
        match self {
            Self::Stay(c) => c,
            Self::Transfer { from, .. } => from,
        }
    }

    /// City at the end of the day.
    pub fn end(&self) -> &str {
        match self {
            Self::Stay(c) => c,
            Self::Transfer { to, .. } => to,
        }
    }

    pub fn is_transfer(&self) -> bool {
        matches!(self, Self::Transfer { .. })
    }

    pub fn names(&self) -> Vec<&str> {
        match self {
            Self::Stay(c) => vec![c],
            Self::Transfer { from, to } => vec![from, to],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransportLeg {
    pub mode: TransportMode,
    pub from: String,
    pub to: String,
    pub duration: String,
    pub distance: String,
    pub cost: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flight_number: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub departure_time: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrival_time: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transportation {
    NotNeeded,
    Leg(TransportLeg),
}

impl Transportation {
    pub fn leg(&self) -> Option<&TransportLeg> {
        match self {
            Self::NotNeeded => None,
            Self::Leg(l) => Some(l),
        }
    }
}

impl Serialize for Transportation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::NotNeeded => s.serialize_str(NONE),
            Self::Leg(leg) => leg.serialize(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attractions {
    NotPlanned,
    Visit(Vec<String>),
}

impl Attractions {
    pub fn names(&self) -> &[String] {
        match self {
            Self::NotPlanned => &[],
            Self::Visit(v) => v,
        }
    }
}

impl Serialize for Attractions {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::NotPlanned => s.serialize_str(NONE),
            Self::Visit(v) => v.serialize(s),
        }
    }
}

/// One element of the answer array. Field order matches the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayPlan {
    pub days: i64,
    pub city: DayCity,
    pub transportation: Transportation,
    pub attraction: Attractions,
    pub accommodation: String,
    pub breakfast: String,
    pub lunch: String,
    pub dinner: String,
}

impl Serialize for DayPlan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(8))?;
        m.serialize_entry("days", &self.days)?;
        m.serialize_entry("city", &self.city)?;
        m.serialize_entry("transportation", &self.transportation)?;
        m.serialize_entry("attraction", &self.attraction)?;
        m.serialize_entry("accommodation", &self.accommodation)?;
        m.serialize_entry("breakfast", &self.breakfast)?;
        m.serialize_entry("lunch", &self.lunch)?;
        m.serialize_entry("dinner", &self.dinner)?;
        m.end()
    }
}

impl DayPlan {
    /// Named meal slots in breakfast, lunch, dinner order, skipping `-`.
    pub fn meals(&self) -> impl Iterator<Item = (&'static str, &str)> {
        [("breakfast", &self.breakfast), ("lunch", &self.lunch), ("dinner", &self.dinner)]
            .into_iter()
            .filter(|(_, v)| !is_none(v))
            .map(|(k, v)| (k, v.as_str()))
    }

    pub fn accommodation(&self) -> Option<&str> {
        (!is_none(&self.accommodation)).then_some(self.accommodation.as_str())
    }
}

pub fn is_none(slot: &str) -> bool {
    slot.trim() == NONE
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ItineraryPlan {
    pub days: Vec<DayPlan>,
}

impl ItineraryPlan {
    /// Plan rendered in schema key order. Key order is preserved so the
    /// output reads like the schema.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plans always serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans always serialize")
    }

    /// Hex SHA-256 of the sorted-key rendering; identifies a plan across reports.
    pub fn digest(&self) -> String {
        // Streams the sorted-key form straight into the hasher; equal to
        // hashing `json::canonical(self)`.
        let mut w = HashWriter(Sha256::new());
        let days: Vec<SortedDay> = self.days.iter().map(SortedDay).collect();
        serde_json::to_writer(&mut w, &days).expect("plans always serialize");
        let mut out = String::with_capacity(64);
        for b in w.0.finalize() {
            out.push(char::from(HEX[usize::from(b >> 4)]));
            out.push(char::from(HEX[usize::from(b & 0xf)]));
        }
        out
    }
}

const HEX: &[u8; 16] = b"0123456789abcdef";

struct HashWriter(Sha256);

impl std::io::Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// A day with object keys in sorted order.
struct SortedDay<'a>(&'a DayPlan);

impl Serialize for SortedDay<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let d = self.0;
        let mut m = s.serialize_map(Some(8))?;
        m.serialize_entry("accommodation", &d.accommodation)?;
        m.serialize_entry("attraction", &d.attraction)?;
        m.serialize_entry("breakfast", &d.breakfast)?;
        m.serialize_entry("city", &d.city)?;
        m.serialize_entry("days", &d.days)?;
        m.serialize_entry("dinner", &d.dinner)?;
        m.serialize_entry("lunch", &d.lunch)?;
        match &d.transportation {
            Transportation::NotNeeded => m.serialize_entry("transportation", NONE)?,
            Transportation::Leg(leg) => m.serialize_entry("transportation", &SortedLeg(leg))?,
        }
        m.end()
    }
}

struct SortedLeg<'a>(&'a TransportLeg);

impl Serialize for SortedLeg<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let l = self.0;
        let mut m = s.serialize_map(None)?;
        if let Some(v) = &l.arrival_time {
            m.serialize_entry("arrival_time", v)?;
        }
        m.serialize_entry("cost", &l.cost)?;
        if let Some(v) = &l.departure_time {
            m.serialize_entry("departure_time", v)?;
        }
        m.serialize_entry("distance", &l.distance)?;
        m.serialize_entry("duration", &l.duration)?;
        if let Some(v) = &l.flight_number {
            m.serialize_entry("flight_number", v)?;
        }
        m.serialize_entry("from", &l.from)?;
        m.serialize_entry("mode", &l.mode)?;
        m.serialize_entry("to", &l.to)?;
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Index of the offending day, or `None` for the array itself.
    pub day: Option<usize>,
    pub path: String,
    pub reason: String,
}

impl Violation {
    fn root(path: &str, reason: impl Into<String>) -> Self {
        Self { day: None, path: path.to_string(), reason: reason.into() }
    }

    fn at(day: usize, path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { day: Some(day), path: path.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
    /// Day-numbering problems; never affect `valid`.
    pub structural: Vec<Violation>,
    /// Digest of the typed plan when `valid`.
    pub plan_digest: Option<String>,
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn is_integer(v: &Value) -> bool {
    matches!(v, Value::Number(n) if n.is_i64() || n.is_u64())
}

/// Validates answer text against the day-plan schema.
pub fn validate(answer_text: &str) -> (SchemaReport, Option<ItineraryPlan>) {
    let parsed: Value = match serde_json::from_str(answer_text) {
        Ok(v) => v,
        Err(e) => {
            return (
                SchemaReport {
                    valid: false,
                    violations: vec![Violation::root("json", format!("not valid JSON: {e}"))],
                    structural: vec![],
                    plan_digest: None,
                },
                None,
            )
        }
    };
    validate_value(&parsed)
}

/// Same as [`validate`] for an already-parsed value.
pub fn validate_value(value: &Value) -> (SchemaReport, Option<ItineraryPlan>) {
    let mut violations = Vec::new();
    let Some(items) = value.as_array() else {
        violations.push(Violation::root("type", format!("expected array, found {}", type_name(value))));
        return (SchemaReport { valid: false, violations, structural: vec![], plan_digest: None }, None);
    };
    for (i, item) in items.iter().enumerate() {
        check_day(i, item, &mut violations);
    }
    if !violations.is_empty() {
        return (SchemaReport { valid: false, violations, structural: vec![], plan_digest: None }, None);
    }
    let plan = ItineraryPlan { days: items.iter().map(to_day).collect() };
    let structural = structural_violations(&plan);
    let digest = plan.digest();
    (
        SchemaReport { valid: true, violations, structural, plan_digest: Some(digest) },
        Some(plan),
    )
}

/// Days must be numbered `1..=n` in order.
pub fn structural_violations(plan: &ItineraryPlan) -> Vec<Violation> {
    plan.days
        .iter()
        .enumerate()
        .filter(|(i, d)| d.days != *i as i64 + 1)
        .map(|(i, d)| Violation::at(i, "days", format!("expected day {}, found {}", i + 1, d.days)))
        .collect()
}

fn check_string(day: usize, obj: &Map<String, Value>, field: &str, prefix: &str, out: &mut Vec<Violation>) {
    if let Some(v) = obj.get(field) {
        if !v.is_string() {
            out.push(Violation::at(day, format!("{prefix}{field}.type"), format!("expected string, found {}", type_name(v))));
        }
    }
}

fn check_day(i: usize, item: &Value, out: &mut Vec<Violation>) {
    let Some(obj) = item.as_object() else {
        out.push(Violation::at(i, "type", format!("expected object, found {}", type_name(item))));
        return;
    };
    for field in DAY_FIELDS {
        if !obj.contains_key(field) {
            out.push(Violation::at(i, "required", format!("missing property {field:?}")));
        }
    }
    let mut extra: Vec<&String> = obj.keys().filter(|k| !DAY_FIELDS.contains(&k.as_str())).collect();
    extra.sort();
    for k in extra {
        out.push(Violation::at(i, "additionalProperties", format!("unexpected property {k:?}")));
    }

    if let Some(v) = obj.get("days") {
        if !is_integer(v) {
            out.push(Violation::at(i, "days.type", format!("expected integer, found {}", type_name(v))));
        }
    }

    if let Some(v) = obj.get("city") {
        match v {
            Value::String(_) => {}
            Value::Object(c) => {
                for k in ["from", "to"] {
                    if !c.contains_key(k) {
                        out.push(Violation::at(i, "city.required", format!("missing property {k:?}")));
                    }
                    check_string(i, c, k, "city.", out);
                }
                for k in c.keys().filter(|k| *k != "from" && *k != "to") {
                    out.push(Violation::at(i, "city.additionalProperties", format!("unexpected property {k:?}")));
                }
            }
            other => out.push(Violation::at(
                i,
                "city.oneOf",
                format!("expected string or object, found {}", type_name(other)),
            )),
        }
    }

    if let Some(v) = obj.get("transportation") {
        match v {
            Value::String(s) if s == NONE => {}
            Value::String(s) => out.push(Violation::at(
                i,
                "transportation.oneOf",
                format!("string value must be \"-\", found {s:?}"),
            )),
            Value::Object(t) => check_leg(i, t, out),
            other => out.push(Violation::at(
                i,
                "transportation.oneOf",
                format!("expected \"-\" or object, found {}", type_name(other)),
            )),
        }
    }

    if let Some(v) = obj.get("attraction") {
        match v {
            Value::String(s) if s == NONE => {}
            Value::String(s) => out.push(Violation::at(
                i,
                "attraction.oneOf",
                format!("string value must be \"-\", found {s:?}"),
            )),
            Value::Array(list) => {
                if list.is_empty() {
                    out.push(Violation::at(i, "attraction.minItems", "list must not be empty"));
                }
                for (j, a) in list.iter().enumerate() {
                    if !a.is_string() {
                        out.push(Violation::at(
                            i,
                            format!("attraction.items[{j}].type"),
                            format!("expected string, found {}", type_name(a)),
                        ));
                    }
                }
            }
            other => out.push(Violation::at(
                i,
                "attraction.oneOf",
                format!("expected \"-\" or array, found {}", type_name(other)),
            )),
        }
    }

    for field in ["accommodation", "breakfast", "lunch", "dinner"] {
        check_string(i, obj, field, "", out);
    }
}

fn check_leg(i: usize, t: &Map<String, Value>, out: &mut Vec<Violation>) {
    for k in LEG_REQUIRED {
        if !t.contains_key(k) {
            out.push(Violation::at(i, "transportation.required", format!("missing property {k:?}")));
        }
    }
    let mut extra: Vec<&String> = t
        .keys()
        .filter(|k| !LEG_REQUIRED.contains(&k.as_str()) && !LEG_OPTIONAL.contains(&k.as_str()))
        .collect();
    extra.sort();
    for k in extra {
        out.push(Violation::at(i, "transportation.additionalProperties", format!("unexpected property {k:?}")));
    }
    if let Some(mode) = t.get("mode") {
        match mode.as_str() {
            Some(m) if m.parse::<TransportMode>().is_ok() => {}
            Some(m) => out.push(Violation::at(i, "transportation.mode.enum", format!("unknown mode {m:?}"))),
            None => out.push(Violation::at(
                i,
                "transportation.mode.type",
                format!("expected string, found {}", type_name(mode)),
            )),
        }
    }
    for k in ["from", "to", "duration", "distance"].into_iter().chain(LEG_OPTIONAL) {
        check_string(i, t, k, "transportation.", out);
    }
    if let Some(cost) = t.get("cost") {
        if !is_integer(cost) {
            out.push(Violation::at(
                i,
                "transportation.cost.type",
                format!("expected integer, found {}", type_name(cost)),
            ));
        }
    }
}

fn text(v: &Value) -> String {
    v.as_str().unwrap_or_default().to_string()
}

// Only called on values that passed `check_day`.
fn to_day(item: &Value) -> DayPlan {
    let obj = item.as_object().expect("validated");
    let city = match &obj["city"] {
        Value::String(s) => DayCity::Stay(s.clone()),
        c => DayCity::Transfer { from: text(&c["from"]), to: text(&c["to"]) },
    };
    let transportation = match &obj["transportation"] {
        Value::Object(t) => Transportation::Leg(TransportLeg {
            mode: t["mode"].as_str().unwrap_or_default().parse().expect("validated"),
            from: text(&t["from"]),
            to: text(&t["to"]),
            duration: text(&t["duration"]),
            distance: text(&t["distance"]),
            cost: t["cost"].as_i64().unwrap_or(i64::MAX),
            flight_number: t.get("flight_number").map(text),
            departure_time: t.get("departure_time").map(text),
            arrival_time: t.get("arrival_time").map(text),
        }),
        _ => Transportation::NotNeeded,
    };
    let attraction = match &obj["attraction"] {
        Value::Array(list) => Attractions::Visit(list.iter().map(text).collect()),
        _ => Attractions::NotPlanned,
    };
    DayPlan {
        days: obj["days"].as_i64().unwrap_or(i64::MAX),
        city,
        transportation,
        attraction,
        accommodation: text(&obj["accommodation"]),
        breakfast: text(&obj["breakfast"]),
        lunch: text(&obj["lunch"]),
        dinner: text(&obj["dinner"]),
    }
}

fn trim(s: &str) -> String {
    s.trim().to_string()
}

/// Stable form for hashing and diffing: every string trimmed. Key order is
/// already fixed by the typed representation. Idempotent.
pub fn canonicalize(plan: &ItineraryPlan) -> ItineraryPlan {
    let days = plan
        .days
        .iter()
        .map(|d| DayPlan {
            days: d.days,
            city: match &d.city {
                DayCity::Stay(c) => DayCity::Stay(trim(c)),
                DayCity::Transfer { from, to } => DayCity::Transfer { from: trim(from), to: trim(to) },
            },
            transportation: match &d.transportation {
                Transportation::NotNeeded => Transportation::NotNeeded,
                Transportation::Leg(l) => Transportation::Leg(TransportLeg {
                    mode: l.mode,
                    from: trim(&l.from),
                    to: trim(&l.to),
                    duration: trim(&l.duration),
                    distance: trim(&l.distance),
                    cost: l.cost,
                    flight_number: l.flight_number.as_deref().map(trim),
                    departure_time: l.departure_time.as_deref().map(trim),
                    arrival_time: l.arrival_time.as_deref().map(trim),
                }),
            },
            attraction: match &d.attraction {
                Attractions::NotPlanned => Attractions::NotPlanned,
                Attractions::Visit(v) => Attractions::Visit(v.iter().map(|s| trim(s)).collect()),
            },
            accommodation: trim(&d.accommodation),
            breakfast: trim(&d.breakfast),
            lunch: trim(&d.lunch),
            dinner: trim(&d.dinner),
        })
        .collect();
    ItineraryPlan { days }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn one_day() -> Value {
        json!([{
            "days": 1, "city": "Ashford", "transportation": "-", "attraction": "-",
            "accommodation": "-", "breakfast": "-", "lunch": "-", "dinner": "-"
        }])
    }

    #[test]
    fn digest_hashes_sorted_key_rendering() {
        let store = crate::sandbox::generate_sandbox(5, &crate::sandbox::SizeProfile::small()).unwrap();
        for seed in 0..12 {
            let d = crate::sandbox::Difficulty::ALL[seed as usize % 3];
            let mut plan = crate::sandbox::generate_query(&store, seed, d).unwrap().witness;
            if seed % 2 == 1 {
                if let Transportation::Leg(l) = &mut plan.days[0].transportation {
                    l.departure_time = None;
                    l.flight_number = Some("X \"quoted\" ü".into());
                }
            }
            let text = crate::json::canonical(&plan);
            let want: String = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
            assert_eq!(plan.digest(), want);
        }
    }

    #[test]
    fn minimal_day_is_valid() {
        let (report, plan) = validate(&one_day().to_string());
        assert!(report.valid, "{:?}", report.violations);
        assert!(report.violations.is_empty());
        assert_eq!(plan.unwrap().days.len(), 1);
    }

    #[test]
    fn missing_dinner_reported() {
        let mut v = one_day();
        v[0].as_object_mut().unwrap().remove("dinner");
        let (report, plan) = validate_value(&v);
        assert!(!report.valid);
        assert!(plan.is_none());
        assert_eq!(report.violations[0].path, "required");
        assert!(report.violations[0].reason.contains("dinner"));
    }

    #[test]
    fn leg_missing_duration_reported() {
        let mut v = one_day();
        v[0]["transportation"] = json!({"mode": "taxi", "from": "A", "to": "B", "distance": "3 km", "cost": 10});
        let (report, _) = validate_value(&v);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].path, "transportation.required");
        assert!(report.violations[0].reason.contains("duration"));
    }

    #[test]
    fn float_cost_rejected() {
        let mut v = one_day();
        v[0]["transportation"] = json!({"mode": "taxi", "from": "A", "to": "B", "duration": "1h", "distance": "3 km", "cost": 10.0});
        let (report, _) = validate_value(&v);
        assert_eq!(report.violations[0].path, "transportation.cost.type");
    }

    #[test]
    fn non_array_and_bad_json() {
        assert_eq!(validate("{}").0.violations[0].path, "type");
        assert_eq!(validate("[{").0.violations[0].path, "json");
        assert!(validate("[]").0.valid);
    }

    #[test]
    fn out_of_order_days_pass_gate_but_flagged() {
        let mut v = one_day();
        v[0]["days"] = json!(2);
        let (report, _) = validate_value(&v);
        assert!(report.valid);
        assert_eq!(report.structural.len(), 1);
    }

    #[test]
    fn serialization_matches_schema_shape() {
        let mut v = one_day();
        v[0]["city"] = json!({"from": "A", "to": "B"});
        v[0]["attraction"] = json!(["X"]);
        let (_, plan) = validate_value(&v);
        let back: Value = serde_json::from_str(&plan.unwrap().to_json()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn canonicalize_trims_and_is_idempotent() {
        let mut v = one_day();
        v[0]["city"] = json!("  Ashford ");
        v[0]["attraction"] = json!([" Zoo "]);
        let (_, plan) = validate_value(&v);
        let c = canonicalize(&plan.unwrap());
        assert_eq!(c.days[0].city, DayCity::Stay("Ashford".into()));
        assert_eq!(c.days[0].attraction.names(), ["Zoo".to_string()]);
        assert_eq!(canonicalize(&c), c);
    }

    #[test]
    fn schema_asset_parses() {
        let schema: Value = serde_json::from_str(PLAN_SCHEMA).unwrap();
        assert_eq!(schema["additionalProperties"], json!(false));
        let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
        assert_eq!(required, DAY_FIELDS);
    }
}
