//! Turn parsing and tool dispatch.
//!
//! An assistant turn is scanned for `<tool_call>…</tool_call>` and
//! `<answer>…</answer>` blocks; the earliest complete block decides what the
//! turn is. Only one tool call is honoured per turn. Every failure is an
//! in-band [`ToolResponse`] — nothing an agent writes can make dispatch panic.
//!
//! Argument conventions (all values are JSON strings):
//!
//! | tool | required arguments |
//! |---|---|
//! | `search_flights` | `origin`, `destination`, `date` (`YYYY-MM-DD`) |
//! | `search_accommodations` | `city` |
//! | `search_restaurants` | `city` |
//! | `search_attractions` | `city` |
//! | `search_ground_transportation` | `origin`, `destination` |
//! | `get_cities` | `state` |
//! | `calculator` | `expression` |

pub mod calc;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::json::canonical;
use crate::sandbox::SandboxStore;
use crate::tokens::truncate_right;

pub use calc::{calculate, CalcError, CalcValue};

pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    SearchFlights,
    SearchAccommodations,
    SearchRestaurants,
    SearchAttractions,
    SearchGroundTransportation,
    GetCities,
    Calculator,
}

impl ToolName {
    pub const ALL: [ToolName; 7] = [
        Self::SearchFlights,
        Self::SearchAccommodations,
        Self::SearchRestaurants,
        Self::SearchAttractions,
        Self::SearchGroundTransportation,
        Self::GetCities,
        Self::Calculator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SearchFlights => "search_flights",
            Self::SearchAccommodations => "search_accommodations",
            Self::SearchRestaurants => "search_restaurants",
            Self::SearchAttractions => "search_attractions",
            Self::SearchGroundTransportation => "search_ground_transportation",
            Self::GetCities => "get_cities",
            Self::Calculator => "calculator",
        }
    }

    pub fn required_args(self) -> &'static [&'static str] {
        match self {
            Self::SearchFlights => &["origin", "destination", "date"],
            Self::SearchAccommodations | Self::SearchRestaurants | Self::SearchAttractions => &["city"],
            Self::SearchGroundTransportation => &["origin", "destination"],
            Self::GetCities => &["state"],
            Self::Calculator => &["expression"],
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::SearchFlights => "Flights from origin to destination departing on date.",
            Self::SearchAccommodations => "Accommodations in a city.",
            Self::SearchRestaurants => "Restaurants in a city.",
            Self::SearchAttractions => "Attractions in a city.",
            Self::SearchGroundTransportation => "Taxi and self-driving options between two cities.",
            Self::GetCities => "Cities in a state.",
            Self::Calculator => "Evaluates an arithmetic expression with + - * / and parentheses.",
        }
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tool {s:?}"))
    }
}

/// Tool listing appended to the system prompt, one JSON signature per line.
pub fn tools_listing() -> String {
    let mut out = String::from("# Tools\n<tools>\n");
    for tool in ToolName::ALL {
        let props: serde_json::Map<String, Value> = tool
            .required_args()
            .iter()
            .map(|a| (a.to_string(), json!({"type": "string"})))
            .collect();
        let sig = json!({
            "name": tool.as_str(),
            "description": tool.description(),
            "parameters": {"type": "object", "properties": props, "required": tool.required_args()},
        });
        out.push_str(&canonical(&sig));
        out.push('\n');
    }
    out.push_str("</tools>\n");
    out.push_str(
        "Call a tool with <tool_call>{\"name\": <tool-name>, \"arguments\": <args-json-object>}</tool_call>\n",
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: ToolName,
    pub arguments: BTreeMap<String, Value>,
    /// The full `<tool_call>` block as written.
    pub raw_text: String,
}

impl ToolCall {
    fn same_request(&self, other: &ToolCall) -> bool {
        self.name == other.name && self.arguments == other.arguments
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnKind {
    ToolCall { call: ToolCall, ignored_calls: usize },
    /// Inner text of the answer block, whitespace preserved.
    Answer(String),
    Plain,
    /// A tool-call block whose payload could not be understood.
    Malformed { raw_text: String, reason: String, ignored_calls: usize },
}

fn block<'a>(text: &'a str, from: usize, open: &str, close: &str) -> Option<(usize, &'a str, usize)> {
    let start = from + text[from..].find(open)?;
    let inner_start = start + open.len();
    let inner_len = text[inner_start..].find(close)?;
    Some((start, &text[inner_start..inner_start + inner_len], inner_start + inner_len + close.len()))
}

fn count_blocks(text: &str, mut from: usize) -> usize {
    let mut n = 0;
    while let Some((_, _, end)) = block(text, from, TOOL_CALL_OPEN, TOOL_CALL_CLOSE) {
        n += 1;
        from = end;
    }
    n
}

fn parse_call(inner: &str) -> Result<(ToolName, BTreeMap<String, Value>), String> {
    let value: Value = serde_json::from_str(inner.trim()).map_err(|e| format!("tool call is not valid JSON: {e}"))?;
    let Value::Object(mut obj) = value else {
        return Err("tool call must be a JSON object".into());
    };
    let name = match obj.remove("name") {
        Some(Value::String(n)) => n.parse::<ToolName>()?,
        Some(_) => return Err("tool call \"name\" must be a string".into()),
        None => return Err("tool call is missing \"name\"".into()),
    };
    let arguments = match obj.remove("arguments") {
        Some(Value::Object(m)) => m.into_iter().collect(),
        Some(Value::String(s)) => match serde_json::from_str::<Value>(&s) {
            Ok(Value::Object(m)) => m.into_iter().collect(),
            _ => return Err("tool call \"arguments\" must be a JSON object".into()),
        },
        None => BTreeMap::new(),
        Some(_) => return Err("tool call \"arguments\" must be a JSON object".into()),
    };
    if let Some(extra) = obj.keys().next() {
        return Err(format!("unexpected key {extra:?} in tool call"));
    }
    Ok((name, arguments))
}

/// Classifies an assistant turn. Total: never panics on any input.
pub fn parse_turn(text: &str) -> TurnKind {
    let call = block(text, 0, TOOL_CALL_OPEN, TOOL_CALL_CLOSE);
    let answer = block(text, 0, ANSWER_OPEN, ANSWER_CLOSE);
    match (call, answer) {
        (Some((cs, ..)), Some((as_, inner, _))) if as_ < cs => TurnKind::Answer(inner.to_string()),
        (None, Some((_, inner, _))) => TurnKind::Answer(inner.to_string()),
        (Some((start, inner, end)), _) => {
            let raw_text = text[start..end].to_string();
            let ignored_calls = count_blocks(text, end);
            match parse_call(inner) {
                Ok((name, arguments)) => TurnKind::ToolCall { call: ToolCall { name, arguments, raw_text }, ignored_calls },
                Err(reason) => TurnKind::Malformed { raw_text, reason, ignored_calls },
            }
        }
        (None, None) => TurnKind::Plain,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ToolResponse {
    pub fn rows(rows: Vec<Value>) -> Self {
        Self { ok: true, rows: Some(rows), error: None, truncated: false, duplicate_of: None, warning: None }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self { ok: false, rows: None, error: Some(message.into()), truncated: false, duplicate_of: None, warning: None }
    }

    pub fn with_ignored_calls(mut self, ignored: usize) -> Self {
        if ignored > 0 {
            self.warning = Some(format!("{ignored} additional tool call(s) ignored; call one tool per turn"));
        }
        self
    }

    /// Sorted-key JSON text.
    pub fn render(&self) -> String {
        canonical(self)
    }

    /// Renders and cuts to `cap` tokens, setting `truncated` when the full
    /// rendering was longer.
    pub fn render_capped(&mut self, cap: usize) -> String {
        let full = self.render();
        let (_, over) = truncate_right(&full, cap);
        if !over {
            return full;
        }
        self.truncated = true;
        let flagged = self.render();
        truncate_right(&flagged, cap).0.to_string()
    }
}

/// Keeps the first `cap` tokens of a response text.
pub fn truncate(text: &str, cap: usize) -> (String, bool) {
    let (kept, cut) = truncate_right(text, cap);
    (kept.to_string(), cut)
}

fn check_args(call: &ToolCall) -> Result<BTreeMap<&'static str, String>, String> {
    let required = call.name.required_args();
    for k in call.arguments.keys() {
        if !required.contains(&k.as_str()) {
            return Err(format!("{}: unknown argument {k:?}", call.name));
        }
    }
    let mut out = BTreeMap::new();
    for &arg in required {
        match call.arguments.get(arg) {
            None => return Err(format!("{}: missing required argument {arg:?}", call.name)),
            Some(Value::String(s)) => {
                out.insert(arg, s.clone());
            }
            Some(Value::Number(n)) if call.name == ToolName::Calculator => {
                out.insert(arg, n.to_string());
            }
            Some(_) => return Err(format!("{}: argument {arg:?} must be a string", call.name)),
        }
    }
    Ok(out)
}

fn to_rows<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<Value> {
    items.into_iter().map(|r| serde_json::to_value(r).expect("records serialize")).collect()
}

fn known_city<'a>(store: &'a SandboxStore, name: &str) -> Result<&'a str, String> {
    store.city(name).ok_or_else(|| format!("unknown city {name:?}"))
}

fn execute(store: &SandboxStore, call: &ToolCall) -> Result<Vec<Value>, String> {
    let args = check_args(call)?;
    let arg = |k: &str| args[k].as_str();
    Ok(match call.name {
        ToolName::SearchFlights => {
            let (o, d) = (known_city(store, arg("origin"))?, known_city(store, arg("destination"))?);
            let date = chrono::NaiveDate::parse_from_str(arg("date").trim(), "%Y-%m-%d")
                .map_err(|_| format!("search_flights: date {:?} is not YYYY-MM-DD", arg("date")))?;
            to_rows(store.flights_between(o, d, Some(date)))
        }
        ToolName::SearchAccommodations => to_rows(store.accommodations_in(known_city(store, arg("city"))?)),
        ToolName::SearchRestaurants => to_rows(store.restaurants_in(known_city(store, arg("city"))?)),
        ToolName::SearchAttractions => to_rows(store.attractions_in(known_city(store, arg("city"))?)),
        ToolName::SearchGroundTransportation => {
            let (o, d) = (known_city(store, arg("origin"))?, known_city(store, arg("destination"))?);
            match store.ground_between(o, d) {
                None => vec![],
                Some(g) => vec![json!({
                    "origin_city": o,
                    "destination_city": d,
                    "distance_km": g.distance_km,
                    "duration_min": g.duration_min,
                    "taxi_cost": g.taxi_cost,
                    "self_drive_cost": g.self_drive_cost,
                })],
            }
        }
        ToolName::GetCities => {
            let state = arg("state");
            let cities = store.cities_in_state(state).ok_or_else(|| format!("unknown state {state:?}"))?;
            cities.iter().map(|c| json!({"city": c, "state": store.state_of(c)})).collect()
        }
        ToolName::Calculator => {
            let expr = arg("expression");
            let value = calculate(expr).map_err(|e| format!("calculator: {e}"))?;
            vec![json!({"expression": expr, "result": value.to_string()})]
        }
    })
}

/// Executes `call` against `store`. `history` holds the earlier well-formed
/// calls of the same episode; a repeat is executed but flagged with the
/// index of its first occurrence.
pub fn dispatch(store: &SandboxStore, history: &[ToolCall], call: &ToolCall) -> ToolResponse {
    let mut response = match execute(store, call) {
        Ok(rows) => ToolResponse::rows(rows),
        Err(e) => ToolResponse::error(e),
    };
    response.duplicate_of = history.iter().position(|h| h.same_request(call));
    response
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{generate_sandbox, SizeProfile};

    fn store() -> SandboxStore {
        generate_sandbox(3, &SizeProfile::small()).unwrap()
    }

    fn call(text: &str) -> ToolCall {
        match parse_turn(text) {
            TurnKind::ToolCall { call, .. } => call,
            other => panic!("not a call: {other:?}"),
        }
    }

    #[test]
    fn turn_grammar() {
        let t = r#"<tool_call>{"name":"get_cities","arguments":{"state":"X"}}</tool_call>"#;
        assert!(matches!(parse_turn(t), TurnKind::ToolCall { call, ignored_calls: 0 } if call.name == ToolName::GetCities));
        assert_eq!(parse_turn("<answer>[]</answer>"), TurnKind::Answer("[]".into()));
        assert!(matches!(parse_turn("<tool_call>{not json</tool_call>"), TurnKind::Malformed { .. }));
        assert_eq!(parse_turn("thinking about it"), TurnKind::Plain);
        assert_eq!(parse_turn("<answer>unterminated"), TurnKind::Plain);
        assert_eq!(parse_turn("Here it is:\n<answer>\n [ ]\n</answer>"), TurnKind::Answer("\n [ ]\n".into()));
    }

    #[test]
    fn earliest_block_wins() {
        let call_first = format!("{t}<answer>[]</answer>", t = r#"<tool_call>{"name":"calculator","arguments":{"expression":"1"}}</tool_call>"#);
        assert!(matches!(parse_turn(&call_first), TurnKind::ToolCall { .. }));
        let answer_first = format!("<answer>[]</answer>{}", r#"<tool_call>{"name":"calculator","arguments":{"expression":"1"}}</tool_call>"#);
        assert_eq!(parse_turn(&answer_first), TurnKind::Answer("[]".into()));
    }

    #[test]
    fn extra_calls_are_ignored_with_warning() {
        let c = r#"<tool_call>{"name":"calculator","arguments":{"expression":"1+1"}}</tool_call>"#;
        let text = format!("{c}{c}{c}");
        let TurnKind::ToolCall { call, ignored_calls } = parse_turn(&text) else { panic!() };
        assert_eq!(ignored_calls, 2);
        let r = dispatch(&store(), &[], &call).with_ignored_calls(ignored_calls);
        assert!(r.warning.unwrap().contains("2 additional"));
    }

    #[test]
    fn unknown_tool_is_malformed() {
        let t = r#"<tool_call>{"name":"book_hotel","arguments":{}}</tool_call>"#;
        let TurnKind::Malformed { reason, .. } = parse_turn(t) else { panic!() };
        assert!(reason.contains("book_hotel"));
    }

    #[test]
    fn get_cities_filters_by_state() {
        let s = store();
        let (state, cities) = s.cities().states.iter().next().unwrap();
        let c = call(&format!(r#"<tool_call>{{"name":"get_cities","arguments":{{"state":"{state}"}}}}</tool_call>"#));
        let r = dispatch(&s, &[], &c);
        let names: Vec<_> = r.rows.unwrap().iter().map(|v| v["city"].as_str().unwrap().to_string()).collect();
        assert_eq!(&names, cities);
    }

    #[test]
    fn missing_and_unknown_arguments() {
        let s = store();
        let c = call(r#"<tool_call>{"name":"search_flights","arguments":{"origin":"a","date":"2022-03-01"}}</tool_call>"#);
        let r = dispatch(&s, &[], &c);
        assert!(!r.ok && r.rows.is_none());
        assert!(r.error.unwrap().contains("\"destination\""));
        let c = call(r#"<tool_call>{"name":"search_restaurants","arguments":{"city":"a","price":"low"}}</tool_call>"#);
        assert!(dispatch(&s, &[], &c).error.unwrap().contains("unknown argument"));
    }

    #[test]
    fn repeats_are_flagged_and_still_answered() {
        let s = store();
        let city = s.accommodations()[0].city.clone();
        let c = call(&format!(r#"<tool_call>{{"name":"search_accommodations","arguments":{{"city":"{city}"}}}}</tool_call>"#));
        let other = call(r#"<tool_call>{"name":"calculator","arguments":{"expression":"2"}}</tool_call>"#);
        let first = dispatch(&s, &[], &c);
        let history = vec![other.clone(), c.clone()];
        let again = dispatch(&s, &history, &c);
        assert_eq!(first.duplicate_of, None);
        assert_eq!(again.duplicate_of, Some(1));
        assert_eq!(again.rows, first.rows);
    }

    #[test]
    fn rendering_is_sorted_and_capped() {
        let r = ToolResponse::rows(vec![json!({"b": 1, "a": 2})]);
        assert_eq!(r.render(), r#"{"ok":true,"rows":[{"a":2,"b":1}],"truncated":false}"#);
        let mut big = ToolResponse::rows((0..2000).map(|i| json!({"n": i})).collect());
        let text = big.render_capped(8192);
        assert!(big.truncated);
        assert_eq!(crate::tokens::count_tokens(&text), 8192);
        assert!(text.starts_with(r#"{"ok":true"#));
    }

    #[test]
    fn truncate_boundaries() {
        let ten = "a b c d e f g h i j";
        assert_eq!(truncate(ten, 8192), (ten.to_string(), false));
        assert_eq!(truncate(ten, 1), ("a".to_string(), true));
        let long = vec!["w"; 9000].join(" ");
        let (kept, cut) = truncate(&long, 8192);
        assert!(cut);
        assert_eq!(crate::tokens::count_tokens(&kept), 8192);
    }

    #[test]
    fn calculator_tool() {
        let s = store();
        let c = call(r#"<tool_call>{"name":"calculator","arguments":{"expression":"(120+95)*3"}}</tool_call>"#);
        assert_eq!(dispatch(&s, &[], &c).rows.unwrap()[0]["result"], "645");
        let c = call(r#"<tool_call>{"name":"calculator","arguments":{"expression":"1/0"}}</tool_call>"#);
        assert_eq!(dispatch(&s, &[], &c).error.unwrap(), "calculator: division by zero");
    }

    #[test]
    fn dispatch_is_pure() {
        let s = store();
        let f = &s.flights()[0];
        let c = call(&format!(
            r#"<tool_call>{{"name":"search_flights","arguments":{{"origin":"{}","destination":"{}","date":"{}"}}}}</tool_call>"#,
            f.origin_city, f.destination_city, f.date
        ));
        let a = dispatch(&s, &[], &c).render();
        assert_eq!(a, dispatch(&s, &[], &c).render());
        assert!(a.contains(&f.flight_number));
    }

    #[test]
    fn listing_names_every_tool() {
        let l = tools_listing();
        for t in ToolName::ALL {
            assert!(l.contains(&format!("\"name\":\"{t}\"")));
        }
    }
}
