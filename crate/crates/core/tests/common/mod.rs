//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the library's validation, constraint or reward code:
//! plans, stores and queries are inspected as raw `serde_json::Value`s.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

// ---------------------------------------------------------------- schema

/// Minimal JSON-Schema interpreter covering the keywords the day schema
/// uses: type, required, properties, additionalProperties, oneOf, const,
/// enum, items, minItems.
pub fn schema_accepts(schema: &Value, v: &Value) -> bool {
    let s = schema.as_object().expect("schema object");
    if let Some(t) = s.get("type").and_then(Value::as_str) {
        let ok = match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "integer" => v.is_i64() || v.is_u64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            other => panic!("unsupported type {other}"),
        };
        if !ok {
            return false;
        }
    }
    if let Some(c) = s.get("const") {
        if v != c {
            return false;
        }
    }
    if let Some(e) = s.get("enum").and_then(Value::as_array) {
        if !e.contains(v) {
            return false;
        }
    }
    if let Some(obj) = v.as_object() {
        if let Some(req) = s.get("required").and_then(Value::as_array) {
            if req.iter().any(|k| !obj.contains_key(k.as_str().unwrap())) {
                return false;
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, val) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => {
                    if !schema_accepts(sub, val) {
                        return false;
                    }
                }
                None => {
                    if s.get("additionalProperties") == Some(&Value::Bool(false)) {
                        return false;
                    }
                }
            }
        }
    }
    if let Some(arr) = v.as_array() {
        if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < min {
                return false;
            }
        }
        if let Some(items) = s.get("items") {
            if arr.iter().any(|x| !schema_accepts(items, x)) {
                return false;
            }
        }
    }
    if let Some(alts) = s.get("oneOf").and_then(Value::as_array) {
        if alts.iter().filter(|a| schema_accepts(a, v)).count() != 1 {
            return false;
        }
    }
    true
}

/// A plan is an array of days, each matching the day schema.
pub fn plan_accepted(day_schema: &Value, plan: &Value) -> bool {
    plan.as_array().is_some_and(|days| days.iter().all(|d| schema_accepts(day_schema, d)))
}

pub fn day_schema() -> Value {
    serde_json::from_str(include_str!("../../assets/plan_schema.v1.json")).unwrap()
}

// ------------------------------------------------------------ constraints

fn lc(s: &str) -> String {
    s.trim().to_lowercase()
}

fn none(v: &Value) -> bool {
    v.as_str().is_some_and(|s| s.trim() == "-")
}

fn text(v: &Value, k: &str) -> String {
    v[k].as_str().unwrap_or_default().to_string()
}

fn num(v: &Value, k: &str) -> u64 {
    v[k].as_u64().unwrap_or_else(|| panic!("{k} missing in {v}"))
}

/// Raw view of a serialized store.
pub struct RawStore {
    pub city_state: BTreeMap<String, String>,
    pub flights: Vec<Value>,
    pub lodging: Vec<Value>,
    pub restaurants: Vec<Value>,
    pub attractions: Vec<Value>,
    pub ground: Vec<Value>,
}

impl RawStore {
    pub fn new(v: &Value) -> Self {
        let mut city_state = BTreeMap::new();
        for (state, cities) in v["cities"]["states"].as_object().unwrap() {
            for c in cities.as_array().unwrap() {
                city_state.insert(lc(c.as_str().unwrap()), lc(state));
            }
        }
        let list = |k: &str| v[k].as_array().unwrap().clone();
        Self {
            city_state,
            flights: list("flights"),
            lodging: list("accommodations"),
            restaurants: list("restaurants"),
            attractions: list("attractions"),
            ground: list("ground"),
        }
    }

    pub fn cities(&self) -> Vec<String> {
        self.city_state.keys().cloned().collect()
    }

    fn is_city(&self, c: &str) -> bool {
        self.city_state.contains_key(&lc(c))
    }

    fn named<'a>(list: &'a [Value], name: &str) -> Vec<&'a Value> {
        list.iter().filter(|r| lc(&text(r, "name")) == lc(name)).collect()
    }

    fn prefer<'a>(found: Vec<&'a Value>, cities: &[String]) -> Option<&'a Value> {
        found.iter().find(|r| cities.contains(&lc(&text(r, "city")))).or(found.first()).copied()
    }

    fn flight(&self, number: &str, from: &str, to: &str) -> Option<&Value> {
        self.flights.iter().find(|f| {
            lc(&text(f, "flight_number")) == lc(number)
                && lc(&text(f, "origin_city")) == lc(from)
                && lc(&text(f, "destination_city")) == lc(to)
        })
    }

    /// Ground routes are undirected.
    fn route(&self, from: &str, to: &str) -> Option<&Value> {
        self.ground.iter().find(|g| {
            let (a, b) = (lc(&text(g, "origin_city")), lc(&text(g, "destination_city")));
            (a == lc(from) && b == lc(to)) || (a == lc(to) && b == lc(from))
        })
    }
}

struct Day<'a> {
    raw: &'a Value,
    from: String,
    to: String,
    transfer: bool,
}

impl<'a> Day<'a> {
    fn new(raw: &'a Value) -> Self {
        match &raw["city"] {
            Value::String(c) => Self { raw, from: c.clone(), to: c.clone(), transfer: false },
            obj => Self { raw, from: text(obj, "from"), to: text(obj, "to"), transfer: true },
        }
    }

    fn cities(&self) -> Vec<String> {
        let mut v = vec![lc(&self.from)];
        if self.transfer {
            v.push(lc(&self.to));
        }
        v
    }

    fn leg(&self) -> Option<&'a Value> {
        let t = &self.raw["transportation"];
        t.is_object().then_some(t)
    }

    fn stay(&self) -> Option<String> {
        let a = &self.raw["accommodation"];
        (!none(a)).then(|| a.as_str().unwrap().to_string())
    }

    fn meals(&self) -> Vec<String> {
        ["breakfast", "lunch", "dinner"]
            .iter()
            .map(|k| &self.raw[*k])
            .filter(|v| !none(v))
            .map(|v| v.as_str().unwrap().to_string())
            .collect()
    }

    fn sights(&self) -> Vec<String> {
        self.raw["attraction"].as_array().map(|a| a.iter().map(|x| x.as_str().unwrap().to_string()).collect()).unwrap_or_default()
    }
}

/// Pass/fail per constraint id for a schema-valid plan.
pub struct Verdicts {
    pub commonsense: BTreeMap<String, bool>,
    pub hard: BTreeMap<String, bool>,
}

pub fn judge(store: &RawStore, query: &Value, plan: &Value) -> Verdicts {
    let days: Vec<Day> = plan.as_array().unwrap().iter().map(Day::new).collect();
    let party = num(query, "party_size");
    let origin = lc(&text(query, "origin_city"));

    let mut cs = BTreeMap::new();

    // within_sandbox
    let mut ok = true;
    for d in &days {
        ok &= store.is_city(&d.from) && store.is_city(&d.to);
        if let Some(leg) = d.leg() {
            let (f, t) = (text(leg, "from"), text(leg, "to"));
            ok &= store.is_city(&f) && store.is_city(&t);
            if text(leg, "mode") == "flight" {
                ok &= leg["flight_number"].as_str().is_some_and(|n| store.flight(n, &f, &t).is_some());
            } else if store.is_city(&f) && store.is_city(&t) {
                ok &= store.route(&f, &t).is_some();
            }
        }
        ok &= d.sights().iter().all(|n| !RawStore::named(&store.attractions, n).is_empty());
        ok &= d.stay().is_none_or(|n| !RawStore::named(&store.lodging, &n).is_empty());
        ok &= d.meals().iter().all(|n| !RawStore::named(&store.restaurants, n).is_empty());
    }
    cs.insert("within_sandbox".to_string(), ok);

    // complete_information
    let mut ok = !days.is_empty();
    for (i, d) in days.iter().enumerate() {
        ok &= !(d.transfer && d.leg().is_none());
        ok &= i + 1 == days.len() || d.stay().is_some();
        ok &= d.raw["days"].as_i64() == Some(i as i64 + 1);
    }
    cs.insert("complete_information".to_string(), ok);

    // within_current_city
    let mut ok = true;
    for d in &days {
        let here = d.cities();
        let inside = |list: &[Value], n: &str, allowed: &[String]| {
            let found = RawStore::named(list, n);
            found.is_empty() || found.iter().any(|r| allowed.contains(&lc(&text(r, "city"))))
        };
        ok &= d.meals().iter().all(|n| inside(&store.restaurants, n, &here));
        ok &= d.sights().iter().all(|n| inside(&store.attractions, n, &here));
        ok &= d.stay().is_none_or(|n| inside(&store.lodging, &n, &[lc(&d.to)]));
    }
    cs.insert("within_current_city".to_string(), ok);

    // reasonable_city_route
    let mut ok = !days.is_empty();
    if let (Some(first), Some(last)) = (days.first(), days.last()) {
        ok &= first.transfer && lc(&first.from) == origin;
        ok &= last.transfer && lc(&last.to) == origin;
    }
    for w in days.windows(2) {
        ok &= lc(&w[0].to) == lc(&w[1].from);
    }
    for d in &days {
        if let Some(leg) = d.leg() {
            ok &= d.transfer && lc(&text(leg, "from")) == lc(&d.from) && lc(&text(leg, "to")) == lc(&d.to);
        }
    }
    let stops: Vec<String> = days.iter().filter(|d| d.transfer).map(|d| lc(&d.to)).collect();
    let mut seen = BTreeSet::new();
    for s in stops.iter().take(stops.len().saturating_sub(1)) {
        ok &= *s != origin && seen.insert(s.clone());
        ok &= match &query["destination"] {
            Value::Object(o) if o.contains_key("city") => lc(o["city"].as_str().unwrap()) == *s,
            Value::Object(o) => store.city_state.get(s) == Some(&lc(o["state"].as_str().unwrap())),
            other => panic!("destination {other}"),
        };
    }
    cs.insert("reasonable_city_route".to_string(), ok);

    let distinct = |names: Vec<String>| {
        let n = names.len();
        names.into_iter().map(|x| lc(&x)).collect::<BTreeSet<_>>().len() == n
    };
    cs.insert("diverse_restaurants".to_string(), distinct(days.iter().flat_map(|d| d.meals()).collect()));
    cs.insert("diverse_attractions".to_string(), distinct(days.iter().flat_map(|d| d.sights()).collect()));

    let modes: BTreeSet<String> = days.iter().filter_map(|d| d.leg()).map(|l| text(l, "mode")).collect();
    cs.insert(
        "non_conflicting_transportation".to_string(),
        !(modes.contains("flight") && modes.contains("self-driving")),
    );

    // minimum_nights: runs of the same accommodation on consecutive days
    let mut ok = true;
    let mut i = 0;
    while i < days.len() {
        let Some(name) = days[i].stay() else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < days.len() && days[j].stay().is_some_and(|n| lc(&n) == lc(&name)) {
            j += 1;
        }
        if let Some(r) = RawStore::prefer(RawStore::named(&store.lodging, &name), &[lc(&days[i].to)]) {
            ok &= (j - i) as u64 >= num(r, "minimum_nights");
        }
        i = j;
    }
    cs.insert("minimum_nights".to_string(), ok);

    // hard
    let lodging_of = |d: &Day| d.stay().map(|n| RawStore::prefer(RawStore::named(&store.lodging, &n), &[lc(&d.to)]));
    let restaurant_of = |d: &Day, n: &str| RawStore::prefer(RawStore::named(&store.restaurants, n), &d.cities());
    let mut hard = BTreeMap::new();
    for c in query["hard_constraints"].as_array().unwrap() {
        let kind = text(c, "kind");
        let verdict = match kind.as_str() {
            "budget" => {
                let mut total = 0u64;
                let mut unresolved = false;
                for d in &days {
                    if let Some(leg) = d.leg() {
                        let (f, t) = (text(leg, "from"), text(leg, "to"));
                        match text(leg, "mode").as_str() {
                            "flight" => match leg["flight_number"].as_str().and_then(|n| store.flight(n, &f, &t)) {
                                Some(fl) => total += num(fl, "price") * party,
                                None => unresolved = true,
                            },
                            m => match store.route(&f, &t) {
                                Some(g) => {
                                    let (cost, cap) =
                                        if m == "taxi" { (num(g, "taxi_cost"), 4) } else { (num(g, "self_drive_cost"), 5) };
                                    total += cost * party.div_ceil(cap);
                                }
                                None => unresolved = true,
                            },
                        }
                    }
                    match lodging_of(d) {
                        Some(Some(a)) => total += num(a, "price_per_night") * party.div_ceil(num(a, "max_occupancy")),
                        Some(None) => unresolved = true,
                        None => {}
                    }
                    for m in d.meals() {
                        match restaurant_of(d, &m) {
                            Some(r) => total += num(r, "average_cost") * party,
                            None => unresolved = true,
                        }
                    }
                }
                !unresolved && total <= num(c, "amount")
            }
            "room_rule" => {
                // Records list prohibitions as `no_<activity>`.
                let rule = format!("no_{}", text(c, "rule"));
                days.iter().filter_map(&lodging_of).all(|a| {
                    a.is_some_and(|a| !a["house_rules"].as_array().unwrap().iter().any(|r| r.as_str() == Some(&rule)))
                })
            }
            "room_type" => {
                let want = text(c, "room_type");
                days.iter().filter_map(&lodging_of).all(|a| a.is_some_and(|a| text(a, "room_type") == want))
            }
            "cuisines" => {
                let mut served = BTreeSet::new();
                for d in &days {
                    for m in d.meals() {
                        if let Some(r) = restaurant_of(d, &m) {
                            served.extend(r["cuisines"].as_array().unwrap().iter().map(|x| lc(x.as_str().unwrap())));
                        }
                    }
                }
                c["cuisines"].as_array().unwrap().iter().all(|w| served.contains(&lc(w.as_str().unwrap())))
            }
            "transport_exclusions" => c["modes"].as_array().unwrap().iter().all(|m| !modes.contains(m.as_str().unwrap())),
            "dates" => {
                let dep = chrono::NaiveDate::parse_from_str(&text(query, "departure_date"), "%Y-%m-%d").unwrap();
                let mut ok = days.len() as u64 == num(query, "trip_days");
                ok &= days.first().is_some_and(|d| d.leg().is_some());
                ok &= days.len() >= 2 && days.last().is_some_and(|d| d.leg().is_some());
                for (i, d) in days.iter().enumerate() {
                    let Some(leg) = d.leg() else { continue };
                    if text(leg, "mode") != "flight" {
                        continue;
                    }
                    let want = (dep + chrono::Days::new(i as u64)).to_string();
                    ok &= leg["flight_number"]
                        .as_str()
                        .and_then(|n| store.flight(n, &text(leg, "from"), &text(leg, "to")))
                        .is_some_and(|f| text(f, "date") == want);
                }
                ok
            }
            other => panic!("unknown hard constraint {other}"),
        };
        hard.insert(kind, verdict);
    }
    Verdicts { commonsense: cs, hard }
}

// ------------------------------------------------------------ enumeration

fn day(n: i64, city: Value, transportation: Value, attraction: Value, stay: &str, meals: [&str; 3]) -> Value {
    json!({
        "days": n,
        "city": city,
        "transportation": transportation,
        "attraction": attraction,
        "accommodation": stay,
        "breakfast": meals[0],
        "lunch": meals[1],
        "dinner": meals[2],
    })
}

/// Candidate legs between two cities: a flight on the travel date, a
/// flight on another date, a made-up flight, taxi and self-driving.
fn legs(store: &RawStore, from: &str, to: &str, date: &str) -> Vec<Value> {
    let flights: Vec<&Value> = store
        .flights
        .iter()
        .filter(|f| lc(&text(f, "origin_city")) == lc(from) && lc(&text(f, "destination_city")) == lc(to))
        .collect();
    let flight = |f: Option<&Value>, number: &str| {
        json!({
            "mode": "flight", "from": from, "to": to, "duration": "1h", "distance": "1 km",
            "cost": f.map(|f| num(f, "price")).unwrap_or(0),
            "flight_number": f.map(|f| text(f, "flight_number")).unwrap_or_else(|| number.to_string()),
        })
    };
    let ground = |mode: &str| {
        json!({"mode": mode, "from": from, "to": to, "duration": "1h", "distance": "1 km", "cost": 0})
    };
    vec![
        flight(flights.iter().find(|f| text(f, "date") == date).copied(), "XX000"),
        flight(flights.iter().find(|f| text(f, "date") != date).copied(), "XX001"),
        flight(None, "ZZ999"),
        ground("taxi"),
        ground("self-driving"),
    ]
}

/// Every 3-day out-and-back plan over the micro store's choices.
pub fn enumerate_plans(store: &RawStore, query: &Value, city_names: &[String]) -> Vec<Value> {
    let origin = text(query, "origin_city");
    let dep = chrono::NaiveDate::parse_from_str(&text(query, "departure_date"), "%Y-%m-%d").unwrap();
    let ret = (dep + chrono::Days::new(2)).to_string();
    let dep = dep.to_string();
    let names = |list: &[Value]| {
        let mut v: Vec<String> = list.iter().map(|r| text(r, "name")).collect();
        v.push("-".into());
        v
    };
    let stays = names(&store.lodging);
    let meals = names(&store.restaurants);
    let mut sights: Vec<Value> = store.attractions.iter().map(|a| json!([text(a, "name")])).collect();
    sights.push(json!(["Ghost Tower"]));
    sights.push(json!("-"));

    let mut out = Vec::new();
    for dest in city_names {
        let outbound = legs(store, &origin, dest, &dep);
        let inbound = legs(store, dest, &origin, &ret);
        for o in &outbound {
            for b in &inbound {
                for s1 in &stays {
                    for s2 in &stays {
                        for m1 in &meals {
                            for m2 in &meals {
                                for sight in &sights {
                                    out.push(json!([
                                        day(1, json!({"from": origin, "to": dest}), o.clone(), json!("-"), s1, ["-", "-", m1]),
                                        day(2, json!(dest), json!("-"), sight.clone(), s2, ["-", m2, "-"]),
                                        day(3, json!({"from": dest, "to": origin}), b.clone(), json!("-"), "-", ["-", "-", "-"]),
                                    ]));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- reward

/// Exact fraction over i128, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frac(pub i128, pub i128);

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    pub fn new(n: i128, d: i128) -> Self {
        assert!(d != 0);
        let g = gcd(n, d).max(1);
        let s = if d < 0 { -1 } else { 1 };
        Frac(s * n / g, s * d / g)
    }
    pub fn add(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    pub fn mul(self, o: Frac) -> Frac {
        Frac::new(self.0 * o.0, self.1 * o.1)
    }
}

/// The shaped reward written out term by term.
pub fn shaped_reward(schema_ok: bool, s_cs: u32, n_cs: u32, s_hard: u32, n_hard: u32, lambda: [Frac; 5]) -> [Frac; 7] {
    let zero = Frac(0, 1);
    let one = Frac(1, 1);
    if !schema_ok {
        return [zero; 7];
    }
    let cs_micro = Frac::new(s_cs.into(), n_cs.into());
    let hard_micro = if n_hard == 0 { one } else { Frac::new(s_hard.into(), n_hard.into()) };
    let cs_macro = if s_cs == n_cs { one } else { zero };
    let hard_macro = if s_hard == n_hard { one } else { zero };
    let pass = if s_cs == n_cs && s_hard == n_hard { one } else { zero };
    let terms = [cs_micro, hard_micro, cs_macro, hard_macro, pass];
    let total = terms.iter().zip(lambda).fold(zero, |acc, (t, l)| acc.add(t.mul(l)));
    [one, cs_micro, hard_micro, cs_macro, hard_macro, pass, total]
}

pub mod script;
