//! Commonsense and hard constraint evaluation.
//!
//! The registry is fixed and versioned: eight commonsense checks always run,
//! hard checks run only for the constraints a query carries. Results are
//! listed in registry order so reports from different runs line up.
//!
//! Names are matched case-insensitively and exactly. A name that cannot be
//! resolved in the store fails `within_sandbox`; checks that need a record's
//! attributes (price, house rules, cuisines) fail when the record is missing.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::plan::{structural_violations, DayPlan, ItineraryPlan};
use crate::sandbox::{
    key, AccommodationRecord, FlightRecord, HardConstraint, QuerySpec, RestaurantRecord,
    SandboxStore, TransportMode,
};

pub const REGISTRY_VERSION: &str = "2024.1";

pub const COMMONSENSE_IDS: [&str; 8] = [
    "within_sandbox",
    "complete_information",
    "within_current_city",
    "reasonable_city_route",
    "diverse_restaurants",
    "diverse_attractions",
    "non_conflicting_transportation",
    "minimum_nights",
];

pub const HARD_IDS: [&str; 6] = ["budget", "room_rule", "room_type", "cuisines", "transport_exclusions", "dates"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Commonsense,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintResult {
    pub constraint_id: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub category: Category,
    pub registry_version: String,
    pub plan_digest: String,
    pub results: Vec<ConstraintResult>,
    /// Number of satisfied constraints.
    pub passed: u32,
    /// Number of evaluated constraints.
    pub total: u32,
}

impl ConstraintReport {
    fn new(category: Category, plan: &ItineraryPlan, results: Vec<ConstraintResult>) -> Self {
        let passed = results.iter().filter(|r| r.passed).count() as u32;
        let total = results.len() as u32;
        Self {
            category,
            registry_version: REGISTRY_VERSION.to_string(),
            plan_digest: plan.digest(),
            results,
            passed,
            total,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }

    pub fn failed_ids(&self) -> impl Iterator<Item = &str> {
        self.results.iter().filter(|r| !r.passed).map(|r| r.constraint_id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&ConstraintResult> {
        self.results.iter().find(|r| r.constraint_id == id)
    }
}

fn outcome(id: &str, problems: Vec<String>) -> ConstraintResult {
    ConstraintResult {
        constraint_id: id.to_string(),
        passed: problems.is_empty(),
        detail: if problems.is_empty() { "ok".to_string() } else { problems.join("; ") },
    }
}

/// A name in the plan that does not exist in its record class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hallucination {
    pub field_path: String,
    pub unknown_name: String,
}

fn flight_for<'a>(store: &'a SandboxStore, number: &str, from: &str, to: &str) -> Option<&'a FlightRecord> {
    store
        .flights_named(number)
        .find(|f| key(&f.origin_city) == key(from) && key(&f.destination_city) == key(to))
}

/// Accommodation by name, preferring a listing in `city`.
fn lodging_for<'a>(store: &'a SandboxStore, name: &str, city: &str) -> Option<&'a AccommodationRecord> {
    let mut found = store.accommodations_named(name).peekable();
    let first = found.peek().copied();
    found.find(|a| key(&a.city) == key(city)).or(first)
}

fn restaurant_for<'a>(store: &'a SandboxStore, name: &str, cities: &[&str]) -> Option<&'a RestaurantRecord> {
    let mut found = store.restaurants_named(name).peekable();
    let first = found.peek().copied();
    found.find(|r| cities.iter().any(|c| key(c) == key(&r.city))).or(first)
}

/// Every name in the plan checked against its record class.
pub fn classify_hallucinations(plan: &ItineraryPlan, store: &SandboxStore) -> Vec<Hallucination> {
    let mut out = Vec::new();
    let mut miss = |path: String, name: &str| {
        out.push(Hallucination { field_path: path, unknown_name: name.to_string() })
    };
    for (i, day) in plan.days.iter().enumerate() {
        match &day.city {
            crate::plan::DayCity::Stay(c) => {
                if store.city(c).is_none() {
                    miss(format!("[{i}].city"), c);
                }
            }
            crate::plan::DayCity::Transfer { from, to } => {
                if store.city(from).is_none() {
                    miss(format!("[{i}].city.from"), from);
                }
                if store.city(to).is_none() {
                    miss(format!("[{i}].city.to"), to);
                }
            }
        }
        if let Some(leg) = day.transportation.leg() {
            for (field, city) in [("from", &leg.from), ("to", &leg.to)] {
                if store.city(city).is_none() {
                    miss(format!("[{i}].transportation.{field}"), city);
                }
            }
            match leg.mode {
                TransportMode::Flight => match &leg.flight_number {
                    None => miss(format!("[{i}].transportation.flight_number"), "<missing>"),
                    Some(n) if flight_for(store, n, &leg.from, &leg.to).is_none() => {
                        miss(format!("[{i}].transportation.flight_number"), n)
                    }
                    Some(_) => {}
                },
                _ => {
                    if store.city(&leg.from).is_some()
                        && store.city(&leg.to).is_some()
                        && store.ground_between(&leg.from, &leg.to).is_none()
                    {
                        miss(format!("[{i}].transportation"), &format!("{} -> {}", leg.from, leg.to));
                    }
                }
            }
        }
        for (j, name) in day.attraction.names().iter().enumerate() {
            if store.attractions_named(name).next().is_none() {
                miss(format!("[{i}].attraction[{j}]"), name);
            }
        }
        if let Some(name) = day.accommodation() {
            if store.accommodations_named(name).next().is_none() {
                miss(format!("[{i}].accommodation"), name);
            }
        }
        for (slot, name) in day.meals() {
            if store.restaurants_named(name).next().is_none() {
                miss(format!("[{i}].{slot}"), name);
            }
        }
    }
    out
}

/// Evaluates the eight commonsense checks.
pub fn eval_commonsense(plan: &ItineraryPlan, store: &SandboxStore, query: &QuerySpec) -> ConstraintReport {
    let results = vec![
        within_sandbox(plan, store),
        complete_information(plan),
        within_current_city(plan, store),
        reasonable_city_route(plan, store, query),
        diverse_restaurants(plan),
        diverse_attractions(plan),
        non_conflicting_transportation(plan),
        minimum_nights(plan, store),
    ];
    ConstraintReport::new(Category::Commonsense, plan, results)
}

fn within_sandbox(plan: &ItineraryPlan, store: &SandboxStore) -> ConstraintResult {
    let problems = classify_hallucinations(plan, store)
        .into_iter()
        .map(|h| format!("{} unknown at {}", h.unknown_name, h.field_path))
        .collect();
    outcome("within_sandbox", problems)
}

fn complete_information(plan: &ItineraryPlan) -> ConstraintResult {
    let mut problems = Vec::new();
    if plan.days.is_empty() {
        problems.push("plan has no days".to_string());
    }
    let last = plan.days.len().saturating_sub(1);
    for (i, day) in plan.days.iter().enumerate() {
        if day.city.is_transfer() && day.transportation.leg().is_none() {
            problems.push(format!("day {} changes city without transportation", i + 1));
        }
        if i < last && day.accommodation().is_none() {
            problems.push(format!("day {} has no accommodation", i + 1));
        }
    }
    for v in structural_violations(plan) {
        problems.push(v.reason);
    }
    outcome("complete_information", problems)
}

fn within_current_city(plan: &ItineraryPlan, store: &SandboxStore) -> ConstraintResult {
    let mut problems = Vec::new();
    for (i, day) in plan.days.iter().enumerate() {
        let here = day.city.names();
        let is_here = |city: &str| here.iter().any(|c| key(c) == key(city));
        for (slot, name) in day.meals() {
            let found: Vec<_> = store.restaurants_named(name).collect();
            if !found.is_empty() && !found.iter().any(|r| is_here(&r.city)) {
                problems.push(format!("day {} {slot} {name} is not in {}", i + 1, here.join("/")));
            }
        }
        for name in day.attraction.names() {
            let found: Vec<_> = store.attractions_named(name).collect();
            if !found.is_empty() && !found.iter().any(|a| is_here(&a.city)) {
                problems.push(format!("day {} attraction {name} is not in {}", i + 1, here.join("/")));
            }
        }
        if let Some(name) = day.accommodation() {
            let found: Vec<_> = store.accommodations_named(name).collect();
            if !found.is_empty() && !found.iter().any(|a| key(&a.city) == key(day.city.end())) {
                problems.push(format!("day {} accommodation {name} is not in {}", i + 1, day.city.end()));
            }
        }
    }
    outcome("within_current_city", problems)
}

fn reasonable_city_route(plan: &ItineraryPlan, store: &SandboxStore, query: &QuerySpec) -> ConstraintResult {
    let mut problems = Vec::new();
    let origin = key(&query.origin_city);
    let (Some(first), Some(last)) = (plan.days.first(), plan.days.last()) else {
        return outcome("reasonable_city_route", vec!["plan has no days".into()]);
    };
    if !first.city.is_transfer() || key(first.city.start()) != origin {
        problems.push(format!("trip does not start by leaving {}", query.origin_city));
    }
    if !last.city.is_transfer() || key(last.city.end()) != origin {
        problems.push(format!("trip does not return to {}", query.origin_city));
    }
    for (i, pair) in plan.days.windows(2).enumerate() {
        if key(pair[0].city.end()) != key(pair[1].city.start()) {
            problems.push(format!(
                "day {} ends in {} but day {} starts in {}",
                i + 1,
                pair[0].city.end(),
                i + 2,
                pair[1].city.start()
            ));
        }
    }
    for (i, day) in plan.days.iter().enumerate() {
        if let Some(leg) = day.transportation.leg() {
            let matches = day.city.is_transfer()
                && key(&leg.from) == key(day.city.start())
                && key(&leg.to) == key(day.city.end());
            if !matches {
                problems.push(format!("day {} transportation does not match its city change", i + 1));
            }
        }
    }
    let mut visited = HashSet::new();
    let transfers: Vec<&DayPlan> = plan.days.iter().filter(|d| d.city.is_transfer()).collect();
    for day in transfers.iter().take(transfers.len().saturating_sub(1)) {
        let stop = day.city.end();
        if key(stop) == origin {
            problems.push(format!("returns to {} before the end of the trip", query.origin_city));
        } else if !visited.insert(key(stop)) {
            problems.push(format!("{stop} visited twice"));
        } else if !query.admits_destination(store, stop) {
            problems.push(format!("{stop} is not part of the requested destination"));
        }
    }
    outcome("reasonable_city_route", problems)
}

fn diverse_restaurants(plan: &ItineraryPlan) -> ConstraintResult {
    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for day in &plan.days {
        for (_, name) in day.meals() {
            if !seen.insert(key(name)) {
                problems.push(format!("{name} chosen more than once"));
            }
        }
    }
    outcome("diverse_restaurants", problems)
}

fn diverse_attractions(plan: &ItineraryPlan) -> ConstraintResult {
    let mut seen = HashSet::new();
    let mut problems = Vec::new();
    for day in &plan.days {
        for name in day.attraction.names() {
            if !seen.insert(key(name)) {
                problems.push(format!("{name} visited more than once"));
            }
        }
    }
    outcome("diverse_attractions", problems)
}

fn modes_used(plan: &ItineraryPlan) -> BTreeSet<TransportMode> {
    plan.days.iter().filter_map(|d| d.transportation.leg()).map(|l| l.mode).collect()
}

fn non_conflicting_transportation(plan: &ItineraryPlan) -> ConstraintResult {
    let modes = modes_used(plan);
    let problems = if modes.contains(&TransportMode::Flight) && modes.contains(&TransportMode::SelfDriving) {
        vec!["flight and self-driving mixed in one trip".to_string()]
    } else {
        vec![]
    };
    outcome("non_conflicting_transportation", problems)
}

fn minimum_nights(plan: &ItineraryPlan, store: &SandboxStore) -> ConstraintResult {
    let mut problems = Vec::new();
    let mut i = 0;
    while i < plan.days.len() {
        let Some(name) = plan.days[i].accommodation() else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < plan.days.len() && plan.days[j].accommodation().is_some_and(|n| key(n) == key(name)) {
            j += 1;
        }
        let nights = (j - i) as u32;
        if let Some(record) = lodging_for(store, name, plan.days[i].city.end()) {
            if nights < record.minimum_nights {
                problems.push(format!(
                    "{name} booked for {nights} night(s), requires {}",
                    record.minimum_nights
                ));
            }
        }
        i = j;
    }
    outcome("minimum_nights", problems)
}

/// Trip cost under the pricing conventions: flights and meals per person,
/// ground transport per vehicle, lodging per room per night.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub flights: u64,
    pub ground: u64,
    pub lodging: u64,
    pub meals: u64,
    pub total: u64,
    /// Plan entries whose price could not be looked up.
    pub unresolved: Vec<String>,
}

pub fn trip_cost(plan: &ItineraryPlan, store: &SandboxStore, party_size: u32) -> CostBreakdown {
    let party = u64::from(party_size);
    let units = |capacity: u32| party.div_ceil(u64::from(capacity.max(1)));
    let mut c = CostBreakdown::default();
    for (i, day) in plan.days.iter().enumerate() {
        if let Some(leg) = day.transportation.leg() {
            match leg.mode {
                TransportMode::Flight => {
                    match leg.flight_number.as_deref().and_then(|n| flight_for(store, n, &leg.from, &leg.to)) {
                        Some(f) => c.flights += u64::from(f.price) * party,
                        None => c.unresolved.push(format!("day {} flight", i + 1)),
                    }
                }
                mode => match store.ground_between(&leg.from, &leg.to).and_then(|g| g.cost_for(mode)) {
                    Some(cost) => c.ground += u64::from(cost) * units(mode.vehicle_capacity().unwrap_or(1)),
                    None => c.unresolved.push(format!("day {} {mode}", i + 1)),
                },
            }
        }
        if let Some(name) = day.accommodation() {
            match lodging_for(store, name, day.city.end()) {
                Some(a) => c.lodging += u64::from(a.price_per_night) * units(a.max_occupancy),
                None => c.unresolved.push(format!("day {} accommodation {name}", i + 1)),
            }
        }
        let here = day.city.names();
        for (slot, name) in day.meals() {
            match restaurant_for(store, name, &here) {
                Some(r) => c.meals += u64::from(r.average_cost) * party,
                None => c.unresolved.push(format!("day {} {slot} {name}", i + 1)),
            }
        }
    }
    c.total = c.flights + c.ground + c.lodging + c.meals;
    c
}

/// Evaluates the query's active hard constraints.
pub fn eval_hard(plan: &ItineraryPlan, query: &QuerySpec, store: &SandboxStore) -> ConstraintReport {
    let mut active: Vec<&HardConstraint> = query.hard_constraints.iter().collect();
    active.sort_by_key(|c| HARD_IDS.iter().position(|id| *id == c.id()));
    let lodgings: Vec<(usize, &str, Option<&AccommodationRecord>)> = plan
        .days
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.accommodation().map(|n| (i, n, lodging_for(store, n, d.city.end()))))
        .collect();

    let results = active
        .into_iter()
        .map(|constraint| {
            let id = constraint.id();
            let mut problems = Vec::new();
            match constraint {
                HardConstraint::Budget { amount } => {
                    let cost = trip_cost(plan, store, query.party_size);
                    if !cost.unresolved.is_empty() {
                        problems.push(format!("cannot price {}", cost.unresolved.join(", ")));
                    } else if cost.total > *amount {
                        problems.push(format!("total cost {} exceeds budget {amount}", cost.total));
                    }
                }
                HardConstraint::RoomRule { rule } => {
                    for (i, name, record) in &lodgings {
                        match record {
                            None => problems.push(format!("day {} accommodation {name} unknown", i + 1)),
                            Some(a) if !a.allows(*rule) => {
                                problems.push(format!("{name} does not allow {}", rule.as_str()))
                            }
                            Some(_) => {}
                        }
                    }
                }
                HardConstraint::RoomType { room_type } => {
                    for (i, name, record) in &lodgings {
                        match record {
                            None => problems.push(format!("day {} accommodation {name} unknown", i + 1)),
                            Some(a) if a.room_type != *room_type => {
                                problems.push(format!("{name} is a {}", a.room_type.as_str()))
                            }
                            Some(_) => {}
                        }
                    }
                }
                HardConstraint::Cuisines { cuisines } => {
                    let mut served = BTreeSet::new();
                    for day in &plan.days {
                        let here = day.city.names();
                        for (_, name) in day.meals() {
                            if let Some(r) = restaurant_for(store, name, &here) {
                                served.extend(r.cuisines.iter().map(|c| key(c)));
                            }
                        }
                    }
                    for wanted in cuisines {
                        if !served.contains(&key(wanted)) {
                            problems.push(format!("no {wanted} restaurant chosen"));
                        }
                    }
                }
                HardConstraint::TransportExclusions { modes } => {
                    for m in modes_used(plan).intersection(modes) {
                        problems.push(format!("uses excluded mode {m}"));
                    }
                }
                HardConstraint::Dates => {
                    if plan.days.len() != query.trip_days as usize {
                        problems.push(format!(
                            "plan covers {} days, trip is {} days",
                            plan.days.len(),
                            query.trip_days
                        ));
                    }
                    if plan.days.first().is_none_or(|d| d.transportation.leg().is_none()) {
                        problems.push(format!("no departure on {}", query.departure_date));
                    }
                    if plan.days.len() < 2 || plan.days.last().is_none_or(|d| d.transportation.leg().is_none()) {
                        problems.push(format!("no return on {}", query.return_date));
                    }
                    for (i, day) in plan.days.iter().enumerate() {
                        let Some(leg) = day.transportation.leg() else { continue };
                        if leg.mode != TransportMode::Flight {
                            continue;
                        }
                        let date = query.date_of_day(i);
                        match leg.flight_number.as_deref().and_then(|n| flight_for(store, n, &leg.from, &leg.to)) {
                            Some(f) if f.date == date => {}
                            Some(f) => problems.push(format!(
                                "day {} flight {} departs {} instead of {date}",
                                i + 1,
                                f.flight_number,
                                f.date
                            )),
                            None => problems.push(format!("day {} flight cannot be dated", i + 1)),
                        }
                    }
                }
            }
            outcome(id, problems)
        })
        .collect();
    ConstraintReport::new(Category::Hard, plan, results)
}
