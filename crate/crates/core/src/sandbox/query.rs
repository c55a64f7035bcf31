//! Query generation.
//!
//! A query is built witness-first: a complete plan is assembled from store
//! records, then the hard constraints are derived so that the plan satisfies
//! them. This guarantees feasibility without searching the plan space.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::{HouseRule, RoomType, TransportMode};
use super::{key, SandboxError, SandboxStore};
use crate::plan::{Attractions, DayCity, DayPlan, ItineraryPlan, TransportLeg, Transportation, NONE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Self::Easy, Self::Medium, Self::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Easy => "easy",
            Self::Medium => "medium",
            Self::Hard => "hard",
        }
    }

    fn categorical_count(self) -> usize {
        match self {
            Self::Easy => 0,
            Self::Medium => 1,
            Self::Hard => 2,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown difficulty {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    City(String),
    State(String),
}

/// A user-stated requirement. The registry order of the variants is the
/// order in which hard constraints are reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HardConstraint {
    Budget { amount: u64 },
    RoomRule { rule: HouseRule },
    RoomType { room_type: RoomType },
    Cuisines { cuisines: BTreeSet<String> },
    TransportExclusions { modes: BTreeSet<TransportMode> },
    Dates,
}

impl HardConstraint {
    pub fn id(&self) -> &'static str {
        match self {
            Self::Budget { .. } => "budget",
            Self::RoomRule { .. } => "room_rule",
            Self::RoomType { .. } => "room_type",
            Self::Cuisines { .. } => "cuisines",
            Self::TransportExclusions { .. } => "transport_exclusions",
            Self::Dates => "dates",
        }
    }

    fn rank(&self) -> usize {
        crate::constraints::HARD_IDS
            .iter()
            .position(|id| *id == self.id())
            .expect("every kind is registered")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub query_id: String,
    pub origin_city: String,
    pub destination: Destination,
    pub departure_date: NaiveDate,
    pub return_date: NaiveDate,
    pub party_size: u32,
    pub trip_days: u32,
    pub hard_constraints: Vec<HardConstraint>,
    pub difficulty: Difficulty,
}

impl QuerySpec {
    pub fn check(&self) -> Result<(), SandboxError> {
        let span = (self.return_date - self.departure_date).num_days() + 1;
        if span != i64::from(self.trip_days) {
            return Err(SandboxError::Invariant(format!(
                "query {}: dates span {span} days but trip_days is {}",
                self.query_id, self.trip_days
            )));
        }
        if self.party_size < 1 {
            return Err(SandboxError::Invariant(format!("query {}: empty party", self.query_id)));
        }
        let ids: BTreeSet<_> = self.hard_constraints.iter().map(HardConstraint::id).collect();
        if ids.len() != self.hard_constraints.len() {
            return Err(SandboxError::Invariant(format!(
                "query {}: duplicated constraint kind",
                self.query_id
            )));
        }
        Ok(())
    }

    pub fn budget(&self) -> Option<u64> {
        self.hard_constraints.iter().find_map(|c| match c {
            HardConstraint::Budget { amount } => Some(*amount),
            _ => None,
        })
    }

    pub fn date_of_day(&self, index: usize) -> NaiveDate {
        self.departure_date + Days::new(index as u64)
    }

    /// Whether `city` is an admissible stop for this query's destination.
    pub fn admits_destination(&self, store: &SandboxStore, city: &str) -> bool {
        match &self.destination {
            Destination::City(c) => key(c) == key(city),
            Destination::State(s) => store.state_of(city).is_some_and(|st| key(st) == key(s)),
        }
    }

    /// The natural-language request shown to the agent.
    pub fn user_prompt(&self) -> String {
        let dest = match &self.destination {
            Destination::City(c) => c.clone(),
            Destination::State(s) => {
                let stops = (self.trip_days - 1) / 2;
                format!("{stops} cities in {s}")
            }
        };
        let people = if self.party_size == 1 { "1 person".to_string() } else { format!("{} people", self.party_size) };
        let mut text = format!(
            "Please plan a {}-day trip for {people} departing from {} to {dest}, from {} to {}.",
            self.trip_days, self.origin_city, self.departure_date, self.return_date
        );
        for c in &self.hard_constraints {
            match c {
                HardConstraint::Budget { amount } => {
                    text.push_str(&format!(" The total budget is ${amount}."))
                }
                HardConstraint::RoomRule { rule } => text.push_str(&format!(
                    " Our accommodation must allow {}.",
                    rule.as_str().replace('_', " ")
                )),
                HardConstraint::RoomType { room_type } => text.push_str(&format!(
                    " We would like to stay in a {}.",
                    room_type.as_str().replace('_', " ")
                )),
                HardConstraint::Cuisines { cuisines } => {
                    let list: Vec<&str> = cuisines.iter().map(String::as_str).collect();
                    text.push_str(&format!(" We want to try {} cuisine.", list.join(" and ")))
                }
                HardConstraint::TransportExclusions { modes } => {
                    let list: Vec<&str> = modes.iter().map(|m| m.as_str()).collect();
                    text.push_str(&format!(" Please avoid {} as transportation.", list.join(" and ")))
                }
                HardConstraint::Dates => text.push_str(&format!(
                    " We must leave on {} and be back on {}.",
                    self.departure_date, self.return_date
                )),
            }
        }
        text
    }
}

/// A query together with the plan it was built around. The witness is kept
/// for testing and never sent to a policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeneratedQuery {
    pub spec: QuerySpec,
    pub witness: ItineraryPlan,
}

#[derive(Debug, Clone, Default)]
pub struct QueryOptions {
    /// Force 3, 5 or 7 days.
    pub trip_days: Option<u32>,
    /// Force the party size.
    pub party_size: Option<u32>,
}

pub fn generate_query(
    store: &SandboxStore,
    seed: u64,
    difficulty: Difficulty,
) -> Result<GeneratedQuery, SandboxError> {
    generate_query_with(store, seed, difficulty, &QueryOptions::default())
}

const ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy)]
enum ModePlan {
    Flight,
    Taxi,
    SelfDrive,
    FlightThenTaxi,
}

impl ModePlan {
    const ALL: [ModePlan; 4] = [Self::Flight, Self::Taxi, Self::SelfDrive, Self::FlightThenTaxi];

    fn mode(self, leg: usize) -> TransportMode {
        match self {
            Self::Flight => TransportMode::Flight,
            Self::Taxi => TransportMode::Taxi,
            Self::SelfDrive => TransportMode::SelfDriving,
            Self::FlightThenTaxi if leg.is_multiple_of(2) => TransportMode::Flight,
            Self::FlightThenTaxi => TransportMode::Taxi,
        }
    }
}

pub fn generate_query_with(
    store: &SandboxStore,
    seed: u64,
    difficulty: Difficulty,
    opts: &QueryOptions,
) -> Result<GeneratedQuery, SandboxError> {
    let salt = match difficulty {
        Difficulty::Easy => 0x9e37,
        Difficulty::Medium => 0x7f4a,
        Difficulty::Hard => 0x3c6e,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x0100_0000_01b3) ^ salt);
    let cities: Vec<String> = store.cities().all_cities().map(|(_, c)| c.to_string()).collect();
    if cities.len() < 2 {
        return Err(SandboxError::Generation("store needs at least two cities".into()));
    }
    let (first_date, last_date) = travel_window(store);

    for _ in 0..ATTEMPTS {
        let origin = cities.choose(&mut rng).unwrap().clone();
        let origin_state = store.state_of(&origin).unwrap_or_default().to_string();

        let mut day_options: Vec<u32> = match opts.trip_days {
            Some(d) => vec![d],
            None => vec![3, 5, 7],
        };
        day_options.shuffle(&mut rng);
        let Some((trip_days, destination, stops)) = day_options.into_iter().find_map(|d| {
            pick_destination(store, &mut rng, &origin, &origin_state, d)
        }) else {
            continue;
        };

        let span = (last_date - first_date).num_days() + 1 - i64::from(trip_days);
        if span < 0 {
            continue;
        }
        let departure = first_date + Days::new(rng.random_range(0..=span) as u64);
        let party_size = opts.party_size.unwrap_or_else(|| rng.random_range(1..=6));
        let mode_plan = *ModePlan::ALL.choose(&mut rng).unwrap();

        let Some(witness) = build_witness(store, &mut rng, &origin, &stops, departure, mode_plan) else {
            continue;
        };
        let cost = crate::constraints::trip_cost(&witness, store, party_size);
        if !cost.unresolved.is_empty() {
            continue;
        }
        let slack = 1.0 + rng.random_range(0.05..0.35);
        let budget = ((cost.total as f64 * slack / 100.0).ceil() as u64 * 100).max(cost.total);

        let mut categorical = categorical_options(store, &witness, &mut rng);
        if categorical.len() < difficulty.categorical_count() {
            continue;
        }
        categorical.shuffle(&mut rng);
        let take = match difficulty {
            Difficulty::Hard => rng.random_range(2..=categorical.len().clamp(2, 3)),
            other => other.categorical_count(),
        };
        let mut hard_constraints = vec![HardConstraint::Budget { amount: budget }];
        hard_constraints.extend(categorical.into_iter().take(take));
        if difficulty == Difficulty::Hard {
            hard_constraints.push(HardConstraint::Dates);
        }
        hard_constraints.sort_by_key(HardConstraint::rank);

        let spec = QuerySpec {
            query_id: format!("{difficulty}-{seed:06}"),
            origin_city: origin,
            destination,
            departure_date: departure,
            return_date: departure + Days::new(u64::from(trip_days) - 1),
            party_size,
            trip_days,
            hard_constraints,
            difficulty,
        };
        spec.check()?;
        return Ok(GeneratedQuery { spec, witness });
    }
    Err(SandboxError::Generation(format!(
        "no feasible {difficulty} query found for seed {seed} after {ATTEMPTS} attempts"
    )))
}

fn travel_window(store: &SandboxStore) -> (NaiveDate, NaiveDate) {
    let dates = store.flights().iter().map(|f| f.date);
    match (dates.clone().min(), dates.max()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            let start = NaiveDate::from_ymd_opt(2022, 3, 1).unwrap();
            (start, start + Days::new(13))
        }
    }
}

fn pick_destination(
    store: &SandboxStore,
    rng: &mut ChaCha8Rng,
    origin: &str,
    origin_state: &str,
    trip_days: u32,
) -> Option<(u32, Destination, Vec<String>)> {
    let stops = match trip_days {
        3 => 1,
        5 => 2,
        7 => 3,
        _ => return None,
    };
    if stops == 1 {
        let candidates: Vec<&str> = store
            .cities()
            .all_cities()
            .map(|(_, c)| c)
            .filter(|c| key(c) != key(origin))
            .collect();
        let city = candidates.choose(rng)?.to_string();
        return Some((trip_days, Destination::City(city.clone()), vec![city]));
    }
    let mut states: Vec<(&String, &Vec<String>)> = store
        .cities()
        .states
        .iter()
        .filter(|(s, cs)| s.as_str() != origin_state && cs.len() >= stops)
        .collect();
    states.shuffle(rng);
    let (state, cities) = states.first()?;
    let mut picked: Vec<String> = cities.to_vec();
    picked.shuffle(rng);
    picked.truncate(stops);
    Some((trip_days, Destination::State(state.to_string()), picked))
}

fn format_minutes(total: u32) -> String {
    let (h, m) = (total / 60, total % 60);
    match (h, m) {
        (0, m) => format!("{m} mins"),
        (h, 0) => format!("{h} hours"),
        (h, m) => format!("{h} hours {m} mins"),
    }
}

fn build_leg(
    store: &SandboxStore,
    rng: &mut ChaCha8Rng,
    from: &str,
    to: &str,
    date: NaiveDate,
    mode: TransportMode,
) -> Option<TransportLeg> {
    match mode {
        TransportMode::Flight => {
            let flights = store.flights_between(from, to, Some(date));
            let f = flights.choose(rng)?;
            Some(TransportLeg {
                mode,
                from: from.to_string(),
                to: to.to_string(),
                duration: format_minutes(f.duration_minutes()),
                distance: format!("{} km", f.distance_km),
                cost: i64::from(f.price),
                flight_number: Some(f.flight_number.clone()),
                departure_time: Some(f.departure_time.to_string()),
                arrival_time: Some(f.arrival_time.to_string()),
            })
        }
        ground => {
            let g = store.ground_between(from, to)?;
            Some(TransportLeg {
                mode,
                from: from.to_string(),
                to: to.to_string(),
                duration: format_minutes(g.duration_min),
                distance: format!("{} km", g.distance_km),
                cost: i64::from(g.cost_for(ground)?),
                flight_number: None,
                departure_time: None,
                arrival_time: None,
            })
        }
    }
}

/// Day layout for `k` stops: arrive at a stop, stay a full day, move on;
/// `2k + 1` days in total with two nights at each stop.
fn build_witness(
    store: &SandboxStore,
    rng: &mut ChaCha8Rng,
    origin: &str,
    stops: &[String],
    departure: NaiveDate,
    mode_plan: ModePlan,
) -> Option<ItineraryPlan> {
    let k = stops.len();
    let n = 2 * k + 1;

    let mut lodging = Vec::with_capacity(k);
    let mut restaurants = Vec::with_capacity(k);
    let mut sights = Vec::with_capacity(k);
    for stop in stops {
        let options: Vec<_> = store
            .accommodations_in(stop)
            .into_iter()
            .filter(|a| a.minimum_nights <= 2)
            .collect();
        lodging.push(options.choose(rng)?.name.clone());
        let mut r: Vec<String> = store.restaurants_in(stop).iter().map(|r| r.name.clone()).collect();
        r.shuffle(rng);
        restaurants.push(r.into_iter());
        let mut a: Vec<String> = store.attractions_in(stop).iter().map(|a| a.name.clone()).collect();
        a.shuffle(rng);
        sights.push(a.into_iter());
    }

    let mut take_meal = |stop: Option<usize>| -> String {
        stop.and_then(|j| restaurants[j].next()).unwrap_or_else(|| NONE.to_string())
    };
    let mut days = Vec::with_capacity(n);
    for d in 0..n {
        let date = departure + Days::new(d as u64);
        let (city, leg_mode, meals, sight_count, lodge) = if d % 2 == 0 {
            let j = d / 2;
            let from = if j == 0 { origin } else { stops[j - 1].as_str() };
            let to = if j == k { origin } else { stops[j].as_str() };
            let meals = if j == 0 {
                [None, Some(0), Some(0)]
            } else if j == k {
                [Some(k - 1), None, None]
            } else {
                [Some(j - 1), None, Some(j)]
            };
            let sights = usize::from(j == 0);
            let lodge = (j < k).then_some(j);
            (
                DayCity::Transfer { from: from.to_string(), to: to.to_string() },
                Some(mode_plan.mode(j)),
                meals,
                sights,
                lodge,
            )
        } else {
            let j = d / 2;
            (DayCity::Stay(stops[j].clone()), None, [Some(j); 3], 2, Some(j))
        };
        let transportation = match leg_mode {
            Some(mode) => Transportation::Leg(build_leg(store, rng, city.start(), city.end(), date, mode)?),
            None => Transportation::NotNeeded,
        };
        let visit: Vec<String> = match city.is_transfer() {
            true if sight_count > 0 => sights[0].by_ref().take(sight_count).collect(),
            false => sights[d / 2].by_ref().take(sight_count).collect(),
            _ => vec![],
        };
        let [b, l, dn] = meals.map(&mut take_meal);
        days.push(DayPlan {
            days: d as i64 + 1,
            city,
            transportation,
            attraction: if visit.is_empty() { Attractions::NotPlanned } else { Attractions::Visit(visit) },
            accommodation: lodge.map_or_else(|| NONE.to_string(), |j| lodging[j].clone()),
            breakfast: b,
            lunch: l,
            dinner: dn,
        });
    }
    Some(ItineraryPlan { days })
}

/// Categorical constraints the witness already satisfies.
fn categorical_options(
    store: &SandboxStore,
    witness: &ItineraryPlan,
    rng: &mut ChaCha8Rng,
) -> Vec<HardConstraint> {
    let stays: Vec<_> = witness
        .days
        .iter()
        .filter_map(|d| d.accommodation())
        .filter_map(|name| store.accommodations_named(name).next())
        .collect();
    let mut out = Vec::new();

    let allowed: Vec<HouseRule> = HouseRule::ALL
        .into_iter()
        .filter(|r| stays.iter().all(|a| a.allows(*r)))
        .collect();
    if let Some(rule) = allowed.choose(rng) {
        out.push(HardConstraint::RoomRule { rule: *rule });
    }

    if let Some(first) = stays.first() {
        if stays.iter().all(|a| a.room_type == first.room_type) {
            out.push(HardConstraint::RoomType { room_type: first.room_type });
        }
    }

    let mut served: BTreeSet<String> = BTreeSet::new();
    for d in &witness.days {
        for (_, name) in d.meals() {
            if let Some(r) = store.restaurants_named(name).next() {
                served.extend(r.cuisines.iter().cloned());
            }
        }
    }
    if !served.is_empty() {
        let served: Vec<String> = served.into_iter().collect();
        let n = rng.random_range(1..=served.len().min(2));
        let cuisines = served.choose_multiple(rng, n).cloned().collect();
        out.push(HardConstraint::Cuisines { cuisines });
    }

    let used: BTreeSet<TransportMode> =
        witness.days.iter().filter_map(|d| d.transportation.leg()).map(|l| l.mode).collect();
    let unused: Vec<TransportMode> = TransportMode::ALL.into_iter().filter(|m| !used.contains(m)).collect();
    if let Some(mode) = unused.choose(rng) {
        out.push(HardConstraint::TransportExclusions { modes: BTreeSet::from([*mode]) });
    }
    out
}
