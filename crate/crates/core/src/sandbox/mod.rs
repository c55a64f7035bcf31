//! The grounded record universe backing every tool call.
//!
//! A [`SandboxStore`] is immutable once built. It is produced either by the
//! seeded generator ([`generate_sandbox`]) or by CSV ingestion
//! ([`load_csv`]); both paths run the same invariant checks in
//! [`SandboxStore::new`].

mod csv_load;
mod generate;
mod query;
mod records;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_load::{load_csv, CsvPaths, LoadSummary};
pub use generate::{generate_sandbox, SizeProfile};
pub use query::{
    generate_query, generate_query_with, Destination, Difficulty, GeneratedQuery, HardConstraint,
    QueryOptions, QuerySpec,
};
pub use records::{
    AccommodationRecord, AttractionRecord, CityIndex, ClockTime, Cuisine, FlightRecord,
    GroundRoute, HouseRule, RestaurantRecord, RoomType, TransportMode,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("invalid size profile: {0}")]
    InvalidProfile(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{file}:{line}: {reason}")]
    Load {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("query generation failed: {0}")]
    Generation(String),
}

/// Case-insensitive lookup key.
pub(crate) fn key(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, Default)]
struct Indexes {
    city_state: HashMap<String, (String, String)>,
    flights: HashMap<String, Vec<usize>>,
    accommodations: HashMap<String, Vec<usize>>,
    restaurants: HashMap<String, Vec<usize>>,
    attractions: HashMap<String, Vec<usize>>,
    ground: HashMap<(String, String), usize>,
}

/// Serialized form of a store; the indexes are rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreData {
    pub cities: CityIndex,
    pub flights: Vec<FlightRecord>,
    pub accommodations: Vec<AccommodationRecord>,
    pub restaurants: Vec<RestaurantRecord>,
    pub attractions: Vec<AttractionRecord>,
    pub ground: Vec<GroundRoute>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "StoreData", try_from = "StoreData")]
pub struct SandboxStore {
    data: StoreData,
    idx: Indexes,
}

impl From<SandboxStore> for StoreData {
    fn from(store: SandboxStore) -> Self {
        store.data
    }
}

impl TryFrom<StoreData> for SandboxStore {
    type Error = SandboxError;
    fn try_from(data: StoreData) -> Result<Self, Self::Error> {
        SandboxStore::new(data)
    }
}

fn push_index(map: &mut HashMap<String, Vec<usize>>, name: &str, i: usize) {
    map.entry(key(name)).or_default().push(i);
}

impl SandboxStore {
    /// Sorts every table into its canonical order, validates all record
    /// invariants and builds the lookup indexes.
    pub fn new(mut data: StoreData) -> Result<Self, SandboxError> {
        data.flights.sort_by(|a, b| {
            (&a.flight_number, a.date, &a.origin_city).cmp(&(&b.flight_number, b.date, &b.origin_city))
        });
        data.accommodations
            .sort_by(|a, b| (&a.name, &a.city).cmp(&(&b.name, &b.city)));
        data.restaurants
            .sort_by(|a, b| (&a.name, &a.city).cmp(&(&b.name, &b.city)));
        data.attractions
            .sort_by(|a, b| (&a.name, &a.city).cmp(&(&b.name, &b.city)));
        data.ground.sort_by(|a, b| {
            (&a.origin_city, &a.destination_city).cmp(&(&b.origin_city, &b.destination_city))
        });

        let mut idx = Indexes::default();
        for (state, cities) in &data.cities.states {
            let mut seen = std::collections::HashSet::new();
            for city in cities {
                if !seen.insert(key(city)) {
                    return Err(SandboxError::Invariant(format!(
                        "duplicate city {city} in state {state}"
                    )));
                }
                if idx
                    .city_state
                    .insert(key(city), (city.clone(), state.clone()))
                    .is_some()
                {
                    return Err(SandboxError::Invariant(format!(
                        "city {city} appears in more than one state"
                    )));
                }
            }
        }
        if idx.city_state.len() < 2 {
            return Err(SandboxError::Invariant("store needs at least two cities".into()));
        }
        let known = |city: &str, what: &str| -> Result<(), SandboxError> {
            if idx.city_state.contains_key(&key(city)) {
                Ok(())
            } else {
                Err(SandboxError::Invariant(format!("{what} references unknown city {city}")))
            }
        };

        for f in &data.flights {
            f.check()?;
            known(&f.origin_city, &format!("flight {}", f.flight_number))?;
            known(&f.destination_city, &format!("flight {}", f.flight_number))?;
        }
        for a in &data.accommodations {
            a.check()?;
            known(&a.city, &format!("accommodation {}", a.name))?;
        }
        for r in &data.restaurants {
            r.check()?;
            known(&r.city, &format!("restaurant {}", r.name))?;
        }
        for a in &data.attractions {
            known(&a.city, &format!("attraction {}", a.name))?;
        }
        for g in &data.ground {
            g.check()?;
            known(&g.origin_city, "ground route")?;
            known(&g.destination_city, "ground route")?;
        }

        for (i, f) in data.flights.iter().enumerate() {
            push_index(&mut idx.flights, &f.flight_number, i);
        }
        for (i, a) in data.accommodations.iter().enumerate() {
            push_index(&mut idx.accommodations, &a.name, i);
        }
        for (i, r) in data.restaurants.iter().enumerate() {
            push_index(&mut idx.restaurants, &r.name, i);
        }
        for (i, a) in data.attractions.iter().enumerate() {
            push_index(&mut idx.attractions, &a.name, i);
        }
        for (i, g) in data.ground.iter().enumerate() {
            let pair = (key(&g.origin_city), key(&g.destination_city));
            idx.ground.entry(pair.clone()).or_insert(i);
            idx.ground.entry((pair.1, pair.0)).or_insert(i);
        }
        Ok(Self { data, idx })
    }

    pub fn data(&self) -> &StoreData {
        &self.data
    }

    pub fn cities(&self) -> &CityIndex {
        &self.data.cities
    }

    pub fn flights(&self) -> &[FlightRecord] {
        &self.data.flights
    }

    pub fn accommodations(&self) -> &[AccommodationRecord] {
        &self.data.accommodations
    }

    pub fn restaurants(&self) -> &[RestaurantRecord] {
        &self.data.restaurants
    }

    pub fn attractions(&self) -> &[AttractionRecord] {
        &self.data.attractions
    }

    pub fn ground_routes(&self) -> &[GroundRoute] {
        &self.data.ground
    }

    /// Canonical spelling of a city name, matched case-insensitively.
    pub fn city(&self, name: &str) -> Option<&str> {
        self.idx.city_state.get(&key(name)).map(|(c, _)| c.as_str())
    }

    pub fn state_of(&self, city: &str) -> Option<&str> {
        self.idx.city_state.get(&key(city)).map(|(_, s)| s.as_str())
    }

    pub fn has_state(&self, state: &str) -> bool {
        self.data.cities.states.keys().any(|s| key(s) == key(state))
    }

    pub fn flights_named(&self, flight_number: &str) -> impl Iterator<Item = &FlightRecord> {
        self.idx
            .flights
            .get(&key(flight_number))
            .into_iter()
            .flatten()
            .map(|&i| &self.data.flights[i])
    }

    pub fn accommodations_named(&self, name: &str) -> impl Iterator<Item = &AccommodationRecord> {
        self.idx
            .accommodations
            .get(&key(name))
            .into_iter()
            .flatten()
            .map(|&i| &self.data.accommodations[i])
    }

    pub fn restaurants_named(&self, name: &str) -> impl Iterator<Item = &RestaurantRecord> {
        self.idx
            .restaurants
            .get(&key(name))
            .into_iter()
            .flatten()
            .map(|&i| &self.data.restaurants[i])
    }

    pub fn attractions_named(&self, name: &str) -> impl Iterator<Item = &AttractionRecord> {
        self.idx
            .attractions
            .get(&key(name))
            .into_iter()
            .flatten()
            .map(|&i| &self.data.attractions[i])
    }

    // Typed queries used by the tool layer. Each is a pure filter and keeps
    // the canonical table order.

    pub fn flights_between(
        &self,
        origin: &str,
        destination: &str,
        date: Option<chrono::NaiveDate>,
    ) -> Vec<&FlightRecord> {
        let (o, d) = (key(origin), key(destination));
        self.data
            .flights
            .iter()
            .filter(|f| key(&f.origin_city) == o && key(&f.destination_city) == d)
            .filter(|f| date.is_none_or(|day| f.date == day))
            .collect()
    }

    pub fn accommodations_in(&self, city: &str) -> Vec<&AccommodationRecord> {
        let c = key(city);
        self.data.accommodations.iter().filter(|a| key(&a.city) == c).collect()
    }

    pub fn restaurants_in(&self, city: &str) -> Vec<&RestaurantRecord> {
        let c = key(city);
        self.data.restaurants.iter().filter(|r| key(&r.city) == c).collect()
    }

    pub fn attractions_in(&self, city: &str) -> Vec<&AttractionRecord> {
        let c = key(city);
        self.data.attractions.iter().filter(|a| key(&a.city) == c).collect()
    }

    /// Ground route between two cities; lookup is symmetric.
    pub fn ground_between(&self, origin: &str, destination: &str) -> Option<&GroundRoute> {
        self.idx
            .ground
            .get(&(key(origin), key(destination)))
            .map(|&i| &self.data.ground[i])
    }

    pub fn cities_in_state(&self, state: &str) -> Option<&[String]> {
        self.data
            .cities
            .states
            .iter()
            .find(|(s, _)| key(s) == key(state))
            .map(|(_, c)| c.as_slice())
    }

    /// Row counts per record class, in CSV file order.
    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        BTreeMap::from([
            ("accommodations", self.data.accommodations.len()),
            ("attractions", self.data.attractions.len()),
            ("cities", self.idx.city_state.len()),
            ("flights", self.data.flights.len()),
            ("ground", self.data.ground.len()),
            ("restaurants", self.data.restaurants.len()),
        ])
    }

    pub fn to_json(&self) -> String {
        crate::json::canonical(&self.data)
    }

    pub fn from_json(text: &str) -> Result<Self, SandboxError> {
        let data: StoreData = serde_json::from_str(text)
            .map_err(|e| SandboxError::Invariant(format!("malformed store file: {e}")))?;
        Self::new(data)
    }
}
