use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::*;
use super::{SandboxError, SandboxStore, StoreData};

const STATE_NAMES: &[&str] = &[
    "Arden", "Belmora", "Calder", "Dunmore", "Evendale", "Farrow", "Glenhaven", "Harwick",
];

const CITY_NAMES: &[&str] = &[
    "Ashford", "Brookvale", "Cedarport", "Driftwood", "Eastmere", "Fallbrook", "Granite Falls",
    "Hollowell", "Ironbridge", "Juniper Bay", "Kestrel Point", "Lakeshire", "Millbrook",
    "Northgate", "Oakridge", "Pinecrest", "Queensford", "Riverton", "Stonehaven", "Thornbury",
    "Upton Cross", "Valewood", "Westbrook", "Yarrowdale", "Amberly", "Birchmont", "Coral Sands",
    "Deerfield", "Elmstead", "Foxhollow", "Greywater", "Highmoor",
];

const LODGING_ADJ: &[&str] = &[
    "Quiet", "Sunny", "Cozy", "Grand", "Rustic", "Modern", "Little", "Hidden", "Bright", "Old",
];
const LODGING_NOUN: &[&str] = &[
    "Harbor Loft", "Garden Suite", "Maple Cottage", "River Studio", "Hill House", "Corner Flat",
    "Lantern Inn", "Meadow Room", "Canal Apartment", "Orchard Lodge",
];
const DINING_ADJ: &[&str] = &[
    "Golden", "Blue", "Copper", "Silver", "Crimson", "Green", "Velvet", "Salty", "Smoky", "Wild",
];
const DINING_NOUN: &[&str] = &[
    "Spoon", "Fork", "Kettle", "Oven", "Table", "Ladle", "Skillet", "Pantry", "Grill", "Bistro",
];
const SIGHT_KINDS: &[&str] = &[
    "Botanical Garden", "History Museum", "Old Lighthouse", "Art Gallery", "Riverside Park",
    "Observation Tower", "Science Center", "Cathedral", "Zoo", "Market Hall",
];
const CUISINES: &[&str] = &[
    "american", "chinese", "french", "indian", "italian", "japanese", "mediterranean", "mexican",
];

/// Record counts for the synthetic generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeProfile {
    /// Number of cities in each generated state.
    pub state_sizes: Vec<usize>,
    pub accommodations_per_city: usize,
    pub restaurants_per_city: usize,
    pub attractions_per_city: usize,
    pub flights_per_route_per_day: usize,
    pub date_span_days: usize,
    pub start_date: NaiveDate,
}

impl SizeProfile {
    fn base() -> Self {
        Self {
            state_sizes: vec![3, 3],
            accommodations_per_city: 4,
            restaurants_per_city: 6,
            attractions_per_city: 4,
            flights_per_route_per_day: 1,
            date_span_days: 10,
            start_date: NaiveDate::from_ymd_opt(2022, 3, 1).unwrap(),
        }
    }

    /// Three cities, one record of each kind per city, three travel dates.
    /// Small enough to enumerate every candidate 3-day plan.
    pub fn micro() -> Self {
        Self {
            state_sizes: vec![1, 2],
            accommodations_per_city: 1,
            restaurants_per_city: 1,
            attractions_per_city: 1,
            date_span_days: 3,
            ..Self::base()
        }
    }

    pub fn small() -> Self {
        Self::base()
    }

    pub fn medium() -> Self {
        Self {
            state_sizes: vec![4, 4, 4],
            accommodations_per_city: 6,
            restaurants_per_city: 9,
            attractions_per_city: 6,
            flights_per_route_per_day: 2,
            date_span_days: 14,
            ..Self::base()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "micro" => Some(Self::micro()),
            "small" => Some(Self::small()),
            "medium" => Some(Self::medium()),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), SandboxError> {
        let cities: usize = self.state_sizes.iter().sum();
        if cities < 2 {
            return Err(SandboxError::InvalidProfile(format!(
                "at least two cities are required, profile has {cities}"
            )));
        }
        if self.state_sizes.contains(&0) {
            return Err(SandboxError::InvalidProfile("every state needs a city".into()));
        }
        if cities > CITY_NAMES.len() || self.state_sizes.len() > STATE_NAMES.len() {
            return Err(SandboxError::InvalidProfile("profile exceeds the name pools".into()));
        }
        for (what, n) in [
            ("accommodations_per_city", self.accommodations_per_city),
            ("restaurants_per_city", self.restaurants_per_city),
            ("attractions_per_city", self.attractions_per_city),
            ("flights_per_route_per_day", self.flights_per_route_per_day),
            ("date_span_days", self.date_span_days),
        ] {
            if n == 0 {
                return Err(SandboxError::InvalidProfile(format!("{what} must be at least 1")));
            }
        }
        Ok(())
    }
}

fn unique_name(rng: &mut ChaCha8Rng, adj: &[&str], noun: &[&str], taken: &mut HashSet<String>) -> String {
    let base = format!("{} {}", adj.choose(rng).unwrap(), noun.choose(rng).unwrap());
    let mut name = base.clone();
    let mut n = 2;
    while !taken.insert(name.to_lowercase()) {
        name = format!("{base} {n}");
        n += 1;
    }
    name
}

/// Builds a deterministic store for `(seed, profile)`.
///
/// Every ordered city pair gets `flights_per_route_per_day` flights on every
/// date of the span and every unordered pair gets one ground route, so any
/// itinerary path inside the span can be travelled by air or road.
pub fn generate_sandbox(seed: u64, profile: &SizeProfile) -> Result<SandboxStore, SandboxError> {
    profile.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut city_pool: Vec<&str> = CITY_NAMES.to_vec();
    city_pool.shuffle(&mut rng);
    let mut state_pool: Vec<&str> = STATE_NAMES.to_vec();
    state_pool.shuffle(&mut rng);

    let mut states = BTreeMap::new();
    let mut cities = Vec::new();
    let mut next = city_pool.into_iter();
    for (state, &n) in state_pool.iter().zip(&profile.state_sizes) {
        let members: Vec<String> = next.by_ref().take(n).map(str::to_string).collect();
        cities.extend(members.iter().cloned());
        states.insert(state.to_string(), members);
    }
    cities.sort();

    // Coordinates on a plane give consistent distances.
    let coords: BTreeMap<&str, (f64, f64)> = cities
        .iter()
        .map(|c| (c.as_str(), (rng.random_range(0.0..1500.0), rng.random_range(0.0..1000.0))))
        .collect();
    let distance = |a: &str, b: &str| -> u32 {
        let (x1, y1) = coords[a];
        let (x2, y2) = coords[b];
        (((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt().round() as u32).max(40)
    };

    let mut taken = HashSet::new();
    let mut accommodations = Vec::new();
    let mut restaurants = Vec::new();
    let mut attractions = Vec::new();
    for city in &cities {
        for i in 0..profile.accommodations_per_city {
            let mut house_rules = BTreeSet::new();
            for rule in HouseRule::ALL {
                if rng.random_bool(0.3) {
                    house_rules.insert(rule);
                }
            }
            accommodations.push(AccommodationRecord {
                name: unique_name(&mut rng, LODGING_ADJ, LODGING_NOUN, &mut taken),
                city: city.clone(),
                price_per_night: rng.random_range(6..=40) * 10,
                room_type: *RoomType::ALL.choose(&mut rng).unwrap(),
                house_rules,
                // The first listing in each city always admits a two-night stay.
                minimum_nights: if i == 0 { rng.random_range(1..=2) } else { rng.random_range(1..=4) },
                max_occupancy: rng.random_range(1..=6),
            });
        }
        for _ in 0..profile.restaurants_per_city {
            let k = rng.random_range(1..=3);
            let cuisines: BTreeSet<String> =
                CUISINES.choose_multiple(&mut rng, k).map(|c| c.to_string()).collect();
            restaurants.push(RestaurantRecord {
                name: unique_name(&mut rng, DINING_ADJ, DINING_NOUN, &mut taken),
                city: city.clone(),
                cuisines,
                average_cost: rng.random_range(8..=80),
                rating: f64::from(rng.random_range(10..=50u32)) / 10.0,
            });
        }
        let mut kinds: Vec<&str> = SIGHT_KINDS.to_vec();
        kinds.shuffle(&mut rng);
        for i in 0..profile.attractions_per_city {
            let kind = kinds[i % kinds.len()];
            let name = if i < kinds.len() {
                format!("{city} {kind}")
            } else {
                format!("{city} {kind} {}", i / kinds.len() + 1)
            };
            taken.insert(name.to_lowercase());
            attractions.push(AttractionRecord { name, city: city.clone() });
        }
    }

    let mut flights = Vec::new();
    let mut ground = Vec::new();
    let mut flight_seq = 1000u32;
    for (i, a) in cities.iter().enumerate() {
        for (j, b) in cities.iter().enumerate() {
            if i == j {
                continue;
            }
            let km = distance(a, b);
            if i < j {
                let minutes = (f64::from(km) / 80.0 * 60.0).round() as u32;
                ground.push(GroundRoute {
                    origin_city: a.clone(),
                    destination_city: b.clone(),
                    distance_km: km,
                    duration_min: minutes.max(30),
                    taxi_cost: km + rng.random_range(0..=km / 4),
                    self_drive_cost: km / 5 + rng.random_range(0..=km / 10),
                });
            }
            for day in 0..profile.date_span_days {
                let date = profile.start_date + Days::new(day as u64);
                for _ in 0..profile.flights_per_route_per_day {
                    flight_seq += 1;
                    let dep = rng.random_range(6 * 60..=20 * 60) as u16 / 5 * 5;
                    let air = (km * 60 / 700 + 40).min(600) as u16;
                    flights.push(FlightRecord {
                        flight_number: format!("F{flight_seq}"),
                        origin_city: a.clone(),
                        destination_city: b.clone(),
                        date,
                        departure_time: ClockTime::from_minutes(dep).unwrap(),
                        arrival_time: ClockTime::from_minutes((dep + air) % (24 * 60)).unwrap(),
                        price: (km / 4 + rng.random_range(30..=150)).max(50),
                        distance_km: km,
                    });
                }
            }
        }
    }

    SandboxStore::new(StoreData {
        cities: CityIndex { states },
        flights,
        accommodations,
        restaurants,
        attractions,
        ground,
    })
}
