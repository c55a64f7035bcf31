use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SandboxError;

/// Time of day with minute resolution, rendered as `HH:MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClockTime(u16);

impl ClockTime {
    pub fn from_minutes(minutes: u16) -> Option<Self> {
        (minutes < 24 * 60).then_some(Self(minutes))
    }

    pub fn minutes(self) -> u16 {
        self.0
    }
}

impl fmt::Display for ClockTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

impl FromStr for ClockTime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, m) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| format!("time {s:?} is not HH:MM"))?;
        let h: u16 = h.parse().map_err(|_| format!("bad hour in {s:?}"))?;
        let m: u16 = m.parse().map_err(|_| format!("bad minute in {s:?}"))?;
        if h >= 24 || m >= 60 {
            return Err(format!("time {s:?} out of range"));
        }
        Ok(Self(h * 60 + m))
    }
}

impl Serialize for ClockTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ClockTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransportMode {
    #[serde(rename = "flight")]
    Flight,
    #[serde(rename = "taxi")]
    Taxi,
    #[serde(rename = "self-driving")]
    SelfDriving,
}

impl TransportMode {
    pub const ALL: [TransportMode; 3] = [Self::Flight, Self::Taxi, Self::SelfDriving];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Flight => "flight",
            Self::Taxi => "taxi",
            Self::SelfDriving => "self-driving",
        }
    }

    /// Passengers per vehicle for ground modes.
    pub fn vehicle_capacity(self) -> Option<u32> {
        match self {
            Self::Flight => None,
            Self::Taxi => Some(4),
            Self::SelfDriving => Some(5),
        }
    }
}

impl FromStr for TransportMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "flight" => Ok(Self::Flight),
            "taxi" => Ok(Self::Taxi),
            "self-driving" => Ok(Self::SelfDriving),
            other => Err(format!("unknown transport mode {other:?}")),
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    EntireRoom,
    PrivateRoom,
    SharedRoom,
}

impl RoomType {
    pub const ALL: [RoomType; 3] = [Self::EntireRoom, Self::PrivateRoom, Self::SharedRoom];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::EntireRoom => "entire_room",
            Self::PrivateRoom => "private_room",
            Self::SharedRoom => "shared_room",
        }
    }
}

impl FromStr for RoomType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| format!("unknown room type {s:?}"))
    }
}

/// An activity a host may forbid. Accommodations list the activities they
/// prohibit (`no_pets`); queries name the activity they need (`pets`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HouseRule {
    Parties,
    Smoking,
    #[serde(rename = "children_under_10")]
    ChildrenUnder10,
    Pets,
    Visitors,
}

impl HouseRule {
    pub const ALL: [HouseRule; 5] = [
        Self::Parties,
        Self::Smoking,
        Self::ChildrenUnder10,
        Self::Pets,
        Self::Visitors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Parties => "parties",
            Self::Smoking => "smoking",
            Self::ChildrenUnder10 => "children_under_10",
            Self::Pets => "pets",
            Self::Visitors => "visitors",
        }
    }

    pub fn prohibition_tag(self) -> String {
        format!("no_{}", self.as_str())
    }

    pub fn from_prohibition_tag(tag: &str) -> Result<Self, String> {
        let activity = tag
            .trim()
            .strip_prefix("no_")
            .ok_or_else(|| format!("house rule {tag:?} must start with no_"))?;
        activity.parse()
    }
}

impl FromStr for HouseRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| format!("unknown house rule {s:?}"))
    }
}

mod prohibitions {
    use super::*;

    pub fn serialize<S: Serializer>(rules: &BTreeSet<HouseRule>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(rules.iter().map(|r| r.prohibition_tag()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<HouseRule>, D::Error> {
        let tags = Vec::<String>::deserialize(d)?;
        tags.iter()
            .map(|t| HouseRule::from_prohibition_tag(t).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Lowercase cuisine tag such as `italian`.
pub type Cuisine = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightRecord {
    pub flight_number: String,
    pub origin_city: String,
    pub destination_city: String,
    pub date: NaiveDate,
    pub departure_time: ClockTime,
    pub arrival_time: ClockTime,
    pub price: u32,
    pub distance_km: u32,
}

impl FlightRecord {
    pub(crate) fn check(&self) -> Result<(), SandboxError> {
        if super::key(&self.origin_city) == super::key(&self.destination_city) {
            return Err(SandboxError::Invariant(format!(
                "flight {} has identical origin and destination",
                self.flight_number
            )));
        }
        Ok(())
    }

    /// Minutes in the air; overnight arrivals wrap past midnight.
    pub fn duration_minutes(&self) -> u32 {
        let dep = self.departure_time.minutes() as u32;
        let arr = self.arrival_time.minutes() as u32;
        if arr >= dep {
            arr - dep
        } else {
            arr + 24 * 60 - dep
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccommodationRecord {
    pub name: String,
    pub city: String,
    pub price_per_night: u32,
    pub room_type: RoomType,
    #[serde(with = "prohibitions")]
    pub house_rules: BTreeSet<HouseRule>,
    pub minimum_nights: u32,
    pub max_occupancy: u32,
}

impl AccommodationRecord {
    pub(crate) fn check(&self) -> Result<(), SandboxError> {
        if self.minimum_nights < 1 || self.max_occupancy < 1 {
            return Err(SandboxError::Invariant(format!(
                "accommodation {} needs minimum_nights >= 1 and max_occupancy >= 1",
                self.name
            )));
        }
        Ok(())
    }

    pub fn allows(&self, rule: HouseRule) -> bool {
        !self.house_rules.contains(&rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestaurantRecord {
    pub name: String,
    pub city: String,
    pub cuisines: BTreeSet<Cuisine>,
    pub average_cost: u32,
    pub rating: f64,
}

impl RestaurantRecord {
    pub(crate) fn check(&self) -> Result<(), SandboxError> {
        if !(0.0..=5.0).contains(&self.rating) {
            return Err(SandboxError::Invariant(format!(
                "restaurant {} rating {} outside [0,5]",
                self.name, self.rating
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttractionRecord {
    pub name: String,
    pub city: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundRoute {
    pub origin_city: String,
    pub destination_city: String,
    pub distance_km: u32,
    pub duration_min: u32,
    pub taxi_cost: u32,
    pub self_drive_cost: u32,
}

impl GroundRoute {
    pub(crate) fn check(&self) -> Result<(), SandboxError> {
        if super::key(&self.origin_city) == super::key(&self.destination_city) {
            return Err(SandboxError::Invariant(format!(
                "ground route {} -> {} loops onto itself",
                self.origin_city, self.destination_city
            )));
        }
        Ok(())
    }

    pub fn cost_for(&self, mode: TransportMode) -> Option<u32> {
        match mode {
            TransportMode::Taxi => Some(self.taxi_cost),
            TransportMode::SelfDriving => Some(self.self_drive_cost),
            TransportMode::Flight => None,
        }
    }
}

/// State name to ordered city list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityIndex {
    pub states: BTreeMap<String, Vec<String>>,
}

impl CityIndex {
    pub fn all_cities(&self) -> impl Iterator<Item = (&str, &str)> {
        self.states
            .iter()
            .flat_map(|(s, cs)| cs.iter().map(move |c| (s.as_str(), c.as_str())))
    }
}
