use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Serialize;

use super::records::*;
use super::{key, SandboxError, SandboxStore, StoreData};

/// One file per record class.
#[derive(Debug, Clone)]
pub struct CsvPaths {
    pub cities: PathBuf,
    pub flights: PathBuf,
    pub accommodations: PathBuf,
    pub restaurants: PathBuf,
    pub attractions: PathBuf,
    pub ground: PathBuf,
}

impl CsvPaths {
    /// Conventional file names (`cities.csv`, `flights.csv`, ...) inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            cities: dir.join("cities.csv"),
            flights: dir.join("flights.csv"),
            accommodations: dir.join("accommodations.csv"),
            restaurants: dir.join("restaurants.csv"),
            attractions: dir.join("attractions.csv"),
            ground: dir.join("ground.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub rows: BTreeMap<String, usize>,
}

const CITIES: &[&str] = &["state", "city"];
const FLIGHTS: &[&str] = &[
    "flight_number", "origin", "destination", "date", "dep_time", "arr_time", "price", "distance_km",
];
const ACCOMMODATIONS: &[&str] = &[
    "name", "city", "price_per_night", "room_type", "house_rules", "min_nights", "max_occupancy",
];
const RESTAURANTS: &[&str] = &["name", "city", "cuisines", "avg_cost", "rating"];
const ATTRACTIONS: &[&str] = &["name", "city"];
const GROUND: &[&str] = &[
    "origin", "destination", "distance_km", "duration_min", "taxi_cost", "self_drive_cost",
];

struct Row<'a> {
    file: &'a str,
    line: usize,
    columns: &'a HashMap<String, usize>,
    record: csv::StringRecord,
}

impl Row<'_> {
    fn err(&self, reason: impl Into<String>) -> SandboxError {
        SandboxError::Load { file: self.file.to_string(), line: self.line, reason: reason.into() }
    }

    fn text(&self, col: &str) -> String {
        self.record.get(self.columns[col]).unwrap_or("").trim().to_string()
    }

    fn parse<T: std::str::FromStr>(&self, col: &str) -> Result<T, SandboxError> {
        let raw = self.text(col);
        raw.parse().map_err(|_| self.err(format!("cannot parse {col} value {raw:?}")))
    }

    fn multi(&self, col: &str) -> Vec<String> {
        self.text(col)
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }
}

fn read_rows(
    path: &Path,
    expected: &[&str],
    mut on_row: impl FnMut(&Row<'_>) -> Result<(), SandboxError>,
) -> Result<usize, SandboxError> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| SandboxError::Load { file: file.clone(), line: 0, reason: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| SandboxError::Load { file: file.clone(), line: 1, reason: e.to_string() })?
        .clone();
    let mut columns = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if !expected.contains(&h) {
            return Err(SandboxError::Load { file, line: 1, reason: format!("unknown column {h:?}") });
        }
        columns.insert(h.to_string(), i);
    }
    if let Some(missing) = expected.iter().find(|c| !columns.contains_key(**c)) {
        return Err(SandboxError::Load { file, line: 1, reason: format!("missing column {missing:?}") });
    }
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record
            .map_err(|e| SandboxError::Load { file: file.clone(), line, reason: e.to_string() })?;
        on_row(&Row { file: &file, line, columns: &columns, record })?;
        n += 1;
    }
    Ok(n)
}

/// Loads a store from six CSV files. Every row is validated as it is read,
/// so errors name the offending file and line.
pub fn load_csv(paths: &CsvPaths) -> Result<(SandboxStore, LoadSummary), SandboxError> {
    let mut states: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut known = HashSet::new();
    let mut rows = BTreeMap::new();

    let n = read_rows(&paths.cities, CITIES, |row| {
        let city = row.text("city");
        let state = row.text("state");
        if city.is_empty() || state.is_empty() {
            return Err(row.err("empty state or city"));
        }
        if !known.insert(key(&city)) {
            return Err(row.err(format!("city {city} listed twice")));
        }
        states.entry(state).or_default().push(city);
        Ok(())
    })?;
    rows.insert("cities".to_string(), n);

    let check_city = |row: &Row<'_>, col: &str| -> Result<String, SandboxError> {
        let city = row.text(col);
        if known.contains(&key(&city)) {
            Ok(city)
        } else {
            Err(row.err(format!("{col} {city:?} is not in the cities file")))
        }
    };

    let mut flights = Vec::new();
    let n = read_rows(&paths.flights, FLIGHTS, |row| {
        let record = FlightRecord {
            flight_number: row.text("flight_number"),
            origin_city: check_city(row, "origin")?,
            destination_city: check_city(row, "destination")?,
            date: NaiveDate::parse_from_str(&row.text("date"), "%Y-%m-%d")
                .map_err(|_| row.err(format!("cannot parse date {:?}", row.text("date"))))?,
            departure_time: row.parse("dep_time")?,
            arrival_time: row.parse("arr_time")?,
            price: row.parse("price")?,
            distance_km: row.parse("distance_km")?,
        };
        record.check().map_err(|e| row.err(e.to_string()))?;
        flights.push(record);
        Ok(())
    })?;
    rows.insert("flights".to_string(), n);

    let mut accommodations = Vec::new();
    let n = read_rows(&paths.accommodations, ACCOMMODATIONS, |row| {
        let house_rules = row
            .multi("house_rules")
            .iter()
            .map(|t| HouseRule::from_prohibition_tag(t).map_err(|e| row.err(e)))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let record = AccommodationRecord {
            name: row.text("name"),
            city: check_city(row, "city")?,
            price_per_night: row.parse("price_per_night")?,
            room_type: row.text("room_type").parse().map_err(|e: String| row.err(e))?,
            house_rules,
            minimum_nights: row.parse("min_nights")?,
            max_occupancy: row.parse("max_occupancy")?,
        };
        record.check().map_err(|e| row.err(e.to_string()))?;
        accommodations.push(record);
        Ok(())
    })?;
    rows.insert("accommodations".to_string(), n);

    let mut restaurants = Vec::new();
    let n = read_rows(&paths.restaurants, RESTAURANTS, |row| {
        let record = RestaurantRecord {
            name: row.text("name"),
            city: check_city(row, "city")?,
            cuisines: row.multi("cuisines").into_iter().map(|c| c.to_lowercase()).collect(),
            average_cost: row.parse("avg_cost")?,
            rating: row.parse("rating")?,
        };
        record.check().map_err(|e| row.err(e.to_string()))?;
        restaurants.push(record);
        Ok(())
    })?;
    rows.insert("restaurants".to_string(), n);

    let mut attractions = Vec::new();
    let n = read_rows(&paths.attractions, ATTRACTIONS, |row| {
        attractions.push(AttractionRecord { name: row.text("name"), city: check_city(row, "city")? });
        Ok(())
    })?;
    rows.insert("attractions".to_string(), n);

    let mut ground = Vec::new();
    let n = read_rows(&paths.ground, GROUND, |row| {
        let record = GroundRoute {
            origin_city: check_city(row, "origin")?,
            destination_city: check_city(row, "destination")?,
            distance_km: row.parse("distance_km")?,
            duration_min: row.parse("duration_min")?,
            taxi_cost: row.parse("taxi_cost")?,
            self_drive_cost: row.parse("self_drive_cost")?,
        };
        record.check().map_err(|e| row.err(e.to_string()))?;
        ground.push(record);
        Ok(())
    })?;
    rows.insert("ground".to_string(), n);

    let store = SandboxStore::new(StoreData {
        cities: CityIndex { states },
        flights,
        accommodations,
        restaurants,
        attractions,
        ground,
    })?;
    Ok((store, LoadSummary { rows }))
}
