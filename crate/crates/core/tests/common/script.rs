//! Deterministic request script for protocol replay tests.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use plangym::gateway::{Gateway, GatewayConfig};
use plangym::sandbox::{generate_query_with, generate_sandbox, Difficulty, QueryOptions};
use plangym::{QuerySpec, SandboxStore, SizeProfile};
use serde_json::json;

pub const EPISODES: usize = 50;

pub struct World {
    pub store: Arc<SandboxStore>,
    pub queries: BTreeMap<String, QuerySpec>,
    pub witnesses: BTreeMap<String, String>,
    pub config: GatewayConfig,
}

pub fn world() -> World {
    let store = generate_sandbox(11, &SizeProfile::micro()).unwrap();
    let mut queries = BTreeMap::new();
    let mut witnesses = BTreeMap::new();
    for seed in 0..6 {
        let d = Difficulty::ALL[seed as usize % 3];
        let g = generate_query_with(&store, seed, d, &QueryOptions { trip_days: Some(3), party_size: None }).unwrap();
        witnesses.insert(g.spec.query_id.clone(), g.witness.to_json());
        queries.insert(g.spec.query_id.clone(), g.spec);
    }
    let config = GatewayConfig::parse("max_assistant_turns=4\nschedule=0:stage1;20:stage2;40:stage3\n").unwrap();
    World { store: Arc::new(store), queries, witnesses, config }
}

fn tool(name: &str, args: serde_json::Value) -> String {
    format!("<tool_call>{}</tool_call>", json!({"name": name, "arguments": args}))
}

/// Turns for episode `i`, cycling through answer styles.
fn turns(i: usize, q: &QuerySpec, witness: &str) -> Vec<String> {
    let dest = match &q.destination {
        plangym::sandbox::Destination::City(c) | plangym::sandbox::Destination::State(c) => c.clone(),
    };
    let flights = tool(
        "search_flights",
        json!({"origin": q.origin_city, "destination": dest, "date": q.departure_date.to_string()}),
    );
    match i % 6 {
        0 => vec![format!("<answer>{witness}</answer>")],
        1 => vec![flights, tool("calculator", json!({"expression": "(120+80)*2"})), format!("<answer>{witness}</answer>")],
        2 => vec!["<tool_call>{not json</tool_call>".into(), "thinking out loud".into(), "<answer>not a plan</answer>".into()],
        3 => vec![tool("search_restaurants", json!({"city": dest})), "<answer>[]</answer>".into()],
        4 => (0..5).map(|k| tool("search_attractions", json!({"city": if k % 2 == 0 { dest.clone() } else { "Atlantis".to_string() }}))).collect(),
        _ => {
            let mut plan: serde_json::Value = serde_json::from_str(witness).unwrap();
            // Serve the first real meal again on the following day.
            if let Some(days) = plan.as_array_mut().filter(|d| d.len() >= 2) {
                let n = days.len();
                let meal = (0..n).find_map(|d| {
                    ["breakfast", "lunch", "dinner"].iter().find(|m| days[d][**m] != "-").map(|m| (d, days[d][*m].clone()))
                });
                if let Some((d, meal)) = meal {
                    days[(d + 1) % n]["dinner"] = meal;
                }
            }
            vec![flights.clone(), flights, format!("<answer>{plan}</answer>")]
        }
    }
}

/// Request lines for 50 interleaved episodes plus a few malformed lines.
pub fn requests(w: &World) -> Vec<String> {
    let ids: Vec<&String> = w.queries.keys().collect();
    let mut lines = vec![json!({"op": "config"}).to_string()];
    for batch in (0..EPISODES).collect::<Vec<_>>().chunks(5) {
        let mut pending: Vec<(String, Vec<String>)> = Vec::new();
        for &i in batch {
            let eid = format!("ep{i:02}");
            let qid = ids[i % ids.len()];
            let payload = if i % 7 == 3 {
                json!({"seed": i, "difficulty": "medium", "sampler": "t=0.6", "step": i})
            } else {
                json!({"query_id": qid, "sampler": "greedy", "step": i})
            };
            lines.push(json!({"op": "reset", "episode_id": eid, "payload": payload}).to_string());
            let witness = if i % 7 == 3 { "[]".to_string() } else { w.witnesses[qid].clone() };
            let spec = &w.queries[qid];
            pending.push((eid, turns(i, spec, &witness)));
        }
        // Round-robin one turn per live episode.
        let mut k = 0;
        while pending.iter().any(|(_, t)| k < t.len()) {
            for (eid, t) in &pending {
                if let Some(text) = t.get(k) {
                    lines.push(json!({"op": "step", "episode_id": eid, "payload": {"text": text}}).to_string());
                }
            }
            k += 1;
        }
        for (eid, _) in &pending {
            lines.push(json!({"op": "score", "episode_id": eid}).to_string());
            lines.push(json!({"op": "close", "episode_id": eid}).to_string());
        }
        lines.push(json!({"op": "step", "episode_id": pending[0].0, "payload": {"text": "late"}}).to_string());
        lines.push(json!({"op": "teleport", "episode_id": "x"}).to_string());
        lines.push("{\"op\": \"reset\", \"episode_id\": ".to_string());
    }
    lines
}

/// Shared byte buffer usable as a gateway dump sink.
#[derive(Clone, Default)]
pub struct Buffer(pub Arc<Mutex<Vec<u8>>>);

impl std::io::Write for Buffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

/// Replays `lines` against a fresh gateway; returns the transcript and the
/// trajectory dump.
pub fn replay(w: &World, lines: &[String]) -> (String, String) {
    let dump = Buffer::default();
    let gw = Gateway::new(w.store.clone(), w.queries.clone(), w.config.clone()).with_dump(Box::new(dump.clone()));
    let mut transcript = String::new();
    for l in lines {
        transcript.push_str(&gw.handle_line(l));
        transcript.push('\n');
    }
    let dump = String::from_utf8(dump.0.lock().unwrap().clone()).unwrap();
    (transcript, dump)
}

/// Query table for scoring a dump, including queries created by seed.
pub fn all_queries(w: &World) -> BTreeMap<String, QuerySpec> {
    let mut out = w.queries.clone();
    for i in (0..EPISODES).filter(|i| i % 7 == 3) {
        let g = plangym::sandbox::generate_query(&w.store, i as u64, Difficulty::Medium).unwrap();
        out.insert(g.spec.query_id.clone(), g.spec);
    }
    out
}
