//! A desk-scale training loop on a micro sandbox.
//!
//! The policy emits whole templated turns. For the first `max_turns`
//! contexts it picks either one of the seven tool calls or "answer"; once it
//! answers, eight slot contexts choose the pieces of a three-day plan
//! (destination, the two legs, lodging for both nights, three meals and
//! one attraction). The resulting turn texts are played through a real
//! [`Episode`] and scored with the shaped reward, so the learner sees exactly
//! what an external trainer would.
//!
//! A token index maps to an option by `token % option_count`; the vocabulary
//! size is a common multiple of every option count so the initial policy is
//! uniform over options.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grpo_objective, ClipConfig, GrpoError, ToyPolicy, Trajectory};
use crate::episode::{Episode, EpisodeConfig};
use crate::plan::{Attractions, DayCity, DayPlan, ItineraryPlan, TransportLeg, Transportation, NONE};
use crate::reward::{CurriculumSchedule, RewardBreakdown};
use crate::sandbox::{
    generate_query_with, generate_sandbox, Difficulty, QueryOptions, QuerySpec, SandboxError, SandboxStore,
    SizeProfile, TransportMode,
};
use crate::tools::ToolName;

/// Leg choices offered for each transfer day.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegChoice {
    FlightOnDate,
    FlightOtherDate,
    Taxi,
    SelfDriving,
}

impl LegChoice {
    pub const ALL: [LegChoice; 4] = [Self::FlightOnDate, Self::FlightOtherDate, Self::Taxi, Self::SelfDriving];
}

/// Slot names in context order. One accommodation covers both nights of
/// the stay, as a booking would.
pub const SLOTS: [&str; 8] = [
    "destination",
    "outbound",
    "return",
    "accommodation",
    "dinner_day1",
    "lunch_day2",
    "breakfast_day3",
    "attraction_day2",
];

#[derive(Debug, Clone)]
pub struct ToyEnv {
    store: Arc<SandboxStore>,
    query: QuerySpec,
    episode: EpisodeConfig,
    max_turns: usize,
    vocab: usize,
    cities: Vec<String>,
    accommodations: Vec<String>,
    restaurants: Vec<String>,
    attractions: Vec<String>,
}

/// Outcome of one sampled episode.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub steps: Vec<(usize, usize)>,
    pub turns: Vec<String>,
    pub reward: RewardBreakdown,
}

impl ToyEnv {
    /// Micro sandbox from `seed` with a three-day query of the given
    /// difficulty.
    pub fn micro(seed: u64, difficulty: Difficulty) -> Result<Self, SandboxError> {
        let store = generate_sandbox(seed, &SizeProfile::micro())?;
        let opts = QueryOptions { trip_days: Some(3), party_size: None };
        let query = generate_query_with(&store, seed, difficulty, &opts)?.spec;
        Ok(Self::new(Arc::new(store), query, 3))
    }

    pub fn new(store: Arc<SandboxStore>, query: QuerySpec, max_turns: usize) -> Self {
        let names = |v: Vec<String>| {
            let mut v = v;
            v.sort();
            v
        };
        let cities = names(store.cities().all_cities().map(|(_, c)| c.to_string()).collect());
        let accommodations = names(store.accommodations().iter().map(|a| a.name.clone()).collect());
        let restaurants = names(store.restaurants().iter().map(|r| r.name.clone()).collect());
        let attractions = names(store.attractions().iter().map(|a| a.name.clone()).collect());
        let mut env = Self {
            store,
            query,
            episode: EpisodeConfig { max_assistant_turns: max_turns as u32, ..EpisodeConfig::default() },
            max_turns,
            vocab: 1,
            cities,
            accommodations,
            restaurants,
            attractions,
        };
        let lcm = |a: usize, b: usize| a / gcd(a, b) * b;
        env.vocab = (0..SLOTS.len()).map(|s| env.option_count(s)).fold(ToolName::ALL.len() + 1, lcm);
        env
    }

    pub fn store(&self) -> &Arc<SandboxStore> {
        &self.store
    }

    pub fn query(&self) -> &QuerySpec {
        &self.query
    }

    pub fn contexts(&self) -> usize {
        self.max_turns + SLOTS.len()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn option_count(&self, slot: usize) -> usize {
        match slot {
            0 => self.cities.len(),
            1 | 2 => LegChoice::ALL.len(),
            3 => self.accommodations.len() + 1,
            4..=6 => self.restaurants.len() + 1,
            7 => self.attractions.len() + 1,
            _ => 0,
        }
    }

    fn pick(list: &[String], i: usize) -> String {
        list.get(i).cloned().unwrap_or_else(|| NONE.to_string())
    }

    fn leg(&self, from: &str, to: &str, day: usize, choice: LegChoice) -> Transportation {
        let date = self.query.date_of_day(day);
        let flight = match choice {
            LegChoice::FlightOnDate => self.store.flights_between(from, to, Some(date)).into_iter().next(),
            LegChoice::FlightOtherDate => {
                let all = self.store.flights_between(from, to, None);
                all.iter().find(|f| f.date != date).or(all.first()).copied()
            }
            _ => None,
        };
        let leg = match (choice, flight) {
            (LegChoice::FlightOnDate | LegChoice::FlightOtherDate, f) => TransportLeg {
                mode: TransportMode::Flight,
                from: from.into(),
                to: to.into(),
                duration: f.map(|f| format!("{} mins", f.duration_minutes())).unwrap_or_else(|| "unknown".into()),
                distance: f.map(|f| format!("{} km", f.distance_km)).unwrap_or_else(|| "unknown".into()),
                cost: f.map(|f| i64::from(f.price)).unwrap_or(0),
                flight_number: Some(f.map(|f| f.flight_number.clone()).unwrap_or_else(|| "UNKNOWN".into())),
                departure_time: f.map(|f| f.departure_time.to_string()),
                arrival_time: f.map(|f| f.arrival_time.to_string()),
            },
            (ground, _) => {
                let mode = if ground == LegChoice::Taxi { TransportMode::Taxi } else { TransportMode::SelfDriving };
                let route = self.store.ground_between(from, to);
                TransportLeg {
                    mode,
                    from: from.into(),
                    to: to.into(),
                    duration: route.map(|g| format!("{} mins", g.duration_min)).unwrap_or_else(|| "unknown".into()),
                    distance: route.map(|g| format!("{} km", g.distance_km)).unwrap_or_else(|| "unknown".into()),
                    cost: route.and_then(|g| g.cost_for(mode)).map(i64::from).unwrap_or(0),
                    flight_number: None,
                    departure_time: None,
                    arrival_time: None,
                }
            }
        };
        Transportation::Leg(leg)
    }

    /// The plan described by one option index per slot.
    pub fn build_plan(&self, choice: &[usize; 8]) -> ItineraryPlan {
        let origin = self.query.origin_city.clone();
        let dest = Self::pick(&self.cities, choice[0]);
        let day = |n: i64, city: DayCity, transportation, attraction, acc: String, meals: [String; 3]| {
            let [breakfast, lunch, dinner] = meals;
            DayPlan { days: n, city, transportation, attraction, accommodation: acc, breakfast, lunch, dinner }
        };
        let none = || NONE.to_string();
        let attraction = match Self::pick(&self.attractions, choice[7]) {
            n if n == NONE => Attractions::NotPlanned,
            n => Attractions::Visit(vec![n]),
        };
        ItineraryPlan {
            days: vec![
                day(
                    1,
                    DayCity::Transfer { from: origin.clone(), to: dest.clone() },
                    self.leg(&origin, &dest, 0, LegChoice::ALL[choice[1]]),
                    Attractions::NotPlanned,
                    Self::pick(&self.accommodations, choice[3]),
                    [none(), none(), Self::pick(&self.restaurants, choice[4])],
                ),
                day(
                    2,
                    DayCity::Stay(dest.clone()),
                    Transportation::NotNeeded,
                    attraction,
                    Self::pick(&self.accommodations, choice[3]),
                    [none(), Self::pick(&self.restaurants, choice[5]), none()],
                ),
                day(
                    3,
                    DayCity::Transfer { from: dest.clone(), to: origin.clone() },
                    self.leg(&dest, &origin, 2, LegChoice::ALL[choice[2]]),
                    Attractions::NotPlanned,
                    none(),
                    [Self::pick(&self.restaurants, choice[6]), none(), none()],
                ),
            ],
        }
    }

    fn tool_turn(&self, tool: ToolName) -> String {
        let dest = match &self.query.destination {
            crate::sandbox::Destination::City(c) | crate::sandbox::Destination::State(c) => c.clone(),
        };
        let origin = &self.query.origin_city;
        let args = match tool {
            ToolName::SearchFlights => serde_json::json!({"origin": origin, "destination": dest, "date": self.query.departure_date.to_string()}),
            ToolName::SearchGroundTransportation => serde_json::json!({"origin": origin, "destination": dest}),
            ToolName::GetCities => serde_json::json!({"state": self.store.state_of(origin).unwrap_or_default()}),
            ToolName::Calculator => serde_json::json!({"expression": "1+1"}),
            _ => serde_json::json!({"city": dest}),
        };
        format!(
            "<tool_call>{}</tool_call>",
            crate::json::canonical(&serde_json::json!({"name": tool.as_str(), "arguments": args}))
        )
    }

    pub fn answer_turn(plan: &ItineraryPlan) -> String {
        format!("<answer>{}</answer>", plan.to_json())
    }

    /// Plays a list of turns through a fresh episode and scores it.
    pub fn play(&self, turns: &[String], lambda: crate::reward::LambdaVector) -> RewardBreakdown {
        let (mut ep, _) = Episode::reset(self.store.clone(), self.query.clone(), self.episode.clone())
            .expect("toy config is valid");
        for t in turns {
            if ep.is_done() {
                break;
            }
            ep.step(t).expect("episode is active");
        }
        ep.score(lambda).reward
    }

    /// Samples one episode from `policy`.
    pub fn rollout(&self, policy: &ToyPolicy, rng: &mut ChaCha8Rng, lambda: crate::reward::LambdaVector) -> Rollout {
        let mut steps = Vec::new();
        let mut turns = Vec::new();
        let actions = ToolName::ALL.len() + 1;
        for t in 0..self.max_turns {
            let tok = policy.sample(t, rng);
            steps.push((t, tok));
            let action = tok % actions;
            if action == ToolName::ALL.len() {
                let mut choice = [0usize; 8];
                for (s, slot) in choice.iter_mut().enumerate() {
                    let ctx = self.max_turns + s;
                    let tok = policy.sample(ctx, rng);
                    steps.push((ctx, tok));
                    *slot = tok % self.option_count(s);
                }
                turns.push(Self::answer_turn(&self.build_plan(&choice)));
                break;
            }
            turns.push(self.tool_turn(ToolName::ALL[action]));
        }
        let reward = self.play(&turns, lambda);
        Rollout { steps, turns, reward }
    }

    /// Fraction of `episodes` sampled rollouts that pass every constraint.
    pub fn pass_rate(&self, policy: &ToyPolicy, episodes: usize, rng: &mut ChaCha8Rng) -> f64 {
        let lambda = crate::reward::LambdaVector::stage(3).expect("stage 3");
        let passed = (0..episodes).filter(|_| self.rollout(policy, rng, lambda).reward.passed()).count();
        passed as f64 / episodes.max(1) as f64
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    /// Gradient steps per collected group.
    pub epochs: usize,
    pub clip: ClipConfig,
    pub schedule: CurriculumSchedule,
    pub seed: u64,
    /// Sampled episodes for the initial and final pass-rate estimates.
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            group_size: 8,
            learning_rate: 5.0,
            epochs: 2,
            clip: ClipConfig::default(),
            schedule: CurriculumSchedule::constant(crate::reward::LambdaVector::stage(1).expect("stage 1")),
            seed: 0,
            eval_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    /// On-policy pass fraction of the iteration's group.
    pub pass_rate: f64,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub initial_pass_rate: f64,
    pub final_pass_rate: f64,
    pub policy: ToyPolicy,
}

const EVAL_SALT: u64 = 0x5eed_e7a1;

/// Runs grouped clipped updates with plain gradient ascent. Deterministic
/// in `config.seed`.
pub fn train_toy(env: &ToyEnv, config: &TrainConfig) -> Result<TrainReport, GrpoError> {
    config.clip.check()?;
    if config.group_size < 2 {
        return Err(GrpoError::GroupTooSmall(config.group_size));
    }
    let mut policy = ToyPolicy::zeros(env.contexts(), env.vocab());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let initial_pass_rate = env.pass_rate(&policy, config.eval_episodes, &mut ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_SALT));

    let mut curve = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let lambda = config.schedule.lambda_at(iteration as u64);
        let rollouts: Vec<Rollout> = (0..config.group_size).map(|_| env.rollout(&policy, &mut rng, lambda)).collect();
        let group: Vec<Trajectory> = rollouts
            .iter()
            .map(|r| Trajectory::sampled_from(&policy, r.reward.total_f64(), r.steps.clone()))
            .collect();

        let mut clip_fraction = 0.0;
        for epoch in 0..config.epochs {
            let out = grpo_objective(&group, &policy, &config.clip)?;
            if epoch + 1 == config.epochs {
                clip_fraction = out.clip_fraction;
            }
            for (t, g) in policy.theta.iter_mut().zip(&out.gradient) {
                *t += config.learning_rate * g;
            }
            if policy.theta.iter().any(|t| !t.is_finite()) {
                return Err(GrpoError::NonFinite { trajectory: iteration, what: "policy parameters after update" });
            }
        }
        let n = config.group_size as f64;
        curve.push(CurvePoint {
            iteration,
            mean_reward: group.iter().map(|t| t.reward).sum::<f64>() / n,
            pass_rate: rollouts.iter().filter(|r| r.reward.passed()).count() as f64 / n,
            mean_t: group.iter().map(|t| t.steps.len() as f64).sum::<f64>() / n,
            clip_fraction,
        });
    }
    let final_pass_rate = env.pass_rate(
        &policy,
        config.eval_episodes,
        &mut ChaCha8Rng::seed_from_u64(config.seed ^ EVAL_SALT ^ 1),
    );
    Ok(TrainReport { curve, initial_pass_rate, final_pass_rate, policy })
}

/// Writes the curve as CSV with a header row.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
