use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use plangym::analytics::{self, FlopsRecord};
use plangym::gateway::{Gateway, GatewayConfig};
use plangym::grpo::toy::{train_toy, write_curve_csv, ToyEnv, TrainConfig};
use plangym::json::canonical;
use plangym::reward::score_answer;
use plangym::sandbox::{generate_query, generate_sandbox, Difficulty};
use plangym::{CurriculumSchedule, LambdaVector, QuerySpec, SandboxStore, SizeProfile};

#[derive(Parser)]
#[command(name = "plangym", version, about = "Itinerary-planning RL environment and reward lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sandbox store as JSON.
    GenSandbox {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// micro, small or medium
        #[arg(long, default_value = "small")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate queries (JSONL) against a store.
    GenQueries {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// easy, medium, hard or mixed (cycles through all three)
        #[arg(long, default_value = "mixed")]
        difficulty: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write each witness plan to DIR/<query_id>.json.
        #[arg(long)]
        witness_dir: Option<PathBuf>,
    },
    /// Serve the JSONL protocol on stdio, or TCP with --listen.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// JSON or key=value config file; PLANGYM_* variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        /// Append a trajectory record per finished episode.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Score one answer text against a query.
    ScorePlan {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        query: String,
        /// stage1, stage2, stage3 or custom:a,b,c,d,e
        #[arg(long, default_value = "stage3")]
        lambda: String,
    },
    /// Re-score a trajectory dump and print run metrics.
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
    },
    /// GRPO on the micro toy environment; writes the learning curve CSV.
    TrainToy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "easy")]
        difficulty: String,
        #[arg(long, default_value = "stage1")]
        lambda: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics JSON, failure taxonomy, tool transitions and FLOPs CSVs.
    Report {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        /// CSV with columns mfu,f_peak,devices,epochs,t_policy
        #[arg(long)]
        flops: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_store(path: &Path) -> Result<SandboxStore> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing store {}", path.display()))
}

fn load_queries(path: &Path) -> Result<BTreeMap<String, QuerySpec>> {
    let mut out = BTreeMap::new();
    for (i, line) in read(path)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let q: QuerySpec =
            serde_json::from_str(line).with_context(|| format!("{}:{}: bad query", path.display(), i + 1))?;
        out.insert(q.query_id.clone(), q);
    }
    Ok(out)
}

fn parse_lambda(s: &str) -> Result<LambdaVector> {
    s.parse().map_err(|e| anyhow!("{e}"))
}

fn parse_difficulty(s: &str) -> Result<Difficulty> {
    s.parse().map_err(|e: String| anyhow!(e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSandbox { seed, profile, out } => {
            let p = SizeProfile::by_name(&profile).ok_or_else(|| anyhow!("unknown profile {profile:?}"))?;
            let store = generate_sandbox(seed, &p)?;
            let mut w = create(&out)?;
            writeln!(w, "{}", canonical(&store))?;
            w.flush()?;
        }
        Command::GenQueries { store, count, seed, difficulty, out, witness_dir } => {
            let store = load_store(&store)?;
            let fixed = if difficulty == "mixed" { None } else { Some(parse_difficulty(&difficulty)?) };
            if let Some(dir) = &witness_dir {
                fs::create_dir_all(dir)?;
            }
            let mut w = create(&out)?;
            for i in 0..count {
                let d = fixed.unwrap_or(Difficulty::ALL[(i % 3) as usize]);
                let g = generate_query(&store, seed + i, d)?;
                writeln!(w, "{}", canonical(&g.spec))?;
                if let Some(dir) = &witness_dir {
                    fs::write(dir.join(format!("{}.json", g.spec.query_id)), g.witness.to_json_pretty())?;
                }
            }
            w.flush()?;
        }
        Command::Serve { store, queries, config, listen, dump } => {
            let store = load_store(&store)?;
            let queries = queries.as_deref().map(load_queries).transpose()?.unwrap_or_default();
            let mut cfg = match config {
                Some(p) => GatewayConfig::parse(&read(&p)?)?,
                None => GatewayConfig::default(),
            };
            cfg.apply_env(std::env::vars())?;
            let mut gw = Gateway::new(Arc::new(store), queries, cfg);
            if let Some(p) = dump {
                let f = fs::OpenOptions::new().create(true).append(true).open(&p)?;
                gw = gw.with_dump(Box::new(f));
            }
            match listen {
                Some(addr) => Arc::new(gw).serve_tcp(addr)?,
                None => gw.serve_stdio()?,
            }
        }
        Command::ScorePlan { store, queries, plan, query, lambda } => {
            let store = load_store(&store)?;
            let queries = load_queries(&queries)?;
            let spec = queries.get(&query).ok_or_else(|| anyhow!("unknown query {query:?}"))?;
            let scored = score_answer(&store, spec, Some(&read(&plan)?), parse_lambda(&lambda)?);
            println!("{}", canonical(&scored));
        }
        Command::Eval { store, queries, trajectories } => {
            let store = load_store(&store)?;
            let queries = load_queries(&queries)?;
            let records = analytics::read_jsonl(File::open(&trajectories)?)?;
            println!("{}", canonical(&analytics::score_run(&records, &store, &queries)?));
        }
        Command::TrainToy { seed, difficulty, lambda, iterations, learning_rate, group_size, out } => {
            let env = ToyEnv::micro(seed, parse_difficulty(&difficulty)?)?;
            let mut cfg = TrainConfig {
                seed,
                schedule: CurriculumSchedule::constant(parse_lambda(&lambda)?),
                ..TrainConfig::default()
            };
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
            cfg.group_size = group_size.unwrap_or(cfg.group_size);
            let report = train_toy(&env, &cfg)?;
            write_curve_csv(&report.curve, create(&out)?)?;
            println!(
                "{}",
                serde_json::json!({
                    "initial_pass_rate": report.initial_pass_rate,
                    "final_pass_rate": report.final_pass_rate,
                    "iterations": cfg.iterations,
                })
            );
        }
        Command::Report { store, queries, trajectories, flops, out_dir } => {
            let store = load_store(&store)?;
            let queries = load_queries(&queries)?;
            let records = analytics::read_jsonl(File::open(&trajectories)?)?;
            fs::create_dir_all(&out_dir)?;
            let metrics = analytics::score_run(&records, &store, &queries)?;
            fs::write(out_dir.join("metrics.json"), canonical(&metrics) + "\n")?;
            analytics::classify_failures(&records, &store, &queries)?.write_csv(create(&out_dir.join("taxonomy.csv"))?)?;
            analytics::transition_matrix(&records).write_csv(create(&out_dir.join("transitions.csv"))?)?;
            let flops: Vec<FlopsRecord> = match flops {
                Some(p) => analytics::read_flops_csv(File::open(&p)?)?,
                None => Vec::new(),
            };
            analytics::write_flops_csv(&flops, create(&out_dir.join("flops.csv"))?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            let msg = serde_json::json!({ "error": e.to_string(), "causes": chain });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
