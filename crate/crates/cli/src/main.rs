//! `mfvision` command-line driver.
//!
//! Every subcommand reads one TOML file. Top-level `domain`, `sensitivity`
//! and `kernel` tables are shared: they are copied into the `[sim]`,
//! `[pde]`, `[lln]`, `[stability]` and `[chaos]` sections that do not set
//! their own.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mfvision::harness::{self, ChaosConfig, LlnConfig, RateTable, StabilityConfig};
use mfvision::particles::{init_cloud, run_interacting};
use mfvision::rng::{stream_rng, INIT_STREAM};
use mfvision::{pde, report, PdeConfig, SimConfig};
use serde::Serialize;
use serde_json::json;
use toml::{Table, Value};

#[derive(Parser)]
#[command(name = "mfvision", version, about = "Mean-field particle experiments with vision-cone interactions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the interacting particle system and write its snapshots.
    Simulate(Common),
    /// Solve the mean-field equation and write density snapshots.
    Pde(Common),
    /// Propagation-of-chaos sweep over N.
    Chaos(Common),
    /// Law of large numbers for the nonlocal velocity.
    LlnVelocity(Common),
    /// Law of large numbers for generalized-boundary masses.
    LlnTheta(Common),
    /// Offset-pair stability experiment for the McKean system.
    Stability(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed given in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Evaluate the experiment's acceptance check; exit 3 if it fails.
    #[arg(long)]
    check: bool,
}

enum Failure {
    Config(String),
    Check(String),
    Run(String),
}

impl From<mfvision::Error> for Failure {
    fn from(e: mfvision::Error) -> Self {
        match e {
            mfvision::Error::Config(_) | mfvision::Error::InvalidInput(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(format!("i/o error: {e}"))
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

const SHARED_KEYS: [&str; 3] = ["domain", "sensitivity", "kernel"];

/// Parsed file plus the seed to use.
struct Input {
    table: Table,
    seed: u64,
}

fn load(common: &Common) -> Outcome<Input> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let table: Table = text.parse().map_err(|e| Failure::Config(format!("malformed TOML: {e}")))?;
    let seed = match (common.seed, table.get("seed")) {
        (Some(s), _) => s,
        (None, Some(Value::Integer(s))) if *s >= 0 => *s as u64,
        (None, Some(_)) => return Err(Failure::Config("seed must be a nonnegative integer".into())),
        (None, None) => 0,
    };
    Ok(Input { table, seed })
}

/// Section `name` with the shared tables filled in.
fn section(root: &Table, name: &str) -> Outcome<Table> {
    let mut sec = match root.get(name) {
        Some(Value::Table(t)) => t.clone(),
        Some(_) => return Err(Failure::Config(format!("[{name}] must be a table"))),
        None => return Err(Failure::Config(format!("missing [{name}] section"))),
    };
    inherit(&mut sec, root);
    Ok(sec)
}

fn inherit(sec: &mut Table, root: &Table) {
    for key in SHARED_KEYS {
        if !sec.contains_key(key) {
            if let Some(v) = root.get(key) {
                sec.insert(key.to_string(), v.clone());
            }
        }
    }
}

/// Nested `[outer.inner]` table, falling back to the top-level `[inner]`.
fn nested(root: &Table, outer: &mut Table, inner: &str) {
    if !outer.contains_key(inner) {
        if let Some(Value::Table(t)) = root.get(inner) {
            outer.insert(inner.to_string(), Value::Table(t.clone()));
        }
    }
    if let Some(Value::Table(t)) = outer.get_mut(inner) {
        inherit(t, root);
    }
}

fn decode<T: serde::de::DeserializeOwned>(table: Table, what: &str) -> Outcome<T> {
    Value::Table(table).try_into().map_err(|e| Failure::Config(format!("invalid [{what}]: {e}")))
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Outcome<Self> {
        fs::create_dir_all(dir)?;
        Ok(Writer { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn put(&mut self, name: &str, body: &str) -> Outcome<()> {
        fs::write(self.dir.join(name), body)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn put_json(&mut self, name: &str, value: &serde_json::Value) -> Outcome<()> {
        let body = serde_json::to_string_pretty(value).map_err(|e| Failure::Run(e.to_string()))?;
        self.put(name, &(body + "\n"))
    }
}

/// Result of one subcommand before the manifest is written.
struct Report {
    config: serde_json::Value,
    check: Option<(bool, String)>,
}

fn echo<T: Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

fn write_rate_table(w: &mut Writer, table: &RateTable) -> Outcome<()> {
    w.put("rate_table.csv", &table.to_csv())?;
    w.put_json("slope.json", &table.slope_json())
}

fn lln_check(table: &RateTable) -> (bool, String) {
    let ok = table.rows_below_bound() && (-0.5..=-0.1).contains(&table.slope);
    (ok, format!("rows below bound: {}, slope {:.3} in [-0.5, -0.1]", table.rows_below_bound(), table.slope))
}

fn simulate(input: &Input, w: &mut Writer, check: bool) -> Outcome<Report> {
    let mut sim: SimConfig = decode(section(&input.table, "sim")?, "sim")?;
    sim.seed = input.seed;
    if sim.snapshots.is_empty() {
        sim.snapshots = vec![0.0, sim.steps() as f64 * sim.dt()];
    }
    sim.validate()?;
    let cloud = init_cloud(&sim, &mut stream_rng(sim.seed, INIT_STREAM))?;
    let (last, snaps) = run_interacting(cloud, &sim)?;
    w.put("snapshots.csv", &report::snapshots_csv(&snaps, last.dim()))?;
    let check = check.then(|| {
        let inside = snaps.iter().all(|s| s.positions.chunks_exact(last.dim()).all(|p| sim.domain.contains_tol(p)));
        let monotone = snaps.windows(2).all(|p| p[0].reflection_totals.iter().zip(&p[1].reflection_totals).all(|(a, b)| a <= b));
        (inside && monotone, format!("confined: {inside}, reflection totals nondecreasing: {monotone}"))
    });
    Ok(Report { config: echo(&sim), check })
}

fn solve_pde(input: &Input, w: &mut Writer, check: bool) -> Outcome<Report> {
    let cfg: PdeConfig = decode(section(&input.table, "pde")?, "pde")?;
    cfg.validate()?;
    let sol = pde::solve(&cfg)?;
    for (k, snap) in sol.snapshots().iter().enumerate() {
        w.put(&format!("density_{k:03}.csv"), &report::density_csv(snap))?;
    }
    w.put("summary.csv", &report::pde_summary_csv(&sol))?;
    w.put("linf.csv", &report::linf_history_csv(&sol))?;
    let check = check.then(|| {
        let m0 = sol.snapshots()[0].mass();
        let drift = sol.snapshots().iter().map(|s| (s.mass() - m0).abs() / m0).fold(0.0, f64::max);
        let min = sol.snapshots().iter().map(|s| s.min_value()).fold(f64::INFINITY, f64::min);
        (drift <= 1e-12 && min >= 0.0, format!("relative mass drift {drift:.2e}, min cell {min:.2e}"))
    });
    Ok(Report { config: echo(&cfg), check })
}

fn lln(input: &Input, w: &mut Writer, check: bool, theta: bool) -> Outcome<Report> {
    let cfg: LlnConfig = decode(section(&input.table, "lln")?, "lln")?;
    let table = if theta { harness::run_lln_theta(&cfg, input.seed)? } else { harness::run_lln_velocity(&cfg, input.seed)? };
    write_rate_table(w, &table)?;
    Ok(Report { config: echo(&cfg), check: check.then(|| lln_check(&table)) })
}

fn stability(input: &Input, w: &mut Writer, check: bool) -> Outcome<Report> {
    let mut sec = section(&input.table, "stability")?;
    nested(&input.table, &mut sec, "sim");
    nested(&input.table, &mut sec, "pde");
    let cfg: StabilityConfig = decode(sec, "stability")?;
    let rep = harness::run_stability(&cfg, input.seed)?;
    w.put("stability.csv", &rep.to_csv())?;
    let growth: Vec<_> = rep.growth_rates.iter().map(|(d, l)| json!({"delta": d, "rate": l})).collect();
    w.put_json("growth.json", &json!({"growth_rates": growth, "max_spread": rep.max_spread}))?;
    let check = check.then(|| (rep.max_spread <= 0.2, format!("relative spread {:.3} <= 0.2", rep.max_spread)));
    Ok(Report { config: echo(&cfg), check })
}

fn chaos(input: &Input, w: &mut Writer, check: bool) -> Outcome<Report> {
    let mut sec = section(&input.table, "chaos")?;
    nested(&input.table, &mut sec, "sim");
    nested(&input.table, &mut sec, "pde");
    if let Some(Value::Table(sim)) = sec.get_mut("sim") {
        sim.entry("n").or_insert(Value::Integer(1));
    }
    let cfg: ChaosConfig = decode(sec, "chaos")?;
    let out = harness::run_chaos(&cfg, input.seed)?;
    write_rate_table(w, &out.table)?;
    let mut replicas = String::from("N,replica,value\n");
    for (row, vals) in out.table.rows.iter().zip(&out.replica_values) {
        for (r, v) in vals.iter().enumerate() {
            replicas.push_str(&format!("{},{r},{v:e}\n", row.n));
        }
    }
    w.put("replicas.csv", &replicas)?;
    w.put("pde_summary.csv", &report::pde_summary_csv(&out.provider))?;
    let t = &out.table;
    let check = check.then(|| {
        let ok = t.strictly_decreasing() && t.slope <= -0.15 && t.slope + t.ci < 0.0;
        (ok, format!("strictly decreasing: {}, slope {:.3} +- {:.3}", t.strictly_decreasing(), t.slope, t.ci))
    });
    Ok(Report { config: echo(&cfg), check })
}

fn run(cli: Cli) -> Outcome<()> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Pde(c) => ("pde", c),
        Command::Chaos(c) => ("chaos", c),
        Command::LlnVelocity(c) => ("lln-velocity", c),
        Command::LlnTheta(c) => ("lln-theta", c),
        Command::Stability(c) => ("stability", c),
    };
    let input = load(common)?;
    let mut w = Writer::new(&common.out)?;
    let start = Instant::now();
    let rep = match &cli.command {
        Command::Simulate(_) => simulate(&input, &mut w, common.check)?,
        Command::Pde(_) => solve_pde(&input, &mut w, common.check)?,
        Command::Chaos(_) => chaos(&input, &mut w, common.check)?,
        Command::LlnVelocity(_) => lln(&input, &mut w, common.check, false)?,
        Command::LlnTheta(_) => lln(&input, &mut w, common.check, true)?,
        Command::Stability(_) => stability(&input, &mut w, common.check)?,
    };
    let wall = start.elapsed().as_secs_f64();
    let check = rep.check.as_ref().map(|(ok, detail)| json!({"passed": ok, "detail": detail}));
    let mut outputs = w.files.clone();
    outputs.push("manifest.json".into());
    let manifest = json!({
        "command": name,
        "seed": input.seed,
        "config": rep.config,
        "config_path": common.config.display().to_string(),
        "versions": {"mfvision": mfvision::VERSION, "cli": env!("CARGO_PKG_VERSION")},
        "wall_time_s": wall,
        "outputs": outputs,
        "check": check,
    });
    w.put_json("manifest.json", &manifest)?;
    match rep.check {
        Some((false, detail)) => Err(Failure::Check(detail)),
        Some((true, detail)) => {
            println!("check passed: {detail}");
            Ok(())
        }
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
