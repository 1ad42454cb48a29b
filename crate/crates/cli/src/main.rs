// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use offswitch_core::attacks::{key_theft_campaign, AttackReport};
use offswitch_core::chip::audit_bypass;
use offswitch_core::entropy::{collision_probability, lifetime_license_count};
use offswitch_core::fleet::build_fleet;
use offswitch_core::goldens::{regenerate_goldens, validate_traceability, verify_goldens};
use offswitch_core::scenario::{
    metrics_json, run_scenario, KeyAction, KeyEvent, ScenarioConfig, ScenarioError,
};
use offswitch_core::variants::preshared_bruteforce_estimate;
use offswitch_core::BatchId;

const EXIT_FINDING: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "offswitch",
    version,
    about = "Fleet simulator for license-gated AI chips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write reports to a directory.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for parallel campaign trials.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Audit every chip of the configured fleet for ungated paths.
    Audit {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Closed-form calculators.
    Calc {
        #[command(subcommand)]
        what: Calc,
    },
    /// Authorizer key incidents.
    Keys {
        #[command(subcommand)]
        action: Keys,
    },
    /// Golden vectors and the traceability matrix.
    Goldens {
        #[command(subcommand)]
        action: Goldens,
    },
}

#[derive(Subcommand)]
enum Calc {
    /// Lifetime license count: blocks x chips x licenses/day x years x 365.
    Licenses {
        blocks_per_chip: f64,
        chips: f64,
        per_day: f64,
        years: f64,
    },
    /// Chance that a fresh random nonce repeats one of `prior` earlier nonces.
    Collision { prior: f64, bits: u32 },
    /// Brute-force cost of forging a pre-shared-bits license.
    Preshared {
        n: usize,
        k: usize,
        revealed_fraction: f64,
        delay_seconds: f64,
    },
}

#[derive(Subcommand)]
enum Keys {
    /// Steal one batch's signing keys and forge licenses fleet-wide.
    Steal {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        batch: u32,
    },
    /// Destroy batch keys at a given time, then simulate.
    Destroy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        batches: Vec<u32>,
        #[arg(long)]
        backups_also: bool,
        #[arg(long, default_value_t = 0)]
        at: u64,
    },
    /// Destroy live batch keys, restore them from backup later, then simulate.
    Restore {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        batch: u32,
        #[arg(long, default_value_t = 0)]
        at: u64,
        /// Restore time; defaults to the destruction time.
        #[arg(long)]
        restore_at: Option<u64>,
    },
}

#[derive(Subcommand)]
enum Goldens {
    /// Check bundled vectors byte-exactly and validate the traceability matrix.
    Verify {
        #[arg(long, default_value = "fixtures/goldens")]
        dir: PathBuf,
        #[arg(long, default_value = "fixtures/traceability.md")]
        traceability: PathBuf,
    },
    /// Rewrite the golden files from the current encoders.
    Regen {
        #[arg(long, default_value = "fixtures/goldens")]
        dir: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Invariant(_) => EXIT_INVARIANT,
            ScenarioError::Config(_) | ScenarioError::Fleet(_) => EXIT_CONFIG,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_INVARIANT, format!("{}: {e}", path.display()))
}

fn load(args: &ConfigArgs) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", args.config.display())))?;
    let mut cfg = ScenarioConfig::parse(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn run(args: &ConfigArgs, out: &Path) -> Result<(), Failure> {
    let cfg = load(args)?;
    let outcome = run_scenario(&cfg)?;
    let m = &outcome.metrics;

    let topo = out.join("topology");
    let bundles = out.join("bundles");
    for dir in [out, &topo, &bundles] {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write(&out.join("metrics.json"), metrics_json(m))?;
    let mut csv = format!("{}\n", AttackReport::CSV_HEADER);
    let mut jsonl = String::new();
    for r in &m.campaigns {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        jsonl.push_str(&serde_json::to_string(r).expect("report serializes"));
        jsonl.push('\n');
    }
    write(&out.join("campaigns.csv"), csv)?;
    write(&out.join("campaigns.jsonl"), jsonl)?;
    for (id, dump) in &outcome.topology_dumps {
        write(&topo.join(format!("chip-{id}.txt")), dump)?;
    }
    for (id, nonces, licenses) in &outcome.first_bundles {
        write(
            &bundles.join(format!("chip-{id}.nonce.hex")),
            format!("{}\n", hex::encode(nonces)),
        )?;
        if let Some(l) = licenses {
            write(
                &bundles.join(format!("chip-{id}.license.hex")),
                format!("{}\n", hex::encode(l)),
            )?;
        }
    }
    println!(
        "chips {} blocks {} halted {} licensed {} attack_successes {} unexpected {}",
        m.chips,
        m.total_blocks,
        m.chips_halted,
        m.all_blocks_licensed,
        m.total_attack_successes,
        m.unexpected_attack_successes
    );
    Ok(())
}

fn audit(args: &ConfigArgs) -> Result<bool, Failure> {
    let cfg = load(args)?;
    let fleet = build_fleet(&cfg.fleet, &cfg.authorizer, cfg.seed)
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let mut clean = true;
    for chip in &fleet.chips {
        let t = &chip.topology;
        let r = audit_bypass(t)
            .map_err(|e| Failure::new(EXIT_FINDING, format!("chip {}: {e}", chip.chip_id())))?;
        println!(
            "chip {} min_gates_on_any_path {} min_gated_edges_on_any_path {} min_gates_per_edge {} ungated {}",
            chip.chip_id(),
            r.min_gates_on_any_path,
            r.min_gated_edges_on_any_path,
            r.min_gates_per_edge,
            r.ungated_edges.len()
        );
        for &e in &r.ungated_edges {
            let edge = &t.edges()[e];
            println!("  UNGATED edge {e} {} -> {}", edge.from, edge.to);
        }
        clean &= r.ungated_edges.is_empty();
    }
    Ok(clean)
}

fn calc(what: &Calc) {
    match *what {
        Calc::Licenses {
            blocks_per_chip,
            chips,
            per_day,
            years,
        } => {
            println!(
                "licenses {:e}",
                lifetime_license_count(blocks_per_chip, chips, per_day, years)
            );
        }
        Calc::Collision { prior, bits } => {
            let c = collision_probability(prior, bits);
            println!("per_nonce {:e}", c.per_nonce);
            println!("birthday {:e}", c.birthday);
        }
        Calc::Preshared {
            n,
            k,
            revealed_fraction,
            delay_seconds,
        } => {
            let e = preshared_bruteforce_estimate(n, k, revealed_fraction, delay_seconds);
            println!("guesses {}", e.expected_guesses);
            println!("seconds {}", e.expected_seconds);
            println!("years {:.4}", e.expected_years);
        }
    }
}

fn simulate_key_events(args: &ConfigArgs, events: Vec<KeyEvent>) -> Result<(), Failure> {
    let mut cfg = load(args)?;
    cfg.key_events.extend(events);
    cfg.campaigns.clear();
    let m = run_scenario(&cfg)?.metrics;
    println!(
        "chips {} halted {} halt_fraction {} licenses_issued {} issuance_failures {}",
        m.chips,
        m.chips_halted,
        m.fleet_halt_fraction,
        m.licensing.licenses_issued,
        m.licensing.issuance_failures
    );
    Ok(())
}

fn keys(action: &Keys) -> Result<(), Failure> {
    match action {
        Keys::Steal { cfg, batch } => {
            let c = load(cfg)?;
            let fleet = build_fleet(&c.fleet, &c.authorizer, c.seed)
                .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
            let r = key_theft_campaign(&fleet, BatchId(*batch), c.seed);
            println!("{}", serde_json::to_string(&r).expect("report serializes"));
            Ok(())
        }
        Keys::Destroy {
            cfg,
            batches,
            backups_also,
            at,
        } => simulate_key_events(
            cfg,
            vec![KeyEvent {
                at: *at,
                action: KeyAction::Destroy {
                    batches: batches.clone(),
                    backups_also: *backups_also,
                },
            }],
        ),
        Keys::Restore {
            cfg,
            batch,
            at,
            restore_at,
        } => simulate_key_events(
            cfg,
            vec![
                KeyEvent {
                    at: *at,
                    action: KeyAction::Destroy {
                        batches: vec![*batch],
                        backups_also: false,
                    },
                },
                KeyEvent {
                    at: restore_at.unwrap_or(*at),
                    action: KeyAction::Restore { batch: *batch },
                },
            ],
        ),
    }
}

fn goldens(action: &Goldens) -> Result<(), Failure> {
    match action {
        Goldens::Verify { dir, traceability } => {
            let n = verify_goldens(dir).map_err(|e| Failure::new(EXIT_FINDING, e.to_string()))?;
            let text = fs::read_to_string(traceability).map_err(|e| {
                Failure::new(EXIT_FINDING, format!("{}: {e}", traceability.display()))
            })?;
            validate_traceability(&text).map_err(|e| {
                Failure::new(EXIT_FINDING, format!("{}: {e}", traceability.display()))
            })?;
            println!("{n} vectors ok; traceability ok");
            Ok(())
        }
        Goldens::Regen { dir } => {
            regenerate_goldens(dir).map_err(|e| io_err(dir, e))?;
            println!("wrote {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { cfg, out, jobs } => {
            if let Some(j) = jobs {
                std::env::set_var("RAYON_NUM_THREADS", j.to_string());
            }
            run(cfg, out)
        }
        Command::Audit { cfg } => match audit(cfg) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_FINDING),
            Err(e) => Err(e),
        },
        Command::Calc { what } => {
            calc(what);
            Ok(())
        }
        Command::Keys { action } => keys(action),
        Command::Goldens { action } => goldens(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
