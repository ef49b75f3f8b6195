use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use somersault::pipeline::{
    batch_run, export_artifacts, run_somersault, summary_csv, verify, ScenarioConfig, SummaryRow,
};
use somersault::trajopt::FlipDirection;

#[derive(Parser)]
#[command(
    name = "somersault",
    version,
    about = "Plan and simulate planar biped somersaults"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Front,
    Back,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = ["I", "II", "III"])]
        flywheel: Option<String>,
        #[arg(long, value_enum)]
        direction: Option<Direction>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every *.json scenario in a directory and write summary.csv there.
    Batch { dir: PathBuf },
    /// Run the invariant suite against a scenario's robot and jump task.
    Verify { config: PathBuf },
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    ScenarioConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn run(
    path: &Path,
    out: Option<PathBuf>,
    flywheel: Option<String>,
    direction: Option<Direction>,
    seed: Option<u64>,
) -> Result<ExitCode, ExitCode> {
    let mut cfg = load(path)?;
    if let Some(f) = flywheel {
        cfg.flywheel = f;
    }
    if let Some(d) = direction {
        cfg.direction = match d {
            Direction::Front => FlipDirection::Frontflip,
            Direction::Back => FlipDirection::Backflip,
        };
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out_dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    let result = run_somersault(&cfg);
    if let Err(e) = export_artifacts(&result, &out_dir) {
        eprintln!("error: {e}");
        return Err(ExitCode::FAILURE);
    }
    let r = &result.report;
    match &r.message {
        Some(msg) => println!("{}: failed ({msg})", r.scenario),
        None => println!("{}: success", r.scenario),
    }
    if let Some(rot) = r.net_rotation {
        println!("  net rotation {rot:.4} rad");
    }
    if let Some(d) = r.touchdown_displacement {
        println!("  touch-down displacement {d:.4} m");
    }
    println!("  artifacts in {}", out_dir.display());
    Ok(ExitCode::from(r.exit_code as u8))
}

fn batch(dir: &Path) -> Result<ExitCode, ExitCode> {
    let entries = std::fs::read_dir(dir).map_err(|e| {
        eprintln!("error: {}: {e}", dir.display());
        ExitCode::from(2)
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut configs = Vec::new();
    for p in &paths {
        let mut cfg = load(p)?;
        if cfg.output_dir.is_none() {
            cfg.output_dir = Some(dir.join("out").join(&cfg.name));
        }
        configs.push(cfg);
    }
    let results = batch_run(&configs);
    for (row, err) in &results {
        println!(
            "{:<20} {}",
            row.scenario,
            if row.success { "pass" } else { "fail" }
        );
        if let Some(e) = err {
            eprintln!("  export failed: {e}");
        }
    }
    let rows: Vec<SummaryRow> = results.into_iter().map(|(r, _)| r).collect();
    let summary = dir.join("summary.csv");
    std::fs::write(&summary, summary_csv(&rows)).map_err(|e| {
        eprintln!("error: {}: {e}", summary.display());
        ExitCode::FAILURE
    })?;
    let worst = rows.iter().map(|r| r.exit_code).max().unwrap_or(0);
    Ok(ExitCode::from(worst as u8))
}

fn check(path: &Path) -> Result<ExitCode, ExitCode> {
    let cfg = load(path)?;
    let checks = verify(&cfg).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    for c in &checks {
        println!(
            "[{}] {}: {:.3e} (tolerance {:.0e})",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    Ok(if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            flywheel,
            direction,
            seed,
        } => run(&config, out, flywheel, direction, seed),
        Command::Batch { dir } => batch(&dir),
        Command::Verify { config } => check(&config),
    };
    result.unwrap_or_else(|code| code)
}
