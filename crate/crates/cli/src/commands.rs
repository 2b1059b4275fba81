//! Argument parsing, dispatch and exit codes.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use perfolab_core::Error as CoreError;

use crate::config::{ExperimentConfig, SeedRange};
use crate::output::{provenance, OutDir, Table};
use crate::pipelines::{self, Outcome};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_EPSILON_TOO_LARGE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "perfolab", version, about = "Experiments on Stokes flow in randomly perforated domains")]
pub struct Cli {
    /// Configuration file (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed range `a..b` (end exclusive), overriding the configuration.
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Print the default configuration and exit.
    #[arg(long)]
    pub print_default_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Sample and store a realization per (ε, seed).
    Generate,
    /// Build and verify the hole coverings and the set-algebra identities.
    CoverVerify,
    /// Capacity bound of the covered bad set across ε.
    CapacitySweep,
    /// Compatible extension of random sources and its checks.
    ExtensionVerify,
    /// Stokes vs Brinkman convergence study with the divergence probe.
    Converge,
    /// Summarize the tables found in the output directory.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::CoverVerify => "cover-verify",
            Command::CapacitySweep => "capacity-sweep",
            Command::ExtensionVerify => "extension-verify",
            Command::Converge => "converge",
            Command::Report => "report",
        }
    }
}

/// Optional keys, which the serialized defaults leave out.
const DEFAULT_CONFIG_NOTES: &str = "\
# Optional keys (absent means derived):
#   covering.k_max  highest size class, default ceil((d/(d-2) - 1)/delta)
#   pde.mu          Brinkman friction, default 6*pi*pde.lambda*<rho> (the strange term)
#   pde.shells      shell width r_eps per pde epsilon, default eps/4
# The [pde] block has its own intensity, radius law and theta; the
# geometry defaults give coverings that swallow the box at flow scale.
";

/// Resolve the configuration from file and flags, validated.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &cli.seeds {
        cfg.seeds = SeedRange::parse(s)?;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run one pipeline and write its outputs. Returns the exit code.
pub fn execute(cfg: &ExperimentConfig, command: Command) -> Result<i32> {
    let dir = OutDir::new(&cfg.out);
    if command == Command::Report {
        let text = report(&dir)?;
        dir.write("report.md", &text)?;
        print!("{text}");
        return Ok(EXIT_PASS);
    }
    let outcome: Outcome = match command {
        Command::Generate => pipelines::generate(cfg)?,
        Command::CoverVerify => pipelines::cover_verify(cfg)?,
        Command::CapacitySweep => pipelines::capacity_sweep(cfg)?,
        Command::ExtensionVerify => pipelines::extension_verify(cfg)?,
        Command::Converge => pipelines::converge(cfg)?,
        Command::Report => unreachable!(),
    };
    let prov = provenance(cfg, command.name());
    for (rel, text) in &outcome.files {
        dir.write(rel, text)?;
    }
    for (rel, table) in &outcome.tables {
        let p = dir.write(rel, &table.render(&prov))?;
        eprintln!("wrote {} ({} rows)", p.display(), table.rows.len());
    }
    dir.write("config.toml", &format!("# config_hash={}\n{}", cfg.hash(), cfg.to_toml()))?;
    if outcome.violations > 0 {
        eprintln!("{} verification violations", outcome.violations);
        return Ok(EXIT_VIOLATION);
    }
    if outcome.numeric_errors > 0 {
        eprintln!("{} solves failed; see the notes in the tables", outcome.numeric_errors);
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_PASS)
}

/// Exit code for an error that aborted a run.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::EpsilonTooLarge { .. }) => EXIT_EPSILON_TOO_LARGE,
        Some(
            CoreError::NoConvergence { .. }
            | CoreError::Infeasible { .. }
            | CoreError::Compatibility { .. }
            | CoreError::DegenerateCell { .. }
            | CoreError::MomentDivergence { .. }
            | CoreError::Numeric(_),
        ) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parse, configure the thread pool and run. Returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    if cli.print_default_config {
        print!("{DEFAULT_CONFIG_NOTES}{}", ExperimentConfig::default().to_toml());
        return EXIT_PASS;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return EXIT_USAGE;
    };
    #[cfg(feature = "parallel")]
    if cli.jobs > 0 {
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    }
    let result = load_config(&cli).and_then(|cfg| execute(&cfg, command));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}

fn read_table(dir: &OutDir, rel: &str) -> Result<Option<Table>> {
    let p = dir.path(rel);
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    Ok(Some(Table::parse(&text).with_context(|| format!("parsing {}", p.display()))?))
}

fn sum_column(t: &Table, name: &str) -> Result<f64> {
    Ok(t.floats(name)?.iter().sum())
}

/// Markdown summary of whatever tables are present.
pub fn report(dir: &OutDir) -> Result<String> {
    let mut s = String::from("# perfolab report\n\n");
    let mut any = false;
    if let Some(t) = read_table(dir, "covering.csv")? {
        any = true;
        let eps = t.floats("epsilon")?;
        let scaled = t.floats("scaled_good")?;
        let _ = writeln!(s, "## Good-hole counts\n\n| epsilon | seeds | mean eps^d #good |\n|---|---|---|");
        let mut keys: Vec<f64> = eps.clone();
        keys.dedup();
        keys.sort_by(|a, b| b.total_cmp(a));
        keys.dedup();
        for e in keys {
            let v: Vec<f64> = eps.iter().zip(&scaled).filter(|(x, _)| **x == e).map(|(_, v)| *v).collect();
            let _ = writeln!(s, "| {e} | {} | {:.4} |", v.len(), v.iter().sum::<f64>() / v.len() as f64);
        }
        s.push('\n');
    }
    for (rel, title) in [("covering_checks.csv", "Covering properties"), ("identities.csv", "Set-algebra identities"), ("extension.csv", "Extension checks")] {
        if let Some(t) = read_table(dir, rel)? {
            any = true;
            let _ = writeln!(s, "## {title}\n\n{} rows, {} violations\n", t.rows.len(), sum_column(&t, "violations")?);
        }
    }
    if let Some(t) = read_table(dir, "capacity.csv")? {
        any = true;
        let seeds = t.floats("seed")?;
        let bound = t.floats("bound")?;
        let mut decreasing = 0;
        let mut total = 0;
        let mut i = 0;
        while i < seeds.len() {
            let j = (i..seeds.len()).find(|&j| seeds[j] != seeds[i]).unwrap_or(seeds.len());
            total += 1;
            if bound[i..j].windows(2).all(|w| w[1] < w[0]) {
                decreasing += 1;
            }
            i = j;
        }
        let _ = writeln!(s, "## Capacity bound\n\nstrictly decreasing across epsilon in {decreasing}/{total} seeds\n");
    }
    if let Some(t) = read_table(dir, "converge.csv")? {
        any = true;
        let eps = t.floats("epsilon")?;
        let seed = t.floats("seed")?;
        let pg = t.floats("pressure_gap")?;
        let vg = t.floats("velocity_gap")?;
        let br = t.floats("bogovskii_ratio")?;
        let id = t.column("pairing_id")?;
        let _ = writeln!(s, "## Convergence\n\n| seed | pairing | pressure gap (first -> last eps) | velocity gap (first -> last eps) |\n|---|---|---|---|");
        let emax = eps.iter().cloned().fold(f64::MIN, f64::max);
        let emin = eps.iter().cloned().fold(f64::MAX, f64::min);
        for r in 0..t.rows.len() {
            if eps[r] != emax {
                continue;
            }
            if let Some(q) = (0..t.rows.len()).find(|&q| eps[q] == emin && seed[q] == seed[r] && t.rows[q][id] == t.rows[r][id]) {
                let _ = writeln!(s, "| {} | {} | {:.3e} -> {:.3e} | {:.3e} -> {:.3e} |", seed[r], t.rows[r][id], pg[r], pg[q], vg[r], vg[q]);
            }
        }
        let finite: Vec<f64> = br.iter().cloned().filter(|v| v.is_finite()).collect();
        if !finite.is_empty() {
            let (lo, hi) = finite.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
            let _ = writeln!(s, "\ndivergence probe ratio range {lo:.4e} .. {hi:.4e} (spread {:.3})\n", hi / lo);
        }
    }
    if !any {
        s.push_str("no tables found\n");
    }
    Ok(s)
}
