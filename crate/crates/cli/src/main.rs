//! `bernoulli`: runs experiments, suites of experiments and acceptance
//! criteria, and re-analyzes stored runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bernoulli_lab::analyze::{analyze_free_boundary, FreeBoundaryReport};
use bernoulli_lab::criteria::{CriterionId, CriterionOptions, CriterionOutcome, Lab, Scale};
use bernoulli_lab::io::{fmt_f64, read_binary, write_binary, write_csv, write_slice_csv};
use bernoulli_lab::minimize::StateSummary;
use bernoulli_lab::radial::{constant_energy, minimize_radial, radial_scan};
use bernoulli_lab::scenarios::{run_experiment, ExperimentConfig, ExperimentSummary};
use bernoulli_lab::weights::PlateauRule;
use bernoulli_lab::ScalarField;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "bernoulli", version, about = "Bernoulli free boundary experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suite entries run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory (overrides the config's `output`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed for randomized analysis steps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Plateau rule of the annular weight.
    #[arg(long, global = true, value_enum)]
    plateau_rule: Option<RuleArg>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimize, analyze and write every artifact of one config.
    Solve { config: PathBuf },
    /// Run every `*.json` entry of a directory: experiment configs or
    /// criterion entries such as `{"criterion": "A3"}`.
    Suite { dir: PathBuf },
    /// Energy of the radial comparison family of an annular config.
    RadialScan { config: PathBuf },
    /// Re-run the free boundary analysis of a stored run.
    Report { run_dir: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    TauConsistent,
    AsPrinted,
}

impl From<RuleArg> for PlateauRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::TauConsistent => PlateauRule::TauConsistent,
            RuleArg::AsPrinted => PlateauRule::AsPrinted,
        }
    }
}

/// Process outcome, ordered from best to worst.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Status {
    Ok = 0,
    ConfigError = 1,
    Failed = 2,
}

impl Status {
    fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::ConfigError => "error",
            Status::Failed => "failed",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match &cli.command {
        Command::Solve { config } => solve(&cli, config),
        Command::Suite { dir } => suite(&cli, dir),
        Command::RadialScan { config } => scan(&cli, config),
        Command::Report { run_dir } => report(&cli, run_dir),
    };
    match status {
        Ok(s) => ExitCode::from(s as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::ConfigError as u8)
        }
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    apply_flags(cli, &mut config);
    Ok(config)
}

fn apply_flags(cli: &Cli, config: &mut ExperimentConfig) {
    config.analysis.seed = cli.seed;
    if let Some(rule) = cli.plateau_rule {
        config.set_plateau_rule(rule.into());
    }
}

fn output_dir(cli: &Cli, config: &ExperimentConfig) -> PathBuf {
    cli.output
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.name))
}

/// Written next to the field: the solver summary, its energy trace and the
/// resolved config.
#[derive(Serialize, Deserialize)]
struct StateSidecar {
    state: StateSummary,
    trace: Vec<f64>,
    config: ExperimentConfig,
}

fn solve(cli: &Cli, path: &Path) -> Result<Status> {
    let config = load_config(cli, path)?;
    let out = output_dir(cli, &config);
    let summary = run_and_write(&config, &out)?;
    print!("{}", summary_table(&summary));
    Ok(if summary.state.converged { Status::Ok } else { Status::Failed })
}

/// Runs one experiment and writes its artifacts to `out`. Nothing is
/// written unless the run itself succeeds.
fn run_and_write(config: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary> {
    let exp = run_experiment(config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let create = |name: &str| -> Result<BufWriter<fs::File>> {
        let p = out.join(name);
        Ok(BufWriter::new(fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?))
    };
    let u = &exp.state.u;
    let mut w = create("field.bin")?;
    write_binary(u, &mut w)?;
    w.flush()?;
    let mut w = create("slice.csv")?;
    let grid = u.grid();
    let d = grid.dim();
    if d == 1 {
        write_csv(u, &mut w)?;
    } else {
        write_slice_csv(u, d - 1, grid.cells()[d - 1] / 2, &mut w)?;
    }
    w.flush()?;
    let sidecar = StateSidecar {
        state: exp.summary.state.clone(),
        trace: exp.state.trace.clone(),
        config: exp.config.clone(),
    };
    fs::write(out.join("state.json"), serde_json::to_string_pretty(&sidecar)?)?;
    write_report(&exp.report, out)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&exp.summary)?)?;
    fs::write(out.join("summary.csv"), summary_table(&exp.summary))?;
    Ok(exp.summary)
}

fn write_report(report: &FreeBoundaryReport, out: &Path) -> Result<()> {
    fs::write(out.join("report.json"), report.to_json()?)?;
    let mut w = BufWriter::new(fs::File::create(out.join("report.csv"))?);
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Two-column `key,value` table of the scalar results.
fn summary_table(s: &ExperimentSummary) -> String {
    let mut rows: Vec<(&str, String)> = vec![
        ("name", s.name.clone()),
        ("solver", s.state.solver.clone()),
        ("energy", fmt_f64(s.state.energy)),
        ("dirichlet", fmt_f64(s.state.dirichlet)),
        ("positive_cells", s.state.positive_cells.to_string()),
        ("zero_cells", s.state.zero_cells.to_string()),
        ("iterations", s.state.iterations.to_string()),
        ("converged", s.state.converged.to_string()),
        ("free_boundary_points", s.free_boundary_points.to_string()),
    ];
    if let Some(b) = &s.bracket {
        rows.push(("r1", fmt_f64(b.inner)));
        rows.push(("r2", fmt_f64(b.outer)));
        rows.push(("zero_volume", fmt_f64(b.zero_volume)));
    }
    if let (Some(e), Some(r)) = (s.radial_energy, s.radial_radius) {
        rows.push(("radial_energy", fmt_f64(e)));
        rows.push(("radial_radius", fmt_f64(r)));
    }
    let mut text = String::from("key,value\n");
    for (k, v) in rows {
        text.push_str(&format!("{k},{v}\n"));
    }
    text
}

/// A suite entry naming an acceptance criterion.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CriterionEntry {
    criterion: CriterionId,
    #[serde(default)]
    scale: Scale,
}

enum Entry {
    Experiment(ExperimentConfig),
    Criterion(CriterionEntry),
}

fn parse_entry(cli: &Cli, path: &Path) -> Result<Entry> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("criterion").is_some() {
        let entry = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(Entry::Criterion(entry));
    }
    let mut config: ExperimentConfig =
        serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
    apply_flags(cli, &mut config);
    Ok(Entry::Experiment(config))
}

/// One aggregate row.
struct Row {
    entry: String,
    kind: &'static str,
    status: Status,
    outcome: String,
    energy: Option<f64>,
    detail: String,
    criterion: Option<CriterionOutcome>,
}

fn suite(cli: &Cli, dir: &Path) -> Result<Status> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    paths.sort();
    let out = cli.output.clone().unwrap_or_else(|| dir.join("results"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let labs: BTreeMap<Scale, Lab> = [Scale::Full, Scale::Reduced]
        .into_iter()
        .map(|scale| {
            let options = CriterionOptions {
                scale,
                plateau_rule: cli.plateau_rule.map(Into::into).unwrap_or_default(),
                seed: cli.seed,
            };
            (scale, Lab::new(options))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .context("starting worker pool")?;
    let rows: Vec<Row> = pool.install(|| {
        paths
            .par_iter()
            .map(|path| run_entry(cli, path, &out, &labs))
            .collect()
    });
    write_aggregate(&rows, &out)?;
    let worst = rows.iter().map(|r| r.status).max().unwrap_or(Status::Ok);
    for r in &rows {
        println!("{} {} {}: {}", r.entry, r.kind, r.outcome, r.detail);
    }
    Ok(worst)
}

fn run_entry(cli: &Cli, path: &Path, out: &Path, labs: &BTreeMap<Scale, Lab>) -> Row {
    let entry = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match parse_entry(cli, path) {
        Err(e) => Row {
            entry,
            kind: "invalid",
            status: Status::ConfigError,
            outcome: Status::ConfigError.label().into(),
            energy: None,
            detail: format!("{e:#}"),
            criterion: None,
        },
        Ok(Entry::Criterion(c)) => {
            let outcome = labs[&c.scale].run(c.criterion);
            let status = if outcome.pass { Status::Ok } else { Status::Failed };
            Row {
                entry,
                kind: "criterion",
                status,
                outcome: if outcome.pass { "PASS" } else { "FAIL" }.into(),
                energy: None,
                detail: outcome.line(),
                criterion: Some(outcome),
            }
        }
        Ok(Entry::Experiment(config)) => match run_and_write(&config, &out.join(&entry)) {
            Ok(s) => Row {
                entry,
                kind: "experiment",
                status: if s.state.converged { Status::Ok } else { Status::Failed },
                outcome: if s.state.converged { "converged" } else { "not_converged" }.into(),
                energy: Some(s.state.energy),
                detail: format!("{} solver, {} zero cells", s.state.solver, s.state.zero_cells),
                criterion: None,
            },
            Err(e) => Row {
                entry,
                kind: "experiment",
                status: Status::ConfigError,
                outcome: Status::ConfigError.label().into(),
                energy: None,
                detail: format!("{e:#}"),
                criterion: None,
            },
        },
    }
}

fn write_aggregate(rows: &[Row], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("aggregate.csv"))?;
    w.write_record(["entry", "kind", "outcome", "exit_code", "energy", "detail"])?;
    for r in rows {
        let code = (r.status as u8).to_string();
        let energy = r.energy.map(fmt_f64).unwrap_or_default();
        w.write_record([r.entry.as_str(), r.kind, &r.outcome, &code, &energy, &r.detail])?;
    }
    w.flush()?;
    let criteria: BTreeMap<String, &CriterionOutcome> = rows
        .iter()
        .filter_map(|r| r.criterion.as_ref())
        .map(|c| (c.id.to_string(), c))
        .collect();
    fs::write(out.join("criteria.json"), serde_json::to_string_pretty(&criteria)?)?;
    Ok(())
}

#[derive(Serialize)]
struct RadialSummary {
    r_star: f64,
    r_upper: f64,
    radius: f64,
    energy: f64,
    at_boundary: bool,
    constant_energy: f64,
    config: ExperimentConfig,
}

const SCAN_POINTS: usize = 199;

fn scan(cli: &Cli, path: &Path) -> Result<Status> {
    let config = load_config(cli, path)?;
    let Some(radial) = config.radial_config() else {
        bail!("{}: radial scans need the annular weight", path.display());
    };
    let weight = radial.weight()?;
    let optimum = minimize_radial(&radial, &weight)?;
    let rows = radial_scan(&radial, &weight, 0.005, 0.995, SCAN_POINTS)?;
    let out = output_dir(cli, &config);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut text = String::from("radius,energy\n");
    for (r, e) in &rows {
        text.push_str(&format!("{},{}\n", fmt_f64(*r), fmt_f64(*e)));
    }
    fs::write(out.join("radial_scan.csv"), text)?;
    let summary = RadialSummary {
        r_star: radial.r_star(),
        r_upper: radial.r_upper(),
        radius: optimum.radius,
        energy: optimum.energy,
        at_boundary: optimum.at_boundary,
        constant_energy: constant_energy(&radial, &weight)?,
        config,
    };
    fs::write(out.join("radial.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "radial optimum r = {} with energy {} (u = m costs {})",
        fmt_f64(summary.radius),
        fmt_f64(summary.energy),
        fmt_f64(summary.constant_energy)
    );
    Ok(Status::Ok)
}

fn report(cli: &Cli, run_dir: &Path) -> Result<Status> {
    let sidecar_path = run_dir.join("state.json");
    let text = fs::read_to_string(&sidecar_path).with_context(|| format!("reading {}", sidecar_path.display()))?;
    let mut sidecar: StateSidecar =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", sidecar_path.display()))?;
    apply_flags(cli, &mut sidecar.config);
    let field_path = run_dir.join("field.bin");
    let file = fs::File::open(&field_path).with_context(|| format!("reading {}", field_path.display()))?;
    let stored = read_binary(std::io::BufReader::new(file))?;
    // the stored mask carries no shape; rebuild the region so that analysis
    // samples the same balls as the original run
    let problem = sidecar.config.build()?;
    let region = problem.region().clone();
    if region.grid() != stored.grid() || region.mask() != stored.region().mask() {
        bail!("{} does not match the grid and region of its config", field_path.display());
    }
    let u = ScalarField::new(region, stored.values().to_vec())?;
    let report = analyze_free_boundary(&u, sidecar.config.gamma, &sidecar.config.analysis);
    let out = cli.output.clone().unwrap_or_else(|| run_dir.to_path_buf());
    fs::create_dir_all(&out)?;
    write_report(&report, &out)?;
    println!(
        "{} free boundary points, {} analyzed, BMO seminorm {}",
        report.boundary_points,
        report.points.len(),
        report.bmo.map(fmt_f64).unwrap_or_else(|| "n/a".into())
    );
    for p in &report.points {
        let alpha = |f: &Option<bernoulli_lab::analyze::ExponentFit>| f.as_ref().map(|f| format!("{:.4}", f.alpha));
        println!(
            "  {:?}: growth {} lower {}",
            p.point,
            alpha(&p.upper).unwrap_or_else(|| "-".into()),
            alpha(&p.lower).unwrap_or_else(|| "-".into())
        );
    }
    Ok(Status::Ok)
}
