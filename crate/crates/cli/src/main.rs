//! `gravalloc` command-line runner.
//!
//! Exit codes: 0 success, 1 internal error, 2 validation error,
//! 3 partial-domain error, 4 test-suite failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gravalloc::allocation::{allocate_grid_with, detect_crossing, stable_marriage_allocate, GridSpec};
use gravalloc::io::{read_points, real};
use gravalloc::validation::{
    estimate_crossing_tail, estimate_diameter_tail, run_suite, suite_passed, write_summary_csv, SuiteOptions,
    CROSSING_SEEDS,
};
use gravalloc::{integrate_flow, Error, FarFieldOptions, FieldModel, FlowOptions, Point, Region, StarConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

const EXIT_INTERNAL: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_DOMAIN: u8 = 3;
const EXIT_SUITE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "gravalloc", version, about = "Gravitational allocation simulator and validation toolkit")]
struct Cli {
    /// JSON file with default values for any global option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dimension d >= 3.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Radius L of the ball window B(0, L).
    #[arg(long, global = true)]
    window_radius: Option<f64>,
    /// Directory receiving all outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "GRAVALLOC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Sample a Poisson star configuration in B(0, L).
    Sample(SampleArgs),
    /// Evaluate the force and partial potential at points from a CSV file.
    Field(FieldArgs),
    /// Integrate one gravitational flow curve.
    Flow(FlowArgs),
    /// Compute an allocation map on a grid.
    Allocate(AllocateArgs),
    /// Estimate P(X > R) for the diameter of the origin's cell.
    DiameterTail(TailArgs),
    /// Search for R-crossings, on one config or across sampled configs.
    Crossing(CrossingArgs),
    /// Run the validation batteries.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct SampleArgs {
    /// Poisson intensity.
    #[arg(long, default_value_t = 1.0)]
    intensity: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    /// Star configuration JSON written by `sample`.
    #[arg(long)]
    stars: Option<PathBuf>,
    /// Use the hierarchical far-field force evaluation.
    #[arg(long)]
    far_field: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FlowTolArgs {
    /// Relative integration tolerance.
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Absolute integration tolerance.
    #[arg(long)]
    abs_tol: Option<f64>,
    /// Time budget per flow curve.
    #[arg(long)]
    max_time: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FieldArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV of evaluation points, one per row (optional header).
    #[arg(long)]
    points: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FlowArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    tol: FlowTolArgs,
    /// Start point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    start: Vec<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    Gravitational,
    StableMarriage,
}

#[derive(Args, Debug, Clone, Serialize)]
struct AllocateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    tol: FlowTolArgs,
    /// Half-width of the grid box centered at the origin.
    #[arg(long, default_value_t = 2.0)]
    halfwidth: f64,
    /// Grid points per axis.
    #[arg(long, default_value_t = 16)]
    resolution: usize,
    #[arg(long, value_enum, default_value_t = Method::Gravitational)]
    method: Method,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TailArgs {
    /// Thresholds R, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    r_grid: Vec<f64>,
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 200)]
    configs: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CrossingArgs {
    #[command(flatten)]
    tail: TailArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    tol: FlowTolArgs,
    /// Flow seeds per search (with --stars).
    #[arg(long, default_value_t = CROSSING_SEEDS)]
    seeds: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ValidateArgs {
    /// Include the slow Monte Carlo batteries.
    #[arg(long)]
    slow: bool,
    /// Run only these batteries, comma separated.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    dim: Option<usize>,
    window_radius: Option<f64>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
    flow: Option<FlowOptions>,
    far_field: Option<FarFieldOptions>,
}

/// Everything a run used, written to `run_config.json`.
#[derive(Debug, Serialize)]
struct RunConfig {
    seed: u64,
    dim: usize,
    window_radius: f64,
    out_dir: PathBuf,
    threads: usize,
    #[serde(skip)]
    dim_given: bool,
    flow: FlowOptions,
    far_field: FarFieldOptions,
    #[serde(flatten)]
    command: Command,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Validation(_) | Error::UnsupportedRegion(_) | Error::Infeasible(_) => EXIT_VALIDATION,
            Error::Domain(_) | Error::Singularity { .. } | Error::Unresolved(_) => EXIT_DOMAIN,
            _ => EXIT_INTERNAL,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_VALIDATION, message: msg.into() }
}

type Outcome = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn resolve(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let file: FileConfig = match &cli.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| invalid(format!("config {}: {e}", p.display())))?,
        None => FileConfig::default(),
    };
    let mut flow = file.flow.unwrap_or_default();
    let tol = match &cli.command {
        Command::Flow(a) => Some(&a.tol),
        Command::Allocate(a) => Some(&a.tol),
        Command::Crossing(a) => Some(&a.tol),
        _ => None,
    };
    if let Some(t) = tol {
        flow.rel_tol = t.rel_tol.unwrap_or(flow.rel_tol);
        flow.abs_tol = t.abs_tol.unwrap_or(flow.abs_tol);
        flow.max_time = t.max_time.unwrap_or(flow.max_time);
    }
    flow.validate()?;
    let cfg = RunConfig {
        seed: cli.seed.or(file.seed).unwrap_or(1),
        dim: cli.dim.or(file.dim).unwrap_or(3),
        window_radius: cli.window_radius.or(file.window_radius).unwrap_or(10.0),
        out_dir: cli.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from("out")),
        threads: cli.threads.or(file.threads).unwrap_or(0),
        dim_given: cli.dim.or(file.dim).is_some(),
        flow,
        far_field: file.far_field.unwrap_or_default(),
        command: cli.command.clone(),
    };
    if cfg.dim < 3 {
        return Err(invalid("dimension must be at least 3"));
    }
    if !(cfg.window_radius > 0.0) || !cfg.window_radius.is_finite() {
        return Err(invalid("window radius must be positive"));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    let cfg = resolve(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Failure { code: EXIT_INTERNAL, message: e.to_string() })?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("run_config.json"), serde_json::to_string_pretty(&cfg)?)?;
    match &cfg.command {
        Command::Sample(a) => cmd_sample(&cfg, a),
        Command::Field(a) => cmd_field(&cfg, a),
        Command::Flow(a) => cmd_flow(&cfg, a),
        Command::Allocate(a) => cmd_allocate(&cfg, a),
        Command::DiameterTail(a) => cmd_diameter_tail(&cfg, a),
        Command::Crossing(a) => cmd_crossing(&cfg, a),
        Command::Validate(a) => cmd_validate(&cfg, a),
    }
}

fn window(cfg: &RunConfig) -> std::result::Result<Region, Failure> {
    Ok(Region::ball(Point::origin(cfg.dim), cfg.window_radius)?)
}

fn load_config(cfg: &RunConfig, args: &ModelArgs) -> std::result::Result<StarConfig, Failure> {
    match &args.stars {
        Some(p) => {
            let c = StarConfig::from_json(&fs::read_to_string(p)?)?;
            if cfg.dim_given && c.dim() != cfg.dim {
                return Err(invalid(format!("--dim {} differs from the star file's dimension {}", cfg.dim, c.dim())));
            }
            Ok(c)
        }
        None => Ok(StarConfig::sample_poisson(cfg.dim, window(cfg)?, 1.0, cfg.seed)?),
    }
}

fn load_model(cfg: &RunConfig, args: &ModelArgs) -> std::result::Result<FieldModel, Failure> {
    let model = FieldModel::over_window(load_config(cfg, args)?)?;
    Ok(if args.far_field { model.with_far_field(cfg.far_field)? } else { model })
}

fn write_json(dir: &Path, name: &str, value: &Value) -> std::result::Result<(), Failure> {
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_sample(cfg: &RunConfig, a: &SampleArgs) -> Outcome {
    let config = StarConfig::sample_poisson(cfg.dim, window(cfg)?, a.intensity, cfg.seed)?;
    fs::write(cfg.out_dir.join("stars.json"), config.to_json()?)?;
    println!("sampled {} stars", config.len());
    Ok(0)
}

fn cmd_field(cfg: &RunConfig, a: &FieldArgs) -> Outcome {
    let model = load_model(cfg, &a.model)?;
    let d = model.dim();
    let points = read_points(&fs::read_to_string(&a.points)?, d)?;
    let truncation = model.truncation().clone();
    let mut out = String::new();
    let cols: Vec<String> = (1..=d)
        .map(|k| format!("x{k}"))
        .chain((1..=d).map(|k| format!("f{k}")))
        .chain(["potential".into(), "status".into()])
        .collect();
    out.push_str(&cols.join(","));
    out.push('\n');
    let mut flagged = 0;
    for x in &points {
        let row = model.force(x).and_then(|f| Ok((f, model.potential_partial(x, &truncation)?)));
        let (values, status) = match row {
            Ok((f, u)) => (f.into_iter().chain([u]).collect::<Vec<f64>>(), "ok"),
            Err(Error::Singularity { .. }) => (vec![f64::NAN; d + 1], "singular"),
            Err(Error::Domain(_)) => (vec![f64::NAN; d + 1], "outside"),
            Err(e) => return Err(e.into()),
        };
        if status != "ok" {
            flagged += 1;
        }
        let fields: Vec<String> = x.iter().chain(&values).map(|v| real(*v)).collect();
        out.push_str(&fields.join(","));
        out.push(',');
        out.push_str(status);
        out.push('\n');
    }
    fs::write(cfg.out_dir.join("field.csv"), out)?;
    println!("evaluated {} points, {flagged} flagged", points.len());
    Ok(if flagged > 0 { EXIT_DOMAIN } else { 0 })
}

fn cmd_flow(cfg: &RunConfig, a: &FlowArgs) -> Outcome {
    let model = load_model(cfg, &a.model)?;
    if a.start.len() != model.dim() {
        return Err(invalid(format!("start point needs {} coordinates", model.dim())));
    }
    let trace = integrate_flow(&model, &a.start, &cfg.flow)?;
    trace.write_csv(fs::File::create(cfg.out_dir.join("trace.csv"))?)?;
    fs::write(cfg.out_dir.join("terminal.json"), trace.terminal_json()?)?;
    println!("{}", serde_json::to_string(&trace.terminal)?);
    Ok(0)
}

fn cmd_allocate(cfg: &RunConfig, a: &AllocateArgs) -> Outcome {
    let config = load_config(cfg, &a.model)?;
    let grid = GridSpec::new(Region::cube(Point::origin(config.dim()), a.halfwidth)?, a.resolution)?;
    let map = match a.method {
        Method::StableMarriage => {
            let inside: Vec<Point> =
                config.stars().filter(|z| grid.region.contains(z)).map(Point::from).collect();
            stable_marriage_allocate(&StarConfig::from_explicit(config.dim(), &inside, grid.region.clone())?, &grid)?
        }
        Method::Gravitational => {
            let model = FieldModel::over_window(config)?;
            let (model, far) = if a.model.far_field {
                (model.with_far_field(cfg.far_field)?, Some(cfg.far_field))
            } else {
                (model, None)
            };
            allocate_grid_with(&model, &grid, &cfg.flow, far)?
        }
    };
    map.write_csv(fs::File::create(cfg.out_dir.join("allocation.csv"))?)?;
    fs::write(cfg.out_dir.join("allocation.json"), map.header_json()?)?;
    map.write_slice(fs::File::create(cfg.out_dir.join("slice.csv"))?, 0, 1, 0.0)?;
    let head = map.extra_head_point().ok();
    let origin = map.owner_at(&vec![0.0; map.grid.dim()]).ok();
    write_json(
        &cfg.out_dir,
        "summary.json",
        &json!({ "cells": map.owners.len(), "resolved_fraction": map.resolved_fraction(), "origin_owner": origin, "extra_head_point": head }),
    )?;
    println!("resolved fraction {}", map.resolved_fraction());
    Ok(0)
}

fn cmd_diameter_tail(cfg: &RunConfig, a: &TailArgs) -> Outcome {
    let tail = estimate_diameter_tail(cfg.dim, cfg.window_radius, &a.r_grid, a.configs, cfg.seed)?;
    tail.write_csv(fs::File::create(cfg.out_dir.join("diameter_tail.csv"))?)?;
    write_json(&cfg.out_dir, "diameter_tail.json", &json!({ "tail": tail, "non_increasing": tail.non_increasing() }))?;
    println!("estimates {:?}", tail.estimates());
    Ok(0)
}

fn cmd_crossing(cfg: &RunConfig, a: &CrossingArgs) -> Outcome {
    if a.model.stars.is_none() {
        let tail = estimate_crossing_tail(cfg.dim, cfg.window_radius, &a.tail.r_grid, a.tail.configs, cfg.seed)?;
        tail.write_csv(fs::File::create(cfg.out_dir.join("crossing_tail.csv"))?)?;
        write_json(&cfg.out_dir, "crossing_tail.json", &json!({ "tail": tail, "non_increasing": tail.non_increasing() }))?;
        println!("estimates {:?}", tail.estimates());
        return Ok(0);
    }
    let model = load_model(cfg, &a.model)?;
    let mut rows = Vec::new();
    for (i, &r) in a.tail.r_grid.iter().enumerate() {
        let c = detect_crossing(&model, r, a.seeds, cfg.seed, &cfg.flow)?;
        if let Some(w) = &c.witness {
            w.write_csv(fs::File::create(cfg.out_dir.join(format!("witness_{i}.csv")))?)?;
        }
        println!("R = {r}: {}", if c.crossed { "crossed" } else { "no crossing found" });
        rows.push(json!({ "r": r, "crossed": c.crossed, "seed_index": c.seed_index, "seeds_tried": c.seeds_tried }));
    }
    write_json(&cfg.out_dir, "crossing.json", &Value::Array(rows))?;
    Ok(0)
}

fn cmd_validate(cfg: &RunConfig, a: &ValidateArgs) -> Outcome {
    let opts = SuiteOptions { seed: cfg.seed, slow: a.slow, only: a.only.clone() };
    let reports = run_suite(&opts)?;
    fs::write(cfg.out_dir.join("reports.json"), serde_json::to_string_pretty(&reports)?)?;
    write_summary_csv(&reports, fs::File::create(cfg.out_dir.join("summary.csv"))?)?;
    for r in &reports {
        println!("{:<24} {:?} statistic={} threshold={}", r.name, r.status, r.statistic, r.threshold);
    }
    Ok(if suite_passed(&reports) { 0 } else { EXIT_SUITE })
}
