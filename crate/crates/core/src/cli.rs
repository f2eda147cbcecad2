//! Command-line front end. `run` returns the process exit code:
//! 0 ok, 1 usage, 2 invalid score, 3 data error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::arch::{parse_encoding, CellArch};
use crate::error::{Error, Result};
use crate::eval::{self, load_benchmark};
use crate::io::load_image;
use crate::proxy::{KappaMode, Scorer, Variant, DEFAULT_BETA, KAPPA_GRID};
use crate::search::{search, SearchConfig, SearchMode};
use crate::space::SpaceConfig;
use crate::theory::{self, TheoryConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID_SCORE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dextr", version, about = "Training-free scoring and search for cell-based CNNs")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Master seed; weights, data sample and circular input derive from it.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, default_value_t = 8)]
    pub stem_channels: usize,
    #[arg(long, global = true, default_value_t = 1)]
    pub cells_per_stage: usize,
    /// `random` or a raw tensor file ([C,H,W] or [1,C,H,W], little-endian f64).
    #[arg(long, global = true, default_value = "random")]
    pub input: String,
    #[arg(long, global = true, default_value = "dextr")]
    pub variant: String,
    /// Channels sampled per layer by `dextr_opt`.
    #[arg(long, global = true, default_value_t = DEFAULT_BETA)]
    pub beta: usize,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub q: f64,
    /// `random` or an angle in radians.
    #[arg(long, global = true, default_value = "random")]
    pub theta: String,
    /// Angles κ is averaged over; 1 evaluates a single θ.
    #[arg(long, global = true, default_value_t = KAPPA_GRID)]
    pub kappa_points: usize,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score one cell encoding.
    Score { encoding: String },
    /// Spearman ρ between a proxy and a `encoding,accuracy` table.
    Correlate {
        benchmark: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Constrained random or evolutionary search.
    Search {
        #[arg(long, default_value = "evolutionary")]
        mode: String,
        #[arg(long, default_value_t = 500)]
        budget: usize,
        #[arg(long, default_value_t = 32)]
        population: usize,
        #[arg(long)]
        constraint_params: Option<u64>,
        #[arg(long)]
        constraint_flops: Option<u64>,
    },
    /// Score spread over paired data / circular-input draws.
    Stability {
        encoding: String,
        #[arg(long, default_value_t = 10)]
        draws: usize,
    },
    /// Per-layer σ_min/σ_max over qualifying layers.
    Profile { encoding: String },
    /// Two-layer network convergence and generalisation experiments.
    Theory {
        #[arg(long, value_enum, default_value_t = Experiment::All)]
        experiment: Experiment,
        #[arg(long, default_value_t = 30)]
        sets: usize,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
    },
    /// Share of qualifying layers with σ_max ≥ 1 over random cells.
    Lemma {
        #[arg(long, default_value_t = 100)]
        nets: usize,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Convergence,
    Generalisation,
    All,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Encoding { .. } | Error::UnknownOp(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command, writing the report to `out`
/// unless `--output` is given.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok((body, code)) => {
            let written = match &cli.global.output {
                Some(p) => std::fs::write(p, &body).map_err(Error::from),
                None => out.write_all(&body).map_err(Error::from),
            };
            match written {
                Ok(()) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_DATA
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn space(g: &Global) -> Result<SpaceConfig> {
    let cfg = SpaceConfig { stem_channels: g.stem_channels, cells_per_stage: g.cells_per_stage, ..SpaceConfig::default() };
    cfg.validate()?;
    Ok(cfg)
}

fn scorer(g: &Global) -> Result<Scorer> {
    if g.threads == 0 {
        return Err(Error::InvalidArgument("--threads must be >= 1".into()));
    }
    if !(g.q > 0.0 && g.q.is_finite()) {
        return Err(Error::InvalidArgument(format!("--q must be positive, got {}", g.q)));
    }
    if g.beta < 2 {
        return Err(Error::InvalidArgument(format!("--beta must be >= 2, got {}", g.beta)));
    }
    let mut space = space(g)?;
    let data = match g.input.as_str() {
        "random" => None,
        path => {
            let img = load_image(path)?;
            let s = img.shape();
            space.input_shape = [s[1], s[2], s[3]];
            space.validate()?;
            Some(img)
        }
    };
    let mut s = Scorer::new(space, g.seed).with_variant(g.variant.parse()?);
    s.data = data;
    s.q = g.q;
    s.beta = g.beta;
    s.kappa_mode = KappaMode::from_points(g.kappa_points);
    s.theta = match g.theta.as_str() {
        "random" => None,
        v => Some(
            v.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("--theta must be `random` or a number, got `{v}`")))?
                .rem_euclid(std::f64::consts::TAU),
        ),
    };
    log::info!("seeds: {:?}", s.seeds);
    Ok(s)
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn encoding(s: &str) -> Result<CellArch> {
    parse_encoding(s)
}

fn execute(cli: &Cli) -> Result<(Vec<u8>, i32)> {
    let g = &cli.global;
    let csv = g.format == Format::Csv;
    match &cli.command {
        Command::Score { encoding: enc } => {
            let arch = encoding(enc)?;
            let s = scorer(g)?;
            let report = s.report(&arch)?;
            let value = s.variant.value(&report);
            let code = if value.is_some() { EXIT_OK } else { EXIT_INVALID_SCORE };
            let label = s.variant.label();
            if csv {
                let v = value.map(|v| v.to_string()).unwrap_or_default();
                let row = vec![
                    arch.encode(),
                    v,
                    report.cond_term.to_string(),
                    report.curv_term.to_string(),
                    report.kappa.to_string(),
                    report.params.to_string(),
                    report.flops.to_string(),
                    report.valid.to_string(),
                ];
                let header = ["encoding", label, "cond_term", "curv_term", "kappa", "params", "flops", "valid"];
                return Ok((csv_bytes(&header, [row])?, code));
            }
            let mut obj = serde_json::to_value(&report)?;
            if let Value::Object(m) = &mut obj {
                if s.variant != Variant::Dextr {
                    m.remove("dextr");
                    m.insert(label.to_string(), json!(value));
                }
            }
            Ok((to_json(&obj)?, code))
        }
        Command::Correlate { benchmark, runs } => {
            if *runs == 0 {
                return Err(Error::InvalidArgument("--runs must be >= 1".into()));
            }
            let s = scorer(g)?;
            let table = load_benchmark(benchmark)?;
            let seeds: Vec<u64> = (0..*runs as u64).map(|r| g.seed.wrapping_add(r)).collect();
            let report = eval::correlate(&table, &s, &seeds, g.threads)?;
            log::info!("correlate took {:?}", report.elapsed);
            if csv {
                let rows = report.seeds.iter().zip(&report.rhos).enumerate().map(|(i, (s, r))| vec![i.to_string(), s.to_string(), r.to_string()]);
                return Ok((csv_bytes(&["run", "seed", "rho"], rows)?, EXIT_OK));
            }
            Ok((to_json(&report)?, EXIT_OK))
        }
        Command::Search { mode, budget, population, constraint_params, constraint_flops } => {
            let s = scorer(g)?;
            let cfg = SearchConfig {
                mode: mode.parse::<SearchMode>()?,
                budget: *budget,
                population: *population,
                max_params: *constraint_params,
                max_flops: *constraint_flops,
                seed: g.seed,
            };
            let score = |a: &CellArch| s.value(a);
            let result = crate::eval::with_threads(g.threads, || search(&cfg, &s.space, &score))??;
            if csv {
                let mut buf = Vec::new();
                result.write_trace_csv(&mut buf)?;
                return Ok((buf, EXIT_OK));
            }
            Ok((to_json(&json!({ "config": cfg, "variant": s.variant.label(), "scorer_seeds": s.seeds, "result": result }))?, EXIT_OK))
        }
        Command::Stability { encoding: enc, draws } => {
            let arch = encoding(enc)?;
            let s = scorer(g)?;
            let report = eval::stability(&arch, &s, *draws, g.threads)?;
            if csv {
                let rows = report
                    .draws
                    .iter()
                    .zip(&report.scores)
                    .enumerate()
                    .map(|(i, ((d, c), v))| vec![i.to_string(), d.to_string(), c.to_string(), v.to_string()]);
                return Ok((csv_bytes(&["draw", "data_seed", "circular_seed", "dextr"], rows)?, EXIT_OK));
            }
            Ok((to_json(&report)?, EXIT_OK))
        }
        Command::Profile { encoding: enc } => {
            let arch = encoding(enc)?;
            let s = scorer(g)?;
            let profile = eval::layer_profile(&arch, &s)?;
            if csv {
                let mut buf = Vec::new();
                eval::write_profile_csv(&profile, &mut buf)?;
                return Ok((buf, EXIT_OK));
            }
            let layers: Vec<Value> = profile.iter().map(|(id, f)| json!({ "layer_id": id, "fmi": f })).collect();
            Ok((to_json(&json!({ "arch": arch, "seeds": s.seeds, "layers": layers }))?, EXIT_OK))
        }
        Command::Theory { experiment, sets, width, steps, gamma } => {
            let cfg = TheoryConfig { sets: *sets, m: *width, steps: *steps, gamma: *gamma, seed: g.seed, ..TheoryConfig::default() };
            if csv && *experiment == Experiment::All {
                return Err(Error::InvalidArgument("--format csv needs a single --experiment".into()));
            }
            let mut out = serde_json::Map::new();
            out.insert("config".into(), serde_json::to_value(&cfg)?);
            if *experiment != Experiment::Generalisation {
                let r = theory::convergence_experiment(&cfg, g.threads)?;
                if csv {
                    let mut buf = Vec::new();
                    r.write_csv(&mut buf)?;
                    return Ok((buf, EXIT_OK));
                }
                out.insert("convergence".into(), serde_json::to_value(&r)?);
            }
            if *experiment != Experiment::Convergence {
                let r = theory::generalisation_experiment(&cfg, 0, g.threads)?;
                if csv {
                    let mut buf = Vec::new();
                    r.write_csv(&mut buf)?;
                    return Ok((buf, EXIT_OK));
                }
                let alt = theory::generalisation_experiment(&cfg, 1, g.threads)?;
                out.insert("generalisation".into(), serde_json::to_value(&r)?);
                out.insert("generalisation_alt_split_rho".into(), json!(alt.rho));
            }
            Ok((to_json(&out)?, EXIT_OK))
        }
        Command::Lemma { nets } => {
            let space = space(g)?;
            let r = theory::lemma1_check(&space, *nets, g.seed, g.threads)?;
            if csv {
                let rows = r.per_net.iter().enumerate().map(|(i, f)| vec![i.to_string(), f.to_string()]);
                return Ok((csv_bytes(&["net", "fraction"], rows)?, EXIT_OK));
            }
            Ok((to_json(&json!({ "seed": g.seed, "report": r }))?, EXIT_OK))
        }
    }
}
