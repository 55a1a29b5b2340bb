//! Command-line interface. `cli_main` returns the process exit code: 0 on
//! success, 2 for usage and configuration errors, 1 when a stage fails.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::datasets::import_augmented;
use crate::error::{Error, Result};
use crate::imaging::write_image_grid;
use crate::pipeline::{load_report, run_ablation, run_pipeline, seed_contexts, PipelineConfig, RunContext};

pub const RUN_DIR_ENV: &str = "CGSSL_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "cgssl", version, about = "Confidence-guided VAE augmentation with MixMatch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// Pipeline config: a JSON file or a bundled name (toy, stl10, cifar100).
    /// Defaults to the run directory's config.json, then to the bundled toy config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; falls back to the config's `run_dir`, then to $CGSSL_RUN_DIR.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Config override `dotted.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args, Clone)]
struct IterationArg {
    /// Refinement iteration (1-based).
    #[arg(long, default_value_t = 1)]
    iteration: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Partition the data into D_L / D_V / D_REF and store the test set.
    Split(Common),
    /// Train the supervised baseline.
    TrainSupervised(Common),
    /// Score D_REF, compute the threshold and write the filter report and histogram.
    Filter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        it: IterationArg,
    },
    /// Fine-tune the VAE on the low-confidence samples (pretraining the encoder if needed).
    TrainVae {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        it: IterationArg,
    },
    /// Write reconstructions and synthetic samples.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        it: IterationArg,
    },
    /// Semi-supervised training.
    TrainMixmatch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        it: IterationArg,
        /// Dump the first batch's worked MixMatch trace to this JSON file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Full pipeline for every configured seed.
    Run(Common),
    /// Raw-D_REF versus generated-data comparison.
    Ablation(Common),
    /// Print the accuracy table of a finished run (read-only).
    Report {
        #[command(flatten)]
        common: Common,
        /// Print the report JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Seed / reconstruction and synthetic-sample image grids.
    Grid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        it: IterationArg,
        /// Images per row.
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Pixel scale factor.
        #[arg(long, default_value_t = 4)]
        scale: u32,
    },
}

enum Failure {
    Usage(String),
    Stage(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Stage(e)
    }
}

fn resolve(common: &Common) -> std::result::Result<(PipelineConfig, PathBuf), Failure> {
    let usage = |e: Error| match e {
        Error::InvalidConfig(m) => Failure::Usage(m),
        e => Failure::Stage(e),
    };
    let env_dir = std::env::var_os(RUN_DIR_ENV).map(PathBuf::from);
    let early_dir = common.run_dir.clone().or_else(|| env_dir.clone());
    let mut config = match (&common.config, &early_dir) {
        (Some(path), _) => match path.to_str().and_then(PipelineConfig::bundled) {
            Some(cfg) if !path.exists() => cfg,
            _ => PipelineConfig::load(path).map_err(usage)?,
        },
        (None, Some(dir)) if dir.join("config.json").exists() => {
            PipelineConfig::load(&dir.join("config.json")).map_err(usage)?
        }
        _ => PipelineConfig::toy(),
    };
    for o in &common.overrides {
        config.apply_override(o).map_err(usage)?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let run_dir = common
        .run_dir
        .clone()
        .or_else(|| config.run_dir.clone())
        .or(env_dir)
        .ok_or_else(|| Failure::Usage(format!("no run directory: pass --run-dir or set {RUN_DIR_ENV}")))?;
    Ok((config, run_dir))
}

fn prepare(common: &Common) -> std::result::Result<(PipelineConfig, PathBuf), Failure> {
    let (config, dir) = resolve(common)?;
    config.save(&dir.join("config.json"))?;
    Ok((config, dir))
}

fn each_seed(
    common: &Common,
    stage: &'static str,
    f: impl Fn(&RunContext) -> Result<()>,
) -> std::result::Result<(), Failure> {
    let (config, dir) = prepare(common)?;
    for ctx in seed_contexts(&config, &dir) {
        f(&ctx).map_err(|e| e.in_stage(stage))?;
    }
    Ok(())
}

fn grids(ctx: &RunContext, k: usize, count: usize, scale: u32) -> Result<()> {
    let dir = ctx.augmented_dir(k);
    let (rec_manifest, rec) = import_augmented(&dir.join("rec"))?;
    let (_, synth) = import_augmented(&dir.join("synth"))?;
    let d_ref = ctx.load_split("ref")?;
    let out = ctx.iteration_dir(k).join("grids");
    let mut seeds = Vec::new();
    let mut recs = Vec::new();
    for (entry, r) in rec_manifest.entries.iter().zip(&rec).take(count) {
        let seed_id = entry.seed_id.unwrap_or_default();
        if let Some(s) = d_ref.samples().iter().find(|s| s.id == seed_id) {
            seeds.push(s);
            recs.push(r);
        }
    }
    if !seeds.is_empty() {
        write_image_grid(&[seeds, recs], scale, &out.join("seed_reconstruction.png"))?;
    }
    let synth_rows: Vec<Vec<_>> = synth
        .chunks(count.max(1))
        .take(4)
        .map(|c| c.iter().collect())
        .collect();
    if !synth_rows.is_empty() {
        write_image_grid(&synth_rows, scale, &out.join("synthetic.png"))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Split(c) => each_seed(&c, "split", RunContext::split),
        Command::TrainSupervised(c) => each_seed(&c, "train-supervised", |ctx| ctx.train_supervised().map(drop)),
        Command::Filter { common, it } => each_seed(&common, "filter", |ctx| ctx.filter(it.iteration).map(drop)),
        Command::TrainVae { common, it } => each_seed(&common, "train-vae", |ctx| ctx.train_vae(it.iteration)),
        Command::Generate { common, it } => each_seed(&common, "generate", |ctx| ctx.generate(it.iteration)),
        Command::TrainMixmatch { common, it, trace } => each_seed(&common, "train-mixmatch", |ctx| {
            let trace = trace.as_ref().map(|p| seed_path(p, ctx));
            ctx.train_mixmatch(it.iteration, trace.as_deref()).map(drop)
        }),
        Command::Run(c) => {
            let (config, dir) = resolve(&c)?;
            let report = run_pipeline(&config, &dir)?;
            print!("{}", report.table());
            Ok(())
        }
        Command::Ablation(c) => {
            let (config, dir) = resolve(&c)?;
            let report = run_ablation(&config, &dir)?;
            print!("{}", report.table());
            Ok(())
        }
        Command::Report { common, json } => {
            let (_, dir) = resolve(&common)?;
            let report = load_report(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.table());
            }
            Ok(())
        }
        Command::Grid {
            common,
            it,
            count,
            scale,
        } => each_seed(&common, "grid", |ctx| grids(ctx, it.iteration, count, scale)),
    }
}

/// With several seeds, `trace.json` becomes `trace.seed_<s>.json`.
fn seed_path(path: &Path, ctx: &RunContext) -> PathBuf {
    if ctx.config.num_seeds == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("json");
    path.with_file_name(format!("{stem}.seed_{}.{ext}", ctx.seed))
}

/// Parse `argv` (including the program name) and run the subcommand.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("cgssl: usage error: {m}");
            2
        }
        Err(Failure::Stage(e)) => {
            eprintln!("cgssl: error: {e}");
            1
        }
    }
}
