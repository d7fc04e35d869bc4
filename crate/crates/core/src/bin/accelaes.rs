use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use accelaes::affinity::{AnchorSet, ScoringConfig, DEFAULT_SIM_THRESHOLD};
use accelaes::experiment::{
    anchor_stats, corpus_table, load_prompts, run_with_latent, schedule_report, seed_from_env,
    sweep, write_sweep_csv, AnchorSource, ConfigOverrides, EmbeddingSource, Profile, SweepAxis,
    DEFAULT_EMBEDDING_DIM,
};
use accelaes::stepcache::StepCacheConfig;
use accelaes::{Error, Result};

#[derive(Parser)]
#[command(name = "accelaes", version, about = "Accelerated diffusion-transformer sampling on a seeded reference model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampling trajectory and print its JSON report.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Write the final latent as a binary dump.
        #[arg(long)]
        dump_latent: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one trajectory per value of a parameter and print a CSV table.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// skip_ratio, mask_step, delta or warmup.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Anchor trigger statistics over a file with one prompt per line.
    Anchors {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        anchors: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SIM_THRESHOLD)]
        sim_threshold: f64,
        #[arg(long)]
        top_r: Option<usize>,
        /// Seed of the synthetic embedding table.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the FULL/SKIP plan for a step budget without sampling.
    Schedule {
        #[arg(long)]
        profile: Option<Profile>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with any subset of the run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    prompt: Option<String>,
    /// Anchor file, one anchor per line.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Embedding table, `token<TAB>values`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    sim_threshold: Option<f64>,
    #[arg(long)]
    top_r: Option<usize>,
    #[arg(long)]
    mask: Option<Switch>,
    #[arg(long)]
    skip_ratio: Option<f64>,
    #[arg(long)]
    mask_step: Option<usize>,
    #[arg(long)]
    sparse: Option<Switch>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    #[arg(long)]
    cfg_aes_scale: Option<f64>,
    #[arg(long)]
    spatial_cfg: Option<Switch>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    edge_threshold: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Result<ConfigOverrides> {
        let file = match &self.config {
            Some(p) => ConfigOverrides::load(p)?,
            None => ConfigOverrides::default(),
        };
        let flags = ConfigOverrides {
            profile: self.profile,
            prompt: self.prompt.clone(),
            anchors: self.anchors.clone().map(AnchorSource::File),
            embeddings: self.embeddings.clone().map(EmbeddingSource::File),
            sim_threshold: self.sim_threshold,
            top_r: self.top_r,
            mask: self.mask.map(bool::from),
            skip_ratio: self.skip_ratio,
            mask_step: self.mask_step,
            sparse: self.sparse.map(bool::from),
            delta: self.delta,
            warmup: self.warmup,
            steps: self.steps,
            cfg_scale: self.cfg_scale,
            cfg_aes_scale: self.cfg_aes_scale,
            spatial_cfg: self.spatial_cfg.map(bool::from),
            seed: self.seed,
            edge_threshold: self.edge_threshold,
            ..ConfigOverrides::default()
        };
        Ok(file.merge(flags))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io { path: p.into(), source: e }),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e }),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let env_seed = seed_from_env()?;
    match cli.command {
        Command::Run {
            run,
            dump_latent,
            out,
        } => {
            let config = run.overrides()?.resolve(env_seed)?;
            let (report, latent) = run_with_latent(&config)?;
            if let Some(p) = dump_latent {
                latent.write_dump(&p)?;
            }
            log::info!(
                "estimated speedup {:.3} ({} of {} steps skipped)",
                report.estimated_speedup,
                report.schedule.skip_count,
                report.schedule.total_steps
            );
            emit(out.as_deref(), &(report.to_json()? + "\n"))
        }
        Command::Sweep {
            run,
            axis,
            values,
            out,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let config = run.overrides()?.resolve(env_seed)?;
            let points = sweep(&config, axis, &values)?;
            let mut buf = Vec::new();
            write_sweep_csv(&points, &mut buf)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Anchors {
            prompts,
            anchors,
            embeddings,
            sim_threshold,
            top_r,
            seed,
            out,
        } => {
            let prompt_lines = load_prompts(&prompts)?;
            let anchors = match anchors {
                Some(p) => AnchorSet::load(&p)?,
                None => AnchorSet::builtin(),
            };
            let source = match embeddings {
                Some(p) => EmbeddingSource::File(p),
                None => EmbeddingSource::Synthetic {
                    seed: env_seed.unwrap_or(seed),
                    dim: DEFAULT_EMBEDDING_DIM,
                },
            };
            let table = corpus_table(&prompt_lines, &anchors, &source)?;
            let scoring = ScoringConfig {
                sim_threshold,
                top_r,
            };
            let stats = anchor_stats(&prompt_lines, &anchors, &table, &scoring);
            emit(out.as_deref(), &(serde_json::to_string_pretty(&stats)? + "\n"))
        }
        Command::Schedule {
            profile,
            steps,
            warmup,
            delta,
            out,
        } => {
            let d = profile.unwrap_or(Profile::LuminaLike).defaults();
            let cfg = StepCacheConfig {
                delta: delta.unwrap_or(d.delta),
                warmup: warmup.unwrap_or(d.warmup),
                total_steps: steps.unwrap_or(d.steps),
            };
            let report = schedule_report(&cfg)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
