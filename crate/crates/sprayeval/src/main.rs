use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sprayeval::core::cam::CamMethod;
use sprayeval::core::wsde::{ClusterMethod, HitRateMode, SprayerSpec, TopMode};
use sprayeval::core::{FusionMode, FusionSpace, ToyFcn};
use sprayeval::dataset::{render_stats, HitPopulation};
use sprayeval::pipeline::read_bundle;
use sprayeval::{Error, EngineSpec, RunConfig, Stage, SynthConfig};

#[derive(Parser)]
#[command(name = "sprayeval", version, about = "Segmentation, CAM faithfulness and spray-deposition evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print its statistics.
    Ingest {
        dataset: PathBuf,
        /// Denominator of the hit/miss rates: all or post-spray.
        #[arg(long, default_value = "all")]
        population: HitPopulation,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Segmentation metrics per fusion mode.
    SegEval(RunArgs),
    /// Segmentation plus CAM Deletion/Insertion faithfulness.
    CamEval(RunArgs),
    /// Full chain including keypoints, pointing game and deposition.
    Wsde(RunArgs),
    /// Render CSV/JSON/SVG/PNG reports from a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Report directory, default <out>/report.
        #[arg(long)]
        to: Option<PathBuf>,
    },
    /// Recompute every reported number from saved intermediates.
    Replay {
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the toy network over the stdio protocol.
    #[command(hide = true)]
    ServeToy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// toy:<seed> or exec:<cmdline>
    #[arg(long, default_value = "toy:0")]
    engine: String,
    /// Comma separated subset of out,aux,add,multi.
    #[arg(long, default_value = "out,aux,add,multi", value_delimiter = ',')]
    fusion: Vec<FusionMode>,
    #[arg(long, default_value = "logit")]
    fusion_space: FusionSpace,
    #[arg(long, default_value = "ablation")]
    cam: CamMethod,
    #[arg(long, default_value = "centres")]
    cluster: ClusterMethod,
    #[arg(long, default_value = "percentile")]
    top_mode: TopMode,
    #[arg(long, default_value_t = 20.9)]
    unit_ul: f64,
    #[arg(long)]
    min_dist_px: Option<f64>,
    #[arg(long)]
    box_halfwidth_px: Option<usize>,
    #[arg(long)]
    cm2_per_px: Option<f64>,
    #[arg(long, default_value_t = 4)]
    min_island_px: usize,
    /// Average hit rates per image instead of pooling.
    #[arg(long)]
    per_image_hit_rate: bool,
    #[arg(long)]
    include_background: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 256)]
    cache: usize,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn config(self, stage: Stage) -> Result<RunConfig, Error> {
        let engine: EngineSpec = self.engine.parse()?;
        let geometry = (self.min_dist_px, self.box_halfwidth_px, self.cm2_per_px);
        let (min_dist, half, cm2) = match (stage, geometry) {
            (_, (Some(d), Some(h), Some(c))) => (d, h, c),
            (Stage::Wsde, _) => {
                return Err(Error::Config(
                    "wsde needs --min-dist-px, --box-halfwidth-px and --cm2-per-px".into(),
                ))
            }
            // geometry is unused before the WSDE stage
            (_, (d, h, c)) => (d.unwrap_or(1.0), h.unwrap_or(1), c.unwrap_or(1.0)),
        };
        let sprayer = SprayerSpec::new(min_dist, half, cm2)
            .and_then(|s| s.with_unit_deposit(self.unit_ul))
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(RunConfig {
            dataset: self.dataset,
            engine,
            fusions: self.fusion,
            fusion_space: self.fusion_space,
            cam: self.cam,
            cluster: self.cluster,
            top_mode: self.top_mode,
            sprayer,
            min_island_px: self.min_island_px,
            include_background: self.include_background,
            hit_rate_mode: if self.per_image_hit_rate { HitRateMode::PerImage } else { HitRateMode::Pooled },
            stage,
            jobs: self.jobs,
            cache_capacity: self.cache,
            out: self.out,
        })
    }
}

fn run_stage(args: RunArgs, stage: Stage) -> anyhow::Result<()> {
    let cfg = args.config(stage)?;
    let bundle = sprayeval::run_pipeline(&cfg)?;
    sprayeval::render_reports(&bundle, Some(&cfg.out), &cfg.out.join("report"))?;
    for note in &bundle.notes {
        eprintln!("note: {note}");
    }
    for t in &bundle.segmentation {
        println!("{} {}: mIoU {}", t.model, t.fusion, fmt_opt(t.miou));
    }
    for s in &bundle.faithfulness_summary {
        println!(
            "{} {}: deletion {} insertion {}",
            s.model,
            s.fusion,
            fmt_opt(s.mean_deletion),
            fmt_opt(s.mean_insertion)
        );
    }
    for d in &bundle.deposition {
        println!(
            "{} {} {}: |Δ| {:.1} uL, hit rate {:.3}",
            d.model, d.fusion, d.method, d.total_absolute_difference_ul, d.mean_hit_rate
        );
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { dataset, population, json } => {
            let (_, stats) = sprayeval::ingest(&dataset, population)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", render_stats(&stats));
            }
        }
        Command::Synth { out, seed, images, test, height, width } => {
            let cfg = SynthConfig { seed, images, test, height, width, ..SynthConfig::default() };
            let manifest = sprayeval::generate(&out, &cfg)?;
            print!("{}", render_stats(&manifest.stats));
        }
        Command::SegEval(args) => run_stage(args, Stage::Segmentation)?,
        Command::CamEval(args) => run_stage(args, Stage::Cam)?,
        Command::Wsde(args) => run_stage(args, Stage::Wsde)?,
        Command::Report { out, to } => {
            let bundle = read_bundle(&out)?;
            let to = to.unwrap_or_else(|| out.join("report"));
            sprayeval::render_reports(&bundle, Some(&out), &to)?;
            println!("wrote {}", to.display());
        }
        Command::Replay { out } => {
            let report = sprayeval::replay(&out)?;
            for m in &report.mismatches {
                println!("mismatch: {m}");
            }
            println!("checked {} values, {} mismatches", report.checked, report.mismatches.len());
            if !report.is_clean() {
                return Err(Error::Data(format!("{} replay mismatches", report.mismatches.len())).into());
            }
        }
        Command::ServeToy { seed } => {
            let engine = ToyFcn::from_seed(seed);
            sprayeval::protocol::serve(&engine, io::stdin().lock(), io::stdout().lock())
                .context("serving toy engine")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.chain().find_map(|e| e.downcast_ref::<Error>()).map_or(1, Error::exit_code);
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
    }
}
