//! The `sifid` command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use sifid_core::augment::CATALOG;
use sifid_core::baselines::{niqe_fit, MetricKind, NiqeModel};
use sifid_core::correlation::{classify_noise_with, compare_indicators, select_si_fid_with, CorrelationError, NoiseClass};
use sifid_core::encoder::init_encoder;
use sifid_core::fid::score_features;
use sifid_core::subjective::{aggregate, normalize, SubjectiveScore};
use sifid_core::synthgen::{build_severity_ladder_with, random_scene, Bundle, SynthError};
use sifid_core::{Image, NoiseSpec, Rng};

use crate::bundle::{self, BundleError};
use crate::config::{self, ConfigError, RunConfig};
use crate::distort::{self, DistortError};
use crate::formats::{self, FormatError};
use crate::io::{self, IoError};
use crate::pipeline::{self, PipelineError, Scorers};
use crate::service::{self, RatingStore, ServiceError};
use crate::tables::{self, ScoreRecord, TableError};
use crate::train_run::{self, RunError};

#[derive(Debug, Parser)]
#[command(name = "sifid", version, about = "Stitched-image quality scoring pipeline")]
pub struct Cli {
    /// Flat TOML config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory. Defaults to $SIFID_RUN_ROOT/<command> or runs/<command>.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distort every image in a directory with all 14 catalog noises.
    Distort {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic severity-ladder bundle.
    Synth {
        /// Number of generated sources (ignored with --source-dir).
        #[arg(long, default_value_t = 10)]
        sources: usize,
        #[arg(long, default_value_t = 192)]
        side: usize,
        /// Use the images in this directory as sources instead.
        #[arg(long)]
        source_dir: Option<PathBuf>,
        #[arg(long, default_value_t = sifid_core::synthgen::DEFAULT_JITTER)]
        jitter: f64,
    },
    /// Fine-tune the encoder with one catalog noise (or all of them).
    Train {
        #[arg(long)]
        images: PathBuf,
        #[command(flatten)]
        noise: NoiseChoice,
        #[command(flatten)]
        hyper: TrainFlags,
    },
    /// Score a bundle (or a pair of feature files) with one metric.
    Score {
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// fid, sifid, mse, psnr, ssim, ag, sf or niqe.
        #[arg(long)]
        metric: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        niqe_model: Option<PathBuf>,
        #[arg(long, requires = "stitched_features")]
        reference_features: Option<PathBuf>,
        #[arg(long, requires = "reference_features")]
        stitched_features: Option<PathBuf>,
    },
    /// Per-epoch correlation curves for trained checkpoints.
    Curves {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoints: PathBuf,
        #[command(flatten)]
        noise: NoiseChoice,
        /// Aggregate subjective CSV; defaults to the bundle's synthetic scores.
        #[arg(long)]
        subjective: Option<PathBuf>,
    },
    /// Classify each curve as positive or negative noise.
    Classify {
        #[arg(long)]
        curves: PathBuf,
    },
    /// Pick the best noise and epoch among positive curves.
    Select {
        #[arg(long)]
        curves: PathBuf,
    },
    /// Rank indicators by agreement with subjective scores.
    Compare {
        #[arg(long)]
        bundle: PathBuf,
        /// Checkpoint used for the fine-tuned indicator.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        niqe_model: Option<PathBuf>,
        /// Extra scores: image_id,metric_name,value,orientation.
        #[arg(long)]
        external: Option<PathBuf>,
        /// Comma-separated metric names; defaults to every available one.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        #[arg(long)]
        subjective: Option<PathBuf>,
    },
    /// Normalise and aggregate a ratings CSV into subjective scores.
    Aggregate {
        #[arg(long)]
        ratings: PathBuf,
    },
    /// Serve a bundle to critics over HTTP.
    RateServe {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        bundle_id: Option<String>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Score log; defaults to <run dir>/ratings.ndjson.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct NoiseChoice {
    /// Catalog tag, e.g. colorjitter_b0.5_h0.3.
    #[arg(long, conflicts_with = "all_noises")]
    pub noise: Option<String>,
    #[arg(long)]
    pub all_noises: bool,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown noise tag '{0}'")]
    UnknownNoise(String),
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("missing input: {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Distort(#[from] DistortError),
    #[error(transparent)]
    Train(#[from] RunError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Subjective(#[from] sifid_core::subjective::SubjectiveError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("metric error: {0}")]
    Metric(#[from] sifid_core::baselines::MetricError),
    #[error("scoring error: {0}")]
    Fid(#[from] sifid_core::fid::FidError),
}

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    /// Unknown subcommand or malformed flags (reported by the parser).
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const AUGMENT: i32 = 5;
    pub const TRAIN: i32 = 6;
    pub const SCORE: i32 = 7;
    pub const CORRELATION: i32 = 8;
    pub const SYNTH: i32 = 9;
    pub const SERVICE: i32 = 10;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownNoise(_) | CliError::UnknownMetric(_) | CliError::Missing(_) => exit::CONFIG,
            CliError::Io(_) | CliError::Format(_) | CliError::Bundle(_) => exit::IO,
            CliError::Table(TableError::Subjective(_)) | CliError::Subjective(_) => exit::CORRELATION,
            CliError::Table(_) => exit::IO,
            CliError::Distort(DistortError::Io(_)) => exit::IO,
            CliError::Distort(_) => exit::AUGMENT,
            CliError::Train(RunError::Train(_)) => exit::TRAIN,
            CliError::Train(_) => exit::IO,
            CliError::Pipeline(PipelineError::Correlation(_)) | CliError::Correlation(_) => exit::CORRELATION,
            CliError::Pipeline(PipelineError::Synth(_)) | CliError::Synth(_) => exit::SYNTH,
            CliError::Pipeline(_) | CliError::Metric(_) | CliError::Fid(_) => exit::SCORE,
            CliError::Service(_) => exit::SERVICE,
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Command::Train { hyper, .. } = &cli.command {
        if let Some(v) = hyper.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = hyper.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = hyper.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = hyper.momentum {
            cfg.momentum = v;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Distort { .. } => "distort",
        Command::Synth { .. } => "synth",
        Command::Train { .. } => "train",
        Command::Score { .. } => "score",
        Command::Curves { .. } => "curves",
        Command::Classify { .. } => "classify",
        Command::Select { .. } => "select",
        Command::Compare { .. } => "compare",
        Command::Aggregate { .. } => "aggregate",
        Command::RateServe { .. } => "rate-serve",
    }
}

fn noises(choice: &NoiseChoice) -> Result<Vec<NoiseSpec>, CliError> {
    match (&choice.noise, choice.all_noises) {
        (_, true) => Ok(CATALOG.to_vec()),
        (Some(tag), false) => Ok(vec![NoiseSpec::from_tag(tag).ok_or_else(|| CliError::UnknownNoise(tag.clone()))?]),
        (None, false) => Err(CliError::Missing("--noise or --all-noises")),
    }
}

fn metric(name: &str) -> Result<MetricKind, CliError> {
    MetricKind::from_name(name).ok_or_else(|| CliError::UnknownMetric(name.to_string()))
}

fn load_images(dir: &Path) -> Result<Vec<Image>, CliError> {
    io::list_images(dir)?.iter().map(|p| io::load_image(p).map_err(CliError::from)).collect()
}

fn subjective_for(bundle: &Bundle, path: Option<&Path>) -> Result<Vec<SubjectiveScore>, CliError> {
    match path {
        Some(p) => Ok(tables::read_aggregate_csv(p)?),
        None => Ok(bundle.subjective.clone()),
    }
}

/// Loads the NIQE model, or fits one on the bundle sources when none is given.
fn niqe_model(bundle: &Bundle, path: Option<&Path>, cfg: &RunConfig, run_dir: &Path) -> Result<NiqeModel, CliError> {
    if let Some(p) = path {
        return Ok(formats::load_niqe(p)?);
    }
    let pristine: Vec<Image> = bundle.sources.iter().map(|(_, s)| s.clone()).collect();
    let model = niqe_fit(&pristine, &cfg.niqe())?;
    formats::save_niqe(&model, &run_dir.join("niqe_model.bin"))?;
    Ok(model)
}

/// Runs one command; returns the process exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli)?;
    let dir = config::run_dir(cli.out.as_deref(), command_name(&cli.command));
    cfg.echo(&dir)?;
    match cli.command {
        Command::Distort { input } => {
            let m = distort::build_distorted_set(&input, &CATALOG, cfg.seed, &dir, cfg.jobs)?;
            println!("wrote {} distorted images and {}", m.len(), dir.join(distort::MANIFEST_FILE).display());
        }
        Command::Synth {
            sources,
            side,
            source_dir,
            jitter,
        } => {
            let imgs = match source_dir {
                Some(d) => load_images(&d)?,
                None => (0..sources)
                    .map(|i| random_scene(side, side, &mut Rng::substream(cfg.seed, &[0x5c, i as u64])))
                    .collect(),
            };
            let b = build_severity_ladder_with(&imgs, cfg.seed, jitter)?;
            bundle::write_bundle(&b, &dir)?;
            println!("wrote bundle with {} sources and {} stitched images to {}", b.sources.len(), b.pairs.len(), dir.display());
        }
        Command::Train { images, noise, .. } => {
            let imgs = load_images(&images)?;
            let enc = cfg.encoder();
            let specs = noises(&noise)?;
            let results = distort::with_jobs(cfg.jobs, || {
                use rayon::prelude::*;
                specs
                    .par_iter()
                    .map(|n| train_run::run_training(&imgs, &enc, &cfg.train(*n), &dir).map(|s| (n.tag(), s)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .map_err(|e| CliError::Pipeline(PipelineError::Pool(e)))??;
            println!("{:<28} {:>6} {:>12}", "noise", "epochs", "final_loss");
            for (tag, s) in results {
                let last = s.log.last().map_or(f64::NAN, |r| r.mean_loss);
                println!("{tag:<28} {:>6} {last:>12.6}", s.log.len());
            }
        }
        Command::Score {
            bundle,
            metric: name,
            checkpoint,
            niqe_model: niqe_path,
            reference_features,
            stitched_features,
        } => {
            let kind = metric(&name)?;
            let mut records = Vec::new();
            if let (Some(r), Some(s)) = (&reference_features, &stitched_features) {
                let v = score_features(&formats::load_features(r)?, &formats::load_features(s)?)?;
                records.push(ScoreRecord::new(r.display().to_string(), s.display().to_string(), None, kind.name(), v));
            } else {
                let bdir = bundle.ok_or(CliError::Missing("--bundle or feature files"))?;
                let b = bundle::load_bundle(&bdir)?;
                let init = init_encoder(&cfg.encoder()).map_err(sifid_core::fid::FidError::from)?;
                let ck = checkpoint.as_deref().map(formats::load_checkpoint).transpose()?;
                let niqe = match kind {
                    MetricKind::Niqe => Some(niqe_model(&b, niqe_path.as_deref(), &cfg, &dir)?),
                    _ => None,
                };
                let fid_enc = match (kind, &ck) {
                    (MetricKind::Fid, Some(c)) => &c.encoder,
                    _ => &init,
                };
                let scorers = Scorers {
                    fid: Some(fid_enc),
                    si_fid: ck.as_ref().map(|c| &c.encoder),
                    niqe: niqe.as_ref(),
                };
                let scores = pipeline::score_bundle(&b, kind, &scorers, cfg.tile, cfg.stride, cfg.jobs)?;
                let ck_name = checkpoint.as_ref().map(|p| p.display().to_string());
                for s in &scores {
                    records.push(ScoreRecord::new(
                        bundle::reference_path(&bdir, &s.image_id).display().to_string(),
                        bundle::stitched_path(&bdir, &s.image_id).display().to_string(),
                        ck_name.clone(),
                        kind.name(),
                        s.value,
                    ));
                }
            }
            tables::write_json(&records, &dir.join("scores.json"))?;
            for r in &records {
                println!("{:<48} {}", r.stitched_set, r.score.map_or("inf".to_string(), |v| format!("{v:.6}")));
            }
        }
        Command::Curves {
            bundle: bdir,
            checkpoints,
            noise,
            subjective,
        } => {
            let b = bundle::load_bundle(&bdir)?;
            let subj = subjective_for(&b, subjective.as_deref())?;
            let groups = b.eval_groups(cfg.tile, cfg.stride)?;
            let mut curves = Vec::new();
            for n in noises(&noise)? {
                let series = match train_run::load_series(&checkpoints, &n.tag()) {
                    Err(RunError::NoCheckpoints(_)) if noise.all_noises => continue,
                    other => other?,
                };
                let c = pipeline::build_curve_parallel(&series, &groups, &subj, cfg.correlation_mode, cfg.jobs)?;
                tables::write_curve_csv(std::slice::from_ref(&c), &dir.join(format!("curve_{}.csv", n.tag())))?;
                println!("{:<28} epochs {:>4}  epoch0 srocc {:.4}  last srocc {:.4}", n.tag(), c.epochs(), c.srocc[0], c.srocc[c.epochs()]);
                curves.push(c);
            }
            if curves.is_empty() {
                return Err(CliError::Train(RunError::NoCheckpoints(checkpoints)));
            }
            tables::write_curve_csv(&curves, &dir.join("curves.csv"))?;
        }
        Command::Classify { curves } => {
            let rule = cfg.classify_rule();
            let verdicts = tables::read_curve_csv(&curves, cfg.correlation_mode)?
                .iter()
                .map(|c| classify_noise_with(c, &rule))
                .collect::<Result<Vec<_>, _>>()?;
            tables::write_json(&verdicts, &dir.join("verdicts.json"))?;
            println!("{:<28} {:>9} {:>10} {:>10} {:>10}", "noise", "class", "slope", "gain", "roughness");
            for v in &verdicts {
                let class = if v.class == NoiseClass::Positive { "positive" } else { "negative" };
                println!("{:<28} {class:>9} {:>10.5} {:>10.5} {:>10.5}", v.noise.tag(), v.slope, v.final_gain, v.roughness);
            }
        }
        Command::Select { curves } => {
            let all = tables::read_curve_csv(&curves, cfg.correlation_mode)?;
            let sel = select_si_fid_with(&all, &cfg.classify_rule())?;
            tables::write_json(&sel, &dir.join("selection.json"))?;
            println!(
                "selected {} at epoch {} (checkpoint {}), pcc {:.4}, srocc {:.4}",
                sel.noise.tag(),
                sel.epoch,
                formats::checkpoint_name(&sel.noise, sel.epoch),
                sel.pcc,
                sel.srocc
            );
        }
        Command::Compare {
            bundle: bdir,
            checkpoint,
            niqe_model: niqe_path,
            external,
            metrics,
            subjective,
        } => {
            let b = bundle::load_bundle(&bdir)?;
            let subj = pipeline::subjective_groups(&b, &subjective_for(&b, subjective.as_deref())?)?;
            let kinds: Vec<MetricKind> = if metrics.is_empty() {
                MetricKind::ALL
                    .into_iter()
                    .filter(|k| *k != MetricKind::SiFid || checkpoint.is_some())
                    .filter(|k| *k != MetricKind::Niqe || niqe_path.is_some() || b.sources.len() >= sifid_core::baselines::NIQE_MIN_PRISTINE)
                    .collect()
            } else {
                metrics.iter().map(|m| metric(m)).collect::<Result<_, _>>()?
            };
            let init = init_encoder(&cfg.encoder()).map_err(sifid_core::fid::FidError::from)?;
            let ck = checkpoint.as_deref().map(formats::load_checkpoint).transpose()?;
            let niqe = if kinds.contains(&MetricKind::Niqe) {
                Some(niqe_model(&b, niqe_path.as_deref(), &cfg, &dir)?)
            } else {
                None
            };
            let scorers = Scorers {
                fid: Some(&init),
                si_fid: ck.as_ref().map(|c| &c.encoder),
                niqe: niqe.as_ref(),
            };
            let mut indicators = Vec::new();
            for k in kinds {
                let scores = pipeline::score_bundle(&b, k, &scorers, cfg.tile, cfg.stride, cfg.jobs)?;
                indicators.push(pipeline::indicator(k.name(), k, &scores, &b));
            }
            if let Some(p) = external {
                let ext = tables::read_external_scores(&p)?;
                tables::merge_external(&mut indicators, &ext, &pipeline::group_index(&b), b.sources.len())?;
            }
            let report = compare_indicators(&indicators, &subj)?;
            tables::write_json(&report, &dir.join("report.json"))?;
            println!("{:>4} {:<12} {:>9} {:>9} {:>10} {:>10}", "rank", "indicator", "mean_pcc", "mean_srcc", "var_pcc", "var_srocc");
            for r in &report.indicators {
                let var = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.5}"));
                println!(
                    "{:>4} {:<12} {:>9.4} {:>9.4} {:>10} {:>10}",
                    r.rank,
                    r.name,
                    r.mean_pcc,
                    r.mean_srocc,
                    var(r.var_pcc),
                    var(r.var_srocc)
                );
            }
        }
        Command::Aggregate { ratings } => {
            let table = tables::ingest_csv(&ratings)?;
            let scores = aggregate(&normalize(&table, cfg.normalization)?)?;
            tables::write_aggregate_csv(&scores, &dir.join("aggregate.csv"))?;
            println!("aggregated {} images from {} critics", scores.len(), table.critics().len());
        }
        Command::RateServe {
            bundle: bdir,
            bundle_id,
            addr,
            log,
        } => {
            let id = bundle_id.unwrap_or_else(|| bdir.file_name().and_then(|s| s.to_str()).unwrap_or("bundle").to_string());
            let spec = service::bundle_from_dir(&id, &bdir)?;
            let log = log.unwrap_or_else(|| dir.join("ratings.ndjson"));
            let store = Arc::new(RatingStore::open(vec![spec], &log)?);
            println!("serving bundle '{id}' on http://{addr} (log {})", log.display());
            let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Storage(e.to_string()))?;
            rt.block_on(service::serve(addr, store)).map_err(|e| ServiceError::Storage(e.to_string()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("sifid").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn unknown_command_is_a_usage_error() {
        let err = Cli::try_parse_from(["sifid", "frobnicate"]).unwrap_err();
        assert_eq!(err.exit_code(), exit::USAGE);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "epochs = 7\nseed = 3\n").unwrap();
        let cli = parse(&[
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "9",
            "train",
            "--images",
            "x",
            "--noise",
            "hflip_p0.5",
            "--epochs",
            "2",
        ]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!((cfg.epochs, cfg.seed), (2, 9));
    }

    #[test]
    fn error_classes_have_distinct_codes() {
        let codes = [
            CliError::UnknownNoise("x".into()).exit_code(),
            CliError::Io(IoError::FileNotFound("x".into())).exit_code(),
            CliError::Correlation(CorrelationError::NoPositiveNoise).exit_code(),
            CliError::Synth(SynthError::TooFewSources(1)).exit_code(),
            CliError::Service(ServiceError::SessionComplete).exit_code(),
            CliError::Train(RunError::Train(sifid_core::trainer::TrainError::EmptyTrainSet)).exit_code(),
            CliError::Distort(DistortError::EmptyInputDir("x".into())).exit_code(),
            CliError::Pipeline(PipelineError::MissingInput("a", "b")).exit_code(),
        ];
        let mut uniq = codes.to_vec();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), codes.len());
        assert!(!codes.contains(&exit::OK) && !codes.contains(&exit::USAGE));
    }

    #[test]
    fn noise_choice() {
        assert_eq!(noises(&NoiseChoice { noise: None, all_noises: true }).unwrap().len(), 14);
        assert!(matches!(
            noises(&NoiseChoice { noise: Some("bogus".into()), all_noises: false }),
            Err(CliError::UnknownNoise(_))
        ));
    }
}
