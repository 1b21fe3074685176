use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use gground::config::RunConfig;
use gground::dataset::{generate_synthetic, FeatureCache, GroundingDataset, Split};
use gground::error::{Error, Result};
use gground::fusion::{
    evaluate, mean_recall_all, rank_predictions, read_guidance, write_guidance, GuidanceIndex,
};
use gground::grounding::{read_predictions, write_predictions};
use gground::guidance::{labeled_windows, train_guidance, GuidanceModel};
use gground::pipeline::{grounding_features, measure_cost, score_guidance};

#[derive(Parser)]
#[command(name = "gground", version, about = "Guided moment grounding in long videos")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dot-path override such as `train.lr=1e-4`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for generation, training and the noisy oracle.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scoring, grounding and training.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to the dataset directory.
    GenSynth,
    /// Train the guidance model; writes model.bin and loss.csv.
    TrainGuidance,
    /// Score guidance windows of the eval split; writes guidance.json.
    ScoreWindows {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the base grounder over the eval split; writes predictions.jsonl.
    Ground,
    /// Fuse guidance into raw predictions, re-rank and suppress; writes ranked.jsonl.
    Fuse {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        guidance: Option<PathBuf>,
        /// Skip fusion and only re-rank.
        #[arg(long)]
        unguided: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate ranked predictions; writes metrics.json and metrics.csv.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Average the mean-recall rows of a table file instead.
        #[arg(long, conflicts_with = "predictions")]
        table: Option<PathBuf>,
    },
    /// Count and time guidance and grounding passes; writes cost.json.
    Bench {
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if c.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(c.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let base = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if let Some(d) = &c.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    let cfg = cfg.resolved();
    cfg.validate()?;

    let out = |name: &str| cfg.out_dir.join(name);
    let prepare_out = || fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e));
    let split = cfg.eval.split;

    match cli.command {
        Command::GenSynth => {
            let ds = generate_synthetic(&cfg.synthetic, &cfg.dataset)?;
            println!(
                "wrote {} videos and {} queries to {}",
                ds.videos().len(),
                ds.queries().len(),
                cfg.dataset.display()
            );
        }
        Command::TrainGuidance => {
            let ds = GroundingDataset::load(&cfg.dataset)?;
            let features = FeatureCache::load_all(&ds, cfg.guidance.modalities)?;
            let train = labeled_windows(&ds, &cfg.guidance, Split::Train)?;
            let val = labeled_windows(&ds, &cfg.guidance, Split::Val)?;
            let outcome =
                train_guidance(&features, &train, &val, &cfg.guidance, ds.dims(), &cfg.train)?;
            prepare_out()?;
            outcome.model.save(&out("model.bin"))?;
            write_file(&out("loss.csv"), &outcome.loss_csv())?;
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            print!("trained on {} windows; final loss {last:.4}", train.len());
            if let Some((epoch, auc)) = outcome.val_auroc.last() {
                print!("; val auroc {auc:.4} at epoch {epoch}");
            }
            println!();
        }
        Command::ScoreWindows { model } => {
            let ds = GroundingDataset::load(&cfg.dataset)?;
            let model = GuidanceModel::load(&model.unwrap_or_else(|| out("model.bin")))?;
            let features = FeatureCache::load_all(&ds, model.config().modalities)?;
            let records = score_guidance(&model, &features, &ds, split)?;
            prepare_out()?;
            write_guidance(&out("guidance.json"), &records)?;
            println!(
                "scored {} windows in {} records",
                model.pass_counter().get(),
                records.len()
            );
        }
        Command::Ground => {
            let ds = GroundingDataset::load(&cfg.dataset)?;
            let scorer = cfg.grounder.scorer();
            let features = if scorer.needs_features() {
                Some(grounding_features(&ds, split)?)
            } else {
                None
            };
            let preds = gground::pipeline::ground_split(
                scorer.as_ref(),
                &ds,
                features.as_ref(),
                split,
                &cfg.longform,
            )?;
            prepare_out()?;
            write_predictions(&out("predictions.jsonl"), &preds)?;
            let total: usize = preds.values().map(Vec::len).sum();
            println!("{total} predictions for {} queries", preds.len());
        }
        Command::Fuse {
            predictions,
            guidance,
            unguided,
            output,
        } => {
            let ds = GroundingDataset::load(&cfg.dataset)?;
            let raw = read_predictions(&predictions.unwrap_or_else(|| out("predictions.jsonl")))?;
            let index = if unguided {
                None
            } else {
                let records = read_guidance(&guidance.unwrap_or_else(|| out("guidance.json")))?;
                Some(GuidanceIndex::new(records, cfg.guidance.window_len)?)
            };
            let ranked = rank_predictions(&ds, &raw, index.as_ref(), cfg.eval.nms_threshold)?;
            prepare_out()?;
            let path = output.unwrap_or_else(|| out("ranked.jsonl"));
            write_predictions(&path, &ranked)?;
            println!("ranked {} queries into {}", ranked.len(), path.display());
        }
        Command::Eval {
            table: Some(table),
            ..
        } => {
            for (name, value) in table_means(&table)? {
                println!("{name} mR_all {value:.2}");
            }
        }
        Command::Eval { predictions, .. } => {
            let ds = GroundingDataset::load(&cfg.dataset)?;
            let ranked = read_predictions(&predictions.unwrap_or_else(|| out("ranked.jsonl")))?;
            let report = evaluate(&ds, &ranked, &cfg.eval)?;
            prepare_out()?;
            write_file(&out("metrics.json"), &report.to_json())?;
            write_file(&out("metrics.csv"), &report.to_csv())?;
            print!("{}", report.to_csv());
            println!("mR_all {:.2} over {} queries", report.mean_recall_all, report.queries);
        }
        Command::Bench { model } => {
            let ds = GroundingDataset::load(&cfg.dataset)?;
            let model = GuidanceModel::load(&model.unwrap_or_else(|| out("model.bin")))?;
            let features = FeatureCache::load_all(&ds, model.config().modalities)?;
            let scorer = cfg.grounder.scorer();
            let gfeatures = if scorer.needs_features() {
                Some(grounding_features(&ds, split)?)
            } else {
                None
            };
            let report = measure_cost(
                &model,
                &features,
                scorer.as_ref(),
                gfeatures.as_ref(),
                &ds,
                split,
                &cfg.longform,
            )?;
            prepare_out()?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            write_file(&out("cost.json"), &json)?;
            println!(
                "guidance passes {} ({:.3}s), grounding passes {} ({:.3}s)",
                report.guidance_passes,
                report.guidance_seconds,
                report.grounding_passes,
                report.grounding_seconds
            );
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rows of per-K mean recalls; `null` marks a K the row does not report.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeanRecallTable {
    ks: Vec<usize>,
    rows: Vec<MeanRecallRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeanRecallRow {
    name: String,
    mean_recall: Vec<Option<f64>>,
}

fn table_means(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: MeanRecallTable =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    table
        .rows
        .into_iter()
        .map(|row| {
            if row.mean_recall.len() != table.ks.len() {
                return Err(Error::Data(format!(
                    "row {:?} has {} values for {} K columns",
                    row.name,
                    row.mean_recall.len(),
                    table.ks.len()
                )));
            }
            Ok((row.name, mean_recall_all(&row.mean_recall)?))
        })
        .collect()
}
