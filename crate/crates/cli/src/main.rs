//! Command-line driver for the trajectory forensics pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};
use difftraj::attribution::{train_linear, LinearClassifier, Task};
use difftraj::checkpoint;
use difftraj::data::{gen_data, DatasetBundle};
use difftraj::features::{cache_read, cache_write, CacheManifest, FeatureExtractor};
use difftraj::metrics::{argmax, binary_report, one_vs_rest_report, softmax, RocCurve};
use difftraj::pipeline::{self, Context, ContextParts};
use difftraj::trainer::{history_csv, EpochLoss};
use difftraj::{Error, ExperimentConfig, NoiseSchedule, TrajectoryFeatureVector};

#[derive(Parser)]
#[command(name = "difftraj", version = pipeline::VERSION, about = "Diffusion trajectory forensics")]
struct Cli {
    /// Experiment config (JSON). Defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset used when no config file is given.
    #[arg(long, global = true, default_value = "default")]
    preset: String,
    /// Master seed; replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic member, holdout and external splits.
    GenData,
    /// Train the diffusion model on the members.
    TrainDdpm,
    /// Draw belonging samples from the trained model.
    Sample,
    /// Extract trajectory features for every split.
    Extract,
    /// Train the attribution classifier for the configured task.
    TrainClf,
    /// Evaluate the classifier on the evaluation splits.
    Eval,
    /// Compare every feature-family combination.
    Ablate,
    /// Run every experiment and write the full report.
    Report,
    /// Print the resolved config.
    ShowConfig,
}

const DATA: &str = "data.json";
const DDPM: &str = "ddpm.bin";
const FEATURES: &str = "features.csv";
const CLASSIFIER: &str = "classifier.json";
const REPORT: &str = "report.json";

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&cli.preset)?,
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_master_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, &s)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Pipeline(format!("{what} not found at {}", path.display())).into());
    }
    Ok(())
}

fn load_bundle(out: &Path) -> Result<DatasetBundle> {
    let p = out.join(DATA);
    require(&p, "dataset")?;
    let bundle: DatasetBundle = serde_json::from_slice(&fs::read(&p)?).map_err(Error::from)?;
    bundle.check_partition()?;
    Ok(bundle)
}

fn load_model(out: &Path) -> Result<difftraj::DenoiserParams> {
    let p = out.join(DDPM);
    require(&p, "checkpoint")?;
    Ok(checkpoint::load(&p)?)
}

fn load_history(out: &Path) -> Vec<EpochLoss> {
    let Ok(text) = fs::read_to_string(out.join("ddpm_history.csv")) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.split(',');
            Some(EpochLoss {
                epoch: it.next()?.parse().ok()?,
                mean_loss: it.next()?.parse().ok()?,
                lr: it.next()?.parse().ok()?,
            })
        })
        .collect()
}

fn train(cfg: &ExperimentConfig, out: &Path, bundle: &DatasetBundle) -> Result<difftraj::DenoiserParams> {
    let (params, history) = pipeline::train_model(cfg, bundle)?;
    let meta = serde_json::json!({"ddpm": cfg.ddpm, "schedule": cfg.schedule, "final_loss": history.last().map(|h| h.mean_loss)});
    checkpoint::save(&out.join(DDPM), &params, Some(meta))?;
    write(&out.join("ddpm_history.csv"), &history_csv(&history))?;
    Ok(params)
}

/// Loads every artifact in `out`, producing missing ones in-run.
fn context(cfg: &ExperimentConfig, out: &Path) -> Result<Context> {
    let mut bundle = if out.join(DATA).exists() {
        load_bundle(out)?
    } else {
        gen_data(&cfg.mixture, &cfg.counts, cfg.seeds.data)?
    };
    let params = if out.join(DDPM).exists() {
        load_model(out)?
    } else {
        train(cfg, out, &bundle)?
    };
    if bundle.belonging_train.is_empty() {
        pipeline::sample_belonging(cfg, &params, &mut bundle)?;
        write_json(&out.join(DATA), &bundle)?;
    }
    let ddpm_history = load_history(out);
    Ok(Context::from_parts(cfg, ContextParts { bundle, params, ddpm_history })?)
}

fn extractor<'a>(
    cfg: &ExperimentConfig,
    params: &'a difftraj::DenoiserParams,
    schedule: &'a NoiseSchedule,
) -> Result<FeatureExtractor<'a>> {
    Ok(FeatureExtractor::new(params, schedule, &cfg.plan, &cfg.spec, cfg.seeds.feature)?)
}

fn load_features(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TrajectoryFeatureVector>> {
    let params = load_model(out)?;
    let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
    let ex = extractor(cfg, &params, &schedule)?;
    let p = out.join(FEATURES);
    require(&p, "feature cache")?;
    Ok(cache_read(&p, ex.spec_hash())?.1)
}

fn task_set(
    features: &[TrajectoryFeatureVector],
    task: Task,
    suffix: &str,
) -> (Vec<TrajectoryFeatureVector>, Vec<usize>) {
    let splits = pipeline::task_splits(task, suffix);
    let mut f = Vec::new();
    let mut y = Vec::new();
    for (name, class) in splits {
        for v in features.iter().filter(|v| v.label == name) {
            f.push(v.clone());
            y.push(class);
        }
    }
    (f, y)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    if let Command::ShowConfig = cli.command {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    fs::create_dir_all(out)?;
    write(&out.join("config.json"), &(cfg.to_json() + "\n"))?;
    match cli.command {
        Command::ShowConfig => {}
        Command::GenData => {
            let bundle = gen_data(&cfg.mixture, &cfg.counts, cfg.seeds.data)?;
            write_json(&out.join(DATA), &bundle)?;
            eprintln!("wrote {} member samples to {}", cfg.counts.members(), out.join(DATA).display());
        }
        Command::TrainDdpm => {
            let bundle = load_bundle(out)?;
            train(&cfg, out, &bundle)?;
            eprintln!("wrote {}", out.join(DDPM).display());
        }
        Command::Sample => {
            let mut bundle = load_bundle(out)?;
            let params = load_model(out)?;
            pipeline::sample_belonging(&cfg, &params, &mut bundle)?;
            write_json(&out.join(DATA), &bundle)?;
            eprintln!("sampled {} belonging points", bundle.belonging_train.len() + bundle.belonging_eval.len());
        }
        Command::Extract => {
            let bundle = load_bundle(out)?;
            let params = load_model(out)?;
            let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
            let ex = extractor(&cfg, &params, &schedule)?;
            let mut rows = Vec::new();
            for (name, samples) in bundle.splits() {
                rows.extend(samples.iter().map(|s| (s.id, name.to_string(), s.x.clone())));
            }
            let vectors = ex.extract_all(&rows)?;
            cache_write(&out.join(FEATURES), &vectors, &CacheManifest::for_extractor(&ex, vectors.len()))?;
            eprintln!("wrote {} feature vectors of dimension {}", vectors.len(), ex.dim());
        }
        Command::TrainClf => {
            let features = load_features(&cfg, out)?;
            let (f, y) = task_set(&features, cfg.task, "train");
            let (clf, history) = train_linear(&f, &y, cfg.task.num_classes(), cfg.task.name(), &cfg.clf)?;
            clf.save(&out.join(CLASSIFIER))?;
            let mut csv = String::from("epoch,mean_loss,lr\n");
            for h in history {
                csv.push_str(&format!("{},{:.12e},{:.12e}\n", h.epoch, h.mean_loss, h.lr));
            }
            write(&out.join("classifier_history.csv"), &csv)?;
            eprintln!("wrote {}", out.join(CLASSIFIER).display());
        }
        Command::Eval => {
            let features = load_features(&cfg, out)?;
            let p = out.join(CLASSIFIER);
            require(&p, "classifier")?;
            let clf = LinearClassifier::load(&p)?;
            if clf.task != cfg.task.name() {
                bail!(Error::Param(format!("classifier was trained for {}, config asks for {}", clf.task, cfg.task.name())));
            }
            let (f, y) = task_set(&features, cfg.task, "eval");
            let logits = f.iter().map(|v| clf.predict_logits(v)).collect::<difftraj::Result<Vec<_>>>()?;
            let report = if cfg.task == Task::Oa {
                let ovr = one_vs_rest_report("oa", "trajectory", &logits, &y, 3)?;
                for c in &ovr.per_class {
                    write(&out.join(format!("roc_class{}.csv", c.class)), &c.roc.to_csv())?;
                }
                serde_json::to_value(&ovr)?
            } else {
                let scores: Vec<f64> = logits.iter().map(|l| softmax(l)[1]).collect();
                let labels: Vec<bool> = y.iter().map(|&c| c == 1).collect();
                let preds: Vec<bool> = logits.iter().map(|l| argmax(l) == 1).collect();
                let r = binary_report(cfg.task.name(), "trajectory", &scores, &labels, &preds)?;
                write(&out.join(format!("roc_{}.csv", cfg.task.name())), &RocCurve::new(&scores, &labels)?.to_csv())?;
                serde_json::to_value(&r)?
            };
            let wrapped = serde_json::json!({"version": pipeline::VERSION, "config": cfg, "report": report});
            write_json(&out.join(REPORT), &wrapped)?;
            eprintln!("wrote {}", out.join(REPORT).display());
        }
        Command::Ablate => {
            let ctx = context(&cfg, out)?;
            let rows = pipeline::run_ablation(&ctx)?;
            write(&out.join("ablation.csv"), &pipeline::ablation_csv(&rows))?;
            write_json(
                &out.join("ablation.json"),
                &serde_json::json!({"version": pipeline::VERSION, "config": cfg, "rows": rows}),
            )?;
            print!("{}", pipeline::ablation_csv(&rows));
        }
        Command::Report => {
            let ctx = context(&cfg, out)?;
            let report = pipeline::run_all(&ctx)?;
            write_json(&out.join(REPORT), &report)?;
            write(&out.join("losses_per_t.csv"), &pipeline::losses_per_t_csv(&report.belonging))?;
            write(&out.join("ablation.csv"), &pipeline::ablation_csv(&report.ablation))?;
            for (stem, roc) in pipeline::oa_roc_curves(&report.oa) {
                write(&out.join(format!("roc_{stem}.csv")), &roc.to_csv())?;
            }
            write(&out.join("summary.csv"), &pipeline::summary_csv(&report))?;
            print!("{}", pipeline::summary_csv(&report));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Param(_)) => 2,
        Some(Error::StaleCache { .. }) => 4,
        Some(e) if e.is_numeric() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
