//! Command-line front end: train models, run attack sweeps, score single
//! inputs, and correlate reports across models.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nss::attack::AttackKind;
use nss::data::{self, LabeledDataset};
use nss::metrics::{self, NssConfig};
use nss::net::FeedForwardModel;
use nss::report::{
    correlate_reports, read_records_csv, render_histogram_svg, run_sweep,
    write_records_csv, RobustnessReport, SweepManifest,
};
use nss::train::{train, TrainConfig};
use nss::{Error, Result};

#[derive(Parser)]
#[command(name = "nss", version, about = "Noise sensitivity scoring for feed-forward classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset: a directory with MNIST IDX files, or
    /// `synthetic:CLASSES,DIM,PER_CLASS,SEPARATION[,SEED]`.
    #[arg(long)]
    data: String,
}

#[derive(Args)]
struct NssArgs {
    /// Maximum score C for unreachable competitors.
    #[arg(long = "C", default_value_t = 100.0)]
    max_score: f64,
    /// Skewness threshold tau.
    #[arg(long, default_value_t = 5.0)]
    tau: f64,
    /// Evaluation points for the multi-step rate of change.
    #[arg(long, default_value_t = 1)]
    steps: usize,
}

impl NssArgs {
    fn config(&self) -> NssConfig {
        NssConfig {
            max_score: self.max_score,
            skew_threshold: self.tau,
            steps: self.steps,
        }
    }
}

#[derive(Args)]
struct AttackArgs {
    /// Attack kind: fgsm, fgm, gaussian, or uniform.
    #[arg(long, default_value = "fgsm")]
    attack: AttackKind,
    /// Initial noise level applied before scoring.
    #[arg(long, default_value_t = 0.0)]
    eps0: f64,
    /// Increasing allowable noise levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15,0.2")]
    mu: Vec<f64>,
    /// Clamp perturbed inputs to [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    clip: Option<Vec<f64>>,
    /// Refine first-success epsilons on a fine grid of this step.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Keep the raw FGM gradient magnitude instead of rescaling it to the
    /// L2 length of a sign vector.
    #[arg(long)]
    no_fgm_rescale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train an MLP and write the model file plus a training log.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for model.json and train_log.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Hidden layer widths, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "100,100,100")]
        hidden: Vec<usize>,
    },
    /// Run the full attack sweep over the validation split and emit
    /// manifest.json, records.csv, report.json (and optionally an SVG).
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        attack: AttackArgs,
        #[command(flatten)]
        nss: NssArgs,
        /// Worker pool size (0 = all cores). Never affects the output.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Also emit histogram.svg.
        #[arg(long)]
        svg: bool,
        /// Log-scaled SVG bar heights.
        #[arg(long)]
        log_scale: bool,
    },
    /// Score a single validation input and print the result as JSON.
    Nss {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Index into the validation split.
        #[arg(long)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        attack: AttackArgs,
        #[command(flatten)]
        nss: NssArgs,
    },
    /// Recompute the dataset skewness score from a records CSV.
    Skewness {
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        nss: NssArgs,
    },
    /// Correlate skewness scores with high-noise error rates across
    /// several report.json files.
    Correlate {
        /// Three or more report.json paths.
        #[arg(long = "report", required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        /// Index into per_level_error (default: the highest level).
        #[arg(long)]
        level_index: Option<usize>,
    },
    /// Verify and pretty-print a sweep output directory.
    Report {
        /// Directory holding manifest.json, records.csv and report.json.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Loads the (train, validation) split named by a --data spec. Inputs are
/// raw (unnormalized).
fn load_split(spec: &str) -> Result<(LabeledDataset, LabeledDataset)> {
    if let Some(params) = spec.strip_prefix("synthetic:") {
        let fields: Vec<&str> = params.split(',').collect();
        if fields.len() < 4 || fields.len() > 5 {
            return Err(Error::InvalidConfig(format!(
                "synthetic spec '{params}' (want CLASSES,DIM,PER_CLASS,SEPARATION[,SEED])"
            )));
        }
        let parse = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad integer '{s}' in synthetic spec")))
        };
        let classes = parse(fields[0])?;
        let dim = parse(fields[1])?;
        let per_class = parse(fields[2])?;
        let separation: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad float '{}'", fields[3])))?;
        let seed = if fields.len() == 5 { parse(fields[4])? as u64 } else { 0 };
        let train = data::synthetic_blobs(classes, dim, per_class, separation, seed)?;
        let val_per_class = (per_class / 5).max(1);
        let val = data::synthetic_blobs(classes, dim, val_per_class, separation, seed ^ 0x5eed)?;
        return Ok((train, val));
    }
    let dir = Path::new(spec);
    let find = |stem: &str| -> Result<PathBuf> {
        for name in [stem.to_string(), format!("{stem}.gz")] {
            let p = dir.join(&name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::InvalidConfig(format!(
            "no {stem}[.gz] under {}",
            dir.display()
        )))
    };
    let train = data::load_mnist_idx(
        &find("train-images-idx3-ubyte")?,
        &find("train-labels-idx1-ubyte")?,
    )?;
    let val = data::load_mnist_idx(
        &find("t10k-images-idx3-ubyte")?,
        &find("t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, val))
}

fn parse_clip(clip: &Option<Vec<f64>>) -> Result<Option<(f64, f64)>> {
    match clip {
        None => Ok(None),
        Some(v) if v.len() == 2 && v[0] < v[1] => Ok(Some((v[0], v[1]))),
        Some(v) => Err(Error::InvalidConfig(format!("bad clip range {v:?}"))),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn build_manifest(
    model_path: &Path,
    data_spec: &str,
    seed: u64,
    attack: &AttackArgs,
    nss: &NssArgs,
) -> Result<SweepManifest> {
    Ok(SweepManifest {
        model_path: model_path.display().to_string(),
        dataset_id: data_spec.to_string(),
        attack: attack.attack,
        epsilon_0: attack.eps0,
        mu_levels: attack.mu.clone(),
        nss: nss.config(),
        seed,
        clip: parse_clip(&attack.clip)?,
        grid_step: attack.grid_step,
        fgm_rescale: !attack.no_fgm_rescale,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// Loads the validation split normalized with the model's stored stats.
fn load_validation(model: &FeedForwardModel, data_spec: &str) -> Result<LabeledDataset> {
    let (_, val) = load_split(data_spec)?;
    data::normalize_with(&val, &model.normalization)
}

#[derive(Serialize)]
struct TrainSummary {
    config: TrainConfig,
    normalization_mean: Vec<f64>,
    normalization_std: Vec<f64>,
    epoch_loss: Vec<f64>,
    epoch_accuracy: Vec<f64>,
    validation_accuracy: f64,
}

fn cmd_train(
    data_spec: &str,
    out: &Path,
    cfg: TrainConfig,
) -> Result<()> {
    let (train_raw, val_raw) = load_split(data_spec)?;
    let train_set = data::normalize(&train_raw)?;
    let stats = train_set.normalization.clone().unwrap();
    let val_set = data::normalize_with(&val_raw, &stats)?;

    let (model, log) = train(&train_set, &cfg)?;
    let val_acc = nss::train::evaluate_accuracy(&model, &val_set)?;

    fs::create_dir_all(out)?;
    model.save(&out.join("model.json"))?;
    let summary = TrainSummary {
        config: cfg,
        normalization_mean: stats.mean,
        normalization_std: stats.std,
        epoch_loss: log.epoch_loss,
        epoch_accuracy: log.epoch_accuracy,
        validation_accuracy: val_acc,
    };
    fs::write(
        out.join("train_log.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    eprintln!(
        "trained {} epochs; final train accuracy {:.4}, validation accuracy {:.4}",
        summary.epoch_accuracy.len(),
        summary.epoch_accuracy.last().copied().unwrap_or(0.0),
        val_acc
    );
    println!("{}", out.join("model.json").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    model_path: &Path,
    data_spec: &str,
    out: &Path,
    seed: u64,
    attack: &AttackArgs,
    nss_args: &NssArgs,
    workers: usize,
    svg: bool,
    log_scale: bool,
) -> Result<()> {
    let model = FeedForwardModel::load(model_path)?;
    let val = load_validation(&model, data_spec)?;
    let manifest = build_manifest(model_path, data_spec, seed, attack, nss_args)?;
    let workers = if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    };
    let (records, report) = run_sweep(&model, &val, &manifest, workers)?;

    fs::create_dir_all(out)?;
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut csv = Vec::new();
    write_records_csv(&records, &report.manifest_hash, &mut csv)?;
    fs::write(out.join("records.csv"), csv)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    if svg {
        fs::write(
            out.join("histogram.svg"),
            render_histogram_svg(&report.histogram, log_scale),
        )?;
    }
    eprintln!(
        "swept {} inputs: {} survivors, validation error {:.4}, skewness {}",
        report.counts.total,
        report.counts.survivors,
        report.validation_error,
        report
            .skewness
            .map_or_else(|| "unavailable".to_string(), |s| format!("{s:.4}")),
    );
    println!("{}", out.join("report.json").display());
    Ok(())
}

#[derive(Serialize)]
struct SingleNss {
    input_index: usize,
    true_label: usize,
    clean_prediction: usize,
    survived_eps0: bool,
    nss: Option<f64>,
    minimizing_class: Option<usize>,
}

fn cmd_nss(
    model_path: &Path,
    data_spec: &str,
    index: usize,
    seed: u64,
    attack: &AttackArgs,
    nss_args: &NssArgs,
) -> Result<()> {
    let model = FeedForwardModel::load(model_path)?;
    let val = load_validation(&model, data_spec)?;
    let x = val
        .inputs
        .get(index)
        .ok_or_else(|| Error::InvalidConfig(format!("index {index} out of range")))?;
    let label = val.labels[index];
    let clean = model.predicted_class(x)?;

    let cfg = nss_args.config();
    let dir = match attack.attack {
        AttackKind::Fgsm => nss::attack::fgsm_direction(&model, x)?,
        AttackKind::Fgm => {
            let d = nss::attack::fgm_direction(&model, x)?;
            if attack.no_fgm_rescale {
                d
            } else {
                d.rescaled_to_l2((model.input_dim as f64).sqrt())
            }
        }
        AttackKind::Gaussian => nss::attack::gaussian_direction(model.input_dim, seed ^ index as u64)?,
        AttackKind::Uniform => nss::attack::uniform_direction(model.input_dim, seed ^ index as u64)?,
    };
    let x0 = nss::attack::perturb(x, &dir, attack.eps0);
    let surface = model.per_class_error(&x0)?;
    let out = if surface.predicted == clean {
        let rate = metrics::rate_of_change(&model, &x0, &dir)?;
        let (value, class) = metrics::nss(&surface, &rate, &cfg)?;
        SingleNss {
            input_index: index,
            true_label: label,
            clean_prediction: clean,
            survived_eps0: true,
            nss: Some(value),
            minimizing_class: class,
        }
    } else {
        SingleNss {
            input_index: index,
            true_label: label,
            clean_prediction: clean,
            survived_eps0: false,
            nss: None,
            minimizing_class: None,
        }
    };
    print_json(&out)
}

fn cmd_skewness(records_path: &Path, nss_args: &NssArgs) -> Result<()> {
    let file = fs::File::open(records_path)?;
    let (records, _) = read_records_csv(BufReader::new(file))?;
    let value = metrics::dataset_robustness(&records, &nss_args.config())?;
    println!("{value}");
    Ok(())
}

fn cmd_correlate(report_paths: &[PathBuf], level_index: Option<usize>) -> Result<()> {
    let mut reports = Vec::with_capacity(report_paths.len());
    for p in report_paths {
        let report: RobustnessReport = serde_json::from_str(&fs::read_to_string(p)?)?;
        reports.push(report);
    }
    let level_index = level_index.unwrap_or_else(|| {
        reports
            .first()
            .map_or(0, |r| r.per_level_error.len().saturating_sub(1))
    });
    let block = correlate_reports(&reports, level_index)?;
    print_json(&block)
}

fn cmd_report(out: &Path) -> Result<()> {
    let manifest_bytes = fs::read(out.join("manifest.json"))?;
    let manifest: SweepManifest = serde_json::from_slice(&manifest_bytes)?;
    let expected = manifest.hash()?;

    let report: RobustnessReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json"))?)?;
    if report.manifest_hash != expected {
        return Err(Error::ManifestMismatch {
            file: "report.json".into(),
            found: report.manifest_hash,
            expected,
        });
    }
    let csv = fs::File::open(out.join("records.csv"))?;
    let (records, csv_hash) = read_records_csv(BufReader::new(csv))?;
    match csv_hash {
        Some(h) if h == expected => {}
        other => {
            return Err(Error::ManifestMismatch {
                file: "records.csv".into(),
                found: other.unwrap_or_else(|| "<missing>".into()),
                expected,
            });
        }
    }

    println!("manifest      {expected}");
    println!(
        "model         {} ({} on {})",
        manifest.model_path, manifest.attack, manifest.dataset_id
    );
    println!(
        "inputs        {} total, {} survivors, {} clean errors, {} eps0 failures, {} rejected",
        report.counts.total,
        report.counts.survivors,
        report.counts.clean_errors,
        report.counts.eps0_failures,
        report.counts.direction_rejected,
    );
    println!("validation    error {:.4}", report.validation_error);
    for le in &report.per_level_error {
        println!("  noise {:<8} error {:.4}", le.level, le.error_rate);
    }
    match report.skewness {
        Some(s) => println!("skewness      {s:.4}"),
        None => println!(
            "skewness      unavailable ({})",
            report.skewness_note.as_deref().unwrap_or("no reason recorded")
        ),
    }
    println!("records       {}", records.len());
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            data,
            out,
            seed,
            epochs,
            learning_rate,
            batch_size,
            hidden,
        } => cmd_train(
            &data.data,
            &out,
            TrainConfig {
                learning_rate,
                epochs,
                batch_size,
                seed,
                hidden,
            },
        ),
        Command::Sweep {
            model,
            data,
            out,
            seed,
            attack,
            nss,
            workers,
            svg,
            log_scale,
        } => cmd_sweep(
            &model, &data.data, &out, seed, &attack, &nss, workers, svg, log_scale,
        ),
        Command::Nss {
            model,
            data,
            index,
            seed,
            attack,
            nss,
        } => cmd_nss(&model, &data.data, index, seed, &attack, &nss),
        Command::Skewness { records, nss } => cmd_skewness(&records, &nss),
        Command::Correlate {
            reports,
            level_index,
        } => cmd_correlate(&reports, level_index),
        Command::Report { out } => cmd_report(&out),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
