//! Sweep orchestration and report emission.
//!
//! A sweep walks every validation input through the protocol: check clean
//! correctness, build the attack direction once, apply the initial noise
//! level, score the survivors with the NSS, then raise the noise level
//! through the budget ladder and record where each input is first
//! successfully attacked. Aggregates are the per-level adversarial error
//! rates, the noise-effectiveness histogram, and the skewness score.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{
    fgm_direction, fgsm_direction, gaussian_direction, perturb, uniform_direction, AttackDirection,
    AttackKind, NoiseBudget,
};
use crate::data::LabeledDataset;
use crate::metrics::{
    averaged_rate_of_change, dataset_robustness, nss, rate_of_change, NssConfig, NssRecord,
};
use crate::net::FeedForwardModel;
use crate::stats::pearson_r2_p;
use crate::tensor::l2_norm;
use crate::{Error, Result};

pub const CSV_HEADER: &str =
    "input_index,true_label,clean_pred,nss,minimizing_class,first_success_mu,misclassified_as";

/// Everything that determines a sweep's output. Worker count is absent on
/// purpose: it must never change the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub model_path: String,
    pub dataset_id: String,
    pub attack: AttackKind,
    pub epsilon_0: f64,
    pub mu_levels: Vec<f64>,
    pub nss: NssConfig,
    pub seed: u64,
    #[serde(default)]
    pub clip: Option<(f64, f64)>,
    #[serde(default)]
    pub grid_step: Option<f64>,
    /// Rescale the FGM gradient direction to the L2 length of a sign
    /// vector (sqrt(N)) so noise levels are comparable across attacks.
    #[serde(default = "default_true")]
    pub fgm_rescale: bool,
    pub tool_version: String,
}

fn default_true() -> bool {
    true
}

impl SweepManifest {
    pub fn hash(&self) -> Result<String> {
        Ok(hash_bytes(serde_json::to_string_pretty(self)?.as_bytes()))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepCounts {
    pub total: usize,
    pub clean_errors: usize,
    pub direction_rejected: usize,
    pub eps0_failures: usize,
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub level: f64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    /// One count per category, aligned with `Histogram::categories`.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub max_score: f64,
    /// "never" plus one entry per noise level.
    pub categories: Vec<String>,
    pub bins: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationBlock {
    pub level: f64,
    /// Skewness score vs adversarial error at `level`.
    pub r2_skew_vs_high: f64,
    pub p_skew_vs_high: f64,
    /// Low-level error vs adversarial error at `level`.
    pub r2_low_vs_high: f64,
    pub p_low_vs_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub manifest_hash: String,
    pub validation_error: f64,
    pub per_level_error: Vec<LevelError>,
    pub skewness: Option<f64>,
    #[serde(default)]
    pub skewness_note: Option<String>,
    pub counts: SweepCounts,
    pub histogram: Histogram,
    #[serde(default)]
    pub correlation: Option<CorrelationBlock>,
}

enum Outcome {
    CleanWrong,
    DirectionRejected,
    Eps0Failure,
    /// Record plus the index of the budget level at which the attack first
    /// succeeded (None: never).
    Survivor(NssRecord, Option<usize>),
}

fn build_direction(
    model: &FeedForwardModel,
    x: &[f64],
    manifest: &SweepManifest,
    input_index: usize,
) -> Result<AttackDirection> {
    let n = model.input_dim;
    match manifest.attack {
        AttackKind::Fgsm => fgsm_direction(model, x),
        AttackKind::Fgm => {
            let dir = fgm_direction(model, x)?;
            if manifest.fgm_rescale {
                Ok(dir.rescaled_to_l2((n as f64).sqrt()))
            } else {
                Ok(dir)
            }
        }
        AttackKind::Gaussian => gaussian_direction(n, manifest.seed ^ input_index as u64),
        AttackKind::Uniform => uniform_direction(n, manifest.seed ^ input_index as u64),
    }
}

fn apply_level(
    x: &[f64],
    dir: &AttackDirection,
    eps: f64,
    clip: Option<(f64, f64)>,
) -> Vec<f64> {
    let mut out = perturb(x, dir, eps);
    if let Some((lo, hi)) = clip {
        crate::attack::clip(&mut out, lo, hi);
    }
    out
}

fn sweep_one(
    model: &FeedForwardModel,
    manifest: &SweepManifest,
    budget: &NoiseBudget,
    input_index: usize,
    x: &[f64],
    label: usize,
) -> Result<Outcome> {
    let clean = model.predicted_class(x)?;
    if clean != label {
        return Ok(Outcome::CleanWrong);
    }
    let dir = match build_direction(model, x, manifest, input_index) {
        Ok(d) => d,
        Err(Error::DirectionRejected(_)) => return Ok(Outcome::DirectionRejected),
        Err(e) => return Err(e),
    };
    let x0 = apply_level(x, &dir, budget.epsilon_0, manifest.clip);
    let surface = model.per_class_error(&x0)?;
    if surface.predicted != clean {
        return Ok(Outcome::Eps0Failure);
    }

    let rate = if manifest.nss.steps > 1 {
        let last_mu = *budget.mu_levels.last().unwrap();
        let shift = (last_mu - budget.epsilon_0) * l2_norm(dir.v());
        if shift > 0.0 {
            averaged_rate_of_change(model, &x0, &dir, shift, manifest.nss.steps)?
        } else {
            rate_of_change(model, &x0, &dir)?
        }
    } else {
        rate_of_change(model, &x0, &dir)?
    };
    let (nss_value, minimizing_class) = nss(&surface, &rate, &manifest.nss)?;

    let mut first: Option<(usize, f64, usize)> = None; // (level idx, eps, new class)
    let mut previous = budget.epsilon_0;
    for (li, &mu) in budget.mu_levels.iter().enumerate() {
        let pred = model.predicted_class(&apply_level(x, &dir, mu, manifest.clip))?;
        if pred != clean {
            let (eps, class) = match manifest.grid_step {
                Some(step) => {
                    // Minimal-epsilon refinement inside (previous, mu].
                    match refine_grid(model, x, &dir, previous, mu, step, manifest.clip, clean)? {
                        Some(hit) => hit,
                        None => (mu, pred),
                    }
                }
                None => (mu, pred),
            };
            first = Some((li, eps, class));
            break;
        }
        previous = mu;
    }

    let record = NssRecord {
        input_index,
        true_label: label,
        clean_prediction: clean,
        nss_value,
        minimizing_class,
        first_success_mu: first.map(|(_, eps, _)| eps),
        misclassified_as: first.map(|(_, _, class)| class),
    };
    Ok(Outcome::Survivor(record, first.map(|(li, _, _)| li)))
}

#[allow(clippy::too_many_arguments)]
fn refine_grid(
    model: &FeedForwardModel,
    x: &[f64],
    dir: &AttackDirection,
    from: f64,
    to: f64,
    step: f64,
    clip: Option<(f64, f64)>,
    clean: usize,
) -> Result<Option<(f64, usize)>> {
    let mut eps = from + step;
    while eps <= to + 1e-12 {
        let pred = model.predicted_class(&apply_level(x, dir, eps, clip))?;
        if pred != clean {
            return Ok(Some((eps, pred)));
        }
        eps += step;
    }
    Ok(None)
}

/// Runs the full sweep with a bounded worker pool. Records come back in
/// input order, so output is deterministic for any worker count.
pub fn run_sweep(
    model: &FeedForwardModel,
    dataset: &LabeledDataset,
    manifest: &SweepManifest,
    workers: usize,
) -> Result<(Vec<NssRecord>, RobustnessReport)> {
    manifest.nss.validate()?;
    let budget = NoiseBudget::new(manifest.epsilon_0, manifest.mu_levels.clone())?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        dataset
            .inputs
            .par_iter()
            .zip(&dataset.labels)
            .enumerate()
            .map(|(i, (x, &label))| sweep_one(model, manifest, &budget, i, x, label))
            .collect::<Result<_>>()
    })?;

    let mut counts = SweepCounts {
        total: dataset.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    let mut level_hits = vec![0usize; budget.mu_levels.len()];
    let mut success_levels = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::CleanWrong => counts.clean_errors += 1,
            Outcome::DirectionRejected => counts.direction_rejected += 1,
            Outcome::Eps0Failure => counts.eps0_failures += 1,
            Outcome::Survivor(record, level) => {
                counts.survivors += 1;
                if let Some(li) = level {
                    level_hits[li] += 1;
                }
                success_levels.push(level);
                records.push(record);
            }
        }
    }

    let total = counts.total as f64;
    let base_error = (counts.clean_errors + counts.eps0_failures) as f64 / total;
    let mut per_level_error = vec![LevelError {
        level: budget.epsilon_0,
        error_rate: base_error,
    }];
    let mut cumulative = base_error;
    for (li, &mu) in budget.mu_levels.iter().enumerate() {
        cumulative += level_hits[li] as f64 / total;
        per_level_error.push(LevelError {
            level: mu,
            error_rate: cumulative,
        });
    }

    let histogram = build_histogram(
        &records,
        &success_levels,
        0.25,
        &budget.mu_levels,
        manifest.nss.max_score,
    );
    let (skewness, skewness_note) = match dataset_robustness(&records, &manifest.nss) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let report = RobustnessReport {
        manifest_hash: manifest.hash()?,
        validation_error: counts.clean_errors as f64 / total,
        per_level_error,
        skewness,
        skewness_note,
        counts,
        histogram,
        correlation: None,
    };
    Ok((records, report))
}

/// Bins NSS values over [0, C] into half-open bins [lo, lo+w), with the
/// final bin closed at C. Per bin, counts are partitioned by outcome:
/// never attacked, then first attacked at each noise level.
pub fn emit_histogram(
    records: &[NssRecord],
    bin_width: f64,
    mu_levels: &[f64],
    max_score: f64,
) -> Histogram {
    let levels: Vec<Option<usize>> = records
        .iter()
        .map(|r| {
            r.first_success_mu
                .map(|eps| mu_levels.iter().position(|&mu| eps <= mu + 1e-12).unwrap_or(mu_levels.len() - 1))
        })
        .collect();
    build_histogram(records, &levels, bin_width, mu_levels, max_score)
}

fn build_histogram(
    records: &[NssRecord],
    success_levels: &[Option<usize>],
    bin_width: f64,
    mu_levels: &[f64],
    max_score: f64,
) -> Histogram {
    let nbins = (max_score / bin_width).ceil() as usize;
    let ncats = mu_levels.len() + 1;
    let mut categories = vec!["never".to_string()];
    categories.extend(mu_levels.iter().map(|mu| format!("mu={mu}")));
    let mut bins: Vec<HistogramBin> = (0..nbins)
        .map(|b| HistogramBin {
            lo: b as f64 * bin_width,
            hi: ((b + 1) as f64 * bin_width).min(max_score),
            counts: vec![0; ncats],
        })
        .collect();
    for (record, level) in records.iter().zip(success_levels) {
        let b = ((record.nss_value / bin_width).floor() as usize).min(nbins - 1);
        let cat = level.map_or(0, |li| li + 1);
        bins[b].counts[cat] += 1;
    }
    Histogram {
        bin_width,
        max_score,
        categories,
        bins,
    }
}

/// Correlates skewness scores against the adversarial error rate at the
/// chosen level across several reports, and, for comparison, the
/// lowest-level error against the same target.
pub fn correlate_reports(
    reports: &[RobustnessReport],
    level_index: usize,
) -> Result<CorrelationBlock> {
    if reports.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: reports.len(),
        });
    }
    let mut skews = Vec::with_capacity(reports.len());
    let mut low = Vec::with_capacity(reports.len());
    let mut high = Vec::with_capacity(reports.len());
    for report in reports {
        let s = report.skewness.ok_or_else(|| {
            Error::InvalidConfig("report without a skewness score cannot be correlated".into())
        })?;
        let errs = &report.per_level_error;
        let hi = errs
            .get(level_index)
            .ok_or_else(|| Error::InvalidConfig(format!("no error level {level_index}")))?;
        skews.push(s);
        low.push(errs[0].error_rate);
        high.push(hi.error_rate);
    }
    let (r2_skew, p_skew) = pearson_r2_p(&skews, &high)?;
    let (r2_low, p_low) = pearson_r2_p(&low, &high)?;
    Ok(CorrelationBlock {
        level: reports[0].per_level_error[level_index].level,
        r2_skew_vs_high: r2_skew,
        p_skew_vs_high: p_skew,
        r2_low_vs_high: r2_low,
        p_low_vs_high: p_low,
    })
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

/// Stable CSV schema, one row per surviving record, preceded by the
/// manifest hash comment line.
pub fn write_records_csv<W: Write>(
    records: &[NssRecord],
    manifest_hash: &str,
    mut w: W,
) -> Result<()> {
    writeln!(w, "# manifest {manifest_hash}")?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.input_index,
            r.true_label,
            r.clean_prediction,
            r.nss_value,
            fmt_opt(&r.minimizing_class),
            fmt_opt(&r.first_success_mu),
            fmt_opt(&r.misclassified_as),
        )?;
    }
    Ok(())
}

/// Reads back a records CSV; returns the records and the embedded
/// manifest hash (if present).
pub fn read_records_csv<R: BufRead>(r: R) -> Result<(Vec<NssRecord>, Option<String>)> {
    let mut records = Vec::new();
    let mut hash = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("# manifest ") {
            hash = Some(rest.to_string());
            continue;
        }
        if trimmed == CSV_HEADER {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::InvalidConfig(format!(
                "records.csv line {}: expected 7 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_usize = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad integer '{s}'")))
        };
        let parse_f64 = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad float '{s}'")))
        };
        records.push(NssRecord {
            input_index: parse_usize(fields[0])?,
            true_label: parse_usize(fields[1])?,
            clean_prediction: parse_usize(fields[2])?,
            nss_value: parse_f64(fields[3])?,
            minimizing_class: if fields[4].is_empty() {
                None
            } else {
                Some(parse_usize(fields[4])?)
            },
            first_success_mu: if fields[5].is_empty() {
                None
            } else {
                Some(parse_f64(fields[5])?)
            },
            misclassified_as: if fields[6].is_empty() {
                None
            } else {
                Some(parse_usize(fields[6])?)
            },
        });
    }
    Ok((records, hash))
}

/// Minimal stacked-bar SVG rendering of a noise-effectiveness histogram.
pub fn render_histogram_svg(hist: &Histogram, log_scale: bool) -> String {
    const WIDTH: f64 = 960.0;
    const HEIGHT: f64 = 420.0;
    const MARGIN: f64 = 40.0;
    const COLORS: [&str; 6] = [
        "#4477cc", "#ee8833", "#dd66aa", "#8855cc", "#44aa77", "#aaaa33",
    ];

    let scale = |count: f64| -> f64 {
        if log_scale {
            (count + 1.0).ln()
        } else {
            count
        }
    };
    let max_total = hist
        .bins
        .iter()
        .map(|b| scale(b.counts.iter().sum::<usize>() as f64))
        .fold(1.0_f64, f64::max);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / hist.bins.len() as f64;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (bi, bin) in hist.bins.iter().enumerate() {
        let x = MARGIN + bi as f64 * bar_w;
        let mut y = HEIGHT - MARGIN;
        for (ci, &count) in bin.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let h = scale(count as f64) / max_total * plot_h;
            y -= h;
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>[{}, {}): {} ({})</title></rect>\n",
                x,
                y,
                bar_w.max(1.0) - 0.5,
                h,
                COLORS[ci % COLORS.len()],
                bin.lo,
                bin.hi,
                count,
                hist.categories[ci],
            ));
        }
    }
    // legend
    for (ci, cat) in hist.categories.iter().enumerate() {
        let x = MARGIN + ci as f64 * 130.0;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"8\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"19\" font-size=\"12\" font-family=\"sans-serif\">{cat}</text>\n",
            COLORS[ci % COLORS.len()],
            x + 16.0,
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">NSS</text>\n",
        WIDTH / 2.0,
        HEIGHT - 8.0
    ));
    svg.push_str("</svg>\n");
    svg
}
