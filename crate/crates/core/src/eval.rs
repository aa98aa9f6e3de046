//! Experiment harness: ROC analysis, per-seed detector runs, multi-seed
//! aggregation and the report directory written by `reproduce`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::channel_sim::{simulate_series, AttackConfig, SensedSeries};
use crate::config::ExperimentConfig;
use crate::detector::{score_series, write_scores_csv, DetectionScore};
use crate::error::{Error, Result};
use crate::model::{self, Trained};
use crate::network::{DetectorKind, Network};
use crate::parallel;
use crate::rng::{self, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// A score is flagged when its loss is strictly greater than this.
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
}

/// ROC curve and trapezoidal AUC over the distinct loss values.
///
/// The first point sits at the largest loss (nothing flagged), the last at
/// `-inf` (everything flagged). Equal losses enter the curve together, so
/// ties contribute a diagonal segment and the input order is irrelevant.
pub fn roc_curve(scores: &[DetectionScore]) -> Result<(Vec<RocPoint>, f64)> {
    let positives = scores.iter().filter(|s| s.contaminated).count();
    let negatives = scores.len() - positives;
    if positives == 0 {
        return Err(Error::SingleClass {
            missing: "contaminated",
        });
    }
    if negatives == 0 {
        return Err(Error::SingleClass { missing: "clean" });
    }
    if let Some(bad) = scores.iter().find(|s| !s.loss.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite loss at step {}",
            bad.step
        )));
    }

    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|s| (s.loss, s.contaminated)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        threshold: sorted[0].0,
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = if i < sorted.len() {
            sorted[i].0
        } else {
            f64::NEG_INFINITY
        };
        let prev = points[points.len() - 1];
        let point = RocPoint {
            threshold,
            false_positive_rate: fp as f64 / n,
            true_positive_rate: tp as f64 / p,
        };
        auc += (point.false_positive_rate - prev.false_positive_rate)
            * (point.true_positive_rate + prev.true_positive_rate)
            / 2.0;
        points.push(point);
    }
    Ok((points, auc))
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "threshold,fpr,tpr")?;
    for p in points {
        writeln!(
            w,
            "{},{},{}",
            p.threshold, p.false_positive_rate, p.true_positive_rate
        )?;
    }
    Ok(())
}

pub fn mean_loss(scores: &[DetectionScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|s| s.loss).sum::<f64>() / scores.len() as f64
}

/// Training series plus the two held-out test series for one seed.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub train: SensedSeries,
    pub normal: SensedSeries,
    pub contaminated: SensedSeries,
}

/// Same seed, same data, whatever detector is trained on it.
pub fn generate_data(cfg: &ExperimentConfig, seed: u64) -> Result<EvalData> {
    let sim = |attack: &AttackConfig, slots: usize, label: &str| {
        simulate_series(&cfg.model, &cfg.sensing, attack, slots, seed, label).map(|(_, s)| s)
    };
    Ok(EvalData {
        train: sim(&AttackConfig::NONE, cfg.data.train_slots, "train")?,
        normal: sim(&AttackConfig::NONE, cfg.data.test_slots, "normal")?,
        contaminated: sim(&cfg.attack, cfg.data.test_slots, "contaminated")?,
    })
}

pub fn train_detector(
    cfg: &ExperimentConfig,
    kind: DetectorKind,
    series: &SensedSeries,
    seed: u64,
) -> Result<Trained<Network>> {
    let mut init_rng = substream(seed, &format!("{}/{kind}", rng::INIT));
    let mut shuffle_rng = substream(seed, &format!("{}/{kind}", rng::SHUFFLE));
    let net = kind.init(cfg.detector.hidden, &cfg.window, &mut init_rng)?;
    model::train(net, series, &cfg.window, &cfg.training, &mut shuffle_rng)
}

/// Outcome of one (detector, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub normal_loss: f64,
    pub contaminated_loss: f64,
    pub auc: f64,
    pub final_train_loss: f64,
    pub updates: u64,
    pub train_steps: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run: SeedRun,
    pub network: Network,
    pub normal_scores: Vec<DetectionScore>,
    pub contaminated_scores: Vec<DetectionScore>,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub normal: Vec<DetectionScore>,
    pub contaminated: Vec<DetectionScore>,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

/// Scores both held-out series with a trained network. The ROC pools the
/// normal series (all clean) with the contaminated series.
pub fn evaluate(net: &Network, cfg: &ExperimentConfig, data: &EvalData) -> Result<Evaluation> {
    let normal = score_series(net, &data.normal, &cfg.window)?;
    let contaminated = score_series(net, &data.contaminated, &cfg.window)?;
    let pooled: Vec<DetectionScore> = normal.iter().chain(&contaminated).copied().collect();
    let (roc, auc) = roc_curve(&pooled)?;
    Ok(Evaluation {
        normal,
        contaminated,
        roc,
        auc,
    })
}

pub fn run_detector(cfg: &ExperimentConfig, kind: DetectorKind, seed: u64) -> Result<RunOutput> {
    let data = generate_data(cfg, seed)?;
    let trained = train_detector(cfg, kind, &data.train, seed)?;
    let Evaluation {
        normal,
        contaminated,
        roc,
        auc,
    } = evaluate(&trained.model, cfg, &data)?;
    let steps_per_epoch = cfg.window.num_steps(data.train.len()) as u64;
    Ok(RunOutput {
        run: SeedRun {
            seed,
            normal_loss: mean_loss(&normal),
            contaminated_loss: mean_loss(&contaminated),
            auc,
            final_train_loss: *trained.loss_history.last().expect("history is never empty"),
            updates: trained.updates,
            train_steps: steps_per_epoch * cfg.training.epochs as u64,
        },
        network: trained.model,
        normal_scores: normal,
        contaminated_scores: contaminated,
        roc,
    })
}

/// One detector on one PU model, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub detector: DetectorKind,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    /// Means over seeds.
    pub normal_loss: f64,
    pub contaminated_loss: f64,
    pub auc: f64,
    pub runs: Vec<SeedRun>,
}

impl ExperimentReport {
    pub fn aggregate(cfg: &ExperimentConfig, detector: DetectorKind, runs: Vec<SeedRun>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = |f: fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
        ExperimentReport {
            experiment: cfg.name.clone(),
            detector,
            config_digest: cfg.digest(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            normal_loss: mean(|r| r.normal_loss),
            contaminated_loss: mean(|r| r.contaminated_loss),
            auc: mean(|r| r.auc),
            runs,
        }
    }

    /// Contaminated over normal mean loss.
    pub fn loss_ratio(&self) -> f64 {
        self.contaminated_loss / self.normal_loss
    }
}

/// Seeds used by a multi-seed run: `base, base + 1, ...`.
pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Trains and evaluates one detector for every seed; seeds run in parallel.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    kind: DetectorKind,
    seeds: &[u64],
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let runs = parallel::map(seeds.to_vec(), |seed| {
        run_detector(cfg, kind, seed).map(|o| o.run)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::aggregate(cfg, kind, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranked {
    pub rank: usize,
    pub detector: DetectorKind,
    pub auc: f64,
}

/// Orders detectors by AUC, best first; ties break on detector name.
pub fn compare_detectors(reports: &[ExperimentReport]) -> Vec<Ranked> {
    let mut order: Vec<&ExperimentReport> = reports.iter().collect();
    order.sort_by(|a, b| {
        b.auc
            .total_cmp(&a.auc)
            .then_with(|| a.detector.name().cmp(b.detector.name()))
    });
    order
        .into_iter()
        .enumerate()
        .map(|(i, r)| Ranked {
            rank: i + 1,
            detector: r.detector,
            auc: r.auc,
        })
        .collect()
}

/// Average-loss table with AUC and ranking for one PU model.
pub fn comparison_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>14} {:>20} {:>8} {:>8}",
        "Method", "Normal loss", "Contaminated loss", "Ratio", "AUC"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<20} {:>14.6} {:>20.6} {:>8.2} {:>8.4}",
            r.detector.label(),
            r.normal_loss,
            r.contaminated_loss,
            r.loss_ratio(),
            r.auc
        );
    }
    let ranking: Vec<String> = compare_detectors(reports)
        .iter()
        .map(|r| format!("{}. {} ({:.4})", r.rank, r.detector, r.auc))
        .collect();
    let _ = writeln!(out, "Ranking by AUC: {}", ranking.join("  "));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSection {
    pub name: String,
    pub reports: Vec<ExperimentReport>,
    pub ranking: Vec<Ranked>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproduceReport {
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub experiments: Vec<ExperimentSection>,
    /// Total prediction steps processed during training, all runs.
    pub train_steps: u64,
    pub updates: u64,
}

impl ReproduceReport {
    pub fn reports(&self) -> impl Iterator<Item = &ExperimentReport> {
        self.experiments.iter().flat_map(|e| e.reports.iter())
    }

    pub fn report(&self, experiment: &str, detector: DetectorKind) -> Option<&ExperimentReport> {
        self.reports()
            .find(|r| r.experiment == experiment && r.detector == detector)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "PUE attack detection report");
        let _ = writeln!(out, "seeds: {}", seeds.join(", "));
        let _ = writeln!(
            out,
            "training work: {} steps, {} updates",
            self.train_steps, self.updates
        );
        for section in &self.experiments {
            let digest = section
                .reports
                .first()
                .map(|r| r.config_digest.as_str())
                .unwrap_or("");
            let _ = writeln!(out);
            let _ = writeln!(out, "== {} (config sha256 {digest})", section.name);
            out.push_str(&comparison_table(&section.reports));
        }
        out
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create_file(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_run_artifacts(dir: &Path, kind: DetectorKind, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_with(&dir.join(format!("roc_{kind}.csv")), |w| {
        write_roc_csv(&out.roc, w)
    })?;
    write_with(&dir.join(format!("scores_{kind}_normal.csv")), |w| {
        write_scores_csv(&out.normal_scores, w)
    })?;
    write_with(&dir.join(format!("scores_{kind}_contaminated.csv")), |w| {
        write_scores_csv(&out.contaminated_scores, w)
    })
}

/// Runs every config × detector × seed and writes the report directory:
///
/// ```text
/// out/report.json
/// out/report.txt
/// out/<experiment>/seed<seed>/{roc_<det>.csv, scores_<det>_{normal,contaminated}.csv}
/// ```
///
/// Contents depend only on the configs and seeds.
pub fn reproduce(
    configs: &[ExperimentConfig],
    base_seed: u64,
    seeds: usize,
    out: &Path,
) -> Result<ReproduceReport> {
    if seeds == 0 {
        return Err(Error::invalid("seeds", "must be >= 1"));
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let seed_values = seed_list(base_seed, seeds);
    let mut jobs = Vec::new();
    for (c, _) in configs.iter().enumerate() {
        for kind in DetectorKind::ALL {
            for &seed in &seed_values {
                jobs.push((c, kind, seed));
            }
        }
    }
    let outputs = parallel::map(jobs.clone(), |(c, kind, seed)| {
        run_detector(&configs[c], kind, seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut experiments = Vec::new();
    let (mut train_steps, mut updates) = (0, 0);
    for (c, cfg) in configs.iter().enumerate() {
        let mut reports = Vec::new();
        for kind in DetectorKind::ALL {
            let mut runs = Vec::new();
            for ((jc, jkind, seed), output) in jobs.iter().zip(&outputs) {
                if *jc != c || *jkind != kind {
                    continue;
                }
                write_run_artifacts(
                    &out.join(&cfg.name).join(format!("seed{seed}")),
                    kind,
                    output,
                )?;
                train_steps += output.run.train_steps;
                updates += output.run.updates;
                runs.push(output.run.clone());
            }
            reports.push(ExperimentReport::aggregate(cfg, kind, runs));
        }
        experiments.push(ExperimentSection {
            name: cfg.name.clone(),
            ranking: compare_detectors(&reports),
            reports,
        });
    }
    let report = ReproduceReport {
        base_seed,
        seeds: seed_values,
        experiments,
        train_steps,
        updates,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let path = out.join("report.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let path = out.join("report.txt");
    fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
