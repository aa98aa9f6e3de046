use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use pue_detect::channel_sim::{simulate_series, AttackConfig};
use pue_detect::checkpoint;
use pue_detect::config::{parse_config, ExperimentConfig};
use pue_detect::detector::{parse_scores_csv, score_series, write_scores_csv};
use pue_detect::eval::{self, mean_loss, roc_curve, write_roc_csv};
use pue_detect::network::DetectorKind;
use pue_detect::{Error, Result};

/// Simulate intermittently sensed PU activity, train recurrent detectors and
/// score emulation attacks.
#[derive(Debug, Parser)]
#[command(name = "pue-detect", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a PU trace and its sensed series (with attacks per config).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of sensing slots [default: data.test_slots]
        #[arg(long)]
        slots: Option<usize>,
    },
    /// Train a detector on attack-free data and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides detector.arch
        #[arg(long)]
        arch: Option<DetectorKind>,
    },
    /// Score held-out normal and contaminated series with a checkpoint.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// ROC curve and AUC from one or more score files.
    Roc {
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both PU models with all three detectors and write a report directory.
    Reproduce {
        /// Experiment configs [default: bundled simple and complex]
        #[arg(long)]
        config: Vec<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// [default: run.seed from the config]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: run.output_dir from the config]
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Loaded> {
        let cfg = parse_config(&self.config)?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.run.output_dir.clone())
            .ok_or_else(|| Error::Invalid {
                field: "out".into(),
                reason: "pass --out or set run.output_dir".into(),
            })?;
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Loaded {
            seed: self.seed.unwrap_or(cfg.run.seed),
            cfg,
            out,
        })
    }
}

fn write_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn simulate(common: &Common, slots: Option<usize>) -> Result<()> {
    let Loaded { cfg, seed, out } = common.load()?;
    let slots = slots.unwrap_or(cfg.data.test_slots);
    let (trace, series) = simulate_series(
        &cfg.model,
        &cfg.sensing,
        &cfg.attack,
        slots,
        seed,
        "simulate",
    )?;
    write_file(&out.join("trace.csv"), |w| trace.write_csv(w))?;
    write_file(&out.join("series.csv"), |w| series.write_csv(w))?;
    let impulses = series.attack_mask.iter().filter(|&&m| m == 1).count();
    println!(
        "{} segments, {} slots, {} attack impulses -> {}",
        trace.segments.len(),
        series.len(),
        impulses,
        out.display()
    );
    Ok(())
}

fn train(common: &Common, arch: Option<DetectorKind>) -> Result<()> {
    let Loaded { cfg, seed, out } = common.load()?;
    let kind = arch.unwrap_or(cfg.detector.arch);
    let data = simulate_series(
        &cfg.model,
        &cfg.sensing,
        &AttackConfig::NONE,
        cfg.data.train_slots,
        seed,
        "train",
    )?
    .1;
    let trained = eval::train_detector(&cfg, kind, &data, seed)?;
    checkpoint::save(&trained.model, &out.join("checkpoint.json"))?;
    write_file(&out.join("train_loss.csv"), |w| {
        writeln!(w, "epoch,loss")?;
        for (epoch, loss) in trained.loss_history.iter().enumerate() {
            writeln!(w, "{epoch},{loss}")?;
        }
        Ok(())
    })?;
    println!(
        "trained {kind}: loss {:.6} -> {:.6} in {} updates -> {}",
        trained.loss_history[0],
        trained.loss_history[trained.loss_history.len() - 1],
        trained.updates,
        out.join("checkpoint.json").display()
    );
    Ok(())
}

fn score(common: &Common, checkpoint_path: &Path) -> Result<()> {
    let net = checkpoint::load(checkpoint_path)?;
    let Loaded { cfg, seed, out } = common.load()?;
    let data = eval::generate_data(&cfg, seed)?;
    for (name, series) in [
        ("normal", &data.normal),
        ("contaminated", &data.contaminated),
    ] {
        let scores = score_series(&net, series, &cfg.window)?;
        write_file(&out.join(format!("scores_{name}.csv")), |w| {
            write_scores_csv(&scores, w)
        })?;
        println!(
            "{name}: mean loss {:.6} over {} steps",
            mean_loss(&scores),
            scores.len()
        );
    }
    Ok(())
}

fn roc(paths: &[PathBuf], out: &Path) -> Result<()> {
    let mut scores = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        scores.extend(parse_scores_csv(&text)?);
    }
    let (points, auc) = roc_curve(&scores)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("roc.csv"), |w| write_roc_csv(&points, w))?;
    println!("auc {auc:.6} ({} points)", points.len());
    Ok(())
}

fn reproduce(configs: &[PathBuf], seed: u64, seeds: usize, out: &Path) -> Result<()> {
    let configs = if configs.is_empty() {
        vec![ExperimentConfig::simple(), ExperimentConfig::complex()]
    } else {
        configs
            .iter()
            .map(|p| parse_config(p))
            .collect::<Result<_>>()?
    };
    let started = Instant::now();
    let report = eval::reproduce(&configs, seed, seeds, out)?;
    print!("{}", report.to_text());
    eprintln!(
        "finished in {:.1}s -> {}",
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, slots } => simulate(&common, slots),
        Command::Train { common, arch } => train(&common, arch),
        Command::Score { common, checkpoint } => score(&common, &checkpoint),
        Command::Roc { scores, out } => roc(&scores, &out),
        Command::Reproduce {
            config,
            seed,
            seeds,
            out,
        } => reproduce(&config, seed, seeds, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
