use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emsense::experiment::{
    evaluate_saved, prepare, run_experiment, save_artifact, sweep_patterns, train_surrogate, Artifact, ExperimentConfig,
};
use emsense::objective::{MeasurementMode, Task};
use emsense::scenes::write_pgm;
use emsense::{PatternOrigin, Result};

#[derive(Parser)]
#[command(name = "emsense", version, about = "Learnable metasurface sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/validation/test scene splits.
    GenData(Common),
    /// Train the measurement surrogate on oracle triples and report its fidelity.
    TrainMann(Common),
    /// Train one or more (strategy, M, seed) cells and save their artifacts.
    Train(Common),
    /// Re-evaluate a saved cell on the test split.
    Eval(Common),
    /// Run the full M-sweep and write the aggregated curves.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// key=value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// imaging | recognition
    #[arg(long)]
    task: Option<Task>,
    /// random | pca | learned
    #[arg(long)]
    codes: Option<PatternOrigin>,
    /// Number of coding patterns.
    #[arg(long)]
    m: Option<usize>,
    /// oracle | surrogate
    #[arg(long)]
    measurement: Option<MeasurementMode>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_text(&fs::read_to_string(path)?)?,
            None => ExperimentConfig::for_task(self.task.unwrap_or(Task::Imaging)),
        };
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(c) = self.codes {
            cfg.strategies = vec![c];
        }
        if let Some(m) = self.m {
            cfg.m_list = vec![m];
        }
        if let Some(mode) = self.measurement {
            cfg.measurement_mode = mode;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Imaging => "ssim",
        Task::Recognition => "accuracy",
    }
}

fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let ws = prepare(cfg)?;
    let dir = cfg.output_dir.join("data");
    fs::create_dir_all(&dir)?;
    for (name, ds) in [
        ("train", &ws.splits.train),
        ("val", &ws.splits.val),
        ("test", &ws.splits.test),
    ] {
        save_artifact(&dir.join(format!("{name}.iems")), &Artifact::Dataset(ds.clone()))?;
        for class in 0..cfg.dataset.classes {
            if let Some(scene) = ds.scenes().iter().find(|s| s.label() == Some(class)) {
                write_pgm(dir.join(format!("{name}_class{class}.pgm")), scene)?;
            }
        }
        println!("{name}: {} scenes", ds.len());
    }
    println!("noise std {:e}", ws.geom.noise_std());
    Ok(())
}

fn train_mann_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let ws = prepare(cfg)?;
    let (surrogate, curve) = train_surrogate(cfg, &ws)?;
    fs::create_dir_all(&cfg.output_dir)?;
    save_artifact(
        &cfg.output_dir.join("mann.iems"),
        &Artifact::Surrogate(surrogate.clone()),
    )?;
    let mut csv = String::from("epoch,loss\n");
    for (k, l) in curve.iter().enumerate() {
        csv.push_str(&format!("{},{l:?}\n", k + 1));
    }
    fs::write(cfg.output_dir.join("mann_loss.csv"), csv)?;
    if let Some(f) = surrogate.fidelity {
        println!(
            "held-out relative error: median {:.3e}, p90 {:.3e} over {} measurements",
            f.median, f.p90, f.count
        );
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_experiment(cfg)?;
    let metric = metric_name(cfg.task);
    for r in &report.records {
        println!(
            "{} M={} seed={} {metric}={:.4} test_loss={:.4} ({:.1} s)",
            r.strategy, r.m, r.seed, r.metric, r.test_loss, r.seconds
        );
    }
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn eval(cfg: &ExperimentConfig) -> Result<()> {
    let ws = prepare(cfg)?;
    let metric = metric_name(cfg.task);
    for &m in &cfg.m_list {
        for &seed in &cfg.seeds {
            for &strategy in &cfg.strategies {
                let e = evaluate_saved(cfg, &ws, &cfg.output_dir, strategy, m, seed)?;
                println!(
                    "{strategy} M={m} seed={seed} {metric}={:.4} test_loss={:.4}",
                    e.metric, e.loss
                );
                if let Some(c) = e.confusion {
                    for t in 0..c.classes() {
                        let row: Vec<String> = (0..c.classes()).map(|p| c.get(t, p).to_string()).collect();
                        println!("  class {t}: {}", row.join(" "));
                    }
                }
            }
        }
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig) -> Result<()> {
    let (_, rows) = sweep_patterns(cfg)?;
    println!("strategy M mean std n");
    for r in rows {
        println!("{} {} {:.4} {:.4} {}", r.strategy, r.m, r.mean, r.std, r.n);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => gen_data(&c.config()?),
        Command::TrainMann(c) => train_mann_cmd(&c.config()?),
        Command::Train(c) => train(&c.config()?),
        Command::Eval(c) => eval(&c.config()?),
        Command::Sweep(c) => sweep(&c.config()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
