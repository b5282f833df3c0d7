use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pipesim_core::harness::{csv_name, run_checks, run_comparison, run_training, ExperimentConfig, RunKind, ScheduleKind};
use pipesim_core::nn::checkpoint;
use pipesim_core::planner::render_table;
use pipesim_core::retime::{compact, insert_initial_delays, render_trace};
use pipesim_core::{build_training_graph, derive_delays, storage_cost, StagePartition, WeightStrategy};

#[derive(Parser)]
#[command(name = "pipesim", version, about = "Delay planning and pipelined-training simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-layer delays and storage for a partition.
    Plan {
        #[command(flatten)]
        shape: Shape,
        /// Strategies to cost, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "stash,latest,ema-fixed:0.9,ema-pipeline")]
        weights: Vec<WeightStrategy>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Derive the delays by retiming the training graph.
    Retime {
        #[command(flatten)]
        shape: Shape,
        /// Print every retiming step.
        #[arg(long)]
        explain: bool,
        /// Write the retimed graph as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train with a single strategy.
    Train(TrainArgs),
    /// Train every strategy on the same data and report.
    Compare(TrainArgs),
    /// Run the built-in oracle checks.
    Verify {
        /// Largest layer count to enumerate partitions for.
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Shape {
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// `per-layer`, `single`, or stage sizes such as `2,2`.
    #[arg(long, default_value = "per-layer")]
    partition: String,
}

impl Shape {
    fn partition(&self) -> Result<StagePartition> {
        Ok(StagePartition::parse_for(&self.partition, self.layers)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// TOML or JSON experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Layer count; hidden layers keep the first configured width.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    partition: Option<String>,
    /// Strategy for `train`; comma-separated list for `compare`.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<RunKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    schedule: Option<ScheduleKind>,
    /// Warm-up length in microbatches before reconstruction starts.
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(l) = self.layers {
            if l == 0 {
                bail!("--layers must be at least 1");
            }
            let width = cfg.hidden.first().copied().unwrap_or(64);
            cfg.hidden = vec![width; l - 1];
        }
        if let Some(p) = &self.partition {
            cfg.partition = p.clone();
        }
        if let [kind] = self.weights[..] {
            cfg.strategy = kind;
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag {
                    cfg.$field = v;
                }
            )*};
        }
        set!(epochs => epochs, batch => batch, lr => lr, momentum => momentum, wd => weight_decay, schedule => schedule, seed => seed);
        if self.warmup.is_some() {
            cfg.warmup = self.warmup;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn plan(shape: &Shape, weights: &[WeightStrategy], json: bool) -> Result<()> {
    let p = shape.partition()?;
    let a = derive_delays(&p);
    if json {
        let costs: serde_json::Map<String, serde_json::Value> = weights
            .iter()
            .map(|&s| Ok((s.to_string(), serde_json::to_value(storage_cost(&a, s))?)))
            .collect::<Result<_>>()?;
        let doc = serde_json::json!({
            "partition": p.to_string(),
            "stages": p.num_stages(),
            "delays": a,
            "storage": costs,
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        print!("{}", render_table(&p, &a, weights));
    }
    Ok(())
}

fn retime(shape: &Shape, explain: bool, out: Option<&Path>) -> Result<()> {
    let p = shape.partition()?;
    let g = build_training_graph(shape.layers)?;
    let (init, mut trace) = insert_initial_delays(&g, &p)?;
    let c = compact(&init, &p)?;
    trace.extend(c.trace.iter().cloned());
    if explain {
        print!("{}", render_trace(&g, &trace));
        println!();
    }
    println!("partition {p}: gradient delays {:?}", c.assignment.gradient_delay);
    if c.assignment != derive_delays(&p) {
        bail!("retimed delays disagree with the closed form {:?}", derive_delays(&p).gradient_delay);
    }
    if let Some(path) = out {
        c.graph.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    if args.weights.len() > 1 {
        bail!("train takes one strategy; use compare for several");
    }
    let cfg = args.config()?;
    let data = cfg.load_dataset()?;
    let run = run_training(&cfg, cfg.strategy, &data)?;
    for r in &run.metrics.records {
        println!("epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}", r.epoch, r.loss, r.train_acc, r.test_acc);
    }
    let s = run.metrics.summary(&cfg.strategy.to_string(), cfg.threshold);
    println!(
        "{}: final test accuracy {:.4}, peak weight stash {} B (predicted {} B)",
        s.strategy, s.final_test_acc, run.outcome.peak_weight_bytes, run.predicted_weight_bytes
    );
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        run.metrics.write_csv(&dir.join(csv_name(cfg.strategy)))?;
        checkpoint::save(&run.outcome.model, &dir.join("model.bin"))?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    Ok(())
}

fn compare(args: &TrainArgs) -> Result<ExitCode> {
    let cfg = args.config()?;
    let kinds: Vec<RunKind> = if args.weights.is_empty() {
        ["sequential", "stash", "latest", "ema-fixed:0.9", "ema-pipeline"]
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()?
    } else {
        args.weights.clone()
    };
    let report = run_comparison(&cfg, &kinds, args.out.as_deref())?;
    print!("{}", report.render());
    for r in report.rows.iter().filter(|r| r.status != "ok") {
        eprintln!("{} diverged: {}", r.strategy, r.error.as_deref().unwrap_or("unknown"));
    }
    Ok(if report.any_diverged() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn verify(layers: usize, seed: u64) -> Result<ExitCode> {
    let checks = run_checks(layers, seed)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Plan { shape, weights, json } => plan(shape, weights, *json)?,
        Command::Retime { shape, explain, out } => retime(shape, *explain, out.as_deref())?,
        Command::Train(args) => train(args)?,
        Command::Compare(args) => return compare(args),
        Command::Verify { layers, seed } => return verify(*layers, *seed),
    }
    Ok(ExitCode::SUCCESS)
}
