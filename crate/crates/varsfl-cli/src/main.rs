//! Experiment runner CLI.
//!
//! Subcommands: `run` (execute every configured policy x seed and write
//! JSONL round logs plus a summary CSV), `complexity` (computation and
//! communication accounting, no training), `partition-dump` (per-client
//! partition summary as CSV), and `delta` (post-hoc per-round metric
//! comparison between two round logs).

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use varsfl::config::{ComplexityReport, DatasetKind, ExperimentConfig};
use varsfl::federation::{self, ExperimentSummary, RoundReport};
use varsfl::report;
use varsfl::selection::Policy;

/// Environment variable overriding the config's output directory.
const OUT_DIR_ENV: &str = "VARSFL_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "varsfl",
    about = "Seeded federated-learning simulator with validation-aligned client selection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured (policy, seed) pair and write artifacts.
    ///
    /// Layout: <out>/<policy>/<seed>/rounds.jsonl plus <out>/summary.csv.
    /// Round logs flush once per round, so an aborted run loses at most
    /// the round in flight.
    Run {
        /// Experiment config file (flat dotted keys).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config and VARSFL_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the complexity report for a config (no training happens).
    Complexity {
        #[arg(long)]
        config: PathBuf,
        /// Emit machine-readable JSON instead of the table.
        #[arg(long)]
        json: bool,
        /// Override the resolved clients-per-round.
        #[arg(long)]
        m: Option<usize>,
        /// Override the validation-set size (required for csv datasets).
        #[arg(long)]
        val_size: Option<usize>,
    },
    /// Write the partition summary CSV: one row per client with its size,
    /// class count, and a 0/1 presence column per class.
    PartitionDump {
        #[arg(long)]
        config: PathBuf,
        /// Destination CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Seed to partition under (default: first of run.seeds).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-round metric deltas between two rounds.jsonl files (a minus b).
    Delta {
        a: PathBuf,
        b: PathBuf,
        /// One of: accuracy, f1_macro, f1_weighted, precision_macro,
        /// precision_weighted, loss.
        #[arg(long, default_value = "accuracy")]
        metric: String,
        /// Destination CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => cmd_run(&config, out),
        Command::Complexity {
            config,
            json,
            m,
            val_size,
        } => cmd_complexity(&config, json, m, val_size),
        Command::PartitionDump { config, out, seed } => cmd_partition_dump(&config, &out, seed),
        Command::Delta { a, b, metric, out } => cmd_delta(&a, &b, &metric, out),
    }
}

fn resolve_out_dir(config: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| config.run.output_dir.clone())
}

fn cmd_run(config_path: &Path, out_flag: Option<PathBuf>) -> anyhow::Result<()> {
    let config = ExperimentConfig::parse_file(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let out_dir = resolve_out_dir(&config, out_flag);

    let jobs: Vec<(Policy, u64)> = config
        .selector
        .policies
        .iter()
        .flat_map(|&p| config.run.seeds.iter().map(move |&s| (p, s)))
        .collect();
    eprintln!(
        "running {} jobs ({} policies x {} seeds) into {}",
        jobs.len(),
        config.selector.policies.len(),
        config.run.seeds.len(),
        out_dir.display()
    );

    // jobs write to disjoint directories, safe to run in parallel
    let results: Vec<varsfl::Result<ExperimentSummary>> =
        varsfl::exec::map_slice(&jobs, |&(policy, seed)| {
            let dir = out_dir.join(policy.as_str()).join(seed.to_string());
            std::fs::create_dir_all(&dir)?;
            let file = fs::File::create(dir.join("rounds.jsonl"))?;
            let mut writer = BufWriter::new(file);
            let summary = federation::run_experiment(&config, policy, seed, |round| {
                report::write_jsonl_line(&mut writer, round)?;
                writer.flush()?;
                Ok(())
            })?;
            Ok(summary)
        });

    let mut summaries = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(s) => {
                eprintln!(
                    "  {} seed {}: {} rounds, final accuracy {:.4}",
                    job.0, job.1, s.rounds_completed, s.final_test.accuracy
                );
                summaries.push(s);
            }
            Err(e) => bail!("job {} seed {} failed: {e}", job.0, job.1),
        }
    }

    write_summary_csv(&out_dir.join("summary.csv"), &config, &summaries)?;
    eprintln!("wrote {}", out_dir.join("summary.csv").display());
    Ok(())
}

type MetricGetter = fn(&ExperimentSummary) -> f64;

fn write_summary_csv(
    path: &Path,
    config: &ExperimentConfig,
    summaries: &[ExperimentSummary],
) -> anyhow::Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "policy,metric,mean,std")?;
    let metrics: [(&str, MetricGetter); 7] = [
        ("accuracy", |s| s.final_test.accuracy),
        ("f1_macro", |s| s.final_test.f1_macro),
        ("f1_weighted", |s| s.final_test.f1_weighted),
        ("precision_macro", |s| s.final_test.precision_macro),
        ("precision_weighted", |s| s.final_test.precision_weighted),
        ("loss", |s| s.final_test.loss),
        ("uplink_bytes_total", |s| s.uplink_bytes_total as f64),
    ];
    for &policy in &config.selector.policies {
        for (name, get) in metrics {
            let values: Vec<f64> = summaries
                .iter()
                .filter(|s| s.policy == policy)
                .map(get)
                .collect();
            if values.is_empty() {
                continue;
            }
            let (mean, std) = report::mean_std(&values);
            writeln!(
                f,
                "{},{},{},{}",
                policy.as_str(),
                name,
                report::format_float(mean),
                report::format_float(std)
            )?;
        }
    }
    f.flush()?;
    Ok(())
}

fn cmd_complexity(
    config_path: &Path,
    json: bool,
    m_override: Option<usize>,
    val_size_override: Option<usize>,
) -> anyhow::Result<()> {
    let config = ExperimentConfig::parse_file(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let arch = config.model.architecture()?;
    let n_clients = config.partition.num_clients;
    let m = m_override.unwrap_or_else(|| config.training.clients_per_round.resolve(n_clients));
    let val_size = match val_size_override.or_else(|| config.expected_split_sizes().map(|s| s.1)) {
        Some(v) => v,
        None => {
            debug_assert_eq!(config.dataset.kind, DatasetKind::Csv);
            bail!("csv datasets have no derivable validation size; pass --val-size")
        }
    };
    let report = ComplexityReport::compute(&arch, m, val_size, n_clients, config.selector.window);
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    Ok(())
}

fn cmd_partition_dump(config_path: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let config = ExperimentConfig::parse_file(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let seed = seed.unwrap_or(config.run.seeds[0]);
    // the same pipeline the runner uses, so shard contents match exactly
    let state = federation::setup_state(&config, config.selector.policies[0], seed)?;

    let class_names: Vec<String> = state.validation_set.class_names().to_vec();
    let mut f = BufWriter::new(fs::File::create(out)?);
    write!(f, "client_id,n_samples,n_classes")?;
    for name in &class_names {
        write!(f, ",{name}")?;
    }
    writeln!(f)?;
    for shard in &state.shards {
        write!(
            f,
            "{},{},{}",
            shard.client_id,
            shard.num_samples(),
            shard.class_inventory.len()
        )?;
        for c in 0..class_names.len() {
            let present = shard.class_inventory.binary_search(&c).is_ok();
            write!(f, ",{}", present as u8)?;
        }
        writeln!(f)?;
    }
    f.flush()?;

    let sizes: Vec<f64> = state.shards.iter().map(|s| s.num_samples() as f64).collect();
    let classes: Vec<f64> = state
        .shards
        .iter()
        .map(|s| s.class_inventory.len() as f64)
        .collect();
    let stats = |xs: &[f64]| {
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        (min, max, mean)
    };
    let (smin, smax, smean) = stats(&sizes);
    let (cmin, cmax, cmean) = stats(&classes);
    println!(
        "clients: {}  samples/client: min {} max {} mean {:.1}  classes/client: min {} max {} mean {:.1}",
        state.shards.len(),
        smin,
        smax,
        smean,
        cmin,
        cmax,
        cmean
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn load_rounds(path: &Path) -> anyhow::Result<Vec<RoundReport>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rounds = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let report: RoundReport = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: bad round record", path.display(), i + 1))?;
        rounds.push(report);
    }
    Ok(rounds)
}

fn metric_of(report: &RoundReport, metric: &str) -> anyhow::Result<Option<f64>> {
    let Some(test) = &report.test else {
        return Ok(None);
    };
    let value = match metric {
        "accuracy" => test.accuracy,
        "f1_macro" => test.f1_macro,
        "f1_weighted" => test.f1_weighted,
        "precision_macro" => test.precision_macro,
        "precision_weighted" => test.precision_weighted,
        "loss" => test.loss,
        other => bail!(
            "unknown metric '{other}'; expected accuracy, f1_macro, f1_weighted, \
             precision_macro, precision_weighted, or loss"
        ),
    };
    Ok(Some(value))
}

fn cmd_delta(a: &Path, b: &Path, metric: &str, out: Option<PathBuf>) -> anyhow::Result<()> {
    let rounds_a = load_rounds(a)?;
    let rounds_b = load_rounds(b)?;

    let mut lines = vec![format!("round,{metric}_a,{metric}_b,delta")];
    for ra in &rounds_a {
        let Some(rb) = rounds_b.iter().find(|r| r.round == ra.round) else {
            continue;
        };
        let (Some(va), Some(vb)) = (metric_of(ra, metric)?, metric_of(rb, metric)?) else {
            continue;
        };
        lines.push(format!(
            "{},{},{},{}",
            ra.round,
            report::format_float(va),
            report::format_float(vb),
            report::format_float(va - vb)
        ));
    }
    if lines.len() == 1 {
        bail!(
            "no common rounds with test metrics between {} and {}",
            a.display(),
            b.display()
        );
    }

    let text = lines.join("\n") + "\n";
    match out {
        Some(path) => {
            fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
