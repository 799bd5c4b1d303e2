use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use transun::oracle::population_sre;
use transun::{DistributionSpec, RngStream, Scheme, TargetTransform};
use transun_harness::config::DataSource;
use transun_harness::report::{Format, OracleRow};
use transun_harness::run::train_single;
use transun_harness::{run_experiment, ConfigError, ExperimentConfig, HarnessError, RunReport};

#[derive(Parser)]
#[command(name = "transun", version, about = "Bias-free regression under target transforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Directory to write into; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, md or jsonl.
    #[arg(long, default_value = "md")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic targets to CSV.
    Synth {
        #[arg(long = "dist", required = true)]
        dists: Vec<DistributionSpec>,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the first model of a config once and save its parameters.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Run a config-driven grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Population oracle table, for a config's grid or a default grid.
    Oracle {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Re-render a stored JSON-lines report.
    Report {
        input: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn emit(out: Option<&Path>, file_name: &str, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(file_name);
            fs::write(&path, text).map_err(io_err(&path))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn render_oracles(rows: &[OracleRow], format: Format) -> String {
    match format {
        Format::Markdown => {
            let mut s = String::from("| dataset | method | quantity | value | bound |\n|---|---|---|---:|---:|\n");
            for o in rows {
                s.push_str(&format!(
                    "| {} | {} | {} | {:.4} | {:.1e} |\n",
                    o.dataset, o.method, o.result.quantity, o.result.value, o.result.error_bound
                ));
            }
            s
        }
        Format::Csv => {
            let mut s = String::from("dataset,method,quantity,value,bound\n");
            for o in rows {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    o.dataset, o.method, o.result.quantity, o.result.value, o.result.error_bound
                ));
            }
            s
        }
        Format::JsonLines => {
            rows.iter().map(|o| serde_json::to_string(o).expect("oracle row serializes") + "\n").collect()
        }
    }
}

fn oracle_rows(config: Option<&ExperimentConfig>) -> Vec<OracleRow> {
    let grid: Vec<(DistributionSpec, String, TargetTransform, Scheme)> = match config {
        Some(c) => {
            let dists = match &c.data {
                DataSource::Synthetic { distributions, .. } => distributions.clone(),
                DataSource::Csv { .. } => Vec::new(),
            };
            dists
                .iter()
                .flat_map(|&d| c.models.iter().map(move |m| (d, m.label.clone(), m.spec.transform, m.spec.scheme)))
                .collect()
        }
        None => {
            let transforms =
                [TargetTransform::Log1p, TargetTransform::Square, TargetTransform::Linear { slope: 0.5 }];
            DistributionSpec::ALL
                .iter()
                .flat_map(|&d| {
                    transforms.iter().flat_map(move |&t| {
                        [Scheme::Tmse, Scheme::SchemeS1]
                            .map(|s| (d, format!("{}({})", s.name(), t.kind_name()), t, s))
                    })
                })
                .collect()
        }
    };
    grid.into_iter()
        .filter_map(|(d, method, t, scheme)| {
            population_sre(d, &t, scheme).ok().map(|result| OracleRow { dataset: d.id().into(), method, result })
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Synth { dists, n, seed, out } => {
            for (i, d) in dists.iter().enumerate() {
                let ys = d.sample(n, &mut RngStream::new(seed).derive(i as u64 + 1));
                let mut text = String::from("y\n");
                for y in ys {
                    text.push_str(&format!("{y}\n"));
                }
                emit(out.as_deref(), &format!("{}.csv", d.id()), &text)?;
            }
        }
        Command::Train { config, seed, output } => {
            let config = load_config(&config, seed)?;
            let (model, row) = train_single(&config)?;
            let label: String =
                row.cell.method.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
            if let Some(dir) = &output.out {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let params = dir.join(format!("{label}.params"));
                fs::write(&params, model.to_bytes()).map_err(io_err(&params))?;
                let spec = dir.join(format!("{label}.spec.json"));
                let json = serde_json::to_string_pretty(model.spec()).expect("spec serializes");
                fs::write(&spec, json).map_err(io_err(&spec))?;
            }
            let text = match output.format {
                Format::JsonLines => serde_json::to_string(&row).expect("row serializes") + "\n",
                _ => {
                    let mut s = format!("{} on {}\n", row.cell.method, row.cell.dataset);
                    for (k, v) in row.eval.as_ref().map(|e| e.scalars()).unwrap_or_default() {
                        s.push_str(&format!("{k}\t{v}\n"));
                    }
                    if let Some(g) = row.oracle_gap {
                        s.push_str(&format!("oracle_gap\t{g}\n"));
                    }
                    s
                }
            };
            emit(output.out.as_deref(), &format!("{label}.{}", output.format.extension()), &text)?;
        }
        Command::Experiment { config, seed, threads, output } => {
            let config = load_config(&config, seed)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let report = pool.install(|| run_experiment(&config))?;
            let name = format!("{}.{}", config.name, output.format.extension());
            emit(output.out.as_deref(), &name, &report.render(output.format))?;
        }
        Command::Oracle { config, output } => {
            let config = config.map(|p| load_config(&p, None)).transpose()?;
            let rows = oracle_rows(config.as_ref());
            emit(output.out.as_deref(), &format!("oracle.{}", output.format.extension()), &render_oracles(&rows, output.format))?;
        }
        Command::Report { input, output } => {
            let text = fs::read_to_string(&input).map_err(io_err(&input))?;
            let report = RunReport::from_jsonl(&text)?;
            let name = format!("{}.{}", report.provenance.name, output.format.extension());
            emit(output.out.as_deref(), &name, &report.render(output.format))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let HarnessError::Config(ConfigError::Parse(_)) = e {
                eprintln!("hint: see configs/ for working examples");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
