use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use shadowpipe::bench::{
    bench_csv, maintenance_csv, run_bench, run_maintenance_bench, scenario_grid, speedup, BenchConfig, BenchMode,
};
use shadowpipe::corpus::{export_corpus, generate_corpus, CorpusConfig, Dataset};
use shadowpipe::engine::{execute, LatencyConfig};
use shadowpipe::plan::PipelinePlan;
use shadowpipe::server::{serve, AppState};
use shadowpipe::session::Session;
use shadowpipe::shadow::{PipelineKind, ShadowConfig, ShadowKind};

#[derive(Parser)]
#[command(name = "shadowpipe", version, about = "Shadow pipelines that suggest fixes for ML pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus as CSV files plus its lexicon.
    GenCorpus {
        /// Corpus configuration JSON; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a plan and print its metrics.
    Run {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        latency: LatencyArgs,
    },
    /// Run shadow pipelines and print ranked suggestions.
    Analyze {
        #[command(flatten)]
        input: Input,
        /// slices, label-errors, data-errors or all.
        #[arg(long, default_value = "all")]
        shadow: String,
        /// Shadow configuration JSON.
        #[arg(long)]
        shadow_config: Option<PathBuf>,
    },
    /// Time shadows in naive, optimised and proxy mode.
    Bench {
        /// `all` or a comma-separated list of pipeline_shadow cells such as
        /// `rag_slices,train_label_errors`.
        #[arg(long, default_value = "all")]
        scenarios: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: BenchArgs,
    },
    /// Time maintaining pipeline and shadows across a scripted plan edit.
    MaintainBench {
        /// The scripted edit; only `regex` exists.
        #[arg(long, default_value = "regex")]
        edit: String,
        /// `all` or a comma-separated list of pipeline_shadow cells.
        #[arg(long, default_value = "all")]
        scenarios: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: BenchArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Corpus directory; the default corpus when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sleep artificial latencies.
        #[arg(long)]
        realistic_latency: bool,
        /// Static assets served under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        shadow_config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Input {
    /// Plan JSON file, or `rag` / `train` for a bundled plan.
    #[arg(long)]
    plan: String,
    /// Corpus directory; the default corpus when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct LatencyArgs {
    /// Sleep artificial latencies instead of only recording them.
    #[arg(long)]
    sleep: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    repetitions: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 2)]
    embed_ms: u64,
    #[arg(long, default_value_t = 30)]
    llm_ms: u64,
    #[arg(long, default_value_t = 20)]
    translate_ms: u64,
    #[arg(long, default_value_t = 10)]
    spellcheck_ms: u64,
    #[arg(long, default_value_t = 500)]
    mlp_train_ms: u64,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            repetitions: self.repetitions,
            warmup: self.warmup,
            latency: LatencyConfig {
                embed_per_row: self.embed_ms,
                llm_per_row: self.llm_ms,
                translate_per_row: self.translate_ms,
                spellcheck_per_row: self.spellcheck_ms,
                mlp_train_flat: self.mlp_train_ms,
                sleep: true,
            },
            shadow: ShadowConfig::default(),
        }
    }
}

fn load_data(dir: Option<&Path>) -> Result<Dataset> {
    match dir {
        Some(d) => Dataset::load(d).with_context(|| format!("loading corpus from {}", d.display())),
        None => Ok(Dataset::from_bundle(&generate_corpus(&CorpusConfig::default())?)),
    }
}

fn load_plan(spec: &str) -> Result<PipelinePlan> {
    if let Ok(kind) = spec.parse::<PipelineKind>() {
        if !Path::new(spec).exists() {
            return Ok(kind.plan());
        }
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading plan {spec}"))?;
    PipelinePlan::parse(&text).with_context(|| format!("parsing plan {spec}"))
}

fn load_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn parse_shadows(spec: &str) -> Result<Vec<ShadowKind>> {
    if spec == "all" {
        return Ok(ShadowKind::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<ShadowKind>().map_err(anyhow::Error::msg))
        .collect()
}

fn parse_cells(spec: &str) -> Result<Vec<(PipelineKind, ShadowKind)>> {
    let all: Vec<_> = PipelineKind::ALL
        .into_iter()
        .flat_map(|p| ShadowKind::ALL.into_iter().map(move |s| (p, s)))
        .collect();
    if spec == "all" {
        return Ok(all);
    }
    spec.split(',')
        .map(|cell| {
            let cell = cell.trim().replace('-', "_");
            all.iter()
                .copied()
                .find(|(p, s)| format!("{p}_{s}") == cell)
                .ok_or_else(|| anyhow::anyhow!("unknown scenario `{cell}`"))
        })
        .collect()
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenCorpus { config, out } => {
            let cfg: CorpusConfig = load_json(config.as_deref())?;
            let bundle = generate_corpus(&cfg)?;
            for path in export_corpus(&bundle, &out)? {
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Run { input, latency } => {
            let data = load_data(input.data.as_deref())?;
            let plan = load_plan(&input.plan)?;
            let latency = LatencyConfig {
                sleep: latency.sleep,
                ..LatencyConfig::default()
            };
            let run = execute(&plan, &data, latency)?;
            let score = run.score();
            let out = json!({
                "plan_fingerprint": run.plan_fingerprint().to_string(),
                "metrics": run.metrics,
                "correct": score.map(|s| s.correct),
                "total": score.map(|s| s.total),
                "invocations": run.invocations.counts(),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Analyze {
            input,
            shadow,
            shadow_config,
        } => {
            let data = Arc::new(load_data(input.data.as_deref())?);
            let plan = load_plan(&input.plan)?;
            let kinds = parse_shadows(&shadow)?;
            let config: ShadowConfig = load_json(shadow_config.as_deref())?;
            let mut session = Session::open("cli", plan, data, config, LatencyConfig::default())?;
            session.analyze(&kinds);
            let out = json!({
                "plan_fingerprint": session.run().plan_fingerprint().to_string(),
                "accuracy": session.accuracy(),
                "shadows": session.shadow_states(),
                "findings": session.findings(),
                "suggestions": session.suggestions(),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Bench { scenarios, out, run } => {
            let data = load_data(run.data.as_deref())?;
            let cells = parse_cells(&scenarios)?;
            let grid: Vec<_> = scenario_grid()
                .into_iter()
                .filter(|s| cells.contains(&(s.pipeline, s.shadow)))
                .collect();
            let timings = run_bench(&data, &grid, &run.config(), |t| {
                eprintln!(
                    "{} {}: median {:.1} ms",
                    t.scenario.name(),
                    t.scenario.mode.as_str(),
                    t.median_ms()
                )
            })?;
            for (p, s) in &cells {
                for mode in [BenchMode::Optimised, BenchMode::OptProxy] {
                    if let Some(x) = speedup(&timings, *p, *s, mode) {
                        eprintln!("{p}_{s} {} speedup {x:.2}x", mode.as_str());
                    }
                }
            }
            write_out(&out, &bench_csv(&timings))?;
        }
        Command::MaintainBench {
            edit,
            scenarios,
            out,
            run,
        } => {
            if edit != "regex" {
                bail!("unknown edit `{edit}`; only `regex` is scripted");
            }
            let data = load_data(run.data.as_deref())?;
            let cells = parse_cells(&scenarios)?;
            let timings = run_maintenance_bench(&data, &cells, &run.config(), |t| {
                eprintln!("{}_{}: speedup {:.2}x", t.pipeline, t.shadow, t.speedup())
            })?;
            write_out(&out, &maintenance_csv(&timings))?;
        }
        Command::Serve {
            port,
            host,
            data,
            realistic_latency,
            static_dir,
            shadow_config,
        } => {
            let data = load_data(data.as_deref())?;
            let config: ShadowConfig = load_json(shadow_config.as_deref())?;
            let latency = LatencyConfig {
                sleep: realistic_latency,
                ..LatencyConfig::default()
            };
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host or port")?;
            let state = AppState::new(data, latency, config);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(serve(addr, state, static_dir))?;
        }
    }
    Ok(())
}
