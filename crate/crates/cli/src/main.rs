mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use imagedx_core::classifier::{attached_metrics_path, TrainedModel};
use imagedx_core::dataset::{
    generate_fixture, scaled_reference_counts, scan_directory, validate_manifest, DatasetManifest, FixtureConfig,
    Split,
};
use imagedx_core::llm::{Backend, LlmConfig, LlmGateway};
use imagedx_core::prompt::PromptTemplate;
use imagedx_core::report::{render_report, DiagnosisService, ReportFormat, ReportStore};
use imagedx_core::server::{self, AppState};
use imagedx_core::training::{evaluate_with, train, write_metrics_file, Averaging};
use tracing_subscriber::EnvFilter;

use crate::config::TrainFile;

#[derive(Parser)]
#[command(name = "imagedx", version, about = "Medical image classification and diagnosis reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, check or synthesize labeled image datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a classifier and save it as a model artifact directory.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML file with [model] and [training] tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a model on a manifest split and write a metrics file.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long, default_value = "weighted", value_parser = parse_averaging)]
        averaging: Averaging,
        /// Do not copy the metrics file into the model directory.
        #[arg(long)]
        no_attach: bool,
    },
    /// Classify one image and generate a stored diagnosis report.
    Diagnose {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
        #[arg(long)]
        prompt_template: Option<PathBuf>,
        /// Also write the report document here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "IMAGEDX_STORE", default_value = "reports")]
        store: PathBuf,
        /// Printed rendering: text, markdown or json.
        #[arg(long, default_value = "text")]
        format: String,
        /// Fail instead of storing a degraded report when the language model is unavailable.
        #[arg(long)]
        strict_llm: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        llm: LlmArgs,
        #[arg(long)]
        prompt_template: Option<PathBuf>,
        #[arg(long, env = "IMAGEDX_STORE", default_value = "reports")]
        store: PathBuf,
        #[arg(long)]
        strict_llm: bool,
    },
    /// Read stored reports.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Walk <root>/{train,val}/<label>/ and write a manifest.
    Scan {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a manifest and print per-label counts.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Also compare counts with the reference distribution scaled by this factor.
        #[arg(long)]
        expect_scale: Option<f64>,
    },
    /// Write a synthetic dataset with the reference class distribution.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Fixed TRAIN,VAL images per class instead of the scaled distribution.
        #[arg(long, value_parser = parse_pair)]
        per_class: Option<(usize, usize)>,
        #[arg(long, default_value_t = 32)]
        image_size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    Get {
        id: String,
        #[arg(long, default_value = "text")]
        format: String,
        #[arg(long, env = "IMAGEDX_STORE", default_value = "reports")]
        store: PathBuf,
    },
    /// List stored report ids.
    List {
        #[arg(long, env = "IMAGEDX_STORE", default_value = "reports")]
        store: PathBuf,
    },
}

/// Language-model options. The API key is read from IMAGEDX_LLM_API_KEY only.
#[derive(Args)]
struct LlmArgs {
    #[arg(long = "llm", default_value = "mock")]
    backend: Backend,
    #[arg(long)]
    llm_model: Option<String>,
    #[arg(long)]
    llm_endpoint: Option<String>,
    #[arg(long)]
    llm_temperature: Option<f64>,
    #[arg(long)]
    llm_timeout: Option<f64>,
    #[arg(long)]
    llm_max_retries: Option<u32>,
    #[arg(long)]
    llm_max_in_flight: Option<usize>,
}

impl LlmArgs {
    fn config(&self) -> LlmConfig {
        let mut cfg = LlmConfig {
            backend: self.backend,
            ..LlmConfig::default()
        };
        if let Some(m) = &self.llm_model {
            cfg.model_name = m.clone();
        }
        if let Some(e) = &self.llm_endpoint {
            cfg.endpoint_url = e.clone();
        }
        if let Some(t) = self.llm_temperature {
            cfg.temperature = t;
        }
        if let Some(t) = self.llm_timeout {
            cfg.timeout_secs = t;
        }
        if let Some(r) = self.llm_max_retries {
            cfg.max_retries = r;
        }
        if let Some(n) = self.llm_max_in_flight {
            cfg.max_in_flight = n;
        }
        cfg
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected TRAIN,VAL")?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_averaging(s: &str) -> Result<Averaging, String> {
    match s {
        "weighted" => Ok(Averaging::Weighted),
        "macro" => Ok(Averaging::Macro),
        other => Err(format!("unknown averaging {other:?} (expected weighted or macro)")),
    }
}

#[derive(Clone, Copy)]
enum Printed {
    Rendered(ReportFormat),
    Json,
}

fn parse_printed(s: &str) -> Result<Printed> {
    if s == "json" {
        return Ok(Printed::Json);
    }
    s.parse().map(Printed::Rendered).map_err(anyhow::Error::msg)
}

fn load_model(dir: &Path) -> Result<TrainedModel> {
    TrainedModel::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn build_service(
    model_dir: &Path,
    llm: &LlmArgs,
    template: Option<&Path>,
    store: &Path,
    strict: bool,
) -> Result<(DiagnosisService, Arc<ReportStore>)> {
    let model = Arc::new(load_model(model_dir)?);
    let gateway = LlmGateway::new(llm.config())?;
    let store = Arc::new(ReportStore::open(store)?);
    let mut service = DiagnosisService::new(model, gateway, Arc::clone(&store)).with_degraded_reports(!strict);
    if let Some(path) = template {
        service = service.with_template(PromptTemplate::from_file(path)?);
    }
    Ok((service, store))
}

fn dataset(cmd: DatasetCommand) -> Result<ExitCode> {
    match cmd {
        DatasetCommand::Scan { root, out } => {
            let manifest = scan_directory(&root)?;
            manifest.save(&out)?;
            println!(
                "wrote {} entries ({} train, {} val) to {}",
                manifest.entries.len(),
                manifest.split_len(Split::Train),
                manifest.split_len(Split::Val),
                out.display()
            );
        }
        DatasetCommand::Validate { manifest, expect_scale } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let report = validate_manifest(&manifest);
            println!("{report}");
            let mut ok = report.passed();
            if let Some(scale) = expect_scale {
                let mismatches = report.count_mismatches(&scaled_reference_counts(scale));
                for m in &mismatches {
                    println!("count mismatch: {m}");
                }
                println!("reference counts at scale {scale}: {}", if mismatches.is_empty() { "match" } else { "MISMATCH" });
                ok &= mismatches.is_empty();
            }
            if !ok {
                return Ok(ExitCode::from(2));
            }
        }
        DatasetCommand::Fixture {
            out,
            scale,
            per_class,
            image_size,
            seed,
        } => {
            let cfg = FixtureConfig {
                scale,
                per_class,
                image_size,
                seed,
            };
            let summary = generate_fixture(&out, &cfg)?;
            println!("wrote {} images under {}", summary.files_written, summary.root.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn,imagedx_core=info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Dataset(cmd) => return dataset(cmd),
        Command::Train {
            manifest,
            config,
            out,
            seed,
        } => {
            let file = match config {
                Some(path) => TrainFile::load(&path)?,
                None => TrainFile::default(),
            };
            let (model_cfg, preprocess, mut tcfg) = file.resolve()?;
            if let Some(seed) = seed {
                tcfg.seed = seed;
            }
            let manifest = DatasetManifest::load(&manifest)?;
            let (model, history) = train(&model_cfg, &preprocess, &manifest, &tcfg)?;
            model.save(&out)?;
            let history_path = out.join("history.json");
            fs::write(&history_path, serde_json::to_string_pretty(&history)?)
                .with_context(|| format!("writing {}", history_path.display()))?;
            if let Some(last) = history.last() {
                println!(
                    "trained {} epochs; last train loss {:.6}, train accuracy {:.4}",
                    history.epochs.len(),
                    last.train_loss,
                    last.train_accuracy
                );
            }
            println!("saved model {} to {}", model.artifact_id(), out.display());
        }
        Command::Eval {
            manifest,
            model,
            out,
            split,
            averaging,
            no_attach,
        } => {
            let trained = load_model(&model)?;
            let manifest = DatasetManifest::load(&manifest)?;
            let (metrics, cm) = evaluate_with(&trained, &manifest, split, averaging)?;
            let text = write_metrics_file(split, &metrics, &cm, trained.catalog());
            fs::write(&out, &text).with_context(|| format!("writing {}", out.display()))?;
            if !no_attach {
                let attached = attached_metrics_path(&model);
                fs::write(&attached, &text).with_context(|| format!("writing {}", attached.display()))?;
            }
            println!(
                "{split}: samples {} loss {:.6} accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                metrics.samples,
                metrics.loss.unwrap_or(f64::NAN),
                metrics.accuracy,
                metrics.precision,
                metrics.recall,
                metrics.f1
            );
        }
        Command::Diagnose {
            image,
            model,
            llm,
            prompt_template,
            out,
            store,
            format,
            strict_llm,
        } => {
            let printed = parse_printed(&format)?;
            let (service, _) = build_service(&model, &llm, prompt_template.as_deref(), &store, strict_llm)?;
            let bytes = fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let report = service.diagnose(bytes).await?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(out) = out {
                fs::write(&out, &json).with_context(|| format!("writing {}", out.display()))?;
            }
            match printed {
                Printed::Json => println!("{json}"),
                Printed::Rendered(f) => print!("{}", render_report(&report, f)),
            }
        }
        Command::Serve {
            model,
            port,
            host,
            llm,
            prompt_template,
            store,
            strict_llm,
        } => {
            let (service, store) = build_service(&model, &llm, prompt_template.as_deref(), &store, strict_llm)?;
            let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                .await
                .with_context(|| format!("binding {host}:{port}"))?;
            eprintln!("listening on http://{}", listener.local_addr()?);
            server::serve(listener, AppState::new(service, store, Some(model))).await?;
        }
        Command::Report(ReportCommand::Get { id, format, store }) => {
            let printed = parse_printed(&format)?;
            let store = ReportStore::open(&store)?;
            let report = store.get(&id)?;
            match printed {
                Printed::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                Printed::Rendered(f) => print!("{}", render_report(&report, f)),
            }
        }
        Command::Report(ReportCommand::List { store }) => {
            let store = ReportStore::open(&store)?;
            for id in store.ids() {
                println!("{id}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
