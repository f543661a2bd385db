use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gdefer_core::calibration::reliability_table;
use gdefer_core::config::RunConfig;
use gdefer_core::dataset::{load_dataset, write_dataset, DatasetManifest};
use gdefer_core::deferral::{curve_table, partition, rank_for_deferral, DeferralRule};
use gdefer_core::fixtures::{generate_fixture, FixtureParams, MiscalibrationProfile};
use gdefer_core::guardrail::{filter_candidates, write_instruction_pairs};
use gdefer_core::hidden::{train, HiddenClassifier};
use gdefer_core::report::{build_report, evaluation_records, reliability_for, resolve_alpha};
use gdefer_core::{BinaryLabel, BlendWeight, Source, Split};
use gdefer_service::{replay_log, AppState};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "gdefer", version, about = "Guided deferral: metrics, deferral and the review service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Fixtures(FixturesArgs),
    /// Compute the run report for a labeled dataset.
    Metrics(MetricsArgs),
    /// Filter candidate guidance documents against annotations.
    Guardrail(GuardrailArgs),
    /// Train the hidden-state classifier on the classifier_train split.
    Train(TrainArgs),
    /// Print the threshold and partition sizes for a deferral rule.
    Defer(DeferArgs),
    /// Run the review service.
    Serve(ServeArgs),
    /// Replay a review-event log into a session analysis.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Expected share of negative labels.
    #[arg(long, default_value_t = 0.95)]
    imbalance: f64,
    /// Target correlation between the verbalised and hidden-state scores.
    #[arg(long, default_value_t = 0.53)]
    correlation: f64,
    /// calibrated | positive_shift | perfect
    #[arg(long, default_value = "calibrated")]
    profile: MiscalibrationProfile,
    /// Embedding dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Dataset plus the run configuration and its command-line overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Embedding dimension (overrides the configuration).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, conflicts_with = "fit_alpha")]
    alpha: Option<f64>,
    /// Fit alpha on the validation split.
    #[arg(long)]
    fit_alpha: bool,
    #[arg(long, conflicts_with = "theta")]
    budget: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    rank_source: Option<Source>,
    #[arg(long)]
    clf_source: Option<Source>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = self.dim {
            cfg.embedding_dim = d;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(gamma) = self.gamma {
            cfg.calibration.gamma = gamma;
        }
        if let Some(alpha) = self.alpha {
            cfg.fusion.alpha = alpha;
            cfg.fusion.fit_alpha = false;
        }
        if self.fit_alpha {
            cfg.fusion.fit_alpha = true;
        }
        if let Some(k) = self.budget {
            cfg.deferral.budget = Some(k);
            cfg.deferral.theta = None;
        }
        if let Some(theta) = self.theta {
            cfg.deferral.theta = Some(theta);
            cfg.deferral.budget = None;
        }
        if let Some(s) = self.rank_source {
            cfg.deferral.rank_source = s;
        }
        if let Some(s) = self.clf_source {
            cfg.deferral.classification_source = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<(DatasetManifest, RunConfig)> {
        let cfg = self.config()?;
        let manifest = load_dataset(&self.dataset, cfg.embedding_dim)
            .with_context(|| format!("loading {}", self.dataset.display()))?;
        Ok((manifest, cfg))
    }
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also analyse this review-event log into the pilot section.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for tab-separated reliability and curve tables.
    #[arg(long)]
    tables: Option<PathBuf>,
}

#[derive(Args)]
struct GuardrailArgs {
    /// JSON lines `{"case_id", "raw"}`.
    #[arg(long)]
    candidates: PathBuf,
    /// JSON lines `{"case_id", "label"}`.
    #[arg(long)]
    annotations: PathBuf,
    /// Accepted candidates, JSON lines.
    #[arg(long)]
    out: PathBuf,
    /// Write `{report_text, guidance_text}` pairs here (needs --dataset).
    #[arg(long, requires = "dataset")]
    pairs: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Classifier parameter file.
    #[arg(long)]
    out: PathBuf,
    /// Write the dataset back with epsilon_hat from the new classifier.
    #[arg(long)]
    scored: Option<PathBuf>,
}

#[derive(Args)]
struct DeferArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Partition as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Append-only review-event log.
    #[arg(long)]
    events: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => {
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(items)
}

fn cmd_fixtures(a: FixturesArgs) -> Result<()> {
    let params = FixtureParams {
        n: a.n,
        imbalance: a.imbalance,
        correlation: a.correlation,
        profile: a.profile,
        dim: a.dim,
        seed: a.seed,
        ..FixtureParams::default()
    };
    let (manifest, summary) = generate_fixture(&params)?;
    let mut w = create(&a.out)?;
    write_dataset(&manifest, &mut w)?;
    w.flush()?;
    emit_json(&serde_json::to_value(summary)?, None)
}

fn labels_of(manifest: &DatasetManifest) -> HashMap<String, BinaryLabel> {
    manifest
        .records
        .iter()
        .filter_map(|r| Some((r.id.clone(), r.label?)))
        .collect()
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let (manifest, cfg) = a.run.load()?;
    let pilot = match &a.events {
        Some(path) => {
            let state = gdefer_service::Deployment::new(manifest.clone(), cfg.clone())?;
            Some(replay_log(path, Some(&state.model_predictions), &state.labels)?)
        }
        None => None,
    };
    let report = build_report(&manifest, &cfg, pilot)?;
    if let Some(dir) = &a.tables {
        std::fs::create_dir_all(dir)?;
        for source in Source::ALL {
            if report.source(source).is_some_and(|s| s.available) {
                let rows = reliability_for(&manifest, &cfg, source, cfg.calibration.gamma)?;
                std::fs::write(dir.join(format!("reliability_{source}.tsv")), reliability_table(&rows))?;
            }
        }
        let records = gdefer_core::report::prepared_records(&manifest, report.alpha.value)?;
        for curve in &report.curves {
            let c = gdefer_core::deferral::records_curve(&records, curve.rank_source, curve.classification_source)?;
            std::fs::write(
                dir.join(format!("arc_{}_{}.tsv", curve.rank_source, curve.classification_source)),
                curve_table(&c),
            )?;
        }
    }
    emit_json(&serde_json::to_value(&report)?, a.out.as_deref())
}

#[derive(Deserialize)]
struct Candidate {
    case_id: String,
    raw: String,
}

#[derive(Deserialize)]
struct Annotation {
    case_id: String,
    label: BinaryLabel,
}

fn cmd_guardrail(a: GuardrailArgs) -> Result<()> {
    let candidates: Vec<(String, String)> = read_jsonl::<Candidate>(&a.candidates)?
        .into_iter()
        .map(|c| (c.case_id, c.raw))
        .collect();
    let annotations: HashMap<String, BinaryLabel> = read_jsonl::<Annotation>(&a.annotations)?
        .into_iter()
        .map(|x| (x.case_id, x.label))
        .collect();
    let outcome = filter_candidates(&candidates, &annotations)?;
    let mut w = create(&a.out)?;
    for accepted in &outcome.accepted {
        serde_json::to_writer(&mut w, accepted)?;
        writeln!(w)?;
    }
    w.flush()?;
    if let (Some(pairs), Some(dataset)) = (&a.pairs, &a.dataset) {
        let dim = a.dim.unwrap_or(RunConfig::default().embedding_dim);
        let manifest = load_dataset(dataset, dim)?;
        let reports: HashMap<String, String> = manifest
            .records
            .into_iter()
            .map(|r| (r.id, r.report_text))
            .collect();
        let mut w = create(pairs)?;
        let n = write_instruction_pairs(&outcome.accepted, &reports, &mut w)?;
        w.flush()?;
        tracing::info!(pairs = n, "instruction pairs written");
    }
    emit_json(&serde_json::to_value(&outcome.stats)?, None)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (mut manifest, cfg) = a.run.load()?;
    let has_splits = manifest.records.iter().any(|r| r.split.is_some());
    let examples = |split: Option<Split>| -> Vec<(Vec<f64>, BinaryLabel)> {
        manifest
            .records
            .iter()
            .filter(|r| split.is_none() || r.split == split)
            .filter_map(|r| Some((r.embedding.clone()?, r.label?)))
            .collect()
    };
    let train_set = examples(has_splits.then_some(Split::ClassifierTrain));
    if train_set.is_empty() {
        bail!("no labeled records with embeddings to train on");
    }
    let trained = train(&train_set, &cfg.train)?;
    let clf: &HiddenClassifier = &trained.classifier;
    let accuracy = |set: &[(Vec<f64>, BinaryLabel)]| -> Result<Option<f64>> {
        if set.is_empty() {
            return Ok(None);
        }
        let mut correct = 0;
        for (x, y) in set {
            correct += usize::from(clf.predict(x)?.classify() == *y);
        }
        Ok(Some(correct as f64 / set.len() as f64))
    };
    let held_out = if has_splits { examples(Some(Split::Test)) } else { Vec::new() };
    let mut w = create(&a.out)?;
    clf.save(&mut w)?;
    w.flush()?;
    if let Some(path) = &a.scored {
        let weight = BlendWeight::new(cfg.fusion.alpha)?;
        for r in &mut manifest.records {
            if let Some(x) = &r.embedding {
                r.epsilon_hat = Some(clf.predict(x)?);
            }
            r.refresh_combined(weight);
        }
        let mut w = create(path)?;
        write_dataset(&manifest, &mut w)?;
        w.flush()?;
    }
    emit_json(
        &serde_json::json!({
            "examples": train_set.len(),
            "epochs": cfg.train.epochs,
            "initial_loss": trained.losses.first(),
            "final_loss": trained.losses.last(),
            "train_accuracy": accuracy(&train_set)?,
            "test_accuracy": accuracy(&held_out)?,
        }),
        None,
    )
}

fn cmd_defer(a: DeferArgs) -> Result<()> {
    let (manifest, cfg) = a.run.load()?;
    let alpha = resolve_alpha(&manifest, &cfg)?;
    let weight = BlendWeight::new(alpha.value)?;
    let (_, pool) = evaluation_records(&manifest);
    let mut records: Vec<_> = pool.into_iter().cloned().collect();
    for r in &mut records {
        r.refresh_combined(weight);
    }
    let source = cfg.deferral.rank_source;
    let ranking = rank_for_deferral(&records, source)?;
    let rule: DeferralRule = cfg.deferral.rule();
    let theta = rule.theta(&ranking)?;
    let parts = partition(&ranking, theta);
    println!(
        "theta={theta} deferred={} autonomous={}",
        parts.deferred.len(),
        parts.autonomous.len()
    );
    if let Some(path) = &a.out {
        emit_json(
            &serde_json::json!({
                "rank_source": source,
                "rule": rule,
                "theta": theta,
                "deferred": parts.deferred,
                "autonomous": parts.autonomous,
            }),
            Some(path),
        )?;
    }
    Ok(())
}

async fn cmd_serve(a: ServeArgs) -> Result<()> {
    let (manifest, cfg) = a.run.load()?;
    let state = AppState::new(manifest, cfg, Some(a.events))?;
    tracing::info!(deferred = state.deployment.deferred.len(), "deployment ready");
    gdefer_service::serve(a.addr, Arc::new(state)).await?;
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let (manifest, cfg) = a.run.load()?;
    let deployment = gdefer_service::Deployment::new(manifest.clone(), cfg)?;
    let labels = labels_of(&manifest);
    let analysis = replay_log(&a.events, Some(&deployment.model_predictions), &labels)?;
    emit_json(&serde_json::to_value(&analysis)?, a.out.as_deref())
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fixtures(a) => cmd_fixtures(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Guardrail(a) => cmd_guardrail(a),
        Command::Train(a) => cmd_train(a),
        Command::Defer(a) => cmd_defer(a),
        Command::Serve(a) => tokio::runtime::Runtime::new()
            .context("starting runtime")
            .and_then(|rt| rt.block_on(cmd_serve(a))),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
