//! `mssi`: synthesize vibration data, build MSSI feature caches, train and
//! evaluate the classifier, and run the repeated-trial protocol.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mssi::features::{featurize_dataset, FeatureConfig, Signal};
use mssi::io::{self, LabelValue, ManifestRecord, SignalFormat};
use mssi::pipeline::{self, LabeledDataset, TrainConfig};
use mssi::seed::derive_seed;
use mssi::synth::{synth_bearing_signal, FaultClass, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "mssi", version, about = "Bearing fault diagnosis with multi-scale spectral images and a CNN")]
struct Cli {
    /// Base seed for every random choice (synthesis, split, init, shuffle, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Print a machine-readable JSON summary (errors as JSON on stderr).
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic bearing records and a manifest.
    Synth(SynthArgs),
    /// Turn a manifest's signals into a feature cache.
    Featurize(FeaturizeArgs),
    /// Train a model and write it with its training history.
    Train(TrainArgs),
    /// Score a model on a feature cache.
    Eval(EvalArgs),
    /// Run the repeated split/train/test protocol.
    Trials(TrialsArgs),
    /// Classify every segment of a signal file.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_delimiter = ',', default_value = "NM,IR,B,OR,CA", value_parser = parse_class)]
    classes: Vec<FaultClass>,
    #[arg(long, default_value_t = 1)]
    per_class: usize,
    #[arg(long, default_value_t = 12_000.0)]
    sampling_rate: f64,
    #[arg(long, default_value_t = 75.0)]
    shaft_hz: f64,
    /// Record length in seconds.
    #[arg(long, default_value_t = 10.5)]
    duration: f64,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, value_enum, default_value = "f64le")]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Text,
    F64le,
}

impl From<FormatArg> for SignalFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => SignalFormat::Text,
            FormatArg::F64le => SignalFormat::F64le,
        }
    }
}

fn parse_class(s: &str) -> std::result::Result<FaultClass, String> {
    s.parse().map_err(|e: mssi::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, Args)]
struct FeatureArgs {
    #[arg(long, default_value_t = 2048)]
    seg_len: usize,
    #[arg(long, default_value_t = 3)]
    m_min: u32,
    #[arg(long, default_value_t = 9)]
    m_max: u32,
}

impl FeatureArgs {
    fn config(&self) -> Result<FeatureConfig> {
        let cfg = FeatureConfig { m_min: self.m_min, m_max: self.m_max, seg_len: self.seg_len };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 0.7)]
    split_ratio: f64,
}

impl TrainingArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            split_ratio: self.split_ratio,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Feature cache to train on. Without --test-cache it is split first.
    #[arg(long)]
    cache: PathBuf,
    /// Held-out cache tracked in the history; never used for fitting.
    #[arg(long)]
    test_cache: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cache: PathBuf,
}

#[derive(Debug, Args)]
struct TrialsArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    signal: PathBuf,
    #[arg(long, value_enum, default_value = "f64le")]
    format: FormatArg,
    #[arg(long, default_value_t = 12_000.0)]
    sampling_rate: f64,
    /// Comma-separated class names in label order, for display.
    #[arg(long, value_delimiter = ',')]
    class_names: Vec<String>,
    #[command(flatten)]
    features: FeatureArgs,
}

/// Files written so far; removed if the command fails.
#[derive(Default)]
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn add(&mut self, p: &Path) -> PathBuf {
        self.0.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn discard(&self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let mut outputs = Outputs::default();
    match run(&cli, &mut outputs) {
        Ok(summary) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            outputs.discard();
            if cli.json {
                eprintln!("{}", json!({ "error": format!("{e:#}") }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli, outputs: &mut Outputs) -> Result<Value> {
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create output directory {}", cli.out.display()))?;
    let say = |line: String| {
        if !cli.json {
            println!("{line}");
        }
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a, outputs, &say),
        Command::Featurize(a) => cmd_featurize(cli, a, outputs, &say),
        Command::Train(a) => cmd_train(cli, a, outputs, &say),
        Command::Eval(a) => cmd_eval(cli, a, outputs, &say),
        Command::Trials(a) => cmd_trials(cli, a, outputs, &say),
        Command::Predict(a) => cmd_predict(cli, a, outputs, &say),
    }
}

fn cmd_synth(cli: &Cli, a: &SynthArgs, outputs: &mut Outputs, say: &dyn Fn(String)) -> Result<Value> {
    if a.classes.is_empty() || a.per_class == 0 {
        bail!("need at least one class and --per-class >= 1");
    }
    let format: SignalFormat = a.format.into();
    let ext = match format {
        SignalFormat::Text => "txt",
        SignalFormat::F64le => "f64",
    };
    let mut records = Vec::new();
    let mut files = serde_json::Map::new();
    for &class in &a.classes {
        let mut listed = Vec::new();
        for i in 0..a.per_class {
            let spec = SynthSpec {
                class,
                sampling_rate: a.sampling_rate,
                shaft_hz: a.shaft_hz,
                duration: a.duration,
                snr_db: a.snr_db,
                seed: derive_seed(cli.seed, &format!("synth/{class}/{i}")),
            };
            let signal = synth_bearing_signal(&spec)?;
            let name = format!("{class}-{i:03}.{ext}");
            let path = outputs.add(&cli.out.join(&name));
            io::write_signal(&path, &signal.samples, format).with_context(|| format!("writing {}", path.display()))?;
            records.push(ManifestRecord {
                path: PathBuf::from(&name),
                format,
                sampling_rate_hz: a.sampling_rate,
                label: LabelValue::Name(class.token().to_owned()),
                source_id: format!("{class}-{i:03}"),
            });
            listed.push(Value::from(name));
        }
        say(format!("{class}: {}", listed.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(" ")));
        files.insert(class.token().to_owned(), Value::Array(listed));
    }
    let manifest = outputs.add(&cli.out.join("manifest.json"));
    io::write_manifest(&manifest, &records)?;
    say(format!("wrote {} signals and {}", records.len(), manifest.display()));
    Ok(json!({ "signals": records.len(), "manifest": manifest, "files": files }))
}

fn histogram(images: &[mssi::features::MssiImage], names: &[String]) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; names.len()];
    for img in images {
        if let Some(l) = img.label {
            counts[l as usize] += 1;
        }
    }
    names.iter().cloned().zip(counts).collect()
}

fn cmd_featurize(cli: &Cli, a: &FeaturizeArgs, outputs: &mut Outputs, say: &dyn Fn(String)) -> Result<Value> {
    let cfg = a.features.config()?;
    let (signals, names) =
        io::load_manifest(&a.manifest).with_context(|| format!("reading manifest {}", a.manifest.display()))?;
    let images = featurize_dataset(&signals, &cfg)?;
    let cache = outputs.add(&cli.out.join("features.mssi"));
    io::write_feature_cache(&cache, &images)?;
    outputs.add(&io::classes_sidecar(&cache));
    io::write_class_names(&cache, &names)?;
    let hist = histogram(&images, &names);
    say(format!("seg_len {} m {}..={}", cfg.seg_len, cfg.m_min, cfg.m_max));
    say(format!("{} images -> {}", images.len(), cache.display()));
    for (k, v) in &hist {
        say(format!("  {k}: {v}"));
    }
    let classes: Vec<Value> = hist.iter().map(|(k, v)| json!({ "class": k, "images": v })).collect();
    Ok(json!({ "images": images.len(), "seg_len": cfg.seg_len, "m_min": cfg.m_min, "m_max": cfg.m_max,
               "cache": cache, "classes": classes }))
}

fn load_dataset(cache: &Path) -> Result<LabeledDataset> {
    let images = io::read_feature_cache(cache).with_context(|| format!("reading cache {}", cache.display()))?;
    let names = io::read_class_names(cache, &images)?;
    Ok(LabeledDataset::new(images, names)?)
}

fn write_cache_with_names(path: &Path, ds: &LabeledDataset, outputs: &mut Outputs) -> Result<()> {
    outputs.add(path);
    io::write_feature_cache(path, &ds.images)?;
    outputs.add(&io::classes_sidecar(path));
    io::write_class_names(path, &ds.class_names)?;
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs, outputs: &mut Outputs, say: &dyn Fn(String)) -> Result<Value> {
    let cfg = a.training.config(cli.seed)?;
    let ds = load_dataset(&a.cache)?;
    let (train_set, test_set) = match &a.test_cache {
        Some(p) => (ds, Some(load_dataset(p)?)),
        None => {
            let (tr, te) = pipeline::split_dataset(&ds, cfg.split_ratio, cli.seed)?;
            write_cache_with_names(&cli.out.join("train.mssi"), &tr, outputs)?;
            write_cache_with_names(&cli.out.join("test.mssi"), &te, outputs)?;
            (tr, Some(te))
        }
    };
    if let Some(te) = &test_set {
        if te.classes() != train_set.classes() {
            bail!("test cache has {} classes but training cache has {}", te.classes(), train_set.classes());
        }
    }
    let (model, history) = pipeline::train(&train_set, &cfg, test_set.as_ref())?;
    let model_path = outputs.add(&cli.out.join("model.msdn"));
    io::write_model(&model_path, &model)?;
    let history_path = outputs.add(&cli.out.join("history.csv"));
    io::write_atomic(&history_path, |w| {
        use std::io::Write;
        writeln!(w, "epoch,mean_loss,train_accuracy,test_accuracy")?;
        for h in &history {
            let test = h.test_accuracy.map(|t| t.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", h.epoch, h.mean_loss, h.train_accuracy, test)?;
        }
        Ok(())
    })?;
    for h in &history {
        say(format!(
            "epoch {:3}  loss {:.5}  train {:.4}{}",
            h.epoch,
            h.mean_loss,
            h.train_accuracy,
            h.test_accuracy.map(|t| format!("  test {t:.4}")).unwrap_or_default()
        ));
    }
    say(format!("model -> {}", model_path.display()));
    Ok(json!({ "model": model_path, "history": history_path, "epochs": history }))
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, outputs: &mut Outputs, say: &dyn Fn(String)) -> Result<Value> {
    let model = io::read_model(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let ds = load_dataset(&a.cache)?;
    let eval = pipeline::evaluate(&model, &ds)?;
    let path = outputs.add(&cli.out.join("confusion.json"));
    io::write_atomic(&path, |w| Ok(serde_json::to_writer_pretty(w, &eval)?))?;
    say(format!("accuracy {:.4} ({} images)", eval.accuracy, ds.len()));
    Ok(serde_json::to_value(&eval)?)
}

fn cmd_trials(cli: &Cli, a: &TrialsArgs, outputs: &mut Outputs, say: &dyn Fn(String)) -> Result<Value> {
    let cfg = a.training.config(cli.seed)?;
    let ds = load_dataset(&a.cache)?;
    let report = pipeline::run_trials(&ds, &cfg, a.trials)?;
    let path = outputs.add(&cli.out.join("trials.json"));
    io::write_atomic(&path, |w| {
        use std::io::Write;
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })?;
    for (i, acc) in report.per_trial_accuracy.iter().enumerate() {
        say(format!("trial {:2}: {:.4}", i + 1, acc));
    }
    say(format!("mean {:.4}  std {:.5}", report.mean_accuracy, report.std_deviation));
    Ok(serde_json::to_value(&report)?)
}

fn cmd_predict(cli: &Cli, a: &PredictArgs, outputs: &mut Outputs, say: &dyn Fn(String)) -> Result<Value> {
    let cfg = a.features.config()?;
    let model = io::read_model(&a.model).with_context(|| format!("reading model {}", a.model.display()))?;
    let samples = io::read_signal(&a.signal, a.format.into())
        .with_context(|| format!("reading signal {}", a.signal.display()))?;
    let source = a.signal.display().to_string();
    let signal = Signal::new(samples, a.sampling_rate, None, source);
    let preds = pipeline::predict(&model, &signal, &cfg)?;
    let name = |c: usize| a.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
    for p in &preds {
        let probs: Vec<String> = p.probabilities.iter().map(|v| format!("{v:.4}")).collect();
        say(format!("segment {:4}: {}  [{}]", p.segment, name(p.class), probs.join(" ")));
    }
    let majority = pipeline::majority_class(&preds, model.classes());
    if let Some(m) = majority {
        say(format!("majority: {}", name(m)));
    }
    let path = outputs.add(&cli.out.join("predictions.json"));
    let summary = json!({ "segments": preds, "majority": majority.map(name) });
    io::write_atomic(&path, |w| Ok(serde_json::to_writer_pretty(w, &summary)?))?;
    Ok(summary)
}
