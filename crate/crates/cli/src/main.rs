mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use dendron::data_io::synth::{four_class_schema, four_class_specs, stairs_split_specs, synth_generate};
use dendron::data_io::{
    feature_extractor_digest, load_model, save_model, segment_by_samples, segment_windows, RawRecording,
};
use dendron::hierarchy::{infer_hierarchical, ModelBundle, TaskGraph};
use dendron::online_learning::{
    add_task, collect_placement_counts, train_new_head, AcquiredDataset, HeadBudget, PlacementDecision,
};
use dendron::resources::compare_deployments;
use dendron::tensor_nn::HeadSpec;
use dendron::training::{evaluate, train_joint, EvalReport, LabeledWindow, MultiLabelSample};

/// A mistake in how the command was invoked; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "dendron", version, about = "Hierarchical activity recognition with a shared feature extractor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// sit / lie / walk / run under static and moving
    FourClass,
    /// walk_up / walk_down, two subtle variants of walking
    Stairs,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic recording as CSV.
    Synth {
        #[arg(long, value_enum, default_value = "four-class")]
        preset: Preset,
        /// Seconds of signal per class.
        #[arg(long, default_value_t = 60.0)]
        seconds: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the matching hierarchy (four-class preset only).
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
    /// Jointly train extractor and heads on a labelled recording.
    Train {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Recording evaluated after the last epoch.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hierarchical inference with a per-window trace.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Confusion matrix and accuracy over the terminal labels.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Place a new task in the hierarchy and train its head only.
    AddTask {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated class labels of the new task, in head order.
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<String>,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value = "new_task")]
        name: String,
        /// Use these terminal-label counts (`label=count,...`) instead of
        /// running the current hierarchy on the data.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<String>>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Memory and MACC accounting of a model.
    Resources {
        #[arg(long)]
        model: PathBuf,
    },
}

fn header(command: &str, args: &[(&str, String)], cfg: Option<(&RunConfig, Option<String>)>) {
    println!("# dendron {command}");
    for (k, v) in args {
        println!("# {k} = {v}");
    }
    if let Some((cfg, note)) = cfg {
        if let Some(n) = note {
            println!("# {n}");
        }
        println!("# resolved config");
        for line in cfg.to_toml().lines() {
            println!("#   {line}");
        }
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_recording(path: &Path) -> anyhow::Result<RawRecording> {
    RawRecording::load(path).with_context(|| format!("loading recording {}", path.display()))
}

/// Windows shaped for `bundle`'s extractor.
fn model_windows(bundle: &ModelBundle, rec: &RawRecording, cfg: &RunConfig) -> anyhow::Result<Vec<LabeledWindow>> {
    let spec = bundle.feature_extractor().spec();
    if rec.channels.len() != spec.input_channels {
        return Err(dendron::Error::Data(format!(
            "recording has {} channels, model expects {}",
            rec.channels.len(),
            spec.input_channels
        ))
        .into());
    }
    let w = cfg.windowing()?;
    Ok(segment_by_samples(rec, spec.window_len, w.stride(spec.window_len)?, w.label_rule)?)
}

fn cmd_synth(preset: Preset, seconds: f64, config: Option<PathBuf>, out: PathBuf, schema_out: Option<PathBuf>) -> anyhow::Result<()> {
    let (cfg, note) = RunConfig::resolve(config.as_deref())?;
    let name = match preset {
        Preset::FourClass => "four-class",
        Preset::Stairs => "stairs",
    };
    header(
        "synth",
        &[("preset", name.into()), ("seconds", seconds.to_string()), ("out", show(&out))],
        Some((&cfg, note)),
    );
    let specs = match preset {
        Preset::FourClass => four_class_specs(),
        Preset::Stairs => stairs_split_specs(),
    };
    let rec = synth_generate(&specs, cfg.seed, seconds)?;
    rec.save(&out)?;
    println!("wrote {} samples x {} channels to {}", rec.len(), rec.channels.len(), out.display());
    if let Some(path) = schema_out {
        let Preset::FourClass = preset else {
            return Err(Usage("--schema-out is only available for the four-class preset".into()).into());
        };
        std::fs::write(&path, four_class_schema().to_schema_text()).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote schema to {}", path.display());
    }
    Ok(())
}

fn cmd_train(schema: PathBuf, data: PathBuf, holdout: Option<PathBuf>, config: Option<PathBuf>, out: PathBuf) -> anyhow::Result<()> {
    let (cfg, note) = RunConfig::resolve(config.as_deref())?;
    header(
        "train",
        &[
            ("schema", show(&schema)),
            ("data", show(&data)),
            ("holdout", holdout.as_deref().map(show).unwrap_or_else(|| "none".into())),
            ("out", show(&out)),
        ],
        Some((&cfg, note)),
    );
    let text = std::fs::read_to_string(&schema).with_context(|| format!("reading schema {}", schema.display()))?;
    let graph = TaskGraph::from_schema_text(&text)?;
    let vocab = graph.composite_labels();
    let rec = load_recording(&data)?;
    rec.validate(Some(&vocab))?;
    let windowing = cfg.windowing()?;
    let train = segment_windows(&rec, &windowing)?;
    let held = match &holdout {
        Some(p) => {
            let h = load_recording(p)?;
            h.validate(Some(&vocab))?;
            Some(segment_windows(&h, &windowing)?)
        }
        None => None,
    };
    let fe = cfg.fe_spec(rec.channels.len(), windowing.window_len(rec.sample_rate_hz)?);
    let mut bundle = ModelBundle::init(graph.clone(), fe, &cfg.hidden, cfg.seed)?;
    let samples = MultiLabelSample::from_windows(&graph, &train)?;
    println!("{} training windows, {} parameters", samples.len(), bundle.total_param_count());
    let report = train_joint(&mut bundle, &samples, held.as_deref(), &cfg.train()?)?;
    print!("{}", report.render(&graph));
    save_model(&bundle, &out)?;
    println!("wrote model to {}", out.display());
    println!("extractor sha256 {}", hex(&feature_extractor_digest(bundle.feature_extractor())));
    Ok(())
}

fn cmd_infer(model: PathBuf, data: PathBuf, config: Option<PathBuf>, trace: bool) -> anyhow::Result<()> {
    let (cfg, note) = RunConfig::resolve(config.as_deref())?;
    header(
        if trace { "infer" } else { "eval" },
        &[("model", show(&model)), ("data", show(&data))],
        Some((&cfg, note)),
    );
    let bundle = load_model(&model)?;
    let rec = load_recording(&data)?;
    let terminal = bundle.graph().composite_labels();
    let windows = model_windows(&bundle, &rec, &cfg)?;
    // windows labelled with a label that is no longer terminal are traced but
    // not scored
    let (scored, unscored): (Vec<LabeledWindow>, Vec<LabeledWindow>) =
        windows.iter().cloned().partition(|w| terminal.contains(&w.label));
    let report = if trace {
        let mut pairs = Vec::with_capacity(windows.len());
        for (i, w) in windows.iter().enumerate() {
            let t = infer_hierarchical(&bundle, &w.window)?;
            let steps: Vec<String> = t
                .visited
                .iter()
                .map(|s| format!("{}={}:{:.4}", s.task, s.label, s.confidences.data()[s.label_index]))
                .collect();
            println!("window {i} truth={} {} -> {}", w.label, steps.join(" "), t.final_label);
            if terminal.contains(&w.label) {
                pairs.push((w.label.clone(), t.final_label));
            }
        }
        EvalReport::from_predictions(terminal, &pairs)?
    } else {
        evaluate(&bundle, &scored)?
    };
    if !unscored.is_empty() {
        println!("{} windows with non-terminal labels left out of the confusion matrix", unscored.len());
    }
    print!("{}", report.render());
    Ok(())
}

fn parse_counts(entries: &[String], labels: &[String]) -> anyhow::Result<Vec<(String, usize)>> {
    let mut counts: Vec<(String, usize)> = labels.iter().map(|l| (l.clone(), 0)).collect();
    for e in entries {
        let (label, n) = e
            .split_once('=')
            .ok_or_else(|| Usage(format!("--counts entry `{e}` is not label=count")))?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| Usage(format!("--counts entry `{e}` has a non-integer count")))?;
        let slot = counts
            .iter_mut()
            .find(|(l, _)| l == label.trim())
            .ok_or_else(|| Usage(format!("--counts label `{label}` is not a terminal label of the model")))?;
        slot.1 = n;
    }
    Ok(counts)
}

#[allow(clippy::too_many_arguments)]
fn cmd_add_task(
    model: PathBuf,
    data: PathBuf,
    classes: Vec<String>,
    delta: f64,
    name: String,
    counts: Option<Vec<String>>,
    config: Option<PathBuf>,
    out: PathBuf,
) -> anyhow::Result<()> {
    let (cfg, note) = RunConfig::resolve(config.as_deref())?;
    header(
        "add-task",
        &[
            ("model", show(&model)),
            ("data", show(&data)),
            ("classes", classes.join(",")),
            ("delta", delta.to_string()),
            ("name", name.clone()),
            ("counts", counts.as_ref().map(|c| c.join(",")).unwrap_or_else(|| "predicted".into())),
            ("out", show(&out)),
        ],
        Some((&cfg, note)),
    );
    if classes.len() < 2 {
        return Err(Usage("--classes needs at least two labels".into()).into());
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Usage(format!("--delta must lie in [0, 1], got {delta}")).into());
    }
    let mut bundle = load_model(&model)?;
    let rec = load_recording(&data)?;
    rec.validate(Some(&classes))?;
    let windows = model_windows(&bundle, &rec, &cfg)?;
    let acquired = AcquiredDataset::from_windows(&windows, &classes)?;

    let decision = match &counts {
        Some(entries) => PlacementDecision::from_counts(parse_counts(entries, &bundle.graph().composite_labels())?)?,
        None => collect_placement_counts(&bundle, &acquired)?,
    }
    .decide(delta)?;
    print!("{}", decision.render());

    let mut widths = cfg.hidden.clone();
    widths.push(classes.len());
    let spec = HeadSpec { layer_widths: widths };
    let feature_dim = bundle.feature_extractor().feature_dim();
    let budget = HeadBudget::new(&spec, feature_dim, acquired.len())?;
    let before = feature_extractor_digest(bundle.feature_extractor());
    let task = add_task(&mut bundle, &name, &classes, &decision.attach_to, spec, cfg.seed)?;
    let report = train_new_head(&mut bundle, task, &acquired, &cfg.head_train())?;
    let after = feature_extractor_digest(bundle.feature_extractor());
    println!("added {task} ({name}) with {} samples", acquired.len());
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch\t{e}\t{l:.6}");
    }
    println!(
        "m_w {} weights ({} bytes), {} biases, activations {} bytes, feature cache {} bytes",
        budget.m_w,
        budget.weight_bytes(),
        budget.biases,
        budget.activation_bytes,
        report.cache_bytes
    );
    println!("extractor sha256 before {}", hex(&before));
    println!("extractor sha256 after  {}", hex(&after));
    save_model(&bundle, &out)?;
    println!("wrote model to {}", out.display());
    Ok(())
}

fn cmd_resources(model: PathBuf) -> anyhow::Result<()> {
    header("resources", &[("model", show(&model))], None);
    let bundle = load_model(&model)?;
    let report = compare_deployments(&bundle)?;
    print!("{}", report.render_table());
    print!("{}", report.render_rows());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            preset,
            seconds,
            config,
            out,
            schema_out,
        } => cmd_synth(preset, seconds, config, out, schema_out),
        Command::Train {
            schema,
            data,
            holdout,
            config,
            out,
        } => cmd_train(schema, data, holdout, config, out),
        Command::Infer { model, data, config } => cmd_infer(model, data, config, true),
        Command::Eval { model, data, config } => cmd_infer(model, data, config, false),
        Command::AddTask {
            model,
            data,
            classes,
            delta,
            name,
            counts,
            config,
            out,
        } => cmd_add_task(model, data, classes, delta, name, counts, config, out),
        Command::Resources { model } => cmd_resources(model),
    }
}

/// 2 usage, 3 data, 4 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<dendron::Error>() {
        Some(dendron::Error::Divergence { .. } | dendron::Error::NonFinite(_)) => 4,
        Some(dendron::Error::Precondition(_)) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
