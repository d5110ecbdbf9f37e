//! Command-line front end. Reports and progress go to stderr; every command
//! writes its artifact to the path given with `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::cow_model::{CowParameters, QberSource};
use crate::data::{self, pearson_matrix, prepare_dir, FeatureFrame, PrepOptions, PARAMETERS};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fit::{self, parse_free_list, FitSpec};
use crate::metrics::{write_report_csv, ReportRow};
use crate::mlp::{self, parse_inputs, MlpModel, MlpTopology, PredictionTable, TrainConfig};
use crate::synth::{generate_scenario, Scenario};

#[derive(Debug, Parser)]
#[command(name = "cowqkd", version, about = "COW QKD key-rate modelling, fitting and prediction")]
pub struct Cli {
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic monitoring CSVs for every link of a scenario.
    Synth(SynthArgs),
    /// Clean, average, align and lag one link directory into a feature frame.
    Prep(PrepArgs),
    /// Fit physical parameters to a frame's SKR.
    Fit(FitArgs),
    /// Train the prediction network on one or more frames.
    Train(TrainArgs),
    /// Apply a trained network to a frame.
    Predict(PredictArgs),
    /// Error metrics of a model on frames, or of saved prediction CSVs.
    Evaluate(EvaluateArgs),
    /// Pearson correlation matrix of a frame's parameters.
    Correlate(CorrelateArgs),
    /// Print the flag reference page (Markdown).
    Reference,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario TOML file, or `default` for the built-in five-link chain.
    #[arg(long)]
    pub scenario: String,
    /// Output directory; one `link<id>` folder per link.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    /// Link directory holding `<parameter>.csv` files.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Averaging window, e.g. `10m`, `30s`, `1h`.
    #[arg(long, default_value = "10m")]
    pub window: String,
    /// Comma-separated SKR row lags; `none` for no lag columns.
    #[arg(long, default_value = "1,2,3")]
    pub lags: String,
    /// Constant link-loss column; defaults to the directory's `link.toml`.
    #[arg(long = "link-loss")]
    pub link_loss: Option<f64>,
    /// Feature frame CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Feature frame with `skr`, `qber` and `visibility` columns.
    #[arg(long)]
    pub frame: PathBuf,
    /// Parameters to fit: any of `alpha`, `eta`, `t_B`, comma-separated.
    #[arg(long, default_value = "alpha")]
    pub free: String,
    /// Base parameters (TOML); omitted fields keep their defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Fibre length in km; defaults to the frame's `link_loss` value.
    #[arg(long = "length-km")]
    pub length_km: Option<f64>,
    /// Mean photon number; defaults to the channel transmittance.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Use the modelled instead of the measured QBER.
    #[arg(long)]
    pub modeled_qber: bool,
    /// Optimiser iteration limit.
    #[arg(long = "max-iter", default_value_t = 2000)]
    pub max_iter: usize,
    /// Fit result JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-sample CSV (timestamp, measured, calculated, residual); defaults
    /// to the JSON path with a `.csv` extension.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training frame; repeat for multi-link training.
    #[arg(long = "frame", required = true)]
    pub frames: Vec<PathBuf>,
    /// Per-frame constant link loss, one per `--frame`, overriding the column.
    #[arg(long = "link-loss")]
    pub link_loss: Vec<f64>,
    /// Input branches: `qber`, `visibility`, `link_loss`, `history`, `laserpower`.
    #[arg(long, default_value = "qber,visibility,link_loss,history")]
    pub inputs: String,
    /// SKR lags forming the history branch.
    #[arg(long, default_value = "1,2,3")]
    pub lags: String,
    /// Network shape: `standard` or `simplified`.
    #[arg(long, value_enum, default_value_t = Shape::Standard)]
    pub topology: Shape,
    /// Maximum training epochs.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Mini-batch size; the last batch of an epoch may be shorter.
    #[arg(long = "batch-size", default_value_t = 8)]
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping early.
    #[arg(long, default_value_t = 15)]
    pub patience: usize,
    /// Seed for weight init, the 80/20 split and batch shuffling.
    #[arg(long, default_value_t = 64)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-epoch loss CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Shape {
    /// Branches [64, 16], trunk [64, 128, 32, 8].
    Standard,
    /// One input-wide layer per branch, trunk [8].
    Simplified,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Feature frame with the model's input columns.
    #[arg(long)]
    pub frame: PathBuf,
    /// Replace the frame's link loss; repeat for a sweep (one CSV per value).
    #[arg(long = "link-loss")]
    pub link_loss: Vec<f64>,
    /// Prediction CSV. With several `--link-loss` values each file gets an
    /// `_ll<value>` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model to evaluate on each `--frame`.
    #[arg(long, requires = "frames")]
    pub model: Option<PathBuf>,
    /// Frame to evaluate on, one report row each.
    #[arg(long = "frame")]
    pub frames: Vec<PathBuf>,
    /// Prediction CSVs written by `predict`, evaluated as they are.
    #[arg(long = "predictions", conflicts_with = "model")]
    pub predictions: Vec<PathBuf>,
    /// Model label in the report; defaults to the model file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Report CSV: `link,model,me,mae,mre,mse,n`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Feature frame CSV.
    #[arg(long)]
    pub frame: PathBuf,
    /// Columns to correlate; defaults to the monitored parameters present.
    #[arg(long)]
    pub columns: Option<String>,
    /// Matrix CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Synth(a) => synth(a, exec),
        Command::Prep(a) => prep(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a, exec),
        Command::Evaluate(a) => evaluate(a, exec),
        Command::Correlate(a) => correlate(a),
        Command::Reference => {
            print!("{}", reference_page());
            Ok(())
        }
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    if matches!(text.trim(), "" | "none") {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad {what} `{s}`"))))
        .collect()
}

fn synth(a: SynthArgs, exec: Execution) -> Result<()> {
    let mut scenario = if a.scenario == "default" {
        Scenario::default()
    } else {
        Scenario::load(&a.scenario)?
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    for s in generate_scenario(&scenario, &a.out, exec)? {
        eprintln!("link {}: {} samples -> {}", s.link_id, s.samples, s.dir.display());
    }
    Ok(())
}

fn prep(a: PrepArgs) -> Result<()> {
    let opts = PrepOptions {
        window: data::parse_duration(&a.window)?,
        lags: parse_list(&a.lags, "lag")?,
        link_loss: a.link_loss,
    };
    let (frame, report) = prepare_dir(&a.input, &opts)?;
    for p in &report.parameters {
        eprintln!(
            "{}: {} read, {} non-finite, {} out of range, {} windows",
            p.name, p.read, p.cleaned.non_finite, p.cleaned.out_of_range, p.windows
        );
    }
    eprintln!(
        "{} rows ({} unaligned, {} without lag history)",
        report.rows, report.unaligned, report.lag_dropped
    );
    frame.write_csv(&a.out)
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let frame = FeatureFrame::read_csv(&a.frame)?;
    let mut base = match &a.params {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => CowParameters::default(),
    };
    match (a.length_km, frame.column("link_loss")) {
        (Some(l), _) => base.length_km = l,
        (None, Ok(col)) if !col.is_empty() => {
            log::info!("taking fibre length from the frame's link_loss column");
            base.length_km = col[0];
        }
        _ if a.params.is_some() => {}
        _ => return Err(Error::Config("no --length-km and no link_loss column in the frame".into())),
    }
    base = match a.mu {
        Some(mu) => base.with_mu(mu),
        None => base.at_upper_bound()?,
    };
    let mut spec = FitSpec::new(&parse_free_list(&a.free)?, &base);
    spec.max_iter = a.max_iter;
    if a.modeled_qber {
        spec.qber_source = QberSource::Modeled;
    }
    // start values outside the search box are pulled onto it
    for (x, &(lo, hi)) in spec.initial.iter_mut().zip(&spec.bounds) {
        *x = x.clamp(lo, hi);
    }
    let r = fit::fit(&frame, &base, &spec)?;
    for (p, v) in r.free.iter().zip(&r.fitted) {
        eprintln!("{p} = {v}");
    }
    eprintln!(
        "residual rms {:.3} b/s (start {:.3}), {} iterations, converged: {}",
        r.residual_rms, r.initial_rms, r.iterations, r.converged
    );
    if !r.converged {
        log::warn!("optimiser stopped at the iteration limit");
    }
    r.write_json(&a.out)?;
    let samples = a.samples.unwrap_or_else(|| a.out.with_extension("csv"));
    r.write_samples_csv(&frame, samples)
}

fn load_frames(paths: &[PathBuf], link_loss: &[f64]) -> Result<Vec<FeatureFrame>> {
    if !link_loss.is_empty() && link_loss.len() != paths.len() {
        return Err(Error::Config(format!(
            "{} --link-loss values for {} frames",
            link_loss.len(),
            paths.len()
        )));
    }
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut f = FeatureFrame::read_csv(p)?;
            if let Some(&ll) = link_loss.get(i) {
                f.set_column("link_loss", vec![ll; f.len()])?;
            }
            Ok(f)
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let frames = load_frames(&a.frames, &a.link_loss)?;
    let frame = FeatureFrame::concat(&frames)?;
    let (inputs, lags) = (parse_inputs(&a.inputs)?, parse_list::<usize>(&a.lags, "lag")?);
    let topology = match a.topology {
        Shape::Standard => MlpTopology::standard(&inputs, &lags),
        Shape::Simplified => MlpTopology::simplified(&inputs, &lags),
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        patience: a.patience,
        seed: a.seed,
        ..Default::default()
    };
    let model = MlpModel::init(topology, a.seed)?;
    let t = mlp::train(model, &frame, &cfg)?;
    eprintln!(
        "{} training / {} test rows; best epoch {} of {}; test MSE {:.6}",
        t.train_rows.len(),
        t.test_rows.len(),
        t.best_epoch,
        t.model.history.len(),
        t.test_mse
    );
    if let Some(h) = &a.history {
        write_history(&t.model, h)?;
    }
    t.model.save(&a.out)
}

fn write_history(model: &MlpModel, path: &Path) -> Result<()> {
    let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["epoch", "learning_rate", "train_loss", "val_loss"]).map_err(err)?;
    for h in &model.history {
        w.write_record([
            h.epoch.to_string(),
            h.learning_rate.to_string(),
            h.train_loss.to_string(),
            h.val_loss.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn suffixed(path: &Path, link_loss: f64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}_ll{link_loss}{ext}"))
}

fn predict(a: PredictArgs, exec: Execution) -> Result<()> {
    let model = MlpModel::load(&a.model)?;
    let frame = FeatureFrame::read_csv(&a.frame)?;
    if a.link_loss.is_empty() {
        return model.prediction_table(&frame, exec)?.write_csv(&a.out);
    }
    for &ll in &a.link_loss {
        let mut f = frame.clone();
        f.set_column("link_loss", vec![ll; f.len()])?;
        let out = if a.link_loss.len() == 1 { a.out.clone() } else { suffixed(&a.out, ll) };
        model.prediction_table(&f, exec)?.write_csv(&out)?;
        eprintln!("link loss {ll} -> {}", out.display());
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn evaluate(a: EvaluateArgs, exec: Execution) -> Result<()> {
    let mut rows = Vec::new();
    if let Some(model_path) = &a.model {
        let model = MlpModel::load(model_path)?;
        let name = a.name.clone().unwrap_or_else(|| stem(model_path));
        for f in &a.frames {
            let frame = FeatureFrame::read_csv(f)?;
            rows.push(ReportRow {
                link: stem(f),
                model: name.clone(),
                report: model.evaluate(&frame, exec)?,
            });
        }
    } else if !a.predictions.is_empty() {
        let name = a.name.clone().unwrap_or_else(|| "predictions".into());
        for p in &a.predictions {
            rows.push(ReportRow {
                link: stem(p),
                model: name.clone(),
                report: read_predictions(p)?.report()?,
            });
        }
    } else {
        return Err(Error::Config("give --model with --frame, or --predictions".into()));
    }
    for r in &rows {
        eprintln!(
            "{} / {}: ME {:.3} MAE {:.3} MRE {} MSE {:.6}",
            r.link,
            r.model,
            r.report.me,
            r.report.mae,
            r.report.mre.map_or("n/a".into(), |v| format!("{v:.5}")),
            r.report.mse
        );
    }
    write_report_csv(&rows, &a.out)
}

/// Reads a CSV written by [`PredictionTable::write_csv`].
pub fn read_predictions(path: &Path) -> Result<PredictionTable> {
    let frame = FeatureFrame::read_csv(path)?;
    let col = |c: &str| frame.column(c).map(<[f64]>::to_vec);
    Ok(PredictionTable {
        timestamps: frame.timestamps.clone(),
        measured: col("measured")?,
        predicted: col("predicted")?,
        measured_scaled: col("measured_scaled")?,
        predicted_scaled: col("predicted_scaled")?,
    })
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let frame = FeatureFrame::read_csv(&a.frame)?;
    let columns: Vec<String> = match &a.columns {
        Some(c) => parse_list(c, "column")?,
        None => PARAMETERS.iter().filter(|c| frame.has_column(c)).map(|c| c.to_string()).collect(),
    };
    let refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let m = pearson_matrix(&frame, &refs)?;
    for (i, j) in &m.undefined {
        eprintln!("warning: correlation of {} and {} undefined (constant column)", refs[*i], refs[*j]);
    }
    m.write_csv(&a.out)
}

/// Markdown reference of every command and flag, generated from the parser.
pub fn reference_page() -> String {
    let root = Cli::command();
    let mut out = String::from("# `cowqkd` command reference\n\n");
    out.push_str("Generated by `cowqkd reference`. Exit status: 0 on success, 1 on a runtime error, 2 on a usage error.\n\n");
    out.push_str("## Global flags\n\n");
    flag_table(&mut out, root.get_arguments());
    for sub in root.get_subcommands() {
        if sub.get_name() == "help" {
            continue;
        }
        out.push_str(&format!("\n## `{}`\n\n", sub.get_name()));
        if let Some(about) = sub.get_about() {
            out.push_str(&format!("{about}\n\n"));
        }
        if sub.get_arguments().any(|a| !a.is_global_set()) {
            flag_table(&mut out, sub.get_arguments().filter(|a| !a.is_global_set()));
        }
    }
    out
}

fn flag_table<'a>(out: &mut String, args: impl Iterator<Item = &'a clap::Arg>) {
    out.push_str("| flag | default | description |\n|---|---|---|\n");
    for arg in args {
        let id = arg.get_id().as_str();
        if matches!(id, "help" | "version") {
            continue;
        }
        let name = match (arg.get_long(), arg.get_short()) {
            (Some(l), Some(s)) => format!("`-{s}`, `--{l}`"),
            (Some(l), None) => format!("`--{l}`"),
            (None, Some(s)) => format!("`-{s}`"),
            (None, None) => format!("`<{id}>`"),
        };
        let multi = matches!(arg.get_action(), clap::ArgAction::Append);
        let default = arg
            .get_default_values()
            .iter()
            .map(|v| format!("`{}`", v.to_string_lossy()))
            .collect::<Vec<_>>()
            .join(", ");
        let default = if !default.is_empty() {
            default
        } else if arg.is_required_set() {
            "required".into()
        } else {
            String::new()
        };
        let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default().replace('\n', " ");
        let help = if multi { format!("{help} (repeatable)").trim_start().to_string() } else { help };
        out.push_str(&format!("| {name} | {default} | {help} |\n"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<usize>("1,2,3", "lag").unwrap(), vec![1, 2, 3]);
        assert!(parse_list::<usize>("none", "lag").unwrap().is_empty());
        assert!(parse_list::<usize>("1,x", "lag").is_err());
        assert_eq!(suffixed(Path::new("out/p.csv"), 46.0), PathBuf::from("out/p_ll46.csv"));
    }

    #[test]
    fn reference_mentions_every_command() {
        let page = reference_page();
        for c in ["synth", "prep", "fit", "train", "predict", "evaluate", "correlate"] {
            assert!(page.contains(&format!("## `{c}`")), "{c}");
        }
        for f in ["--seed", "--window", "--lags", "--free", "--link-loss", "--epochs", "--batch-size"] {
            assert!(page.contains(f), "{f}");
        }
    }
}
