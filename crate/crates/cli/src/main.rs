use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use heatcast_core::dataset::{self, load_holidays};
use heatcast_core::enn::DEFAULT_HIDDEN_SIZE;
use heatcast_core::eval::{self, evaluate, load_predictions, write_predictions};
use heatcast_core::experiment::{
    run_data_amount_study, run_factor_study, run_sweep, DataSource, DateRange, Execution,
    ExperimentPlan, StudyReport,
};
use heatcast_core::{
    build_supervectors, compute_stats, filter_working_days, synth, Channel, DatasetVariant,
    EnnModel, Error, PredictionPairs, SynthConfig, TrainConfig,
};

#[derive(Parser)]
#[command(name = "heatcast", version, about = "Hourly heat-demand forecasting with Elman networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hourly CSV (`data.csv`).
    Generate(Common),
    /// Train one model and write `model.json`.
    Train(Common),
    /// Run a saved model over a CSV and write `predictions.csv`.
    Predict(Common),
    /// Score a prediction CSV and write a report with table CSVs.
    Evaluate(Common),
    /// Window by depth by variant sweep.
    Sweep(StudyArgs),
    /// Compare nested training spans.
    DataStudy(StudyArgs),
    /// Compare the four weather-factor variants.
    FactorStudy(StudyArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override any config field, e.g. `--set train_config.epochs=50`. Values parse as JSON,
    /// falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    /// Run trials one at a time instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainJob {
    data: DataSource,
    holidays: Vec<NaiveDate>,
    holidays_file: Option<PathBuf>,
    train: DateRange,
    validation: Option<DateRange>,
    window: usize,
    variant: DatasetVariant,
    hidden_layers: usize,
    hidden_size: usize,
    /// Defaults to half the window.
    stride: Option<usize>,
    train_config: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthConfig::default()),
            holidays: Vec::new(),
            holidays_file: None,
            train: DateRange::years(2008, 2010),
            validation: Some(DateRange::years(2011, 2011)),
            window: 4,
            variant: DatasetVariant::D,
            hidden_layers: 8,
            hidden_size: DEFAULT_HIDDEN_SIZE,
            stride: None,
            train_config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictJob {
    model: PathBuf,
    data: DataSource,
    #[serde(default)]
    holidays: Vec<NaiveDate>,
    #[serde(default)]
    holidays_file: Option<PathBuf>,
    /// Restrict prediction to these dates.
    #[serde(default)]
    range: Option<DateRange>,
    /// When given, must agree with the model.
    #[serde(default)]
    window: Option<usize>,
    #[serde(default)]
    variant: Option<DatasetVariant>,
    #[serde(default = "one")]
    stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateJob {
    predictions: PathBuf,
    #[serde(default = "default_bin_width")]
    histogram_bin_width: f64,
}

fn default_bin_width() -> f64 {
    eval::DEFAULT_BIN_WIDTH_PCT
}

fn set_path(root: &mut Value, key: &str, value: Value) -> anyhow::Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("cannot set `{key}`: `{part}` is not inside an object"))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| anyhow!("cannot set `{key}`: parent is not an object"))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a JSON config, applies `--set` and `--seed`, and resolves relative paths
/// against the config file's directory.
fn load_config<T: DeserializeOwned>(
    common: &Common,
    seed_key: Option<&str>,
) -> anyhow::Result<(T, PathBuf)> {
    let text = std::fs::read_to_string(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
    for item in &common.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        set_path(&mut value, key, parsed).map_err(|e| Error::Config(e.to_string()))?;
    }
    match (common.seed, seed_key) {
        (Some(seed), Some(key)) => set_path(&mut value, key, seed.into())?,
        (Some(_), None) => eprintln!("warning: --seed has no effect on this command"),
        _ => {}
    }
    let cfg = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
    let base = common
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok((cfg, base))
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn resolve_source(base: &Path, data: &mut DataSource) {
    if let DataSource::Csv(path) = data {
        *path = resolve(base, path);
    }
}

fn holidays(base: &Path, listed: &[NaiveDate], file: &Option<PathBuf>) -> anyhow::Result<Vec<NaiveDate>> {
    let mut out = listed.to_vec();
    if let Some(path) = file {
        out.extend(load_holidays(resolve(base, path))?);
    }
    Ok(out)
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn generate(common: &Common) -> anyhow::Result<()> {
    let (cfg, _): (SynthConfig, _) = load_config(common, Some("seed"))?;
    let table = synth::generate(&cfg)?;
    create_out(&common.out)?;
    let path = common.out.join("data.csv");
    let file = std::fs::File::create(&path)?;
    dataset::write_csv(&table, std::io::BufWriter::new(file))?;
    println!("wrote {} ({} hours)", path.display(), table.len());
    Ok(())
}

fn train(common: &Common) -> anyhow::Result<()> {
    let (mut job, base): (TrainJob, _) = load_config(common, Some("train_config.seed"))?;
    resolve_source(&base, &mut job.data);
    let source = job.data.load()?;
    let working = filter_working_days(&source, &holidays(&base, &job.holidays, &job.holidays_file)?);
    let train_table = job.train.select(&working);
    let stats = compute_stats(&train_table, &Channel::ALL)?;
    let stride = job.stride.unwrap_or((job.window / 2).max(1));
    let train_set = build_supervectors(&train_table, job.variant, job.window, stride, &stats)?;
    let validation = match job.validation {
        Some(range) => Some(build_supervectors(
            &range.select(&working),
            job.variant,
            job.window,
            1,
            &stats,
        )?),
        None => None,
    };
    let mut model = EnnModel::init(
        job.hidden_layers,
        train_set.input_size(),
        job.hidden_size,
        job.train_config.seed,
    )?;
    let trace = model.fit(&train_set, validation.as_ref(), &job.train_config)?;
    create_out(&common.out)?;
    let path = common.out.join("model.json");
    model.save(&path)?;
    std::fs::write(
        common.out.join("train_trace.json"),
        serde_json::to_string_pretty(&trace)? + "\n",
    )?;
    println!(
        "wrote {} after {} epochs (best {})",
        path.display(),
        trace.final_epoch,
        trace.best_epoch
    );
    if let Some(m) = trace.validation_mape.get(trace.best_epoch.saturating_sub(1)) {
        println!("validation MAPE {m:.3}%");
    }
    Ok(())
}

fn predict(common: &Common) -> anyhow::Result<()> {
    let (mut job, base): (PredictJob, _) = load_config(common, None)?;
    resolve_source(&base, &mut job.data);
    let mut model = EnnModel::load(resolve(&base, &job.model))?;
    let spec = model
        .data_spec()
        .cloned()
        .ok_or_else(|| Error::Config("model file carries no data spec".into()))?;
    if let Some(w) = job.window.filter(|&w| w != spec.window_length) {
        return Err(Error::Config(format!(
            "config window {w} does not match the model's window {}",
            spec.window_length
        ))
        .into());
    }
    if let Some(v) = job.variant.filter(|&v| v != spec.variant) {
        return Err(Error::Config(format!(
            "config variant {v} does not match the model's variant {}",
            spec.variant
        ))
        .into());
    }
    let source = job.data.load()?;
    let mut table = filter_working_days(&source, &holidays(&base, &job.holidays, &job.holidays_file)?);
    if let Some(range) = job.range {
        table = range.select(&table);
    }
    let set = build_supervectors(
        &table,
        spec.variant,
        spec.window_length,
        job.stride,
        &spec.norm_stats,
    )?;
    let predicted = model.predict_series(&set)?.into_iter().map(|(_, y)| y).collect();
    let pairs = PredictionPairs::new(set.target_hours.clone(), set.target_mw.clone(), predicted)?;
    create_out(&common.out)?;
    let path = common.out.join("predictions.csv");
    write_predictions(&pairs, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    println!("wrote {} ({} hours)", path.display(), pairs.len());
    Ok(())
}

fn evaluate_cmd(common: &Common) -> anyhow::Result<()> {
    let (job, base): (EvaluateJob, _) = load_config(common, None)?;
    let pairs = load_predictions(resolve(&base, &job.predictions))?;
    let report = evaluate(&pairs, job.histogram_bin_width)?;
    report.write_outputs(&common.out)?;
    let m = &report.metrics;
    println!(
        "MAPE {:.3}%  RMSE {:.3} MW  MAD {:.3} MW over {} hours",
        m.mape, m.rmse, m.mad, m.count
    );
    println!("wrote {}", common.out.join("report.json").display());
    Ok(())
}

type Study = fn(&ExperimentPlan, Execution) -> heatcast_core::Result<StudyReport>;

fn study(args: &StudyArgs, run: Study) -> anyhow::Result<()> {
    let (mut plan, base): (ExperimentPlan, _) = load_config(&args.common, Some("master_seed"))?;
    resolve_source(&base, &mut plan.data);
    plan.holidays_file = plan.holidays_file.map(|p| resolve(&base, &p));
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let report = run(&plan, exec)?;
    for cell in &report.cells {
        for (trial, error) in cell.failures() {
            eprintln!(
                "warning: {} trial {} excluded: {error}",
                cell.key.label(),
                trial.trial
            );
        }
    }
    let written = report.write_outputs(&args.common.out)?;
    for cell in &report.cells {
        if let Some(s) = &cell.summary {
            println!(
                "{:<22} MAPE {:.3}% (var {:.3e})  RMSE {:.3}  n={}",
                cell.key.label(),
                s.mape_mean,
                s.mape_variance,
                s.rmse_mean,
                s.successes
            );
        }
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => generate(c),
        Command::Train(c) => train(c),
        Command::Predict(c) => predict(c),
        Command::Evaluate(c) => evaluate_cmd(c),
        Command::Sweep(a) => study(a, run_sweep),
        Command::DataStudy(a) => study(a, run_data_amount_study),
        Command::FactorStudy(a) => study(a, run_factor_study),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Configuration problems get their own code so scripts can tell them apart.
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
