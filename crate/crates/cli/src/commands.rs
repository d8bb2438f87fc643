use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use hmdlf::baselines::{fit_linear, naive, rmse, seasonal_naive, MetricsRecord};
use hmdlf::data::{export_csv, ingest_csv, synth, window, Dataset, TIMESTAMP_FORMAT};
use hmdlf::gradcheck::{self, Component};
use hmdlf::model::{load_model, save_model, Checkpoint, Model, ModelKind};
use hmdlf::training::{predict, prepare, train, Prepared, Scaler, TrainConfig};
use hmdlf::{Error, Result};

use crate::config::{timestamp, RunConfig};
use crate::plot::{line_chart, Series};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a command produced: a console summary and whether every check it
/// ran passed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: String,
    pub passed: bool,
}

fn ok(summary: String) -> Outcome {
    Outcome { summary, passed: true }
}

fn comments(config: &RunConfig, command: &str) -> Vec<String> {
    vec![format!("hmdlf {VERSION} {command}"), format!("config: {}", config.echo())]
}

fn provenance(config: &RunConfig, command: &str) -> serde_json::Value {
    json!({
        "version": VERSION,
        "command": command,
        "config": serde_json::from_str::<serde_json::Value>(&config.echo()).expect("valid JSON"),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn with_comments(lines: &[String], body: &str) -> String {
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(out, "# {l}");
    }
    out.push_str(body);
    out
}

/// The configured CSV, or synthetic data when no path is set.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    match &config.data.path {
        Some(p) => ingest_csv(p, &config.data.schema, &config.data.modalities),
        None => synth(&config.synth)?.select(&config.data.modalities),
    }
}

fn test_start(config: &RunConfig, data: &Dataset) -> Result<usize> {
    match &config.data.test_start {
        Some(t) => Ok(data.position_of(timestamp(t)?)),
        None => Ok(data.len() - (config.data.test_fraction * data.len() as f64).round() as usize),
    }
}

pub fn cmd_synth(config: &RunConfig) -> Result<Outcome> {
    let data = synth(&config.synth)?;
    let path = synth_path(config);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    export_csv(&data, &path, &comments(config, "synth"))?;
    Ok(ok(format!("wrote {} records to {}", data.len(), path.display())))
}

#[derive(Serialize)]
struct TrainSummary {
    kind: ModelKind,
    modalities: Vec<String>,
    parameters: usize,
    train_samples: usize,
    validation_samples: usize,
    test_samples: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_val_mse: f64,
    stopped_early: bool,
    monitored: String,
    naive_val_mse: Option<f64>,
}

/// Trains one network and returns it with its report. Shared by `train`
/// and `compare`.
fn fit_network(
    config: &RunConfig,
    kind: ModelKind,
    prep: &Prepared,
    train_config: &TrainConfig,
) -> Result<(Model, hmdlf::training::TrainReport)> {
    let model_config = config.model_config(kind, train_config.lookup);
    let names = model_config.modalities.clone();
    let mut model = Model::new(model_config)?;
    let report = train(
        &mut model,
        &prep.train.select(&names)?,
        &prep.validation.select(&names)?,
        train_config,
    )?;
    Ok((model, report))
}

pub fn cmd_train(config: &RunConfig) -> Result<Outcome> {
    let kind = config.model.kind;
    let model_config = config.model_config(kind, config.train.lookup);
    let data = load_dataset(config)?.select(&model_config.modalities)?;
    let split = test_start(config, &data)?;
    let prep = prepare(&data, config.train.lookup, split, config.train.validation_fraction)?;
    let (model, report) = fit_network(config, kind, &prep, &config.train)?;

    let naive_val_mse = (!prep.validation.is_empty()).then(|| {
        let p = naive(&prep.validation);
        p.iter().zip(&prep.validation.targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / p.len() as f64
    });
    let summary = TrainSummary {
        kind,
        modalities: model.modalities().to_vec(),
        parameters: model.param_count(),
        train_samples: prep.train.len(),
        validation_samples: prep.validation.len(),
        test_samples: prep.test.len(),
        epochs_run: report.epochs.len(),
        best_epoch: report.best_epoch,
        best_val_mse: report.best_val_mse,
        stopped_early: report.stopped_early,
        monitored: report.monitored.clone(),
        naive_val_mse,
    };

    let out = &config.output_dir;
    ensure_dir(out)?;
    let mut meta = provenance(config, "train");
    meta["summary"] = serde_json::to_value(&summary).map_err(|e| Error::Data(e.to_string()))?;
    let model_path = out.join("model.bin");
    save_model(
        &Checkpoint {
            model,
            scaler: prep.scaler.clone(),
            metadata: meta.clone(),
        },
        &model_path,
    )?;
    let mut curve = String::from("epoch,train_mse,val_mse\n");
    for e in &report.epochs {
        let _ = writeln!(curve, "{},{},{}", e.epoch, e.train_mse, e.val_mse);
    }
    write_file(&out.join("train_report.csv"), &with_comments(&comments(config, "train"), &curve))?;
    write_json(&out.join("train_summary.json"), &meta)?;
    let mut timing = String::from("# wall-clock seconds per epoch; not reproducible\nepoch,seconds\n");
    for (i, s) in report.epoch_seconds.iter().enumerate() {
        let _ = writeln!(timing, "{},{s:.3}", i + 1);
    }
    write_file(&out.join("timing.csv"), &timing)?;

    let mut text = format!(
        "trained {kind} ({} parameters) on {} windows; best epoch {} of {}, {} MSE {:.6e}",
        summary.parameters,
        summary.train_samples,
        summary.best_epoch,
        summary.epochs_run,
        summary.monitored,
        summary.best_val_mse
    );
    if let Some(n) = naive_val_mse {
        let _ = write!(text, " (naive {n:.6e})");
    }
    let _ = write!(text, "\nmodel written to {}", model_path.display());
    Ok(ok(text))
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<Outcome> {
    let model_path = config
        .evaluate
        .model
        .clone()
        .unwrap_or_else(|| config.output_dir.join("model.bin"));
    let Checkpoint { mut model, scaler, .. } = load_model(&model_path)?;
    let data = load_dataset(config)?.select(model.modalities())?;
    check_scaler(&scaler, model.modalities())?;
    let scaled = scaler.apply(&data)?;
    let all = window(&scaled, model.lookup())?;

    let first = match config.evaluate.split.as_str() {
        "all" => 0,
        _ => test_start(config, &data)?,
    };
    let lo = config.evaluate.start.as_deref().map(timestamp).transpose()?;
    let hi = config.evaluate.end.as_deref().map(timestamp).transpose()?;
    let keep: Vec<usize> = (0..all.len())
        .filter(|&k| all.target_index[k] >= first)
        .filter(|&k| lo.is_none_or(|t| all.timestamps[k] >= t))
        .filter(|&k| hi.is_none_or(|t| all.timestamps[k] <= t))
        .collect();
    if keep.is_empty() {
        return Err(Error::Data("no samples fall in the evaluation range".into()));
    }
    let samples = all.subset(&keep);
    let target = &model.modalities()[0].clone();
    let predicted = scaler.invert_slice(target, &predict(&mut model, &samples, config.train.batch_size)?)?;
    let actual = scaler.invert_slice(target, &samples.targets)?;
    let naive_pred = scaler.invert_slice(target, &naive(&samples))?;
    let data_tag = config
        .data
        .path
        .as_ref()
        .map_or_else(|| format!("synthetic(seed={})", config.synth.seed), |p| p.display().to_string());
    let record = MetricsRecord {
        model: model.kind().to_string(),
        data: data_tag.clone(),
        rmse: rmse(&predicted, &actual)?,
        samples: samples.len(),
    };
    let naive_record = MetricsRecord {
        model: "naive".into(),
        data: data_tag,
        rmse: rmse(&naive_pred, &actual)?,
        samples: samples.len(),
    };

    let out = &config.output_dir;
    ensure_dir(out)?;
    let mut csv = String::from("timestamp,actual,predicted\n");
    for ((t, a), p) in samples.timestamps.iter().zip(&actual).zip(&predicted) {
        let _ = writeln!(csv, "{},{a},{p}", t.format(TIMESTAMP_FORMAT));
    }
    write_file(&out.join("predictions.csv"), &with_comments(&comments(config, "evaluate"), &csv))?;
    let mut meta = provenance(config, "evaluate");
    meta["model_file"] = json!(model_path.display().to_string());
    meta["metrics"] = json!([record, naive_record]);
    write_json(&out.join("metrics.json"), &meta)?;
    if config.evaluate.plot {
        let first_t = samples.timestamps[0].format(TIMESTAMP_FORMAT).to_string();
        let last_t = samples.timestamps[samples.len() - 1].format(TIMESTAMP_FORMAT).to_string();
        let svg = line_chart(
            &format!("{target}: actual vs {} (RMSE {:.3})", record.model, record.rmse),
            (&first_t, &last_t),
            &[
                Series {
                    label: "actual",
                    values: &actual,
                    colour: "#222222",
                },
                Series {
                    label: "predicted",
                    values: &predicted,
                    colour: "#d62728",
                },
            ],
            &comments(config, "evaluate").join("\n"),
        );
        write_file(&out.join("predictions.svg"), &svg)?;
    }
    Ok(ok(format!(
        "{} RMSE {:.4} on {} samples (naive {:.4}); predictions in {}",
        record.model,
        record.rmse,
        record.samples,
        naive_record.rmse,
        out.join("predictions.csv").display()
    )))
}

fn check_scaler(scaler: &Scaler, modalities: &[String]) -> Result<()> {
    let known = scaler.names();
    match modalities.iter().find(|m| !known.contains(&m.as_str())) {
        Some(m) => Err(Error::Data(format!("model file has no scaler range for modality {m:?}"))),
        None => Ok(()),
    }
}

pub fn cmd_gradcheck(config: &RunConfig) -> Result<Outcome> {
    let corrupt = match &config.gradcheck.corrupt {
        Some(name) => Some(
            Component::ALL
                .into_iter()
                .find(|c| c.name() == name)
                .ok_or_else(|| Error::Config(format!("unknown gradcheck component {name:?}")))?,
        ),
        None => None,
    };
    let options = gradcheck::Options {
        seeds: config.gradcheck.seeds.clone(),
        corrupt,
        ..gradcheck::Options::default()
    };
    if options.seeds.is_empty() {
        return Err(Error::Config("gradcheck.seeds must not be empty".into()));
    }
    let rows = gradcheck::run(&options)?;
    let mut table = format!(
        "{:<18} {:>13} {:>8}  status  (h={:e}, threshold {:e}, seeds {:?})\n",
        "component", "max_rel_error", "entries", options.step, options.tolerance, options.seeds
    );
    let mut csv = String::from("component,max_rel_error,entries,passed\n");
    for r in &rows {
        let status = if r.passed { "pass" } else { "FAIL" };
        let _ = writeln!(table, "{:<18} {:>13.3e} {:>8}  {status}", r.component.name(), r.max_rel_error, r.entries);
        let _ = writeln!(csv, "{},{:e},{},{}", r.component.name(), r.max_rel_error, r.entries, r.passed);
    }
    write_file(
        &config.output_dir.join("gradcheck.csv"),
        &with_comments(&comments(config, "gradcheck"), &csv),
    )?;
    Ok(Outcome {
        summary: table.trim_end().to_string(),
        passed: rows.iter().all(|r| r.passed),
    })
}

const ROSTER: [&str; 11] = [
    "naive",
    "seasonal",
    "lr",
    "ridge",
    "rnn",
    "gru",
    "cnn",
    "cnn_gru",
    "cnn_gru_attention",
    "hmdlf",
    "hmdlf_attention",
];

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub model: String,
    pub lookup: usize,
    pub epochs: Option<usize>,
    pub rmse: Option<f64>,
    pub samples: usize,
    pub status: String,
}

fn network_kind(entry: &str) -> Option<ModelKind> {
    match entry {
        "hmdlf_attention" => Some(ModelKind::Hmdlf),
        other => other.parse().ok(),
    }
}

pub fn cmd_compare(config: &RunConfig) -> Result<Outcome> {
    let roster = &config.compare.roster;
    if roster.is_empty() {
        return Err(Error::Config("compare.roster must not be empty".into()));
    }
    if let Some(bad) = roster.iter().find(|r| !ROSTER.contains(&r.as_str())) {
        return Err(Error::Config(format!("unknown roster entry {bad:?}; known: {}", ROSTER.join(", "))));
    }
    let data = load_dataset(config)?;
    let split = test_start(config, &data)?;
    let lookups = if config.compare.lookups.is_empty() {
        vec![config.train.lookup]
    } else {
        config.compare.lookups.clone()
    };
    let epoch_grid = if config.compare.epochs.is_empty() {
        vec![config.train.max_epochs]
    } else {
        config.compare.epochs.clone()
    };
    let period = config.compare.seasonal_period.unwrap_or(7 * data.steps_per_day());
    let target = data.names()[0].clone();

    let mut rows = Vec::new();
    for &lookup in &lookups {
        let prep = prepare(&data, lookup, split, config.train.validation_fraction)?;
        let actual = prep.scaler.invert_slice(&target, &prep.test.targets)?;
        for entry in roster {
            let network = network_kind(entry);
            let settings: Vec<Option<usize>> = if network.is_some() {
                epoch_grid.iter().map(|&e| Some(e)).collect()
            } else {
                vec![None]
            };
            for epochs in settings {
                let result = run_entry(config, entry, network, &prep, lookup, epochs, period, &actual, &target);
                let row = match result {
                    Ok((rmse, samples, note)) => CompareRow {
                        model: entry.clone(),
                        lookup,
                        epochs,
                        rmse: Some(rmse),
                        samples,
                        status: note,
                    },
                    Err(e) => {
                        log::warn!("{entry} (lookup {lookup}) failed: {e}");
                        CompareRow {
                            model: entry.clone(),
                            lookup,
                            epochs,
                            rmse: None,
                            samples: 0,
                            status: if e.is_numerical() {
                                format!("diverged: {e}")
                            } else {
                                format!("failed: {e}")
                            },
                        }
                    }
                };
                log::info!("{} w={} -> {:?}", row.model, row.lookup, row.rmse);
                rows.push(row);
            }
        }
    }

    let out = &config.output_dir;
    ensure_dir(out)?;
    let mut csv = String::from("model,lookup,epochs,rmse,samples,status\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.model,
            r.lookup,
            r.epochs.map_or(String::new(), |e| e.to_string()),
            r.rmse.map_or(String::new(), |v| v.to_string()),
            r.samples,
            r.status.replace(',', ";")
        );
    }
    write_file(&out.join("comparison.csv"), &with_comments(&comments(config, "compare"), &csv))?;
    let table = wide_table(&rows, roster, &lookups, &epoch_grid);
    write_file(
        &out.join("comparison.md"),
        &format!("<!-- hmdlf {VERSION} compare; config: {} -->\n{table}", config.echo()),
    )?;
    let passed = rows.iter().all(|r| r.rmse.is_some_and(f64::is_finite));
    Ok(Outcome {
        summary: table.trim_end().to_string(),
        passed,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_entry(
    config: &RunConfig,
    entry: &str,
    network: Option<ModelKind>,
    prep: &Prepared,
    lookup: usize,
    epochs: Option<usize>,
    period: usize,
    actual: &[f64],
    target: &str,
) -> Result<(f64, usize, String)> {
    let invert = |v: &[f64]| prep.scaler.invert_slice(target, v);
    if let Some(kind) = network {
        let max_epochs = epochs.unwrap_or(config.train.max_epochs);
        let tc = TrainConfig {
            lookup,
            max_epochs,
            patience: config.train.patience.min(max_epochs - 1),
            ..config.train.clone()
        };
        let mut run = config.clone();
        if entry == "hmdlf_attention" {
            run.model.branch.use_attention = true;
        }
        let (mut model, report) = fit_network(&run, kind, prep, &tc)?;
        let test = prep.test.select(model.modalities())?;
        let pred = invert(&predict(&mut model, &test, tc.batch_size)?)?;
        let value = rmse(&pred, actual)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("test RMSE is {value}")));
        }
        return Ok((value, test.len(), format!("ok (best epoch {})", report.best_epoch)));
    }
    match entry {
        "naive" => Ok((rmse(&invert(&naive(&prep.test))?, actual)?, prep.test.len(), "ok".into())),
        "seasonal" => {
            let f = seasonal_naive(prep.scaled.target(), &prep.test, period)?;
            let kept: Vec<f64> = f.positions.iter().map(|&k| actual[k]).collect();
            let note = if f.skipped > 0 {
                format!("ok ({} samples skipped: history shorter than period {period})", f.skipped)
            } else {
                format!("ok (period {period})")
            };
            Ok((rmse(&invert(&f.predictions)?, &kept)?, kept.len(), note))
        }
        "lr" | "ridge" => {
            let lambda = if entry == "lr" { 0.0 } else { config.compare.ridge_lambda };
            let fit = fit_linear(&prep.train, lambda)?;
            let pred = invert(&fit.predict(&prep.test)?)?;
            Ok((rmse(&pred, actual)?, prep.test.len(), format!("ok (lambda {lambda})")))
        }
        other => Err(Error::Config(format!("unknown roster entry {other:?}"))),
    }
}

fn wide_table(rows: &[CompareRow], roster: &[String], lookups: &[usize], epochs: &[usize]) -> String {
    let mut columns: Vec<(usize, Option<usize>)> = Vec::new();
    for &w in lookups {
        if epochs.len() > 1 {
            columns.extend(epochs.iter().map(|&e| (w, Some(e))));
        } else {
            columns.push((w, None));
        }
    }
    let title = |c: &(usize, Option<usize>)| match c.1 {
        Some(e) => format!("w={} e={e}", c.0),
        None => format!("w={}", c.0),
    };
    let mut out = String::from("| model |");
    for c in &columns {
        let _ = write!(out, " {} |", title(c));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(columns.len()));
    out.push('\n');
    for entry in roster {
        let _ = write!(out, "| {entry} |");
        for &(w, e) in &columns {
            let cell = rows
                .iter()
                .find(|r| &r.model == entry && r.lookup == w && (e.is_none() || r.epochs.is_none() || r.epochs == e))
                .map_or("-".to_string(), |r| match r.rmse {
                    Some(v) => format!("{v:.3}"),
                    None => "FAILED".to_string(),
                });
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

/// Default destination of the data written by `synth`.
pub fn synth_path(config: &RunConfig) -> PathBuf {
    config
        .data
        .path
        .clone()
        .unwrap_or_else(|| config.output_dir.join("synthetic.csv"))
}
