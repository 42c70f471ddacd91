//! Command-line front end.
//!
//! Every option can come from a `key = value` file (`--config`), from a
//! previous run's `manifest.json`, or from a flag; flags win over the file and
//! the file wins over the defaults. Each run writes the fully resolved
//! configuration into its manifest, so passing that manifest back through
//! `--config` repeats the run.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::checkpoint::{self, write_atomic};
use crate::data::{
    load_delimited, load_features, make_synthetic, sniff_header, Delimiter, NoiseParams,
    RegressionDataset, Split, SyntheticKind, SyntheticSpec, TargetColumn,
};
use crate::error::Error;
use crate::eval::{benchmark, component_sweep, evaluate_model, MetricReport, TrialPlan};
use crate::net::{Activation, NetworkSpec};
use crate::trainer::{fit, FittedModel, TrainConfig};
use crate::verify::{self, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

const AFTER_HELP: &str = "\
Exit codes: 0 ok, 1 configuration error, 2 data or I/O error, 3 numeric divergence, 4 verification failure.

Options may also be given in a --config file of `key = value` lines (keys are the long flag
names without dashes, `#` starts a comment), or by passing a previous run's manifest.json.
Flags override the file.

Outputs (in --out): manifest.json always; train writes checkpoint.json and train_log.jsonl
(one JSON record per epoch: epoch, train_loss, val_loss, mixing); evaluate writes metrics.json;
predict writes predictions.csv with columns prediction, aleatoric, aleatoric_1..aleatoric_K,
epistemic; sweep writes sweep.csv (k, rmse_mean, rmse_std, nll_mean, nll_std, n_ok, n_failed)
and cells.csv (k, trial, seed, rmse, nll, n_test, epochs, error); benchmark writes trials.csv
(trial, seed, rmse, nll, n_test, epochs, error) and summary.csv (rmse_mean, rmse_std, nll_mean,
nll_std, n_ok, n_failed). Numbers in text reports carry 9 significant digits.";

#[derive(Debug, Parser)]
#[command(
    name = "mogel",
    version,
    about = "Mixture-of-Gaussian deep evidential regression",
    after_help = AFTER_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write a checkpoint, a training log and a manifest.
    Train(TrainCmd),
    /// Score a checkpoint on a dataset (RMSE and NLL in original units).
    Evaluate(EvaluateCmd),
    /// Prediction, aleatoric and epistemic uncertainty for new inputs.
    Predict(PredictCmd),
    /// Compare numbers of mixture components over repeated splits.
    Sweep(SweepCmd),
    /// Repeated random-split benchmark reporting mean and std of RMSE and NLL.
    Benchmark(BenchmarkCmd),
    /// Check the closed forms against quadrature, Monte Carlo, the
    /// single-Gaussian reference and finite differences.
    Verify(VerifyCmd),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// `key = value` file or a previous manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: mogel-out/<command>].
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Delimited numeric file; when absent a synthetic dataset is generated.
    #[arg(long)]
    data: Option<String>,
    /// Target column: `last`, a zero-based index or a header name [default: last].
    #[arg(long)]
    target: Option<String>,
    /// auto, comma or whitespace [default: auto].
    #[arg(long)]
    delimiter: Option<String>,
    /// true, false or auto (a non-numeric first row) [default: auto].
    #[arg(long)]
    header: Option<String>,
    /// Synthetic generator: linear, cubic or heteroscedastic_bimodal [default: linear].
    #[arg(long)]
    synthetic: Option<String>,
    /// Synthetic sample count [default: 500].
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated noise sigmas [default: per generator].
    #[arg(long)]
    noise: Option<String>,
    /// Probabilities of the noise sigmas [default: uniform].
    #[arg(long)]
    noise_mix: Option<String>,
    /// Input range `lo,hi` [default: per generator].
    #[arg(long, allow_hyphen_values = true)]
    x_range: Option<String>,
    /// Seed for the synthetic generator [default: the run seed].
    #[arg(long)]
    data_seed: Option<String>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Number of mixture components K [default: 1].
    #[arg(long, short = 'k')]
    components: Option<String>,
    /// Hidden layer widths, comma-separated [default: 64,64].
    #[arg(long)]
    hidden: Option<String>,
    /// relu or tanh [default: relu].
    #[arg(long)]
    activation: Option<String>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Evidence penalty weight [default: 0.01].
    #[arg(long)]
    lambda: Option<String>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<String>,
    /// [default: 64]
    #[arg(long)]
    batch_size: Option<String>,
    /// Maximum epochs [default: 200].
    #[arg(long)]
    epochs: Option<String>,
    /// Epochs without validation improvement before stopping [default: 20].
    #[arg(long)]
    patience: Option<String>,
    /// Classic EM: hold posterior responsibilities fixed in each step [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    freeze_responsibilities: Option<String>,
    /// Seed for initialisation, shuffling and splits [default: 0].
    #[arg(long)]
    seed: Option<String>,
    /// train,val,test fractions [default: 0.8,0.1,0.1; benchmark 0.81,0.09,0.1].
    #[arg(long)]
    split: Option<String>,
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Debug, Args)]
struct EvaluateCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<String>,
    #[command(flatten)]
    data: DataArgs,
    /// all, train, val or test; the last three re-create the split from --split and --seed [default: all].
    #[arg(long)]
    rows: Option<String>,
    /// [default: 0.8,0.1,0.1]
    #[arg(long)]
    split: Option<String>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Debug, Args)]
struct PredictCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<String>,
    /// Delimited file of input features.
    #[arg(long)]
    input: Option<String>,
    /// auto, comma or whitespace [default: auto].
    #[arg(long)]
    delimiter: Option<String>,
    /// true, false or auto [default: auto].
    #[arg(long)]
    header: Option<String>,
    /// Column to ignore, e.g. a target present in the file [default: none].
    #[arg(long)]
    drop: Option<String>,
}

#[derive(Debug, Args)]
struct SweepCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Component counts to compare [default: 1,2,4].
    #[arg(long)]
    k: Option<String>,
    /// Random splits per component count [default: 5].
    #[arg(long)]
    trials: Option<String>,
}

#[derive(Debug, Args)]
struct BenchmarkCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Random splits; trial t uses seed + t [default: 20].
    #[arg(long)]
    trials: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyCmd {
    #[command(flatten)]
    common: CommonArgs,
    /// [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// Bias added to every per-component loss, to confirm the checks catch it [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    perturb_loss: Option<String>,
    /// Monte Carlo draws per parameter set [default: 1000000].
    #[arg(long)]
    mc_samples: Option<String>,
    /// Random parameter sets for the quadrature and Monte Carlo checks [default: 30].
    #[arg(long)]
    param_sets: Option<String>,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Parse { .. } | Error::Schema(_) | Error::Dimension { .. } => {
            EXIT_DATA
        }
        Error::Divergence { .. } | Error::Numeric { .. } => EXIT_DIVERGENCE,
        Error::Coverage { .. } => EXIT_VERIFY,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Reports go to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Predict(c) => cmd_predict(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Benchmark(c) => cmd_benchmark(c),
        Command::Verify(c) => cmd_verify(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Formats with 9 significant digits, plain decimal where reasonable.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

// ---------------------------------------------------------------------------
// Settings

struct Key {
    name: &'static str,
    default: Option<&'static str>,
}

const fn key(name: &'static str, default: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
    }
}

const fn opt(name: &'static str) -> Key {
    Key {
        name,
        default: None,
    }
}

const DATA_KEYS: &[Key] = &[
    opt("data"),
    key("target", "last"),
    key("delimiter", "auto"),
    key("header", "auto"),
    key("synthetic", "linear"),
    key("n", "500"),
    opt("noise"),
    opt("noise-mix"),
    opt("x-range"),
    opt("data-seed"),
];

const MODEL_KEYS: &[Key] = &[
    key("components", "1"),
    key("hidden", "64,64"),
    key("activation", "relu"),
];

const FIT_KEYS: &[Key] = &[
    key("lambda", "0.01"),
    key("lr", "0.001"),
    key("batch-size", "64"),
    key("epochs", "200"),
    key("patience", "20"),
    key("freeze-responsibilities", "false"),
    key("seed", "0"),
    key("split", "0.8,0.1,0.1"),
];

/// The resolved string value of every option a command accepts.
struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn resolve(
        command: &str,
        groups: &[&[Key]],
        overrides: &[(&str, &str)],
        common: &CommonArgs,
        flags: Vec<(&'static str, Option<String>)>,
    ) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for k in groups.iter().flat_map(|g| g.iter()) {
            if let Some(d) = k.default {
                values.insert(k.name.to_string(), d.to_string());
            }
        }
        for (k, v) in overrides {
            values.insert(k.to_string(), v.to_string());
        }
        values.insert("out".into(), format!("mogel-out/{command}"));
        let known = |name: &str| name == "out" || groups.iter().flat_map(|g| g.iter()).any(|k| k.name == name);

        if let Some(path) = &common.config {
            for (k, v) in read_config(path)? {
                if !known(&k) {
                    return Err(CliError::config(format!(
                        "{}: unknown option {k:?} for `{command}`",
                        path.display()
                    )));
                }
                values.insert(k, v);
            }
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v);
            }
        }
        if let Some(out) = &common.out {
            values.insert("out".into(), out.clone());
        }
        Ok(Self { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> CliResult<&str> {
        self.get(key)
            .ok_or_else(|| CliError::config(format!("missing required option --{key}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.trim()
            .parse()
            .map_err(|e| CliError::config(format!("--{key} {raw:?}: {e}")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> CliResult<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| CliError::config(format!("--{key} {raw:?}: {e}")))
            })
            .collect()
    }

    fn bool(&self, key: &str) -> CliResult<bool> {
        match self.require(key)?.trim() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::config(format!("--{key} expects true or false, got {other:?}"))),
        }
    }

    fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = PathBuf::from(self.require("out")?);
        fs::create_dir_all(&dir).map_err(|e| CliError::from(Error::io(&dir, e)))?;
        Ok(dir)
    }

    fn to_json(&self) -> Value {
        json!(self.values)
    }
}

fn read_config(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::io(path, e)))?;
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let map = v
            .get("config")
            .and_then(Value::as_object)
            .ok_or_else(|| CliError::config(format!("{}: no \"config\" object", path.display())))?;
        return map
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => Ok((k.clone(), s.clone())),
                other => Ok((k.clone(), other.to_string())),
            })
            .collect();
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::config(format!("{}:{}: expected `key = value`", path.display(), i + 1))
        })?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn data_flags(d: &DataArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("data", d.data.clone()),
        ("target", d.target.clone()),
        ("delimiter", d.delimiter.clone()),
        ("header", d.header.clone()),
        ("synthetic", d.synthetic.clone()),
        ("n", d.n.clone()),
        ("noise", d.noise.clone()),
        ("noise-mix", d.noise_mix.clone()),
        ("x-range", d.x_range.clone()),
        ("data-seed", d.data_seed.clone()),
    ]
}

fn model_flags(m: &ModelArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("components", m.components.clone()),
        ("hidden", m.hidden.clone()),
        ("activation", m.activation.clone()),
    ]
}

fn fit_flags(f: &FitArgs) -> Vec<(&'static str, Option<String>)> {
    vec![
        ("lambda", f.lambda.clone()),
        ("lr", f.lr.clone()),
        ("batch-size", f.batch_size.clone()),
        ("epochs", f.epochs.clone()),
        ("patience", f.patience.clone()),
        ("freeze-responsibilities", f.freeze_responsibilities.clone()),
        ("seed", f.seed.clone()),
        ("split", f.split.clone()),
    ]
}

// ---------------------------------------------------------------------------
// Shared builders

fn header_flag(s: &Settings, path: &Path, delimiter: Delimiter) -> CliResult<bool> {
    match s.require("header")?.trim() {
        "auto" => Ok(sniff_header(path, delimiter)?),
        _ => s.bool("header"),
    }
}

/// Loads the file named by `data`, or generates the synthetic dataset. The
/// resolved generator settings are written back so the manifest is complete.
fn build_dataset(s: &mut Settings) -> CliResult<RegressionDataset> {
    if let Some(path) = s.get("data").map(PathBuf::from) {
        let target: TargetColumn = s.parse("target")?;
        let delimiter: Delimiter = s.parse("delimiter")?;
        let header = header_flag(s, &path, delimiter)?;
        return Ok(load_delimited(&path, &target, delimiter, header)?);
    }
    let kind: SyntheticKind = s.parse("synthetic")?;
    let (default_noise, default_range) = kind.defaults();
    let sigmas: Vec<f64> = match s.get("noise") {
        Some(_) => s.list("noise")?,
        None => default_noise.sigmas.clone(),
    };
    let mix: Vec<f64> = match s.get("noise-mix") {
        Some(_) => s.list("noise-mix")?,
        None if sigmas.len() == default_noise.sigmas.len() && s.get("noise").is_none() => {
            default_noise.mix.clone()
        }
        None => vec![1.0 / sigmas.len() as f64; sigmas.len()],
    };
    let x_range = match s.get("x-range") {
        Some(_) => {
            let r: Vec<f64> = s.list("x-range")?;
            if r.len() != 2 {
                return Err(CliError::config("--x-range expects `lo,hi`"));
            }
            (r[0], r[1])
        }
        None => default_range,
    };
    let seed: u64 = match s.get("data-seed") {
        Some(_) => s.parse("data-seed")?,
        None => s.parse("seed").unwrap_or(0),
    };
    let spec = SyntheticSpec {
        kind,
        n: s.parse("n")?,
        noise: NoiseParams { sigmas, mix },
        x_range,
        seed,
    };
    s.set("noise", join(&spec.noise.sigmas));
    s.set("noise-mix", join(&spec.noise.mix));
    s.set("x-range", join(&[x_range.0, x_range.1]));
    s.set("data-seed", seed.to_string());
    Ok(make_synthetic(&spec)?)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn fractions(s: &Settings) -> CliResult<[f64; 3]> {
    let f: Vec<f64> = s.list("split")?;
    <[f64; 3]>::try_from(f).map_err(|_| CliError::config("--split expects three fractions"))
}

fn network_template(s: &Settings) -> CliResult<NetworkSpec> {
    let hidden: Vec<usize> = match s.require("hidden")?.trim() {
        "" | "none" => Vec::new(),
        _ => s.list("hidden")?,
    };
    let activation: Activation = s.parse("activation")?;
    Ok(NetworkSpec {
        input_dim: 1,
        hidden_layers: hidden,
        activation,
        n_components: s.parse("components")?,
    })
}

fn train_config(s: &Settings) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        n_components: s.parse("components")?,
        lambda: s.parse("lambda")?,
        learning_rate: s.parse("lr")?,
        batch_size: s.parse("batch-size")?,
        max_epochs: s.parse("epochs")?,
        patience: s.parse("patience")?,
        seed: s.parse("seed")?,
        freeze_responsibilities: s.bool("freeze-responsibilities")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn manifest(command: &str, s: &Settings, extra: Value) -> Value {
    let mut m = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": s.to_json(),
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut m, extra) {
        base.extend(more);
    }
    m
}

fn metric_json(m: &MetricReport) -> Value {
    serde_json::to_value(m).expect("metrics serialize")
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_train(c: &TrainCmd) -> CliResult<i32> {
    let mut flags = data_flags(&c.data);
    flags.extend(model_flags(&c.model));
    flags.extend(fit_flags(&c.fit));
    let mut s = Settings::resolve("train", &[DATA_KEYS, MODEL_KEYS, FIT_KEYS], &[], &c.common, flags)?;
    let template = network_template(&s)?;
    let cfg = train_config(&s)?;
    let data = build_dataset(&mut s)?.split(fractions(&s)?, cfg.seed)?;
    let out = s.out_dir()?;

    let (model, report) = match fit(&template, &data, &cfg) {
        Ok(v) => v,
        Err(Error::Divergence {
            epoch,
            detail,
            last_finite,
        }) => {
            let mut extra = json!({
                "dataset": data.manifest(),
                "status": "diverged",
                "error": format!("epoch {epoch}: {detail}"),
            });
            if let (Some(w), Some(st)) = (last_finite, data.standardization()) {
                let model = FittedModel {
                    weights: *w,
                    standardization: st.clone(),
                };
                checkpoint::save(&model, out.join("checkpoint_last_finite.json"))?;
                extra["last_finite_checkpoint"] = json!("checkpoint_last_finite.json");
            }
            write_json(&out.join("manifest.json"), &manifest("train", &s, extra))?;
            return Err(CliError {
                code: EXIT_DIVERGENCE,
                message: format!("training diverged at epoch {epoch}: {detail}"),
            });
        }
        Err(e) => return Err(e.into()),
    };

    checkpoint::save(&model, out.join("checkpoint.json"))?;
    write_atomic(out.join("train_log.jsonl"), report.log_lines().as_bytes())?;
    let mut metrics = serde_json::Map::new();
    for split in [Split::Val, Split::Test] {
        let (x, y) = data.raw(split)?;
        if !y.is_empty() {
            let m = evaluate_model(&model, &x, &y, 0)?;
            println!(
                "{:<5} rmse {}  nll {}  (n = {})",
                split.name(),
                fmt_sig(m.rmse),
                fmt_sig(m.nll),
                m.n_test
            );
            metrics.insert(split.name().into(), metric_json(&m));
        }
    }
    let extra = json!({
        "dataset": data.manifest(),
        "status": "ok",
        "checkpoint": "checkpoint.json",
        "log": "train_log.jsonl",
        "results": {
            "epochs_run": report.epochs_run,
            "best_epoch": report.best_epoch,
            "best_val_loss": report.best_val_loss,
            "early_stopped": report.early_stopped,
            "skipped_batches": report.skipped_batches,
            "mixing": report.mixing,
            "metrics": metrics,
        },
    });
    write_json(&out.join("manifest.json"), &manifest("train", &s, extra))?;
    eprintln!(
        "trained {} epochs (best {}, {:.1}s); mixing [{}]; wrote {}",
        report.epochs_run,
        report.best_epoch,
        report.wall_time_secs,
        report.mixing.iter().map(|v| fmt_sig(*v)).collect::<Vec<_>>().join(", "),
        out.display()
    );
    Ok(EXIT_OK)
}

fn load_checkpoint(s: &Settings) -> CliResult<FittedModel> {
    let path = s.get("checkpoint").ok_or_else(|| CliError {
        code: EXIT_DATA,
        message: "a checkpoint is required (--checkpoint)".into(),
    })?;
    Ok(checkpoint::load(path)?)
}

fn cmd_evaluate(c: &EvaluateCmd) -> CliResult<i32> {
    let mut flags = data_flags(&c.data);
    flags.extend([
        ("checkpoint", c.checkpoint.clone()),
        ("rows", c.rows.clone()),
        ("split", c.split.clone()),
        ("seed", c.seed.clone()),
    ]);
    let keys: &[Key] = &[
        opt("checkpoint"),
        key("rows", "all"),
        key("split", "0.8,0.1,0.1"),
        key("seed", "0"),
    ];
    let mut s = Settings::resolve("evaluate", &[DATA_KEYS, keys], &[], &c.common, flags)?;
    let model = load_checkpoint(&s)?;
    let data = build_dataset(&mut s)?;
    let (x, y, data) = match s.require("rows")? {
        "all" => (data.features().clone(), data.targets().clone(), data),
        which => {
            let split = match which {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(CliError::config(format!(
                        "--rows expects all, train, val or test, got {other:?}"
                    )))
                }
            };
            let data = data.split(fractions(&s)?, s.parse("seed")?)?;
            let (x, y) = data.raw(split)?;
            (x, y, data)
        }
    };
    if y.is_empty() {
        return Err(Error::Schema("no rows to evaluate".into()).into());
    }
    let m = evaluate_model(&model, &x, &y, 0)?;
    let out = s.out_dir()?;
    write_json(&out.join("metrics.json"), &metric_json(&m))?;
    let extra = json!({ "dataset": data.manifest(), "results": metric_json(&m) });
    write_json(&out.join("manifest.json"), &manifest("evaluate", &s, extra))?;
    println!("rmse {}  nll {}  (n = {})", fmt_sig(m.rmse), fmt_sig(m.nll), m.n_test);
    Ok(EXIT_OK)
}

fn cmd_predict(c: &PredictCmd) -> CliResult<i32> {
    let flags = vec![
        ("checkpoint", c.checkpoint.clone()),
        ("input", c.input.clone()),
        ("delimiter", c.delimiter.clone()),
        ("header", c.header.clone()),
        ("drop", c.drop.clone()),
    ];
    let keys: &[Key] = &[
        opt("checkpoint"),
        opt("input"),
        key("delimiter", "auto"),
        key("header", "auto"),
        opt("drop"),
    ];
    let s = Settings::resolve("predict", &[keys], &[], &c.common, flags)?;
    let input = PathBuf::from(s.require("input")?);
    let model = load_checkpoint(&s)?;
    let delimiter: Delimiter = s.parse("delimiter")?;
    let header = header_flag(&s, &input, delimiter)?;
    let drop: Option<TargetColumn> = s.get("drop").map(|_| s.parse("drop")).transpose()?;
    let (x, _) = load_features(&input, delimiter, header, drop.as_ref())?;
    let d = model.weights.spec().input_dim;
    if x.ncols() != d {
        return Err(Error::Schema(format!(
            "{} has {} feature columns, the checkpoint expects {d}",
            input.display(),
            x.ncols()
        ))
        .into());
    }
    let report = model.predict(&x)?;
    let k = report.n_components();
    let mut text = String::from("prediction,aleatoric");
    for j in 1..=k {
        let _ = write!(text, ",aleatoric_{j}");
    }
    text.push_str(",epistemic\n");
    for i in 0..report.len() {
        text.push_str(&fmt_sig(report.prediction[i]));
        text.push(',');
        text.push_str(&fmt_sig(report.aleatoric_total[i]));
        for a in &report.aleatoric[i] {
            text.push(',');
            text.push_str(&fmt_sig(*a));
        }
        text.push(',');
        text.push_str(&fmt_sig(report.epistemic[i]));
        text.push('\n');
    }
    let out = s.out_dir()?;
    write_atomic(out.join("predictions.csv"), text.as_bytes())?;
    let extra = json!({
        "n_rows": report.len(),
        "n_components": k,
        "mixing": report.mixing,
        "predictions": "predictions.csv",
    });
    write_json(&out.join("manifest.json"), &manifest("predict", &s, extra))?;
    eprintln!(
        "{} rows; mixing [{}]; wrote {}",
        report.len(),
        report.mixing.iter().map(|v| fmt_sig(*v)).collect::<Vec<_>>().join(", "),
        out.join("predictions.csv").display()
    );
    Ok(EXIT_OK)
}

fn cmd_sweep(c: &SweepCmd) -> CliResult<i32> {
    let mut flags = data_flags(&c.data);
    flags.extend(model_flags(&c.model));
    flags.extend(fit_flags(&c.fit));
    flags.extend([("k", c.k.clone()), ("trials", c.trials.clone())]);
    let keys: &[Key] = &[key("k", "1,2,4"), key("trials", "5")];
    let mut s = Settings::resolve(
        "sweep",
        &[DATA_KEYS, MODEL_KEYS, FIT_KEYS, keys],
        &[],
        &c.common,
        flags,
    )?;
    let template = network_template(&s)?;
    let cfg = train_config(&s)?;
    let ks: Vec<usize> = s.list("k")?;
    let plan = TrialPlan {
        n_trials: s.parse("trials")?,
        base_seed: cfg.seed,
        fractions: fractions(&s)?,
    };
    let data = build_dataset(&mut s)?;
    let report = component_sweep(&data, &template, &cfg, &ks, &plan)?;

    let mut rows = String::from("k,rmse_mean,rmse_std,nll_mean,nll_std,n_ok,n_failed\n");
    for r in &report.rows {
        let a = &r.aggregate;
        let _ = writeln!(
            rows,
            "{},{},{},{},{},{},{}",
            r.k,
            fmt_sig(a.rmse_mean),
            fmt_sig(a.rmse_std),
            fmt_sig(a.nll_mean),
            fmt_sig(a.nll_std),
            a.n_ok,
            a.n_failed
        );
    }
    let mut cells = String::from("k,trial,seed,rmse,nll,n_test,epochs,error\n");
    for c in &report.cells {
        let _ = writeln!(
            cells,
            "{},{},{},{},{},{},{},{}",
            c.n_components,
            c.trial_id,
            c.seed,
            csv_cell(c.metrics.as_ref().map(|m| m.rmse)),
            csv_cell(c.metrics.as_ref().map(|m| m.nll)),
            c.metrics.as_ref().map(|m| m.n_test.to_string()).unwrap_or_default(),
            c.epochs_run.map(|e| e.to_string()).unwrap_or_default(),
            csv_text(c.error.as_deref().unwrap_or(""))
        );
        if let Some(e) = &c.error {
            eprintln!("warning: k={} trial {} failed: {e}", c.n_components, c.trial_id);
        }
    }
    let out = s.out_dir()?;
    write_atomic(out.join("sweep.csv"), rows.as_bytes())?;
    write_atomic(out.join("cells.csv"), cells.as_bytes())?;
    let extra = json!({
        "dataset": data.manifest(),
        "results": {
            "best_k": report.best_k,
            "best_k_per_trial": report.best_k_per_trial(),
            "rows": report.rows,
        },
    });
    write_json(&out.join("manifest.json"), &manifest("sweep", &s, extra))?;
    print!("{rows}");
    match report.best_k {
        Some(k) => println!("argmin-NLL k = {k}"),
        None => eprintln!("warning: every sweep cell failed"),
    }
    Ok(EXIT_OK)
}

fn cmd_benchmark(c: &BenchmarkCmd) -> CliResult<i32> {
    let mut flags = data_flags(&c.data);
    flags.extend(model_flags(&c.model));
    flags.extend(fit_flags(&c.fit));
    flags.push(("trials", c.trials.clone()));
    let keys: &[Key] = &[key("trials", "20")];
    let mut s = Settings::resolve(
        "benchmark",
        &[DATA_KEYS, MODEL_KEYS, FIT_KEYS, keys],
        &[("split", "0.81,0.09,0.1")],
        &c.common,
        flags,
    )?;
    let template = network_template(&s)?;
    let cfg = train_config(&s)?;
    let plan = TrialPlan {
        n_trials: s.parse("trials")?,
        base_seed: cfg.seed,
        fractions: fractions(&s)?,
    };
    let data = build_dataset(&mut s)?;
    let report = benchmark(&data, &template, &cfg, &plan)?;

    let mut trials = String::from("trial,seed,rmse,nll,n_test,epochs,error\n");
    for t in &report.trials {
        let _ = writeln!(
            trials,
            "{},{},{},{},{},{},{}",
            t.trial_id,
            t.seed,
            csv_cell(t.metrics.as_ref().map(|m| m.rmse)),
            csv_cell(t.metrics.as_ref().map(|m| m.nll)),
            t.metrics.as_ref().map(|m| m.n_test.to_string()).unwrap_or_default(),
            t.epochs_run.map(|e| e.to_string()).unwrap_or_default(),
            csv_text(t.error.as_deref().unwrap_or(""))
        );
    }
    let a = &report.aggregate;
    let summary = format!(
        "rmse_mean,rmse_std,nll_mean,nll_std,n_ok,n_failed\n{},{},{},{},{},{}\n",
        fmt_sig(a.rmse_mean),
        fmt_sig(a.rmse_std),
        fmt_sig(a.nll_mean),
        fmt_sig(a.nll_std),
        a.n_ok,
        a.n_failed
    );
    let out = s.out_dir()?;
    write_atomic(out.join("trials.csv"), trials.as_bytes())?;
    write_atomic(out.join("summary.csv"), summary.as_bytes())?;
    let extra = json!({
        "dataset": data.manifest(),
        "results": {
            "aggregate": a,
            "trials": report.trials,
            "warnings": report.warnings,
        },
    });
    write_json(&out.join("manifest.json"), &manifest("benchmark", &s, extra))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if a.n_ok == 0 {
        return Err(CliError {
            code: EXIT_DIVERGENCE,
            message: "every benchmark trial failed".into(),
        });
    }
    println!(
        "rmse {} +/- {}  nll {} +/- {}  ({} of {} trials)",
        fmt_sig(a.rmse_mean),
        fmt_sig(a.rmse_std),
        fmt_sig(a.nll_mean),
        fmt_sig(a.nll_std),
        a.n_ok,
        plan.n_trials
    );
    Ok(EXIT_OK)
}

fn cmd_verify(c: &VerifyCmd) -> CliResult<i32> {
    let flags = vec![
        ("seed", c.seed.clone()),
        ("perturb-loss", c.perturb_loss.clone()),
        ("mc-samples", c.mc_samples.clone()),
        ("param-sets", c.param_sets.clone()),
    ];
    let keys: &[Key] = &[
        key("seed", "0"),
        key("perturb-loss", "0"),
        key("mc-samples", "1000000"),
        key("param-sets", "30"),
    ];
    let s = Settings::resolve("verify", &[keys], &[], &c.common, flags)?;
    let opts = VerifyOptions {
        seed: s.parse("seed")?,
        perturb_loss: s.parse("perturb-loss")?,
        mc_samples: s.parse("mc-samples")?,
        n_param_sets: s.parse("param-sets")?,
        ..VerifyOptions::default()
    };
    if !opts.perturb_loss.is_finite() {
        return Err(CliError::config("--perturb-loss must be finite"));
    }
    let checks: [fn(&VerifyOptions) -> crate::Result<verify::CheckResult>; 5] = [
        verify::check_marginal_quadrature,
        verify::check_loss_identity,
        verify::check_single_component,
        verify::check_mc_moments,
        verify::check_gradients,
    ];
    println!("{}", verify::table_header());
    let mut results = Vec::new();
    for check in checks {
        let r = check(&opts)?;
        println!("{r}");
        results.push(r);
    }
    let out = s.out_dir()?;
    let first_failure = results.iter().find(|r| !r.passed).map(|r| r.name);
    let extra = json!({
        "results": results,
        "passed": first_failure.is_none(),
    });
    write_json(&out.join("manifest.json"), &manifest("verify", &s, extra))?;
    match first_failure {
        None => {
            println!("all checks passed");
            Ok(EXIT_OK)
        }
        Some(name) => Err(CliError {
            code: EXIT_VERIFY,
            message: format!("verification failed: {name}"),
        }),
    }
}
