//! `rdcal`: run calibration studies, emit plot data, inspect a configured system.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rdcal::discretize::energy_length;
use rdcal::experiments::{
    histogram, read_sweep_cells, read_trial_records, run_study, sort_by_uncalibrated_rmse, summarize, write_records_csv,
    ExperimentConfig, Study, StudyContext, StudyOutput, SweepCell, TrialRecord,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const TRIALS_FILE: &str = "trials.csv";
const TIMINGS_FILE: &str = "timings.csv";
const SWEEP_FILE: &str = "sweep.csv";
const SUMMARY_FILE: &str = "summary.json";
const RESPONSES_FILE: &str = "impulse_responses.csv";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "rdcal", version, about = "Random demodulator filter calibration studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a study and write CSV, JSON summary and manifest to --out.
    Run {
        #[arg(long, required_unless_present = "replay")]
        config: Option<PathBuf>,
        /// Re-run exactly what an earlier manifest describes.
        #[arg(long, conflicts_with_all = ["config", "study", "seed", "trials"])]
        replay: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        study: Option<StudyArg>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Turn results into plot-ready data files.
    Plot {
        /// A run directory or a results CSV.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum)]
        figure: Figure,
        /// Output file; `plot-<figure>.csv` next to the results when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Print the resolved system for a config.
    ShowSystem {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Perturbation,
    Calibration,
    MqSweep,
    Benchmark,
}

impl From<StudyArg> for Study {
    fn from(s: StudyArg) -> Self {
        match s {
            StudyArg::Perturbation => Study::Perturbation,
            StudyArg::Calibration => Study::Calibration,
            StudyArg::MqSweep => Study::MqSweep,
            StudyArg::Benchmark => Study::Benchmark,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Figure {
    ImpulseResponses,
    SnrHistogram,
    RmseHistogram,
    MqSweep,
    Benchmark,
}

impl Figure {
    fn id(self) -> &'static str {
        match self {
            Figure::ImpulseResponses => "impulse-responses",
            Figure::SnrHistogram => "snr-histogram",
            Figure::RmseHistogram => "rmse-histogram",
            Figure::MqSweep => "mq-sweep",
            Figure::Benchmark => "benchmark",
        }
    }

    fn source(self) -> &'static str {
        match self {
            Figure::ImpulseResponses => RESPONSES_FILE,
            Figure::MqSweep => SWEEP_FILE,
            _ => TRIALS_FILE,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    tool_version: String,
    study: Study,
    master_seed: u64,
    trials: usize,
    /// SHA-256 of the resolved config as JSON with sorted keys.
    config_sha256: String,
    config: ExperimentConfig,
    started_unix_s: f64,
    finished_unix_s: f64,
    outputs: Vec<String>,
    failed_trials: usize,
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(e.into()))
}

/// A run finished and wrote its results, but some trials failed.
#[derive(Debug)]
struct PartialFailure(usize);

impl std::fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} trial(s) failed; see the error column", self.0)
    }
}

impl std::error::Error for PartialFailure {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Run { config, replay, out, study, seed, trials } => cmd_run(config, replay, &out, study, seed, trials),
        Command::Plot { results, figure, out, bins } => cmd_plot(&results, figure, out, bins),
        Command::ShowSystem { config } => cmd_show_system(&config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RD_CALIB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| config_error(anyhow::anyhow!("RD_CALIB_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(config_error(anyhow::anyhow!("RD_CALIB_THREADS must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(config_error)?;
    ExperimentConfig::from_json(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(config_error)
}

/// Hash of the config serialized with sorted keys, so key order in the
/// source file does not matter.
fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let value = serde_json::to_value(cfg)?;
    Ok(hex::encode(Sha256::digest(canonical_json(&value).as_bytes())))
}

fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

#[derive(Serialize)]
struct TimingRow {
    trial: usize,
    time_setup_s: Option<f64>,
    time_mbc_s: Option<f64>,
    time_dftti_s: Option<f64>,
    time_reconstruction_s: Option<f64>,
}

fn cmd_run(
    config: Option<PathBuf>,
    replay: Option<PathBuf>,
    out: &Path,
    study: Option<StudyArg>,
    seed: Option<u64>,
    trials: Option<usize>,
) -> Result<()> {
    let (cfg, study) = match (config, replay) {
        (_, Some(manifest)) => {
            let text = fs::read_to_string(&manifest)
                .with_context(|| format!("reading manifest {}", manifest.display()))
                .map_err(config_error)?;
            let m: RunManifest = serde_json::from_str(&text)
                .with_context(|| format!("invalid manifest {}", manifest.display()))
                .map_err(config_error)?;
            m.config.validate().map_err(config_error)?;
            (m.config, m.study)
        }
        (Some(path), None) => {
            let mut cfg = load_config(&path)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            cfg.validate().map_err(config_error)?;
            (cfg, study.map(Study::from).unwrap_or(Study::Calibration))
        }
        (None, None) => return Err(config_error(anyhow::anyhow!("--config or --replay is required"))),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let started = now_unix();
    let hash = config_hash(&cfg)?;
    log::info!("running {study} study, {} trials, seed {}", cfg.trials, cfg.master_seed);
    let mut outputs = Vec::new();
    let mut failed = 0;
    match run_study(&cfg, study)? {
        StudyOutput::Trials(records) => {
            failed = records.iter().filter(|r| r.failed()).count();
            let timings: Vec<TimingRow> = records
                .iter()
                .map(|r| TimingRow {
                    trial: r.trial,
                    time_setup_s: r.time_setup_s,
                    time_mbc_s: r.time_mbc_s,
                    time_dftti_s: r.time_dftti_s,
                    time_reconstruction_s: r.time_reconstruction_s,
                })
                .collect();
            let stable: Vec<TrialRecord> = records
                .iter()
                .cloned()
                .map(|mut r| {
                    r.time_setup_s = None;
                    r.time_mbc_s = None;
                    r.time_dftti_s = None;
                    r.time_reconstruction_s = None;
                    r
                })
                .collect();
            write_records_csv(create(out, TRIALS_FILE, &mut outputs)?, &stable)?;
            write_records_csv(create(out, TIMINGS_FILE, &mut outputs)?, &timings)?;
            serde_json::to_writer_pretty(create(out, SUMMARY_FILE, &mut outputs)?, &summarize(&records))?;
        }
        StudyOutput::Sweep(cells) => {
            let stable: Vec<SweepCell> = cells.iter().cloned().map(|c| SweepCell { wall_time_s: 0.0, ..c }).collect();
            write_records_csv(create(out, SWEEP_FILE, &mut outputs)?, &stable)?;
            serde_json::to_writer_pretty(create(out, SUMMARY_FILE, &mut outputs)?, &cells)?;
        }
    }
    if study != Study::MqSweep {
        write_responses(&cfg, out, &mut outputs)?;
    }
    outputs.push(MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        tool: env!("CARGO_BIN_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        study,
        master_seed: cfg.master_seed,
        trials: cfg.trials,
        config_sha256: hash,
        config: cfg,
        started_unix_s: started,
        finished_unix_s: now_unix(),
        outputs,
        failed_trials: failed,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join(MANIFEST_FILE))?), &manifest)?;
    if failed > 0 {
        return Err(PartialFailure(failed).into());
    }
    Ok(())
}

fn create(dir: &Path, name: &str, outputs: &mut Vec<String>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    outputs.push(name.to_string());
    Ok(BufWriter::new(f))
}

fn write_responses(cfg: &ExperimentConfig, out: &Path, outputs: &mut Vec<String>) -> Result<()> {
    let ctx = StudyContext::new(cfg)?;
    let example = match ctx.response_example(0) {
        Ok(e) => e,
        Err(e) => {
            log::warn!("skipping impulse responses: {e}");
            return Ok(());
        }
    };
    let mut w = csv::Writer::from_writer(create(out, RESPONSES_FILE, outputs)?);
    w.write_record(["index", "nominal", "hardware", "calibrated"])?;
    let cell = |h: Option<&rdcal::discretize::ImpulseResponse>, i: usize| {
        h.and_then(|h| h.samples.get(i)).map(|v| format!("{v:.17e}")).unwrap_or_default()
    };
    for i in 0..example.hardware.len() {
        w.write_record([
            i.to_string(),
            cell(Some(&example.nominal), i),
            cell(Some(&example.hardware), i),
            cell(example.calibrated.as_ref(), i),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_plot(results: &Path, figure: Figure, out: Option<PathBuf>, bins: usize) -> Result<()> {
    let source = if results.is_dir() { results.join(figure.source()) } else { results.to_path_buf() };
    let text = fs::read_to_string(&source).with_context(|| format!("reading {}", source.display()))?;
    let out = out.unwrap_or_else(|| {
        source.parent().unwrap_or(Path::new(".")).join(format!("plot-{}.csv", figure.id()))
    });
    let mut w = csv::Writer::from_writer(BufWriter::new(
        File::create(&out).with_context(|| format!("creating {}", out.display()))?,
    ));
    let empty = text.trim().is_empty();
    if empty {
        log::warn!("{} is empty; writing headers only", source.display());
        eprintln!("warning: {} is empty; plot data has no rows", source.display());
    }
    match figure {
        Figure::ImpulseResponses => {
            w.write_record(["index", "nominal", "hardware", "calibrated"])?;
            if !empty {
                let mut rdr = csv::Reader::from_reader(text.as_bytes());
                let headers = rdr.headers()?.clone();
                if headers.iter().collect::<Vec<_>>() != ["index", "nominal", "hardware", "calibrated"] {
                    anyhow::bail!("{} does not hold impulse responses", source.display());
                }
                for row in rdr.records() {
                    w.write_record(&row?)?;
                }
            }
        }
        Figure::SnrHistogram | Figure::RmseHistogram => {
            w.write_record(["series", "bin_lower", "bin_upper", "count"])?;
            let records = if empty { Vec::new() } else { read_trial_records(text.as_bytes())? };
            let series: Vec<(&str, fn(&TrialRecord) -> Option<f64>)> = if figure == Figure::SnrHistogram {
                vec![
                    ("nominal", |r| r.snr_nominal_model),
                    ("oracle", |r| r.snr_oracle_model),
                    ("calibrated", |r| r.snr_calibrated),
                    ("dftti", |r| r.snr_dftti),
                ]
            } else {
                vec![
                    ("uncalibrated", |r| r.rmse_uncalibrated),
                    ("calibrated", |r| r.rmse_calibrated),
                    ("dftti", |r| r.rmse_dftti),
                ]
            };
            for (name, get) in series {
                let values: Vec<f64> = records.iter().filter_map(get).collect();
                for b in histogram(&values, bins) {
                    w.write_record([name.to_string(), format!("{:e}", b.lower), format!("{:e}", b.upper), b.count.to_string()])?;
                }
            }
        }
        Figure::MqSweep => {
            w.write_record(["m_q", "k", "mean_rmse_calibrated", "mean_rmse_uncalibrated"])?;
            let cells = if empty { Vec::new() } else { read_sweep_cells(text.as_bytes())? };
            for c in cells {
                w.write_record([
                    c.m_q.to_string(),
                    c.k.to_string(),
                    format!("{:e}", c.mean_rmse_calibrated),
                    format!("{:e}", c.mean_rmse_uncalibrated),
                ])?;
            }
        }
        Figure::Benchmark => {
            w.write_record([
                "rank",
                "trial",
                "rmse_uncalibrated",
                "snr_calibrated",
                "snr_nominal_model",
                "snr_oracle_model",
                "snr_dftti",
            ])?;
            let mut records = if empty { Vec::new() } else { read_trial_records(text.as_bytes())? };
            sort_by_uncalibrated_rmse(&mut records);
            let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
            for (rank, r) in records.iter().enumerate() {
                w.write_record([
                    rank.to_string(),
                    r.trial.to_string(),
                    opt(r.rmse_uncalibrated),
                    opt(r.snr_calibrated),
                    opt(r.snr_nominal_model),
                    opt(r.snr_oracle_model),
                    opt(r.snr_dftti),
                ])?;
            }
        }
    }
    w.flush()?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_show_system(path: &Path) -> Result<()> {
    let cfg = load_config(path)?;
    let ctx = StudyContext::new(&cfg).map_err(config_error)?;
    let d = cfg.dims;
    println!("filter            {:?}", cfg.filter);
    println!("N                 {}", d.n);
    println!("M                 {}", d.m);
    println!("R                 {}", d.r);
    println!("L                 {}", cfg.model_length());
    println!("grid rate         {} Hz", cfg.grid_rate_hz);
    println!("f_s (discrete)    {} Hz", cfg.discretization_rate());
    if let Some(c) = &ctx.nominal_components {
        println!("components        {}", serde_json::to_string(c)?);
    }
    if let Some(a) = &ctx.analog {
        println!("H(s) numerator    {:?}", a.numerator);
        println!("H(s) denominator  {:?}", a.denominator);
    }
    if let Some(z) = &ctx.discrete {
        println!("H(z) numerator    {:?}", z.numerator);
        println!("H(z) denominator  {:?}", z.denominator);
        println!("DC gain           {:.12}", z.dc_gain());
    }
    if let Some(c) = &ctx.nominal_components {
        let hw = ctx.hardware_response(c)?;
        println!(
            "hardware taps     {} (tail energy {:e})",
            energy_length(&hw.samples, cfg.hardware_tail_energy).max(cfg.model_length()),
            cfg.hardware_tail_energy
        );
    }
    let head: Vec<String> = ctx.h_nominal.samples.iter().take(12).map(|v| format!("{v:.6e}")).collect();
    println!("h[0..{}]          {}", head.len(), head.join(" "));
    Ok(())
}
