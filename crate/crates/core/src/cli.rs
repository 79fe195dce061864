//! The `arousal` command line. Every command reads an optional TOML config,
//! applies flag overrides and writes a `manifest.json` next to its outputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Failures print one JSON line `{"error": <kind>, "message": <text>}` to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{generate_synthetic_session, load_session, read_series_csv, save_session, Session, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_participant, motion_correlation};
use crate::model::{load_checkpoint, ModelConfig};
use crate::preprocess::{CropConfig, PrepareConfig, SkinCascadeDetector, TargetKind, WindowCache};
use crate::stress::{
    always_rest, camera_pulse, classify_stress, extract_features, markdown_stress_table, session_features,
    window_signals, write_features_csv, FeatureSet, GbdtConfig, StressFeatureVector, StressReport,
};
use crate::training::{
    fold_dir, markdown_table, predict_participant, read_rows_csv, run_experiment, summarize_rows, write_rows_csv,
    DataConfig, ExperimentData, ParticipantData, RunOptions, Summary, TrainConfig,
};

pub const CACHE_ENV: &str = "AROUSAL_CACHE_DIR";

/// Contents of a `--config` file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub prepare: PrepareConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stress: GbdtConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.stress.validate()?;
        if self.model.input_size != self.prepare.crop.output_size {
            return Err(Error::Config(format!(
                "model.input_size {} differs from prepare.crop.output_size {}",
                self.model.input_size, self.prepare.crop.output_size
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        format!("{:x}", Sha256::digest(json))
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config_sha256: String,
    config: &'a RunConfig,
}

fn write_manifest(out: &Path, command: &str, seed: Option<u64>, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    let m = Manifest {
        tool: "arousal",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config_sha256: cfg.hash(),
        config: cfg,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "arousal", version, about = "Camera-based sympathetic arousal estimation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file with [synth], [prepare], [model], [train] and [stress] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    Raw,
    Tonic,
}

impl From<Target> for TargetKind {
    fn from(t: Target) -> Self {
        match t {
            Target::Raw => TargetKind::Raw,
            Target::Tonic => TargetKind::Tonic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Source {
    Contact,
    Camera,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sessions.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        participants: Option<usize>,
    },
    /// Crop, decimate and window every session of a dataset directory.
    Preprocess {
        /// Directory of session directories.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long, value_enum)]
        target: Option<Target>,
        /// Also compute optical flow for the motion probe.
        #[arg(long)]
        flow: bool,
    },
    /// LOSO training and evaluation on a preprocessed dataset.
    Train {
        /// Output of `preprocess`.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum)]
        target: Option<Target>,
        #[arg(long = "T")]
        t: Option<usize>,
    },
    /// Evaluate a checkpoint on one preprocessed participant.
    Evaluate {
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        participant: String,
        #[arg(long, value_enum)]
        target: Option<Target>,
        /// Write the result as JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preprocess and train once per window length.
    Sweep {
        /// Directory of session directories.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long = "T", value_delimiter = ',', default_values_t = [256usize, 384, 512, 768, 1024])]
        t: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum)]
        target: Option<Target>,
    },
    /// Stress classification from contact or camera signals.
    Stress {
        /// Directory of session directories.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "contact")]
        source: Source,
        /// Training output holding the predicted trends (camera source).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long, value_enum)]
        target: Option<Target>,
    },
    /// Aggregate result CSVs into the results table.
    Report {
        /// Result CSV files written by `train` or `sweep`.
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Markdown output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_with(common: &Common, target: Option<Target>, t: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
        cfg.train.seeds = vec![seed];
    }
    if let Some(target) = target {
        cfg.train.target_kind = target.into();
    }
    if let Some(t) = t {
        cfg.model.t = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cache() -> Option<WindowCache> {
    std::env::var_os(CACHE_ENV).map(WindowCache::new)
}

/// Session directories (those holding `meta.json`) in name order.
pub fn session_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::load(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::load(root, "no session directories"));
    }
    Ok(dirs)
}

fn load_sessions(root: &Path) -> Result<Vec<Session>> {
    session_dirs(root)?.iter().map(|d| load_session(d)).collect()
}

fn prepare_all(sessions: &[Session], cfg: &RunConfig, t: usize, with_flow: bool) -> Result<ExperimentData> {
    let data_cfg = DataConfig {
        prepare: cfg.prepare,
        t,
        target_kind: cfg.train.target_kind,
        with_flow,
    };
    let cache = cache();
    let detector = SkinCascadeDetector::default();
    let parts = sessions
        .iter()
        .map(|s| {
            log::info!("preparing {}", s.participant_id);
            ParticipantData::prepare(s, &detector, &data_cfg, cache.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    ExperimentData::new(parts)
}

fn results_name(t: usize, target: TargetKind) -> String {
    format!("results_T{t}_{}.csv", target.as_str())
}

fn train_on(data: &ExperimentData, cfg: &RunConfig, out: &Path, workers: usize) -> Result<Summary> {
    let res = run_experiment(
        data,
        &cfg.model,
        &cfg.train,
        &RunOptions {
            workers,
            output_dir: Some(out.to_path_buf()),
        },
    )?;
    write_rows_csv(&out.join(results_name(res.window_t, cfg.train.target_kind)), &res.rows)?;
    res.summary()
}

fn write_table(out: &Path, summaries: &[Summary]) -> Result<()> {
    let table = markdown_table(summaries);
    print!("{table}");
    fs::write(out.join("table.md"), table)?;
    Ok(())
}

fn stress_features(
    sessions: &[Session],
    cfg: &RunConfig,
    source: Source,
    run: Option<&Path>,
    t: Option<usize>,
) -> Result<Vec<StressFeatureVector>> {
    let mut out = Vec::new();
    match source {
        Source::Contact => {
            for s in sessions {
                out.extend(session_features(s)?);
            }
        }
        Source::Camera => {
            let run = run.ok_or_else(|| Error::Config("--source camera needs --run".into()))?;
            let t = t.ok_or_else(|| Error::Config("--source camera needs --T".into()))?;
            let seed = *cfg.train.seeds.first().expect("validated");
            let dir = fold_dir(run, t, &cfg.train, seed);
            let crop = CropConfig {
                output_size: 8,
                ..cfg.prepare.crop
            };
            let detector = SkinCascadeDetector::default();
            for s in sessions {
                let trend = read_series_csv(
                    &dir.join(format!("{}.trend.csv", s.participant_id)),
                    "trend",
                    cfg.prepare.fs_model,
                    "au",
                )?;
                let pulse = camera_pulse(s, &detector, &crop)?;
                for w in window_signals(&s.participant_id, s.duration_s(), &trend, &pulse, &s.pinch_intervals)? {
                    out.push(extract_features(&w)?);
                }
            }
        }
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, participants } => {
            let mut cfg = config_with(&common, None, None)?;
            if let Some(n) = participants {
                cfg.synth.n_participants = n;
                cfg.synth.validate()?;
            }
            for p in 0..cfg.synth.n_participants as u64 {
                let s = generate_synthetic_session(&cfg.synth, p)?;
                save_session(&s, &common.out.join(&s.participant_id))?;
                log::info!("wrote {}", s.participant_id);
            }
            write_manifest(&common.out, "synth", Some(cfg.synth.seed), &cfg)
        }
        Command::Preprocess {
            data,
            common,
            t,
            target,
            flow,
        } => {
            let cfg = config_with(&common, target, t)?;
            let prepared = prepare_all(&load_sessions(&data)?, &cfg, cfg.model.t, flow)?;
            prepared.save(&common.out)?;
            write_manifest(&common.out, "preprocess", common.seed, &cfg)
        }
        Command::Train {
            data,
            common,
            workers,
            target,
            t,
        } => {
            let mut cfg = config_with(&common, target, t)?;
            let mut prepared = ExperimentData::load(&data)?;
            let wt = prepared
                .window_t()
                .ok_or_else(|| Error::InsufficientData("preprocessed dataset has no windows".into()))?;
            match t {
                Some(t) if t != wt => {
                    return Err(Error::Config(format!("--T {t} but the data was windowed with T = {wt}")))
                }
                _ => cfg.model.t = wt,
            }
            prepared.relabel(cfg.train.target_kind)?;
            write_manifest(&common.out, "train", common.seed, &cfg)?;
            let summary = train_on(&prepared, &cfg, &common.out, workers)?;
            write_table(&common.out, &[summary])
        }
        Command::Evaluate {
            data,
            checkpoint,
            participant,
            target,
            out,
        } => {
            let mut prepared = ExperimentData::load(&data)?;
            let target = target.map(TargetKind::from).unwrap_or(TargetKind::Tonic);
            prepared.relabel(target)?;
            let p = prepared
                .get(&participant)
                .ok_or_else(|| Error::Config(format!("participant {participant} not in {}", data.display())))?;
            let model = load_checkpoint(&checkpoint)?;
            let pred = predict_participant(&model, p, 4)?;
            let mut r = evaluate_participant(&pred, &p.targets, model.config().t, target)?;
            if let Some(flow) = &p.flow {
                r = r.with_motion(motion_correlation(&pred, p.targets.fs, flow))?;
            }
            let json = serde_json::to_string(&r)?;
            println!("{json}");
            if let Some(out) = out {
                fs::write(out, json + "\n")?;
            }
            Ok(())
        }
        Command::Sweep {
            data,
            common,
            t,
            workers,
            target,
        } => {
            let cfg = config_with(&common, target, None)?;
            let mut seen = t.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != t.len() {
                return Err(Error::Config("window lengths must be distinct".into()));
            }
            write_manifest(&common.out, "sweep", common.seed, &cfg)?;
            let sessions = load_sessions(&data)?;
            let mut summaries = Vec::with_capacity(t.len());
            for &wt in &t {
                let c = RunConfig {
                    model: ModelConfig {
                        t: wt,
                        ..cfg.model.clone()
                    },
                    ..cfg.clone()
                };
                c.validate()?;
                let prepared = prepare_all(&sessions, &c, wt, false)?;
                summaries.push(train_on(&prepared, &c, &common.out, workers)?);
            }
            write_table(&common.out, &summaries)
        }
        Command::Stress {
            data,
            common,
            source,
            run,
            t,
            target,
        } => {
            let cfg = config_with(&common, target, None)?;
            let sessions = load_sessions(&data)?;
            let features = stress_features(&sessions, &cfg, source, run.as_deref(), t)?;
            fs::create_dir_all(&common.out)?;
            write_features_csv(&common.out.join("features.csv"), &features)?;
            let signals = match source {
                Source::Contact => "contact",
                Source::Camera => "camera",
            };
            let mut rows: Vec<(String, String, StressReport)> = vec![("Baseline".into(), "-".into(), always_rest(&features)?)];
            for set in [FeatureSet::PpgOnly, FeatureSet::EdaOnly, FeatureSet::Both] {
                rows.push((
                    format!("GB {}", set.as_str()),
                    signals.into(),
                    classify_stress(&features, set, &cfg.stress)?,
                ));
            }
            let table = markdown_stress_table(&rows);
            print!("{table}");
            fs::write(common.out.join("stress.md"), table)?;
            let reports: Vec<&StressReport> = rows.iter().map(|r| &r.2).collect();
            fs::write(common.out.join("stress.json"), serde_json::to_string_pretty(&reports)?)?;
            write_manifest(&common.out, "stress", common.seed, &cfg)
        }
        Command::Report { results, out } => {
            let mut summaries = Vec::with_capacity(results.len());
            for path in &results {
                let rows = read_rows_csv(path)?;
                let t = rows
                    .first()
                    .map(|r| r.window_t)
                    .ok_or_else(|| Error::InsufficientData(format!("{} has no rows", path.display())))?;
                if rows.iter().any(|r| r.window_t != t) {
                    return Err(Error::Integrity(format!("{} mixes window lengths", path.display())));
                }
                summaries.push(summarize_rows(t, &rows)?);
            }
            summaries.sort_by_key(|s| s.window_t);
            let table = markdown_table(&summaries);
            print!("{table}");
            if let Some(out) = out {
                fs::write(out, table)?;
            }
            Ok(())
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Load { .. } => "load",
        Error::Integrity(_) => "integrity",
        Error::InsufficientData(_) => "insufficient_data",
        Error::Detection(_) => "detection",
        Error::Protocol(_) => "protocol",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::SingleClass => "single_class",
        _ => "runtime",
    }
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": error_kind(&e), "message": e.to_string() });
            eprintln!("{line}");
            if matches!(e, Error::Config(_)) {
                2
            } else {
                1
            }
        }
    }
}
