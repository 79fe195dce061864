//! Multi-seed leave-one-subject-out experiments and their aggregation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::data::ExperimentData;
use super::fold::{predict_participant, train_fold, History, LeakageMonitor, TrainConfig};
use super::split::{loso_splits, FoldSplit};
use crate::dataset::{write_series_csv, Series};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_participant, motion_correlation, write_trend_svg, EvalResult};
use crate::model::{save_checkpoint, ModelConfig};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Parallel fold/seed jobs; 0 and 1 both mean sequential.
    pub workers: usize,
    /// Root for per-fold checkpoints, histories and plots.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    /// Evaluation produced an undefined correlation.
    Degenerate,
    Failed,
}

/// One (participant, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub participant: String,
    pub seed: u64,
    pub rho_raw: Option<f64>,
    pub rho_tonic: Option<f64>,
    pub rho_motion: Option<f64>,
    pub window_t: usize,
    pub status: RowStatus,
    pub best_epoch: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub window_t: usize,
    pub train_config: TrainConfig,
    /// Seed-major, then participant order.
    pub rows: Vec<ResultRow>,
    pub histories: Vec<(String, u64, History)>,
    pub leakage_checks: u64,
    pub leakage_violations: u64,
}

/// Mean and spread of a per-seed statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub mean: f64,
    pub std: f64,
}

/// Table row: across-participant mean and STD of each correlation, each
/// reported as mean ± STD over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub window_t: usize,
    pub n_seeds: usize,
    pub n_participants: usize,
    pub raw_mean: SeedStat,
    pub raw_std: SeedStat,
    pub tonic_mean: SeedStat,
    pub tonic_std: SeedStat,
    pub failed_cells: usize,
}

fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Reduces one list of participant values per seed to
/// `(mean over seeds of the participant mean, STD over seeds of the participant mean)`
/// and the same pair for the participant STD. STDs are population STDs.
pub fn seed_statistics(per_seed: &[Vec<f64>]) -> Option<(SeedStat, SeedStat)> {
    let seeds: Vec<&Vec<f64>> = per_seed.iter().filter(|v| !v.is_empty()).collect();
    if seeds.is_empty() {
        return None;
    }
    let means: Vec<f64> = seeds.iter().map(|v| mean(v)).collect();
    let stds: Vec<f64> = seeds.iter().map(|v| population_std(v)).collect();
    Some((
        SeedStat {
            mean: mean(&means),
            std: population_std(&means),
        },
        SeedStat {
            mean: mean(&stds),
            std: population_std(&stds),
        },
    ))
}

impl ExperimentResult {
    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.dedup();
        s
    }

    /// Aggregates the successful cells; failed or degenerate cells are skipped
    /// with a warning.
    pub fn summary(&self) -> Result<Summary> {
        summarize_rows(self.window_t, &self.rows)
    }
}

/// Table cell statistics for the rows of one window length.
pub fn summarize_rows(window_t: usize, rows: &[ResultRow]) -> Result<Summary> {
    let failed = rows.iter().filter(|r| r.status != RowStatus::Ok).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells excluded from aggregation", rows.len());
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let collect = |f: fn(&ResultRow) -> Option<f64>| -> Vec<Vec<f64>> {
        seeds
            .iter()
            .map(|&s| {
                rows.iter()
                    .filter(|r| r.seed == s && r.status == RowStatus::Ok)
                    .filter_map(f)
                    .collect()
            })
            .collect()
    };
    let (raw_mean, raw_std) = seed_statistics(&collect(|r| r.rho_raw))
        .ok_or_else(|| Error::InsufficientData("no successful cells to aggregate".into()))?;
    let (tonic_mean, tonic_std) = seed_statistics(&collect(|r| r.rho_tonic)).expect("same cells as raw");
    let mut participants: Vec<&str> = rows.iter().map(|r| r.participant.as_str()).collect();
    participants.sort();
    participants.dedup();
    Ok(Summary {
        window_t,
        n_seeds: seeds.len(),
        n_participants: participants.len(),
        raw_mean,
        raw_std,
        tonic_mean,
        tonic_std,
        failed_cells: failed,
    })
}

pub fn write_rows_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::load(path, e))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Correlation table in the layout of the published comparison table.
pub fn markdown_table(summaries: &[Summary]) -> String {
    let mut s = String::new();
    s.push_str("| Method | Window | Raw mean ρ | Raw STD | Tonic mean ρ | Tonic STD |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|\n");
    let f = |x: &SeedStat| format!("{:.2} ± {:.2}", x.mean, x.std);
    for m in summaries {
        let _ = writeln!(
            s,
            "| Ours | {} | {} | {} | {} | {} |",
            m.window_t,
            f(&m.raw_mean),
            f(&m.raw_std),
            f(&m.tonic_mean),
            f(&m.tonic_std)
        );
    }
    s
}

struct Job<'a> {
    fold: &'a FoldSplit,
    seed: u64,
}

struct JobOutput {
    row: ResultRow,
    history: Option<History>,
}

fn run_job(
    data: &ExperimentData,
    job: &Job,
    model_config: &ModelConfig,
    config: &TrainConfig,
    opts: &RunOptions,
    monitor: &LeakageMonitor,
    window_t: usize,
) -> JobOutput {
    let mut row = ResultRow {
        participant: job.fold.test_id.clone(),
        seed: job.seed,
        rho_raw: None,
        rho_tonic: None,
        rho_motion: None,
        window_t,
        status: RowStatus::Failed,
        best_epoch: None,
        message: String::new(),
    };
    let outcome = match train_fold(data, job.fold, model_config, config, job.seed, monitor) {
        Ok(o) => o,
        Err(e) => {
            log::warn!("fold {} seed {} failed: {e}", job.fold.test_id, job.seed);
            row.message = e.to_string();
            return JobOutput { row, history: None };
        }
    };
    row.best_epoch = Some(outcome.history.best_epoch);
    let test = data.get(&job.fold.test_id).expect("fold ids come from the dataset");
    let evaluated = (|| -> Result<EvalResult> {
        let pred = predict_participant(&outcome.model, test, config.batch_size)?;
        let r = evaluate_participant(&pred, &test.targets, window_t, config.target_kind)?;
        let r = match &test.flow {
            Some(flow) => r.with_motion(motion_correlation(&pred, test.targets.fs, flow))?,
            None => r,
        };
        if let Some(dir) = &opts.output_dir {
            let d = fold_dir(dir, window_t, config, job.seed);
            fs::create_dir_all(&d)?;
            save_checkpoint(&outcome.model, &d.join(format!("{}.ckpt", test.id)))?;
            fs::write(
                d.join(format!("{}.history.json", test.id)),
                serde_json::to_string_pretty(&outcome.history)?,
            )?;
            let mut trend = vec![0.0];
            trend.extend(crate::evaluation::trend(&pred));
            write_series_csv(
                &d.join(format!("{}.trend.csv", test.id)),
                "trend",
                &Series::new(trend, test.targets.fs, "au")?,
            )?;
            write_trend_svg(
                &d.join(format!("{}.svg", test.id)),
                &format!("{} (T = {window_t}, seed {})", test.id, job.seed),
                &crate::evaluation::trend(&pred),
                &test.targets.eda_tonic[1..=pred.len()],
                test.targets.fs,
            )?;
        }
        Ok(r)
    })();
    match evaluated {
        Ok(r) => {
            row.rho_raw = Some(r.rho_raw);
            row.rho_tonic = Some(r.rho_tonic);
            row.rho_motion = r.rho_motion;
            row.status = RowStatus::Ok;
        }
        Err(e) => {
            row.status = if matches!(e, Error::UndefinedCorrelation(_)) {
                RowStatus::Degenerate
            } else {
                RowStatus::Failed
            };
            row.message = e.to_string();
        }
    }
    JobOutput {
        row,
        history: Some(outcome.history),
    }
}

/// Directory holding the per-fold artefacts of one (T, target, seed).
pub fn fold_dir(root: &Path, window_t: usize, config: &TrainConfig, seed: u64) -> PathBuf {
    root.join(format!("T{window_t}"))
        .join(config.target_kind.as_str())
        .join(format!("seed{seed}"))
}

/// Trains and evaluates every fold for every seed.
///
/// Fold failures do not abort the run; the affected cell is marked failed. A
/// leakage violation, however, is a harness bug and aborts.
pub fn run_experiment(
    data: &ExperimentData,
    model_config: &ModelConfig,
    config: &TrainConfig,
    opts: &RunOptions,
) -> Result<ExperimentResult> {
    config.validate()?;
    model_config.validate()?;
    let window_t = data
        .window_t()
        .ok_or_else(|| Error::InsufficientData("dataset holds no windows".into()))?;
    if window_t != model_config.t {
        return Err(Error::Config(format!(
            "data windowed at T = {window_t} but the model expects T = {}",
            model_config.t
        )));
    }
    let folds = loso_splits(&data.ids())?;
    let jobs: Vec<Job> = config
        .seeds
        .iter()
        .flat_map(|&seed| folds.iter().map(move |fold| Job { fold, seed }))
        .collect();
    let monitor = LeakageMonitor::new();
    let slots: Mutex<Vec<Option<JobOutput>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= jobs.len() {
            break;
        }
        let out = run_job(data, &jobs[i], model_config, config, opts, &monitor, window_t);
        log::info!(
            "T {window_t} seed {} test {}: {:?} rho_tonic {:?}",
            jobs[i].seed,
            jobs[i].fold.test_id,
            out.row.status,
            out.row.rho_tonic
        );
        slots.lock().expect("no poisoned lock")[i] = Some(out);
    };
    let n_workers = opts.workers.max(1).min(jobs.len());
    if n_workers <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..n_workers {
                s.spawn(worker);
            }
        });
    }
    if monitor.violations() > 0 {
        return Err(Error::Protocol(format!(
            "{} leakage violations in {} batch checks",
            monitor.violations(),
            monitor.checks()
        )));
    }
    let mut rows = Vec::with_capacity(jobs.len());
    let mut histories = Vec::new();
    for (job, out) in jobs.iter().zip(slots.into_inner().expect("no poisoned lock")) {
        let out = out.expect("every job ran");
        if let Some(h) = out.history {
            histories.push((job.fold.test_id.clone(), job.seed, h));
        }
        rows.push(out.row);
    }
    Ok(ExperimentResult {
        window_t,
        train_config: config.clone(),
        rows,
        histories,
        leakage_checks: monitor.checks(),
        leakage_violations: monitor.violations(),
    })
}

/// Runs one experiment per window length. `load` supplies the data windowed at
/// each length; artefacts of different lengths land in distinct directories.
pub fn run_sweep(
    window_sizes: &[usize],
    mut load: impl FnMut(usize) -> Result<ExperimentData>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    opts: &RunOptions,
) -> Result<Vec<ExperimentResult>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(window_sizes.len());
    for &t in window_sizes {
        if !seen.insert(t) {
            return Err(Error::Config(format!("window length {t} listed twice")));
        }
        let data = load(t)?;
        let mc = ModelConfig {
            t,
            ..model_config.clone()
        };
        out.push(run_experiment(&data, &mc, config, opts)?);
    }
    Ok(out)
}
