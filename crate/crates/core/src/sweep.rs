//! Batch runs over regimes, algorithm configurations, alpha values and
//! seeds, with resumable CSV output.
//!
//! Results CSV columns, one row per run:
//!
//! `instance_id, regime, algo, alpha, swap, switch, seed,
//!  cumulative_tardiness, failure_count, makespan, wall_ms, status`
//!
//! `status` is `ok`, `liveness` or `error: <message>`; metric columns are
//! empty unless it is `ok`. The summary CSV holds one row per
//! `(regime, algo, alpha, swap, switch)` cell with the mean and sample
//! standard deviation of the `ok` rows.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::GridMap;
use crate::instance::{generate, GenSpec, Instance, Regime, BUILTIN_WAREHOUSE};
use crate::scheduler::{Algorithm, ConfigError, SchedulerConfig};
use crate::sim::{run, SimError, SimOptions};

pub const DEFAULT_ALPHAS: [f64; 6] = [0.0, 0.025, 0.05, 0.1, 0.2, 0.4];

/// Environment variable naming the default worker count.
pub const WORKERS_ENV: &str = "MAPDD_WORKERS";

/// The four deadline-aware configurations: (swap, switch) flag pairs. With
/// alpha = 0 the first one is plain token passing.
pub fn default_configs() -> Vec<(Algorithm, bool, bool)> {
    vec![
        (Algorithm::Dtp, false, false),
        (Algorithm::Dtpts, false, true),
        (Algorithm::Dtpts, true, false),
        (Algorithm::Dtpts, true, true),
    ]
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub map: Arc<GridMap>,
    pub map_ref: String,
    pub num_agents: usize,
    pub num_tasks: usize,
    pub regimes: Vec<Regime>,
    pub configs: Vec<(Algorithm, bool, bool)>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// 4 regimes x 4 configurations x 6 alphas x `seeds` on the warehouse.
    pub fn paper_scale(seeds: u64) -> Self {
        SweepSpec {
            map: Arc::new(GridMap::warehouse()),
            map_ref: BUILTIN_WAREHOUSE.to_string(),
            num_agents: 15,
            num_tasks: 151,
            regimes: Regime::ALL.to_vec(),
            configs: default_configs(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            seeds: (0..seeds).collect(),
        }
    }

    /// Every run of the sweep, in a fixed order.
    pub fn jobs(&self) -> Result<Vec<Job>, SweepError> {
        if self.alphas.is_empty() || self.seeds.is_empty() || self.regimes.is_empty() || self.configs.is_empty() {
            return Err(SweepError::EmptyGrid);
        }
        let mut jobs = Vec::new();
        for &regime in &self.regimes {
            for &seed in &self.seeds {
                for &(algo, swap, switch) in &self.configs {
                    for &alpha in &self.alphas {
                        let cfg = SchedulerConfig::new(algo, alpha, swap, switch)?;
                        jobs.push(Job { regime, seed, cfg });
                    }
                }
            }
        }
        Ok(jobs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub regime: Regime,
    pub seed: u64,
    pub cfg: SchedulerConfig,
}

impl Job {
    pub fn instance_id(&self) -> String {
        format!("{}-s{}", self.regime, self.seed)
    }

    pub fn key(&self) -> RowKey {
        RowKey {
            instance_id: self.instance_id(),
            algo: self.cfg.algorithm.to_string(),
            alpha: self.cfg.alpha.to_string(),
            swap: self.cfg.enable_swap,
            switch: self.cfg.enable_switch,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    pub instance_id: String,
    pub algo: String,
    pub alpha: String,
    pub swap: bool,
    pub switch: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub instance_id: String,
    pub regime: String,
    pub algo: String,
    pub alpha: f64,
    pub swap: bool,
    pub switch: bool,
    pub seed: u64,
    pub cumulative_tardiness: Option<u64>,
    pub failure_count: Option<u32>,
    pub makespan: Option<u32>,
    pub wall_ms: Option<u64>,
    pub status: String,
}

impl SweepRow {
    pub fn key(&self) -> RowKey {
        RowKey {
            instance_id: self.instance_id.clone(),
            algo: self.algo.clone(),
            alpha: self.alpha.to_string(),
            swap: self.swap,
            switch: self.switch,
            seed: self.seed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("building worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Runs one job against its (shared) instance.
pub fn run_job(job: &Job, instance: &Instance) -> SweepRow {
    let mut row = blank_row(job);
    match run(instance, &job.cfg, job.seed, SimOptions::default()) {
        Ok(out) => {
            row.cumulative_tardiness = Some(out.result.cumulative_tardiness);
            row.failure_count = Some(out.result.failure_count);
            row.makespan = Some(out.result.makespan);
            row.wall_ms = Some(out.result.wall_time.as_millis() as u64);
            row.status = "ok".to_string();
        }
        Err(SimError::Liveness { .. }) => row.status = "liveness".to_string(),
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Executes every job not in `done` on `workers` threads and hands each row
/// to `sink` on the calling thread, in completion order.
pub fn run_sweep(
    spec: &SweepSpec,
    workers: usize,
    done: &HashSet<RowKey>,
    mut sink: impl FnMut(SweepRow) -> Result<(), SweepError>,
) -> Result<usize, SweepError> {
    use rayon::prelude::*;

    let jobs: Vec<Job> = spec.jobs()?.into_iter().filter(|j| !done.contains(&j.key())).collect();
    if jobs.is_empty() {
        return Ok(0);
    }
    let mut instances: BTreeMap<(Regime, u64), Result<Arc<Instance>, String>> = BTreeMap::new();
    for job in &jobs {
        instances.entry((job.regime, job.seed)).or_insert_with(|| {
            let gen = GenSpec {
                map: spec.map.clone(),
                map_ref: spec.map_ref.clone(),
                num_agents: spec.num_agents,
                num_tasks: spec.num_tasks,
                release_range: job.regime.release.range(),
                duration_range: job.regime.deadline.range(),
                seed: job.seed,
            };
            generate(&gen).map(Arc::new).map_err(|e| e.to_string())
        });
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let (tx, rx) = mpsc::channel();
    let total = jobs.len();
    std::thread::scope(|s| {
        let instances = &instances;
        s.spawn(move || {
            pool.install(|| {
                jobs.par_iter().for_each_with(tx, |tx, job| {
                    let row = match &instances[&(job.regime, job.seed)] {
                        Ok(inst) => run_job(job, inst),
                        Err(msg) => {
                            let mut row = blank_row(job);
                            row.status = format!("error: {msg}");
                            row
                        }
                    };
                    let _ = tx.send(row);
                });
            });
        });
        for row in rx {
            sink(row)?;
        }
        Ok::<(), SweepError>(())
    })?;
    Ok(total)
}

fn blank_row(job: &Job) -> SweepRow {
    SweepRow {
        instance_id: job.instance_id(),
        regime: job.regime.to_string(),
        algo: job.cfg.algorithm.to_string(),
        alpha: job.cfg.alpha,
        swap: job.cfg.enable_swap,
        switch: job.cfg.enable_switch,
        seed: job.seed,
        cumulative_tardiness: None,
        failure_count: None,
        makespan: None,
        wall_ms: None,
        status: String::new(),
    }
}

/// Reads the rows of an existing results file; missing file means none.
pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>, SweepError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let csv_err = |source| SweepError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().collect::<Result<Vec<SweepRow>, _>>().map_err(csv_err)
}

/// Appends rows to a results CSV, writing the header only for a new file.
pub struct ResultsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl ResultsWriter {
    pub fn open(path: &Path) -> Result<Self, SweepError> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| SweepError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(ResultsWriter {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, row: &SweepRow) -> Result<(), SweepError> {
        let path = &self.path;
        self.writer.serialize(row).map_err(|source| SweepError::Csv {
            path: path.clone(),
            source,
        })?;
        self.writer.flush().map_err(|source| SweepError::Io {
            path: path.clone(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: String,
    pub algo: String,
    pub alpha: f64,
    pub swap: bool,
    pub switch: bool,
    pub runs: usize,
    pub failed_runs: usize,
    pub mean_cumulative_tardiness: f64,
    pub std_cumulative_tardiness: f64,
    pub mean_failure_count: f64,
    pub std_failure_count: f64,
    pub mean_makespan: f64,
    pub mean_wall_ms: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-cell aggregates, sorted by cell key.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, String, String, bool, bool), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.regime.clone(), r.algo.clone(), format!("{:020.6}", r.alpha), r.swap, r.switch))
            .or_default()
            .push(r);
    }
    cells
        .into_values()
        .map(|group| {
            let ok: Vec<&SweepRow> = group.iter().copied().filter(|r| r.is_ok()).collect();
            let col = |f: fn(&SweepRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let (mean_ct, std_ct) = mean_std(&col(|r| r.cumulative_tardiness.map(|v| v as f64)));
            let (mean_fc, std_fc) = mean_std(&col(|r| r.failure_count.map(|v| v as f64)));
            let (mean_ms, _) = mean_std(&col(|r| r.makespan.map(|v| v as f64)));
            let (mean_wall, _) = mean_std(&col(|r| r.wall_ms.map(|v| v as f64)));
            let first = group[0];
            SummaryRow {
                regime: first.regime.clone(),
                algo: first.algo.clone(),
                alpha: first.alpha,
                swap: first.swap,
                switch: first.switch,
                runs: ok.len(),
                failed_runs: group.len() - ok.len(),
                mean_cumulative_tardiness: mean_ct,
                std_cumulative_tardiness: std_ct,
                mean_failure_count: mean_fc,
                std_failure_count: std_fc,
                mean_makespan: mean_ms,
                mean_wall_ms: mean_wall,
            }
        })
        .collect()
}

/// `results.csv` gets its summary next to it as `results_summary.csv`.
pub fn summary_path(results: &Path) -> PathBuf {
    let stem = results.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    results.with_file_name(format!("{stem}_summary.csv"))
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<(), SweepError> {
    let csv_err = |source| SweepError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in summary {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}
