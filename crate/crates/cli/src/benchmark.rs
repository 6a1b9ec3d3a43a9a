//! Grid runner over model variants, corruption levels, input sizes,
//! training-set sizes and seeds.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use shapecorr::corruption::TrainSubset;
use shapecorr::geometry::Cohort;

use crate::config::{apply_variant, ExperimentConfig, GridMode};
use crate::error::{CliError, CliResult};
use crate::pipeline::{echo_config, evaluate_model, load_aligned, prepare_aligned, train_prepared};

/// One benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: String,
    pub noise_sigma_mm: f64,
    pub partial_fraction: f64,
    pub n_input: usize,
    pub train_size: TrainSubset,
    pub seed: u64,
}

impl Cell {
    /// Directory-safe unique name.
    pub fn name(&self) -> String {
        let ts = match self.train_size {
            TrainSubset::All => "all".to_string(),
            TrainSubset::Size(n) => n.to_string(),
        };
        format!(
            "{}_noise{}_partial{}_n{}_train{}_seed{}",
            self.variant.replace('+', "-"),
            self.noise_sigma_mm,
            self.partial_fraction,
            self.n_input,
            ts,
            self.seed
        )
    }

    /// The experiment config of this cell.
    pub fn apply(&self, base: &ExperimentConfig) -> CliResult<ExperimentConfig> {
        let mut cfg = base.clone();
        apply_variant(&self.variant, &mut cfg.model, &mut cfg.train)?;
        cfg.corruption.noise_sigma_mm = self.noise_sigma_mm;
        cfg.corruption.partial_fraction = self.partial_fraction;
        cfg.corruption.train_subset_size = self.train_size;
        cfg.corruption.input_size_n = Some(self.n_input);
        cfg.corruption.seed = self.seed;
        cfg.model.n_input = self.n_input;
        cfg.model.seed = self.seed;
        cfg.train.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    #[serde(flatten)]
    pub cell: Cell,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_cd: f64,
    pub test_cd_mm2: f64,
    pub test_emd_mm: f64,
    pub test_p2f_mm: Option<f64>,
    pub seconds: f64,
}

const CSV_HEADER: &str = "variant,noise_sigma_mm,partial_fraction,n_input,train_size,seed,epochs_run,best_epoch,best_val_cd,test_cd_mm2,test_emd_mm,test_p2f_mm,seconds";

impl BenchmarkRow {
    fn csv(&self) -> String {
        let c = &self.cell;
        let ts = match c.train_size {
            TrainSubset::All => "all".to_string(),
            TrainSubset::Size(n) => n.to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            c.variant,
            c.noise_sigma_mm,
            c.partial_fraction,
            c.n_input,
            ts,
            c.seed,
            self.epochs_run,
            self.best_epoch,
            self.best_val_cd,
            self.test_cd_mm2,
            self.test_emd_mm,
            self.test_p2f_mm.map(|v| v.to_string()).unwrap_or_default(),
            self.seconds
        )
    }
}

/// Enumerates the grid cells (variants × corruption settings × seeds).
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let b = &cfg.benchmark;
    let sizes = if b.input_sizes.is_empty() {
        vec![cfg.model.n_input]
    } else {
        b.input_sizes.clone()
    };
    type Setting = (f64, f64, usize, TrainSubset);
    let settings: Vec<Setting> = match b.grid {
        GridMode::Cartesian => {
            let mut v = Vec::new();
            for &noise in &b.noise_levels {
                for &partial in &b.partial_fractions {
                    for &n in &sizes {
                        for &ts in &b.train_sizes {
                            v.push((noise, partial, n, ts));
                        }
                    }
                }
            }
            v
        }
        GridMode::OneAtATime => {
            let base = (b.noise_levels[0], b.partial_fractions[0], sizes[0], b.train_sizes[0]);
            let mut v = vec![base];
            v.extend(b.noise_levels[1..].iter().map(|&x| (x, base.1, base.2, base.3)));
            v.extend(b.partial_fractions[1..].iter().map(|&x| (base.0, x, base.2, base.3)));
            v.extend(sizes[1..].iter().map(|&x| (base.0, base.1, x, base.3)));
            v.extend(b.train_sizes[1..].iter().map(|&x| (base.0, base.1, base.2, x)));
            v
        }
    };
    let mut cells = Vec::new();
    for variant in &b.variants {
        for &(noise, partial, n, ts) in &settings {
            for &seed in &b.seeds {
                cells.push(Cell {
                    variant: variant.clone(),
                    noise_sigma_mm: noise,
                    partial_fraction: partial,
                    n_input: n,
                    train_size: ts,
                    seed,
                });
            }
        }
    }
    cells
}

fn run_cell(base: &ExperimentConfig, cell: &Cell, aligned: &Cohort, reference: Option<usize>, root: &Path) -> CliResult<BenchmarkRow> {
    let start = Instant::now();
    let cfg = cell.apply(base)?;
    let dir = root.join("runs").join(cell.name());
    let prepared = prepare_aligned(&cfg, aligned, reference)?;
    let trained = train_prepared(&cfg, prepared, &dir, &mut |_| {})?;
    let (eval, _) = evaluate_model(&cfg, &trained.checkpoint.model, &trained.prepared, &dir)?;
    Ok(BenchmarkRow {
        cell: cell.clone(),
        epochs_run: trained.summary.epochs_run,
        best_epoch: trained.summary.best_epoch,
        best_val_cd: trained.summary.best_val_cd,
        test_cd_mm2: eval.mean.cd_mm2,
        test_emd_mm: eval.mean.emd_mm,
        test_p2f_mm: eval.mean.p2f_mean_mm,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn append_line(path: &Path, line: &str) -> CliResult<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| CliError::io(path, e))
}

/// Runs every cell and writes `benchmark.csv` (one row per run, appended as
/// runs finish) and `benchmark_summary.csv` (seed means).
pub fn cmd_benchmark(cfg: &ExperimentConfig, progress: &(dyn Fn(&BenchmarkRow) + Sync)) -> CliResult<Vec<BenchmarkRow>> {
    let root = cfg.resolved_output_dir().join("benchmark");
    fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    echo_config(&root, cfg)?;
    let cells = grid_cells(cfg);
    let (aligned, reference) = load_aligned(cfg)?;
    let csv = root.join("benchmark.csv");
    fs::write(&csv, format!("{CSV_HEADER}\n")).map_err(|e| CliError::io(&csv, e))?;

    let results: Mutex<Vec<Option<CliResult<BenchmarkRow>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= cells.len() {
            break;
        }
        let r = run_cell(cfg, &cells[i], &aligned, reference, &root);
        if let Ok(row) = &r {
            progress(row);
            // rows land in completion order; the summary is ordered
            let _ = append_line(&csv, &row.csv());
        }
        results.lock().unwrap()[i] = Some(r);
    };
    let workers = cfg.benchmark.workers.min(cells.len()).max(1);
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }
    let rows = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<CliResult<Vec<_>>>()?;
    write_summary(&root.join("benchmark_summary.csv"), &rows)?;
    Ok(rows)
}

/// Mean test metrics over seeds for each non-seed setting.
pub fn seed_means(rows: &[BenchmarkRow]) -> Vec<(Cell, f64, Option<f64>, usize)> {
    let mut groups: BTreeMap<String, (Cell, Vec<&BenchmarkRow>)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = Cell { seed: 0, ..r.cell.clone() }.name();
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                (Cell { seed: 0, ..r.cell.clone() }, Vec::new())
            })
            .1
            .push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let (cell, rs) = &groups[&k];
            let n = rs.len() as f64;
            let cd = rs.iter().map(|r| r.test_cd_mm2).sum::<f64>() / n;
            let p2f = rs.iter().map(|r| r.test_p2f_mm).sum::<Option<f64>>().map(|s| s / n);
            (cell.clone(), cd, p2f, rs.len())
        })
        .collect()
}

fn write_summary(path: &Path, rows: &[BenchmarkRow]) -> CliResult<()> {
    let mut out = String::from("variant,noise_sigma_mm,partial_fraction,n_input,train_size,seeds,mean_test_cd_mm2,mean_test_p2f_mm\n");
    for (c, cd, p2f, n) in seed_means(rows) {
        let ts = match c.train_size {
            TrainSubset::All => "all".to_string(),
            TrainSubset::Size(n) => n.to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.variant,
            c.noise_sigma_mm,
            c.partial_fraction,
            c.n_input,
            ts,
            n,
            cd,
            p2f.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}
