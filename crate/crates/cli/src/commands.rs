use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use patchqnn::data::{encode_prepared, load_idx, prepare, prepared_checksum, Sample};
use patchqnn::hessian::{
    largest_eigenvalue, subsample_indices, BatchSpec, HessianReport, ModelObjective, Objective, ParameterScope,
    PowerIterationOptions,
};
use patchqnn::landscape::{grid_losses, pca2, GridOptions, LandscapeGrid};
use patchqnn::model::{loss, Checkpoint, ModelParams};
use patchqnn::optim::LrSchedule;
use patchqnn::trainer::{read_trajectory, train, write_trajectory, EpochRecord, TrainConfig};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::{ansatz_options, build_model, io_err, load_split, patch_config, sha256_file, CliError, CliResult, RunConfig, Split};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "epoch,lr,train_loss,test_loss,test_acc";
pub const TRAJECTORY_FILE: &str = "trajectory.bin";
pub const CHECKPOINT_INIT: &str = "checkpoint_init.json";
pub const CHECKPOINT_MIN: &str = "checkpoint_min.json";
pub const CHECKPOINT_FINAL: &str = "checkpoint_final.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GRID_FILE: &str = "landscape_grid.csv";
pub const LANDSCAPE_FILE: &str = "landscape.json";
pub const HESSIAN_FILE: &str = "hessian.json";

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOutcome {
    pub count: usize,
    pub side: usize,
    pub checksum: String,
    /// False when an identical file was already in place.
    pub written: bool,
}

/// Pools and normalizes an IDX pair into the prepared binary format. An
/// existing output with the same checksum is left untouched.
pub fn cmd_prepare(images: &Path, labels: &Path, out: &Path) -> CliResult<PrepareOutcome> {
    let ds = prepare(&load_idx(images, labels)?)?;
    let encoded = encode_prepared(&ds);
    let checksum = prepared_checksum(&encoded);
    let existing = std::fs::read(out).ok();
    let written = match existing {
        Some(bytes) if bytes.len() == encoded.len() && prepared_checksum(&bytes) == checksum => false,
        _ => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(io_err(format!("creating {}", parent.display())))?;
            }
            let tmp = out.with_extension("tmp");
            std::fs::write(&tmp, &encoded).map_err(io_err(format!("writing {}", tmp.display())))?;
            std::fs::rename(&tmp, out).map_err(io_err(format!("renaming to {}", out.display())))?;
            true
        }
    };
    Ok(PrepareOutcome {
        count: ds.len(),
        side: ds.side,
        checksum,
        written,
    })
}

/// Headline numbers of a training run. Epochs are counted from 1; epoch `e`
/// is trajectory row `e`, row 0 being the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub config_hash: String,
    pub n_qubits: usize,
    pub depth: usize,
    pub n_qc: usize,
    pub n_variational: usize,
    pub n_bias: usize,
    pub seed: u64,
    pub epochs: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub initial_train_loss: f64,
    pub initial_test_loss: f64,
    pub initial_test_acc: f64,
    pub min_loss_epoch: usize,
    pub min_train_loss: f64,
    pub test_loss_at_min: f64,
    pub test_acc_at_min: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_test_acc: f64,
}

impl Summary {
    pub fn line(&self) -> String {
        format!(
            "n_qc={} d={} params={}: min train loss {:.6} at epoch {}, test loss {:.6}, test acc {:.4}",
            self.n_qc,
            self.depth,
            self.n_variational,
            self.min_train_loss,
            self.min_loss_epoch,
            self.test_loss_at_min,
            self.test_acc_at_min
        )
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(io_err(format!("writing {}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(patchqnn::Error::Json {
            context: format!("parsing {}", path.display()),
            source: e,
        })
    })
}

fn metrics_row(r: &EpochRecord) -> String {
    format!("{},{},{},{},{}", r.epoch + 1, r.lr, r.train_loss, r.test_loss, r.test_acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub summary: Summary,
}

/// Trains one configuration and writes the run directory.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let hash = cfg.hash();
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()).map_err(io_err("writing config snapshot"))?;

    let train_set = load_split(cfg, Split::Train)?;
    let test_set = load_split(cfg, Split::Test)?;
    let model = build_model(cfg)?;
    let layout = model.layout();
    let t = &cfg.train;
    let train_cfg = TrainConfig {
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: t.seed,
        schedule: LrSchedule::new(cfg.lr(), t.lr_min, t.epochs, t.restart_period)?,
        train_eval_subset: t.train_eval_subset,
    };
    log::info!(
        "training n_qc={} d={} ({} variational parameters) on {} / {} samples",
        layout.n_qc,
        cfg.model.depth,
        layout.n_angles(),
        train_set.len(),
        test_set.len()
    );

    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = BufWriter::new(
        File::create(&metrics_path).map_err(io_err(format!("creating {}", metrics_path.display())))?,
    );
    writeln!(metrics, "{METRICS_HEADER}").map_err(io_err("writing metrics"))?;
    let mut write_failure = None;
    let log = train(&model, &train_cfg, &train_set.samples, &test_set.samples, |r| {
        let res = writeln!(metrics, "{}", metrics_row(r)).and_then(|_| metrics.flush());
        if let Err(e) = res {
            write_failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_failure {
        return Err(io_err("writing metrics")(e));
    }
    drop(metrics);

    write_trajectory(&dir.join(TRAJECTORY_FILE), &log.snapshots(), &hash)?;
    let patch = patch_config(cfg)?;
    let save = |params: &ModelParams, epoch: Option<usize>, name: &str| {
        Checkpoint::new(
            params,
            cfg.model.n_qubits,
            cfg.model.depth,
            ansatz_options(cfg),
            patch,
            t.seed,
            epoch,
            &hash,
        )
        .save(&dir.join(name))
    };
    save(&log.init_params, None, CHECKPOINT_INIT)?;
    save(&log.min_loss_params, Some(log.min_loss_epoch + 1), CHECKPOINT_MIN)?;
    save(&log.final_params, Some(t.epochs), CHECKPOINT_FINAL)?;

    let min = log.min_loss_record();
    let last = log.records.last().expect("at least one epoch");
    let summary = Summary {
        config_hash: hash,
        n_qubits: cfg.model.n_qubits,
        depth: cfg.model.depth,
        n_qc: layout.n_qc,
        n_variational: layout.n_angles(),
        n_bias: layout.n_bias(),
        seed: t.seed,
        epochs: t.epochs,
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        initial_train_loss: log.initial_train.loss,
        initial_test_loss: log.initial_test.loss,
        initial_test_acc: log.initial_test.accuracy,
        min_loss_epoch: log.min_loss_epoch + 1,
        min_train_loss: min.train_loss,
        test_loss_at_min: min.test_loss,
        test_acc_at_min: min.test_acc,
        final_train_loss: last.train_loss,
        final_test_loss: last.test_loss,
        final_test_acc: last.test_acc,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(TrainOutcome { run_dir: dir, summary })
}

fn mismatch(dir: &Path, file: &str, found: &str, expected: &str) -> CliError {
    CliError::Artifact(format!(
        "{}: {file} carries config hash {found}, expected {expected}; artifacts come from different configurations",
        dir.display()
    ))
}

/// Resolved config and summary of a finished run, after checking they agree.
pub fn load_run(dir: &Path) -> CliResult<(RunConfig, Summary)> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(format!("reading {}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    cfg.resolve()?;
    let summary: Summary = read_json(&dir.join(SUMMARY_FILE))?;
    let hash = cfg.hash();
    if summary.config_hash != hash {
        return Err(mismatch(dir, SUMMARY_FILE, &summary.config_hash, &hash));
    }
    Ok((cfg, summary))
}

fn load_checkpoint(dir: &Path, name: &str, hash: &str) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(&dir.join(name))?;
    if ck.config_hash != hash {
        return Err(mismatch(dir, name, &ck.config_hash, hash));
    }
    Ok(ck)
}

/// Sidecar written next to the grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeReport {
    pub config_hash: String,
    pub ratio1: f64,
    pub ratio2: f64,
    pub variance1: f64,
    pub variance2: f64,
    pub total_variance: f64,
    pub n_snapshots: usize,
    pub n_samples: usize,
    pub min_loss_epoch: usize,
    /// Bias grid held fixed across the plane (taken from the min-loss checkpoint).
    pub bias_from: String,
    pub grid: LandscapeGrid,
}

impl LandscapeReport {
    pub fn ratio_line(&self) -> String {
        format!("PC1 {:.4}  PC2 {:.4}", self.ratio1, self.ratio2)
    }
}

/// PCA of the circuit-angle trajectory and a loss grid over its plane.
///
/// Grid points vary the circuit angles only; the bias grid stays at the
/// min-loss checkpoint. Losses use the first `subset` training samples when
/// given (falling back to `landscape.subset`, then the whole set).
pub fn cmd_landscape(dir: &Path, subset: Option<usize>) -> CliResult<LandscapeReport> {
    let (cfg, summary) = load_run(dir)?;
    let hash = summary.config_hash.clone();
    let (rows, traj_hash) = read_trajectory(&dir.join(TRAJECTORY_FILE))?;
    if traj_hash != hash {
        return Err(mismatch(dir, TRAJECTORY_FILE, &traj_hash, &hash));
    }
    if rows.len() < 3 {
        return Err(CliError::Artifact(format!(
            "insufficient snapshots: {} trajectory rows, at least 3 needed",
            rows.len()
        )));
    }
    if summary.min_loss_epoch >= rows.len() {
        return Err(CliError::Artifact(format!(
            "min-loss epoch {} outside the {} trajectory rows",
            summary.min_loss_epoch,
            rows.len()
        )));
    }
    let plane = pca2(&rows)?;
    let base = load_checkpoint(dir, CHECKPOINT_MIN, &hash)?.params()?;
    let model = build_model(&cfg)?;
    let mut train_set = load_split(&cfg, Split::Train)?;
    if let Some(n) = subset.or(cfg.landscape.subset) {
        train_set.samples.truncate(n.max(1));
    }
    let samples = &train_set.samples;
    let loss_at = |q: &[f64]| {
        let mut p = base.clone();
        p.angles_mut().copy_from_slice(q);
        loss(&p, samples, &model)
    };
    let opts = GridOptions {
        resolution: cfg.landscape.resolution,
        margin_frac: cfg.landscape.margin,
        fallback_half_width: cfg.landscape.fallback_half_width,
    };
    let grid = grid_losses(&plane, &rows, summary.min_loss_epoch, loss_at, &opts)?;
    grid.write_csv(&dir.join(GRID_FILE))?;
    let report = LandscapeReport {
        config_hash: hash,
        ratio1: plane.ratio1,
        ratio2: plane.ratio2,
        variance1: plane.variance1,
        variance2: plane.variance2,
        total_variance: plane.total_variance,
        n_snapshots: rows.len(),
        n_samples: samples.len(),
        min_loss_epoch: summary.min_loss_epoch,
        bias_from: CHECKPOINT_MIN.into(),
        grid,
    };
    write_json(&dir.join(LANDSCAPE_FILE), &report)?;
    Ok(report)
}

/// Command-line values for `hessian` that replace `[hessian]` entries.
#[derive(Debug, Clone, Default)]
pub struct HessianOverrides {
    pub scope: Option<ParameterScope>,
    pub subset: Option<usize>,
    pub seed: Option<u64>,
    pub full: bool,
}

/// Samples the Hessian batch: a seeded subsample, or everything.
pub fn hessian_batch<'a>(
    samples: &'a [Sample],
    size: usize,
    seed: u64,
    full: bool,
) -> (Vec<&'a Sample>, BatchSpec) {
    if full || size >= samples.len() {
        (samples.iter().collect(), BatchSpec::Full { size: samples.len() })
    } else {
        let idx = subsample_indices(samples.len(), size, seed);
        (idx.iter().map(|&i| &samples[i]).collect(), BatchSpec::Subsample { size, seed })
    }
}

/// Largest loss-Hessian eigenvalue at the min-loss checkpoint.
pub fn cmd_hessian(dir: &Path, o: &HessianOverrides) -> CliResult<HessianReport> {
    let (cfg, summary) = load_run(dir)?;
    let hash = summary.config_hash;
    let ck_path = dir.join(CHECKPOINT_MIN);
    let params = load_checkpoint(dir, CHECKPOINT_MIN, &hash)?.params()?;
    let model = build_model(&cfg)?;
    let train_set = load_split(&cfg, Split::Train)?;
    let h = &cfg.hessian;
    let scope = o.scope.unwrap_or(h.scope);
    let seed = o.seed.unwrap_or(h.seed);
    let size = o.subset.unwrap_or(h.batch_size).max(1);
    let (batch, batch_spec) = hessian_batch(&train_set.samples, size, seed, h.full || o.full);
    let obj = ModelObjective::new(&model, batch, params, scope)?;
    let opts = PowerIterationOptions {
        tol: h.tol,
        max_iter: h.max_iter,
        seed,
        max_restarts: h.max_restarts,
        fd_scale: h.fd_scale,
    };
    let res = largest_eigenvalue(&obj, &opts)?;
    if !res.converged {
        log::warn!(
            "power iteration stopped after {} iterations with residual {:.3e}; reporting the last estimate",
            res.iterations,
            res.residual
        );
    }
    let report = HessianReport {
        lambda_max: res.lambda,
        iterations: res.iterations,
        residual: res.residual,
        converged: res.converged,
        negative: res.lambda < 0.0,
        parameter_scope: scope,
        batch_spec,
        dim: obj.dim(),
        seed: res.seed,
        tol: h.tol,
        max_iter: h.max_iter,
        fd_scale: h.fd_scale,
        checkpoint_hash: sha256_file(&ck_path)?,
        config_hash: hash,
    };
    write_json(&dir.join(HESSIAN_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: PathBuf,
    pub summary: Summary,
    pub ratios: Option<(f64, f64)>,
    pub lambda_max: Option<f64>,
}

/// Collects the summary rows of finished runs, refusing any run whose
/// artifacts disagree on the config hash.
pub fn cmd_report(dirs: &[PathBuf]) -> CliResult<Vec<ReportRow>> {
    dirs.iter().map(|d| report_row(d)).collect()
}

fn report_row(dir: &Path) -> CliResult<ReportRow> {
    let (_, summary) = load_run(dir)?;
    let hash = summary.config_hash.clone();
    let (_, traj_hash) = read_trajectory(&dir.join(TRAJECTORY_FILE))?;
    if traj_hash != hash {
        return Err(mismatch(dir, TRAJECTORY_FILE, &traj_hash, &hash));
    }
    for name in [CHECKPOINT_INIT, CHECKPOINT_MIN, CHECKPOINT_FINAL] {
        load_checkpoint(dir, name, &hash)?;
    }
    let ratios = if dir.join(LANDSCAPE_FILE).is_file() {
        let l: LandscapeReport = read_json(&dir.join(LANDSCAPE_FILE))?;
        if l.config_hash != hash {
            return Err(mismatch(dir, LANDSCAPE_FILE, &l.config_hash, &hash));
        }
        Some((l.ratio1, l.ratio2))
    } else {
        None
    };
    let lambda_max = if dir.join(HESSIAN_FILE).is_file() {
        let h: HessianReport = read_json(&dir.join(HESSIAN_FILE))?;
        if h.config_hash != hash {
            return Err(mismatch(dir, HESSIAN_FILE, &h.config_hash, &hash));
        }
        if h.checkpoint_hash != sha256_file(&dir.join(CHECKPOINT_MIN))? {
            return Err(CliError::Artifact(format!(
                "{}: {HESSIAN_FILE} was computed from a different {CHECKPOINT_MIN}",
                dir.display()
            )));
        }
        Some(h.lambda_max)
    } else {
        None
    };
    Ok(ReportRow {
        run: dir.to_path_buf(),
        summary,
        ratios,
        lambda_max,
    })
}

/// Plain-text table, one line per run.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut out = String::from("n_qc  depth  params   epoch  test_loss  test_acc  PC1     PC2     lambda_max\n");
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    for r in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{:<5} {:<6} {:<8} {:<6} {:<10.6} {:<9.4} {:<7} {:<7} {}\n",
            s.n_qc,
            s.depth,
            s.n_variational,
            s.min_loss_epoch,
            s.test_loss_at_min,
            s.test_acc_at_min,
            opt(r.ratios.map(|x| x.0), 4),
            opt(r.ratios.map(|x| x.1), 4),
            opt(r.lambda_max, 4)
        ));
    }
    out
}
