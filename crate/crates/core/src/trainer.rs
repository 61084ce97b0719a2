//! Seeded mini-batch training with per-epoch trajectory snapshots.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::model::{evaluate, gradient, Evaluation, ModelConfig, ModelParams, ParamLayout};
use crate::optim::{AdamState, LrSchedule};
use crate::{Error, Result};

/// RNG stream used for parameter initialization.
const INIT_STREAM: u64 = 0;
/// RNG stream used for epoch shuffles.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    /// Evaluate the epoch-end training loss on the first `n` training samples only.
    pub train_eval_subset: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.train_eval_subset == Some(0) {
            return Err(Error::InvalidArgument("train_eval_subset must be positive".into()));
        }
        Ok(())
    }
}

/// Circuit angles uniform on `[0, pi]`, bias grid zero.
pub fn init_params(seed: u64, layout: ParamLayout) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let mut params = ModelParams::zeros(layout);
    for a in params.angles_mut() {
        *a = rng.random_range(0.0..=std::f64::consts::PI);
    }
    params
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    /// Circuit angles before training.
    pub q_init: Vec<f64>,
    /// Circuit angles after each epoch.
    pub q_epochs: Vec<Vec<f64>>,
    pub initial_train: Evaluation,
    pub initial_test: Evaluation,
    pub records: Vec<EpochRecord>,
    pub min_loss_epoch: usize,
    pub init_params: ModelParams,
    pub min_loss_params: ModelParams,
    pub final_params: ModelParams,
}

impl TrajectoryLog {
    /// Rows of the trajectory matrix: initial snapshot then one per epoch.
    pub fn snapshots(&self) -> Vec<Vec<f64>> {
        std::iter::once(self.q_init.clone())
            .chain(self.q_epochs.iter().cloned())
            .collect()
    }

    pub fn min_loss_record(&self) -> &EpochRecord {
        &self.records[self.min_loss_epoch]
    }
}

fn first_n<'a>(samples: &'a [Sample], n: Option<usize>) -> &'a [Sample] {
    match n {
        Some(n) => &samples[..n.min(samples.len())],
        None => samples,
    }
}

/// Runs the full protocol. `on_epoch` sees each record as soon as it exists.
pub fn train(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrajectoryLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let train_eval = first_n(train_set, cfg.train_eval_subset);

    let mut params = init_params(cfg.seed, model.layout());
    let init_params = params.clone();
    let initial_train = evaluate(&params, train_eval, model)?;
    let initial_test = evaluate(&params, test_set, model)?;
    log::info!(
        "init: train_loss={:.6} test_loss={:.6} test_acc={:.4}",
        initial_train.loss,
        initial_test.loss,
        initial_test.accuracy
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = AdamState::new(params.layout().len());

    let mut q_epochs = Vec::with_capacity(cfg.epochs);
    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut min_loss_epoch = 0;
    let mut min_loss_params = params.clone();

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch);
        order.shuffle(&mut rng);
        for (batch_index, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let lg = gradient(&params, &batch, model)?;
            if !lg.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            adam.step(params.as_mut_slice(), lg.grad.as_slice(), lr)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    },
                    other => other,
                })?;
        }

        let train_eval_result = evaluate(&params, train_eval, model)?;
        let test = evaluate(&params, test_set, model)?;
        if !train_eval_result.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: train_eval_result.loss,
            test_loss: test.loss,
            test_acc: test.accuracy,
        };
        log::info!(
            "epoch {epoch}: lr={lr:.3e} train_loss={:.6} test_loss={:.6} test_acc={:.4}",
            record.train_loss,
            record.test_loss,
            record.test_acc
        );
        on_epoch(&record);
        if epoch == 0 || record.train_loss < records[min_loss_epoch].train_loss {
            min_loss_epoch = epoch;
            min_loss_params = params.clone();
        }
        records.push(record);
        q_epochs.push(params.angles().to_vec());
    }

    Ok(TrajectoryLog {
        q_init: init_params.angles().to_vec(),
        q_epochs,
        initial_train,
        initial_test,
        records,
        min_loss_epoch,
        init_params,
        min_loss_params,
        final_params: params,
    })
}

const TRAJECTORY_MAGIC: &[u8; 8] = b"PQNNTRJ\0";
const TRAJECTORY_VERSION: u32 = 1;

/// Writes snapshot rows as
///
/// ```text
/// magic "PQNNTRJ\0" | version u32 LE | rows u32 LE | cols u64 LE
/// | config hash: 64 ASCII hex bytes | rows*cols f64 LE
/// ```
pub fn write_trajectory(path: &Path, rows: &[Vec<f64>], config_hash: &str) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidArgument("ragged trajectory rows".into()));
    }
    let mut hash = [b'0'; 64];
    let hb = config_hash.as_bytes();
    if hb.len() > 64 {
        return Err(Error::InvalidArgument("config hash longer than 64 bytes".into()));
    }
    hash[..hb.len()].copy_from_slice(hb);
    let mut out = Vec::with_capacity(88 + rows.len() * cols * 8);
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.extend_from_slice(&hash);
    for r in rows {
        for v in r {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a trajectory file back as `(rows, config_hash)`.
pub fn read_trajectory(path: &Path) -> Result<(Vec<Vec<f64>>, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 88 || &bytes[..8] != TRAJECTORY_MAGIC {
        return Err(corrupt("not a trajectory file"));
    }
    if u32::from_le_bytes(bytes[8..12].try_into().unwrap()) != TRAJECTORY_VERSION {
        return Err(corrupt("unsupported trajectory version"));
    }
    let rows = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let hash = String::from_utf8_lossy(&bytes[24..88]).into_owned();
    if bytes.len() != 88 + rows * cols * 8 {
        return Err(corrupt("payload length does not match header"));
    }
    let data: Vec<f64> = bytes[88..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let out = if cols == 0 {
        vec![Vec::new(); rows]
    } else {
        data.chunks_exact(cols).map(<[f64]>::to_vec).collect()
    };
    Ok((out, hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_in_range() {
        let layout = ParamLayout {
            n_qc: 4,
            n_trainable: 50,
            side: 14,
        };
        let a = init_params(7, layout);
        let b = init_params(7, layout);
        let c = init_params(8, layout);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.angles().iter().all(|&x| (0.0..=std::f64::consts::PI).contains(&x)));
        assert!(a.bias().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn trajectory_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let rows = vec![vec![1.0, 2.5, -3.0], vec![0.1, 0.2, 0.3]];
        let hash = "ab".repeat(32);
        write_trajectory(&p, &rows, &hash).unwrap();
        let (back, h) = read_trajectory(&p).unwrap();
        assert_eq!(back, rows);
        assert_eq!(h, hash);
        std::fs::write(&p, b"garbage").unwrap();
        assert!(read_trajectory(&p).unwrap_err().is_format_error());
    }

    #[test]
    fn rejects_bad_config() {
        let schedule = LrSchedule::new(0.1, 0.0, 1, None).unwrap();
        let mut cfg = TrainConfig {
            epochs: 0,
            batch_size: 1,
            seed: 0,
            schedule,
            train_eval_subset: None,
        };
        assert!(cfg.validate().is_err());
        cfg.epochs = 1;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
