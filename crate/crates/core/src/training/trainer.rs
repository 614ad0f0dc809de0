use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::SliceDataset;
use super::loss::dice_loss_with_logits;
use super::optimizer::{optimizer_step, Sgd};
use super::{lr_at, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{confusion_of, CaseMetrics, ConfusionCounts};
use crate::fsutil::write_atomic;
use crate::model::{LabelMask, LabelSchema, Volume};
use crate::network::{Checkpoint, NetworkConfig, NetworkParams, ResEncUNet, Tensor};
use crate::preprocess::PreprocessedIndex;

pub const BEST_CHECKPOINT: &str = "checkpoint_best.ckpt";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub wallclock_s: f64,
}

/// Everything a training run mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub iteration: usize,
    pub params: NetworkParams<f32>,
    pub momentum: Vec<f32>,
    pub rng: ChaCha8Rng,
    pub loss_sum: f64,
    pub loss_count: usize,
}

impl TrainState {
    pub fn new(net: &ResEncUNet, config: &TrainConfig) -> Self {
        let params = net.default_params::<f32>();
        TrainState {
            epoch: 0,
            iteration: 0,
            momentum: vec![0.0; params.len()],
            params,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    /// Applies one update; a non-finite gradient is reported with the layer it belongs to.
    pub fn step(&mut self, grads: &[f32], lr: f64, sgd: &Sgd) -> Result<()> {
        optimizer_step(self.params.values_mut(), &mut self.momentum, grads, lr, sgd).map_err(|e| match e {
            Error::Divergence(msg) => {
                let i = grads.iter().position(|g| !g.is_finite()).unwrap_or(0);
                let layer = self
                    .params
                    .layout()
                    .entries()
                    .iter()
                    .find(|en| en.range().contains(&i))
                    .map_or("?", |en| en.path.as_str());
                Error::Divergence(format!(
                    "{msg} in {layer}, epoch {} iteration {}",
                    self.epoch, self.iteration
                ))
            }
            other => other,
        })?;
        self.iteration += 1;
        Ok(())
    }

    fn record_loss(&mut self, loss: f64) {
        self.loss_sum += loss;
        self.loss_count += 1;
    }

    fn take_mean_loss(&mut self) -> f64 {
        let m = self.loss_sum / self.loss_count.max(1) as f64;
        self.loss_sum = 0.0;
        self.loss_count = 0;
        m
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub held_out: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub params: NetworkParams<f32>,
    pub best_params: NetworkParams<f32>,
    pub out_dir: Option<PathBuf>,
}

impl FoldResult {
    pub fn best_val_dice(&self) -> Option<f64> {
        self.epochs[self.best_epoch].val_dice
    }

    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }
}

/// Argmax labels (1 where the foreground logit is strictly larger) for each image.
pub fn predict_slices(
    net: &ResEncUNet,
    params: &NetworkParams<f32>,
    images: &[&[f32]],
    rows: usize,
    cols: usize,
    batch: usize,
) -> Result<Vec<Vec<u8>>> {
    let p = rows * cols;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * p);
        for img in chunk {
            if img.len() != p {
                return Err(Error::Shape(format!("slice has {} pixels, expected {rows}x{cols}", img.len())));
            }
            data.extend_from_slice(img);
        }
        let logits = net.forward(params, &Tensor::from_vec(chunk.len(), 1, rows, cols, data))?;
        for n in 0..chunk.len() {
            let (bg, fg) = (logits.channel(n, 0), logits.channel(n, 1));
            out.push(bg.iter().zip(fg).map(|(b, f)| u8::from(f > b)).collect());
        }
    }
    Ok(out)
}

/// Binary prediction for every slice of a preprocessed volume.
pub fn predict_volume(net: &ResEncUNet, params: &NetworkParams<f32>, image: &Volume, batch: usize) -> Result<LabelMask> {
    let e = image.extents();
    let p = e.plane_len();
    let planes: Vec<&[f32]> = image.data().chunks(p).collect();
    let labels = predict_slices(net, params, &planes, e.rows, e.cols, batch).map_err(|err| err.for_case(image.case_id()))?;
    LabelMask::new(e, image.spacing(), labels.concat(), LabelSchema::binary("lesion"))
        .map(|m| m.with_orientation(image.orientation().copied()))
}

/// Per-case metrics over the given slices, cases in order of first appearance.
pub fn evaluate_slices(
    net: &ResEncUNet,
    params: &NetworkParams<f32>,
    data: &SliceDataset,
    indices: &[usize],
    batch: usize,
) -> Result<Vec<CaseMetrics>> {
    let images: Vec<&[f32]> = indices.iter().map(|&i| data.slices[i].image.as_slice()).collect();
    let preds = predict_slices(net, params, &images, data.rows, data.cols, batch)?;
    let mut order: Vec<&str> = Vec::new();
    let mut counts: BTreeMap<&str, ConfusionCounts> = BTreeMap::new();
    for (&i, pred) in indices.iter().zip(&preds) {
        let s = &data.slices[i];
        let c = confusion_of(pred, &s.mask)?;
        let acc = counts.entry(&s.case_id).or_insert_with(|| {
            order.push(&s.case_id);
            ConfusionCounts::default()
        });
        *acc = acc.merge(&c);
    }
    Ok(order.iter().map(|id| CaseMetrics::from_counts(*id, &counts[id])).collect())
}

fn checkpoint_meta(config: &TrainConfig, held_out: &[usize], rec: &EpochRecord) -> serde_json::Value {
    serde_json::json!({
        "train_config": config,
        "held_out_folds": held_out,
        "epoch": rec.epoch,
        "train_loss": rec.train_loss,
        "val_dice": rec.val_dice,
    })
}

fn save_checkpoint(dir: &Path, name: &str, net: &NetworkConfig, params: &NetworkParams<f32>, meta: serde_json::Value) -> Result<()> {
    Checkpoint {
        network: net.clone(),
        seed: net.seed,
        train: Some(meta),
        params: params.clone(),
    }
    .save(&dir.join(name))
}

/// Trains on every slice outside `held_out` and validates on the rest each epoch.
///
/// With `out_dir`, writes the JSON-lines log and the best and final checkpoints there.
pub fn train_on_slices(
    data: &SliceDataset,
    held_out: &[usize],
    net_config: &NetworkConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FoldResult> {
    config.validate()?;
    let net = ResEncUNet::new(net_config.clone())?;
    let (train, val) = data.split(held_out);
    if train.is_empty() {
        return Err(Error::Data(format!("no training slices outside folds {held_out:?}")));
    }
    net.check_input(&Tensor::<f32>::zeros(1, net_config.input_channels, data.rows, data.cols))?;
    let iterations = config.iterations_for(train.len());
    let sgd = config.sgd();
    let mut state = TrainState::new(&net, config);
    let mut best: Option<(usize, NetworkParams<f32>)> = None;
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut log = String::new();
    let start = Instant::now();
    for epoch in 0..config.epochs {
        state.epoch = epoch;
        let lr = lr_at(epoch, config)?;
        for _ in 0..iterations {
            let picks: Vec<usize> = (0..config.batch_size).map(|_| train[state.rng.random_range(0..train.len())]).collect();
            let (x, target) = data.batch(&picks);
            let (logits, tape) = net.forward_train(&state.params, &x)?;
            let (loss, dlogits) = dice_loss_with_logits(&logits, &target, config.dice_smooth, config.batch_dice)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "loss became {loss} at epoch {epoch} iteration {}",
                    state.iteration
                )));
            }
            let grads = net.backward(&state.params, &tape, &dlogits)?;
            state.step(&grads, lr, &sgd)?;
            state.record_loss(loss);
        }
        let val_dice = if val.is_empty() {
            None
        } else {
            let cases = evaluate_slices(&net, &state.params, data, &val, config.batch_size)?;
            Some(cases.iter().map(|c| c.dice).sum::<f64>() / cases.len() as f64)
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: state.take_mean_loss(),
            val_dice,
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        let improved = match &best {
            None => true,
            Some((b, _)) => match (rec.val_dice, records[*b].val_dice) {
                (Some(v), Some(bv)) => v > bv,
                _ => rec.train_loss < records[*b].train_loss,
            },
        };
        if improved {
            best = Some((epoch, state.params.clone()));
        }
        log.push_str(&serde_json::to_string(&rec)?);
        log.push('\n');
        if let Some(dir) = out_dir {
            write_atomic(&dir.join(TRAIN_LOG), log.as_bytes())?;
            if improved {
                save_checkpoint(dir, BEST_CHECKPOINT, net_config, &state.params, checkpoint_meta(config, held_out, &rec))?;
            }
        }
        records.push(rec);
    }
    if let Some(dir) = out_dir {
        let last = records.last().expect("at least one epoch");
        save_checkpoint(dir, FINAL_CHECKPOINT, net_config, &state.params, checkpoint_meta(config, held_out, last))?;
    }
    let (best_epoch, best_params) = best.expect("at least one epoch");
    Ok(FoldResult {
        held_out: held_out.to_vec(),
        epochs: records,
        best_epoch,
        params: state.params,
        best_params,
        out_dir: out_dir.map(Path::to_path_buf),
    })
}

/// Trains the model that holds out `fold`, from a preprocessed dataset on disk.
pub fn train_fold(
    index: &PreprocessedIndex,
    fold: usize,
    net_config: &NetworkConfig,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<FoldResult> {
    if fold >= config.folds {
        return Err(Error::Config(format!("fold {fold} out of range for {} folds", config.folds)));
    }
    let data = SliceDataset::from_index(index)?;
    train_on_slices(&data, &[fold], net_config, config, Some(out_dir))
}
