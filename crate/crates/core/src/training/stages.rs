use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::audit::{AuditCounts, LabelAudit};
use super::compute::{apply_step, cnn_batch, rnn_full, rnn_segment, BatchStats, DescriptorSource, NetGrads};
use super::optim::{Adam, EarlyStopping, StopDecision};
use super::{Component, LogRow, LossKind, StageLog, StageSpec, TrainingSchedule};
use crate::dataset::{stratified_sample, DatasetSplit, FrameSample, VideoSequence};
use crate::error::{ensure, Error, Result};
use crate::model::{CataNet, ModelConfig};

/// Videos available to one stage of one fold.
pub struct StageData<'a> {
    pub train: Vec<&'a VideoSequence>,
    /// Used only for validation losses and early stopping.
    pub val: Vec<&'a VideoSequence>,
    pub audit: &'a LabelAudit,
    pub fold: usize,
}

/// Consecutive non-overlapping `(start, end)` windows tiling `[0, len)`.
pub fn tbptt_segments(video_length: usize, window: usize) -> Vec<(usize, usize)> {
    let window = window.max(1);
    (0..video_length)
        .step_by(window)
        .map(|s| (s, (s + window).min(video_length)))
        .collect()
}

/// Seed for one (fold, stage) pair; stage 0 seeds weight initialization.
pub(crate) fn derive_seed(seed: u64, fold: usize, stage: u8) -> u64 {
    let k = 1 + stage as u64 + 16 * fold as u64;
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k)
}

/// Runs one training stage in place. Components frozen by the stage are
/// never differentiated, so their weights stay bitwise unchanged. When
/// validation data exists, the best-validation weights are restored at the end.
pub fn train_stage(
    net: &mut CataNet<f32>,
    data: &StageData,
    stage: &StageSpec,
    schedule: &TrainingSchedule,
) -> Result<StageLog> {
    schedule.validate()?;
    ensure!(!data.train.is_empty(), "stage {} has no training videos", stage.stage_id);
    ensure!((1..=4).contains(&stage.stage_id), "stage id must be 1..=4");
    ensure!(
        net.stage_reached + 1 == stage.stage_id,
        "stage {} needs a network that completed stage {}, this one completed stage {}",
        stage.stage_id,
        stage.stage_id - 1,
        net.stage_reached
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(schedule.seed, data.fold, stage.stage_id));
    let log = match stage.loss {
        LossKind::CnnLoss => cnn_stage(net, data, stage, schedule, &mut rng)?,
        LossKind::RnnLoss => {
            net.discard_aux_heads();
            rnn_stage(net, data, stage, schedule, &mut rng)?
        }
    };
    net.stage_reached = stage.stage_id;
    Ok(log)
}

/// Bookkeeping shared by both stage kinds: logging and early stopping.
struct Tracker {
    log: StageLog,
    stopper: EarlyStopping,
    best: Option<CataNet<f32>>,
    running: BatchStats,
    phase: bool,
    experience: bool,
}

impl Tracker {
    fn new(stage: &StageSpec, phase: bool, experience: bool) -> Self {
        Tracker {
            log: StageLog {
                stage: stage.stage_id,
                ..Default::default()
            },
            stopper: EarlyStopping::new(stage.early_stopping.patience),
            best: None,
            running: BatchStats::default(),
            phase,
            experience,
        }
    }

    fn row(&mut self, split: &str, s: &BatchStats) {
        self.log.rows.push(LogRow {
            stage: self.log.stage,
            step: self.log.steps,
            split: split.to_string(),
            loss: s.mean_loss(),
            phase_acc: self.phase.then(|| s.phase_acc()),
            exp_acc: self.experience.then(|| s.experience_acc()),
        });
    }

    fn flush_train(&mut self) {
        if self.running.frames > 0 {
            let s = std::mem::take(&mut self.running);
            self.row("train", &s);
        }
    }

    /// Records a validation result; returns true when training should stop.
    fn validated(&mut self, net: &CataNet<f32>, s: &BatchStats) -> bool {
        self.row("val", s);
        match self.stopper.observe(s.mean_loss()) {
            StopDecision::Improved => {
                self.best = Some(net.clone());
                false
            }
            StopDecision::Continue => false,
            StopDecision::Stop => {
                self.log.stopped_early = true;
                true
            }
        }
    }

    fn finish(mut self, net: &mut CataNet<f32>) -> StageLog {
        self.flush_train();
        self.log.evaluations = self.stopper.evaluations();
        if let Some(best) = self.best.take() {
            let stage_reached = net.stage_reached;
            *net = best;
            net.stage_reached = stage_reached;
            self.log.best_eval = self.stopper.best_eval();
            self.log.best_val_loss = Some(self.stopper.best_loss());
        }
        self.log
    }
}

fn eval_every(batches_per_epoch: usize, interval: f64) -> usize {
    ((batches_per_epoch as f64 * interval).round() as usize).max(1)
}

fn cnn_validate(net: &CataNet<f32>, samples: &[FrameSample], sched: &TrainingSchedule, audit: &LabelAudit) -> Result<BatchStats> {
    let mut total = BatchStats::default();
    for chunk in samples.chunks(64) {
        let frames: Vec<_> = chunk.iter().map(|s| s.image).collect();
        let anns: Vec<_> = chunk.iter().map(|s| s.annotation).collect();
        total.merge(&cnn_batch(net, &frames, &anns, &sched.cnn_terms, sched.alpha, audit, None)?);
    }
    Ok(total)
}

fn cnn_stage(
    net: &mut CataNet<f32>,
    data: &StageData,
    stage: &StageSpec,
    sched: &TrainingSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<StageLog> {
    let terms = sched.cnn_terms;
    let mut tracker = Tracker::new(stage, terms.phase, terms.experience);
    if stage.epochs == 0 {
        return Ok(tracker.finish(net));
    }
    ensure!(net.aux.is_some(), "frame-level heads were already discarded");
    let samples = stratified_sample(&data.train, sched.frames_per_phase, rng.random())?;
    let used: BTreeSet<usize> = samples.iter().map(|s| s.video).collect();
    for &v in &used {
        data.audit.record_training_video(&data.train[v].video_id);
    }
    let val = if data.val.is_empty() {
        Vec::new()
    } else {
        stratified_sample(&data.val, sched.val_frames_per_phase, rng.random())?
    };

    let train_encoder = !stage.is_frozen(Component::Encoder);
    let mut grads = NetGrads::for_net(net, train_encoder, false, false, true);
    let mut opt = Adam::new(stage.learning_rate, sched.optimizer);
    let bs = sched.batch_size_stage1;
    let every = eval_every(samples.len().div_ceil(bs), stage.early_stopping.eval_interval);

    if !val.is_empty() {
        let s = cnn_validate(net, &val, sched, data.audit)?;
        tracker.validated(net, &s);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    'epochs: for _ in 0..stage.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(bs) {
            grads.zero();
            let frames: Vec<_> = chunk.iter().map(|&i| samples[i].image).collect();
            let anns: Vec<_> = chunk.iter().map(|&i| samples[i].annotation).collect();
            let s = cnn_batch(net, &frames, &anns, &terms, sched.alpha, data.audit, Some(&mut grads))?;
            ensure_finite(&s, stage)?;
            apply_step(net, &grads, &mut opt);
            tracker.running.merge(&s);
            tracker.log.steps += 1;
            if tracker.log.steps % every == 0 {
                tracker.flush_train();
                if !val.is_empty() {
                    let s = cnn_validate(net, &val, sched, data.audit)?;
                    if tracker.validated(net, &s) {
                        break 'epochs;
                    }
                }
            }
        }
    }
    if tracker.log.steps % every != 0 && !tracker.log.stopped_early && !val.is_empty() {
        tracker.flush_train();
        let s = cnn_validate(net, &val, sched, data.audit)?;
        tracker.validated(net, &s);
    }
    Ok(tracker.finish(net))
}

fn ensure_finite(s: &BatchStats, stage: &StageSpec) -> Result<()> {
    if s.loss.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "stage {} diverged (non-finite loss); lower the learning rate",
            stage.stage_id
        )))
    }
}

/// Indices of `idx` sorted by decreasing video length (stable).
fn by_length(videos: &[&VideoSequence], mut idx: Vec<usize>) -> Vec<usize> {
    idx.sort_by_key(|&i| std::cmp::Reverse(videos[i].len()));
    idx
}

fn rnn_validate(
    net: &CataNet<f32>,
    val: &[&VideoSequence],
    cached: Option<&[Array2<f32>]>,
    sched: &TrainingSchedule,
    audit: &LabelAudit,
) -> Result<BatchStats> {
    let fresh;
    let descs = match cached {
        Some(d) => d,
        None => {
            fresh = val.iter().map(|v| net.encode_video(v)).collect::<Result<Vec<_>>>()?;
            &fresh[..]
        }
    };
    let order = by_length(val, (0..val.len()).collect());
    let mut total = BatchStats::default();
    for chunk in order.chunks(8) {
        let videos: Vec<&VideoSequence> = chunk.iter().map(|&i| val[i]).collect();
        let refs: Vec<&Array2<f32>> = chunk.iter().map(|&i| &descs[i]).collect();
        let s = rnn_full(
            net,
            &videos,
            &DescriptorSource::Cached(&refs),
            &sched.rnn_terms,
            sched.alpha,
            audit,
            None,
        )?;
        total.merge(&s);
    }
    Ok(total)
}

fn rnn_stage(
    net: &mut CataNet<f32>,
    data: &StageData,
    stage: &StageSpec,
    sched: &TrainingSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<StageLog> {
    let terms = sched.rnn_terms;
    let mut tracker = Tracker::new(stage, terms.phase, terms.experience);
    if stage.epochs == 0 {
        return Ok(tracker.finish(net));
    }
    for v in &data.train {
        data.audit.record_training_video(&v.video_id);
    }
    let train_encoder = !stage.is_frozen(Component::Encoder);
    let train_rnn = !stage.is_frozen(Component::Rnn);
    let mut grads = NetGrads::for_net(net, train_encoder, train_rnn, train_rnn, false);
    let mut opt = Adam::new(stage.learning_rate, sched.optimizer);

    // A frozen encoder yields the same descriptors all stage long.
    let (train_descs, val_descs) = if train_encoder {
        (None, None)
    } else {
        let enc = |vs: &[&VideoSequence]| vs.iter().map(|v| net.encode_video(v)).collect::<Result<Vec<_>>>();
        (Some(enc(&data.train)?), Some(enc(&data.val)?))
    };

    let vpb = sched.videos_per_batch;
    let every = eval_every(data.train.len().div_ceil(vpb), stage.early_stopping.eval_interval);
    let has_val = !data.val.is_empty();
    if has_val {
        let s = rnn_validate(net, &data.val, val_descs.as_deref(), sched, data.audit)?;
        tracker.validated(net, &s);
    }

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut batches = 0usize;
    'epochs: for _ in 0..stage.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(vpb) {
            let idx = by_length(&data.train, chunk.to_vec());
            let videos: Vec<&VideoSequence> = idx.iter().map(|&i| data.train[i]).collect();
            let refs: Vec<&Array2<f32>> = match &train_descs {
                Some(d) => idx.iter().map(|&i| &d[i]).collect(),
                None => Vec::new(),
            };
            let source = if train_descs.is_some() {
                DescriptorSource::Cached(&refs)
            } else {
                DescriptorSource::Encoder
            };
            let mut state = net.temporal.zero_state(videos.len());
            for (start, _) in tbptt_segments(videos[0].len(), sched.tbptt_window) {
                grads.zero();
                let s = rnn_segment(
                    net,
                    &videos,
                    &source,
                    start,
                    sched.tbptt_window,
                    &mut state,
                    &terms,
                    sched.alpha,
                    data.audit,
                    Some(&mut grads),
                )?;
                ensure_finite(&s, stage)?;
                apply_step(net, &grads, &mut opt);
                tracker.running.merge(&s);
                tracker.log.steps += 1;
            }
            batches += 1;
            if batches % every == 0 {
                tracker.flush_train();
                if has_val {
                    let s = rnn_validate(net, &data.val, val_descs.as_deref(), sched, data.audit)?;
                    if tracker.validated(net, &s) {
                        break 'epochs;
                    }
                }
            }
        }
    }
    if batches % every != 0 && !tracker.log.stopped_early && has_val {
        tracker.flush_train();
        let s = rnn_validate(net, &data.val, val_descs.as_deref(), sched, data.audit)?;
        tracker.validated(net, &s);
    }
    Ok(tracker.finish(net))
}

/// Runs every remaining stage of `schedule` on `net`, in order.
pub fn run_stages(net: &mut CataNet<f32>, data: &StageData, schedule: &TrainingSchedule) -> Result<Vec<StageLog>> {
    let mut logs = Vec::new();
    for s in &schedule.stages {
        if s.stage_id > net.stage_reached {
            logs.push(train_stage(net, data, s, schedule)?);
        }
    }
    Ok(logs)
}

/// Outcome of training one cross-validation fold.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: usize,
    pub net: CataNet<f32>,
    pub logs: Vec<StageLog>,
    pub audit: AuditCounts,
    pub trained_videos: BTreeSet<String>,
    pub val_ids: Vec<String>,
    /// Best validation loss of the last stage that validated.
    pub final_val_loss: Option<f64>,
}

/// Seed used to initialize the network of fold `fold`.
pub fn fold_init_seed(schedule: &TrainingSchedule, fold: usize) -> u64 {
    derive_seed(schedule.seed, fold, 0)
}

/// One complete run of all stages per fold; test videos are never touched.
pub fn run_full_training(
    videos: &[VideoSequence],
    split: &DatasetSplit,
    config: &ModelConfig,
    schedule: &TrainingSchedule,
) -> Result<Vec<FoldRun>> {
    split.validate()?;
    schedule.validate()?;
    let by_id: BTreeMap<&str, &VideoSequence> = videos.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let lookup = |ids: &[String]| -> Result<Vec<&VideoSequence>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::validation(format!("split references unknown video `{id}`")))
            })
            .collect()
    };
    let mut runs = Vec::with_capacity(split.folds.len());
    for (k, fold) in split.folds.iter().enumerate() {
        let audit = LabelAudit::new();
        let data = StageData {
            train: lookup(&fold.train_ids)?,
            val: lookup(&fold.val_ids)?,
            audit: &audit,
            fold: k,
        };
        let mut net = CataNet::<f32>::new(config.clone(), fold_init_seed(schedule, k))?;
        let logs = run_stages(&mut net, &data, schedule)?;
        let final_val_loss = logs.iter().rev().find_map(|l| l.best_val_loss);
        runs.push(FoldRun {
            fold: k,
            net,
            logs,
            audit: audit.counts(),
            trained_videos: audit.trained_videos(),
            val_ids: fold.val_ids.clone(),
            final_val_loss,
        });
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_examples() {
        assert_eq!(tbptt_segments(100, 48), vec![(0, 48), (48, 96), (96, 100)]);
        assert_eq!(tbptt_segments(48, 48), vec![(0, 48)]);
        assert_eq!(tbptt_segments(10, 48), vec![(0, 10)]);
        assert!(tbptt_segments(0, 48).is_empty());
    }

    #[test]
    fn segments_tile_exactly() {
        for len in 0..120 {
            for w in 1..50 {
                let segs = tbptt_segments(len, w);
                let mut next = 0;
                for &(s, e) in &segs {
                    assert_eq!(s, next);
                    assert!(e > s && e - s <= w);
                    next = e;
                }
                assert_eq!(next, len);
            }
        }
    }
}
