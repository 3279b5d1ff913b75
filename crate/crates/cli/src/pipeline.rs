//! Training and evaluation shared by the commands: per-fold training with
//! optional resumption, loading trained models from disk, and fold-ensemble
//! evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use catanet_core::baselines::{naive_mean_predictor, NaiveMeanPredictor, VariantId, VariantSpec};
use catanet_core::dataset::{DatasetSplit, Frame, VideoSequence};
use catanet_core::evaluation::{build_report, ensemble_average, MetricsReport, PredictionTrack, SpeedStats};
use catanet_core::model::checkpoint::META_FILE;
use catanet_core::model::{
    load_checkpoint, save_checkpoint, CataNet, CheckpointMeta, FramePrediction, InferenceSession, ModelConfig,
};
use catanet_core::training::{fold_init_seed, run_stages, write_stage_logs, AuditCounts, LabelAudit, StageData, StageLog};
use catanet_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SPLIT_FILE: &str = "split.json";
pub const NAIVE_FILE: &str = "naive.json";
pub const STAGE_LOG_FILE: &str = "stage_log.csv";

/// Outcome of training one fold.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub fold: usize,
    pub net: CataNet<f32>,
    pub logs: Vec<StageLog>,
    pub audit: AuditCounts,
    pub trained_videos: BTreeSet<String>,
    pub val_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum TrainedVariant {
    Network(Vec<TrainedFold>),
    Naive(NaiveMeanPredictor),
}

fn lookup<'a>(by_id: &BTreeMap<&str, &'a VideoSequence>, ids: &[String]) -> Result<Vec<&'a VideoSequence>> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::validation(format!("split references unknown video `{id}`")))
        })
        .collect()
}

/// Trains every fold of `split` through stage `until`. With `resume`, fold
/// `k` continues from `resume[k]` instead of a fresh initialization; the
/// stage-order check then rejects networks that are not exactly one stage behind.
pub fn train_variant(
    videos: &[VideoSequence],
    split: &DatasetSplit,
    spec: &VariantSpec,
    until: u8,
    resume: Option<Vec<CataNet<f32>>>,
) -> Result<TrainedVariant> {
    split.validate()?;
    let by_id: BTreeMap<&str, &VideoSequence> = videos.iter().map(|v| (v.video_id.as_str(), v)).collect();
    if !spec.needs_network {
        let train = lookup(&by_id, &split.train_ids)?;
        return Ok(TrainedVariant::Naive(naive_mean_predictor(&train)?));
    }
    let mut schedule = spec.schedule.clone();
    schedule.stages.retain(|s| s.stage_id <= until);
    if let Some(r) = &resume {
        if r.len() != split.folds.len() {
            return Err(Error::validation(format!(
                "{} checkpoints to resume from, but the split has {} folds",
                r.len(),
                split.folds.len()
            )));
        }
    }
    let mut resume = resume.map(|v| v.into_iter());
    let mut folds = Vec::with_capacity(split.folds.len());
    for (k, fold) in split.folds.iter().enumerate() {
        let audit = LabelAudit::new();
        let data = StageData {
            train: lookup(&by_id, &fold.train_ids)?,
            val: lookup(&by_id, &fold.val_ids)?,
            audit: &audit,
            fold: k,
        };
        let mut net = match resume.as_mut().and_then(|it| it.next()) {
            Some(net) => {
                if net.config != spec.model {
                    return Err(Error::validation(format!(
                        "checkpoint for fold {k} was built with a different model config"
                    )));
                }
                net
            }
            None => CataNet::<f32>::new(spec.model.clone(), fold_init_seed(&schedule, k))?,
        };
        let logs = run_stages(&mut net, &data, &schedule)?;
        folds.push(TrainedFold {
            fold: k,
            net,
            logs,
            audit: audit.counts(),
            trained_videos: audit.trained_videos(),
            val_ids: fold.val_ids.clone(),
        });
    }
    Ok(TrainedVariant::Network(folds))
}

/// Training provenance stored in each checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldProvenance {
    pub schedule: catanet_core::training::TrainingSchedule,
    pub label_reads: AuditCounts,
    pub trained_videos: Vec<String>,
    pub val_ids: Vec<String>,
    pub stages_run: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveFile {
    pub variant: VariantId,
    pub time_scale: f64,
    pub predictor: NaiveMeanPredictor,
}

pub fn fold_dir(root: &Path, fold: usize) -> PathBuf {
    root.join(format!("fold-{fold}"))
}

/// Writes checkpoints (or the naive predictor), stage logs and the split.
pub fn save_trained(
    trained: &TrainedVariant,
    spec: &VariantSpec,
    split: &DatasetSplit,
    time_scale: f64,
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(SPLIT_FILE), split)?;
    match trained {
        TrainedVariant::Naive(p) => {
            let dir = out.join("naive");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_json(
                &dir.join(NAIVE_FILE),
                &NaiveFile {
                    variant: spec.id,
                    time_scale,
                    predictor: *p,
                },
            )
        }
        TrainedVariant::Network(folds) => {
            for f in folds {
                let dir = fold_dir(out, f.fold);
                let mut meta = CheckpointMeta::for_model(&f.net, spec.schedule.seed, time_scale, spec.id.as_str());
                meta.fold = Some(f.fold);
                let prov = FoldProvenance {
                    schedule: spec.schedule.clone(),
                    label_reads: f.audit,
                    trained_videos: f.trained_videos.iter().cloned().collect(),
                    val_ids: f.val_ids.clone(),
                    stages_run: f.logs.iter().map(|l| l.stage).collect(),
                };
                meta.training = serde_json::to_value(prov).expect("provenance serializes");
                save_checkpoint(&f.net, &meta, &dir)?;
                write_stage_logs(&f.logs, &dir.join(STAGE_LOG_FILE))?;
            }
            Ok(())
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Anything that maps a whole video to per-frame predictions.
pub trait VideoPredictor {
    fn predict_video(&self, video: &VideoSequence) -> Result<Vec<FramePrediction>>;
}

impl VideoPredictor for CataNet<f32> {
    fn predict_video(&self, video: &VideoSequence) -> Result<Vec<FramePrediction>> {
        Ok(self.forward_video(video)?.iter().map(|o| o.prediction()).collect())
    }
}

impl VideoPredictor for NaiveMeanPredictor {
    fn predict_video(&self, video: &VideoSequence) -> Result<Vec<FramePrediction>> {
        Ok(NaiveMeanPredictor::predict_video(self, video))
    }
}

/// Trained models read back from disk: one network per fold, or the naive predictor.
#[derive(Debug, Clone)]
pub enum LoadedModels {
    Networks { nets: Vec<CataNet<f32>>, metas: Vec<CheckpointMeta> },
    Naive(NaiveFile),
}

impl LoadedModels {
    pub fn variant(&self) -> String {
        match self {
            LoadedModels::Networks { metas, .. } => metas[0].variant.clone(),
            LoadedModels::Naive(n) => n.variant.to_string(),
        }
    }

    pub fn time_scale(&self) -> f64 {
        match self {
            LoadedModels::Networks { metas, .. } => metas[0].time_scale,
            LoadedModels::Naive(n) => n.time_scale,
        }
    }

    pub fn predictors(&self) -> Vec<&dyn VideoPredictor> {
        match self {
            LoadedModels::Networks { nets, .. } => nets.iter().map(|n| n as &dyn VideoPredictor).collect(),
            LoadedModels::Naive(n) => vec![&n.predictor as &dyn VideoPredictor],
        }
    }

    pub fn config(&self) -> Option<&ModelConfig> {
        match self {
            LoadedModels::Networks { nets, .. } => Some(&nets[0].config),
            LoadedModels::Naive(_) => None,
        }
    }

    /// A fresh streaming ensemble over the loaded networks.
    pub fn stream(&self) -> Result<EnsembleStream<'_>> {
        match self {
            LoadedModels::Networks { nets, .. } => Ok(EnsembleStream {
                sessions: nets.iter().map(|n| n.session()).collect(),
            }),
            LoadedModels::Naive(_) => Err(Error::validation("the naive predictor has no streaming network")),
        }
    }
}

/// Model directories under `root`: `fold-*` checkpoints or `naive/`. A
/// directory that is itself a checkpoint is returned as is.
pub fn discover_model_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(META_FILE).exists() || root.join(NAIVE_FILE).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).exists() || p.join(NAIVE_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, "no checkpoints found"));
    }
    Ok(dirs)
}

/// Loads the models in `dirs`; every network must share one model config and time unit.
pub fn load_models(dirs: &[PathBuf]) -> Result<LoadedModels> {
    if dirs.is_empty() {
        return Err(Error::validation("no checkpoints given"));
    }
    let naive: Vec<&PathBuf> = dirs.iter().filter(|d| d.join(NAIVE_FILE).exists()).collect();
    if !naive.is_empty() {
        if dirs.len() != 1 {
            return Err(Error::validation("the naive predictor cannot be mixed with other checkpoints"));
        }
        return Ok(LoadedModels::Naive(read_json(&naive[0].join(NAIVE_FILE))?));
    }
    let mut nets = Vec::new();
    let mut metas: Vec<CheckpointMeta> = Vec::new();
    for d in dirs {
        let (net, meta) = load_checkpoint::<f32>(d)?;
        if let Some(first) = metas.first() {
            if first.model != meta.model {
                return Err(Error::validation(format!(
                    "checkpoint {} uses a different model config than {}",
                    d.display(),
                    dirs[0].display()
                )));
            }
            if first.time_scale != meta.time_scale {
                return Err(Error::validation("checkpoints use different time units"));
            }
        }
        nets.push(net);
        metas.push(meta);
    }
    Ok(LoadedModels::Networks { nets, metas })
}

/// Fold-ensemble predictions for each video.
pub fn predict_tracks(predictors: &[&dyn VideoPredictor], videos: &[&VideoSequence]) -> Result<Vec<PredictionTrack>> {
    if predictors.is_empty() {
        return Err(Error::validation("no predictors"));
    }
    videos
        .iter()
        .map(|v| {
            let outs = predictors.iter().map(|p| p.predict_video(v)).collect::<Result<Vec<_>>>()?;
            PredictionTrack::new(v, ensemble_average(&outs)?)
        })
        .collect()
}

pub fn evaluate(
    predictors: &[&dyn VideoPredictor],
    videos: &[&VideoSequence],
    variant: &str,
    speed: Option<SpeedStats>,
) -> Result<(MetricsReport, Vec<PredictionTrack>)> {
    let tracks = predict_tracks(predictors, videos)?;
    Ok((build_report(&tracks, speed, variant)?, tracks))
}

/// One step of online inference; everything the stream and bench commands run.
pub trait StreamModel {
    fn reset(&mut self);
    fn step(&mut self, frame: &Frame, elapsed: f64) -> Result<FramePrediction>;
}

/// Streaming sessions of several fold networks, averaged per frame.
pub struct EnsembleStream<'a> {
    sessions: Vec<InferenceSession<'a, f32>>,
}

impl StreamModel for EnsembleStream<'_> {
    fn reset(&mut self) {
        self.sessions.iter_mut().for_each(|s| s.reset());
    }

    fn step(&mut self, frame: &Frame, elapsed: f64) -> Result<FramePrediction> {
        let outs = self
            .sessions
            .iter_mut()
            .map(|s| Ok(vec![s.step(frame, elapsed)?.prediction()]))
            .collect::<Result<Vec<_>>>()?;
        Ok(ensemble_average(&outs)?.remove(0))
    }
}
