//! Comparison and ablation configurations built on the shared network and
//! training harness, plus a duration-statistics predictor used as a floor.

use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{VideoSequence, N_EXPERIENCE, N_PHASES};
use crate::error::{ensure, Error, Result};
use crate::model::{ElapsedMode, FramePrediction, ModelConfig};
use crate::training::{LossTerms, TrainingSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantId {
    #[serde(rename = "catanet")]
    Catanet,
    /// (i) phase supervision only, besides RSD.
    #[serde(rename = "i")]
    AblPhaseOnly,
    /// (ii) experience supervision only, besides RSD.
    #[serde(rename = "ii")]
    AblExpOnly,
    /// (iii) RSD supervision only, elapsed time as input channel.
    #[serde(rename = "iii")]
    AblRsdOnly,
    /// (iv) as (iii) with elapsed time appended after the recurrent network.
    #[serde(rename = "iv")]
    AblElapsedAfter,
    #[serde(rename = "rsdnet")]
    Rsdnet,
    #[serde(rename = "timelstm")]
    Timelstm,
    #[serde(rename = "naive")]
    NaiveMean,
}

impl VariantId {
    pub const ALL: [VariantId; 8] = [
        VariantId::Catanet,
        VariantId::AblPhaseOnly,
        VariantId::AblExpOnly,
        VariantId::AblRsdOnly,
        VariantId::AblElapsedAfter,
        VariantId::Rsdnet,
        VariantId::Timelstm,
        VariantId::NaiveMean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantId::Catanet => "catanet",
            VariantId::AblPhaseOnly => "i",
            VariantId::AblExpOnly => "ii",
            VariantId::AblRsdOnly => "iii",
            VariantId::AblElapsedAfter => "iv",
            VariantId::Rsdnet => "rsdnet",
            VariantId::Timelstm => "timelstm",
            VariantId::NaiveMean => "naive",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, VariantId::Rsdnet | VariantId::Timelstm | VariantId::NaiveMean)
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s.trim().to_ascii_lowercase().as_str() {
            "catanet" => VariantId::Catanet,
            "i" | "abl_phase_only" => VariantId::AblPhaseOnly,
            "ii" | "abl_exp_only" => VariantId::AblExpOnly,
            "iii" | "abl_rsd_only" => VariantId::AblRsdOnly,
            "iv" | "abl_elapsed_after" => VariantId::AblElapsedAfter,
            "rsdnet" => VariantId::Rsdnet,
            "timelstm" => VariantId::Timelstm,
            "naive" | "naive_mean" => VariantId::NaiveMean,
            other => return Err(Error::validation(format!("unknown variant `{other}`"))),
        };
        Ok(v)
    }
}

/// Fully resolved configuration of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSpec {
    pub id: VariantId,
    pub model: ModelConfig,
    pub schedule: TrainingSchedule,
    /// False for the statistics-only predictor.
    pub needs_network: bool,
    pub description: &'static str,
}

impl VariantSpec {
    /// Heads of the final network that receive a loss.
    pub fn active_heads(&self) -> Vec<&'static str> {
        let r = &self.schedule.rnn_terms;
        let mut v = Vec::new();
        if r.phase {
            v.push("phase");
        }
        if r.experience {
            v.push("experience");
        }
        if r.rsd {
            v.push("rsd");
        }
        if !self.needs_network {
            v.clear();
        }
        v
    }
}

const fn terms(phase: bool, experience: bool, rsd: bool, progress: bool) -> LossTerms {
    LossTerms {
        phase,
        experience,
        rsd,
        progress,
    }
}

/// Derives a variant's model and schedule from a base configuration: each
/// variant fixes the elapsed-time placement and the loss terms of both losses.
pub fn build_variant(id: VariantId, base: &ModelConfig, schedule: &TrainingSchedule) -> VariantSpec {
    use ElapsedMode::*;
    let (mode, cnn, rnn, description) = match id {
        VariantId::Catanet => (
            InputChannel,
            terms(true, true, false, false),
            terms(true, true, true, false),
            "elapsed-time input channel, phase + experience + RSD supervision",
        ),
        VariantId::AblPhaseOnly => (
            InputChannel,
            terms(true, false, false, false),
            terms(true, false, true, false),
            "ablation (i): phase + RSD supervision",
        ),
        VariantId::AblExpOnly => (
            InputChannel,
            terms(false, true, false, false),
            terms(false, true, true, false),
            "ablation (ii): experience + RSD supervision",
        ),
        VariantId::AblRsdOnly => (
            InputChannel,
            terms(false, false, true, false),
            terms(false, false, true, false),
            "ablation (iii): RSD supervision only, elapsed time as input channel",
        ),
        VariantId::AblElapsedAfter => (
            AfterRnn,
            terms(false, false, true, false),
            terms(false, false, true, false),
            "ablation (iv): RSD supervision only, elapsed time after the recurrent network",
        ),
        VariantId::Rsdnet => (
            AfterRnn,
            terms(false, false, false, true),
            terms(false, false, true, false),
            "progress-trained encoder, elapsed time after the recurrent network (published structure, shared harness)",
        ),
        VariantId::Timelstm => (
            None,
            terms(true, false, false, false),
            terms(false, false, true, false),
            "phase-trained encoder, RSD-only recurrent network (published structure, shared harness)",
        ),
        VariantId::NaiveMean => (
            None,
            terms(false, false, false, false),
            terms(false, false, false, false),
            "training-set mean duration minus elapsed time",
        ),
    };
    VariantSpec {
        id,
        model: ModelConfig {
            elapsed_mode: mode,
            ..base.clone()
        },
        schedule: TrainingSchedule {
            cnn_terms: cnn,
            rnn_terms: rnn,
            ..schedule.clone()
        },
        needs_network: id != VariantId::NaiveMean,
        description,
    }
}

/// Progress `t / T` for every frame of a video.
pub fn progress_labels(video: &VideoSequence) -> Result<Vec<f64>> {
    let total = video.total_duration();
    ensure!(total > 0.0, "video `{}` has zero duration", video.video_id);
    Ok(video.annotations.iter().map(|a| a.elapsed / total).collect())
}

/// Predicts `max(mean_total - t, 0)` from the training-set mean duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveMeanPredictor {
    pub mean_total: f64,
}

impl NaiveMeanPredictor {
    pub fn predict(&self, elapsed: f64) -> f64 {
        (self.mean_total - elapsed).max(0.0)
    }

    /// Per-frame predictions with uninformative class probabilities.
    pub fn predict_video(&self, video: &VideoSequence) -> Vec<FramePrediction> {
        video
            .annotations
            .iter()
            .map(|a| FramePrediction {
                phase_probs: vec![1.0 / N_PHASES as f64; N_PHASES],
                experience_probs: vec![1.0 / N_EXPERIENCE as f64; N_EXPERIENCE],
                rsd: self.predict(a.elapsed),
            })
            .collect()
    }
}

pub fn naive_mean_predictor<V: Borrow<VideoSequence>>(train: &[V]) -> Result<NaiveMeanPredictor> {
    ensure!(!train.is_empty(), "naive predictor needs at least one training video");
    let sum: f64 = train.iter().map(|v| v.borrow().total_duration()).sum();
    Ok(NaiveMeanPredictor {
        mean_total: sum / train.len() as f64,
    })
}
