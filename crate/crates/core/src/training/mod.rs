//! Losses, optimizer and the four-stage training procedure.
//!
//! Stage 1 trains the encoder with frame-level heads on stratified samples;
//! stage 2 trains the recurrent network and heads on frozen descriptors;
//! stage 3 fine-tunes everything end to end; stage 4 re-tunes the recurrent
//! part on frozen descriptors. Sequence stages use truncated backpropagation.

mod audit;
pub mod compute;
mod gradcheck;
mod losses;
mod optim;
mod stages;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub use audit::{AuditCounts, LabelAudit};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use losses::{argmax, cross_entropy, loss_cnn, loss_rnn, loss_rnn_mean, LossTerms, CE_EPSILON};
pub use optim::{Adam, AdamConfig, EarlyStopping, StopDecision};
pub use stages::{fold_init_seed, run_full_training, run_stages, tbptt_segments, train_stage, FoldRun, StageData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Component {
    Encoder,
    /// Recurrent network together with its prediction heads.
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    CnnLoss,
    RnnLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingSpec {
    pub patience: usize,
    /// Evaluation interval as a fraction of an epoch.
    pub eval_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_id: u8,
    pub epochs: usize,
    pub learning_rate: f64,
    pub frozen: Vec<Component>,
    pub loss: LossKind,
    pub early_stopping: EarlyStoppingSpec,
}

impl StageSpec {
    pub fn is_frozen(&self, c: Component) -> bool {
        self.frozen.contains(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub stages: Vec<StageSpec>,
    /// Weight of the RSD L1 term.
    pub alpha: f64,
    pub seed: u64,
    pub tbptt_window: usize,
    pub batch_size_stage1: usize,
    /// Stratified samples per phase for one stage-1 epoch.
    pub frames_per_phase: usize,
    /// Stratified samples per phase drawn from validation videos in stage 1.
    pub val_frames_per_phase: usize,
    /// Videos per sequence batch in stages 2–4.
    pub videos_per_batch: usize,
    /// Active terms of the frame-level loss (stage 1).
    pub cnn_terms: LossTerms,
    /// Active terms of the sequence loss (stages 2–4).
    pub rnn_terms: LossTerms,
    pub optimizer: AdamConfig,
}

fn stage(id: u8, epochs: usize, lr: f64, frozen: &[Component], patience: usize, interval: f64) -> StageSpec {
    StageSpec {
        stage_id: id,
        epochs,
        learning_rate: lr,
        frozen: frozen.to_vec(),
        loss: if id == 1 { LossKind::CnnLoss } else { LossKind::RnnLoss },
        early_stopping: EarlyStoppingSpec {
            patience,
            eval_interval: interval,
        },
    }
}

impl TrainingSchedule {
    /// Epochs, learning rates and sampling sizes of the full-scale procedure.
    pub fn full_scale() -> Self {
        use Component::*;
        TrainingSchedule {
            stages: vec![
                stage(1, 3, 1e-4, &[Rnn], 2, 0.25),
                stage(2, 50, 1e-3, &[Encoder], 5, 1.0),
                stage(3, 10, 5e-4, &[], 5, 1.0),
                stage(4, 20, 5e-4, &[Encoder], 5, 1.0),
            ],
            alpha: 1.0,
            seed: 0,
            tbptt_window: 48,
            batch_size_stage1: 100,
            frames_per_phase: 8000,
            val_frames_per_phase: 800,
            videos_per_batch: 1,
            cnn_terms: LossTerms::CLASSIFICATION,
            rnn_terms: LossTerms::FULL,
            optimizer: AdamConfig::default(),
        }
    }

    /// Sizes that train the desk-scale network on a laptop CPU in minutes.
    pub fn desk() -> Self {
        use Component::*;
        TrainingSchedule {
            stages: vec![
                stage(1, 4, 1e-3, &[Rnn], 2, 0.25),
                stage(2, 30, 2e-3, &[Encoder], 5, 1.0),
                stage(3, 1, 2e-4, &[], 5, 1.0),
                stage(4, 10, 5e-4, &[Encoder], 5, 1.0),
            ],
            batch_size_stage1: 32,
            frames_per_phase: 300,
            val_frames_per_phase: 40,
            videos_per_batch: 4,
            ..Self::full_scale()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stage(&self, id: u8) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.stage_id == id)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be >= 0");
        ensure!(self.tbptt_window >= 1, "tbptt window must be >= 1");
        ensure!(self.batch_size_stage1 >= 1, "stage-1 batch size must be >= 1");
        ensure!(self.frames_per_phase >= 1, "frames per phase must be >= 1");
        ensure!(self.videos_per_batch >= 1, "videos per batch must be >= 1");
        ensure!(self.cnn_terms.any(), "frame-level loss has no active terms");
        ensure!(
            !self.rnn_terms.progress && (self.rnn_terms.phase || self.rnn_terms.experience || self.rnn_terms.rsd),
            "sequence loss needs phase, experience or rsd terms (progress is frame-level only)"
        );
        ensure!(!self.stages.is_empty() && self.stages.len() <= 4, "1 to 4 stages expected");
        for (i, s) in self.stages.iter().enumerate() {
            ensure!(s.stage_id as usize == i + 1, "stages must be numbered 1.. in order");
            ensure!(s.learning_rate > 0.0, "stage {} learning rate must be > 0", s.stage_id);
            ensure!(
                s.early_stopping.eval_interval > 0.0 && s.early_stopping.patience >= 1,
                "stage {} early stopping needs patience >= 1 and a positive interval",
                s.stage_id
            );
            let expected = if s.stage_id == 1 { LossKind::CnnLoss } else { LossKind::RnnLoss };
            ensure!(s.loss == expected, "stage {} uses the wrong loss", s.stage_id);
            if s.stage_id == 2 || s.stage_id == 4 {
                ensure!(s.is_frozen(Component::Encoder), "stage {} must freeze the encoder", s.stage_id);
            }
            ensure!(
                !(s.is_frozen(Component::Encoder) && s.is_frozen(Component::Rnn)) || s.stage_id == 1,
                "stage {} freezes everything",
                s.stage_id
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: u8,
    pub step: usize,
    pub split: String,
    pub loss: f64,
    pub phase_acc: Option<f64>,
    pub exp_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: u8,
    pub rows: Vec<LogRow>,
    pub steps: usize,
    pub evaluations: usize,
    pub stopped_early: bool,
    /// 1-based evaluation whose weights were kept; `None` without validation data.
    pub best_eval: Option<usize>,
    pub best_val_loss: Option<f64>,
}

pub const STAGE_LOG_HEADER: &str = "stage,step,split,loss,phase_acc,exp_acc";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes stage logs as CSV; rows of all stages are concatenated.
pub fn write_stage_logs(logs: &[StageLog], path: &Path) -> Result<()> {
    let mut out = String::from(STAGE_LOG_HEADER);
    out.push('\n');
    for r in logs.iter().flat_map(|l| &l.rows) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.stage,
            r.step,
            r.split,
            r.loss,
            opt_cell(r.phase_acc),
            opt_cell(r.exp_acc)
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_validate() {
        TrainingSchedule::full_scale().validate().unwrap();
        TrainingSchedule::desk().validate().unwrap();
        let p = TrainingSchedule::full_scale();
        let lrs: Vec<f64> = p.stages.iter().map(|s| s.learning_rate).collect();
        let epochs: Vec<usize> = p.stages.iter().map(|s| s.epochs).collect();
        assert_eq!(lrs, vec![1e-4, 1e-3, 5e-4, 5e-4]);
        assert_eq!(epochs, vec![3, 50, 10, 20]);
        assert_eq!((p.alpha, p.tbptt_window, p.batch_size_stage1, p.frames_per_phase), (1.0, 48, 100, 8000));
    }

    #[test]
    fn invalid_schedules_rejected() {
        let mut s = TrainingSchedule::desk();
        s.alpha = -1.0;
        assert!(s.validate().unwrap_err().is_validation());
        let mut s = TrainingSchedule::desk();
        s.tbptt_window = 0;
        assert!(s.validate().is_err());
        let mut s = TrainingSchedule::desk();
        s.stages[1].frozen.clear();
        assert!(s.validate().is_err());
        let mut s = TrainingSchedule::desk();
        s.stages.swap(0, 1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn stage_log_csv() {
        let dir = tempfile::tempdir().unwrap();
        let log = StageLog {
            stage: 1,
            rows: vec![LogRow {
                stage: 1,
                step: 4,
                split: "val".into(),
                loss: 0.5,
                phase_acc: Some(1.0),
                exp_acc: None,
            }],
            ..Default::default()
        };
        let p = dir.path().join("log.csv");
        write_stage_logs(&[log], &p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "stage,step,split,loss,phase_acc,exp_acc\n1,4,val,0.5,1,\n");
    }
}
