use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::audit::LabelAudit;
use crate::dataset::FrameAnnotation;
use crate::error::{ensure, Result};
use crate::model::{softmax_rows, FramePrediction};
use crate::Real;

/// Floor applied to probabilities inside the logarithm.
pub const CE_EPSILON: f64 = 1e-12;

/// Which supervision signals contribute to a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub phase: bool,
    pub experience: bool,
    /// L1 on remaining duration, weighted by `alpha`.
    pub rsd: bool,
    /// L1 on progress `t / T`; frame-level heads only.
    pub progress: bool,
}

impl LossTerms {
    pub const CLASSIFICATION: LossTerms = LossTerms {
        phase: true,
        experience: true,
        rsd: false,
        progress: false,
    };
    pub const FULL: LossTerms = LossTerms {
        phase: true,
        experience: true,
        rsd: true,
        progress: false,
    };

    pub fn none() -> Self {
        LossTerms {
            phase: false,
            experience: false,
            rsd: false,
            progress: false,
        }
    }

    pub fn any(&self) -> bool {
        self.phase || self.experience || self.rsd || self.progress
    }
}

fn check_probs(p: &[f64], what: &str) -> Result<()> {
    ensure!(!p.is_empty(), "{what} probabilities are empty");
    ensure!(
        p.iter().all(|&v| (0.0..=1.0 + 1e-9).contains(&v)),
        "{what} probabilities outside [0,1]"
    );
    let s: f64 = p.iter().sum();
    ensure!((s - 1.0).abs() < 1e-6, "{what} probabilities sum to {s}, not 1");
    Ok(())
}

/// Natural-log cross-entropy of `probs` against the true class.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    check_probs(probs, "class")?;
    ensure!(label < probs.len(), "label {label} out of range for {} classes", probs.len());
    Ok(-probs[label].max(CE_EPSILON).ln())
}

/// Frame-level loss: phase plus experience cross-entropy.
pub fn loss_cnn(phase_probs: &[f64], exp_probs: &[f64], phase_label: usize, exp_label: usize) -> Result<f64> {
    Ok(cross_entropy(phase_probs, phase_label)? + cross_entropy(exp_probs, exp_label)?)
}

/// Per-frame sequence loss: `alpha * |rsd error|` plus both cross-entropies.
pub fn loss_rnn(outputs: &FramePrediction, labels: &FrameAnnotation, alpha: f64) -> Result<f64> {
    ensure!(outputs.rsd.is_finite(), "non-finite rsd prediction");
    ensure!(alpha >= 0.0, "alpha must be non-negative");
    let ce = loss_cnn(
        &outputs.phase_probs,
        &outputs.experience_probs,
        labels.phase.index(),
        labels.experience.index(),
    )?;
    Ok(ce + alpha * (outputs.rsd - labels.rsd).abs())
}

/// Mean loss over a batch of frames.
pub fn loss_rnn_mean(outputs: &[FramePrediction], labels: &[FrameAnnotation], alpha: f64) -> Result<f64> {
    ensure!(!outputs.is_empty(), "empty batch");
    ensure!(outputs.len() == labels.len(), "outputs and labels differ in length");
    let mut sum = 0.0;
    for (o, l) in outputs.iter().zip(labels) {
        sum += loss_rnn(o, l, alpha)?;
    }
    Ok(sum / outputs.len() as f64)
}

/// Labels for one batch, read through the audit so that every access is counted.
pub(crate) struct Targets {
    pub phase: Option<Vec<usize>>,
    pub experience: Option<Vec<usize>>,
    pub rsd: Option<Vec<f64>>,
    pub progress: Option<Vec<f64>>,
}

impl Targets {
    pub fn read(anns: &[&FrameAnnotation], terms: &LossTerms, audit: &LabelAudit) -> Self {
        Targets {
            phase: terms.phase.then(|| anns.iter().map(|a| audit.phase(a)).collect()),
            experience: terms.experience.then(|| anns.iter().map(|a| audit.experience(a)).collect()),
            rsd: terms.rsd.then(|| anns.iter().map(|a| audit.rsd(a)).collect()),
            progress: terms.progress.then(|| anns.iter().map(|a| audit.progress(a)).collect()),
        }
    }
}

/// Summed cross-entropy over rows and `d(sum * scale)/d logits`, plus the
/// number of rows whose argmax hits the label.
pub(crate) fn softmax_ce<F: Real>(logits: ArrayView2<F>, labels: &[usize], scale: F) -> (f64, Array2<F>, usize) {
    let mut probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        let p = row[y].as_f64();
        loss -= p.max(CE_EPSILON).ln();
        if argmax(row) == y {
            correct += 1;
        }
        let mut row = probs.row_mut(i);
        if p > CE_EPSILON {
            row[y] -= F::one();
            row *= scale;
        } else {
            row.fill(F::zero());
        }
    }
    (loss, probs, correct)
}

/// Summed weighted L1 and `d(sum * scale)/d pred`.
pub(crate) fn l1<F: Real>(pred: ArrayView1<F>, target: &[f64], weight: f64, scale: F) -> (f64, Array1<F>) {
    let mut loss = 0.0;
    let grad = Array1::from_shape_fn(target.len(), |i| {
        let d = pred[i].as_f64() - target[i];
        loss += weight * d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        F::lit(weight * s) * scale
    });
    (loss, grad)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(v: ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ExperienceLevel, PhaseId};
    use ndarray::array;

    fn ann(phase: usize, rsd: f64) -> FrameAnnotation {
        FrameAnnotation {
            frame_index: 0,
            elapsed: 1.0,
            phase: PhaseId::new(phase).unwrap(),
            rsd,
            experience: ExperienceLevel::Assistant,
        }
    }

    #[test]
    fn cnn_loss_examples() {
        assert_eq!(loss_cnn(&[0.0, 1.0], &[1.0, 0.0], 1, 0).unwrap(), 0.0);
        let uniform = loss_cnn(&[0.1; 10], &[0.5; 2], 3, 1).unwrap();
        assert!((uniform - 2.995732273553991).abs() < 1e-6);
        let toy = loss_cnn(&[0.7, 0.3], &[0.5, 0.5], 0, 1).unwrap();
        assert!((toy - 1.0498221244986778).abs() < 1e-6);
    }

    #[test]
    fn zero_probability_is_floored() {
        let l = loss_cnn(&[1.0, 0.0], &[1.0, 0.0], 1, 0).unwrap();
        assert!((l - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(loss_cnn(&[0.5, 0.6], &[0.5, 0.5], 0, 0).unwrap_err().is_validation());
        assert!(loss_cnn(&[0.5, 0.5], &[0.5, 0.5], 2, 0).unwrap_err().is_validation());
    }

    #[test]
    fn rnn_loss_examples() {
        let mut phase = vec![0.0; 10];
        phase[4] = 1.0;
        let perfect = FramePrediction {
            phase_probs: phase.clone(),
            experience_probs: vec![0.0, 1.0],
            rsd: 3.0,
        };
        assert_eq!(loss_rnn(&perfect, &ann(4, 3.0), 1.0).unwrap(), 0.0);
        let off = FramePrediction { rsd: 5.0, ..perfect.clone() };
        assert_eq!(loss_rnn(&off, &ann(4, 3.0), 1.0).unwrap(), 2.0);
        let soft = FramePrediction {
            phase_probs: vec![0.1; 10],
            experience_probs: vec![0.5, 0.5],
            rsd: 7.5,
        };
        let cnn = loss_cnn(&soft.phase_probs, &soft.experience_probs, 4, 1).unwrap();
        assert_eq!(loss_rnn(&soft, &ann(4, 3.0), 0.0).unwrap(), cnn);
        // affine in alpha
        let l1 = loss_rnn(&soft, &ann(4, 3.0), 1.0).unwrap();
        let l3 = loss_rnn(&soft, &ann(4, 3.0), 3.0).unwrap();
        assert!((l3 - (cnn + 3.0 * (l1 - cnn))).abs() < 1e-12);
        assert!(loss_rnn(&FramePrediction { rsd: f64::NAN, ..soft }, &ann(4, 3.0), 1.0).is_err());
    }

    #[test]
    fn batch_mean() {
        let p = FramePrediction {
            phase_probs: vec![0.1; 10],
            experience_probs: vec![0.5, 0.5],
            rsd: 0.0,
        };
        let labels = [ann(0, 1.0), ann(0, 3.0)];
        let ce = 10f64.ln() + 2f64.ln();
        let m = loss_rnn_mean(&[p.clone(), p], &labels, 1.0).unwrap();
        assert!((m - (ce + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_matches_scalar_loss_and_gradient() {
        let logits: Array2<f64> = array![[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]];
        let (loss, grad, correct) = softmax_ce(logits.view(), &[1, 2], 1.0);
        let p = softmax_rows(logits.view());
        let expect = -p[[0, 1]].ln() - p[[1, 2]].ln();
        assert!((loss - expect).abs() < 1e-12);
        assert_eq!(correct, 1);
        assert!((grad[[0, 1]] - (p[[0, 1]] - 1.0)).abs() < 1e-12);
        assert!((grad.row(1).sum()).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
        assert_eq!(argmax(array![0.1, 0.7, 0.7].view()), 1);
    }
}
