use super::audit::LabelAudit;
use super::compute::{cnn_batch, rnn_full, BatchStats, DescriptorSource, NetGrads};
use super::losses::LossTerms;
use super::LossKind;
use crate::dataset::{Frame, FrameAnnotation, VideoSequence};
use crate::error::{ensure, Result};
use crate::model::{CataNet, Params};

/// Largest network the finite-difference check accepts.
pub const MAX_CHECK_PARAMS: usize = 2000;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Relative disagreement between the forward and backward one-sided slopes
/// above which a parameter is treated as straddling a ReLU or L1 kink.
pub const KINK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_params: usize,
    /// Largest relative error over parameters whose loss is smooth on `x ± h`.
    pub max_rel_error: f64,
    /// Parameters excluded because a kink lies within one step.
    pub n_kinked: usize,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn loss_and_grads(
    net: &CataNet<f64>,
    video: &VideoSequence,
    kind: LossKind,
    terms: &LossTerms,
    alpha: f64,
    grads: Option<&mut NetGrads<f64>>,
) -> Result<BatchStats> {
    let audit = LabelAudit::new();
    match kind {
        LossKind::CnnLoss => {
            let frames: Vec<&Frame> = video.frames.iter().collect();
            let anns: Vec<&FrameAnnotation> = video.annotations.iter().collect();
            cnn_batch(net, &frames, &anns, terms, alpha, &audit, grads)
        }
        LossKind::RnnLoss => rnn_full(net, &[video], &DescriptorSource::Encoder, terms, alpha, &audit, grads),
    }
}

fn differentiated_mut<'a>(net: &'a mut CataNet<f64>, kind: LossKind) -> Vec<&'a mut [f64]> {
    let mut p = net.encoder.params_mut();
    match kind {
        LossKind::CnnLoss => p.extend(net.aux.params_mut()),
        LossKind::RnnLoss => {
            p.extend(net.temporal.params_mut());
            p.extend(net.heads.params_mut());
        }
    }
    p
}

fn set_param(net: &mut CataNet<f64>, kind: LossKind, mut index: usize, value: f64) -> f64 {
    for slice in differentiated_mut(net, kind) {
        if index < slice.len() {
            let old = slice[index];
            slice[index] = value;
            return old;
        }
        index -= slice.len();
    }
    panic!("parameter index out of range");
}

/// Compares analytic gradients of the mean frame or sequence loss over
/// `video` with central finite differences, for every parameter on the
/// loss path (encoder and frame heads, or encoder, recurrent net and heads).
pub fn gradient_check(
    net: &CataNet<f64>,
    video: &VideoSequence,
    kind: LossKind,
    terms: &LossTerms,
    alpha: f64,
) -> Result<GradCheckReport> {
    let is_cnn = kind == LossKind::CnnLoss;
    let mut grads = NetGrads::for_net(net, true, !is_cnn, !is_cnn, is_cnn);
    let n_params = grads.flatten().len();
    ensure!(
        n_params <= MAX_CHECK_PARAMS,
        "network has {n_params} parameters on the loss path; the check is limited to {MAX_CHECK_PARAMS}"
    );
    loss_and_grads(net, video, kind, terms, alpha, Some(&mut grads))?;
    let analytic = grads.flatten();

    let base = loss_and_grads(net, video, kind, terms, alpha, None)?.mean_loss();
    let mut probe = net.clone();
    let mut numeric = Vec::with_capacity(n_params);
    let mut kinked = vec![false; n_params];
    for j in 0..n_params {
        let x = set_param(&mut probe, kind, j, 0.0);
        set_param(&mut probe, kind, j, x + FD_STEP);
        let up = loss_and_grads(&probe, video, kind, terms, alpha, None)?.mean_loss();
        set_param(&mut probe, kind, j, x - FD_STEP);
        let down = loss_and_grads(&probe, video, kind, terms, alpha, None)?.mean_loss();
        set_param(&mut probe, kind, j, x);
        numeric.push((up - down) / (2.0 * FD_STEP));
        let (fwd, bwd) = ((up - base) / FD_STEP, (base - down) / FD_STEP);
        kinked[j] = (fwd - bwd).abs() > KINK_TOLERANCE * fwd.abs().max(bwd.abs()).max(1e-3);
    }

    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (j, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        if kinked[j] {
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = j;
        }
    }
    Ok(GradCheckReport {
        n_params,
        max_rel_error,
        n_kinked: kinked.iter().filter(|&&k| k).count(),
        worst_index,
        analytic,
        numeric,
    })
}
