//! Forward/backward passes shared by the training loops, validation and the
//! gradient check. Everything here works on a single batch and is generic
//! over the float type.

use ndarray::{Array2, ArrayView2, Axis};

use super::audit::LabelAudit;
use super::losses::{l1, softmax_ce, LossTerms, Targets};
use super::optim::Adam;
use crate::dataset::{Frame, FrameAnnotation, VideoSequence};
use crate::error::{ensure, Result};
use crate::model::heads::{AuxGrads, HeadGrads};
use crate::model::{AuxHeads, CataNet, Encoder, LayerState, Packed, Params, RecurrentStack};
use crate::model::Heads;
use crate::Real;

/// Gradient accumulators for the parts of the network being trained.
/// A `None` slot marks a component that is not differentiated at all.
#[derive(Debug, Clone)]
pub struct NetGrads<F> {
    pub encoder: Option<Encoder<F>>,
    pub temporal: Option<RecurrentStack<F>>,
    pub heads: Option<Heads<F>>,
    pub aux: Option<AuxHeads<F>>,
}

impl<F: Real> NetGrads<F> {
    pub fn for_net(net: &CataNet<F>, encoder: bool, temporal: bool, heads: bool, aux: bool) -> Self {
        NetGrads {
            encoder: encoder.then(|| net.encoder.zeros_like()),
            temporal: temporal.then(|| net.temporal.zeros_like()),
            heads: heads.then(|| net.heads.zeros_like()),
            aux: if aux { net.aux.as_ref().map(|a| a.zeros_like()) } else { None },
        }
    }

    pub fn zero(&mut self) {
        self.encoder.fill_zero();
        self.temporal.fill_zero();
        self.heads.fill_zero();
        self.aux.fill_zero();
    }

    /// Gradient values in canonical order (encoder, temporal, heads, aux).
    pub fn flatten(&self) -> Vec<F> {
        let mut v = self.encoder.flatten();
        v.extend(self.temporal.flatten());
        v.extend(self.heads.flatten());
        v.extend(self.aux.flatten());
        v
    }
}

/// Applies one optimizer step to every component that has a gradient slot.
pub fn apply_step<F: Real>(net: &mut CataNet<F>, grads: &NetGrads<F>, opt: &mut Adam<F>) {
    let mut p: Vec<&mut [F]> = Vec::new();
    let mut g: Vec<&[F]> = Vec::new();
    if let Some(ge) = &grads.encoder {
        p.extend(net.encoder.params_mut());
        g.extend(ge.params());
    }
    if let Some(gt) = &grads.temporal {
        p.extend(net.temporal.params_mut());
        g.extend(gt.params());
    }
    if let Some(gh) = &grads.heads {
        p.extend(net.heads.params_mut());
        g.extend(gh.params());
    }
    if let (Some(ga), Some(aux)) = (&grads.aux, net.aux.as_mut()) {
        p.extend(aux.params_mut());
        g.extend(ga.params());
    }
    opt.step(p, g);
}

/// Loss sums over one batch. `loss` is the sum of per-frame losses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub frames: usize,
    pub phase_correct: usize,
    pub experience_correct: usize,
}

impl BatchStats {
    pub fn merge(&mut self, o: &BatchStats) {
        self.loss += o.loss;
        self.frames += o.frames;
        self.phase_correct += o.phase_correct;
        self.experience_correct += o.experience_correct;
    }

    pub fn mean_loss(&self) -> f64 {
        if self.frames == 0 {
            f64::NAN
        } else {
            self.loss / self.frames as f64
        }
    }

    pub fn phase_acc(&self) -> f64 {
        self.phase_correct as f64 / self.frames as f64
    }

    pub fn experience_acc(&self) -> f64 {
        self.experience_correct as f64 / self.frames as f64
    }
}

/// Frame-level loss on the temporary heads for a batch of frames; when
/// `grads` is given, accumulates the gradient of the batch-mean loss.
pub fn cnn_batch<F: Real>(
    net: &CataNet<F>,
    frames: &[&Frame],
    anns: &[&FrameAnnotation],
    terms: &LossTerms,
    alpha: f64,
    audit: &LabelAudit,
    grads: Option<&mut NetGrads<F>>,
) -> Result<BatchStats> {
    ensure!(frames.len() == anns.len() && !frames.is_empty(), "empty or mismatched frame batch");
    ensure!(terms.any(), "no active loss terms");
    let aux = net
        .aux
        .as_ref()
        .ok_or_else(|| crate::Error::validation("frame-level heads are required for the frame loss"))?;
    let elapsed: Vec<f64> = anns.iter().map(|a| a.elapsed).collect();
    let input = net.build_input(frames, &elapsed)?;
    let (desc, cache) = net.encoder.forward(&input)?;
    let out = aux.forward(desc.view());
    let targets = Targets::read(anns, terms, audit);

    let n = frames.len();
    let scale = F::lit(1.0 / n as f64);
    let mut stats = BatchStats {
        frames: n,
        ..Default::default()
    };
    let mut d = AuxGrads {
        phase_logits: None,
        experience_logits: None,
        rsd: None,
        progress: None,
    };
    if let Some(y) = &targets.phase {
        let (l, g, c) = softmax_ce(out.phase_logits.view(), y, scale);
        stats.loss += l;
        stats.phase_correct = c;
        d.phase_logits = Some(g);
    }
    if let Some(y) = &targets.experience {
        let (l, g, c) = softmax_ce(out.experience_logits.view(), y, scale);
        stats.loss += l;
        stats.experience_correct = c;
        d.experience_logits = Some(g);
    }
    if let Some(y) = &targets.rsd {
        let (l, g) = l1(out.rsd.view(), y, alpha, scale);
        stats.loss += l;
        d.rsd = Some(g);
    }
    if let Some(y) = &targets.progress {
        let (l, g) = l1(out.progress.view(), y, 1.0, scale);
        stats.loss += l;
        d.progress = Some(g);
    }

    if let Some(grads) = grads {
        let ga = grads.aux.as_mut().expect("frame-level head gradient slot");
        let d_desc = aux.backward(desc.view(), &d, ga);
        if let Some(ge) = grads.encoder.as_mut() {
            net.encoder.backward(&cache, d_desc.view(), ge);
        }
    }
    Ok(stats)
}

/// Where a sequence batch gets its frame descriptors from.
pub enum DescriptorSource<'a, F> {
    /// Run the encoder on the frames (needed when it is trained).
    Encoder,
    /// Precomputed descriptors, one matrix per video in batch order.
    Cached(&'a [&'a Array2<F>]),
}

/// Per-video lengths of the segment starting at `start`, for videos sorted
/// by decreasing length; videos already finished are dropped from the end.
pub fn segment_lengths(videos: &[&VideoSequence], start: usize, window: usize) -> Vec<usize> {
    videos
        .iter()
        .map(|v| v.len().saturating_sub(start).min(window))
        .take_while(|&l| l > 0)
        .collect()
}

/// Sequence loss over one truncated segment `[start, start + window)` of a
/// batch of videos sorted by decreasing length.
///
/// `state` holds the recurrent state of every video still active at the
/// previous segment and is replaced by the state at the end of this one.
/// Gradients (if requested) are those of the mean loss over the segment's
/// frames and do not flow into the incoming state.
#[allow(clippy::too_many_arguments)]
pub fn rnn_segment<F: Real>(
    net: &CataNet<F>,
    videos: &[&VideoSequence],
    source: &DescriptorSource<F>,
    start: usize,
    window: usize,
    state: &mut Vec<LayerState<F>>,
    terms: &LossTerms,
    alpha: f64,
    audit: &LabelAudit,
    grads: Option<&mut NetGrads<F>>,
) -> Result<BatchStats> {
    ensure!(terms.phase || terms.experience || terms.rsd, "no active sequence loss terms");
    ensure!(
        videos.windows(2).all(|w| w[0].len() >= w[1].len()),
        "sequence batch must be sorted by decreasing length"
    );
    let lengths = segment_lengths(videos, start, window);
    ensure!(!lengths.is_empty(), "segment starts past the end of every video");
    let packed = Packed::from_lengths(&lengths)?;
    let active = lengths.len();
    let mut st: Vec<LayerState<F>> = state.iter().map(|s| s.prefix(active)).collect();

    // Packed row order: time-major, active videos as a prefix at each step.
    let mut rows = Vec::with_capacity(packed.total_rows());
    for t in 0..packed.steps() {
        for v in 0..packed.batch_sizes[t] {
            rows.push((v, start + t));
        }
    }
    let anns: Vec<&FrameAnnotation> = rows.iter().map(|&(v, f)| &videos[v].annotations[f]).collect();
    let elapsed: Vec<f64> = anns.iter().map(|a| a.elapsed).collect();

    let (desc, enc_cache) = match source {
        DescriptorSource::Encoder => {
            let frames: Vec<&Frame> = rows.iter().map(|&(v, f)| &videos[v].frames[f]).collect();
            let input = net.build_input(&frames, &elapsed)?;
            let (d, c) = net.encoder.forward(&input)?;
            (d, Some(c))
        }
        DescriptorSource::Cached(descs) => {
            ensure!(descs.len() >= active, "missing cached descriptors");
            let dim = net.config.frame_descriptor_dim;
            let mut d = Array2::zeros((rows.len(), dim));
            for (r, &(v, f)) in rows.iter().enumerate() {
                d.row_mut(r).assign(&descs[v].row(f));
            }
            (d, None)
        }
    };

    let (video_desc, rnn_cache) = net.temporal.forward(desc.view(), &packed, &mut st);
    *state = st;
    let head_in = net.head_input(video_desc.view(), &elapsed);
    let out = net.heads.forward(head_in.view());
    let targets = Targets::read(&anns, terms, audit);

    let n = rows.len();
    let scale = F::lit(1.0 / n as f64);
    let mut stats = BatchStats {
        frames: n,
        ..Default::default()
    };
    let mut d = HeadGrads {
        phase_logits: None,
        experience_logits: None,
        rsd: None,
    };
    if let Some(y) = &targets.phase {
        let (l, g, c) = softmax_ce(out.phase_logits.view(), y, scale);
        stats.loss += l;
        stats.phase_correct = c;
        d.phase_logits = Some(g);
    }
    if let Some(y) = &targets.experience {
        let (l, g, c) = softmax_ce(out.experience_logits.view(), y, scale);
        stats.loss += l;
        stats.experience_correct = c;
        d.experience_logits = Some(g);
    }
    if let Some(y) = &targets.rsd {
        let (l, g) = l1(out.rsd.view(), y, alpha, scale);
        stats.loss += l;
        d.rsd = Some(g);
    }

    if let Some(grads) = grads {
        let mut scratch;
        let gh = match grads.heads.as_mut() {
            Some(g) => g,
            None => {
                scratch = net.heads.zeros_like();
                &mut scratch
            }
        };
        let d_head_in = net.heads.backward(head_in.view(), &d, gh);
        let need_trunk = grads.temporal.is_some() || grads.encoder.is_some();
        if need_trunk {
            let vd = net.config.video_descriptor_dim;
            let d_video: ArrayView2<F> = d_head_in.slice_axis(Axis(1), (0..vd).into());
            let mut scratch_t;
            let gt = match grads.temporal.as_mut() {
                Some(g) => g,
                None => {
                    scratch_t = net.temporal.zeros_like();
                    &mut scratch_t
                }
            };
            let d_desc = net.temporal.backward(&rnn_cache, d_video, &packed, gt);
            if let (Some(ge), Some(cache)) = (grads.encoder.as_mut(), enc_cache.as_ref()) {
                net.encoder.backward(cache, d_desc.view(), ge);
            }
        }
    }
    Ok(stats)
}

/// Sequence loss over whole videos from a fresh state, without truncation.
pub fn rnn_full<F: Real>(
    net: &CataNet<F>,
    videos: &[&VideoSequence],
    source: &DescriptorSource<F>,
    terms: &LossTerms,
    alpha: f64,
    audit: &LabelAudit,
    grads: Option<&mut NetGrads<F>>,
) -> Result<BatchStats> {
    let longest = videos.first().map_or(0, |v| v.len());
    let mut state = net.temporal.zero_state(videos.len());
    rnn_segment(net, videos, source, 0, longest, &mut state, terms, alpha, audit, grads)
}
