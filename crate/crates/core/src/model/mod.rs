//! The network: elapsed-time input embedding, convolutional frame encoder,
//! recurrent temporal network and the phase / experience / RSD heads.

pub mod checkpoint;
pub mod encoder;
pub mod heads;
pub mod layers;
pub mod params;
mod preprocess;
pub mod recurrent;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Frame, VideoSequence, N_EXPERIENCE, N_PHASES};
use crate::error::{ensure, Error, Result};
use crate::Real;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use encoder::Encoder;
pub use heads::{AuxHeads, Heads};
pub use layers::{softmax_rows, FeatureMap};
pub use params::Params;
pub use preprocess::preprocess_frame;
pub use recurrent::{CellKind, LayerState, Packed, RecurrentStack};

/// Where the elapsed time enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ElapsedMode {
    /// Constant extra image plane fed to the encoder.
    InputChannel,
    /// Scalar concatenated to the recurrent output before the heads.
    AfterRnn,
    None,
}

/// Initialization of the encoder weights that read the elapsed-time plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelInit {
    Random,
    /// Zero weights, as when widening a pretrained RGB encoder.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `(height, width)` after preprocessing.
    pub frame_size: (usize, usize),
    pub encoder_channels: Vec<usize>,
    pub frame_descriptor_dim: usize,
    pub video_descriptor_dim: usize,
    pub recurrent_layers: usize,
    pub cell: CellKind,
    /// Expected maximum video length, in time units.
    pub t_max: f64,
    pub elapsed_mode: ElapsedMode,
    pub n_phases: usize,
    pub n_experience: usize,
    /// Multiplier on the RSD head output, in time units.
    pub rsd_output_scale: f64,
    pub elapsed_channel_init: ChannelInit,
}

impl ModelConfig {
    /// Laptop-sized network for 64x64 synthetic frames with times in seconds.
    pub fn desk() -> Self {
        ModelConfig {
            frame_size: (64, 64),
            encoder_channels: vec![16, 32, 64, 128],
            frame_descriptor_dim: 128,
            video_descriptor_dim: 128,
            recurrent_layers: 2,
            cell: CellKind::Lstm,
            t_max: 200.0,
            elapsed_mode: ElapsedMode::InputChannel,
            n_phases: N_PHASES,
            n_experience: N_EXPERIENCE,
            rsd_output_scale: 200.0,
            elapsed_channel_init: ChannelInit::Random,
        }
    }

    /// Descriptor geometry of the full-size network, times in minutes.
    pub fn full_scale() -> Self {
        ModelConfig {
            frame_size: (224, 224),
            encoder_channels: vec![32, 64, 128, 256, 512],
            frame_descriptor_dim: 1664,
            video_descriptor_dim: 128,
            recurrent_layers: 2,
            cell: CellKind::Lstm,
            t_max: 20.0,
            elapsed_mode: ElapsedMode::InputChannel,
            n_phases: N_PHASES,
            n_experience: N_EXPERIENCE,
            rsd_output_scale: 20.0,
            elapsed_channel_init: ChannelInit::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.frame_size.0 > 0 && self.frame_size.1 > 0, "frame size must be non-empty");
        ensure!(!self.encoder_channels.is_empty(), "encoder needs at least one conv block");
        ensure!(self.encoder_channels.iter().all(|&c| c > 0), "conv widths must be > 0");
        ensure!(self.frame_descriptor_dim > 0, "frame descriptor dim must be > 0");
        ensure!(self.video_descriptor_dim > 0, "video descriptor dim must be > 0");
        ensure!(self.recurrent_layers > 0, "need at least one recurrent layer");
        ensure!(self.t_max > 0.0, "t_max must be > 0");
        ensure!(self.rsd_output_scale > 0.0, "rsd output scale must be > 0");
        ensure!(self.n_phases == N_PHASES, "n_phases must be {N_PHASES}");
        ensure!(self.n_experience == N_EXPERIENCE, "n_experience must be {N_EXPERIENCE}");
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        if self.elapsed_mode == ElapsedMode::InputChannel {
            4
        } else {
            3
        }
    }

    pub fn head_input_dim(&self) -> usize {
        self.video_descriptor_dim + usize::from(self.elapsed_mode == ElapsedMode::AfterRnn)
    }
}

/// Elapsed time scaled to `[0,1]` by `t_max`, clamped at 1.
pub fn elapsed_fraction(t: f64, t_max: f64) -> f64 {
    (t / t_max).min(1.0)
}

/// Appends the elapsed-time plane `min(t / t_max, 1)` to an `H x W x 3` frame.
pub fn embed_elapsed_time<F: Real>(frame: &Array3<F>, t: f64, t_max: f64) -> Result<Array3<F>> {
    ensure!(t >= 0.0, "elapsed time must be non-negative, got {t}");
    ensure!(t_max > 0.0, "t_max must be positive");
    let (h, w, c) = frame.dim();
    ensure!(c == 3, "expected an RGB frame, got {c} channels");
    let tau = F::lit(elapsed_fraction(t, t_max));
    let mut out = Array3::zeros((h, w, 4));
    out.slice_mut(s![.., .., ..3]).assign(frame);
    out.slice_mut(s![.., .., 3]).fill(tau);
    Ok(out)
}

/// Per-frame probabilities and RSD, without descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub phase_probs: Vec<f64>,
    pub experience_probs: Vec<f64>,
    pub rsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkOutputs {
    pub phase_probs: Vec<f64>,
    pub experience_probs: Vec<f64>,
    pub rsd: f64,
    pub frame_descriptor: Vec<f64>,
    pub video_descriptor: Vec<f64>,
}

impl NetworkOutputs {
    pub fn prediction(&self) -> FramePrediction {
        FramePrediction {
            phase_probs: self.phase_probs.clone(),
            experience_probs: self.experience_probs.clone(),
            rsd: self.rsd,
        }
    }
}

/// Hidden state of one streaming session.
#[derive(Debug, Clone, Default)]
pub struct RecurrentState<F> {
    layers: Option<Vec<LayerState<F>>>,
    steps: usize,
}

impl<F: Real> RecurrentState<F> {
    /// An uninitialized state; call [`reset`](Self::reset) before use.
    pub fn new() -> Self {
        RecurrentState {
            layers: None,
            steps: 0,
        }
    }

    pub fn reset(&mut self, net: &CataNet<F>) {
        self.layers = Some(net.temporal.zero_state(1));
        self.steps = 0;
    }

    pub fn is_initialized(&self) -> bool {
        self.layers.is_some()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Debug, Clone)]
pub struct CataNet<F> {
    pub config: ModelConfig,
    pub encoder: Encoder<F>,
    pub temporal: RecurrentStack<F>,
    pub heads: Heads<F>,
    /// Frame-level heads used only while pretraining the encoder.
    pub aux: Option<AuxHeads<F>>,
    /// Last completed training stage (0 = untrained).
    pub stage_reached: u8,
}

impl<F: Real> CataNet<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Encoder::init(
            config.input_channels(),
            &config.encoder_channels,
            config.frame_descriptor_dim,
            &mut rng,
        );
        if config.elapsed_mode == ElapsedMode::InputChannel && config.elapsed_channel_init == ChannelInit::Zero {
            encoder.zero_input_channel(3);
        }
        let temporal = RecurrentStack::init(
            config.cell,
            config.frame_descriptor_dim,
            config.video_descriptor_dim,
            config.recurrent_layers,
            &mut rng,
        );
        let scale = F::lit(config.rsd_output_scale);
        let heads = Heads::init(config.head_input_dim(), config.n_phases, config.n_experience, scale, &mut rng);
        let aux = AuxHeads::init(config.frame_descriptor_dim, config.n_phases, config.n_experience, scale, &mut rng);
        Ok(CataNet {
            config,
            encoder,
            temporal,
            heads,
            aux: Some(aux),
            stage_reached: 0,
        })
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.temporal.num_params() + self.heads.num_params() + self.aux.num_params()
    }

    /// Drops the frame-level heads; the deployed network has none.
    pub fn discard_aux_heads(&mut self) {
        self.aux = None;
    }

    /// Encoder input batch for `frames` taken at `elapsed` times.
    pub fn build_input(&self, frames: &[&Frame], elapsed: &[f64]) -> Result<FeatureMap<F>> {
        ensure!(frames.len() == elapsed.len(), "frames and elapsed times differ in length");
        ensure!(!frames.is_empty(), "empty frame batch");
        let (h, w) = self.config.frame_size;
        let c = self.config.input_channels();
        let mut fm = FeatureMap::zeros(frames.len(), h, w, c);
        let scale = F::lit(1.0 / 255.0);
        let dst = fm.data.as_slice_mut().expect("standard layout");
        for (b, (frame, &t)) in frames.iter().zip(elapsed).enumerate() {
            ensure!(
                frame.size() == (h, w),
                "frame is {:?}, network expects {:?}; preprocess first",
                frame.size(),
                (h, w)
            );
            ensure!(t >= 0.0, "elapsed time must be non-negative, got {t}");
            let tau = F::lit(elapsed_fraction(t, self.config.t_max));
            for (p, px) in frame.as_bytes().chunks_exact(3).enumerate() {
                let o = (b * h * w + p) * c;
                for k in 0..3 {
                    dst[o + k] = F::lit(px[k] as f64) * scale;
                }
                if c == 4 {
                    dst[o + 3] = tau;
                }
            }
        }
        Ok(fm)
    }

    /// Appends the elapsed-time column when the network uses it after the RNN.
    pub fn head_input(&self, video_desc: ArrayView2<F>, elapsed: &[f64]) -> Array2<F> {
        if self.config.elapsed_mode != ElapsedMode::AfterRnn {
            return video_desc.to_owned();
        }
        let col = Array2::from_shape_fn((elapsed.len(), 1), |(i, _)| {
            F::lit(elapsed_fraction(elapsed[i], self.config.t_max))
        });
        ndarray::concatenate![Axis(1), video_desc, col]
    }

    /// Encodes one preprocessed `H x W x C` input tensor.
    pub fn encode_frame(&self, input: &Array3<F>) -> Result<Vec<F>> {
        let (h, w, c) = input.dim();
        ensure!(
            (h, w) == self.config.frame_size,
            "input is {h}x{w}, expected {:?}",
            self.config.frame_size
        );
        ensure!(
            c == self.config.input_channels(),
            "input has {c} channels, expected {}",
            self.config.input_channels()
        );
        let data = input
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((h * w, c))
            .map_err(|e| Error::validation(e.to_string()))?;
        let fm = FeatureMap {
            data,
            batch: 1,
            height: h,
            width: w,
        };
        let (desc, _) = self.encoder.forward(&fm)?;
        Ok(desc.row(0).to_vec())
    }

    /// Advances the recurrent state by one frame descriptor.
    pub fn temporal_step(&self, frame_descriptor: &[F], state: &mut RecurrentState<F>) -> Result<Vec<F>> {
        let layers = state
            .layers
            .as_mut()
            .ok_or_else(|| Error::validation("recurrent state used before reset"))?;
        ensure!(
            frame_descriptor.len() == self.config.frame_descriptor_dim,
            "descriptor has length {}, expected {}",
            frame_descriptor.len(),
            self.config.frame_descriptor_dim
        );
        let x = ArrayView2::from_shape((1, frame_descriptor.len()), frame_descriptor)
            .expect("contiguous slice");
        let (out, _) = self.temporal.forward(x, &Packed::single(1), layers);
        state.steps += 1;
        Ok(out.row(0).to_vec())
    }

    /// Applies the three heads. `elapsed` is required in `AFTER_RNN` mode.
    pub fn predict_heads(&self, video_descriptor: &[F], elapsed: Option<f64>) -> Result<FramePrediction> {
        ensure!(
            video_descriptor.len() == self.config.video_descriptor_dim,
            "video descriptor has length {}, expected {}",
            video_descriptor.len(),
            self.config.video_descriptor_dim
        );
        let x = ArrayView2::from_shape((1, video_descriptor.len()), video_descriptor).expect("contiguous");
        let x = if self.config.elapsed_mode == ElapsedMode::AfterRnn {
            let t = elapsed.ok_or_else(|| Error::validation("AFTER_RNN heads need the elapsed time"))?;
            self.head_input(x, &[t])
        } else {
            x.to_owned()
        };
        let out = self.heads.forward(x.view());
        Ok(FramePrediction {
            phase_probs: heads::row_to_vec(softmax_rows(out.phase_logits.view()).row(0)),
            experience_probs: heads::row_to_vec(softmax_rows(out.experience_logits.view()).row(0)),
            rsd: out.rsd[0].as_f64(),
        })
    }

    /// Frame-level phase and experience probabilities from the temporary heads.
    pub fn cnn_aux_heads(&self, frame_descriptor: &[F]) -> Result<(Vec<f64>, Vec<f64>)> {
        let aux = self
            .aux
            .as_ref()
            .ok_or_else(|| Error::validation("frame-level heads were discarded after pretraining"))?;
        ensure!(
            frame_descriptor.len() == self.config.frame_descriptor_dim,
            "descriptor has length {}, expected {}",
            frame_descriptor.len(),
            self.config.frame_descriptor_dim
        );
        let x = ArrayView2::from_shape((1, frame_descriptor.len()), frame_descriptor).expect("contiguous");
        let out = aux.forward(x);
        Ok((
            heads::row_to_vec(softmax_rows(out.phase_logits.view()).row(0)),
            heads::row_to_vec(softmax_rows(out.experience_logits.view()).row(0)),
        ))
    }

    /// Frame descriptors for a whole video, encoded in chunks.
    pub fn encode_video(&self, video: &VideoSequence) -> Result<Array2<F>> {
        const CHUNK: usize = 32;
        let elapsed = video.elapsed_times();
        let mut out = Array2::zeros((video.len(), self.config.frame_descriptor_dim));
        for start in (0..video.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(video.len());
            let frames: Vec<&Frame> = video.frames[start..end].iter().collect();
            let input = self.build_input(&frames, &elapsed[start..end])?;
            let (desc, _) = self.encoder.forward(&input)?;
            out.slice_mut(s![start..end, ..]).assign(&desc);
        }
        Ok(out)
    }

    /// Runs a whole video in one pass: batched encoding, then the recurrent
    /// network over the full sequence from a fresh state.
    pub fn forward_video(&self, video: &VideoSequence) -> Result<Vec<NetworkOutputs>> {
        let desc = self.encode_video(video)?;
        self.forward_descriptors(desc.view(), &video.elapsed_times())
    }

    /// Recurrent network and heads over precomputed frame descriptors.
    pub fn forward_descriptors(&self, desc: ArrayView2<F>, elapsed: &[f64]) -> Result<Vec<NetworkOutputs>> {
        ensure!(desc.nrows() == elapsed.len() && !elapsed.is_empty(), "descriptor/time length mismatch");
        let mut state = self.temporal.zero_state(1);
        let (video_desc, _) = self.temporal.forward(desc, &Packed::single(desc.nrows()), &mut state);
        let out = self.heads.forward(self.head_input(video_desc.view(), elapsed).view());
        let phase = softmax_rows(out.phase_logits.view());
        let exp = softmax_rows(out.experience_logits.view());
        Ok((0..desc.nrows())
            .map(|i| NetworkOutputs {
                phase_probs: heads::row_to_vec(phase.row(i)),
                experience_probs: heads::row_to_vec(exp.row(i)),
                rsd: out.rsd[i].as_f64(),
                frame_descriptor: heads::row_to_vec(desc.row(i)),
                video_descriptor: heads::row_to_vec(video_desc.row(i)),
            })
            .collect())
    }

    pub fn session(&self) -> InferenceSession<'_, F> {
        let mut state = RecurrentState::new();
        state.reset(self);
        InferenceSession { net: self, state }
    }
}

/// Frame-by-frame inference with a persistent recurrent state.
pub struct InferenceSession<'a, F> {
    net: &'a CataNet<F>,
    state: RecurrentState<F>,
}

impl<F: Real> InferenceSession<'_, F> {
    pub fn step(&mut self, frame: &Frame, elapsed: f64) -> Result<NetworkOutputs> {
        let input = self.net.build_input(&[frame], &[elapsed])?;
        let (desc, _) = self.net.encoder.forward(&input)?;
        let desc = desc.row(0).to_vec();
        let video_desc = self.net.temporal_step(&desc, &mut self.state)?;
        let p = self.net.predict_heads(&video_desc, Some(elapsed))?;
        Ok(NetworkOutputs {
            phase_probs: p.phase_probs,
            experience_probs: p.experience_probs,
            rsd: p.rsd,
            frame_descriptor: desc.iter().map(|v| v.as_f64()).collect(),
            video_descriptor: video_desc.iter().map(|v| v.as_f64()).collect(),
        })
    }

    pub fn reset(&mut self) {
        self.state.reset(self.net);
    }

    pub fn frames_processed(&self) -> usize {
        self.state.steps()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, CorpusSpec};

    fn small_config(mode: ElapsedMode) -> ModelConfig {
        ModelConfig {
            frame_size: (16, 16),
            encoder_channels: vec![4, 8],
            frame_descriptor_dim: 8,
            video_descriptor_dim: 6,
            elapsed_mode: mode,
            ..ModelConfig::desk()
        }
    }

    fn small_video() -> VideoSequence {
        let spec = CorpusSpec {
            n_videos: 1,
            frame_size: (16, 16),
            senior_total_mean: 8.0,
            ..Default::default()
        };
        generate_corpus(&spec, 5).unwrap().remove(0)
    }

    #[test]
    fn elapsed_channel_values() {
        let frame = Array3::<f64>::from_elem((3, 2, 3), 0.5);
        let at = |t| embed_elapsed_time(&frame, t, 1200.0).unwrap();
        assert!(at(0.0).slice(s![.., .., 3]).iter().all(|&v| v == 0.0));
        assert!(at(1200.0).slice(s![.., .., 3]).iter().all(|&v| v == 1.0));
        assert!(at(300.0).slice(s![.., .., 3]).iter().all(|&v| v == 0.25));
        assert!(at(5000.0).slice(s![.., .., 3]).iter().all(|&v| v == 1.0));
        assert_eq!(at(300.0).slice(s![.., .., ..3]), frame);
        assert!(embed_elapsed_time(&frame, -1.0, 1200.0).unwrap_err().is_validation());
    }

    #[test]
    fn encode_frame_shape_and_determinism() {
        let net = CataNet::<f32>::new(small_config(ElapsedMode::InputChannel), 1).unwrap();
        let frame = small_video().frames[0].to_unit::<f32>();
        let input = embed_elapsed_time(&frame, 2.0, 200.0).unwrap();
        let a = net.encode_frame(&input).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, net.encode_frame(&input).unwrap());
        let other = embed_elapsed_time(&frame, 150.0, 200.0).unwrap();
        assert_ne!(a, net.encode_frame(&other).unwrap());
        assert!(net.encode_frame(&frame).unwrap_err().is_validation());
    }

    #[test]
    fn temporal_step_needs_reset() {
        let net = CataNet::<f32>::new(small_config(ElapsedMode::InputChannel), 1).unwrap();
        let mut state = RecurrentState::new();
        assert!(net.temporal_step(&[0.0; 8], &mut state).unwrap_err().is_validation());
        state.reset(&net);
        let saved = state.clone();
        let a = net.temporal_step(&[0.3; 8], &mut state).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|v| v.is_finite()));
        let mut again = saved;
        assert_eq!(a, net.temporal_step(&[0.3; 8], &mut again).unwrap());
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn zero_heads_give_uniform_outputs() {
        let mut net = CataNet::<f64>::new(small_config(ElapsedMode::InputChannel), 1).unwrap();
        net.heads.fill_zero();
        let p = net.predict_heads(&[0.7; 6], None).unwrap();
        assert!(p.phase_probs.iter().all(|&v| (v - 0.1).abs() < 1e-12));
        assert!(p.experience_probs.iter().all(|&v| (v - 0.5).abs() < 1e-12));
        assert_eq!(p.rsd, 0.0);
        net.aux.as_mut().unwrap().fill_zero();
        let (ph, ex) = net.cnn_aux_heads(&[1.0; 8]).unwrap();
        assert!(ph.iter().all(|&v| (v - 0.1).abs() < 1e-12));
        assert!(ex.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn phase_bias_shift_leaves_probs_unchanged() {
        let mut net = CataNet::<f64>::new(small_config(ElapsedMode::InputChannel), 2).unwrap();
        let before = net.predict_heads(&[0.2, -0.1, 0.4, 0.0, 0.3, -0.5], None).unwrap();
        net.heads.phase.b += 3.7;
        let after = net.predict_heads(&[0.2, -0.1, 0.4, 0.0, 0.3, -0.5], None).unwrap();
        for (a, b) in before.phase_probs.iter().zip(&after.phase_probs) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((before.phase_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_video_length_and_streaming_equivalence() {
        let video = small_video();
        for mode in [ElapsedMode::InputChannel, ElapsedMode::AfterRnn, ElapsedMode::None] {
            let net = CataNet::<f32>::new(small_config(mode), 3).unwrap();
            let batch = net.forward_video(&video).unwrap();
            assert_eq!(batch.len(), video.len());
            let mut session = net.session();
            for (i, b) in batch.iter().enumerate() {
                let s = session.step(&video.frames[i], video.annotations[i].elapsed).unwrap();
                assert!((s.rsd - b.rsd).abs() < 1e-5);
                for (x, y) in s.phase_probs.iter().zip(&b.phase_probs) {
                    assert!((x - y).abs() < 1e-5);
                }
            }
            assert_eq!(session.frames_processed(), video.len());
        }
    }

    #[test]
    fn timestamp_sensitivity_by_mode() {
        let video = small_video();
        let mut shifted = video.clone();
        for a in &mut shifted.annotations {
            a.elapsed += 60.0;
        }
        let none = CataNet::<f32>::new(small_config(ElapsedMode::None), 4).unwrap();
        assert_eq!(none.forward_video(&video).unwrap(), none.forward_video(&shifted).unwrap());
        let input = CataNet::<f32>::new(small_config(ElapsedMode::InputChannel), 4).unwrap();
        let a = input.forward_video(&video).unwrap();
        let b = input.forward_video(&shifted).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| x.rsd != y.rsd));
    }

    #[test]
    fn after_rnn_widens_every_head_by_one() {
        let a = CataNet::<f32>::new(small_config(ElapsedMode::InputChannel), 0).unwrap();
        let b = CataNet::<f32>::new(small_config(ElapsedMode::AfterRnn), 0).unwrap();
        assert_eq!(a.heads.input_dim(), 6);
        assert_eq!(b.heads.input_dim(), 7);
        assert_eq!(b.heads.num_params() - a.heads.num_params(), 10 + 2 + 1);
        assert_eq!(a.encoder.num_params() - b.encoder.num_params(), 9 * 4);
    }

    #[test]
    fn zero_init_channel_makes_time_invisible_to_fresh_encoder() {
        let cfg = ModelConfig {
            elapsed_channel_init: ChannelInit::Zero,
            ..small_config(ElapsedMode::InputChannel)
        };
        let net = CataNet::<f32>::new(cfg, 1).unwrap();
        let frame = small_video().frames[0].to_unit::<f32>();
        let a = net.encode_frame(&embed_elapsed_time(&frame, 0.0, 200.0).unwrap()).unwrap();
        let b = net.encode_frame(&embed_elapsed_time(&frame, 190.0, 200.0).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn widened_encoder_preserves_rgb_response() {
        let cfg = small_config(ElapsedMode::None);
        let rgb = CataNet::<f64>::new(cfg, 9).unwrap();
        let wide = rgb.encoder.widen_input();
        let frame = small_video().frames[0].to_unit::<f64>();
        let mut net4 = CataNet::<f64>::new(small_config(ElapsedMode::InputChannel), 9).unwrap();
        net4.encoder = wide;
        let a = rgb.encode_frame(&frame).unwrap();
        let b = net4.encode_frame(&embed_elapsed_time(&frame, 77.0, 200.0).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
