//! Procedural stand-in for recorded cataract surgeries.
//!
//! Every frame carries a phase cue (background hue plus a geometric pattern,
//! both unique per phase) that is readable from a single image. Surgeon
//! experience never enters the phase cue: it changes the phase-duration
//! statistics and the angular speed of a tool orbiting the pupil, which shows
//! up as the length of the tool's motion streak over the camera shutter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ExperienceLevel, Frame, FrameAnnotation, PhaseId, VideoSequence, N_PHASES};
use crate::error::{ensure, Result};

/// Relative share of the total duration spent in each phase.
pub const DEFAULT_PHASE_PROFILE: [f64; N_PHASES] =
    [0.05, 0.07, 0.10, 0.06, 0.18, 0.14, 0.08, 0.12, 0.12, 0.08];

/// Exposure time of the simulated camera in seconds.
pub const SHUTTER_S: f64 = 0.4;

const SENIOR_TOOL_SPEED: f64 = 1.2;
const ASSISTANT_TOOL_SPEED: f64 = 0.7;
const TOOL_SPEED_JITTER: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgerySpec {
    pub experience: ExperienceLevel,
    /// Mean duration of each phase in time units.
    pub phase_duration_means: [f64; N_PHASES],
    pub phase_duration_stds: [f64; N_PHASES],
    /// `(height, width)` in pixels.
    pub frame_size: (usize, usize),
    pub fps: f64,
    pub noise_level: f64,
    /// Seconds per time unit.
    pub time_scale: f64,
}

impl SurgerySpec {
    /// Spec whose expected total is `total_mean`, split by [`DEFAULT_PHASE_PROFILE`].
    pub fn with_total(experience: ExperienceLevel, total_mean: f64, std_frac: f64) -> Self {
        let means = DEFAULT_PHASE_PROFILE.map(|w| w * total_mean);
        SurgerySpec {
            experience,
            phase_duration_means: means,
            phase_duration_stds: means.map(|m| m * std_frac),
            frame_size: (64, 64),
            fps: 2.5,
            noise_level: 0.2,
            time_scale: 1.0,
        }
    }

    pub fn expected_total(&self) -> f64 {
        self.phase_duration_means.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, (&m, &s)) in self
            .phase_duration_means
            .iter()
            .zip(&self.phase_duration_stds)
            .enumerate()
        {
            ensure!(m > 0.0 && m.is_finite(), "phase {k}: mean duration must be > 0, got {m}");
            ensure!(s >= 0.0 && s.is_finite(), "phase {k}: std must be >= 0, got {s}");
        }
        ensure!(self.fps > 0.0 && self.fps.is_finite(), "fps must be > 0, got {}", self.fps);
        ensure!(
            self.frame_size.0 > 0 && self.frame_size.1 > 0,
            "frame size must be non-empty"
        );
        ensure!(
            (0.0..=1.0).contains(&self.noise_level),
            "noise level must be in [0,1], got {}",
            self.noise_level
        );
        ensure!(self.time_scale > 0.0, "time scale must be > 0");
        Ok(())
    }
}

/// Renders one video. Deterministic in `(spec, seed)`.
pub fn generate_synthetic_video(spec: &SurgerySpec, seed: u64) -> Result<VideoSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let frames_per_unit = spec.fps * spec.time_scale;
    let mut phase_of_frame = Vec::new();
    for k in 0..N_PHASES {
        let mean = spec.phase_duration_means[k];
        let std = spec.phase_duration_stds[k];
        let d = if std > 0.0 {
            Normal::new(mean, std).expect("std checked").sample(&mut rng)
        } else {
            mean
        };
        let d = d.max(0.2 * mean);
        let n = ((d * frames_per_unit).round() as usize).max(1);
        phase_of_frame.extend(std::iter::repeat_n(k, n));
    }

    let n_frames = phase_of_frame.len();
    let total = n_frames as f64 / frames_per_unit;

    let base_speed = match spec.experience {
        ExperienceLevel::Senior => SENIOR_TOOL_SPEED,
        ExperienceLevel::Assistant => ASSISTANT_TOOL_SPEED,
    };
    let scene = Scene {
        tool_speed: base_speed * rng.random_range(1.0 - TOOL_SPEED_JITTER..1.0 + TOOL_SPEED_JITTER),
        tool_phase0: rng.random_range(0.0..2.0 * PI),
        pattern_drift: rng.random_range(0.05..0.15),
        height: spec.frame_size.0,
        width: spec.frame_size.1,
    };
    let noise = Normal::new(0.0, 0.25 * spec.noise_level.max(1e-12)).expect("finite");

    let mut frames = Vec::with_capacity(n_frames);
    let mut annotations = Vec::with_capacity(n_frames);
    for (i, &k) in phase_of_frame.iter().enumerate() {
        let t_sec = i as f64 / spec.fps;
        let mut pixels = scene.render(k, t_sec);
        if spec.noise_level > 0.0 {
            for p in pixels.iter_mut() {
                *p += noise.sample(&mut rng);
            }
        }
        let data = pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        frames.push(Frame::from_raw(scene.height, scene.width, data)?);

        let elapsed = i as f64 / frames_per_unit;
        annotations.push(FrameAnnotation {
            frame_index: i,
            elapsed,
            phase: PhaseId::new(k)?,
            rsd: total - elapsed,
            experience: spec.experience,
        });
    }

    Ok(VideoSequence {
        video_id: format!("synth-{seed}"),
        surgeon_id: "unknown".into(),
        frames,
        annotations,
        fps: spec.fps,
        time_scale: spec.time_scale,
    })
}

/// Corpus-level generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_videos: usize,
    /// The first half (rounded up) are senior surgeons.
    pub n_surgeons: usize,
    pub senior_total_mean: f64,
    pub assistant_total_mean: f64,
    pub senior_std_frac: f64,
    pub assistant_std_frac: f64,
    pub frame_size: (usize, usize),
    pub fps: f64,
    pub noise_level: f64,
    pub time_scale: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_videos: 50,
            n_surgeons: 2,
            senior_total_mean: 60.0,
            assistant_total_mean: 120.0,
            senior_std_frac: 0.2,
            assistant_std_frac: 0.3,
            frame_size: (64, 64),
            fps: 2.5,
            noise_level: 0.2,
            time_scale: 1.0,
        }
    }
}

impl CorpusSpec {
    pub fn surgeon(&self, j: usize) -> (String, ExperienceLevel) {
        let n_senior = self.n_surgeons.div_ceil(2);
        if j < n_senior {
            (format!("senior-{}", j + 1), ExperienceLevel::Senior)
        } else {
            (format!("assistant-{}", j - n_senior + 1), ExperienceLevel::Assistant)
        }
    }

    pub fn surgery_spec(&self, experience: ExperienceLevel) -> SurgerySpec {
        let (total, frac) = match experience {
            ExperienceLevel::Senior => (self.senior_total_mean, self.senior_std_frac),
            ExperienceLevel::Assistant => (self.assistant_total_mean, self.assistant_std_frac),
        };
        SurgerySpec {
            frame_size: self.frame_size,
            fps: self.fps,
            noise_level: self.noise_level,
            time_scale: self.time_scale,
            ..SurgerySpec::with_total(experience, total, frac)
        }
    }
}

/// Videos are assigned to surgeons round-robin; ids are `video-000`, `video-001`, ...
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<VideoSequence>> {
    ensure!(spec.n_videos >= 1, "corpus needs at least one video");
    ensure!(spec.n_surgeons >= 1, "corpus needs at least one surgeon");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..spec.n_videos).map(|_| rng.random()).collect();
    seeds
        .into_iter()
        .enumerate()
        .map(|(i, video_seed)| {
            let (surgeon_id, experience) = spec.surgeon(i % spec.n_surgeons);
            let mut v = generate_synthetic_video(&spec.surgery_spec(experience), video_seed)?;
            v.video_id = format!("video-{i:03}");
            v.surgeon_id = surgeon_id;
            Ok(v)
        })
        .collect()
}

struct Scene {
    tool_speed: f64,
    tool_phase0: f64,
    pattern_drift: f64,
    height: usize,
    width: usize,
}

impl Scene {
    /// Returns `H*W*3` linear RGB values before noise.
    fn render(&self, phase: usize, t_sec: f64) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let base = hsv_to_rgb(phase as f64 / N_PHASES as f64, 0.55, 0.75);
        let shift = self.pattern_drift * t_sec;
        let min_side = h.min(w) as f64;
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let pupil_r = 0.18 * min_side;

        let mut out = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 / w as f64;
                let v = y as f64 / h as f64;
                let m = 0.2 * pattern(phase, u, v, shift);
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let shade = if (dx * dx + dy * dy).sqrt() < pupil_r { 0.6 } else { 1.0 };
                let o = (y * w + x) * 3;
                for c in 0..3 {
                    out[o + c] = (base[c] + m) * shade;
                }
            }
        }

        // Tool streak: the arc swept by the tool tip during the exposure.
        let orbit = 0.3 * min_side;
        let tip_r = (0.025 * min_side).max(1.0);
        let a1 = self.tool_phase0 + self.tool_speed * t_sec;
        let a0 = a1 - self.tool_speed * SHUTTER_S;
        let arc_len = orbit * (a1 - a0);
        let n_samples = ((arc_len / 0.5).ceil() as usize).max(1);
        let mut painted = vec![false; h * w];
        for s in 0..=n_samples {
            let a = a0 + (a1 - a0) * s as f64 / n_samples as f64;
            let py = cy + orbit * a.sin();
            let px = cx + orbit * a.cos();
            let y_lo = (py - tip_r).floor().max(0.0) as usize;
            let y_hi = ((py + tip_r).ceil() as usize).min(h - 1);
            let x_lo = (px - tip_r).floor().max(0.0) as usize;
            let x_hi = ((px + tip_r).ceil() as usize).min(w - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let d2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
                    if d2 <= tip_r * tip_r {
                        painted[y * w + x] = true;
                    }
                }
            }
        }
        for (i, _) in painted.iter().enumerate().filter(|(_, &p)| p) {
            out[i * 3..i * 3 + 3].copy_from_slice(&[0.92, 0.92, 0.9]);
        }
        out
    }
}

/// Phase-specific texture in `[-1, 1]`.
fn pattern(phase: usize, u: f64, v: f64, shift: f64) -> f64 {
    let tau = 2.0 * PI;
    let (ru, rv) = (u - 0.5, v - 0.5);
    match phase {
        0 => (tau * (4.0 * v + shift)).sin(),
        1 => (tau * (4.0 * u + shift)).sin(),
        2 => (tau * (3.0 * (u + v) + shift)).sin(),
        3 => (tau * (3.0 * (u - v) + shift)).sin(),
        4 => ((tau * (3.0 * u + shift)).sin() * (tau * 3.0 * v).sin()).signum(),
        5 => (tau * (5.0 * (ru * ru + rv * rv).sqrt() - shift)).sin(),
        6 => (6.0 * rv.atan2(ru) + tau * shift).sin(),
        7 => {
            if (tau * (4.0 * u + shift)).cos() * (tau * 4.0 * v).cos() > 0.5 {
                1.0
            } else {
                -0.5
            }
        }
        8 => (tau * (8.0 * v + shift)).sin(),
        _ => 0.5 * ((tau * (2.0 * u + shift)).sin() + (tau * 2.0 * v).sin()),
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32;
    let f = h6 - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_var_spec() -> SurgerySpec {
        SurgerySpec {
            experience: ExperienceLevel::Senior,
            phase_duration_means: [4.0; N_PHASES],
            phase_duration_stds: [0.0; N_PHASES],
            frame_size: (16, 16),
            fps: 2.5,
            noise_level: 0.1,
            time_scale: 1.0,
        }
    }

    #[test]
    fn zero_variance_gives_exact_length() {
        let v = generate_synthetic_video(&zero_var_spec(), 3).unwrap();
        assert_eq!(v.len(), 100);
        assert!((v.total_duration() - 40.0).abs() < 1e-12);
        v.validate().unwrap();
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic_video(&zero_var_spec(), 11).unwrap();
        let b = generate_synthetic_video(&zero_var_spec(), 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_video(&zero_var_spec(), 12).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = zero_var_spec();
        s.phase_duration_means[2] = 0.0;
        assert!(generate_synthetic_video(&s, 0).unwrap_err().is_validation());
        let mut s = zero_var_spec();
        s.fps = 0.0;
        assert!(generate_synthetic_video(&s, 0).unwrap_err().is_validation());
    }

    #[test]
    fn invariants_hold_for_random_durations() {
        let spec = SurgerySpec::with_total(ExperienceLevel::Assistant, 120.0, 0.3);
        for seed in 0..5 {
            let v = generate_synthetic_video(&spec, seed).unwrap();
            v.validate().unwrap();
            let total = v.total_duration();
            for w in v.annotations.windows(2) {
                assert!(w[1].phase >= w[0].phase);
            }
            for a in &v.annotations {
                assert!((a.elapsed + a.rsd - total).abs() < 1e-6);
            }
            // every phase gets at least one frame
            let mut seen = [false; N_PHASES];
            v.annotations.iter().for_each(|a| seen[a.phase.index()] = true);
            assert!(seen.iter().all(|&s| s));
        }
    }

    /// Monte-Carlo check of the 5.6 / 11.8 minute averages.
    #[test]
    fn mean_durations_match_experience_averages() {
        for (exp, target) in [(ExperienceLevel::Senior, 5.6), (ExperienceLevel::Assistant, 11.8)] {
            let mut spec = SurgerySpec::with_total(exp, target, 0.3);
            spec.time_scale = 60.0;
            spec.frame_size = (4, 4);
            let mean = (0..200)
                .map(|s| generate_synthetic_video(&spec, s).unwrap().total_duration())
                .sum::<f64>()
                / 200.0;
            assert!((mean - target).abs() / target < 0.05, "{exp:?}: {mean}");
        }
    }

    #[test]
    fn phase_cue_differs_between_phases() {
        let scene = Scene {
            tool_speed: 1.0,
            tool_phase0: 0.0,
            pattern_drift: 0.1,
            height: 32,
            width: 32,
        };
        let frames: Vec<Vec<f64>> = (0..N_PHASES).map(|k| scene.render(k, 1.0)).collect();
        for a in 0..N_PHASES {
            for b in a + 1..N_PHASES {
                let d: f64 = frames[a].iter().zip(&frames[b]).map(|(x, y)| (x - y).abs()).sum();
                assert!(d > 10.0, "phases {a} and {b} look alike");
            }
        }
    }

    #[test]
    fn corpus_assigns_surgeons_round_robin() {
        let spec = CorpusSpec {
            n_videos: 6,
            n_surgeons: 4,
            frame_size: (8, 8),
            ..CorpusSpec::default()
        };
        let videos = generate_corpus(&spec, 1).unwrap();
        let surgeons: Vec<_> = videos.iter().map(|v| v.surgeon_id.as_str()).collect();
        assert_eq!(
            surgeons,
            ["senior-1", "senior-2", "assistant-1", "assistant-2", "senior-1", "senior-2"]
        );
        assert_eq!(videos[2].experience(), ExperienceLevel::Assistant);
        assert_eq!(videos[5].video_id, "video-005");
    }
}
