//! Surgical video sequences, their per-frame labels, and the corpus-level
//! plumbing around them (synthetic generation, splits, sampling, disk I/O).

mod io;
mod sampling;
mod split;
mod synth;

use std::fmt;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::Real;

pub use io::{load_dataset, load_video_by_id, read_manifest, save_dataset, Manifest, ManifestEntry};
pub use sampling::{stratified_sample, FrameSample};
pub use split::{split_dataset, DatasetSplit, Fold};
pub use synth::{
    generate_corpus, generate_synthetic_video, CorpusSpec, SurgerySpec, DEFAULT_PHASE_PROFILE,
    SHUTTER_S,
};

pub const N_PHASES: usize = 10;
pub const N_EXPERIENCE: usize = 2;

/// Surgical phase index in `0..10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PhaseId(u8);

impl PhaseId {
    pub const HYDRODISSECTION: PhaseId = PhaseId(3);
    pub const LENS_IMPLANTATION: PhaseId = PhaseId(7);

    const NAMES: [&'static str; N_PHASES] = [
        "Incision",
        "Viscous agent injection",
        "Rhexis",
        "Hydrodissection",
        "Phacoemulsification",
        "Irrigation and aspiration",
        "Capsule polishing",
        "Lens implantation",
        "Viscous agent removal",
        "Tonifying and antibiotics",
    ];

    pub fn new(index: usize) -> Result<Self> {
        ensure!(index < N_PHASES, "phase index {index} out of range 0..{N_PHASES}");
        Ok(PhaseId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = PhaseId> {
        (0..N_PHASES as u8).map(PhaseId)
    }
}

impl TryFrom<u8> for PhaseId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        PhaseId::new(v as usize)
    }
}

impl From<PhaseId> for u8 {
    fn from(p: PhaseId) -> u8 {
        p.0
    }
}

impl fmt::Display for PhaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.0, self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperienceLevel {
    Senior,
    Assistant,
}

impl ExperienceLevel {
    /// Class index used by the experience head (`Senior` = 0).
    pub fn index(self) -> usize {
        match self {
            ExperienceLevel::Senior => 0,
            ExperienceLevel::Assistant => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(ExperienceLevel::Senior),
            1 => Ok(ExperienceLevel::Assistant),
            _ => Err(Error::validation(format!("experience index {i} out of range"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperienceLevel::Senior => "senior",
            ExperienceLevel::Assistant => "assistant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "senior" => Ok(ExperienceLevel::Senior),
            "assistant" => Ok(ExperienceLevel::Assistant),
            other => Err(Error::validation(format!("unknown experience level `{other}`"))),
        }
    }
}

/// Ground truth for one frame. Times are in the dataset's time unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_index: usize,
    pub elapsed: f64,
    pub phase: PhaseId,
    pub rsd: f64,
    pub experience: ExperienceLevel,
}

impl FrameAnnotation {
    pub fn total_duration(&self) -> f64 {
        self.elapsed + self.rsd
    }
}

/// 8-bit RGB frame, row-major `H x W x 3`.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame({}x{})", self.height, self.width)
    }
}

impl Frame {
    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "frame must be non-empty");
        ensure!(
            data.len() == height * width * 3,
            "frame buffer has {} bytes, expected {}",
            data.len(),
            height * width * 3
        );
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    /// Quantizes a `[0,1]` image to 8 bits.
    pub fn from_unit<F: Real>(img: &Array3<F>) -> Result<Self> {
        let (h, w, c) = img.dim();
        ensure!(c == 3, "expected 3 channels, got {c}");
        let data = img
            .iter()
            .map(|v| {
                let v = v.to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
                (v * 255.0).round() as u8
            })
            .collect();
        Frame::from_raw(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Pixel values scaled to `[0,1]`.
    pub fn to_unit<F: Real>(&self) -> Array3<F> {
        let scale = F::from(1.0 / 255.0).unwrap();
        Array3::from_shape_fn((self.height, self.width, 3), |(y, x, c)| {
            F::from(self.data[(y * self.width + x) * 3 + c]).unwrap() * scale
        })
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer size checked at construction")
    }

    pub fn from_image(img: &image::RgbImage) -> Self {
        Frame {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub video_id: String,
    pub surgeon_id: String,
    pub frames: Vec<Frame>,
    pub annotations: Vec<FrameAnnotation>,
    /// Frames per second of wall-clock video.
    pub fps: f64,
    /// Seconds per dataset time unit (1 for seconds, 60 for minutes).
    pub time_scale: f64,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn experience(&self) -> ExperienceLevel {
        self.annotations[0].experience
    }

    /// Total duration in time units.
    pub fn total_duration(&self) -> f64 {
        self.annotations[0].total_duration()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frames[0].size()
    }

    pub fn elapsed_times(&self) -> Vec<f64> {
        self.annotations.iter().map(|a| a.elapsed).collect()
    }

    /// Checks the structural invariants shared by all sequences.
    pub fn validate(&self) -> Result<()> {
        let id = &self.video_id;
        let fail = |message: String| Error::Dataset {
            video_id: id.clone(),
            message,
        };
        if self.frames.is_empty() {
            return Err(fail("sequence has no frames".into()));
        }
        if self.frames.len() != self.annotations.len() {
            return Err(fail(format!(
                "{} frames but {} annotations",
                self.frames.len(),
                self.annotations.len()
            )));
        }
        if !(self.fps > 0.0) || !(self.time_scale > 0.0) {
            return Err(fail("fps and time_scale must be positive".into()));
        }
        let total = self.total_duration();
        let experience = self.experience();
        let size = self.frame_size();
        for (i, (a, f)) in self.annotations.iter().zip(&self.frames).enumerate() {
            if f.size() != size {
                return Err(fail(format!("frame {i} has a different size")));
            }
            if a.elapsed < 0.0 || a.rsd < 0.0 {
                return Err(fail(format!("frame {i} has negative times")));
            }
            if (a.total_duration() - total).abs() > 1e-6 {
                return Err(fail(format!("frame {i}: elapsed + rsd is not constant")));
            }
            if a.experience != experience {
                return Err(fail(format!("frame {i}: experience label changes within video")));
            }
            if i > 0 && a.rsd > self.annotations[i - 1].rsd {
                return Err(fail(format!("frame {i}: rsd increases")));
            }
        }
        Ok(())
    }
}

/// `rsd[i] = total - t[i]`.
pub fn compute_rsd_labels(total_duration: f64, frame_times: &[f64]) -> Result<Vec<f64>> {
    ensure!(total_duration >= 0.0, "total duration must be non-negative");
    frame_times
        .iter()
        .map(|&t| {
            ensure!(
                t >= 0.0 && t <= total_duration + 1e-9,
                "frame time {t} outside [0, {total_duration}]"
            );
            Ok((total_duration - t).max(0.0))
        })
        .collect()
}

/// Keeps every `fps / target_fps`-th frame starting at frame 0.
pub fn temporal_downsample(video: &VideoSequence, target_fps: f64) -> Result<VideoSequence> {
    ensure!(target_fps > 0.0, "target fps must be positive");
    let ratio = video.fps / target_fps;
    let stride = ratio.round();
    ensure!(
        stride >= 1.0 && (ratio - stride).abs() <= 1e-9,
        "cannot downsample {} fps to {} fps: ratio {} is not a positive integer",
        video.fps,
        target_fps,
        ratio
    );
    let stride = stride as usize;
    let keep = |i: &usize| i % stride == 0;
    Ok(VideoSequence {
        video_id: video.video_id.clone(),
        surgeon_id: video.surgeon_id.clone(),
        frames: (0..video.len())
            .filter(keep)
            .map(|i| video.frames[i].clone())
            .collect(),
        annotations: (0..video.len())
            .filter(keep)
            .map(|i| video.annotations[i])
            .collect(),
        fps: target_fps,
        time_scale: video.time_scale,
    })
}

/// Display label for a time unit expressed in seconds per unit.
pub fn time_unit_label(time_scale: f64) -> String {
    if time_scale == 1.0 {
        "s".to_string()
    } else if time_scale == 60.0 {
        "min".to_string()
    } else {
        format!("{time_scale} s")
    }
}
