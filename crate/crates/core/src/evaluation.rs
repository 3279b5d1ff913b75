//! RSD, phase and experience metrics, fold ensembling, inference-speed
//! measurement and report generation.
//!
//! Conventions: RSD predictions are clipped at 0 before every MAE variant;
//! MAE-k windows select frames whose ground-truth RSD is at most k; argmax
//! ties go to the lowest class index; `std` is the population standard
//! deviation over videos.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{time_unit_label, ExperienceLevel, FrameAnnotation, PhaseId, VideoSequence, N_PHASES};
use crate::error::{ensure, Error, Result};
use crate::model::FramePrediction;
use crate::training::argmax;

/// Minutes of the short-horizon windows, converted to the track's time unit.
pub const MAE5_SECONDS: f64 = 300.0;
pub const MAE2_SECONDS: f64 = 120.0;

/// Predictions for one video aligned with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrack {
    pub video_id: String,
    pub surgeon_id: String,
    pub experience: ExperienceLevel,
    pub fps: f64,
    /// Seconds per time unit.
    pub time_scale: f64,
    pub predictions: Vec<FramePrediction>,
    pub annotations: Vec<FrameAnnotation>,
}

impl PredictionTrack {
    pub fn new(video: &VideoSequence, predictions: Vec<FramePrediction>) -> Result<Self> {
        let t = PredictionTrack {
            video_id: video.video_id.clone(),
            surgeon_id: video.surgeon_id.clone(),
            experience: video.experience(),
            fps: video.fps,
            time_scale: video.time_scale,
            predictions,
            annotations: video.annotations.clone(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.predictions.is_empty(), "track `{}` is empty", self.video_id);
        ensure!(
            self.predictions.len() == self.annotations.len(),
            "track `{}` has {} predictions for {} frames",
            self.video_id,
            self.predictions.len(),
            self.annotations.len()
        );
        ensure!(self.fps > 0.0, "track `{}` has non-positive fps", self.video_id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Absolute error of the clipped RSD prediction at frame `i`.
    pub fn abs_error(&self, i: usize) -> f64 {
        (self.predictions[i].rsd.max(0.0) - self.annotations[i].rsd).abs()
    }

    pub fn phase_pred(&self, i: usize) -> usize {
        argmax(ndarray::ArrayView1::from(&self.predictions[i].phase_probs[..]))
    }

    pub fn experience_pred(&self, i: usize) -> usize {
        argmax(ndarray::ArrayView1::from(&self.predictions[i].experience_probs[..]))
    }

    pub fn duration(&self) -> f64 {
        self.annotations.first().map_or(0.0, |a| a.total_duration())
    }

    /// Converts a window in seconds to the track's time unit.
    pub fn window_units(&self, seconds: f64) -> f64 {
        seconds / self.time_scale
    }
}

/// Frame-mean absolute RSD error.
pub fn mae(track: &PredictionTrack) -> Result<f64> {
    track.validate()?;
    Ok((0..track.len()).map(|i| track.abs_error(i)).sum::<f64>() / track.len() as f64)
}

/// MAE over frames with ground-truth RSD `<= window` (in the track's unit).
/// A video shorter than the window contributes all of its frames.
pub fn mae_last_window(track: &PredictionTrack, window: f64) -> Result<f64> {
    track.validate()?;
    ensure!(window > 0.0, "window must be positive");
    let sel: Vec<usize> = (0..track.len()).filter(|&i| track.annotations[i].rsd <= window).collect();
    if sel.is_empty() || track.duration() <= window {
        return mae(track);
    }
    Ok(sel.iter().map(|&i| track.abs_error(i)).sum::<f64>() / sel.len() as f64)
}

/// Error at the last ground-truth frame of `phase`; `None` if the phase never occurs.
pub fn mae_at_phase_end(track: &PredictionTrack, phase: PhaseId) -> Result<Option<f64>> {
    track.validate()?;
    Ok(track
        .annotations
        .iter()
        .rposition(|a| a.phase == phase)
        .map(|i| track.abs_error(i)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoPhaseMetrics {
    pub f1_macro: f64,
    /// `None` when Hydrodissection is neither present nor predicted.
    pub f1_hyd: Option<f64>,
    pub acc: f64,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let d = 2 * tp + fp + fn_;
    (d > 0).then(|| 2.0 * tp as f64 / d as f64)
}

pub fn video_phase_metrics(track: &PredictionTrack) -> Result<VideoPhaseMetrics> {
    track.validate()?;
    let mut tp = [0usize; N_PHASES];
    let mut fp = [0usize; N_PHASES];
    let mut fn_ = [0usize; N_PHASES];
    let mut present = [false; N_PHASES];
    let mut correct = 0;
    for i in 0..track.len() {
        let y = track.annotations[i].phase.index();
        let p = track.phase_pred(i);
        ensure!(p < N_PHASES, "phase prediction out of range");
        present[y] = true;
        if p == y {
            tp[y] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let scores: Vec<f64> = (0..N_PHASES)
        .filter(|&k| present[k])
        .map(|k| f1(tp[k], fp[k], fn_[k]).unwrap_or(0.0))
        .collect();
    let h = PhaseId::HYDRODISSECTION.index();
    Ok(VideoPhaseMetrics {
        f1_macro: scores.iter().sum::<f64>() / scores.len() as f64,
        f1_hyd: f1(tp[h], fp[h], fn_[h]),
        acc: correct as f64 / track.len() as f64,
    })
}

/// Mean, population standard deviation and count over videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Videos left out because the metric is undefined for them.
    #[serde(default)]
    pub excluded_ids: Vec<String>,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        ensure!(!values.is_empty(), "no values to aggregate");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Stat {
            mean,
            std: var.sqrt(),
            n: values.len(),
            excluded_ids: Vec::new(),
        })
    }

    /// Aggregates the defined values; ids of undefined entries are listed.
    /// Returns `None` when nothing is defined.
    pub fn from_optional<'a>(values: impl IntoIterator<Item = (&'a str, Option<f64>)>) -> Option<Self> {
        let mut defined = Vec::new();
        let mut excluded = Vec::new();
        for (id, v) in values {
            match v {
                Some(v) => defined.push(v),
                None => excluded.push(id.to_string()),
            }
        }
        let mut s = Stat::from_values(&defined).ok()?;
        s.excluded_ids = excluded;
        Some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub f1_macro: Stat,
    pub f1_hyd: Option<Stat>,
    pub acc: Stat,
}

/// Per-video phase metrics aggregated as mean ± std over videos.
pub fn phase_metrics(tracks: &[PredictionTrack]) -> Result<PhaseSummary> {
    ensure!(!tracks.is_empty(), "no tracks");
    let per: Vec<VideoPhaseMetrics> = tracks.iter().map(video_phase_metrics).collect::<Result<_>>()?;
    Ok(PhaseSummary {
        f1_macro: Stat::from_values(&per.iter().map(|m| m.f1_macro).collect::<Vec<_>>())?,
        f1_hyd: Stat::from_optional(tracks.iter().zip(&per).map(|(t, m)| (t.video_id.as_str(), m.f1_hyd))),
        acc: Stat::from_values(&per.iter().map(|m| m.acc).collect::<Vec<_>>())?,
    })
}

/// Fraction of frames whose experience argmax matches the video's label.
pub fn video_experience_accuracy(track: &PredictionTrack) -> Result<f64> {
    track.validate()?;
    let y = track.experience.index();
    let hits = (0..track.len()).filter(|&i| track.experience_pred(i) == y).count();
    Ok(hits as f64 / track.len() as f64)
}

pub fn experience_accuracy(tracks: &[PredictionTrack]) -> Result<Stat> {
    ensure!(!tracks.is_empty(), "no tracks");
    let v: Vec<f64> = tracks.iter().map(video_experience_accuracy).collect::<Result<_>>()?;
    Stat::from_values(&v)
}

/// Per-frame mean of the outputs of several fold models.
pub fn ensemble_average(fold_outputs: &[Vec<FramePrediction>]) -> Result<Vec<FramePrediction>> {
    ensure!(!fold_outputs.is_empty(), "no fold outputs to average");
    let n = fold_outputs[0].len();
    ensure!(
        fold_outputs.iter().all(|f| f.len() == n),
        "fold outputs cover different frame counts"
    );
    let k = fold_outputs.len() as f64;
    (0..n)
        .map(|i| {
            let first = &fold_outputs[0][i];
            let mut phase = vec![0.0; first.phase_probs.len()];
            let mut exp = vec![0.0; first.experience_probs.len()];
            let mut rsd = 0.0;
            for f in fold_outputs {
                let p = &f[i];
                ensure!(
                    p.phase_probs.len() == phase.len() && p.experience_probs.len() == exp.len(),
                    "fold outputs have different class counts"
                );
                phase.iter_mut().zip(&p.phase_probs).for_each(|(a, b)| *a += b);
                exp.iter_mut().zip(&p.experience_probs).for_each(|(a, b)| *a += b);
                rsd += p.rsd;
            }
            let norm = |v: &mut Vec<f64>| {
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
            };
            norm(&mut phase);
            norm(&mut exp);
            Ok(FramePrediction {
                phase_probs: phase,
                experience_probs: exp,
                rsd: rsd / k,
            })
        })
        .collect()
}

/// Time source for speed measurements; tests inject a deterministic one.
pub trait Clock {
    fn now(&self) -> Duration;
}

/// Wall-clock time since construction.
#[derive(Debug, Clone)]
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        SystemClock(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// A clock that only moves when told to; clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<Mutex<Duration>>);

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.0.lock().expect("clock lock poisoned") += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.0.lock().expect("clock lock poisoned")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub fps: f64,
    pub n_warmup: usize,
    pub n_measure: usize,
}

/// Times `n_measure` calls of `step` after `n_warmup` untimed ones.
/// `step(i)` processes frame `i` of the run.
pub fn measure_inference_speed<C: Clock>(
    mut step: impl FnMut(usize) -> Result<()>,
    clock: &C,
    n_warmup: usize,
    n_measure: usize,
) -> Result<(SpeedStats, Vec<f64>)> {
    ensure!(n_measure >= 1, "need at least one measured frame");
    for i in 0..n_warmup {
        step(i)?;
    }
    let mut samples = Vec::with_capacity(n_measure);
    for i in 0..n_measure {
        let t0 = clock.now();
        step(n_warmup + i)?;
        samples.push((clock.now() - t0).as_secs_f64() * 1e3);
    }
    let s = Stat::from_values(&samples)?;
    Ok((
        SpeedStats {
            mean_ms: s.mean,
            std_ms: s.std,
            fps: 1000.0 / s.mean,
            n_warmup,
            n_measure,
        },
        samples,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub surgeon_id: String,
    pub experience: ExperienceLevel,
    pub n_frames: usize,
    pub duration: f64,
    pub mae: f64,
    pub mae5: f64,
    pub mae2: f64,
    pub mae_hyd: Option<f64>,
    pub f1_macro: f64,
    pub f1_hyd: Option<f64>,
    pub phase_acc: f64,
    pub experience_acc: f64,
    /// The video is shorter than the window, so all frames were used.
    pub shorter_than_mae5: bool,
    pub shorter_than_mae2: bool,
}

pub fn video_metrics(track: &PredictionTrack) -> Result<VideoMetrics> {
    let w5 = track.window_units(MAE5_SECONDS);
    let w2 = track.window_units(MAE2_SECONDS);
    let ph = video_phase_metrics(track)?;
    Ok(VideoMetrics {
        video_id: track.video_id.clone(),
        surgeon_id: track.surgeon_id.clone(),
        experience: track.experience,
        n_frames: track.len(),
        duration: track.duration(),
        mae: mae(track)?,
        mae5: mae_last_window(track, w5)?,
        mae2: mae_last_window(track, w2)?,
        mae_hyd: mae_at_phase_end(track, PhaseId::HYDRODISSECTION)?,
        f1_macro: ph.f1_macro,
        f1_hyd: ph.f1_hyd,
        phase_acc: ph.acc,
        experience_acc: video_experience_accuracy(track)?,
        shorter_than_mae5: track.duration() <= w5,
        shorter_than_mae2: track.duration() <= w2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n_videos: usize,
    pub mae: Stat,
    pub mae5: Stat,
    pub mae2: Stat,
    /// `None` when no video of the group contains the phase.
    pub mae_hyd: Option<Stat>,
    pub experience_acc: Stat,
}

/// A group is either computed or explicitly omitted for lack of videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupEntry {
    Metrics(GroupMetrics),
    Omitted { omitted: bool, reason: String },
}

impl GroupEntry {
    pub fn metrics(&self) -> Option<&GroupMetrics> {
        match self {
            GroupEntry::Metrics(m) => Some(m),
            GroupEntry::Omitted { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub f1_macro: Stat,
    pub f1_hyd: Option<Stat>,
    pub acc: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub unit: String,
    pub variant: String,
    pub notes: Vec<String>,
    pub groups: BTreeMap<String, GroupEntry>,
    pub phase: PhaseReport,
    pub experience_acc: Stat,
    pub speed: Option<SpeedStats>,
    pub per_video: Vec<VideoMetrics>,
}

pub const GROUPS: [&str; 3] = ["all", "senior", "assistant"];

fn group_metrics(rows: &[&VideoMetrics]) -> Result<GroupMetrics> {
    let col = |f: fn(&VideoMetrics) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
    Ok(GroupMetrics {
        n_videos: rows.len(),
        mae: Stat::from_values(&col(|r| r.mae))?,
        mae5: Stat::from_values(&col(|r| r.mae5))?,
        mae2: Stat::from_values(&col(|r| r.mae2))?,
        mae_hyd: Stat::from_optional(rows.iter().map(|r| (r.video_id.as_str(), r.mae_hyd))),
        experience_acc: Stat::from_values(&col(|r| r.experience_acc))?,
    })
}

/// Computes all metrics; aggregates are recomputed from the per-video rows.
pub fn build_report(tracks: &[PredictionTrack], speed: Option<SpeedStats>, variant: &str) -> Result<MetricsReport> {
    ensure!(!tracks.is_empty(), "no tracks to report");
    let scale = tracks[0].time_scale;
    ensure!(
        tracks.iter().all(|t| t.time_scale == scale),
        "tracks use different time units"
    );
    let per_video: Vec<VideoMetrics> = tracks.iter().map(video_metrics).collect::<Result<_>>()?;
    report_from_rows(per_video, speed, variant, scale)
}

pub fn report_from_rows(
    per_video: Vec<VideoMetrics>,
    speed: Option<SpeedStats>,
    variant: &str,
    time_scale: f64,
) -> Result<MetricsReport> {
    ensure!(!per_video.is_empty(), "no videos to report");
    let mut groups = BTreeMap::new();
    for g in GROUPS {
        let rows: Vec<&VideoMetrics> = per_video
            .iter()
            .filter(|r| g == "all" || r.experience.as_str() == g)
            .collect();
        let entry = if rows.is_empty() {
            GroupEntry::Omitted {
                omitted: true,
                reason: format!("no {g} videos"),
            }
        } else {
            GroupEntry::Metrics(group_metrics(&rows)?)
        };
        groups.insert(g.to_string(), entry);
    }
    let field = |f: fn(&VideoMetrics) -> f64| per_video.iter().map(f).collect::<Vec<_>>();
    let phase = PhaseReport {
        f1_macro: Stat::from_values(&field(|r| r.f1_macro))?,
        f1_hyd: Stat::from_optional(per_video.iter().map(|r| (r.video_id.as_str(), r.f1_hyd))),
        acc: Stat::from_values(&field(|r| r.phase_acc))?,
    };
    let experience_acc = Stat::from_values(&field(|r| r.experience_acc))?;
    let unit = time_unit_label(time_scale);
    Ok(MetricsReport {
        notes: vec![
            format!("all times in {unit}; RSD predictions clipped at 0 before every MAE"),
            "MAE-5/MAE-2 select frames by ground-truth RSD <= window; shorter videos use all frames".into(),
            "MAE@Hyd is taken at the last ground-truth Hydrodissection frame".into(),
            "experience accuracy: per-frame argmax vs the video label, averaged per video".into(),
            "std is the population standard deviation over videos".into(),
        ],
        unit,
        variant: variant.to_string(),
        groups,
        phase,
        experience_acc,
        speed,
        per_video,
    })
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.json` and a flat per-video `report.csv` into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jpath = dir.join(REPORT_JSON);
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::format(&jpath, e.to_string()))?;
    fs::write(&jpath, json).map_err(|e| Error::io(&jpath, e))?;

    let cpath = dir.join(REPORT_CSV);
    let csv_err = |e: csv::Error| Error::format(&cpath, e.to_string());
    let mut w = csv::Writer::from_path(&cpath).map_err(csv_err)?;
    let u = &report.unit;
    let header = [
        "video_id".to_string(),
        "surgeon_id".into(),
        "experience".into(),
        "n_frames".into(),
        format!("duration_{u}"),
        format!("mae_{u}"),
        format!("mae5_{u}"),
        format!("mae2_{u}"),
        format!("mae_hyd_{u}"),
        "f1_macro".into(),
        "f1_hyd".into(),
        "phase_acc".into(),
        "experience_acc".into(),
        "shorter_than_mae5".into(),
        "shorter_than_mae2".into(),
    ];
    w.write_record(&header).map_err(csv_err)?;
    for r in &report.per_video {
        w.write_record([
            r.video_id.clone(),
            r.surgeon_id.clone(),
            r.experience.as_str().to_string(),
            r.n_frames.to_string(),
            r.duration.to_string(),
            r.mae.to_string(),
            r.mae5.to_string(),
            r.mae2.to_string(),
            opt(r.mae_hyd),
            r.f1_macro.to_string(),
            opt(r.f1_hyd),
            r.phase_acc.to_string(),
            r.experience_acc.to_string(),
            r.shorter_than_mae5.to_string(),
            r.shorter_than_mae2.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&cpath, e))
}

pub fn read_report(dir: &Path) -> Result<MetricsReport> {
    let p = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(rsd_true: &[f64], rsd_pred: &[f64], phases: &[usize]) -> PredictionTrack {
        let total = rsd_true[0];
        let annotations = rsd_true
            .iter()
            .zip(phases)
            .enumerate()
            .map(|(i, (&r, &p))| FrameAnnotation {
                frame_index: i,
                elapsed: total - r,
                phase: PhaseId::new(p).unwrap(),
                rsd: r,
                experience: ExperienceLevel::Senior,
            })
            .collect();
        let predictions = rsd_pred
            .iter()
            .zip(phases)
            .map(|(&r, &p)| {
                let mut ph = vec![0.0; N_PHASES];
                ph[p] = 1.0;
                FramePrediction {
                    phase_probs: ph,
                    experience_probs: vec![1.0, 0.0],
                    rsd: r,
                }
            })
            .collect();
        PredictionTrack {
            video_id: "v".into(),
            surgeon_id: "s".into(),
            experience: ExperienceLevel::Senior,
            fps: 1.0,
            time_scale: 1.0,
            predictions,
            annotations,
        }
    }

    #[test]
    fn mae_examples() {
        let t = track(&[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0], &[0, 0, 0]);
        assert_eq!(mae(&t).unwrap(), 0.0);
        let t = track(&[3.0, 2.0, 1.0], &[4.0, 3.0, 2.0], &[0, 0, 0]);
        assert_eq!(mae(&t).unwrap(), 1.0);
        let t = track(&[3.0, 2.0, 1.0], &[3.5, 0.5, 2.0], &[0, 0, 0]);
        assert_eq!(mae(&t).unwrap(), 1.0);
        // negative predictions are clipped
        let t = track(&[3.0, 2.0, 1.0], &[3.0, 2.0, -5.0], &[0, 0, 0]);
        assert!((mae(&t).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn last_window_selection() {
        // 10 minutes at 2.5 fps, window 120 s -> the last 300 frames.
        let n = 1500;
        let rsd: Vec<f64> = (0..n).map(|i| (n - i) as f64 / 2.5).collect();
        let pred: Vec<f64> = rsd.iter().enumerate().map(|(i, r)| if i >= n - 300 { r + 0.2 } else { r + 1.0 }).collect();
        let t = track(&rsd, &pred, &vec![0; n]);
        assert_eq!(rsd.iter().filter(|&&r| r <= 120.0).count(), 300);
        assert!((mae_last_window(&t, 120.0).unwrap() - 0.2).abs() < 1e-9);
        let short = track(&[90.0, 60.0, 30.0], &[91.0, 60.0, 33.0], &[0, 0, 0]);
        assert_eq!(mae_last_window(&short, 300.0).unwrap(), mae(&short).unwrap());
    }

    #[test]
    fn phase_end() {
        let mut phases = vec![3; 41];
        phases.extend(vec![4; 9]);
        let rsd: Vec<f64> = (0..50).map(|i| 50.0 - i as f64).collect();
        let mut pred = rsd.clone();
        pred[40] += 2.5;
        pred[10] += 9.0;
        let t = track(&rsd, &pred, &phases);
        assert_eq!(mae_at_phase_end(&t, PhaseId::HYDRODISSECTION).unwrap(), Some(2.5));
        assert_eq!(mae_at_phase_end(&t, PhaseId::new(0).unwrap()).unwrap(), None);
    }

    #[test]
    fn f1_toy_confusion() {
        // Hyd: TP 8, FN 2 (predicted 0), FP 2 (class-0 frames predicted Hyd).
        let mut t = track(&[20.0; 20], &[20.0; 20], &[0; 20]);
        for i in 0..20 {
            let y = if i < 10 { 3 } else { 0 };
            t.annotations[i].phase = PhaseId::new(y).unwrap();
            let p = match i {
                0..=7 => 3,
                8..=9 => 0,
                10..=11 => 3,
                _ => 0,
            };
            let mut ph = vec![0.0; N_PHASES];
            ph[p] = 1.0;
            t.predictions[i].phase_probs = ph;
        }
        let m = video_phase_metrics(&t).unwrap();
        assert!((m.f1_hyd.unwrap() - 0.8).abs() < 1e-12);
        assert!((m.acc - 16.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn hyd_never_predicted() {
        let mut t = track(&[3.0, 2.0, 1.0], &[3.0, 2.0, 1.0], &[3, 3, 0]);
        for p in &mut t.predictions {
            p.phase_probs = vec![0.1; N_PHASES];
        }
        assert_eq!(video_phase_metrics(&t).unwrap().f1_hyd, Some(0.0));
    }

    #[test]
    fn experience_ties_go_to_senior() {
        let mut t = track(&[2.0, 1.0], &[2.0, 1.0], &[0, 0]);
        for p in &mut t.predictions {
            p.experience_probs = vec![0.5, 0.5];
        }
        assert_eq!(video_experience_accuracy(&t).unwrap(), 1.0);
        t.experience = ExperienceLevel::Assistant;
        assert_eq!(video_experience_accuracy(&t).unwrap(), 0.0);
    }

    #[test]
    fn ensemble_examples() {
        let a = FramePrediction {
            phase_probs: vec![0.1; 10],
            experience_probs: vec![1.0, 0.0],
            rsd: 4.0,
        };
        let b = FramePrediction {
            experience_probs: vec![0.0, 1.0],
            rsd: 6.0,
            ..a.clone()
        };
        let avg = ensemble_average(&[vec![a.clone()], vec![b]]).unwrap();
        assert_eq!(avg[0].experience_probs, vec![0.5, 0.5]);
        assert_eq!(avg[0].rsd, 5.0);
        let same = ensemble_average(&[vec![a.clone()], vec![a.clone()], vec![a.clone()]]).unwrap();
        assert_eq!(same[0].rsd, a.rsd);
        assert_eq!(same[0].experience_probs, a.experience_probs);
        assert!(ensemble_average(&[vec![a.clone()], vec![]]).unwrap_err().is_validation());
    }

    #[test]
    fn speed_with_manual_clock() {
        let clock = ManualClock::new();
        let c = clock.clone();
        let (s, samples) = measure_inference_speed(
            |i| {
                c.advance(Duration::from_millis(if i < 5 { 900 } else { 100 }));
                Ok(())
            },
            &clock,
            5,
            20,
        )
        .unwrap();
        assert_eq!(samples.len(), 20);
        assert!((s.mean_ms - 100.0).abs() < 1e-9);
        assert!((s.fps - 10.0).abs() < 1e-9);
        assert!(s.std_ms.abs() < 1e-9);
    }

    #[test]
    fn population_std() {
        let s = Stat::from_values(&[1.0, 0.5]).unwrap();
        assert_eq!(s.mean, 0.75);
        assert_eq!(s.std, 0.25);
    }
}
