//! Online inference over a frame sequence, optionally paced at the capture
//! rate, and the warm-up/measure speed protocol.

use std::io::Write;
use std::time::Duration;

use catanet_core::dataset::{ExperienceLevel, VideoSequence};
use catanet_core::evaluation::{measure_inference_speed, Clock, SpeedStats};
use catanet_core::training::argmax;
use catanet_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::pipeline::StreamModel;

pub const BENCH_WARMUP: usize = 100;
pub const BENCH_MEASURE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRow {
    pub frame_index: usize,
    pub elapsed: f64,
    /// Clipped at 0, as in every reported RSD.
    pub rsd_pred: f64,
    pub phase_pred: usize,
    pub p_senior: f64,
    pub latency_ms: f64,
}

pub fn stream_header(unit: &str) -> String {
    format!("frame_index,elapsed_{unit},rsd_pred_{unit},phase_pred,p_senior,latency_ms")
}

impl StreamRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.frame_index, self.elapsed, self.rsd_pred, self.phase_pred, self.p_senior, self.latency_ms
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealtimeStatus {
    pub fps: f64,
    pub budget_ms: f64,
    pub max_latency_ms: f64,
    pub mean_latency_ms: f64,
    pub frames_over_budget: usize,
    pub pass: bool,
}

impl RealtimeStatus {
    pub fn summary(&self) -> String {
        format!(
            "realtime budget {:.1} ms per frame at {} fps: {} (max latency {:.3} ms, mean {:.3} ms, {} frames over budget)",
            self.budget_ms,
            self.fps,
            if self.pass { "PASS" } else { "FAIL" },
            self.max_latency_ms,
            self.mean_latency_ms,
            self.frames_over_budget
        )
    }
}

/// Runs `model` over the frames of `video` in order. With `pace`, frame `i`
/// is not handed to the model before `i / fps` seconds have passed on
/// `clock`; `pace` is called with the remaining wait.
pub fn run_stream<C: Clock>(
    model: &mut dyn StreamModel,
    video: &VideoSequence,
    clock: &C,
    mut pace: Option<&mut dyn FnMut(Duration)>,
    mut sink: impl FnMut(&StreamRow) -> Result<()>,
) -> Result<(Vec<StreamRow>, Option<RealtimeStatus>)> {
    video.validate()?;
    model.reset();
    let senior = ExperienceLevel::Senior.index();
    let start = clock.now();
    let mut rows = Vec::with_capacity(video.len());
    for (i, (frame, ann)) in video.frames.iter().zip(&video.annotations).enumerate() {
        if let Some(wait) = pace.as_mut() {
            let due = start + Duration::from_secs_f64(i as f64 / video.fps);
            let now = clock.now();
            if due > now {
                wait(due - now);
            }
        }
        let t0 = clock.now();
        let p = model.step(frame, ann.elapsed)?;
        let latency_ms = (clock.now() - t0).as_secs_f64() * 1e3;
        let row = StreamRow {
            frame_index: i,
            elapsed: ann.elapsed,
            rsd_pred: p.rsd.max(0.0),
            phase_pred: argmax(ndarray_view(&p.phase_probs)),
            p_senior: p.experience_probs[senior],
            latency_ms,
        };
        sink(&row)?;
        rows.push(row);
    }
    let status = pace.map(|_| {
        let budget_ms = 1000.0 / video.fps;
        let max = rows.iter().map(|r| r.latency_ms).fold(0.0, f64::max);
        let mean = rows.iter().map(|r| r.latency_ms).sum::<f64>() / rows.len() as f64;
        let over = rows.iter().filter(|r| r.latency_ms > budget_ms).count();
        RealtimeStatus {
            fps: video.fps,
            budget_ms,
            max_latency_ms: max,
            mean_latency_ms: mean,
            frames_over_budget: over,
            pass: over == 0,
        }
    });
    Ok((rows, status))
}

fn ndarray_view(v: &[f64]) -> ndarray::ArrayView1<'_, f64> {
    ndarray::ArrayView1::from(v)
}

/// Writes rows as CSV lines with a unit-labelled header.
pub fn write_stream_csv(rows: &[StreamRow], unit: &str, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{}", stream_header(unit))?;
    for r in rows {
        writeln!(w, "{}", r.to_line())?;
    }
    Ok(())
}

/// `n_warmup` untimed steps, then `n_measure` timed ones, cycling through
/// the frames of `video` with a continuously increasing elapsed time.
pub fn bench_model<C: Clock>(
    model: &mut dyn StreamModel,
    video: &VideoSequence,
    clock: &C,
    n_warmup: usize,
    n_measure: usize,
) -> Result<(SpeedStats, Vec<f64>)> {
    if video.is_empty() {
        return Err(Error::validation("benchmark video has no frames"));
    }
    model.reset();
    let step_time = 1.0 / (video.fps * video.time_scale);
    measure_inference_speed(
        |i| model.step(&video.frames[i % video.len()], i as f64 * step_time).map(|_| ()),
        clock,
        n_warmup,
        n_measure,
    )
}

pub fn bench_header(n_warmup: usize, n_measure: usize, n_models: usize, frame: (usize, usize)) -> String {
    format!(
        "bench: warmup={n_warmup} measured={n_measure} models={n_models} frame={}x{}",
        frame.0, frame.1
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use catanet_core::dataset::{generate_corpus, CorpusSpec, Frame};
    use catanet_core::evaluation::ManualClock;
    use catanet_core::model::FramePrediction;

    /// Takes a fixed time per step on a manual clock and echoes elapsed time.
    struct Fixed {
        clock: ManualClock,
        per_step: Duration,
        calls: usize,
    }

    impl StreamModel for Fixed {
        fn reset(&mut self) {}
        fn step(&mut self, _: &Frame, elapsed: f64) -> Result<FramePrediction> {
            self.clock.advance(self.per_step);
            self.calls += 1;
            Ok(FramePrediction {
                phase_probs: vec![0.1; 10],
                experience_probs: vec![0.7, 0.3],
                rsd: -elapsed,
            })
        }
    }

    fn video() -> VideoSequence {
        let spec = CorpusSpec {
            n_videos: 1,
            frame_size: (8, 8),
            senior_total_mean: 4.0,
            ..Default::default()
        };
        generate_corpus(&spec, 0).unwrap().remove(0)
    }

    #[test]
    fn paced_stream_meets_budget() {
        let clock = ManualClock::new();
        let mut m = Fixed {
            clock: clock.clone(),
            per_step: Duration::from_millis(100),
            calls: 0,
        };
        let v = video();
        let c2 = clock.clone();
        let mut wait = |d: Duration| c2.advance(d);
        let (rows, status) = run_stream(&mut m, &v, &clock, Some(&mut wait), |_| Ok(())).unwrap();
        let status = status.unwrap();
        assert_eq!(rows.len(), v.len());
        assert!(status.pass);
        assert_eq!(status.budget_ms, 400.0);
        assert!((status.max_latency_ms - 100.0).abs() < 1e-6);
        // Paced: the last frame starts at (n-1)/fps seconds.
        let expected = Duration::from_secs_f64((v.len() - 1) as f64 / v.fps) + Duration::from_millis(100);
        assert!((clock.now().as_secs_f64() - expected.as_secs_f64()).abs() < 1e-6);
        assert!(rows.iter().all(|r| r.rsd_pred == 0.0 && r.phase_pred == 0));
    }

    #[test]
    fn slow_model_fails_budget() {
        let clock = ManualClock::new();
        let mut m = Fixed {
            clock: clock.clone(),
            per_step: Duration::from_millis(450),
            calls: 0,
        };
        let c2 = clock.clone();
        let mut wait = |d: Duration| c2.advance(d);
        let (_, status) = run_stream(&mut m, &video(), &clock, Some(&mut wait), |_| Ok(())).unwrap();
        assert!(!status.unwrap().pass);
    }

    #[test]
    fn bench_counts_steps() {
        let clock = ManualClock::new();
        let mut m = Fixed {
            clock: clock.clone(),
            per_step: Duration::from_millis(100),
            calls: 0,
        };
        let (s, samples) = bench_model(&mut m, &video(), &clock, 5, 10).unwrap();
        assert_eq!(m.calls, 15);
        assert_eq!(samples.len(), 10);
        assert!((s.fps - 10.0).abs() < 1e-9);
        assert!(bench_header(BENCH_WARMUP, BENCH_MEASURE, 1, (64, 64)).contains("warmup=100 measured=1000"));
    }
}
