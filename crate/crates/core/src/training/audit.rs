use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dataset::FrameAnnotation;

/// Counts every label read made by the training loop, and records which
/// videos contributed to gradient updates.
#[derive(Debug, Default)]
pub struct LabelAudit {
    phase: AtomicU64,
    experience: AtomicU64,
    rsd: AtomicU64,
    progress: AtomicU64,
    trained_on: Mutex<BTreeSet<String>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub phase: u64,
    pub experience: u64,
    pub rsd: u64,
    pub progress: u64,
}

impl LabelAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self, a: &FrameAnnotation) -> usize {
        self.phase.fetch_add(1, Ordering::Relaxed);
        a.phase.index()
    }

    pub fn experience(&self, a: &FrameAnnotation) -> usize {
        self.experience.fetch_add(1, Ordering::Relaxed);
        a.experience.index()
    }

    pub fn rsd(&self, a: &FrameAnnotation) -> f64 {
        self.rsd.fetch_add(1, Ordering::Relaxed);
        a.rsd
    }

    /// Progress `t / T`; reads the duration label.
    pub fn progress(&self, a: &FrameAnnotation) -> f64 {
        self.progress.fetch_add(1, Ordering::Relaxed);
        let total = a.total_duration();
        if total > 0.0 {
            a.elapsed / total
        } else {
            0.0
        }
    }

    pub fn record_training_video(&self, video_id: &str) {
        let mut set = self.trained_on.lock().expect("audit lock poisoned");
        if !set.contains(video_id) {
            set.insert(video_id.to_string());
        }
    }

    pub fn trained_videos(&self) -> BTreeSet<String> {
        self.trained_on.lock().expect("audit lock poisoned").clone()
    }

    pub fn counts(&self) -> AuditCounts {
        AuditCounts {
            phase: self.phase.load(Ordering::Relaxed),
            experience: self.experience.load(Ordering::Relaxed),
            rsd: self.rsd.load(Ordering::Relaxed),
            progress: self.progress.load(Ordering::Relaxed),
        }
    }
}
