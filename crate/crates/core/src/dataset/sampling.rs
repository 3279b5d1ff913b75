use std::borrow::Borrow;
use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Frame, FrameAnnotation, PhaseId, VideoSequence};
use crate::error::{ensure, Result};

/// One frame drawn from a corpus, with its position for bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct FrameSample<'a> {
    pub video: usize,
    pub frame: usize,
    pub image: &'a Frame,
    pub annotation: &'a FrameAnnotation,
}

/// Draws exactly `n_per_phase` frames for every phase present in `videos`.
///
/// Phases with at least `n_per_phase` frames are sampled without replacement,
/// smaller phases with replacement. The result is shuffled.
pub fn stratified_sample<'a, V: Borrow<VideoSequence>>(
    videos: &'a [V],
    n_per_phase: usize,
    seed: u64,
) -> Result<Vec<FrameSample<'a>>> {
    ensure!(n_per_phase >= 1, "n_per_phase must be >= 1");
    let mut by_phase: BTreeMap<PhaseId, Vec<(usize, usize)>> = BTreeMap::new();
    for (vi, video) in videos.iter().enumerate() {
        for (fi, a) in video.borrow().annotations.iter().enumerate() {
            by_phase.entry(a.phase).or_default().push((vi, fi));
        }
    }
    ensure!(!by_phase.is_empty(), "cannot sample from an empty corpus");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(by_phase.len() * n_per_phase);
    for pool in by_phase.values() {
        if pool.len() >= n_per_phase {
            picked.extend(index::sample(&mut rng, pool.len(), n_per_phase).iter().map(|i| pool[i]));
        } else {
            picked.extend((0..n_per_phase).map(|_| pool[rng.random_range(0..pool.len())]));
        }
    }
    picked.shuffle(&mut rng);

    Ok(picked
        .into_iter()
        .map(|(vi, fi)| FrameSample {
            video: vi,
            frame: fi,
            image: &videos[vi].borrow().frames[fi],
            annotation: &videos[vi].borrow().annotations[fi],
        })
        .collect())
}
