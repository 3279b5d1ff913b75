use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoSequence;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub folds: Vec<Fold>,
}

impl DatasetSplit {
    /// Checks disjointness and that the fold validation sets partition `train_ids`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for id in &self.train_ids {
            ensure!(seen.insert(id, 0).is_none(), "duplicate training id {id}");
        }
        for id in &self.test_ids {
            ensure!(!seen.contains_key(id), "id {id} in both train and test");
        }
        for (k, fold) in self.folds.iter().enumerate() {
            for id in &fold.val_ids {
                match seen.get_mut(id) {
                    Some(c) => *c += 1,
                    None => {
                        return Err(crate::Error::validation(format!(
                            "fold {k}: val id {id} is not a training id"
                        )))
                    }
                }
            }
            for id in &fold.train_ids {
                ensure!(!fold.val_ids.contains(id), "fold {k}: {id} in both train and val");
            }
        }
        if !self.folds.is_empty() {
            ensure!(
                seen.values().all(|&c| c == 1),
                "fold validation sets do not partition the training ids"
            );
        }
        Ok(())
    }
}

/// Holds out `n_test_per_surgeon` videos per surgeon and splits the remainder
/// into `k_folds` validation groups whose sizes differ by at most one.
pub fn split_dataset(
    videos: &[VideoSequence],
    n_test_per_surgeon: usize,
    k_folds: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    ensure!(k_folds >= 2, "k_folds must be >= 2, got {k_folds}");
    let mut by_surgeon: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for v in videos {
        by_surgeon.entry(&v.surgeon_id).or_default().push(&v.video_id);
    }
    ensure!(!by_surgeon.is_empty(), "cannot split an empty dataset");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_ids = Vec::new();
    let mut train_ids = Vec::new();
    for (surgeon, ids) in by_surgeon.iter_mut() {
        ensure!(
            ids.len() > n_test_per_surgeon,
            "surgeon {surgeon} has {} videos, need more than {n_test_per_surgeon}",
            ids.len()
        );
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        test_ids.extend(ids[..n_test_per_surgeon].iter().map(|s| s.to_string()));
        train_ids.extend(ids[n_test_per_surgeon..].iter().map(|s| s.to_string()));
    }
    ensure!(
        train_ids.len() >= k_folds,
        "{} training videos cannot fill {k_folds} folds",
        train_ids.len()
    );

    train_ids.shuffle(&mut rng);
    let folds = (0..k_folds)
        .map(|k| {
            let (val, train): (Vec<_>, Vec<_>) = train_ids
                .iter()
                .enumerate()
                .partition(|(i, _)| i % k_folds == k);
            Fold {
                train_ids: train.into_iter().map(|(_, id)| id.clone()).collect(),
                val_ids: val.into_iter().map(|(_, id)| id.clone()).collect(),
            }
        })
        .collect();
    test_ids.sort();
    train_ids.sort();

    let split = DatasetSplit {
        train_ids,
        test_ids,
        folds,
    };
    split.validate()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ExperienceLevel, Frame, FrameAnnotation, PhaseId};
    use proptest::prelude::*;

    fn stub(id: String, surgeon: String) -> VideoSequence {
        VideoSequence {
            video_id: id,
            surgeon_id: surgeon,
            frames: vec![Frame::from_raw(1, 1, vec![0; 3]).unwrap()],
            annotations: vec![FrameAnnotation {
                frame_index: 0,
                elapsed: 0.0,
                phase: PhaseId::new(0).unwrap(),
                rsd: 1.0,
                experience: ExperienceLevel::Senior,
            }],
            fps: 1.0,
            time_scale: 1.0,
        }
    }

    fn corpus(n: usize, surgeons: usize) -> Vec<VideoSequence> {
        (0..n).map(|i| stub(format!("v{i:03}"), format!("s{}", i % surgeons))).collect()
    }

    #[test]
    fn full_size_split() {
        let videos = corpus(101, 4);
        let s = split_dataset(&videos, 5, 6, 0).unwrap();
        assert_eq!(s.test_ids.len(), 20);
        assert_eq!(s.train_ids.len(), 81);
        for f in &s.folds {
            assert!(f.val_ids.len() == 13 || f.val_ids.len() == 14);
            assert_eq!(f.train_ids.len() + f.val_ids.len(), 81);
        }
        for surgeon in 0..4 {
            let n = s
                .test_ids
                .iter()
                .filter(|id| videos.iter().any(|v| &&v.video_id == id && v.surgeon_id == format!("s{surgeon}")))
                .count();
            assert_eq!(n, 5);
        }
    }

    #[test]
    fn small_split_and_determinism() {
        let videos = corpus(8, 2);
        let s = split_dataset(&videos, 1, 2, 3).unwrap();
        assert_eq!((s.test_ids.len(), s.train_ids.len()), (2, 6));
        assert!(s.folds.iter().all(|f| f.val_ids.len() == 3));
        assert_eq!(s, split_dataset(&videos, 1, 2, 3).unwrap());
    }

    #[test]
    fn insufficient_videos_rejected() {
        let videos = corpus(4, 2);
        assert!(split_dataset(&videos, 2, 2, 0).unwrap_err().is_validation());
        assert!(split_dataset(&videos, 1, 1, 0).unwrap_err().is_validation());
    }

    proptest! {
        #[test]
        fn folds_partition_train(n in 6usize..60, surgeons in 1usize..5, k in 2usize..6, seed in any::<u64>()) {
            let videos = corpus(n, surgeons);
            if let Ok(s) = split_dataset(&videos, 1, k, seed) {
                let mut union: Vec<_> = s.folds.iter().flat_map(|f| f.val_ids.clone()).collect();
                union.sort();
                prop_assert_eq!(&union, &s.train_ids);
                let sizes: Vec<_> = s.folds.iter().map(|f| f.val_ids.len()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                prop_assert!(s.test_ids.iter().all(|t| !s.train_ids.contains(t)));
            }
        }
    }
}
