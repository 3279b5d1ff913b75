#![allow(dead_code)]

use catanet_core::dataset::{generate_corpus, CorpusSpec, VideoSequence};
use catanet_core::model::{ElapsedMode, ModelConfig};
use catanet_core::training::TrainingSchedule;

/// Short videos (about 20 and 40 frames) at 16x16 pixels.
pub fn tiny_corpus(n_videos: usize, seed: u64) -> Vec<VideoSequence> {
    let spec = CorpusSpec {
        n_videos,
        frame_size: (16, 16),
        senior_total_mean: 8.0,
        assistant_total_mean: 16.0,
        ..Default::default()
    };
    generate_corpus(&spec, seed).unwrap()
}

pub fn tiny_config(mode: ElapsedMode) -> ModelConfig {
    ModelConfig {
        frame_size: (16, 16),
        encoder_channels: vec![4, 8],
        frame_descriptor_dim: 8,
        video_descriptor_dim: 8,
        t_max: 20.0,
        rsd_output_scale: 20.0,
        elapsed_mode: mode,
        ..ModelConfig::desk()
    }
}

pub fn tiny_schedule(seed: u64) -> TrainingSchedule {
    let mut s = TrainingSchedule::desk().with_seed(seed);
    let epochs = [2, 3, 1, 2];
    for (st, e) in s.stages.iter_mut().zip(epochs) {
        st.epochs = e;
    }
    s.frames_per_phase = 12;
    s.val_frames_per_phase = 4;
    s.batch_size_stage1 = 16;
    s.videos_per_batch = 2;
    s.tbptt_window = 8;
    s
}
