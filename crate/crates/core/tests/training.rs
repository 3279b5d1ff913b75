mod common;

use std::collections::BTreeSet;

use catanet_core::baselines::{build_variant, VariantId};
use catanet_core::dataset::{split_dataset, Frame, PhaseId, VideoSequence};
use catanet_core::model::{CataNet, ElapsedMode, ModelConfig, Params};
use catanet_core::training::compute::{rnn_full, DescriptorSource, NetGrads};
use catanet_core::training::{
    gradient_check, run_full_training, GradCheckReport, train_stage, LabelAudit, LossKind, LossTerms, StageData,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{tiny_config, tiny_corpus, tiny_schedule};

fn check_config() -> ModelConfig {
    ModelConfig {
        frame_size: (16, 16),
        encoder_channels: vec![3, 4],
        frame_descriptor_dim: 4,
        video_descriptor_dim: 4,
        recurrent_layers: 1,
        ..tiny_config(ElapsedMode::InputChannel)
    }
}

/// Six annotated frames with i.i.d. noise pixels: flat image regions would put
/// many ReLU pre-activations exactly on their kink.
fn short_video() -> VideoSequence {
    let mut v = tiny_corpus(2, 3).remove(0);
    v.frames.truncate(6);
    v.annotations.truncate(6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for f in &mut v.frames {
        let data = (0..16 * 16 * 3).map(|_| rng.random()).collect();
        *f = Frame::from_raw(16, 16, data).unwrap();
    }
    v
}

fn assert_check(r: &GradCheckReport) {
    assert!(r.n_params <= 2000, "{} params", r.n_params);
    assert!(r.n_kinked * 4 < r.n_params, "{} of {} parameters straddle a kink", r.n_kinked, r.n_params);
    assert!(r.max_rel_error < 1e-4, "max rel error {} at {}", r.max_rel_error, r.worst_index);
}

fn flat<F: Copy>(p: Vec<&[F]>) -> Vec<F> {
    p.into_iter().flat_map(|s| s.iter().copied()).collect()
}

#[test]
fn frame_loss_gradients_match_finite_differences() {
    let net = CataNet::<f64>::new(check_config(), 11).unwrap();
    let v = short_video();
    for terms in [LossTerms::CLASSIFICATION, LossTerms { progress: true, ..LossTerms::FULL }] {
        assert_check(&gradient_check(&net, &v, LossKind::CnnLoss, &terms, 1.0).unwrap());
    }
}

#[test]
fn sequence_loss_gradients_match_finite_differences() {
    let v = short_video();
    for mode in [ElapsedMode::InputChannel, ElapsedMode::AfterRnn, ElapsedMode::None] {
        let cfg = ModelConfig {
            elapsed_mode: mode,
            ..check_config()
        };
        let net = CataNet::<f64>::new(cfg, 5).unwrap();
        assert_check(&gradient_check(&net, &v, LossKind::RnnLoss, &LossTerms::FULL, 1.0).unwrap());
    }
}

#[test]
fn oversized_network_is_rejected_by_gradient_check() {
    let cfg = ModelConfig {
        encoder_channels: vec![8, 16],
        frame_descriptor_dim: 16,
        video_descriptor_dim: 16,
        ..tiny_config(ElapsedMode::InputChannel)
    };
    let net = CataNet::<f64>::new(cfg, 0).unwrap();
    let err = gradient_check(&net, &short_video(), LossKind::RnnLoss, &LossTerms::FULL, 1.0).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn alpha_scales_only_the_rsd_gradient() {
    let net = CataNet::<f64>::new(check_config(), 2).unwrap();
    let v = short_video();
    let grads_for = |terms: LossTerms, alpha: f64| {
        let mut g = NetGrads::for_net(&net, true, true, true, false);
        let audit = LabelAudit::new();
        rnn_full(&net, &[&v], &DescriptorSource::Encoder, &terms, alpha, &audit, Some(&mut g)).unwrap();
        g
    };
    let g0 = grads_for(LossTerms::FULL, 0.0);
    let g1 = grads_for(LossTerms::FULL, 1.0);
    let l1_only = grads_for(
        LossTerms {
            phase: false,
            experience: false,
            ..LossTerms::FULL
        },
        1.0,
    );
    let rsd_head = g0.heads.as_ref().unwrap();
    assert!(rsd_head.rsd.w.iter().chain(rsd_head.rsd.b.iter()).all(|&x| x == 0.0));
    let (f0, f1, fl) = (g0.flatten(), g1.flatten(), l1_only.flatten());
    assert!(fl.iter().any(|&x| x != 0.0));
    for i in 0..f0.len() {
        assert!((f1[i] - f0[i] - fl[i]).abs() < 1e-10, "index {i}");
    }
}

fn stage_data<'a>(train: &'a [VideoSequence], val: &'a [VideoSequence], audit: &'a LabelAudit) -> StageData<'a> {
    StageData {
        train: train.iter().collect(),
        val: val.iter().collect(),
        audit,
        fold: 0,
    }
}

#[test]
fn stages_must_run_in_order() {
    let videos = tiny_corpus(4, 1);
    let audit = LabelAudit::new();
    let data = stage_data(&videos[..3], &videos[3..], &audit);
    let sched = tiny_schedule(0);
    let mut net = CataNet::<f32>::new(tiny_config(ElapsedMode::InputChannel), 0).unwrap();
    for id in [2u8, 3, 4] {
        let err = train_stage(&mut net, &data, sched.stage(id).unwrap(), &sched).unwrap_err();
        assert!(err.is_validation(), "stage {id}");
    }
    train_stage(&mut net, &data, sched.stage(1).unwrap(), &sched).unwrap();
    assert!(train_stage(&mut net, &data, sched.stage(1).unwrap(), &sched).is_err());
    assert!(train_stage(&mut net, &data, sched.stage(3).unwrap(), &sched).is_err());
    assert_eq!(net.stage_reached, 1);
}

#[test]
fn frozen_components_are_bitwise_unchanged() {
    let videos = tiny_corpus(4, 2);
    let audit = LabelAudit::new();
    let data = stage_data(&videos[..3], &videos[3..], &audit);
    let sched = tiny_schedule(4);
    let mut net = CataNet::<f32>::new(tiny_config(ElapsedMode::InputChannel), 4).unwrap();

    let temporal0 = flat(net.temporal.params());
    let heads0 = flat(net.heads.params());
    train_stage(&mut net, &data, sched.stage(1).unwrap(), &sched).unwrap();
    assert_eq!(flat(net.temporal.params()), temporal0, "stage 1 froze the recurrent net");
    assert_eq!(flat(net.heads.params()), heads0);
    assert!(net.aux.is_some());

    let enc1 = flat(net.encoder.params());
    train_stage(&mut net, &data, sched.stage(2).unwrap(), &sched).unwrap();
    assert!(net.aux.is_none());
    assert_eq!(flat(net.encoder.params()), enc1, "stage 2 froze the encoder");
    assert_ne!(flat(net.temporal.params()), temporal0);

    train_stage(&mut net, &data, sched.stage(3).unwrap(), &sched).unwrap();
    assert_eq!(net.stage_reached, 3);
    let enc3 = flat(net.encoder.params());
    train_stage(&mut net, &data, sched.stage(4).unwrap(), &sched).unwrap();
    assert_eq!(flat(net.encoder.params()), enc3, "stage 4 froze the encoder");
}

/// Keeps only the frames of phases 0 and 4, giving a two-class problem.
fn two_phase(videos: &[VideoSequence]) -> Vec<VideoSequence> {
    let keep = [PhaseId::new(0).unwrap(), PhaseId::new(4).unwrap()];
    videos
        .iter()
        .map(|v| {
            let idx: Vec<usize> = (0..v.len()).filter(|&i| keep.contains(&v.annotations[i].phase)).collect();
            VideoSequence {
                frames: idx.iter().map(|&i| v.frames[i].clone()).collect(),
                annotations: idx.iter().map(|&i| v.annotations[i].clone()).collect(),
                ..v.clone()
            }
        })
        .collect()
}

#[test]
fn frame_stage_learns_two_phase_toy() {
    let videos = two_phase(&tiny_corpus(12, 6));
    let audit = LabelAudit::new();
    let data = stage_data(&videos[..9], &videos[9..], &audit);
    let mut sched = tiny_schedule(1);
    sched.stages[0].epochs = 30;
    sched.stages[0].learning_rate = 3e-3;
    sched.stages[0].early_stopping.patience = 100;
    sched.frames_per_phase = 40;
    sched.val_frames_per_phase = 20;
    let mut net = CataNet::<f32>::new(tiny_config(ElapsedMode::InputChannel), 1).unwrap();
    let log = train_stage(&mut net, &data, sched.stage(1).unwrap(), &sched).unwrap();
    let val: Vec<_> = log.rows.iter().filter(|r| r.split == "val").collect();
    assert!(val.len() >= 2);
    let best = log.best_val_loss.unwrap();
    assert!(best < val[0].loss, "validation loss {} never improved on {}", best, val[0].loss);
    let best_row = &val[log.best_eval.unwrap() - 1];
    assert!(best_row.phase_acc.unwrap() > 0.9, "phase accuracy {:?}", best_row.phase_acc);
}

#[test]
fn full_training_is_deterministic_and_respects_folds() {
    let videos = tiny_corpus(12, 9);
    let split = split_dataset(&videos, 1, 2, 9).unwrap();
    let sched = tiny_schedule(9);
    let cfg = tiny_config(ElapsedMode::InputChannel);
    let a = run_full_training(&videos, &split, &cfg, &sched).unwrap();
    let b = run_full_training(&videos, &split, &cfg, &sched).unwrap();
    assert_eq!(a.len(), 2);
    let test: BTreeSet<_> = split.test_ids.iter().cloned().collect();
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(flat(ra.net.encoder.params()), flat(rb.net.encoder.params()));
        assert_eq!(flat(ra.net.heads.params()), flat(rb.net.heads.params()));
        assert_eq!(ra.audit, rb.audit);
        assert_eq!(ra.net.stage_reached, 4);
        let val: BTreeSet<_> = ra.val_ids.iter().cloned().collect();
        assert!(ra.trained_videos.is_disjoint(&val), "fold {} trained on validation videos", ra.fold);
        assert!(ra.trained_videos.is_disjoint(&test));
        assert!(!ra.trained_videos.is_empty());
    }
    assert_ne!(a[0].val_ids, a[1].val_ids);
    assert_ne!(flat(a[0].net.encoder.params()), flat(a[1].net.encoder.params()));
}

#[test]
fn baseline_label_access_is_restricted() {
    let videos = tiny_corpus(8, 4);
    let split = split_dataset(&videos, 1, 2, 4).unwrap();
    let sched = tiny_schedule(4);
    let cfg = tiny_config(ElapsedMode::InputChannel);

    let rsdnet = build_variant(VariantId::Rsdnet, &cfg, &sched);
    for run in run_full_training(&videos, &split, &rsdnet.model, &rsdnet.schedule).unwrap() {
        assert_eq!(run.audit.phase, 0);
        assert_eq!(run.audit.experience, 0);
        assert!(run.audit.progress > 0 && run.audit.rsd > 0);
    }
    let tl = build_variant(VariantId::Timelstm, &cfg, &sched);
    for run in run_full_training(&videos, &split, &tl.model, &tl.schedule).unwrap() {
        assert_eq!(run.audit.experience, 0);
        assert_eq!(run.audit.progress, 0);
        assert!(run.audit.phase > 0 && run.audit.rsd > 0);
    }
    let cat = build_variant(VariantId::Catanet, &cfg, &sched);
    for run in run_full_training(&videos, &split, &cat.model, &cat.schedule).unwrap() {
        assert_eq!(run.audit.progress, 0);
        assert!(run.audit.phase > 0 && run.audit.experience > 0 && run.audit.rsd > 0);
    }
}
