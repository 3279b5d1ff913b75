#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use catanet_cli::config::RunConfig;
use catanet_core::dataset::CorpusSpec;
use catanet_core::model::ModelConfig;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_catanet"))
}

/// Runs the binary and returns its output; panics with stderr on an
/// unexpected exit status.
pub fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "catanet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn exit_code(args: &[&str]) -> i32 {
    bin().args(args).output().expect("binary runs").status.code().expect("exited")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// 12 short videos at 16x16 with a small network and a few training epochs.
pub fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus = CorpusSpec {
        n_videos: 12,
        frame_size: (16, 16),
        senior_total_mean: 8.0,
        assistant_total_mean: 16.0,
        ..Default::default()
    };
    cfg.model = ModelConfig {
        frame_size: (16, 16),
        encoder_channels: vec![4, 8],
        frame_descriptor_dim: 8,
        video_descriptor_dim: 8,
        t_max: 20.0,
        rsd_output_scale: 20.0,
        ..ModelConfig::desk()
    };
    let s = &mut cfg.schedule;
    for (st, e) in s.stages.iter_mut().zip([2, 3, 1, 2]) {
        st.epochs = e;
    }
    s.frames_per_phase = 12;
    s.val_frames_per_phase = 4;
    s.batch_size_stage1 = 16;
    s.videos_per_batch = 2;
    s.tbptt_window = 8;
    cfg.split.n_test_per_surgeon = 1;
    cfg.split.k_folds = 2;
    cfg
}

pub fn write_config(cfg: &RunConfig, dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A workspace with a tiny config and a generated dataset at `<root>/data`.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
    pub data: PathBuf,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(&tiny_run_config(), dir.path());
        let data = dir.path().join("data");
        run_ok(&["gen-data", "--config", s(&config), "--seed", &seed.to_string(), "--out", s(&data)]);
        Fixture { dir, config, data }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Trains `variant` into `<root>/<name>` and returns the run directory.
    pub fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let mut args = vec!["train", "--config", s(&self.config), "--data", s(&self.data), "--out", s(&out)];
        args.extend_from_slice(extra);
        run_ok(&args);
        out
    }
}
