//! Argument definitions and one handler per subcommand. Every handler
//! writes its results plus a run manifest into `--out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use catanet_core::baselines::{build_variant, VariantId};
use catanet_core::dataset::{
    generate_corpus, generate_synthetic_video, load_dataset, load_video_by_id, save_dataset, split_dataset,
    time_unit_label, DatasetSplit, ExperienceLevel, VideoSequence,
};
use catanet_core::evaluation::{write_report, SystemClock};
use catanet_core::model::load_checkpoint;
use catanet_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::ablate::run_ablation;
use crate::config::RunConfig;
use crate::manifest::{list_outputs, unix_now, InputHasher, RunManifest};
use crate::pipeline::{
    discover_model_dirs, evaluate, load_models, read_json, save_trained, train_variant, write_json, LoadedModels,
    SPLIT_FILE,
};
use crate::plot::{write_plot, PlotData};
use crate::stream::{bench_header, bench_model, run_stream, write_stream_csv, BENCH_MEASURE, BENCH_WARMUP};

#[derive(Debug, Parser)]
#[command(name = "catanet", version, about = "Remaining surgical duration, phase and experience prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// JSON file overriding the default run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Run directory for all outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train all folds of one variant.
    Train(TrainArgs),
    /// Evaluate fold checkpoints as an ensemble; writes reports and plots.
    Eval(EvalArgs),
    /// Run frame-by-frame inference over one video.
    InferStream(InferStreamArgs),
    /// Measure per-frame inference time.
    Bench(BenchArgs),
    /// Train and evaluate several variants over shared splits and seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub n_videos: Option<usize>,
    #[arg(long)]
    pub n_surgeons: Option<usize>,
    /// Mean senior surgery length, in time units.
    #[arg(long)]
    pub senior_mean: Option<f64>,
    #[arg(long)]
    pub assistant_mean: Option<f64>,
    /// Seconds per time unit (1 = seconds, 60 = minutes).
    #[arg(long)]
    pub time_scale: Option<f64>,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Square frame side in pixels.
    #[arg(long)]
    pub frame_size: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "catanet", value_parser = parse_variant)]
    pub variant: VariantId,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub n_test_per_surgeon: Option<usize>,
    /// First stage to run; stages above 1 continue from `--resume`.
    #[arg(long, default_value_t = 1)]
    pub stage: u8,
    /// Last stage to run.
    #[arg(long, default_value_t = 4)]
    pub until_stage: u8,
    /// Train run directory whose fold checkpoints completed stage `--stage - 1`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum EvalSplit {
    Test,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Train run directory or single fold checkpoint; repeatable.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferStreamArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Video directory inside a dataset root (`<root>/<video_id>`).
    #[arg(long)]
    pub video: PathBuf,
    /// Pace frames at the video fps and check the per-frame latency budget.
    #[arg(long)]
    pub realtime: bool,
    /// Do not echo rows to stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = BENCH_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = BENCH_MEASURE)]
    pub measure: usize,
    /// Video directory to cycle through; a synthetic video is used otherwise.
    #[arg(long)]
    pub video: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "catanet,iii,iv,naive", value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Vec<VariantId>,
    /// Seeds to sweep; defaults to `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub n_test_per_surgeon: Option<usize>,
}

fn parse_variant(s: &str) -> std::result::Result<VariantId, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// 2 for invalid inputs, 3 for filesystem and file-format problems.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

/// Creates `out`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::validation(format!(
                    "output directory {} is not empty; pass --force to replace it",
                    out.display()
                )));
            }
            fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

struct Run<'a> {
    command: &'static str,
    common: &'a Common,
    parameters: Value,
    hasher: InputHasher,
    started: f64,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, common: &'a Common, args: &impl Serialize, config: &RunConfig) -> Result<Self> {
        prepare_out(&common.out, common.force)?;
        let mut hasher = InputHasher::new();
        if let Some(c) = &common.config {
            hasher.add_file("config", c)?;
        }
        let mut parameters = serde_json::to_value(args).expect("arguments serialize");
        // Where the run writes and whether it overwrote do not change results.
        if let Some(c) = parameters.get_mut("common").and_then(Value::as_object_mut) {
            c.remove("out");
            c.remove("force");
        }
        Ok(Run {
            command,
            common,
            parameters: json!({"args": parameters, "config": config}),
            hasher,
            started: unix_now(),
        })
    }

    fn finish(self) -> Result<()> {
        let out = &self.common.out;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_path: self.common.config.clone(),
            seed: self.common.seed,
            input_hash: self.hasher.finish(&content_parameters(&self.parameters)),
            parameters: self.parameters,
            started_unix_s: self.started,
            finished_unix_s: unix_now(),
            outputs: list_outputs(out)?,
        };
        manifest.write(out)
    }
}

/// Parameters without input locations: inputs enter the hash by content,
/// so moving a dataset or checkpoint does not change it.
fn content_parameters(parameters: &Value) -> Value {
    let mut p = parameters.clone();
    if let Some(args) = p.get_mut("args").and_then(Value::as_object_mut) {
        for key in ["data", "checkpoints", "video", "resume"] {
            args.remove(key);
        }
        if let Some(c) = args.get_mut("common").and_then(Value::as_object_mut) {
            c.remove("config");
        }
    }
    p
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::InferStream(a) => infer_stream(&a),
        Command::Bench(a) => bench(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let c = &mut cfg.corpus;
    if let Some(v) = a.n_videos {
        c.n_videos = v;
    }
    if let Some(v) = a.n_surgeons {
        c.n_surgeons = v;
    }
    if let Some(v) = a.senior_mean {
        c.senior_total_mean = v;
    }
    if let Some(v) = a.assistant_mean {
        c.assistant_total_mean = v;
    }
    if let Some(v) = a.time_scale {
        c.time_scale = v;
    }
    if let Some(v) = a.fps {
        c.fps = v;
    }
    if let Some(v) = a.frame_size {
        c.frame_size = (v, v);
    }
    if let Some(v) = a.noise {
        c.noise_level = v;
    }
    if c.n_videos == 0 {
        return Err(Error::validation("--n-videos must be at least 1"));
    }
    let run = Run::start("gen-data", &a.common, a, &cfg)?;
    let videos = generate_corpus(&cfg.corpus, a.common.seed)?;
    save_dataset(&videos, &a.common.out)?;
    println!("{}", dataset_summary(&videos));
    run.finish()
}

pub fn dataset_summary(videos: &[VideoSequence]) -> String {
    let unit = videos.first().map_or("s".to_string(), |v| time_unit_label(v.time_scale));
    let mut lines = vec![format!("{} videos", videos.len())];
    for level in [ExperienceLevel::Senior, ExperienceLevel::Assistant] {
        let d: Vec<f64> = videos
            .iter()
            .filter(|v| v.experience() == level)
            .map(|v| v.total_duration())
            .collect();
        if d.is_empty() {
            lines.push(format!("{}: 0 videos", level.as_str()));
        } else {
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            lines.push(format!(
                "{}: {} videos, mean duration {mean:.3} {unit}",
                level.as_str(),
                d.len()
            ));
        }
    }
    lines.join("\n")
}

fn check_frame_size(cfg: &RunConfig, videos: &[VideoSequence]) -> Result<()> {
    if let Some(v) = videos.first() {
        if v.frame_size() != cfg.model.frame_size {
            return Err(Error::validation(format!(
                "dataset frames are {:?} but the model expects {:?}",
                v.frame_size(),
                cfg.model.frame_size
            )));
        }
    }
    Ok(())
}

fn load_nonempty(data: &Path) -> Result<Vec<VideoSequence>> {
    let videos = load_dataset(data)?;
    if videos.is_empty() {
        return Err(Error::validation(format!("dataset {} is empty", data.display())));
    }
    Ok(videos)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(k) = a.folds {
        cfg.split.k_folds = k;
    }
    if let Some(n) = a.n_test_per_surgeon {
        cfg.split.n_test_per_surgeon = n;
    }
    if !(1..=4).contains(&a.stage) || !(a.stage..=4).contains(&a.until_stage) {
        return Err(Error::validation("stages must satisfy 1 <= --stage <= --until-stage <= 4"));
    }
    if a.stage > 1 && a.resume.is_none() {
        return Err(Error::validation(format!(
            "--stage {} needs --resume with checkpoints that completed stage {}",
            a.stage,
            a.stage - 1
        )));
    }
    let mut run = Run::start("train", &a.common, a, &cfg)?;
    run.hasher.add_dir("data", &a.data)?;
    let videos = load_nonempty(&a.data)?;
    let spec = build_variant(a.variant, &cfg.model, &cfg.schedule.clone().with_seed(a.common.seed));
    if spec.needs_network {
        check_frame_size(&cfg, &videos)?;
    }

    let (split, resume) = match &a.resume {
        None => (
            split_dataset(&videos, cfg.split.n_test_per_surgeon, cfg.split.k_folds, a.common.seed)?,
            None,
        ),
        Some(dir) => {
            run.hasher.add_dir("resume", dir)?;
            let split: DatasetSplit = read_json(&dir.join(SPLIT_FILE))?;
            let mut nets = Vec::new();
            for d in discover_model_dirs(dir)? {
                let (net, meta) = load_checkpoint::<f32>(&d)?;
                if meta.variant != a.variant.as_str() {
                    return Err(Error::validation(format!(
                        "checkpoint {} is variant `{}`, not `{}`",
                        d.display(),
                        meta.variant,
                        a.variant
                    )));
                }
                if net.stage_reached + 1 != a.stage {
                    return Err(Error::validation(format!(
                        "--stage {} needs checkpoints that completed stage {}, {} completed stage {}",
                        a.stage,
                        a.stage - 1,
                        d.display(),
                        net.stage_reached
                    )));
                }
                nets.push(net);
            }
            (split, Some(nets))
        }
    };
    let trained = train_variant(&videos, &split, &spec, a.until_stage, resume)?;
    save_trained(&trained, &spec, &split, videos[0].time_scale, &a.common.out)?;
    write_json(
        &a.common.out.join("variant.json"),
        &json!({
            "variant": spec.id,
            "description": spec.description,
            "active_heads": spec.active_heads(),
            "model": spec.model,
            "schedule": spec.schedule,
        }),
    )?;
    println!("trained {} ({}), {} folds", spec.id, spec.description, split.folds.len());
    run.finish()
}

fn resolve_checkpoints(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for p in paths {
        dirs.extend(discover_model_dirs(p)?);
    }
    Ok(dirs)
}

/// The split saved by the training run that produced `checkpoint`.
fn find_split(checkpoint: &Path) -> Result<Option<DatasetSplit>> {
    for dir in [Some(checkpoint), checkpoint.parent()].into_iter().flatten() {
        let p = dir.join(SPLIT_FILE);
        if p.exists() {
            return read_json(&p).map(Some);
        }
    }
    Ok(None)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let mut run = Run::start("eval", &a.common, a, &cfg)?;
    run.hasher.add_dir("data", &a.data)?;
    let dirs = resolve_checkpoints(&a.checkpoints)?;
    for (i, d) in dirs.iter().enumerate() {
        run.hasher.add_dir(&format!("checkpoint-{i}"), d)?;
    }
    let models = load_models(&dirs)?;
    let videos = load_nonempty(&a.data)?;
    if videos[0].time_scale != models.time_scale() {
        return Err(Error::validation("dataset and checkpoints use different time units"));
    }
    let selected: Vec<&VideoSequence> = match a.split {
        EvalSplit::All => videos.iter().collect(),
        EvalSplit::Test => {
            let split = find_split(&a.checkpoints[0])?
                .ok_or_else(|| Error::validation("no split.json next to the checkpoints; use --split all"))?;
            let sel: Vec<&VideoSequence> = videos.iter().filter(|v| split.test_ids.contains(&v.video_id)).collect();
            if sel.len() != split.test_ids.len() {
                return Err(Error::validation("dataset is missing test videos of the split"));
            }
            sel
        }
    };
    let (report, tracks) = evaluate(&models.predictors(), &selected, &models.variant(), None)?;
    write_report(&report, &a.common.out)?;
    if !a.no_plots {
        let plots = a.common.out.join("plots");
        for t in &tracks {
            write_plot(&PlotData::from_track(t, &report.unit), &plots)?;
        }
    }
    let all = report.groups["all"].metrics().expect("all group is never empty");
    println!(
        "{}: {} videos, MAE {:.3} ± {:.3} {}, phase acc {:.3}, experience acc {:.3}",
        report.variant,
        all.n_videos,
        all.mae.mean,
        all.mae.std,
        report.unit,
        report.phase.acc.mean,
        report.experience_acc.mean
    );
    run.finish()
}

/// Splits `<root>/<video_id>` into its parts.
fn video_location(video: &Path) -> Result<(PathBuf, String)> {
    let id = video
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::validation(format!("{} is not a video directory", video.display())))?;
    let root = video.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((root, id))
}

fn network_models(models: &LoadedModels, video: &VideoSequence) -> Result<()> {
    let cfg = models
        .config()
        .ok_or_else(|| Error::validation("streaming needs network checkpoints"))?;
    if cfg.frame_size != video.frame_size() {
        return Err(Error::validation(format!(
            "checkpoint expects {:?} frames, video has {:?}",
            cfg.frame_size,
            video.frame_size()
        )));
    }
    if models.time_scale() != video.time_scale {
        return Err(Error::validation("video and checkpoints use different time units"));
    }
    Ok(())
}

pub fn infer_stream(a: &InferStreamArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let mut run = Run::start("infer-stream", &a.common, a, &cfg)?;
    let dirs = resolve_checkpoints(&a.checkpoints)?;
    for (i, d) in dirs.iter().enumerate() {
        run.hasher.add_dir(&format!("checkpoint-{i}"), d)?;
    }
    run.hasher.add_dir("video", &a.video)?;
    let models = load_models(&dirs)?;
    let (root, id) = video_location(&a.video)?;
    let video = load_video_by_id(&root, &id)?;
    network_models(&models, &video)?;
    let unit = time_unit_label(video.time_scale);

    let mut model = models.stream()?;
    let clock = SystemClock::new();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    if !a.quiet {
        writeln!(lock, "{}", crate::stream::stream_header(&unit)).map_err(|e| Error::io("<stdout>", e))?;
    }
    let mut sleep = |d: std::time::Duration| std::thread::sleep(d);
    let pace: Option<&mut dyn FnMut(std::time::Duration)> = if a.realtime { Some(&mut sleep) } else { None };
    let (rows, status) = run_stream(&mut model, &video, &clock, pace, |r| {
        if !a.quiet {
            writeln!(lock, "{}", r.to_line()).map_err(|e| Error::io("<stdout>", e))?;
        }
        Ok(())
    })?;
    drop(lock);
    let path = a.common.out.join("stream.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_stream_csv(&rows, &unit, std::io::BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
    if let Some(s) = &status {
        println!("{}", s.summary());
        write_json(&a.common.out.join("realtime.json"), s)?;
    }
    run.finish()
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = RunConfig::load(a.common.config.as_deref())?;
    let mut run = Run::start("bench", &a.common, a, &cfg)?;
    let dirs = resolve_checkpoints(&a.checkpoints)?;
    for (i, d) in dirs.iter().enumerate() {
        run.hasher.add_dir(&format!("checkpoint-{i}"), d)?;
    }
    let models = load_models(&dirs)?;
    let model_cfg = models
        .config()
        .ok_or_else(|| Error::validation("benchmarking needs network checkpoints"))?
        .clone();
    let video = match &a.video {
        Some(v) => {
            run.hasher.add_dir("video", v)?;
            let (root, id) = video_location(v)?;
            load_video_by_id(&root, &id)?
        }
        None => {
            let mut corpus = cfg.corpus.clone();
            corpus.frame_size = model_cfg.frame_size;
            corpus.time_scale = models.time_scale();
            generate_synthetic_video(&corpus.surgery_spec(ExperienceLevel::Senior), a.common.seed)?
        }
    };
    network_models(&models, &video)?;
    let mut model = models.stream()?;
    println!("{}", bench_header(a.warmup, a.measure, dirs.len(), model_cfg.frame_size));
    let (stats, samples) = bench_model(&mut model, &video, &SystemClock::new(), a.warmup, a.measure)?;
    println!(
        "mean {:.3} ± {:.3} ms per frame, {:.2} fps ({} samples)",
        stats.mean_ms,
        stats.std_ms,
        stats.fps,
        samples.len()
    );
    write_json(&a.common.out.join("bench.json"), &json!({"speed": stats, "samples_ms": samples}))?;
    run.finish()
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(k) = a.folds {
        cfg.split.k_folds = k;
    }
    if let Some(n) = a.n_test_per_surgeon {
        cfg.split.n_test_per_surgeon = n;
    }
    let seeds = if a.seeds.is_empty() { vec![a.common.seed] } else { a.seeds.clone() };
    let mut run = Run::start("ablate", &a.common, a, &cfg)?;
    run.hasher.add_dir("data", &a.data)?;
    let videos = load_nonempty(&a.data)?;
    if a.variants.iter().any(|v| *v != VariantId::NaiveMean) {
        check_frame_size(&cfg, &videos)?;
    }
    let result = run_ablation(&videos, &cfg, &a.variants, &seeds, Some(&a.common.out))?;
    write_json(&a.common.out.join("ablation.json"), &result.matrix)?;
    let path = a.common.out.join("ablation.csv");
    fs::write(&path, result.matrix.to_csv()).map_err(|e| Error::io(&path, e))?;
    print!("{}", result.matrix.to_table());
    run.finish()
}
