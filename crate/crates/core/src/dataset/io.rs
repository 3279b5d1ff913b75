//! On-disk layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<video_id>/annotations.csv
//! <root>/<video_id>/frames/000000.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperienceLevel, Frame, FrameAnnotation, PhaseId, VideoSequence};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub surgeon_id: String,
    pub experience: ExperienceLevel,
    pub fps: f64,
    pub frame_size: [usize; 2],
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub time_unit: String,
    pub time_scale: f64,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    frame_index: usize,
    elapsed_s: f64,
    phase_id: u8,
    rsd_s: f64,
    experience: ExperienceLevel,
    surgeon_id: String,
}

fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("frames").join(format!("{i:06}.png"))
}

pub fn save_dataset(videos: &[VideoSequence], root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let time_scale = videos.first().map_or(1.0, |v| v.time_scale);
    let mut entries = Vec::with_capacity(videos.len());

    for video in videos {
        video.validate()?;
        if video.time_scale != time_scale {
            return Err(Error::Dataset {
                video_id: video.video_id.clone(),
                message: "all videos in a dataset must share one time scale".into(),
            });
        }
        let dir = root.join(&video.video_id);
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for (i, frame) in video.frames.iter().enumerate() {
            let path = frame_path(&dir, i);
            frame
                .to_image()
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|source| Error::Image { path, source })?;
        }

        let csv_path = dir.join(ANNOTATIONS_FILE);
        let mut w = csv::Writer::from_path(&csv_path)
            .map_err(|e| Error::format(&csv_path, e.to_string()))?;
        for a in &video.annotations {
            w.serialize(CsvRow {
                frame_index: a.frame_index,
                elapsed_s: a.elapsed,
                phase_id: a.phase.into(),
                rsd_s: a.rsd,
                experience: a.experience,
                surgeon_id: video.surgeon_id.clone(),
            })
            .map_err(|e| Error::format(&csv_path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;

        let (h, w) = video.frame_size();
        entries.push(ManifestEntry {
            video_id: video.video_id.clone(),
            surgeon_id: video.surgeon_id.clone(),
            experience: video.experience(),
            fps: video.fps,
            frame_size: [h, w],
            n_frames: video.len(),
        });
    }

    let manifest = Manifest {
        time_unit: super::time_unit_label(time_scale),
        time_scale,
        videos: entries,
    };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Option<Manifest>> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::format(&path, e.to_string()))
}

/// Loads every video listed in the manifest. An empty directory yields an empty list.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<VideoSequence>> {
    let root = root.as_ref();
    let mut listing = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let Some(manifest) = read_manifest(root)? else {
        if listing.next().is_none() {
            return Ok(Vec::new());
        }
        return Err(Error::format(root.join(MANIFEST_FILE), "missing manifest"));
    };
    manifest
        .videos
        .iter()
        .map(|entry| load_video(root, entry, manifest.time_scale))
        .collect()
}

/// Loads a single video listed in the manifest of `root`.
pub fn load_video_by_id(root: &Path, video_id: &str) -> Result<VideoSequence> {
    let manifest = read_manifest(root)?.ok_or_else(|| Error::format(root.join(MANIFEST_FILE), "missing manifest"))?;
    let entry = manifest
        .videos
        .iter()
        .find(|e| e.video_id == video_id)
        .ok_or_else(|| Error::validation(format!("video `{video_id}` is not listed in {}", root.display())))?;
    load_video(root, entry, manifest.time_scale)
}

fn load_video(root: &Path, entry: &ManifestEntry, time_scale: f64) -> Result<VideoSequence> {
    let dir = root.join(&entry.video_id);
    let fail = |message: String| Error::Dataset {
        video_id: entry.video_id.clone(),
        message,
    };

    let csv_path = dir.join(ANNOTATIONS_FILE);
    if !csv_path.exists() {
        return Err(fail(format!("missing annotation file {}", csv_path.display())));
    }
    let mut reader =
        csv::Reader::from_path(&csv_path).map_err(|e| Error::format(&csv_path, e.to_string()))?;
    let mut annotations = Vec::new();
    let mut surgeon_id = entry.surgeon_id.clone();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::format(&csv_path, e.to_string()))?;
        annotations.push(FrameAnnotation {
            frame_index: row.frame_index,
            elapsed: row.elapsed_s,
            phase: PhaseId::new(row.phase_id as usize)?,
            rsd: row.rsd_s,
            experience: row.experience,
        });
        surgeon_id = row.surgeon_id;
    }

    let frames_dir = dir.join("frames");
    let mut pngs: Vec<PathBuf> = fs::read_dir(&frames_dir)
        .map_err(|e| Error::io(&frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    pngs.sort();
    if pngs.len() != annotations.len() {
        return Err(fail(format!(
            "{} frames on disk but {} annotation rows",
            pngs.len(),
            annotations.len()
        )));
    }
    if pngs.len() != entry.n_frames {
        return Err(fail(format!(
            "manifest lists {} frames, found {}",
            entry.n_frames,
            pngs.len()
        )));
    }

    let mut frames = Vec::with_capacity(pngs.len());
    for (i, path) in pngs.iter().enumerate() {
        if *path != frame_path(&dir, i) {
            return Err(fail(format!("unexpected frame file {}", path.display())));
        }
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        let rgb = match img {
            image::DynamicImage::ImageRgb8(rgb) => rgb,
            _ => return Err(fail(format!("{} is not 8-bit RGB", path.display()))),
        };
        frames.push(Frame::from_image(&rgb));
    }

    let video = VideoSequence {
        video_id: entry.video_id.clone(),
        surgeon_id,
        frames,
        annotations,
        fps: entry.fps,
        time_scale,
    };
    video.validate()?;
    Ok(video)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, CorpusSpec};

    fn tiny_corpus() -> Vec<VideoSequence> {
        let spec = CorpusSpec {
            n_videos: 2,
            frame_size: (8, 8),
            senior_total_mean: 4.0,
            assistant_total_mean: 8.0,
            ..Default::default()
        };
        generate_corpus(&spec, 4).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let videos = tiny_corpus();
        save_dataset(&videos, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, videos);
        assert_eq!(load_video_by_id(dir.path(), "video-001").unwrap(), videos[1]);
        assert!(load_video_by_id(dir.path(), "video-009").unwrap_err().is_validation());
    }

    #[test]
    fn empty_directory_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn short_csv_names_video() {
        let dir = tempfile::tempdir().unwrap();
        let videos = tiny_corpus();
        save_dataset(&videos, dir.path()).unwrap();
        let csv_path = dir.path().join("video-000").join(ANNOTATIONS_FILE);
        let text = fs::read_to_string(&csv_path).unwrap();
        let mut lines: Vec<_> = text.lines().collect();
        lines.pop();
        fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("video-000"), "{err}");
    }

    #[test]
    fn missing_annotation_file() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_corpus(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("video-001").join(ANNOTATIONS_FILE)).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("video-001") && err.to_string().contains("missing"));
    }
}
