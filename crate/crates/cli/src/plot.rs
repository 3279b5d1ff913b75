//! Per-video plot data and the three-panel figure drawn from it: RSD
//! ground truth vs prediction, phase bars, and the senior probability.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use catanet_core::dataset::{ExperienceLevel, PhaseId, N_PHASES};
use catanet_core::evaluation::PredictionTrack;
use catanet_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub t: f64,
    pub rsd_gt: f64,
    pub rsd_pred: f64,
    pub phase_gt: usize,
    pub phase_pred: usize,
    pub p_senior: f64,
}

/// Everything the figure needs; the CSV form is self-contained.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub video_id: String,
    pub unit: String,
    pub rows: Vec<PlotRow>,
}

impl PlotData {
    pub fn from_track(track: &PredictionTrack, unit: &str) -> Self {
        let senior = ExperienceLevel::Senior.index();
        let rows = (0..track.len())
            .map(|i| PlotRow {
                t: track.annotations[i].elapsed,
                rsd_gt: track.annotations[i].rsd,
                rsd_pred: track.predictions[i].rsd.max(0.0),
                phase_gt: track.annotations[i].phase.index(),
                phase_pred: track.phase_pred(i),
                p_senior: track.predictions[i].experience_probs[senior],
            })
            .collect();
        PlotData {
            video_id: track.video_id.clone(),
            unit: unit.to_string(),
            rows,
        }
    }

    fn header(unit: &str) -> [String; 6] {
        [
            format!("t_{unit}"),
            format!("rsd_gt_{unit}"),
            format!("rsd_pred_{unit}"),
            "phase_gt".into(),
            "phase_pred".into(),
            "p_senior".into(),
        ]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::format(path, e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(Self::header(&self.unit)).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.rsd_gt.to_string(),
                r.rsd_pred.to_string(),
                r.phase_gt.to_string(),
                r.phase_pred.to_string(),
                r.p_senior.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a plot CSV; the video id is taken from the file stem and the
    /// unit from the first column's suffix.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let err = |e: csv::Error| Error::format(path, e.to_string());
        let mut r = csv::Reader::from_path(path).map_err(err)?;
        let headers = r.headers().map_err(err)?.clone();
        let unit = headers
            .get(0)
            .and_then(|h| h.strip_prefix("t_"))
            .ok_or_else(|| Error::format(path, "first column must be t_<unit>"))?
            .to_string();
        if headers.iter().collect::<Vec<_>>() != Self::header(&unit).iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::format(path, "unexpected plot columns"));
        }
        let bad = |what: &str| Error::format(path, format!("bad {what} value"));
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&headers[i]));
            let u = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(&headers[i]));
            rows.push(PlotRow {
                t: f(0)?,
                rsd_gt: f(1)?,
                rsd_pred: f(2)?,
                phase_gt: u(3)?,
                phase_pred: u(4)?,
                p_senior: f(5)?,
            });
        }
        let video_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(PlotData { video_id, unit, rows })
    }
}

const WIDTH: f64 = 720.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const PANEL_GAP: f64 = 40.0;

fn phase_color(k: usize) -> String {
    // Evenly spaced hues, matching the order of the phase indices.
    let h = k as f64 / N_PHASES as f64 * 360.0;
    format!("hsl({h:.0},60%,55%)")
}

fn polyline(points: &[(f64, f64)], color: &str, dash: bool) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dash { r#" stroke-dasharray="6 3""# } else { "" };
    format!(
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
        pts.join(" ")
    )
}

/// Renders the three stacked panels as an SVG document.
pub fn render_svg(data: &PlotData) -> String {
    let plot_w = WIDTH - LEFT - RIGHT;
    let (h_rsd, h_phase, h_exp) = (200.0, 60.0, 100.0);
    let top_rsd = 30.0;
    let top_phase = top_rsd + h_rsd + PANEL_GAP;
    let top_exp = top_phase + h_phase + PANEL_GAP;
    let height = top_exp + h_exp + 40.0;

    let rows = &data.rows;
    let t_max = rows.iter().map(|r| r.t).fold(0.0, f64::max).max(1e-9);
    let y_max = rows
        .iter()
        .map(|r| r.rsd_gt.max(r.rsd_pred))
        .fold(0.0, f64::max)
        .max(1e-9);
    let x = |t: f64| LEFT + t / t_max * plot_w;
    let u = &data.unit;

    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(s, r#"<text x="{LEFT}" y="18" font-size="13">{}</text>"#, data.video_id);

    // Panel 1: RSD.
    let y = |v: f64| top_rsd + h_rsd - v / y_max * h_rsd;
    let _ = write!(
        s,
        r#"<rect x="{LEFT}" y="{top_rsd}" width="{plot_w}" height="{h_rsd}" fill="none" stroke="black"/>"#
    );
    let gt: Vec<(f64, f64)> = rows.iter().map(|r| (x(r.t), y(r.rsd_gt))).collect();
    let pred: Vec<(f64, f64)> = rows.iter().map(|r| (x(r.t), y(r.rsd_pred))).collect();
    s.push_str(&polyline(&gt, "black", false));
    s.push_str(&polyline(&pred, "#d62728", true));
    let _ = write!(
        s,
        r#"<text x="10" y="{:.1}" transform="rotate(-90 10 {:.1})">RSD ({u})</text>"#,
        top_rsd + h_rsd / 2.0,
        top_rsd + h_rsd / 2.0
    );
    let _ = write!(s, r#"<text x="{:.1}" y="{:.1}">{y_max:.1}</text>"#, LEFT - 40.0, top_rsd + 10.0);
    let _ = write!(
        s,
        r#"<text x="{:.1}" y="{:.1}">ground truth (solid), prediction (dashed)</text>"#,
        LEFT + plot_w - 240.0,
        top_rsd + 14.0
    );

    // Panel 2: phase bars, ground truth above prediction.
    let band = h_phase / 2.0;
    for (row_i, label) in [(0usize, "gt"), (1, "pred")] {
        let y0 = top_phase + row_i as f64 * band;
        let _ = write!(s, r#"<text x="{:.1}" y="{:.1}">{label}</text>"#, LEFT - 35.0, y0 + band * 0.7);
        for (i, r) in rows.iter().enumerate() {
            let x0 = x(r.t);
            let x1 = rows.get(i + 1).map_or(LEFT + plot_w, |n| x(n.t));
            let k = if row_i == 0 { r.phase_gt } else { r.phase_pred };
            let _ = write!(
                s,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{band:.2}" fill="{}"/>"#,
                (x1 - x0).max(0.5),
                phase_color(k)
            );
        }
    }
    for k in 0..N_PHASES {
        let lx = LEFT + k as f64 * plot_w / N_PHASES as f64;
        let ly = top_phase + h_phase + 14.0;
        let _ = write!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="8" height="8" fill="{}"/><text x="{:.1}" y="{ly:.1}" font-size="8">{}</text>"#,
            ly - 8.0,
            phase_color(k),
            lx + 10.0,
            PhaseId::new(k).map(|p| p.name()).unwrap_or("")
        );
    }

    // Panel 3: probability of the senior class.
    let ye = |p: f64| top_exp + h_exp - p * h_exp;
    let _ = write!(
        s,
        r#"<rect x="{LEFT}" y="{top_exp}" width="{plot_w}" height="{h_exp}" fill="none" stroke="black"/>"#
    );
    let _ = write!(
        s,
        r#"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="2 2"/>"#,
        LEFT + plot_w,
        ye(0.5),
        ye(0.5)
    );
    let pe: Vec<(f64, f64)> = rows.iter().map(|r| (x(r.t), ye(r.p_senior))).collect();
    s.push_str(&polyline(&pe, "#1f77b4", false));
    let _ = write!(s, r#"<text x="{:.1}" y="{:.1}">p(senior)</text>"#, LEFT - 55.0, top_exp + h_exp / 2.0);
    let _ = write!(
        s,
        r#"<text x="{:.1}" y="{:.1}">elapsed time ({u}), 0 to {t_max:.1}</text>"#,
        LEFT + plot_w / 2.0 - 60.0,
        top_exp + h_exp + 20.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `<dir>/<video_id>.csv` and the figure rendered from that CSV.
pub fn write_plot(data: &PlotData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", data.video_id));
    data.write_csv(&csv_path)?;
    let reread = PlotData::read_csv(&csv_path)?;
    let svg_path = dir.join(format!("{}.svg", data.video_id));
    fs::write(&svg_path, render_svg(&reread)).map_err(|e| Error::io(&svg_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PlotData {
        PlotData {
            video_id: "video-007".into(),
            unit: "s".into(),
            rows: (0..5)
                .map(|i| PlotRow {
                    t: i as f64 * 0.4,
                    rsd_gt: 2.0 - i as f64 * 0.4,
                    rsd_pred: 1.9 - i as f64 * 0.35,
                    phase_gt: i / 2,
                    phase_pred: i / 2,
                    p_senior: 0.1 * i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        let p = dir.path().join("video-007.csv");
        d.write_csv(&p).unwrap();
        assert_eq!(PlotData::read_csv(&p).unwrap(), d);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t_s,rsd_gt_s,rsd_pred_s,phase_gt,phase_pred,p_senior"));
    }

    #[test]
    fn figure_is_reproducible_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        write_plot(&d, dir.path()).unwrap();
        let svg = fs::read_to_string(dir.path().join("video-007.svg")).unwrap();
        let again = render_svg(&PlotData::read_csv(&dir.path().join("video-007.csv")).unwrap());
        assert_eq!(svg, again);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("RSD (s)"));
    }

    #[test]
    fn wrong_columns_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t_s,a\n1,2\n").unwrap();
        assert!(PlotData::read_csv(&p).is_err());
    }
}
