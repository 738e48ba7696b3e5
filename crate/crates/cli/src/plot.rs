//! SVG rendering: per-scene trajectory plots and the retention curve.
//!
//! A scene plot contains exactly K+1 `<polyline>` elements — the bold olive
//! ground truth plus the K hypotheses — with a legend line per hypothesis
//! ("p=<confidence>, ADE=<error>"). Map lanes are drawn as `<path>`
//! elements so the polyline count stays meaningful. Output is pure text,
//! deterministic for fixed inputs.

use trajformer_core::decoder::TrajectoryBundle;
use trajformer_core::metrics::{trajectory_ade, RetentionCurve};
use trajformer_core::scenegen::{MapElementKind, Scene};
use trajformer_core::Result;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        if !min_x.is_finite() {
            (min_x, max_x, min_y, max_y) = (-1.0, 1.0, -1.0, 1.0);
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1.0);
        Frame {
            min_x,
            min_y,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    /// Ego-frame meters to SVG: forward (x) up, left (y) to the image left.
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = SIZE - MARGIN - (y - self.min_y) * self.scale;
        let sy = SIZE - MARGIN - (x - self.min_x) * self.scale;
        (sx, sy)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn polyline(frame: &Frame, pts: &[(f32, f32)], style: &str) -> String {
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| {
            let (sx, sy) = frame.map(x as f64, y as f64);
            format!("{},{}", fmt(sx), fmt(sy))
        })
        .collect();
    format!("<polyline fill=\"none\" {} points=\"{}\"/>\n", style, coords.join(" "))
}

fn lane_path(frame: &Frame, pts: &[(f32, f32)], style: &str) -> String {
    let mut d = String::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let (sx, sy) = frame.map(x as f64, y as f64);
        let cmd = if i == 0 { 'M' } else { 'L' };
        d.push_str(&format!("{cmd}{} {} ", fmt(sx), fmt(sy)));
    }
    format!("<path fill=\"none\" {} d=\"{}\"/>\n", style, d.trim_end())
}

/// Render one scene with its prediction bundle.
pub fn scene_svg(scene: &Scene, bundle: &TrajectoryBundle) -> Result<String> {
    let gt = &scene.future.points;
    let all_points = gt
        .iter()
        .chain(bundle.trajectories.iter().flatten())
        .map(|&(x, y)| (x as f64, y as f64))
        .chain(std::iter::once((0.0, 0.0)));
    let frame = Frame::fit(all_points);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Map context as paths (not polylines).
    for element in &scene.map {
        let style = match element.kind {
            MapElementKind::Lane => "stroke=\"#d0d0d0\" stroke-width=\"1.5\"",
            MapElementKind::RoadBoundary => "stroke=\"#b0b0b0\" stroke-width=\"1\" stroke-dasharray=\"4 3\"",
            MapElementKind::Crosswalk => "stroke=\"#c8b060\" stroke-width=\"2\"",
        };
        svg.push_str(&lane_path(&frame, &element.polyline, style));
    }

    // Ego marker.
    let (ex, ey) = frame.map(0.0, 0.0);
    svg.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"black\"/>\n",
        fmt(ex),
        fmt(ey)
    ));

    // Predictions first so the ground truth draws on top.
    let mut legend = Vec::new();
    for (k, traj) in bundle.trajectories.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        svg.push_str(&polyline(
            &frame,
            traj,
            &format!("stroke=\"{color}\" stroke-width=\"1.5\""),
        ));
        let ade = trajectory_ade(traj, gt)?;
        legend.push((color, bundle.confidences[k], ade));
    }
    svg.push_str(&polyline(&frame, gt, "stroke=\"olive\" stroke-width=\"3.5\""));

    // Legend: one entry per hypothesis plus the ground truth.
    let mut y = MARGIN;
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{y}\" font-size=\"13\" fill=\"olive\" font-family=\"monospace\">ground truth</text>\n"
    ));
    for (color, conf, ade) in legend {
        y += 16.0;
        svg.push_str(&format!(
            "<text x=\"{MARGIN}\" y=\"{y}\" font-size=\"13\" fill=\"{color}\" font-family=\"monospace\">p={conf:.3}, ADE={ade:.2}</text>\n"
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"12\" fill=\"#404040\" font-family=\"monospace\">U={:.3} seed={} kind={}</text>\n",
        SIZE - 12.0,
        bundle.uncertainty,
        scene.seed,
        scene.scenario_kind.name(),
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Render the error-vs-retention curve.
pub fn retention_svg(curve: &RetentionCurve) -> String {
    let max_v = curve.values.iter().cloned().fold(0.0f64, f64::max).max(1e-9);
    let inner = SIZE - 2.0 * MARGIN;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        SIZE - MARGIN,
        SIZE - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        SIZE - MARGIN
    ));
    let mut d = String::new();
    for (i, (f, v)) in curve.fractions.iter().zip(&curve.values).enumerate() {
        let x = MARGIN + f * inner;
        let y = SIZE - MARGIN - (v / max_v) * inner;
        let cmd = if i == 0 { 'M' } else { 'L' };
        d.push_str(&format!("{cmd}{} {} ", fmt(x), fmt(y)));
    }
    svg.push_str(&format!(
        "<path fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" d=\"{}\"/>\n",
        d.trim_end()
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"13\" font-family=\"monospace\">R-AUC={:.4}</text>\n",
        MARGIN - 10.0,
        curve.area
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" font-family=\"monospace\">retention fraction</text>\n",
        SIZE / 2.0 - 60.0,
        SIZE - 10.0
    ));
    svg.push_str("</svg>\n");
    svg
}
