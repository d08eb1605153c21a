//! Imputed hand trajectories with ±1σ and ±2σ bands, the ground truth and the
//! invisible-frame spans, drawn once as primitives and rendered to SVG and PNG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sparsepose_core::VisibilityMask;
use sparsepose_models::imputer::ImputedTrajectory;
use tiny_skia::{Color, FillRule, Paint, PathBuilder, Pixmap, Stroke, Transform};

use crate::error::{CliError, Result};

const PANEL_W: f32 = 420.0;
const PANEL_H: f32 = 150.0;
const MARGIN: f32 = 24.0;
const AXES: [&str; 3] = ["x", "y", "z"];
const SIDES: [&str; 2] = ["left", "right"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rgba(pub u8, pub u8, pub u8, pub u8);

const GRAY: Rgba = Rgba(128, 128, 128, 70);
const BAND2: Rgba = Rgba(70, 130, 220, 50);
const BAND1: Rgba = Rgba(70, 130, 220, 100);
const MEAN: Rgba = Rgba(20, 60, 170, 255);
const TRUTH: Rgba = Rgba(200, 40, 40, 255);
const FRAME: Rgba = Rgba(0, 0, 0, 255);

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Shaded invisible span.
    Span { x: f32, y: f32, w: f32, h: f32 },
    /// Closed band polygon: upper edge left to right, then the lower edge back.
    Band { points: Vec<(f32, f32)>, sigmas: u8 },
    Line { points: Vec<(f32, f32)>, truth: bool },
    Frame { x: f32, y: f32, w: f32, h: f32 },
    Label { x: f32, y: f32, text: String },
}

impl Shape {
    fn color(&self) -> Rgba {
        match self {
            Shape::Span { .. } => GRAY,
            Shape::Band { sigmas: 1, .. } => BAND1,
            Shape::Band { .. } => BAND2,
            Shape::Line { truth: true, .. } => TRUTH,
            Shape::Line { .. } => MEAN,
            Shape::Frame { .. } | Shape::Label { .. } => FRAME,
        }
    }
}

/// Signed-free polygon area by the shoelace formula.
pub fn polygon_area(points: &[(f32, f32)]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.0 as f64 * b.1 as f64 - b.0 as f64 * a.1 as f64
        })
        .sum();
    twice.abs() / 2.0
}

#[derive(Clone, Debug)]
pub struct Figure {
    pub width: f32,
    pub height: f32,
    pub shapes: Vec<Shape>,
}

/// Lays out one panel per hand position coordinate: rows x, y, z and columns left, right.
pub fn layout(imputed: &ImputedTrajectory, truth: Option<&[f64]>, mask: &VisibilityMask) -> Result<Figure> {
    let frames = imputed.frames();
    let w = imputed.hand_dim.width();
    let len = frames * 2 * w;
    if imputed.mean.len() != len || imputed.uncertainty.len() != len || mask.frames() != frames || truth.is_some_and(|t| t.len() != len) {
        return Err(CliError::Config("plot inputs disagree in shape".into()));
    }
    if frames < 2 {
        return Err(CliError::Config("plotting needs at least two frames".into()));
    }
    let mut shapes = Vec::new();
    for side in 0..2 {
        for (c, axis) in AXES.iter().enumerate() {
            let ox = MARGIN + side as f32 * (PANEL_W + MARGIN);
            let oy = MARGIN + c as f32 * (PANEL_H + MARGIN);
            let at = |t: usize| (t * 2 + side) * w + c;
            let mu: Vec<f64> = (0..frames).map(|t| imputed.mean[at(t)]).collect();
            let sd: Vec<f64> = (0..frames).map(|t| imputed.uncertainty[at(t)].max(0.0).sqrt()).collect();
            let gt: Option<Vec<f64>> = truth.map(|g| (0..frames).map(|t| g[at(t)]).collect());

            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in 0..frames {
                lo = lo.min(mu[t] - 2.0 * sd[t]);
                hi = hi.max(mu[t] + 2.0 * sd[t]);
                if let Some(g) = &gt {
                    lo = lo.min(g[t]);
                    hi = hi.max(g[t]);
                }
            }
            let pad = ((hi - lo) * 0.05).max(1e-3);
            let (lo, hi) = (lo - pad, hi + pad);
            let px = |t: usize| ox + PANEL_W * t as f32 / (frames - 1) as f32;
            let py = |v: f64| oy + PANEL_H * (1.0 - ((v - lo) / (hi - lo)) as f32);

            let mut t = 0;
            while t < frames {
                if mask.visible[t][side] {
                    t += 1;
                    continue;
                }
                let start = t;
                while t < frames && !mask.visible[t][side] {
                    t += 1;
                }
                let step = PANEL_W / (frames - 1) as f32;
                let x0 = (px(start) - step / 2.0).max(ox);
                let x1 = (px(t - 1) + step / 2.0).min(ox + PANEL_W);
                shapes.push(Shape::Span {
                    x: x0,
                    y: oy,
                    w: x1 - x0,
                    h: PANEL_H,
                });
            }
            for k in [2u8, 1] {
                let kf = k as f64;
                let mut points: Vec<(f32, f32)> = (0..frames).map(|t| (px(t), py(mu[t] + kf * sd[t]))).collect();
                points.extend((0..frames).rev().map(|t| (px(t), py(mu[t] - kf * sd[t]))));
                shapes.push(Shape::Band { points, sigmas: k });
            }
            shapes.push(Shape::Line {
                points: (0..frames).map(|t| (px(t), py(mu[t]))).collect(),
                truth: false,
            });
            if let Some(g) = &gt {
                shapes.push(Shape::Line {
                    points: (0..frames).map(|t| (px(t), py(g[t]))).collect(),
                    truth: true,
                });
            }
            shapes.push(Shape::Frame {
                x: ox,
                y: oy,
                w: PANEL_W,
                h: PANEL_H,
            });
            shapes.push(Shape::Label {
                x: ox + 4.0,
                y: oy + 12.0,
                text: format!("{} hand {axis}", SIDES[side]),
            });
        }
    }
    Ok(Figure {
        width: 2.0 * PANEL_W + 3.0 * MARGIN,
        height: 3.0 * PANEL_H + 4.0 * MARGIN,
        shapes,
    })
}

fn svg_color(c: Rgba) -> String {
    format!("rgb({},{},{})\" fill-opacity=\"{:.3}", c.0, c.1, c.2, c.3 as f32 / 255.0)
}

fn svg_points(points: &[(f32, f32)]) -> String {
    points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

pub fn render_svg(fig: &Figure) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = fig.width,
        h = fig.height
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for shape in &fig.shapes {
        let c = shape.color();
        let _ = match shape {
            Shape::Span { x, y, w, h } => writeln!(s, "<rect class=\"invisible\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{}\"/>", svg_color(c)),
            Shape::Band { points, sigmas } => writeln!(s, "<polygon class=\"band{sigmas}\" points=\"{}\" fill=\"{}\"/>", svg_points(points), svg_color(c)),
            Shape::Line { points, truth } => writeln!(
                s,
                "<polyline class=\"{}\" points=\"{}\" fill=\"none\" stroke=\"rgb({},{},{})\" stroke-width=\"1.5\"/>",
                if *truth { "truth" } else { "mean" },
                svg_points(points),
                c.0,
                c.1,
                c.2
            ),
            Shape::Frame { x, y, w, h } => writeln!(s, "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"none\" stroke=\"black\"/>"),
            Shape::Label { x, y, text } => writeln!(s, "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"11\">{text}</text>"),
        };
    }
    s.push_str("</svg>\n");
    s
}

fn paint(c: Rgba) -> Paint<'static> {
    let mut p = Paint::default();
    p.set_color(Color::from_rgba8(c.0, c.1, c.2, c.3));
    p.anti_alias = true;
    p
}

fn path_of(points: &[(f32, f32)], close: bool) -> Option<tiny_skia::Path> {
    let mut pb = PathBuilder::new();
    let (&(x0, y0), rest) = points.split_first()?;
    pb.move_to(x0, y0);
    for &(x, y) in rest {
        pb.line_to(x, y);
    }
    if close {
        pb.close();
    }
    pb.finish()
}

/// PNG bytes. Text labels only appear in the SVG.
pub fn render_png(fig: &Figure) -> Result<Vec<u8>> {
    let mut pix = Pixmap::new(fig.width.ceil() as u32, fig.height.ceil() as u32).ok_or_else(|| CliError::Config("empty plot canvas".into()))?;
    pix.fill(Color::WHITE);
    let id = Transform::identity();
    for shape in &fig.shapes {
        let p = paint(shape.color());
        match shape {
            Shape::Span { x, y, w, h } => {
                if let Some(r) = tiny_skia::Rect::from_xywh(*x, *y, *w, *h) {
                    pix.fill_rect(r, &p, id, None);
                }
            }
            Shape::Band { points, .. } => {
                if let Some(path) = path_of(points, true) {
                    pix.fill_path(&path, &p, FillRule::Winding, id, None);
                }
            }
            Shape::Line { points, .. } => {
                if let Some(path) = path_of(points, false) {
                    let stroke = Stroke {
                        width: 1.5,
                        ..Stroke::default()
                    };
                    pix.stroke_path(&path, &p, &stroke, id, None);
                }
            }
            Shape::Frame { x, y, w, h } => {
                if let Some(path) = path_of(&[(*x, *y), (x + w, *y), (x + w, y + h), (*x, y + h)], true) {
                    pix.stroke_path(&path, &p, &Stroke::default(), id, None);
                }
            }
            Shape::Label { .. } => {}
        }
    }
    pix.encode_png().map_err(|e| CliError::Numeric(format!("png encoding: {e}")))
}

/// Writes `{stem}.svg` and `{stem}.png` under `dir`.
pub fn emit_plots(imputed: &ImputedTrajectory, truth: Option<&[f64]>, mask: &VisibilityMask, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
    let fig = layout(imputed, truth, mask)?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let svg = dir.join(format!("{stem}.svg"));
    let png = dir.join(format!("{stem}.png"));
    fs::write(&svg, render_svg(&fig)).map_err(|e| CliError::io(&svg, e))?;
    fs::write(&png, render_png(&fig)?).map_err(|e| CliError::io(&png, e))?;
    Ok([svg, png])
}
