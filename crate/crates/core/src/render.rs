//! Portable pixmap output for partition maps and expression heatmaps.

use crate::hexgeom::CartesianPoint;
use crate::numerics::mean_std;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pixels: Vec<[u8; 3]>,
    comments: Vec<String>,
}

impl Pixmap {
    pub fn new(width: usize, height: usize, background: [u8; 3]) -> Self {
        Pixmap {
            width,
            height,
            pixels: vec![background; width * height],
            comments: Vec::new(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn add_comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into().replace(['\n', '\r'], " "));
    }

    pub fn fill_disc(&mut self, cx: f64, cy: f64, radius: f64, color: [u8; 3]) {
        let x0 = (cx - radius).floor().max(0.0) as usize;
        let y0 = (cy - radius).floor().max(0.0) as usize;
        let x1 = ((cx + radius).ceil() as usize).min(self.width.saturating_sub(1));
        let y1 = ((cy + radius).ceil() as usize).min(self.height.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if dx * dx + dy * dy <= radius * radius {
                    self.pixels[y * self.width + x] = color;
                }
            }
        }
    }

    /// Binary P6 encoding; comments go into the header.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = b"P6\n".to_vec();
        for c in &self.comments {
            out.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    /// Distinct colours present, in first-seen order.
    pub fn distinct_colors(&self) -> Vec<[u8; 3]> {
        let mut seen = Vec::new();
        for p in &self.pixels {
            if !seen.contains(p) {
                seen.push(*p);
            }
        }
        seen
    }
}

/// Maps data coordinates to pixel coordinates (y pointing up in data space).
#[derive(Debug, Clone, Copy)]
pub struct PlotFrame {
    pub width: usize,
    pub height: usize,
    min: CartesianPoint,
    scale: f64,
    margin: f64,
}

impl PlotFrame {
    pub fn fit(points: impl Iterator<Item = CartesianPoint>, width: usize) -> PlotFrame {
        let pts: Vec<_> = points.collect();
        let (mut min, mut max) = (
            CartesianPoint::new(f64::MAX, f64::MAX),
            CartesianPoint::new(f64::MIN, f64::MIN),
        );
        for p in &pts {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        if pts.is_empty() {
            min = CartesianPoint::new(0.0, 0.0);
            max = CartesianPoint::new(1.0, 1.0);
        }
        let width = width.max(16);
        let margin = width as f64 * 0.05;
        let span_x = (max.x - min.x).max(1e-9);
        let span_y = (max.y - min.y).max(1e-9);
        let span = span_x.max(span_y);
        let scale = (width as f64 - 2.0 * margin) / span;
        let height = ((span_y * scale) + 2.0 * margin).ceil().max(16.0) as usize;
        PlotFrame {
            width,
            height,
            min,
            scale,
            margin,
        }
    }

    pub fn project(&self, p: &CartesianPoint) -> (f64, f64) {
        let x = self.margin + (p.x - self.min.x) * self.scale;
        let y = self.height as f64 - self.margin - (p.y - self.min.y) * self.scale;
        (x, y)
    }

    /// Disc radius of roughly half the typical spot spacing in pixels.
    pub fn spot_radius(&self, points: impl Iterator<Item = CartesianPoint>) -> f64 {
        let n = points.count().max(1) as f64;
        let area = (self.width as f64 - 2.0 * self.margin) * (self.height as f64 - 2.0 * self.margin);
        (0.5 * (area / n).sqrt()).clamp(1.0, self.margin.max(1.0) * 4.0)
    }
}

/// Well-separated colours for integer labels.
pub fn palette_color(index: usize) -> [u8; 3] {
    const BASE: [[u8; 3]; 12] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
        [170, 110, 40],
    ];
    let base = BASE[index % BASE.len()];
    let round = (index / BASE.len()) as u8;
    base.map(|c| c.wrapping_add(round.wrapping_mul(37)))
}

/// Blue → yellow ramp for values in [0, 1].
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    [lerp(48.0, 253.0), lerp(18.0, 231.0), lerp(120.0, 37.0)]
}

/// `mean ± std (min--max)` summary of one gene's values.
pub fn heatmap_annotation(values: &[f64]) -> String {
    let (mean, std) = mean_std(values);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("{mean:.4} +/- {std:.4} ({min:.4}--{max:.4})")
}

/// Spot map of one gene, colours min-max normalized per gene.
pub fn render_heatmap(points: &[CartesianPoint], values: &[f64], width: usize, title: &str) -> Pixmap {
    let frame = PlotFrame::fit(points.iter().copied(), width);
    let mut img = Pixmap::new(frame.width, frame.height, [255, 255, 255]);
    img.add_comment(title);
    img.add_comment(heatmap_annotation(values));
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let radius = frame.spot_radius(points.iter().copied());
    for (p, &v) in points.iter().zip(values) {
        let t = if span > 0.0 { (v - min) / span } else { 0.0 };
        let (x, y) = frame.project(p);
        img.fill_disc(x, y, radius, ramp_color(t));
    }
    img
}
