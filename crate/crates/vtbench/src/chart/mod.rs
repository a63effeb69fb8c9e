//! Deterministic chart rasterizer.
//!
//! Replaces a plotting library with integer Bresenham geometry so that a
//! given (series, spec) pair renders to byte-identical pixels on every run
//! and platform. Ink discipline: every pixel is pure white, pure black, or
//! pure blue (0,0,255); no anti-aliasing.

pub mod cache;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Line,
    Area,
    Bar,
    Scatter,
}

impl ChartType {
    pub const ALL: [ChartType; 4] = [
        ChartType::Line,
        ChartType::Area,
        ChartType::Bar,
        ChartType::Scatter,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChartType::Line => "line",
            ChartType::Area => "area",
            ChartType::Bar => "bar",
            ChartType::Scatter => "scatter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    Mono,
    Color,
}

impl ColorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ColorMode::Mono => "mono",
            ColorMode::Color => "color",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    WithLabel,
    NoLabel,
}

impl LabelMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelMode::WithLabel => "with_label",
            LabelMode::NoLabel => "no_label",
        }
    }
}

/// Rendering configuration for one chart image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChartSpec {
    pub chart_type: ChartType,
    pub color_mode: ColorMode,
    pub label_mode: LabelMode,
    /// Square canvas edge in pixels (presets 64/128/256; minimum 16).
    pub resolution: u32,
    /// Line thickening in pixels.
    #[serde(default = "default_stroke")]
    pub stroke_width: u32,
    /// Scatter marker edge in pixels; odd.
    #[serde(default = "default_marker")]
    pub marker_size: u32,
}

fn default_stroke() -> u32 {
    1
}

fn default_marker() -> u32 {
    3
}

impl ChartSpec {
    pub fn new(
        chart_type: ChartType,
        color_mode: ColorMode,
        label_mode: LabelMode,
        resolution: u32,
    ) -> Self {
        ChartSpec {
            chart_type,
            color_mode,
            label_mode,
            resolution,
            stroke_width: 1,
            marker_size: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 16 {
            return Err(Error::InvalidChartSpec(format!(
                "resolution {} < 16",
                self.resolution
            )));
        }
        if self.marker_size % 2 == 0 || self.marker_size == 0 {
            return Err(Error::InvalidChartSpec(format!(
                "marker_size {} must be odd and >= 1",
                self.marker_size
            )));
        }
        if self.stroke_width == 0 {
            return Err(Error::InvalidChartSpec("stroke_width 0".into()));
        }
        Ok(())
    }

    /// Token used in cache file names: `{type}_{color}_{label}_{res}`.
    pub fn file_token(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.chart_type.as_str(),
            self.color_mode.as_str(),
            self.label_mode.as_str(),
            self.resolution
        )
    }
}

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];
pub const BLUE: [u8; 3] = [0, 0, 255];

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn blank(width: usize, height: usize) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![255; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    /// SHA-256 over the raw pixel buffer (the manifest's content hash).
    pub fn pixel_sha256(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(&self.pixels);
        hex::encode(h.finalize())
    }

    pub fn count_non_white(&self) -> usize {
        self.pixels.chunks_exact(3).filter(|p| *p != WHITE).count()
    }

    /// Positions of non-white pixels, row-major order.
    pub fn ink_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) != WHITE {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Number of 4-connected components of non-white pixels.
    pub fn ink_components(&self) -> usize {
        let mut seen = vec![false; self.width * self.height];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..seen.len() {
            let (sx, sy) = (start % self.width, start / self.width);
            if seen[start] || self.get(sx, sy) == WHITE {
                continue;
            }
            components += 1;
            stack.push(start);
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % self.width, i / self.width);
                let mut neighbors = Vec::with_capacity(4);
                if x > 0 {
                    neighbors.push(i - 1);
                }
                if x + 1 < self.width {
                    neighbors.push(i + 1);
                }
                if y > 0 {
                    neighbors.push(i - self.width);
                }
                if y + 1 < self.height {
                    neighbors.push(i + self.width);
                }
                for nb in neighbors {
                    if !seen[nb] && self.get(nb % self.width, nb / self.width) != WHITE {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                }
            }
        }
        components
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn width(&self) -> i64 {
        self.x1 - self.x0 + 1
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Margin reserved for the frame and ticks in `with_label` mode.
pub const LABEL_MARGIN: i64 = 6;

/// The data area: the full canvas without labels, or inset by a fixed
/// 6-pixel margin when the frame and ticks are drawn.
pub fn plot_rect(spec: &ChartSpec) -> Rect {
    let r = spec.resolution as i64;
    match spec.label_mode {
        LabelMode::NoLabel => Rect {
            x0: 0,
            y0: 0,
            x1: r - 1,
            y1: r - 1,
        },
        LabelMode::WithLabel => Rect {
            x0: LABEL_MARGIN,
            y0: LABEL_MARGIN,
            x1: r - 1 - LABEL_MARGIN,
            y1: r - 1 - LABEL_MARGIN,
        },
    }
}

fn round_div(num: f64, den: f64) -> i64 {
    (num / den).round() as i64
}

/// Maps each timestep to a canvas pixel. X spreads `0..T-1` across the rect;
/// Y uses per-instance min-max scaling with the maximum at the top row. A
/// constant series maps to the vertical midline; a single point sits at the
/// horizontal center.
pub fn series_to_canvas(values: &[f32], rect: Rect) -> Result<Vec<(i64, i64)>> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    check_finite(values)?;
    let t_len = values.len();
    let (min, max) = min_max(values);
    let mid_y = (rect.y0 + rect.y1).div_euclid(2);
    let mut pts = Vec::with_capacity(t_len);
    for (t, &v) in values.iter().enumerate() {
        let x = if t_len == 1 {
            (rect.x0 + rect.x1).div_euclid(2)
        } else {
            rect.x0 + round_div(t as f64 * (rect.x1 - rect.x0) as f64, (t_len - 1) as f64)
        };
        let y = if max > min {
            rect.y0
                + round_div(
                    (max - v) as f64 * (rect.y1 - rect.y0) as f64,
                    (max - min) as f64,
                )
        } else {
            mid_y
        };
        pts.push((x, y));
    }
    Ok(pts)
}

/// Pixel row of data value zero under the same scaling, clamped into the
/// rect: all-positive series clamp to the bottom edge, all-negative to the
/// top edge.
pub fn baseline_row(values: &[f32], rect: Rect) -> Result<i64> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    check_finite(values)?;
    let (min, max) = min_max(values);
    Ok(if min > 0.0 {
        rect.y1
    } else if max < 0.0 {
        rect.y0
    } else if max > min {
        rect.y0 + round_div(max as f64 * (rect.y1 - rect.y0) as f64, (max - min) as f64)
    } else {
        // constant zero series: the midline, same as its data row
        (rect.y0 + rect.y1).div_euclid(2)
    })
}

fn min_max(values: &[f32]) -> (f32, f32) {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    (min, max)
}

fn check_finite(values: &[f32]) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidChartSpec(format!(
                "non-finite series value at index {i}"
            )));
        }
    }
    Ok(())
}

/// Renders a series under a spec. Pure function of its inputs.
pub fn render(values: &[f32], spec: &ChartSpec) -> Result<RasterImage> {
    spec.validate()?;
    let rect = plot_rect(spec);
    let mut img = render_data_layer(values, spec, rect)?;
    if spec.label_mode == LabelMode::WithLabel {
        draw_frame_and_ticks(&mut img, rect);
    }
    Ok(img)
}

/// Draws only the series ink into `rect` on a fresh white canvas. `render`
/// is exactly this plus the frame/tick decorations, so label mode adds ink
/// without moving any interior data pixel.
pub fn render_data_layer(values: &[f32], spec: &ChartSpec, rect: Rect) -> Result<RasterImage> {
    let pts = series_to_canvas(values, rect)?;
    let ink = match spec.color_mode {
        ColorMode::Mono => BLACK,
        ColorMode::Color => BLUE,
    };
    let res = spec.resolution as usize;
    let mut img = RasterImage::blank(res, res);

    match spec.chart_type {
        ChartType::Line => draw_polyline(&mut img, &pts, spec.stroke_width, ink),
        ChartType::Area => {
            let base = baseline_row(values, rect)?;
            draw_area(&mut img, &pts, base, ink);
            draw_polyline(&mut img, &pts, spec.stroke_width, ink);
        }
        ChartType::Bar => {
            let base = baseline_row(values, rect)?;
            let bw = (rect.width() / values.len() as i64).max(1);
            for &(x, y) in &pts {
                let start = x - (bw - 1) / 2;
                for col in start..start + bw {
                    if col < rect.x0 || col > rect.x1 {
                        continue;
                    }
                    fill_column(&mut img, col, y, base, ink);
                }
            }
        }
        ChartType::Scatter => {
            let half = (spec.marker_size as i64 - 1) / 2;
            for &(x, y) in &pts {
                for dy in -half..=half {
                    for dx in -half..=half {
                        let (px, py) = (x + dx, y + dy);
                        if rect.contains(px, py) {
                            img.put(px, py, ink);
                        }
                    }
                }
            }
        }
    }
    Ok(img)
}

fn draw_polyline(img: &mut RasterImage, pts: &[(i64, i64)], stroke: u32, ink: [u8; 3]) {
    if pts.len() == 1 {
        stamp(img, pts[0].0, pts[0].1, stroke, ink);
        return;
    }
    for pair in pts.windows(2) {
        bresenham(pair[0], pair[1], |x, y| stamp(img, x, y, stroke, ink));
    }
}

/// Symmetric square thickening around each line pixel; stroke 1 paints
/// exactly the pixel itself.
fn stamp(img: &mut RasterImage, x: i64, y: i64, stroke: u32, ink: [u8; 3]) {
    let s = stroke as i64;
    let lo = -(s - 1) / 2;
    let hi = s / 2;
    for dy in lo..=hi {
        for dx in lo..=hi {
            img.put(x + dx, y + dy, ink);
        }
    }
}

fn bresenham(from: (i64, i64), to: (i64, i64), mut plot: impl FnMut(i64, i64)) {
    let (mut x0, mut y0) = from;
    let (x1, y1) = to;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(x0, y0);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Solid fill between the interpolated series row and the baseline for every
/// column each segment spans.
fn draw_area(img: &mut RasterImage, pts: &[(i64, i64)], base: i64, ink: [u8; 3]) {
    if pts.len() == 1 {
        fill_column(img, pts[0].0, pts[0].1, base, ink);
        return;
    }
    for pair in pts.windows(2) {
        let ((xa, ya), (xb, yb)) = (pair[0], pair[1]);
        if xa == xb {
            fill_column(img, xa, ya, base, ink);
            fill_column(img, xa, yb, base, ink);
            continue;
        }
        for x in xa.min(xb)..=xa.max(xb) {
            let y = ya + round_div((x - xa) as f64 * (yb - ya) as f64, (xb - xa) as f64);
            fill_column(img, x, y, base, ink);
        }
    }
}

fn fill_column(img: &mut RasterImage, x: i64, y: i64, base: i64, ink: [u8; 3]) {
    for row in y.min(base)..=y.max(base) {
        img.put(x, row, ink);
    }
}

/// 1-pixel black frame on the rect boundary plus five evenly spaced 3-pixel
/// ticks per axis extending into the margin (below and to the left).
fn draw_frame_and_ticks(img: &mut RasterImage, rect: Rect) {
    for x in rect.x0..=rect.x1 {
        img.put(x, rect.y0, BLACK);
        img.put(x, rect.y1, BLACK);
    }
    for y in rect.y0..=rect.y1 {
        img.put(rect.x0, y, BLACK);
        img.put(rect.x1, y, BLACK);
    }
    for i in 0..5i64 {
        let x = rect.x0 + round_div(i as f64 * (rect.x1 - rect.x0) as f64, 4.0);
        for dy in 1..=3 {
            img.put(x, rect.y1 + dy, BLACK);
        }
        let y = rect.y0 + round_div(i as f64 * (rect.y1 - rect.y0) as f64, 4.0);
        for dx in 1..=3 {
            img.put(rect.x0 - dx, y, BLACK);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(ct: ChartType, res: u32) -> ChartSpec {
        ChartSpec::new(ct, ColorMode::Mono, LabelMode::NoLabel, res)
    }

    #[test]
    fn plot_rect_margins() {
        let s = spec(ChartType::Line, 128);
        assert_eq!(plot_rect(&s), Rect { x0: 0, y0: 0, x1: 127, y1: 127 });
        let mut s = spec(ChartType::Line, 128);
        s.label_mode = LabelMode::WithLabel;
        assert_eq!(plot_rect(&s), Rect { x0: 6, y0: 6, x1: 121, y1: 121 });
        s.resolution = 64;
        assert_eq!(plot_rect(&s), Rect { x0: 6, y0: 6, x1: 57, y1: 57 });
    }

    #[test]
    fn series_mapping_affine_and_conventions() {
        let rect = Rect { x0: 0, y0: 0, x1: 127, y1: 127 };
        let pts = series_to_canvas(&[0.0, 1.0], rect).unwrap();
        assert_eq!(pts, vec![(0, 127), (127, 0)]);

        let pts = series_to_canvas(&[5.0, 5.0, 5.0], rect).unwrap();
        assert!(pts.iter().all(|&(_, y)| y == 63));

        let pts = series_to_canvas(&[2.0], rect).unwrap();
        assert_eq!(pts, vec![(63, 63)]);

        assert!(series_to_canvas(&[], rect).is_err());
        assert!(series_to_canvas(&[f32::NAN], rect).is_err());
    }

    #[test]
    fn baseline_affine_and_clamping() {
        let rect = Rect { x0: 0, y0: 0, x1: 127, y1: 127 };
        // values spanning [-1, 1]: zero sits in the middle row
        let b = baseline_row(&[-1.0, 1.0], rect).unwrap();
        assert_eq!(b, 64); // round(1*127/2) = round(63.5) rounds half up
        let b = baseline_row(&[0.5, 1.0, 2.0], rect).unwrap();
        assert_eq!(b, 127);
        let b = baseline_row(&[-3.0, -1.0], rect).unwrap();
        assert_eq!(b, 0);
        let b = baseline_row(&[0.0, 0.0], rect).unwrap();
        assert_eq!(b, 63);
    }

    #[test]
    fn constant_line_is_single_full_width_run() {
        for res in [64usize, 128, 256] {
            let img = render(&[5.0, 5.0, 5.0], &spec(ChartType::Line, res as u32)).unwrap();
            let row = (res - 1) / 2;
            assert_eq!(img.count_non_white(), res, "res {res}");
            for x in 0..res {
                assert_eq!(img.get(x, row), BLACK);
            }
            assert_eq!(img.ink_components(), 1);
        }
    }

    #[test]
    fn color_and_mono_share_ink_positions() {
        let values: Vec<f32> = (0..20).map(|t| ((t as f32) * 0.7).sin()).collect();
        for ct in ChartType::ALL {
            let mono = render(&values, &spec(ct, 64)).unwrap();
            let mut cs = spec(ct, 64);
            cs.color_mode = ColorMode::Color;
            let color = render(&values, &cs).unwrap();
            assert_eq!(mono.ink_positions(), color.ink_positions(), "{ct:?}");
            let any_ink = color.ink_positions()[0];
            assert_eq!(color.get(any_ink.0, any_ink.1), BLUE);
        }
    }

    #[test]
    fn renders_are_byte_identical() {
        let values: Vec<f32> = (0..37).map(|t| ((t as f32) * 0.3).cos() * 2.0 - 0.3).collect();
        for ct in ChartType::ALL {
            for lm in [LabelMode::NoLabel, LabelMode::WithLabel] {
                let mut s = spec(ct, 128);
                s.label_mode = lm;
                let a = render(&values, &s).unwrap();
                let b = render(&values, &s).unwrap();
                assert_eq!(a.pixels, b.pixels);
                assert_eq!(a.pixel_sha256(), b.pixel_sha256());
            }
        }
    }

    #[test]
    fn scatter_component_count_and_budget() {
        // 5 ascending points, markers well separated
        let img = render(&[0.0, 1.0, 2.0, 3.0, 4.0], &spec(ChartType::Scatter, 128)).unwrap();
        assert_eq!(img.ink_components(), 5);
        assert!(img.count_non_white() <= 45, "{}", img.count_non_white());
    }

    #[test]
    fn every_timestep_leaves_ink() {
        // more timesteps than pixels: overplotting still covers every point
        let values: Vec<f32> = (0..300).map(|t| (t as f32 * 0.05).sin()).collect();
        for ct in ChartType::ALL {
            let img = render(&values, &spec(ct, 64)).unwrap();
            let rect = plot_rect(&spec(ct, 64));
            let pts = series_to_canvas(&values, rect).unwrap();
            for &(x, y) in &pts {
                assert_ne!(
                    img.get(x as usize, y as usize),
                    WHITE,
                    "{ct:?} missing ink at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn label_mode_only_adds_margin_and_boundary_ink() {
        let values: Vec<f32> = (0..24).map(|t| ((t * 7 % 11) as f32) - 5.0).collect();
        for ct in ChartType::ALL {
            let mut s = spec(ct, 64);
            s.label_mode = LabelMode::WithLabel;
            let labeled = render(&values, &s).unwrap();
            let rect = plot_rect(&s);
            let data_only = render_data_layer(&values, &s, rect).unwrap();
            // strictly interior pixels are untouched by the decorations
            for y in (rect.y0 + 1)..rect.y1 {
                for x in (rect.x0 + 1)..rect.x1 {
                    assert_eq!(
                        labeled.get(x as usize, y as usize),
                        data_only.get(x as usize, y as usize),
                        "{ct:?} interior differs at ({x},{y})"
                    );
                }
            }
            // decorations added ink only on the boundary and in the margin
            for (i, (lp, dp)) in labeled
                .pixels
                .chunks_exact(3)
                .zip(data_only.pixels.chunks_exact(3))
                .enumerate()
            {
                if lp != dp {
                    let (x, y) = ((i % 64) as i64, (i / 64) as i64);
                    let on_boundary = rect.contains(x, y)
                        && (x == rect.x0 || x == rect.x1 || y == rect.y0 || y == rect.y1);
                    assert!(on_boundary || !rect.contains(x, y), "{ct:?} at ({x},{y})");
                    assert_eq!(lp, BLACK);
                }
            }
            // frame present on the boundary
            assert_eq!(labeled.get(rect.x0 as usize, rect.y0 as usize), BLACK);
            // ink discipline everywhere
            for p in labeled.pixels.chunks_exact(3) {
                assert!(p == WHITE || p == BLACK || p == BLUE, "pixel {p:?}");
            }
        }
    }

    #[test]
    fn scale_covariance_for_line_and_scatter() {
        let values: Vec<f32> = (0..40).map(|t| ((t as f32) * 0.37).sin() * 1.3 + 0.2).collect();
        let scaled: Vec<f32> = values.iter().map(|&v| 2.5 * v + 7.0).collect();
        for ct in [ChartType::Line, ChartType::Scatter] {
            let a = render(&values, &spec(ct, 128)).unwrap();
            let b = render(&scaled, &spec(ct, 128)).unwrap();
            assert_eq!(a.pixels, b.pixels, "{ct:?}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(ChartType::Line, 8);
        assert!(render(&[1.0, 2.0], &s).is_err());
        s.resolution = 64;
        s.marker_size = 4;
        assert!(render(&[1.0, 2.0], &s).is_err());
        s.marker_size = 3;
        assert!(render(&[], &s).is_err());
    }
}
