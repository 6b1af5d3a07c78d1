use std::path::Path;

use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::{BinaryMask, PerceptionError, PoolObservation, Rect};
use crate::fluid::SimState;
use crate::harness::scenario::ToolMarker;
use crate::tissue::HeightQuery;

/// Pixels per mask cell edge.
const SCALE: usize = 4;

const TISSUE: [f64; 3] = [214.0, 160.0, 150.0];
const BLOOD: [u8; 3] = [150, 10, 20];
const CLOT: [u8; 3] = [70, 20, 25];
const TOOL: [u8; 3] = [150, 160, 175];
const BOX: [u8; 3] = [255, 220, 0];
const TEXT: [u8; 3] = [255, 255, 255];

/// Pool metadata burned into the image, in pixel and world units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarPool {
    pub label: String,
    /// Pixel box `[x0, y0, x1, y1]`, inclusive, origin top-left.
    pub box_px: [usize; 4],
    pub bbox: Rect,
    pub area: usize,
    pub centroid: [f64; 2],
    pub bleeding: bool,
    pub clot: bool,
    pub tool_adjacent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarTool {
    pub box_px: [usize; 4],
    pub tip: [f64; 2],
    pub tail: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSidecar {
    pub width: usize,
    pub height: usize,
    pub pools: Vec<SidecarPool>,
    pub tool: Option<SidecarTool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub png: Vec<u8>,
    pub rgb: Vec<u8>,
    pub sidecar: AnnotationSidecar,
}

impl AnnotatedImage {
    pub fn width(&self) -> usize {
        self.sidecar.width
    }

    pub fn height(&self) -> usize {
        self.sidecar.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width() + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Writes `<stem>.png` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        std::fs::write(dir.join(format!("{stem}.png")), &self.png)?;
        let json = serde_json::to_string_pretty(&self.sidecar).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{stem}.json")), json)
    }
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn rect(&mut self, [x0, y0, x1, y1]: [usize; 4], c: [u8; 3]) {
        for x in x0..=x1 {
            self.put(x, y0, c);
            self.put(x, y1, c);
        }
        for y in y0..=y1 {
            self.put(x0, y, c);
            self.put(x1, y, c);
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str, scale: usize, c: [u8; 3]) {
        let mut pen = x;
        for ch in s.chars() {
            let rows = glyph(ch);
            for (gy, bits) in rows.iter().enumerate() {
                for gx in 0..3 {
                    if bits & (0b100 >> gx) != 0 {
                        for sy in 0..scale {
                            for sx in 0..scale {
                                self.put(pen + gx * scale + sx, y + gy * scale + sy, c);
                            }
                        }
                    }
                }
            }
            pen += 4 * scale;
        }
    }
}

fn glyph(ch: char) -> [u8; 5] {
    match ch {
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        _ => [0; 5],
    }
}

fn segment_distance(p: DVec2, a: DVec2, b: DVec2) -> f64 {
    let ab = b - a;
    let len2 = ab.length_squared();
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.distance(a + ab * t)
}

/// Top-down view of the scene: tissue shaded by height, blood cells, clots,
/// the distractor tool, and a labeled box per pool. Up in the image is +y.
pub fn annotate_scene(
    state: &SimState,
    pools: &[PoolObservation],
    scene: &BinaryMask,
    heights: &impl HeightQuery,
    marker: Option<&ToolMarker>,
) -> Result<AnnotatedImage, PerceptionError> {
    if pools.is_empty() {
        return Err(PerceptionError::NoPools);
    }
    let (rows, cols) = (scene.rows(), scene.cols());
    let (width, height) = (cols * SCALE, rows * SCALE);
    let mut canvas = Canvas { width, height, rgb: vec![0; width * height * 3] };
    let e = scene.extent();
    let px = e.width() / width as f64;
    let py = e.height() / height as f64;
    let world = |x: usize, y: usize| DVec2::new(e.min_x + (x as f64 + 0.5) * px, e.max_y - (y as f64 + 0.5) * py);

    let mut samples = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let w = world(x, y);
            samples.push(heights.height_at(w.x, w.y));
        }
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for y in 0..height {
        for x in 0..width {
            let k = 0.7 + 0.3 * (samples[y * width + x] - lo) / span;
            canvas.put(x, y, TISSUE.map(|c| (c * k).round() as u8));
        }
    }

    for i in scene.set_indices() {
        let (r, c) = (i / cols, i % cols);
        let y0 = (rows - 1 - r) * SCALE;
        for dy in 0..SCALE {
            for dx in 0..SCALE {
                canvas.put(c * SCALE + dx, y0 + dy, BLOOD);
            }
        }
    }

    for y in 0..height {
        for x in 0..width {
            let w = world(x, y);
            if state.clots.iter().any(|k| segment_distance(w, k.a.truncate(), k.b.truncate()) <= k.radius) {
                canvas.put(x, y, CLOT);
            }
        }
    }

    let to_px = |p: DVec2| -> (usize, usize) {
        let x = (((p.x - e.min_x) / px) as isize).clamp(0, width as isize - 1) as usize;
        let y = (((e.max_y - p.y) / py) as isize).clamp(0, height as isize - 1) as usize;
        (x, y)
    };

    let tool = marker.map(|m| {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..height {
            for x in 0..width {
                if m.contains(world(x, y)) {
                    canvas.put(x, y, TOOL);
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        if x0 == usize::MAX {
            let (x, y) = to_px(DVec2::from(m.tip));
            canvas.put(x, y, TOOL);
            (x0, y0, x1, y1) = (x, y, x, y);
        }
        SidecarTool { box_px: [x0, y0, x1, y1], tip: m.tip, tail: m.tail }
    });

    let mut entries = Vec::with_capacity(pools.len());
    for pool in pools {
        let (x0, y1) = to_px(DVec2::new(pool.bbox.min_x + 0.5 * px, pool.bbox.min_y + 0.5 * py));
        let (x1, y0) = to_px(DVec2::new(pool.bbox.max_x - 0.5 * px, pool.bbox.max_y - 0.5 * py));
        let box_px = [x0, y0, x1, y1];
        canvas.rect(box_px, BOX);
        let text_h = 5 * 2;
        let ty = if y0 >= text_h + 2 { y0 - text_h - 2 } else { y1 + 2 };
        canvas.text(x0, ty, &pool.label, 2, TEXT);
        entries.push(SidecarPool {
            label: pool.label.clone(),
            box_px,
            bbox: pool.bbox,
            area: pool.area,
            centroid: pool.centroid,
            bleeding: pool.bleeding,
            clot: pool.clot,
            tool_adjacent: pool.tool_adjacent,
        });
    }

    let png = encode_png(&canvas)?;
    Ok(AnnotatedImage { png, rgb: canvas.rgb, sidecar: AnnotationSidecar { width, height, pools: entries, tool } })
}

fn encode_png(canvas: &Canvas) -> Result<Vec<u8>, PerceptionError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, canvas.width as u32, canvas.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| PerceptionError::Encode(e.to_string()))?;
        writer.write_image_data(&canvas.rgb).map_err(|e| PerceptionError::Encode(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::ToolPose;
    use crate::harness::scenario::PerceptionConfig;
    use crate::perception::detect_pools;
    use crate::tissue::{generate_surface, Extent};
    use glam::DVec3;

    fn scene() -> (SimState, BinaryMask, Vec<PoolObservation>) {
        let mut state = SimState::new(1, ToolPose { tip: DVec3::ZERO, suction: false }, 0);
        state.step_index = 0;
        let mut m = BinaryMask::unchecked(32, 32, Extent::default());
        for (r0, c0) in [(3, 3), (3, 20), (20, 3), (20, 20)] {
            for r in r0..r0 + 4 {
                for c in c0..c0 + 4 {
                    m.set(r, c, true);
                }
            }
        }
        let pools = detect_pools(&m, &state, &PerceptionConfig::default(), None);
        (state, m, pools)
    }

    #[test]
    fn four_boxes_in_sidecar() {
        let (state, m, pools) = scene();
        let s = generate_surface(2, 4, 4, Extent::default(), 0.005).unwrap();
        let img = annotate_scene(&state, &pools, &m, &s, None).unwrap();
        let labels: Vec<&str> = img.sidecar.pools.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(labels, ["P1", "P2", "P3", "P4"]);
        assert!(img.png.starts_with(&[0x89, b'P', b'N', b'G']));
        let b = img.sidecar.pools[0].box_px;
        assert_eq!(img.pixel(b[0], b[1]), BOX);
        let again = annotate_scene(&state, &pools, &m, &s, None).unwrap();
        assert_eq!(img.png, again.png);
    }

    #[test]
    fn tool_pixels_inside_footprint() {
        let (state, m, pools) = scene();
        let s = generate_surface(2, 4, 4, Extent::default(), 0.0).unwrap();
        let marker = ToolMarker { pool: 0, tip: [0.12, 0.12], tail: [0.16, 0.12], half_width: 0.003 };
        let img = annotate_scene(&state, &pools, &m, &s, Some(&marker)).unwrap();
        let t = img.sidecar.tool.as_ref().unwrap();
        let (cx, cy) = ((t.box_px[0] + t.box_px[2]) / 2, (t.box_px[1] + t.box_px[3]) / 2);
        assert_eq!(img.pixel(cx, cy), TOOL);
        // Footprint center in world space maps to the box center.
        let e = m.extent();
        let wx = e.min_x + (cx as f64 + 0.5) * e.width() / img.width() as f64;
        assert!((wx - 0.14).abs() < 0.002);
    }

    #[test]
    fn no_pools_rejected() {
        let (state, m, _) = scene();
        let s = generate_surface(2, 4, 4, Extent::default(), 0.0).unwrap();
        assert_eq!(annotate_scene(&state, &[], &m, &s, None), Err(PerceptionError::NoPools));
    }
}
