use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::font::{cell_pixel, CELL_H, CELL_W};
use crate::embedding::{quad_bounds, Document, GrayImage, Segment};

/// Stroke grey level per entity class; background text uses `other`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderStyle {
    pub intensity: BTreeMap<String, u8>,
    pub other: u8,
}

impl Default for RenderStyle {
    fn default() -> Self {
        let intensity = [("company", 0u8), ("address", 40), ("date", 80), ("total", 120)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self { intensity, other: 160 }
    }
}

impl RenderStyle {
    fn stroke(&self, seg: &Segment) -> u8 {
        let class = seg
            .tags
            .as_ref()
            .and_then(|t| t.first())
            .and_then(|t| t.split_once('-'))
            .map(|(_, c)| c);
        class.and_then(|c| self.intensity.get(c)).copied().unwrap_or(self.other)
    }
}

/// Draws every segment's text as dot-matrix glyphs stretched to fill its
/// box (nearest neighbour on pixel centres). Darker strokes win on overlap.
pub fn render(doc: &Document, style: &RenderStyle) -> GrayImage {
    let (w, h) = doc.page_size;
    let mut img = GrayImage::white(w, h);
    for seg in &doc.segments {
        let chars: Vec<char> = seg.text.chars().collect();
        if chars.is_empty() {
            continue;
        }
        let (x0, y0, x1, y1) = quad_bounds(&seg.quad);
        let (bw, bh) = (x1 - x0, y1 - y0);
        if bw <= 0.0 || bh <= 0.0 {
            continue;
        }
        let ink = style.stroke(seg);
        let cols = (chars.len() * CELL_W) as f64;
        let px_lo = x0.floor().max(0.0) as usize;
        let px_hi = (x1.ceil() as usize).min(w);
        let py_lo = y0.floor().max(0.0) as usize;
        let py_hi = (y1.ceil() as usize).min(h);
        for py in py_lo..py_hi {
            let v = (py as f64 + 0.5 - y0) / bh;
            if !(0.0..1.0).contains(&v) {
                continue;
            }
            let cy = (v * CELL_H as f64) as usize;
            for px in px_lo..px_hi {
                let u = (px as f64 + 0.5 - x0) / bw;
                if !(0.0..1.0).contains(&u) {
                    continue;
                }
                let dot = (u * cols) as usize;
                let (ci, cx) = (dot / CELL_W, dot % CELL_W);
                if cell_pixel(chars[ci], cx, cy) && img.get(px, py) > ink {
                    img.set(px, py, ink);
                }
            }
        }
    }
    img
}
