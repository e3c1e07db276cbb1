use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(x, y)` in pixel units.
pub type Point = [f64; 2];

/// Quadrilateral as top-left, top-right, bottom-right, bottom-left.
pub type Quad = [Point; 4];

/// Axis-aligned quad from a rectangle.
pub fn rect_quad(x0: f64, y0: f64, x1: f64, y1: f64) -> Quad {
    [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Bounding rectangle `(min_x, min_y, max_x, max_y)` of a quad.
pub fn quad_bounds(q: &Quad) -> (f64, f64, f64, f64) {
    let xs = q.iter().map(|p| p[0]);
    let ys = q.iter().map(|p| p[1]);
    (
        xs.clone().fold(f64::INFINITY, f64::min),
        ys.clone().fold(f64::INFINITY, f64::min),
        xs.fold(f64::NEG_INFINITY, f64::max),
        ys.fold(f64::NEG_INFINITY, f64::max),
    )
}

/// One OCR-style text line with its box and optional gold BIO tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    #[serde(rename = "box")]
    pub quad: Quad,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// 8-bit greyscale raster, 255 = white paper.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn white(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub segments: Vec<Segment>,
    pub image: GrayImage,
    /// `(width, height)` in pixels.
    pub page_size: (usize, usize),
}

impl Document {
    pub fn n(&self) -> usize {
        self.segments.len()
    }

    /// Checks the structural invariants for a maximum segment length `max_len`.
    pub fn validate(&self, max_len: usize) -> Result<()> {
        let (w, h) = self.page_size;
        if w == 0 || h == 0 {
            return Err(Error::Input(format!("{}: zero page size", self.id)));
        }
        if self.segments.is_empty() {
            return Err(Error::Input(format!("{}: no segments", self.id)));
        }
        for (i, s) in self.segments.iter().enumerate() {
            let len = s.len();
            if len == 0 {
                return Err(Error::Input(format!("{}: segment {i} is empty", self.id)));
            }
            if len > max_len {
                return Err(Error::Input(format!(
                    "{}: segment {i} has {len} chars, max is {max_len}",
                    self.id
                )));
            }
            let (x0, y0, x1, y1) = quad_bounds(&s.quad);
            if x0 < 0.0 || y0 < 0.0 || x1 > w as f64 || y1 > h as f64 {
                return Err(Error::Input(format!(
                    "{}: segment {i} box lies outside the {w}x{h} page",
                    self.id
                )));
            }
            if let Some(tags) = &s.tags {
                if tags.len() != len {
                    return Err(Error::Input(format!(
                        "{}: segment {i} has {} tags for {len} chars",
                        self.id,
                        tags.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn has_tags(&self) -> bool {
        self.segments.iter().all(|s| s.tags.is_some())
    }

    /// Segment indices sorted top-to-bottom then left-to-right, ties by index.
    pub fn reading_order(&self) -> Vec<usize> {
        reading_order(self.segments.iter().map(|s| &s.quad))
    }
}

/// Sort key: top edge, then left edge, then original position.
pub fn reading_order<'a>(quads: impl Iterator<Item = &'a Quad>) -> Vec<usize> {
    let keys: Vec<(f64, f64)> = quads.map(|q| (q[0][1].min(q[1][1]), q[0][0].min(q[3][0]))).collect();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .0
            .partial_cmp(&keys[b].0)
            .unwrap_or(Ordering::Equal)
            .then(keys[a].1.partial_cmp(&keys[b].1).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    order
}
