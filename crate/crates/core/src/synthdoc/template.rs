use rand::seq::SliceRandom;
use rand::Rng as _;

use super::font::{CELL_H, CELL_W};
use crate::crfdecode::TagSet;
use crate::embedding::{quad_bounds, rect_quad, Document, GrayImage, Segment};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Classes whose corpus is numeric and can therefore share a text.
pub const NUMERIC_CLASSES: [&str; 2] = ["date", "total"];

/// Text corpus of a slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Company,
    /// Two lines: street, then postcode and city.
    Address,
    Date,
    Amount,
    Phone,
    Item,
    Code,
    /// Letters-only reference, e.g. `REF QXB`.
    Reference,
    Fixed(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Align {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    /// Maximum offset in pixels along each axis.
    pub pos: f64,
    /// Maximum relative change of the glyph scale.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slot {
    /// Entity class, `None` for background text.
    pub class: Option<&'static str>,
    /// `[x0, y0, x1, y1]` as page fractions. Text is anchored at the top
    /// edge and at `x0` (left aligned) or `x1` (right aligned).
    pub region: [f64; 4],
    pub generator: Generator,
    pub align: Align,
    /// Pixels per glyph dot.
    pub scale: f64,
    pub jitter: Jitter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutTemplate {
    pub id: &'static str,
    pub slots: Vec<Slot>,
    /// Slots whose rows are randomly permuted among themselves.
    pub shuffled_rows: Vec<usize>,
}

/// Vertical distance between the lines of a multi-line slot, in glyph dots.
const LINE_PITCH: f64 = 12.0;
const MAX_PLACEMENT_TRIES: usize = 10;
const MAX_DOCUMENT_TRIES: usize = 50;

const ADJECTIVES: [&str; 10] = [
    "GOLDEN",
    "SUNRISE",
    "ROYAL",
    "EVERGREEN",
    "PACIFIC",
    "UNITED",
    "BRIGHT",
    "SILVER",
    "GREEN",
    "STAR",
];
const NOUNS: [&str; 10] = [
    "MART", "TRADING", "BAKERY", "HARDWARE", "PHARMACY", "BOOKS", "MOTORS", "TEXTILE", "FOODS", "ELECTRIC",
];
const SUFFIXES: [&str; 5] = ["SDN BHD", "CO", "LTD", "ENTERPRISE", "& SONS"];
const STREETS: [&str; 8] = ["MAWAR", "MELATI", "RAJA", "BUNGA", "KENARI", "AMPANG", "PUDU", "IPOH"];
const CITIES: [&str; 8] = [
    "PETALING JAYA",
    "KUALA LUMPUR",
    "SHAH ALAM",
    "KLANG",
    "IPOH",
    "SUBANG JAYA",
    "KAJANG",
    "PUCHONG",
];
const ITEMS: [&str; 10] = [
    "COFFEE", "TEA", "BREAD", "RICE", "NOODLE", "SOAP", "PEN", "PAPER", "MILK", "SUGAR",
];
const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";

fn pick<'a>(rng: &mut Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty corpus")
}

fn digits(rng: &mut Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
}

/// Numeric string that fits both numeric classes.
pub fn shared_numeric_text(rng: &mut Rng) -> String {
    let n = rng.gen_range(2..=4);
    digits(rng, n)
}

impl Generator {
    /// One text per line.
    pub fn sample(self, rng: &mut Rng) -> Vec<String> {
        let line = match self {
            Generator::Company => {
                let mut s = format!("{} {}", pick(rng, &ADJECTIVES), pick(rng, &NOUNS));
                let suffix = pick(rng, &SUFFIXES);
                if s.len() + 1 + suffix.len() <= 24 {
                    s = format!("{s} {suffix}");
                }
                s
            }
            Generator::Address => {
                let street = format!(
                    "NO {} JALAN {} {}",
                    rng.gen_range(1..100),
                    pick(rng, &STREETS),
                    rng.gen_range(1..10)
                );
                let city = format!("{} {}", digits(rng, 5), pick(rng, &CITIES));
                return vec![street, city];
            }
            Generator::Date => {
                let (d, m, y) = (rng.gen_range(1..=28), rng.gen_range(1..=12), rng.gen_range(2015..=2020));
                match rng.gen_range(0..3) {
                    0 => format!("{d:02}/{m:02}/{y}"),
                    1 => format!("{d:02}-{m:02}-{y}"),
                    _ => format!("{y}-{m:02}-{d:02}"),
                }
            }
            Generator::Amount => {
                let v = format!("{}.{:02}", rng.gen_range(1..1000), rng.gen_range(0..100));
                if rng.gen_bool(0.5) {
                    format!("RM{v}")
                } else {
                    v
                }
            }
            Generator::Phone => format!("TEL: 03-{} {}", digits(rng, 4), digits(rng, 4)),
            Generator::Item => format!(
                "{} X{}  {}.{:02}",
                pick(rng, &ITEMS),
                rng.gen_range(1..6),
                rng.gen_range(1..50),
                rng.gen_range(0..100)
            ),
            Generator::Code => format!("INV NO: {}", digits(rng, 5)),
            Generator::Reference => {
                let code: String = (0..3)
                    .map(|_| char::from(*LETTERS.choose(rng).expect("letters")))
                    .collect();
                format!("REF {code}")
            }
            Generator::Fixed(s) => s.to_string(),
        };
        vec![line]
    }
}

fn bio_tags(class: Option<&str>, len: usize, first_line: bool) -> Vec<String> {
    match class {
        None => vec!["O".to_string(); len],
        Some(c) => (0..len)
            .map(|j| {
                if j == 0 && first_line {
                    format!("B-{c}")
                } else {
                    format!("I-{c}")
                }
            })
            .collect(),
    }
}

/// Box of `len` glyph cells at scale `s`, anchored at `(x, y)`.
fn text_box(x: f64, y: f64, len: usize, s: f64, align: Align) -> [f64; 4] {
    let w = len as f64 * CELL_W as f64 * s;
    let h = CELL_H as f64 * s;
    match align {
        Align::Left => [x, y, x + w, y + h],
        Align::Right => [x - w, y, x, y + h],
    }
}

fn inside(b: &[f64; 4], page: (usize, usize)) -> bool {
    b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= page.0 as f64 && b[3] <= page.1 as f64
}

/// Moves a group of boxes by the smallest shift that brings them on page.
fn clamp_group(boxes: &mut [[f64; 4]], page: (usize, usize)) {
    let min_x = boxes.iter().map(|b| b[0]).fold(f64::INFINITY, f64::min);
    let min_y = boxes.iter().map(|b| b[1]).fold(f64::INFINITY, f64::min);
    let max_x = boxes.iter().map(|b| b[2]).fold(f64::NEG_INFINITY, f64::max);
    let max_y = boxes.iter().map(|b| b[3]).fold(f64::NEG_INFINITY, f64::max);
    let dx = if min_x < 0.0 {
        -min_x
    } else {
        (page.0 as f64 - max_x).min(0.0)
    };
    let dy = if min_y < 0.0 {
        -min_y
    } else {
        (page.1 as f64 - max_y).min(0.0)
    };
    for b in boxes {
        b[0] += dx;
        b[2] += dx;
        b[1] += dy;
        b[3] += dy;
    }
}

fn place(
    slot: &Slot,
    y_frac: f64,
    lines: &[String],
    rng: &mut Rng,
    page: (usize, usize),
    jitter: f64,
) -> Vec<[f64; 4]> {
    let (pw, ph) = (page.0 as f64, page.1 as f64);
    let anchor_x = match slot.align {
        Align::Left => slot.region[0] * pw,
        Align::Right => slot.region[2] * pw,
    };
    let anchor_y = y_frac * ph;
    let layout = |dx: f64, dy: f64, s: f64| -> Vec<[f64; 4]> {
        lines
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let y = anchor_y + dy + i as f64 * LINE_PITCH * s;
                text_box(anchor_x + dx, y, t.chars().count(), s, slot.align)
            })
            .collect()
    };
    let (jp, js) = (slot.jitter.pos * jitter, slot.jitter.scale * jitter);
    let mut boxes = Vec::new();
    for _ in 0..MAX_PLACEMENT_TRIES {
        let dx = if jp > 0.0 { rng.gen_range(-jp..=jp) } else { 0.0 };
        let dy = if jp > 0.0 { rng.gen_range(-jp..=jp) } else { 0.0 };
        let s = slot.scale
            * if js > 0.0 {
                rng.gen_range(1.0 - js..=1.0 + js)
            } else {
                1.0
            };
        boxes = layout(dx, dy, s);
        if boxes.iter().all(|b| inside(b, page)) {
            return boxes;
        }
    }
    clamp_group(&mut boxes, page);
    boxes
}

/// Samples one document from `template`. Slot classes missing from `tags`
/// are labelled `O`. The image is left blank; see [`super::render`].
pub fn gen_document(
    template: &LayoutTemplate,
    rng: &mut Rng,
    page: (usize, usize),
    tags: &TagSet,
    jitter: f64,
    id: &str,
) -> Result<Document> {
    for _ in 0..MAX_DOCUMENT_TRIES {
        let mut rows: Vec<f64> = template.slots.iter().map(|s| s.region[1]).collect();
        let mut shuffled: Vec<f64> = template.shuffled_rows.iter().map(|&i| rows[i]).collect();
        shuffled.shuffle(rng);
        for (&i, y) in template.shuffled_rows.iter().zip(shuffled) {
            rows[i] = y;
        }
        let mut segments = Vec::new();
        for (slot, &y) in template.slots.iter().zip(&rows) {
            let lines = slot.generator.sample(rng);
            let boxes = place(slot, y, &lines, rng, page, jitter);
            let class = slot.class.filter(|c| tags.classes().iter().any(|k| k == c));
            for (i, (text, b)) in lines.iter().zip(boxes).enumerate() {
                segments.push(Segment {
                    text: text.clone(),
                    quad: rect_quad(b[0], b[1], b[2], b[3]),
                    tags: Some(bio_tags(class, text.chars().count(), i == 0)),
                });
            }
        }
        let doc = Document {
            id: id.to_string(),
            segments,
            image: GrayImage::white(page.0, page.1),
            page_size: page,
        };
        if is_bio_legal(&doc, tags)? {
            return Ok(doc);
        }
    }
    Err(Error::Input(format!(
        "template `{}` keeps producing multi-line entities that are split in reading order",
        template.id
    )))
}

/// Whether the gold tags, read in document reading order, are BIO-legal.
pub fn is_bio_legal(doc: &Document, tags: &TagSet) -> Result<bool> {
    let mut seq = Vec::new();
    for i in doc.reading_order() {
        let t = doc.segments[i]
            .tags
            .as_ref()
            .ok_or_else(|| Error::Input("untagged segment".into()))?;
        seq.extend(tags.encode(t)?);
    }
    Ok(tags.is_bio_legal(&seq))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmbiguityOutcome {
    Injected,
    NotDrawn,
    Ineligible,
}

fn segment_class(seg: &Segment) -> Option<String> {
    let first = seg.tags.as_ref()?.first()?;
    first.split_once('-').map(|(_, c)| c.to_string())
}

/// With probability `rate`, gives two single-segment entities of distinct
/// numeric classes the same random numeric text. Labels stay with the
/// positions.
pub fn inject_ambiguity(doc: &Document, rng: &mut Rng, rate: f64) -> (Document, AmbiguityOutcome) {
    let mut per_class: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, s) in doc.segments.iter().enumerate() {
        if let Some(c) = segment_class(s) {
            match per_class.iter_mut().find(|(k, _)| *k == c) {
                Some((_, v)) => v.push(i),
                None => per_class.push((c, vec![i])),
            }
        }
    }
    let eligible: Vec<usize> = per_class
        .iter()
        .filter(|(c, v)| v.len() == 1 && NUMERIC_CLASSES.contains(&c.as_str()))
        .map(|(_, v)| v[0])
        .collect();
    if eligible.len() < 2 {
        return (doc.clone(), AmbiguityOutcome::Ineligible);
    }
    if !rng.gen_bool(rate.clamp(0.0, 1.0)) {
        return (doc.clone(), AmbiguityOutcome::NotDrawn);
    }
    let text = shared_numeric_text(rng);
    let mut out = doc.clone();
    for &i in &eligible[..2] {
        let seg = &mut out.segments[i];
        let class = segment_class(seg);
        let (x0, y0, x1, y1) = quad_bounds(&seg.quad);
        let old_len = seg.len() as f64;
        let cell = (x1 - x0) / old_len;
        let mut b = [[x0, y0, x0 + cell * text.len() as f64, y1]];
        clamp_group(&mut b, doc.page_size);
        seg.quad = rect_quad(b[0][0], b[0][1], b[0][2], b[0][3]);
        seg.text = text.clone();
        seg.tags = Some(bio_tags(class.as_deref(), text.len(), true));
    }
    (out, AmbiguityOutcome::Injected)
}

fn slot(class: Option<&'static str>, x: f64, y: f64, generator: Generator) -> Slot {
    Slot {
        class,
        region: [x, y, 0.98, y + 0.05],
        generator,
        align: Align::Left,
        scale: 1.0,
        jitter: Jitter { pos: 2.0, scale: 0.1 },
    }
}

fn right(class: Option<&'static str>, x1: f64, y: f64, generator: Generator) -> Slot {
    Slot {
        region: [0.5, y, x1, y + 0.05],
        align: Align::Right,
        ..slot(class, 0.5, y, generator)
    }
}

fn big(mut s: Slot) -> Slot {
    s.scale = 1.25;
    s
}

/// Built-in layouts, looked up by id.
pub fn builtin_templates() -> Vec<LayoutTemplate> {
    use Generator::*;
    let (company, address, date, total) = (Some("company"), Some("address"), Some("date"), Some("total"));
    vec![
        LayoutTemplate {
            id: "receipt",
            slots: vec![
                big(slot(company, 0.18, 0.04, Company)),
                slot(address, 0.18, 0.13, Address),
                slot(None, 0.18, 0.24, Phone),
                slot(None, 0.05, 0.32, Fixed("DATE:")),
                slot(date, 0.20, 0.32, Date),
                slot(None, 0.05, 0.42, Item),
                slot(None, 0.05, 0.49, Item),
                slot(None, 0.05, 0.56, Item),
                slot(None, 0.05, 0.66, Fixed("TOTAL")),
                right(total, 0.95, 0.66, Amount),
                slot(None, 0.05, 0.73, Fixed("CASH")),
                right(None, 0.95, 0.73, Amount),
                slot(None, 0.30, 0.86, Fixed("THANK YOU")),
            ],
            shuffled_rows: vec![],
        },
        LayoutTemplate {
            id: "invoice",
            slots: vec![
                slot(company, 0.04, 0.05, Company),
                slot(address, 0.04, 0.14, Address),
                slot(None, 0.55, 0.25, Fixed("DATE")),
                slot(date, 0.55, 0.31, Date),
                slot(None, 0.04, 0.25, Code),
                slot(None, 0.04, 0.42, Item),
                slot(None, 0.04, 0.50, Item),
                slot(None, 0.04, 0.70, Fixed("AMOUNT DUE")),
                right(total, 0.95, 0.70, Amount),
                slot(None, 0.04, 0.88, Phone),
            ],
            shuffled_rows: vec![],
        },
        LayoutTemplate {
            id: "ticket",
            slots: vec![
                slot(date, 0.05, 0.05, Date),
                slot(None, 0.55, 0.05, Code),
                big(slot(company, 0.20, 0.20, Company)),
                slot(None, 0.05, 0.40, Fixed("ADULT")),
                right(total, 0.95, 0.40, Amount),
                slot(None, 0.05, 0.55, Fixed("SEAT 12A")),
                slot(address, 0.05, 0.74, Address),
            ],
            shuffled_rows: vec![],
        },
        LayoutTemplate {
            id: "license",
            slots: vec![
                slot(None, 0.04, 0.10, Fixed("NAME:")),
                slot(company, 0.25, 0.10, Company),
                slot(None, 0.04, 0.22, Fixed("ADDR:")),
                slot(address, 0.25, 0.22, Address),
                slot(None, 0.04, 0.40, Fixed("ISSUED:")),
                slot(date, 0.30, 0.40, Date),
                slot(None, 0.04, 0.52, Fixed("CAPITAL:")),
                slot(total, 0.35, 0.52, Amount),
                slot(None, 0.04, 0.85, Reference),
            ],
            shuffled_rows: vec![],
        },
        // Date always in the left column, total always in the right one;
        // their rows (and the filler rows) are shuffled, so only position
        // tells the two apart once they share a text.
        LayoutTemplate {
            id: "columns",
            slots: vec![
                slot(company, 0.05, 0.05, Company),
                slot(address, 0.05, 0.14, Address),
                slot(date, 0.08, 0.36, Date),
                slot(total, 0.60, 0.46, Amount),
                slot(None, 0.08, 0.56, Reference),
                slot(None, 0.60, 0.66, Reference),
            ],
            shuffled_rows: vec![2, 3, 4, 5],
        },
    ]
}

pub fn template(id: &str) -> Option<LayoutTemplate> {
    builtin_templates().into_iter().find(|t| t.id == id)
}
