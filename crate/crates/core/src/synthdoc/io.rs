use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Manifest};
use crate::embedding::{Document, GrayImage, Segment};
use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGE_DIR: &str = "images";

/// One line of `annotations.jsonl`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    segments: Vec<Segment>,
    image: String,
}

pub fn write_pgm(img: &GrayImage, mut w: impl Write) -> io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.pixels)
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Reads a binary 8-bit PGM. Comments in the header are skipped.
pub fn read_pgm(mut r: impl Read) -> io::Result<GrayImage> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> io::Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(invalid("not a binary PGM (P5)"));
    }
    let mut num = || -> io::Result<usize> { token()?.parse().map_err(|_| invalid("bad PGM header number")) };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(invalid(format!("unsupported PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let n = width * height;
    if bytes.len() < start + n {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("PGM raster has {} of {n} bytes", bytes.len().saturating_sub(start)),
        ));
    }
    if bytes.len() > start + n {
        return Err(invalid("trailing bytes after PGM raster"));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: bytes[start..].to_vec(),
    })
}

pub fn image_name(index: usize) -> String {
    format!("{IMAGE_DIR}/{index:05}.pgm")
}

/// Writes `manifest.json`, `annotations.jsonl` and one PGM per document.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(IMAGE_DIR)).at(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&dataset.manifest)?;
    json.push('\n');
    fs::write(&manifest_path, json).at(&manifest_path)?;

    let ann_path = dir.join(ANNOTATIONS_FILE);
    let mut ann = BufWriter::new(File::create(&ann_path).at(&ann_path)?);
    for (i, doc) in dataset.docs.iter().enumerate() {
        let image = image_name(i);
        let record = Record {
            id: doc.id.clone(),
            segments: doc.segments.clone(),
            image: image.clone(),
        };
        serde_json::to_writer(&mut ann, &record)?;
        ann.write_all(b"\n").at(&ann_path)?;
        let img_path = dir.join(&image);
        let mut f = BufWriter::new(File::create(&img_path).at(&img_path)?);
        write_pgm(&doc.image, &mut f).at(&img_path)?;
        f.flush().at(&img_path)?;
    }
    ann.flush().at(&ann_path)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let reader = BufReader::new(File::open(&ann_path).at(&ann_path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.at(&ann_path)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: ann_path.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let img_path = dir.join(&record.image);
        let image = read_pgm(File::open(&img_path).at(&img_path)?).at(&img_path)?;
        docs.push(Document {
            id: record.id,
            segments: record.segments,
            page_size: (image.width, image.height),
            image,
        });
    }
    Ok(Dataset { manifest, docs })
}

/// SHA-256 over the manifest, the annotations and every image, in order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut feed = |rel: &str| -> Result<()> {
        let path = dir.join(rel);
        let bytes = fs::read(&path).at(&path)?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        Ok(())
    };
    feed(MANIFEST_FILE)?;
    feed(ANNOTATIONS_FILE)?;
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let text = fs::read_to_string(&ann_path).at(&ann_path)?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: ann_path.clone(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        feed(&record.image)?;
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
