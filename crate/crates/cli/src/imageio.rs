//! 8-bit image codecs: binary PGM/PPM and PNG, values mapped to `[0, 1]` by `v / 255`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageReader};
use segres_core::{ImageField, LabelMap, ObservationMask};

/// Colors for the label palette preview; cycled when K exceeds the table.
const LABEL_PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [188, 189, 34],
];

enum Container {
    Pnm,
    Png,
}

fn container(path: &Path) -> Result<Container> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm" | "ppm" | "pnm") => Ok(Container::Pnm),
        Some("png") => Ok(Container::Png),
        _ => bail!("{}: unknown image extension, expected .pgm, .ppm or .png", path.display()),
    }
}

/// Decoded 8-bit samples, interleaved.
struct Raw {
    width: usize,
    height: usize,
    channels: usize,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Raw> {
    let img = ImageReader::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?
        .with_guessed_format()
        .with_context(|| format!("cannot read {}", path.display()))?
        .decode()
        .with_context(|| format!("cannot decode {}", path.display()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img.color() {
        ColorType::L8 => (1, img.into_luma8().into_raw()),
        ColorType::La8 => {
            log::warn!("{}: alpha channel ignored", path.display());
            (1, img.into_luma8().into_raw())
        }
        ColorType::Rgb8 => (3, img.into_rgb8().into_raw()),
        ColorType::Rgba8 => {
            log::warn!("{}: alpha channel ignored", path.display());
            (3, img.into_rgb8().into_raw())
        }
        other => bail!("{}: unsupported pixel format {other:?}, only 8-bit gray or RGB", path.display()),
    };
    Ok(Raw { width, height, channels, bytes })
}

fn encode(path: &Path, width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<()> {
    let color = match channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        n => bail!("cannot store a {n}-channel image, only gray or RGB"),
    };
    let kind = container(path)?;
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let out = BufWriter::new(file);
    let (w, h) = (width as u32, height as u32);
    match kind {
        Container::Pnm => {
            let subtype = if channels == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(out).with_subtype(subtype).write_image(bytes, w, h, color)
        }
        Container::Png => PngEncoder::new(out).write_image(bytes, w, h, color),
    }
    .with_context(|| format!("cannot write {}", path.display()))
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_image(path: &Path) -> Result<ImageField> {
    let raw = decode(path)?;
    let n = raw.width * raw.height;
    let mut data = vec![0.0; n * raw.channels];
    for (i, &b) in raw.bytes.iter().enumerate() {
        data[(i % raw.channels) * n + i / raw.channels] = f64::from(b) / 255.0;
    }
    Ok(ImageField::new(raw.width, raw.height, raw.channels, data)?)
}

pub fn write_image(path: &Path, img: &ImageField) -> Result<()> {
    let (n, nc) = (img.pixels(), img.channels());
    let bytes: Vec<u8> = (0..n * nc).map(|i| to_byte(img.data()[(i % nc) * n + i / nc])).collect();
    encode(path, img.width(), img.height(), nc, &bytes)
}

/// Masks are gray images with 0 for missing and 255 for observed pixels.
pub fn read_mask(path: &Path) -> Result<ObservationMask> {
    let raw = decode(path)?;
    if raw.channels != 1 {
        bail!("{}: mask must be a gray image", path.display());
    }
    let observed = raw
        .bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            255 => Ok(true),
            v => bail!("{}: mask pixel {i} is {v}, expected 0 or 255", path.display()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservationMask::from_bools(raw.width, raw.height, &observed)?)
}

pub fn write_mask(path: &Path, omega: &ObservationMask) -> Result<()> {
    let bytes: Vec<u8> = (0..omega.data().len()).map(|p| if omega.is_observed(p) { 255 } else { 0 }).collect();
    encode(path, omega.width(), omega.height(), 1, &bytes)
}

/// Label maps hold raw label values; the phase count is the largest label plus one.
pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let raw = decode(path)?;
    if raw.channels != 1 {
        bail!("{}: label map must be a gray image", path.display());
    }
    let labels: Vec<usize> = raw.bytes.iter().map(|&b| usize::from(b)).collect();
    let phases = labels.iter().max().map_or(1, |m| m + 1).max(2);
    Ok(LabelMap::new(raw.width, raw.height, phases, labels)?)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    if labels.phases() > 256 {
        bail!("{} phases do not fit an 8-bit label map", labels.phases());
    }
    let bytes: Vec<u8> = labels.labels().iter().map(|&l| l as u8).collect();
    encode(path, labels.width(), labels.height(), 1, &bytes)
}

/// Labels painted with a fixed categorical palette.
pub fn write_label_palette(path: &Path, labels: &LabelMap) -> Result<()> {
    let bytes: Vec<u8> = labels.labels().iter().flat_map(|&l| LABEL_PALETTE[l % LABEL_PALETTE.len()]).collect();
    encode(path, labels.width(), labels.height(), 3, &bytes)
}
