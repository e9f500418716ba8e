//! Key-frame selection and the horizontal composite strip used by the
//! single-request strategies.

use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::{DynamicImage, GenericImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SegmentRecord;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("segment has no frames")]
    EmptySegment,
    #[error("missing frame {path}")]
    MissingFrame { path: PathBuf },
    #[error("cannot decode image {path}: {reason}")]
    UndecodableImage { path: PathBuf, reason: String },
    #[error("cannot encode composite: {0}")]
    Encode(String),
}

/// Temporal position of a key frame inside its segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionRole {
    First,
    Q1,
    Middle,
    Q3,
    Last,
}

impl PositionRole {
    pub const ALL: [PositionRole; 5] = [
        PositionRole::First,
        PositionRole::Q1,
        PositionRole::Middle,
        PositionRole::Q3,
        PositionRole::Last,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PositionRole::First => "first",
            PositionRole::Q1 => "q1",
            PositionRole::Middle => "middle",
            PositionRole::Q3 => "q3",
            PositionRole::Last => "last",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PositionRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// Returns the first, first-quartile, middle, third-quartile and last frame
/// positions, `floor(k * (n - 1) / 4)` for `k = 0..=4`. Short clips produce
/// duplicate indices.
pub fn key_frame_indices(n_frames: usize) -> Result<[usize; 5], SamplingError> {
    if n_frames == 0 {
        return Err(SamplingError::EmptySegment);
    }
    let span = n_frames - 1;
    Ok([0, 1, 2, 3, 4].map(|k| k * span / 4))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSample {
    pub segment_id: String,
    pub role: PositionRole,
    pub frame_index: usize,
    pub path: PathBuf,
    #[serde(skip)]
    pub image_bytes: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

impl FrameSample {
    pub fn decode(&self) -> Result<DynamicImage, SamplingError> {
        decode_bytes(&self.image_bytes, &self.path)
    }
}

const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "webp"];

/// Lists the image files of a frame directory in lexicographic filename order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, SamplingError> {
    let entries = std::fs::read_dir(dir).map_err(|_| SamplingError::MissingFrame {
        path: dir.to_path_buf(),
    })?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

pub fn select_frames(segment: &SegmentRecord) -> Result<[FrameSample; 5], SamplingError> {
    let frames = list_frames(&segment.frames_dir)?;
    let indices = key_frame_indices(frames.len())?;

    let mut samples = Vec::with_capacity(5);
    for (role, &index) in PositionRole::ALL.iter().zip(indices.iter()) {
        let reused = samples.iter().find(|s: &&FrameSample| s.frame_index == index).cloned();
        let sample = match reused {
            Some(prev) => FrameSample { role: *role, ..prev },
            None => load_sample(&segment.segment_id, *role, index, &frames[index])?,
        };
        samples.push(sample);
    }
    Ok(samples.try_into().expect("five roles"))
}

fn load_sample(
    segment_id: &str,
    role: PositionRole,
    frame_index: usize,
    path: &Path,
) -> Result<FrameSample, SamplingError> {
    let bytes = std::fs::read(path).map_err(|_| SamplingError::MissingFrame {
        path: path.to_path_buf(),
    })?;
    let img = decode_bytes(&bytes, path)?;
    Ok(FrameSample {
        segment_id: segment_id.to_string(),
        role,
        frame_index,
        path: path.to_path_buf(),
        width: img.width(),
        height: img.height(),
        image_bytes: bytes,
    })
}

fn decode_bytes(bytes: &[u8], path: &Path) -> Result<DynamicImage, SamplingError> {
    image::load_from_memory(bytes).map_err(|e| SamplingError::UndecodableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeFormat {
    Jpeg,
    Png,
}

impl CompositeFormat {
    pub fn mime(self) -> &'static str {
        match self {
            CompositeFormat::Jpeg => "image/jpeg",
            CompositeFormat::Png => "image/png",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CompositeFormat::Jpeg => "jpeg",
            CompositeFormat::Png => "png",
        }
    }
}

impl FromStr for CompositeFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jpeg" | "jpg" => Ok(CompositeFormat::Jpeg),
            "png" => Ok(CompositeFormat::Png),
            other => Err(format!("unsupported composite format {other:?}")),
        }
    }
}

/// Encoding parameters of the composite strip. They take part in the
/// annotation cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompositeEncoding {
    pub format: CompositeFormat,
    /// JPEG quality, 1..=100. Ignored for PNG.
    pub quality: u8,
}

impl Default for CompositeEncoding {
    fn default() -> Self {
        Self {
            format: CompositeFormat::Jpeg,
            quality: 90,
        }
    }
}

impl CompositeEncoding {
    pub fn cache_tag(&self) -> String {
        match self.format {
            CompositeFormat::Jpeg => format!("jpeg:q{}", self.quality),
            CompositeFormat::Png => "png".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeImage {
    pub image_bytes: Vec<u8>,
    pub source_roles: [PositionRole; 5],
    pub width: u32,
    pub height: u32,
    pub encoding: CompositeEncoding,
}

/// Concatenates the five frames left to right in temporal order. Every frame
/// is scaled, aspect preserved, to the smallest source height; no padding is
/// inserted between frames.
pub fn build_composite(
    frames: &[FrameSample; 5],
    encoding: CompositeEncoding,
) -> Result<CompositeImage, SamplingError> {
    let decoded = frames
        .iter()
        .map(|f| f.decode().map(|img| img.to_rgb8()))
        .collect::<Result<Vec<_>, _>>()?;
    let strip = concat_horizontal(&decoded);
    let (width, height) = strip.dimensions();

    let mut out = Cursor::new(Vec::new());
    match encoding.format {
        CompositeFormat::Jpeg => {
            let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, encoding.quality.clamp(1, 100));
            strip.write_with_encoder(encoder)
        }
        CompositeFormat::Png => strip.write_to(&mut out, ImageFormat::Png),
    }
    .map_err(|e| SamplingError::Encode(e.to_string()))?;

    Ok(CompositeImage {
        image_bytes: out.into_inner(),
        source_roles: PositionRole::ALL,
        width,
        height,
        encoding,
    })
}

pub(crate) fn scaled_width(width: u32, height: u32, target_height: u32) -> u32 {
    let w = (width as f64 * target_height as f64 / height as f64).round() as u32;
    w.max(1)
}

fn concat_horizontal(frames: &[RgbImage]) -> RgbImage {
    let target_height = frames.iter().map(|f| f.height()).min().unwrap_or(1);
    let scaled: Vec<RgbImage> = frames
        .iter()
        .map(|f| {
            if f.height() == target_height {
                f.clone()
            } else {
                let w = scaled_width(f.width(), f.height(), target_height);
                image::imageops::resize(f, w, target_height, FilterType::Triangle)
            }
        })
        .collect();
    let total_width = scaled.iter().map(|f| f.width()).sum();
    let mut strip = RgbImage::new(total_width, target_height);
    let mut x = 0;
    for f in &scaled {
        strip.copy_from(f, x, 0).expect("strip sized to fit");
        x += f.width();
    }
    strip
}

/// Guesses the MIME type of encoded image bytes, defaulting to PNG.
pub fn sniff_mime(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(ImageFormat::Jpeg) => "image/jpeg",
        Ok(ImageFormat::WebP) => "image/webp",
        Ok(ImageFormat::Bmp) => "image/bmp",
        Ok(ImageFormat::Gif) => "image/gif",
        _ => "image/png",
    }
}
