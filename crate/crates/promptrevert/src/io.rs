//! Embedding, image and JSONL files.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageError, ImageFormat, RgbImage};
use promptrevert_core::emb;
use promptrevert_core::types::{ImageTensor, LatentTextEmbedding};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Decode {
        path: PathBuf,
        #[source]
        source: promptrevert_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}:{line}: {message}", path.display())]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_emb(path: &Path) -> Result<LatentTextEmbedding, FileError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    emb::decode(&bytes).map_err(|source| FileError::Decode {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_emb(path: &Path, c: &LatentTextEmbedding) -> Result<(), FileError> {
    let bytes = emb::encode(c).map_err(|source| FileError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn to_rgb_image(x: &ImageTensor) -> RgbImage {
    RgbImage::from_raw(x.width() as u32, x.height() as u32, x.to_rgb8())
        .expect("buffer length matches dimensions")
}

/// PNG bytes of an image, as sent to caption services.
pub fn encode_png(x: &ImageTensor) -> Result<Vec<u8>, image::ImageError> {
    let mut out = Cursor::new(Vec::new());
    to_rgb_image(x).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Read a PNG or binary PPM; the format is sniffed from the content.
pub fn read_image(path: &Path) -> Result<ImageTensor, FileError> {
    let img = image::open(path)
        .map_err(|source| FileError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    ImageTensor::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw()).map_err(|source| {
        FileError::Decode {
            path: path.to_path_buf(),
            source,
        }
    })
}

/// Write an image; `.ppm` paths get binary PPM, anything else PNG.
pub fn write_image(path: &Path, x: &ImageTensor) -> Result<(), FileError> {
    let img = to_rgb_image(x);
    let result = match path.extension().and_then(|e| e.to_str()) {
        // the generic Pnm format writes PAM (P7), so ask for P6 explicitly
        Some("ppm") => fs::File::create(path).map_err(ImageError::IoError).and_then(|f| {
            PnmEncoder::new(std::io::BufWriter::new(f))
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        }),
        _ => img.save_with_format(path, ImageFormat::Png),
    };
    result.map_err(|source| FileError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse every non-blank line; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FileError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| FileError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| FileError::Line {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Append-only JSONL sink.
pub struct JsonlWriter {
    path: PathBuf,
    file: fs::File,
}

impl JsonlWriter {
    pub fn append(path: &Path) -> Result<Self, FileError> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<(), FileError> {
        let mut line = serde_json::to_string(value).expect("serializable");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

/// Image files under `path` (or `path` itself), sorted by name.
pub fn collect_images(path: &Path) -> Result<Vec<PathBuf>, FileError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "ppm")))
        .collect();
    out.sort();
    Ok(out)
}
