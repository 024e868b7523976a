//! Binary portable pixmaps (P6) and graymaps (P5) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

/// An image with values normalized to `[0, 1]`, row-major, channels
/// interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!("images have 1 or 3 channels, not {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image given {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: &[f64]) -> Result<Self> {
        let data = color.iter().copied().cycle().take(width * height * color.len()).collect();
        Self::new(width, height, color.len(), data)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Encodes as P6 (3 channels) or P5 (1 channel).
    pub fn to_pnm_bytes(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        out
    }

    pub fn from_pnm_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, offset) = parse_header(bytes)?;
        let channels = if header.magic == b'6' { 3 } else { 1 };
        let needed = header.width * header.height * channels;
        let payload = &bytes[offset..];
        if payload.len() < needed {
            return Err(Error::Pixmap(format!(
                "payload truncated: {} of {needed} bytes",
                payload.len()
            )));
        }
        let data = payload[..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(header.width, header.height, channels, data)
    }
}

pub(crate) struct Header {
    pub magic: u8,
    pub width: usize,
    pub height: usize,
}

/// Parses a binary P5/P6 header and returns it with the payload offset.
pub(crate) fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(Error::Pixmap("expected magic P5 or P6".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::Pixmap("header ended early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pixmap(format!("header field {n} is not a number")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::Pixmap(format!("header field {n} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Pixmap("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Pixmap(format!("unsupported maxval {maxval}, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Pixmap("zero-sized image".into()));
    }
    if width.checked_mul(height).and_then(|p| p.checked_mul(3)).is_none() {
        return Err(Error::Pixmap("image dimensions overflow".into()));
    }
    Ok((
        Header {
            magic: bytes[1],
            width,
            height,
        },
        pos,
    ))
}

pub fn load_pixmap(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Image::from_pnm_bytes(&bytes)
}

pub fn save_pixmap(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), &image.to_pnm_bytes())
}
