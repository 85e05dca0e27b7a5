//! Grayscale image container, binary PGM (P5) I/O, bilinear resizing and
//! cropping. Every other module consumes [`GrayImage`]: a row-major raster
//! of intensities normalized to `[0, 1]` right after decode.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad magic: expected \"P5\", found {found:?}")]
    BadMagic { found: String },
    #[error("missing or malformed header field: {field}")]
    BadHeaderField { field: &'static str },
    #[error("maxval {value} out of range [1, 255]")]
    BadMaxval { value: u32 },
    #[error("truncated payload: header claims {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("pixel buffer length {len} does not match {width}x{height}")]
    LengthMismatch {
        len: usize,
        width: usize,
        height: usize,
    },
    #[error("intensity {value} at index {index} outside [0, 1]")]
    IntensityOutOfRange { value: f32, index: usize },
    #[error("channel dimensions differ: {0}x{1} vs {2}x{3}")]
    ChannelMismatch(usize, usize, usize, usize),
    #[error("crop box ({x},{y}) {w}x{h} exceeds image bounds {width}x{height}")]
    CropOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
}

/// Single-channel raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    /// Builds an image from a row-major buffer, validating the length and
    /// the `[0, 1]` intensity invariant.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(ImageError::LengthMismatch {
                len: data.len(),
                width,
                height,
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ImageError::IntensityOutOfRange { value, index });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// All-zero image of the given dimensions.
    pub fn zeros(width: usize, height: usize) -> Result<Self, ImageError> {
        Self::from_vec(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    /// One full row of pixels.
    #[inline]
    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

/// Rectangular region, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// True when the box lies fully inside an image of the given size.
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}

/// Decodes a binary portable graymap (magic `P5`, maxval up to 255).
///
/// `#` comments are allowed anywhere in the header. Pixel value `p` maps
/// to `p / maxval`. Bytes past the payload are ignored.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(ImageError::BadMagic { found });
    }
    let mut pos = 2;
    let width = read_header_number(bytes, &mut pos, "width")?;
    let height = read_header_number(bytes, &mut pos, "height")?;
    let maxval = read_header_number(bytes, &mut pos, "maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(ImageError::BadMaxval { value: maxval });
    }
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage {
            width: width as usize,
            height: height as usize,
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width as usize * height as usize;
    if pos + expected > bytes.len() {
        return Err(ImageError::TruncatedPayload {
            expected,
            found: bytes.len().saturating_sub(pos),
        });
    }
    let scale = 1.0 / maxval as f32;
    let data = bytes[pos..pos + expected]
        .iter()
        .map(|&p| (p as f32 * scale).min(1.0))
        .collect();
    GrayImage::from_vec(width as usize, height as usize, data)
}

/// Encodes as binary PGM with maxval 255; intensities are rounded to the
/// nearest 8-bit level. `decode_pgm(encode_pgm(img))` is the identity on
/// images already quantized to maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

fn read_header_number(
    bytes: &[u8],
    pos: &mut usize,
    field: &'static str,
) -> Result<u32, ImageError> {
    // Skip whitespace and '#' comments running to end of line.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(ImageError::BadHeaderField { field });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(ImageError::BadHeaderField { field })
}

/// Luminance reduction of three equal-size channels: `0.299 r + 0.587 g + 0.114 b`.
pub fn rgb_to_gray(r: &GrayImage, g: &GrayImage, b: &GrayImage) -> Result<GrayImage, ImageError> {
    for ch in [g, b] {
        if ch.width() != r.width() || ch.height() != r.height() {
            return Err(ImageError::ChannelMismatch(
                r.width(),
                r.height(),
                ch.width(),
                ch.height(),
            ));
        }
    }
    let data = r
        .data()
        .iter()
        .zip(g.data())
        .zip(b.data())
        .map(|((&rv, &gv), &bv)| (0.299 * rv + 0.587 * gv + 0.114 * bv).clamp(0.0, 1.0))
        .collect();
    GrayImage::from_vec(r.width(), r.height(), data)
}

/// Bilinear resize with half-pixel-center alignment and edge clamping.
///
/// The source coordinate of output pixel `i` along an axis is
/// `(i + 0.5) * (in / out) - 0.5`; samples outside the image clamp to the
/// nearest edge pixel. Resizing to the input size reproduces the input.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::EmptyImage {
            width: out_w,
            height: out_h,
        });
    }
    let (in_w, in_h) = (img.width(), img.height());
    let sx = in_w as f64 / out_w as f64;
    let sy = in_h as f64 / out_h as f64;
    let mut data = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let src_y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f64);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = src_y - y0 as f64;
        for ox in 0..out_w {
            let src_x = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f64);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = src_x - x0 as f64;
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bot = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            let v = top * (1.0 - fy) + bot * fy;
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    GrayImage::from_vec(out_w, out_h, data)
}

/// Copies the sub-image under `bx`; output pixel `(i, j)` equals input
/// pixel `(bx.x + i, bx.y + j)`.
pub fn crop(img: &GrayImage, bx: BBox) -> Result<GrayImage, ImageError> {
    if !bx.fits(img.width(), img.height()) {
        return Err(ImageError::CropOutOfBounds {
            x: bx.x,
            y: bx.y,
            w: bx.w,
            h: bx.h,
            width: img.width(),
            height: img.height(),
        });
    }
    let mut data = Vec::with_capacity(bx.w * bx.h);
    for j in 0..bx.h {
        let row = img.row(bx.y + j);
        data.extend_from_slice(&row[bx.x..bx.x + bx.w]);
    }
    GrayImage::from_vec(bx.w, bx.h, data)
}
