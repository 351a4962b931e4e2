//! Grayscale images on the [0, 255] intensity scale, PGM/PNG I/O and PSNR.

use std::fs;
use std::io::Write;
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use thiserror::Error;

/// Peak intensity used by [`psnr`].
pub const PEAK: f64 = 255.0;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image dimensions {height}x{width}")]
    BadDimensions { height: usize, width: usize },
    #[error("pixel buffer has {got} values, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("non-finite pixel value at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("unsupported depth: {0}")]
    UnsupportedDepth(String),
    #[error("image is not grayscale ({0})")]
    NotGrayscale(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("png codec: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major grayscale image with finite `f64` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::BadDimensions { height, width });
        }
        if data.len() != height * width {
            return Err(ImageError::BadLength {
                expected: height * width,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Ok(Self { height, width, data })
    }

    /// Image filled with a single value.
    ///
    /// Panics on zero dimensions or a non-finite value.
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        assert!(value.is_finite());
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::ShapeMismatch(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, PEAK))
    }

    /// Sum of squared entries.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy of the rectangle starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image, ImageError> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(ImageError::BadDimensions { height, width });
        }
        Ok(Image::from_fn(height, width, |r, c| self.get(top + r, left + c)))
    }

    /// Largest centered crop whose sides are multiples of `multiple`.
    /// Returns the crop and its `(top, left)` offset.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<(Image, (usize, usize)), ImageError> {
        let h = self.height / multiple * multiple;
        let w = self.width / multiple * multiple;
        let top = (self.height - h) / 2;
        let left = (self.width - w) / 2;
        Ok((self.crop(top, left, h, w)?, (top, left)))
    }

    fn zip_with(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert_eq!(self.dims(), other.dims(), "image shape mismatch");
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

impl Add for &Image {
    type Output = Image;
    fn add(self, rhs: &Image) -> Image {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Image {
    type Output = Image;
    fn sub(self, rhs: &Image) -> Image {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Image {
    type Output = Image;
    fn mul(self, rhs: f64) -> Image {
        self.map(|v| v * rhs)
    }
}

/// Mean squared error between equally sized images.
pub fn mse(reference: &Image, test: &Image) -> Result<f64, ImageError> {
    reference.same_shape(test)?;
    let sum: f64 = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// Peak signal-to-noise ratio in dB with a 255 peak. Identical images give
/// `f64::INFINITY`.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64, ImageError> {
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / err).log10())
}

/// Clamp to [0, 255] and round half away from zero.
pub fn to_u8(v: f64) -> u8 {
    v.clamp(0.0, PEAK).round() as u8
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Load an 8-bit grayscale binary PGM (P5) or PNG. The format is detected
/// from the file contents, not the extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let bytes = fs::read(path.as_ref())?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, ImageError> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(ImageError::UnsupportedFormat(format!(
            "netpbm variant P{}",
            bytes[1] as char
        )))
    } else {
        Err(ImageError::UnsupportedFormat("unrecognized magic bytes".into()))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<Image, ImageError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
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
                None => return Err(ImageError::Truncated("PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::MalformedHeader("expected a decimal number".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| ImageError::MalformedHeader(format!("bad number {text:?}")))?;
    }
    let [width, height, maxval] = fields;
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(ImageError::MalformedHeader("missing raster separator".into())),
        None => return Err(ImageError::Truncated("PGM header".into())),
    }
    if maxval == 0 {
        return Err(ImageError::MalformedHeader("maxval 0".into()));
    }
    if maxval > 255 {
        return Err(ImageError::UnsupportedDepth(format!("PGM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::BadDimensions { height, width });
    }
    let n = width * height;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(ImageError::Truncated(format!(
            "PGM raster has {} of {n} bytes",
            raster.len()
        )));
    }
    Image::new(height, width, raster[..n].iter().map(|&b| f64::from(b)).collect())
}

fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    use image::{ColorType, ImageDecoder};
    let decoder = ::image::codecs::png::PngDecoder::new(std::io::Cursor::new(bytes)).map_err(png_err)?;
    let (width, height) = decoder.dimensions();
    match decoder.color_type() {
        ColorType::L8 => {}
        ColorType::L16 => return Err(ImageError::UnsupportedDepth("16-bit PNG".into())),
        other => return Err(ImageError::NotGrayscale(format!("{other:?}"))),
    }
    let mut buf = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut buf).map_err(png_err)?;
    Image::new(
        height as usize,
        width as usize,
        buf.into_iter().map(f64::from).collect(),
    )
}

fn png_err(e: ::image::ImageError) -> ImageError {
    match e {
        ::image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            ImageError::Truncated(io.to_string())
        }
        ::image::ImageError::Decoding(d) => {
            let msg = d.to_string();
            if msg.to_ascii_lowercase().contains("eof") || msg.contains("end of") {
                ImageError::Truncated(msg)
            } else {
                ImageError::Png(msg)
            }
        }
        other => ImageError::Png(other.to_string()),
    }
}

/// Quantize to bytes: clamp to [0, 255], round half away from zero.
pub fn quantize(img: &Image) -> Vec<u8> {
    img.data.iter().map(|&v| to_u8(v)).collect()
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(quantize(img));
    out
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, ImageError> {
    use ::image::ImageEncoder;
    let mut out = Vec::new();
    ::image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            &quantize(img),
            img.width as u32,
            img.height as u32,
            ::image::ExtendedColorType::L8,
        )
        .map_err(|e| ImageError::Png(e.to_string()))?;
    Ok(out)
}

/// Write as PGM or PNG depending on the file extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "pgm" => encode_pgm(img),
        "png" => encode_png(img)?,
        other => return Err(ImageError::UnsupportedFormat(format!("extension {other:?}"))),
    };
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(Image::new(0, 3, vec![]), Err(ImageError::BadDimensions { .. })));
        assert!(matches!(Image::new(2, 2, vec![0.0; 3]), Err(ImageError::BadLength { .. })));
        assert!(matches!(
            Image::new(1, 2, vec![0.0, f64::NAN]),
            Err(ImageError::NonFinite(1))
        ));
    }

    #[test]
    fn pgm_bytes_map_directly() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 128, 255, 64]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.data(), &[0.0, 128.0, 255.0, 64.0]);
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5 # a comment\n3 # w\n1\n255\n".to_vec();
        bytes.extend([1, 2, 3]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.dims(), (1, 3));
    }

    #[test]
    fn pgm_error_cases() {
        let sixteen = b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(decode_image(&sixteen), Err(ImageError::UnsupportedDepth(_))));
        let short = b"P5\n2 2\n255\n\x01\x02".to_vec();
        assert!(matches!(decode_image(&short), Err(ImageError::Truncated(_))));
        assert!(matches!(decode_image(b"P5\n2"), Err(ImageError::Truncated(_))));
        assert!(matches!(decode_image(b"P2\n1 1\n255\n0"), Err(ImageError::UnsupportedFormat(_))));
        assert!(matches!(decode_image(b"GIF89a"), Err(ImageError::UnsupportedFormat(_))));
    }

    #[test]
    fn png_matches_pgm() {
        let img = Image::new(2, 2, vec![0.0, 128.0, 255.0, 64.0]).unwrap();
        let png = encode_png(&img).unwrap();
        assert_eq!(decode_image(&png).unwrap(), img);
    }

    #[test]
    fn png_color_and_depth_rejected() {
        use ::image::ImageEncoder;
        let mut rgb = Vec::new();
        ::image::codecs::png::PngEncoder::new(&mut rgb)
            .write_image(&[1, 2, 3, 4, 5, 6], 2, 1, ::image::ExtendedColorType::Rgb8)
            .unwrap();
        assert!(matches!(decode_image(&rgb), Err(ImageError::NotGrayscale(_))));

        let mut deep = Vec::new();
        ::image::codecs::png::PngEncoder::new(&mut deep)
            .write_image(&[0, 1, 0, 2], 2, 1, ::image::ExtendedColorType::L16)
            .unwrap();
        assert!(matches!(decode_image(&deep), Err(ImageError::UnsupportedDepth(_))));

        let img = Image::filled(8, 8, 3.0);
        let png = encode_png(&img).unwrap();
        assert!(decode_image(&png[..png.len() / 2]).is_err());
    }

    #[test]
    fn quantization_clamps_and_rounds_half_away() {
        let img = Image::new(1, 5, vec![255.7, 127.5, -3.0, 0.49, 126.5]).unwrap();
        assert_eq!(quantize(&img), vec![255, 128, 0, 0, 127]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(5, 7, |r, c| ((r * 31 + c * 17) % 256) as f64);
        for name in ["a.pgm", "a.png"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img);
        }
        assert!(matches!(
            save_image(&img, dir.path().join("a.bmp")),
            Err(ImageError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            save_image(&img, dir.path().join("missing/dir/a.pgm")),
            Err(ImageError::Io(_))
        ));
    }

    #[test]
    fn psnr_reference_values() {
        let a = Image::zeros(4, 4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, 255.0);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);

        let x = Image::filled(8, 8, 100.0);
        let mut y = x.clone();
        y.set(3, 5, 116.0);
        // MSE = 256 / 64 = 4
        let expected = 10.0 * (65025.0f64 / 4.0).log10();
        let got = psnr(&x, &y).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 42.11).abs() < 0.01);

        assert!(matches!(psnr(&a, &x), Err(ImageError::ShapeMismatch(..))));
    }

    #[test]
    fn center_crop() {
        let img = Image::from_fn(70, 45, |r, c| (r + c) as f64);
        let (crop, (top, left)) = img.center_crop_to_multiple(32).unwrap();
        assert_eq!(crop.dims(), (64, 32));
        assert_eq!((top, left), (3, 6));
        assert_eq!(crop.get(0, 0), 9.0);
    }
}
