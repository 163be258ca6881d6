//! Image containers and bit-exact PGM / PNG input-output.
//!
//! Every stage of the pipeline works on [`GrayImage`]: a row-major field of
//! finite `f64` values. Files are read into `[0, 1]` by dividing by the
//! format's maximum sample value, and written as 8-bit binary PGM.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 2-D scalar field. `x` indexes columns, `y` indexes rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Size(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite pixel at index {i}")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!(value.is_finite());
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                assert!(v.is_finite(), "non-finite pixel at ({x}, {y})");
                pixels.push(v);
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Internal constructor for buffers already known to be valid.
    pub(crate) fn from_raw(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        debug_assert!(pixels.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        assert!(v.is_finite());
        self.pixels[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn min_value(&self) -> f64 {
        self.pixels.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.pixels
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.pixels.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Min-max stretch into `[0, 1]`. Constant images are clamped into
    /// `[0, 1]` instead, since they have no range to stretch.
    pub fn normalize(&self) -> GrayImage {
        let lo = self.min_value();
        let hi = self.max_value();
        if hi > lo {
            let span = hi - lo;
            self.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
        } else {
            self.map(|v| v.clamp(0.0, 1.0))
        }
    }

    /// Rotates the image by 90 degrees counter-clockwise (as displayed with
    /// `y` pointing down). The result is `height x width`.
    pub fn rot90(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        // new(x', y') = old(w - 1 - y', x')
        GrayImage::from_fn(h, w, |nx, ny| self.get(w - 1 - ny, nx))
    }
}

/// Row-major boolean mask with the same indexing as [`GrayImage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::Size(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Pixels strictly above 0.5 become `true`.
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            bits: img.pixels.iter().map(|&v| v > 0.5).collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> BinaryMask {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }
}

/// How colour PNG input is reduced to a single channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelPolicy {
    Red,
    #[default]
    Green,
    Blue,
    /// 0.299 R + 0.587 G + 0.114 B
    Luma,
}

impl std::str::FromStr for ChannelPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" | "r" => Ok(ChannelPolicy::Red),
            "green" | "g" => Ok(ChannelPolicy::Green),
            "blue" | "b" => Ok(ChannelPolicy::Blue),
            "luma" | "gray" => Ok(ChannelPolicy::Luma),
            _ => Err(Error::Parameter(format!("unknown channel policy '{s}'"))),
        }
    }
}

impl ChannelPolicy {
    fn reduce(self, r: f64, g: f64, b: f64) -> f64 {
        match self {
            ChannelPolicy::Red => r,
            ChannelPolicy::Green => g,
            ChannelPolicy::Blue => b,
            ChannelPolicy::Luma => (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0),
        }
    }
}

/// Loads a PGM (P2/P5) or PNG file, using the green channel for colour input.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    load_image_with(path, ChannelPolicy::default())
}

pub fn load_image_with(path: impl AsRef<Path>, channel: ChannelPolicy) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, channel)
}

/// Decodes an in-memory PGM or PNG by sniffing the magic bytes.
pub fn decode_image(bytes: &[u8], channel: ChannelPolicy) -> Result<GrayImage> {
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes, channel)
    } else {
        Err(Error::Format("not a PGM (P2/P5) or PNG file".into()))
    }
}

/// Writes `img` as 8-bit binary PGM after clamping to `[0, 1]`.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_image(&mask.to_image(), path)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::from_image(&load_image(path)?))
}

/// Round-half-up quantization of a `[0, 1]` value to a byte.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    out
}

/// Each pixel `v` becomes `1 - v`.
pub fn invert(img: &GrayImage) -> GrayImage {
    img.map(|v| 1.0 - v)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("expected {what} at byte {start}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{what} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let binary = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => return Err(Error::Format("missing P2/P5 magic".into())),
    };
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.next_uint("width")? as usize;
    let height = rd.next_uint("height")? as usize;
    let maxval = rd.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("image too large".into()))?;
    let scale = f64::from(maxval);
    let mut pixels = Vec::with_capacity(n);

    if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(rd.pos) {
            Some(c) if c.is_ascii_whitespace() => rd.pos += 1,
            _ => return Err(Error::Format("missing whitespace after maxval".into())),
        }
        let body = &bytes[rd.pos..];
        let sample = if maxval < 256 { 1 } else { 2 };
        if body.len() < n * sample {
            return Err(Error::Format(format!(
                "truncated raster: {} of {} bytes",
                body.len(),
                n * sample
            )));
        }
        for i in 0..n {
            let raw = if sample == 1 {
                u32::from(body[i])
            } else {
                u32::from(u16::from_be_bytes([body[2 * i], body[2 * i + 1]]))
            };
            if raw > maxval {
                return Err(Error::Format(format!(
                    "sample {raw} exceeds maxval {maxval}"
                )));
            }
            pixels.push(f64::from(raw) / scale);
        }
    } else {
        for i in 0..n {
            let raw = rd
                .next_uint("sample")
                .map_err(|_| Error::Format(format!("truncated raster: {i} of {n} samples")))?;
            if raw > maxval {
                return Err(Error::Format(format!(
                    "sample {raw} exceeds maxval {maxval}"
                )));
            }
            pixels.push(f64::from(raw) / scale);
        }
    }
    Ok(GrayImage::from_raw(width, height, pixels))
}

fn decode_png(bytes: &[u8], channel: ChannelPolicy) -> Result<GrayImage> {
    use image::{DynamicImage, ImageFormat};

    let dynimg = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let pixels = match dynimg {
        DynamicImage::ImageLuma8(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
        DynamicImage::ImageRgb8(buf) => buf
            .into_raw()
            .chunks_exact(3)
            .map(|p| {
                channel.reduce(
                    f64::from(p[0]) / 255.0,
                    f64::from(p[1]) / 255.0,
                    f64::from(p[2]) / 255.0,
                )
            })
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "unsupported png colour type {:?}; expected 8-bit gray or RGB",
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_pgm_scales_by_maxval() {
        let img = decode_pgm(b"P2\n2 2\n255\n0 255\n255 0\n").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_pgm(b"P2\n# made by hand\n3 1 # trailing\n# more\n4\n0 2 4\n").unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn binary_pgm_and_sixteen_bit() {
        let img = decode_pgm(b"P5 2 1 255\n\x00\xff").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
        let img = decode_pgm(b"P5 2 1 65535\n\x00\x00\xff\xff").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn truncated_or_malformed_pgm_is_rejected() {
        assert!(matches!(
            decode_pgm(b"P5\n4 4\n255\n\x00\x01"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P2\n2 2\n255\n0 1 2"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P2\n2 2\n0\n0 0 0 0"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P2\n2 x\n255\n"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n70000\n0"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n10\n11"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_image(b"GIF89a", ChannelPolicy::Green),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn encode_quantizes_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
        let zeros = encode_pgm(&GrayImage::zeros(3, 2));
        assert_eq!(&zeros[..11], b"P5\n3 2\n255\n");
        assert!(zeros[11..].iter().all(|&b| b == 0));
        let ones = encode_pgm(&GrayImage::filled(3, 2, 1.0));
        assert!(ones[11..].iter().all(|&b| b == 255));
        assert_eq!(ones.len(), 11 + 6);
    }

    #[test]
    fn invert_examples() {
        let img = GrayImage::new(3, 1, vec![0.0, 1.0, 0.25]).unwrap();
        assert_eq!(invert(&img).pixels(), &[1.0, 0.0, 0.75]);
        assert_eq!(invert(&invert(&img)), img);
        let half = GrayImage::filled(4, 4, 0.5);
        assert_eq!(invert(&half), half);
    }

    #[test]
    fn mask_from_checkerboard() {
        let img = GrayImage::from_fn(4, 4, |x, y| ((x + y) % 2) as f64);
        let m = BinaryMask::from_image(&img);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(m.get(x, y), (x + y) % 2 == 1);
            }
        }
    }

    #[test]
    fn invalid_constructors() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
        assert!(BinaryMask::new(2, 2, vec![true; 5]).is_err());
    }

    #[test]
    fn normalize_stretches_to_unit_range() {
        let img = GrayImage::new(3, 1, vec![2.0, 4.0, 3.0])
            .unwrap()
            .normalize();
        assert_eq!(img.pixels(), &[0.0, 1.0, 0.5]);
        let flat = GrayImage::filled(2, 2, 0.3).normalize();
        assert!(flat.pixels().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 10 + y) as f64);
        let r = img.rot90();
        assert_eq!((r.width(), r.height()), (3, 5));
        // top-right corner moves to top-left
        assert_eq!(r.get(0, 0), img.get(4, 0));
        assert_eq!(r.rot90().rot90().rot90(), img);
    }

    #[test]
    fn png_gray_and_rgb_channel_policy() {
        use image::{ImageBuffer, Luma, Rgb};
        let mut buf = Vec::new();
        let gray: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_pixel(8, 8, Luma([0u8]));
        gray.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
            .unwrap();
        let img = decode_image(&buf, ChannelPolicy::Green).unwrap();
        assert_eq!((img.width(), img.height()), (8, 8));
        assert!(img.pixels().iter().all(|&v| v == 0.0));

        let mut buf = Vec::new();
        let rgb: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_pixel(2, 2, Rgb([255u8, 51, 0]));
        rgb.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
            .unwrap();
        assert_eq!(
            decode_image(&buf, ChannelPolicy::Green).unwrap().get(0, 0),
            0.2
        );
        assert_eq!(
            decode_image(&buf, ChannelPolicy::Red).unwrap().get(1, 1),
            1.0
        );
        assert_eq!(
            decode_image(&buf, ChannelPolicy::Blue).unwrap().get(1, 1),
            0.0
        );
        let luma = decode_image(&buf, ChannelPolicy::Luma).unwrap().get(0, 0);
        assert!((luma - (0.299 + 0.587 * 0.2)).abs() < 1e-12);
    }
}
