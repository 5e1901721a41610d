//! Raster containers and file formats.
//!
//! [`Image`] is a row-major RGB raster with samples in [0, 1]. [`Plane`] is a
//! single-channel f64 raster used for opacity masks, depth data, saliency and
//! displacement fields. [`DepthMap`] wraps a plane of strictly positive
//! depths in meters, with `+inf` marking sky.
//!
//! On disk: 8-bit RGB PNG for color, binary 16-bit PGM (P5) for scalar
//! rasters, and packed PBM (P4) for binary masks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel f64 raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Plane {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length mismatch");
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_dims(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Write as binary 16-bit PGM, quantizing [0,1] values to [0,65535].
    /// Values outside [0,1] are clamped.
    pub fn save_pgm16_unit(&self, path: &Path) -> Result<()> {
        let words: Vec<u16> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        write_pgm16(path, self.width, self.height, &words)
    }
}

/// 2-D RGB raster, interleaved row-major, samples in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * CHANNELS],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * CHANNELS, "image data length");
        Image {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_exact_mut(CHANNELS) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Clamp every sample into [0, 1] in place.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Maximum absolute per-sample difference. Panics on dimension mismatch.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_dims(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-pixel scene depth in meters. `+inf` is the sky sentinel.
#[derive(Debug, Clone)]
pub struct DepthMap {
    plane: Plane,
}

impl DepthMap {
    /// Values must be strictly positive; `+inf` is allowed.
    pub fn from_plane(plane: Plane) -> Result<Self> {
        if plane.data().iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidParam(
                "depth map contains non-positive or NaN depth".into(),
            ));
        }
        Ok(DepthMap { plane })
    }

    pub fn width(&self) -> usize {
        self.plane.width()
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.plane.get(x, y)
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }
}

/// Binary raster; `true` marks pixels where model injection is allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, fill: bool) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True iff every allowed pixel of `self` is also allowed in `other`.
    pub fn subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Write as packed binary PBM (P4). Set bits mark allowed pixels.
    pub fn save_pbm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(format!("P4\n{} {}\n", self.width, self.height).as_bytes());
        for y in 0..self.height {
            let mut byte = 0u8;
            let mut nbits = 0;
            for x in 0..self.width {
                byte <<= 1;
                if self.get(x, y) {
                    byte |= 1;
                }
                nbits += 1;
                if nbits == 8 {
                    out.push(byte);
                    byte = 0;
                    nbits = 0;
                }
            }
            if nbits > 0 {
                out.push(byte << (8 - nbits));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_pbm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (magic, rest) = take_token(&bytes, 0);
        if magic != b"P4" {
            return Err(Error::DepthFormat {
                path: path.into(),
                reason: "not a binary PBM (P4)".into(),
            });
        }
        let (w, rest) = take_token(&bytes, rest);
        let (h, pos) = take_token(&bytes, rest);
        let width: usize = parse_dim(w, path)?;
        let height: usize = parse_dim(h, path)?;
        let row_bytes = width.div_ceil(8);
        let need = row_bytes * height;
        if bytes.len() < pos + need {
            return Err(Error::DepthFormat {
                path: path.into(),
                reason: "truncated PBM raster".into(),
            });
        }
        let mut data = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                let byte = bytes[pos + y * row_bytes + x / 8];
                data[y * width + x] = (byte >> (7 - (x % 8))) & 1 == 1;
            }
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }
}

/// Load an 8-bit RGB PNG, mapping samples to [0,1] by v/255.
pub fn load_image(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::ImageReader::new(BufReader::new(file))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::UnsupportedImage {
            path: path.into(),
            reason: e.to_string(),
        })?;
    let rgb = match decoded {
        image::DynamicImage::ImageRgb8(buf) => buf,
        other => {
            return Err(Error::UnsupportedImage {
                path: path.into(),
                reason: format!("unsupported bit depth or color type {:?}", other.color()),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image::from_vec(w, h, data))
}

/// Save as 8-bit RGB PNG, quantizing by round(v*255) with clamping.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("image buffer size");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::UnsupportedImage {
            path: path.into(),
            reason: e.to_string(),
        })
}

/// Load a 16-bit binary PGM depth map. Raw value 65535 becomes the sky
/// sentinel `+inf`; every other value is scaled by `meters_per_unit`.
/// Zero raw values are rejected (depth must be positive).
pub fn load_depth(path: &Path, meters_per_unit: f64) -> Result<DepthMap> {
    if !(meters_per_unit > 0.0) {
        return Err(Error::InvalidParam("meters_per_unit must be > 0".into()));
    }
    let (width, height, words) = read_pgm16(path)?;
    let mut data = Vec::with_capacity(width * height);
    for &w in &words {
        if w == 0 {
            return Err(Error::DepthFormat {
                path: path.into(),
                reason: "non-positive depth".into(),
            });
        }
        data.push(if w == u16::MAX {
            f64::INFINITY
        } else {
            w as f64 * meters_per_unit
        });
    }
    DepthMap::from_plane(Plane::from_vec(width, height, data))
}

/// Write a raw 16-bit PGM (P5, maxval 65535, big-endian samples).
pub fn write_pgm16(path: &Path, width: usize, height: usize, words: &[u16]) -> Result<()> {
    assert_eq!(words.len(), width * height);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{width} {height}\n65535\n");
    w.write_all(header.as_bytes())
        .and_then(|_| {
            for &word in words {
                w.write_all(&word.to_be_bytes())?;
            }
            w.flush()
        })
        .map_err(|e| Error::io(path, e))
}

/// Read a raw 16-bit PGM (P5, maxval 65535).
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let (magic, rest) = take_token(&bytes, 0);
    if magic != b"P5" {
        return Err(Error::DepthFormat {
            path: path.into(),
            reason: "not a binary PGM (P5)".into(),
        });
    }
    let (w, rest) = take_token(&bytes, rest);
    let (h, rest) = take_token(&bytes, rest);
    let (maxval, pos) = take_token(&bytes, rest);
    let width: usize = parse_dim(w, path)?;
    let height: usize = parse_dim(h, path)?;
    if maxval != b"65535" {
        return Err(Error::DepthFormat {
            path: path.into(),
            reason: format!(
                "expected 16-bit maxval 65535, got {}",
                String::from_utf8_lossy(maxval)
            ),
        });
    }
    let need = width * height * 2;
    if bytes.len() < pos + need {
        return Err(Error::DepthFormat {
            path: path.into(),
            reason: "truncated PGM raster".into(),
        });
    }
    let words = bytes[pos..pos + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((width, height, words))
}

/// Next whitespace-delimited header token starting at `pos`; also skips
/// `#` comment lines. Returns the token and the offset one byte past its
/// trailing delimiter.
fn take_token(bytes: &[u8], mut pos: usize) -> (&[u8], usize) {
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
    let token = &bytes[start..pos];
    // Exactly one delimiter byte follows the last header token before raster data.
    if pos < bytes.len() {
        pos += 1;
    }
    (token, pos)
}

fn parse_dim(token: &[u8], path: &Path) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::DepthFormat {
            path: path.into(),
            reason: format!("bad dimension token {:?}", String::from_utf8_lossy(token)),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = RngStream::new(seed);
        let data = (0..w * h * CHANNELS).map(|_| rng.next_f64()).collect();
        Image::from_vec(w, h, data)
    }

    #[test]
    fn png_pixel_scaling() {
        let dir = tmpdir();
        let path = dir.path().join("px.png");
        let buf = image::RgbImage::from_fn(2, 2, |x, y| {
            if (x, y) == (0, 0) {
                image::Rgb([255, 0, 0])
            } else {
                image::Rgb([0, 0, 0])
            }
        });
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(1, 1), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn png_all_black_loads_zero() {
        let dir = tmpdir();
        let path = dir.path().join("black.png");
        image::RgbImage::new(4, 3).save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn png_16bit_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("deep.png");
        let buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(2, 2);
        buf.save(&path).unwrap();
        let err = load_image(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unsupported"), "unexpected error: {msg}");
    }

    #[test]
    fn png_missing_file() {
        let err = load_image(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tmpdir();
        let path = dir.path().join("rt.png");
        let img = random_image(13, 9, 42);
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert!(back.max_abs_diff(&img) <= 1.0 / 255.0 + 1e-12);
    }

    #[test]
    fn png_white_round_trips_exactly() {
        let dir = tmpdir();
        let path = dir.path().join("white.png");
        let img = Image::constant(5, 4, [1.0, 1.0, 1.0]);
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.max_abs_diff(&img), 0.0);
    }

    #[test]
    fn png_save_to_missing_dir_fails() {
        let img = Image::new(2, 2);
        assert!(save_image(&img, Path::new("/no/such/dir/out.png")).is_err());
    }

    #[test]
    fn depth_scaling_and_sentinel() {
        let dir = tmpdir();
        let path = dir.path().join("d.pgm");
        write_pgm16(&path, 2, 1, &[1000, 65535]).unwrap();
        let depth = load_depth(&path, 0.1).unwrap();
        assert!((depth.get(0, 0) - 100.0).abs() < 1e-12);
        assert!(depth.get(1, 0).is_infinite());
    }

    #[test]
    fn depth_zero_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("z.pgm");
        write_pgm16(&path, 1, 1, &[0]).unwrap();
        let err = load_depth(&path, 1.0).unwrap_err();
        assert!(err.to_string().contains("non-positive depth"));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("p.pgm");
        let words: Vec<u16> = (0..12).map(|i| i * 5000).collect();
        write_pgm16(&path, 4, 3, &words).unwrap();
        let (w, h, back) = read_pgm16(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, words);
    }

    #[test]
    fn pbm_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("m.pbm");
        let mut mask = BinaryMask::new(10, 3, false);
        mask.set(0, 0, true);
        mask.set(9, 2, true);
        mask.set(4, 1, true);
        mask.save_pbm(&path).unwrap();
        let back = BinaryMask::load_pbm(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn mask_subset() {
        let small = BinaryMask::from_vec(2, 1, vec![true, false]);
        let big = BinaryMask::from_vec(2, 1, vec![true, true]);
        assert!(small.subset_of(&big));
        assert!(!big.subset_of(&small));
    }
}
