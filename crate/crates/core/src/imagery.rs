//! Image and mask containers with bit-exact file I/O.
//!
//! Three on-disk formats are supported:
//!
//! * binary PPM (`P6`, maxval 255) for color images,
//! * binary PGM (`P5`, maxval 255) for saliency masks,
//! * `TensorFile`, a little-endian container for n-dimensional float arrays:
//!
//! ```text
//! magic   4 bytes  "SPTF"
//! version u32      currently 1
//! dtype   u32      0 = f32, 1 = f64
//! ndim    u32
//! dims    ndim x u32
//! payload product(dims) values, little-endian, row-major
//! ```
//!
//! All pixel data is held as f64 in `[0, 1]`; PPM/PGM bytes map to `b / 255`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"SPTF";
pub const TENSOR_VERSION: u32 = 1;

/// Element width of a [`TensorFile`](self) payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u32, path: &Path) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::format(path, format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// An H x W x C image with values in `[0, 1]`, row-major `(h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Build an image from raw values, validating the container invariants.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be at least 2x2, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {height}*{width}*{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("image values must be finite and within [0, 1]".into()));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pixel value at integer coordinates.
    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Load from a PPM (P6) or TensorFile with ndim = 3.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P6") {
            let (w, h, pixels) = parse_pnm(&bytes, path, 3)?;
            let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
            Image::new(h, w, 3, data)
        } else if bytes.starts_with(&TENSOR_MAGIC) {
            let (dims, values) = decode_tensor(&bytes, path)?;
            if dims.len() != 3 {
                return Err(Error::format(path, format!("not an image: ndim {} != 3", dims.len())));
            }
            Image::new(dims[0], dims[1], dims[2], values)
        } else {
            Err(Error::format(path, "unrecognized image format (want PPM P6 or SPTF)"))
        }
    }

    /// Write as binary PPM. Values are re-quantized as `round(v * 255)`.
    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.channels != 3 {
            return Err(Error::InvalidArgument("PPM requires 3 channels".into()));
        }
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v * 255.0).round() as u8));
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Write as a 3-dimensional TensorFile (f64 payload).
    pub fn save_tensor(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tensor(&[self.height, self.width, self.channels], &self.data, DType::F64, path)
    }
}

/// An H x W saliency grid with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask data length {} != {height}*{width}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("mask values must be finite and within [0, 1]".into()));
        }
        Ok(SaliencyMask { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Load from a PGM (P5) or TensorFile with ndim = 2.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P5") {
            let (w, h, pixels) = parse_pnm(&bytes, path, 1)?;
            let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
            SaliencyMask::new(h, w, data)
        } else if bytes.starts_with(&TENSOR_MAGIC) {
            let (dims, values) = decode_tensor(&bytes, path)?;
            if dims.len() != 2 {
                return Err(Error::format(path, format!("not a mask: ndim {} != 2", dims.len())));
            }
            SaliencyMask::new(dims[0], dims[1], values)
        } else {
            Err(Error::format(path, "unrecognized mask format (want PGM P5 or SPTF)"))
        }
    }

    pub fn save_tensor(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tensor(&[self.height, self.width], &self.data, DType::F64, path)
    }
}

/// Parse the header + payload of a binary PNM file (`P5` or `P6`, maxval 255).
fn parse_pnm(bytes: &[u8], path: &Path, channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 2; // past magic
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and '#' comment lines
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                _ => return Err(Error::format(path, "malformed PNM header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed PNM header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval} (want 255)")));
    }
    if width < 2 || height < 2 {
        return Err(Error::format(path, format!("dimension below 2: {width}x{height}")));
    }
    // exactly one whitespace byte separates header and payload
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(path, "malformed PNM header")),
    }
    let need = width * height * channels;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::format(
            path,
            format!("truncated payload: {} bytes, expected {need}", payload.len()),
        ));
    }
    Ok((width, height, payload[..need].to_vec()))
}

/// Write an n-dimensional float array to `path` in TensorFile format.
pub fn save_tensor(dims: &[usize], values: &[f64], dtype: DType, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if dims.is_empty() {
        return Err(Error::InvalidArgument("tensor dims must be nonempty".into()));
    }
    let count: usize = dims.iter().product();
    if count != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "dims product {count} != value count {}",
            values.len()
        )));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("tensor values must be finite".into()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    encode_tensor(dims, values, dtype, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read back a TensorFile as `(dims, values)`. f32 payloads widen to f64.
pub fn load_tensor(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

pub(crate) fn encode_tensor(
    dims: &[usize],
    values: &[f64],
    dtype: DType,
    w: &mut impl Write,
) -> std::io::Result<()> {
    w.write_all(&TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(dtype as u32).to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    match dtype {
        DType::F32 => {
            for &v in values {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub(crate) fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut r = bytes;
    let take4 = |r: &mut &[u8]| -> Result<[u8; 4]> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf).map_err(|_| Error::format(path, "truncated header"))?;
        Ok(buf)
    };
    let magic = take4(&mut r)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(take4(&mut r)?);
    if version != TENSOR_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dtype = DType::from_code(u32::from_le_bytes(take4(&mut r)?), path)?;
    let ndim = u32::from_le_bytes(take4(&mut r)?) as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u32::from_le_bytes(take4(&mut r)?) as usize);
    }
    let count: usize = dims.iter().product();
    if r.len() != count * dtype.width() {
        return Err(Error::format(
            path,
            format!("payload length {} != {} values of width {}", r.len(), count, dtype.width()),
        ));
    }
    let values = match dtype {
        DType::F32 => r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok((dims, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("imagery-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn ppm_all_255_maps_to_one() {
        let path = tmpdir().join("white.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([255u8; 12]);
        fs::write(&path, bytes).unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.height(), 2);
        assert_eq!(img.width(), 2);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ppm_byte_maps_to_fraction() {
        let path = tmpdir().join("gray.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([128u8; 12]);
        fs::write(&path, bytes).unwrap();
        let img = Image::load(&path).unwrap();
        assert_eq!(img.at(0, 0, 0), 128.0 / 255.0);
        assert!((img.at(0, 0, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn ppm_reimport_is_lossless() {
        let dir = tmpdir();
        let path = dir.join("roundtrip.ppm");
        let mut bytes = b"P6\n3 2\n255\n".to_vec();
        let pixels: Vec<u8> = (0..18).map(|i| (i * 13 + 7) as u8).collect();
        bytes.extend(&pixels);
        fs::write(&path, bytes).unwrap();
        let img = Image::load(&path).unwrap();
        let requantized: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(requantized, pixels);
    }

    #[test]
    fn tensor_with_wrong_ndim_is_not_an_image() {
        let path = tmpdir().join("flat.sptf");
        save_tensor(&[2, 3], &[0.0; 6], DType::F64, &path).unwrap();
        let err = Image::load(&path).unwrap_err();
        assert!(err.to_string().contains("not an image"), "{err}");
    }

    #[test]
    fn pgm_zero_and_one_masks() {
        let dir = tmpdir();
        for (name, byte, expect) in [("zeros.pgm", 0u8, 0.0), ("ones.pgm", 255u8, 1.0)] {
            let path = dir.join(name);
            let mut bytes = b"P5\n4 2\n255\n".to_vec();
            bytes.extend([byte; 8]);
            fs::write(&path, bytes).unwrap();
            let mask = SaliencyMask::load(&path).unwrap();
            assert!(mask.data().iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn truncated_pgm_errors() {
        let path = tmpdir().join("short.pgm");
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend([0u8; 7]); // need 16
        fs::write(&path, bytes).unwrap();
        let err = SaliencyMask::load(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn pnm_comments_and_maxval() {
        let path = tmpdir().join("comment.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend([7u8; 4]);
        fs::write(&path, bytes).unwrap();
        assert!(SaliencyMask::load(&path).is_ok());

        let path2 = tmpdir().join("maxval.pgm");
        let mut bytes = b"P5\n2 2\n65535\n".to_vec();
        bytes.extend([0u8; 8]);
        fs::write(&path2, bytes).unwrap();
        assert!(SaliencyMask::load(&path2).is_err());
    }

    #[test]
    fn tensor_roundtrip_f64() {
        let path = tmpdir().join("t64.sptf");
        let values: Vec<f64> = (0..6).map(|i| i as f64).collect();
        save_tensor(&[2, 3], &values, DType::F64, &path).unwrap();
        let (dims, back) = load_tensor(&path).unwrap();
        assert_eq!(dims, vec![2, 3]);
        assert_eq!(back, values);
    }

    #[test]
    fn tensor_roundtrip_f32_bits() {
        let path = tmpdir().join("t32.sptf");
        // values representable in f32 so the round-trip is bit-exact
        let values: Vec<f64> = vec![0.5, -0.25, 3.0, 1024.125];
        save_tensor(&[4], &values, DType::F32, &path).unwrap();
        let (dims, back) = load_tensor(&path).unwrap();
        assert_eq!(dims, vec![4]);
        assert_eq!(back, values);
    }

    #[test]
    fn corrupted_magic_errors() {
        let path = tmpdir().join("bad.sptf");
        save_tensor(&[2], &[1.0, 2.0], DType::F64, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        let err = load_tensor(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn image_invariants_rejected() {
        assert!(Image::new(1, 4, 3, vec![0.0; 12]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0, 0.5, 1.0, f64::NAN]).is_err());
    }
}
