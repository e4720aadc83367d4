//! Dense multi-channel image tensors, portable-anymap file I/O, and the
//! mean-squared-error loss.
//!
//! Tensors are stored row-major in `(batch, y, x, channel)` order so the
//! warp inner loop scans `x` fastest. All arithmetic is double precision.
//! Intensities loaded from files lie in `[0, 1]`; tensors produced by
//! warping or gradient computation may leave that range.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A `batch x height x width x channels` array of real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
}

impl ImageTensor {
    /// All-zero tensor. Every extent must be at least 1.
    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        check_extents(batch, height, width, channels)?;
        Ok(Self {
            data: vec![0.0; batch * height * width * channels],
            batch,
            height,
            width,
            channels,
        })
    }

    /// Wrap an existing buffer; its length must equal the product of the extents.
    pub fn from_vec(
        data: Vec<f64>,
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        check_extents(batch, height, width, channels)?;
        let expected = batch * height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} elements for {}x{}x{}x{} tensor (expected {})",
                data.len(),
                batch,
                height,
                width,
                channels,
                expected
            )));
        }
        Ok(Self {
            data,
            batch,
            height,
            width,
            channels,
        })
    }

    /// Build a tensor by evaluating `f(n, y, x, ch)` at every position.
    pub fn from_fn(
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut t = Self::zeros(batch, height, width, channels)?;
        for n in 0..batch {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        let v = f(n, y, x, c);
                        t.set(n, y, x, c, v);
                    }
                }
            }
        }
        Ok(t)
    }

    /// Concatenate single-image tensors along the batch axis.
    pub fn stack(items: &[ImageTensor]) -> Result<ImageTensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty list".into()))?;
        let (h, w, ch) = (first.height, first.width, first.channels);
        let mut data = Vec::new();
        let mut batch = 0;
        for item in items {
            if (item.height, item.width, item.channels) != (h, w, ch) {
                return Err(Error::ShapeMismatch(format!(
                    "cannot stack {}x{}x{} with {}x{}x{}",
                    item.height, item.width, item.channels, h, w, ch
                )));
            }
            data.extend_from_slice(&item.data);
            batch += item.batch;
        }
        ImageTensor::from_vec(data, batch, h, w, ch)
    }

    /// Extract batch element `n` as a single-image tensor.
    pub fn batch_item(&self, n: usize) -> Result<ImageTensor> {
        if n >= self.batch {
            return Err(Error::InvalidArgument(format!(
                "batch index {} out of range ({} items)",
                n, self.batch
            )));
        }
        let stride = self.height * self.width * self.channels;
        ImageTensor::from_vec(
            self.data[n * stride..(n + 1) * stride].to_vec(),
            1,
            self.height,
            self.width,
            self.channels,
        )
    }

    #[inline]
    fn idx(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.height + y) * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(n, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.idx(n, y, x, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, n: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.idx(n, y, x, c);
        self.data[i] += v;
    }

    pub fn batch(&self) -> usize {
        self.batch
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

    /// `(batch, height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.height, self.width, self.channels)
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
}

fn check_extents(batch: usize, height: usize, width: usize, channels: usize) -> Result<()> {
    if batch == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidArgument(format!(
            "all tensor extents must be >= 1, got {}x{}x{}x{}",
            batch, height, width, channels
        )));
    }
    Ok(())
}

/// Mean squared error between two same-shape tensors, together with the
/// gradient of the loss with respect to `pred`.
///
/// `loss = mean((pred - target)^2)`, `grad[i] = 2 (pred[i] - target[i]) / count`.
pub fn mse(pred: &ImageTensor, target: &ImageTensor) -> Result<(f64, ImageTensor)> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "mse operands {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let count = pred.len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - *t;
        loss += diff * diff;
        *g = 2.0 * diff / count;
    }
    Ok((loss / count, grad))
}

// ---------------------------------------------------------------------------
// Portable anymap I/O
//
// Reads ASCII (P2/P3) and binary (P5/P6) graymaps/pixmaps; writes binary
// only. Header comment lines starting with '#' are skipped. Samples with
// maxval > 255 use two big-endian bytes.
// ---------------------------------------------------------------------------

pub const MAX_MAXVAL: u32 = 65535;

/// Load a PGM (P2/P5) or PPM (P3/P6) file as a `1 x H x W x Ch` tensor with
/// intensities scaled to `[0, 1]` (sample `v` maps to `v / maxval`).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let bytes = fs::read(path.as_ref())?;
    decode_pnm(&bytes)
}

/// Write a single-image tensor as binary PGM (1 channel) or PPM (3 channels).
///
/// Intensities are clamped to `[0, 1]` and rounded half-up onto the
/// `maxval` integer grid, so outputs are bit-exact across runs.
pub fn save_image(t: &ImageTensor, path: impl AsRef<Path>, maxval: u32) -> Result<()> {
    let bytes = encode_pnm(t, maxval)?;
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

/// Decode PNM bytes. Exposed for in-memory round trips.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageTensor> {
    let mut p = PnmParser { bytes, pos: 0 };
    let magic = p.magic()?;
    let (channels, ascii) = match magic {
        b"P2" => (1, true),
        b"P3" => (3, true),
        b"P5" => (1, false),
        b"P6" => (3, false),
        other => {
            return Err(Error::Format(format!(
                "unsupported magic number {:?} (expected P2, P3, P5 or P6)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = p.number()? as usize;
    let height = p.number()? as usize;
    let maxval = p.number()?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!(
            "degenerate image dimensions {}x{}",
            width, height
        )));
    }
    if maxval == 0 || maxval > MAX_MAXVAL {
        return Err(Error::Format(format!(
            "maxval {} outside [1, {}]",
            maxval, MAX_MAXVAL
        )));
    }

    let n_samples = width * height * channels;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n_samples);
    if ascii {
        for _ in 0..n_samples {
            let v = p.number()?;
            if v > maxval {
                return Err(Error::Format(format!(
                    "sample {} exceeds maxval {}",
                    v, maxval
                )));
            }
            data.push(v as f64 * scale);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        p.single_whitespace()?;
        let wide = maxval > 255;
        let bytes_per_sample = if wide { 2 } else { 1 };
        let raster = &p.bytes[p.pos..];
        if raster.len() < n_samples * bytes_per_sample {
            return Err(Error::Format(format!(
                "truncated raster: {} bytes for {} samples",
                raster.len(),
                n_samples * bytes_per_sample
            )));
        }
        for i in 0..n_samples {
            let v = if wide {
                u32::from(raster[2 * i]) << 8 | u32::from(raster[2 * i + 1])
            } else {
                u32::from(raster[i])
            };
            if v > maxval {
                return Err(Error::Format(format!(
                    "sample {} exceeds maxval {}",
                    v, maxval
                )));
            }
            data.push(v as f64 * scale);
        }
    }
    ImageTensor::from_vec(data, 1, height, width, channels)
}

/// Encode a single-image tensor as binary PGM/PPM bytes.
pub fn encode_pnm(t: &ImageTensor, maxval: u32) -> Result<Vec<u8>> {
    if t.batch() != 1 {
        return Err(Error::InvalidArgument(format!(
            "can only save single-image tensors, got batch size {}",
            t.batch()
        )));
    }
    let magic = match t.channels() {
        1 => "P5",
        3 => "P6",
        ch => {
            return Err(Error::InvalidArgument(format!(
                "can only save 1- or 3-channel tensors, got {}",
                ch
            )))
        }
    };
    if maxval == 0 || maxval > MAX_MAXVAL {
        return Err(Error::InvalidArgument(format!(
            "maxval {} outside [1, {}]",
            maxval, MAX_MAXVAL
        )));
    }
    let mut out = format!("{}\n{} {}\n{}\n", magic, t.width(), t.height(), maxval).into_bytes();
    let wide = maxval > 255;
    for &v in t.data() {
        let clamped = v.clamp(0.0, 1.0);
        // Round half-up after clamping, for bit-exact outputs.
        let q = (clamped * maxval as f64 + 0.5).floor() as u32;
        let q = q.min(maxval);
        if wide {
            out.push((q >> 8) as u8);
            out.push((q & 0xff) as u8);
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

struct PnmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmParser<'a> {
    fn magic(&mut self) -> Result<&'a [u8]> {
        if self.bytes.len() < 2 {
            return Err(Error::Format("file too short for a magic number".into()));
        }
        let m = &self.bytes[..2];
        self.pos = 2;
        Ok(m)
    }

    /// Skip whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Format(
                "expected an unsigned integer in header or ASCII raster".into(),
            ));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits are valid utf-8");
        text.parse::<u32>()
            .map_err(|_| Error::Format(format!("integer {} out of range", text)))
    }

    fn single_whitespace(&mut self) -> Result<()> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Format(
                "missing whitespace between header and raster".into(),
            ))
        }
    }
}
