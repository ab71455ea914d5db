//! HDR raster type, Radiance RGBE (`.hdr`) encode/decode, tone mapping and PNG output.
//!
//! Every other module exchanges images as [`HdrImage`]: row-major interleaved
//! RGB, linear radiance, `f32`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Linear-radiance RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl HdrImage {
    /// Builds a radiance image; every value must be finite and nonnegative.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let img = Self::from_signed(width, height, data)?;
        if let Some(v) = img.data.iter().find(|v| **v < 0.0) {
            return Err(Error::Parameter(format!("negative radiance value {v}")));
        }
        Ok(img)
    }

    /// Builds a raster that may hold negative values.
    ///
    /// Generator outputs live here: a linear decoder is free to undershoot zero.
    pub fn from_signed(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite pixel value".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::zeros(width, height);
        for px in img.data.chunks_exact_mut(3) {
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// True when every value is nonnegative (finite is guaranteed by construction).
    pub fn is_radiance(&self) -> bool {
        self.data.iter().all(|v| *v >= 0.0)
    }

    pub fn scaled(&self, s: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Rec. 709 luminance per pixel.
    pub fn luminance(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2])
            .collect()
    }

    pub fn read_hdr_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        read_radiance_hdr(&bytes)
    }

    pub fn write_hdr_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, write_radiance_hdr(self)).map_err(|e| Error::io(path, e))
    }
}

/// 8-bit display RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdrImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LdrImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Maps bytes to `[0, 1]` floats.
    pub fn to_unit_float(&self) -> HdrImage {
        HdrImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| f32::from(b) / 255.0).collect(),
        }
    }
}

const RGBE_EXPONENT_BIAS: i32 = 136;

/// Encodes one pixel into a shared-exponent quadruple.
///
/// Mantissas are rounded to nearest, so each channel is off by at most
/// `max_channel / 256` after decoding.
pub fn encode_rgbe(rgb: [f32; 3]) -> [u8; 4] {
    let rgb = rgb.map(|c| if c.is_finite() && c > 0.0 { c } else { 0.0 });
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    if max < 1e-32 {
        return [0, 0, 0, 0];
    }
    let mut exp = frexp_exponent(max);
    let mut scale = ldexp(1.0, 8 - exp);
    if (f64::from(max) * scale).round() >= 256.0 {
        exp += 1;
        scale = ldexp(1.0, 8 - exp);
    }
    if exp + 128 > 255 {
        return [255, 255, 255, 255];
    }
    let q = |c: f32| (f64::from(c) * scale).round().min(255.0) as u8;
    [q(rgb[0]), q(rgb[1]), q(rgb[2]), (exp + 128) as u8]
}

/// Decodes `m * 2^(e - 136)` per channel; a zero exponent is black.
pub fn decode_rgbe(q: [u8; 4]) -> [f32; 3] {
    if q[3] == 0 {
        return [0.0; 3];
    }
    let f = ldexp(1.0, i32::from(q[3]) - RGBE_EXPONENT_BIAS);
    [
        (f64::from(q[0]) * f) as f32,
        (f64::from(q[1]) * f) as f32,
        (f64::from(q[2]) * f) as f32,
    ]
}

/// Exponent `e` with `v = f * 2^e`, `f` in `[0.5, 1)`.
fn frexp_exponent(v: f32) -> i32 {
    let v = f64::from(v);
    let mut e = v.log2().floor() as i32 + 1;
    // log2 rounding can be off by one near powers of two
    while ldexp(1.0, e - 1) > v {
        e -= 1;
    }
    while ldexp(1.0, e) <= v {
        e += 1;
    }
    e
}

fn ldexp(x: f64, e: i32) -> f64 {
    x * 2f64.powi(e)
}

/// Parses a Radiance RGBE file.
pub fn read_radiance_hdr(bytes: &[u8]) -> Result<HdrImage> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<&[u8]> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Truncated("header ends without newline".into()))?;
        *pos = start + rel + 1;
        Ok(&bytes[start..start + rel])
    };

    let magic = next_line(&mut pos)?;
    if !(magic.starts_with(b"#?RADIANCE") || magic.starts_with(b"#?RGBE")) {
        return Err(Error::Format("missing #?RADIANCE signature".into()));
    }
    loop {
        let line = next_line(&mut pos)?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix(b"FORMAT=") {
            if fmt != b"32-bit_rle_rgbe" {
                return Err(Error::Unsupported(format!(
                    "pixel format {}",
                    String::from_utf8_lossy(fmt)
                )));
            }
        }
    }
    let res = next_line(&mut pos)?;
    let res = std::str::from_utf8(res).map_err(|_| Error::Format("resolution line".into()))?;
    let (width, height) = parse_resolution(res)?;

    let mut data = Vec::with_capacity(width * height * 3);
    let mut scanline = vec![[0u8; 4]; width];
    for _ in 0..height {
        pos = read_scanline(bytes, pos, &mut scanline)?;
        for q in &scanline {
            data.extend_from_slice(&decode_rgbe(*q));
        }
    }
    Ok(HdrImage {
        width,
        height,
        data,
    })
}

fn parse_resolution(line: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::Format(format!("resolution line {line:?}")));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("resolution value {s:?}")))
    };
    match (parts[0], parts[2]) {
        ("-Y", "+X") => {
            let (h, w) = (num(parts[1])?, num(parts[3])?);
            if w == 0 || h == 0 {
                return Err(Error::Format("zero image dimension".into()));
            }
            Ok((w, h))
        }
        (a, b) if is_axis(a) && is_axis(b) => Err(Error::Unsupported(format!(
            "scanline orientation {a} {b}"
        ))),
        _ => Err(Error::Format(format!("resolution line {line:?}"))),
    }
}

fn is_axis(s: &str) -> bool {
    matches!(s, "-Y" | "+Y" | "-X" | "+X")
}

fn read_scanline(bytes: &[u8], mut pos: usize, out: &mut [[u8; 4]]) -> Result<usize> {
    let width = out.len();
    let truncated = || Error::Truncated("scanline data ends early".into());
    let head = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
    let adaptive_rle = (8..=0x7fff).contains(&width) && head[0] == 2 && head[1] == 2 && head[2] & 0x80 == 0;
    if adaptive_rle {
        let encoded_width = (usize::from(head[2]) << 8) | usize::from(head[3]);
        if encoded_width != width {
            return Err(Error::Format(format!(
                "scanline width {encoded_width} != {width}"
            )));
        }
        pos += 4;
        for ch in 0..4 {
            let mut x = 0;
            while x < width {
                let count = *bytes.get(pos).ok_or_else(truncated)? as usize;
                pos += 1;
                if count > 128 {
                    let run = count - 128;
                    if x + run > width {
                        return Err(Error::Format("run overflows scanline".into()));
                    }
                    let v = *bytes.get(pos).ok_or_else(truncated)?;
                    pos += 1;
                    for px in &mut out[x..x + run] {
                        px[ch] = v;
                    }
                    x += run;
                } else {
                    if count == 0 || x + count > width {
                        return Err(Error::Format("bad literal run".into()));
                    }
                    let lit = bytes.get(pos..pos + count).ok_or_else(truncated)?;
                    for (px, &v) in out[x..x + count].iter_mut().zip(lit) {
                        px[ch] = v;
                    }
                    pos += count;
                    x += count;
                }
            }
        }
        return Ok(pos);
    }

    // flat pixels, possibly with old-style (1,1,1,n) repeat markers
    let mut x = 0;
    let mut shift = 0;
    while x < width {
        let q = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
        pos += 4;
        if q[0] == 1 && q[1] == 1 && q[2] == 1 {
            if x == 0 {
                return Err(Error::Format("repeat marker at scanline start".into()));
            }
            let run = usize::from(q[3]) << shift;
            if x + run > width {
                return Err(Error::Format("repeat overflows scanline".into()));
            }
            let prev = out[x - 1];
            for px in &mut out[x..x + run] {
                *px = prev;
            }
            x += run;
            shift += 8;
        } else {
            out[x] = [q[0], q[1], q[2], q[3]];
            x += 1;
            shift = 0;
        }
    }
    Ok(pos)
}

/// Serializes an image as Radiance RGBE.
///
/// Scanlines use adaptive run-length encoding when the width allows it
/// (8..=32767), flat quadruples otherwise. Negative values are written as 0.
pub fn write_radiance_hdr(img: &HdrImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.data.len() + 64);
    out.extend_from_slice(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n");
    write!(out, "-Y {} +X {}\n", img.height, img.width).expect("write to vec");
    let rle = (8..=0x7fff).contains(&img.width);
    let mut quads = vec![[0u8; 4]; img.width];
    let mut channel = vec![0u8; img.width];
    for row in img.data.chunks_exact(img.width * 3) {
        for (q, px) in quads.iter_mut().zip(row.chunks_exact(3)) {
            *q = encode_rgbe([px[0], px[1], px[2]]);
        }
        if !rle {
            quads.iter().for_each(|q| out.extend_from_slice(q));
            continue;
        }
        out.extend_from_slice(&[2, 2, (img.width >> 8) as u8, (img.width & 0xff) as u8]);
        for ch in 0..4 {
            for (c, q) in channel.iter_mut().zip(&quads) {
                *c = q[ch];
            }
            rle_encode_channel(&channel, &mut out);
        }
    }
    out
}

fn rle_encode_channel(data: &[u8], out: &mut Vec<u8>) {
    const MIN_RUN: usize = 4;
    let n = data.len();
    let mut cur = 0;
    while cur < n {
        // find the next run of at least MIN_RUN equal bytes
        let mut beg_run = cur;
        let mut run_count = 0;
        let mut old_run_count = 0;
        while run_count < MIN_RUN && beg_run < n {
            beg_run += run_count;
            old_run_count = run_count;
            run_count = 1;
            while beg_run + run_count < n && run_count < 127 && data[beg_run] == data[beg_run + run_count]
            {
                run_count += 1;
            }
        }
        // a short run right before the long one is cheaper as a run
        if old_run_count > 1 && old_run_count == beg_run - cur {
            out.push((128 + old_run_count) as u8);
            out.push(data[cur]);
            cur = beg_run;
        }
        while cur < beg_run {
            let count = (beg_run - cur).min(128);
            out.push(count as u8);
            out.extend_from_slice(&data[cur..cur + count]);
            cur += count;
        }
        if run_count >= MIN_RUN {
            out.push((128 + run_count) as u8);
            out.push(data[beg_run]);
            cur += run_count;
        }
    }
}

/// `round(255 * clamp(exposure * v, 0, 1)^(1/gamma))` per channel.
pub fn tonemap(img: &HdrImage, exposure: f32, gamma: f32) -> Result<LdrImage> {
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(Error::Parameter(format!("exposure must be positive, got {exposure}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let inv_gamma = 1.0 / f64::from(gamma);
    let data = img
        .data
        .par_iter()
        .map(|&v| {
            let x = (f64::from(exposure) * f64::from(v)).clamp(0.0, 1.0);
            (255.0 * x.powf(inv_gamma)).round() as u8
        })
        .collect();
    Ok(LdrImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Encodes an 8-bit RGB PNG.
pub fn write_png(img: &LdrImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        writer
            .write_image_data(&img.data)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Decodes an 8-bit PNG into RGB, dropping alpha and expanding grayscale.
pub fn read_png(bytes: &[u8]) -> Result<LdrImage> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let data = match info.color_type {
        png::ColorType::Rgb => buf.to_vec(),
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(Error::Unsupported(format!("png color type {other:?}"))),
    };
    LdrImage::new(w, h, data)
}
