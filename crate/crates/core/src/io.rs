//! PNG images, masks, CSV and atomic file writes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ndiff::Tensor;

/// `[-1, 1]` → `0..=255`, round half to even, clamped.
pub fn quantize(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes to `<path>.tmp` and renames over `path` once complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn image_err(path: &Path, detail: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

fn encode(path: &Path, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().map_err(|e| image_err(path, e))?;
        w.write_image_data(data).map_err(|e| image_err(path, e))?;
    }
    Ok(out)
}

/// Encodes a `[3, H, W]` tensor as 8-bit RGB.
pub fn png_bytes(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim("png", format!("expected [3, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let d = image.data();
    let mut rgb = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            rgb.push(quantize(d[c * plane + p]));
        }
    }
    encode(Path::new("<memory>"), w, h, png::ColorType::Rgb, png::BitDepth::Eight, &rgb)
}

pub fn write_png(path: &Path, image: &Tensor) -> Result<()> {
    write_atomic(path, &png_bytes(image)?)
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    pixels: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| image_err(path, e))?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(image_err(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        pixels: buf,
    })
}

/// Reads an 8-bit PNG as a `[3, H, W]` tensor in `[-1, 1]`. Grayscale is
/// replicated to three channels; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let d = decode(path)?;
    let stride = match d.color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(image_err(path, "unexpanded palette")),
    };
    let plane = d.width * d.height;
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in d.pixels.chunks_exact(stride).enumerate() {
        for c in 0..3 {
            let v = if stride < 3 { px[0] } else { px[c] };
            data[c * plane + p] = dequantize(v);
        }
    }
    Tensor::new(vec![3, d.height, d.width], data)
}

/// Writes a `[1, H, W]` binary mask as a 1-bit grayscale PNG.
pub fn write_mask(path: &Path, mask: &Tensor) -> Result<()> {
    let s = mask.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::dim("mask png", format!("expected [1, H, W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let row_bytes = w.div_ceil(8);
    let mut packed = vec![0u8; row_bytes * h];
    for y in 0..h {
        for x in 0..w {
            if mask.data()[y * w + x] > 0.5 {
                packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let bytes = encode(path, w, h, png::ColorType::Grayscale, png::BitDepth::One, &packed)?;
    write_atomic(path, &bytes)
}

/// Reads a grayscale PNG mask; any nonzero pixel counts as observed (1).
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let d = decode(path)?;
    let stride = match d.color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(image_err(path, "unexpanded palette")),
    };
    let data = d
        .pixels
        .chunks_exact(stride)
        .map(|px| if px[0] > 0 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![1, d.height, d.width], data)
}

/// Sorted `*.png` paths in a directory.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Minimal CSV builder. Fields are written verbatim; none of ours need quoting.
#[derive(Clone, Debug, Default)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut c = Csv::default();
        c.row(header);
        c
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        let line: Vec<&str> = fields.iter().map(|f| f.as_ref()).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}

/// Scientific notation with 9 significant digits, used by every numeric
/// report (feature-space losses are small).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.8e}")
}
