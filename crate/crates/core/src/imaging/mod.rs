//! 8-bit RGB images: PNG I/O, bilinear resizing, conversion to and from
//! network tensors, and labeled contact sheets.

mod font;
mod sheet;

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::LossNetwork;
use crate::tensor::Tensor;

pub use sheet::{contact_sheet, failed_cell, sheet_dimensions, SheetLayout, BAND, GUTTER};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!(
                "image extents must be positive, got {width}×{height}"
            )));
        }
        if samples.len() != 3 * width * height {
            return Err(Error::Image(format!(
                "{width}×{height} RGB image needs {} samples, got {}",
                3 * width * height,
                samples.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let samples = rgb
            .iter()
            .copied()
            .cycle()
            .take(3 * width * height)
            .collect();
        RgbImage {
            width,
            height,
            samples,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.samples[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies `src` with its top-left corner at `(x, y)`; must fit.
    pub fn blit(&mut self, src: &RgbImage, x: usize, y: usize) {
        assert!(x + src.width <= self.width && y + src.height <= self.height);
        for row in 0..src.height {
            let d = 3 * ((y + row) * self.width + x);
            let s = 3 * row * src.width;
            self.samples[d..d + 3 * src.width].copy_from_slice(&src.samples[s..s + 3 * src.width]);
        }
    }

    /// Center crop to `width × height` (each no larger than the current size).
    pub fn center_crop(&self, width: usize, height: usize) -> RgbImage {
        assert!(width <= self.width && height <= self.height && width > 0 && height > 0);
        let (x0, y0) = ((self.width - width) / 2, (self.height - height) / 2);
        let mut out = RgbImage::filled(width, height, [0; 3]);
        for y in 0..height {
            let s = 3 * ((y0 + y) * self.width + x0);
            out.samples[3 * y * width..3 * (y + 1) * width]
                .copy_from_slice(&self.samples[s..s + 3 * width]);
        }
        out
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let malformed = |e: png::DecodingError| Error::Image(format!("malformed PNG: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(malformed)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::Unsupported(format!(
            "PNG bit depth {depth:?}; only 8-bit images are supported"
        )));
    }
    let channels = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Indexed => {
            return Err(Error::Unsupported("indexed-color PNG".into()));
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(malformed)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let mut samples = Vec::with_capacity(3 * width * height);
    for y in 0..height {
        let row = &buf[y * info.line_size..][..width * channels];
        for px in row.chunks_exact(channels) {
            match channels {
                1 | 2 => samples.extend_from_slice(&[px[0]; 3]),
                _ => samples.extend_from_slice(&px[..3]),
            }
        }
    }
    RgbImage::new(width, height, samples)
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let encoding = |e: png::EncodingError| Error::Image(format!("PNG encoding failed: {e}"));
        let mut writer = encoder.write_header().map_err(encoding)?;
        writer.write_image_data(&image.samples).map_err(encoding)?;
        writer.finish().map_err(encoding)?;
    }
    Ok(out)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_png(&fs::read(path)?)
}

pub fn save_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_png(image)?)?;
    Ok(())
}

/// Target extents for scaling `(width, height)` so the longest side equals
/// `longest_side`.
pub fn scaled_extents(width: usize, height: usize, longest_side: usize) -> (usize, usize) {
    if width >= height {
        let h = ((height as f64) * longest_side as f64 / width as f64)
            .round()
            .max(1.0) as usize;
        (longest_side, h)
    } else {
        let w = ((width as f64) * longest_side as f64 / height as f64)
            .round()
            .max(1.0) as usize;
        (w, longest_side)
    }
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize_bilinear(image: &RgbImage, longest_side: usize) -> Result<RgbImage> {
    if longest_side < 8 {
        return Err(Error::field(
            "image_size",
            format!("longest side must be ≥ 8, got {longest_side}"),
        ));
    }
    let (w, h) = scaled_extents(image.width, image.height, longest_side);
    if (w, h) == (image.width, image.height) {
        return Ok(image.clone());
    }
    let axis = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = axis(w, image.width);
    let ys = axis(h, image.height);
    let mut samples = Vec::with_capacity(3 * w * h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |x: usize, y: usize| image.samples[3 * (y * image.width + x) + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                samples.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(w, h, samples)
}

/// Scales samples to `[0, 1]` and subtracts the network's channel means,
/// producing a `3 × H × W` tensor.
pub fn preprocess(image: &RgbImage, net: &LossNetwork) -> Tensor {
    preprocess_with_means(image, net.channel_means())
}

pub fn preprocess_with_means(image: &RgbImage, means: [f64; 3]) -> Tensor {
    let plane = image.width * image.height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in image.samples.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0 - means[c];
        }
    }
    Tensor::from_parts(vec![3, image.height, image.width], data)
}

/// Inverse of [`preprocess`]: adds the means back, clamps to `[0, 1]` and
/// quantizes to 8 bits.
pub fn deprocess(tensor: &Tensor, net: &LossNetwork) -> Result<RgbImage> {
    deprocess_with_means(tensor, net.channel_means())
}

pub fn deprocess_with_means(tensor: &Tensor, means: [f64; 3]) -> Result<RgbImage> {
    let (c, h, w) = tensor.dims3()?;
    if c != 3 {
        return Err(Error::Image(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let data = tensor.data();
    let mut samples = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            let v = (data[ch * plane + i] + means[ch]).clamp(0.0, 1.0);
            samples.push((v * 255.0).round() as u8);
        }
    }
    RgbImage::new(w, h, samples)
}
