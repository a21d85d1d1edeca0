//! 8-bit RGB rasters, PNG I/O, and conversion to model tensors.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::Image;

/// Square 8-bit RGB image, row-major HWC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    size: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(size: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != size * size * 3 {
            return Err(Error::invalid(format!("expected {} bytes for a {size}x{size} RGB image, got {}", size * size * 3, data.len())));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.size as u32, self.size as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::format("png encode", e))?;
            writer.write_image_data(&self.data).map_err(|e| Error::format("png encode", e))?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| Error::format("png decode", e))?;
        let info = reader.info();
        let (w, h) = (info.width as usize, info.height as usize);
        if w != h {
            return Err(Error::format("png decode", format!("image must be square, got {w}x{h}")));
        }
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format("png decode", "image too large"))?];
        let frame = reader.next_frame(&mut buf).map_err(|e| Error::format("png decode", e))?;
        if frame.bit_depth != png::BitDepth::Eight {
            return Err(Error::format("png decode", "only 8-bit images are supported"));
        }
        let data = match frame.color_type {
            png::ColorType::Rgb => buf[..w * h * 3].to_vec(),
            png::ColorType::Rgba => buf[..w * h * 4].chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf[..w * h].iter().flat_map(|&g| [g, g, g]).collect(),
            other => return Err(Error::format("png decode", format!("unsupported colour type {other:?}"))),
        };
        Self::new(w, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    /// Scale `[0, 255]` to `[-1, 1]`, HWC to CHW.
    pub fn to_model(&self) -> Image {
        let n = self.size * self.size;
        let mut v = vec![0.0f32; 3 * n];
        for (p, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                v[c * n + p] = px[c] as f32 / 127.5 - 1.0;
            }
        }
        Image::from_chw(self.size, v).expect("values are in range by construction")
    }

    /// Inverse of [`to_model`](Self::to_model) with rounding.
    pub fn from_model(img: &Image) -> Self {
        let size = img.size();
        let n = size * size;
        let src = img.values();
        let mut data = vec![0u8; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                let v = ((src[c * n + p] as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0);
                data[p * 3 + c] = v as u8;
            }
        }
        Self { size, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_model_round_trip() {
        let data: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 17 % 256) as u8).collect();
        let img = RgbImage::new(4, data).unwrap();
        let back = RgbImage::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(img, back);
        assert_eq!(RgbImage::from_model(&img.to_model()), img);
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(RgbImage::decode_png(b"not a png"), Err(Error::Format { .. })));
    }
}
