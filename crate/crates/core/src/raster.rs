//! Minimal raster output: RGB buffers, PNG/PPM encoding, a jet colormap and
//! a 5x7 bitmap font for legends.

use std::path::Path;

use crate::error::{DeduceError, Result};
use crate::types::Provenance;

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        RgbImage { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(DeduceError::Shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.data[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn fill_rect(&mut self, x: usize, y: usize, w: usize, h: usize, c: Rgb) {
        for yy in y..(y + h).min(self.height) {
            for xx in x..(x + w).min(self.width) {
                self.set(xx, yy, c);
            }
        }
    }

    /// Draws `text` (upper-cased) with the 5x7 font, top-left at `(x, y)`.
    pub fn draw_text(&mut self, x: usize, y: usize, text: &str, c: Rgb) {
        for (i, ch) in text.chars().enumerate() {
            let glyph = glyph(ch);
            let gx = x + i * (GLYPH_W + 1);
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - col)) != 0 {
                        self.set(gx + col, y + row, c);
                    }
                }
            }
        }
    }

    /// Binary PPM (P6) with an optional provenance comment.
    pub fn to_ppm(&self, provenance: Option<&Provenance>) -> Vec<u8> {
        let mut out = b"P6\n".to_vec();
        if let Some(p) = provenance {
            out.extend_from_slice(format!("# {}\n", p.comment_line()).as_bytes());
        }
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn to_png(&self, provenance: Option<&Provenance>) -> Result<Vec<u8>> {
        encode_png(self.width, self.height, png::ColorType::Rgb, &self.data, provenance)
    }

    pub fn save_png(&self, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png(provenance)?).map_err(|e| DeduceError::io(path, e))
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>, provenance: Option<&Provenance>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_ppm(provenance)).map_err(|e| DeduceError::io(path, e))
    }
}

/// Encodes 8-bit pixels as PNG. Provenance goes into a `tEXt` chunk ahead of the image data.
pub fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
    provenance: Option<&Provenance>,
) -> Result<Vec<u8>> {
    let enc_err = |e: png::EncodingError| DeduceError::Encode(e.to_string());
    let (w, h) = (
        u32::try_from(width).map_err(|_| DeduceError::Encode("width too large".into()))?,
        u32::try_from(height).map_err(|_| DeduceError::Encode("height too large".into()))?,
    );
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w, h);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        if let Some(p) = provenance {
            encoder
                .add_text_chunk("deduce".to_string(), p.comment_line())
                .map_err(enc_err)?;
        }
        let mut writer = encoder.write_header().map_err(enc_err)?;
        writer.write_image_data(data).map_err(enc_err)?;
        writer.finish().map_err(enc_err)?;
    }
    Ok(out)
}

/// Grayscale PNG.
pub fn gray_png(width: usize, height: usize, data: &[u8], provenance: Option<&Provenance>) -> Result<Vec<u8>> {
    encode_png(width, height, png::ColorType::Grayscale, data, provenance)
}

/// Jet colormap for `v` in [0, 1].
pub fn jet(v: f64) -> Rgb {
    let v = v.clamp(0.0, 1.0);
    let ch = |center: f64| ((1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Blends a colormapped heatmap over an image of the same size.
pub fn overlay(image: &RgbImage, heat: &[f64], alpha: f64) -> Result<RgbImage> {
    if heat.len() != image.width * image.height {
        return Err(DeduceError::Shape(format!(
            "heatmap has {} values for a {}x{} image",
            heat.len(),
            image.width,
            image.height
        )));
    }
    let mut out = image.clone();
    for (px, v) in out.data.chunks_exact_mut(3).zip(heat) {
        for (p, c) in px.iter_mut().zip(jet(*v)) {
            *p = ((1.0 - alpha) * *p as f64 + alpha * c as f64).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

fn glyph(ch: char) -> [u8; GLYPH_H] {
    match ch.to_ascii_uppercase() {
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        '_' | '-' => [0, 0, 0, 0, 0, 0, 0b11111],
        _ => [0; GLYPH_H],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_endpoints() {
        assert_eq!(jet(0.0), [0, 0, 128]);
        assert_eq!(jet(1.0), [128, 0, 0]);
        assert_eq!(jet(0.5), [128, 255, 128]);
    }

    #[test]
    fn ppm_layout() {
        let img = RgbImage::filled(2, 1, [1, 2, 3]);
        assert_eq!(img.to_ppm(None), b"P6\n2 1\n255\n\x01\x02\x03\x01\x02\x03".to_vec());
    }

    #[test]
    fn png_signature_and_text() {
        let img = RgbImage::filled(3, 2, WHITE);
        let bytes = img.to_png(Some(&Provenance::new(Some(1), "abc"))).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        let needle = b"tEXtdeduce";
        assert!(bytes.windows(needle.len()).any(|w| w == needle));
    }

    #[test]
    fn text_draws_pixels() {
        let mut img = RgbImage::filled(20, 10, WHITE);
        img.draw_text(0, 0, "l", BLACK);
        assert_eq!(img.get(0, 6), BLACK);
        assert_eq!(img.get(4, 6), BLACK);
        assert_eq!(img.get(4, 0), WHITE);
    }
}
