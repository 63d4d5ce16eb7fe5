use std::path::Path;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Half-width of the square world region shown in every frame.
pub const VIEW_EXTENT: f64 = 1.2;

pub type Rgb = [u8; 3];

/// One rendered `3 x H x W` image, channel-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    size: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(size: usize, background: Rgb) -> Self {
        let plane = size * size;
        let mut data = vec![0u8; CHANNELS * plane];
        for (c, chunk) in data.chunks_mut(plane).enumerate() {
            chunk.fill(background[c]);
        }
        Frame { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let plane = self.size * self.size;
        let i = row * self.size + col;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    fn put(&mut self, row: usize, col: usize, color: Rgb) {
        let plane = self.size * self.size;
        let i = row * self.size + col;
        self.data[i] = color[0];
        self.data[plane + i] = color[1];
        self.data[2 * plane + i] = color[2];
    }

    /// World coordinates of a pixel centre; y points up.
    fn world(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.size as f64;
        let x = (col as f64 + 0.5) / s * 2.0 * VIEW_EXTENT - VIEW_EXTENT;
        let y = VIEW_EXTENT - (row as f64 + 0.5) / s * 2.0 * VIEW_EXTENT;
        (x, y)
    }

    /// Paints every pixel whose centre satisfies `inside`. No anti-aliasing.
    pub fn fill_where(&mut self, color: Rgb, inside: impl Fn(f64, f64) -> bool) {
        for row in 0..self.size {
            for col in 0..self.size {
                let (x, y) = self.world(row, col);
                if inside(x, y) {
                    self.put(row, col, color);
                }
            }
        }
    }

    pub fn disc(&mut self, cx: f64, cy: f64, radius: f64, color: Rgb) {
        let r2 = radius * radius;
        self.fill_where(color, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r2);
    }

    /// Thick segment from `a` to `b`.
    pub fn segment(&mut self, a: (f64, f64), b: (f64, f64), half_width: f64, color: Rgb) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        self.fill_where(color, |x, y| {
            let t = if len2 > 0.0 { (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (px, py) = (a.0 + t * dx - x, a.1 + t * dy - y);
            px * px + py * py <= half_width * half_width
        });
    }

    /// Writes the frame as an 8-bit RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_rgb_png(path, self.size, &self.data)
    }
}

/// Writes a channel-major `3 x size x size` buffer as PNG.
pub fn save_rgb_png(path: &Path, size: usize, chw: &[u8]) -> Result<()> {
    let plane = size * size;
    if chw.len() != CHANNELS * plane {
        return Err(Error::Config(format!("expected {} bytes for a {size}px frame", CHANNELS * plane)));
    }
    let mut hwc = Vec::with_capacity(chw.len());
    for i in 0..plane {
        for c in 0..CHANNELS {
            hwc.push(chw[c * plane + i]);
        }
    }
    let side = u32::try_from(size).map_err(|_| Error::Config("frame too large".into()))?;
    image::save_buffer(path, &hwc, side, side, image::ColorType::Rgb8)
        .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
}
