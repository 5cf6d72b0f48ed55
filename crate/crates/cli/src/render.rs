//! Small raster toolkit: filled rectangles, thick lines, markers, a
//! perceptual colormap and PNG encoding.

use std::io::Cursor;

use anyhow::Result;
use image::{ImageFormat, Rgb, RgbImage};

pub type Color = Rgb<u8>;

pub const WHITE: Color = Rgb([255, 255, 255]);
pub const BLACK: Color = Rgb([0, 0, 0]);
pub const GRAY: Color = Rgb([128, 128, 128]);
pub const LIGHT: Color = Rgb([225, 225, 225]);

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

pub fn series_color(k: usize) -> Color {
    Rgb(PALETTE[k % PALETTE.len()])
}

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Viridis-like ramp; `t` is clamped to [0, 1] and NaN maps to gray.
pub fn colormap(t: f64) -> Color {
    if t.is_nan() {
        return GRAY;
    }
    let x = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let k = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - k as f64;
    let c = |i: usize| (VIRIDIS[k][i] + f * (VIRIDIS[k + 1][i] - VIRIDIS[k][i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32, background: Color) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, background),
        }
    }

    pub fn put(&mut self, x: i64, y: i64, c: Color) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Color) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    fn brush(&mut self, x: i64, y: i64, thickness: i64, c: Color) {
        let r = thickness / 2;
        self.fill_rect(x - r, y - r, thickness.max(1), thickness.max(1), c);
    }

    /// Bresenham with a square brush.
    pub fn line(&mut self, from: (f64, f64), to: (f64, f64), c: Color, thickness: i64) {
        let (mut x0, mut y0) = (from.0.round() as i64, from.1.round() as i64);
        let (x1, y1) = (to.0.round() as i64, to.1.round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.brush(x0, y0, thickness, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], c: Color, thickness: i64) {
        for w in pts.windows(2) {
            self.line(w[0], w[1], c, thickness);
        }
    }

    pub fn polygon(&mut self, pts: &[(f64, f64)], c: Color, thickness: i64) {
        self.polyline(pts, c, thickness);
        if pts.len() > 2 {
            self.line(pts[pts.len() - 1], pts[0], c, thickness);
        }
    }

    pub fn cross(&mut self, at: (f64, f64), size: f64, c: Color, thickness: i64) {
        self.line((at.0 - size, at.1 - size), (at.0 + size, at.1 + size), c, thickness);
        self.line((at.0 - size, at.1 + size), (at.0 + size, at.1 - size), c, thickness);
    }

    pub fn disc(&mut self, at: (f64, f64), r: f64, c: Color) {
        let (cx, cy) = (at.0.round() as i64, at.1.round() as i64);
        let ri = r.ceil() as i64;
        for y in -ri..=ri {
            for x in -ri..=ri {
                if ((x * x + y * y) as f64) <= r * r {
                    self.put(cx + x, cy + y, c);
                }
            }
        }
    }

    pub fn square(&mut self, at: (f64, f64), half: f64, c: Color, thickness: i64) {
        let (x0, y0, x1, y1) = (at.0 - half, at.1 - half, at.0 + half, at.1 + half);
        self.polygon(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)], c, thickness);
    }

    pub fn png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(-3.0), colormap(0.0));
        assert_eq!(colormap(f64::NAN), GRAY);
    }

    #[test]
    fn line_covers_both_endpoints_and_clips() {
        let mut c = Canvas::new(10, 10, WHITE);
        c.line((1.0, 1.0), (8.0, 5.0), BLACK, 1);
        assert_eq!(*c.img.get_pixel(1, 1), BLACK);
        assert_eq!(*c.img.get_pixel(8, 5), BLACK);
        c.line((-5.0, -5.0), (20.0, 20.0), BLACK, 3);
        assert_eq!(*c.img.get_pixel(9, 9), BLACK);
    }
}
