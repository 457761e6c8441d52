//! Scene rasterizer and binary PPM (P6) io.
//!
//! No anti-aliasing: every pixel is either pure white background or an
//! exact palette color, so detection reduces to nearest-color lookup.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Cell, SceneSpec, Shape, GRID};
use crate::error::{Error, Result};

pub const SUPPORTED_RESOLUTIONS: [usize; 2] = [32, 48];

/// RGB float image in [0,1], row-major (y, x, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn white(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![1.0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn short_side(&self) -> usize {
        self.width.min(self.height)
    }
}

fn inside(shape: Shape, px: f32, py: f32, cx: f32, cy: f32, r: f32) -> bool {
    match shape {
        Shape::Circle => {
            let dx = px - cx;
            let dy = py - cy;
            dx * dx + dy * dy <= r * r
        }
        Shape::Square => (px - cx).abs() <= r && (py - cy).abs() <= r,
        Shape::Triangle => {
            // Upward triangle: apex (cx, cy-r), base corners (cx±r, cy+r).
            let (ax, ay) = (cx, cy - r);
            let (bx, by) = (cx - r, cy + r);
            let (dx, dy) = (cx + r, cy + r);
            let sign = |x1: f32, y1: f32, x2: f32, y2: f32| {
                (px - x2) * (y1 - y2) - (x1 - x2) * (py - y2)
            };
            let d1 = sign(ax, ay, bx, by);
            let d2 = sign(bx, by, dx, dy);
            let d3 = sign(dx, dy, ax, ay);
            let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
            let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
            !(has_neg && has_pos)
        }
    }
}

/// Geometry of a shape centered in a grid cell at a given resolution.
pub fn cell_geometry(cell: Cell, resolution: usize) -> (f32, f32, f32) {
    let cs = resolution as f32 / GRID as f32;
    let cx = (cell.col as f32 + 0.5) * cs;
    let cy = (cell.row as f32 + 0.5) * cs;
    let r = 0.35 * cs;
    (cx, cy, r)
}

/// Render a scene at 32 or 48 pixels. Pure function of its arguments.
pub fn render(spec: &SceneSpec, resolution: usize) -> Result<Image> {
    if !SUPPORTED_RESOLUTIONS.contains(&resolution) {
        return Err(Error::contract(format!(
            "unsupported render resolution {resolution}"
        )));
    }
    let mut img = Image::white(resolution, resolution);
    for obj in &spec.objects {
        let (cx, cy, r) = cell_geometry(obj.cell, resolution);
        let rgb = obj.color.rgb();
        let x0 = ((cx - r - 1.0).floor().max(0.0)) as usize;
        let x1 = ((cx + r + 1.0).ceil() as usize).min(resolution);
        let y0 = ((cy - r - 1.0).floor().max(0.0)) as usize;
        let y1 = ((cy + r + 1.0).ceil() as usize).min(resolution);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                if inside(obj.shape, px, py, cx, cy, r) {
                    img.set_pixel(x, y, rgb);
                }
            }
        }
    }
    Ok(img)
}

/// Write an image as binary PPM, mapping [0,1] floats to bytes.
pub fn ppm_write(img: &Image, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(img.data.len() + 32);
    write!(buf, "P6\n{} {}\n255\n", img.width, img.height)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for v in &img.data {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a binary PPM written by [`ppm_write`] (maxval 255).
pub fn ppm_read(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            Error::format(start as u64, "non-utf8 PPM header field")
        })?);
    }
    if fields.len() != 4 || fields[0] != "P6" {
        return Err(Error::format(0, "not a binary PPM (P6) file"));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|_| Error::format(3, "bad width"))?;
    let height: usize = fields[2]
        .parse()
        .map_err(|_| Error::format(3, "bad height"))?;
    if fields[3] != "255" {
        return Err(Error::format(pos as u64, "maxval must be 255"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated pixel data: need {need} bytes"),
        ));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Ok(Image {
        width,
        height,
        data,
    })
}

/// Nearest-neighbor resize; exact palette colors survive.
pub fn resize_nearest(img: &Image, width: usize, height: usize) -> Image {
    let mut out = Image::white(width, height);
    for y in 0..height {
        let sy = (y as f32 + 0.5) * img.height as f32 / height as f32;
        let sy = (sy as usize).min(img.height - 1);
        for x in 0..width {
            let sx = (x as f32 + 0.5) * img.width as f32 / width as f32;
            let sx = (sx as usize).min(img.width - 1);
            out.set_pixel(x, y, img.pixel(sx, sy));
        }
    }
    out
}
