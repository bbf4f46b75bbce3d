//! Grayscale images, bilinear sampling and zero-normalised
//! cross-correlation (ZNCC) template matching.
//!
//! Pixel `(i, j)` is centred on the continuous coordinate `(u, v) = (i, j)`.

use std::path::Path;

use thiserror::Error;

use crate::types::BBox;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {source}")]
    Read { path: String, source: image::ImageError },
    #[error("cannot write image {path}: {source}")]
    Write { path: String, source: image::ImageError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|source| ImageError::Read { path: path.display().to_string(), source })?.into_luma8();
        let (w, h) = img.dimensions();
        Ok(Self { width: w as usize, height: h as usize, data: img.into_raw().into_iter().map(f32::from).collect() })
    }

    /// Saves as 8-bit PNG, rounding and clamping each pixel.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let bytes: Vec<u8> = self.data.iter().map(|&p| p.round().clamp(0.0, 255.0) as u8).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png).map_err(|source| ImageError::Write { path: path.display().to_string(), source })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    /// Bilinear sample; coordinates outside the image clamp to the border.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let p = |x, y| f64::from(self.get(x, y));
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Integer crop with top-left `(x, y)`; `None` if it leaves the image.
    pub fn crop(&self, x: i64, y: i64, w: usize, h: usize) -> Option<GrayImage> {
        if x < 0 || y < 0 || x as usize + w > self.width || y as usize + h > self.height || w == 0 || h == 0 {
            return None;
        }
        let (x, y) = (x as usize, y as usize);
        Some(GrayImage::from_fn(w, h, |i, j| self.get(x + i, y + j)))
    }

    /// Resamples the region `bbox` onto a `w × h` grid of cell centres. Box
    /// edges lie on pixel borders, so `[3.5, 9.5]` spans pixels 4 to 9.
    pub fn resample(&self, bbox: &BBox, w: usize, h: usize) -> GrayImage {
        let sx = bbox.width() / w as f64;
        let sy = bbox.height() / h as f64;
        GrayImage::from_fn(w, h, |i, j| {
            let u = bbox.u_min + (i as f64 + 0.5) * sx;
            let v = bbox.v_min + (j as f64 + 0.5) * sy;
            self.sample(u, v) as f32
        })
    }
}

/// ZNCC of two equally sized patches. Flat patches score 0.
pub fn zncc(a: &GrayImage, b: &GrayImage) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "patch sizes differ");
    let n = a.data.len() as f64;
    let mean_a = a.data.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
    let mean_b = b.data.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
    let (mut cross, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (&pa, &pb) in a.data.iter().zip(&b.data) {
        let da = f64::from(pa) - mean_a;
        let db = f64::from(pb) - mean_b;
        cross += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a <= 0.0 || var_b <= 0.0 {
        return 0.0;
    }
    (cross / (var_a * var_b).sqrt()).clamp(-1.0, 1.0)
}

/// Summed-area tables of pixel values and their squares.
struct Integral {
    width: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(img: &GrayImage) -> Self {
        let w = img.width + 1;
        let mut sum = vec![0.0; w * (img.height + 1)];
        let mut sq = sum.clone();
        for y in 0..img.height {
            let (mut row, mut row_sq) = (0.0, 0.0);
            for x in 0..img.width {
                let p = f64::from(img.get(x, y));
                row += p;
                row_sq += p * p;
                sum[(y + 1) * w + x + 1] = sum[y * w + x + 1] + row;
                sq[(y + 1) * w + x + 1] = sq[y * w + x + 1] + row_sq;
            }
        }
        Self { width: w, sum, sq }
    }

    fn rect(&self, table: &[f64], x: usize, y: usize, w: usize, h: usize) -> f64 {
        let s = self.width;
        table[(y + h) * s + x + w] - table[y * s + x + w] - table[(y + h) * s + x] + table[y * s + x]
    }
}

/// Best match of a template within a search region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Sub-pixel top-left corner of the template in the image.
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Exhaustive ZNCC search for `template` with its top-left corner within
/// `[x0 − radius, x0 + radius] × [y0 − radius, y0 + radius]`, clipped to the
/// image. The integer peak is refined with a parabola fitted along each axis.
pub fn match_template(image: &GrayImage, template: &GrayImage, x0: i64, y0: i64, radius: usize) -> Option<Match> {
    let (tw, th) = (template.width, template.height);
    if tw > image.width || th > image.height {
        return None;
    }
    let r = radius as i64;
    let x_lo = (x0 - r).max(0);
    let y_lo = (y0 - r).max(0);
    let x_hi = (x0 + r).min((image.width - tw) as i64);
    let y_hi = (y0 + r).min((image.height - th) as i64);
    if x_lo > x_hi || y_lo > y_hi {
        return None;
    }

    let n = (tw * th) as f64;
    let t_mean = template.data.iter().map(|&p| f64::from(p)).sum::<f64>() / n;
    let t_zero: Vec<f64> = template.data.iter().map(|&p| f64::from(p) - t_mean).collect();
    let t_norm = t_zero.iter().map(|d| d * d).sum::<f64>().sqrt();
    if t_norm <= 0.0 {
        return None;
    }
    let integral = Integral::new(image);

    let cols = (x_hi - x_lo + 1) as usize;
    let rows = (y_hi - y_lo + 1) as usize;
    let mut scores = vec![f64::NEG_INFINITY; cols * rows];
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for j in 0..rows {
        for i in 0..cols {
            let (x, y) = (x_lo as usize + i, y_lo as usize + j);
            let s = integral.rect(&integral.sum, x, y, tw, th);
            let sq = integral.rect(&integral.sq, x, y, tw, th);
            let var = sq - s * s / n;
            let score = if var > 1e-9 {
                let mut cross = 0.0;
                for ty in 0..th {
                    let row = &image.data[(y + ty) * image.width + x..][..tw];
                    let trow = &t_zero[ty * tw..][..tw];
                    cross += row.iter().zip(trow).map(|(&p, &t)| f64::from(p) * t).sum::<f64>();
                }
                cross / (t_norm * var.sqrt())
            } else {
                0.0
            };
            scores[j * cols + i] = score;
            if score > best.2 {
                best = (i, j, score);
            }
        }
    }

    let (bi, bj, peak) = best;
    if peak >= 1.0 - 1e-12 {
        // A perfect match cannot be improved by interpolation.
        return Some(Match { x: (x_lo as usize + bi) as f64, y: (y_lo as usize + bj) as f64, score: 1.0 });
    }
    let at = |i: usize, j: usize| scores[j * cols + i];
    let dx = if bi > 0 && bi + 1 < cols { parabola_offset(at(bi - 1, bj), peak, at(bi + 1, bj)) } else { 0.0 };
    let dy = if bj > 0 && bj + 1 < rows { parabola_offset(at(bi, bj - 1), peak, at(bi, bj + 1)) } else { 0.0 };
    Some(Match { x: (x_lo as usize + bi) as f64 + dx, y: (y_lo as usize + bj) as f64 + dy, score: peak.min(1.0) })
}

/// Vertex offset of the parabola through `(-1, a)`, `(0, b)`, `(1, c)`.
fn parabola_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, shift: (f64, f64)) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (u, v) = (x as f64 - shift.0, y as f64 - shift.1);
            (128.0 + 40.0 * (0.31 * u).sin() * (0.23 * v).cos() + 30.0 * (0.17 * u + 0.29 * v).sin()) as f32
        })
    }

    #[test]
    fn bilinear_hits_pixels_and_midpoints() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + 10 * y) as f32);
        assert_eq!(img.sample(2.0, 1.0), 12.0);
        assert_eq!(img.sample(0.5, 0.5), 5.5);
        assert_eq!(img.sample(-4.0, 9.0), 10.0);
    }

    #[test]
    fn zncc_is_affine_invariant() {
        let a = textured(16, 12, (0.0, 0.0));
        let mut b = a.clone();
        b.data.iter_mut().for_each(|p| *p = 3.0 * *p - 7.0);
        assert!((zncc(&a, &b) - 1.0).abs() < 1e-12);
        b.data.iter_mut().for_each(|p| *p = -*p);
        assert!((zncc(&a, &b) + 1.0).abs() < 1e-12);
        assert_eq!(zncc(&a, &GrayImage::new(16, 12)), 0.0);
    }

    #[test]
    fn integral_matches_direct_sum() {
        let img = textured(9, 7, (0.0, 0.0));
        let it = Integral::new(&img);
        let direct: f64 = (2..6).flat_map(|y| (1..4).map(move |x| (x, y))).map(|(x, y)| f64::from(img.get(x, y))).sum();
        assert!((it.rect(&it.sum, 1, 2, 3, 4) - direct).abs() < 1e-9);
    }

    #[test]
    fn finds_integer_shift_exactly() {
        let img = textured(80, 60, (0.0, 0.0));
        let tpl = img.crop(30, 20, 15, 11).unwrap();
        let m = match_template(&img, &tpl, 25, 24, 8).unwrap();
        assert!((m.x - 30.0).abs() < 1e-9 && (m.y - 20.0).abs() < 1e-9, "{m:?}");
        assert!((m.score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn refines_subpixel_shift() {
        let img = textured(80, 60, (0.0, 0.0));
        let tpl = img.crop(30, 20, 15, 11).unwrap();
        let shifted = textured(80, 60, (2.4, -1.3));
        let m = match_template(&shifted, &tpl, 30, 20, 6).unwrap();
        assert!((m.x - 32.4).abs() < 0.25 && (m.y - 18.7).abs() < 0.25, "{m:?}");
    }

    #[test]
    fn search_outside_image_is_none() {
        let img = textured(40, 40, (0.0, 0.0));
        let tpl = img.crop(0, 0, 10, 10).unwrap();
        assert!(match_template(&img, &tpl, 100, 100, 5).is_none());
        assert!(img.crop(35, 0, 10, 10).is_none());
    }

    #[test]
    fn resample_identity_grid() {
        let img = textured(20, 20, (0.0, 0.0));
        let patch = img.resample(&BBox::new(3.5, 4.5, 9.5, 8.5), 6, 4);
        assert_eq!(patch, img.crop(4, 5, 6, 4).unwrap());
    }
}
