//! Harris corner detector with patch descriptors.
//!
//! Stand-in for an external detector so the pipeline runs from raw PGM
//! images. Corners are integer-pixel (no sub-pixel refinement).

use super::{FeatureError, FeatureSet, GrayImage, Keypoint};

pub const DETECTOR_DESCRIPTOR_DIM: usize = 128;

const HARRIS_K: f64 = 0.04;
const QUALITY_LEVEL: f64 = 0.01;
const PATCH: i64 = 16;
const BORDER: u32 = 3;
const GAUSS_RADIUS: i64 = 2;
const GAUSS_SIGMA: f64 = 1.0;

struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    fn at(&self, x: i64, y: i64) -> f64 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yc * self.width + xc]
    }

    fn blur(&self, kernel: &[f64]) -> Plane {
        let r = (kernel.len() / 2) as i64;
        let mut tmp = Plane::zeros(self.width, self.height);
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                let s: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * self.at(x + i as i64 - r, y))
                    .sum();
                tmp.data[y as usize * self.width + x as usize] = s;
            }
        }
        let mut out = Plane::zeros(self.width, self.height);
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                let s: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp.at(x, y + i as i64 - r))
                    .sum();
                out.data[y as usize * self.width + x as usize] = s;
            }
        }
        out
    }
}

fn harris_response(image: &GrayImage) -> Plane {
    let (w, h) = (image.width as usize, image.height as usize);
    let mut intensity = Plane::zeros(w, h);
    for (dst, &src) in intensity.data.iter_mut().zip(&image.data) {
        *dst = src as f64 / 255.0;
    }
    let mut ixx = Plane::zeros(w, h);
    let mut iyy = Plane::zeros(w, h);
    let mut ixy = Plane::zeros(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let p = |dx: i64, dy: i64| intensity.at(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            ixx.data[i] = gx * gx;
            iyy.data[i] = gy * gy;
            ixy.data[i] = gx * gy;
        }
    }
    let mut kernel: Vec<f64> = (-GAUSS_RADIUS..=GAUSS_RADIUS)
        .map(|i| (-((i * i) as f64) / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let (sxx, syy, sxy) = (ixx.blur(&kernel), iyy.blur(&kernel), ixy.blur(&kernel));

    let mut response = Plane::zeros(w, h);
    for i in 0..w * h {
        let (a, b, c) = (sxx.data[i], syy.data[i], sxy.data[i]);
        let trace = a + b;
        response.data[i] = a * b - c * c - HARRIS_K * trace * trace;
    }
    response
}

/// 16x16 intensity patch pooled over horizontal pixel pairs (8x16 = 128
/// values), mean-subtracted and L2-normalised. `None` for a flat patch.
fn patch_descriptor(image: &GrayImage, cx: u32, cy: u32) -> Option<Vec<f32>> {
    let sample = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, image.width as i64 - 1) as u32;
        let yc = y.clamp(0, image.height as i64 - 1) as u32;
        image.get(xc, yc) as f64
    };
    let half = PATCH / 2;
    let mut values = Vec::with_capacity(DETECTOR_DESCRIPTOR_DIM);
    for dy in -half..half {
        for dx in (-half..half).step_by(2) {
            let x = cx as i64 + dx;
            let y = cy as i64 + dy;
            values.push(0.5 * (sample(x, y) + sample(x + 1, y)));
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    Some(values.into_iter().map(|v| (v / norm) as f32).collect())
}

/// Detects up to `max_features` Harris corners (3x3 non-maximum suppression,
/// quality floor at 1% of the strongest response). Deterministic.
pub fn detect_builtin(
    image_id: &str,
    image: &GrayImage,
    max_features: usize,
) -> Result<FeatureSet, FeatureError> {
    if image.width < 32 || image.height < 32 {
        return Err(FeatureError::TooSmall {
            width: image.width,
            height: image.height,
        });
    }
    let response = harris_response(image);
    let max_response = response.data.iter().cloned().fold(0.0f64, f64::max);
    let mut fs = FeatureSet::new(image_id, image.width, image.height, DETECTOR_DESCRIPTOR_DIM);
    if max_response <= 0.0 {
        return Ok(fs);
    }
    let floor = QUALITY_LEVEL * max_response;

    let w = image.width as i64;
    let mut candidates = Vec::new();
    for y in BORDER..image.height - BORDER {
        for x in BORDER..image.width - BORDER {
            let r = response.at(x as i64, y as i64);
            if r <= floor {
                continue;
            }
            let idx = y as i64 * w + x as i64;
            // plateau ties resolve to the first pixel in raster order
            let is_max = (-1..=1i64).all(|dy| {
                (-1..=1i64).all(|dx| {
                    if dx == 0 && dy == 0 {
                        return true;
                    }
                    let q = response.at(x as i64 + dx, y as i64 + dy);
                    let qidx = (y as i64 + dy) * w + x as i64 + dx;
                    r > q || (r == q && idx < qidx)
                })
            });
            if is_max {
                candidates.push((r, y, x));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    for (r, y, x) in candidates {
        if fs.len() >= max_features {
            break;
        }
        if let Some(desc) = patch_descriptor(image, x, y) {
            fs.push(Keypoint::new(x as f32, y as f32, r as f32), &desc)?;
        }
    }
    Ok(fs)
}
