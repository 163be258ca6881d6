//! Oracles and synthetic scenes shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use bcosfire::imgio::{BinaryMask, GrayImage};
use bcosfire::model::CosfireModel;

// ---------------------------------------------------------------------------
// independent oracles

/// DoG weights straight from the Gaussian formulas, center-on sign.
pub fn oracle_kernel(sigma: f64) -> (usize, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as isize;
    let g = |d2: f64, s: f64| (-d2 / (2.0 * s * s)).exp() / (2.0 * PI * s * s);
    let mut w = Vec::new();
    for y in -r..=r {
        for x in -r..=r {
            let d2 = (x * x + y * y) as f64;
            w.push(g(d2, 0.5 * sigma) - g(d2, sigma));
        }
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    (r as usize, w.into_iter().map(|v| v - mean).collect())
}

pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Direct rectified center-on correlation with mirror padding.
pub fn oracle_dog(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let (r, w) = oracle_kernel(sigma);
    let (iw, ih) = (img.width(), img.height());
    let k = 2 * r + 1;
    let mut out = vec![0.0; iw * ih];
    for y in 0..ih {
        for x in 0..iw {
            let mut acc = 0.0;
            for j in 0..k {
                for i in 0..k {
                    let sx = mirror(x as isize + i as isize - r as isize, iw);
                    let sy = mirror(y as isize + j as isize - r as isize, ih);
                    acc += w[j * k + i] * img.get(sx, sy);
                }
            }
            out[y * iw + x] = acc.max(0.0);
        }
    }
    out
}

/// Rotation-pooled response at one pixel by direct enumeration.
pub fn oracle_response_at(
    dog: &[f64],
    w: usize,
    h: usize,
    model: &CosfireModel,
    n_rot: usize,
    x: usize,
    y: usize,
) -> f64 {
    let mut best = 0.0f64;
    for k in 0..n_rot {
        let psi = k as f64 * PI / n_rot as f64;
        let mut log_sum = 0.0;
        let mut zero = false;
        for su in &model.rotated(psi).subunits {
            let s = model.sigma0 + model.alpha * su.rho;
            let dx = (su.rho * su.phi.cos()).round() as isize;
            let dy = (su.rho * su.phi.sin()).round() as isize;
            let r = (3.0 * s).floor() as isize;
            let mut v = 0.0f64;
            for yy in -r..=r {
                for xx in -r..=r {
                    let sx = x as isize - dx - xx;
                    let sy = y as isize - dy - yy;
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    let g = if xx == 0 && yy == 0 {
                        1.0
                    } else {
                        (-((xx * xx + yy * yy) as f64) / (2.0 * s * s)).exp()
                    };
                    v = v.max(dog[sy as usize * w + sx as usize] * g);
                }
            }
            if v <= 0.0 {
                zero = true;
                break;
            }
            log_sum += v.ln();
        }
        if !zero {
            best = best.max((log_sum / model.len() as f64).exp());
        }
    }
    best
}

/// Normalized rotation-pooled response of the whole image by direct
/// enumeration.
pub fn oracle_response(img: &GrayImage, model: &CosfireModel, n_rot: usize) -> GrayImage {
    let sigma = model.subunits[0].sigma;
    let dog = oracle_dog(img, sigma);
    let (w, h) = (img.width(), img.height());
    let raw = GrayImage::from_fn(w, h, |x, y| {
        oracle_response_at(&dog, w, h, model, n_rot, x, y)
    });
    let max = raw.max_value();
    if max > 0.0 {
        raw.map(|v| v / max)
    } else {
        raw
    }
}

pub fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let t = (((px - a.0) * vx + (py - a.1) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

pub type Segment = ((f64, f64), (f64, f64));

pub fn bar_scene(w: usize, h: usize, bars: &[Segment], width: f64) -> (GrayImage, BinaryMask) {
    let inside = |x: usize, y: usize| {
        bars.iter()
            .any(|&(a, b)| segment_distance(x as f64, y as f64, a, b) <= width / 2.0)
    };
    let img = GrayImage::from_fn(w, h, |x, y| if inside(x, y) { 1.0 } else { 0.0 });
    let gt = BinaryMask::from_fn(w, h, inside);
    (img, gt)
}
