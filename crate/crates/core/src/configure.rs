//! Automatic configuration of a filter from a synthetic bar prototype.
//!
//! The DoG response of the prototype is sampled on concentric circles around
//! the image center; every sufficiently strong angular maximum becomes one
//! sub-unit.

use std::f64::consts::TAU;

use crate::dog::{dog_response, make_dog, support_radius, Polarity};
use crate::error::{Error, Result};
use crate::imgio::{invert, GrayImage};
use crate::model::{CosfireModel, FilterParams, SubUnit};

/// Angular samples per circle.
pub const CIRCLE_SAMPLES: usize = 360;

/// Angular maxima below this fraction of the circle maximum are dropped.
pub const KEEP_FRACTION: f64 = 0.75;

/// `size x size` image, 0 everywhere except 1 on the band of the given width
/// through the center at angle `orientation` (radians, `y` downward).
pub fn make_prototype_bar(width: f64, orientation: f64, size: usize) -> Result<GrayImage> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Parameter(format!(
            "bar width must be positive, got {width}"
        )));
    }
    if size == 0 || width >= size as f64 / 2.0 {
        return Err(Error::Parameter(format!(
            "bar width {width} must be less than half the image size {size}"
        )));
    }
    if !orientation.is_finite() {
        return Err(Error::Parameter("bar orientation must be finite".into()));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let (s, co) = orientation.sin_cos();
    let half = width / 2.0;
    Ok(GrayImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 - c, y as f64 - c);
        // distance from the line through the center with direction (co, s)
        let dist = (co * py - s * px).abs();
        if dist <= half {
            1.0
        } else {
            0.0
        }
    }))
}

/// Prototype size that fits the largest circle plus the DoG support.
pub fn prototype_size(params: &FilterParams) -> usize {
    let max_r = params.radii.iter().copied().fold(0.0, f64::max).ceil() as usize;
    2 * (max_r + support_radius(params.sigma) + 2) + 1
}

/// Bar prototype matching the polarity in `params`: bright on dark for
/// center-on, dark on bright for center-off.
pub fn prototype_for(params: &FilterParams, width: f64, orientation: f64) -> Result<GrayImage> {
    let size = prototype_size(params).max((2.0 * width).ceil() as usize + 3);
    let bar = make_prototype_bar(width, orientation, size)?;
    Ok(match params.polarity {
        Polarity::CenterOn => bar,
        Polarity::CenterOff => invert(&bar),
    })
}

/// Default prototype bar width for a DoG of outer std `sigma`.
pub fn default_bar_width(sigma: f64) -> f64 {
    2.0 * sigma
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    if x < 0.0 || y < 0.0 || x > (img.width() - 1) as f64 || y > (img.height() - 1) as f64 {
        return 0.0;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Positions (in sample units, possibly half-integer for even plateaus) of
/// the strict local maxima of a circular sequence. A plateau counts when it
/// is strictly above both neighbours and reports its midpoint.
pub fn circular_maxima(values: &[f64]) -> Vec<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    // start at a run boundary
    let start = match (0..n).find(|&i| values[i] != values[(i + n - 1) % n]) {
        Some(s) => s,
        None => return Vec::new(),
    };
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        let s = (start + i) % n;
        let mut len = 1;
        while len < n && values[(s + len) % n] == values[s] {
            len += 1;
        }
        runs.push((s, len));
        i += len;
    }
    let m = runs.len();
    let mut out = Vec::new();
    for k in 0..m {
        let (s, len) = runs[k];
        let v = values[s];
        let prev = values[runs[(k + m - 1) % m].0];
        let next = values[runs[(k + 1) % m].0];
        if v > prev && v > next {
            let mid = (s as f64 + (len as f64 - 1.0) / 2.0) % n as f64;
            out.push((mid, v));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Derives the sub-units of a filter from `prototype`.
pub fn configure_filter(prototype: &GrayImage, params: &FilterParams) -> Result<CosfireModel> {
    params.validate()?;
    let kernel = make_dog(params.sigma, params.polarity)?;
    let dog = dog_response(prototype, &kernel)?;
    let cx = (prototype.width() as f64 - 1.0) / 2.0;
    let cy = (prototype.height() as f64 - 1.0) / 2.0;

    let center = bilinear(&dog, cx, cy);
    if center.is_nan() || center <= 0.0 {
        return Err(Error::Configuration {
            radius: 0.0,
            msg: format!("prototype center has no {} DoG response", params.polarity),
        });
    }

    let mut subunits = Vec::new();
    for &rho in &params.radii {
        if rho == 0.0 {
            subunits.push(SubUnit::new(params.sigma, 0.0, 0.0));
            continue;
        }
        let step = TAU / CIRCLE_SAMPLES as f64;
        let samples: Vec<f64> = (0..CIRCLE_SAMPLES)
            .map(|k| {
                let theta = k as f64 * step;
                bilinear(&dog, cx + rho * theta.cos(), cy + rho * theta.sin())
            })
            .collect();
        let peak = samples.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(Error::Configuration {
                radius: rho,
                msg: "no positive DoG response on the circle".into(),
            });
        }
        let kept: Vec<f64> = circular_maxima(&samples)
            .into_iter()
            .filter(|&(_, v)| v >= KEEP_FRACTION * peak)
            .map(|(pos, _)| pos * step)
            .collect();
        if kept.is_empty() {
            return Err(Error::Configuration {
                radius: rho,
                msg: "no angular maximum on the circle".into(),
            });
        }
        let mut ring: Vec<SubUnit> = kept
            .into_iter()
            .map(|phi| SubUnit::new(params.sigma, rho, phi))
            .collect();
        ring.sort_by(|a, b| a.phi.total_cmp(&b.phi));
        subunits.extend(ring);
    }

    let descr = format!(
        "bar {}x{} sigma={} radii={:?}",
        prototype.width(),
        prototype.height(),
        params.sigma,
        params.radii
    );
    Ok(
        CosfireModel::new(subunits, params.sigma0, params.alpha, params.polarity)?
            .with_descr(descr),
    )
}

/// Configures a filter on a bar of the given width at orientation `pi/2`
/// (vertical), the usual training prototype.
pub fn configure_from_bar(params: &FilterParams, bar_width: f64) -> Result<CosfireModel> {
    let proto = prototype_for(params, bar_width, std::f64::consts::FRAC_PI_2)?;
    let model = configure_filter(&proto, params)?;
    Ok(model.with_descr(format!(
        "vertical bar width={bar_width} sigma={} radii={:?}",
        params.sigma, params.radii
    )))
}
