//! Difference-of-Gaussians kernels and the rectified DoG response map.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgio::GrayImage;

/// Contrast polarity of a DoG kernel.
///
/// `CenterOn` has a positive center weight and responds to bright structures
/// on a dark background. `CenterOff` is its exact negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Polarity {
    #[default]
    CenterOn,
    CenterOff,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::CenterOn => "center-on",
            Polarity::CenterOff => "center-off",
        })
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center-on" | "on" => Ok(Polarity::CenterOn),
            "center-off" | "off" => Ok(Polarity::CenterOff),
            _ => Err(Error::Parameter(format!("unknown polarity '{s}'"))),
        }
    }
}

/// Square DoG kernel with support `[-radius, radius]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DogKernel {
    sigma: f64,
    polarity: Polarity,
    radius: usize,
    weights: Vec<f64>,
}

impl DogKernel {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Side length `2 * radius + 1`.
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major weights, `size() * size()` entries.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the kernel center.
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        assert!(
            dx.abs() <= r && dy.abs() <= r,
            "offset outside kernel support"
        );
        self.weights[((dy + r) as usize) * self.size() + (dx + r) as usize]
    }
}

/// Support radius used for a DoG with outer standard deviation `sigma`.
pub fn support_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Builds the DoG kernel: unit-mass outer Gaussian (std `sigma`) minus
/// unit-mass inner Gaussian (std `sigma / 2`), truncated at `ceil(3 sigma)`
/// and mean-subtracted so the weights sum to zero on the truncated support.
/// That difference is the center-off kernel; center-on is its negation.
pub fn make_dog(sigma: f64, polarity: Polarity) -> Result<DogKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!(
            "DoG sigma must be positive, got {sigma}"
        )));
    }
    let radius = support_radius(sigma);
    let size = 2 * radius + 1;
    let outer_var = sigma * sigma;
    let inner_var = 0.25 * sigma * sigma;
    let mut weights = Vec::with_capacity(size * size);
    let r = radius as isize;
    for y in -r..=r {
        for x in -r..=r {
            let d2 = (x * x + y * y) as f64;
            let outer = (-d2 / (2.0 * outer_var)).exp() / (2.0 * PI * outer_var);
            let inner = (-d2 / (2.0 * inner_var)).exp() / (2.0 * PI * inner_var);
            weights.push(outer - inner);
        }
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    for w in &mut weights {
        *w -= mean;
        if polarity == Polarity::CenterOn {
            *w = -*w;
        }
    }
    Ok(DogKernel {
        sigma,
        polarity,
        radius,
        weights,
    })
}

/// Reflect-101 index into `[0, n)`: `-1 -> 1`, `n -> n - 2`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
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

/// Kernel offsets grouped by the 8-fold symmetry of the kernel. Each group is
/// summed as commuting pairs, so the pixel sum does not depend on the
/// orientation of the image.
enum Orbit {
    Axis { w: f64, d: [isize; 4] },
    Diagonal { w: f64, d: [isize; 4] },
    General { w: f64, d: [isize; 8] },
}

fn orbits(kernel: &DogKernel, stride: isize) -> Vec<Orbit> {
    let r = kernel.radius as isize;
    let at = |x: isize, y: isize| y * stride + x;
    let mut out = Vec::new();
    for a in 1..=r {
        for b in 0..=a {
            let w = kernel.weight(a, b);
            let orbit = if b == 0 {
                Orbit::Axis {
                    w,
                    d: [at(a, 0), at(-a, 0), at(0, a), at(0, -a)],
                }
            } else if b == a {
                Orbit::Diagonal {
                    w,
                    d: [at(a, a), at(-a, -a), at(-a, a), at(a, -a)],
                }
            } else {
                Orbit::General {
                    w,
                    d: [
                        at(a, b),
                        at(-a, -b),
                        at(-a, b),
                        at(a, -b),
                        at(b, a),
                        at(-b, -a),
                        at(-b, a),
                        at(b, -a),
                    ],
                }
            };
            out.push(orbit);
        }
    }
    out
}

/// Correlation of `img` with `kernel` under reflect-101 borders, before
/// rectification.
///
/// The sum is taken over differences from the center pixel, which is exact
/// for a zero-sum kernel: constant images give exactly zero.
pub fn dog_correlate(img: &GrayImage, kernel: &DogKernel) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let size = kernel.size();
    if size > w || size > h {
        return Err(Error::Size(format!(
            "DoG kernel {size}x{size} (sigma {}) exceeds image {w}x{h}",
            kernel.sigma
        )));
    }
    let r = kernel.radius;
    let pw = w + 2 * r;
    let ph = h + 2 * r;
    let mut padded = vec![0.0; pw * ph];
    for py in 0..ph {
        let sy = reflect(py as isize - r as isize, h);
        for px in 0..pw {
            let sx = reflect(px as isize - r as isize, w);
            padded[py * pw + px] = img.get(sx, sy);
        }
    }
    let orbits = orbits(kernel, pw as isize);

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let c = ((y + r) * pw + x + r) as isize;
            let v0 = padded[c as usize];
            let d = |k: isize| padded[(c + k) as usize] - v0;
            let mut acc = 0.0;
            for orbit in &orbits {
                let s = match orbit {
                    Orbit::Axis { d: k, .. } | Orbit::Diagonal { d: k, .. } => {
                        (d(k[0]) + d(k[1])) + (d(k[2]) + d(k[3]))
                    }
                    Orbit::General { d: k, .. } => {
                        ((d(k[0]) + d(k[1])) + (d(k[2]) + d(k[3])))
                            + ((d(k[4]) + d(k[5])) + (d(k[6]) + d(k[7])))
                    }
                };
                let wt = match orbit {
                    Orbit::Axis { w, .. }
                    | Orbit::Diagonal { w, .. }
                    | Orbit::General { w, .. } => *w,
                };
                acc += wt * s;
            }
            *o = acc;
        }
    });
    Ok(GrayImage::from_raw(w, h, out))
}

/// Half-wave rectified DoG response `max(0, I * DoG)`.
pub fn dog_response(img: &GrayImage, kernel: &DogKernel) -> Result<GrayImage> {
    let raw = dog_correlate(img, kernel)?;
    Ok(raw.map(|v| v.max(0.0)))
}
