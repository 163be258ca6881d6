//! Filter responses: blurred and shifted sub-unit maps, their geometric
//! mean, and the per-pixel maximum over rotated copies of the model.
//!
//! The blur is a max of products with a unit-peak Gaussian over the square
//! window `[-3 s, 3 s]^2`, where `s = sigma0 + alpha * rho`. Reads outside
//! the image contribute 0.
//!
//! Geometric means are accumulated as fixed-point logarithms. Integer
//! addition is associative, so the result is independent of sub-unit order
//! and exactly equivariant under 90 degree rotations of image and model.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::dog::{dog_response, make_dog};
use crate::error::{Error, Result};
use crate::imgio::GrayImage;
use crate::model::{CosfireModel, SubUnit};

/// A nonnegative filter response plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub image: GrayImage,
    /// Number of orientations pooled; 1 for a single-orientation response.
    pub n_rot: usize,
    pub model_descr: String,
}

impl ResponseMap {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.image.get(x, y)
    }

    pub fn max_value(&self) -> f64 {
        self.image.max_value()
    }
}

/// Fixed-point scale for accumulated logarithms.
const LOG_SCALE: f64 = 18446744073709551616.0; // 2^64

#[inline]
fn to_fixed(log: f64) -> i128 {
    (log * LOG_SCALE) as i128
}

#[inline]
fn from_fixed(sum: i128, n: usize) -> f64 {
    ((sum as f64 / LOG_SCALE) / n as f64).exp()
}

/// Half-width of the blur window for standard deviation `s`.
pub fn blur_radius(s: f64) -> usize {
    (3.0 * s).floor() as usize
}

fn blur_weights(s: f64) -> Vec<f64> {
    let r = blur_radius(s) as isize;
    (-r..=r)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                (-((k * k) as f64) / (2.0 * s * s)).exp()
            }
        })
        .collect()
}

/// One-dimensional weighted max along rows (`horizontal`) or columns.
fn max_pass(src: &[f64], w: usize, h: usize, g: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (g.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut best = 0.0f64;
            for (i, &gk) in g.iter().enumerate() {
                let k = i as isize - r;
                let (sx, sy) = if horizontal {
                    (x as isize + k, y as isize)
                } else {
                    (x as isize, y as isize + k)
                };
                if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                    continue;
                }
                let v = gk * src[sy as usize * w + sx as usize];
                if v > best {
                    best = v;
                }
            }
            *o = best;
        }
    });
    out
}

/// Blurred map on the zero-extended domain `[-pad, w + pad) x [-pad, h + pad)`.
struct Padded {
    pad: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Padded {
    /// Value at image coordinates `(x, y)`; must lie within the padding.
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let p = self.pad as isize;
        self.pixels[(y + p) as usize * self.width + (x + p) as usize]
    }
}

/// `max over |x'|,|y'| <= 3s of map(x - x', y - y') * G_s(x', y')` for a
/// nonnegative map and unit-peak Gaussian `G_s`, evaluated on the map
/// extended by `pad` zero pixels on each side.
///
/// Computed separably in both pass orders and combined with a max, which
/// keeps the result exactly symmetric under transposition.
fn blur_max_padded(map: &GrayImage, s: f64, pad: usize) -> Padded {
    let (w, h) = (map.width() + 2 * pad, map.height() + 2 * pad);
    let mut src = vec![0.0; w * h];
    for y in 0..map.height() {
        let row = &map.pixels()[y * map.width()..(y + 1) * map.width()];
        src[(y + pad) * w + pad..(y + pad) * w + pad + map.width()].copy_from_slice(row);
    }
    let pixels = if blur_radius(s) == 0 {
        src
    } else {
        let g = blur_weights(s);
        let rc = max_pass(&max_pass(&src, w, h, &g, true), w, h, &g, false);
        let cr = max_pass(&max_pass(&src, w, h, &g, false), w, h, &g, true);
        rc.iter().zip(&cr).map(|(a, b)| a.max(*b)).collect()
    };
    Padded {
        pad,
        width: w,
        pixels,
    }
}

/// Blur of `map` without shifting; see [`subunit_response`].
pub fn blur_max(map: &GrayImage, s: f64) -> GrayImage {
    let p = blur_max_padded(map, s, 0);
    GrayImage::from_raw(map.width(), map.height(), p.pixels)
}

/// `out(x, y) = map(x - dx, y - dy)`, 0 where that falls outside.
pub fn shift(map: &GrayImage, dx: isize, dy: isize) -> GrayImage {
    let (w, h) = (map.width() as isize, map.height() as isize);
    GrayImage::from_fn(map.width(), map.height(), |x, y| {
        let sx = x as isize - dx;
        let sy = y as isize - dy;
        if sx < 0 || sy < 0 || sx >= w || sy >= h {
            0.0
        } else {
            map.get(sx as usize, sy as usize)
        }
    })
}

/// Padding that covers every pixel shift of a sub-unit at radius `rho`.
fn shift_pad(rho: f64) -> usize {
    rho.ceil() as usize + 1
}

/// Blurred and shifted response of one sub-unit, given the rectified DoG map
/// for its `sigma`. The blur window may reach into the image even where the
/// shifted center lies outside it.
pub fn subunit_response(dog_map: &GrayImage, su: &SubUnit, sigma0: f64, alpha: f64) -> GrayImage {
    let s = sigma0 + alpha * su.rho;
    let (dx, dy) = su.pixel_shift();
    let blurred = blur_max_padded(dog_map, s, shift_pad(su.rho));
    GrayImage::from_fn(dog_map.width(), dog_map.height(), |x, y| {
        blurred.at(x as isize - dx, y as isize - dy)
    })
}

/// Per-pixel geometric mean of equally sized nonnegative maps.
pub fn geometric_mean(maps: &[GrayImage]) -> Result<GrayImage> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Parameter("geometric mean of zero maps".into()))?;
    if maps.iter().any(|m| !m.same_size(first)) {
        return Err(Error::Size("maps differ in size".into()));
    }
    let n = maps.len();
    let out = (0..first.pixels().len())
        .map(|i| {
            let mut acc: i128 = 0;
            for m in maps {
                let v = m.pixels()[i];
                if v <= 0.0 {
                    return 0.0;
                }
                acc += to_fixed(v.ln());
            }
            from_fixed(acc, n)
        })
        .collect();
    Ok(GrayImage::from_raw(first.width(), first.height(), out))
}

/// Shared state for evaluating a model and its rotations on one image:
/// one DoG map per distinct `sigma`, one blurred log-map per distinct
/// `(sigma, rho)`.
struct Prepared {
    width: usize,
    height: usize,
    log_maps: Vec<Padded>,
    /// For each sub-unit, its log-map index.
    map_of: Vec<usize>,
}

fn prepare(img: &GrayImage, model: &CosfireModel) -> Result<Prepared> {
    model.validate()?;
    let mut dogs: HashMap<u64, GrayImage> = HashMap::new();
    let mut keys: HashMap<(u64, u64), usize> = HashMap::new();
    let mut log_maps = Vec::new();
    let mut map_of = Vec::with_capacity(model.len());
    for su in &model.subunits {
        let key = (su.sigma.to_bits(), su.rho.to_bits());
        if let Some(&idx) = keys.get(&key) {
            map_of.push(idx);
            continue;
        }
        let dog = match dogs.entry(key.0) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(dog_response(img, &make_dog(su.sigma, model.polarity)?)?),
        };
        let mut logs = blur_max_padded(dog, model.blur_sigma(su.rho), shift_pad(su.rho));
        for v in &mut logs.pixels {
            *v = if *v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
        }
        keys.insert(key, log_maps.len());
        map_of.push(log_maps.len());
        log_maps.push(logs);
    }
    Ok(Prepared {
        width: img.width(),
        height: img.height(),
        log_maps,
        map_of,
    })
}

/// Pixel shifts of every sub-unit for each orientation in `psis`.
fn shifts_for(model: &CosfireModel, psis: &[f64]) -> Vec<Vec<(isize, isize)>> {
    psis.iter()
        .map(|&psi| {
            model
                .rotated(psi)
                .subunits
                .iter()
                .map(SubUnit::pixel_shift)
                .collect()
        })
        .collect()
}

/// Max over orientations of the geometric mean, evaluated per pixel.
fn pooled(prep: &Prepared, shifts: &[Vec<(isize, isize)>]) -> GrayImage {
    let (w, h) = (prep.width, prep.height);
    let n = prep.map_of.len();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut best: Option<i128> = None;
            'orient: for orient in shifts {
                let mut acc: i128 = 0;
                for (&(dx, dy), &m) in orient.iter().zip(&prep.map_of) {
                    let l = prep.log_maps[m].at(x as isize - dx, y as isize - dy);
                    if l == f64::NEG_INFINITY {
                        continue 'orient;
                    }
                    acc += to_fixed(l);
                }
                best = Some(best.map_or(acc, |b| b.max(acc)));
            }
            *o = best.map_or(0.0, |b| from_fixed(b, n));
        }
    });
    GrayImage::from_raw(w, h, out)
}

/// Geometric mean of the model's blurred and shifted sub-unit responses.
pub fn filter_response(img: &GrayImage, model: &CosfireModel) -> Result<ResponseMap> {
    let prep = prepare(img, model)?;
    Ok(ResponseMap {
        image: pooled(&prep, &shifts_for(model, &[0.0])),
        n_rot: 1,
        model_descr: model.prototype_descr.clone(),
    })
}

/// Orientations `{k pi / n_rot : k = 0..n_rot}`.
pub fn orientations(n_rot: usize) -> Vec<f64> {
    (0..n_rot).map(|k| k as f64 * PI / n_rot as f64).collect()
}

/// Per-pixel maximum of [`filter_response`] over `n_rot` rotated copies of
/// the model. DoG and blur maps do not depend on orientation and are shared.
pub fn rotation_tolerant_response(
    img: &GrayImage,
    model: &CosfireModel,
    n_rot: usize,
) -> Result<ResponseMap> {
    if n_rot == 0 {
        return Err(Error::Parameter("n_rot must be at least 1".into()));
    }
    let prep = prepare(img, model)?;
    Ok(ResponseMap {
        image: pooled(&prep, &shifts_for(model, &orientations(n_rot))),
        n_rot,
        model_descr: model.prototype_descr.clone(),
    })
}

/// Divides by the global maximum when it is positive.
pub fn normalize_response(resp: &ResponseMap) -> ResponseMap {
    let max = resp.max_value();
    if max > 0.0 {
        ResponseMap {
            image: resp.image.map(|v| v / max),
            ..resp.clone()
        }
    } else {
        resp.clone()
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::configure::{configure_filter, make_prototype_bar};
    use crate::dog::Polarity;
    use crate::model::FilterParams;

    fn impulse(w: usize, h: usize, x: usize, y: usize) -> GrayImage {
        let mut img = GrayImage::zeros(w, h);
        img.set(x, y, 1.0);
        img
    }

    /// Direct evaluation of the windowed max of products.
    fn brute_subunit(map: &GrayImage, dx: isize, dy: isize, s: f64) -> GrayImage {
        let r = blur_radius(s) as isize;
        GrayImage::from_fn(map.width(), map.height(), |x, y| {
            let mut best = 0.0f64;
            for yy in -r..=r {
                for xx in -r..=r {
                    let sx = x as isize - dx - xx;
                    let sy = y as isize - dy - yy;
                    if sx < 0 || sy < 0 || sx >= map.width() as isize || sy >= map.height() as isize
                    {
                        continue;
                    }
                    let g = if s > 0.0 {
                        (-((xx * xx + yy * yy) as f64) / (2.0 * s * s)).exp()
                    } else {
                        1.0
                    };
                    best = best.max(map.get(sx as usize, sy as usize) * g);
                }
            }
            best
        })
    }

    #[test]
    fn zero_shift_zero_blur_is_identity() {
        let map = GrayImage::from_fn(9, 7, |x, y| (x * y) as f64 / 50.0);
        let su = SubUnit::new(1.0, 0.0, 0.0);
        assert_eq!(subunit_response(&map, &su, 0.0, 0.0), map);
    }

    #[test]
    fn pure_shift_of_impulse() {
        let map = impulse(11, 11, 5, 4);
        let su = SubUnit::new(1.0, 2.0, FRAC_PI_2);
        let out = subunit_response(&map, &su, 0.0, 0.0);
        assert_eq!(out.get(5, 6), 1.0);
        assert_eq!(out.pixels().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn blurred_impulse_is_gaussian() {
        let map = impulse(31, 31, 15, 15);
        let su = SubUnit::new(1.0, 0.0, 0.0);
        let out = subunit_response(&map, &su, 2.0, 0.0);
        for yy in -6isize..=6 {
            for xx in -6isize..=6 {
                let want = (-((xx * xx + yy * yy) as f64) / 8.0).exp();
                let got = out.get((15 + xx) as usize, (15 + yy) as usize);
                assert!((got - want).abs() < 1e-15, "({xx},{yy}) {got} vs {want}");
            }
        }
        assert_eq!(out.get(15 + 7, 15), 0.0);
    }

    #[test]
    fn blur_matches_brute_force() {
        let map = GrayImage::from_fn(25, 21, |x, y| {
            (((x * 31 + y * 17) % 13) as f64 / 12.0).powi(2)
        });
        for &(rho, phi, s0, a) in &[
            (0.0, 0.0, 1.3, 0.0),
            (4.0, 0.7, 0.5, 0.3),
            (6.0, 3.0, 2.0, 0.1),
            (2.0, 5.0, 0.0, 0.0),
        ] {
            let su = SubUnit::new(1.0, rho, phi);
            let (dx, dy) = su.pixel_shift();
            let fast = subunit_response(&map, &su, s0, a);
            let slow = brute_subunit(&map, dx, dy, s0 + a * rho);
            for (p, q) in fast.pixels().iter().zip(slow.pixels()) {
                assert!((p - q).abs() <= 1e-12 * q.max(1.0), "{p} vs {q}");
            }
        }
    }

    #[test]
    fn geometric_mean_basics() {
        let a = GrayImage::new(3, 1, vec![4.0, 0.0, 2.0]).unwrap();
        let b = GrayImage::new(3, 1, vec![1.0, 5.0, 8.0]).unwrap();
        let g = geometric_mean(&[a.clone(), b]).unwrap();
        assert!((g.get(0, 0) - 2.0).abs() < 1e-14);
        assert_eq!(g.get(1, 0), 0.0);
        assert!((g.get(2, 0) - 4.0).abs() < 1e-14);
        assert!(geometric_mean(&[]).is_err());
        assert!(geometric_mean(&[a, GrayImage::zeros(2, 1)]).is_err());
    }

    fn bar_model() -> (GrayImage, CosfireModel) {
        let params = FilterParams::new(2.4, vec![0.0, 2.0, 4.0, 6.0], 1.0, 0.3);
        let bar = make_prototype_bar(5.0, FRAC_PI_2, 61).unwrap();
        let model = configure_filter(&bar, &params).unwrap();
        (bar, model)
    }

    #[test]
    fn engine_equals_composed_definition() {
        let (bar, model) = bar_model();
        let img = GrayImage::from_fn(40, 36, |x, y| {
            bar.get(x + 10, y + 12) * 0.8 + ((x + y) % 5) as f64 * 0.02
        });
        let dog = dog_response(&img, &make_dog(2.4, Polarity::CenterOn).unwrap()).unwrap();
        let maps: Vec<GrayImage> = model
            .subunits
            .iter()
            .map(|su| subunit_response(&dog, su, model.sigma0, model.alpha))
            .collect();
        let composed = geometric_mean(&maps).unwrap();
        let engine = filter_response(&img, &model).unwrap();
        assert_eq!(engine.image, composed);
    }

    #[test]
    fn single_center_subunit_reduces_to_dog() {
        let img = GrayImage::from_fn(
            30,
            30,
            |x, y| if (x / 4 + y / 6) % 2 == 0 { 1.0 } else { 0.2 },
        );
        let model = CosfireModel::new(
            vec![SubUnit::new(1.5, 0.0, 0.0)],
            0.0,
            0.0,
            Polarity::CenterOn,
        )
        .unwrap();
        let resp = filter_response(&img, &model).unwrap();
        let dog = dog_response(&img, &make_dog(1.5, Polarity::CenterOn).unwrap()).unwrap();
        for (a, b) in resp.image.pixels().iter().zip(dog.pixels()) {
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn peak_at_prototype_center() {
        let (bar, model) = bar_model();
        let resp = filter_response(&bar, &model).unwrap();
        let max = resp.max_value();
        assert!(max > 0.0);
        assert_eq!(resp.get(30, 30), max);
        let row_best = (0..61).map(|x| resp.get(x, 30)).fold(0.0, f64::max);
        for x in 0..61 {
            if (x as isize - 30).abs() > 1 {
                assert!(resp.get(x, 30) < row_best, "x={x}");
            }
        }
    }

    #[test]
    fn single_orientation_matches_filter_response() {
        let (bar, model) = bar_model();
        let a = filter_response(&bar, &model).unwrap();
        let b = rotation_tolerant_response(&bar, &model, 1).unwrap();
        assert_eq!(a.image, b.image);
        assert!(rotation_tolerant_response(&bar, &model, 0).is_err());
    }

    #[test]
    fn rotation_pool_is_max_of_rotated_filters() {
        let (_, model) = bar_model();
        let img = make_prototype_bar(5.0, 0.5, 61).unwrap();
        let pooled = rotation_tolerant_response(&img, &model, 4).unwrap();
        let mut manual = GrayImage::zeros(61, 61);
        for psi in orientations(4) {
            let r = filter_response(&img, &model.rotated(psi)).unwrap();
            manual = GrayImage::from_fn(61, 61, |x, y| manual.get(x, y).max(r.get(x, y)));
        }
        assert_eq!(pooled.image, manual);
    }

    #[test]
    fn finer_orientation_set_dominates() {
        let (_, model) = bar_model();
        let img = make_prototype_bar(5.0, 0.3, 61).unwrap();
        let six = rotation_tolerant_response(&img, &model, 6).unwrap();
        let twelve = rotation_tolerant_response(&img, &model, 12).unwrap();
        for (a, b) in twelve.image.pixels().iter().zip(six.image.pixels()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn normalize_examples() {
        let zero = ResponseMap {
            image: GrayImage::zeros(3, 3),
            n_rot: 1,
            model_descr: String::new(),
        };
        assert_eq!(normalize_response(&zero), zero);
        let r = ResponseMap {
            image: GrayImage::new(3, 1, vec![0.5, 2.0, 1.0]).unwrap(),
            ..zero
        };
        let n = normalize_response(&r);
        assert_eq!(n.image.pixels(), &[0.25, 1.0, 0.5]);
        assert_eq!(normalize_response(&n), n);
    }
}
