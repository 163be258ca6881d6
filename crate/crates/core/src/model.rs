//! Filter parameters, sub-units and the trained filter model, plus the text
//! model file format.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dog::Polarity;
use crate::error::{Error, Result};

/// User-facing configuration knobs for one filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    /// Standard deviation of the outer DoG Gaussian, pixels.
    pub sigma: f64,
    /// Circle radii, pixels. Nonempty, nonnegative, strictly increasing.
    pub radii: Vec<f64>,
    /// Blur tolerance at the center, pixels.
    pub sigma0: f64,
    /// Growth of the blur tolerance with radius.
    pub alpha: f64,
    /// Number of preferred orientations over `[0, pi)`.
    pub n_rot: usize,
    pub polarity: Polarity,
}

impl FilterParams {
    pub fn new(sigma: f64, radii: Vec<f64>, sigma0: f64, alpha: f64) -> Self {
        Self {
            sigma,
            radii,
            sigma0,
            alpha,
            n_rot: 12,
            polarity: Polarity::CenterOn,
        }
    }

    pub fn leaf() -> Self {
        Self::new(2.9, even_radii(10), 2.0, 0.8)
    }

    pub fn tiles() -> Self {
        Self::new(1.4, even_radii(8), 2.0, 0.4)
    }

    pub fn river() -> Self {
        Self::new(2.4, even_radii(12), 3.0, 0.8)
    }

    pub fn road() -> Self {
        Self::new(1.7, even_radii(22), 4.0, 1.1)
    }

    pub fn iostar() -> Self {
        Self::new(4.6, even_radii(22), 1.0, 0.3)
    }

    /// Looks up a named parameter row (`leaf`, `tiles`, `river`, `road`, `iostar`).
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "leaf" => Some(Self::leaf()),
            "tiles" => Some(Self::tiles()),
            "river" => Some(Self::river()),
            "road" => Some(Self::road()),
            "iostar" => Some(Self::iostar()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.radii.is_empty() {
            return Err(Error::Parameter("radii must not be empty".into()));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Parameter(
                "radii must be finite and nonnegative".into(),
            ));
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("radii must be strictly increasing".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma0 must be nonnegative, got {}",
                self.sigma0
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if self.n_rot == 0 {
            return Err(Error::Parameter("n_rot must be at least 1".into()));
        }
        Ok(())
    }
}

/// `{0, 2, ..., max}`
fn even_radii(max: u32) -> Vec<f64> {
    (0..=max).step_by(2).map(f64::from).collect()
}

/// Parses `start:step:end` (inclusive) or a comma-separated list.
pub fn parse_radii(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parameter(format!("cannot parse radii '{s}'"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    let radii = match parts.as_slice() {
        [start, step, end] => {
            let (start, step, end) = (num(start)?, num(step)?, num(end)?);
            if step.is_nan() || step <= 0.0 || end < start {
                return Err(bad());
            }
            let n = ((end - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if radii.is_empty() {
        return Err(bad());
    }
    Ok(radii)
}

/// One configured DoG sampling point, in polar coordinates around the
/// filter center. `(dx, dy)` uses `x` rightward and `y` downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubUnit {
    pub sigma: f64,
    pub rho: f64,
    pub phi: f64,
    pub dx: f64,
    pub dy: f64,
}

impl SubUnit {
    pub fn new(sigma: f64, rho: f64, phi: f64) -> Self {
        let phi = wrap_angle(phi);
        Self {
            sigma,
            rho,
            phi,
            dx: rho * phi.cos(),
            dy: rho * phi.sin(),
        }
    }

    /// Integer pixel shift of this sub-unit.
    pub fn pixel_shift(&self) -> (isize, isize) {
        (self.dx.round() as isize, self.dy.round() as isize)
    }
}

/// Maps an angle into `[0, 2 pi)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// The trained filter: an ordered set of sub-units plus blur tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CosfireModel {
    pub subunits: Vec<SubUnit>,
    pub sigma0: f64,
    pub alpha: f64,
    pub polarity: Polarity,
    pub prototype_descr: String,
}

impl CosfireModel {
    pub fn new(
        subunits: Vec<SubUnit>,
        sigma0: f64,
        alpha: f64,
        polarity: Polarity,
    ) -> Result<Self> {
        let model = Self {
            subunits,
            sigma0,
            alpha,
            polarity,
            prototype_descr: String::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_descr(mut self, descr: impl Into<String>) -> Self {
        self.prototype_descr = descr.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.subunits.is_empty() {
            return Err(Error::Parameter("model has no sub-units".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Parameter(format!(
                "sigma0 must be nonnegative, got {}",
                self.sigma0
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        for su in &self.subunits {
            if !(su.sigma > 0.0 && su.sigma.is_finite())
                || !(su.rho >= 0.0 && su.rho.is_finite())
                || !su.phi.is_finite()
            {
                return Err(Error::Parameter(format!("invalid sub-unit {su:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subunits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subunits.is_empty()
    }

    /// Blur standard deviation for a sub-unit at radius `rho`.
    pub fn blur_sigma(&self, rho: f64) -> f64 {
        self.sigma0 + self.alpha * rho
    }

    /// Copy with every sub-unit angle advanced by `psi`.
    pub fn rotated(&self, psi: f64) -> CosfireModel {
        CosfireModel {
            subunits: self
                .subunits
                .iter()
                .map(|su| SubUnit::new(su.sigma, su.rho, su.phi + psi))
                .collect(),
            ..self.clone()
        }
    }
}

/// Returns the model with orientation preference shifted by `psi`.
pub fn rotate_model(model: &CosfireModel, psi: f64) -> CosfireModel {
    model.rotated(psi)
}

const MAGIC: &str = "BCOSFIRE";
const VERSION: &str = "1";
const DESCR_PREFIX: &str = "# prototype:";

/// Formats `v` with 9 significant digits in positional notation.
fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.00000000".into();
    }
    let sci = format!("{v:.8e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn model_to_string(model: &CosfireModel) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{MAGIC} {VERSION} {} {} {}",
        sig9(model.sigma0),
        sig9(model.alpha),
        model.polarity
    );
    if !model.prototype_descr.is_empty() {
        let _ = writeln!(
            s,
            "{DESCR_PREFIX} {}",
            model.prototype_descr.replace('\n', " ")
        );
    }
    for su in &model.subunits {
        let _ = writeln!(s, "{} {} {}", sig9(su.sigma), sig9(su.rho), sig9(su.phi));
    }
    s
}

pub fn save_model(model: &CosfireModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CosfireModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, path)
}

/// Parses the model text format; `origin` is only used in error messages.
pub fn parse_model(text: &str, origin: &Path) -> Result<CosfireModel> {
    let err = |line: usize, msg: String| Error::ModelFormat {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut header: Option<(f64, f64, Polarity)> = None;
    let mut descr = String::new();
    let mut subunits = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        last_line = lineno;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(DESCR_PREFIX) {
            descr = rest.trim().to_string();
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, format!("invalid {what} '{s}'")))
        };
        match header {
            None => {
                if fields.first() != Some(&MAGIC) {
                    return Err(err(lineno, format!("expected '{MAGIC}' header line")));
                }
                if fields.len() != 5 {
                    return Err(err(
                        lineno,
                        "header needs: BCOSFIRE 1 <sigma0> <alpha> <polarity>".into(),
                    ));
                }
                if fields[1] != VERSION {
                    return Err(err(lineno, format!("unsupported version '{}'", fields[1])));
                }
                let sigma0 = num(fields[2], "sigma0")?;
                let alpha = num(fields[3], "alpha")?;
                let polarity = fields[4]
                    .parse::<Polarity>()
                    .map_err(|_| err(lineno, format!("invalid polarity '{}'", fields[4])))?;
                header = Some((sigma0, alpha, polarity));
            }
            Some(_) => {
                if fields.len() != 3 {
                    return Err(err(
                        lineno,
                        format!("expected 3 fields, found {}", fields.len()),
                    ));
                }
                let sigma = num(fields[0], "sigma")?;
                let rho = num(fields[1], "rho")?;
                let phi = num(fields[2], "phi")?;
                if sigma.is_nan() || sigma <= 0.0 || rho < 0.0 {
                    return Err(err(
                        lineno,
                        "sigma must be positive and rho nonnegative".into(),
                    ));
                }
                subunits.push(SubUnit::new(sigma, rho, phi));
            }
        }
    }
    let (sigma0, alpha, polarity) =
        header.ok_or_else(|| err(last_line.max(1), "missing header line".into()))?;
    if subunits.is_empty() {
        return Err(err(last_line.max(1), "model has no sub-units".into()));
    }
    CosfireModel::new(subunits, sigma0, alpha, polarity)
        .map(|m| m.with_descr(descr))
        .map_err(|e| err(last_line, e.to_string()))
}
