//! Radial interaction kernels: dispersal `a+`, competition `a-`, and the
//! immigration field `b` of the migration model.
//!
//! Every built-in family is radial and non-increasing in `|x|`, so suprema on
//! a set are attained at its point nearest the origin and infima on a ball
//! at its boundary sphere. The certificate module relies on both facts.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::geometry::Torus;

/// Relative tail mass beyond the interaction cutoff.
pub const CUTOFF_TAIL_FRACTION: f64 = 1e-10;

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    // c_0 = 1, c_1 = 2, c_d = c_{d-2} 2π / d
    let mut c = if d.is_multiple_of(2) { 1.0 } else { 2.0 };
    let mut k = if d.is_multiple_of(2) { 2 } else { 3 };
    while k <= d {
        c *= 2.0 * PI / k as f64;
        k += 2;
    }
    c
}

/// Surface area of the unit sphere in `d` dimensions.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

/// Piecewise-linear radial profile with an exponential tail.
///
/// Beyond the last radius `R` the profile continues as
/// `v_last * exp(-(|x| - R) / tail_scale)`, which keeps it continuous and
/// gives closed-form tail masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialTable {
    radii: Vec<f64>,
    values: Vec<f64>,
    tail_scale: f64,
    /// Cumulative envelope weights for radius sampling (segments, then tail).
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl RadialTable {
    pub fn new(radii: Vec<f64>, values: Vec<f64>, tail_scale: f64) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidKernel(format!("tabulated: {m}")));
        if radii.len() < 2 || radii.len() != values.len() {
            return bad("need at least two (radius, value) rows of equal length");
        }
        if radii[0] != 0.0 {
            return bad("first radius must be 0");
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) || radii.iter().any(|r| !r.is_finite()) {
            return bad("radii must be finite and strictly increasing");
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("values must be finite and nonnegative");
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return bad("values must be non-increasing in the radius");
        }
        if !(tail_scale.is_finite() && tail_scale > 0.0) {
            return bad("a positive tail_scale must be declared");
        }
        if values[0] <= 0.0 {
            return bad("value at the origin must be positive");
        }
        Ok(Self {
            radii,
            values,
            tail_scale,
            cumulative: Vec::new(),
        })
    }

    fn with_sampler(mut self, d: usize) -> Self {
        let n_seg = self.radii.len() - 1;
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(n_seg + 1);
        for i in 0..n_seg {
            acc += self.values[i] * self.radii[i + 1].powi(d as i32 - 1) * (self.radii[i + 1] - self.radii[i]);
            cumulative.push(acc);
        }
        if self.last_value() > 0.0 {
            acc += self.last_value() * self.tail_moment(self.last_radius(), d);
        }
        cumulative.push(acc);
        self.cumulative = cumulative;
        self
    }

    /// Reads a two-column `radius,value` CSV (no header required).
    pub fn from_csv(path: impl AsRef<Path>, tail_scale: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::InvalidKernel(format!(
                    "tabulated csv: expected 2 columns, got {}",
                    rec.len()
                )));
            }
            let (r, v) = match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(r), Ok(v)) => (r, v),
                // tolerate a header row
                _ if radii.is_empty() => continue,
                _ => {
                    return Err(Error::InvalidKernel(format!(
                        "tabulated csv: unparsable row {:?}",
                        rec
                    )))
                }
            };
            radii.push(r);
            values.push(v);
        }
        Self::new(radii, values, tail_scale)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_scale(&self) -> f64 {
        self.tail_scale
    }

    fn last_radius(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    fn last_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    fn profile(&self, rho: f64) -> f64 {
        let r_last = self.last_radius();
        if rho >= r_last {
            let v = self.last_value();
            if v == 0.0 {
                return 0.0;
            }
            return v * (-(rho - r_last) / self.tail_scale).exp();
        }
        let i = self.radii.partition_point(|&r| r <= rho) - 1;
        let (r0, r1) = (self.radii[i], self.radii[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        v0 + (v1 - v0) * (rho - r0) / (r1 - r0)
    }

    /// `∫_lo^hi profile(u) u^(d-1) du` on one linear segment.
    fn segment_moment(&self, i: usize, lo: f64, hi: f64, d: usize) -> f64 {
        let (r0, r1) = (self.radii[i], self.radii[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        let slope = (v1 - v0) / (r1 - r0);
        let intercept = v0 - slope * r0;
        let df = d as f64;
        let prim = |u: f64| intercept * u.powi(d as i32) / df + slope * u.powi(d as i32 + 1) / (df + 1.0);
        prim(hi) - prim(lo)
    }

    /// `∫_rho^∞ exp(-(u - R)/λ) u^(d-1) du` for `rho ≥ R`.
    fn tail_moment(&self, rho: f64, d: usize) -> f64 {
        let lam = self.tail_scale;
        let r_last = self.last_radius();
        let mut sum = 0.0;
        let mut binom = 1.0;
        let mut fact = 1.0;
        for j in 0..d {
            if j > 0 {
                binom = binom * (d - j) as f64 / j as f64;
                fact *= j as f64;
            }
            sum += binom * rho.powi((d - 1 - j) as i32) * fact * lam.powi(j as i32 + 1);
        }
        (-(rho - r_last) / lam).exp() * sum
    }

    /// Radial moment `∫_rho^∞ profile(u) u^(d-1) du`, exact.
    fn radial_moment_beyond(&self, rho: f64, d: usize) -> f64 {
        let r_last = self.last_radius();
        let tail = if self.last_value() > 0.0 {
            self.last_value() * self.tail_moment(rho.max(r_last), d)
        } else {
            0.0
        };
        if rho >= r_last {
            return tail;
        }
        let mut acc = tail;
        let start = self.radii.partition_point(|&r| r <= rho) - 1;
        for i in start..self.radii.len() - 1 {
            let lo = if i == start { rho } else { self.radii[i] };
            acc += self.segment_moment(i, lo, self.radii[i + 1], d);
        }
        acc
    }

    fn scaled(&self, alpha: f64) -> Self {
        Self {
            radii: self.radii.clone(),
            values: self.values.iter().map(|v| v * alpha).collect(),
            tail_scale: self.tail_scale,
            cumulative: Vec::new(),
        }
    }

    /// Samples a radius with density proportional to `profile(ρ) ρ^(d-1)`:
    /// rejection on the table segments against the step envelope
    /// `values[i] * radii[i+1]^(d-1)`, exact mixture sampling on the tail.
    fn sample_radius<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> f64 {
        let n_seg = self.radii.len() - 1;
        let total = *self.cumulative.last().expect("sampler table built");
        loop {
            let u = rng.random::<f64>() * total;
            let k = self.cumulative.partition_point(|&c| c <= u).min(n_seg);
            if k == n_seg {
                return self.sample_tail_radius(d, rng);
            }
            let (r0, r1) = (self.radii[k], self.radii[k + 1]);
            let rho = r0 + (r1 - r0) * rng.random::<f64>();
            let bound = self.values[k] * r1.powi(d as i32 - 1);
            if bound <= 0.0 {
                continue;
            }
            let f = self.profile(rho) * rho.powi(d as i32 - 1);
            if rng.random::<f64>() * bound <= f {
                return rho;
            }
        }
    }

    fn sample_tail_radius<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> f64 {
        // density ∝ exp(-w/λ) (R + w)^(d-1), w ≥ 0: a binomial mixture of
        // Gamma(j + 1, λ) components with weights C(d-1, j) R^(d-1-j) j! λ^(j+1)
        let lam = self.tail_scale;
        let r_last = self.last_radius();
        let mut weights = Vec::with_capacity(d);
        let mut binom = 1.0;
        let mut fact = 1.0;
        for j in 0..d {
            if j > 0 {
                binom = binom * (d - j) as f64 / j as f64;
                fact *= j as f64;
            }
            weights.push(binom * r_last.powi((d - 1 - j) as i32) * fact * lam.powi(j as i32 + 1));
        }
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut j = d - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                j = k;
                break;
            }
            u -= w;
        }
        let g = Gamma::new(j as f64 + 1.0, lam).expect("valid gamma parameters");
        r_last + g.sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `weight * N(0, width² I)` density.
    Gaussian { weight: f64, width: f64 },
    /// `height * (1 - |x|/radius)_+`.
    Triangular { height: f64, radius: f64 },
    /// `weight * exp(-|x|/scale) / Z` with `Z` the normalizer.
    Exponential { weight: f64, scale: f64 },
    Tabulated(RadialTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub struct Kernel {
    family: KernelFamily,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    #[serde(flatten)]
    family: KernelFamily,
    dim: usize,
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = Error;
    fn try_from(r: KernelRepr) -> Result<Self> {
        Kernel::new(r.family, r.dim)
    }
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        KernelRepr {
            family: k.family,
            dim: k.dim,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!("{name} must be positive and finite, got {v}")))
    }
}

impl Kernel {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be positive".into()));
        }
        let family = match family {
            KernelFamily::Tabulated(t) => KernelFamily::Tabulated(
                RadialTable::new(t.radii, t.values, t.tail_scale)?.with_sampler(dim),
            ),
            other => other,
        };
        match &family {
            KernelFamily::Gaussian { weight, width } => {
                positive("weight", *weight)?;
                positive("width", *width)?;
            }
            KernelFamily::Triangular { height, radius } => {
                positive("height", *height)?;
                positive("radius", *radius)?;
            }
            KernelFamily::Exponential { weight, scale } => {
                positive("weight", *weight)?;
                positive("scale", *scale)?;
            }
            KernelFamily::Tabulated(_) => {}
        }
        Ok(Self { family, dim })
    }

    pub fn gaussian(weight: f64, width: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian { weight, width }, dim)
    }

    pub fn triangular(height: f64, radius: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Triangular { height, radius }, dim)
    }

    pub fn exponential(weight: f64, scale: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Exponential { weight, scale }, dim)
    }

    pub fn tabulated(table: RadialTable, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Tabulated(table), dim)
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn exponential_normalizer(&self, scale: f64) -> f64 {
        let d = self.dim as f64;
        unit_sphere_area(self.dim) * scale.powf(d) * ln_gamma(d).exp()
    }

    /// Kernel value as a function of `|x|`.
    pub fn profile(&self, rho: f64) -> f64 {
        let d = self.dim as f64;
        match &self.family {
            KernelFamily::Gaussian { weight, width } => {
                let s2 = width * width;
                weight * (2.0 * PI * s2).powf(-d / 2.0) * (-rho * rho / (2.0 * s2)).exp()
            }
            KernelFamily::Triangular { height, radius } => height * (1.0 - rho / radius).max(0.0),
            KernelFamily::Exponential { weight, scale } => {
                weight * (-rho / scale).exp() / self.exponential_normalizer(*scale)
            }
            KernelFamily::Tabulated(t) => t.profile(rho),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.profile(norm(x)))
    }

    /// `⟨a⟩ = ∫ a(x) dx`.
    pub fn mass(&self) -> f64 {
        match &self.family {
            KernelFamily::Gaussian { weight, .. } | KernelFamily::Exponential { weight, .. } => *weight,
            KernelFamily::Triangular { height, radius } => {
                height * unit_ball_volume(self.dim) * radius.powi(self.dim as i32) / (self.dim as f64 + 1.0)
            }
            KernelFamily::Tabulated(t) => unit_sphere_area(self.dim) * t.radial_moment_beyond(0.0, self.dim),
        }
    }

    /// `‖a‖ = sup a`, the value at the origin.
    pub fn sup_norm(&self) -> f64 {
        self.profile(0.0)
    }

    /// Mass of the kernel outside the ball of radius `rho`.
    pub fn tail_mass(&self, rho: f64) -> f64 {
        let rho = rho.max(0.0);
        let d = self.dim as f64;
        match &self.family {
            KernelFamily::Gaussian { weight, width } => {
                if rho == 0.0 {
                    return *weight;
                }
                weight * gamma_ur(d / 2.0, rho * rho / (2.0 * width * width))
            }
            KernelFamily::Exponential { weight, scale } => {
                if rho == 0.0 {
                    return *weight;
                }
                weight * gamma_ur(d, rho / scale)
            }
            KernelFamily::Triangular { radius, .. } => {
                if rho >= *radius {
                    return 0.0;
                }
                let q = rho / radius;
                let inside = (d + 1.0) * q.powf(d) - d * q.powf(d + 1.0);
                self.mass() * (1.0 - inside).max(0.0)
            }
            KernelFamily::Tabulated(t) => unit_sphere_area(self.dim) * t.radial_moment_beyond(rho, self.dim),
        }
    }

    /// Fraction of the kernel mass inside the ball of radius `rho`.
    pub fn radial_cdf(&self, rho: f64) -> f64 {
        (1.0 - self.tail_mass(rho) / self.mass()).clamp(0.0, 1.0)
    }

    /// Interaction range used by spatial indexes: the exact support for
    /// compactly supported kernels, otherwise the radius beyond which less
    /// than `CUTOFF_TAIL_FRACTION` of the mass remains.
    pub fn cutoff_radius(&self) -> f64 {
        match &self.family {
            KernelFamily::Triangular { radius, .. } => *radius,
            KernelFamily::Tabulated(t) if t.last_value() == 0.0 => {
                let first_zero = t.values.iter().position(|v| *v == 0.0).unwrap();
                t.radii[first_zero]
            }
            _ => {
                let target = CUTOFF_TAIL_FRACTION * self.mass();
                let mut hi = self.characteristic_radius().max(f64::MIN_POSITIVE);
                while self.tail_mass(hi) > target {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if self.tail_mass(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }

    /// Length scale of the kernel: width, radius or scale for the closed
    /// forms; half-height radius for tables.
    pub fn characteristic_radius(&self) -> f64 {
        match &self.family {
            KernelFamily::Gaussian { width, .. } => *width,
            KernelFamily::Triangular { radius, .. } => *radius,
            KernelFamily::Exponential { scale, .. } => *scale,
            KernelFamily::Tabulated(t) => {
                let half = 0.5 * t.values[0];
                match t.values.iter().position(|v| *v <= half) {
                    Some(i) => t.radii[i],
                    None => t.last_radius() + t.tail_scale * std::f64::consts::LN_2,
                }
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        positive("scale factor", alpha)?;
        let family = match &self.family {
            KernelFamily::Gaussian { weight, width } => KernelFamily::Gaussian {
                weight: weight * alpha,
                width: *width,
            },
            KernelFamily::Triangular { height, radius } => KernelFamily::Triangular {
                height: height * alpha,
                radius: *radius,
            },
            KernelFamily::Exponential { weight, scale } => KernelFamily::Exponential {
                weight: weight * alpha,
                scale: *scale,
            },
            KernelFamily::Tabulated(t) => KernelFamily::Tabulated(t.scaled(alpha)),
        };
        Self::new(family, self.dim)
    }

    /// Draws a displacement with density `a(x) / ⟨a⟩`.
    pub fn sample_displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim;
        match &self.family {
            KernelFamily::Gaussian { width, .. } => (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    width * z
                })
                .collect::<Vec<f64>>(),
            KernelFamily::Triangular { radius, .. } => {
                let beta = Beta::new(d as f64, 2.0).expect("valid beta parameters");
                let rho = radius * beta.sample(rng);
                scale_direction(random_direction(d, rng), rho)
            }
            KernelFamily::Exponential { scale, .. } => {
                let g = Gamma::new(d as f64, *scale).expect("valid gamma parameters");
                let rho = g.sample(rng);
                scale_direction(random_direction(d, rng), rho)
            }
            KernelFamily::Tabulated(t) => {
                let rho = t.sample_radius(d, rng);
                scale_direction(random_direction(d, rng), rho)
            }
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale_direction(mut dir: Vec<f64>, rho: f64) -> Vec<f64> {
    dir.iter_mut().for_each(|v| *v *= rho);
    dir
}

/// Uniform point on the unit sphere.
pub fn random_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Bounded nonnegative immigration intensity on the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImmigrationField {
    Constant { rate: f64 },
    /// Piecewise-constant values on a regular grid of `cells_per_axis^d`
    /// cells covering the torus, row-major with the first axis slowest.
    Grid { cells_per_axis: usize, values: Vec<f64> },
}

impl ImmigrationField {
    pub fn constant(rate: f64) -> Result<Self> {
        let f = ImmigrationField::Constant { rate };
        f.validate(1)?;
        Ok(f)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ImmigrationField::Constant { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "immigration rate must be finite and nonnegative, got {rate}"
                    )));
                }
            }
            ImmigrationField::Grid { cells_per_axis, values } => {
                let expected = cells_per_axis.checked_pow(dim as u32).unwrap_or(0);
                if *cells_per_axis == 0 || values.len() != expected {
                    return Err(Error::InvalidArgument(format!(
                        "immigration grid needs {cells_per_axis}^{dim} values, got {}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidArgument(
                        "immigration grid values must be finite and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            ImmigrationField::Constant { rate } => *rate,
            ImmigrationField::Grid { values, .. } => values.iter().cloned().fold(0.0, f64::max),
        }
    }

    pub fn value_at(&self, torus: &Torus, x: &[f64]) -> f64 {
        match self {
            ImmigrationField::Constant { rate } => *rate,
            ImmigrationField::Grid { cells_per_axis, values } => {
                let n = *cells_per_axis;
                let idx = x.iter().fold(0usize, |acc, &c| {
                    let k = ((c / torus.side() * n as f64) as usize).min(n - 1);
                    acc * n + k
                });
                values[idx]
            }
        }
    }

    /// `∫ b` over the torus.
    pub fn total(&self, torus: &Torus) -> f64 {
        match self {
            ImmigrationField::Constant { rate } => rate * torus.volume(),
            ImmigrationField::Grid { cells_per_axis, values } => {
                let cell_vol = torus.volume() / (values.len().max(1) as f64);
                let _ = cells_per_axis;
                values.iter().sum::<f64>() * cell_vol
            }
        }
    }

    /// Position drawn with density `b(x) / ∫ b`.
    pub fn sample_position<R: Rng + ?Sized>(&self, torus: &Torus, rng: &mut R) -> Vec<f64> {
        let l = torus.side();
        let d = torus.dim();
        match self {
            ImmigrationField::Constant { .. } => (0..d).map(|_| torus.wrap_coord(l * rng.random::<f64>())).collect(),
            ImmigrationField::Grid { cells_per_axis, values } => {
                let total: f64 = values.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut cell = values.len() - 1;
                for (i, v) in values.iter().enumerate() {
                    if u < *v {
                        cell = i;
                        break;
                    }
                    u -= v;
                }
                let n = *cells_per_axis;
                let w = l / n as f64;
                let mut coords = vec![0.0; d];
                let mut rem = cell;
                for k in (0..d).rev() {
                    let idx = rem % n;
                    rem /= n;
                    coords[k] = torus.wrap_coord((idx as f64 + rng.random::<f64>()) * w);
                }
                coords
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    type TestRng = rand_chacha::ChaCha8Rng;

    #[test]
    fn masses_of_closed_forms() {
        assert_relative_eq!(Kernel::gaussian(3.0, 1.0, 2).unwrap().mass(), 3.0);
        assert_relative_eq!(Kernel::triangular(1.0, 1.0, 1).unwrap().mass(), 1.0);
        // 2D cone of height 1, radius 1: π/3
        assert_relative_eq!(Kernel::triangular(1.0, 1.0, 2).unwrap().mass(), PI / 3.0, epsilon = 1e-14);
        assert_relative_eq!(Kernel::exponential(2.5, 0.7, 3).unwrap().mass(), 2.5);
    }

    #[test]
    fn sup_norms() {
        let g = Kernel::gaussian(1.0, 1.0, 1).unwrap();
        assert_relative_eq!(g.sup_norm(), 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(Kernel::triangular(2.0, 5.0, 3).unwrap().sup_norm(), 2.0);
        assert_relative_eq!(Kernel::exponential(1.0, 2.0, 1).unwrap().sup_norm(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_examples() {
        let t = Kernel::triangular(1.0, 1.0, 1).unwrap();
        assert_relative_eq!(t.evaluate(&[0.5]).unwrap(), 0.5);
        assert_eq!(t.evaluate(&[1.5]).unwrap(), 0.0);
        let g = Kernel::gaussian(1.0, 1.0, 1).unwrap();
        assert_relative_eq!(g.evaluate(&[1.0]).unwrap(), 0.241_970_724_519_143_37, epsilon = 1e-15);
        assert!(matches!(
            g.evaluate(&[1.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Kernel::gaussian(0.0, 1.0, 1).is_err());
        assert!(Kernel::triangular(1.0, -1.0, 1).is_err());
        assert!(Kernel::exponential(1.0, 1.0, 0).is_err());
        assert!(RadialTable::new(vec![0.0, 1.0], vec![1.0, 0.0], 0.0).is_err());
        assert!(RadialTable::new(vec![0.0, 1.0, 0.5], vec![1.0, 0.5, 0.0], 1.0).is_err());
        assert!(RadialTable::new(vec![0.0, 1.0], vec![0.5, 1.0], 1.0).is_err());
        assert!(RadialTable::new(vec![0.1, 1.0], vec![1.0, 0.0], 1.0).is_err());
    }

    fn tabulated_triangle(step: f64) -> Kernel {
        let n = (1.0 / step).round() as usize;
        let radii: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        let values: Vec<f64> = radii.iter().map(|r| (1.0 - r).max(0.0)).collect();
        Kernel::tabulated(RadialTable::new(radii, values, 1.0).unwrap(), 1).unwrap()
    }

    #[test]
    fn tabulated_mass_matches_trapezoid_oracle() {
        let k = tabulated_triangle(1e-3);
        // trapezoid on the same grid, both half-lines
        let t = match k.family() {
            KernelFamily::Tabulated(t) => t.clone(),
            _ => unreachable!(),
        };
        let trap: f64 = t
            .radii()
            .windows(2)
            .zip(t.values().windows(2))
            .map(|(r, v)| 0.5 * (v[0] + v[1]) * (r[1] - r[0]))
            .sum::<f64>()
            * 2.0;
        assert!((k.mass() - 1.0).abs() < 1e-6);
        assert!((k.mass() - trap).abs() < 1e-6);
        assert_eq!(k.cutoff_radius(), 1.0);
    }

    #[test]
    fn tabulated_tail_is_continuous_and_integrated() {
        let table = RadialTable::new(vec![0.0, 1.0], vec![2.0, 1.0], 0.5).unwrap();
        let k = Kernel::tabulated(table, 2).unwrap();
        assert_relative_eq!(k.profile(1.0), 1.0);
        assert_relative_eq!(k.profile(1.5), (-1.0f64).exp(), epsilon = 1e-15);
        // mass = 2π [∫_0^1 (2 - u) u du + ∫_1^∞ e^{-(u-1)/0.5} u du]
        //      = 2π [(1 - 1/3) + (0.5 + 0.25)]
        assert_relative_eq!(k.mass(), 2.0 * PI * (2.0 / 3.0 + 0.75), epsilon = 1e-13);
        assert!(k.cutoff_radius() > 1.0);
        assert!(k.tail_mass(k.cutoff_radius()) <= CUTOFF_TAIL_FRACTION * k.mass() * 1.0001);
    }

    #[test]
    fn gaussian_cutoff_tail_fraction() {
        let g = Kernel::gaussian(1.0, 2.0, 1).unwrap();
        let rc = g.cutoff_radius();
        let tail = g.tail_mass(rc);
        assert!(tail <= 1e-10 * 1.0001 && tail > 0.5e-10, "tail {tail}");
        // 1D gaussian tail: erfc(rc / (σ√2)) ≈ 1e-10 → rc ≈ 6.47σ
        assert!((rc / 2.0 - 6.47).abs() < 0.02, "rc {rc}");
    }

    #[test]
    fn gaussian_sample_variance() {
        let g = Kernel::gaussian(1.0, 2.0, 2).unwrap();
        let mut rng = TestRng::seed_from_u64(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| g.sample_displacement(&mut rng)[0]).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // SE of the second moment of N(0, 4): sqrt(2 σ^4 / n)
        let se = (2.0 * 16.0 / n as f64).sqrt();
        assert!((var - 4.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn triangular_samples_within_support() {
        let t = Kernel::triangular(1.0, 1.0, 1).unwrap();
        let mut rng = TestRng::seed_from_u64(3);
        assert!((0..10_000).all(|_| t.sample_displacement(&mut rng)[0].abs() <= 1.0));
    }

    #[test]
    fn tabulated_sampler_matches_trapezoid_cdf() {
        let table = RadialTable::new(
            vec![0.0, 0.5, 1.0, 2.0],
            vec![1.0, 0.8, 0.3, 0.1],
            0.7,
        )
        .unwrap();
        let k = Kernel::tabulated(table, 2).unwrap();
        let mut rng = TestRng::seed_from_u64(5);
        let n = 100_000;
        let mut radii: Vec<f64> = (0..n).map(|_| norm(&k.sample_displacement(&mut rng))).collect();
        radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // numeric CDF by trapezoid integration of profile(ρ)·2πρ on a fine grid
        let step = 1e-3;
        let grid_max = 20.0;
        let m = (grid_max / step) as usize;
        let mut cdf = vec![0.0; m + 1];
        for i in 1..=m {
            let (r0, r1) = ((i - 1) as f64 * step, i as f64 * step);
            let f = |r: f64| k.profile(r) * 2.0 * PI * r;
            cdf[i] = cdf[i - 1] + 0.5 * (f(r0) + f(r1)) * step;
        }
        let total = cdf[m];
        let mut ks = 0.0f64;
        for (i, r) in radii.iter().enumerate() {
            let j = ((r / step) as usize).min(m);
            let f = cdf[j] / total;
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn scaling_is_linear() {
        let k = Kernel::exponential(1.3, 0.4, 2).unwrap();
        let s = k.scaled(2.5).unwrap();
        assert_relative_eq!(s.mass(), 2.5 * k.mass(), max_relative = 1e-14);
        assert_relative_eq!(s.sup_norm(), 2.5 * k.sup_norm(), max_relative = 1e-14);
    }

    #[test]
    fn json_block_round_trip() {
        let json = r#"{"family":"gaussian","params":{"weight":1.0,"width":2.0},"dim":2}"#;
        let k: Kernel = serde_json::from_str(json).unwrap();
        assert_eq!(k, Kernel::gaussian(1.0, 2.0, 2).unwrap());
        let back: Kernel = serde_json::from_str(&serde_json::to_string(&k).unwrap()).unwrap();
        assert_eq!(back, k);
        let bad = r#"{"family":"triangular","params":{"height":-1.0,"radius":2.0},"dim":1}"#;
        assert!(serde_json::from_str::<Kernel>(bad).is_err());
    }
}
