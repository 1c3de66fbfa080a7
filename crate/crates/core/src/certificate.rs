//! Self-regulation certificates.
//!
//! For dispersal `a+` and competition `a-` a certificate is a pair `(ω, θ)`
//! with
//!
//! ```text
//! U_θ(η) = ω|η| + Σ_{x≠y} a-(x - y) - θ Σ_{x≠y} a+(x - y) >= 0
//! ```
//!
//! for every finite configuration `η ⊂ R^d`. The construction follows a
//! cell-and-packing argument: pick a Riemann slack `ε`, a cell side `h` with
//! upper Riemann sum `h^d Σ_l sup_{E_l} a+ <= ⟨a+⟩ + ε`, and a radius `r` with
//! `a-_r = inf_{|x| < 2r} a- > 0`. With
//!
//! ```text
//! g_d(h, r) = Δ(d)/c_d · ((h + 2r)/(h r))^d
//! δ(a+)     = max{ ‖a+‖, (⟨a+⟩ + ε) g_d(h, r) }
//! θ         = min{ ω / (2δ), a-_r / δ }
//! ```
//!
//! the inequality holds for all `η`, by induction on `|η|` removing the
//! most crowded point at each step.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{unit_ball_volume, Kernel};
use crate::rng;

/// Upper bound on lattice cells visited by one Riemann sum.
pub const MAX_RIEMANN_CELLS: u64 = 50_000_000;

/// Packing density bound `Δ(d)` used in the ball-counting step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackingConstant {
    /// `Δ(d) = 1`: plain volume counting, valid in every dimension.
    #[default]
    Unit,
    /// Densest known packings for `d <= 3`: 1, π/√12, π/√18.
    Densest,
}

impl PackingConstant {
    pub fn value(self, d: usize) -> Result<f64> {
        match (self, d) {
            (PackingConstant::Unit, _) | (PackingConstant::Densest, 1) => Ok(1.0),
            (PackingConstant::Densest, 2) => Ok(std::f64::consts::PI / 12f64.sqrt()),
            (PackingConstant::Densest, 3) => Ok(std::f64::consts::PI / 18f64.sqrt()),
            (PackingConstant::Densest, _) => Err(Error::InvalidArgument(format!(
                "no built-in dense packing constant for d = {d}"
            ))),
        }
    }
}

/// `a-_r`: infimum of the competition kernel on the open ball of radius `2r`,
/// i.e. its profile at radius `2r`.
pub fn inf_on_ball(a_minus: &Kernel, r: f64) -> f64 {
    a_minus.profile(2.0 * r)
}

/// Rigorous upper Riemann sum `h^d Σ_l sup_{E_l} a` over the lattice cubes
/// `Π [k_i h, (k_i + 1) h]`.
///
/// Each cell's supremum is taken at its point nearest the origin. Cells whose
/// nearest point lies beyond `R_e = cutoff + h√d` are not enumerated; their
/// total is bounded by `(R_e / (R_e - h√d))^(d-1) · tail_mass(R_e - h√d)`,
/// since `h^d a(ρ_C) <= ∫_C a(|y| - h√d) dy` for every such cell.
pub fn riemann_upper_sum(a: &Kernel, h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("cell side must be positive, got {h}")));
    }
    let d = a.dim();
    let diag = h * (d as f64).sqrt();
    let cutoff = a.cutoff_radius();
    let compact = a.tail_mass(cutoff) == 0.0;
    let reach = if compact { cutoff } else { cutoff + diag };

    // nearest-point coordinate magnitudes are m·h, m >= 0, each realized by
    // two lattice indices (k = m and k = -m - 1)
    let m_max = (reach / h).ceil() as u64;
    let estimate = (m_max + 1).saturating_pow(d as u32);
    if estimate > MAX_RIEMANN_CELLS.saturating_mul(2) {
        let ball_fraction = unit_ball_volume(d) / 2f64.powi(d as i32);
        if estimate as f64 * ball_fraction > MAX_RIEMANN_CELLS as f64 {
            return Err(Error::InvalidArgument(format!(
                "cell side {h} needs about {:.3e} cells; refine the search grid",
                estimate as f64 * ball_fraction
            )));
        }
    }

    fn walk(a: &Kernel, h: f64, reach2: f64, axes_left: usize, rho2: f64) -> f64 {
        if axes_left == 0 {
            return a.profile(rho2.sqrt());
        }
        let mut acc = 0.0;
        let mut m = 0u64;
        loop {
            let c = m as f64 * h;
            let next = rho2 + c * c;
            if next >= reach2 {
                break;
            }
            acc += walk(a, h, reach2, axes_left - 1, next);
            m += 1;
        }
        acc
    }

    let inner = walk(a, h, reach * reach, d, 0.0);
    let scale = (2.0 * h).powi(d as i32);
    let tail = if compact {
        0.0
    } else {
        let inner_r = reach - diag;
        (reach / inner_r).powi(d as i32 - 1) * a.tail_mass(inner_r)
    };
    Ok(scale * inner + tail)
}

/// `g_d(h, r) = Δ/c_d ((h + 2r)/(h r))^d`. `h^d g_d(h, r)` bounds the number
/// of points with pairwise distances `>= 2r` inside one cell of side `h`.
pub fn packing_bound(d: usize, h: f64, r: f64, packing: f64) -> f64 {
    packing / unit_ball_volume(d) * ((h + 2.0 * r) / (h * r)).powi(d as i32)
}

/// Grid of `(ε, r, h)` candidates explored by [`certify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    /// `ε` as multiples of `⟨a+⟩`.
    pub epsilon_factors: Vec<f64>,
    /// Absolute radii `r`.
    pub radii: Vec<f64>,
    /// `h` as multiples of `r`.
    pub cell_factors: Vec<f64>,
}

impl SearchGrid {
    /// `ε ∈ {0.1, 0.5, 1}·⟨a+⟩`, 31 log-spaced `r` over
    /// `[10^-2, 10]` times the competition length scale, `h ∈ {r/2, r, 2r}`.
    pub fn default_for(a_minus: &Kernel) -> Self {
        let scale = a_minus.characteristic_radius();
        let n = 31;
        let (lo, hi) = (1e-2f64.ln(), 10f64.ln());
        let radii = (0..n)
            .map(|i| scale * (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
            .collect();
        Self {
            epsilon_factors: vec![0.1, 0.5, 1.0],
            radii,
            cell_factors: vec![0.5, 1.0, 2.0],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
        if ok(&self.epsilon_factors) && ok(&self.radii) && ok(&self.cell_factors) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("search grid entries must be non-empty and positive".into()))
        }
    }

    pub fn len(&self) -> usize {
        self.epsilon_factors.len() * self.radii.len() * self.cell_factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub grid: SearchGrid,
    pub points_total: usize,
    /// Points with `a-_r > 0`.
    pub points_reaching: usize,
    /// Riemann sums evaluated while searching.
    pub riemann_evaluations: usize,
    /// `(ε, r, h)` indices of the chosen point.
    pub chosen_index: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub dim: usize,
    pub epsilon: f64,
    pub h: f64,
    pub r: f64,
    pub a_r_minus: f64,
    pub riemann_sum: f64,
    pub g: f64,
    pub delta: f64,
    pub packing_constant: f64,
    pub unit_ball_volume: f64,
    pub a_plus_mass: f64,
    pub a_plus_sup: f64,
    pub omega: f64,
    pub theta: f64,
    pub search: Option<SearchRecord>,
}

impl Certificate {
    /// Builds the certificate at one grid point, or `None` when `a-_r = 0`.
    /// The Riemann condition is not checked here.
    fn at_point(a_plus: &Kernel, a_minus: &Kernel, omega: f64, epsilon: f64, r: f64, h: f64, packing: f64) -> Option<Self> {
        let d = a_plus.dim();
        let a_r_minus = inf_on_ball(a_minus, r);
        if a_r_minus <= 0.0 {
            return None;
        }
        let g = packing_bound(d, h, r, packing);
        let mass = a_plus.mass();
        let sup = a_plus.sup_norm();
        let delta = sup.max((mass + epsilon) * g);
        let theta = (omega / (2.0 * delta)).min(a_r_minus / delta);
        Some(Self {
            dim: d,
            epsilon,
            h,
            r,
            a_r_minus,
            riemann_sum: f64::NAN,
            g,
            delta,
            packing_constant: packing,
            unit_ball_volume: unit_ball_volume(d),
            a_plus_mass: mass,
            a_plus_sup: sup,
            omega,
            theta,
            search: None,
        })
    }

    /// Recomputes the arithmetic chain from the stored fields and the
    /// kernels; returns a description of the first mismatch.
    pub fn audit(&self, a_plus: &Kernel, a_minus: &Kernel) -> std::result::Result<(), String> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        let check = |name: &str, stored: f64, fresh: f64| {
            if close(stored, fresh) {
                Ok(())
            } else {
                Err(format!("{name}: stored {stored}, recomputed {fresh}"))
            }
        };
        let d = a_plus.dim();
        check("unit_ball_volume", self.unit_ball_volume, unit_ball_volume(d))?;
        check("a_plus_mass", self.a_plus_mass, a_plus.mass())?;
        check("a_plus_sup", self.a_plus_sup, a_plus.sup_norm())?;
        check("a_r_minus", self.a_r_minus, inf_on_ball(a_minus, self.r))?;
        let g = packing_bound(d, self.h, self.r, self.packing_constant);
        check("g", self.g, g)?;
        let delta = self.a_plus_sup.max((self.a_plus_mass + self.epsilon) * g);
        check("delta", self.delta, delta)?;
        let riemann = riemann_upper_sum(a_plus, self.h).map_err(|e| e.to_string())?;
        check("riemann_sum", self.riemann_sum, riemann)?;
        if !(self.a_r_minus > 0.0) {
            return Err("a_r_minus must be positive".into());
        }
        if self.riemann_sum > self.a_plus_mass + self.epsilon {
            return Err(format!(
                "riemann sum {} exceeds mass + epsilon {}",
                self.riemann_sum,
                self.a_plus_mass + self.epsilon
            ));
        }
        let bound = (self.omega / (2.0 * delta)).min(self.a_r_minus / delta);
        if !(self.theta <= bound * (1.0 + 1e-12)) {
            return Err(format!("theta {} exceeds bound {bound}", self.theta));
        }
        Ok(())
    }
}

/// Searches the grid for the certificate with the largest `θ`.
///
/// `θ` at a grid point does not depend on the Riemann sum, so candidates are
/// ranked first and the Riemann condition is checked in decreasing order of
/// `θ` (ties broken by grid order) until one passes.
pub fn certify(
    a_plus: &Kernel,
    a_minus: &Kernel,
    omega: f64,
    grid: &SearchGrid,
    packing: PackingConstant,
) -> Result<Certificate> {
    if a_plus.dim() != a_minus.dim() {
        return Err(Error::DimensionMismatch {
            expected: a_plus.dim(),
            got: a_minus.dim(),
        });
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::InvalidArgument(format!("omega must be positive, got {omega}")));
    }
    grid.validate()?;
    let packing_value = packing.value(a_plus.dim())?;
    let mass = a_plus.mass();

    let mut candidates = Vec::new();
    for (ie, ef) in grid.epsilon_factors.iter().enumerate() {
        for (ir, &r) in grid.radii.iter().enumerate() {
            for (ih, hf) in grid.cell_factors.iter().enumerate() {
                if let Some(c) = Certificate::at_point(a_plus, a_minus, omega, ef * mass, r, hf * r, packing_value) {
                    candidates.push(([ie, ir, ih], c));
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoCompetitionInReach);
    }
    let reaching = candidates.len();
    // stable sort keeps grid order among equal θ
    candidates.sort_by(|a, b| b.1.theta.total_cmp(&a.1.theta));

    let mut riemann_cache: Vec<(f64, Option<f64>)> = Vec::new();
    let mut evaluations = 0;
    for (index, mut cert) in candidates {
        let riemann = match riemann_cache.iter().find(|(h, _)| *h == cert.h) {
            Some((_, v)) => *v,
            None => {
                evaluations += 1;
                let v = riemann_upper_sum(a_plus, cert.h).ok();
                riemann_cache.push((cert.h, v));
                v
            }
        };
        let Some(riemann) = riemann else { continue };
        if riemann <= mass + cert.epsilon {
            cert.riemann_sum = riemann;
            cert.search = Some(SearchRecord {
                grid: grid.clone(),
                points_total: grid.len(),
                points_reaching: reaching,
                riemann_evaluations: evaluations,
                chosen_index: index,
            });
            return Ok(cert);
        }
    }
    Err(Error::InvalidArgument(
        "no grid point satisfies the Riemann bound; add finer cells or larger epsilon".into(),
    ))
}

fn pair_sums(points: &[Vec<f64>], a_plus: &Kernel, a_minus: &Kernel) -> (f64, f64) {
    let mut sum_minus = 0.0;
    let mut sum_plus = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let rho = flat_distance(&points[i], &points[j]);
            sum_minus += a_minus.profile(rho);
            sum_plus += a_plus.profile(rho);
        }
    }
    (2.0 * sum_minus, 2.0 * sum_plus)
}

fn flat_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `U_θ(η)` with flat distances; double sums over ordered pairs.
pub fn u_theta(points: &[Vec<f64>], a_plus: &Kernel, a_minus: &Kernel, omega: f64, theta: f64) -> f64 {
    let (sum_minus, sum_plus) = pair_sums(points, a_plus, a_minus);
    (omega * points.len() as f64 + sum_minus) - theta * sum_plus
}

/// `U_θ(x, η∖x) = U_θ(η) - U_θ(η∖x) = ω + 2(Σ_y a-(x-y) - θ Σ_y a+(x-y))`.
pub fn u_theta_increment(x: &[f64], rest: &[Vec<f64>], a_plus: &Kernel, a_minus: &Kernel, omega: f64, theta: f64) -> f64 {
    let mut sum_minus = 0.0;
    let mut sum_plus = 0.0;
    for y in rest {
        let rho = flat_distance(x, y);
        sum_minus += a_minus.profile(rho);
        sum_plus += a_plus.profile(rho);
    }
    omega + 2.0 * (sum_minus - theta * sum_plus)
}

/// Index of a point maximizing `|η ∩ K_2r(x)|` (open ball), and that count.
pub fn most_crowded_point(points: &[Vec<f64>], r: f64) -> Option<(usize, usize)> {
    let counts = points.iter().map(|x| points.iter().filter(|y| flat_distance(x, y) < 2.0 * r).count());
    counts
        .enumerate()
        .fold(None, |best, (i, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((i, c)),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigSampler {
    /// Uniform points in a cube with log-uniform side.
    UniformBox,
    /// Poisson points in a cube, capped at the size limit.
    Poisson,
    /// Gaussian blobs at the certificate radius `r`.
    ClusterAtRadius,
    /// Gaussian blobs at the dispersal length scale.
    ClusterAtDispersal,
}

impl ConfigSampler {
    pub const ALL: [ConfigSampler; 4] = [
        ConfigSampler::UniformBox,
        ConfigSampler::Poisson,
        ConfigSampler::ClusterAtRadius,
        ConfigSampler::ClusterAtDispersal,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub trials: usize,
    pub size_max: usize,
    /// Samplers cycled by trial index.
    pub samplers: Vec<ConfigSampler>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 100_000,
            size_max: 30,
            samplers: ConfigSampler::ALL.to_vec(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub trials: usize,
    pub violations: usize,
    pub min_u: f64,
    pub argmin_trial: usize,
    pub argmin_sampler: ConfigSampler,
    pub argmin_config: Vec<Vec<f64>>,
}

struct Scales {
    r: f64,
    dispersal: f64,
    competition: f64,
}

fn log_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

fn sample_config<R: Rng + ?Sized>(kind: ConfigSampler, d: usize, size_max: usize, s: &Scales, rng: &mut R) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=size_max);
    let uniform_in = |side: f64, count: usize, rng: &mut R| -> Vec<Vec<f64>> {
        (0..count).map(|_| (0..d).map(|_| side * rng.random::<f64>()).collect()).collect()
    };
    let blobs = |width_lo: f64, width_hi: f64, rng: &mut R| -> Vec<Vec<f64>> {
        let n_blobs = rng.random_range(1..=3usize).min(n);
        let spread = log_uniform(s.r.min(s.dispersal) * 0.5, 4.0 * s.dispersal.max(s.competition), rng);
        let centers = uniform_in(spread, n_blobs, rng);
        (0..n)
            .map(|i| {
                let c = &centers[i % n_blobs];
                let w = log_uniform(width_lo, width_hi, rng);
                let normal = Normal::new(0.0, w).expect("positive width");
                c.iter().map(|ci| ci + normal.sample(rng)).collect()
            })
            .collect()
    };
    match kind {
        ConfigSampler::UniformBox => {
            let side = log_uniform(0.25 * s.r, 4.0 * s.dispersal.max(s.competition), rng);
            uniform_in(side, n, rng)
        }
        ConfigSampler::Poisson => {
            let side = log_uniform(0.25 * s.r, 4.0 * s.dispersal.max(s.competition), rng);
            let mean = n as f64;
            let count = (Poisson::new(mean).expect("positive mean").sample(rng) as usize).clamp(1, size_max);
            uniform_in(side, count, rng)
        }
        ConfigSampler::ClusterAtRadius => blobs(0.01 * s.r, s.r, rng),
        ConfigSampler::ClusterAtDispersal => blobs(0.1 * s.dispersal, s.dispersal, rng),
    }
}

/// Draws configurations and reports the smallest `U_θ` found.
///
/// Trial `i` uses its own stream `rng::stream(seed, i)` and sampler
/// `samplers[i % samplers.len()]`, so the report is independent of thread
/// scheduling. Ties in the minimum go to the lowest trial index.
pub fn verify_certificate(
    omega: f64,
    theta: f64,
    r: f64,
    a_plus: &Kernel,
    a_minus: &Kernel,
    opts: &VerifyOptions,
) -> Result<ViolationReport> {
    if opts.trials == 0 || opts.size_max == 0 || opts.samplers.is_empty() {
        return Err(Error::InvalidArgument("need trials >= 1, size_max >= 1 and at least one sampler".into()));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let d = a_plus.dim();
    let scales = Scales {
        r,
        dispersal: a_plus.characteristic_radius(),
        competition: a_minus.characteristic_radius(),
    };
    let outcomes: Vec<(f64, usize)> = (0..opts.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(opts.seed, i as u64);
            let kind = opts.samplers[i % opts.samplers.len()];
            let eta = sample_config(kind, d, opts.size_max, &scales, &mut rng);
            (u_theta(&eta, a_plus, a_minus, omega, theta), i)
        })
        .collect();
    let violations = outcomes.iter().filter(|(u, _)| *u < 0.0).count();
    let (min_u, argmin) = outcomes
        .iter()
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one trial");
    let argmin_sampler = opts.samplers[argmin % opts.samplers.len()];
    let mut rng = rng::stream(opts.seed, argmin as u64);
    let argmin_config = sample_config(argmin_sampler, d, opts.size_max, &scales, &mut rng);
    Ok(ViolationReport {
        trials: opts.trials,
        violations,
        min_u,
        argmin_trial: argmin,
        argmin_sampler,
        argmin_config,
    })
}

/// [`verify_certificate`] with the certificate's own `(ω, θ, r)`.
pub fn verify(cert: &Certificate, a_plus: &Kernel, a_minus: &Kernel, opts: &VerifyOptions) -> Result<ViolationReport> {
    verify_certificate(cert.omega, cert.theta, cert.r, a_plus, a_minus, opts)
}
