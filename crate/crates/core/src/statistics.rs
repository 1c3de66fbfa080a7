//! Replica statistics: density, pair correlation, window factorial moments
//! and a log-linear envelope `F_n ≤ C e^(ϑn) V^n` fitted to them.
//!
//! Each snapshot is one replica. Standard errors are between-replica
//! (sample standard deviation over `√k`).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Snapshot, Torus, TorusConfiguration, Window};
use crate::kernels::unit_ball_volume;

/// Largest absolute log-residual still read as an exponential envelope.
pub const DEFAULT_RESIDUAL_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Mean and standard error; a single sample has zero spread.
    pub fn from_samples(xs: &[f64]) -> Self {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        if xs.len() < 2 {
            return Self { value: mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        Self {
            value: mean,
            se: (var / k).sqrt(),
        }
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.value - target).abs() <= n_se * self.se
    }
}

fn check_dims(snapshots: &[Snapshot], torus: &Torus) -> Result<()> {
    for s in snapshots {
        if s.dim != torus.dim() {
            return Err(Error::DimensionMismatch {
                expected: torus.dim(),
                got: s.dim,
            });
        }
    }
    Ok(())
}

pub fn density(snapshots: &[Snapshot], torus: &Torus) -> Result<Estimate> {
    if snapshots.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "density needs at least 2 replicas, got {}",
            snapshots.len()
        )));
    }
    check_dims(snapshots, torus)?;
    let v = torus.volume();
    let xs: Vec<f64> = snapshots.iter().map(|s| s.len() as f64 / v).collect();
    Ok(Estimate::from_samples(&xs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBins {
    edges: Vec<f64>,
}

impl RadialBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges[0] < 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "bin edges must be nonnegative and strictly increasing, at least two".into(),
            ));
        }
        if !edges.iter().all(|e| e.is_finite()) {
            return Err(Error::InvalidArgument("bin edges must be finite".into()));
        }
        Ok(Self { edges })
    }

    pub fn uniform(r_max: f64, count: usize) -> Result<Self> {
        if count == 0 || !(r_max > 0.0) {
            return Err(Error::InvalidArgument("need a positive radius and bin count".into()));
        }
        Self::new((0..=count).map(|i| r_max * i as f64 / count as f64).collect())
    }

    /// 20 equal bins up to `min(L/2, 5·kernel_radius)`.
    pub fn default_for(torus: &Torus, kernel_radius: f64) -> Result<Self> {
        Self::uniform((0.5 * torus.side()).min(5.0 * kernel_radius), 20)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    fn index(&self, r: f64) -> Option<usize> {
        if r < self.edges[0] || r >= self.r_max() {
            return None;
        }
        Some(self.edges.partition_point(|e| *e <= r) - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelationBin {
    pub r_lo: f64,
    pub r_hi: f64,
    pub r: f64,
    pub g: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub bins: Vec<PairCorrelationBin>,
    /// Replicas with at least two points.
    pub replicas_used: usize,
}

impl PairCorrelation {
    /// Largest `|ĝ - 1|/SE` over bins (infinite if some bin has zero SE and
    /// deviates).
    pub fn max_deviation_in_se(&self) -> f64 {
        self.bins
            .iter()
            .map(|b| {
                let d = (b.g - 1.0).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / b.se
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Ordered-pair counts per periodic-distance bin for one snapshot.
pub fn pair_counts(snapshot: &Snapshot, torus: &Torus, bins: &RadialBins) -> Result<Vec<u64>> {
    let grid = Torus::with_cell_size(torus.side(), torus.dim(), bins.r_max())?;
    let cfg = TorusConfiguration::from_points(grid, snapshot.points())?;
    let mut counts = vec![0u64; bins.len()];
    for slot in 0..cfg.len() {
        for (other, dist) in cfg.neighbors_within(cfg.point_at(slot), bins.r_max()) {
            if other == slot {
                continue;
            }
            if let Some(i) = bins.index(dist) {
                counts[i] += 1;
            }
        }
    }
    Ok(counts)
}

/// `ĝ(r_i) = pairs_i · L^d / (N(N-1) · V_shell_i)` per replica, averaged over
/// replicas with at least two points. The `N(N-1)` normalization makes the
/// estimator exactly unbiased for Poisson input.
pub fn pair_correlation(snapshots: &[Snapshot], torus: &Torus, bins: &RadialBins) -> Result<PairCorrelation> {
    check_dims(snapshots, torus)?;
    if bins.r_max() > 0.5 * torus.side() {
        return Err(Error::InvalidArgument(format!(
            "bin edges must not exceed L/2 = {}, got {}",
            0.5 * torus.side(),
            bins.r_max()
        )));
    }
    let d = torus.dim() as i32;
    let cd = unit_ball_volume(torus.dim());
    let shells: Vec<f64> = bins.edges.windows(2).map(|w| cd * (w[1].powi(d) - w[0].powi(d))).collect();
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins.len()];
    let mut used = 0;
    for s in snapshots {
        let n = s.len() as f64;
        if s.len() < 2 {
            continue;
        }
        used += 1;
        let counts = pair_counts(s, torus, bins)?;
        for (i, c) in counts.iter().enumerate() {
            per_bin[i].push(*c as f64 * torus.volume() / (n * (n - 1.0) * shells[i]));
        }
    }
    if used == 0 {
        return Err(Error::InsufficientData("every replica has fewer than 2 points".into()));
    }
    let bins_out = per_bin
        .iter()
        .enumerate()
        .map(|(i, xs)| {
            let e = Estimate::from_samples(xs);
            let (lo, hi) = (bins.edges[i], bins.edges[i + 1]);
            PairCorrelationBin {
                r_lo: lo,
                r_hi: hi,
                r: 0.5 * (lo + hi),
                g: e.value,
                se: e.se,
            }
        })
        .collect();
    Ok(PairCorrelation {
        bins: bins_out,
        replicas_used: used,
    })
}

pub fn falling_factorial(n: u64, k: usize) -> f64 {
    (0..k as u64).map(|j| n as f64 - j as f64).product()
}

/// `F̂_n = mean N(N-1)···(N-n+1)` over replicas for `n = 1..=n_max`.
pub fn factorial_moments(snapshots: &[Snapshot], window: &Window, n_max: usize) -> Result<Vec<Estimate>> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if snapshots.is_empty() {
        return Err(Error::InsufficientData("no snapshots".into()));
    }
    let counts: Vec<u64> = snapshots.iter().map(|s| s.count_in_window(window) as u64).collect();
    Ok((1..=n_max)
        .map(|n| {
            let xs: Vec<f64> = counts.iter().map(|&c| falling_factorial(c, n)).collect();
            Estimate::from_samples(&xs)
        })
        .collect())
}

/// Stirling numbers of the second kind `S(n, k)` for `0 ≤ k ≤ n ≤ n_max`.
fn stirling2(n_max: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; n_max + 1]; n_max + 1];
    s[0][0] = 1.0;
    for n in 1..=n_max {
        for k in 1..=n {
            s[n][k] = k as f64 * s[n - 1][k] + s[n - 1][k - 1];
        }
    }
    s
}

/// Signed Stirling numbers of the first kind `s(n, k)`.
fn stirling1(n_max: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; n_max + 1]; n_max + 1];
    s[0][0] = 1.0;
    for n in 1..=n_max {
        for k in 1..=n {
            s[n][k] = s[n - 1][k - 1] - (n - 1) as f64 * s[n - 1][k];
        }
    }
    s
}

/// Power moments `E[N^n] = Σ_k S(n,k) F_k` from factorial moments
/// `F_1..F_nmax` (slice index `n - 1`).
pub fn power_from_factorial(factorial: &[f64]) -> Vec<f64> {
    let s = stirling2(factorial.len());
    (1..=factorial.len())
        .map(|n| (1..=n).map(|k| s[n][k] * factorial[k - 1]).sum())
        .collect()
}

/// Inverse of [`power_from_factorial`].
pub fn factorial_from_power(power: &[f64]) -> Vec<f64> {
    let s = stirling1(power.len());
    (1..=power.len())
        .map(|n| (1..=n).map(|k| s[n][k] * power[k - 1]).sum())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    /// Least-squares constant.
    pub c: f64,
    pub theta: f64,
    /// Smallest `C` making `F_n ≤ C e^(ϑn) V^n` hold at every fitted order.
    pub c_envelope: f64,
    pub orders: Vec<usize>,
    /// `log F_n - (log C + n(ϑ + log V))` per fitted order.
    pub residuals: Vec<f64>,
    pub max_abs_residual: f64,
    pub residual_tolerance: f64,
    /// Residuals within tolerance: the moments look exponential in `n`.
    pub exponential: bool,
}

/// Least squares `log F_n ≈ log C + n(ϑ + log V)` over orders with `F_n > 0`.
pub fn envelope_fit(moments: &[f64], volume: f64, residual_tolerance: f64) -> Result<EnvelopeFit> {
    if !(volume > 0.0) {
        return Err(Error::InvalidArgument("window volume must be positive".into()));
    }
    let pts: Vec<(f64, f64)> = moments
        .iter()
        .enumerate()
        .filter(|(_, f)| **f > 0.0 && f.is_finite())
        .map(|(i, f)| ((i + 1) as f64, f.ln()))
        .collect();
    if pts.is_empty() {
        return Err(Error::InsufficientData("no positive moments to fit".into()));
    }
    let (slope, intercept) = if pts.len() == 1 {
        // one order fixes only the product; take C = 1
        (pts[0].1 / pts[0].0, 0.0)
    } else {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        (slope, my - slope * mx)
    };
    let residuals: Vec<f64> = pts.iter().map(|(n, y)| y - (intercept + slope * n)).collect();
    let max_abs_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let c_envelope = residuals.iter().fold(f64::NEG_INFINITY, |m, r| m.max(*r)).exp() * intercept.exp();
    Ok(EnvelopeFit {
        c: intercept.exp(),
        theta: slope - volume.ln(),
        c_envelope,
        orders: pts.iter().map(|p| p.0 as usize).collect(),
        residuals,
        max_abs_residual,
        residual_tolerance,
        exponential: max_abs_residual <= residual_tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub time: f64,
    pub replicas: usize,
    pub density: Estimate,
    pub window: Window,
    pub factorial_moments: Vec<Estimate>,
    pub envelope: Option<EnvelopeFit>,
    pub pair_correlation: Option<PairCorrelation>,
}

/// Full report for one snapshot time. Pair correlation is skipped when no
/// bins are given or no replica has two points; the envelope when no
/// moment is positive.
pub fn moment_report(
    snapshots: &[Snapshot],
    torus: &Torus,
    window: &Window,
    n_max: usize,
    bins: Option<&RadialBins>,
) -> Result<MomentReport> {
    window.check_within(torus)?;
    let density = density(snapshots, torus)?;
    let factorial_moments = factorial_moments(snapshots, window, n_max)?;
    let values: Vec<f64> = factorial_moments.iter().map(|e| e.value).collect();
    let envelope = match envelope_fit(&values, window.volume(), DEFAULT_RESIDUAL_TOLERANCE) {
        Ok(f) => Some(f),
        Err(Error::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let pair_correlation = match bins {
        None => None,
        Some(b) => match pair_correlation(snapshots, torus, b) {
            Ok(g) => Some(g),
            Err(Error::InsufficientData(_)) => None,
            Err(e) => return Err(e),
        },
    };
    Ok(MomentReport {
        time: snapshots[0].time,
        replicas: snapshots.len(),
        density,
        window: window.clone(),
        factorial_moments,
        envelope,
        pair_correlation,
    })
}

/// Writes `r,g,se` rows.
pub fn write_pair_correlation_csv<W: Write>(out: W, g: &PairCorrelation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["r", "g", "se"])?;
    for b in &g.bins {
        w.write_record([b.r.to_string(), b.g.to_string(), b.se.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_poisson;
    use crate::rng;
    use approx::assert_relative_eq;

    fn snap(points: &[&[f64]]) -> Snapshot {
        let dim = points.first().map_or(1, |p| p.len());
        Snapshot {
            time: 0.0,
            dim,
            ids: (0..points.len() as u64).collect(),
            coords: points.iter().flat_map(|p| p.iter().copied()).collect(),
        }
    }

    fn poisson_snaps(torus: Torus, kappa: f64, reps: u64, seed: u64) -> Vec<Snapshot> {
        (0..reps)
            .map(|i| sample_poisson(torus, kappa, &mut rng::stream(seed, i)).unwrap().snapshot(0.0))
            .collect()
    }

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0]);
        assert_eq!(e.value, 2.0);
        assert_relative_eq!(e.se, (1.0f64 / 3.0).sqrt());
        assert_eq!(Estimate::from_samples(&[4.0]).se, 0.0);
    }

    #[test]
    fn density_of_poisson_and_empty() {
        let t = Torus::new(20.0, 2).unwrap();
        let e = density(&poisson_snaps(t, 1.0, 50, 1), &t).unwrap();
        assert!(e.within(1.0, 3.0), "{e:?}");
        let empty = vec![snap(&[]), snap(&[])];
        let t1 = Torus::new(20.0, 1).unwrap();
        assert_eq!(density(&empty, &t1).unwrap(), Estimate { value: 0.0, se: 0.0 });
        assert!(density(&empty[..1], &t1).is_err());
    }

    #[test]
    fn two_points_fill_one_bin() {
        let t = Torus::new(10.0, 1).unwrap();
        let s = snap(&[&[1.0], &[2.0]]);
        let bins = RadialBins::new(vec![0.0, 0.5, 1.5, 2.5]).unwrap();
        assert_eq!(pair_counts(&s, &t, &bins).unwrap(), vec![0, 2, 0]);
        let g = pair_correlation(&[s], &t, &bins).unwrap();
        assert_eq!(g.bins[0].g, 0.0);
        // 2 pairs · L / (2 · shell length 2) = 5
        assert_relative_eq!(g.bins[1].g, 5.0);
        assert_eq!(g.bins[2].g, 0.0);
    }

    #[test]
    fn pair_counts_match_brute_force() {
        let t = Torus::new(7.0, 2).unwrap();
        let cfg = sample_poisson(t, 2.0, &mut rng::stream(3, 0)).unwrap();
        let s = cfg.snapshot(0.0);
        let bins = RadialBins::uniform(3.5, 7).unwrap();
        let mut want = vec![0u64; 7];
        let pts: Vec<&[f64]> = s.points().collect();
        for (i, p) in pts.iter().enumerate() {
            for (j, q) in pts.iter().enumerate() {
                if i != j {
                    let r = t.periodic_distance(p, q);
                    if r < 3.5 {
                        want[(r / 0.5) as usize] += 1;
                    }
                }
            }
        }
        assert_eq!(pair_counts(&s, &t, &bins).unwrap(), want);
    }

    #[test]
    fn pair_correlation_errors() {
        let t = Torus::new(10.0, 1).unwrap();
        let bins = RadialBins::uniform(2.0, 4).unwrap();
        assert!(matches!(
            pair_correlation(&[snap(&[&[1.0]]), snap(&[])], &t, &bins),
            Err(Error::InsufficientData(_))
        ));
        let wide = RadialBins::uniform(6.0, 4).unwrap();
        assert!(pair_correlation(&[snap(&[&[1.0], &[2.0]])], &t, &wide).is_err());
        assert!(RadialBins::new(vec![0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn poisson_pair_correlation_is_flat() {
        let t = Torus::new(10.0, 2).unwrap();
        let snaps = poisson_snaps(t, 2.0, 200, 11);
        let g = pair_correlation(&snaps, &t, &RadialBins::uniform(2.5, 10).unwrap()).unwrap();
        assert_eq!(g.replicas_used, 200);
        for b in &g.bins {
            assert!((b.g - 1.0).abs() < 4.0 * b.se, "{b:?}");
        }
    }

    #[test]
    fn factorial_moments_examples() {
        let w = Window::cube(0.0, 5.0, 1).unwrap();
        let ones = vec![snap(&[&[1.0]]), snap(&[&[2.0]])];
        let f = factorial_moments(&ones, &w, 3).unwrap();
        assert_eq!(f[0].value, 1.0);
        assert_eq!(f[1].value, 0.0);
        assert_eq!(f[2].value, 0.0);
        assert!(factorial_moments(&ones, &w, 0).is_err());

        let t = Torus::new(10.0, 2).unwrap();
        let snaps = poisson_snaps(t, 0.5, 4000, 5);
        let w = Window::cube(1.0, 3.0, 2).unwrap();
        let f = factorial_moments(&snaps, &w, 3).unwrap();
        let mean_count = snaps.iter().map(|s| s.count_in_window(&w) as f64).sum::<f64>() / snaps.len() as f64;
        assert_eq!(f[0].value, mean_count);
        for (n, e) in f.iter().enumerate() {
            assert!(e.within(4.5f64.powi(n as i32 + 1), 3.0), "n={} {e:?}", n + 1);
        }
    }

    #[test]
    fn stirling_conversion_round_trips() {
        // Poisson(λ) power moments: λ, λ+λ², λ+3λ²+λ³
        let l: f64 = 1.7;
        let p = power_from_factorial(&[l, l * l, l * l * l]);
        assert_relative_eq!(p[0], l);
        assert_relative_eq!(p[1], l + l * l);
        assert_relative_eq!(p[2], l + 3.0 * l * l + l.powi(3));
        let back = factorial_from_power(&p);
        for (a, b) in back.iter().zip([l, l * l, l.powi(3)]) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
        // direct check on one sample: N = 4
        let n = 4u64;
        let f: Vec<f64> = (1..=4).map(|k| falling_factorial(n, k)).collect();
        let p = power_from_factorial(&f);
        for (k, v) in p.iter().enumerate() {
            assert_relative_eq!(*v, 4f64.powi(k as i32 + 1));
        }
    }

    #[test]
    fn envelope_fit_examples() {
        let (kappa, v): (f64, f64) = (0.8, 3.0);
        let m: Vec<f64> = (1..=4).map(|n| (kappa * v).powi(n)).collect();
        let fit = envelope_fit(&m, v, DEFAULT_RESIDUAL_TOLERANCE).unwrap();
        assert_relative_eq!(fit.theta, kappa.ln(), epsilon = 1e-12);
        assert_relative_eq!(fit.c, 1.0, epsilon = 1e-12);
        assert!(fit.max_abs_residual < 1e-12 && fit.exponential);

        let (c0, t0) = (2.5f64, -0.3f64);
        let m: Vec<f64> = (1..=5).map(|n| c0 * (t0 * n as f64).exp() * v.powi(n)).collect();
        let fit = envelope_fit(&m, v, DEFAULT_RESIDUAL_TOLERANCE).unwrap();
        assert!((fit.c - c0).abs() < 1e-6 && (fit.theta - t0).abs() < 1e-6);

        let m: Vec<f64> = (1..=5).map(|n| falling_factorial(n as u64, n) * v.powi(n as i32)).collect();
        let fit = envelope_fit(&m, v, DEFAULT_RESIDUAL_TOLERANCE).unwrap();
        assert!(!fit.exponential, "residual {}", fit.max_abs_residual);
        // envelope constant dominates every order
        for (n, f) in fit.orders.iter().zip(&m) {
            assert!(fit.c_envelope * (fit.theta * *n as f64).exp() * v.powi(*n as i32) >= f * (1.0 - 1e-12));
        }

        let fit = envelope_fit(&[0.0, 2.0, 0.0, 8.0], 1.0, 0.1).unwrap();
        assert_eq!(fit.orders, vec![2, 4]);
        assert!(envelope_fit(&[0.0, 0.0], 1.0, 0.1).is_err());
    }

    #[test]
    fn moment_report_is_consistent() {
        let t = Torus::new(10.0, 1).unwrap();
        let snaps = poisson_snaps(t, 1.0, 40, 8);
        let w = Window::cube(2.0, 4.0, 1).unwrap();
        let r = moment_report(&snaps, &t, &w, 3, Some(&RadialBins::default_for(&t, 1.0).unwrap())).unwrap();
        assert_eq!(r.pair_correlation.as_ref().unwrap().bins.len(), 20);
        assert!(r.factorial_moments.iter().all(|e| e.se >= 0.0 && e.value.is_finite()));
        let json = serde_json::to_string(&r).unwrap();
        let back: MomentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let mut buf = Vec::new();
        write_pair_correlation_csv(&mut buf, r.pair_correlation.as_ref().unwrap()).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("r,g,se\n"));
    }
}
