//! Periodic habitat, finite point configurations and a cell-list index.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// Periodic box `[0, L)^d` tiled by `cells_per_axis^d` index cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    side: f64,
    dim: usize,
    cells_per_axis: usize,
}

impl Torus {
    /// Torus with the default index of cells no finer than `L/8`.
    pub fn new(side: f64, dim: usize) -> Result<Self> {
        Self::with_cell_size(side, dim, side / 8.0)
    }

    /// Index cells of the smallest size `L/n` that is still `>= min_cell`.
    pub fn with_cell_size(side: f64, dim: usize, min_cell: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidTorus(format!("side must be positive, got {side}")));
        }
        if dim == 0 {
            return Err(Error::InvalidTorus("dimension must be positive".into()));
        }
        if !(min_cell > 0.0) {
            return Err(Error::InvalidTorus(format!("cell size must be positive, got {min_cell}")));
        }
        let n = ((side / min_cell).floor() as usize).clamp(1, 1 << 20);
        if n.checked_pow(dim as u32).is_none_or(|c| c > 1 << 24) {
            return Err(Error::InvalidTorus(format!("{n}^{dim} index cells is too many")));
        }
        Ok(Self {
            side,
            dim,
            cells_per_axis: n,
        })
    }

    /// Index sized for the given interaction range: one ring of neighbor
    /// cells covers the range. Without an interaction the `L/8` default is
    /// used.
    pub fn for_interaction(side: f64, dim: usize, cutoff: Option<f64>) -> Result<Self> {
        match cutoff {
            Some(c) if c > 0.0 => Self::with_cell_size(side, dim, c.min(side)),
            _ => Self::new(side, dim),
        }
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn cell_size(&self) -> f64 {
        self.side / self.cells_per_axis as f64
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn wrap_coord(&self, c: f64) -> f64 {
        let w = c.rem_euclid(self.side);
        // rem_euclid can round up to exactly `side`
        if w >= self.side {
            0.0
        } else {
            w
        }
    }

    pub fn wrap(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|c| *c = self.wrap_coord(*c));
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && x.iter().all(|c| (0.0..self.side).contains(c))
    }

    /// Minimum-image displacement component.
    fn min_image(&self, delta: f64) -> f64 {
        let half = 0.5 * self.side;
        let mut d = delta.rem_euclid(self.side);
        if d > half {
            d -= self.side;
        }
        d
    }

    pub fn displacement(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter().zip(y).map(|(a, b)| self.min_image(a - b)).collect()
    }

    pub fn periodic_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let d = self.min_image(a - b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    fn axis_cell(&self, c: f64) -> usize {
        ((c / self.cell_size()) as usize).min(self.cells_per_axis - 1)
    }

    pub fn cell_of(&self, x: &[f64]) -> usize {
        x.iter().fold(0, |acc, &c| acc * self.cells_per_axis + self.axis_cell(c))
    }

    /// Distinct cells intersecting the ball of `radius` around `x`.
    fn cells_near(&self, x: &[f64], radius: f64) -> Vec<usize> {
        let n = self.cells_per_axis;
        let rings = (radius / self.cell_size()).ceil() as usize;
        let per_axis: Vec<Vec<usize>> = x
            .iter()
            .map(|&c| {
                if 2 * rings + 1 >= n {
                    return (0..n).collect();
                }
                let home = self.axis_cell(c) as isize;
                (-(rings as isize)..=rings as isize)
                    .map(|o| (home + o).rem_euclid(n as isize) as usize)
                    .collect()
            })
            .collect();
        let mut out = vec![0usize];
        for axis in &per_axis {
            out = out
                .iter()
                .flat_map(|&acc| axis.iter().map(move |&k| acc * n + k))
                .collect();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointId(pub u64);

/// Axis-aligned window `[lo, hi)` inside the torus box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidArgument("window corners must have equal positive dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument("window must have positive finite extent on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(lo: f64, side: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![lo + side; dim])
    }

    pub fn check_within(&self, torus: &Torus) -> Result<()> {
        if self.lo.len() != torus.dim() {
            return Err(Error::DimensionMismatch {
                expected: torus.dim(),
                got: self.lo.len(),
            });
        }
        if self.lo.iter().any(|&a| a < 0.0) || self.hi.iter().any(|&b| b > torus.side()) {
            return Err(Error::InvalidArgument("window must lie inside the torus box".into()));
        }
        Ok(())
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(c, (a, b))| *a <= *c && *c < *b)
    }
}

/// Kernel sum with a bound on the contribution of points beyond the cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSum {
    pub value: f64,
    pub error_bound: f64,
}

/// Finite point set on a torus with stable identifiers and a cell index.
#[derive(Debug, Clone)]
pub struct TorusConfiguration {
    torus: Torus,
    ids: Vec<PointId>,
    coords: Vec<f64>,
    slot_of: HashMap<PointId, usize>,
    cell_of_slot: Vec<usize>,
    pos_in_cell: Vec<usize>,
    cells: Vec<Vec<usize>>,
    next_id: u64,
}

impl TorusConfiguration {
    pub fn new(torus: Torus) -> Self {
        Self {
            torus,
            ids: Vec::new(),
            coords: Vec::new(),
            slot_of: HashMap::new(),
            cell_of_slot: Vec::new(),
            pos_in_cell: Vec::new(),
            cells: vec![Vec::new(); torus.num_cells()],
            next_id: 0,
        }
    }

    pub fn from_points<'a>(torus: Torus, points: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut cfg = Self::new(torus);
        for p in points {
            cfg.insert(p)?;
        }
        Ok(cfg)
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn dim(&self) -> usize {
        self.torus.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Inserts a point (wrapped into the box) and returns its new id.
    pub fn insert(&mut self, x: &[f64]) -> Result<PointId> {
        let id = PointId(self.next_id);
        self.insert_with_id(x, id)?;
        Ok(id)
    }

    /// Inserts with an explicit id; ids must be unused.
    pub fn insert_with_id(&mut self, x: &[f64], id: PointId) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("point coordinates must be finite".into()));
        }
        if self.slot_of.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate point id {}", id.0)));
        }
        let slot = self.ids.len();
        let start = self.coords.len();
        self.coords.extend_from_slice(x);
        self.torus.wrap(&mut self.coords[start..]);
        let cell = self.torus.cell_of(&self.coords[start..]);
        self.ids.push(id);
        self.slot_of.insert(id, slot);
        self.cell_of_slot.push(cell);
        self.pos_in_cell.push(self.cells[cell].len());
        self.cells[cell].push(slot);
        self.next_id = self.next_id.max(id.0 + 1);
        Ok(())
    }

    /// Removes a point, returning its position. The last slot moves into the
    /// freed one; ids are unaffected.
    pub fn remove(&mut self, id: PointId) -> Option<Vec<f64>> {
        let slot = self.slot_of.remove(&id)?;
        let d = self.dim();
        let pos = self.coords[slot * d..(slot + 1) * d].to_vec();

        let cell = self.cell_of_slot[slot];
        let p = self.pos_in_cell[slot];
        self.cells[cell].swap_remove(p);
        if let Some(&moved) = self.cells[cell].get(p) {
            self.pos_in_cell[moved] = p;
        }

        let last = self.ids.len() - 1;
        if slot != last {
            let moved_id = self.ids[last];
            self.ids[slot] = moved_id;
            self.coords.copy_within(last * d..(last + 1) * d, slot * d);
            self.cell_of_slot[slot] = self.cell_of_slot[last];
            self.pos_in_cell[slot] = self.pos_in_cell[last];
            let c = self.cell_of_slot[slot];
            self.cells[c][self.pos_in_cell[slot]] = slot;
            self.slot_of.insert(moved_id, slot);
        }
        self.ids.pop();
        self.coords.truncate(last * d);
        self.cell_of_slot.pop();
        self.pos_in_cell.pop();
        Some(pos)
    }

    pub fn slot(&self, id: PointId) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    pub fn id_at(&self, slot: usize) -> PointId {
        self.ids[slot]
    }

    pub fn point_at(&self, slot: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[slot * d..(slot + 1) * d]
    }

    pub fn position(&self, id: PointId) -> Option<&[f64]> {
        self.slot(id).map(|s| self.point_at(s))
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (PointId, &[f64])> + '_ {
        self.ids.iter().copied().zip(self.coords.chunks_exact(self.dim()))
    }

    /// Slots of points within `radius` (periodic) of `x`, with distances.
    pub fn neighbors_within(&self, x: &[f64], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for cell in self.torus.cells_near(x, radius) {
            for &slot in &self.cells[cell] {
                let dist = self.torus.periodic_distance(x, self.point_at(slot));
                if dist < radius {
                    out.push((slot, dist));
                }
            }
        }
        out
    }

    /// `Σ_{y ∈ γ, y ≠ exclude} a(x - y)` over points within the kernel cutoff.
    pub fn kernel_sum_at(&self, kernel: &Kernel, x: &[f64], exclude: Option<PointId>) -> Result<KernelSum> {
        if x.len() != self.dim() || kernel.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: if x.len() != self.dim() { x.len() } else { kernel.dim() },
            });
        }
        let cutoff = kernel.cutoff_radius();
        let half_side = 0.5 * self.torus.side;
        if cutoff > half_side {
            return Err(Error::KernelTooWide { cutoff, half_side });
        }
        let skip = exclude.and_then(|id| self.slot(id));
        let value = self
            .neighbors_within(x, cutoff)
            .into_iter()
            .filter(|(slot, _)| Some(*slot) != skip)
            .map(|(_, dist)| kernel.profile(dist))
            .sum();
        Ok(KernelSum {
            value,
            error_bound: kernel.profile(cutoff) * self.len() as f64,
        })
    }

    pub fn count_in_window(&self, w: &Window) -> usize {
        self.coords.chunks_exact(self.dim()).filter(|p| w.contains(p)).count()
    }

    /// True when the cell index agrees with one rebuilt from scratch.
    pub fn index_consistent(&self) -> bool {
        let mut rebuilt = vec![Vec::new(); self.torus.num_cells()];
        for slot in 0..self.len() {
            rebuilt[self.torus.cell_of(self.point_at(slot))].push(slot);
        }
        if self.slot_of.len() != self.len() {
            return false;
        }
        for (slot, id) in self.ids.iter().enumerate() {
            if self.slot_of.get(id) != Some(&slot) {
                return false;
            }
            let c = self.cell_of_slot[slot];
            if self.cells[c].get(self.pos_in_cell[slot]) != Some(&slot) {
                return false;
            }
        }
        self.cells.iter().zip(rebuilt).all(|(a, b)| {
            let mut a = a.clone();
            a.sort_unstable();
            a == b
        })
    }

    pub fn snapshot(&self, time: f64) -> Snapshot {
        Snapshot {
            time,
            dim: self.dim(),
            ids: self.ids.iter().map(|i| i.0).collect(),
            coords: self.coords.clone(),
        }
    }
}

/// `N ~ Poisson(κ L^d)` points placed i.i.d. uniformly on the torus.
pub fn sample_poisson<R: Rng + ?Sized>(torus: Torus, density: f64, rng: &mut R) -> Result<TorusConfiguration> {
    if !(density.is_finite() && density >= 0.0) {
        return Err(Error::InvalidArgument(format!("density must be nonnegative, got {density}")));
    }
    let mut cfg = TorusConfiguration::new(torus);
    let mean = density * torus.volume();
    if mean == 0.0 {
        return Ok(cfg);
    }
    let n = Poisson::new(mean)
        .map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    let mut p = vec![0.0; torus.dim()];
    for _ in 0..n {
        p.iter_mut()
            .for_each(|c| *c = torus.wrap_coord(torus.side() * rng.random::<f64>()));
        cfg.insert(&p)?;
    }
    Ok(cfg)
}

/// Immutable copy of a configuration at a given time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub dim: usize,
    pub ids: Vec<u64>,
    pub coords: Vec<f64>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn count_in_window(&self, w: &Window) -> usize {
        self.points().filter(|p| w.contains(p)).count()
    }
}

fn snapshot_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "id".to_string()];
    h.extend((1..=dim).map(|i| format!("x{i}")));
    h
}

/// Writes snapshots as CSV rows `t,id,x1..xd`.
pub fn write_snapshots_csv<W: Write>(out: W, snapshots: &[Snapshot]) -> Result<()> {
    let dim = snapshots.first().map_or(1, |s| s.dim);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(snapshot_header(dim))?;
    for s in snapshots {
        for (id, p) in s.ids.iter().zip(s.points()) {
            let mut row = vec![format!("{}", s.time), id.to_string()];
            row.extend(p.iter().map(|c| format!("{c}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads snapshot CSV rows back, grouping consecutive rows by time.
pub fn read_snapshots_csv<R: Read>(input: R) -> Result<Vec<Snapshot>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "t" || &headers[1] != "id" {
        return Err(Error::InvalidArgument("snapshot csv must have columns t,id,x1..xd".into()));
    }
    let dim = headers.len() - 2;
    let mut out: Vec<Snapshot> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
        };
        let t = parse(&rec[0])?;
        let id = rec[1]
            .parse::<u64>()
            .map_err(|e| Error::InvalidArgument(format!("bad id {:?}: {e}", &rec[1])))?;
        if out.last().is_none_or(|s| s.time != t) {
            out.push(Snapshot {
                time: t,
                dim,
                ids: Vec::new(),
                coords: Vec::new(),
            });
        }
        let s = out.last_mut().unwrap();
        s.ids.push(id);
        for i in 0..dim {
            s.coords.push(parse(&rec[2 + i])?);
        }
    }
    Ok(out)
}
