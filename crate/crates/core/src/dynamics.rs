//! Exact event-driven simulation of the birth-and-death generator.
//!
//! A point `x ∈ γ` dies at rate `m + Σ_{y ∈ γ∖x} a-(x - y)`. New points
//! appear at rate `Σ_{y ∈ γ} a+(x - y)` (Bolker–Pacala) or `b(x)`
//! (migration). Death rates are cached per point in a sum tree and updated
//! over the competition neighborhood of each changed point.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointId, Snapshot, TorusConfiguration};
use crate::kernels::{ImmigrationField, Kernel};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelSpec {
    BolkerPacala {
        dispersal: Kernel,
        #[serde(default)]
        competition: Option<Kernel>,
        #[serde(default)]
        mortality: f64,
    },
    Migration {
        immigration: ImmigrationField,
        #[serde(default)]
        competition: Option<Kernel>,
        #[serde(default)]
        mortality: f64,
    },
}

impl ModelSpec {
    pub fn competition(&self) -> Option<&Kernel> {
        match self {
            ModelSpec::BolkerPacala { competition, .. } | ModelSpec::Migration { competition, .. } => {
                competition.as_ref()
            }
        }
    }

    pub fn mortality(&self) -> f64 {
        match self {
            ModelSpec::BolkerPacala { mortality, .. } | ModelSpec::Migration { mortality, .. } => *mortality,
        }
    }

    pub fn dispersal(&self) -> Option<&Kernel> {
        match self {
            ModelSpec::BolkerPacala { dispersal, .. } => Some(dispersal),
            ModelSpec::Migration { .. } => None,
        }
    }

    pub fn validate(&self, dim: usize, side: f64) -> Result<()> {
        let m = self.mortality();
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::InvalidArgument(format!("mortality must be nonnegative, got {m}")));
        }
        let check_dim = |k: &Kernel| {
            if k.dim() != dim {
                Err(Error::DimensionMismatch {
                    expected: dim,
                    got: k.dim(),
                })
            } else {
                Ok(())
            }
        };
        if let Some(k) = self.dispersal() {
            check_dim(k)?;
        }
        if let Some(k) = self.competition() {
            check_dim(k)?;
            let cutoff = k.cutoff_radius();
            if cutoff > 0.5 * side {
                return Err(Error::KernelTooWide {
                    cutoff,
                    half_side: 0.5 * side,
                });
            }
        }
        if let ModelSpec::Migration { immigration, .. } = self {
            immigration.validate(dim)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Birth,
    Death,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub id: PointId,
    pub position: Vec<f64>,
    pub parent: Option<PointId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Event,
    Absorbed,
}

/// Binary sum tree over per-point rates; internal nodes are recomputed from
/// their children on every update, so totals do not drift.
#[derive(Debug, Clone, Default)]
struct SumTree {
    len: usize,
    cap: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn with_values(values: &[f64]) -> Self {
        let mut t = Self::default();
        t.rebuild(values, values.len().next_power_of_two().max(1));
        t
    }

    fn rebuild(&mut self, values: &[f64], cap: usize) {
        self.cap = cap;
        self.len = values.len();
        self.nodes = vec![0.0; 2 * cap];
        self.nodes[cap..cap + values.len()].copy_from_slice(values);
        for i in (1..cap).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    fn total(&self) -> f64 {
        if self.cap == 0 {
            0.0
        } else {
            self.nodes[1]
        }
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[self.cap + i]
    }

    fn set(&mut self, i: usize, v: f64) {
        let mut k = self.cap + i;
        self.nodes[k] = v;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    fn push(&mut self, v: f64) {
        if self.len == self.cap {
            let values: Vec<f64> = (0..self.len).map(|i| self.get(i)).collect();
            self.rebuild(&values, (2 * self.cap).max(1));
        }
        self.len += 1;
        self.set(self.len - 1, v);
    }

    fn swap_remove(&mut self, i: usize) {
        let last = self.len - 1;
        if i != last {
            let v = self.get(last);
            self.set(i, v);
        }
        self.set(last, 0.0);
        self.len -= 1;
    }

    /// Index whose cumulative interval contains `u ∈ [0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.cap {
            let left = self.nodes[2 * k];
            if u < left {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        // guard against landing on an empty padding leaf through rounding
        (k - self.cap).min(self.len - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Absorbed,
    ExplosionGuard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub t_end: f64,
    /// Times at which the configuration is recorded; must be sorted.
    pub snapshot_times: Vec<f64>,
    pub max_population: usize,
    pub record_events: bool,
    /// Full cache recomputation every this many events.
    pub audit_every: Option<usize>,
}

impl RunOptions {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            snapshot_times: Vec::new(),
            max_population: 1_000_000,
            record_events: false,
            audit_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub events: Vec<Event>,
    pub snapshots: Vec<Snapshot>,
    pub final_time: f64,
    pub final_population: usize,
    pub event_count: u64,
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    model: ModelSpec,
    cfg: TorusConfiguration,
    time: f64,
    /// Σ a-(x - y) per slot, aligned with the configuration's slots.
    load: Vec<f64>,
    death: SumTree,
    rng: SimRng,
}

impl Simulation {
    pub fn new(model: ModelSpec, cfg: TorusConfiguration, rng: SimRng) -> Result<Self> {
        model.validate(cfg.dim(), cfg.torus().side())?;
        let mut sim = Self {
            model,
            cfg,
            time: 0.0,
            load: Vec::new(),
            death: SumTree::default(),
            rng,
        };
        sim.load = sim.fresh_loads()?;
        let m = sim.model.mortality();
        let rates: Vec<f64> = sim.load.iter().map(|l| m + l).collect();
        sim.death = SumTree::with_values(&rates);
        Ok(sim)
    }

    fn fresh_loads(&self) -> Result<Vec<f64>> {
        match self.model.competition() {
            None => Ok(vec![0.0; self.cfg.len()]),
            Some(k) => (0..self.cfg.len())
                .map(|s| {
                    self.cfg
                        .kernel_sum_at(k, self.cfg.point_at(s), Some(self.cfg.id_at(s)))
                        .map(|v| v.value)
                })
                .collect(),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn configuration(&self) -> &TorusConfiguration {
        &self.cfg
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Cached death rate `m + Σ a-` of the point in `slot`.
    pub fn death_rate(&self, slot: usize) -> f64 {
        self.death.get(slot)
    }

    /// Total birth and death intensities `(B, D)`.
    pub fn total_rates(&self) -> (f64, f64) {
        let birth = match &self.model {
            ModelSpec::BolkerPacala { dispersal, .. } => self.cfg.len() as f64 * dispersal.mass(),
            ModelSpec::Migration { immigration, .. } => immigration.total(self.cfg.torus()),
        };
        let death = if self.cfg.is_empty() { 0.0 } else { self.death.total() };
        (birth, death)
    }

    /// Compares cached death rates with a full recomputation; returns the
    /// largest relative deviation.
    pub fn audit(&self) -> Result<f64> {
        let fresh = self.fresh_loads()?;
        let m = self.model.mortality();
        let floor = self.model.competition().map_or(0.0, |k| k.sup_norm());
        let mut worst = 0.0f64;
        for (slot, l) in fresh.iter().enumerate() {
            let want = m + l;
            let got = self.death.get(slot);
            let scale = want.abs().max(floor).max(f64::MIN_POSITIVE);
            worst = worst.max((got - want).abs() / scale);
        }
        let total: f64 = fresh.iter().map(|l| m + l).sum();
        let scale = total.abs().max(floor).max(f64::MIN_POSITIVE);
        worst = worst.max((self.death.total() - total).abs() / scale);
        Ok(worst)
    }

    fn adjust_neighbors(&mut self, x: &[f64], sign: f64, skip: Option<usize>) -> f64 {
        let Some(k) = self.model.competition() else { return 0.0 };
        let m = self.model.mortality();
        let neighbors = self.cfg.neighbors_within(x, k.cutoff_radius());
        let mut own = 0.0;
        for (slot, dist) in neighbors {
            if Some(slot) == skip {
                continue;
            }
            let v = k.profile(dist);
            own += v;
            let l = (self.load[slot] + sign * v).max(0.0);
            self.load[slot] = l;
            self.death.set(slot, m + l);
        }
        own
    }

    fn birth_at(&mut self, mut x: Vec<f64>, parent: Option<PointId>, time: f64) -> Result<Event> {
        self.cfg.torus().wrap(&mut x);
        let own_load = self.adjust_neighbors(&x, 1.0, None);
        let id = self.cfg.insert(&x)?;
        self.load.push(own_load);
        self.death.push(self.model.mortality() + own_load);
        Ok(Event {
            time,
            kind: EventKind::Birth,
            id,
            position: x,
            parent,
        })
    }

    fn death_of(&mut self, slot: usize, time: f64) -> Event {
        let id = self.cfg.id_at(slot);
        let x = self.cfg.point_at(slot).to_vec();
        self.adjust_neighbors(&x, -1.0, Some(slot));
        self.cfg.remove(id);
        self.load.swap_remove(slot);
        self.death.swap_remove(slot);
        Event {
            time,
            kind: EventKind::Death,
            id,
            position: x,
            parent: None,
        }
    }

    fn apply_event(&mut self, birth: f64, total: f64, time: f64) -> Result<Event> {
        let u = self.rng.random::<f64>() * total;
        if u < birth {
            match &self.model {
                ModelSpec::BolkerPacala { dispersal, .. } => {
                    let slot = self.rng.random_range(0..self.cfg.len());
                    let parent = self.cfg.id_at(slot);
                    let step = dispersal.sample_displacement(&mut self.rng);
                    let x: Vec<f64> = self.cfg.point_at(slot).iter().zip(&step).map(|(a, b)| a + b).collect();
                    self.birth_at(x, Some(parent), time)
                }
                ModelSpec::Migration { immigration, .. } => {
                    let x = immigration.sample_position(self.cfg.torus(), &mut self.rng);
                    self.birth_at(x, None, time)
                }
            }
        } else {
            let v = (u - birth).min(self.death.total() * (1.0 - f64::EPSILON));
            let slot = self.death.find(v.max(0.0));
            Ok(self.death_of(slot, time))
        }
    }

    fn draw_waiting_time(&mut self, total: f64) -> f64 {
        let e: f64 = Exp1.sample(&mut self.rng);
        e / total
    }

    /// Advances to and applies the next event.
    pub fn step(&mut self) -> Result<Option<Event>> {
        let (b, d) = self.total_rates();
        let total = b + d;
        if !(total > 0.0) {
            return Ok(None);
        }
        let t = self.time + self.draw_waiting_time(total);
        let ev = self.apply_event(b, total, t)?;
        self.time = t;
        Ok(Some(ev))
    }

    pub fn step_outcome(&mut self) -> Result<StepOutcome> {
        Ok(match self.step()? {
            Some(_) => StepOutcome::Event,
            None => StepOutcome::Absorbed,
        })
    }

    /// Runs until `t_end`, absorption, or the population guard.
    pub fn run(&mut self, opts: &RunOptions) -> Result<SimulationTrace> {
        if !(opts.t_end > self.time) {
            return Err(Error::InvalidArgument(format!(
                "t_end must exceed the current time {}, got {}",
                self.time, opts.t_end
            )));
        }
        if opts.snapshot_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("snapshot times must be sorted".into()));
        }
        let start = self.time;
        let mut pending = opts
            .snapshot_times
            .iter()
            .copied()
            .filter(|s| *s >= start && *s <= opts.t_end)
            .peekable();
        let mut trace = SimulationTrace {
            events: Vec::new(),
            snapshots: Vec::new(),
            final_time: self.time,
            final_population: self.cfg.len(),
            event_count: 0,
            status: RunStatus::Completed,
        };
        loop {
            let (b, d) = self.total_rates();
            let total = b + d;
            let next = if total > 0.0 {
                self.time + self.draw_waiting_time(total)
            } else {
                f64::INFINITY
            };
            while let Some(s) = pending.next_if(|s| *s < next) {
                trace.snapshots.push(self.cfg.snapshot(s));
            }
            if next > opts.t_end {
                trace.status = if total > 0.0 {
                    RunStatus::Completed
                } else {
                    RunStatus::Absorbed
                };
                self.time = opts.t_end;
                break;
            }
            let ev = self.apply_event(b, total, next)?;
            self.time = next;
            trace.event_count += 1;
            if opts.record_events {
                trace.events.push(ev);
            }
            if let Some(every) = opts.audit_every {
                if every > 0 && trace.event_count.is_multiple_of(every as u64) {
                    let dev = self.audit()?;
                    if dev > 1e-9 {
                        return Err(Error::InvalidArgument(format!(
                            "rate cache audit failed after {} events: relative deviation {dev:e}",
                            trace.event_count
                        )));
                    }
                }
            }
            if self.cfg.len() > opts.max_population {
                trace.status = RunStatus::ExplosionGuard;
                break;
            }
        }
        trace.final_time = self.time;
        trace.final_population = self.cfg.len();
        Ok(trace)
    }
}

/// Convenience wrapper: build a simulation and run it.
pub fn run(model: &ModelSpec, init: TorusConfiguration, opts: &RunOptions, rng: SimRng) -> Result<SimulationTrace> {
    Simulation::new(model.clone(), init, rng)?.run(opts)
}

/// Writes events as CSV rows `t,kind,x1..xd,parent_id,id`.
pub fn write_events_csv<W: Write>(out: W, dim: usize, events: &[Event]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "kind".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("parent_id".into());
    header.push("id".into());
    w.write_record(&header)?;
    for e in events {
        let mut row = vec![
            format!("{}", e.time),
            match e.kind {
                EventKind::Birth => "birth".to_string(),
                EventKind::Death => "death".to_string(),
            },
        ];
        row.extend(e.position.iter().map(|c| format!("{c}")));
        row.push(e.parent.map(|p| p.0.to_string()).unwrap_or_default());
        row.push(e.id.0.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
