//! JSON run configuration. [`RunConfig::resolve`] fills every default so the
//! resolved config doubles as the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::{PackingConstant, SearchGrid, VerifyOptions};
use crate::dynamics::{ModelSpec, RunOptions};
use crate::error::{Error, Result};
use crate::geometry::{sample_poisson, Torus, TorusConfiguration, Window};
use crate::statistics::RadialBins;

/// Upper limit on snapshot times generated from a cadence.
pub const MAX_SNAPSHOTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusSpec {
    pub side: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Empty,
    Poisson {
        density: f64,
    },
    /// CSV with columns `x1..xd`; other columns are ignored.
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<f64>,
    #[serde(default)]
    pub snapshot_times: Option<Vec<f64>>,
    /// Snapshots before this time are not analyzed; default `t_end/2`.
    #[serde(default)]
    pub burn_in: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_g_bins")]
    pub g_bins: usize,
    #[serde(default)]
    pub g_r_max: Option<f64>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            window: None,
            n_max: default_n_max(),
            g_bins: default_g_bins(),
            g_r_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default)]
    pub grid: Option<SearchGrid>,
    #[serde(default)]
    pub packing: PackingConstant,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_size_max")]
    pub size_max: usize,
}

impl Default for CertificateSpec {
    fn default() -> Self {
        Self {
            omega: default_omega(),
            grid: None,
            packing: PackingConstant::default(),
            trials: default_trials(),
            size_max: default_size_max(),
        }
    }
}

fn default_n_max() -> usize {
    3
}
fn default_g_bins() -> usize {
    20
}
fn default_omega() -> f64 {
    1.0
}
fn default_trials() -> usize {
    100_000
}
fn default_size_max() -> usize {
    30
}
fn default_replicas() -> usize {
    1
}
fn default_max_population() -> usize {
    1_000_000
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub torus: TorusSpec,
    #[serde(default)]
    pub initial: InitialState,
    pub schedule: Schedule,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub certificate: CertificateSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_max_population")]
    pub max_population: usize,
    #[serde(default = "yes")]
    pub record_events: bool,
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive and finite, got {v}")))
    }
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    /// Reads a config file; a relative initial-state CSV path is taken
    /// relative to the file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::config("", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let InitialState::Csv { path: p } = &mut cfg.initial {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
            if let Ok(abs) = fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build_torus(&self) -> Result<Torus> {
        let cutoff = self.model.competition().map(|k| k.cutoff_radius());
        Torus::for_interaction(self.torus.side, self.torus.dim, cutoff).map_err(at("torus"))
    }

    /// Length scale for default ĝ bins and snapshot cadence.
    fn interaction_radius(&self) -> f64 {
        match (self.model.competition(), self.model.dispersal()) {
            (Some(k), _) | (None, Some(k)) => k.characteristic_radius(),
            (None, None) => 0.1 * self.torus.side,
        }
    }

    /// Validates and fills every default.
    pub fn resolve(mut self) -> Result<Self> {
        self.validate_raw()?;
        let t_end = self.schedule.t_end;
        if self.schedule.snapshot_times.is_none() {
            let every = match self.schedule.snapshot_every {
                Some(e) => e,
                None => match self.model.competition() {
                    Some(k) => 1.0 / k.mass(),
                    None => t_end / 10.0,
                },
            };
            let n = ((t_end / every).floor() as usize).min(MAX_SNAPSHOTS);
            let step = if n == MAX_SNAPSHOTS { t_end / n as f64 } else { every };
            let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * step).filter(|t| *t < t_end).collect();
            times.push(t_end);
            self.schedule.snapshot_times = Some(times);
        }
        self.schedule.snapshot_every = None;
        self.schedule.burn_in.get_or_insert(0.5 * t_end);
        let (side, dim) = (self.torus.side, self.torus.dim);
        if self.analysis.window.is_none() {
            self.analysis.window = Some(Window::cube(0.0, side, dim).map_err(at("analysis.window"))?);
        }
        if self.analysis.g_r_max.is_none() {
            self.analysis.g_r_max = Some((0.5 * side).min(5.0 * self.interaction_radius()));
        }
        if self.certificate.grid.is_none() {
            if let Some(k) = self.model.competition() {
                self.certificate.grid = Some(SearchGrid::default_for(k));
            }
        }
        self.validate_resolved()?;
        Ok(self)
    }

    fn validate_raw(&self) -> Result<()> {
        positive("torus.side", self.torus.side)?;
        if self.torus.dim == 0 {
            return Err(Error::config("torus.dim", "must be at least 1"));
        }
        let torus = self.build_torus()?;
        self.model.validate(self.torus.dim, self.torus.side).map_err(at("model"))?;
        match &self.initial {
            InitialState::Poisson { density } if !(density.is_finite() && *density >= 0.0) => {
                return Err(Error::config("initial.density", "must be nonnegative and finite"));
            }
            InitialState::Csv { path } if !path.is_file() => {
                return Err(Error::config("initial.path", format!("no such file: {}", path.display())));
            }
            _ => {}
        }
        positive("schedule.t_end", self.schedule.t_end)?;
        if let Some(e) = self.schedule.snapshot_every {
            positive("schedule.snapshot_every", e)?;
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas", "must be at least 1"));
        }
        if self.max_population == 0 {
            return Err(Error::config("max_population", "must be at least 1"));
        }
        if self.analysis.n_max == 0 {
            return Err(Error::config("analysis.n_max", "must be at least 1"));
        }
        if self.analysis.g_bins == 0 {
            return Err(Error::config("analysis.g_bins", "must be at least 1"));
        }
        if let Some(w) = &self.analysis.window {
            Window::new(w.lo().to_vec(), w.hi().to_vec()).map_err(at("analysis.window"))?;
            w.check_within(&torus).map_err(at("analysis.window"))?;
        }
        if let Some(r) = self.analysis.g_r_max {
            positive("analysis.g_r_max", r)?;
            if r > 0.5 * self.torus.side {
                return Err(Error::config("analysis.g_r_max", "must not exceed half the torus side"));
            }
        }
        positive("certificate.omega", self.certificate.omega)?;
        if self.certificate.trials == 0 {
            return Err(Error::config("certificate.trials", "must be at least 1"));
        }
        if self.certificate.size_max < 2 {
            return Err(Error::config("certificate.size_max", "must be at least 2"));
        }
        Ok(())
    }

    fn validate_resolved(&self) -> Result<()> {
        let t_end = self.schedule.t_end;
        let times = self.snapshot_times();
        if times.iter().any(|t| !(0.0..=t_end).contains(t)) {
            return Err(Error::config("schedule.snapshot_times", "must lie in [0, t_end]"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("schedule.snapshot_times", "must be strictly increasing"));
        }
        let b = self.burn_in();
        if !(0.0..=t_end).contains(&b) {
            return Err(Error::config("schedule.burn_in", "must lie in [0, t_end]"));
        }
        Ok(())
    }

    pub fn snapshot_times(&self) -> &[f64] {
        self.schedule.snapshot_times.as_deref().unwrap_or(&[])
    }

    pub fn burn_in(&self) -> f64 {
        self.schedule.burn_in.unwrap_or(0.5 * self.schedule.t_end)
    }

    pub fn window(&self) -> Result<Window> {
        match &self.analysis.window {
            Some(w) => Ok(w.clone()),
            None => Window::cube(0.0, self.torus.side, self.torus.dim),
        }
    }

    pub fn radial_bins(&self) -> Result<RadialBins> {
        let r = self
            .analysis
            .g_r_max
            .unwrap_or_else(|| (0.5 * self.torus.side).min(5.0 * self.interaction_radius()));
        RadialBins::uniform(r, self.analysis.g_bins)
    }

    pub fn run_options(&self, audit: bool) -> RunOptions {
        RunOptions {
            t_end: self.schedule.t_end,
            snapshot_times: self.snapshot_times().to_vec(),
            max_population: self.max_population,
            record_events: self.record_events,
            audit_every: audit.then_some(1000),
        }
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            trials: self.certificate.trials,
            size_max: self.certificate.size_max,
            seed: self.seed,
            ..VerifyOptions::default()
        }
    }

    /// Realizes the initial state on `torus`.
    pub fn initial_configuration<R: Rng + ?Sized>(&self, torus: Torus, rng: &mut R) -> Result<TorusConfiguration> {
        match &self.initial {
            InitialState::Empty => Ok(TorusConfiguration::new(torus)),
            InitialState::Poisson { density } => sample_poisson(torus, *density, rng),
            InitialState::Csv { path } => {
                let points = read_points_csv(path, torus.dim()).map_err(at("initial.path"))?;
                let mut cfg = TorusConfiguration::new(torus);
                for mut p in points {
                    torus.wrap(&mut p);
                    cfg.insert(&p)?;
                }
                Ok(cfg)
            }
        }
    }
}

/// Reads the `x1..xd` columns of a CSV file.
pub fn read_points_csv(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = (1..=dim)
        .map(|i| {
            let name = format!("x{i}");
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing column {name}")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let p = cols
            .iter()
            .map(|&c| {
                rec[c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad coordinate {:?}: {e}", &rec[c])))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SURGAILIS: &str = r#"{
        "model": {"variant": "migration", "immigration": {"kind": "constant", "rate": 0.5}},
        "torus": {"side": 20.0, "dim": 1},
        "initial": {"kind": "poisson", "density": 1.0},
        "schedule": {"t_end": 2.0},
        "replicas": 4
    }"#;

    #[test]
    fn defaults_are_filled() {
        let c = RunConfig::from_json(SURGAILIS).unwrap().resolve().unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.analysis.n_max, 3);
        assert_eq!(c.burn_in(), 1.0);
        assert_eq!(c.snapshot_times().len(), 11);
        assert_eq!(*c.snapshot_times().last().unwrap(), 2.0);
        assert_eq!(c.window().unwrap().volume(), 20.0);
        assert!(c.certificate.grid.is_none());
        assert_eq!(c.radial_bins().unwrap().len(), 20);
    }

    #[test]
    fn manifest_resolves_to_itself() {
        let c = RunConfig::from_json(SURGAILIS).unwrap().resolve().unwrap();
        let again = RunConfig::from_json(&c.to_json().unwrap()).unwrap().resolve().unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_carry_field_paths() {
        let zero = SURGAILIS.replace("\"replicas\": 4", "\"replicas\": 0");
        match RunConfig::from_json(&zero).unwrap().resolve() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "replicas"),
            other => panic!("{other:?}"),
        }
        let bad = SURGAILIS.replace("\"side\": 20.0", "\"side\": \"wide\"");
        match RunConfig::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "torus.side"),
            other => panic!("{other:?}"),
        }
        let unknown = SURGAILIS.replace("\"replicas\": 4", "\"replica\": 4");
        assert!(matches!(RunConfig::from_json(&unknown), Err(Error::Config { .. })));
        let neg = SURGAILIS.replace("\"t_end\": 2.0", "\"t_end\": -1");
        match RunConfig::from_json(&neg).unwrap().resolve() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "schedule.t_end"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn competition_sets_cadence_and_grid() {
        let text = r#"{
            "model": {"variant": "bolker_pacala",
                      "dispersal": {"family": "gaussian", "params": {"weight": 1.0, "width": 1.0}, "dim": 2},
                      "competition": {"family": "triangular", "params": {"height": 0.5, "radius": 1.0}, "dim": 2}},
            "torus": {"side": 10.0, "dim": 2},
            "schedule": {"t_end": 10.0}
        }"#;
        let c = RunConfig::from_json(text).unwrap().resolve().unwrap();
        // ⟨a-⟩ = 0.5·π/3, cadence 1/⟨a-⟩ ≈ 1.91
        let times = c.snapshot_times();
        assert!((times[1] - 3.0 / (0.5 * std::f64::consts::PI)).abs() < 1e-12);
        assert!(c.certificate.grid.is_some());
        assert!(c.build_torus().unwrap().cell_size() >= 1.0);
    }

    #[test]
    fn csv_initial_state_is_read() {
        let dir = std::env::temp_dir().join(format!("sbd-config-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("init.csv"), "t,id,x1\n0,0,1.5\n0,1,25.0\n").unwrap();
        let text = SURGAILIS.replace(
            r#"{"kind": "poisson", "density": 1.0}"#,
            r#"{"kind": "csv", "path": "init.csv"}"#,
        );
        fs::write(dir.join("run.json"), text).unwrap();
        let c = RunConfig::from_path(dir.join("run.json")).unwrap().resolve().unwrap();
        let t = c.build_torus().unwrap();
        let cfg = c.initial_configuration(t, &mut crate::rng::stream(0, 0)).unwrap();
        assert_eq!(cfg.len(), 2);
        assert_eq!(cfg.point_at(1), &[5.0]);
        fs::remove_dir_all(&dir).unwrap();
    }
}
