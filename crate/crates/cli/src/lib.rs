//! Experiment plumbing behind the `sbd` binary: replica fan-out, output
//! files and aggregated reports.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spatial_bd::certificate::{self, Certificate, SearchGrid, ViolationReport};
use spatial_bd::config::{InitialState, RunConfig};
use spatial_bd::dynamics::{write_events_csv, ModelSpec, RunStatus, Simulation};
use spatial_bd::geometry::{read_snapshots_csv, write_snapshots_csv, Snapshot};
use spatial_bd::kernels::{ImmigrationField, Kernel};
use spatial_bd::oracles::{self, NormBoundInput};
use spatial_bd::statistics::{self, Estimate, MomentReport};
use spatial_bd::{rng, Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub index: usize,
    pub events_csv: Option<String>,
    pub snapshots_csv: String,
    pub status: RunStatus,
    pub final_time: f64,
    pub final_population: usize,
    pub event_count: u64,
    /// Snapshot times actually reached by this replica.
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub time: f64,
    pub replicas: usize,
    pub density: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: String,
    pub replicas: Vec<ReplicaRecord>,
    pub density: Vec<DensityRow>,
    pub moments: Vec<MomentReport>,
    pub density_csv: Option<String>,
    pub moments_csv: Option<String>,
    pub pair_correlation_csv: Option<String>,
    pub checks: Vec<Check>,
    pub explosion: bool,
}

impl ExperimentReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn replica_dir(index: usize) -> String {
    format!("replicas/replica_{index:04}")
}

/// Runs every replica, writes traces under `out` and the aggregated report.
pub fn simulate(cfg: &RunConfig, out: &Path, audit: bool) -> Result<ExperimentReport> {
    fs::create_dir_all(out)?;
    write_json(&out.join(MANIFEST), cfg)?;
    let torus = cfg.build_torus()?;
    let opts = cfg.run_options(audit);
    let dim = cfg.torus.dim;
    let runs: Vec<(ReplicaRecord, Vec<Snapshot>)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, i as u64);
            let init = cfg.initial_configuration(torus, &mut r)?;
            let trace = Simulation::new(cfg.model.clone(), init, r)?.run(&opts)?;
            let dir = replica_dir(i);
            fs::create_dir_all(out.join(&dir))?;
            let events_csv = if cfg.record_events {
                let rel = format!("{dir}/events.csv");
                write_events_csv(BufWriter::new(File::create(out.join(&rel))?), dim, &trace.events)?;
                Some(rel)
            } else {
                None
            };
            let snapshots_csv = format!("{dir}/snapshots.csv");
            write_snapshots_csv(BufWriter::new(File::create(out.join(&snapshots_csv))?), &trace.snapshots)?;
            let rec = ReplicaRecord {
                index: i,
                events_csv,
                snapshots_csv,
                status: trace.status,
                final_time: trace.final_time,
                final_population: trace.final_population,
                event_count: trace.event_count,
                snapshot_times: trace.snapshots.iter().map(|s| s.time).collect(),
            };
            write_json(&out.join(format!("{dir}/trace.json")), &rec)?;
            Ok((rec, trace.snapshots))
        })
        .collect::<Result<_>>()?;
    let (records, snapshots): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    aggregate(cfg, out, records, snapshots)
}

/// Re-reads the traces of a finished run directory and rebuilds its report.
pub fn analyze(out: &Path, cfg: Option<RunConfig>) -> Result<ExperimentReport> {
    let cfg = match cfg {
        Some(c) => c,
        None => RunConfig::from_path(out.join(MANIFEST))?.resolve()?,
    };
    let mut records = Vec::with_capacity(cfg.replicas);
    let mut snapshots = Vec::with_capacity(cfg.replicas);
    for i in 0..cfg.replicas {
        let text = fs::read_to_string(out.join(format!("{}/trace.json", replica_dir(i))))?;
        let rec: ReplicaRecord = serde_json::from_str(&text)?;
        let stored = read_snapshots_csv(File::open(out.join(&rec.snapshots_csv))?)?;
        // rows of empty snapshots are absent from the CSV; restore them from
        // the recorded times
        let mut by_time: HashMap<u64, Snapshot> = stored.into_iter().map(|s| (s.time.to_bits(), s)).collect();
        let snaps = rec
            .snapshot_times
            .iter()
            .map(|t| {
                by_time.remove(&t.to_bits()).unwrap_or(Snapshot {
                    time: *t,
                    dim: cfg.torus.dim,
                    ids: Vec::new(),
                    coords: Vec::new(),
                })
            })
            .collect();
        records.push(rec);
        snapshots.push(snaps);
    }
    aggregate(&cfg, out, records, snapshots)
}

/// Snapshots of time index `j` across replicas.
fn column(snapshots: &[Vec<Snapshot>], j: usize) -> Option<Vec<Snapshot>> {
    snapshots.iter().map(|s| s.get(j).cloned()).collect()
}

fn aggregate(
    cfg: &RunConfig,
    out: &Path,
    records: Vec<ReplicaRecord>,
    snapshots: Vec<Vec<Snapshot>>,
) -> Result<ExperimentReport> {
    let torus = cfg.build_torus()?;
    let explosion = records.iter().any(|r| r.status == RunStatus::ExplosionGuard);
    let mut report = ExperimentReport {
        manifest: MANIFEST.into(),
        replicas: records,
        density: Vec::new(),
        moments: Vec::new(),
        density_csv: None,
        moments_csv: None,
        pair_correlation_csv: None,
        checks: Vec::new(),
        explosion,
    };
    report.checks.push(Check {
        name: "explosion_guard".into(),
        passed: !explosion,
        detail: format!(
            "{} of {} replicas exceeded {} points",
            report.replicas.iter().filter(|r| r.status == RunStatus::ExplosionGuard).count(),
            report.replicas.len(),
            cfg.max_population
        ),
    });
    if cfg.replicas >= 2 {
        let times = cfg.snapshot_times();
        let window = cfg.window()?;
        let bins = cfg.radial_bins()?;
        let available = snapshots.iter().map(Vec::len).min().unwrap_or(0).min(times.len());
        let analyzed: Vec<usize> = (0..available).filter(|&j| times[j] >= cfg.burn_in()).collect();
        for (j, t) in times.iter().enumerate().take(available) {
            let col = column(&snapshots, j).expect("every replica reached this time");
            report.density.push(DensityRow {
                time: *t,
                replicas: col.len(),
                density: statistics::density(&col, &torus)?,
            });
            if analyzed.contains(&j) {
                let g = (Some(&j) == analyzed.last()).then_some(&bins);
                report
                    .moments
                    .push(statistics::moment_report(&col, &torus, &window, cfg.analysis.n_max, g)?);
            }
        }
        write_tables(out, &mut report)?;
        if let Some(check) = surgailis_check(cfg, &report) {
            report.checks.push(check);
        }
    }
    write_json(&out.join(REPORT), &report)?;
    Ok(report)
}

fn write_tables(out: &Path, report: &mut ExperimentReport) -> Result<()> {
    let mut w = csv::Writer::from_path(out.join("density.csv"))?;
    w.write_record(["t", "rho", "se"])?;
    for row in &report.density {
        w.write_record([row.time.to_string(), row.density.value.to_string(), row.density.se.to_string()])?;
    }
    w.flush()?;
    report.density_csv = Some("density.csv".into());
    let mut w = csv::Writer::from_path(out.join("moments.csv"))?;
    w.write_record(["t", "n", "f", "se"])?;
    for m in &report.moments {
        for (n, e) in m.factorial_moments.iter().enumerate() {
            w.write_record([m.time.to_string(), (n + 1).to_string(), e.value.to_string(), e.se.to_string()])?;
        }
    }
    w.flush()?;
    report.moments_csv = Some("moments.csv".into());
    if let Some(g) = report.moments.last().and_then(|m| m.pair_correlation.as_ref()) {
        statistics::write_pair_correlation_csv(BufWriter::new(File::create(out.join("g.csv"))?), g)?;
        report.pair_correlation_csv = Some("g.csv".into());
    }
    Ok(())
}

/// Density against the closed form when the run is the plain immigration
/// model with a constant rate.
fn surgailis_check(cfg: &RunConfig, report: &ExperimentReport) -> Option<Check> {
    let ModelSpec::Migration {
        immigration: ImmigrationField::Constant { rate },
        competition: None,
        mortality,
    } = &cfg.model
    else {
        return None;
    };
    let rho0 = match cfg.initial {
        InitialState::Empty => 0.0,
        InitialState::Poisson { density } => density,
        InitialState::Csv { .. } => return None,
    };
    let last = report.density.last()?;
    let want = oracles::surgailis_density(rho0, *rate, *mortality, last.time);
    let d = &last.density;
    let passed = (d.value - want).abs() <= 3.0 * d.se;
    Some(Check {
        name: "surgailis_density".into(),
        passed,
        detail: format!(
            "t = {}: estimated {} ± {} against {want} (3 SE tolerance)",
            last.time, d.value, d.se
        ),
    })
}

fn certificate_kernels(cfg: &RunConfig) -> Result<(&Kernel, &Kernel)> {
    let ModelSpec::BolkerPacala { dispersal, competition, .. } = &cfg.model else {
        return Err(Error::config("model.variant", "certificates need the bolker_pacala model"));
    };
    let competition = competition.as_ref().ok_or(Error::NoCompetitionInReach)?;
    Ok((dispersal, competition))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOutput {
    pub certificate: Certificate,
    pub verification: ViolationReport,
    pub passed: bool,
}

pub fn certify(cfg: &RunConfig) -> Result<CertifyOutput> {
    let (a_plus, a_minus) = certificate_kernels(cfg)?;
    let grid = cfg
        .certificate
        .grid
        .clone()
        .unwrap_or_else(|| SearchGrid::default_for(a_minus));
    let cert = certificate::certify(a_plus, a_minus, cfg.certificate.omega, &grid, cfg.certificate.packing)?;
    let verification = certificate::verify(&cert, a_plus, a_minus, &cfg.verify_options())?;
    let passed = cert.theta > 0.0 && verification.violations == 0;
    Ok(CertifyOutput {
        certificate: cert,
        verification,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub certificate: Certificate,
    pub verification: ViolationReport,
    pub argmin_config_csv_path: Option<String>,
    /// First inconsistency found when re-checking a stored certificate.
    pub audit_error: Option<String>,
    pub passed: bool,
}

/// Checks a stored certificate (or a freshly computed one) against sampled
/// configurations; with `out`, the minimizing configuration is written as CSV.
pub fn verify(cfg: &RunConfig, stored: Option<Certificate>, out: Option<&Path>) -> Result<VerifyOutput> {
    let (a_plus, a_minus) = certificate_kernels(cfg)?;
    let (cert, audit_error) = match stored {
        Some(c) => {
            let e = c.audit(a_plus, a_minus).err();
            (c, e)
        }
        None => (certify(cfg)?.certificate, None),
    };
    let verification = certificate::verify(&cert, a_plus, a_minus, &cfg.verify_options())?;
    let mut argmin_config_csv_path = None;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("argmin_config.csv"))?;
        w.write_record((1..=cert.dim).map(|i| format!("x{i}")))?;
        for p in &verification.argmin_config {
            w.write_record(p.iter().map(|c| c.to_string()))?;
        }
        w.flush()?;
        argmin_config_csv_path = Some("argmin_config.csv".into());
    }
    let passed = audit_error.is_none() && cert.theta > 0.0 && verification.violations == 0;
    Ok(VerifyOutput {
        certificate: cert,
        verification,
        argmin_config_csv_path,
        audit_error,
        passed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    BolkerPacala,
    Migration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundOutput {
    pub variant: BoundVariant,
    pub inputs: NormBoundInput,
    pub bound: f64,
}

pub fn bounds(variant: BoundVariant, inputs: NormBoundInput) -> Result<BoundOutput> {
    let bound = match variant {
        BoundVariant::BolkerPacala => oracles::norm_bound_bp(&inputs)?,
        BoundVariant::Migration => oracles::norm_bound_migration(&inputs)?,
    };
    Ok(BoundOutput { variant, inputs, bound })
}

/// Kernel functionals of a model, for the norm bounds.
pub fn model_functionals(model: &ModelSpec) -> (BoundVariant, NormBoundInput) {
    let mut i = NormBoundInput::default();
    if let Some(k) = model.competition() {
        i.competition_mass = k.mass();
        i.competition_sup = k.sup_norm();
    }
    match model {
        ModelSpec::BolkerPacala { dispersal, .. } => {
            i.dispersal_mass = dispersal.mass();
            i.dispersal_sup = dispersal.sup_norm();
            (BoundVariant::BolkerPacala, i)
        }
        ModelSpec::Migration { immigration, .. } => {
            i.immigration_sup = immigration.sup_norm();
            (BoundVariant::Migration, i)
        }
    }
}
