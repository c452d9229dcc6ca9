//! Scenario, plan, and trajectory file formats.
//!
//! Scenarios are JSON; plans serialize the full control plan together with
//! the minimal-time report and a hash of the scenario they were built for;
//! trajectories are CSV rows with a JSON summary alongside. All writes are
//! atomic (temp file then rename).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control_synthesis::{ControlPlan, SimulationResult};
use crate::error::{CrowdError, Result};
use crate::flow_engine::{Configuration, ConvexRegion, HalfSpace, VectorField};
use crate::minimal_time::MinimalTimeReport;
use crate::params::Params;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegionSpec {
    pub halfspaces: Vec<HalfSpace>,
}

/// On-disk scenario format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioFile {
    pub dimension: usize,
    pub field: VectorField,
    pub region: RegionSpec,
    pub initial: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    #[serde(default)]
    pub params: Params,
}

/// Validated scenario ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dimension: usize,
    pub field: VectorField,
    pub region: ConvexRegion,
    pub initial: Configuration,
    pub target: Configuration,
    pub params: Params,
    /// Hash of the raw scenario file, embedded into plans.
    pub hash: String,
}

fn validate_points(name: &str, pts: &[Vec<f64>], dim: usize) -> Result<()> {
    for (i, p) in pts.iter().enumerate() {
        if p.len() != dim {
            return Err(CrowdError::Validation(format!(
                "{name} point {i} has dimension {} but scenario dimension is {dim}",
                p.len()
            )));
        }
        if !crate::geom::is_finite(p) {
            return Err(CrowdError::Validation(format!(
                "{name} point {i} has non-finite coordinates"
            )));
        }
    }
    Ok(())
}

impl ScenarioFile {
    pub fn validate(self, hash: String) -> Result<Scenario> {
        if self.dimension < 1 {
            return Err(CrowdError::Validation("dimension must be at least 1".into()));
        }
        if self.field.dim() != self.dimension {
            return Err(CrowdError::Validation(format!(
                "field dimension {} does not match scenario dimension {}",
                self.field.dim(),
                self.dimension
            )));
        }
        if self.initial.len() != self.target.len() {
            return Err(CrowdError::Validation(format!(
                "initial has {} points but target has {}",
                self.initial.len(),
                self.target.len()
            )));
        }
        validate_points("initial", &self.initial, self.dimension)?;
        validate_points("target", &self.target, self.dimension)?;
        let p = &self.params;
        for (name, value) in [
            ("step", p.step),
            ("t_max", p.t_max),
            ("delta", p.delta),
            ("epsilon", p.epsilon),
        ] {
            if !(value > 0.0) {
                return Err(CrowdError::Validation(format!("param {name} must be positive")));
            }
        }
        let region = ConvexRegion::new(
            self.region.halfspaces,
            self.params.interior_margin,
            self.params.boundary_tol,
        )?;
        if region.dim() != self.dimension {
            return Err(CrowdError::Validation(
                "region dimension does not match scenario dimension".into(),
            ));
        }
        let initial = Configuration::new(self.initial)
            .map_err(|_| CrowdError::Validation("configuration not disjoint (initial)".into()))?;
        let target = Configuration::new(self.target)
            .map_err(|_| CrowdError::Validation("configuration not disjoint (target)".into()))?;
        Ok(Scenario {
            dimension: self.dimension,
            field: self.field,
            region,
            initial,
            target,
            params: self.params,
            hash,
        })
    }
}

fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::new(), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let bytes = fs::read(path)?;
    let file: ScenarioFile = serde_json::from_slice(&bytes)?;
    file.validate(content_hash(&bytes))
}

pub fn scenario_from_parts(
    dimension: usize,
    field: VectorField,
    halfspaces: Vec<HalfSpace>,
    initial: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
    params: Params,
) -> Result<Scenario> {
    let file = ScenarioFile {
        dimension,
        field,
        region: RegionSpec { halfspaces },
        initial,
        target,
        params,
    };
    let bytes = serde_json::to_vec(&file)?;
    file.validate(content_hash(&bytes))
}

/// Serialized plan plus the report that produced it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanFile {
    pub scenario_hash: String,
    pub report: MinimalTimeReport,
    pub plan: ControlPlan,
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = PathBuf::from(dir);
    tmp.push(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_plan(path: &Path, plan_file: &PlanFile) -> Result<()> {
    let json = serde_json::to_vec_pretty(plan_file)?;
    atomic_write(path, &json)
}

pub fn load_plan(path: &Path) -> Result<PlanFile> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectorySummary {
    pub horizon: f64,
    pub endpoint_error: f64,
    pub control_sup_norm: f64,
    pub agents: usize,
    pub rows: usize,
}

/// CSV rows `t,agent,x0,...,x{d-1}` with 17-significant-digit formatting,
/// plus a `<stem>.summary.json` next to it.
pub fn save_trajectory(path: &Path, result: &SimulationResult) -> Result<TrajectorySummary> {
    let n = result.final_configuration.len();
    let d = if n > 0 {
        result.final_configuration.points[0].len()
    } else {
        0
    };
    let mut csv = String::from("t,agent");
    for k in 0..d {
        let _ = write!(csv, ",x{k}");
    }
    csv.push('\n');
    let mut rows = 0usize;
    for (ti, t) in result.times.iter().enumerate() {
        for i in 0..n {
            let _ = write!(csv, "{t:.16e},{i}");
            for v in &result.samples[ti][i] {
                let _ = write!(csv, ",{v:.16e}");
            }
            csv.push('\n');
            rows += 1;
        }
    }
    atomic_write(path, csv.as_bytes())?;
    let summary = TrajectorySummary {
        horizon: *result.times.last().unwrap_or(&0.0),
        endpoint_error: result.endpoint_error,
        control_sup_norm: result.control_sup_norm,
        agents: n,
        rows,
    };
    let summary_path = summary_path(path);
    atomic_write(&summary_path, &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

pub fn summary_path(traj_path: &Path) -> PathBuf {
    let stem = traj_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trajectory");
    traj_path.with_file_name(format!("{stem}.summary.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig4_left_json() -> String {
        r#"{
            "dimension": 2,
            "field": {"type": "constant", "value": [1.0, 0.0]},
            "region": {"halfspaces": [
                {"normal": [1.0, 0.0], "offset": 0.0},
                {"normal": [-1.0, 0.0], "offset": 2.0},
                {"normal": [0.0, 1.0], "offset": 1.5},
                {"normal": [0.0, -1.0], "offset": 1.5}
            ]},
            "initial": [[-3.0, 0.0]],
            "target": [[1.0, 0.0]]
        }"#
        .to_string()
    }

    #[test]
    fn scenario_parses_and_applies_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, fig4_left_json()).unwrap();
        let s = load_scenario(&path).unwrap();
        assert_eq!(s.dimension, 2);
        assert_eq!(s.initial.len(), 1);
        assert_eq!(s.params.step, 1e-3);
        assert_eq!(s.params.delta, 0.1);
        assert!(!s.hash.is_empty());
    }

    #[test]
    fn scenario_rejects_duplicate_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let json = fig4_left_json()
            .replace("[[-3.0, 0.0]]", "[[-3.0, 0.0], [-3.0, 0.0]]")
            .replace("[[1.0, 0.0]]", "[[1.0, 0.0], [2.0, 0.0]]");
        fs::write(&path, json).unwrap();
        let err = load_scenario(&path).unwrap_err();
        assert!(err.to_string().contains("not disjoint"), "{err}");
    }

    #[test]
    fn scenario_rejects_bad_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(load_scenario(&path), Err(CrowdError::Parse(_))));
    }

    #[test]
    fn plan_file_roundtrip_is_bit_exact() {
        use crate::params::Params;
        use crate::pipeline::plan_exact;
        let s = scenario_from_parts(
            2,
            VectorField::constant(vec![1.0, 0.0]),
            vec![
                HalfSpace { normal: vec![1.0, 0.0], offset: 0.0 },
                HalfSpace { normal: vec![-1.0, 0.0], offset: 2.0 },
                HalfSpace { normal: vec![0.0, 1.0], offset: 1.5 },
                HalfSpace { normal: vec![0.0, -1.0], offset: 1.5 },
            ],
            vec![vec![-3.0, 0.0]],
            vec![vec![1.0, 0.0]],
            Params::default(),
        )
        .unwrap();
        let out = plan_exact(&s.field, &s.initial, &s.target, &s.region, &s.params, None).unwrap();
        let pf = PlanFile {
            scenario_hash: s.hash.clone(),
            report: out.report,
            plan: out.plan,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        save_plan(&path, &pf).unwrap();
        let back = load_plan(&path).unwrap();
        assert_eq!(back, pf);
    }
}
