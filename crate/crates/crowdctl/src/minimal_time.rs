//! Infimum times for exact and approximate controllability.
//!
//! The fast route sorts forward entry times increasingly and backward entry
//! times decreasingly and pairs them index-wise; the brute-force route
//! enumerates all permutations and exists as an independent oracle.

use serde::{Deserialize, Serialize};

use crate::error::{CrowdError, Result};
use crate::flow_engine::{
    configuration_hitting_times, Configuration, ConvexRegion, HittingTimes, VectorField,
};
use crate::params::Params;
use crate::transport_plan;

pub const BRUTE_FORCE_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Exact,
    Approximate,
}

/// Outcome of a minimal-time computation. `infimum_time` is M_e or M_a and
/// `actuation_threshold` is M*_e or M*_a; both are absent when the
/// geometric feasibility check fails within the horizon.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MinimalTimeReport {
    pub mode: ControlMode,
    pub infimum_time: Option<f64>,
    pub actuation_threshold: Option<f64>,
    /// Maps each original agent index of the initial configuration to the
    /// index of the target point it is paired with.
    pub pairing: Option<Vec<usize>>,
    pub forward_times_sorted: Vec<f64>,
    pub backward_times_sorted: Vec<f64>,
    pub feasible: bool,
}

impl MinimalTimeReport {
    fn infeasible(mode: ControlMode) -> Self {
        MinimalTimeReport {
            mode,
            infimum_time: None,
            actuation_threshold: None,
            pairing: None,
            forward_times_sorted: Vec::new(),
            backward_times_sorted: Vec::new(),
            feasible: false,
        }
    }
}

/// Permutation-invariant distance between two configurations: the minimal
/// mean matching cost over all pairings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfigDistance {
    pub value: f64,
    pub matching: Vec<usize>,
}

/// Sorted pairing of forward and backward times. Returns the max of the
/// paired sums and the permutation on original labels achieving it.
/// Ties are broken by original index (stable sort).
pub fn sorted_pairing(forward: &[f64], backward: &[f64]) -> (f64, Vec<usize>) {
    let n = forward.len();
    assert_eq!(n, backward.len());
    let mut fwd_idx: Vec<usize> = (0..n).collect();
    fwd_idx.sort_by(|&a, &b| forward[a].partial_cmp(&forward[b]).unwrap());
    let mut bwd_idx: Vec<usize> = (0..n).collect();
    bwd_idx.sort_by(|&a, &b| backward[b].partial_cmp(&backward[a]).unwrap());
    let mut sigma = vec![0usize; n];
    let mut value = f64::NEG_INFINITY;
    for k in 0..n {
        sigma[fwd_idx[k]] = bwd_idx[k];
        let s = forward[fwd_idx[k]] + backward[bwd_idx[k]];
        if s > value {
            value = s;
        }
    }
    if n == 0 {
        value = 0.0;
    }
    (value, sigma)
}

/// Build a report from already-known per-agent times.
pub fn report_from_times(
    mode: ControlMode,
    forward: &[f64],
    backward: &[f64],
) -> MinimalTimeReport {
    let (value, sigma) = sorted_pairing(forward, backward);
    let threshold = forward
        .iter()
        .chain(backward)
        .copied()
        .fold(0.0f64, f64::max);
    let mut fs = forward.to_vec();
    fs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut bs = backward.to_vec();
    bs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    MinimalTimeReport {
        mode,
        infimum_time: Some(value),
        actuation_threshold: Some(threshold),
        pairing: Some(sigma),
        forward_times_sorted: fs,
        backward_times_sorted: bs,
        feasible: true,
    }
}

fn unwrap_times(times: &[Option<f64>]) -> Option<Vec<f64>> {
    times.iter().copied().collect()
}

fn minimal_time_from_hitting(
    mode: ControlMode,
    hitting: &HittingTimes,
) -> MinimalTimeReport {
    let backward = match mode {
        ControlMode::Exact => &hitting.t1,
        ControlMode::Approximate => &hitting.t1_bar,
    };
    match (unwrap_times(&hitting.t0), unwrap_times(backward)) {
        (Some(f), Some(b)) => report_from_times(mode, &f, &b),
        _ => MinimalTimeReport::infeasible(mode),
    }
}

fn check_sizes(config0: &Configuration, config1: &Configuration) -> Result<()> {
    if config0.len() != config1.len() {
        return Err(CrowdError::SizeMismatch(config0.len(), config1.len()));
    }
    Ok(())
}

/// Infimum time M_e for exact controllability (open-mode entry times in
/// both directions).
pub fn exact_minimal_time(
    field: &VectorField,
    config0: &Configuration,
    config1: &Configuration,
    region: &ConvexRegion,
    params: &Params,
) -> Result<MinimalTimeReport> {
    check_sizes(config0, config1)?;
    let bounds = params.working_box(field.dim());
    let hitting = configuration_hitting_times(
        field, config0, config1, region, params.t_max, params.step, &bounds,
    )?;
    Ok(minimal_time_from_hitting(ControlMode::Exact, &hitting))
}

/// Infimum time M_a for approximate controllability (closure-mode backward
/// times t1-bar replace the open ones).
pub fn approx_minimal_time(
    field: &VectorField,
    config0: &Configuration,
    config1: &Configuration,
    region: &ConvexRegion,
    params: &Params,
) -> Result<MinimalTimeReport> {
    check_sizes(config0, config1)?;
    let bounds = params.working_box(field.dim());
    let hitting = configuration_hitting_times(
        field, config0, config1, region, params.t_max, params.step, &bounds,
    )?;
    Ok(minimal_time_from_hitting(ControlMode::Approximate, &hitting))
}

/// Same as the sorted route but from precomputed hitting times; used by the
/// planning pipeline to avoid recomputing flows.
pub fn minimal_time_report(mode: ControlMode, hitting: &HittingTimes) -> MinimalTimeReport {
    minimal_time_from_hitting(mode, hitting)
}

/// Exhaustive min over permutations of max_i (forward_i + backward_sigma(i)).
/// Returns the optimum and the lexicographically smallest permutation
/// achieving it. Enforced to n <= 10.
pub fn brute_force_minimal_time(
    forward: &[f64],
    backward: &[f64],
) -> Result<(f64, Vec<usize>)> {
    let n = forward.len();
    if n != backward.len() {
        return Err(CrowdError::SizeMismatch(n, backward.len()));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(CrowdError::TooLargeN(n, BRUTE_FORCE_MAX_N));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    let mut best_perm = perm.clone();
    loop {
        let value = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| forward[i] + backward[j])
            .fold(f64::NEG_INFINITY, f64::max);
        // lexicographic enumeration: strict improvement keeps the first
        // (lexicographically smallest) optimum
        if value < best {
            best = value;
            best_perm = perm.clone();
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok((best, best_perm))
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Normalized minimal matching cost (1/n) min_sigma sum |x0_i - x1_sigma(i)|.
pub fn configuration_distance(
    config0: &Configuration,
    config1: &Configuration,
) -> Result<ConfigDistance> {
    check_sizes(config0, config1)?;
    let n = config0.len();
    if n == 0 {
        return Ok(ConfigDistance { value: 0.0, matching: Vec::new() });
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| (i, j))
        })
        .map(|(i, j)| crate::geom::dist(&config0.points[i], &config1.points[j]))
        .collect();
    let matching = transport_plan::hungarian(n, &cost);
    let total: f64 = (0..n).map(|i| cost[i * n + matching[i]]).sum();
    Ok(ConfigDistance { value: total / n as f64, matching })
}

/// Per-agent feasibility of the geometric condition within the horizon.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeometricReport {
    /// Agents whose forward trajectory never reaches the open region.
    pub forward_blocked: Vec<usize>,
    /// Agents whose backward trajectory never reaches the open region.
    pub backward_blocked: Vec<usize>,
    /// Backward agents that at least graze the closure (approximate
    /// pipeline candidates among the blocked ones).
    pub backward_closure_only: Vec<usize>,
    pub feasible: bool,
}

pub fn check_geometric_condition(
    field: &VectorField,
    config0: &Configuration,
    config1: &Configuration,
    region: &ConvexRegion,
    params: &Params,
) -> Result<GeometricReport> {
    let bounds = params.working_box(field.dim());
    let hitting = configuration_hitting_times(
        field, config0, config1, region, params.t_max, params.step, &bounds,
    )?;
    Ok(geometric_report(&hitting))
}

pub fn geometric_report(hitting: &HittingTimes) -> GeometricReport {
    let blocked = |v: &[Option<f64>]| -> Vec<usize> {
        v.iter()
            .enumerate()
            .filter_map(|(i, t)| t.is_none().then_some(i))
            .collect()
    };
    let forward_blocked = blocked(&hitting.t0);
    let backward_blocked = blocked(&hitting.t1);
    let backward_closure_only = backward_blocked
        .iter()
        .copied()
        .filter(|&i| hitting.t1_bar[i].is_some())
        .collect();
    let feasible = forward_blocked.is_empty() && backward_blocked.is_empty();
    GeometricReport {
        forward_blocked,
        backward_blocked,
        backward_closure_only,
        feasible,
    }
}
