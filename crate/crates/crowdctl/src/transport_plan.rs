//! Space-time waypoint assignment and the non-crossing certificate.
//!
//! Entry and exit waypoints are matched by minimizing the summed space-time
//! Euclidean cost over permutations (the bistochastic relaxation attains
//! its optimum at a permutation; here the solver is combinatorial). The
//! optimal matching yields straight segments that do not cross, which the
//! certificate verifies by exact quadratic minimization per pair.

use serde::{Deserialize, Serialize};

use crate::error::{CrowdError, Result};
use crate::flow_engine::{flow, Configuration, ConvexRegion, HittingTimes, Membership, VectorField};
use crate::geom::{self, Point};
use crate::params::Params;

/// Sentinel for the "too late" cost entries.
pub const INFINITE_COST: f64 = 1e18;
const WAYPOINT_SCAN_STEPS: usize = 32;

/// Concrete entry/exit instants and points for every agent.
///
/// `entry_times[i]` is s0_i in (t0_i, t0_i + delta/3) with
/// `entry_points[i] = Phi_{s0_i}(x0_i)` in the open region; `exit_margins[i]`
/// is s1_i counted backward from the horizon, with
/// `exit_points[i] = Phi_{-s1_i}(x1_i)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Waypoints {
    pub entry_points: Vec<Point>,
    pub entry_times: Vec<f64>,
    pub exit_points: Vec<Point>,
    pub exit_margins: Vec<f64>,
    pub horizon: f64,
}

impl Waypoints {
    pub fn len(&self) -> usize {
        self.entry_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_points.is_empty()
    }
}

/// Scans s in (t, t + delta/3) for an instant whose flow image lies in the
/// open region, preferring t + delta/6.
fn admissible_instant(
    field: &VectorField,
    x: &[f64],
    sign: f64,
    t_entry: f64,
    delta: f64,
    region: &ConvexRegion,
    params: &Params,
    agent: usize,
    side: &'static str,
) -> Result<(f64, Point)> {
    let bounds = params.working_box(field.dim());
    let preferred = t_entry + delta / 6.0;
    let y = flow(field, x, sign * preferred, params.step, &bounds)?;
    if region.contains(&y, Membership::Open) {
        return Ok((preferred, y));
    }
    for k in 1..=WAYPOINT_SCAN_STEPS {
        let s = t_entry + delta / 3.0 * k as f64 / (WAYPOINT_SCAN_STEPS + 1) as f64;
        let y = flow(field, x, sign * s, params.step, &bounds)?;
        if region.contains(&y, Membership::Open) {
            return Ok((s, y));
        }
    }
    Err(CrowdError::WaypointNotFound { agent, side })
}

/// Picks concrete entry and exit instants s0_i, s1_i just past the hitting
/// times. The backward side uses the open entry time when present, falling
/// back to the closure time; a pure tangency then surfaces as
/// `WaypointNotFound` on the exit side.
pub fn choose_waypoints(
    field: &VectorField,
    config0: &Configuration,
    config1: &Configuration,
    region: &ConvexRegion,
    hitting: &HittingTimes,
    horizon: f64,
    delta: f64,
    params: &Params,
) -> Result<Waypoints> {
    let n = config0.len();
    let mut entry_points = Vec::with_capacity(n);
    let mut entry_times = Vec::with_capacity(n);
    let mut exit_points = Vec::with_capacity(n);
    let mut exit_margins = Vec::with_capacity(n);
    for i in 0..n {
        let t0 = hitting.t0[i]
            .or(hitting.t0_bar[i])
            .ok_or_else(|| CrowdError::Infeasible(format!("agent {i}: no forward entry")))?;
        let (s0, y0) = admissible_instant(
            field, &config0.points[i], 1.0, t0, delta, region, params, i, "entry",
        )?;
        entry_times.push(s0);
        entry_points.push(y0);

        let t1 = hitting.t1[i]
            .or(hitting.t1_bar[i])
            .ok_or_else(|| CrowdError::Infeasible(format!("agent {i}: no backward entry")))?;
        let (s1, y1) = admissible_instant(
            field, &config1.points[i], -1.0, t1, delta, region, params, i, "exit",
        )?;
        exit_margins.push(s1);
        exit_points.push(y1);
    }
    Ok(Waypoints {
        entry_points,
        entry_times,
        exit_points,
        exit_margins,
        horizon,
    })
}

/// n x n space-time costs K_ij, row-major. An entry is the Euclidean norm
/// in R^{d+1} of (y0_i, s0_i) - (y1_j, T - s1_j) when s0_i < T - s1_j and
/// the `INFINITE_COST` sentinel otherwise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostMatrix {
    pub n: usize,
    pub entries: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn is_infinite(&self, i: usize, j: usize) -> bool {
        self.get(i, j) >= INFINITE_COST
    }
}

pub fn build_cost_matrix(waypoints: &Waypoints) -> CostMatrix {
    let n = waypoints.len();
    let t = waypoints.horizon;
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let arrive = t - waypoints.exit_margins[j];
            let depart = waypoints.entry_times[i];
            let cost = if depart < arrive {
                let space = geom::dist(&waypoints.entry_points[i], &waypoints.exit_points[j]);
                (space * space + (arrive - depart) * (arrive - depart)).sqrt()
            } else {
                INFINITE_COST
            };
            entries.push(cost);
        }
    }
    CostMatrix { n, entries }
}

/// O(n^3) Hungarian algorithm (potentials form) on a row-major cost slice.
/// Returns the row -> column assignment.
pub fn hungarian(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

fn assignment_total(n: usize, cost: &[f64], assignment: &[usize]) -> f64 {
    (0..n).map(|i| cost[i * n + assignment[i]]).sum()
}

/// Minimal total cost over permutations, refined to the lexicographically
/// smallest optimal assignment by fixing rows one at a time and re-solving
/// the remainder.
pub fn solve_assignment(cost: &CostMatrix) -> Result<Vec<usize>> {
    let n = cost.n;
    if n == 0 {
        return Ok(Vec::new());
    }
    let base = hungarian(n, &cost.entries);
    let best = assignment_total(n, &cost.entries, &base);
    if best >= INFINITE_COST {
        return Err(CrowdError::InfeasibleAssignment);
    }
    let tol = 1e-9 * (1.0 + best.abs());
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let mut chosen = None;
        for (slot, &j) in free_cols.iter().enumerate() {
            let cij = cost.get(i, j);
            if cij >= INFINITE_COST {
                continue;
            }
            // optimum of the remaining (n-i-1) x (n-i-1) subproblem
            let rest: Vec<usize> = free_cols
                .iter()
                .enumerate()
                .filter(|&(s, _)| s != slot)
                .map(|(_, &c)| c)
                .collect();
            let m = rest.len();
            let sub_total = if m == 0 {
                0.0
            } else {
                let sub: Vec<f64> = ((i + 1)..n)
                    .flat_map(|r| rest.iter().map(move |&c| (r, c)))
                    .map(|(r, c)| cost.get(r, c))
                    .collect();
                let sub_assign = hungarian(m, &sub);
                assignment_total(m, &sub, &sub_assign)
            };
            if fixed_cost + cij + sub_total <= best + tol {
                chosen = Some((slot, j));
                break;
            }
        }
        let (slot, j) = chosen.ok_or(CrowdError::InfeasibleAssignment)?;
        fixed_cost += cost.get(i, j);
        fixed.push(j);
        free_cols.remove(slot);
    }
    Ok(fixed)
}

/// JSON has no infinity; a single agent's separation goes through null.
pub mod serde_maybe_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Straight space-time segments induced by a permutation of the waypoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentBundle {
    pub sigma: Vec<usize>,
    /// Per agent: start point, start time, end point, end time.
    pub starts: Vec<Point>,
    pub start_times: Vec<f64>,
    pub ends: Vec<Point>,
    pub end_times: Vec<f64>,
    #[serde(with = "serde_maybe_inf")]
    pub min_separation: f64,
}

pub fn build_segments(waypoints: &Waypoints, sigma: &[usize]) -> SegmentBundle {
    let n = waypoints.len();
    let t = waypoints.horizon;
    let mut bundle = SegmentBundle {
        sigma: sigma.to_vec(),
        starts: Vec::with_capacity(n),
        start_times: Vec::with_capacity(n),
        ends: Vec::with_capacity(n),
        end_times: Vec::with_capacity(n),
        min_separation: f64::INFINITY,
    };
    for i in 0..n {
        bundle.starts.push(waypoints.entry_points[i].clone());
        bundle.start_times.push(waypoints.entry_times[i]);
        bundle.ends.push(waypoints.exit_points[sigma[i]].clone());
        bundle.end_times.push(t - waypoints.exit_margins[sigma[i]]);
    }
    bundle.min_separation = check_non_crossing(&bundle);
    bundle
}

/// Position on agent i's segment at time t (t inside its interval).
pub fn segment_point(bundle: &SegmentBundle, i: usize, t: f64) -> Point {
    let span = bundle.end_times[i] - bundle.start_times[i];
    let alpha = if span > 0.0 {
        ((t - bundle.start_times[i]) / span).clamp(0.0, 1.0)
    } else {
        0.0
    };
    geom::lerp(&bundle.starts[i], &bundle.ends[i], alpha)
}

/// Minimum over pairs with overlapping time intervals of the pointwise
/// distance |y_i(t) - y_j(t)|. The distance squared is a quadratic in t and
/// is minimized in closed form, clamped to the overlap. A single agent
/// yields the +infinity sentinel.
pub fn check_non_crossing(bundle: &SegmentBundle) -> f64 {
    let n = bundle.starts.len();
    let mut min_sep = f64::INFINITY;
    for i in 0..n {
        let si = bundle.start_times[i];
        let ei = bundle.end_times[i];
        let span_i = ei - si;
        let vel_i: Point = geom::scale(&geom::sub(&bundle.ends[i], &bundle.starts[i]), 1.0 / span_i);
        for j in (i + 1)..n {
            let sj = bundle.start_times[j];
            let ej = bundle.end_times[j];
            let lo = si.max(sj);
            let hi = ei.min(ej);
            if hi <= lo {
                continue;
            }
            let span_j = ej - sj;
            let vel_j: Point =
                geom::scale(&geom::sub(&bundle.ends[j], &bundle.starts[j]), 1.0 / span_j);
            // relative position c + t * m
            let c: Point = (0..bundle.starts[i].len())
                .map(|k| {
                    (bundle.starts[i][k] - si * vel_i[k]) - (bundle.starts[j][k] - sj * vel_j[k])
                })
                .collect();
            let m = geom::sub(&vel_i, &vel_j);
            let mm = geom::dot(&m, &m);
            let t_star = if mm > 0.0 {
                (-geom::dot(&c, &m) / mm).clamp(lo, hi)
            } else {
                lo
            };
            for t in [lo, t_star, hi] {
                let sep = geom::norm(&geom::add_scaled(&c, t, &m));
                if sep < min_sep {
                    min_sep = sep;
                }
            }
        }
    }
    min_sep
}
