//! Control tubes, the explicit localized control, and the closed-loop
//! simulator.
//!
//! Each agent follows a three-phase reference trajectory z_i: free flow
//! until its entry waypoint, a straight segment inside the region, free
//! (backward) flow from its matched target. The control is a bump
//! supported on a moving ball around z_i during the segment phase; inside
//! the inner ball the total velocity is exactly the segment velocity w_i.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrowdError, Result};
use crate::flow_engine::{flow, Configuration, ConvexRegion, HittingTimes, Membership, VectorField};
use crate::geom::{self, Point};
use crate::minimal_time::configuration_distance;
use crate::params::{Params, WorkingBox};
use crate::transport_plan::{segment_point, SegmentBundle, Waypoints};

/// Trajectory samples used for radii estimation.
pub const RADII_SAMPLES: usize = 512;
const RADII_FRACTION: f64 = 0.45;
const RADII_SHRINK_TRIES: usize = 6;
const RADII_MIN: f64 = 1e-9;
const SEGMENT_BOUND_SAMPLES: usize = 256;
const PERTURB_HALVINGS: usize = 20;

/// Everything needed to evaluate the control u(x, t) and replay the plan.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControlPlan {
    pub horizon: f64,
    /// Initial agent i is steered to target point sigma[i].
    pub sigma: Vec<usize>,
    pub initial: Configuration,
    /// Target the plan steers to exactly (the perturbed one in the
    /// approximate pipeline).
    pub target: Configuration,
    pub waypoints: Waypoints,
    pub segments: SegmentBundle,
    pub inner_radii: Vec<f64>,
    pub outer_radii: Vec<f64>,
    /// Constant interior velocity of each segment.
    pub velocities: Vec<Point>,
    /// Uniform bound M on |1_omega u|.
    pub control_bound: f64,
    #[serde(with = "crate::transport_plan::serde_maybe_inf")]
    pub min_separation: f64,
}

impl ControlPlan {
    pub fn n(&self) -> usize {
        self.initial.len()
    }

    pub fn window(&self, i: usize) -> (f64, f64) {
        (self.segments.start_times[i], self.segments.end_times[i])
    }
}

/// Reference trajectory z_i(t). Phase boundaries are assigned to the
/// straight segment (closed on the segment side).
pub fn plan_trajectory(
    plan: &ControlPlan,
    field: &VectorField,
    i: usize,
    t: f64,
    step: f64,
    bounds: &WorkingBox,
) -> Result<Point> {
    if t < 0.0 || t > plan.horizon {
        return Err(CrowdError::TimeOutOfRange { t, horizon: plan.horizon });
    }
    let (s, e) = plan.window(i);
    if t < s {
        flow(field, &plan.initial.points[i], t, step, bounds)
    } else if t <= e {
        Ok(segment_point(&plan.segments, i, t))
    } else {
        let x1 = &plan.target.points[plan.sigma[i]];
        flow(field, x1, t - plan.horizon, step, bounds)
    }
}

/// Samples all reference trajectories on a uniform grid over [0, T] by
/// walking each phase incrementally (one pass per agent, not one flow per
/// sample).
pub fn sample_trajectories(
    plan_sigma: &[usize],
    initial: &Configuration,
    target: &Configuration,
    segments: &SegmentBundle,
    horizon: f64,
    field: &VectorField,
    n_samples: usize,
    step: f64,
    bounds: &WorkingBox,
) -> Result<Vec<Vec<Point>>> {
    let n = initial.len();
    let mut out = vec![vec![Vec::new(); n_samples + 1]; n];
    for i in 0..n {
        let s = segments.start_times[i];
        let e = segments.end_times[i];
        // phase 1: forward from x0
        let mut state = initial.points[i].clone();
        let mut t_cur = 0.0;
        for k in 0..=n_samples {
            let t = horizon * k as f64 / n_samples as f64;
            if t < s {
                state = flow(field, &state, t - t_cur, step, bounds)?;
                t_cur = t;
                out[i][k] = state.clone();
            } else if t <= e {
                out[i][k] = segment_point(segments, i, t);
            }
        }
        // phase 3: backward from the matched target
        let x1 = &target.points[plan_sigma[i]];
        let mut state = x1.clone();
        let mut t_cur = horizon;
        for k in (0..=n_samples).rev() {
            let t = horizon * k as f64 / n_samples as f64;
            if t > e {
                state = flow(field, &state, t - t_cur, step, bounds)?;
                t_cur = t;
                out[i][k] = state.clone();
            } else {
                break;
            }
        }
    }
    Ok(out)
}

/// Tube radii r_i < R_i: the outer ball stays inside the region during the
/// segment phase and the outer balls of distinct agents never meet. The
/// 0.45 / 0.5 factors leave margin against the sampling of the clearance
/// estimates; any sampled violation shrinks all radii and retries.
pub fn compute_radii(
    samples: &[Vec<Point>],
    segments: &SegmentBundle,
    horizon: f64,
    region: &ConvexRegion,
    min_separation: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(min_separation > 0.0) {
        return Err(CrowdError::RadiiDegenerate(RADII_MIN));
    }
    let n = samples.len();
    let n_samples = samples[0].len() - 1;
    let in_window = |i: usize, k: usize| -> bool {
        let t = horizon * k as f64 / n_samples as f64;
        t >= segments.start_times[i] && t <= segments.end_times[i]
    };
    // clearance of the segment phase to the region boundary
    let mut d_omega = vec![f64::INFINITY; n];
    for i in 0..n {
        for k in 0..=n_samples {
            if in_window(i, k) {
                d_omega[i] = d_omega[i].min(region.clearance(&samples[i][k]));
            }
        }
        // windows shorter than the grid spacing: fall back to endpoints
        for t in [
            segments.start_times[i],
            0.5 * (segments.start_times[i] + segments.end_times[i]),
            segments.end_times[i],
        ] {
            d_omega[i] = d_omega[i].min(region.clearance(&segment_point(segments, i, t)));
        }
    }
    // minimal pairwise distance over the common grid
    let mut d_pair = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dij = f64::INFINITY;
            for k in 0..=n_samples {
                dij = dij.min(geom::dist(&samples[i][k], &samples[j][k]));
            }
            d_pair[i] = d_pair[i].min(dij);
            d_pair[j] = d_pair[j].min(dij);
        }
    }
    let mut outer: Vec<f64> = (0..n)
        .map(|i| RADII_FRACTION * d_omega[i].min(d_pair[i] / 2.0))
        .collect();
    for _ in 0..=RADII_SHRINK_TRIES {
        if outer.iter().any(|&r| r < RADII_MIN || !r.is_finite()) {
            return Err(CrowdError::RadiiDegenerate(RADII_MIN));
        }
        let mut ok = true;
        'verify: for i in 0..n {
            for k in 0..=n_samples {
                if in_window(i, k) && region.clearance(&samples[i][k]) < outer[i] {
                    ok = false;
                    break 'verify;
                }
            }
            for j in (i + 1)..n {
                for k in 0..=n_samples {
                    if geom::dist(&samples[i][k], &samples[j][k]) <= outer[i] + outer[j] {
                        ok = false;
                        break 'verify;
                    }
                }
            }
        }
        if ok {
            let inner: Vec<f64> = outer.iter().map(|r| r / 2.0).collect();
            return Ok((inner, outer));
        }
        for r in &mut outer {
            *r *= 0.5;
        }
    }
    Err(CrowdError::RadiiDegenerate(RADII_MIN))
}

/// Quintic smoothstep cutoff: 1 inside r, 0 outside R, C^2 in between.
pub fn bump(rho: f64, r: f64, big_r: f64) -> f64 {
    if rho <= r {
        1.0
    } else if rho >= big_r {
        0.0
    } else {
        let s = (rho - r) / (big_r - r);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// The localized control u(x, t): (w_i - v(x)) scaled by the bump inside
/// agent i's outer ball during its segment window, zero elsewhere. The
/// outer balls are disjoint, so contributions never overlap.
pub fn eval_control(plan: &ControlPlan, x: &[f64], t: f64, field: &VectorField) -> Point {
    eval_control_windowed(plan, x, t, t, field)
}

/// Control evaluation with the window-activity test decoupled from the
/// geometric time. The simulator aligns its steps with the window
/// boundaries and tests activity at the step midpoint, so no RK4 stage
/// ever straddles a control switch.
pub fn eval_control_windowed(
    plan: &ControlPlan,
    x: &[f64],
    t_geom: f64,
    t_window: f64,
    field: &VectorField,
) -> Point {
    let d = x.len();
    let mut u = vec![0.0; d];
    for i in 0..plan.n() {
        let (s, e) = plan.window(i);
        if t_window <= s || t_window >= e {
            continue;
        }
        // segment_point clamps, so stage times slightly past the
        // boundaries are safe
        let z = segment_point(&plan.segments, i, t_geom);
        let rho = geom::dist(x, &z);
        if rho >= plan.outer_radii[i] {
            continue;
        }
        let b = bump(rho, plan.inner_radii[i], plan.outer_radii[i]);
        let v = field.eval(x);
        for k in 0..d {
            u[k] += b * (plan.velocities[i][k] - v[k]);
        }
    }
    u
}

/// Closed-loop integration record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationResult {
    pub times: Vec<f64>,
    /// samples[k][i] is agent i at times[k].
    pub samples: Vec<Vec<Point>>,
    pub final_configuration: Configuration,
    /// Permutation-invariant distance from the final configuration to the
    /// requested target.
    pub endpoint_error: f64,
    pub control_sup_norm: f64,
}

/// Integrates dx_i/dt = v(x_i) + 1_omega(x_i) u(x_i, t) over [0, T] with
/// RK4 at the given step, recording every `output_stride` steps.
pub fn simulate(
    plan: &ControlPlan,
    field: &VectorField,
    region: &ConvexRegion,
    config0: &Configuration,
    error_target: &Configuration,
    step: f64,
    output_stride: usize,
    bounds: &WorkingBox,
) -> Result<SimulationResult> {
    assert!(step > 0.0);
    let n = config0.len();
    let horizon = plan.horizon;
    let stride = output_stride.max(1);
    let mut sup_norm = 0.0f64;
    let mut state: Vec<Point> = config0.points.clone();
    let mut times = vec![0.0];
    let mut samples = vec![state.clone()];
    // t_window is held at the step midpoint: integration steps are aligned
    // with the control windows below, so the active set is constant across
    // each step and no RK4 stage straddles a velocity switch.
    let derivative = |t: f64, t_window: f64, xs: &[Point], sup: &mut f64| -> Vec<Point> {
        xs.iter()
            .map(|x| {
                let mut dx = field.eval(x);
                if region.contains(x, Membership::Closure) {
                    let u = eval_control_windowed(plan, x, t, t_window, field);
                    let un = geom::norm(&u);
                    if un > *sup {
                        *sup = un;
                    }
                    for k in 0..dx.len() {
                        dx[k] += u[k];
                    }
                }
                dx
            })
            .collect()
    };
    // split [0, T] at every control-window boundary
    let mut breakpoints = vec![0.0, horizon];
    for i in 0..plan.n() {
        let (s, e) = plan.window(i);
        for b in [s, e] {
            if b > 1e-12 && b < horizon - 1e-12 {
                breakpoints.push(b);
            }
        }
    }
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut step_count = 0usize;
    for w in breakpoints.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / m as f64;
        for k in 0..m {
            let t = a + k as f64 * h;
            let tw = t + h / 2.0;
            let k1 = derivative(t, tw, &state, &mut sup_norm);
            let mid1: Vec<Point> = state
                .iter()
                .zip(&k1)
                .map(|(x, k)| geom::add_scaled(x, h / 2.0, k))
                .collect();
            let k2 = derivative(t + h / 2.0, tw, &mid1, &mut sup_norm);
            let mid2: Vec<Point> = state
                .iter()
                .zip(&k2)
                .map(|(x, k)| geom::add_scaled(x, h / 2.0, k))
                .collect();
            let k3 = derivative(t + h / 2.0, tw, &mid2, &mut sup_norm);
            let end: Vec<Point> = state
                .iter()
                .zip(&k3)
                .map(|(x, k)| geom::add_scaled(x, h, k))
                .collect();
            let k4 = derivative(t + h, tw, &end, &mut sup_norm);
            for i in 0..n {
                for d in 0..state[i].len() {
                    state[i][d] +=
                        h / 6.0 * (k1[i][d] + 2.0 * k2[i][d] + 2.0 * k3[i][d] + k4[i][d]);
                }
                if !geom::is_finite(&state[i]) || !bounds.contains(&state[i]) {
                    return Err(CrowdError::IntegrationDiverged { t: t + h });
                }
            }
            step_count += 1;
            let t_next = if k + 1 == m { b } else { t + h };
            if step_count % stride == 0 || t_next >= horizon {
                times.push(t_next);
                samples.push(state.clone());
            }
        }
    }
    let final_configuration = Configuration { points: state };
    let endpoint_error = configuration_distance(&final_configuration, error_target)?.value;
    Ok(SimulationResult {
        times,
        samples,
        final_configuration,
        endpoint_error,
        control_sup_norm: sup_norm,
    })
}

/// Segment velocities w_i and the uniform control bound M.
pub fn segment_velocities_and_bound(
    segments: &SegmentBundle,
    outer_radii: &[f64],
    field: &VectorField,
) -> (Vec<Point>, f64) {
    let n = segments.starts.len();
    let lip = field.lipschitz();
    let mut velocities = Vec::with_capacity(n);
    let mut bound = 0.0f64;
    for i in 0..n {
        let span = segments.end_times[i] - segments.start_times[i];
        let w = geom::scale(&geom::sub(&segments.ends[i], &segments.starts[i]), 1.0 / span);
        let seg_len = geom::dist(&segments.starts[i], &segments.ends[i]);
        let mut m_i = 0.0f64;
        for k in 0..=SEGMENT_BOUND_SAMPLES {
            let z = geom::lerp(
                &segments.starts[i],
                &segments.ends[i],
                k as f64 / SEGMENT_BOUND_SAMPLES as f64,
            );
            m_i = m_i.max(geom::dist(&w, &field.eval(&z)));
        }
        // pad by the field variation across the tube and between samples
        m_i += lip * (outer_radii[i] + seg_len / SEGMENT_BOUND_SAMPLES as f64);
        bound = bound.max(m_i);
        velocities.push(w);
    }
    (velocities, bound)
}

/// Perturbed targets for the approximate pipeline: each target is moved by
/// at most epsilon so that its backward flow at the closure entry time
/// lands strictly inside the region.
pub fn build_approx_targets(
    field: &VectorField,
    config1: &Configuration,
    region: &ConvexRegion,
    hitting: &HittingTimes,
    epsilon: f64,
    params: &Params,
) -> Result<Configuration> {
    assert!(epsilon > 0.0);
    let bounds = params.working_box(field.dim());
    let mut points = Vec::with_capacity(config1.len());
    for (i, x1) in config1.points.iter().enumerate() {
        if region.contains(x1, Membership::Open) {
            points.push(x1.clone());
            continue;
        }
        let t_bar = hitting.t1_bar[i].ok_or_else(|| {
            CrowdError::Infeasible(format!("agent {i}: no backward closure entry"))
        })?;
        let p_bar = flow(field, x1, -t_bar, params.step, &bounds)?;
        if region.contains(&p_bar, Membership::Open) {
            // transversal enough already: no perturbation needed
            points.push(x1.clone());
            continue;
        }
        // push along the mean inward normal of the near-active half-spaces
        let mut dir = vec![0.0; field.dim()];
        for h in &region.halfspaces {
            if h.offset - geom::dot(&h.normal, &p_bar) <= 1e-6 {
                dir = geom::sub(&dir, &h.normal);
            }
        }
        let dn = geom::norm(&dir);
        if dn == 0.0 {
            return Err(CrowdError::PerturbationFailed { agent: i, halvings: 0 });
        }
        dir = geom::scale(&dir, 1.0 / dn);
        let mut eta = epsilon / 4.0;
        let mut found = None;
        for _ in 0..PERTURB_HALVINGS {
            let pushed = geom::add_scaled(&p_bar, eta, &dir);
            if region.contains(&pushed, Membership::Open) {
                let y1 = flow(field, &pushed, t_bar, params.step, &bounds)?;
                if geom::dist(&y1, x1) <= epsilon {
                    found = Some(y1);
                    break;
                }
            }
            eta /= 2.0;
        }
        points.push(found.ok_or(CrowdError::PerturbationFailed {
            agent: i,
            halvings: PERTURB_HALVINGS,
        })?);
    }
    Configuration::new(points)
}

/// Empirical admissibility check of 1_omega u: sup norm against the plan's
/// bound M and finite-difference spatial Lipschitz ratios against an
/// analytic budget.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaratheodoryReport {
    pub sup_norm: f64,
    pub bound: f64,
    pub max_lipschitz_ratio: f64,
    pub lipschitz_budget: f64,
    pub passed: bool,
}

pub fn verify_caratheodory(
    plan: &ControlPlan,
    field: &VectorField,
    samples: usize,
    seed: u64,
) -> CaratheodoryReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = plan.n();
    let d = if n > 0 { plan.initial.points[0].len() } else { 0 };
    let lip_v = field.lipschitz();
    // steepest slope of the quintic smoothstep is 15/8 over (R - r)
    let lipschitz_budget = if n == 0 {
        lip_v
    } else {
        (0..n)
            .map(|i| {
                plan.control_bound * 1.875 / (plan.outer_radii[i] - plan.inner_radii[i]) + lip_v
            })
            .fold(lip_v, f64::max)
    };
    let mut sup_norm = 0.0f64;
    let mut max_ratio = 0.0f64;
    for _ in 0..samples {
        if n == 0 {
            break;
        }
        let i = rng.gen_range(0..n);
        let (s, e) = plan.window(i);
        let t = rng.gen_range(0.0..plan.horizon);
        let t_in = if e > s { rng.gen_range(s..e) } else { t };
        // one draw near the tube, one anywhere in the scene
        for (tt, spread) in [(t_in, 2.0 * plan.outer_radii[i]), (t, 1.0)] {
            let z = segment_point(&plan.segments, i, tt.clamp(s, e));
            let x: Point = (0..d)
                .map(|k| z[k] + rng.gen_range(-spread..spread))
                .collect();
            let u = eval_control(plan, &x, tt, field);
            sup_norm = sup_norm.max(geom::norm(&u));
            let h = 1e-6;
            let x2: Point = (0..d).map(|k| x[k] + rng.gen_range(-h..h)).collect();
            let dx = geom::dist(&x, &x2);
            if dx > 0.0 {
                let u2 = eval_control(plan, &x2, tt, field);
                max_ratio = max_ratio.max(geom::dist(&u, &u2) / dx);
            }
        }
    }
    let passed = sup_norm <= plan.control_bound + 1e-9
        && max_ratio <= lipschitz_budget * (1.0 + 1e-6) + 1e-9;
    CaratheodoryReport {
        sup_norm,
        bound: plan.control_bound,
        max_lipschitz_ratio: max_ratio,
        lipschitz_budget,
        passed,
    }
}
