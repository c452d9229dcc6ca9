//! End-to-end planning: hitting times, minimal time, waypoint assignment,
//! tube radii, and the assembled control plan.

use crate::control_synthesis::{
    build_approx_targets, compute_radii, sample_trajectories, segment_velocities_and_bound,
    ControlPlan, RADII_SAMPLES,
};
use crate::error::{CrowdError, Result};
use crate::flow_engine::{
    configuration_hitting_times, Configuration, ConvexRegion, HittingTimes, VectorField,
};
use crate::minimal_time::{
    geometric_report, minimal_time_report, sorted_pairing, ControlMode, MinimalTimeReport,
};
use crate::params::Params;
use crate::transport_plan::{build_cost_matrix, build_segments, choose_waypoints, solve_assignment};

pub struct PlanOutcome {
    pub report: MinimalTimeReport,
    pub plan: ControlPlan,
    pub hitting: HittingTimes,
}

fn infeasible_message(hitting: &HittingTimes) -> String {
    let g = geometric_report(hitting);
    let mut parts = Vec::new();
    for i in &g.forward_blocked {
        parts.push(format!("agent {i}: forward trajectory never reaches the region"));
    }
    for i in &g.backward_blocked {
        if g.backward_closure_only.contains(i) {
            parts.push(format!(
                "agent {i}: backward trajectory only grazes the region boundary"
            ));
        } else {
            parts.push(format!("agent {i}: backward trajectory never reaches the region"));
        }
    }
    parts.join("; ")
}

/// Effective per-agent times used to place the horizon: open entries, with
/// the closure time standing in where the open one is absent. A pure
/// tangency then proceeds far enough to fail in waypoint selection with a
/// diagnosable error instead of a bare infeasibility.
fn effective_times(hitting: &HittingTimes, mode: ControlMode) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = hitting.t0.len();
    let mut fwd = Vec::with_capacity(n);
    let mut bwd = Vec::with_capacity(n);
    for i in 0..n {
        fwd.push(
            hitting.t0[i]
                .or(hitting.t0_bar[i])
                .ok_or_else(|| CrowdError::Infeasible(infeasible_message(hitting)))?,
        );
        let b = match mode {
            ControlMode::Exact => hitting.t1[i].or(hitting.t1_bar[i]),
            ControlMode::Approximate => hitting.t1_bar[i],
        };
        bwd.push(b.ok_or_else(|| CrowdError::Infeasible(infeasible_message(hitting)))?);
    }
    Ok((fwd, bwd))
}

/// Builds the full exact-control plan against the given target. The horizon
/// defaults to the infimum time plus `params.delta`.
pub fn plan_exact(
    field: &VectorField,
    config0: &Configuration,
    config1: &Configuration,
    region: &ConvexRegion,
    params: &Params,
    t_override: Option<f64>,
) -> Result<PlanOutcome> {
    if config0.len() != config1.len() {
        return Err(CrowdError::SizeMismatch(config0.len(), config1.len()));
    }
    let bounds = params.working_box(field.dim());
    let hitting = configuration_hitting_times(
        field, config0, config1, region, params.t_max, params.step, &bounds,
    )?;
    let report = minimal_time_report(ControlMode::Exact, &hitting);
    let (fwd, bwd) = effective_times(&hitting, ControlMode::Exact)?;
    let (infimum, _) = sorted_pairing(&fwd, &bwd);
    let horizon = t_override.unwrap_or(infimum + params.delta);
    if horizon <= infimum {
        return Err(CrowdError::HorizonBelowInfimum { t: horizon, infimum });
    }
    let delta = horizon - infimum;
    let waypoints =
        choose_waypoints(field, config0, config1, region, &hitting, horizon, delta, params)?;
    let cost = build_cost_matrix(&waypoints);
    let sigma = solve_assignment(&cost)?;
    let segments = build_segments(&waypoints, &sigma);
    let samples = sample_trajectories(
        &sigma,
        config0,
        config1,
        &segments,
        horizon,
        field,
        RADII_SAMPLES,
        params.step,
        &bounds,
    )?;
    let (inner_radii, outer_radii) =
        compute_radii(&samples, &segments, horizon, region, segments.min_separation)?;
    let (velocities, control_bound) =
        segment_velocities_and_bound(&segments, &outer_radii, field);
    let min_separation = segments.min_separation;
    let plan = ControlPlan {
        horizon,
        sigma,
        initial: config0.clone(),
        target: config1.clone(),
        waypoints,
        segments,
        inner_radii,
        outer_radii,
        velocities,
        control_bound,
        min_separation,
    };
    Ok(PlanOutcome { report, plan, hitting })
}

pub struct ApproxOutcome {
    pub report: MinimalTimeReport,
    pub plan: ControlPlan,
    pub perturbed_target: Configuration,
}

/// Approximate pipeline: perturbs the targets within epsilon/2 so that
/// their backward flows land strictly inside the region, then plans exact
/// control to the perturbed configuration at T = M_a + delta. The leftover
/// epsilon/2 absorbs the simulation error.
pub fn plan_approx(
    field: &VectorField,
    config0: &Configuration,
    config1: &Configuration,
    region: &ConvexRegion,
    params: &Params,
    t_override: Option<f64>,
) -> Result<ApproxOutcome> {
    if config0.len() != config1.len() {
        return Err(CrowdError::SizeMismatch(config0.len(), config1.len()));
    }
    let bounds = params.working_box(field.dim());
    let hitting = configuration_hitting_times(
        field, config0, config1, region, params.t_max, params.step, &bounds,
    )?;
    let report = minimal_time_report(ControlMode::Approximate, &hitting);
    let infimum = report
        .infimum_time
        .ok_or_else(|| CrowdError::Infeasible(infeasible_message(&hitting)))?;
    let horizon = t_override.unwrap_or(infimum + params.delta);
    if horizon <= infimum {
        return Err(CrowdError::HorizonBelowInfimum { t: horizon, infimum });
    }
    let perturbed =
        build_approx_targets(field, config1, region, &hitting, params.epsilon / 2.0, params)?;
    let exact = plan_exact(field, config0, &perturbed, region, params, Some(horizon))?;
    Ok(ApproxOutcome {
        report,
        plan: exact.plan,
        perturbed_target: perturbed,
    })
}
