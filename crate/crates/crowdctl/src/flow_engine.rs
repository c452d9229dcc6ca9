//! Velocity fields, the convex control region, flow maps and hitting times.
//!
//! The flow is integrated with classical fixed-step RK4 (the final partial
//! step is shortened to land exactly on the requested time). Hitting times
//! are located by stepping the flow until the first membership transition,
//! then bisecting inside that step to 1e-9.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CrowdError, Result};
use crate::geom::{self, Point};
use crate::params::WorkingBox;

/// Absolute tolerance of the hitting-time bisection.
pub const HIT_TOL: f64 = 1e-9;

/// Autonomous velocity field on R^d: constant, or affine x -> A x + b.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum VectorField {
    Constant { value: Vec<f64> },
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
}

impl VectorField {
    pub fn constant(value: Vec<f64>) -> Self {
        VectorField::Constant { value }
    }

    /// Planar rotation field (-y, x).
    pub fn rotation2d() -> Self {
        VectorField::Affine {
            matrix: vec![vec![0.0, -1.0], vec![1.0, 0.0]],
            offset: vec![0.0, 0.0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorField::Constant { value } => value.len(),
            VectorField::Affine { offset, .. } => offset.len(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Point {
        match self {
            VectorField::Constant { value } => value.clone(),
            VectorField::Affine { matrix, offset } => matrix
                .iter()
                .zip(offset)
                .map(|(row, b)| geom::dot(row, x) + b)
                .collect(),
        }
    }

    /// Lipschitz constant: the operator norm of the matrix (0 for constant
    /// fields). Computed as the square root of the largest eigenvalue of
    /// A^T A by power iteration.
    pub fn lipschitz(&self) -> f64 {
        match self {
            VectorField::Constant { .. } => 0.0,
            VectorField::Affine { matrix, .. } => {
                let d = matrix.len();
                if d == 0 {
                    return 0.0;
                }
                // y = A^T A x
                let apply = |x: &[f64]| -> Vec<f64> {
                    let ax: Vec<f64> = matrix.iter().map(|row| geom::dot(row, x)).collect();
                    (0..d)
                        .map(|j| (0..d).map(|i| matrix[i][j] * ax[i]).sum())
                        .collect()
                };
                let mut v = vec![1.0 / (d as f64).sqrt(); d];
                let mut lambda = 0.0;
                for _ in 0..200 {
                    let w = apply(&v);
                    let n = geom::norm(&w);
                    if n == 0.0 {
                        return 0.0;
                    }
                    lambda = n;
                    v = geom::scale(&w, 1.0 / n);
                }
                lambda.sqrt()
            }
        }
    }
}

/// Open vs closure membership of the control region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Open,
    Closure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HalfSpace {
    /// Unit outward normal.
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Intersection of half-spaces `normal . x <= offset`. Open membership
/// requires clearance `interior_margin` inside every half-space; closure
/// allows `boundary_tol` slack. That separation is what distinguishes a
/// grazing trajectory (t-bar < t) from a transversal entry numerically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvexRegion {
    pub halfspaces: Vec<HalfSpace>,
    pub interior_margin: f64,
    pub boundary_tol: f64,
}

impl ConvexRegion {
    pub fn new(
        halfspaces: Vec<HalfSpace>,
        interior_margin: f64,
        boundary_tol: f64,
    ) -> Result<Self> {
        if halfspaces.is_empty() {
            return Err(CrowdError::Validation("region has no half-spaces".into()));
        }
        for (k, h) in halfspaces.iter().enumerate() {
            let n = geom::norm(&h.normal);
            if (n - 1.0).abs() > 1e-12 {
                return Err(CrowdError::Validation(format!(
                    "half-space {k} normal is not unit length (|n| = {n})"
                )));
            }
        }
        let region = ConvexRegion {
            halfspaces,
            interior_margin,
            boundary_tol,
        };
        let (_, clearance) = region.chebyshev_like_center();
        if clearance <= interior_margin {
            return Err(CrowdError::Validation(format!(
                "region interior is empty: best interior clearance {clearance} <= margin {interior_margin}"
            )));
        }
        Ok(region)
    }

    /// Axis-aligned box [lo_i, hi_i] in each coordinate.
    pub fn axis_box(lo: &[f64], hi: &[f64], interior_margin: f64, boundary_tol: f64) -> Result<Self> {
        let d = lo.len();
        let mut hs = Vec::with_capacity(2 * d);
        for i in 0..d {
            let mut n = vec![0.0; d];
            n[i] = 1.0;
            hs.push(HalfSpace { normal: n, offset: hi[i] });
            let mut n = vec![0.0; d];
            n[i] = -1.0;
            hs.push(HalfSpace { normal: n, offset: -lo[i] });
        }
        ConvexRegion::new(hs, interior_margin, boundary_tol)
    }

    pub fn dim(&self) -> usize {
        self.halfspaces[0].normal.len()
    }

    /// Minimum slack `offset - normal . x` over all half-spaces; positive
    /// inside, negative outside.
    pub fn clearance(&self, x: &[f64]) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.offset - geom::dot(&h.normal, x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64], mode: Membership) -> bool {
        match mode {
            Membership::Open => self.clearance(x) > self.interior_margin,
            Membership::Closure => self.clearance(x) >= -self.boundary_tol,
        }
    }

    /// Subgradient ascent on x -> min_k (offset_k - n_k . x); returns the
    /// best point found and its clearance. Good enough to certify a
    /// nonempty interior for polytopal regions.
    pub fn chebyshev_like_center(&self) -> (Point, f64) {
        let d = self.dim();
        let mut x = vec![0.0; d];
        let mut best = x.clone();
        let mut best_clear = self.clearance(&x);
        for k in 0..2000 {
            let active = self
                .halfspaces
                .iter()
                .min_by(|a, b| {
                    let ca = a.offset - geom::dot(&a.normal, &x);
                    let cb = b.offset - geom::dot(&b.normal, &x);
                    ca.partial_cmp(&cb).unwrap()
                })
                .unwrap();
            let eta = 1.0 / (1.0 + k as f64 / 10.0);
            x = geom::add_scaled(&x, -eta, &active.normal);
            let c = self.clearance(&x);
            if c > best_clear {
                best_clear = c;
                best = x.clone();
            }
        }
        (best, best_clear)
    }
}

/// n labeled points in R^d; the crowd itself is the set modulo relabeling.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Configuration {
    pub points: Vec<Point>,
}

impl Configuration {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let c = Configuration { points };
        c.validate_disjoint()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate_disjoint(&self) -> Result<()> {
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                if geom::dist(&self.points[i], &self.points[j]) == 0.0 {
                    return Err(CrowdError::Validation(format!(
                        "configuration not disjoint: points {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn rk4_step(field: &VectorField, x: &[f64], h: f64) -> Point {
    let k1 = field.eval(x);
    let k2 = field.eval(&geom::add_scaled(x, h / 2.0, &k1));
    let k3 = field.eval(&geom::add_scaled(x, h / 2.0, &k2));
    let k4 = field.eval(&geom::add_scaled(x, h, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn check_state(x: &[f64], t: f64, bounds: &WorkingBox) -> Result<()> {
    if !geom::is_finite(x) || !bounds.contains(x) {
        return Err(CrowdError::IntegrationDiverged { t });
    }
    Ok(())
}

/// Flow map approximation Phi_t(x0); negative t integrates backward.
pub fn flow(
    field: &VectorField,
    x0: &[f64],
    t: f64,
    step: f64,
    bounds: &WorkingBox,
) -> Result<Point> {
    assert!(step > 0.0, "step must be positive");
    assert!(t.is_finite(), "t must be finite");
    let mut x = x0.to_vec();
    check_state(&x, 0.0, bounds)?;
    let sign = if t < 0.0 { -1.0 } else { 1.0 };
    let total = t.abs();
    let mut done = 0.0;
    while done < total {
        let h = step.min(total - done);
        x = rk4_step(field, &x, sign * h);
        done += h;
        check_state(&x, sign * done, bounds)?;
    }
    Ok(x)
}

/// First entry time of the free trajectory from `x` into the region, or
/// `None` if no entry occurs within `t_max`. The trajectory is sampled at
/// the fixed step; an excursion into the region shorter than one step can
/// be missed, so shrink the step near suspected tangencies.
#[allow(clippy::too_many_arguments)]
pub fn hitting_time(
    field: &VectorField,
    x: &[f64],
    region: &ConvexRegion,
    direction: Direction,
    mode: Membership,
    t_max: f64,
    step: f64,
    bounds: &WorkingBox,
) -> Result<Option<f64>> {
    assert!(t_max > 0.0 && step > 0.0);
    if region.contains(x, mode) {
        return Ok(Some(0.0));
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let mut prev = x.to_vec();
    let mut t = 0.0;
    while t < t_max {
        let h = step.min(t_max - t);
        let next = rk4_step(field, &prev, sign * h);
        check_state(&next, sign * (t + h), bounds)?;
        if region.contains(&next, mode) {
            // Bisect the sub-step offset from `prev` to tolerance.
            let mut lo = 0.0;
            let mut hi = h;
            while hi - lo > HIT_TOL {
                let mid = 0.5 * (lo + hi);
                let xm = rk4_step(field, &prev, sign * mid);
                if region.contains(&xm, mode) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(t + 0.5 * (lo + hi)));
        }
        prev = next;
        t += h;
    }
    Ok(None)
}

/// Per-agent entry times: forward from the initial configuration, backward
/// from the target, in both open and closure modes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HittingTimes {
    /// Forward open-set entry times t0_i.
    pub t0: Vec<Option<f64>>,
    /// Forward closure entry times t0bar_i.
    pub t0_bar: Vec<Option<f64>>,
    /// Backward open-set entry times t1_i.
    pub t1: Vec<Option<f64>>,
    /// Backward closure entry times t1bar_i.
    pub t1_bar: Vec<Option<f64>>,
    pub horizon: f64,
}

pub fn configuration_hitting_times(
    field: &VectorField,
    config0: &Configuration,
    config1: &Configuration,
    region: &ConvexRegion,
    t_max: f64,
    step: f64,
    bounds: &WorkingBox,
) -> Result<HittingTimes> {
    config0.validate_disjoint()?;
    config1.validate_disjoint()?;
    let per_point = |points: &[Point], dir: Direction, mode: Membership| -> Result<Vec<Option<f64>>> {
        points
            .par_iter()
            .map(|p| hitting_time(field, p, region, dir, mode, t_max, step, bounds))
            .collect()
    };
    Ok(HittingTimes {
        t0: per_point(&config0.points, Direction::Forward, Membership::Open)?,
        t0_bar: per_point(&config0.points, Direction::Forward, Membership::Closure)?,
        t1: per_point(&config1.points, Direction::Backward, Membership::Open)?,
        t1_bar: per_point(&config1.points, Direction::Backward, Membership::Closure)?,
        horizon: t_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{DEFAULT_BOUNDARY_TOL, DEFAULT_INTERIOR_MARGIN};

    fn bounds() -> WorkingBox {
        WorkingBox::centered(2, 1e4)
    }

    fn fig4_box() -> ConvexRegion {
        ConvexRegion::axis_box(
            &[-2.0, -1.5],
            &[0.0, 1.5],
            DEFAULT_INTERIOR_MARGIN,
            DEFAULT_BOUNDARY_TOL,
        )
        .unwrap()
    }

    #[test]
    fn eval_constant_field() {
        let v = VectorField::constant(vec![1.0, 0.0]);
        assert_eq!(v.eval(&[-3.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn eval_rotation_field() {
        let v = VectorField::rotation2d();
        assert_eq!(v.eval(&[1.0, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn eval_zero_affine_field() {
        let v = VectorField::Affine {
            matrix: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            offset: vec![0.0, 0.0],
        };
        assert_eq!(v.eval(&[3.7, -1.2]), vec![0.0, 0.0]);
    }

    #[test]
    fn lipschitz_of_rotation_is_one() {
        assert!((VectorField::rotation2d().lipschitz() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flow_constant_translation() {
        let v = VectorField::constant(vec![1.0, 0.0]);
        let y = flow(&v, &[-3.0, 0.0], 1.0, 1e-3, &bounds()).unwrap();
        assert!((y[0] + 2.0).abs() < 1e-12);
        assert!(y[1].abs() < 1e-12);
    }

    #[test]
    fn flow_rotation_quarter_turn() {
        let v = VectorField::rotation2d();
        let y = flow(
            &v,
            &[0.7071, -0.7071],
            std::f64::consts::FRAC_PI_2,
            1e-3,
            &bounds(),
        )
        .unwrap();
        assert!((y[0] - 0.7071).abs() < 1e-6);
        assert!((y[1] - 0.7071).abs() < 1e-6);
    }

    #[test]
    fn flow_zero_time_is_identity() {
        let v = VectorField::rotation2d();
        let y = flow(&v, &[0.3, 0.4], 0.0, 1e-3, &bounds()).unwrap();
        assert_eq!(y, vec![0.3, 0.4]);
    }

    #[test]
    fn flow_diverges_out_of_working_box() {
        let v = VectorField::constant(vec![1.0, 0.0]);
        let small = WorkingBox::centered(2, 1.0);
        let err = flow(&v, &[0.0, 0.0], 10.0, 1e-2, &small).unwrap_err();
        assert!(matches!(err, CrowdError::IntegrationDiverged { .. }));
    }

    #[test]
    fn region_membership_modes() {
        let region = fig4_box();
        assert!(region.contains(&[-1.0, 0.0], Membership::Open));
        assert!(region.contains(&[-1.0, 0.0], Membership::Closure));
        // boundary point
        assert!(region.contains(&[0.0, 0.0], Membership::Closure));
        assert!(!region.contains(&[0.0, 0.0], Membership::Open));
        // outside
        assert!(!region.contains(&[1.0, 0.0], Membership::Open));
        assert!(!region.contains(&[1.0, 0.0], Membership::Closure));
    }

    #[test]
    fn region_rejects_non_unit_normal() {
        let err = ConvexRegion::new(
            vec![HalfSpace { normal: vec![2.0, 0.0], offset: 1.0 }],
            1e-7,
            1e-9,
        )
        .unwrap_err();
        assert!(matches!(err, CrowdError::Validation(_)));
    }

    #[test]
    fn configuration_rejects_duplicates() {
        let err = Configuration::new(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, CrowdError::Validation(_)));
    }

    #[test]
    fn hitting_time_fig4_left_forward() {
        let v = VectorField::constant(vec![1.0, 0.0]);
        let t = hitting_time(
            &v,
            &[-3.0, 0.0],
            &fig4_box(),
            Direction::Forward,
            Membership::Open,
            100.0,
            1e-3,
            &bounds(),
        )
        .unwrap()
        .unwrap();
        assert!((t - 1.0).abs() < 1e-6, "t = {t}");
    }

    #[test]
    fn hitting_time_fig4_right_forward() {
        let v = VectorField::rotation2d();
        let t = hitting_time(
            &v,
            &[0.7071, -0.7071],
            &fig4_box(),
            Direction::Forward,
            Membership::Open,
            100.0,
            1e-3,
            &bounds(),
        )
        .unwrap()
        .unwrap();
        let expect = 3.0 * std::f64::consts::FRAC_PI_4;
        assert!((t - expect).abs() < 1e-6, "t = {t}, expect {expect}");
    }

    #[test]
    fn hitting_time_zero_when_inside() {
        let v = VectorField::rotation2d();
        let t = hitting_time(
            &v,
            &[-1.0, 0.0],
            &fig4_box(),
            Direction::Backward,
            Membership::Open,
            10.0,
            1e-3,
            &bounds(),
        )
        .unwrap();
        assert_eq!(t, Some(0.0));
    }

    #[test]
    fn hitting_time_absent_when_moving_away() {
        let v = VectorField::constant(vec![1.0, 0.0]);
        // backward flow from left of the box moves further left
        let t = hitting_time(
            &v,
            &[-3.0, 0.0],
            &fig4_box(),
            Direction::Backward,
            Membership::Open,
            5.0,
            1e-3,
            &bounds(),
        )
        .unwrap();
        assert_eq!(t, None);
    }

    #[test]
    fn config_hitting_times_fig4_left() {
        let v = VectorField::constant(vec![1.0, 0.0]);
        let c0 = Configuration::new(vec![vec![-3.0, 0.0]]).unwrap();
        let c1 = Configuration::new(vec![vec![1.0, 0.0]]).unwrap();
        let h = configuration_hitting_times(&v, &c0, &c1, &fig4_box(), 100.0, 1e-3, &bounds())
            .unwrap();
        assert!((h.t0[0].unwrap() - 1.0).abs() < 1e-6);
        assert!((h.t0_bar[0].unwrap() - 1.0).abs() < 1e-6);
        assert!((h.t1[0].unwrap() - 1.0).abs() < 1e-6);
        assert!((h.t1_bar[0].unwrap() - 1.0).abs() < 1e-6);
        // closure entry never after open entry
        assert!(h.t0_bar[0].unwrap() <= h.t0[0].unwrap() + 1e-9);
    }

    #[test]
    fn config_hitting_times_inside_are_zero() {
        let v = VectorField::constant(vec![1.0, 0.0]);
        let c = Configuration::new(vec![vec![-1.0, 0.0], vec![-1.5, 0.5]]).unwrap();
        let h =
            configuration_hitting_times(&v, &c, &c, &fig4_box(), 10.0, 1e-3, &bounds()).unwrap();
        assert!(h.t0.iter().all(|t| *t == Some(0.0)));
        assert!(h.t0_bar.iter().all(|t| *t == Some(0.0)));
    }
}
