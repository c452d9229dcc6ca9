//! Property tests of the numerical kernels: flow composition, hitting-time
//! ordering, pairing optimality, distance axioms, and control shape.

use proptest::prelude::*;

use crowdctl::control_synthesis::bump;
use crowdctl::flow_engine::{flow, hitting_time, ConvexRegion, Direction, Membership, VectorField};
use crowdctl::minimal_time::{configuration_distance, sorted_pairing};
use crowdctl::transport_plan::hungarian;
use crowdctl::{Configuration, Params};

fn rotation_region() -> ConvexRegion {
    ConvexRegion::axis_box(&[-2.0, -1.5], &[0.0, 1.5], 1e-7, 1e-9).unwrap()
}

fn fields() -> Vec<VectorField> {
    vec![
        VectorField::constant(vec![1.0, 0.0]),
        VectorField::rotation2d(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flow_composes_over_time(
        x in prop::array::uniform2(-3.0f64..3.0),
        s in -2.0f64..2.0,
        t in -2.0f64..2.0,
    ) {
        let params = Params::default();
        let bounds = params.working_box(2);
        for field in fields() {
            let mid = flow(&field, &x, s, params.step, &bounds).unwrap();
            let two_leg = flow(&field, &mid, t, params.step, &bounds).unwrap();
            let direct = flow(&field, &x, s + t, params.step, &bounds).unwrap();
            let err = crowdctl::geom::dist(&two_leg, &direct);
            let scale = 1.0 + crowdctl::geom::norm(&x);
            prop_assert!(err <= 1e-6 * scale, "composition error {err}");
        }
    }

    #[test]
    fn flow_reverses_exactly_enough(
        x in prop::array::uniform2(-3.0f64..3.0),
        t in -3.0f64..3.0,
    ) {
        let params = Params::default();
        let bounds = params.working_box(2);
        for field in fields() {
            let fwd = flow(&field, &x, t, params.step, &bounds).unwrap();
            let back = flow(&field, &fwd, -t, params.step, &bounds).unwrap();
            let err = crowdctl::geom::dist(&back, &x);
            prop_assert!(err <= 1e-6 * (1.0 + crowdctl::geom::norm(&x)), "roundtrip error {err}");
        }
    }

    #[test]
    fn closure_entry_never_later_than_open_entry(
        radius in 0.3f64..1.9,
        angle in 0.0f64..std::f64::consts::TAU,
        backward in proptest::bool::ANY,
    ) {
        let field = VectorField::rotation2d();
        let region = rotation_region();
        let params = Params::default();
        let bounds = params.working_box(2);
        let x = vec![radius * angle.cos(), radius * angle.sin()];
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let open = hitting_time(&field, &x, &region, dir, Membership::Open, 8.0, params.step, &bounds).unwrap();
        let closure = hitting_time(&field, &x, &region, dir, Membership::Closure, 8.0, params.step, &bounds).unwrap();
        if let (Some(t_open), Some(t_closure)) = (open, closure) {
            prop_assert!(t_closure <= t_open + 1e-9, "closure {t_closure} after open {t_open}");
        }
        if open.is_some() {
            prop_assert!(closure.is_some(), "open entry without closure entry");
        }
    }

    #[test]
    fn sorted_pairing_dominates_random_pairings(
        times in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..9),
        shuffle_seed in 0u64..1000,
    ) {
        let fwd: Vec<f64> = times.iter().map(|p| p.0).collect();
        let bwd: Vec<f64> = times.iter().map(|p| p.1).collect();
        let (best, sigma) = sorted_pairing(&fwd, &bwd);
        // any concrete pairing is at least as slow
        let n = fwd.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = shuffle_seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let random_max = (0..n).map(|i| fwd[i] + bwd[perm[i]]).fold(0.0, f64::max);
        prop_assert!(best <= random_max + 1e-12);
        let achieved = (0..n).map(|i| fwd[i] + bwd[sigma[i]]).fold(0.0, f64::max);
        prop_assert!((achieved - best).abs() <= 1e-12);
        // relabeling the agents does not change the optimum
        let mut fwd2 = fwd.clone();
        fwd2.rotate_left(1);
        let (best2, _) = sorted_pairing(&fwd2, &bwd);
        prop_assert!((best - best2).abs() <= 1e-12);
    }

    #[test]
    fn configuration_distance_is_a_metric(
        a in prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 3),
        b in prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 3),
        c in prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 3),
    ) {
        let mk = |pts: &Vec<[f64; 2]>| Configuration {
            points: pts.iter().map(|p| p.to_vec()).collect(),
        };
        let (ca, cb, cc) = (mk(&a), mk(&b), mk(&c));
        let dab = configuration_distance(&ca, &cb).unwrap().value;
        let dba = configuration_distance(&cb, &ca).unwrap().value;
        prop_assert!((dab - dba).abs() <= 1e-9, "asymmetric: {dab} vs {dba}");
        let dac = configuration_distance(&ca, &cc).unwrap().value;
        let dcb = configuration_distance(&cc, &cb).unwrap().value;
        prop_assert!(dab <= dac + dcb + 1e-9, "triangle violated");
        // the distance ignores labels
        let mut shuffled = ca.points.clone();
        shuffled.rotate_left(1);
        let d0 = configuration_distance(&ca, &Configuration { points: shuffled }).unwrap().value;
        prop_assert!(d0 <= 1e-9, "permuted copy at distance {d0}");
    }

    #[test]
    fn assignment_is_transposition_optimal(
        cost in prop::collection::vec(0.0f64..10.0, 25),
        i in 0usize..5,
        j in 0usize..5,
    ) {
        let n = 5;
        let sigma = hungarian(n, &cost);
        let total: f64 = (0..n).map(|r| cost[r * n + sigma[r]]).sum();
        if i != j {
            let mut swapped = sigma.clone();
            swapped.swap(i, j);
            let swapped_total: f64 = (0..n).map(|r| cost[r * n + swapped[r]]).sum();
            prop_assert!(total <= swapped_total + 1e-9, "swap improves the matching");
        }
    }

    #[test]
    fn bump_profile_is_a_plateau_then_a_ramp(
        r in 0.01f64..1.0,
        scale in 1.1f64..4.0,
        a in 0.0f64..5.0,
        b in 0.0f64..5.0,
    ) {
        let big = r * scale;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (ba, bb) = (bump(lo, r, big), bump(hi, r, big));
        prop_assert!((0.0..=1.0).contains(&ba) && (0.0..=1.0).contains(&bb));
        prop_assert!(ba >= bb - 1e-12, "bump must be non-increasing");
        prop_assert!(bump(r * 0.999, r, big) == 1.0);
        prop_assert!(bump(big, r, big) == 0.0);
    }
}
