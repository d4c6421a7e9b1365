use lrcp_core::engine::{run, run_coupled, SimConfig};
use lrcp_core::fstc::{
    c1_plan, c2_plan, c3_plan, c4_plan, check_c1, check_c2, check_c3, check_c4, oriented_percolation_demo, plan_holds,
    run_plan, samples_for_epsilon, search_block_params, BlockPlan, BlockSpec, SearchConfig, SeedShape,
};
use lrcp_core::geometry::{Interval, Seed, Site};
use lrcp_core::kernel::Kernel;
use lrcp_core::rng::StreamBase;
use proptest::prelude::*;

fn nn(beta: f64) -> Kernel {
    Kernel::nearest_neighbor(1, beta).unwrap()
}

fn s1(x: i64) -> Site {
    Site::from_coords(&[x]).unwrap()
}

fn plan_config(kernel: &Kernel, delta: f64, plan: &BlockPlan, stream: StreamBase, replicate: u64) -> SimConfig {
    SimConfig::new(kernel.clone(), delta, plan.horizon).with_domain(plan.domain.clone()).with_stream(stream).with_replicate(replicate)
}

#[test]
fn heavy_healing_kills_c1_and_no_healing_fills_c2() {
    let k = nn(1.0);
    let stream = StreamBase::named(20, "extremes");
    let spec = BlockSpec::new(&Seed::singleton(1), 4.0, 8.0, 2.0, 0.1);
    let c1 = check_c1(&k, 100.0 * k.total_rate(), &spec, 300, stream).unwrap();
    assert!(c1.estimate.value < 0.01, "{:?}", c1.estimate);
    let spec = BlockSpec::new(&Seed::singleton(1), 2.0, 20.0, 2.0, 0.1);
    for positive in [true, false] {
        let c2 = check_c2(&k, 0.0, &spec, 0, positive, 200, stream).unwrap();
        assert!(c2.estimate.value >= 0.99, "{:?}", c2.estimate);
    }
}

#[test]
fn c3_without_tilt_matches_the_final_state() {
    let k = nn(2.0);
    let stream = StreamBase::named(21, "c3");
    let seed = Seed::new(1, [s1(0), s1(2)]).unwrap();
    let spec = BlockSpec::new(&seed, 3.0, 3.0, 2.0, 0.1);
    let plan = c3_plan(&spec).unwrap();
    let mut hits = 0;
    for r in 0..300 {
        let tr = run(&plan_config(&k, 1.0, &plan, stream, r), &seed).unwrap();
        let state = tr.state_at(4.0);
        let manual = tr.extinction_time().is_none()
            && (-3..=3).any(|x| [x, x + 2].iter().all(|&y| state.contains(&s1(y))));
        assert_eq!(plan_holds(&plan, &tr), manual, "replicate {r}");
        assert_eq!(run_plan(&k, 1.0, &plan, stream, r).unwrap().0, manual);
        hits += u64::from(manual);
    }
    assert!(hits > 0 && hits < 300);
}

#[test]
fn fast_tilt_starves_c3() {
    let spec = BlockSpec::new(&Seed::singleton(1), 2.0, 2.0, 2.0, 0.1).with_theta(50.0);
    let c = check_c3(&nn(1.0), 0.0, &spec, 100, StreamBase::named(22, "tilt")).unwrap();
    assert_eq!(c.estimate.value, 0.0);
}

#[test]
fn untilted_c4_is_c2_shifted_by_one() {
    let mut spec = BlockSpec::new(&Seed::singleton(1), 2.0, 3.0, 2.0, 0.1);
    spec.shell_width = Some(4.0);
    spec.restriction_width = Some(10.0);
    let c2 = c2_plan(&spec, 0, true).unwrap();
    let c4 = c4_plan(&spec, true).unwrap();
    assert_eq!(c2.domain.half_widths(), c4.domain.half_widths());
    assert_eq!(c4.horizon, c2.horizon + 1.0);
    let mut a: Vec<_> = c2.anchors.iter().map(|(x, ivs)| (*x, ivs.iter().map(|iv| (iv.lo + 1.0, iv.hi + 1.0)).collect::<Vec<_>>())).collect();
    let mut b: Vec<_> = c4.anchors.iter().map(|(x, ivs)| (*x, ivs.iter().map(|iv| (iv.lo, iv.hi)).collect::<Vec<_>>())).collect();
    a.sort_by_key(|e| e.0);
    b.sort_by_key(|e| e.0);
    assert_eq!(a, b);
    assert!(a.iter().all(|(x, _)| (3..=6).contains(&x.coords(1)[0])));
}

#[test]
fn c4_faces_live_and_dead() {
    let k = nn(1.0);
    let stream = StreamBase::named(23, "c4");
    let spec = BlockSpec::new(&Seed::singleton(1), 2.0, 12.0, 2.0, 0.1);
    for positive in [true, false] {
        let live = check_c4(&k, 0.0, &spec, positive, 100, stream).unwrap();
        assert!(live.estimate.value >= 0.95, "{:?}", live.estimate);
        let dead = check_c4(&k, 100.0 * k.total_rate(), &spec, positive, 100, stream).unwrap();
        assert_eq!(dead.estimate.value, 0.0);
    }
    let right = Kernel::table(1, [(s1(1), 2.0)]).unwrap();
    assert_eq!(check_c4(&right, 0.0, &spec, false, 50, stream).unwrap().estimate.value, 0.0);
    assert_eq!(check_c4(&right, 0.0, &spec, true, 50, stream).unwrap().estimate.value, 1.0);
}

#[test]
fn union_of_faces_is_the_or_of_faces() {
    let k = nn(2.0);
    let stream = StreamBase::named(24, "union");
    let spec = BlockSpec::new(&Seed::singleton(1), 2.0, 6.0, 2.0, 0.1);
    let pos = c2_plan(&spec, 0, true).unwrap();
    let neg = c2_plan(&spec, 0, false).unwrap();
    let mut both = pos.clone();
    for (x, ivs) in &neg.anchors {
        both.anchors.entry(*x).or_insert_with(Vec::new).extend(ivs.iter().copied());
    }
    let (mut n_pos, mut n_neg, mut n_both) = (0u32, 0u32, 0u32);
    let n = 600;
    for r in 0..n {
        let tr = run(&plan_config(&k, 1.0, &pos, stream, r), &pos.seed).unwrap();
        let (a, b) = (plan_holds(&pos, &tr), plan_holds(&neg, &tr));
        assert_eq!(plan_holds(&both, &tr), a || b);
        n_pos += u32::from(a);
        n_neg += u32::from(b);
        n_both += u32::from(a && b);
    }
    // increasing events of one construction are positively correlated
    let (pa, pb, pab) = (n_pos as f64 / n as f64, n_neg as f64 / n as f64, n_both as f64 / n as f64);
    let sd = (pab * (1.0 - pab) / n as f64).sqrt().max(1.0 / n as f64);
    assert!(pab >= pa * pb - 3.0 * sd, "{pab} < {pa}·{pb}");
}

#[test]
fn oriented_percolation_survives_at_high_density() {
    let e = oriented_percolation_demo(0.95, 200, 220, 200, StreamBase::named(25, "op")).unwrap();
    assert!(e.value >= 0.5, "{e:?}");
}

#[test]
fn search_certifies_immediately_without_healing() {
    let k = nn(3.0);
    let cfg = SearchConfig::new(&k, 0.1, StreamBase::named(26, "search"));
    let out = search_block_params(&k, 0.0, &cfg).unwrap();
    let cert = out.certificate().expect("certified");
    assert_eq!(cert.candidates_tried, 1);
    assert_eq!(cert.samples, samples_for_epsilon(0.1));
    assert_eq!(cert.spec.seed_set().unwrap(), SeedShape::Cube { radius: 0 }.build(&k).unwrap());
    assert!(cert.c1.ci_low >= 0.9);
    assert_eq!(cert.c2.len(), 2);
}

#[test]
fn search_fails_under_heavy_healing() {
    let k = nn(1.0);
    let mut cfg = SearchConfig::new(&k, 0.1, StreamBase::named(27, "search"));
    cfg.l_ladder = vec![4.0, 8.0];
    let out = search_block_params(&k, 20.0, &cfg).unwrap();
    assert!(out.certificate().is_none());
    let json = serde_json::to_string(&out).unwrap();
    assert!(json.contains("\"outcome\":\"failed\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn block_events_are_monotone_in_the_parameters(
        replicate in 0u64..10_000,
        d_hi in 0.2f64..1.5,
        extra in 0.0f64..1.5,
        scale in 0.5f64..1.0,
        wide in any::<bool>(),
    ) {
        let k_hi = nn(2.0);
        let k_lo = k_hi.scaled(scale).unwrap();
        let stream = StreamBase::named(28, "monotone");
        let spec = BlockSpec::new(&Seed::new(1, [s1(0), s1(1)]).unwrap(), 2.0, 4.0, 2.0, 0.1);
        for plan in [c1_plan(&spec).unwrap(), c2_plan(&spec, 0, true).unwrap(), c2_plan(&spec, 0, false).unwrap()] {
            let lo = plan_config(&k_lo, d_hi + extra, &plan, stream, replicate);
            let hi = plan_config(&k_hi, d_hi, &plan, stream, replicate);
            let a_hi = if wide { Seed::new(1, [s1(-1), s1(0), s1(1)]).unwrap() } else { plan.seed.clone() };
            let c = run_coupled(&lo, &hi, &plan.seed, &a_hi).unwrap();
            prop_assert_eq!(c.violations, 0);
            if plan_holds(&plan, &c.lo) {
                prop_assert!(plan_holds(&plan, &c.hi));
            }
        }
    }

    #[test]
    fn anchors_lie_on_the_requested_face(l in 1u32..5, t in 0u32..4, positive in any::<bool>()) {
        let spec = BlockSpec::new(&Seed::singleton(1), l as f64, t as f64, 2.0, 0.1);
        let plan = c2_plan(&spec, 0, positive).unwrap();
        let width = (1.0 + 2.0 * 2.0) * l as f64;
        for (x, ivs) in &plan.anchors {
            let c = x.coords(1)[0] as f64;
            if positive {
                prop_assert!(c > l as f64 && c <= l as f64 + width);
            } else {
                prop_assert!(c < -(l as f64) && c >= -(l as f64) - width);
            }
            prop_assert!(ivs.iter().all(|iv| *iv == Interval::new(0.0, t as f64)));
        }
        prop_assert_eq!(plan.anchors.len() as f64, width.floor());
    }
}
