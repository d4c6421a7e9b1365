use lrcp_core::geometry::Site;
use lrcp_core::kernel::{Kernel, KernelError, TailBoundSearch};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn e(axis: usize, k: i32) -> Site {
    Site::unit(axis, k)
}

/// `Σ_{m > n} 1/m²` by Euler–Maclaurin, accurate to O(n^-5).
fn zeta2_tail(n: f64) -> f64 {
    1.0 / n - 1.0 / (2.0 * n * n) + 1.0 / (6.0 * n.powi(3)) - 1.0 / (30.0 * n.powi(5))
}

/// One-dimensional `Σ_{|y| > L} |y|^{-2}` by direct summation to `n` plus the
/// analytic remainder.
fn direct_tail_alpha2(l: u64, n: u64) -> f64 {
    let mut s = 0.0;
    for m in (l + 1..=n).rev() {
        s += 1.0 / (m as f64 * m as f64);
    }
    2.0 * (s + zeta2_tail(n as f64))
}

#[test]
fn rate_examples() {
    let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
    assert_eq!(k.rate(&[0]).unwrap(), 0.0);
    assert_eq!(k.rate(&[2]).unwrap(), 0.25);
    assert_eq!(k.rate(&[-2]).unwrap(), 0.25);
    let k1 = Kernel::power_law(1, 2.0, 1.0, Some(1)).unwrap();
    assert_eq!(k1.rate(&[2]).unwrap(), 0.0);
    assert!(matches!(k.rate(&[1, 1]), Err(KernelError::DimensionMismatch { .. })));
}

#[test]
fn total_rate_examples() {
    assert_eq!(Kernel::nearest_neighbor(1, 1.0).unwrap().total_rate(), 2.0);
    let k = Kernel::power_law(1, 2.0, 1.0, Some(2)).unwrap();
    assert!((k.total_rate() - 2.0 * (1.0 + 0.25)).abs() < 1e-15);
    assert_eq!(Kernel::table(1, [(e(0, 1), 1.5)]).unwrap().total_rate(), 1.5);
}

#[test]
fn unbounded_total_rate_matches_zeta() {
    // Σ_{y≠0} |y|^{-2} = 2ζ(2) = π²/3
    let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
    let b = k.total_rate_bracket();
    let exact = std::f64::consts::PI.powi(2) / 3.0;
    assert!(b.lo <= exact + 1e-12 && exact <= b.hi + 1e-12, "{b:?}");
    assert!((k.total_rate() - exact).abs() < 1e-9);
}

#[test]
fn divergent_power_law_rejected() {
    assert!(matches!(Kernel::power_law(1, 1.0, 1.0, None), Err(KernelError::NotSummable { .. })));
    assert!(matches!(Kernel::power_law(1, 0.5, 1.0, None), Err(KernelError::NotSummable { .. })));
    assert!(matches!(Kernel::power_law(2, 2.0, 1.0, None), Err(KernelError::NotSummable { .. })));
    // α = 1.5 > d = 1 is summable: Σ |y|^{-3/2} = 2ζ(3/2)
    let k = Kernel::power_law(1, 1.5, 1.0, None).unwrap();
    assert!((k.total_rate() - 2.0 * 2.612_375_348_685_488).abs() < 1e-6);
    assert!(Kernel::power_law(1, 1.5, 1.0, Some(50)).is_ok());
}

#[test]
fn truncate_examples() {
    let k = Kernel::power_law(1, 2.0, 3.0, None).unwrap().truncate(1).unwrap();
    assert_eq!(k.rate(&[1]).unwrap(), 3.0);
    assert_eq!(k.rate(&[-1]).unwrap(), 3.0);
    assert_eq!(k.rate(&[2]).unwrap(), 0.0);
    assert_eq!(k.total_rate(), 6.0);

    let base = Kernel::power_law(2, 3.5, 1.0, None).unwrap();
    let a = base.truncate(5).unwrap().truncate(3).unwrap();
    let b = base.truncate(3).unwrap();
    assert_eq!(a.cutoff(), b.cutoff());
    assert_eq!(a.total_rate(), b.total_rate());

    let t = Kernel::table(1, [(e(0, 2), 0.5)]).unwrap();
    assert!(matches!(t.truncate(1), Err(KernelError::EmptySupport)));
}

#[test]
fn tail_mass_examples() {
    let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
    let oracle = 2.0 * (std::f64::consts::PI.powi(2) / 6.0 - 1.0);
    assert!((k.tail_mass(1.0) - oracle).abs() < 1e-6);
    let nn = Kernel::nearest_neighbor(1, 1.0).unwrap();
    assert_eq!(nn.tail_mass(0.0), 2.0);
    assert_eq!(nn.tail_mass(1.0), 0.0);
    let cut = Kernel::power_law(1, 2.0, 1.0, Some(7)).unwrap();
    assert_eq!(cut.tail_mass(7.0), 0.0);
    assert_eq!(cut.tail_mass(100.0), 0.0);
}

#[test]
fn tail_mass_matches_direct_summation() {
    let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
    for l in [0u64, 1, 5, 40, 333, 5000] {
        let direct = direct_tail_alpha2(l, 2_000_000);
        let got = k.tail_mass(l as f64);
        assert!((got - direct).abs() <= 1e-9 * direct.max(1e-300) + 1e-12, "L={l}: {got} vs {direct}");
    }
}

#[test]
fn tail_mass_in_two_dimensions_matches_brute_force() {
    // shells of ℓ₁ radius m in Z² hold 4m points
    let k = Kernel::power_law(2, 3.5, 1.0, Some(300)).unwrap();
    for l in [0u64, 3, 20] {
        let mut direct = 0.0;
        for x in -300i64..=300 {
            for y in -300i64..=300 {
                let r = (x.abs() + y.abs()) as u64;
                if r > l && r <= 300 {
                    direct += (r as f64).powf(-3.5);
                }
            }
        }
        assert!((k.tail_mass(l as f64) - direct).abs() < 1e-10 * direct.max(1.0), "L={l}");
    }
}

#[test]
fn tail_bound_for_inverse_square() {
    let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
    let tb = k.find_tail_bound(4.0, &TailBoundSearch::default()).unwrap();
    assert!(tb.xi < 1.0 && tb.xi <= 0.3, "{tb:?}");
    assert!(tb.l_star <= 100);
    // ratio tends to r^{-(α-d)} = 1/4
    assert!(tb.xi > 0.24);
}

#[test]
fn tail_bound_soundness_on_random_l() {
    let k = Kernel::power_law(1, 2.0, 1.0, None).unwrap();
    let tb = k.find_tail_bound(4.0, &TailBoundSearch::default()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let l = rng.random_range(tb.l_star..=tb.l_max);
        let lhs = direct_tail_alpha2(4 * l, 1_000_000);
        let rhs = direct_tail_alpha2(l, 1_000_000);
        assert!(lhs <= tb.xi * rhs * (1.0 + 1e-9), "L={l}: {lhs} > {} * {rhs}", tb.xi);
    }
}

#[test]
fn tail_bound_finite_range_is_trivial() {
    let k = Kernel::power_law(1, 2.0, 1.0, Some(10)).unwrap();
    let tb = k.find_tail_bound(2.0, &TailBoundSearch::default()).unwrap();
    assert!(tb.xi < 1e-12);
    assert!(tb.l_star <= 10);
}

#[test]
fn tail_bound_fails_for_flat_tails() {
    let k = Kernel::power_law(1, 1.0001, 1.0, Some(1_000_000)).unwrap();
    let search = TailBoundSearch { l_max: 50, l_star_max: 50, rel_slack: 0.01 };
    let res = k.find_tail_bound(1.01, &search);
    // direct check: consecutive tail ratios are > 0.99 over the range
    let tail = |l: u64| -> f64 { (l + 1..=1_000_000).map(|m| 2.0 * (m as f64).powf(-1.0001)).sum() };
    assert!(tail(50) / tail(49) > 0.99);
    match res {
        Err(f) => assert!(f.best_xi >= 0.99),
        Ok(tb) => assert!(tb.xi >= 0.99, "{tb:?}"),
    }
}

#[test]
fn symmetry_examples() {
    assert!(Kernel::power_law(3, 5.0, 1.0, None).unwrap().is_symmetric());
    let t = Kernel::table(2, [(e(0, 1), 1.0), (e(0, -1), 1.0), (e(1, 1), 2.0), (e(1, -1), 2.0)]).unwrap();
    assert!(!t.is_symmetric());
    assert!(!Kernel::table(1, [(e(0, 1), 1.0)]).unwrap().is_symmetric());
}

#[test]
fn irreducibility_examples() {
    assert!(Kernel::nearest_neighbor(2, 1.0).unwrap().is_irreducible());
    assert!(!Kernel::table(1, [(e(0, 2), 1.0), (e(0, -2), 1.0)]).unwrap().is_irreducible());
    assert!(Kernel::table(1, [(e(0, 2), 1.0), (e(0, 3), 1.0)]).unwrap().is_irreducible());
}

#[test]
fn sampler_respects_tolerance() {
    let k = Kernel::power_law(1, 2.5, 1.0, None).unwrap();
    let s = k.sampler().unwrap();
    assert!(s.neglected_mass() <= k.tail_tolerance() * k.total_rate());
    assert!((s.total() + s.neglected_mass() - k.total_rate()).abs() < 1e-9);
}

fn signed_permutations(dim: usize) -> Vec<(Vec<usize>, Vec<i32>)> {
    fn perms(v: Vec<usize>) -> Vec<Vec<usize>> {
        if v.len() <= 1 {
            return vec![v];
        }
        let mut out = Vec::new();
        for i in 0..v.len() {
            let mut rest = v.clone();
            let h = rest.remove(i);
            for mut p in perms(rest) {
                p.insert(0, h);
                out.push(p);
            }
        }
        out
    }
    let mut out = Vec::new();
    for p in perms((0..dim).collect()) {
        for mask in 0..(1u32 << dim) {
            out.push((p.clone(), (0..dim).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect()));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncation_is_monotone(alpha in 2.2f64..6.0, beta in 0.1f64..3.0, k1 in 1u64..30, dk in 0u64..30) {
        let base = Kernel::power_law(1, alpha, beta, None).unwrap();
        let lo = base.truncate(k1).unwrap();
        let hi = base.truncate(k1 + dk).unwrap();
        for y in -70i64..=70 {
            prop_assert!(lo.rate(&[y]).unwrap() <= hi.rate(&[y]).unwrap());
        }
        prop_assert!(lo.total_rate() <= hi.total_rate() + 1e-12);
        let gap = base.total_rate() - lo.total_rate();
        prop_assert!((gap - base.tail_mass(k1 as f64)).abs() <= 1e-9 * base.total_rate() + base.total_rate_bracket().half_width() + base.tail_bracket(k1 as f64).half_width());
    }

    #[test]
    fn symmetric_kernels_are_invariant(alpha in 2.5f64..6.0, beta in 0.1f64..3.0, cutoff in 1u64..6) {
        let k = Kernel::power_law(2, alpha, beta, Some(cutoff)).unwrap();
        prop_assert!(k.is_symmetric());
        let table = k.sampler().unwrap();
        for (p, s) in signed_permutations(2) {
            for &y in table.offsets() {
                let c = y.coords(2);
                let img: Vec<i64> = (0..2).map(|i| s[i] as i64 * c[p[i]] as i64).collect();
                prop_assert_eq!(k.rate(&img).unwrap(), k.rate_at(y));
            }
        }
    }

    #[test]
    fn total_rate_is_brute_force_sum(beta in 0.1f64..3.0, entries in proptest::collection::btree_map(-6i32..=6, 0.01f64..2.0, 1..6)) {
        let entries: Vec<(Site, f64)> = entries.into_iter().filter(|(y, _)| *y != 0).map(|(y, r)| (e(0, y), r * beta)).collect();
        prop_assume!(!entries.is_empty());
        let direct: f64 = entries.iter().map(|(_, r)| r).sum();
        let k = Kernel::table(1, entries.clone()).unwrap();
        prop_assert!((k.total_rate() - direct).abs() < 1e-12);
        for (y, r) in entries {
            prop_assert_eq!(k.rate_at(y), r);
        }
    }

    #[test]
    fn power_law_total_within_bracket(alpha in 2.3f64..5.0) {
        let k = Kernel::power_law(1, alpha, 1.0, None).unwrap();
        // Σ_{m≥1} m^{-α} by direct summation with an integral remainder bound
        let n = 200_000u64;
        let s: f64 = (1..=n).rev().map(|m| (m as f64).powf(-alpha)).sum();
        let rem_lo = ((n + 1) as f64).powf(1.0 - alpha) / (alpha - 1.0);
        let rem_hi = (n as f64).powf(1.0 - alpha) / (alpha - 1.0);
        let b = k.total_rate_bracket();
        prop_assert!(b.lo <= 2.0 * (s + rem_hi) + 1e-12);
        prop_assert!(b.hi >= 2.0 * (s + rem_lo) - 1e-12);
    }
}
