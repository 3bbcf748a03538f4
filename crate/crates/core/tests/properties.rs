//! Randomized invariants: scale covariance of the analytic bound, rate-model
//! homogeneity, and structural guarantees of the trajectory sampler.

use proptest::prelude::*;
use qmetro::bec::{loglog_slope, tf_rate, TrapKind, TrapSpec};
use qmetro::bound::analytic_two_body_bound;
use qmetro::traj::{
    run_trajectories, NumberDistribution, ProtocolSpec, RateTable, RotationSpec, JUMP_PATTERNS,
};

fn rate() -> impl Strategy<Value = f64> {
    0.01f64..10.0
}

fn trap(k_scale: f64) -> TrapSpec {
    TrapSpec {
        kind: TrapKind::SphericalHarmonicTf { omega: 2000.0 },
        scattering_length: 5e-9,
        mass: 1.44e-25,
        k_constants: [
            [8e-42 * k_scale, 1e-41 * k_scale],
            [1e-41 * k_scale, 3e-42 * k_scale],
        ],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Rates carry units of 1/time, the bound units of time: scaling every
    /// rate by c must scale the bound by 1/c.
    #[test]
    fn two_body_bound_scales_inversely_with_rates(
        g11 in rate(), g22 in rate(), g12 in rate(), c in 0.1f64..10.0,
    ) {
        let base = analytic_two_body_bound(g11, g22, g12).unwrap().fq_per_time;
        let scaled = analytic_two_body_bound(c * g11, c * g22, c * g12)
            .unwrap()
            .fq_per_time;
        prop_assert!((scaled * c - base).abs() <= 1e-9 * base.abs());
    }

    /// Relabeling the two modes swaps the same-mode rates and leaves the
    /// bound unchanged.
    #[test]
    fn two_body_bound_symmetric_under_mode_swap(
        g11 in rate(), g22 in rate(), g12 in rate(),
    ) {
        let a = analytic_two_body_bound(g11, g22, g12).unwrap().fq_per_time;
        let b = analytic_two_body_bound(g22, g11, g12).unwrap().fq_per_time;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs());
    }

    /// More loss never helps: the bound is nonincreasing in every rate.
    #[test]
    fn two_body_bound_nonincreasing_in_each_rate(
        g11 in rate(), g22 in rate(), g12 in rate(), bump in 0.01f64..5.0,
    ) {
        let base = analytic_two_body_bound(g11, g22, g12).unwrap().fq_per_time;
        for bumped in [
            (g11 + bump, g22, g12),
            (g11, g22 + bump, g12),
            (g11, g22, g12 + bump),
        ] {
            let v = analytic_two_body_bound(bumped.0, bumped.1, bumped.2)
                .unwrap()
                .fq_per_time;
            prop_assert!(v <= base * (1.0 + 1e-9), "{v} > {base}");
        }
    }

    /// The Thomas–Fermi rate is linear in the collision constants and
    /// strictly decreasing in N (∝ N^{-3/5}).
    #[test]
    fn tf_rate_linear_in_k_and_decreasing_in_n(
        c in 0.1f64..10.0, n in 10u64..100_000,
    ) {
        for pair in [(0, 0), (0, 1), (1, 1)] {
            let base = tf_rate(&trap(1.0), pair, n).unwrap();
            let scaled = tf_rate(&trap(c), pair, n).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-12 * scaled.abs());
            let later = tf_rate(&trap(1.0), pair, 2 * n).unwrap();
            prop_assert!(later < base);
        }
    }

    /// Slope recovery on exact power laws.
    #[test]
    fn loglog_slope_recovers_power_laws(
        p in -3.0f64..3.0, a in 0.1f64..10.0,
    ) {
        let points: Vec<(f64, f64)> = [10.0, 100.0, 1000.0, 10000.0f64]
            .iter()
            .map(|&n| (n, a * n.powf(p)))
            .collect();
        let slope = loglog_slope(&points).unwrap();
        prop_assert!((slope - p).abs() <= 1e-9);
    }

    /// Sampler invariants on random small protocols: unit-norm final states,
    /// chronologically ordered jumps inside the protocol window, particle
    /// bookkeeping consistent with the recorded jump ids, and unit total
    /// weight.
    #[test]
    fn trajectories_conserve_bookkeeping(
        n in 2u32..6,
        g1 in 0.0f64..0.8, g11 in 0.0f64..0.4, g12 in 0.0f64..0.4,
        chi in 0.0f64..2.0, t in 0.05f64..0.6, seed in 0u64..1000,
    ) {
        let rates = RateTable { gamma1: g1, gamma11: g11, gamma12: g12, ..RateTable::default() };
        let spec = ProtocolSpec {
            n_mean: n as f64,
            distribution: NumberDistribution::Fixed,
            chi,
            chi_tilde: 0.0,
            omega: 0.7,
            prep_rates: RateTable::default(),
            ramsey_rates: rates,
            ramsey_chi: 0.0,
            ramsey_chi_tilde: 0.0,
            t_prep: 0.0,
            t_ramsey: t,
            rotation: RotationSpec::None,
        };
        let ens = run_trajectories(&spec, 12, seed).unwrap();
        let mut total_weight = 0.0;
        for tr in &ens.trajectories {
            total_weight += tr.weight;
            prop_assert!(tr.weight > 0.0);
            prop_assert!((tr.state.norm2() - 1.0).abs() <= 1e-10);
            let mut prev = 0.0;
            let mut removed = 0u32;
            for &(time, id) in &tr.jumps {
                prop_assert!(time >= prev && time <= t * (1.0 + 1e-12));
                prev = time;
                let (r1, r2) = JUMP_PATTERNS[id];
                removed += r1 + r2;
            }
            prop_assert_eq!(tr.state.total + removed, n);
        }
        prop_assert!((total_weight - 1.0).abs() <= 1e-12);
    }
}
