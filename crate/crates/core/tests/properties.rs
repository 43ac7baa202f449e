use exitlab_core::exit::radius_for;
use exitlab_core::rng::derive_seed;
use exitlab_core::scaling::{remainder_path, scaled_stopped_values, time_scaled_path};
use exitlab_core::sde::{catalog, simulate_on_grid, simulate_until_exit};
use exitlab_core::stats::{self, Provenance};
use exitlab_core::{gaussian_increments, Ball, Method, Observable, SdeModel, StreamKey};
use proptest::prelude::*;

fn prov() -> Provenance {
    Provenance {
        n: 1,
        h: 1.0,
        method: Method::Naive,
        seed: 0,
    }
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-5.0..5.0f64, Just(0.0), Just(1.0)], 1..60)
}

proptest! {
    #[test]
    fn ks_is_symmetric_and_bounded(a in sample(), b in sample()) {
        let ab = stats::ks_two_sample(&a, &b, 0.01, prov()).unwrap();
        let ba = stats::ks_two_sample(&b, &a, 0.01, prov()).unwrap();
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert!((0.0..=1.0).contains(&ab.statistic));
        let p = ab.p_value.unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(ab.is_consistent());
    }

    #[test]
    fn levy_never_exceeds_ks(a in sample(), b in sample()) {
        let ks = stats::ks_statistic(&a, &b).unwrap();
        let levy = stats::levy_distance(&a, &b).unwrap();
        prop_assert!(levy <= ks + 1e-12);
    }

    #[test]
    fn ks_is_shift_invariant(a in sample(), b in sample(), shift in -3.0..3.0f64) {
        let d = stats::ks_statistic(&a, &b).unwrap();
        let a2: Vec<f64> = a.iter().map(|x| x * 2.0 + shift).collect();
        let b2: Vec<f64> = b.iter().map(|x| x * 2.0 + shift).collect();
        prop_assert!((stats::ks_statistic(&a2, &b2).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_survival_is_monotone(x in 0.0..4.0f64, dx in 0.0..1.0f64) {
        prop_assert!(stats::kolmogorov_q(x + dx) <= stats::kolmogorov_q(x) + 1e-15);
    }

    #[test]
    fn chi2_is_nonnegative_with_valid_p(angles in prop::collection::vec(0.0..std::f64::consts::TAU, 40..200)) {
        let values: Vec<[f64; 2]> = angles.iter().map(|t| [t.cos(), t.sin()]).collect();
        let r = stats::chi2_sphere_uniformity(&values, 8, 0.01, prov()).unwrap();
        prop_assert!(r.statistic >= 0.0);
        prop_assert!((0.0..=1.0).contains(&r.p_value.unwrap()));
    }

    #[test]
    fn chi2_survival_is_monotone(x in 0.0..80.0f64, dx in 0.0..5.0f64, k in 1usize..20) {
        prop_assert!(stats::chi2_sf(x + dx, k) <= stats::chi2_sf(x, k) + 1e-14);
    }

    #[test]
    fn normal_quantile_inverts_cdf(p in 1e-12..(1.0 - 1e-12f64)) {
        let z = stats::normal_quantile(p).unwrap();
        let back = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
        prop_assert!((back - p).abs() <= 1e-13_f64.max(1e-12 * p));
    }

    #[test]
    fn increments_are_deterministic(seed in any::<u64>(), path in any::<u64>(), count in 1usize..50) {
        let key = StreamKey::new(seed, path);
        let a = gaussian_increments(key, count, 0.5).unwrap();
        prop_assert_eq!(a.len(), count);
        prop_assert_eq!(&a, &gaussian_increments(key, count, 0.5).unwrap());
        prop_assert!(a.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn derived_seeds_are_stable(seed in any::<u64>(), label in any::<u64>()) {
        prop_assert_eq!(derive_seed(seed, label), derive_seed(seed, label));
    }

    #[test]
    fn exit_record_invariants(seed in any::<u64>(), n in prop::sample::select(vec![1u64, 100, 10_000]), mid in 0usize..3, model_id in prop::sample::select(vec!["bm1", "bm2", "ou1", "rotated_bm2", "state_dependent2"])) {
        let model = catalog::model(model_id, None).unwrap();
        let method = [Method::Naive, Method::BridgeCorrected, Method::Substepped][mid];
        prop_assume!(method.check_dimension(model.dim()).is_ok());
        let ball = Ball::shrinking(&model, n).unwrap();
        let r = radius_for(n);
        let rec = simulate_until_exit(&model, &ball, 0.01 * r * r, StreamKey::new(seed, 0), 1e4 * r * r, method).unwrap();
        let grid = &rec.pre_exit_grid;
        let i = rec.crossing_interval;
        prop_assert_eq!(grid.len(), i + 2);
        prop_assert!(rec.exit_time > grid.time(i) && rec.exit_time <= grid.time(i + 1));
        let dist: f64 = rec.exit_state.iter().zip(model.initial()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((dist / r - 1.0).abs() < 1e-9);
        for k in 0..=i {
            let s = grid.state(k);
            let dk: f64 = s.iter().zip(model.initial()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(dk < r);
        }
    }

    #[test]
    fn scaled_values_start_at_zero_and_freeze(seed in any::<u64>(), t in 0.0..2.0f64) {
        let model = SdeModel::brownian(2).unwrap();
        let obs = Observable::smooth_mix().unwrap();
        let n = 100;
        let ball = Ball::shrinking(&model, n).unwrap();
        let rec = simulate_until_exit(&model, &ball, 1e-4, StreamKey::new(seed, 1), 100.0, Method::Substepped).unwrap();
        let tau = rec.exit_time;
        let s = scaled_stopped_values(n, &obs, &rec, &model, &[0.0, t, tau + t]).unwrap();
        prop_assert_eq!(&s.values[0], &vec![0.0, 0.0]);
        prop_assert_eq!(&s.values[2], &s.exit_value);
        if t >= tau {
            prop_assert_eq!(&s.values[1], &s.exit_value);
        }
    }

    #[test]
    fn remainder_decomposition_matches(seed in any::<u64>()) {
        let model = SdeModel::rotated_brownian(0.4).unwrap();
        let obs = Observable::smooth_mix().unwrap();
        let n = 100;
        let ball = Ball::shrinking(&model, n).unwrap();
        let rec = simulate_until_exit(&model, &ball, 1e-4, StreamKey::new(seed, 2), 100.0, Method::Substepped).unwrap();
        let jac = obs.jacobian(&[0.0, 0.0]).unwrap();
        let times: Vec<f64> = remainder_path(n, &obs, &rec, &model, 10.0).unwrap().iter().map(|(t, _)| *t).collect();
        let rem = remainder_path(n, &obs, &rec, &model, 10.0).unwrap();
        let fdd = scaled_stopped_values(n, &obs, &rec, &model, &times[..times.len() - 1]).unwrap();
        for (row, (t, x)) in fdd.values.iter().zip(&rem) {
            let z = exitlab_core::scaling::stopped_state(&rec, *t);
            let zs = [10.0 * z[0], 10.0 * z[1]];
            for k in 0..2 {
                let lin = jac[2 * k] * zs[0] + jac[2 * k + 1] * zs[1];
                prop_assert!((row[k] - lin - x[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn unit_time_scaling_is_identity(seed in any::<u64>()) {
        let model = SdeModel::brownian(2).unwrap();
        let path = simulate_on_grid(&model, 0.5, 0.01, StreamKey::new(seed, 0)).unwrap();
        prop_assert_eq!(time_scaled_path(1, &path, &[0.0, 0.0]).unwrap(), path);
    }

    #[test]
    fn ci_half_width_is_nonnegative(values in prop::collection::vec(-10.0..10.0f64, 2..50), c in 0.5..0.999f64) {
        let (m, hw) = stats::mean_with_ci(&values, c).unwrap();
        prop_assert!(hw >= 0.0);
        prop_assert!(m.is_finite());
    }
}
