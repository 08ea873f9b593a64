mod common;

use nalgebra::{Complex, Vector3, Vector4};
use proptest::prelude::*;

use paircert_core::car::{car_predict, SourceParams};
use paircert_core::keyrate::{
    key_rate, keyrate_grid, link_model, log_axis, BackgroundSpec, LinkModel, LinkParams,
};
use paircert_core::metrics::{
    bell_parameter, concurrence, concurrence_direct, entanglement_of_formation, horodecki_max_s,
    optimal_chsh_settings, selftest_fidelity_lb, weak_selftest_optimize, SELFTEST_OFFSET,
    SELFTEST_SLOPE, SELFTEST_THRESHOLD, TSIRELSON,
};
use paircert_core::quantum::{
    fidelity, is_physical, purity, DensityMatrix, Label, Observable, StateVector4, PHYSICAL_TOL,
};
use paircert_core::tomography::{born_probability, neg_log_likelihood, synth_dataset, MeasurementSetting, TParameters};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig::with_cases(n)
}

proptest! {
    #![proptest_config(cases(1000))]

    #[test]
    fn random_states_are_physical(seed in any::<u64>()) {
        let rho = common::random_density(&mut common::rng(seed));
        prop_assert!(is_physical(rho.matrix(), PHYSICAL_TOL).is_valid());
        let p = purity(&rho);
        prop_assert!((0.25 - 1e-12..=1.0 + 1e-12).contains(&p));
        prop_assert!((fidelity(&rho, &rho) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cholesky_parameterization_is_physical(t in prop::array::uniform16(-10.0f64..10.0)) {
        prop_assume!(t.iter().any(|x| x.abs() > 1e-3));
        let rho = TParameters(t).density_matrix().unwrap();
        prop_assert!(is_physical(rho.matrix(), PHYSICAL_TOL).is_valid());
    }

    #[test]
    fn chsh_optimum_matches_horodecki(seed in any::<u64>()) {
        let rho = common::random_density(&mut common::rng(seed));
        let s_max = horodecki_max_s(&rho);
        let s = bell_parameter(&rho, &optimal_chsh_settings(&rho).settings);
        prop_assert!(s <= s_max + 1e-9);
        prop_assert!(s >= s_max - 1e-6);
        prop_assert!(s_max <= TSIRELSON + 1e-9);
    }

    #[test]
    fn link_model_stays_in_range(
        mu in 0.0f64..5.0,
        eta in 0.0f64..=1.0,
        p_bg in 0.0f64..0.999,
        binning in any::<bool>(),
    ) {
        let model = if binning { LinkModel::NoClickBinning } else { LinkModel::FairSampling };
        let out = link_model(&LinkParams::new(mu, eta, p_bg).unwrap(), model);
        prop_assert!((2.0..=TSIRELSON).contains(&out.s_obs));
        prop_assert!((0.0..=0.5).contains(&out.e_obs));
        prop_assert!(key_rate(out.s_obs, out.e_obs).unwrap() <= 1.0);
    }
}

proptest! {
    #![proptest_config(cases(500))]

    #[test]
    fn concurrence_formulations_agree(seed in any::<u64>()) {
        let rho = common::random_density(&mut common::rng(seed));
        let oracle = common::spin_flip_concurrence(&rho);
        prop_assert!((concurrence(&rho) - oracle).abs() < 1e-9, "{} vs {}", concurrence(&rho), oracle);
        prop_assert!((concurrence_direct(&rho) - oracle).abs() < 1e-9);
    }

    #[test]
    fn pure_state_concurrence(theta in 0.0f64..std::f64::consts::FRAC_PI_2) {
        // cos t |HV> - sin t |VH>
        let amps = Vector4::new(
            Complex::new(0.0, 0.0),
            Complex::new(-theta.sin(), 0.0),
            Complex::new(theta.cos(), 0.0),
            Complex::new(0.0, 0.0),
        );
        let rho = StateVector4::new(amps).unwrap().density_matrix();
        prop_assert!((concurrence(&rho) - (2.0 * theta).sin()).abs() < 1e-9);
    }

    #[test]
    fn born_probabilities_sum_to_one(seed in any::<u64>(), x in 0usize..6, y in 0usize..6) {
        let rho = common::random_density(&mut common::rng(seed));
        let (x, y) = (Label::ALL[x], Label::ALL[y]);
        let total: f64 = [(x, y), (x, y.orthogonal()), (x.orthogonal(), y), (x.orthogonal(), y.orthogonal())]
            .iter()
            .map(|&(a, b)| born_probability(&rho, MeasurementSetting::new(a, b)))
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observables_have_unit_eigenvalues(v in prop::array::uniform3(-1.0f64..1.0)) {
        let v = Vector3::from(v);
        prop_assume!(v.norm() > 1e-3);
        let m = Observable::along(v).unwrap().matrix();
        let sq = m * m;
        prop_assert!((sq - nalgebra::Matrix2::identity()).norm() < 1e-12);
        prop_assert!(m.trace().norm() < 1e-12);
    }

    #[test]
    fn fidelity_is_symmetric(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a = common::random_density(&mut rng);
        let b = common::random_density(&mut rng);
        let (ab, ba) = (fidelity(&a, &b), fidelity(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn key_rate_is_monotone(s in 2.0f64..TSIRELSON, e in 0.0f64..0.1, ds in 1e-4f64..0.1, de in 1e-4f64..0.05) {
        let r = key_rate(s, e).unwrap();
        prop_assert!(key_rate((s + ds).min(TSIRELSON), e).unwrap() >= r);
        if s > 2.0 {
            prop_assert!(key_rate(s, e + de).unwrap() < r);
        }
        prop_assert!(key_rate(2.0, e).unwrap() <= 0.0);
    }

    #[test]
    fn eof_is_monotone(c1 in 0.0f64..1.0, dc in 1e-6f64..1.0) {
        let c2 = (c1 + dc).min(1.0);
        prop_assume!(c2 > c1 + 1e-7);
        prop_assert!(entanglement_of_formation(c1).unwrap() < entanglement_of_formation(c2).unwrap());
    }

    #[test]
    fn selftest_bound_is_linear(s in SELFTEST_THRESHOLD..TSIRELSON) {
        let f = selftest_fidelity_lb(s).unwrap();
        prop_assert!((f - (SELFTEST_SLOPE * s + SELFTEST_OFFSET)).abs() < 1e-12);
    }

    #[test]
    fn car_is_at_least_one(
        mu in 0.0f64..2.0,
        eta1 in 0.0f64..=1.0,
        eta2 in 0.0f64..=1.0,
        dark in 1.0f64..1e5,
    ) {
        let p = SourceParams { mu, eta1, eta2, dark_hz: dark, rep_rate_hz: 80e6 };
        prop_assert!(car_predict(&p).unwrap().car >= 1.0);
    }
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn separable_states_respect_local_bounds(seed in any::<u64>()) {
        let rho = common::random_separable(&mut common::rng(seed));
        prop_assert!(concurrence(&rho) < 1e-9);
        prop_assert!(horodecki_max_s(&rho) <= 2.0 + 1e-9);
        prop_assert!(weak_selftest_optimize(&rho, 1.0).unwrap().beta_max <= 4.0 + 1e-6);
    }

    #[test]
    fn statistic_is_non_negative(seed in any::<u64>(), t in prop::array::uniform16(-2.0f64..2.0), flux in 1.0f64..1e7) {
        prop_assume!(t.iter().any(|x| x.abs() > 1e-3));
        let rho = common::random_density(&mut common::rng(seed));
        let data = synth_dataset(&rho, 1e4, &MeasurementSetting::all(), seed, 0.0).unwrap();
        prop_assert!(neg_log_likelihood(&data, &TParameters(t), flux) >= 0.0);
    }

    #[test]
    fn grid_rates_are_monotone(flux in 0.0f64..5e17, ratio in 1.0f64..10.0, binning in any::<bool>()) {
        let model = if binning { LinkModel::NoClickBinning } else { LinkModel::FairSampling };
        let mu = log_axis(1e-4, 1.0, 12);
        let eta = log_axis(1e-3, 1.0, 12);
        let low = keyrate_grid(&mu, &eta, &BackgroundSpec::with_flux(flux), model).unwrap();
        let high = keyrate_grid(&mu, &eta, &BackgroundSpec::with_flux(flux * ratio), model).unwrap();
        // binning dilutes S to the clamp at low click rates, where the raw rate
        // -h(E) falls with eta; only the floored rate is monotone there
        let (lo, hi) = if binning {
            (low.floored_rates(), high.floored_rates())
        } else {
            (low.rates.clone(), high.rates.clone())
        };
        for i in 0..mu.len() {
            for j in 0..eta.len() {
                prop_assert!(lo[i][j] >= hi[i][j] - 1e-12);
                if j > 0 {
                    prop_assert!(lo[i][j] >= lo[i][j - 1] - 1e-12);
                }
                let direct = key_rate(low.s_values[i][j], low.e_values[i][j]).unwrap();
                prop_assert!((direct - low.rates[i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn werner_threshold() {
    // CHSH violation for p > 1/sqrt 2, entanglement for p > 1/3
    for k in 0..=100 {
        let p = k as f64 / 100.0;
        let rho = DensityMatrix::werner(p).unwrap();
        assert!((horodecki_max_s(&rho) - TSIRELSON * p).abs() < 1e-9);
        let c = ((3.0 * p - 1.0) / 2.0).max(0.0);
        assert!((concurrence(&rho) - c).abs() < 1e-9);
    }
}
