mod common;

use rand::Rng;
use rand_distr::StandardNormal;

use paircert_core::car::{car_fit, car_predict, CarFitConfig, CarPoint, SourceParams};
use paircert_core::keyrate::log_axis;

const ETA: f64 = 0.0226;

fn source(mu: f64, dark_hz: f64) -> SourceParams {
    SourceParams {
        mu,
        eta1: ETA,
        eta2: ETA,
        dark_hz,
        rep_rate_hz: 80e6,
    }
}

fn curve(noise: f64, seed: u64) -> Vec<CarPoint> {
    let mut rng = common::rng(seed);
    log_axis(1e-4, 0.3, 12)
        .into_iter()
        .map(|mu| {
            let p = car_predict(&source(mu, 500.0)).unwrap();
            let mut jitter = || 1.0 + noise * rng.sample::<f64, _>(StandardNormal);
            CarPoint {
                singles_avg_hz: p.singles_avg_hz * jitter(),
                car: (p.car * jitter()).max(1.0),
                car_err: None,
            }
        })
        .collect()
}

#[test]
fn car_has_single_interior_maximum() {
    let cars: Vec<f64> = log_axis(1e-6, 1.0, 400)
        .into_iter()
        .map(|mu| car_predict(&source(mu, 500.0)).unwrap().car)
        .collect();
    let peak = cars
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert!(peak > 0 && peak < cars.len() - 1);
    assert!(cars[..=peak].windows(2).all(|w| w[1] > w[0]));
    assert!(cars[peak..].windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn dark_free_car_follows_inverse_mu() {
    for mu in [1e-5, 1e-4, 1e-3] {
        let car = car_predict(&source(mu, 0.0)).unwrap().car;
        assert!(((car - 1.0) * mu - 1.0).abs() < 2.0 * mu * ETA, "mu {mu}: car {car}");
    }
}

#[test]
fn noisy_fit_recovers_efficiency() {
    let config = CarFitConfig::default();
    for seed in 0..10 {
        let fit = car_fit(&curve(0.01, seed), &config).unwrap();
        let rel = fit.eta() / ETA - 1.0;
        assert!(rel.abs() < 0.05, "seed {seed}: eta {} ({rel:+.3})", fit.eta());
        assert!(fit.eta1_err > 0.0 && fit.eta1_err < 0.05 * ETA);
    }
}

#[test]
fn fit_uses_car_errors_as_weights() {
    let mut points = curve(0.0, 0);
    for p in &mut points {
        p.car_err = Some(0.01 * p.car);
    }
    let fit = car_fit(&points, &CarFitConfig::default()).unwrap();
    assert!((fit.eta() / ETA - 1.0).abs() < 1e-6);
    assert_eq!(fit.mu.len(), points.len());
}

#[test]
fn asymmetric_fit_reproduces_the_curve() {
    let config = CarFitConfig {
        symmetric: false,
        ..Default::default()
    };
    let fit = car_fit(&curve(0.0, 0), &config).unwrap();
    assert!((fit.eta() / ETA - 1.0).abs() < 1e-3, "{} {}", fit.eta1, fit.eta2);
    assert!(fit.residuals.iter().all(|r| r.abs() < 1e-6));
}
