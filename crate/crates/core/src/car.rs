//! Coincidence-to-accidentals ratio of a pulsed pair source and the fit of
//! lumped arm efficiencies to CAR-versus-singles data.
//!
//! Per pulse, detector `i` clicks with `p_i = 1 - exp(-mu eta_i) + dark/rep`,
//! accidentals occur with `p_1 p_2` and true coincidences with
//! `mu eta_1 eta_2`, so `CAR = 1 + mu eta_1 eta_2 / (p_1 p_2)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Above this mean pair number the linear true-coincidence term is inaccurate.
pub const HIGH_MU_WARNING: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SourceParams {
    pub mu: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub dark_hz: f64,
    pub rep_rate_hz: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CarPrediction {
    pub car: f64,
    pub singles_avg_hz: f64,
    pub high_mu_warning: bool,
}

fn check_params(p: &SourceParams) -> Result<()> {
    let nonneg = [("mu", p.mu), ("dark_hz", p.dark_hz)];
    for (name, v) in nonneg {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::out_of_range(name, v, "[0, inf)"));
        }
    }
    for (name, v) in [("eta1", p.eta1), ("eta2", p.eta2)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::out_of_range(name, v, "[0, 1]"));
        }
    }
    if !(p.rep_rate_hz > 0.0) || !p.rep_rate_hz.is_finite() {
        return Err(Error::out_of_range("rep_rate_hz", p.rep_rate_hz, "(0, inf)"));
    }
    Ok(())
}

fn click_probs(mu: f64, eta1: f64, eta2: f64, dark_per_pulse: f64) -> (f64, f64) {
    (
        -(-mu * eta1).exp_m1() + dark_per_pulse,
        -(-mu * eta2).exp_m1() + dark_per_pulse,
    )
}

pub fn car_predict(p: &SourceParams) -> Result<CarPrediction> {
    check_params(p)?;
    let (p1, p2) = click_probs(p.mu, p.eta1, p.eta2, p.dark_hz / p.rep_rate_hz);
    let accidental = p1 * p2;
    if accidental <= 0.0 {
        return Err(Error::InfiniteCar);
    }
    let true_pairs = p.mu * p.eta1 * p.eta2;
    Ok(CarPrediction {
        car: (true_pairs + accidental) / accidental,
        singles_avg_hz: p.rep_rate_hz * (p1 + p2) / 2.0,
        high_mu_warning: p.mu > HIGH_MU_WARNING,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CarPoint {
    pub singles_avg_hz: f64,
    pub car: f64,
    pub car_err: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarFitConfig {
    pub dark_hz: f64,
    pub rep_rate_hz: f64,
    /// Fit a single efficiency `eta1 = eta2`.
    pub symmetric: bool,
    /// Relative uncertainty assigned to the measured singles rates.
    pub singles_rel_err: f64,
}

impl Default for CarFitConfig {
    fn default() -> Self {
        Self {
            dark_hz: 500.0,
            rep_rate_hz: 80e6,
            symmetric: true,
            singles_rel_err: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CarFit {
    pub eta1: f64,
    pub eta1_err: f64,
    pub eta2: f64,
    pub eta2_err: f64,
    pub mu: Vec<f64>,
    /// Predicted minus measured CAR for each point.
    pub residuals: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl CarFit {
    pub fn eta(&self) -> f64 {
        (self.eta1 * self.eta2).sqrt()
    }
}

struct Problem<'a> {
    points: &'a [CarPoint],
    config: &'a CarFitConfig,
    n_eta: usize,
}

impl Problem<'_> {
    fn etas(&self, theta: &[f64]) -> (f64, f64) {
        let e1 = theta[0].exp();
        let e2 = if self.n_eta == 2 { theta[1].exp() } else { e1 };
        (e1, e2)
    }

    fn predict(&self, theta: &[f64], i: usize) -> (f64, f64) {
        let (e1, e2) = self.etas(theta);
        let mu = theta[self.n_eta + i].exp();
        let (p1, p2) = click_probs(mu, e1, e2, self.config.dark_hz / self.config.rep_rate_hz);
        let car = 1.0 + mu * e1 * e2 / (p1 * p2);
        (car, self.config.rep_rate_hz * (p1 + p2) / 2.0)
    }

    fn residuals(&self, theta: &[f64]) -> DVector<f64> {
        let n = self.points.len();
        let mut r = DVector::zeros(2 * n);
        for (i, pt) in self.points.iter().enumerate() {
            let (car, singles) = self.predict(theta, i);
            r[i] = (car - pt.car) / pt.car_err.unwrap_or(1.0);
            r[n + i] = (singles - pt.singles_avg_hz) / (self.config.singles_rel_err * pt.singles_avg_hz);
        }
        r
    }

    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let m = 2 * self.points.len();
        let mut jac = DMatrix::zeros(m, theta.len());
        let mut t = theta.to_vec();
        for k in 0..theta.len() {
            let h = 1e-6;
            t[k] = theta[k] + h;
            let up = self.residuals(&t);
            t[k] = theta[k] - h;
            let down = self.residuals(&t);
            t[k] = theta[k];
            jac.set_column(k, &((up - down) / (2.0 * h)));
        }
        jac
    }
}

fn check_points(points: &[CarPoint], config: &CarFitConfig) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "CAR fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for pt in points {
        if !(pt.car >= 1.0) || !pt.car.is_finite() {
            return Err(Error::out_of_range("car", pt.car, "[1, inf)"));
        }
        if !(pt.singles_avg_hz > 0.0) || !pt.singles_avg_hz.is_finite() {
            return Err(Error::out_of_range("singles_hz", pt.singles_avg_hz, "(0, inf)"));
        }
        if let Some(e) = pt.car_err {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::out_of_range("car_err", e, "(0, inf)"));
            }
        }
    }
    if !(config.dark_hz >= 0.0) || !(config.rep_rate_hz > 0.0) || !(config.singles_rel_err > 0.0) {
        return Err(Error::InvalidInput("dark_hz, rep_rate_hz and singles_rel_err must be valid".into()));
    }
    let lo = points.iter().map(|p| p.singles_avg_hz).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.singles_avg_hz).fold(0.0, f64::max);
    if hi - lo <= 1e-12 * hi {
        return Err(Error::DegenerateData("all points share the same singles rate".into()));
    }
    Ok(())
}

/// Per-point `mu eta` implied by the singles and a median efficiency estimate.
fn initial_guess(points: &[CarPoint], config: &CarFitConfig) -> (f64, Vec<f64>) {
    let dark = config.dark_hz / config.rep_rate_hz;
    let mu_eta: Vec<f64> = points
        .iter()
        .map(|pt| {
            let excess = (pt.singles_avg_hz / config.rep_rate_hz - dark).clamp(1e-15, 1.0 - 1e-12);
            -(-excess).ln_1p()
        })
        .collect();
    let mut etas: Vec<f64> = points
        .iter()
        .zip(&mu_eta)
        .filter(|(pt, _)| pt.car > 1.0)
        .map(|(pt, &x)| (pt.car - 1.0) * (pt.singles_avg_hz / config.rep_rate_hz).powi(2) / x)
        .filter(|e| e.is_finite() && *e > 0.0)
        .collect();
    etas.sort_by(f64::total_cmp);
    let eta = etas.get(etas.len() / 2).copied().unwrap_or(0.01).clamp(1e-6, 1.0);
    (eta, mu_eta.iter().map(|x| x / eta).collect())
}

/// Weighted Levenberg-Marquardt fit over `(eta, mu_1..mu_n)` in log space.
///
/// Residuals are the CAR deviations weighted by `1/car_err` (unit weights when
/// absent) and the singles deviations weighted by `1/(singles_rel_err s)`.
/// Efficiency errors come from the Gauss-Newton covariance, scaled by the
/// reduced chi-square when no CAR errors are given.
pub fn car_fit(points: &[CarPoint], config: &CarFitConfig) -> Result<CarFit> {
    check_points(points, config)?;
    let n_eta = if config.symmetric { 1 } else { 2 };
    let problem = Problem { points, config, n_eta };

    let (eta0, mu0) = initial_guess(points, config);
    let mut theta: Vec<f64> = vec![eta0.ln(); n_eta];
    theta.extend(mu0.iter().map(|m| m.max(1e-300).ln()));

    let mut r = problem.residuals(&theta);
    let mut chi2 = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 500 {
        iterations += 1;
        let jac = problem.jacobian(&theta);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut stepped = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for k in 0..theta.len() {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-30);
            }
            let Some(delta) = damped.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
            let r_trial = problem.residuals(&trial);
            let chi2_trial = r_trial.norm_squared();
            if chi2_trial.is_finite() && chi2_trial <= chi2 {
                let small_step = delta.amax() < 1e-12;
                let small_gain = chi2 - chi2_trial <= 1e-14 * chi2.max(1e-300);
                theta = trial;
                r = r_trial;
                chi2 = chi2_trial;
                lambda = (lambda / 10.0).max(1e-12);
                stepped = true;
                converged = small_step || small_gain;
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // no downhill step at any damping: at a minimum within precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!("CAR fit did not converge in {iterations} iterations")));
    }

    let jac = problem.jacobian(&theta);
    let cov = (jac.transpose() * &jac)
        .try_inverse()
        .ok_or_else(|| Error::DegenerateData("singular Gauss-Newton matrix".into()))?;
    let dof = (2 * points.len()).saturating_sub(theta.len()).max(1) as f64;
    let scale = if points.iter().all(|p| p.car_err.is_some()) { 1.0 } else { chi2 / dof };
    let (eta1, eta2) = problem.etas(&theta);
    let err = |k: usize| (cov[(k, k)] * scale).max(0.0).sqrt();
    let eta1_err = eta1 * err(0);
    let eta2_err = if n_eta == 2 { eta2 * err(1) } else { eta1_err };
    let residuals = (0..points.len()).map(|i| problem.predict(&theta, i).0 - points[i].car).collect();

    Ok(CarFit {
        eta1,
        eta1_err,
        eta2,
        eta2_err,
        mu: theta[n_eta..].iter().map(|x| x.exp()).collect(),
        residuals,
        chi2,
        iterations,
    })
}
