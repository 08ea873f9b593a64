//! DIQKD key-rate bound and the daylight link model.
//!
//! The key rate per detected pair is
//! `R = 1 - h(E) - h((1 + sqrt((S/2)^2 - 1))/2)` with `h` the binary entropy
//! in bits. The link model maps the mean pair number `mu`, the one-arm
//! efficiency `eta` and the background click probability `p_bg` to the
//! observed CHSH value `S` and QBER `E` through the two-photon visibility
//!
//! ```text
//! V = mu eta^2 / (mu eta^2 + 2 mu eta p_bg + p_bg^2 + 2 mu^2 eta^2)
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::TSIRELSON;

/// `-x log2 x - (1 - x) log2 (1 - x)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&x) {
        return Err(Error::out_of_range("x", x, "[0, 1]"));
    }
    let x = x.clamp(0.0, 1.0);
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(x) + term(1.0 - x))
}

/// Key rate in bits/pair; may be negative. `s` below the local bound is
/// treated as `s = 2`, where the privacy term saturates at one bit.
pub fn key_rate(s: f64, e: f64) -> Result<f64> {
    if !s.is_finite() || s > TSIRELSON + 1e-9 {
        return Err(Error::out_of_range("S", s, "(-inf, 2 sqrt 2]"));
    }
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::out_of_range("E", e, "[0, 1]"));
    }
    let s = s.clamp(2.0, TSIRELSON);
    let leak = ((s / 2.0).powi(2) - 1.0).max(0.0).sqrt();
    Ok(1.0 - binary_entropy(e)? - binary_entropy((1.0 + leak) / 2.0)?)
}

/// Solar background collected by one receiver.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackgroundSpec {
    /// photons s^-1 m^-2 nm^-1 sr^-1
    pub flux_density: f64,
    pub bandwidth_nm: f64,
    pub aperture_m2: f64,
    pub fov_sr: f64,
    pub gate_s: f64,
    pub det_eff: f64,
}

impl Default for BackgroundSpec {
    /// Zero flux, 100 nm band, 10 cm x 10 cm aperture, 1e-10 sr field of
    /// view, 1 ns gate and 80 % detector efficiency.
    fn default() -> Self {
        Self {
            flux_density: 0.0,
            bandwidth_nm: 100.0,
            aperture_m2: 0.01,
            fov_sr: 1e-10,
            gate_s: 1e-9,
            det_eff: 0.8,
        }
    }
}

impl BackgroundSpec {
    pub fn with_flux(flux_density: f64) -> Self {
        Self {
            flux_density,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_nm", self.bandwidth_nm),
            ("aperture_m2", self.aperture_m2),
            ("fov_sr", self.fov_sr),
            ("gate_s", self.gate_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::out_of_range(name, v, "(0, inf)"));
            }
        }
        if !(self.flux_density >= 0.0) || !self.flux_density.is_finite() {
            return Err(Error::out_of_range("flux_density", self.flux_density, "[0, inf)"));
        }
        if !(0.0..=1.0).contains(&self.det_eff) {
            return Err(Error::out_of_range("det_eff", self.det_eff, "[0, 1]"));
        }
        Ok(())
    }
}

/// Background click probability per detector per gate, clamped to `[0, 1)`.
pub fn background_click_prob(spec: &BackgroundSpec) -> f64 {
    let p = spec.flux_density * spec.bandwidth_nm * spec.aperture_m2 * spec.fov_sr * spec.gate_s * spec.det_eff;
    if p.is_nan() {
        return 0.0;
    }
    p.clamp(0.0, 1.0 - f64::EPSILON)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkParams {
    pub mu: f64,
    pub eta: f64,
    pub p_bg: f64,
    /// Wavelength tag in nm, metadata only.
    pub label: Option<String>,
}

impl LinkParams {
    pub fn new(mu: f64, eta: f64, p_bg: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::out_of_range("mu", mu, "[0, inf)"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::out_of_range("eta", eta, "[0, 1]"));
        }
        if !(0.0..1.0).contains(&p_bg) {
            return Err(Error::out_of_range("p_bg", p_bg, "[0, 1)"));
        }
        Ok(Self {
            mu,
            eta,
            p_bg,
            label: None,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkModel {
    /// Statistics of detected coincidences: `S = 2 sqrt 2 V`, `E = (1 - V)/2`.
    #[default]
    FairSampling,
    /// No-click events binned to outcome +1:
    /// `S = q^2 2 sqrt 2 V + 2 (1 - q)^2`, `E = q^2 (1 - V)/2 + q (1 - q)/2`.
    NoClickBinning,
}

impl std::str::FromStr for LinkModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fair" | "fair-sampling" => Ok(LinkModel::FairSampling),
            "binning" | "no-click-binning" => Ok(LinkModel::NoClickBinning),
            other => Err(Error::InvalidInput(format!(
                "unknown link model `{other}` (expected fair or binning)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinkOutcome {
    pub s_obs: f64,
    pub e_obs: f64,
    pub visibility: f64,
    /// Per-arm click probability `1 - (1 - eta min(mu, 1)) (1 - p_bg)`.
    pub click_prob: f64,
}

pub fn visibility(p: &LinkParams) -> f64 {
    let true_pairs = p.mu * p.eta * p.eta;
    let noise = 2.0 * p.mu * p.eta * p.p_bg + p.p_bg * p.p_bg + 2.0 * p.mu * p.mu * p.eta * p.eta;
    let total = true_pairs + noise;
    if total > 0.0 {
        true_pairs / total
    } else {
        // p_bg = 0 and mu eta = 0: the limit along either axis
        1.0 / (1.0 + 2.0 * p.mu)
    }
}

pub fn link_model(p: &LinkParams, model: LinkModel) -> LinkOutcome {
    let v = visibility(p);
    let q = 1.0 - (1.0 - p.eta * p.mu.min(1.0)) * (1.0 - p.p_bg);
    let (s, e) = match model {
        LinkModel::FairSampling => (TSIRELSON * v, (1.0 - v) / 2.0),
        LinkModel::NoClickBinning => (
            q * q * TSIRELSON * v + 2.0 * (1.0 - q).powi(2),
            q * q * (1.0 - v) / 2.0 + q * (1.0 - q) / 2.0,
        ),
    };
    LinkOutcome {
        s_obs: s.clamp(2.0, TSIRELSON),
        e_obs: e.clamp(0.0, 0.5),
        visibility: v,
        click_prob: q,
    }
}

/// Key rates over a `(mu, eta)` grid; `[i][j]` indexes `(mu_axis[i], eta_axis[j])`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyRateGrid {
    pub mu_axis: Vec<f64>,
    pub eta_axis: Vec<f64>,
    pub p_bg: f64,
    pub model: LinkModel,
    /// Raw bits/pair, possibly negative.
    pub rates: Vec<Vec<f64>>,
    /// `rates * q^2`, floored at 0.
    pub rates_per_pulse: Vec<Vec<f64>>,
    pub s_values: Vec<Vec<f64>>,
    pub e_values: Vec<Vec<f64>>,
}

impl KeyRateGrid {
    pub fn positive_region(&self) -> Vec<Vec<bool>> {
        self.rates.iter().map(|row| row.iter().map(|&r| r > 0.0).collect()).collect()
    }

    pub fn floored_rates(&self) -> Vec<Vec<f64>> {
        self.rates.iter().map(|row| row.iter().map(|&r| r.max(0.0)).collect()).collect()
    }
}

fn check_axis(name: &'static str, axis: &[f64], lo: f64, hi: f64) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidInput(format!("{name} axis is empty")));
    }
    if let Some(&bad) = axis.iter().find(|&&x| !(lo..=hi).contains(&x)) {
        return Err(Error::InvalidInput(format!("{name} value {bad} outside [{lo}, {hi}]")));
    }
    if axis.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(format!("{name} axis is not strictly increasing")));
    }
    Ok(())
}

pub fn keyrate_grid(mu_axis: &[f64], eta_axis: &[f64], bg: &BackgroundSpec, model: LinkModel) -> Result<KeyRateGrid> {
    check_axis("mu", mu_axis, 0.0, f64::MAX)?;
    check_axis("eta", eta_axis, 0.0, 1.0)?;
    bg.validate()?;
    let p_bg = background_click_prob(bg);

    let shape = || vec![vec![0.0; eta_axis.len()]; mu_axis.len()];
    let (mut rates, mut per_pulse, mut s_values, mut e_values) = (shape(), shape(), shape(), shape());
    for (i, &mu) in mu_axis.iter().enumerate() {
        for (j, &eta) in eta_axis.iter().enumerate() {
            let out = link_model(&LinkParams::new(mu, eta, p_bg)?, model);
            let r = key_rate(out.s_obs, out.e_obs)?;
            rates[i][j] = r;
            per_pulse[i][j] = r.max(0.0) * out.click_prob * out.click_prob;
            s_values[i][j] = out.s_obs;
            e_values[i][j] = out.e_obs;
        }
    }
    Ok(KeyRateGrid {
        mu_axis: mu_axis.to_vec(),
        eta_axis: eta_axis.to_vec(),
        p_bg,
        model,
        rates,
        rates_per_pulse: per_pulse,
        s_values,
        e_values,
    })
}

/// `steps` points from `lo` to `hi`; a single step yields `[lo]`.
pub fn linear_axis(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        n => (0..n)
            .map(|k| if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Logarithmically spaced points with exact endpoints; requires `0 < lo`.
pub fn log_axis(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let mut axis: Vec<f64> = linear_axis(lo.ln(), hi.ln(), steps).into_iter().map(f64::exp).collect();
    if let Some(first) = axis.first_mut() {
        *first = lo;
    }
    if steps > 1 {
        axis[steps - 1] = hi;
    }
    axis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // -0.038 log2 0.038 - 0.962 log2 0.962
        assert!((binary_entropy(0.038).unwrap() - 0.233_045_892_564_450_5).abs() < 1e-12);
        assert!((binary_entropy(0.2).unwrap() - binary_entropy(0.8).unwrap()).abs() < 1e-15);
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn key_rate_values() {
        assert!((key_rate(2.526, 0.0380).unwrap() - 0.254).abs() < 1e-3);
        assert!((key_rate(2.526, 0.0689).unwrap() - 0.126).abs() < 1e-3);
        assert!((key_rate(TSIRELSON, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(key_rate(2.9, 0.0).is_err());
        for e in [0.0, 0.01, 0.1, 0.3] {
            let h = binary_entropy(e).unwrap();
            assert!((key_rate(2.0, e).unwrap() + h).abs() < 1e-12);
            assert_eq!(key_rate(1.5, e).unwrap(), key_rate(2.0, e).unwrap());
        }
    }

    #[test]
    fn background_probability() {
        assert_eq!(background_click_prob(&BackgroundSpec::default()), 0.0);
        let spec = BackgroundSpec::with_flux(1e17);
        let doubled = BackgroundSpec {
            gate_s: 2.0 * spec.gate_s,
            ..spec.clone()
        };
        assert!((background_click_prob(&doubled) / background_click_prob(&spec) - 2.0).abs() < 1e-12);
        let unit = BackgroundSpec {
            flux_density: 1e-6,
            bandwidth_nm: 1.0,
            aperture_m2: 1.0,
            fov_sr: 1.0,
            gate_s: 1.0,
            det_eff: 1.0,
        };
        assert!((background_click_prob(&unit) - 1e-6).abs() < 1e-20);
        assert!(background_click_prob(&BackgroundSpec::with_flux(1e40)) < 1.0);
    }

    #[test]
    fn binning_model_limits() {
        let tiny = LinkParams::new(1e-12, 1.0, 0.0).unwrap();
        let out = link_model(&tiny, LinkModel::NoClickBinning);
        assert!((out.visibility - 1.0).abs() < 1e-9);
        assert!((out.s_obs - 2.0).abs() < 1e-9 && out.e_obs < 1e-9);
        assert!(key_rate(out.s_obs, out.e_obs).unwrap().abs() < 1e-9);

        let p = LinkParams::new(1e-3, 1.0, 0.0).unwrap();
        let out = link_model(&p, LinkModel::NoClickBinning);
        let q = 1e-3;
        let v = 1.0 / (1.0 + 2e-3);
        assert!((out.click_prob - q).abs() < 1e-15);
        assert!((out.visibility - v).abs() < 1e-12);
        let raw_s = TSIRELSON * q * q * v + 2.0 * (1.0 - q).powi(2);
        assert_eq!(out.s_obs, raw_s.clamp(2.0, TSIRELSON));
        let e = q * q * (1.0 - v) / 2.0 + q * (1.0 - q) / 2.0;
        assert!((out.e_obs - e).abs() < 1e-15);

        let noisy = LinkParams::new(1e-3, 1.0, 0.5).unwrap();
        let out = link_model(&noisy, LinkModel::NoClickBinning);
        assert!(out.visibility < 1e-2);
        assert!(key_rate(out.s_obs, out.e_obs).unwrap() < 0.0);
    }

    #[test]
    fn fair_sampling_limits() {
        let p = LinkParams::new(1e-6, 1.0, 0.0).unwrap();
        let out = link_model(&p, LinkModel::FairSampling);
        assert!(key_rate(out.s_obs, out.e_obs).unwrap() > 0.99);
        let noisy = LinkParams::new(1e-3, 1.0, 0.5).unwrap();
        let out = link_model(&noisy, LinkModel::FairSampling);
        assert!(key_rate(out.s_obs, out.e_obs).unwrap() < 0.0);
    }

    #[test]
    fn grid_is_consistent_and_validated() {
        let bg = BackgroundSpec::with_flux(1e17);
        let g = keyrate_grid(&log_axis(1e-5, 0.5, 7), &linear_axis(0.05, 1.0, 5), &bg, LinkModel::FairSampling).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                let r = key_rate(g.s_values[i][j], g.e_values[i][j]).unwrap();
                assert!((g.rates[i][j] - r).abs() <= 1e-12);
            }
        }
        assert!(keyrate_grid(&[0.1, 0.1], &[0.5], &bg, LinkModel::FairSampling).is_err());
        assert!(keyrate_grid(&[0.1], &[1.5], &bg, LinkModel::FairSampling).is_err());
        let single = keyrate_grid(&[0.01], &[0.9], &bg, LinkModel::FairSampling).unwrap();
        assert_eq!(single.rates.len(), 1);
        assert_eq!(linear_axis(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn zero_background_rate_approaches_one_at_small_mu() {
        let mus = log_axis(1e-6, 0.1, 20);
        let g = keyrate_grid(&mus, &[1.0], &BackgroundSpec::default(), LinkModel::FairSampling).unwrap();
        let column: Vec<f64> = g.rates.iter().map(|r| r[0]).collect();
        assert!(column.windows(2).all(|w| w[0] >= w[1]));
        assert!(column[0] > 0.99);
    }
}
