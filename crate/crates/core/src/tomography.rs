//! Maximum-likelihood reconstruction of a two-qubit density matrix from
//! coincidence counts over the 36 settings `{H,V,D,A,L,R} x {H,V,D,A,L,R}`.
//!
//! The state is parameterized as `rho(t) = T^dag T / Tr(T^dag T)` with `T`
//! lower triangular (4 real diagonal and 6 complex off-diagonal entries), so
//! every parameter vector maps to a physical state. The fit minimizes the
//! Gaussian approximation to the Poisson likelihood
//!
//! ```text
//! sum_v (N P_v - n_v)^2 / (2 N P_v + eps)
//! ```
//!
//! jointly over `t` and the flux `N`, with a simplex search started from the
//! linear-inversion estimate and from seeded random points.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{Cholesky, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{self, Basis};
use crate::quantum::{
    basis_ket, c, eigh, fidelity_pure, hermitian_part, paulis, purity, tensor2, DensityMatrix,
    Ket4, Label, Mat2, Mat4, StateVector4,
};
use crate::seed;
use crate::simplex::{self, SimplexOptions};

/// Regularizer in the denominator of the likelihood statistic.
pub const LIKELIHOOD_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MeasurementSetting {
    pub signal: Label,
    pub idler: Label,
}

impl MeasurementSetting {
    pub fn new(signal: Label, idler: Label) -> Self {
        Self { signal, idler }
    }

    /// All 36 settings, signal-major in `H, V, D, A, L, R` order.
    pub fn all() -> Vec<Self> {
        Label::ALL
            .iter()
            .flat_map(|&s| Label::ALL.iter().map(move |&i| Self::new(s, i)))
            .collect()
    }

    pub fn ket(&self) -> Ket4 {
        basis_ket(self.signal).kron(&basis_ket(self.idler))
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.signal, self.idler)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountRecord {
    pub setting: MeasurementSetting,
    pub count: u64,
    /// Per-setting integration time, when settings were not acquired equally.
    pub seconds: Option<f64>,
}

impl CountRecord {
    pub fn new(setting: MeasurementSetting, count: u64) -> Self {
        Self {
            setting,
            count,
            seconds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceDataset {
    records: Vec<CountRecord>,
    acquisition_seconds: f64,
    pub singles_1: Option<f64>,
    pub singles_2: Option<f64>,
}

impl CoincidenceDataset {
    /// `acquisition_seconds` is the integration time of a setting; when the
    /// records carry their own times it is replaced by their mean.
    pub fn new(records: Vec<CountRecord>, acquisition_seconds: f64) -> Result<Self> {
        let timed: Vec<f64> = records.iter().filter_map(|r| r.seconds).collect();
        if let Some(bad) = timed.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::out_of_range("seconds", *bad, "(0, inf)"));
        }
        let acquisition_seconds = if timed.is_empty() {
            acquisition_seconds
        } else {
            timed.iter().sum::<f64>() / timed.len() as f64
        };
        if !(acquisition_seconds > 0.0) || !acquisition_seconds.is_finite() {
            return Err(Error::out_of_range("acquisition_seconds", acquisition_seconds, "(0, inf)"));
        }
        Ok(Self {
            records,
            acquisition_seconds,
            singles_1: None,
            singles_2: None,
        })
    }

    pub fn records(&self) -> &[CountRecord] {
        &self.records
    }

    pub fn acquisition_seconds(&self) -> f64 {
        self.acquisition_seconds
    }

    pub fn count(&self, setting: MeasurementSetting) -> Option<u64> {
        self.records.iter().find(|r| r.setting == setting).map(|r| r.count)
    }

    pub fn total_counts(&self) -> u64 {
        self.records.iter().map(|r| r.count).sum()
    }

    /// Relative exposure of a record (1 unless per-setting times differ).
    fn exposure(&self, record: &CountRecord) -> f64 {
        record.seconds.map_or(1.0, |s| s / self.acquisition_seconds)
    }

    /// Checks that every one of the 36 settings appears exactly once.
    pub fn check_complete(&self) -> Result<()> {
        let mut seen: BTreeMap<MeasurementSetting, usize> = BTreeMap::new();
        for r in &self.records {
            *seen.entry(r.setting).or_default() += 1;
        }
        let missing: Vec<_> = MeasurementSetting::all()
            .into_iter()
            .filter(|s| !seen.contains_key(s))
            .collect();
        let duplicated: Vec<_> = seen.iter().filter(|(_, n)| **n > 1).map(|(s, _)| *s).collect();
        if missing.is_empty() && duplicated.is_empty() {
            Ok(())
        } else {
            Err(Error::IncompleteDataset { missing, duplicated })
        }
    }

    /// Same settings and metadata with new counts.
    fn with_counts(&self, counts: impl IntoIterator<Item = u64>) -> Self {
        let records = self
            .records
            .iter()
            .zip(counts)
            .map(|(r, count)| CountRecord { count, ..*r })
            .collect();
        Self {
            records,
            ..self.clone()
        }
    }
}

/// Real parameters of the lower-triangular factor `T`.
///
/// Layout: `t[0..4]` is the diagonal; `t[4 + 2k]`, `t[5 + 2k]` are the real
/// and imaginary parts of the off-diagonal entries in the order
/// `(1,0), (2,0), (2,1), (3,0), (3,1), (3,2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TParameters(pub [f64; 16]);

const OFF_DIAGONAL: [(usize, usize); 6] = [(1, 0), (2, 0), (2, 1), (3, 0), (3, 1), (3, 2)];

impl TParameters {
    pub fn from_slice(t: &[f64]) -> Self {
        let mut out = [0.0; 16];
        out.copy_from_slice(&t[..16]);
        Self(out)
    }

    pub fn lower_triangular(&self) -> Mat4 {
        lower_triangular(&self.0)
    }

    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        let norm: f64 = self.0.iter().map(|x| x * x).sum();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidInput("T parameters must be finite and not all zero".into()));
        }
        let t = self.lower_triangular();
        let rho = t.adjoint() * t / c(norm, 0.0);
        Ok(DensityMatrix::from_trusted(hermitian_part(&rho)))
    }

    /// Parameters whose `rho(t)` reproduces `rho`; rank-deficient states are
    /// mixed with the smallest amount of `I/4` that admits a factorization.
    pub fn from_density_matrix(rho: &DensityMatrix) -> Self {
        let exchange = Mat4::from_fn(|r, col| if r + col == 3 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let mut eps = 0.0;
        loop {
            let m = rho.matrix() * c(1.0 - eps, 0.0) + Mat4::identity() * c(eps / 4.0, 0.0);
            let flipped = hermitian_part(&(exchange * m * exchange));
            if let Some(chol) = Cholesky::new(flipped) {
                // T^dag = J L J is upper triangular with T^dag T = rho.
                let t = (exchange * chol.l() * exchange).adjoint();
                let mut out = [0.0; 16];
                for i in 0..4 {
                    out[i] = t[(i, i)].re;
                }
                for (k, &(r, col)) in OFF_DIAGONAL.iter().enumerate() {
                    out[4 + 2 * k] = t[(r, col)].re;
                    out[5 + 2 * k] = t[(r, col)].im;
                }
                return Self(out);
            }
            eps = if eps == 0.0 { 1e-12 } else { eps * 10.0 };
        }
    }
}

fn lower_triangular(t: &[f64]) -> Mat4 {
    let mut m = Mat4::zeros();
    for i in 0..4 {
        m[(i, i)] = c(t[i], 0.0);
    }
    for (k, &(r, col)) in OFF_DIAGONAL.iter().enumerate() {
        m[(r, col)] = c(t[4 + 2 * k], t[5 + 2 * k]);
    }
    m
}

/// `Tr(rho |X,Y><X,Y|)`
pub fn born_probability(rho: &DensityMatrix, setting: MeasurementSetting) -> f64 {
    rho.quadratic_form(&setting.ket()).clamp(0.0, 1.0)
}

fn check_synth_args(n_flux: f64, accidental_prob: f64) -> Result<()> {
    if !(n_flux >= 0.0) || !n_flux.is_finite() {
        return Err(Error::out_of_range("n_flux", n_flux, "[0, inf)"));
    }
    if !(0.0..1.0).contains(&accidental_prob) {
        return Err(Error::out_of_range("accidental_prob", accidental_prob, "[0, 1)"));
    }
    Ok(())
}

/// `n_flux (P (1 - a) + a/4)`
pub fn expected_count(rho: &DensityMatrix, setting: MeasurementSetting, n_flux: f64, accidental_prob: f64) -> f64 {
    n_flux * (born_probability(rho, setting) * (1.0 - accidental_prob) + accidental_prob / 4.0)
}

/// Poisson-sampled counts for `settings`, deterministic in `seed`.
pub fn synth_dataset(
    rho: &DensityMatrix,
    n_flux: f64,
    settings: &[MeasurementSetting],
    seed: u64,
    accidental_prob: f64,
) -> Result<CoincidenceDataset> {
    check_synth_args(n_flux, accidental_prob)?;
    let mut rng = seed::stream(seed, "tomography.synth", 0);
    let records = settings
        .iter()
        .map(|&s| {
            let mean = expected_count(rho, s, n_flux, accidental_prob);
            CountRecord::new(s, sample_poisson(&mut rng, mean))
        })
        .collect();
    CoincidenceDataset::new(records, 1.0)
}

/// Counts equal to the expected values rounded to the nearest integer.
pub fn noiseless_dataset(
    rho: &DensityMatrix,
    n_flux: f64,
    settings: &[MeasurementSetting],
    accidental_prob: f64,
) -> Result<CoincidenceDataset> {
    check_synth_args(n_flux, accidental_prob)?;
    let records = settings
        .iter()
        .map(|&s| CountRecord::new(s, expected_count(rho, s, n_flux, accidental_prob).round() as u64))
        .collect();
    CoincidenceDataset::new(records, 1.0)
}

fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as u64,
        // beyond the sampler's range the normal approximation is exact to f64 precision
        Err(_) => {
            let z: f64 = rng.sample(StandardNormal);
            (mean + z * mean.sqrt()).round().max(0.0) as u64
        }
    }
}

/// Precomputed projector kets, counts and exposures for fast evaluation.
struct Likelihood {
    kets: Vec<Ket4>,
    counts: Vec<f64>,
    exposure: Vec<f64>,
}

impl Likelihood {
    fn new(dataset: &CoincidenceDataset) -> Self {
        let recs = dataset.records();
        Self {
            kets: recs.iter().map(|r| r.setting.ket()).collect(),
            counts: recs.iter().map(|r| r.count as f64).collect(),
            exposure: recs.iter().map(|r| dataset.exposure(r)).collect(),
        }
    }

    fn value(&self, t: &[f64], flux: f64) -> f64 {
        let norm: f64 = t[..16].iter().map(|x| x * x).sum();
        if !(norm > 0.0) || !(flux > 0.0) || !flux.is_finite() {
            return f64::INFINITY;
        }
        let tm = lower_triangular(t);
        let scale = flux / norm;
        self.kets
            .iter()
            .zip(&self.counts)
            .zip(&self.exposure)
            .map(|((ket, &n), &w)| {
                let expected = scale * w * (tm * ket).norm_squared();
                (expected - n).powi(2) / (2.0 * expected + LIKELIHOOD_EPS)
            })
            .sum()
    }
}

/// The fit statistic of `rho(t)` against `dataset` at total flux `flux`.
pub fn neg_log_likelihood(dataset: &CoincidenceDataset, t: &TParameters, flux: f64) -> f64 {
    Likelihood::new(dataset).value(&t.0, flux)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MleOptions {
    /// Simplex iterations allowed per start.
    pub max_iter: usize,
    pub tol: f64,
    /// Random starts in addition to the linear-inversion warm start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            tol: 1e-10,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub rho: DensityMatrix,
    pub neg_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub estimated_total_flux: f64,
}

/// Index of the Pauli operator a label is an eigenstate of, and its eigenvalue.
fn pauli_eigen(label: Label) -> (usize, f64) {
    let k = match label {
        Label::D | Label::A => 0,
        Label::L | Label::R => 1,
        Label::H | Label::V => 2,
    };
    let col = basis_ket(label).column();
    let sign = (col.adjoint() * paulis()[k] * col)[(0, 0)].re;
    (k, sign.round())
}

/// Direct Stokes-parameter estimate, clipped to the nearest PSD unit-trace matrix.
pub fn linear_inversion(dataset: &CoincidenceDataset) -> Result<DensityMatrix> {
    dataset.check_complete()?;
    let mut rate: HashMap<MeasurementSetting, f64> = HashMap::new();
    for r in dataset.records() {
        rate.insert(r.setting, r.count as f64 / dataset.exposure(r));
    }

    let pairs = [[Label::D, Label::A], [Label::R, Label::L], [Label::V, Label::H]];
    let mut corr = [[0.0; 3]; 3];
    let mut signal = [(0.0, 0usize); 3];
    let mut idler = [(0.0, 0usize); 3];
    for (ka, la) in pairs.iter().enumerate() {
        for (kb, lb) in pairs.iter().enumerate() {
            let outcomes: Vec<(f64, f64, f64)> = la
                .iter()
                .flat_map(|&x| lb.iter().map(move |&y| (x, y)))
                .map(|(x, y)| {
                    let n = rate[&MeasurementSetting::new(x, y)];
                    (pauli_eigen(x).1, pauli_eigen(y).1, n)
                })
                .collect();
            let total: f64 = outcomes.iter().map(|o| o.2).sum();
            if total <= 0.0 {
                continue;
            }
            corr[ka][kb] = outcomes.iter().map(|(sa, sb, n)| sa * sb * n).sum::<f64>() / total;
            signal[ka].0 += outcomes.iter().map(|(sa, _, n)| sa * n).sum::<f64>() / total;
            signal[ka].1 += 1;
            idler[kb].0 += outcomes.iter().map(|(_, sb, n)| sb * n).sum::<f64>() / total;
            idler[kb].1 += 1;
        }
    }

    let s = paulis();
    let id = Mat2::identity();
    let mut m = Mat4::identity();
    for k in 0..3 {
        if signal[k].1 > 0 {
            m += tensor2(&s[k], &id) * c(signal[k].0 / signal[k].1 as f64, 0.0);
        }
        if idler[k].1 > 0 {
            m += tensor2(&id, &s[k]) * c(idler[k].0 / idler[k].1 as f64, 0.0);
        }
        for l in 0..3 {
            m += tensor2(&s[k], &s[l]) * c(corr[k][l], 0.0);
        }
    }
    Ok(project_psd(&(m * c(0.25, 0.0))))
}

/// Clips negative eigenvalues of a Hermitian matrix and renormalizes the trace.
pub fn project_psd(m: &Mat4) -> DensityMatrix {
    let (vals, vecs) = eigh(&hermitian_part(m));
    let clipped = vals.map(|x| x.max(0.0));
    let total = clipped.sum();
    if !(total > 0.0) {
        return DensityMatrix::maximally_mixed();
    }
    let d = Mat4::from_diagonal(&clipped.map(|x| c(x / total, 0.0)));
    DensityMatrix::from_trusted(hermitian_part(&(vecs * d * vecs.adjoint())))
}

/// Maximum-likelihood state estimate from a complete 36-setting dataset.
pub fn mle_reconstruct(dataset: &CoincidenceDataset, opts: &MleOptions) -> Result<ReconstructionResult> {
    dataset.check_complete()?;
    if dataset.total_counts() == 0 {
        return Err(Error::EmptyCounts);
    }
    let likelihood = Likelihood::new(dataset);

    let hv = [Label::H, Label::V];
    let zz: f64 = dataset
        .records()
        .iter()
        .filter(|r| hv.contains(&r.setting.signal) && hv.contains(&r.setting.idler))
        .map(|r| r.count as f64 / dataset.exposure(r))
        .sum();
    let flux0 = if zz > 0.0 { zz } else { dataset.total_counts() as f64 / 9.0 };

    let mut starts = vec![TParameters::from_density_matrix(&linear_inversion(dataset)?).0];
    for r in 0..opts.restarts {
        let mut rng = seed::stream(opts.seed, "tomography.restart", r as u64);
        let mut t = [0.0; 16];
        t.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
        starts.push(t);
    }

    let simplex_opts = SimplexOptions {
        max_iter: opts.max_iter,
        ftol: opts.tol,
        ..Default::default()
    };
    let objective = |x: &[f64]| likelihood.value(&x[..16], x[16].exp());

    let mut best: Option<simplex::SimplexResult> = None;
    for t in starts {
        let mut x0 = t.to_vec();
        x0.push(flux0.ln());
        let run = simplex::minimize(objective, &x0, &simplex_opts);
        if best.as_ref().is_none_or(|b| run.fval < b.fval) {
            best = Some(run);
        }
    }
    let best = best.expect("at least the warm start runs");
    Ok(ReconstructionResult {
        rho: TParameters::from_slice(&best.x).density_matrix()?,
        neg_log_likelihood: best.fval,
        iterations: best.iterations,
        converged: best.converged,
        estimated_total_flux: best.x[16].exp(),
    })
}

/// Scalar figure of merit evaluated on bootstrap reconstructions.
#[derive(Clone, Debug, PartialEq)]
pub enum Metric {
    Purity,
    Fidelity(StateVector4),
    /// Horodecki-optimal CHSH parameter.
    Chsh,
    Concurrence,
    EntanglementOfFormation,
    QberZ,
    QberX,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Purity => "purity",
            Metric::Fidelity(_) => "fidelity",
            Metric::Chsh => "s_chsh",
            Metric::Concurrence => "concurrence",
            Metric::EntanglementOfFormation => "eof",
            Metric::QberZ => "qber_z",
            Metric::QberX => "qber_x",
        }
    }

    pub fn evaluate(&self, rho: &DensityMatrix) -> f64 {
        match self {
            Metric::Purity => purity(rho),
            Metric::Fidelity(target) => fidelity_pure(rho, target),
            Metric::Chsh => metrics::horodecki_max_s(rho),
            Metric::Concurrence => metrics::concurrence(rho),
            Metric::EntanglementOfFormation => {
                metrics::entanglement_of_formation(metrics::concurrence(rho)).unwrap_or(f64::NAN)
            }
            Metric::QberZ => metrics::qber(rho, Basis::Z),
            Metric::QberX => metrics::qber(rho, Basis::X),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McOptions {
    pub n_samples: usize,
    pub seed: u64,
    pub reconstruction: MleOptions,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            n_samples: 200,
            seed: 0,
            reconstruction: MleOptions {
                restarts: 1,
                ..Default::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
    pub requested_samples: usize,
    pub effective_samples: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Parametric Poisson bootstrap of one metric.
pub fn mc_uncertainty(dataset: &CoincidenceDataset, metric: &Metric, opts: &McOptions) -> Result<McEstimate> {
    Ok(mc_uncertainty_many(dataset, std::slice::from_ref(metric), opts)?.remove(0))
}

/// Parametric Poisson bootstrap sharing each resampled reconstruction across
/// several metrics.
///
/// Sample `i` resamples every count as `Poisson(observed)` from the stream
/// `(seed, "tomography.bootstrap", i)`, so the first `k` samples do not depend
/// on `n_samples`. Failed reconstructions are skipped and show up as
/// `effective_samples < requested_samples`.
pub fn mc_uncertainty_many(
    dataset: &CoincidenceDataset,
    metrics: &[Metric],
    opts: &McOptions,
) -> Result<Vec<McEstimate>> {
    if opts.n_samples < 50 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 50 samples, got {}",
            opts.n_samples
        )));
    }
    dataset.check_complete()?;

    let draws: Vec<Option<Vec<f64>>> = (0..opts.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(opts.seed, "tomography.bootstrap", i as u64);
            let counts: Vec<u64> = dataset
                .records()
                .iter()
                .map(|r| sample_poisson(&mut rng, r.count as f64))
                .collect();
            let resampled = dataset.with_counts(counts);
            let mle = MleOptions {
                seed: seed::derive_seed(opts.seed, "tomography.bootstrap.restart", i as u64),
                ..opts.reconstruction.clone()
            };
            let rho = mle_reconstruct(&resampled, &mle).ok()?.rho;
            Some(metrics.iter().map(|m| m.evaluate(&rho)).collect())
        })
        .collect();

    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    if ok.len() < 2 {
        return Err(Error::NonConvergence(format!(
            "only {} of {} bootstrap reconstructions succeeded",
            ok.len(),
            opts.n_samples
        )));
    }
    Ok(metrics
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let samples: Vec<f64> = ok.iter().map(|v| v[k]).collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            McEstimate {
                metric: m.name(),
                mean,
                std: var.sqrt(),
                requested_samples: opts.n_samples,
                effective_samples: samples.len(),
                samples,
            }
        })
        .collect())
}

/// Trace distance `||rho - sigma||_1 / 2`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let diff = rho.matrix() - sigma.matrix();
    let vals: Vector4<f64> = eigh(&hermitian_part(&diff)).0;
    vals.iter().map(|x| x.abs()).sum::<f64>() / 2.0
}
