//! Certification scalars computed from a two-qubit density matrix.

use nalgebra::{Matrix3, Schur, SymmetricEigen, Vector3, SVD};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::keyrate::{binary_entropy, key_rate};
use crate::quantum::{
    c, eigh, fidelity_pure, paulis, projector, purity, spin_flip, tensor2, DensityMatrix, Label,
    Mat4, Observable, StateVector4,
};
use crate::seed;
use crate::tomography::McEstimate;

pub const TSIRELSON: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Slope of the linear singlet-fidelity bound, `(4 + 5 sqrt 2)/16`.
pub const SELFTEST_SLOPE: f64 = (4.0 + 5.0 * std::f64::consts::SQRT_2) / 16.0;
/// Offset of the linear singlet-fidelity bound, `-(1 + 2 sqrt 2)/4`.
pub const SELFTEST_OFFSET: f64 = -(1.0 + 2.0 * std::f64::consts::SQRT_2) / 4.0;
/// CHSH value `(16 + 14 sqrt 2)/17` above which the fidelity bound exceeds 1/2.
pub const SELFTEST_THRESHOLD: f64 = (16.0 + 14.0 * std::f64::consts::SQRT_2) / 17.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChshSettings {
    pub a1: Observable,
    pub a2: Observable,
    pub b1: Observable,
    pub b2: Observable,
}

impl ChshSettings {
    /// `a1 = z`, `a2 = x`, `b1 = (z + x)/sqrt 2`, `b2 = (z - x)/sqrt 2`.
    pub fn canonical() -> Self {
        Self {
            a1: Observable::z(),
            a2: Observable::x(),
            b1: Observable::along(Vector3::new(1.0, 0.0, 1.0)).unwrap(),
            b2: Observable::along(Vector3::new(-1.0, 0.0, 1.0)).unwrap(),
        }
    }
}

/// `M_pq = Tr[rho (sigma_p (x) sigma_q)]`
pub fn correlation_matrix(rho: &DensityMatrix) -> Matrix3<f64> {
    let s = paulis();
    Matrix3::from_fn(|p, q| rho.expectation(&tensor2(&s[p], &s[q])))
}

/// `A1 B1 + A1 B2 + A2 B1 - A2 B2`
pub fn chsh_operator(settings: &ChshSettings) -> Mat4 {
    let a1 = settings.a1.matrix();
    let a2 = settings.a2.matrix();
    let b1 = settings.b1.matrix();
    let b2 = settings.b2.matrix();
    tensor2(&a1, &b1) + tensor2(&a1, &b2) + tensor2(&a2, &b1) - tensor2(&a2, &b2)
}

pub fn bell_parameter(rho: &DensityMatrix, settings: &ChshSettings) -> f64 {
    rho.expectation(&chsh_operator(settings))
}

/// Eigenvalues (descending) and eigenvectors of `M^T M`.
fn correlation_spectrum(m: &Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let eig = SymmetricEigen::new(m.transpose() * m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned());
    (vals, vecs)
}

/// Maximal CHSH value `2 sqrt(mu_1 + mu_2)` over all qubit observables, with
/// `mu_1 >= mu_2` the two largest eigenvalues of `M^T M`.
pub fn horodecki_max_s(rho: &DensityMatrix) -> f64 {
    let (mu, _) = correlation_spectrum(&correlation_matrix(rho));
    2.0 * (mu[0] + mu[1]).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalChsh {
    pub settings: ChshSettings,
    /// The maximizing settings are not unique (tied or vanishing `mu`).
    pub degenerate: bool,
}

/// Settings attaining the Horodecki maximum, built from the top two
/// eigenvectors `c1, c2` of `M^T M`: `b1,2 = cos t c1 +/- sin t c2` with
/// `tan t = sqrt(mu_2/mu_1)`, and `a1`, `a2` along `M c1`, `M c2`.
pub fn optimal_chsh_settings(rho: &DensityMatrix) -> OptimalChsh {
    let m = correlation_matrix(rho);
    let (mu, vecs) = correlation_spectrum(&m);
    let (c1, c2) = (vecs[0], vecs[1]);
    let total = mu[0] + mu[1];
    let degenerate = total < 1e-12 || mu[0] - mu[1] < 1e-9 || mu[1] - mu[2] < 1e-9;

    let (cos_t, sin_t) = if total > 0.0 {
        ((mu[0] / total).sqrt(), (mu[1] / total).sqrt())
    } else {
        (1.0, 0.0)
    };
    let b1 = c1 * cos_t + c2 * sin_t;
    let b2 = c1 * cos_t - c2 * sin_t;
    let pick = |v: Vector3<f64>, fallback: Vector3<f64>| {
        if v.norm() > 1e-12 {
            Observable::along(v).unwrap()
        } else {
            Observable::along(fallback).unwrap()
        }
    };
    OptimalChsh {
        settings: ChshSettings {
            a1: pick(m * c1, c1),
            a2: pick(m * c2, c2),
            b1: Observable::along(b1).unwrap(),
            b2: Observable::along(b2).unwrap(),
        },
        degenerate,
    }
}

/// `lambda_j = sqrt(u_j)`, descending, where `u_j` are the eigenvalues of
/// `rho (sigma_2 (x) sigma_2) rho^T (sigma_2 (x) sigma_2)`.
///
/// Computed as the singular values of `V^T Y V` with `rho = V V^dag` from the
/// eigendecomposition of `rho`, which has the same spectrum squared but keeps
/// full absolute precision for rank-deficient states.
pub fn concurrence_roots(rho: &DensityMatrix) -> [f64; 4] {
    let (vals, vecs) = eigh(rho.matrix());
    let scale = Mat4::from_diagonal(&vals.map(|x| c(x.max(0.0).sqrt(), 0.0)));
    let v = vecs * scale;
    let tau = v.transpose() * spin_flip() * v;
    let sv = SVD::new(tau, false, false).singular_values;
    let mut out = [sv[0], sv[1], sv[2], sv[3]];
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// `max(0, sqrt(u_1) - sqrt(u_2) - sqrt(u_3) - sqrt(u_4))`
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let l = concurrence_roots(rho);
    (l[0] - l[1] - l[2] - l[3]).clamp(0.0, 1.0)
}

/// Concurrence from the eigenvalues of the non-Hermitian product
/// `rho (sigma_2 (x) sigma_2) rho^T (sigma_2 (x) sigma_2)` taken literally,
/// with the transpose in the computational basis.
pub fn concurrence_direct(rho: &DensityMatrix) -> f64 {
    let y = spin_flip();
    let product = rho.matrix() * y * rho.matrix().transpose() * y;
    let eig = Schur::new(product)
        .eigenvalues()
        .expect("complex Schur form is triangular");
    let mut u: Vec<f64> = eig.iter().map(|z| z.re.max(0.0)).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    (u[0].sqrt() - u[1..].iter().map(|x| x.sqrt()).sum::<f64>()).clamp(0.0, 1.0)
}

/// `E_F = h((1 + sqrt(1 - C^2))/2)` in bits.
pub fn entanglement_of_formation(concurrence: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&concurrence) {
        return Err(Error::out_of_range("concurrence", concurrence, "[0, 1]"));
    }
    let c = concurrence.clamp(0.0, 1.0);
    binary_entropy((1.0 + (1.0 - c * c).sqrt()) / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Basis {
    Z,
    X,
}

/// Probability of equal outcomes in the Z (`H/V`) or X (`+/-`) basis, i.e. the
/// error rate of a key built from anticorrelations.
pub fn qber(rho: &DensityMatrix, basis: Basis) -> f64 {
    let (p, m) = match basis {
        Basis::Z => (Label::H, Label::V),
        Basis::X => (Label::D, Label::A),
    };
    (rho.expectation(&projector(p, p)) + rho.expectation(&projector(m, m))).clamp(0.0, 1.0)
}

/// Singlet-fidelity lower bound `S sigma + mu`, floored at the trivial 1/2.
pub fn selftest_fidelity_lb(s: f64) -> Result<f64> {
    if !s.is_finite() || s > TSIRELSON + 1e-9 {
        return Err(Error::out_of_range("S", s, "(-inf, 2 sqrt 2]"));
    }
    Ok((s * SELFTEST_SLOPE + SELFTEST_OFFSET).clamp(0.5, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakSelfTestSettings {
    pub a: [Observable; 3],
    pub b: [Observable; 3],
    pub alpha: f64,
}

/// Coefficient of `<A_n B_m>` in
/// `A0B0 + A0B1 + a A0B2 + A1B0 + A1B1 - a A1B2 + a A2B0 - a A2B1`.
pub fn weak_selftest_coefficients(alpha: f64) -> [[f64; 3]; 3] {
    [[1.0, 1.0, alpha], [1.0, 1.0, -alpha], [alpha, -alpha, 0.0]]
}

/// Local bound `4 max(1, alpha)`.
pub fn weak_selftest_local_bound(alpha: f64) -> f64 {
    4.0 * alpha.max(1.0)
}

pub fn weak_selftest_value(rho: &DensityMatrix, settings: &WeakSelfTestSettings) -> f64 {
    let w = weak_selftest_coefficients(settings.alpha);
    let mut beta = 0.0;
    for (n, a) in settings.a.iter().enumerate() {
        let am = a.matrix();
        for (m, b) in settings.b.iter().enumerate() {
            if w[n][m] != 0.0 {
                beta += w[n][m] * rho.expectation(&tensor2(&am, &b.matrix()));
            }
        }
    }
    beta
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakSelfTestOptimum {
    pub beta_max: f64,
    pub settings: WeakSelfTestSettings,
    /// Index of the restart that produced the optimum.
    pub restart: usize,
}

pub const WEAK_SELFTEST_RESTARTS: usize = 20;

/// See-saw maximization of the weak self-testing expression. Heuristic: the
/// result is a lower bound on the true maximum over qubit observables.
pub fn weak_selftest_optimize(rho: &DensityMatrix, alpha: f64) -> Result<WeakSelfTestOptimum> {
    weak_selftest_optimize_with(rho, alpha, WEAK_SELFTEST_RESTARTS, 0)
}

pub fn weak_selftest_optimize_with(
    rho: &DensityMatrix,
    alpha: f64,
    restarts: usize,
    seed: u64,
) -> Result<WeakSelfTestOptimum> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::out_of_range("alpha", alpha, "(0, inf)"));
    }
    let m = correlation_matrix(rho);
    let mt = m.transpose();
    let w = weak_selftest_coefficients(alpha);

    let mut best: Option<WeakSelfTestOptimum> = None;
    for r in 0..restarts.max(1) {
        let mut rng = seed::stream(seed, "metrics.weak_selftest", r as u64);
        let mut b: [Vector3<f64>; 3] = std::array::from_fn(|_| random_unit(&mut rng));
        let mut a: [Vector3<f64>; 3] = [Vector3::z(); 3];
        let mut beta = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            for n in 0..3 {
                let v = m * (b[0] * w[n][0] + b[1] * w[n][1] + b[2] * w[n][2]);
                a[n] = unit_or(v, a[n]);
            }
            for k in 0..3 {
                let u = mt * (a[0] * w[0][k] + a[1] * w[1][k] + a[2] * w[2][k]);
                b[k] = unit_or(u, b[k]);
            }
            let next: f64 = (0..3)
                .flat_map(|n| (0..3).map(move |k| (n, k)))
                .map(|(n, k)| w[n][k] * a[n].dot(&(m * b[k])))
                .sum();
            let done = next - beta < 1e-9;
            beta = next;
            if done {
                break;
            }
        }
        let settings = WeakSelfTestSettings {
            a: a.map(|v| Observable::along(v).unwrap()),
            b: b.map(|v| Observable::along(v).unwrap()),
            alpha,
        };
        let beta_max = weak_selftest_value(rho, &settings);
        if best.as_ref().is_none_or(|o| beta_max > o.beta_max) {
            best = Some(WeakSelfTestOptimum {
                beta_max,
                settings,
                restart: r,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn unit_or(v: Vector3<f64>, fallback: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 1e-14 {
        v / n
    } else {
        fallback
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificationReport {
    pub fidelity_target: f64,
    pub purity: f64,
    /// CHSH value at the Horodecki-optimal settings.
    pub s_chsh: f64,
    pub s_max_horodecki: f64,
    /// CHSH value at [`ChshSettings::canonical`].
    pub s_canonical: f64,
    pub concurrence: f64,
    pub eof: f64,
    pub qber_z: f64,
    pub qber_x: f64,
    /// Key rates in bits/pair, floored at 0.
    pub keyrate_z: f64,
    pub keyrate_x: f64,
    pub selftest_flb: f64,
    /// Best see-saw value of the `alpha = 1` weak self-testing expression.
    pub weak_beta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<Vec<McEstimate>>,
}

/// Report against the singlet target.
pub fn certify(rho: &DensityMatrix) -> Result<CertificationReport> {
    certify_against(rho, &StateVector4::singlet())
}

pub fn certify_against(rho: &DensityMatrix, target: &StateVector4) -> Result<CertificationReport> {
    let optimal = optimal_chsh_settings(rho);
    let s_chsh = bell_parameter(rho, &optimal.settings);
    let s_key = s_chsh.min(TSIRELSON);
    let conc = concurrence(rho);
    let qber_z = qber(rho, Basis::Z);
    let qber_x = qber(rho, Basis::X);
    Ok(CertificationReport {
        fidelity_target: fidelity_pure(rho, target),
        purity: purity(rho),
        s_chsh,
        s_max_horodecki: horodecki_max_s(rho),
        s_canonical: bell_parameter(rho, &ChshSettings::canonical()),
        concurrence: conc,
        eof: entanglement_of_formation(conc)?,
        qber_z,
        qber_x,
        keyrate_z: key_rate(s_key, qber_z)?.max(0.0),
        keyrate_x: key_rate(s_key, qber_x)?.max(0.0),
        selftest_flb: selftest_fidelity_lb(s_key)?,
        weak_beta: weak_selftest_optimize(rho, 1.0)?.beta_max,
        uncertainty: None,
    })
}
