//! Small-dimension complex linear algebra and two-qubit state primitives.
//!
//! All two-qubit objects use the computational ordering `|VV>, |VH>, |HV>, |HH>`,
//! i.e. qubit level `0` is `V` and level `1` is `H`. The Pauli matrices act in
//! that same ordering, so `sigma_3 |V> = +|V>`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix, Matrix2, Matrix4, SymmetricEigen, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Ket4 = Vector4<C64>;

/// Hermiticity and trace tolerance used when constructing a [`DensityMatrix`].
pub const PHYSICAL_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_TOL` are accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-9;
/// Gap below which the top eigenvalue is treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

const NORM_TOL: f64 = 1e-12;

pub const BASIS_LABEL: &str = "VV,VH,HV,HH";

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// The six polarization states used for tomography.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    H,
    V,
    D,
    A,
    L,
    R,
}

impl Label {
    pub const ALL: [Label; 6] = [Label::H, Label::V, Label::D, Label::A, Label::L, Label::R];

    /// The label of the orthogonal state in the same basis.
    pub fn orthogonal(self) -> Label {
        match self {
            Label::H => Label::V,
            Label::V => Label::H,
            Label::D => Label::A,
            Label::A => Label::D,
            Label::L => Label::R,
            Label::R => Label::L,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::H => "H",
            Label::V => "V",
            Label::D => "D",
            Label::A => "A",
            Label::L => "L",
            Label::R => "R",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" => Ok(Label::H),
            "V" | "v" => Ok(Label::V),
            "D" | "d" | "+" => Ok(Label::D),
            "A" | "a" | "-" => Ok(Label::A),
            "L" | "l" => Ok(Label::L),
            "R" | "r" => Ok(Label::R),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Single-qubit pure state with amplitudes on `|H>` and `|V>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector2 {
    h: C64,
    v: C64,
}

impl StateVector2 {
    pub fn new(h: C64, v: C64) -> Result<Self> {
        let norm = (h.norm_sqr() + v.norm_sqr()).sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { h, v })
    }

    pub fn h(&self) -> C64 {
        self.h
    }

    pub fn v(&self) -> C64 {
        self.v
    }

    /// Column vector in computational ordering `(|V>, |H>)`.
    pub fn column(&self) -> Vector2<C64> {
        Vector2::new(self.v, self.h)
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector2) -> C64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    pub fn projector(&self) -> Mat2 {
        let col = self.column();
        col * col.adjoint()
    }

    /// Product state `|self> (x) |other>` in the two-qubit ordering.
    pub fn kron(&self, other: &StateVector2) -> Ket4 {
        self.column().kronecker(&other.column())
    }
}

/// Normalized two-qubit pure state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector4(Ket4);

impl StateVector4 {
    pub fn new(amplitudes: Ket4) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self(amplitudes))
    }

    /// Normalizes `amplitudes`; fails only for the zero vector.
    pub fn normalized(amplitudes: Ket4) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self(amplitudes / c(norm, 0.0)))
    }

    /// `|psi-> = (|HV> - |VH>)/sqrt(2)`
    pub fn singlet() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self(Ket4::new(c(0.0, 0.0), c(-s, 0.0), c(s, 0.0), c(0.0, 0.0)))
    }

    pub fn product(x: Label, y: Label) -> Self {
        Self(basis_ket(x).kron(&basis_ket(y)))
    }

    pub fn amplitudes(&self) -> &Ket4 {
        &self.0
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        DensityMatrix(self.0 * self.0.adjoint())
    }
}

/// Returns sigma_1, sigma_2 or sigma_3.
pub fn pauli(k: usize) -> Result<Mat2> {
    let o = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let i = c(0.0, 1.0);
    match k {
        1 => Ok(Mat2::new(o, one, one, o)),
        2 => Ok(Mat2::new(o, -i, i, o)),
        3 => Ok(Mat2::new(one, o, o, -one)),
        _ => Err(Error::PauliIndex(k)),
    }
}

pub(crate) fn paulis() -> [Mat2; 3] {
    [pauli(1).unwrap(), pauli(2).unwrap(), pauli(3).unwrap()]
}

/// `sigma_2 (x) sigma_2`, the spin-flip operator.
pub(crate) fn spin_flip() -> Mat4 {
    let s2 = paulis()[1];
    s2.kronecker(&s2)
}

pub fn basis_ket(label: Label) -> StateVector2 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (h, v) = match label {
        Label::H => (c(1.0, 0.0), c(0.0, 0.0)),
        Label::V => (c(0.0, 0.0), c(1.0, 0.0)),
        Label::D => (c(s, 0.0), c(s, 0.0)),
        Label::A => (c(s, 0.0), c(-s, 0.0)),
        Label::L => (c(s, 0.0), c(0.0, s)),
        Label::R => (c(s, 0.0), c(0.0, -s)),
    };
    StateVector2 { h, v }
}

/// Kronecker product `a (x) b`.
pub fn tensor(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

pub fn tensor2(a: &Mat2, b: &Mat2) -> Mat4 {
    a.kronecker(b)
}

/// `|X,Y><X,Y|` with `X` on the signal and `Y` on the idler qubit.
pub fn projector(x: Label, y: Label) -> Mat4 {
    tensor2(&basis_ket(x).projector(), &basis_ket(y).projector())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonFinite,
    NotHermitian { max_deviation: f64 },
    TraceNotOne { trace_re: f64, trace_im: f64 },
    NotPositive { min_eigenvalue: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => f.write_str("non-finite entries"),
            Violation::NotHermitian { max_deviation } => {
                write!(f, "not Hermitian (max |m - m^dag| = {max_deviation:e})")
            }
            Violation::TraceNotOne { trace_re, trace_im } => {
                write!(f, "trace = {trace_re} + {trace_im}i, expected 1")
            }
            Violation::NotPositive { min_eigenvalue } => {
                write!(f, "negative eigenvalue {min_eigenvalue:e}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhysicalityVerdict {
    pub violations: Vec<Violation>,
}

impl PhysicalityVerdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks Hermiticity, unit trace and positivity, collecting every violation.
///
/// Hermiticity and trace are checked at `tol`; eigenvalues are checked against
/// `-max(tol, PSD_TOL)`.
pub fn is_physical(m: &Mat4, tol: f64) -> PhysicalityVerdict {
    check_physical(m, tol, tol.max(PSD_TOL))
}

fn check_physical(m: &Mat4, herm_tol: f64, psd_tol: f64) -> PhysicalityVerdict {
    let mut violations = Vec::new();
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        violations.push(Violation::NonFinite);
        return PhysicalityVerdict { violations };
    }
    let max_deviation = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max_deviation > herm_tol {
        violations.push(Violation::NotHermitian { max_deviation });
    }
    let tr = m.trace();
    if (tr - c(1.0, 0.0)).norm() > herm_tol {
        violations.push(Violation::TraceNotOne {
            trace_re: tr.re,
            trace_im: tr.im,
        });
    }
    let min_eigenvalue = eigh(&hermitian_part(m)).0.min();
    if min_eigenvalue < -psd_tol {
        violations.push(Violation::NotPositive { min_eigenvalue });
    }
    PhysicalityVerdict { violations }
}

pub(crate) fn hermitian_part(m: &Mat4) -> Mat4 {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Eigendecomposition of a Hermitian 4x4 matrix, eigenvalues in descending order.
pub fn eigh(m: &Mat4) -> (Vector4<f64>, Mat4) {
    let eig = SymmetricEigen::new(*m);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector4::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let vectors = Mat4::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// `f(m)` for a Hermitian PSD matrix, applied to clipped eigenvalues.
pub(crate) fn hermitian_map(m: &Mat4, f: impl Fn(f64) -> f64) -> Mat4 {
    let (vals, vecs) = eigh(m);
    let d = Mat4::from_diagonal(&vals.map(|x| c(f(x.max(0.0)), 0.0)));
    vecs * d * vecs.adjoint()
}

/// Unit-trace, Hermitian, positive semidefinite 4x4 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(Mat4);

impl DensityMatrix {
    pub fn new(m: Mat4) -> Result<Self> {
        let verdict = check_physical(&m, PHYSICAL_TOL, PSD_TOL);
        if verdict.is_valid() {
            Ok(Self(m))
        } else {
            Err(Error::Unphysical(verdict.violations))
        }
    }

    /// Wraps a matrix that is physical by construction (e.g. `T^dag T / Tr`).
    pub(crate) fn from_trusted(m: Mat4) -> Self {
        debug_assert!(check_physical(&m, 1e-8, 1e-8).is_valid());
        Self(m)
    }

    pub fn maximally_mixed() -> Self {
        Self(Mat4::identity() * c(0.25, 0.0))
    }

    pub fn singlet() -> Self {
        StateVector4::singlet().density_matrix()
    }

    pub fn pure(state: &StateVector4) -> Self {
        state.density_matrix()
    }

    /// `p rho + (1 - p) sigma`
    pub fn mix(&self, p: f64, other: &DensityMatrix) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::out_of_range("p", p, "[0, 1]"));
        }
        Ok(Self(self.0 * c(p, 0.0) + other.0 * c(1.0 - p, 0.0)))
    }

    /// Werner state `p |psi-><psi-| + (1 - p) I/4`.
    pub fn werner(p: f64) -> Result<Self> {
        Self::singlet().mix(p, &Self::maximally_mixed())
    }

    /// Product `rho_signal (x) rho_idler` of two single-qubit density matrices.
    pub fn product(signal: &Mat2, idler: &Mat2) -> Result<Self> {
        Self::new(tensor2(signal, idler))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    /// `Tr(rho O)` (real part; `O` is expected to be Hermitian).
    pub fn expectation(&self, op: &Mat4) -> f64 {
        (self.0 * op).trace().re
    }

    /// `<psi|rho|psi>`
    pub fn quadratic_form(&self, psi: &Ket4) -> f64 {
        (psi.adjoint() * self.0 * psi)[(0, 0)].re
    }

    pub fn eigenvalues(&self) -> Vector4<f64> {
        eigh(&self.0).0
    }

    pub fn to_json(&self) -> DensityMatrixJson {
        DensityMatrixJson::from_matrix(&self.0)
    }
}

/// JSON layout `{dim, re, im, basis}` with row-major real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixJson {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub basis: String,
}

impl DensityMatrixJson {
    pub fn from_matrix(m: &Mat4) -> Self {
        let mut re = Vec::with_capacity(16);
        let mut im = Vec::with_capacity(16);
        for r in 0..4 {
            for col in 0..4 {
                re.push(m[(r, col)].re);
                im.push(m[(r, col)].im);
            }
        }
        Self {
            dim: 4,
            re,
            im,
            basis: BASIS_LABEL.to_string(),
        }
    }

    /// Layout checks only; physicality is checked by [`DensityMatrix::new`].
    pub fn to_matrix(&self) -> Result<Mat4> {
        if self.dim != 4 {
            return Err(Error::InvalidInput(format!("dim must be 4, got {}", self.dim)));
        }
        if self.re.len() != 16 || self.im.len() != 16 {
            return Err(Error::InvalidInput(format!(
                "expected 16 re and 16 im entries, got {} and {}",
                self.re.len(),
                self.im.len()
            )));
        }
        let basis: String = self.basis.chars().filter(|ch| !ch.is_whitespace()).collect();
        if basis != BASIS_LABEL {
            return Err(Error::InvalidInput(format!(
                "basis must be \"{BASIS_LABEL}\", got \"{}\"",
                self.basis
            )));
        }
        Ok(Mat4::from_fn(|r, col| c(self.re[4 * r + col], self.im[4 * r + col])))
    }

    pub fn to_density_matrix(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.to_matrix()?)
    }
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    (rho.0 * rho.0).trace().re
}

/// `<psi|rho|psi>`
pub fn fidelity_pure(rho: &DensityMatrix, target: &StateVector4) -> f64 {
    rho.quadratic_form(target.amplitudes()).clamp(0.0, 1.0)
}

/// Uhlmann-Jozsa fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
///
/// Falls back to the pure-state overlap when either argument is pure, which
/// avoids square roots of eigenvalue noise on rank-one inputs.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    for (a, b) in [(rho, sigma), (sigma, rho)] {
        let (vals, vecs) = eigh(&a.0);
        if vals[0] > 1.0 - 1e-12 {
            return b.quadratic_form(&vecs.column(0).into_owned()).clamp(0.0, 1.0);
        }
    }
    let sqrt_rho = hermitian_map(&rho.0, f64::sqrt);
    let inner = hermitian_part(&(sqrt_rho * sigma.0 * sqrt_rho));
    let trace: f64 = eigh(&inner).0.iter().map(|x| x.max(0.0).sqrt()).sum();
    (trace * trace).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureStateReport {
    pub state: StateVector4,
    pub fidelity_with_rho: f64,
}

/// Eigenvector of the largest eigenvalue, phase-fixed so the largest-magnitude
/// amplitude is real and non-negative.
pub fn dominant_eigenstate(rho: &DensityMatrix) -> Result<PureStateReport> {
    let (vals, vecs) = eigh(&rho.0);
    let gap = vals[0] - vals[1];
    if gap < DEGENERACY_TOL {
        return Err(Error::DegenerateEigenvalue { gap });
    }
    let mut v: Ket4 = vecs.column(0).into_owned();
    let mut lead = 0;
    for i in 1..4 {
        if v[i].norm() > v[lead].norm() + 1e-12 {
            lead = i;
        }
    }
    let phase = v[lead].conj() / c(v[lead].norm(), 0.0);
    v *= phase;
    v[lead] = c(v[lead].re, 0.0);
    let state = StateVector4::normalized(v)?;
    Ok(PureStateReport {
        state,
        fidelity_with_rho: vals[0],
    })
}

/// A +/-1 valued qubit observable `sum_k b_k sigma_k` with unit Bloch vector `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observable {
    bloch: Vector3<f64>,
}

impl Observable {
    pub fn new(bloch: Vector3<f64>) -> Result<Self> {
        let norm = bloch.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { bloch })
    }

    /// Normalizes `v`; fails for the zero vector.
    pub fn along(v: Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { bloch: v / norm })
    }

    pub fn x() -> Self {
        Self { bloch: Vector3::x() }
    }

    pub fn y() -> Self {
        Self { bloch: Vector3::y() }
    }

    pub fn z() -> Self {
        Self { bloch: Vector3::z() }
    }

    pub fn bloch(&self) -> &Vector3<f64> {
        &self.bloch
    }

    pub fn matrix(&self) -> Mat2 {
        observable_matrix(self)
    }
}

pub fn observable_matrix(obs: &Observable) -> Mat2 {
    let s = paulis();
    s[0] * c(obs.bloch[0], 0.0) + s[1] * c(obs.bloch[1], 0.0) + s[2] * c(obs.bloch[2], 0.0)
}
