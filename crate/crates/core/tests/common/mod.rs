#![allow(dead_code)]

use nalgebra::{Complex, Matrix2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use paircert_core::quantum::{eigh, pauli, tensor2, DensityMatrix, Mat2, Mat4, StateVector4, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_c<R: Rng>(rng: &mut R) -> C64 {
    Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// `A A^dagger / Tr` with `A` complex Gaussian.
pub fn random_density<R: Rng>(rng: &mut R) -> DensityMatrix {
    let a = Mat4::from_fn(|_, _| gaussian_c(rng));
    let m = a * a.adjoint();
    let tr = m.trace();
    DensityMatrix::new(m / tr).unwrap()
}

pub fn random_pure<R: Rng>(rng: &mut R) -> StateVector4 {
    StateVector4::normalized(Vector4::from_fn(|_, _| gaussian_c(rng))).unwrap()
}

pub fn random_rank2<R: Rng>(rng: &mut R) -> DensityMatrix {
    let p: f64 = rng.random_range(0.55..0.95);
    random_pure(rng).density_matrix().mix(p, &random_pure(rng).density_matrix()).unwrap()
}

/// Single-qubit state with a Bloch vector drawn uniformly in the ball.
pub fn random_qubit<R: Rng>(rng: &mut R) -> Mat2 {
    let s = [pauli(1).unwrap(), pauli(2).unwrap(), pauli(3).unwrap()];
    loop {
        let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if r.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            let mut m = Matrix2::identity();
            for k in 0..3 {
                m += s[k] * Complex::new(r[k], 0.0);
            }
            return m * Complex::new(0.5, 0.0);
        }
    }
}

/// Convex mixture of one to four random product states.
pub fn random_separable<R: Rng>(rng: &mut R) -> DensityMatrix {
    let k = rng.random_range(1..=4);
    let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut m = Mat4::zeros();
    for w in weights {
        let term = tensor2(&random_qubit(rng), &random_qubit(rng));
        m += term * Complex::new(w / total, 0.0);
    }
    DensityMatrix::new(m).unwrap()
}

fn sqrt_psd(m: &Mat4) -> Mat4 {
    let (vals, vecs) = eigh(m);
    let d = Mat4::from_diagonal(&vals.map(|x| Complex::new(x.max(0.0).sqrt(), 0.0)));
    vecs * d * vecs.adjoint()
}

/// Concurrence from the Hermitian form `sqrt(sqrt(rho) rho~ sqrt(rho))` with
/// `rho~ = (sigma_2 x sigma_2) rho* (sigma_2 x sigma_2)`.
pub fn spin_flip_concurrence(rho: &DensityMatrix) -> f64 {
    let s2 = pauli(2).unwrap();
    let y = tensor2(&s2, &s2);
    let flipped = y * rho.matrix().conjugate() * y;
    let root = sqrt_psd(rho.matrix());
    let r = root * flipped * root;
    let r = (r + r.adjoint()) * Complex::new(0.5, 0.0);
    let (vals, _) = eigh(&r);
    let l: Vec<f64> = vals.iter().map(|x| x.max(0.0).sqrt()).collect();
    (l[0] - l[1] - l[2] - l[3]).max(0.0)
}
