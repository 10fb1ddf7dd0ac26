//! Deterministic factories for random chains, likelihoods and node
//! functions. Used by the test-suite and by the sampling-based estimators;
//! every factory is a pure function of its seed.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{Generator, LikelihoodVector, ProbabilityVector};
use crate::scalar::Scalar;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal via Box–Muller, driven by the seeded stream.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Irreducible generator with i.i.d. uniform off-diagonal rates plus a small
/// directed cycle that guarantees strong connectivity. Generally not
/// reversible.
pub fn random_generator<T: Scalar>(n: usize, seed: u64) -> Generator<T> {
    let mut rng = rng(seed);
    let mut rates = ndarray::Array2::<T>::zeros((n, n));
    for x in 0..n {
        for y in 0..n {
            if x != y && rng.gen::<f64>() < 0.75 {
                rates[[x, y]] = T::of(rng.gen_range(0.05..1.5));
            }
        }
    }
    for x in 0..n {
        let y = (x + 1) % n;
        rates[[x, y]] = rates[[x, y]] + T::of(0.1);
    }
    for x in 0..n {
        let off: T = (0..n).filter(|&y| y != x).map(|y| rates[[x, y]]).sum();
        rates[[x, x]] = -off;
    }
    normalize_exit_rate(&mut rates);
    Generator::from_rates(rates, None).expect("random generator is valid by construction")
}

/// Rescale time units so the largest exit rate is 1; keeps every identity
/// intact and the quadrature/decay scales of the test-suite uniform.
fn normalize_exit_rate<T: Scalar>(rates: &mut ndarray::Array2<T>) {
    let n = rates.nrows();
    let lambda = (0..n).fold(T::zero(), |acc, x| acc.max(rates[[x, x]].abs()));
    if lambda > T::zero() {
        rates.mapv_inplace(|v| v / lambda);
    }
}

/// Reversible chain built from symmetric conductances s(x,y) = s(y,x) > 0 on
/// the complete graph and a random positive q: the rates κ(x,y) = s(x,y)/q(x)
/// satisfy detailed balance with invariant distribution q by construction.
/// Returns the generator together with its (re-solved) stationary vector.
pub fn random_reversible<T: Scalar>(n: usize, seed: u64) -> (Generator<T>, ProbabilityVector<T>) {
    let mut rng = rng(seed ^ 0x5eed_ba1a_ce00);
    let mut q = vec![0.0f64; n];
    let mut total = 0.0;
    for qx in q.iter_mut() {
        *qx = rng.gen_range(0.2..1.0);
        total += *qx;
    }
    for qx in q.iter_mut() {
        *qx /= total;
    }
    let mut s = vec![vec![0.0f64; n]; n];
    for x in 0..n {
        for y in (x + 1)..n {
            let w = rng.gen_range(0.1..1.0);
            s[x][y] = w;
            s[y][x] = w;
        }
    }
    let mut rates = ndarray::Array2::<T>::zeros((n, n));
    for x in 0..n {
        for y in 0..n {
            if x != y {
                rates[[x, y]] = T::of(s[x][y] / q[x]);
            }
        }
        let off: T = (0..n).filter(|&y| y != x).map(|y| rates[[x, y]]).sum();
        rates[[x, x]] = -off;
    }
    normalize_exit_rate(&mut rates);
    let gen = Generator::from_rates(rates, None).expect("reversible construction is valid");
    let q = gen.stationary_distribution().expect("irreducible chain has a stationary vector");
    (gen, q)
}

/// Gaussian node function.
pub fn random_node_function<T: Scalar>(n: usize, seed: u64) -> Array1<T> {
    let mut rng = rng(seed ^ 0xf00d);
    Array1::from_iter((0..n).map(|_| T::of(gauss(&mut rng))))
}

/// Gaussian node function projected onto the mean-zero slice under q.
pub fn random_mean_zero<T: Scalar>(q: &ProbabilityVector<T>, seed: u64) -> Array1<T> {
    let f = random_node_function::<T>(q.len(), seed ^ 0x3ea0);
    let mean: T = f.iter().zip(q.as_array().iter()).map(|(&f, &q)| f * q).sum();
    f.mapv(|v| v - mean)
}

/// Interior likelihood ℓ = exp(spread·Z) / E_Q[exp(spread·Z)] with Z i.i.d.
/// standard normal; mean-one under q by construction.
pub fn random_interior_likelihood<T: Scalar>(
    q: &ProbabilityVector<T>,
    seed: u64,
    spread: f64,
) -> LikelihoodVector<T> {
    let mut rng = rng(seed ^ 0x11ce);
    let n = q.len();
    let raw: Vec<f64> = (0..n).map(|_| (spread * gauss(&mut rng)).exp()).collect();
    let z: f64 = raw
        .iter()
        .zip(q.as_array().iter())
        .map(|(&r, &qx)| r * qx.to_f64_lossy())
        .sum();
    let ell = Array1::from_iter(raw.iter().map(|&r| T::of(r / z)));
    LikelihoodVector::new(ell, q).expect("normalized likelihood is valid")
}

/// Interior probability vector proportional to exp(spread·Z).
pub fn random_probability<T: Scalar>(n: usize, seed: u64, spread: f64) -> ProbabilityVector<T> {
    let mut rng = rng(seed ^ 0x9b0b);
    let raw: Vec<f64> = (0..n).map(|_| (spread * gauss(&mut rng)).exp()).collect();
    let z: f64 = raw.iter().sum();
    ProbabilityVector::new(Array1::from_iter(raw.iter().map(|&r| T::of(r / z))))
        .expect("normalized vector is a probability")
}
