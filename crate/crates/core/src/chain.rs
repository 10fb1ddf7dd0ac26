//! Finite-state continuous-time Markov chains: generator validation, the
//! invariant distribution, detailed balance, adjoint (time-reversed) rates,
//! the transition semigroup by uniformization, and marginal / likelihood
//! curves of the forward and backward Kolmogorov equations.

use ndarray::{Array1, Array2};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::bordered_solve;
use crate::scalar::Scalar;
use crate::tol;

/// Infinitesimal generator 𝒦 of an irreducible chain: off-diagonal rates
/// κ(x,y) ≥ 0, every row summing to zero exactly (the diagonal is re-zeroed
/// on ingest once the raw row sums pass the structural tolerance).
#[derive(Debug, Clone)]
pub struct Generator<T: Scalar> {
    names: Vec<String>,
    rates: Array2<T>,
}

/// Point of the manifold ℳ (interior) or of its closure (flagged).
#[derive(Debug, Clone)]
pub struct ProbabilityVector<T: Scalar> {
    p: Array1<T>,
    interior: bool,
}

/// Likelihood ratio ℓ = p/q against the invariant distribution, with
/// Σ q(x) ℓ(x) = 1. Boundary vectors (zero entries) are accepted but
/// flagged; interior-only operations reject them.
#[derive(Debug, Clone)]
pub struct LikelihoodVector<T: Scalar> {
    ell: Array1<T>,
    interior: bool,
}

/// A sampled curve t ↦ P(t) of the forward Kolmogorov equation ∂P = 𝒦ᵀP.
#[derive(Debug, Clone)]
pub struct MarginalCurve<T: Scalar> {
    grid: Vec<T>,
    values: Vec<ProbabilityVector<T>>,
}

/// Outcome of a detailed-balance check: the largest |q(x)κ(x,y) − q(y)κ(y,x)|
/// and the pair attaining it.
#[derive(Debug, Clone, Copy)]
pub struct DetailedBalanceReport<T: Scalar> {
    pub holds: bool,
    pub max_violation: T,
    pub witness: (usize, usize),
}

impl<T: Scalar> ProbabilityVector<T> {
    /// Validate Σp = 1 (structural tolerance) and p ≥ 0 with at least one
    /// strictly positive entry. Zero entries are allowed and flagged.
    pub fn new(p: Array1<T>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Shape("empty probability vector".into()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite probability entry".into()));
        }
        if p.iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidArgument("negative probability entry".into()));
        }
        let sum: T = p.iter().copied().sum();
        if (sum - T::one()).abs() > tol::structural::<T>() {
            return Err(Error::InvalidArgument(format!(
                "probability mass {:e} is not 1",
                sum.to_f64_lossy()
            )));
        }
        let interior = p.iter().all(|&v| v > T::zero());
        Ok(Self { p, interior })
    }

    /// Uniform distribution on n states.
    pub fn uniform(n: usize) -> Self {
        let v = T::one() / T::of(n as f64);
        Self { p: Array1::from_elem(n, v), interior: true }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// True when every entry is strictly positive (point of ℳ, not just ℳ̄).
    pub fn is_interior(&self) -> bool {
        self.interior
    }

    pub fn get(&self, x: usize) -> T {
        self.p[x]
    }

    pub fn as_array(&self) -> &Array1<T> {
        &self.p
    }

    /// Likelihood ratio of `self` against the invariant distribution `q`.
    pub fn likelihood(&self, q: &ProbabilityVector<T>) -> Result<LikelihoodVector<T>> {
        if q.len() != self.len() {
            return Err(Error::Shape("dimension mismatch".into()));
        }
        if !q.is_interior() {
            return Err(Error::InvalidArgument(
                "reference distribution must be interior".into(),
            ));
        }
        let ell = Array1::from_iter(self.p.iter().zip(q.p.iter()).map(|(&p, &q)| p / q));
        let interior = ell.iter().all(|&v| v > T::zero());
        Ok(LikelihoodVector { ell, interior })
    }

    /// Total-variation-free sup distance used by convergence tests.
    pub fn sup_distance(&self, other: &ProbabilityVector<T>) -> T {
        self.p
            .iter()
            .zip(other.p.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }
}

impl<T: Scalar> LikelihoodVector<T> {
    /// Validate Σ q·ℓ = 1 and ℓ ≥ 0; zero entries are flagged as boundary.
    pub fn new(ell: Array1<T>, q: &ProbabilityVector<T>) -> Result<Self> {
        if ell.len() != q.len() {
            return Err(Error::Shape("dimension mismatch".into()));
        }
        if ell.iter().any(|&v| !v.is_finite() || v < T::zero()) {
            return Err(Error::InvalidArgument(
                "likelihood entries must be finite and nonnegative".into(),
            ));
        }
        let mean: T = ell.iter().zip(q.as_array().iter()).map(|(&l, &q)| l * q).sum();
        if (mean - T::one()).abs() > tol::structural::<T>() {
            return Err(Error::InvalidArgument(format!(
                "likelihood mean {:e} under Q is not 1",
                mean.to_f64_lossy()
            )));
        }
        let interior = ell.iter().all(|&v| v > T::zero());
        Ok(Self { ell, interior })
    }

    /// The equilibrium point ℓ ≡ 1.
    pub fn equilibrium(n: usize) -> Self {
        Self { ell: Array1::from_elem(n, T::one()), interior: true }
    }

    pub fn len(&self) -> usize {
        self.ell.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ell.is_empty()
    }

    pub fn is_interior(&self) -> bool {
        self.interior
    }

    pub fn get(&self, x: usize) -> T {
        self.ell[x]
    }

    pub fn as_array(&self) -> &Array1<T> {
        &self.ell
    }

    /// The probability vector ℓ·Q this likelihood represents.
    pub fn to_probability(&self, q: &ProbabilityVector<T>) -> Result<ProbabilityVector<T>> {
        let p = Array1::from_iter(
            self.ell.iter().zip(q.as_array().iter()).map(|(&l, &q)| l * q),
        );
        ProbabilityVector::new(p)
    }
}

impl<T: Scalar> MarginalCurve<T> {
    pub fn new(grid: Vec<T>, values: Vec<ProbabilityVector<T>>) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::Shape("curve grid/value length mismatch".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn values(&self) -> &[ProbabilityVector<T>] {
        &self.values
    }

    /// Likelihood curve ℓ(t) = P(t)/Q along the grid.
    pub fn likelihoods(&self, q: &ProbabilityVector<T>) -> Result<Vec<LikelihoodVector<T>>> {
        self.values.iter().map(|p| p.likelihood(q)).collect()
    }
}

impl<T: Scalar> Generator<T> {
    /// Validate a raw rate matrix: square with n ≥ 2, κ(x,y) ≥ 0 off the
    /// diagonal, |row sums| within the structural tolerance (then re-zeroed
    /// exactly), and strong connectivity of the positive-rate digraph.
    pub fn from_rates(rates: Array2<T>, names: Option<Vec<String>>) -> Result<Self> {
        let n = rates.nrows();
        if rates.ncols() != n {
            return Err(Error::Shape(format!(
                "rate matrix must be square, got {}x{}",
                rates.nrows(),
                rates.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::Shape("a chain needs at least 2 states".into()));
        }
        if rates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite rate".into()));
        }
        let scale = rates
            .iter()
            .fold(T::zero(), |acc, x| acc.max(x.abs()))
            .max(T::one());
        let tol = tol::structural::<T>() * scale;
        let mut rates = rates;
        for x in 0..n {
            for y in 0..n {
                if x != y && rates[[x, y]] < T::zero() {
                    return Err(Error::NegativeOffDiagonal {
                        row: x,
                        col: y,
                        value: rates[[x, y]].to_f64_lossy(),
                    });
                }
            }
            let sum: T = (0..n).map(|y| rates[[x, y]]).sum();
            if sum.abs() > tol {
                return Err(Error::RowSumNonzero { row: x, sum: sum.to_f64_lossy() });
            }
            // exact zeroing of the diagonal residual
            let off: T = (0..n).filter(|&y| y != x).map(|y| rates[[x, y]]).sum();
            rates[[x, x]] = -off;
        }
        let mut graph = DiGraph::<(), ()>::new();
        let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
        for x in 0..n {
            for y in 0..n {
                if x != y && rates[[x, y]] > T::zero() {
                    graph.add_edge(nodes[x], nodes[y], ());
                }
            }
        }
        if kosaraju_scc(&graph).len() != 1 {
            return Err(Error::Reducible);
        }
        let names = match names {
            Some(names) => {
                if names.len() != n {
                    return Err(Error::Shape("state label count mismatch".into()));
                }
                names
            }
            None => (0..n).map(|i| i.to_string()).collect(),
        };
        Ok(Self { names, rates })
    }

    /// Build from sparse (i, j, rate) triples; missing diagonals are filled
    /// so each row sums to zero, explicit diagonals must agree to the
    /// structural tolerance.
    pub fn from_triples(
        n: usize,
        triples: &[(usize, usize, T)],
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let mut rates = Array2::zeros((n, n));
        let mut explicit_diag: Vec<Option<T>> = vec![None; n];
        for &(i, j, r) in triples {
            if i >= n || j >= n {
                return Err(Error::ChainSpec(format!("triple index ({i}, {j}) out of range")));
            }
            if i == j {
                explicit_diag[i] = Some(r);
            } else {
                rates[[i, j]] = rates[[i, j]] + r;
            }
        }
        for i in 0..n {
            let off: T = (0..n).filter(|&j| j != i).map(|j| rates[[i, j]]).sum();
            rates[[i, i]] = -off;
            if let Some(d) = explicit_diag[i] {
                if (d + off).abs() > tol::structural::<T>() * off.abs().max(T::one()) {
                    return Err(Error::ChainSpec(format!(
                        "explicit diagonal {:e} at state {i} disagrees with row sum",
                        d.to_f64_lossy()
                    )));
                }
            }
        }
        Self::from_rates(rates, names)
    }

    pub fn n(&self) -> usize {
        self.rates.nrows()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rates(&self) -> &Array2<T> {
        &self.rates
    }

    pub fn rate(&self, x: usize, y: usize) -> T {
        self.rates[[x, y]]
    }

    /// ∞-norm of the rate matrix, the scale for residual tolerances.
    pub fn norm_inf(&self) -> T {
        let n = self.n();
        (0..n)
            .map(|x| (0..n).map(|y| self.rates[[x, y]].abs()).sum())
            .fold(T::zero(), |acc: T, s: T| acc.max(s))
    }

    /// Action of the generator on a function: (𝒦f)(x) = Σ_y κ(x,y) f(y).
    pub fn apply(&self, f: &Array1<T>) -> Array1<T> {
        let n = self.n();
        Array1::from_iter((0..n).map(|x| (0..n).map(|y| self.rates[[x, y]] * f[y]).sum()))
    }

    /// Action of the transpose: (𝒦ᵀp)(y) = Σ_x κ(x,y) p(x).
    pub fn apply_transpose(&self, p: &Array1<T>) -> Array1<T> {
        let n = self.n();
        Array1::from_iter((0..n).map(|y| (0..n).map(|x| self.rates[[x, y]] * p[x]).sum()))
    }

    /// Invariant distribution: the solution of 𝒦ᵀQ = 0 on the mass-one
    /// affine slice, by one bordered direct solve.
    pub fn stationary_distribution(&self) -> Result<ProbabilityVector<T>> {
        let n = self.n();
        let kt = self.rates.t().to_owned();
        let rhs = Array1::zeros(n);
        let ones = Array1::from_elem(n, T::one());
        let q = bordered_solve(&kt, &rhs, &ones, T::one())?;
        if q.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::SolveFailed(
                "stationary solve produced a non-positive entry".into(),
            ));
        }
        let residual = self
            .apply_transpose(&q)
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()));
        if residual > tol::structural::<T>() * self.norm_inf() {
            return Err(Error::SolveFailed(format!(
                "stationarity residual {:e} too large",
                residual.to_f64_lossy()
            )));
        }
        ProbabilityVector::new(q)
    }

    /// Detailed-balance check against `q`: max_{x,y} |q(x)κ(x,y) − q(y)κ(y,x)|.
    pub fn detailed_balance(&self, q: &ProbabilityVector<T>, tol: T) -> DetailedBalanceReport<T> {
        let n = self.n();
        let mut max_violation = T::zero();
        let mut witness = (0, 0);
        for x in 0..n {
            for y in (x + 1)..n {
                let v = (q.get(x) * self.rates[[x, y]] - q.get(y) * self.rates[[y, x]]).abs();
                if v > max_violation {
                    max_violation = v;
                    witness = (x, y);
                }
            }
        }
        DetailedBalanceReport { holds: max_violation <= tol, max_violation, witness }
    }

    /// Convenience detailed-balance predicate at the default analytic
    /// tolerance, scaled by the rate magnitude.
    pub fn is_reversible(&self, q: &ProbabilityVector<T>) -> bool {
        self.detailed_balance(q, tol::analytic::<T>() * self.norm_inf().max(T::one())).holds
    }

    /// Adjoint (time-reversed) generator 𝒦̂ with κ̂(y,z) = q(z) κ(z,y) / q(y).
    pub fn adjoint(&self, q: &ProbabilityVector<T>) -> Result<Generator<T>> {
        let n = self.n();
        let mut rates = Array2::zeros((n, n));
        for y in 0..n {
            for z in 0..n {
                if y != z {
                    rates[[y, z]] = q.get(z) * self.rates[[z, y]] / q.get(y);
                }
            }
            let off: T = (0..n).filter(|&z| z != y).map(|z| rates[[y, z]]).sum();
            rates[[y, y]] = -off;
        }
        Generator::from_rates(rates, Some(self.names.clone()))
    }

    /// Uniformization rate λ = max_x |κ(x,x)|.
    pub fn uniformization_rate(&self) -> T {
        (0..self.n()).fold(T::zero(), |acc, x| acc.max(self.rates[[x, x]].abs()))
    }

    /// Transition matrix ρ_t = e^{t𝒦} by uniformization: with λ ≥ max |κ(x,x)|
    /// and the stochastic matrix Π = I + 𝒦/λ,
    ///
    /// ```text
    /// ρ_t = Σ_k  e^{-λt} (λt)^k / k! · Π^k ,
    /// ```
    ///
    /// truncated at cumulative Poisson mass 1 − 1e-15 and renormalized, which
    /// keeps every entry nonnegative and every row stochastic. Long horizons
    /// are split as ρ_t = (ρ_{t/m})^m so the Poisson weights never underflow.
    pub fn transition_matrix(&self, t: T) -> Result<Array2<T>> {
        if t < T::zero() {
            return Err(Error::NegativeTime);
        }
        let n = self.n();
        if t == T::zero() {
            return Ok(Array2::eye(n));
        }
        let lambda = self.uniformization_rate();
        if lambda == T::zero() {
            return Ok(Array2::eye(n));
        }
        // keep λ·Δ moderate so e^{-λΔ} stays representable
        let max_mean = T::of(30.0);
        let m = (lambda * t / max_mean).ceil().to_f64_lossy().max(1.0) as u64;
        let dt = t / T::of(m as f64);
        let step = self.uniformized_step(lambda, dt)?;
        Ok(matrix_power(&step, m))
    }

    fn uniformized_step(&self, lambda: T, dt: T) -> Result<Array2<T>> {
        let n = self.n();
        let mut pi = Array2::eye(n);
        for x in 0..n {
            for y in 0..n {
                pi[[x, y]] = pi[[x, y]] + self.rates[[x, y]] / lambda;
            }
        }
        let mean = lambda * dt;
        let cutoff = T::one() - tol::poisson_truncation::<T>();
        let mut weight = (-mean).exp();
        let mut cumulative = weight;
        let mut term: Array2<T> = Array2::eye(n); // Π^k, k = 0
        let mut sum = term.mapv(|v| v * weight);
        let mut k: u64 = 0;
        let k_max = 4096;
        while cumulative < cutoff && k < k_max {
            k += 1;
            weight = weight * mean / T::of(k as f64);
            term = term.dot(&pi);
            sum.scaled_add(weight, &term);
            cumulative = cumulative + weight;
        }
        if cumulative < cutoff {
            return Err(Error::SolveFailed(
                "uniformization series did not reach its truncation mass".into(),
            ));
        }
        // renormalize the truncated Poisson weights to total mass one
        Ok(sum.mapv(|v| v / cumulative))
    }

    /// Solve the forward equation ∂P = 𝒦ᵀP along `grid`, with `p0` the value
    /// at `grid[0]`; propagation between grid points is by uniformization
    /// (exact up to series truncation, not a low-order ODE step).
    pub fn evolve_marginals(
        &self,
        p0: &ProbabilityVector<T>,
        grid: &[T],
    ) -> Result<MarginalCurve<T>> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("empty time grid".into()));
        }
        if grid[0] < T::zero() {
            return Err(Error::NegativeTime);
        }
        if p0.len() != self.n() {
            return Err(Error::Shape("initial distribution dimension mismatch".into()));
        }
        let mut values = Vec::with_capacity(grid.len());
        values.push(p0.clone());
        let mut current = p0.as_array().clone();
        let mut cached: Option<(T, Array2<T>)> = None;
        for w in grid.windows(2) {
            let dt = w[1] - w[0];
            if !(dt > T::zero()) {
                return Err(Error::InvalidArgument(
                    "time grid must be strictly increasing".into(),
                ));
            }
            let reuse = matches!(&cached, Some((d, _)) if *d == dt);
            if !reuse {
                cached = Some((dt, self.transition_matrix(dt)?));
            }
            let (_, rho) = cached.as_ref().expect("cached propagator");
            current = rho.t().dot(&current);
            values.push(ProbabilityVector {
                p: current.clone(),
                interior: current.iter().all(|&v| v > T::zero()),
            });
        }
        MarginalCurve::new(grid.to_vec(), values)
    }
}

fn matrix_power<T: Scalar>(m: &Array2<T>, mut e: u64) -> Array2<T> {
    let mut base = m.clone();
    let mut acc = Array2::eye(m.nrows());
    while e > 0 {
        if e & 1 == 1 {
            acc = acc.dot(&base);
        }
        e >>= 1;
        if e > 0 {
            base = base.dot(&base);
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// Chain-spec files — the single ingestion point for every CLI command.
// ---------------------------------------------------------------------------

/// JSON chain description:
///
/// ```json
/// {
///   "states": ["a", "b", "c"],
///   "rates": [[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]],
///   "initial": [1.0, 0.0, 0.0]
/// }
/// ```
///
/// `rates` may instead be sparse, `{"triples": [[i, j, rate], ...]}`, with
/// 0-based indices; diagonals are then auto-filled to zero row sums.
#[derive(Debug, Clone, Deserialize)]
pub struct ChainSpec {
    #[serde(default)]
    pub states: Option<Vec<String>>,
    pub rates: RateSpec,
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Dense(Vec<Vec<f64>>),
    Triples { triples: Vec<(usize, usize, f64)> },
}

impl ChainSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn dimension(&self) -> Result<usize> {
        match &self.rates {
            RateSpec::Dense(rows) => Ok(rows.len()),
            RateSpec::Triples { triples } => {
                if let Some(states) = &self.states {
                    return Ok(states.len());
                }
                let n = triples
                    .iter()
                    .map(|&(i, j, _)| i.max(j) + 1)
                    .max()
                    .ok_or_else(|| Error::ChainSpec("no triples given".into()))?;
                Ok(n)
            }
        }
    }

    /// Build the generator at the requested precision.
    pub fn generator<T: Scalar>(&self) -> Result<Generator<T>> {
        let n = self.dimension()?;
        let names = self.states.clone();
        match &self.rates {
            RateSpec::Dense(rows) => {
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::ChainSpec("dense rate matrix is ragged".into()));
                }
                let mut rates = Array2::zeros((n, n));
                for (i, row) in rows.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        rates[[i, j]] = T::of(v);
                    }
                }
                Generator::from_rates(rates, names)
            }
            RateSpec::Triples { triples } => {
                let triples: Vec<(usize, usize, T)> =
                    triples.iter().map(|&(i, j, r)| (i, j, T::of(r))).collect();
                Generator::from_triples(n, &triples, names)
            }
        }
    }

    /// The optional initial distribution of the spec file.
    pub fn initial<T: Scalar>(&self) -> Result<Option<ProbabilityVector<T>>> {
        match &self.initial {
            None => Ok(None),
            Some(p) => {
                let v = Array1::from_iter(p.iter().map(|&x| T::of(x)));
                Ok(Some(ProbabilityVector::new(v)?))
            }
        }
    }
}

/// The three-state cycle used as counterexample chain throughout the tests:
/// rates [[-1,1,0],[0,-1,1],[1,0,-1]], uniform invariant distribution,
/// detailed balance fails.
pub fn three_cycle<T: Scalar>() -> Generator<T> {
    let one = T::one();
    let rates = ndarray::arr2(&[
        [-one, one, T::zero()],
        [T::zero(), -one, one],
        [one, T::zero(), -one],
    ]);
    Generator::from_rates(rates, None).expect("three-cycle is a valid generator")
}
