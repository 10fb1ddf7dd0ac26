//! Discrete differential calculus on the chain's incidence graph: gradient,
//! divergence, conductances, the Dirichlet form, and the norm hierarchy
//! L² / H¹ / H⁻¹ together with its Θ-weighted (logarithmic-mean) refinement.
//!
//! Conventions. 𝒵 holds ordered pairs (x,y), x ≠ y, κ(x,y) > 0; both
//! directions are present exactly when both rates are. The divergence
//! carries the paper's ½ factor,
//!
//! ```text
//! (∇·F)(x) = ½ Σ_{y≠x} κ(x,y) [F(x,y) − F(y,x)] ,
//! ```
//!
//! with F read as 0 on non-edges, so 𝒦f = ∇·(∇f) holds verbatim and the
//! conductances c(x,y) = ½ κ(x,y) q(x) require no double-counting
//! adjustments.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use crate::chain::{Generator, LikelihoodVector, ProbabilityVector};
use crate::entropy::Phi;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tol;

/// A real function on the state space.
pub type NodeFunction<T> = Array1<T>;

/// The directed edge set 𝒵 of the incidence graph.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    n: usize,
    edges: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

/// A real function on the edge set, stored parallel to [`EdgeSet::edges`].
///
/// Generic edge functions read as 0 off the edge set. Gradients are the
/// exception: ∇f is defined on all ordered pairs and is antisymmetric, so
/// functions produced by [`grad`] evaluate to −F(y,x) on a pair (x,y) whose
/// reverse is an edge. Without this the concatenation formula 𝒦f = ∇·(∇f)
/// would fail on chains with one-directional edges.
#[derive(Debug, Clone)]
pub struct EdgeFunction<T> {
    values: Vec<T>,
    antisymmetric: bool,
}

/// Strictly positive weights on the edge set (conductances, ϑ-weights).
#[derive(Debug, Clone)]
pub struct EdgeMeasure<T> {
    weights: Vec<T>,
}

impl EdgeSet {
    /// Collect the pairs with κ(x,y) > 0.
    pub fn from_generator<T: Scalar>(gen: &Generator<T>) -> Self {
        let n = gen.n();
        let mut edges = Vec::new();
        let mut index = HashMap::new();
        for x in 0..n {
            for y in 0..n {
                if x != y && gen.rate(x, y) > T::zero() {
                    index.insert((x, y), edges.len());
                    edges.push((x, y));
                }
            }
        }
        Self { n, edges, index }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn position(&self, x: usize, y: usize) -> Option<usize> {
        self.index.get(&(x, y)).copied()
    }
}

impl<T: Scalar> EdgeFunction<T> {
    pub fn zero(es: &EdgeSet) -> Self {
        Self { values: vec![T::zero(); es.len()], antisymmetric: false }
    }

    pub fn from_values(values: Vec<T>, es: &EdgeSet) -> Result<Self> {
        if values.len() != es.len() {
            return Err(Error::Shape("edge function length mismatch".into()));
        }
        Ok(Self { values, antisymmetric: false })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Value at the directed pair (x,y): the stored value on edges; on
    /// non-edges, −F(y,x) for gradients and 0 otherwise.
    pub fn at(&self, es: &EdgeSet, x: usize, y: usize) -> T {
        if let Some(i) = es.position(x, y) {
            return self.values[i];
        }
        if self.antisymmetric {
            if let Some(i) = es.position(y, x) {
                return -self.values[i];
            }
        }
        T::zero()
    }
}

impl<T: Scalar> EdgeMeasure<T> {
    pub fn from_weights(weights: Vec<T>, es: &EdgeSet) -> Result<Self> {
        if weights.len() != es.len() {
            return Err(Error::Shape("edge measure length mismatch".into()));
        }
        if weights.iter().any(|&w| !(w > T::zero()) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "edge measure must be strictly positive".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn at(&self, es: &EdgeSet, x: usize, y: usize) -> T {
        es.position(x, y).map_or(T::zero(), |i| self.weights[i])
    }

    /// Pointwise product, e.g. the measure ϑ_ℓ·C of the weighted norms.
    pub fn scaled_by(&self, other: &EdgeMeasure<T>) -> EdgeMeasure<T> {
        EdgeMeasure {
            weights: self
                .weights
                .iter()
                .zip(other.weights.iter())
                .map(|(&a, &b)| a * b)
                .collect(),
        }
    }
}

/// Discrete gradient ∇f(x,y) = f(y) − f(x).
pub fn grad<T: Scalar>(f: &NodeFunction<T>, es: &EdgeSet) -> EdgeFunction<T> {
    EdgeFunction {
        values: es.edges().iter().map(|&(x, y)| f[y] - f[x]).collect(),
        antisymmetric: true,
    }
}

/// Discrete divergence (∇·F)(x) = ½ Σ_{y≠x} κ(x,y)[F(x,y) − F(y,x)].
pub fn div<T: Scalar>(f: &EdgeFunction<T>, es: &EdgeSet, gen: &Generator<T>) -> NodeFunction<T> {
    let mut out = Array1::zeros(gen.n());
    let half = T::of(0.5);
    for (i, &(x, y)) in es.edges().iter().enumerate() {
        let forward = f.values[i];
        let backward = f.at(es, y, x);
        out[x] = out[x] + half * gen.rate(x, y) * (forward - backward);
    }
    out
}

/// Conductances c(x,y) = ½ κ(x,y) q(x) on the edge set.
pub fn conductances<T: Scalar>(
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
    es: &EdgeSet,
) -> EdgeMeasure<T> {
    let half = T::of(0.5);
    EdgeMeasure {
        weights: es
            .edges()
            .iter()
            .map(|&(x, y)| half * gen.rate(x, y) * q.get(x))
            .collect(),
    }
}

/// ⟨f, g⟩_{L²(𝒮,Q)} = Σ_x q(x) f(x) g(x).
pub fn l2_inner<T: Scalar>(
    f: &NodeFunction<T>,
    g: &NodeFunction<T>,
    q: &ProbabilityVector<T>,
) -> T {
    f.iter()
        .zip(g.iter())
        .zip(q.as_array().iter())
        .map(|((&f, &g), &q)| q * f * g)
        .sum()
}

/// ⟨F, G⟩_{L²(𝒵,C)} = Σ_edges c(x,y) F(x,y) G(x,y).
pub fn l2_edge_inner<T: Scalar>(
    f: &EdgeFunction<T>,
    g: &EdgeFunction<T>,
    c: &EdgeMeasure<T>,
) -> T {
    f.values
        .iter()
        .zip(g.values.iter())
        .zip(c.weights.iter())
        .map(|((&f, &g), &c)| c * f * g)
        .sum()
}

/// Bilinear Dirichlet form ℰ(f,g) = −⟨f, 𝒦g⟩_{L²(𝒮,Q)}.
///
/// Not symmetric without detailed balance; ℰ(f,f) ≥ 0 always.
pub fn dirichlet_form<T: Scalar>(
    f: &NodeFunction<T>,
    g: &NodeFunction<T>,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> T {
    let kg = gen.apply(g);
    -l2_inner(f, &kg, q)
}

/// The mixed-square route to the same value,
/// ℰ(f,g) = ½ Σ_x Σ_y κ(y,x) q(y) (f(y) − g(x))²,
/// kept as an independent algebraic path for cross-checking.
pub fn dirichlet_form_mixed_square<T: Scalar>(
    f: &NodeFunction<T>,
    g: &NodeFunction<T>,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> T {
    let n = gen.n();
    let mut acc = T::zero();
    for y in 0..n {
        for x in 0..n {
            let d = f[y] - g[x];
            acc = acc + gen.rate(y, x) * q.get(y) * d * d;
        }
    }
    acc * T::of(0.5)
}

/// ‖f‖_{H¹(𝒮,Q)} = √ℰ(f,f); a Hilbert seminorm with or without detailed
/// balance (constants span the kernel).
pub fn h1_norm<T: Scalar>(f: &NodeFunction<T>, gen: &Generator<T>, q: &ProbabilityVector<T>) -> T {
    dirichlet_form(f, f, gen, q).max(T::zero()).sqrt()
}

/// H¹ inner product ⟨∇f, ∇g⟩_{L²(𝒵,C)}. Under detailed balance this equals
/// the Dirichlet form ℰ(f,g); in general it is the symmetrized form
/// ℰ_sym(f,g) whose quadratic part agrees with ℰ(f,f).
pub fn h1_inner<T: Scalar>(
    f: &NodeFunction<T>,
    g: &NodeFunction<T>,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> T {
    let es = EdgeSet::from_generator(gen);
    let c = conductances(gen, q, &es);
    l2_edge_inner(&grad(f, &es), &grad(g, &es), &c)
}

fn require_detailed_balance<T: Scalar>(gen: &Generator<T>, q: &ProbabilityVector<T>) -> Result<()> {
    let report = gen.detailed_balance(q, tol::analytic::<T>() * gen.norm_inf().max(T::one()));
    if !report.holds {
        return Err(Error::DetailedBalanceRequired {
            violation: report.max_violation.to_f64_lossy(),
        });
    }
    Ok(())
}

fn require_mean_zero<T: Scalar>(f: &NodeFunction<T>, q: &ProbabilityVector<T>) -> Result<()> {
    let mean = l2_inner(f, &Array1::from_elem(f.len(), T::one()), q);
    let scale = f.iter().fold(T::one(), |acc, &v| acc.max(v.abs()));
    if mean.abs() > tol::structural::<T>() * scale {
        return Err(Error::NonzeroMean);
    }
    Ok(())
}

fn is_mean_zero<T: Scalar>(f: &NodeFunction<T>, q: &ProbabilityVector<T>) -> bool {
    require_mean_zero(f, q).is_ok()
}

/// Solve 𝒦g = f on the mean-zero slice (one Lagrange-multiplier row).
pub fn solve_poisson<T: Scalar>(
    f: &NodeFunction<T>,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<NodeFunction<T>> {
    require_mean_zero(f, q)?;
    let ones = Array1::from_elem(gen.n(), T::one());
    crate::linalg::bordered_solve(gen.rates(), f, &ones, T::zero())
}

/// ‖f‖_{H⁻¹(𝒮,Q)}: ‖∇(𝒦⁻¹f)‖_{L²(𝒵,C)} when Σ q·f = 0, +∞ otherwise.
/// Defined under detailed balance; rejected on other chains.
pub fn h_minus1_norm<T: Scalar>(
    f: &NodeFunction<T>,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    Ok(h_minus1_with_potential(f, gen, q)?.0)
}

/// H⁻¹ norm together with the potential g solving 𝒦g = f, which is also the
/// maximizer (up to sign and scale) of the dual characterization
/// sup_g ⟨f,g⟩_Q / ‖g‖_{H¹}. Returns (+∞, None) off the mean-zero slice.
pub fn h_minus1_with_potential<T: Scalar>(
    f: &NodeFunction<T>,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<(T, Option<NodeFunction<T>>)> {
    require_detailed_balance(gen, q)?;
    if !is_mean_zero(f, q) {
        return Ok((T::infinity(), None));
    }
    let g = solve_poisson(f, gen, q)?;
    let es = EdgeSet::from_generator(gen);
    let c = conductances(gen, q, &es);
    let dg = grad(&g, &es);
    let norm = l2_edge_inner(&dg, &dg, &c).max(T::zero()).sqrt();
    Ok((norm, Some(g)))
}

// ---------------------------------------------------------------------------
// Θ-weighted calculus
// ---------------------------------------------------------------------------

/// Generalized logarithmic mean Θ^Φ(a,b) = (a−b)/(φ(a)−φ(b)) with the
/// diagonal value 1/Φ″(a); the diagonal formula takes over whenever
/// |φ(a)−φ(b)| < 1e-8·(1+|φ(a)|) to avoid cancellation.
pub fn theta_weight<T: Scalar>(a: T, b: T, phi: Phi) -> Result<T> {
    if !(a > T::zero()) || !(b > T::zero()) {
        return Err(Error::NonpositiveArgument);
    }
    let fa = phi.derivative(a);
    let fb = phi.derivative(b);
    let crossover = T::of(1e-8).max(T::epsilon() * T::of(32.0)) * (T::one() + fa.abs());
    if (fa - fb).abs() < crossover {
        let mid = (a + b) * T::of(0.5);
        Ok(T::one() / phi.second(mid))
    } else {
        Ok((a - b) / (fa - fb))
    }
}

/// Per-edge weights ϑ_ℓ(x,y) = Θ^Φ(ℓ(x), ℓ(y)); requires an interior ℓ.
pub fn vartheta_weights<T: Scalar>(
    ell: &LikelihoodVector<T>,
    phi: Phi,
    es: &EdgeSet,
) -> Result<EdgeMeasure<T>> {
    if !ell.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    let weights = es
        .edges()
        .iter()
        .map(|&(x, y)| theta_weight(ell.get(x), ell.get(y), phi))
        .collect::<Result<Vec<_>>>()?;
    EdgeMeasure::from_weights(weights, es)
}

/// Matrix of h ↦ ∇·(w ∇h) for a symmetric positive edge weight w: the
/// weighted Laplacian. With w ≡ 1 this is the generator itself
/// (concatenation formula).
pub fn weighted_divergence_matrix<T: Scalar>(
    w: &EdgeMeasure<T>,
    es: &EdgeSet,
    gen: &Generator<T>,
) -> Array2<T> {
    let n = gen.n();
    let half = T::of(0.5);
    let mut m = Array2::zeros((n, n));
    for (i, &(x, y)) in es.edges().iter().enumerate() {
        // ½ κ(x,y) [w(x,y) ∇h(x,y) − w(y,x) ∇h(y,x)], missing mirror = 0
        let coeff = half * gen.rate(x, y) * (w.weights[i] + w.at(es, y, x));
        m[[x, y]] = m[[x, y]] + coeff;
        m[[x, x]] = m[[x, x]] - coeff;
    }
    m
}

/// ⟨f, g⟩_{H¹_Θ(𝒮,ℓQ)} = ⟨∇f, ∇g⟩_{L²(𝒵,ϑ_ℓC)}. Detailed balance and an
/// interior ℓ are required.
pub fn weighted_h1_inner<T: Scalar>(
    f: &NodeFunction<T>,
    g: &NodeFunction<T>,
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    require_detailed_balance(gen, q)?;
    let es = EdgeSet::from_generator(gen);
    let vt = vartheta_weights(ell, phi, &es)?;
    let c = conductances(gen, q, &es).scaled_by(&vt);
    Ok(l2_edge_inner(&grad(f, &es), &grad(g, &es), &c))
}

/// ‖f‖_{H¹_Θ(𝒮,ℓQ)} = ‖∇f‖_{L²(𝒵,ϑ_ℓC)}.
pub fn weighted_h1_norm<T: Scalar>(
    f: &NodeFunction<T>,
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    Ok(weighted_h1_inner(f, f, ell, phi, gen, q)?.max(T::zero()).sqrt())
}

/// ‖f‖_{H⁻¹_Θ(𝒮,ℓQ)} with the optimal potential h of the variational
/// characterization: f + ∇·(ϑ_ℓ ∇h) = 0 and the norm is ‖∇h‖_{L²(𝒵,ϑ_ℓC)}.
/// Finite exactly on the mean-zero slice; (+∞, None) otherwise.
pub fn weighted_h_minus1_with_potential<T: Scalar>(
    f: &NodeFunction<T>,
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<(T, Option<NodeFunction<T>>)> {
    require_detailed_balance(gen, q)?;
    let es = EdgeSet::from_generator(gen);
    let vt = vartheta_weights(ell, phi, &es)?;
    if !is_mean_zero(f, q) {
        return Ok((T::infinity(), None));
    }
    let m = weighted_divergence_matrix(&vt, &es, gen);
    let rhs = f.mapv(|v| -v);
    let ones = Array1::from_elem(gen.n(), T::one());
    let h = crate::linalg::bordered_solve(&m, &rhs, &ones, T::zero())?;
    let c = conductances(gen, q, &es).scaled_by(&vt);
    let dh = grad(&h, &es);
    let norm = l2_edge_inner(&dh, &dh, &c).max(T::zero()).sqrt();
    Ok((norm, Some(h)))
}

/// Convenience wrapper returning the weighted dual norm only.
pub fn weighted_h_minus1_norm<T: Scalar>(
    f: &NodeFunction<T>,
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    Ok(weighted_h_minus1_with_potential(f, ell, phi, gen, q)?.0)
}

/// Modified weighted dual norm
/// ⟨(1/ϑ_ℓ)∇(𝒦⁻¹f), ∇(𝒦⁻¹f)⟩_{L²(𝒵,C)}^{1/2}; never smaller than the
/// standard weighted H⁻¹ norm, with equality at f = 𝒦ℓ. Requires a
/// mean-zero f.
pub fn modified_h_minus1_norm<T: Scalar>(
    f: &NodeFunction<T>,
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    require_detailed_balance(gen, q)?;
    let es = EdgeSet::from_generator(gen);
    let vt = vartheta_weights(ell, phi, &es)?;
    require_mean_zero(f, q)?;
    let g = solve_poisson(f, gen, q)?;
    let dg = grad(&g, &es);
    let c = conductances(gen, q, &es);
    let sq: T = dg
        .values()
        .iter()
        .zip(c.weights().iter())
        .zip(vt.weights().iter())
        .map(|((&d, &c), &t)| c * d * d / t)
        .sum();
    Ok(sq.max(T::zero()).sqrt())
}
