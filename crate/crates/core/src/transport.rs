//! The discrete transport geometry of reversible chains: the Θ-weighted
//! Riemannian metric on likelihood space, the gradient-flow identity
//! ∇·(ϑ_ℓ∇φ(ℓ)) = 𝒦ℓ, the de Giorgi energy-dissipation inequality,
//! steepest-descent experiments, Benamou–Brenier geodesics by reduced
//! kinetic-action minimization, Ricci lower-bound estimation from midpoint
//! convexity, and the HWI inequality.
//!
//! Everything here requires detailed balance; constructors reject other
//! chains. Sign convention for potentials: a tangent δℓ and its potential ψ
//! are linked by the discrete continuity equation δℓ + ∇·(ϑ_ℓ∇ψ) = 0, under
//! which the chain's own motion corresponds to ψ = −φ(ℓ).

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{grad, EdgeFunction, EdgeSet};
use crate::chain::{Generator, LikelihoodVector, ProbabilityVector};
use crate::entropy::{phi_entropy_of_likelihood, Phi};
use crate::error::{Error, Result};
use crate::linalg::bordered_solve;
use crate::opt::{lbfgs, LbfgsOptions};
use crate::scalar::Scalar;
use crate::tol;

// ---------------------------------------------------------------------------
// Geometry: precomputed edge structure for one (chain, Φ) pair
// ---------------------------------------------------------------------------

/// Precomputed edge structure (edge list, conductances, mirror indices) for
/// the Θ-weighted geometry of one reversible chain and one entropy Φ.
pub struct Geometry<'a, T: Scalar> {
    gen: &'a Generator<T>,
    q: &'a ProbabilityVector<T>,
    phi: Phi,
    edges: Vec<(usize, usize)>,
    /// c(x,y) = ½ κ(x,y) q(x)
    cond: Vec<T>,
    edge_set: EdgeSet,
}

impl<'a, T: Scalar> Geometry<'a, T> {
    pub fn new(gen: &'a Generator<T>, q: &'a ProbabilityVector<T>, phi: Phi) -> Result<Self> {
        let report =
            gen.detailed_balance(q, tol::analytic::<T>() * gen.norm_inf().max(T::one()));
        if !report.holds {
            return Err(Error::DetailedBalanceRequired {
                violation: report.max_violation.to_f64_lossy(),
            });
        }
        let edge_set = EdgeSet::from_generator(gen);
        let edges: Vec<(usize, usize)> = edge_set.edges().to_vec();
        let half = T::of(0.5);
        let cond = edges.iter().map(|&(x, y)| half * gen.rate(x, y) * q.get(x)).collect();
        Ok(Self { gen, q, phi, edges, cond, edge_set })
    }

    pub fn phi(&self) -> Phi {
        self.phi
    }

    pub fn edge_set(&self) -> &EdgeSet {
        &self.edge_set
    }

    fn n(&self) -> usize {
        self.gen.n()
    }

    /// ϑ_ℓ per edge; requires strictly positive ℓ entries.
    fn vartheta(&self, ell: &Array1<T>) -> Result<Vec<T>> {
        if ell.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::BoundaryLikelihood);
        }
        self.edges
            .iter()
            .map(|&(x, y)| crate::calculus::theta_weight(ell[x], ell[y], self.phi))
            .collect()
    }

    /// Weighted generator 𝒦_ϑ: h ↦ ∇·(ϑ∇h). Under detailed balance both
    /// edge directions exist and ϑ is symmetric, so the assembly is
    /// row-wise κ(x,y)·ϑ(x,y).
    fn weighted_matrix(&self, vt: &[T]) -> Array2<T> {
        let n = self.n();
        let mut m = Array2::zeros((n, n));
        for (i, &(x, y)) in self.edges.iter().enumerate() {
            let coeff = self.gen.rate(x, y) * vt[i];
            m[[x, y]] = m[[x, y]] + coeff;
            m[[x, x]] = m[[x, x]] - coeff;
        }
        m
    }

    /// Potential of a tangent: solve δℓ + 𝒦_ϑ ψ = 0 with Σψ = 0.
    fn solve_potential(&self, vt: &[T], delta: &Array1<T>) -> Result<Array1<T>> {
        let m = self.weighted_matrix(vt);
        let rhs = delta.mapv(|v| -v);
        let ones = Array1::from_elem(self.n(), T::one());
        bordered_solve(&m, &rhs, &ones, T::zero())
    }

    /// ⟨f, g⟩_{H¹_Θ} = Σ_e c_e ϑ_e ∇f_e ∇g_e.
    fn h1_theta_inner(&self, vt: &[T], f: &Array1<T>, g: &Array1<T>) -> T {
        let mut acc = T::zero();
        for (i, &(x, y)) in self.edges.iter().enumerate() {
            acc = acc + self.cond[i] * vt[i] * (f[y] - f[x]) * (g[y] - g[x]);
        }
        acc
    }

    fn h1_theta_norm_sq(&self, vt: &[T], f: &Array1<T>) -> T {
        self.h1_theta_inner(vt, f, f).max(T::zero())
    }
}

// ---------------------------------------------------------------------------
// Tangent vectors
// ---------------------------------------------------------------------------

/// A tangent to likelihood space at ℓ: the density increment δℓ (mean-zero
/// under Q), its potential ψ from the continuity equation
/// δℓ + ∇·(ϑ_ℓ ∇ψ) = 0, and the velocity field ∇ψ.
#[derive(Debug, Clone)]
pub struct TangentRepresentation<T: Scalar> {
    delta_ell: Array1<T>,
    potential: Array1<T>,
    velocity: EdgeFunction<T>,
}

impl<T: Scalar> TangentRepresentation<T> {
    /// Build from a density increment; fails on nonzero Q-mean and verifies
    /// the continuity-equation residual after the solve.
    pub fn from_delta(
        ell: &LikelihoodVector<T>,
        delta_ell: Array1<T>,
        phi: Phi,
        gen: &Generator<T>,
        q: &ProbabilityVector<T>,
    ) -> Result<Self> {
        let geo = Geometry::new(gen, q, phi)?;
        if !ell.is_interior() {
            return Err(Error::BoundaryLikelihood);
        }
        let mean: T =
            delta_ell.iter().zip(q.as_array().iter()).map(|(&d, &qx)| d * qx).sum();
        let scale = delta_ell.iter().fold(T::one(), |acc, &v| acc.max(v.abs()));
        if mean.abs() > tol::structural::<T>() * T::of(1e2) * scale {
            return Err(Error::BadTangent(format!(
                "delta has Q-mean {:e}",
                mean.to_f64_lossy()
            )));
        }
        let vt = geo.vartheta(ell.as_array())?;
        let potential = geo.solve_potential(&vt, &delta_ell)?;
        // continuity residual δℓ + ∇·(ϑ∇ψ) must vanish
        let residual = {
            let m = geo.weighted_matrix(&vt);
            let field = m.dot(&potential);
            delta_ell
                .iter()
                .zip(field.iter())
                .fold(T::zero(), |acc, (&d, &f)| acc.max((d + f).abs()))
        };
        if residual > T::of(1e-10) * gen.norm_inf().max(T::one()) * scale.max(T::one()) {
            return Err(Error::BadTangent(format!(
                "continuity residual {:e}",
                residual.to_f64_lossy()
            )));
        }
        let velocity = grad(&potential, geo.edge_set());
        Ok(Self { delta_ell, potential, velocity })
    }

    /// Build from a potential: δℓ := −∇·(ϑ_ℓ ∇ψ).
    pub fn from_potential(
        ell: &LikelihoodVector<T>,
        potential: Array1<T>,
        phi: Phi,
        gen: &Generator<T>,
        q: &ProbabilityVector<T>,
    ) -> Result<Self> {
        let geo = Geometry::new(gen, q, phi)?;
        if !ell.is_interior() {
            return Err(Error::BoundaryLikelihood);
        }
        let vt = geo.vartheta(ell.as_array())?;
        let m = geo.weighted_matrix(&vt);
        let delta_ell = m.dot(&potential).mapv(|v| -v);
        let velocity = grad(&potential, geo.edge_set());
        Ok(Self { delta_ell, potential, velocity })
    }

    pub fn delta_ell(&self) -> &Array1<T> {
        &self.delta_ell
    }

    pub fn potential(&self) -> &Array1<T> {
        &self.potential
    }

    pub fn velocity(&self) -> &EdgeFunction<T> {
        &self.velocity
    }
}

/// Riemannian metric g_ℓ(δℓ₁, δℓ₂) = ⟨∇ψ₁, ∇ψ₂⟩_{L²(𝒵,ϑ_ℓC)}; for
/// δℓ₁ = δℓ₂ this is the squared weighted H⁻¹ norm of the increment.
pub fn riemannian_metric<T: Scalar>(
    ell: &LikelihoodVector<T>,
    d1: &TangentRepresentation<T>,
    d2: &TangentRepresentation<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    let geo = Geometry::new(gen, q, phi)?;
    if !ell.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    if d1.potential.len() != gen.n() || d2.potential.len() != gen.n() {
        return Err(Error::BadTangent("dimension mismatch".into()));
    }
    let vt = geo.vartheta(ell.as_array())?;
    Ok(geo.h1_theta_inner(&vt, &d1.potential, &d2.potential))
}

/// The metric gradient field ∇·(ϑ_ℓ ∇(D_ℓF)) of a functional with
/// L²(Q)-derivative `functional_derivative`. With D_ℓF = φ(ℓ) the result is
/// exactly 𝒦ℓ: the Kolmogorov dynamics are the Φ-entropy gradient flow.
pub fn gradient_flow_field<T: Scalar>(
    ell: &LikelihoodVector<T>,
    functional_derivative: &Array1<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<Array1<T>> {
    let geo = Geometry::new(gen, q, phi)?;
    if !ell.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    let vt = geo.vartheta(ell.as_array())?;
    let m = geo.weighted_matrix(&vt);
    Ok(m.dot(functional_derivative))
}

/// de Giorgi gap 2∂H^Φ + ‖δℓ‖²_{H⁻¹_Θ} + ‖φ(ℓ)‖²_{H¹_Θ}
///             = 2⟨φ(ℓ), ψ⟩_{H¹_Θ} + ‖ψ‖²_{H¹_Θ} + ‖φ(ℓ)‖²_{H¹_Θ}
///             = ‖ψ + φ(ℓ)‖²_{H¹_Θ} ≥ 0,
/// zero exactly when ∇ψ = −∇φ(ℓ), i.e. on the gradient-flow tangent.
pub fn edi_gap<T: Scalar>(
    ell: &LikelihoodVector<T>,
    tangent: &TangentRepresentation<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    let geo = Geometry::new(gen, q, phi)?;
    if !ell.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    let vt = geo.vartheta(ell.as_array())?;
    let phil = ell.as_array().mapv(|v| phi.derivative(v));
    let psi = &tangent.potential;
    Ok(T::of(2.0) * geo.h1_theta_inner(&vt, &phil, psi)
        + geo.h1_theta_norm_sq(&vt, psi)
        + geo.h1_theta_norm_sq(&vt, &phil))
}

/// Per-perturbation outcome of the steepest-descent experiment.
#[derive(Debug, Clone, Serialize)]
pub struct DescentReport<T> {
    /// −‖φ(ℓ₀)‖_{H¹_Θ}: the slope of the chain's own direction
    pub chain_slope: T,
    /// metric-normalized initial entropy slopes ⟨φ(ℓ₀), ψ/‖ψ‖⟩
    pub slopes: Vec<T>,
    /// slope − chain_slope, each ≥ 0 up to roundoff
    pub margins: Vec<T>,
    /// perturbations whose gradient is a negative multiple of ∇φ(ℓ₀)
    pub gradient_equivalent: Vec<bool>,
    pub min_margin: T,
}

/// Compare the normalized initial entropy slope of arbitrary perturbations ψ
/// against the chain's own direction ψ* = −φ(ℓ₀), which attains the minimum
/// −‖φ(ℓ₀)‖ by Cauchy–Schwarz.
pub fn steepest_descent_experiment<T: Scalar>(
    ell0: &LikelihoodVector<T>,
    perturbations: &[Array1<T>],
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<DescentReport<T>> {
    let geo = Geometry::new(gen, q, phi)?;
    if !ell0.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    let vt = geo.vartheta(ell0.as_array())?;
    let phil = ell0.as_array().mapv(|v| phi.derivative(v));
    let phil_norm = geo.h1_theta_norm_sq(&vt, &phil).sqrt();
    let chain_slope = -phil_norm;
    let mut slopes = Vec::with_capacity(perturbations.len());
    let mut margins = Vec::with_capacity(perturbations.len());
    let mut gradient_equivalent = Vec::with_capacity(perturbations.len());
    let mut min_margin = T::infinity();
    for psi in perturbations {
        let norm = geo.h1_theta_norm_sq(&vt, psi).sqrt();
        if !(norm > T::of(1e-14)) {
            return Err(Error::InvalidArgument(
                "perturbations must be non-constant".into(),
            ));
        }
        let slope = geo.h1_theta_inner(&vt, &phil, psi) / norm;
        let margin = slope - chain_slope;
        let cos = slope / phil_norm;
        gradient_equivalent.push((cos + T::one()).abs() <= T::of(1e-9));
        slopes.push(slope);
        margins.push(margin);
        min_margin = min_margin.min(margin);
    }
    Ok(DescentReport { chain_slope, slopes, margins, gradient_equivalent, min_margin })
}

// ---------------------------------------------------------------------------
// Benamou–Brenier geodesics
// ---------------------------------------------------------------------------

/// Options for the geodesic action minimizer.
#[derive(Debug, Clone, Copy)]
pub struct GeodesicOptions {
    /// stationarity target: ‖∇A‖_∞ ≤ kkt_tol · max(1, A)
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// ε-floor applied to boundary endpoints (with boundary_flag set)
    pub boundary_floor: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self { kkt_tol: 1e-7, max_iter: 800, restarts: 4, seed: 0, boundary_floor: 1e-9 }
    }
}

/// A computed geodesic: distance, interpolating likelihoods at the N+1
/// slices, potentials at the N midpoints, per-slice kinetic actions and the
/// optimizer's stationarity residual.
#[derive(Debug, Clone)]
pub struct GeodesicResult<T: Scalar> {
    pub distance: T,
    pub likelihoods: Vec<Array1<T>>,
    pub potentials: Vec<Array1<T>>,
    pub slice_actions: Vec<T>,
    pub action_residual: T,
    pub boundary_flag: bool,
    pub reparametrized: bool,
}

impl<T: Scalar> GeodesicResult<T> {
    pub fn slices(&self) -> usize {
        self.potentials.len()
    }

    /// The probability path P_k = ℓ_k Q.
    pub fn probabilities(&self, q: &ProbabilityVector<T>) -> Result<Vec<ProbabilityVector<T>>> {
        self.likelihoods
            .iter()
            .map(|l| {
                LikelihoodVector::new(l.clone(), q).and_then(|lv| lv.to_probability(q))
            })
            .collect()
    }

    /// Φ-entropy along the path.
    pub fn entropies(&self, q: &ProbabilityVector<T>, phi: Phi) -> Result<Vec<T>> {
        self.likelihoods
            .iter()
            .map(|l| {
                let lv = LikelihoodVector::new(l.clone(), q)?;
                phi_entropy_of_likelihood(&lv, q, phi)
            })
            .collect()
    }

    /// Relative spread of the per-slice actions (zero for constant speed).
    pub fn speed_variation(&self) -> T {
        let n = T::of(self.slice_actions.len() as f64);
        let mean: T = self.slice_actions.iter().copied().sum::<T>() / n;
        if !(mean > T::zero()) {
            return T::zero();
        }
        let var: T = self
            .slice_actions
            .iter()
            .map(|&a| (a - mean) * (a - mean))
            .sum::<T>()
            / n;
        var.sqrt() / mean
    }
}

struct ActionProblem<'g, 'a, T: Scalar> {
    geo: &'g Geometry<'a, T>,
    ell0: Array1<T>,
    ell1: Array1<T>,
    n_slices: usize,
    dt: T,
}

impl<'g, 'a, T: Scalar> ActionProblem<'g, 'a, T> {
    /// Interior slices from the log parametrization, each normalized to
    /// Q-mean one.
    fn unpack(&self, u: &[T]) -> Vec<Array1<T>> {
        let n = self.geo.n();
        let mut out = Vec::with_capacity(self.n_slices.saturating_sub(1));
        for k in 0..(self.n_slices - 1) {
            let slice = &u[k * n..(k + 1) * n];
            let umax = slice.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
            let raw: Vec<T> = slice.iter().map(|&v| (v - umax).exp()).collect();
            let z: T = raw
                .iter()
                .zip(self.geo.q.as_array().iter())
                .map(|(&r, &qx)| r * qx)
                .sum();
            out.push(Array1::from_iter(raw.iter().map(|&r| r / z)));
        }
        out
    }

    fn path<'s>(&'s self, interior: &'s [Array1<T>]) -> impl Iterator<Item = &'s Array1<T>> {
        std::iter::once(&self.ell0).chain(interior.iter()).chain(std::iter::once(&self.ell1))
    }

    /// Action A = Σ_k Δt·‖ψ_k‖²_{H¹_Θ(ϑ_k)} with the midpoint weights
    /// ϑ_k = Θ^Φ((ℓ_k+ℓ_{k+1})/2) and ψ_k solving the slicewise continuity
    /// equation. Optionally returns the per-midpoint data for gradients.
    fn action(&self, interior: &[Array1<T>]) -> Result<(T, Vec<MidpointData<T>>)> {
        let path: Vec<&Array1<T>> = self.path(interior).collect();
        let half = T::of(0.5);
        let mut total = T::zero();
        let mut mids = Vec::with_capacity(self.n_slices);
        for k in 0..self.n_slices {
            let (a, b) = (path[k], path[k + 1]);
            let mid = Array1::from_iter(a.iter().zip(b.iter()).map(|(&x, &y)| half * (x + y)));
            let vt = self.geo.vartheta(&mid)?;
            let rate = Array1::from_iter(
                a.iter().zip(b.iter()).map(|(&x, &y)| (y - x) / self.dt),
            );
            let psi = self.geo.solve_potential(&vt, &rate)?;
            let a_k = self.geo.h1_theta_norm_sq(&vt, &psi);
            total = total + self.dt * a_k;
            mids.push(MidpointData { mid, psi, action: self.dt * a_k });
        }
        Ok((total, mids))
    }

    /// Analytic gradient of the action with respect to the log-parameters of
    /// the interior slices. For each midpoint, at fixed weights the action
    /// is ⟨ψ, r⟩_Q-quadratic in the rate r (self-adjoint solve), and at
    /// fixed rate the weight-sensitivity is −Δt Σ_e c_e (∇ψ_e)² dϑ_e.
    fn gradient(&self, interior: &[Array1<T>], mids: &[MidpointData<T>]) -> Vec<T> {
        let n = self.geo.n();
        let q = self.geo.q.as_array();
        let two = T::of(2.0);
        let half = T::of(0.5);
        // dA/dℓ_j for interior slices j = 1..N−1 (index j-1 here)
        let mut dl = vec![Array1::<T>::zeros(n); self.n_slices - 1];
        for (j, dlj) in dl.iter_mut().enumerate() {
            let before = &mids[j]; // midpoint (j, j+1) in slice numbering
            let after = &mids[j + 1];
            for x in 0..n {
                // rate dependence: r_{j} has −ℓ_{j+1}… sign bookkeeping:
                // A_k = Δt⟨ψ_k, r_k⟩_Q, r_k = (ℓ_{k+1}−ℓ_k)/Δt; slice j+1 in
                // path numbering enters r_j with +, r_{j+1} with −.
                dlj[x] = two * q[x] * (before.psi[x] - after.psi[x]);
            }
            // weight dependence through the midpoints' ϑ
            for (k, mdata) in [(j, before), (j + 1, after)] {
                let _ = k;
                for (i, &(x, y)) in self.geo.edges.iter().enumerate() {
                    let dpsi = mdata.psi[y] - mdata.psi[x];
                    let sens = -self.dt * self.geo.cond[i] * dpsi * dpsi;
                    let (da, db) = theta_partials(mdata.mid[x], mdata.mid[y], self.geo.phi);
                    dlj[x] = dlj[x] + sens * da * half;
                    dlj[y] = dlj[y] + sens * db * half;
                }
            }
        }
        // chain rule through the normalized log parametrization:
        // ∂ℓ(x)/∂u(y) = ℓ(x)(δ_{xy} − q(y)ℓ(y))
        let mut grad = vec![T::zero(); (self.n_slices - 1) * n];
        for (j, dlj) in dl.iter().enumerate() {
            let ell = &interior[j];
            let weighted: T = (0..n).map(|x| dlj[x] * ell[x]).sum();
            for y in 0..n {
                grad[j * n + y] = ell[y] * (dlj[y] - q[y] * weighted);
            }
        }
        grad
    }
}

struct MidpointData<T: Scalar> {
    mid: Array1<T>,
    psi: Array1<T>,
    action: T,
}

/// ∂Θ^Φ/∂a and ∂Θ^Φ/∂b, with the same diagonal crossover as the weight
/// itself (the limit needs Φ‴).
fn theta_partials<T: Scalar>(a: T, b: T, phi: Phi) -> (T, T) {
    let fa = phi.derivative(a);
    let fb = phi.derivative(b);
    let crossover = T::of(1e-8).max(T::epsilon() * T::of(32.0)) * (T::one() + fa.abs());
    if (fa - fb).abs() < crossover {
        let mid = (a + b) * T::of(0.5);
        let d2 = phi.second(mid);
        let d3 = phi.third(mid);
        let slope = -d3 / (T::of(2.0) * d2 * d2);
        (slope, slope)
    } else {
        let diff = fa - fb;
        let da = (diff - (a - b) * phi.second(a)) / (diff * diff);
        let db = (-diff + (a - b) * phi.second(b)) / (diff * diff);
        (da, db)
    }
}

fn floor_likelihood<T: Scalar>(
    p: &ProbabilityVector<T>,
    q: &ProbabilityVector<T>,
    floor: T,
) -> (Array1<T>, bool) {
    let raw = Array1::from_iter(
        p.as_array().iter().zip(q.as_array().iter()).map(|(&px, &qx)| px / qx),
    );
    if raw.iter().all(|&v| v >= floor) {
        return (raw, false);
    }
    let floored = raw.mapv(|v| v.max(floor));
    let z: T = floored.iter().zip(q.as_array().iter()).map(|(&l, &qx)| l * qx).sum();
    (floored.mapv(|v| v / z), true)
}

/// Geodesic distance 𝒲(p0, p1) and the interpolating path, by reduced
/// kinetic-action minimization: the interior slice likelihoods are the only
/// unknowns (log-parametrized), each midpoint potential being determined by
/// its continuity equation. Boundary endpoints are ε-floored and flagged.
pub fn benamou_brenier<T: Scalar>(
    p0: &ProbabilityVector<T>,
    p1: &ProbabilityVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
    n_slices: usize,
    opts: &GeodesicOptions,
) -> Result<GeodesicResult<T>> {
    let geo = Geometry::new(gen, q, phi)?;
    if n_slices < 2 {
        return Err(Error::InvalidArgument("need at least two slices".into()));
    }
    if p0.len() != gen.n() || p1.len() != gen.n() {
        return Err(Error::Shape("endpoint dimension mismatch".into()));
    }
    let floor = T::of(opts.boundary_floor);
    let (ell0, flag0) = floor_likelihood(p0, q, floor);
    let (ell1, flag1) = floor_likelihood(p1, q, floor);
    let boundary_flag = flag0 || flag1;
    let n = gen.n();

    // coincident endpoints: the constant path with zero potentials
    if ell0
        .iter()
        .zip(ell1.iter())
        .all(|(&a, &b)| (a - b).abs() <= T::of(1e-14) * (T::one() + a.abs()))
    {
        return Ok(GeodesicResult {
            distance: T::zero(),
            likelihoods: vec![ell0.clone(); n_slices + 1],
            potentials: vec![Array1::zeros(n); n_slices],
            slice_actions: vec![T::zero(); n_slices],
            action_residual: T::zero(),
            boundary_flag,
            reparametrized: false,
        });
    }

    let problem = ActionProblem {
        geo: &geo,
        ell0,
        ell1,
        n_slices,
        dt: T::one() / T::of(n_slices as f64),
    };

    let objective = |u: &[T]| -> T {
        match problem.unpack(u).as_slice() {
            interior => problem.action(interior).map(|(a, _)| a).unwrap_or(T::infinity()),
        }
    };
    let gradient_fn = |u: &[T]| -> Vec<T> {
        let interior = problem.unpack(u);
        match problem.action(&interior) {
            Ok((_, mids)) => problem.gradient(&interior, &mids),
            Err(_) => vec![T::zero(); u.len()],
        }
    };

    let make_start = |variant: usize| -> Vec<T> {
        let mut u = Vec::with_capacity((n_slices - 1) * n);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e0d_e51c);
        rng.set_stream(variant as u64);
        for k in 1..n_slices {
            let tau = T::of(k as f64) / T::of(n_slices as f64);
            for x in 0..n {
                let (a, b) = (problem.ell0[x], problem.ell1[x]);
                let v = match variant {
                    // linear interpolation in likelihood space
                    0 => ((T::one() - tau) * a + tau * b).ln(),
                    // geometric interpolation
                    1 => (T::one() - tau) * a.ln() + tau * b.ln(),
                    // seeded jitter on the linear path
                    _ => {
                        let noise = T::of(rng.gen_range(-0.1..0.1));
                        ((T::one() - tau) * a + tau * b).ln() + noise
                    }
                };
                u.push(v);
            }
        }
        u
    };

    let mut best: Option<(T, Vec<T>, T)> = None; // (action, u, scaled residual)
    for r in 0..opts.restarts.max(1) {
        let opts_l = LbfgsOptions {
            max_iter: opts.max_iter,
            grad_tol: T::zero(), // convergence judged on the scaled residual below
            ..Default::default()
        };
        // run in stages so we can apply the scaled test without threading it
        // through the optimizer: grad_tol scaled by the current value
        let mut u = make_start(r);
        let mut last_action = objective(&u);
        for _stage in 0..4 {
            let target = T::of(opts.kkt_tol) * last_action.max(T::one());
            let staged = LbfgsOptions { grad_tol: target, ..opts_l };
            let res = lbfgs(u, &objective, &gradient_fn, &staged);
            u = res.x;
            last_action = res.value;
            if res.converged {
                break;
            }
        }
        let g = gradient_fn(&u);
        let resid = g.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
            / last_action.max(T::one());
        let better = match &best {
            None => true,
            Some((a, _, _)) => last_action < *a,
        };
        if better {
            best = Some((last_action, u, resid));
        }
    }
    let (_, u, resid) = best.expect("at least one restart ran");
    if resid > T::of(opts.kkt_tol) * T::of(10.0) {
        return Err(Error::OptFailed(format!(
            "geodesic solver stalled at scaled residual {:e}",
            resid.to_f64_lossy()
        )));
    }

    let mut interior = problem.unpack(&u);
    let (mut action, mut mids) = problem.action(&interior)?;
    let mut reparametrized = false;

    // constant-speed check; one arc-length resample + re-optimize pass
    let speed_cv = speed_variation_of(&mids);
    if speed_cv > T::of(0.01) {
        if let Some((u2, interior2)) = reparametrize(&problem, &interior, &mids) {
            let opts_l = LbfgsOptions {
                max_iter: opts.max_iter,
                grad_tol: T::of(opts.kkt_tol) * action.max(T::one()),
                ..Default::default()
            };
            let res = lbfgs(u2, &objective, &gradient_fn, &opts_l);
            let interior_new = problem.unpack(&res.x);
            if let Ok((a2, m2)) = problem.action(&interior_new) {
                if a2 <= action {
                    interior = interior_new;
                    action = a2;
                    mids = m2;
                    reparametrized = true;
                }
            }
            drop(interior2);
        }
    }

    let mut likelihoods = Vec::with_capacity(n_slices + 1);
    likelihoods.push(problem.ell0.clone());
    likelihoods.extend(interior.iter().cloned());
    likelihoods.push(problem.ell1.clone());
    Ok(GeodesicResult {
        distance: action.max(T::zero()).sqrt(),
        likelihoods,
        potentials: mids.iter().map(|m| m.psi.clone()).collect(),
        slice_actions: mids.iter().map(|m| m.action).collect(),
        action_residual: resid,
        boundary_flag,
        reparametrized,
    })
}

fn speed_variation_of<T: Scalar>(mids: &[MidpointData<T>]) -> T {
    let n = T::of(mids.len() as f64);
    let mean: T = mids.iter().map(|m| m.action).sum::<T>() / n;
    if !(mean > T::zero()) {
        return T::zero();
    }
    let var: T = mids.iter().map(|m| (m.action - mean) * (m.action - mean)).sum::<T>() / n;
    var.sqrt() / mean
}

/// Resample the interior slices at uniform arc length (piecewise-linear in
/// likelihood space), returning the warm-start parameters.
fn reparametrize<T: Scalar>(
    problem: &ActionProblem<T>,
    interior: &[Array1<T>],
    mids: &[MidpointData<T>],
) -> Option<(Vec<T>, Vec<Array1<T>>)> {
    let n_slices = problem.n_slices;
    let mut cum = vec![T::zero(); n_slices + 1];
    for k in 0..n_slices {
        let speed = mids[k].action.max(T::zero()).sqrt();
        cum[k + 1] = cum[k] + speed;
    }
    let total = cum[n_slices];
    if !(total > T::zero()) {
        return None;
    }
    let path: Vec<&Array1<T>> = problem.path(interior).collect();
    let n = path[0].len();
    let mut u = Vec::with_capacity((n_slices - 1) * n);
    let mut new_interior = Vec::with_capacity(n_slices - 1);
    for i in 1..n_slices {
        let target = total * T::of(i as f64) / T::of(n_slices as f64);
        let k = cum.partition_point(|&c| c <= target).clamp(1, n_slices) - 1;
        let seg = (cum[k + 1] - cum[k]).max(T::min_positive_value());
        let frac = ((target - cum[k]) / seg).min(T::one()).max(T::zero());
        let mut ell = Array1::zeros(n);
        for x in 0..n {
            ell[x] = (T::one() - frac) * path[k][x] + frac * path[k + 1][x];
        }
        // renormalize mean under q and log-parametrize
        let z: T = ell
            .iter()
            .zip(problem.geo.q.as_array().iter())
            .map(|(&l, &qx)| l * qx)
            .sum();
        let ell = ell.mapv(|v| (v / z).max(T::of(1e-12)));
        for x in 0..n {
            u.push(ell[x].ln());
        }
        new_interior.push(ell);
    }
    Some((u, new_interior))
}

// ---------------------------------------------------------------------------
// Ricci estimation and HWI
// ---------------------------------------------------------------------------

/// Sampled upper estimate of the entropic Ricci lower bound.
#[derive(Debug, Clone, Serialize)]
pub struct RicciEstimate<T> {
    /// κ̂ = min over sampled geodesics of 8[½H₀+½H₁−H_{1/2}]/𝒲²; an UPPER
    /// bound on the true lower bound, not a certificate
    pub kappa_hat: T,
    pub evaluated: usize,
    pub skipped: usize,
}

fn midpoint_ratio<T: Scalar>(
    la: &LikelihoodVector<T>,
    lb: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
    n_slices: usize,
    opts: &GeodesicOptions,
) -> Result<Option<T>> {
    let pa = la.to_probability(q)?;
    let pb = lb.to_probability(q)?;
    let geo = benamou_brenier(&pa, &pb, phi, gen, q, n_slices, opts)?;
    if geo.distance < T::of(1e-6) {
        return Ok(None);
    }
    let hs = geo.entropies(q, phi)?;
    let h_mid = hs[n_slices / 2];
    let gap = T::of(0.5) * (hs[0] + hs[n_slices]) - h_mid;
    Ok(Some(T::of(8.0) * gap / (geo.distance * geo.distance)))
}

/// Estimate the Ricci lower bound from `samples` random endpoint pairs plus
/// an adaptive refinement stage around the running minimizer. Nested seeds:
/// a larger sample count extends (never replaces) a smaller one, so κ̂ is
/// monotone nonincreasing in `samples`.
pub fn ricci_lower_bound_estimate<T: Scalar>(
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
    phi: Phi,
    samples: usize,
    n_slices: usize,
    seed: u64,
    opts: &GeodesicOptions,
) -> Result<RicciEstimate<T>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if n_slices % 2 != 0 {
        return Err(Error::InvalidArgument(
            "midpoint entropies need an even slice count".into(),
        ));
    }
    let mut best: Option<(T, LikelihoodVector<T>, LikelihoodVector<T>)> = None;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for i in 0..samples as u64 {
        let la = crate::testkit::random_interior_likelihood::<T>(q, seed.wrapping_add(2 * i), 0.7);
        let lb =
            crate::testkit::random_interior_likelihood::<T>(q, seed.wrapping_add(2 * i + 1), 0.7);
        match midpoint_ratio(&la, &lb, phi, gen, q, n_slices, opts)? {
            None => skipped += 1,
            Some(ratio) => {
                evaluated += 1;
                if best.as_ref().map_or(true, |(b, _, _)| ratio < *b) {
                    best = Some((ratio, la, lb));
                }
            }
        }
    }
    let (mut kappa, mut arg_a, mut arg_b) =
        best.ok_or_else(|| Error::Infeasible("all sampled endpoint pairs coincided".into()))?;
    // local refinement: shrinking perturbations of the argmin pair
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51cc_1e57);
    for (round, sigma) in [0.3, 0.1, 0.03].into_iter().enumerate() {
        rng.set_stream(round as u64);
        for _ in 0..8 {
            let jitter = |l: &LikelihoodVector<T>, rng: &mut ChaCha8Rng| {
                let raw = Array1::from_iter(l.as_array().iter().map(|&v| {
                    let noise: f64 = rng.gen_range(-sigma..sigma);
                    v * T::of(noise.exp())
                }));
                let z: T = raw
                    .iter()
                    .zip(q.as_array().iter())
                    .map(|(&r, &qx)| r * qx)
                    .sum();
                LikelihoodVector::new(raw.mapv(|v| v / z), q).expect("jittered likelihood")
            };
            let ca = jitter(&arg_a, &mut rng);
            let cb = jitter(&arg_b, &mut rng);
            if let Some(ratio) = midpoint_ratio(&ca, &cb, phi, gen, q, n_slices, opts)? {
                evaluated += 1;
                if ratio < kappa {
                    kappa = ratio;
                    arg_a = ca;
                    arg_b = cb;
                }
            }
        }
    }
    Ok(RicciEstimate { kappa_hat: kappa, evaluated, skipped })
}

/// Where the κ used in an HWI check came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KappaSource {
    UserSupplied,
    Estimated,
}

/// One HWI evaluation: H^Φ(P₀|Q) − H^Φ(P₁|Q) ≤ √I^Φ(P₀)·𝒲 − (κ/2)𝒲².
#[derive(Debug, Clone, Serialize)]
pub struct HwiReport<T> {
    pub distance: T,
    pub fisher: T,
    pub entropy_p0: T,
    pub entropy_p1: T,
    pub lhs: T,
    pub rhs: T,
    /// rhs − lhs; the inequality holds when ≥ −tolerance
    pub slack: T,
    pub holds: bool,
    /// −⟨φ(ℓ₀), ψ₀/‖ψ₀‖⟩ from the first geodesic midpoint; ≤ √I^Φ by
    /// Cauchy–Schwarz
    pub sharp_bracket: T,
    pub sharp_rhs: T,
    pub kappa: T,
    pub kappa_source: KappaSource,
    /// combined optimizer/discretization allowance used for `holds`
    pub tolerance: T,
}

/// Evaluate the HWI inequality between two distributions with a given κ.
pub fn hwi_check<T: Scalar>(
    p0: &ProbabilityVector<T>,
    p1: &ProbabilityVector<T>,
    kappa: T,
    kappa_source: KappaSource,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
    n_slices: usize,
    opts: &GeodesicOptions,
) -> Result<HwiReport<T>> {
    if !p0.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    let geo = Geometry::new(gen, q, phi)?;
    let ell0 = p0.likelihood(q)?;
    let fisher = crate::entropy::fisher_information(&ell0, phi, gen, q)?;
    let h0 = phi_entropy_of_likelihood(&ell0, q, phi)?;
    let h1 = crate::entropy::phi_entropy(p1, q, phi)?;
    let geod = benamou_brenier(p0, p1, phi, gen, q, n_slices, opts)?;
    let w = geod.distance;
    let lhs = h0 - h1;
    let rhs = fisher.max(T::zero()).sqrt() * w - kappa * w * w / T::of(2.0);

    // sharp bracket from the first midpoint potential (sign per the
    // continuity-equation convention δℓ + ∇·(ϑ∇ψ) = 0)
    let vt0 = geo.vartheta(ell0.as_array())?;
    let phil = ell0.as_array().mapv(|v| phi.derivative(v));
    let psi0 = &geod.potentials[0];
    let psi_norm = geo.h1_theta_norm_sq(&vt0, psi0).sqrt();
    let sharp_bracket = if psi_norm > T::zero() {
        -geo.h1_theta_inner(&vt0, &phil, psi0) / psi_norm
    } else {
        T::zero()
    };
    let sharp_rhs = w * sharp_bracket - kappa * w * w / T::of(2.0);

    // discretization of W is O(N⁻²) relative; κ̂ carries the same scale
    let n2 = T::of((n_slices * n_slices) as f64);
    let tolerance = T::of(1e-8)
        + (fisher.max(T::zero()).sqrt() * w + kappa.abs() * w * w) * T::of(4.0) / n2;
    let slack = rhs - lhs;
    Ok(HwiReport {
        distance: w,
        fisher,
        entropy_p0: h0,
        entropy_p1: h1,
        lhs,
        rhs,
        slack,
        holds: slack >= -tolerance,
        sharp_bracket,
        sharp_rhs,
        kappa,
        kappa_source,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn setup(n: usize, seed: u64) -> (Generator<f64>, ProbabilityVector<f64>) {
        testkit::random_reversible::<f64>(n, seed)
    }

    #[test]
    fn geometry_rejects_unbalanced_chains() {
        let g = crate::chain::three_cycle::<f64>();
        let q = g.stationary_distribution().unwrap();
        assert!(matches!(
            Geometry::new(&g, &q, Phi::XLogX),
            Err(Error::DetailedBalanceRequired { .. })
        ));
    }

    #[test]
    fn tangent_round_trip_and_mean_check() {
        let (g, q) = setup(5, 1);
        let ell = testkit::random_interior_likelihood::<f64>(&q, 2, 0.7);
        let delta = testkit::random_mean_zero::<f64>(&q, 3);
        let t = TangentRepresentation::from_delta(&ell, delta.clone(), Phi::XLogX, &g, &q)
            .unwrap();
        // reconstruct δℓ from the potential
        let t2 =
            TangentRepresentation::from_potential(&ell, t.potential().clone(), Phi::XLogX, &g, &q)
                .unwrap();
        for x in 0..5 {
            assert!((t2.delta_ell()[x] - delta[x]).abs() < 1e-10);
        }
        // nonzero mean is rejected
        let bad = Array1::from_elem(5, 1.0);
        assert!(matches!(
            TangentRepresentation::from_delta(&ell, bad, Phi::XLogX, &g, &q),
            Err(Error::BadTangent(_))
        ));
    }

    #[test]
    fn metric_is_bilinear_and_matches_weighted_dual_norm() {
        let (g, q) = setup(4, 5);
        let ell = testkit::random_interior_likelihood::<f64>(&q, 7, 0.6);
        let phi = Phi::XLogX;
        let d1 = TangentRepresentation::from_delta(
            &ell,
            testkit::random_mean_zero::<f64>(&q, 11),
            phi,
            &g,
            &q,
        )
        .unwrap();
        let d2 = TangentRepresentation::from_delta(
            &ell,
            testkit::random_mean_zero::<f64>(&q, 12),
            phi,
            &g,
            &q,
        )
        .unwrap();
        let d3 = TangentRepresentation::from_delta(
            &ell,
            testkit::random_mean_zero::<f64>(&q, 13),
            phi,
            &g,
            &q,
        )
        .unwrap();
        // bilinearity through fresh tangents built from combined deltas
        let (a, b) = (0.7, -1.3);
        let combo = TangentRepresentation::from_delta(
            &ell,
            d1.delta_ell() * a + d2.delta_ell() * b,
            phi,
            &g,
            &q,
        )
        .unwrap();
        let lhs = riemannian_metric(&ell, &combo, &d3, phi, &g, &q).unwrap();
        let rhs = a * riemannian_metric(&ell, &d1, &d3, phi, &g, &q).unwrap()
            + b * riemannian_metric(&ell, &d2, &d3, phi, &g, &q).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        // diagonal = squared weighted H⁻¹ norm of the increment
        let gd = riemannian_metric(&ell, &d1, &d1, phi, &g, &q).unwrap();
        let dual =
            crate::calculus::weighted_h_minus1_norm(d1.delta_ell(), &ell, phi, &g, &q).unwrap();
        assert!((gd - dual * dual).abs() <= 1e-8 * (1.0 + gd));
        // zero tangent
        let zero = TangentRepresentation::from_delta(
            &ell,
            Array1::zeros(4),
            phi,
            &g,
            &q,
        )
        .unwrap();
        assert!(riemannian_metric(&ell, &zero, &zero, phi, &g, &q).unwrap().abs() < 1e-14);
    }

    #[test]
    fn metric_at_the_chain_tangent_is_the_fisher_information() {
        let (g, q) = setup(5, 21);
        for phi in [Phi::XLogX, Phi::Quadratic, Phi::renyi(2.0).unwrap()] {
            let ell = testkit::random_interior_likelihood::<f64>(&q, 31, 0.7);
            let kl = g.apply(ell.as_array());
            let t = TangentRepresentation::from_delta(&ell, kl, phi, &g, &q).unwrap();
            let gd = riemannian_metric(&ell, &t, &t, phi, &g, &q).unwrap();
            let i = crate::entropy::fisher_information(&ell, phi, &g, &q).unwrap();
            assert!((gd - i).abs() <= 1e-10 * (1.0 + i), "metric {gd} vs fisher {i}");
        }
    }

    #[test]
    fn gradient_flow_identity_maas_mielke() {
        for seed in 0..20u64 {
            let (g, q) = setup(2 + (seed % 4) as usize, seed + 100);
            for phi in [Phi::XLogX, Phi::Quadratic, Phi::renyi(2.5).unwrap()] {
                let ell = testkit::random_interior_likelihood::<f64>(&q, seed, 0.8);
                let phil = ell.as_array().mapv(|v| phi.derivative(v));
                let field = gradient_flow_field(&ell, &phil, phi, &g, &q).unwrap();
                let kl = g.apply(ell.as_array());
                for x in 0..g.n() {
                    assert!(
                        (field[x] - kl[x]).abs() <= 1e-10 * (1.0 + kl[x].abs()),
                        "gradient-flow identity failed (seed {seed}, {})",
                        phi.name()
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_flow_field_special_cases() {
        let (g, q) = setup(4, 300);
        let ell = testkit::random_interior_likelihood::<f64>(&q, 1, 0.7);
        // constant derivative → zero field
        let c = Array1::from_elem(4, 3.3);
        let field = gradient_flow_field(&ell, &c, Phi::XLogX, &g, &q).unwrap();
        assert!(field.iter().all(|v| v.abs() < 1e-12));
        // quadratic Φ: ϑ ≡ 1/2, field = ½𝒦(DF)
        let df = testkit::random_node_function::<f64>(4, 2);
        let field = gradient_flow_field(&ell, &df, Phi::Quadratic, &g, &q).unwrap();
        let k_df = g.apply(&df);
        for x in 0..4 {
            assert!((field[x] - 0.5 * k_df[x]).abs() < 1e-12 * (1.0 + k_df[x].abs()));
        }
    }

    #[test]
    fn edi_gap_nonnegative_zero_exactly_on_the_flow() {
        let (g, q) = setup(4, 400);
        let phi = Phi::XLogX;
        let ell = testkit::random_interior_likelihood::<f64>(&q, 3, 0.8);
        // gradient-flow tangent: ψ = −φ(ℓ)
        let psi_star = ell.as_array().mapv(|v| -phi.derivative(v));
        let t_star =
            TangentRepresentation::from_potential(&ell, psi_star, phi, &g, &q).unwrap();
        let gap = edi_gap(&ell, &t_star, phi, &g, &q).unwrap();
        assert!(gap.abs() <= 1e-10, "gap at the flow = {gap}");
        // random tangents have nonnegative gap (completing the square)
        for seed in 0..500u64 {
            let psi = testkit::random_node_function::<f64>(4, seed);
            let t = TangentRepresentation::from_potential(&ell, psi.clone(), phi, &g, &q)
                .unwrap();
            let gap = edi_gap(&ell, &t, phi, &g, &q).unwrap();
            assert!(gap >= -1e-10, "negative gap {gap} at seed {seed}");
            // oracle: the gap is ‖ψ + φ(ℓ)‖² in the weighted norm
            let sum = &psi + &ell.as_array().mapv(|v| phi.derivative(v));
            let direct =
                crate::calculus::weighted_h1_norm(&sum, &ell, phi, &g, &q).unwrap().powi(2);
            assert!((gap - direct).abs() <= 1e-9 * (1.0 + direct));
        }
        // stationary perturbation: ψ ≡ 0 gives ‖φ(ℓ)‖²
        let zero = TangentRepresentation::from_potential(&ell, Array1::zeros(4), phi, &g, &q)
            .unwrap();
        let gap0 = edi_gap(&ell, &zero, phi, &g, &q).unwrap();
        let phil = ell.as_array().mapv(|v| phi.derivative(v));
        let norm = crate::calculus::weighted_h1_norm(&phil, &ell, phi, &g, &q).unwrap();
        assert!((gap0 - norm * norm).abs() <= 1e-10 * (1.0 + gap0));
    }

    #[test]
    fn steepest_descent_chain_direction_wins() {
        let (g, q) = setup(4, 500);
        let phi = Phi::XLogX;
        let ell = testkit::random_interior_likelihood::<f64>(&q, 5, 0.8);
        let phil = ell.as_array().mapv(|v| phi.derivative(v));
        let mut perturbations: Vec<Array1<f64>> =
            (0..1000).map(|s| testkit::random_node_function::<f64>(4, s)).collect();
        // include the chain direction itself and a shifted copy
        perturbations.push(phil.mapv(|v| -v));
        perturbations.push(phil.mapv(|v| -v + 2.0));
        let report =
            steepest_descent_experiment(&ell, &perturbations, phi, &g, &q).unwrap();
        assert!(report.min_margin >= -1e-10, "margin {}", report.min_margin);
        // the last two perturbations are gradient-equivalent to the flow
        let m = report.margins.len();
        assert!(report.gradient_equivalent[m - 1]);
        assert!(report.gradient_equivalent[m - 2]);
        assert!(report.margins[m - 1].abs() <= 1e-9);
        assert!(report.margins[m - 2].abs() <= 1e-9);
        // and the chain slope is −‖φ(ℓ)‖
        let norm = crate::calculus::weighted_h1_norm(&phil, &ell, phi, &g, &q).unwrap();
        assert!((report.chain_slope + norm).abs() <= 1e-12 * (1.0 + norm));
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let (g, q) = setup(3, 600);
        let geo = Geometry::new(&g, &q, Phi::XLogX).unwrap();
        let ell0 = testkit::random_interior_likelihood::<f64>(&q, 1, 0.5);
        let ell1 = testkit::random_interior_likelihood::<f64>(&q, 2, 0.5);
        let problem = ActionProblem {
            geo: &geo,
            ell0: ell0.as_array().clone(),
            ell1: ell1.as_array().clone(),
            n_slices: 4,
            dt: 0.25,
        };
        let u0: Vec<f64> = (0..9).map(|i| 0.1 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let interior = problem.unpack(&u0);
        let (_, mids) = problem.action(&interior).unwrap();
        let analytic = problem.gradient(&interior, &mids);
        let h = 1e-6;
        for i in 0..u0.len() {
            let mut up = u0.clone();
            up[i] += h;
            let (fp, _) = problem.action(&problem.unpack(&up)).unwrap();
            up[i] -= 2.0 * h;
            let (fm, _) = problem.action(&problem.unpack(&up)).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (analytic[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "gradient mismatch at {i}: analytic {} vs fd {fd}",
                analytic[i]
            );
        }
    }

    #[test]
    fn geodesic_distance_zero_iff_equal_endpoints() {
        let (g, q) = setup(4, 700);
        let p = testkit::random_probability::<f64>(4, 3, 0.8);
        let res =
            benamou_brenier(&p, &p, Phi::XLogX, &g, &q, 8, &GeodesicOptions::default()).unwrap();
        assert_eq!(res.distance, 0.0);
        assert_eq!(res.likelihoods.len(), 9);
        assert!(res.potentials.iter().all(|p| p.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn geodesic_symmetry_and_triangle() {
        let (g, q) = setup(3, 800);
        let phi = Phi::XLogX;
        let opts = GeodesicOptions::default();
        let pa = testkit::random_probability::<f64>(3, 11, 0.7);
        let pb = testkit::random_probability::<f64>(3, 12, 0.7);
        let pc = testkit::random_probability::<f64>(3, 13, 0.7);
        let wab = benamou_brenier(&pa, &pb, phi, &g, &q, 16, &opts).unwrap().distance;
        let wba = benamou_brenier(&pb, &pa, phi, &g, &q, 16, &opts).unwrap().distance;
        assert!(
            (wab - wba).abs() <= 1e-4 * wab.max(1e-2),
            "symmetry violated: {wab} vs {wba}"
        );
        let wac = benamou_brenier(&pa, &pc, phi, &g, &q, 16, &opts).unwrap().distance;
        let wbc = benamou_brenier(&pb, &pc, phi, &g, &q, 16, &opts).unwrap().distance;
        assert!(wac <= wab + wbc + 3e-4, "triangle violated: {wac} > {wab} + {wbc}");
    }

    #[test]
    fn geodesic_local_expansion_matches_weighted_dual_norm() {
        let (g, q) = setup(4, 900);
        let phi = Phi::XLogX;
        let ell = testkit::random_interior_likelihood::<f64>(&q, 21, 0.5);
        let delta = testkit::random_mean_zero::<f64>(&q, 22);
        let eps = 1e-3;
        let p = ell.to_probability(&q).unwrap();
        let ell_eps = LikelihoodVector::new(
            ell.as_array() + &delta.mapv(|v| eps * v),
            &q,
        )
        .unwrap();
        let p_eps = ell_eps.to_probability(&q).unwrap();
        let res =
            benamou_brenier(&p, &p_eps, phi, &g, &q, 64, &GeodesicOptions::default()).unwrap();
        let expected =
            crate::calculus::weighted_h_minus1_norm(&delta, &ell, phi, &g, &q).unwrap();
        let ratio = res.distance / eps;
        assert!(
            (ratio - expected).abs() <= 0.02 * expected,
            "local expansion {ratio} vs {expected}"
        );
    }

    #[test]
    fn geodesic_boundary_endpoints_are_floored_and_flagged() {
        let (g, q) = setup(3, 1000);
        let p0 = testkit::random_probability::<f64>(3, 5, 0.5);
        let p1 = ProbabilityVector::new(ndarray::array![0.0, 0.5, 0.5]).unwrap();
        let res = benamou_brenier(&p0, &p1, Phi::XLogX, &g, &q, 8, &GeodesicOptions::default())
            .unwrap();
        assert!(res.boundary_flag);
        assert!(res.distance.is_finite() && res.distance > 0.0);
    }

    #[test]
    fn ricci_estimate_is_monotone_under_nested_sampling() {
        let (g, q) = setup(3, 1100);
        let opts = GeodesicOptions::default();
        let small =
            ricci_lower_bound_estimate(&g, &q, Phi::XLogX, 3, 8, 7, &opts).unwrap();
        let large =
            ricci_lower_bound_estimate(&g, &q, Phi::XLogX, 6, 8, 7, &opts).unwrap();
        assert!(large.kappa_hat <= small.kappa_hat + 1e-12);
        assert!(small.evaluated + small.skipped >= 3);
    }

    #[test]
    fn ricci_midpoint_inequality_on_held_out_pairs() {
        // κ̂ from one batch, validated on fresh pairs at the estimator's own
        // resolution: sampled minima of the ratio landscape fluctuate at the
        // geometry scale, far above optimizer tolerance, so the held-out
        // allowance is a small fraction of |κ̂| rather than 1e-7
        let (g, q) = setup(3, 1200);
        let phi = Phi::XLogX;
        let opts = GeodesicOptions::default();
        let est = ricci_lower_bound_estimate(&g, &q, phi, 12, 8, 99, &opts).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..10u64 {
            let la = testkit::random_interior_likelihood::<f64>(&q, 7_000 + 2 * i, 0.7);
            let lb = testkit::random_interior_likelihood::<f64>(&q, 7_001 + 2 * i, 0.7);
            if let Some(ratio) = midpoint_ratio(&la, &lb, phi, &g, &q, 8, &opts).unwrap() {
                worst = worst.max(est.kappa_hat - ratio);
            }
        }
        let allowance = 0.05 * (1.0 + est.kappa_hat.abs());
        assert!(
            worst <= allowance,
            "held-out ratio fell {worst} below kappa_hat {}",
            est.kappa_hat
        );
    }

    #[test]
    fn hwi_holds_with_estimated_kappa() {
        let (g, q) = setup(3, 1300);
        let phi = Phi::XLogX;
        let opts = GeodesicOptions::default();
        let est = ricci_lower_bound_estimate(&g, &q, phi, 6, 8, 3, &opts).unwrap();
        for seed in 0..10u64 {
            let p0 = testkit::random_probability::<f64>(3, 100 + seed, 0.7);
            let p1 = testkit::random_probability::<f64>(3, 200 + seed, 0.7);
            let report = hwi_check(
                &p0,
                &p1,
                est.kappa_hat,
                KappaSource::Estimated,
                phi,
                &g,
                &q,
                16,
                &opts,
            )
            .unwrap();
            assert!(report.holds, "HWI violated at seed {seed}: slack {}", report.slack);
            // Cauchy–Schwarz: bracket ≤ √I
            assert!(report.sharp_bracket <= report.fisher.sqrt() + 1e-10);
            assert_eq!(report.kappa_source, KappaSource::Estimated);
        }
    }

    #[test]
    fn hwi_trivial_at_coincident_endpoints() {
        let (g, q) = setup(3, 1400);
        let p = testkit::random_probability::<f64>(3, 1, 0.6);
        let report = hwi_check(
            &p,
            &p,
            0.5,
            KappaSource::UserSupplied,
            Phi::XLogX,
            &g,
            &q,
            8,
            &GeodesicOptions::default(),
        )
        .unwrap();
        assert_eq!(report.distance, 0.0);
        assert!((report.lhs - 0.0).abs() < 1e-14);
        assert!(report.holds);
        assert_eq!(report.kappa_source, KappaSource::UserSupplied);
    }

    #[test]
    fn entropy_along_geodesics_satisfies_kappa_midpoint_convexity() {
        let (g, q) = setup(3, 1500);
        let phi = Phi::XLogX;
        let opts = GeodesicOptions::default();
        let est = ricci_lower_bound_estimate(&g, &q, phi, 8, 8, 11, &opts).unwrap();
        for i in 0..6u64 {
            let la = testkit::random_interior_likelihood::<f64>(&q, 9_000 + 2 * i, 0.6);
            let lb = testkit::random_interior_likelihood::<f64>(&q, 9_001 + 2 * i, 0.6);
            let pa = la.to_probability(&q).unwrap();
            let pb = lb.to_probability(&q).unwrap();
            let geo = benamou_brenier(&pa, &pb, phi, &g, &q, 8, &opts).unwrap();
            if geo.distance < 1e-6 {
                continue;
            }
            let hs = geo.entropies(&q, phi).unwrap();
            let lhsv = hs[4];
            let rhsv = 0.5 * (hs[0] + hs[8])
                - est.kappa_hat / 8.0 * geo.distance * geo.distance;
            let allowance = 0.05 * (1.0 + est.kappa_hat.abs()) * geo.distance * geo.distance / 8.0
                + 1e-9;
            assert!(
                lhsv <= rhsv + allowance,
                "midpoint convexity violated at pair {i}: {lhsv} vs {rhsv}"
            );
        }
    }
}
