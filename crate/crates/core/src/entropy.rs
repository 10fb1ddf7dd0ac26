//! Convex entropy functionals H^Φ(P|Q) = E^Q[Φ(ℓ)] and their dissipation:
//! Bregman divergences, Φ-Fisher informations, compensator fields, de Bruijn
//! balance reports by Simpson quadrature, and the Poincaré / modified
//! log-Sobolev constants governing exponential decay.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{self, NodeFunction};
use crate::chain::{Generator, LikelihoodVector, ProbabilityVector};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::opt::{lbfgs, LbfgsOptions};
use crate::scalar::Scalar;
use crate::tol;

/// Convex entropy descriptor Φ : (0,∞) → ℝ with Φ(1) = 0 and Φ″ > 0.
///
/// Presets: `xlogx` (Kullback–Leibler), `quadratic` ξ²−1 (variance / χ²),
/// and `renyi:m` with m > 1, Φ(ξ) = (ξ^m − 1)/(m − 1). The CLI grammar is
/// the same three spellings; `renyi:1` is accepted as an alias for the
/// m ↓ 1 limit `xlogx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phi {
    XLogX,
    Quadratic,
    Renyi { m: f64 },
}

impl Phi {
    /// Rényi order m > 1.
    pub fn renyi(m: f64) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "renyi order must be > 1, got {m}"
            )));
        }
        Ok(Phi::Renyi { m })
    }

    pub fn name(&self) -> String {
        match self {
            Phi::XLogX => "xlogx".into(),
            Phi::Quadratic => "quadratic".into(),
            Phi::Renyi { m } => format!("renyi:{m}"),
        }
    }

    /// Φ(ξ) for ξ > 0.
    pub fn value<T: Scalar>(&self, xi: T) -> T {
        match self {
            Phi::XLogX => xi * xi.ln(),
            Phi::Quadratic => xi * xi - T::one(),
            Phi::Renyi { m } => {
                let m = T::of(*m);
                (xi.powf(m) - T::one()) / (m - T::one())
            }
        }
    }

    /// φ(ξ) = Φ′(ξ).
    pub fn derivative<T: Scalar>(&self, xi: T) -> T {
        match self {
            Phi::XLogX => xi.ln() + T::one(),
            Phi::Quadratic => T::of(2.0) * xi,
            Phi::Renyi { m } => {
                let m = T::of(*m);
                m * xi.powf(m - T::one()) / (m - T::one())
            }
        }
    }

    /// Φ″(ξ) > 0.
    pub fn second<T: Scalar>(&self, xi: T) -> T {
        match self {
            Phi::XLogX => T::one() / xi,
            Phi::Quadratic => T::of(2.0),
            Phi::Renyi { m } => {
                let m = T::of(*m);
                m * xi.powf(m - T::of(2.0))
            }
        }
    }

    /// Φ‴(ξ), used by the geodesic solver's analytic gradients.
    pub fn third<T: Scalar>(&self, xi: T) -> T {
        match self {
            Phi::XLogX => -T::one() / (xi * xi),
            Phi::Quadratic => T::zero(),
            Phi::Renyi { m } => {
                let m = T::of(*m);
                m * (m - T::of(2.0)) * xi.powf(m - T::of(3.0))
            }
        }
    }

    /// The limit Φ(0⁺), finite for every preset; `None` would mark an
    /// entropy that cannot accept boundary vectors.
    pub fn value_at_zero<T: Scalar>(&self) -> Option<T> {
        match self {
            Phi::XLogX => Some(T::zero()),
            Phi::Quadratic => Some(-T::one()),
            Phi::Renyi { m } => Some(-T::one() / (T::of(*m) - T::one())),
        }
    }

    /// div^Φ(ℓ | 1) = Φ(ℓ) − (ℓ−1)φ(1), evaluated in a cancellation-free
    /// form; defined on ℓ ≥ 0 through the limit at 0. Summing q·div^Φ(ℓ|1)
    /// gives H^Φ with manifestly nonnegative terms.
    pub fn divergence_to_one<T: Scalar>(&self, ell: T) -> Result<T> {
        if ell < T::zero() {
            return Err(Error::NonpositiveArgument);
        }
        if ell == T::zero() {
            // div^Φ(0|1) = Φ(0⁺) + φ(1); equals 1 for every preset
            let at_zero: T = self
                .value_at_zero()
                .ok_or(Error::BoundaryUnsupported)?;
            return Ok(at_zero + self.derivative(T::one()));
        }
        let e = ell - T::one();
        Ok(match self {
            Phi::XLogX => ell * e.ln_1p() - e,
            Phi::Quadratic => e * e,
            Phi::Renyi { m } => {
                let m = T::of(*m);
                ((m * e.ln_1p()).exp_m1() - m * e) / (m - T::one())
            }
        })
    }
}

impl std::str::FromStr for Phi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xlogx" => Ok(Phi::XLogX),
            "quadratic" => Ok(Phi::Quadratic),
            other => {
                if let Some(m) = other.strip_prefix("renyi:") {
                    let m: f64 = m
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad renyi order: {m}")))?;
                    if (m - 1.0).abs() < 1e-12 {
                        return Ok(Phi::XLogX); // m ↓ 1 alias
                    }
                    return Phi::renyi(m);
                }
                Err(Error::InvalidArgument(format!(
                    "unknown phi preset `{other}` (expected xlogx | quadratic | renyi:<m>)"
                )))
            }
        }
    }
}

/// Bregman Φ-divergence div^Φ(η | ξ) = Φ(η) − Φ(ξ) − (η − ξ)φ(ξ) ≥ 0.
pub fn bregman<T: Scalar>(eta: T, xi: T, phi: Phi) -> Result<T> {
    if !(eta > T::zero()) || !(xi > T::zero()) {
        return Err(Error::NonpositiveArgument);
    }
    Ok(phi.value(eta) - phi.value(xi) - (eta - xi) * phi.derivative(xi))
}

/// Φ-relative entropy H^Φ(P|Q) = Σ_y q(y) Φ(p(y)/q(y)) ≥ 0.
///
/// Boundary P (zero entries) is accepted whenever Φ(0⁺) is finite, which
/// holds for all presets; Q must be interior.
pub fn phi_entropy<T: Scalar>(
    p: &ProbabilityVector<T>,
    q: &ProbabilityVector<T>,
    phi: Phi,
) -> Result<T> {
    let ell = p.likelihood(q)?;
    phi_entropy_of_likelihood(&ell, q, phi)
}

/// H^Φ from the likelihood vector directly.
pub fn phi_entropy_of_likelihood<T: Scalar>(
    ell: &LikelihoodVector<T>,
    q: &ProbabilityVector<T>,
    phi: Phi,
) -> Result<T> {
    if ell.len() != q.len() {
        return Err(Error::Shape("dimension mismatch".into()));
    }
    let mut acc = T::zero();
    for x in 0..q.len() {
        acc = acc + q.get(x) * phi.divergence_to_one(ell.get(x))?;
    }
    Ok(acc)
}

/// Φ-Fisher information I^Φ = ℰ(ℓ, φ(ℓ)) ≥ 0; no detailed balance needed.
pub fn fisher_information<T: Scalar>(
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    if !ell.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    let phil = ell.as_array().mapv(|v| phi.derivative(v));
    Ok(calculus::dirichlet_form(ell.as_array(), &phil, gen, q))
}

/// The three algebraic routes to I^Φ: the Dirichlet form (always), and —
/// under detailed balance — the symmetrized Bregman double sum and the
/// weighted-Sobolev square ‖φ(ℓ)‖²_{H¹_Θ}.
#[derive(Debug, Clone, Copy)]
pub struct FisherReport<T> {
    pub dirichlet: T,
    pub bregman_symmetrized: Option<T>,
    pub weighted_norm_squared: Option<T>,
}

impl<T: Scalar> FisherReport<T> {
    /// Largest pairwise disagreement among the evaluated routes.
    pub fn max_spread(&self) -> T {
        let mut lo = self.dirichlet;
        let mut hi = self.dirichlet;
        for v in [self.bregman_symmetrized, self.weighted_norm_squared].into_iter().flatten() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }
}

pub fn fisher_information_report<T: Scalar>(
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<FisherReport<T>> {
    let dirichlet = fisher_information(ell, phi, gen, q)?;
    if !gen.is_reversible(q) {
        return Ok(FisherReport { dirichlet, bregman_symmetrized: None, weighted_norm_squared: None });
    }
    let adj = gen.adjoint(q)?;
    let n = gen.n();
    let mut sym = T::zero();
    for x in 0..n {
        for y in 0..n {
            if x != y && adj.rate(x, y) > T::zero() {
                let fwd = bregman(ell.get(y), ell.get(x), phi)?;
                let bwd = bregman(ell.get(x), ell.get(y), phi)?;
                sym = sym + q.get(x) * adj.rate(x, y) * (fwd + bwd);
            }
        }
    }
    sym = sym * T::of(0.5);
    let phil = ell.as_array().mapv(|v| phi.derivative(v));
    let weighted = calculus::weighted_h1_norm(&phil, ell, phi, gen, q)?;
    Ok(FisherReport {
        dirichlet,
        bregman_symmetrized: Some(sym),
        weighted_norm_squared: Some(weighted * weighted),
    })
}

/// The compensator fields of the time-reversed Doob–Meyer decompositions:
/// Λ^{Φ,Q}(x) = Σ_{y≠x} κ̂(x,y) div^Φ(ℓ(y)|ℓ(x)) ≥ 0 and Λ^{Φ,P} = Λ^{Φ,Q}/ℓ.
#[derive(Debug, Clone)]
pub struct Compensators<T> {
    pub q_side: NodeFunction<T>,
    pub p_side: NodeFunction<T>,
}

pub fn lambda_compensators<T: Scalar>(
    ell: &LikelihoodVector<T>,
    phi: Phi,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<Compensators<T>> {
    if !ell.is_interior() {
        return Err(Error::BoundaryLikelihood);
    }
    let adj = gen.adjoint(q)?;
    let n = gen.n();
    let mut q_side = Array1::zeros(n);
    for x in 0..n {
        let mut acc = T::zero();
        for y in 0..n {
            if y != x && adj.rate(x, y) > T::zero() {
                acc = acc + adj.rate(x, y) * bregman(ell.get(y), ell.get(x), phi)?;
            }
        }
        q_side[x] = acc;
    }
    let p_side = Array1::from_iter((0..n).map(|x| q_side[x] / ell.get(x)));
    Ok(Compensators { q_side, p_side })
}

/// Entropy/rate samples along an evolved curve plus the de Bruijn balance
/// residual |H(t₀) − H(T) − ∫ I^Φ dt| of the integrated identity.
#[derive(Debug, Clone, Serialize)]
pub struct DissipationReport<T> {
    pub grid: Vec<T>,
    pub entropy: Vec<T>,
    pub rate: Vec<T>,
    pub integral: T,
    pub balance_residual: T,
}

/// Evolve P(t) from `p0` on a uniform grid of `steps` Simpson intervals over
/// [0, T], sample H^Φ and I^Φ, and report the balance residual. A boundary
/// `p0` shifts the grid start to T/steps (the flow is interior from any
/// positive time onward).
pub fn de_bruijn_report<T: Scalar>(
    gen: &Generator<T>,
    p0: &ProbabilityVector<T>,
    q: &ProbabilityVector<T>,
    phi: Phi,
    t_final: T,
    steps: usize,
) -> Result<DissipationReport<T>> {
    if steps < 2 || steps % 2 != 0 {
        return Err(Error::InvalidArgument(
            "Simpson quadrature needs an even number of steps ≥ 2".into(),
        ));
    }
    if !(t_final > T::zero()) {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let t0 = if p0.is_interior() {
        T::zero()
    } else {
        t_final / T::of(steps as f64)
    };
    let h = (t_final - t0) / T::of(steps as f64);
    let grid: Vec<T> = (0..=steps).map(|k| t0 + h * T::of(k as f64)).collect();
    let (start, curve) = if p0.is_interior() {
        (p0.clone(), gen.evolve_marginals(p0, &grid)?)
    } else {
        let warm = gen.evolve_marginals(p0, &[T::zero(), t0])?;
        let start = warm.values()[1].clone();
        (start.clone(), gen.evolve_marginals(&start, &grid)?)
    };
    drop(start);
    let mut entropy = Vec::with_capacity(grid.len());
    let mut rate = Vec::with_capacity(grid.len());
    for p in curve.values() {
        let ell = p.likelihood(q)?;
        entropy.push(phi_entropy_of_likelihood(&ell, q, phi)?);
        rate.push(fisher_information(&ell, phi, gen, q)?);
    }
    let integral = simpson(&rate, h);
    let balance_residual = (entropy[0] - entropy[steps] - integral).abs();
    Ok(DissipationReport { grid, entropy, rate, integral, balance_residual })
}

/// Composite Simpson rule on a uniform grid with an even interval count.
pub fn simpson<T: Scalar>(values: &[T], h: T) -> T {
    let n = values.len() - 1;
    debug_assert!(n >= 2 && n % 2 == 0);
    let mut acc = values[0] + values[n];
    for (k, &v) in values.iter().enumerate().take(n).skip(1) {
        let w = if k % 2 == 1 { T::of(4.0) } else { T::of(2.0) };
        acc = acc + w * v;
    }
    acc * h / T::of(3.0)
}

/// Optimal Poincaré constant: α = 2·(smallest nonzero eigenvalue of the
/// symmetrized generator −(𝒦+𝒦̂)/2 in L²(𝒮,Q)), computed on the
/// similarity-transformed symmetric matrix D^{1/2} 𝒦_sym D^{-1/2}.
pub fn poincare_constant<T: Scalar>(gen: &Generator<T>, q: &ProbabilityVector<T>) -> Result<T> {
    let n = gen.n();
    let adj = gen.adjoint(q)?;
    let mut s = Array2::zeros((n, n));
    let half = T::of(0.5);
    for x in 0..n {
        for y in 0..n {
            let ksym = half * (gen.rate(x, y) + adj.rate(x, y));
            s[[x, y]] = (q.get(x) / q.get(y)).sqrt() * ksym;
        }
    }
    // kill rounding asymmetry before the symmetric eigensolver
    for x in 0..n {
        for y in (x + 1)..n {
            let m = half * (s[[x, y]] + s[[y, x]]);
            s[[x, y]] = m;
            s[[y, x]] = m;
        }
    }
    let neg = s.mapv(|v| -v);
    let (vals, _) = symmetric_eigen(&neg)?;
    let scale = gen.norm_inf().max(T::one());
    if vals[0].abs() > T::of(1e-8) * scale {
        return Err(Error::EigenFailed(format!(
            "expected a zero eigenvalue, got {:e}",
            vals[0].to_f64_lossy()
        )));
    }
    if vals.len() < 2 || !(vals[1] > T::zero()) {
        return Err(Error::EigenFailed("no positive spectral gap".into()));
    }
    Ok(T::of(2.0) * vals[1])
}

/// The modified log-Sobolev ratio ℰ(f, log f) / Σ q f log f for a positive,
/// mean-one f, evaluated in a cancellation-free form; near f ≡ 1 it
/// degenerates to the Rayleigh quotient 2ℰ(g,g)/‖g‖²_Q of the direction
/// g = f − 1.
pub fn mlsi_ratio<T: Scalar>(
    f: &NodeFunction<T>,
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
) -> Result<T> {
    if f.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::NonpositiveArgument);
    }
    let mean = calculus::l2_inner(f, &Array1::from_elem(f.len(), T::one()), q);
    if (mean - T::one()).abs() > tol::structural::<T>() * T::of(1e3) {
        return Err(Error::InvalidArgument("f must have mean one under Q".into()));
    }
    let g = f.mapv(|v| v - T::one());
    let spread = g.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    if spread < T::of(1e-10) {
        if spread == T::zero() {
            return Ok(T::infinity());
        }
        let e = calculus::dirichlet_form(&g, &g, gen, q);
        let var = calculus::l2_inner(&g, &g, q);
        return Ok(T::of(2.0) * e / var);
    }
    // ℰ(f, log f) = ℰ(g, log1p(g)) since ℰ kills constants in both slots
    let w = g.mapv(|v| v.ln_1p());
    let num = calculus::dirichlet_form(&g, &w, gen, q);
    // H(fQ|Q) = Σ q [(1+g)log1p(g) − g], every term ≥ 0
    let den: T = (0..f.len())
        .map(|x| q.get(x) * ((T::one() + g[x]) * g[x].ln_1p() - g[x]))
        .sum();
    Ok(num / den)
}

/// Best-found modified log-Sobolev estimate.
///
/// β̂ is an upper bound on the optimal constant: it is the minimum of the
/// ratio over every candidate the multistart search visited, together with
/// the f → 1 linearization limit (whose infimum over directions is the
/// Poincaré constant α). It is an estimate, never a certificate.
#[derive(Debug, Clone)]
pub struct MlsiEstimate<T> {
    pub beta: T,
    pub minimizer: NodeFunction<T>,
    pub restarts: usize,
    pub distinct_minima: usize,
    /// true when no interior candidate beat the f → 1 limit α
    pub attained_at_linearization: bool,
}

/// Multistart quasi-Newton minimization of the MLSI ratio over the positive
/// mean-one slice, log-parametrized to stay interior. Restarts run in
/// parallel with independent deterministic seeds and are merged by
/// min-reduction; the outcome does not depend on scheduling.
pub fn mlsi_constant<T: Scalar>(
    gen: &Generator<T>,
    q: &ProbabilityVector<T>,
    restarts: usize,
) -> Result<MlsiEstimate<T>> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    let n = gen.n();
    let alpha = poincare_constant(gen, q)?;

    let to_density = |u: &[T]| -> NodeFunction<T> {
        let umax = u.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
        let raw: Vec<T> = u.iter().map(|&v| (v - umax).exp()).collect();
        let z: T = raw.iter().zip(q.as_array().iter()).map(|(&r, &qx)| r * qx).sum();
        Array1::from_iter(raw.iter().map(|&r| r / z))
    };
    let objective = |u: &[T]| -> T {
        let f = to_density(u);
        mlsi_ratio(&f, gen, q).unwrap_or_else(|_| T::infinity())
    };
    let gradient = |u: &[T]| -> Vec<T> {
        let mut g = vec![T::zero(); u.len()];
        let mut probe = u.to_vec();
        for i in 0..u.len() {
            let h = T::of(1e-6) * u[i].abs().max(T::one());
            probe[i] = u[i] + h;
            let fp = objective(&probe);
            probe[i] = u[i] - h;
            let fm = objective(&probe);
            probe[i] = u[i];
            g[i] = (fp - fm) / (T::of(2.0) * h);
        }
        g
    };

    let runs: Vec<(T, Vec<T>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let start: Vec<T> = if r == 0 {
                // tilt toward a corner of the simplex
                (0..n).map(|x| if x == 0 { T::of(1.5) } else { T::zero() }).collect()
            } else {
                let spread = [0.4, 1.0, 2.0, 3.0][r % 4];
                let f = crate::testkit::random_node_function::<T>(n, 0x4d4c_5349 + r as u64);
                f.iter().map(|&v| v * T::of(spread)).collect()
            };
            let opts = LbfgsOptions { max_iter: 400, grad_tol: T::of(1e-10), ..Default::default() };
            let res = lbfgs(start, objective, gradient, &opts);
            (res.value, res.x)
        })
        .collect();

    let mut beta = alpha;
    let mut minimizer: NodeFunction<T> = Array1::from_elem(n, T::one());
    let mut attained_at_linearization = true;
    let mut finite_values: Vec<T> = vec![alpha];
    for (value, u) in &runs {
        if value.is_finite() {
            finite_values.push(*value);
            if *value < beta {
                beta = *value;
                minimizer = to_density(u);
                attained_at_linearization = false;
            }
        }
    }
    finite_values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut distinct_minima = 0;
    let mut last: Option<T> = None;
    for v in finite_values {
        match last {
            Some(prev) if (v - prev).abs() <= T::of(1e-6) * (T::one() + prev.abs()) => {}
            _ => {
                distinct_minima += 1;
                last = Some(v);
            }
        }
    }
    Ok(MlsiEstimate { beta, minimizer, restarts, distinct_minima, attained_at_linearization })
}
