//! Batch front door over the chain library: ingest a chain-spec JSON file,
//! dispatch one subcommand, emit CSV or JSON artifacts.
//!
//! Exit codes: 0 success / verification PASS, 1 verification FAIL,
//! 2 usage or ingest error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctmc_dissipation::chain::ChainSpec;
use ctmc_dissipation::entropy::{de_bruijn_report, mlsi_constant, poincare_constant, Phi};
use ctmc_dissipation::trajectory::{
    compensator_test, ergodic_average, map_paths, martingale_test_reversed_likelihood, Law,
};
use ctmc_dissipation::transport::{
    benamou_brenier, gradient_flow_field, hwi_check, ricci_lower_bound_estimate,
    steepest_descent_experiment, GeodesicOptions, KappaSource,
};
use ctmc_dissipation::{testkit, Generator64, ProbabilityVector64};

#[derive(Parser)]
#[command(
    name = "ctmc",
    about = "Finite-state continuous-time Markov chains: evolution, entropy dissipation, \
             trajectorial martingale tests and discrete transport geometry",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct OutputArgs {
    /// Write the artifact here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Artifact format
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Suppress the timestamp header line (makes runs byte-identical)
    #[arg(long)]
    no_header: bool,
    /// Cap the worker count (default: CTMC_THREADS env var, then all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a chain file: stationary distribution and detailed balance
    Validate {
        chain: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Print the stationary distribution
    Stationary {
        chain: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Evolve the marginal distribution on a uniform grid
    Evolve {
        chain: PathBuf,
        /// Time horizon
        #[arg(long = "T", default_value_t = 5.0)]
        t_final: f64,
        /// Number of grid steps
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Initial distribution (comma-separated; default: the file's
        /// `initial`, otherwise uniform)
        #[arg(long)]
        initial: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// de Bruijn dissipation report: entropy, rate, balance residual
    #[command(alias = "debruijn")]
    Dissipation {
        chain: PathBuf,
        /// Entropy preset: xlogx | quadratic | renyi:<m>
        #[arg(long, default_value = "xlogx")]
        phi: String,
        #[arg(long = "T", default_value_t = 5.0)]
        t_final: f64,
        /// Simpson steps (even)
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        /// PASS threshold on the balance residual
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        initial: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Poincaré constant and modified log-Sobolev estimate
    Constants {
        chain: PathBuf,
        /// Multistart count for the MLSI search
        #[arg(long, default_value_t = 12)]
        restarts: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Monte Carlo trajectorial verification
    Simulate {
        chain: PathBuf,
        /// reversed-likelihood | compensator | ergodic
        #[arg(long)]
        test: SimTest,
        #[arg(long, default_value = "xlogx")]
        phi: String,
        /// Measure for the compensator test: P | Q
        #[arg(long, default_value = "Q")]
        measure: String,
        #[arg(long = "T", default_value_t = 2.0)]
        t_final: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Number of uniformly spaced checkpoints
        #[arg(long, default_value_t = 6)]
        checkpoints: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        initial: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Benamou–Brenier distance and geodesic between two distributions
    Metric {
        chain: PathBuf,
        /// Source distribution (default: the file's `initial`)
        #[arg(long)]
        p0: Option<String>,
        /// Target distribution (default: stationary)
        #[arg(long)]
        p1: Option<String>,
        #[arg(long, default_value = "xlogx")]
        phi: String,
        #[arg(long, default_value_t = 32)]
        slices: usize,
        #[arg(long, default_value_t = 1e-7)]
        kkt_tol: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Verify the gradient-flow identity ∇·(ϑ_ℓ∇φ(ℓ)) = 𝒦ℓ on random ℓ
    GradientFlow {
        chain: PathBuf,
        #[arg(long, default_value = "xlogx")]
        phi: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Steepest-descent experiment against random perturbations
    Descent {
        chain: PathBuf,
        #[arg(long, default_value = "xlogx")]
        phi: String,
        #[arg(long, default_value_t = 1000)]
        perturbations: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        initial: Option<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// HWI inequality check
    Hwi {
        chain: PathBuf,
        #[arg(long)]
        p0: Option<String>,
        #[arg(long)]
        p1: Option<String>,
        #[arg(long, default_value = "xlogx")]
        phi: String,
        /// Ricci constant; omitted → estimated
        #[arg(long)]
        kappa: Option<f64>,
        /// Endpoint-pair samples for the estimator
        #[arg(long, default_value_t = 12)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        slices: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Ricci lower-bound estimate from sampled geodesics
    Ricci {
        chain: PathBuf,
        #[arg(long, default_value = "xlogx")]
        phi: String,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        slices: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimTest {
    ReversedLikelihood,
    Compensator,
    Ergodic,
}

/// 17 significant digits: round-trip exact for f64.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

struct Artifact {
    lines: Vec<String>,
    json: serde_json::Value,
}

fn emit(out: &OutputArgs, artifact: &Artifact) -> std::io::Result<()> {
    let mut text = String::new();
    if !out.no_header {
        text.push_str(&format!("# generated {}\n", chrono::Utc::now().to_rfc3339()));
    }
    match out.format {
        Format::Csv => {
            for line in &artifact.lines {
                text.push_str(line);
                text.push('\n');
            }
        }
        Format::Json => {
            text.push_str(&serde_json::to_string_pretty(&artifact.json).expect("serializable"));
            text.push('\n');
        }
    }
    match &out.output {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    // every randomized command echoes its seed; omitting --seed draws one
    seed.unwrap_or_else(rand::random::<u64>)
}

fn parse_distribution(text: &str, n: usize) -> Result<ProbabilityVector64, String> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| format!("bad distribution `{text}`: {e}"))?;
    if vals.len() != n {
        return Err(format!("distribution has {} entries, chain has {n}", vals.len()));
    }
    ProbabilityVector64::new(ndarray::Array1::from(vals)).map_err(|e| e.to_string())
}

struct Loaded {
    gen: Generator64,
    q: ProbabilityVector64,
    initial: Option<ProbabilityVector64>,
}

fn load_chain(path: &PathBuf) -> Result<Loaded, String> {
    let spec = ChainSpec::from_file(path).map_err(|e| e.to_string())?;
    let gen: Generator64 = spec.generator().map_err(|e| e.to_string())?;
    let q = gen.stationary_distribution().map_err(|e| e.to_string())?;
    let initial = spec.initial().map_err(|e| e.to_string())?;
    Ok(Loaded { gen, q, initial })
}

fn pick_initial(
    loaded: &Loaded,
    flag: &Option<String>,
    fallback_uniform: bool,
) -> Result<ProbabilityVector64, String> {
    if let Some(text) = flag {
        return parse_distribution(text, loaded.gen.n());
    }
    if let Some(p) = &loaded.initial {
        return Ok(p.clone());
    }
    if fallback_uniform {
        Ok(ProbabilityVector64::uniform(loaded.gen.n()))
    } else {
        Err("no initial distribution: pass --p0/--initial or add `initial` to the chain file"
            .into())
    }
}

fn parse_phi(text: &str) -> Result<Phi, String> {
    text.parse::<Phi>().map_err(|e| e.to_string())
}

fn configure_threads(out: &OutputArgs) {
    let threads = out.threads.or_else(|| {
        std::env::var("CTMC_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(t) = threads.filter(|&t| t > 0) {
        // output is schedule-independent by construction; the cap only
        // bounds resource usage
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

const USAGE_ERROR: u8 = 2;
const VERIFY_FAIL: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE_ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.command {
        Command::Validate { chain, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let db = loaded.gen.detailed_balance(&loaded.q, 1e-10);
            let names = loaded.gen.names();
            let mut lines = vec!["field,value".to_string()];
            lines.push(format!("states,{}", loaded.gen.n()));
            for (x, name) in names.iter().enumerate() {
                lines.push(format!("stationary[{name}],{}", fmt(loaded.q.get(x))));
            }
            lines.push(format!("detailed_balance,{}", db.holds));
            lines.push(format!("max_violation,{}", fmt(db.max_violation)));
            lines.push(format!("witness,{}-{}", db.witness.0, db.witness.1));
            let json = serde_json::json!({
                "states": names,
                "stationary": loaded.q.as_array().to_vec(),
                "detailed_balance": db.holds,
                "max_violation": db.max_violation,
                "witness": [db.witness.0, db.witness.1],
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(0)
        }

        Command::Stationary { chain, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let mut lines = vec!["state,label,probability".to_string()];
            for (x, name) in loaded.gen.names().iter().enumerate() {
                lines.push(format!("{x},{name},{}", fmt(loaded.q.get(x))));
            }
            let json = serde_json::json!({
                "states": loaded.gen.names(),
                "stationary": loaded.q.as_array().to_vec(),
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(0)
        }

        Command::Evolve { chain, t_final, steps, initial, out } => {
            configure_threads(&out);
            if steps == 0 || t_final <= 0.0 {
                return Err("need steps ≥ 1 and T > 0".into());
            }
            let loaded = load_chain(&chain)?;
            let p0 = pick_initial(&loaded, &initial, true)?;
            let grid: Vec<f64> =
                (0..=steps).map(|k| t_final * k as f64 / steps as f64).collect();
            let curve = loaded.gen.evolve_marginals(&p0, &grid).map_err(|e| e.to_string())?;
            let mut lines = vec!["t,state,label,probability".to_string()];
            let mut rows = Vec::new();
            for (t, p) in curve.grid().iter().zip(curve.values()) {
                for (x, name) in loaded.gen.names().iter().enumerate() {
                    lines.push(format!("{},{x},{name},{}", fmt(*t), fmt(p.get(x))));
                    rows.push(serde_json::json!({
                        "t": t, "state": x, "label": name, "probability": p.get(x)
                    }));
                }
            }
            let json = serde_json::json!({ "evolution": rows });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(0)
        }

        Command::Dissipation { chain, phi, t_final, steps, tol, initial, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let phi = parse_phi(&phi)?;
            let p0 = pick_initial(&loaded, &initial, true)?;
            let report = de_bruijn_report(&loaded.gen, &p0, &loaded.q, phi, t_final, steps)
                .map_err(|e| e.to_string())?;
            let mut lines = vec!["t,entropy,rate".to_string()];
            for k in 0..report.grid.len() {
                lines.push(format!(
                    "{},{},{}",
                    fmt(report.grid[k]),
                    fmt(report.entropy[k]),
                    fmt(report.rate[k])
                ));
            }
            lines.push(format!("# phi = {}", phi.name()));
            lines.push(format!("# balance_residual = {}", fmt(report.balance_residual)));
            lines.push(format!("# tolerance = {}", fmt(tol)));
            let pass = report.balance_residual <= tol;
            lines.push(format!("# pass = {pass}"));
            let json = serde_json::json!({
                "phi": phi.name(),
                "report": report,
                "tolerance": tol,
                "pass": pass,
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(if pass { 0 } else { VERIFY_FAIL })
        }

        Command::Constants { chain, restarts, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let alpha =
                poincare_constant(&loaded.gen, &loaded.q).map_err(|e| e.to_string())?;
            let est =
                mlsi_constant(&loaded.gen, &loaded.q, restarts).map_err(|e| e.to_string())?;
            let lines = vec![
                "constant,value".to_string(),
                format!("poincare_alpha,{}", fmt(alpha)),
                format!("mlsi_beta_estimate,{}", fmt(est.beta)),
                format!("mlsi_restarts,{}", est.restarts),
                format!("mlsi_distinct_minima,{}", est.distinct_minima),
                format!("mlsi_at_linearization,{}", est.attained_at_linearization),
                "# mlsi_beta_estimate is a best-found upper bound, not a certificate"
                    .to_string(),
            ];
            let json = serde_json::json!({
                "poincare_alpha": alpha,
                "mlsi_beta_estimate": est.beta,
                "mlsi_minimizer": est.minimizer.to_vec(),
                "mlsi_restarts": est.restarts,
                "mlsi_distinct_minima": est.distinct_minima,
                "mlsi_at_linearization": est.attained_at_linearization,
                "note": "beta is a best-found upper bound, not a certificate",
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(0)
        }

        Command::Simulate {
            chain,
            test,
            phi,
            measure,
            t_final,
            paths,
            checkpoints,
            seed,
            initial,
            out,
        } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let seed = resolve_seed(seed);
            let p0 = pick_initial(&loaded, &initial, true)?;
            if paths == 0 {
                return Err("need at least one path".into());
            }
            let report = match test {
                SimTest::ReversedLikelihood => {
                    let cps: Vec<f64> = (0..checkpoints.max(1))
                        .map(|k| t_final * k as f64 / checkpoints.max(1) as f64)
                        .collect();
                    martingale_test_reversed_likelihood(
                        &loaded.gen,
                        &p0,
                        &loaded.q,
                        t_final,
                        &cps,
                        paths,
                        seed,
                    )
                    .map_err(|e| e.to_string())?
                }
                SimTest::Compensator => {
                    let phi = parse_phi(&phi)?;
                    let measure = match measure.as_str() {
                        "P" | "p" => Law::P,
                        "Q" | "q" => Law::Q,
                        other => return Err(format!("bad measure `{other}` (expected P or Q)")),
                    };
                    let cps: Vec<f64> = (0..checkpoints.max(1))
                        .map(|k| t_final * k as f64 / checkpoints.max(1) as f64)
                        .collect();
                    compensator_test(
                        &loaded.gen,
                        &p0,
                        &loaded.q,
                        phi,
                        measure,
                        t_final,
                        &cps,
                        paths,
                        seed,
                    )
                    .map_err(|e| e.to_string())?
                }
                SimTest::Ergodic => ergodic_report(&loaded, t_final, paths, seed)?,
            };
            let mut lines: Vec<String> =
                report.to_csv().lines().map(|s| s.to_string()).collect();
            lines.push(format!("# test = {}", report.test));
            lines.push(format!("# seed = {}", report.seed));
            lines.push(format!("# paths = {}", report.paths_used));
            lines.push(format!("# pass = {}", report.pass));
            let json = serde_json::to_value(&report).map_err(|e| e.to_string())?;
            let pass = report.pass;
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(if pass { 0 } else { VERIFY_FAIL })
        }

        Command::Metric { chain, p0, p1, phi, slices, kkt_tol, seed, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let phi = parse_phi(&phi)?;
            let seed = resolve_seed(seed);
            let p0 = pick_initial(&loaded, &p0, false)?;
            let p1 = match &p1 {
                Some(text) => parse_distribution(text, loaded.gen.n())?,
                None => loaded.q.clone(),
            };
            let opts = GeodesicOptions { kkt_tol, seed, ..Default::default() };
            let geo = benamou_brenier(&p0, &p1, phi, &loaded.gen, &loaded.q, slices, &opts)
                .map_err(|e| e.to_string())?;
            let probs = geo.probabilities(&loaded.q).map_err(|e| e.to_string())?;
            let mut lines = vec!["slice_index,t,state,probability,potential".to_string()];
            for (k, p) in probs.iter().enumerate() {
                let t = k as f64 / slices as f64;
                // slice potential: the adjacent midpoint's (last reused at k = N)
                let psi = &geo.potentials[k.min(slices - 1)];
                for x in 0..loaded.gen.n() {
                    lines.push(format!(
                        "{k},{},{x},{},{}",
                        fmt(t),
                        fmt(p.get(x)),
                        fmt(psi[x])
                    ));
                }
            }
            lines.push(format!("# distance = {}", fmt(geo.distance)));
            lines.push(format!("# action_residual = {}", fmt(geo.action_residual)));
            lines.push(format!("# boundary_flag = {}", geo.boundary_flag));
            lines.push(format!("# seed = {seed}"));
            let json = serde_json::json!({
                "phi": phi.name(),
                "distance": geo.distance,
                "action_residual": geo.action_residual,
                "boundary_flag": geo.boundary_flag,
                "reparametrized": geo.reparametrized,
                "seed": seed,
                "likelihoods": geo.likelihoods.iter().map(|l| l.to_vec()).collect::<Vec<_>>(),
                "potentials": geo.potentials.iter().map(|p| p.to_vec()).collect::<Vec<_>>(),
                "slice_actions": geo.slice_actions,
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(0)
        }

        Command::GradientFlow { chain, phi, trials, seed, tol, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let phi = parse_phi(&phi)?;
            let seed = resolve_seed(seed);
            let mut worst: f64 = 0.0;
            for k in 0..trials as u64 {
                let ell =
                    testkit::random_interior_likelihood::<f64>(&loaded.q, seed ^ k, 0.8);
                let phil = ell.as_array().mapv(|v| phi.derivative(v));
                let field = gradient_flow_field(&ell, &phil, phi, &loaded.gen, &loaded.q)
                    .map_err(|e| e.to_string())?;
                let kl = loaded.gen.apply(ell.as_array());
                let res = field
                    .iter()
                    .zip(kl.iter())
                    .fold(0.0f64, |acc, (&a, &b)| acc.max((a - b).abs()));
                worst = worst.max(res);
            }
            let pass = worst <= tol;
            let lines = vec![
                "field,value".to_string(),
                format!("phi,{}", phi.name()),
                format!("trials,{trials}"),
                format!("seed,{seed}"),
                format!("max_residual,{}", fmt(worst)),
                format!("tolerance,{}", fmt(tol)),
                format!("pass,{pass}"),
            ];
            let json = serde_json::json!({
                "phi": phi.name(), "trials": trials, "seed": seed,
                "max_residual": worst, "tolerance": tol, "pass": pass,
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(if pass { 0 } else { VERIFY_FAIL })
        }

        Command::Descent { chain, phi, perturbations, seed, initial, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let phi = parse_phi(&phi)?;
            let seed = resolve_seed(seed);
            let p0 = pick_initial(&loaded, &initial, true)?;
            // evolve one step from a boundary start so ℓ is interior
            let ell = if p0.is_interior() {
                p0.likelihood(&loaded.q).map_err(|e| e.to_string())?
            } else {
                let warm = loaded
                    .gen
                    .evolve_marginals(&p0, &[0.0, 1e-2])
                    .map_err(|e| e.to_string())?;
                warm.values()[1].likelihood(&loaded.q).map_err(|e| e.to_string())?
            };
            let psis: Vec<ndarray::Array1<f64>> = (0..perturbations as u64)
                .map(|k| testkit::random_node_function::<f64>(loaded.gen.n(), seed ^ k))
                .collect();
            let report = steepest_descent_experiment(&ell, &psis, phi, &loaded.gen, &loaded.q)
                .map_err(|e| e.to_string())?;
            let pass = report.min_margin >= -1e-10;
            let mut lines = vec!["perturbation,slope,margin,gradient_equivalent".to_string()];
            for k in 0..report.slopes.len() {
                lines.push(format!(
                    "{k},{},{},{}",
                    fmt(report.slopes[k]),
                    fmt(report.margins[k]),
                    report.gradient_equivalent[k]
                ));
            }
            lines.push(format!("# chain_slope = {}", fmt(report.chain_slope)));
            lines.push(format!("# min_margin = {}", fmt(report.min_margin)));
            lines.push(format!("# seed = {seed}"));
            lines.push(format!("# pass = {pass}"));
            let json = serde_json::json!({
                "phi": phi.name(), "seed": seed, "report": report, "pass": pass,
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(if pass { 0 } else { VERIFY_FAIL })
        }

        Command::Hwi { chain, p0, p1, phi, kappa, samples, slices, seed, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let phi = parse_phi(&phi)?;
            let seed = resolve_seed(seed);
            let p0 = pick_initial(&loaded, &p0, false)?;
            let p1 = match &p1 {
                Some(text) => parse_distribution(text, loaded.gen.n())?,
                None => loaded.q.clone(),
            };
            let opts = GeodesicOptions { seed, ..Default::default() };
            let (kappa, source) = match kappa {
                Some(k) => (k, KappaSource::UserSupplied),
                None => {
                    let est = ricci_lower_bound_estimate(
                        &loaded.gen,
                        &loaded.q,
                        phi,
                        samples,
                        slices,
                        seed,
                        &opts,
                    )
                    .map_err(|e| e.to_string())?;
                    (est.kappa_hat, KappaSource::Estimated)
                }
            };
            let report = hwi_check(
                &p0, &p1, kappa, source, phi, &loaded.gen, &loaded.q, slices, &opts,
            )
            .map_err(|e| e.to_string())?;
            let sharp_ok =
                report.sharp_bracket <= report.fisher.max(0.0).sqrt() + 1e-10;
            let pass = report.holds && sharp_ok;
            let lines = vec![
                "field,value".to_string(),
                format!("phi,{}", phi.name()),
                format!("distance,{}", fmt(report.distance)),
                format!("fisher,{}", fmt(report.fisher)),
                format!("entropy_p0,{}", fmt(report.entropy_p0)),
                format!("entropy_p1,{}", fmt(report.entropy_p1)),
                format!("lhs,{}", fmt(report.lhs)),
                format!("rhs,{}", fmt(report.rhs)),
                format!("slack,{}", fmt(report.slack)),
                format!("sharp_bracket,{}", fmt(report.sharp_bracket)),
                format!("sharp_rhs,{}", fmt(report.sharp_rhs)),
                format!("kappa,{}", fmt(report.kappa)),
                format!("kappa_source,{:?}", report.kappa_source),
                format!("seed,{seed}"),
                format!("pass,{pass}"),
            ];
            let json = serde_json::json!({
                "phi": phi.name(), "seed": seed, "report": report, "pass": pass,
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(if pass { 0 } else { VERIFY_FAIL })
        }

        Command::Ricci { chain, phi, samples, slices, seed, out } => {
            configure_threads(&out);
            let loaded = load_chain(&chain)?;
            let phi = parse_phi(&phi)?;
            let seed = resolve_seed(seed);
            let opts = GeodesicOptions { seed, ..Default::default() };
            let est = ricci_lower_bound_estimate(
                &loaded.gen,
                &loaded.q,
                phi,
                samples,
                slices,
                seed,
                &opts,
            )
            .map_err(|e| e.to_string())?;
            let lines = vec![
                "field,value".to_string(),
                format!("phi,{}", phi.name()),
                format!("kappa_hat,{}", fmt(est.kappa_hat)),
                format!("evaluated,{}", est.evaluated),
                format!("skipped,{}", est.skipped),
                format!("seed,{seed}"),
                "# kappa_hat is an upper estimate of the Ricci lower bound".to_string(),
            ];
            let json = serde_json::json!({
                "phi": phi.name(), "seed": seed, "estimate": est,
                "note": "kappa_hat is an upper estimate of the Ricci lower bound",
            });
            emit(&out, &Artifact { lines, json }).map_err(|e| e.to_string())?;
            Ok(0)
        }
    }
}

/// Occupation-fraction test: one long path per "path" budget unit is
/// wasteful, so a single path of horizon T is sampled per ensemble member
/// and the per-state occupation fractions are compared against Q with the
/// ensemble's own standard error.
fn ergodic_report(
    loaded: &Loaded,
    t_final: f64,
    paths: usize,
    seed: u64,
) -> Result<ctmc_dissipation::trajectory::MartingaleTestReport<f64>, String> {
    let n = loaded.gen.n();
    let horizon = t_final.max(1.0);
    let per_path = map_paths(
        &loaded.gen,
        &loaded.q,
        horizon,
        Law::Q,
        paths.min(10_000).max(16),
        seed,
        |_, path| {
            (0..n)
                .map(|y| {
                    let ind = ndarray::Array1::from_iter(
                        (0..n).map(|x| if x == y { 1.0 } else { 0.0 }),
                    );
                    ergodic_average(path, &ind)
                })
                .collect::<Vec<f64>>()
        },
    );
    let m = per_path.len() as f64;
    let mut estimates = Vec::with_capacity(n);
    let mut stderrs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut z_scores = Vec::with_capacity(n);
    for y in 0..n {
        let mean = per_path.iter().map(|r| r[y]).sum::<f64>() / m;
        let var = per_path.iter().map(|r| (r[y] - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        let target = loaded.q.get(y);
        estimates.push(mean);
        stderrs.push(se);
        targets.push(target);
        z_scores.push(if se > 0.0 { (mean - target) / se } else { 0.0 });
    }
    let pass = z_scores.iter().all(|z| z.abs() <= 4.0);
    Ok(ctmc_dissipation::trajectory::MartingaleTestReport {
        test: "ergodic".into(),
        phi: None,
        measure: Some("Q".into()),
        checkpoints: (0..n).map(|x| x as f64).collect(),
        estimates,
        stderrs,
        targets,
        z_scores,
        paths_used: per_path.len(),
        seed,
        threshold: 4.0,
        pass,
        note: "checkpoints column holds the state index; targets are the stationary \
               probabilities"
            .into(),
    })
}
