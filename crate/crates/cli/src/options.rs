//! Run configurations: flags and config-file keys, merged and resolved into a
//! validated solver setup.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use regmin::driver::{gradient_method_config, run_algorithm1, run_algorithm2, Algorithm};
use regmin::metric_policy::min_floor_condition2;
use regmin::{
    AcceptanceRule, Metric, MetricPolicy, PolicyKind, ProblemInstance, SigmaRule, SolverConfig, SubsolverChoice, Trace,
};

use crate::{read_file, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmName {
    /// Accept/reject scheme.
    Alg1,
    /// Always-accept variant; needs the problem's L.
    Alg2,
    /// Gradient method `x - alpha grad f` run through the accept/reject scheme.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Constant,
    Inflated,
    Shrink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaRuleName {
    Constant,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptanceName {
    RatioModel,
    RatioQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SubsolverName {
    Secular,
    Descent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StartName {
    /// The problem's default starting point.
    Default,
    /// Uniform draw from the problem's probe box, seeded by `seed`.
    Random,
}

/// Every run parameter, each optional. Used both as command-line flags and as
/// the keys of a TOML config file (`tau = 0.01`); flags win.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// Catalog problem name, e.g. quad-d10-k100.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmName>,
    /// Regularization power r >= 3.
    #[arg(long)]
    pub r: Option<f64>,
    /// Inexactness parameter tau.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Acceptance threshold eta.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Initial (adaptive) or fixed (constant) regularization weight.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub sigma_rule: Option<SigmaRuleName>,
    #[arg(long)]
    pub sigma_increase: Option<f64>,
    #[arg(long)]
    pub sigma_decrease: Option<f64>,
    #[arg(long)]
    pub sigma_max: Option<f64>,
    /// Reduction ratio used by alg1.
    #[arg(long, value_enum)]
    pub acceptance: Option<AcceptanceName>,
    #[arg(long, value_enum)]
    pub subsolver: Option<SubsolverName>,
    /// Iteration cap of the descent subsolver.
    #[arg(long)]
    pub max_inner: Option<usize>,
    #[arg(long)]
    pub secular_tol: Option<f64>,
    /// Stop once |grad f| falls to this value.
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Consecutive rejections at sigma_max before the run is declared stalled.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyName>,
    /// Eigenvalue floor of the metric sequence.
    #[arg(long)]
    pub a: Option<f64>,
    /// First term of the summable inflation sequence psi_k = psi0 / (k + 1)^2.
    #[arg(long)]
    pub psi0: Option<f64>,
    /// Weight of the shrink-to-floor policy.
    #[arg(long)]
    pub shrink_weight: Option<f64>,
    /// Q_0 = q0_scale * I; defaults to a.
    #[arg(long)]
    pub q0_scale: Option<f64>,
    /// Gradient-method step size; defaults to 1/L.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gradient-method sufficient-decrease parameter.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub start: Option<StartName>,
    /// Explicit starting point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Seed for the random starting point.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; falls back to $REGMIN_OUT_DIR.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

macro_rules! overlay {
    ($top:expr, $base:expr; $($field:ident),* $(,)?) => {
        RunOptions { $($field: $top.$field.or($base.$field)),* }
    };
}

impl RunOptions {
    /// Parses a TOML config file of `key = value` lines.
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Usage(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        Self::from_toml(&read_file(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` take precedence over those in `base`.
    pub fn over(self, base: RunOptions) -> RunOptions {
        overlay!(self, base;
            problem, algorithm, r, tau, eta, sigma, sigma_rule, sigma_increase, sigma_decrease, sigma_max,
            acceptance, subsolver, max_inner, secular_tol, grad_tol, max_iters, patience, policy, a, psi0,
            shrink_weight, q0_scale, alpha, gamma, start, x0, seed, out_dir,
        )
    }
}

/// A resolved run, recorded next to every trace.
#[derive(Debug, Clone, Serialize)]
pub struct RunSpec {
    pub problem: String,
    pub algorithm: AlgorithmName,
    pub config: SolverConfig,
    pub policy: PolicyKind,
    pub a: f64,
    pub psi0: f64,
    pub q0_scale: f64,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub x0: Vec<f64>,
    pub seed: Option<u64>,
}

/// A validated run, ready to execute.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub spec: RunSpec,
    pub problem: ProblemInstance,
    pub policy: MetricPolicy,
    pub x0: DVector<f64>,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl PreparedRun {
    /// Validates `opts` and fills in defaults.
    pub fn resolve(opts: &RunOptions) -> Result<Self, Failure> {
        let name = opts
            .problem
            .as_deref()
            .ok_or_else(|| usage("missing problem name (--problem)"))?;
        let problem = ProblemInstance::by_name(name)?;
        let algorithm = opts.algorithm.unwrap_or(AlgorithmName::Alg1);
        let n = problem.dim();
        let lipschitz = problem.lipschitz().map(|l| l.value);

        let x0 = match (&opts.x0, opts.start.unwrap_or(StartName::Default)) {
            (Some(_), StartName::Random) => return Err(usage("x0 and start = random are mutually exclusive")),
            (Some(v), _) if v.len() != n => {
                return Err(usage(format!(
                    "x0 has {} entries, problem `{name}` has dimension {n}",
                    v.len()
                )))
            }
            (Some(v), _) if v.iter().any(|t| !t.is_finite()) => return Err(usage("x0 entries must be finite")),
            (Some(v), _) => DVector::from_column_slice(v),
            (None, StartName::Default) => problem.start().clone(),
            (None, StartName::Random) => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.unwrap_or(0));
                problem.random_point(&mut rng)
            }
        };

        let gradient_only = |field: &str, set: bool| {
            if set && algorithm != AlgorithmName::Gradient {
                Err(usage(format!("{field} only applies to the gradient algorithm")))
            } else {
                Ok(())
            }
        };
        gradient_only("alpha", opts.alpha.is_some())?;
        gradient_only("gamma", opts.gamma.is_some())?;

        let (mut config, policy, alpha, gamma) = match algorithm {
            AlgorithmName::Gradient => {
                for (field, set) in [
                    ("tau", opts.tau.is_some()),
                    ("eta", opts.eta.is_some()),
                    (
                        "sigma",
                        opts.sigma.is_some() || opts.sigma_rule.is_some() || opts.sigma_max.is_some(),
                    ),
                    (
                        "policy",
                        opts.policy.is_some() || opts.a.is_some() || opts.q0_scale.is_some(),
                    ),
                    ("acceptance", opts.acceptance.is_some()),
                    ("subsolver", opts.subsolver.is_some()),
                ] {
                    if set {
                        return Err(usage(format!(
                            "{field} is fixed by the gradient algorithm (set alpha and gamma)"
                        )));
                    }
                }
                let alpha = match (opts.alpha, lipschitz) {
                    (Some(alpha), _) => alpha,
                    (None, Some(l)) => 1.0 / l,
                    (None, None) => return Err(usage(format!("problem `{name}` has no L; pass alpha explicitly"))),
                };
                let gamma = opts.gamma.unwrap_or(0.25);
                let (config, policy) = gradient_method_config(alpha, gamma, n)?;
                (config, policy, Some(alpha), Some(gamma))
            }
            AlgorithmName::Alg1 | AlgorithmName::Alg2 => {
                let always = algorithm == AlgorithmName::Alg2;
                let defaults = SolverConfig::default();
                let tau = opts.tau.unwrap_or(0.0);
                let eta = opts.eta.unwrap_or(if always { 0.5 } else { defaults.eta });
                let a = match (opts.a, always, lipschitz) {
                    (Some(a), _, _) => a,
                    (None, false, _) => 1.0,
                    (None, true, Some(l)) => min_floor_condition2(tau, l, eta),
                    (None, true, None) => {
                        return Err(Failure::Solver(format!(
                            "Condition 2 requires L, which `{name}` does not provide"
                        )))
                    }
                };
                if always && opts.acceptance.is_some() {
                    return Err(usage("alg2 accepts every step; acceptance only applies to alg1"));
                }
                let acceptance = if always {
                    AcceptanceRule::Always
                } else {
                    match opts.acceptance.unwrap_or(AcceptanceName::RatioModel) {
                        AcceptanceName::RatioModel => AcceptanceRule::RatioModel,
                        AcceptanceName::RatioQuadratic => AcceptanceRule::RatioQuadratic,
                    }
                };
                let rule_name = opts.sigma_rule.unwrap_or(if always {
                    SigmaRuleName::Constant
                } else {
                    SigmaRuleName::Adaptive
                });
                let sigma = opts.sigma.unwrap_or(1.0);
                let sigma_rule = match rule_name {
                    SigmaRuleName::Constant => {
                        if opts.sigma_increase.is_some() || opts.sigma_decrease.is_some() {
                            return Err(usage("sigma_increase/sigma_decrease need sigma_rule = adaptive"));
                        }
                        SigmaRule::Constant { value: sigma }
                    }
                    SigmaRuleName::Adaptive => SigmaRule::Adaptive {
                        increase: opts.sigma_increase.unwrap_or(2.0),
                        decrease: opts.sigma_decrease.unwrap_or(0.5),
                        initial: sigma,
                    },
                };
                let subsolver = match opts.subsolver.unwrap_or(SubsolverName::Secular) {
                    SubsolverName::Secular => {
                        if opts.max_inner.is_some() {
                            return Err(usage("max_inner applies to the descent subsolver only"));
                        }
                        SubsolverChoice::Secular
                    }
                    SubsolverName::Descent => SubsolverChoice::Descent {
                        max_inner: opts.max_inner.unwrap_or(100_000),
                    },
                };
                let config = SolverConfig {
                    tau,
                    eta,
                    // a constant weight needs no headroom, and sigma_max enters the rate constant
                    sigma_max: opts.sigma_max.unwrap_or(match sigma_rule {
                        SigmaRule::Constant { value } => value,
                        SigmaRule::Adaptive { .. } => defaults.sigma_max,
                    }),
                    sigma_rule,
                    acceptance,
                    subsolver,
                    ..defaults
                };
                let kind = match opts.policy.unwrap_or(PolicyName::Constant) {
                    PolicyName::Constant => PolicyKind::Constant,
                    PolicyName::Inflated => PolicyKind::Inflated,
                    PolicyName::Shrink => PolicyKind::ShrinkToFloor {
                        weight: opts.shrink_weight.unwrap_or(0.5),
                    },
                };
                if opts.shrink_weight.is_some() && !matches!(kind, PolicyKind::ShrinkToFloor { .. }) {
                    return Err(usage("shrink_weight needs policy = shrink"));
                }
                let q0 = Metric::scaled_identity(n, opts.q0_scale.unwrap_or(a))?;
                let policy = MetricPolicy::new(kind, q0, a, opts.psi0.unwrap_or(0.0))?;
                (config, policy, None, None)
            }
        };
        if let Some(r) = opts.r {
            config.r = r;
        }
        if let Some(tol) = opts.secular_tol {
            config.secular_tol = tol;
        }
        if let Some(patience) = opts.patience {
            config.patience = patience;
        }
        if let Some(max_iters) = opts.max_iters {
            config.max_iters = max_iters;
        }
        config.grad_tol = opts.grad_tol.or(config.grad_tol);
        config.validate()?;

        let spec = RunSpec {
            problem: name.to_string(),
            algorithm,
            config,
            policy: policy.kind(),
            a: policy.floor(),
            psi0: policy.psi0(),
            q0_scale: policy.q0().max_eigenvalue(),
            alpha,
            gamma,
            x0: x0.iter().copied().collect(),
            seed: opts.seed,
        };
        Ok(Self {
            spec,
            problem,
            policy,
            x0,
        })
    }

    pub fn execute(&self) -> Result<Trace, Failure> {
        let cfg = &self.spec.config;
        let trace = match self.spec.algorithm {
            AlgorithmName::Alg1 => run_algorithm1(&self.problem, cfg, &self.policy, &self.x0)?,
            AlgorithmName::Alg2 => run_algorithm2(&self.problem, cfg, &self.policy, &self.x0)?,
            AlgorithmName::Gradient => {
                let mut trace = run_algorithm1(&self.problem, cfg, &self.policy, &self.x0)?;
                trace.algorithm = Algorithm::Gradient;
                trace
            }
        };
        Ok(trace)
    }
}
