//! TOML experiment configuration: schema, default resolution and
//! validation into library types.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use psgd_lab::analysis::{geometric_checkpoints, with_extra_points, ConstantsReport};
use psgd_lab::escape::{DriftMode, EscapeConfig, StartMode};
use psgd_lab::{NoiseGain, NoiseModel, ObjectiveSpec, Perturbation, ProjectionSet, RunConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Mse,
    Regret,
    Lyapunov,
    Escape,
    Rate,
    OracleCheck,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Mse => "mse",
            ExperimentKind::Regret => "regret",
            ExperimentKind::Lyapunov => "lyapunov",
            ExperimentKind::Escape => "escape",
            ExperimentKind::Rate => "rate",
            ExperimentKind::OracleCheck => "oracle-check",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A matrix written either as a bare number (1×1) or as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixValue {
    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>, CliError> {
        match self {
            MatrixValue::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            MatrixValue::Rows(rows) => {
                let r = rows.len();
                let c = rows.first().map_or(0, |row| row.len());
                if r == 0 || rows.iter().any(|row| row.len() != c) {
                    return Err(CliError::Config(format!("{what}: rows must be nonempty and of equal length")));
                }
                Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
            }
        }
    }
}

/// A vector written either as a bare number (length 1) or as a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorValue {
    Scalar(f64),
    List(Vec<f64>),
}

impl VectorValue {
    pub fn to_vector(&self) -> DVector<f64> {
        match self {
            VectorValue::Scalar(v) => DVector::from_element(1, *v),
            VectorValue::List(v) => DVector::from_vec(v.clone()),
        }
    }

    fn from_vector(v: &DVector<f64>) -> Self {
        VectorValue::List(v.iter().copied().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub b: MatrixValue,
    pub theta_star: VectorValue,
    pub k_d: Option<f64>,
    pub alpha: Option<f64>,
    /// Constant gain `σ·I` (the default, with σ = 1).
    pub sigma: Option<f64>,
    /// State-dependent gain `1 + min(‖θ‖, cap)`.
    pub gain_cap: Option<f64>,
    pub gain_matrix: Option<MatrixValue>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKindName {
    Iid,
    Var1,
    Ma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKindName,
    /// Marginal covariance for i.i.d. noise, innovation covariance otherwise.
    pub cov: MatrixValue,
    pub a: Option<MatrixValue>,
    pub coefficients: Option<Vec<MatrixValue>>,
    pub truncation: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    Box,
    Ball,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSection {
    pub kind: Option<ProjectionKind>,
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub c0: Option<f64>,
    pub n_max: usize,
    pub theta0: Option<VectorValue>,
    pub replications: Option<usize>,
    /// Also write the first replication's trajectory.
    pub export_trajectory: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub gamma: Option<f64>,
    pub lambda0: Option<f64>,
    /// Explicit checkpoint grid; otherwise geometric from
    /// `max(κ₊, checkpoint_start)` to `n_max`.
    pub checkpoints: Option<Vec<usize>>,
    pub checkpoint_start: Option<usize>,
    pub extra_checkpoints: Option<Vec<usize>>,
    pub quadrature_order: Option<usize>,
    pub tail_tol: Option<f64>,
    pub rate_from: Option<usize>,
    pub rate_late_from: Option<usize>,
    pub oracle_checkpoints: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartName {
    Center,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeSection {
    pub mu: f64,
    pub nu: Option<f64>,
    pub exit_radius: f64,
    pub horizon: Option<f64>,
    pub scales: Vec<usize>,
    pub replications: usize,
    pub start: Option<StartName>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftName {
    Gradient,
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSection {
    pub drift: Option<DriftName>,
    pub horizon: Option<f64>,
    pub segments: Option<usize>,
    /// Starting offsets `ψ(0)` from the minimizer, one path family each.
    pub starts: Option<Vec<VectorValue>>,
}

/// The file as written, and after [`ExperimentConfig::resolve`] the same
/// structure with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub objective: ObjectiveSection,
    pub noise: NoiseSection,
    pub projection: Option<ProjectionSection>,
    pub run: Option<RunSection>,
    pub analysis: Option<AnalysisSection>,
    pub escape: Option<EscapeSection>,
    pub rate: Option<RateSection>,
}

/// Validated configuration for one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub workers: usize,
    pub resolved: ConfigFile,
    pub objective: ObjectiveSpec<f64>,
    pub noise: NoiseModel<f64>,
    pub run: Option<RunPlan>,
    pub escape: Option<EscapeConfig<f64>>,
    pub rate: Option<RatePlan>,
}

#[derive(Clone, Debug)]
pub struct RunPlan {
    pub config: RunConfig<f64>,
    pub constants: ConstantsReport<f64>,
    pub checkpoints: Vec<usize>,
    pub quadrature_order: usize,
    pub tail_tol: f64,
    pub rate_from: usize,
    pub rate_late_from: usize,
    pub oracle_checkpoints: Vec<usize>,
    pub export_trajectory: bool,
}

#[derive(Clone, Debug)]
pub struct RatePlan {
    pub drift: DriftMode,
    pub horizon: f64,
    pub segments: usize,
    pub starts: Vec<DVector<f64>>,
}

fn model_error(e: psgd_lab::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Reads and validates a config file; `seed` and `workers` override the
/// file's values.
pub fn parse_config(path: &Path, kind: ExperimentKind, seed: Option<u64>, workers: Option<usize>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, kind, seed, workers)
}

pub fn parse_config_str(text: &str, kind: ExperimentKind, seed: Option<u64>, workers: Option<usize>) -> Result<ExperimentConfig, CliError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    ExperimentConfig::resolve(file, kind, seed, workers)
}

fn build_objective(s: &ObjectiveSection) -> Result<ObjectiveSpec<f64>, CliError> {
    let b = s.b.to_matrix("objective.b")?;
    let theta_star = s.theta_star.to_vector();
    let perturbation = match (s.k_d, s.alpha) {
        (None, None) | (Some(0.0), _) => Perturbation::None,
        (Some(k_d), Some(alpha)) => Perturbation::Power { k_d, alpha },
        _ => return Err(CliError::Config("objective: k_d and alpha must be given together".into())),
    };
    let gain = match (s.sigma, s.gain_cap, &s.gain_matrix) {
        (sigma, None, None) => NoiseGain::Constant(sigma.unwrap_or(1.0)),
        (None, Some(cap), None) => NoiseGain::StateDependent { cap },
        (None, None, Some(m)) => NoiseGain::Matrix(m.to_matrix("objective.gain_matrix")?),
        _ => return Err(CliError::Config("objective: give at most one of sigma, gain_cap, gain_matrix".into())),
    };
    ObjectiveSpec::new(b, theta_star, perturbation, gain).map_err(model_error)
}

fn build_noise(s: &NoiseSection) -> Result<NoiseModel<f64>, CliError> {
    let cov = s.cov.to_matrix("noise.cov")?;
    let model = match s.kind {
        NoiseKindName::Iid => {
            if s.a.is_some() || s.coefficients.is_some() {
                return Err(CliError::Config("noise: iid takes no 'a' or 'coefficients'".into()));
            }
            NoiseModel::iid_gaussian(cov)
        }
        NoiseKindName::Var1 => {
            let a = s.a.as_ref().ok_or_else(|| CliError::Config("noise: var1 needs 'a'".into()))?;
            NoiseModel::var1(a.to_matrix("noise.a")?, cov)
        }
        NoiseKindName::Ma => {
            let cs = s.coefficients.as_ref().ok_or_else(|| CliError::Config("noise: ma needs 'coefficients'".into()))?;
            let cs = cs.iter().map(|c| c.to_matrix("noise.coefficients")).collect::<Result<Vec<_>, _>>()?;
            NoiseModel::moving_average(cs, cov)
        }
    }
    .map_err(model_error)?;
    match s.truncation {
        Some(t) => model.with_truncation(t).map_err(model_error),
        None => Ok(model),
    }
}

impl ExperimentConfig {
    pub fn resolve(mut file: ConfigFile, kind: ExperimentKind, seed: Option<u64>, workers: Option<usize>) -> Result<Self, CliError> {
        if let Some(k) = file.experiment {
            if k != kind {
                return Err(CliError::Config(format!("config is for experiment '{k}', not '{kind}'")));
            }
        }
        file.experiment = Some(kind);
        let seed = seed.or(file.seed).unwrap_or(0);
        file.seed = Some(seed);
        let workers = workers.or(file.workers).unwrap_or(1);
        if workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        file.workers = Some(workers);

        let objective = build_objective(&file.objective)?;
        let noise = build_noise(&file.noise)?;
        if noise.dim() != objective.dim() {
            return Err(CliError::Config(format!(
                "noise dimension {} does not match objective dimension {}",
                noise.dim(),
                objective.dim()
            )));
        }
        if file.objective.sigma.is_none() && file.objective.gain_cap.is_none() && file.objective.gain_matrix.is_none() {
            file.objective.sigma = Some(1.0);
        }
        let base_seed = psgd_lab::seed::seed_with_label(seed, kind.label());

        let needs_run = matches!(kind, ExperimentKind::Mse | ExperimentKind::Regret | ExperimentKind::Lyapunov | ExperimentKind::OracleCheck);
        let run = if needs_run {
            Some(resolve_run(&mut file, &objective, &noise, kind, base_seed)?)
        } else {
            None
        };
        let escape = if kind == ExperimentKind::Escape {
            Some(resolve_escape(&mut file, &objective, &noise, base_seed)?)
        } else {
            None
        };
        let rate = if kind == ExperimentKind::Rate { Some(resolve_rate(&mut file, &objective)?) } else { None };
        Ok(ExperimentConfig { kind, seed, workers, resolved: file, objective, noise, run, escape, rate })
    }

    /// The resolved configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(&self.resolved).expect("config serializes")
    }
}

fn resolve_run(
    file: &mut ConfigFile,
    objective: &ObjectiveSpec<f64>,
    noise: &NoiseModel<f64>,
    kind: ExperimentKind,
    base_seed: u64,
) -> Result<RunPlan, CliError> {
    let p = objective.dim();
    let run = file.run.as_mut().ok_or_else(|| CliError::Config(format!("experiment '{kind}' needs a [run] section")))?;
    let proj = file.projection.get_or_insert(ProjectionSection { kind: None, radius: None });
    let pkind = *proj.kind.get_or_insert(ProjectionKind::Box);
    let radius = *proj.radius.get_or_insert(10.0 * objective.theta_star().norm() + 10.0);
    let projection = match pkind {
        ProjectionKind::Box => ProjectionSet::Box { half_width: radius },
        ProjectionKind::Ball => ProjectionSet::Ball { radius },
    };
    let c0 = *run.c0.get_or_insert(1.0);
    let theta0 = run.theta0.get_or_insert_with(|| VectorValue::from_vector(&DVector::zeros(p))).to_vector();
    let replications = *run.replications.get_or_insert(100);
    let export_trajectory = *run.export_trajectory.get_or_insert(false);
    let n_max = run.n_max;
    if n_max < 1 {
        return Err(CliError::Config("run.n_max must be at least 1".into()));
    }
    let config = RunConfig { objective: objective.clone(), noise: noise.clone(), projection, c0, n_max, theta0, seed: base_seed, replications };
    config.validate().map_err(model_error)?;

    let an = file.analysis.get_or_insert(AnalysisSection {
        gamma: None,
        lambda0: None,
        checkpoints: None,
        checkpoint_start: None,
        extra_checkpoints: None,
        quadrature_order: None,
        tail_tol: None,
        rate_from: None,
        rate_late_from: None,
        oracle_checkpoints: None,
    });
    let gamma = *an.gamma.get_or_insert(0.25);
    let lambda0 = *an.lambda0.get_or_insert((objective.lambda_min() - 1.0) / 2.0);
    let constants = ConstantsReport::for_config(&config, gamma, Some(lambda0)).map_err(model_error)?;
    let oracle_checkpoints = if kind == ExperimentKind::OracleCheck {
        an.oracle_checkpoints
            .get_or_insert_with(|| [10, 100, 1000].into_iter().filter(|&n| n <= n_max).collect())
            .clone()
    } else {
        Vec::new()
    };
    let checkpoints = if kind == ExperimentKind::OracleCheck {
        check_oracle_applies(objective, noise, &oracle_checkpoints, n_max)?;
        oracle_checkpoints.clone()
    } else {
        let grid = match &an.checkpoints {
            Some(c) => {
                let mut c = c.clone();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => {
                let start = *an.checkpoint_start.get_or_insert(100.min(n_max));
                let extra = an.extra_checkpoints.get_or_insert_with(Vec::new).clone();
                let grid = with_extra_points(geometric_checkpoints(start.max(constants.kappa_plus), n_max), &extra);
                an.checkpoints = Some(grid.clone());
                grid
            }
        };
        if grid.is_empty() || grid[0] < constants.kappa_plus.max(2) || *grid.last().unwrap() > n_max {
            return Err(CliError::Config(format!(
                "checkpoints must be nonempty and lie in [max(κ₊, 2), n_max] = [{}, {n_max}]",
                constants.kappa_plus.max(2)
            )));
        }
        grid
    };
    let quadrature_order = *an.quadrature_order.get_or_insert(12);
    let tail_tol = *an.tail_tol.get_or_insert(1e-12);
    let rate_from = *an.rate_from.get_or_insert((n_max / 100).max(1));
    let rate_late_from = *an.rate_late_from.get_or_insert((n_max / 10).max(rate_from));
    if quadrature_order == 0 || !(tail_tol > 0.0) {
        return Err(CliError::Config("analysis: quadrature_order and tail_tol must be positive".into()));
    }
    if kind == ExperimentKind::Lyapunov {
        psgd_lab::lyapunov::ConditionalSums::new(noise, c0, 1, tail_tol).map_err(model_error)?;
    }
    Ok(RunPlan {
        config,
        constants,
        checkpoints,
        quadrature_order,
        tail_tol,
        rate_from,
        rate_late_from,
        oracle_checkpoints,
        export_trajectory,
    })
}

fn check_oracle_applies(objective: &ObjectiveSpec<f64>, noise: &NoiseModel<f64>, cps: &[usize], n_max: usize) -> Result<(), CliError> {
    let scalar_iid = objective.dim() == 1
        && matches!(objective.perturbation(), Perturbation::None)
        && matches!(objective.gain(), NoiseGain::Constant(_))
        && matches!(noise.kind(), psgd_lab::NoiseKind::IidGaussian)
        && noise.truncation().is_none();
    if !scalar_iid {
        return Err(CliError::Config(
            "oracle-check needs a 1-D quadratic objective with constant gain and untruncated iid noise".into(),
        ));
    }
    if cps.is_empty() || cps.iter().any(|&n| n == 0 || n > n_max) {
        return Err(CliError::Config(format!("oracle checkpoints must lie in [1, {n_max}]")));
    }
    Ok(())
}

fn resolve_escape(file: &mut ConfigFile, objective: &ObjectiveSpec<f64>, noise: &NoiseModel<f64>, base_seed: u64) -> Result<EscapeConfig<f64>, CliError> {
    let e = file.escape.as_mut().ok_or_else(|| CliError::Config("experiment 'escape' needs an [escape] section".into()))?;
    let nu = *e.nu.get_or_insert(e.mu / 10.0);
    let horizon = *e.horizon.get_or_insert(3.0);
    let start = match *e.start.get_or_insert(StartName::Uniform) {
        StartName::Center => StartMode::Center,
        StartName::Uniform => StartMode::UniformInNu,
    };
    let cfg = EscapeConfig {
        objective: objective.clone(),
        noise: noise.clone(),
        mu: e.mu,
        nu,
        exit_radius: e.exit_radius,
        horizon,
        scales: e.scales.clone(),
        replications: e.replications,
        start,
        seed: base_seed,
    };
    cfg.validate().map_err(model_error)?;
    Ok(cfg)
}

fn resolve_rate(file: &mut ConfigFile, objective: &ObjectiveSpec<f64>) -> Result<RatePlan, CliError> {
    let p = objective.dim();
    let r = file.rate.get_or_insert(RateSection { drift: None, horizon: None, segments: None, starts: None });
    let drift = match *r.drift.get_or_insert(DriftName::Gradient) {
        DriftName::Gradient => DriftMode::Gradient,
        DriftName::Literal => DriftMode::Literal,
    };
    let horizon = *r.horizon.get_or_insert(1.0);
    let segments = *r.segments.get_or_insert(200);
    let starts: Vec<DVector<f64>> = r
        .starts
        .get_or_insert_with(|| vec![VectorValue::from_vector(&DVector::from_element(p, 0.1))])
        .iter()
        .map(|v| v.to_vector())
        .collect();
    if !(horizon > 0.0) || segments == 0 {
        return Err(CliError::Config("rate: horizon and segments must be positive".into()));
    }
    if starts.iter().any(|s| s.len() != p) {
        return Err(CliError::Config(format!("rate: every start must have dimension {p}")));
    }
    Ok(RatePlan { drift, horizon, segments, starts })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[objective]
b = 2.0
theta_star = 0.5

[noise]
kind = "iid"
cov = 1.0

[run]
n_max = 1000
"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = parse_config_str(MINIMAL, ExperimentKind::Mse, None, None).unwrap();
        let an = c.resolved.analysis.as_ref().unwrap();
        assert_eq!(an.lambda0, Some(0.5));
        assert_eq!(an.gamma, Some(0.25));
        assert_eq!(c.resolved.projection.as_ref().unwrap().radius, Some(15.0));
        assert_eq!(c.resolved.run.as_ref().unwrap().c0, Some(1.0));
        let echo = c.echo();
        assert!(echo.contains("lambda0 = 0.5"), "{echo}");
        let again = parse_config_str(&echo, ExperimentKind::Mse, None, None).unwrap();
        assert_eq!(again.resolved, c.resolved);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = MINIMAL.replace("n_max = 1000", "n_max = 1000\nstep = 3");
        let err = parse_config_str(&text, ExperimentKind::Mse, None, None).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }

    #[test]
    fn small_curvature_cites_a4() {
        let text = MINIMAL.replace("b = 2.0", "b = 0.5");
        let err = parse_config_str(&text, ExperimentKind::Mse, None, None).unwrap_err();
        assert!(err.to_string().contains("A4 requires λ_min(B) > 1"), "{err}");
    }

    #[test]
    fn boundary_minimizer_is_rejected() {
        let text = MINIMAL.replace("n_max = 1000", "n_max = 1000\n[projection]\nradius = 0.5");
        let err = parse_config_str(&text, ExperimentKind::Mse, None, None).unwrap_err();
        assert!(err.to_string().contains("θ* ∈ G°"), "{err}");
    }

    #[test]
    fn overrides_and_kind_mismatch() {
        let c = parse_config_str(&format!("seed = 5\n{MINIMAL}"), ExperimentKind::Regret, Some(9), Some(3)).unwrap();
        assert_eq!((c.seed, c.workers), (9, 3));
        let err = parse_config_str(&format!("experiment = \"escape\"\n{MINIMAL}"), ExperimentKind::Mse, None, None).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn oracle_check_requires_scalar_iid() {
        let text = MINIMAL.replace("b = 2.0", "b = 2.0\nk_d = 0.1\nalpha = 1.0");
        assert!(parse_config_str(&text, ExperimentKind::OracleCheck, None, None).is_err());
        assert!(parse_config_str(MINIMAL, ExperimentKind::OracleCheck, None, None).is_ok());
    }
}
