//! Strict INI-style run configuration: `key = value` lines under optional
//! `[section]` headers. Unknown keys and malformed values are errors with
//! their line number; misspellings never fall back to defaults silently.

use std::path::{Path, PathBuf};

use crate::adapt::AdaptConfig;
use crate::error::VerifemError;
use crate::mesh::BcLayout;
use crate::problems::ProblemKind;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EstimatorKind {
    Zz,
    Spr,
    Explicit,
    FluxFree,
    CreAnalytic,
    CreFe,
    Richardson,
}

impl EstimatorKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "zz" => Some(EstimatorKind::Zz),
            "spr" => Some(EstimatorKind::Spr),
            "explicit" => Some(EstimatorKind::Explicit),
            "flux_free" => Some(EstimatorKind::FluxFree),
            "cre_analytic" => Some(EstimatorKind::CreAnalytic),
            "cre_fe" => Some(EstimatorKind::CreFe),
            "richardson" => Some(EstimatorKind::Richardson),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Zz => "zz",
            EstimatorKind::Spr => "spr",
            EstimatorKind::Explicit => "explicit",
            EstimatorKind::FluxFree => "flux_free",
            EstimatorKind::CreAnalytic => "cre_analytic",
            EstimatorKind::CreFe => "cre_fe",
            EstimatorKind::Richardson => "richardson",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum GoalMethod {
    CauchySchwarz,
    Parallelogram,
    Cre,
    CreEnriched,
    Dwr,
}

impl GoalMethod {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "cauchy_schwarz" => Some(GoalMethod::CauchySchwarz),
            "parallelogram" => Some(GoalMethod::Parallelogram),
            "cre" => Some(GoalMethod::Cre),
            "cre_enriched" => Some(GoalMethod::CreEnriched),
            "dwr" => Some(GoalMethod::Dwr),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum QoiKind {
    SubdomainAverage,
    FluxAverage,
}

#[derive(Clone, Debug)]
pub struct GoalSection {
    pub qoi: QoiKind,
    /// Axis-aligned subdomain `[x0, y0, x1, y1]`.
    pub domain_box: [f64; 4],
    pub direction: [f64; 2],
    pub methods: Vec<GoalMethod>,
}

#[derive(Clone, Debug)]
pub struct AdaptSection {
    pub config: AdaptConfig,
    pub estimator: EstimatorKind,
    pub goal_mode: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct StudySection {
    pub adaptive: bool,
    pub levels: usize,
}

/// Custom constant-coefficient problem on the unit square.
#[derive(Clone, Debug)]
pub struct CustomProblem {
    pub a: [[f64; 2]; 2],
    pub f: f64,
    pub bc: BcLayout,
}

#[derive(Clone, Debug)]
pub enum ProblemChoice {
    Builtin(ProblemKind),
    Custom(CustomProblem),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub problem: ProblemChoice,
    pub n: usize,
    pub estimators: Vec<EstimatorKind>,
    pub goal: Option<GoalSection>,
    pub adapt: Option<AdaptSection>,
    pub study: StudySection,
    pub out_dir: PathBuf,
    pub wall_timing: bool,
    pub quad_estimate_degree: usize,
    pub quad_reference_degree: usize,
}

fn err(line: usize, msg: impl Into<String>) -> VerifemError {
    VerifemError::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, VerifemError> {
    v.trim()
        .parse()
        .map_err(|_| err(line, format!("{key} expects a number, got '{v}'")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize, VerifemError> {
    v.trim()
        .parse()
        .map_err(|_| err(line, format!("{key} expects an integer, got '{v}'")))
}

pub fn parse_config(path: &Path) -> Result<RunConfig, VerifemError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        VerifemError::Input(format!("cannot read config '{}': {e}", path.display()))
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, VerifemError> {
    let mut problem_name: Option<(usize, String)> = None;
    let mut n: Option<usize> = None;
    let mut estimators: Vec<EstimatorKind> = Vec::new();
    let mut out_dir = PathBuf::from("out");
    let mut wall_timing = false;
    let mut quad_estimate_degree = 5usize;
    let mut quad_reference_degree = 10usize;

    let mut custom = CustomProblem {
        a: [[1.0, 0.0], [0.0, 1.0]],
        f: 1.0,
        bc: BcLayout::AllDirichlet,
    };
    let mut custom_seen = false;

    let mut goal_qoi = QoiKind::SubdomainAverage;
    let mut goal_box = [0.25, 0.25, 0.5, 0.5];
    let mut goal_dir = [1.0, 0.0];
    let mut goal_methods: Vec<GoalMethod> = Vec::new();
    let mut goal_seen = false;

    let mut adapt_cfg = AdaptConfig::default();
    let mut adapt_estimator = EstimatorKind::CreAnalytic;
    let mut adapt_goal_mode = false;
    let mut adapt_seen = false;

    let mut study = StudySection {
        adaptive: false,
        levels: 4,
    };

    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(lineno, "unterminated section header"))?;
            match name {
                "goal" | "adapt" | "custom" | "study" => section = name.to_string(),
                other => return Err(err(lineno, format!("unknown section '[{other}]'"))),
            }
            if section == "goal" {
                goal_seen = true;
            }
            if section == "adapt" {
                adapt_seen = true;
            }
            if section == "custom" {
                custom_seen = true;
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(lineno, format!("expected 'key = value', got '{line}'")));
        };
        let key = key.trim();
        let value = value.trim();
        match (section.as_str(), key) {
            ("", "problem") => problem_name = Some((lineno, value.to_string())),
            ("", "n") => {
                let v = parse_usize(lineno, "n", value)?;
                if v < 1 {
                    return Err(err(lineno, "n must be >= 1"));
                }
                n = Some(v);
            }
            ("", "estimators") => {
                for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let kind = EstimatorKind::parse(part)
                        .ok_or_else(|| err(lineno, format!("unknown estimator '{part}'")))?;
                    estimators.push(kind);
                }
            }
            ("", "out") => out_dir = PathBuf::from(value),
            ("", "timing") => {
                wall_timing = match value {
                    "none" => false,
                    "wall" => true,
                    other => return Err(err(lineno, format!("timing must be none|wall, got '{other}'"))),
                }
            }
            ("", "quad_estimate_degree") => {
                let v = parse_usize(lineno, "quad_estimate_degree", value)?;
                if !(2..=20).contains(&v) {
                    return Err(err(lineno, "quad_estimate_degree out of [2, 20]"));
                }
                quad_estimate_degree = v;
            }
            ("", "quad_reference_degree") => {
                let v = parse_usize(lineno, "quad_reference_degree", value)?;
                if !(5..=20).contains(&v) {
                    return Err(err(lineno, "quad_reference_degree out of [5, 20]"));
                }
                quad_reference_degree = v;
            }
            ("custom", "a11") => custom.a[0][0] = parse_f64(lineno, "a11", value)?,
            ("custom", "a12") => {
                let v = parse_f64(lineno, "a12", value)?;
                custom.a[0][1] = v;
                custom.a[1][0] = v;
            }
            ("custom", "a22") => custom.a[1][1] = parse_f64(lineno, "a22", value)?,
            ("custom", "f") => custom.f = parse_f64(lineno, "f", value)?,
            ("custom", "bc") => custom.bc = BcLayout::parse(value).map_err(|e| err(lineno, e.to_string()))?,
            ("goal", "qoi") => {
                goal_qoi = match value {
                    "subdomain_average" => QoiKind::SubdomainAverage,
                    "flux_average" => QoiKind::FluxAverage,
                    other => return Err(err(lineno, format!("unknown qoi '{other}'"))),
                }
            }
            ("goal", "box") => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(err(lineno, "box expects 'x0, y0, x1, y1'"));
                }
                for (i, p) in parts.iter().enumerate() {
                    goal_box[i] = parse_f64(lineno, "box", p)?;
                }
                if goal_box[0] >= goal_box[2] || goal_box[1] >= goal_box[3] {
                    return Err(err(lineno, "box must satisfy x0 < x1 and y0 < y1"));
                }
            }
            ("goal", "direction") => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(err(lineno, "direction expects 'dx, dy'"));
                }
                goal_dir = [
                    parse_f64(lineno, "direction", parts[0])?,
                    parse_f64(lineno, "direction", parts[1])?,
                ];
            }
            ("goal", "methods") => {
                for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let m = GoalMethod::parse(part)
                        .ok_or_else(|| err(lineno, format!("unknown goal method '{part}'")))?;
                    goal_methods.push(m);
                }
            }
            ("adapt", "lambda") => {
                let v = parse_f64(lineno, "lambda", value)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(err(lineno, "lambda out of [0,1]"));
                }
                adapt_cfg.lambda = v;
            }
            ("adapt", "epsilon0") => {
                let v = parse_f64(lineno, "epsilon0", value)?;
                if v <= 0.0 {
                    return Err(err(lineno, "epsilon0 must be positive"));
                }
                adapt_cfg.epsilon0 = v;
            }
            ("adapt", "max_iterations") => {
                adapt_cfg.max_iterations = parse_usize(lineno, "max_iterations", value)?;
                if adapt_cfg.max_iterations == 0 {
                    return Err(err(lineno, "max_iterations must be >= 1"));
                }
            }
            ("adapt", "estimator") => {
                adapt_estimator = EstimatorKind::parse(value)
                    .ok_or_else(|| err(lineno, format!("unknown estimator '{value}'")))?;
            }
            ("adapt", "mode") => {
                adapt_goal_mode = match value {
                    "energy" => false,
                    "goal" => true,
                    other => return Err(err(lineno, format!("mode must be energy|goal, got '{other}'"))),
                }
            }
            ("study", "mode") => {
                study.adaptive = match value {
                    "uniform" => false,
                    "adaptive" => true,
                    other => return Err(err(lineno, format!("mode must be uniform|adaptive, got '{other}'"))),
                }
            }
            ("study", "levels") => {
                study.levels = parse_usize(lineno, "levels", value)?;
                if study.levels < 1 {
                    return Err(err(lineno, "levels must be >= 1"));
                }
            }
            (sec, key) => {
                let place = if sec.is_empty() {
                    "top level".to_string()
                } else {
                    format!("section [{sec}]")
                };
                return Err(err(lineno, format!("unknown key '{key}' at {place}")));
            }
        }
    }

    let (problem_line, problem_name) =
        problem_name.ok_or_else(|| err(0, "missing required key 'problem'"))?;
    let problem = match problem_name.as_str() {
        "custom" => ProblemChoice::Custom(custom),
        name => {
            if custom_seen {
                return Err(err(
                    problem_line,
                    "[custom] section given but problem is not 'custom'",
                ));
            }
            ProblemChoice::Builtin(
                ProblemKind::parse(name).map_err(|e| err(problem_line, e.to_string()))?,
            )
        }
    };
    let n = n.ok_or_else(|| err(0, "missing required key 'n'"))?;

    let goal = if goal_seen {
        if goal_methods.is_empty() {
            goal_methods = vec![GoalMethod::Cre, GoalMethod::CreEnriched];
        }
        Some(GoalSection {
            qoi: goal_qoi,
            domain_box: goal_box,
            direction: goal_dir,
            methods: goal_methods,
        })
    } else {
        None
    };
    let adapt = if adapt_seen {
        Some(AdaptSection {
            config: adapt_cfg,
            estimator: adapt_estimator,
            goal_mode: adapt_goal_mode,
        })
    } else {
        None
    };

    Ok(RunConfig {
        problem,
        n,
        estimators,
        goal,
        adapt,
        study,
        out_dir,
        wall_timing,
        quad_estimate_degree,
        quad_reference_degree,
    })
}
