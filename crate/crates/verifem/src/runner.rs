//! Pipeline orchestration for the CLI: solve, estimate, adapt and study
//! commands with reproducible file outputs (report.json, study.csv,
//! mesh_NN.vtk, tractions.csv).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::adapt::{
    adapt_solve, render_study_csv, study_rates, uniform_study, AdaptConfig, IndicatorData,
    StudyRecord,
};
use crate::config::{
    EstimatorKind, GoalMethod, ProblemChoice, QoiKind, RunConfig,
};
use crate::equilibration::{
    cre_analytic_pipeline, cre_fe_pipeline, element_equilibrium_residuals,
    equilibrated_element_residual, EquilibratedFlux, TractionSet,
};
use crate::error::VerifemError;
use crate::fem::{
    discrete_residual, exact_energy_error_with_degree, flux, solve, FeFunction, FeSpace,
};
use crate::goal::{
    chi_bounds, cre_goal_bound, cs_goal_bound, dwr_estimate, elements_in_box,
    enriched_cre_goal_bound, equilibrate_adjoint, local_goal_indicators, parallelogram_bound,
    qoi_eval, solve_adjoint, solve_fine_adjoint, QuantityOfInterest,
};
use crate::mesh::Mesh;
use crate::problems::{Coefficient, DiffusionProblem, NeumannData, Source};
use crate::recovery::{
    aubin_nitsche_constant, recovery_estimate_with_degree, recovery_guaranteed_bound,
    richardson_data, richardson_estimate, spr_recover, zz_average, RecoveredFlux,
};
use crate::report::{fmt_f64, BoundKind, EstimateReport, GoalBounds, Json};
use crate::residual::{explicit_indicators, flux_free_estimate, flux_free_lower_bound, flux_free_solve_all, residual_data};
use crate::vtk::{render_vtk, VtkField};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Command {
    Solve,
    Estimate,
    Adapt,
    Study,
}

impl Command {
    pub fn parse(name: &str) -> Result<Self, VerifemError> {
        match name {
            "solve" => Ok(Command::Solve),
            "estimate" => Ok(Command::Estimate),
            "adapt" => Ok(Command::Adapt),
            "study" => Ok(Command::Study),
            other => Err(VerifemError::Input(format!("unknown command '{other}'"))),
        }
    }
}

/// Instantiate the configured problem and its root mesh.
pub fn instantiate(config: &RunConfig) -> Result<(DiffusionProblem, Mesh), VerifemError> {
    match &config.problem {
        ProblemChoice::Builtin(kind) => Ok((kind.problem(), kind.mesh(config.n)?)),
        ProblemChoice::Custom(c) => {
            let mesh = crate::mesh::unit_square_mesh(config.n, c.bc)?;
            let problem = DiffusionProblem {
                a: Coefficient::Uniform(c.a),
                f: if c.f == 0.0 {
                    Source::Zero
                } else {
                    Source::Constant(c.f)
                },
                g: NeumannData::Zero,
                exact: None,
            };
            Ok((problem, mesh))
        }
    }
}

fn problem_name(config: &RunConfig) -> &'static str {
    match &config.problem {
        ProblemChoice::Builtin(k) => match k {
            crate::problems::ProblemKind::SinSin => "sin_sin",
            crate::problems::ProblemKind::Fig1Square => "fig1_square",
            crate::problems::ProblemKind::LShapeSingular => "lshape_singular",
        },
        ProblemChoice::Custom(_) => "custom",
    }
}

/// Artifacts of one estimator run, beyond the report itself.
#[derive(Default)]
pub struct EstimatorArtifacts {
    pub recovered: Option<RecoveredFlux>,
    pub equilibrated: Option<EquilibratedFlux>,
    pub tractions: Option<TractionSet>,
}

/// Run one estimator on a solved state.
pub fn run_estimator(
    kind: EstimatorKind,
    problem: &DiffusionProblem,
    u: &FeFunction,
    estimate_degree: usize,
) -> Result<(Vec<EstimateReport>, EstimatorArtifacts), VerifemError> {
    let mesh = &u.space.mesh;
    let mut artifacts = EstimatorArtifacts::default();
    let reports = match kind {
        EstimatorKind::Zz => {
            let q = flux(problem, u);
            let rec = zz_average(mesh, &q);
            let rep = recovery_estimate_with_degree(problem, mesh, &rec, &q, "zz", estimate_degree);
            artifacts.recovered = Some(rec);
            vec![rep]
        }
        EstimatorKind::Spr => {
            let q = flux(problem, u);
            let rec = spr_recover(mesh, &q);
            let rep =
                recovery_estimate_with_degree(problem, mesh, &rec, &q, "spr", estimate_degree);
            artifacts.recovered = Some(rec);
            vec![rep]
        }
        EstimatorKind::Explicit => {
            let data = residual_data(problem, u);
            vec![explicit_indicators(mesh, &data)]
        }
        EstimatorKind::FluxFree => {
            let patches = flux_free_solve_all(problem, u, 2)?;
            let upper = flux_free_estimate(problem, mesh, &patches);
            let lower = flux_free_lower_bound(problem, u, &patches)?;
            vec![upper, lower]
        }
        EstimatorKind::CreAnalytic => {
            let (mut report, q_hat, tractions) = cre_analytic_pipeline(problem, u)?;
            let (projected, _) = problem.with_projected_source(mesh);
            let residuals = element_equilibrium_residuals(&projected, mesh, &tractions);
            let max_res = residuals.iter().cloned().fold(0.0, f64::max);
            report = report.with_detail("max_equilibrium_residual", max_res);
            artifacts.equilibrated = Some(q_hat);
            artifacts.tractions = Some(tractions);
            vec![report]
        }
        EstimatorKind::CreFe => {
            let (report, q_hat, tractions) = cre_fe_pipeline(problem, u, 3)?;
            let ere = equilibrated_element_residual(problem, u, &tractions, 3)?;
            artifacts.equilibrated = Some(q_hat);
            artifacts.tractions = Some(tractions);
            vec![report, ere]
        }
        EstimatorKind::Richardson => {
            let data = richardson_data(problem, u)?;
            let est = richardson_estimate(&data.problem_fine, &data.u_prolonged, &data.u_star, 1.0)?;
            let c = aubin_nitsche_constant(
                &data.problem_fine,
                &data.u_prolonged,
                &data.u_star,
                1.0,
                mesh.quality().h,
            )?;
            let rep = EstimateReport::new("richardson", est, BoundKind::Indicator)
                .with_detail("aubin_nitsche_constant", c)
                .with_detail("alpha", 1.0);
            vec![rep]
        }
    };
    Ok((reports, artifacts))
}

/// Run all configured estimators, including the Richardson-assisted
/// guaranteed recovery bounds when both ingredients were requested.
pub fn run_all_estimators(
    config: &RunConfig,
    problem: &DiffusionProblem,
    u: &FeFunction,
) -> Result<(Vec<EstimateReport>, Vec<(String, EstimatorArtifacts)>), VerifemError> {
    let mesh = &u.space.mesh;
    let mut reports = Vec::new();
    let mut artifacts = Vec::new();
    let mut recovered: Vec<(&'static str, RecoveredFlux)> = Vec::new();
    for &kind in &config.estimators {
        let (mut reps, arts) = run_estimator(kind, problem, u, config.quad_estimate_degree)?;
        if let Some(rec) = &arts.recovered {
            recovered.push((kind.name(), rec.clone()));
        }
        reports.append(&mut reps);
        artifacts.push((kind.name().to_string(), arts));
    }
    if config.estimators.contains(&EstimatorKind::Richardson) && !recovered.is_empty() {
        let data = richardson_data(problem, u)?;
        let c = aubin_nitsche_constant(
            &data.problem_fine,
            &data.u_prolonged,
            &data.u_star,
            1.0,
            mesh.quality().h,
        )?;
        let q = flux(problem, u);
        for (name, rec) in &recovered {
            reports.push(recovery_guaranteed_bound(problem, mesh, rec, &q, c, name));
        }
    }
    // attach effectivities when a reference error is available
    if problem.exact.is_some() {
        let reference = exact_energy_error_with_degree(problem, u, config.quad_reference_degree)?;
        if reference > 0.0 {
            for r in reports.iter_mut() {
                r.effectivity = Some(r.eta / reference);
                r.details.insert("ref_error".into(), reference);
            }
        }
    }
    Ok((reports, artifacts))
}

/// Goal pipeline outputs.
pub struct GoalOutputs {
    pub q_uh: f64,
    pub bounds: Vec<GoalBounds>,
}

pub fn run_goal(
    config: &RunConfig,
    problem: &DiffusionProblem,
    u: &FeFunction,
) -> Result<GoalOutputs, VerifemError> {
    let goal = config
        .goal
        .as_ref()
        .ok_or_else(|| VerifemError::Input("no [goal] section in config".into()))?;
    let mesh = &u.space.mesh;
    let [x0, y0, x1, y1] = goal.domain_box;
    let omega = elements_in_box(mesh, x0, y0, x1, y1);
    if omega.is_empty() {
        return Err(VerifemError::Input(
            "goal subdomain contains no element; is the box resolved by the mesh?".into(),
        ));
    }
    let qoi = match goal.qoi {
        QoiKind::SubdomainAverage => QuantityOfInterest::subdomain_average(mesh, &omega)?,
        QoiKind::FluxAverage => QuantityOfInterest::flux_average(mesh, &omega, goal.direction)?,
    };
    let q_uh = qoi_eval(problem, &qoi, u);

    let (primal_report, q_hat, _) = cre_analytic_pipeline(problem, u)?;
    let adj = solve_adjoint(problem, &qoi, &u.space)?;
    let adj_eq = equilibrate_adjoint(problem, &qoi, &adj, true, 3)?;
    let (tight, wide, data) = cre_goal_bound(problem, u, &q_hat, &adj_eq, &qoi)?;

    let mut bounds = Vec::new();
    let mut fine = None;
    for method in &goal.methods {
        match method {
            GoalMethod::Cre => {
                bounds.push(tight.clone());
                bounds.push(wide.clone());
            }
            GoalMethod::CauchySchwarz => {
                let adjoint_report = EstimateReport::new(
                    "adjoint_cre",
                    2.0f64.sqrt() * data.et_cre,
                    BoundKind::GuaranteedUpper,
                );
                bounds.push(cs_goal_bound(q_uh, &primal_report, &adjoint_report)?);
            }
            GoalMethod::Parallelogram => {
                let s_opt = if data.e_cre > 0.0 && data.et_cre > 0.0 {
                    (data.et_cre / data.e_cre).sqrt()
                } else {
                    1.0
                };
                let (cp, cm) = chi_bounds(problem, u, &q_hat, &adj_eq, s_opt)?;
                bounds.push(parallelogram_bound(q_uh, cp, cm, data.guaranteed));
            }
            GoalMethod::CreEnriched => {
                if fine.is_none() {
                    fine = Some(solve_fine_adjoint(problem, mesh, &qoi, true, 3)?);
                }
                bounds.push(enriched_cre_goal_bound(
                    problem,
                    u,
                    &q_hat,
                    &qoi,
                    fine.as_ref().expect("just solved"),
                )?);
            }
            GoalMethod::Dwr => {
                if fine.is_none() {
                    fine = Some(solve_fine_adjoint(problem, mesh, &qoi, true, 3)?);
                }
                let f = fine.as_ref().expect("just solved");
                let fine_space = f.adjoint.u_adj.space.clone();
                let u_prol =
                    FeFunction::from_coeffs(fine_space, f.refinement.prolong(&u.coeffs));
                let r = dwr_estimate(&f.problem_fine, &u_prol, &f.adjoint.u_adj)?;
                bounds.push(GoalBounds {
                    method: "dwr".into(),
                    lower: q_uh + r,
                    upper: q_uh + r,
                    corrected: q_uh + r,
                    correction: r,
                    guaranteed: false,
                });
            }
        }
    }
    Ok(GoalOutputs { q_uh, bounds })
}

/// Estimator callback for the adaptive loop.
pub fn indicator_source(
    kind: EstimatorKind,
    estimate_degree: usize,
) -> impl FnMut(&DiffusionProblem, &FeFunction) -> Result<IndicatorData, VerifemError> {
    move |problem, u| {
        let (reports, _) = run_estimator(kind, problem, u, estimate_degree)?;
        let report = reports
            .iter()
            .find(|r| r.bound_kind != BoundKind::GuaranteedLower)
            .ok_or_else(|| VerifemError::Numerical("estimator produced no usable report".into()))?;
        let indicators = report
            .indicators()
            .ok_or_else(|| VerifemError::Numerical("estimator has no per-element data".into()))?;
        Ok(IndicatorData {
            eta: report.eta,
            indicators,
        })
    }
}

/// Goal-mode indicator callback: marking on the signed local contributions,
/// stopping on the goal-bound half width.
pub fn goal_indicator_source(
    config: &RunConfig,
) -> impl FnMut(&DiffusionProblem, &FeFunction) -> Result<IndicatorData, VerifemError> {
    let goal = config.goal.clone();
    move |problem, u| {
        let goal = goal
            .as_ref()
            .ok_or_else(|| VerifemError::Input("goal mode needs a [goal] section".into()))?;
        let mesh = &u.space.mesh;
        let [x0, y0, x1, y1] = goal.domain_box;
        let omega = elements_in_box(mesh, x0, y0, x1, y1);
        let qoi = match goal.qoi {
            QoiKind::SubdomainAverage => QuantityOfInterest::subdomain_average(mesh, &omega)?,
            QoiKind::FluxAverage => QuantityOfInterest::flux_average(mesh, &omega, goal.direction)?,
        };
        let (_, q_hat, _) = cre_analytic_pipeline(problem, u)?;
        let adj = solve_adjoint(problem, &qoi, &u.space)?;
        let adj_eq = equilibrate_adjoint(problem, &qoi, &adj, true, 3)?;
        let (tight, _, data) = cre_goal_bound(problem, u, &q_hat, &adj_eq, &qoi)?;
        let (indicators, _) = local_goal_indicators(&data);
        Ok(IndicatorData {
            eta: tight.half_width(),
            indicators: indicators.iter().map(|v| v.abs()).collect(),
        })
    }
}

/// Contract verification behind exit code 2.
pub fn verify_contracts(
    reports: &[EstimateReport],
    goal: Option<&GoalOutputs>,
) -> Result<(), VerifemError> {
    for r in reports {
        if r.eta < 0.0 || !r.eta.is_finite() {
            return Err(VerifemError::Contract(format!(
                "estimate '{}' is not a finite nonnegative number: {}",
                r.name, r.eta
            )));
        }
        if let Some(elems) = &r.eta_elements {
            let sum: f64 = elems.iter().sum();
            let defect = (sum - r.eta * r.eta).abs();
            if defect > 1e-12 * (r.eta * r.eta).max(1e-300) {
                return Err(VerifemError::Contract(format!(
                    "estimate '{}': element contributions sum to {} but eta^2 = {}",
                    r.name,
                    sum,
                    r.eta * r.eta
                )));
            }
        }
        if let Some(max_res) = r.details.get("max_equilibrium_residual") {
            if *max_res > 1e-10 {
                return Err(VerifemError::Contract(format!(
                    "estimate '{}': element equilibrium residual {} exceeds tolerance",
                    r.name, max_res
                )));
            }
        }
    }
    for lower in reports.iter().filter(|r| r.bound_kind == BoundKind::GuaranteedLower) {
        for upper in reports.iter().filter(|r| r.bound_kind == BoundKind::GuaranteedUpper) {
            if lower.eta > upper.eta * (1.0 + 1e-8) + 1e-14 {
                return Err(VerifemError::Contract(format!(
                    "guaranteed lower bound '{}' = {} exceeds guaranteed upper bound '{}' = {}",
                    lower.name, lower.eta, upper.name, upper.eta
                )));
            }
        }
    }
    if let Some(g) = goal {
        for b in &g.bounds {
            if !(b.lower <= b.corrected + 1e-14 && b.corrected <= b.upper + 1e-14) {
                return Err(VerifemError::Contract(format!(
                    "goal bounds '{}' violate lower <= corrected <= upper",
                    b.method
                )));
            }
        }
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), VerifemError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

fn base_json(config: &RunConfig, dofs: usize) -> Vec<(String, Json)> {
    vec![
        ("problem".into(), Json::Str(problem_name(config).into())),
        ("n".into(), Json::Int(config.n as i64)),
        ("dofs".into(), Json::Int(dofs as i64)),
    ]
}

fn estimates_json(reports: &[EstimateReport]) -> (String, Json) {
    (
        "estimates".into(),
        Json::Arr(reports.iter().map(|r| r.to_json()).collect()),
    )
}

fn records_json(records: &[StudyRecord]) -> (String, Json) {
    (
        "records".into(),
        Json::Arr(
            records
                .iter()
                .map(|r| {
                    let mut fields = vec![
                        ("iteration".to_string(), Json::Int(r.iteration as i64)),
                        ("N".to_string(), Json::Int(r.n_dofs as i64)),
                        ("h".to_string(), Json::Num(r.h)),
                        ("eta".to_string(), Json::Num(r.eta)),
                    ];
                    if let Some(e) = r.ref_error {
                        fields.push(("ref_error".to_string(), Json::Num(e)));
                    }
                    if let Some(i) = r.i_eff {
                        fields.push(("i_eff".to_string(), Json::Num(i)));
                    }
                    Json::Obj(fields)
                })
                .collect(),
        ),
    )
}

/// Flux/indicator VTK dump shared by the estimate and adapt pipelines.
fn mesh_vtk(
    problem: &DiffusionProblem,
    u: &FeFunction,
    reports: &[EstimateReport],
    artifacts: &[(String, EstimatorArtifacts)],
) -> String {
    let mesh = &u.space.mesh;
    let q = flux(problem, u);
    let mut named_cells: Vec<(String, Vec<f64>)> = Vec::new();
    for r in reports {
        if let Some(ind) = r.indicators() {
            named_cells.push((format!("eta_{}", r.name), ind));
        }
    }
    let mut vectors: Vec<(String, Vec<[f64; 2]>)> = vec![("q_h".into(), q.values.clone())];
    for (name, art) in artifacts {
        if let Some(eq) = &art.equilibrated {
            let mean: Vec<[f64; 2]> = (0..mesh.n_elements())
                .map(|k| eq.eval(mesh, &problem.a, k, [1.0 / 3.0; 3]))
                .collect();
            vectors.push((format!("q_hat_{name}"), mean));
            named_cells.push((format!("div_defect_{name}"), eq.div_defect.clone()));
        }
    }
    let mut fields: Vec<VtkField<'_>> = vec![VtkField::PointScalars("u_h", &u.coeffs)];
    for (name, data) in &named_cells {
        fields.push(VtkField::CellScalars(name, data));
    }
    for (name, data) in &vectors {
        fields.push(VtkField::CellVectors(name, data));
    }
    render_vtk(mesh, "verifem", &fields)
}

fn tractions_csv(mesh: &Mesh, tractions: &TractionSet) -> String {
    let mut out = String::from("edge,c1,c2\n");
    for (e, c) in tractions.coeffs.iter().enumerate() {
        out.push_str(&format!("{e},{},{}\n", fmt_f64(c[0]), fmt_f64(c[1])));
    }
    debug_assert_eq!(tractions.coeffs.len(), mesh.edges.len());
    out
}

/// Execute a command; returns the files it wrote.
pub fn run(command: Command, config: &RunConfig, out_override: Option<PathBuf>) -> Result<Vec<PathBuf>, VerifemError> {
    if let Ok(v) = std::env::var("VERIFEM_THREADS") {
        let cap: usize = v.parse().map_err(|_| {
            VerifemError::Input(format!("VERIFEM_THREADS must be a positive integer, got '{v}'"))
        })?;
        if cap == 0 {
            return Err(VerifemError::Input("VERIFEM_THREADS must be >= 1".into()));
        }
        // pipelines are sequential and deterministic; any cap >= 1 is honored
    }
    let out_dir = out_override.unwrap_or_else(|| config.out_dir.clone());
    let (problem, mesh) = instantiate(config)?;
    let mut written = Vec::new();

    match command {
        Command::Solve => {
            let mesh = Arc::new(mesh);
            let space = Arc::new(FeSpace::new(mesh.clone()));
            let (u, solve_report) = solve(&problem, &space)?;
            let residual = discrete_residual(&problem, &u)?;
            let mut fields = base_json(config, space.n_free());
            fields.push((
                "solver".into(),
                Json::Obj(vec![
                    ("iterations".into(), Json::Int(solve_report.iterations as i64)),
                    ("rel_residual".into(), Json::Num(solve_report.rel_residual)),
                    ("assembled_residual".into(), Json::Num(residual)),
                ]),
            ));
            if problem.exact.is_some() {
                let e = exact_energy_error_with_degree(&problem, &u, config.quad_reference_degree)?;
                fields.push(("ref_error".into(), Json::Num(e)));
            }
            write_file(&out_dir, "report.json", &Json::Obj(fields).render())?;
            written.push(out_dir.join("report.json"));
            let vtk = mesh_vtk(&problem, &u, &[], &[]);
            write_file(&out_dir, "mesh_00.vtk", &vtk)?;
            written.push(out_dir.join("mesh_00.vtk"));
        }
        Command::Estimate => {
            if config.estimators.is_empty() && config.goal.is_none() {
                return Err(VerifemError::Input(
                    "estimate command needs estimators or a [goal] section".into(),
                ));
            }
            let mesh = Arc::new(mesh);
            let space = Arc::new(FeSpace::new(mesh.clone()));
            let (u, _) = solve(&problem, &space)?;
            let (reports, artifacts) = run_all_estimators(config, &problem, &u)?;
            let goal = if config.goal.is_some() {
                Some(run_goal(config, &problem, &u)?)
            } else {
                None
            };
            verify_contracts(&reports, goal.as_ref())?;

            let mut fields = base_json(config, space.n_free());
            fields.push(estimates_json(&reports));
            if let Some(g) = &goal {
                fields.push((
                    "goal".into(),
                    Json::Obj(vec![
                        ("q_uh".into(), Json::Num(g.q_uh)),
                        (
                            "bounds".into(),
                            Json::Arr(g.bounds.iter().map(|b| b.to_json()).collect()),
                        ),
                    ]),
                ));
            }
            write_file(&out_dir, "report.json", &Json::Obj(fields).render())?;
            written.push(out_dir.join("report.json"));
            let vtk = mesh_vtk(&problem, &u, &reports, &artifacts);
            write_file(&out_dir, "mesh_00.vtk", &vtk)?;
            written.push(out_dir.join("mesh_00.vtk"));
            for (name, art) in &artifacts {
                if let Some(tr) = &art.tractions {
                    let file = format!("tractions_{name}.csv");
                    write_file(&out_dir, &file, &tractions_csv(&mesh, tr))?;
                    written.push(out_dir.join(file));
                }
            }
        }
        Command::Adapt => {
            let section = config
                .adapt
                .clone()
                .ok_or_else(|| VerifemError::Input("adapt command needs an [adapt] section".into()))?;
            let outcome = if section.goal_mode {
                let mut source = goal_indicator_source(config);
                adapt_solve(&problem, mesh, &section.config, &mut source)?
            } else {
                let mut source = indicator_source(section.estimator, config.quad_estimate_degree);
                adapt_solve(&problem, mesh, &section.config, &mut source)?
            };
            let csv = render_study_csv(&outcome.records, config.wall_timing);
            write_file(&out_dir, "study.csv", &csv)?;
            written.push(out_dir.join("study.csv"));
            let final_mesh = &outcome.u.space.mesh;
            let (reports, artifacts) = run_all_estimators(config, &outcome.problem, &outcome.u)?;
            verify_contracts(&reports, None)?;
            let mut fields = base_json(config, outcome.u.space.n_free());
            fields.push((
                "final_elements".into(),
                Json::Int(final_mesh.n_elements() as i64),
            ));
            fields.push(estimates_json(&reports));
            fields.push(records_json(&outcome.records));
            write_file(&out_dir, "report.json", &Json::Obj(fields).render())?;
            written.push(out_dir.join("report.json"));
            let name = format!("mesh_{:02}.vtk", outcome.records.len() - 1);
            let vtk = mesh_vtk(&outcome.problem, &outcome.u, &reports, &artifacts);
            write_file(&out_dir, &name, &vtk)?;
            written.push(out_dir.join(name));
        }
        Command::Study => {
            if config.estimators.is_empty() {
                return Err(VerifemError::Input(
                    "study command needs at least one estimator".into(),
                ));
            }
            let kind = config.estimators[0];
            let records = if config.study.adaptive {
                let section = config.adapt.clone().unwrap_or(crate::config::AdaptSection {
                    config: AdaptConfig {
                        max_iterations: config.study.levels,
                        ..AdaptConfig::default()
                    },
                    estimator: kind,
                    goal_mode: false,
                });
                let mut adapt_cfg = section.config.clone();
                adapt_cfg.max_iterations = adapt_cfg.max_iterations.max(config.study.levels);
                let mut source = indicator_source(section.estimator, config.quad_estimate_degree);
                adapt_solve(&problem, mesh, &adapt_cfg, &mut source)?.records
            } else {
                let mut source = indicator_source(kind, config.quad_estimate_degree);
                uniform_study(&problem, mesh, config.study.levels, &mut source)?
            };
            let csv = render_study_csv(&records, config.wall_timing);
            write_file(&out_dir, "study.csv", &csv)?;
            written.push(out_dir.join("study.csv"));
            let mut fields = base_json(config, records.last().map(|r| r.n_dofs).unwrap_or(0));
            fields.push(records_json(&records));
            if let Ok(rates) = study_rates(&records) {
                fields.push((
                    "rates".into(),
                    Json::Obj(vec![
                        ("slope_vs_dofs".into(), Json::Num(rates.slope_vs_dofs)),
                        ("slope_vs_h".into(), Json::Num(rates.slope_vs_h)),
                    ]),
                ));
            }
            write_file(&out_dir, "report.json", &Json::Obj(fields).render())?;
            written.push(out_dir.join("report.json"));
        }
    }
    Ok(written)
}
