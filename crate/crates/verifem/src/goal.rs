//! Goal-oriented error estimation: linear quantities of interest through
//! extraction fields, the adjoint solve, the dual-weighted residual
//! indicator, and guaranteed bounds by Cauchy-Schwarz, parallelogram and
//! equilibrated-flux corrections.

use std::sync::Arc;

use crate::equilibration::{
    build_tractions, cre_contributions, equilibrate_analytic, equilibrate_fe, EquilibratedFlux,
};
use crate::error::VerifemError;
use crate::fem::{dot2, flux, mat_vec, residual_eval, ElementFlux, FeFunction, FeSpace};
use crate::mesh::{BoundaryLabel, ElemId, Mesh, Refinement};
use crate::problems::{DiffusionProblem, NeumannData, ScalarFn, Source};
use crate::quad::edge_rule_3pt;
use crate::report::GoalBounds;
use crate::sparse::pcg_refined;

/// Linear functional defined by extraction fields on a fixed mesh:
/// `Q(v) = int(f v + q . grad v) + int_GN(g v) + int(A grad(u_pre) . grad v)`.
#[derive(Clone)]
pub struct QuantityOfInterest {
    /// Element-wise constant body extraction.
    pub f_body: Option<Vec<f64>>,
    /// Element-wise constant pre-flux extraction.
    pub q_preflux: Option<Vec<[f64; 2]>>,
    /// Traction extraction on the Neumann boundary.
    pub g_traction: Option<ScalarFn>,
    /// Pre-primal P1 field (nodal values), vanishing at Neumann vertices.
    pub u_pre: Option<Vec<f64>>,
}

impl QuantityOfInterest {
    pub fn is_empty(&self) -> bool {
        self.f_body.is_none()
            && self.q_preflux.is_none()
            && self.g_traction.is_none()
            && self.u_pre.is_none()
    }

    /// Average of the solution over a set of elements.
    pub fn subdomain_average(mesh: &Mesh, elements: &[ElemId]) -> Result<Self, VerifemError> {
        let omega: f64 = elements.iter().map(|&k| mesh.elem_area(k)).sum();
        if omega <= 0.0 {
            return Err(VerifemError::Input("empty averaging subdomain".into()));
        }
        let mut f = vec![0.0; mesh.n_elements()];
        for &k in elements {
            f[k] = 1.0 / omega;
        }
        Ok(QuantityOfInterest {
            f_body: Some(f),
            q_preflux: None,
            g_traction: None,
            u_pre: None,
        })
    }

    /// Average of the directional gradient component over a set of elements.
    pub fn flux_average(
        mesh: &Mesh,
        elements: &[ElemId],
        direction: [f64; 2],
    ) -> Result<Self, VerifemError> {
        let omega: f64 = elements.iter().map(|&k| mesh.elem_area(k)).sum();
        if omega <= 0.0 {
            return Err(VerifemError::Input("empty averaging subdomain".into()));
        }
        let mut q = vec![[0.0; 2]; mesh.n_elements()];
        for &k in elements {
            q[k] = [direction[0] / omega, direction[1] / omega];
        }
        Ok(QuantityOfInterest {
            f_body: None,
            q_preflux: Some(q),
            g_traction: None,
            u_pre: None,
        })
    }

    /// Transport the extraction fields to a refinement of the defining mesh.
    pub fn for_refinement(&self, refinement: &Refinement) -> QuantityOfInterest {
        let map = |k: ElemId| refinement.mesh.parent[k];
        QuantityOfInterest {
            f_body: self
                .f_body
                .as_ref()
                .map(|f| (0..refinement.mesh.n_elements()).map(|k| f[map(k)]).collect()),
            q_preflux: self
                .q_preflux
                .as_ref()
                .map(|q| (0..refinement.mesh.n_elements()).map(|k| q[map(k)]).collect()),
            g_traction: self.g_traction.clone(),
            u_pre: self.u_pre.as_ref().map(|u| refinement.prolong(u)),
        }
    }

    /// Per-local-vertex load `Q(phi_j)` restricted to one element (volume
    /// terms only).
    fn element_load(&self, problem: &DiffusionProblem, mesh: &Mesh, k: ElemId) -> [f64; 3] {
        let area = mesh.elem_area(k);
        let hats = mesh.hat_gradients(k);
        let mut out = [0.0; 3];
        if let Some(f) = &self.f_body {
            for j in 0..3 {
                out[j] += f[k] * area / 3.0;
            }
        }
        if let Some(q) = &self.q_preflux {
            for j in 0..3 {
                out[j] += area * dot2(q[k], hats[j]);
            }
        }
        if let Some(u_pre) = &self.u_pre {
            let tri = mesh.triangles[k];
            let mut g = [0.0; 2];
            for (j, &v) in tri.iter().enumerate() {
                g[0] += u_pre[v] * hats[j][0];
                g[1] += u_pre[v] * hats[j][1];
            }
            let aq = mat_vec(problem.a.at(k), g);
            for j in 0..3 {
                out[j] += area * dot2(aq, hats[j]);
            }
        }
        out
    }

    /// Element-wise constant shift `q_preflux + A grad(u_pre)` entering the
    /// adjoint flux decomposition.
    pub fn shift_field(&self, problem: &DiffusionProblem, mesh: &Mesh) -> Vec<[f64; 2]> {
        (0..mesh.n_elements())
            .map(|k| {
                let mut s = [0.0; 2];
                if let Some(q) = &self.q_preflux {
                    s = q[k];
                }
                if let Some(u_pre) = &self.u_pre {
                    let tri = mesh.triangles[k];
                    let hats = mesh.hat_gradients(k);
                    let mut g = [0.0; 2];
                    for (j, &v) in tri.iter().enumerate() {
                        g[0] += u_pre[v] * hats[j][0];
                        g[1] += u_pre[v] * hats[j][1];
                    }
                    let aq = mat_vec(problem.a.at(k), g);
                    s = [s[0] + aq[0], s[1] + aq[1]];
                }
                s
            })
            .collect()
    }
}

/// Elements whose closure lies in the axis-aligned box `[x0,x1] x [y0,y1]`.
pub fn elements_in_box(mesh: &Mesh, x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<ElemId> {
    let eps = 1e-10;
    (0..mesh.n_elements())
        .filter(|&k| {
            mesh.elem_vertices(k).iter().all(|v| {
                v[0] >= x0 - eps && v[0] <= x1 + eps && v[1] >= y0 - eps && v[1] <= y1 + eps
            })
        })
        .collect()
}

/// Evaluate the functional on a P1 field living on the defining mesh.
pub fn qoi_eval(
    problem: &DiffusionProblem,
    qoi: &QuantityOfInterest,
    v: &FeFunction,
) -> f64 {
    let mesh = &v.space.mesh;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let load = self_load(qoi, problem, mesh, k);
        let tri = mesh.triangles[k];
        for j in 0..3 {
            acc += load[j] * v.coeffs[tri[j]];
        }
    }
    if let Some(g) = &qoi.g_traction {
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.label != BoundaryLabel::Neumann {
                continue;
            }
            let a = mesh.vertices[edge.vertices[0]];
            let b = mesh.vertices[edge.vertices[1]];
            let len = mesh.edge_length(e);
            for &(t, w) in edge_rule_3pt().iter() {
                let x = a[0] + t * (b[0] - a[0]);
                let y = a[1] + t * (b[1] - a[1]);
                let vv = (1.0 - t) * v.coeffs[edge.vertices[0]] + t * v.coeffs[edge.vertices[1]];
                acc += w * len * g(x, y) * vv;
            }
        }
    }
    acc
}

fn self_load(
    qoi: &QuantityOfInterest,
    problem: &DiffusionProblem,
    mesh: &Mesh,
    k: ElemId,
) -> [f64; 3] {
    qoi.element_load(problem, mesh, k)
}

/// Solve the adjoint problem: same stiffness, right side `Q(phi_i)`.
pub fn solve_adjoint(
    problem: &DiffusionProblem,
    qoi: &QuantityOfInterest,
    space: &Arc<FeSpace>,
) -> Result<FeFunction, VerifemError> {
    if qoi.is_empty() {
        return Ok(FeFunction::zero(space.clone()));
    }
    let mesh = &space.mesh;
    let system = crate::fem::assemble(problem, space)?;
    let mut rhs = vec![0.0; space.n_free()];
    for k in 0..mesh.n_elements() {
        let load = qoi.element_load(problem, mesh, k);
        let tri = mesh.triangles[k];
        for j in 0..3 {
            if let Some(g) = space.free_index[tri[j]] {
                rhs[g] += load[j];
            }
        }
    }
    if let Some(g) = &qoi.g_traction {
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.label != BoundaryLabel::Neumann {
                continue;
            }
            let a = mesh.vertices[edge.vertices[0]];
            let b = mesh.vertices[edge.vertices[1]];
            let len = mesh.edge_length(e);
            for &(t, w) in edge_rule_3pt().iter() {
                let x = a[0] + t * (b[0] - a[0]);
                let y = a[1] + t * (b[1] - a[1]);
                let gv = g(x, y);
                if let Some(ga) = space.free_index[edge.vertices[0]] {
                    rhs[ga] += w * len * gv * (1.0 - t);
                }
                if let Some(gb) = space.free_index[edge.vertices[1]] {
                    rhs[gb] += w * len * gv * t;
                }
            }
        }
    }
    let max_iter = 20 * space.n_dofs().max(50);
    let (reduced, _) = pcg_refined(&system.matrix, &rhs, crate::fem::SOLVER_RTOL, max_iter)?;
    let mut coeffs = vec![0.0; space.n_dofs()];
    for (ri, &v) in space.free_dofs.iter().enumerate() {
        coeffs[v] = reduced[ri];
    }
    Ok(FeFunction::from_coeffs(space.clone(), coeffs))
}

/// Dual-weighted residual indicator `R(adjoint_fine)`, signed. The adjoint
/// must live on a refinement of the primal mesh (the same space would give
/// zero by orthogonality).
pub fn dwr_estimate(
    problem_fine: &DiffusionProblem,
    u_prolonged: &FeFunction,
    adjoint_fine: &FeFunction,
) -> Result<f64, VerifemError> {
    residual_eval(problem_fine, u_prolonged, adjoint_fine)
}

/// Equilibrated adjoint machinery in shifted form: the admissible adjoint
/// flux is `p_hat + shift`, the discrete one `q_bar + shift`, so all error
/// integrals only involve `p_hat - q_bar`.
pub struct AdjointEquilibration {
    pub aux_problem: DiffusionProblem,
    pub q_bar: Vec<[f64; 2]>,
    pub p_hat: EquilibratedFlux,
    pub shift: Vec<[f64; 2]>,
    pub u_adj: FeFunction,
}

/// Build the adjoint auxiliary diffusion data and equilibrate it.
pub fn equilibrate_adjoint(
    problem: &DiffusionProblem,
    qoi: &QuantityOfInterest,
    u_adj: &FeFunction,
    analytic: bool,
    enrichment: usize,
) -> Result<AdjointEquilibration, VerifemError> {
    let mesh = &u_adj.space.mesh;
    let f_values: Vec<f64> = match &qoi.f_body {
        Some(f) => f.clone(),
        None => vec![0.0; mesh.n_elements()],
    };
    let aux_problem = DiffusionProblem {
        a: problem.a.clone(),
        f: Source::PerElement(f_values),
        g: match &qoi.g_traction {
            Some(g) => NeumannData::Pointwise(g.clone()),
            None => NeumannData::Zero,
        },
        exact: None,
    };
    let shift = qoi.shift_field(problem, mesh);
    let q_adj = flux(problem, u_adj);
    let q_bar: Vec<[f64; 2]> = (0..mesh.n_elements())
        .map(|k| {
            [
                q_adj.values[k][0] - shift[k][0],
                q_adj.values[k][1] - shift[k][1],
            ]
        })
        .collect();
    let tractions = build_tractions(&aux_problem, mesh, &q_bar)?;
    let p_hat = if analytic {
        equilibrate_analytic(&aux_problem, mesh, &tractions)?
    } else {
        equilibrate_fe(&aux_problem, mesh, &tractions, enrichment)?
    };
    Ok(AdjointEquilibration {
        aux_problem,
        q_bar,
        p_hat,
        shift,
        u_adj: u_adj.clone(),
    })
}

impl AdjointEquilibration {
    /// Adjoint constitutive relation error and its per-element squared
    /// contributions (of `2 E~^2`).
    pub fn cre_contributions(&self, problem: &DiffusionProblem, mesh: &Mesh) -> Vec<f64> {
        let q_bar_flux = ElementFlux {
            values: self.q_bar.clone(),
        };
        cre_contributions(problem, mesh, &q_bar_flux, &self.p_hat)
    }
}

/// Everything the CRE goal bound produces, kept for adaptivity.
pub struct GoalCreData {
    pub q_uh: f64,
    pub c_h: f64,
    pub c_h_elements: Vec<f64>,
    pub e_cre: f64,
    pub e_sq_elements: Vec<f64>,
    pub et_cre: f64,
    pub et_sq_elements: Vec<f64>,
    pub guaranteed: bool,
}

/// Direct Cauchy-Schwarz bound `|Q(e)| <= eta eta~` from two guaranteed
/// energy estimates.
pub fn cs_goal_bound(
    q_uh: f64,
    primal: &crate::report::EstimateReport,
    adjoint: &crate::report::EstimateReport,
) -> Result<GoalBounds, VerifemError> {
    use crate::report::BoundKind;
    if primal.bound_kind != BoundKind::GuaranteedUpper
        || adjoint.bound_kind != BoundKind::GuaranteedUpper
    {
        return Err(VerifemError::Input(
            "cauchy-schwarz goal bound needs guaranteed upper estimates".into(),
        ));
    }
    let w = primal.eta * adjoint.eta;
    Ok(GoalBounds {
        method: "cauchy_schwarz".into(),
        lower: q_uh - w,
        upper: q_uh + w,
        corrected: q_uh,
        correction: 0.0,
        guaranteed: primal.caveats.is_empty() && adjoint.caveats.is_empty(),
    })
}

/// CRE goal bound with computable correction:
/// `|Q(u) - Q(u_h) - C_h| <= E E~`. Also returns the twice-wider plain
/// product bound for comparison.
pub fn cre_goal_bound(
    problem: &DiffusionProblem,
    u: &FeFunction,
    q_hat: &EquilibratedFlux,
    adjoint: &AdjointEquilibration,
    qoi: &QuantityOfInterest,
) -> Result<(GoalBounds, GoalBounds, GoalCreData), VerifemError> {
    let mesh = &u.space.mesh;
    let q = flux(problem, u);
    let q_uh = qoi_eval(problem, qoi, u);

    // C_h^K = 1/2 int_K A^-1 (q_hat - q_h) . (p_hat - q_bar)
    let degree = 8;
    let rule = crate::quad::TriRule::with_degree(degree);
    let mut c_h_elements = vec![0.0f64; mesh.n_elements()];
    for k in 0..mesh.n_elements() {
        let area = mesh.elem_area(k);
        let ainv = problem.a.inverse_at(k);
        let mut acc = 0.0;
        for p in &rule.points {
            let qh = q.values[k];
            let qa = q_hat.eval(mesh, &problem.a, k, p.bary);
            let pa = adjoint.p_hat.eval(mesh, &problem.a, k, p.bary);
            let d1 = [qa[0] - qh[0], qa[1] - qh[1]];
            let d2 = [pa[0] - adjoint.q_bar[k][0], pa[1] - adjoint.q_bar[k][1]];
            acc += p.weight * area * dot2(mat_vec(ainv, d1), d2);
        }
        c_h_elements[k] = 0.5 * acc;
    }
    let c_h: f64 = c_h_elements.iter().sum();

    let e_sq_elements: Vec<f64> = cre_contributions(problem, mesh, &q, q_hat)
        .iter()
        .map(|x| 0.5 * x)
        .collect();
    let et_sq_elements: Vec<f64> = adjoint
        .cre_contributions(problem, mesh)
        .iter()
        .map(|x| 0.5 * x)
        .collect();
    let e_cre = e_sq_elements.iter().sum::<f64>().sqrt();
    let et_cre = et_sq_elements.iter().sum::<f64>().sqrt();
    // admissibility caveats (enriched solves, projected data) propagate
    let guaranteed = q_hat.guaranteed
        && adjoint.p_hat.guaranteed
        && !q_hat.data_projected
        && !adjoint.p_hat.data_projected;

    let half = e_cre * et_cre;
    let tight = GoalBounds {
        method: "cre_corrected".into(),
        lower: q_uh + c_h - half,
        upper: q_uh + c_h + half,
        corrected: q_uh + c_h,
        correction: c_h,
        guaranteed,
    };
    let wide = GoalBounds {
        method: "cre_plain".into(),
        lower: q_uh - 2.0 * half,
        upper: q_uh + 2.0 * half,
        corrected: q_uh,
        correction: 0.0,
        guaranteed,
    };
    Ok((
        tight,
        wide,
        GoalCreData {
            q_uh,
            c_h,
            c_h_elements,
            e_cre,
            e_sq_elements,
            et_cre,
            et_sq_elements,
            guaranteed,
        },
    ))
}

/// Parallelogram-identity bound from guaranteed bounds on
/// `chi_pm = |||s e +- s^-1 e~|||^2`.
pub fn parallelogram_bound(
    q_uh: f64,
    chi_plus: (f64, f64),
    chi_minus: (f64, f64),
    guaranteed: bool,
) -> GoalBounds {
    let (cp_low, cp_upp) = chi_plus;
    let (cm_low, cm_upp) = chi_minus;
    let lower = q_uh + 0.25 * (cp_low - cm_upp);
    let upper = q_uh + 0.25 * (cp_upp - cm_low);
    GoalBounds {
        method: "parallelogram".into(),
        lower,
        upper,
        corrected: 0.5 * (lower + upper),
        correction: 0.5 * (lower + upper) - q_uh,
        guaranteed,
    }
}

/// Guaranteed `(lower, upper)` bounds on `chi_pm` through the admissible
/// fluxes of the combined data: upper `|||s(q_hat - q_h) +- s^-1 (p_hat -
/// q_bar)|||_q^2`, lower 0.
pub fn chi_bounds(
    problem: &DiffusionProblem,
    u: &FeFunction,
    q_hat: &EquilibratedFlux,
    adjoint: &AdjointEquilibration,
    s: f64,
) -> Result<((f64, f64), (f64, f64)), VerifemError> {
    if s <= 0.0 {
        return Err(VerifemError::Input("scaling factor must be positive".into()));
    }
    let mesh = &u.space.mesh;
    let q = flux(problem, u);
    let rule = crate::quad::TriRule::with_degree(8);
    let mut chi_p = 0.0;
    let mut chi_m = 0.0;
    for k in 0..mesh.n_elements() {
        let area = mesh.elem_area(k);
        let ainv = problem.a.inverse_at(k);
        for p in &rule.points {
            let qh = q.values[k];
            let qa = q_hat.eval(mesh, &problem.a, k, p.bary);
            let pa = adjoint.p_hat.eval(mesh, &problem.a, k, p.bary);
            let d1 = [s * (qa[0] - qh[0]), s * (qa[1] - qh[1])];
            let d2 = [
                (pa[0] - adjoint.q_bar[k][0]) / s,
                (pa[1] - adjoint.q_bar[k][1]) / s,
            ];
            let plus = [d1[0] + d2[0], d1[1] + d2[1]];
            let minus = [d1[0] - d2[0], d1[1] - d2[1]];
            chi_p += p.weight * area * dot2(mat_vec(ainv, plus), plus);
            chi_m += p.weight * area * dot2(mat_vec(ainv, minus), minus);
        }
    }
    Ok(((0.0, chi_p), (0.0, chi_m)))
}

/// Fine-mesh adjoint bundle for the enriched goal bound.
pub struct FineAdjoint {
    pub refinement: Refinement,
    pub problem_fine: DiffusionProblem,
    pub qoi_fine: QuantityOfInterest,
    pub adjoint: AdjointEquilibration,
}

/// Solve and equilibrate the adjoint on one uniform refinement.
pub fn solve_fine_adjoint(
    problem: &DiffusionProblem,
    mesh: &Arc<Mesh>,
    qoi: &QuantityOfInterest,
    analytic: bool,
    enrichment: usize,
) -> Result<FineAdjoint, VerifemError> {
    let refinement = mesh.uniform_refine()?;
    let problem_fine = problem.for_refinement(&refinement);
    let qoi_fine = qoi.for_refinement(&refinement);
    let fine_mesh = Arc::new(refinement.mesh.clone());
    let fine_space = Arc::new(FeSpace::new(fine_mesh));
    let u_adj_fine = solve_adjoint(&problem_fine, &qoi_fine, &fine_space)?;
    let adjoint = equilibrate_adjoint(&problem_fine, &qoi_fine, &u_adj_fine, analytic, enrichment)?;
    Ok(FineAdjoint {
        refinement,
        problem_fine,
        qoi_fine,
        adjoint,
    })
}

/// Enriched-adjoint goal bound
/// `|Q(u) - Q(u_h) - C_plus| <= E E~_+` with
/// `C_plus = 1/2 int A^-1 (q_hat - q_h) . (q~hat_+ + q~_+)`.
pub fn enriched_cre_goal_bound(
    problem: &DiffusionProblem,
    u: &FeFunction,
    q_hat: &EquilibratedFlux,
    qoi: &QuantityOfInterest,
    fine: &FineAdjoint,
) -> Result<GoalBounds, VerifemError> {
    let coarse_mesh = &u.space.mesh;
    let fine_mesh = &fine.refinement.mesh;
    let q = flux(problem, u);
    let q_uh = qoi_eval(problem, qoi, u);

    let rule = crate::quad::TriRule::with_degree(8);
    let mut c_plus = 0.0;
    for k in 0..fine_mesh.n_elements() {
        let parent = fine_mesh.parent[k];
        let area = fine_mesh.elem_area(k);
        let ainv = fine.problem_fine.a.inverse_at(k);
        let verts = fine_mesh.elem_vertices(k);
        for p in &rule.points {
            let xy = crate::quad::TriRule::physical(p, &verts);
            // coarse fields evaluated on the ancestor element
            let bary_c = phys_to_bary(coarse_mesh.elem_vertices(parent), xy);
            let qa = q_hat.eval(coarse_mesh, &problem.a, parent, bary_c);
            let qh = q.values[parent];
            let d1 = [qa[0] - qh[0], qa[1] - qh[1]];
            // q~hat_+ + q~_+ = p_hat_+ + q_bar_+ + 2 shift_+
            let pa = fine.adjoint.p_hat.eval(fine_mesh, &fine.problem_fine.a, k, p.bary);
            let qb = fine.adjoint.q_bar[k];
            let sh = fine.adjoint.shift[k];
            let d2 = [
                pa[0] + qb[0] + 2.0 * sh[0],
                pa[1] + qb[1] + 2.0 * sh[1],
            ];
            c_plus += 0.5 * p.weight * area * dot2(mat_vec(ainv, d1), d2);
        }
    }

    let e_cre = (cre_contributions(problem, coarse_mesh, &q, q_hat)
        .iter()
        .sum::<f64>()
        / 2.0)
        .sqrt();
    let et_plus = (fine
        .adjoint
        .cre_contributions(&fine.problem_fine, fine_mesh)
        .iter()
        .sum::<f64>()
        / 2.0)
        .sqrt();
    let half = e_cre * et_plus;
    Ok(GoalBounds {
        method: "cre_enriched".into(),
        lower: q_uh + c_plus - half,
        upper: q_uh + c_plus + half,
        corrected: q_uh + c_plus,
        correction: c_plus,
        guaranteed: q_hat.guaranteed
            && fine.adjoint.p_hat.guaranteed
            && !q_hat.data_projected
            && !fine.adjoint.p_hat.data_projected,
    })
}

fn phys_to_bary(tri: [[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let a2 = (tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
        - (tri[1][1] - tri[0][1]) * (tri[2][0] - tri[0][0]);
    let l0 = ((tri[1][0] - p[0]) * (tri[2][1] - p[1]) - (tri[1][1] - p[1]) * (tri[2][0] - p[0])) / a2;
    let l1 = ((tri[2][0] - p[0]) * (tri[0][1] - p[1]) - (tri[2][1] - p[1]) * (tri[0][0] - p[0])) / a2;
    [l0, l1, 1.0 - l0 - l1]
}

/// Signed local indicators `C_h^K + theta_max eta_K` with
/// `eta_K^2 = (E^2 E~_K^2 + E~^2 E_K^2)/2`; their squared sum equals
/// `(E E~)^2`.
pub fn local_goal_indicators(data: &GoalCreData) -> (Vec<f64>, f64) {
    let e2 = data.e_cre * data.e_cre;
    let et2 = data.et_cre * data.et_cre;
    let prod = data.e_cre * data.et_cre;
    // theta achieving the larger |C_h + theta E E~|, ties toward +1
    let theta = if (data.c_h + prod).abs() >= (data.c_h - prod).abs() {
        1.0
    } else {
        -1.0
    };
    let indicators = data
        .c_h_elements
        .iter()
        .zip(data.e_sq_elements.iter().zip(&data.et_sq_elements))
        .map(|(c, (ek2, etk2))| {
            let eta_k = (0.5 * (e2 * etk2 + et2 * ek2)).sqrt();
            c + theta * eta_k
        })
        .collect();
    (indicators, theta)
}
