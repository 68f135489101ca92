//! Explicit residual indicators and the flux-free subdomain estimator, plus
//! the interior-residual / edge-jump primitives shared with equilibration.
//!
//! For P1 elements with element-wise constant coefficient the discrete flux
//! is constant per element, so the interior residual reduces to the source
//! itself and the edge residuals are the classical normal-flux jumps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::VerifemError;
use crate::fem::{
    dot2, element_volume_load, energy_norm_diff, flux, mat_vec, residual_eval, FeFunction,
    FeSpace,
};
use crate::lagrange::{NodeKey, SubmeshSpace};
use crate::mesh::{BoundaryLabel, EdgeId, ElemId, Mesh, VertexId};
use crate::problems::DiffusionProblem;
use crate::quad::{edge_rule_3pt, TriRule};
use crate::report::{BoundKind, EstimateReport};

/// Interior residuals, edge jumps and the edge weights of the explicit
/// indicator.
pub struct ResidualData {
    /// Squared L2 norm of the interior residual per element.
    pub r_l2_sq: Vec<f64>,
    /// Normal-flux jump per interior edge (constant), 0 on boundary edges.
    pub jump: Vec<f64>,
    /// Outward discrete normal flux per Neumann edge, 0 elsewhere.
    pub qn_neumann: Vec<f64>,
    /// Squared L2 norm of the edge residual per edge (0 on Dirichlet edges).
    pub t_l2_sq: Vec<f64>,
    /// Indicator weight per edge: 0 on Dirichlet, 1/2 interior, 1 Neumann.
    pub beta: Vec<f64>,
}

/// Assemble the residual data of a P1 solution.
pub fn residual_data(problem: &DiffusionProblem, u: &FeFunction) -> ResidualData {
    let mesh = &u.space.mesh;
    let q = flux(problem, u);
    let rule = TriRule::with_degree(5);

    let r_l2_sq = (0..mesh.n_elements())
        .map(|k| {
            // div(A grad u_h) = 0 per element: the residual is f itself
            if problem.f.is_element_constant() {
                let r = problem.f.element_value(k);
                r * r * mesh.elem_area(k)
            } else {
                let v = mesh.elem_vertices(k);
                let area = mesh.elem_area(k);
                rule.points
                    .iter()
                    .map(|p| {
                        let [x, y] = TriRule::physical(p, &v);
                        let r = problem.f.eval(k, x, y);
                        p.weight * area * r * r
                    })
                    .sum()
            }
        })
        .collect();

    let mut jump = vec![0.0; mesh.edges.len()];
    let mut qn_neumann = vec![0.0; mesh.edges.len()];
    let mut t_l2_sq = vec![0.0; mesh.edges.len()];
    let mut beta = vec![0.0; mesh.edges.len()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let len = mesh.edge_length(e);
        match (edge.elements, edge.label) {
            ([Some(k1), Some(k2)], _) => {
                let n1 = mesh.outward_normal(e, k1);
                let j = dot2(q.values[k1], n1) - dot2(q.values[k2], n1);
                jump[e] = j;
                t_l2_sq[e] = j * j * len;
                beta[e] = 0.5;
            }
            ([Some(k1), None], BoundaryLabel::Neumann) => {
                let n = mesh.outward_normal(e, k1);
                let qn = dot2(q.values[k1], n);
                qn_neumann[e] = qn;
                let a = mesh.vertices[edge.vertices[0]];
                let b = mesh.vertices[edge.vertices[1]];
                t_l2_sq[e] = edge_rule_3pt()
                    .iter()
                    .map(|&(t, w)| {
                        let x = a[0] + t * (b[0] - a[0]);
                        let y = a[1] + t * (b[1] - a[1]);
                        let tv = qn - problem.g.eval(x, y);
                        w * len * tv * tv
                    })
                    .sum();
                beta[e] = 1.0;
            }
            _ => {
                // Dirichlet edge: unused by the indicator
            }
        }
    }

    ResidualData {
        r_l2_sq,
        jump,
        qn_neumann,
        t_l2_sq,
        beta,
    }
}

/// Explicit residual indicators
/// `eta_K^2 = h_K^2 ||r||^2_K + sum_edges beta l ||t||^2`. The global
/// constant relating them to the error is unknown, so the report is an
/// indicator, not a bound.
pub fn explicit_indicators(mesh: &Mesh, data: &ResidualData) -> EstimateReport {
    let quality = mesh.quality();
    let mut eta_sq = vec![0.0f64; mesh.n_elements()];
    for k in 0..mesh.n_elements() {
        eta_sq[k] = quality.h_elem[k] * quality.h_elem[k] * data.r_l2_sq[k];
    }
    for (e, edge) in mesh.edges.iter().enumerate() {
        if data.beta[e] == 0.0 {
            continue;
        }
        let contrib = data.beta[e] * mesh.edge_length(e) * data.t_l2_sq[e];
        for k in edge.elements.iter().flatten() {
            eta_sq[*k] += contrib;
        }
    }
    let eta = eta_sq.iter().sum::<f64>().sqrt();
    EstimateReport::new("explicit", eta, BoundKind::Indicator).with_elements(eta_sq)
}

/// Local solution of one flux-free patch problem.
pub struct PatchSolution {
    pub vertex: VertexId,
    pub space: SubmeshSpace,
    pub coeffs: Vec<f64>,
    pub zero_mean: bool,
}

impl PatchSolution {
    fn local_index(&self, k: ElemId) -> Option<usize> {
        self.space.elements.iter().position(|&e| e == k)
    }

    /// Gradient of the patch solution inside element `k`.
    pub fn gradient(&self, mesh: &Mesh, k: ElemId, bary: [f64; 3]) -> [f64; 2] {
        let Some(lk) = self.local_index(k) else {
            return [0.0, 0.0];
        };
        let hats = mesh.hat_gradients(k);
        let grads = self.space.basis.gradients(bary, &hats);
        let mut g = [0.0; 2];
        for (j, &node) in self.space.elem_nodes[lk].iter().enumerate() {
            g[0] += self.coeffs[node] * grads[j][0];
            g[1] += self.coeffs[node] * grads[j][1];
        }
        g
    }

    /// Value of the patch solution inside element `k`.
    pub fn value(&self, k: ElemId, bary: [f64; 3]) -> f64 {
        let Some(lk) = self.local_index(k) else {
            return 0.0;
        };
        let vals = self.space.basis.values(bary);
        self.space.elem_nodes[lk]
            .iter()
            .zip(&vals)
            .map(|(&node, v)| self.coeffs[node] * v)
            .sum()
    }

    /// Mean of the solution over the patch.
    pub fn mean(&self, mesh: &Mesh) -> f64 {
        let rule = TriRule::with_degree(self.space.degree);
        let mut acc = 0.0;
        for &k in &self.space.elements {
            let area = mesh.elem_area(k);
            for p in &rule.points {
                acc += p.weight * area * self.value(k, p.bary);
            }
        }
        acc
    }
}

/// Hat-function value of vertex `i` inside element `k`.
fn hat_value(mesh: &Mesh, i: VertexId, k: ElemId, bary: [f64; 3]) -> f64 {
    let tri = mesh.triangles[k];
    (0..3)
        .find(|&j| tri[j] == i)
        .map(|j| bary[j])
        .unwrap_or(0.0)
}

/// Solve the local patch problem of vertex `i`: find `z` in the continuous
/// degree-(1+k) space on the patch with `B(z, v) = R(v phi_i)`. Patches not
/// touching the Dirichlet boundary carry a zero-mean constraint.
pub fn flux_free_patch_solve(
    problem: &DiffusionProblem,
    u: &FeFunction,
    data: &ResidualData,
    i: VertexId,
    enrichment: usize,
) -> Result<PatchSolution, VerifemError> {
    if enrichment < 1 {
        return Err(VerifemError::Input("enrichment must be >= 1".into()));
    }
    let mesh = &u.space.mesh;
    let degree = 1 + enrichment;
    let patch = mesh.vertex_patch(i)?.to_vec();
    let space = SubmeshSpace::new(mesh, &patch, degree);
    let n = space.n_dofs();

    // nodes constrained to zero on the Dirichlet boundary of the patch
    let mut constrained = vec![false; n];
    for &k in &patch {
        for (j, &e) in mesh.tri_edges[k].iter().enumerate() {
            if mesh.edges[e].label != BoundaryLabel::Dirichlet {
                continue;
            }
            let a = mesh.triangles[k][j];
            let b = mesh.triangles[k][(j + 1) % 3];
            let (lo, hi) = (a.min(b), a.max(b));
            for (idx, key) in space.nodes.iter().enumerate() {
                match *key {
                    NodeKey::Vertex(v) if v == a || v == b => constrained[idx] = true,
                    NodeKey::Edge(x, y, _) if x == lo && y == hi => constrained[idx] = true,
                    _ => {}
                }
            }
        }
    }
    let zero_mean = !constrained.iter().any(|&c| c);

    let n_sys = n + if zero_mean { 1 } else { 0 };
    let mut a_mat = DMatrix::<f64>::zeros(n_sys, n_sys);
    let mut rhs = DVector::<f64>::zeros(n_sys);
    let rule = TriRule::with_degree(2 * degree);

    for (lk, &k) in space.elements.iter().enumerate() {
        let verts = mesh.elem_vertices(k);
        let area = mesh.elem_area(k);
        let hats = mesh.hat_gradients(k);
        let a = problem.a.at(k);
        let nodes = &space.elem_nodes[lk];
        for p in &rule.points {
            let grads = space.basis.gradients(p.bary, &hats);
            let vals = space.basis.values(p.bary);
            let w = p.weight * area;
            for (bj, &gj) in nodes.iter().enumerate() {
                let agj = mat_vec(a, grads[bj]);
                for (bi, &gi) in nodes.iter().enumerate() {
                    a_mat[(gi, gj)] += w * dot2(agj, grads[bi]);
                }
                if zero_mean {
                    a_mat[(n, gj)] += w * vals[bj];
                    a_mat[(gj, n)] += w * vals[bj];
                }
            }
            // volume residual: r = f (P1, element-wise constant coefficient)
            let [x, y] = TriRule::physical(p, &verts);
            let fv = problem.f.eval(k, x, y);
            let phi = hat_value(mesh, i, k, p.bary);
            for (bj, &gj) in nodes.iter().enumerate() {
                rhs[gj] += w * fv * phi * vals[bj];
            }
        }
        // edge residuals on edges incident to vertex i
        for (j, &e) in mesh.tri_edges[k].iter().enumerate() {
            let edge = &mesh.edges[e];
            let (a_v, b_v) = (mesh.triangles[k][j], mesh.triangles[k][(j + 1) % 3]);
            if a_v != i && b_v != i {
                continue;
            }
            let interior = edge.elements[1].is_some();
            // interior edges are visited from both sides; count them once
            if interior && edge.elements[0] != Some(k) {
                continue;
            }
            if edge.label == BoundaryLabel::Dirichlet {
                continue;
            }
            let len = mesh.edge_length(e);
            let pa = mesh.vertices[edge.vertices[0]];
            let pb = mesh.vertices[edge.vertices[1]];
            for &(t, w) in edge_rule_3pt().iter() {
                let x = pa[0] + t * (pb[0] - pa[0]);
                let y = pa[1] + t * (pb[1] - pa[1]);
                let tv = if interior {
                    data.jump[e]
                } else {
                    data.qn_neumann[e] - problem.g.eval(x, y)
                };
                // hat of i and the local basis along the edge, via barycentric
                // coordinates of the sampling point in element k
                let bary = bary_on_edge(mesh, k, e, t);
                let phi = hat_value(mesh, i, k, bary);
                let vals = space.basis.values(bary);
                for (bj, &gj) in space.elem_nodes[lk].iter().enumerate() {
                    rhs[gj] -= w * len * tv * phi * vals[bj];
                }
            }
        }
    }

    // eliminate constrained dofs
    for (idx, &c) in constrained.iter().enumerate() {
        if c {
            for j in 0..n_sys {
                a_mat[(idx, j)] = 0.0;
                a_mat[(j, idx)] = 0.0;
            }
            a_mat[(idx, idx)] = 1.0;
            rhs[idx] = 0.0;
        }
    }

    let lu = a_mat.lu();
    let sol = lu.solve(&rhs).ok_or_else(|| {
        VerifemError::Numerical(format!("singular patch system at vertex {i}"))
    })?;
    Ok(PatchSolution {
        vertex: i,
        space,
        coeffs: sol.as_slice()[..n].to_vec(),
        zero_mean,
    })
}

/// Barycentric coordinates (w.r.t. element `k`) of the point at parameter
/// `t` along edge `e` (measured from the lower edge vertex).
fn bary_on_edge(mesh: &Mesh, k: ElemId, e: EdgeId, t: f64) -> [f64; 3] {
    let edge = &mesh.edges[e];
    let tri = mesh.triangles[k];
    let mut bary = [0.0; 3];
    for (j, &v) in tri.iter().enumerate() {
        if v == edge.vertices[0] {
            bary[j] = 1.0 - t;
        } else if v == edge.vertices[1] {
            bary[j] = t;
        }
    }
    bary
}

/// All patch solutions of a mesh, in vertex order.
pub fn flux_free_solve_all(
    problem: &DiffusionProblem,
    u: &FeFunction,
    enrichment: usize,
) -> Result<Vec<PatchSolution>, VerifemError> {
    let data = residual_data(problem, u);
    (0..u.space.mesh.n_vertices())
        .map(|i| flux_free_patch_solve(problem, u, &data, i, enrichment))
        .collect()
}

/// Flux-free upper bound `sqrt(B_brok(sum z_i, sum z_i))`.
pub fn flux_free_estimate(
    problem: &DiffusionProblem,
    mesh: &Mesh,
    patches: &[PatchSolution],
) -> EstimateReport {
    let mut by_vertex: Vec<Option<&PatchSolution>> = vec![None; mesh.n_vertices()];
    for p in patches {
        by_vertex[p.vertex] = Some(p);
    }
    let degree = patches.first().map(|p| p.space.degree).unwrap_or(2);
    let rule = TriRule::with_degree(2 * degree);
    let mut eta_sq = vec![0.0f64; mesh.n_elements()];
    for k in 0..mesh.n_elements() {
        let area = mesh.elem_area(k);
        let a = problem.a.at(k);
        let mut acc = 0.0;
        for p in &rule.points {
            let mut g = [0.0; 2];
            for &v in &mesh.triangles[k] {
                if let Some(z) = by_vertex[v] {
                    let gz = z.gradient(mesh, k, p.bary);
                    g[0] += gz[0];
                    g[1] += gz[1];
                }
            }
            acc += p.weight * area * dot2(mat_vec(a, g), g);
        }
        eta_sq[k] = acc;
    }
    let eta = eta_sq.iter().sum::<f64>().sqrt();
    EstimateReport::new("flux_free_upper", eta, BoundKind::GuaranteedUpper)
        .with_elements(eta_sq)
        .with_caveat("local patch problems solved in an enriched polynomial space")
}

/// Lower-bound artifacts: the conforming test function and the fine-mesh
/// data it lives on, reusable for complementary-energy bounds.
pub struct FluxFreeLowerArtifacts {
    pub report: EstimateReport,
    pub problem_fine: DiffusionProblem,
    pub u_prolonged: FeFunction,
    pub v_fine: FeFunction,
}

/// Flux-free lower bound `|R(v)| / |||v|||` with `v` the conforming nodal
/// interpolation of `sum z_i phi_i` on two uniform refinements.
pub fn flux_free_lower_bound(
    problem: &DiffusionProblem,
    u: &FeFunction,
    patches: &[PatchSolution],
) -> Result<EstimateReport, VerifemError> {
    Ok(flux_free_lower_bound_full(problem, u, patches)?.report)
}

pub fn flux_free_lower_bound_full(
    problem: &DiffusionProblem,
    u: &FeFunction,
    patches: &[PatchSolution],
) -> Result<FluxFreeLowerArtifacts, VerifemError> {
    let mesh = &u.space.mesh;
    let r1 = mesh.uniform_refine()?;
    let r2 = r1.mesh.uniform_refine()?;
    let fine_mesh = Arc::new(r2.mesh.clone());
    let fine_space = Arc::new(FeSpace::new(fine_mesh.clone()));

    // fine element -> coarse ancestor
    let ancestor: Vec<ElemId> = (0..fine_mesh.n_elements())
        .map(|k| r1.mesh.parent[r2.mesh.parent[k]])
        .collect();

    let mut by_vertex: Vec<Option<&PatchSolution>> = vec![None; mesh.n_vertices()];
    for p in patches {
        by_vertex[p.vertex] = Some(p);
    }

    // nodal interpolation of v~ = sum z_i phi_i at the fine vertices
    let mut values = vec![0.0f64; fine_mesh.n_vertices()];
    let mut visited = vec![false; fine_mesh.n_vertices()];
    for fk in 0..fine_mesh.n_elements() {
        let ck = ancestor[fk];
        let cv = mesh.elem_vertices(ck);
        for &fv in &fine_mesh.triangles[fk] {
            if visited[fv] {
                continue;
            }
            visited[fv] = true;
            let p = fine_mesh.vertices[fv];
            let bary = barycentric(cv, p);
            let mut val = 0.0;
            for (j, &v) in mesh.triangles[ck].iter().enumerate() {
                if let Some(z) = by_vertex[v] {
                    val += z.value(ck, bary) * bary[j];
                }
            }
            values[fv] = val;
        }
    }

    let v_fine = FeFunction::from_coeffs(fine_space.clone(), values);
    let problem_mid = problem.for_refinement(&r1);
    let problem_fine = problem_mid.for_refinement(&r2);
    let u_mid = r1.prolong(&u.coeffs);
    let u_fine = FeFunction::from_coeffs(fine_space.clone(), r2.prolong(&u_mid));

    let r_val = residual_eval(&problem_fine, &u_fine, &v_fine)?;
    let v_norm = energy_norm_diff(&problem_fine, &v_fine, None);

    // R(v~) equals the sum of the patch energies; the difference records the
    // interpolation defect of the lower-bound test function
    let patch_energy: f64 = patches
        .iter()
        .map(|z| {
            let rule = TriRule::with_degree(2 * z.space.degree);
            let mut acc = 0.0;
            for &k in &z.space.elements {
                let area = mesh.elem_area(k);
                let a = problem.a.at(k);
                for p in &rule.points {
                    let g = z.gradient(mesh, k, p.bary);
                    acc += p.weight * area * dot2(mat_vec(a, g), g);
                }
            }
            acc
        })
        .sum();

    let report = if v_norm <= 1e-300 {
        EstimateReport::new("flux_free_lower", 0.0, BoundKind::GuaranteedLower)
            .with_detail("degenerate", 1.0)
    } else {
        EstimateReport::new("flux_free_lower", r_val.abs() / v_norm, BoundKind::GuaranteedLower)
            .with_detail("interpolation_defect", (r_val - patch_energy).abs())
            .with_detail("residual_value", r_val)
    };
    Ok(FluxFreeLowerArtifacts {
        report,
        problem_fine,
        u_prolonged: u_fine,
        v_fine,
    })
}

fn barycentric(tri: [[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let a2 = (tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
        - (tri[1][1] - tri[0][1]) * (tri[2][0] - tri[0][0]);
    let l0 = ((tri[1][0] - p[0]) * (tri[2][1] - p[1]) - (tri[1][1] - p[1]) * (tri[2][0] - p[0])) / a2;
    let l1 = ((tri[2][0] - p[0]) * (tri[0][1] - p[1]) - (tri[2][1] - p[1]) * (tri[0][0] - p[0])) / a2;
    [l0, l1, 1.0 - l0 - l1]
}

/// Convenience: R(phi_i) from the residual data, for compatibility checks.
pub fn residual_of_hat(
    problem: &DiffusionProblem,
    u: &FeFunction,
    data: &ResidualData,
    i: VertexId,
) -> Result<f64, VerifemError> {
    let mesh = &u.space.mesh;
    let mut acc = 0.0;
    for &k in mesh.vertex_patch(i)? {
        let tri = mesh.triangles[k];
        let load = element_volume_load(problem, mesh, k);
        let j = (0..3).find(|&j| tri[j] == i).expect("vertex in element");
        acc += load[j];
        for (jj, &e) in mesh.tri_edges[k].iter().enumerate() {
            let edge = &mesh.edges[e];
            let (a_v, b_v) = (tri[jj], tri[(jj + 1) % 3]);
            if a_v != i && b_v != i {
                continue;
            }
            if edge.elements[1].is_some() && edge.elements[0] != Some(k) {
                continue;
            }
            if edge.label == BoundaryLabel::Dirichlet {
                continue;
            }
            let len = mesh.edge_length(e);
            let pa = mesh.vertices[edge.vertices[0]];
            let pb = mesh.vertices[edge.vertices[1]];
            for &(t, w) in edge_rule_3pt().iter() {
                let x = pa[0] + t * (pb[0] - pa[0]);
                let y = pa[1] + t * (pb[1] - pa[1]);
                let tv = if edge.elements[1].is_some() {
                    data.jump[e]
                } else {
                    data.qn_neumann[e] - problem.g.eval(x, y)
                };
                let phi = if edge.vertices[0] == i { 1.0 - t } else { t };
                acc -= w * len * tv * phi;
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{exact_energy_error, load_norm, solve};
    use crate::mesh::{unit_square_mesh, BcLayout};
    use crate::problems::{fig1_problem, sin_sin_problem};
    use std::sync::Arc;

    #[test]
    fn residual_data_zero_for_flat_solution() {
        let p = fig1_problem();
        let mesh = Arc::new(unit_square_mesh(2, BcLayout::Fig1).unwrap());
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let u = FeFunction::zero(space);
        let data = residual_data(&p, &u);
        // f = 0: interior residuals vanish on every element
        assert!(data.r_l2_sq.iter().all(|&r| r == 0.0));
        // zero flux: interior jumps vanish, Neumann edges carry -g
        assert!(data.jump.iter().all(|&j| j.abs() < 1e-15));
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.label == BoundaryLabel::Neumann {
                let len = mesh.edge_length(e);
                assert!((data.t_l2_sq[e] - len).abs() < 1e-14); // (0 - 1)^2 * len
            }
        }
    }

    #[test]
    fn jump_of_hand_built_fluxes() {
        // two elements of the unit square share the diagonal; build u with
        // gradient (1,0) on element 0 and (0,0) on element 1 is impossible
        // for a continuous P1 field, so check the jump formula directly on
        // the hand example: t = q1.n1 + q2.n2 with n2 = -n1
        let q1 = [1.0, 0.0];
        let q2 = [0.0, 0.0];
        let n1 = [1.0, 0.0];
        let t = dot2(q1, n1) - dot2(q2, n1);
        assert_eq!(t, 1.0);
    }

    #[test]
    fn explicit_indicator_formula() {
        // single interior edge with jump 1 and length l contributes
        // l^2/2 to each adjacent element
        let p = fig1_problem();
        let mesh = Arc::new(unit_square_mesh(1, BcLayout::Fig1).unwrap());
        let space = Arc::new(FeSpace::new(mesh.clone()));
        // u = x on the free (top) vertices only: engineered jump across the
        // diagonal; easier: use the solved problem and check consistency
        let (u, _) = solve(&p, &space).unwrap();
        let data = residual_data(&p, &u);
        let rep = explicit_indicators(&mesh, &data);
        let from_edges: f64 = mesh
            .edges
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                let mult = match edge.elements[1] {
                    Some(_) => 2.0 * 0.5,
                    None if edge.label == BoundaryLabel::Neumann => 1.0,
                    None => 0.0,
                };
                mult * mesh.edge_length(e) * data.t_l2_sq[e]
            })
            .sum();
        assert!((rep.eta * rep.eta - from_edges).abs() < 1e-13); // f = 0 here
        let sum_k: f64 = rep.eta_elements.as_ref().unwrap().iter().sum();
        assert!((sum_k - rep.eta * rep.eta).abs() < 1e-13);
    }

    #[test]
    fn explicit_indicator_rate_on_fig1() {
        let p = fig1_problem();
        let mut etas = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let mesh = Arc::new(unit_square_mesh(n, BcLayout::Fig1).unwrap());
            let space = Arc::new(FeSpace::new(mesh.clone()));
            let (u, _) = solve(&p, &space).unwrap();
            let data = residual_data(&p, &u);
            etas.push(explicit_indicators(&mesh, &data).eta);
        }
        // least-squares slope of log eta vs log h
        let xs: Vec<f64> = [8.0f64, 16.0, 32.0, 64.0].iter().map(|n| (1.0 / n).ln()).collect();
        let ys: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
        let slope = fit_slope(&xs, &ys);
        assert!((slope - 1.0).abs() <= 0.2, "slope {slope}");
    }

    fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn patch_compatibility_and_zero_data() {
        let p = sin_sin_problem();
        let mesh = Arc::new(unit_square_mesh(4, BcLayout::AllDirichlet).unwrap());
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let (u, _) = solve(&p, &space).unwrap();
        let data = residual_data(&p, &u);
        let fnorm = load_norm(&p, &space).unwrap();
        for i in 0..mesh.n_vertices() {
            if space.dirichlet[i] {
                continue;
            }
            let r = residual_of_hat(&p, &u, &data, i).unwrap();
            assert!(r.abs() <= 1e-10 * fnorm, "R(phi_{i}) = {r}");
        }
        // zero residual data -> zero patch solution
        let u0 = FeFunction::zero(Arc::new(FeSpace::new(Arc::new(
            unit_square_mesh(2, BcLayout::AllDirichlet).unwrap(),
        ))));
        let p0 = crate::problems::DiffusionProblem {
            a: crate::problems::Coefficient::identity(),
            f: crate::problems::Source::Zero,
            g: crate::problems::NeumannData::Zero,
            exact: None,
        };
        let d0 = residual_data(&p0, &u0);
        let z = flux_free_patch_solve(&p0, &u0, &d0, 4, 2).unwrap();
        assert!(z.coeffs.iter().all(|&c| c.abs() < 1e-12));
    }

    #[test]
    fn interior_patch_solutions_have_zero_mean() {
        let p = sin_sin_problem();
        let mesh = Arc::new(unit_square_mesh(4, BcLayout::AllDirichlet).unwrap());
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let (u, _) = solve(&p, &space).unwrap();
        let data = residual_data(&p, &u);
        let scale = energy_norm_diff(&p, &u, None).max(1.0);
        for i in 0..mesh.n_vertices() {
            let z = flux_free_patch_solve(&p, &u, &data, i, 2).unwrap();
            if z.zero_mean {
                assert!(z.mean(&mesh).abs() <= 1e-10 * scale, "patch {i}");
            }
        }
    }

    #[test]
    fn flux_free_bounds_bracket_reference_error() {
        let p = sin_sin_problem();
        let mesh = Arc::new(unit_square_mesh(8, BcLayout::AllDirichlet).unwrap());
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let (u, _) = solve(&p, &space).unwrap();
        let patches = flux_free_solve_all(&p, &u, 2).unwrap();
        let upper = flux_free_estimate(&p, &mesh, &patches);
        let lower = flux_free_lower_bound(&p, &u, &patches).unwrap();
        let reference = exact_energy_error(&p, &u).unwrap();
        assert!(
            lower.eta <= reference * (1.0 + 1e-8),
            "lower {} vs ref {}",
            lower.eta,
            reference
        );
        assert!(
            upper.eta >= reference * (1.0 - 1e-8),
            "upper {} vs ref {}",
            upper.eta,
            reference
        );
        assert!(lower.eta <= upper.eta);
        assert!(lower.eta > 0.1 * reference, "lower bound not degenerate");
    }

    #[test]
    fn patch_problems_are_local() {
        let p = fig1_problem();
        let mesh = Arc::new(unit_square_mesh(8, BcLayout::Fig1).unwrap());
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let (u, _) = solve(&p, &space).unwrap();
        let data = residual_data(&p, &u);
        let i = mesh
            .vertices
            .iter()
            .position(|v| (v[0] - 0.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12)
            .unwrap();
        let z_ref = flux_free_patch_solve(&p, &u, &data, i, 2).unwrap();

        // perturb u well outside the patch closure
        let far_free = mesh
            .vertices
            .iter()
            .position(|v| (v[0] - 0.125).abs() < 1e-12 && (v[1] - 0.125).abs() < 1e-12)
            .unwrap();
        assert!(!space.dirichlet[far_free]);
        let mut coeffs = u.coeffs.clone();
        coeffs[far_free] += 0.37;
        let u_pert = FeFunction::from_coeffs(space.clone(), coeffs);
        let data_pert = residual_data(&p, &u_pert);
        let z_pert = flux_free_patch_solve(&p, &u_pert, &data_pert, i, 2).unwrap();
        for (a, b) in z_ref.coeffs.iter().zip(&z_pert.coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn upper_estimate_is_vertex_order_independent() {
        let p = sin_sin_problem();
        let mesh = Arc::new(unit_square_mesh(4, BcLayout::AllDirichlet).unwrap());
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let (u, _) = solve(&p, &space).unwrap();
        let mut patches = flux_free_solve_all(&p, &u, 2).unwrap();
        let eta1 = flux_free_estimate(&p, &mesh, &patches).eta;
        patches.reverse();
        let eta2 = flux_free_estimate(&p, &mesh, &patches).eta;
        assert!((eta1 - eta2).abs() <= 1e-12 * eta1);
    }
}
