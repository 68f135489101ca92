//! Lagrange bases of arbitrary degree on the principal lattice of a triangle,
//! plus continuous enriched spaces over single elements and vertex patches.
//!
//! Basis values use the Silvester node polynomials; gradients come from the
//! chain rule with the constant barycentric gradients of the element.

use crate::mesh::{ElemId, Mesh, VertexId};

/// Lattice multi-index (a,b,c) with a+b+c = degree.
pub type LatticeIndex = (usize, usize, usize);

/// Enumerate lattice indices of a degree-q triangle in a fixed order.
pub fn lattice_indices(q: usize) -> Vec<LatticeIndex> {
    let mut out = Vec::with_capacity((q + 1) * (q + 2) / 2);
    for a in (0..=q).rev() {
        for b in (0..=(q - a)).rev() {
            out.push((a, b, q - a - b));
        }
    }
    out
}

/// Coefficients of the 1D node polynomial P_a(t) = prod_{r<a} (t-r)/(a-r).
fn node_poly(a: usize) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    for r in 0..a {
        let scale = (a - r) as f64;
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] += c / scale;
            next[i] -= c * r as f64 / scale;
        }
        coeffs = next;
    }
    coeffs
}

fn eval_poly(coeffs: &[f64], t: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &c in coeffs.iter().rev() {
        d = d * t + v;
        v = v * t + c;
    }
    (v, d)
}

/// Degree-q scalar Lagrange basis on one triangle.
#[derive(Clone, Debug)]
pub struct TriBasis {
    pub degree: usize,
    pub indices: Vec<LatticeIndex>,
    node_polys: Vec<Vec<f64>>,
}

impl TriBasis {
    pub fn new(degree: usize) -> Self {
        TriBasis {
            degree,
            indices: lattice_indices(degree),
            node_polys: (0..=degree).map(node_poly).collect(),
        }
    }

    pub fn n_basis(&self) -> usize {
        self.indices.len()
    }

    /// Barycentric coordinates of the lattice nodes.
    pub fn node_bary(&self) -> Vec<[f64; 3]> {
        let q = self.degree as f64;
        self.indices
            .iter()
            .map(|&(a, b, c)| [a as f64 / q, b as f64 / q, c as f64 / q])
            .collect()
    }

    /// Values of all basis functions at barycentric point `l`.
    pub fn values(&self, l: [f64; 3]) -> Vec<f64> {
        let q = self.degree as f64;
        self.indices
            .iter()
            .map(|&(a, b, c)| {
                eval_poly(&self.node_polys[a], q * l[0]).0
                    * eval_poly(&self.node_polys[b], q * l[1]).0
                    * eval_poly(&self.node_polys[c], q * l[2]).0
            })
            .collect()
    }

    /// Physical gradients of all basis functions at barycentric point `l`,
    /// given the hat gradients (= barycentric gradients) of the element.
    pub fn gradients(&self, l: [f64; 3], hat_grads: &[[f64; 2]; 3]) -> Vec<[f64; 2]> {
        let q = self.degree as f64;
        self.indices
            .iter()
            .map(|&(a, b, c)| {
                let (va, da) = eval_poly(&self.node_polys[a], q * l[0]);
                let (vb, db) = eval_poly(&self.node_polys[b], q * l[1]);
                let (vc, dc) = eval_poly(&self.node_polys[c], q * l[2]);
                let mut g = [0.0; 2];
                for d in 0..2 {
                    g[d] = q
                        * (da * vb * vc * hat_grads[0][d]
                            + va * db * vc * hat_grads[1][d]
                            + va * vb * dc * hat_grads[2][d]);
                }
                g
            })
            .collect()
    }
}

/// Global node of an enriched continuous space over a set of triangles.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum NodeKey {
    Vertex(VertexId),
    /// Edge-interior node: sorted endpoints plus step index 1..q-1 counted
    /// from the lower vertex id.
    Edge(VertexId, VertexId, usize),
    /// Element-interior lattice node.
    Interior(ElemId, usize, usize),
}

/// Continuous degree-q Lagrange space on a subset of elements of a mesh.
#[derive(Clone, Debug)]
pub struct SubmeshSpace {
    pub degree: usize,
    pub elements: Vec<ElemId>,
    pub basis: TriBasis,
    pub nodes: Vec<NodeKey>,
    /// For each local element: global node index of every lattice basis function.
    pub elem_nodes: Vec<Vec<usize>>,
}

impl SubmeshSpace {
    pub fn new(mesh: &Mesh, elements: &[ElemId], degree: usize) -> Self {
        let basis = TriBasis::new(degree);
        let mut keys: Vec<NodeKey> = Vec::new();
        let mut elem_nodes = Vec::with_capacity(elements.len());
        for &k in elements {
            let tri = mesh.triangles[k];
            let mut local = Vec::with_capacity(basis.n_basis());
            for &(a, b, c) in &basis.indices {
                let key = Self::classify(tri, k, degree, (a, b, c));
                local.push(key);
            }
            elem_nodes.push(local);
        }
        // deterministic global numbering
        let mut all: Vec<NodeKey> = elem_nodes.iter().flatten().copied().collect();
        all.sort();
        all.dedup();
        keys.extend(all);
        let index_of = |key: &NodeKey| keys.binary_search(key).expect("node key registered");
        let elem_nodes = elem_nodes
            .into_iter()
            .map(|local| local.iter().map(&index_of).collect())
            .collect();
        SubmeshSpace {
            degree,
            elements: elements.to_vec(),
            basis,
            nodes: keys,
            elem_nodes,
        }
    }

    fn classify(tri: [VertexId; 3], k: ElemId, q: usize, idx: LatticeIndex) -> NodeKey {
        let (a, b, c) = idx;
        let bary = [a, b, c];
        let zero: Vec<usize> = (0..3).filter(|&j| bary[j] == 0).collect();
        match zero.len() {
            2 => {
                let j = (0..3).find(|&j| bary[j] == q).unwrap();
                NodeKey::Vertex(tri[j])
            }
            1 => {
                // node interior to the edge opposite vertex zero[0]
                let skip = zero[0];
                let (j1, j2) = match skip {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let (v1, v2) = (tri[j1], tri[j2]);
                let steps_from_j1 = bary[j2]; // counts toward v2
                if v1 < v2 {
                    NodeKey::Edge(v1, v2, steps_from_j1)
                } else {
                    NodeKey::Edge(v2, v1, q - steps_from_j1)
                }
            }
            _ => NodeKey::Interior(k, a, b),
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes.len()
    }

    /// Physical coordinates of every global node.
    pub fn node_coords(&self, mesh: &Mesh) -> Vec<[f64; 2]> {
        let mut out = vec![[f64::NAN; 2]; self.n_dofs()];
        let bary = self.basis.node_bary();
        for (lk, &k) in self.elements.iter().enumerate() {
            let v = mesh.elem_vertices(k);
            for (j, &g) in self.elem_nodes[lk].iter().enumerate() {
                let l = bary[j];
                out[g] = [
                    l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
                    l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
                ];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_square_mesh, BcLayout};
    use crate::quad::TriRule;

    #[test]
    fn partition_of_unity_and_delta_property() {
        for q in 1..=4usize {
            let basis = TriBasis::new(q);
            let nodes = basis.node_bary();
            for (i, &l) in nodes.iter().enumerate() {
                let vals = basis.values(l);
                for (j, v) in vals.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-12, "q={q} delta failed");
                }
            }
            let vals = basis.values([0.3, 0.25, 0.45]);
            let sum: f64 = vals.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_reproduce_affine_fields() {
        let mesh = unit_square_mesh(1, BcLayout::AllDirichlet).unwrap();
        let hat = mesh.hat_gradients(0);
        let v = mesh.elem_vertices(0);
        for q in 1..=4usize {
            let basis = TriBasis::new(q);
            // interpolate w(x,y) = 3x - 2y + 1 at the nodes
            let coeffs: Vec<f64> = basis
                .node_bary()
                .iter()
                .map(|l| {
                    let x = l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0];
                    let y = l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1];
                    3.0 * x - 2.0 * y + 1.0
                })
                .collect();
            let l = [0.2, 0.5, 0.3];
            let grads = basis.gradients(l, &hat);
            let gx: f64 = coeffs.iter().zip(&grads).map(|(c, g)| c * g[0]).sum();
            let gy: f64 = coeffs.iter().zip(&grads).map(|(c, g)| c * g[1]).sum();
            assert!((gx - 3.0).abs() < 1e-11, "q={q}");
            assert!((gy + 2.0).abs() < 1e-11, "q={q}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = unit_square_mesh(2, BcLayout::AllDirichlet).unwrap();
        let k = 3;
        let hat = mesh.hat_gradients(k);
        let v = mesh.elem_vertices(k);
        let basis = TriBasis::new(3);
        // barycentric coordinates of a physical point
        let bary_of = |p: [f64; 2]| {
            let a2 = 2.0 * mesh.elem_area(k);
            let l0 = ((v[1][0] - p[0]) * (v[2][1] - p[1]) - (v[1][1] - p[1]) * (v[2][0] - p[0])) / a2;
            let l1 = ((v[2][0] - p[0]) * (v[0][1] - p[1]) - (v[2][1] - p[1]) * (v[0][0] - p[0])) / a2;
            [l0, l1, 1.0 - l0 - l1]
        };
        let p = [
            0.25 * v[0][0] + 0.4 * v[1][0] + 0.35 * v[2][0],
            0.25 * v[0][1] + 0.4 * v[1][1] + 0.35 * v[2][1],
        ];
        let grads = basis.gradients(bary_of(p), &hat);
        let h = 1e-6;
        for j in 0..basis.n_basis() {
            let fxp = basis.values(bary_of([p[0] + h, p[1]]))[j];
            let fxm = basis.values(bary_of([p[0] - h, p[1]]))[j];
            let fyp = basis.values(bary_of([p[0], p[1] + h]))[j];
            let fym = basis.values(bary_of([p[0], p[1] - h]))[j];
            assert!(((fxp - fxm) / (2.0 * h) - grads[j][0]).abs() < 1e-5);
            assert!(((fyp - fym) / (2.0 * h) - grads[j][1]).abs() < 1e-5);
        }
    }

    #[test]
    fn submesh_space_shares_edge_nodes() {
        let mesh = unit_square_mesh(2, BcLayout::AllDirichlet).unwrap();
        let center = mesh
            .vertices
            .iter()
            .position(|v| (v[0] - 0.5).abs() < 1e-14 && (v[1] - 0.5).abs() < 1e-14)
            .unwrap();
        let patch = mesh.vertex_patch(center).unwrap().to_vec();
        let space = SubmeshSpace::new(&mesh, &patch, 3);
        // continuous P3 on a 6-triangle hexagonal patch:
        // 7 vertices + 12 edges x 2 + 6 interiors = 49 dofs
        assert_eq!(space.n_dofs(), 7 + 12 * 2 + 6);
        // node coordinates must be consistent across elements
        let coords = space.node_coords(&mesh);
        assert!(coords.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
    }

    #[test]
    fn interpolation_is_exact_for_matching_degree() {
        // integrate a P3 interpolant of x^2 y against quadrature and compare
        let mesh = unit_square_mesh(1, BcLayout::AllDirichlet).unwrap();
        let space = SubmeshSpace::new(&mesh, &[0, 1], 3);
        let coords = space.node_coords(&mesh);
        let f = |p: [f64; 2]| p[0] * p[0] * p[1];
        let coeffs: Vec<f64> = coords.iter().map(|&c| f(c)).collect();
        let rule = TriRule::with_degree(5);
        let mut total = 0.0;
        for (lk, &k) in space.elements.iter().enumerate() {
            let area = mesh.elem_area(k);
            for pt in &rule.points {
                let vals = space.basis.values(pt.bary);
                let interp: f64 = space.elem_nodes[lk]
                    .iter()
                    .zip(&vals)
                    .map(|(&g, bv)| coeffs[g] * bv)
                    .sum();
                total += pt.weight * area * interp;
            }
        }
        // integral of x^2 y over unit square = 1/6
        assert!((total - 1.0 / 6.0).abs() < 1e-12);
    }
}
