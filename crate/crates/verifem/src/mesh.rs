//! Conforming 2D triangulations with oriented edges, boundary labels,
//! patch/neighborhood queries and conforming refinement.
//!
//! Triangles are stored counterclockwise. Local vertex 0 is the bisection
//! peak: the refinement edge is the one between local vertices 1 and 2.
//! Element and edge ids follow creation order, which fixes the edge
//! orientation signs deterministically.

use std::collections::HashMap;

use crate::error::VerifemError;

pub type VertexId = usize;
pub type ElemId = usize;
pub type EdgeId = usize;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BoundaryLabel {
    Interior,
    Dirichlet,
    Neumann,
}

/// Mesh edge: sorted vertex pair, adjacent elements (lower id first) and label.
#[derive(Clone, Debug)]
pub struct Edge {
    pub vertices: [VertexId; 2],
    pub elements: [Option<ElemId>; 2],
    pub label: BoundaryLabel,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.elements[1].is_none()
    }
}

/// Named boundary layouts for the built-in rectangular meshes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BcLayout {
    /// Every boundary edge Dirichlet.
    AllDirichlet,
    /// Neumann on the top side (y = 1), Dirichlet elsewhere.
    Fig1,
}

impl BcLayout {
    pub fn parse(name: &str) -> Result<Self, VerifemError> {
        match name {
            "all_dirichlet" => Ok(BcLayout::AllDirichlet),
            "fig1" => Ok(BcLayout::Fig1),
            other => Err(VerifemError::Input(format!("unknown bc_layout '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// CCW vertex triples; local vertex 0 is the refinement peak.
    pub triangles: Vec<[VertexId; 3]>,
    pub edges: Vec<Edge>,
    /// Parent element in the mesh this one was refined from (self id on roots).
    pub parent: Vec<ElemId>,
    /// Edge ids per element, `tri_edges[k][j]` joins local vertices j and (j+1)%3.
    pub tri_edges: Vec<[EdgeId; 3]>,
    vertex_elems: Vec<Vec<ElemId>>,
}

/// Mesh-size and shape-regularity summary.
#[derive(Clone, Debug)]
pub struct MeshQuality {
    pub h: f64,
    pub h_elem: Vec<f64>,
    pub rho_elem: Vec<f64>,
    pub gamma0: f64,
}

/// Provenance of a vertex of a refined mesh.
#[derive(Clone, Copy, Debug)]
pub enum VertexOrigin {
    Coarse(VertexId),
    EdgeMid(VertexId, VertexId),
}

/// A refined mesh together with the data needed for exact P1 prolongation.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub mesh: Mesh,
    pub vertex_origin: Vec<VertexOrigin>,
}

impl Refinement {
    /// Exact prolongation of nodal values from the coarse mesh.
    pub fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        self.vertex_origin
            .iter()
            .map(|o| match *o {
                VertexOrigin::Coarse(v) => coarse[v],
                VertexOrigin::EdgeMid(a, b) => 0.5 * (coarse[a] + coarse[b]),
            })
            .collect()
    }
}

fn cross(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Source of boundary labels when building a mesh.
enum EdgeLabels<'a> {
    ByCoord(&'a dyn Fn([f64; 2], [f64; 2]) -> BoundaryLabel),
    ByPair(&'a HashMap<(VertexId, VertexId), BoundaryLabel>),
}

impl Mesh {
    /// Build a mesh from raw triangles (CCW, peak-first ordering already applied).
    ///
    /// `label_of` assigns a label to each boundary edge from its endpoints.
    pub fn from_triangles(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[VertexId; 3]>,
        parent: Vec<ElemId>,
        label_of: impl Fn([f64; 2], [f64; 2]) -> BoundaryLabel,
    ) -> Result<Self, VerifemError> {
        Self::build(vertices, triangles, parent, EdgeLabels::ByCoord(&label_of))
    }

    fn build(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[VertexId; 3]>,
        parent: Vec<ElemId>,
        labels: EdgeLabels<'_>,
    ) -> Result<Self, VerifemError> {
        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_index: HashMap<(VertexId, VertexId), EdgeId> = HashMap::new();
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];

        for (k, tri) in triangles.iter().enumerate() {
            let v = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let area2 = cross(v[0], v[1], v[2]);
            if area2 <= 0.0 {
                return Err(VerifemError::Input(format!(
                    "triangle {k} has non-positive area {}",
                    0.5 * area2
                )));
            }
            for j in 0..3 {
                let a = tri[j];
                let b = tri[(j + 1) % 3];
                let key = (a.min(b), a.max(b));
                let id = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        elements: [None, None],
                        label: BoundaryLabel::Interior,
                    });
                    edges.len() - 1
                });
                let e = &mut edges[id];
                if e.elements[0].is_none() {
                    e.elements[0] = Some(k);
                } else if e.elements[1].is_none() {
                    e.elements[1] = Some(k);
                } else {
                    return Err(VerifemError::Input(format!(
                        "edge ({},{}) shared by more than two triangles",
                        key.0, key.1
                    )));
                }
                tri_edges[k][j] = id;
            }
        }

        let mut n_dirichlet = 0usize;
        for e in edges.iter_mut() {
            if e.elements[1].is_none() {
                let label = match labels {
                    EdgeLabels::ByCoord(f) => {
                        f(vertices[e.vertices[0]], vertices[e.vertices[1]])
                    }
                    EdgeLabels::ByPair(map) => {
                        *map.get(&(e.vertices[0], e.vertices[1])).ok_or_else(|| {
                            VerifemError::Numerical(format!(
                                "boundary edge ({},{}) lost its label during refinement",
                                e.vertices[0], e.vertices[1]
                            ))
                        })?
                    }
                };
                if label == BoundaryLabel::Interior {
                    return Err(VerifemError::Input(
                        "boundary edge labeled interior".into(),
                    ));
                }
                e.label = label;
                if label == BoundaryLabel::Dirichlet {
                    n_dirichlet += 1;
                }
            }
        }
        if n_dirichlet == 0 {
            return Err(VerifemError::Input(
                "mesh has no Dirichlet boundary edge".into(),
            ));
        }

        let mut vertex_elems = vec![Vec::new(); vertices.len()];
        for (k, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_elems[v].push(k);
            }
        }

        Ok(Mesh {
            vertices,
            triangles,
            edges,
            parent,
            tri_edges,
            vertex_elems,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn elem_vertices(&self, k: ElemId) -> [[f64; 2]; 3] {
        let t = self.triangles[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn elem_area(&self, k: ElemId) -> f64 {
        let v = self.elem_vertices(k);
        0.5 * cross(v[0], v[1], v[2])
    }

    /// Constant P1 hat gradients on element `k`, ordered like its vertices.
    pub fn hat_gradients(&self, k: ElemId) -> [[f64; 2]; 3] {
        let v = self.elem_vertices(k);
        let a2 = cross(v[0], v[1], v[2]); // 2*area
        let mut g = [[0.0; 2]; 3];
        for j in 0..3 {
            let p = v[(j + 1) % 3];
            let q = v[(j + 2) % 3];
            g[j] = [(p[1] - q[1]) / a2, (q[0] - p[0]) / a2];
        }
        g
    }

    pub fn edge_length(&self, e: EdgeId) -> f64 {
        let [a, b] = self.edges[e].vertices;
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt()
    }

    /// Outward unit normal of edge `e` with respect to element `k`.
    pub fn outward_normal(&self, e: EdgeId, k: ElemId) -> [f64; 2] {
        let [a, b] = self.edges[e].vertices;
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let t = [pb[0] - pa[0], pb[1] - pa[1]];
        let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
        let mut n = [t[1] / len, -t[0] / len];
        // orient away from the opposite vertex
        let tri = self.triangles[k];
        let opp = tri
            .iter()
            .copied()
            .find(|v| *v != a && *v != b)
            .expect("edge not part of element");
        let po = self.vertices[opp];
        let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        if (mid[0] - po[0]) * n[0] + (mid[1] - po[1]) * n[1] < 0.0 {
            n = [-n[0], -n[1]];
        }
        n
    }

    /// Edge orientation sign: +1 for the lower-ordered adjacent element
    /// (and on all boundary edges), -1 for the higher-ordered one.
    pub fn sigma(&self, e: EdgeId, k: ElemId) -> f64 {
        let edge = &self.edges[e];
        match edge.elements {
            [Some(k0), Some(_)] if k0 == k => 1.0,
            [Some(_), Some(k1)] if k1 == k => -1.0,
            [Some(k0), None] if k0 == k => 1.0,
            _ => panic!("element {k} not adjacent to edge {e}"),
        }
    }

    /// Elements having vertex `i`, in increasing element order.
    pub fn vertex_patch(&self, i: VertexId) -> Result<&[ElemId], VerifemError> {
        self.vertex_elems
            .get(i)
            .map(|v| v.as_slice())
            .ok_or_else(|| VerifemError::Input(format!("invalid vertex id {i}")))
    }

    /// All elements sharing at least one vertex with `k`, including `k`.
    pub fn element_neighborhood(&self, k: ElemId) -> Result<Vec<ElemId>, VerifemError> {
        if k >= self.n_elements() {
            return Err(VerifemError::Input(format!("invalid element id {k}")));
        }
        let mut out: Vec<ElemId> = Vec::new();
        for &v in &self.triangles[k] {
            out.extend_from_slice(&self.vertex_elems[v]);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn quality(&self) -> MeshQuality {
        let mut h_elem = Vec::with_capacity(self.n_elements());
        let mut rho_elem = Vec::with_capacity(self.n_elements());
        let mut gamma0: f64 = 0.0;
        let mut h: f64 = 0.0;
        for k in 0..self.n_elements() {
            let v = self.elem_vertices(k);
            let mut lens = [0.0f64; 3];
            for j in 0..3 {
                let p = v[j];
                let q = v[(j + 1) % 3];
                lens[j] = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            }
            let hk = lens.iter().cloned().fold(0.0, f64::max);
            let perim: f64 = lens.iter().sum();
            let rho = 4.0 * self.elem_area(k) / perim;
            h = h.max(hk);
            gamma0 = gamma0.max(hk / rho);
            h_elem.push(hk);
            rho_elem.push(rho);
        }
        MeshQuality { h, h_elem, rho_elem, gamma0 }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|k| self.elem_area(k)).sum()
    }

    /// Dirichlet vertices: endpoints of Dirichlet edges.
    pub fn dirichlet_vertices(&self) -> Vec<bool> {
        let mut flag = vec![false; self.n_vertices()];
        for e in &self.edges {
            if e.label == BoundaryLabel::Dirichlet {
                flag[e.vertices[0]] = true;
                flag[e.vertices[1]] = true;
            }
        }
        flag
    }

    /// Newest-vertex bisection of `marked` elements plus conforming closure.
    pub fn refine(&self, marked: &[ElemId]) -> Result<Refinement, VerifemError> {
        for &k in marked {
            if k >= self.n_elements() {
                return Err(VerifemError::Input(format!("invalid element id {k}")));
            }
        }
        let mut vertices = self.vertices.clone();
        let mut vertex_origin: Vec<VertexOrigin> =
            (0..vertices.len()).map(VertexOrigin::Coarse).collect();

        // Working triangle soup; dead parents are tombstoned.
        #[derive(Clone, Copy)]
        struct Tri {
            v: [VertexId; 3],
            root: ElemId, // ancestor in `self`
            alive: bool,
        }
        let mut tris: Vec<Tri> = self
            .triangles
            .iter()
            .enumerate()
            .map(|(k, &v)| Tri { v, root: k, alive: true })
            .collect();

        // Labels of current boundary edges, maintained under splitting.
        let mut boundary_labels: HashMap<(VertexId, VertexId), BoundaryLabel> = HashMap::new();
        for e in &self.edges {
            if e.is_boundary() {
                boundary_labels.insert((e.vertices[0], e.vertices[1]), e.label);
            }
        }

        let mut midpoints: HashMap<(VertexId, VertexId), VertexId> = HashMap::new();

        let bisect = |t: usize,
                          tris: &mut Vec<Tri>,
                          vertices: &mut Vec<[f64; 2]>,
                          vertex_origin: &mut Vec<VertexOrigin>,
                          midpoints: &mut HashMap<(VertexId, VertexId), VertexId>,
                          boundary_labels: &mut HashMap<(VertexId, VertexId), BoundaryLabel>| {
            let Tri { v: [p, a, b], root, .. } = tris[t];
            let key = (a.min(b), a.max(b));
            let m = *midpoints.entry(key).or_insert_with(|| {
                let pa = vertices[a];
                let pb = vertices[b];
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                vertex_origin.push(VertexOrigin::EdgeMid(a, b));
                if let Some(label) = boundary_labels.remove(&key) {
                    let id = vertices.len() - 1;
                    boundary_labels.insert((a.min(id), a.max(id)), label);
                    boundary_labels.insert((b.min(id), b.max(id)), label);
                }
                vertices.len() - 1
            });
            tris[t].alive = false;
            tris.push(Tri { v: [m, p, a], root, alive: true });
            tris.push(Tri { v: [m, b, p], root, alive: true });
        };

        if marked.is_empty() {
            return Ok(Refinement {
                mesh: self.clone(),
                vertex_origin,
            });
        }

        let mut seed: Vec<usize> = marked.to_vec();
        seed.sort_unstable();
        seed.dedup();
        for t in seed {
            bisect(
                t,
                &mut tris,
                &mut vertices,
                &mut vertex_origin,
                &mut midpoints,
                &mut boundary_labels,
            );
        }

        // Conforming closure: bisect any live triangle with a hanging midpoint.
        let mut guard = 0usize;
        loop {
            let mut offenders: Vec<usize> = Vec::new();
            for (t, tri) in tris.iter().enumerate() {
                if !tri.alive {
                    continue;
                }
                for j in 0..3 {
                    let a = tri.v[j];
                    let b = tri.v[(j + 1) % 3];
                    if midpoints.contains_key(&(a.min(b), a.max(b))) {
                        offenders.push(t);
                        break;
                    }
                }
            }
            if offenders.is_empty() {
                break;
            }
            for t in offenders {
                if tris[t].alive {
                    bisect(
                        t,
                        &mut tris,
                        &mut vertices,
                        &mut vertex_origin,
                        &mut midpoints,
                        &mut boundary_labels,
                    );
                }
            }
            guard += 1;
            if guard > 64 * self.n_elements() + 64 {
                return Err(VerifemError::Numerical(
                    "bisection closure did not terminate".into(),
                ));
            }
        }

        let mut triangles = Vec::new();
        let mut parent = Vec::new();
        for tri in &tris {
            if tri.alive {
                triangles.push(tri.v);
                parent.push(tri.root);
            }
        }
        let mesh = Mesh::build(
            vertices,
            triangles,
            parent,
            EdgeLabels::ByPair(&boundary_labels),
        )?;
        Ok(Refinement { mesh, vertex_origin })
    }

    /// Red refinement: every triangle split into 4 congruent children.
    pub fn uniform_refine(&self) -> Result<Refinement, VerifemError> {
        let mut vertices = self.vertices.clone();
        let mut vertex_origin: Vec<VertexOrigin> =
            (0..vertices.len()).map(VertexOrigin::Coarse).collect();
        let mut midpoints: HashMap<(VertexId, VertexId), VertexId> = HashMap::new();
        let mut boundary_labels: HashMap<(VertexId, VertexId), BoundaryLabel> = HashMap::new();
        for e in &self.edges {
            if e.is_boundary() {
                boundary_labels.insert((e.vertices[0], e.vertices[1]), e.label);
            }
        }

        let mut triangles = Vec::with_capacity(4 * self.n_elements());
        let mut parent = Vec::with_capacity(4 * self.n_elements());
        for (k, tri) in self.triangles.iter().enumerate() {
            let mut mid = [0usize; 3];
            for j in 0..3 {
                let a = tri[j];
                let b = tri[(j + 1) % 3];
                let key = (a.min(b), a.max(b));
                mid[j] = *midpoints.entry(key).or_insert_with(|| {
                    let pa = vertices[a];
                    let pb = vertices[b];
                    vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                    vertex_origin.push(VertexOrigin::EdgeMid(a, b));
                    if let Some(label) = boundary_labels.remove(&key) {
                        let id = vertices.len() - 1;
                        boundary_labels.insert((a.min(id), a.max(id)), label);
                        boundary_labels.insert((b.min(id), b.max(id)), label);
                    }
                    vertices.len() - 1
                });
            }
            // corner children + central child, all CCW
            let children = [
                [tri[0], mid[0], mid[2]],
                [tri[1], mid[1], mid[0]],
                [tri[2], mid[2], mid[1]],
                [mid[0], mid[1], mid[2]],
            ];
            for c in children {
                triangles.push(peak_first(&vertices, c));
                parent.push(k);
            }
        }

        let mesh = Mesh::build(
            vertices,
            triangles,
            parent,
            EdgeLabels::ByPair(&boundary_labels),
        )?;
        Ok(Refinement { mesh, vertex_origin })
    }
}

/// Reorder a CCW triangle so that the longest edge is opposite local vertex 0.
fn peak_first(vertices: &[[f64; 2]], tri: [VertexId; 3]) -> [VertexId; 3] {
    let mut best = 0usize;
    let mut best_len = -1.0f64;
    for j in 0..3 {
        let p = vertices[tri[(j + 1) % 3]];
        let q = vertices[tri[(j + 2) % 3]];
        let len = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if len > best_len + 1e-15 * best_len.abs() {
            best_len = len;
            best = j;
        }
    }
    [tri[best], tri[(best + 1) % 3], tri[(best + 2) % 3]]
}

/// Structured triangulation of the unit square with `2 n^2` elements.
///
/// Each grid cell is split along its lower-left to upper-right diagonal.
pub fn unit_square_mesh(n: usize, bc: BcLayout) -> Result<Mesh, VerifemError> {
    if n < 1 {
        return Err(VerifemError::Input("subdivision count must be >= 1".into()));
    }
    let vid = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v01 = vid(i, j + 1);
            let v11 = vid(i + 1, j + 1);
            // diagonal v00-v11 is the longest edge: peak opposite it
            triangles.push([v10, v11, v00]);
            triangles.push([v01, v00, v11]);
        }
    }
    let parent = (0..triangles.len()).collect();
    Mesh::from_triangles(vertices, triangles, parent, move |a, b| match bc {
        BcLayout::AllDirichlet => BoundaryLabel::Dirichlet,
        BcLayout::Fig1 => {
            if a[1] > 1.0 - 1e-12 && b[1] > 1.0 - 1e-12 {
                BoundaryLabel::Neumann
            } else {
                BoundaryLabel::Dirichlet
            }
        }
    })
}

/// L-shaped domain `(-1,1)^2` minus the quadrant `[0,1) x (-1,0]`.
///
/// The two boundary legs meeting the re-entrant corner at the origin are
/// Dirichlet, the remaining boundary is Neumann. `n` cells per unit length.
pub fn l_shape_mesh(n: usize) -> Result<Mesh, VerifemError> {
    if n < 1 {
        return Err(VerifemError::Input("subdivision count must be >= 1".into()));
    }
    let m = 2 * n; // cells per side of the bounding square
    let coord = |i: usize| -1.0 + i as f64 / n as f64;
    let mut vid_map = vec![usize::MAX; (m + 1) * (m + 1)];
    let mut vertices = Vec::new();
    for j in 0..=m {
        for i in 0..=m {
            let x = coord(i);
            let y = coord(j);
            // drop grid points strictly inside the removed quadrant
            if x > 1e-12 && y < -1e-12 {
                continue;
            }
            vid_map[j * (m + 1) + i] = vertices.len();
            vertices.push([x, y]);
        }
    }
    let vid = |i: usize, j: usize| vid_map[j * (m + 1) + i];
    let mut triangles = Vec::new();
    for j in 0..m {
        for i in 0..m {
            let xc = coord(i) + 0.5 / n as f64;
            let yc = coord(j) + 0.5 / n as f64;
            if xc > 0.0 && yc < 0.0 {
                continue;
            }
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v01 = vid(i, j + 1);
            let v11 = vid(i + 1, j + 1);
            triangles.push([v10, v11, v00]);
            triangles.push([v01, v00, v11]);
        }
    }
    let parent = (0..triangles.len()).collect();
    Mesh::from_triangles(vertices, triangles, parent, |a, b| {
        let on_leg_x = a[0].abs() < 1e-12 && b[0].abs() < 1e-12 && a[1] < 1e-12 && b[1] < 1e-12;
        let on_leg_y = a[1].abs() < 1e-12 && b[1].abs() < 1e-12 && a[0] > -1e-12 && b[0] > -1e-12;
        if on_leg_x || on_leg_y {
            BoundaryLabel::Dirichlet
        } else {
            BoundaryLabel::Neumann
        }
    })
}
