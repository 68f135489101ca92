//! Diffusion problem data: coefficient, source, Neumann data, and optional
//! exact solutions for verification, plus the built-in benchmark problems.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::VerifemError;
use crate::mesh::{BcLayout, ElemId, Mesh, Refinement};
use crate::quad::TriRule;

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;

/// Symmetric positive definite 2x2 coefficient, possibly element-wise constant.
#[derive(Clone)]
pub enum Coefficient {
    Uniform([[f64; 2]; 2]),
    PerElement(Vec<[[f64; 2]; 2]>),
}

impl Coefficient {
    pub fn identity() -> Self {
        Coefficient::Uniform([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn at(&self, k: ElemId) -> [[f64; 2]; 2] {
        match self {
            Coefficient::Uniform(m) => *m,
            Coefficient::PerElement(v) => v[k],
        }
    }

    pub fn inverse_at(&self, k: ElemId) -> [[f64; 2]; 2] {
        let m = self.at(k);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ]
    }
}

#[derive(Clone)]
pub enum Source {
    Zero,
    Constant(f64),
    PerElement(Vec<f64>),
    Pointwise(ScalarFn),
}

impl Source {
    pub fn is_element_constant(&self) -> bool {
        !matches!(self, Source::Pointwise(_))
    }

    /// Constant value on element `k`; only valid for element-constant sources.
    pub fn element_value(&self, k: ElemId) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::Constant(c) => *c,
            Source::PerElement(v) => v[k],
            Source::Pointwise(_) => panic!("pointwise source has no element value"),
        }
    }

    pub fn eval(&self, k: ElemId, x: f64, y: f64) -> f64 {
        match self {
            Source::Pointwise(f) => f(x, y),
            other => other.element_value(k),
        }
    }
}

#[derive(Clone)]
pub enum NeumannData {
    Zero,
    Pointwise(ScalarFn),
}

impl NeumannData {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            NeumannData::Zero => 0.0,
            NeumannData::Pointwise(f) => f(x, y),
        }
    }
}

#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarFn,
    pub gradient: VectorFn,
    /// Point where the gradient is singular; reference integrals grade
    /// their quadrature toward it.
    pub singular_point: Option<[f64; 2]>,
}

#[derive(Clone)]
pub struct DiffusionProblem {
    pub a: Coefficient,
    pub f: Source,
    pub g: NeumannData,
    pub exact: Option<ExactSolution>,
}

impl DiffusionProblem {
    /// Transport element-wise data onto a refinement of the mesh it was
    /// defined on (children inherit their parent's constants).
    pub fn for_refinement(&self, refinement: &Refinement) -> DiffusionProblem {
        let map = |k: ElemId| refinement.mesh.parent[k];
        let a = match &self.a {
            Coefficient::Uniform(m) => Coefficient::Uniform(*m),
            Coefficient::PerElement(v) => Coefficient::PerElement(
                (0..refinement.mesh.n_elements()).map(|k| v[map(k)]).collect(),
            ),
        };
        let f = match &self.f {
            Source::PerElement(v) => Source::PerElement(
                (0..refinement.mesh.n_elements()).map(|k| v[map(k)]).collect(),
            ),
            other => other.clone(),
        };
        DiffusionProblem {
            a,
            f,
            g: self.g.clone(),
            exact: self.exact.clone(),
        }
    }

    /// Replace the source by its element-wise mean. The mean uses the same
    /// degree-5 rule as the assembled load, so the projected data is exactly
    /// consistent with loads already computed from the original source.
    /// Returns the projected problem and the defect `||f - f_bar||_0`.
    pub fn with_projected_source(&self, mesh: &Mesh) -> (DiffusionProblem, f64) {
        if self.f.is_element_constant() {
            return (self.clone(), 0.0);
        }
        let rule5 = TriRule::with_degree(5);
        let rule10 = TriRule::with_degree(10);
        let mut values = Vec::with_capacity(mesh.n_elements());
        let mut defect2 = 0.0;
        for k in 0..mesh.n_elements() {
            let v = mesh.elem_vertices(k);
            let area = mesh.elem_area(k);
            let mean: f64 = rule5
                .points
                .iter()
                .map(|p| {
                    let [x, y] = TriRule::physical(p, &v);
                    p.weight * self.f.eval(k, x, y)
                })
                .sum();
            values.push(mean);
            defect2 += rule10
                .points
                .iter()
                .map(|p| {
                    let [x, y] = TriRule::physical(p, &v);
                    p.weight * area * (self.f.eval(k, x, y) - mean).powi(2)
                })
                .sum::<f64>();
        }
        (
            DiffusionProblem {
                a: self.a.clone(),
                f: Source::PerElement(values),
                g: self.g.clone(),
                exact: self.exact.clone(),
            },
            defect2.sqrt(),
        )
    }
}

/// Built-in benchmark problems.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ProblemKind {
    SinSin,
    Fig1Square,
    LShapeSingular,
}

impl ProblemKind {
    pub fn parse(name: &str) -> Result<Self, VerifemError> {
        match name {
            "sin_sin" => Ok(ProblemKind::SinSin),
            "fig1_square" => Ok(ProblemKind::Fig1Square),
            "lshape_singular" => Ok(ProblemKind::LShapeSingular),
            other => Err(VerifemError::Input(format!("unknown problem '{other}'"))),
        }
    }

    pub fn mesh(&self, n: usize) -> Result<Mesh, VerifemError> {
        match self {
            ProblemKind::SinSin => crate::mesh::unit_square_mesh(n, BcLayout::AllDirichlet),
            ProblemKind::Fig1Square => crate::mesh::unit_square_mesh(n, BcLayout::Fig1),
            ProblemKind::LShapeSingular => crate::mesh::l_shape_mesh(n),
        }
    }

    pub fn problem(&self) -> DiffusionProblem {
        match self {
            ProblemKind::SinSin => sin_sin_problem(),
            ProblemKind::Fig1Square => fig1_problem(),
            ProblemKind::LShapeSingular => l_shape_problem(),
        }
    }
}

/// `u = sin(pi x) sin(pi y)` on the unit square, homogeneous Dirichlet.
pub fn sin_sin_problem() -> DiffusionProblem {
    let value: ScalarFn = Arc::new(|x, y| (PI * x).sin() * (PI * y).sin());
    let gradient: VectorFn = Arc::new(|x, y| {
        [
            PI * (PI * x).cos() * (PI * y).sin(),
            PI * (PI * x).sin() * (PI * y).cos(),
        ]
    });
    DiffusionProblem {
        a: Coefficient::identity(),
        f: Source::Pointwise(Arc::new(|x, y| {
            2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
        })),
        g: NeumannData::Zero,
        exact: Some(ExactSolution {
            value,
            gradient,
            singular_point: None,
        }),
    }
}

/// Laplace problem on the unit square with unit Neumann flux on the top side
/// and homogeneous Dirichlet elsewhere. The exact solution is the sine
/// series `sum_{k odd} 4/(k^2 pi^2 cosh(k pi)) sin(k pi x) sinh(k pi y)`.
pub fn fig1_problem() -> DiffusionProblem {
    let value: ScalarFn = Arc::new(|x, y| fig1_series(x, y).0);
    let gradient: VectorFn = Arc::new(|x, y| {
        let (_, gx, gy) = fig1_series(x, y);
        [gx, gy]
    });
    DiffusionProblem {
        a: Coefficient::identity(),
        f: Source::Zero,
        g: NeumannData::Pointwise(Arc::new(|_, _| 1.0)),
        exact: Some(ExactSolution {
            value,
            gradient,
            singular_point: None,
        }),
    }
}

/// Series evaluation of the fig1 solution: (u, du/dx, du/dy).
///
/// Hyperbolic ratios are computed in exponential form so large arguments do
/// not overflow; the series is truncated once the exponential damping makes
/// further terms irrelevant.
fn fig1_series(x: f64, y: f64) -> (f64, f64, f64) {
    let mut u = 0.0;
    let mut gx = 0.0;
    let mut gy = 0.0;
    let mut k = 1u64;
    loop {
        let kp = k as f64 * PI;
        // sinh(k pi y)/cosh(k pi) and cosh(k pi y)/cosh(k pi)
        let e1 = (kp * (y - 1.0)).exp();
        let e2 = (-kp * (y + 1.0)).exp();
        let denom = 1.0 + (-2.0 * kp).exp();
        let sh = (e1 - e2) / denom;
        let ch = (e1 + e2) / denom;
        let c = 4.0 / (kp * kp);
        let s = (kp * x).sin();
        let co = (kp * x).cos();
        u += c * s * sh;
        gx += c * kp * co * sh;
        gy += c * kp * s * ch;
        // remaining tail is O(e1/k); stop when negligible
        if k > 5 && (c * kp * ch).abs() < 1e-16 * (1.0 + gy.abs()) {
            break;
        }
        if k > 2_000_000 {
            break;
        }
        k += 2;
    }
    (u, gx, gy)
}

/// Energy of the fig1 exact solution, `sum_{k odd} 8 tanh(k pi)/(k^3 pi^3)`.
pub fn fig1_exact_energy_squared() -> f64 {
    let mut s = 0.0;
    let mut k = 1u64;
    loop {
        let kp = k as f64 * PI;
        let term = 8.0 * kp.tanh() / kp.powi(3);
        s += term;
        if term < 1e-17 * s {
            break;
        }
        k += 2;
    }
    s
}

/// Classical corner singularity `u = r^(2/3) sin(2 theta / 3)` on the
/// L-shaped domain, harmonic with Dirichlet legs at the re-entrant corner
/// and exact Neumann data on the outer boundary.
pub fn l_shape_problem() -> DiffusionProblem {
    let value: ScalarFn = Arc::new(|x, y| {
        let (r, t) = l_polar(x, y);
        r.powf(2.0 / 3.0) * (2.0 * t / 3.0).sin()
    });
    let gradient: VectorFn = Arc::new(l_shape_gradient);
    DiffusionProblem {
        a: Coefficient::identity(),
        f: Source::Zero,
        g: NeumannData::Pointwise(Arc::new(move |x, y| {
            // outward normal on the outer boundary of (-1,1)^2
            let g = l_shape_gradient(x, y);
            let n = outer_normal(x, y);
            g[0] * n[0] + g[1] * n[1]
        })),
        exact: Some(ExactSolution {
            value,
            gradient,
            singular_point: Some([0.0, 0.0]),
        }),
    }
}

/// Polar coordinates with theta in [0, 3pi/2], measured from the positive
/// x-axis so that both Dirichlet legs are zero level sets.
fn l_polar(x: f64, y: f64) -> (f64, f64) {
    let r = (x * x + y * y).sqrt();
    let mut t = y.atan2(x);
    if t < 0.0 {
        t += 2.0 * PI;
    }
    (r, t)
}

pub fn l_shape_gradient(x: f64, y: f64) -> [f64; 2] {
    let (r, t) = l_polar(x, y);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let a = 2.0 / 3.0;
    let dr = a * r.powf(a - 1.0) * (a * t).sin();
    let dt = a * r.powf(a - 1.0) * (a * t).cos();
    [
        dr * t.cos() - dt * t.sin(),
        dr * t.sin() + dt * t.cos(),
    ]
}

fn outer_normal(x: f64, y: f64) -> [f64; 2] {
    // distances to the four sides of the bounding square
    if (x + 1.0).abs() < 1e-9 {
        [-1.0, 0.0]
    } else if (x - 1.0).abs() < 1e-9 {
        [1.0, 0.0]
    } else if (y + 1.0).abs() < 1e-9 {
        [0.0, -1.0]
    } else if (y - 1.0).abs() < 1e-9 {
        [0.0, 1.0]
    } else {
        // should only be called on the outer boundary
        [0.0, 0.0]
    }
}
