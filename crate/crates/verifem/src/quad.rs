//! Quadrature rules on triangles and edges.
//!
//! Triangle rules are expressed in barycentric coordinates with weights that
//! sum to one; physical integrals multiply by the element area. Low degrees
//! use the classical symmetric rules, higher degrees fall back to a collapsed
//! Gauss-Legendre product rule (all points interior, all weights positive).

/// A quadrature point in barycentric coordinates with its normalized weight.
#[derive(Clone, Copy, Debug)]
pub struct TriPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Quadrature rule on the reference triangle. `sum(weight) == 1`.
#[derive(Clone, Debug)]
pub struct TriRule {
    pub points: Vec<TriPoint>,
    pub degree: usize,
}

impl TriRule {
    /// Rule exact for polynomials of total degree `degree`.
    pub fn with_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self::centroid(),
            2 => Self::midpoints(),
            3..=5 => Self::symmetric_deg5(),
            d => Self::collapsed(d),
        }
    }

    fn centroid() -> Self {
        TriRule {
            points: vec![TriPoint { bary: [1.0 / 3.0; 3], weight: 1.0 }],
            degree: 1,
        }
    }

    fn midpoints() -> Self {
        let w = 1.0 / 3.0;
        let points = vec![
            TriPoint { bary: [0.5, 0.5, 0.0], weight: w },
            TriPoint { bary: [0.0, 0.5, 0.5], weight: w },
            TriPoint { bary: [0.5, 0.0, 0.5], weight: w },
        ];
        TriRule { points, degree: 2 }
    }

    /// Classical 7-point symmetric rule, exact to degree 5.
    fn symmetric_deg5() -> Self {
        let mut points = vec![TriPoint { bary: [1.0 / 3.0; 3], weight: 0.225 }];
        let groups = [
            (0.797_426_985_353_087_3, 0.101_286_507_323_456_34, 0.125_939_180_544_827_15),
            (0.059_715_871_789_769_8, 0.470_142_064_105_115_1, 0.132_394_152_788_506_2),
        ];
        for &(a, b, w) in &groups {
            points.push(TriPoint { bary: [a, b, b], weight: w });
            points.push(TriPoint { bary: [b, a, b], weight: w });
            points.push(TriPoint { bary: [b, b, a], weight: w });
        }
        TriRule { points, degree: 5 }
    }

    /// Duffy-collapsed tensor Gauss rule; exact for total degree `d`.
    fn collapsed(d: usize) -> Self {
        let n = d / 2 + 1; // 2n-1 >= d+1
        let gl = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        for &(xi, wx) in &gl {
            for &(eta, we) in &gl {
                // (xi, eta) in [0,1]^2 -> triangle, Jacobian xi (area-normalized: 2*xi)
                let l2 = xi * (1.0 - eta);
                let l3 = xi * eta;
                let l1 = 1.0 - l2 - l3;
                points.push(TriPoint { bary: [l1, l2, l3], weight: 2.0 * xi * wx * we });
            }
        }
        TriRule { points, degree: d }
    }

    /// Physical coordinates of a rule point for a triangle with the given vertices.
    pub fn physical(p: &TriPoint, v: &[[f64; 2]; 3]) -> [f64; 2] {
        [
            p.bary[0] * v[0][0] + p.bary[1] * v[1][0] + p.bary[2] * v[2][0],
            p.bary[0] * v[0][1] + p.bary[1] * v[1][1] + p.bary[2] * v[2][1],
        ]
    }
}

/// Gauss-Legendre rule on [0,1]: (node, weight) pairs, weights sum to 1.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// Gauss-Legendre rule on [-1,1] computed by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-flavoured initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// 3-point Gauss rule on an edge, as (parameter in [0,1], weight) with unit weight sum.
pub fn edge_rule_3pt() -> [(f64, f64); 3] {
    let s = (0.6f64).sqrt(); // sqrt(3/5)
    [
        (0.5 * (1.0 - s), 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 * (1.0 + s), 5.0 / 18.0),
    ]
}

/// Edge rule of arbitrary point count for higher-degree integrands.
pub fn edge_rule(n: usize) -> Vec<(f64, f64)> {
    gauss_legendre_unit(n)
}
