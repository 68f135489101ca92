//! Minimal CSR symmetric matrix storage and a Jacobi-preconditioned
//! conjugate gradient solver. Everything here is deterministic: assembly
//! order and the iteration itself are fixed by the input ordering.

use crate::error::VerifemError;

/// Builder accumulating (row, col, value) contributions.
pub struct CooBuilder {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl CooBuilder {
    pub fn new(n: usize) -> Self {
        CooBuilder {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i].push((j, v));
    }

    pub fn into_csr(self) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(self.n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in self.rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, v) in row {
                if last == Some(j) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    data.push(v);
                    last = Some(j);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n: self.n,
            indptr,
            indices,
            data,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for idx in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[idx] * x[self.indices[idx]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for idx in self.indptr[i]..self.indptr[i + 1] {
                if self.indices[idx] == i {
                    d[i] = self.data[idx];
                }
            }
        }
        d
    }

    /// Max |A - A^T| entry, for symmetry checks.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for idx in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[idx];
                let aij = self.data[idx];
                let aji = self.get(j, i);
                worst = worst.max((aij - aji).abs());
            }
        }
        worst
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for idx in self.indptr[i]..self.indptr[i + 1] {
            if self.indices[idx] == j {
                return self.data[idx];
            }
        }
        0.0
    }
}

pub struct CgSummary {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Jacobi-preconditioned CG for SPD systems.
///
/// Converges to `rtol` on the unpreconditioned residual norm relative to
/// `|b|`; errors out after `max_iter` iterations.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgSummary), VerifemError> {
    let n = a.n;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgSummary {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }
    let diag = a.diagonal();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(VerifemError::Numerical(
            "system matrix has non-positive diagonal".into(),
        ));
    }
    let minv: Vec<f64> = diag.iter().map(|&d| 1.0 / d).collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz: f64 = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 0..max_iter {
        let rnorm = norm(&r);
        if rnorm <= rtol * bnorm {
            return Ok((
                x,
                CgSummary {
                    iterations: it,
                    rel_residual: rnorm / bnorm,
                },
            ));
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(VerifemError::Numerical(
                "conjugate gradients met a non-positive curvature direction".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = norm(&r);
    if rnorm <= rtol * bnorm {
        Ok((
            x,
            CgSummary {
                iterations: max_iter,
                rel_residual: rnorm / bnorm,
            },
        ))
    } else {
        Err(VerifemError::Numerical(format!(
            "conjugate gradients failed to converge: relative residual {:.3e} after {} iterations",
            rnorm / bnorm,
            max_iter
        )))
    }
}

/// PCG followed by one defect-correction solve: the correction drives the
/// true residual close to the floating-point floor, well below `rtol`.
pub fn pcg_refined(
    a: &CsrMatrix,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgSummary), VerifemError> {
    let (mut x, summary) = pcg(a, b, rtol, max_iter)?;
    let mut ax = vec![0.0; a.n];
    a.mul_vec(&x, &mut ax);
    let residual: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bnorm = norm(b);
    if bnorm > 0.0 && norm(&residual) > 0.0 {
        let (dx, _) = pcg(a, &residual, rtol, max_iter)?;
        for i in 0..a.n {
            x[i] += dx[i];
        }
        a.mul_vec(&x, &mut ax);
        let rel = b
            .iter()
            .zip(&ax)
            .map(|(bi, ai)| (bi - ai) * (bi - ai))
            .sum::<f64>()
            .sqrt()
            / bnorm;
        return Ok((
            x,
            CgSummary {
                iterations: summary.iterations,
                rel_residual: rel,
            },
        ));
    }
    Ok((x, summary))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
