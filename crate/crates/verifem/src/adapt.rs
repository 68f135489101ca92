//! Marking, size-map computation and the solve -> estimate -> mark -> refine
//! loop, for energy-norm and goal-oriented indicators.

use std::sync::Arc;
use std::time::Instant;

use crate::error::VerifemError;
use crate::fem::{exact_energy_error, solve, FeFunction, FeSpace};
use crate::mesh::{ElemId, Mesh};
use crate::problems::DiffusionProblem;
use crate::report::fmt_f64;

/// Parameters of the adaptive loop.
#[derive(Clone, Debug)]
pub struct AdaptConfig {
    /// Marking fraction in [0, 1]; elements with `eta_K >= lambda max eta`
    /// are refined.
    pub lambda: f64,
    /// Target tolerance on the stopping value.
    pub epsilon0: f64,
    pub max_iterations: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lambda: 0.8,
            epsilon0: 1e-8,
            max_iterations: 12,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), VerifemError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(VerifemError::Input("lambda out of [0,1]".into()));
        }
        if self.epsilon0 <= 0.0 {
            return Err(VerifemError::Input("epsilon0 must be positive".into()));
        }
        Ok(())
    }
}

/// One row of a convergence or adaptivity study.
#[derive(Clone, Debug)]
pub struct StudyRecord {
    pub iteration: usize,
    pub n_dofs: usize,
    pub h: f64,
    pub eta: f64,
    pub ref_error: Option<f64>,
    pub i_eff: Option<f64>,
    pub seconds: f64,
}

/// Indicators driving one adaptive step.
pub struct IndicatorData {
    /// Stopping value (estimate or goal-bound half width).
    pub eta: f64,
    /// Nonnegative per-element marking indicators.
    pub indicators: Vec<f64>,
}

/// Maximum marking: elements whose indicator reaches `lambda` times the
/// largest one.
pub fn mark_max(indicators: &[f64], lambda: f64) -> Result<Vec<ElemId>, VerifemError> {
    if indicators.is_empty() {
        return Err(VerifemError::Input("empty indicator array".into()));
    }
    let max = indicators.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = lambda * max;
    Ok(indicators
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(k, _)| k)
        .collect())
}

/// Refinement-ratio map from the equidistribution principle, smooth case:
/// `r_K = eps^(1/p) / (eta_K^(2/(2p+d)) [sum eta^(2d/(2p+d))]^(1/(2p)))`
/// in d = 2, normalized so that `sum r_K^(2p) eta_K^2 = eps^2`.
pub fn size_map(indicators: &[f64], epsilon0: f64, p: usize) -> Result<Vec<f64>, VerifemError> {
    if epsilon0 <= 0.0 {
        return Err(VerifemError::Input("epsilon0 must be positive".into()));
    }
    if indicators.is_empty() {
        return Err(VerifemError::Input("empty indicator array".into()));
    }
    let d = 2.0;
    let pf = p as f64;
    let min_pos = indicators
        .iter()
        .cloned()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return Err(VerifemError::Input("all indicators vanish".into()));
    }
    let clamped: Vec<f64> = indicators
        .iter()
        .map(|&v| if v > 0.0 { v } else { min_pos * 1e-6 })
        .collect();
    let sum_pow: f64 = clamped.iter().map(|&v| v.powf(2.0 * d / (2.0 * pf + d))).sum();
    let map: Vec<f64> = clamped
        .iter()
        .map(|&v| {
            epsilon0.powf(1.0 / pf) / (v.powf(2.0 / (2.0 * pf + d)) * sum_pow.powf(1.0 / (2.0 * pf)))
        })
        .collect();
    let constraint: f64 = map
        .iter()
        .zip(&clamped)
        .map(|(&r, &e)| r.powf(2.0 * pf) * e * e)
        .sum();
    let defect = (constraint - epsilon0 * epsilon0).abs();
    if defect > 1e-10 * epsilon0 * epsilon0 {
        return Err(VerifemError::Contract(format!(
            "size map violates its defining constraint: defect {defect}"
        )));
    }
    Ok(map)
}

/// Outcome of the adaptive loop.
pub struct AdaptOutcome {
    pub u: FeFunction,
    pub problem: DiffusionProblem,
    pub records: Vec<StudyRecord>,
}

/// Run the adaptive cycle with an estimator callback. The callback returns
/// the stopping value and the marking indicators of the current iterate.
pub fn adapt_solve<F>(
    problem: &DiffusionProblem,
    mesh: Mesh,
    config: &AdaptConfig,
    mut estimate: F,
) -> Result<AdaptOutcome, VerifemError>
where
    F: FnMut(&DiffusionProblem, &FeFunction) -> Result<IndicatorData, VerifemError>,
{
    config.validate()?;
    let mut problem = problem.clone();
    let mut mesh = Arc::new(mesh);
    let mut records = Vec::new();
    let start = Instant::now();
    let mut last: Option<(FeFunction, DiffusionProblem)> = None;

    for iteration in 0..config.max_iterations {
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let (u, _) = solve(&problem, &space)?;
        let data = estimate(&problem, &u).map_err(|e| {
            VerifemError::Numerical(format!("estimator failed at iteration {iteration}: {e}"))
        })?;
        let ref_error = problem.exact.as_ref().map(|_| exact_energy_error(&problem, &u)).transpose()?;
        let i_eff = ref_error.map(|r| data.eta / r);
        records.push(StudyRecord {
            iteration,
            n_dofs: space.n_free(),
            h: mesh.quality().h,
            eta: data.eta,
            ref_error,
            i_eff,
            seconds: start.elapsed().as_secs_f64(),
        });
        let done = data.eta <= config.epsilon0 || iteration + 1 == config.max_iterations;
        last = Some((u, problem.clone()));
        if done {
            break;
        }
        let marked = mark_max(&data.indicators, config.lambda)?;
        let refinement = mesh.refine(&marked)?;
        problem = problem.for_refinement(&refinement);
        mesh = Arc::new(refinement.mesh);
    }
    let (u, problem) = last.expect("at least one iteration");
    Ok(AdaptOutcome { u, problem, records })
}

/// Least-squares slope of y against x.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64, VerifemError> {
    if xs.len() < 3 || xs.len() != ys.len() {
        return Err(VerifemError::Input(
            "need at least 3 points for a rate fit".into(),
        ));
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Fitted convergence rates of a study.
pub struct StudyRates {
    /// Slope of log(error) vs log(N).
    pub slope_vs_dofs: f64,
    /// Slope of log(error) vs log(h).
    pub slope_vs_h: f64,
}

/// Rates from the reference-error column of a study (records without a
/// reference are skipped).
pub fn study_rates(records: &[StudyRecord]) -> Result<StudyRates, VerifemError> {
    let mut ln_n = Vec::new();
    let mut ln_h = Vec::new();
    let mut ln_e = Vec::new();
    for r in records {
        if let Some(e) = r.ref_error {
            if e > 0.0 {
                ln_n.push((r.n_dofs as f64).ln());
                ln_h.push(r.h.ln());
                ln_e.push(e.ln());
            }
        }
    }
    Ok(StudyRates {
        slope_vs_dofs: fit_slope(&ln_n, &ln_e)?,
        slope_vs_h: fit_slope(&ln_h, &ln_e)?,
    })
}

/// Uniform-refinement convergence study.
pub fn uniform_study<F>(
    problem: &DiffusionProblem,
    mesh: Mesh,
    levels: usize,
    mut estimate: F,
) -> Result<Vec<StudyRecord>, VerifemError>
where
    F: FnMut(&DiffusionProblem, &FeFunction) -> Result<IndicatorData, VerifemError>,
{
    let mut problem = problem.clone();
    let mut mesh = Arc::new(mesh);
    let mut records = Vec::new();
    let start = Instant::now();
    for iteration in 0..levels {
        let space = Arc::new(FeSpace::new(mesh.clone()));
        let (u, _) = solve(&problem, &space)?;
        let data = estimate(&problem, &u)?;
        let ref_error = problem.exact.as_ref().map(|_| exact_energy_error(&problem, &u)).transpose()?;
        let i_eff = ref_error.map(|r| data.eta / r);
        records.push(StudyRecord {
            iteration,
            n_dofs: space.n_free(),
            h: mesh.quality().h,
            eta: data.eta,
            ref_error,
            i_eff,
            seconds: start.elapsed().as_secs_f64(),
        });
        if iteration + 1 < levels {
            let refinement = mesh.uniform_refine()?;
            problem = problem.for_refinement(&refinement);
            mesh = Arc::new(refinement.mesh);
        }
    }
    Ok(records)
}

/// Render a study as CSV with the fixed header. Wall-clock seconds are only
/// written when `include_timing` is set; the default keeps the file
/// byte-reproducible across runs.
pub fn render_study_csv(records: &[StudyRecord], include_timing: bool) -> String {
    let mut out = String::from("iteration,N,h,eta,ref_error,i_eff,seconds\n");
    for r in records {
        let ref_err = r.ref_error.map(fmt_f64).unwrap_or_else(|| "nan".into());
        let i_eff = r.i_eff.map(fmt_f64).unwrap_or_else(|| "nan".into());
        let seconds = if include_timing { fmt_f64(r.seconds) } else { fmt_f64(0.0) };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration,
            r.n_dofs,
            fmt_f64(r.h),
            fmt_f64(r.eta),
            ref_err,
            i_eff,
            seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{l_shape_mesh, unit_square_mesh, BcLayout};
    use crate::problems::{l_shape_problem, sin_sin_problem};
    use crate::recovery::{recovery_estimate, spr_recover};

    #[test]
    fn mark_max_cases() {
        // all equal: everything marked for any lambda <= 1
        assert_eq!(mark_max(&[2.0, 2.0, 2.0], 1.0).unwrap(), vec![0, 1, 2]);
        // lambda 0 marks all, lambda 1 the argmax set
        assert_eq!(mark_max(&[1.0, 3.0, 2.0], 0.0).unwrap(), vec![0, 1, 2]);
        assert_eq!(mark_max(&[1.0, 3.0, 2.0], 1.0).unwrap(), vec![1]);
        // (4,3,2,1) at 0.8: threshold 3.2 keeps only the first
        assert_eq!(mark_max(&[4.0, 3.0, 2.0, 1.0], 0.8).unwrap(), vec![0]);
        assert!(mark_max(&[], 0.5).is_err());
        // invariance under positive rescaling
        let a = mark_max(&[4.0, 3.0, 2.0, 1.0], 0.8).unwrap();
        let b = mark_max(&[40.0, 30.0, 20.0, 10.0], 0.8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_map_formula() {
        // uniform indicators over M elements: r = eps / (eta sqrt(M))
        let m = 5usize;
        let eta = 0.3;
        let eps = 1e-2;
        let r = size_map(&vec![eta; m], eps, 1).unwrap();
        let want = eps / (eta * (m as f64).sqrt());
        for v in &r {
            assert!((v - want).abs() < 1e-14);
        }
        // homogeneity: scaling indicators by c scales ratios by 1/c
        let r1 = size_map(&[1.0, 2.0, 4.0], eps, 1).unwrap();
        let r2 = size_map(&[3.0, 6.0, 12.0], eps, 1).unwrap();
        for (a, b) in r1.iter().zip(&r2) {
            assert!((a / b - 3.0).abs() < 1e-12);
        }
        // constraint is embedded in the function; zero indicators are clamped
        let r3 = size_map(&[0.0, 1.0, 2.0], eps, 1).unwrap();
        assert!(r3.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(size_map(&[1.0], 0.0, 1).is_err());
    }

    fn spr_estimator(
        problem: &DiffusionProblem,
        u: &FeFunction,
    ) -> Result<IndicatorData, VerifemError> {
        let mesh = &u.space.mesh;
        let q = crate::fem::flux(problem, u);
        let rec = spr_recover(mesh, &q);
        let rep = recovery_estimate(problem, mesh, &rec, &q, "spr");
        Ok(IndicatorData {
            eta: rep.eta,
            indicators: rep.indicators().expect("per-element data"),
        })
    }

    #[test]
    fn adapt_stops_immediately_on_huge_tolerance() {
        let p = sin_sin_problem();
        let mesh = unit_square_mesh(4, BcLayout::AllDirichlet).unwrap();
        let config = AdaptConfig {
            epsilon0: 1e9,
            ..AdaptConfig::default()
        };
        let out = adapt_solve(&p, mesh.clone(), &config, spr_estimator).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.u.space.mesh.n_elements(), mesh.n_elements());
    }

    #[test]
    fn adapt_is_deterministic_and_monotone_in_dofs() {
        let p = l_shape_problem();
        let mesh = l_shape_mesh(2).unwrap();
        let config = AdaptConfig {
            lambda: 0.8,
            epsilon0: 1e-8,
            max_iterations: 6,
        };
        let a = adapt_solve(&p, mesh.clone(), &config, spr_estimator).unwrap();
        let b = adapt_solve(&p, mesh, &config, spr_estimator).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.n_dofs, rb.n_dofs);
            assert_eq!(ra.eta.to_bits(), rb.eta.to_bits());
        }
        for w in a.records.windows(2) {
            assert!(w[1].n_dofs > w[0].n_dofs);
        }
    }

    #[test]
    fn adaptive_refinement_concentrates_at_the_corner() {
        let p = l_shape_problem();
        let mesh = l_shape_mesh(2).unwrap();
        let config = AdaptConfig {
            lambda: 0.8,
            epsilon0: 1e-8,
            max_iterations: 9,
        };
        let out = adapt_solve(&p, mesh, &config, spr_estimator).unwrap();
        let final_mesh = &out.u.space.mesh;
        // smallest elements cluster at the origin
        let quality = final_mesh.quality();
        let mut min_h = f64::INFINITY;
        let mut min_k = 0;
        for k in 0..final_mesh.n_elements() {
            if quality.h_elem[k] < min_h {
                min_h = quality.h_elem[k];
                min_k = k;
            }
        }
        let v = final_mesh.elem_vertices(min_k);
        let dist = v
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(
            dist < 2.0 * min_h,
            "smallest element at distance {dist} from the corner (h = {min_h})"
        );
        // depth contrast: smallest element much smaller than largest
        assert!(quality.h / min_h >= 4.0, "refinement depth contrast");
        // estimate decreases across the run
        let first = out.records.first().unwrap().eta;
        let last = out.records.last().unwrap().eta;
        assert!(last < first);
    }

    #[test]
    fn lshape_adaptive_estimates_decrease_strictly() {
        let estimator = |p: &DiffusionProblem, u: &FeFunction| {
            let (report, _, _) = crate::equilibration::cre_analytic_pipeline(p, u)?;
            Ok(IndicatorData {
                eta: report.eta,
                indicators: report.indicators().expect("per-element data"),
            })
        };
        let config = AdaptConfig {
            lambda: 0.8,
            epsilon0: 1e-10,
            max_iterations: 12,
        };
        let p = l_shape_problem();
        let out = adapt_solve(&p, l_shape_mesh(2).unwrap(), &config, estimator).unwrap();
        for w in out.records.windows(2) {
            assert!(w[1].eta < w[0].eta, "estimate not strictly decreasing");
        }
    }

    #[test]
    fn uniform_study_rates_on_sin_sin() {
        let p = sin_sin_problem();
        let mesh = unit_square_mesh(8, BcLayout::AllDirichlet).unwrap();
        let records = uniform_study(&p, mesh, 3, spr_estimator).unwrap();
        let rates = study_rates(&records).unwrap();
        assert!((rates.slope_vs_h - 1.0).abs() <= 0.15, "h-rate {}", rates.slope_vs_h);
        assert!((rates.slope_vs_dofs + 0.5).abs() <= 0.1, "N-rate {}", rates.slope_vs_dofs);
    }

    #[test]
    fn csv_rendering_is_stable() {
        let records = vec![StudyRecord {
            iteration: 0,
            n_dofs: 49,
            h: 0.25,
            eta: 0.125,
            ref_error: None,
            i_eff: None,
            seconds: 1.5,
        }];
        let s = render_study_csv(&records, false);
        assert!(s.starts_with("iteration,N,h,eta,ref_error,i_eff,seconds\n"));
        assert!(s.contains("0,49,2.5000000000000000e-1,1.2500000000000000e-1,nan,nan,0.0000000000000000e0"));
        let t = render_study_csv(&records, true);
        assert!(t.contains("1.5000000000000000e0"));
    }
}
