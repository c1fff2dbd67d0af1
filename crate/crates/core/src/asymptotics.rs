//! Closed-form asymptotic predictions for hitting probabilities and the
//! free-model decomposition, and the big-jump/Gaussian crossover scan.

use crate::error::{GpsError, Result};
use crate::loop_law::{FreeEndWeights, LoopLaw, TiltedLaw};
use crate::partition::{compute_zc, hitting_prob_at};
use serde::Serialize;

fn excess(tl: &TiltedLaw, n: u64, m: u64) -> Result<f64> {
    let t = m as f64 - tl.gamma_c * n as f64;
    if !(t > 0.0) {
        return Err(GpsError::OutOfDomain(format!("t_N = {t} must be positive")));
    }
    Ok(t)
}

/// `(N / mu1^2) P(tau2 = ceil(t_N))`
pub fn thm21_prediction(tl: &TiltedLaw, n: u64, m: u64) -> Result<f64> {
    let t = excess(tl, n, m)?;
    Ok(n as f64 / (tl.mu1 * tl.mu1) * tl.marginal2(t.ceil() as u64))
}

/// Two competing contributions to the free partition function, normalized by `e^(N Nh)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TwoTerms {
    pub first: f64,
    pub us_term: f64,
}

/// Multiplier of the bounded-free-ends term: `sum_{j >= 0} K_f(j)`, zero when infinite.
pub fn bl_multiplier(fw: &FreeEndWeights) -> f64 {
    fw.total().map_or(0.0, |t| 1.0 + t)
}

fn is_log_branch(fw: &FreeEndWeights) -> bool {
    fw.spec().alpha_bar == 1.0 && !fw.is_summable()
}

/// Bounded-loops term (`first`) and unbound-strand term.
pub fn thm22_prediction(fw: &FreeEndWeights, tl: &TiltedLaw, n: u64, m: u64) -> Result<TwoTerms> {
    if is_log_branch(fw) {
        return Err(GpsError::WrongBranch("alpha_bar = 1 with non-summable K_f needs the mixed-term expansion".into()));
    }
    let t = excess(tl, n, m)?.ceil() as u64;
    let sf = fw.damped_sum(tl.nh);
    let bl = bl_multiplier(fw) * n as f64 / (tl.mu1 * tl.mu1) * sf * tl.marginal2(t);
    let us = sf * fw.kf(t) / tl.mu1;
    Ok(TwoTerms { first: bl, us_term: us })
}

/// Mixed term (`first`) and unbound-strand term when `alpha_bar = 1` and `sum K_f = inf`.
pub fn appendix_a_prediction(fw: &FreeEndWeights, tl: &TiltedLaw, n: u64, m: u64) -> Result<TwoTerms> {
    if !is_log_branch(fw) {
        return Err(GpsError::WrongBranch("mixed-term expansion needs alpha_bar = 1 and non-summable K_f".into()));
    }
    let t = excess(tl, n, m)?.ceil() as u64;
    let sf = fw.damped_sum(tl.nh);
    let mixed = n as f64 / (tl.mu1 * tl.mu1) * tl.marginal2(t) * fw.kbar(t) * sf;
    let us = sf * fw.kf(t) / tl.mu1;
    Ok(TwoTerms { first: mixed, us_term: us })
}

/// Parameters of the moderate-deviation competitor to the big jump.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConjectureParams {
    pub c_bold: f64,
    pub a_c: f64,
    pub c1: Option<f64>,
    pub theta0: f64,
    pub qmin: f64,
}

/// Sign of the cross term in the variance of `tau2 - gamma_c tau1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossSign {
    /// `gamma^2 s1^2 - 2 rho gamma s1 s2 + s2^2`
    Minus,
    /// `gamma^2 s1^2 + 2 rho gamma s1 s2 + s2^2`
    Plus,
}

impl CrossSign {
    fn s(self) -> f64 {
        match self {
            CrossSign::Minus => -1.0,
            CrossSign::Plus => 1.0,
        }
    }
}

/// Sign used by [`conjecture_params`].
pub const CROSS_SIGN: CrossSign = CrossSign::Minus;

/// `Q(theta)` whose minimum sets the Gaussian rate.
pub fn q_theta(tl: &TiltedLaw, theta: f64, sign: CrossSign) -> f64 {
    let a = tl.gamma_c * tl.sigma1;
    let b = tl.sigma2;
    // the cross term enters Q with the opposite sign to the variance
    theta * theta / (a * a) - 2.0 * sign.s() * tl.rho * theta * (1.0 - theta) / (a * b) + (1.0 - theta).powi(2) / (b * b)
}

pub fn conjecture_params(tl: &TiltedLaw) -> Result<ConjectureParams> {
    conjecture_params_with(tl, CROSS_SIGN)
}

pub fn conjecture_params_with(tl: &TiltedLaw, sign: CrossSign) -> Result<ConjectureParams> {
    let alpha = tl.law().alpha();
    if !(tl.law().has_tail() && alpha > 1.0) {
        return Err(GpsError::WrongBranch("crossover amplitude needs an unbounded law with alpha > 1".into()));
    }
    if !tl.sigma2.is_finite() || tl.sigma1 <= 0.0 || tl.sigma2 <= 0.0 {
        return Err(GpsError::WrongBranch("degenerate covariance".into()));
    }
    let a = tl.gamma_c * tl.sigma1;
    let b = tl.sigma2;
    let var = a * a + 2.0 * sign.s() * tl.rho * a * b + b * b;
    let c_bold = tl.mu1 / (2.0 * var);
    let qmin = (1.0 - tl.rho * tl.rho) / var;
    let theta0 = (a * a + sign.s() * tl.rho * a * b) / var;
    Ok(ConjectureParams { c_bold, a_c: ((alpha - 1.0) / (2.0 * c_bold)).sqrt(), c1: None, theta0, qmin })
}

/// Big-jump and Gaussian terms of the hitting probability at `(N, gamma_c N + t)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CompetingTerms {
    pub bigjump: f64,
    pub gaussian: f64,
}

pub fn conjecture_terms(params: &ConjectureParams, tl: &TiltedLaw, n: u64, t: f64) -> Result<CompetingTerms> {
    if tl.law().alpha() <= 1.0 || !tl.law().has_tail() {
        return Err(GpsError::OutOfDomain("competing terms need alpha > 1".into()));
    }
    if !(t > 0.0) {
        return Err(GpsError::OutOfDomain(format!("t_N = {t} must be positive")));
    }
    let c1 = params.c1.ok_or_else(|| GpsError::Fit("c1 has not been supplied or fitted".into()))?;
    let nf = n as f64;
    Ok(CompetingTerms {
        bigjump: nf / (tl.mu1 * tl.mu1) * tl.marginal2(t.ceil() as u64),
        gaussian: c1 / nf.sqrt() * (-params.c_bold * t * t / nf).exp(),
    })
}

/// Local limit amplitude `1 / sqrt(2 pi mu1 Var(tau2 - gamma_c tau1))`.
pub fn local_clt_amplitude(params: &ConjectureParams, tl: &TiltedLaw) -> f64 {
    let var = tl.mu1 / (2.0 * params.c_bold);
    1.0 / (2.0 * std::f64::consts::PI * tl.mu1 * var).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryRow {
    pub n: u64,
    pub a_n: f64,
    pub m_floor: u64,
    pub m_ceil: u64,
    /// `a_N P((N, floor(gamma_c N)) in tau)`
    pub scaled_floor: f64,
    pub scaled_ceil: f64,
}

/// `a_N P((N, gamma_c N) in tau)` at both lattice neighbours of `gamma_c N`.
pub fn boundary_shape_check(law: &LoopLaw, tl: &TiltedLaw, grid: &[u64]) -> Result<Vec<BoundaryRow>> {
    let nmax = *grid.iter().max().ok_or_else(|| GpsError::OutOfDomain("empty grid".into()))?;
    let mmax = (tl.gamma_c * nmax as f64).ceil() as u64 + 1;
    let table = compute_zc(law, tl.h, nmax, mmax, None)?;
    grid.iter()
        .map(|&n| {
            let g = tl.gamma_c * n as f64;
            let (mf, mc) = (g.floor() as u64, g.ceil().max(g.floor() + 1.0) as u64);
            let a = tl.scaling_a(n as f64);
            Ok(BoundaryRow {
                n,
                a_n: a,
                m_floor: mf,
                m_ceil: mc,
                scaled_floor: a * hitting_prob_at(&table, tl, n, mf)?,
                scaled_ceil: a * hitting_prob_at(&table, tl, n, mc)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossoverRow {
    pub a: f64,
    pub t: f64,
    pub m: u64,
    pub exact: f64,
    pub bigjump: f64,
    pub gaussian: f64,
    pub bigjump_dominates: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossoverScan {
    pub params: ConjectureParams,
    pub rows: Vec<CrossoverRow>,
    /// Geometric midpoint of the first dominance flip, if any.
    pub a_star: Option<f64>,
    pub flips: usize,
}

/// Scans `t_N = a sqrt(N log N)` over `a_grid` (increasing) and fits `c1` on the
/// first `fit_rows` rows by least squares of `exact` against the Gaussian shape.
pub fn crossover_scan(law: &LoopLaw, tl: &TiltedLaw, n: u64, a_grid: &[f64], fit_rows: usize) -> Result<CrossoverScan> {
    let mut params = conjecture_params(tl)?;
    if a_grid.is_empty() || fit_rows == 0 || fit_rows > a_grid.len() {
        return Err(GpsError::Fit("need a non-empty grid and 1..=len fit rows".into()));
    }
    let nf = n as f64;
    let scale = (nf * nf.ln()).sqrt();
    let targets: Vec<(f64, f64, u64)> = a_grid
        .iter()
        .map(|&a| {
            let t = a * scale;
            (a, t, (tl.gamma_c * nf + t).round() as u64)
        })
        .collect();
    let mmax = targets.iter().map(|x| x.2).max().unwrap();
    let table = compute_zc(law, tl.h, n, mmax, None)?;
    let mut raw = Vec::with_capacity(targets.len());
    for &(a, _, m) in &targets {
        let t = m as f64 - tl.gamma_c * nf;
        let exact = hitting_prob_at(&table, tl, n, m)?;
        let bigjump = thm21_prediction(tl, n, m)?;
        let shape = (-params.c_bold * t * t / nf).exp() / nf.sqrt();
        raw.push((a, t, m, exact, bigjump, shape));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for r in &raw[..fit_rows] {
        num += r.5 * r.3;
        den += r.5 * r.5;
    }
    if !(den > 0.0) {
        return Err(GpsError::Fit("Gaussian shape underflows on the fit rows".into()));
    }
    let c1 = num / den;
    if !(c1 > 0.0) {
        return Err(GpsError::Fit(format!("fitted amplitude {c1} is not positive")));
    }
    params.c1 = Some(c1);
    let rows: Vec<CrossoverRow> = raw
        .into_iter()
        .map(|(a, t, m, exact, bigjump, shape)| {
            let gaussian = c1 * shape;
            CrossoverRow { a, t, m, exact, bigjump, gaussian, bigjump_dominates: bigjump > gaussian }
        })
        .collect();
    let mut flips = 0;
    let mut a_star = None;
    for w in rows.windows(2) {
        if w[0].bigjump_dominates != w[1].bigjump_dominates {
            flips += 1;
            a_star.get_or_insert((w[0].a * w[1].a).sqrt());
        }
    }
    Ok(CrossoverScan { params, rows, a_star, flips })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::tilted_law;
    use crate::loop_law::{build_free_end, build_loop_law, FreeEndSpec, KernelSpec};
    use crate::numerics::SlowVar;
    use approx::assert_relative_eq;

    fn light() -> (LoopLaw, TiltedLaw) {
        let law = build_loop_law(&KernelSpec::power_law(1.5, SlowVar::Constant, 10_000)).unwrap();
        let tl = tilted_law(&law, 1.0).unwrap();
        (law, tl)
    }

    #[test]
    fn delta_kernel_has_no_big_jump() {
        let law = build_loop_law(&KernelSpec::delta()).unwrap();
        let tl = tilted_law(&law, 1.0).unwrap();
        assert_eq!(thm21_prediction(&tl, 10, 15).unwrap(), 0.0);
        assert!(matches!(thm21_prediction(&tl, 10, 10), Err(GpsError::OutOfDomain(_))));
    }

    #[test]
    fn qmin_closed_form_matches_grid_minimum() {
        let (_, tl) = light();
        for sign in [CrossSign::Minus, CrossSign::Plus] {
            let p = conjecture_params_with(&tl, sign).unwrap();
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=2000 {
                let th = -0.5 + 1e-3 * k as f64;
                let q = q_theta(&tl, th, sign);
                if q < best.0 {
                    best = (q, th);
                }
            }
            // refine around the grid minimum with a parabola through three points
            let h = 1e-3;
            let (q0, qm, qp) = (q_theta(&tl, best.1, sign), q_theta(&tl, best.1 - h, sign), q_theta(&tl, best.1 + h, sign));
            let th = best.1 - h * (qp - qm) / (2.0 * (qp - 2.0 * q0 + qm));
            assert_relative_eq!(q_theta(&tl, th, sign), p.qmin, max_relative = 1e-8);
            assert_relative_eq!(th, p.theta0, max_relative = 1e-6);
            assert_relative_eq!(p.c_bold, tl.mu1 * p.qmin / (2.0 * (1.0 - tl.rho * tl.rho)), max_relative = 1e-12);
        }
    }

    fn heavy() -> (LoopLaw, TiltedLaw) {
        let law = build_loop_law(&KernelSpec::power_law(0.5, SlowVar::Constant, 10_000)).unwrap();
        let tl = tilted_law(&law, 1.0).unwrap();
        (law, tl)
    }

    #[test]
    fn hit_prediction_is_linear_in_n_at_fixed_excess() {
        let (_, tl) = heavy();
        let at = |n: u64| {
            let m = (tl.gamma_c * n as f64).ceil() as u64 + 10;
            thm21_prediction(&tl, n, m).unwrap()
        };
        assert!(at(100) > 0.0);
        assert_relative_eq!(at(200) / at(100), 2.0, max_relative = 1e-12);
        assert_relative_eq!(at(800) / at(100), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn hit_ratio_moves_towards_one() {
        let (law, tl) = heavy();
        let r: Vec<f64> = [100u64, 200, 400]
            .iter()
            .map(|&n| {
                let m = (tl.gamma_c * n as f64 + n as f64 / 2.0).round() as u64;
                let table = compute_zc(&law, 1.0, n, m, None).unwrap();
                crate::partition::hitting_prob_exact(&table, &tl).unwrap() / thm21_prediction(&tl, n, m).unwrap()
            })
            .collect();
        assert!((r[2] - 1.0).abs() < (r[1] - 1.0).abs() && (r[1] - 1.0).abs() < (r[0] - 1.0).abs(), "{r:?}");
    }

    #[test]
    fn free_end_ratio_matches_qn_up_to_the_marginal_asymptote() {
        let (_, tl) = heavy();
        let fw = build_free_end(&FreeEndSpec { alpha_bar: 3.5, sv_bar: SlowVar::Constant, j_max: 5000 }).unwrap();
        for n in [100u64, 400, 1600] {
            let m = (tl.gamma_c * n as f64 + n as f64 / 2.0).round() as u64;
            let t = (m as f64 - tl.gamma_c * n as f64).ceil();
            let terms = thm22_prediction(&fw, &tl, n, m).unwrap();
            let q = crate::path_stats::theoretical_qn(&fw, &tl, n, t).unwrap().ratio;
            let local = tl.marginal2(t as u64) / tl.marginal2_asymptote(t);
            assert_relative_eq!(terms.first / terms.us_term / q, local, max_relative = 1e-12);
        }
    }

    #[test]
    fn mixed_branch_ratio_is_tilde_qn() {
        let (_, tl) = heavy();
        let fw = build_free_end(&FreeEndSpec { alpha_bar: 1.0, sv_bar: SlowVar::Constant, j_max: 5000 }).unwrap();
        let n = 400;
        for t in [tl.scaling_a(400.0).ceil(), 200.0, 900.0] {
            let m = (tl.gamma_c * n as f64 + t).ceil() as u64;
            let tt = (m as f64 - tl.gamma_c * n as f64).ceil();
            let a = appendix_a_prediction(&fw, &tl, n, m).unwrap();
            let q = crate::path_stats::theoretical_tilde_qn(&fw, &tl, n, tt).unwrap().ratio;
            assert_relative_eq!(a.first / a.us_term, q, max_relative = 1e-12);
        }
        // slowly growing excess: the mixed term wins
        let m = (tl.gamma_c * 400.0 + tl.scaling_a(400.0)).ceil() as u64;
        let a = appendix_a_prediction(&fw, &tl, 400, m).unwrap();
        assert!(a.first > a.us_term, "{a:?}");
        // the harmonic factor Kbar(t) ~ log t is present
        assert!((fw.kbar(1000) - (1000f64.ln() + 0.5772)).abs() < 1e-3);
    }

    #[test]
    fn competing_terms_follow_the_amplitude_threshold() {
        let (_, tl) = light();
        let mut p = conjecture_params(&tl).unwrap();
        assert!(matches!(conjecture_terms(&p, &tl, 400, 10.0), Err(GpsError::Fit(_))));
        p.c1 = Some(local_clt_amplitude(&p, &tl));
        let n = 100_000_000u64;
        let scale = (n as f64 * (n as f64).ln()).sqrt();
        let small = conjecture_terms(&p, &tl, n, 0.25 * p.a_c * scale).unwrap();
        assert!(small.gaussian > small.bigjump, "{small:?}");
        let large = conjecture_terms(&p, &tl, n, 4.0 * p.a_c * scale).unwrap();
        assert!(large.bigjump > large.gaussian, "{large:?}");
        let (_, heavy_tl) = heavy();
        assert!(conjecture_terms(&p, &heavy_tl, 400, 10.0).is_err());
    }

    #[test]
    fn fitted_amplitude_is_the_local_limit_constant() {
        let (law, tl) = light();
        let p = conjecture_params(&tl).unwrap();
        let scan = crossover_scan(&law, &tl, 400, &[0.1 * p.a_c, 0.2 * p.a_c], 2).unwrap();
        let c1 = scan.params.c1.unwrap();
        let theory = local_clt_amplitude(&p, &tl);
        assert!((c1 / theory - 1.0).abs() < 0.1, "{c1} vs {theory}");
    }

    #[test]
    fn crossover_endpoints() {
        let (law, tl) = light();
        let a_c = conjecture_params(&tl).unwrap().a_c;
        let scan = crossover_scan(&law, &tl, 400, &[0.25 * a_c, a_c, 4.0 * a_c], 1).unwrap();
        let at_c = &scan.rows[1];
        assert!((at_c.bigjump / at_c.gaussian).log10().abs() < 1.0, "{at_c:?}");
        let far = &scan.rows[2];
        assert!(far.bigjump / far.gaussian > 1.0);
    }

    #[test]
    fn boundary_product_stabilizes() {
        let two = build_loop_law(&KernelSpec::two_point(0.5, 0.25)).unwrap();
        let (light_law, light_tl) = light();
        for (law, tl, tol) in [(two.clone(), tilted_law(&two, 1.0).unwrap(), 0.10), (light_law, light_tl, 0.15)] {
            let rows = boundary_shape_check(&law, &tl, &[200, 400]).unwrap();
            for pick in [|r: &BoundaryRow| r.scaled_floor, |r: &BoundaryRow| r.scaled_ceil] {
                let (a, b) = (pick(&rows[0]), pick(&rows[1]));
                assert!(a > 0.0 && (b / a - 1.0).abs() < tol, "{a} -> {b}");
            }
        }
    }

    #[test]
    fn a_c_needs_alpha_above_one() {
        let law = build_loop_law(&KernelSpec::power_law(0.5, SlowVar::Constant, 10_000)).unwrap();
        let tl = tilted_law(&law, 1.0).unwrap();
        assert!(conjecture_params(&tl).is_err());
        let (_, tl) = light();
        let p = conjecture_params(&tl).unwrap();
        assert!(p.c_bold > 0.0 && p.qmin > 0.0);
        assert_relative_eq!(p.a_c, (0.5 / (2.0 * p.c_bold)).sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn branches_are_exclusive() {
        let law = build_loop_law(&KernelSpec::power_law(0.5, SlowVar::Constant, 10_000)).unwrap();
        let tl = tilted_law(&law, 1.0).unwrap();
        let log = build_free_end(&FreeEndSpec { alpha_bar: 1.0, sv_bar: SlowVar::Constant, j_max: 5000 }).unwrap();
        let steep = build_free_end(&FreeEndSpec { alpha_bar: 3.5, sv_bar: SlowVar::Constant, j_max: 5000 }).unwrap();
        let flat = build_free_end(&FreeEndSpec { alpha_bar: 0.5, sv_bar: SlowVar::Constant, j_max: 5000 }).unwrap();
        let m = (tl.gamma_c * 400.0 + 200.0).round() as u64;
        assert!(matches!(thm22_prediction(&log, &tl, 400, m), Err(GpsError::WrongBranch(_))));
        assert!(matches!(appendix_a_prediction(&steep, &tl, 400, m), Err(GpsError::WrongBranch(_))));
        assert_eq!(thm22_prediction(&flat, &tl, 400, m).unwrap().first, 0.0);
        let a = appendix_a_prediction(&log, &tl, 400, m).unwrap();
        assert!(a.first > 0.0 && a.us_term > 0.0);
    }

    #[test]
    fn free_end_terms_scale_like_their_factors() {
        let law = build_loop_law(&KernelSpec::power_law(0.5, SlowVar::Constant, 10_000)).unwrap();
        let tl = tilted_law(&law, 1.0).unwrap();
        let fw = build_free_end(&FreeEndSpec { alpha_bar: 3.5, sv_bar: SlowVar::Constant, j_max: 5000 }).unwrap();
        let m = (tl.gamma_c * 400.0 + 200.0).ceil() as u64;
        let tt = thm22_prediction(&fw, &tl, 400, m).unwrap();
        let t = (m as f64 - tl.gamma_c * 400.0).ceil() as u64;
        let ratio = tt.first / tt.us_term;
        let expect = bl_multiplier(&fw) * 400.0 * tl.marginal2(t) / (tl.mu1 * fw.kf(t));
        assert_relative_eq!(ratio, expect, max_relative = 1e-12);
    }
}
