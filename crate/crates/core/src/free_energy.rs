//! Free energy of the constrained model as a function of the pinning
//! parameter `h` and the strand-length ratio `gamma = M / N`.

use crate::error::{GpsError, Result};
use crate::loop_law::{build_tilted_law, tilted_sums, LoopLaw, TiltedLaw};
use serde::Serialize;

/// Relative distance to `gamma_c` below which the boundary solution is used.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Solves `sum K(n+m) e^(-n Nh) = e^-h` for `Nh(h)`.
pub fn solve_nh(law: &LoopLaw, h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(GpsError::NonPositivePinning(h));
    }
    let f = |nu: f64| tilted_sums(law, h, nu, 0.0);
    // sum K(s) (s-1) x = 1 bounds the normalization by e^(h - nu)
    let (mut lo, mut hi) = (0.0f64, h);
    while hi - lo > 1e-13 * hi.max(1e-300) && hi - lo > 1e-300 {
        let mid = 0.5 * (lo + hi);
        if f(mid).norm > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut nu = 0.5 * (lo + hi);
    let s = f(nu);
    let step = (s.norm - 1.0) / s.l;
    if (nu + step) >= lo && (nu + step) <= hi {
        nu += step;
    }
    let check = (f(nu).norm - 1.0).abs();
    if check > 1e-11 {
        return Err(GpsError::Inconsistent(format!("Nh normalization off by {check:e}")));
    }
    Ok(nu)
}

/// Solves for `Nh(h)` and builds the tilted law in one go.
pub fn tilted_law(law: &LoopLaw, h: f64) -> Result<TiltedLaw> {
    let nh = solve_nh(law, h)?;
    build_tilted_law(law, h, nh)
}

/// `gamma_c(h) = mu2 / mu1` of the tilted law.
pub fn gamma_c(law: &LoopLaw, h: f64) -> Result<f64> {
    Ok(tilted_law(law, h)?.gamma_c)
}

/// A point `(lambda1, lambda2)` on the normalization curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tilt {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// `lambda1` on the curve for a given `lambda2 <= lambda1`.
fn lambda1_for(law: &LoopLaw, h: f64, lam2: f64, upper: f64) -> f64 {
    let (mut lo, mut hi) = (lam2, upper);
    if lo == 0.0 {
        lo = 1e-300;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if tilted_sums(law, h, mid, lam2).norm > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Symmetric point `lambda1 = lambda2 = lambda*`.
pub fn symmetric_tilt(law: &LoopLaw, h: f64) -> Result<f64> {
    let nh = solve_nh(law, h)?;
    let (mut lo, mut hi) = (0.0, nh);
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if tilted_sums(law, h, mid, mid).norm > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Finite support: loop shapes `(l, t)` span the ratios `1/(S-1) ..= S-1`.
fn support_cone(law: &LoopLaw) -> Option<(f64, f64, u64)> {
    let end = law.support_end()?;
    let top = (2..=end).rev().find(|&s| law.k(s) > 0.0)?;
    let r = (top - 1) as f64;
    Some((1.0 / r, r, top))
}

/// Normalization and mean increments at an arbitrary real tilt; finite support only.
fn finite_sums(law: &LoopLaw, h: f64, top: u64, lam1: f64, lam2: f64) -> (f64, f64, f64) {
    let (mut z, mut ml, mut mt) = (0.0, 0.0, 0.0);
    for s in 2..=top {
        let k = law.k(s);
        if k == 0.0 {
            continue;
        }
        for l in 1..s {
            let t = s - l;
            let w = k * (h - lam1 * l as f64 - lam2 * t as f64).exp();
            z += w;
            ml += w * l as f64;
            mt += w * t as f64;
        }
    }
    (z, ml, mt)
}

/// Root of a decreasing function, bracketing outwards from `[-1, 1]`.
fn decreasing_root<F: Fn(f64) -> f64>(f: F) -> f64 {
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while f(lo) < 0.0 {
        lo *= 2.0;
        assert!(lo > -1e6, "no root bracket");
    }
    while f(hi) > 0.0 {
        hi *= 2.0;
        assert!(hi < 1e6, "no root bracket");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Finite support allows tilts of either sign, so the window is the whole support cone.
fn finite_cramer_tilt(law: &LoopLaw, h: f64, gamma: f64) -> Result<Tilt> {
    let (lo, hi, top) = support_cone(law).ok_or_else(|| GpsError::InvalidSpec("law has no mass".into()))?;
    if !(gamma > lo && gamma < hi) {
        return Err(GpsError::OutOfWindow { gamma, lo, hi });
    }
    let lam1_of = |lam2: f64| decreasing_root(|l1| finite_sums(law, h, top, l1, lam2).0.ln());
    let lam2 = decreasing_root(|l2| {
        let (_, ml, mt) = finite_sums(law, h, top, lam1_of(l2), l2);
        mt / ml - gamma
    });
    Ok(Tilt { lambda1: lam1_of(lam2), lambda2: lam2 })
}

/// Cramer tilt: the point of the normalization curve with mean slope `gamma`.
pub fn solve_cramer_tilt(law: &LoopLaw, h: f64, gamma: f64) -> Result<Tilt> {
    if law.support_end().is_some() {
        return finite_cramer_tilt(law, h, gamma);
    }
    let tl = tilted_law(law, h)?;
    let gc = tl.gamma_c;
    if !(gamma > 1.0 / gc && gamma < gc) {
        return Err(GpsError::OutOfWindow { gamma, lo: 1.0 / gc, hi: gc });
    }
    if gamma < 1.0 {
        let t = solve_cramer_tilt(law, h, 1.0 / gamma)?;
        return Ok(Tilt { lambda1: t.lambda2, lambda2: t.lambda1 });
    }
    let nh = tl.nh;
    let star = symmetric_tilt(law, h)?;
    if gamma == 1.0 {
        return Ok(Tilt { lambda1: star, lambda2: star });
    }
    let slope = |lam2: f64| {
        let l1 = lambda1_for(law, h, lam2, nh);
        let s = tilted_sums(law, h, l1, lam2);
        (s.t / s.l, l1)
    };
    // slope decreases from gamma_c at lambda2 = 0 to 1 at lambda2 = lambda*
    let (mut lo, mut hi) = (0.0f64, star);
    for _ in 0..300 {
        if hi - lo <= 1e-14 * star {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if slope(mid).0 > gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam2 = 0.5 * (lo + hi);
    let (_, lam1) = slope(lam2);
    Ok(Tilt { lambda1: lam1, lambda2: lam2 })
}

/// Exact rate for a bounded law: the Cramer tilt inside the support cone and
/// the single extreme loop shape on its edges.
fn finite_free_energy(law: &LoopLaw, h: f64, gamma: f64, (lo, hi, top): (f64, f64, u64)) -> Result<FreeEnergy> {
    let (nh, gc) = if h > 0.0 {
        let tl = tilted_law(law, h)?;
        (tl.nh, tl.gamma_c)
    } else {
        (f64::NAN, f64::NAN)
    };
    let base = FreeEnergy { h, nh, gamma_c: gc, gamma, lambda1: 0.0, lambda2: 0.0, value: 0.0, regime: Regime::Cramer };
    let edge = h + law.k(top).ln();
    let tol = 1e-12 * hi;
    if (gamma - hi).abs() <= tol {
        return Ok(FreeEnergy { lambda1: edge, value: edge, regime: Regime::NonCramer, ..base });
    }
    if (gamma - lo).abs() <= tol {
        return Ok(FreeEnergy { lambda2: edge, value: gamma * edge, regime: Regime::NonCramer, ..base });
    }
    if gamma > hi || gamma < lo {
        return Err(GpsError::OutOfDomain(format!("gamma = {gamma} outside the support cone [{lo}, {hi}]")));
    }
    let t = finite_cramer_tilt(law, h, gamma)?;
    Ok(FreeEnergy { lambda1: t.lambda1, lambda2: t.lambda2, value: t.lambda1 + gamma * t.lambda2, ..base })
}

/// Where a ratio `gamma` sits relative to the Cramer window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Cramer,
    NonCramer,
}

/// `F(h, gamma)` together with the tilt that attains it.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FreeEnergy {
    pub h: f64,
    pub nh: f64,
    pub gamma_c: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub value: f64,
    pub regime: Regime,
}

pub fn free_energy(law: &LoopLaw, h: f64, gamma: f64) -> Result<FreeEnergy> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(GpsError::OutOfDomain(format!("gamma = {gamma} must be positive")));
    }
    if let Some((lo, hi, top)) = support_cone(law) {
        return finite_free_energy(law, h, gamma, (lo, hi, top));
    }
    if h <= 0.0 {
        return Ok(FreeEnergy {
            h,
            nh: 0.0,
            gamma_c: f64::NAN,
            gamma,
            lambda1: 0.0,
            lambda2: 0.0,
            value: 0.0,
            regime: Regime::NonCramer,
        });
    }
    let tl = tilted_law(law, h)?;
    let (nh, gc) = (tl.nh, tl.gamma_c);
    let base = FreeEnergy { h, nh, gamma_c: gc, gamma, lambda1: nh, lambda2: 0.0, value: nh, regime: Regime::NonCramer };
    if gamma >= gc * (1.0 - BOUNDARY_EPS) {
        return Ok(base);
    }
    if gamma <= (1.0 + BOUNDARY_EPS) / gc {
        // transposed strands
        return Ok(FreeEnergy { lambda1: 0.0, lambda2: nh, value: gamma * nh, ..base });
    }
    let t = solve_cramer_tilt(law, h, gamma)?;
    Ok(FreeEnergy {
        lambda1: t.lambda1,
        lambda2: t.lambda2,
        value: t.lambda1 + gamma * t.lambda2,
        regime: Regime::Cramer,
        ..base
    })
}

/// How `t_N = M - gamma_c N` is chosen along an `N` grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryRule {
    /// `M = gamma N`
    Gamma(f64),
    /// `t_N = c N`
    Linear(f64),
    /// `t_N = N^p`
    Power(f64),
    /// `t_N = a sqrt(N log N)`
    SqrtLog(f64),
}

impl GeometryRule {
    pub fn t_n(&self, gamma_c: f64, n: f64) -> f64 {
        match *self {
            GeometryRule::Gamma(g) => (g - gamma_c) * n,
            GeometryRule::Linear(c) => c * n,
            GeometryRule::Power(p) => n.powf(p),
            GeometryRule::SqrtLog(a) => a * (n * n.ln()).sqrt(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeRow {
    pub n: u64,
    pub t_n: f64,
    pub a_n: f64,
    pub ratio: f64,
    /// `t^2 / (N sigma(t)) / log N`, only when the second moment is finite or borderline.
    pub gauss_margin: Option<f64>,
    /// `a_c sqrt(N log N)` when the window amplitude is defined.
    pub window: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegimeReport {
    pub gamma_c: f64,
    pub nh: f64,
    pub regime: Regime,
    pub rows: Vec<RegimeRow>,
    pub bigjump1_ok: bool,
    pub bigjump2_ok: Option<bool>,
    pub c0: f64,
    pub a_c: Option<f64>,
}

/// Default constant in the Gaussian-suppression condition.
pub const DEFAULT_C0: f64 = 64.0;

pub fn classify_regime(law: &LoopLaw, h: f64, rule: GeometryRule, grid: &[u64], c0: f64) -> Result<RegimeReport> {
    if grid.is_empty() {
        return Err(GpsError::OutOfDomain("empty N grid".into()));
    }
    let tl = tilted_law(law, h)?;
    let gc = tl.gamma_c;
    let (w_lo, w_hi) = match support_cone(law) {
        Some((lo, hi, _)) => (lo, hi),
        None => (1.0 / gc, gc * (1.0 - BOUNDARY_EPS)),
    };
    let regime = match rule {
        GeometryRule::Gamma(g) if g > w_lo && g < w_hi => Regime::Cramer,
        _ => Regime::NonCramer,
    };
    let finite_var = tl.alpha2 >= 2.0;
    let a_c = if law.alpha() > 1.0 || law.support_end().is_some() {
        crate::asymptotics::conjecture_params(&tl).ok().map(|p| p.a_c)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(grid.len());
    for &n in grid {
        let nf = n as f64;
        let t = rule.t_n(gc, nf);
        let a = tl.scaling_a(nf);
        let gauss_margin = if finite_var && t >= 1.0 {
            Some(t * t / (nf * tl.sigma_trunc(t.floor() as u64)) / nf.ln())
        } else {
            None
        };
        rows.push(RegimeRow { n, t_n: t, a_n: a, ratio: t / a, gauss_margin, window: a_c.map(|ac| ac * (nf * nf.ln()).sqrt()) });
    }
    let bigjump1_ok = regime == Regime::NonCramer
        && rows.iter().all(|r| r.t_n > 0.0)
        && rows.windows(2).all(|w| w[1].ratio > w[0].ratio)
        && (rows.len() > 1 || rows[0].ratio > 1.0);
    let bigjump2_ok = if finite_var {
        Some(bigjump1_ok && rows.iter().all(|r| r.gauss_margin.map_or(false, |g| g >= c0)))
    } else {
        None
    };
    Ok(RegimeReport { gamma_c: gc, nh: tl.nh, regime, rows, bigjump1_ok, bigjump2_ok, c0, a_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_law::{build_loop_law, KernelSpec};
    use crate::numerics::SlowVar;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_point() -> LoopLaw {
        build_loop_law(&KernelSpec::two_point(0.5, 0.25)).unwrap()
    }

    fn heavy() -> LoopLaw {
        build_loop_law(&KernelSpec::power_law(0.5, SlowVar::Constant, 10_000)).unwrap()
    }

    #[test]
    fn delta_kernel_nh_equals_h() {
        let law = build_loop_law(&KernelSpec::delta()).unwrap();
        for &h in &[0.1, 1.0, 3.0] {
            assert_relative_eq!(solve_nh(&law, h).unwrap(), h, max_relative = 1e-12);
        }
    }

    #[test]
    fn nh_rejects_nonpositive_h() {
        assert!(matches!(solve_nh(&two_point(), 0.0), Err(GpsError::NonPositivePinning(_))));
        assert!(matches!(solve_nh(&two_point(), -1.0), Err(GpsError::NonPositivePinning(_))));
    }

    #[test]
    fn heavy_law_normalization() {
        let law = heavy();
        let nh = solve_nh(&law, 1.0).unwrap();
        // direct double sum with explicit tail in s
        let x = (-nh).exp();
        let mut z = 0.0;
        for s in 2..200_000u64 {
            let a0 = -((s - 1) as f64 * x.ln()).exp_m1() * x / (1.0 - x);
            z += law.k(s) * a0;
        }
        let tail = law.tail_moment(0, 200_000, 0.0) * x / (1.0 - x);
        assert!((z + tail - (-1f64).exp()).abs() <= 1e-12);
    }

    #[test]
    fn two_point_symmetric_point() {
        let law = two_point();
        let star = symmetric_tilt(&law, 1.0).unwrap();
        // e (p x^2 + 2 q x^3) = 1
        let x = (-star).exp();
        assert_relative_eq!(1f64.exp() * (0.5 * x * x + 0.5 * x * x * x), 1.0, max_relative = 1e-12);
        let f = free_energy(&law, 1.0, 1.0).unwrap();
        assert_relative_eq!(f.value, 2.0 * star, max_relative = 1e-12);
        assert_eq!(f.regime, Regime::Cramer);
    }

    #[test]
    fn window_interior_lies_between_symmetric_value_and_nh() {
        let law = two_point();
        let star = symmetric_tilt(&law, 1.0).unwrap();
        let f = free_energy(&law, 1.0, 1.05).unwrap();
        assert!(f.value > 2.0 * star && f.value < f.nh, "{f:?}");
        assert!(f.lambda1 > f.lambda2 && f.lambda2 > 0.0);
    }

    #[test]
    fn boundary_and_transposition() {
        let law = heavy();
        let gc = gamma_c(&law, 1.0).unwrap();
        let nh = solve_nh(&law, 1.0).unwrap();
        assert_eq!(free_energy(&law, 1.0, 2.0 * gc).unwrap().value, nh);
        assert_relative_eq!(free_energy(&law, 1.0, 0.5 / gc).unwrap().value, 0.5 / gc * nh, max_relative = 1e-14);
        let inner = free_energy(&law, 1.0, gc * (1.0 - 1e-7)).unwrap();
        assert!((inner.value - nh).abs() < 1e-6);
        let mirrored = free_energy(&law, 1.0, 1.0 / 1.05).unwrap();
        let direct = free_energy(&law, 1.0, 1.05).unwrap();
        assert_relative_eq!(mirrored.value, direct.value / 1.05, max_relative = 1e-10);
        assert_eq!(free_energy(&law, -0.5, 1.3).unwrap().value, 0.0);
    }

    #[test]
    fn bounded_law_has_no_flat_part() {
        let law = two_point();
        let gc = gamma_c(&law, 1.0).unwrap();
        let nh = solve_nh(&law, 1.0).unwrap();
        // only (1, 2) loops reach M = 2N: Z = (e K(3))^N
        let edge = 1.0 + 0.25f64.ln();
        assert_relative_eq!(free_energy(&law, 1.0, 2.0).unwrap().value, edge, max_relative = 1e-12);
        assert_relative_eq!(free_energy(&law, 1.0, 0.5).unwrap().value, 0.5 * edge, max_relative = 1e-12);
        assert!(matches!(free_energy(&law, 1.0, 2.5), Err(GpsError::OutOfDomain(_))));
        let at_gc = free_energy(&law, 1.0, gc).unwrap();
        assert_relative_eq!(at_gc.value, nh, max_relative = 1e-9);
        assert!(at_gc.lambda2.abs() < 1e-9);
        let past = free_energy(&law, 1.0, 1.5).unwrap();
        assert!(past.lambda2 < 0.0 && past.value < nh);
        let mirrored = free_energy(&law, 1.0, 1.0 / 1.5).unwrap();
        assert_relative_eq!(mirrored.value, past.value / 1.5, max_relative = 1e-10);
        // delta kernel: Z(N, N) = e^(N h) for any h
        let delta = build_loop_law(&KernelSpec::delta()).unwrap();
        assert_eq!(free_energy(&delta, 1.0, 1.0).unwrap().value, 1.0);
        assert_eq!(free_energy(&delta, -0.5, 1.0).unwrap().value, -0.5);
    }

    #[test]
    fn bounded_law_matches_exact_dp() {
        let law = two_point();
        let f = free_energy(&law, 1.0, 1.5).unwrap().value;
        let dp = crate::partition::dp_free_energy(&law, 1.0, &[100, 200, 400], 1.5).unwrap();
        let fit = dp.fitted_f.unwrap();
        assert!((fit - f).abs() < 2e-3, "{fit} vs {f}");
    }

    #[test]
    fn tilt_vanishes_towards_boundary() {
        for law in [two_point(), heavy()] {
            let gc = gamma_c(&law, 1.0).unwrap();
            let mut last = f64::INFINITY;
            for k in 2..=5 {
                let t = solve_cramer_tilt(&law, 1.0, gc * (1.0 - 10f64.powi(-k))).unwrap();
                assert!(t.lambda2 < last && t.lambda2 >= 0.0);
                last = t.lambda2;
            }
            assert!(last < 1e-3, "{last}");
        }
    }

    #[test]
    fn cramer_tilt_hits_requested_slope() {
        let law = heavy();
        let t = solve_cramer_tilt(&law, 1.0, 2.0).unwrap();
        let s = tilted_sums(&law, 1.0, t.lambda1, t.lambda2);
        assert_relative_eq!(s.norm, 1.0, max_relative = 1e-12);
        assert_relative_eq!(s.t / s.l, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn out_of_window_rejected() {
        assert!(matches!(solve_cramer_tilt(&two_point(), 1.0, 3.0), Err(GpsError::OutOfWindow { .. })));
    }

    #[test]
    fn free_energy_convex_in_h() {
        let law = two_point();
        let hs = [0.5, 0.75, 1.0, 1.25, 1.5];
        let f: Vec<f64> = hs.iter().map(|&h| free_energy(&law, h, 1.05).unwrap().value).collect();
        for i in 1..hs.len() - 1 {
            assert!(f[i - 1] + f[i + 1] - 2.0 * f[i] >= -1e-10);
        }
    }

    #[test]
    fn regime_report_flags() {
        let law = heavy();
        let grid = [100, 200, 400, 800];
        let lin = classify_regime(&law, 1.0, GeometryRule::Linear(0.5), &grid, DEFAULT_C0).unwrap();
        assert!(lin.bigjump1_ok);
        let slow = classify_regime(&law, 1.0, GeometryRule::Power(0.5), &grid, DEFAULT_C0).unwrap();
        assert!(!slow.bigjump1_ok);
        let cr = classify_regime(&law, 1.0, GeometryRule::Gamma(1.0), &grid, DEFAULT_C0).unwrap();
        assert_eq!(cr.regime, Regime::Cramer);
        let light = build_loop_law(&KernelSpec::power_law(1.5, SlowVar::Constant, 10_000)).unwrap();
        let r = classify_regime(&light, 1.0, GeometryRule::SqrtLog(10.0), &grid, 1.0).unwrap();
        assert!(r.bigjump1_ok);
        assert_eq!(r.bigjump2_ok, Some(true));
        assert!(r.a_c.is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn nh_monotone_in_h(h1 in 0.05f64..3.0, dh in 0.01f64..1.0) {
            let law = two_point();
            prop_assert!(solve_nh(&law, h1 + dh).unwrap() > solve_nh(&law, h1).unwrap());
        }

        #[test]
        fn free_energy_bounded_by_nh(g in 0.51f64..1.99, heavy_law in proptest::bool::ANY) {
            let law = if heavy_law { heavy() } else { two_point() };
            let f = free_energy(&law, 1.0, g).unwrap();
            prop_assert!(f.value <= f.nh * (1.0 + 1e-12));
            prop_assert!(f.value <= g * f.nh * (1.0 + 1e-12));
        }
    }
}
