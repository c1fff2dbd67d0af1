//! Loop-length law `K`, free-end weights `K_f` and the tilted bivariate
//! renewal law with its marginals and scaling sequences.

use crate::error::{GpsError, Result};
use crate::numerics::{first_true, tail_sum, CompSum, SlowVar};
use serde::{Deserialize, Serialize};

/// Persistence is enforced to this absolute defect.
pub const PERSISTENCE_TOL: f64 = 1e-10;

/// Describes the single-loop length law `K(s)`, `s >= 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    pub sv: SlowVar,
    /// Largest tabulated loop length.
    pub support_cap: u64,
    /// Continue `K` by its closed form beyond `support_cap`.
    pub analytic_tail: bool,
    /// Explicit unnormalized weights for `s = 2, 3, ...`; overrides the power form.
    pub masses: Option<Vec<f64>>,
}

impl KernelSpec {
    /// `K(s) = c_K L(s) s^-(2+alpha)` continued to infinity.
    pub fn power_law(alpha: f64, sv: SlowVar, cap: u64) -> Self {
        Self { alpha, sv, support_cap: cap, analytic_tail: true, masses: None }
    }

    /// Power weights truncated at `cap`.
    pub fn truncated(alpha: f64, sv: SlowVar, cap: u64) -> Self {
        Self { alpha, sv, support_cap: cap, analytic_tail: false, masses: None }
    }

    /// All mass on `s = 2`.
    pub fn delta() -> Self {
        Self::explicit(vec![1.0])
    }

    /// `K(2) = p`, `K(3) = q` with `p + 2q = 1`.
    pub fn two_point(p: f64, q: f64) -> Self {
        Self::explicit(vec![p, q])
    }

    /// Weights for `s = 2, 3, ...`, rescaled to persistence.
    pub fn explicit(w: Vec<f64>) -> Self {
        let cap = w.len() as u64 + 1;
        Self { alpha: 1.0, sv: SlowVar::Constant, support_cap: cap, analytic_tail: false, masses: Some(w) }
    }
}

/// Normalized loop law.
#[derive(Clone, Debug)]
pub struct LoopLaw {
    spec: KernelSpec,
    c_k: f64,
    pmf: Vec<f64>,
    defect: f64,
}

impl LoopLaw {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn c_k(&self) -> f64 {
        self.c_k
    }

    pub fn alpha(&self) -> f64 {
        self.spec.alpha
    }

    pub fn s_max(&self) -> u64 {
        self.spec.support_cap
    }

    pub fn has_tail(&self) -> bool {
        self.spec.analytic_tail
    }

    /// `|sum (s-1) K(s) - 1|` as recomputed after normalization.
    pub fn persistence_defect(&self) -> f64 {
        self.defect
    }

    /// Upper end of the support, if finite.
    pub fn support_end(&self) -> Option<u64> {
        if self.spec.analytic_tail {
            None
        } else {
            Some(self.spec.support_cap)
        }
    }

    /// `L(x) = c_K sv(x)` in `K(s) = L(s) s^-(2+alpha)`.
    pub fn slow(&self, x: f64) -> f64 {
        self.c_k * self.spec.sv.eval(x)
    }

    #[inline]
    pub fn k(&self, s: u64) -> f64 {
        if s < 2 {
            return 0.0;
        }
        if (s as usize) < self.pmf.len() {
            return self.pmf[s as usize];
        }
        if self.spec.analytic_tail {
            let x = s as f64;
            self.c_k * self.spec.sv.eval(x) * x.powf(-(2.0 + self.spec.alpha))
        } else {
            0.0
        }
    }

    /// Table `K(0..=n)`, extended by the closed form where needed.
    pub fn table(&self, n: u64) -> Vec<f64> {
        (0..=n).map(|s| self.k(s)).collect()
    }

    /// `sum_{s >= from} K(s) s^k e^(-lambda s)`.
    pub fn tail_moment(&self, k: i32, from: u64, lambda: f64) -> f64 {
        let from = from.max(2);
        let mut acc = CompSum::new();
        let cap = self.spec.support_cap;
        let mut s = from;
        while s <= cap {
            let x = s as f64;
            acc.add(self.pmf[s as usize] * x.powi(k) * (-lambda * x).exp());
            s += 1;
        }
        if self.spec.analytic_tail {
            let start = from.max(cap + 1);
            let t = tail_sum(self.spec.sv, 2.0 + self.spec.alpha - k as f64, start, lambda);
            if t.is_infinite() {
                return f64::INFINITY;
            }
            acc.add(self.c_k * t);
        }
        acc.value()
    }
}

fn power_weight(spec: &KernelSpec, s: u64) -> f64 {
    let x = s as f64;
    spec.sv.eval(x) * x.powf(-(2.0 + spec.alpha))
}

/// Builds the normalized law and checks persistence.
pub fn build_loop_law(spec: &KernelSpec) -> Result<LoopLaw> {
    if spec.support_cap < 2 {
        return Err(GpsError::InvalidSpec(format!("support cap {} < 2", spec.support_cap)));
    }
    if !spec.alpha.is_finite() {
        return Err(GpsError::InvalidSpec("alpha must be finite".into()));
    }
    if spec.support_cap > 50_000_000 {
        return Err(GpsError::InvalidSpec("support cap too large to tabulate".into()));
    }
    let cap = spec.support_cap as usize;
    let mut raw = vec![0.0; cap + 1];
    let mut tail_mass = 0.0;
    match &spec.masses {
        Some(w) => {
            if spec.analytic_tail {
                return Err(GpsError::InvalidSpec("explicit masses cannot carry an analytic tail".into()));
            }
            if w.len() + 1 > cap {
                return Err(GpsError::InvalidSpec("more masses than the support cap allows".into()));
            }
            if w.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
                return Err(GpsError::InvalidSpec("masses must be finite and non-negative".into()));
            }
            for (i, &m) in w.iter().enumerate() {
                raw[i + 2] = m;
            }
        }
        None => {
            if spec.analytic_tail && spec.alpha <= 0.0 {
                return Err(GpsError::InvalidSpec(format!("alpha = {} must be positive", spec.alpha)));
            }
            for s in 2..=cap {
                raw[s] = power_weight(spec, s as u64);
            }
            if spec.analytic_tail {
                let a = spec.support_cap + 1;
                // sum (s-1) g(s) over s > cap
                tail_mass = tail_sum(spec.sv, 1.0 + spec.alpha, a, 0.0) - tail_sum(spec.sv, 2.0 + spec.alpha, a, 0.0);
            }
        }
    }
    let mut first = CompSum::new();
    for (s, &w) in raw.iter().enumerate().skip(2) {
        first.add((s as f64 - 1.0) * w);
    }
    first.add(tail_mass);
    let total = first.value();
    if !(total > 0.0) || !total.is_finite() {
        return Err(GpsError::InvalidSpec("kernel has no mass".into()));
    }
    let c_k = 1.0 / total;
    let pmf: Vec<f64> = raw.iter().map(|w| w * c_k).collect();
    let mut check = CompSum::new();
    for (s, &k) in pmf.iter().enumerate().skip(2) {
        check.add((s as f64 - 1.0) * k);
    }
    check.add(c_k * tail_mass);
    let defect = (check.value() - 1.0).abs();
    if defect > PERSISTENCE_TOL {
        return Err(GpsError::NonPersistent { defect, tol: PERSISTENCE_TOL });
    }
    Ok(LoopLaw { spec: spec.clone(), c_k, pmf, defect })
}

/// Free-end weights `K_f(0) = 1`, `K_f(j) = Lbar(j) j^-alpha_bar`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEndSpec {
    pub alpha_bar: f64,
    pub sv_bar: SlowVar,
    pub j_max: u64,
}

#[derive(Clone, Debug)]
pub struct FreeEndWeights {
    spec: FreeEndSpec,
    table: Vec<f64>,
    partial: Vec<f64>,
    total: Option<f64>,
}

pub fn build_free_end(spec: &FreeEndSpec) -> Result<FreeEndWeights> {
    if spec.alpha_bar < 0.0 || !spec.alpha_bar.is_finite() {
        return Err(GpsError::InvalidSpec(format!("alpha_bar = {} must be >= 0", spec.alpha_bar)));
    }
    if spec.j_max < 1 {
        return Err(GpsError::InvalidSpec("j_max must be at least 1".into()));
    }
    let table: Vec<f64> = (0..=spec.j_max).map(|j| kf_formula(spec, j)).collect();
    let mut partial = Vec::with_capacity(table.len());
    let mut acc = CompSum::new();
    partial.push(0.0);
    for &w in &table[1..] {
        acc.add(w);
        partial.push(acc.value());
    }
    let tail = tail_sum(spec.sv_bar, spec.alpha_bar, spec.j_max + 1, 0.0);
    let total = if tail.is_finite() { Some(acc.value() + tail) } else { None };
    Ok(FreeEndWeights { spec: spec.clone(), table, partial, total })
}

fn kf_formula(spec: &FreeEndSpec, j: u64) -> f64 {
    if j == 0 {
        return 1.0;
    }
    let x = j as f64;
    spec.sv_bar.eval(x) * x.powf(-spec.alpha_bar)
}

impl FreeEndWeights {
    pub fn spec(&self) -> &FreeEndSpec {
        &self.spec
    }

    #[inline]
    pub fn kf(&self, j: u64) -> f64 {
        match self.table.get(j as usize) {
            Some(&w) => w,
            None => kf_formula(&self.spec, j),
        }
    }

    /// `Lbar(x)`
    pub fn slow(&self, x: f64) -> f64 {
        self.spec.sv_bar.eval(x)
    }

    /// `Kbar(x) = sum_{j=1}^{x} K_f(j)`.
    pub fn kbar(&self, x: u64) -> f64 {
        if let Some(&p) = self.partial.get(x as usize) {
            return p;
        }
        let mut acc = CompSum::new();
        acc.add(*self.partial.last().unwrap());
        for j in self.table.len() as u64..=x {
            acc.add(kf_formula(&self.spec, j));
        }
        acc.value()
    }

    /// `sum_{j >= 1} K_f(j)`, `None` when infinite.
    pub fn total(&self) -> Option<f64> {
        self.total
    }

    pub fn is_summable(&self) -> bool {
        self.total.is_some()
    }

    /// `sum_{i >= 0} K_f(i) e^(-i nu)` for `nu > 0`.
    pub fn damped_sum(&self, nu: f64) -> f64 {
        assert!(nu > 0.0);
        let mut acc = CompSum::new();
        acc.add(1.0);
        let cut = (80.0 / nu).ceil() as u64 + 1;
        let direct = cut.min(self.spec.j_max.max(4096));
        for j in 1..=direct {
            acc.add(self.kf(j) * (-(j as f64) * nu).exp());
        }
        if direct < cut {
            acc.add(tail_sum(self.spec.sv_bar, self.spec.alpha_bar, direct + 1, nu));
        }
        acc.value()
    }
}

/// Sums of `e^(h - l lam1 - t lam2) K(l+t) w(l, t)` over `l, t >= 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TiltSums {
    pub norm: f64,
    pub l: f64,
    pub t: f64,
    pub ll: f64,
    pub tt: f64,
    pub lt: f64,
}

/// Exponentially tilted sums for `lam1 >= lam2 >= 0`, `lam1 > 0`.
pub fn tilted_sums(law: &LoopLaw, h: f64, lam1: f64, lam2: f64) -> TiltSums {
    assert!(lam1 > 0.0 && lam2 >= 0.0 && lam1 >= lam2, "tilt ({lam1}, {lam2})");
    let gap = lam1 - lam2;
    let r = (-gap).exp();
    let b = (-lam2).exp();
    let decay = lam2.max(gap);
    let mut s_end = ((70.0 / decay).ceil() as u64 + 2).min(50_000_000);
    if let Some(end) = law.support_end() {
        s_end = end;
    } else {
        s_end = s_end.max(2);
    }
    let (mut r0, mut r1, mut r2, mut q1, mut q2, mut p) = (r, r, r, r, r, r);
    let mut rs = r * r;
    let mut bs = b * b;
    let mut acc = [CompSum::new(); 6];
    let mut s = 2u64;
    loop {
        let w = law.k(s) * bs;
        if w > 0.0 {
            acc[0].add(w * r0);
            acc[1].add(w * r1);
            acc[2].add(w * q1);
            acc[3].add(w * r2);
            acc[4].add(w * q2);
            acc[5].add(w * p);
        }
        if s >= s_end {
            break;
        }
        let sf = s as f64;
        r0 += rs;
        r1 += sf * rs;
        r2 += sf * sf * rs;
        q2 += 2.0 * q1 + r0;
        q1 += r0;
        p += r1;
        rs *= r;
        bs *= b;
        s += 1;
    }
    if law.has_tail() && lam2 * (s_end as f64) < 745.0 {
        let g0 = r / (1.0 - r);
        let g1 = r / ((1.0 - r) * (1.0 - r));
        let g2 = r * (1.0 + r) / ((1.0 - r) * (1.0 - r) * (1.0 - r));
        let tt0 = law.tail_moment(0, s_end + 1, lam2);
        let tt1 = law.tail_moment(1, s_end + 1, lam2);
        let tt2 = law.tail_moment(2, s_end + 1, lam2);
        acc[0].add(g0 * tt0);
        acc[1].add(g1 * tt0);
        acc[2].add(g0 * tt1 - g1 * tt0);
        acc[3].add(g2 * tt0);
        acc[4].add(if tt2.is_infinite() { f64::INFINITY } else { g0 * tt2 - 2.0 * g1 * tt1 + g2 * tt0 });
        acc[5].add(g1 * tt1 - g2 * tt0);
    }
    let eh = h.exp();
    TiltSums {
        norm: eh * acc[0].value(),
        l: eh * acc[1].value(),
        t: eh * acc[2].value(),
        ll: eh * acc[3].value(),
        tt: eh * acc[4].value(),
        lt: eh * acc[5].value(),
    }
}

/// The tilted law `Khat(n, m) = K(n+m) e^(h - n Nh)` and its summaries.
#[derive(Clone, Debug)]
pub struct TiltedLaw {
    law: LoopLaw,
    pub h: f64,
    pub nh: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub rho: f64,
    pub gamma_c: f64,
    pub alpha2: f64,
    marg: Vec<f64>,
    tail: Vec<f64>,
    sigma_prefix: Vec<f64>,
}

/// Normalization must hold to this tolerance for a tilt to be accepted.
pub const TILT_TOL: f64 = 1e-8;

pub fn build_tilted_law(law: &LoopLaw, h: f64, nh: f64) -> Result<TiltedLaw> {
    if h <= 0.0 {
        return Err(GpsError::NonPositivePinning(h));
    }
    if !(nh > 0.0) {
        return Err(GpsError::StaleTilt(f64::NAN));
    }
    let sums = tilted_sums(law, h, nh, 0.0);
    let off = (sums.norm - 1.0).abs();
    if !(off <= TILT_TOL) {
        return Err(GpsError::StaleTilt(off));
    }
    let mu1 = sums.l;
    let mu2 = sums.t;
    let var1 = (sums.ll - mu1 * mu1).max(0.0);
    let var2 = if sums.tt.is_infinite() { f64::INFINITY } else { (sums.tt - mu2 * mu2).max(0.0) };
    let (sigma1, sigma2) = (var1.sqrt(), var2.sqrt());
    let rho = if sigma1 > 0.0 && sigma2 > 0.0 && sigma2.is_finite() {
        ((sums.lt - mu1 * mu2) / (sigma1 * sigma2)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let alpha2 = if law.has_tail() { (1.0 + law.alpha()).min(2.0) } else { 2.0 };
    let mtab = match law.support_end() {
        Some(end) => end,
        None => law.s_max().max(1 << 14),
    };
    let x = (-nh).exp();
    let mut marg = vec![0.0; mtab as usize + 1];
    for m in 1..=mtab {
        marg[m as usize] = marginal_direct(law, h, x, m);
    }
    let mut tail = vec![0.0; mtab as usize + 1];
    let mut acc = CompSum::new();
    acc.add(tail_beyond(law, h, x, mtab));
    for m in (0..mtab).rev() {
        acc.add(marg[m as usize + 1]);
        tail[m as usize] = acc.value();
    }
    tail[mtab as usize] = tail_beyond(law, h, x, mtab);
    let mut sigma_prefix = vec![0.0; mtab as usize + 1];
    let mut acc = CompSum::new();
    for m in 1..=mtab as usize {
        acc.add((m * m) as f64 * marg[m]);
        sigma_prefix[m] = acc.value();
    }
    Ok(TiltedLaw {
        law: law.clone(),
        h,
        nh,
        mu1,
        mu2,
        sigma1,
        sigma2,
        rho,
        gamma_c: mu2 / mu1,
        alpha2,
        marg,
        tail,
        sigma_prefix,
    })
}

/// `e^h sum_{n >= 1} K(n+m) x^n`
fn marginal_direct(law: &LoopLaw, h: f64, x: f64, m: u64) -> f64 {
    let mut acc = CompSum::new();
    let mut xn = x;
    let mut n = 1u64;
    let end = law.support_end();
    loop {
        if let Some(e) = end {
            if n + m > e {
                break;
            }
        }
        let term = law.k(n + m) * xn;
        acc.add(term);
        if xn < 1e-22 {
            break;
        }
        xn *= x;
        n += 1;
    }
    h.exp() * acc.value()
}

/// `P(tau2 > m)` from the closed form.
fn tail_beyond(law: &LoopLaw, h: f64, x: f64, m: u64) -> f64 {
    let g0 = x / (1.0 - x);
    match law.support_end() {
        Some(end) => {
            let mut acc = CompSum::new();
            for s in (m + 2)..=end {
                acc.add(law.k(s) * -(((s - m - 1) as f64) * x.ln()).exp_m1());
            }
            h.exp() * g0 * acc.value()
        }
        None => {
            // sum_{s >= m+2} K(s) (1 - x^(s-m-1))
            let t0 = law.tail_moment(0, m + 2, 0.0);
            let mut corr = CompSum::new();
            let mut xs = x;
            let mut s = m + 2;
            while xs > 1e-22 {
                corr.add(law.k(s) * xs);
                xs *= x;
                s += 1;
            }
            h.exp() * g0 * (t0 - corr.value())
        }
    }
}

impl TiltedLaw {
    pub fn law(&self) -> &LoopLaw {
        &self.law
    }

    pub fn x(&self) -> f64 {
        (-self.nh).exp()
    }

    /// `Khat(n, m)`
    #[inline]
    pub fn khat(&self, n: u64, m: u64) -> f64 {
        if n == 0 || m == 0 {
            return 0.0;
        }
        self.law.k(n + m) * (self.h - n as f64 * self.nh).exp()
    }

    /// `P(tau2 = m)`
    pub fn marginal2(&self, m: u64) -> f64 {
        if m == 0 {
            return 0.0;
        }
        match self.marg.get(m as usize) {
            Some(&p) => p,
            None => marginal_direct(&self.law, self.h, self.x(), m),
        }
    }

    /// `P(tau2 > m)`
    pub fn tail2(&self, m: u64) -> f64 {
        match self.tail.get(m as usize) {
            Some(&p) => p,
            None => tail_beyond(&self.law, self.h, self.x(), m),
        }
    }

    /// Large-`m` form `e^h L(m) m^-(2+alpha) / (e^Nh - 1)`.
    pub fn marginal2_asymptote(&self, m: f64) -> f64 {
        self.h.exp() * self.law.slow(m) * m.powf(-(2.0 + self.law.alpha())) / self.nh.exp_m1()
    }

    /// Truncated second moment `sigma(n) = E[tau2^2; tau2 <= n]`.
    pub fn sigma_trunc(&self, n: u64) -> f64 {
        let last = self.sigma_prefix.len() as u64 - 1;
        if n <= last {
            return self.sigma_prefix[n as usize];
        }
        let mut acc = CompSum::new();
        acc.add(self.sigma_prefix[last as usize]);
        for m in last + 1..=n {
            let p = self.marginal2(m);
            if p == 0.0 && self.law.support_end().is_some() {
                break;
            }
            acc.add((m as f64).powi(2) * p);
        }
        acc.value()
    }

    /// Scaling sequence `a_n` of the second marginal.
    pub fn scaling_a(&self, n: f64) -> f64 {
        assert!(n >= 1.0);
        let inv = 1.0 / n;
        let pred: Box<dyn Fn(u64) -> bool + '_> = if self.alpha2 < 2.0 {
            Box::new(move |a: u64| {
                let af = a as f64;
                self.law.slow(af) * af.powf(-self.alpha2) <= inv
            })
        } else {
            Box::new(move |a: u64| self.sigma_trunc(a) / (a as f64).powi(2) <= inv)
        };
        doubling_search(pred) as f64
    }

    /// `m_n = min { m : P(tau2 > m) <= 1/n }`.
    pub fn scaling_m(&self, n: f64) -> u64 {
        assert!(n >= 1.0);
        let inv = 1.0 / n;
        doubling_search(|m| self.tail2(m) <= inv)
    }
}

fn doubling_search<F: Fn(u64) -> bool>(pred: F) -> u64 {
    if pred(1) {
        return 1;
    }
    let mut hi = 2u64;
    while !pred(hi) {
        hi *= 2;
        assert!(hi < 1 << 40, "scaling search diverged");
    }
    first_true(hi / 2 + 1, hi, &pred).unwrap_or(hi)
}
