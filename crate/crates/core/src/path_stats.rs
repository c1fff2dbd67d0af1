//! Trajectory summaries, the big-loop / unbound-strand / mixed events, and
//! the ratio formulas that predict their probabilities.

use crate::error::{GpsError, Result};
use crate::loop_law::{FreeEndWeights, TiltedLaw};
use crate::sampler::Trajectory;
use serde::Serialize;

/// Order statistics of one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PathSummary {
    pub kappa: u64,
    pub m1: u64,
    pub m2: u64,
    pub v1: u64,
    pub v2: u64,
    pub total_l: u64,
    pub total_t: u64,
}

pub fn summarize(tr: &Trajectory) -> PathSummary {
    let (mut m1, mut m2) = (0u64, 0u64);
    let (mut tl, mut tt) = (0u64, 0u64);
    for &(l, t) in &tr.loops {
        tl += l;
        tt += t;
        if t > m1 {
            m2 = m1;
            m1 = t;
        } else if t > m2 {
            m2 = t;
        }
    }
    PathSummary { kappa: tr.loops.len() as u64, m1, m2, v1: tr.v1, v2: tr.v2, total_l: tl, total_t: tt }
}

/// How the caps of an [`EventSpec`] are derived from `m_N`, `a_N` and `t_N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceRule {
    /// `u = ceil(log N)`, caps `ceil(base * log N)`
    LogMultiplier,
    /// `u = ceil(log N)`, caps `ceil(sqrt(base * t_N))`
    GeometricMean,
}

/// Window `(v_N, eps_N)` of the mixed event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixedWindow {
    pub v_n: u64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventSpec {
    pub n: u64,
    pub t_n: u64,
    pub u_n: u64,
    pub m_n: u64,
    pub a_n: f64,
    pub m_plus: u64,
    pub a_plus: u64,
    pub a_tilde_plus: u64,
    pub rule: SequenceRule,
    pub mixed: Option<MixedWindow>,
}

/// `t_N = ceil(M - gamma_c N)`
pub fn excess_length(tl: &TiltedLaw, n: u64, m: u64) -> Result<u64> {
    let t = m as f64 - tl.gamma_c * n as f64;
    if !(t > 0.0) {
        return Err(GpsError::OutOfDomain(format!("t_N = {t} must be positive")));
    }
    Ok(t.ceil() as u64)
}

/// Caps from the logarithmic rule.
pub fn default_event_spec(tl: &TiltedLaw, n: u64, m: u64) -> Result<EventSpec> {
    event_spec_with_rule(tl, n, m, SequenceRule::LogMultiplier)
}

pub fn event_spec_with_rule(tl: &TiltedLaw, n: u64, m: u64, rule: SequenceRule) -> Result<EventSpec> {
    let t = excess_length(tl, n, m)?;
    let nf = n as f64;
    let logn = nf.ln();
    let m_n = tl.scaling_m(nf);
    let a_n = tl.scaling_a(nf);
    let u_n = logn.ceil().max(1.0) as u64;
    let (m_plus, a_plus) = match rule {
        SequenceRule::LogMultiplier => ((m_n as f64 * logn).ceil() as u64, (a_n * logn).ceil() as u64),
        SequenceRule::GeometricMean => (
            ((m_n as f64 * t as f64).sqrt()).ceil() as u64,
            ((a_n * t as f64).sqrt()).ceil() as u64,
        ),
    };
    let spec = EventSpec { n, t_n: t, u_n, m_n, a_n, m_plus, a_plus, a_tilde_plus: a_plus, rule, mixed: None };
    check_orderings(&spec)?;
    Ok(spec)
}

fn check_orderings(s: &EventSpec) -> Result<()> {
    let mut bad = Vec::new();
    if s.u_n < 1 {
        bad.push("u_N >= 1".to_string());
    }
    if s.m_plus <= s.m_n {
        bad.push(format!("m+ = {} > m_N = {}", s.m_plus, s.m_n));
    }
    if (s.a_plus as f64) <= s.a_n {
        bad.push(format!("a+ = {} > a_N = {}", s.a_plus, s.a_n));
    }
    for (name, v) in [("m+", s.m_plus), ("a+", s.a_plus), ("a~+", s.a_tilde_plus)] {
        if v >= s.t_n {
            bad.push(format!("t_N = {} > {name} = {v}", s.t_n));
        }
    }
    // BL and US stay disjoint through V2 even when the M1 windows overlap
    if s.u_n + s.a_tilde_plus >= s.t_n {
        bad.push(format!("u_N + a~+ = {} < t_N = {}", s.u_n + s.a_tilde_plus, s.t_n));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(GpsError::SpecInfeasible(format!("N = {}: need {}", s.n, bad.join(", "))))
    }
}

/// Smallest `eps = 2^-k` (`k >= 1`) with `Kbar(eps t) >= (1 - 1/log N) Kbar(t)` and
/// `Kbar(v_N) <= Kbar(eps t) / log N`, where `v_N = ceil((log N)^2)`.
pub fn default_mixed_window(fw: &FreeEndWeights, n: u64, t_n: u64) -> Result<MixedWindow> {
    let logn = (n as f64).ln();
    let v_n = (logn * logn).ceil() as u64;
    let kt = fw.kbar(t_n);
    let kv = fw.kbar(v_n);
    let ok = |eps: f64| {
        let ke = fw.kbar((eps * t_n as f64).floor() as u64);
        ke >= (1.0 - 1.0 / logn) * kt && kv <= ke / logn
    };
    let mut best = None;
    for k in 1..=60 {
        let eps = 0.5f64.powi(k);
        if eps * (t_n as f64) < v_n as f64 {
            break;
        }
        if ok(eps) {
            best = Some(eps);
        } else {
            break;
        }
    }
    match best {
        Some(eps) => Ok(MixedWindow { v_n, eps }),
        None => Err(GpsError::SpecInfeasible(format!(
            "no mixed window at N = {n}, t_N = {t_n}: Kbar(v_N = {v_n}) = {kv:.3} against Kbar(t_N) / log N = {:.3}",
            kt / logn
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Bl0,
    Bl,
    Us,
    Mixed,
    Other,
}

fn within(x: u64, centre: u64, half: u64) -> bool {
    x + half >= centre && x <= centre + half
}

pub fn is_bl(ps: &PathSummary, s: &EventSpec) -> bool {
    within(ps.m1, s.t_n, s.a_plus) && ps.m2 < s.m_plus && ps.v1.max(ps.v2) <= s.u_n
}

pub fn is_us(ps: &PathSummary, s: &EventSpec) -> bool {
    ps.m1 < s.m_plus && ps.v1 <= s.u_n && within(ps.v2, s.t_n, s.a_tilde_plus)
}

pub fn is_mixed(ps: &PathSummary, s: &EventSpec) -> bool {
    let Some(w) = s.mixed else { return false };
    let t = s.t_n as f64;
    let r = ps.m1 as f64 / t;
    (1.0 - w.eps..=1.0 + w.eps).contains(&r)
        && ps.m2 < s.m_plus
        && ps.v1 <= s.u_n
        && ps.v2 >= w.v_n
        && (ps.v2 as f64) <= w.eps * t
}

/// Single label with precedence `BL0`, `BL`, `US`, mixed, other.
pub fn classify_event(ps: &PathSummary, s: &EventSpec) -> EventClass {
    if is_bl(ps, s) {
        if ps.v1 == 0 && ps.v2 == 0 {
            EventClass::Bl0
        } else {
            EventClass::Bl
        }
    } else if is_us(ps, s) {
        EventClass::Us
    } else if is_mixed(ps, s) {
        EventClass::Mixed
    } else {
        EventClass::Other
    }
}

/// Point estimate with a Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proportion {
    pub p: f64,
    pub lo: f64,
    pub hi: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

pub fn wilson(k: u64, n: u64) -> Proportion {
    assert!(n > 0 && k <= n);
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    Proportion { p, lo: (centre - half).max(0.0), hi: (centre + half).min(1.0) }
}

/// `p_bl` counts `BL0` as well; `p_bl0` is the sub-event.
#[derive(Clone, Debug, Serialize)]
pub struct EventProbs {
    pub p_bl: Proportion,
    pub p_us: Proportion,
    pub p_mixed: Proportion,
    pub p_other: Proportion,
    pub p_bl0: Proportion,
    pub n_samples: u64,
}

impl EventProbs {
    /// Odds `P(a) / P(b)` from counts; infinite when `b` was never seen.
    pub fn odds(a: &Proportion, b: &Proportion) -> f64 {
        if b.p == 0.0 {
            if a.p == 0.0 {
                f64::NAN
            } else {
                f64::INFINITY
            }
        } else {
            a.p / b.p
        }
    }
}

pub fn empirical_event_probs(samples: &[PathSummary], s: &EventSpec) -> Result<EventProbs> {
    if samples.is_empty() {
        return Err(GpsError::OutOfDomain("no samples".into()));
    }
    let mut c = [0u64; 5];
    for ps in samples {
        c[classify_event(ps, s) as usize] += 1;
    }
    let n = samples.len() as u64;
    Ok(EventProbs {
        p_bl: wilson(c[0] + c[1], n),
        p_us: wilson(c[2], n),
        p_mixed: wilson(c[3], n),
        p_other: wilson(c[4], n),
        p_bl0: wilson(c[0], n),
        n_samples: n,
    })
}

/// Ratio and the probabilities it predicts for the two competing events.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Prediction {
    pub ratio: f64,
    pub p_first: f64,
    pub p_us: f64,
}

impl Prediction {
    fn from_ratio(q: f64) -> Self {
        Prediction { ratio: q, p_first: q / (1.0 + q), p_us: 1.0 / (1.0 + q) }
    }
}

/// `c_h = e^h sum_{j >= 0} K_f(j) / (mu1 (e^Nh - 1))`
pub fn c_h(fw: &FreeEndWeights, tl: &TiltedLaw) -> Result<f64> {
    let total = fw
        .total()
        .ok_or_else(|| GpsError::WrongBranch("sum of K_f is infinite".into()))?;
    Ok(tl.h.exp() * (1.0 + total) / (tl.mu1 * tl.nh.exp_m1()))
}

/// `Q_N = c_h N t^(alpha_bar - 2 - alpha) L(t) / Lbar(t)`
pub fn theoretical_qn(fw: &FreeEndWeights, tl: &TiltedLaw, n: u64, t_n: f64) -> Result<Prediction> {
    let ch = c_h(fw, tl)?;
    let law = tl.law();
    let q = ch * n as f64 * t_n.powf(fw.spec().alpha_bar - 2.0 - law.alpha()) * law.slow(t_n) / fw.slow(t_n);
    Ok(Prediction::from_ratio(q))
}

/// `(N / mu1) P(tau2 = t) Kbar(t) / K_f(t)` on the `alpha_bar = 1`, `sum K_f = inf` branch.
pub fn theoretical_tilde_qn(fw: &FreeEndWeights, tl: &TiltedLaw, n: u64, t_n: f64) -> Result<Prediction> {
    if !(fw.spec().alpha_bar == 1.0 && !fw.is_summable()) {
        return Err(GpsError::WrongBranch("needs alpha_bar = 1 with infinite sum of K_f".into()));
    }
    let t = t_n.ceil() as u64;
    let q = n as f64 / tl.mu1 * tl.marginal2(t) * fw.kbar(t) / fw.kf(t);
    Ok(Prediction::from_ratio(q))
}
