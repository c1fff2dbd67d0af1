//! Small numerical kernels: compensated sums, Gauss-Legendre panels and
//! Euler-Maclaurin tails of `L(s) s^-p e^(-lambda s)`.

use std::sync::OnceLock;

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompSum {
    sum: f64,
    comp: f64,
}

impl CompSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        if !self.sum.is_finite() {
            return self.sum;
        }
        self.sum + self.comp
    }
}

/// Slowly varying factor `L(x)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", content = "beta", rename_all = "snake_case")]
pub enum SlowVar {
    /// `L = 1`
    Constant,
    /// `L(x) = ln(e + x)^beta`
    LogPower(f64),
}

impl SlowVar {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SlowVar::Constant => 1.0,
            SlowVar::LogPower(b) => (std::f64::consts::E + x).ln().powf(b),
        }
    }

    pub fn beta(&self) -> f64 {
        match *self {
            SlowVar::Constant => 0.0,
            SlowVar::LogPower(b) => b,
        }
    }
}

const GL_ORDER: usize = 16;

fn gauss_legendre() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static NODES: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_ORDER;
        let mut x = [0.0; GL_ORDER];
        let mut w = [0.0; GL_ORDER];
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

/// Integral of `f` over `[a, b]` with one 16-point Gauss-Legendre panel.
pub fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (x, w) = gauss_legendre();
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut s = 0.0;
    for i in 0..GL_ORDER {
        s += w[i] * f(c + r * x[i]);
    }
    s * r
}

#[inline]
fn term(sv: SlowVar, p: f64, lambda: f64, s: f64) -> f64 {
    let base = sv.eval(s) * s.powf(-p);
    if lambda > 0.0 {
        base * (-lambda * s).exp()
    } else {
        base
    }
}

const EM_START: u64 = 256;

/// `sum_{s >= a} L(s) s^-p exp(-lambda s)` for `a >= 1`.
///
/// Returns `+inf` when the series diverges (`lambda = 0`, `p <= 1`).
pub fn tail_sum(sv: SlowVar, p: f64, a: u64, lambda: f64) -> f64 {
    assert!(a >= 1 && lambda >= 0.0);
    if lambda == 0.0 && (p < 1.0 || (p == 1.0 && sv.beta() >= -1.0)) {
        return f64::INFINITY;
    }
    if lambda * a as f64 > 745.0 {
        return 0.0;
    }
    let mut acc = CompSum::new();
    if lambda > 6e-5 {
        // geometric damping: direct summation converges quickly
        let first = term(sv, p, lambda, a as f64);
        acc.add(first);
        let mut s = a + 1;
        loop {
            let t = term(sv, p, lambda, s as f64);
            acc.add(t);
            if t < 1e-22 * acc.value() || t == 0.0 {
                break;
            }
            s += 1;
        }
        return acc.value();
    }
    let b = a.max(EM_START);
    for s in a..b {
        acc.add(term(sv, p, lambda, s as f64));
    }
    let bf = b as f64;
    let f = term(sv, p, lambda, bf);
    let beta = sv.beta();
    let u = (std::f64::consts::E + bf).ln();
    let r = 1.0 / (std::f64::consts::E + bf);
    let phi = beta * r / u - p / bf - lambda;
    let phi1 = -beta * r * r * (1.0 / u + 1.0 / (u * u)) + p / (bf * bf);
    let phi2 = beta * r * r * r * (2.0 / u + 3.0 / (u * u) + 2.0 / (u * u * u)) - 2.0 * p / (bf * bf * bf);
    let d1 = f * phi;
    let d3 = f * (phi * phi * phi + 3.0 * phi * phi1 + phi2);
    acc.add(integral_tail(sv, p, lambda, bf));
    acc.add(0.5 * f);
    acc.add(-d1 / 12.0);
    acc.add(d3 / 720.0);
    acc.value()
}

/// `int_b^inf L(x) x^-p exp(-lambda x) dx`
fn integral_tail(sv: SlowVar, p: f64, lambda: f64, b: f64) -> f64 {
    if sv.beta() == 0.0 && lambda == 0.0 {
        return b.powf(1.0 - p) / (p - 1.0);
    }
    if lambda == 0.0 && p == 1.0 {
        // v = ln(e + x): int v^beta dv + e int v^beta / (e^v - e) dv
        let beta = sv.beta();
        let v0 = (std::f64::consts::E + b).ln();
        let head = -v0.powf(beta + 1.0) / (beta + 1.0);
        let g = |v: f64| std::f64::consts::E * v.powf(beta) / (v.exp() - std::f64::consts::E);
        let mut acc = CompSum::new();
        let mut v = v0;
        loop {
            let piece = gl_panel(&g, v, v + 1.0);
            acc.add(piece);
            v += 1.0;
            if piece < 1e-18 * acc.value() {
                break;
            }
        }
        return head + acc.value();
    }
    // x = b e^y
    let g = |y: f64| {
        let x = b * y.exp();
        sv.eval(x) * x.powf(1.0 - p) * (-lambda * x).exp()
    };
    let mut acc = CompSum::new();
    let mut y = 0.0f64;
    for _ in 0..100_000 {
        let rate = (p - 1.0) + lambda * b * y.exp();
        let w = (1.0 / rate.max(0.05)).min(1.0);
        let piece = gl_panel(&g, y, y + w);
        acc.add(piece);
        y += w;
        if piece.abs() < 1e-18 * acc.value().abs() && rate * w > 0.0 && y > 4.0 {
            break;
        }
    }
    acc.value()
}

/// Smallest integer `x` in `[lo, hi]` with `pred(x)` true, assuming monotonicity.
pub fn first_true<F: FnMut(u64) -> bool>(mut lo: u64, mut hi: u64, mut pred: F) -> Option<u64> {
    if !pred(hi) {
        return None;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn comp_sum_keeps_infinity() {
        let mut c = CompSum::new();
        c.add(1.0);
        c.add(f64::INFINITY);
        c.add(-3.0);
        assert_eq!(c.value(), f64::INFINITY);
    }

    #[test]
    fn zeta_values() {
        // Riemann zeta at 1.5 and 2.5
        assert_relative_eq!(tail_sum(SlowVar::Constant, 1.5, 1, 0.0), 2.612_375_348_685_488, max_relative = 1e-13);
        assert_relative_eq!(tail_sum(SlowVar::Constant, 2.5, 1, 0.0), 1.341_487_257_250_917_2, max_relative = 1e-13);
        assert_relative_eq!(tail_sum(SlowVar::Constant, 2.0, 1, 0.0), std::f64::consts::PI.powi(2) / 6.0, max_relative = 1e-13);
    }

    #[test]
    fn log_power_tail_difference_matches_direct_sum() {
        for &(beta, p) in &[(1.5, 2.5), (-2.0, 1.7), (3.0, 3.2)] {
            let sv = SlowVar::LogPower(beta);
            let a = 5u64;
            let span = 200_000u64;
            let mut direct = CompSum::new();
            for s in a..a + span {
                direct.add(sv.eval(s as f64) * (s as f64).powf(-p));
            }
            let diff = tail_sum(sv, p, a, 0.0) - tail_sum(sv, p, a + span, 0.0);
            assert_relative_eq!(diff, direct.value(), max_relative = 1e-12);
        }
    }

    #[test]
    fn damped_tails_match_direct_sum() {
        let sv = SlowVar::LogPower(0.7);
        for &lambda in &[1e-5, 3e-5, 1e-3, 0.3] {
            let a = 40u64;
            let mut direct = CompSum::new();
            let mut s = a;
            loop {
                let t = sv.eval(s as f64) * (s as f64).powf(-0.8) * (-lambda * s as f64).exp();
                direct.add(t);
                if t < 1e-24 {
                    break;
                }
                s += 1;
            }
            assert_relative_eq!(tail_sum(sv, 0.8, a, lambda), direct.value(), max_relative = 1e-11);
        }
    }

    #[test]
    fn harmonic_log_tail_converges_for_steep_logs() {
        let sv = SlowVar::LogPower(-2.5);
        let a = 3u64;
        let span = 300_000u64;
        let mut direct = CompSum::new();
        for s in a..a + span {
            direct.add(sv.eval(s as f64) / s as f64);
        }
        let diff = tail_sum(sv, 1.0, a, 0.0) - tail_sum(sv, 1.0, a + span, 0.0);
        assert_relative_eq!(diff, direct.value(), max_relative = 1e-11);
        assert!(tail_sum(SlowVar::LogPower(-1.0), 1.0, 3, 0.0).is_infinite());
    }

    #[test]
    fn divergent_series_flagged() {
        assert!(tail_sum(SlowVar::Constant, 1.0, 3, 0.0).is_infinite());
    }

    #[test]
    fn first_true_bisects() {
        assert_eq!(first_true(0, 100, |x| x * x >= 50), Some(8));
        assert_eq!(first_true(0, 5, |x| x > 10), None);
    }
}
