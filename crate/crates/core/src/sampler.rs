//! Exact samplers for the constrained and free polymer measures, forward
//! sampling of the tilted renewal, and Monte Carlo hitting estimators.

use crate::error::{GpsError, Result};
use crate::loop_law::{FreeEndWeights, TiltedLaw};
use crate::partition::PartitionTable;
use crate::scaled::ScaledValue;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, weighted::WeightedAliasIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Deterministic generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Loops in order from the origin plus the two free-end lengths.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub loops: Vec<(u64, u64)>,
    pub v1: u64,
    pub v2: u64,
}

impl Trajectory {
    pub fn totals(&self) -> (u64, u64) {
        self.loops.iter().fold((self.v1, self.v2), |(a, b), &(l, t)| (a + l, b + t))
    }
}

/// Segment tree of scaled sums over one anti-diagonal.
struct RangeTree {
    size: usize,
    nodes: Vec<ScaledValue>,
}

impl RangeTree {
    fn new(vals: &[ScaledValue]) -> Self {
        let size = vals.len().next_power_of_two().max(1);
        let mut nodes = vec![ScaledValue::ZERO; 2 * size];
        nodes[size..size + vals.len()].copy_from_slice(vals);
        for k in (1..size).rev() {
            nodes[k] = nodes[2 * k] + nodes[2 * k + 1];
        }
        Self { size, nodes }
    }

    /// Sum over `lo..=hi`.
    fn sum(&self, lo: usize, hi: usize) -> ScaledValue {
        let (mut l, mut r) = (lo + self.size, hi + self.size + 1);
        let mut acc = ScaledValue::ZERO;
        while l < r {
            if l & 1 == 1 {
                acc += self.nodes[l];
                l += 1;
            }
            if r & 1 == 1 {
                r -= 1;
                acc += self.nodes[r];
            }
            l >>= 1;
            r >>= 1;
        }
        acc
    }
}

/// Backward sampler from any cell of a table.
pub struct ConstrainedSampler<'a> {
    table: &'a PartitionTable,
    diags: Vec<RangeTree>,
}

impl<'a> ConstrainedSampler<'a> {
    pub fn new(table: &'a PartitionTable) -> Self {
        let (n, m) = (table.n(), table.m());
        let diags = (0..=n + m)
            .map(|d| {
                let lo = d.saturating_sub(m);
                let hi = d.min(n);
                let vals: Vec<ScaledValue> = (lo..=hi).map(|i| table.get(i, d - i)).collect();
                RangeTree::new(&vals)
            })
            .collect();
        Self { table, diags }
    }

    pub fn table(&self) -> &PartitionTable {
        self.table
    }

    /// Draws the loop sequence of a constrained polymer ending at `(n, m)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: u64, m: u64, rng: &mut R) -> Result<Trajectory> {
        if n > self.table.n() || m > self.table.m() {
            return Err(GpsError::OutOfTable(format!("({n}, {m})")));
        }
        if self.table.get(n, m).is_zero() {
            return Err(GpsError::Sampling(format!("Z({n}, {m}) = 0")));
        }
        let mut loops = Vec::new();
        let (mut a, mut b) = (n, m);
        while a > 0 || b > 0 {
            let (l, t) = self.step(a, b, rng)?;
            loops.push((l, t));
            a -= l;
            b -= t;
        }
        loops.reverse();
        Ok(Trajectory { loops, v1: 0, v2: 0 })
    }

    fn step<R: Rng + ?Sized>(&self, n: u64, m: u64, rng: &mut R) -> Result<(u64, u64)> {
        let target = self.table.get(n, m);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_s = None;
        let mtop = self.table.m();
        for s in 2..=n + m {
            let kw = self.table.loop_weight(s);
            if kw == 0.0 {
                continue;
            }
            let l_lo = 1.max(s.saturating_sub(m));
            let l_hi = n.min(s - 1);
            if l_lo > l_hi {
                continue;
            }
            let d = n + m - s;
            let base = d.saturating_sub(mtop);
            // l runs opposite to the row index i = n - l
            let (i_lo, i_hi) = (n - l_hi, n - l_lo);
            let seg = self.diags[d as usize].sum((i_lo - base) as usize, (i_hi - base) as usize);
            if seg.is_zero() {
                continue;
            }
            let w = seg.mul_f64(kw).ratio(&target);
            if acc + w >= u {
                return Ok(self.pick(n, m, s, kw, &target, u - acc));
            }
            acc += w;
            last_s = Some((s, kw));
        }
        // rounding left u above the running total
        match last_s {
            Some((s, kw)) => Ok(self.pick(n, m, s, kw, &target, f64::INFINITY)),
            None => Err(GpsError::Sampling(format!("no predecessor of ({n}, {m})"))),
        }
    }

    /// Chooses `l` within loop length `s` once the residual mass `u` is known.
    fn pick(&self, n: u64, m: u64, s: u64, kw: f64, target: &ScaledValue, u: f64) -> (u64, u64) {
        let l_lo = 1.max(s.saturating_sub(m));
        let l_hi = n.min(s - 1);
        let mut inner = 0.0;
        let mut last = (l_lo, s - l_lo);
        for l in l_lo..=l_hi {
            let z = self.table.get(n - l, m - (s - l));
            if z.is_zero() {
                continue;
            }
            inner += z.mul_f64(kw).ratio(target);
            last = (l, s - l);
            if inner >= u {
                break;
            }
        }
        last
    }
}

/// Sampler of the free measure: free ends first, then the constrained part.
pub struct FreeSampler<'a> {
    inner: ConstrainedSampler<'a>,
    cdf: Vec<f64>,
    cells: Vec<(u64, u64)>,
}

impl<'a> FreeSampler<'a> {
    pub fn new(table: &'a PartitionTable, fw: &FreeEndWeights) -> Result<Self> {
        let (n, m) = (table.n(), table.m());
        let mut w = Vec::with_capacity(((n + 1) * (m + 1)) as usize);
        let mut cells = Vec::with_capacity(w.capacity());
        let mut top = ScaledValue::ZERO;
        for i in 0..=n {
            for j in 0..=m {
                let z = table.get(n - i, m - j);
                if z.is_zero() {
                    continue;
                }
                let v = z.mul_f64(fw.kf(i) * fw.kf(j));
                if v > top {
                    top = v;
                }
                w.push(v);
                cells.push((i, j));
            }
        }
        if w.is_empty() {
            return Err(GpsError::Sampling("free measure has no mass".into()));
        }
        let mut cdf = Vec::with_capacity(w.len());
        let mut acc = 0.0;
        for v in &w {
            acc += v.ratio(&top);
            cdf.push(acc);
        }
        Ok(Self { inner: ConstrainedSampler::new(table), cdf, cells })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Trajectory> {
        let total = *self.cdf.last().unwrap();
        let u = rng.random::<f64>() * total;
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let (i, j) = self.cells[k];
        let t = self.inner.table();
        let mut tr = self.inner.sample(t.n() - i, t.m() - j, rng)?;
        tr.v1 = i;
        tr.v2 = j;
        Ok(tr)
    }
}

/// Constrained-polymer draws ending at the table corner.
pub fn sample_constrained(table: &PartitionTable, n_samples: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let s = ConstrainedSampler::new(table);
    draw_parallel(n_samples, seed, |rng| s.sample(table.n(), table.m(), rng))
}

pub fn sample_free(table: &PartitionTable, fw: &FreeEndWeights, n_samples: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let s = FreeSampler::new(table, fw)?;
    draw_parallel(n_samples, seed, |rng| s.sample(rng))
}

const CHUNK: usize = 1024;

fn draw_parallel<F>(n_samples: usize, seed: u64, f: F) -> Result<Vec<Trajectory>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Trajectory> + Sync,
{
    let chunks = n_samples.div_ceil(CHUNK);
    let parts: Vec<Result<Vec<Trajectory>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n_samples);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Forward sampler of single increments of the tilted renewal.
pub struct TiltedSampler {
    alias: WeightedAliasIndex<f64>,
    pairs: Vec<(u64, u64)>,
    s_small: u64,
    s_table: u64,
    ln_x: f64,
    tl: TiltedLaw,
}

enum Outcome {
    Pair(u64, u64),
    Length(u64),
    Tail,
}

impl TiltedSampler {
    pub fn new(tl: &TiltedLaw) -> Result<Self> {
        let law = tl.law();
        let x = tl.x();
        let eh = tl.h.exp();
        let s_table = match law.support_end() {
            Some(e) => e,
            None => law.s_max().max((60.0 / tl.nh).ceil() as u64).max(64),
        };
        let s_small = 48.min(s_table);
        let mut weights = Vec::new();
        let mut pairs = Vec::new();
        for s in 2..=s_small {
            let k = law.k(s);
            for l in 1..s {
                weights.push(eh * k * x.powi(l as i32));
                pairs.push((l, s - l));
            }
        }
        for s in s_small + 1..=s_table {
            let r0 = -((s - 1) as f64 * x.ln()).exp_m1() * x / (1.0 - x);
            weights.push(eh * law.k(s) * r0);
        }
        if law.support_end().is_none() {
            weights.push(eh * x / (1.0 - x) * law.tail_moment(0, s_table + 1, 0.0));
        }
        let alias = WeightedAliasIndex::new(weights).map_err(|e| GpsError::Sampling(e.to_string()))?;
        Ok(Self { alias, pairs, s_small, s_table, ln_x: x.ln(), tl: tl.clone() })
    }

    pub fn tilted(&self) -> &TiltedLaw {
        &self.tl
    }

    fn outcome(&self, k: usize) -> Outcome {
        if k < self.pairs.len() {
            let (l, t) = self.pairs[k];
            return Outcome::Pair(l, t);
        }
        let s = self.s_small + 1 + (k - self.pairs.len()) as u64;
        if s <= self.s_table {
            Outcome::Length(s)
        } else {
            Outcome::Tail
        }
    }

    /// `l` given the loop length `s`, with `P(l) ~ x^l` on `1..s`.
    fn split<R: Rng + ?Sized>(&self, s: u64, rng: &mut R) -> (u64, u64) {
        let c = -(((s - 1) as f64) * self.ln_x).exp_m1();
        let u: f64 = rng.random();
        let l = ((-u * c).ln_1p() / self.ln_x).ceil().clamp(1.0, (s - 1) as f64) as u64;
        (l, s - l)
    }

    fn tail_length<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let law = self.tl.law();
        let total = law.tail_moment(0, self.s_table + 1, 0.0);
        let u: f64 = rng.random();
        let goal = u * total;
        // smallest s with T(s + 1) <= goal, T(s) = sum_{r >= s} K(r)
        let mut hi = 2 * (self.s_table + 1);
        while law.tail_moment(0, hi + 1, 0.0) > goal {
            hi *= 2;
        }
        crate::numerics::first_true(self.s_table + 1, hi, |s| law.tail_moment(0, s + 1, 0.0) <= goal).unwrap_or(hi)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        match self.outcome(self.alias.sample(rng)) {
            Outcome::Pair(l, t) => (l, t),
            Outcome::Length(s) => self.split(s, rng),
            Outcome::Tail => {
                let s = self.tail_length(rng);
                self.split(s, rng)
            }
        }
    }
}

/// One increment of the tilted renewal.
pub fn sample_tilted_increment<R: Rng + ?Sized>(sampler: &TiltedSampler, rng: &mut R) -> (u64, u64) {
    sampler.sample(rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMethod {
    Naive,
    OneJump,
}

#[derive(Clone, Debug, Serialize)]
pub struct HitEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub n: u64,
    pub method: HitMethod,
    pub exact: Option<f64>,
}

const EST_CHUNK: u64 = 1 << 15;

/// Per-chunk running moments.
#[derive(Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum2 += v * v;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments { n: self.n + o.n, sum: self.sum + o.sum, sum2: self.sum2 + o.sum2 }
    }

    fn mean_se(&self) -> (f64, f64) {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 { ((self.sum2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        (mean, (var / n).sqrt())
    }
}

fn run_chunks<F>(n_samples: u64, seed: u64, stream_base: u64, f: F) -> Moments
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let chunks = n_samples.div_ceil(EST_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, stream_base + c);
            let len = EST_CHUNK.min(n_samples - c * EST_CHUNK);
            let mut mo = Moments::default();
            for _ in 0..len {
                mo.push(f(&mut rng));
            }
            mo
        })
        .reduce(Moments::default, Moments::merge)
}

/// Walks from the origin; returns whether `(n, m)` is hit and how many
/// second-coordinate increments exceed `cap`.
#[inline]
fn walk<R: Rng + ?Sized>(s: &TiltedSampler, n: u64, m: u64, cap: u64, rng: &mut R) -> (bool, u32) {
    let (mut a, mut b, mut big) = (0u64, 0u64, 0u32);
    loop {
        let (l, t) = s.sample(rng);
        a += l;
        b += t;
        if t > cap {
            big += 1;
        }
        if a >= n || b >= m {
            return (a == n && b == m, big);
        }
    }
}

/// Plain Monte Carlo estimate of `P((N, M) in tau)`.
pub fn estimate_hit_naive(sampler: &TiltedSampler, n: u64, m: u64, n_samples: u64, seed: u64) -> Result<HitEstimate> {
    if n == 0 || m == 0 {
        return Err(GpsError::EmptyTarget(n, m));
    }
    if n_samples == 0 {
        return Err(GpsError::OutOfDomain("need at least one sample".into()));
    }
    let mo = run_chunks(n_samples, seed, 0, |rng| if walk(sampler, n, m, u64::MAX, rng).0 { 1.0 } else { 0.0 });
    let p = mo.sum / n_samples as f64;
    Ok(HitEstimate {
        p_hat: p,
        stderr: (p * (1.0 - p) / n_samples as f64).sqrt(),
        n: n_samples,
        method: HitMethod::Naive,
        exact: None,
    })
}

/// Estimator restricted to the one-big-jump event.
#[derive(Clone, Copy, Debug)]
pub enum JumpCap {
    /// No restriction: sums the tilted kernel over the gap after every step.
    Unrestricted,
    /// Explicit cap `c` on ordinary second-coordinate increments.
    Fixed(u64),
    /// `c = ceil(m_N / eps)`
    FromScale(f64),
}

/// Estimates `P((N, M) in tau)` by conditioning on the big jump.
///
/// With a cap `c`, the walk is restricted to increments with `t <= c` and the
/// big jump is integrated out exactly; the complement (zero or several big
/// increments) is estimated with plain paths on an independent substream.
pub fn estimate_hit_onejump(
    sampler: &TiltedSampler,
    n: u64,
    m: u64,
    n_samples: u64,
    seed: u64,
    cap: JumpCap,
) -> Result<HitEstimate> {
    let tl = sampler.tilted();
    let t_n = m as f64 - tl.gamma_c * n as f64;
    if !(t_n > 0.0) {
        return Err(GpsError::OutOfDomain(format!("t_N = {t_n} must be positive")));
    }
    if n_samples == 0 {
        return Err(GpsError::OutOfDomain("need at least one sample".into()));
    }
    let c = match cap {
        JumpCap::Unrestricted => {
            let mo = run_chunks(n_samples, seed, 0, |rng| {
                let (mut a, mut b, mut v) = (0u64, 0u64, 0.0);
                while a < n && b < m {
                    v += tl.khat(n - a, m - b);
                    let (l, t) = sampler.sample(rng);
                    a += l;
                    b += t;
                }
                v
            });
            let (p, se) = mo.mean_se();
            return Ok(HitEstimate { p_hat: p, stderr: se, n: n_samples, method: HitMethod::OneJump, exact: None });
        }
        JumpCap::Fixed(c) => c,
        JumpCap::FromScale(eps) => (tl.scaling_m(n as f64) as f64 / eps).ceil() as u64,
    };
    let q = 1.0 - tl.tail2(c);
    let restricted = run_chunks(n_samples, seed, 0, |rng| {
        let (mut a, mut b, mut v, mut w) = (0u64, 0u64, 0.0, 1.0);
        let mut i = 0u64;
        while a < n && b + c < m {
            v += (i + 1) as f64 * w * tl.khat(n - a, m - b);
            let (l, t) = loop {
                let x = sampler.sample(rng);
                if x.1 <= c {
                    break x;
                }
            };
            a += l;
            b += t;
            i += 1;
            w *= q;
        }
        v
    });
    let other = run_chunks(n_samples, seed, 1 << 40, |rng| {
        let (hit, big) = walk(sampler, n, m, c, rng);
        if hit && big != 1 {
            1.0
        } else {
            0.0
        }
    });
    let (p1, s1) = restricted.mean_se();
    let (p2, s2) = other.mean_se();
    Ok(HitEstimate {
        p_hat: p1 + p2,
        stderr: (s1 * s1 + s2 * s2).sqrt(),
        n: n_samples,
        method: HitMethod::OneJump,
        exact: None,
    })
}
