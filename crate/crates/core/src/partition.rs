//! Constrained and free partition functions on the integer lattice.
//!
//! `Z(n, m) = e^h sum_{l, t >= 1} K(l+t) Z(n-l, m-t)` with `Z(0, 0) = 1`.
//! The fast evaluator sweeps columns and keeps, for every source row `i`, the
//! running convolution `W_i(D) = sum_{j < m} e^h K(D - j) Z(i, j)` indexed by
//! the anti-diagonal offset `D = n - i + m`. Each cell then reads as
//! `Z(n, m) = sum_{i < n} W_i(n - i + m)`. Only additions of non-negative
//! numbers are involved, so the relative error stays at rounding level.

use crate::error::{GpsError, Result};
use crate::loop_law::{FreeEndWeights, LoopLaw, TiltedLaw};
use crate::scaled::{ldexp, ScaledValue};
use rayon::prelude::*;
use serde::Serialize;
use std::io::{Read, Write};

const BLOCK: usize = 64;
const EMPTY: i64 = i64::MIN;
const RESCALE_AT: i64 = 200;

/// Full table `Z(n, m)` for `0 <= n <= N`, `0 <= m <= M`.
#[derive(Clone, Debug)]
pub struct PartitionTable {
    n: u64,
    m: u64,
    h: f64,
    loop_cap: Option<u64>,
    cells: Vec<ScaledValue>,
    kw: Vec<f64>,
}

impl PartitionTable {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn loop_cap(&self) -> Option<u64> {
        self.loop_cap
    }

    #[inline]
    pub fn get(&self, n: u64, m: u64) -> ScaledValue {
        debug_assert!(n <= self.n && m <= self.m);
        self.cells[(n * (self.m + 1) + m) as usize]
    }

    /// `ln Z(n, m)`
    pub fn ln(&self, n: u64, m: u64) -> f64 {
        self.get(n, m).ln()
    }

    /// `e^h K(s)` with the loop cap applied.
    #[inline]
    pub fn loop_weight(&self, s: u64) -> f64 {
        self.kw.get(s as usize).copied().unwrap_or(0.0)
    }

    pub fn cells(&self) -> &[ScaledValue] {
        &self.cells
    }
}

fn loop_weights(law: &LoopLaw, h: f64, smax: u64, cap: Option<u64>) -> Vec<f64> {
    let eh = h.exp();
    (0..=smax)
        .map(|s| if cap.map_or(false, |b| s > b) { 0.0 } else { eh * law.k(s) })
        .collect()
}

fn check_args(n: u64, m: u64, cap: Option<u64>) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(GpsError::EmptyTarget(n, m));
    }
    if let Some(b) = cap {
        if b < 2 {
            return Err(GpsError::InvalidCap(b));
        }
    }
    if (n + 1).saturating_mul(m + 1) > 400_000_000 {
        return Err(GpsError::Budget(format!("table {}x{} too large", n + 1, m + 1)));
    }
    Ok(())
}

/// Row `i` of the running convolution, split into blocks with private exponents.
struct ConvRow {
    vals: Vec<f64>,
    exps: Vec<i64>,
}

impl ConvRow {
    fn new(len: usize) -> Self {
        Self { vals: vec![0.0; len], exps: vec![EMPTY; len.div_ceil(BLOCK)] }
    }

    /// `vals[d] += kw[d - off] * z` for `d` in `lo..hi`.
    fn add(&mut self, lo: usize, hi: usize, kw: &[f64], off: usize, z: ScaledValue) {
        let (zm, ze) = (z.mantissa(), z.exponent());
        let mut d = lo;
        while d < hi {
            let b = d / BLOCK;
            let end = ((b + 1) * BLOCK).min(hi);
            let e = &mut self.exps[b];
            if *e == EMPTY {
                *e = ze;
            } else if ze - *e > RESCALE_AT {
                let f = ldexp(1.0, *e - ze);
                let top = ((b + 1) * BLOCK).min(self.vals.len());
                for v in &mut self.vals[b * BLOCK..top] {
                    *v *= f;
                }
                *e = ze;
            }
            let shift = ze - *e;
            if shift >= -1060 {
                let c = ldexp(zm, shift);
                let src = &kw[d - off..end - off];
                for (v, &k) in self.vals[d..end].iter_mut().zip(src) {
                    *v += k * c;
                }
            }
            d = end;
        }
    }

    #[inline]
    fn get(&self, d: usize) -> ScaledValue {
        let v = self.vals[d];
        if v == 0.0 {
            ScaledValue::ZERO
        } else {
            ScaledValue::from_parts(v, self.exps[d / BLOCK])
        }
    }
}

/// Column-by-column evaluator; keeps only the running convolutions.
pub struct ColumnSweep {
    n: u64,
    m: u64,
    kw: Vec<f64>,
    rows: Vec<ConvRow>,
    prev: Vec<ScaledValue>,
    next_col: u64,
}

impl ColumnSweep {
    pub fn new(law: &LoopLaw, h: f64, n: u64, m: u64, loop_cap: Option<u64>) -> Result<Self> {
        Self::with_base(law, h, n, m, loop_cap, ScaledValue::ONE)
    }

    fn with_base(law: &LoopLaw, h: f64, n: u64, m: u64, loop_cap: Option<u64>, base: ScaledValue) -> Result<Self> {
        check_args(n, m, loop_cap)?;
        let kw = loop_weights(law, h, n + m, loop_cap);
        let rows = (0..n).map(|i| ConvRow::new((n - i + m + 1) as usize)).collect();
        let mut prev = vec![ScaledValue::ZERO; n as usize + 1];
        prev[0] = base;
        Ok(Self { n, m, kw, rows, prev, next_col: 0 })
    }

    /// Returns column `m` as `Z(0..=N, m)`, or `None` once past `M`.
    pub fn next_column(&mut self) -> Option<Vec<ScaledValue>> {
        let m = self.next_col;
        if m > self.m {
            return None;
        }
        self.next_col += 1;
        if m == 0 {
            return Some(self.prev.clone());
        }
        let (n_top, m_top) = (self.n as usize, self.m as usize);
        let mu = m as usize;
        let kw = &self.kw;
        let prev = &self.prev;
        // fold column m-1 into the convolutions
        let last_s = kw.iter().rposition(|&k| k > 0.0).unwrap_or(0);
        let fold = |(i, row): (usize, &mut ConvRow)| {
            let z = prev[i];
            if z.is_zero() {
                return;
            }
            let lo = mu + 1;
            let hi = (n_top - i + m_top + 1).min(mu - 1 + last_s + 1);
            if lo < hi {
                row.add(lo, hi, kw, mu - 1, z);
            }
        };
        if self.n >= 128 {
            self.rows.par_iter_mut().enumerate().for_each(fold);
        } else {
            self.rows.iter_mut().enumerate().for_each(fold);
        }
        let rows = &self.rows;
        let cell = |n: usize| -> ScaledValue {
            let mut acc = ScaledValue::ZERO;
            for (i, row) in rows.iter().enumerate().take(n) {
                acc += row.get(n - i + mu);
            }
            acc
        };
        let mut col: Vec<ScaledValue> = if self.n >= 128 {
            (0..=n_top).into_par_iter().map(|n| if n == 0 { ScaledValue::ZERO } else { cell(n) }).collect()
        } else {
            (0..=n_top).map(|n| if n == 0 { ScaledValue::ZERO } else { cell(n) }).collect()
        };
        col[0] = ScaledValue::ZERO;
        self.prev.clone_from(&col);
        Some(col)
    }
}

/// Fast evaluation of the full table.
pub fn compute_zc(law: &LoopLaw, h: f64, n: u64, m: u64, loop_cap: Option<u64>) -> Result<PartitionTable> {
    compute_zc_with_base(law, h, n, m, loop_cap, ScaledValue::ONE)
}

pub(crate) fn compute_zc_with_base(
    law: &LoopLaw,
    h: f64,
    n: u64,
    m: u64,
    loop_cap: Option<u64>,
    base: ScaledValue,
) -> Result<PartitionTable> {
    let mut sweep = ColumnSweep::with_base(law, h, n, m, loop_cap, base)?;
    let mut cells = vec![ScaledValue::ZERO; ((n + 1) * (m + 1)) as usize];
    let mut j = 0u64;
    while let Some(col) = sweep.next_column() {
        for (i, v) in col.into_iter().enumerate() {
            cells[i * (m + 1) as usize + j as usize] = v;
        }
        j += 1;
    }
    Ok(PartitionTable { n, m, h, loop_cap, cells, kw: sweep.kw })
}

/// Direct `O(N^2 M^2)` evaluation of the recursion, in scaled arithmetic throughout.
pub fn compute_zc_naive(law: &LoopLaw, h: f64, n: u64, m: u64, loop_cap: Option<u64>) -> Result<PartitionTable> {
    check_args(n, m, loop_cap)?;
    let kw = loop_weights(law, h, n + m, loop_cap);
    let w = (m + 1) as usize;
    let mut cells = vec![ScaledValue::ZERO; (n as usize + 1) * w];
    cells[0] = ScaledValue::ONE;
    for a in 0..=n as usize {
        for b in 0..=m as usize {
            if a == 0 && b == 0 {
                continue;
            }
            let mut acc = ScaledValue::ZERO;
            for l in 1..=a {
                for t in 1..=b {
                    let k = kw[l + t];
                    if k > 0.0 {
                        acc += cells[(a - l) * w + b - t].mul_f64(k);
                    }
                }
            }
            cells[a * w + b] = acc;
        }
    }
    Ok(PartitionTable { n, m, h, loop_cap, cells, kw })
}

/// `Z(N, M)` alone, without retaining the table.
pub fn compute_zc_corner(law: &LoopLaw, h: f64, n: u64, m: u64, loop_cap: Option<u64>) -> Result<ScaledValue> {
    let mut sweep = ColumnSweep::new(law, h, n, m, loop_cap)?;
    let mut last = ScaledValue::ZERO;
    while let Some(col) = sweep.next_column() {
        last = col[n as usize];
    }
    Ok(last)
}

/// `Z^f(N, M) = sum_{i, j} K_f(i) K_f(j) Z(N - i, M - j)`.
pub fn compute_zf(table: &PartitionTable, fw: &FreeEndWeights) -> ScaledValue {
    compute_zf_at(table, fw, table.n, table.m)
}

/// Free partition function for a target inside the table.
pub fn compute_zf_at(table: &PartitionTable, fw: &FreeEndWeights, n: u64, m: u64) -> ScaledValue {
    let mut acc = ScaledValue::ZERO;
    for i in 0..=n {
        let ki = fw.kf(i);
        let mut row = ScaledValue::ZERO;
        for j in 0..=m {
            let z = table.get(n - i, m - j);
            if !z.is_zero() {
                row += z.mul_f64(fw.kf(j));
            }
        }
        acc += row.mul_f64(ki);
    }
    acc
}

/// `P((N, M) in tau) = e^(-N Nh) Z(N, M)`.
pub fn hitting_prob_exact(table: &PartitionTable, tl: &TiltedLaw) -> Result<f64> {
    hitting_prob_at(table, tl, table.n, table.m)
}

pub fn hitting_prob_at(table: &PartitionTable, tl: &TiltedLaw, n: u64, m: u64) -> Result<f64> {
    if (table.h - tl.h).abs() > 1e-15 * tl.h.abs().max(1.0) {
        return Err(GpsError::StaleTilt(table.h - tl.h));
    }
    if table.loop_cap.is_some() {
        return Err(GpsError::OutOfDomain("hitting probabilities need the uncapped table".into()));
    }
    if n > table.n || m > table.m {
        return Err(GpsError::OutOfTable(format!("({n}, {m}) outside {}x{}", table.n, table.m)));
    }
    let p = (table.ln(n, m) - n as f64 * tl.nh).exp();
    if p > 1.0 + 1e-9 {
        return Err(GpsError::Inconsistent(format!("hitting probability {p} exceeds one")));
    }
    Ok(p)
}

#[derive(Clone, Debug, Serialize)]
pub struct DpFreeEnergyRow {
    pub n: u64,
    pub m: u64,
    pub log_zc_per_n: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DpFreeEnergy {
    pub rows: Vec<DpFreeEnergyRow>,
    /// Fit of `ln Z = N F + a ln N + c`.
    pub fitted_f: Option<f64>,
    pub fitted_log_coeff: Option<f64>,
}

/// Finite-size free energies along `M = round(gamma N)`.
pub fn dp_free_energy(law: &LoopLaw, h: f64, ns: &[u64], gamma: f64) -> Result<DpFreeEnergy> {
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let m = (gamma * n as f64).round() as u64;
        let z = compute_zc_corner(law, h, n, m, None)?;
        rows.push(DpFreeEnergyRow { n, m, log_zc_per_n: z.ln() / n as f64 });
    }
    let (fitted_f, fitted_log_coeff) = if rows.len() >= 3 {
        let pts: Vec<[f64; 4]> = rows
            .iter()
            .map(|r| {
                let nf = r.n as f64;
                [nf, nf.ln(), 1.0, r.log_zc_per_n * nf]
            })
            .collect();
        match least_squares3(&pts) {
            Some(c) => (Some(c[0]), Some(c[1])),
            None => (None, None),
        }
    } else {
        (None, None)
    };
    Ok(DpFreeEnergy { rows, fitted_f, fitted_log_coeff })
}

/// Least squares for `y = c0 x0 + c1 x1 + c2 x2` via the normal equations.
fn least_squares3(pts: &[[f64; 4]]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 4]; 3];
    for p in pts {
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += p[r] * p[c];
            }
            a[r][3] += p[r] * p[3];
        }
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        a.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            return None;
        }
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

const MAGIC: &[u8; 5] = b"GPSZ1";

/// Writes the table: magic, `N`, `M` (u64), `h` (f64), then row-major cells
/// as (mantissa f64, exponent i64), all little-endian.
pub fn write_binary<W: Write>(table: &PartitionTable, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&table.n.to_le_bytes())?;
    out.write_all(&table.m.to_le_bytes())?;
    out.write_all(&table.h.to_le_bytes())?;
    let mut buf = Vec::with_capacity(table.cells.len() * 16);
    for c in &table.cells {
        buf.extend_from_slice(&c.mantissa().to_le_bytes());
        buf.extend_from_slice(&c.exponent().to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads cells written by [`write_binary`]; returns `(N, M, h, cells)`.
pub fn read_binary<R: Read>(mut inp: R) -> Result<(u64, u64, f64, Vec<ScaledValue>)> {
    let mut magic = [0u8; 5];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GpsError::Inconsistent("bad magic".into()));
    }
    let mut b8 = [0u8; 8];
    inp.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8);
    inp.read_exact(&mut b8)?;
    let m = u64::from_le_bytes(b8);
    inp.read_exact(&mut b8)?;
    let h = f64::from_le_bytes(b8);
    let count = ((n + 1) * (m + 1)) as usize;
    let mut cells = Vec::with_capacity(count);
    for _ in 0..count {
        inp.read_exact(&mut b8)?;
        let mant = f64::from_le_bytes(b8);
        inp.read_exact(&mut b8)?;
        let exp = i64::from_le_bytes(b8);
        cells.push(ScaledValue::from_parts(mant, exp));
    }
    Ok((n, m, h, cells))
}
