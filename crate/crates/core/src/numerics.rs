//! Dense vector/matrix primitives, the seeded RNG, and finite-difference
//! utilities.
//!
//! Everything is 64-bit; the drift and oracle-error measurements downstream
//! need more headroom than 32-bit floats leave. Storage is row-major dense,
//! problem sizes are desk scale. Reductions use a fixed four-lane summation
//! tree so results are identical across platforms, runs, and thread counts.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fixed-dimension vector of finite 64-bit reals.
///
/// Constructors reject NaN/Inf entries; operations that could overflow
/// (forward sweeps, gradient accumulation) re-check and report numeric
/// errors at their own level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealVec(Vec<f64>);

impl RealVec {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite vector entry {} at index {i}",
                entries[i]
            )));
        }
        Ok(RealVec(entries))
    }

    pub fn from_slice(entries: &[f64]) -> Result<Self> {
        Self::new(entries.to_vec())
    }

    pub fn zeros(dim: usize) -> Self {
        RealVec(vec![0.0; dim])
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::new((0..dim).map(f).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        RealVec(entries)
    }

    pub fn dot(&self, other: &RealVec) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot on mismatched dims");
        dot(&self.0, &other.0)
    }

    pub fn add(&self, other: &RealVec) -> RealVec {
        assert_eq!(self.dim(), other.dim(), "add on mismatched dims");
        RealVec(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &RealVec) -> RealVec {
        assert_eq!(self.dim(), other.dim(), "sub on mismatched dims");
        RealVec(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, a: f64) -> RealVec {
        RealVec(self.0.iter().map(|v| a * v).collect())
    }

    /// `self + a * x`, allocating.
    pub fn add_scaled(&self, a: f64, x: &RealVec) -> RealVec {
        assert_eq!(self.dim(), x.dim(), "add_scaled on mismatched dims");
        RealVec(
            self.0
                .iter()
                .zip(&x.0)
                .map(|(s, v)| s + a * v)
                .collect(),
        )
    }

    pub fn norm2(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn sq_norm(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Deref for RealVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Row-major dense matrix of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite matrix entry {} at flat index {i}",
                data[i]
            )));
        }
        Ok(RealMat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::usage("ragged rows in matrix literal".to_string()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out = self · x` without allocating.
    pub(crate) fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `out = selfᵀ · s` without allocating (`out` is cleared first).
    pub(crate) fn matvec_t_into(&self, s: &[f64], out: &mut [f64]) {
        debug_assert_eq!(s.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for (si, row) in s.iter().zip(self.data.chunks_exact(self.cols)) {
            axpy(out, *si, row);
        }
    }

    /// `self += a · u vᵀ` (rank-one accumulation).
    pub(crate) fn acc_outer(&mut self, a: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (ui, row) in u.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            axpy(row, a * ui, v);
        }
    }

    pub fn frob_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// Largest singular value, estimated by power iteration on `AᵀA` from a
    /// fixed pseudorandom start; deterministic for a given matrix.
    pub fn op_norm_est(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let mut state = 0x6a0f_36c1_b5e2_94d3u64;
        let mut v: Vec<f64> = (0..self.cols)
            .map(|_| {
                state = splitmix64(state);
                to_unit_f64(state) - 0.5
            })
            .collect();
        let mut av = vec![0.0; self.rows];
        let mut prev = 0.0;
        for _ in 0..500 {
            self.matvec_into(&v, &mut av);
            self.matvec_t_into(&av, &mut v);
            let norm = dot(&v, &v).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            for x in v.iter_mut() {
                *x /= norm;
            }
            let sigma = norm.sqrt();
            if (sigma - prev).abs() <= 1e-13 * sigma.max(1.0) {
                return sigma;
            }
            prev = sigma;
        }
        prev
    }
}

/// Standard matrix-vector product.
pub fn matvec(m: &RealMat, v: &RealVec) -> Result<RealVec> {
    if m.cols() != v.dim() {
        return Err(Error::usage(format!(
            "matvec dimension mismatch: {}x{} matrix against vector of dim {}",
            m.rows(),
            m.cols(),
            v.dim()
        )));
    }
    let mut out = vec![0.0; m.rows()];
    m.matvec_into(v.as_slice(), &mut out);
    Ok(RealVec::from_raw(out))
}

/// Dot product with a fixed four-lane accumulation tree.
///
/// The lane split gives instruction-level parallelism without making the
/// summation order data- or platform-dependent.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 4];
    for (pa, pb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        lanes[0] += pa[0] * pb[0];
        lanes[1] += pa[1] * pb[1];
        lanes[2] += pa[2] * pb[2];
        lanes[3] += pa[3] * pb[3];
    }
    let mut tail = 0.0;
    let ra = a.chunks_exact(4).remainder();
    let rb = b.chunks_exact(4).remainder();
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + tail
}

/// `out += a * x`, elementwise.
pub(crate) fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn to_unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x1000_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic seeded generator (xoshiro256++ engine, splitmix64 seeding).
///
/// Distinct consumers (weight init, batch shuffling, per-sample adversaries)
/// get their own streams via [`Rng::substream`]: the child seed is a pure
/// function of the parent's construction seed and the label, independent of
/// how many draws the parent has made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    engine: rand_xoshiro::Xoshiro256PlusPlus,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        use rand_xoshiro::rand_core::SeedableRng;
        Rng {
            seed,
            engine: rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for a named purpose.
    pub fn substream(&self, label: &str) -> Rng {
        self.substream_indexed(label, 0)
    }

    /// Child stream for a named purpose plus an index (sample, epoch, cell).
    pub fn substream_indexed(&self, label: &str, index: u64) -> Rng {
        let mut s = splitmix64(self.seed ^ fnv1a(label.as_bytes()));
        s = splitmix64(s ^ index);
        Rng::from_seed(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        use rand_xoshiro::rand_core::RngCore;
        self.engine.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        to_unit_f64(self.next_u64())
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw (Box-Muller; two uniforms per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased integer in `[0, n)` by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Step size rule for [`central_diff`]: `1e-6 · max(1, ‖x‖∞)`.
pub fn default_step(x: &RealVec) -> f64 {
    1e-6 * x.norm_inf().max(1.0)
}

/// Central finite difference of a scalar function, the gradient oracle for
/// every analytic-gradient check in the toolkit.
pub fn central_diff<F>(mut f: F, x: &RealVec, h: f64) -> Result<RealVec>
where
    F: FnMut(&RealVec) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::usage(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.dim()];
    for i in 0..x.dim() {
        let xi = x[i];
        probe.as_mut_slice()[i] = xi + h;
        let up = f(&probe)?;
        probe.as_mut_slice()[i] = xi - h;
        let down = f(&probe)?;
        probe.as_mut_slice()[i] = xi;
        let d = (up - down) / (2.0 * h);
        if !d.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite central difference at coordinate {i}: f({}) = {up}, f({}) = {down}",
                xi + h,
                xi - h
            )));
        }
        grad[i] = d;
    }
    Ok(RealVec::from_raw(grad))
}
