//! Evaluation of the complete exponential sum
//!
//! ```text
//! Q(m,k) = sum_{h mod k, gcd(h,k)=1} sum_{l mod k} e_k( h*f(l) + m.l ),
//! ```
//!
//! where `f(l) = C(l_1..l_n) - l_{n+1}^2` and `e_k(t) = exp(2*pi*i*t/k)`,
//! by four independent routes:
//!
//! * [`q_naive`]: the defining double sum. The inner sum over units `h`
//!   depends on `l` only through `f(l) mod k`, so it is summed directly once
//!   per residue class and reused; no closed forms are involved.
//! * [`q_gauss`]: for odd `k`, the quadratic Gauss sum over `l_{n+1}` is
//!   evaluated in closed form, trading one full variable for a Jacobi
//!   character twist. Only the magnitude of this route is pinned by the
//!   contract; the phase follows the classical normalization.
//! * [`q_char`]: for odd prime `p` and `m_{n+1} = 0`, the `h` sum collapses
//!   and `Q((m_hat,0),p) = p * T(m_hat)` where `T` is the quadratic-character
//!   spectrum built by [`build_spectrum`].
//! * [`q_crt`] / [`q_prime_power`]: pseudo-multiplicative factorization over
//!   coprime moduli, with a stationary-phase reduction at odd prime powers
//!   `p^alpha = q1^2*q2` that enumerates `l` modulo `q1*q2` only.
//!
//! Every value carries an absolute error bound `err` accounted as
//! `8 * eps * (sum of summand magnitudes)`; disagreement of two routes beyond
//! their combined `err` is a bug, and the verification suites assert exactly
//! that.

use num::complex::Complex64;
use rayon::prelude::*;

use crate::forms::{AugmentedForm, CubicForm};
use crate::modular::{gcd, inv_mod, is_prime, jacobi, mul_mod, Modulus, UnitRootTable};
use crate::{Budget, Error, ExecCtx, Result};

const ERR_ULPS: f64 = 8.0;

/// Which route produced a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Naive,
    Gauss,
    Char,
    Crt,
    Stationary,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Naive => "naive",
            Method::Gauss => "gauss",
            Method::Char => "char",
            Method::Crt => "crt",
            Method::Stationary => "stationary",
        };
        f.write_str(s)
    }
}

/// A computed value of `Q(m,k)` with a tracked absolute error bound.
#[derive(Clone, Copy, Debug)]
pub struct ExpSumValue {
    pub value: Complex64,
    pub err: f64,
    pub method: Method,
}

impl ExpSumValue {
    pub fn abs(&self) -> f64 {
        self.value.norm()
    }

    /// Relative agreement with a floor of 1 for near-zero sums, never
    /// stricter than the combined tracked error bounds.
    pub fn agrees_with(&self, other: &ExpSumValue, rel_tol: f64) -> bool {
        let scale = self.abs().max(other.abs()).max(1.0);
        (self.value - other.value).norm() <= (rel_tol * scale).max(self.err + other.err)
    }

    /// Same comparison on magnitudes only (for routes with unpinned phase).
    pub fn magnitude_agrees_with(&self, other: &ExpSumValue, rel_tol: f64) -> bool {
        let scale = self.abs().max(other.abs()).max(1.0);
        (self.abs() - other.abs()).abs() <= (rel_tol * scale).max(self.err + other.err)
    }
}

/// Canonical residues `0..k-1` of a signed vector.
pub fn reduce_vec(m: &[i64], k: u64) -> Vec<u64> {
    m.iter().map(|&v| v.rem_euclid(k as i64) as u64).collect()
}

fn check_arity(form: &AugmentedForm, m: &[i64]) -> Result<()> {
    if m.len() != form.arity() {
        return Err(Error::DimensionMismatch {
            expected: form.arity(),
            got: m.len(),
        });
    }
    Ok(())
}

fn pow_u128(base: u64, exp: u32) -> u128 {
    (base as u128).pow(exp)
}

/// `S[d] = sum_{h mod k, (h,k)=1} e_k(h*d)` for every residue `d`, by direct
/// summation over the units.
fn unit_sums(k: u64, roots: &UnitRootTable) -> Vec<Complex64> {
    let units: Vec<u64> = (0..k).filter(|&h| gcd(h, k) == 1).collect();
    (0..k)
        .map(|d| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &h in &units {
                acc += roots.root(mul_mod(h, d, k));
            }
            acc
        })
        .collect()
}

/// Values of `f(l) mod k` over all `l` in `(Z/k)^{n+1}`, last axis fastest.
///
/// Parallel over the first axis; entries are exact small integers, so the
/// result does not depend on the worker count.
fn f_values_mod_k(form: &AugmentedForm, k: u64) -> Vec<u16> {
    assert!(k <= 1 + u16::MAX as u64);
    let n = form.arity() - 1;
    let fm = form.base().reduce_mod(k);
    let ksz = k as usize;
    let block = ksz.pow(n as u32); // entries per first-axis digit, incl. l_{n+1}
    let sq: Vec<u64> = (0..k).map(|y| mul_mod(y, y, k)).collect();
    let blocks: Vec<Vec<u16>> = (0..k)
        .into_par_iter()
        .map(|first| {
            let mut out = Vec::with_capacity(block);
            let mut x = vec![0u64; n];
            x[0] = first;
            loop {
                let c = fm.eval(&x);
                for &ysq in sq.iter() {
                    out.push(((c + k - ysq) % k) as u16);
                }
                let mut axis = n;
                loop {
                    if axis <= 1 {
                        return out;
                    }
                    axis -= 1;
                    x[axis] += 1;
                    if x[axis] < k {
                        break;
                    }
                    x[axis] = 0;
                }
            }
        })
        .collect();
    let mut out = Vec::with_capacity(block * ksz);
    for b in blocks {
        out.extend_from_slice(&b);
    }
    out
}

/// The naive oracle, reusable across many `m` for one `(form, k)`.
pub struct NaiveEvaluator {
    k: u64,
    arity: usize,
    fvals: Vec<u16>,
    s_table: Vec<Complex64>,
    roots: UnitRootTable,
    abs_total: f64,
}

impl NaiveEvaluator {
    pub fn new(form: &AugmentedForm, k: u64, budget: &Budget) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModulus("modulus must be positive".into()));
        }
        let arity = form.arity();
        let terms = pow_u128(k, arity as u32 + 1);
        if terms > budget.naive_terms {
            return Err(Error::BudgetExceeded {
                what: "q_naive",
                needed: terms,
                budget: budget.naive_terms,
            });
        }
        let roots = UnitRootTable::new(k);
        let s_table = unit_sums(k, &roots);
        let fvals = f_values_mod_k(form, k);
        let mut counts = vec![0u64; k as usize];
        for &f in &fvals {
            counts[f as usize] += 1;
        }
        let abs_total: f64 = counts
            .iter()
            .zip(&s_table)
            .map(|(&c, s)| c as f64 * s.norm())
            .sum();
        Ok(NaiveEvaluator {
            k,
            arity,
            fvals,
            s_table,
            roots,
            abs_total,
        })
    }

    pub fn modulus(&self) -> u64 {
        self.k
    }

    pub fn err_bound(&self) -> f64 {
        ERR_ULPS * f64::EPSILON * self.abs_total
    }

    /// `Q(m,k)`; `m` has `n+1` signed coordinates, reduced internally.
    pub fn eval(&self, m: &[i64]) -> Result<ExpSumValue> {
        if m.len() != self.arity {
            return Err(Error::DimensionMismatch {
                expected: self.arity,
                got: m.len(),
            });
        }
        let k = self.k;
        let ku = k as usize;
        let mr = reduce_vec(m, k);
        let outer = &mr[..self.arity - 1];
        let m_last = mr[self.arity - 1];

        let inner_phase: Vec<u32> = (0..k).map(|d| mul_mod(m_last, d, k) as u32).collect();

        let mut digits = vec![0u64; outer.len()];
        let mut base: u64 = 0;
        let (mut re, mut im) = (0.0f64, 0.0f64);
        let mut off = 0usize;
        loop {
            for (d, &ph) in inner_phase.iter().enumerate() {
                let mut idx = base + ph as u64;
                if idx >= k {
                    idx -= k;
                }
                let s = self.s_table[self.fvals[off + d] as usize];
                let r = self.roots.root(idx);
                re += s.re * r.re - s.im * r.im;
                im += s.re * r.im + s.im * r.re;
            }
            off += ku;
            // odometer over the l_hat axes, least significant last
            let mut axis = outer.len();
            loop {
                if axis == 0 {
                    return Ok(ExpSumValue {
                        value: Complex64::new(re, im),
                        err: self.err_bound(),
                        method: Method::Naive,
                    });
                }
                axis -= 1;
                digits[axis] += 1;
                // every +1 step on a digit adds m[axis] to m.l mod k,
                // including the wrap k-1 -> 0
                base += outer[axis];
                if base >= k {
                    base -= k;
                }
                if digits[axis] < k {
                    break;
                }
                digits[axis] = 0;
            }
        }
    }
}

/// One-shot naive evaluation.
pub fn q_naive(form: &AugmentedForm, m: &[i64], k: u64, budget: &Budget) -> Result<ExpSumValue> {
    check_arity(form, m)?;
    NaiveEvaluator::new(form, k, budget)?.eval(m)
}

/// Gauss-reduced evaluator for odd `k`, reusable across `m`.
///
/// `Q(m,k) = eps_k sqrt(k) sum_{(h,k)=1} (-h|k) e_k(inv(4)inv(h) m_{n+1}^2)
///           sum_{l_hat mod k} e_k(h C(l_hat) + m_hat.l_hat)`
/// with `eps_k = 1` for `k = 1 (4)` and `i` for `k = 3 (4)`.
pub struct GaussEvaluator {
    k: u64,
    n: usize,
    cvals: Vec<u16>,
    c_counts: Vec<u64>,
    units: Vec<u64>,
    jac: Vec<i32>,
    roots: UnitRootTable,
    inv4: u64,
    front: Complex64,
}

impl GaussEvaluator {
    pub fn new(form: &AugmentedForm, k: u64, budget: &Budget) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::EvenModulus(k));
        }
        let n = form.arity() - 1;
        let work = pow_u128(k, n as u32 + 1);
        if work > budget.naive_terms {
            return Err(Error::BudgetExceeded {
                what: "q_gauss",
                needed: work,
                budget: budget.naive_terms,
            });
        }
        let roots = UnitRootTable::new(k);
        let cm = form.base().reduce_mod(k);
        let ku = k as usize;
        // C(l_hat) mod k over (Z/k)^n, last axis fastest
        let block = ku.pow(n as u32 - 1);
        let blocks: Vec<Vec<u16>> = (0..k)
            .into_par_iter()
            .map(|first| {
                let mut out = Vec::with_capacity(block);
                let mut x = vec![0u64; n];
                x[0] = first;
                loop {
                    out.push(cm.eval(&x) as u16);
                    let mut axis = n;
                    loop {
                        if axis <= 1 {
                            return out;
                        }
                        axis -= 1;
                        x[axis] += 1;
                        if x[axis] < k {
                            break;
                        }
                        x[axis] = 0;
                    }
                }
            })
            .collect();
        let cvals: Vec<u16> = blocks.into_iter().flatten().collect();
        let mut c_counts = vec![0u64; ku];
        for &c in &cvals {
            c_counts[c as usize] += 1;
        }
        let units: Vec<u64> = (1..k.max(2)).filter(|&h| gcd(h, k) == 1).collect();
        let jac: Vec<i32> = (0..k).map(|h| jacobi(h as i64, k).unwrap()).collect();
        let inv4 = inv_mod(4 % k, k).expect("k odd");
        let eps = if k % 4 == 1 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 1.0)
        };
        Ok(GaussEvaluator {
            k,
            n,
            cvals,
            c_counts,
            units,
            jac,
            roots,
            inv4,
            front: eps,
        })
    }

    pub fn err_bound(&self) -> f64 {
        let k = self.k as f64;
        ERR_ULPS * f64::EPSILON * k.sqrt() * self.units.len() as f64 * k.powi(self.n as i32)
    }

    pub fn eval(&self, m: &[i64]) -> Result<ExpSumValue> {
        if m.len() != self.n + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.n + 1,
                got: m.len(),
            });
        }
        let k = self.k;
        let ku = k as usize;
        let mr = reduce_vec(m, k);
        let m_hat = &mr[..self.n];
        let m_last_sq = mul_mod(mr[self.n], mr[self.n], k);
        let zero_hat = m_hat.iter().all(|&v| v == 0);

        let mut acc = Complex64::new(0.0, 0.0);
        let mut hmul = vec![0u32; ku];
        for &h in &self.units {
            let hbar = inv_mod(h, k).expect("unit");
            let twist = self
                .roots
                .root(mul_mod(self.inv4, mul_mod(hbar, m_last_sq, k), k));
            let chi = self.jac[((k - h) % k) as usize]; // (-h|k)
            debug_assert_ne!(chi, 0);
            let inner = if zero_hat {
                let mut s = Complex64::new(0.0, 0.0);
                for (d, &cnt) in self.c_counts.iter().enumerate() {
                    if cnt != 0 {
                        s += cnt as f64 * self.roots.root(mul_mod(h, d as u64, k));
                    }
                }
                s
            } else {
                for (d, slot) in hmul.iter_mut().enumerate() {
                    *slot = mul_mod(h, d as u64, k) as u32;
                }
                let mut digits = vec![0u64; self.n];
                let mut base: u64 = 0;
                let (mut re, mut im) = (0.0f64, 0.0f64);
                let mut i = 0usize;
                'scan: loop {
                    let mut idx = hmul[self.cvals[i] as usize] as u64 + base;
                    if idx >= k {
                        idx -= k;
                    }
                    let r = self.roots.root(idx);
                    re += r.re;
                    im += r.im;
                    i += 1;
                    let mut axis = self.n;
                    loop {
                        if axis == 0 {
                            break 'scan;
                        }
                        axis -= 1;
                        digits[axis] += 1;
                        base += m_hat[axis];
                        if base >= k {
                            base -= k;
                        }
                        if digits[axis] < k {
                            break;
                        }
                        digits[axis] = 0;
                    }
                }
                Complex64::new(re, im)
            };
            acc += chi as f64 * twist * inner;
        }
        Ok(ExpSumValue {
            value: self.front * (k as f64).sqrt() * acc,
            err: self.err_bound(),
            method: Method::Gauss,
        })
    }
}

/// One-shot Gauss-route evaluation (odd `k`).
pub fn q_gauss(form: &AugmentedForm, m: &[i64], k: u64, budget: &Budget) -> Result<ExpSumValue> {
    check_arity(form, m)?;
    GaussEvaluator::new(form, k, budget)?.eval(m)
}

/// The full array `T(m_hat) = sum_{l_hat mod p} chi(C(l_hat)) e_p(m_hat.l_hat)`
/// over `(Z/p)^n` for one odd prime `p`, with `chi` the quadratic character
/// (`chi(0) = 0`).
pub struct SpectrumTable {
    p: u64,
    n: usize,
    data: Vec<Complex64>,
    zero_count: u64,
    entry_err: f64,
}

impl SpectrumTable {
    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `M_C(p)`, the number of zeros of `C` in `(Z/p)^n`.
    pub fn zero_count(&self) -> u64 {
        self.zero_count
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Absolute error bound valid for every entry.
    pub fn entry_err(&self) -> f64 {
        self.entry_err
    }

    pub fn index(&self, m_hat: &[u64]) -> Result<usize> {
        if m_hat.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: m_hat.len(),
            });
        }
        let mut idx = 0usize;
        for &d in m_hat {
            if d >= self.p {
                return Err(Error::InvalidInput(format!(
                    "spectrum index {d} out of range for p = {}",
                    self.p
                )));
            }
            idx = idx * self.p as usize + d as usize;
        }
        Ok(idx)
    }

    pub fn value(&self, m_hat: &[u64]) -> Result<Complex64> {
        Ok(self.data[self.index(m_hat)?])
    }

    pub(crate) fn from_raw_parts(
        p: u64,
        n: usize,
        data: Vec<Complex64>,
        zero_count: u64,
    ) -> Result<Self> {
        if data.len() != (p as usize).pow(n as u32) {
            return Err(Error::Store("spectrum size mismatch".into()));
        }
        let entry_err = ERR_ULPS * f64::EPSILON * (p as f64).powi(n as i32);
        let table = SpectrumTable {
            p,
            n,
            data,
            zero_count,
            entry_err,
        };
        table.check_parseval()?;
        Ok(table)
    }

    /// Parseval: `sum |T|^2 = p^n (p^n - M_C(p))`, relative 1e-8; `T(0)` must
    /// be real within the entry error.
    fn check_parseval(&self) -> Result<()> {
        let norms: Vec<f64> = self.data.iter().map(|z| z.norm_sqr()).collect();
        let total = crate::exec::pairwise_sum(&norms);
        let pn = (self.p as f64).powi(self.n as i32);
        let want = pn * (pn - self.zero_count as f64);
        let residual = (total - want).abs();
        if residual.is_nan() || residual > 1e-8 * want.max(1.0) {
            return Err(Error::VerificationFailure(format!(
                "spectrum Parseval: sum|T|^2 = {total}, expected {want} (p={}, n={})",
                self.p, self.n
            )));
        }
        let t0 = self.data[0];
        if t0.im.abs().is_nan() || t0.im.abs() > self.entry_err.max(1e-8 * pn) {
            return Err(Error::VerificationFailure(format!(
                "spectrum T(0) not real: {t0}"
            )));
        }
        Ok(())
    }
}

/// Build the spectrum by `n` axis-wise direct DFTs of length `p` applied to
/// `l_hat -> chi(C(l_hat))`; total work `O(n p^{n+1})`.
pub fn build_spectrum(
    form: &CubicForm,
    p: u64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<SpectrumTable> {
    if p < 3 || !is_prime(p) {
        return Err(Error::InvalidModulus(format!("{p} is not an odd prime")));
    }
    let n = form.n();
    let entries = pow_u128(p, n as u32);
    if entries > budget.table_entries as u128 {
        return Err(Error::MemoryBudget {
            required_bytes: entries * 16,
            budget_bytes: budget.table_entries as u128 * 16,
        });
    }
    let pu = p as usize;
    let size = pu.pow(n as u32);
    let chi: Vec<f64> = (0..p)
        .map(|d| jacobi(d as i64, p).unwrap() as f64)
        .collect();
    let cm = form.reduce_mod(p);
    ctx.install(|| {
        // initial array chi(C(l_hat)), last axis fastest, parallel over axis 0
        let parts: Vec<(Vec<Complex64>, u64)> = (0..p)
            .into_par_iter()
            .map(|first| {
                let mut out = Vec::with_capacity(size / pu);
                let mut zeros = 0u64;
                let mut x = vec![0u64; n];
                x[0] = first;
                loop {
                    let c = cm.eval(&x);
                    if c == 0 {
                        zeros += 1;
                    }
                    out.push(Complex64::new(chi[c as usize], 0.0));
                    let mut axis = n;
                    loop {
                        if axis <= 1 {
                            return (out, zeros);
                        }
                        axis -= 1;
                        x[axis] += 1;
                        if x[axis] < p {
                            break;
                        }
                        x[axis] = 0;
                    }
                }
            })
            .collect();
        let zero_count: u64 = parts.iter().map(|(_, z)| z).sum();
        let mut data: Vec<Complex64> = Vec::with_capacity(size);
        for (part, _) in parts {
            data.extend_from_slice(&part);
        }

        let roots = UnitRootTable::new(p);
        for axis in 0..n {
            let stride = pu.pow((n - 1 - axis) as u32);
            let next: Vec<Complex64> = (0..size)
                .into_par_iter()
                .map(|i| {
                    let digit = (i / stride) % pu;
                    let base = i - digit * stride;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for d in 0..pu {
                        let w = roots.root(mul_mod(digit as u64, d as u64, p));
                        acc += data[base + d * stride] * w;
                    }
                    acc
                })
                .collect();
            data = next;
        }
        SpectrumTable::from_raw_parts(p, n, data, zero_count)
    })
}

/// `Q((m_hat,0), p) = p * T(m_hat)` for odd prime `p`.
pub fn q_char(spectrum: &SpectrumTable, m_hat: &[u64]) -> Result<ExpSumValue> {
    let t = spectrum.value(m_hat)?;
    let p = spectrum.p() as f64;
    Ok(ExpSumValue {
        value: p * t,
        err: p * spectrum.entry_err(),
        method: Method::Char,
    })
}

/// Stationary-phase evaluation of `Q(m, p^alpha)` for odd `p`, `alpha >= 2`.
///
/// Writing `p^alpha = q1^2*q2` with `q2` squarefree dividing `q1`, the
/// substitutions `l = L + q1*q2*g` and `h = t + q1*u` collapse exactly to
///
/// ```text
/// Q(m,q) = q1^{n+2} q2 * sum_{t mod q1, (t,q1)=1}
///          sum_{L mod q1*q2 : q1 | t*grad f(L)+m, q1*q2 | f(L)}
///          e_q(t*f(L) + m.L).
/// ```
///
/// `p = 2` falls back to the naive route.
pub fn q_prime_power(
    form: &AugmentedForm,
    m: &[i64],
    p: u64,
    alpha: u32,
    budget: &Budget,
) -> Result<ExpSumValue> {
    check_arity(form, m)?;
    if !is_prime(p) {
        return Err(Error::InvalidModulus(format!("{p} is not prime")));
    }
    if alpha < 2 {
        return Err(Error::InvalidInput(
            "q_prime_power requires alpha >= 2; use q_gauss or q_naive at primes".into(),
        ));
    }
    if p == 2 {
        return q_naive(form, m, 1u64 << alpha, budget);
    }
    let n = form.arity() - 1;
    let q128 = pow_u128(p, alpha);
    if q128 > u32::MAX as u128 {
        return Err(Error::BudgetExceeded {
            what: "q_prime_power",
            needed: q128,
            budget: u32::MAX as u128,
        });
    }
    let q = q128 as u64;
    let q1 = p.pow(alpha / 2);
    let q2 = if alpha.is_multiple_of(2) { 1 } else { p };
    let qq = q1 * q2;
    let enum_cost = pow_u128(qq, n as u32 + 1);
    if enum_cost > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "q_prime_power",
            needed: enum_cost,
            budget: budget.enum_points,
        });
    }

    let roots = UnitRootTable::new(q);
    let cm_q = form.base().reduce_mod(q);
    let cm_q1 = form.base().reduce_mod(q1);
    let m_q = reduce_vec(m, q);
    let m_q1 = reduce_vec(m, q1);
    let units: Vec<u64> = (1..q1.max(2)).filter(|&t| t % p != 0).collect();
    // square roots mod q1*q2: sqrts[c] lists the y with y^2 = c
    let mut sqrts: Vec<Vec<u32>> = vec![Vec::new(); qq as usize];
    for y in 0..qq {
        sqrts[mul_mod(y, y, qq) as usize].push(y as u32);
    }

    let scale = (q1 as f64).powi(n as i32 + 2) * q2 as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut terms = 0u64;

    let mut l_hat = vec![0u64; n];
    let mut l_hat_q1 = vec![0u64; n];
    let mut grad = vec![0u64; n];
    loop {
        let c_q = cm_q.eval(&l_hat);
        for i in 0..n {
            l_hat_q1[i] = l_hat[i] % q1;
        }
        cm_q1.gradient(&l_hat_q1, &mut grad);
        let m_dot: u64 = l_hat
            .iter()
            .zip(&m_q)
            .fold(0u64, |a, (&l, &mi)| (a + mul_mod(mi, l, q)) % q);
        for &y in &sqrts[(c_q % qq) as usize] {
            let y = y as u64;
            let f_q = (c_q + q - mul_mod(y, y, q)) % q;
            let two_y = mul_mod(2 % q1, y % q1, q1);
            't_loop: for &t in &units {
                // q1 | t*gradC(L_hat) + m_hat
                for i in 0..n {
                    if !(mul_mod(t, grad[i], q1) + m_q1[i]).is_multiple_of(q1) {
                        continue 't_loop;
                    }
                }
                // q1 | -2*t*y + m_{n+1}
                if !(m_q1[n] + q1 - mul_mod(t, two_y, q1)).is_multiple_of(q1) {
                    continue 't_loop;
                }
                let phase = (mul_mod(t, f_q, q) + m_dot + mul_mod(m_q[n], y, q)) % q;
                acc += roots.root(phase);
                terms += 1;
            }
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                return Ok(ExpSumValue {
                    value: scale * acc,
                    err: ERR_ULPS * f64::EPSILON * scale * terms as f64,
                    method: Method::Stationary,
                });
            }
            axis -= 1;
            l_hat[axis] += 1;
            if l_hat[axis] < qq {
                break;
            }
            l_hat[axis] = 0;
        }
    }
}

/// `Q(m,k)` over the prime factorization of `k` via the pseudo-multiplicative
/// identity `Q(m, k k') = Q(inv(k')m, k) * Q(inv(k)m, k')`; primes go through
/// the Gauss route, higher odd prime powers through the stationary route,
/// powers of two through the naive route.
pub fn q_crt(
    form: &AugmentedForm,
    m: &[i64],
    modulus: &Modulus,
    budget: &Budget,
) -> Result<ExpSumValue> {
    check_arity(form, m)?;
    let value = crt_recurse(form, m, modulus.factors(), budget)?;
    Ok(ExpSumValue {
        method: Method::Crt,
        ..value
    })
}

fn crt_recurse(
    form: &AugmentedForm,
    m: &[i64],
    factors: &[(u64, u32)],
    budget: &Budget,
) -> Result<ExpSumValue> {
    match factors.len() {
        0 => Ok(ExpSumValue {
            value: Complex64::new(1.0, 0.0),
            err: 0.0,
            method: Method::Crt,
        }),
        1 => {
            let (p, a) = factors[0];
            if p == 2 {
                q_naive(form, m, 1u64 << a, budget)
            } else if a == 1 {
                q_gauss(form, m, p, budget)
            } else {
                q_prime_power(form, m, p, a, budget)
            }
        }
        _ => {
            let (p, a) = factors[0];
            let k1 = p.pow(a);
            let k2: u64 = factors[1..].iter().map(|&(p, a)| p.pow(a)).product();
            let (inv_k2_mod_k1, inv_k1_mod_k2) = crate::modular::crt_pair(k1, k2)?;
            let twist = |inv: u64, modulus: u64| -> Vec<i64> {
                m.iter()
                    .map(|&v| {
                        let r = v.rem_euclid(modulus as i64) as u64;
                        mul_mod(inv, r, modulus) as i64
                    })
                    .collect()
            };
            let left = crt_recurse(form, &twist(inv_k2_mod_k1, k1), &factors[..1], budget)?;
            let right = crt_recurse(form, &twist(inv_k1_mod_k2, k2), &factors[1..], budget)?;
            let err = left.value.norm() * right.err
                + right.value.norm() * left.err
                + left.err * right.err;
            Ok(ExpSumValue {
                value: left.value * right.value,
                err,
                method: Method::Crt,
            })
        }
    }
}

/// The naive evaluator batched over every `b` in `(Z/k)^{n+1}` at once:
/// the array of `Q(b,k)` is the multidimensional transform of `l -> S[f(l)]`
/// with `S[d] = sum_{(h,k)=1} e_k(h d)` summed directly. Used by the average
/// computations, which need all residues anyway.
pub struct QArray {
    k: u64,
    arity: usize,
    data: Vec<Complex64>,
    entry_err: f64,
}

impl QArray {
    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn entry_err(&self) -> f64 {
        self.entry_err
    }

    pub fn index(&self, b: &[u64]) -> usize {
        debug_assert_eq!(b.len(), self.arity);
        let mut idx = 0usize;
        for &d in b {
            debug_assert!(d < self.k);
            idx = idx * self.k as usize + d as usize;
        }
        idx
    }

    /// `Q(b,k)` for reduced `b`, last coordinate fastest in memory.
    pub fn value(&self, b: &[u64]) -> Complex64 {
        self.data[self.index(b)]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
}

pub fn q_full_array(
    form: &AugmentedForm,
    k: u64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<QArray> {
    if k == 0 {
        return Err(Error::InvalidModulus("modulus must be positive".into()));
    }
    let arity = form.arity();
    let entries = pow_u128(k, arity as u32);
    if entries > budget.table_entries as u128 {
        return Err(Error::MemoryBudget {
            required_bytes: entries * 16,
            budget_bytes: budget.table_entries as u128 * 16,
        });
    }
    let work = pow_u128(k, arity as u32 + 1);
    if work > budget.naive_terms {
        return Err(Error::BudgetExceeded {
            what: "q_full_array",
            needed: work,
            budget: budget.naive_terms,
        });
    }
    let ku = k as usize;
    let size = ku.pow(arity as u32);
    let roots = UnitRootTable::new(k);
    let s_table = unit_sums(k, &roots);
    let fvals = f_values_mod_k(form, k);
    let abs_total: f64 = fvals.iter().map(|&f| s_table[f as usize].norm()).sum();
    ctx.install(|| {
        let mut data: Vec<Complex64> = fvals.iter().map(|&f| s_table[f as usize]).collect();
        for axis in 0..arity {
            let stride = ku.pow((arity - 1 - axis) as u32);
            let next: Vec<Complex64> = (0..size)
                .into_par_iter()
                .map(|i| {
                    let digit = (i / stride) % ku;
                    let base = i - digit * stride;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for d in 0..ku {
                        let w = roots.root(mul_mod(digit as u64, d as u64, k));
                        acc += data[base + d * stride] * w;
                    }
                    acc
                })
                .collect();
            data = next;
        }
        Ok(QArray {
            k,
            arity,
            data,
            entry_err: ERR_ULPS * f64::EPSILON * abs_total,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::CubicForm;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn cusp() -> AugmentedForm {
        // n = 1, C = x^3
        AugmentedForm::new(CubicForm::new(1, vec![(vec![3], 1)]).unwrap())
    }

    fn fermat_aug(n: usize) -> AugmentedForm {
        AugmentedForm::new(CubicForm::fermat(n))
    }

    /// Brute-force count of f = 0 mod k (test oracle, independent of the
    /// evaluators: exact integer arithmetic, no tables).
    fn count_solutions(form: &AugmentedForm, k: u64) -> u64 {
        let arity = form.arity();
        let mut x = vec![0i128; arity];
        let mut count = 0u64;
        loop {
            if form.evaluate(&x).unwrap().rem_euclid(k as i128) == 0 {
                count += 1;
            }
            let mut axis = arity;
            loop {
                if axis == 0 {
                    return count;
                }
                axis -= 1;
                x[axis] += 1;
                if (x[axis] as u64) < k {
                    break;
                }
                x[axis] = 0;
            }
        }
    }

    #[test]
    fn trivial_modulus_is_one() {
        let budget = Budget::default();
        let v = q_naive(&cusp(), &[0, 0], 1, &budget).unwrap();
        assert!((v.value - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn orthogonality_zero_frequency() {
        // Q(0,p) = p*M(p) - p^{n+1}, M(p) from brute force
        let budget = Budget::default();
        for (form, ps) in [
            (cusp(), vec![3u64, 5, 7, 11, 13]),
            (fermat_aug(2), vec![3, 5, 7, 11, 13]),
            (fermat_aug(3), vec![3, 5, 7]),
        ] {
            let n = form.arity() - 1;
            let m0 = vec![0i64; n + 1];
            for p in ps {
                let q = q_naive(&form, &m0, p, &budget).unwrap();
                let want =
                    p as f64 * count_solutions(&form, p) as f64 - (p as f64).powi(n as i32 + 1);
                assert!(
                    (q.value.re - want).abs() <= q.err.max(1e-9 * (p as f64).powi(n as i32))
                        && q.value.im.abs() <= q.err,
                    "n={n} p={p}: got {} want {want}",
                    q.value
                );
            }
        }
        // the cuspidal cubic has M(5) = 5 and M(7) = 7, so Q(0,p) = 0
        for p in [5u64, 7] {
            assert_eq!(count_solutions(&cusp(), p), p);
            let q = q_naive(&cusp(), &[0, 0], p, &budget).unwrap();
            assert!(q.abs() <= q.err);
        }
    }

    #[test]
    fn gauss_matches_naive_exactly_on_small_grid() {
        let budget = Budget::default();
        let mut rng = StdRng::seed_from_u64(20);
        let forms = [cusp(), fermat_aug(2)];
        for form in &forms {
            let arity = form.arity();
            for k in [3u64, 5, 7, 9, 15, 21, 25] {
                let naive = NaiveEvaluator::new(form, k, &budget).unwrap();
                let gauss = GaussEvaluator::new(form, k, &budget).unwrap();
                for _ in 0..12 {
                    let m: Vec<i64> = (0..arity).map(|_| rng.random_range(-20..20)).collect();
                    let a = naive.eval(&m).unwrap();
                    let b = gauss.eval(&m).unwrap();
                    // the classical normalization makes the phase exact too
                    assert!(
                        a.agrees_with(&b, 1e-9),
                        "k={k} m={m:?}: naive={} gauss={}",
                        a.value,
                        b.value
                    );
                }
            }
        }
    }

    #[test]
    fn gauss_rejects_even_modulus() {
        let budget = Budget::default();
        assert!(matches!(
            q_gauss(&cusp(), &[0, 0], 6, &budget),
            Err(Error::EvenModulus(6))
        ));
    }

    #[test]
    fn spectrum_cuspidal_cubic() {
        // chi(l^3) = chi(l), so T(0) = 0 and |T(b)| = sqrt(5) for b != 0
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = CubicForm::new(1, vec![(vec![3], 1)]).unwrap();
        let spec = build_spectrum(&form, 5, &budget, &ctx).unwrap();
        assert_eq!(spec.zero_count(), 1);
        assert!(spec.value(&[0]).unwrap().norm() < 1e-12);
        for b in 1..5u64 {
            assert!((spec.value(&[b]).unwrap().norm() - 5f64.sqrt()).abs() < 1e-12);
        }
        // Q((1,0),5) has magnitude 5*sqrt(5)
        let q = q_char(&spec, &[1]).unwrap();
        assert!((q.abs() - 5.0 * 5f64.sqrt()).abs() < 1e-9);
        // out-of-range index is an error
        assert!(q_char(&spec, &[5]).is_err());
        assert!(q_char(&spec, &[0, 0]).is_err());
    }

    #[test]
    fn char_route_matches_naive_exhaustively() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = CubicForm::fermat(2);
        let aug = AugmentedForm::new(form.clone());
        let p = 7u64;
        let spec = build_spectrum(&form, p, &budget, &ctx).unwrap();
        let naive = NaiveEvaluator::new(&aug, p, &budget).unwrap();
        for a in 0..p {
            for b in 0..p {
                let via_char = q_char(&spec, &[a, b]).unwrap();
                let via_naive = naive.eval(&[a as i64, b as i64, 0]).unwrap();
                assert!(
                    via_char.agrees_with(&via_naive, 1e-9),
                    "m=({a},{b},0): char={} naive={}",
                    via_char.value,
                    via_naive.value
                );
            }
        }
    }

    #[test]
    fn spectrum_parseval_against_enumeration() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = CubicForm::fermat(3);
        let p = 7u64;
        let spec = build_spectrum(&form, p, &budget, &ctx).unwrap();
        // M_C(7) by brute force
        let mut mc = 0u64;
        for i in 0..p {
            for j in 0..p {
                for l in 0..p {
                    if (i * i * i + j * j * j + l * l * l) % p == 0 {
                        mc += 1;
                    }
                }
            }
        }
        assert_eq!(spec.zero_count(), mc);
        let total: f64 = spec.data().iter().map(|z| z.norm_sqr()).sum();
        let pn = (p as f64).powi(3);
        assert!((total - pn * (pn - mc as f64)).abs() <= 1e-8 * pn * pn);
    }

    #[test]
    fn spectrum_memory_budget_refusal() {
        let budget = Budget {
            table_entries: 10,
            ..Budget::default()
        };
        let ctx = ExecCtx::default();
        let form = CubicForm::fermat(3);
        match build_spectrum(&form, 7, &budget, &ctx) {
            Err(Error::MemoryBudget { required_bytes, .. }) => {
                assert_eq!(required_bytes, 343 * 16);
            }
            Err(other) => panic!("expected memory refusal, got {other:?}"),
            Ok(_) => panic!("expected memory refusal, got a table"),
        }
    }

    #[test]
    fn stationary_matches_naive() {
        let budget = Budget::default();
        let mut rng = StdRng::seed_from_u64(33);
        for form in [cusp(), fermat_aug(2)] {
            let arity = form.arity();
            for (p, a) in [(3u64, 2u32), (3, 3), (5, 2), (5, 3), (7, 2)] {
                let k = p.pow(a);
                let naive = NaiveEvaluator::new(&form, k, &budget).unwrap();
                for _ in 0..8 {
                    let m: Vec<i64> = (0..arity).map(|_| rng.random_range(-30..30)).collect();
                    let x = naive.eval(&m).unwrap();
                    let y = q_prime_power(&form, &m, p, a, &budget).unwrap();
                    assert!(
                        x.agrees_with(&y, 1e-9),
                        "p={p} a={a} m={m:?}: naive={} stationary={}",
                        x.value,
                        y.value
                    );
                }
                // m = 0 gives a real value
                let m0 = vec![0i64; arity];
                let y = q_prime_power(&form, &m0, p, a, &budget).unwrap();
                assert!(y.value.im.abs() <= y.err);
            }
        }
    }

    #[test]
    fn stationary_rejects_alpha_one() {
        let budget = Budget::default();
        assert!(q_prime_power(&cusp(), &[0, 0], 5, 1, &budget).is_err());
    }

    #[test]
    fn crt_matches_naive() {
        let budget = Budget::default();
        let mut rng = StdRng::seed_from_u64(5);
        for form in [cusp(), fermat_aug(2)] {
            let arity = form.arity();
            for k in [6u64, 12, 15, 35, 45, 50] {
                let modulus = Modulus::new(k).unwrap();
                let naive = NaiveEvaluator::new(&form, k, &budget).unwrap();
                for _ in 0..8 {
                    let m: Vec<i64> = (0..arity).map(|_| rng.random_range(-60..60)).collect();
                    let a = naive.eval(&m).unwrap();
                    let b = q_crt(&form, &m, &modulus, &budget).unwrap();
                    assert!(
                        a.agrees_with(&b, 1e-9),
                        "k={k} m={m:?}: naive={} crt={}",
                        a.value,
                        b.value
                    );
                    assert_eq!(b.method, Method::Crt);
                }
            }
        }
    }

    #[test]
    fn full_array_matches_pointwise_naive() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        for form in [cusp(), fermat_aug(2)] {
            let arity = form.arity();
            for k in [5u64, 9, 15] {
                let arr = q_full_array(&form, k, &budget, &ctx).unwrap();
                let naive = NaiveEvaluator::new(&form, k, &budget).unwrap();
                let mut b = vec![0u64; arity];
                'grid: loop {
                    let bi: Vec<i64> = b.iter().map(|&v| v as i64).collect();
                    let want = naive.eval(&bi).unwrap();
                    let got = arr.value(&b);
                    assert!(
                        (got - want.value).norm() <= 1e-9 * want.abs().max(1.0),
                        "k={k} b={b:?}"
                    );
                    let mut axis = arity;
                    loop {
                        if axis == 0 {
                            break 'grid;
                        }
                        axis -= 1;
                        b[axis] += 1;
                        if b[axis] < k {
                            break;
                        }
                        b[axis] = 0;
                    }
                }
            }
        }
    }

    #[test]
    fn budget_refusals() {
        let budget = Budget::default();
        assert!(matches!(
            q_naive(&fermat_aug(3), &[0; 4], 5000, &budget),
            Err(Error::BudgetExceeded { .. })
        ));
        let tiny = Budget {
            naive_terms: 10,
            ..budget
        };
        assert!(matches!(
            q_naive(&cusp(), &[0, 0], 5, &tiny),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn err_bound_scales_below_contract() {
        // err <= 1e-6 * k^{n+2} for every evaluator at supported sizes
        let budget = Budget::default();
        for k in [3u64, 15, 49] {
            let form = fermat_aug(2);
            let contract = 1e-6 * (k as f64).powi(4);
            let naive = NaiveEvaluator::new(&form, k, &budget).unwrap();
            assert!(naive.err_bound() <= contract);
            let gauss = GaussEvaluator::new(&form, k, &budget).unwrap();
            assert!(gauss.err_bound() <= contract);
        }
    }
}
