//! Full-residue averages of `|Q|` and their second moments, square-root
//! counts, lattice point counts for supplied polynomials, and empirical
//! bad-set scans over character spectra.
//!
//! The averages are
//!
//! ```text
//! D(k, b_last)  = sum_{b_hat mod k} |Q((b_hat, b_last), k)|
//! D2(k, b_last) = sum_{b_hat mod k} |Q((b_hat, b_last), k)|^2
//! E(k, r)  = sum_{c mod k, (c,k)=1} D(k, c*r)
//! E2(k, r) = sum_{c mod k, (c,k)=1} D2(k, c*r)
//! ```
//!
//! Second moments are computed twice: from evaluated `Q` values and through
//! the Ramanujan-sum identity
//!
//! ```text
//! D2(p^a, b) = p^{na} sum_{l_hat, t, t'} c_{p^a}(C-t^2) c_{p^a}(C-t'^2) e_{p^a}(b(t-t'))
//! ```
//!
//! with `c_{p^a}` the closed-form Ramanujan sum; the two routes must agree.
//! For `E2` at a prime with `p` not dividing `r` the identity collapses to
//! `E2(p,r) = p^{n+1} sum_l c_p(f(l))^2 - p^{n+2} sum_{l_hat} chi(C(l_hat))^2`
//! (the subtracted term is `D2(p,0)`, since `sum_{b_last} D2 = p^{n+1} sum_l c_p(f(l))^2`).

use num::complex::Complex64;

use crate::exec::pairwise_sum;
use crate::expsum::{q_crt, q_full_array, SpectrumTable};
use crate::forms::{AugmentedForm, CubicForm};
use crate::modular::{gcd, is_prime, mul_mod, ramanujan, Modulus, UnitRootTable};
use crate::{Budget, Error, ExecCtx, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    D,
    D2,
    E,
    E2,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quantity::D => "D",
            Quantity::D2 => "D2",
            Quantity::E => "E",
            Quantity::E2 => "E2",
        })
    }
}

/// One computed average with the bound it is measured against.
#[derive(Clone, Debug)]
pub struct AverageReport {
    pub k: u64,
    pub quantity: Quantity,
    /// `b_{n+1}` for D/D2, `r` for E/E2.
    pub parameter: i64,
    pub value: f64,
    pub bound: f64,
    pub ratio: f64,
}

impl AverageReport {
    fn new(k: u64, quantity: Quantity, parameter: i64, value: f64, bound: f64) -> Self {
        AverageReport {
            k,
            quantity,
            parameter,
            value,
            bound,
            ratio: value / bound,
        }
    }
}

/// Exact-constant bound for `D` at a prime power: `p^{(3n+2)/2}` at primes
/// (constant 1), `sqrt(a) p^{(3n+2)a/2}` above (constant asserted elsewhere);
/// multiplicative over coprime factors.
pub fn d_bound(factors: &[(u64, u32)], n: usize) -> f64 {
    factors
        .iter()
        .map(|&(p, a)| {
            let e = (3.0 * n as f64 + 2.0) / 2.0 * a as f64;
            (a as f64).sqrt() * (p as f64).powf(e)
        })
        .product::<f64>()
        .max(1.0)
}

pub fn d2_bound(p: u64, alpha: u32, n: usize) -> f64 {
    let e = (2 * n + 2) as f64 * alpha as f64;
    if alpha == 1 {
        (p as f64).powf(e)
    } else {
        alpha as f64 * (p as f64).powf(e)
    }
}

pub fn e_bound(factors: &[(u64, u32)], n: usize) -> f64 {
    factors
        .iter()
        .map(|&(p, a)| {
            let pf = p as f64;
            if a == 1 {
                pf.powf((3 * n + 4) as f64 / 2.0) + 2.0 * pf.powf((3 * n + 3) as f64 / 2.0)
            } else {
                (a as f64).sqrt() * pf.powf((3 * n + 4) as f64 / 2.0 * a as f64)
            }
        })
        .product::<f64>()
        .max(1.0)
}

pub fn e2_bound(p: u64, alpha: u32, n: usize) -> f64 {
    let pf = p as f64;
    if alpha == 1 {
        pf.powf((2 * n + 3) as f64) + 2.0 * pf.powf((2 * n + 2) as f64)
    } else {
        alpha as f64 * pf.powf((2 * n + 3) as f64 * alpha as f64)
    }
}

/// `|Q|` summed over one slice of fixed last coordinate, per last-coordinate
/// residue, from evaluated `Q` values (batched when the full array fits,
/// per-residue CRT evaluation otherwise). `powers[0]` sums `|Q|`,
/// `powers[1]` sums `|Q|^2`.
fn slice_sums(
    form: &AugmentedForm,
    k: u64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = form.arity() - 1;
    let ku = k as usize;
    let slots = (k as u128).pow(n as u32);
    if slots > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "residue average",
            needed: slots,
            budget: budget.enum_points,
        });
    }
    let mut abs_by_last = vec![Vec::with_capacity(slots as usize); ku];
    let mut sq_by_last = vec![Vec::with_capacity(slots as usize); ku];
    if (k as u128).pow(n as u32 + 1) <= budget.table_entries as u128
        && (k as u128).pow(n as u32 + 2) <= budget.naive_terms
    {
        let arr = q_full_array(form, k, budget, ctx)?;
        for (i, z) in arr.data().iter().enumerate() {
            let last = i % ku;
            let a = z.norm();
            abs_by_last[last].push(a);
            sq_by_last[last].push(a * a);
        }
    } else {
        let modulus = Modulus::new(k)?;
        let mut b = vec![0i64; n + 1];
        'grid: loop {
            for last in 0..k {
                b[n] = last as i64;
                let v = q_crt(form, &b, &modulus, budget)?;
                let a = v.abs();
                abs_by_last[last as usize].push(a);
                sq_by_last[last as usize].push(a * a);
            }
            let mut axis = n;
            loop {
                if axis == 0 {
                    break 'grid;
                }
                axis -= 1;
                b[axis] += 1;
                if (b[axis] as u64) < k {
                    break;
                }
                b[axis] = 0;
            }
        }
    }
    let abs: Vec<f64> = abs_by_last.iter().map(|v| pairwise_sum(v)).collect();
    let sq: Vec<f64> = sq_by_last.iter().map(|v| pairwise_sum(v)).collect();
    Ok((abs, sq))
}

/// `D(k, b_last)`. At an odd prime with `b_last = 0` the spectrum route
/// `p * sum |T|` is used; otherwise the sum runs over evaluated `Q` values.
pub fn compute_d(
    form: &AugmentedForm,
    k: u64,
    b_last: i64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<AverageReport> {
    let n = form.arity() - 1;
    if k == 0 {
        return Err(Error::InvalidModulus("modulus must be positive".into()));
    }
    let modulus = Modulus::new(k)?;
    let bound = d_bound(modulus.factors(), n);
    if k == 1 {
        return Ok(AverageReport::new(1, Quantity::D, b_last, 1.0, bound));
    }
    let b_red = b_last.rem_euclid(k as i64);
    if b_red == 0 && k % 2 == 1 && is_prime(k) && (k as u128).pow(n as u32) <= budget.table_entries as u128
    {
        let spec = crate::expsum::build_spectrum(form.base(), k, budget, ctx)?;
        let norms: Vec<f64> = spec.data().iter().map(|z| z.norm()).collect();
        let value = k as f64 * pairwise_sum(&norms);
        return Ok(AverageReport::new(k, Quantity::D, b_last, value, bound));
    }
    let (abs, _) = slice_sums(form, k, budget, ctx)?;
    Ok(AverageReport::new(
        k,
        Quantity::D,
        b_last,
        abs[b_red as usize],
        bound,
    ))
}

/// `D2(p^alpha, b_last)` with its dual-route verification.
#[derive(Clone, Debug)]
pub struct D2Report {
    pub report: AverageReport,
    /// route through evaluated `Q` values
    pub direct: f64,
    /// route through the Ramanujan-sum identity
    pub identity: f64,
    /// closed form `p^{n+2} (p^n - M_C(p))`, only for `alpha = 1`, `b = 0`
    pub closed_form: Option<f64>,
}

const DUAL_ROUTE_TOL: f64 = 1e-6;

fn dual_route_check(what: &str, a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > DUAL_ROUTE_TOL * a.abs().max(b.abs()).max(1.0) {
        return Err(Error::VerificationFailure(format!(
            "{what}: routes disagree, {a} vs {b}"
        )));
    }
    Ok(())
}

pub fn compute_d2(
    form: &AugmentedForm,
    p: u64,
    alpha: u32,
    b_last: i64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<D2Report> {
    if !is_prime(p) {
        return Err(Error::InvalidModulus(format!("{p} is not prime")));
    }
    let n = form.arity() - 1;
    let q = (p as u128).pow(alpha);
    if q > u32::MAX as u128 {
        return Err(Error::BudgetExceeded {
            what: "compute_d2",
            needed: q,
            budget: u32::MAX as u128,
        });
    }
    let q = q as u64;
    let b_red = b_last.rem_euclid(q as i64) as u64;

    let (_, sq) = slice_sums(form, q, budget, ctx)?;
    let direct = sq[b_red as usize];

    let identity = d2_identity_route(form, p, alpha, b_red, budget)?;
    dual_route_check(&format!("D2({q},{b_last})"), direct, identity)?;

    let closed_form = if alpha == 1 && b_red == 0 && p % 2 == 1 {
        let mc = count_base_zeros(form.base(), p, budget)?;
        let closed =
            (p as f64).powi(n as i32 + 2) * ((p as f64).powi(n as i32) - mc as f64);
        dual_route_check(&format!("D2({p},0) closed form"), direct, closed)?;
        Some(closed)
    } else {
        None
    };

    let bound = d2_bound(p, alpha, n);
    Ok(D2Report {
        report: AverageReport::new(q, Quantity::D2, b_last, direct, bound),
        direct,
        identity,
        closed_form,
    })
}

/// `M_C(p^j)`-style count of zeros of the cubic part over `(Z/q)^n`.
fn count_base_zeros(form: &CubicForm, q: u64, budget: &Budget) -> Result<u64> {
    let n = form.n();
    let points = (q as u128).pow(n as u32);
    if points > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "count_base_zeros",
            needed: points,
            budget: budget.enum_points,
        });
    }
    let fm = form.reduce_mod(q);
    let mut x = vec![0u64; n];
    let mut count = 0u64;
    loop {
        if fm.eval(&x) == 0 {
            count += 1;
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                return Ok(count);
            }
            axis -= 1;
            x[axis] += 1;
            if x[axis] < q {
                break;
            }
            x[axis] = 0;
        }
    }
}

/// Ramanujan-identity route for `D2(p^alpha, b)`:
/// `p^{na} sum_{l_hat} | sum_t c_{p^a}(C(l_hat)-t^2) e_{p^a}(b t) |^2`.
fn d2_identity_route(
    form: &AugmentedForm,
    p: u64,
    alpha: u32,
    b_red: u64,
    budget: &Budget,
) -> Result<f64> {
    let n = form.arity() - 1;
    let q = p.pow(alpha);
    let work = (q as u128).pow(n as u32 + 1);
    if work > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "d2_identity_route",
            needed: work,
            budget: budget.enum_points,
        });
    }
    let cq: Vec<f64> = (0..q).map(|d| ramanujan(p, alpha, d as i64) as f64).collect();
    let roots = UnitRootTable::new(q);
    let sq: Vec<u64> = (0..q).map(|t| mul_mod(t, t, q)).collect();
    let e_bt: Vec<Complex64> = (0..q).map(|t| roots.root(mul_mod(b_red, t, q))).collect();
    let fm = form.base().reduce_mod(q);
    let mut x = vec![0u64; n];
    let mut partials: Vec<f64> = Vec::new();
    loop {
        let c = fm.eval(&x);
        let mut inner = Complex64::new(0.0, 0.0);
        for t in 0..q as usize {
            let d = (c + q - sq[t]) % q;
            let w = cq[d as usize];
            if w != 0.0 {
                inner += w * e_bt[t];
            }
        }
        partials.push(inner.norm_sqr());
        let mut axis = n;
        loop {
            if axis == 0 {
                let sum = pairwise_sum(&partials);
                return Ok((p as f64).powi((n as u32 * alpha) as i32) * sum);
            }
            axis -= 1;
            x[axis] += 1;
            if x[axis] < q {
                break;
            }
            x[axis] = 0;
        }
    }
}

/// `E(k,r) = sum over units c of D(k, c r)`.
pub fn compute_e(
    form: &AugmentedForm,
    k: u64,
    r: i64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<AverageReport> {
    let n = form.arity() - 1;
    let modulus = Modulus::new(k)?;
    let bound = e_bound(modulus.factors(), n);
    if k == 1 {
        return Ok(AverageReport::new(1, Quantity::E, r, 1.0, bound));
    }
    let (abs, _) = slice_sums(form, k, budget, ctx)?;
    let r_red = r.rem_euclid(k as i64) as u64;
    let mut value_parts = Vec::new();
    for c in 0..k {
        if gcd(c, k) == 1 {
            value_parts.push(abs[mul_mod(c, r_red, k) as usize]);
        }
    }
    Ok(AverageReport::new(
        k,
        Quantity::E,
        r,
        pairwise_sum(&value_parts),
        bound,
    ))
}

#[derive(Clone, Debug)]
pub struct E2Report {
    pub report: AverageReport,
    pub direct: f64,
    /// closed-form route, present when `k` is an odd prime
    pub identity: Option<f64>,
}

/// `E2(k,r)` with, at odd primes, the closed-form cross-check.
pub fn compute_e2(
    form: &AugmentedForm,
    k: u64,
    r: i64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<E2Report> {
    let n = form.arity() - 1;
    let modulus = Modulus::new(k)?;
    let (_, sq) = slice_sums(form, k, budget, ctx)?;
    let r_red = r.rem_euclid(k as i64) as u64;
    let mut value_parts = Vec::new();
    for c in 0..k {
        if gcd(c, k) == 1 {
            value_parts.push(sq[mul_mod(c, r_red, k) as usize]);
        }
    }
    let direct = pairwise_sum(&value_parts);

    let identity = if k % 2 == 1 && is_prime(k) {
        let p = k;
        let mc = count_base_zeros(form.base(), p, budget)? as f64;
        let pn = (p as f64).powi(n as i32);
        let d2_closed = (p as f64).powi(n as i32 + 2) * (pn - mc);
        let value = if r_red.is_multiple_of(p) {
            // every c*r is 0: E2 = phi(p) * D2(p,0)
            (p - 1) as f64 * d2_closed
        } else {
            // p^{n+1} sum_l c_p(f(l))^2 - D2(p,0); the first term counts
            // solutions with weight (p-1)^2 and non-solutions with weight 1
            let m_p = count_f_zeros_prime(form, p, budget)? as f64;
            let sum_c_sq =
                m_p * ((p - 1) as f64).powi(2) + ((p as f64).powi(n as i32 + 1) - m_p);
            (p as f64).powi(n as i32 + 1) * sum_c_sq - d2_closed
        };
        dual_route_check(&format!("E2({p},{r})"), direct, value)?;
        Some(value)
    } else {
        None
    };

    let bound = match modulus.factors() {
        [(p, a)] => e2_bound(*p, *a, n),
        factors => factors.iter().map(|&(p, a)| e2_bound(p, a, n)).product(),
    };
    Ok(E2Report {
        report: AverageReport::new(k, Quantity::E2, r, direct, bound),
        direct,
        identity,
    })
}

/// `M(p) = #\{ x mod p : f(x) = 0 \}` over all `n+1` coordinates, by
/// square-root counting per `l_hat`.
fn count_f_zeros_prime(form: &AugmentedForm, p: u64, budget: &Budget) -> Result<u64> {
    let n = form.arity() - 1;
    let points = (p as u128).pow(n as u32);
    if points > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "count_f_zeros_prime",
            needed: points,
            budget: budget.enum_points,
        });
    }
    let fm = form.base().reduce_mod(p);
    let mut nroots = vec![0u64; p as usize];
    for y in 0..p {
        nroots[mul_mod(y, y, p) as usize] += 1;
    }
    let mut x = vec![0u64; n];
    let mut count = 0u64;
    loop {
        count += nroots[fm.eval(&x) as usize];
        let mut axis = n;
        loop {
            if axis == 0 {
                return Ok(count);
            }
            axis -= 1;
            x[axis] += 1;
            if x[axis] < p {
                break;
            }
            x[axis] = 0;
        }
    }
}

/// Square-root counts above one `l_hat`:
/// `R1 = #\{ y mod p^a : y^2 = C(l_hat) \}` and
/// `R2 = #\{ y : p^{a-1} || C(l_hat) - y^2 \}`, with `kappa` the `p`-adic
/// valuation of `C(l_hat)` capped at `alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct R1R2 {
    pub r1: u64,
    pub r2: u64,
    pub kappa: u32,
}

pub fn r1_r2_counts(
    form: &CubicForm,
    p: u64,
    alpha: u32,
    l_hat: &[i64],
) -> Result<R1R2> {
    if p < 3 || !is_prime(p) {
        return Err(Error::InvalidModulus(format!("{p} is not an odd prime")));
    }
    if alpha == 0 {
        return Err(Error::InvalidInput("alpha must be >= 1".into()));
    }
    let q = p.pow(alpha);
    let x: Vec<i128> = l_hat.iter().map(|&v| v as i128).collect();
    let c = form.evaluate(&x)?;
    let c_mod = c.rem_euclid(q as i128) as u64;
    let kappa = if c == 0 {
        alpha
    } else {
        let mut v = 0u32;
        let mut c_abs = c.unsigned_abs();
        while v < alpha && c_abs % p as u128 == 0 {
            c_abs /= p as u128;
            v += 1;
        }
        v
    };
    let q_prev = p.pow(alpha - 1);
    let mut r1 = 0u64;
    let mut r2 = 0u64;
    for y in 0..q {
        let d = (c_mod + q - mul_mod(y, y, q)) % q;
        if d == 0 {
            r1 += 1;
        } else if d.is_multiple_of(q_prev) {
            r2 += 1;
        }
    }
    if alpha == 1 {
        // q_prev = 1 divides everything: R2 counts the non-solutions
        debug_assert_eq!(r1 + r2, q);
    }
    Ok(R1R2 { r1, r2, kappa })
}

/// A sparse integer polynomial of arbitrary degree, used as a user-supplied
/// vanishing condition in [`n_count`].
#[derive(Clone, Debug)]
pub struct SparsePoly {
    n: usize,
    terms: Vec<(Vec<u32>, i64)>,
}

impl SparsePoly {
    pub fn new(n: usize, terms: Vec<(Vec<u32>, i64)>) -> Result<Self> {
        for (e, _) in &terms {
            if e.len() != n {
                return Err(Error::InvalidForm(format!(
                    "exponent vector length {} != n = {n}",
                    e.len()
                )));
            }
        }
        Ok(SparsePoly { n, terms })
    }

    /// The coordinate polynomial `x_i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut e = vec![0u32; n];
        e[i] = 1;
        SparsePoly {
            n,
            terms: vec![(e, 1)],
        }
    }

    pub fn eval(&self, x: &[i128]) -> Result<i128> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut acc: i128 = 0;
        for (e, c) in &self.terms {
            let mut v = *c as i128;
            for (i, &ei) in e.iter().enumerate() {
                for _ in 0..ei {
                    v = v.checked_mul(x[i]).ok_or(Error::Overflow)?;
                }
            }
            acc = acc.checked_add(v).ok_or(Error::Overflow)?;
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug)]
pub struct NCountReport {
    pub count: u64,
    /// `count / (y/k + 1)^{n-c}` with `c` the number of conditions.
    pub normalized: f64,
}

/// Count `m_hat` in `Z^n` with sup norm at most `y`, congruent to `r_hat`
/// mod `k`, on which every supplied polynomial vanishes.
pub fn n_count(
    polys: &[SparsePoly],
    y: f64,
    r_hat: &[i64],
    k: u64,
    budget: &Budget,
) -> Result<NCountReport> {
    if polys.is_empty() {
        return Err(Error::InvalidInput("supply at least one polynomial".into()));
    }
    let n = polys[0].n;
    if polys.iter().any(|p| p.n != n) || r_hat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: r_hat.len(),
        });
    }
    if k == 0 || y < 0.0 {
        return Err(Error::InvalidInput("need k >= 1 and y >= 0".into()));
    }
    let fy = y.floor() as i64;
    // per-axis arithmetic progressions r_i + k Z intersected with [-fy, fy]
    let mut axis_values: Vec<Vec<i64>> = Vec::with_capacity(n);
    let mut total: u128 = 1;
    for &r in r_hat {
        let first = -fy + (r - (-fy)).rem_euclid(k as i64);
        let mut vals = Vec::new();
        let mut v = first;
        while v <= fy {
            vals.push(v);
            v += k as i64;
        }
        total = total.saturating_mul(vals.len().max(1) as u128);
        axis_values.push(vals);
    }
    if total > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "n_count",
            needed: total,
            budget: budget.enum_points,
        });
    }
    if axis_values.iter().any(|v| v.is_empty()) {
        return Ok(NCountReport {
            count: 0,
            normalized: 0.0,
        });
    }
    let mut idx = vec![0usize; n];
    let mut x = vec![0i128; n];
    let mut count = 0u64;
    'grid: loop {
        for i in 0..n {
            x[i] = axis_values[i][idx[i]] as i128;
        }
        let mut all_zero = true;
        for p in polys {
            if p.eval(&x)? != 0 {
                all_zero = false;
                break;
            }
        }
        if all_zero {
            count += 1;
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                break 'grid;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < axis_values[axis].len() {
                break;
            }
            idx[axis] = 0;
        }
    }
    let c = polys.len().min(n);
    let normalized = count as f64 / (y / k as f64 + 1.0).powi((n - c) as i32);
    Ok(NCountReport { count, normalized })
}

/// Histogram bins: 32 log2-spaced buckets covering ratios `2^-13 .. 2^3`,
/// half-power steps; out-of-range ratios clamp to the end bins.
pub const BADSET_BINS: usize = 32;

#[derive(Clone, Debug)]
pub struct BadSetScan {
    pub p: u64,
    pub n: usize,
    pub thresholds: Vec<f64>,
    /// per threshold tau: `#\{ m_hat : |T(m_hat)| > tau * p^{n/2} \}`
    pub exceed_counts: Vec<u64>,
    pub max_ratio: f64,
    pub histogram: [u64; BADSET_BINS],
}

pub fn bad_set_scan(spectrum: &SpectrumTable, thresholds: &[f64]) -> BadSetScan {
    let p = spectrum.p();
    let n = spectrum.n();
    let scale = (p as f64).powf(n as f64 / 2.0);
    let mut exceed_counts = vec![0u64; thresholds.len()];
    let mut histogram = [0u64; BADSET_BINS];
    let mut max_ratio: f64 = 0.0;
    // Strict exceedance must clear the tracked entry error: extreme |T|
    // values often sit exactly on structured thresholds (e.g. 2 p^{n/2}
    // for diagonal forms), and rounding noise must not count them.
    let guard = spectrum.entry_err();
    for z in spectrum.data() {
        let ratio = z.norm() / scale;
        max_ratio = max_ratio.max(ratio);
        for (i, &tau) in thresholds.iter().enumerate() {
            if z.norm() > tau * scale + guard {
                exceed_counts[i] += 1;
            }
        }
        let bin = if ratio <= 0.0 {
            0
        } else {
            ((2.0 * ratio.log2()).floor() as i64 + 26).clamp(0, BADSET_BINS as i64 - 1) as usize
        };
        histogram[bin] += 1;
    }
    BadSetScan {
        p,
        n,
        thresholds: thresholds.to_vec(),
        exceed_counts,
        max_ratio,
        histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expsum::build_spectrum;

    fn cusp() -> AugmentedForm {
        AugmentedForm::new(CubicForm::new(1, vec![(vec![3], 1)]).unwrap())
    }

    fn fermat_aug(n: usize) -> AugmentedForm {
        AugmentedForm::new(CubicForm::fermat(n))
    }

    #[test]
    fn d_trivial_and_cuspidal() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let d1 = compute_d(&cusp(), 1, 0, &budget, &ctx).unwrap();
        assert_eq!(d1.value, 1.0);

        // |T(b)| = sqrt(5) for the four b != 0, so D(5,0) = 5 * 4 sqrt(5)
        let d5 = compute_d(&cusp(), 5, 0, &budget, &ctx).unwrap();
        assert!((d5.value - 20.0 * 5f64.sqrt()).abs() < 1e-9);
        assert!((d5.bound - 5f64.powf(2.5)).abs() < 1e-9);
        assert!((d5.ratio - 0.8).abs() < 1e-9);
        assert!(d5.ratio <= 1.0);
    }

    #[test]
    fn d_is_multiplicative_at_zero() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        for form in [cusp(), fermat_aug(2)] {
            let d15 = compute_d(&form, 15, 0, &budget, &ctx).unwrap().value;
            let d3 = compute_d(&form, 3, 0, &budget, &ctx).unwrap().value;
            let d5 = compute_d(&form, 5, 0, &budget, &ctx).unwrap().value;
            assert!(
                (d15 - d3 * d5).abs() <= 1e-6 * d15.max(1.0),
                "D(15,0)={d15} vs D(3,0)*D(5,0)={}",
                d3 * d5
            );
        }
    }

    #[test]
    fn d2_cuspidal_all_routes() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        // D2(5,0) = 5^3 * 4 = 500 <= 5^4
        let rep = compute_d2(&cusp(), 5, 1, 0, &budget, &ctx).unwrap();
        assert!((rep.direct - 500.0).abs() < 1e-7);
        assert!((rep.identity - 500.0).abs() < 1e-7);
        assert_eq!(rep.closed_form.map(|c| c.round() as i64), Some(500));
        assert!((rep.report.bound - 625.0).abs() < 1e-9);
        assert!(rep.report.ratio <= 1.0);
    }

    #[test]
    fn d2_dual_route_prime_square() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        for b in [0i64, 1, 4] {
            let rep = compute_d2(&cusp(), 3, 2, b, &budget, &ctx).unwrap();
            assert!(
                (rep.direct - rep.identity).abs() <= 1e-6 * rep.direct.max(1.0),
                "b={b}: direct={} identity={}",
                rep.direct,
                rep.identity
            );
        }
        let rep = compute_d2(&fermat_aug(2), 3, 2, 2, &budget, &ctx).unwrap();
        assert!((rep.direct - rep.identity).abs() <= 1e-6 * rep.direct.max(1.0));
    }

    #[test]
    fn e_of_zero_is_phi_times_d() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        for form in [cusp(), fermat_aug(2)] {
            for p in [5u64, 7] {
                let e = compute_e(&form, p, 0, &budget, &ctx).unwrap().value;
                let d = compute_d(&form, p, 0, &budget, &ctx).unwrap().value;
                assert!(((p - 1) as f64 * d - e).abs() <= 1e-9 * e.max(1.0));
            }
        }
    }

    #[test]
    fn e2_dual_route_at_primes() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        for (form, p, r) in [
            (cusp(), 5u64, 1i64),
            (cusp(), 5, 2),
            (cusp(), 7, 1),
            (fermat_aug(2), 5, 1),
            (fermat_aug(2), 7, 3),
            (fermat_aug(2), 7, 0), // p | r branch
        ] {
            let rep = compute_e2(&form, p, r, &budget, &ctx).unwrap();
            let ident = rep.identity.expect("prime modulus has a closed form");
            assert!(
                (rep.direct - ident).abs() <= 1e-6 * rep.direct.max(1.0),
                "p={p} r={r}: direct={} identity={ident}",
                rep.direct
            );
        }
    }

    #[test]
    fn r1_r2_examples() {
        // C(l) = l^3 over n = 1
        let c = CubicForm::new(1, vec![(vec![3], 1)]).unwrap();
        // p=5, alpha=1, C(1)=1: y = 1, 4
        let r = r1_r2_counts(&c, 5, 1, &[1]).unwrap();
        assert_eq!((r.r1, r.kappa), (2, 0));
        // C(0)=0: only y = 0
        let r = r1_r2_counts(&c, 5, 1, &[0]).unwrap();
        assert_eq!(r.r1, 1);
        // C(3) = 27 = 0 mod 9: three square roots of zero mod 9, kappa capped
        let r = r1_r2_counts(&c, 3, 2, &[3]).unwrap();
        assert_eq!((r.r1, r.kappa), (3, 2));
        // squares mod 9 are {0,1,4,7}, so C(l_hat) = 3 has none: 3*l^3 at l=1
        let c3 = CubicForm::new(1, vec![(vec![3], 3)]).unwrap();
        let r = r1_r2_counts(&c3, 3, 2, &[1]).unwrap();
        assert_eq!(r.r1, 0);
        assert_eq!(r.kappa, 1);
    }

    #[test]
    fn r1_sums_to_point_count() {
        // sum_{l_hat} R1(l_hat) = M(p) for alpha = 1
        let budget = Budget::default();
        let form = CubicForm::fermat(2);
        let aug = AugmentedForm::new(form.clone());
        for p in [5u64, 7] {
            let mut total = 0u64;
            for a in 0..p as i64 {
                for b in 0..p as i64 {
                    let r = r1_r2_counts(&form, p, 1, &[a, b]).unwrap();
                    assert!(r.r1 <= 2);
                    total += r.r1;
                }
            }
            let m = count_f_zeros_prime(&aug, p, &budget).unwrap();
            assert_eq!(total, m);
        }
    }

    #[test]
    fn n_count_examples() {
        let budget = Budget::default();
        // one linear condition in 3 variables, y=10, k=1: 21^2 points
        let m1 = SparsePoly::coordinate(3, 0);
        let rep = n_count(std::slice::from_ref(&m1), 10.0, &[0, 0, 0], 1, &budget).unwrap();
        assert_eq!(rep.count, 441);
        // two independent linear conditions: 21 points
        let m2 = SparsePoly::coordinate(3, 1);
        let rep = n_count(&[m1.clone(), m2], 10.0, &[0, 0, 0], 1, &budget).unwrap();
        assert_eq!(rep.count, 21);
        // m1^2 + m2^2 vanishes only on the axis
        let ss = SparsePoly::new(
            3,
            vec![(vec![2, 0, 0], 1), (vec![0, 2, 0], 1)],
        )
        .unwrap();
        let rep = n_count(&[ss], 5.0, &[0, 0, 0], 1, &budget).unwrap();
        assert_eq!(rep.count, 11);
        // congruence restriction
        let m1b = SparsePoly::coordinate(2, 0);
        let rep = n_count(&[m1b], 10.0, &[0, 1], 3, &budget).unwrap();
        // axis 0: {-9,-6,-3,0,3,6,9} with m_1=0 required; axis 1: {-8,...,10}
        assert_eq!(rep.count, 7);
    }

    #[test]
    fn bad_set_scan_cuspidal() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = CubicForm::new(1, vec![(vec![3], 1)]).unwrap();
        let spec = build_spectrum(&form, 5, &budget, &ctx).unwrap();
        let scan = bad_set_scan(&spec, &[1.0, 2.0, 4.0]);
        // ratios are 0 and 1 (sqrt(5)/5^{1/2}); nothing exceeds tau = 1
        assert_eq!(scan.exceed_counts, vec![0, 0, 0]);
        assert!((scan.max_ratio - 1.0).abs() < 1e-12);
        // counts are nonincreasing for ascending thresholds
        let spec7 = build_spectrum(&CubicForm::fermat(2), 7, &budget, &ctx).unwrap();
        let scan7 = bad_set_scan(&spec7, &[0.25, 0.5, 1.0, 2.0]);
        for w in scan7.exceed_counts.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert_eq!(scan7.histogram.iter().sum::<u64>(), 49);
    }
}
