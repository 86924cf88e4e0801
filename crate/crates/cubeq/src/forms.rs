//! Integer cubic forms, the augmented polynomial `f(x) = C(x_hat) - x_{n+1}^2`,
//! exact Hessian determinants, real anchor points, and the compactly
//! supported smooth weight.
//!
//! All form evaluation is exact: wide integers (`i128`, overflow-checked) on
//! integer points, arbitrary-precision rationals on rational points.
//! Floating point enters only through the weight function.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Integer, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::modular::{is_prime, mul_mod};
use crate::{Budget, Error, Result};

/// One monomial `coeff * x^exps` of a cubic form; `exps` sums to 3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Term {
    pub exps: Vec<u8>,
    pub coeff: i64,
}

/// A sparse integer cubic form in `n >= 1` variables.
///
/// Terms are kept sorted by exponent vector, so equal forms have equal
/// representations and a stable content hash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubicForm {
    n: usize,
    terms: Vec<Term>,
}

#[derive(Serialize, Deserialize)]
struct FileTerm {
    e: Vec<u32>,
    c: i64,
}

/// On-disk JSON schema: `{"n": <int>, "terms": [{"e": [..], "c": <int>}, ..]}`.
#[derive(Serialize, Deserialize)]
struct FormFile {
    n: usize,
    terms: Vec<FileTerm>,
}

impl CubicForm {
    pub fn new(n: usize, terms: Vec<(Vec<u32>, i64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidForm("n must be >= 1".into()));
        }
        if terms.is_empty() {
            return Err(Error::InvalidForm("at least one term required".into()));
        }
        let mut out: Vec<Term> = Vec::with_capacity(terms.len());
        for (e, c) in terms {
            if e.len() != n {
                return Err(Error::InvalidForm(format!(
                    "exponent vector length {} != n = {n}",
                    e.len()
                )));
            }
            if c == 0 {
                return Err(Error::InvalidForm("zero coefficient".into()));
            }
            let sum: u32 = e.iter().sum();
            if sum != 3 {
                return Err(Error::InvalidForm(format!(
                    "exponents {e:?} sum to {sum}, expected 3 (homogeneous cubic)"
                )));
            }
            out.push(Term {
                exps: e.iter().map(|&x| x as u8).collect(),
                coeff: c,
            });
        }
        out.sort_by(|a, b| a.exps.cmp(&b.exps));
        if out.windows(2).any(|w| w[0].exps == w[1].exps) {
            return Err(Error::InvalidForm("duplicate exponent vector".into()));
        }
        Ok(CubicForm { n, terms: out })
    }

    /// The diagonal form `x_1^3 + ... + x_n^3`.
    pub fn fermat(n: usize) -> Self {
        let terms = (0..n)
            .map(|i| {
                let mut e = vec![0u32; n];
                e[i] = 3;
                (e, 1i64)
            })
            .collect();
        CubicForm::new(n, terms).expect("fermat form is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: FormFile = serde_json::from_str(s)?;
        let terms = file.terms.into_iter().map(|t| (t.e, t.c)).collect();
        CubicForm::new(file.n, terms)
    }

    pub fn to_json_string(&self) -> String {
        let file = FormFile {
            n: self.n,
            terms: self
                .terms
                .iter()
                .map(|t| FileTerm {
                    e: t.exps.iter().map(|&x| x as u32).collect(),
                    c: t.coeff,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    /// SHA-256 over the canonical encoding; keys the on-disk result store.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"cubeq-form-v1");
        h.update((self.n as u64).to_le_bytes());
        for t in &self.terms {
            h.update(&t.exps);
            h.update(t.coeff.to_le_bytes());
        }
        h.finalize().into()
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got,
            });
        }
        Ok(())
    }

    /// Exact value at an integer point; overflow is an error, never a wrap.
    pub fn evaluate(&self, x: &[i128]) -> Result<i128> {
        self.check_len(x.len())?;
        let mut acc: i128 = 0;
        for t in &self.terms {
            let mut v: i128 = t.coeff as i128;
            for (i, &e) in t.exps.iter().enumerate() {
                for _ in 0..e {
                    v = v.checked_mul(x[i]).ok_or(Error::Overflow)?;
                }
            }
            acc = acc.checked_add(v).ok_or(Error::Overflow)?;
        }
        Ok(acc)
    }

    /// Exact gradient at an integer point.
    pub fn gradient(&self, x: &[i128]) -> Result<Vec<i128>> {
        self.check_len(x.len())?;
        let mut out = vec![0i128; self.n];
        for t in &self.terms {
            for (i, &e) in t.exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut v: i128 = (t.coeff as i128)
                    .checked_mul(e as i128)
                    .ok_or(Error::Overflow)?;
                for (j, &ej) in t.exps.iter().enumerate() {
                    let pow = if j == i { ej - 1 } else { ej };
                    for _ in 0..pow {
                        v = v.checked_mul(x[j]).ok_or(Error::Overflow)?;
                    }
                }
                out[i] = out[i].checked_add(v).ok_or(Error::Overflow)?;
            }
        }
        Ok(out)
    }

    pub fn evaluate_rational(&self, x: &[BigRational]) -> Result<BigRational> {
        self.check_len(x.len())?;
        let mut acc = BigRational::zero();
        for t in &self.terms {
            let mut v = BigRational::from_integer(BigInt::from(t.coeff));
            for (i, &e) in t.exps.iter().enumerate() {
                for _ in 0..e {
                    v *= &x[i];
                }
            }
            acc += v;
        }
        Ok(acc)
    }

    /// Second partial `d^2 C / dx_i dx_j` evaluated at a rational point.
    fn second_partial(&self, x: &[BigRational], i: usize, j: usize) -> BigRational {
        let mut acc = BigRational::zero();
        for t in &self.terms {
            let mut e: Vec<i32> = t.exps.iter().map(|&v| v as i32).collect();
            let mut factor = t.coeff;
            factor *= e[i] as i64;
            e[i] -= 1;
            if e[i] < 0 || factor == 0 {
                continue;
            }
            factor *= e[j] as i64;
            e[j] -= 1;
            if e[j] < 0 || factor == 0 {
                continue;
            }
            let mut v = BigRational::from_integer(BigInt::from(factor));
            for (a, &ea) in e.iter().enumerate() {
                for _ in 0..ea {
                    v *= &x[a];
                }
            }
            acc += v;
        }
        acc
    }

    /// Exact determinant of the `n x n` Hessian of `C` at a rational point,
    /// by fraction-free (Bareiss) elimination after clearing denominators.
    pub fn hessian_det_c(&self, x: &[BigRational]) -> Result<BigRational> {
        self.check_len(x.len())?;
        let n = self.n;
        let mat: Vec<Vec<BigRational>> = (0..n)
            .map(|i| (0..n).map(|j| self.second_partial(x, i, j)).collect())
            .collect();
        Ok(rational_det(mat))
    }

    /// Floating-point evaluation, for quadrature only.
    pub fn evaluate_f64(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff as f64;
            for (i, &e) in t.exps.iter().enumerate() {
                for _ in 0..e {
                    v *= x[i];
                }
            }
            acc += v;
        }
        acc
    }

    /// Reduce the form modulo `k` for fast residue evaluation.
    pub fn reduce_mod(&self, k: u64) -> FormModK {
        FormModK::new(self, k)
    }

    /// True iff no nonzero point of `(Z/p)^n` is a singular zero of `C`,
    /// by exhaustive enumeration.
    pub fn is_nonsingular_mod_p(&self, p: u64, budget: &Budget) -> Result<bool> {
        if !is_prime(p) {
            return Err(Error::InvalidModulus(format!("{p} is not prime")));
        }
        let points = (p as u128)
            .checked_pow(self.n as u32)
            .ok_or(Error::Overflow)?;
        if points > budget.enum_points {
            return Err(Error::BudgetExceeded {
                what: "is_nonsingular_mod_p",
                needed: points,
                budget: budget.enum_points,
            });
        }
        let fm = self.reduce_mod(p);
        let mut x = vec![0u64; self.n];
        let mut grad = vec![0u64; self.n];
        loop {
            // advance odometer; the all-zero point is skipped
            let mut axis = self.n;
            while axis > 0 {
                axis -= 1;
                x[axis] += 1;
                if x[axis] < p {
                    break;
                }
                x[axis] = 0;
                if axis == 0 {
                    return Ok(true);
                }
            }
            if fm.eval(&x) == 0 {
                fm.gradient(&x, &mut grad);
                if grad.iter().all(|&g| g == 0) {
                    return Ok(false);
                }
            }
        }
    }
}

/// Determinant of a rational matrix: clear denominators, run integer Bareiss
/// elimination, divide back.
fn rational_det(mat: Vec<Vec<BigRational>>) -> BigRational {
    let n = mat.len();
    if n == 0 {
        return BigRational::one();
    }
    let mut denom_lcm = BigInt::one();
    for row in &mat {
        for e in row {
            denom_lcm = denom_lcm.lcm(e.denom());
        }
    }
    let int_mat: Vec<Vec<BigInt>> = mat
        .iter()
        .map(|row| {
            row.iter()
                .map(|e| e.numer() * (&denom_lcm / e.denom()))
                .collect()
        })
        .collect();
    let det = bareiss_det(int_mat);
    BigRational::new(det, num::pow(denom_lcm, n))
}

fn bareiss_det(mut m: Vec<Vec<BigInt>>) -> BigInt {
    let n = m.len();
    let mut sign = 1i32;
    let mut prev = BigInt::one();
    for k in 0..n.saturating_sub(1) {
        if m[k][k].is_zero() {
            let Some(r) = (k + 1..n).find(|&r| !m[r][k].is_zero()) else {
                return BigInt::zero();
            };
            m.swap(k, r);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let num = &m[i][j] * &m[k][k] - &m[i][k] * &m[k][j];
                m[i][j] = num / &prev; // exact by Sylvester's identity
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let det = m[n - 1][n - 1].clone();
    if sign < 0 {
        -det
    } else {
        det
    }
}

/// The counted polynomial `f(x) = C(x_1,...,x_n) - x_{n+1}^2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedForm {
    base: CubicForm,
}

impl AugmentedForm {
    pub fn new(base: CubicForm) -> Self {
        AugmentedForm { base }
    }

    pub fn base(&self) -> &CubicForm {
        &self.base
    }

    /// Total number of variables, `n + 1`.
    pub fn arity(&self) -> usize {
        self.base.n + 1
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.base.content_hash()
    }

    pub fn evaluate(&self, x: &[i128]) -> Result<i128> {
        if x.len() != self.arity() {
            return Err(Error::DimensionMismatch {
                expected: self.arity(),
                got: x.len(),
            });
        }
        let last = x[self.base.n];
        let c = self.base.evaluate(&x[..self.base.n])?;
        let sq = last.checked_mul(last).ok_or(Error::Overflow)?;
        c.checked_sub(sq).ok_or(Error::Overflow)
    }

    pub fn gradient(&self, x: &[i128]) -> Result<Vec<i128>> {
        if x.len() != self.arity() {
            return Err(Error::DimensionMismatch {
                expected: self.arity(),
                got: x.len(),
            });
        }
        let mut g = self.base.gradient(&x[..self.base.n])?;
        let last = x[self.base.n];
        g.push(last.checked_mul(-2).ok_or(Error::Overflow)?);
        Ok(g)
    }

    /// Exact determinant of the full `(n+1) x (n+1)` Hessian of `f`.
    ///
    /// By the block structure this equals `-2 * H_C(x_hat)`; the method
    /// nevertheless computes the true determinant so the relation stays a
    /// testable fact rather than an assumption.
    pub fn hessian_det_f(&self, x: &[BigRational]) -> Result<BigRational> {
        let n = self.base.n;
        if x.len() != n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                got: x.len(),
            });
        }
        let mut mat: Vec<Vec<BigRational>> = (0..n + 1)
            .map(|_| vec![BigRational::zero(); n + 1])
            .collect();
        for (i, row) in mat.iter_mut().enumerate().take(n) {
            for (j, entry) in row.iter_mut().enumerate().take(n) {
                *entry = self.base.second_partial(&x[..n], i, j);
            }
        }
        mat[n][n] = BigRational::from_integer(BigInt::from(-2));
        Ok(rational_det(mat))
    }
}

/// A cubic form with coefficients reduced mod `k`, with power tables for
/// fast residue evaluation. `k` must fit in `u16` territory for the callers
/// that pack values into small arrays; the type itself allows any `k < 2^32`.
pub struct FormModK {
    n: usize,
    k: u64,
    /// terms as (coeff mod k, list of (axis, exponent))
    terms: Vec<(u64, Vec<(u32, u8)>)>,
    /// pow[x][e] = x^e mod k for e <= 3
    pow: Vec<[u64; 4]>,
}

impl FormModK {
    fn new(form: &CubicForm, k: u64) -> Self {
        assert!((1..(1 << 32)).contains(&k));
        let terms = form
            .terms
            .iter()
            .map(|t| {
                let c = (t.coeff % k as i64 + k as i64) as u64 % k;
                let vars = t
                    .exps
                    .iter()
                    .enumerate()
                    .filter(|&(_, &e)| e > 0)
                    .map(|(i, &e)| (i as u32, e))
                    .collect();
                (c, vars)
            })
            .collect();
        let pow = (0..k)
            .map(|x| {
                let x2 = mul_mod(x, x, k);
                [1 % k, x, x2, mul_mod(x2, x, k)]
            })
            .collect();
        FormModK { n: form.n, k, terms, pow }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        self.k
    }

    /// `C(x) mod k` for `x` with entries already reduced below `k`.
    #[inline]
    pub fn eval(&self, x: &[u64]) -> u64 {
        let k = self.k;
        let mut acc: u64 = 0;
        for (c, vars) in &self.terms {
            let mut v = *c;
            for &(axis, e) in vars {
                v = mul_mod(v, self.pow[x[axis as usize] as usize][e as usize], k);
            }
            acc += v;
            if acc >= k {
                acc -= k;
            }
        }
        acc
    }

    /// Gradient mod `k` into `out` (length `n`).
    pub fn gradient(&self, x: &[u64], out: &mut [u64]) {
        let k = self.k;
        out.fill(0);
        for (c, vars) in &self.terms {
            for (slot, &(axis, e)) in vars.iter().enumerate() {
                let mut v = mul_mod(*c, e as u64 % k, k);
                if v == 0 {
                    continue;
                }
                v = mul_mod(v, self.pow[x[axis as usize] as usize][(e - 1) as usize], k);
                for (other, &(ax2, e2)) in vars.iter().enumerate() {
                    if other != slot {
                        v = mul_mod(v, self.pow[x[ax2 as usize] as usize][e2 as usize], k);
                    }
                }
                let o = &mut out[axis as usize];
                *o += v;
                if *o >= k {
                    *o -= k;
                }
            }
        }
    }
}

/// `gamma(t) = exp(-2/(1-t^2))` inside `(-1,1)`, zero outside.
pub fn weight_gamma(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (-2.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Product weight over all coordinates of `v`.
pub fn weight_big_gamma(v: &[f64]) -> f64 {
    v.iter().map(|&t| weight_gamma(t)).product()
}

/// A real zero of `C` with nonvanishing Hessian determinant, scaled by
/// `lambda`; the full anchor is `(lambda * a', 0)` in `n+1` coordinates.
#[derive(Clone, Debug)]
pub struct AnchorPoint {
    a_prime: Vec<BigRational>,
    lambda: BigRational,
}

pub enum AnchorStrategy {
    /// Search sign vectors in `{+1,-1}^n`; only sound for diagonal forms.
    DiagonalBalance,
    /// Caller supplies the unscaled zero `a'`.
    UserSupplied(Vec<BigRational>),
}

pub const DEFAULT_ANCHOR_SCALE: i64 = 2;

impl AnchorPoint {
    fn validated(form: &CubicForm, a_prime: Vec<BigRational>, lambda: BigRational) -> Result<Self> {
        if a_prime.len() != form.n() {
            return Err(Error::DimensionMismatch {
                expected: form.n(),
                got: a_prime.len(),
            });
        }
        if lambda <= BigRational::zero() {
            return Err(Error::NoAnchor("anchor scale must be positive".into()));
        }
        if !form.evaluate_rational(&a_prime)?.is_zero() {
            return Err(Error::NoAnchor(
                "supplied point is not a zero of the form".into(),
            ));
        }
        if form.hessian_det_c(&a_prime)?.is_zero() {
            return Err(Error::NoAnchor(
                "Hessian determinant vanishes at the supplied zero".into(),
            ));
        }
        Ok(AnchorPoint { a_prime, lambda })
    }

    pub fn a_prime(&self) -> &[BigRational] {
        &self.a_prime
    }

    pub fn lambda_f64(&self) -> f64 {
        self.lambda.to_f64().expect("finite scale")
    }

    /// The scaled anchor `a_hat = lambda * a'` as floats (length `n`).
    pub fn a_hat_f64(&self) -> Vec<f64> {
        self.a_prime
            .iter()
            .map(|c| (c * &self.lambda).to_f64().expect("finite coordinate"))
            .collect()
    }

    /// Full `(n+1)`-coordinate anchor with last coordinate 0.
    pub fn full_f64(&self) -> Vec<f64> {
        let mut v = self.a_hat_f64();
        v.push(0.0);
        v
    }

    /// Re-check the defining invariants against a form.
    pub fn verify(&self, form: &CubicForm) -> Result<()> {
        AnchorPoint::validated(form, self.a_prime.clone(), self.lambda.clone()).map(|_| ())
    }
}

pub fn find_anchor(form: &CubicForm, strategy: AnchorStrategy) -> Result<AnchorPoint> {
    find_anchor_with_lambda(
        form,
        strategy,
        BigRational::from_integer(BigInt::from(DEFAULT_ANCHOR_SCALE)),
    )
}

pub fn find_anchor_with_lambda(
    form: &CubicForm,
    strategy: AnchorStrategy,
    lambda: BigRational,
) -> Result<AnchorPoint> {
    match strategy {
        AnchorStrategy::UserSupplied(a_prime) => AnchorPoint::validated(form, a_prime, lambda),
        AnchorStrategy::DiagonalBalance => {
            let n = form.n();
            let mut diag = vec![0i64; n];
            for t in form.terms() {
                let axis = t.exps.iter().position(|&e| e == 3);
                match axis {
                    Some(i) if t.exps.iter().enumerate().all(|(j, &e)| j == i || e == 0) => {
                        diag[i] = t.coeff;
                    }
                    _ => {
                        return Err(Error::NoAnchor(
                            "diagonal-balance needs a diagonal form; supply an anchor".into(),
                        ))
                    }
                }
            }
            if diag.contains(&0) {
                return Err(Error::NoAnchor(
                    "form has an unused variable, its Hessian vanishes everywhere; \
                     supply an anchor"
                        .into(),
                ));
            }
            if n > 24 {
                return Err(Error::BudgetExceeded {
                    what: "diagonal-balance sign search",
                    needed: 1u128 << n,
                    budget: 1u128 << 24,
                });
            }
            for bits in 0u64..(1 << n) {
                let sign = |i: usize| if bits >> i & 1 == 1 { -1i64 } else { 1 };
                let total: i64 = (0..n).map(|i| diag[i] * sign(i)).sum();
                if total != 0 {
                    continue;
                }
                // s and -s are both zeros; normalize to a leading +1
                let flip = sign(0) < 0;
                let a_prime: Vec<BigRational> = (0..n)
                    .map(|i| {
                        let s = if flip { -sign(i) } else { sign(i) };
                        BigRational::from_integer(BigInt::from(s))
                    })
                    .collect();
                return AnchorPoint::validated(form, a_prime, lambda);
            }
            Err(Error::NoAnchor(
                "no sign-balanced zero among +-1 vectors; supply an anchor".into(),
            ))
        }
    }
}
