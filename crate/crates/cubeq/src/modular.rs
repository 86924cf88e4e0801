//! Exact modular arithmetic primitives: Jacobi symbols, Ramanujan sums,
//! quadratic Gauss sums, CRT inverse pairs, and root-of-unity tables with
//! controlled floating-point error.

use num::complex::Complex64;

use crate::{Budget, Error, Result};

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// `a * b mod m` without overflow for any `u64` inputs.
#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    if m == 1 {
        return 0;
    }
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Multiplicative inverse of `a` mod `m`, if it exists. `inv_mod(_, 1) = 0`
/// (the zero representative of the trivial group).
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    if m == 1 {
        return Some(0);
    }
    let (mut r0, mut r1) = (m as i128, (a % m) as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if r0 != 1 {
        return None;
    }
    Some(t0.rem_euclid(m as i128) as u64)
}

/// Deterministic primality by trial division; intended for desk-scale moduli.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5] {
        if n == p {
            return true;
        }
        if n.is_multiple_of(p) {
            return false;
        }
    }
    let mut d = 7u64;
    // 2/3/5 wheel would be overkill at these sizes.
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Prime factorization with strictly increasing primes.
pub fn factorize(mut k: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut push = |p: u64, a: u32| {
        if a > 0 {
            out.push((p, a));
        }
    };
    let mut a = 0;
    while k.is_multiple_of(2) {
        k /= 2;
        a += 1;
    }
    push(2, a);
    let mut p = 3u64;
    while p * p <= k {
        let mut a = 0;
        while k.is_multiple_of(p) {
            k /= p;
            a += 1;
        }
        push(p, a);
        p += 2;
    }
    if k > 1 {
        push(k, 1);
    }
    out
}

/// A positive modulus together with its prime factorization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Modulus {
    k: u64,
    factors: Vec<(u64, u32)>,
}

impl Modulus {
    pub fn new(k: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModulus("modulus must be positive".into()));
        }
        Ok(Modulus {
            k,
            factors: factorize(k),
        })
    }

    pub fn value(&self) -> u64 {
        self.k
    }

    /// `(p, alpha)` pairs with strictly increasing `p`, each `alpha >= 1`.
    pub fn factors(&self) -> &[(u64, u32)] {
        &self.factors
    }

    pub fn is_odd(&self) -> bool {
        self.k % 2 == 1
    }

    pub fn euler_phi(&self) -> u64 {
        self.factors
            .iter()
            .map(|&(p, a)| p.pow(a - 1) * (p - 1))
            .product::<u64>()
            .max(1)
    }
}

/// Jacobi symbol `(a|k)` for odd `k >= 1`; `0` iff `gcd(a,k) > 1`.
pub fn jacobi(a: i64, k: u64) -> Result<i32> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::EvenModulus(k));
    }
    let mut n = k;
    let mut a = a.rem_euclid(k as i64) as u64;
    let mut sign = 1i32;
    while a != 0 {
        while a.is_multiple_of(2) {
            a /= 2;
            if n % 8 == 3 || n % 8 == 5 {
                sign = -sign;
            }
        }
        std::mem::swap(&mut a, &mut n);
        if a % 4 == 3 && n % 4 == 3 {
            sign = -sign;
        }
        a %= n;
    }
    Ok(if n == 1 { sign } else { 0 })
}

/// Ramanujan sum `c_{p^alpha}(d)` by its piecewise closed form:
/// `p^{alpha-1}(p-1)` if `p^alpha | d`, `-p^{alpha-1}` if `p^{alpha-1}`
/// exactly divides `d`, and `0` otherwise.
pub fn ramanujan(p: u64, alpha: u32, d: i64) -> i128 {
    let q = (p as i128).pow(alpha);
    let qm1 = (p as i128).pow(alpha - 1);
    let d = (d as i128).rem_euclid(q);
    if d % q == 0 {
        qm1 * (p as i128 - 1)
    } else if d % qm1 == 0 {
        -qm1
    } else {
        0
    }
}

/// Table of `e_k(t) = exp(2*pi*i*t/k)` for `t = 0..k-1`.
pub struct UnitRootTable {
    k: u64,
    roots: Vec<Complex64>,
}

impl UnitRootTable {
    pub fn new(k: u64) -> Self {
        assert!(k >= 1);
        let roots = (0..k)
            .map(|t| {
                let (s, c) = (std::f64::consts::TAU * t as f64 / k as f64).sin_cos();
                Complex64::new(c, s)
            })
            .collect();
        UnitRootTable { k, roots }
    }

    pub fn modulus(&self) -> u64 {
        self.k
    }

    /// `e_k(t)` for an already-reduced `t < k`.
    #[inline]
    pub fn root(&self, t: u64) -> Complex64 {
        self.roots[t as usize]
    }

    /// `e_k(t)` for arbitrary signed `t`.
    pub fn root_signed(&self, t: i64) -> Complex64 {
        self.roots[t.rem_euclid(self.k as i64) as usize]
    }
}

/// Quadratic Gauss sum `sum_{t mod p} e_p(t^2)` by direct summation.
///
/// Computed numerically on purpose: the classical closed form is asserted
/// about this value in tests, never used to produce it.
pub fn gauss_sum(p: u64, budget: &Budget) -> Result<Complex64> {
    if p < 3 || !is_prime(p) {
        return Err(Error::InvalidModulus(format!("{p} is not an odd prime")));
    }
    if p as u128 > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "gauss_sum",
            needed: p as u128,
            budget: budget.enum_points,
        });
    }
    let table = UnitRootTable::new(p);
    let mut acc = Complex64::new(0.0, 0.0);
    for t in 0..p {
        acc += table.root(mul_mod(t, t, p));
    }
    Ok(acc)
}

/// For coprime `k`, `k'` returns the inverse pair `(inv(k') mod k, inv(k) mod k')`
/// used to twist `m` when `Q(m, k*k')` is factored over the CRT.
pub fn crt_pair(k: u64, kp: u64) -> Result<(u64, u64)> {
    if k == 0 || kp == 0 {
        return Err(Error::InvalidModulus("moduli must be positive".into()));
    }
    if gcd(k, kp) != 1 {
        return Err(Error::NotCoprime(k, kp));
    }
    let a = inv_mod(kp % k.max(1), k).expect("coprime");
    let b = inv_mod(k % kp.max(1), kp).expect("coprime");
    Ok((a, b))
}
