//! Local densities and the global prediction.
//!
//! The truncated local density at `p` is computed by two independent routes
//! that agree as an exact identity:
//!
//! ```text
//! sum_{a <= A} p^{-a(n+1)} Q(0, p^a)  =  p^{-A n} M(p^A),
//! ```
//!
//! where `M(q)` counts solutions of `f = 0 mod q`. The left side comes from
//! the exponential-sum evaluators, the right side from a Hensel-lifting point
//! counter. The singular integral is the slab limit
//! `J = lim (1/2 eps) int_{|f(t)| < eps} Gamma(t - a) dt`, evaluated by
//! tensor-grid quadrature (Monte Carlo above five dimensions) with Richardson
//! extrapolation over the eps schedule. `count_upsilon` enumerates the
//! weighted lattice solutions that the main term `X^{n-3/2} J S` predicts.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::exec::pairwise_sum;
use crate::expsum::{q_gauss, q_naive, q_prime_power};
use crate::forms::{weight_gamma, AnchorPoint, AugmentedForm, Term};
use crate::modular::{factorize, is_prime, mul_mod};
use crate::{Budget, Error, ExecCtx, Result};

/// Truncated p-adic density computed by two independent routes.
#[derive(Clone, Debug)]
pub struct LocalFactor {
    pub p: u64,
    /// truncation level `A`
    pub level: u32,
    /// `sum_{a <= A} p^{-a(n+1)} Q(0, p^a)`
    pub route_expsum: f64,
    /// `p^{-A n} M(p^A)`
    pub route_count: f64,
    /// count route stable from `A-1` to `A` within 1e-9
    pub stabilized: bool,
    pub sigma_p: f64,
}

impl LocalFactor {
    /// `|sigma_p - 1|`, the convergence heuristic logged per prime.
    pub fn sigma_deviation(&self) -> f64 {
        (self.sigma_p - 1.0).abs()
    }
}

#[derive(Clone, Debug)]
pub struct SingularData {
    pub prime_cutoff: u64,
    pub level: u32,
    pub s_truncated: f64,
    /// `J(eps)` at the smallest slab width
    pub j: f64,
    pub eps_schedule: Vec<f64>,
    pub j_extrapolated: f64,
}

#[derive(Clone, Debug)]
pub struct CountResult {
    pub x: f64,
    pub upsilon: f64,
    pub raw_solutions: u64,
    pub main_term: f64,
    pub ratio: f64,
    /// cumulative least-squares slope of `log upsilon` against `log X`
    pub slope_estimate: Option<f64>,
}

/// `M(q) = #\{ x mod q : f(x) = 0 \}`, exactly.
///
/// Multiplicative over the prime factorization. At `p^A` with `A >= 2` a
/// Hensel counter walks the solutions mod `p`: a nonsingular base solution
/// carries exactly `p^{(A-1)n}` lifts, a singular one is followed level by
/// level through its fiber.
pub fn point_count(
    form: &AugmentedForm,
    q: u64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<u128> {
    if q == 0 {
        return Err(Error::InvalidModulus("modulus must be positive".into()));
    }
    let mut total: u128 = 1;
    for (p, a) in factorize(q) {
        total = total
            .checked_mul(count_prime_power(form, p, a, budget, ctx)?)
            .ok_or(Error::Overflow)?;
    }
    Ok(total)
}

fn count_prime_power(
    form: &AugmentedForm,
    p: u64,
    level: u32,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<u128> {
    let n = form.arity() - 1;
    let base_points = (p as u128).pow(n as u32);
    if base_points > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "point_count",
            needed: base_points,
            budget: budget.enum_points,
        });
    }
    let q = (p as u128).pow(level);
    if q > u32::MAX as u128 {
        return Err(Error::BudgetExceeded {
            what: "point_count",
            needed: q,
            budget: u32::MAX as u128,
        });
    }
    let q = q as u64;
    let cm_q = form.base().reduce_mod(q);
    let cm_p = form.base().reduce_mod(p);
    let mut roots_mod_p: Vec<Vec<u32>> = vec![Vec::new(); p as usize];
    for y in 0..p {
        roots_mod_p[mul_mod(y, y, p) as usize].push(y as u32);
    }
    let lift_factor = (p as u128).pow((level - 1) * n as u32);

    // parallel over the first l_hat axis; per-axis results are exact
    // integers, summed in canonical order
    let counts: Vec<Result<u128>> = ctx.install(|| {
        (0..p)
            .into_par_iter()
            .map(|first| {
                let mut l_hat = vec![0u64; n];
                l_hat[0] = first;
                let mut grad = vec![0u64; n];
                let mut count: u128 = 0;
                loop {
                    let c_q = cm_q.eval(&l_hat);
                    let c_p = (c_q % p) as usize;
                    for &y in &roots_mod_p[c_p] {
                        let y = y as u64;
                        if level == 1 {
                            count += 1;
                            continue;
                        }
                        cm_p.gradient(&l_hat, &mut grad);
                        let singular = grad.iter().all(|&g| g == 0) && (2 * y).is_multiple_of(p);
                        if !singular {
                            count += lift_factor;
                        } else {
                            let f_q = (c_q + q - mul_mod(y, y, q)) % q;
                            let mut x: Vec<u64> = l_hat.clone();
                            x.push(y);
                            count += lift_singular(form, &x, f_q, 1, p, level, budget)?;
                        }
                    }
                    let mut axis = n;
                    loop {
                        if axis <= 1 {
                            return Ok(count);
                        }
                        axis -= 1;
                        l_hat[axis] += 1;
                        if l_hat[axis] < p {
                            break;
                        }
                        l_hat[axis] = 0;
                    }
                }
            })
            .collect()
    });
    let mut total: u128 = 0;
    for c in counts {
        total += c?;
    }
    Ok(total)
}

/// Lifts above a singular solution `x mod p^j` (gradient of `f` vanishing
/// mod `p`). All `p^{n+1}` children `x + p^j u` share `f mod p^{j+1}`, so
/// the fiber either dies or expands wholesale at each level.
fn lift_singular(
    form: &AugmentedForm,
    x: &[u64],
    f_at_x: u64,
    j: u32,
    p: u64,
    level: u32,
    budget: &Budget,
) -> Result<u128> {
    if j == level {
        return Ok(1);
    }
    let step = p.pow(j);
    if !f_at_x.is_multiple_of(step * p) {
        return Ok(0);
    }
    if j + 1 == level {
        return Ok((p as u128).pow(x.len() as u32));
    }
    // expand one level: children need f evaluated mod p^level exactly
    let children = (p as u128).pow(x.len() as u32);
    if children.pow(level - j - 1) > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "singular fiber",
            needed: children.pow(level - j - 1),
            budget: budget.enum_points,
        });
    }
    let q = p.pow(level);
    let cm_q = form.base().reduce_mod(q);
    let arity = x.len();
    let n = arity - 1;
    let mut u = vec![0u64; arity];
    let mut child = vec![0u64; arity];
    let mut total: u128 = 0;
    loop {
        for i in 0..arity {
            child[i] = (x[i] + step * u[i]) % q;
        }
        let c = cm_q.eval(&child[..n]);
        let f_child = (c + q - mul_mod(child[n], child[n], q)) % q;
        total += lift_singular(form, &child, f_child, j + 1, p, level, budget)?;
        let mut axis = arity;
        loop {
            if axis == 0 {
                return Ok(total);
            }
            axis -= 1;
            u[axis] += 1;
            if u[axis] < p {
                break;
            }
            u[axis] = 0;
        }
    }
}

/// Find `x mod p` with `f(x) = 0` and a unit partial derivative; its
/// existence makes `sigma_p > 0` by Hensel lifting.
pub fn hensel_soluble(
    form: &AugmentedForm,
    p: u64,
    budget: &Budget,
) -> Result<Option<Vec<u64>>> {
    if !is_prime(p) {
        return Err(Error::InvalidModulus(format!("{p} is not prime")));
    }
    let n = form.arity() - 1;
    if form
        .base()
        .terms()
        .iter()
        .all(|t: &Term| t.coeff.rem_euclid(p as i64) == 0)
    {
        return Err(Error::InvalidInput(format!(
            "form vanishes identically mod {p}; only primitive forms are supported"
        )));
    }
    let points = (p as u128).pow(n as u32 + 1);
    if points > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "hensel_soluble",
            needed: points,
            budget: budget.enum_points,
        });
    }
    let cm = form.base().reduce_mod(p);
    let mut roots_mod_p: Vec<Vec<u32>> = vec![Vec::new(); p as usize];
    for y in 0..p {
        roots_mod_p[mul_mod(y, y, p) as usize].push(y as u32);
    }
    let mut l_hat = vec![0u64; n];
    let mut grad = vec![0u64; n];
    loop {
        let c = cm.eval(&l_hat) as usize;
        if !roots_mod_p[c].is_empty() {
            cm.gradient(&l_hat, &mut grad);
            let grad_c_nonzero = grad.iter().any(|&g| g != 0);
            for &y in &roots_mod_p[c] {
                let y = y as u64;
                if grad_c_nonzero || !(2 * y).is_multiple_of(p) {
                    let mut witness = l_hat.clone();
                    witness.push(y);
                    return Ok(Some(witness));
                }
            }
        }
        let mut axis = n;
        loop {
            if axis == 0 {
                return Ok(None);
            }
            axis -= 1;
            l_hat[axis] += 1;
            if l_hat[axis] < p {
                break;
            }
            l_hat[axis] = 0;
        }
    }
}

const LOCAL_ROUTE_TOL: f64 = 1e-6;
const STABILIZED_TOL: f64 = 1e-9;

/// Both density routes at `(p, A)`; disagreement is a verification failure.
pub fn local_factor(
    form: &AugmentedForm,
    p: u64,
    level: u32,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<LocalFactor> {
    if !is_prime(p) {
        return Err(Error::InvalidModulus(format!("{p} is not prime")));
    }
    if level == 0 {
        return Err(Error::InvalidInput("truncation level must be >= 1".into()));
    }
    let n = form.arity() - 1;
    let mut route_expsum = 1.0f64; // alpha = 0 term, Q(0,1) = 1
    let m0 = vec![0i64; n + 1];
    for alpha in 1..=level {
        let q = if p == 2 {
            q_naive(form, &m0, 1u64 << alpha, budget)?
        } else if alpha == 1 {
            q_gauss(form, &m0, p, budget)?
        } else {
            q_prime_power(form, &m0, p, alpha, budget)?
        };
        if q.value.im.abs() > q.err.max(1e-9) {
            return Err(Error::VerificationFailure(format!(
                "Q(0,{p}^{alpha}) should be real, got {}",
                q.value
            )));
        }
        route_expsum += (p as f64).powi(-((alpha * (n as u32 + 1)) as i32)) * q.value.re;
    }

    let scaled_count = |a: u32| -> Result<f64> {
        let m = point_count(form, p.pow(a), budget, ctx)?;
        Ok(m as f64 / (p as f64).powi((a * n as u32) as i32))
    };
    let route_count = scaled_count(level)?;
    let stabilized = if level >= 2 {
        (route_count - scaled_count(level - 1)?).abs() <= STABILIZED_TOL
    } else {
        false
    };

    if (route_expsum - route_count).abs() > LOCAL_ROUTE_TOL * route_count.abs().max(1.0) {
        return Err(Error::VerificationFailure(format!(
            "local density routes disagree at p={p}, A={level}: \
             exp-sum route {route_expsum} vs count route {route_count}"
        )));
    }
    Ok(LocalFactor {
        p,
        level,
        route_expsum,
        route_count,
        stabilized,
        sigma_p: route_count,
    })
}

/// Truncated singular series `prod_{p <= P} sigma_p`; any route disagreement
/// aborts with a verification failure.
pub fn singular_series(
    form: &AugmentedForm,
    prime_cutoff: u64,
    level: u32,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<(f64, Vec<LocalFactor>)> {
    let mut factors = Vec::new();
    let mut product = 1.0f64;
    for p in 2..=prime_cutoff {
        if !is_prime(p) {
            continue;
        }
        let lf = local_factor(form, p, level, budget, ctx)?;
        product *= lf.sigma_p;
        factors.push(lf);
    }
    Ok((product, factors))
}

/// Quadrature configuration for the slab integral.
#[derive(Clone, Debug)]
pub struct QuadratureCfg {
    /// grid points per axis over the first `n` coordinates
    pub grid: usize,
    pub mc_samples: u64,
    /// fixed chunk count so results do not depend on the worker count
    pub mc_chunks: u64,
    pub seed: Option<u64>,
}

impl Default for QuadratureCfg {
    fn default() -> Self {
        QuadratureCfg {
            grid: 40,
            mc_samples: 2_000_000,
            mc_chunks: 256,
            seed: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SlabDensity {
    pub eps: Vec<f64>,
    pub j_values: Vec<f64>,
    /// present when the Monte Carlo fallback ran
    pub mc_std_err: Option<Vec<f64>>,
}

/// `J(eps) = (1/2 eps) int_{|f(t)| < eps} Gamma(t - center) dt` for every
/// width in `eps`, over the box `center + (-1,1)^{n+1}`.
///
/// The first `n` axes are integrated on a tensor midpoint grid (Monte Carlo
/// when the dimension or the budget demands it); the last axis is resolved
/// exactly: the slab condition `|C - s^2| < eps` is an explicit pair of
/// intervals in `s`, and the weight is integrated over them with a fixed
/// composite rule. That keeps `J(eps)` smooth in `eps`, which the Richardson
/// extrapolation relies on.
pub fn slab_density(
    form: &AugmentedForm,
    center: &[f64],
    eps: &[f64],
    cfg: &QuadratureCfg,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<SlabDensity> {
    let n = form.arity() - 1;
    if center.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: center.len(),
        });
    }
    if eps.is_empty() || eps.iter().any(|&e| e <= 0.0) {
        return Err(Error::InvalidInput("eps schedule must be positive".into()));
    }
    let grid_points = (cfg.grid as u128).checked_pow(n as u32);
    let use_grid = n < 5 && grid_points.is_some_and(|g| g <= budget.enum_points);
    if use_grid {
        grid_slab(form, center, eps, cfg.grid, ctx)
    } else {
        let seed = cfg.seed.ok_or_else(|| {
            Error::InvalidInput(
                "Monte Carlo slab integration requires an explicit seed".into(),
            )
        })?;
        mc_slab(form, center, eps, cfg, seed, ctx)
    }
}

/// Integral of the weight over the set `{ s in (-1,1) : |c - s^2| < eps }`,
/// by interval decomposition and a 32-point composite midpoint rule.
fn last_axis_integral(c: f64, eps: f64) -> f64 {
    if c + eps <= 0.0 {
        return 0.0;
    }
    let hi = (c + eps).sqrt();
    let mut total = 0.0;
    let mut add_interval = |a: f64, b: f64| {
        let a = a.max(-1.0);
        let b = b.min(1.0);
        if b <= a {
            return;
        }
        const STEPS: usize = 32;
        let h = (b - a) / STEPS as f64;
        let mut acc = 0.0;
        for i in 0..STEPS {
            acc += weight_gamma(a + (i as f64 + 0.5) * h);
        }
        total += acc * h;
    };
    if c - eps < 0.0 {
        add_interval(-hi, hi);
    } else {
        let lo = (c - eps).sqrt();
        add_interval(lo, hi);
        add_interval(-hi, -lo);
    }
    total
}

/// `t -> inner(C(t), eps)` has square-root kinks along the fold curves
/// `C = -eps`, `C = +eps`, `C = 1 -+ eps` (slab appearing, splitting, and
/// leaving the box). Cells whose `C` value comes within the cell's Lipschitz
/// slack of a fold are re-integrated on an `r^n` subgrid; everywhere else
/// the integrand is smooth and plain midpoint sampling is accurate.
fn grid_slab(
    form: &AugmentedForm,
    center: &[f64],
    eps: &[f64],
    grid: usize,
    ctx: &ExecCtx,
) -> Result<SlabDensity> {
    let n = form.arity() - 1;
    let base = form.base().clone();
    let h = 2.0 / grid as f64;
    let cell = h.powi(n as i32);
    let refine: usize = match n {
        1 => 64,
        2 => 16,
        3 => 8,
        _ => 4,
    };
    // Lipschitz slack: |grad C|_inf over the box times the cell diameter
    let coord_bound = center[..n]
        .iter()
        .map(|c| c.abs() + 1.0)
        .fold(1.0f64, f64::max);
    let grad_bound: f64 = form
        .base()
        .terms()
        .iter()
        .map(|t| t.coeff.unsigned_abs() as f64 * 3.0 * coord_bound * coord_bound)
        .sum();
    let slack = grad_bound * h * (n as f64).sqrt();
    let near_fold = |c: f64| -> bool {
        eps.iter().any(|&e| {
            (c + e).abs() <= slack
                || (c - e).abs() <= slack
                || (c - (1.0 - e)).abs() <= slack
                || (c - (1.0 + e)).abs() <= slack
        })
    };
    let partials: Vec<Vec<f64>> = ctx.install(|| {
        (0..grid)
            .into_par_iter()
            .map(|first| {
                let mut sums = vec![0.0f64; eps.len()];
                let mut idx = vec![0usize; n];
                idx[0] = first;
                let mut u = vec![0.0f64; n];
                let mut t = vec![0.0f64; n];
                let mut sub = vec![0usize; n];
                let mut tsub = vec![0.0f64; n];
                loop {
                    let mut w = 1.0f64;
                    for i in 0..n {
                        u[i] = -1.0 + (idx[i] as f64 + 0.5) * h;
                        t[i] = center[i] + u[i];
                        w *= weight_gamma(u[i]);
                    }
                    let c = base.evaluate_f64(&t);
                    if near_fold(c) {
                        // refined pass over an r^n subgrid of this cell
                        let hs = h / refine as f64;
                        sub.fill(0);
                        loop {
                            let mut ws = 1.0f64;
                            for i in 0..n {
                                let us = u[i] - h / 2.0 + (sub[i] as f64 + 0.5) * hs;
                                tsub[i] = center[i] + us;
                                ws *= weight_gamma(us);
                            }
                            if ws > 0.0 {
                                let cs = base.evaluate_f64(&tsub);
                                for (ei, &e) in eps.iter().enumerate() {
                                    let inner = last_axis_integral(cs, e);
                                    if inner > 0.0 {
                                        sums[ei] +=
                                            ws * inner / (refine as f64).powi(n as i32);
                                    }
                                }
                            }
                            let mut axis = n;
                            let mut done = false;
                            loop {
                                if axis == 0 {
                                    done = true;
                                    break;
                                }
                                axis -= 1;
                                sub[axis] += 1;
                                if sub[axis] < refine {
                                    break;
                                }
                                sub[axis] = 0;
                            }
                            if done {
                                break;
                            }
                        }
                    } else if w > 0.0 {
                        for (ei, &e) in eps.iter().enumerate() {
                            let inner = last_axis_integral(c, e);
                            if inner > 0.0 {
                                sums[ei] += w * inner;
                            }
                        }
                    }
                    let mut axis = n;
                    loop {
                        if axis <= 1 {
                            return sums;
                        }
                        axis -= 1;
                        idx[axis] += 1;
                        if idx[axis] < grid {
                            break;
                        }
                        idx[axis] = 0;
                    }
                }
            })
            .collect()
    });
    let j_values = (0..eps.len())
        .map(|ei| {
            let per_first: Vec<f64> = partials.iter().map(|s| s[ei]).collect();
            pairwise_sum(&per_first) * cell / (2.0 * eps[ei])
        })
        .collect();
    Ok(SlabDensity {
        eps: eps.to_vec(),
        j_values,
        mc_std_err: None,
    })
}

fn mc_slab(
    form: &AugmentedForm,
    center: &[f64],
    eps: &[f64],
    cfg: &QuadratureCfg,
    seed: u64,
    ctx: &ExecCtx,
) -> Result<SlabDensity> {
    let n = form.arity() - 1;
    let base = form.base().clone();
    let chunks = cfg.mc_chunks.max(1);
    let per_chunk = (cfg.mc_samples / chunks).max(1);
    let total_samples = (per_chunk * chunks) as f64;
    let volume = 2.0f64.powi(n as i32);
    // common samples across the whole eps schedule: nested slabs share hits
    let chunk_sums: Vec<Vec<f64>> = ctx.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (chunk.wrapping_mul(0x9E3779B97F4A7C15)));
                let mut sums = vec![0.0f64; eps.len()];
                let mut t = vec![0.0f64; n];
                for _ in 0..per_chunk {
                    let mut w = 1.0f64;
                    for (i, slot) in t.iter_mut().enumerate() {
                        let u: f64 = rng.random_range(-1.0..1.0);
                        *slot = center[i] + u;
                        w *= weight_gamma(u);
                    }
                    if w > 0.0 {
                        let c = base.evaluate_f64(&t);
                        for (ei, &e) in eps.iter().enumerate() {
                            let inner = last_axis_integral(c, e);
                            if inner > 0.0 {
                                sums[ei] += w * inner;
                            }
                        }
                    }
                }
                sums
            })
            .collect()
    });
    let mut j_values = Vec::with_capacity(eps.len());
    let mut std_errs = Vec::with_capacity(eps.len());
    for (ei, &e) in eps.iter().enumerate() {
        let scale = volume / (2.0 * e);
        let chunk_means: Vec<f64> = chunk_sums
            .iter()
            .map(|s| s[ei] / per_chunk as f64 * scale)
            .collect();
        let mean = pairwise_sum(&chunk_means) / chunks as f64;
        let var = chunk_means
            .iter()
            .map(|&m| (m - mean) * (m - mean))
            .sum::<f64>()
            / (chunks.saturating_sub(1).max(1)) as f64;
        j_values.push(
            pairwise_sum(&chunk_sums.iter().map(|s| s[ei]).collect::<Vec<_>>())
                / total_samples
                * scale,
        );
        std_errs.push((var / chunks as f64).sqrt());
    }
    Ok(SlabDensity {
        eps: eps.to_vec(),
        j_values,
        mc_std_err: Some(std_errs),
    })
}

#[derive(Clone, Debug)]
pub struct SingularIntegral {
    pub slab: SlabDensity,
    pub j_extrapolated: f64,
    /// difference of the last two extrapolation stages
    pub extrapolation_err: f64,
}

/// Richardson (Neville in `eps^2`) extrapolation of the slab densities at
/// the anchor. Positivity is enforced by the consumers that need it.
pub fn singular_integral(
    form: &AugmentedForm,
    anchor: &AnchorPoint,
    eps_schedule: &[f64],
    cfg: &QuadratureCfg,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<SingularIntegral> {
    anchor.verify(form.base())?;
    let center = anchor.full_f64();
    let mut schedule: Vec<f64> = eps_schedule.to_vec();
    schedule.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let slab = slab_density(form, &center, &schedule, cfg, budget, ctx)?;
    let (j_extrapolated, extrapolation_err) = richardson(&slab.eps, &slab.j_values);
    Ok(SingularIntegral {
        slab,
        j_extrapolated,
        extrapolation_err,
    })
}

/// Neville tableau in `x = eps^2`, extrapolating to `x = 0`. The slab volume
/// is even in `eps`, so the error expansion runs in powers of `eps^2`.
fn richardson(eps: &[f64], j: &[f64]) -> (f64, f64) {
    let m = eps.len();
    let xs: Vec<f64> = eps.iter().map(|&e| e * e).collect();
    let mut tableau: Vec<f64> = j.to_vec();
    let mut prev_best = tableau[m - 1];
    for stage in 1..m {
        for i in (stage..m).rev() {
            tableau[i] = tableau[i]
                + (tableau[i] - tableau[i - 1]) * xs[i] / (xs[i - stage] - xs[i]);
        }
        if stage + 1 < m {
            prev_best = tableau[m - 1];
        }
    }
    let best = tableau[m - 1];
    let err = if m >= 2 { (best - prev_best).abs() } else { 0.0 };
    (best, err)
}

fn first_int_greater(v: f64) -> i64 {
    v.floor() as i64 + 1
}

fn last_int_less(v: f64) -> i64 {
    v.ceil() as i64 - 1
}

fn isqrt_u128(v: u128) -> u128 {
    if v == 0 {
        return 0;
    }
    let mut x = (v as f64).sqrt() as u128 + 1;
    while x.checked_mul(x).is_none_or(|s| s > v) {
        x -= 1;
    }
    x
}

/// Exact integer evaluation specialized for box scans; uses `i64` when the
/// coordinate bound guarantees no overflow, `i128` otherwise.
struct BoxEvaluator {
    terms: Vec<(Vec<(usize, u8)>, i64)>,
    use_i64: bool,
}

impl BoxEvaluator {
    fn new(form: &AugmentedForm, max_abs_coord: i64) -> Self {
        let terms: Vec<(Vec<(usize, u8)>, i64)> = form
            .base()
            .terms()
            .iter()
            .map(|t| {
                let vars = t
                    .exps
                    .iter()
                    .enumerate()
                    .filter(|&(_, &e)| e > 0)
                    .map(|(i, &e)| (i, e))
                    .collect();
                (vars, t.coeff)
            })
            .collect();
        let b = max_abs_coord.unsigned_abs() as u128;
        let budget_sum: u128 = terms
            .iter()
            .map(|(_, c)| c.unsigned_abs() as u128 * b * b * b)
            .sum();
        BoxEvaluator {
            terms,
            use_i64: budget_sum < (i64::MAX / 2) as u128,
        }
    }

    fn eval(&self, x: &[i64]) -> Result<i128> {
        if self.use_i64 {
            let mut acc = 0i64;
            for (vars, c) in &self.terms {
                let mut v = *c;
                for &(i, e) in vars {
                    for _ in 0..e {
                        v *= x[i];
                    }
                }
                acc += v;
            }
            Ok(acc as i128)
        } else {
            let mut acc = 0i128;
            for (vars, c) in &self.terms {
                let mut v = *c as i128;
                for &(i, e) in vars {
                    for _ in 0..e {
                        v = v.checked_mul(x[i] as i128).ok_or(Error::Overflow)?;
                    }
                }
                acc = acc.checked_add(v).ok_or(Error::Overflow)?;
            }
            Ok(acc)
        }
    }
}

/// The weighted count `Upsilon(X)`: for every integer `x_hat` in the open
/// box `|x_hat_i / X - a_i| < 1` with `C(x_hat) = y^2` a perfect square and
/// every `x_{n+1} = +-y` with `|x_{n+1}| < X^{3/2}`, add
/// `Gamma((x_hat/X, x_{n+1}/X^{3/2}) - a)`. `raw` counts the same solutions
/// unweighted.
pub fn count_upsilon(
    form: &AugmentedForm,
    anchor: &AnchorPoint,
    x_scale: f64,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<(f64, u64)> {
    if x_scale.is_nan() || x_scale <= 0.0 {
        return Err(Error::InvalidInput("X must be positive".into()));
    }
    let n = form.arity() - 1;
    let a_hat = anchor.a_hat_f64();
    if a_hat.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a_hat.len(),
        });
    }
    let mut ranges: Vec<(i64, i64)> = Vec::with_capacity(n);
    let mut total: u128 = 1;
    let mut max_abs: i64 = 1;
    for &a in &a_hat {
        let lo = first_int_greater(x_scale * (a - 1.0));
        let hi = last_int_less(x_scale * (a + 1.0));
        let len = (hi - lo + 1).max(0) as u128;
        total = total.saturating_mul(len.max(1));
        max_abs = max_abs.max(lo.abs()).max(hi.abs());
        ranges.push((lo, hi));
    }
    if total > budget.enum_points {
        return Err(Error::BudgetExceeded {
            what: "count_upsilon",
            needed: total,
            budget: budget.enum_points,
        });
    }
    if ranges.iter().any(|&(lo, hi)| lo > hi) {
        return Ok((0.0, 0));
    }
    let evaluator = BoxEvaluator::new(form, max_abs);
    let y_window = x_scale.powf(1.5);
    let inv_x = 1.0 / x_scale;
    let inv_y = 1.0 / y_window;

    let firsts: Vec<i64> = (ranges[0].0..=ranges[0].1).collect();
    let partials: Vec<Result<(f64, u64)>> = ctx.install(|| {
        firsts
            .par_iter()
            .map(|&x0| {
                let mut x = vec![0i64; n];
                x[0] = x0;
                for i in 1..n {
                    x[i] = ranges[i].0;
                }
                let w0 = weight_gamma(x0 as f64 * inv_x - a_hat[0]);
                let mut weights = vec![0.0f64; n];
                weights[0] = w0;
                for i in 1..n {
                    weights[i] = weights[i - 1]
                        * weight_gamma(x[i] as f64 * inv_x - a_hat[i]);
                }
                let mut upsilon_terms: Vec<f64> = Vec::new();
                let mut raw = 0u64;
                loop {
                    let c = evaluator.eval(&x)?;
                    if c >= 0 {
                        let y = isqrt_u128(c as u128);
                        if y * y == c as u128 {
                            let w_hat = weights[n - 1];
                            let y = y as i64;
                            let signs: &[i64] = if y == 0 { &[0] } else { &[1, -1] };
                            for &s in signs {
                                let z = s * y;
                                let zf = z as f64 * inv_y;
                                if zf.abs() < 1.0 {
                                    raw += 1;
                                    upsilon_terms.push(w_hat * weight_gamma(zf));
                                }
                            }
                        }
                    }
                    // odometer over axes 1..n, recomputing the weight prefix
                    let mut axis = n;
                    loop {
                        if axis <= 1 {
                            return Ok((pairwise_sum(&upsilon_terms), raw));
                        }
                        axis -= 1;
                        x[axis] += 1;
                        if x[axis] <= ranges[axis].1 {
                            for i in axis..n {
                                weights[i] = weights[i - 1]
                                    * weight_gamma(x[i] as f64 * inv_x - a_hat[i]);
                            }
                            break;
                        }
                        x[axis] = ranges[axis].0;
                    }
                }
            })
            .collect()
    });
    let mut ups: Vec<f64> = Vec::with_capacity(partials.len());
    let mut raw_total = 0u64;
    for p in partials {
        let (u, r) = p?;
        ups.push(u);
        raw_total += r;
    }
    Ok((pairwise_sum(&ups), raw_total))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// The full comparison table: weighted counts against the predicted main
/// term `X^{n-3/2} * J * S_trunc`.
#[allow(clippy::too_many_arguments)]
pub fn asymptotic_table(
    form: &AugmentedForm,
    anchor: &AnchorPoint,
    x_list: &[f64],
    prime_cutoff: u64,
    level: u32,
    eps_schedule: &[f64],
    cfg: &QuadratureCfg,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<(Vec<CountResult>, SingularData)> {
    let n = form.arity() - 1;
    let (s_truncated, _) = singular_series(form, prime_cutoff, level, budget, ctx)?;
    let integral = singular_integral(form, anchor, eps_schedule, cfg, budget, ctx)?;
    if integral.j_extrapolated.is_nan() || integral.j_extrapolated <= 0.0 {
        return Err(Error::VerificationFailure(format!(
            "singular integral is not positive: {}",
            integral.j_extrapolated
        )));
    }
    let singular = SingularData {
        prime_cutoff,
        level,
        s_truncated,
        j: *integral.slab.j_values.last().unwrap(),
        eps_schedule: integral.slab.eps.clone(),
        j_extrapolated: integral.j_extrapolated,
    };
    let mut xs_sorted = x_list.to_vec();
    xs_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut rows = Vec::with_capacity(xs_sorted.len());
    let mut log_x = Vec::new();
    let mut log_u = Vec::new();
    for &x in &xs_sorted {
        let (upsilon, raw) = count_upsilon(form, anchor, x, budget, ctx)?;
        let main_term =
            x.powf(n as f64 - 1.5) * integral.j_extrapolated * s_truncated;
        if upsilon > 0.0 {
            log_x.push(x.ln());
            log_u.push(upsilon.ln());
        }
        rows.push(CountResult {
            x,
            upsilon,
            raw_solutions: raw,
            main_term,
            ratio: upsilon / main_term,
            slope_estimate: least_squares_slope(&log_x, &log_u),
        });
    }
    Ok((rows, singular))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{find_anchor, AnchorStrategy, CubicForm};

    fn cusp() -> AugmentedForm {
        AugmentedForm::new(CubicForm::new(1, vec![(vec![3], 1)]).unwrap())
    }

    fn fermat_aug(n: usize) -> AugmentedForm {
        AugmentedForm::new(CubicForm::fermat(n))
    }

    /// brute-force M(q) (oracle)
    fn brute_count(form: &AugmentedForm, q: u64) -> u128 {
        let arity = form.arity();
        let mut x = vec![0i128; arity];
        let mut count = 0u128;
        loop {
            if form.evaluate(&x).unwrap().rem_euclid(q as i128) == 0 {
                count += 1;
            }
            let mut axis = arity;
            loop {
                if axis == 0 {
                    return count;
                }
                axis -= 1;
                x[axis] += 1;
                if (x[axis] as u64) < q {
                    break;
                }
                x[axis] = 0;
            }
        }
    }

    #[test]
    fn point_count_examples() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        assert_eq!(point_count(&cusp(), 1, &budget, &ctx).unwrap(), 1);
        assert_eq!(point_count(&cusp(), 5, &budget, &ctx).unwrap(), 5);
        assert_eq!(point_count(&cusp(), 7, &budget, &ctx).unwrap(), 7);
    }

    #[test]
    fn hensel_counter_matches_brute_force() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let mixed = AugmentedForm::new(
            CubicForm::new(2, vec![(vec![2, 1], 1), (vec![0, 3], 2), (vec![3, 0], 3)]).unwrap(),
        );
        for form in [cusp(), fermat_aug(2), mixed] {
            for (p, a) in [(2u64, 2u32), (2, 3), (3, 2), (3, 3), (5, 2), (7, 2), (5, 3)] {
                let q = p.pow(a);
                let fast = point_count(&form, q, &budget, &ctx).unwrap();
                let brute = brute_count(&form, q);
                assert_eq!(fast, brute, "p={p} a={a}");
            }
            // composite modulus via CRT
            assert_eq!(
                point_count(&form, 45, &budget, &ctx).unwrap(),
                brute_count(&form, 45)
            );
        }
    }

    #[test]
    fn hensel_witness_examples() {
        let budget = Budget::default();
        // n=1 cuspidal at p=5: first witness in lex order is (1, 1)
        let w = hensel_soluble(&cusp(), 5, &budget).unwrap().unwrap();
        assert_eq!(w, vec![1, 1]);
        let aug = fermat_aug(2);
        let w = hensel_soluble(&aug, 7, &budget).unwrap().unwrap();
        // witness is a nonsingular solution
        let xi: Vec<i128> = w.iter().map(|&v| v as i128).collect();
        assert_eq!(aug.evaluate(&xi).unwrap().rem_euclid(7), 0);
        let grad = aug.gradient(&xi).unwrap();
        assert!(grad.iter().any(|&g| g.rem_euclid(7) != 0));
        // imprimitive form is rejected
        let imprimitive =
            AugmentedForm::new(CubicForm::new(1, vec![(vec![3], 5)]).unwrap());
        assert!(hensel_soluble(&imprimitive, 5, &budget).is_err());
    }

    #[test]
    fn local_factor_two_routes() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        // cuspidal: route_count = 5^{-1} * 5 = 1, route_expsum = 1 + 0
        let lf = local_factor(&cusp(), 5, 1, &budget, &ctx).unwrap();
        assert!((lf.route_count - 1.0).abs() < 1e-12);
        assert!((lf.route_expsum - 1.0).abs() < 1e-12);

        for p in [2u64, 3, 5, 7] {
            for level in [1u32, 2, 3] {
                let lf = local_factor(&fermat_aug(2), p, level, &budget, &ctx).unwrap();
                assert!(
                    (lf.route_expsum - lf.route_count).abs()
                        <= 1e-6 * lf.route_count.max(1.0),
                    "p={p} A={level}: {} vs {}",
                    lf.route_expsum,
                    lf.route_count
                );
            }
        }
    }

    #[test]
    fn hensel_stabilization_by_level_two() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let aug = fermat_aug(2);
        for p in [5u64, 7] {
            assert!(hensel_soluble(&aug, p, &budget).unwrap().is_some());
            let lf2 = local_factor(&aug, p, 2, &budget, &ctx).unwrap();
            let lf3 = local_factor(&aug, p, 3, &budget, &ctx).unwrap();
            assert!(lf3.stabilized);
            assert!((lf2.route_count - lf3.route_count).abs() <= 1e-9);
        }
    }

    #[test]
    fn singular_series_positive_for_fermat() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let (s, factors) = singular_series(&fermat_aug(2), 13, 2, &budget, &ctx).unwrap();
        assert!(s > 0.0);
        assert_eq!(factors.len(), 6); // 2,3,5,7,11,13
        for lf in &factors {
            assert!(lf.sigma_p > 0.0);
        }
    }

    #[test]
    fn slab_density_empty_when_no_zeros() {
        // box around (2,2,0): C = t1^3 + t2^3 ranges in (2,54), squares in [0,1)
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let cfg = QuadratureCfg {
            grid: 60,
            ..QuadratureCfg::default()
        };
        let d = slab_density(
            &fermat_aug(2),
            &[2.0, 2.0, 0.0],
            &[0.2, 0.1, 0.05],
            &cfg,
            &budget,
            &ctx,
        )
        .unwrap();
        assert_eq!(d.j_values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn singular_integral_cauchy_and_positive() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = fermat_aug(2);
        let anchor = find_anchor(form.base(), AnchorStrategy::DiagonalBalance).unwrap();
        let cfg = QuadratureCfg {
            grid: 400,
            ..QuadratureCfg::default()
        };
        let si =
            singular_integral(&form, &anchor, &[0.2, 0.1, 0.05], &cfg, &budget, &ctx).unwrap();
        let j = &si.slab.j_values; // sorted by descending eps
        assert!(j.iter().all(|&v| v > 0.0));
        assert!(
            (j[2] - j[1]).abs() <= (j[1] - j[0]).abs() + 1e-12,
            "J not Cauchy: {j:?}"
        );
        assert!(si.j_extrapolated > 0.0);
    }

    #[test]
    fn upsilon_single_point_box() {
        // X = 1 around the scaled anchor: exactly one lattice point, weight e^{-14}
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = fermat_aug(6);
        let anchor = find_anchor(form.base(), AnchorStrategy::DiagonalBalance).unwrap();
        let (upsilon, raw) = count_upsilon(&form, &anchor, 1.0, &budget, &ctx).unwrap();
        assert_eq!(raw, 1);
        assert!((upsilon - (-14.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn upsilon_empty_box_is_zero() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = fermat_aug(2);
        let anchor = find_anchor(form.base(), AnchorStrategy::DiagonalBalance).unwrap();
        // X = 0.3: the first axis window (0.3, 0.9) contains no integer
        let (upsilon, raw) = count_upsilon(&form, &anchor, 0.3, &budget, &ctx).unwrap();
        assert_eq!((upsilon, raw), (0.0, 0));
    }

    #[test]
    fn upsilon_bounded_by_raw_and_monotone_raw() {
        let budget = Budget::default();
        let ctx = ExecCtx::default();
        let form = fermat_aug(2);
        let anchor = find_anchor(form.base(), AnchorStrategy::DiagonalBalance).unwrap();
        let mut prev_raw = 0u64;
        for x in [1.0f64, 2.0, 3.0, 4.0, 6.0] {
            let (upsilon, raw) = count_upsilon(&form, &anchor, x, &budget, &ctx).unwrap();
            assert!(upsilon <= raw as f64);
            assert!(raw >= prev_raw, "raw not monotone at X={x}");
            prev_raw = raw;
        }
    }

    #[test]
    fn richardson_quadratic_model() {
        // J(eps) = 7 + 3 eps^2 extrapolates to 7 exactly
        let eps = [0.2, 0.1, 0.05];
        let j: Vec<f64> = eps.iter().map(|&e| 7.0 + 3.0 * e * e).collect();
        let (best, err) = richardson(&eps, &j);
        assert!((best - 7.0).abs() < 1e-12);
        assert!(err < 1e-12);
    }

    #[test]
    fn isqrt_exact() {
        for v in 0u128..2000 {
            let r = isqrt_u128(v);
            assert!(r * r <= v && (r + 1) * (r + 1) > v);
        }
        let big = (1u128 << 80) + 12345;
        let r = isqrt_u128(big);
        assert!(r * r <= big && (r + 1) * (r + 1) > big);
    }
}
