//! Evaluation laboratory for the arithmetic of `C(x_1,...,x_n) = y^2` with
//! `C` an integer cubic form.
//!
//! The crate evaluates the complete exponential sums `Q(m,k)` attached to the
//! polynomial `f(x) = C(x_1,...,x_n) - x_{n+1}^2` by several independent
//! routes, computes the full-residue averages `D`, `E` and their second
//! moments, derives p-adic local densities by two routes (exponential sums
//! and point counts), and counts weighted lattice solutions so that the
//! resulting growth can be compared against the predicted main term.
//!
//! Everything that can be cross-checked is: each fast evaluator is validated
//! against a naive double-sum oracle, every closed-form identity is computed
//! next to its defining sum, and the `verify` module packages those checks
//! into named pass/fail suites.

pub mod averages;
pub mod density;
pub mod error;
pub mod exec;
pub mod expsum;
pub mod forms;
pub mod modular;
pub mod store;
pub mod verify;

pub use error::{Error, Result};
pub use exec::ExecCtx;

/// Work limits for enumeration-backed operations.
///
/// Operations refuse (with [`Error::BudgetExceeded`] or
/// [`Error::MemoryBudget`]) rather than degrade to an approximation when a
/// request exceeds these limits.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    /// Maximum number of term evaluations for the naive `Q(m,k)` double sum
    /// (the sum has `k^{n+2}` terms).
    pub naive_terms: u128,
    /// Maximum number of complex entries a spectrum table or batched
    /// transform may hold in memory.
    pub table_entries: u64,
    /// Maximum number of lattice/residue points a direct enumeration may
    /// visit (point counts, box scans, quadrature grids).
    pub enum_points: u128,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            naive_terms: 1_000_000_000,
            table_entries: 1 << 31,
            enum_points: 1_000_000_000,
        }
    }
}
