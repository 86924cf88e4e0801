//! Command-line front end: exponential-sum evaluation, verification suites,
//! bad-set scans, singular-series tables, weighted counts, and the
//! asymptotic comparison table.
//!
//! Exit codes: 0 success, 2 invalid input or refused work, 3 verification
//! failure. Outputs are canonical and byte-identical across worker counts.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num::bigint::BigInt;
use num::rational::BigRational;
use serde::Serialize;

use cubeq::averages::{bad_set_scan, compute_d, compute_d2, compute_e, compute_e2};
use cubeq::density::{asymptotic_table, count_upsilon, singular_series, QuadratureCfg};
use cubeq::error::{Error, Result};
use cubeq::expsum::{
    build_spectrum, q_crt, q_gauss, q_naive, reduce_vec, ExpSumValue, SpectrumTable,
};
use cubeq::forms::{
    find_anchor_with_lambda, AnchorPoint, AnchorStrategy, AugmentedForm, CubicForm,
};
use cubeq::modular::{is_prime, Modulus};
use cubeq::store::ResultStore;
use cubeq::verify::{run_suite, SuiteKind};
use cubeq::{Budget, ExecCtx};

#[derive(Parser)]
#[command(
    name = "cubeq",
    about = "Exponential sums, residue averages, and local densities for C(x) = y^2",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Worker threads (default: machine parallelism). The CUBEQ_THREADS
    /// environment variable overrides this flag.
    #[arg(long)]
    threads: Option<usize>,
    /// Write output to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FormArg {
    /// Path to a form file: {"n": <int>, "terms": [{"e": [..], "c": <int>}]}
    #[arg(long)]
    form: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate Q(m,k) and print value, error bound, and method.
    Expsum {
        #[command(flatten)]
        form: FormArg,
        /// Comma-separated m vector of length n+1 (signed, reduced mod k).
        #[arg(long, allow_hyphen_values = true)]
        m: String,
        #[arg(long)]
        k: u64,
        /// Evaluation route: auto|naive|gauss|crt.
        #[arg(long, default_value = "auto")]
        method: String,
        /// Cross-check all applicable routes; exit 3 on disagreement.
        #[arg(long)]
        check: bool,
        /// Result-store directory for caching.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a named verification suite; exit 3 if any check fails.
    Verify {
        /// identities | bounds | averages | density
        #[arg(long)]
        suite: String,
        /// Monte Carlo seed; mandatory for the density suite.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "text")]
        format: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Bad-set scan of the character spectrum at an odd prime.
    Scan {
        #[command(flatten)]
        form: FormArg,
        #[arg(long)]
        p: u64,
        /// Comma-separated thresholds tau.
        #[arg(long)]
        thresholds: String,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Residue averages D/D2/E/E2 over a list of moduli.
    Averages {
        #[command(flatten)]
        form: FormArg,
        /// Comma-separated moduli.
        #[arg(long)]
        k: String,
        /// D | D2 | E | E2
        #[arg(long)]
        quantity: String,
        /// b_{n+1} for D/D2, r for E/E2.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        parameter: i64,
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Singular-series table: two-route local densities up to a prime cutoff.
    Sseries {
        #[command(flatten)]
        form: FormArg,
        /// Prime cutoff (inclusive).
        #[arg(long = "P")]
        prime_cutoff: u64,
        /// Truncation level A.
        #[arg(long = "A")]
        level: u32,
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Weighted solution counts Upsilon(X).
    Count {
        #[command(flatten)]
        form: FormArg,
        /// Comma-separated X values.
        #[arg(long = "X")]
        x: String,
        /// Anchor a' as comma-separated rationals (default: diagonal balance).
        #[arg(long, allow_hyphen_values = true)]
        anchor: Option<String>,
        /// Anchor scale.
        #[arg(long, default_value = "2", allow_hyphen_values = true)]
        lambda: String,
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Full comparison table: Upsilon(X) against X^{n-3/2} J S.
    Asymptotic {
        #[command(flatten)]
        form: FormArg,
        #[arg(long = "X")]
        x: String,
        #[arg(long = "P", default_value_t = 13)]
        prime_cutoff: u64,
        #[arg(long = "A", default_value_t = 2)]
        level: u32,
        /// Slab widths for the singular integral.
        #[arg(long, default_value = "0.2,0.1,0.05")]
        eps: String,
        /// Quadrature grid per axis.
        #[arg(long, default_value_t = 40)]
        grid: usize,
        /// Monte Carlo seed (required when the quadrature falls back to MC).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, allow_hyphen_values = true)]
        anchor: Option<String>,
        #[arg(long, default_value = "2", allow_hyphen_values = true)]
        lambda: String,
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn effective_ctx(threads: Option<usize>) -> Result<ExecCtx> {
    let from_env = match std::env::var("CUBEQ_THREADS") {
        Ok(v) if !v.is_empty() => Some(v.parse::<usize>().map_err(|_| {
            Error::InvalidInput(format!(
                "CUBEQ_THREADS must be a positive integer, got '{v}'"
            ))
        })?),
        _ => None,
    };
    match from_env.or(threads) {
        Some(n) => ExecCtx::with_threads(n),
        None => Ok(ExecCtx::default()),
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidInput(format!("bad {what} entry '{tok}'")))
        })
        .collect()
}

fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::InvalidInput(format!("bad rational '{s}'"));
    match s.split('/').collect::<Vec<_>>().as_slice() {
        [a] => Ok(BigRational::from_integer(
            a.parse::<i64>().map_err(|_| bad())?.into(),
        )),
        [a, b] => {
            let num: i64 = a.parse().map_err(|_| bad())?;
            let den: i64 = b.parse().map_err(|_| bad())?;
            if den == 0 {
                return Err(bad());
            }
            Ok(BigRational::new(BigInt::from(num), BigInt::from(den)))
        }
        _ => Err(bad()),
    }
}

fn load_form(path: &PathBuf) -> Result<CubicForm> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    CubicForm::from_json_str(&text)
}

fn resolve_anchor(
    form: &CubicForm,
    anchor: &Option<String>,
    lambda: &str,
) -> Result<AnchorPoint> {
    let lambda = parse_rational(lambda)?;
    let strategy = match anchor {
        None => AnchorStrategy::DiagonalBalance,
        Some(s) => {
            let coords: Result<Vec<BigRational>> = s.split(',').map(parse_rational).collect();
            AnchorStrategy::UserSupplied(coords?)
        }
    };
    find_anchor_with_lambda(form, strategy, lambda)
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Render rows as CSV (columns in header order) or a JSON array of objects.
fn render_rows<T: Serialize>(header: &str, rows: &[T], format: &str) -> Result<String> {
    match format {
        "csv" => {
            let mut s = String::new();
            s.push_str(header);
            s.push('\n');
            for row in rows {
                let v = serde_json::to_value(row)?;
                let obj = v.as_object().expect("row structs serialize to objects");
                let mut first = true;
                for key in header.split(',') {
                    if !first {
                        s.push(',');
                    }
                    first = false;
                    match obj.get(key) {
                        Some(serde_json::Value::Null) | None => {}
                        Some(serde_json::Value::String(x)) => s.push_str(x),
                        Some(other) => {
                            let _ = write!(s, "{other}");
                        }
                    }
                }
                s.push('\n');
            }
            Ok(s)
        }
        "json" => {
            let mut s = serde_json::to_string_pretty(rows)?;
            s.push('\n');
            Ok(s)
        }
        other => Err(Error::InvalidInput(format!(
            "unknown format '{other}' (expected csv|json)"
        ))),
    }
}

#[derive(Serialize)]
struct ScanRow {
    p: u64,
    tau: f64,
    exceed_count: u64,
    p_pow_nminus1: f64,
    fraction: f64,
}

#[derive(Serialize)]
struct AverageRow {
    p: u64,
    quantity: String,
    parameter: i64,
    value: f64,
    bound: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct SseriesRow {
    p: u64,
    #[serde(rename = "A")]
    level: u32,
    route_expsum: f64,
    route_count: f64,
    sigma_p: f64,
    stabilized: bool,
}

#[derive(Serialize)]
struct CountRow {
    #[serde(rename = "X")]
    x: f64,
    upsilon: f64,
    raw: u64,
}

#[derive(Serialize)]
struct AsymptoticRow {
    #[serde(rename = "X")]
    x: f64,
    upsilon: f64,
    raw: u64,
    main_term: f64,
    ratio: f64,
    slope_estimate: Option<f64>,
}

#[derive(Serialize)]
struct ExpsumOutput {
    re: f64,
    im: f64,
    abs: f64,
    err: f64,
    method: String,
}

fn load_spectrum_cached(
    form: &CubicForm,
    p: u64,
    store: &Option<PathBuf>,
    budget: &Budget,
    ctx: &ExecCtx,
) -> Result<SpectrumTable> {
    let hash = form.content_hash();
    if let Some(dir) = store {
        let store = ResultStore::open(dir.clone())?;
        if let Some(spec) = store.load_spectrum(&hash, p, form.n())? {
            eprintln!("store: spectrum cache hit for p={p}");
            return Ok(spec);
        }
        let spec = build_spectrum(form, p, budget, ctx)?;
        store.save_spectrum(&hash, &spec)?;
        return Ok(spec);
    }
    build_spectrum(form, p, budget, ctx)
}

fn render_expsum_line(label: &str, v: &ExpSumValue) -> String {
    let sign = if v.value.im < 0.0 { "-" } else { "+" };
    format!(
        "{label}: {} {sign} {}i  |Q| = {}  err = {:.3e}  method = {}\n",
        v.value.re,
        v.value.im.abs(),
        v.abs(),
        v.err,
        v.method
    )
}

fn run(cli: Cli) -> Result<()> {
    let budget = Budget::default();
    match cli.command {
        Command::Expsum {
            form,
            m,
            k,
            method,
            check,
            store,
            format,
            common,
        } => {
            let _ctx = effective_ctx(common.threads)?;
            let form = AugmentedForm::new(load_form(&form.form)?);
            let m: Vec<i64> = parse_list(&m, "m")?;
            if m.len() != form.arity() {
                return Err(Error::InvalidInput(format!(
                    "m has {} coordinates, the form needs {}",
                    m.len(),
                    form.arity()
                )));
            }
            if k == 0 {
                return Err(Error::InvalidInput("k must be positive".into()));
            }
            let modulus = Modulus::new(k)?;
            let eval_route = |route: &str| -> Result<ExpSumValue> {
                match route {
                    "auto" | "crt" => q_crt(&form, &m, &modulus, &budget),
                    "naive" => q_naive(&form, &m, k, &budget),
                    "gauss" => q_gauss(&form, &m, k, &budget),
                    other => Err(Error::InvalidInput(format!(
                        "unknown method '{other}' (expected auto|naive|gauss|crt)"
                    ))),
                }
            };
            if check {
                let naive = q_naive(&form, &m, k, &budget)?;
                let mut lines = vec![render_expsum_line("naive", &naive)];
                let crt = q_crt(&form, &m, &modulus, &budget)?;
                lines.push(render_expsum_line("crt", &crt));
                if !naive.agrees_with(&crt, 1e-6) {
                    return Err(Error::VerificationFailure(
                        "crt route disagrees with the naive oracle".into(),
                    ));
                }
                if k % 2 == 1 {
                    let gauss = q_gauss(&form, &m, k, &budget)?;
                    lines.push(render_expsum_line("gauss", &gauss));
                    if !naive.magnitude_agrees_with(&gauss, 1e-6) {
                        return Err(Error::VerificationFailure(
                            "gauss route magnitude disagrees with the naive oracle".into(),
                        ));
                    }
                }
                lines.push("check: all routes agree\n".to_string());
                return emit(&common.out, &lines.concat());
            }
            let value = if let Some(dir) = &store {
                let rs = ResultStore::open(dir.clone())?;
                let mr = reduce_vec(&m, k);
                match rs.load_q(&form.content_hash(), k, &mr)? {
                    Some(v) => {
                        eprintln!("store: Q cache hit");
                        v
                    }
                    None => {
                        let v = eval_route(&method)?;
                        rs.save_q(&form.content_hash(), k, &mr, &v)?;
                        v
                    }
                }
            } else {
                eval_route(&method)?
            };
            let content = match format.as_str() {
                "text" => render_expsum_line("Q", &value),
                "json" => {
                    let mut s = serde_json::to_string_pretty(&ExpsumOutput {
                        re: value.value.re,
                        im: value.value.im,
                        abs: value.abs(),
                        err: value.err,
                        method: value.method.to_string(),
                    })?;
                    s.push('\n');
                    s
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown format '{other}' (expected text|json)"
                    )))
                }
            };
            emit(&common.out, &content)
        }

        Command::Verify {
            suite,
            seed,
            format,
            common,
        } => {
            let ctx = effective_ctx(common.threads)?;
            let kind: SuiteKind = suite.parse()?;
            let report = run_suite(kind, seed, &budget, &ctx)?;
            let content = match format.as_str() {
                "text" => report.render_text(),
                "csv" => {
                    let mut s = String::from("suite,check,pass,detail\n");
                    for c in &report.checks {
                        let _ = writeln!(
                            s,
                            "{},{},{},{}",
                            c.suite,
                            c.name,
                            c.pass,
                            c.detail.replace(',', ";")
                        );
                    }
                    s
                }
                "json" => {
                    #[derive(Serialize)]
                    struct CheckRow<'a> {
                        suite: &'a str,
                        check: &'a str,
                        pass: bool,
                        detail: &'a str,
                    }
                    let rows: Vec<CheckRow> = report
                        .checks
                        .iter()
                        .map(|c| CheckRow {
                            suite: c.suite,
                            check: &c.name,
                            pass: c.pass,
                            detail: &c.detail,
                        })
                        .collect();
                    let mut s = serde_json::to_string_pretty(&rows)?;
                    s.push('\n');
                    s
                }
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown format '{other}' (expected text|csv|json)"
                    )))
                }
            };
            emit(&common.out, &content)?;
            if !report.all_pass() {
                return Err(Error::VerificationFailure(format!(
                    "suite {} has failing checks",
                    kind.name()
                )));
            }
            Ok(())
        }

        Command::Scan {
            form,
            p,
            thresholds,
            store,
            format,
            common,
        } => {
            let ctx = effective_ctx(common.threads)?;
            let form = load_form(&form.form)?;
            if p < 3 || !is_prime(p) {
                return Err(Error::InvalidInput(format!("{p} is not an odd prime")));
            }
            let thresholds: Vec<f64> = parse_list(&thresholds, "thresholds")?;
            let spec = load_spectrum_cached(&form, p, &store, &budget, &ctx)?;
            let scan = bad_set_scan(&spec, &thresholds);
            let n = form.n();
            let rows: Vec<ScanRow> = scan
                .thresholds
                .iter()
                .zip(&scan.exceed_counts)
                .map(|(&tau, &count)| ScanRow {
                    p,
                    tau,
                    exceed_count: count,
                    p_pow_nminus1: (p as f64).powi(n as i32 - 1),
                    fraction: count as f64 / (p as f64).powi(n as i32),
                })
                .collect();
            emit(
                &common.out,
                &render_rows("p,tau,exceed_count,p_pow_nminus1,fraction", &rows, &format)?,
            )
        }

        Command::Averages {
            form,
            k,
            quantity,
            parameter,
            format,
            common,
        } => {
            let ctx = effective_ctx(common.threads)?;
            let form = AugmentedForm::new(load_form(&form.form)?);
            let ks: Vec<u64> = parse_list(&k, "k")?;
            let mut rows = Vec::new();
            for k in ks {
                let report = match quantity.as_str() {
                    "D" => compute_d(&form, k, parameter, &budget, &ctx)?,
                    "D2" => {
                        let modulus = Modulus::new(k)?;
                        match modulus.factors() {
                            [(p, a)] => {
                                compute_d2(&form, *p, *a, parameter, &budget, &ctx)?.report
                            }
                            _ => {
                                return Err(Error::InvalidInput(
                                    "D2 needs a prime-power modulus".into(),
                                ))
                            }
                        }
                    }
                    "E" => compute_e(&form, k, parameter, &budget, &ctx)?,
                    "E2" => compute_e2(&form, k, parameter, &budget, &ctx)?.report,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "unknown quantity '{other}' (expected D|D2|E|E2)"
                        )))
                    }
                };
                rows.push(AverageRow {
                    p: report.k,
                    quantity: report.quantity.to_string(),
                    parameter: report.parameter,
                    value: report.value,
                    bound: report.bound,
                    ratio: report.ratio,
                });
            }
            emit(
                &common.out,
                &render_rows("p,quantity,parameter,value,bound,ratio", &rows, &format)?,
            )
        }

        Command::Sseries {
            form,
            prime_cutoff,
            level,
            format,
            common,
        } => {
            let ctx = effective_ctx(common.threads)?;
            let form = AugmentedForm::new(load_form(&form.form)?);
            let (s, factors) = singular_series(&form, prime_cutoff, level, &budget, &ctx)?;
            let rows: Vec<SseriesRow> = factors
                .iter()
                .map(|lf| SseriesRow {
                    p: lf.p,
                    level: lf.level,
                    route_expsum: lf.route_expsum,
                    route_count: lf.route_count,
                    sigma_p: lf.sigma_p,
                    stabilized: lf.stabilized,
                })
                .collect();
            emit(
                &common.out,
                &render_rows(
                    "p,A,route_expsum,route_count,sigma_p,stabilized",
                    &rows,
                    &format,
                )?,
            )?;
            eprintln!("S_truncated = {s}");
            if s <= 0.0 {
                return Err(Error::VerificationFailure(
                    "truncated singular series is not positive".into(),
                ));
            }
            Ok(())
        }

        Command::Count {
            form,
            x,
            anchor,
            lambda,
            format,
            common,
        } => {
            let ctx = effective_ctx(common.threads)?;
            let form = AugmentedForm::new(load_form(&form.form)?);
            let anchor = resolve_anchor(form.base(), &anchor, &lambda)?;
            let mut xs: Vec<f64> = parse_list(&x, "X")?;
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut rows = Vec::new();
            for x in xs {
                let (upsilon, raw) = count_upsilon(&form, &anchor, x, &budget, &ctx)?;
                rows.push(CountRow { x, upsilon, raw });
            }
            emit(&common.out, &render_rows("X,upsilon,raw", &rows, &format)?)
        }

        Command::Asymptotic {
            form,
            x,
            prime_cutoff,
            level,
            eps,
            grid,
            seed,
            anchor,
            lambda,
            format,
            common,
        } => {
            let ctx = effective_ctx(common.threads)?;
            let form = AugmentedForm::new(load_form(&form.form)?);
            let anchor = resolve_anchor(form.base(), &anchor, &lambda)?;
            let xs: Vec<f64> = parse_list(&x, "X")?;
            let eps: Vec<f64> = parse_list(&eps, "eps")?;
            let cfg = QuadratureCfg {
                grid,
                seed,
                ..QuadratureCfg::default()
            };
            let (results, singular) = asymptotic_table(
                &form,
                &anchor,
                &xs,
                prime_cutoff,
                level,
                &eps,
                &cfg,
                &budget,
                &ctx,
            )?;
            let rows: Vec<AsymptoticRow> = results
                .iter()
                .map(|r| AsymptoticRow {
                    x: r.x,
                    upsilon: r.upsilon,
                    raw: r.raw_solutions,
                    main_term: r.main_term,
                    ratio: r.ratio,
                    slope_estimate: r.slope_estimate,
                })
                .collect();
            emit(
                &common.out,
                &render_rows(
                    "X,upsilon,raw,main_term,ratio,slope_estimate",
                    &rows,
                    &format,
                )?,
            )?;
            eprintln!(
                "S_truncated = {}  J_extrapolated = {}",
                singular.s_truncated, singular.j_extrapolated
            );
            Ok(())
        }
    }
}
