//! `qdr`: build, print and check quantum deformations of integrable hierarchies.
//!
//! Exit codes: 0 all checks pass, 1 a verification check failed,
//! 2 usage or configuration error, 3 engine error.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qdr_core::bracket::{classical_bracket, commutator_density_functional};
use qdr_core::hierarchy::{build_hierarchy, flow_equation, verify_all, Check, HierarchySetup, Report};
use qdr_core::powersums::{c_coeffs, power_sum_poly};
use qdr_core::scalars::fmt_rational;
use qdr_core::seeds::{dispersionless_kdv_oracle, seed_by_name, toda_miura_inverse, toda_miura_substitute};
use qdr_core::text::{parse_poly, parse_scalar, DensityDoc, ParseContext};
use qdr_core::{Error, LocalFunctional, Metric, ParamSet, QDiffPoly, TruncationSpec};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "qdr", version, about = "Quantum deformations of integrable hierarchies in exact arithmetic")]
struct Cli {
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Cohft {
    Kdv,
    Ilw,
    Toda,
}

impl Cohft {
    fn name(self) -> &'static str {
        match self {
            Cohft::Kdv => "kdv",
            Cohft::Ilw => "ilw",
            Cohft::Toda => "toda",
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Output {
    Text,
    Structured,
}

#[derive(Args)]
struct RunConfig {
    /// Built-in theory.
    #[arg(long, global = true, value_enum, default_value = "kdv")]
    cohft: Cohft,
    /// Custom one-field seed `Ḡ_{1,1}` (overrides --cohft), e.g. "u^3/6 + eps^2/24*u*u[2]".
    #[arg(long, global = true)]
    seed_expr: Option<String>,
    /// Highest power of eps kept.
    #[arg(long, global = true, default_value_t = 4)]
    eps: u32,
    /// Highest power of hbar kept.
    #[arg(long, global = true, default_value_t = 2)]
    hbar: u32,
    /// Highest total u-degree kept (required for toda).
    #[arg(long, global = true)]
    udeg: Option<u32>,
    /// Specialize a formal parameter, e.g. mu=0 or q=1/2.
    #[arg(long = "param", global = true, value_name = "NAME=VALUE")]
    params: Vec<String>,
    #[arg(long, global = true, value_enum, default_value = "text")]
    output: Output,
}

#[derive(Subcommand)]
enum Command {
    /// Print G[a,d] for -1 <= d <= D.
    Hamiltonian {
        #[arg(long = "d", default_value_t = 2, allow_negative_numbers = true)]
        d_max: i32,
    },
    /// Check commutativity, string, recursion and invariants; exit 1 on failure.
    Verify {
        #[arg(long, default_value_t = 2)]
        p_max: i32,
    },
    /// Print the flow du^a/dt^b_d.
    Flow {
        #[arg(long, default_value_t = 1)]
        field: u8,
        #[arg(long, default_value_t = 1)]
        beta: u8,
        #[arg(long = "d", default_value_t = 1, allow_negative_numbers = true)]
        d: i32,
    },
    /// Print the density of [f, ∫g], or of the classical bracket with --classical.
    Bracket {
        #[arg(long)]
        f: String,
        #[arg(long)]
        g: String,
        #[arg(long)]
        classical: bool,
    },
    /// Print the product coefficients C_j and the power-sum polynomial for exponents A.
    Coeffs {
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<u32>,
    },
    /// Compare the recursion at eps = 0 with the generating-function oracle (kdv only).
    DispersionlessCheck {
        #[arg(long = "d", default_value_t = 6)]
        d_max: i32,
    },
    /// Rewrite a toda density in the Miura variables (or back, with --inverse).
    Miura {
        #[arg(long, default_value_t = 1)]
        alpha: u8,
        #[arg(long = "d", default_value_t = 1, allow_negative_numbers = true)]
        d: i32,
        /// Transform this expression instead of a table density.
        #[arg(long)]
        expr: Option<String>,
        #[arg(long)]
        inverse: bool,
    },
}

enum Failure {
    Usage(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Engine(e)) => {
            eprintln!("engine error: {e}");
            ExitCode::from(3)
        }
    }
}

/// Returns whether every check (if any) passed.
fn run(cli: &Cli) -> CliResult<bool> {
    let cfg = &cli.run;
    match &cli.cmd {
        Command::Hamiltonian { d_max } => {
            if *d_max < 0 {
                return Err(usage("--d must be non-negative"));
            }
            let setup = setup(cfg)?;
            let table = build_hierarchy(&setup, *d_max)?;
            let rows: Vec<Row> = (1..=setup.n_fields)
                .flat_map(|a| (-1..=*d_max).map(move |d| (a, d)))
                .map(|(a, d)| Row::new(&setup, a, d, table.get(a, d).expect("built"), table.is_const_fixed(a, d)))
                .collect();
            match cfg.output {
                Output::Text => rows.iter().for_each(|r| println!("G[{},{}] = {}", r.alpha, r.d, r.text)),
                Output::Structured => print_json(&rows),
            }
            Ok(true)
        }
        Command::Verify { p_max } => {
            if *p_max < 0 {
                return Err(usage("--p-max must be non-negative"));
            }
            let setup = setup(cfg)?;
            let table = build_hierarchy(&setup, *p_max)?;
            let report = verify_all(&table, &setup, *p_max)?;
            print_report(cfg, &report);
            Ok(report.all_passed())
        }
        Command::Flow { field, beta, d } => {
            let setup = setup(cfg)?;
            let table = build_hierarchy(&setup, (*d).max(0))?;
            let f = flow_equation(&table, &setup, *field, *beta, *d)?;
            let label = format!("du[{field}]/dt[{beta},{d}]");
            print_density(cfg, &setup, &label, &f);
            Ok(true)
        }
        Command::Bracket { f, g, classical } => {
            let setup = setup(cfg)?;
            let f = parse_user(&setup, f)?;
            let g = LocalFunctional::new(parse_user(&setup, g)?);
            let out = if *classical {
                classical_bracket(&LocalFunctional::new(f), &g, &setup.eta)?.density
            } else {
                commutator_density_functional(&f, &g, &setup.eta)?
            };
            print_density(cfg, &setup, if *classical { "{f, g}" } else { "[f, g]" }, &out);
            Ok(true)
        }
        Command::Coeffs { a } => {
            coeffs(cfg, a);
            Ok(true)
        }
        Command::DispersionlessCheck { d_max } => {
            if cfg.cohft != Cohft::Kdv || cfg.seed_expr.is_some() {
                return Err(usage("dispersionless-check needs --cohft kdv"));
            }
            if *d_max < 0 {
                return Err(usage("--d must be non-negative"));
            }
            let oracle = dispersionless_kdv_oracle(*d_max, cfg.hbar)?;
            let setup = (seed_by_name("kdv").expect("registered").build)(TruncationSpec::new(0, cfg.hbar))?;
            let table = build_hierarchy(&setup, *d_max)?;
            let checks = (-1..=*d_max)
                .map(|d| {
                    let diff = table.get(1, d).expect("built").checked_sub(&oracle[&d])?;
                    let residual = if diff.is_zero() { String::new() } else { diff.to_string() };
                    Ok(Check { name: format!("dispersionless G[1,{d}]"), passed: diff.is_zero(), residual })
                })
                .collect::<qdr_core::Result<Vec<_>>>()?;
            let report = Report { setup: "kdv, eps = 0".into(), checks };
            print_report(cfg, &report);
            Ok(report.all_passed())
        }
        Command::Miura { alpha, d, expr, inverse } => {
            if cfg.cohft != Cohft::Toda || cfg.seed_expr.is_some() {
                return Err(usage("miura needs --cohft toda"));
            }
            let setup = setup(cfg)?;
            let (label, f) = match expr {
                Some(e) => ("expr".to_owned(), parse_user(&setup, e)?),
                None => {
                    let table = build_hierarchy(&setup, (*d).max(0))?;
                    let g = table
                        .get(*alpha, *d)
                        .ok_or_else(|| usage(format!("no density G[{alpha},{d}]")))?;
                    (format!("G[{alpha},{d}]"), g.clone())
                }
            };
            let t = f.trunc();
            let out = if *inverse { toda_miura_inverse(&f, t)? } else { toda_miura_substitute(&f, t)? };
            print_density(cfg, &setup, &label, &out);
            Ok(true)
        }
    }
}

fn setup(cfg: &RunConfig) -> CliResult<HierarchySetup> {
    let mut trunc = TruncationSpec::new(cfg.eps, cfg.hbar);
    if let Some(u) = cfg.udeg {
        trunc = trunc.with_udeg(u);
    }
    let mut setup = match &cfg.seed_expr {
        Some(src) => {
            let params = ParamSet::with(&["mu", "q"]);
            let ctx = ParseContext::new(1, trunc, params.clone()).alias("u", 1);
            let seed = parse_poly(src, &ctx).map_err(|e| usage(format!("--seed-expr: {e}")))?;
            HierarchySetup::new("custom", Metric::scalar(), seed, trunc, 1)?
                .with_params(params)
                .with_alias("u", 1)
        }
        None => match (seed_by_name(cfg.cohft.name()).expect("registered").build)(trunc) {
            Err(Error::UnboundedUDegree) => return Err(usage("this theory needs --udeg")),
            other => other?,
        },
    };
    for spec in &cfg.params {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--param expects NAME=VALUE, got `{spec}`")))?;
        let p = setup
            .params
            .get(name.trim())
            .map_err(|_| usage(format!("`{name}` is not a parameter of {}", setup.name)))?;
        let v = parse_scalar(value, &ParamSet::new()).map_err(|e| usage(format!("--param {name}: {e}")))?;
        let seed = setup.seed.density.specialize_param(p, &v.coeff);
        setup.seed = LocalFunctional::new(seed);
        setup.name = format!("{} {}={}", setup.name, p, v.coeff);
    }
    Ok(setup)
}

fn parse_user(setup: &HierarchySetup, src: &str) -> CliResult<QDiffPoly> {
    let mut ctx = ParseContext::new(setup.n_fields, setup.trunc, setup.params.clone());
    for (name, f) in &setup.aliases {
        ctx = ctx.alias(name, *f);
    }
    parse_poly(src, &ctx).map_err(|e| usage(format!("`{src}`: {e}")))
}

#[derive(Serialize)]
struct Row {
    alpha: u8,
    d: i32,
    constant_fixed: bool,
    #[serde(skip)]
    text: String,
    density: DensityDoc,
}

impl Row {
    fn new(setup: &HierarchySetup, alpha: u8, d: i32, p: &QDiffPoly, constant_fixed: bool) -> Self {
        Row {
            alpha,
            d,
            constant_fixed,
            text: p.to_string(),
            density: DensityDoc::from_poly(p, Some(&setup.name)),
        }
    }
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn print_density(cfg: &RunConfig, setup: &HierarchySetup, label: &str, p: &QDiffPoly) {
    match cfg.output {
        Output::Text => println!("{label} = {p}"),
        Output::Structured => print_json(&DensityDoc::from_poly(p, Some(&setup.name))),
    }
}

fn print_report(cfg: &RunConfig, report: &Report) {
    match cfg.output {
        Output::Text => {
            for c in &report.checks {
                if c.passed {
                    println!("PASS  {}", c.name);
                } else {
                    println!("FAIL  {}  residual: {}", c.name, c.residual);
                }
            }
            let failed = report.failures().count();
            println!(
                "{}: {} passed, {} failed",
                report.setup,
                report.checks.len() - failed,
                failed
            );
        }
        Output::Structured => print_json(report),
    }
}

#[derive(Serialize)]
struct CoeffsDoc {
    exponents: Vec<u32>,
    /// Nonzero `C_j`, keyed by `j`.
    c: std::collections::BTreeMap<u32, String>,
    /// Coefficients of `N^0, N^1, ...`.
    power_sum: Vec<String>,
}

fn coeffs(cfg: &RunConfig, a: &[u32]) {
    let c = c_coeffs(a);
    let ps = power_sum_poly(a);
    let doc = CoeffsDoc {
        exponents: a.to_vec(),
        c: c.coeffs.iter().map(|(j, v)| (*j, fmt_rational(v))).collect(),
        power_sum: ps.coeffs.iter().map(fmt_rational).collect(),
    };
    match cfg.output {
        Output::Text => {
            for (j, v) in &doc.c {
                println!("C[{j}] = {v}");
            }
            let terms: Vec<String> = doc
                .power_sum
                .iter()
                .enumerate()
                .filter(|(_, v)| v.as_str() != "0")
                .map(|(j, v)| format!("({v})*N^{j}"))
                .collect();
            let rhs = if terms.is_empty() { "0".to_owned() } else { terms.join(" + ") };
            println!("Ct(N) = {rhs}");
        }
        Output::Structured => print_json(&doc),
    }
}
