//! Command-line front end: compress condition-set instances into internally
//! ε-approximating sets, verify approximations exactly, compute satisfying
//! densities and character-sum biases, emit worked fixtures, and generate
//! seeded test instances.
//!
//! Exit codes: 0 success / verification accept, 1 verification reject,
//! 2 budget exhaustion, 3 invalid input.  Diagnostics go to standard error.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use condcomp::abelian::{
    compress_group_restricted, compress_group_unrestricted, group_satisfying_density,
    verify_group_internal_approximation,
};
use condcomp::compress::{compress_mod_p, Budget};
use condcomp::fourier::form_bias;
use condcomp::gen::{
    fixture_paired_coordinates, fixture_product_zero, fixture_shifted_pair, generate_instance,
    GenProfile,
};
use condcomp::oracle::{
    satisfying_density, verify_internal_approximation, ApproximationVerdict, DensityMethod,
    DensityResult, OracleCaps,
};
use condcomp::schema::{format_rational, parse_rational, InstanceFile, ParsedInstance, ResultFile};
use condcomp::{Error, Result};
use num::ToPrimitive;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "condcomp",
    version,
    about = "Compress sets of linear and homomorphic conditions over restricted \
             alphabets into internally epsilon-approximating sets, with exact \
             verification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress an instance; prints a result file with a certificate
    Compress {
        /// Instance file (JSON)
        input: PathBuf,
        /// Approximation budget: a rational like "1/20" or a decimal like "0.05"
        #[arg(long)]
        epsilon: String,
        /// Write the result file here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cap on recursion depth
        #[arg(long = "budget-depth")]
        budget_depth: Option<usize>,
        /// Cap on internal exact-counting state spaces
        #[arg(long = "budget-states")]
        budget_states: Option<u64>,
    },
    /// Check that a candidate internally approximates an original instance
    Verify {
        /// Original: an instance file, or a result file (its input is used)
        old: PathBuf,
        /// Candidate: an instance file, or a result file (its output is used)
        new: PathBuf,
        /// Approximation budget: a rational like "1/20" or a decimal like "0.05"
        #[arg(long)]
        epsilon: String,
        /// enumerate, dp, or montecarlo
        #[arg(long, default_value = "enumerate")]
        method: String,
        /// Sample count for montecarlo
        #[arg(long)]
        samples: Option<u64>,
        /// Seed for montecarlo (required with that method)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the satisfying density of an instance
    Density {
        /// Instance file (JSON)
        input: PathBuf,
        /// enumerate, dp, or montecarlo
        #[arg(long, default_value = "enumerate")]
        method: String,
        /// Sample count for montecarlo
        #[arg(long)]
        samples: Option<u64>,
        /// Seed for montecarlo (required with that method)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the character-sum bias of each form of a mod-p instance
    Bias {
        /// Instance file (JSON)
        input: PathBuf,
    },
    /// Emit a named worked fixture instance
    Fixtures {
        /// shifted-pair, paired-coordinates, or product-zero
        #[arg(long)]
        name: String,
        /// Prime modulus (default 3)
        #[arg(long)]
        p: Option<u64>,
        /// Number of coordinates the conditions touch (default 6)
        #[arg(long)]
        k: Option<usize>,
        /// Ambient dimension (default: k)
        #[arg(long)]
        n: Option<usize>,
        /// Write the instance here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded instance from a named profile
    Gen {
        /// sunflower, separated, symmetric-ball, random, or group-random
        #[arg(long)]
        profile: String,
        /// Generation seed (required; generation is a pure function of it)
        #[arg(long)]
        seed: Option<u64>,
        /// Write the instance here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{e}");
            let code = match e {
                Error::Budget(_) => 2,
                Error::Invalid(_) | Error::Internal(_) => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Compress { input, epsilon, out, budget_depth, budget_states } => {
            cmd_compress(&input, &epsilon, out.as_deref(), budget_depth, budget_states)
        }
        Cmd::Verify { old, new, epsilon, method, samples, seed } => {
            cmd_verify(&old, &new, &epsilon, &method, samples, seed)
        }
        Cmd::Density { input, method, samples, seed } => {
            cmd_density(&input, &method, samples, seed)
        }
        Cmd::Bias { input } => cmd_bias(&input),
        Cmd::Fixtures { name, p, k, n, out } => {
            cmd_fixtures(&name, p.unwrap_or(3), k.unwrap_or(6), n, out.as_deref())
        }
        Cmd::Gen { profile, seed, out } => cmd_gen(&profile, seed, out.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_compress(
    input: &Path,
    epsilon: &str,
    out: Option<&Path>,
    budget_depth: Option<usize>,
    budget_states: Option<u64>,
) -> Result<u8> {
    let file = load_instance(input)?;
    let epsilon = parse_rational(epsilon)?;
    let mut budget = Budget::default();
    if let Some(d) = budget_depth {
        budget.max_depth = d;
    }
    if let Some(s) = budget_states {
        budget.state_cap = s;
    }
    let result_file = match file.parse()? {
        ParsedInstance::ModP(set) => {
            let result = compress_mod_p(&set, &epsilon, &budget)?;
            ResultFile::from_modp(file, &result)
        }
        ParsedInstance::Group(set) => {
            let result = if set.alphabet().is_full(set.domain()) {
                compress_group_unrestricted(&set, &epsilon, &budget)?
            } else {
                compress_group_restricted(&set, &epsilon, &budget)?
            };
            ResultFile::from_group(file, &result)
        }
    };
    emit(&result_file.to_json(), out)?;
    Ok(0)
}

fn cmd_verify(
    old: &Path,
    new: &Path,
    epsilon: &str,
    method: &str,
    samples: Option<u64>,
    seed: Option<u64>,
) -> Result<u8> {
    let original = match load_any(old)? {
        Loaded::Instance(f) => f,
        Loaded::Result(r) => r.instance,
    };
    let candidate = match load_any(new)? {
        Loaded::Instance(f) => f,
        Loaded::Result(r) => r.output,
    };
    let epsilon = parse_rational(epsilon)?;
    let method = parse_method(method, samples, seed)?;
    let caps = OracleCaps::default();
    let verdict = match (original.parse()?, candidate.parse()?) {
        (ParsedInstance::ModP(o), ParsedInstance::ModP(c)) => {
            verify_internal_approximation(&o, &c, &epsilon, method, &caps)?
        }
        (ParsedInstance::Group(o), ParsedInstance::Group(c)) => {
            verify_group_internal_approximation(&o, &c, &epsilon, method, &caps)?
        }
        _ => {
            return Err(Error::invalid(
                "cannot verify a mod-p instance against a group instance",
            ))
        }
    };
    print_verdict(&verdict);
    Ok(if verdict.accepted { 0 } else { 1 })
}

fn cmd_density(
    input: &Path,
    method: &str,
    samples: Option<u64>,
    seed: Option<u64>,
) -> Result<u8> {
    let file = load_instance(input)?;
    let method = parse_method(method, samples, seed)?;
    let caps = OracleCaps::default();
    let density = match file.parse()? {
        ParsedInstance::ModP(set) => satisfying_density(&set, method, &caps)?,
        ParsedInstance::Group(set) => group_satisfying_density(&set, method, &caps)?,
    };
    out_line(&density_text(&density));
    Ok(0)
}

fn cmd_bias(input: &Path) -> Result<u8> {
    let file = load_instance(input)?;
    let set = match file.parse()? {
        ParsedInstance::ModP(set) => set,
        ParsedInstance::Group(_) => {
            return Err(Error::invalid(
                "bias applies to mod-p instances; group conditions have no single form",
            ))
        }
    };
    let mut lines = Vec::new();
    match set.conditions() {
        condcomp::algebra::Conditions::Scalar(list) => {
            for (i, c) in list.iter().enumerate() {
                let report = form_bias(&c.form, set.alphabet())?;
                lines.push(format!(
                    "condition {i}: magnitude {:.9} bound {:.9} support {} within_bound {}",
                    report.magnitude,
                    report.bound,
                    report.support_size,
                    report.within_bound()
                ));
            }
        }
        condcomp::algebra::Conditions::Multi(list) => {
            for (i, c) in list.iter().enumerate() {
                for (j, row) in c.map.rows().iter().enumerate() {
                    let report = form_bias(row, set.alphabet())?;
                    lines.push(format!(
                        "condition {i} row {j}: magnitude {:.9} bound {:.9} support {} within_bound {}",
                        report.magnitude,
                        report.bound,
                        report.support_size,
                        report.within_bound()
                    ));
                }
            }
        }
    }
    for line in lines {
        out_line(&line);
    }
    Ok(0)
}

fn cmd_fixtures(
    name: &str,
    p: u64,
    k: usize,
    n: Option<usize>,
    out: Option<&Path>,
) -> Result<u8> {
    let n = n.unwrap_or(k);
    let file = match name {
        "shifted-pair" => fixture_shifted_pair(p, k, n)?,
        "paired-coordinates" => fixture_paired_coordinates(p, k, n)?,
        "product-zero" => fixture_product_zero(p, k, n)?,
        other => {
            return Err(Error::invalid(format!(
                "unknown fixture '{other}' (expected shifted-pair, paired-coordinates, \
                 or product-zero)"
            )))
        }
    };
    emit(&file.to_json(), out)?;
    Ok(0)
}

fn cmd_gen(profile: &str, seed: Option<u64>, out: Option<&Path>) -> Result<u8> {
    let profile: GenProfile = profile.parse()?;
    let seed = seed.ok_or_else(|| {
        Error::invalid("gen requires an explicit --seed; generation never uses the clock")
    })?;
    let file = generate_instance(profile, seed);
    emit(&file.to_json(), out)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

enum Loaded {
    Instance(InstanceFile),
    Result(ResultFile),
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_instance(path: &Path) -> Result<InstanceFile> {
    InstanceFile::from_json(&read_text(path)?)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Loads a file that may be either an instance or a compress result.
fn load_any(path: &Path) -> Result<Loaded> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: not valid JSON: {e}", path.display())))?;
    if value.get("certificate").is_some() {
        ResultFile::from_json(&text)
            .map(Loaded::Result)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    } else {
        InstanceFile::from_json(&text)
            .map(Loaded::Instance)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }
}

fn parse_method(method: &str, samples: Option<u64>, seed: Option<u64>) -> Result<DensityMethod> {
    match method {
        "enumerate" => Ok(DensityMethod::Enumerate),
        "dp" => Ok(DensityMethod::Dp),
        "montecarlo" => {
            let seed = seed.ok_or_else(|| {
                Error::invalid(
                    "montecarlo requires an explicit --seed; sampling never uses the clock",
                )
            })?;
            Ok(DensityMethod::MonteCarlo {
                samples: samples.unwrap_or(100_000),
                seed,
            })
        }
        other => Err(Error::invalid(format!(
            "unknown method '{other}' (expected enumerate, dp, or montecarlo)"
        ))),
    }
}

fn density_text(density: &DensityResult) -> String {
    match density {
        DensityResult::Exact(v) => format_rational(v),
        DensityResult::Estimate { estimate, radius, samples, seed } => {
            format!(
                "estimate {:.9} ± {:.9} (samples={samples}, seed={seed})",
                estimate.to_f64().unwrap_or(f64::NAN),
                radius
            )
        }
    }
}

fn print_verdict(verdict: &ApproximationVerdict) {
    out_line(&format!("containment_ok: {}", verdict.containment_ok));
    if let Some(x) = &verdict.counterexample {
        out_line(&format!(
            "counterexample: [{}]",
            x.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    out_line(&format!("defect: {}", density_text(&verdict.defect)));
    out_line(&format!("certified: {}", verdict.certified));
    out_line(if verdict.accepted { "accept" } else { "reject" });
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display()))),
        None => {
            out_text(text);
            Ok(())
        }
    }
}

/// Writes to standard output; a closed pipe (e.g. `| head`) ends the process
/// quietly instead of panicking.
fn out_text(text: &str) {
    let mut stdout = std::io::stdout().lock();
    if stdout.write_all(text.as_bytes()).is_err() || stdout.flush().is_err() {
        std::process::exit(0);
    }
}

fn out_line(text: &str) {
    out_text(text);
    out_text("\n");
}
