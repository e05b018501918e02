//! Python bindings for the condition-compression library.
//!
//! The module mirrors the CLI surface: parse and serialize instances, take
//! exact densities, compress into internally approximating sets with
//! certificates, verify candidate approximations, and emit fixtures and
//! seeded generator output.
//!
//! ```python
//! import condcomp_py as cc
//! inst = cc.fixture("shifted-pair", p=3, k=6, n=6)
//! assert inst.density().value == "33/64"
//! res = inst.compress("1/10")
//! assert cc.verify(inst, res.output, "1/10").accepted
//! ```

use condcomp::abelian::{
    compress_group_restricted, compress_group_unrestricted, group_satisfying_density,
    verify_group_internal_approximation, GroupApproximationResult,
};
use condcomp::compress::{compress_mod_p, ApproximationResult, Budget};
use condcomp::gen::{
    fixture_paired_coordinates, fixture_product_zero, fixture_shifted_pair, generate_instance,
    GenProfile,
};
use condcomp::oracle::{
    satisfying_density, verify_internal_approximation, ApproximationVerdict, DensityMethod,
    DensityResult, OracleCaps,
};
use condcomp::schema::{format_rational, parse_rational, InstanceFile, ParsedInstance, ResultFile};
use condcomp::Error;
use num::ToPrimitive;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Invalid(_) => PyValueError::new_err(e.to_string()),
        Error::Budget(_) | Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_method(method: &str, samples: Option<u64>, seed: Option<u64>) -> PyResult<DensityMethod> {
    match method {
        "enumerate" => Ok(DensityMethod::Enumerate),
        "dp" => Ok(DensityMethod::Dp),
        "montecarlo" => {
            let seed = seed.ok_or_else(|| {
                PyValueError::new_err(
                    "montecarlo requires an explicit seed; sampling never uses the clock",
                )
            })?;
            Ok(DensityMethod::MonteCarlo {
                samples: samples.unwrap_or(100_000),
                seed,
            })
        }
        other => Err(PyValueError::new_err(format!(
            "unknown method '{other}' (expected enumerate, dp, or montecarlo)"
        ))),
    }
}

fn budget_from(depth: Option<u64>, states: Option<u64>) -> Budget {
    let mut budget = Budget::default();
    if let Some(d) = depth {
        budget.max_depth = d as usize;
    }
    if let Some(s) = states {
        budget.state_cap = s;
    }
    budget
}

/// A density: exact rational, or a seeded estimate with a confidence radius.
#[pyclass(module = "condcomp_py", frozen)]
pub struct Density {
    /// True when the value came from exact counting.
    #[pyo3(get)]
    exact: bool,
    /// Exact value as a rational string "num/den"; None for estimates.
    #[pyo3(get)]
    value: Option<String>,
    /// The density as a float (exact value converted, or the estimate).
    #[pyo3(get)]
    float: f64,
    /// Hoeffding radius of the estimate; None when exact.
    #[pyo3(get)]
    radius: Option<f64>,
    #[pyo3(get)]
    samples: Option<u64>,
    #[pyo3(get)]
    seed: Option<u64>,
}

impl From<DensityResult> for Density {
    fn from(d: DensityResult) -> Self {
        match d {
            DensityResult::Exact(v) => Density {
                exact: true,
                float: v.to_f64().unwrap_or(f64::NAN),
                value: Some(format_rational(&v)),
                radius: None,
                samples: None,
                seed: None,
            },
            DensityResult::Estimate {
                estimate,
                radius,
                samples,
                seed,
            } => Density {
                exact: false,
                float: estimate.to_f64().unwrap_or(f64::NAN),
                value: None,
                radius: Some(radius),
                samples: Some(samples),
                seed: Some(seed),
            },
        }
    }
}

#[pymethods]
impl Density {
    fn __repr__(&self) -> String {
        match &self.value {
            Some(v) => format!("Density(exact, {v})"),
            None => format!(
                "Density(estimate {:.9} ± {:.9})",
                self.float,
                self.radius.unwrap_or(f64::NAN)
            ),
        }
    }
}

/// A set of conditions over a restricted alphabet, in either the prime-field
/// or the finite-Abelian-group regime.
#[pyclass(module = "condcomp_py")]
#[derive(Clone)]
pub struct Instance {
    parsed: ParsedInstance,
}

impl Instance {
    fn file(&self) -> InstanceFile {
        match &self.parsed {
            ParsedInstance::ModP(set) => InstanceFile::from_modp(set),
            ParsedInstance::Group(set) => InstanceFile::from_group(set),
        }
    }

    fn from_file(file: InstanceFile) -> PyResult<Self> {
        Ok(Instance {
            parsed: file.parse().map_err(to_py_err)?,
        })
    }
}

#[pymethods]
impl Instance {
    /// Parses an instance from its JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::from_file(InstanceFile::from_json(text).map_err(to_py_err)?)
    }

    /// Serializes the instance back to canonical JSON.
    fn to_json(&self) -> String {
        self.file().to_json()
    }

    /// "modp" or "group".
    #[getter]
    fn kind(&self) -> &'static str {
        match &self.parsed {
            ParsedInstance::ModP(_) => "modp",
            ParsedInstance::Group(_) => "group",
        }
    }

    /// Number of coordinates.
    #[getter]
    fn n(&self) -> usize {
        match &self.parsed {
            ParsedInstance::ModP(set) => set.n(),
            ParsedInstance::Group(set) => set.n(),
        }
    }

    /// Number of conditions.
    fn __len__(&self) -> usize {
        match &self.parsed {
            ParsedInstance::ModP(set) => set.len(),
            ParsedInstance::Group(set) => set.conditions().len(),
        }
    }

    /// Whether the point (a list of coordinate values) satisfies every
    /// condition.  Coordinates must lie in the alphabet.
    fn satisfied_by(&self, point: Vec<u64>) -> PyResult<bool> {
        let n = self.n();
        if point.len() != n {
            return Err(PyValueError::new_err(format!(
                "point has {} coordinates, instance has {n}",
                point.len()
            )));
        }
        Ok(match &self.parsed {
            ParsedInstance::ModP(set) => set.satisfied_by(&point),
            ParsedInstance::Group(set) => set.satisfied_by(&point),
        })
    }

    /// Exact (or, with method="montecarlo", seeded-estimated) density of the
    /// satisfying set inside the alphabet's box.
    #[pyo3(signature = (method = "enumerate", samples = None, seed = None))]
    fn density(&self, method: &str, samples: Option<u64>, seed: Option<u64>) -> PyResult<Density> {
        let method = parse_method(method, samples, seed)?;
        let caps = OracleCaps::default();
        let result = match &self.parsed {
            ParsedInstance::ModP(set) => satisfying_density(set, method, &caps),
            ParsedInstance::Group(set) => group_satisfying_density(set, method, &caps),
        }
        .map_err(to_py_err)?;
        Ok(result.into())
    }

    /// Compresses the instance into an internally approximating set of
    /// boundedly many conditions with a certified defect bound ≤ epsilon
    /// (a rational string like "1/10" or a decimal like "0.1").
    #[pyo3(signature = (epsilon, budget_depth = None, budget_states = None))]
    fn compress(
        &self,
        epsilon: &str,
        budget_depth: Option<u64>,
        budget_states: Option<u64>,
    ) -> PyResult<Compression> {
        let eps = parse_rational(epsilon).map_err(to_py_err)?;
        let budget = budget_from(budget_depth, budget_states);
        let inner = match &self.parsed {
            ParsedInstance::ModP(set) => Inner::ModP {
                instance: self.file(),
                result: compress_mod_p(set, &eps, &budget).map_err(to_py_err)?,
            },
            ParsedInstance::Group(set) => {
                let result = if set.alphabet().is_full(set.domain()) {
                    compress_group_unrestricted(set, &eps, &budget)
                } else {
                    compress_group_restricted(set, &eps, &budget)
                }
                .map_err(to_py_err)?;
                Inner::Group {
                    instance: self.file(),
                    result,
                }
            }
        };
        Ok(Compression { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(kind={}, n={}, conditions={})",
            self.kind(),
            self.n(),
            self.__len__()
        )
    }
}

#[derive(Clone)]
enum Inner {
    ModP {
        instance: InstanceFile,
        result: ApproximationResult,
    },
    Group {
        instance: InstanceFile,
        result: GroupApproximationResult,
    },
}

/// The outcome of a compression: the output instance plus its certificate.
#[pyclass(module = "condcomp_py")]
pub struct Compression {
    inner: Inner,
}

#[pymethods]
impl Compression {
    /// The compressed, internally approximating instance.
    #[getter]
    fn output(&self) -> Instance {
        Instance {
            parsed: match &self.inner {
                Inner::ModP { result, .. } => ParsedInstance::ModP(result.output.clone()),
                Inner::Group { result, .. } => ParsedInstance::Group(result.output.clone()),
            },
        }
    }

    /// The requested defect target, as a rational string.
    #[getter]
    fn epsilon_target(&self) -> String {
        match &self.inner {
            Inner::ModP { result, .. } => format_rational(&result.epsilon_target),
            Inner::Group { result, .. } => format_rational(&result.epsilon_target),
        }
    }

    /// The certified defect bound, as a rational string (≤ the target).
    #[getter]
    fn proof_defect_bound(&self) -> String {
        match &self.inner {
            Inner::ModP { result, .. } => format_rational(&result.proof_defect_bound),
            Inner::Group { result, .. } => format_rational(&result.proof_defect_bound),
        }
    }

    /// The certificate trace: (rule, detail, sub_epsilon or None) triples.
    #[getter]
    fn trace(&self) -> Vec<(String, String, Option<String>)> {
        let records = match &self.inner {
            Inner::ModP { result, .. } => &result.trace,
            Inner::Group { result, .. } => &result.trace,
        };
        records
            .iter()
            .map(|r| {
                (
                    r.rule.clone(),
                    r.detail.clone(),
                    r.sub_epsilon.as_ref().map(format_rational),
                )
            })
            .collect()
    }

    /// The full result document (instance, output, certificate) as JSON —
    /// the same format the CLI emits.
    fn to_json(&self) -> String {
        let file = match &self.inner {
            Inner::ModP { instance, result } => ResultFile::from_modp(instance.clone(), result),
            Inner::Group { instance, result } => ResultFile::from_group(instance.clone(), result),
        };
        file.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "Compression(target={}, certified_defect={})",
            self.epsilon_target(),
            self.proof_defect_bound()
        )
    }
}

/// The verdict of checking a candidate against an original instance.
#[pyclass(module = "condcomp_py", frozen)]
pub struct Verdict {
    /// Every candidate-satisfying point satisfies the original.
    #[pyo3(get)]
    containment_ok: bool,
    /// A point inside the candidate but outside the original, when one was
    /// exhibited.
    #[pyo3(get)]
    counterexample: Option<Vec<u64>>,
    /// density(original) − density(candidate), as a Density.
    defect: DensityResult,
    /// Containment holds and the defect is within epsilon.
    #[pyo3(get)]
    accepted: bool,
    /// The verdict rests on exact counting, not sampling.
    #[pyo3(get)]
    certified: bool,
}

#[pymethods]
impl Verdict {
    #[getter]
    fn defect(&self) -> Density {
        self.defect.clone().into()
    }

    fn __repr__(&self) -> String {
        format!(
            "Verdict({}, containment_ok={}, certified={})",
            if self.accepted { "accept" } else { "reject" },
            self.containment_ok,
            self.certified
        )
    }
}

/// Checks that `candidate` internally approximates `original` within
/// `epsilon`: containment plus defect ≤ epsilon.  Both instances must be in
/// the same regime (modp or group).
#[pyfunction]
#[pyo3(signature = (original, candidate, epsilon, method = "enumerate", samples = None, seed = None))]
fn verify(
    original: &Instance,
    candidate: &Instance,
    epsilon: &str,
    method: &str,
    samples: Option<u64>,
    seed: Option<u64>,
) -> PyResult<Verdict> {
    let eps = parse_rational(epsilon).map_err(to_py_err)?;
    let method = parse_method(method, samples, seed)?;
    let caps = OracleCaps::default();
    let verdict: ApproximationVerdict = match (&original.parsed, &candidate.parsed) {
        (ParsedInstance::ModP(o), ParsedInstance::ModP(c)) => {
            verify_internal_approximation(o, c, &eps, method, &caps).map_err(to_py_err)?
        }
        (ParsedInstance::Group(o), ParsedInstance::Group(c)) => {
            verify_group_internal_approximation(o, c, &eps, method, &caps).map_err(to_py_err)?
        }
        _ => {
            return Err(PyValueError::new_err(
                "cannot verify a modp instance against a group instance",
            ))
        }
    };
    Ok(Verdict {
        containment_ok: verdict.containment_ok,
        counterexample: verdict.counterexample,
        defect: verdict.defect,
        accepted: verdict.accepted,
        certified: verdict.certified,
    })
}

/// Emits a named worked fixture: "shifted-pair", "paired-coordinates", or
/// "product-zero" (the last is enumeration-only by design).
#[pyfunction]
#[pyo3(signature = (name, p = 3, k = 6, n = None))]
fn fixture(name: &str, p: u64, k: usize, n: Option<usize>) -> PyResult<Instance> {
    let n = n.unwrap_or(k);
    let file = match name {
        "shifted-pair" => fixture_shifted_pair(p, k, n),
        "paired-coordinates" => fixture_paired_coordinates(p, k, n),
        "product-zero" => fixture_product_zero(p, k, n),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown fixture '{other}' (expected shifted-pair, paired-coordinates, \
                 or product-zero)"
            )))
        }
    }
    .map_err(to_py_err)?;
    Instance::from_file(file)
}

/// Generates a seeded random instance from a named profile: "sunflower",
/// "separated", "symmetric-ball", "random", or "group-random".  The same
/// (profile, seed) pair always yields the same instance.
#[pyfunction]
fn generate(profile: &str, seed: u64) -> PyResult<Instance> {
    let profile: GenProfile = profile
        .parse()
        .map_err(|e: Error| PyValueError::new_err(e.to_string()))?;
    Instance::from_file(generate_instance(profile, seed))
}

/// List of generator profile names accepted by `generate`.
#[pyfunction]
fn profiles() -> Vec<&'static str> {
    GenProfile::ALL.iter().map(|p| p.name()).collect()
}

#[pymodule]
fn condcomp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Instance>()?;
    m.add_class::<Compression>()?;
    m.add_class::<Density>()?;
    m.add_class::<Verdict>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(fixture, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(profiles, m)?)?;
    Ok(())
}
