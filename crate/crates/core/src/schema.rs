//! JSON file formats: instances (condition sets over either regime) and
//! results (output conditions plus a certificate).  Exact rationals are
//! serialized as `"num/den"` strings so certificates survive round-trips
//! bit-exactly.

use crate::abelian::{
    FiniteAbelianGroup, GroupAlphabet, GroupApproximationResult, GroupConditionSet, GroupHom,
    GroupMap, GroupSubset, HCondition,
};
use crate::algebra::{
    AffineMultiMap, Alphabet, ConditionSet, Conditions, LinearForm, ModPCondition, MultiCondition,
    PrimeModulus, ResidueSet,
};
use crate::compress::{ApproximationResult, TraceRecord};
use crate::error::{Error, Result};
use num::bigint::BigInt;
use num::rational::BigRational;
use num::Zero;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::str::FromStr;

// ---------------------------------------------------------------------------
// Exact rational codec
// ---------------------------------------------------------------------------

/// Serializes a rational as `"num/den"`.
pub fn format_rational(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `"num/den"`, a plain integer, or a decimal such as `"0.05"`
/// into an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::invalid("empty rational"));
    }
    if let Some((a, b)) = t.split_once('/') {
        let numer = BigInt::from_str(a.trim())
            .map_err(|_| Error::invalid(format!("bad numerator in rational '{t}'")))?;
        let denom = BigInt::from_str(b.trim())
            .map_err(|_| Error::invalid(format!("bad denominator in rational '{t}'")))?;
        if denom.is_zero() {
            return Err(Error::invalid(format!("zero denominator in rational '{t}'")));
        }
        return Ok(BigRational::new(numer, denom));
    }
    if let Some((int_part, frac_part)) = t.split_once('.') {
        let negative = int_part.starts_with('-');
        let int_digits = int_part.trim_start_matches(['-', '+']);
        if !int_digits.chars().all(|c| c.is_ascii_digit())
            || frac_part.is_empty()
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(Error::invalid(format!("bad decimal '{t}'")));
        }
        let int_digits = if int_digits.is_empty() { "0" } else { int_digits };
        let whole = BigInt::from_str(int_digits).expect("digits");
        let frac = BigInt::from_str(frac_part).expect("digits");
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        let mut value =
            BigRational::from_integer(whole) + BigRational::new(frac, scale);
        if negative {
            value = -value;
        }
        return Ok(value);
    }
    let whole = BigInt::from_str(t)
        .map_err(|_| Error::invalid(format!("bad rational '{t}'")))?;
    Ok(BigRational::from_integer(whole))
}

// ---------------------------------------------------------------------------
// Instance files
// ---------------------------------------------------------------------------

/// A condition of a mod-p instance: either `coeffs` (a scalar condition,
/// with an optional scalar `offset` folded into the allowed set) or
/// `rows` plus an optional `offset` vector (a multi-dimensional affine
/// condition).  The allowed set is given either explicitly as `e` or as
/// `e_complement`.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct ModPConditionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<u64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<OffsetField>,
    #[serde(default, alias = "E", skip_serializing_if = "Option::is_none")]
    pub e: Option<AllowedField>,
    #[serde(default, alias = "E_complement", skip_serializing_if = "Option::is_none")]
    pub e_complement: Option<AllowedField>,
}

/// Scalar or vector offset, depending on the condition shape.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(untagged)]
pub enum OffsetField {
    Scalar(u64),
    Vector(Vec<u64>),
}

/// Allowed set: a residue list for scalar conditions, a tuple list for
/// multi-dimensional ones.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(untagged)]
pub enum AllowedField {
    Residues(Vec<u64>),
    Tuples(Vec<Vec<u64>>),
}

/// A condition of a group instance: per-coordinate generator-image rows
/// and an allowed set of target element indices.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct GroupConditionFile {
    pub images: Vec<Vec<u64>>,
    #[serde(default, alias = "E", skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<u64>>,
    #[serde(default, alias = "E_complement", skip_serializing_if = "Option::is_none")]
    pub e_complement: Option<Vec<u64>>,
}

/// An instance: a condition set over either regime.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind")]
pub enum InstanceFile {
    #[serde(rename = "modp")]
    ModP {
        p: u64,
        #[serde(alias = "S")]
        s: Vec<u64>,
        n: usize,
        conditions: Vec<ModPConditionFile>,
    },
    #[serde(rename = "group")]
    Group {
        #[serde(alias = "G")]
        g: Vec<u64>,
        #[serde(alias = "H")]
        h: Vec<u64>,
        #[serde(alias = "S")]
        s: Vec<u64>,
        n: usize,
        conditions: Vec<GroupConditionFile>,
    },
}

/// A parsed instance, ready for the library operations.
#[derive(Debug, Clone)]
pub enum ParsedInstance {
    ModP(ConditionSet),
    Group(GroupConditionSet),
}

impl InstanceFile {
    pub fn from_json(text: &str) -> Result<InstanceFile> {
        serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("instance parse error: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("instance serializes");
        s.push('\n');
        s
    }

    /// Validates the file and builds the corresponding condition set.
    pub fn parse(&self) -> Result<ParsedInstance> {
        match self {
            InstanceFile::ModP { p, s, n, conditions } => {
                let p = PrimeModulus::new(*p)?;
                let alphabet = Alphabet::new(p, s.clone())?;
                parse_modp_conditions(p, &alphabet, *n, conditions).map(ParsedInstance::ModP)
            }
            InstanceFile::Group { g, h, s, n, conditions } => {
                let domain = FiniteAbelianGroup::new(g.clone())?;
                let target = FiniteAbelianGroup::new(h.clone())?;
                let alphabet = GroupAlphabet::new(&domain, s.clone())?;
                parse_group_conditions(domain, target, alphabet, *n, conditions)
                    .map(ParsedInstance::Group)
            }
        }
    }

    pub fn from_modp(set: &ConditionSet) -> InstanceFile {
        let conditions = match set.conditions() {
            Conditions::Scalar(list) => list
                .iter()
                .map(|c| ModPConditionFile {
                    coeffs: Some(c.form.coeffs().to_vec()),
                    e: Some(AllowedField::Residues(c.allowed.residues())),
                    ..ModPConditionFile::default()
                })
                .collect(),
            Conditions::Multi(list) => list
                .iter()
                .map(|c| ModPConditionFile {
                    rows: Some(
                        c.map
                            .rows()
                            .iter()
                            .map(|r| r.coeffs().to_vec())
                            .collect(),
                    ),
                    offset: Some(OffsetField::Vector(c.map.offset().to_vec())),
                    e: Some(AllowedField::Tuples(c.allowed.iter().cloned().collect())),
                    ..ModPConditionFile::default()
                })
                .collect(),
        };
        InstanceFile::ModP {
            p: set.p().value(),
            s: set.alphabet().elements().to_vec(),
            n: set.n(),
            conditions,
        }
    }

    pub fn from_group(set: &GroupConditionSet) -> InstanceFile {
        InstanceFile::Group {
            g: set.domain().factors().to_vec(),
            h: set.target().factors().to_vec(),
            s: set.alphabet().elements().to_vec(),
            n: set.n(),
            conditions: set
                .conditions()
                .iter()
                .map(|c| GroupConditionFile {
                    images: c
                        .map
                        .coords()
                        .iter()
                        .map(|h| h.generator_images().to_vec())
                        .collect(),
                    e: Some(c.allowed.elements()),
                    e_complement: None,
                })
                .collect(),
        }
    }
}

fn parse_modp_conditions(
    p: PrimeModulus,
    alphabet: &Alphabet,
    n: usize,
    conditions: &[ModPConditionFile],
) -> Result<ConditionSet> {
    let mut scalars: Vec<ModPCondition> = Vec::new();
    let mut multis: Vec<MultiCondition> = Vec::new();
    for (i, c) in conditions.iter().enumerate() {
        let ctx = |e: Error| Error::invalid(format!("condition {i}: {e}"));
        match (&c.coeffs, &c.rows) {
            (Some(coeffs), None) => {
                if coeffs.len() != n {
                    return Err(Error::invalid(format!(
                        "condition {i}: {} coefficients in a dimension-{n} instance",
                        coeffs.len()
                    )));
                }
                if let Some(&bad) = coeffs.iter().find(|&&v| v >= p.value()) {
                    return Err(Error::invalid(format!(
                        "condition {i}: coefficient {bad} out of range for modulus {}",
                        p.value()
                    )));
                }
                let form = LinearForm::new(p, coeffs.clone());
                let mut allowed = scalar_allowed(p, i, c)?;
                match c.offset {
                    None => {}
                    Some(OffsetField::Scalar(off)) => {
                        if off >= p.value() {
                            return Err(Error::invalid(format!(
                                "condition {i}: offset {off} out of range for modulus {}",
                                p.value()
                            )));
                        }
                        // φ + c ∈ E  ⟺  φ ∈ E − c.
                        allowed = allowed.shift(p, p.neg(off));
                    }
                    Some(OffsetField::Vector(_)) => {
                        return Err(Error::invalid(format!(
                            "condition {i}: scalar condition takes a scalar offset"
                        )));
                    }
                }
                scalars.push(ModPCondition::new(form, allowed));
            }
            (None, Some(rows)) => {
                if rows.is_empty() {
                    return Err(Error::invalid(format!("condition {i}: empty row list")));
                }
                let mut forms = Vec::with_capacity(rows.len());
                for row in rows {
                    if row.len() != n {
                        return Err(Error::invalid(format!(
                            "condition {i}: row of length {} in a dimension-{n} instance",
                            row.len()
                        )));
                    }
                    if let Some(&bad) = row.iter().find(|&&v| v >= p.value()) {
                        return Err(Error::invalid(format!(
                            "condition {i}: coefficient {bad} out of range for modulus {}",
                            p.value()
                        )));
                    }
                    forms.push(LinearForm::new(p, row.clone()));
                }
                let offset = match &c.offset {
                    None => vec![0; rows.len()],
                    Some(OffsetField::Vector(v)) => v.clone(),
                    Some(OffsetField::Scalar(_)) => {
                        return Err(Error::invalid(format!(
                            "condition {i}: multi-dimensional condition takes a vector offset"
                        )));
                    }
                };
                let map = AffineMultiMap::new(forms, offset).map_err(ctx)?;
                let allowed = multi_allowed(p, rows.len(), i, c)?;
                multis.push(MultiCondition::new(map, allowed).map_err(ctx)?);
            }
            (Some(_), Some(_)) => {
                return Err(Error::invalid(format!(
                    "condition {i}: give either coeffs or rows, not both"
                )));
            }
            (None, None) => {
                return Err(Error::invalid(format!(
                    "condition {i}: needs coeffs or rows"
                )));
            }
        }
    }
    match (scalars.is_empty(), multis.is_empty()) {
        (false, false) => Err(Error::invalid(
            "instance mixes scalar and multi-dimensional conditions",
        )),
        (true, false) => ConditionSet::multi(alphabet.clone(), n, multis),
        _ => ConditionSet::scalar(alphabet.clone(), n, scalars),
    }
}

fn scalar_allowed(p: PrimeModulus, i: usize, c: &ModPConditionFile) -> Result<ResidueSet> {
    let to_set = |list: &[u64]| -> Result<ResidueSet> {
        ResidueSet::from_residues(p, list.iter().copied())
            .map_err(|e| Error::invalid(format!("condition {i}: {e}")))
    };
    match (&c.e, &c.e_complement) {
        (Some(AllowedField::Residues(list)), None) => to_set(list),
        (None, Some(AllowedField::Residues(list))) => Ok(to_set(list)?.complement(p)),
        (Some(_), Some(_)) => Err(Error::invalid(format!(
            "condition {i}: give either e or e_complement, not both"
        ))),
        (None, None) => Err(Error::invalid(format!(
            "condition {i}: needs e or e_complement"
        ))),
        _ => Err(Error::invalid(format!(
            "condition {i}: scalar condition takes a residue list for e"
        ))),
    }
}

fn multi_allowed(
    p: PrimeModulus,
    k: usize,
    i: usize,
    c: &ModPConditionFile,
) -> Result<BTreeSet<Vec<u64>>> {
    let check = |tuples: &[Vec<u64>]| -> Result<BTreeSet<Vec<u64>>> {
        let mut out = BTreeSet::new();
        for t in tuples {
            if t.len() != k {
                return Err(Error::invalid(format!(
                    "condition {i}: allowed tuple of length {} in a {k}-dimensional condition",
                    t.len()
                )));
            }
            if let Some(&bad) = t.iter().find(|&&v| v >= p.value()) {
                return Err(Error::invalid(format!(
                    "condition {i}: allowed value {bad} out of range for modulus {}",
                    p.value()
                )));
            }
            out.insert(t.clone());
        }
        Ok(out)
    };
    match (&c.e, &c.e_complement) {
        (Some(AllowedField::Tuples(tuples)), None) => check(tuples),
        (Some(AllowedField::Residues(r)), None) if r.is_empty() => Ok(BTreeSet::new()),
        (None, Some(AllowedField::Tuples(tuples))) => {
            let excluded = check(tuples)?;
            let states = (p.value() as u128).checked_pow(k as u32);
            match states {
                Some(s) if s <= 1_000_000 => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "condition {i}: e_complement over {k} dimensions is too large to expand"
                    )))
                }
            }
            let mut out = BTreeSet::new();
            let mut tuple = vec![0u64; k];
            loop {
                if !excluded.contains(&tuple) {
                    out.insert(tuple.clone());
                }
                let mut j = 0;
                loop {
                    if j == k {
                        return Ok(out);
                    }
                    tuple[j] += 1;
                    if tuple[j] < p.value() {
                        break;
                    }
                    tuple[j] = 0;
                    j += 1;
                }
            }
        }
        (None, Some(AllowedField::Residues(r))) if r.is_empty() => {
            multi_allowed(
                p,
                k,
                i,
                &ModPConditionFile {
                    e_complement: Some(AllowedField::Tuples(Vec::new())),
                    ..ModPConditionFile::default()
                },
            )
        }
        (Some(_), Some(_)) => Err(Error::invalid(format!(
            "condition {i}: give either e or e_complement, not both"
        ))),
        (None, None) => Err(Error::invalid(format!(
            "condition {i}: needs e or e_complement"
        ))),
        _ => Err(Error::invalid(format!(
            "condition {i}: multi-dimensional condition takes tuple lists for e"
        ))),
    }
}

fn parse_group_conditions(
    domain: FiniteAbelianGroup,
    target: FiniteAbelianGroup,
    alphabet: GroupAlphabet,
    n: usize,
    conditions: &[GroupConditionFile],
) -> Result<GroupConditionSet> {
    let mut list = Vec::with_capacity(conditions.len());
    for (i, c) in conditions.iter().enumerate() {
        if c.images.len() != n {
            return Err(Error::invalid(format!(
                "condition {i}: {} image rows in a dimension-{n} instance",
                c.images.len()
            )));
        }
        let mut coords = Vec::with_capacity(n);
        for row in &c.images {
            coords.push(
                GroupHom::new(&domain, &target, row.clone())
                    .map_err(|e| Error::invalid(format!("condition {i}: {e}")))?,
            );
        }
        let allowed = match (&c.e, &c.e_complement) {
            (Some(list), None) => GroupSubset::from_elements(&target, list.iter().copied())
                .map_err(|e| Error::invalid(format!("condition {i}: {e}")))?,
            (None, Some(list)) => {
                let excl = GroupSubset::from_elements(&target, list.iter().copied())
                    .map_err(|e| Error::invalid(format!("condition {i}: {e}")))?;
                let mut out = GroupSubset::empty();
                for v in target.elements() {
                    if !excl.contains(v) {
                        out.insert(v);
                    }
                }
                out
            }
            (Some(_), Some(_)) => {
                return Err(Error::invalid(format!(
                    "condition {i}: give either e or e_complement, not both"
                )))
            }
            (None, None) => {
                return Err(Error::invalid(format!(
                    "condition {i}: needs e or e_complement"
                )))
            }
        };
        list.push(HCondition::new(GroupMap::new(coords), allowed));
    }
    GroupConditionSet::new(domain, target, alphabet, n, list)
}

// ---------------------------------------------------------------------------
// Result files
// ---------------------------------------------------------------------------

/// One step of a compression derivation.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub rule: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_epsilon: Option<String>,
}

impl TraceEntry {
    fn from_record(r: &TraceRecord) -> TraceEntry {
        TraceEntry {
            rule: r.rule.clone(),
            detail: r.detail.clone(),
            sub_epsilon: r.sub_epsilon.as_ref().map(format_rational),
        }
    }
}

/// The certificate attached to a compression result.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Certificate {
    pub epsilon_target: String,
    pub proof_defect_bound: String,
    #[serde(default)]
    pub verified_defect: Option<String>,
    #[serde(default)]
    pub method: Option<String>,
    pub trace: Vec<TraceEntry>,
}

/// A compression result: the input instance, the output conditions as an
/// instance of the same shape, and the certificate.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ResultFile {
    pub instance: InstanceFile,
    pub output: InstanceFile,
    pub certificate: Certificate,
}

impl ResultFile {
    pub fn from_modp(instance: InstanceFile, result: &ApproximationResult) -> ResultFile {
        ResultFile {
            instance,
            output: InstanceFile::from_modp(&result.output),
            certificate: Certificate {
                epsilon_target: format_rational(&result.epsilon_target),
                proof_defect_bound: format_rational(&result.proof_defect_bound),
                verified_defect: None,
                method: None,
                trace: result.trace.iter().map(TraceEntry::from_record).collect(),
            },
        }
    }

    pub fn from_group(instance: InstanceFile, result: &GroupApproximationResult) -> ResultFile {
        ResultFile {
            instance,
            output: InstanceFile::from_group(&result.output),
            certificate: Certificate {
                epsilon_target: format_rational(&result.epsilon_target),
                proof_defect_bound: format_rational(&result.proof_defect_bound),
                verified_defect: None,
                method: None,
                trace: result.trace.iter().map(TraceEntry::from_record).collect(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<ResultFile> {
        serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("result parse error: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn epsilon_target(&self) -> Result<BigRational> {
        parse_rational(&self.certificate.epsilon_target)
    }

    pub fn proof_defect_bound(&self) -> Result<BigRational> {
        parse_rational(&self.certificate.proof_defect_bound)
    }
}
