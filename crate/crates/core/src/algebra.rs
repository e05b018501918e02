//! Linear forms, restricted alphabets, and condition sets over 𝔽_p.
//!
//! A *condition* is a pair (φ, E) of a linear form φ: 𝔽_pⁿ → 𝔽_p and an
//! allowed set E ⊆ 𝔽_p; a point x ∈ Sⁿ satisfies it when φ(x) ∈ E.  The
//! alphabet S ⊆ 𝔽_p restricts which points are in play.  Everything here is
//! exact: residues live in [0, p), sets of residues are bitmasks, and no
//! operation silently truncates.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Largest modulus accepted by [`PrimeModulus::new`].  Keeps p^k state
/// spaces enumerable and lets residue sets fit in a `u64` bitmask.
pub const MAX_PRIME: u64 = 61;

/// Default cap on the family size scanned by [`is_r_separated`]: all
/// p^{|forms|} − 1 non-trivial combinations are visited.
pub const DEFAULT_SEPARATION_FAMILY_CAP: usize = 12;

/// Hard cap on the number of combinations [`is_r_separated`] will scan even
/// when the family-size cap allows more (large p makes p^m explode first).
pub const MAX_SEPARATION_SCAN: u64 = 10_000_000;

/// A validated odd-or-even prime modulus p ≤ [`MAX_PRIME`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimeModulus(u64);

fn is_prime(v: u64) -> bool {
    if v < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= v {
        if v % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

impl PrimeModulus {
    pub fn new(p: u64) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::invalid(format!("{p} is not prime")));
        }
        if p > MAX_PRIME {
            return Err(Error::invalid(format!(
                "modulus {p} exceeds the supported maximum {MAX_PRIME}"
            )));
        }
        Ok(PrimeModulus(p))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Reduces an arbitrary integer into [0, p).
    pub fn reduce(self, v: u64) -> u64 {
        v % self.0
    }

    /// Additive inverse of a residue.
    pub fn neg(self, v: u64) -> u64 {
        debug_assert!(v < self.0);
        (self.0 - v) % self.0
    }

    pub fn add(self, a: u64, b: u64) -> u64 {
        (a + b) % self.0
    }

    pub fn sub(self, a: u64, b: u64) -> u64 {
        (a + self.0 - b) % self.0
    }

    pub fn mul(self, a: u64, b: u64) -> u64 {
        (a * b) % self.0
    }

    /// Multiplicative inverse of a non-zero residue (p is prime, so Fermat).
    pub fn inv(self, a: u64) -> Result<u64> {
        if a % self.0 == 0 {
            return Err(Error::invalid("zero has no multiplicative inverse"));
        }
        let mut acc = 1u64;
        let mut base = a % self.0;
        let mut e = self.0 - 2;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            e >>= 1;
        }
        Ok(acc)
    }
}

impl fmt::Display for PrimeModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A subset of 𝔽_p stored as a bitmask (valid because p ≤ 61 < 64).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResidueSet {
    bits: u64,
}

impl ResidueSet {
    pub fn empty() -> Self {
        ResidueSet { bits: 0 }
    }

    pub fn full(p: PrimeModulus) -> Self {
        ResidueSet {
            bits: (1u64 << p.value()) - 1,
        }
    }

    pub fn from_residues<I: IntoIterator<Item = u64>>(p: PrimeModulus, iter: I) -> Result<Self> {
        let mut bits = 0u64;
        for r in iter {
            if r >= p.value() {
                return Err(Error::invalid(format!(
                    "residue {r} out of range for modulus {p}"
                )));
            }
            bits |= 1 << r;
        }
        Ok(ResidueSet { bits })
    }

    pub fn singleton(p: PrimeModulus, r: u64) -> Result<Self> {
        Self::from_residues(p, [r])
    }

    pub fn contains(self, r: u64) -> bool {
        r < 64 && self.bits >> r & 1 == 1
    }

    pub fn insert(&mut self, r: u64) {
        debug_assert!(r < 64);
        self.bits |= 1 << r;
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn is_full(self, p: PrimeModulus) -> bool {
        self == Self::full(p)
    }

    pub fn iter(self) -> impl Iterator<Item = u64> {
        (0..64).filter(move |r| self.bits >> r & 1 == 1)
    }

    pub fn union(self, other: ResidueSet) -> ResidueSet {
        ResidueSet {
            bits: self.bits | other.bits,
        }
    }

    pub fn intersect(self, other: ResidueSet) -> ResidueSet {
        ResidueSet {
            bits: self.bits & other.bits,
        }
    }

    pub fn complement(self, p: PrimeModulus) -> ResidueSet {
        ResidueSet {
            bits: !self.bits & (Self::full(p).bits),
        }
    }

    pub fn is_subset_of(self, other: ResidueSet) -> bool {
        self.bits & !other.bits == 0
    }

    /// The translate {e + t mod p : e ∈ self}.
    pub fn shift(self, p: PrimeModulus, t: u64) -> ResidueSet {
        let pv = p.value();
        let t = t % pv;
        if t == 0 {
            return self;
        }
        let mask = Self::full(p).bits;
        let rotated = ((self.bits << t) | (self.bits >> (pv - t))) & mask;
        ResidueSet { bits: rotated }
    }

    pub fn residues(self) -> Vec<u64> {
        self.iter().collect()
    }
}

/// A restricted alphabet S ⊆ 𝔽_p: non-empty, strictly increasing residues.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Alphabet {
    p: PrimeModulus,
    elements: Vec<u64>,
}

impl Alphabet {
    pub fn new(p: PrimeModulus, elements: Vec<u64>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::invalid("alphabet must be non-empty"));
        }
        for w in elements.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(
                    "alphabet elements must be strictly increasing",
                ));
            }
        }
        if *elements.last().unwrap() >= p.value() {
            return Err(Error::invalid(format!(
                "alphabet element {} out of range for modulus {p}",
                elements.last().unwrap()
            )));
        }
        Ok(Alphabet { p, elements })
    }

    /// The full alphabet S = 𝔽_p.
    pub fn full(p: PrimeModulus) -> Self {
        Alphabet {
            p,
            elements: (0..p.value()).collect(),
        }
    }

    pub fn p(&self) -> PrimeModulus {
        self.p
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees non-emptiness
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    pub fn contains(&self, r: u64) -> bool {
        self.elements.binary_search(&r).is_ok()
    }

    pub fn is_full(&self) -> bool {
        self.elements.len() as u64 == self.p.value()
    }

    /// t = ⌈(p−1)/(|S|−1)⌉, the exponent in the positive-probability lower
    /// bound |S|^{−t}.  Requires |S| ≥ 2.
    pub fn min_probability_exponent(&self) -> Result<u64> {
        if self.len() < 2 {
            return Err(Error::invalid(
                "positive-probability exponent needs an alphabet with at least 2 elements",
            ));
        }
        let p = self.p.value();
        let s = self.elements.len() as u64;
        Ok((p - 1).div_ceil(s - 1))
    }
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, e) in self.elements.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "}}")
    }
}

/// A linear form φ(x) = Σ λ_i x_i over 𝔽_p with coefficients λ ∈ 𝔽_pⁿ.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinearForm {
    p: PrimeModulus,
    coeffs: Vec<u64>,
}

impl LinearForm {
    pub fn new(p: PrimeModulus, coeffs: Vec<u64>) -> Self {
        let coeffs = coeffs.into_iter().map(|c| p.reduce(c)).collect();
        LinearForm { p, coeffs }
    }

    pub fn zero(p: PrimeModulus, n: usize) -> Self {
        LinearForm {
            p,
            coeffs: vec![0; n],
        }
    }

    /// The form y·x_j (a single monomial).
    pub fn unit(p: PrimeModulus, n: usize, j: usize, y: u64) -> Self {
        let mut coeffs = vec![0; n];
        coeffs[j] = p.reduce(y);
        LinearForm { p, coeffs }
    }

    pub fn p(&self) -> PrimeModulus {
        self.p
    }

    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize) -> u64 {
        self.coeffs[i]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    /// Z(φ) = {i : λ_i ≠ 0}, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn support_size(&self) -> usize {
        self.coeffs.iter().filter(|&&c| c != 0).count()
    }

    pub fn eval(&self, x: &[u64]) -> u64 {
        debug_assert_eq!(x.len(), self.coeffs.len());
        let p = self.p.value();
        let mut acc = 0u64;
        for (c, v) in self.coeffs.iter().zip(x) {
            acc = (acc + c * v) % p;
        }
        acc
    }

    pub fn add(&self, other: &LinearForm) -> LinearForm {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        let p = self.p;
        LinearForm {
            p,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| p.add(a, b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &LinearForm) -> LinearForm {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        let p = self.p;
        LinearForm {
            p,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| p.sub(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, c: u64) -> LinearForm {
        let p = self.p;
        let c = p.reduce(c);
        LinearForm {
            p,
            coeffs: self.coeffs.iter().map(|&a| p.mul(a, c)).collect(),
        }
    }

    /// D_φ: counts of each coefficient value, indexed by residue.
    pub fn coefficient_distribution(&self) -> CoefficientDistribution {
        let mut counts = vec![0u64; self.p.value() as usize];
        for &c in &self.coeffs {
            counts[c as usize] += 1;
        }
        CoefficientDistribution { counts }
    }
}

impl fmt::Display for LinearForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut wrote = false;
        for (i, &c) in self.coeffs.iter().enumerate() {
            if c == 0 {
                continue;
            }
            if wrote {
                write!(f, " + ")?;
            }
            if c == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "{c}*x{}", i + 1)?;
            }
            wrote = true;
        }
        if !wrote {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Support distance d(φ, ψ) = |Z(φ − ψ)|.  A metric on forms of equal length.
pub fn support_distance(a: &LinearForm, b: &LinearForm) -> Result<usize> {
    if a.n() != b.n() || a.p() != b.p() {
        return Err(Error::invalid(
            "support distance requires forms over the same modulus and dimension",
        ));
    }
    Ok(a.sub(b).support_size())
}

/// Multiset of coefficient values of a form; two forms with equal
/// distributions are related by a permutation of coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoefficientDistribution {
    counts: Vec<u64>,
}

impl CoefficientDistribution {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of coordinates carrying each non-zero value, i.e. the common
    /// support size of every form with this distribution.
    pub fn support_size(&self) -> u64 {
        self.counts.iter().skip(1).sum()
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// An affine map 𝔽_pⁿ → 𝔽_p^k given by k linear rows and a constant offset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AffineMultiMap {
    rows: Vec<LinearForm>,
    offset: Vec<u64>,
}

impl AffineMultiMap {
    pub fn new(rows: Vec<LinearForm>, offset: Vec<u64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("affine map needs at least one row"));
        }
        let p = rows[0].p();
        let n = rows[0].n();
        if rows.iter().any(|r| r.p() != p || r.n() != n) {
            return Err(Error::invalid(
                "affine map rows must share modulus and dimension",
            ));
        }
        if offset.len() != rows.len() {
            return Err(Error::invalid("offset length must equal row count"));
        }
        let offset = offset.into_iter().map(|v| p.reduce(v)).collect();
        Ok(AffineMultiMap { rows, offset })
    }

    /// Purely linear map (zero offset).
    pub fn linear(rows: Vec<LinearForm>) -> Result<Self> {
        let k = rows.len();
        Self::new(rows, vec![0; k])
    }

    pub fn p(&self) -> PrimeModulus {
        self.rows[0].p()
    }

    pub fn n(&self) -> usize {
        self.rows[0].n()
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[LinearForm] {
        &self.rows
    }

    pub fn offset(&self) -> &[u64] {
        &self.offset
    }

    pub fn eval(&self, x: &[u64]) -> Vec<u64> {
        let p = self.p();
        self.rows
            .iter()
            .zip(&self.offset)
            .map(|(row, &o)| p.add(row.eval(x), o))
            .collect()
    }

    /// Union of the row supports.
    pub fn support(&self) -> BTreeSet<usize> {
        let mut z = BTreeSet::new();
        for row in &self.rows {
            z.extend(row.support());
        }
        z
    }

    /// Substitutes fixed values for the given coordinates: coefficients on
    /// those coordinates are zeroed and their contribution moves into the
    /// offset.  The result agrees with `self` on every x that matches the
    /// assignment.
    pub fn substitute(&self, assignment: &[(usize, u64)]) -> AffineMultiMap {
        let p = self.p();
        let mut rows = self.rows.clone();
        let mut offset = self.offset.clone();
        for (k, row) in rows.iter_mut().enumerate() {
            for &(j, v) in assignment {
                let c = row.coeffs[j];
                if c != 0 {
                    offset[k] = p.add(offset[k], p.mul(c, v));
                    row.coeffs[j] = 0;
                }
            }
        }
        AffineMultiMap { rows, offset }
    }
}

/// Scalar condition (φ, E): satisfied by x when φ(x) ∈ E.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModPCondition {
    pub form: LinearForm,
    pub allowed: ResidueSet,
}

impl ModPCondition {
    pub fn new(form: LinearForm, allowed: ResidueSet) -> Self {
        ModPCondition { form, allowed }
    }

    /// The canonical unsatisfiable condition (0, ∅).
    pub fn canonical_empty(p: PrimeModulus, n: usize) -> Self {
        ModPCondition {
            form: LinearForm::zero(p, n),
            allowed: ResidueSet::empty(),
        }
    }

    pub fn is_canonical_empty(&self) -> bool {
        self.form.is_zero() && self.allowed.is_empty()
    }

    pub fn satisfied_by(&self, x: &[u64]) -> bool {
        self.allowed.contains(self.form.eval(x))
    }
}

impl fmt::Display for ModPCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) in {{", self.form)?;
        for (i, r) in self.allowed.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, "}}")
    }
}

/// Multi-dimensional condition (Φ, E) with Φ affine into 𝔽_p^k and E a set
/// of k-tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiCondition {
    pub map: AffineMultiMap,
    pub allowed: BTreeSet<Vec<u64>>,
}

impl MultiCondition {
    pub fn new(map: AffineMultiMap, allowed: BTreeSet<Vec<u64>>) -> Result<Self> {
        let p = map.p().value();
        let k = map.k();
        for t in &allowed {
            if t.len() != k {
                return Err(Error::invalid(format!(
                    "allowed tuple of length {} in a {k}-dimensional condition",
                    t.len()
                )));
            }
            if t.iter().any(|&v| v >= p) {
                return Err(Error::invalid("allowed tuple has out-of-range residue"));
            }
        }
        Ok(MultiCondition { map, allowed })
    }

    pub fn satisfied_by(&self, x: &[u64]) -> bool {
        self.allowed.contains(&self.map.eval(x))
    }

    /// |E| = p^k, i.e. the condition is trivially true.
    pub fn is_trivial(&self) -> bool {
        let full = (self.map.p().value() as u128).pow(self.map.k() as u32);
        self.allowed.len() as u128 == full
    }
}

/// Homogeneous list of conditions: either all scalar or all multi.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Conditions {
    Scalar(Vec<ModPCondition>),
    Multi(Vec<MultiCondition>),
}

impl Conditions {
    pub fn len(&self) -> usize {
        match self {
            Conditions::Scalar(v) => v.len(),
            Conditions::Multi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A set of conditions over a common alphabet Sⁿ ⊆ 𝔽_pⁿ.  The satisfying
/// set is the intersection of the individual conditions' satisfying sets;
/// an empty list means "everything satisfies".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionSet {
    alphabet: Alphabet,
    n: usize,
    conditions: Conditions,
}

impl ConditionSet {
    pub fn new(alphabet: Alphabet, n: usize, conditions: Conditions) -> Result<Self> {
        let p = alphabet.p();
        match &conditions {
            Conditions::Scalar(list) => {
                for c in list {
                    if c.form.p() != p {
                        return Err(Error::invalid("condition modulus differs from alphabet"));
                    }
                    if c.form.n() != n {
                        return Err(Error::invalid(format!(
                            "condition dimension {} differs from set dimension {n}",
                            c.form.n()
                        )));
                    }
                }
            }
            Conditions::Multi(list) => {
                for c in list {
                    if c.map.p() != p {
                        return Err(Error::invalid("condition modulus differs from alphabet"));
                    }
                    if c.map.n() != n {
                        return Err(Error::invalid(format!(
                            "condition dimension {} differs from set dimension {n}",
                            c.map.n()
                        )));
                    }
                }
            }
        }
        Ok(ConditionSet {
            alphabet,
            n,
            conditions,
        })
    }

    pub fn scalar(alphabet: Alphabet, n: usize, list: Vec<ModPCondition>) -> Result<Self> {
        Self::new(alphabet, n, Conditions::Scalar(list))
    }

    pub fn multi(alphabet: Alphabet, n: usize, list: Vec<MultiCondition>) -> Result<Self> {
        Self::new(alphabet, n, Conditions::Multi(list))
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn p(&self) -> PrimeModulus {
        self.alphabet.p()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn conditions(&self) -> &Conditions {
        &self.conditions
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn satisfied_by(&self, x: &[u64]) -> bool {
        match &self.conditions {
            Conditions::Scalar(list) => list.iter().all(|c| c.satisfied_by(x)),
            Conditions::Multi(list) => list.iter().all(|c| c.satisfied_by(x)),
        }
    }

    pub fn scalar_conditions(&self) -> Result<&[ModPCondition]> {
        match &self.conditions {
            Conditions::Scalar(list) => Ok(list),
            Conditions::Multi(_) => Err(Error::invalid(
                "operation requires scalar conditions, found multi-dimensional ones",
            )),
        }
    }

    pub fn multi_conditions(&self) -> Result<&[MultiCondition]> {
        match &self.conditions {
            Conditions::Multi(list) => Ok(list),
            Conditions::Scalar(_) => Err(Error::invalid(
                "operation requires multi-dimensional conditions, found scalar ones",
            )),
        }
    }
}

/// True when all forms share one coefficient distribution (and dimension).
pub fn is_symmetric_family(forms: &[LinearForm]) -> Result<bool> {
    if forms.is_empty() {
        return Err(Error::invalid("symmetric-family check needs a non-empty family"));
    }
    let n = forms[0].n();
    let p = forms[0].p();
    if forms.iter().any(|f| f.n() != n || f.p() != p) {
        return Err(Error::invalid(
            "symmetric-family check requires a common modulus and dimension",
        ));
    }
    let d0 = forms[0].coefficient_distribution();
    Ok(forms.iter().skip(1).all(|f| f.coefficient_distribution() == d0))
}

/// True when the petals are disjointly supported.  Zero forms (empty
/// support) never collide, so a family of identical zero petals counts.
pub fn detect_sunflower(petals: &[LinearForm]) -> Result<bool> {
    if petals.is_empty() {
        return Err(Error::invalid("sunflower check needs a non-empty family"));
    }
    let n = petals[0].n();
    let p = petals[0].p();
    if petals.iter().any(|f| f.n() != n || f.p() != p) {
        return Err(Error::invalid(
            "sunflower check requires a common modulus and dimension",
        ));
    }
    let mut seen = vec![false; n];
    for petal in petals {
        for i in petal.support() {
            if seen[i] {
                return Ok(false);
            }
            seen[i] = true;
        }
    }
    Ok(true)
}

/// Outcome of an r-separation scan.
#[derive(Debug, Clone)]
pub struct Separation {
    pub separated: bool,
    /// For a failed check: the coefficient vector u ≠ 0 and the combination
    /// Σ u_i φ_i whose support has size < r.
    pub witness: Option<(Vec<u64>, LinearForm)>,
}

/// Checks that every non-trivial combination Σ u_i φ_i (u ∈ 𝔽_p^m ∖ {0})
/// has support of size ≥ r, by scanning all p^m − 1 combinations.
pub fn is_r_separated(forms: &[LinearForm], r: usize, family_cap: usize) -> Result<Separation> {
    if forms.is_empty() {
        return Err(Error::invalid("separation check needs a non-empty family"));
    }
    let n = forms[0].n();
    let p = forms[0].p();
    if forms.iter().any(|f| f.n() != n || f.p() != p) {
        return Err(Error::invalid(
            "separation check requires a common modulus and dimension",
        ));
    }
    let m = forms.len();
    if m > family_cap {
        return Err(Error::budget(format!(
            "separation scan over {m} forms exceeds the family cap {family_cap}"
        )));
    }
    let combos = (p.value() as u128).checked_pow(m as u32);
    match combos {
        Some(c) if c <= MAX_SEPARATION_SCAN as u128 => {}
        _ => {
            return Err(Error::budget(format!(
                "separation scan would visit {}^{m} combinations (cap {MAX_SEPARATION_SCAN})",
                p.value()
            )));
        }
    }

    // Odometer over u ∈ 𝔽_p^m.  Incrementing digit i always adds φ_i to the
    // running combination; a wrapping digit adds it p times in total, which
    // is the identity, so carries need no special casing.
    let pv = p.value();
    let mut digits = vec![0u64; m];
    let mut combo = vec![0u64; n];
    let mut nonzero = 0usize;
    loop {
        // Advance the odometer; stop once it wraps to all zeros.
        let mut i = 0;
        loop {
            digits[i] += 1;
            for (&c, slot) in forms[i].coeffs().iter().zip(combo.iter_mut()) {
                if c == 0 {
                    continue;
                }
                let was = *slot;
                *slot = (was + c) % pv;
                if was == 0 {
                    nonzero += 1;
                } else if *slot == 0 {
                    nonzero -= 1;
                }
            }
            if digits[i] == pv {
                digits[i] = 0;
                i += 1;
                if i == m {
                    break;
                }
            } else {
                break;
            }
        }
        if digits.iter().all(|&d| d == 0) {
            break;
        }
        if nonzero < r {
            let witness_form = LinearForm::new(p, combo.clone());
            return Ok(Separation {
                separated: false,
                witness: Some((digits.clone(), witness_form)),
            });
        }
    }
    Ok(Separation {
        separated: true,
        witness: None,
    })
}

/// Report attached to [`normalize`] describing what changed.
#[derive(Debug, Clone, Default)]
pub struct NormalizeReport {
    pub dropped_trivial: usize,
    pub merged_duplicates: usize,
    pub collapsed_to_empty: bool,
}

/// Canonicalizes a scalar condition set without changing its satisfying set:
/// duplicate forms are merged by intersecting their allowed sets, trivially
/// true conditions (E = 𝔽_p, or the zero form with 0 ∈ E) are dropped, and
/// any unsatisfiable condition collapses the whole set to the canonical
/// empty condition.  Output conditions are sorted by (coefficients, E).
pub fn normalize(set: &ConditionSet) -> Result<(ConditionSet, NormalizeReport)> {
    let list = set.scalar_conditions()?;
    let p = set.p();
    let n = set.n();
    let mut report = NormalizeReport::default();

    let mut merged: Vec<ModPCondition> = Vec::new();
    for cond in list {
        match merged.iter_mut().find(|c| c.form == cond.form) {
            Some(existing) => {
                existing.allowed = existing.allowed.intersect(cond.allowed);
                report.merged_duplicates += 1;
            }
            None => merged.push(cond.clone()),
        }
    }

    let mut out: Vec<ModPCondition> = Vec::new();
    for cond in merged {
        let trivially_true = cond.allowed.is_full(p)
            || (cond.form.is_zero() && cond.allowed.contains(0));
        let unsatisfiable = cond.allowed.is_empty()
            || (cond.form.is_zero() && !cond.allowed.contains(0));
        if unsatisfiable {
            report.collapsed_to_empty = true;
            let collapsed = ConditionSet::scalar(
                set.alphabet().clone(),
                n,
                vec![ModPCondition::canonical_empty(p, n)],
            )?;
            return Ok((collapsed, report));
        }
        if trivially_true {
            report.dropped_trivial += 1;
            continue;
        }
        out.push(cond);
    }
    out.sort();
    let normalized = ConditionSet::scalar(set.alphabet().clone(), n, out)?;
    Ok((normalized, report))
}

/// Cauchy–Davenport lower bound on |λ_1.S + … + λ_r.S| for r non-zero
/// dilates of S: min{r(|S|−1) + 1, p}.
pub fn cauchy_davenport_bound(p: PrimeModulus, nonzero_terms: usize, alphabet_len: usize) -> u64 {
    if nonzero_terms == 0 || alphabet_len == 0 {
        return 1; // the empty sum only produces {0}
    }
    let candidate = (nonzero_terms as u64) * (alphabet_len as u64 - 1) + 1;
    candidate.min(p.value())
}

/// Exact sumset {Σ_i λ_i s_i : s ∈ S^n} for a coefficient vector, folding one
/// dilate λ_i.S at a time.  Zero coefficients contribute only {0}.
pub fn dilated_sumset(p: PrimeModulus, coeffs: &[u64], alphabet: &Alphabet) -> ResidueSet {
    let mut acc = ResidueSet::empty();
    acc.insert(0);
    for &c in coeffs {
        let c = p.reduce(c);
        if c == 0 {
            continue;
        }
        let mut next = ResidueSet::empty();
        for a in acc.iter() {
            for &s in alphabet.elements() {
                next.insert(p.add(a, p.mul(c, s)));
            }
        }
        acc = next;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: u64) -> PrimeModulus {
        PrimeModulus::new(v).unwrap()
    }

    #[test]
    fn prime_validation() {
        assert!(PrimeModulus::new(2).is_ok());
        assert!(PrimeModulus::new(61).is_ok());
        assert!(PrimeModulus::new(1).is_err());
        assert!(PrimeModulus::new(4).is_err());
        assert!(PrimeModulus::new(67).is_err()); // prime but above the cap
    }

    #[test]
    fn residue_set_shift_wraps() {
        let p5 = p(5);
        let e = ResidueSet::from_residues(p5, [3, 4]).unwrap();
        let shifted = e.shift(p5, 2);
        assert_eq!(shifted.residues(), vec![0, 1]);
        assert_eq!(e.shift(p5, 0), e);
        assert_eq!(e.shift(p5, 5), e);
    }

    #[test]
    fn alphabet_validation() {
        let p5 = p(5);
        assert!(Alphabet::new(p5, vec![]).is_err());
        assert!(Alphabet::new(p5, vec![1, 1]).is_err());
        assert!(Alphabet::new(p5, vec![2, 1]).is_err());
        assert!(Alphabet::new(p5, vec![0, 5]).is_err());
        let s = Alphabet::new(p5, vec![0, 1]).unwrap();
        assert_eq!(s.min_probability_exponent().unwrap(), 4); // ⌈4/1⌉
        let full = Alphabet::full(p5);
        assert!(full.is_full());
        assert_eq!(full.min_probability_exponent().unwrap(), 1);
    }

    #[test]
    fn support_distance_is_a_metric_on_small_cases() {
        let p3 = p(3);
        let a = LinearForm::new(p3, vec![1, 2, 0]);
        let b = LinearForm::new(p3, vec![1, 0, 2]);
        let c = LinearForm::new(p3, vec![0, 0, 0]);
        assert_eq!(support_distance(&a, &a).unwrap(), 0);
        assert_eq!(
            support_distance(&a, &b).unwrap(),
            support_distance(&b, &a).unwrap()
        );
        let ab = support_distance(&a, &b).unwrap();
        let bc = support_distance(&b, &c).unwrap();
        let ac = support_distance(&a, &c).unwrap();
        assert!(ac <= ab + bc);
    }

    #[test]
    fn coefficient_distribution_counts() {
        let p3 = p(3);
        let f = LinearForm::new(p3, vec![1, 1, 2, 0, 0]);
        let d = f.coefficient_distribution();
        assert_eq!(d.counts(), &[2, 2, 1]);
        assert_eq!(d.support_size(), 3);
        assert_eq!(d.n(), 5);
    }

    #[test]
    fn symmetric_family_detection() {
        let p3 = p(3);
        // x1+x2 and x2+x3 share the distribution {1:2, 0:1}.
        let a = LinearForm::new(p3, vec![1, 1, 0]);
        let b = LinearForm::new(p3, vec![0, 1, 1]);
        let c = LinearForm::new(p3, vec![2, 1, 0]);
        assert!(is_symmetric_family(&[a.clone(), b.clone()]).unwrap());
        assert!(!is_symmetric_family(&[a, b, c]).unwrap());
        assert!(is_symmetric_family(&[]).is_err());
    }

    #[test]
    fn sunflower_detection() {
        let p3 = p(3);
        let a = LinearForm::new(p3, vec![1, 0, 0, 0]);
        let b = LinearForm::new(p3, vec![0, 2, 0, 0]);
        let overlapping = LinearForm::new(p3, vec![1, 1, 0, 0]);
        assert!(detect_sunflower(&[a.clone(), b.clone()]).unwrap());
        assert!(!detect_sunflower(&[a.clone(), overlapping]).unwrap());
        // Repeated zero petals: still disjointly supported.
        let z = LinearForm::zero(p3, 4);
        assert!(detect_sunflower(&[z.clone(), z]).unwrap());
        // A non-zero petal repeated is not.
        assert!(!detect_sunflower(&[a.clone(), a]).unwrap());
    }

    #[test]
    fn separation_scan_finds_witnesses() {
        let p2 = p(2);
        // {x1+x2, x2+x3}: the sum has support {1,3}, size 2, and each form
        // has support 2, so the family is 2-separated but not 3-separated.
        let a = LinearForm::new(p2, vec![1, 1, 0]);
        let b = LinearForm::new(p2, vec![0, 1, 1]);
        let fam = [a, b];
        assert!(is_r_separated(&fam, 2, 12).unwrap().separated);
        let failed = is_r_separated(&fam, 3, 12).unwrap();
        assert!(!failed.separated);
        let (u, combo) = failed.witness.unwrap();
        assert!(u.iter().any(|&d| d != 0));
        assert!(combo.support_size() < 3);
        // Family cap produces a budget error.
        assert!(is_r_separated(&fam, 2, 1).is_err());
    }

    #[test]
    fn normalize_merges_and_collapses() {
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let f = LinearForm::new(p3, vec![1, 1]);
        let c1 = ModPCondition::new(f.clone(), ResidueSet::from_residues(p3, [0, 1]).unwrap());
        let c2 = ModPCondition::new(f.clone(), ResidueSet::from_residues(p3, [1, 2]).unwrap());
        let trivial = ModPCondition::new(
            LinearForm::new(p3, vec![0, 1]),
            ResidueSet::full(p3),
        );
        let set = ConditionSet::scalar(s.clone(), 2, vec![c1.clone(), trivial, c2.clone()]).unwrap();
        let (norm, report) = normalize(&set).unwrap();
        assert_eq!(report.dropped_trivial, 1);
        assert_eq!(report.merged_duplicates, 1);
        let list = norm.scalar_conditions().unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].allowed.residues(), vec![1]);

        // Disjoint allowed sets on the same form collapse everything.
        let c3 = ModPCondition::new(f.clone(), ResidueSet::from_residues(p3, [0]).unwrap());
        let c4 = ModPCondition::new(f, ResidueSet::from_residues(p3, [2]).unwrap());
        let set = ConditionSet::scalar(s, 2, vec![c3, c4]).unwrap();
        let (norm, report) = normalize(&set).unwrap();
        assert!(report.collapsed_to_empty);
        let list = norm.scalar_conditions().unwrap();
        assert_eq!(list.len(), 1);
        assert!(list[0].is_canonical_empty());
    }

    #[test]
    fn cauchy_davenport_against_exact_sumsets() {
        // Exhaustive check at p ≤ 7, r ≤ 3 over every alphabet: the exact
        // sumset can never be smaller than the bound.
        for pv in [2u64, 3, 5, 7] {
            let pm = p(pv);
            for mask in 1u64..(1 << pv) {
                let elements: Vec<u64> = (0..pv).filter(|&e| mask >> e & 1 == 1).collect();
                let s = Alphabet::new(pm, elements).unwrap();
                for r in 1..=3usize {
                    // All coefficient vectors with r non-zero entries.
                    let coeffs = vec![1u64; r];
                    let exact = dilated_sumset(pm, &coeffs, &s);
                    let bound = cauchy_davenport_bound(pm, r, s.len());
                    assert!(
                        (exact.len() as u64) >= bound,
                        "p={pv} S={:?} r={r}: |sumset|={} < bound {bound}",
                        s.elements(),
                        exact.len()
                    );
                }
            }
        }
    }

    #[test]
    fn sumset_example_reaches_full_line() {
        // p=5, S={0,1}: four dilates 1.S+1.S+1.S+1.S cover all of 𝔽_5.
        let p5 = p(5);
        let s = Alphabet::new(p5, vec![0, 1]).unwrap();
        let exact = dilated_sumset(p5, &[1, 1, 1, 1], &s);
        assert_eq!(exact.len(), 5);
        // Three dilates only reach {0,1,2,3}.
        let three = dilated_sumset(p5, &[1, 1, 1], &s);
        assert_eq!(three.residues(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn affine_map_substitution() {
        let p3 = p(3);
        let rows = vec![
            LinearForm::new(p3, vec![1, 2, 0]),
            LinearForm::new(p3, vec![0, 1, 1]),
        ];
        let map = AffineMultiMap::linear(rows).unwrap();
        let sub = map.substitute(&[(1, 2)]);
        // Coefficients at coordinate 1 are gone, offsets absorb 2·2 and 1·2.
        assert_eq!(sub.rows()[0].coeffs(), &[1, 0, 0]);
        assert_eq!(sub.rows()[1].coeffs(), &[0, 0, 1]);
        assert_eq!(sub.offset(), &[1, 2]);
        for x in [[0, 2, 0], [1, 2, 2], [2, 2, 1]] {
            assert_eq!(map.eval(&x), sub.eval(&x));
        }
    }
}
