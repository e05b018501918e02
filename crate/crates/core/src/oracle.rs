//! Exact combinatorial oracles: value distributions, satisfying densities,
//! and verification of internal approximations.
//!
//! Everything a compressor claims is checked against these routines.  Exact
//! answers are big-integer rationals; the only inexact path is the seeded
//! Monte Carlo estimator, whose result carries an explicit Hoeffding radius
//! and is never treated as a certificate.

use std::collections::{HashMap, HashSet};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{BigUint, One, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{Alphabet, ConditionSet, Conditions, LinearForm};
use crate::error::{Error, Result};

/// Default cap on joint value-space sizes (p^k or |H|^k) for dynamic
/// programming over distributions.
pub const DEFAULT_STATE_CAP: u64 = 1_000_000;

/// Default cap on |S|^n for full enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// Default Monte Carlo sample count.
pub const DEFAULT_MC_SAMPLES: u64 = 100_000;

/// Failure probability δ used for the Hoeffding radius √(ln(2/δ)/(2N)).
pub const MC_DELTA: f64 = 1e-6;

/// Work caps for the exact oracle routines.  Exceeding one is a reported
/// budget error, never a silent truncation.
#[derive(Debug, Clone, Copy)]
pub struct OracleCaps {
    pub state_cap: u64,
    pub enumeration_cap: u64,
}

impl Default for OracleCaps {
    fn default() -> Self {
        OracleCaps {
            state_cap: DEFAULT_STATE_CAP,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// How to compute a satisfying density.
#[derive(Debug, Clone, Copy)]
pub enum DensityMethod {
    /// Walk all |S|^n points.  Exact.
    Enumerate,
    /// Convolve the joint distribution of the distinct forms coordinate by
    /// coordinate.  Exact, and independent of n blowup as long as the joint
    /// value space fits the state cap.
    Dp,
    /// Seeded sampling; returns an estimate with a Hoeffding radius.
    MonteCarlo { samples: u64, seed: u64 },
}

/// A density: exact rational, or an estimate with an explicit radius.
#[derive(Debug, Clone)]
pub enum DensityResult {
    Exact(BigRational),
    Estimate {
        estimate: BigRational,
        radius: f64,
        samples: u64,
        seed: u64,
    },
}

impl DensityResult {
    pub fn is_exact(&self) -> bool {
        matches!(self, DensityResult::Exact(_))
    }

    /// Point value: the exact density, or the estimate.
    pub fn value(&self) -> &BigRational {
        match self {
            DensityResult::Exact(v) => v,
            DensityResult::Estimate { estimate, .. } => estimate,
        }
    }

    /// A rational upper bound on the true density (estimate + radius for
    /// Monte Carlo, clamped to 1).
    pub fn upper_bound(&self) -> BigRational {
        match self {
            DensityResult::Exact(v) => v.clone(),
            DensityResult::Estimate {
                estimate, radius, ..
            } => {
                let r = BigRational::from_float(*radius)
                    .unwrap_or_else(|| BigRational::from_integer(BigInt::from(1)));
                let up = estimate + r;
                let one = BigRational::from_integer(BigInt::from(1));
                if up > one {
                    one
                } else {
                    up
                }
            }
        }
    }
}

/// Exact distribution of a tuple of maps over a mixed-radix value space,
/// with big-integer counts summing to |S|^n.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    radices: Vec<u64>,
    counts: Vec<BigUint>,
    total: BigUint,
}

impl ExactDistribution {
    pub fn radices(&self) -> &[u64] {
        &self.radices
    }

    pub fn states(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> &BigUint {
        &self.total
    }

    pub fn count(&self, tuple: &[u64]) -> &BigUint {
        &self.counts[self.encode(tuple)]
    }

    pub fn count_at(&self, index: usize) -> &BigUint {
        &self.counts[index]
    }

    pub fn probability(&self, tuple: &[u64]) -> BigRational {
        ratio(self.count(tuple).clone(), self.total.clone())
    }

    pub fn encode(&self, tuple: &[u64]) -> usize {
        debug_assert_eq!(tuple.len(), self.radices.len());
        let mut idx = 0usize;
        for (v, r) in tuple.iter().zip(&self.radices).rev() {
            debug_assert!(v < r);
            idx = idx * (*r as usize) + *v as usize;
        }
        idx
    }

    pub fn decode(&self, mut index: usize) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.radices.len());
        for r in &self.radices {
            out.push((index % *r as usize) as u64);
            index /= *r as usize;
        }
        out
    }

    /// Attained tuples (count > 0), in encoding order.
    pub fn support(&self) -> Vec<Vec<u64>> {
        (0..self.counts.len())
            .filter(|&i| !self.counts[i].is_zero())
            .map(|i| self.decode(i))
            .collect()
    }

    /// Smallest probability among attained tuples.
    pub fn min_positive_probability(&self) -> Result<BigRational> {
        let min = self
            .counts
            .iter()
            .filter(|c| !c.is_zero())
            .min()
            .ok_or_else(|| Error::internal("distribution with empty support"))?;
        Ok(ratio(min.clone(), self.total.clone()))
    }

    /// Verifies Σ counts = |S|^n.
    pub fn check_mass(&self) -> bool {
        let sum: BigUint = self.counts.iter().sum();
        sum == self.total
    }

    /// Assembles a distribution from raw parts; counts must already sum to `total`.
    pub(crate) fn from_parts(radices: Vec<u64>, counts: Vec<BigUint>, total: BigUint) -> Result<Self> {
        let states: usize = radices
            .iter()
            .try_fold(1usize, |acc, &r| acc.checked_mul(r as usize))
            .ok_or_else(|| Error::internal("distribution state space overflows"))?;
        if counts.len() != states {
            return Err(Error::internal("distribution count vector has wrong length"));
        }
        let dist = ExactDistribution { radices, counts, total };
        if !dist.check_mass() {
            return Err(Error::internal("distribution counts do not sum to the total"));
        }
        Ok(dist)
    }
}

pub(crate) fn ratio(num: BigUint, den: BigUint) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn checked_state_count(radices: &[u64], cap: u64) -> Result<usize> {
    let mut states: u128 = 1;
    for &r in radices {
        states = states.saturating_mul(r as u128);
        if states > cap as u128 {
            return Err(Error::budget(format!(
                "joint value space exceeds the state cap {cap}"
            )));
        }
    }
    Ok(states as usize)
}

/// Exact joint distribution of (φ_1(x), …, φ_k(x)) for x uniform on Sⁿ,
/// computed by per-coordinate convolution.  Coordinates outside every
/// support contribute a scalar factor |S| instead of a convolution pass.
pub fn exact_tuple_distribution(
    forms: &[LinearForm],
    alphabet: &Alphabet,
    caps: &OracleCaps,
) -> Result<ExactDistribution> {
    if forms.is_empty() {
        return Err(Error::invalid("tuple distribution needs at least one form"));
    }
    let p = forms[0].p();
    let n = forms[0].n();
    if alphabet.p() != p {
        return Err(Error::invalid("alphabet modulus differs from form modulus"));
    }
    if forms.iter().any(|f| f.n() != n || f.p() != p) {
        return Err(Error::invalid(
            "tuple distribution requires a common modulus and dimension",
        ));
    }
    let k = forms.len();
    let pv = p.value();
    let radices = vec![pv; k];
    let states = checked_state_count(&radices, caps.state_cap)?;

    let mut counts = vec![BigUint::zero(); states];
    counts[0] = BigUint::one();
    let mut inactive = 0u32;
    let mut scratch = vec![BigUint::zero(); states];
    for i in 0..n {
        let column: Vec<u64> = forms.iter().map(|f| f.coeff(i)).collect();
        if column.iter().all(|&c| c == 0) {
            inactive += 1;
            continue;
        }
        for slot in scratch.iter_mut() {
            slot.set_zero();
        }
        // Translation v ↦ v + s·column is a permutation per digit; walk the
        // states in mixed-radix order keeping decoded digits incrementally.
        let mut digits = vec![0u64; k];
        for (_idx, cnt) in counts.iter().enumerate() {
            if !cnt.is_zero() {
                for &s in alphabet.elements() {
                    let mut target = 0usize;
                    for j in (0..k).rev() {
                        let d = (digits[j] + s * column[j]) % pv;
                        target = target * pv as usize + d as usize;
                    }
                    scratch[target] += cnt;
                }
            }
            // Advance decoded digits to match idx+1.
            let mut j = 0;
            while j < k {
                digits[j] += 1;
                if digits[j] == pv {
                    digits[j] = 0;
                    j += 1;
                } else {
                    break;
                }
            }
        }
        std::mem::swap(&mut counts, &mut scratch);
    }
    if inactive > 0 {
        let factor = BigUint::from(alphabet.len()).pow(inactive);
        for c in counts.iter_mut() {
            *c *= &factor;
        }
    }
    let total = BigUint::from(alphabet.len()).pow(n as u32);
    Ok(ExactDistribution {
        radices,
        counts,
        total,
    })
}

/// Exact minimum positive probability of a scalar form's values on Sⁿ,
/// together with the analytic lower bound |S|^{−⌈(p−1)/(|S|−1)⌉}.
#[derive(Debug, Clone)]
pub struct MinProbabilityReport {
    pub probability: BigRational,
    pub lower_bound: BigRational,
    pub meets_bound: bool,
}

pub fn min_positive_probability(
    form: &LinearForm,
    alphabet: &Alphabet,
    caps: &OracleCaps,
) -> Result<MinProbabilityReport> {
    let t = alphabet.min_probability_exponent()?;
    let dist = exact_tuple_distribution(std::slice::from_ref(form), alphabet, caps)?;
    let probability = dist.min_positive_probability()?;
    let lower_bound = ratio(
        BigUint::one(),
        BigUint::from(alphabet.len()).pow(t as u32),
    );
    let meets_bound = probability >= lower_bound;
    Ok(MinProbabilityReport {
        probability,
        lower_bound,
        meets_bound,
    })
}

// ---------------------------------------------------------------------------
// Point evaluation plumbing shared by enumeration and sampling.
// ---------------------------------------------------------------------------

/// Pre-compiled evaluators: per condition, per coordinate, per alphabet
/// index, the value delta; satisfaction is a set lookup on the final value.
struct CompiledSet {
    /// deltas[c][i][si] for scalar slot c.
    scalar: Vec<ScalarEval>,
    multi: Vec<MultiEval>,
}

struct ScalarEval {
    deltas: Vec<Vec<u64>>, // [coordinate][alphabet index]
    p: u64,
    allowed: u64, // bitmask
}

struct MultiEval {
    // One running value per row, plus the encoded allowed set over raw row
    // values (offset folded in).
    row_deltas: Vec<Vec<Vec<u64>>>, // [row][coordinate][alphabet index]
    p: u64,
    k: usize,
    allowed_raw: HashSet<u64>,
}

impl CompiledSet {
    fn compile(set: &ConditionSet) -> CompiledSet {
        let n = set.n();
        let s = set.alphabet().elements();
        let pv = set.p().value();
        let mut scalar = Vec::new();
        let mut multi = Vec::new();
        match set.conditions() {
            Conditions::Scalar(list) => {
                for cond in list {
                    let deltas: Vec<Vec<u64>> = (0..n)
                        .map(|i| {
                            let c = cond.form.coeff(i);
                            s.iter().map(|&sv| (c * sv) % pv).collect()
                        })
                        .collect();
                    let mut allowed = 0u64;
                    for r in cond.allowed.iter() {
                        allowed |= 1 << r;
                    }
                    scalar.push(ScalarEval {
                        deltas,
                        p: pv,
                        allowed,
                    });
                }
            }
            Conditions::Multi(list) => {
                for cond in list {
                    let k = cond.map.k();
                    let row_deltas: Vec<Vec<Vec<u64>>> = cond
                        .map
                        .rows()
                        .iter()
                        .map(|row| {
                            (0..n)
                                .map(|i| {
                                    let c = row.coeff(i);
                                    s.iter().map(|&sv| (c * sv) % pv).collect()
                                })
                                .collect()
                        })
                        .collect();
                    // Membership over raw row values: raw + offset ∈ E.
                    let mut allowed_raw = HashSet::new();
                    for t in &cond.allowed {
                        let mut enc = 0u64;
                        for (j, &v) in t.iter().enumerate().rev() {
                            let raw = (v + pv - cond.map.offset()[j]) % pv;
                            enc = enc * pv + raw;
                            let _ = j;
                        }
                        allowed_raw.insert(enc);
                    }
                    multi.push(MultiEval {
                        row_deltas,
                        p: pv,
                        k,
                        allowed_raw,
                    });
                }
            }
        }
        CompiledSet { scalar, multi }
    }

    fn slots(&self) -> usize {
        self.scalar.len() + self.multi.iter().map(|m| m.k).sum::<usize>()
    }

    /// Applies the delta for (coordinate, alphabet index) to the running
    /// value vector (one slot per scalar condition, then per multi row).
    fn advance(&self, values: &mut [u64], coord: usize, si: usize, sign_forward: bool) {
        let mut slot = 0;
        for s in &self.scalar {
            let d = s.deltas[coord][si];
            values[slot] = if sign_forward {
                (values[slot] + d) % s.p
            } else {
                (values[slot] + s.p - d) % s.p
            };
            slot += 1;
        }
        for m in &self.multi {
            for row in &m.row_deltas {
                let d = row[coord][si];
                values[slot] = if sign_forward {
                    (values[slot] + d) % m.p
                } else {
                    (values[slot] + m.p - d) % m.p
                };
                slot += 1;
            }
        }
    }

    fn satisfied(&self, values: &[u64]) -> bool {
        let mut slot = 0;
        for s in &self.scalar {
            if s.allowed >> values[slot] & 1 == 0 {
                return false;
            }
            slot += 1;
        }
        for m in &self.multi {
            let mut enc = 0u64;
            for j in (0..m.k).rev() {
                enc = enc * m.p + values[slot + j];
            }
            if !m.allowed_raw.contains(&enc) {
                return false;
            }
            slot += m.k;
        }
        true
    }
}

/// Walks Sⁿ depth-first with incremental form values, invoking `leaf` with
/// the compiled running values at every point.
fn enumerate_points<F: FnMut(&[u64], &[usize])>(compiled: &[&CompiledSet], n: usize, s_len: usize, leaf: &mut F) {
    let total_slots: usize = compiled.iter().map(|c| c.slots()).sum();
    let mut values = vec![0u64; total_slots];
    let mut choice = vec![0usize; n];
    fn rec<F: FnMut(&[u64], &[usize])>(
        compiled: &[&CompiledSet],
        values: &mut Vec<u64>,
        choice: &mut Vec<usize>,
        depth: usize,
        n: usize,
        s_len: usize,
        leaf: &mut F,
    ) {
        if depth == n {
            leaf(values, choice);
            return;
        }
        for si in 0..s_len {
            choice[depth] = si;
            let mut offset = 0;
            for c in compiled {
                let slots = c.slots();
                c.advance(&mut values[offset..offset + slots], depth, si, true);
                offset += slots;
            }
            rec(compiled, values, choice, depth + 1, n, s_len, leaf);
            let mut offset = 0;
            for c in compiled {
                let slots = c.slots();
                c.advance(&mut values[offset..offset + slots], depth, si, false);
                offset += slots;
            }
        }
    }
    rec(compiled, &mut values, &mut choice, 0, n, s_len, leaf);
}

pub(crate) fn enumeration_size(alphabet_len: usize, n: usize, cap: u64) -> Result<u64> {
    let mut total: u128 = 1;
    for _ in 0..n {
        total = total.saturating_mul(alphabet_len as u128);
        if total > cap as u128 {
            return Err(Error::budget(format!(
                "enumeration over |S|^n = {alphabet_len}^{n} exceeds the cap {cap}"
            )));
        }
    }
    Ok(total as u64)
}

/// Exact or estimated density of the satisfying set of `set` inside Sⁿ.
pub fn satisfying_density(
    set: &ConditionSet,
    method: DensityMethod,
    caps: &OracleCaps,
) -> Result<DensityResult> {
    match method {
        DensityMethod::Enumerate => {
            let total = enumeration_size(set.alphabet().len(), set.n(), caps.enumeration_cap)?;
            let compiled = CompiledSet::compile(set);
            let mut hits = 0u64;
            enumerate_points(&[&compiled], set.n(), set.alphabet().len(), &mut |values, _| {
                if compiled.satisfied(values) {
                    hits += 1;
                }
            });
            Ok(DensityResult::Exact(ratio(
                BigUint::from(hits),
                BigUint::from(total),
            )))
        }
        DensityMethod::Dp => {
            let (forms, checkers) = distinct_forms_and_checkers(&[set])?;
            let dist = exact_tuple_distribution(&forms, set.alphabet(), caps)?;
            let mut hits = BigUint::zero();
            let mut tuple;
            for idx in 0..dist.states() {
                if dist.count_at(idx).is_zero() {
                    continue;
                }
                tuple = dist.decode(idx);
                if checkers[0].satisfied(&tuple) {
                    hits += dist.count_at(idx);
                }
            }
            Ok(DensityResult::Exact(ratio(hits, dist.total().clone())))
        }
        DensityMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::invalid("montecarlo needs at least one sample"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = set.alphabet().elements();
            let mut x = vec![0u64; set.n()];
            let mut hits = 0u64;
            for _ in 0..samples {
                for slot in x.iter_mut() {
                    *slot = s[rng.gen_range(0..s.len())];
                }
                if set.satisfied_by(&x) {
                    hits += 1;
                }
            }
            let estimate = ratio(BigUint::from(hits), BigUint::from(samples));
            Ok(DensityResult::Estimate {
                estimate,
                radius: hoeffding_radius(samples),
                samples,
                seed,
            })
        }
    }
}

pub fn hoeffding_radius(samples: u64) -> f64 {
    ((2.0 / MC_DELTA).ln() / (2.0 * samples as f64)).sqrt()
}

/// Value-tuple membership checker against the distinct-form table, used by
/// the DP density path.
struct TupleChecker {
    scalar: Vec<(usize, u64)>,          // (slot, allowed bitmask)
    multi: Vec<(Vec<usize>, Vec<u64>, u64, HashSet<u64>)>, // (slots, offsets, p, allowed enc)
}

impl TupleChecker {
    fn satisfied(&self, tuple: &[u64]) -> bool {
        for &(slot, mask) in &self.scalar {
            if mask >> tuple[slot] & 1 == 0 {
                return false;
            }
        }
        for (slots, offsets, p, allowed) in &self.multi {
            let mut enc = 0u64;
            for j in (0..slots.len()).rev() {
                let v = (tuple[slots[j]] + offsets[j]) % p;
                enc = enc * p + v;
            }
            if !allowed.contains(&enc) {
                return false;
            }
        }
        true
    }
}

/// Collects the distinct linear forms across several condition sets and
/// builds per-set checkers indexing into that shared table.
fn distinct_forms_and_checkers(
    sets: &[&ConditionSet],
) -> Result<(Vec<LinearForm>, Vec<TupleChecker>)> {
    let mut forms: Vec<LinearForm> = Vec::new();
    let mut index: HashMap<LinearForm, usize> = HashMap::new();
    let mut slot_of = |f: &LinearForm, forms: &mut Vec<LinearForm>| -> usize {
        if let Some(&i) = index.get(f) {
            return i;
        }
        let i = forms.len();
        forms.push(f.clone());
        index.insert(f.clone(), i);
        i
    };
    let mut checkers = Vec::new();
    for set in sets {
        let mut scalar = Vec::new();
        let mut multi = Vec::new();
        match set.conditions() {
            Conditions::Scalar(list) => {
                for cond in list {
                    let slot = slot_of(&cond.form, &mut forms);
                    let mut mask = 0u64;
                    for r in cond.allowed.iter() {
                        mask |= 1 << r;
                    }
                    scalar.push((slot, mask));
                }
            }
            Conditions::Multi(list) => {
                for cond in list {
                    let p = cond.map.p().value();
                    let slots: Vec<usize> = cond
                        .map
                        .rows()
                        .iter()
                        .map(|row| slot_of(row, &mut forms))
                        .collect();
                    let mut allowed = HashSet::new();
                    for t in &cond.allowed {
                        let mut enc = 0u64;
                        for &v in t.iter().rev() {
                            enc = enc * p + v;
                        }
                        allowed.insert(enc);
                    }
                    multi.push((slots, cond.map.offset().to_vec(), p, allowed));
                }
            }
        }
        checkers.push(TupleChecker { scalar, multi });
    }
    if forms.is_empty() {
        // No conditions anywhere: use the zero form so the distribution is
        // well-defined; every tuple satisfies every checker.
        let p = sets[0].p();
        let n = sets[0].n();
        forms.push(LinearForm::zero(p, n));
    }
    Ok((forms, checkers))
}

/// Finds one x ∈ Sⁿ whose distinct-form value tuple equals `target`, by a
/// forward reachability pass and a backward walk.  `None` when the tuple is
/// unattainable.
pub fn find_preimage(
    forms: &[LinearForm],
    alphabet: &Alphabet,
    target: &[u64],
    caps: &OracleCaps,
) -> Result<Option<Vec<u64>>> {
    let p = forms[0].p().value();
    let k = forms.len();
    let n = forms[0].n();
    let radices = vec![p; k];
    let states = checked_state_count(&radices, caps.state_cap)?;
    let encode = |tuple: &[u64]| -> usize {
        let mut idx = 0usize;
        for &v in tuple.iter().rev() {
            idx = idx * p as usize + v as usize;
        }
        idx
    };
    // reachable[i] = states attainable using coordinates < i.
    let mut reachable = Vec::with_capacity(n + 1);
    let mut layer = vec![false; states];
    layer[0] = true;
    reachable.push(layer.clone());
    for i in 0..n {
        let prev = &reachable[i];
        let mut next = vec![false; states];
        let column: Vec<u64> = forms.iter().map(|f| f.coeff(i)).collect();
        let mut digits = vec![0u64; k];
        for (_idx, &ok) in prev.iter().enumerate() {
            if ok {
                for &s in alphabet.elements() {
                    let mut t = 0usize;
                    for j in (0..k).rev() {
                        let d = (digits[j] + s * column[j]) % p;
                        t = t * p as usize + d as usize;
                    }
                    next[t] = true;
                }
            }
            let mut j = 0;
            while j < k {
                digits[j] += 1;
                if digits[j] == p {
                    digits[j] = 0;
                    j += 1;
                } else {
                    break;
                }
            }
        }
        reachable.push(next);
    }
    let target_idx = encode(target);
    if !reachable[n][target_idx] {
        return Ok(None);
    }
    // Walk back: at layer i+1 holding value tuple v, find s with v − s·col_i
    // reachable at layer i.
    let mut x = vec![0u64; n];
    let mut current: Vec<u64> = target.to_vec();
    for i in (0..n).rev() {
        let column: Vec<u64> = forms.iter().map(|f| f.coeff(i)).collect();
        let mut found = false;
        for &s in alphabet.elements() {
            let prev_tuple: Vec<u64> = current
                .iter()
                .zip(&column)
                .map(|(&v, &c)| (v + p - (s * c) % p) % p)
                .collect();
            if reachable[i][encode(&prev_tuple)] {
                x[i] = s;
                current = prev_tuple;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::internal("preimage walk lost a reachable state"));
        }
    }
    Ok(Some(x))
}

/// Verdict of checking that `candidate` internally ε-approximates
/// `original`: containment of satisfying sets plus a defect bound.
#[derive(Debug, Clone)]
pub struct ApproximationVerdict {
    pub containment_ok: bool,
    /// A point satisfying the candidate but not the original, when
    /// containment fails and the method can exhibit one.
    pub counterexample: Option<Vec<u64>>,
    /// density(original) − density(candidate) when containment holds; more
    /// generally the density of original-minus-candidate.
    pub defect: DensityResult,
    pub accepted: bool,
    /// False when the verdict rests on sampling rather than exact counting.
    pub certified: bool,
}

/// Checks sat(candidate) ⊆ sat(original) and defect ≤ ε.  Both sets must
/// share the alphabet and dimension.
pub fn verify_internal_approximation(
    original: &ConditionSet,
    candidate: &ConditionSet,
    epsilon: &BigRational,
    method: DensityMethod,
    caps: &OracleCaps,
) -> Result<ApproximationVerdict> {
    if original.alphabet() != candidate.alphabet() || original.n() != candidate.n() {
        return Err(Error::invalid(
            "verification requires matching alphabet and dimension",
        ));
    }
    match method {
        DensityMethod::Enumerate => {
            let total = enumeration_size(
                original.alphabet().len(),
                original.n(),
                caps.enumeration_cap,
            )?;
            let c_orig = CompiledSet::compile(original);
            let c_cand = CompiledSet::compile(candidate);
            let slots_orig = c_orig.slots();
            let mut missing = 0u64; // original ∧ ¬candidate
            let mut bad: Option<Vec<u64>> = None;
            let mut bad_count = 0u64;
            let s = original.alphabet().elements();
            enumerate_points(
                &[&c_orig, &c_cand],
                original.n(),
                s.len(),
                &mut |values, choice| {
                    let so = c_orig.satisfied(&values[..slots_orig]);
                    let sc = c_cand.satisfied(&values[slots_orig..]);
                    if so && !sc {
                        missing += 1;
                    }
                    if sc && !so {
                        bad_count += 1;
                        if bad.is_none() {
                            bad = Some(choice.iter().map(|&si| s[si]).collect());
                        }
                    }
                },
            );
            let defect = ratio(BigUint::from(missing), BigUint::from(total));
            let containment_ok = bad_count == 0;
            let accepted = containment_ok && defect <= *epsilon;
            Ok(ApproximationVerdict {
                containment_ok,
                counterexample: bad,
                defect: DensityResult::Exact(defect),
                accepted,
                certified: true,
            })
        }
        DensityMethod::Dp => {
            let (forms, checkers) = distinct_forms_and_checkers(&[original, candidate])?;
            let dist = exact_tuple_distribution(&forms, original.alphabet(), caps)?;
            let mut missing = BigUint::zero();
            let mut bad_tuple: Option<Vec<u64>> = None;
            for idx in 0..dist.states() {
                if dist.count_at(idx).is_zero() {
                    continue;
                }
                let tuple = dist.decode(idx);
                let so = checkers[0].satisfied(&tuple);
                let sc = checkers[1].satisfied(&tuple);
                if so && !sc {
                    missing += dist.count_at(idx);
                }
                if sc && !so && bad_tuple.is_none() {
                    bad_tuple = Some(tuple);
                }
            }
            let counterexample = match &bad_tuple {
                Some(t) => find_preimage(&forms, original.alphabet(), t, caps)?,
                None => None,
            };
            let defect = ratio(missing, dist.total().clone());
            let containment_ok = bad_tuple.is_none();
            let accepted = containment_ok && defect <= *epsilon;
            Ok(ApproximationVerdict {
                containment_ok,
                counterexample,
                defect: DensityResult::Exact(defect),
                accepted,
                certified: true,
            })
        }
        DensityMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::invalid("montecarlo needs at least one sample"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = original.alphabet().elements();
            let mut x = vec![0u64; original.n()];
            let mut missing = 0u64;
            let mut bad: Option<Vec<u64>> = None;
            for _ in 0..samples {
                for slot in x.iter_mut() {
                    *slot = s[rng.gen_range(0..s.len())];
                }
                let so = original.satisfied_by(&x);
                let sc = candidate.satisfied_by(&x);
                if so && !sc {
                    missing += 1;
                }
                if sc && !so && bad.is_none() {
                    bad = Some(x.clone());
                }
            }
            let estimate = ratio(BigUint::from(missing), BigUint::from(samples));
            let radius = hoeffding_radius(samples);
            let defect = DensityResult::Estimate {
                estimate,
                radius,
                samples,
                seed,
            };
            let containment_ok = bad.is_none();
            let accepted = containment_ok && defect.upper_bound() <= *epsilon;
            Ok(ApproximationVerdict {
                containment_ok,
                counterexample: bad,
                defect,
                accepted,
                certified: false,
            })
        }
    }
}
