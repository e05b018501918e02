//! Compression of mod-p condition sets into internally ε-approximating
//! sets of boundedly many conditions.
//!
//! Every compressor returns an [`ApproximationResult`] whose output's
//! satisfying set is contained in the input's by construction, together
//! with a proof-side defect bound ≤ the requested ε.  The bounds recorded
//! here are certificates derived from the structural arguments (sunflower
//! independence, separation, linear independence), not oracle measurements;
//! [`crate::oracle::verify_internal_approximation`] re-checks them exactly.

use std::collections::BTreeMap;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{BigUint, One, Zero};

use crate::algebra::{
    detect_sunflower, dilated_sumset, is_r_separated, is_symmetric_family, normalize, Alphabet,
    AffineMultiMap, ConditionSet, Conditions, LinearForm, ModPCondition, MultiCondition,
    PrimeModulus, ResidueSet, DEFAULT_SEPARATION_FAMILY_CAP,
};
use crate::error::{Error, Result};
use crate::oracle::{exact_tuple_distribution, ratio, OracleCaps};

/// Work caps for the compressors.  Exceeding one is a reported budget
/// error, never a silent truncation.
#[derive(Debug, Clone, Copy)]
pub struct Budget {
    /// Recursion depth across partition levels.
    pub max_depth: usize,
    /// Partition width at any single level.
    pub max_classes: usize,
    /// Total output conditions.
    pub max_output: usize,
    /// Family size for separation scans (p^{m} combinations each).
    pub separation_family_cap: usize,
    /// State-space cap shared with the oracle calls made internally.
    pub state_cap: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_depth: 64,
            max_classes: 4096,
            max_output: 4096,
            separation_family_cap: DEFAULT_SEPARATION_FAMILY_CAP,
            state_cap: 1_000_000,
        }
    }
}

impl Budget {
    pub fn oracle_caps(&self) -> OracleCaps {
        OracleCaps {
            state_cap: self.state_cap,
            enumeration_cap: self.state_cap,
        }
    }
}

/// One step in a compression derivation, for reporting.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub rule: String,
    pub detail: String,
    pub sub_epsilon: Option<BigRational>,
}

impl TraceRecord {
    fn new(rule: &str, detail: String) -> Self {
        TraceRecord {
            rule: rule.to_string(),
            detail,
            sub_epsilon: None,
        }
    }

    fn with_epsilon(rule: &str, detail: String, eps: &BigRational) -> Self {
        TraceRecord {
            rule: rule.to_string(),
            detail,
            sub_epsilon: Some(eps.clone()),
        }
    }
}

/// A compressed condition set with its certificate.
///
/// Invariants: sat(output) ⊆ sat(input) (by construction of each rule) and
/// `proof_defect_bound` ≤ `epsilon_target`.
#[derive(Debug, Clone)]
pub struct ApproximationResult {
    pub output: ConditionSet,
    pub epsilon_target: BigRational,
    pub proof_defect_bound: BigRational,
    pub trace: Vec<TraceRecord>,
}

impl ApproximationResult {
    fn checked(self) -> Result<Self> {
        if self.proof_defect_bound > self.epsilon_target {
            return Err(Error::internal(format!(
                "defect bound {} exceeds target {}",
                self.proof_defect_bound, self.epsilon_target
            )));
        }
        Ok(self)
    }
}

pub(crate) fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub(crate) fn rat_pow(r: &BigRational, e: usize) -> BigRational {
    BigRational::new(
        r.numer().pow(e as u32),
        r.denom().pow(e as u32),
    )
}

/// Exact rational for a float plus the library-wide one-sided tolerance;
/// used when a certificate term comes from an analytic (float) formula.
pub(crate) fn rational_upper(x: f64) -> BigRational {
    let base = BigRational::from_float(x.max(0.0)).unwrap_or_else(BigRational::zero);
    let tol = BigRational::from_float(crate::fourier::FLOAT_TOLERANCE).unwrap();
    base + tol
}

pub(crate) fn epsilon_in_range(epsilon: &BigRational) -> Result<f64> {
    if *epsilon <= BigRational::zero() || *epsilon >= BigRational::one() {
        return Err(Error::invalid("epsilon must lie strictly between 0 and 1"));
    }
    num::ToPrimitive::to_f64(epsilon)
        .ok_or_else(|| Error::invalid("epsilon is not representable as f64"))
}

// ---------------------------------------------------------------------------
// Basic case: unrestricted alphabet S = 𝔽_p.
// ---------------------------------------------------------------------------

/// Greedy maximal linearly independent subset of the forms, in index order.
fn greedy_independent(forms: &[&LinearForm], p: PrimeModulus) -> Vec<usize> {
    let mut basis: Vec<Vec<u64>> = Vec::new(); // row-echelon, pivot position ascending
    let mut pivots: Vec<usize> = Vec::new();
    let mut chosen = Vec::new();
    'next: for (i, f) in forms.iter().enumerate() {
        let mut v = f.coeffs().to_vec();
        for (b, &piv) in basis.iter().zip(&pivots) {
            if v[piv] != 0 {
                let factor = p.mul(v[piv], p.inv(b[piv]).unwrap());
                for (x, y) in v.iter_mut().zip(b) {
                    *x = p.sub(*x, p.mul(factor, *y));
                }
            }
        }
        match v.iter().position(|&c| c != 0) {
            Some(piv) => {
                basis.push(v);
                pivots.push(piv);
                chosen.push(i);
            }
            None => continue 'next,
        }
    }
    chosen
}

/// Compression over the full alphabet S = 𝔽_p: a maximal linearly
/// independent subfamily either stays below p·ln(1/ε) — in which case the
/// normalized input is already small enough — or forces the satisfying set
/// down to density < ε, so the canonical empty condition approximates.
pub fn compress_basic(set: &ConditionSet, epsilon: &BigRational) -> Result<ApproximationResult> {
    let eps_f = epsilon_in_range(epsilon)?;
    if !set.alphabet().is_full() {
        return Err(Error::invalid(
            "basic compression requires the full alphabet S = F_p",
        ));
    }
    let p = set.p();
    let n = set.n();
    let mut trace = Vec::new();
    let (norm, report) = normalize(set)?;
    trace.push(TraceRecord::new(
        "normalize",
        format!(
            "dropped {} trivial, merged {} duplicates",
            report.dropped_trivial, report.merged_duplicates
        ),
    ));
    let list = norm.scalar_conditions()?.to_vec();
    if report.collapsed_to_empty || list.is_empty() {
        return ApproximationResult {
            output: norm,
            epsilon_target: epsilon.clone(),
            proof_defect_bound: BigRational::zero(),
            trace,
        }
        .checked();
    }
    let forms: Vec<&LinearForm> = list.iter().map(|c| &c.form).collect();
    let independent = greedy_independent(&forms, p);
    let threshold = p.value() as f64 * (1.0 / eps_f).ln();
    trace.push(TraceRecord::new(
        "independent-subfamily",
        format!(
            "size {} against threshold p*ln(1/eps) = {threshold:.3}",
            independent.len()
        ),
    ));
    if (independent.len() as f64) > threshold {
        // Independent forms are jointly uniform, so the satisfying set has
        // density at most Π |E_i|/p over the subfamily.
        let mut bound = BigRational::one();
        for &i in &independent {
            bound *= rat(list[i].allowed.len() as i64, p.value() as i64);
        }
        trace.push(TraceRecord::new(
            "independence-collapse",
            format!(
                "density bound {} via {} independent conditions",
                bound,
                independent.len()
            ),
        ));
        let output = ConditionSet::scalar(
            set.alphabet().clone(),
            n,
            vec![ModPCondition::canonical_empty(p, n)],
        )?;
        return ApproximationResult {
            output,
            epsilon_target: epsilon.clone(),
            proof_defect_bound: bound,
            trace,
        }
        .checked();
    }
    ApproximationResult {
        output: norm,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: BigRational::zero(),
        trace,
    }
    .checked()
}

// ---------------------------------------------------------------------------
// Symmetric sunflowers.
// ---------------------------------------------------------------------------

/// Result of collapsing a symmetric sunflower to its single condition.
#[derive(Debug, Clone)]
pub struct SunflowerCollapse {
    /// (center, H) with H = {t : V + t ⊆ E} for the common petal value set V.
    pub condition: ModPCondition,
    /// Σ_{t attained by the center, t ∉ H} P[petal ∈ E − t]^{m}: the exact
    /// form of the independence argument, with m the petal count.
    pub exact_defect_bound: BigRational,
    /// p·(1 − 2^{−(p−1)})^{m}: the closed-form worst case over all
    /// alphabets with |S| ≥ 2.
    pub worst_case_defect_bound: BigRational,
}

/// Collapses the conditions {(center + petal_i, E)} of a symmetric sunflower
/// into the single condition (center, H).  Containment is exact: center
/// values in H force every original condition because each petal only takes
/// values in the common value set V.  The defect bound uses only the
/// disjointness of the petals (independence of their values).
pub fn compress_symmetric_sunflower(
    center: &LinearForm,
    petals: &[LinearForm],
    allowed: ResidueSet,
    alphabet: &Alphabet,
    caps: &OracleCaps,
) -> Result<SunflowerCollapse> {
    if petals.is_empty() {
        return Err(Error::invalid("sunflower collapse needs at least one petal"));
    }
    if alphabet.len() < 2 {
        return Err(Error::invalid(
            "sunflower collapse requires an alphabet with at least 2 elements",
        ));
    }
    let p = center.p();
    if petals.iter().any(|f| f.p() != p || f.n() != center.n()) || alphabet.p() != p {
        return Err(Error::invalid(
            "sunflower collapse requires a common modulus and dimension",
        ));
    }
    if !detect_sunflower(petals)? {
        return Err(Error::invalid("petals must be disjointly supported"));
    }
    if !is_symmetric_family(petals)? {
        return Err(Error::invalid(
            "petals must share one coefficient distribution",
        ));
    }
    let m = petals.len();
    let pv = p.value();

    // Common petal value distribution (identical across petals: it depends
    // only on the coefficient multiset).
    let dist = exact_tuple_distribution(std::slice::from_ref(&petals[0]), alphabet, caps)?;
    let value_set: Vec<u64> = (0..pv).filter(|&v| !dist.count(&[v]).is_zero()).collect();

    // H = {t : t + V ⊆ E}.
    let mut h = ResidueSet::empty();
    for t in 0..pv {
        if value_set.iter().all(|&v| allowed.contains(p.add(t, v))) {
            h.insert(t);
        }
    }

    // q_t = P[petal(x) ∈ E − t], exactly.
    let center_values = dilated_sumset(p, center.coeffs(), alphabet);
    let mut exact = BigRational::zero();
    for t in 0..pv {
        if h.contains(t) || !center_values.contains(t) {
            continue;
        }
        let mut q_t = BigRational::zero();
        for &v in &value_set {
            if allowed.contains(p.add(t, v)) {
                q_t += dist.probability(&[v]);
            }
        }
        exact += rat_pow(&q_t, m);
    }

    // p·(1 − 2^{−(p−1)})^m with 1 − 2^{−(p−1)} = (2^{p−1} − 1)/2^{p−1}.
    let half_pow = BigUint::from(2u32).pow(pv as u32 - 1);
    let worst = BigRational::new(
        BigInt::from(&half_pow - BigUint::one()),
        BigInt::from(half_pow),
    );
    let worst_case = rat(pv as i64, 1) * rat_pow(&worst, m);

    Ok(SunflowerCollapse {
        condition: ModPCondition::new(center.clone(), h),
        exact_defect_bound: exact,
        worst_case_defect_bound: worst_case,
    })
}

// ---------------------------------------------------------------------------
// Symmetric balls.
// ---------------------------------------------------------------------------

/// Greedy maximal disjointly-supported subfamily, in index order.  Zero
/// forms never collide and are all taken.
fn greedy_disjoint(offsets: &[LinearForm], n: usize) -> Vec<usize> {
    let mut used = vec![false; n];
    let mut chosen = Vec::new();
    'outer: for (i, f) in offsets.iter().enumerate() {
        let support = f.support();
        for &j in &support {
            if used[j] {
                continue 'outer;
            }
        }
        for &j in &support {
            used[j] = true;
        }
        chosen.push(i);
    }
    chosen
}

struct BallCtx<'a> {
    alphabet: &'a Alphabet,
    budget: &'a Budget,
    trace: Vec<TraceRecord>,
    emitted: usize,
}

/// Recursive core of the symmetric-ball compression: either the maximal
/// sunflower inside the family is large enough for its exact defect bound
/// to fit ε, or the family partitions along a coordinate-value pair drawn
/// from the sunflower's support union, shrinking the radius by one.
fn ball_rec(
    ctx: &mut BallCtx<'_>,
    center: &LinearForm,
    offsets: &[LinearForm],
    allowed: ResidueSet,
    epsilon: &BigRational,
    depth: usize,
) -> Result<(Vec<ModPCondition>, BigRational)> {
    if depth > ctx.budget.max_depth {
        return Err(Error::budget(format!(
            "ball recursion exceeded depth {}",
            ctx.budget.max_depth
        )));
    }
    let radius = offsets[0].support_size();
    debug_assert!(offsets.iter().all(|f| f.support_size() == radius));
    if radius == 0 {
        // All conditions coincide with (center, E).
        ctx.emitted += 1;
        if ctx.emitted > ctx.budget.max_output {
            return Err(Error::budget("output condition cap exceeded"));
        }
        ctx.trace.push(TraceRecord::new(
            "radius-zero",
            format!("single condition at depth {depth}"),
        ));
        return Ok((
            vec![ModPCondition::new(center.clone(), allowed)],
            BigRational::zero(),
        ));
    }

    let m = greedy_disjoint(offsets, center.n());
    let petals: Vec<LinearForm> = m.iter().map(|&i| offsets[i].clone()).collect();
    let collapse = compress_symmetric_sunflower(
        center,
        &petals,
        allowed,
        ctx.alphabet,
        &ctx.budget.oracle_caps(),
    )?;
    if collapse.exact_defect_bound <= *epsilon {
        ctx.emitted += 1;
        if ctx.emitted > ctx.budget.max_output {
            return Err(Error::budget("output condition cap exceeded"));
        }
        ctx.trace.push(TraceRecord::with_epsilon(
            "sunflower-collapse",
            format!(
                "depth {depth}, {} disjoint petals of {}, exact bound {}, worst-case bound {}",
                m.len(),
                offsets.len(),
                collapse.exact_defect_bound,
                collapse.worst_case_defect_bound
            ),
            epsilon,
        ));
        return Ok((vec![collapse.condition], collapse.exact_defect_bound));
    }

    // Partition along (first supported coordinate in Z, its coefficient).
    let mut z: Vec<usize> = Vec::new();
    {
        let mut used = vec![false; center.n()];
        for &i in &m {
            for j in offsets[i].support() {
                used[j] = true;
            }
        }
        for (j, &u) in used.iter().enumerate() {
            if u {
                z.push(j);
            }
        }
    }
    let mut classes: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
    for (i, f) in offsets.iter().enumerate() {
        let key = z
            .iter()
            .find_map(|&j| {
                let c = f.coeff(j);
                if c != 0 {
                    Some((j, c))
                } else {
                    None
                }
            })
            .ok_or_else(|| {
                Error::internal(
                    "offset disjoint from the maximal sunflower's support union",
                )
            })?;
        classes.entry(key).or_default().push(i);
    }
    let q = classes.len();
    if q > ctx.budget.max_classes {
        return Err(Error::budget(format!(
            "partition into {q} classes exceeds the class cap"
        )));
    }
    let sub_eps = epsilon / BigRational::from_integer(BigInt::from(q as u64));
    ctx.trace.push(TraceRecord::with_epsilon(
        "ball-partition",
        format!(
            "depth {depth}, radius {radius}, |M| = {}, |Z| = {}, {q} classes",
            m.len(),
            z.len()
        ),
        &sub_eps,
    ));
    let mut out = Vec::new();
    let mut bound = BigRational::zero();
    for ((j, y), members) in classes {
        let unit = LinearForm::unit(center.p(), center.n(), j, y);
        let new_center = center.add(&unit);
        let new_offsets: Vec<LinearForm> =
            members.iter().map(|&i| offsets[i].sub(&unit)).collect();
        let (conds, sub_bound) =
            ball_rec(ctx, &new_center, &new_offsets, allowed, &sub_eps, depth + 1)?;
        out.extend(conds);
        bound += sub_bound;
    }
    Ok((out, bound))
}

/// Compresses the symmetric family {(center + offset_i, E)} inside the ball
/// of the given radius about `center`.  All offsets must share one
/// coefficient distribution.
pub fn compress_symmetric_ball(
    center: &LinearForm,
    offsets: &[LinearForm],
    allowed: ResidueSet,
    alphabet: &Alphabet,
    epsilon: &BigRational,
    budget: &Budget,
) -> Result<ApproximationResult> {
    epsilon_in_range(epsilon)?;
    if offsets.is_empty() {
        return Err(Error::invalid("ball compression needs at least one offset"));
    }
    if alphabet.len() < 2 {
        return Err(Error::invalid(
            "ball compression requires an alphabet with at least 2 elements",
        ));
    }
    if !is_symmetric_family(offsets)? {
        return Err(Error::invalid(
            "ball compression requires offsets with one coefficient distribution",
        ));
    }
    if offsets.iter().any(|f| f.n() != center.n() || f.p() != center.p()) {
        return Err(Error::invalid(
            "offsets must match the center's modulus and dimension",
        ));
    }
    let mut ctx = BallCtx {
        alphabet,
        budget,
        trace: Vec::new(),
        emitted: 0,
    };
    let (conds, bound) = ball_rec(&mut ctx, center, offsets, allowed, epsilon, 0)?;
    let output = ConditionSet::scalar(alphabet.clone(), center.n(), conds)?;
    ApproximationResult {
        output,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: bound,
        trace: ctx.trace,
    }
    .checked()
}

// ---------------------------------------------------------------------------
// The general mod-p compressor.
// ---------------------------------------------------------------------------

/// Separation radius r = ⌈2p³·ln p·ln(2/ε)⌉.
pub fn separation_radius(p: PrimeModulus, eps_f: f64) -> usize {
    let pv = p.value() as f64;
    (2.0 * pv.powi(3) * pv.ln() * (2.0 / eps_f).ln()).ceil() as usize
}

/// Case-1 target: an r-separated subfamily of size ⌈p·ln(2/ε)⌉ pushes the
/// satisfying set below density ε.
pub fn separation_target(p: PrimeModulus, eps_f: f64) -> usize {
    ((p.value() as f64) * (2.0 / eps_f).ln()).ceil().max(1.0) as usize
}

/// Compresses an arbitrary scalar condition set over Sⁿ, |S| ≥ 2, into at
/// most boundedly many conditions with defect ≤ ε.
///
/// Case 1: a greedy r-separated subfamily reaching the target size forces
/// near-uniformity of the joint values, so the whole satisfying set has
/// density < ε and the canonical empty condition suffices.  Case 2: a
/// maximal r-separated subfamily M lets every form decompose as (combination
/// over M) + (remainder of support ≤ r); classes with equal allowed set,
/// combination, and remainder distribution are symmetric balls, compressed
/// recursively.
pub fn compress_mod_p(
    set: &ConditionSet,
    epsilon: &BigRational,
    budget: &Budget,
) -> Result<ApproximationResult> {
    let eps_f = epsilon_in_range(epsilon)?;
    let p = set.p();
    let n = set.n();
    let mut trace = Vec::new();

    if set.alphabet().len() == 1 {
        // Degenerate single-point alphabet: evaluate everything at the one
        // point of Sⁿ.
        let x = vec![set.alphabet().elements()[0]; n];
        let sat = set.satisfied_by(&x);
        trace.push(TraceRecord::new(
            "single-point-alphabet",
            format!("the unique point is {}satisfying", if sat { "" } else { "non-" }),
        ));
        let output = if sat {
            ConditionSet::scalar(set.alphabet().clone(), n, vec![])?
        } else {
            ConditionSet::scalar(
                set.alphabet().clone(),
                n,
                vec![ModPCondition::canonical_empty(p, n)],
            )?
        };
        return ApproximationResult {
            output,
            epsilon_target: epsilon.clone(),
            proof_defect_bound: BigRational::zero(),
            trace,
        }
        .checked();
    }

    let (norm, report) = normalize(set)?;
    trace.push(TraceRecord::new(
        "normalize",
        format!(
            "dropped {} trivial, merged {} duplicates",
            report.dropped_trivial, report.merged_duplicates
        ),
    ));
    let list = norm.scalar_conditions()?.to_vec();
    if report.collapsed_to_empty || list.is_empty() {
        return ApproximationResult {
            output: norm,
            epsilon_target: epsilon.clone(),
            proof_defect_bound: BigRational::zero(),
            trace,
        }
        .checked();
    }

    let r = separation_radius(p, eps_f);
    let target = separation_target(p, eps_f);
    trace.push(TraceRecord::new(
        "separation-parameters",
        format!("radius r = {r}, target subfamily size {target}"),
    ));

    // Greedy growth of an r-separated subfamily, stopping at the target.
    let mut separated: Vec<usize> = Vec::new();
    for i in 0..list.len() {
        if separated.len() >= target {
            break;
        }
        let mut candidate: Vec<LinearForm> =
            separated.iter().map(|&j| list[j].form.clone()).collect();
        candidate.push(list[i].form.clone());
        match is_r_separated(&candidate, r, budget.separation_family_cap) {
            Ok(sep) if sep.separated => separated.push(i),
            Ok(_) => {}
            Err(Error::Budget(msg)) => {
                return Err(Error::budget(format!(
                    "cannot certify maximality of the separated subfamily: {msg}"
                )))
            }
            Err(e) => return Err(e),
        }
    }

    if separated.len() >= target {
        // Case 1: near-uniform joint values.  Density ≤ Π |E_i|/p plus the
        // equidistribution slack, and ≤ 2(1−1/p)^{|M|} ≤ ε outright.
        let mut main = BigRational::one();
        let mut log_e_product = 0.0f64;
        for &i in &separated {
            main *= rat(list[i].allowed.len() as i64, p.value() as i64);
            log_e_product += (list[i].allowed.len() as f64).ln();
        }
        let slack_f =
            (log_e_product + (r as f64) * (1.0 - 1.0 / (p.value() * p.value()) as f64).ln()).exp();
        let refined = main + rational_upper(slack_f);
        let pv = p.value() as i64;
        let closed_form = rat(2, 1) * rat_pow(&rat(pv - 1, pv), separated.len());
        let bound = refined.min(closed_form);
        trace.push(TraceRecord::new(
            "separated-collapse",
            format!(
                "{} forms {r}-separated; density bound {}",
                separated.len(),
                bound
            ),
        ));
        let output = ConditionSet::scalar(
            set.alphabet().clone(),
            n,
            vec![ModPCondition::canonical_empty(p, n)],
        )?;
        return ApproximationResult {
            output,
            epsilon_target: epsilon.clone(),
            proof_defect_bound: bound,
            trace,
        }
        .checked();
    }

    // Case 2: M is maximal r-separated (below target).  Decompose every
    // form as Σ a_m φ_m + remainder with |supp(remainder)| ≤ r, scanning
    // a ∈ 𝔽_p^M lexicographically.
    let m_forms: Vec<LinearForm> = separated.iter().map(|&j| list[j].form.clone()).collect();
    let m_len = m_forms.len();
    let pv = p.value();
    let scan_per_form = (pv as u128).checked_pow(m_len as u32).unwrap_or(u128::MAX);
    if scan_per_form.saturating_mul(list.len() as u128) > budget.state_cap as u128 {
        return Err(Error::budget(format!(
            "remainder search would scan {scan_per_form} combinations per condition"
        )));
    }
    trace.push(TraceRecord::new(
        "maximal-separated-subfamily",
        format!("|M| = {m_len} (indices {separated:?})"),
    ));

    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct ClassKey {
        allowed: Vec<u64>,
        combination: Vec<u64>,
        distribution: Vec<u64>,
    }
    let mut classes: BTreeMap<ClassKey, Vec<LinearForm>> = BTreeMap::new();
    for cond in &list {
        // Lexicographic scan over a ∈ 𝔽_p^M (leftmost digit most
        // significant, ascending).
        let mut found: Option<(Vec<u64>, LinearForm)> = None;
        let mut a = vec![0u64; m_len];
        'scan: loop {
            let mut combo = LinearForm::zero(p, n);
            for (digit, form) in a.iter().zip(&m_forms) {
                if *digit != 0 {
                    combo = combo.add(&form.scale(*digit));
                }
            }
            let remainder = cond.form.sub(&combo);
            if remainder.support_size() <= r {
                found = Some((a.clone(), remainder));
                break 'scan;
            }
            // Next tuple in lexicographic order: increment from the right.
            let mut j = m_len;
            loop {
                if j == 0 {
                    break 'scan;
                }
                j -= 1;
                a[j] += 1;
                if a[j] == pv {
                    a[j] = 0;
                } else {
                    break;
                }
            }
        }
        let (a, remainder) = found.ok_or_else(|| {
            Error::internal(
                "maximal separated subfamily admitted no bounded-support remainder",
            )
        })?;
        let key = ClassKey {
            allowed: cond.allowed.residues(),
            combination: a,
            distribution: remainder.coefficient_distribution().counts().to_vec(),
        };
        classes.entry(key).or_default().push(remainder);
    }

    let q = classes.len();
    if q > budget.max_classes {
        return Err(Error::budget(format!(
            "decomposition produced {q} classes, exceeding the class cap"
        )));
    }
    let sub_eps = epsilon / BigRational::from_integer(BigInt::from(q as u64));
    trace.push(TraceRecord::with_epsilon(
        "class-partition",
        format!("{q} classes keyed by (allowed set, combination, distribution)"),
        &sub_eps,
    ));

    let mut out_conditions = Vec::new();
    let mut bound = BigRational::zero();
    let mut ctx = BallCtx {
        alphabet: set.alphabet(),
        budget,
        trace: Vec::new(),
        emitted: 0,
    };
    for (key, members) in classes {
        let mut center = LinearForm::zero(p, n);
        for (digit, form) in key.combination.iter().zip(&m_forms) {
            if *digit != 0 {
                center = center.add(&form.scale(*digit));
            }
        }
        let allowed = ResidueSet::from_residues(p, key.allowed.iter().copied())?;
        let (conds, sub_bound) = ball_rec(&mut ctx, &center, &members, allowed, &sub_eps, 1)?;
        out_conditions.extend(conds);
        bound += sub_bound;
    }
    trace.extend(ctx.trace);
    let output = ConditionSet::scalar(set.alphabet().clone(), n, out_conditions)?;
    ApproximationResult {
        output,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: bound,
        trace,
    }
    .checked()
}

// ---------------------------------------------------------------------------
// Union bookkeeping and product combination.
// ---------------------------------------------------------------------------

/// Concatenates approximations of disjoint pieces of a condition set: the
/// defect bounds (and targets) add.
pub fn union_approximations(parts: Vec<ApproximationResult>) -> Result<ApproximationResult> {
    if parts.is_empty() {
        return Err(Error::invalid("union of zero approximations"));
    }
    let alphabet = parts[0].output.alphabet().clone();
    let n = parts[0].output.n();
    let mut scalar: Vec<ModPCondition> = Vec::new();
    let mut multi: Vec<MultiCondition> = Vec::new();
    let mut kind_scalar = None;
    let mut epsilon_target = BigRational::zero();
    let mut bound = BigRational::zero();
    let mut trace = Vec::new();
    for part in parts {
        if part.output.alphabet() != &alphabet || part.output.n() != n {
            return Err(Error::invalid(
                "union requires a common alphabet and dimension",
            ));
        }
        match part.output.conditions() {
            Conditions::Scalar(list) => {
                if kind_scalar == Some(false) {
                    return Err(Error::invalid("union cannot mix scalar and multi outputs"));
                }
                kind_scalar = Some(true);
                scalar.extend(list.iter().cloned());
            }
            Conditions::Multi(list) => {
                if kind_scalar == Some(true) {
                    return Err(Error::invalid("union cannot mix scalar and multi outputs"));
                }
                kind_scalar = Some(false);
                multi.extend(list.iter().cloned());
            }
        }
        epsilon_target += part.epsilon_target;
        bound += part.proof_defect_bound;
        trace.extend(part.trace);
    }
    let conditions = if kind_scalar.unwrap_or(true) {
        Conditions::Scalar(scalar)
    } else {
        Conditions::Multi(multi)
    };
    let output = ConditionSet::new(alphabet, n, conditions)?;
    ApproximationResult {
        output,
        epsilon_target,
        proof_defect_bound: bound,
        trace,
    }
    .checked()
}

/// Combines all conditions of a set into one multi-dimensional condition
/// with the identical satisfying set (the product map with E = E_1×…×E_m).
pub fn combine_to_single_condition(set: &ConditionSet, budget: &Budget) -> Result<ConditionSet> {
    if set.is_empty() {
        return Err(Error::invalid(
            "combining needs at least one condition",
        ));
    }
    let n = set.n();
    let mut rows: Vec<LinearForm> = Vec::new();
    let mut offset: Vec<u64> = Vec::new();
    // Per original condition: the list of its tuple values, for the product.
    let mut factors: Vec<Vec<Vec<u64>>> = Vec::new();
    match set.conditions() {
        Conditions::Scalar(list) => {
            for cond in list {
                rows.push(cond.form.clone());
                offset.push(0);
                factors.push(cond.allowed.iter().map(|r| vec![r]).collect());
            }
        }
        Conditions::Multi(list) => {
            for cond in list {
                rows.extend(cond.map.rows().iter().cloned());
                offset.extend(cond.map.offset().iter().copied());
                factors.push(cond.allowed.iter().cloned().collect());
            }
        }
    }
    let mut size: u128 = 1;
    for f in &factors {
        size = size.saturating_mul(f.len() as u128);
        if size > budget.state_cap as u128 {
            return Err(Error::budget(format!(
                "product allowed set exceeds the state cap {}",
                budget.state_cap
            )));
        }
    }
    let mut allowed: Vec<Vec<u64>> = vec![vec![]];
    for f in &factors {
        let mut next = Vec::with_capacity(allowed.len() * f.len());
        for prefix in &allowed {
            for tuple in f {
                let mut t = prefix.clone();
                t.extend(tuple.iter().copied());
                next.push(t);
            }
        }
        allowed = next;
    }
    let map = AffineMultiMap::new(rows, offset)?;
    let cond = MultiCondition::new(map, allowed.into_iter().collect())?;
    ConditionSet::multi(set.alphabet().clone(), n, vec![cond])
}

// ---------------------------------------------------------------------------
// Affine maps of bounded support.
// ---------------------------------------------------------------------------

fn canonical_empty_multi(p: PrimeModulus, n: usize) -> MultiCondition {
    MultiCondition::new(
        AffineMultiMap::linear(vec![LinearForm::zero(p, n)]).unwrap(),
        std::collections::BTreeSet::new(),
    )
    .unwrap()
}

struct AffineCtx<'a> {
    alphabet: &'a Alphabet,
    budget: &'a Budget,
    trace: Vec<TraceRecord>,
}

/// Per-condition exact summary used by the affine recursion.
struct CondSummary {
    cond: MultiCondition,
    support: Vec<usize>,
    violation_probability: BigRational,
}

fn summarize_conditions(
    conds: &[MultiCondition],
    alphabet: &Alphabet,
    caps: &OracleCaps,
) -> Result<(Vec<CondSummary>, bool)> {
    let mut active = Vec::new();
    for cond in conds {
        let dist = exact_tuple_distribution(cond.map.rows(), alphabet, caps)?;
        let p = cond.map.p();
        let mut sat = BigRational::zero();
        let mut viol = BigRational::zero();
        for idx in 0..dist.states() {
            if dist.count_at(idx).is_zero() {
                continue;
            }
            let raw = dist.decode(idx);
            let shifted: Vec<u64> = raw
                .iter()
                .zip(cond.map.offset())
                .map(|(&v, &o)| p.add(v, o))
                .collect();
            let prob = ratio(dist.count_at(idx).clone(), dist.total().clone());
            if cond.allowed.contains(&shifted) {
                sat += prob;
            } else {
                viol += prob;
            }
        }
        if sat.is_zero() {
            return Ok((Vec::new(), true)); // some condition is never satisfied
        }
        if viol.is_zero() {
            continue; // never violated on Sⁿ: drop it
        }
        active.push(CondSummary {
            cond: cond.clone(),
            support: cond.map.support().into_iter().collect(),
            violation_probability: viol,
        });
    }
    Ok((active, false))
}

fn affine_rec(
    ctx: &mut AffineCtx<'_>,
    conds: &[MultiCondition],
    epsilon: &BigRational,
    depth: usize,
) -> Result<(Vec<MultiCondition>, BigRational)> {
    if depth > ctx.budget.max_depth {
        return Err(Error::budget(format!(
            "affine recursion exceeded depth {}",
            ctx.budget.max_depth
        )));
    }
    if conds.is_empty() {
        return Ok((Vec::new(), BigRational::zero()));
    }
    let p = conds[0].map.p();
    let n = conds[0].map.n();
    let caps = ctx.budget.oracle_caps();
    let (active, unsatisfiable) = summarize_conditions(conds, ctx.alphabet, &caps)?;
    if unsatisfiable {
        ctx.trace.push(TraceRecord::new(
            "unsatisfiable-condition",
            format!("depth {depth}: some condition admits no point of S^n"),
        ));
        return Ok((vec![canonical_empty_multi(p, n)], BigRational::zero()));
    }
    if active.is_empty() {
        ctx.trace.push(TraceRecord::new(
            "all-trivial",
            format!("depth {depth}: every condition holds on all of S^n"),
        ));
        return Ok((Vec::new(), BigRational::zero()));
    }
    let s_max = active.iter().map(|a| a.support.len()).max().unwrap();

    // Greedy disjointly-supported subfamily; its members' violations are
    // independent events.
    let mut used = vec![false; n];
    let mut family: Vec<usize> = Vec::new();
    'outer: for (i, a) in active.iter().enumerate() {
        for &j in &a.support {
            if used[j] {
                continue 'outer;
            }
        }
        for &j in &a.support {
            used[j] = true;
        }
        family.push(i);
    }
    let mut exact_product = BigRational::one();
    for &i in &family {
        exact_product *= BigRational::one() - &active[i].violation_probability;
    }
    if exact_product <= *epsilon {
        ctx.trace.push(TraceRecord::with_epsilon(
            "disjoint-collapse",
            format!(
                "depth {depth}: {} disjoint conditions bound the density by {}",
                family.len(),
                exact_product
            ),
            epsilon,
        ));
        return Ok((vec![canonical_empty_multi(p, n)], exact_product));
    }

    // Branch over assignments of the family's support union Z ⊆ coordinates.
    let z: Vec<usize> = {
        let mut z = Vec::new();
        for (j, &u) in used.iter().enumerate() {
            if u {
                z.push(j);
            }
        }
        z
    };
    let branch_count = (ctx.alphabet.len() as u128)
        .checked_pow(z.len() as u32)
        .unwrap_or(u128::MAX);
    if branch_count > ctx.budget.max_classes as u128 {
        return Err(Error::budget(format!(
            "branching over |S|^{} = {branch_count} assignments exceeds the class cap",
            z.len()
        )));
    }
    let sub_eps = epsilon / BigRational::from_integer(BigInt::from(branch_count as u64));
    ctx.trace.push(TraceRecord::with_epsilon(
        "assignment-branch",
        format!(
            "depth {depth}: s = {s_max}, {} disjoint, branching over {} assignments of {} coordinates",
            family.len(),
            branch_count,
            z.len()
        ),
        &sub_eps,
    ));

    // Each branch occupies a slice of probability |S|^{−|Z|}, and its
    // residual defect lives inside that slice.
    let slice_probability = rat_pow(&rat(1, ctx.alphabet.len() as i64), z.len());
    let mut out = Vec::new();
    let mut bound = BigRational::zero();
    let mut assignment_idx = vec![0usize; z.len()];
    loop {
        let assignment: Vec<(usize, u64)> = z
            .iter()
            .zip(&assignment_idx)
            .map(|(&j, &si)| (j, ctx.alphabet.elements()[si]))
            .collect();
        let substituted: Vec<MultiCondition> = active
            .iter()
            .map(|a| {
                MultiCondition::new(a.cond.map.substitute(&assignment), a.cond.allowed.clone())
            })
            .collect::<Result<_>>()?;
        let (sub_conds, sub_bound) = affine_rec(ctx, &substituted, &sub_eps, depth + 1)?;
        bound += &slice_probability * sub_bound;
        for sc in sub_conds {
            out.push(wrap_assignment_condition(p, n, &z, &assignment, &sc, ctx.budget)?);
        }
        if out.len() > ctx.budget.max_output {
            return Err(Error::budget("output condition cap exceeded"));
        }
        // Next assignment.
        let mut j = 0;
        while j < z.len() {
            assignment_idx[j] += 1;
            if assignment_idx[j] == ctx.alphabet.len() {
                assignment_idx[j] = 0;
                j += 1;
            } else {
                break;
            }
        }
        if j == z.len() {
            break;
        }
    }
    Ok((out, bound))
}

/// Wraps a condition produced under a fixed assignment y of the coordinates
/// in Z into an unconditional one: ((x_Z, θ), F) with F accepting every
/// tuple whose Z-projection differs from y, and θ's allowed values on the
/// rest.  On the slice x_Z = y it coincides with the inner condition.
fn wrap_assignment_condition(
    p: PrimeModulus,
    n: usize,
    z: &[usize],
    assignment: &[(usize, u64)],
    inner: &MultiCondition,
    budget: &Budget,
) -> Result<MultiCondition> {
    let mut rows: Vec<LinearForm> = z
        .iter()
        .map(|&j| LinearForm::unit(p, n, j, 1))
        .collect();
    rows.extend(inner.map.rows().iter().cloned());
    let mut offset = vec![0u64; z.len()];
    offset.extend(inner.map.offset().iter().copied());
    let map = AffineMultiMap::new(rows, offset)?;

    let pv = p.value();
    let k_inner = inner.map.k();
    let y: Vec<u64> = assignment.iter().map(|&(_, v)| v).collect();
    let total: u128 = (pv as u128)
        .checked_pow((z.len() + k_inner) as u32)
        .unwrap_or(u128::MAX);
    if total > budget.state_cap as u128 {
        return Err(Error::budget(
            "wrapped allowed set exceeds the state cap",
        ));
    }
    let mut allowed = std::collections::BTreeSet::new();
    // All tuples with v ≠ y, any w; plus (y, w) for w allowed by the inner
    // condition.
    let mut v = vec![0u64; z.len()];
    loop {
        if v == y {
            for w in &inner.allowed {
                let mut t = v.clone();
                t.extend(w.iter().copied());
                allowed.insert(t);
            }
        } else {
            let mut w = vec![0u64; k_inner];
            loop {
                let mut t = v.clone();
                t.extend(w.iter().copied());
                allowed.insert(t);
                let mut j = 0;
                while j < k_inner {
                    w[j] += 1;
                    if w[j] == pv {
                        w[j] = 0;
                        j += 1;
                    } else {
                        break;
                    }
                }
                if j == k_inner {
                    break;
                }
            }
        }
        let mut j = 0;
        while j < z.len() {
            v[j] += 1;
            if v[j] == pv {
                v[j] = 0;
                j += 1;
            } else {
                break;
            }
        }
        if j == z.len() {
            break;
        }
    }
    MultiCondition::new(map, allowed)
}

/// Compresses a set of multi-dimensional conditions whose affine maps have
/// bounded support, by induction on the support bound: either a disjointly
/// supported subfamily already pushes the density under ε, or all conditions
/// restrict to support one smaller on each assignment of the subfamily's
/// support union.  Scalar inputs are wrapped as 1-dimensional conditions.
pub fn compress_bounded_support_affine(
    set: &ConditionSet,
    epsilon: &BigRational,
    budget: &Budget,
) -> Result<ApproximationResult> {
    epsilon_in_range(epsilon)?;
    if set.alphabet().len() < 2 {
        return Err(Error::invalid(
            "affine compression requires an alphabet with at least 2 elements",
        ));
    }
    let conds: Vec<MultiCondition> = match set.conditions() {
        Conditions::Multi(list) => list.clone(),
        Conditions::Scalar(list) => list
            .iter()
            .map(|c| {
                MultiCondition::new(
                    AffineMultiMap::linear(vec![c.form.clone()])?,
                    c.allowed.iter().map(|r| vec![r]).collect(),
                )
            })
            .collect::<Result<_>>()?,
    };
    let mut ctx = AffineCtx {
        alphabet: set.alphabet(),
        budget,
        trace: Vec::new(),
    };
    let (out, bound) = affine_rec(&mut ctx, &conds, epsilon, 0)?;
    let output = ConditionSet::multi(set.alphabet().clone(), set.n(), out)?;
    ApproximationResult {
        output,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: bound,
        trace: ctx.trace,
    }
    .checked()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{
        satisfying_density, verify_internal_approximation, DensityMethod, DensityResult,
    };

    fn p(v: u64) -> PrimeModulus {
        PrimeModulus::new(v).unwrap()
    }

    fn exact(d: DensityResult) -> BigRational {
        match d {
            DensityResult::Exact(v) => v,
            _ => panic!("expected exact density"),
        }
    }

    #[test]
    fn basic_keeps_small_independent_families() {
        // Two independent conditions at ε = 0.2: threshold 3·ln 5 ≈ 4.8 not
        // exceeded, output identical to the normalized input.
        let p3 = p(3);
        let s = Alphabet::full(p3);
        let set = ConditionSet::scalar(
            s,
            4,
            vec![
                ModPCondition::new(
                    LinearForm::unit(p3, 4, 0, 1),
                    ResidueSet::from_residues(p3, [0]).unwrap(),
                ),
                ModPCondition::new(
                    LinearForm::unit(p3, 4, 1, 1),
                    ResidueSet::from_residues(p3, [0, 1]).unwrap(),
                ),
            ],
        )
        .unwrap();
        let result = compress_basic(&set, &rat(1, 5)).unwrap();
        assert_eq!(result.output.scalar_conditions().unwrap().len(), 2);
        assert!(result.proof_defect_bound.is_zero());
        let v = verify_internal_approximation(
            &set,
            &result.output,
            &rat(1, 5),
            DensityMethod::Enumerate,
            &OracleCaps::default(),
        )
        .unwrap();
        assert!(v.accepted);
        assert!(exact(v.defect).is_zero());
    }

    #[test]
    fn basic_collapses_large_independent_families() {
        // Twelve independent single-coordinate conditions at ε = 0.01:
        // 12 > 2·ln 100 ≈ 9.2, so the canonical empty condition is emitted,
        // and the true density 2^{−12} is under ε.
        let p2 = p(2);
        let s = Alphabet::full(p2);
        let conds: Vec<ModPCondition> = (0..12)
            .map(|i| {
                ModPCondition::new(
                    LinearForm::unit(p2, 12, i, 1),
                    ResidueSet::from_residues(p2, [0]).unwrap(),
                )
            })
            .collect();
        let set = ConditionSet::scalar(s, 12, conds).unwrap();
        let eps = rat(1, 100);
        let result = compress_basic(&set, &eps).unwrap();
        let out = result.output.scalar_conditions().unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_canonical_empty());
        assert!(result.proof_defect_bound <= eps);
        let v = verify_internal_approximation(
            &set,
            &result.output,
            &eps,
            DensityMethod::Dp,
            &OracleCaps::default(),
        )
        .unwrap();
        assert!(v.accepted);
    }

    #[test]
    fn sunflower_collapse_matches_hand_computation() {
        // Center x1, petals x2..x6 over S={0,1} ⊂ 𝔽₃, E = {0,1}: petal
        // values V = {0,1}, so H = {0}; each q_t = 1/2 and the exact bound
        // is 2·(1/2)^5 = 1/16.
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let n = 6;
        let center = LinearForm::unit(p3, n, 0, 1);
        let petals: Vec<LinearForm> = (1..n).map(|i| LinearForm::unit(p3, n, i, 1)).collect();
        let e = ResidueSet::from_residues(p3, [0, 1]).unwrap();
        let collapse =
            compress_symmetric_sunflower(&center, &petals, e, &s, &OracleCaps::default()).unwrap();
        assert_eq!(collapse.condition.form, center);
        assert_eq!(collapse.condition.allowed.residues(), vec![0]);
        // Only t = 1 contributes: t = 0 lies in H and t = 2 is not attained
        // by the center on S^n.
        assert_eq!(collapse.exact_defect_bound, rat(1, 32));
        // Worst-case closed form: 3·(3/4)^5.
        assert_eq!(
            collapse.worst_case_defect_bound,
            rat(3, 1) * rat_pow(&rat(3, 4), 5)
        );
    }

    #[test]
    fn sunflower_rejects_bad_families() {
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let center = LinearForm::unit(p3, 3, 0, 1);
        let overlapping = vec![
            LinearForm::new(p3, vec![0, 1, 1]),
            LinearForm::new(p3, vec![0, 1, 0]),
        ];
        let e = ResidueSet::from_residues(p3, [0]).unwrap();
        assert!(compress_symmetric_sunflower(&center, &overlapping, e, &s, &OracleCaps::default())
            .is_err());
        let asymmetric = vec![
            LinearForm::new(p3, vec![0, 1, 0]),
            LinearForm::new(p3, vec![0, 0, 2]),
        ];
        assert!(compress_symmetric_sunflower(&center, &asymmetric, e, &s, &OracleCaps::default())
            .is_err());
    }

    #[test]
    fn ball_compression_of_the_prototype_family() {
        // The k = 6 prototype: center x1, offsets x2..x6, E = {0,1},
        // ε = 1/10.  The maximal sunflower is the whole family and its
        // exact bound 1/32 ≤ ε, so the output is the single condition
        // (x1, {0}); oracle defect is 33/64 − 1/2 = 1/64.
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let n = 6;
        let center = LinearForm::unit(p3, n, 0, 1);
        let offsets: Vec<LinearForm> = (1..n).map(|i| LinearForm::unit(p3, n, i, 1)).collect();
        let e = ResidueSet::from_residues(p3, [0, 1]).unwrap();
        let eps = rat(1, 10);
        let result =
            compress_symmetric_ball(&center, &offsets, e, &s, &eps, &Budget::default()).unwrap();
        let out = result.output.scalar_conditions().unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].form, center);
        assert_eq!(out[0].allowed.residues(), vec![0]);
        assert_eq!(result.proof_defect_bound, rat(1, 32));

        let original = ConditionSet::scalar(
            s,
            n,
            (1..n)
                .map(|i| {
                    ModPCondition::new(
                        center.add(&LinearForm::unit(p3, n, i, 1)),
                        ResidueSet::from_residues(p3, [0, 1]).unwrap(),
                    )
                })
                .collect(),
        )
        .unwrap();
        let v = verify_internal_approximation(
            &original,
            &result.output,
            &eps,
            DensityMethod::Enumerate,
            &OracleCaps::default(),
        )
        .unwrap();
        assert!(v.accepted);
        assert_eq!(exact(v.defect), rat(1, 64));
    }

    #[test]
    fn ball_with_duplicates_reaches_a_leaf() {
        // Duplicated offset x2 about center x1: the sunflower has one petal,
        // whose exact bound exceeds small ε, so the recursion partitions and
        // bottoms out in the exact single condition (x1+x2, E).
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let center = LinearForm::unit(p3, 2, 0, 1);
        let offset = LinearForm::unit(p3, 2, 1, 1);
        let e = ResidueSet::from_residues(p3, [0]).unwrap();
        let eps = rat(1, 1000);
        let result = compress_symmetric_ball(
            &center,
            &[offset.clone(), offset.clone()],
            e,
            &s,
            &eps,
            &Budget::default(),
        )
        .unwrap();
        let out = result.output.scalar_conditions().unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].form, center.add(&offset));
        assert!(result.proof_defect_bound.is_zero());
    }

    #[test]
    fn mod_p_compression_of_independent_coordinates() {
        // Twenty independent single-coordinate conditions over S={0,1} ⊂ 𝔽₂
        // at ε = 0.01: the compressor must emit the canonical empty
        // condition (the true density 2^{−20} is far below ε).
        let p2 = p(2);
        let s = Alphabet::new(p2, vec![0, 1]).unwrap();
        let n = 20;
        let conds: Vec<ModPCondition> = (0..n)
            .map(|i| {
                ModPCondition::new(
                    LinearForm::unit(p2, n, i, 1),
                    ResidueSet::from_residues(p2, [0]).unwrap(),
                )
            })
            .collect();
        let set = ConditionSet::scalar(s, n, conds).unwrap();
        let eps = rat(1, 100);
        let result = compress_mod_p(&set, &eps, &Budget::default()).unwrap();
        let out = result.output.scalar_conditions().unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_canonical_empty());
        assert!(result.proof_defect_bound <= eps);
        let caps = OracleCaps {
            state_cap: 10_000_000,
            enumeration_cap: 10_000_000,
        };
        let v =
            verify_internal_approximation(&set, &result.output, &eps, DensityMethod::Dp, &caps)
                .unwrap();
        assert!(v.accepted);
    }

    #[test]
    fn mod_p_single_point_alphabet() {
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![1]).unwrap();
        let sat = ConditionSet::scalar(
            s.clone(),
            2,
            vec![ModPCondition::new(
                LinearForm::new(p3, vec![1, 1]),
                ResidueSet::from_residues(p3, [2]).unwrap(),
            )],
        )
        .unwrap();
        let result = compress_mod_p(&sat, &rat(1, 10), &Budget::default()).unwrap();
        assert!(result.output.is_empty()); // 1+1=2 ∈ E: everything satisfies
        let unsat = ConditionSet::scalar(
            s,
            2,
            vec![ModPCondition::new(
                LinearForm::new(p3, vec![1, 1]),
                ResidueSet::from_residues(p3, [0]).unwrap(),
            )],
        )
        .unwrap();
        let result = compress_mod_p(&unsat, &rat(1, 10), &Budget::default()).unwrap();
        let out = result.output.scalar_conditions().unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].is_canonical_empty());
    }

    #[test]
    fn mod_p_outputs_verify_on_random_instances() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..25 {
            let pv = [2u64, 3, 5][rng.gen_range(0..3)];
            let pm = p(pv);
            let n = rng.gen_range(2..=6);
            let mask = loop {
                let m = rng.gen_range(1..(1u64 << pv));
                if m.count_ones() >= 2 {
                    break m;
                }
            };
            let elements: Vec<u64> = (0..pv).filter(|&e| mask >> e & 1 == 1).collect();
            let s = Alphabet::new(pm, elements).unwrap();
            let m = rng.gen_range(1..=5);
            let mut conds = Vec::new();
            for _ in 0..m {
                let coeffs: Vec<u64> = (0..n).map(|_| rng.gen_range(0..pv)).collect();
                let emask = rng.gen_range(1..(1u64 << pv));
                conds.push(ModPCondition::new(
                    LinearForm::new(pm, coeffs),
                    ResidueSet::from_residues(pm, (0..pv).filter(|&r| emask >> r & 1 == 1))
                        .unwrap(),
                ));
            }
            let set = ConditionSet::scalar(s, n, conds).unwrap();
            for eps in [rat(1, 5), rat(1, 20)] {
                let result = compress_mod_p(&set, &eps, &Budget::default()).unwrap();
                assert!(result.proof_defect_bound <= eps, "trial {trial}");
                let v = verify_internal_approximation(
                    &set,
                    &result.output,
                    &eps,
                    DensityMethod::Enumerate,
                    &OracleCaps::default(),
                )
                .unwrap();
                assert!(
                    v.accepted,
                    "trial {trial}: defect {:?} containment {}",
                    v.defect.value(),
                    v.containment_ok
                );
                // The proof-side bound must dominate the oracle defect.
                assert!(
                    exact(v.defect) <= result.proof_defect_bound,
                    "trial {trial}: oracle defect exceeds the certificate"
                );
            }
        }
    }

    #[test]
    fn combine_preserves_the_satisfying_set() {
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let set = ConditionSet::scalar(
            s.clone(),
            3,
            vec![
                ModPCondition::new(
                    LinearForm::new(p3, vec![1, 1, 0]),
                    ResidueSet::from_residues(p3, [0, 1]).unwrap(),
                ),
                ModPCondition::new(
                    LinearForm::new(p3, vec![0, 1, 2]),
                    ResidueSet::from_residues(p3, [2]).unwrap(),
                ),
            ],
        )
        .unwrap();
        let combined = combine_to_single_condition(&set, &Budget::default()).unwrap();
        assert_eq!(combined.multi_conditions().unwrap().len(), 1);
        let d1 = exact(
            satisfying_density(&set, DensityMethod::Enumerate, &OracleCaps::default()).unwrap(),
        );
        let d2 = exact(
            satisfying_density(&combined, DensityMethod::Enumerate, &OracleCaps::default())
                .unwrap(),
        );
        assert_eq!(d1, d2);
        // Equality of satisfying sets: containment in both directions with
        // zero defect.
        for (a, b) in [(&set, &combined), (&combined, &set)] {
            let v = verify_internal_approximation(
                a,
                b,
                &BigRational::zero(),
                DensityMethod::Enumerate,
                &OracleCaps::default(),
            )
            .unwrap();
            assert!(v.containment_ok);
            assert!(exact(v.defect).is_zero());
        }
    }

    #[test]
    fn affine_collapse_of_disjoint_pairs() {
        // Twelve disjoint pair-sum conditions over S={0,1} ⊂ 𝔽₂ at ε=0.05:
        // each holds with probability 1/2, so the exact product (1/2)^12 is
        // far below ε and the canonical empty condition is emitted.
        let p2 = p(2);
        let s = Alphabet::new(p2, vec![0, 1]).unwrap();
        let n = 24;
        let conds: Vec<ModPCondition> = (0..12)
            .map(|i| {
                let mut coeffs = vec![0u64; n];
                coeffs[2 * i] = 1;
                coeffs[2 * i + 1] = 1;
                ModPCondition::new(
                    LinearForm::new(p2, coeffs),
                    ResidueSet::from_residues(p2, [0]).unwrap(),
                )
            })
            .collect();
        let set = ConditionSet::scalar(s, n, conds).unwrap();
        let eps = rat(1, 20);
        let result = compress_bounded_support_affine(&set, &eps, &Budget::default()).unwrap();
        let out = result.output.multi_conditions().unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].allowed.is_empty());
        assert_eq!(result.proof_defect_bound, rat_pow(&rat(1, 2), 12));
    }

    #[test]
    fn affine_recursion_with_overlapping_supports() {
        // (x1+x2 ∈ {0}) and (x2+x3 ∈ {0}) over S={0,1} ⊂ 𝔽₃ share x2, so
        // the recursion must branch on assignments; the result must be a
        // faithful approximation at tiny ε (hence exact).
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let set = ConditionSet::scalar(
            s,
            3,
            vec![
                ModPCondition::new(
                    LinearForm::new(p3, vec![1, 1, 0]),
                    ResidueSet::from_residues(p3, [0]).unwrap(),
                ),
                ModPCondition::new(
                    LinearForm::new(p3, vec![0, 1, 1]),
                    ResidueSet::from_residues(p3, [0]).unwrap(),
                ),
            ],
        )
        .unwrap();
        let eps = rat(1, 1000);
        let result = compress_bounded_support_affine(&set, &eps, &Budget::default()).unwrap();
        let v = verify_internal_approximation(
            &set,
            &result.output,
            &eps,
            DensityMethod::Enumerate,
            &OracleCaps::default(),
        )
        .unwrap();
        assert!(v.accepted, "defect {:?}", v.defect.value());
    }

    #[test]
    fn union_adds_bounds_and_targets() {
        let p3 = p(3);
        let s = Alphabet::new(p3, vec![0, 1]).unwrap();
        let mk = |coeff: usize| {
            ApproximationResult {
                output: ConditionSet::scalar(
                    s.clone(),
                    2,
                    vec![ModPCondition::new(
                        LinearForm::unit(p3, 2, coeff, 1),
                        ResidueSet::from_residues(p3, [0]).unwrap(),
                    )],
                )
                .unwrap(),
                epsilon_target: rat(1, 10),
                proof_defect_bound: rat(1, 100),
                trace: vec![],
            }
        };
        let u = union_approximations(vec![mk(0), mk(1)]).unwrap();
        assert_eq!(u.output.scalar_conditions().unwrap().len(), 2);
        assert_eq!(u.epsilon_target, rat(1, 5));
        assert_eq!(u.proof_defect_bound, rat(1, 50));
    }
}
