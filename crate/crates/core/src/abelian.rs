//! Homomorphic conditions over finite Abelian groups.
//!
//! A condition here is a pair (φ, E) of a homomorphism φ: Gⁿ → H between
//! finite Abelian groups and an allowed set E ⊆ H; a point x ∈ Sⁿ (for an
//! alphabet S ⊆ G) satisfies it when φ(x) ∈ E.  The module provides
//!
//! * group arithmetic, characters, subgroups and homomorphisms with exact
//!   integer phase computations;
//! * structural analysis: independence of map families, relation subgroups
//!   and their annihilators, supports and coefficient distributions with
//!   respect to an alphabet, and exact value distributions;
//! * an exact oracle (enumeration and convolution backed) for densities and
//!   for verifying internal approximations of group condition sets;
//! * compressors that replace a set of conditions by an internally
//!   ε-approximating set of boundedly many conditions, both for the full
//!   alphabet S = G and for restricted alphabets S ⊊ G.

use std::collections::{BTreeMap, BTreeSet};

use num::bigint::BigUint;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compress::{epsilon_in_range, rat, rat_pow, Budget, TraceRecord};
use crate::error::{Error, Result};
use crate::oracle::{
    enumeration_size, ratio, ApproximationVerdict, DensityMethod, DensityResult,
    ExactDistribution, OracleCaps,
};

/// Largest supported group order for either the domain or the target group.
pub const MAX_GROUP_ORDER: u64 = 64;

/// An element of a group given as residues, one per cyclic factor.
pub type GroupElement = Vec<u64>;

// ---------------------------------------------------------------------------
// Groups
// ---------------------------------------------------------------------------

/// A finite Abelian group presented as a product of cyclic factors
/// Z_{m_1} × … × Z_{m_d}.  Elements are addressed by mixed-radix indices
/// with the first factor least significant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FiniteAbelianGroup {
    orders: Vec<u64>,
    order: u64,
    exponent: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    if a == 0 || b == 0 {
        0
    } else {
        a / gcd(a, b) * b
    }
}

impl FiniteAbelianGroup {
    /// Builds the product of the given cyclic orders (each ≥ 2).  An empty
    /// list gives the trivial group.
    pub fn new(orders: Vec<u64>) -> Result<Self> {
        let mut order = 1u64;
        let mut exponent = 1u64;
        for &m in &orders {
            if m < 2 {
                return Err(Error::invalid("cyclic factors must have order at least 2"));
            }
            order = order
                .checked_mul(m)
                .ok_or_else(|| Error::invalid("group order overflows"))?;
            if order > MAX_GROUP_ORDER {
                return Err(Error::invalid(format!(
                    "group order exceeds the supported maximum {MAX_GROUP_ORDER}"
                )));
            }
            exponent = lcm(exponent, m);
        }
        Ok(FiniteAbelianGroup {
            orders,
            order,
            exponent,
        })
    }

    /// The trivial group.
    pub fn trivial() -> Self {
        FiniteAbelianGroup {
            orders: Vec::new(),
            order: 1,
            exponent: 1,
        }
    }

    pub fn factors(&self) -> &[u64] {
        &self.orders
    }

    pub fn order(&self) -> u64 {
        self.order
    }

    pub fn exponent(&self) -> u64 {
        self.exponent
    }

    pub fn is_trivial(&self) -> bool {
        self.order == 1
    }

    /// Encodes residues (one per factor) as a mixed-radix index.
    pub fn encode(&self, residues: &[u64]) -> Result<u64> {
        if residues.len() != self.orders.len() {
            return Err(Error::invalid("wrong number of residues for the group"));
        }
        let mut idx = 0u64;
        for (r, m) in residues.iter().zip(&self.orders).rev() {
            if r >= m {
                return Err(Error::invalid("residue out of range for its factor"));
            }
            idx = idx * m + r;
        }
        Ok(idx)
    }

    /// Decodes a mixed-radix index into residues, one per factor.
    pub fn decode(&self, mut index: u64) -> GroupElement {
        let mut out = Vec::with_capacity(self.orders.len());
        for &m in &self.orders {
            out.push(index % m);
            index /= m;
        }
        out
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        let mut idx = 0u64;
        let (mut a, mut b) = (a, b);
        let mut mult = 1u64;
        for &m in &self.orders {
            let ra = a % m;
            let rb = b % m;
            idx += ((ra + rb) % m) * mult;
            mult *= m;
            a /= m;
            b /= m;
        }
        idx
    }

    pub fn neg(&self, a: u64) -> u64 {
        let mut idx = 0u64;
        let mut a = a;
        let mut mult = 1u64;
        for &m in &self.orders {
            let ra = a % m;
            idx += ((m - ra) % m) * mult;
            mult *= m;
            a /= m;
        }
        idx
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        self.add(a, self.neg(b))
    }

    /// t·a for a non-negative integer t.
    pub fn scale(&self, a: u64, t: u64) -> u64 {
        let mut idx = 0u64;
        let mut a = a;
        let mut mult = 1u64;
        for &m in &self.orders {
            let ra = a % m;
            idx += (ra * (t % m) % m) * mult;
            mult *= m;
            a /= m;
        }
        idx
    }

    /// Order of the element with the given index: per factor the residue
    /// ra has order m/gcd(m, ra), and the element order is their lcm.
    pub fn element_order(&self, a: u64) -> u64 {
        let mut ord = 1u64;
        let mut a = a;
        for &m in &self.orders {
            let ra = a % m;
            ord = lcm(ord, m / gcd(m, ra));
            a /= m;
        }
        ord
    }

    /// Exact character pairing: the phase of χ_a at y, in units of
    /// 1/exponent.  χ_a(y) = exp(2πi Σ_l a_l y_l / m_l), so the phase is
    /// Σ_l a_l y_l (exponent/m_l) modulo the exponent.
    pub fn phase(&self, a: u64, y: u64) -> u64 {
        let m = self.exponent;
        let mut total = 0u64;
        let (mut a, mut y) = (a, y);
        for &ml in &self.orders {
            let ra = a % ml;
            let ry = y % ml;
            total = (total + ra * ry % ml * (m / ml)) % m;
            a /= ml;
            y /= ml;
        }
        total
    }

    /// Character value χ_a(y) as a complex number (re, im); for tests and
    /// floating-point bounds only — all decisions use exact phases.
    pub fn character_value(&self, a: u64, y: u64) -> (f64, f64) {
        let ph = self.phase(a, y) as f64 / self.exponent as f64;
        let ang = 2.0 * std::f64::consts::PI * ph;
        (ang.cos(), ang.sin())
    }

    /// All element indices, in order.
    pub fn elements(&self) -> impl Iterator<Item = u64> {
        0..self.order
    }
}

// ---------------------------------------------------------------------------
// Characters
// ---------------------------------------------------------------------------

/// A character of a group, addressed by the index of its dual element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Character {
    pub dual_index: u64,
}

impl Character {
    pub fn new(h: &FiniteAbelianGroup, dual_index: u64) -> Result<Self> {
        if dual_index >= h.order() {
            return Err(Error::invalid("character index out of range"));
        }
        Ok(Character { dual_index })
    }

    pub fn is_trivial(&self) -> bool {
        self.dual_index == 0
    }

    /// Phase at y in units of 1/exponent.
    pub fn phase(&self, h: &FiniteAbelianGroup, y: u64) -> u64 {
        h.phase(self.dual_index, y)
    }
}

// ---------------------------------------------------------------------------
// Subsets and subgroups
// ---------------------------------------------------------------------------

/// A subset of a group of order ≤ 64, stored as a bitmask over element
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupSubset {
    mask: u64,
}

impl GroupSubset {
    pub fn empty() -> Self {
        GroupSubset { mask: 0 }
    }

    pub fn full(h: &FiniteAbelianGroup) -> Self {
        if h.order() == 64 {
            GroupSubset { mask: u64::MAX }
        } else {
            GroupSubset {
                mask: (1u64 << h.order()) - 1,
            }
        }
    }

    pub fn from_elements<I: IntoIterator<Item = u64>>(
        h: &FiniteAbelianGroup,
        elems: I,
    ) -> Result<Self> {
        let mut mask = 0u64;
        for e in elems {
            if e >= h.order() {
                return Err(Error::invalid("subset element out of range"));
            }
            mask |= 1u64 << e;
        }
        Ok(GroupSubset { mask })
    }

    pub fn contains(&self, e: u64) -> bool {
        e < 64 && (self.mask >> e) & 1 == 1
    }

    pub fn insert(&mut self, e: u64) {
        self.mask |= 1u64 << e;
    }

    pub fn len(&self) -> u32 {
        self.mask.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn elements(&self) -> Vec<u64> {
        (0..64).filter(|&e| (self.mask >> e) & 1 == 1).collect()
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    /// {e + t : e in self}.
    pub fn shift(&self, h: &FiniteAbelianGroup, t: u64) -> GroupSubset {
        let mut out = GroupSubset::empty();
        for e in self.elements() {
            out.insert(h.add(e, t));
        }
        out
    }

    /// Minkowski sum {a + b}.
    pub fn minkowski(&self, h: &FiniteAbelianGroup, other: &GroupSubset) -> GroupSubset {
        let mut out = GroupSubset::empty();
        for a in self.elements() {
            for b in other.elements() {
                out.insert(h.add(a, b));
            }
        }
        out
    }

    pub fn intersection(&self, other: &GroupSubset) -> GroupSubset {
        GroupSubset {
            mask: self.mask & other.mask,
        }
    }

    pub fn is_subset_of(&self, other: &GroupSubset) -> bool {
        self.mask & !other.mask == 0
    }
}

/// A subgroup, stored as a verified-closed subset together with its
/// element list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subgroup {
    set: GroupSubset,
    elements: Vec<u64>,
}

impl Subgroup {
    /// Builds a subgroup from an element list, checking closure.
    pub fn from_elements(h: &FiniteAbelianGroup, elems: &[u64]) -> Result<Self> {
        let set = GroupSubset::from_elements(h, elems.iter().copied())?;
        if !set.contains(0) {
            return Err(Error::invalid("a subgroup must contain the identity"));
        }
        for &a in &set.elements() {
            for &b in &set.elements() {
                if !set.contains(h.add(a, b)) {
                    return Err(Error::invalid("element list is not closed under addition"));
                }
            }
        }
        Ok(Subgroup {
            elements: set.elements(),
            set,
        })
    }

    /// The trivial subgroup {0}.
    pub fn trivial() -> Self {
        let mut set = GroupSubset::empty();
        set.insert(0);
        Subgroup {
            set,
            elements: vec![0],
        }
    }

    pub fn full(h: &FiniteAbelianGroup) -> Self {
        let set = GroupSubset::full(h);
        Subgroup {
            elements: set.elements(),
            set,
        }
    }

    /// The subgroup generated by the given elements (closure by search).
    pub fn generated<I: IntoIterator<Item = u64>>(h: &FiniteAbelianGroup, gens: I) -> Self {
        let mut set = GroupSubset::empty();
        set.insert(0);
        let mut queue: Vec<u64> = vec![0];
        let gens: Vec<u64> = gens.into_iter().collect();
        while let Some(a) = queue.pop() {
            for &g in &gens {
                let b = h.add(a, g);
                if !set.contains(b) {
                    set.insert(b);
                    queue.push(b);
                }
            }
        }
        Subgroup {
            elements: set.elements(),
            set,
        }
    }

    /// Elements of `within` on which the character is trivial.
    pub fn kernel_within(
        h: &FiniteAbelianGroup,
        chi: Character,
        within: &Subgroup,
    ) -> Subgroup {
        let mut set = GroupSubset::empty();
        for &e in &within.elements {
            if chi.phase(h, e) == 0 {
                set.insert(e);
            }
        }
        Subgroup {
            elements: set.elements(),
            set,
        }
    }

    pub fn contains(&self, e: u64) -> bool {
        self.set.contains(e)
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_trivial(&self) -> bool {
        self.elements.len() == 1
    }

    pub fn set(&self) -> &GroupSubset {
        &self.set
    }

    /// Exponent of the subgroup: lcm of its element orders.
    pub fn exponent(&self, h: &FiniteAbelianGroup) -> u64 {
        let mut e = 1u64;
        for &a in &self.elements {
            let mut t = 1u64;
            let mut acc = a;
            while acc != 0 {
                acc = h.add(acc, a);
                t += 1;
            }
            e = lcm(e, t);
        }
        e
    }
}

/// An alphabet S ⊆ G: the per-coordinate value set conditions are
/// restricted to.  Non-empty; elements stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupAlphabet {
    elements: Vec<u64>,
}

impl GroupAlphabet {
    pub fn new(g: &FiniteAbelianGroup, mut elements: Vec<u64>) -> Result<Self> {
        elements.sort_unstable();
        elements.dedup();
        if elements.is_empty() {
            return Err(Error::invalid("alphabet must be non-empty"));
        }
        if elements.iter().any(|&e| e >= g.order()) {
            return Err(Error::invalid("alphabet element out of range"));
        }
        Ok(GroupAlphabet { elements })
    }

    pub fn full(g: &FiniteAbelianGroup) -> Self {
        GroupAlphabet {
            elements: (0..g.order()).collect(),
        }
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_full(&self, g: &FiniteAbelianGroup) -> bool {
        self.elements.len() as u64 == g.order()
    }
}

// ---------------------------------------------------------------------------
// Homomorphisms and maps
// ---------------------------------------------------------------------------

/// A homomorphism G → H, stored by its images of the cyclic generators of
/// G.  Image g_j of the j-th generator must satisfy m_j · g_j = 0 in H.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupHom {
    generator_images: Vec<u64>,
}

impl GroupHom {
    pub fn new(
        g: &FiniteAbelianGroup,
        h: &FiniteAbelianGroup,
        generator_images: Vec<u64>,
    ) -> Result<Self> {
        if generator_images.len() != g.factors().len() {
            return Err(Error::invalid(
                "need one generator image per cyclic factor of the domain",
            ));
        }
        for (&img, &m) in generator_images.iter().zip(g.factors()) {
            if img >= h.order() {
                return Err(Error::invalid("generator image out of range"));
            }
            if h.scale(img, m) != 0 {
                return Err(Error::invalid(format!(
                    "generator image {img} is incompatible with factor order {m}"
                )));
            }
        }
        Ok(GroupHom { generator_images })
    }

    pub fn zero(g: &FiniteAbelianGroup) -> Self {
        GroupHom {
            generator_images: vec![0; g.factors().len()],
        }
    }

    pub fn generator_images(&self) -> &[u64] {
        &self.generator_images
    }

    pub fn is_zero(&self) -> bool {
        self.generator_images.iter().all(|&i| i == 0)
    }

    /// φ(x) for the element with index x.
    pub fn eval(&self, g: &FiniteAbelianGroup, h: &FiniteAbelianGroup, x: u64) -> u64 {
        let mut out = 0u64;
        let mut x = x;
        for (&img, &m) in self.generator_images.iter().zip(g.factors()) {
            out = h.add(out, h.scale(img, x % m));
            x /= m;
        }
        out
    }

    pub fn add(&self, h: &FiniteAbelianGroup, other: &GroupHom) -> GroupHom {
        GroupHom {
            generator_images: self
                .generator_images
                .iter()
                .zip(&other.generator_images)
                .map(|(&a, &b)| h.add(a, b))
                .collect(),
        }
    }

    pub fn sub(&self, h: &FiniteAbelianGroup, other: &GroupHom) -> GroupHom {
        GroupHom {
            generator_images: self
                .generator_images
                .iter()
                .zip(&other.generator_images)
                .map(|(&a, &b)| h.sub(a, b))
                .collect(),
        }
    }

    pub fn neg(&self, h: &FiniteAbelianGroup) -> GroupHom {
        GroupHom {
            generator_images: self.generator_images.iter().map(|&a| h.neg(a)).collect(),
        }
    }

    /// Values on the alphabet, in alphabet order.
    pub fn restriction_table(
        &self,
        g: &FiniteAbelianGroup,
        h: &FiniteAbelianGroup,
        alphabet: &GroupAlphabet,
    ) -> Vec<u64> {
        alphabet
            .elements()
            .iter()
            .map(|&s| self.eval(g, h, s))
            .collect()
    }
}

/// A homomorphism Gⁿ → H, stored as one coordinate homomorphism per slot:
/// φ(x) = Σ_j φ_j(x_j).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupMap {
    coords: Vec<GroupHom>,
}

impl GroupMap {
    pub fn new(coords: Vec<GroupHom>) -> Self {
        GroupMap { coords }
    }

    pub fn zero(g: &FiniteAbelianGroup, n: usize) -> Self {
        GroupMap {
            coords: vec![GroupHom::zero(g); n],
        }
    }

    pub fn coords(&self) -> &[GroupHom] {
        &self.coords
    }

    pub fn coord(&self, j: usize) -> &GroupHom {
        &self.coords[j]
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|c| c.is_zero())
    }

    pub fn eval(&self, g: &FiniteAbelianGroup, h: &FiniteAbelianGroup, x: &[u64]) -> u64 {
        debug_assert_eq!(x.len(), self.coords.len());
        let mut out = 0u64;
        for (c, &xi) in self.coords.iter().zip(x) {
            out = h.add(out, c.eval(g, h, xi));
        }
        out
    }

    pub fn add(&self, h: &FiniteAbelianGroup, other: &GroupMap) -> GroupMap {
        GroupMap {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a.add(h, b))
                .collect(),
        }
    }

    pub fn sub(&self, h: &FiniteAbelianGroup, other: &GroupMap) -> GroupMap {
        GroupMap {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a.sub(h, b))
                .collect(),
        }
    }

    /// Per-coordinate value tables on the alphabet.
    pub fn tables(
        &self,
        g: &FiniteAbelianGroup,
        h: &FiniteAbelianGroup,
        alphabet: &GroupAlphabet,
    ) -> Vec<Vec<u64>> {
        self.coords
            .iter()
            .map(|c| c.restriction_table(g, h, alphabet))
            .collect()
    }
}

/// Coordinates where the map is not constant on the alphabet.
pub fn support_wrt_s(
    map: &GroupMap,
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    alphabet: &GroupAlphabet,
) -> Vec<usize> {
    map.coords
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let t = c.restriction_table(g, h, alphabet);
            t.iter().any(|&v| v != t[0])
        })
        .map(|(j, _)| j)
        .collect()
}

/// Multiset of restriction tables over the support coordinates: the
/// coefficient distribution of the map with respect to the alphabet.
pub fn coefficient_distribution_wrt_s(
    map: &GroupMap,
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    alphabet: &GroupAlphabet,
) -> BTreeMap<Vec<u64>, usize> {
    let mut out: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for c in &map.coords {
        let t = c.restriction_table(g, h, alphabet);
        if t.iter().any(|&v| v != t[0]) {
            *out.entry(t).or_insert(0) += 1;
        }
    }
    out
}

/// Set of values the map attains on Sⁿ (Minkowski sum of the coordinate
/// value sets, including the constants contributed by off-support
/// coordinates).
pub fn value_set_wrt_s(
    map: &GroupMap,
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    alphabet: &GroupAlphabet,
) -> GroupSubset {
    let mut acc = GroupSubset::empty();
    acc.insert(0);
    for c in &map.coords {
        let mut coord_vals = GroupSubset::empty();
        for &s in alphabet.elements() {
            coord_vals.insert(c.eval(g, h, s));
        }
        acc = acc.minkowski(h, &coord_vals);
    }
    acc
}

// ---------------------------------------------------------------------------
// Conditions
// ---------------------------------------------------------------------------

/// A homomorphic condition: a map Gⁿ → H together with an allowed set
/// E ⊆ H.  A point satisfies it when the map value lies in E.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HCondition {
    pub map: GroupMap,
    pub allowed: GroupSubset,
}

impl HCondition {
    pub fn new(map: GroupMap, allowed: GroupSubset) -> Self {
        HCondition { map, allowed }
    }
}

/// The canonical never-satisfied condition: the zero map with an empty
/// allowed set.
pub fn canonical_empty_group_condition(g: &FiniteAbelianGroup, n: usize) -> HCondition {
    HCondition {
        map: GroupMap::zero(g, n),
        allowed: GroupSubset::empty(),
    }
}

/// A set of homomorphic conditions over a common domain Gⁿ, target H and
/// alphabet S ⊆ G.
#[derive(Debug, Clone)]
pub struct GroupConditionSet {
    domain: FiniteAbelianGroup,
    target: FiniteAbelianGroup,
    alphabet: GroupAlphabet,
    n: usize,
    conditions: Vec<HCondition>,
}

impl GroupConditionSet {
    pub fn new(
        domain: FiniteAbelianGroup,
        target: FiniteAbelianGroup,
        alphabet: GroupAlphabet,
        n: usize,
        conditions: Vec<HCondition>,
    ) -> Result<Self> {
        if alphabet.elements().iter().any(|&e| e >= domain.order()) {
            return Err(Error::invalid("alphabet element outside the domain group"));
        }
        for cond in &conditions {
            if cond.map.n() != n {
                return Err(Error::invalid("condition map has the wrong dimension"));
            }
            for c in cond.map.coords() {
                // Re-validate hom shape against the declared groups.
                GroupHom::new(&domain, &target, c.generator_images().to_vec())?;
            }
            if cond
                .allowed
                .elements()
                .iter()
                .any(|&e| e >= target.order())
            {
                return Err(Error::invalid("allowed set element outside the target group"));
            }
        }
        Ok(GroupConditionSet {
            domain,
            target,
            alphabet,
            n,
            conditions,
        })
    }

    pub fn domain(&self) -> &FiniteAbelianGroup {
        &self.domain
    }

    pub fn target(&self) -> &FiniteAbelianGroup {
        &self.target
    }

    pub fn alphabet(&self) -> &GroupAlphabet {
        &self.alphabet
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn conditions(&self) -> &[HCondition] {
        &self.conditions
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Whether the point (of element indices) satisfies every condition.
    pub fn satisfied_by(&self, x: &[u64]) -> bool {
        self.conditions
            .iter()
            .all(|c| c.allowed.contains(c.map.eval(&self.domain, &self.target, x)))
    }
}

// ---------------------------------------------------------------------------
// Characters of a subgroup
// ---------------------------------------------------------------------------

/// Representatives for the characters of a subgroup H₁ ⊆ H: one dual index
/// of H per distinct restriction to H₁, the trivial character first, then
/// in order of first occurrence.
#[derive(Debug, Clone)]
pub(crate) struct SubgroupDual {
    reps: Vec<u64>,
}

impl SubgroupDual {
    pub(crate) fn reps(&self) -> &[u64] {
        &self.reps
    }
}

pub(crate) fn subgroup_dual(h: &FiniteAbelianGroup, h1: &Subgroup) -> Result<SubgroupDual> {
    let mut seen: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut reps = Vec::new();
    for a in h.elements() {
        let phases: Vec<u64> = h1.elements().iter().map(|&y| h.phase(a, y)).collect();
        if seen.insert(phases) {
            reps.push(a);
        }
    }
    if reps.len() != h1.len() {
        return Err(Error::internal(
            "character restriction count does not match the subgroup order",
        ));
    }
    Ok(SubgroupDual { reps })
}

// ---------------------------------------------------------------------------
// Independence and relation subgroups
// ---------------------------------------------------------------------------

/// Outcome of an independence check for a family of maps Gⁿ → H: either
/// independent, or a witness tuple of dual indices whose character
/// combination is trivial on Gⁿ without all components being trivial.
#[derive(Debug, Clone)]
pub struct IndependenceReport {
    pub independent: bool,
    pub witness: Option<Vec<u64>>,
}

/// Checks that no non-trivial tuple of characters combines the maps into
/// the trivial character of Gⁿ.  Scans all |H|^k dual tuples in
/// lexicographic order and reports the first witness on failure.
pub fn is_independent(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    maps: &[GroupMap],
    caps: &OracleCaps,
) -> Result<IndependenceReport> {
    let k = maps.len();
    if k == 0 {
        return Ok(IndependenceReport {
            independent: true,
            witness: None,
        });
    }
    let mut states = 1u64;
    for _ in 0..k {
        states = states
            .checked_mul(h.order())
            .filter(|&s| s <= caps.state_cap)
            .ok_or_else(|| {
                Error::budget(format!(
                    "character tuple space exceeds the state cap {}",
                    caps.state_cap
                ))
            })?;
    }
    let n = maps[0].n();
    if maps.iter().any(|m| m.n() != n) {
        return Err(Error::invalid("maps must share the dimension"));
    }
    let mut tuple = vec![0u64; k];
    loop {
        // Advance the odometer (rightmost fastest), skipping the all-zero tuple.
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(IndependenceReport {
                    independent: true,
                    witness: None,
                });
            }
            pos -= 1;
            tuple[pos] += 1;
            if tuple[pos] < h.order() {
                break;
            }
            tuple[pos] = 0;
        }
        if combination_trivial(g, h, maps, &tuple) {
            return Ok(IndependenceReport {
                independent: false,
                witness: Some(tuple),
            });
        }
    }
}

/// Whether Π_i χ_{a_i} ∘ φ_i is the trivial character of Gⁿ: zero phase on
/// every generator of every coordinate.
fn combination_trivial(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    maps: &[GroupMap],
    duals: &[u64],
) -> bool {
    let m = h.exponent();
    let n = maps[0].n();
    for j in 0..n {
        for l in 0..g.factors().len() {
            let mut total = 0u64;
            for (map, &a) in maps.iter().zip(duals) {
                let img = map.coord(j).generator_images()[l];
                total = (total + h.phase(a, img)) % m;
            }
            if total != 0 {
                return false;
            }
        }
    }
    true
}

/// The relation subgroup K ⊆ Ĥ^k of a family of maps (all character tuples
/// combining to the trivial character) together with its annihilator
/// Y ⊆ H^k (all value tuples on which every tuple in K has zero phase).
/// |K| · |Y| = |H|^k always holds and is checked.
#[derive(Debug, Clone)]
pub struct RelationReport {
    pub relation_tuples: Vec<Vec<u64>>,
    pub annihilator: Vec<Vec<u64>>,
}

pub fn relation_subgroup_and_annihilator(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    maps: &[GroupMap],
    caps: &OracleCaps,
) -> Result<RelationReport> {
    let k = maps.len();
    if k == 0 {
        return Err(Error::invalid("need at least one map"));
    }
    let mut states = 1u64;
    for _ in 0..k {
        states = states
            .checked_mul(h.order())
            .filter(|&s| s <= caps.state_cap)
            .ok_or_else(|| {
                Error::budget(format!(
                    "tuple space exceeds the state cap {}",
                    caps.state_cap
                ))
            })?;
    }
    let m = h.exponent();
    let radices = vec![h.order(); k];
    let decode = |mut idx: u64| -> Vec<u64> {
        let mut out = Vec::with_capacity(k);
        for &r in &radices {
            out.push(idx % r);
            idx /= r;
        }
        out
    };
    let mut relation_tuples = Vec::new();
    for idx in 0..states {
        let tuple = decode(idx);
        if combination_trivial(g, h, maps, &tuple) {
            relation_tuples.push(tuple);
        }
    }
    let mut annihilator = Vec::new();
    for idx in 0..states {
        let y = decode(idx);
        let ok = relation_tuples.iter().all(|a| {
            let mut total = 0u64;
            for (&ai, &yi) in a.iter().zip(&y) {
                total = (total + h.phase(ai, yi)) % m;
            }
            total == 0
        });
        if ok {
            annihilator.push(y);
        }
    }
    if (relation_tuples.len() as u64) * (annihilator.len() as u64) != states {
        return Err(Error::internal(
            "relation subgroup and annihilator sizes do not multiply to |H|^k",
        ));
    }
    Ok(RelationReport {
        relation_tuples,
        annihilator,
    })
}

/// Independence of maps regarded as maps into the subgroup H₁: scans
/// tuples of H₁-characters (via representatives) for a non-trivial tuple
/// whose combination is trivial on Gⁿ.  Returns the witness as dual
/// indices of representatives.
fn is_independent_into(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    dual: &SubgroupDual,
    maps: &[&GroupMap],
    cap: u64,
) -> Result<Option<Vec<u64>>> {
    let k = maps.len();
    if k == 0 {
        return Ok(None);
    }
    let r = dual.reps().len() as u64;
    let mut states = 1u64;
    for _ in 0..k {
        states = states.checked_mul(r).filter(|&s| s <= cap).ok_or_else(|| {
            Error::budget(format!("character tuple space exceeds the state cap {cap}"))
        })?;
    }
    let owned: Vec<GroupMap> = maps.iter().map(|m| (*m).clone()).collect();
    let mut positions = vec![0usize; k];
    loop {
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(None);
            }
            pos -= 1;
            positions[pos] += 1;
            if positions[pos] < dual.reps().len() {
                break;
            }
            positions[pos] = 0;
        }
        let duals: Vec<u64> = positions.iter().map(|&p| dual.reps()[p]).collect();
        if combination_trivial(g, h, &owned, &duals) {
            return Ok(Some(duals));
        }
    }
}

// ---------------------------------------------------------------------------
// Exact value distributions
// ---------------------------------------------------------------------------

/// Exact joint distribution of map values over a uniform point of Sⁿ,
/// computed coordinate by coordinate; radices are all |H|.
pub fn group_tuple_distribution(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    maps: &[GroupMap],
    alphabet: &GroupAlphabet,
    caps: &OracleCaps,
) -> Result<ExactDistribution> {
    if maps.is_empty() {
        return Err(Error::invalid("need at least one map"));
    }
    let n = maps[0].n();
    if maps.iter().any(|m| m.n() != n) {
        return Err(Error::invalid("maps must share the dimension"));
    }
    let tables: Vec<Vec<Vec<u64>>> = maps.iter().map(|m| m.tables(g, h, alphabet)).collect();
    joint_distribution_from_tables(h, &tables, alphabet.len(), n, caps)
}

/// Joint distribution from per-map coordinate tables (tables[t][j][s]).
fn joint_distribution_from_tables(
    h: &FiniteAbelianGroup,
    tables: &[Vec<Vec<u64>>],
    s_len: usize,
    n: usize,
    caps: &OracleCaps,
) -> Result<ExactDistribution> {
    let k = tables.len();
    let ord = h.order();
    let mut states = 1usize;
    for _ in 0..k {
        states = states
            .checked_mul(ord as usize)
            .filter(|&s| s as u64 <= caps.state_cap)
            .ok_or_else(|| {
                Error::budget(format!(
                    "joint value space exceeds the state cap {}",
                    caps.state_cap
                ))
            })?;
    }
    // Precompute the addition table of H once.
    let add: Vec<u64> = (0..ord * ord).map(|i| h.add(i / ord, i % ord)).collect();
    let mut counts = vec![BigUint::zero(); states];
    counts[0] = BigUint::one();
    let mut scratch = vec![BigUint::zero(); states];
    for j in 0..n {
        for c in scratch.iter_mut() {
            *c = BigUint::zero();
        }
        for s_idx in 0..s_len {
            // Encoded state shift for this alphabet letter: componentwise
            // addition of (tables[0][j][s], …, tables[k-1][j][s]).
            for (idx, cnt) in counts.iter().enumerate() {
                if cnt.is_zero() {
                    continue;
                }
                let mut rem = idx;
                let mut new_idx = 0usize;
                let mut mult = 1usize;
                for t in tables.iter() {
                    let comp = (rem % ord as usize) as u64;
                    rem /= ord as usize;
                    let delta = t[j][s_idx];
                    new_idx += add[(comp * ord + delta) as usize] as usize * mult;
                    mult *= ord as usize;
                }
                scratch[new_idx] += cnt;
            }
        }
        std::mem::swap(&mut counts, &mut scratch);
    }
    let total = BigUint::from(s_len as u64).pow(n as u32);
    ExactDistribution::from_parts(vec![ord; k], counts, total)
}

/// Report of the smallest positive probability a map value attains on a
/// uniform point of Sⁿ, with the closed-form lower bound
/// |S|^(−e(H)²·ln(2|H|)²).
#[derive(Debug, Clone)]
pub struct GroupMinProbabilityReport {
    pub attained: Vec<u64>,
    pub min_probability: BigRational,
    pub closed_form_bound: f64,
    pub meets_bound: bool,
}

pub fn min_positive_probability_group(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    map: &GroupMap,
    alphabet: &GroupAlphabet,
    caps: &OracleCaps,
) -> Result<GroupMinProbabilityReport> {
    let dist = group_tuple_distribution(g, h, std::slice::from_ref(map), alphabet, caps)?;
    let attained: Vec<u64> = dist.support().into_iter().map(|t| t[0]).collect();
    let min_probability = dist.min_positive_probability()?;
    let e = h.exponent() as f64;
    let log2h = (2.0 * h.order() as f64).ln();
    let closed_form_bound = (alphabet.len() as f64).powf(-(e * e) * log2h * log2h);
    let min_f = min_probability.to_f64().unwrap_or(0.0);
    let meets_bound = min_f >= closed_form_bound - crate::fourier::FLOAT_TOLERANCE;
    Ok(GroupMinProbabilityReport {
        attained,
        min_probability,
        closed_form_bound,
        meets_bound,
    })
}

// ---------------------------------------------------------------------------
// Oracle: densities and verification for group condition sets
// ---------------------------------------------------------------------------

/// Distinct condition maps (by their value tables on the alphabet) across
/// the given sets, plus per-set checkers mapping a value tuple to a
/// satisfaction flag.
struct GroupChecker {
    // (index into the distinct-table list, allowed mask) per condition
    slots: Vec<(usize, u64)>,
}

impl GroupChecker {
    fn satisfied(&self, tuple: &[u64]) -> bool {
        self.slots
            .iter()
            .all(|&(idx, mask)| (mask >> tuple[idx]) & 1 == 1)
    }
}

fn distinct_tables_and_checkers(
    sets: &[&GroupConditionSet],
) -> (Vec<Vec<Vec<u64>>>, Vec<GroupChecker>) {
    let mut key_to_idx: BTreeMap<Vec<Vec<u64>>, usize> = BTreeMap::new();
    let mut tables: Vec<Vec<Vec<u64>>> = Vec::new();
    let mut checkers = Vec::new();
    for set in sets {
        let mut slots = Vec::new();
        for cond in set.conditions() {
            let t = cond.map.tables(set.domain(), set.target(), set.alphabet());
            let idx = *key_to_idx.entry(t.clone()).or_insert_with(|| {
                tables.push(t);
                tables.len() - 1
            });
            slots.push((idx, cond.allowed.mask()));
        }
        checkers.push(GroupChecker { slots });
    }
    (tables, checkers)
}

/// Exact or estimated density of the set of points of Sⁿ satisfying every
/// condition.
pub fn group_satisfying_density(
    set: &GroupConditionSet,
    method: DensityMethod,
    caps: &OracleCaps,
) -> Result<DensityResult> {
    match method {
        DensityMethod::Enumerate => {
            let total = enumeration_size(set.alphabet().len(), set.n(), caps.enumeration_cap)?;
            let mut hits = 0u64;
            walk_points(set.alphabet(), set.n(), &mut |x| {
                if set.satisfied_by(x) {
                    hits += 1;
                }
            });
            Ok(DensityResult::Exact(ratio(
                BigUint::from(hits),
                BigUint::from(total),
            )))
        }
        DensityMethod::Dp => {
            if set.is_empty() {
                return Ok(DensityResult::Exact(BigRational::one()));
            }
            let (tables, checkers) = distinct_tables_and_checkers(&[set]);
            let dist = joint_distribution_from_tables(
                set.target(),
                &tables,
                set.alphabet().len(),
                set.n(),
                caps,
            )?;
            let mut hits = BigUint::zero();
            for idx in 0..dist.states() {
                if dist.count_at(idx).is_zero() {
                    continue;
                }
                if checkers[0].satisfied(&dist.decode(idx)) {
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
            Ok(DensityResult::Estimate {
                estimate: ratio(BigUint::from(hits), BigUint::from(samples)),
                radius: crate::oracle::hoeffding_radius(samples),
                samples,
                seed,
            })
        }
    }
}

/// Odometer walk over Sⁿ, handing each point (as element indices) to the
/// callback.
fn walk_points<F: FnMut(&[u64])>(alphabet: &GroupAlphabet, n: usize, f: &mut F) {
    let s = alphabet.elements();
    let mut idx = vec![0usize; n];
    let mut x: Vec<u64> = vec![s[0]; n];
    loop {
        f(&x);
        let mut j = 0;
        loop {
            if j == n {
                return;
            }
            idx[j] += 1;
            if idx[j] < s.len() {
                x[j] = s[idx[j]];
                break;
            }
            idx[j] = 0;
            x[j] = s[0];
            j += 1;
        }
    }
}

/// Reconstructs a point of Sⁿ at which the distinct maps attain the target
/// value tuple, by a forward reachability sweep and a backward walk.
fn find_group_preimage(
    h: &FiniteAbelianGroup,
    tables: &[Vec<Vec<u64>>],
    alphabet: &GroupAlphabet,
    n: usize,
    target: &[u64],
    caps: &OracleCaps,
) -> Result<Option<Vec<u64>>> {
    let k = tables.len();
    let ord = h.order() as usize;
    let mut states = 1usize;
    for _ in 0..k {
        states = states
            .checked_mul(ord)
            .filter(|&s| s as u64 <= caps.state_cap)
            .ok_or_else(|| {
                Error::budget(format!(
                    "joint value space exceeds the state cap {}",
                    caps.state_cap
                ))
            })?;
    }
    let encode = |tuple: &[u64]| -> usize {
        let mut idx = 0usize;
        let mut mult = 1usize;
        for &v in tuple {
            idx += v as usize * mult;
            mult *= ord;
        }
        idx
    };
    let step = |idx: usize, j: usize, s_idx: usize, negate: bool| -> usize {
        let mut rem = idx;
        let mut out = 0usize;
        let mut mult = 1usize;
        for t in tables.iter() {
            let comp = (rem % ord) as u64;
            rem /= ord;
            let delta = t[j][s_idx];
            let next = if negate {
                h.sub(comp, delta)
            } else {
                h.add(comp, delta)
            };
            out += next as usize * mult;
            mult *= ord;
        }
        out
    };
    // Forward reachable states after each coordinate.
    let mut layers: Vec<Vec<bool>> = Vec::with_capacity(n + 1);
    let mut cur = vec![false; states];
    cur[0] = true;
    layers.push(cur.clone());
    for j in 0..n {
        let mut next = vec![false; states];
        for idx in 0..states {
            if !cur[idx] {
                continue;
            }
            for s_idx in 0..alphabet.len() {
                next[step(idx, j, s_idx, false)] = true;
            }
        }
        layers.push(next.clone());
        cur = next;
    }
    let target_idx = encode(target);
    if !layers[n][target_idx] {
        return Ok(None);
    }
    // Backward walk choosing the first alphabet letter that keeps the
    // remaining prefix reachable.
    let mut x = vec![0u64; n];
    let mut at = target_idx;
    for j in (0..n).rev() {
        let mut found = false;
        for (s_idx, &s) in alphabet.elements().iter().enumerate() {
            let prev = step(at, j, s_idx, true);
            if layers[j][prev] {
                x[j] = s;
                at = prev;
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

/// Checks that sat(candidate) ⊆ sat(original) within Sⁿ and that
/// density(original) − density(candidate) ≤ ε.  Both sets must share the
/// groups, alphabet and dimension.
pub fn verify_group_internal_approximation(
    original: &GroupConditionSet,
    candidate: &GroupConditionSet,
    epsilon: &BigRational,
    method: DensityMethod,
    caps: &OracleCaps,
) -> Result<ApproximationVerdict> {
    if original.domain() != candidate.domain()
        || original.target() != candidate.target()
        || original.alphabet() != candidate.alphabet()
        || original.n() != candidate.n()
    {
        return Err(Error::invalid(
            "verification requires matching groups, alphabet and dimension",
        ));
    }
    match method {
        DensityMethod::Enumerate => {
            let total = enumeration_size(original.alphabet().len(), original.n(), caps.enumeration_cap)?;
            let mut missing = 0u64;
            let mut bad: Option<Vec<u64>> = None;
            walk_points(original.alphabet(), original.n(), &mut |x| {
                let so = original.satisfied_by(x);
                let sc = candidate.satisfied_by(x);
                if so && !sc {
                    missing += 1;
                }
                if sc && !so && bad.is_none() {
                    bad = Some(x.to_vec());
                }
            });
            let defect = ratio(BigUint::from(missing), BigUint::from(total));
            let containment_ok = bad.is_none();
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
            let (tables, checkers) = distinct_tables_and_checkers(&[original, candidate]);
            if tables.is_empty() {
                // Both sets are empty: everything satisfies both.
                return Ok(ApproximationVerdict {
                    containment_ok: true,
                    counterexample: None,
                    defect: DensityResult::Exact(BigRational::zero()),
                    accepted: true,
                    certified: true,
                });
            }
            let dist = joint_distribution_from_tables(
                original.target(),
                &tables,
                original.alphabet().len(),
                original.n(),
                caps,
            )?;
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
                Some(t) => find_group_preimage(
                    original.target(),
                    &tables,
                    original.alphabet(),
                    original.n(),
                    t,
                    caps,
                )?,
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
            let defect = DensityResult::Estimate {
                estimate,
                radius: crate::oracle::hoeffding_radius(samples),
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

// ---------------------------------------------------------------------------
// Compression results
// ---------------------------------------------------------------------------

/// Result of compressing a group condition set: the output set, the
/// target ε, a certified defect bound and a derivation trace.
#[derive(Debug, Clone)]
pub struct GroupApproximationResult {
    pub output: GroupConditionSet,
    pub epsilon_target: BigRational,
    pub proof_defect_bound: BigRational,
    pub trace: Vec<TraceRecord>,
}

impl GroupApproximationResult {
    /// Confirms the certified bound stays within the target.
    pub fn checked(self) -> Result<Self> {
        if self.proof_defect_bound > self.epsilon_target {
            return Err(Error::internal(format!(
                "certified defect bound {} exceeds the target {}",
                self.proof_defect_bound, self.epsilon_target
            )));
        }
        Ok(self)
    }
}

fn rat_usize(q: usize) -> BigRational {
    rat(q as i64, 1)
}

// ---------------------------------------------------------------------------
// Relative sunflower collapse
// ---------------------------------------------------------------------------

/// Collapse of a shared-center family over the full alphabet: the family
/// {(φ + φ_i, E)} with petals φ_i valued in a subgroup H₁ and independent
/// as maps into H₁ is implied by the single condition (φ, F) with
/// F = {z : z + H₁ ⊆ E}.
#[derive(Debug, Clone)]
pub struct GroupSunflowerCollapse {
    pub condition: HCondition,
    /// Σ over attained center values z ∉ F of (|(E−z) ∩ H₁|/|H₁|)^k;
    /// exact because the joint petal distribution is uniform on H₁^k.
    pub exact_defect_bound: BigRational,
    /// The coarser closed form |H| · (1 − 1/|H₁|)^k.
    pub closed_form_defect_bound: BigRational,
}

pub fn compress_relative_sunflower(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    center: &GroupMap,
    petals: &[GroupMap],
    subgroup: &Subgroup,
    allowed: &GroupSubset,
    caps: &OracleCaps,
) -> Result<GroupSunflowerCollapse> {
    if petals.is_empty() {
        return Err(Error::invalid("need at least one petal"));
    }
    let n = center.n();
    if petals.iter().any(|p| p.n() != n) {
        return Err(Error::invalid("petals must share the center's dimension"));
    }
    for p in petals {
        for c in p.coords() {
            for &img in c.generator_images() {
                if !subgroup.contains(img) {
                    return Err(Error::invalid(
                        "petal values must lie in the given subgroup",
                    ));
                }
            }
        }
    }
    let dual = subgroup_dual(h, subgroup)?;
    let petal_refs: Vec<&GroupMap> = petals.iter().collect();
    if let Some(w) = is_independent_into(g, h, &dual, &petal_refs, caps.state_cap)? {
        return Err(Error::invalid(format!(
            "petals are dependent as maps into the subgroup (witness dual tuple {:?})",
            w
        )));
    }
    let mut f = GroupSubset::empty();
    for z in h.elements() {
        if subgroup
            .elements()
            .iter()
            .all(|&u| allowed.contains(h.add(z, u)))
        {
            f.insert(z);
        }
    }
    let full = GroupAlphabet::full(g);
    let attained = value_set_wrt_s(center, g, h, &full);
    let h1_len = subgroup.len() as i64;
    let k = petals.len();
    let mut exact = BigRational::zero();
    for z in attained.elements() {
        if f.contains(z) {
            continue;
        }
        let cnt = subgroup
            .elements()
            .iter()
            .filter(|&&u| allowed.contains(h.add(z, u)))
            .count();
        exact += rat_pow(&rat(cnt as i64, h1_len), k);
    }
    let closed_form = rat(h.order() as i64, 1) * rat_pow(&rat(h1_len - 1, h1_len), k);
    Ok(GroupSunflowerCollapse {
        condition: HCondition::new(center.clone(), f),
        exact_defect_bound: exact,
        closed_form_defect_bound: closed_form,
    })
}

// ---------------------------------------------------------------------------
// Pre-filter shared by the compressors
// ---------------------------------------------------------------------------

/// Classifies conditions by their value set on Sⁿ: conditions whose value
/// set lies inside the allowed set are never violated and are dropped;
/// a condition whose value set misses the allowed set entirely makes the
/// whole set unsatisfiable.
fn prefilter_group(set: &GroupConditionSet, trace: &mut Vec<TraceRecord>) -> (Vec<usize>, bool) {
    let mut active = Vec::new();
    for (i, cond) in set.conditions().iter().enumerate() {
        let values = value_set_wrt_s(&cond.map, set.domain(), set.target(), set.alphabet());
        if values.is_subset_of(&cond.allowed) {
            trace.push(TraceRecord {
                rule: "drop-never-violated".into(),
                detail: format!("condition {i} always holds on the alphabet"),
                sub_epsilon: None,
            });
            continue;
        }
        if values.intersection(&cond.allowed).is_empty() {
            trace.push(TraceRecord {
                rule: "unsatisfiable".into(),
                detail: format!("condition {i} can never hold on the alphabet"),
                sub_epsilon: None,
            });
            return (Vec::new(), true);
        }
        active.push(i);
    }
    (active, false)
}

fn empty_group_output(
    set: &GroupConditionSet,
    epsilon: &BigRational,
    trace: Vec<TraceRecord>,
) -> Result<GroupApproximationResult> {
    let output = GroupConditionSet::new(
        set.domain().clone(),
        set.target().clone(),
        set.alphabet().clone(),
        set.n(),
        Vec::new(),
    )?;
    Ok(GroupApproximationResult {
        output,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: BigRational::zero(),
        trace,
    })
}

fn unsatisfiable_group_output(
    set: &GroupConditionSet,
    epsilon: &BigRational,
    trace: Vec<TraceRecord>,
) -> Result<GroupApproximationResult> {
    let output = GroupConditionSet::new(
        set.domain().clone(),
        set.target().clone(),
        set.alphabet().clone(),
        set.n(),
        vec![canonical_empty_group_condition(set.domain(), set.n())],
    )?;
    Ok(GroupApproximationResult {
        output,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: BigRational::zero(),
        trace,
    })
}

// ---------------------------------------------------------------------------
// Full-alphabet compressor
// ---------------------------------------------------------------------------

struct UnresCtx<'a> {
    set: &'a GroupConditionSet,
    budget: &'a Budget,
    trace: Vec<TraceRecord>,
}

/// Finds the representative dual index whose restriction to the subgroup
/// matches that of `a`.
fn rep_of(
    h: &FiniteAbelianGroup,
    h1: &Subgroup,
    dual: &SubgroupDual,
    a: u64,
) -> Result<u64> {
    let target: Vec<u64> = h1.elements().iter().map(|&y| h.phase(a, y)).collect();
    for &r in dual.reps() {
        let phases: Vec<u64> = h1.elements().iter().map(|&y| h.phase(r, y)).collect();
        if phases == target {
            return Ok(r);
        }
    }
    Err(Error::internal("character has no representative"))
}

fn unrestricted_rec(
    ctx: &mut UnresCtx,
    center: GroupMap,
    offsets: Vec<GroupMap>,
    members: Vec<usize>,
    allowed: GroupSubset,
    epsilon: &BigRational,
    depth: usize,
) -> Result<(Vec<HCondition>, BigRational)> {
    let g = ctx.set.domain();
    let h = ctx.set.target();
    if depth > ctx.budget.max_depth {
        return Err(Error::budget(format!(
            "recursion depth exceeds the budget {}",
            ctx.budget.max_depth
        )));
    }
    // Tight subgroup generated by the offset values.
    let h1 = Subgroup::generated(
        h,
        offsets
            .iter()
            .flat_map(|o| o.coords().iter().flat_map(|c| c.generator_images().iter().copied())),
    );
    if h1.is_trivial() {
        // All offsets vanish: one condition covers the whole family.
        ctx.trace.push(TraceRecord {
            rule: "identical-class".into(),
            detail: format!("{} conditions share one map", members.len()),
            sub_epsilon: None,
        });
        return Ok((vec![HCondition::new(center, allowed)], BigRational::zero()));
    }
    let dual = subgroup_dual(h, &h1)?;
    // Greedy maximal subfamily independent as maps into H₁.
    let mut family: Vec<usize> = Vec::new();
    let mut capped = false;
    for idx in 0..offsets.len() {
        if offsets[idx].is_zero() {
            continue;
        }
        if family.len() >= ctx.budget.separation_family_cap {
            capped = true;
            break;
        }
        let mut maps: Vec<&GroupMap> = family.iter().map(|&i| &offsets[i]).collect();
        maps.push(&offsets[idx]);
        if is_independent_into(g, h, &dual, &maps, ctx.budget.state_cap)?.is_none() {
            family.push(idx);
        }
    }
    // Collapse certificate: the single condition (center, F) with
    // F = {z : z + H₁ ⊆ E} misses at most Σ_{z attained, z ∉ F} q_z^k.
    let mut f = GroupSubset::empty();
    for z in h.elements() {
        if h1.elements().iter().all(|&u| allowed.contains(h.add(z, u))) {
            f.insert(z);
        }
    }
    let full = GroupAlphabet::full(g);
    let attained = value_set_wrt_s(&center, g, h, &full);
    let h1_len = h1.len() as i64;
    let mut exact = BigRational::zero();
    for z in attained.elements() {
        if f.contains(z) {
            continue;
        }
        let cnt = h1
            .elements()
            .iter()
            .filter(|&&u| allowed.contains(h.add(z, u)))
            .count();
        exact += rat_pow(&rat(cnt as i64, h1_len), family.len());
    }
    if exact <= *epsilon {
        ctx.trace.push(TraceRecord {
            rule: "independent-collapse".into(),
            detail: format!(
                "{} conditions collapse through {} independent offsets",
                members.len(),
                family.len()
            ),
            sub_epsilon: Some(epsilon.clone()),
        });
        return Ok((vec![HCondition::new(center, f)], exact));
    }
    if capped {
        return Err(Error::budget(format!(
            "independent family hit the cap {} while the certificate exceeds the target",
            ctx.budget.separation_family_cap
        )));
    }
    // Partition by dependence witness: for each offset a character tuple
    // over the maximal family plus the offset that combines to the trivial
    // character.
    let mut classes: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    let first_nontrivial = dual.reps()[1];
    for idx in 0..offsets.len() {
        let key = if let Some(slot) = family.iter().position(|&i| i == idx) {
            // A family member repeats itself: pair the character with its
            // inverse at the member's own slot.
            let mut key = vec![first_nontrivial];
            let mut rest = vec![dual.reps()[0]; family.len()];
            rest[slot] = rep_of(h, &h1, &dual, h.neg(first_nontrivial))?;
            key.extend(rest);
            key
        } else {
            let mut found: Option<Vec<u64>> = None;
            'search: for &chi in &dual.reps()[1..] {
                let mut positions = vec![0usize; family.len()];
                loop {
                    let mut duals = vec![chi];
                    duals.extend(positions.iter().map(|&p| dual.reps()[p]));
                    let mut maps: Vec<GroupMap> = vec![offsets[idx].clone()];
                    maps.extend(family.iter().map(|&i| offsets[i].clone()));
                    if combination_trivial(g, h, &maps, &duals) {
                        found = Some(duals);
                        break 'search;
                    }
                    let mut pos = family.len();
                    loop {
                        if pos == 0 {
                            break;
                        }
                        pos -= 1;
                        positions[pos] += 1;
                        if positions[pos] < dual.reps().len() {
                            break;
                        }
                        positions[pos] = 0;
                    }
                    if positions.iter().all(|&p| p == 0) {
                        break;
                    }
                }
            }
            match found {
                Some(k) => k,
                None => {
                    return Err(Error::internal(
                        "maximal independent family left an offset without a witness",
                    ))
                }
            }
        };
        classes.entry(key).or_default().push(idx);
    }
    let q = classes.len();
    if q > ctx.budget.max_classes {
        return Err(Error::budget(format!(
            "partition produced {q} classes, over the budget {}",
            ctx.budget.max_classes
        )));
    }
    let sub_eps = epsilon / rat_usize(q);
    ctx.trace.push(TraceRecord {
        rule: "witness-partition".into(),
        detail: format!("{} conditions split into {q} witness classes", members.len()),
        sub_epsilon: Some(sub_eps.clone()),
    });
    let mut out = Vec::new();
    let mut bound = BigRational::zero();
    for (key, positions) in classes {
        let chi = Character { dual_index: key[0] };
        let i0 = positions[0];
        let new_center = center.add(h, &offsets[i0]);
        let new_offsets: Vec<GroupMap> = positions
            .iter()
            .map(|&i| offsets[i].sub(h, &offsets[i0]))
            .collect();
        let new_members: Vec<usize> = positions.iter().map(|&i| members[i]).collect();
        let h2 = Subgroup::kernel_within(h, chi, &h1);
        debug_assert!(h2.len() < h1.len());
        let (conds, sub_bound) = unrestricted_rec(
            ctx,
            new_center,
            new_offsets,
            new_members,
            allowed,
            &sub_eps,
            depth + 1,
        )?;
        out.extend(conds);
        bound += sub_bound;
    }
    Ok((out, bound))
}

/// Compresses a set of conditions over the full alphabet S = G into an
/// internally ε-approximating set: families that agree up to offsets with
/// many independent members collapse to a single condition, and the rest
/// recurse into kernels of witness characters.
pub fn compress_group_unrestricted(
    set: &GroupConditionSet,
    epsilon: &BigRational,
    budget: &Budget,
) -> Result<GroupApproximationResult> {
    epsilon_in_range(epsilon)?;
    if !set.alphabet().is_full(set.domain()) {
        return Err(Error::invalid(
            "the full-alphabet compressor requires the alphabet to be the whole domain group",
        ));
    }
    let mut trace = Vec::new();
    let (active, unsat) = prefilter_group(set, &mut trace);
    if unsat {
        return unsatisfiable_group_output(set, epsilon, trace);
    }
    if active.is_empty() {
        return empty_group_output(set, epsilon, trace);
    }
    let mut classes: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for &i in &active {
        classes
            .entry(set.conditions()[i].allowed.mask())
            .or_default()
            .push(i);
    }
    let q = classes.len();
    if q > budget.max_classes {
        return Err(Error::budget(format!(
            "{q} allowed-set classes, over the budget {}",
            budget.max_classes
        )));
    }
    let sub_eps = epsilon / rat_usize(q);
    let mut ctx = UnresCtx {
        set,
        budget,
        trace,
    };
    if q > 1 {
        ctx.trace.push(TraceRecord {
            rule: "allowed-partition".into(),
            detail: format!("{q} distinct allowed sets"),
            sub_epsilon: Some(sub_eps.clone()),
        });
    }
    let mut out = Vec::new();
    let mut bound = BigRational::zero();
    for (_, members) in classes {
        let h = set.target();
        let center = set.conditions()[members[0]].map.clone();
        let offsets: Vec<GroupMap> = members
            .iter()
            .map(|&i| set.conditions()[i].map.sub(h, &center))
            .collect();
        let allowed = set.conditions()[members[0]].allowed;
        let (conds, class_bound) =
            unrestricted_rec(&mut ctx, center, offsets, members, allowed, &sub_eps, 0)?;
        out.extend(conds);
        bound += class_bound;
    }
    let output = GroupConditionSet::new(
        set.domain().clone(),
        set.target().clone(),
        set.alphabet().clone(),
        set.n(),
        out,
    )?;
    GroupApproximationResult {
        output,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: bound,
        trace: ctx.trace,
    }
    .checked()
}

// ---------------------------------------------------------------------------
// Sunflower/separated collapse over a restricted alphabet
// ---------------------------------------------------------------------------

/// Input of the separated-collapse operation: a family of conditions
/// (γ + θ_i + ψ_i, E) where the θ_i have pairwise disjoint supports on
/// the alphabet and equal coefficient distributions, the ψ_i take values
/// in a subgroup H₁, and the ψ parts are r′-separated.
#[derive(Debug, Clone)]
pub struct SeparatedCollapseInput {
    pub domain: FiniteAbelianGroup,
    pub target: FiniteAbelianGroup,
    pub alphabet: GroupAlphabet,
    pub center: GroupMap,
    pub theta_offsets: Vec<GroupMap>,
    pub psi_parts: Vec<GroupMap>,
    pub subgroup: Vec<u64>,
    pub allowed: GroupSubset,
    pub r_prime: usize,
}

/// Result of the separated collapse: the replacement condition and the
/// closed-form defect bound |H|(exp(−m·q·|H₁|) + |H₁|^m·exp(−r′/e(H₁)²)).
#[derive(Debug, Clone)]
pub struct SeparatedCollapse {
    pub condition: HCondition,
    pub defect_bound: f64,
}

/// Computes, for each family member, the set of target values the member's
/// θ part can attain on the alphabet.
fn theta_value_sets(
    input: &SeparatedCollapseInput,
) -> Vec<GroupSubset> {
    input
        .theta_offsets
        .iter()
        .map(|t| value_set_wrt_s(t, &input.domain, &input.target, &input.alphabet))
        .collect()
}

/// Checks that the combined character tables of every non-trivial tuple
/// over the family have at least `threshold` non-constant coordinates.
fn family_separated(
    h: &FiniteAbelianGroup,
    dual: &SubgroupDual,
    psi_tables: &[Vec<Vec<u64>>],
    threshold: usize,
    state_cap: u64,
) -> Result<Option<Vec<u64>>> {
    let m = psi_tables.len();
    let reps = dual.reps();
    if reps.len() <= 1 || m == 0 {
        return Ok(None);
    }
    let mut states: u64 = 1;
    for _ in 0..m {
        states = states
            .checked_mul(reps.len() as u64)
            .ok_or_else(|| Error::budget("character tuple scan overflows"))?;
        if states > state_cap {
            return Err(Error::budget(format!(
                "character tuple scan needs more than {state_cap} states"
            )));
        }
    }
    let n = psi_tables[0].len();
    let s_len = if n > 0 { psi_tables[0][0].len() } else { 0 };
    let exponent = h.exponent();
    let mut positions = vec![0usize; m];
    loop {
        // Advance to the next tuple (the all-trivial tuple is skipped by
        // advancing before testing).
        let mut pos = m;
        loop {
            if pos == 0 {
                return Ok(None);
            }
            pos -= 1;
            positions[pos] += 1;
            if positions[pos] < reps.len() {
                break;
            }
            positions[pos] = 0;
        }
        if positions.iter().all(|&p| p == 0) {
            return Ok(None);
        }
        let mut support = 0usize;
        for j in 0..n {
            let combined: Vec<u64> = (0..s_len)
                .map(|s| {
                    let mut acc = 0u64;
                    for (i, &p) in positions.iter().enumerate() {
                        acc = (acc + h.phase(reps[p], psi_tables[i][j][s])) % exponent;
                    }
                    acc
                })
                .collect();
            if combined.iter().any(|&v| v != combined[0]) {
                support += 1;
            }
        }
        if support < threshold {
            return Ok(Some(positions.iter().map(|&p| reps[p]).collect()));
        }
    }
}

/// Collapses a sunflower/separated family to the single condition (γ, F)
/// with F = {t : t + V_i + H₁ ⊆ E for every member i}, where V_i is the
/// value set of the member's θ part.
pub fn compress_group_sunflower_separated(
    input: &SeparatedCollapseInput,
    budget: &Budget,
) -> Result<SeparatedCollapse> {
    let g = &input.domain;
    let h = &input.target;
    let m = input.theta_offsets.len();
    if m == 0 {
        return Err(Error::invalid("the family must be non-empty"));
    }
    if input.psi_parts.len() != m {
        return Err(Error::invalid(
            "need exactly one ψ part per θ offset",
        ));
    }
    let n = input.center.n();
    if input
        .theta_offsets
        .iter()
        .chain(input.psi_parts.iter())
        .any(|p| p.n() != n)
    {
        return Err(Error::invalid("all parts must share the center's dimension"));
    }
    let h1 = Subgroup::from_elements(h, &input.subgroup)?;
    for p in &input.psi_parts {
        for c in p.coords() {
            for &img in c.generator_images() {
                if !h1.contains(img) {
                    return Err(Error::invalid(
                        "ψ parts must take values in the given subgroup",
                    ));
                }
            }
        }
    }
    // Disjoint supports and equal coefficient distributions of the θ parts.
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut radius = None;
    for t in &input.theta_offsets {
        let supp = support_wrt_s(t, g, h, &input.alphabet);
        for &j in &supp {
            if !seen.insert(j) {
                return Err(Error::invalid(
                    "θ offsets must have pairwise disjoint supports",
                ));
            }
        }
        match radius {
            None => radius = Some(supp.len()),
            Some(r) if r != supp.len() => {
                return Err(Error::invalid(
                    "θ offsets must have equal coefficient distributions",
                ))
            }
            _ => {}
        }
    }
    let dist0 = coefficient_distribution_wrt_s(&input.theta_offsets[0], g, h, &input.alphabet);
    for t in &input.theta_offsets[1..] {
        if coefficient_distribution_wrt_s(t, g, h, &input.alphabet) != dist0 {
            return Err(Error::invalid(
                "θ offsets must have equal coefficient distributions",
            ));
        }
    }
    let r = radius.unwrap_or(0);
    // Separation of the ψ parts at threshold r·m + r′.
    let dual = subgroup_dual(h, &h1)?;
    let threshold = r.saturating_mul(m).saturating_add(input.r_prime);
    let psi_tables: Vec<Vec<Vec<u64>>> = input
        .psi_parts
        .iter()
        .map(|p| p.tables(g, h, &input.alphabet))
        .collect();
    if let Some(witness) =
        family_separated(h, &dual, &psi_tables, threshold, budget.state_cap)?
    {
        return Err(Error::invalid(format!(
            "ψ parts are not separated at threshold {threshold} (witness tuple {witness:?})"
        )));
    }
    // F = {t : t + V_i + H₁ ⊆ E for every i}.
    let value_sets = theta_value_sets(input);
    let mut f = GroupSubset::empty();
    for t in h.elements() {
        let mut ok = true;
        'outer: for vs in &value_sets {
            for v in vs.elements() {
                for &u in h1.elements() {
                    if !input.allowed.contains(h.add(h.add(t, v), u)) {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if ok {
            f.insert(t);
        }
    }
    // Closed-form bound.
    let h_ord = h.order() as f64;
    let h1_len = h1.len() as f64;
    let e_h = h.exponent() as f64;
    let s_len = input.alphabet.len() as f64;
    let q = s_len.powf(-(e_h * e_h) * (2.0 * h_ord).ln().powi(2));
    let e_h1 = h1.exponent(h) as f64;
    let bound = h_ord
        * ((-(m as f64) * q * h1_len).exp()
            + ((m as f64) * h1_len.ln() - (input.r_prime as f64) / (e_h1 * e_h1)).exp());
    Ok(SeparatedCollapse {
        condition: HCondition::new(input.center.clone(), f),
        defect_bound: bound,
    })
}

// ---------------------------------------------------------------------------
// Restricted-alphabet compressor
// ---------------------------------------------------------------------------

/// A coordinate map of the restricted recursion: a homomorphism plus a
/// constant shift, s ↦ hom(s) + shift. Every coordinate arising in the
/// decomposition has this shape because the recursion only ever subtracts
/// homomorphism coordinates and constants.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ACoord {
    hom: GroupHom,
    shift: u64,
}

impl ACoord {
    fn zero(g: &FiniteAbelianGroup) -> Self {
        ACoord {
            hom: GroupHom::zero(g),
            shift: 0,
        }
    }

    fn from_hom(hom: GroupHom) -> Self {
        ACoord { hom, shift: 0 }
    }

    fn table(&self, g: &FiniteAbelianGroup, h: &FiniteAbelianGroup, alphabet: &GroupAlphabet) -> Vec<u64> {
        alphabet
            .elements()
            .iter()
            .map(|&s| h.add(self.hom.eval(g, h, s), self.shift))
            .collect()
    }

    fn add(&self, h: &FiniteAbelianGroup, other: &ACoord) -> ACoord {
        ACoord {
            hom: self.hom.add(h, &other.hom),
            shift: h.add(self.shift, other.shift),
        }
    }

    fn sub(&self, h: &FiniteAbelianGroup, other: &ACoord) -> ACoord {
        ACoord {
            hom: self.hom.sub(h, &other.hom),
            shift: h.sub(self.shift, other.shift),
        }
    }
}

/// A map Sⁿ → H whose coordinates are homomorphisms plus constant shifts.
#[derive(Debug, Clone, PartialEq, Eq)]
struct AMap {
    coords: Vec<ACoord>,
}

impl AMap {
    fn zero(g: &FiniteAbelianGroup, n: usize) -> Self {
        AMap {
            coords: vec![ACoord::zero(g); n],
        }
    }

    fn from_map(m: &GroupMap) -> Self {
        AMap {
            coords: m.coords().iter().cloned().map(ACoord::from_hom).collect(),
        }
    }

    fn add(&self, h: &FiniteAbelianGroup, other: &AMap) -> AMap {
        AMap {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a.add(h, b))
                .collect(),
        }
    }

    fn sub(&self, h: &FiniteAbelianGroup, other: &AMap) -> AMap {
        AMap {
            coords: self
                .coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a.sub(h, b))
                .collect(),
        }
    }

    fn tables(&self, g: &FiniteAbelianGroup, h: &FiniteAbelianGroup, alphabet: &GroupAlphabet) -> Vec<Vec<u64>> {
        self.coords.iter().map(|c| c.table(g, h, alphabet)).collect()
    }
}

fn table_constant(table: &[u64]) -> bool {
    table.iter().all(|&v| v == table[0])
}

fn tables_support(tables: &[Vec<u64>]) -> Vec<usize> {
    tables
        .iter()
        .enumerate()
        .filter(|(_, t)| !table_constant(t))
        .map(|(j, _)| j)
        .collect()
}

/// Symmetry key of an offset map: the sorted multiset of its non-constant
/// coordinate tables together with the sum of its constant coordinate
/// values. Two offsets with equal keys behave identically in the
/// decomposition.
fn symmetric_key(h: &FiniteAbelianGroup, tables: &[Vec<u64>]) -> (Vec<Vec<u64>>, u64) {
    let mut non_constant: Vec<Vec<u64>> = Vec::new();
    let mut const_sum = 0u64;
    for t in tables {
        if table_constant(t) {
            const_sum = h.add(const_sum, t[0]);
        } else {
            non_constant.push(t.clone());
        }
    }
    non_constant.sort();
    (non_constant, const_sum)
}

fn value_set_from_tables(h: &FiniteAbelianGroup, tables: &[Vec<u64>]) -> GroupSubset {
    let mut acc = GroupSubset::empty();
    acc.insert(0);
    for t in tables {
        let mut step = GroupSubset::empty();
        for &v in t {
            step.insert(v);
        }
        acc = acc.minkowski(h, &step);
    }
    acc
}

struct ResCtx<'a> {
    set: &'a GroupConditionSet,
    budget: &'a Budget,
    trace: Vec<TraceRecord>,
}

struct RNode {
    center: AMap,
    offsets: Vec<AMap>,
    psis: Vec<AMap>,
    /// Indices into the original condition set.
    members: Vec<usize>,
    h1: Subgroup,
    allowed: GroupSubset,
}

/// Normalizes an affine center into a plain condition: the map keeps the
/// homomorphism parts and the allowed set absorbs the constant shifts.
fn affine_condition(h: &FiniteAbelianGroup, center: &AMap, allowed: GroupSubset) -> HCondition {
    let homs: Vec<GroupHom> = center.coords.iter().map(|c| c.hom.clone()).collect();
    let shift = center
        .coords
        .iter()
        .fold(0u64, |acc, c| h.add(acc, c.shift));
    let map = GroupMap::new(homs);
    HCondition::new(map, allowed.shift(h, h.neg(shift)))
}

/// Exact joint defect of replacing a class of original conditions by a
/// single candidate; `None` when the distinct-table count makes the
/// dynamic program too large for the budget.
fn restricted_class_defect(
    ctx: &ResCtx,
    members: &[usize],
    candidate: &HCondition,
) -> Result<Option<BigRational>> {
    let g = ctx.set.domain();
    let h = ctx.set.target();
    let alphabet = ctx.set.alphabet();
    let n = ctx.set.n();
    let mut tables: Vec<Vec<Vec<u64>>> = Vec::new();
    let mut key_to_index: BTreeMap<Vec<Vec<u64>>, usize> = BTreeMap::new();
    let mut resolve = |map: &GroupMap, tables: &mut Vec<Vec<Vec<u64>>>| -> usize {
        let t = map.tables(g, h, alphabet);
        *key_to_index.entry(t.clone()).or_insert_with(|| {
            tables.push(t);
            tables.len() - 1
        })
    };
    let member_slots: Vec<(usize, u64)> = members
        .iter()
        .map(|&i| {
            let cond = &ctx.set.conditions()[i];
            (resolve(&cond.map, &mut tables), cond.allowed.mask())
        })
        .collect();
    let cand_slot = (
        resolve(&candidate.map, &mut tables),
        candidate.allowed.mask(),
    );
    let ord = h.order();
    let mut states: u64 = 1;
    for _ in 0..tables.len() {
        states = match states.checked_mul(ord) {
            Some(s) if s <= ctx.budget.state_cap => s,
            _ => return Ok(None),
        };
    }
    let caps = OracleCaps {
        state_cap: ctx.budget.state_cap,
        enumeration_cap: ctx.budget.state_cap,
    };
    let dist = joint_distribution_from_tables(h, &tables, alphabet.len(), n, &caps)?;
    let mut missing = BigUint::zero();
    let k = tables.len();
    let mut value = vec![0u64; k];
    for state in 0..states {
        let mut rem = state;
        for slot in value.iter_mut() {
            *slot = rem % ord;
            rem /= ord;
        }
        let count = dist.count(&value);
        if count.is_zero() {
            continue;
        }
        let originals_ok = member_slots
            .iter()
            .all(|&(t, mask)| mask >> value[t] & 1 == 1);
        let cand_ok = cand_slot.1 >> value[cand_slot.0] & 1 == 1;
        if cand_ok && !originals_ok {
            return Err(Error::internal(
                "collapse candidate escapes the family it should imply",
            ));
        }
        if originals_ok && !cand_ok {
            missing += count;
        }
    }
    Ok(Some(ratio(missing, dist.total().clone())))
}

fn restricted_rec(
    ctx: &mut ResCtx,
    node: RNode,
    epsilon: &BigRational,
    depth: usize,
) -> Result<(Vec<HCondition>, BigRational)> {
    let g = ctx.set.domain();
    let h = ctx.set.target();
    let alphabet = ctx.set.alphabet();
    if depth > ctx.budget.max_depth {
        return Err(Error::budget(format!(
            "recursion depth exceeds the budget {}",
            ctx.budget.max_depth
        )));
    }
    if node.members.len() == 1 {
        ctx.trace.push(TraceRecord {
            rule: "single-member".into(),
            detail: format!("condition {} kept as is", node.members[0]),
            sub_epsilon: None,
        });
        return Ok((
            vec![ctx.set.conditions()[node.members[0]].clone()],
            BigRational::zero(),
        ));
    }
    let offset_tables: Vec<Vec<Vec<u64>>> = node
        .offsets
        .iter()
        .map(|o| o.tables(g, h, alphabet))
        .collect();
    let supports: Vec<Vec<usize>> = offset_tables.iter().map(|t| tables_support(t)).collect();
    let r = supports.iter().map(|s| s.len()).max().unwrap_or(0);
    debug_assert!(supports.iter().all(|s| s.len() == r));
    if r == 0 && node.h1.is_trivial() {
        // The members agree everywhere on the alphabet.
        ctx.trace.push(TraceRecord {
            rule: "identical-class".into(),
            detail: format!("{} conditions agree on the alphabet", node.members.len()),
            sub_epsilon: None,
        });
        return Ok((
            vec![ctx.set.conditions()[node.members[0]].clone()],
            BigRational::zero(),
        ));
    }
    // Quantities controlling the closed-form collapse.
    let eps_f = epsilon_in_range(epsilon)?.max(f64::MIN_POSITIVE);
    let h_ord = h.order() as f64;
    let s_len = alphabet.len() as f64;
    let e_h = h.exponent() as f64;
    let h1_len = node.h1.len() as f64;
    let q = s_len.powf(-(e_h * e_h) * (2.0 * h_ord).ln().powi(2));
    let t_f = ((2.0 * h_ord / eps_f).ln() / q * h1_len).ceil();
    let t_needed = if t_f.is_finite() && t_f < usize::MAX as f64 {
        (t_f as usize).max(1)
    } else {
        usize::MAX
    };
    let e_h1 = node.h1.exponent(h) as f64;
    let rp_f = if node.h1.is_trivial() {
        0.0
    } else {
        (((2.0 * h_ord / eps_f).ln() + (t_needed as f64) * h1_len.ln()) * e_h1 * e_h1).ceil()
    };
    let r_prime = if rp_f.is_finite() && rp_f < usize::MAX as f64 {
        rp_f as usize
    } else {
        usize::MAX
    };
    let threshold = r
        .saturating_mul(t_needed)
        .saturating_add(r_prime)
        .max(1);
    // Greedy subfamily: pairwise disjoint θ supports, ψ parts separated.
    let psi_tables: Vec<Vec<Vec<u64>>> = node
        .psis
        .iter()
        .map(|p| p.tables(g, h, alphabet))
        .collect();
    let dual = subgroup_dual(h, &node.h1)?;
    let mut fam: Vec<usize> = Vec::new();
    let mut z_set: BTreeSet<usize> = BTreeSet::new();
    for pos in 0..node.members.len() {
        if supports[pos].iter().any(|j| z_set.contains(j)) {
            continue;
        }
        if !node.h1.is_trivial() {
            let mut tables: Vec<Vec<Vec<u64>>> =
                fam.iter().map(|&i| psi_tables[i].clone()).collect();
            tables.push(psi_tables[pos].clone());
            match family_separated(h, &dual, &tables, threshold, ctx.budget.state_cap) {
                Ok(None) => {}
                Ok(Some(_)) => continue,
                Err(_) => {
                    // The tuple scan is over budget; stop growing the family.
                    break;
                }
            }
        }
        if fam.len() >= ctx.budget.separation_family_cap {
            break;
        }
        fam.push(pos);
        z_set.extend(supports[pos].iter().copied());
    }
    // Exact collapse certificate: candidate (center, F) with
    // F = ∩_i {t : t + V_i + H₁ ⊆ E}, V_i the value set of the offset.
    let mut f = GroupSubset::empty();
    for t in h.elements() {
        let mut ok = true;
        'outer: for tables in &offset_tables {
            let vs = value_set_from_tables(h, tables);
            for v in vs.elements() {
                for &u in node.h1.elements() {
                    if !node.allowed.contains(h.add(h.add(t, v), u)) {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if ok {
            f.insert(t);
        }
    }
    let candidate = affine_condition(h, &node.center, f);
    match restricted_class_defect(ctx, &node.members, &candidate)? {
        Some(defect) if defect <= *epsilon => {
            ctx.trace.push(TraceRecord {
                rule: "oracle-collapse".into(),
                detail: format!(
                    "{} conditions collapse to one with exact defect {}",
                    node.members.len(),
                    defect
                ),
                sub_epsilon: Some(epsilon.clone()),
            });
            return Ok((vec![candidate], defect));
        }
        Some(_) => {}
        None => {
            ctx.trace.push(TraceRecord {
                rule: "oracle-collapse-skipped".into(),
                detail: "joint distribution over the class is too large".into(),
                sub_epsilon: None,
            });
        }
    }
    // Partition. Members whose θ support meets the picked coordinate set
    // rebase one coordinate into the center; the rest pair with a witness
    // character tuple and rebase around a class representative.
    let mut sit1: BTreeMap<(usize, Vec<u64>), Vec<usize>> = BTreeMap::new();
    let mut sit2: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    let z_sorted: Vec<usize> = z_set.iter().copied().collect();
    for pos in 0..node.members.len() {
        let mut placed = false;
        for &z in &z_sorted {
            if !table_constant(&offset_tables[pos][z]) {
                sit1.entry((z, offset_tables[pos][z].clone()))
                    .or_default()
                    .push(pos);
                placed = true;
                break;
            }
        }
        if placed {
            continue;
        }
        if node.h1.is_trivial() {
            return Err(Error::internal(
                "a member with no overlap escaped a maximal disjoint-support family",
            ));
        }
        // Find the witness tuple over the family plus this member.
        let reps = dual.reps();
        let exponent = h.exponent();
        let n = ctx.set.n();
        let s_count = alphabet.len();
        let mut found: Option<Vec<u64>> = None;
        'chi: for &chi in &reps[1..] {
            let mut positions = vec![0usize; fam.len()];
            loop {
                let mut support = 0usize;
                for j in 0..n {
                    let combined: Vec<u64> = (0..s_count)
                        .map(|s| {
                            let mut acc = h.phase(chi, psi_tables[pos][j][s]) % exponent;
                            for (slot, &p) in positions.iter().enumerate() {
                                acc = (acc
                                    + h.phase(reps[p], psi_tables[fam[slot]][j][s]))
                                    % exponent;
                            }
                            acc
                        })
                        .collect();
                    if combined.iter().any(|&v| v != combined[0]) {
                        support += 1;
                    }
                }
                if support < threshold {
                    let mut key = vec![chi];
                    key.extend(positions.iter().map(|&p| reps[p]));
                    found = Some(key);
                    break 'chi;
                }
                let mut slot = fam.len();
                loop {
                    if slot == 0 {
                        break;
                    }
                    slot -= 1;
                    positions[slot] += 1;
                    if positions[slot] < reps.len() {
                        break;
                    }
                    positions[slot] = 0;
                }
                if positions.iter().all(|&p| p == 0) {
                    break;
                }
            }
        }
        match found {
            Some(key) => {
                sit2.entry(key).or_default().push(pos);
            }
            None => {
                return Err(Error::internal(
                    "a member outside the separated family has no witness tuple",
                ))
            }
        }
    }
    let mut children: Vec<RNode> = Vec::new();
    for ((z, table), positions) in sit1 {
        let _ = table;
        let rep = node.offsets[positions[0]].coords[z].clone();
        let mut center = node.center.clone();
        center.coords[z] = center.coords[z].add(h, &rep);
        let offsets: Vec<AMap> = positions
            .iter()
            .map(|&p| {
                let mut o = node.offsets[p].clone();
                o.coords[z] = o.coords[z].sub(h, &rep);
                o
            })
            .collect();
        children.push(RNode {
            center,
            offsets,
            psis: positions.iter().map(|&p| node.psis[p].clone()).collect(),
            members: positions.iter().map(|&p| node.members[p]).collect(),
            h1: node.h1.clone(),
            allowed: node.allowed,
        });
    }
    for (key, positions) in sit2 {
        let chi = Character { dual_index: key[0] };
        let i0 = positions[0];
        let new_center = node.center.add(h, &node.psis[i0]);
        let h2 = Subgroup::kernel_within(h, chi, &node.h1);
        debug_assert!(h2.len() < node.h1.len());
        // Rebase each member: split ξ = ψ − ψ_{i0} into the coordinates
        // where χ∘ξ varies (moved into the θ part), constant shifts on the
        // rest (also moved into the θ part) and a residual valued in the
        // kernel.
        let mut rebased: Vec<(usize, AMap, AMap)> = Vec::new();
        for &p in &positions {
            let xi = node.psis[p].sub(h, &node.psis[i0]);
            let xi_tables = xi.tables(g, h, alphabet);
            let mut theta = AMap::zero(g, xi.coords.len());
            let mut psi_new = AMap::zero(g, xi.coords.len());
            for j in 0..xi.coords.len() {
                let phase_table: Vec<u64> = xi_tables[j]
                    .iter()
                    .map(|&v| h.phase(key[0], v))
                    .collect();
                if phase_table.iter().any(|&v| v != phase_table[0]) {
                    theta.coords[j] = xi.coords[j].clone();
                } else {
                    let w = xi_tables[j][0];
                    theta.coords[j] = ACoord {
                        hom: GroupHom::zero(g),
                        shift: w,
                    };
                    psi_new.coords[j] = ACoord {
                        hom: xi.coords[j].hom.clone(),
                        shift: h.sub(xi.coords[j].shift, w),
                    };
                    debug_assert!(psi_new.coords[j]
                        .table(g, h, alphabet)
                        .iter()
                        .all(|&v| h2.contains(v)));
                }
            }
            let new_offset = node.offsets[p].add(h, &theta);
            rebased.push((p, new_offset, psi_new));
        }
        // Restore the symmetry invariant by splitting on the offset key.
        let mut by_key: BTreeMap<(Vec<Vec<u64>>, u64), Vec<usize>> = BTreeMap::new();
        for (slot, (_, offset, _)) in rebased.iter().enumerate() {
            let key = symmetric_key(h, &offset.tables(g, h, alphabet));
            by_key.entry(key).or_default().push(slot);
        }
        for (_, slots) in by_key {
            children.push(RNode {
                center: new_center.clone(),
                offsets: slots.iter().map(|&s| rebased[s].1.clone()).collect(),
                psis: slots.iter().map(|&s| rebased[s].2.clone()).collect(),
                members: slots.iter().map(|&s| node.members[rebased[s].0]).collect(),
                h1: h2.clone(),
                allowed: node.allowed,
            });
        }
    }
    let q_classes = children.len();
    if q_classes > ctx.budget.max_classes {
        return Err(Error::budget(format!(
            "partition produced {q_classes} classes, over the budget {}",
            ctx.budget.max_classes
        )));
    }
    let sub_eps = epsilon / rat_usize(q_classes);
    ctx.trace.push(TraceRecord {
        rule: "support-partition".into(),
        detail: format!(
            "{} conditions split into {q_classes} classes",
            node.members.len()
        ),
        sub_epsilon: Some(sub_eps.clone()),
    });
    let mut out = Vec::new();
    let mut bound = BigRational::zero();
    for child in children {
        let (conds, sub_bound) = restricted_rec(ctx, child, &sub_eps, depth + 1)?;
        out.extend(conds);
        bound += sub_bound;
    }
    Ok((out, bound))
}

/// Compresses a set of conditions over a restricted alphabet S ⊆ G into an
/// internally ε-approximating set, recursing on shared θ-support
/// coordinates and on kernels of witness characters of the ψ parts.
pub fn compress_group_restricted(
    set: &GroupConditionSet,
    epsilon: &BigRational,
    budget: &Budget,
) -> Result<GroupApproximationResult> {
    epsilon_in_range(epsilon)?;
    let mut trace = Vec::new();
    let (active, unsat) = prefilter_group(set, &mut trace);
    if unsat {
        return unsatisfiable_group_output(set, epsilon, trace);
    }
    if active.is_empty() {
        return empty_group_output(set, epsilon, trace);
    }
    let h = set.target();
    let g = set.domain();
    let mut classes: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for &i in &active {
        classes
            .entry(set.conditions()[i].allowed.mask())
            .or_default()
            .push(i);
    }
    let q = classes.len();
    if q > budget.max_classes {
        return Err(Error::budget(format!(
            "{q} allowed-set classes, over the budget {}",
            budget.max_classes
        )));
    }
    let sub_eps = epsilon / rat_usize(q);
    let mut ctx = ResCtx {
        set,
        budget,
        trace,
    };
    if q > 1 {
        ctx.trace.push(TraceRecord {
            rule: "allowed-partition".into(),
            detail: format!("{q} distinct allowed sets"),
            sub_epsilon: Some(sub_eps.clone()),
        });
    }
    let mut out = Vec::new();
    let mut bound = BigRational::zero();
    for (_, members) in classes {
        // The whole class starts as ψ parts valued in the subgroup the
        // coordinate tables generate, with an empty θ layer.
        let mut values: Vec<u64> = Vec::new();
        for &i in &members {
            for tbl in set.conditions()[i].map.tables(g, h, set.alphabet()) {
                values.extend(tbl);
            }
        }
        let h1 = Subgroup::generated(h, values.iter().copied());
        let node = RNode {
            center: AMap::zero(g, set.n()),
            offsets: vec![AMap::zero(g, set.n()); members.len()],
            psis: members
                .iter()
                .map(|&i| AMap::from_map(&set.conditions()[i].map))
                .collect(),
            members: members.clone(),
            h1,
            allowed: set.conditions()[members[0]].allowed,
        };
        let (conds, class_bound) = restricted_rec(&mut ctx, node, &sub_eps, 0)?;
        out.extend(conds);
        bound += class_bound;
    }
    let output = GroupConditionSet::new(
        set.domain().clone(),
        set.target().clone(),
        set.alphabet().clone(),
        set.n(),
        out,
    )?;
    GroupApproximationResult {
        output,
        epsilon_target: epsilon.clone(),
        proof_defect_bound: bound,
        trace: ctx.trace,
    }
    .checked()
}
