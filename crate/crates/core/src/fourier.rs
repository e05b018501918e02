//! Character sums over restricted alphabets.
//!
//! The compression arguments rest on one analytic fact: for a non-trivial
//! frequency t and an alphabet S with |S| ≥ 2, the averaged character
//! E_{x∈S} ω_p^{tx} has modulus at most 1 − p⁻².  Biases of linear forms
//! factor into per-coordinate averages, which turns that single-coordinate
//! bound into exponential decay in the support size.

use num::complex::Complex64;
use num::ToPrimitive;

use crate::algebra::{Alphabet, LinearForm, PrimeModulus};
use crate::error::{Error, Result};
use crate::oracle::ExactDistribution;

/// Comparison slack for analytic (floating-point) bounds.  Exact rationals
/// are compared exactly; only float bounds get this one-sided tolerance.
pub const FLOAT_TOLERANCE: f64 = 1e-9;

/// ω_p^e as a complex number.
pub fn root_of_unity(p: PrimeModulus, e: u64) -> Complex64 {
    let theta = 2.0 * std::f64::consts::PI * (e % p.value()) as f64 / p.value() as f64;
    Complex64::new(theta.cos(), theta.sin())
}

/// E_{x∈S} ω_p^{t·x}: the bias of one coordinate at frequency t.
pub fn coordinate_bias(alphabet: &Alphabet, t: u64) -> Complex64 {
    let p = alphabet.p();
    let mut sum = Complex64::new(0.0, 0.0);
    for &s in alphabet.elements() {
        sum += root_of_unity(p, p.mul(p.reduce(t), s));
    }
    sum / alphabet.len() as f64
}

/// 1 − p⁻²: the single-coordinate modulus bound for non-zero frequencies
/// over any alphabet with at least two elements.
pub fn coordinate_bias_bound(p: PrimeModulus) -> f64 {
    1.0 - 1.0 / (p.value() as f64 * p.value() as f64)
}

/// Bias of a form φ over Sⁿ: |E_{x∈Sⁿ} ω_p^{φ(x)}| together with the decay
/// bound (1 − p⁻²)^{|Z(φ)|}.
#[derive(Debug, Clone)]
pub struct BiasReport {
    /// Exact product Π_{i∈Z(φ)} |E_{x∈S} ω_p^{λ_i x}| (up to float error).
    pub magnitude: f64,
    /// (1 − p⁻²)^{|Z(φ)|}.
    pub bound: f64,
    pub support_size: usize,
}

impl BiasReport {
    pub fn within_bound(&self) -> bool {
        self.magnitude <= self.bound + FLOAT_TOLERANCE
    }
}

/// Per-coordinate product formula for the bias of a linear form.  Requires
/// |S| ≥ 2 for the bound to apply; |S| = 1 is rejected because the averaged
/// character always has modulus 1 there.
pub fn form_bias(form: &LinearForm, alphabet: &Alphabet) -> Result<BiasReport> {
    if alphabet.p() != form.p() {
        return Err(Error::invalid("alphabet modulus differs from form modulus"));
    }
    if alphabet.len() < 2 {
        return Err(Error::invalid(
            "bias bound requires an alphabet with at least 2 elements",
        ));
    }
    let mut magnitude = 1.0f64;
    let mut support = 0usize;
    for &c in form.coeffs() {
        if c != 0 {
            magnitude *= coordinate_bias(alphabet, c).norm();
            support += 1;
        }
    }
    let bound = coordinate_bias_bound(form.p()).powi(support as i32);
    Ok(BiasReport {
        magnitude,
        bound,
        support_size: support,
    })
}

/// (1 − p⁻²)^r: the equidistribution gap bound for the joint distribution
/// of an r-separated tuple of forms.
pub fn equidistribution_gap_bound(p: PrimeModulus, r: usize) -> f64 {
    coordinate_bias_bound(p).powi(r as i32)
}

/// Fourier-side certificate for a joint distribution over 𝔽_p^k: the total
/// non-trivial character mass bounds every pointwise deviation from
/// uniformity.
#[derive(Debug, Clone)]
pub struct CharacterGapReport {
    /// p^{−k} Σ_{a ≠ 0} |Σ_v P(v) ω_p^{a·v}|.
    pub bound: f64,
    /// max_y |P(y) − p^{−k}|, the observed deviation.
    pub max_gap: f64,
    /// max_gap ≤ bound + tolerance.
    pub verified: bool,
}

/// Computes the general equidistribution certificate for a distribution
/// over 𝔽_p^k (all radices must equal p).
pub fn generic_character_gap(
    dist: &ExactDistribution,
    p: PrimeModulus,
) -> Result<CharacterGapReport> {
    let pv = p.value();
    if dist.radices().iter().any(|&r| r != pv) {
        return Err(Error::invalid(
            "character gap requires a distribution over a power of 𝔽_p",
        ));
    }
    let k = dist.radices().len();
    let states = dist.states();
    let uniform = 1.0 / states as f64;

    // Probabilities as floats once; k and p are small by construction.
    let mut probs = vec![0.0f64; states];
    let total = dist.total();
    for idx in 0..states {
        let c = dist.count_at(idx);
        if !num::Zero::is_zero(c) {
            let r = super::oracle::ratio(c.clone(), total.clone());
            probs[idx] = r.to_f64().ok_or_else(|| {
                Error::internal("probability out of f64 range")
            })?;
        }
    }

    let mut char_mass = 0.0f64;
    let mut a = vec![0u64; k];
    loop {
        // Advance a through 𝔽_p^k, skipping the zero frequency.
        let mut j = 0;
        while j < k {
            a[j] += 1;
            if a[j] == pv {
                a[j] = 0;
                j += 1;
            } else {
                break;
            }
        }
        if j == k {
            break; // wrapped to zero: done
        }
        let mut sum = Complex64::new(0.0, 0.0);
        let mut v = vec![0u64; k];
        for &pr in probs.iter() {
            if pr > 0.0 {
                let mut e = 0u64;
                for (x, f) in v.iter().zip(&a) {
                    e = (e + x * f) % pv;
                }
                sum += root_of_unity(p, e) * pr;
            }
            let mut j = 0;
            while j < k {
                v[j] += 1;
                if v[j] == pv {
                    v[j] = 0;
                    j += 1;
                } else {
                    break;
                }
            }
        }
        char_mass += sum.norm();
    }
    let bound = uniform * char_mass;
    let max_gap = probs
        .iter()
        .map(|&pr| (pr - uniform).abs())
        .fold(0.0f64, f64::max);
    Ok(CharacterGapReport {
        bound,
        max_gap,
        verified: max_gap <= bound + FLOAT_TOLERANCE,
    })
}
