//! Acceptance gate: ten criteria, one test per criterion, so the test
//! harness prints one pass/fail line for each.  Tolerances are pinned as
//! constants next to the criteria that use them.
//!
//! Criteria 1–3 drive the installed binary; the rest exercise the library
//! against independent in-test oracles (direct enumeration and hand-rolled
//! convolutions) so every bound is checked through two routes.

use condcomp::abelian::{
    compress_group_restricted, compress_group_unrestricted, group_tuple_distribution,
    is_independent, relation_subgroup_and_annihilator, verify_group_internal_approximation,
    FiniteAbelianGroup, GroupAlphabet, GroupConditionSet, GroupHom, GroupMap, GroupSubset,
    HCondition,
};
use condcomp::algebra::{Alphabet, ConditionSet, LinearForm, PrimeModulus};
use condcomp::compress::{compress_mod_p, Budget};
use condcomp::fourier::{equidistribution_gap_bound, form_bias};
use condcomp::gen::{fixture_shifted_pair, generate_instance, GenProfile};
use condcomp::oracle::{
    exact_tuple_distribution, min_positive_probability, verify_internal_approximation,
    ApproximationVerdict, DensityMethod, OracleCaps,
};
use condcomp::schema::ParsedInstance;
use condcomp::Error;
use num::bigint::BigInt;
use num::rational::BigRational;
use num::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::process::Command;
use std::time::{Duration, Instant};

/// Criterion 4: float agreement between the two bias routes, and slack on
/// the bias bound.
const BIAS_TOL: f64 = 1e-9;
/// Criterion 5: safety margin for comparing an exact rational gap against a
/// float bound.
const GAP_TOL: f64 = 1e-12;
/// Criterion 1: per-instance runtime ceiling.
const PER_INSTANCE_BUDGET: Duration = Duration::from_secs(1);
/// Criterion 4: whole-suite runtime ceiling.
const BIAS_SUITE_BUDGET: Duration = Duration::from_secs(30);
/// Criterion 7: whole-matrix runtime ceiling.
const SOUNDNESS_BUDGET: Duration = Duration::from_secs(300);

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_condcomp"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().expect("no signal"),
        String::from_utf8(out.stdout).expect("utf-8"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 1: the two-valued shifted-pair family has density exactly
// 1/2 + 1/2^k for p = 3, S = {0,1}, k = n ∈ {3..12}; < 1 s per instance.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_shifted_pair_density_exact() {
    let dir = tempfile::tempdir().expect("tempdir");
    for k in 3u32..=12 {
        let path = dir.path().join(format!("sp{k}.json"));
        let path = path.to_str().unwrap();
        let (code, _) = cli(&[
            "fixtures", "--name", "shifted-pair", "--p", "3",
            "--k", &k.to_string(), "--n", &k.to_string(), "--out", path,
        ]);
        assert_eq!(code, 0);
        let t0 = Instant::now();
        let (code, stdout) = cli(&["density", path]);
        let elapsed = t0.elapsed();
        assert_eq!(code, 0);
        let expected = format!("{}/{}", (1u64 << (k - 1)) + 1, 1u64 << k);
        assert_eq!(stdout.trim(), expected, "k = {k}");
        assert!(
            elapsed < PER_INSTANCE_BUDGET,
            "k = {k} took {elapsed:?} (limit {PER_INSTANCE_BUDGET:?})"
        );
    }
}

// ---------------------------------------------------------------------------
// Criterion 2: the paired-coordinates group family has density exactly
// 1/p + 1/p^k for p ∈ {3,5}, k = n ∈ {3..6}.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_paired_coordinates_density_exact() {
    let dir = tempfile::tempdir().expect("tempdir");
    for p in [3u64, 5] {
        for k in 3u32..=6 {
            let path = dir.path().join(format!("pc{p}-{k}.json"));
            let path = path.to_str().unwrap();
            let (code, _) = cli(&[
                "fixtures", "--name", "paired-coordinates", "--p", &p.to_string(),
                "--k", &k.to_string(), "--n", &k.to_string(), "--out", path,
            ]);
            assert_eq!(code, 0);
            let (code, stdout) = cli(&["density", path]);
            assert_eq!(code, 0);
            let expected = format!("{}/{}", p.pow(k - 1) + 1, p.pow(k));
            assert_eq!(stdout.trim(), expected, "p = {p}, k = {k}");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 3: the product-zero fixture (enumeration only) has density
// exactly 1/p + (p−1)/p^k for p ∈ {3,5}, k = n ∈ {3,5}.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_product_zero_density_exact() {
    let dir = tempfile::tempdir().expect("tempdir");
    for p in [3u64, 5] {
        for k in [3u32, 5] {
            let path = dir.path().join(format!("pz{p}-{k}.json"));
            let path = path.to_str().unwrap();
            let (code, _) = cli(&[
                "fixtures", "--name", "product-zero", "--p", &p.to_string(),
                "--k", &k.to_string(), "--n", &k.to_string(), "--out", path,
            ]);
            assert_eq!(code, 0);
            let (code, stdout) = cli(&["density", path]);
            assert_eq!(code, 0);
            let expected = format!("{}/{}", p.pow(k - 1) + p - 1, p.pow(k));
            assert_eq!(stdout.trim(), expected, "p = {p}, k = {k}");
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 4: for 1000 seeded forms (p ≤ 7, |S| ≥ 2, n ≤ 8), the
// exhaustive |E ω^{φ(x)}| (exact counts convolved in-test, one DFT at the
// end) equals the coordinate-product route within 1e-9 and respects
// (1 − p⁻²)^{|Z(φ)|} + 1e-9.  Whole suite < 30 s.
// ---------------------------------------------------------------------------

/// Exact counts of φ(x) over x ∈ Sⁿ, convolved coordinate by coordinate.
/// Counts stay ≤ 7⁸ < 2⁶⁴.
fn value_counts(p: u64, s: &[u64], coeffs: &[u64]) -> Vec<u64> {
    let mut counts = vec![0u64; p as usize];
    counts[0] = 1;
    for &c in coeffs {
        let mut next = vec![0u64; p as usize];
        for (t, &ct) in counts.iter().enumerate() {
            if ct == 0 {
                continue;
            }
            for &x in s {
                let nt = ((t as u64) + c * x % p) % p;
                next[nt as usize] += ct;
            }
        }
        counts = next;
    }
    counts
}

fn counts_bias_magnitude(p: u64, counts: &[u64]) -> f64 {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let (mut re, mut im) = (0.0f64, 0.0f64);
    for (t, &c) in counts.iter().enumerate() {
        let ang = 2.0 * PI * (t as f64) / (p as f64);
        re += (c as f64) * ang.cos();
        im += (c as f64) * ang.sin();
    }
    ((re / total).powi(2) + (im / total).powi(2)).sqrt()
}

fn random_alphabet(rng: &mut ChaCha8Rng, p: u64) -> Vec<u64> {
    let size = rng.gen_range(2..=p as usize);
    let mut all: Vec<u64> = (0..p).collect();
    all.shuffle(rng);
    let mut s = all[..size].to_vec();
    s.sort_unstable();
    s
}

#[test]
fn criterion_04_bias_bound_suite() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0B1A5);
    for trial in 0..1000 {
        let p = *[2u64, 3, 5, 7].choose(&mut rng).unwrap();
        let s = random_alphabet(&mut rng, p);
        let n = rng.gen_range(1..=8usize);
        let coeffs: Vec<u64> = (0..n).map(|_| rng.gen_range(0..p)).collect();

        let pm = PrimeModulus::new(p).unwrap();
        let alphabet = Alphabet::new(pm, s.clone()).unwrap();
        let form = LinearForm::new(pm, coeffs.clone());
        let report = form_bias(&form, &alphabet).unwrap();

        let exhaustive = counts_bias_magnitude(p, &value_counts(p, &s, &coeffs));
        assert!(
            (exhaustive - report.magnitude).abs() <= BIAS_TOL,
            "trial {trial}: routes disagree: {exhaustive} vs {} \
             (p={p}, s={s:?}, coeffs={coeffs:?})",
            report.magnitude
        );

        let support = coeffs.iter().filter(|&&c| c != 0).count();
        assert_eq!(report.support_size, support, "trial {trial}");
        let bound = (1.0 - 1.0 / ((p * p) as f64)).powi(support as i32);
        assert!((report.bound - bound).abs() <= 1e-12, "trial {trial}");
        assert!(
            exhaustive <= bound + BIAS_TOL,
            "trial {trial}: |bias| {exhaustive} > bound {bound} \
             (p={p}, s={s:?}, coeffs={coeffs:?})"
        );
    }
    let elapsed = t0.elapsed();
    assert!(
        elapsed < BIAS_SUITE_BUDGET,
        "suite took {elapsed:?} (limit {BIAS_SUITE_BUDGET:?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: for 200 seeded families (p ≤ 5, k ≤ 3, n ≤ 10), with r the
// separation the family actually achieves, every exact probability gap
// |P(tuple) − p^{-k}| is ≤ (1 − p⁻²)^r.  One-sided, exact vs float bound.
// ---------------------------------------------------------------------------

/// Exact joint counts of (φ_1..φ_k)(x) over Sⁿ, states encoded base p with
/// form 0 least significant.
fn joint_counts(p: u64, s: &[u64], family: &[Vec<u64>]) -> Vec<u64> {
    let k = family.len();
    let states = (p as usize).pow(k as u32);
    let mut counts = vec![0u64; states];
    counts[0] = 1;
    let n = family[0].len();
    for j in 0..n {
        let mut next = vec![0u64; states];
        for (st, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for &x in s {
                let mut t = st;
                let mut shifted = 0usize;
                let mut base = 1usize;
                for form in family {
                    let digit = t % p as usize;
                    t /= p as usize;
                    let nd = ((digit as u64) + form[j] * x % p) % p;
                    shifted += (nd as usize) * base;
                    base *= p as usize;
                }
                next[shifted] += c;
            }
        }
        counts = next;
    }
    counts
}

/// Smallest support size over all non-trivial linear combinations of the
/// family: the separation it achieves.
fn achieved_separation(p: u64, family: &[Vec<u64>]) -> usize {
    let k = family.len();
    let n = family[0].len();
    let combos = (p as usize).pow(k as u32);
    let mut best = n + 1;
    for idx in 1..combos {
        let mut t = idx;
        let mut coeffs = vec![0u64; k];
        for c in coeffs.iter_mut() {
            *c = (t % p as usize) as u64;
            t /= p as usize;
        }
        let support = (0..n)
            .filter(|&j| {
                family
                    .iter()
                    .zip(&coeffs)
                    .map(|(f, &c)| c * f[j] % p)
                    .sum::<u64>()
                    % p
                    != 0
            })
            .count();
        best = best.min(support);
    }
    best.min(n)
}

#[test]
fn criterion_05_equidistribution_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E9A);
    for trial in 0..200 {
        let p = *[2u64, 3, 5].choose(&mut rng).unwrap();
        let s = random_alphabet(&mut rng, p);
        let k = rng.gen_range(1..=3usize);
        let n = rng.gen_range(2..=10usize);
        let family: Vec<Vec<u64>> = (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        if rng.gen_bool(0.7) {
                            rng.gen_range(1..p.max(2))
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();

        let r = achieved_separation(p, &family);
        let pm = PrimeModulus::new(p).unwrap();
        let bound = equidistribution_gap_bound(pm, r);
        let pinned = (1.0 - 1.0 / ((p * p) as f64)).powi(r as i32);
        assert!((bound - pinned).abs() <= 1e-12, "trial {trial}");

        let counts = joint_counts(p, &s, &family);
        let total: u64 = counts.iter().sum();

        // Library route agrees with the in-test convolution exactly.
        let alphabet = Alphabet::new(pm, s.clone()).unwrap();
        let forms: Vec<LinearForm> = family
            .iter()
            .map(|c| LinearForm::new(pm, c.clone()))
            .collect();
        let dist =
            exact_tuple_distribution(&forms, &alphabet, &OracleCaps::default()).unwrap();
        for (st, &c) in counts.iter().enumerate() {
            let mut t = st;
            let tuple: Vec<u64> = (0..k)
                .map(|_| {
                    let d = (t % p as usize) as u64;
                    t /= p as usize;
                    d
                })
                .collect();
            assert_eq!(
                dist.count(&tuple),
                &BigUint::from(c),
                "trial {trial}: library distribution disagrees at {tuple:?}"
            );
        }

        let uniform = 1.0 / (p as f64).powi(k as i32);
        for &c in &counts {
            let gap = ((c as f64) / (total as f64) - uniform).abs();
            assert!(
                gap <= bound + GAP_TOL,
                "trial {trial}: gap {gap} > bound {bound} at r = {r} \
                 (p={p}, s={s:?}, family={family:?})"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Criterion 6: exhaustively over p ≤ 7, n ≤ 5, |S| ≥ 2, and all coefficient
// multisets, every positive probability of a form value is at least
// |S|^{−⌈(p−1)/(|S|−1)⌉}; equality is attained at p = 5, S = {0,1},
// x_1+x_2+x_3+x_4 at value 4, probability exactly 1/16.
// ---------------------------------------------------------------------------

/// All nondecreasing coefficient vectors of length n over 0..p.  Sorted
/// vectors suffice: the value distribution over Sⁿ is invariant under
/// coordinate permutation.
fn sorted_vectors(p: u64, n: usize) -> Vec<Vec<u64>> {
    let mut out = Vec::new();
    let mut cur = vec![0u64; n];
    loop {
        out.push(cur.clone());
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + 1 < p {
                let v = cur[i] + 1;
                for slot in cur.iter_mut().skip(i) {
                    *slot = v;
                }
                break;
            }
        }
    }
}

#[test]
fn criterion_06_lower_bound_suite_exhaustive() {
    for p in [2u64, 3, 5, 7] {
        for s_mask in 0u32..(1 << p) {
            if s_mask.count_ones() < 2 {
                continue;
            }
            let s: Vec<u64> = (0..p).filter(|&v| s_mask >> v & 1 == 1).collect();
            let s_len = s.len() as u128;
            let m = (p - 1).div_ceil(s.len() as u64 - 1);
            let bound_den = s_len.pow(m as u32);
            for n in 1..=5usize {
                let total = s_len.pow(n as u32);
                for coeffs in sorted_vectors(p, n) {
                    let counts = value_counts(p, &s, &coeffs);
                    for (t, &c) in counts.iter().enumerate() {
                        if c == 0 {
                            continue;
                        }
                        // P(φ = t) ≥ |S|^{-m}  ⟺  count · |S|^m ≥ |S|^n.
                        assert!(
                            (c as u128) * bound_den >= total,
                            "p={p}, S={s:?}, coeffs={coeffs:?}: value {t} has \
                             probability {c}/{total} below |S|^-{m}"
                        );
                    }
                }
            }
        }
    }

    // Equality witness: p=5, S={0,1}, x_1+x_2+x_3+x_4, value 4.
    let counts = value_counts(5, &[0, 1], &[1, 1, 1, 1]);
    assert_eq!(counts[4], 1, "the all-ones point is the only way to reach 4");
    let pm = PrimeModulus::new(5).unwrap();
    let alphabet = Alphabet::new(pm, vec![0, 1]).unwrap();
    let form = LinearForm::new(pm, vec![1, 1, 1, 1]);
    let report = min_positive_probability(&form, &alphabet, &OracleCaps::default()).unwrap();
    assert_eq!(report.probability, rat(1, 16), "probability is exactly 1/16");
    assert_eq!(report.lower_bound, rat(1, 16), "the bound itself is 1/16");
    assert!(report.meets_bound);
}

// ---------------------------------------------------------------------------
// Criterion 7: compressor soundness across the whole matrix — fixtures and
// every generator profile × 50 seeds × ε ∈ {1/5, 1/20} — with exact
// verification: containment holds and the defect is ≤ ε.  Whole matrix
// < 5 minutes.
// ---------------------------------------------------------------------------

fn verify_exact_modp(
    original: &ConditionSet,
    candidate: &ConditionSet,
    epsilon: &BigRational,
) -> ApproximationVerdict {
    let caps = OracleCaps {
        state_cap: 4_000_000,
        enumeration_cap: 10_000_000,
    };
    match verify_internal_approximation(original, candidate, epsilon, DensityMethod::Dp, &caps) {
        Ok(v) => v,
        Err(Error::Budget(_)) => verify_internal_approximation(
            original,
            candidate,
            epsilon,
            DensityMethod::Enumerate,
            &caps,
        )
        .expect("enumeration fits the cap"),
        Err(e) => panic!("verification failed: {e}"),
    }
}

fn verify_exact_group(
    original: &GroupConditionSet,
    candidate: &GroupConditionSet,
    epsilon: &BigRational,
) -> ApproximationVerdict {
    verify_group_internal_approximation(
        original,
        candidate,
        epsilon,
        DensityMethod::Enumerate,
        &OracleCaps::default(),
    )
    .expect("enumeration fits the cap")
}

fn compress_group_by_alphabet(
    set: &GroupConditionSet,
    epsilon: &BigRational,
    budget: &Budget,
) -> condcomp::abelian::GroupApproximationResult {
    if set.alphabet().is_full(set.domain()) {
        compress_group_unrestricted(set, epsilon, budget).expect("compression succeeds")
    } else {
        compress_group_restricted(set, epsilon, budget).expect("compression succeeds")
    }
}

#[test]
fn criterion_07_compressor_soundness_matrix() {
    let t0 = Instant::now();
    let budget = Budget::default();
    let epsilons = [rat(1, 5), rat(1, 20)];

    // Fixtures.  The shifted-pair family in the scalar regime; the
    // paired-coordinates family in the group regime.  The product-zero
    // fixture is enumeration-only by design: the scalar compressor's
    // contract covers scalar conditions, and rejecting the multi-
    // dimensional fixture is its documented behavior.
    for k in [4usize, 6, 8] {
        let set = match fixture_shifted_pair(3, k, k).unwrap().parse().unwrap() {
            ParsedInstance::ModP(set) => set,
            _ => unreachable!(),
        };
        for eps in &epsilons {
            let res = compress_mod_p(&set, eps, &budget).expect("compression succeeds");
            assert!(res.proof_defect_bound <= *eps, "certificate bound within ε");
            let v = verify_exact_modp(&set, &res.output, eps);
            assert!(v.containment_ok && v.accepted && v.certified, "shifted-pair k={k}");
        }
    }
    for p in [3u64, 5] {
        let set = match condcomp::gen::fixture_paired_coordinates(p, 4, 4)
            .unwrap()
            .parse()
            .unwrap()
        {
            ParsedInstance::Group(set) => set,
            _ => unreachable!(),
        };
        for eps in &epsilons {
            let res = compress_group_by_alphabet(&set, eps, &budget);
            assert!(res.proof_defect_bound <= *eps);
            let v = verify_exact_group(&set, &res.output, eps);
            assert!(v.containment_ok && v.accepted && v.certified, "paired-coordinates p={p}");
        }
    }
    {
        let multi = match condcomp::gen::fixture_product_zero(3, 4, 4)
            .unwrap()
            .parse()
            .unwrap()
        {
            ParsedInstance::ModP(set) => set,
            _ => unreachable!(),
        };
        assert!(
            matches!(compress_mod_p(&multi, &rat(1, 5), &budget), Err(Error::Invalid(_))),
            "the enumeration-only fixture is rejected, not mis-compressed"
        );
    }

    // Generator profiles.
    for profile in [
        GenProfile::Sunflower,
        GenProfile::Separated,
        GenProfile::SymmetricBall,
        GenProfile::Random,
    ] {
        for seed in 0..50u64 {
            let set = match generate_instance(profile, seed).parse().unwrap() {
                ParsedInstance::ModP(set) => set,
                _ => unreachable!("scalar profiles generate mod-p instances"),
            };
            for eps in &epsilons {
                let res = compress_mod_p(&set, eps, &budget)
                    .unwrap_or_else(|e| panic!("{profile} seed {seed}: {e}"));
                assert!(res.proof_defect_bound <= *eps, "{profile} seed {seed}");
                let v = verify_exact_modp(&set, &res.output, eps);
                assert!(
                    v.containment_ok && v.accepted && v.certified,
                    "{profile} seed {seed} ε={eps}: defect {:?}",
                    v.defect
                );
            }
        }
    }
    for seed in 0..50u64 {
        let set = match generate_instance(GenProfile::GroupRandom, seed).parse().unwrap() {
            ParsedInstance::Group(set) => set,
            _ => unreachable!(),
        };
        for eps in &epsilons {
            let res = compress_group_by_alphabet(&set, eps, &budget);
            assert!(res.proof_defect_bound <= *eps, "group seed {seed}");
            let v = verify_exact_group(&set, &res.output, eps);
            assert!(
                v.containment_ok && v.accepted && v.certified,
                "group seed {seed} ε={eps}: defect {:?}",
                v.defect
            );
        }
    }

    let elapsed = t0.elapsed();
    assert!(
        elapsed < SOUNDNESS_BUDGET,
        "matrix took {elapsed:?} (limit {SOUNDNESS_BUDGET:?})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: compressing the shifted-pair family at fixed (p, S, ε) and
// n ∈ {6, 8, 10, 12} yields the same output count every time — the bound
// does not grow with n.  Expected: exactly one condition.
// ---------------------------------------------------------------------------

fn condition_count(set: &ConditionSet) -> usize {
    set.conditions().len()
}

#[test]
fn criterion_08_output_count_independent_of_n() {
    let budget = Budget::default();
    let eps = rat(1, 10);
    let mut counts = Vec::new();
    for n in [6usize, 8, 10, 12] {
        let set = match fixture_shifted_pair(3, n, n).unwrap().parse().unwrap() {
            ParsedInstance::ModP(set) => set,
            _ => unreachable!(),
        };
        let res = compress_mod_p(&set, &eps, &budget).expect("compression succeeds");
        counts.push((n, condition_count(&res.output)));
    }
    assert!(
        counts.iter().all(|&(_, c)| c == counts[0].1),
        "output count varies with n: {counts:?}"
    );
    assert_eq!(counts[0].1, 1, "the family collapses to a single condition");
}

// ---------------------------------------------------------------------------
// Criterion 9: joint value distributions of homomorphism tuples over Gⁿ are
// uniform on the annihilator of their relation subgroup, with
// |K|·|Y| = |H|^k, and independent tuples are uniform on all of H^k.
// Exhaustive over |G| ≤ 4, |H| ≤ 8, k ≤ 2, n ≤ 4 wherever the tuple space
// has at most 2048 members; dense fixed-seed sampling above that; plus 200
// seeded random instances.
// ---------------------------------------------------------------------------

const CR9_EXHAUSTIVE_CAP: u64 = 2048;
const CR9_SAMPLES_PER_SHAPE: u64 = 48;

fn all_homs(g: &FiniteAbelianGroup, h: &FiniteAbelianGroup) -> Vec<GroupHom> {
    let per_factor: Vec<Vec<u64>> = g
        .factors()
        .iter()
        .map(|&m| (0..h.order()).filter(|&y| h.scale(y, m) == 0).collect())
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; per_factor.len()];
    loop {
        let images: Vec<u64> = idx.iter().zip(&per_factor).map(|(&i, v)| v[i]).collect();
        out.push(GroupHom::new(g, h, images).expect("images validated"));
        let mut j = 0;
        loop {
            if j == idx.len() {
                return out;
            }
            idx[j] += 1;
            if idx[j] < per_factor[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Decodes instance index `idx` into k maps of n coordinate homs each.
fn maps_from_index(homs: &[GroupHom], n: usize, k: usize, mut idx: u64) -> Vec<GroupMap> {
    let base = homs.len() as u64;
    (0..k)
        .map(|_| {
            let coords: Vec<GroupHom> = (0..n)
                .map(|_| {
                    let hom = homs[(idx % base) as usize].clone();
                    idx /= base;
                    hom
                })
                .collect();
            GroupMap::new(coords)
        })
        .collect()
}

fn check_distribution_props(
    g: &FiniteAbelianGroup,
    h: &FiniteAbelianGroup,
    maps: &[GroupMap],
    n: usize,
    context: &str,
) {
    let k = maps.len();
    let caps = OracleCaps::default();
    let tuple_space = (h.order() as usize).pow(k as u32);

    // Direct enumeration of Gⁿ: the in-test route.
    let mut direct = vec![0u64; tuple_space];
    let mut x = vec![0u64; n];
    loop {
        let mut state = 0usize;
        let mut base = 1usize;
        for map in maps {
            state += (map.eval(g, h, &x) as usize) * base;
            base *= h.order() as usize;
        }
        direct[state] += 1;
        let mut j = 0;
        loop {
            if j == n {
                break;
            }
            x[j] += 1;
            if x[j] < g.order() {
                break;
            }
            x[j] = 0;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    let total: u64 = direct.iter().sum();

    // Library distribution agrees exactly.
    let alphabet = GroupAlphabet::full(g);
    let dist = group_tuple_distribution(g, h, maps, &alphabet, &caps).unwrap();
    for (state, &c) in direct.iter().enumerate() {
        let mut t = state;
        let tuple: Vec<u64> = (0..k)
            .map(|_| {
                let d = (t % h.order() as usize) as u64;
                t /= h.order() as usize;
                d
            })
            .collect();
        assert_eq!(
            dist.count(&tuple),
            &BigUint::from(c),
            "{context}: distribution mismatch at {tuple:?}"
        );
    }

    // Uniform on the annihilator, with |K| · |Y| = |H|^k.
    let rel = relation_subgroup_and_annihilator(g, h, maps, &caps).unwrap();
    let y: std::collections::BTreeSet<&Vec<u64>> = rel.annihilator.iter().collect();
    assert_eq!(
        rel.relation_tuples.len() * rel.annihilator.len(),
        tuple_space,
        "{context}: |K|·|Y| ≠ |H|^k"
    );
    assert_eq!(
        total % rel.annihilator.len() as u64,
        0,
        "{context}: mass not divisible by |Y|"
    );
    let per = total / rel.annihilator.len() as u64;
    for (state, &c) in direct.iter().enumerate() {
        let mut t = state;
        let tuple: Vec<u64> = (0..k)
            .map(|_| {
                let d = (t % h.order() as usize) as u64;
                t /= h.order() as usize;
                d
            })
            .collect();
        let expected = if y.contains(&tuple) { per } else { 0 };
        assert_eq!(
            c, expected,
            "{context}: not uniform-on-Y at {tuple:?} (count {c}, expected {expected})"
        );
    }

    // Independence ⟺ Y is everything.
    let indep = is_independent(g, h, maps, &caps).unwrap();
    if indep.independent {
        assert_eq!(rel.relation_tuples.len(), 1, "{context}: independent but |K| > 1");
        assert_eq!(rel.annihilator.len(), tuple_space);
    } else {
        assert!(rel.relation_tuples.len() > 1, "{context}: dependent but K trivial");
        assert!(indep.witness.is_some());
    }
}

#[test]
fn criterion_09_group_distribution_exactness() {
    let g_shapes: [&[u64]; 4] = [&[2], &[3], &[4], &[2, 2]];
    let h_shapes: [&[u64]; 10] = [
        &[2], &[3], &[4], &[2, 2], &[5], &[6], &[7], &[8], &[2, 4], &[2, 2, 2],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x960F);
    let mut exhaustive_shapes = 0u32;
    let mut sampled_shapes = 0u32;

    for gf in g_shapes {
        let g = FiniteAbelianGroup::new(gf.to_vec()).unwrap();
        for hf in h_shapes {
            let h = FiniteAbelianGroup::new(hf.to_vec()).unwrap();
            let homs = all_homs(&g, &h);
            for n in 1..=4usize {
                for k in 1..=2usize {
                    let space = (homs.len() as u64).pow((n * k) as u32);
                    let context = format!("G={gf:?} H={hf:?} n={n} k={k}");
                    if space <= CR9_EXHAUSTIVE_CAP {
                        exhaustive_shapes += 1;
                        for idx in 0..space {
                            let maps = maps_from_index(&homs, n, k, idx);
                            check_distribution_props(&g, &h, &maps, n, &context);
                        }
                    } else {
                        sampled_shapes += 1;
                        for _ in 0..CR9_SAMPLES_PER_SHAPE {
                            let idx = rng.gen_range(0..space);
                            let maps = maps_from_index(&homs, n, k, idx);
                            check_distribution_props(&g, &h, &maps, n, &context);
                        }
                    }
                }
            }
        }
    }
    assert!(exhaustive_shapes > 0 && sampled_shapes > 0);

    // 200 extra seeded random instances across the whole grid.
    for _ in 0..200 {
        let gf = *g_shapes.choose(&mut rng).unwrap();
        let hf = *h_shapes.choose(&mut rng).unwrap();
        let g = FiniteAbelianGroup::new(gf.to_vec()).unwrap();
        let h = FiniteAbelianGroup::new(hf.to_vec()).unwrap();
        let homs = all_homs(&g, &h);
        let n = rng.gen_range(1..=4usize);
        let k = rng.gen_range(1..=2usize);
        let space = (homs.len() as u64).pow((n * k) as u32);
        let idx = rng.gen_range(0..space);
        let maps = maps_from_index(&homs, n, k, idx);
        check_distribution_props(&g, &h, &maps, n, &format!("random G={gf:?} H={hf:?}"));
    }
}

// ---------------------------------------------------------------------------
// Criterion 10: the full-alphabet compressor on 30 seeded instances
// (|G|, |H| ≤ 8, n ≤ 6, ε = 1/10) and the restricted-alphabet compressor on
// 10 tiny instances (|G| ≤ 3, |H| ≤ 4, n ≤ 6) all pass exact verification;
// on full-alphabet instances, at ε below one point's density both
// compressors must preserve the satisfying set exactly, so their outputs
// have identical satisfying sets (checked point by point).
// ---------------------------------------------------------------------------

fn assert_same_satisfying_sets(
    a: &GroupConditionSet,
    b: &GroupConditionSet,
    original: &GroupConditionSet,
    context: &str,
) {
    let g = original.domain();
    let n = original.n();
    let mut x = vec![0u64; n];
    loop {
        let sa = a.satisfied_by(&x);
        let sb = b.satisfied_by(&x);
        let so = original.satisfied_by(&x);
        assert_eq!(sa, sb, "{context}: outputs disagree at {x:?}");
        assert_eq!(sa, so, "{context}: output differs from original at {x:?}");
        let mut j = 0;
        loop {
            if j == n {
                return;
            }
            x[j] += 1;
            if x[j] < g.order() {
                break;
            }
            x[j] = 0;
            j += 1;
        }
    }
}

#[test]
fn criterion_10_group_compressor_soundness() {
    let budget = Budget::default();
    let eps = rat(1, 10);

    // 30 seeded full-alphabet instances, via the group generator profile.
    let mut found = 0u32;
    let mut seed = 0u64;
    while found < 30 {
        let set = match generate_instance(GenProfile::GroupRandom, seed).parse().unwrap() {
            ParsedInstance::Group(set) => set,
            _ => unreachable!(),
        };
        seed += 1;
        if !set.alphabet().is_full(set.domain()) {
            continue;
        }
        found += 1;
        let res = compress_group_unrestricted(&set, &eps, &budget)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(res.proof_defect_bound <= eps);
        let v = verify_exact_group(&set, &res.output, &eps);
        assert!(
            v.containment_ok && v.accepted && v.certified,
            "seed {seed}: defect {:?}",
            v.defect
        );

        // Cross-agreement: below one point's density both compressors must
        // reproduce the satisfying set exactly.
        let points = (set.domain().order() as i64).pow(set.n() as u32);
        let tiny = BigRational::new(BigInt::from(1), BigInt::from(2 * points));
        let a = compress_group_unrestricted(&set, &tiny, &budget)
            .unwrap_or_else(|e| panic!("seed {seed} tiny ε full-alphabet: {e}"));
        let b = compress_group_restricted(&set, &tiny, &budget)
            .unwrap_or_else(|e| panic!("seed {seed} tiny ε restricted: {e}"));
        assert_same_satisfying_sets(&a.output, &b.output, &set, &format!("seed {seed}"));
    }

    // 10 tiny restricted-alphabet instances built directly.
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E57);
    let tiny_targets: [&[u64]; 4] = [&[2], &[3], &[4], &[2, 2]];
    for i in 0..10 {
        let g = FiniteAbelianGroup::new(vec![3]).unwrap();
        let h = FiniteAbelianGroup::new(tiny_targets.choose(&mut rng).unwrap().to_vec()).unwrap();
        let mut elems: Vec<u64> = vec![0, 1, 2];
        elems.shuffle(&mut rng);
        let mut s = elems[..2].to_vec();
        s.sort_unstable();
        let alphabet = GroupAlphabet::new(&g, s).unwrap();
        let n = rng.gen_range(2..=6usize);
        let homs = all_homs(&g, &h);
        let count = rng.gen_range(2..=4usize);
        let conditions: Vec<HCondition> = (0..count)
            .map(|_| {
                let coords: Vec<GroupHom> = (0..n)
                    .map(|_| homs.choose(&mut rng).unwrap().clone())
                    .collect();
                let mut allowed = GroupSubset::empty();
                for v in h.elements() {
                    if rng.gen_bool(0.5) {
                        allowed.insert(v);
                    }
                }
                if allowed.len() == 0 {
                    allowed.insert(0);
                }
                HCondition::new(GroupMap::new(coords), allowed)
            })
            .collect();
        let set = GroupConditionSet::new(g, h, alphabet, n, conditions).unwrap();
        let res = compress_group_restricted(&set, &eps, &budget)
            .unwrap_or_else(|e| panic!("tiny instance {i}: {e}"));
        assert!(res.proof_defect_bound <= eps);
        let v = verify_exact_group(&set, &res.output, &eps);
        assert!(
            v.containment_ok && v.accepted && v.certified,
            "tiny instance {i}: defect {:?}",
            v.defect
        );
    }
}
