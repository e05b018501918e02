//! Seeded instance generation.  Every profile is a pure function of the
//! seed: the same seed always yields the same instance, byte for byte.

use crate::algebra::PrimeModulus;
use crate::error::{Error, Result};
use crate::schema::{AllowedField, GroupConditionFile, InstanceFile, ModPConditionFile};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Named generation profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenProfile {
    /// Conditions sharing a common core plus pairwise disjoint petals.
    Sunflower,
    /// A few dense forms with widely separated coefficient vectors.
    Separated,
    /// A symmetric family: one coefficient pattern moved across coordinates.
    SymmetricBall,
    /// Unstructured conditions with random supports and allowed sets.
    Random,
    /// A random instance over finite Abelian groups.
    GroupRandom,
}

impl GenProfile {
    pub const ALL: [GenProfile; 5] = [
        GenProfile::Sunflower,
        GenProfile::Separated,
        GenProfile::SymmetricBall,
        GenProfile::Random,
        GenProfile::GroupRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenProfile::Sunflower => "sunflower",
            GenProfile::Separated => "separated",
            GenProfile::SymmetricBall => "symmetric-ball",
            GenProfile::Random => "random",
            GenProfile::GroupRandom => "group-random",
        }
    }
}

impl fmt::Display for GenProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GenProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sunflower" => Ok(GenProfile::Sunflower),
            "separated" => Ok(GenProfile::Separated),
            "symmetric-ball" => Ok(GenProfile::SymmetricBall),
            "random" => Ok(GenProfile::Random),
            "group-random" => Ok(GenProfile::GroupRandom),
            other => Err(Error::invalid(format!(
                "unknown profile '{other}' (expected sunflower, separated, \
                 symmetric-ball, random, or group-random)"
            ))),
        }
    }
}

/// Generates an instance for the given profile, fully determined by the seed.
pub fn generate_instance(profile: GenProfile, seed: u64) -> InstanceFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match profile {
        GenProfile::Sunflower => gen_sunflower(&mut rng),
        GenProfile::Separated => gen_separated(&mut rng),
        GenProfile::SymmetricBall => gen_symmetric_ball(&mut rng),
        GenProfile::Random => gen_random(&mut rng),
        GenProfile::GroupRandom => gen_group_random(&mut rng),
    }
}

// ---------------------------------------------------------------------------
// Mod-p profiles
// ---------------------------------------------------------------------------

fn pick_prime(rng: &mut ChaCha8Rng) -> u64 {
    *[2u64, 3, 5].choose(rng).expect("nonempty")
}

fn pick_alphabet(rng: &mut ChaCha8Rng, p: u64) -> Vec<u64> {
    if p == 2 {
        return vec![0, 1];
    }
    let size = rng.gen_range(2..=p as usize);
    let mut all: Vec<u64> = (0..p).collect();
    all.shuffle(rng);
    let mut s = all[..size].to_vec();
    s.sort_unstable();
    s
}

/// A nonempty proper residue subset of F_p (p ≥ 2).
fn pick_proper_allowed(rng: &mut ChaCha8Rng, p: u64) -> Vec<u64> {
    let mut set: Vec<u64> = (0..p).filter(|_| rng.gen_bool(0.5)).collect();
    if set.is_empty() {
        set.push(rng.gen_range(0..p));
    }
    if set.len() == p as usize {
        let drop = rng.gen_range(0..p as usize);
        set.remove(drop);
    }
    set
}

fn scalar_condition(coeffs: Vec<u64>, e: Vec<u64>) -> ModPConditionFile {
    ModPConditionFile {
        coeffs: Some(coeffs),
        e: Some(AllowedField::Residues(e)),
        ..ModPConditionFile::default()
    }
}

fn gen_sunflower(rng: &mut ChaCha8Rng) -> InstanceFile {
    let p = pick_prime(rng);
    let s = pick_alphabet(rng, p);
    let n = rng.gen_range(6..=10usize);
    let petals = rng.gen_range(3..=(n - 2).min(6));
    let mut center = vec![0u64; n];
    for slot in center.iter_mut().take(2) {
        *slot = rng.gen_range(0..p);
    }
    let mut petal_coords: Vec<usize> = (2..n).collect();
    petal_coords.shuffle(rng);
    let e = pick_proper_allowed(rng, p);
    let conditions = petal_coords[..petals]
        .iter()
        .map(|&c| {
            let mut coeffs = center.clone();
            coeffs[c] = rng.gen_range(1..p.max(2));
            scalar_condition(coeffs, e.clone())
        })
        .collect();
    InstanceFile::ModP { p, s, n, conditions }
}

fn gen_separated(rng: &mut ChaCha8Rng) -> InstanceFile {
    let p = pick_prime(rng);
    let s = pick_alphabet(rng, p);
    let n = rng.gen_range(8..=10usize);
    let count = rng.gen_range(2..=3usize);
    let conditions = (0..count)
        .map(|_| {
            let coeffs = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.75) {
                        rng.gen_range(1..p.max(2))
                    } else {
                        0
                    }
                })
                .collect();
            scalar_condition(coeffs, pick_proper_allowed(rng, p))
        })
        .collect();
    InstanceFile::ModP { p, s, n, conditions }
}

fn gen_symmetric_ball(rng: &mut ChaCha8Rng) -> InstanceFile {
    let p = pick_prime(rng);
    let s = pick_alphabet(rng, p);
    let n = rng.gen_range(6..=10usize);
    let count = rng.gen_range(3..=(n - 2).min(5));
    let mut center = vec![0u64; n];
    for slot in center.iter_mut().take(2) {
        *slot = rng.gen_range(0..p);
    }
    let pattern = rng.gen_range(1..p.max(2));
    let mut coords: Vec<usize> = (2..n).collect();
    coords.shuffle(rng);
    let e = pick_proper_allowed(rng, p);
    let conditions = coords[..count]
        .iter()
        .map(|&c| {
            let mut coeffs = center.clone();
            coeffs[c] = pattern;
            scalar_condition(coeffs, e.clone())
        })
        .collect();
    InstanceFile::ModP { p, s, n, conditions }
}

fn gen_random(rng: &mut ChaCha8Rng) -> InstanceFile {
    let p = pick_prime(rng);
    let s = pick_alphabet(rng, p);
    let n = rng.gen_range(4..=10usize);
    let count = rng.gen_range(1..=6usize);
    let conditions = (0..count)
        .map(|_| {
            let coeffs = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        rng.gen_range(1..p.max(2))
                    } else {
                        0
                    }
                })
                .collect();
            // May be empty or full: both degenerate shapes are worth hitting.
            let e: Vec<u64> = (0..p).filter(|_| rng.gen_bool(0.5)).collect();
            scalar_condition(coeffs, e)
        })
        .collect();
    InstanceFile::ModP { p, s, n, conditions }
}

// ---------------------------------------------------------------------------
// Group profile
// ---------------------------------------------------------------------------

const SMALL_GROUPS: [&[u64]; 8] = [
    &[2],
    &[3],
    &[4],
    &[2, 2],
    &[5],
    &[6],
    &[8],
    &[2, 4],
];

const TINY_GROUPS: [&[u64]; 4] = [&[2], &[3], &[4], &[2, 2]];

fn group_order(factors: &[u64]) -> u64 {
    factors.iter().product()
}

/// Uniform valid generator image for a factor of order `m`: any y with m·y = 0.
fn valid_images(h: &[u64], m: u64) -> Vec<u64> {
    let order = group_order(h);
    (0..order)
        .filter(|&y| {
            // Componentwise m·y ≡ 0 in the mixed-radix encoding.
            let mut rest = y;
            h.iter().all(|&f| {
                let comp = rest % f;
                rest /= f;
                (comp * (m % f)) % f == 0
            })
        })
        .collect()
}

fn gen_group_random(rng: &mut ChaCha8Rng) -> InstanceFile {
    let restricted = rng.gen_bool(0.5);
    let (g, h, s): (Vec<u64>, Vec<u64>, Vec<u64>) = if restricted {
        let g = (*[&[3u64][..], &[4u64][..]].choose(rng).expect("nonempty")).to_vec();
        let h = TINY_GROUPS.choose(rng).expect("nonempty").to_vec();
        let order = group_order(&g);
        let size = rng.gen_range(2..order as usize);
        let mut all: Vec<u64> = (0..order).collect();
        all.shuffle(rng);
        let mut s = all[..size].to_vec();
        s.sort_unstable();
        (g, h, s)
    } else {
        let g = SMALL_GROUPS.choose(rng).expect("nonempty").to_vec();
        let h = SMALL_GROUPS.choose(rng).expect("nonempty").to_vec();
        let s = (0..group_order(&g)).collect();
        (g, h, s)
    };
    let n = rng.gen_range(2..=6usize);
    let count = if restricted {
        rng.gen_range(2..=4usize)
    } else {
        rng.gen_range(2..=5usize)
    };
    let h_order = group_order(&h);
    let conditions = (0..count)
        .map(|_| {
            let images = (0..n)
                .map(|_| {
                    g.iter()
                        .map(|&m| {
                            if rng.gen_bool(0.5) {
                                0
                            } else {
                                *valid_images(&h, m).choose(rng).expect("0 is always valid")
                            }
                        })
                        .collect()
                })
                .collect();
            let mut e: Vec<u64> = (0..h_order).filter(|_| rng.gen_bool(0.5)).collect();
            if e.is_empty() {
                e.push(rng.gen_range(0..h_order));
            }
            GroupConditionFile {
                images,
                e: Some(e),
                e_complement: None,
            }
        })
        .collect();
    InstanceFile::Group { g, h, s, n, conditions }
}

// ---------------------------------------------------------------------------
// Fixture instances
// ---------------------------------------------------------------------------

/// The two-valued family x_1 + x_i over the alphabet {0,1}: k − 1
/// conditions on n coordinates, each allowing {0, 1}.
pub fn fixture_shifted_pair(p: u64, k: usize, n: usize) -> Result<InstanceFile> {
    PrimeModulus::new(p)?;
    fixture_bounds(p, k, n)?;
    let conditions = (1..k)
        .map(|i| {
            let mut coeffs = vec![0u64; n];
            coeffs[0] = 1;
            coeffs[i] = 1;
            scalar_condition(coeffs, vec![0, 1])
        })
        .collect();
    Ok(InstanceFile::ModP {
        p,
        s: vec![0, 1],
        n,
        conditions,
    })
}

/// The paired-coordinate family (x_1, x_i) into Z_p × Z_p with allowed set
/// ({0} × Z_p) ∪ {(1, 1)}, over the full alphabet Z_p.
pub fn fixture_paired_coordinates(p: u64, k: usize, n: usize) -> Result<InstanceFile> {
    PrimeModulus::new(p)?;
    fixture_bounds(p, k, n)?;
    if p * p > 64 {
        return Err(Error::invalid(
            "target group Z_p x Z_p exceeds the supported order",
        ));
    }
    // Target Z_p × Z_p with mixed-radix encoding (a, b) -> a + p·b.
    let mut e: Vec<u64> = (0..p).map(|b| p * b).collect();
    e.push(1 + p);
    e.sort_unstable();
    let conditions = (1..k)
        .map(|i| {
            let mut images = vec![vec![0u64]; n];
            images[0] = vec![1];
            images[i] = vec![p];
            GroupConditionFile {
                images,
                e: Some(e.clone()),
                e_complement: None,
            }
        })
        .collect();
    Ok(InstanceFile::Group {
        g: vec![p],
        h: vec![p, p],
        s: (0..p).collect(),
        n,
        conditions,
    })
}

/// The quadratic family x_1 · x_i = 0, linearized: each product condition
/// becomes the pair map (x_1, x_i) with allowed set {(a, b) : a·b ≡ 0}.
/// Used as an enumeration fixture only.
pub fn fixture_product_zero(p: u64, k: usize, n: usize) -> Result<InstanceFile> {
    PrimeModulus::new(p)?;
    fixture_bounds(p, k, n)?;
    let mut allowed: Vec<Vec<u64>> = Vec::new();
    for a in 0..p {
        for b in 0..p {
            if (a * b) % p == 0 {
                allowed.push(vec![a, b]);
            }
        }
    }
    allowed.sort();
    let conditions = (1..k)
        .map(|i| {
            let mut row0 = vec![0u64; n];
            row0[0] = 1;
            let mut row1 = vec![0u64; n];
            row1[i] = 1;
            ModPConditionFile {
                rows: Some(vec![row0, row1]),
                e: Some(AllowedField::Tuples(allowed.clone())),
                ..ModPConditionFile::default()
            }
        })
        .collect();
    Ok(InstanceFile::ModP {
        p,
        s: (0..p).collect(),
        n,
        conditions,
    })
}

fn fixture_bounds(p: u64, k: usize, n: usize) -> Result<()> {
    let _ = p;
    if k < 2 {
        return Err(Error::invalid("fixtures need k >= 2"));
    }
    if n < k {
        return Err(Error::invalid("fixtures need n >= k"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_valid() {
        for profile in GenProfile::ALL {
            for seed in 0..25u64 {
                let a = generate_instance(profile, seed);
                let b = generate_instance(profile, seed);
                assert_eq!(a, b, "{profile} seed {seed}");
                assert_eq!(a.to_json(), b.to_json(), "{profile} seed {seed}");
                a.parse()
                    .unwrap_or_else(|e| panic!("{profile} seed {seed}: {e}"));
            }
            let x = generate_instance(profile, 1);
            let y = generate_instance(profile, 2);
            assert_ne!(x, y, "{profile}: distinct seeds should differ");
        }
    }

    #[test]
    fn profile_names_round_trip() {
        for profile in GenProfile::ALL {
            assert_eq!(profile.name().parse::<GenProfile>().unwrap(), profile);
        }
        assert!("florp".parse::<GenProfile>().is_err());
    }

    #[test]
    fn fixtures_parse_and_match_shapes() {
        let f1 = fixture_shifted_pair(3, 6, 6).unwrap();
        match &f1 {
            InstanceFile::ModP { conditions, .. } => assert_eq!(conditions.len(), 5),
            _ => panic!("expected a mod-p instance"),
        }
        f1.parse().unwrap();

        let f2 = fixture_paired_coordinates(5, 4, 4).unwrap();
        match &f2 {
            InstanceFile::Group { h, conditions, .. } => {
                assert_eq!(h, &vec![5, 5]);
                assert_eq!(conditions.len(), 3);
                // ({0} × Z_5) ∪ {(1,1)} has six elements.
                assert_eq!(conditions[0].e.as_ref().unwrap().len(), 6);
            }
            _ => panic!("expected a group instance"),
        }
        f2.parse().unwrap();

        let f3 = fixture_product_zero(3, 5, 5).unwrap();
        match &f3 {
            InstanceFile::ModP { conditions, .. } => {
                // {(a,b): ab=0 mod 3} = ({0}×F_3) ∪ (F_3×{0}) has five tuples.
                match conditions[0].e.as_ref().unwrap() {
                    AllowedField::Tuples(t) => assert_eq!(t.len(), 5),
                    _ => panic!("expected tuples"),
                }
            }
            _ => panic!("expected a mod-p instance"),
        }
        f3.parse().unwrap();
        assert!(fixture_shifted_pair(3, 1, 4).is_err());
        assert!(fixture_paired_coordinates(11, 3, 3).is_err());
    }
}
