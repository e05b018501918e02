//! Condition sets over restricted alphabets and their compression into
//! internally ε-approximating sets of boundedly many conditions.
//!
//! The library covers two regimes:
//!
//! * **Mod-p conditions** — pairs (φ, E) of a linear form φ: 𝔽_pⁿ → 𝔽_p and
//!   an allowed set E ⊆ 𝔽_p, restricted to points in Sⁿ for an alphabet
//!   S ⊆ 𝔽_p ([`algebra`], [`compress`]).
//! * **Homomorphic conditions** — pairs (φ, E) of a homomorphism Gⁿ → H
//!   between finite Abelian groups and E ⊆ H ([`abelian`]).
//!
//! [`oracle`] supplies exact big-integer densities and verification of
//! every approximation the compressors emit; [`fourier`] supplies the
//! character-sum bounds the compression arguments rest on; [`schema`] and
//! [`gen`] serve the JSON instance format and seeded instance generators
//! used by the command-line front end.
//!
//! ```
//! use condcomp::algebra::{Alphabet, ConditionSet, LinearForm, ModPCondition,
//!     PrimeModulus, ResidueSet};
//! use condcomp::oracle::{satisfying_density, DensityMethod, DensityResult, OracleCaps};
//!
//! let p = PrimeModulus::new(3).unwrap();
//! let s = Alphabet::new(p, vec![0, 1]).unwrap();
//! let cond = ModPCondition::new(
//!     LinearForm::new(p, vec![1, 1]),
//!     ResidueSet::from_residues(p, [0, 1]).unwrap(),
//! );
//! let set = ConditionSet::scalar(s, 2, vec![cond]).unwrap();
//! let d = satisfying_density(&set, DensityMethod::Enumerate, &OracleCaps::default()).unwrap();
//! match d {
//!     DensityResult::Exact(v) => assert_eq!(v.to_string(), "3/4"),
//!     _ => unreachable!(),
//! }
//! ```

pub mod abelian;
pub mod algebra;
pub mod compress;
pub mod error;
pub mod fourier;
pub mod gen;
pub mod oracle;
pub mod schema;

pub use error::{Error, Result};
