//! Bundled example documents: two unstable-sliding linear pairs, a four-mode
//! piecewise-quadratic example, and a two-mode polynomial system with a
//! quartic CLF.

use crate::clf::{load_clf, Pwsclf};
use crate::model::{load_system, SwitchedSystem};
use crate::switchlaw::{RegionLaw, SwitchingLaw};

pub const EX1_SYSTEM: &str = r#"{
  "dimension": 2,
  "subsystems": [
    {"kind": "linear", "A": [[-3, -1], [12, 2]]},
    {"kind": "linear", "A": [[-3, 1], [-12, 2]]}
  ]
}
"#;

/// Mode 1 on `x₁ ≥ 0`, mode 2 on `x₁ < 0`.
pub const EX1_REGION_LAW: &str = r#"{
  "surfaces": [[1, 0]],
  "rules": [
    {"signs": "+", "mode": 1},
    {"signs": "-", "mode": 2}
  ]
}
"#;

pub const EX2_SYSTEM: &str = EX1_SYSTEM;

/// Mode 1 on the second and fourth quadrants, mode 2 on the first and third.
pub const EX2_REGION_LAW: &str = r#"{
  "surfaces": [[1, 0], [0, 1]],
  "rules": [
    {"signs": "+-", "mode": 1},
    {"signs": "-+", "mode": 1},
    {"signs": "++", "mode": 2},
    {"signs": "--", "mode": 2}
  ]
}
"#;

pub const EX3_SYSTEM: &str = r#"{
  "dimension": 2,
  "subsystems": [
    {"kind": "linear", "A": [[0, -4], [-2, 0]]},
    {"kind": "linear", "A": [[0, 0], [-3.3333333333333335, 0]]},
    {"kind": "linear", "A": [[0, -3], [-2, 0]]},
    {"kind": "linear", "A": [[0, 1], [1, -1]]}
  ]
}
"#;

/// `Ω₁ = {xᵀ(P₁ − P₂)x > 0}`, `Ω₂` its complement.
pub const EX3_CLF: &str = r#"{
  "kind": "piecewise_quadratic",
  "P": [[[2, 0], [0, 1]], [[1, -1], [-1, 4]]],
  "H": [[[1, 1], [1, -3]], [[0, 0], [0, 0]]]
}
"#;

pub const NONLINEAR_SYSTEM: &str = r#"{
  "dimension": 2,
  "subsystems": [
    {"kind": "polynomial", "components": [
      [{"coeff": -1, "exponents": [1, 0]}, {"coeff": -1, "exponents": [0, 1]}],
      [{"coeff": 1, "exponents": [3, 0]}, {"coeff": 0.5, "exponents": [0, 1]}]
    ]},
    {"kind": "polynomial", "components": [
      [{"coeff": 1, "exponents": [1, 0]}, {"coeff": -1, "exponents": [0, 1]}],
      [{"coeff": 1, "exponents": [3, 0]}, {"coeff": -1.5, "exponents": [0, 1]}]
    ]}
  ]
}
"#;

/// `V(x) = x₁⁴ + 2x₂²`
pub const NONLINEAR_CLF: &str = r#"{
  "kind": "smooth_polynomial",
  "poly": [
    {"coeff": 1, "exponents": [4, 0]},
    {"coeff": 2, "exponents": [0, 2]}
  ]
}
"#;

/// Two saddles whose equal-weight average is Hurwitz.
pub const SADDLE_PAIR_SYSTEM: &str = r#"{
  "dimension": 2,
  "subsystems": [
    {"kind": "linear", "A": [[1, 1], [-1, -3]]},
    {"kind": "linear", "A": [[-3, 1], [-1, 1]]}
  ]
}
"#;

pub fn ex1_system() -> SwitchedSystem {
    load_system(EX1_SYSTEM).expect("bundled document")
}

pub fn ex1_law() -> RegionLaw {
    RegionLaw::from_json(ex1_system(), EX1_REGION_LAW).expect("bundled document")
}

pub fn ex2_law() -> RegionLaw {
    RegionLaw::from_json(load_system(EX2_SYSTEM).expect("bundled document"), EX2_REGION_LAW).expect("bundled document")
}

pub fn ex3_system() -> SwitchedSystem {
    load_system(EX3_SYSTEM).expect("bundled document")
}

pub fn ex3_clf() -> Pwsclf {
    load_clf(EX3_CLF).expect("bundled document")
}

pub fn ex3_law() -> SwitchingLaw {
    SwitchingLaw::new(ex3_system(), ex3_clf(), Default::default()).expect("bundled document")
}

pub fn nonlinear_system() -> SwitchedSystem {
    load_system(NONLINEAR_SYSTEM).expect("bundled document")
}

pub fn nonlinear_clf() -> Pwsclf {
    load_clf(NONLINEAR_CLF).expect("bundled document")
}

pub fn nonlinear_law() -> SwitchingLaw {
    SwitchingLaw::new(nonlinear_system(), nonlinear_clf(), Default::default()).expect("bundled document")
}

pub fn saddle_pair() -> SwitchedSystem {
    load_system(SADDLE_PAIR_SYSTEM).expect("bundled document")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_documents_load() {
        assert_eq!(ex1_system().mode_count(), 2);
        assert_eq!(ex2_law().document().rules.len(), 4);
        assert_eq!(ex3_law().clf().piece_count(), 2);
        assert_eq!(nonlinear_law().system().mode_count(), 2);
        assert_eq!(saddle_pair().mode_count(), 2);
        let a2 = ex3_system().linear_matrices().unwrap()[1].clone();
        assert_eq!(a2[(1, 0)], -10.0 / 3.0);
    }
}
