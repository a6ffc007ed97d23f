//! Non-adaptive step-size sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `γ_n = K / (K + n − 1)`; `K = 2` is the familiar `2 / (n + 1)`.
    Harmonic { k: u32 },
    /// `γ_n = n^{−α}` with `α ∈ [0.5, 1)`.
    Power { alpha: f64 },
}

impl StepSchedule {
    pub const ANYTIME: StepSchedule = StepSchedule::Harmonic { k: 2 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Harmonic { k: 0 } => Err(Error::InvalidArgument(
                "harmonic schedule needs K >= 1".into(),
            )),
            StepSchedule::Power { alpha } if !(0.5..1.0).contains(&alpha) => Err(
                Error::InvalidArgument(format!("power schedule exponent {alpha} outside [0.5, 1)")),
            ),
            _ => Ok(()),
        }
    }

    /// Step size for the `n`-th step, `n ≥ 1`.
    pub fn step_size(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidArgument("step index starts at 1".into()));
        }
        Ok(match *self {
            StepSchedule::Harmonic { k } => {
                let k = f64::from(k);
                k / (k + n as f64 - 1.0)
            }
            StepSchedule::Power { alpha } => (n as f64).powf(-alpha),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let h = StepSchedule::Harmonic { k: 2 };
        assert_eq!(h.step_size(1).unwrap(), 1.0);
        assert_eq!(h.step_size(3).unwrap(), 0.5);
        let p = StepSchedule::Power { alpha: 0.75 };
        assert!((p.step_size(16).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_index_is_rejected() {
        assert!(StepSchedule::ANYTIME.step_size(0).is_err());
    }

    #[test]
    fn validation() {
        assert!(StepSchedule::Harmonic { k: 0 }.validate().is_err());
        assert!(StepSchedule::Power { alpha: 1.0 }.validate().is_err());
        assert!(StepSchedule::Power { alpha: 0.4 }.validate().is_err());
        assert!(StepSchedule::Power { alpha: 0.5 }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn harmonic_starts_at_one_and_decreases(k in 1u32..50, n in 1usize..100_000) {
            let s = StepSchedule::Harmonic { k };
            prop_assert_eq!(s.step_size(1).unwrap(), 1.0);
            prop_assert!(s.step_size(n + 1).unwrap() < s.step_size(n).unwrap());
        }

        #[test]
        fn power_decreases(alpha in 0.5f64..0.999, n in 1usize..100_000) {
            let s = StepSchedule::Power { alpha };
            let g = s.step_size(n).unwrap();
            prop_assert!(g > 0.0 && g <= 1.0);
            prop_assert!(s.step_size(n + 1).unwrap() < g);
        }
    }
}
