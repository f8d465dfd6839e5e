use serde::{Deserialize, Serialize};

/// Time to test one boolean check outcome on real hardware.
pub const PER_ATTEMPT_MS: f64 = 2.69;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

/// Brute-force cost model for an `entropy_bits`-bit secret.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBudget {
    pub entropy_bits: u32,
    pub per_attempt_ms: f64,
    /// Re-randomization period, if the secret is re-drawn.
    pub window_ms: Option<f64>,
}

impl EntropyBudget {
    pub fn new(entropy_bits: u32, per_attempt_ms: f64, window_ms: Option<f64>) -> Self {
        assert!(per_attempt_ms > 0.0);
        Self {
            entropy_bits,
            per_attempt_ms,
            window_ms,
        }
    }

    pub fn max_attempts_in_window(&self) -> Option<u64> {
        self.window_ms
            .map(|w| (w / self.per_attempt_ms).floor() as u64)
    }

    /// Expected attempts for a uniform secret: half the space.
    pub fn expected_attempts(&self) -> u128 {
        match self.entropy_bits {
            0 => 1,
            n if n >= 128 => u128::MAX,
            n => 1u128 << (n - 1),
        }
    }

    pub fn expected_ms(&self) -> f64 {
        self.expected_attempts() as f64 * self.per_attempt_ms
    }

    pub fn feasible(&self) -> bool {
        match self.max_attempts_in_window() {
            None => true,
            Some(max) => self.expected_attempts() <= max as u128,
        }
    }

    pub fn feasibility(&self) -> Feasibility {
        if self.feasible() {
            Feasibility::Feasible
        } else {
            Feasibility::Infeasible
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn morpheus_window_allows_eighteen_attempts() {
        let b = EntropyBudget::new(60, PER_ATTEMPT_MS, Some(50.0));
        assert_eq!(b.max_attempts_in_window(), Some(18));
        assert_eq!(b.feasibility(), Feasibility::Infeasible);
    }

    #[test]
    fn unbounded_windows_are_feasible() {
        for n in [3, 16, 19, 28, 64] {
            assert!(EntropyBudget::new(n, PER_ATTEMPT_MS, None).feasible());
        }
        assert_eq!(
            EntropyBudget::new(16, PER_ATTEMPT_MS, None).expected_attempts(),
            1 << 15
        );
    }

    #[test]
    fn tiny_secret_fits_a_short_window() {
        // 2^(5-1) = 16 attempts, 18 allowed.
        assert!(EntropyBudget::new(5, PER_ATTEMPT_MS, Some(50.0)).feasible());
        assert!(!EntropyBudget::new(6, PER_ATTEMPT_MS, Some(50.0)).feasible());
    }
}
