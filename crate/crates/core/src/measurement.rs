//! A value with a one-sigma standard error.

use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Measured {
    pub value: f64,
    pub err: f64,
}

impl Measured {
    pub const fn new(value: f64, err: f64) -> Self {
        Self { value, err }
    }

    pub const fn exact(value: f64) -> Self {
        Self { value, err: 0.0 }
    }

    /// Poisson counting statistics: `n ± √n`.
    pub fn poisson(count: u64) -> Self {
        let n = count as f64;
        Self::new(n, libm::sqrt(n))
    }

    pub fn relative_err(&self) -> f64 {
        self.err / libm::fabs(self.value)
    }
}

/// First-order propagation for uncorrelated inputs: `σ² = Σ (∂f/∂xᵢ · σᵢ)²`.
pub fn propagate(terms: &[(f64, f64)]) -> f64 {
    libm::sqrt(terms.iter().map(|&(d, s)| (d * s) * (d * s)).sum())
}

impl fmt::Display for Measured {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = f.precision() {
            write!(f, "{:.*} ± {:.*}", p, self.value, p, self.err)
        } else {
            write!(f, "{} ± {}", self.value, self.err)
        }
    }
}
