use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or configuration violates one of its invariants.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The cycle phases do not fit into the repetition period.
    #[error("timing error: phase `{phase}` ends at {end_ps} ps, beyond the {rep_period_ps} ps repetition period")]
    Timing {
        phase: String,
        end_ps: u64,
        rep_period_ps: u64,
    },

    /// Tags are not in (time, channel) order.
    #[error("tags are not sorted: first violation at index {index}")]
    Unsorted { index: usize },

    /// The side-peak level does not exceed the background estimate.
    #[error("degenerate denominator: side-peak mean {c_tau} does not exceed background {c_b}")]
    DegenerateDenominator { c_tau: f64, c_b: f64 },

    /// A least-squares fit without enough distinct abscissae.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Measured data admit no solution in the physical interval.
    #[error("inconsistent data: {0}")]
    InconsistentData(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }

    /// True for errors that come from the numerics rather than from the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDenominator { .. } | Error::DegenerateFit(_) | Error::InconsistentData(_)
        )
    }
}
