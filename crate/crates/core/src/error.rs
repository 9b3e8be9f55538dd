use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("modulus {p}^{n} does not fit the machine word")]
    ModulusTooLarge { p: u64, n: u32 },
    #[error("phase needs level {need} but the ring has level {have}")]
    LevelTooLow { need: u32, have: u32 },
    #[error("{0} is not a unit")]
    NotUnit(String),
    #[error("operands live in different rings")]
    RingMismatch,
    #[error("singular matrix")]
    Singular,
    #[error("term count {terms} exceeds the {backend} budget {budget}")]
    Budget {
        terms: u128,
        budget: u128,
        backend: &'static str,
    },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("oscillation not resolved: {0}")]
    Unresolved(String),
    #[error("pole at s = {0}; use residue mode")]
    Pole(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
