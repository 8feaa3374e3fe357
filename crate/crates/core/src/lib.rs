//! Analysis toolkit for binary nonlocal XOR games: optimal quantum scores,
//! robust self-testing verdicts, strategy simulation in qubit and
//! higher-dimensional canonical forms, and randomized verification of
//! closed-form robustness bounds for GHZ randomness-expansion devices.

pub mod error;
pub mod game;
pub mod ghz;
pub mod jordan;
pub mod linalg;
pub mod optimizer;
pub mod report;
pub mod robustness;
pub mod strategy;
pub mod verdict;

pub use error::Error;
pub use game::{CriticalPoint, TorusPoint, XorGame};
pub use jordan::{BlockDecomposition, CanonicalStrategy, InvolutionPair, QubitComponent};
pub use optimizer::{MaximaSet, OptimizerConfig};
pub use report::AnalysisReport;
pub use robustness::{RobustnessCertificate, StrategyClass};
pub use strategy::{QubitStrategy, SClassStrategy};
pub use verdict::Verdict;
