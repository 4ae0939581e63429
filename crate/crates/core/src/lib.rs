//! Test-time compute laboratory for unit-test scaling.
//!
//! Candidate solutions are executed against candidate unit tests in
//! sandboxed runner processes ([`executor`]), the resulting verdict matrices
//! drive best-of-N selection by majority voting ([`reward`]), and the
//! remaining modules measure test quality ([`quality`]), build bootstrap
//! scaling curves ([`scalinglab`]), estimate problem difficulty
//! ([`difficulty`]) and spread a fixed test budget across problems
//! ([`allocator`]).

pub mod allocator;
pub mod corpus;
pub mod difficulty;
pub mod executor;
pub mod mock;
pub mod protocol;
pub mod quality;
pub mod report;
pub mod reward;
pub mod scalinglab;
pub mod synth;
