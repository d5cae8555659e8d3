//! Command implementations behind the `cloneguard` binary.

pub mod args;
mod commands;
pub mod pipeline;

pub use commands::run;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    /// Finished, and at least one reported pair is a license conflict.
    Conflicts,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Clean => 0,
            Outcome::Conflicts => 1,
        }
    }
}

/// Exit status for usage and runtime errors.
pub const EXIT_ERROR: i32 = 2;
