//! Command-line entry points.

/// Placeholder until the CLI is wired up.
pub fn main() -> i32 {
    0
}
