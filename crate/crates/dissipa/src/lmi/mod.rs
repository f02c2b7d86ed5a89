//! LMI assembly: decision variables, supply-rate presets, the dissipativity
//! matrix and its Taylor-remainder inflations, and the generic simplex and
//! origin-ball bounds.

mod assemble;
mod generic;
mod qsr;
mod vars;

pub use assemble::*;
pub use generic::*;
pub use qsr::*;
pub use vars::*;

#[cfg(test)]
mod tests;
