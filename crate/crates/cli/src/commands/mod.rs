//! One module per subcommand. Each `run` composes library calls with file
//! I/O and nothing else.

pub mod align;
pub mod eval;
pub mod overlay;
pub mod predict;
pub mod signatures;
pub mod train;
