pub mod eval;
pub mod render;
pub mod simulate;
pub mod sweep;
pub mod train;
