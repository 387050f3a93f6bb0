pub mod infer;
pub mod score;
pub mod simulate;
pub mod train;
