pub mod basic;
pub mod conv;
pub mod matmul;
pub mod norm;
pub mod resize;
