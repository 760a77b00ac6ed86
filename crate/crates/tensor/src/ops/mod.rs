pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod shuffle;
