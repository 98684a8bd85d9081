pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod pool;
pub mod resize;

pub use elementwise::sigmoid;
pub use pool::adaptive_range;
pub use resize::bilinear_taps;
