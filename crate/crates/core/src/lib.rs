pub mod explain;
pub mod model;
pub mod parallel;
pub mod tensor;
pub mod train;
