//! Small numerical kernels shared by the modelling modules.

pub mod golden;
pub mod linalg;
pub mod normal;
pub mod poly;
pub mod quad;
