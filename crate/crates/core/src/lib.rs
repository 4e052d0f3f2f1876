mod barrier;
pub mod certificate;
pub mod cli;
pub mod cr;
pub mod error;
pub mod fixtures;
pub mod lift;
pub mod linalg;
pub mod minimax;
pub mod oracle;
pub mod pipeline;
pub mod problem;
pub mod range;
pub mod reduction;
pub mod report;
