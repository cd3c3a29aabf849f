//! Universal scene graphs: a data model and merge semantics for scene graphs
//! parsed from text, images, video and 3-D point clouds; forward passes of
//! the neural mechanisms that produce them; their training objectives; and
//! scene-graph evaluation metrics.

pub mod assignment;
pub mod graph;
pub mod tensor;
pub mod model;
pub mod losses;
pub mod eval;
pub mod cli;
