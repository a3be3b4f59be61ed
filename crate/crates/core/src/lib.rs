//! Weakly supervised fine-grained classification with an object/part
//! attention student, a part-aware teacher and a learned score fusion.

pub mod backbone;
pub mod container;
pub mod csf;
pub mod data;
pub mod gradcheck;
pub mod heatmap;
pub mod losses;
pub mod ops;
pub mod paf;
pub mod pipeline;
pub mod params;
pub mod sppn;
pub mod tape;
pub mod teacher;
pub mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor, TensorError};
