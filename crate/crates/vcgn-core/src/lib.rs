//! Non-parallel emotion conversion for F0 contours.
//!
//! A pair of generator networks emits warp momenta that a fixed
//! kernel-based diffeomorphic block applies to a source pitch contour.
//! The pair is trained adversarially against a discriminator that
//! classifies joint (source, generated) contour densities, with a cycle
//! consistency penalty tying the two conversion directions together.
//!
//! The numeric core is a small reverse-mode tape over dense f64 tensors
//! ([`tape::Tape`]) with a finite-difference oracle ([`gradcheck`]) to
//! validate every gradient path end to end.

pub mod checkpoint;
pub mod corpus;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod warp;

pub use tensor::Tensor;
