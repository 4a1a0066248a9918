//! Lip-based biometric authentication.
//!
//! The pipeline runs from lip landmarks to an accept/reject decision:
//!
//! * [`preprocess`] crops each frame to an aspect-normalized lip box and
//!   resamples it to a fixed 30×18 clip.
//! * [`synth`] renders a deterministic corpus of talking-lip videos whose
//!   clients differ in lip appearance and in how they move.
//! * [`slowfast`] embeds a clip with a two-pathway 3-D CNN: a fast pathway
//!   over every frame with few channels and a slow pathway over every
//!   α-th frame with many channels, fused fast→slow.
//! * [`triplet`] trains that network as a Siamese embedder with a
//!   cosine-distance triplet loss.
//! * [`eval`] measures FAR/FRR over a threshold sweep and extracts the EER.
//! * [`authstore`] enrolls pass-phrase credentials and authenticates them.
//!
//! [`tensor`] is the small reverse-mode autodiff engine everything above is
//! built on.

pub mod authstore;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod fsutil;
pub mod par;
pub mod preprocess;
pub mod seed;
pub mod slowfast;
pub mod synth;
pub mod tensor;
pub mod triplet;

pub use dataset::ClipId;
pub use tensor::{Tape, Tensor, Var};
