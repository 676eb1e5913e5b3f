//! Tensorized underwater Gaussian splatting.
//!
//! Two Gaussian sets (object and medium) are the mode-1 slices of a
//! `2 × N × 59` tensor that is only ever stored as rank-R CP factors. The
//! object slice renders the medium-free image and scene depth, the medium
//! slice renders an attenuation image and a medium depth, and the two are
//! composed with an underwater image-formation model.

pub mod camera;
pub mod densify;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod losses;
pub mod medium;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use camera::Camera;
pub use error::{Error, Result};
pub use image::Image;
