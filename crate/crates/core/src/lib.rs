//! Continuous augmented sinusoidal positional embeddings for text, image and
//! audio, with a small attention layer to exercise them.

pub mod attention;
pub mod augment;
pub mod bench;
pub mod check;
pub mod embedding;
pub mod error;
pub mod io;
pub mod matrix;
pub mod positions;
pub mod reference;
pub mod rng;

pub use augment::{augment_positions_1d, AugmentationConfig, Mode};
pub use embedding::{embed_1d, embed_2d, shift_apply, shift_apply_2d, Embedding, FrequencySpec, Layout, Modality};
pub use error::{CapeError, Result};
pub use matrix::Matrix;
pub use positions::{PositionGrid2D, PositionSet1D};
pub use rng::RngStream;
