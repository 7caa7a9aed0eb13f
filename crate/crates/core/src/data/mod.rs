//! File formats and scene persistence.

pub mod checkpoint;
pub mod image;
pub mod rle;
pub mod scene;
pub mod tensor;
