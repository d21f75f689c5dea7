//! Persistence and data ingestion: portable pixmaps, raw tensor blobs,
//! and synthetic corpus generation.

pub mod bin;
pub mod blob;
pub mod pnm;
pub mod synthetic;

pub use blob::{read_blob, write_blob};
pub use pnm::{decode_pnm, encode_pnm, read_image, write_image};
pub use synthetic::{gen_synthetic, SyntheticKind};
