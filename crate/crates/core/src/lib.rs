//! Anchor-free action tubelet toolkit.
//!
//! Ground-truth encoding of clip windows into center, movement and size
//! targets; the three branch losses with analytic gradients; tubelet
//! decoding; online linking of tubelets into tubes; frame- and video-level
//! mAP with error analysis; and a seeded synthetic scene generator that
//! closes the loop without a learned model.

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod io;
pub mod linker;
pub mod losses;
pub mod map;
pub mod pipeline;
pub mod synthgen;
pub mod types;

pub use decoder::{decode_tubelets, extract_peaks, DecodeConfig, MovementMode, Peak, WindowMaps};
pub use encoder::{encode_clip, ClipTargets};
pub use error::{Error, Result};
pub use io::VideoAnnotation;
pub use linker::{LinkConfig, LinkState, StreamSession};
pub use losses::{LossParams, LossReport};
pub use map::DenseMap;
pub use types::{BBox, GridPoint, GridSpec, Instance, Tube, Tubelet};
