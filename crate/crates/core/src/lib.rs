pub mod datasets;
pub mod error;
pub mod evalcli;
pub mod featnet;
pub mod math;
pub mod preprocess;
pub mod rgbt;
pub mod rng;
pub mod stacker;
pub mod synth;
pub use error::{Error, ExitKind};
