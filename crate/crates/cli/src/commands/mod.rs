//! One module per command family. Each command is a thin wrapper: read files,
//! call into `panosense`, write results through [`crate::Ctx`].

pub mod align;
pub mod calib;
pub mod fusion;
pub mod imaging;
pub mod occupancy;
pub mod synth;
