//! Ground-based sky imaging for intra-hour solar forecasting: sun
//! geometry, clear-sky irradiance, frame fusion, atmospheric detrending,
//! sky-state classification, perspective grids and cloud motion.

pub mod error;
pub mod irradiance;
pub mod optim;
pub mod solar;

pub use error::{Error, Result};
pub mod frame;
pub mod imgproc;
pub mod radiometry;
pub mod atmosphere;
pub mod poly;
pub mod sky_state;
pub mod perspective;
pub mod gridfile;
pub mod motion;
pub mod tuner;
