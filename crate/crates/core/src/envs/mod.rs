//! Benchmark environments and a seeded random-MDP generator.

pub mod downlink;
pub mod random;
pub mod tightness;
pub mod wireless;

pub use downlink::{build_downlink, Downlink, DownlinkConfig};
pub use random::{random_mdp, RandomMdp, RandomStructure};
pub use tightness::{build_tightness_mdp, TightnessConfig, TightnessInstance};
pub use wireless::{build_wireless_access, WirelessAccess, WirelessAccessConfig};

use crate::error::{Error, Result};

pub(crate) fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {x}")))
    }
}
