//! Networks shipped with the crate.

use crate::error::{Error, Result};
use crate::network::{parse_network, PowerNetwork};

const DESK: &str = include_str!("../data/desk.toml");
const RING68: &str = include_str!("../data/ring68.toml");

pub const NAMES: [&str; 2] = ["desk", "ring68"];

/// 10-bus network with 4 generators and 7 stochastic lines.
pub fn desk() -> PowerNetwork {
    parse_network(DESK).expect("bundled desk network is valid")
}

/// 68-bus, 16-generator network on a meshed ring.
pub fn ring68() -> PowerNetwork {
    parse_network(RING68).expect("bundled ring68 network is valid")
}

pub fn by_name(name: &str) -> Result<PowerNetwork> {
    match name {
        "desk" => Ok(desk()),
        "ring68" => Ok(ring68()),
        other => Err(Error::Unknown {
            what: "bundled network",
            name: other.into(),
        }),
    }
}
