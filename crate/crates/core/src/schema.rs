//! Machine parameter identifiers and the fixed slot layout of a frame.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default number of heating zones on the tubing machine.
pub const DEFAULT_ZONES: u16 = 4;

/// Number of non-zone parameters that precede the heating zones in a frame.
pub const BASE_PARAMETERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("unknown parameter token `{0}`")]
    UnknownToken(String),
    #[error("heating zone {zone} outside 1..={zones}")]
    ZoneOutOfRange { zone: u16, zones: u16 },
    #[error("slot {slot} outside frame of width {width}")]
    SlotOutOfRange { slot: usize, width: usize },
}

/// One measured machine parameter.
///
/// Ordering follows the canonical frame layout: the four base parameters in
/// declaration order, then heating zones ascending by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParameterId {
    /// Excess material ejected during production, percent.
    EjectionPct,
    ExtruderPressure,
    MachineSpeed,
    /// Raw material input, abstract mass-flow units.
    ActualValuesInput,
    /// Temperature of heating zone `k`, 1-based.
    HeatingZone(u16),
}

impl ParameterId {
    pub const BASE: [ParameterId; BASE_PARAMETERS] = [
        ParameterId::EjectionPct,
        ParameterId::ExtruderPressure,
        ParameterId::MachineSpeed,
        ParameterId::ActualValuesInput,
    ];

    pub fn token(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ParameterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParameterId::EjectionPct => f.write_str("ejection_pct"),
            ParameterId::ExtruderPressure => f.write_str("extruder_pressure"),
            ParameterId::MachineSpeed => f.write_str("machine_speed"),
            ParameterId::ActualValuesInput => f.write_str("actual_values_input"),
            ParameterId::HeatingZone(k) => write!(f, "heating_zone_{k}"),
        }
    }
}

impl FromStr for ParameterId {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ejection_pct" => Ok(ParameterId::EjectionPct),
            "extruder_pressure" => Ok(ParameterId::ExtruderPressure),
            "machine_speed" => Ok(ParameterId::MachineSpeed),
            "actual_values_input" => Ok(ParameterId::ActualValuesInput),
            other => other
                .strip_prefix("heating_zone_")
                .filter(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|k| k.parse::<u16>().ok())
                .filter(|&k| k >= 1)
                .map(ParameterId::HeatingZone)
                .ok_or_else(|| SchemaError::UnknownToken(s.to_string())),
        }
    }
}

impl Serialize for ParameterId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParameterId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Frame layout for a machine with a fixed number of heating zones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub zones: u16,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            zones: DEFAULT_ZONES,
        }
    }
}

impl Schema {
    pub fn new(zones: u16) -> Self {
        Schema { zones }
    }

    /// Frame width, `4 + zones`.
    pub fn width(&self) -> usize {
        BASE_PARAMETERS + self.zones as usize
    }

    pub fn slot(&self, parameter: ParameterId) -> Result<usize, SchemaError> {
        match parameter {
            ParameterId::EjectionPct => Ok(0),
            ParameterId::ExtruderPressure => Ok(1),
            ParameterId::MachineSpeed => Ok(2),
            ParameterId::ActualValuesInput => Ok(3),
            ParameterId::HeatingZone(k) if k >= 1 && k <= self.zones => {
                Ok(BASE_PARAMETERS + k as usize - 1)
            }
            ParameterId::HeatingZone(k) => Err(SchemaError::ZoneOutOfRange {
                zone: k,
                zones: self.zones,
            }),
        }
    }

    pub fn parameter(&self, slot: usize) -> Result<ParameterId, SchemaError> {
        if slot < BASE_PARAMETERS {
            Ok(ParameterId::BASE[slot])
        } else if slot < self.width() {
            Ok(ParameterId::HeatingZone((slot - BASE_PARAMETERS + 1) as u16))
        } else {
            Err(SchemaError::SlotOutOfRange {
                slot,
                width: self.width(),
            })
        }
    }

    /// All parameters in canonical order.
    pub fn parameters(&self) -> Vec<ParameterId> {
        let mut out = ParameterId::BASE.to_vec();
        out.extend((1..=self.zones).map(ParameterId::HeatingZone));
        out
    }

    pub fn tokens(&self) -> Vec<String> {
        self.parameters().iter().map(ParameterId::token).collect()
    }
}
