use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::params::SimParams;

/// Induction cooker setting. Labels mirror the dial temperatures; the
/// simulator maps them to doneness rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeatPower {
    /// Experimental lower setting ("170").
    Lower,
    /// "180"
    Low,
    /// "190"
    High,
}

impl HeatPower {
    pub fn label(self) -> &'static str {
        match self {
            HeatPower::Lower => "170",
            HeatPower::Low => "180",
            HeatPower::High => "190",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "170" | "lower" => Ok(HeatPower::Lower),
            "180" | "low" => Ok(HeatPower::Low),
            "190" | "high" => Ok(HeatPower::High),
            other => Err(SimError::UnknownHeat(other.to_string())),
        }
    }

    pub fn rate(self, p: &SimParams) -> f64 {
        match self {
            HeatPower::Lower => p.heat_rate_lower,
            HeatPower::Low => p.heat_rate_low,
            HeatPower::High => p.heat_rate_high,
        }
    }
}
