//! Ingredient profiles for the egg mixture. Trained profiles differ in
//! vision, touch, or both; the untrained set mirrors that taxonomy for the
//! generalization probes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngredientProfile {
    pub name: String,
    /// RGB shift applied to the egg palette.
    pub color_shift: [f64; 3],
    /// Fraction of cells carrying a visible fleck.
    pub fleck_density: f64,
    pub fleck_color: [f64; 3],
    /// Multiplier on the doneness rate.
    pub hardness_gain: f64,
    /// Stickiness: sticky mixtures clump early and resist dragging.
    pub stickiness: f64,
    /// Texture/brightness jitter and pour hole density.
    pub granularity: f64,
}

impl IngredientProfile {
    fn new(
        name: &str,
        color_shift: [f64; 3],
        fleck_density: f64,
        fleck_color: [f64; 3],
        hardness_gain: f64,
        stickiness: f64,
        granularity: f64,
    ) -> Self {
        IngredientProfile {
            name: name.to_string(),
            color_shift,
            fleck_density,
            fleck_color,
            hardness_gain,
            stickiness,
            granularity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fleck_density >= 0.0
            && self.fleck_density <= 0.5
            && (0.5..=1.5).contains(&self.hardness_gain)
            && (0.0..=1.0).contains(&self.stickiness)
            && (0.0..=1.0).contains(&self.granularity);
        if ok {
            Ok(())
        } else {
            Err(SimError::UnknownProfile(format!("{} has out-of-range parameters", self.name)))
        }
    }
}

/// Profiles used to collect training demonstrations.
pub fn trained_profiles() -> Vec<IngredientProfile> {
    vec![
        IngredientProfile::new("plain", [0.0, 0.0, 0.0], 0.0, [0.0; 3], 1.0, 0.15, 0.25),
        // vision difference: dark flecks through the mixture
        IngredientProfile::new(
            "flecks",
            [-0.02, -0.02, 0.0],
            0.15,
            [0.10, 0.11, 0.13],
            1.0,
            0.18,
            0.30,
        ),
        // touch difference: denser, stickier mixture, nearly the same look
        IngredientProfile::new("grains", [0.01, 0.01, -0.02], 0.0, [0.0; 3], 0.90, 0.45, 0.55),
        // both: visible chunks that also harden faster
        IngredientProfile::new(
            "chunky",
            [0.04, -0.03, -0.06],
            0.10,
            [0.85, 0.55, 0.25],
            1.12,
            0.35,
            0.50,
        ),
    ]
}

/// Held-out profiles for the generalization probe.
pub fn untrained_profiles() -> Vec<IngredientProfile> {
    vec![
        // vision-only shift
        IngredientProfile::new("tinted", [0.04, -0.12, -0.10], 0.0, [0.0; 3], 1.0, 0.15, 0.25),
        // touch-only shift
        IngredientProfile::new("dense", [0.0, 0.0, 0.0], 0.0, [0.0; 3], 1.15, 0.60, 0.30),
        // both
        IngredientProfile::new(
            "tinted_dense",
            [0.05, -0.10, -0.08],
            0.08,
            [0.30, 0.18, 0.12],
            1.12,
            0.55,
            0.40,
        ),
    ]
}

pub fn by_name(name: &str) -> Result<IngredientProfile> {
    trained_profiles()
        .into_iter()
        .chain(untrained_profiles())
        .find(|p| p.name == name)
        .ok_or_else(|| SimError::UnknownProfile(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_profiles_are_valid() {
        for p in trained_profiles().into_iter().chain(untrained_profiles()) {
            p.validate().unwrap();
        }
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(by_name("plain").unwrap().name, "plain");
        assert_eq!(by_name("dense").unwrap().stickiness, 0.60);
        assert!(by_name("caviar").is_err());
    }
}
