//! Simulator constants. The pot plane uses dimensionless units with the pot
//! radius at 1.0; one control step is 0.4 s (2.5 Hz sampling). Every value
//! here lands in the run manifest so the environment is fully documented.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimParams {
    /// Grid cells per side.
    pub grid_n: usize,
    /// Half-extent of the grid in world units.
    pub world_half: f64,
    /// Pot interior radius (egg cells must stay inside `wall_inner`).
    pub pot_radius: f64,
    /// Radius of the physical wall the turner can press against.
    pub wall_radius: f64,
    /// Egg cells never move beyond this radius.
    pub wall_inner: f64,
    /// Radius of the initial egg pour.
    pub fill_radius: f64,
    /// Base hole probability in the pour (scaled by profile granularity).
    pub fill_hole_base: f64,
    pub fill_hole_gain: f64,

    /// Tool disk radius for stirring contact.
    pub tool_radius: f64,
    /// Flip influence radius around the tool tip.
    pub flip_radius: f64,
    /// Maximum tool-tip travel per step commanded by the scripted policy.
    pub tool_speed: f64,

    /// Doneness gained per step at the reference heat before boosts.
    pub heat_rate_high: f64,
    pub heat_rate_low: f64,
    pub heat_rate_lower: f64,
    /// Extra doneness rate near the rim.
    pub rim_gain: f64,
    pub rim_lo: f64,
    pub rim_hi: f64,
    /// Undisturbed cells cook up to 1/calm_floor times faster than freshly
    /// stirred ones.
    pub calm_floor: f64,
    pub calm_steps: f64,

    /// Doneness above which a cell is hard: immovable by dragging, eligible
    /// for splitting.
    pub hard_thresh: f64,
    /// Cells below this doneness count as raw in the success rules.
    pub done_floor: f64,
    /// Steps a fully done cell may sit unflipped before charring starts.
    pub burn_timeout: u32,
    /// Charring accumulated per step at the high heat once the timeout passes.
    pub burn_rate: f64,

    /// Stickiness shrinks the movable-doneness window: movable iff
    /// d < hard_thresh * (1 - movable_stick_gain * stickiness).
    pub movable_stick_gain: f64,

    /// Success rule (1): largest block extent as a fraction of the pot
    /// diameter. 15 cm over an assumed 26 cm pan.
    pub block_limit_frac: f64,

    /// Resistance force per swept cell weight.
    pub resist_coeff: f64,
    /// Wall reaction force per unit penetration.
    pub wall_coeff: f64,
    /// Torque sense gain and per-joint baselines.
    pub torque_gain: f64,
    pub torque_baseline: [f64; 7],
    /// Tactile gains/rest levels.
    pub tactile_gain: f64,
    pub tactile_rest: [f64; 4],

    /// Wall-force level and run length that trigger the push-out safety halt.
    pub halt_wall_force: f64,
    pub halt_wall_steps: usize,

    /// Scripted-policy thresholds.
    pub split_margin: f64,
    pub waypoint_eps: f64,
    pub flip_hold_steps: usize,
    pub done_margin: f64,
    pub hold_steps: usize,

    /// Hard cap on demonstration episode length.
    pub max_demo_steps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            grid_n: 48,
            world_half: 1.05,
            pot_radius: 1.0,
            wall_radius: 0.93,
            wall_inner: 0.90,
            fill_radius: 0.85,
            fill_hole_base: 0.04,
            fill_hole_gain: 0.10,

            tool_radius: 0.14,
            flip_radius: 0.20,
            tool_speed: 0.085,

            heat_rate_high: 0.0052,
            heat_rate_low: 0.0038,
            heat_rate_lower: 0.0028,
            rim_gain: 0.8,
            rim_lo: 0.45,
            rim_hi: 0.85,
            calm_floor: 0.55,
            calm_steps: 50.0,

            hard_thresh: 0.55,
            done_floor: 0.80,
            burn_timeout: 130,
            burn_rate: 1.0 / 60.0,

            movable_stick_gain: 0.35,

            block_limit_frac: 15.0 / 26.0,

            resist_coeff: 0.012,
            wall_coeff: 6.0,
            torque_gain: 2.2,
            torque_baseline: [0.12, -0.10, 0.08, -0.06, 0.05, -0.04, 0.02],
            tactile_gain: 2.0,
            tactile_rest: [-0.55, -0.50, -0.50, -0.45],

            halt_wall_force: 0.35,
            halt_wall_steps: 8,

            split_margin: 0.85,
            waypoint_eps: 0.06,
            flip_hold_steps: 4,
            done_margin: 0.08,
            hold_steps: 40,

            max_demo_steps: 800,
        }
    }
}

impl SimParams {
    pub fn cell_size(&self) -> f64 {
        2.0 * self.world_half / self.grid_n as f64
    }

    /// Largest allowed block extent in world units (pot diameter is 2).
    pub fn block_limit_units(&self) -> f64 {
        self.block_limit_frac * 2.0 * self.pot_radius
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("params serialize")
    }
}

/// Deterministic per-cell hash in [0,1). splitmix64 over (seed, ix, iy, salt).
pub fn cell_hash(seed: u64, ix: usize, iy: usize, salt: u64) -> f64 {
    let mut z = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((ix as u64) << 32)
        .wrapping_add(iy as u64)
        .wrapping_add(salt.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z = z ^ (z >> 31);
    (z >> 11) as f64 / (1u64 << 53) as f64
}

pub fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}
