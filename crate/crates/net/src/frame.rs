//! The 68-dimensional sensorimotor IO layout shared by every module.
//!
//! Ordering: [whole-image features 0..20, trimmed-image features 20..50,
//! torque 50..57, tactile 57..61, motor 61..68].

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{NetError, Result};

pub const WHOLE_DIM: usize = 20;
pub const TRIMMED_DIM: usize = 30;
pub const TORQUE_DIM: usize = 7;
pub const TACTILE_DIM: usize = 4;
pub const MOTOR_DIM: usize = 7;
pub const IO_WIDTH: usize = WHOLE_DIM + TRIMMED_DIM + TORQUE_DIM + TACTILE_DIM + MOTOR_DIM;

/// Normalization half-ranges per sensor family.
pub const TORQUE_LIMIT: f64 = 0.9;
pub const TACTILE_LIMIT: f64 = 0.85;
pub const MOTOR_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    WholeImage,
    TrimmedImage,
    Torque,
    Tactile,
    Motor,
}

pub const MODALITIES: [Modality; 5] = [
    Modality::WholeImage,
    Modality::TrimmedImage,
    Modality::Torque,
    Modality::Tactile,
    Modality::Motor,
];

impl Modality {
    pub fn range(self) -> Range<usize> {
        match self {
            Modality::WholeImage => 0..WHOLE_DIM,
            Modality::TrimmedImage => WHOLE_DIM..WHOLE_DIM + TRIMMED_DIM,
            Modality::Torque => 50..57,
            Modality::Tactile => 57..61,
            Modality::Motor => 61..68,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modality::WholeImage => "whole_image",
            Modality::TrimmedImage => "trimmed_image",
            Modality::Torque => "torque",
            Modality::Tactile => "tactile",
            Modality::Motor => "motor",
        }
    }
}

pub fn motor_range() -> Range<usize> {
    Modality::Motor.range()
}

/// One time step of normalized multimodal data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorimotorFrame {
    pub whole: Vec<f64>,
    pub trimmed: Vec<f64>,
    pub torque: Vec<f64>,
    pub tactile: Vec<f64>,
    pub motor: Vec<f64>,
}

impl SensorimotorFrame {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(NetError::shape(format!("frame.{name}"), want, got))
            }
        };
        check("whole", self.whole.len(), WHOLE_DIM)?;
        check("trimmed", self.trimmed.len(), TRIMMED_DIM)?;
        check("torque", self.torque.len(), TORQUE_DIM)?;
        check("tactile", self.tactile.len(), TACTILE_DIM)?;
        check("motor", self.motor.len(), MOTOR_DIM)?;
        Ok(())
    }

    /// Concatenate to the 68-dim IO vector in the canonical order.
    pub fn to_io(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(IO_WIDTH);
        v.extend_from_slice(&self.whole);
        v.extend_from_slice(&self.trimmed);
        v.extend_from_slice(&self.torque);
        v.extend_from_slice(&self.tactile);
        v.extend_from_slice(&self.motor);
        v
    }

    pub fn from_io(io: &[f64]) -> Result<Self> {
        if io.len() != IO_WIDTH {
            return Err(NetError::shape("io vector", IO_WIDTH, io.len()));
        }
        Ok(SensorimotorFrame {
            whole: io[Modality::WholeImage.range()].to_vec(),
            trimmed: io[Modality::TrimmedImage.range()].to_vec(),
            torque: io[Modality::Torque.range()].to_vec(),
            tactile: io[Modality::Tactile.range()].to_vec(),
            motor: io[Modality::Motor.range()].to_vec(),
        })
    }
}

/// Mixing coefficients between the model's previous prediction and fresh data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRates {
    pub alpha_motor: f64,
    pub alpha_other: f64,
}

impl FeedbackRates {
    pub fn new(alpha_motor: f64, alpha_other: f64) -> Result<Self> {
        for (name, a) in [("alpha_motor", alpha_motor), ("alpha_other", alpha_other)] {
            if !(0.0..=1.0).contains(&a) || !a.is_finite() {
                return Err(NetError::shape(name, "value in [0,1]", a));
            }
        }
        Ok(FeedbackRates { alpha_motor, alpha_other })
    }

    /// Training default: 0.9 on all channels.
    pub fn training() -> Self {
        FeedbackRates { alpha_motor: 0.9, alpha_other: 0.9 }
    }

    /// Evaluation default: 0.8 on motor channels, 0.6 elsewhere.
    pub fn evaluation() -> Self {
        FeedbackRates { alpha_motor: 0.8, alpha_other: 0.6 }
    }

    /// Per-index alpha over the 68-dim layout.
    pub fn per_index(&self) -> [f64; IO_WIDTH] {
        let mut a = [self.alpha_other; IO_WIDTH];
        for k in motor_range() {
            a[k] = self.alpha_motor;
        }
        a
    }
}
