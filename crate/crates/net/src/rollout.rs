//! Closed-loop motion generation: per step, encode the environment's camera
//! images through the two feature compressors, assemble the fresh 68-wide
//! vector T(t), mix it with the previous prediction, run one network step,
//! denormalize the predicted motor angles and command the environment.

use std::collections::BTreeMap;

use ndarray::Array3;

use crate::cae::{encode, CaeParams, Image, ImageKind};
use crate::episode::{Episode, EpisodeMeta, StepRecord};
use crate::error::{NetError, Result};
use crate::frame::{FeedbackRates, Modality, IO_WIDTH, MOTOR_DIM};
use crate::mtrnn::{self, detect_completion, MtrnnParams, MtrnnState};

/// One observation delivered by the environment: raw images (already on the
/// 8-bit pixel lattice) plus normalized sensor channels and diagnostics.
#[derive(Debug, Clone)]
pub struct EnvObservation {
    pub whole: Array3<f32>,
    pub trimmed: Array3<f32>,
    pub torque: Vec<f64>,
    pub tactile: Vec<f64>,
    /// Normalized joint angles actually reached.
    pub motor: Vec<f64>,
    /// Per-step diagnostics (mean doneness, occlusion fraction, ...).
    pub scalars: BTreeMap<String, f64>,
}

/// A live environment that supplies one sensorimotor frame per step given
/// commanded motor angles.
pub trait EnvironmentStream {
    fn observe(&mut self) -> Result<EnvObservation>;
    /// Apply denormalized motor command and advance the world one step.
    fn command(&mut self, motor_denorm: &[f64]) -> Result<()>;
    /// Map normalized motor outputs to the command units `command` expects.
    fn denormalize_motor(&self, motor_norm: &[f64]) -> Vec<f64>;
    /// Some(reason) once the environment refuses to continue.
    fn halted(&self) -> Option<String> {
        None
    }
    /// Condition labels recorded in episode metadata.
    fn condition(&self) -> (String, String, u64) {
        ("unknown".into(), "unknown".into(), 0)
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub rates: FeedbackRates,
    pub max_steps: usize,
    pub stop_window: usize,
    pub stop_theta: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            rates: FeedbackRates::evaluation(),
            max_steps: 560,
            stop_window: mtrnn::STOP_WINDOW,
            stop_theta: mtrnn::STOP_THETA,
        }
    }
}

fn encode_frame(
    obs: &EnvObservation,
    cae_whole: &CaeParams<f32>,
    cae_trimmed: &CaeParams<f32>,
) -> Result<Vec<f64>> {
    let whole = encode(&Image::new(obs.whole.clone(), ImageKind::Whole), cae_whole)?;
    let trimmed = encode(&Image::new(obs.trimmed.clone(), ImageKind::Trimmed), cae_trimmed)?;
    let mut t = Vec::with_capacity(IO_WIDTH);
    t.extend(whole.values.iter().map(|&v| v as f64));
    t.extend(trimmed.values.iter().map(|&v| v as f64));
    t.extend_from_slice(&obs.torque);
    t.extend_from_slice(&obs.tactile);
    t.extend_from_slice(&obs.motor);
    if t.len() != IO_WIDTH {
        return Err(NetError::shape("assembled frame", IO_WIDTH, t.len()));
    }
    Ok(t)
}

/// Run the model closed-loop against a live environment. Stops at
/// `max_steps` or when the motor output stays still for the completion
/// window. An environment halt truncates the episode and flags it.
pub fn rollout_closed_loop(
    p: &MtrnnParams,
    cae_whole: &CaeParams<f32>,
    cae_trimmed: &CaeParams<f32>,
    env: &mut dyn EnvironmentStream,
    cfg: &RolloutConfig,
) -> Result<Episode> {
    let (profile, heat, seed) = env.condition();
    let mut state = MtrnnState::zeros(&p.specs);
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut prev_y: Option<Vec<f64>> = None;
    let mut motor_window: Vec<Vec<f64>> = Vec::new();
    let mut completed = false;
    let mut halt_reason = None;

    for t in 0..cfg.max_steps {
        if let Some(reason) = env.halted() {
            halt_reason = Some(reason);
            break;
        }
        let obs = match env.observe() {
            Ok(o) => o,
            Err(e) => {
                halt_reason = Some(format!("observe failed: {e}"));
                break;
            }
        };
        let target = encode_frame(&obs, cae_whole, cae_trimmed)?;
        let x = match &prev_y {
            None => target.clone(),
            Some(y) => mtrnn::mix_input(y, &target, &cfg.rates),
        };
        let (next, out) = mtrnn::step(&state, &x, p)?;

        let motor_norm: Vec<f64> = out.y_io[Modality::Motor.range()].to_vec();
        let motor_denorm = env.denormalize_motor(&motor_norm);
        debug_assert_eq!(motor_denorm.len(), MOTOR_DIM);

        let mut rec = StepRecord::new(t, target.clone());
        rec.input = Some(x.clone());
        rec.output = Some(out.y_io.clone());
        rec.attention = Some(out.attention.clone());
        rec.cs_state = Some(next.u_cs.clone());
        rec.motor_cmd_denorm = Some(motor_denorm.clone());
        rec.env = obs.scalars.clone();
        steps.push(rec);

        motor_window.push(motor_norm);
        if motor_window.len() > cfg.stop_window {
            motor_window.remove(0);
        }
        if motor_window.len() == cfg.stop_window
            && detect_completion(&motor_window, cfg.stop_theta)
        {
            completed = true;
            break;
        }

        if let Err(e) = env.command(&motor_denorm) {
            halt_reason = Some(format!("command failed: {e}"));
            break;
        }
        prev_y = Some(out.y_io);
        state = next;
    }

    let meta = EpisodeMeta {
        profile,
        heat,
        trial: 0,
        seed,
        steps: steps.len(),
        completed,
        halt_reason,
        feedback: Some(cfg.rates),
        gate: Some(p.gate.label().to_string()),
    };
    Ok(Episode { meta, steps })
}
