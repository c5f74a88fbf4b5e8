//! The 7-joint arm over the pot plane: six positional joints form a planar
//! redundant chain, joint 7 is the wrist-mode channel selecting the tool
//! action. Joints are stored normalized in [-0.9, 0.9]; forward kinematics
//! scales them to physical angles internally.

use serde::{Deserialize, Serialize};

pub const JOINTS: usize = 7;
pub const POS_JOINTS: usize = 6;

/// Arm base position in the pot plane.
pub const BASE: (f64, f64) = (-1.55, 0.0);
/// Link lengths of the positional chain.
pub const LINKS: [f64; POS_JOINTS] = [0.62, 0.55, 0.48, 0.40, 0.30, 0.22];
/// Physical angle at |q| = 0.9 (radians).
pub const THETA_MAX: [f64; JOINTS] = [1.6, 1.5, 1.4, 1.4, 1.5, 1.6, 1.0];
/// Normalized joint bound.
pub const Q_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolMode {
    Drag,
    Flip,
    Split,
}

impl ToolMode {
    /// Wrist channel value at the middle of this mode's band.
    pub fn q7_target(self) -> f64 {
        match self {
            ToolMode::Drag => -0.6,
            ToolMode::Flip => 0.0,
            ToolMode::Split => 0.6,
        }
    }

    pub fn from_q7(q7: f64) -> Self {
        if q7 < -0.3 {
            ToolMode::Drag
        } else if q7 < 0.3 {
            ToolMode::Flip
        } else {
            ToolMode::Split
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    /// Normalized joints in [-0.9, 0.9].
    pub joints: [f64; JOINTS],
}

impl ArmState {
    pub fn new(joints: [f64; JOINTS]) -> Self {
        let mut a = ArmState { joints };
        a.clamp();
        a
    }

    /// Rest posture: chain arched over the pot with the tool near the rim.
    pub fn home() -> Self {
        ArmState::new([0.30, -0.38, 0.32, -0.28, 0.22, -0.18, ToolMode::Drag.q7_target()])
    }

    fn clamp(&mut self) {
        for q in self.joints.iter_mut() {
            *q = q.clamp(-Q_LIMIT, Q_LIMIT);
        }
    }

    pub fn physical_angles(&self) -> [f64; POS_JOINTS] {
        let mut phi = [0.0; POS_JOINTS];
        for i in 0..POS_JOINTS {
            phi[i] = self.joints[i] / Q_LIMIT * THETA_MAX[i];
        }
        phi
    }

    /// Positions of every joint pivot plus the tool tip (7 points).
    pub fn chain_points(&self) -> [(f64, f64); POS_JOINTS + 1] {
        let phi = self.physical_angles();
        let mut pts = [(0.0, 0.0); POS_JOINTS + 1];
        pts[0] = BASE;
        let mut heading = 0.0;
        for i in 0..POS_JOINTS {
            heading += phi[i];
            pts[i + 1] = (
                pts[i].0 + LINKS[i] * heading.cos(),
                pts[i].1 + LINKS[i] * heading.sin(),
            );
        }
        pts
    }

    /// Tool-tip position (exact forward kinematics of the joints).
    pub fn tool_tip(&self) -> (f64, f64) {
        *self.chain_points().last().unwrap()
    }

    pub fn tool_mode(&self) -> ToolMode {
        ToolMode::from_q7(self.joints[6])
    }

    /// 2x6 Jacobian of the tip w.r.t. normalized joints.
    pub fn jacobian(&self) -> [[f64; POS_JOINTS]; 2] {
        let phi = self.physical_angles();
        let mut heading = 0.0;
        let mut headings = [0.0; POS_JOINTS];
        for i in 0..POS_JOINTS {
            heading += phi[i];
            headings[i] = heading;
        }
        let mut jx = [0.0; POS_JOINTS];
        let mut jy = [0.0; POS_JOINTS];
        for i in 0..POS_JOINTS {
            // d tip / d phi_i accumulates every link at or after joint i
            let mut sx = 0.0;
            let mut sy = 0.0;
            for k in i..POS_JOINTS {
                sx -= LINKS[k] * headings[k].sin();
                sy += LINKS[k] * headings[k].cos();
            }
            let scale = THETA_MAX[i] / Q_LIMIT;
            jx[i] = sx * scale;
            jy[i] = sy * scale;
        }
        [jx, jy]
    }

    /// One damped least-squares step of the positional joints toward a tool
    /// target, with the tip displacement capped at `max_tip_step`.
    pub fn ik_step(&self, target: (f64, f64), max_tip_step: f64) -> ArmState {
        let tip = self.tool_tip();
        let mut dx = target.0 - tip.0;
        let mut dy = target.1 - tip.1;
        let dist = (dx * dx + dy * dy).sqrt();
        if dist > max_tip_step {
            dx *= max_tip_step / dist;
            dy *= max_tip_step / dist;
        }
        let j = self.jacobian();
        // JJ^T + lambda^2 I (2x2)
        let lambda2 = 0.01;
        let a11 = dot6(&j[0], &j[0]) + lambda2;
        let a12 = dot6(&j[0], &j[1]);
        let a22 = dot6(&j[1], &j[1]) + lambda2;
        let det = a11 * a22 - a12 * a12;
        let (bx, by) = ((a22 * dx - a12 * dy) / det, (a11 * dy - a12 * dx) / det);
        let mut out = *self;
        for i in 0..POS_JOINTS {
            let dq = (j[0][i] * bx + j[1][i] * by).clamp(-0.08, 0.08);
            out.joints[i] += dq;
        }
        out.clamp();
        out
    }

    /// Drive the wrist channel toward a mode band (slew limited).
    pub fn step_wrist(&self, mode: ToolMode) -> ArmState {
        let mut out = *self;
        let target = mode.q7_target();
        let delta = (target - self.joints[6]).clamp(-0.15, 0.15);
        out.joints[6] += delta;
        out.clamp();
        out
    }
}

fn dot6(a: &[f64; POS_JOINTS], b: &[f64; POS_JOINTS]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Iterate IK until the tip converges on `target` (used for keypose setup
/// and tests). Returns None if it fails to converge.
pub fn solve_ik(start: &ArmState, target: (f64, f64), iters: usize, tol: f64) -> Option<ArmState> {
    let mut arm = *start;
    for _ in 0..iters {
        let tip = arm.tool_tip();
        let err = ((tip.0 - target.0).powi(2) + (tip.1 - target.1).powi(2)).sqrt();
        if err < tol {
            return Some(arm);
        }
        arm = arm.ik_step(target, 0.12);
    }
    let tip = arm.tool_tip();
    let err = ((tip.0 - target.0).powi(2) + (tip.1 - target.1).powi(2)).sqrt();
    (err < tol).then_some(arm)
}
