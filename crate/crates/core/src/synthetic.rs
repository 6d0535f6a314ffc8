//! Procedural clips on the bundled 22-joint skeleton, for fixtures, demos
//! and tests. Root rotations carry heading only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionClip, Quat, Vec3};

const PELVIS_HEIGHT: f64 = 0.93;

const L_HIP: usize = 1;
const R_HIP: usize = 2;
const SPINE1: usize = 3;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const NECK: usize = 12;
const HEAD: usize = 15;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

const X: Vec3 = [1.0, 0.0, 0.0];
const Y: Vec3 = [0.0, 1.0, 0.0];
const Z: Vec3 = [0.0, 0.0, 1.0];

/// A family of procedural motions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Synth {
    Static { lean: f64 },
    Walk { speed: f64, heading: f64 },
    TurningWalk { speed: f64, turn_rate: f64 },
    ArmWave { right: bool, amplitude: f64 },
    SideJump { distance: f64 },
    Circle { radius: f64, counterclockwise: bool },
    Nod { amplitude: f64 },
    Squat { depth: f64 },
}

fn rest_pose() -> Vec<Quat> {
    let mut pose = vec![Quat::IDENTITY; 22];
    // arms relaxed down from the T-pose
    pose[L_SHOULDER] = Quat::from_axis_angle(Z, -1.2);
    pose[R_SHOULDER] = Quat::from_axis_angle(Z, 1.2);
    pose
}

fn gait(pose: &mut [Quat], phase: f64, swing: f64) {
    let s = phase.sin();
    pose[L_HIP] = Quat::from_axis_angle(X, swing * s);
    pose[R_HIP] = Quat::from_axis_angle(X, -swing * s);
    pose[L_KNEE] = Quat::from_axis_angle(X, swing * (1.0 + s).max(0.0) * 0.8);
    pose[R_KNEE] = Quat::from_axis_angle(X, swing * (1.0 - s).max(0.0) * 0.8);
    pose[L_SHOULDER] = Quat::from_axis_angle(Z, -1.2).mul(&Quat::from_axis_angle(X, -0.5 * swing * s));
    pose[R_SHOULDER] = Quat::from_axis_angle(Z, 1.2).mul(&Quat::from_axis_angle(X, 0.5 * swing * s));
}

impl Synth {
    /// Render `len` frames at `fps`.
    pub fn generate(&self, len: usize, fps: f64) -> Result<MotionClip> {
        if len == 0 {
            return Err(Error::invalid("synthetic clip needs at least one frame"));
        }
        if !(fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        let mut root = Vec::with_capacity(len);
        let mut rots = Vec::with_capacity(len);
        for i in 0..len {
            let t = i as f64 / fps;
            let u = if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 };
            let mut pose = rest_pose();
            let (pos, yaw) = match *self {
                Synth::Static { lean } => {
                    pose[SPINE1] = Quat::from_axis_angle(X, lean);
                    ([0.0, PELVIS_HEIGHT, 0.0], 0.0)
                }
                Synth::Walk { speed, heading } => {
                    gait(&mut pose, 2.0 * PI * 1.8 * t, 0.45);
                    let d = speed * t;
                    ([d * heading.sin(), PELVIS_HEIGHT, d * heading.cos()], heading)
                }
                Synth::TurningWalk { speed, turn_rate } => {
                    gait(&mut pose, 2.0 * PI * 1.8 * t, 0.45);
                    let yaw = turn_rate * t;
                    let (x, z) = if turn_rate.abs() < 1e-9 {
                        (0.0, speed * t)
                    } else {
                        let r = speed / turn_rate;
                        (r * (1.0 - yaw.cos()), r * yaw.sin())
                    };
                    ([x, PELVIS_HEIGHT, z], yaw)
                }
                Synth::ArmWave { right, amplitude } => {
                    let (shoulder, elbow, sign) = if right { (R_SHOULDER, R_ELBOW, 1.0) } else { (L_SHOULDER, L_ELBOW, -1.0) };
                    pose[shoulder] = Quat::from_axis_angle(Z, sign * 0.3);
                    pose[elbow] = Quat::from_axis_angle(Y, sign * (1.0 + amplitude * (2.0 * PI * 1.5 * t).sin()));
                    ([0.0, PELVIS_HEIGHT, 0.0], 0.0)
                }
                Synth::SideJump { distance } => {
                    let h = 0.25 * (PI * u).sin();
                    let crouch = 0.5 * (1.0 - (PI * u).sin());
                    pose[L_HIP] = Quat::from_axis_angle(X, -crouch);
                    pose[R_HIP] = Quat::from_axis_angle(X, -crouch);
                    pose[L_KNEE] = Quat::from_axis_angle(X, 2.0 * crouch);
                    pose[R_KNEE] = Quat::from_axis_angle(X, 2.0 * crouch);
                    ([distance * u, PELVIS_HEIGHT - 0.15 * crouch + h, 0.0], 0.0)
                }
                Synth::Circle { radius, counterclockwise } => {
                    gait(&mut pose, 2.0 * PI * 1.8 * t, 0.4);
                    let dir = if counterclockwise { 1.0 } else { -1.0 };
                    let a = 2.0 * PI * u * dir;
                    ([radius * (1.0 - a.cos()), PELVIS_HEIGHT, radius * a.sin()], a)
                }
                Synth::Nod { amplitude } => {
                    let a = amplitude * (2.0 * PI * t).sin();
                    pose[NECK] = Quat::from_axis_angle(X, 0.5 * a);
                    pose[HEAD] = Quat::from_axis_angle(X, a);
                    ([0.0, PELVIS_HEIGHT, 0.0], 0.0)
                }
                Synth::Squat { depth } => {
                    let c = depth * 0.5 * (1.0 - (2.0 * PI * u).cos());
                    pose[L_HIP] = Quat::from_axis_angle(X, -c);
                    pose[R_HIP] = Quat::from_axis_angle(X, -c);
                    pose[L_KNEE] = Quat::from_axis_angle(X, 2.0 * c);
                    pose[R_KNEE] = Quat::from_axis_angle(X, 2.0 * c);
                    ([0.0, PELVIS_HEIGHT - 0.3 * c, 0.0], 0.0)
                }
            };
            pose[0] = Quat::from_yaw(yaw);
            root.push(pos);
            rots.push(pose);
        }
        MotionClip::new(fps, root, rots)
    }
}
