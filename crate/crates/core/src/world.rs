//! Geometry and kinematics shared by the service and avoidance phases.
//!
//! Coordinates are metres in an east/north frame. Headings are measured
//! counter-clockwise from the +x axis, so a positive bank angle turns left.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Altitude band; only meaningful for the service phase.
    pub h_min: f64,
    pub h_max: f64,
}

impl MapBounds {
    pub fn new(x: (f64, f64), y: (f64, f64), h: (f64, f64)) -> Result<Self> {
        let b = MapBounds {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            h_min: h.0,
            h_max: h.1,
        };
        b.validate()?;
        Ok(b)
    }

    /// Planar map with a nominal altitude band, for the avoidance phase.
    pub fn planar(width: f64, height: f64) -> Self {
        MapBounds {
            x_min: 0.0,
            x_max: width,
            y_min: 0.0,
            y_max: height,
            h_min: 0.0,
            h_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo < hi;
        if ok(self.x_min, self.x_max) && ok(self.y_min, self.y_max) && ok(self.h_min, self.h_max)
        {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate map bounds {self:?}")))
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Ground-plane diagonal length.
    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// Serving UAV position: ground coordinates plus altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavPose {
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

/// Straight-line distance between the UAV and a ground user.
pub fn distance_to_user(pose: &UavPose, user: &UserState) -> f64 {
    let dx = pose.x - user.x;
    let dy = pose.y - user.y;
    (pose.h * pose.h + dx * dx + dy * dy).sqrt()
}

/// Elevation angle of the UAV seen from the user, in degrees.
pub fn elevation_deg(pose: &UavPose, user: &UserState) -> f64 {
    let ground = (pose.x - user.x).hypot(pose.y - user.y);
    pose.h.atan2(ground).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceMove {
    Left,
    Right,
    Forward,
    Backward,
    Ascend,
    Descend,
    Hover,
}

impl ServiceMove {
    pub const ALL: [ServiceMove; 7] = [
        ServiceMove::Left,
        ServiceMove::Right,
        ServiceMove::Forward,
        ServiceMove::Backward,
        ServiceMove::Ascend,
        ServiceMove::Descend,
        ServiceMove::Hover,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn opposite(self) -> Self {
        use ServiceMove::*;
        match self {
            Left => Right,
            Right => Left,
            Forward => Backward,
            Backward => Forward,
            Ascend => Descend,
            Descend => Ascend,
            Hover => Hover,
        }
    }

    fn delta(self) -> (f64, f64, f64) {
        use ServiceMove::*;
        match self {
            Left => (-1.0, 0.0, 0.0),
            Right => (1.0, 0.0, 0.0),
            Forward => (0.0, 1.0, 0.0),
            Backward => (0.0, -1.0, 0.0),
            Ascend => (0.0, 0.0, 1.0),
            Descend => (0.0, 0.0, -1.0),
            Hover => (0.0, 0.0, 0.0),
        }
    }
}

/// Result of a service move; `clamped` is set when a bound truncated it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveOutcome {
    pub pose: UavPose,
    pub clamped: bool,
}

pub fn apply_service_move(
    pose: &UavPose,
    mv: ServiceMove,
    step: f64,
    bounds: &MapBounds,
) -> MoveOutcome {
    let (dx, dy, dh) = mv.delta();
    let raw = UavPose {
        x: pose.x + dx * step,
        y: pose.y + dy * step,
        h: pose.h + dh * step,
    };
    let next = UavPose {
        x: raw.x.clamp(bounds.x_min, bounds.x_max),
        y: raw.y.clamp(bounds.y_min, bounds.y_max),
        h: raw.h.clamp(bounds.h_min, bounds.h_max),
    };
    MoveOutcome {
        pose: next,
        clamped: next != raw,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwnshipState {
    pub x: f64,
    pub y: f64,
    /// Airspeed, m/s.
    pub speed: f64,
    /// Heading in radians, wrapped to `[0, 2π)`.
    pub heading: f64,
    /// Bank (tilt) angle in radians.
    pub tilt: f64,
}

impl OwnshipState {
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        (self.x - x).hypot(self.y - y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntruderState {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicLimits {
    pub v_min: f64,
    pub v_max: f64,
    /// Maximum bank magnitude, radians.
    pub tilt_max: f64,
    /// Bank change per step, radians.
    pub tilt_step: f64,
    /// Acceleration magnitude, m/s².
    pub accel_step: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        KinematicLimits {
            v_min: 20.0,
            v_max: 60.0,
            tilt_max: 30f64.to_radians(),
            tilt_step: 5f64.to_radians(),
            accel_step: 2.0,
            gravity: 9.81,
            dt: 1.0,
        }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.v_min,
            self.v_max,
            self.tilt_max,
            self.tilt_step,
            self.accel_step,
            self.gravity,
            self.dt,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.v_min <= 0.0 || self.v_min > self.v_max || self.dt <= 0.0 {
            return Err(Error::Config(format!("bad kinematic limits {self:?}")));
        }
        if self.tilt_max <= 0.0 || self.tilt_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("tilt_max must lie in (0, π/2)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltCommand {
    Left,
    Straight,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelCommand {
    SpeedUp,
    Constant,
    SlowDown,
}

/// One of the nine composite avoidance actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AvoidAction {
    pub tilt: TiltCommand,
    pub accel: AccelCommand,
}

impl AvoidAction {
    pub const COUNT: usize = 9;

    pub const STRAIGHT_CONSTANT: AvoidAction = AvoidAction {
        tilt: TiltCommand::Straight,
        accel: AccelCommand::Constant,
    };

    pub fn all() -> impl Iterator<Item = AvoidAction> {
        (0..Self::COUNT).map(|i| Self::from_index(i).unwrap())
    }

    pub fn index(self) -> usize {
        let t = match self.tilt {
            TiltCommand::Left => 0,
            TiltCommand::Straight => 1,
            TiltCommand::Right => 2,
        };
        let a = match self.accel {
            AccelCommand::SpeedUp => 0,
            AccelCommand::Constant => 1,
            AccelCommand::SlowDown => 2,
        };
        t * 3 + a
    }

    pub fn from_index(i: usize) -> Option<Self> {
        if i >= Self::COUNT {
            return None;
        }
        let tilt = [TiltCommand::Left, TiltCommand::Straight, TiltCommand::Right][i / 3];
        let accel = [
            AccelCommand::SpeedUp,
            AccelCommand::Constant,
            AccelCommand::SlowDown,
        ][i % 3];
        Some(AvoidAction { tilt, accel })
    }

    fn tilt_sign(self) -> f64 {
        match self.tilt {
            TiltCommand::Left => 1.0,
            TiltCommand::Straight => 0.0,
            TiltCommand::Right => -1.0,
        }
    }

    fn accel_sign(self) -> f64 {
        match self.accel {
            AccelCommand::SpeedUp => 1.0,
            AccelCommand::Constant => 0.0,
            AccelCommand::SlowDown => -1.0,
        }
    }
}

impl fmt::Display for AvoidAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.tilt {
            TiltCommand::Left => "left",
            TiltCommand::Straight => "straight",
            TiltCommand::Right => "right",
        };
        let a = match self.accel {
            AccelCommand::SpeedUp => "speed_up",
            AccelCommand::Constant => "constant",
            AccelCommand::SlowDown => "slow_down",
        };
        write!(f, "{t}/{a}")
    }
}

impl FromStr for AvoidAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(i) = s.parse::<usize>() {
            return Self::from_index(i)
                .ok_or_else(|| Error::NotFound(format!("avoidance action index {i}")));
        }
        Self::all()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::NotFound(format!("avoidance action `{s}`")))
    }
}

/// Coordinated-turn update: bank and speed change first, then the heading
/// rate `g·tan(φ)/v` and the position are integrated over one step.
pub fn step_ownship(s: &OwnshipState, a: AvoidAction, lim: &KinematicLimits) -> OwnshipState {
    let tilt = (s.tilt + a.tilt_sign() * lim.tilt_step).clamp(-lim.tilt_max, lim.tilt_max);
    let speed = (s.speed + a.accel_sign() * lim.accel_step * lim.dt).clamp(lim.v_min, lim.v_max);
    let turn_rate = lim.gravity * tilt.tan() / speed;
    let heading = wrap_angle(s.heading + turn_rate * lim.dt);
    let (sin, cos) = heading.sin_cos();
    OwnshipState {
        x: s.x + speed * cos * lim.dt,
        y: s.y + speed * sin * lim.dt,
        speed,
        heading,
        tilt,
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Constant-velocity motion with specular reflection at the map edges.
pub fn step_intruders(intruders: &[IntruderState], dt: f64, bounds: &MapBounds) -> Vec<IntruderState> {
    intruders
        .iter()
        .map(|it| {
            let (x, vx) = reflect(it.x + it.vx * dt, it.vx, bounds.x_min, bounds.x_max);
            let (y, vy) = reflect(it.y + it.vy * dt, it.vy, bounds.y_min, bounds.y_max);
            IntruderState { x, y, vx, vy, ..*it }
        })
        .collect()
}

fn reflect(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if p > hi {
        (2.0 * hi - p, -v)
    } else if p < lo {
        (2.0 * lo - p, -v)
    } else {
        (p, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    NonTerminal,
    Goal,
    Timeout,
    Collision,
}

impl TerminalKind {
    pub fn is_terminal(self) -> bool {
        self != TerminalKind::NonTerminal
    }
}

impl fmt::Display for TerminalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminalKind::NonTerminal => "non_terminal",
            TerminalKind::Goal => "goal",
            TerminalKind::Timeout => "timeout",
            TerminalKind::Collision => "collision",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalConfig {
    pub d_min: f64,
    pub goal_radius: f64,
    pub max_steps: usize,
    pub bounds: MapBounds,
}

/// Classifies an avoidance-phase state. Collision outranks Timeout, which
/// outranks Goal.
pub fn classify_terminal(
    s: &OwnshipState,
    steps_taken: usize,
    intruders: &[IntruderState],
    goal: (f64, f64),
    cfg: &TerminalConfig,
) -> TerminalKind {
    let d_min_sq = cfg.d_min * cfg.d_min;
    if intruders.iter().any(|it| {
        let dx = it.x - s.x;
        let dy = it.y - s.y;
        dx * dx + dy * dy < d_min_sq
    }) {
        return TerminalKind::Collision;
    }
    if !cfg.bounds.contains_xy(s.x, s.y) || steps_taken >= cfg.max_steps {
        return TerminalKind::Timeout;
    }
    if s.distance_to(goal.0, goal.1) <= cfg.goal_radius {
        return TerminalKind::Goal;
    }
    TerminalKind::NonTerminal
}
