//! Perimeter-defense game on the unit circle.
//!
//! Defenders live on the circle and move at unit speed (one radian per unit
//! time). Intruders start outside and move at unit speed in the plane. A
//! defender closing within [`CAPTURE_DISTANCE`] of an intruder consumes both;
//! an intruder reaching radius 1 breaches. Everything here is a pure function
//! of its inputs; dead agents stay in the lists (with `alive == false`) so
//! indices are stable over a game's life.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const CAPTURE_DISTANCE: f64 = 0.1;
pub const DEFAULT_DT: f64 = 0.01;
pub const SPAWN_RADIUS_MIN: f64 = 1.2;
pub const SPAWN_RADIUS_MAX: f64 = 3.0;
/// Candidate breach points examined by [`IntruderMode::GreedyEvader`].
pub const EVADER_GRID_POINTS: usize = 64;

const TIE_TOLERANCE: f64 = 1e-12;

/// Wrap any finite angle into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArcDirection {
    Ccw,
    Cw,
    Tie,
}

/// Shortest angular distance from `from` to `to`, and the rotation that
/// covers it. `Tie` when the two are coincident or antipodal.
pub fn arc_distance(from: f64, to: f64) -> (f64, ArcDirection) {
    let d = normalize_angle(to - from);
    let (dist, dir) = if d <= PI {
        (d, ArcDirection::Ccw)
    } else {
        (TAU - d, ArcDirection::Cw)
    };
    if dist < TIE_TOLERANCE || (PI - dist).abs() < TIE_TOLERANCE {
        (dist, ArcDirection::Tie)
    } else {
        (dist, dir)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Ccw,
    Cw,
}

impl Direction {
    /// +1 for counterclockwise (increasing angle).
    pub fn sign(self) -> f64 {
        match self {
            Direction::Ccw => 1.0,
            Direction::Cw => -1.0,
        }
    }
}

/// One defender's move for a step. `dont_care` only ever comes from the
/// expert; consumers ignore `direction` when it is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DefenderAction {
    pub direction: Direction,
    pub dont_care: bool,
}

impl DefenderAction {
    pub fn go(direction: Direction) -> Self {
        DefenderAction {
            direction,
            dont_care: false,
        }
    }

    pub fn dont_care() -> Self {
        DefenderAction {
            direction: Direction::Ccw,
            dont_care: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FovMode {
    Full360,
    Half180,
}

impl fmt::Display for FovMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FovMode::Full360 => f.write_str("360"),
            FovMode::Half180 => f.write_str("180"),
        }
    }
}

impl FromStr for FovMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "360" | "full" | "full360" => Ok(FovMode::Full360),
            "180" | "half" | "half180" => Ok(FovMode::Half180),
            other => Err(Error::config(format!(
                "unknown field of view `{other}` (expected 360 or 180)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntruderMode {
    /// Straight at the origin.
    Radial,
    /// Re-targets every step to the breach point with the best margin over
    /// the nearest defender.
    GreedyEvader,
}

impl fmt::Display for IntruderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntruderMode::Radial => f.write_str("radial"),
            IntruderMode::GreedyEvader => f.write_str("greedy"),
        }
    }
}

impl FromStr for IntruderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "radial" => Ok(IntruderMode::Radial),
            "greedy" | "greedy_evader" | "evader" => Ok(IntruderMode::GreedyEvader),
            other => Err(Error::config(format!(
                "unknown intruder mode `{other}` (expected radial or greedy)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Defender {
    pub angle: f64,
    pub alive: bool,
}

impl Defender {
    pub fn position(&self) -> [f64; 2] {
        [self.angle.cos(), self.angle.sin()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intruder {
    pub radius: f64,
    pub angle: f64,
    pub alive: bool,
}

impl Intruder {
    pub fn position(&self) -> [f64; 2] {
        [
            self.radius * self.angle.cos(),
            self.radius * self.angle.sin(),
        ]
    }

    fn from_position(p: [f64; 2]) -> (f64, f64) {
        (p[0].hypot(p[1]), normalize_angle(p[1].atan2(p[0])))
    }
}

/// Full joint state of one game.
#[derive(Clone, Debug, PartialEq)]
pub struct GameState {
    pub defenders: Vec<Defender>,
    pub intruders: Vec<Intruder>,
    pub time: f64,
}

impl GameState {
    /// All agents alive, angles normalized, time zero. Intruders are given as
    /// `(radius, angle)`.
    pub fn new(defender_angles: &[f64], intruders: &[(f64, f64)]) -> Self {
        GameState {
            defenders: defender_angles
                .iter()
                .map(|&a| Defender {
                    angle: normalize_angle(a),
                    alive: true,
                })
                .collect(),
            intruders: intruders
                .iter()
                .map(|&(radius, a)| Intruder {
                    radius,
                    angle: normalize_angle(a),
                    alive: true,
                })
                .collect(),
            time: 0.0,
        }
    }

    pub fn live_defenders(&self) -> impl Iterator<Item = usize> + '_ {
        self.defenders
            .iter()
            .enumerate()
            .filter(|(_, d)| d.alive)
            .map(|(i, _)| i)
    }

    pub fn live_intruders(&self) -> impl Iterator<Item = usize> + '_ {
        self.intruders
            .iter()
            .enumerate()
            .filter(|(_, a)| a.alive)
            .map(|(i, _)| i)
    }

    pub fn n_live_defenders(&self) -> usize {
        self.defenders.iter().filter(|d| d.alive).count()
    }

    pub fn n_live_intruders(&self) -> usize {
        self.intruders.iter().filter(|a| a.alive).count()
    }

    pub fn is_over(&self) -> bool {
        self.n_live_intruders() == 0
    }

    /// Every agent rotated by `delta` about the origin.
    pub fn rotated(&self, delta: f64) -> GameState {
        let mut out = self.clone();
        for d in &mut out.defenders {
            d.angle = normalize_angle(d.angle + delta);
        }
        for a in &mut out.intruders {
            a.angle = normalize_angle(a.angle + delta);
        }
        out
    }

    /// Copy with only live agents, in index order, time preserved.
    pub fn compacted(&self) -> GameState {
        GameState {
            defenders: self.defenders.iter().filter(|d| d.alive).copied().collect(),
            intruders: self.intruders.iter().filter(|a| a.alive).copied().collect(),
            time: self.time,
        }
    }
}

/// One agent's private view.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub self_position: [f64; 2],
    /// Treated as an unordered set by every consumer.
    pub visible_intruders: Vec<[f64; 2]>,
    pub fov: FovMode,
}

/// Whether a defender at unit-circle position `d` sees the point `p`.
pub fn is_visible(d: [f64; 2], p: [f64; 2], fov: FovMode) -> bool {
    match fov {
        FovMode::Full360 => true,
        FovMode::Half180 => (p[0] - d[0]) * d[0] + (p[1] - d[1]) * d[1] >= 0.0,
    }
}

/// The private observation of defender `defender_index`.
pub fn observe(state: &GameState, defender_index: usize, fov: FovMode) -> Result<Observation> {
    let d = state.defenders.get(defender_index).ok_or_else(|| {
        Error::usage(format!(
            "defender index {defender_index} out of range ({} defenders)",
            state.defenders.len()
        ))
    })?;
    if !d.alive {
        return Err(Error::usage(format!("defender {defender_index} is dead")));
    }
    let me = d.position();
    let visible_intruders = state
        .intruders
        .iter()
        .filter(|a| a.alive)
        .map(Intruder::position)
        .filter(|&p| is_visible(me, p, fov))
        .collect();
    Ok(Observation {
        self_position: me,
        visible_intruders,
        fov,
    })
}

/// Observations of every live defender, in index order.
pub fn observe_team(state: &GameState, fov: FovMode) -> Vec<Observation> {
    state
        .live_defenders()
        .map(|i| observe(state, i, fov).expect("live defender"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Event {
    Capture { defender: usize, intruder: usize },
    Breach { intruder: usize },
}

/// Consume every defender/intruder pair within capture distance, nearest
/// pairs first (ties by defender index, then intruder index), then turn every
/// live intruder at radius ≤ 1 into a breach.
pub fn resolve_captures(state: &GameState) -> (GameState, Vec<Event>) {
    let mut out = state.clone();
    let mut events = Vec::new();

    let mut close: Vec<(f64, usize, usize)> = Vec::new();
    for d in state.live_defenders() {
        let dp = state.defenders[d].position();
        for a in state.live_intruders() {
            let ap = state.intruders[a].position();
            let dist = (ap[0] - dp[0]).hypot(ap[1] - dp[1]);
            if dist <= CAPTURE_DISTANCE {
                close.push((dist, d, a));
            }
        }
    }
    close.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for (_, d, a) in close {
        if out.defenders[d].alive && out.intruders[a].alive {
            out.defenders[d].alive = false;
            out.intruders[a].alive = false;
            events.push(Event::Capture {
                defender: d,
                intruder: a,
            });
        }
    }

    for (i, a) in out.intruders.iter_mut().enumerate() {
        if a.alive && a.radius <= 1.0 {
            a.alive = false;
            events.push(Event::Breach { intruder: i });
        }
    }
    (out, events)
}

/// Angle of the perimeter point a [`IntruderMode::GreedyEvader`] intruder
/// heads for. The grid is anchored at the intruder's own angle so the choice
/// rotates with the state; ties keep the smallest grid offset (offset 0 is
/// the radial breach point).
pub fn evader_target(state: &GameState, intruder: usize) -> f64 {
    let a = &state.intruders[intruder];
    let p = a.position();
    let mut best = (f64::NEG_INFINITY, a.angle);
    for k in 0..EVADER_GRID_POINTS {
        let theta = normalize_angle(a.angle + TAU * k as f64 / EVADER_GRID_POINTS as f64);
        let defender_time = state
            .live_defenders()
            .map(|d| arc_distance(state.defenders[d].angle, theta).0)
            .fold(f64::INFINITY, f64::min);
        let travel = (p[0] - theta.cos()).hypot(p[1] - theta.sin());
        let margin = defender_time - travel;
        if margin > best.0 {
            best = (margin, theta);
        }
    }
    best.1
}

/// Unit heading of every intruder, aligned with `state.intruders`; dead
/// intruders get the zero vector.
pub fn intruder_headings(state: &GameState, mode: IntruderMode) -> Vec<[f64; 2]> {
    state
        .intruders
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if !a.alive {
                return [0.0, 0.0];
            }
            let radial = [-a.angle.cos(), -a.angle.sin()];
            match mode {
                IntruderMode::Radial => radial,
                IntruderMode::GreedyEvader => {
                    let theta = evader_target(state, i);
                    let p = a.position();
                    let v = [theta.cos() - p[0], theta.sin() - p[1]];
                    let n = v[0].hypot(v[1]);
                    if n < 1e-12 {
                        radial
                    } else {
                        [v[0] / n, v[1] / n]
                    }
                }
            }
        })
        .collect()
}

/// Advance the game by `dt`. `actions` holds one entry per live defender, in
/// index order; `dont_care` actions fall back to their direction field.
pub fn step(
    state: &GameState,
    actions: &[DefenderAction],
    dt: f64,
    mode: IntruderMode,
) -> Result<(GameState, Vec<Event>)> {
    let live: Vec<usize> = state.live_defenders().collect();
    if actions.len() != live.len() {
        return Err(Error::usage(format!(
            "{} actions for {} live defenders",
            actions.len(),
            live.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::usage(format!("dt must be positive, got {dt}")));
    }
    let headings = intruder_headings(state, mode);
    let mut next = state.clone();
    for (&d, act) in live.iter().zip(actions) {
        let def = &mut next.defenders[d];
        def.angle = normalize_angle(def.angle + act.direction.sign() * dt);
    }
    for (a, h) in next.intruders.iter_mut().zip(&headings) {
        if !a.alive {
            continue;
        }
        let p = a.position();
        let (r, theta) = Intruder::from_position([p[0] + h[0] * dt, p[1] + h[1] * dt]);
        a.radius = r;
        a.angle = theta;
    }
    next.time += dt;
    Ok(resolve_captures(&next))
}
