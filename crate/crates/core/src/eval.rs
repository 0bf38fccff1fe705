//! Closed-loop rollouts, paired-seed sweeps, and action / message maps over
//! a planar grid.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::datagen::{expert_labels, sample_state, Label};
use crate::error::{Error, Result};
use crate::expert::expert_actions;
use crate::game::{
    is_visible, observe, observe_team, step, DefenderAction, Event, FovMode, GameState, IntruderMode,
    DEFAULT_DT, SPAWN_RADIUS_MAX,
};
use crate::pin::{action_from_logits, PinPolicy, QuantMode, TeamBatch};
use crate::seed::derive_seed;

const TAG_GAME: u64 = 0x4741_4d45;

/// Long enough for any intruder to reach the perimeter from the spawn
/// annulus even on a detour.
pub fn default_max_time() -> f64 {
    2.0 * (SPAWN_RADIUS_MAX - 1.0) + std::f64::consts::TAU
}

/// Who picks the defenders' moves.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    Expert,
    Learned { policy: &'a PinPolicy, fov: FovMode },
}

impl Controller<'_> {
    /// One action per live defender, in index order.
    pub fn actions(&self, state: &GameState) -> Vec<DefenderAction> {
        match *self {
            Controller::Expert => expert_actions(state),
            Controller::Learned { policy, fov } => {
                let obs = observe_team(state, fov);
                if obs.is_empty() {
                    return Vec::new();
                }
                let out = policy.infer(&TeamBatch::new(&[obs]), QuantMode::Snap);
                (0..out.logits.rows())
                    .map(|a| DefenderAction::go(action_from_logits(out.logits.row(a))))
                    .collect()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Controller::Expert => "expert",
            Controller::Learned { .. } => "pin",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub captures: usize,
    pub breaches: usize,
    /// Intruders still live when the rollout stopped.
    pub remaining: usize,
    pub duration: f64,
    /// Stopped by the time limit rather than by the last intruder leaving.
    pub truncated: bool,
    /// Every state visited, the initial one first; empty unless recorded.
    pub trajectory: Vec<GameState>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutConfig {
    pub dt: f64,
    pub max_time: f64,
    pub intruder_mode: IntruderMode,
    pub record: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            dt: DEFAULT_DT,
            max_time: default_max_time(),
            intruder_mode: IntruderMode::GreedyEvader,
            record: false,
        }
    }
}

pub fn rollout(initial: &GameState, controller: &Controller, cfg: &RolloutConfig) -> Result<RolloutResult> {
    if !(cfg.dt > 0.0) || !(cfg.max_time >= 0.0) {
        return Err(Error::usage("rollout needs a positive dt and a non-negative time limit"));
    }
    let mut state = initial.clone();
    let start = state.time;
    let mut captures = 0;
    let mut breaches = 0;
    let mut trajectory = Vec::new();
    if cfg.record {
        trajectory.push(state.clone());
    }
    // integer step count keeps the stopping time free of drift
    let max_steps = (cfg.max_time / cfg.dt).ceil() as u64;
    let mut steps = 0;
    while !state.is_over() && steps < max_steps {
        let actions = controller.actions(&state);
        let (next, events) = step(&state, &actions, cfg.dt, cfg.intruder_mode)?;
        for e in events {
            match e {
                Event::Capture { .. } => captures += 1,
                Event::Breach { .. } => breaches += 1,
            }
        }
        state = next;
        steps += 1;
        if cfg.record {
            trajectory.push(state.clone());
        }
    }
    Ok(RolloutResult {
        captures,
        breaches,
        remaining: state.n_live_intruders(),
        duration: state.time - start,
        truncated: !state.is_over(),
        trajectory,
    })
}

/// Seed of game `game` at team size `size`; identical for every controller,
/// which pairs their games.
pub fn game_seed(base: u64, size: usize, game: usize) -> u64 {
    derive_seed(base, &[TAG_GAME, size as u64, game as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub fov: Option<FovMode>,
    pub width: Option<usize>,
    pub team_size: usize,
    pub game_seed: u64,
    pub captures: usize,
    pub breaches: usize,
    pub duration: f64,
}

pub const SWEEP_HEADER: &str = "policy,fov,width,team_size,game_seed,captures,breaches,duration";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let fov = r.fov.map(|f| f.to_string()).unwrap_or_default();
        let width = r.width.map(|w| w.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.2}",
            r.policy, fov, width, r.team_size, r.game_seed, r.captures, r.breaches, r.duration
        );
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepConfig {
    pub seed: u64,
    pub games: usize,
    pub rollout: RolloutConfig,
    pub threads: usize,
}

/// `games` n-vs-n games per team size. Rows come back ordered by size, then
/// game, whatever the thread count.
pub fn sweep(controller: &Controller, sizes: &[usize], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&n| (0..cfg.games).map(move |g| (n, g)))
        .collect();
    let (fov, width) = match controller {
        Controller::Expert => (None, None),
        Controller::Learned { policy, fov } => (Some(*fov), Some(policy.width())),
    };
    let run = |&(n, g): &(usize, usize)| -> Result<SweepRow> {
        let seed = game_seed(cfg.seed, n, g);
        let r = rollout(&sample_state(seed, n, n), controller, &cfg.rollout)?;
        Ok(SweepRow {
            policy: controller.name().to_string(),
            fov,
            width,
            team_size: n,
            game_seed: seed,
            captures: r.captures,
            breaches: r.breaches,
            duration: r.duration,
        })
    };
    if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    }
}

/// Mean captures per game for each team size, in the order of `sizes`.
pub fn mean_captures(rows: &[SweepRow], sizes: &[usize]) -> Vec<f64> {
    sizes
        .iter()
        .map(|&n| {
            let c: Vec<f64> = rows
                .iter()
                .filter(|r| r.team_size == n)
                .map(|r| r.captures as f64)
                .collect();
            if c.is_empty() {
                f64::NAN
            } else {
                c.iter().sum::<f64>() / c.len() as f64
            }
        })
        .collect()
}

/// The agent moved across the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Roam {
    /// The defender is placed at the angle of the cell.
    Defender(usize),
    /// The intruder is placed at the cell.
    Intruder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// Cells per side.
    pub resolution: usize,
    /// The grid covers `[-extent, extent]²`.
    pub extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution: 101,
            extent: SPAWN_RADIUS_MAX,
        }
    }
}

impl GridSpec {
    /// Cell centres, row by row from the bottom (y ascending, then x).
    pub fn points(&self) -> Vec<[f64; 2]> {
        let n = self.resolution;
        let at = |i: usize| {
            if n == 1 {
                0.0
            } else {
                -self.extent + 2.0 * self.extent * i as f64 / (n - 1) as f64
            }
        };
        (0..n).flat_map(|j| (0..n).map(move |i| [at(i), at(j)])).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellValue {
    /// The cell is inside the perimeter.
    Invalid,
    Class(Label),
    Message(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub value: CellValue,
    /// Whether the observer sees the roaming agent (always true for a
    /// roaming defender).
    pub visible: bool,
}

pub const GRID_HEADER: &str = "x,y,value,visible";

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut s = String::from(GRID_HEADER);
    s.push('\n');
    for c in cells {
        let value = match &c.value {
            CellValue::Invalid => "invalid".to_string(),
            CellValue::Class(l) => l.name().to_string(),
            CellValue::Message(m) => m.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(";"),
        };
        let _ = writeln!(s, "{:.4},{:.4},{},{}", c.x, c.y, value, u8::from(c.visible));
    }
    s
}

fn check_grid_inputs(base: &GameState, roam: Roam, observer: usize) -> Result<()> {
    let ok_roam = match roam {
        Roam::Defender(k) => base.defenders.get(k).is_some_and(|d| d.alive),
        Roam::Intruder(k) => base.intruders.get(k).is_some_and(|a| a.alive),
    };
    if !ok_roam {
        return Err(Error::usage(format!("{roam:?} is not a live agent")));
    }
    if !base.defenders.get(observer).is_some_and(|d| d.alive) {
        return Err(Error::usage(format!("observer {observer} is not a live defender")));
    }
    Ok(())
}

/// `base` with the roaming agent moved to `p`, or `None` inside the perimeter.
fn placed(base: &GameState, roam: Roam, p: [f64; 2]) -> Option<GameState> {
    let r = p[0].hypot(p[1]);
    if r <= 1.0 {
        return None;
    }
    let theta = crate::game::normalize_angle(p[1].atan2(p[0]));
    let mut s = base.clone();
    match roam {
        Roam::Defender(k) => s.defenders[k].angle = theta,
        Roam::Intruder(k) => {
            s.intruders[k].radius = r;
            s.intruders[k].angle = theta;
        }
    }
    Some(s)
}

fn roam_visible(state: &GameState, roam: Roam, observer: usize, fov: FovMode) -> bool {
    match roam {
        Roam::Defender(_) => true,
        Roam::Intruder(k) => is_visible(
            state.defenders[observer].position(),
            state.intruders[k].position(),
            fov,
        ),
    }
}

/// Position of `observer` among the live defenders.
fn live_rank(state: &GameState, observer: usize) -> usize {
    state.live_defenders().position(|d| d == observer).expect("observer is live")
}

/// The action `observer` takes as the roaming agent sweeps the grid. The
/// expert may answer don't-care; the learned policy always commits.
pub fn action_grid(
    controller: &Controller,
    base: &GameState,
    roam: Roam,
    observer: usize,
    spec: &GridSpec,
) -> Result<Vec<GridCell>> {
    check_grid_inputs(base, roam, observer)?;
    let fov = match controller {
        Controller::Expert => FovMode::Full360,
        Controller::Learned { fov, .. } => *fov,
    };
    Ok(spec
        .points()
        .into_iter()
        .map(|p| match placed(base, roam, p) {
            None => GridCell {
                x: p[0],
                y: p[1],
                value: CellValue::Invalid,
                visible: false,
            },
            Some(s) => {
                let rank = live_rank(&s, observer);
                let label = match controller {
                    Controller::Expert => expert_labels(&s)[rank],
                    Controller::Learned { .. } => match controller.actions(&s)[rank].direction {
                        crate::game::Direction::Ccw => Label::Ccw,
                        crate::game::Direction::Cw => Label::Cw,
                    },
                };
                GridCell {
                    x: p[0],
                    y: p[1],
                    value: CellValue::Class(label),
                    visible: roam_visible(&s, roam, observer, fov),
                }
            }
        })
        .collect())
}

/// The message `observer` broadcasts as the roaming agent sweeps the grid.
pub fn message_grid(
    policy: &PinPolicy,
    fov: FovMode,
    base: &GameState,
    roam: Roam,
    observer: usize,
    spec: &GridSpec,
) -> Result<Vec<GridCell>> {
    check_grid_inputs(base, roam, observer)?;
    spec.points()
        .into_iter()
        .map(|p| {
            Ok(match placed(base, roam, p) {
                None => GridCell {
                    x: p[0],
                    y: p[1],
                    value: CellValue::Invalid,
                    visible: false,
                },
                Some(s) => {
                    let obs = observe(&s, observer, fov)?;
                    let m = policy.encode_message(&policy.perceive(&obs));
                    GridCell {
                        x: p[0],
                        y: p[1],
                        value: CellValue::Message(m.values),
                        visible: roam_visible(&s, roam, observer, fov),
                    }
                }
            })
        })
        .collect()
}

/// Population variance of each message component over the valid cells,
/// averaged over components. Zero when there are fewer than two cells.
pub fn message_variance(cells: &[GridCell]) -> f64 {
    let msgs: Vec<&Vec<f64>> = cells
        .iter()
        .filter_map(|c| match &c.value {
            CellValue::Message(m) => Some(m),
            _ => None,
        })
        .collect();
    let Some(first) = msgs.first() else { return 0.0 };
    let dims = first.len();
    if dims == 0 || msgs.len() < 2 {
        return 0.0;
    }
    let n = msgs.len() as f64;
    (0..dims)
        .map(|k| {
            let mean = msgs.iter().map(|m| m[k]).sum::<f64>() / n;
            msgs.iter().map(|m| (m[k] - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / dims as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pin::PolicyConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(width: usize) -> PinPolicy {
        let cfg = PolicyConfig {
            width,
            hidden: 8,
            feature: 8,
            decoded: 4,
            perception_layers: 2,
            module_layers: 2,
            ..PolicyConfig::default()
        };
        PinPolicy::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn radial() -> RolloutConfig {
        RolloutConfig {
            intruder_mode: IntruderMode::Radial,
            ..RolloutConfig::default()
        }
    }

    #[test]
    fn lone_defender_catches_head_on_intruder() {
        let s = GameState::new(&[0.0], &[(2.0, 0.0)]);
        let r = rollout(&s, &Controller::Expert, &radial()).unwrap();
        assert_eq!((r.captures, r.breaches, r.remaining), (1, 0, 0));
        assert!(!r.truncated);
    }

    #[test]
    fn unreachable_intruder_breaches() {
        let s = GameState::new(&[0.0], &[(1.3, std::f64::consts::PI)]);
        let r = rollout(&s, &Controller::Expert, &radial()).unwrap();
        assert_eq!((r.captures, r.breaches), (0, 1));
        assert!((r.duration - 0.3).abs() < 0.02);
    }

    #[test]
    fn time_limit_truncates() {
        let s = GameState::new(&[0.0], &[(3.0, 2.0)]);
        let cfg = RolloutConfig {
            max_time: 0.5,
            record: true,
            ..RolloutConfig::default()
        };
        let r = rollout(&s, &Controller::Expert, &cfg).unwrap();
        assert!(r.truncated);
        assert_eq!(r.remaining, 1);
        assert_eq!(r.trajectory.len(), 51);
    }

    #[test]
    fn sweep_rows_are_paired_and_thread_independent() {
        let p = policy(1);
        let learned = Controller::Learned {
            policy: &p,
            fov: FovMode::Full360,
        };
        let cfg = SweepConfig {
            seed: 3,
            games: 3,
            rollout: RolloutConfig::default(),
            threads: 1,
        };
        let a = sweep(&Controller::Expert, &[2, 3], &cfg).unwrap();
        let b = sweep(&learned, &[2, 3], &cfg).unwrap();
        let seeds = |rows: &[SweepRow]| rows.iter().map(|r| r.game_seed).collect::<Vec<_>>();
        assert_eq!(seeds(&a), seeds(&b));
        let c = sweep(&learned, &[2, 3], &SweepConfig { threads: 2, ..cfg }).unwrap();
        assert_eq!(b, c);
        let csv = sweep_csv(&a);
        assert!(csv.starts_with(SWEEP_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("expert,,,2,"));
    }

    #[test]
    fn grids_mark_the_interior_invalid() {
        let base = GameState::new(&[0.0, 2.0], &[(2.0, 1.0)]);
        let spec = GridSpec {
            resolution: 11,
            extent: 3.0,
        };
        let cells = action_grid(&Controller::Expert, &base, Roam::Intruder(0), 0, &spec).unwrap();
        assert_eq!(cells.len(), 121);
        let centre = &cells[60];
        assert_eq!((centre.x, centre.y), (0.0, 0.0));
        assert_eq!(centre.value, CellValue::Invalid);
        let p = policy(2);
        let m = message_grid(&p, FovMode::Full360, &base, Roam::Defender(0), 0, &spec).unwrap();
        assert!(message_variance(&m) >= 0.0);
        assert!(grid_csv(&m).lines().nth(61).unwrap().ends_with(",invalid,0"));
        assert!(action_grid(&Controller::Expert, &base, Roam::Intruder(4), 0, &spec).is_err());
    }

    #[test]
    fn variance_of_constant_messages_is_zero() {
        let cell = |v: f64| GridCell {
            x: 0.0,
            y: 0.0,
            value: CellValue::Message(vec![v, 1.0]),
            visible: true,
        };
        assert_eq!(message_variance(&[cell(0.5), cell(0.5)]), 0.0);
        assert!((message_variance(&[cell(0.0), cell(1.0)]) - 0.125).abs() < 1e-15);
    }
}
