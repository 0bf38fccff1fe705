//! Scenario sampling, expert labelling, difficulty-biased rejection sampling
//! and the dataset file format.
//!
//! A dataset file is a manifest followed by packed records:
//! `[n_d: u16][n_a: u16][n_d × angle f32][n_a × (r f32, θ f32)][n_d × label u8]`,
//! all little-endian, labels `0 = CCW, 1 = CW, 2 = don't care`. States are
//! rounded to `f32` before they are labelled, so what is stored is exactly
//! what the expert saw.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expert::{capture_slack, expert_actions, expert_assignment};
use crate::game::{
    observe_team, Defender, Direction, FovMode, GameState, Intruder, Observation, SPAWN_RADIUS_MAX,
    SPAWN_RADIUS_MIN,
};
use crate::manifest::{read_file, Manifest};
use crate::seed::rng_for;

const FORMAT: &str = "perimeter-dataset";
const VERSION: u32 = 1;
/// Tags separating the random streams derived from one dataset seed.
const TAG_SHARD: u64 = 0x5348_4152;
const TAG_VALIDATION: u64 = 0x5641_4c49;
/// Give up on a shard after this many proposals per requested example.
const MAX_PROPOSALS_PER_EXAMPLE: usize = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Ccw,
    Cw,
    DontCare,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Ccw => 0,
            Label::Cw => 1,
            Label::DontCare => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Label> {
        match c {
            0 => Some(Label::Ccw),
            1 => Some(Label::Cw),
            2 => Some(Label::DontCare),
            _ => None,
        }
    }

    /// Class index for the loss; `None` for don't-care.
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Ccw => Some(0),
            Label::Cw => Some(1),
            Label::DontCare => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Ccw => "ccw",
            Label::Cw => "cw",
            Label::DontCare => "dont_care",
        }
    }
}

/// Expert labels for every live defender, in index order.
pub fn expert_labels(state: &GameState) -> Vec<Label> {
    expert_actions(state)
        .into_iter()
        .map(|a| match (a.dont_care, a.direction) {
            (true, _) => Label::DontCare,
            (false, Direction::Ccw) => Label::Ccw,
            (false, Direction::Cw) => Label::Cw,
        })
        .collect()
}

/// Uniform defender angles; intruders uniform in angle with radius uniform
/// in the spawn annulus.
pub fn sample_state_with<R: Rng + ?Sized>(rng: &mut R, n_defenders: usize, n_intruders: usize) -> GameState {
    let defenders: Vec<f64> = (0..n_defenders).map(|_| rng.random_range(0.0..TAU)).collect();
    let intruders: Vec<(f64, f64)> = (0..n_intruders)
        .map(|_| {
            let r = rng.random_range(SPAWN_RADIUS_MIN..=SPAWN_RADIUS_MAX);
            let a = rng.random_range(0.0..TAU);
            (r, a)
        })
        .collect();
    GameState::new(&defenders, &intruders)
}

pub fn sample_state(seed: u64, n_defenders: usize, n_intruders: usize) -> GameState {
    sample_state_with(&mut rng_for(seed, &[]), n_defenders, n_intruders)
}

/// Higher is harder: unmatched intruders count one each, plus how tight the
/// matched pairs are (`1 − mean slack`, slack clamped to `[0, 1]`).
pub fn difficulty(state: &GameState) -> f64 {
    let assignment = expert_assignment(state);
    let deficit = (state.n_live_intruders() - assignment.size()) as f64;
    if assignment.pairs.is_empty() {
        return deficit;
    }
    let mean_slack = assignment
        .pairs
        .iter()
        .map(|&(d, i)| {
            let a = &state.intruders[i];
            capture_slack(state.defenders[d].angle, a.radius, a.angle)
        })
        .sum::<f64>()
        / assignment.pairs.len() as f64;
    deficit + (1.0 - mean_slack.clamp(0.0, 1.0))
}

fn round_angle(a: f64) -> f64 {
    let r = a as f32 as f64;
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// The state exactly as a dataset record stores it.
pub fn round_state(state: &GameState) -> GameState {
    let mut s = state.compacted();
    s.time = 0.0;
    for d in &mut s.defenders {
        d.angle = round_angle(d.angle);
    }
    for a in &mut s.intruders {
        a.radius = a.radius as f32 as f64;
        a.angle = round_angle(a.angle);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub state: GameState,
    pub labels: Vec<Label>,
    pub difficulty: f64,
}

impl LabeledExample {
    pub fn from_state(state: GameState) -> Self {
        let labels = expert_labels(&state);
        let difficulty = difficulty(&state);
        LabeledExample {
            state,
            labels,
            difficulty,
        }
    }

    pub fn observations(&self, fov: FovMode) -> Vec<Observation> {
        observe_team(&self.state, fov)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    /// Scenarios are every `(n_d, n_a)` with `1 ≤ n_d, n_a ≤ max_size`.
    pub max_size: usize,
    /// Mean examples per scenario.
    pub count_per_scenario: usize,
    pub fov: FovMode,
    /// Acceptance ∝ `exp(difficulty / T)`; infinity disables the bias.
    pub bias_temperature: f64,
    /// Share of all examples drawn from scenarios with `n_d ≠ n_a`.
    pub unequal_fraction: f64,
    pub seed: u64,
    pub shard_size: usize,
    pub threads: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            max_size: 5,
            count_per_scenario: 20_000,
            fov: FovMode::Full360,
            bias_temperature: 2.0,
            unequal_fraction: 0.5,
            seed: 0,
            shard_size: 1_000,
            threads: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_size == 0 || self.max_size > u16::MAX as usize {
            return Err(Error::config("max team size must be in 1..=65535"));
        }
        if self.count_per_scenario == 0 {
            return Err(Error::config("count per scenario must be positive"));
        }
        if !(self.bias_temperature > 0.0) {
            return Err(Error::config("bias temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.unequal_fraction) {
            return Err(Error::config("unequal fraction must be in [0, 1]"));
        }
        if self.shard_size == 0 {
            return Err(Error::config("shard size must be positive"));
        }
        Ok(())
    }

    /// `(n_d, n_a, examples)` per scenario in generation order.
    pub fn scenarios(&self) -> Vec<(usize, usize, usize)> {
        let n = self.max_size;
        let total = (self.count_per_scenario * n * n) as f64;
        let n_unequal = n * (n - 1);
        let mut out = Vec::new();
        for d in 1..=n {
            for a in 1..=n {
                let count = if n_unequal == 0 {
                    self.count_per_scenario
                } else if d == a {
                    (total * (1.0 - self.unequal_fraction) / n as f64).round() as usize
                } else {
                    (total * self.unequal_fraction / n_unequal as f64).round() as usize
                };
                if count > 0 {
                    out.push((d, a, count));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub proposed: u64,
    pub accepted: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub examples: Vec<LabeledExample>,
    /// Examples per shard, in file order.
    pub shard_lengths: Vec<usize>,
    pub stats: AcceptanceStats,
}

struct ShardJob {
    scenario: usize,
    index: usize,
    n_defenders: usize,
    n_intruders: usize,
    target: usize,
}

fn generate_shard(cfg: &DatasetConfig, job: &ShardJob) -> Result<(Vec<LabeledExample>, AcceptanceStats)> {
    let mut rng = rng_for(cfg.seed, &[TAG_SHARD, job.scenario as u64, job.index as u64]);
    let mut out = Vec::with_capacity(job.target);
    let mut stats = AcceptanceStats::default();
    let mut running_max = f64::NEG_INFINITY;
    let cap = job.target * MAX_PROPOSALS_PER_EXAMPLE;
    while out.len() < job.target && (stats.proposed as usize) < cap {
        stats.proposed += 1;
        let state = round_state(&sample_state_with(&mut rng, job.n_defenders, job.n_intruders));
        let example = LabeledExample::from_state(state);
        running_max = running_max.max(example.difficulty);
        let p = if cfg.bias_temperature.is_infinite() {
            1.0
        } else {
            ((example.difficulty - running_max) / cfg.bias_temperature).exp()
        };
        // always draw, so the stream does not depend on the branch
        let u: f64 = rng.random();
        if u < p {
            stats.accepted += 1;
            out.push(example);
        }
    }
    if out.is_empty() {
        return Err(Error::config(format!(
            "no samples accepted for scenario {}v{} after {} proposals",
            job.n_defenders, job.n_intruders, stats.proposed
        )));
    }
    Ok((out, stats))
}

/// Sample and label a dataset. Shards are independent streams and are
/// concatenated in a fixed order, so the result does not depend on
/// `threads`.
pub fn generate(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (s, &(d, a, count)) in config.scenarios().iter().enumerate() {
        let mut left = count;
        let mut index = 0;
        while left > 0 {
            let target = left.min(config.shard_size);
            jobs.push(ShardJob {
                scenario: s,
                index,
                n_defenders: d,
                n_intruders: a,
                target,
            });
            left -= target;
            index += 1;
        }
    }
    let results: Vec<Result<(Vec<LabeledExample>, AcceptanceStats)>> = if config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(|j| generate_shard(config, j)).collect())
    } else {
        jobs.iter().map(|j| generate_shard(config, j)).collect()
    };

    let mut examples = Vec::new();
    let mut shard_lengths = Vec::new();
    let mut stats = AcceptanceStats::default();
    for r in results {
        let (ex, st) = r?;
        shard_lengths.push(ex.len());
        examples.extend(ex);
        stats.proposed += st.proposed;
        stats.accepted += st.accepted;
    }
    Ok(Dataset {
        config: config.clone(),
        examples,
        shard_lengths,
        stats,
    })
}

/// Generate and write in one go.
pub fn build_dataset(config: &DatasetConfig, path: &Path) -> Result<Dataset> {
    let ds = generate(config)?;
    ds.write(path)?;
    Ok(ds)
}

impl Dataset {
    pub fn mean_difficulty(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().map(|e| e.difficulty).sum::<f64>() / self.examples.len() as f64
    }

    /// Per-example flag: true for examples in validation shards. Roughly
    /// `fraction` of the shards (at least one when there are two or more)
    /// are picked by a stream keyed on the dataset seed.
    pub fn validation_mask(&self, fraction: f64) -> Vec<bool> {
        let n = self.shard_lengths.len();
        let mut picked = vec![false; n];
        let k = if n >= 2 {
            ((fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(self.config.seed, &[TAG_VALIDATION]));
        for &s in &order[..k] {
            picked[s] = true;
        }
        self.shard_lengths
            .iter()
            .zip(&picked)
            .flat_map(|(&len, &p)| std::iter::repeat_n(p, len))
            .collect()
    }

    fn manifest(&self) -> Manifest {
        let c = &self.config;
        let mut m = Manifest::new();
        m.set("format", FORMAT);
        m.set("version", VERSION);
        m.set("fov", c.fov);
        m.set("seed", c.seed);
        m.set("max_size", c.max_size);
        m.set("count_per_scenario", c.count_per_scenario);
        m.set("unequal_fraction", c.unequal_fraction);
        m.set("bias_temperature", c.bias_temperature);
        m.set("shard_size", c.shard_size);
        m.set("examples", self.examples.len());
        m.set("proposed", self.stats.proposed);
        m.set("accepted", self.stats.accepted);
        m.set(
            "acceptance_rate",
            format!("{:.6}", self.stats.accepted as f64 / self.stats.proposed.max(1) as f64),
        );
        m.set("mean_difficulty", format!("{:.6}", self.mean_difficulty()));
        m.set(
            "shard_lengths",
            self.shard_lengths
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        m
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut blob = Vec::new();
        for e in &self.examples {
            let s = &e.state;
            blob.extend_from_slice(&(s.defenders.len() as u16).to_le_bytes());
            blob.extend_from_slice(&(s.intruders.len() as u16).to_le_bytes());
            for d in &s.defenders {
                blob.extend_from_slice(&(d.angle as f32).to_le_bytes());
            }
            for a in &s.intruders {
                blob.extend_from_slice(&(a.radius as f32).to_le_bytes());
                blob.extend_from_slice(&(a.angle as f32).to_le_bytes());
            }
            blob.extend(e.labels.iter().map(|l| l.code()));
        }
        self.manifest().write_with_blob(path, &blob)
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let (m, blob) = Manifest::read_with_blob(path, "dataset")?;
        if m.require("format", path)? != FORMAT {
            return Err(Error::format(path, "not a dataset file"));
        }
        let version: u32 = m.parse("version", path)?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported dataset version {version}")));
        }
        let config = DatasetConfig {
            max_size: m.parse("max_size", path)?,
            count_per_scenario: m.parse("count_per_scenario", path)?,
            fov: m.parse("fov", path)?,
            bias_temperature: m.parse("bias_temperature", path)?,
            unequal_fraction: m.parse("unequal_fraction", path)?,
            seed: m.parse("seed", path)?,
            shard_size: m.parse("shard_size", path)?,
            threads: 1,
        };
        let n: usize = m.parse("examples", path)?;
        let shard_lengths: Vec<usize> = m
            .require("shard_lengths", path)?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse().map_err(|_| Error::format(path, "bad shard_lengths")))
            .collect::<Result<_>>()?;
        if shard_lengths.iter().sum::<usize>() != n {
            return Err(Error::format(path, "shard lengths do not add up to the example count"));
        }

        let mut cur = Cursor { blob: &blob, pos: 0, path };
        let mut examples = Vec::with_capacity(n);
        for _ in 0..n {
            let nd = cur.u16()? as usize;
            let na = cur.u16()? as usize;
            let mut defenders = Vec::with_capacity(nd);
            for _ in 0..nd {
                defenders.push(Defender {
                    angle: cur.f32()?,
                    alive: true,
                });
            }
            let mut intruders = Vec::with_capacity(na);
            for _ in 0..na {
                let radius = cur.f32()?;
                let angle = cur.f32()?;
                intruders.push(Intruder {
                    radius,
                    angle,
                    alive: true,
                });
            }
            let mut labels = Vec::with_capacity(nd);
            for _ in 0..nd {
                let c = cur.u8()?;
                labels.push(
                    Label::from_code(c).ok_or_else(|| Error::format(path, format!("bad label code {c}")))?,
                );
            }
            let state = GameState {
                defenders,
                intruders,
                time: 0.0,
            };
            let difficulty = difficulty(&state);
            examples.push(LabeledExample {
                state,
                labels,
                difficulty,
            });
        }
        if cur.pos != blob.len() {
            return Err(Error::format(path, "trailing bytes after the last record"));
        }
        let stats = AcceptanceStats {
            proposed: m.parse("proposed", path)?,
            accepted: m.parse("accepted", path)?,
        };
        Ok(Dataset {
            config,
            examples,
            shard_lengths,
            stats,
        })
    }
}

/// Byte-for-byte file digest helper for determinism checks.
pub fn file_bytes(path: &Path) -> Result<Vec<u8>> {
    read_file(path, "file")
}

struct Cursor<'a> {
    blob: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.blob.len() {
            return Err(Error::format(self.path, "record truncated"));
        }
        let s = &self.blob[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32(&mut self) -> Result<f64> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
    }
}
