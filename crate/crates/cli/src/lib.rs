//! The `perimeter-guard` pipeline: dataset generation, training, evaluation,
//! width sweeps and grid maps, driven by a `key = value` config file with
//! command-line overrides.
//!
//! Every command resolves its settings the same way: built-in defaults, then
//! the config file, then flags. Unknown keys are rejected. The seed falls
//! back to `PERIMETER_GUARD_SEED` when neither the file nor a flag sets it.
//! The resolved settings are written next to the command's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use perimeter_core::checkpoint;
use perimeter_core::datagen::{build_dataset, sample_state, Dataset, DatasetConfig};
use perimeter_core::eval::{
    action_grid, grid_csv, mean_captures, message_grid, message_variance, sweep, sweep_csv, Controller,
    GridSpec, Roam, RolloutConfig, SweepConfig, SweepRow,
};
use perimeter_core::game::{FovMode, GameState, IntruderMode};
use perimeter_core::nn::{Activation, LrSchedule};
use perimeter_core::pin::PolicyConfig;
use perimeter_core::train::{fit, TrainConfig};
use perimeter_core::Error;

pub type Result<T> = perimeter_core::Result<T>;

pub const SEED_ENV: &str = "PERIMETER_GUARD_SEED";

/// Exit status for each error kind.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::NotFound { .. } => 3,
        Error::Format { .. } => 4,
        Error::Io { .. } => 5,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Eval,
    Sweep,
    Grid,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Generate,
        Command::Train,
        Command::Eval,
        Command::Sweep,
        Command::Grid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Grid => "grid",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Generate => "Sample states, label them with the expert and write a dataset",
            Command::Train => "Train a policy on a dataset",
            Command::Eval => "Play a checkpoint and the expert on the same games",
            Command::Sweep => "Evaluate a directory of checkpoints across message widths",
            Command::Grid => "Map actions or messages while one agent roams a grid",
        }
    }

    /// Every key the command accepts, with its default (empty when the key
    /// is required or optional without a default) and help text.
    pub fn keys(self) -> &'static [Key] {
        match self {
            Command::Generate => GENERATE_KEYS,
            Command::Train => TRAIN_KEYS,
            Command::Eval => EVAL_KEYS,
            Command::Sweep => SWEEP_KEYS,
            Command::Grid => GRID_KEYS,
        }
    }
}

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const GENERATE_KEYS: &[Key] = &[
    key("out", "", "dataset file to write (required)"),
    key("seed", "0", "base seed"),
    key("fov", "360", "field of view, 360 or 180"),
    key("max_size", "4", "largest team size; every n_d, n_a in 1..=max_size is sampled"),
    key("count", "20000", "mean examples per scenario"),
    key("bias_temperature", "2", "difficulty bias temperature; inf disables the bias"),
    key("unequal_fraction", "0.5", "share of examples with unequal team sizes"),
    key("shard_size", "1000", "examples per shard"),
    key("threads", "1", "worker threads"),
];

const TRAIN_KEYS: &[Key] = &[
    key("data", "", "dataset file (required)"),
    key("out_dir", "", "directory for checkpoints and metrics (required)"),
    key("seed", "0", "base seed"),
    key("width", "1", "message width, 0..=7"),
    key("bits", "8", "bits per message component, 1..=8"),
    key("hidden", "64", "hidden layer width"),
    key("feature", "64", "perception feature width per branch"),
    key("decoded", "64", "decoded message width"),
    key("perception_layers", "3", "layers in each perception network"),
    key("module_layers", "2", "layers in the message, decoder and action networks"),
    key("activation", "leaky_relu", "hidden activation: leaky_relu, relu or identity"),
    key("batch_size", "256", "teams per step"),
    key("iterations", "20000", "optimizer steps"),
    key("lr", "0.001", "initial learning rate"),
    key("lr_drop_period", "5000", "iterations between learning-rate drops"),
    key("lr_drop_factor", "0.6666666666666666", "learning-rate multiplier per drop"),
    key("checkpoint_every", "5000", "checkpoint interval; 0 keeps only the final one"),
    key("log_every", "100", "metrics interval"),
    key("validation_fraction", "0.05", "share of shards held out"),
];

const EVAL_KEYS: &[Key] = &[
    key("checkpoint", "", "policy checkpoint (required)"),
    key("out", "", "CSV file for per-game results (optional)"),
    key("seed", "0", "base seed for game states"),
    key("sizes", "1,2,3,4,5,6,7", "team sizes, n defenders against n intruders"),
    key("games", "200", "games per team size"),
    key("intruders", "greedy", "intruder behaviour: greedy or radial"),
    key("dt", "0.01", "time step"),
    key("threads", "1", "worker threads"),
];

const SWEEP_KEYS: &[Key] = &[
    key("checkpoint_dir", "", "directory holding policy_w<width>_fov<fov>.ckpt files (required)"),
    key("out", "", "CSV file to write (required)"),
    key("widths", "0,1,2,3", "message widths to evaluate"),
    key("fov", "360", "field of view of the checkpoints"),
    key("seed", "0", "base seed for game states"),
    key("sizes", "1,2,3,4,5,6,7", "team sizes"),
    key("games", "200", "games per team size"),
    key("intruders", "greedy", "intruder behaviour: greedy or radial"),
    key("dt", "0.01", "time step"),
    key("threads", "1", "worker threads"),
];

const GRID_KEYS: &[Key] = &[
    key("out", "", "CSV file to write (required)"),
    key("controller", "pin", "pin or expert"),
    key("checkpoint", "", "policy checkpoint (required for pin)"),
    key("kind", "action", "action or message"),
    key("roam", "intruder", "which agent moves across the grid: defender or intruder"),
    key("roam_index", "0", "index of the roaming agent"),
    key("observer", "0", "defender whose action or message is recorded"),
    key("defenders", "", "defender angles, comma separated; empty samples a state"),
    key("intruders", "", "intruders as radius@angle, comma separated"),
    key("team_size", "4", "team size of a sampled state"),
    key("seed", "0", "seed of a sampled state"),
    key("resolution", "101", "cells per side"),
    key("extent", "3", "the grid spans [-extent, extent] on both axes"),
];

/// Resolved settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    command: Command,
    values: BTreeMap<String, String>,
}

fn canonical(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parse a `key = value` config file. Blank lines and `#` comments are
/// skipped.
pub fn parse_config_text(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: expected `key = value`", n + 1),
        })?;
        out.push((canonical(k), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Defaults, then `file` entries, then `flags`. `env_seed` stands in for
    /// the environment variable when neither source sets the seed.
    pub fn resolve(
        command: Command,
        file: &[(String, String)],
        flags: &[(String, String)],
        env_seed: Option<&str>,
    ) -> Result<Settings> {
        let known = command.keys();
        let mut values: BTreeMap<String, String> = known
            .iter()
            .map(|k| (k.name.to_string(), k.default.to_string()))
            .collect();
        let mut seed_set = false;
        for (source, entries) in [("config file", file), ("command line", flags)] {
            for (k, v) in entries {
                let k = canonical(k);
                if !values.contains_key(&k) {
                    return Err(Error::Config(format!(
                        "unknown key `{k}` in {source} for `{}`",
                        command.name()
                    )));
                }
                if k == "seed" {
                    seed_set = true;
                }
                values.insert(k, v.clone());
            }
        }
        if !seed_set {
            if let Some(s) = env_seed {
                values.insert("seed".into(), s.trim().to_string());
            }
        }
        Ok(Settings { command, values })
    }

    /// [`Settings::resolve`] reading the optional config file and the real
    /// environment.
    pub fn load(command: Command, config: Option<&Path>, flags: &[(String, String)]) -> Result<Settings> {
        let file = match config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                    std::io::ErrorKind::NotFound => Error::NotFound {
                        what: "config file",
                        path: p.to_path_buf(),
                    },
                    _ => Error::Io {
                        path: p.to_path_buf(),
                        source: e,
                    },
                })?;
                parse_config_text(&text, p)?
            }
            None => Vec::new(),
        };
        let env = std::env::var(SEED_ENV).ok();
        Settings::resolve(command, &file, flags, env.as_deref())
    }

    pub fn command(&self) -> Command {
        self.command
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not a key of `{}`", self.command.name()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
    }

    pub fn required(&self, key: &str) -> Result<&str> {
        let v = self.raw(key);
        if v.is_empty() {
            Err(Error::Config(format!("`{key}` is required for `{}`", self.command.name())))
        } else {
            Ok(v)
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.required(key).map(PathBuf::from)
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("invalid entry `{s}` in `{key}`")))
            })
            .collect()
    }

    /// `key = value` lines in key order; parses back with
    /// [`parse_config_text`].
    pub fn to_text(&self) -> String {
        let mut s = format!("# perimeter-guard {}\n", self.command.name());
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn write_beside(&self, path: &Path) -> Result<PathBuf> {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".config");
        let target = path.with_file_name(name);
        write_file(&target, self.to_text().as_bytes())?;
        Ok(target)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// What a command produced, for the one-screen summary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

pub fn run(settings: &Settings) -> Result<Report> {
    match settings.command {
        Command::Generate => cmd_generate(settings),
        Command::Train => cmd_train(settings),
        Command::Eval => cmd_eval(settings),
        Command::Sweep => cmd_sweep(settings),
        Command::Grid => cmd_grid(settings),
    }
}

pub fn dataset_config(s: &Settings) -> Result<DatasetConfig> {
    Ok(DatasetConfig {
        max_size: s.get("max_size")?,
        count_per_scenario: s.get("count")?,
        fov: s.get("fov")?,
        bias_temperature: s.get("bias_temperature")?,
        unequal_fraction: s.get("unequal_fraction")?,
        seed: s.get("seed")?,
        shard_size: s.get("shard_size")?,
        threads: s.get("threads")?,
    })
}

pub fn cmd_generate(s: &Settings) -> Result<Report> {
    let out = s.path("out")?;
    let cfg = dataset_config(s)?;
    let ds = build_dataset(&cfg, &out)?;
    let conf = s.write_beside(&out)?;
    Ok(Report {
        lines: vec![
            format!("examples: {}", ds.examples.len()),
            format!(
                "accepted {} of {} proposals ({:.1}%)",
                ds.stats.accepted,
                ds.stats.proposed,
                100.0 * ds.stats.accepted as f64 / ds.stats.proposed.max(1) as f64
            ),
            format!("mean difficulty: {:.4}", ds.mean_difficulty()),
        ],
        files: vec![out, conf],
    })
}

pub fn train_config(s: &Settings) -> Result<TrainConfig> {
    let activation_name = s.raw("activation");
    let activation = Activation::from_name(activation_name)
        .ok_or_else(|| Error::Config(format!("unknown activation `{activation_name}`")))?;
    Ok(TrainConfig {
        policy: PolicyConfig {
            width: s.get("width")?,
            bits: s.get("bits")?,
            hidden: s.get("hidden")?,
            feature: s.get("feature")?,
            decoded: s.get("decoded")?,
            perception_layers: s.get("perception_layers")?,
            module_layers: s.get("module_layers")?,
            activation,
        },
        batch_size: s.get("batch_size")?,
        iterations: s.get("iterations")?,
        schedule: LrSchedule {
            base: s.get("lr")?,
            drop_period: s.get("lr_drop_period")?,
            drop_factor: s.get("lr_drop_factor")?,
        },
        seed: s.get("seed")?,
        checkpoint_every: s.get("checkpoint_every")?,
        log_every: s.get("log_every")?,
        validation_fraction: s.get("validation_fraction")?,
    })
}

pub fn cmd_train(s: &Settings) -> Result<Report> {
    let data = s.path("data")?;
    let out_dir = s.path("out_dir")?;
    let cfg = train_config(s)?;
    cfg.validate()?;
    let ds = Dataset::read(&data)?;
    let out = fit(&ds, &cfg, Some(&out_dir))?;
    let conf = out_dir.join("train.config");
    write_file(&conf, s.to_text().as_bytes())?;
    let last = out.metrics.last().expect("at least one metrics row");
    let mut lines = vec![
        format!("iterations: {}", last.iteration),
        format!("final loss: {:.4}", last.loss),
        format!("batch accuracy: {:.4}", last.masked_accuracy),
    ];
    if let Some(v) = last.val_accuracy {
        lines.push(format!("validation accuracy: {v:.4}"));
    }
    let mut files = out.checkpoints;
    files.push(out_dir.join(perimeter_core::train::METRICS_FILE));
    files.push(conf);
    Ok(Report { lines, files })
}

fn rollout_config(s: &Settings) -> Result<RolloutConfig> {
    let dt: f64 = s.get("dt")?;
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    Ok(RolloutConfig {
        dt,
        intruder_mode: s.get::<IntruderMode>("intruders")?,
        ..RolloutConfig::default()
    })
}

fn sweep_config(s: &Settings) -> Result<(SweepConfig, Vec<usize>)> {
    let sizes: Vec<usize> = s.list("sizes")?;
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config("`sizes` must list positive team sizes".into()));
    }
    Ok((
        SweepConfig {
            seed: s.get("seed")?,
            games: s.get("games")?,
            rollout: rollout_config(s)?,
            threads: s.get("threads")?,
        },
        sizes,
    ))
}

fn summary_lines(label: &str, rows: &[SweepRow], sizes: &[usize], expert: &[f64]) -> Vec<String> {
    mean_captures(rows, sizes)
        .iter()
        .zip(sizes)
        .zip(expert)
        .map(|((m, n), e)| format!("{label} {n}v{n}: {m:.3} captures/game ({:.3} of expert)", m / e))
        .collect()
}

pub fn cmd_eval(s: &Settings) -> Result<Report> {
    let ckpt = s.path("checkpoint")?;
    let (cfg, sizes) = sweep_config(s)?;
    let (policy, meta) = checkpoint::load(&ckpt)?;
    let expert_rows = sweep(&Controller::Expert, &sizes, &cfg)?;
    let pin_rows = sweep(
        &Controller::Learned {
            policy: &policy,
            fov: meta.fov,
        },
        &sizes,
        &cfg,
    )?;
    let expert = mean_captures(&expert_rows, &sizes);
    let mut lines: Vec<String> = expert
        .iter()
        .zip(&sizes)
        .map(|(e, n)| format!("expert {n}v{n}: {e:.3} captures/game"))
        .collect();
    lines.extend(summary_lines(&format!("pin w{}", policy.width()), &pin_rows, &sizes, &expert));
    let mut files = Vec::new();
    if !s.raw("out").is_empty() {
        let out = s.path("out")?;
        let mut rows = expert_rows;
        rows.extend(pin_rows);
        write_file(&out, sweep_csv(&rows).as_bytes())?;
        files.push(out.clone());
        files.push(s.write_beside(&out)?);
    }
    Ok(Report { lines, files })
}

/// File name a sweep expects for a checkpoint of the given width and view.
pub fn sweep_checkpoint_name(width: usize, fov: FovMode) -> String {
    format!("policy_w{width}_fov{fov}.ckpt")
}

pub fn cmd_sweep(s: &Settings) -> Result<Report> {
    let dir = s.path("checkpoint_dir")?;
    let out = s.path("out")?;
    let fov: FovMode = s.get("fov")?;
    let widths: Vec<usize> = s.list("widths")?;
    if widths.is_empty() {
        return Err(Error::Config("`widths` must list at least one width".into()));
    }
    let (cfg, sizes) = sweep_config(s)?;
    let mut policies = Vec::new();
    for &w in &widths {
        let path = dir.join(sweep_checkpoint_name(w, fov));
        let (policy, meta) = checkpoint::load(&path)?;
        if policy.width() != w || meta.fov != fov {
            return Err(Error::Format {
                path,
                reason: format!(
                    "holds width {} / fov {}, expected width {w} / fov {fov}",
                    policy.width(),
                    meta.fov
                ),
            });
        }
        policies.push(policy);
    }
    let mut rows = sweep(&Controller::Expert, &sizes, &cfg)?;
    let expert = mean_captures(&rows, &sizes);
    let mut lines: Vec<String> = expert
        .iter()
        .zip(&sizes)
        .map(|(e, n)| format!("expert {n}v{n}: {e:.3} captures/game"))
        .collect();
    for p in &policies {
        let r = sweep(&Controller::Learned { policy: p, fov }, &sizes, &cfg)?;
        lines.extend(summary_lines(&format!("pin w{}", p.width()), &r, &sizes, &expert));
        rows.extend(r);
    }
    write_file(&out, sweep_csv(&rows).as_bytes())?;
    let conf = s.write_beside(&out)?;
    Ok(Report {
        lines,
        files: vec![out, conf],
    })
}

/// Parse `"a,b,c"` defender angles and `"r@θ,r@θ"` intruders.
pub fn parse_state(defenders: &str, intruders: &str) -> Result<GameState> {
    let bad = |what: &str, s: &str| Error::Config(format!("invalid {what} `{s}`"));
    let angles: Vec<f64> = defenders
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad("defender angle", s)))
        .collect::<Result<_>>()?;
    let points: Vec<(f64, f64)> = intruders
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (r, a) = s.split_once('@').ok_or_else(|| bad("intruder", s))?;
            let r: f64 = r.trim().parse().map_err(|_| bad("intruder radius", s))?;
            let a: f64 = a.trim().parse().map_err(|_| bad("intruder angle", s))?;
            if !(r > 1.0) {
                return Err(Error::Config(format!("intruder radius must exceed 1 in `{s}`")));
            }
            Ok((r, a))
        })
        .collect::<Result<_>>()?;
    Ok(GameState::new(&angles, &points))
}

pub fn cmd_grid(s: &Settings) -> Result<Report> {
    let out = s.path("out")?;
    let state = if s.raw("defenders").is_empty() && s.raw("intruders").is_empty() {
        let n: usize = s.get("team_size")?;
        sample_state(s.get("seed")?, n, n)
    } else {
        parse_state(s.raw("defenders"), s.raw("intruders"))?
    };
    let index: usize = s.get("roam_index")?;
    let roam = match s.raw("roam") {
        "defender" => Roam::Defender(index),
        "intruder" => Roam::Intruder(index),
        other => return Err(Error::Config(format!("unknown roam `{other}` (defender or intruder)"))),
    };
    let observer: usize = s.get("observer")?;
    let spec = GridSpec {
        resolution: s.get("resolution")?,
        extent: s.get("extent")?,
    };
    if spec.resolution == 0 || !(spec.extent > 0.0) {
        return Err(Error::Config("grid resolution and extent must be positive".into()));
    }
    let loaded = match s.raw("controller") {
        "expert" => None,
        "pin" => Some(checkpoint::load(&s.path("checkpoint")?)?),
        other => return Err(Error::Config(format!("unknown controller `{other}` (pin or expert)"))),
    };
    let mut lines = Vec::new();
    let cells = match (s.raw("kind"), &loaded) {
        ("action", None) => action_grid(&Controller::Expert, &state, roam, observer, &spec)?,
        ("action", Some((policy, meta))) => {
            let c = Controller::Learned {
                policy,
                fov: meta.fov,
            };
            action_grid(&c, &state, roam, observer, &spec)?
        }
        ("message", Some((policy, meta))) => {
            if policy.width() == 0 {
                return Err(Error::Config("a width-0 policy sends no messages".into()));
            }
            let cells = message_grid(policy, meta.fov, &state, roam, observer, &spec)?;
            lines.push(format!("message variance: {:.6}", message_variance(&cells)));
            cells
        }
        ("message", None) => return Err(Error::Config("message maps need a learned policy".into())),
        (other, _) => return Err(Error::Config(format!("unknown kind `{other}` (action or message)"))),
    };
    write_file(&out, grid_csv(&cells).as_bytes())?;
    let conf = s.write_beside(&out)?;
    lines.insert(0, format!("cells: {}", cells.len()));
    Ok(Report {
        lines,
        files: vec![out, conf],
    })
}
