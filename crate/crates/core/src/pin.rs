//! Permutation-invariant team policy.
//!
//! Five shared networks make up one agent:
//!
//! * `rho_d` encodes the agent's own position and `rho_a` encodes each
//!   visible intruder; the perception feature is `[rho_d(self), Σ rho_a(ω)]`.
//!   An intruder enters `rho_a` as its planar position followed by the same
//!   point in the agent's own frame (first axis along the agent's position).
//! * `tau` maps the perception feature to the message, squashed by `tanh`
//!   and quantized.
//! * `sigma` decodes each received message; decodings are summed.
//! * `nu` maps `[perception, Σ sigma(ψ)]` to two logits (CCW, CW).
//!
//! Every agent receives every live teammate's message, its own included.
//! Sums run in a canonical order (intruders sorted by coordinates, messages
//! sorted lexicographically), which makes the perception feature and the
//! decoded sum exactly invariant to input order, and lets a team of any
//! size share one parameter set.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{DefenderAction, Direction, Observation};
use crate::nn::{Activation, Matrix, Mlp, MlpCache, Quantizer};

pub const MAX_WIDTH: usize = 7;
pub const MAX_BITS: u8 = 8;
/// Self position is a planar point.
const POINT_DIM: usize = 2;
/// An intruder is its planar position plus that position in the observer's frame.
const OBJECT_DIM: usize = 4;
const N_ACTIONS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyConfig {
    pub width: usize,
    pub bits: u8,
    pub hidden: usize,
    /// Output width of each of `rho_a` and `rho_d`.
    pub feature: usize,
    /// Output width of `sigma`.
    pub decoded: usize,
    pub perception_layers: usize,
    pub module_layers: usize,
    pub activation: Activation,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            width: 1,
            bits: 8,
            hidden: 64,
            feature: 64,
            decoded: 64,
            perception_layers: 3,
            module_layers: 2,
            activation: Activation::LeakyRelu,
        }
    }
}

impl PolicyConfig {
    /// Layer sizes of the large published configuration.
    pub fn paper_scale(width: usize) -> Self {
        PolicyConfig {
            width,
            bits: 8,
            hidden: 1024,
            feature: 1024,
            decoded: 2048,
            perception_layers: 5,
            module_layers: 3,
            activation: Activation::LeakyRelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width > MAX_WIDTH {
            return Err(Error::config(format!(
                "message width must be in 0..={MAX_WIDTH}, got {}",
                self.width
            )));
        }
        if !(1..=MAX_BITS).contains(&self.bits) {
            return Err(Error::config(format!(
                "message bits must be in 1..={MAX_BITS}, got {}",
                self.bits
            )));
        }
        if self.hidden == 0 || self.feature == 0 || self.decoded == 0 {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.perception_layers == 0 || self.module_layers == 0 {
            return Err(Error::config("every module needs at least one layer"));
        }
        Ok(())
    }

    fn sizes(&self, input: usize, layers: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.hidden, layers - 1));
        s.push(output);
        s
    }
}

/// A broadcast: `width` quantizer levels.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub values: Vec<f64>,
}

impl Message {
    pub fn width(&self) -> usize {
        self.values.len()
    }
}

fn cmp_lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn sorted_points(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| cmp_lex(a, b));
    p
}

/// `rho_a` inputs for the visible intruders of `obs`, in canonical order.
fn object_rows(obs: &Observation) -> Vec<f64> {
    let [c, s] = obs.self_position;
    let mut rows = Vec::with_capacity(obs.visible_intruders.len() * OBJECT_DIM);
    for [x, y] in sorted_points(&obs.visible_intruders) {
        rows.extend_from_slice(&[x, y, c * x + s * y, c * y - s * x]);
    }
    rows
}

/// Index 0 is CCW, 1 is CW; ties go to CCW.
pub fn action_from_logits(logits: &[f64]) -> Direction {
    if logits[0] >= logits[1] {
        Direction::Ccw
    } else {
        Direction::Cw
    }
}

/// Whether the quantizer snaps messages or is bypassed. Bypassing leaves a
/// smooth function for finite-difference checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    Snap,
    Bypass,
}

/// Flattened inputs for a batch of teams.
#[derive(Clone, Debug)]
pub struct TeamBatch {
    team_start: Vec<usize>,
    object_start: Vec<usize>,
    selves: Matrix,
    objects: Matrix,
}

impl TeamBatch {
    pub fn new<T: AsRef<[Observation]>>(teams: &[T]) -> Self {
        let mut team_start = vec![0];
        let mut object_start = vec![0];
        let mut selves = Vec::new();
        let mut objects = Vec::new();
        for team in teams {
            for obs in team.as_ref() {
                selves.extend_from_slice(&obs.self_position);
                objects.extend(object_rows(obs));
                object_start.push(objects.len() / OBJECT_DIM);
            }
            team_start.push(object_start.len() - 1);
        }
        let n_agents = object_start.len() - 1;
        let n_objects = objects.len() / OBJECT_DIM;
        TeamBatch {
            team_start,
            object_start,
            selves: Matrix::from_vec(n_agents, POINT_DIM, selves),
            objects: Matrix::from_vec(n_objects, OBJECT_DIM, objects),
        }
    }

    pub fn n_teams(&self) -> usize {
        self.team_start.len() - 1
    }

    pub fn n_agents(&self) -> usize {
        self.selves.rows()
    }

    /// Agent index range of team `t`.
    pub fn team(&self, t: usize) -> std::ops::Range<usize> {
        self.team_start[t]..self.team_start[t + 1]
    }
}

/// Outputs of a team evaluation, one row per agent in input order.
#[derive(Clone, Debug, PartialEq)]
pub struct TeamOutput {
    pub logits: Matrix,
    pub messages: Matrix,
}

impl TeamOutput {
    pub fn action(&self, agent: usize) -> Direction {
        action_from_logits(self.logits.row(agent))
    }
}

/// Everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    rho_a: MlpCache,
    rho_d: MlpCache,
    tau: MlpCache,
    sigma: Option<MlpCache>,
    nu: MlpCache,
    squashed: Matrix,
}

/// The five shared networks.
#[derive(Clone, Debug, PartialEq)]
pub struct PinPolicy {
    config: PolicyConfig,
    quantizer: Quantizer,
    pub rho_a: Mlp,
    pub rho_d: Mlp,
    pub tau: Mlp,
    pub sigma: Mlp,
    pub nu: Mlp,
}

pub const MODULE_NAMES: [&str; 5] = ["rho_a", "rho_d", "tau", "sigma", "nu"];

impl PinPolicy {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let act = c.activation;
        let perception = 2 * c.feature;
        Ok(PinPolicy {
            quantizer: Quantizer::new(c.bits)?,
            rho_a: Mlp::new(&c.sizes(OBJECT_DIM, c.perception_layers, c.feature), act, rng),
            rho_d: Mlp::new(&c.sizes(POINT_DIM, c.perception_layers, c.feature), act, rng),
            tau: Mlp::new(&c.sizes(perception, c.module_layers, c.width), act, rng),
            sigma: Mlp::new(&c.sizes(c.width, c.module_layers, c.decoded), act, rng),
            nu: Mlp::new(&c.sizes(perception + c.decoded, c.module_layers, N_ACTIONS), act, rng),
            config,
        })
    }

    /// Assemble from existing modules; shapes must agree with each other.
    pub fn from_modules(config: PolicyConfig, modules: [Mlp; 5]) -> Result<Self> {
        config.validate()?;
        let [rho_a, rho_d, tau, sigma, nu] = modules;
        let f = rho_d.output_dim();
        let checks = [
            (rho_a.input_dim() == OBJECT_DIM, "rho_a input must be 4"),
            (rho_d.input_dim() == POINT_DIM, "rho_d input must be 2"),
            (rho_a.output_dim() == f, "rho_a and rho_d outputs differ"),
            (tau.input_dim() == 2 * f, "tau input must match the perception feature"),
            (tau.output_dim() == config.width, "tau output must match the width"),
            (sigma.input_dim() == config.width, "sigma input must match the width"),
            (
                nu.input_dim() == 2 * f + sigma.output_dim(),
                "nu input must be perception plus decoded feature",
            ),
            (nu.output_dim() == N_ACTIONS, "nu must emit two logits"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::config(msg));
            }
        }
        let mut config = config;
        config.feature = f;
        config.decoded = sigma.output_dim();
        Ok(PinPolicy {
            quantizer: Quantizer::new(config.bits)?,
            rho_a,
            rho_d,
            tau,
            sigma,
            nu,
            config,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn quantizer(&self) -> Quantizer {
        self.quantizer
    }

    pub fn modules(&self) -> [&Mlp; 5] {
        [&self.rho_a, &self.rho_d, &self.tau, &self.sigma, &self.nu]
    }

    pub fn param_count(&self) -> usize {
        self.modules().iter().map(|m| m.param_count()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.modules()
            .into_iter()
            .flat_map(|m| m.param_slices())
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for m in [
            &mut self.rho_a,
            &mut self.rho_d,
            &mut self.tau,
            &mut self.sigma,
            &mut self.nu,
        ] {
            out.extend(m.param_slices_mut());
        }
        out
    }

    /// Same shapes with every parameter zero.
    pub fn zeros_like(&self) -> PinPolicy {
        PinPolicy {
            config: self.config,
            quantizer: self.quantizer,
            rho_a: self.rho_a.zeros_like(),
            rho_d: self.rho_d.zeros_like(),
            tau: self.tau.zeros_like(),
            sigma: self.sigma.zeros_like(),
            nu: self.nu.zeros_like(),
        }
    }

    /// Perception feature `[rho_d(self), Σ rho_a(ω)]`.
    pub fn perceive(&self, obs: &Observation) -> Vec<f64> {
        perceive_with(&self.rho_a, &self.rho_d, obs)
    }

    /// The communication function applied to a perception feature.
    pub fn encode_message(&self, rho: &[f64]) -> Message {
        encode_with(&self.tau, self.quantizer, rho)
    }

    /// The action function: own observation plus every received message
    /// (the agent's own included).
    pub fn act(&self, obs: &Observation, received: &[Message]) -> Result<(DefenderAction, [f64; 2])> {
        act_with(
            &self.rho_a,
            &self.rho_d,
            &self.sigma,
            &self.nu,
            self.config.width,
            obs,
            received,
        )
    }

    /// Whole-team evaluation: every agent broadcasts, every agent decides.
    pub fn team_forward(&self, observations: &[Observation]) -> Vec<(DefenderAction, [f64; 2])> {
        let out = self.infer(&TeamBatch::new(&[observations]), QuantMode::Snap);
        (0..observations.len())
            .map(|a| {
                let l = out.logits.row(a);
                (DefenderAction::go(action_from_logits(l)), [l[0], l[1]])
            })
            .collect()
    }

    /// Split into standalone per-agent communication and action functions,
    /// each holding its own copy of the parameters it needs.
    pub fn shatter(&self) -> (CommunicationFunction, ActionFunction) {
        (
            CommunicationFunction {
                rho_a: self.rho_a.clone(),
                rho_d: self.rho_d.clone(),
                tau: self.tau.clone(),
                quantizer: self.quantizer,
            },
            ActionFunction {
                rho_a: self.rho_a.clone(),
                rho_d: self.rho_d.clone(),
                sigma: self.sigma.clone(),
                nu: self.nu.clone(),
                width: self.config.width,
            },
        )
    }

    /// Batched evaluation without a cache.
    pub fn infer(&self, batch: &TeamBatch, quant: QuantMode) -> TeamOutput {
        self.run(batch, quant, false).0
    }

    /// Batched evaluation keeping what [`PinPolicy::backward`] needs.
    pub fn forward(&self, batch: &TeamBatch, quant: QuantMode) -> (TeamOutput, ForwardCache) {
        let (out, cache) = self.run(batch, quant, true);
        (out, cache.expect("cache requested"))
    }

    fn run(&self, b: &TeamBatch, quant: QuantMode, keep: bool) -> (TeamOutput, Option<ForwardCache>) {
        let n = b.n_agents();
        let f = self.config.feature;
        let w = self.config.width;
        let q = self.config.decoded;

        let (rd, rd_cache) = eval(&self.rho_d, &b.selves, keep);
        let (ra_rows, ra_cache) = eval(&self.rho_a, &b.objects, keep);
        let mut ra_sum = Matrix::zeros(n, f);
        for a in 0..n {
            let acc = ra_sum.row_mut(a);
            for v in b.object_start[a]..b.object_start[a + 1] {
                for (s, x) in acc.iter_mut().zip(ra_rows.row(v)) {
                    *s += x;
                }
            }
        }
        let rho = rd.hcat(&ra_sum);

        let (pre, tau_cache) = eval(&self.tau, &rho, keep);
        let mut squashed = pre;
        for v in squashed.as_mut_slice() {
            *v = v.tanh();
        }
        let mut messages = squashed.clone();
        if quant == QuantMode::Snap {
            for v in messages.as_mut_slice() {
                *v = self.quantizer.quantize(*v);
            }
        }

        let mut dec = Matrix::zeros(n, q);
        let mut sigma_cache = None;
        if w > 0 {
            let (sig, c) = eval(&self.sigma, &messages, keep);
            sigma_cache = c;
            for t in 0..b.n_teams() {
                let range = b.team(t);
                let mut order: Vec<usize> = range.clone().collect();
                order.sort_by(|&x, &y| cmp_lex(messages.row(x), messages.row(y)));
                let mut total = vec![0.0; q];
                for &a in &order {
                    for (s, x) in total.iter_mut().zip(sig.row(a)) {
                        *s += x;
                    }
                }
                for a in range {
                    dec.row_mut(a).copy_from_slice(&total);
                }
            }
        }

        let (logits, nu_cache) = eval(&self.nu, &rho.hcat(&dec), keep);
        let cache = if keep {
            Some(ForwardCache {
                rho_a: ra_cache.unwrap(),
                rho_d: rd_cache.unwrap(),
                tau: tau_cache.unwrap(),
                sigma: sigma_cache,
                nu: nu_cache.unwrap(),
                squashed,
            })
        } else {
            None
        };
        (TeamOutput { logits, messages }, cache)
    }

    /// Gradients of `Σ upstream · logits` with respect to every parameter,
    /// returned as a policy-shaped accumulator. The quantizer is
    /// straight-through; `tanh` is differentiated exactly.
    pub fn backward(&self, batch: &TeamBatch, cache: &ForwardCache, upstream: &Matrix) -> PinPolicy {
        let mut grads = self.zeros_like();
        let n = batch.n_agents();
        let f = self.config.feature;
        let q = self.config.decoded;

        let d_nu_in = self.nu.backward(&cache.nu, upstream, &mut grads.nu);
        let (mut d_rho, d_dec) = d_nu_in.split_cols(2 * f);

        if let Some(sigma_cache) = &cache.sigma {
            let mut d_sig = Matrix::zeros(n, q);
            for t in 0..batch.n_teams() {
                let range = batch.team(t);
                let mut total = vec![0.0; q];
                for a in range.clone() {
                    for (s, x) in total.iter_mut().zip(d_dec.row(a)) {
                        *s += x;
                    }
                }
                for a in range {
                    d_sig.row_mut(a).copy_from_slice(&total);
                }
            }
            let d_msg = self.sigma.backward(sigma_cache, &d_sig, &mut grads.sigma);
            let mut d_pre = d_msg;
            for (g, &t) in d_pre.as_mut_slice().iter_mut().zip(cache.squashed.as_slice()) {
                *g = self.quantizer.ste_grad(t, *g) * (1.0 - t * t);
            }
            let d_rho_tau = self.tau.backward(&cache.tau, &d_pre, &mut grads.tau);
            for (a, b) in d_rho.as_mut_slice().iter_mut().zip(d_rho_tau.as_slice()) {
                *a += b;
            }
        }

        let (d_rd, d_ra_sum) = d_rho.split_cols(f);
        self.rho_d.backward(&cache.rho_d, &d_rd, &mut grads.rho_d);
        let mut d_ra_rows = Matrix::zeros(batch.objects.rows(), f);
        for a in 0..n {
            for v in batch.object_start[a]..batch.object_start[a + 1] {
                d_ra_rows.row_mut(v).copy_from_slice(d_ra_sum.row(a));
            }
        }
        self.rho_a.backward(&cache.rho_a, &d_ra_rows, &mut grads.rho_a);
        grads
    }
}

fn eval(net: &Mlp, x: &Matrix, keep: bool) -> (Matrix, Option<MlpCache>) {
    if keep {
        let (y, c) = net.forward_batch(x);
        (y, Some(c))
    } else {
        (net.infer(x), None)
    }
}

fn perceive_with(rho_a: &Mlp, rho_d: &Mlp, obs: &Observation) -> Vec<f64> {
    let own = rho_d.infer(&Matrix::from_vec(1, POINT_DIM, obs.self_position.to_vec()));
    let objs = Matrix::from_vec(obs.visible_intruders.len(), OBJECT_DIM, object_rows(obs));
    let encoded = rho_a.infer(&objs);
    let mut sum = vec![0.0; rho_a.output_dim()];
    for v in 0..encoded.rows() {
        for (s, x) in sum.iter_mut().zip(encoded.row(v)) {
            *s += x;
        }
    }
    let mut rho = own.row(0).to_vec();
    rho.extend(sum);
    rho
}

fn encode_with(tau: &Mlp, quantizer: Quantizer, rho: &[f64]) -> Message {
    let pre = tau.infer(&Matrix::from_vec(1, rho.len(), rho.to_vec()));
    Message {
        values: pre.row(0).iter().map(|v| quantizer.quantize(v.tanh())).collect(),
    }
}

fn act_with(
    rho_a: &Mlp,
    rho_d: &Mlp,
    sigma: &Mlp,
    nu: &Mlp,
    width: usize,
    obs: &Observation,
    received: &[Message],
) -> Result<(DefenderAction, [f64; 2])> {
    if received.is_empty() {
        return Err(Error::usage(
            "the received set must hold at least the agent's own message",
        ));
    }
    if let Some(m) = received.iter().find(|m| m.width() != width) {
        return Err(Error::usage(format!(
            "message width {} does not match policy width {width}",
            m.width()
        )));
    }
    let rho = perceive_with(rho_a, rho_d, obs);
    let mut dec = vec![0.0; sigma.output_dim()];
    if width > 0 {
        let mut msgs: Vec<&Message> = received.iter().collect();
        msgs.sort_by(|a, b| cmp_lex(&a.values, &b.values));
        let stacked = Matrix::from_vec(
            msgs.len(),
            width,
            msgs.iter().flat_map(|m| m.values.iter().copied()).collect(),
        );
        let decoded = sigma.infer(&stacked);
        for r in 0..decoded.rows() {
            for (s, x) in dec.iter_mut().zip(decoded.row(r)) {
                *s += x;
            }
        }
    }
    let mut input = rho;
    input.extend(dec);
    let logits = nu.infer(&Matrix::from_vec(1, input.len(), input));
    let l = [logits.get(0, 0), logits.get(0, 1)];
    Ok((DefenderAction::go(action_from_logits(&l)), l))
}

/// The standalone communication function of one agent.
#[derive(Clone, Debug)]
pub struct CommunicationFunction {
    rho_a: Mlp,
    rho_d: Mlp,
    tau: Mlp,
    quantizer: Quantizer,
}

impl CommunicationFunction {
    pub fn message(&self, obs: &Observation) -> Message {
        encode_with(&self.tau, self.quantizer, &perceive_with(&self.rho_a, &self.rho_d, obs))
    }
}

/// The standalone action function of one agent.
#[derive(Clone, Debug)]
pub struct ActionFunction {
    rho_a: Mlp,
    rho_d: Mlp,
    sigma: Mlp,
    nu: Mlp,
    width: usize,
}

impl ActionFunction {
    pub fn act(&self, obs: &Observation, received: &[Message]) -> Result<(DefenderAction, [f64; 2])> {
        act_with(&self.rho_a, &self.rho_d, &self.sigma, &self.nu, self.width, obs, received)
    }
}
