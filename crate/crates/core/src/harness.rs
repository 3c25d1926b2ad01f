//! Mock multi-agent loop. Each agent maps a task and an injected prefix to a
//! hidden state; the trained model reads thoughts off the concatenated
//! states, routing picks each agent's thoughts, and the adapter turns them
//! into the prefix the agent sees next round.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{encode, train_states, MlpModel, TrainLog};
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::numerics::{AdamConfig, AdamState, Matrix, SeededRng};
use crate::routing::{make_prefix, route, Adapter, RoutedThoughts, WeightTable};
use crate::structure::{agreement, estimate_support, thought_sets, AgentThoughtSets, AgreementVector, SupportEstimate};
use crate::synthgen::AgentBlocks;

const AGENT_STREAM: u64 = 0x6167_656e_7473;
const STATE_STREAM: u64 = 0x7374_6174_6573;
const ADAPTER_STREAM: u64 = 0x6164_6170_7472;
const EPISODE_STREAM: u64 = 0x6570_6973_6f64;

/// `state = tanh(A task + B vec(prefix) + c)`, answer = argmax of `R state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockAgent {
    pub index: usize,
    /// `state_dim x task_dim`.
    pub task_weights: Matrix,
    /// `state_dim x (prefix_len * embed_dim)`, applied to the row-major prefix.
    pub prefix_weights: Matrix,
    pub bias: Vec<f64>,
    /// `n_answers x state_dim`.
    pub readout: Matrix,
}

impl MockAgent {
    pub fn state_dim(&self) -> usize {
        self.task_weights.rows()
    }

    pub fn task_dim(&self) -> usize {
        self.task_weights.cols()
    }

    pub fn prefix_width(&self) -> usize {
        self.prefix_weights.cols()
    }

    /// Generic agent with Gaussian weights.
    pub fn random(
        index: usize,
        state_dim: usize,
        task_dim: usize,
        prefix_width: usize,
        n_answers: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let ts = 1.0 / (task_dim.max(1) as f64).sqrt();
        let ps = 1.0 / (prefix_width.max(1) as f64).sqrt();
        Self {
            index,
            task_weights: Matrix::from_fn(state_dim, task_dim, |_, _| ts * rng.normal()),
            prefix_weights: Matrix::from_fn(state_dim, prefix_width, |_, _| ps * rng.normal()),
            bias: (0..state_dim).map(|_| 0.1 * rng.normal()).collect(),
            readout: Matrix::from_fn(n_answers, state_dim, |_, _| rng.normal()),
        }
    }

    pub fn state(&self, task: &[f64], prefix: &Matrix) -> Result<Vec<f64>> {
        if task.len() != self.task_dim() {
            return Err(Error::InvalidArgument(format!(
                "agent {} takes a task of width {}, got {}",
                self.index,
                self.task_dim(),
                task.len()
            )));
        }
        if prefix.data().len() != self.prefix_width() {
            return Err(Error::InvalidArgument(format!(
                "agent {} takes a prefix of {} entries, got {}",
                self.index,
                self.prefix_width(),
                prefix.data().len()
            )));
        }
        let a = self.task_weights.mul_vec(task)?;
        let b = self.prefix_weights.mul_vec(prefix.data())?;
        Ok(a.iter()
            .zip(&b)
            .zip(&self.bias)
            .map(|((x, y), c)| (x + y + c).tanh())
            .collect())
    }

    /// 1-based index of the largest readout score; ties go to the lower index.
    pub fn answer(&self, state: &[f64]) -> Result<usize> {
        let scores = self.readout.mul_vec(state)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(best + 1)
    }
}

/// Sizes of the planted shared-thought family and of the harness run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub n_agents: usize,
    pub state_dim: usize,
    /// Leading state coordinates of every agent driven by the shared task part.
    pub shared_coords: usize,
    pub shared_task_dim: usize,
    pub private_task_dim: usize,
    pub n_answers: usize,
    /// Weight of an agent's private task part on its shared coordinates.
    pub noise: f64,
    /// Scale of the prefix weights.
    pub prefix_gain: f64,
    pub rounds: usize,
    pub episodes: usize,
    /// States collected without communication to train the model on.
    pub train_samples: usize,
    pub adapter_tasks: usize,
    pub adapter_steps: usize,
    pub adapter_lr: f64,
    /// Weight of `||prefix||^2` in the adapter objective.
    pub prefix_penalty: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            n_agents: 2,
            state_dim: 6,
            shared_coords: 3,
            shared_task_dim: 3,
            private_task_dim: 3,
            n_answers: 3,
            noise: 0.8,
            prefix_gain: 1.0,
            rounds: 2,
            episodes: 100,
            train_samples: 4000,
            adapter_tasks: 400,
            adapter_steps: 400,
            adapter_lr: 0.01,
            prefix_penalty: 1e-3,
        }
    }
}

impl HarnessConfig {
    pub fn task_dim(&self) -> usize {
        self.shared_task_dim + self.n_agents * self.private_task_dim
    }

    pub fn blocks(&self) -> Result<AgentBlocks> {
        AgentBlocks::from_dims(&vec![self.state_dim; self.n_agents])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_agents == 0 || self.state_dim == 0 || self.n_answers == 0 {
            return bad("harness needs at least one agent, state coordinate and answer");
        }
        if self.shared_coords > self.state_dim {
            return bad("shared_coords exceeds state_dim");
        }
        if self.rounds == 0 || self.episodes == 0 {
            return bad("rounds and episodes must be positive");
        }
        if self.train_samples < 20 || self.adapter_tasks == 0 {
            return bad("too few training samples or adapter tasks");
        }
        if !(self.noise.is_finite() && self.prefix_gain.is_finite() && self.prefix_penalty >= 0.0) {
            return bad("noise, prefix_gain and prefix_penalty must be finite");
        }
        if !(self.adapter_lr > 0.0) {
            return bad("adapter_lr must be positive");
        }
        Ok(())
    }
}

/// Agents whose leading `shared_coords` state coordinates depend on a task
/// part common to all of them (plus `noise` times their private part), and
/// whose answers read only those coordinates through one common readout.
pub fn planted_agents(cfg: &HarnessConfig, prefix_width: usize, rng: &mut SeededRng) -> Result<Vec<MockAgent>> {
    cfg.validate()?;
    let (q, p, r) = (cfg.shared_task_dim, cfg.private_task_dim, cfg.shared_coords);
    let qs = 1.0 / (q.max(1) as f64).sqrt();
    let ps = 1.0 / (p.max(1) as f64).sqrt();
    let shared = Matrix::from_fn(r, q, |_, _| qs * rng.normal());
    let readout = Matrix::from_fn(cfg.n_answers, cfg.state_dim, |_, j| if j < r { rng.normal() } else { 0.0 });
    let bs = cfg.prefix_gain / (prefix_width.max(1) as f64).sqrt();
    let mut agents = Vec::with_capacity(cfg.n_agents);
    for k in 0..cfg.n_agents {
        let own = q + k * p..q + (k + 1) * p;
        let mut a = Matrix::zeros(cfg.state_dim, cfg.task_dim());
        for i in 0..cfg.state_dim {
            for c in own.clone() {
                let w = if i < r { cfg.noise } else { 1.0 };
                a.set(i, c, w * ps * rng.normal());
            }
            if i < r {
                for c in 0..q {
                    a.set(i, c, shared.get(i, c));
                }
            }
        }
        agents.push(MockAgent {
            index: k,
            task_weights: a,
            prefix_weights: Matrix::from_fn(cfg.state_dim, prefix_width, |_, _| bs * rng.normal()),
            bias: vec![0.0; cfg.state_dim],
            readout: readout.clone(),
        });
    }
    Ok(agents)
}

/// Laplace-distributed task vectors, one per row.
pub fn sample_tasks(n: usize, task_dim: usize, rng: &mut SeededRng) -> Result<Matrix> {
    crate::numerics::sample_laplace(rng, n, task_dim, 1.0)
}

/// Concatenated states of all agents for each task row, with empty prefixes.
pub fn silent_states(agents: &[MockAgent], tasks: &Matrix, prefix: (usize, usize)) -> Result<Matrix> {
    let zero = Matrix::zeros(prefix.0, prefix.1);
    let width: usize = agents.iter().map(MockAgent::state_dim).sum();
    let mut out = Matrix::zeros(tasks.rows(), width);
    for i in 0..tasks.rows() {
        let mut row = Vec::with_capacity(width);
        for a in agents {
            row.extend(a.state(tasks.row(i), &zero)?);
        }
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// Model, adapter, routing weights and the structure estimated once from
/// probe states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub model: MlpModel,
    pub adapter: Adapter,
    pub weights: WeightTable,
    pub blocks: AgentBlocks,
    pub support: SupportEstimate,
    pub sets: AgentThoughtSets,
    pub agreement: AgreementVector,
}

impl Channel {
    pub fn new(
        model: MlpModel,
        adapter: Adapter,
        weights: WeightTable,
        blocks: AgentBlocks,
        probes: &Matrix,
        tau: f64,
    ) -> Result<Self> {
        if blocks.n_h() != model.n_h() {
            return Err(Error::InvalidArgument(format!(
                "agent blocks span {} coordinates, model reads {}",
                blocks.n_h(),
                model.n_h()
            )));
        }
        weights.validate(blocks.n_agents())?;
        let support = estimate_support(&model, probes, tau)?;
        let sets = thought_sets(&support, &blocks)?;
        let agreement = agreement(&sets, model.n_latent())?;
        if sets.sets.iter().any(|s| s.len() > adapter.n_route()) {
            return Err(Error::InvalidArgument(format!(
                "adapter width {} is smaller than an agent's thought set",
                adapter.n_route()
            )));
        }
        Ok(Self {
            model,
            adapter,
            weights,
            blocks,
            support,
            sets,
            agreement,
        })
    }

    pub fn with_adapter(&self, adapter: Adapter) -> Self {
        Self {
            adapter,
            ..self.clone()
        }
    }

    /// Thoughts and routed values for one concatenated state row.
    fn read(&self, joint: &[f64]) -> Result<(Vec<f64>, Vec<RoutedThoughts>)> {
        let z = encode(&self.model, &Matrix::row_vector(joint))?.into_data();
        let routed = (0..self.blocks.n_agents())
            .map(|k| route(&z, &self.sets, &self.agreement, &self.weights, k))
            .collect::<Result<Vec<_>>>()?;
        Ok((z, routed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// 1-based.
    pub round: usize,
    pub states: Vec<Vec<f64>>,
    pub latents: Vec<f64>,
    pub routed: Vec<RoutedThoughts>,
    /// Prefixes produced this round and injected in the next.
    pub prefixes: Vec<Matrix>,
    pub answers: Vec<usize>,
    pub consensus: bool,
}

/// `rounds` rounds on one task; the first round runs with empty prefixes.
pub fn run_episode(agents: &[MockAgent], channel: &Channel, rounds: usize, task: &[f64]) -> Result<Vec<RoundTrace>> {
    if agents.len() != channel.blocks.n_agents() {
        return Err(Error::InvalidArgument(format!(
            "{} agents for a channel built on {} blocks",
            agents.len(),
            channel.blocks.n_agents()
        )));
    }
    for (k, a) in agents.iter().enumerate() {
        if a.state_dim() != channel.blocks.range(k).len() {
            return Err(Error::InvalidArgument(format!("agent {k} state width does not match its block")));
        }
    }
    let (m, d) = (channel.adapter.prefix_len, channel.adapter.embed_dim);
    let mut prefixes = vec![Matrix::zeros(m, d); agents.len()];
    let mut out = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let states = agents
            .iter()
            .zip(&prefixes)
            .map(|(a, p)| a.state(task, p))
            .collect::<Result<Vec<_>>>()?;
        let joint: Vec<f64> = states.concat();
        let (latents, routed) = channel.read(&joint)?;
        let next = routed
            .iter()
            .map(|r| make_prefix(&channel.adapter, r))
            .collect::<Result<Vec<_>>>()?;
        let answers = agents
            .iter()
            .zip(&states)
            .map(|(a, s)| a.answer(s))
            .collect::<Result<Vec<_>>>()?;
        let consensus = answers.windows(2).all(|w| w[0] == w[1]);
        out.push(RoundTrace {
            round: t + 1,
            states,
            latents,
            routed,
            prefixes: next.clone(),
            answers,
            consensus,
        });
        prefixes = next;
    }
    Ok(out)
}

/// Fraction of episodes whose final round ends in consensus.
pub fn consensus_rate(episodes: &[Vec<RoundTrace>]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("no episodes".into()));
    }
    let mut agreed = 0usize;
    for e in episodes {
        let last = e
            .last()
            .ok_or_else(|| Error::InvalidArgument("episode without rounds".into()))?;
        agreed += last.consensus as usize;
    }
    Ok(agreed as f64 / episodes.len() as f64)
}

struct AdapterSample {
    agent: usize,
    x: Vec<f64>,
    /// Pre-activation without prefix.
    base: Vec<f64>,
    target: Vec<f64>,
}

/// Round-one adapter inputs and targets: each agent's leading
/// `shared_coords` coordinates should move to the mean of all agents'
/// silent values, so every agent aims at the same point.
struct AdapterProblem {
    samples: Vec<AdapterSample>,
    n_tasks: usize,
}

impl AdapterProblem {
    fn build(agents: &[MockAgent], channel: &Channel, tasks: &Matrix, shared_coords: usize) -> Result<Self> {
        let n_agents = agents.len();
        if n_agents < 2 {
            return Err(Error::InvalidArgument("adapter training needs at least two agents".into()));
        }
        if tasks.rows() == 0 {
            return Err(Error::InvalidArgument("no adapter tasks".into()));
        }
        let zero = Matrix::zeros(channel.adapter.prefix_len, channel.adapter.embed_dim);
        let mut samples = Vec::with_capacity(tasks.rows() * n_agents);
        for i in 0..tasks.rows() {
            let task = tasks.row(i);
            let states = agents
                .iter()
                .map(|a| a.state(task, &zero))
                .collect::<Result<Vec<_>>>()?;
            let (_, routed) = channel.read(&states.concat())?;
            for (k, a) in agents.iter().enumerate() {
                let mut base = a.task_weights.mul_vec(task)?;
                for (b, c) in base.iter_mut().zip(&a.bias) {
                    *b += c;
                }
                let target = (0..shared_coords.min(a.state_dim()))
                    .map(|c| states.iter().map(|s| s[c]).sum::<f64>() / n_agents as f64)
                    .collect();
                samples.push(AdapterSample {
                    agent: k,
                    x: channel.adapter.padded_input(&routed[k])?,
                    base,
                    target,
                });
            }
        }
        Ok(Self {
            samples,
            n_tasks: tasks.rows(),
        })
    }

    fn loss_grad(&self, agents: &[MockAgent], w: &Matrix, prefix_penalty: f64) -> Result<(f64, Matrix)> {
        let scale = 1.0 / self.n_tasks as f64;
        let mut g = Matrix::zeros(w.rows(), w.cols());
        let mut total = 0.0;
        for s in &self.samples {
            let a = &agents[s.agent];
            let p = w.mul_vec(&s.x)?;
            let u = a.prefix_weights.mul_vec(&p)?;
            let mut du = vec![0.0; u.len()];
            for (c, t) in s.target.iter().enumerate() {
                let st = (s.base[c] + u[c]).tanh();
                let e = st - t;
                total += e * e;
                du[c] = 2.0 * e * (1.0 - st * st);
            }
            let mut dp = a.prefix_weights.transpose().mul_vec(&du)?;
            for (dpi, pi) in dp.iter_mut().zip(&p) {
                total += prefix_penalty * pi * pi;
                *dpi += 2.0 * prefix_penalty * pi;
            }
            for (r, dpr) in dp.iter().enumerate() {
                for (gc, xc) in g.row_mut(r).iter_mut().zip(&s.x) {
                    *gc += scale * dpr * xc;
                }
            }
        }
        Ok((total * scale, g))
    }
}

/// Adapter objective at weights `w` and its gradient: per task, the summed
/// squared gap between each agent's prefixed shared coordinates and the
/// silent mean over agents, plus `prefix_penalty * ||prefix||^2`.
pub fn adapter_objective(
    agents: &[MockAgent],
    channel: &Channel,
    tasks: &Matrix,
    shared_coords: usize,
    prefix_penalty: f64,
    w: &Matrix,
) -> Result<(f64, Matrix)> {
    AdapterProblem::build(agents, channel, tasks, shared_coords)?.loss_grad(agents, w, prefix_penalty)
}

/// Full-batch Adam on [`adapter_objective`], starting from the channel's
/// adapter. Returns the fitted adapter and the loss before each step.
pub fn train_adapter(
    agents: &[MockAgent],
    channel: &Channel,
    tasks: &Matrix,
    shared_coords: usize,
    steps: usize,
    lr: f64,
    prefix_penalty: f64,
) -> Result<(Adapter, Vec<f64>)> {
    let problem = AdapterProblem::build(agents, channel, tasks, shared_coords)?;
    let mut w = channel.adapter.weights.clone();
    let mut adam = AdamState::new(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        &[w.shape()],
    );
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, g) = problem.loss_grad(agents, &w, prefix_penalty)?;
        if !g.is_finite() {
            return Err(Error::Numeric("non-finite adapter gradient".into()));
        }
        losses.push(loss);
        adam.step(&mut [&mut w], &[g])?;
    }
    Ok((Adapter::new(w, channel.adapter.prefix_len, channel.adapter.embed_dim)?, losses))
}

/// Everything produced by [`simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub agents: Vec<MockAgent>,
    pub channel: Channel,
    pub train_log: TrainLog,
    pub adapter_losses: Vec<f64>,
    pub routed: Vec<Vec<RoundTrace>>,
    pub silent: Vec<Vec<RoundTrace>>,
    pub routed_rate: f64,
    pub silent_rate: f64,
}

/// The tasks [`simulate`] plays, one row per episode.
pub fn episode_tasks(cfg: &ExperimentConfig) -> Result<Matrix> {
    let mut rng = SeededRng::derive(cfg.seed, EPISODE_STREAM);
    sample_tasks(cfg.harness.episodes, cfg.harness.task_dim(), &mut rng)
}

/// Builds the planted agents, trains the model on their silent states, fits
/// the adapter and plays the same episodes with the trained and the zero
/// adapter.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    cfg.validate()?;
    let h = &cfg.harness;
    let (m, d) = (cfg.routing.prefix_len, cfg.routing.embed_dim);
    let mut rng = SeededRng::derive(cfg.seed, AGENT_STREAM);
    let agents = planted_agents(h, m * d, &mut rng)?;

    let mut rng = SeededRng::derive(cfg.seed, STATE_STREAM);
    let train_tasks = sample_tasks(h.train_samples, h.task_dim(), &mut rng)?;
    let states = silent_states(&agents, &train_tasks, (m, d))?;
    let mut training = cfg.training.clone();
    training.seed = cfg.seed;
    let (model, train_log) = train_states(&states, h.task_dim(), &training)?;

    let blocks = h.blocks()?;
    let n_latent = model.n_latent();
    let probes = states.row_range(0, cfg.evaluation.probe_count.min(states.rows()));
    let weights = cfg.routing.weights.table(h.n_agents)?;
    let mut rng = SeededRng::derive(cfg.seed, ADAPTER_STREAM);
    let init = Adapter::random(n_latent, m, d, 0.01, &mut rng);
    let channel = Channel::new(model, init, weights, blocks, &probes, cfg.evaluation.tau)?;
    let adapter_tasks = sample_tasks(h.adapter_tasks, h.task_dim(), &mut rng)?;
    let (adapter, adapter_losses) = train_adapter(
        &agents,
        &channel,
        &adapter_tasks,
        h.shared_coords,
        h.adapter_steps,
        h.adapter_lr,
        h.prefix_penalty,
    )?;
    let channel = channel.with_adapter(adapter);
    let silent_channel = channel.with_adapter(Adapter::zeros(n_latent, m, d));

    let tasks = episode_tasks(cfg)?;
    let mut routed = Vec::with_capacity(h.episodes);
    let mut silent = Vec::with_capacity(h.episodes);
    for i in 0..h.episodes {
        routed.push(run_episode(&agents, &channel, h.rounds, tasks.row(i))?);
        silent.push(run_episode(&agents, &silent_channel, h.rounds, tasks.row(i))?);
    }
    let routed_rate = consensus_rate(&routed)?;
    let silent_rate = consensus_rate(&silent)?;
    Ok(Simulation {
        agents,
        channel,
        train_log,
        adapter_losses,
        routed,
        silent,
        routed_rate,
        silent_rate,
    })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    mode: &'a str,
    episode: usize,
    #[serde(flatten)]
    trace: &'a RoundTrace,
}

impl Simulation {
    /// One JSON object per round per episode, routed episodes first.
    pub fn traces_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (mode, eps) in [("routed", &self.routed), ("silent", &self.silent)] {
            for (episode, rounds) in eps.iter().enumerate() {
                for trace in rounds {
                    out.push_str(&serde_json::to_string(&TraceLine { mode, episode, trace })?);
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("mode,episode,rounds,final_answers,consensus\n");
        for (mode, eps) in [("routed", &self.routed), ("silent", &self.silent)] {
            for (episode, rounds) in eps.iter().enumerate() {
                let last = rounds.last();
                let answers = last
                    .map(|t| t.answers.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "))
                    .unwrap_or_default();
                let consensus = last.is_some_and(|t| t.consensus);
                out.push_str(&format!("{mode},{episode},{},{answers},{consensus}\n", rounds.len()));
            }
        }
        out
    }
}
