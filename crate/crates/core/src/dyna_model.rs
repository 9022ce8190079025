//! Model-based extension of the GPI learner: a bootstrapped dynamics
//! ensemble, short imagined rollouts stored in a prioritized synthetic
//! buffer, and a holdout-MSE gate on how much imagined data reaches a batch.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpi_agent::{gpi_action, AgentTransition, QNet, ReplayBuffer, SumTree};
use crate::mo_core::WeightVec;
use crate::numcore::{Activation, AdamState, LayerShape, MlpParams};

pub const PRIORITY_FLOOR: f64 = 1e-3;
pub const PRIORITY_ALPHA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynaConfig {
    pub ensemble_size: usize,
    pub hidden: Vec<usize>,
    pub model_lr: f64,
    pub model_batch: usize,
    pub model_train_every: u64,
    /// Real transitions required before the model trains or imagines.
    pub warmup: usize,
    pub horizon: usize,
    /// Imagined rollouts started after every environment step.
    pub rollouts: usize,
    /// Largest share of a batch drawn from imagined transitions.
    pub synthetic_cap: f64,
    pub synthetic_capacity: usize,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Newest real transitions withheld from model training and used to score it.
    pub holdout: usize,
    /// Imagined data is used only while holdout MSE stays at or below this.
    pub gate_mse: f64,
    pub quality_every: u64,
    /// Replay real exogenous traces in rollouts and fit only the other features.
    pub exogenous_replay: bool,
    /// Give each member its own resample of the training batch.
    pub bootstrap: bool,
}

impl Default for DynaConfig {
    fn default() -> Self {
        Self {
            ensemble_size: 5,
            hidden: vec![64, 64],
            model_lr: 1e-3,
            model_batch: 64,
            model_train_every: 1,
            warmup: 512,
            horizon: 3,
            rollouts: 4,
            synthetic_cap: 0.5,
            synthetic_capacity: 50_000,
            alpha: PRIORITY_ALPHA,
            beta_start: 0.4,
            beta_end: 1.0,
            holdout: 256,
            gate_mse: 0.01,
            quality_every: 500,
            exogenous_replay: false,
            bootstrap: true,
        }
    }
}

impl DynaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(m.to_string()));
        if self.ensemble_size < 2 {
            return bad("ensemble needs at least two members");
        }
        if !(0.0..=1.0).contains(&self.synthetic_cap) {
            return bad("synthetic_cap must lie in [0, 1]");
        }
        if self.model_batch == 0 || self.synthetic_capacity == 0 {
            return bad("model batch and synthetic capacity must be positive");
        }
        if self.model_train_every == 0 || self.quality_every == 0 {
            return bad("model_train_every and quality_every must be positive");
        }
        if self.model_lr <= 0.0 || self.alpha < 0.0 {
            return bad("model_lr must be positive and alpha non-negative");
        }
        Ok(())
    }
}

/// One-step model output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub next_features: Vec<f64>,
    pub reward: Vec<f64>,
    pub done: bool,
}

/// Holdout scores of a dynamics model. Outputs are ordered next-state
/// features first, then reward components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// `[member][output]` mean squared error.
    pub member_mse: Vec<Vec<f64>>,
    /// Member-averaged error per output.
    pub output_mse: Vec<f64>,
    pub done_accuracy: f64,
    pub disagreement: f64,
    /// Mean over scored outputs and members; drives the gate.
    pub mse: f64,
}

/// Learned or exact one-step dynamics with one or more members.
pub trait DynamicsModel: std::fmt::Debug + Send {
    fn n_members(&self) -> usize;

    fn predict(&self, member: usize, features: &[f64], action: usize) -> Result<Prediction>;

    /// One training step on real transitions; returns the loss per member.
    fn train_step(&mut self, batch: &[&AgentTransition], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    fn trainable(&self) -> bool {
        true
    }

    /// Output indices excluded from the gate MSE.
    fn unscored_outputs(&self) -> &[usize] {
        &[]
    }

    /// Mean variance across members of the predicted features and rewards.
    fn disagreement(&self, features: &[f64], action: usize) -> Result<f64> {
        let preds: Vec<Vec<f64>> = (0..self.n_members())
            .map(|m| {
                self.predict(m, features, action).map(|p| {
                    let mut v = p.next_features;
                    v.extend(p.reward);
                    v
                })
            })
            .collect::<Result<_>>()?;
        Ok(mean_variance(&preds))
    }

    fn quality(&self, holdout: &[&AgentTransition]) -> Result<QualityReport> {
        if holdout.is_empty() {
            return Err(Error::Input("empty holdout".into()));
        }
        let n_out = holdout[0].next_features.len() + holdout[0].reward.len();
        let m = self.n_members();
        let mut member_mse = vec![vec![0.0; n_out]; m];
        let mut done_hits = 0usize;
        let mut dis = 0.0;
        for tr in holdout {
            let mut preds = Vec::with_capacity(m);
            for (k, row) in member_mse.iter_mut().enumerate() {
                let p = self.predict(k, &tr.features, tr.action)?;
                let truth = tr.next_features.iter().chain(&tr.reward);
                let pred: Vec<f64> = p.next_features.iter().chain(&p.reward).copied().collect();
                for ((acc, y), yh) in row.iter_mut().zip(truth).zip(&pred) {
                    *acc += (yh - y).powi(2);
                }
                if p.done == tr.done {
                    done_hits += 1;
                }
                preds.push(pred);
            }
            dis += mean_variance(&preds);
        }
        let n = holdout.len() as f64;
        for row in &mut member_mse {
            row.iter_mut().for_each(|x| *x /= n);
        }
        let output_mse: Vec<f64> = (0..n_out)
            .map(|j| member_mse.iter().map(|r| r[j]).sum::<f64>() / m as f64)
            .collect();
        let skip = self.unscored_outputs();
        let scored: Vec<f64> = output_mse
            .iter()
            .enumerate()
            .filter(|(j, _)| !skip.contains(j))
            .map(|(_, v)| *v)
            .collect();
        let mse = if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        };
        Ok(QualityReport {
            member_mse,
            output_mse,
            done_accuracy: done_hits as f64 / (n * m as f64),
            disagreement: dis / n,
            mse,
        })
    }
}

fn mean_variance(preds: &[Vec<f64>]) -> f64 {
    if preds.len() < 2 || preds[0].is_empty() {
        return 0.0;
    }
    let m = preds.len() as f64;
    let dim = preds[0].len();
    let mut total = 0.0;
    for j in 0..dim {
        let mean = preds.iter().map(|p| p[j]).sum::<f64>() / m;
        total += preds.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / m;
    }
    total / dim as f64
}

/// Member network: `features ++ one_hot(action)` to
/// `delta_features ++ reward ++ done_logit`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsNet {
    pub params: MlpParams,
    adam: AdamState,
}

/// Bootstrapped ensemble of [`DynamicsNet`] members.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<DynamicsNet>,
    feature_dim: usize,
    n_actions: usize,
    n_objectives: usize,
    /// Feature indices left out of the state loss.
    masked: Vec<usize>,
    bootstrap: bool,
}

impl Ensemble {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        n_actions: usize,
        n_objectives: usize,
        cfg: &DynaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if feature_dim == 0 || n_actions == 0 {
            return Err(Error::Input("dynamics model needs features and actions".into()));
        }
        if n_objectives == 0 {
            return Err(Error::Input("dynamics model needs a non-empty reward slice".into()));
        }
        if cfg.ensemble_size == 0 {
            return Err(Error::Input("empty ensemble".into()));
        }
        let shape = LayerShape::mlp(
            feature_dim + n_actions,
            &cfg.hidden,
            feature_dim + n_objectives + 1,
            Activation::ReluLinear,
        )?;
        let members = (0..cfg.ensemble_size)
            .map(|_| {
                let params = MlpParams::init(shape.clone(), rng);
                let adam = AdamState::new(params.len(), cfg.model_lr);
                DynamicsNet { params, adam }
            })
            .collect();
        Ok(Self {
            members,
            feature_dim,
            n_actions,
            n_objectives,
            masked: Vec::new(),
            bootstrap: cfg.bootstrap,
        })
    }

    /// Leaves `features` out of the state loss and the gate score.
    pub fn with_masked_features(mut self, features: Vec<usize>) -> Self {
        self.masked = features;
        self
    }

    pub fn output_dim(&self) -> usize {
        self.feature_dim + self.n_objectives + 1
    }

    fn input(&self, features: &[f64], action: usize) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim {
            return Err(Error::shape("model features", self.feature_dim, features.len()));
        }
        if action >= self.n_actions {
            return Err(Error::Input(format!("action {action} out of range")));
        }
        let mut x = Vec::with_capacity(self.feature_dim + self.n_actions);
        x.extend_from_slice(features);
        x.extend((0..self.n_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
        Ok(x)
    }

    /// Loss and gradient of one member on a batch.
    fn member_grad(&self, member: usize, batch: &[&AgentTransition]) -> Result<(f64, Vec<f64>)> {
        let net = &self.members[member].params;
        let f = self.feature_dim;
        let d = self.n_objectives;
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; net.len()];
        let mut loss = 0.0;
        let mut g = vec![0.0; self.output_dim()];
        for tr in batch {
            if tr.reward.len() != d {
                return Err(Error::shape("model reward", d, tr.reward.len()));
            }
            let trace = net.forward_trace(&self.input(&tr.features, tr.action)?)?;
            let out = trace.output();
            g.iter_mut().for_each(|x| *x = 0.0);
            let state_terms = if tr.done { 0 } else { f - self.masked.len() };
            let n_terms = (state_terms + d) as f64;
            if !tr.done {
                for j in (0..f).filter(|j| !self.masked.contains(j)) {
                    let diff = out[j] - (tr.next_features[j] - tr.features[j]);
                    loss += scale * diff * diff / n_terms;
                    g[j] = scale * 2.0 * diff / n_terms;
                }
            }
            for k in 0..d {
                let diff = out[f + k] - tr.reward[k];
                loss += scale * diff * diff / n_terms;
                g[f + k] = scale * 2.0 * diff / n_terms;
            }
            let z = out[f + d];
            let y = if tr.done { 1.0 } else { 0.0 };
            // binary cross-entropy on the logit
            loss += scale * (softplus(z) - y * z);
            g[f + d] = scale * (sigmoid(z) - y);
            net.accumulate_grad(&trace, &g, 1.0, &mut grad)?;
        }
        Ok((loss, grad))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

impl DynamicsModel for Ensemble {
    fn n_members(&self) -> usize {
        self.members.len()
    }

    fn predict(&self, member: usize, features: &[f64], action: usize) -> Result<Prediction> {
        let net = self
            .members
            .get(member)
            .ok_or_else(|| Error::Input(format!("no ensemble member {member}")))?;
        let out = net.params.forward(&self.input(features, action)?)?;
        let f = self.feature_dim;
        let d = self.n_objectives;
        Ok(Prediction {
            next_features: features.iter().zip(&out[..f]).map(|(x, dx)| x + dx).collect(),
            reward: out[f..f + d].to_vec(),
            done: out[f + d] > 0.0,
        })
    }

    fn train_step(&mut self, batch: &[&AgentTransition], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        model_train_step(self, batch, rng)
    }

    fn unscored_outputs(&self) -> &[usize] {
        &self.masked
    }
}

/// One Adam step per member on its (optionally bootstrapped) copy of `batch`.
pub fn model_train_step(ensemble: &mut Ensemble, batch: &[&AgentTransition], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Input("empty model batch".into()));
    }
    let mut losses = Vec::with_capacity(ensemble.members.len());
    for m in 0..ensemble.members.len() {
        let resampled: Vec<&AgentTransition>;
        let own: &[&AgentTransition] = if ensemble.bootstrap {
            resampled = (0..batch.len())
                .map(|_| batch[rng.random_range(0..batch.len())])
                .collect();
            &resampled
        } else {
            batch
        };
        let (loss, grad) = ensemble.member_grad(m, own)?;
        let net = &mut ensemble.members[m];
        net.adam.step(net.params.theta_mut(), &grad)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Replay entry with a sampling priority.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritizedEntry {
    pub transition: AgentTransition,
    pub priority: f64,
    pub synthetic: bool,
    /// Ensemble member that produced a synthetic entry.
    pub source_member: Option<usize>,
}

/// `(|td| + floor)^alpha`.
pub fn priority_from_td(td_error: f64, alpha: f64) -> f64 {
    (td_error.abs() + PRIORITY_FLOOR).powf(alpha)
}

pub fn priority_update(entry: &PrioritizedEntry, td_error: f64) -> PrioritizedEntry {
    PrioritizedEntry {
        priority: priority_from_td(td_error, PRIORITY_ALPHA),
        ..entry.clone()
    }
}

/// FIFO ring of prioritized entries with proportional sampling.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    buf: ReplayBuffer<PrioritizedEntry>,
    tree: SumTree,
}

impl PrioritizedReplay {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: ReplayBuffer::new(capacity),
            tree: SumTree::new(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, entry: PrioritizedEntry) -> usize {
        let p = entry.priority;
        let slot = self.buf.push(entry);
        self.tree.set(slot, p);
        slot
    }

    pub fn get(&self, slot: usize) -> Option<&PrioritizedEntry> {
        self.buf.get(slot)
    }

    pub fn set_priority(&mut self, slot: usize, priority: f64) {
        if let Some(e) = self.buf.get_mut(slot) {
            e.priority = priority;
            self.tree.set(slot, priority);
        }
    }

    /// Slot drawn with probability proportional to priority, and that probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, f64)> {
        sample_tree(&self.tree, self.buf.len(), rng)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PrioritizedEntry> {
        self.buf.iter()
    }
}

fn sample_tree<R: Rng + ?Sized>(tree: &SumTree, len: usize, rng: &mut R) -> Option<(usize, f64)> {
    let total = tree.total();
    if len == 0 || total <= 0.0 {
        return None;
    }
    let mut slot = tree.find(rng.random::<f64>() * total);
    if slot >= len || tree.get(slot) <= 0.0 {
        slot = rng.random_range(0..len);
    }
    Some((slot, tree.get(slot) / total))
}

/// Short GPI rollouts through the model from replayed real states.
#[allow(clippy::too_many_arguments)]
pub fn imagine(
    model: &dyn DynamicsModel,
    qnet: &QNet,
    support: &[WeightVec],
    replay: &ReplayBuffer<AgentTransition>,
    n_rollouts: usize,
    horizon: usize,
    exogenous: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PrioritizedEntry>> {
    let mut out = Vec::new();
    if horizon == 0 || replay.is_empty() || support.is_empty() {
        return Ok(out);
    }
    for _ in 0..n_rollouts {
        let mut slot = Some(rng.random_range(0..replay.len()));
        let mut feats = replay.get(slot.unwrap()).expect("slot in range").features.clone();
        let w = &support[rng.random_range(0..support.len())];
        for h in 0..horizon {
            let a = gpi_action(qnet, &feats, w, support)?;
            let member = rng.random_range(0..model.n_members());
            let pred = model.predict(member, &feats, a)?;
            let dis = model.disagreement(&feats, a)?;
            let mut next = pred.next_features;
            let mut chain_ends = false;
            if let Some(exo) = exogenous {
                let s = slot.expect("chain checked before stepping");
                let real = replay.get(s).expect("slot in range");
                for &j in exo {
                    next[j] = real.next_features[j];
                }
                slot = replay.next_slot(s).filter(|&n| {
                    let nt = replay.get(n).expect("slot in range");
                    nt.episode == real.episode && nt.t == real.t + 1
                });
                chain_ends = slot.is_none();
            }
            out.push(PrioritizedEntry {
                transition: AgentTransition {
                    features: feats,
                    action: a,
                    reward: pred.reward,
                    next_features: next.clone(),
                    done: pred.done,
                    truncated: false,
                    episode: 0,
                    t: h as u32,
                },
                priority: 1.0 + dis,
                synthetic: true,
                source_member: Some(member),
            });
            if pred.done || chain_ends {
                break;
            }
            feats = next;
        }
    }
    Ok(out)
}

/// Where a batch sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real(usize),
    Synthetic(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drawn {
    pub source: Source,
    /// Normalized importance-sampling weight.
    pub is_weight: f64,
}

/// One row of the model-quality log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub step: u64,
    pub member: usize,
    pub feature: usize,
    pub mse: f64,
    pub disagreement: f64,
}

pub fn quality_csv(rows: &[QualityRow]) -> String {
    let mut out = String::from("step,member,feature,mse,disagreement\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.member, r.feature, r.mse, r.disagreement
        );
    }
    out
}

/// Model, priorities and synthetic storage driven by the agent's loop.
#[derive(Debug)]
pub struct Dyna {
    cfg: DynaConfig,
    model: Box<dyn DynamicsModel>,
    real_tree: SumTree,
    real_max: f64,
    synthetic: PrioritizedReplay,
    gate_open: bool,
    last_quality: Option<QualityReport>,
    quality_log: Vec<QualityRow>,
    imagined: u64,
}

impl Dyna {
    pub fn new(cfg: DynaConfig, model: Box<dyn DynamicsModel>, replay_capacity: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            real_tree: SumTree::new(replay_capacity),
            real_max: 1.0,
            synthetic: PrioritizedReplay::new(cfg.synthetic_capacity),
            gate_open: false,
            last_quality: None,
            quality_log: Vec::new(),
            imagined: 0,
            model,
            cfg,
        })
    }

    pub fn config(&self) -> &DynaConfig {
        &self.cfg
    }

    pub fn model(&self) -> &dyn DynamicsModel {
        self.model.as_ref()
    }

    pub fn gate_open(&self) -> bool {
        self.gate_open
    }

    pub fn last_quality(&self) -> Option<&QualityReport> {
        self.last_quality.as_ref()
    }

    pub fn quality_log(&self) -> &[QualityRow] {
        &self.quality_log
    }

    pub fn synthetic(&self) -> &PrioritizedReplay {
        &self.synthetic
    }

    pub fn imagined(&self) -> u64 {
        self.imagined
    }

    pub(crate) fn synthetic_transition(&self, slot: usize) -> &AgentTransition {
        &self.synthetic.get(slot).expect("sampled slot exists").transition
    }

    /// New real transitions enter at the current maximum priority.
    pub fn on_real_push(&mut self, slot: usize) {
        self.real_tree.set(slot, self.real_max);
    }

    /// Scores the model on `holdout`, logs the result and sets the gate.
    pub fn refresh_gate(&mut self, holdout: &[&AgentTransition], step: u64) -> Result<&QualityReport> {
        let q = self.model.quality(holdout)?;
        for (member, row) in q.member_mse.iter().enumerate() {
            for (feature, mse) in row.iter().enumerate() {
                self.quality_log.push(QualityRow {
                    step,
                    member,
                    feature,
                    mse: *mse,
                    disagreement: q.disagreement,
                });
            }
        }
        self.gate_open = q.mse <= self.cfg.gate_mse;
        Ok(self.last_quality.insert(q))
    }

    /// Model training, quality gating and imagination after one real step.
    pub fn after_env_step(
        &mut self,
        replay: &ReplayBuffer<AgentTransition>,
        qnet: &QNet,
        support: &[WeightVec],
        exogenous: &[usize],
        step: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let n = replay.len();
        let holdout = self.cfg.holdout.min(n / 2);
        if n < self.cfg.warmup.max(2) {
            return Ok(());
        }
        if self.model.trainable() && step.is_multiple_of(self.cfg.model_train_every) {
            let slots = replay.sample_older(rng, self.cfg.model_batch, holdout);
            let batch: Vec<&AgentTransition> = slots.iter().map(|&s| replay.get(s).expect("slot")).collect();
            if !batch.is_empty() {
                self.model.train_step(&batch, rng)?;
            }
        }
        if self.last_quality.is_none() || step.is_multiple_of(self.cfg.quality_every) {
            let hold: Vec<&AgentTransition> = (n - holdout.max(1)..n)
                .map(|k| replay.get(replay.slot_of_age(k)).expect("slot"))
                .collect();
            self.refresh_gate(&hold, step)?;
        }
        if self.gate_open && self.cfg.rollouts > 0 {
            let exo = self.cfg.exogenous_replay.then_some(exogenous);
            let entries = imagine(
                self.model.as_ref(),
                qnet,
                support,
                replay,
                self.cfg.rollouts,
                self.cfg.horizon,
                exo,
                rng,
            )?;
            self.imagined += entries.len() as u64;
            for e in entries {
                self.synthetic.push(e);
            }
        }
        Ok(())
    }

    /// Prioritized batch: at most `synthetic_cap` of it imagined, and none
    /// while the gate is closed.
    pub fn sample(
        &self,
        replay: &ReplayBuffer<AgentTransition>,
        batch: usize,
        progress: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Drawn> {
        let beta = self.cfg.beta_start + (self.cfg.beta_end - self.cfg.beta_start) * progress.clamp(0.0, 1.0);
        let n_syn = if self.gate_open && !self.synthetic.is_empty() {
            (self.cfg.synthetic_cap * batch as f64).floor() as usize
        } else {
            0
        };
        let mut out = Vec::with_capacity(batch);
        let real_n = replay.len() as f64;
        for _ in 0..batch - n_syn {
            if let Some((slot, p)) = sample_tree(&self.real_tree, replay.len(), rng) {
                out.push(Drawn {
                    source: Source::Real(slot),
                    is_weight: (real_n * p).powf(-beta),
                });
            }
        }
        let syn_n = self.synthetic.len() as f64;
        for _ in 0..n_syn {
            if let Some((slot, p)) = self.synthetic.sample(rng) {
                out.push(Drawn {
                    source: Source::Synthetic(slot),
                    is_weight: (syn_n * p).powf(-beta),
                });
            }
        }
        let max = out.iter().map(|d| d.is_weight).fold(0.0, f64::max);
        if max > 0.0 {
            out.iter_mut().for_each(|d| d.is_weight /= max);
        }
        out
    }

    pub fn update_priorities(&mut self, drawn: &[Drawn], td_errors: &[f64]) {
        for (d, td) in drawn.iter().zip(td_errors) {
            let p = priority_from_td(*td, self.cfg.alpha);
            match d.source {
                Source::Real(s) => {
                    self.real_tree.set(s, p);
                    self.real_max = self.real_max.max(p);
                }
                Source::Synthetic(s) => self.synthetic.set_priority(s, p),
            }
        }
    }
}
