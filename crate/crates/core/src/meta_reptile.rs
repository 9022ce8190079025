//! Reptile meta-training over detected contexts, few-shot finetuning at each
//! context start, the single-network baselines, and annual evaluation.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context_detect::context_of;
pub use crate::context_detect::ContextSegment;
use crate::dyna_model::{Dyna, DynaConfig, Ensemble};
use crate::energy_env::{
    rule_policy, run_day, DayEpisodes, HomeEnv, RewardVec, Rule, EXOGENOUS_FEATURES, HOURS, N_FEATURES,
};
use crate::error::{Error, Result};
use crate::gpi_agent::{format_support, AgentConfig, AgentTransition, GpiAgent, QNet, WeightSupport};
use crate::manifest::Manifest;
use crate::mo_core::{dot, pareto_filter, SolutionSet, ValueVec, WeightVec};
use crate::morl_metrics::{
    anchored_values, expected_utility, hypervolume2d, sparsity, AnnualOutcome, MetricReport, DEFAULT_EU_WEIGHTS,
};
use crate::numcore::{AdamState, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ls,
    Pd,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ls => "ls",
            Variant::Pd => "pd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub outer_lr: f64,
    pub n_epochs: usize,
    pub inner_steps: u64,
    pub contexts_per_epoch: usize,
    pub finetune_steps: u64,
    pub finetune_lr: f64,
    /// Length of the contiguous hour slice used for finetuning.
    pub sub_window_hours: u32,
    /// Average the adapted parameters of an epoch and take one Reptile step.
    pub batched: bool,
    /// Weight re-selection period inside each inner loop.
    pub inner_steps_per_weight: u64,
    pub finetune_steps_per_weight: u64,
    /// Visited weights closer than this (first component) share one support entry.
    pub support_merge_tol: f64,
    /// Finetuning starts from the replay of the final meta-training epoch
    /// instead of an empty buffer.
    pub inherit_replay: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            outer_lr: 3e-4,
            n_epochs: 3,
            inner_steps: 480,
            contexts_per_epoch: 10,
            finetune_steps: 96,
            finetune_lr: 3e-4,
            sub_window_hours: 12,
            batched: false,
            inner_steps_per_weight: 120,
            finetune_steps_per_weight: 24,
            support_merge_tol: 0.02,
            inherit_replay: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(m.to_string()));
        if !(self.outer_lr > 0.0 && self.outer_lr <= 1.0) {
            return bad("outer_lr must lie in (0, 1]");
        }
        if self.inner_steps == 0 {
            return bad("inner_steps must be at least 1");
        }
        if self.n_epochs == 0 || self.contexts_per_epoch == 0 {
            return bad("n_epochs and contexts_per_epoch must be positive");
        }
        if self.sub_window_hours == 0 || self.sub_window_hours >= HOURS {
            return bad("sub_window_hours must lie in 1..24");
        }
        if self.inner_steps_per_weight == 0 || self.finetune_steps_per_weight == 0 {
            return bad("steps per weight must be positive");
        }
        if self.finetune_lr.is_nan()
            || self.finetune_lr <= 0.0
            || self.support_merge_tol.is_nan()
            || self.support_merge_tol < 0.0
        {
            return bad("finetune_lr must be positive and support_merge_tol non-negative");
        }
        Ok(())
    }
}

/// `phi + eps * (phi_prime - phi)`; `eps = 1` returns `phi_prime` bit for bit.
pub fn reptile_step(phi: &MlpParams, phi_prime: &MlpParams, eps: f64) -> Result<MlpParams> {
    if phi.shape() != phi_prime.shape() {
        return Err(Error::shape("reptile parameters", phi.len(), phi_prime.len()));
    }
    let theta = phi
        .theta()
        .iter()
        .zip(phi_prime.theta())
        .map(|(a, b)| if eps == 1.0 { *b } else { a + eps * (b - a) })
        .collect();
    MlpParams::from_theta(phi.shape().clone(), theta)
}

/// `phi + eps * (mean(phi_primes) - phi)`.
pub fn reptile_step_batched(phi: &MlpParams, phi_primes: &[MlpParams], eps: f64) -> Result<MlpParams> {
    if phi_primes.is_empty() {
        return Err(Error::Input("batched Reptile step without adapted parameters".into()));
    }
    let mut mean = vec![0.0; phi.len()];
    for p in phi_primes {
        if p.shape() != phi.shape() {
            return Err(Error::shape("reptile parameters", phi.len(), p.len()));
        }
        for (m, x) in mean.iter_mut().zip(p.theta()) {
            *m += x / phi_primes.len() as f64;
        }
    }
    let avg = MlpParams::from_theta(phi.shape().clone(), mean)?;
    reptile_step(phi, &avg, eps)
}

/// SplitMix64 mix of a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the inner loop for the `k`-th sampled context of `epoch`.
pub fn inner_seed(seed: u64, epoch: usize, k: usize) -> u64 {
    derive_seed(seed, 1 + ((epoch as u64) << 32 | k as u64))
}

/// Seed of the finetuning run at the start of context `context_id`.
pub fn finetune_seed(seed: u64, context_id: usize) -> u64 {
    derive_seed(seed, 0xF1_0000_0000 + context_id as u64)
}

/// Initial Q-network for the home environment, identical to the one a fresh
/// [`GpiAgent`] builds from `seed`.
pub fn init_qnet(cfg: &AgentConfig, seed: u64) -> Result<QNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QNet::new(N_FEATURES, 2, 2, &cfg.hidden, &mut rng)
}

/// Learner on the home environment; GPI-PD attaches a dynamics ensemble.
pub fn make_agent(
    cfg: AgentConfig,
    qnet: QNet,
    variant: Variant,
    dyna_cfg: &DynaConfig,
    seed: u64,
) -> Result<GpiAgent> {
    let capacity = cfg.replay_capacity;
    let agent = GpiAgent::from_qnet(cfg, qnet, seed)?;
    match variant {
        Variant::Ls => Ok(agent),
        Variant::Pd => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xD7A));
            let mut model = Ensemble::new(N_FEATURES, 2, 2, dyna_cfg, &mut rng)?;
            if dyna_cfg.exogenous_replay {
                model = model.with_masked_features(EXOGENOUS_FEATURES.to_vec());
            }
            let dyna = Dyna::new(dyna_cfg.clone(), Box::new(model), capacity)?;
            Ok(agent.with_dyna(dyna))
        }
    }
}

/// Adds `w` unless a weight within `tol` is already present.
pub fn merge_weight(support: &mut WeightSupport, w: &WeightVec, tol: f64) {
    let close = support.weights().iter().any(|v| (v.first() - w.first()).abs() <= tol);
    if !close {
        support.insert(w.clone());
    }
}

/// Data volume (hourly samples) and training budget (environment steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub data_volume: u64,
    pub training_budget: u64,
}

#[derive(Debug, Clone)]
pub struct MetaOutcome {
    pub qnet: QNet,
    /// Union of the weights visited by all inner loops.
    pub support: WeightSupport,
    pub budget: Budget,
    pub manifest: Manifest,
    /// Context ids in the order they were used, per epoch.
    pub schedule: Vec<Vec<usize>>,
    /// Real transitions of the final epoch's inner loops, with episode ids
    /// made unique across loops.
    pub replay: Vec<AgentTransition>,
}

fn shift_days(contexts: &[ContextSegment]) -> Vec<u32> {
    contexts.iter().map(|c| c.start_day).collect()
}

/// Reptile meta-training: each inner loop trains a fresh learner cloned from
/// `phi` on the start day of one sampled context.
pub fn meta_train(
    env: &HomeEnv,
    contexts: &[ContextSegment],
    agent_cfg: &AgentConfig,
    cfg: &MetaConfig,
    variant: Variant,
    dyna_cfg: &DynaConfig,
    seed: u64,
) -> Result<MetaOutcome> {
    cfg.validate()?;
    if contexts.is_empty() {
        return Err(Error::Input("meta-training needs at least one context".into()));
    }
    let phi0 = init_qnet(agent_cfg, seed)?;
    meta_train_from(phi0, env, contexts, agent_cfg, cfg, variant, dyna_cfg, seed)
}

/// [`meta_train`] from a given initial network.
#[allow(clippy::too_many_arguments)]
pub fn meta_train_from(
    phi0: QNet,
    env: &HomeEnv,
    contexts: &[ContextSegment],
    agent_cfg: &AgentConfig,
    cfg: &MetaConfig,
    variant: Variant,
    dyna_cfg: &DynaConfig,
    seed: u64,
) -> Result<MetaOutcome> {
    cfg.validate()?;
    if contexts.is_empty() {
        return Err(Error::Input("meta-training needs at least one context".into()));
    }
    let inner_cfg = AgentConfig {
        steps_per_weight: cfg.inner_steps_per_weight,
        ..agent_cfg.clone()
    };
    let mut phi = phi0;
    let mut support = WeightSupport::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5A3));
    let per_epoch = cfg.contexts_per_epoch.min(contexts.len());
    let mut schedule = Vec::with_capacity(cfg.n_epochs);
    let mut steps = 0u64;
    let mut replay = Vec::new();
    for epoch in 0..cfg.n_epochs {
        let picked: Vec<usize> = sample(&mut rng, contexts.len(), per_epoch).into_vec();
        let mut adapted = Vec::with_capacity(picked.len());
        for (k, &ci) in picked.iter().enumerate() {
            let task = DayEpisodes::new(env.clone(), vec![contexts[ci].start_day])?;
            let mut agent = make_agent(
                inner_cfg.clone(),
                phi.clone(),
                variant,
                dyna_cfg,
                inner_seed(seed, epoch, k),
            )?;
            let mut task = task;
            agent.train(&mut task, cfg.inner_steps)?;
            steps += agent.env_steps();
            for w in agent.visited() {
                merge_weight(&mut support, w, cfg.support_merge_tol);
            }
            if epoch + 1 == cfg.n_epochs {
                let tag = (k as u64 + 1) << 32;
                replay.extend(agent.replay.iter().map(|tr| AgentTransition {
                    episode: tr.episode + tag,
                    ..tr.clone()
                }));
            }
            let adapted_net = agent.into_qnet();
            if cfg.batched {
                adapted.push(adapted_net.params);
            } else {
                phi.params = reptile_step(&phi.params, &adapted_net.params, cfg.outer_lr)?;
            }
        }
        if cfg.batched {
            phi.params = reptile_step_batched(&phi.params, &adapted, cfg.outer_lr)?;
        }
        schedule.push(picked.iter().map(|&i| contexts[i].id).collect());
    }
    let budget = Budget {
        data_volume: contexts.len() as u64 * HOURS as u64,
        training_budget: steps,
    };
    let mut manifest = Manifest::new();
    manifest.set("stage", "meta_train");
    manifest.set("variant", variant.name());
    manifest.set("seed", seed);
    manifest.set("epochs", cfg.n_epochs);
    manifest.set("contexts_per_epoch", per_epoch);
    manifest.set("inner_steps", cfg.inner_steps);
    manifest.set("outer_lr", cfg.outer_lr);
    manifest.set("batched", cfg.batched);
    manifest.set("data_volume", budget.data_volume);
    manifest.set("training_budget", budget.training_budget);
    manifest.set("contexts", join_days(&shift_days(contexts)));
    manifest.set("support", format_support(support.weights()));
    manifest.set("phi_fingerprint", format!("{:016x}", phi.params.fingerprint()));
    Ok(MetaOutcome {
        qnet: phi,
        support,
        budget,
        manifest,
        schedule,
        replay,
    })
}

fn join_days(days: &[u32]) -> String {
    days.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(";")
}

/// One row of an annual reward log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub policy_id: usize,
    pub day: u32,
    pub neg_cost: f64,
    pub comfort: f64,
    pub context_id: usize,
    pub finetuned: bool,
}

pub fn rewards_csv(rows: &[RewardRow]) -> String {
    let mut s = String::from("policy_id,day,neg_cost,comfort,context_id,finetuned\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.policy_id, r.day, r.neg_cost, r.comfort, r.context_id, r.finetuned as u8
        ));
    }
    s
}

/// Annual evaluation of one method.
#[derive(Debug, Clone)]
pub struct YearOutcome {
    /// Annual value of every evaluated policy; ids index `support`.
    pub solutions: SolutionSet,
    pub front: SolutionSet,
    pub rewards: Vec<RewardRow>,
    pub metrics: MetricReport,
    pub outcomes: BTreeMap<usize, AnnualOutcome>,
    pub support: Vec<WeightVec>,
    pub budget: Budget,
    pub manifest: Manifest,
    /// Parameter fingerprints of the network at each finetuning restart.
    pub restart_fingerprints: Vec<u64>,
    /// Policies left out of the hypervolume because they lie below the reference.
    pub hv_excluded: usize,
    /// Trained base network: the baseline learner or the meta-trained `phi`.
    pub network: Option<QNet>,
}

/// Undiscounted per-day rewards of the GPI policy of every support weight.
/// Q-values are computed once per visited `(hour, remaining)` state and
/// shared between policies; actions equal [`crate::gpi_agent::gpi_action`].
pub fn evaluate_support_day(qnet: &QNet, support: &[WeightVec], env: &HomeEnv, day: u32) -> Result<Vec<RewardVec>> {
    if support.is_empty() {
        return Err(Error::Input("empty weight support".into()));
    }
    let d = qnet.n_objectives();
    let mut cache: HashMap<(u32, u32), Vec<Vec<f64>>> = HashMap::new();
    let mut out = Vec::with_capacity(support.len());
    for w in support {
        let trs = run_day(env, day, |s| {
            let key = (s.hour, s.remaining_task_hours);
            if let Entry::Vacant(slot) = cache.entry(key) {
                let f = env.features(s);
                slot.insert(support.iter().map(|wk| qnet.raw(&f, wk)).collect::<Result<Vec<_>>>()?);
            }
            let raws = &cache[&key];
            let n_a = qnet.n_actions();
            let mut best = vec![f64::NEG_INFINITY; n_a];
            for raw in raws {
                for (a, b) in best.iter_mut().enumerate() {
                    let u = dot(&raw[a * d..(a + 1) * d], w.as_slice());
                    if u > *b {
                        *b = u;
                    }
                }
            }
            let mut a_best = 0;
            for a in 1..n_a {
                if best[a] > best[a_best] {
                    a_best = a;
                }
            }
            Ok(a_best as u8)
        })?;
        let mut total = RewardVec::default();
        for tr in trs {
            total.neg_cost += tr.reward.neg_cost;
            total.comfort += tr.reward.comfort;
        }
        out.push(total);
    }
    Ok(out)
}

/// Network used on a span of days and whether it was finetuned.
#[derive(Debug, Clone)]
pub struct PolicySpan {
    pub qnet: QNet,
    pub first_day: u32,
    pub last_day: u32,
    pub finetuned: bool,
}

/// Evaluates the support policies of each span over its days.
pub fn evaluate_year(
    spans: &[PolicySpan],
    support: &[WeightVec],
    env: &HomeEnv,
    contexts: &[ContextSegment],
) -> Result<Vec<RewardRow>> {
    let mut rows = Vec::new();
    for span in spans {
        for day in span.first_day..=span.last_day {
            let ctx = context_of(contexts, day).map_or(0, |c| c.id);
            for (k, r) in evaluate_support_day(&span.qnet, support, env, day)?
                .into_iter()
                .enumerate()
            {
                rows.push(RewardRow {
                    policy_id: k,
                    day,
                    neg_cost: r.neg_cost,
                    comfort: r.comfort,
                    context_id: ctx,
                    finetuned: span.finetuned,
                });
            }
        }
    }
    rows.sort_by_key(|r| (r.policy_id, r.day));
    Ok(rows)
}

/// Sums a reward log per policy.
pub fn annual_totals(rows: &[RewardRow]) -> BTreeMap<usize, RewardVec> {
    let mut totals: BTreeMap<usize, RewardVec> = BTreeMap::new();
    for r in rows {
        let t = totals.entry(r.policy_id).or_default();
        t.neg_cost += r.neg_cost;
        t.comfort += r.comfort;
    }
    totals
}

/// Metrics of an annual solution set. Points below the hypervolume reference
/// are left out of the hypervolume only; their count is returned.
pub fn year_metrics(
    solutions: &SolutionSet,
    outcomes: &BTreeMap<usize, AnnualOutcome>,
    hv_ref: [f64; 2],
) -> Result<(MetricReport, usize)> {
    let mut inside = SolutionSet::new();
    for e in &solutions.entries {
        let v = e.value.as_slice();
        if v[0] >= hv_ref[0] && v[1] >= hv_ref[1] {
            inside.push(e.value.clone(), e.policy_id);
        }
    }
    let excluded = solutions.len() - inside.len();
    let hv = hypervolume2d(&inside, hv_ref)?;
    let sp = sparsity(solutions);
    let (bill_at_w91, comfort_at_w19) = anchored_values(solutions, outcomes)?;
    Ok((
        MetricReport {
            eu: expected_utility(solutions, DEFAULT_EU_WEIGHTS)?,
            hv,
            sp,
            hv_over_sp: sp.filter(|s| *s > 0.0).map(|s| hv / s),
            bill_at_w91,
            comfort_at_w19,
        },
        excluded,
    ))
}

fn assemble(
    rows: Vec<RewardRow>,
    support: Vec<WeightVec>,
    budget: Budget,
    manifest: Manifest,
    restart_fingerprints: Vec<u64>,
    network: Option<QNet>,
    hv_ref: [f64; 2],
) -> Result<YearOutcome> {
    let totals = annual_totals(&rows);
    let mut solutions = SolutionSet::new();
    let mut outcomes = BTreeMap::new();
    for (&id, t) in &totals {
        solutions.push(ValueVec::new(t.to_vec())?, id);
        outcomes.insert(
            id,
            AnnualOutcome {
                bill: -t.neg_cost,
                comfort: t.comfort,
            },
        );
    }
    let (metrics, hv_excluded) = year_metrics(&solutions, &outcomes, hv_ref)?;
    let mut manifest = manifest;
    manifest.set("hv_excluded", hv_excluded);
    Ok(YearOutcome {
        front: pareto_filter(&solutions),
        solutions,
        rewards: rows,
        metrics,
        outcomes,
        support,
        budget,
        manifest,
        restart_fingerprints,
        hv_excluded,
        network,
    })
}

/// Year-long run of a meta-trained network: at each context start the
/// original `phi` is finetuned on a random sub-window of that day and the
/// result acts greedily until the next context. `finetune_steps = 0`
/// evaluates `phi` itself everywhere.
#[allow(clippy::too_many_arguments)]
pub fn finetune_run_year(
    meta: &MetaOutcome,
    env: &HomeEnv,
    contexts: &[ContextSegment],
    agent_cfg: &AgentConfig,
    cfg: &MetaConfig,
    variant: Variant,
    dyna_cfg: &DynaConfig,
    hv_ref: [f64; 2],
    seed: u64,
) -> Result<YearOutcome> {
    cfg.validate()?;
    check_contexts(env, contexts)?;
    let phi = &meta.qnet;
    let phi_fp = phi.params.fingerprint();
    let support = meta.support.weights().to_vec();
    let ft_cfg = AgentConfig {
        lr: cfg.finetune_lr,
        steps_per_weight: cfg.finetune_steps_per_weight,
        ..agent_cfg.clone()
    };
    let mut spans = Vec::with_capacity(contexts.len());
    let mut fingerprints = Vec::new();
    let mut ft_steps = 0u64;
    for ctx in contexts {
        if cfg.finetune_steps == 0 {
            spans.push(PolicySpan {
                qnet: phi.clone(),
                first_day: ctx.start_day,
                last_day: ctx.end_day,
                finetuned: false,
            });
            continue;
        }
        let s = finetune_seed(seed, ctx.id);
        let mut agent = make_agent(ft_cfg.clone(), phi.clone(), variant, dyna_cfg, s)?;
        let fp = agent.qnet.params.fingerprint();
        if fp != phi_fp {
            return Err(Error::Numeric(
                "finetuning did not restart from the meta-trained network".into(),
            ));
        }
        fingerprints.push(fp);
        agent.set_support(meta.support.clone());
        if cfg.inherit_replay {
            agent.preload(meta.replay.iter().cloned());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, 0x5B));
        let start = rng.random_range(0..=HOURS - cfg.sub_window_hours);
        let mut task = DayEpisodes::new(env.clone(), vec![ctx.start_day])?.with_window(start, cfg.sub_window_hours)?;
        agent.train(&mut task, cfg.finetune_steps)?;
        ft_steps += agent.env_steps();
        spans.push(PolicySpan {
            qnet: agent.into_qnet(),
            first_day: ctx.start_day,
            last_day: ctx.end_day,
            finetuned: true,
        });
    }
    let rows = evaluate_year(&spans, &support, env, contexts)?;
    let budget = Budget {
        data_volume: meta.budget.data_volume,
        training_budget: meta.budget.training_budget + ft_steps,
    };
    let mut manifest = Manifest::new();
    manifest.set("variant", variant.name());
    manifest.set(
        "kind",
        if cfg.finetune_steps > 0 {
            "finetune_r_gpi"
        } else {
            "r_gpi"
        },
    );
    manifest.set("seed", seed);
    manifest.set("data_volume", budget.data_volume);
    manifest.set("training_budget", budget.training_budget);
    manifest.set("meta_budget", meta.budget.training_budget);
    manifest.set("finetune_steps", cfg.finetune_steps);
    manifest.set("contexts", join_days(&shift_days(contexts)));
    manifest.set("support", format_support(&support));
    manifest.set("phi_fingerprint", format!("{phi_fp:016x}"));
    manifest.set("restarts", fingerprints.len());
    manifest.set("inherit_replay", cfg.inherit_replay);
    assemble(rows, support, budget, manifest, fingerprints, Some(phi.clone()), hv_ref)
}

fn check_contexts(env: &HomeEnv, contexts: &[ContextSegment]) -> Result<()> {
    if contexts.is_empty() {
        return Err(Error::Input("no contexts".into()));
    }
    for c in contexts {
        for d in [c.start_day, c.end_day] {
            if !env.data().has_day(d) {
                return Err(Error::Data(format!("context {} needs missing day {d}", c.id)));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Month,
    FinetuneMonth,
    Year,
    Joint,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Month => "month",
            BaselineKind::FinetuneMonth => "finetune_month",
            BaselineKind::Year => "year",
            BaselineKind::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "month" => Ok(BaselineKind::Month),
            "finetune_month" => Ok(BaselineKind::FinetuneMonth),
            "year" => Ok(BaselineKind::Year),
            "joint" => Ok(BaselineKind::Joint),
            _ => Err(Error::Input(format!(
                "unknown baseline kind {s:?} (month, finetune_month, year, joint)"
            ))),
        }
    }
}

/// Step budgets of the single-network baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub train_steps: u64,
    pub month_days: u32,
    /// Extra steps at each context start for the finetuned month baseline.
    pub finetune_steps: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            train_steps: 40_000,
            month_days: 30,
            finetune_steps: 5_000,
        }
    }
}

/// Trains one baseline learner and evaluates it over the year. The
/// finetuned month baseline restarts from the month network at every
/// context start and finetunes on that day's data.
#[allow(clippy::too_many_arguments)]
pub fn baseline_run(
    kind: BaselineKind,
    variant: Variant,
    env: &HomeEnv,
    contexts: &[ContextSegment],
    agent_cfg: &AgentConfig,
    cfg: &BaselineConfig,
    dyna_cfg: &DynaConfig,
    hv_ref: [f64; 2],
    seed: u64,
) -> Result<YearOutcome> {
    check_contexts(env, contexts)?;
    let data = env.data();
    let shifts = shift_days(contexts);
    let train_days: Vec<u32> = match kind {
        BaselineKind::Month | BaselineKind::FinetuneMonth => {
            let first = data.first_day();
            let days: Vec<u32> = (first..first + cfg.month_days).collect();
            if days.iter().any(|&d| !data.has_day(d)) {
                return Err(Error::Data(format!(
                    "dataset does not cover {} month days",
                    cfg.month_days
                )));
            }
            days
        }
        BaselineKind::Year => data.days().collect(),
        BaselineKind::Joint => shifts.clone(),
    };
    let qnet = init_qnet(agent_cfg, seed)?;
    let mut agent = make_agent(agent_cfg.clone(), qnet, variant, dyna_cfg, seed)?;
    let mut task = DayEpisodes::new(env.clone(), train_days.clone())?;
    agent.train(&mut task, cfg.train_steps)?;
    let mut steps = agent.env_steps();
    let support = agent.support().clone();
    let base = agent.into_qnet();
    let base_net = base.clone();
    let mut spans = Vec::new();
    let mut fingerprints = Vec::new();
    let mut data_volume = train_days.len() as u64 * HOURS as u64;
    if kind == BaselineKind::FinetuneMonth {
        let base_fp = base.params.fingerprint();
        let ft_cfg = AgentConfig {
            steps_per_weight: agent_cfg.steps_per_weight.min(cfg.finetune_steps.max(1)),
            ..agent_cfg.clone()
        };
        for ctx in contexts {
            let mut ft = make_agent(
                ft_cfg.clone(),
                base.clone(),
                variant,
                dyna_cfg,
                finetune_seed(seed, ctx.id),
            )?;
            fingerprints.push(ft.qnet.params.fingerprint());
            debug_assert_eq!(fingerprints.last(), Some(&base_fp));
            ft.set_support(support.clone());
            let mut day_task = DayEpisodes::new(env.clone(), vec![ctx.start_day])?;
            ft.train(&mut day_task, cfg.finetune_steps)?;
            steps += ft.env_steps();
            spans.push(PolicySpan {
                qnet: ft.into_qnet(),
                first_day: ctx.start_day,
                last_day: ctx.end_day,
                finetuned: true,
            });
        }
        data_volume += shifts.len() as u64 * HOURS as u64;
    } else {
        spans.push(PolicySpan {
            qnet: base,
            first_day: data.first_day(),
            last_day: data.last_day(),
            finetuned: false,
        });
    }
    let ws = support.weights().to_vec();
    let rows = evaluate_year(&spans, &ws, env, contexts)?;
    let budget = Budget {
        data_volume,
        training_budget: steps,
    };
    let mut manifest = Manifest::new();
    manifest.set("variant", variant.name());
    manifest.set("kind", kind.name());
    manifest.set("seed", seed);
    manifest.set("data_volume", budget.data_volume);
    manifest.set("training_budget", budget.training_budget);
    manifest.set("contexts", join_days(&shifts));
    manifest.set("support", format_support(&ws));
    assemble(rows, ws, budget, manifest, fingerprints, Some(base_net), hv_ref)
}

/// Year of a fixed rule policy; a single solution with policy id 0.
pub fn rule_run(rule: Rule, env: &HomeEnv, contexts: &[ContextSegment], hv_ref: [f64; 2]) -> Result<YearOutcome> {
    check_contexts(env, contexts)?;
    let mut rows = Vec::new();
    for day in env.data().days() {
        let trs = run_day(env, day, |s| Ok(rule_policy(rule, s)))?;
        let mut r = RewardVec::default();
        for tr in trs {
            r.neg_cost += tr.reward.neg_cost;
            r.comfort += tr.reward.comfort;
        }
        rows.push(RewardRow {
            policy_id: 0,
            day,
            neg_cost: r.neg_cost,
            comfort: r.comfort,
            context_id: context_of(contexts, day).map_or(0, |c| c.id),
            finetuned: false,
        });
    }
    let mut manifest = Manifest::new();
    manifest.set("kind", format!("rule{}", rule.index()));
    manifest.set("data_volume", 0);
    manifest.set("training_budget", 0);
    let budget = Budget {
        data_volume: 0,
        training_budget: 0,
    };
    assemble(rows, Vec::new(), budget, manifest, Vec::new(), None, hv_ref)
}

/// Expected data volume and budget for a method under the default protocol
/// with twelve contexts.
pub fn table1_budget(kind: &str) -> Option<Budget> {
    let b = |data_volume, training_budget| {
        Some(Budget {
            data_volume,
            training_budget,
        })
    };
    match kind {
        "month" => b(720, 40_000),
        "finetune_month" => b(1008, 100_000),
        "year" => b(8760, 40_000),
        "joint" => b(288, 40_000),
        "r_gpi" => b(288, 14_400),
        "finetune_r_gpi" => b(288, 15_552),
        _ => None,
    }
}

/// Sine-regression family `y = a sin(x + b)` used to sanity-check Reptile.
pub mod sine {
    use super::*;
    use crate::numcore::{mse_loss_grad, Activation, LayerShape};
    use std::f64::consts::PI;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct SineTask {
        pub amplitude: f64,
        pub phase: f64,
    }

    impl SineTask {
        pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
            Self {
                amplitude: rng.random_range(0.1..5.0),
                phase: rng.random_range(0.0..PI),
            }
        }

        pub fn eval(&self, x: f64) -> f64 {
            self.amplitude * (x + self.phase).sin()
        }

        pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<(f64, f64)> {
            (0..n)
                .map(|_| {
                    let x = rng.random_range(-5.0..5.0);
                    (x, self.eval(x))
                })
                .collect()
        }
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct SineConfig {
        pub hidden: Vec<usize>,
        pub meta_iters: usize,
        pub inner_steps: usize,
        pub inner_lr: f64,
        pub outer_lr: f64,
        pub batch: usize,
        pub finetune_steps: usize,
        pub test_points: usize,
    }

    impl Default for SineConfig {
        fn default() -> Self {
            Self {
                hidden: vec![40, 40],
                meta_iters: 3000,
                inner_steps: 8,
                inner_lr: 0.02,
                outer_lr: 0.1,
                batch: 10,
                finetune_steps: 10,
                test_points: 100,
            }
        }
    }

    pub fn new_net<R: Rng + ?Sized>(cfg: &SineConfig, rng: &mut R) -> Result<MlpParams> {
        let shape = LayerShape::mlp(1, &cfg.hidden, 1, Activation::ReluLinear)?;
        Ok(MlpParams::init(shape, rng))
    }

    /// `steps` plain gradient steps (fresh Adam) on a fixed support batch.
    pub fn adapt(net: &MlpParams, data: &[(f64, f64)], steps: usize, lr: f64) -> Result<MlpParams> {
        let mut out = net.clone();
        let mut adam = AdamState::new(out.len(), lr);
        for _ in 0..steps {
            let mut grad = vec![0.0; out.len()];
            for &(x, y) in data {
                let trace = out.forward_trace(&[x])?;
                let (_, g) = mse_loss_grad(trace.output(), &[y])?;
                out.accumulate_grad(&trace, &g, 1.0 / data.len() as f64, &mut grad)?;
            }
            adam.step(out.theta_mut(), &grad)?;
        }
        Ok(out)
    }

    pub fn mse(net: &MlpParams, task: &SineTask, n: usize) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..n {
            let x = -5.0 + 10.0 * i as f64 / (n - 1) as f64;
            let p = net.forward(&[x])?[0];
            total += (p - task.eval(x)).powi(2);
        }
        Ok(total / n as f64)
    }

    pub fn meta_train<R: Rng + ?Sized>(cfg: &SineConfig, init: MlpParams, rng: &mut R) -> Result<MlpParams> {
        let mut phi = init;
        for it in 0..cfg.meta_iters {
            let task = SineTask::sample(rng);
            let data = task.batch(rng, cfg.batch);
            let adapted = adapt(&phi, &data, cfg.inner_steps, cfg.inner_lr)?;
            let eps = cfg.outer_lr * (1.0 - it as f64 / cfg.meta_iters as f64);
            phi = reptile_step(&phi, &adapted, eps)?;
        }
        Ok(phi)
    }

    /// Held-out MSE after `finetune_steps` from a meta-trained and from a
    /// random initialization, averaged over `n_tasks` tasks.
    pub fn compare(cfg: &SineConfig, seed: u64, n_tasks: usize) -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random = new_net(cfg, &mut rng)?;
        let meta = meta_train(cfg, random.clone(), &mut rng)?;
        let (mut m, mut r) = (0.0, 0.0);
        for _ in 0..n_tasks {
            let task = SineTask::sample(&mut rng);
            let data = task.batch(&mut rng, cfg.batch);
            m += mse(
                &adapt(&meta, &data, cfg.finetune_steps, cfg.inner_lr)?,
                &task,
                cfg.test_points,
            )?;
            r += mse(
                &adapt(&random, &data, cfg.finetune_steps, cfg.inner_lr)?,
                &task,
                cfg.test_points,
            )?;
        }
        Ok((m / n_tasks as f64, r / n_tasks as f64))
    }
}
