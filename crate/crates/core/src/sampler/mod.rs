//! Parallel-tempered Metropolis sampling over expression trees.
//!
//! Chain `t` targets `exp(-beta_t * E(m))`. The first rung has `beta = 1`
//! and is the only one recorded. Each chain owns a ChaCha8 stream seeded
//! from the master seed and its index; swaps draw from a separate stream,
//! so a run is a pure function of its configuration.

mod moves;
mod trace;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{ExprTree, Node, Operator, Signature};
use crate::likelihood::{mix, Dataset, FitConfig, FitResult};
use crate::score::{description_length, log_prior, PriorHyperparams, ScoreBreakdown, ScoreConfig};

pub use moves::{propose, proposal_prob, Grammar, MoveKind};
pub use trace::{read_trace, write_trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoveProbs {
    pub relabel: f64,
    pub prune_graft: f64,
    pub root_flip: f64,
    pub leaf_swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs { relabel: 0.25, prune_graft: 0.35, root_flip: 0.2, leaf_swap: 0.2 }
    }
}

impl MoveProbs {
    fn as_array(&self) -> [f64; 4] {
        [self.relabel, self.prune_graft, self.root_flip, self.leaf_swap]
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        for (kind, p) in MoveKind::ALL.into_iter().zip(self.as_array()) {
            acc += p;
            if u < acc {
                return kind;
            }
        }
        // rounding in the cumulative sum
        MoveKind::ALL.into_iter().zip(self.as_array()).rev().find(|(_, p)| *p > 0.0).map_or(MoveKind::LeafSwap, |(k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Inverse temperatures, starting at 1 and strictly decreasing.
    pub betas: Vec<f64>,
    pub burn_in: usize,
    pub steps: usize,
    pub thin: usize,
    /// Swap attempts happen after every `swap_period` steps; 0 disables them.
    pub swap_period: usize,
    pub moves: MoveProbs,
    /// Maximum tree depth; a single leaf has depth 0.
    pub max_depth: usize,
    pub basis: Vec<Operator>,
    pub leaf_prob: f64,
    pub var_prob: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            betas: geometric_ladder(6, 1.5),
            burn_in: 3000,
            steps: 20_000,
            thin: 10,
            swap_period: 1,
            moves: MoveProbs::default(),
            max_depth: 2,
            basis: Operator::DEFAULT_BASIS.to_vec(),
            leaf_prob: 0.5,
            var_prob: 0.5,
            seed: 0,
        }
    }
}

/// `beta_t = 1 / ratio^t` for `t = 0..count`.
pub fn geometric_ladder(count: usize, ratio: f64) -> Vec<f64> {
    (0..count).map(|t| ratio.powi(-(t as i32))).collect()
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("sampler.{m}")));
        if self.betas.first() != Some(&1.0) {
            return bad("betas must start at 1");
        }
        if self.betas.windows(2).any(|w| !(w[1] < w[0])) || self.betas.iter().any(|b| !(*b > 0.0)) {
            return bad("betas must be positive and strictly decreasing");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        let probs = self.moves.as_array();
        if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("moves must be non-negative and sum to 1");
        }
        if self.basis.is_empty() {
            return bad("basis must not be empty");
        }
        if self.basis.iter().enumerate().any(|(i, o)| self.basis[..i].contains(o)) {
            return bad("basis lists an operator twice");
        }
        if !(self.leaf_prob > 0.0 && self.leaf_prob <= 1.0) {
            return bad("leaf_prob must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.var_prob) {
            return bad("var_prob must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn grammar(&self, n_features: usize) -> Grammar {
        Grammar {
            basis: self.basis.clone(),
            n_features,
            max_depth: self.max_depth,
            leaf_prob: self.leaf_prob,
            var_prob: self.var_prob,
        }
    }
}

/// Energy landscape explored by the sampler. `None` marks a state that
/// cannot be scored; it behaves as infinite energy.
pub trait Energy: Sync {
    type Info: Clone + Send + Sync;
    fn energy(&self, tree: &ExprTree) -> Option<(f64, Self::Info)>;
}

#[derive(Debug, Clone)]
pub struct ChainState<I> {
    pub tree: ExprTree,
    pub energy: f64,
    pub info: Option<I>,
}

impl<I: Clone> ChainState<I> {
    pub fn new<E: Energy<Info = I>>(tree: ExprTree, energy: &E) -> ChainState<I> {
        match energy.energy(&tree) {
            Some((e, info)) => ChainState { tree, energy: e, info: Some(info) },
            None => ChainState { tree, energy: f64::INFINITY, info: None },
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounter {
    pub proposed: u64,
    pub accepted: u64,
    /// Proposals with nothing to act on or leaving the grammar.
    pub invalid: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounters {
    pub relabel: MoveCounter,
    pub prune_graft: MoveCounter,
    pub root_flip: MoveCounter,
    pub leaf_swap: MoveCounter,
}

impl MoveCounters {
    pub fn get_mut(&mut self, kind: MoveKind) -> &mut MoveCounter {
        match kind {
            MoveKind::Relabel => &mut self.relabel,
            MoveKind::PruneGraft => &mut self.prune_graft,
            MoveKind::RootFlip => &mut self.root_flip,
            MoveKind::LeafSwap => &mut self.leaf_swap,
        }
    }

    pub fn get(&self, kind: MoveKind) -> MoveCounter {
        match kind {
            MoveKind::Relabel => self.relabel,
            MoveKind::PruneGraft => self.prune_graft,
            MoveKind::RootFlip => self.root_flip,
            MoveKind::LeafSwap => self.leaf_swap,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapCounter {
    pub attempted: u64,
    pub accepted: u64,
}

/// Accepts with probability `min(1, exp(log_alpha))`.
pub fn metropolis_accept<R: Rng + ?Sized>(log_alpha: f64, rng: &mut R) -> bool {
    if log_alpha.is_nan() {
        return false;
    }
    log_alpha >= 0.0 || rng.random::<f64>() < log_alpha.exp()
}

/// Acceptance of an exchange between rungs at `beta_t > beta_u` holding
/// energies `e_t` and `e_u`.
pub fn swap_accept<R: Rng + ?Sized>(beta_t: f64, beta_u: f64, e_t: f64, e_u: f64, rng: &mut R) -> bool {
    if e_t == e_u {
        return true;
    }
    metropolis_accept((beta_t - beta_u) * (e_t - e_u), rng)
}

/// One Metropolis–Hastings update of `state` at inverse temperature `beta`.
#[allow(clippy::too_many_arguments)]
pub fn mh_step<E: Energy, R: Rng + ?Sized>(
    state: &mut ChainState<E::Info>,
    energy: &E,
    grammar: &Grammar,
    moves: &MoveProbs,
    beta: f64,
    rng: &mut R,
    counters: &mut MoveCounters,
) {
    let kind = moves.draw(rng);
    let counter = counters.get_mut(kind);
    counter.proposed += 1;
    let Some((candidate, log_ratio)) = propose(&state.tree, kind, grammar, rng) else {
        counter.invalid += 1;
        return;
    };
    let Some((e_new, info)) = energy.energy(&candidate) else {
        return;
    };
    let log_alpha = if state.energy.is_infinite() { f64::INFINITY } else { -beta * (e_new - state.energy) + log_ratio };
    if metropolis_accept(log_alpha, rng) {
        counter.accepted += 1;
        *state = ChainState { tree: candidate, energy: e_new, info: Some(info) };
    }
}

/// Attempts to exchange the states of rungs `t` and `t + 1`. A no-op when
/// the ladder has no such pair.
pub fn swap_step<I, R: Rng + ?Sized>(
    betas: &[f64],
    states: &mut [ChainState<I>],
    t: usize,
    rng: &mut R,
    counters: &mut [SwapCounter],
) {
    if t + 1 >= betas.len() || t + 1 >= states.len() {
        return;
    }
    counters[t].attempted += 1;
    if swap_accept(betas[t], betas[t + 1], states[t].energy, states[t + 1].energy, rng) {
        counters[t].accepted += 1;
        states.swap(t, t + 1);
    }
}

/// Counters accumulated over a tempered run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Move counters per rung, coldest first.
    pub moves: Vec<MoveCounters>,
    /// Swap counters per adjacent pair `(t, t + 1)`.
    pub swaps: Vec<SwapCounter>,
}

/// Runs the tempered chains from `initial`, calling `record` with the
/// `beta = 1` state at every retained step.
pub fn run_tempered<E: Energy>(
    energy: &E,
    grammar: &Grammar,
    cfg: &SamplerConfig,
    initial: &ExprTree,
    mut record: impl FnMut(usize, &ChainState<E::Info>),
) -> Result<RunStats> {
    cfg.validate()?;
    let n_chains = cfg.betas.len();
    let start = ChainState::new(initial.with_fresh_params(), energy);
    let mut states: Vec<ChainState<E::Info>> = vec![start; n_chains];
    let mut rngs: Vec<ChaCha8Rng> =
        (0..n_chains).map(|c| ChaCha8Rng::seed_from_u64(mix(cfg.seed, c as u64))).collect();
    let mut swap_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, u64::MAX));
    let mut stats = RunStats {
        moves: vec![MoveCounters::default(); n_chains],
        swaps: vec![SwapCounter::default(); n_chains.saturating_sub(1)],
    };

    for step in 0..cfg.burn_in + cfg.steps {
        states
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .zip(stats.moves.par_iter_mut())
            .zip(cfg.betas.par_iter())
            .for_each(|(((state, rng), counters), &beta)| {
                mh_step(state, energy, grammar, &cfg.moves, beta, rng, counters);
            });
        if cfg.swap_period > 0 && (step + 1) % cfg.swap_period == 0 {
            for t in 0..n_chains.saturating_sub(1) {
                swap_step(&cfg.betas, &mut states, t, &mut swap_rng, &mut stats.swaps);
            }
        }
        if step >= cfg.burn_in && (step - cfg.burn_in) % cfg.thin == 0 {
            record(step, &states[0]);
        }
    }
    Ok(stats)
}

/// A fitted and scored model.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub fit: FitResult,
    pub score: ScoreBreakdown,
}

/// Energy equal to the description length, with fits memoized by
/// structure signature.
pub struct PosteriorEnergy<'a> {
    data: &'a Dataset,
    hp: &'a PriorHyperparams,
    fit_cfg: FitConfig,
    score_cfg: ScoreConfig,
    cache: Mutex<HashMap<Signature, Option<Arc<Scored>>>>,
}

impl<'a> PosteriorEnergy<'a> {
    pub fn new(data: &'a Dataset, hp: &'a PriorHyperparams, fit_cfg: FitConfig, score_cfg: ScoreConfig) -> Self {
        PosteriorEnergy { data, hp, fit_cfg, score_cfg, cache: Mutex::new(HashMap::new()) }
    }

    /// Number of distinct structures scored so far.
    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }
}

impl Energy for PosteriorEnergy<'_> {
    type Info = Arc<Scored>;

    fn energy(&self, tree: &ExprTree) -> Option<(f64, Arc<Scored>)> {
        let sig = tree.signature();
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&sig) {
            return hit.as_ref().map(|s| (s.score.description_length, s.clone()));
        }
        let scored = description_length(tree, self.data, self.hp, &self.fit_cfg, &self.score_cfg)
            .ok()
            .filter(|(_, s)| s.description_length.is_finite())
            .map(|(fit, score)| Arc::new(Scored { fit, score }));
        self.cache.lock().expect("cache lock").insert(sig, scored.clone());
        scored.map(|s| (s.score.description_length, s))
    }
}

/// Energy `-log p(m)`: the prior alone, with the likelihood switched off.
pub struct PriorEnergy<'a> {
    pub hp: &'a PriorHyperparams,
}

impl Energy for PriorEnergy<'_> {
    type Info = ();

    fn energy(&self, tree: &ExprTree) -> Option<(f64, ())> {
        log_prior(tree, self.hp).ok().filter(|l| l.is_finite()).map(|l| (-l, ()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub chain: usize,
    pub beta: f64,
    pub tree: ExprTree,
    pub fit: FitResult,
    pub score: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerTrace {
    pub records: Vec<TraceRecord>,
    pub stats: RunStats,
    /// Distinct structures fitted during the run.
    pub models_scored: usize,
}

/// Samples the posterior over trees for `data`, starting from `th0`.
pub fn sample_posterior(
    data: &Dataset,
    hp: &PriorHyperparams,
    fit_cfg: &FitConfig,
    score_cfg: &ScoreConfig,
    cfg: &SamplerConfig,
) -> Result<SamplerTrace> {
    cfg.validate()?;
    fit_cfg.validate()?;
    hp.check_covers(&cfg.basis)?;
    let energy = PosteriorEnergy::new(data, hp, fit_cfg.clone(), score_cfg.clone());
    let grammar = cfg.grammar(data.n_features());
    let mut records = Vec::new();
    let initial = ExprTree::new(Node::Param(0));
    let stats = run_tempered(&energy, &grammar, cfg, &initial, |step, state| {
        if let Some(s) = &state.info {
            records.push(TraceRecord {
                step,
                chain: 0,
                beta: cfg.betas[0],
                tree: state.tree.clone(),
                fit: s.fit.clone(),
                score: s.score.clone(),
            });
        }
    })?;
    Ok(SamplerTrace { records, stats, models_scored: energy.cache_len() })
}

/// The record of least description length; the earliest wins ties.
pub fn map_model(trace: &SamplerTrace) -> Result<&TraceRecord> {
    map_record(&trace.records)
}

pub fn map_record(records: &[TraceRecord]) -> Result<&TraceRecord> {
    let mut best: Option<&TraceRecord> = None;
    for r in records {
        if best.is_none_or(|b| r.score.description_length < b.score.description_length) {
            best = Some(r);
        }
    }
    best.ok_or(Error::Empty("trace"))
}
