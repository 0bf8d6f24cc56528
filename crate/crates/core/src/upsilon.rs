//! Ensembles of machine environments and the prior-weighted score over them.

use std::collections::HashMap;
use std::ops::ControlFlow;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentSpec};
use crate::environments::EnvSpec;
use crate::interaction::SpaceConfig;
use crate::machine::bits::BitString;
use crate::machine::complexity::{
    behavior_signature, kraft_sum, prior_weight, reference_steps, SignatureError, DEFAULT_SIGNATURE_NODE_CAP,
};
use crate::machine::program::{decode_program, enumerate_programs, EnvProgram, OpcodeTable, OPCODE_BITS};
use crate::machine::vm::MachineConfig;
use crate::seeding::{stream, BOOTSTRAP_STREAM, MIXTURE_STREAM, PERMUTATION_STREAM, SAMPLING_STREAM};
use crate::stats::{mean_half_width, quantile_sorted, CompensatedSum};
use crate::valuation::{estimate_value, rollout, ValuationError, ValuationMode, ValuationParams, ValueEstimate};

pub const DEFAULT_MAX_LENGTH_BITS: u32 = 24;
pub const DEFAULT_DEDUP_HORIZON: u32 = 8;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Dedup {
    None,
    /// Merge programs with equal behaviour signatures at this horizon.
    Signature { horizon: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    /// `2^-|p|`
    Length,
    /// `2^-(|p| + log2 steps)`
    Kt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub max_length_bits: u32,
    pub dedup: Dedup,
    pub weight_scheme: WeightScheme,
    pub renormalize: bool,
    /// Draw this many programs from the prior instead of enumerating.
    pub sample_size: Option<u64>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            max_length_bits: DEFAULT_MAX_LENGTH_BITS,
            dedup: Dedup::Signature { horizon: DEFAULT_DEDUP_HORIZON },
            weight_scheme: WeightScheme::Length,
            renormalize: true,
            sample_size: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UpsilonError {
    #[error("no valid program has at most {0} bits")]
    EmptyEnsemble(u32),
    #[error("invalid ensemble: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Signature(#[from] SignatureError),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error("need at least {0} entries")]
    TooFew(usize),
}

/// One environment of an ensemble: a representative program and the prior
/// mass of every program merged into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub program: Arc<EnvProgram>,
    /// Programs merged into this member (or times drawn, when sampling).
    pub multiplicity: u64,
    pub raw_weight: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    pub machine: MachineConfig,
    pub space: SpaceConfig,
    pub members: Vec<Member>,
    /// Valid programs considered (enumerated or drawn).
    pub program_count: u64,
    /// `Σ 2^-|p|` over the programs considered, or its sampling estimate.
    pub kraft_sum: f64,
    pub seed: u64,
}

impl Ensemble {
    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|m| m.weight).collect::<CompensatedSum>().value()
    }

    pub fn env_spec(&self, i: usize) -> EnvSpec {
        EnvSpec::Program { program: self.members[i].program.clone(), machine: self.machine, space: self.space }
    }
}

fn kt_factor(p: &EnvProgram, scheme: WeightScheme, cycles: u32, space: SpaceConfig, machine: &MachineConfig) -> f64 {
    match scheme {
        WeightScheme::Length => 1.0,
        WeightScheme::Kt => 1.0 / reference_steps(p, cycles, space, machine).max(1) as f64,
    }
}

/// Draw one program by fair coin flips, or `None` if the flips spell an
/// invalid program or one longer than `max_len`.
fn draw_program<R: Rng>(rng: &mut R, max_len: u32, table: &OpcodeTable) -> Option<EnvProgram> {
    let mut bits = BitString::new();
    let mut zeros = 0u32;
    while !rng.gen::<bool>() {
        zeros += 1;
        bits.push(false);
        if 2 * zeros + 1 > max_len {
            return None;
        }
    }
    bits.push(true);
    let mut value = 1u64;
    for _ in 0..zeros {
        let b = rng.gen::<bool>();
        bits.push(b);
        value = (value << 1) | u64::from(b);
    }
    let n = value - 1;
    let len = u64::from(2 * zeros + 1) + n * u64::from(OPCODE_BITS);
    if len > u64::from(max_len) {
        return None;
    }
    for _ in 0..n * u64::from(OPCODE_BITS) {
        bits.push(rng.gen());
    }
    decode_program(&bits, table).ok()
}

/// Build the weighted environment list.
///
/// Enumeration is shortlex; merged classes keep their shortlex-first program
/// and sum the weights of all their programs.
pub fn build_ensemble(
    spec: &EnsembleSpec,
    machine: &MachineConfig,
    space: SpaceConfig,
    seed: u64,
) -> Result<Ensemble, UpsilonError> {
    if spec.max_length_bits == 0 {
        return Err(UpsilonError::InvalidSpec("max_length_bits must be at least 1".into()));
    }
    if spec.sample_size == Some(0) {
        return Err(UpsilonError::InvalidSpec("sample_size must be at least 1".into()));
    }
    if let Dedup::Signature { horizon: 0 } = spec.dedup {
        return Err(UpsilonError::InvalidSpec("dedup horizon must be at least 1".into()));
    }
    let kt_cycles = match spec.dedup {
        Dedup::Signature { horizon } => horizon,
        Dedup::None => DEFAULT_DEDUP_HORIZON,
    };
    let table = machine.opcode_table;
    // (program, multiplicity, raw weight) before merging
    let (candidates, program_count, kraft): (Vec<(EnvProgram, u64, f64)>, u64, f64) = match spec.sample_size {
        None => {
            let programs = enumerate_programs(spec.max_length_bits, &table);
            let kraft = kraft_sum(&programs).to_f64();
            let count = programs.len() as u64;
            let weighted = programs
                .into_par_iter()
                .map(|p| {
                    let w = prior_weight(&p).to_f64() * kt_factor(&p, spec.weight_scheme, kt_cycles, space, machine);
                    (p, 1, w)
                })
                .collect();
            (weighted, count, kraft)
        }
        Some(n) => {
            let mut rng = stream(seed, &[SAMPLING_STREAM]);
            let mut counts: HashMap<BitString, u64> = HashMap::new();
            let mut order = Vec::new();
            let mut accepted = 0u64;
            let mut draws = 0u64;
            // cap the attempts so tiny valid sets cannot loop forever
            while accepted < n && draws < n.saturating_mul(1000) {
                draws += 1;
                if let Some(p) = draw_program(&mut rng, spec.max_length_bits, &table) {
                    accepted += 1;
                    let c = counts.entry(p.bits().clone()).or_insert(0);
                    if *c == 0 {
                        order.push(p);
                    }
                    *c += 1;
                }
            }
            let weighted = order
                .into_iter()
                .map(|p| {
                    let c = counts[p.bits()];
                    let w = c as f64 / draws as f64 * kt_factor(&p, spec.weight_scheme, kt_cycles, space, machine);
                    (p, c, w)
                })
                .collect();
            (weighted, accepted, accepted as f64 / draws.max(1) as f64)
        }
    };
    if candidates.is_empty() {
        return Err(UpsilonError::EmptyEnsemble(spec.max_length_bits));
    }
    let mut members: Vec<Member> = match spec.dedup {
        Dedup::None => candidates
            .into_iter()
            .map(|(p, c, w)| Member { program: Arc::new(p), multiplicity: c, raw_weight: w, weight: w })
            .collect(),
        Dedup::Signature { horizon } => {
            let sigs: Vec<Vec<u8>> = candidates
                .par_iter()
                .map(|(p, _, _)| behavior_signature(p, horizon, space, machine, DEFAULT_SIGNATURE_NODE_CAP))
                .collect::<Result<_, _>>()?;
            let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
            let mut out: Vec<(Member, CompensatedSum)> = Vec::new();
            for ((p, c, w), sig) in candidates.into_iter().zip(sigs) {
                match index.get(&sig) {
                    Some(&i) => {
                        out[i].0.multiplicity += c;
                        out[i].1.add(w);
                    }
                    None => {
                        index.insert(sig, out.len());
                        let m = Member { program: Arc::new(p), multiplicity: c, raw_weight: 0.0, weight: 0.0 };
                        out.push((m, std::iter::once(w).collect()));
                    }
                }
            }
            out.into_iter()
                .map(|(m, s)| Member { raw_weight: s.value(), weight: s.value(), ..m })
                .collect()
        }
    };
    if spec.renormalize {
        let total: f64 = members.iter().map(|m| m.raw_weight).collect::<CompensatedSum>().value();
        if total > 0.0 {
            for m in &mut members {
                m.weight = m.raw_weight / total;
            }
        }
    }
    Ok(Ensemble { spec: *spec, machine: *machine, space, members, program_count, kraft_sum: kraft, seed })
}

/// One environment's contribution for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRow {
    pub program_id: String,
    pub program: String,
    pub length_bits: u32,
    pub weight: f64,
    pub estimate: ValueEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsilonEstimate {
    pub agent: String,
    pub upsilon: f64,
    pub ci_half_width: f64,
    pub rows: Vec<EnvRow>,
    pub episodes_failed: u64,
    pub timeouts: u64,
    /// Per environment, per episode values (`None` for failed episodes).
    pub episode_values: Vec<Vec<Option<f64>>>,
}

fn env_id(p: &EnvProgram) -> u64 {
    p.id()
}

/// `Υ̂ = Σ w V̂`, with the interval propagated as `sqrt(Σ w² h²)` over
/// independent per-environment half widths.
pub fn estimate_upsilon(
    agent: &AgentSpec,
    ensemble: &Ensemble,
    params: &ValuationParams,
) -> Result<UpsilonEstimate, UpsilonError> {
    let runs = (0..ensemble.members.len())
        .into_par_iter()
        .map(|i| {
            let m = &ensemble.members[i];
            estimate_value(agent, &ensemble.env_spec(i), params, env_id(&m.program))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut ups = CompensatedSum::default();
    let mut var = CompensatedSum::default();
    let mut rows = Vec::with_capacity(runs.len());
    let (mut failed, mut timeouts) = (0, 0);
    for (m, run) in ensemble.members.iter().zip(&runs) {
        let e = run.estimate;
        ups.add(m.weight * e.mean);
        var.add((m.weight * e.ci_half_width).powi(2));
        failed += e.episodes_failed;
        timeouts += e.timeouts;
        rows.push(EnvRow {
            program_id: m.program.label(),
            program: m.program.mnemonics(),
            length_bits: m.program.length_bits(),
            weight: m.weight,
            estimate: e,
        });
    }
    Ok(UpsilonEstimate {
        agent: agent.to_string(),
        upsilon: ups.value(),
        ci_half_width: var.value().max(0.0).sqrt(),
        rows,
        episodes_failed: failed,
        timeouts,
        episode_values: runs.into_iter().map(|r| r.episode_values).collect(),
    })
}

/// The mixture form: each episode first draws an environment from the
/// ensemble weights, then rolls it out once. Returns mean and half width.
pub fn estimate_mixture(
    agent: &AgentSpec,
    ensemble: &Ensemble,
    params: &ValuationParams,
    episodes: u64,
) -> Result<(f64, f64), UpsilonError> {
    params.validate()?;
    let total = ensemble.total_weight();
    let cumulative: Vec<f64> = ensemble
        .members
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m.weight / total;
            Some(*acc)
        })
        .collect();
    let values = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(params.seed, &[MIXTURE_STREAM, i]);
            let u: f64 = rng.gen();
            let j = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let env = ensemble.env_spec(j);
            let mut e = env.spawn(stream(params.seed, &[MIXTURE_STREAM, i, 1]));
            let mut a = agent.spawn(env.space())?;
            let mut agent_rng = stream(params.seed, &[MIXTURE_STREAM, i, 2]);
            let d = f64::from(env.space().reward_denominator);
            let stop_below = params.truncation_epsilon * d;
            let r = rollout(&mut *e, &mut *a, &mut agent_rng, params.horizon, i, |_, _, env| {
                let low = env.remaining_budget().is_some_and(|b| f64::from(b) < stop_below);
                if env.halted() || low {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?;
            Ok::<f64, AgentError>(r.total_reward as f64 / d * total)
        })
        .collect::<Vec<_>>();
    let ok: Vec<f64> = values.into_iter().filter_map(Result::ok).collect();
    if ok.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mean = ok.iter().copied().collect::<CompensatedSum>().value() / ok.len() as f64;
    Ok((mean, mean_half_width(&ok, params.confidence)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub first: String,
    pub second: String,
    /// Weighted mean of `V(first) - V(second)`.
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// The interval excludes zero.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub estimates: Vec<UpsilonEstimate>,
    pub pairs: Vec<PairComparison>,
}

/// Episode-paired differences of two agents per environment. Episodes with
/// the same index share the environment stream, so pairing removes the
/// environment's own randomness from the difference.
fn paired_differences(a: &UpsilonEstimate, b: &UpsilonEstimate) -> Vec<Vec<f64>> {
    a.episode_values
        .iter()
        .zip(&b.episode_values)
        .map(|(x, y)| x.iter().zip(y).filter_map(|(u, v)| Some((*u)? - (*v)?)).collect())
        .collect()
}

/// Stratified bootstrap of the weighted mean difference: episodes are
/// resampled with replacement inside each environment.
pub fn bootstrap_difference(
    weights: &[f64],
    diffs: &[Vec<f64>],
    resamples: u32,
    confidence: f64,
    seed: u64,
    pair_index: u64,
) -> (f64, f64, f64) {
    let means: Vec<f64> = diffs.iter().map(|d| if d.is_empty() { 0.0 } else { crate::stats::mean(d) }).collect();
    let point: f64 = weights.iter().zip(&means).map(|(w, m)| w * m).collect::<CompensatedSum>().value();
    // environments whose differences never vary contribute a constant
    let varying: Vec<usize> = (0..diffs.len()).filter(|&j| diffs[j].iter().any(|&x| x != diffs[j][0])).collect();
    let fixed: f64 = (0..diffs.len())
        .filter(|j| !varying.contains(j))
        .map(|j| weights[j] * means[j])
        .collect::<CompensatedSum>()
        .value();
    let mut stats: Vec<f64> = (0..u64::from(resamples))
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, &[BOOTSTRAP_STREAM, pair_index, b]);
            let mut acc = CompensatedSum::default();
            acc.add(fixed);
            for &j in &varying {
                let d = &diffs[j];
                let s: f64 = (0..d.len()).map(|_| d[rng.gen_range(0..d.len())]).sum();
                acc.add(weights[j] * s / d.len() as f64);
            }
            acc.value()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    if stats.is_empty() {
        return (point, point, point);
    }
    let alpha = 1.0 - confidence;
    (point, quantile_sorted(&stats, alpha / 2.0), quantile_sorted(&stats, 1.0 - alpha / 2.0))
}

/// Estimate every agent and compare every pair, first agent minus second.
pub fn compare_agents(
    agents: &[AgentSpec],
    ensemble: &Ensemble,
    params: &ValuationParams,
    resamples: u32,
) -> Result<Comparison, UpsilonError> {
    if agents.len() < 2 {
        return Err(UpsilonError::TooFew(2));
    }
    let estimates = agents
        .iter()
        .map(|a| estimate_upsilon(a, ensemble, params))
        .collect::<Result<Vec<_>, _>>()?;
    let weights: Vec<f64> = ensemble.members.iter().map(|m| m.weight).collect();
    Ok(Comparison { pairs: pairwise(&estimates, &weights, params, resamples), estimates })
}

/// Compare every pair of `estimates`, which must cover the same
/// environments with the given weights.
pub fn pairwise(
    estimates: &[UpsilonEstimate],
    weights: &[f64],
    params: &ValuationParams,
    resamples: u32,
) -> Vec<PairComparison> {
    let mut pairs = Vec::new();
    let mut k = 0;
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            let diffs = paired_differences(&estimates[i], &estimates[j]);
            let (d, lo, hi) = bootstrap_difference(weights, &diffs, resamples, params.confidence, params.seed, k);
            pairs.push(PairComparison {
                first: estimates[i].agent.clone(),
                second: estimates[j].agent.clone(),
                difference: d,
                ci_low: lo,
                ci_high: hi,
                significant: lo > 0.0 || hi < 0.0,
            });
            k += 1;
        }
    }
    pairs
}

/// The identity table followed by `count - 1` seeded shuffles.
pub fn opcode_permutations(count: usize, seed: u64) -> Vec<OpcodeTable> {
    (0..count)
        .map(|i| {
            if i == 0 {
                OpcodeTable::canonical()
            } else {
                OpcodeTable::shuffled(&mut stream(seed, &[PERMUTATION_STREAM, i as u64]))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineScore {
    pub agent: String,
    pub upsilon: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineRow {
    pub opcode_table: String,
    pub environments: usize,
    pub scores: Vec<MachineScore>,
    /// Agents from highest to lowest score.
    pub ordering: Vec<String>,
    /// Whether `ordering` equals the first machine's.
    pub ordering_preserved: bool,
}

fn ordering(scores: &[MachineScore]) -> Vec<String> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].upsilon.total_cmp(&scores[a].upsilon).then(a.cmp(&b)));
    idx.into_iter().map(|i| scores[i].agent.clone()).collect()
}

/// Score every agent on the ensemble each machine induces.
pub fn machine_sensitivity(
    agents: &[AgentSpec],
    spec: &EnsembleSpec,
    machines: &[MachineConfig],
    space: SpaceConfig,
    params: &ValuationParams,
) -> Result<Vec<MachineRow>, UpsilonError> {
    if machines.len() < 2 {
        return Err(UpsilonError::TooFew(2));
    }
    let mut rows: Vec<MachineRow> = Vec::new();
    for m in machines {
        let ens = build_ensemble(spec, m, space, params.seed)?;
        let scores = agents
            .iter()
            .map(|a| {
                estimate_upsilon(a, &ens, params).map(|u| MachineScore {
                    agent: u.agent,
                    upsilon: u.upsilon,
                    ci_half_width: u.ci_half_width,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let order = ordering(&scores);
        let preserved = rows.first().is_none_or(|r| r.ordering == order);
        rows.push(MachineRow {
            opcode_table: m.opcode_table.to_string(),
            environments: ens.members.len(),
            scores,
            ordering: order,
            ordering_preserved: preserved,
        });
    }
    Ok(rows)
}

/// The standard summable valuation parameters.
pub fn summable_params(seed: u64) -> ValuationParams {
    ValuationParams::new(ValuationMode::Summable, seed)
}
