//! Infinite-flow graph, islands, jet interactions `U` and `V`, leaders, and a
//! scan of constant jets.
//!
//! All of these are infinite-time sums. Here they are partial sums over a
//! horizon `T`; "unbounded" is read as "partial sum at least `theta` at `T`",
//! with `(theta, T)` always reported alongside.

use std::collections::VecDeque;

use serde::Serialize;

use crate::absprob::{forward_chain, AbsProbApprox, ForwardChain};
use crate::agents::{proper_subsets_of, AgentSet};
use crate::chain::ChainSpec;
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::properties::CUT_BALANCE_CAP;

/// A time-indexed sequence of agent subsets: `subsets[n]` for `n <= horizon`
/// and `tail` afterwards.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Jet {
    pub subsets: Vec<AgentSet>,
    pub tail: AgentSet,
}

impl Jet {
    /// The jet that is `set` at every step.
    pub fn constant(set: AgentSet) -> Self {
        Jet {
            subsets: Vec::new(),
            tail: set,
        }
    }

    pub fn new(subsets: Vec<AgentSet>, tail: AgentSet) -> Self {
        Jet { subsets, tail }
    }

    pub fn at(&self, step: usize) -> AgentSet {
        self.subsets.get(step).copied().unwrap_or(self.tail)
    }

    /// `M \ J`.
    pub fn complement(&self, n: usize) -> Jet {
        Jet {
            subsets: self.subsets.iter().map(|s| s.complement(n)).collect(),
            tail: self.tail.complement(n),
        }
    }

    /// `J(t) \ other(t)` stepwise.
    pub fn difference(&self, other: &Jet) -> Jet {
        let len = self.subsets.len().max(other.subsets.len());
        Jet {
            subsets: (0..len)
                .map(|t| self.at(t).difference(other.at(t)))
                .collect(),
            tail: self.tail.difference(other.tail),
        }
    }

    /// Nonempty and strictly inside the `n` agents at every step up to `horizon`
    /// and in the tail. Returns the first offending step otherwise.
    pub fn check_proper(&self, n: usize, horizon: usize) -> Result<()> {
        let full = AgentSet::full(n);
        let ok = |s: AgentSet| !s.is_empty() && s != full;
        let last = horizon.max(self.subsets.len());
        match (0..=last).find(|&t| !ok(self.at(t))) {
            Some(step) => Err(Error::ImproperJet { step }),
            None => Ok(()),
        }
    }

    /// The jet-limit: the tail, provided the recorded subsets already ended on it.
    pub fn limit(&self) -> Option<AgentSet> {
        match self.subsets.last() {
            Some(&s) if s != self.tail => None,
            _ => Some(self.tail),
        }
    }
}

/// Cumulative symmetric weights `W_ij(T) = sum_{n<T} (A_ij(n) + A_ji(n))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowGraph {
    pub n: usize,
    pub horizon: usize,
    /// Row-major, symmetric, zero diagonal.
    pub weights: Vec<f64>,
}

impl FlowGraph {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Connected components of `{(i, j) : W_ij >= theta}`, sorted by smallest member.
    pub fn components(&self, theta: f64) -> Vec<AgentSet> {
        let n = self.n;
        let mut seen = AgentSet::EMPTY;
        let mut blocks = Vec::new();
        for start in 0..n {
            if seen.contains(start) {
                continue;
            }
            let mut block = AgentSet::singleton(start);
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for j in 0..n {
                    if j != i && !block.contains(j) && self.weight(i, j) >= theta {
                        block.insert(j);
                        queue.push_back(j);
                    }
                }
            }
            seen = seen.union(block);
            blocks.push(block);
        }
        blocks
    }
}

fn require_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        Err(Error::InvalidParameter {
            name: "horizon",
            reason: "must be at least 1".into(),
        })
    } else {
        Ok(())
    }
}

pub fn flow_graph(spec: &ChainSpec, horizon: usize) -> Result<FlowGraph> {
    require_horizon(horizon)?;
    let n = spec.n();
    let mut weights = vec![0.0; n * n];
    for step in 0..horizon {
        let a = spec.matrix_at(step);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    weights[i * n + j] += a.get(i, j) + a.get(j, i);
                }
            }
        }
    }
    Ok(FlowGraph {
        n,
        horizon,
        weights,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IslandPartition {
    pub blocks: Vec<AgentSet>,
    pub theta: f64,
    pub horizon: usize,
}

pub fn islands(spec: &ChainSpec, horizon: usize, theta: f64) -> Result<IslandPartition> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must be positive, got {theta}"),
        });
    }
    let g = flow_graph(spec, horizon)?;
    Ok(IslandPartition {
        blocks: g.components(theta),
        theta,
        horizon,
    })
}

fn disjoint_at(step: usize, a: AgentSet, b: AgentSet) -> Result<()> {
    let overlap = a.intersection(b);
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::JetsOverlap { step, overlap })
    }
}

fn interaction(
    a: &StochasticMatrix,
    js_now: AgentSet,
    js_next: AgentSet,
    jk_now: AgentSet,
    jk_next: AgentSet,
) -> f64 {
    a.block_sum(js_next, jk_now) + a.block_sum(jk_next, js_now)
}

/// `U_n(Js, Jk) = sum_{i in Js(n+1), j in Jk(n)} A_ij + sum_{i in Jk(n+1), j in Js(n)} A_ij`.
pub fn jet_interaction_step(
    a: &StochasticMatrix,
    js_now: AgentSet,
    js_next: AgentSet,
    jk_now: AgentSet,
    jk_next: AgentSet,
) -> Result<f64> {
    disjoint_at(0, js_now, jk_now)?;
    disjoint_at(1, js_next, jk_next)?;
    Ok(interaction(a, js_now, js_next, jk_now, jk_next))
}

fn check_disjoint_jets(js: &Jet, jk: &Jet, horizon: usize) -> Result<()> {
    let last = horizon.max(js.subsets.len()).max(jk.subsets.len());
    for t in 0..=last {
        disjoint_at(t, js.at(t), jk.at(t))?;
    }
    Ok(())
}

/// Partial sums `U^(t) = sum_{n<t} U_n(Js, Jk)` for `t = 1..=horizon`.
pub fn jet_interaction_total(
    spec: &ChainSpec,
    js: &Jet,
    jk: &Jet,
    horizon: usize,
) -> Result<Vec<f64>> {
    check_disjoint_jets(js, jk, horizon)?;
    let mut acc = 0.0;
    Ok((0..horizon)
        .map(|t| {
            acc += interaction(
                &spec.matrix_at(t),
                js.at(t),
                js.at(t + 1),
                jk.at(t),
                jk.at(t + 1),
            );
            acc
        })
        .collect())
}

/// Partial sums of `V(Js, Jk)` with `r_ij(n)` from the forward chain induced by `pi`.
pub fn jet_v_total(
    spec: &ChainSpec,
    pi: &AbsProbApprox,
    js: &Jet,
    jk: &Jet,
    horizon: usize,
) -> Result<Vec<f64>> {
    let fc = forward_chain(spec, pi)?;
    jet_v_total_with(&fc, js, jk, horizon)
}

/// As [`jet_v_total`], reusing an already built forward chain.
pub fn jet_v_total_with(fc: &ForwardChain, js: &Jet, jk: &Jet, horizon: usize) -> Result<Vec<f64>> {
    if horizon > fc.matrices.len() {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: format!(
                "absolute probabilities cover {} steps, {horizon} requested",
                fc.matrices.len()
            ),
        });
    }
    check_disjoint_jets(js, jk, horizon)?;
    let block = |t: usize, from: AgentSet, to: AgentSet| -> f64 {
        from.iter()
            .map(|i| to.iter().map(|j| fc.r(t, i, j)).sum::<f64>())
            .sum()
    };
    let mut acc = 0.0;
    Ok((0..horizon)
        .map(|t| {
            acc += block(t, jk.at(t), js.at(t + 1)) + block(t, js.at(t), jk.at(t + 1));
            acc
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeaderReport {
    /// `L^(t)` for `t = 1..=horizon`.
    pub influence: Vec<f64>,
    pub budget: f64,
    /// `L^(horizon) <= budget`.
    pub leader: bool,
}

/// Influence of `M \ J` on `J`: `L^(t) = sum_{n<t} sum_{i in J(n+1), j not in J(n)} A_ij(n)`.
pub fn is_leader(spec: &ChainSpec, jet: &Jet, horizon: usize, budget: f64) -> Result<LeaderReport> {
    let n = spec.n();
    jet.check_proper(n, horizon)?;
    let mut acc = 0.0;
    let influence: Vec<f64> = (0..horizon)
        .map(|t| {
            acc += spec
                .matrix_at(t)
                .block_sum(jet.at(t + 1), jet.at(t).complement(n));
            acc
        })
        .collect();
    let total = influence.last().copied().unwrap_or(0.0);
    Ok(LeaderReport {
        influence,
        budget,
        leader: total <= budget,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JetScanReport {
    pub universe: AgentSet,
    pub horizon: usize,
    /// Number of constant subsets evaluated (each subset together with its
    /// complement in the universe counts once).
    pub evaluated: usize,
    /// Smallest `U^_S(T)` over proper constant subsets, `None` when the
    /// universe has a single member.
    pub min_value: Option<f64>,
    pub witness: Option<AgentSet>,
}

/// For every constant proper subset `S` of `within` (default: all agents),
/// the partial sum `U^(S, within \ S)` at the horizon; reports the minimum.
pub fn static_jet_flow_scan(
    spec: &ChainSpec,
    horizon: usize,
    within: Option<AgentSet>,
) -> Result<JetScanReport> {
    require_horizon(horizon)?;
    let n = spec.n();
    let universe = within.unwrap_or(AgentSet::full(n));
    if !universe.is_subset(AgentSet::full(n)) {
        return Err(Error::InvalidParameter {
            name: "within",
            reason: format!("{universe} is not a set of agents of a {n}-agent chain"),
        });
    }
    if universe.len() > CUT_BALANCE_CAP {
        return Err(Error::SizeBudget {
            n: universe.len(),
            cap: CUT_BALANCE_CAP,
        });
    }
    let mut cumulative = vec![0.0; n * n];
    for t in 0..horizon {
        let a = spec.matrix_at(t);
        for (c, x) in cumulative.iter_mut().zip(a.as_flat()) {
            *c += x;
        }
    }
    let anchor = universe.first();
    let mut best: Option<(f64, AgentSet)> = None;
    let mut evaluated = 0;
    for s in proper_subsets_of(universe).filter(|s| anchor.is_some_and(|a| s.contains(a))) {
        let rest = universe.difference(s);
        let value: f64 = s
            .iter()
            .map(|i| {
                rest.iter()
                    .map(|j| cumulative[i * n + j] + cumulative[j * n + i])
                    .sum::<f64>()
            })
            .sum();
        evaluated += 1;
        if best.is_none_or(|(v, _)| value < v) {
            best = Some((value, s));
        }
    }
    Ok(JetScanReport {
        universe,
        horizon,
        evaluated,
        min_value: best.map(|b| b.0),
        witness: best.map(|b| b.1),
    })
}
