//! Finite-horizon verdicts: ergodic classes from backward products, a
//! consensus classification, a probe-based jet decomposition, and sorted-state
//! convergence.
//!
//! Every verdict is a finite-data reading of an asymptotic notion, so each
//! one carries its residuals and may come out `Inconclusive`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::absprob::{backward_abs_prob, forward_chain, ForwardChain};
use crate::agents::AgentSet;
use crate::chain::{
    backward_product, simulate, BackwardProducts, ChainKind, ChainSpec, StateVector, TailPolicy,
    TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::flow::{islands, jet_interaction_total, jet_v_total_with, IslandPartition, Jet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Ergodic,
    ClassErgodic,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterReport {
    /// Sorted by smallest member. Together with `J^0` they partition the agents.
    pub clusters: Vec<AgentSet>,
    /// `limits[k][p]`: value of cluster `k` under probe `p`.
    pub limits: Vec<Vec<f64>>,
    /// Absolute-probability mass of each cluster; the deficit from 1 is the mass of `J^0`.
    pub masses: Vec<f64>,
    /// Largest within-cluster disagreement at the horizon.
    pub residual: f64,
}

/// Partial sums of `U` and `V` between two jets of a decomposition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossFlow {
    /// Indices into `DecompositionReport::jets`.
    pub pair: (usize, usize),
    pub u_total: f64,
    pub v_total: f64,
    /// `V^(T/2)`.
    pub v_first_half: f64,
    /// `V^(T) - V^(T/2)`.
    pub v_second_half: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionReport {
    pub horizon: usize,
    pub eps: f64,
    /// `jets[0]` is `J^0`; `jets[1..=c]` are the value clusters.
    pub jets: Vec<Jet>,
    pub c: usize,
    pub cross_flows: Vec<CrossFlow>,
    pub verdict: Verdict,
    /// Largest change over the trailing quarter (product rows or probe states).
    pub cauchy_residual: f64,
    pub islands: Option<IslandPartition>,
    pub islands_agree: Option<bool>,
    pub warnings: Vec<String>,
}

impl DecompositionReport {
    /// `J^1(T), .., J^c(T)`.
    pub fn clusters_at_horizon(&self) -> Vec<AgentSet> {
        self.jets[1..].iter().map(|j| j.at(self.horizon)).collect()
    }
}

fn require_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("must be positive and finite, got {eps}"),
        })
    }
}

/// Components of the relation `close` on `0..n`, sorted by smallest member.
fn closure(n: usize, close: impl Fn(usize, usize) -> bool) -> Vec<AgentSet> {
    let mut seen = AgentSet::EMPTY;
    let mut out = Vec::new();
    for start in 0..n {
        if seen.contains(start) {
            continue;
        }
        let mut block = AgentSet::singleton(start);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !block.contains(j) && !seen.contains(j) && close(i, j) {
                    block.insert(j);
                    stack.push(j);
                }
            }
        }
        seen = seen.union(block);
        out.push(block);
    }
    out
}

fn row_distance(rows: &[f64], n: usize, i: usize, j: usize) -> f64 {
    (0..n)
        .map(|c| (rows[i * n + c] - rows[j * n + c]).abs())
        .fold(0.0, f64::max)
}

/// Generator chains are sampled once up to `steps`; every later pass reads
/// the stored matrices. Other kinds are already cheap to index.
fn materialize(spec: &ChainSpec, steps: usize) -> Result<ChainSpec> {
    match spec.kind() {
        ChainKind::Generator(_) => {
            ChainSpec::explicit(spec.realize(0, steps), TailPolicy::RepeatLast)
        }
        _ => Ok(spec.clone()),
    }
}

fn window_start(horizon: usize) -> usize {
    horizon - horizon / 4
}

/// Group agents whose rows of `A(T) .. A(n0)` agree within `eps`.
pub fn ergodic_classes(
    spec: &ChainSpec,
    horizon: usize,
    eps: f64,
    n0: usize,
) -> Result<ClusterReport> {
    require_eps(eps)?;
    if horizon <= n0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: format!("must exceed the start step {n0}, got {horizon}"),
        });
    }
    let n = spec.n();
    let prod = backward_product(spec, n0, horizon)?;
    let rows = prod.as_flat();
    let clusters = closure(n, |i, j| row_distance(rows, n, i, j) <= eps);
    let probe: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let values = prod.apply(&probe)?;
    let limits = clusters
        .iter()
        .map(|c| vec![c.iter().map(|i| values[i]).sum::<f64>() / c.len() as f64])
        .collect();
    let pi = backward_abs_prob(spec, horizon + 1, &vec![1.0 / n as f64; n])?;
    let masses = clusters.iter().map(|&c| pi.mass(n0, c)).collect();
    let residual = clusters
        .iter()
        .flat_map(|c| c.iter().flat_map(move |i| c.iter().map(move |j| (i, j))))
        .map(|(i, j)| row_distance(rows, n, i, j))
        .fold(0.0, f64::max);
    Ok(ClusterReport {
        clusters,
        limits,
        masses,
        residual,
    })
}

fn cross_flows(
    spec: &ChainSpec,
    fc: &ForwardChain,
    jets: &[Jet],
    horizon: usize,
) -> Result<Vec<CrossFlow>> {
    let mut out = Vec::new();
    for k in 0..jets.len() {
        for s in k + 1..jets.len() {
            let u = jet_interaction_total(spec, &jets[k], &jets[s], horizon)?;
            let v = jet_v_total_with(fc, &jets[k], &jets[s], horizon)?;
            let v_total = v.last().copied().unwrap_or(0.0);
            let v_first_half = if horizon >= 2 {
                v[horizon / 2 - 1]
            } else {
                0.0
            };
            out.push(CrossFlow {
                pair: (k, s),
                u_total: u.last().copied().unwrap_or(0.0),
                v_total,
                v_first_half,
                v_second_half: v_total - v_first_half,
            });
        }
    }
    Ok(out)
}

/// Cauchy test on `A(t) .. A(0)` over the trailing quarter, ergodic classes
/// at the horizon, and a cross-check against islands at `theta`.
pub fn classify(
    spec: &ChainSpec,
    horizon: usize,
    eps: f64,
    theta: f64,
) -> Result<DecompositionReport> {
    require_eps(eps)?;
    if horizon < 2 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: format!("needs at least 2 steps, got {horizon}"),
        });
    }
    let spec = &materialize(spec, horizon + 2)?;
    let n = spec.n();
    let start = window_start(horizon);
    let mut window = Vec::with_capacity(horizon - start + 1);
    for (t, prod) in BackwardProducts::new(spec, 0).take(horizon + 1).enumerate() {
        let prod = prod?;
        if t >= start {
            window.push(prod);
        }
    }
    let last = window.last().expect("window contains the horizon");
    let row_change = |i: usize| {
        window
            .iter()
            .flat_map(|p| (0..n).map(move |c| (p.get(i, c) - last.get(i, c)).abs()))
            .fold(0.0, f64::max)
    };
    let changes: Vec<f64> = (0..n).map(row_change).collect();
    let cauchy_residual = changes.iter().copied().fold(0.0, f64::max);
    let unsettled: AgentSet = (0..n).filter(|&i| changes[i] > eps).collect();

    let classes = ergodic_classes(spec, horizon, eps, 0)?;
    let mut warnings = Vec::new();
    if classes.residual > eps {
        warnings.push(format!(
            "class diameter {:e} exceeds eps through chaining",
            classes.residual
        ));
    }
    let verdict = match (unsettled.is_empty(), classes.clusters.len()) {
        (true, 1) => Verdict::Ergodic,
        (true, _) => Verdict::ClassErgodic,
        (false, _) => Verdict::Inconclusive,
    };
    if verdict == Verdict::Inconclusive {
        warnings.push(format!(
            "product rows of {unsettled} still move by up to {cauchy_residual:e} over the last {} steps",
            horizon - start
        ));
    }

    let isl = islands(spec, horizon, theta)?;
    let agree = isl.blocks == classes.clusters;
    if !agree {
        warnings.push(format!(
            "ergodic classes {:?} differ from islands {:?} at theta {theta}",
            classes.clusters, isl.blocks
        ));
    }

    let mut jets = vec![Jet::constant(unsettled)];
    jets.extend(
        classes
            .clusters
            .iter()
            .map(|c| c.difference(unsettled))
            .filter(|c| !c.is_empty())
            .map(Jet::constant),
    );
    let pi = backward_abs_prob(spec, horizon, &vec![1.0 / n as f64; n])?;
    let fc = forward_chain(spec, &pi)?;
    let cross_flows = cross_flows(spec, &fc, &jets, horizon)?;
    Ok(DecompositionReport {
        horizon,
        eps,
        c: jets.len() - 1,
        jets,
        cross_flows,
        verdict,
        cauchy_residual,
        islands: Some(isl),
        islands_agree: Some(agree),
        warnings,
    })
}

fn probe_states(n: usize, probes: usize, seed: u64) -> Vec<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..probes)
        .map(|p| {
            if p < n {
                StateVector::unit(n, p)
            } else {
                StateVector::new((0..n).map(|_| rng.gen::<f64>()).collect()).expect("finite probe")
            }
        })
        .collect()
}

/// Probe-based jet decomposition. Returns the decomposition together with
/// the terminal value clusters.
pub fn ds_decompose(
    spec: &ChainSpec,
    horizon: usize,
    eps: f64,
    probes: usize,
    seed: u64,
) -> Result<(DecompositionReport, ClusterReport)> {
    require_eps(eps)?;
    let n = spec.n();
    if probes < n {
        return Err(Error::InvalidParameter {
            name: "probes",
            reason: format!("needs at least one probe per agent ({n}), got {probes}"),
        });
    }
    if horizon < 2 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: format!("needs at least 2 steps, got {horizon}"),
        });
    }
    let spec = &materialize(spec, 2 * horizon + 1)?;
    let trajectories: Vec<TrajectoryRecord> = probe_states(n, probes, seed)
        .iter()
        .map(|x0| simulate(spec, x0, horizon))
        .collect::<Result<_>>()?;
    let scales: Vec<f64> = trajectories.iter().map(|t| t.spread[0].max(1.0)).collect();
    // Probe-scaled distance, so the cluster gap is `eps` in every probe.
    let value = |p: usize, step: usize, i: usize| trajectories[p].states[step][i];
    let distance = |step: usize, i: usize, target: &dyn Fn(usize) -> f64| {
        (0..probes)
            .map(|p| (value(p, step, i) - target(p)).abs() / scales[p])
            .fold(0.0, f64::max)
    };

    let terminal = closure(n, |i, j| {
        distance(horizon, i, &|p| value(p, horizon, j)) <= eps
    });
    let centres: Vec<Vec<f64>> = terminal
        .iter()
        .map(|c| {
            (0..probes)
                .map(|p| c.iter().map(|i| value(p, horizon, i)).sum::<f64>() / c.len() as f64)
                .collect()
        })
        .collect();
    let nearest = |step: usize, i: usize| {
        let mut best = (f64::INFINITY, 0);
        for (k, centre) in centres.iter().enumerate() {
            let d = distance(step, i, &|p| centre[p]);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    };
    let assignment: Vec<Vec<usize>> = (0..=horizon)
        .map(|step| (0..n).map(|i| nearest(step, i)).collect())
        .collect();

    let start = window_start(horizon);
    let drift = |i: usize| {
        (start..=horizon)
            .flat_map(|step| (0..probes).map(move |p| (step, p)))
            .map(|(step, p)| (value(p, step, i) - value(p, horizon, i)).abs() / scales[p])
            .fold(0.0, f64::max)
    };
    let drifts: Vec<f64> = (0..n).map(drift).collect();
    let cauchy_residual = drifts.iter().copied().fold(0.0, f64::max);
    let j0: AgentSet = (0..n)
        .filter(|&i| {
            drifts[i] > eps
                || (start..=horizon).any(|step| assignment[step][i] != assignment[horizon][i])
        })
        .collect();

    let c = terminal.len();
    let mut jets = vec![Jet::constant(j0)];
    for k in 0..c {
        let subsets: Vec<AgentSet> = (0..=horizon)
            .map(|step| {
                (0..n)
                    .filter(|&i| assignment[step][i] == k)
                    .collect::<AgentSet>()
                    .difference(j0)
            })
            .collect();
        let tail = subsets[horizon];
        jets.push(Jet::new(subsets, tail));
    }

    let pi = backward_abs_prob(spec, 2 * horizon, &vec![1.0 / n as f64; n])?;
    let masses: Vec<f64> = jets[1..]
        .iter()
        .map(|j| pi.mass(horizon, j.at(horizon)))
        .collect();
    let fc = forward_chain(spec, &pi)?;
    let cross_flows = cross_flows(spec, &fc, &jets, horizon)?;

    let residual = terminal
        .iter()
        .flat_map(|c| c.iter().flat_map(move |i| c.iter().map(move |j| (i, j))))
        .map(|(i, j)| distance(horizon, i, &|p| value(p, horizon, j)))
        .fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if residual > eps {
        warnings.push(format!(
            "cluster diameter {residual:e} exceeds eps through chaining"
        ));
    }
    let empty_clusters = jets[1..]
        .iter()
        .filter(|j| j.at(horizon).is_empty())
        .count();
    if empty_clusters > 0 {
        warnings.push(format!(
            "{empty_clusters} value clusters consist only of J^0 agents"
        ));
    }
    let verdict = match (j0.is_empty(), c) {
        (true, 1) => Verdict::Ergodic,
        (true, _) => Verdict::ClassErgodic,
        (false, _) => Verdict::Inconclusive,
    };
    let report = DecompositionReport {
        horizon,
        eps,
        jets,
        c,
        cross_flows,
        verdict,
        cauchy_residual,
        islands: None,
        islands_agree: None,
        warnings,
    };
    let clusters = ClusterReport {
        clusters: terminal,
        limits: centres,
        masses,
        residual,
    };
    Ok((report, clusters))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SortedConvergenceReport {
    pub eps: f64,
    /// `max_{n >= 3T/4} |z_i(n) - z_i(T)|` per rank `i`.
    pub oscillation: Vec<f64>,
    pub max_oscillation: f64,
    pub passes: bool,
}

/// Tail oscillation of the sorted states `z(n)`.
pub fn sorted_state_convergence(
    traj: &TrajectoryRecord,
    eps: f64,
) -> Result<SortedConvergenceReport> {
    require_eps(eps)?;
    if traj.horizon < 8 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: format!("needs at least 8 steps, got {}", traj.horizon),
        });
    }
    let z = &traj.sorted_states;
    let last = &z[traj.horizon];
    let oscillation: Vec<f64> = (0..last.len())
        .map(|i| {
            z[window_start(traj.horizon)..]
                .iter()
                .map(|s| (s[i] - last[i]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let max_oscillation = oscillation.iter().copied().fold(0.0, f64::max);
    Ok(SortedConvergenceReport {
        eps,
        oscillation,
        max_oscillation,
        passes: max_oscillation <= eps,
    })
}
