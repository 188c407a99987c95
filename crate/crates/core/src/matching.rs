//! Permutations that make a balanced asymmetric matrix self-confident, and
//! the chain normalization `B(n) = P(n) A(n) P(n-1)^t` built from them.
//!
//! A matrix that is balanced asymmetric with bound `psi` always admits a
//! permutation `tau` with `A[tau(i)][i] >= 4 / (psi n^2 + 4n - 4)`: the
//! bipartite graph joining row `r` to column `c` whenever `A_rc` clears that
//! threshold satisfies Hall's condition. When no perfect matching exists the
//! Hall violator is returned, which also refutes balanced asymmetry.

use serde::Serialize;

use crate::absprob::AbsProbApprox;
use crate::agents::AgentSet;
use crate::chain::{ChainSpec, TailPolicy};
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;

/// Residual tolerance for a pulled-back absolute probability sequence.
pub const PULLBACK_TOL: f64 = 1e-9;

/// `4 / (psi n^2 + 4n - 4)`.
pub fn delta_bound(psi: f64, n: usize) -> Result<f64> {
    if !(psi >= 1.0 && psi.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "psi",
            reason: format!("must be finite and >= 1, got {psi}"),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("needs at least 2 agents, got {n}"),
        });
    }
    let n = n as f64;
    Ok(4.0 / (psi * n * n + 4.0 * n - 4.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchingResult {
    /// Column `i` is matched to row `tau[i]`; `P` has `e_{tau[i]}` as row `i`.
    pub tau: Vec<usize>,
    pub delta: f64,
    /// `A[tau[i]][i]` for each `i`.
    pub matched_entries: Vec<f64>,
}

/// Maximum bipartite matching by augmenting paths. `adj[l]` lists the right
/// vertices adjacent to left vertex `l`, restricted to `allowed_right`.
struct Matcher<'a> {
    adj: &'a [Vec<usize>],
    allowed_right: AgentSet,
    match_right: Vec<Option<usize>>,
}

impl<'a> Matcher<'a> {
    fn new(adj: &'a [Vec<usize>], n_right: usize, allowed_right: AgentSet) -> Self {
        Matcher {
            adj,
            allowed_right,
            match_right: vec![None; n_right],
        }
    }

    fn augment(&mut self, l: usize, visited: &mut AgentSet) -> bool {
        for &r in &self.adj[l] {
            if !self.allowed_right.contains(r) || visited.contains(r) {
                continue;
            }
            visited.insert(r);
            let free = match self.match_right[r] {
                None => true,
                Some(other) => self.augment(other, visited),
            };
            if free {
                self.match_right[r] = Some(l);
                return true;
            }
        }
        false
    }

    /// Match every left vertex in `left`; returns the number matched.
    fn run(&mut self, left: impl Iterator<Item = usize>) -> usize {
        left.filter(|&l| {
            let mut visited = AgentSet::EMPTY;
            self.augment(l, &mut visited)
        })
        .count()
    }
}

/// Rows `r` adjacent to column `c` iff `A_rc >= delta`.
fn column_adjacency(a: &StochasticMatrix, delta: f64) -> Vec<Vec<usize>> {
    (0..a.n())
        .map(|c| (0..a.n()).filter(|&r| a.get(r, c) >= delta).collect())
        .collect()
}

fn row_adjacency(a: &StochasticMatrix, delta: f64) -> Vec<Vec<usize>> {
    (0..a.n())
        .map(|r| (0..a.n()).filter(|&c| a.get(r, c) >= delta).collect())
        .collect()
}

/// A set `K` of rows whose neighbourhood `D(K)` is smaller than `K`, from a
/// maximum matching that leaves some row unmatched.
fn hall_violator(a: &StochasticMatrix, delta: f64) -> Option<(AgentSet, AgentSet)> {
    let n = a.n();
    let adj = row_adjacency(a, delta);
    let mut m = Matcher::new(&adj, n, AgentSet::full(n));
    let mut unmatched = AgentSet::EMPTY;
    for r in 0..n {
        let mut visited = AgentSet::EMPTY;
        if !m.augment(r, &mut visited) {
            unmatched.insert(r);
        }
    }
    if unmatched.is_empty() {
        return None;
    }
    // Alternating search from the unmatched rows.
    let mut rows = unmatched;
    let mut cols = AgentSet::EMPTY;
    let mut frontier: Vec<usize> = unmatched.iter().collect();
    while let Some(r) = frontier.pop() {
        for &c in &adj[r] {
            if cols.contains(c) {
                continue;
            }
            cols.insert(c);
            if let Some(next) = m.match_right[c] {
                if !rows.contains(next) {
                    rows.insert(next);
                    frontier.push(next);
                }
            }
        }
    }
    Some((rows, cols))
}

/// Find the lexicographically smallest `tau` with `A[tau(i)][i] >= delta_bound(psi, n)`.
pub fn self_confident_permutation(a: &StochasticMatrix, psi: f64) -> Result<MatchingResult> {
    let delta = delta_bound(psi, a.n())?;
    permutation_above(a, delta)
}

/// As [`self_confident_permutation`] with an explicit threshold.
pub fn permutation_above(a: &StochasticMatrix, delta: f64) -> Result<MatchingResult> {
    let n = a.n();
    let adj = column_adjacency(a, delta);
    let fail = || {
        let (violator, neighbours) =
            hall_violator(a, delta).expect("no perfect matching implies a Hall violator");
        Error::NoPerfectMatching {
            delta,
            violator,
            neighbours,
        }
    };
    if Matcher::new(&adj, n, AgentSet::full(n)).run(0..n) < n {
        return Err(fail());
    }
    // Fix columns in order, each to the smallest row that still leaves a
    // perfect matching of the remaining columns.
    let mut tau = Vec::with_capacity(n);
    let mut free_rows = AgentSet::full(n);
    for c in 0..n {
        let choice = adj[c].iter().copied().find(|&r| {
            if !free_rows.contains(r) {
                return false;
            }
            let rest = free_rows.difference(AgentSet::singleton(r));
            Matcher::new(&adj, n, rest).run(c + 1..n) == n - c - 1
        });
        let r = choice.ok_or_else(fail)?;
        free_rows = free_rows.difference(AgentSet::singleton(r));
        tau.push(r);
    }
    let matched_entries = tau.iter().enumerate().map(|(i, &r)| a.get(r, i)).collect();
    Ok(MatchingResult {
        tau,
        delta,
        matched_entries,
    })
}

/// `B(n) = P(n) A(n) P(n-1)^t` over a horizon, with `P(-1) = I`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizedChain {
    pub delta: f64,
    pub b: Vec<StochasticMatrix>,
    /// `perms[n]` is the `tau` of `P(n)`.
    pub perms: Vec<Vec<usize>>,
}

impl NormalizedChain {
    /// `B(0), .., B(T-1)` followed by the identity.
    pub fn as_chain(&self) -> Result<ChainSpec> {
        ChainSpec::explicit(self.b.clone(), TailPolicy::Identity)
    }

    pub fn min_diagonal(&self) -> f64 {
        self.b
            .iter()
            .flat_map(|m| m.diagonal())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn normalize_chain(spec: &ChainSpec, psi: f64, horizon: usize) -> Result<NormalizedChain> {
    let n = spec.n();
    let delta = delta_bound(psi, n)?;
    let mut prev: Vec<usize> = (0..n).collect();
    let mut b = Vec::with_capacity(horizon);
    let mut perms = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let c = spec.matrix_at(step).permute_columns(&prev);
        let m = permutation_above(&c, delta).map_err(|e| Error::MatchingAtStep {
            step,
            source: Box::new(e),
        })?;
        b.push(c.permute_rows(&m.tau));
        prev = m.tau.clone();
        perms.push(m.tau);
    }
    Ok(NormalizedChain { delta, b, perms })
}

/// `pi_A(n) = pi_B(n) P(n-1)`, checked against `spec` for the residual
/// `pi_A(n)^t = pi_A(n+1)^t A(n)`.
pub fn pullback_abs_prob(
    spec: &ChainSpec,
    pi_b: &AbsProbApprox,
    perms: &[Vec<usize>],
) -> Result<AbsProbApprox> {
    let n = spec.n();
    let horizon = pi_b.horizon;
    if perms.len() < horizon {
        return Err(Error::InvalidParameter {
            name: "perms",
            reason: format!("{} permutations for horizon {horizon}", perms.len()),
        });
    }
    let identity: Vec<usize> = (0..n).collect();
    let pull = |v: &[f64], tau: &[usize]| {
        let mut out = vec![0.0; n];
        for (i, &t) in tau.iter().enumerate() {
            out[t] = v[i];
        }
        out
    };
    let pi: Vec<Vec<f64>> = (0..=horizon)
        .map(|step| {
            let tau = if step == 0 {
                &identity
            } else {
                &perms[step - 1]
            };
            pull(&pi_b.pi[step], tau)
        })
        .collect();
    let out = AbsProbApprox {
        horizon,
        terminal: pi[horizon].clone(),
        pi,
    };
    let (residual, step) = out.residual(spec)?;
    if residual > PULLBACK_TOL {
        return Err(Error::Residual {
            step,
            residual,
            tol: PULLBACK_TOL,
        });
    }
    Ok(out)
}
