//! Absolute probability sequences built by backward propagation, and the
//! forward chain `P(n)` they induce.
//!
//! A true absolute probability sequence satisfies `pi(n)^t = pi(n+1)^t A(n)`
//! for all `n`; its existence is known but no construction is. Here `pi` is
//! propagated back from a chosen terminal vector at a finite horizon, so every
//! result carries both the terminal and the horizon.

use serde::Serialize;

use crate::chain::ChainSpec;
use crate::error::{Error, Result};
use crate::matrix::{StochasticMatrix, ROW_SUM_TOL};

/// Mass at or below which a state counts as empty and its forward row is
/// filled with the uniform distribution.
pub const ZERO_MASS: f64 = 1e-12;

/// Pass threshold for [`check_duality`].
pub const DUALITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbsProbApprox {
    pub horizon: usize,
    /// `pi[n]` for `n = 0..=horizon`.
    pub pi: Vec<Vec<f64>>,
    pub terminal: Vec<f64>,
}

impl AbsProbApprox {
    pub fn n(&self) -> usize {
        self.terminal.len()
    }

    pub fn at(&self, step: usize) -> &[f64] {
        &self.pi[step]
    }

    pub fn min_entry(&self) -> f64 {
        self.pi
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Mass of a set of agents at `step`.
    pub fn mass(&self, step: usize, set: crate::AgentSet) -> f64 {
        set.iter().map(|i| self.pi[step][i]).sum()
    }

    /// `max_n || pi(n)^t - pi(n+1)^t A(n) ||_inf` against `spec`, with its step.
    pub fn residual(&self, spec: &ChainSpec) -> Result<(f64, usize)> {
        let mut worst = (0.0, 0);
        for step in 0..self.horizon {
            let back = spec.matrix_at(step).left_apply(&self.pi[step + 1])?;
            let r = back
                .iter()
                .zip(&self.pi[step])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if r > worst.0 {
                worst = (r, step);
            }
        }
        Ok(worst)
    }
}

pub(crate) fn check_probability(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: v.len(),
        });
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::NotProbability(format!(
            "entry {x} is not a nonnegative number"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::NotProbability(format!("entries sum to {s}")));
    }
    Ok(())
}

/// Propagate `terminal` back from `horizon`: `pi(horizon) = terminal`,
/// `pi(n)^t = pi(n+1)^t A(n)`.
pub fn backward_abs_prob(
    spec: &ChainSpec,
    horizon: usize,
    terminal: &[f64],
) -> Result<AbsProbApprox> {
    check_probability(terminal, spec.n())?;
    let mut pi = vec![Vec::new(); horizon + 1];
    pi[horizon] = terminal.to_vec();
    for step in (0..horizon).rev() {
        pi[step] = spec.matrix_at(step).left_apply(&pi[step + 1])?;
    }
    Ok(AbsProbApprox {
        horizon,
        pi,
        terminal: terminal.to_vec(),
    })
}

fn require_step(pi: &AbsProbApprox, step: usize) -> Result<()> {
    if step < pi.horizon {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "step",
            reason: format!("step {step} is not below the horizon {}", pi.horizon),
        })
    }
}

/// `P_ij(n) = pi_j(n+1) A_ji(n) / pi_i(n)`; rows with mass at most
/// [`ZERO_MASS`] are uniform.
pub fn forward_transition(
    spec: &ChainSpec,
    pi: &AbsProbApprox,
    step: usize,
) -> Result<StochasticMatrix> {
    require_step(pi, step)?;
    forward_from(&spec.matrix_at(step), &pi.pi[step], &pi.pi[step + 1])
}

fn forward_from(a: &StochasticMatrix, now: &[f64], next: &[f64]) -> Result<StochasticMatrix> {
    let n = a.n();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let row = &mut data[i * n..(i + 1) * n];
        if now[i] > ZERO_MASS {
            for (j, p) in row.iter_mut().enumerate() {
                *p = next[j] * a.get(j, i) / now[i];
            }
        } else {
            row.fill(1.0 / n as f64);
        }
    }
    StochasticMatrix::from_flat(n, data, ROW_SUM_TOL)
}

/// The forward chain over a horizon together with its joint flows
/// `r_ij(n) = pi_i(n) P_ij(n)`.
#[derive(Clone, Debug, Serialize)]
pub struct ForwardChain {
    pub matrices: Vec<StochasticMatrix>,
    /// Row-major `r(n)` for each step.
    pub rij: Vec<Vec<f64>>,
}

impl ForwardChain {
    /// `r_ij(step)`.
    #[inline]
    pub fn r(&self, step: usize, i: usize, j: usize) -> f64 {
        let n = self.matrices[step].n();
        self.rij[step][i * n + j]
    }
}

pub fn forward_chain(spec: &ChainSpec, pi: &AbsProbApprox) -> Result<ForwardChain> {
    let mut matrices = Vec::with_capacity(pi.horizon);
    let mut rij = Vec::with_capacity(pi.horizon);
    for step in 0..pi.horizon {
        let p = forward_transition(spec, pi, step)?;
        rij.push(flows(&pi.pi[step], &p));
        matrices.push(p);
    }
    Ok(ForwardChain { matrices, rij })
}

fn flows(now: &[f64], p: &StochasticMatrix) -> Vec<f64> {
    let n = p.n();
    let mut r = Vec::with_capacity(n * n);
    for (i, &m) in now.iter().enumerate() {
        r.extend(p.row(i).iter().map(|&x| m * x));
    }
    r
}

/// `r(n)` as a row-major `n x n` matrix.
pub fn joint_flow(pi: &AbsProbApprox, fc: &ForwardChain, step: usize) -> Result<Vec<f64>> {
    require_step(pi, step)?;
    let p = fc.matrices.get(step).ok_or(Error::InvalidParameter {
        name: "step",
        reason: format!("forward chain has only {} steps", fc.matrices.len()),
    })?;
    Ok(flows(&pi.pi[step], p))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualityReport {
    pub max_residual: f64,
    /// `(step, i, j)` of the largest residual, if any entry was compared.
    pub location: Option<(usize, usize, usize)>,
    pub passes: bool,
}

/// Largest `|pi_i(n+1) A_ij(n) - pi_j(n) P_ji(n)|` over `n < horizon`,
/// skipping forward rows `j` with `pi_j(n) <= ZERO_MASS`.
pub fn check_duality(
    spec: &ChainSpec,
    pi: &AbsProbApprox,
    forward: &[StochasticMatrix],
    horizon: usize,
) -> Result<DualityReport> {
    if horizon > pi.horizon || horizon > forward.len() {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: format!(
                "horizon {horizon} exceeds the available {} steps",
                pi.horizon.min(forward.len())
            ),
        });
    }
    let n = spec.n();
    let mut max_residual = 0.0;
    let mut location = None;
    for (step, p) in forward.iter().enumerate().take(horizon) {
        if p.n() != n {
            return Err(Error::Dimension {
                expected: n,
                found: p.n(),
            });
        }
        let a = spec.matrix_at(step);
        for j in 0..n {
            if pi.pi[step][j] <= ZERO_MASS {
                continue;
            }
            for i in 0..n {
                let r = (pi.pi[step + 1][i] * a.get(i, j) - pi.pi[step][j] * p.get(j, i)).abs();
                if location.is_none() || r > max_residual {
                    max_residual = r;
                    location = Some((step, i, j));
                }
            }
        }
    }
    Ok(DualityReport {
        max_residual,
        location,
        passes: max_residual <= DUALITY_TOL,
    })
}

/// `|| pi_a(0) - pi_b(0) ||_inf` for two terminals at the same horizon.
/// A diagnostic only: how fast it shrinks with the horizon is chain-dependent.
pub fn terminal_sensitivity(
    spec: &ChainSpec,
    horizon: usize,
    terminal_a: &[f64],
    terminal_b: &[f64],
) -> Result<f64> {
    let a = backward_abs_prob(spec, horizon, terminal_a)?;
    let b = backward_abs_prob(spec, horizon, terminal_b)?;
    Ok(a.pi[0]
        .iter()
        .zip(&b.pi[0])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
