//! Seeded chain families used as fixtures.
//!
//! Each step is drawn from its own ChaCha stream (`stream = step`), so
//! `matrix_at` is random-access and reproducible per `(params, step)`.
//! Structure shared by all steps, such as a support graph, comes from a
//! dedicated stream.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agents::{AgentSet, MAX_AGENTS};
use crate::chain::ChainSpec;
use crate::error::{Error, Result};
use crate::matrix::{StochasticMatrix, ROW_SUM_TOL};
use crate::properties::{check_balanced_asymmetry_with, check_cut_balance_with, SubsetSearch};

/// Rejection-sampling budget per step.
pub const STEP_BUDGET: usize = 1000;

/// Families are verified exhaustively at generation time up to this size and
/// by sampling above it.
pub const VERIFY_EXHAUSTIVE_MAX: usize = 6;

const VERIFY_SAMPLES: usize = 256;
const SHARED_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Family {
    /// Convex combination of `support` random permutation matrices.
    DoublyStochastic { support: usize },
    /// Fixed symmetric support graph (each edge kept with `edge_prob`),
    /// per-step weights with pairwise ratio at most `sqrt(psi)`, diagonal at
    /// least `delta`. Every support edge carries at least
    /// `3 (1 - delta) / (8 sqrt(psi) (n - 1))` in each direction at every step.
    SelfConfidentCutBalanced {
        delta: f64,
        psi: f64,
        edge_prob: f64,
    },
    /// Two diagonal blocks with positive mixing inside each block.
    TwoLeader,
    /// Random row permutation of a doubly stochastic matrix, optionally mixed
    /// with a random stochastic matrix at strength up to `perturb` and kept
    /// only if it verifies with bound `psi`.
    BalancedAsymmetric {
        psi: f64,
        support: usize,
        perturb: f64,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::DoublyStochastic { .. } => "doubly_stochastic",
            Family::SelfConfidentCutBalanced { .. } => "self_confident_cut_balanced",
            Family::TwoLeader => "two_leader",
            Family::BalancedAsymmetric { .. } => "balanced_asymmetric",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorParams {
    pub n: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub family: Family,
}

fn invalid(name: &'static str, reason: String) -> Error {
    Error::InvalidParameter { name, reason }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if !(2..=MAX_AGENTS).contains(&n) {
            return Err(invalid(
                "n",
                format!("must lie in 2..={MAX_AGENTS}, got {n}"),
            ));
        }
        let check_psi = |psi: f64| {
            if psi >= 1.0 && psi.is_finite() {
                Ok(())
            } else {
                Err(invalid(
                    "psi",
                    format!("must be finite and >= 1, got {psi}"),
                ))
            }
        };
        let check_support = |support: usize| {
            if (1..=n).contains(&support) {
                Ok(())
            } else {
                Err(invalid(
                    "support",
                    format!("must lie in 1..={n}, got {support}"),
                ))
            }
        };
        match self.family {
            Family::DoublyStochastic { support } => check_support(support),
            Family::SelfConfidentCutBalanced {
                delta,
                psi,
                edge_prob,
            } => {
                if !(delta > 0.0 && delta < 1.0) {
                    return Err(invalid(
                        "delta",
                        format!("minimum diagonal must lie in (0, 1), got {delta}"),
                    ));
                }
                if !(0.0..=1.0).contains(&edge_prob) {
                    return Err(invalid(
                        "edge_prob",
                        format!("must lie in [0, 1], got {edge_prob}"),
                    ));
                }
                check_psi(psi)
            }
            Family::TwoLeader => Ok(()),
            Family::BalancedAsymmetric {
                psi,
                support,
                perturb,
            } => {
                check_support(support)?;
                if !(0.0..1.0).contains(&perturb) {
                    return Err(invalid(
                        "perturb",
                        format!("must lie in [0, 1), got {perturb}"),
                    ));
                }
                check_psi(psi)
            }
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// One realized matrix and how many candidates were rejected on the way.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSample {
    pub matrix: StochasticMatrix,
    pub rejected: usize,
    /// Set when the budget ran out and the unperturbed base matrix was used.
    pub fallback: bool,
}

/// Realize `A(step)`. Never fails: a family whose rejection budget runs out
/// falls back to a matrix that satisfies its property by construction.
pub fn realize_step(params: &GeneratorParams, step: usize) -> StepSample {
    match sample_step(params, step) {
        Ok(s) => s,
        Err(_) => {
            let mut rng = params.rng(step as u64);
            let matrix = match params.family {
                Family::BalancedAsymmetric { support, .. } => {
                    permuted_doubly_stochastic(&mut rng, params.n, support)
                }
                _ => unreachable!("only balanced asymmetric sampling can exhaust its budget"),
            };
            StepSample {
                matrix,
                rejected: STEP_BUDGET,
                fallback: true,
            }
        }
    }
}

/// Realize `A(step)`, reporting budget exhaustion as an error.
pub fn sample_step(params: &GeneratorParams, step: usize) -> Result<StepSample> {
    let n = params.n;
    let mut rng = params.rng(step as u64);
    let verify = |a: &StochasticMatrix, rng: &mut ChaCha8Rng| -> bool {
        let search = if n <= VERIFY_EXHAUSTIVE_MAX {
            SubsetSearch::Exhaustive
        } else {
            SubsetSearch::Sampled {
                samples: VERIFY_SAMPLES,
                seed: rng.gen(),
            }
        };
        match params.family {
            Family::SelfConfidentCutBalanced { psi, .. } => {
                check_cut_balance_with(a, psi, search).is_ok_and(|c| c.holds)
            }
            Family::BalancedAsymmetric { psi, .. } => {
                check_balanced_asymmetry_with(a, psi, search).is_ok_and(|c| c.holds)
            }
            _ => true,
        }
    };
    for rejected in 0..STEP_BUDGET {
        let candidate = match params.family {
            Family::DoublyStochastic { support } => doubly_stochastic(&mut rng, n, support),
            Family::SelfConfidentCutBalanced {
                delta,
                psi,
                edge_prob,
            } => {
                let edges = support_graph(params, edge_prob);
                cut_balanced(&mut rng, n, delta, psi, &edges)
            }
            Family::TwoLeader => two_block(&mut rng, n),
            Family::BalancedAsymmetric {
                support, perturb, ..
            } => {
                let base = permuted_doubly_stochastic(&mut rng, n, support);
                if perturb > 0.0 {
                    perturbed(&mut rng, &base, perturb)
                } else {
                    base
                }
            }
        };
        if verify(&candidate, &mut rng) {
            return Ok(StepSample {
                matrix: candidate,
                rejected,
                fallback: false,
            });
        }
    }
    Err(Error::BudgetExhausted {
        step,
        budget: STEP_BUDGET,
    })
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn doubly_stochastic(rng: &mut ChaCha8Rng, n: usize, support: usize) -> StochasticMatrix {
    let weights = random_weights(rng, support);
    let mut data = vec![0.0; n * n];
    let mut perm: Vec<usize> = (0..n).collect();
    for w in weights {
        perm.shuffle(rng);
        for (i, &j) in perm.iter().enumerate() {
            data[i * n + j] += w;
        }
    }
    StochasticMatrix::from_flat(n, data, ROW_SUM_TOL).expect("convex combination of permutations")
}

fn permuted_doubly_stochastic(rng: &mut ChaCha8Rng, n: usize, support: usize) -> StochasticMatrix {
    let d = doubly_stochastic(rng, n, support);
    let mut tau: Vec<usize> = (0..n).collect();
    tau.shuffle(rng);
    d.permute_rows(&tau)
}

fn perturbed(rng: &mut ChaCha8Rng, base: &StochasticMatrix, strength: f64) -> StochasticMatrix {
    let n = base.n();
    let eta = rng.gen_range(0.0..strength);
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        let noise = random_weights(rng, n);
        data.extend(
            base.row(i)
                .iter()
                .zip(noise)
                .map(|(&b, r)| (1.0 - eta) * b + eta * r),
        );
    }
    StochasticMatrix::from_flat(n, data, ROW_SUM_TOL)
        .expect("convex combination of stochastic rows")
}

/// Edges `(i, j)`, `i < j`, of the fixed support graph.
fn support_graph(params: &GeneratorParams, edge_prob: f64) -> Vec<(usize, usize)> {
    let mut rng = params.rng(SHARED_STREAM);
    let n = params.n;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn cut_balanced(
    rng: &mut ChaCha8Rng,
    n: usize,
    delta: f64,
    psi: f64,
    edges: &[(usize, usize)],
) -> StochasticMatrix {
    let mut degree = vec![0usize; n];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    // Each edge is scaled by the larger endpoint degree, symmetrically, so the
    // pairwise ratio stays within sqrt(psi) and every row's off-diagonal mass
    // is at most `scale * sqrt(psi) <= 1 - delta`.
    let ratio = psi.sqrt();
    let scale = (1.0 - delta) * rng.gen_range(0.75..=1.0) / ratio;
    let mut w = vec![0.0; n * n];
    for &(i, j) in edges {
        let base = scale * rng.gen_range(0.5..=1.0) / degree[i].max(degree[j]) as f64;
        w[i * n + j] = base * rng.gen_range(1.0..=ratio);
        w[j * n + i] = base * rng.gen_range(1.0..=ratio);
    }
    for i in 0..n {
        let off: f64 = w[i * n..(i + 1) * n].iter().sum();
        w[i * n + i] = 1.0 - off;
    }
    StochasticMatrix::from_flat(n, w, ROW_SUM_TOL).expect("diagonal absorbs the remainder")
}

/// The two leader blocks `{0, .., n/2 - 1}` and `{n/2, .., n-1}`.
pub fn two_leader_blocks(n: usize) -> (AgentSet, AgentSet) {
    let first: AgentSet = (0..n / 2).collect();
    (first, first.complement(n))
}

fn two_block(rng: &mut ChaCha8Rng, n: usize) -> StochasticMatrix {
    let (b1, b2) = two_leader_blocks(n);
    let mut data = vec![0.0; n * n];
    for block in [b1, b2] {
        for i in block.iter() {
            let w = random_weights(rng, block.len());
            for (j, x) in block.iter().zip(w) {
                data[i * n + j] = x;
            }
        }
    }
    StochasticMatrix::from_flat(n, data, ROW_SUM_TOL).expect("rows are normalized weights")
}

pub fn gen_doubly_stochastic(n: usize, seed: u64) -> Result<ChainSpec> {
    ChainSpec::generator(GeneratorParams {
        n,
        seed,
        family: Family::DoublyStochastic { support: n },
    })
}

pub fn gen_self_confident_cut_balanced(
    n: usize,
    seed: u64,
    delta: f64,
    psi: f64,
) -> Result<ChainSpec> {
    ChainSpec::generator(GeneratorParams {
        n,
        seed,
        family: Family::SelfConfidentCutBalanced {
            delta,
            psi,
            edge_prob: 1.0,
        },
    })
}

/// Two agent blocks that never hear from each other. With `n = 2` both blocks
/// are singletons and the chain is the constant identity.
pub fn gen_two_leader(n: usize, seed: u64) -> Result<ChainSpec> {
    if n == 2 {
        return Ok(ChainSpec::constant(StochasticMatrix::identity(2)));
    }
    ChainSpec::generator(GeneratorParams {
        n,
        seed,
        family: Family::TwoLeader,
    })
}

/// The constant swap chain `[[0,1],[1,0]]`; only `n = 2` is supported.
pub fn gen_periodic_swap(n: usize) -> Result<ChainSpec> {
    if n != 2 {
        return Err(invalid(
            "n",
            format!("the swap chain has 2 agents, got {n}"),
        ));
    }
    Ok(ChainSpec::constant(StochasticMatrix::permutation(&[1, 0])))
}

/// Balanced asymmetric chain with bound `psi`. For `psi > 1` candidates are
/// perturbed away from doubly stochastic and re-verified. Fails if the first
/// step cannot be sampled within the budget.
pub fn gen_balanced_asymmetric(n: usize, seed: u64, psi: f64) -> Result<ChainSpec> {
    let perturb = if psi > 1.0 { 0.5 } else { 0.0 };
    gen_balanced_asymmetric_with(n, seed, psi, n, perturb)
}

pub fn gen_balanced_asymmetric_with(
    n: usize,
    seed: u64,
    psi: f64,
    support: usize,
    perturb: f64,
) -> Result<ChainSpec> {
    let params = GeneratorParams {
        n,
        seed,
        family: Family::BalancedAsymmetric {
            psi,
            support,
            perturb,
        },
    };
    params.validate()?;
    sample_step(&params, 0)?;
    ChainSpec::generator(params)
}
