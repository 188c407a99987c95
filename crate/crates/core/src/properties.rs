//! Certifiers for the per-matrix chain classes: self-confidence, cut-balance,
//! balanced asymmetry and weak aperiodicity, plus the finite-horizon lower
//! bound on an absolute probability sequence.
//!
//! Subset-quantified properties are checked exhaustively up to a size cap and
//! by seeded uniform sampling beyond it. Every certificate records which of
//! the two was used, and a failing certificate always carries a witness that
//! [`Witness::violates`] can re-check.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::absprob::backward_abs_prob;
use crate::agents::{all_subsets, subsets_of_size, AgentSet};
use crate::chain::ChainSpec;
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;

/// Slack allowed in flow inequalities. Flows that agree mathematically (for
/// instance inflow and outflow of a doubly stochastic matrix) differ by
/// rounding, and validated rows may be off by up to the row-sum tolerance.
pub const FLOW_TOL: f64 = 1e-9;

/// Largest agent count for exhaustive cut-balance enumeration (`2^n` subsets).
pub const CUT_BALANCE_CAP: usize = 20;

/// Largest agent count for exhaustive balanced-asymmetry enumeration
/// (`sum_k C(n,k)^2` subset pairs).
pub const BALANCED_ASYMMETRY_CAP: usize = 10;

/// Samples drawn when a subset space is too large to enumerate.
pub const DEFAULT_SAMPLES: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyKind {
    SelfConfidence,
    CutBalance,
    BalancedAsymmetry,
    WeakAperiodicity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Method {
    Exhaustive,
    Sampled { samples: usize },
}

/// How to search a subset space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubsetSearch {
    Exhaustive,
    Sampled { samples: usize, seed: u64 },
}

impl SubsetSearch {
    /// Exhaustive when `n <= cap`, otherwise [`DEFAULT_SAMPLES`] seeded samples.
    pub fn auto(n: usize, cap: usize) -> Self {
        if n <= cap {
            SubsetSearch::Exhaustive
        } else {
            SubsetSearch::Sampled {
                samples: DEFAULT_SAMPLES,
                seed: 0,
            }
        }
    }
}

/// A counterexample to one of the defining inequalities.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Witness {
    /// A zero diagonal entry `A_ii(step)`.
    Diagonal { step: usize, agent: usize },
    /// `inflow > psi * outflow` across the cut `(subset, complement)`.
    Cut {
        subset: AgentSet,
        inflow: f64,
        outflow: f64,
    },
    /// `sum_{i not in m1, j in m2} A_ij > psi * sum_{i in m1, j not in m2} A_ij`.
    SubsetPair {
        m1: AgentSet,
        m2: AgentSet,
        lhs: f64,
        rhs: f64,
    },
    /// No `l` with `A_li A_lj >= gamma A_ij`.
    Pair { i: usize, j: usize },
}

impl Witness {
    /// Re-evaluate the defining inequality at this witness for matrix `a` and
    /// bound `bound`; `true` when the violation reproduces.
    pub fn violates(&self, a: &StochasticMatrix, bound: f64) -> bool {
        let n = a.n();
        match *self {
            Witness::Diagonal { agent, .. } => a.get(agent, agent) <= 0.0,
            Witness::Cut { subset, .. } => {
                let (inflow, outflow) = cut_flows(a, subset);
                inflow > bound * outflow + FLOW_TOL
            }
            Witness::SubsetPair { m1, m2, .. } => {
                let lhs = a.block_sum(m1.complement(n), m2);
                let rhs = a.block_sum(m1, m2.complement(n));
                lhs > bound * rhs + FLOW_TOL
            }
            Witness::Pair { i, j } => {
                (0..n).all(|l| a.get(l, i) * a.get(l, j) < bound * a.get(i, j))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyCertificate {
    pub property: PropertyKind,
    pub holds: bool,
    /// The bound checked (psi, gamma) or found (delta).
    pub bound: f64,
    pub witness: Option<Witness>,
    pub method: Method,
}

fn require_psi(psi: f64) -> Result<()> {
    if psi >= 1.0 && psi.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "psi",
            reason: format!("bound must be finite and >= 1, got {psi}"),
        })
    }
}

/// `(sum_{i not in S, j in S} A_ij, sum_{i in S, j not in S} A_ij)`.
pub fn cut_flows(a: &StochasticMatrix, subset: AgentSet) -> (f64, f64) {
    let rest = subset.complement(a.n());
    (a.block_sum(rest, subset), a.block_sum(subset, rest))
}

/// Smallest diagonal entry over the first `horizon` matrices.
pub fn self_confidence(spec: &ChainSpec, horizon: usize) -> Result<PropertyCertificate> {
    if horizon == 0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: "must be at least 1".into(),
        });
    }
    let mut best = (f64::INFINITY, 0, 0);
    for step in 0..horizon {
        let a = spec.matrix_at(step);
        for i in 0..a.n() {
            if a.get(i, i) < best.0 {
                best = (a.get(i, i), step, i);
            }
        }
    }
    let (delta, step, agent) = best;
    let holds = delta > 0.0;
    Ok(PropertyCertificate {
        property: PropertyKind::SelfConfidence,
        holds,
        bound: delta,
        witness: (!holds).then_some(Witness::Diagonal { step, agent }),
        method: Method::Exhaustive,
    })
}

pub fn check_cut_balance(a: &StochasticMatrix, psi: f64) -> Result<PropertyCertificate> {
    check_cut_balance_with(a, psi, SubsetSearch::auto(a.n(), CUT_BALANCE_CAP))
}

pub fn check_cut_balance_with(
    a: &StochasticMatrix,
    psi: f64,
    search: SubsetSearch,
) -> Result<PropertyCertificate> {
    require_psi(psi)?;
    let n = a.n();
    let violation = |s: AgentSet| {
        let (inflow, outflow) = cut_flows(a, s);
        (inflow > psi * outflow + FLOW_TOL).then_some(Witness::Cut {
            subset: s,
            inflow,
            outflow,
        })
    };
    let (witness, method) = match search {
        SubsetSearch::Exhaustive => {
            if n > CUT_BALANCE_CAP {
                return Err(Error::SizeBudget {
                    n,
                    cap: CUT_BALANCE_CAP,
                });
            }
            let full = AgentSet::full(n);
            let w = all_subsets(n)
                .filter(|s| !s.is_empty() && *s != full)
                .find_map(violation);
            (w, Method::Exhaustive)
        }
        SubsetSearch::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = (0..samples).find_map(|_| violation(random_proper_subset(&mut rng, n)));
            (w, Method::Sampled { samples })
        }
    };
    Ok(PropertyCertificate {
        property: PropertyKind::CutBalance,
        holds: witness.is_none(),
        bound: psi,
        witness,
        method,
    })
}

/// Smallest `psi >= 1` for which [`check_cut_balance`] holds, or `+inf` when
/// some cut has positive inflow and zero outflow.
pub fn min_cut_balance(a: &StochasticMatrix) -> Result<f64> {
    let n = a.n();
    if n > CUT_BALANCE_CAP {
        return Err(Error::SizeBudget {
            n,
            cap: CUT_BALANCE_CAP,
        });
    }
    let full = AgentSet::full(n);
    let mut psi = 1.0f64;
    for s in all_subsets(n).filter(|s| !s.is_empty() && *s != full) {
        let (inflow, outflow) = cut_flows(a, s);
        if inflow <= FLOW_TOL {
            continue;
        }
        if outflow == 0.0 {
            return Ok(f64::INFINITY);
        }
        psi = psi.max(inflow / outflow);
    }
    Ok(psi)
}

pub fn check_balanced_asymmetry(a: &StochasticMatrix, psi: f64) -> Result<PropertyCertificate> {
    check_balanced_asymmetry_with(a, psi, SubsetSearch::auto(a.n(), BALANCED_ASYMMETRY_CAP))
}

pub fn check_balanced_asymmetry_with(
    a: &StochasticMatrix,
    psi: f64,
    search: SubsetSearch,
) -> Result<PropertyCertificate> {
    require_psi(psi)?;
    let n = a.n();
    let (witness, method) = match search {
        SubsetSearch::Exhaustive => {
            if n > BALANCED_ASYMMETRY_CAP {
                return Err(Error::SizeBudget {
                    n,
                    cap: BALANCED_ASYMMETRY_CAP,
                });
            }
            (exhaustive_pairs(a, psi), Method::Exhaustive)
        }
        SubsetSearch::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..n).collect();
            let w = (0..samples).find_map(|_| {
                let k = rng.gen_range(1..n);
                idx.shuffle(&mut rng);
                let m1: AgentSet = idx[..k].iter().copied().collect();
                idx.shuffle(&mut rng);
                let m2: AgentSet = idx[..k].iter().copied().collect();
                pair_violation(a, psi, m1, m2)
            });
            (w, Method::Sampled { samples })
        }
    };
    Ok(PropertyCertificate {
        property: PropertyKind::BalancedAsymmetry,
        holds: witness.is_none(),
        bound: psi,
        witness,
        method,
    })
}

fn pair_violation(a: &StochasticMatrix, psi: f64, m1: AgentSet, m2: AgentSet) -> Option<Witness> {
    let n = a.n();
    let lhs = a.block_sum(m1.complement(n), m2);
    let rhs = a.block_sum(m1, m2.complement(n));
    (lhs > psi * rhs + FLOW_TOL).then_some(Witness::SubsetPair { m1, m2, lhs, rhs })
}

fn exhaustive_pairs(a: &StochasticMatrix, psi: f64) -> Option<Witness> {
    let n = a.n();
    // partial[s * n + i] = sum_{j in s} A_ij, so each pair costs O(n).
    let size = 1usize << n;
    let mut partial = vec![0.0; size * n];
    for s in 1..size {
        let low = s.trailing_zeros() as usize;
        let prev = s & (s - 1);
        for i in 0..n {
            partial[s * n + i] = partial[prev * n + i] + a.get(i, low);
        }
    }
    let row_sum: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    for k in 1..n {
        let sets: Vec<AgentSet> = subsets_of_size(n, k).collect();
        for &m1 in &sets {
            for &m2 in &sets {
                let p = &partial[m2.bits() as usize * n..][..n];
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                for i in 0..n {
                    if m1.contains(i) {
                        rhs += row_sum[i] - p[i];
                    } else {
                        lhs += p[i];
                    }
                }
                if lhs > psi * rhs + FLOW_TOL {
                    // Recompute directly so the witness carries exact block sums.
                    return pair_violation(a, psi, m1, m2).or(Some(Witness::SubsetPair {
                        m1,
                        m2,
                        lhs,
                        rhs,
                    }));
                }
            }
        }
    }
    None
}

pub fn check_weak_aperiodicity(a: &StochasticMatrix, gamma: f64) -> Result<PropertyCertificate> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("must be positive, got {gamma}"),
        });
    }
    let n = a.n();
    let witness = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .find(|&(i, j)| (0..n).all(|l| a.get(l, i) * a.get(l, j) < gamma * a.get(i, j)))
        .map(|(i, j)| Witness::Pair { i, j });
    Ok(PropertyCertificate {
        property: PropertyKind::WeakAperiodicity,
        holds: witness.is_none(),
        bound: gamma,
        witness,
        method: Method::Exhaustive,
    })
}

/// Largest `gamma` for which weak aperiodicity holds; `+inf` when every
/// off-diagonal entry is zero.
pub fn max_weak_aperiodicity(a: &StochasticMatrix) -> f64 {
    let n = a.n();
    let mut gamma = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let aij = a.get(i, j);
            if i == j || aij <= 0.0 {
                continue;
            }
            let best = (0..n)
                .map(|l| a.get(l, i) * a.get(l, j) / aij)
                .fold(0.0, f64::max);
            gamma = gamma.min(best);
        }
    }
    gamma
}

/// Minimum entry of the absolute probability approximation obtained by
/// propagating a uniform terminal vector back from `horizon`. An estimate of
/// the class-P* constant, not a certificate.
pub fn pstar_estimate(spec: &ChainSpec, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: "must be at least 1".into(),
        });
    }
    let n = spec.n();
    let pi = backward_abs_prob(spec, horizon, &vec![1.0 / n as f64; n])?;
    Ok(pi.min_entry())
}

fn random_proper_subset(rng: &mut ChaCha8Rng, n: usize) -> AgentSet {
    let full = AgentSet::full(n).bits();
    loop {
        let bits = rng.gen::<u64>() & full;
        if bits != 0 && bits != full {
            return AgentSet::from_bits(bits);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::validate_stochastic;

    fn m(rows: &[&[f64]]) -> StochasticMatrix {
        validate_stochastic(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 1e-9).unwrap()
    }

    fn avg() -> StochasticMatrix {
        m(&[&[0.5, 0.5], &[0.5, 0.5]])
    }

    fn swap() -> StochasticMatrix {
        m(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    fn lower() -> StochasticMatrix {
        m(&[&[1.0, 0.0], &[0.5, 0.5]])
    }

    #[test]
    fn self_confidence_examples() {
        let c = self_confidence(&ChainSpec::constant(StochasticMatrix::identity(3)), 5).unwrap();
        assert!(c.holds);
        assert_eq!(c.bound, 1.0);
        let c = self_confidence(&ChainSpec::constant(avg()), 5).unwrap();
        assert_eq!(c.bound, 0.5);
        let c = self_confidence(&ChainSpec::constant(swap()), 5).unwrap();
        assert!(!c.holds);
        assert_eq!(c.bound, 0.0);
        assert_eq!(c.witness, Some(Witness::Diagonal { step: 0, agent: 0 }));
        assert!(self_confidence(&ChainSpec::constant(swap()), 0).is_err());
    }

    #[test]
    fn cut_balance_examples() {
        let ds = m(&[&[0.2, 0.3, 0.5], &[0.5, 0.2, 0.3], &[0.3, 0.5, 0.2]]);
        assert!(check_cut_balance(&ds, 1.0).unwrap().holds);
        assert!(
            check_cut_balance(&StochasticMatrix::identity(4), 1.0)
                .unwrap()
                .holds
        );

        let c = check_cut_balance(&lower(), 1e6).unwrap();
        assert!(!c.holds);
        assert_eq!(c.method, Method::Exhaustive);
        match c.witness.clone().unwrap() {
            Witness::Cut {
                subset,
                inflow,
                outflow,
            } => {
                assert_eq!(subset, AgentSet::singleton(0));
                assert_eq!(inflow, 0.5);
                assert_eq!(outflow, 0.0);
            }
            w => panic!("unexpected witness {w:?}"),
        }
        assert!(c.witness.unwrap().violates(&lower(), 1e6));
        assert!(check_cut_balance(&avg(), 0.5).is_err());
    }

    #[test]
    fn exhaustive_cut_balance_beyond_cap_is_refused() {
        let a = StochasticMatrix::identity(21);
        assert!(matches!(
            check_cut_balance_with(&a, 1.0, SubsetSearch::Exhaustive),
            Err(Error::SizeBudget { n: 21, cap: 20 })
        ));
        let c = check_cut_balance(&a, 1.0).unwrap();
        assert!(matches!(c.method, Method::Sampled { .. }));
        assert!(c.holds);
    }

    #[test]
    fn min_cut_balance_examples() {
        let ds = m(&[&[0.2, 0.3, 0.5], &[0.5, 0.2, 0.3], &[0.3, 0.5, 0.2]]);
        assert!((min_cut_balance(&ds).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(min_cut_balance(&lower()).unwrap(), f64::INFINITY);
        let a = m(&[&[0.8, 0.2], &[0.1, 0.9]]);
        assert!((min_cut_balance(&a).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_asymmetry_examples() {
        assert!(
            check_balanced_asymmetry(&StochasticMatrix::identity(2), 1.0)
                .unwrap()
                .holds
        );
        let perms: [&[usize]; 4] = [&[0, 1, 2, 3], &[1, 0, 3, 2], &[3, 0, 1, 2], &[2, 3, 1, 0]];
        for tau in perms {
            let p = StochasticMatrix::permutation(tau);
            assert!(check_balanced_asymmetry(&p, 1.0).unwrap().holds, "{tau:?}");
        }
        let a = m(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let c = check_balanced_asymmetry(&a, 1.0).unwrap();
        assert!(!c.holds);
        let w = c.witness.unwrap();
        assert!(w.violates(&a, 1.0));
        match w {
            Witness::SubsetPair { m1, m2, lhs, rhs } => {
                // First pair in scan order; ({1}, {0}) is an equally valid witness.
                assert_eq!((m1, m2), (AgentSet::singleton(0), AgentSet::singleton(0)));
                assert_eq!((lhs, rhs), (1.0, 0.0));
            }
            w => panic!("unexpected witness {w:?}"),
        }
        let other = Witness::SubsetPair {
            m1: AgentSet::singleton(1),
            m2: AgentSet::singleton(0),
            lhs: 1.0,
            rhs: 0.0,
        };
        assert!(other.violates(&a, 1.0));
    }

    #[test]
    fn sampled_balanced_asymmetry_flags_method() {
        let a = StochasticMatrix::identity(12);
        assert!(check_balanced_asymmetry_with(&a, 1.0, SubsetSearch::Exhaustive).is_err());
        let c = check_balanced_asymmetry(&a, 1.0).unwrap();
        assert_eq!(
            c.method,
            Method::Sampled {
                samples: DEFAULT_SAMPLES
            }
        );
        assert!(c.holds);
    }

    #[test]
    fn weak_aperiodicity_examples() {
        assert!(
            check_weak_aperiodicity(&StochasticMatrix::identity(3), 7.0)
                .unwrap()
                .holds
        );
        assert!(check_weak_aperiodicity(&avg(), 0.5).unwrap().holds);
        let c = check_weak_aperiodicity(&swap(), 1e-6).unwrap();
        assert!(!c.holds);
        assert_eq!(c.witness, Some(Witness::Pair { i: 0, j: 1 }));
        assert!(check_weak_aperiodicity(&avg(), 0.0).is_err());

        assert_eq!(
            max_weak_aperiodicity(&StochasticMatrix::identity(3)),
            f64::INFINITY
        );
        assert_eq!(max_weak_aperiodicity(&avg()), 0.5);
        assert_eq!(max_weak_aperiodicity(&swap()), 0.0);
    }

    #[test]
    fn pstar_examples() {
        let ds = m(&[&[0.2, 0.3, 0.5], &[0.5, 0.2, 0.3], &[0.3, 0.5, 0.2]]);
        let p = pstar_estimate(&ChainSpec::constant(ds), 30).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
        let p = pstar_estimate(&ChainSpec::constant(StochasticMatrix::identity(4)), 30).unwrap();
        assert_eq!(p, 0.25);
        // Oracle: pi_2(n) = pi_2(n+1) / 2 from pi_2(T) = 1/2, so pi_2(0) = 2^-(T+1).
        let mut direct = 0.5f64;
        for _ in 0..20 {
            direct *= 0.5;
        }
        let p = pstar_estimate(&ChainSpec::constant(lower()), 20).unwrap();
        assert_eq!(p, direct);
        assert_eq!(p, 2f64.powi(-21));
    }
}
