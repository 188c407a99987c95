//! Chains of stochastic matrices `{A(n)}`, their backward products, and the
//! state recursion `X(n+1) = A(n) X(n)`.

use std::ops::Deref;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::{self, GeneratorParams};
use crate::matrix::StochasticMatrix;

/// Per-step tolerance used when re-validating backward products; the check
/// for a product of `k` factors is `PRODUCT_TOL_PER_STEP * k`.
pub const PRODUCT_TOL_PER_STEP: f64 = 1e-7;

/// What an explicit chain does past the end of its listed matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    RepeatLast,
    Cycle,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChainKind {
    Static(StochasticMatrix),
    Periodic(Vec<StochasticMatrix>),
    Explicit {
        matrices: Vec<StochasticMatrix>,
        tail: TailPolicy,
    },
    Generator(GeneratorParams),
}

/// A finitely described, infinitely indexable chain `{A(n)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    n: usize,
    kind: ChainKind,
}

fn check_same_size(n: usize, list: &[StochasticMatrix]) -> Result<()> {
    match list.iter().find(|m| m.n() != n) {
        Some(m) => Err(Error::Dimension {
            expected: n,
            found: m.n(),
        }),
        None => Ok(()),
    }
}

impl ChainSpec {
    pub fn constant(a: StochasticMatrix) -> Self {
        ChainSpec {
            n: a.n(),
            kind: ChainKind::Static(a),
        }
    }

    pub fn periodic(list: Vec<StochasticMatrix>) -> Result<Self> {
        let n = list.first().ok_or(Error::Empty)?.n();
        check_same_size(n, &list)?;
        Ok(ChainSpec {
            n,
            kind: ChainKind::Periodic(list),
        })
    }

    pub fn explicit(matrices: Vec<StochasticMatrix>, tail: TailPolicy) -> Result<Self> {
        let n = matrices.first().ok_or(Error::Empty)?.n();
        check_same_size(n, &matrices)?;
        Ok(ChainSpec {
            n,
            kind: ChainKind::Explicit { matrices, tail },
        })
    }

    /// Wrap generator parameters; the parameters are validated first.
    pub fn generator(params: GeneratorParams) -> Result<Self> {
        params.validate()?;
        Ok(ChainSpec {
            n: params.n,
            kind: ChainKind::Generator(params),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &ChainKind {
        &self.kind
    }

    /// The matrix `A(step)`. Deterministic for a fixed spec.
    pub fn matrix_at(&self, step: usize) -> StochasticMatrix {
        match &self.kind {
            ChainKind::Static(a) => a.clone(),
            ChainKind::Periodic(list) => list[step % list.len()].clone(),
            ChainKind::Explicit { matrices, tail } => match matrices.get(step) {
                Some(m) => m.clone(),
                None => match tail {
                    TailPolicy::RepeatLast => matrices[matrices.len() - 1].clone(),
                    TailPolicy::Cycle => matrices[step % matrices.len()].clone(),
                    TailPolicy::Identity => StochasticMatrix::identity(self.n),
                },
            },
            ChainKind::Generator(p) => generators::realize_step(p, step).matrix,
        }
    }

    /// `A(start), .., A(end - 1)`.
    pub fn realize(&self, start: usize, end: usize) -> Vec<StochasticMatrix> {
        (start..end).map(|k| self.matrix_at(k)).collect()
    }

    /// The chain with agents relabelled through `sigma`.
    pub fn relabel(&self, sigma: &[usize], horizon: usize) -> Result<ChainSpec> {
        match &self.kind {
            ChainKind::Static(a) => Ok(ChainSpec::constant(a.relabel(sigma))),
            ChainKind::Periodic(list) => {
                ChainSpec::periodic(list.iter().map(|m| m.relabel(sigma)).collect())
            }
            _ => ChainSpec::explicit(
                self.realize(0, horizon.max(1))
                    .iter()
                    .map(|m| m.relabel(sigma))
                    .collect(),
                TailPolicy::RepeatLast,
            ),
        }
    }
}

/// Agent states `X(n)`; every component is finite.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
        Ok(StateVector(values))
    }

    /// The `i`-th canonical unit vector of length `n`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        StateVector(v)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn spread(&self) -> f64 {
        let (lo, hi) = min_max(&self.0);
        hi - lo
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut z = self.0.clone();
        z.sort_by(f64::total_cmp);
        z
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// One application of the update, `y = A x`.
pub fn step_states(a: &StochasticMatrix, x: &StateVector) -> Result<StateVector> {
    Ok(StateVector(a.apply(x)?))
}

/// `A(n) A(n-1) ... A(n0)`.
pub fn backward_product(spec: &ChainSpec, n0: usize, n: usize) -> Result<StochasticMatrix> {
    if n < n0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: format!("end step {n} precedes start step {n0}"),
        });
    }
    BackwardProducts::new(spec, n0)
        .nth(n - n0)
        .expect("backward product iterator is unbounded")
}

/// Successive backward products `A(n0)`, `A(n0+1) A(n0)`, `A(n0+2) A(n0+1) A(n0)`, ...
pub struct BackwardProducts<'a> {
    spec: &'a ChainSpec,
    next_step: usize,
    factors: usize,
    current: Option<StochasticMatrix>,
}

impl<'a> BackwardProducts<'a> {
    pub fn new(spec: &'a ChainSpec, n0: usize) -> Self {
        BackwardProducts {
            spec,
            next_step: n0,
            factors: 0,
            current: None,
        }
    }
}

impl Iterator for BackwardProducts<'_> {
    type Item = Result<StochasticMatrix>;

    fn next(&mut self) -> Option<Self::Item> {
        let a = self.spec.matrix_at(self.next_step);
        self.next_step += 1;
        self.factors += 1;
        let next = match &self.current {
            None => Ok(a),
            Some(prod) => a.mul(prod, PRODUCT_TOL_PER_STEP * self.factors as f64),
        };
        if let Ok(m) = &next {
            self.current = Some(m.clone());
        }
        Some(next)
    }
}

/// States of one simulation run together with the spread and sorted-state diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub horizon: usize,
    pub states: Vec<StateVector>,
    /// `max_i X_i(n) - min_i X_i(n)` for each recorded step.
    pub spread: Vec<f64>,
    /// Nondecreasing rearrangement `z(n)` of each state.
    pub sorted_states: Vec<Vec<f64>>,
}

/// Run `X(n+1) = A(n) X(n)` for `horizon` steps from `x0`.
pub fn simulate(spec: &ChainSpec, x0: &StateVector, horizon: usize) -> Result<TrajectoryRecord> {
    if x0.len() != spec.n() {
        return Err(Error::Dimension {
            expected: spec.n(),
            found: x0.len(),
        });
    }
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    for step in 0..horizon {
        let next = step_states(&spec.matrix_at(step), &states[step])?;
        states.push(next);
    }
    let spread = states.iter().map(StateVector::spread).collect();
    let sorted_states = states.iter().map(StateVector::sorted).collect();
    Ok(TrajectoryRecord {
        horizon,
        states,
        spread,
        sorted_states,
    })
}
