//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! runtime against its budget; the process fails if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use consensus_chains::absprob::{backward_abs_prob, check_duality, forward_chain, DUALITY_TOL};
use consensus_chains::analysis::{classify, ds_decompose, sorted_state_convergence, Verdict};
use consensus_chains::chain::{backward_product, simulate};
use consensus_chains::flow::{islands, jet_interaction_total, jet_v_total, Jet};
use consensus_chains::generators::{
    gen_balanced_asymmetric, gen_balanced_asymmetric_with, gen_doubly_stochastic,
    gen_periodic_swap, gen_self_confident_cut_balanced, gen_two_leader, two_leader_blocks, Family,
    GeneratorParams,
};
use consensus_chains::matching::{normalize_chain, pullback_abs_prob, self_confident_permutation};
use consensus_chains::matrix::validate_stochastic;
use consensus_chains::properties::{
    check_balanced_asymmetry, check_cut_balance, check_weak_aperiodicity,
};
use consensus_chains::{AgentSet, ChainSpec, StateVector, StochasticMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: consensus_chains::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Independent closed form of the matching threshold.
fn matching_threshold(psi: f64, n: usize) -> f64 {
    let n = n as f64;
    4.0 / (psi * n * n + 4.0 * n - 4.0)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

fn ba_fixtures() -> Vec<ChainSpec> {
    (2..=6)
        .flat_map(|n| {
            (0..200).map(move |s| gen_balanced_asymmetric(n, 1000 * n as u64 + s, 1.0).unwrap())
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let mut checked = 0;
    let mut tightest = f64::INFINITY;
    for spec in ba_fixtures() {
        let a = spec.matrix_at(0);
        let n = a.n();
        let delta = matching_threshold(1.0, n);
        let m = lib(self_confident_permutation(&a, 1.0))?;
        let mut sorted = m.tau.clone();
        sorted.sort();
        ensure(sorted == (0..n).collect::<Vec<_>>(), || {
            format!("tau {:?} is not a permutation", m.tau)
        })?;
        let min = (0..n)
            .map(|i| a.get(m.tau[i], i))
            .fold(f64::INFINITY, f64::min);
        ensure(min >= delta, || {
            format!("min matched entry {min} below {delta} for {a:?}")
        })?;
        // Brute force: the returned tau is the lexicographically first admissible one.
        let first = permutations(n)
            .into_iter()
            .find(|p| (0..n).all(|i| a.get(p[i], i) >= delta));
        ensure(first.as_ref() == Some(&m.tau), || {
            format!("tau {:?} but brute force gives {first:?}", m.tau)
        })?;
        tightest = tightest.min(min / delta);
        checked += 1;
    }
    Ok(format!(
        "{checked} matrices, N = 2..6, smallest matched/threshold ratio {tightest:.3}"
    ))
}

fn criterion_2() -> Outcome {
    let horizon = 50;
    let mut worst_residual: f64 = 0.0;
    let mut fixtures = 0;
    for spec in ba_fixtures() {
        let n = spec.n();
        let norm = lib(normalize_chain(&spec, 1.0, horizon))?;
        let delta = matching_threshold(1.0, n);
        let mut prev: Vec<usize> = (0..n).collect();
        for (step, (b, tau)) in norm.b.iter().zip(&norm.perms).enumerate() {
            let a = spec.matrix_at(step);
            for i in 0..n {
                ensure(b.get(i, i) >= delta, || {
                    format!("B({step}) diagonal {i} below {delta}")
                })?;
                for j in 0..n {
                    let expected = a.get(tau[i], prev[j]);
                    ensure(b.get(i, j) == expected, || {
                        format!("B({step})[{i}][{j}] != A[tau(i)][tau'(j)]")
                    })?;
                }
            }
            prev = tau.clone();
        }
        let pi_b = lib(backward_abs_prob(
            &lib(norm.as_chain())?,
            horizon,
            &uniform(n),
        ))?;
        let pulled = lib(pullback_abs_prob(&spec, &pi_b, &norm.perms))?;
        for step in 0..horizon {
            let a = spec.matrix_at(step);
            for j in 0..n {
                let back: f64 = (0..n).map(|i| pulled.at(step + 1)[i] * a.get(i, j)).sum();
                worst_residual = worst_residual.max((back - pulled.at(step)[j]).abs());
            }
        }
        fixtures += 1;
    }
    ensure(worst_residual <= 1e-9, || {
        format!("pullback residual {worst_residual:e}")
    })?;
    Ok(format!(
        "{fixtures} chains, T = 50, max pullback residual {worst_residual:.1e}"
    ))
}

fn criterion_3() -> Outcome {
    let horizon = 500;
    let mut fixtures = 0;
    let mut pairs = 0;
    for k in 0..24u64 {
        let n = 2 + (k as usize % 5);
        let delta = 0.1 + 0.05 * (k % 5) as f64;
        let psi = 1.0 + (k % 3) as f64;
        let spec = lib(gen_self_confident_cut_balanced(n, 300 + k, delta, psi))?;
        let pi = lib(backward_abs_prob(&spec, horizon, &uniform(n)))?;
        let pstar = pi.min_entry();
        for i in 0..n {
            for j in i + 1..n {
                let (js, jk) = (
                    Jet::constant(AgentSet::singleton(i)),
                    Jet::constant(AgentSet::singleton(j)),
                );
                let u = lib(jet_interaction_total(&spec, &js, &jk, horizon))?;
                let v = lib(jet_v_total(&spec, &pi, &js, &jk, horizon))?;
                let mut direct = 0.0;
                for t in 0..horizon {
                    let a = spec.matrix_at(t);
                    direct += a.get(i, j) + a.get(j, i);
                    ensure((u[t] - direct).abs() <= 1e-12 * (1.0 + direct), || {
                        format!("U({i},{j}) at {t} differs from direct sum")
                    })?;
                    ensure(pstar * u[t] <= v[t] + 1e-9, || {
                        format!("p* U > V at t={t}, pair ({i},{j}), n={n}")
                    })?;
                    ensure(v[t] <= u[t] + 1e-9, || {
                        format!("V > U at t={t}, pair ({i},{j}), n={n}")
                    })?;
                }
                pairs += 1;
            }
        }
        fixtures += 1;
    }
    Ok(format!(
        "{fixtures} fixtures, {pairs} singleton pairs, T = 500"
    ))
}

/// Components of the support graph of `A(0)`, independently of the flow code.
fn support_components(a: &StochasticMatrix) -> Vec<AgentSet> {
    let n = a.n();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut blocks = Vec::new();
    for s in 0..n {
        if label[s].is_some() {
            continue;
        }
        let id = blocks.len();
        let mut block = AgentSet::EMPTY;
        let mut queue = vec![s];
        label[s] = Some(id);
        while let Some(i) = queue.pop() {
            block.insert(i);
            for j in 0..n {
                if label[j].is_none() && (a.get(i, j) > 0.0 || a.get(j, i) > 0.0) {
                    label[j] = Some(id);
                    queue.push(j);
                }
            }
        }
        blocks.push(block);
    }
    blocks
}

fn criterion_4() -> Outcome {
    let (horizon, eps, theta) = (2000, 1e-6, 50.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0usize; 2];
    let mut multi_island = 0;
    for k in 0..50u64 {
        let params = GeneratorParams {
            n: rng.gen_range(2..=8),
            seed: 4000 + k,
            family: Family::SelfConfidentCutBalanced {
                delta: rng.gen_range(0.2..=0.5),
                psi: rng.gen_range(1.0..=2.0),
                edge_prob: rng.gen_range(0.25..=0.9),
            },
        };
        let spec = lib(ChainSpec::generator(params.clone()))?;
        let r = lib(classify(&spec, horizon, eps, theta))?;
        let clusters = r.clusters_at_horizon();
        let isl = lib(islands(&spec, horizon, theta))?.blocks;
        let support = support_components(&spec.matrix_at(0));
        ensure(r.verdict != Verdict::Inconclusive, || {
            format!("{params:?}: inconclusive, cauchy {:e}", r.cauchy_residual)
        })?;
        ensure(clusters == isl, || {
            format!("{params:?}: clusters {clusters:?} vs islands {isl:?}")
        })?;
        ensure(isl == support, || {
            format!("{params:?}: islands {isl:?} vs support components {support:?}")
        })?;
        counts[(r.verdict == Verdict::ClassErgodic) as usize] += 1;
        multi_island += (isl.len() > 1) as usize;
    }
    Ok(format!(
        "50 fixtures: {} ergodic, {} class-ergodic ({multi_island} with several islands)",
        counts[0], counts[1]
    ))
}

fn criterion_5() -> Outcome {
    let horizon = 400;
    let mut fixtures = 0;
    for n in 2..=8 {
        for seed in 0..3u64 {
            let spec = lib(gen_two_leader(n, 50 + seed))?;
            let (b1, b2) = two_leader_blocks(n);
            let r = lib(classify(&spec, horizon, 1e-6, 50.0))?;
            ensure(r.verdict != Verdict::Ergodic, || {
                format!("n={n}: classified ergodic")
            })?;
            let (d, c) = lib(ds_decompose(&spec, horizon, 1e-6, n + 2, seed))?;
            ensure(
                d.verdict != Verdict::Ergodic && c.clusters.len() >= 2,
                || format!("n={n}: decomposition found one cluster"),
            )?;
            let x0 = StateVector::new(
                (0..n)
                    .map(|i| if b1.contains(i) { 0.0 } else { 1.0 })
                    .collect(),
            )
            .unwrap();
            let traj = lib(simulate(&spec, &x0, horizon))?;
            ensure((traj.spread[horizon] - 1.0).abs() <= 1e-12, || {
                format!("n={n}: blocks reached agreement")
            })?;
            let (j1, j2) = (Jet::constant(b1), Jet::constant(b2));
            let pi = lib(backward_abs_prob(&spec, horizon, &uniform(n)))?;
            let u = lib(jet_interaction_total(&spec, &j1, &j2, horizon))?;
            let v = lib(jet_v_total(&spec, &pi, &j1, &j2, horizon))?;
            ensure(u[horizon - 1] == 0.0 && v[horizon - 1] == 0.0, || {
                format!("n={n}: cross flows {} {}", u[horizon - 1], v[horizon - 1])
            })?;
            for f in &r.cross_flows {
                ensure(f.u_total == 0.0 && f.v_total == 0.0, || {
                    format!("n={n}: classify cross flow {f:?}")
                })?;
            }
            fixtures += 1;
        }
    }
    Ok(format!(
        "{fixtures} two-leader fixtures, none ergodic, cross U = V = 0"
    ))
}

fn criterion_6() -> Outcome {
    let a = validate_stochastic(&[vec![1.0, 0.0], vec![0.5, 0.5]], 1e-12).unwrap();
    let spec = ChainSpec::constant(a);
    let mut worst: f64 = 0.0;
    for k in 0..=30 {
        let p = lib(backward_product(&spec, 0, k))?;
        let h = 0.5f64.powi(k as i32 + 1);
        let expected = [[1.0, 0.0], [1.0 - h, h]];
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((p.get(i, j) - expected[i][j]).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("product error {worst:e}"))?;
    let mut worst_pi: f64 = 0.0;
    for t in [1, 5, 10, 20, 30, 50] {
        let pi = lib(backward_abs_prob(&spec, t, &[0.5, 0.5]))?;
        let h = 0.5f64.powi(t as i32 + 1);
        worst_pi = worst_pi
            .max((pi.at(0)[0] - (1.0 - h)).abs())
            .max((pi.at(0)[1] - h).abs());
    }
    ensure(worst_pi <= 1e-12, || format!("pi(0) error {worst_pi:e}"))?;
    Ok(format!(
        "k <= 30 product error {worst:.1e}, pi(0) error {worst_pi:.1e}"
    ))
}

fn all_generated_fixtures() -> Vec<(String, ChainSpec)> {
    let mut out = Vec::new();
    for n in 2..=6 {
        for s in 0..4u64 {
            out.push((
                format!("doubly_stochastic n={n} seed={s}"),
                gen_doubly_stochastic(n, s).unwrap(),
            ));
            out.push((
                format!("cut_balanced n={n} seed={s}"),
                gen_self_confident_cut_balanced(n, s, 0.25, 2.0).unwrap(),
            ));
            out.push((
                format!("two_leader n={n} seed={s}"),
                gen_two_leader(n, s).unwrap(),
            ));
            out.push((
                format!("balanced_asymmetric n={n} seed={s} psi=1"),
                gen_balanced_asymmetric(n, s, 1.0).unwrap(),
            ));
            out.push((
                format!("balanced_asymmetric n={n} seed={s} psi=3"),
                gen_balanced_asymmetric(n, s, 3.0).unwrap(),
            ));
        }
    }
    out.push(("periodic_swap".into(), gen_periodic_swap(2).unwrap()));
    out
}

fn criterion_7() -> Outcome {
    let horizon = 200;
    let mut worst: f64 = 0.0;
    let fixtures = all_generated_fixtures();
    for (name, spec) in &fixtures {
        let pi = lib(backward_abs_prob(spec, horizon, &uniform(spec.n())))?;
        let fc = lib(forward_chain(spec, &pi))?;
        let d = lib(check_duality(spec, &pi, &fc.matrices, horizon))?;
        ensure(d.max_residual <= DUALITY_TOL, || {
            format!("{name}: residual {:e} at {:?}", d.max_residual, d.location)
        })?;
        worst = worst.max(d.max_residual);
    }
    Ok(format!(
        "{} fixtures, T = 200, max duality residual {worst:.1e}",
        fixtures.len()
    ))
}

fn criterion_8() -> Outcome {
    let (horizon, eps) = (2000, 1e-6);
    let mut fixtures = Vec::new();
    for k in 0..24u64 {
        let n = 2 + (k as usize % 5);
        let spec = match k % 4 {
            0 => gen_balanced_asymmetric(n, k, 1.0),
            1 => gen_balanced_asymmetric(n, k, 2.0),
            2 => gen_balanced_asymmetric_with(n, k, 1.0, 1, 0.0),
            _ => gen_balanced_asymmetric_with(n, k, 1.0, 2.min(n), 0.0),
        };
        fixtures.push(lib(spec)?);
    }
    let mut non_ergodic = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (k, spec) in fixtures.iter().enumerate() {
        let n = spec.n();
        let x0 = StateVector::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let traj = lib(simulate(spec, &x0, horizon))?;
        let r = lib(sorted_state_convergence(&traj, eps))?;
        // Recompute the tail oscillation from raw states.
        let mut last = traj.states[horizon].to_vec();
        last.sort_by(f64::total_cmp);
        let mut osc: f64 = 0.0;
        for s in &traj.states[horizon - horizon / 4..] {
            let mut z = s.to_vec();
            z.sort_by(f64::total_cmp);
            osc = z
                .iter()
                .zip(&last)
                .map(|(a, b)| (a - b).abs())
                .fold(osc, f64::max);
        }
        ensure((osc - r.max_oscillation).abs() <= 1e-15, || {
            format!(
                "fixture {k}: oscillation {osc:e} vs {:e}",
                r.max_oscillation
            )
        })?;
        ensure(r.passes, || {
            format!(
                "fixture {k} (n={n}): sorted oscillation {:e}",
                r.max_oscillation
            )
        })?;
        if lib(classify(spec, horizon, eps, 50.0))?.verdict != Verdict::Ergodic {
            non_ergodic += 1;
        }
    }
    ensure(non_ergodic >= 1, || "no fixture was non-ergodic".into())?;
    Ok(format!(
        "{} fixtures, T = 2000, {non_ergodic} not ergodic",
        fixtures.len()
    ))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> StochasticMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        0.0
                    } else {
                        rng.gen::<f64>()
                    }
                })
                .collect();
            let s: f64 = w.iter().sum();
            if s == 0.0 {
                (0..n).map(|j| 1.0 / n as f64 + 0.0 * j as f64).collect()
            } else {
                w.iter().map(|x| x / s).collect()
            }
        })
        .collect();
    validate_stochastic(&rows, 1e-9).unwrap()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut matrices = Vec::new();
    for k in 0..600usize {
        let n = 2 + k % 5;
        let a = match k % 3 {
            0 => random_matrix(&mut rng, n),
            1 => gen_balanced_asymmetric(n, k as u64, 2.0)
                .unwrap()
                .matrix_at(0),
            _ => gen_self_confident_cut_balanced(n, k as u64, 0.3, 2.0)
                .unwrap()
                .matrix_at(0),
        };
        matrices.push(a);
    }
    let (mut aperiodic_checked, mut ba_passed) = (0, 0);
    for a in &matrices {
        let delta = a.diagonal().into_iter().fold(f64::INFINITY, f64::min);
        if delta > 0.0 {
            let c = lib(check_weak_aperiodicity(a, delta))?;
            ensure(c.holds, || {
                format!("diagonal >= {delta} but not weakly aperiodic: {a:?}")
            })?;
            aperiodic_checked += 1;
        }
        for psi in [1.0, 2.0, 5.0] {
            if lib(check_balanced_asymmetry(a, psi))?.holds {
                ensure(lib(check_cut_balance(a, psi))?.holds, || {
                    format!("balanced asymmetric but not cut-balanced at {psi}: {a:?}")
                })?;
                ba_passed += 1;
            }
        }
    }
    ensure(aperiodic_checked >= 100 && ba_passed >= 100, || {
        format!("too few informative cases: {aperiodic_checked} aperiodicity, {ba_passed} balanced asymmetry")
    })?;
    Ok(format!(
        "{} matrices: {aperiodic_checked} aperiodicity checks, {ba_passed} balanced-asymmetry passes",
        matrices.len()
    ))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_consensus");
    let chain = dir.path().join("chain.json");
    std::fs::write(&chain, r#"{"family": "self_confident_cut_balanced", "n": 5, "seed": 11, "params": {"delta": 0.3, "psi": 2, "edge_prob": 0.5}}"#)
        .map_err(|e| e.to_string())?;
    let chain = chain.to_str().unwrap().to_string();
    let commands: [Vec<&str>; 3] = [
        vec!["classify", "--input", &chain, "-T", "300"],
        vec![
            "dsdecompose",
            "--input",
            &chain,
            "-T",
            "300",
            "--probes",
            "8",
            "--seed",
            "5",
        ],
        vec![
            "gen",
            "--family",
            "balanced_asymmetric",
            "--n",
            "4",
            "--psi",
            "2",
            "--seed",
            "3",
            "-T",
            "20",
        ],
    ];
    for (c, args) in commands.iter().enumerate() {
        let mut reports = Vec::new();
        // The report embeds its own path, so every run writes to the same file.
        let out = dir.path().join(format!("report-{c}.json"));
        for _ in 0..3 {
            let status = Command::new(bin)
                .args(args)
                .arg("--out")
                .arg(&out)
                .status()
                .map_err(|e| e.to_string())?;
            ensure(status.success(), || {
                format!("{args:?} exited with {status}")
            })?;
            reports.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        ensure(reports.iter().all(|r| r == &reports[0]), || {
            format!("{} runs of {args:?} differ", reports.len())
        })?;
    }
    Ok("3 commands x 3 runs byte-identical".into())
}

fn main() {
    let criteria: [(u32, &str, u64, fn() -> Outcome); 10] = [
        (
            1,
            "matching threshold on balanced asymmetric matrices",
            30,
            criterion_1,
        ),
        (
            2,
            "normalized chain diagonal and pullback residual",
            30,
            criterion_2,
        ),
        (3, "V sandwiched between p* U and U", 60, criterion_3),
        (
            4,
            "cut-balanced chains: classes equal islands",
            180,
            criterion_4,
        ),
        (5, "two-leader chains are not ergodic", 5, criterion_5),
        (
            6,
            "backward product and absolute probability closed forms",
            1,
            criterion_6,
        ),
        (7, "forward/backward duality residual", 30, criterion_7),
        (
            8,
            "sorted states converge on balanced asymmetric chains",
            120,
            criterion_8,
        ),
        (
            9,
            "self-confidence and balanced asymmetry implications",
            30,
            criterion_9,
        ),
        (10, "CLI reports are deterministic", 10, criterion_10),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(budget);
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("over time budget; {d}")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {status} [{:.2}s / {budget}s] {name}: {detail}",
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
