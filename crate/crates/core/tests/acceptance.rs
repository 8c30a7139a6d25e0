//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bec_core::bec::orders::check_delivery_orders;
use bec_core::bec::Schema;
use bec_core::crypto;
use bec_core::experiment::{self, matrix_scenario, ExperimentSpec, SweepPoint};
use bec_core::fixtures::{naive_closure, random_dag};
use bec_core::sim::{
    run_scenario, Assignment, Property, ScenarioConfig, ScriptStep, SimOutcome, Strategy, DEFAULT_SCHEMA,
};
use bec_core::sync::{reconcile, BroadcastConfig, ProtocolVersion, Replica};
use bec_core::{Hash, KeyDirectory, MessageRef, ReplicaKey, VerifiedMessage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const RT_MEAN: (f64, f64) = (1.00, 1.10);
const RT_ONE_MIN: f64 = 0.93;
const RT_RUNTIME: Duration = Duration::from_secs(120);
const BW_OVERHEAD_MAX_BYTES: f64 = 2000.0;
const BW_GROWTH_MAX: f64 = 1.20;
const BW_BASIC_FACTOR: f64 = 2.0;
const EXACTNESS_INSTANCES: usize = 200;
const EXACTNESS_MAX_DAG: usize = 200;
const ORDER_TRIALS: usize = 150;
const ORDER_MAX_MSGS: usize = 6;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

struct MatrixRun {
    strategy: Strategy,
    protocol: ProtocolVersion,
    out: SimOutcome,
}

fn matrix() -> Vec<MatrixRun> {
    let mut strategies = vec![Strategy::Honest];
    strategies.extend(Strategy::FAULTY);
    let mut runs = Vec::new();
    for strategy in strategies {
        for protocol in [ProtocolVersion::Basic, ProtocolVersion::Bloom] {
            for seed in 0..SEEDS {
                let out = run_scenario(&matrix_scenario(strategy, protocol, seed)).expect("matrix scenario is valid");
                runs.push(MatrixRun { strategy, protocol, out });
            }
        }
    }
    runs
}

fn count<'a>(runs: impl IntoIterator<Item = &'a MatrixRun>, props: &[Property]) -> (usize, Vec<String>) {
    let mut n = 0;
    let mut first = Vec::new();
    for r in runs {
        for v in r.out.violations() {
            if props.contains(&v.property) {
                n += 1;
                if first.len() < 3 {
                    first.push(format!("{}/{}: {v}", r.strategy.name(), r.protocol));
                }
            }
        }
    }
    (n, first)
}

fn round_trips(points: &[SweepPoint], elapsed: Duration) -> Verdict {
    let mut ok = elapsed < RT_RUNTIME;
    let mut bloom = Vec::new();
    let mut basic = Vec::new();
    for p in points {
        let mean = p.stats.mean_round_trips();
        match p.protocol {
            ProtocolVersion::Bloom => {
                let one = p.stats.round_trip_distribution()[0];
                ok &= (RT_MEAN.0..=RT_MEAN.1).contains(&mean) && one >= RT_ONE_MIN;
                bloom.push(format!("u={} {mean:.3}/{:.1}%", p.updates, one * 100.0));
            }
            ProtocolVersion::Basic => basic.push(mean),
        }
    }
    ok &= basic.windows(2).all(|w| w[1] > w[0]);
    let basic: Vec<String> = basic.iter().map(|m| format!("{m:.2}")).collect();
    verdict(
        ok,
        format!(
            "bloom mean/one-rt [{}]; basic means [{}]; sweep took {:.1}s (limit {}s)",
            bloom.join(", "),
            basic.join(", "),
            elapsed.as_secs_f64(),
            RT_RUNTIME.as_secs()
        ),
    )
}

fn bandwidth(points: &[SweepPoint]) -> Verdict {
    let overheads: Vec<(usize, f64)> = points
        .iter()
        .filter(|p| p.protocol == ProtocolVersion::Bloom)
        .map(|p| (p.updates, p.stats.mean_bytes() - p.stats.mean_optimal_bytes()))
        .collect();
    let max = overheads.iter().map(|o| o.1).fold(f64::MIN, f64::max);
    let min = overheads.iter().map(|o| o.1).fold(f64::MAX, f64::min);
    let growth = max / min;
    let largest = points.iter().filter(|p| p.protocol == ProtocolVersion::Basic).max_by_key(|p| p.updates).unwrap();
    let basic_ratio = largest.stats.mean_bytes() / largest.stats.mean_optimal_bytes();
    let ok = max <= BW_OVERHEAD_MAX_BYTES && growth <= BW_GROWTH_MAX && basic_ratio > BW_BASIC_FACTOR;
    let shown: Vec<String> = overheads.iter().map(|(u, o)| format!("u={u} {:.2}kB", o / 1000.0)).collect();
    verdict(
        ok,
        format!(
            "bloom overhead [{}]; max {:.2}kB (limit {:.2}kB), growth x{growth:.2} (limit x{BW_GROWTH_MAX:.2}); basic/optimal at u={} x{basic_ratio:.2} (needs > x{BW_BASIC_FACTOR:.1})",
            shown.join(", "),
            max / 1000.0,
            BW_OVERHEAD_MAX_BYTES / 1000.0,
            largest.updates
        ),
    )
}

fn exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let keys: Vec<ReplicaKey> = (0..3).map(|i| ReplicaKey::derive(9, &format!("r{i}"))).collect();
    let dir = Arc::new(KeyDirectory::from_keys(&keys).unwrap());
    let mut failures = Vec::new();
    let mut runs = 0;
    for instance in 0..EXACTNESS_INSTANCES {
        let n = rng.gen_range(1..=EXACTNESS_MAX_DAG);
        let all = random_dag(&mut rng, &keys, n, 3);
        let side = |rng: &mut ChaCha8Rng| -> BTreeSet<Hash> {
            let roots: BTreeSet<Hash> = all.iter().filter(|_| rng.gen_bool(0.05)).map(|m| m.id()).collect();
            naive_closure(&all, &roots)
        };
        let (mp, mq) = (side(&mut rng), side(&mut rng));
        let union: BTreeSet<Hash> = mp.union(&mq).copied().collect();
        for protocol in [ProtocolVersion::Basic, ProtocolVersion::Bloom] {
            let config = BroadcastConfig { protocol, ..Default::default() };
            let load = |k: &ReplicaKey, set: &BTreeSet<Hash>| {
                let mut r = Replica::new(k.clone(), dir.clone(), config.clone(), ());
                let msgs = all.iter().filter(|m| set.contains(&m.id()));
                r.store_mut()
                    .insert_batch(msgs.map(|m: &MessageRef| VerifiedMessage::verify(m.clone(), &dir).unwrap()))
                    .unwrap();
                r
            };
            let (mut p, mut q) = (load(&keys[0], &mp), load(&keys[1], &mq));
            reconcile(&mut p, &mut q);
            runs += 1;
            if p.store().ids() != union || q.store().ids() != union {
                failures.push(format!("instance {instance} {protocol}"));
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!(
            "{runs} reconciliations, {} mismatches {:?}",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn broadcast_properties(runs: &[MatrixRun]) -> Verdict {
    let safety = [Property::SelfDelivery, Property::Authenticity, Property::NonDuplication, Property::CausalOrder];
    let (unsafe_count, first) = count(runs, &safety);
    let quiescent = runs.iter().filter(|r| r.out.trace.quiescent).count();
    let (lost, first_lost) = count(runs, &[Property::EventualDelivery]);
    verdict(
        unsafe_count == 0 && lost == 0 && quiescent > 0,
        format!(
            "{} runs; safety violations {unsafe_count} {first:?}; eventual delivery checked on {quiescent} quiescent runs, violations {lost} {first_lost:?}",
            runs.len()
        ),
    )
}

fn equivocation() -> Verdict {
    // p = 0, q = 1 equivocates, r = 2.
    let mut cfg = ScenarioConfig {
        replicas: 3,
        adversaries: vec![Assignment { replica: 1, strategy: Strategy::Equivocator }],
        topology: Some(vec![[0, 1], [1, 2], [0, 2]]),
        script: vec![
            ScriptStep::Generate { replica: 1, unsafe_kind: None },
            ScriptStep::Reconcile { a: 1, b: 0 },
            ScriptStep::Reconcile { a: 1, b: 2 },
        ],
        ..Default::default()
    };
    let before = run_scenario(&cfg).unwrap();
    let (a, b) = (before.trace.stores[0].clone(), before.trace.stores[2].clone());
    cfg.script.push(ScriptStep::Reconcile { a: 0, b: 2 });
    let after = run_scenario(&cfg).unwrap();
    let both: BTreeSet<Hash> = a.union(&b).copied().collect();
    let from_q = |s: &BTreeSet<Hash>| {
        let out = &after;
        s.iter().all(|h| out.nodes[0].as_correct().unwrap().store().sender(h) == Some(&out.trace.ids[1]))
    };
    let ok = a.len() == 1
        && b.len() == 1
        && a != b
        && both.len() == 2
        && from_q(&both)
        && after.trace.stores[0] == both
        && after.trace.stores[2] == both
        && after.violations().is_empty();
    verdict(
        ok,
        format!(
            "before: p holds {} message, r holds {} message, distinct {}; after one p-r reconciliation p holds {}, r holds {} of the 2 equivocated",
            a.len(),
            b.len(),
            a != b,
            after.trace.stores[0].intersection(&both).count(),
            after.trace.stores[2].intersection(&both).count()
        ),
    )
}

fn convergence(runs: &[MatrixRun]) -> Verdict {
    let schema = Arc::new(Schema::parse(DEFAULT_SCHEMA).unwrap());
    let orders = check_delivery_orders(&schema, ORDER_TRIALS, ORDER_MAX_MSGS, 0, false);
    let mut pairs = 0;
    let mut diverged = 0;
    for r in runs {
        let t = &r.out.trace;
        let correct: Vec<usize> = (0..t.ids.len()).filter(|&i| t.correct[i]).collect();
        let delivered: BTreeMap<usize, BTreeSet<Hash>> =
            correct.iter().map(|&i| (i, t.deliveries[i].iter().map(|d| d.id).collect())).collect();
        for (k, &a) in correct.iter().enumerate() {
            for &b in &correct[k + 1..] {
                if delivered[&a] == delivered[&b] {
                    pairs += 1;
                    if t.digests[a] != t.digests[b] {
                        diverged += 1;
                    }
                }
            }
        }
    }
    let (flagged, _) = count(runs, &[Property::Convergence]);
    verdict(
        orders.failures.is_empty() && diverged == 0 && flagged == 0 && pairs > 0,
        format!(
            "brute force: {} workloads, {} delivery orders, {} divergent; matrix: {pairs} replica pairs with equal deliveries, {diverged} with different S",
            orders.workloads,
            orders.orders,
            orders.failures.len()
        ),
    )
}

fn invariants(runs: &[MatrixRun]) -> Verdict {
    let runs: Vec<&MatrixRun> = runs.iter().filter(|r| r.strategy == Strategy::UnsafeUpdater).collect();
    let mut broken = 0;
    let mut disagreements = 0;
    let mut unsafe_ignored = 0;
    let mut unsafe_applied = 0;
    for r in &runs {
        let t = &r.out.trace;
        broken += t.invariant_failures.iter().map(Vec::len).sum::<usize>();
        broken += r.out.correct().map(|(_, c)| c.app().state.invariant_violations().len()).sum::<usize>();
        let faulty: BTreeSet<Hash> =
            (0..t.ids.len()).filter(|&i| !t.correct[i]).flat_map(|i| t.broadcasts[i].iter().copied()).collect();
        let mut decided: BTreeMap<Hash, bool> = BTreeMap::new();
        for (_, c) in r.out.correct() {
            for (h, d) in c.app().state.decisions() {
                if *decided.entry(*h).or_insert(d.applied()) != d.applied() {
                    disagreements += 1;
                }
            }
        }
        for (h, applied) in &decided {
            if faulty.contains(h) {
                if *applied {
                    unsafe_applied += 1;
                } else {
                    unsafe_ignored += 1;
                }
            }
        }
    }
    verdict(
        broken == 0 && disagreements == 0 && unsafe_applied == 0 && unsafe_ignored > 0,
        format!(
            "{} runs; invariant failures {broken}; decision disagreements {disagreements}; unsafe updates ignored {unsafe_ignored}, applied {unsafe_applied}",
            runs.len()
        ),
    )
}

fn isolation(runs: &[MatrixRun]) -> Verdict {
    let kinds = [
        Strategy::Silent,
        Strategy::DanglingHasher,
        Strategy::BloomCorruptor,
        Strategy::HeadsOmitter,
        Strategy::SignatureForger,
    ];
    let runs: Vec<&MatrixRun> = runs.iter().filter(|r| kinds.contains(&r.strategy)).collect();
    let mut invalid = 0;
    let mut correct_conns = 0;
    let mut incomplete = 0;
    let mut mixed = 0;
    for r in &runs {
        let t = &r.out.trace;
        for c in &t.connections {
            if c.ends.iter().all(|&e| t.correct[e]) {
                correct_conns += 1;
                if !c.completed {
                    incomplete += 1;
                }
                continue;
            }
            mixed += 1;
            for (to, m) in &c.delivered {
                if t.correct[*to] && crypto::check(&m.payload(), m.sig(), &t.directory).is_none() {
                    invalid += 1;
                }
            }
        }
    }
    let (flagged, first) = count(runs.iter().copied(), &[Property::Isolation, Property::Completion]);
    verdict(
        invalid == 0 && incomplete == 0 && flagged == 0 && correct_conns > 0,
        format!(
            "{} runs; {mixed} faulty-peer connections, invalid messages stored {invalid}; {correct_conns} correct-peer connections, incomplete {incomplete}; flagged {flagged} {first:?}",
            runs.len()
        ),
    )
}

fn determinism() -> Verdict {
    let spec = ExperimentSpec { sweep: vec![1, 8, 32], pairs_recons: 20, seed: 11, ..Default::default() };
    let csvs = || {
        let points = experiment::run_sweep(&spec).unwrap();
        let (mut rt, mut bw) = (Vec::new(), Vec::new());
        experiment::write_roundtrips_csv(&points, &mut rt).unwrap();
        experiment::write_bandwidth_csv(&points, &mut bw).unwrap();
        (rt, bw)
    };
    let csv_same = csvs() == csvs();
    let mut states_same = true;
    for strategy in Strategy::FAULTY {
        let cfg = matrix_scenario(strategy, ProtocolVersion::Bloom, 5);
        let parsed = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&parsed).unwrap();
        let stats = |o: &SimOutcome| {
            let mut v = Vec::new();
            o.stats.write_csv(&mut v).unwrap();
            v
        };
        states_same &= a.final_states() == b.final_states() && stats(&a) == stats(&b);
    }
    verdict(
        csv_same && states_same,
        format!(
            "sweep CSVs identical {csv_same}; final states and stats identical across 7 scenario pairs {states_same}"
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let spec = ExperimentSpec::default();
    let points = experiment::run_sweep(&spec).expect("default sweep is valid");
    let sweep_time = start.elapsed();
    let runs = matrix();

    let results = [
        ("round trips", round_trips(&points, sweep_time)),
        ("bandwidth", bandwidth(&points)),
        ("reconciliation exactness", exactness()),
        ("broadcast properties", broadcast_properties(&runs)),
        ("equivocation", equivocation()),
        ("convergence", convergence(&runs)),
        ("invariant preservation", invariants(&runs)),
        ("faulty-peer isolation", isolation(&runs)),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!("{} {}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{}/{} criteria passed in {:.1}s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
