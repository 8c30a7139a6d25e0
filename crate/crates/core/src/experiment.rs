//! Sweeps and verification runs behind the command-line tool.

use std::io;
use std::sync::Arc;

use crate::bec::orders::{check_delivery_orders, OrderCheck};
use crate::bec::Schema;
use crate::sim::{
    run_scenario, Assignment, ConfigError, Mutation, Property, PropertyViolation, ReconStats, ScenarioConfig, Strategy,
    Workload, DEFAULT_SCHEMA,
};
use crate::sync::ProtocolVersion;

/// Updates per replica per interval swept by default: 1, 2, 4, ..., 256.
pub const DEFAULT_SWEEP: [usize; 9] = [1, 2, 4, 8, 16, 32, 64, 128, 256];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub protocols: Vec<ProtocolVersion>,
    /// Updates each replica generates between two reconciliations of a pair.
    pub sweep: Vec<usize>,
    pub replicas: usize,
    /// Reconciliations per pair at each sweep point.
    pub pairs_recons: usize,
    pub seed: u64,
    pub bloom_bits: u32,
    pub bloom_hashes: u32,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            protocols: vec![ProtocolVersion::Basic, ProtocolVersion::Bloom],
            sweep: DEFAULT_SWEEP.to_vec(),
            replicas: 4,
            pairs_recons: 100,
            seed: 0,
            bloom_bits: 10,
            bloom_hashes: 7,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sweep.is_empty() || self.protocols.is_empty() {
            return Err(ConfigError::Invalid("empty sweep".into()));
        }
        if self.replicas < 2 || self.pairs_recons == 0 {
            return Err(ConfigError::Invalid("need at least 2 replicas and 1 reconciliation per pair".into()));
        }
        Ok(())
    }

    /// The scenario behind one sweep point. Both protocols see the same seed
    /// and therefore the same update schedule.
    pub fn scenario(&self, protocol: ProtocolVersion, updates: usize) -> ScenarioConfig {
        ScenarioConfig {
            replicas: self.replicas,
            protocol,
            updates_per_interval: updates,
            intervals: self.pairs_recons,
            bloom_bits: self.bloom_bits,
            bloom_hashes: self.bloom_hashes,
            seed: self.seed ^ (updates as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub protocol: ProtocolVersion,
    pub updates: usize,
    pub stats: ReconStats,
}

/// Runs every protocol at every sweep value.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepPoint>, ConfigError> {
    spec.validate()?;
    let mut out = Vec::new();
    for &protocol in &spec.protocols {
        for &updates in &spec.sweep {
            let outcome = run_scenario(&spec.scenario(protocol, updates))?;
            out.push(SweepPoint { protocol, updates, stats: outcome.stats });
        }
    }
    Ok(out)
}

/// `protocol,updates_per_interval,mean_round_trips,p_one_rt,p_two_rt,p_three_plus_rt`
pub fn write_roundtrips_csv<W: io::Write>(points: &[SweepPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "protocol",
        "updates_per_interval",
        "mean_round_trips",
        "p_one_rt",
        "p_two_rt",
        "p_three_plus_rt",
    ])?;
    for p in points {
        let [one, two, more] = p.stats.round_trip_distribution();
        w.write_record([
            p.protocol.to_string(),
            p.updates.to_string(),
            format!("{:.4}", p.stats.mean_round_trips()),
            format!("{one:.4}"),
            format!("{two:.4}"),
            format!("{more:.4}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `protocol,updates_per_interval,mean_kb,optimal_kb`, with 1 kB = 1000 bytes.
pub fn write_bandwidth_csv<W: io::Write>(points: &[SweepPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["protocol", "updates_per_interval", "mean_kb", "optimal_kb"])?;
    for p in points {
        w.write_record([
            p.protocol.to_string(),
            p.updates.to_string(),
            format!("{:.4}", p.stats.mean_bytes() / 1000.0),
            format!("{:.4}", p.stats.mean_optimal_bytes() / 1000.0),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One simulator run of the verification matrix.
#[derive(Clone, Debug)]
pub struct MatrixRun {
    pub label: String,
    pub seed: u64,
    pub violations: Vec<PropertyViolation>,
}

/// Whether a deliberately broken build is caught.
#[derive(Clone, Debug)]
pub struct MutationCheck {
    pub label: &'static str,
    pub expected: Property,
    pub detected: bool,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub runs: Vec<MatrixRun>,
    pub orders: OrderCheck,
    pub mutations: Vec<MutationCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.violations.is_empty())
            && self.orders.failures.is_empty()
            && self.mutations.iter().all(|m| m.detected)
    }
}

/// Matrix scenario: 4 correct replicas plus 2 running `strategy` (or 6
/// correct ones for `Honest`), followed by settling rounds.
pub fn matrix_scenario(strategy: Strategy, protocol: ProtocolVersion, seed: u64) -> ScenarioConfig {
    let adversaries = if strategy == Strategy::Honest {
        Vec::new()
    } else {
        vec![Assignment { replica: 4, strategy }, Assignment { replica: 5, strategy }]
    };
    ScenarioConfig {
        replicas: 6,
        adversaries,
        protocol,
        updates_per_interval: 2,
        intervals: 5,
        final_rounds: 1,
        workload: Workload::Mixed,
        check_invariants: true,
        max_depth: 48,
        seed,
        ..Default::default()
    }
}

/// Scenario in which a faulty replica deletes a tuple it does not name as a
/// predecessor; replica 1 receives insert and delete in one batch.
pub fn pred_check_scenario(seed: u64, mutation: Option<Mutation>) -> ScenarioConfig {
    use crate::sim::{ScriptStep, UnsafeKind};
    ScenarioConfig {
        replicas: 3,
        seed,
        adversaries: vec![Assignment { replica: 2, strategy: Strategy::UnsafeUpdater }],
        mutation,
        script: vec![
            ScriptStep::Generate { replica: 0, unsafe_kind: None },
            ScriptStep::Reconcile { a: 2, b: 0 },
            ScriptStep::Generate { replica: 2, unsafe_kind: Some(UnsafeKind::NonCausalDelete) },
            ScriptStep::Reconcile { a: 2, b: 1 },
            ScriptStep::Reconcile { a: 0, b: 1 },
            ScriptStep::Reconcile { a: 2, b: 0 },
        ],
        ..Default::default()
    }
}

fn detected(cfgs: impl IntoIterator<Item = ScenarioConfig>, p: Property) -> bool {
    cfgs.into_iter().any(|c| run_scenario(&c).map(|o| o.violations().iter().any(|v| v.property == p)).unwrap_or(false))
}

/// Runs the property matrix over `seeds` seeds, the delivery-order brute
/// force, and the detector self-tests.
pub fn verify(seeds: u64, base_seed: u64) -> Result<VerifyReport, ConfigError> {
    let mut runs = Vec::new();
    let mut cases: Vec<(Strategy, ProtocolVersion)> =
        vec![(Strategy::Honest, ProtocolVersion::Basic), (Strategy::Honest, ProtocolVersion::Bloom)];
    cases.extend(Strategy::FAULTY.iter().map(|&s| (s, ProtocolVersion::Bloom)));
    for (strategy, protocol) in cases {
        for i in 0..seeds {
            let seed = base_seed.wrapping_add(i);
            let out = run_scenario(&matrix_scenario(strategy, protocol, seed))?;
            runs.push(MatrixRun {
                label: format!("{}/{protocol}", strategy.name()),
                seed,
                violations: out.violations(),
            });
        }
    }
    let schema = Arc::new(Schema::parse(DEFAULT_SCHEMA).expect("built-in schema parses"));
    let orders = check_delivery_orders(&schema, 150, 6, base_seed, false);

    let mut dup = matrix_scenario(Strategy::Honest, ProtocolVersion::Bloom, base_seed);
    dup.mutation = Some(Mutation::DuplicateDelivery);
    let mut forged = matrix_scenario(Strategy::SignatureForger, ProtocolVersion::Bloom, base_seed);
    forged.mutation = Some(Mutation::SkipSignatureCheck);
    let pred = (0..16).map(|s| pred_check_scenario(base_seed.wrapping_add(s), Some(Mutation::SkipPredCheck)));
    let mutations = vec![
        MutationCheck {
            label: "duplicate delivery",
            expected: Property::NonDuplication,
            detected: detected([dup], Property::NonDuplication),
        },
        MutationCheck {
            label: "signature check disabled",
            expected: Property::Authenticity,
            detected: detected([forged], Property::Authenticity),
        },
        MutationCheck {
            label: "predecessor check disabled",
            expected: Property::Convergence,
            detected: detected(pred, Property::Convergence),
        },
    ];
    Ok(VerifyReport { runs, orders, mutations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentSpec {
        ExperimentSpec { sweep: vec![0, 2], pairs_recons: 4, ..Default::default() }
    }

    #[test]
    fn csv_columns_and_rows() {
        let points = run_sweep(&tiny()).unwrap();
        assert_eq!(points.len(), 4);
        let mut rt = Vec::new();
        write_roundtrips_csv(&points, &mut rt).unwrap();
        let rt = String::from_utf8(rt).unwrap();
        let mut lines = rt.lines();
        assert_eq!(
            lines.next(),
            Some("protocol,updates_per_interval,mean_round_trips,p_one_rt,p_two_rt,p_three_plus_rt")
        );
        assert_eq!(lines.next(), Some("basic,0,1.0000,1.0000,0.0000,0.0000"));
        let mut bw = Vec::new();
        write_bandwidth_csv(&points, &mut bw).unwrap();
        let bw = String::from_utf8(bw).unwrap();
        assert!(bw.starts_with("protocol,updates_per_interval,mean_kb,optimal_kb\nbasic,0,0.2000,0.0000\n"));
        assert!(bw.contains("\nbloom,0,0.2020,0.0000\n"));
    }

    #[test]
    fn sweep_is_reproducible() {
        let csv = || {
            let mut v = Vec::new();
            write_bandwidth_csv(&run_sweep(&tiny()).unwrap(), &mut v).unwrap();
            v
        };
        assert_eq!(csv(), csv());
    }

    #[test]
    fn empty_sweep_is_a_config_error() {
        let spec = ExperimentSpec { sweep: vec![], ..Default::default() };
        assert!(run_sweep(&spec).is_err());
    }

    #[test]
    fn one_seed_matrix_passes() {
        let report = verify(1, 3).unwrap();
        for r in &report.runs {
            assert!(r.violations.is_empty(), "{} {:?}", r.label, r.violations);
        }
        assert!(report.orders.failures.is_empty());
        assert!(report.mutations.iter().all(|m| m.detected), "{:?}", report.mutations);
        assert!(report.passed());
    }
}
