use std::io;

use serde::{Deserialize, Serialize};

use crate::sync::WireMessage;

/// Byte sizes used to price wire messages, independent of their encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub update_bytes: u64,
    pub hash_bytes: u64,
    pub per_message_overhead_bytes: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { update_bytes: 200, hash_bytes: 32, per_message_overhead_bytes: 100 }
    }
}

/// Priced size of one request or response.
pub fn cost_of(wire: &WireMessage, c: &CostParams) -> u64 {
    let o = c.per_message_overhead_bytes;
    let h = c.hash_bytes;
    match wire {
        WireMessage::Heads { hs } => o + h * hs.len() as u64,
        WireMessage::HeadsV2 { hs, old_heads, filter } => {
            o + h * (hs.len() + old_heads.len()) as u64 + (filter.m() as u64).div_ceil(8)
        }
        WireMessage::Needs { hashes } => o + h * hashes.len() as u64,
        WireMessage::Msgs { msgs } => o + msgs.iter().map(|m| c.update_bytes + h * m.hs().len() as u64).sum::<u64>(),
    }
}

/// One reconciliation attempt between two replicas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReconRecord {
    pub pair: String,
    pub round_trips: u32,
    pub bytes: u64,
    pub new_msgs: usize,
    pub completed: bool,
    /// Bytes a metadata-free exchange of the delivered messages would cost.
    #[serde(skip)]
    pub optimal_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReconStats {
    pub records: Vec<ReconRecord>,
}

impl ReconStats {
    fn completed(&self) -> impl Iterator<Item = &ReconRecord> {
        self.records.iter().filter(|r| r.completed)
    }

    pub fn completed_count(&self) -> usize {
        self.completed().count()
    }

    pub fn mean_round_trips(&self) -> f64 {
        mean(self.completed().map(|r| r.round_trips as f64))
    }

    /// Fractions of completed reconciliations needing one, two, and three
    /// or more round trips.
    pub fn round_trip_distribution(&self) -> [f64; 3] {
        let n = self.completed_count().max(1) as f64;
        let count = |f: &dyn Fn(u32) -> bool| self.completed().filter(|r| f(r.round_trips)).count() as f64 / n;
        [count(&|rt| rt <= 1), count(&|rt| rt == 2), count(&|rt| rt >= 3)]
    }

    pub fn mean_bytes(&self) -> f64 {
        mean(self.completed().map(|r| r.bytes as f64))
    }

    pub fn mean_optimal_bytes(&self) -> f64 {
        mean(self.completed().map(|r| r.optimal_bytes as f64))
    }

    /// `pair,round_trips,bytes,new_msgs,completed`, one row per record.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::{BloomFilter, BloomParams};
    use crate::fixtures::DivergedPair;
    use std::collections::BTreeSet;

    #[test]
    fn priced_sizes() {
        let f = DivergedPair::new();
        let c = CostParams::default();
        assert_eq!(cost_of(&WireMessage::Heads { hs: f.ids("EM") }, &c), 164);
        assert_eq!(cost_of(&WireMessage::msgs([f.msgs[&'B'].clone()]), &c), 332);
        assert_eq!(cost_of(&WireMessage::Needs { hashes: BTreeSet::new() }, &c), 100);
        assert_eq!(cost_of(&WireMessage::msgs([f.msgs[&'A'].clone(), f.msgs[&'B'].clone()]), &c), 100 + 200 + 232);
        // Seven entries at 10 bits each round up to 9 bytes.
        let filter = BloomFilter::build(&f.ids("CDEJKLM"), BloomParams::default());
        let v2 = WireMessage::HeadsV2 { hs: f.ids("EM"), old_heads: f.ids("B"), filter };
        assert_eq!(cost_of(&v2, &c), 100 + 96 + 9);
    }

    #[test]
    fn csv_header_and_rows() {
        let stats = ReconStats {
            records: vec![ReconRecord {
                pair: "r0-r1".into(),
                round_trips: 1,
                bytes: 500,
                new_msgs: 2,
                completed: true,
                optimal_bytes: 464,
            }],
        };
        let mut out = Vec::new();
        stats.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "pair,round_trips,bytes,new_msgs,completed\nr0-r1,1,500,2,true\n");
    }

    #[test]
    fn aggregates_skip_incomplete() {
        let rec = |rt, completed| ReconRecord {
            pair: "a-b".into(),
            round_trips: rt,
            bytes: 100,
            new_msgs: 0,
            completed,
            optimal_bytes: 0,
        };
        let stats = ReconStats { records: vec![rec(1, true), rec(2, true), rec(4, true), rec(9, false)] };
        assert!((stats.mean_round_trips() - 7.0 / 3.0).abs() < 1e-12);
        let d = stats.round_trip_distribution();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12 && (d[2] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(ReconStats::default().mean_bytes(), 0.0);
    }
}
