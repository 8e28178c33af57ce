use serde::{Deserialize, Serialize};

use super::{liveness_epsilon, system_no_crash_prob, LivenessQuery};
use crate::Probability;

/// Byzantine shares are given in percent of `n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub n: Vec<u64>,
    pub byzantine_percent: Vec<u64>,
    pub s: Vec<u64>,
    pub contracts: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            n: vec![1000],
            byzantine_percent: vec![10, 30, 50],
            s: vec![3, 5, 7, 9, 11, 13],
            contracts: vec![1, 1_000, 1_000_000, 40_000_000, 1_000_000_000],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u64,
    pub m: u64,
    pub s: u64,
    pub contracts: u64,
    pub epsilon: Probability,
    pub no_crash: Probability,
}

/// Every grid point with a valid query, in grid order.
pub fn sweep(grid: &SweepGrid) -> Vec<SweepRow> {
    let mut rows = vec![];
    for &n in &grid.n {
        for &pct in &grid.byzantine_percent {
            let m = n * pct / 100;
            for &s in &grid.s {
                let Ok(q) = LivenessQuery::new(n, m, s) else { continue };
                let epsilon = liveness_epsilon(&q).expect("validated");
                for &k in &grid.contracts {
                    let no_crash = system_no_crash_prob(&q, k).expect("validated");
                    rows.push(SweepRow { n, m, s, contracts: k, epsilon, no_crash });
                }
            }
        }
    }
    rows
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn to_json(rows: &[SweepRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_skips_invalid_points() {
        let grid = SweepGrid { n: vec![10], byzantine_percent: vec![20], s: vec![3, 11], contracts: vec![0, 5] };
        let rows = sweep(&grid);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.m == 2 && r.s == 3 && r.epsilon == 1.0));
        assert_eq!(rows[0].no_crash, 1.0);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let rows = sweep(&SweepGrid { n: vec![100], byzantine_percent: vec![70], s: vec![7], contracts: vec![10] });
        let csv = to_csv(&rows);
        assert!(csv.starts_with("n,m,s,contracts,epsilon,no_crash\n100,70,7,10,"));
        let mut r = csv::Reader::from_reader(csv.as_bytes());
        let back: Vec<SweepRow> = r.deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, rows);
        let back: Vec<SweepRow> = serde_json::from_str(&to_json(&rows)).unwrap();
        assert_eq!(back, rows);
    }
}
