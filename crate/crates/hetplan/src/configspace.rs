//! Parallel configurations, the profiled throughput table, and the
//! configuration-proposal pruning heuristic.
//!
//! A configuration describes how one fine-tuning replica is sharded
//! (tensor-parallel degree x pipeline stages) and the longest sequence it
//! can process without running out of memory. The throughput table holds
//! profiled tokens/GPU/s per (config, length) and drives candidate
//! proposal: within every (gpu count, length) group only the fastest
//! config can ever be worth deploying.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bucketing::Bucketing;
use crate::error::{Error, Result};

/// One way to shard a fine-tuning replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub tp_degree: u32,
    pub pp_stages: u32,
    /// Longest supported sequence in tokens (the profiled OOM boundary).
    pub max_seq_len: u32,
}

impl ParallelConfig {
    pub fn new(tp_degree: u32, pp_stages: u32, max_seq_len: u32) -> Result<Self> {
        if tp_degree == 0 || pp_stages == 0 {
            return Err(Error::Invalid(format!(
                "parallel degrees must be positive, got <{tp_degree},{pp_stages}>"
            )));
        }
        if max_seq_len == 0 {
            return Err(Error::Invalid("max_seq_len must be positive".into()));
        }
        Ok(Self { tp_degree, pp_stages, max_seq_len })
    }

    /// GPUs needed for one replica (tp x pp).
    pub fn gpus_per_replica(&self) -> u32 {
        self.tp_degree * self.pp_stages
    }

    /// `<tp,pp>` notation used in plan files.
    pub fn label(&self) -> String {
        format!("<{},{}>", self.tp_degree, self.pp_stages)
    }
}

impl fmt::Display for ParallelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{}>", self.tp_degree, self.pp_stages)
    }
}

/// Available GPUs in the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub total_gpus: u32,
}

impl ClusterSpec {
    pub fn new(total_gpus: u32) -> Result<Self> {
        if total_gpus == 0 {
            return Err(Error::Invalid("cluster must have at least one GPU".into()));
        }
        Ok(Self { total_gpus })
    }
}

/// One profiled throughput measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputEntry {
    pub tp_degree: u32,
    pub pp_stages: u32,
    pub seq_len: u32,
    /// Tokens per GPU per second.
    pub thruput: f64,
}

/// Profiled throughput per (config, sequence length). OOM combinations are
/// simply absent; a config's max supported length is its largest entry.
#[derive(Debug, Clone, Default)]
pub struct ThroughputTable {
    entries: Vec<ThroughputEntry>,
}

impl ThroughputTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: ThroughputEntry) -> Result<()> {
        if entry.tp_degree == 0 || entry.pp_stages == 0 || entry.seq_len == 0 {
            return Err(Error::Invalid("throughput entry fields must be positive".into()));
        }
        if !(entry.thruput > 0.0) {
            return Err(Error::Invalid(format!(
                "non-positive throughput for <{},{}> at {}",
                entry.tp_degree, entry.pp_stages, entry.seq_len
            )));
        }
        let dup = self.entries.iter().any(|e| {
            e.tp_degree == entry.tp_degree
                && e.pp_stages == entry.pp_stages
                && e.seq_len == entry.seq_len
        });
        if dup {
            return Err(Error::Invalid(format!(
                "duplicate throughput entry for <{},{}> at {}",
                entry.tp_degree, entry.pp_stages, entry.seq_len
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ThroughputEntry] {
        &self.entries
    }

    /// Largest profiled length for a config, if any.
    pub fn max_len(&self, tp: u32, pp: u32) -> Option<u32> {
        self.entries
            .iter()
            .filter(|e| e.tp_degree == tp && e.pp_stages == pp)
            .map(|e| e.seq_len)
            .max()
    }

    pub fn get(&self, tp: u32, pp: u32, seq_len: u32) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.tp_degree == tp && e.pp_stages == pp && e.seq_len == seq_len)
            .map(|e| e.thruput)
    }

    /// Parse from CSV with header `tp,pp,num_gpus,seq_len,thruput_tokens_per_gpu_s`.
    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let mut table = Self::new();
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?;
        if header != "tp,pp,num_gpus,seq_len,thruput_tokens_per_gpu_s" {
            return Err(Error::parse(path, format!("unexpected header: {header}")));
        }
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::parse(path, format!("line {}: expected 5 fields", lineno + 2)));
            }
            let parse_u32 = |s: &str, what: &str| {
                s.trim().parse::<u32>().map_err(|_| {
                    Error::parse(path, format!("line {}: bad {what}: {s}", lineno + 2))
                })
            };
            let tp = parse_u32(fields[0], "tp")?;
            let pp = parse_u32(fields[1], "pp")?;
            let num_gpus = parse_u32(fields[2], "num_gpus")?;
            let seq_len = parse_u32(fields[3], "seq_len")?;
            let thruput = fields[4].trim().parse::<f64>().map_err(|_| {
                Error::parse(path, format!("line {}: bad throughput: {}", lineno + 2, fields[4]))
            })?;
            if num_gpus != tp * pp {
                return Err(Error::parse(
                    path,
                    format!("line {}: num_gpus {} != tp*pp {}", lineno + 2, num_gpus, tp * pp),
                ));
            }
            table.insert(ThroughputEntry { tp_degree: tp, pp_stages: pp, seq_len, thruput })?;
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, path)
    }
}

/// A detected inversion of the throughput partial order: `a` beats `b` at
/// the longer length but loses at the shorter one (same GPU count).
#[derive(Debug, Clone, PartialEq)]
pub struct PartialOrderViolation {
    pub config_a: (u32, u32),
    pub config_b: (u32, u32),
    pub short_len: u32,
    pub long_len: u32,
}

/// Propose candidate configurations: the throughput winner of every
/// (gpus-per-replica, seq_len) group, deduplicated. Ties go to the smaller
/// tp degree, then smaller pp. Output is ordered by (gpus, max_seq_len,
/// tp, pp) and is idempotent under re-grouping.
pub fn propose_candidates(table: &ThroughputTable) -> Result<Vec<ParallelConfig>> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    // (num_gpus, seq_len) -> best (thruput, tp, pp)
    let mut winners: BTreeMap<(u32, u32), (f64, u32, u32)> = BTreeMap::new();
    for e in table.entries() {
        let key = (e.tp_degree * e.pp_stages, e.seq_len);
        let cand = (e.thruput, e.tp_degree, e.pp_stages);
        winners
            .entry(key)
            .and_modify(|best| {
                let better = cand.0 > best.0
                    || (cand.0 == best.0 && (cand.1, cand.2) < (best.1, best.2));
                if better {
                    *best = cand;
                }
            })
            .or_insert(cand);
    }
    let mut set: BTreeMap<(u32, u32), ParallelConfig> = BTreeMap::new();
    for &(_, tp, pp) in winners.values() {
        let max_seq_len = table.max_len(tp, pp).expect("winner has entries");
        set.insert((tp, pp), ParallelConfig { tp_degree: tp, pp_stages: pp, max_seq_len });
    }
    let mut out: Vec<ParallelConfig> = set.into_values().collect();
    out.sort_by_key(|c| (c.gpus_per_replica(), c.max_seq_len, c.tp_degree, c.pp_stages));
    Ok(out)
}

/// Diagnostic check of the throughput partial order: for configs with the
/// same GPU count, the winner at a longer length should also win at every
/// shorter length where both are profiled.
pub fn check_partial_order(table: &ThroughputTable) -> Vec<PartialOrderViolation> {
    let mut configs: Vec<(u32, u32)> = table
        .entries()
        .iter()
        .map(|e| (e.tp_degree, e.pp_stages))
        .collect();
    configs.sort_unstable();
    configs.dedup();

    let mut violations = Vec::new();
    for (ia, &a) in configs.iter().enumerate() {
        for &b in &configs[ia + 1..] {
            if a.0 * a.1 != b.0 * b.1 {
                continue;
            }
            let mut common: Vec<u32> = table
                .entries()
                .iter()
                .filter(|e| (e.tp_degree, e.pp_stages) == a)
                .filter_map(|e| table.get(b.0, b.1, e.seq_len).map(|_| e.seq_len))
                .collect();
            common.sort_unstable();
            for (is, &s) in common.iter().enumerate() {
                for &s0 in &common[is + 1..] {
                    let (ta_s, tb_s) = (table.get(a.0, a.1, s).unwrap(), table.get(b.0, b.1, s).unwrap());
                    let (ta_l, tb_l) = (table.get(a.0, a.1, s0).unwrap(), table.get(b.0, b.1, s0).unwrap());
                    if ta_l > tb_l && tb_s > ta_s {
                        violations.push(PartialOrderViolation {
                            config_a: a,
                            config_b: b,
                            short_len: s,
                            long_len: s0,
                        });
                    } else if tb_l > ta_l && ta_s > tb_s {
                        violations.push(PartialOrderViolation {
                            config_a: b,
                            config_b: a,
                            short_len: s,
                            long_len: s0,
                        });
                    }
                }
            }
        }
    }
    violations
}

/// Number of leading bucket boundaries this config supports, i.e. the
/// largest j with boundary s_j <= max_seq_len (0 when even the first
/// bucket is too long).
pub fn supported_ranges(config: &ParallelConfig, boundaries: &Bucketing) -> usize {
    boundaries
        .boundaries()
        .iter()
        .take_while(|&&s| s <= config.max_seq_len)
        .count()
}

/// One config per line: `tp=A pp=B gpus=C max_len=D`.
pub fn format_candidates(candidates: &[ParallelConfig]) -> String {
    let mut out = String::new();
    for c in candidates {
        out.push_str(&format!(
            "tp={} pp={} gpus={} max_len={}\n",
            c.tp_degree,
            c.pp_stages,
            c.gpus_per_replica(),
            c.max_seq_len
        ));
    }
    out
}
