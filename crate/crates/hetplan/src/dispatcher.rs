//! Per-step data dispatching onto a fixed deployment plan.
//!
//! Supported ranges are recomputed from the step's (dynamic) boundaries,
//! the fused batch is assigned to replica groups either by solving the
//! minimax program (workload-balanced) or greedily by length, and the
//! per-group aggregates are split round-robin into per-replica counts and
//! micro-batch chunks.

use crate::bucketing::{BatchHistogram, Bucketing};
use crate::configspace::{self, ParallelConfig};
use crate::costmodel::{self, CostProfile, MicroBatchSchedule};
use crate::error::{Error, Result};
use crate::optimizer::{
    self, GroupSpec, MinimaxInstance, MinimaxSolution, SolveOptions, SolveStatus,
};

/// A deployed replica group: configuration plus replica count (> 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeployedGroup {
    pub config: ParallelConfig,
    pub replicas: u64,
}

/// Integer assignment of bucket sequences to replica groups.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    pub groups: Vec<DeployedGroup>,
    /// `d[i][j]`: sequences of bucket j on group i (0 beyond the group's
    /// supported range).
    pub assignment: Vec<Vec<u64>>,
    /// Per-group time on worst-replica (ceil) shares, re-evaluated through
    /// the cost model.
    pub group_times: Vec<f64>,
    /// max of `group_times`.
    pub objective: f64,
    /// Solver work counters (0 for the greedy dispatcher).
    pub solve_nodes: u64,
    pub solve_lp_iterations: u64,
    pub exact: bool,
}

impl DispatchPlan {
    pub fn bucket_totals(&self, buckets: usize) -> Vec<u64> {
        let mut totals = vec![0u64; buckets];
        for row in &self.assignment {
            for (j, &d) in row.iter().enumerate() {
                totals[j] += d;
            }
        }
        totals
    }
}

/// Options for the balanced dispatcher. Defaults solve to proven
/// optimality; the simulator swaps in a small relative gap and node cap so
/// a step's solve stays well under its time budget.
#[derive(Debug, Clone, Default)]
pub struct DispatchOptions {
    pub solve: SolveOptions,
}

impl DispatchOptions {
    /// Profile used inside the simulation step loop: certify to 1% or a
    /// few hundred nodes, whichever first, seeded so balanced never loses
    /// to length-based dispatch. Small per-task batches have integrality
    /// gaps above 1%, so the node cap is what bounds a step's solve; the
    /// local-search incumbent is what the step actually uses then.
    pub fn fast() -> Self {
        Self {
            solve: SolveOptions { rel_gap: 1e-2, node_limit: 300, ..SolveOptions::default() },
        }
    }
}

/// Recompute each group's supported range against the step's boundaries
/// and check every occupied bucket is reachable.
fn supported_or_replan(
    groups: &[DeployedGroup],
    batch: &BatchHistogram,
    boundaries: &Bucketing,
) -> Result<Vec<usize>> {
    let ranges: Vec<usize> =
        groups.iter().map(|g| configspace::supported_ranges(&g.config, boundaries)).collect();
    for (j, &b) in batch.counts.iter().enumerate() {
        if b > 0 && !ranges.iter().any(|&r| r > j) {
            return Err(Error::ReplanRequired(j));
        }
    }
    Ok(ranges)
}

/// Build the solver instance for a deployed plan on this step's buckets.
pub fn build_instance(
    groups: &[DeployedGroup],
    batch: &BatchHistogram,
    boundaries: &Bucketing,
    profile: &CostProfile,
) -> Result<MinimaxInstance> {
    let ranges = supported_or_replan(groups, batch, boundaries)?;
    let mut spec_groups = Vec::with_capacity(groups.len());
    for (g, &r) in groups.iter().zip(&ranges) {
        let entry = profile.find(g.config.tp_degree, g.config.pp_stages)?;
        let mut unit_costs = Vec::with_capacity(r);
        let mut chunk_sizes = Vec::with_capacity(r);
        for &s in &boundaries.boundaries()[..r] {
            unit_costs.push(entry.curve.per_seq_time(s));
            chunk_sizes.push((entry.config.max_seq_len / s) as u64);
        }
        spec_groups.push(GroupSpec {
            replicas: g.replicas,
            bubble_factor: (g.config.pp_stages - 1) as f64,
            unit_costs,
            chunk_sizes,
        });
    }
    Ok(MinimaxInstance { groups: spec_groups, demands: batch.counts.clone() })
}

fn plan_from_solution(
    groups: &[DeployedGroup],
    solution: &MinimaxSolution,
    boundaries: &Bucketing,
    profile: &CostProfile,
) -> Result<DispatchPlan> {
    let mut group_times = Vec::with_capacity(groups.len());
    for (g, shares) in groups.iter().zip(&solution.per_replica) {
        group_times.push(costmodel::replica_time(profile, &g.config, shares, boundaries)?);
    }
    let objective = group_times.iter().copied().fold(0.0, f64::max);
    debug_assert!(
        (objective - solution.objective).abs() <= 1e-9 * (1.0 + objective.abs()),
        "cost-model re-evaluation diverged from solver objective"
    );
    Ok(DispatchPlan {
        groups: groups.to_vec(),
        assignment: solution.assignment.clone(),
        group_times,
        objective,
        solve_nodes: solution.nodes,
        solve_lp_iterations: solution.lp_iterations,
        exact: solution.status == SolveStatus::Optimal,
    })
}

/// Workload-balanced dispatch: solve the minimax program for this step.
/// The length-based assignment seeds the search, so the result never
/// exceeds it.
pub fn dispatch_balanced(
    groups: &[DeployedGroup],
    batch: &BatchHistogram,
    boundaries: &Bucketing,
    profile: &CostProfile,
    opts: &DispatchOptions,
) -> Result<DispatchPlan> {
    let instance = build_instance(groups, batch, boundaries, profile)?;
    let seed = dispatch_by_length(groups, batch, boundaries, profile)?;
    let mut solve = opts.solve.clone();
    solve.seeds.push(
        seed.assignment
            .iter()
            .zip(&instance.groups)
            .map(|(row, g)| row[..g.supported_range()].to_vec())
            .collect(),
    );
    let solution = optimizer::solve_minimax(&instance, &solve)?;
    let mut plan = plan_from_solution(groups, &solution, boundaries, profile)?;
    // Pad assignment rows to full bucket width for uniform output.
    for row in &mut plan.assignment {
        row.resize(boundaries.len(), 0);
    }
    Ok(plan)
}

/// Length-based dispatch: each occupied bucket goes entirely to the
/// supporting group with the highest average throughput bound at that
/// bucket's boundary; ties to fewer GPUs, then group order.
pub fn dispatch_by_length(
    groups: &[DeployedGroup],
    batch: &BatchHistogram,
    boundaries: &Bucketing,
    profile: &CostProfile,
) -> Result<DispatchPlan> {
    let ranges = supported_or_replan(groups, batch, boundaries)?;
    let mut assignment: Vec<Vec<u64>> =
        groups.iter().map(|_| vec![0u64; boundaries.len()]).collect();
    for (j, &count) in batch.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let s = boundaries.boundaries()[j];
        let mut winner: Option<(usize, f64)> = None;
        for (i, g) in groups.iter().enumerate() {
            if ranges[i] <= j {
                continue;
            }
            let a = costmodel::atb(profile, &g.config, s)?;
            let better = match winner {
                None => true,
                Some((wi, wa)) => {
                    a > wa
                        || (a == wa
                            && groups[i].config.gpus_per_replica()
                                < groups[wi].config.gpus_per_replica())
                }
            };
            if better {
                winner = Some((i, a));
            }
        }
        assignment[winner.expect("coverage checked").0][j] = count;
    }

    let mut group_times = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let shares: Vec<u64> =
            assignment[i].iter().map(|&d| d.div_ceil(g.replicas)).collect();
        group_times.push(costmodel::replica_time(profile, &g.config, &shares, boundaries)?);
    }
    let objective = group_times.iter().copied().fold(0.0, f64::max);
    Ok(DispatchPlan {
        groups: groups.to_vec(),
        assignment,
        group_times,
        objective,
        solve_nodes: 0,
        solve_lp_iterations: 0,
        exact: true,
    })
}

/// Per-replica bucket counts for one replica of a group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaAssignment {
    pub group: usize,
    pub replica: u64,
    pub counts: Vec<u64>,
}

/// Split each group's aggregate counts round-robin across its replicas,
/// granting ceil shares to the replicas with the smallest running totals.
/// Every per-bucket share lands in {floor(d/p), ceil(d/p)}.
pub fn split_to_replicas(dispatch: &DispatchPlan) -> Vec<ReplicaAssignment> {
    let mut out = Vec::new();
    for (i, g) in dispatch.groups.iter().enumerate() {
        let p = g.replicas;
        let mut counts: Vec<Vec<u64>> =
            (0..p).map(|_| vec![0u64; dispatch.assignment[i].len()]).collect();
        let mut totals = vec![0u64; p as usize];
        for (j, &d) in dispatch.assignment[i].iter().enumerate() {
            let base = d / p;
            let extra = (d % p) as usize;
            for c in counts.iter_mut() {
                c[j] = base;
            }
            if extra > 0 {
                let mut order: Vec<usize> = (0..p as usize).collect();
                order.sort_by_key(|&r| (totals[r], r));
                for &r in order.iter().take(extra) {
                    counts[r][j] += 1;
                }
            }
            for (r, c) in counts.iter().enumerate() {
                totals[r] = c.iter().sum();
            }
        }
        for (r, c) in counts.into_iter().enumerate() {
            out.push(ReplicaAssignment { group: i, replica: r as u64, counts: c });
        }
    }
    out
}

/// One micro-batch: `size` sequences padded to `seq_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub bucket: usize,
    pub seq_len: u32,
    pub size: u64,
    pub est_time: f64,
}

/// Chunk a replica's counts into memory-saturating micro-batches plus
/// per-bucket remainders, ordered by descending estimated time.
pub fn form_microbatches(
    assignment: &ReplicaAssignment,
    config: &ParallelConfig,
    profile: &CostProfile,
    boundaries: &Bucketing,
) -> Result<Vec<Chunk>> {
    let mut chunks = Vec::new();
    for (j, &count) in assignment.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let s = boundaries.boundaries()[j];
        let sched = MicroBatchSchedule::for_count(config, count, s)?;
        for _ in 0..sched.full_chunks {
            chunks.push(Chunk {
                bucket: j,
                seq_len: s,
                size: sched.chunk_size,
                est_time: costmodel::micro_time(profile, config, sched.chunk_size, s)?,
            });
        }
        if sched.remainder > 0 {
            chunks.push(Chunk {
                bucket: j,
                seq_len: s,
                size: sched.remainder,
                est_time: costmodel::micro_time(profile, config, sched.remainder, s)?,
            });
        }
    }
    chunks.sort_by(|a, b| {
        b.est_time
            .total_cmp(&a.est_time)
            .then(a.bucket.cmp(&b.bucket))
            .then(b.size.cmp(&a.size))
    });
    Ok(chunks)
}

/// Structured-text dispatch report: the d matrix, per-replica splits with
/// chunk schedules, and estimated times.
pub fn format_dispatch(
    dispatch: &DispatchPlan,
    boundaries: &Bucketing,
    profile: &CostProfile,
) -> Result<String> {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "boundaries {}", boundaries.to_csv_line()).unwrap();
    writeln!(out, "objective_s {}", dispatch.objective).unwrap();
    for (i, g) in dispatch.groups.iter().enumerate() {
        writeln!(
            out,
            "group {} config tp={} pp={} replicas={} time_s={} d={}",
            i,
            g.config.tp_degree,
            g.config.pp_stages,
            g.replicas,
            dispatch.group_times[i],
            dispatch.assignment[i]
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        )
        .unwrap();
    }
    for ra in split_to_replicas(dispatch) {
        let g = &dispatch.groups[ra.group];
        let chunks = form_microbatches(&ra, &g.config, profile, boundaries)?;
        let sched: Vec<String> =
            chunks.iter().map(|c| format!("{}x{}", c.size, c.seq_len)).collect();
        writeln!(
            out,
            "replica {}.{} counts={} chunks=[{}]",
            ra.group,
            ra.replica,
            ra.counts.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            sched.join(" ")
        )
        .unwrap();
    }
    Ok(out)
}

/// Parse the `group ... d=` lines back into (groups, assignment, objective).
pub fn parse_dispatch(text: &str) -> Result<(Vec<DeployedGroup>, Vec<Vec<u64>>, f64)> {
    let mut groups = Vec::new();
    let mut assignment = Vec::new();
    let mut objective = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("objective_s ") {
            objective = rest.parse::<f64>().ok();
        } else if line.starts_with("group ") {
            let mut tp = 0u32;
            let mut pp = 0u32;
            let mut replicas = 0u64;
            let mut d = Vec::new();
            for tok in line.split_whitespace() {
                if let Some(v) = tok.strip_prefix("tp=") {
                    tp = v.parse().map_err(|_| Error::Invalid(format!("bad tp in: {line}")))?;
                } else if let Some(v) = tok.strip_prefix("pp=") {
                    pp = v.parse().map_err(|_| Error::Invalid(format!("bad pp in: {line}")))?;
                } else if let Some(v) = tok.strip_prefix("replicas=") {
                    replicas =
                        v.parse().map_err(|_| Error::Invalid(format!("bad replicas: {line}")))?;
                } else if let Some(v) = tok.strip_prefix("d=") {
                    for n in v.split(',') {
                        d.push(
                            n.parse::<u64>()
                                .map_err(|_| Error::Invalid(format!("bad d entry: {line}")))?,
                        );
                    }
                }
            }
            groups.push(DeployedGroup {
                config: ParallelConfig::new(tp, pp, u32::MAX)?,
                replicas,
            });
            assignment.push(d);
        }
    }
    let objective = objective.ok_or_else(|| Error::Invalid("missing objective_s".into()))?;
    Ok((groups, assignment, objective))
}
