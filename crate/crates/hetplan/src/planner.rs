//! Stage-1 deployment planning: enumerate candidate deployment plans under
//! the GPU budget, filter by the length-based lower bound, solve the
//! dispatch program for each survivor, and pick the best. Also the exact
//! joint oracle (plans and dispatch co-optimized by full enumeration) and
//! replan-on-change.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::bucketing::{BatchHistogram, Bucketing};
use crate::configspace::{self, ClusterSpec, ParallelConfig};
use crate::costmodel::CostProfile;
use crate::dispatcher::{self, DeployedGroup, DispatchOptions, DispatchPlan};
use crate::error::{Error, Result};
use crate::optimizer::SolveOptions;

/// Replica counts per candidate configuration (aligned to a candidate
/// slice). A config with count 0 is not deployed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentPlan {
    pub replicas: Vec<u64>,
}

impl DeploymentPlan {
    pub fn gpus_used(&self, candidates: &[ParallelConfig]) -> u64 {
        self.replicas
            .iter()
            .zip(candidates)
            .map(|(&p, c)| p * c.gpus_per_replica() as u64)
            .sum()
    }

    pub fn total_replicas(&self) -> u64 {
        self.replicas.iter().sum()
    }

    pub fn deployed_groups(&self, candidates: &[ParallelConfig]) -> Vec<DeployedGroup> {
        self.replicas
            .iter()
            .zip(candidates)
            .filter(|(&p, _)| p > 0)
            .map(|(&p, &config)| DeployedGroup { config, replicas: p })
            .collect()
    }

    /// Order-independent (config, count) view for cross-problem equality.
    pub fn normalized(&self, candidates: &[ParallelConfig]) -> Vec<(u32, u32, u64)> {
        let mut v: Vec<(u32, u32, u64)> = self
            .replicas
            .iter()
            .zip(candidates)
            .filter(|(&p, _)| p > 0)
            .map(|(&p, c)| (c.tp_degree, c.pp_stages, p))
            .collect();
        v.sort_unstable();
        v
    }

    /// `<tp,pp>xN` notation.
    pub fn label(&self, candidates: &[ParallelConfig]) -> String {
        let parts: Vec<String> = self
            .replicas
            .iter()
            .zip(candidates)
            .filter(|(&p, _)| p > 0)
            .map(|(&p, c)| format!("{}x{}", c.label(), p))
            .collect();
        parts.join(" ")
    }
}

/// Inputs for expectation-level planning.
#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub cluster: ClusterSpec,
    pub candidates: Vec<ParallelConfig>,
    pub profile: CostProfile,
    pub boundaries: Bucketing,
    /// Expected fraction of sequences per bucket (sums to 1).
    pub fractions: Vec<f64>,
    /// Global per-step batch size.
    pub batch_size: u64,
}

impl PlanningProblem {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Invalid("no candidate configurations".into()));
        }
        if self.fractions.len() != self.boundaries.len() {
            return Err(Error::Invalid("fractions do not match boundaries".into()));
        }
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("bucket fractions must sum to 1, got {sum}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        let max_n = self
            .candidates
            .iter()
            .map(|c| c.gpus_per_replica())
            .max()
            .unwrap();
        if self.cluster.total_gpus < max_n {
            return Err(Error::Invalid(format!(
                "cluster of {} GPUs cannot deploy a {}-GPU replica",
                self.cluster.total_gpus, max_n
            )));
        }
        Ok(())
    }

    /// Expected per-bucket demands: ceil(B * f_j), guarded against float
    /// slop when B * f_j is an exact integer.
    pub fn demands(&self) -> Vec<u64> {
        self.fractions
            .iter()
            .map(|&f| (self.batch_size as f64 * f - 1e-9).ceil().max(0.0) as u64)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PlannerOptions {
    /// Apply lower-bound filtering before the per-plan solves.
    pub lb_filter: bool,
    /// Keep plans with bound <= (1 + threshold) * min bound.
    pub threshold: f64,
    /// Concurrent per-plan solves (results merged deterministically).
    pub workers: usize,
    pub solve: SolveOptions,
    /// Full-enumeration cap for the joint oracle.
    pub oracle_plan_cap: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self {
            lb_filter: true,
            threshold: 0.15,
            workers: 4,
            solve: SolveOptions::default(),
            oracle_plan_cap: 200_000,
        }
    }
}

/// All maximal feasible deployment plans: within the GPU budget, covering
/// the last bucket, and with no room left for one more replica of any
/// candidate. Maximality loses nothing because extra replicas never slow
/// a plan down; the joint oracle enumerates non-maximal plans too.
pub fn enumerate_plans(
    cluster: &ClusterSpec,
    candidates: &[ParallelConfig],
    boundaries: &Bucketing,
) -> Result<Vec<DeploymentPlan>> {
    let r_target = boundaries.len();
    let ranges: Vec<usize> =
        candidates.iter().map(|c| configspace::supported_ranges(c, boundaries)).collect();
    if !ranges.iter().any(|&r| r == r_target) {
        return Err(Error::LongestBucketUncoverable(r_target - 1));
    }
    let min_n = candidates.iter().map(|c| c.gpus_per_replica() as u64).min().unwrap();
    let mut plans = Vec::new();
    let mut counts = vec![0u64; candidates.len()];
    fn rec(
        idx: usize,
        remaining: u64,
        candidates: &[ParallelConfig],
        ranges: &[usize],
        r_target: usize,
        min_n: u64,
        counts: &mut Vec<u64>,
        plans: &mut Vec<DeploymentPlan>,
    ) {
        if idx == candidates.len() {
            if remaining < min_n
                && counts
                    .iter()
                    .zip(ranges)
                    .any(|(&p, &r)| p > 0 && r == r_target)
            {
                plans.push(DeploymentPlan { replicas: counts.clone() });
            }
            return;
        }
        let n = candidates[idx].gpus_per_replica() as u64;
        for p in (0..=remaining / n).rev() {
            counts[idx] = p;
            rec(idx + 1, remaining - p * n, candidates, ranges, r_target, min_n, counts, plans);
        }
        counts[idx] = 0;
    }
    rec(
        0,
        cluster.total_gpus as u64,
        candidates,
        &ranges,
        r_target,
        min_n,
        &mut counts,
        &mut plans,
    );
    Ok(plans)
}

/// Length-based lower bound on a plan's balanced step time.
#[derive(Debug, Clone)]
pub struct LowerBoundEstimate {
    /// Length-based per-group times (deployed groups only).
    pub group_times: Vec<f64>,
    /// GPUs per deployed group (p_i * n_i).
    pub group_gpus: Vec<u64>,
    /// sum(N_i * t_i) / N.
    pub bound: f64,
}

/// Estimate a plan's achievable step time from below: dispatch every
/// bucket to its highest-ATB supporter, then average the resulting
/// GPU-seconds over the whole cluster. Workload balancing can only move
/// work toward lower-ATB groups, so (in the fluid regime) the balanced
/// optimum cannot beat this.
pub fn lower_bound(
    plan: &DeploymentPlan,
    candidates: &[ParallelConfig],
    demands: &[u64],
    profile: &CostProfile,
    boundaries: &Bucketing,
    total_gpus: u32,
) -> Result<LowerBoundEstimate> {
    let groups = plan.deployed_groups(candidates);
    let batch = BatchHistogram::from_counts(demands.to_vec());
    let by_len = dispatcher::dispatch_by_length(&groups, &batch, boundaries, profile)?;
    let group_gpus: Vec<u64> =
        groups.iter().map(|g| g.replicas * g.config.gpus_per_replica() as u64).collect();
    let weighted: f64 = by_len
        .group_times
        .iter()
        .zip(&group_gpus)
        .map(|(&t, &n)| t * n as f64)
        .sum();
    Ok(LowerBoundEstimate {
        group_times: by_len.group_times,
        group_gpus,
        bound: weighted / total_gpus as f64,
    })
}

/// Indices of plans whose bound is within `threshold` of the best bound.
pub fn filter_plans(bounds: &[f64], threshold: f64) -> Vec<usize> {
    let min = bounds.iter().copied().fold(f64::INFINITY, f64::min);
    bounds
        .iter()
        .enumerate()
        .filter(|(_, &b)| b <= (1.0 + threshold) * min)
        .map(|(i, _)| i)
        .collect()
}

/// Outcome of planning: the chosen plan and its solved dispatch.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan: DeploymentPlan,
    pub dispatch: DispatchPlan,
    pub objective: f64,
    /// Plans enumerated / kept after filtering / solved.
    pub plans_enumerated: usize,
    pub plans_solved: usize,
}

fn solve_plans(
    plans: &[DeploymentPlan],
    indices: &[usize],
    candidates: &[ParallelConfig],
    demands: &[u64],
    profile: &CostProfile,
    boundaries: &Bucketing,
    opts: &PlannerOptions,
) -> Result<Vec<Option<(usize, DispatchPlan)>>> {
    let batch = BatchHistogram::from_counts(demands.to_vec());
    let dispatch_opts = DispatchOptions { solve: opts.solve.clone() };
    let results: Mutex<Vec<Option<Result<(usize, DispatchPlan)>>>> =
        Mutex::new((0..indices.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    let workers = opts.workers.max(1).min(indices.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let slot = cursor.fetch_add(1, Ordering::Relaxed);
                if slot >= indices.len() {
                    break;
                }
                let plan_idx = indices[slot];
                let groups = plans[plan_idx].deployed_groups(candidates);
                let solved = dispatcher::dispatch_balanced(
                    &groups,
                    &batch,
                    boundaries,
                    profile,
                    &dispatch_opts,
                )
                .map(|d| (plan_idx, d));
                results.lock().unwrap()[slot] = Some(solved);
            });
        }
    });

    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled slot").map(Some))
        .collect()
}

/// Scan many plans for the global best: rank by a cheap heuristic
/// incumbent, then solve in that order with an evolving cutoff so plans
/// that provably cannot win exit at their root relaxation. The eventual
/// winner is still solved to the options' full guarantee, and exact ties
/// are explored so the tie-break stays faithful.
fn solve_plans_cutoff(
    plans: &[DeploymentPlan],
    candidates: &[ParallelConfig],
    demands: &[u64],
    profile: &CostProfile,
    boundaries: &Bucketing,
    opts: &PlannerOptions,
) -> Result<Vec<Option<(usize, DispatchPlan)>>> {
    let batch = BatchHistogram::from_counts(demands.to_vec());
    // Pass 1: heuristic incumbents (greedy + local search, no tree).
    let mut est = Vec::with_capacity(plans.len());
    let probe = DispatchOptions {
        solve: SolveOptions { node_limit: 0, ..opts.solve.clone() },
    };
    for (i, plan) in plans.iter().enumerate() {
        let groups = plan.deployed_groups(candidates);
        let d = dispatcher::dispatch_balanced(&groups, &batch, boundaries, profile, &probe)?;
        est.push((d.objective, i));
    }
    est.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // Pass 2: exact-to-options solves, best first, with cutoff.
    let mut results: Vec<Option<(usize, DispatchPlan)>> = vec![None; plans.len()];
    let mut cutoff: Option<f64> = None;
    for &(_, i) in &est {
        let groups = plans[i].deployed_groups(candidates);
        let solve = SolveOptions { cutoff, ..opts.solve.clone() };
        let d = dispatcher::dispatch_balanced(
            &groups,
            &batch,
            boundaries,
            profile,
            &DispatchOptions { solve },
        )?;
        cutoff = Some(match cutoff {
            None => d.objective,
            Some(c) => c.min(d.objective),
        });
        results[i] = Some((i, d));
    }
    Ok(results)
}

/// Deterministic argmin over solved plans: objective, then fewer GPUs,
/// fewer replicas, lexicographically smaller replica vector.
fn select_best(
    solved: Vec<Option<(usize, DispatchPlan)>>,
    plans: &[DeploymentPlan],
    candidates: &[ParallelConfig],
) -> Option<(usize, DispatchPlan)> {
    let mut best: Option<(usize, DispatchPlan)> = None;
    for entry in solved.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some((bi, bd)) => {
                let (obj, bobj) = (entry.1.objective, bd.objective);
                let key = |i: &usize| {
                    (
                        plans[*i].gpus_used(candidates),
                        plans[*i].total_replicas(),
                        plans[*i].replicas.clone(),
                    )
                };
                obj < bobj || (obj == bobj && key(&entry.0) < key(bi))
            }
        };
        if better {
            best = Some(entry);
        }
    }
    best
}

/// Stage-1 planning: enumerate maximal plans, filter by lower bound, solve
/// each survivor's dispatch on the expected demands, and return the best.
pub fn plan_deployment(problem: &PlanningProblem, opts: &PlannerOptions) -> Result<PlanOutcome> {
    problem.validate()?;
    let demands = problem.demands();
    let plans = enumerate_plans(&problem.cluster, &problem.candidates, &problem.boundaries)?;
    let plans_enumerated = plans.len();

    let kept: Vec<usize> = if opts.lb_filter {
        let mut bounds = Vec::with_capacity(plans.len());
        for p in &plans {
            bounds.push(
                lower_bound(
                    p,
                    &problem.candidates,
                    &demands,
                    &problem.profile,
                    &problem.boundaries,
                    problem.cluster.total_gpus,
                )?
                .bound,
            );
        }
        filter_plans(&bounds, opts.threshold)
    } else {
        (0..plans.len()).collect()
    };
    assert!(!kept.is_empty(), "filter must keep the minimum-bound plan");

    // Small survivor sets solve concurrently; large ones (mixtures whose
    // coverage barely constrains the enumeration) go best-first with a
    // cutoff so hopeless plans exit at their root relaxation.
    let solved = if kept.len() <= 16 {
        solve_plans(
            &plans,
            &kept,
            &problem.candidates,
            &demands,
            &problem.profile,
            &problem.boundaries,
            opts,
        )?
    } else {
        let kept_plans: Vec<DeploymentPlan> =
            kept.iter().map(|&i| plans[i].clone()).collect();
        let solved_kept = solve_plans_cutoff(
            &kept_plans,
            &problem.candidates,
            &demands,
            &problem.profile,
            &problem.boundaries,
            opts,
        )?;
        let mut solved: Vec<Option<(usize, DispatchPlan)>> = vec![None; plans.len()];
        for (slot, entry) in solved_kept.into_iter().enumerate() {
            if let Some((_, d)) = entry {
                solved[kept[slot]] = Some((kept[slot], d));
            }
        }
        solved
    };
    let plans_solved = kept.len();
    let (idx, dispatch) = select_best(solved, &plans, &problem.candidates)
        .expect("at least one plan solved");
    Ok(PlanOutcome {
        plan: plans[idx].clone(),
        objective: dispatch.objective,
        dispatch,
        plans_enumerated,
        plans_solved,
    })
}

/// Exact joint oracle: enumerate every feasible plan (not just maximal
/// ones) covering the occupied buckets, solve each exactly on the concrete
/// demands, and return the global best under the same tie-break.
pub fn solve_joint(
    cluster: &ClusterSpec,
    candidates: &[ParallelConfig],
    profile: &CostProfile,
    boundaries: &Bucketing,
    demands: &[u64],
    opts: &PlannerOptions,
) -> Result<PlanOutcome> {
    let ranges: Vec<usize> =
        candidates.iter().map(|c| configspace::supported_ranges(c, boundaries)).collect();
    let occupied_max = demands.iter().rposition(|&b| b > 0);
    let Some(occupied_max) = occupied_max else {
        return Err(Error::Invalid("joint oracle needs a non-empty batch".into()));
    };
    if !ranges.iter().any(|&r| r > occupied_max) {
        return Err(Error::LongestBucketUncoverable(occupied_max));
    }

    // Enumerate all replica-count vectors within budget that cover the
    // occupied buckets.
    let mut plans = Vec::new();
    let mut counts = vec![0u64; candidates.len()];
    fn rec(
        idx: usize,
        remaining: u64,
        candidates: &[ParallelConfig],
        ranges: &[usize],
        occupied_max: usize,
        counts: &mut Vec<u64>,
        plans: &mut Vec<DeploymentPlan>,
        cap: usize,
    ) -> Result<()> {
        if idx == candidates.len() {
            if counts
                .iter()
                .zip(ranges)
                .any(|(&p, &r)| p > 0 && r > occupied_max)
            {
                if plans.len() >= cap {
                    return Err(Error::OracleCapExceeded { cap });
                }
                plans.push(DeploymentPlan { replicas: counts.clone() });
            }
            return Ok(());
        }
        let n = candidates[idx].gpus_per_replica() as u64;
        for p in 0..=remaining / n {
            counts[idx] = p;
            rec(idx + 1, remaining - p * n, candidates, ranges, occupied_max, counts, plans, cap)?;
        }
        counts[idx] = 0;
        Ok(())
    }
    rec(
        0,
        cluster.total_gpus as u64,
        candidates,
        &ranges,
        occupied_max,
        &mut counts,
        &mut plans,
        opts.oracle_plan_cap,
    )?;

    let solved = solve_plans_cutoff(&plans, candidates, demands, profile, boundaries, opts)?;
    let plans_solved = plans.len();
    let (idx, dispatch) =
        select_best(solved, &plans, candidates).expect("oracle solved at least one plan");
    Ok(PlanOutcome {
        plan: plans[idx].clone(),
        objective: dispatch.objective,
        dispatch,
        plans_enumerated: plans_solved,
        plans_solved,
    })
}

/// Re-run planning on a changed problem; flags whether the plan moved.
pub fn replan_on_change(
    current: &DeploymentPlan,
    current_candidates: &[ParallelConfig],
    problem: &PlanningProblem,
    opts: &PlannerOptions,
) -> Result<(PlanOutcome, bool)> {
    let outcome = plan_deployment(problem, opts)?;
    let changed =
        outcome.plan.normalized(&problem.candidates) != current.normalized(current_candidates);
    Ok((outcome, changed))
}

/// Plan file body: CSV rows for deployed configs plus summary comments.
pub fn format_plan(
    plan: &DeploymentPlan,
    candidates: &[ParallelConfig],
    objective: f64,
) -> String {
    use std::fmt::Write;
    let mut out = String::from("tp,pp,replicas\n");
    for (&p, c) in plan.replicas.iter().zip(candidates) {
        if p > 0 {
            writeln!(out, "{},{},{}", c.tp_degree, c.pp_stages, p).unwrap();
        }
    }
    writeln!(out, "# plan {}", plan.label(candidates)).unwrap();
    writeln!(out, "# gpus_used {}", plan.gpus_used(candidates)).unwrap();
    writeln!(out, "# expected_step_time_s {objective}").unwrap();
    out
}

/// Parse a plan file body back into (tp, pp, replicas) rows.
pub fn parse_plan(text: &str) -> Result<Vec<(u32, u32, u64)>> {
    let mut rows = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') || line == "tp,pp,replicas" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Invalid(format!("bad plan row: {line}")));
        }
        rows.push((
            fields[0].trim().parse().map_err(|_| Error::Invalid(format!("bad tp: {line}")))?,
            fields[1].trim().parse().map_err(|_| Error::Invalid(format!("bad pp: {line}")))?,
            fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad replicas: {line}")))?,
        ));
    }
    Ok(rows)
}
