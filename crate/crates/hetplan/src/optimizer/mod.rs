//! Exact solver for the minimax integer assignment programs behind
//! deployment planning and per-step dispatch.
//!
//! An instance has replica groups (p_i replicas, per-bucket unit costs,
//! chunk sizes, a pipeline bubble factor) and per-bucket demands B_j. We
//! choose nonnegative integers d_{i,j} covering every demand
//! (sum over supporting groups = B_j, d_{i,j} <= B_j * p_i) to minimize
//! the slowest group's time evaluated on per-replica ceil shares
//! ceil(d_{i,j} / p_i).
//!
//! Internally the search runs over per-replica shares q_{i,j} with
//! coverage sum_i p_i * q_{i,j} >= B_j, which is equivalent: any d yields
//! shares q = ceil(d/p) with that coverage, and any covering q can be
//! filled back into an exact d without raising any share. Group time is
//! linear in q except for the bubble term (p-1) * max_j min(q_j, b_j) *
//! g_j, whose single concave kink per bucket is handled exactly by
//! branch-and-bound: LP relaxations use the chord of the kinked term over
//! the current box, integrality is restored by floor/ceil splits, and a
//! box straddling a kink is split at the kink. Leaves are evaluated
//! through the same float formula as the cost model, so the reported
//! objective is exactly the minimum over feasible integer assignments.

mod lp;

use lp::{LpProblem, LpStatus, Sense};

use crate::error::{Error, Result};

/// One deployed replica group as the solver sees it.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    /// Replica count p_i (>= 1; groups with p = 0 are dropped upstream).
    pub replicas: u64,
    /// Pipeline bubble multiplier, (pp_stages - 1) as f64.
    pub bubble_factor: f64,
    /// Per-sequence cost per supported bucket, seconds (g_i(s_j), j < r_i).
    pub unit_costs: Vec<f64>,
    /// Memory-saturating chunk size per supported bucket (b_{i,j} >= 1).
    pub chunk_sizes: Vec<u64>,
}

impl GroupSpec {
    /// Number of leading buckets this group supports.
    pub fn supported_range(&self) -> usize {
        self.unit_costs.len()
    }
}

#[derive(Debug, Clone)]
pub struct MinimaxInstance {
    pub groups: Vec<GroupSpec>,
    /// Demand B_j per bucket.
    pub demands: Vec<u64>,
}

impl MinimaxInstance {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Invalid("instance has no groups".into()));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.replicas == 0 {
                return Err(Error::Invalid(format!("group {i} has zero replicas")));
            }
            if g.unit_costs.len() != g.chunk_sizes.len()
                || g.unit_costs.len() > self.demands.len()
            {
                return Err(Error::Invalid(format!("group {i} has inconsistent bucket data")));
            }
            if g.unit_costs.iter().any(|&c| !(c > 0.0)) {
                return Err(Error::Invalid(format!("group {i} has non-positive unit cost")));
            }
            if g.chunk_sizes.iter().any(|&b| b == 0) {
                return Err(Error::Invalid(format!("group {i} has zero chunk size")));
            }
            if g.bubble_factor < 0.0 {
                return Err(Error::Invalid(format!("group {i} has negative bubble factor")));
            }
        }
        for (j, &b) in self.demands.iter().enumerate() {
            if b > 0 && !self.groups.iter().any(|g| g.supported_range() > j) {
                return Err(Error::InfeasibleBucket(j));
            }
        }
        Ok(())
    }

    /// Time of one replica of group `i` processing `per_replica` counts.
    ///
    /// Kept operation-for-operation in sync with
    /// `costmodel::replica_time` so re-evaluation through the cost model
    /// reproduces the same float.
    pub fn group_time(&self, i: usize, per_replica: &[u64]) -> f64 {
        let g = &self.groups[i];
        let mut compute = 0.0f64;
        let mut max_chunk = 0.0f64;
        for (j, &q) in per_replica.iter().enumerate().take(g.supported_range()) {
            if q == 0 {
                continue;
            }
            let cost = g.unit_costs[j];
            let b = g.chunk_sizes[j];
            let full = q / b;
            let rem = q % b;
            let full_time = b as f64 * cost;
            let rem_time = rem as f64 * cost;
            compute += full as f64 * full_time + rem_time;
            if full >= 1 && full_time > max_chunk {
                max_chunk = full_time;
            }
            if rem >= 1 && rem_time > max_chunk {
                max_chunk = rem_time;
            }
        }
        compute + g.bubble_factor * max_chunk
    }

    /// Per-replica ceil shares of an assignment.
    pub fn ceil_shares(&self, assignment: &[Vec<u64>]) -> Vec<Vec<u64>> {
        assignment
            .iter()
            .zip(&self.groups)
            .map(|(row, g)| row.iter().map(|&d| d.div_ceil(g.replicas)).collect())
            .collect()
    }

    /// Minimax objective of an assignment: slowest group on ceil shares.
    pub fn evaluate(&self, assignment: &[Vec<u64>]) -> f64 {
        let shares = self.ceil_shares(assignment);
        (0..self.groups.len())
            .map(|i| self.group_time(i, &shares[i]))
            .fold(0.0, f64::max)
    }

    fn check_assignment(&self, assignment: &[Vec<u64>]) -> Result<()> {
        for (j, &b) in self.demands.iter().enumerate() {
            let covered: u64 = assignment
                .iter()
                .map(|row| row.get(j).copied().unwrap_or(0))
                .sum();
            if covered != b {
                return Err(Error::Invalid(format!(
                    "bucket {j}: assigned {covered} != demand {b}"
                )));
            }
            for (i, row) in assignment.iter().enumerate() {
                let d = row.get(j).copied().unwrap_or(0);
                if d > b * self.groups[i].replicas {
                    return Err(Error::Invalid(format!(
                        "bucket {j}: group {i} overloaded ({d} > {})",
                        b * self.groups[i].replicas
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Node limit hit; the best incumbent is returned.
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MinimaxSolution {
    /// d_{i,j}, aligned to each group's supported range.
    pub assignment: Vec<Vec<u64>>,
    /// ceil(d_{i,j} / p_i).
    pub per_replica: Vec<Vec<u64>>,
    /// Slowest-group time of `assignment` under the instance's cost data.
    pub objective: f64,
    pub status: SolveStatus,
    /// Branch-and-bound nodes expanded (deterministic work measure).
    pub nodes: u64,
    /// Simplex iterations across all node relaxations.
    pub lp_iterations: u64,
    pub trace: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub node_limit: u64,
    /// Accept incumbents within this relative distance of the proven
    /// bound. 0 certifies the exact integer optimum (explores bound
    /// ties); simulation-scale callers use a small positive gap, like
    /// stock MILP solvers do by default.
    pub rel_gap: f64,
    /// Abandon subtrees that provably cannot beat this value (ties are
    /// still explored). Used when scanning many instances for the best
    /// one: the instance that wins is still solved exactly, losers exit
    /// at the root.
    pub cutoff: Option<f64>,
    /// Model per-replica shares as exact d/p instead of ceil(d/p)
    /// (relaxation for decomposition-gap studies).
    pub relaxed_shares: bool,
    pub trace: bool,
    /// Known-feasible assignments used as starting incumbents; the result
    /// is never worse than the best seed.
    pub seeds: Vec<Vec<Vec<u64>>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            node_limit: 1_000_000,
            rel_gap: 0.0,
            cutoff: None,
            relaxed_shares: false,
            trace: false,
            seeds: Vec::new(),
        }
    }
}

/// Deterministic solve-cost estimate in milliseconds, derived from work
/// counters so repeated runs produce identical output files. Wall-clock
/// timings belong on stderr.
pub fn estimated_solve_ms(nodes: u64, lp_iterations: u64) -> f64 {
    (nodes as f64 * 20.0 + lp_iterations as f64 * 2.0 + 50.0) / 1000.0
}

struct Pair {
    group: usize,
    bucket: usize,
    cost: f64,
    chunk: u64,
}

struct SearchCtx<'a> {
    inst: &'a MinimaxInstance,
    pairs: Vec<Pair>,
    /// Pair indices per group.
    group_pairs: Vec<Vec<usize>>,
    /// Pair indices per active bucket (bucket -> pairs supporting it).
    bucket_pairs: Vec<(usize, Vec<usize>)>,
    cost_scale: f64,
}

impl SearchCtx<'_> {
    /// Exact objective of integer per-replica shares (pair-indexed).
    fn evaluate_q(&self, q: &[u64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, g) in self.inst.groups.iter().enumerate() {
            let mut shares = vec![0u64; g.supported_range()];
            for &k in &self.group_pairs[i] {
                shares[self.pairs[k].bucket] = q[k];
            }
            let t = self.inst.group_time(i, &shares);
            if t > worst {
                worst = t;
            }
        }
        worst
    }

    /// Largest share of pair `k` that could still beat `threshold`:
    /// group time is at least g*q + beta*g*min(q, b) from this pair alone.
    fn share_cap(&self, k: usize, threshold: f64) -> u64 {
        let pair = &self.pairs[k];
        let g = pair.cost;
        let beta = self.inst.groups[pair.group].bubble_factor;
        let b = pair.chunk as f64;
        if threshold <= 0.0 {
            return 0;
        }
        let cap = if g * b * (1.0 + beta) > threshold {
            threshold / (g * (1.0 + beta))
        } else {
            (threshold - beta * g * b) / g
        };
        cap.floor().max(0.0) as u64
    }

    /// LP relaxation over the box [lo, hi]; returns (bound, x, iterations).
    fn node_lp(&self, lo: &[u64], hi: &[u64]) -> (LpStatus, f64, Vec<f64>, u64) {
        let np = self.pairs.len();
        // chi variables only for groups with a bubble and supported pairs.
        let mut chi_var = vec![usize::MAX; self.inst.groups.len()];
        let mut next = np;
        for (i, g) in self.inst.groups.iter().enumerate() {
            if g.bubble_factor > 0.0 && !self.group_pairs[i].is_empty() {
                chi_var[i] = next;
                next += 1;
            }
        }
        let t_var = next;
        let mut prob = LpProblem::new(t_var + 1);
        prob.set_objective(t_var, 1.0);

        let scaled = |c: f64| c / self.cost_scale;

        // Group time rows: t - sum g x - beta chi >= sum g lo.
        for (i, g) in self.inst.groups.iter().enumerate() {
            if self.group_pairs[i].is_empty() {
                continue;
            }
            let mut coeffs = vec![(t_var, 1.0)];
            let mut rhs = 0.0;
            for &k in &self.group_pairs[i] {
                let c = scaled(self.pairs[k].cost);
                coeffs.push((k, -c));
                rhs += c * lo[k] as f64;
            }
            if chi_var[i] != usize::MAX {
                coeffs.push((chi_var[i], -g.bubble_factor));
            }
            prob.add_row(coeffs, Sense::Ge, rhs);
        }
        // Coverage rows.
        for (j, ks) in &self.bucket_pairs {
            let mut rhs = self.inst.demands[*j] as f64;
            let mut coeffs = Vec::with_capacity(ks.len());
            for &k in ks {
                let p = self.inst.groups[self.pairs[k].group].replicas as f64;
                coeffs.push((k, p));
                rhs -= p * lo[k] as f64;
            }
            if rhs > 0.0 {
                prob.add_row(coeffs, Sense::Ge, rhs);
            }
        }
        // Chord rows for the bubble cap, exact on boxes that do not
        // straddle the chunk-size kink.
        for (k, pair) in self.pairs.iter().enumerate() {
            let cv = chi_var[pair.group];
            if cv == usize::MAX {
                continue;
            }
            let g = scaled(pair.cost);
            let b = pair.chunk as f64;
            let (l, h) = (lo[k] as f64, hi[k] as f64);
            let (c1, rhs) = if h <= b {
                (g, g * l)
            } else if l >= b {
                (0.0, g * b)
            } else {
                let slope = g * (b - l) / (h - l);
                (slope, g * l)
            };
            let mut coeffs = vec![(cv, 1.0)];
            if c1 != 0.0 {
                coeffs.push((k, -c1));
            }
            prob.add_row(coeffs, Sense::Ge, rhs);
        }
        // Box upper bounds.
        for k in 0..np {
            prob.add_row(vec![(k, 1.0)], Sense::Le, (hi[k] - lo[k]) as f64);
        }

        let sol = prob.solve();
        let bound = sol.objective * self.cost_scale;
        let mut q = vec![0.0f64; np];
        for k in 0..np {
            q[k] = lo[k] as f64 + sol.x.get(k).copied().unwrap_or(0.0);
        }
        (sol.status, bound, q, sol.iterations)
    }

    /// Round an LP point up to a feasible integer q, bumping if needed.
    fn round_up(&self, q_lp: &[f64], lo: &[u64], hi: &[u64]) -> Vec<u64> {
        let mut q: Vec<u64> = q_lp
            .iter()
            .enumerate()
            .map(|(k, &v)| (((v - 1e-9).ceil().max(0.0)) as u64).clamp(lo[k], hi[k]))
            .collect();
        for (j, ks) in &self.bucket_pairs {
            let mut cap: u64 =
                ks.iter().map(|&k| self.inst.groups[self.pairs[k].group].replicas * q[k]).sum();
            let mut it = ks.iter().cycle();
            while cap < self.inst.demands[*j] {
                let &k = it.next().unwrap();
                if q[k] < hi[k] {
                    q[k] += 1;
                    cap += self.inst.groups[self.pairs[k].group].replicas;
                }
            }
        }
        q
    }

    fn group_time_of_q(&self, i: usize, q: &[u64]) -> f64 {
        let mut shares = vec![0u64; self.inst.groups[i].supported_range()];
        for &k in &self.group_pairs[i] {
            shares[self.pairs[k].bucket] = q[k];
        }
        self.inst.group_time(i, &shares)
    }

    /// Deterministic hill climb: repeatedly shed one unit of the slowest
    /// group's share, transferring coverage to another supporter when the
    /// bucket would otherwise go short. Strict-improvement only.
    fn local_search(&self, q: &mut Vec<u64>) {
        let n_groups = self.inst.groups.len();
        let mut times: Vec<f64> = (0..n_groups).map(|i| self.group_time_of_q(i, q)).collect();
        let mut slack: Vec<u64> = self
            .bucket_pairs
            .iter()
            .map(|(j, ks)| {
                let cap: u64 = ks
                    .iter()
                    .map(|&k| self.inst.groups[self.pairs[k].group].replicas * q[k])
                    .sum();
                cap - self.inst.demands[*j]
            })
            .collect();
        let bucket_slot: std::collections::HashMap<usize, usize> = self
            .bucket_pairs
            .iter()
            .enumerate()
            .map(|(slot, (j, _))| (*j, slot))
            .collect();

        for _ in 0..5000 {
            let imax = (0..n_groups)
                .max_by(|&a, &b| times[a].total_cmp(&times[b]).then(b.cmp(&a)))
                .unwrap();
            let t_max = times[imax];
            if t_max == 0.0 {
                break;
            }
            // Candidate moves: (pair to shrink, optional (pair, delta) to grow).
            let mut best: Option<(usize, Option<(usize, u64)>, f64)> = None;
            for &k in &self.group_pairs[imax] {
                if q[k] == 0 {
                    continue;
                }
                let p_src = self.inst.groups[imax].replicas;
                let slot = bucket_slot[&self.pairs[k].bucket];
                let try_move = |recv: Option<(usize, u64)>, q: &mut Vec<u64>| {
                    q[k] -= 1;
                    if let Some((k2, delta)) = recv {
                        q[k2] += delta;
                    }
                    let t_src = self.group_time_of_q(imax, q);
                    let t_new = (0..n_groups)
                        .map(|i| {
                            if i == imax {
                                t_src
                            } else if let Some((k2, _)) = recv {
                                if self.pairs[k2].group == i {
                                    self.group_time_of_q(i, q)
                                } else {
                                    times[i]
                                }
                            } else {
                                times[i]
                            }
                        })
                        .fold(0.0f64, f64::max);
                    if let Some((k2, delta)) = recv {
                        q[k2] -= delta;
                    }
                    q[k] += 1;
                    t_new
                };
                if slack[slot] >= p_src {
                    let t_new = try_move(None, q);
                    if t_new < t_max && best.as_ref().is_none_or(|b| t_new < b.2) {
                        best = Some((k, None, t_new));
                    }
                } else {
                    let deficit = p_src - slack[slot];
                    for &k2 in &self.bucket_pairs[slot].1 {
                        let i2 = self.pairs[k2].group;
                        if i2 == imax {
                            continue;
                        }
                        let delta = deficit.div_ceil(self.inst.groups[i2].replicas);
                        let t_new = try_move(Some((k2, delta)), q);
                        if t_new < t_max && best.as_ref().is_none_or(|b| t_new < b.2) {
                            best = Some((k, Some((k2, delta)), t_new));
                        }
                    }
                }
            }
            let Some((k, recv, _)) = best else { break };
            let slot = bucket_slot[&self.pairs[k].bucket];
            q[k] -= 1;
            if let Some((k2, delta)) = recv {
                q[k2] += delta;
                times[self.pairs[k2].group] = self.group_time_of_q(self.pairs[k2].group, q);
            }
            times[imax] = self.group_time_of_q(imax, q);
            let cap: u64 = self.bucket_pairs[slot]
                .1
                .iter()
                .map(|&kk| self.inst.groups[self.pairs[kk].group].replicas * q[kk])
                .sum();
            slack[slot] = cap - self.inst.demands[self.pairs[k].bucket];
        }
    }
}

/// Solve the minimax dispatch program exactly (branch-and-bound with LP
/// relaxations). With `relaxed_shares` the ceil in the objective is
/// replaced by exact division, implemented by rescaling the instance
/// (p -> 1, g -> g/p, b -> b*p).
pub fn solve_minimax(inst: &MinimaxInstance, opts: &SolveOptions) -> Result<MinimaxSolution> {
    inst.validate()?;
    if opts.relaxed_shares {
        let fluid = MinimaxInstance {
            groups: inst
                .groups
                .iter()
                .map(|g| GroupSpec {
                    replicas: 1,
                    bubble_factor: g.bubble_factor,
                    unit_costs: g.unit_costs.iter().map(|c| c / g.replicas as f64).collect(),
                    chunk_sizes: g.chunk_sizes.iter().map(|&b| b * g.replicas).collect(),
                })
                .collect(),
            demands: inst.demands.clone(),
        };
        let sub = solve_minimax(
            &fluid,
            &SolveOptions { relaxed_shares: false, seeds: Vec::new(), ..opts.clone() },
        )?;
        let per_replica = inst.ceil_shares(&sub.assignment);
        return Ok(MinimaxSolution { per_replica, ..sub });
    }

    let active: Vec<usize> =
        (0..inst.demands.len()).filter(|&j| inst.demands[j] > 0).collect();
    let mut pairs = Vec::new();
    let mut group_pairs = vec![Vec::new(); inst.groups.len()];
    let mut bucket_pairs: Vec<(usize, Vec<usize>)> =
        active.iter().map(|&j| (j, Vec::new())).collect();
    for (bi, &j) in active.iter().enumerate() {
        for (i, g) in inst.groups.iter().enumerate() {
            if g.supported_range() > j {
                let k = pairs.len();
                pairs.push(Pair {
                    group: i,
                    bucket: j,
                    cost: g.unit_costs[j],
                    chunk: g.chunk_sizes[j],
                });
                group_pairs[i].push(k);
                bucket_pairs[bi].1.push(k);
            }
        }
    }

    if pairs.is_empty() {
        // Nothing to dispatch.
        let assignment: Vec<Vec<u64>> =
            inst.groups.iter().map(|g| vec![0; g.supported_range()]).collect();
        return Ok(MinimaxSolution {
            per_replica: inst.ceil_shares(&assignment),
            objective: inst.evaluate(&assignment),
            assignment,
            status: SolveStatus::Optimal,
            nodes: 0,
            lp_iterations: 0,
            trace: opts.trace.then(String::new),
        });
    }

    let cost_scale = pairs.iter().map(|p| p.cost).fold(0.0f64, f64::max);
    let ctx = SearchCtx { inst, pairs, group_pairs, bucket_pairs, cost_scale };

    let root_lo: Vec<u64> = vec![0; ctx.pairs.len()];
    let root_hi: Vec<u64> = ctx
        .pairs
        .iter()
        .map(|p| inst.demands[p.bucket].div_ceil(inst.groups[p.group].replicas))
        .collect();

    // Initial incumbent: each bucket entirely on the group whose single-
    // group time contribution is smallest, improved by local search, plus
    // any caller-provided seeds (the result is never worse than a seed).
    let mut q_greedy = vec![0u64; ctx.pairs.len()];
    for (j, ks) in &ctx.bucket_pairs {
        let k_best = *ks
            .iter()
            .min_by(|&&a, &&b| {
                let ta = inst.demands[*j].div_ceil(inst.groups[ctx.pairs[a].group].replicas)
                    as f64
                    * ctx.pairs[a].cost;
                let tb = inst.demands[*j].div_ceil(inst.groups[ctx.pairs[b].group].replicas)
                    as f64
                    * ctx.pairs[b].cost;
                ta.total_cmp(&tb).then(a.cmp(&b))
            })
            .unwrap();
        q_greedy[k_best] = inst.demands[*j].div_ceil(inst.groups[ctx.pairs[k_best].group].replicas);
    }
    let mut best_q = q_greedy.clone();
    let mut best_val = ctx.evaluate_q(&q_greedy);
    for seed in &opts.seeds {
        if seed.len() != inst.groups.len() {
            return Err(Error::Invalid("seed assignment has wrong group count".into()));
        }
        let shares = inst.ceil_shares(seed);
        let mut q_seed = vec![0u64; ctx.pairs.len()];
        for (k, pair) in ctx.pairs.iter().enumerate() {
            q_seed[k] = shares[pair.group].get(pair.bucket).copied().unwrap_or(0);
        }
        let covers = ctx.bucket_pairs.iter().all(|(j, ks)| {
            ks.iter()
                .map(|&k| inst.groups[ctx.pairs[k].group].replicas * q_seed[k])
                .sum::<u64>()
                >= inst.demands[*j]
        });
        if !covers {
            continue;
        }
        let val = ctx.evaluate_q(&q_seed);
        if val < best_val {
            best_val = val;
            best_q = q_seed;
        }
    }
    {
        let mut q_ls = best_q.clone();
        ctx.local_search(&mut q_ls);
        let val = ctx.evaluate_q(&q_ls);
        if val < best_val {
            best_val = val;
            best_q = q_ls;
        }
    }

    let mut nodes = 0u64;
    let mut lp_iters = 0u64;
    let mut trace = opts.trace.then(String::new);
    let mut stack: Vec<(Vec<u64>, Vec<u64>)> = vec![(root_lo, root_hi)];
    let mut hit_limit = false;

    while let Some((lo, hi)) = stack.pop() {
        if nodes >= opts.node_limit {
            hit_limit = true;
            break;
        }
        nodes += 1;
        // With rel_gap = 0 the threshold sits just above the incumbent so
        // bound ties are explored and the certified optimum is exact; a
        // positive gap prunes anything that cannot beat the incumbent by
        // the requested margin. An external cutoff lowers the threshold
        // further but keeps exact ties explored (tie-breaks stay honest).
        let mut prune_at = if opts.rel_gap > 0.0 {
            best_val - opts.rel_gap * best_val.abs()
        } else {
            best_val + 1e-7 * (1.0 + best_val.abs())
        };
        if let Some(c) = opts.cutoff {
            prune_at = prune_at.min(c + 1e-7 * (1.0 + c.abs()));
        }
        // Objective-based domain tightening: shares whose lone cost already
        // exceeds the threshold cannot appear in a solution we would keep.
        let mut hi = hi;
        let mut infeasible_box = false;
        for k in 0..ctx.pairs.len() {
            let cap = ctx.share_cap(k, prune_at);
            if cap < lo[k] {
                infeasible_box = true;
                break;
            }
            if cap < hi[k] {
                hi[k] = cap;
            }
        }
        if infeasible_box {
            continue;
        }
        let (status, bound, q_lp, iters) = ctx.node_lp(&lo, &hi);
        lp_iters += iters;

        match status {
            LpStatus::Infeasible => continue,
            LpStatus::MaxIter => {
                // No usable relaxation: keep exactness by branching blind
                // on the widest unresolved pair; a fully fixed box is a
                // single point, so evaluate it instead of dropping it.
                let k = (0..ctx.pairs.len()).max_by_key(|&k| hi[k] - lo[k]).unwrap();
                if hi[k] > lo[k] {
                    let mid = lo[k] + (hi[k] - lo[k]) / 2;
                    let (mut hi_l, mut lo_r) = (hi.clone(), lo.clone());
                    hi_l[k] = mid;
                    lo_r[k] = mid + 1;
                    stack.push((lo_r, hi));
                    stack.push((lo, hi_l));
                } else {
                    let covers = ctx.bucket_pairs.iter().all(|(j, ks)| {
                        ks.iter()
                            .map(|&k| ctx.inst.groups[ctx.pairs[k].group].replicas * lo[k])
                            .sum::<u64>()
                            >= ctx.inst.demands[*j]
                    });
                    if covers {
                        let val = ctx.evaluate_q(&lo);
                        if val < best_val {
                            best_val = val;
                            best_q = lo.clone();
                        }
                    }
                }
                continue;
            }
            LpStatus::Optimal => {
                if bound >= prune_at {
                    if let Some(t) = trace.as_mut() {
                        t.push_str(&format!(
                            "node {nodes}: bound {bound:.9} >= incumbent {best_val:.9}, pruned\n"
                        ));
                    }
                    continue;
                }
            }
        }

        // Rounded incumbent from this relaxation; polish early ones.
        let mut q_round = ctx.round_up(&q_lp, &lo, &hi);
        if nodes <= 8 {
            ctx.local_search(&mut q_round);
        }
        let val_round = ctx.evaluate_q(&q_round);
        if val_round < best_val {
            best_val = val_round;
            best_q = q_round;
        }

        // Most fractional pair first.
        let frac = |v: f64| (v - v.round()).abs();
        let mut branch_k = None;
        let mut branch_frac = 1e-6;
        for (k, &v) in q_lp.iter().enumerate() {
            if frac(v) > branch_frac {
                branch_frac = frac(v);
                branch_k = Some(k);
            }
        }
        if let Some(k) = branch_k {
            let split = q_lp[k].floor().clamp(lo[k] as f64, (hi[k] - 1) as f64) as u64;
            let (mut hi_l, mut lo_r) = (hi.clone(), lo.clone());
            hi_l[k] = split;
            lo_r[k] = split + 1;
            if let Some(t) = trace.as_mut() {
                t.push_str(&format!(
                    "node {nodes}: bound {bound:.9}, branch pair {k} at {split} (frac)\n"
                ));
            }
            // Explore the side nearer the LP point first.
            if q_lp[k] - split as f64 <= 0.5 {
                stack.push((lo_r, hi));
                stack.push((lo, hi_l));
            } else {
                stack.push((lo, hi_l));
                stack.push((lo_r, hi));
            }
            continue;
        }

        // Integral relaxation: resolve any box still straddling a bubble
        // kink (the chord may undercharge there), else the box is solved.
        let mut straddle = None;
        let mut worst_gap = -1.0;
        for (k, pair) in ctx.pairs.iter().enumerate() {
            if ctx.inst.groups[pair.group].bubble_factor > 0.0
                && lo[k] < pair.chunk
                && pair.chunk < hi[k]
            {
                let qk = q_lp[k].round();
                let cap = pair.cost * qk.min(pair.chunk as f64);
                let chord = {
                    let (l, h) = (lo[k] as f64, hi[k] as f64);
                    let slope = pair.cost * (pair.chunk as f64 - l) / (h - l);
                    pair.cost * l + slope * (qk - l)
                };
                let gap = cap - chord;
                if gap > worst_gap {
                    worst_gap = gap;
                    straddle = Some(k);
                }
            }
        }
        if let Some(k) = straddle {
            let b = ctx.pairs[k].chunk;
            let (mut hi_l, mut lo_r) = (hi.clone(), lo.clone());
            hi_l[k] = b;
            lo_r[k] = b + 1;
            if let Some(t) = trace.as_mut() {
                t.push_str(&format!(
                    "node {nodes}: bound {bound:.9}, branch pair {k} at kink {b}\n"
                ));
            }
            if q_lp[k] <= b as f64 {
                stack.push((lo_r, hi));
                stack.push((lo, hi_l));
            } else {
                stack.push((lo, hi_l));
                stack.push((lo_r, hi));
            }
            continue;
        }
        if let Some(t) = trace.as_mut() {
            t.push_str(&format!("node {nodes}: bound {bound:.9}, box solved\n"));
        }
    }

    // Fill the integer assignment from the winning shares.
    let mut assignment: Vec<Vec<u64>> =
        inst.groups.iter().map(|g| vec![0u64; g.supported_range()]).collect();
    for (j, ks) in &ctx.bucket_pairs {
        let mut remaining = inst.demands[*j];
        for &k in ks {
            let i = ctx.pairs[k].group;
            let take = remaining.min(inst.groups[i].replicas * best_q[k]);
            assignment[i][*j] = take;
            remaining -= take;
        }
        debug_assert_eq!(remaining, 0, "coverage lost in fill");
    }
    inst.check_assignment(&assignment)?;
    let per_replica = inst.ceil_shares(&assignment);
    let objective = inst.evaluate(&assignment);
    debug_assert!(objective <= best_val + 1e-9 * (1.0 + best_val.abs()));

    Ok(MinimaxSolution {
        assignment,
        per_replica,
        objective,
        status: if hit_limit { SolveStatus::NodeLimit } else { SolveStatus::Optimal },
        nodes,
        lp_iterations: lp_iters,
        trace,
    })
}

/// Exhaustive oracle: enumerate every split of every demand across its
/// supporting groups, evaluate through the same cost formula, and return
/// the minimum (ties: lexicographically smallest flattened d).
pub fn brute_force_minimax(inst: &MinimaxInstance) -> Result<MinimaxSolution> {
    const CAP: u64 = 10_000_000;
    inst.validate()?;

    let active: Vec<usize> =
        (0..inst.demands.len()).filter(|&j| inst.demands[j] > 0).collect();
    let supporters: Vec<Vec<usize>> = active
        .iter()
        .map(|&j| {
            (0..inst.groups.len())
                .filter(|&i| inst.groups[i].supported_range() > j)
                .collect()
        })
        .collect();

    // Count compositions per bucket: C(B + k - 1, k - 1).
    let mut total: u128 = 1;
    for (bi, &j) in active.iter().enumerate() {
        let k = supporters[bi].len() as u128;
        let b = inst.demands[j] as u128;
        let mut ways: u128 = 1;
        for t in 0..k - 1 {
            ways = ways * (b + 1 + t) / (t + 1);
            if ways > CAP as u128 {
                return Err(Error::OracleTooLarge { cap: CAP });
            }
        }
        total = total.saturating_mul(ways);
        if total > CAP as u128 {
            return Err(Error::OracleTooLarge { cap: CAP });
        }
    }

    let mut assignment: Vec<Vec<u64>> =
        inst.groups.iter().map(|g| vec![0u64; g.supported_range()]).collect();
    let mut best: Option<(f64, Vec<Vec<u64>>)> = None;
    let mut evaluated = 0u64;

    fn flat_less(a: &[Vec<u64>], b: &[Vec<u64>]) -> bool {
        for (ra, rb) in a.iter().zip(b) {
            for (x, y) in ra.iter().zip(rb) {
                if x != y {
                    return x < y;
                }
            }
        }
        false
    }

    fn rec(
        bi: usize,
        active: &[usize],
        supporters: &[Vec<usize>],
        inst: &MinimaxInstance,
        assignment: &mut Vec<Vec<u64>>,
        best: &mut Option<(f64, Vec<Vec<u64>>)>,
        evaluated: &mut u64,
    ) {
        if bi == active.len() {
            *evaluated += 1;
            let val = inst.evaluate(assignment);
            let better = match best {
                None => true,
                Some((bv, ba)) => {
                    val < *bv || (val == *bv && flat_less(assignment, ba))
                }
            };
            if better {
                *best = Some((val, assignment.clone()));
            }
            return;
        }
        let j = active[bi];
        let ks = &supporters[bi];
        // Split demands[j] across ks in lexicographic order.
        fn split(
            pos: usize,
            left: u64,
            j: usize,
            ks: &[usize],
            bi: usize,
            active: &[usize],
            supporters: &[Vec<usize>],
            inst: &MinimaxInstance,
            assignment: &mut Vec<Vec<u64>>,
            best: &mut Option<(f64, Vec<Vec<u64>>)>,
            evaluated: &mut u64,
        ) {
            if pos == ks.len() - 1 {
                assignment[ks[pos]][j] = left;
                rec(bi + 1, active, supporters, inst, assignment, best, evaluated);
                assignment[ks[pos]][j] = 0;
                return;
            }
            for take in 0..=left {
                assignment[ks[pos]][j] = take;
                split(
                    pos + 1,
                    left - take,
                    j,
                    ks,
                    bi,
                    active,
                    supporters,
                    inst,
                    assignment,
                    best,
                    evaluated,
                );
            }
            assignment[ks[pos]][j] = 0;
        }
        split(0, inst.demands[j], j, ks, bi, active, supporters, inst, assignment, best, evaluated);
    }

    rec(0, &active, &supporters, inst, &mut assignment, &mut best, &mut evaluated);
    let (objective, assignment) = best.expect("at least one feasible assignment");
    inst.check_assignment(&assignment)?;
    Ok(MinimaxSolution {
        per_replica: inst.ceil_shares(&assignment),
        objective,
        assignment,
        status: SolveStatus::Optimal,
        nodes: evaluated,
        lp_iterations: 0,
        trace: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn group(p: u64, pp: u32, costs: &[f64], chunks: &[u64]) -> GroupSpec {
        GroupSpec {
            replicas: p,
            bubble_factor: (pp - 1) as f64,
            unit_costs: costs.to_vec(),
            chunk_sizes: chunks.to_vec(),
        }
    }

    pub(crate) fn random_instance(rng: &mut ChaCha8Rng) -> MinimaxInstance {
        let buckets = rng.random_range(1..=3usize);
        let n_groups = rng.random_range(1..=3usize);
        let mut groups = Vec::new();
        for _ in 0..n_groups {
            let r = rng.random_range(1..=buckets);
            let costs: Vec<f64> = (0..r).map(|_| rng.random_range(0.2..4.0)).collect();
            let chunks: Vec<u64> = (0..r).map(|_| rng.random_range(1..=4)).collect();
            groups.push(GroupSpec {
                replicas: rng.random_range(1..=2),
                bubble_factor: (rng.random_range(1..=4u32) - 1) as f64,
                unit_costs: costs,
                chunk_sizes: chunks,
            });
        }
        // Guarantee coverage of the last bucket.
        if groups.iter().all(|g| g.supported_range() < buckets) {
            let i = rng.random_range(0..groups.len());
            while groups[i].supported_range() < buckets {
                let c = rng.random_range(0.2..4.0);
                groups[i].unit_costs.push(c);
                groups[i].chunk_sizes.push(rng.random_range(1..=4));
            }
        }
        let demands: Vec<u64> = (0..buckets).map(|_| rng.random_range(0..=6)).collect();
        MinimaxInstance { groups, demands }
    }

    #[test]
    fn single_group_takes_everything() {
        let inst = MinimaxInstance {
            groups: vec![group(2, 2, &[1.0, 2.0], &[4, 2])],
            demands: vec![5, 3],
        };
        let sol = solve_minimax(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(sol.assignment, vec![vec![5, 3]]);
        assert_eq!(sol.per_replica, vec![vec![3, 2]]);
        assert_eq!(sol.objective, inst.evaluate(&sol.assignment));
        assert_eq!(sol.status, SolveStatus::Optimal);
        let oracle = brute_force_minimax(&inst).unwrap();
        assert_eq!(sol.objective, oracle.objective);
    }

    #[test]
    fn two_groups_one_sequence_picks_cheaper() {
        let inst = MinimaxInstance {
            groups: vec![group(1, 1, &[3.0], &[2]), group(1, 1, &[1.0], &[2])],
            demands: vec![1],
        };
        let sol = brute_force_minimax(&inst).unwrap();
        assert_eq!(sol.assignment, vec![vec![0], vec![1]]);
        assert_eq!(sol.objective, 1.0);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..60 {
            let inst = random_instance(&mut rng);
            let sol = solve_minimax(&inst, &SolveOptions::default()).unwrap();
            let oracle = brute_force_minimax(&inst).unwrap();
            assert_eq!(
                sol.objective, oracle.objective,
                "trial {trial}: solver {} vs oracle {} on {:?}",
                sol.objective, oracle.objective, inst
            );
            assert_eq!(sol.status, SolveStatus::Optimal);
        }
    }

    #[test]
    fn brute_force_never_beaten_by_feasible_point() {
        // Definitional: oracle value <= any feasible assignment it visits.
        let inst = MinimaxInstance {
            groups: vec![group(1, 1, &[1.0, 1.5], &[2, 1]), group(2, 3, &[0.8, 2.0], &[3, 2])],
            demands: vec![4, 2],
        };
        let oracle = brute_force_minimax(&inst).unwrap();
        let candidate = vec![vec![4, 2], vec![0, 0]];
        assert!(oracle.objective <= inst.evaluate(&candidate));
    }

    #[test]
    fn scaling_costs_keeps_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let inst = random_instance(&mut rng);
            let sol = solve_minimax(&inst, &SolveOptions::default()).unwrap();
            for factor in [2.0, 10.0, 0.25, 3.0] {
                let scaled = MinimaxInstance {
                    groups: inst
                        .groups
                        .iter()
                        .map(|g| GroupSpec {
                            replicas: g.replicas,
                            bubble_factor: g.bubble_factor,
                            unit_costs: g.unit_costs.iter().map(|c| c * factor).collect(),
                            chunk_sizes: g.chunk_sizes.clone(),
                        })
                        .collect(),
                    demands: inst.demands.clone(),
                };
                let sol2 = solve_minimax(&scaled, &SolveOptions::default()).unwrap();
                assert_eq!(sol.assignment, sol2.assignment, "factor {factor}");
            }
        }
    }

    #[test]
    fn extra_replica_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let inst = random_instance(&mut rng);
            let base = solve_minimax(&inst, &SolveOptions::default()).unwrap();
            for i in 0..inst.groups.len() {
                let mut bigger = inst.clone();
                bigger.groups[i].replicas += 1;
                let sol = solve_minimax(&bigger, &SolveOptions::default()).unwrap();
                assert!(
                    sol.objective <= base.objective + 1e-12,
                    "adding replica to group {i} worsened {} -> {}",
                    base.objective,
                    sol.objective
                );
            }
        }
    }

    #[test]
    fn infeasible_bucket_is_reported() {
        let inst = MinimaxInstance {
            groups: vec![group(1, 1, &[1.0], &[1])],
            demands: vec![1, 1],
        };
        assert!(matches!(
            solve_minimax(&inst, &SolveOptions::default()),
            Err(Error::InfeasibleBucket(1))
        ));
    }

    #[test]
    fn node_limit_returns_incumbent() {
        let inst = MinimaxInstance {
            groups: vec![group(1, 1, &[1.0, 2.0], &[2, 1]), group(2, 2, &[0.5, 1.0], &[4, 2])],
            demands: vec![6, 4],
        };
        let sol = solve_minimax(
            &inst,
            &SolveOptions { node_limit: 0, ..SolveOptions::default() },
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::NodeLimit);
        let optimal = solve_minimax(&inst, &SolveOptions::default()).unwrap();
        assert!(sol.objective >= optimal.objective);
        inst.check_assignment(&sol.assignment).unwrap();
    }

    #[test]
    fn relaxed_shares_lower_or_equal() {
        let inst = MinimaxInstance {
            groups: vec![group(3, 1, &[1.0], &[2]), group(2, 1, &[1.5], &[2])],
            demands: vec![7],
        };
        let exact = solve_minimax(&inst, &SolveOptions::default()).unwrap();
        let relaxed = solve_minimax(
            &inst,
            &SolveOptions { relaxed_shares: true, ..SolveOptions::default() },
        )
        .unwrap();
        assert!(relaxed.objective <= exact.objective + 1e-12);
    }

    #[test]
    fn trace_is_produced_on_request() {
        let inst = MinimaxInstance {
            groups: vec![group(1, 1, &[1.0], &[2]), group(1, 1, &[1.1], &[2])],
            demands: vec![5],
        };
        let sol = solve_minimax(
            &inst,
            &SolveOptions { trace: true, ..SolveOptions::default() },
        )
        .unwrap();
        let trace = sol.trace.unwrap();
        assert!(trace.contains("node 1"));
    }

    #[test]
    fn zero_demand_instance() {
        let inst =
            MinimaxInstance { groups: vec![group(1, 1, &[1.0], &[2])], demands: vec![0] };
        let sol = solve_minimax(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.assignment, vec![vec![0]]);
    }
}
