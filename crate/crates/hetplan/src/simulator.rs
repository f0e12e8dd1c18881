//! Step-level simulation of joint fine-tuning strategies.
//!
//! Each simulated step samples a batch from the task mixture, buckets it
//! with the padding-minimal dynamic boundaries, dispatches it onto the
//! deployed replica groups, and prices the step through the cost model.
//! GPU-seconds charge every deployed GPU for the full step: replicas that
//! finish early still wait for the slowest one before the synchronized
//! update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bucketing::{self, BatchHistogram, BoundaryGrid, Bucketing};
use crate::configspace::{ClusterSpec, ParallelConfig};
use crate::costmodel::CostProfile;
use crate::dispatcher::{self, DeployedGroup, DispatchOptions};
use crate::error::{Error, Result};
use crate::optimizer;
use crate::planner::{self, PlannerOptions};
use crate::workload::WorkloadSpec;

/// Joint fine-tuning strategies under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Heterogeneous deployment + per-step workload-balanced dispatch.
    Lobra,
    /// Heterogeneous deployment per task, tasks run one after another.
    LobraSequential,
    /// One homogeneous config covering the longest sequence, batches fused.
    TaskFused,
    /// One homogeneous config per task, tasks run one after another.
    TaskSequential,
    /// Heterogeneous deployment + greedy length-based dispatch.
    HetLengthBased,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Lobra => "lobra",
            Strategy::LobraSequential => "lobra-sequential",
            Strategy::TaskFused => "task-fused",
            Strategy::TaskSequential => "task-sequential",
            Strategy::HetLengthBased => "het-lengthbased",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lobra" => Ok(Strategy::Lobra),
            "lobra-sequential" => Ok(Strategy::LobraSequential),
            "task-fused" => Ok(Strategy::TaskFused),
            "task-sequential" => Ok(Strategy::TaskSequential),
            "het-lengthbased" => Ok(Strategy::HetLengthBased),
            other => Err(Error::Invalid(format!(
                "unknown strategy {other}; expected one of lobra, lobra-sequential, \
                 task-fused, task-sequential, het-lengthbased"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchMode {
    Balanced,
    ByLength,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub steps: u64,
    pub seed: u64,
    /// Bucket count per step.
    pub r: usize,
    pub grid: BoundaryGrid,
    /// Boundary-sampling oversampling factor for stage-1 planning.
    pub multiplier: u64,
    pub planner: PlannerOptions,
    pub dispatch: DispatchOptions,
}

impl SimOptions {
    pub fn new(grid: BoundaryGrid, seed: u64) -> Self {
        // Planning happens once per simulation (per task for sequential
        // strategies); a 1% certification gap and a node cap keep it
        // bounded. The local-search incumbents sit well within that gap,
        // so plan choices are stable; oracle-grade callers pass exact
        // PlannerOptions instead.
        let planner = PlannerOptions {
            solve: crate::optimizer::SolveOptions {
                rel_gap: 1e-2,
                node_limit: 3_000,
                ..Default::default()
            },
            ..PlannerOptions::default()
        };
        Self {
            steps: 100,
            seed,
            r: 16,
            grid,
            multiplier: 100,
            planner,
            dispatch: DispatchOptions::fast(),
        }
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 round over seed ^ salt; decorrelates per-step and
    // per-task streams while staying reproducible.
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw one step's batch: `batch_size` lengths per task, deterministic in
/// (seed, step).
pub fn sample_batch(workload: &WorkloadSpec, step: u64, seed: u64) -> Vec<(usize, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, step.wrapping_add(1)));
    let mut batch = Vec::with_capacity(workload.global_batch() as usize);
    for (idx, task) in workload.tasks().iter().enumerate() {
        for _ in 0..task.batch_size {
            batch.push((idx, task.dist.sample(&mut rng)));
        }
    }
    batch
}

/// Outcome of one simulated training step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub step: u64,
    pub boundaries: Bucketing,
    /// Time of each deployed group on its worst replica.
    pub group_times: Vec<f64>,
    /// max over groups; what every deployed GPU waits for.
    pub step_time: f64,
    pub padding_tokens: u64,
    pub gpus_engaged: u64,
    pub solve_nodes: u64,
    pub solve_lp_iterations: u64,
}

/// Bucket the batch with the step's dynamic boundaries, dispatch it, and
/// price every group through the cost model.
pub fn run_step(
    groups: &[DeployedGroup],
    batch: &[(usize, u32)],
    step: u64,
    r: usize,
    grid: &BoundaryGrid,
    profile: &CostProfile,
    mode: DispatchMode,
    opts: &DispatchOptions,
) -> Result<StepResult> {
    let lengths: Vec<u32> = batch.iter().map(|&(_, l)| l).collect();
    let hist = bucketing::histogram(&lengths, grid)?;
    let (boundaries, padding) = bucketing::dynamic_buckets(&hist, r)?;
    let counts = BatchHistogram::from_lengths(&lengths, &boundaries)?;
    let dispatch = match mode {
        DispatchMode::Balanced => {
            dispatcher::dispatch_balanced(groups, &counts, &boundaries, profile, opts)?
        }
        DispatchMode::ByLength => {
            dispatcher::dispatch_by_length(groups, &counts, &boundaries, profile)?
        }
    };
    let gpus_engaged: u64 =
        groups.iter().map(|g| g.replicas * g.config.gpus_per_replica() as u64).sum();
    Ok(StepResult {
        step,
        boundaries,
        group_times: dispatch.group_times.clone(),
        step_time: dispatch.objective,
        padding_tokens: padding.total(),
        gpus_engaged,
        solve_nodes: dispatch.solve_nodes,
        solve_lp_iterations: dispatch.solve_lp_iterations,
    })
}

/// One row of the report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub step: u64,
    pub step_time_s: f64,
    pub gpu_seconds: f64,
    pub padding_tokens: u64,
    /// Deterministic solve-cost estimate (work counters, not wall clock).
    pub solve_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub strategy: Strategy,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub mean_step_time_s: f64,
    pub stddev_step_time_s: f64,
    pub total_gpu_seconds: f64,
    pub total_padding_tokens: u64,
    /// Deployment plan labels, one per deployment the strategy made.
    pub plans: Vec<String>,
}

impl SimulationReport {
    fn from_rows(strategy: Strategy, seed: u64, rows: Vec<ReportRow>, plans: Vec<String>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = rows.iter().map(|r| r.step_time_s).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r.step_time_s - mean).powi(2)).sum::<f64>() / n;
        Self {
            strategy,
            seed,
            total_gpu_seconds: rows.iter().map(|r| r.gpu_seconds).sum(),
            total_padding_tokens: rows.iter().map(|r| r.padding_tokens).sum(),
            mean_step_time_s: mean,
            stddev_step_time_s: var.sqrt(),
            rows,
            plans,
        }
    }

    /// CSV per the report interface, with a trailing summary block.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("step,strategy,step_time_s,gpu_seconds,padding_tokens,solve_ms\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                self.strategy.name(),
                r.step_time_s,
                r.gpu_seconds,
                r.padding_tokens,
                r.solve_ms
            )
            .unwrap();
        }
        writeln!(out, "# summary strategy={} steps={}", self.strategy.name(), self.rows.len())
            .unwrap();
        writeln!(out, "# summary mean_step_time_s={}", self.mean_step_time_s).unwrap();
        writeln!(out, "# summary stddev_step_time_s={}", self.stddev_step_time_s).unwrap();
        writeln!(out, "# summary total_gpu_seconds={}", self.total_gpu_seconds).unwrap();
        writeln!(out, "# summary total_padding_tokens={}", self.total_padding_tokens).unwrap();
        for p in &self.plans {
            writeln!(out, "# summary plan {p}").unwrap();
        }
        out
    }
}

fn stage1_problem(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    candidates: &[ParallelConfig],
    profile: &CostProfile,
    opts: &SimOptions,
    seed: u64,
) -> Result<planner::PlanningProblem> {
    let (boundaries, batch, _) =
        bucketing::sample_boundaries(workload, opts.multiplier, opts.r, &opts.grid, seed)?;
    Ok(planner::PlanningProblem {
        cluster: *cluster,
        candidates: candidates.to_vec(),
        profile: profile.clone(),
        boundaries,
        fractions: batch.fractions,
        batch_size: workload.global_batch(),
    })
}

/// Pick the best homogeneous deployment covering sequences up to
/// `max_len`: among configs with enough memory, replicate to fill the
/// cluster and keep the one with the smallest expected step time on the
/// stage-1 demands (ties to fewer GPUs per replica).
fn best_homogeneous(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    candidates: &[ParallelConfig],
    profile: &CostProfile,
    opts: &SimOptions,
    seed: u64,
    max_len: u32,
) -> Result<(DeployedGroup, f64)> {
    let (boundaries, batch, _) =
        bucketing::sample_boundaries(workload, opts.multiplier, opts.r, &opts.grid, seed)?;
    let demands = BatchHistogram::from_counts(batch.counts.clone());
    let mut best: Option<(DeployedGroup, f64)> = None;
    for c in candidates {
        if c.max_seq_len < max_len {
            continue;
        }
        let p = (cluster.total_gpus / c.gpus_per_replica()) as u64;
        if p == 0 {
            continue;
        }
        let group = DeployedGroup { config: *c, replicas: p };
        let dispatch = dispatcher::dispatch_balanced(
            std::slice::from_ref(&group),
            &demands,
            &boundaries,
            profile,
            &DispatchOptions::default(),
        )?;
        let better = match &best {
            None => true,
            Some((bg, bt)) => {
                dispatch.objective < *bt
                    || (dispatch.objective == *bt
                        && c.gpus_per_replica() < bg.config.gpus_per_replica())
            }
        };
        if better {
            best = Some((group, dispatch.objective));
        }
    }
    best.ok_or_else(|| {
        Error::Invalid(format!(
            "no homogeneous configuration supports sequences up to {max_len} tokens"
        ))
    })
}

fn joint_rows(
    workload: &WorkloadSpec,
    groups: &[DeployedGroup],
    mode: DispatchMode,
    profile: &CostProfile,
    opts: &SimOptions,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::with_capacity(opts.steps as usize);
    for step in 0..opts.steps {
        let batch = sample_batch(workload, step, opts.seed);
        let sr = run_step(
            groups,
            &batch,
            step,
            opts.r,
            &opts.grid,
            profile,
            mode,
            &opts.dispatch,
        )?;
        rows.push(ReportRow {
            step,
            step_time_s: sr.step_time,
            gpu_seconds: sr.gpus_engaged as f64 * sr.step_time,
            padding_tokens: sr.padding_tokens,
            solve_ms: optimizer::estimated_solve_ms(sr.solve_nodes, sr.solve_lp_iterations),
        });
    }
    Ok(rows)
}

/// Simulate `opts.steps` training rounds of one strategy and report
/// per-step times, GPU-seconds, and padding. Sequential strategies run
/// every task once per round and sum the charges.
pub fn simulate(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    candidates: &[ParallelConfig],
    profile: &CostProfile,
    strategy: Strategy,
    opts: &SimOptions,
) -> Result<SimulationReport> {
    let mut workload = workload.clone();
    workload.fit_to_grid(opts.grid.max())?;
    match strategy {
        Strategy::Lobra | Strategy::HetLengthBased => {
            let problem =
                stage1_problem(&workload, cluster, candidates, profile, opts, opts.seed)?;
            let outcome = planner::plan_deployment(&problem, &opts.planner)?;
            let groups = outcome.plan.deployed_groups(&problem.candidates);
            let mode = if strategy == Strategy::Lobra {
                DispatchMode::Balanced
            } else {
                DispatchMode::ByLength
            };
            let rows = joint_rows(&workload, &groups, mode, profile, opts)?;
            Ok(SimulationReport::from_rows(
                strategy,
                opts.seed,
                rows,
                vec![outcome.plan.label(&problem.candidates)],
            ))
        }
        Strategy::TaskFused => {
            let (group, _) = best_homogeneous(
                &workload,
                cluster,
                candidates,
                profile,
                opts,
                opts.seed,
                workload.max_length(),
            )?;
            let rows = joint_rows(
                &workload,
                std::slice::from_ref(&group),
                DispatchMode::Balanced,
                profile,
                opts,
            )?;
            let label = format!("{}x{}", group.config.label(), group.replicas);
            Ok(SimulationReport::from_rows(strategy, opts.seed, rows, vec![label]))
        }
        Strategy::TaskSequential | Strategy::LobraSequential => {
            let mut per_task: Vec<(Vec<DeployedGroup>, WorkloadSpec, u64, String)> = Vec::new();
            for (idx, task) in workload.tasks().iter().enumerate() {
                let single = workload.single_task(idx);
                let task_seed = mix_seed(opts.seed, 0x7A5C + idx as u64);
                if strategy == Strategy::TaskSequential {
                    let (group, _) = best_homogeneous(
                        &single,
                        cluster,
                        candidates,
                        profile,
                        opts,
                        task_seed,
                        single.max_length(),
                    )?;
                    let label =
                        format!("{}: {}x{}", task.name, group.config.label(), group.replicas);
                    per_task.push((vec![group], single, task_seed, label));
                } else {
                    let problem =
                        stage1_problem(&single, cluster, candidates, profile, opts, task_seed)?;
                    let outcome = planner::plan_deployment(&problem, &opts.planner)?;
                    let label =
                        format!("{}: {}", task.name, outcome.plan.label(&problem.candidates));
                    per_task.push((
                        outcome.plan.deployed_groups(&problem.candidates),
                        single,
                        task_seed,
                        label,
                    ));
                }
            }
            let mode = DispatchMode::Balanced;
            let mut rows = Vec::with_capacity(opts.steps as usize);
            for step in 0..opts.steps {
                let mut wall = 0.0f64;
                let mut gpu_seconds = 0.0f64;
                let mut padding = 0u64;
                let mut nodes = 0u64;
                let mut iters = 0u64;
                for (groups, single, task_seed, _) in &per_task {
                    let batch = sample_batch(single, step, *task_seed);
                    let sr = run_step(
                        groups,
                        &batch,
                        step,
                        opts.r,
                        &opts.grid,
                        profile,
                        mode,
                        &opts.dispatch,
                    )?;
                    wall += sr.step_time;
                    gpu_seconds += sr.gpus_engaged as f64 * sr.step_time;
                    padding += sr.padding_tokens;
                    nodes += sr.solve_nodes;
                    iters += sr.solve_lp_iterations;
                }
                rows.push(ReportRow {
                    step,
                    step_time_s: wall,
                    gpu_seconds,
                    padding_tokens: padding,
                    solve_ms: optimizer::estimated_solve_ms(nodes, iters),
                });
            }
            let plans = per_task.into_iter().map(|(_, _, _, label)| label).collect();
            Ok(SimulationReport::from_rows(strategy, opts.seed, rows, plans))
        }
    }
}

/// Per-step comparison of the frozen two-stage plan against re-solving the
/// joint problem on that step's concrete demands.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub step: u64,
    pub t_decomp: f64,
    pub t_origin: f64,
    pub ratio: f64,
}

pub fn decomposition_gap(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    candidates: &[ParallelConfig],
    profile: &CostProfile,
    opts: &SimOptions,
) -> Result<Vec<GapRow>> {
    let mut workload = workload.clone();
    workload.fit_to_grid(opts.grid.max())?;
    let problem = stage1_problem(&workload, cluster, candidates, profile, opts, opts.seed)?;
    let outcome = planner::plan_deployment(&problem, &opts.planner)?;
    let groups = outcome.plan.deployed_groups(&problem.candidates);

    let mut rows = Vec::with_capacity(opts.steps as usize);
    for step in 0..opts.steps {
        let batch = sample_batch(&workload, step, opts.seed);
        let lengths: Vec<u32> = batch.iter().map(|&(_, l)| l).collect();
        let hist = bucketing::histogram(&lengths, &opts.grid)?;
        let (boundaries, _) = bucketing::dynamic_buckets(&hist, opts.r)?;
        let counts = BatchHistogram::from_lengths(&lengths, &boundaries)?;

        let decomp = dispatcher::dispatch_balanced(
            &groups,
            &counts,
            &boundaries,
            profile,
            &DispatchOptions { solve: opts.planner.solve.clone() },
        )?;
        let joint = planner::solve_joint(
            cluster,
            candidates,
            profile,
            &boundaries,
            &counts.counts,
            &opts.planner,
        )?;
        let (t_decomp, t_origin) = (decomp.objective, joint.objective);
        rows.push(GapRow { step, t_decomp, t_origin, ratio: t_decomp / t_origin });
    }
    Ok(rows)
}

pub fn gap_rows_to_csv(rows: &[GapRow]) -> String {
    use std::fmt::Write;
    let mut out = String::from("step,t_decomp_s,t_origin_s,ratio\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.step, r.t_decomp, r.t_origin, r.ratio).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::workload::{LengthDist, TaskSpec};

    fn small_workload() -> WorkloadSpec {
        WorkloadSpec::new(vec![
            TaskSpec {
                name: "short".into(),
                batch_size: 24,
                dist: LengthDist::LogNormal { mean: 600.0, sigma: 0.6, max_len: 2048 },
            },
            TaskSpec {
                name: "long".into(),
                batch_size: 4,
                dist: LengthDist::Empirical { lengths: vec![9000, 12000, 15000, 16000] },
            },
        ])
        .unwrap()
    }

    fn sim_opts(seed: u64) -> SimOptions {
        let grid = BoundaryGrid::uniform(256, 16384).unwrap();
        let mut o = SimOptions::new(grid, seed);
        o.steps = 5;
        o.r = 4;
        o.multiplier = 10;
        o
    }

    #[test]
    fn sample_batch_deterministic_and_sized() {
        let w = small_workload();
        let a = sample_batch(&w, 3, 42);
        let b = sample_batch(&w, 3, 42);
        assert_eq!(a, b);
        assert_ne!(a, sample_batch(&w, 4, 42));
        assert_eq!(a.len(), 28);
        assert_eq!(a.iter().filter(|&&(t, _)| t == 0).count(), 24);
    }

    #[test]
    fn point_mass_batches_are_constant() {
        let w = WorkloadSpec::new(vec![TaskSpec {
            name: "p".into(),
            batch_size: 6,
            dist: LengthDist::Empirical { lengths: vec![777] },
        }])
        .unwrap();
        for step in 0..3 {
            for (_, l) in sample_batch(&w, step, 9) {
                assert_eq!(l, 777);
            }
        }
    }

    #[test]
    fn twelve_task_fixture_batch_composition() {
        // Every step draws exactly batch_size sequences per task; the
        // first bundled task contributes 256.
        let w = WorkloadSpec::read_toml(&fixtures::path("tasks12.toml")).unwrap();
        assert_eq!(w.tasks()[0].name, "databricks-dolly-15k");
        for step in [0u64, 17, 99] {
            let batch = sample_batch(&w, step, 7);
            assert_eq!(batch.len() as u64, w.global_batch());
            for (idx, task) in w.tasks().iter().enumerate() {
                let n = batch.iter().filter(|&&(t, _)| t == idx).count() as u64;
                assert_eq!(n, task.batch_size, "task {} at step {step}", task.name);
            }
        }
    }

    #[test]
    fn run_step_single_group_matches_replica_time() {
        let profile = fixtures::reference_profile().unwrap();
        let config = *profile.find(8, 1).map(|e| &e.config).unwrap();
        let groups = vec![DeployedGroup { config, replicas: 2 }];
        let batch: Vec<(usize, u32)> = (0..10).map(|_| (0usize, 2048u32)).collect();
        let grid = BoundaryGrid::uniform(256, 16384).unwrap();
        let sr = run_step(
            &groups,
            &batch,
            0,
            4,
            &grid,
            &profile,
            DispatchMode::Balanced,
            &DispatchOptions::default(),
        )
        .unwrap();
        // Single length -> one bucket at 2048; 10 seqs over 2 replicas.
        let bounds = Bucketing::new(vec![2048]).unwrap();
        let expected =
            crate::costmodel::replica_time(&profile, &config, &[5], &bounds).unwrap();
        assert_eq!(sr.step_time, expected);
        assert_eq!(sr.step_time, sr.group_times.iter().copied().fold(0.0, f64::max));
        assert_eq!(sr.gpus_engaged, 16);
    }

    #[test]
    fn balanced_dominates_by_length_every_step() {
        let profile = fixtures::reference_profile().unwrap();
        let candidates = profile.configs();
        let groups = vec![
            DeployedGroup { config: candidates[0], replicas: 4 },
            DeployedGroup { config: candidates[1], replicas: 2 },
            DeployedGroup { config: candidates[3], replicas: 1 },
        ];
        let w = small_workload();
        let opts = sim_opts(11);
        for step in 0..opts.steps {
            let batch = sample_batch(&w, step, opts.seed);
            let bal = run_step(
                &groups,
                &batch,
                step,
                opts.r,
                &opts.grid,
                &profile,
                DispatchMode::Balanced,
                &opts.dispatch,
            )
            .unwrap();
            let byl = run_step(
                &groups,
                &batch,
                step,
                opts.r,
                &opts.grid,
                &profile,
                DispatchMode::ByLength,
                &opts.dispatch,
            )
            .unwrap();
            assert!(bal.step_time <= byl.step_time, "step {step}");
        }
    }

    #[test]
    fn simulate_deterministic_reports() {
        let profile = fixtures::reference_profile().unwrap();
        let candidates = profile.configs();
        let cluster = ClusterSpec::new(16).unwrap();
        let w = small_workload();
        let opts = sim_opts(7);
        let a = simulate(&w, &cluster, &candidates, &profile, Strategy::Lobra, &opts).unwrap();
        let b = simulate(&w, &cluster, &candidates, &profile, Strategy::Lobra, &opts).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 5);
        // GPU-seconds recomposition.
        let total: f64 = a.rows.iter().map(|r| r.gpu_seconds).sum();
        assert_eq!(total, a.total_gpu_seconds);
    }

    #[test]
    fn one_task_one_candidate_strategies_coincide() {
        let profile = fixtures::reference_profile().unwrap();
        let big = *profile.find(8, 1).map(|e| &e.config).unwrap();
        let profile = profile.restrict(&[big]).unwrap();
        let candidates = vec![big];
        let cluster = ClusterSpec::new(16).unwrap();
        let w = WorkloadSpec::new(vec![TaskSpec {
            name: "only".into(),
            batch_size: 12,
            dist: LengthDist::LogNormal { mean: 3000.0, sigma: 0.5, max_len: 16384 },
        }])
        .unwrap();
        let opts = sim_opts(3);
        let lobra =
            simulate(&w, &cluster, &candidates, &profile, Strategy::Lobra, &opts).unwrap();
        let fused =
            simulate(&w, &cluster, &candidates, &profile, Strategy::TaskFused, &opts).unwrap();
        let heth =
            simulate(&w, &cluster, &candidates, &profile, Strategy::HetLengthBased, &opts)
                .unwrap();
        assert_eq!(lobra.total_gpu_seconds, fused.total_gpu_seconds);
        assert_eq!(lobra.total_gpu_seconds, heth.total_gpu_seconds);
        // Sequential with one task differs only by per-task seeding.
        let seq =
            simulate(&w, &cluster, &candidates, &profile, Strategy::TaskSequential, &opts)
                .unwrap();
        assert_eq!(seq.rows.len(), lobra.rows.len());
    }

    /// Short-dominated mixture in the shape of the bundled 12-task
    /// workload (long tasks contribute a modest share of total work).
    fn skewed_workload() -> WorkloadSpec {
        WorkloadSpec::new(vec![
            TaskSpec {
                name: "short".into(),
                batch_size: 160,
                dist: LengthDist::LogNormal { mean: 300.0, sigma: 0.7, max_len: 2048 },
            },
            TaskSpec {
                name: "mid".into(),
                batch_size: 24,
                dist: LengthDist::LogNormal { mean: 1500.0, sigma: 0.6, max_len: 8192 },
            },
            TaskSpec {
                name: "long".into(),
                batch_size: 8,
                dist: LengthDist::LogNormal { mean: 5000.0, sigma: 0.5, max_len: 16384 },
            },
        ])
        .unwrap()
    }

    #[test]
    fn skewed_mixture_lobra_beats_fused_and_lengthbased() {
        let profile = fixtures::cost_profile();
        let table = fixtures::throughput_table();
        let candidates = crate::configspace::propose_candidates(&table).unwrap();
        let cluster = ClusterSpec::new(16).unwrap();
        let w = skewed_workload();
        let mut opts = sim_opts(21);
        opts.steps = 8;
        let lobra =
            simulate(&w, &cluster, &candidates, &profile, Strategy::Lobra, &opts).unwrap();
        let fused =
            simulate(&w, &cluster, &candidates, &profile, Strategy::TaskFused, &opts).unwrap();
        let heth =
            simulate(&w, &cluster, &candidates, &profile, Strategy::HetLengthBased, &opts)
                .unwrap();
        assert!(
            lobra.total_gpu_seconds < fused.total_gpu_seconds,
            "lobra {} vs fused {}",
            lobra.total_gpu_seconds,
            fused.total_gpu_seconds
        );
        assert!(
            heth.total_gpu_seconds > lobra.total_gpu_seconds,
            "lengthbased {} vs lobra {}",
            heth.total_gpu_seconds,
            lobra.total_gpu_seconds
        );
    }

    #[test]
    fn gap_ratios_at_least_one() {
        let profile = fixtures::reference_profile().unwrap();
        let candidates = profile.configs();
        let cluster = ClusterSpec::new(16).unwrap();
        let w = small_workload();
        let mut opts = sim_opts(17);
        opts.steps = 3;
        let rows = decomposition_gap(&w, &cluster, &candidates, &profile, &opts).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.ratio >= 1.0 - 1e-12, "step {}: ratio {}", r.step, r.ratio);
            assert!(r.t_origin <= r.t_decomp + 1e-12);
        }
    }

    #[test]
    fn point_mass_batches_give_unity_gap() {
        // Every step's batch equals the stage-1 demands exactly, so the
        // frozen plan is per-step optimal and the ratio stays 1.
        let profile = fixtures::reference_profile().unwrap();
        let candidates = profile.configs();
        let cluster = ClusterSpec::new(16).unwrap();
        let w = WorkloadSpec::read_toml(&fixtures::path("reference_workload.toml")).unwrap();
        let mut opts = sim_opts(7);
        opts.steps = 3;
        opts.multiplier = 100;
        opts.planner = crate::planner::PlannerOptions::default();
        let rows = decomposition_gap(&w, &cluster, &candidates, &profile, &opts).unwrap();
        for r in &rows {
            assert_eq!(r.ratio, 1.0, "step {}", r.step);
        }
    }

    #[test]
    fn single_candidate_gap_is_unity() {
        let profile = fixtures::reference_profile().unwrap();
        let big = *profile.find(8, 1).map(|e| &e.config).unwrap();
        let profile = profile.restrict(&[big]).unwrap();
        let cluster = ClusterSpec::new(16).unwrap();
        let w = small_workload();
        let mut opts = sim_opts(19);
        opts.steps = 3;
        let rows = decomposition_gap(&w, &cluster, &[big], &profile, &opts).unwrap();
        for r in &rows {
            assert!((r.ratio - 1.0).abs() < 1e-12);
        }
    }
}
