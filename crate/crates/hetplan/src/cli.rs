//! Command-line front end: wires the file formats to the planning,
//! dispatching, and simulation modules.
//!
//! Every command is a pure function of its input files and flags; all
//! randomness flows through the one `--seed` value, which is echoed into
//! each output header. Exit codes: 0 success, 1 input error, 2
//! infeasibility, 3 solver/oracle budget abort, 64 usage.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bucketing::{self, BoundaryGrid};
use crate::configspace::{self, ClusterSpec, ParallelConfig};
use crate::costmodel::{self, CostProfile};
use crate::dispatcher::{self, DeployedGroup, DispatchOptions};
use crate::error::{Error, Result};
use crate::optimizer::SolveOptions;
use crate::planner::{self, PlannerOptions};
use crate::simulator::{self, DispatchMode, SimOptions, Strategy};
use crate::workload::WorkloadSpec;

pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "hetplan",
    about = "Plan heterogeneous fine-tuning deployments, balance per-step dispatch, and estimate GPU-seconds",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonOpts {
    /// Output directory for result files.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// RNG seed (echoed into every output header; defaults to 0, but
    /// simulate requires it explicitly).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of active buckets per step.
    #[arg(long, default_value_t = 16)]
    pub r: usize,
    /// Grid step for candidate bucket boundaries (tokens).
    #[arg(long, default_value_t = 256)]
    pub grid_step: u32,
    /// Grid maximum (tokens); defaults to the profile's longest supported
    /// length, or 16384 without a profile.
    #[arg(long)]
    pub grid_max: Option<u32>,
    /// Boundary-sampling oversampling factor for expectation planning.
    #[arg(long, default_value_t = 100)]
    pub multiplier: u64,
    /// Lower-bound filter threshold.
    #[arg(long, default_value_t = 0.15)]
    pub threshold: f64,
    /// Disable configuration proposal and lower-bound filtering.
    #[arg(long, default_value_t = false)]
    pub no_prune: bool,
    /// Concurrent per-plan solves.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ClusterOpts {
    /// Total GPUs in the cluster.
    #[arg(long, conflicts_with = "cluster")]
    pub gpus: Option<u32>,
    /// Cluster spec file (TOML with total_gpus).
    #[arg(long)]
    pub cluster: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit per-configuration cost curves from profiling samples.
    Fit {
        /// Profiling samples CSV (tp,pp,batch_size,seq_len,time_s).
        #[arg(long)]
        samples: PathBuf,
        /// Scale factor when samples cover a single layer of an
        /// N-layer model.
        #[arg(long, default_value_t = 1)]
        layers: u32,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Propose candidate configurations from a throughput table.
    Propose {
        /// Throughput table CSV.
        #[arg(long)]
        table: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Sample the workload and emit padding-minimal bucket boundaries.
    Bucketize {
        #[arg(long)]
        workload: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Compute the expected-optimal deployment plan.
    Plan {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Throughput table for configuration proposal.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        cluster: ClusterOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Dispatch one sampled step's batch onto an existing plan.
    Dispatch {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Plan file produced by `plan` (tp,pp,replicas rows).
        #[arg(long)]
        plan: PathBuf,
        /// Step index to sample.
        #[arg(long, default_value_t = 0)]
        step: u64,
        /// balanced | by-length
        #[arg(long, default_value = "balanced")]
        mode: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Simulate a fine-tuning strategy and report per-step GPU-seconds.
    Simulate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[command(flatten)]
        cluster: ClusterOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Per-step decomposition-gap ratios against the joint oracle.
    Gap {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[command(flatten)]
        cluster: ClusterOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Solve the joint deployment + dispatch problem exactly.
    Oracle {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        #[command(flatten)]
        cluster: ClusterOpts,
        #[command(flatten)]
        common: CommonOpts,
    },
}

#[derive(Deserialize)]
struct ClusterFile {
    total_gpus: u32,
}

fn load_cluster(opts: &ClusterOpts) -> Result<ClusterSpec> {
    match (&opts.gpus, &opts.cluster) {
        (Some(n), _) => ClusterSpec::new(*n),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed: ClusterFile =
                toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
            ClusterSpec::new(parsed.total_gpus)
        }
        (None, None) => Err(Error::Invalid("pass --gpus N or --cluster FILE".into())),
    }
}

fn write_output(dir: &Path, name: &str, header: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let content = format!("{header}\n{body}");
    std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn header(command: &str, seed: u64) -> String {
    format!("# hetplan {command} seed={seed}")
}

fn seed_or_default(common: &CommonOpts) -> u64 {
    common.seed.unwrap_or(0)
}

fn grid_for(common: &CommonOpts, profile: Option<&CostProfile>) -> Result<BoundaryGrid> {
    let max = common.grid_max.unwrap_or_else(|| {
        profile
            .map(|p| p.entries().iter().map(|e| e.config.max_seq_len).max().unwrap_or(16384))
            .unwrap_or(16384)
    });
    BoundaryGrid::uniform(common.grid_step, max)
}

fn planner_options(common: &CommonOpts) -> PlannerOptions {
    PlannerOptions {
        lb_filter: !common.no_prune,
        threshold: common.threshold,
        workers: common.workers,
        solve: SolveOptions::default(),
        oracle_plan_cap: 200_000,
    }
}

/// Candidate set for planning: proposed winners when a throughput table is
/// given and pruning is on, otherwise every profiled configuration.
fn candidates_for(
    profile: &CostProfile,
    table: Option<&PathBuf>,
    no_prune: bool,
) -> Result<Vec<ParallelConfig>> {
    if no_prune {
        return Ok(profile.configs());
    }
    match table {
        Some(path) => {
            let table = configspace::ThroughputTable::read_csv(path)?;
            let proposed = configspace::propose_candidates(&table)?;
            // Planning needs fitted curves; keep proposed configs that the
            // profile knows.
            let mut out = Vec::new();
            for c in proposed {
                if profile.find(c.tp_degree, c.pp_stages).is_ok() {
                    out.push(c);
                }
            }
            if out.is_empty() {
                return Err(Error::Invalid(
                    "no proposed candidate has a fitted cost curve".into(),
                ));
            }
            Ok(out)
        }
        None => Ok(profile.configs()),
    }
}

fn stage1(
    workload: &WorkloadSpec,
    cluster: ClusterSpec,
    candidates: Vec<ParallelConfig>,
    profile: &CostProfile,
    grid: &BoundaryGrid,
    common: &CommonOpts,
) -> Result<planner::PlanningProblem> {
    let mut workload = workload.clone();
    workload.fit_to_grid(grid.max())?;
    let (boundaries, batch, _) =
        bucketing::sample_boundaries(&workload, common.multiplier, common.r, grid, seed_or_default(common))?;
    Ok(planner::PlanningProblem {
        cluster,
        candidates,
        profile: profile.clone(),
        boundaries,
        fractions: batch.fractions,
        batch_size: workload.global_batch(),
    })
}

/// Execute a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Fit { samples, layers, common } => {
            let data = costmodel::read_samples_csv(&samples)?;
            let profile = costmodel::fit_cost_curve(&data)?.scaled_by_layers(layers)?;
            let mut body = profile.to_csv_string();
            for e in profile.entries() {
                body.push_str(&format!(
                    "# residual {} max_rel {}\n",
                    e.config.label(),
                    e.max_rel_residual
                ));
            }
            let path =
                write_output(&common.out, "cost_profile.csv", &header("fit", seed_or_default(&common)), &body)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Propose { table, common } => {
            let table = configspace::ThroughputTable::read_csv(&table)?;
            let candidates = configspace::propose_candidates(&table)?;
            let body = configspace::format_candidates(&candidates);
            let path = write_output(
                &common.out,
                "candidates.txt",
                &header("propose", seed_or_default(&common)),
                &body,
            )?;
            println!("wrote {} ({} candidates)", path.display(), candidates.len());
            Ok(())
        }
        Command::Bucketize { workload, common } => {
            let mut workload = WorkloadSpec::read_toml(&workload)?;
            let grid = grid_for(&common, None)?;
            workload.fit_to_grid(grid.max())?;
            let (bucketing, batch, padding) = bucketing::sample_boundaries(
                &workload,
                common.multiplier,
                common.r,
                &grid,
                seed_or_default(&common),
            )?;
            let mut body = String::new();
            body.push_str(&format!("# samples {}\n", batch.total));
            body.push_str(&format!(
                "# padding cross={} intra={} total={}\n",
                padding.cross_interval,
                padding.intra_interval,
                padding.total()
            ));
            body.push_str(&format!(
                "# fractions {}\n",
                batch
                    .fractions
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            ));
            body.push_str(&bucketing.to_csv_line());
            body.push('\n');
            let path = write_output(
                &common.out,
                "boundaries.txt",
                &header("bucketize", seed_or_default(&common)),
                &body,
            )?;
            println!("wrote {} ({} boundaries)", path.display(), bucketing.len());
            Ok(())
        }
        Command::Plan { profile, workload, table, cluster, common } => {
            let profile = CostProfile::read_csv(&profile)?;
            let workload = WorkloadSpec::read_toml(&workload)?;
            let cluster = load_cluster(&cluster)?;
            let grid = grid_for(&common, Some(&profile))?;
            let candidates = candidates_for(&profile, table.as_ref(), common.no_prune)?;
            let problem = stage1(&workload, cluster, candidates, &profile, &grid, &common)?;
            let opts = planner_options(&common);
            let outcome = planner::plan_deployment(&problem, &opts)?;
            let mut body = planner::format_plan(&outcome.plan, &problem.candidates, outcome.objective);
            body.push_str(&format!(
                "# boundaries {}\n# plans_enumerated {}\n# plans_solved {}\n",
                problem.boundaries.to_csv_line(),
                outcome.plans_enumerated,
                outcome.plans_solved
            ));
            let path = write_output(&common.out, "plan.txt", &header("plan", seed_or_default(&common)), &body)?;
            println!(
                "wrote {} (plan {} expected_step_time_s {})",
                path.display(),
                outcome.plan.label(&problem.candidates),
                outcome.objective
            );
            Ok(())
        }
        Command::Dispatch { profile, workload, plan, step, mode, common } => {
            let profile = CostProfile::read_csv(&profile)?;
            let mut workload = WorkloadSpec::read_toml(&workload)?;
            let grid = grid_for(&common, Some(&profile))?;
            workload.fit_to_grid(grid.max())?;
            let plan_text =
                std::fs::read_to_string(&plan).map_err(|e| Error::io(&plan, e))?;
            let rows = planner::parse_plan(&plan_text)?;
            let mut groups = Vec::new();
            for (tp, pp, replicas) in rows {
                let entry = profile.find(tp, pp)?;
                groups.push(DeployedGroup { config: entry.config, replicas });
            }
            let mode = match mode.as_str() {
                "balanced" => DispatchMode::Balanced,
                "by-length" => DispatchMode::ByLength,
                other => {
                    return Err(Error::Invalid(format!(
                        "unknown dispatch mode {other}; expected balanced or by-length"
                    )))
                }
            };
            let batch = simulator::sample_batch(&workload, step, seed_or_default(&common));
            let lengths: Vec<u32> = batch.iter().map(|&(_, l)| l).collect();
            let hist = bucketing::histogram(&lengths, &grid)?;
            let (boundaries, _) = bucketing::dynamic_buckets(&hist, common.r)?;
            let counts = bucketing::BatchHistogram::from_lengths(&lengths, &boundaries)?;
            let dispatch = match mode {
                DispatchMode::Balanced => dispatcher::dispatch_balanced(
                    &groups,
                    &counts,
                    &boundaries,
                    &profile,
                    &DispatchOptions::fast(),
                )?,
                DispatchMode::ByLength => {
                    dispatcher::dispatch_by_length(&groups, &counts, &boundaries, &profile)?
                }
            };
            let body = dispatcher::format_dispatch(&dispatch, &boundaries, &profile)?;
            let path = write_output(
                &common.out,
                "dispatch.txt",
                &format!("{} step={step}", header("dispatch", seed_or_default(&common))),
                &body,
            )?;
            println!("wrote {} (step_time_s {})", path.display(), dispatch.objective);
            Ok(())
        }
        Command::Simulate { profile, workload, table, strategy, steps, cluster, common } => {
            let Some(seed) = common.seed else {
                return Err(Error::Invalid("simulate requires an explicit --seed".into()));
            };
            let profile = CostProfile::read_csv(&profile)?;
            let workload = WorkloadSpec::read_toml(&workload)?;
            let cluster = load_cluster(&cluster)?;
            let grid = grid_for(&common, Some(&profile))?;
            let strategy: Strategy = strategy.parse()?;
            let candidates = candidates_for(&profile, table.as_ref(), common.no_prune)?;
            let mut opts = SimOptions::new(grid, seed);
            opts.steps = steps;
            opts.r = common.r;
            opts.multiplier = common.multiplier;
            opts.planner.lb_filter = !common.no_prune;
            opts.planner.threshold = common.threshold;
            opts.planner.workers = common.workers;
            let report =
                simulator::simulate(&workload, &cluster, &candidates, &profile, strategy, &opts)?;
            let body = report.to_csv();
            let name = format!("report_{}.csv", strategy.name());
            let path = write_output(&common.out, &name, &header("simulate", seed), &body)?;
            println!(
                "wrote {} (total_gpu_seconds {} mean_step_time_s {})",
                path.display(),
                report.total_gpu_seconds,
                report.mean_step_time_s
            );
            Ok(())
        }
        Command::Gap { profile, workload, steps, cluster, common } => {
            let profile = CostProfile::read_csv(&profile)?;
            let workload = WorkloadSpec::read_toml(&workload)?;
            let cluster = load_cluster(&cluster)?;
            let grid = grid_for(&common, Some(&profile))?;
            let candidates = candidates_for(&profile, None, common.no_prune)?;
            let mut opts = SimOptions::new(grid, seed_or_default(&common));
            opts.steps = steps;
            opts.r = common.r;
            opts.multiplier = common.multiplier;
            opts.planner = planner_options(&common);
            let rows =
                simulator::decomposition_gap(&workload, &cluster, &candidates, &profile, &opts)?;
            let body = simulator::gap_rows_to_csv(&rows);
            let path = write_output(&common.out, "gap.csv", &header("gap", seed_or_default(&common)), &body)?;
            let max = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
            println!("wrote {} (max_ratio {max})", path.display());
            Ok(())
        }
        Command::Oracle { profile, workload, cluster, common } => {
            let profile = CostProfile::read_csv(&profile)?;
            let workload = WorkloadSpec::read_toml(&workload)?;
            let cluster = load_cluster(&cluster)?;
            let grid = grid_for(&common, Some(&profile))?;
            let candidates = profile.configs();
            let problem = stage1(&workload, cluster, candidates, &profile, &grid, &common)?;
            let opts = planner_options(&common);
            let outcome = planner::solve_joint(
                &problem.cluster,
                &problem.candidates,
                &problem.profile,
                &problem.boundaries,
                &problem.demands(),
                &opts,
            )?;
            let mut body =
                planner::format_plan(&outcome.plan, &problem.candidates, outcome.objective);
            body.push_str(&format!("# plans_enumerated {}\n", outcome.plans_enumerated));
            body.push_str(&dispatcher::format_dispatch(
                &outcome.dispatch,
                &problem.boundaries,
                &problem.profile,
            )?);
            let path =
                write_output(&common.out, "oracle.txt", &header("oracle", seed_or_default(&common)), &body)?;
            println!(
                "wrote {} (plan {} t {})",
                path.display(),
                outcome.plan.label(&problem.candidates),
                outcome.objective
            );
            Ok(())
        }
    }
}
