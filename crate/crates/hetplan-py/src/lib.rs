//! Python bindings for the planning and simulation toolkit.
//!
//! Exposes the main operations over plain Python data: fit a cost model,
//! propose candidate configurations, pick padding-minimal buckets, plan a
//! heterogeneous deployment, dispatch one step's batch, and simulate whole
//! strategies. Inputs are the same CSV/TOML files the CLI uses.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hetplan::bucketing::{self, BatchHistogram, BoundaryGrid, Bucketing};
use hetplan::configspace::{self, ClusterSpec};
use hetplan::costmodel::{self, CostProfile};
use hetplan::dispatcher::{self, DeployedGroup, DispatchOptions};
use hetplan::optimizer::{self, GroupSpec, MinimaxInstance, SolveOptions};
use hetplan::planner::{self, PlannerOptions};
use hetplan::simulator::{self, SimOptions, Strategy};
use hetplan::workload::WorkloadSpec;
use hetplan::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Invalid(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Fitted cost model over a set of parallel configurations.
#[pyclass]
struct CostModel {
    profile: CostProfile,
}

#[pymethods]
impl CostModel {
    /// Load fitted curves from a profile CSV (tp,pp,max_seq_len,a2,a1,a0).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { profile: CostProfile::read_csv(&path).map_err(py_err)? })
    }

    /// Fit curves from a profiling-samples CSV.
    #[staticmethod]
    fn fit(samples_path: PathBuf) -> PyResult<Self> {
        let samples = costmodel::read_samples_csv(&samples_path).map_err(py_err)?;
        Ok(Self { profile: costmodel::fit_cost_curve(&samples).map_err(py_err)? })
    }

    /// Configurations as (tp, pp, gpus, max_seq_len) tuples.
    fn configs(&self) -> Vec<(u32, u32, u32, u32)> {
        self.profile
            .configs()
            .into_iter()
            .map(|c| (c.tp_degree, c.pp_stages, c.gpus_per_replica(), c.max_seq_len))
            .collect()
    }

    /// Fitted (a2, a1, a0) for one configuration.
    fn coefficients(&self, tp: u32, pp: u32) -> PyResult<(f64, f64, f64)> {
        let e = self.profile.find(tp, pp).map_err(py_err)?;
        Ok((e.curve.a2, e.curve.a1, e.curve.a0))
    }

    /// Time of one micro-batch of `b` sequences at padded length `s`.
    fn micro_time(&self, tp: u32, pp: u32, b: u64, s: u32) -> PyResult<f64> {
        let config = self.profile.find(tp, pp).map_err(py_err)?.config;
        costmodel::micro_time(&self.profile, &config, b, s).map_err(py_err)
    }

    /// Time of one replica processing per-bucket counts.
    fn replica_time(&self, tp: u32, pp: u32, counts: Vec<u64>, boundaries: Vec<u32>) -> PyResult<f64> {
        let config = self.profile.find(tp, pp).map_err(py_err)?.config;
        let bounds = Bucketing::new(boundaries).map_err(py_err)?;
        costmodel::replica_time(&self.profile, &config, &counts, &bounds).map_err(py_err)
    }

    /// Average throughput bound (tokens/GPU/s) at length `s`.
    fn atb(&self, tp: u32, pp: u32, s: u32) -> PyResult<f64> {
        let config = self.profile.find(tp, pp).map_err(py_err)?.config;
        costmodel::atb(&self.profile, &config, s).map_err(py_err)
    }
}

/// Propose candidate configurations from a throughput-table CSV: the
/// throughput winner of every (gpus, seq_len) group, as dicts.
#[pyfunction]
fn propose_candidates(table_path: PathBuf) -> PyResult<Vec<HashMap<String, u32>>> {
    let table = configspace::ThroughputTable::read_csv(&table_path).map_err(py_err)?;
    let cands = configspace::propose_candidates(&table).map_err(py_err)?;
    Ok(cands
        .into_iter()
        .map(|c| {
            HashMap::from([
                ("tp".to_string(), c.tp_degree),
                ("pp".to_string(), c.pp_stages),
                ("gpus".to_string(), c.gpus_per_replica()),
                ("max_seq_len".to_string(), c.max_seq_len),
            ])
        })
        .collect())
}

/// Select up to `r` bucket boundaries for the given sequence lengths,
/// minimizing padding over a uniform grid. Returns
/// (boundaries, cross_padding, intra_padding).
#[pyfunction]
#[pyo3(signature = (lengths, r, grid_step=256, grid_max=16384))]
fn dynamic_buckets(
    lengths: Vec<u32>,
    r: usize,
    grid_step: u32,
    grid_max: u32,
) -> PyResult<(Vec<u32>, u64, u64)> {
    let grid = BoundaryGrid::uniform(grid_step, grid_max).map_err(py_err)?;
    let hist = bucketing::histogram(&lengths, &grid).map_err(py_err)?;
    let (bucketing, padding) = bucketing::dynamic_buckets(&hist, r).map_err(py_err)?;
    Ok((bucketing.boundaries().to_vec(), padding.cross_interval, padding.intra_interval))
}

/// Solve the minimax dispatch program. `groups` is a list of dicts with
/// keys replicas, pp_stages, unit_costs, chunk_sizes. Returns a dict with
/// the assignment, per-replica shares, and objective.
#[pyfunction]
#[pyo3(signature = (groups, demands, exact=true))]
fn solve_minimax(
    py: Python<'_>,
    groups: Vec<HashMap<String, Py<PyAny>>>,
    demands: Vec<u64>,
    exact: bool,
) -> PyResult<Py<PyAny>> {
    let mut spec_groups = Vec::new();
    for g in &groups {
        let get = |k: &str| {
            g.get(k)
                .ok_or_else(|| PyValueError::new_err(format!("group missing key {k}")))
        };
        let replicas: u64 = get("replicas")?.extract(py)?;
        let pp: u32 = get("pp_stages")?.extract(py)?;
        let unit_costs: Vec<f64> = get("unit_costs")?.extract(py)?;
        let chunk_sizes: Vec<u64> = get("chunk_sizes")?.extract(py)?;
        spec_groups.push(GroupSpec {
            replicas,
            bubble_factor: (pp.max(1) - 1) as f64,
            unit_costs,
            chunk_sizes,
        });
    }
    let instance = MinimaxInstance { groups: spec_groups, demands };
    let opts = SolveOptions {
        rel_gap: if exact { 0.0 } else { 1e-2 },
        node_limit: if exact { 1_000_000 } else { 10_000 },
        ..Default::default()
    };
    let solution = optimizer::solve_minimax(&instance, &opts).map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("assignment", solution.assignment)?;
    out.set_item("per_replica", solution.per_replica)?;
    out.set_item("objective", solution.objective)?;
    out.set_item("exact", solution.status == optimizer::SolveStatus::Optimal)?;
    Ok(out.into())
}

fn stage1_problem(
    profile: &CostProfile,
    workload_path: &Path,
    gpus: u32,
    r: usize,
    grid_step: u32,
    seed: u64,
    multiplier: u64,
) -> PyResult<planner::PlanningProblem> {
    let mut workload = WorkloadSpec::read_toml(workload_path).map_err(py_err)?;
    let grid_max = profile.entries().iter().map(|e| e.config.max_seq_len).max().unwrap_or(16384);
    let grid = BoundaryGrid::uniform(grid_step, grid_max).map_err(py_err)?;
    workload.fit_to_grid(grid.max()).map_err(py_err)?;
    let (boundaries, batch, _) =
        bucketing::sample_boundaries(&workload, multiplier, r, &grid, seed).map_err(py_err)?;
    Ok(planner::PlanningProblem {
        cluster: ClusterSpec::new(gpus).map_err(py_err)?,
        candidates: profile.configs(),
        profile: profile.clone(),
        boundaries,
        fractions: batch.fractions,
        batch_size: workload.global_batch(),
    })
}

/// Compute the expected-optimal deployment plan for a workload. Returns a
/// dict with `plan` (list of (tp, pp, replicas)), `objective`, `gpus_used`
/// and the sampled `boundaries`.
#[pyfunction]
#[pyo3(signature = (profile_path, workload_path, gpus, r=16, grid_step=256, seed=0, multiplier=100, threshold=0.15, prune=true))]
#[allow(clippy::too_many_arguments)]
fn plan_deployment(
    py: Python<'_>,
    profile_path: PathBuf,
    workload_path: PathBuf,
    gpus: u32,
    r: usize,
    grid_step: u32,
    seed: u64,
    multiplier: u64,
    threshold: f64,
    prune: bool,
) -> PyResult<Py<PyAny>> {
    let profile = CostProfile::read_csv(&profile_path).map_err(py_err)?;
    let problem =
        stage1_problem(&profile, &workload_path, gpus, r, grid_step, seed, multiplier)?;
    let opts = PlannerOptions { lb_filter: prune, threshold, ..PlannerOptions::default() };
    let outcome = planner::plan_deployment(&problem, &opts).map_err(py_err)?;
    let plan: Vec<(u32, u32, u64)> = outcome
        .plan
        .replicas
        .iter()
        .zip(&problem.candidates)
        .filter(|(&p, _)| p > 0)
        .map(|(&p, c)| (c.tp_degree, c.pp_stages, p))
        .collect();
    let out = pyo3::types::PyDict::new(py);
    out.set_item("plan", plan)?;
    out.set_item("objective", outcome.objective)?;
    out.set_item("gpus_used", outcome.plan.gpus_used(&problem.candidates))?;
    out.set_item("boundaries", problem.boundaries.boundaries().to_vec())?;
    out.set_item("plans_enumerated", outcome.plans_enumerated)?;
    Ok(out.into())
}

/// Dispatch one sampled step's batch onto a plan given as
/// [(tp, pp, replicas)]. Returns the assignment matrix, per-group times,
/// the step's boundaries, and the objective.
#[pyfunction]
#[pyo3(signature = (profile_path, workload_path, plan, seed=0, step=0, r=16, grid_step=256, mode="balanced"))]
#[allow(clippy::too_many_arguments)]
fn dispatch(
    py: Python<'_>,
    profile_path: PathBuf,
    workload_path: PathBuf,
    plan: Vec<(u32, u32, u64)>,
    seed: u64,
    step: u64,
    r: usize,
    grid_step: u32,
    mode: &str,
) -> PyResult<Py<PyAny>> {
    let profile = CostProfile::read_csv(&profile_path).map_err(py_err)?;
    let mut workload = WorkloadSpec::read_toml(&workload_path).map_err(py_err)?;
    let grid_max = profile.entries().iter().map(|e| e.config.max_seq_len).max().unwrap_or(16384);
    let grid = BoundaryGrid::uniform(grid_step, grid_max).map_err(py_err)?;
    workload.fit_to_grid(grid.max()).map_err(py_err)?;
    let mut groups = Vec::new();
    for (tp, pp, replicas) in plan {
        let entry = profile.find(tp, pp).map_err(py_err)?;
        groups.push(DeployedGroup { config: entry.config, replicas });
    }
    let batch = simulator::sample_batch(&workload, step, seed);
    let lengths: Vec<u32> = batch.iter().map(|&(_, l)| l).collect();
    let hist = bucketing::histogram(&lengths, &grid).map_err(py_err)?;
    let (boundaries, _) = bucketing::dynamic_buckets(&hist, r).map_err(py_err)?;
    let counts = BatchHistogram::from_lengths(&lengths, &boundaries).map_err(py_err)?;
    let result = match mode {
        "balanced" => dispatcher::dispatch_balanced(
            &groups,
            &counts,
            &boundaries,
            &profile,
            &DispatchOptions::fast(),
        ),
        "by-length" => dispatcher::dispatch_by_length(&groups, &counts, &boundaries, &profile),
        other => return Err(PyValueError::new_err(format!("unknown mode {other}"))),
    }
    .map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("boundaries", boundaries.boundaries().to_vec())?;
    out.set_item("demands", counts.counts)?;
    out.set_item("assignment", result.assignment)?;
    out.set_item("group_times", result.group_times)?;
    out.set_item("objective", result.objective)?;
    Ok(out.into())
}

/// Simulate a strategy; returns the summary dict (per-step rows included
/// under "steps").
#[pyfunction]
#[pyo3(signature = (profile_path, workload_path, gpus, strategy, steps=100, seed=0, r=16, grid_step=256, table_path=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    profile_path: PathBuf,
    workload_path: PathBuf,
    gpus: u32,
    strategy: &str,
    steps: u64,
    seed: u64,
    r: usize,
    grid_step: u32,
    table_path: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let profile = CostProfile::read_csv(&profile_path).map_err(py_err)?;
    let workload = WorkloadSpec::read_toml(&workload_path).map_err(py_err)?;
    let cluster = ClusterSpec::new(gpus).map_err(py_err)?;
    let strategy: Strategy = strategy.parse().map_err(py_err)?;
    let candidates = match table_path {
        Some(p) => {
            let table = configspace::ThroughputTable::read_csv(&p).map_err(py_err)?;
            configspace::propose_candidates(&table)
                .map_err(py_err)?
                .into_iter()
                .filter(|c| profile.find(c.tp_degree, c.pp_stages).is_ok())
                .collect()
        }
        None => profile.configs(),
    };
    let grid_max = profile.entries().iter().map(|e| e.config.max_seq_len).max().unwrap_or(16384);
    let grid = BoundaryGrid::uniform(grid_step, grid_max).map_err(py_err)?;
    let mut opts = SimOptions::new(grid, seed);
    opts.steps = steps;
    opts.r = r;
    let report = simulator::simulate(&workload, &cluster, &candidates, &profile, strategy, &opts)
        .map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("strategy", report.strategy.name())?;
    out.set_item("seed", report.seed)?;
    out.set_item("mean_step_time_s", report.mean_step_time_s)?;
    out.set_item("stddev_step_time_s", report.stddev_step_time_s)?;
    out.set_item("total_gpu_seconds", report.total_gpu_seconds)?;
    out.set_item("total_padding_tokens", report.total_padding_tokens)?;
    out.set_item("plans", report.plans)?;
    let rows: Vec<(u64, f64, f64, u64)> = report
        .rows
        .iter()
        .map(|r| (r.step, r.step_time_s, r.gpu_seconds, r.padding_tokens))
        .collect();
    out.set_item("steps", rows)?;
    Ok(out.into())
}

#[pymodule]
fn hetplan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CostModel>()?;
    m.add_function(wrap_pyfunction!(propose_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(dynamic_buckets, m)?)?;
    m.add_function(wrap_pyfunction!(solve_minimax, m)?)?;
    m.add_function(wrap_pyfunction!(plan_deployment, m)?)?;
    m.add_function(wrap_pyfunction!(dispatch, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
