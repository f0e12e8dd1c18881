//! Task mixtures: per-task batch sizes and sequence-length distributions.
//!
//! A workload spec is a TOML file of tasks; each task draws `batch_size`
//! sequences per training step from either an empirical length list or a
//! truncated lognormal parameterized by its mean.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Sequence-length distribution of one task.
#[derive(Debug, Clone, PartialEq)]
pub enum LengthDist {
    /// Uniform draw with replacement from observed lengths.
    Empirical { lengths: Vec<u32> },
    /// Lognormal with the given mean, truncated to `[1, max_len]`.
    LogNormal { mean: f64, sigma: f64, max_len: u32 },
}

impl LengthDist {
    pub fn max_length(&self) -> u32 {
        match self {
            LengthDist::Empirical { lengths } => *lengths.iter().max().unwrap(),
            LengthDist::LogNormal { max_len, .. } => *max_len,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        match self {
            LengthDist::Empirical { lengths } => lengths[rng.random_range(0..lengths.len())],
            LengthDist::LogNormal { mean, sigma, max_len } => {
                // mu chosen so the (untruncated) mean matches.
                let mu = mean.ln() - sigma * sigma / 2.0;
                let dist = LogNormal::new(mu, *sigma).expect("validated sigma");
                for _ in 0..64 {
                    let x = dist.sample(rng).round();
                    if x >= 1.0 && x <= *max_len as f64 {
                        return x as u32;
                    }
                }
                // Heavy-tail fallback: clamp rather than loop forever.
                (dist.sample(rng).round().max(1.0) as u32).min(*max_len)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LengthDist::Empirical { lengths } => {
                if lengths.is_empty() {
                    return Err(Error::Invalid("empirical length list is empty".into()));
                }
                if lengths.iter().any(|&l| l == 0) {
                    return Err(Error::Invalid("empirical lengths must be positive".into()));
                }
            }
            LengthDist::LogNormal { mean, sigma, max_len } => {
                if !(*mean > 0.0) || !(*sigma > 0.0) || *max_len == 0 {
                    return Err(Error::Invalid(format!(
                        "bad lognormal parameters: mean={mean} sigma={sigma} max_len={max_len}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One fine-tuning task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    /// Sequences drawn per training step.
    pub batch_size: u64,
    pub dist: LengthDist,
}

/// The joint workload: all tasks trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    tasks: Vec<TaskSpec>,
}

impl WorkloadSpec {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Invalid("workload has no tasks".into()));
        }
        for t in &tasks {
            if t.batch_size == 0 {
                return Err(Error::Invalid(format!("task {}: batch_size must be >= 1", t.name)));
            }
            t.dist.validate()?;
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    /// Global per-step batch size (sum over tasks).
    pub fn global_batch(&self) -> u64 {
        self.tasks.iter().map(|t| t.batch_size).sum()
    }

    /// Largest length any task can produce.
    pub fn max_length(&self) -> u32 {
        self.tasks.iter().map(|t| t.dist.max_length()).max().unwrap()
    }

    /// Single-task view, for sequential strategies.
    pub fn single_task(&self, idx: usize) -> WorkloadSpec {
        WorkloadSpec { tasks: vec![self.tasks[idx].clone()] }
    }

    /// Clamp lognormal truncation to the grid maximum and reject empirical
    /// lengths beyond it.
    pub fn fit_to_grid(&mut self, grid_max: u32) -> Result<()> {
        for t in &mut self.tasks {
            match &mut t.dist {
                LengthDist::Empirical { lengths } => {
                    if let Some(&bad) = lengths.iter().find(|&&l| l > grid_max) {
                        return Err(Error::SequenceExceedsGrid { len: bad, grid_max });
                    }
                }
                LengthDist::LogNormal { max_len, .. } => {
                    *max_len = (*max_len).min(grid_max);
                }
            }
        }
        Ok(())
    }

    pub fn read_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let raw: RawWorkload =
            toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut tasks = Vec::new();
        for rt in raw.task {
            let dist = match rt.dist {
                RawDist::Lognormal { mean, sigma, max_len } => {
                    LengthDist::LogNormal { mean, sigma, max_len: max_len.unwrap_or(u32::MAX) }
                }
                RawDist::Empirical { file } => {
                    let p = base.join(&file);
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    let mut lengths = Vec::new();
                    for (i, line) in text.lines().enumerate() {
                        let line = line.trim();
                        if line.is_empty() || line.starts_with('#') {
                            continue;
                        }
                        lengths.push(line.parse::<u32>().map_err(|_| {
                            Error::parse(&p, format!("line {}: bad length: {line}", i + 1))
                        })?);
                    }
                    LengthDist::Empirical { lengths }
                }
            };
            tasks.push(TaskSpec { name: rt.name, batch_size: rt.batch_size, dist });
        }
        Self::new(tasks)
    }
}

#[derive(Deserialize)]
struct RawWorkload {
    task: Vec<RawTask>,
}

#[derive(Deserialize)]
struct RawTask {
    name: String,
    batch_size: u64,
    dist: RawDist,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawDist {
    Lognormal { mean: f64, sigma: f64, max_len: Option<u32> },
    Empirical { file: String },
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_toml_workload() {
        let text = r#"
[[task]]
name = "qa"
batch_size = 64
dist = { kind = "lognormal", mean = 300.0, sigma = 0.8, max_len = 2048 }
"#;
        let w = WorkloadSpec::from_toml_str(text, Path::new("mem.toml")).unwrap();
        assert_eq!(w.global_batch(), 64);
        assert_eq!(w.max_length(), 2048);
    }

    #[test]
    fn lognormal_respects_truncation() {
        let d = LengthDist::LogNormal { mean: 1000.0, sigma: 1.2, max_len: 2048 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5000 {
            let l = d.sample(&mut rng);
            assert!((1..=2048).contains(&l));
        }
    }

    #[test]
    fn lognormal_mean_roughly_matches() {
        let d = LengthDist::LogNormal { mean: 500.0, sigma: 0.6, max_len: 1 << 20 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20000;
        let sum: f64 = (0..n).map(|_| d.sample(&mut rng) as f64).sum();
        let mean = sum / n as f64;
        assert!((mean / 500.0 - 1.0).abs() < 0.05, "mean={mean}");
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(WorkloadSpec::new(vec![]).is_err());
        assert!(WorkloadSpec::new(vec![TaskSpec {
            name: "x".into(),
            batch_size: 0,
            dist: LengthDist::Empirical { lengths: vec![1] },
        }])
        .is_err());
        assert!(WorkloadSpec::new(vec![TaskSpec {
            name: "x".into(),
            batch_size: 1,
            dist: LengthDist::Empirical { lengths: vec![] },
        }])
        .is_err());
    }

    #[test]
    fn fit_to_grid_clamps_and_rejects() {
        let mut w = WorkloadSpec::new(vec![TaskSpec {
            name: "ln".into(),
            batch_size: 1,
            dist: LengthDist::LogNormal { mean: 100.0, sigma: 0.5, max_len: u32::MAX },
        }])
        .unwrap();
        w.fit_to_grid(4096).unwrap();
        assert_eq!(w.max_length(), 4096);

        let mut w = WorkloadSpec::new(vec![TaskSpec {
            name: "emp".into(),
            batch_size: 1,
            dist: LengthDist::Empirical { lengths: vec![5000] },
        }])
        .unwrap();
        assert!(w.fit_to_grid(4096).is_err());
    }
}
