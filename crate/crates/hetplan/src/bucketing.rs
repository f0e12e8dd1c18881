//! Length histograms on a fixed boundary grid and the dynamic-programming
//! selection of R active bucket boundaries that minimizes padding.
//!
//! Sequences are padded up to their bucket's boundary. Given grid
//! intervals `(u_{i-1}, u_i]`, the padding splits into a constant
//! intra-interval part (each sequence up to its own interval bound) and a
//! cross-interval part that depends on which interval bounds are kept as
//! bucket boundaries. The DP minimizes the cross part exactly; empty
//! intervals are skipped beforehand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::workload::WorkloadSpec;

/// Pre-defined candidate boundaries `u_1 < u_2 < ... < u_U` (tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryGrid {
    bounds: Vec<u32>,
}

impl BoundaryGrid {
    pub fn new(bounds: Vec<u32>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Invalid("grid must have at least one boundary".into()));
        }
        if bounds[0] == 0 || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("grid boundaries must be strictly increasing".into()));
        }
        Ok(Self { bounds })
    }

    /// Equal-length division `{step, 2*step, ...}` up to `max`.
    pub fn uniform(step: u32, max: u32) -> Result<Self> {
        if step == 0 || max < step {
            return Err(Error::Invalid(format!("bad grid: step={step} max={max}")));
        }
        Self::new((1..=max / step).map(|k| k * step).collect())
    }

    pub fn bounds(&self) -> &[u32] {
        &self.bounds
    }

    pub fn max(&self) -> u32 {
        *self.bounds.last().unwrap()
    }

    /// Index of the interval `(u_{i-1}, u_i]` containing `len`.
    pub fn interval_of(&self, len: u32) -> Result<usize> {
        if len == 0 {
            return Err(Error::Invalid("sequence length must be positive".into()));
        }
        if len > self.max() {
            return Err(Error::SequenceExceedsGrid { len, grid_max: self.max() });
        }
        Ok(self.bounds.partition_point(|&u| u < len))
    }
}

/// Per-interval sequence counts plus the constant intra-interval padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalHistogram {
    grid: BoundaryGrid,
    counts: Vec<u64>,
    total: u64,
    intra_padding: u64,
}

impl IntervalHistogram {
    pub fn grid(&self) -> &BoundaryGrid {
        &self.grid
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Padding from rounding each sequence up to its own interval bound.
    pub fn intra_padding(&self) -> u64 {
        self.intra_padding
    }

    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Bucket-sort lengths into grid intervals.
pub fn histogram(lengths: &[u32], grid: &BoundaryGrid) -> Result<IntervalHistogram> {
    let mut counts = vec![0u64; grid.bounds().len()];
    let mut intra = 0u64;
    for &len in lengths {
        let i = grid.interval_of(len)?;
        counts[i] += 1;
        intra += (grid.bounds()[i] - len) as u64;
    }
    Ok(IntervalHistogram {
        grid: grid.clone(),
        counts,
        total: lengths.len() as u64,
        intra_padding: intra,
    })
}

/// The R active boundaries chosen from the grid, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucketing {
    boundaries: Vec<u32>,
}

impl Bucketing {
    pub fn new(boundaries: Vec<u32>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::ZeroBuckets);
        }
        if boundaries[0] == 0 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("bucket boundaries must be strictly increasing".into()));
        }
        Ok(Self { boundaries })
    }

    pub fn boundaries(&self) -> &[u32] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> u32 {
        *self.boundaries.last().unwrap()
    }

    /// Bucket index (0-based) of the smallest boundary >= len.
    pub fn bucket_of(&self, len: u32) -> Result<usize> {
        if len > self.last() {
            return Err(Error::OverflowBucket { len, last: self.last() });
        }
        Ok(self.boundaries.partition_point(|&s| s < len))
    }

    /// Comma-separated token list.
    pub fn to_csv_line(&self) -> String {
        self.boundaries.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    }
}

/// Cross- and intra-interval padding of a chosen bucketing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingBreakdown {
    pub cross_interval: u64,
    pub intra_interval: u64,
}

impl PaddingBreakdown {
    pub fn total(&self) -> u64 {
        self.cross_interval + self.intra_interval
    }
}

/// Select up to `r` boundaries minimizing cross-interval padding.
///
/// Empty grid intervals are dropped first; the DP then covers the `n`
/// occupied intervals with exactly `min(r, n)` buckets (more buckets never
/// pad more). Among equal-padding optima the lexicographically smallest
/// boundary list wins. All padding arithmetic is exact in u64.
pub fn dynamic_buckets(
    hist: &IntervalHistogram,
    r: usize,
) -> Result<(Bucketing, PaddingBreakdown)> {
    if r == 0 {
        return Err(Error::ZeroBuckets);
    }
    let occ: Vec<(u32, u64)> = hist
        .grid()
        .bounds()
        .iter()
        .zip(hist.counts())
        .filter(|(_, &c)| c > 0)
        .map(|(&u, &c)| (u, c))
        .collect();
    let n = occ.len();
    if n == 0 {
        return Err(Error::EmptyHistogram);
    }
    let r_eff = r.min(n);

    // Prefix sums for O(1) bucket cost: cost(k..=e) with boundary u_e is
    // sum_{i=k..e} cnt_i * (u_e - u_i).
    let mut pc = vec![0u64; n + 1]; // counts
    let mut pw = vec![0u64; n + 1]; // counts * bound
    for (i, &(u, c)) in occ.iter().enumerate() {
        pc[i + 1] = pc[i] + c;
        pw[i + 1] = pw[i] + c * u as u64;
    }
    let cost = |k: usize, e: usize| -> u64 {
        occ[e].0 as u64 * (pc[e + 1] - pc[k]) - (pw[e + 1] - pw[k])
    };

    // Suffix DP: best[k][j] = min cross padding covering occ[k..] with
    // exactly j buckets. Suffix form makes the front-to-back reconstruction
    // pick the smallest feasible first boundary, giving the
    // lexicographically smallest optimal boundary list.
    const INF: u64 = u64::MAX;
    let mut best = vec![vec![INF; r_eff + 1]; n + 1];
    best[n][0] = 0;
    for k in (0..n).rev() {
        for j in 1..=r_eff {
            let mut acc = INF;
            // The remaining j-1 buckets need at least j-1 intervals.
            for e in k..=(n - j) {
                let tail = best[e + 1][j - 1];
                if tail == INF {
                    continue;
                }
                let c = cost(k, e) + tail;
                if c < acc {
                    acc = c;
                }
            }
            best[k][j] = acc;
        }
    }

    let cross = best[0][r_eff];
    debug_assert_ne!(cross, INF);
    let mut boundaries = Vec::with_capacity(r_eff);
    let mut k = 0usize;
    for j in (1..=r_eff).rev() {
        let mut chosen = None;
        for e in k..=(n - j) {
            if best[e + 1][j - 1] != INF && cost(k, e) + best[e + 1][j - 1] == best[k][j] {
                chosen = Some(e);
                break;
            }
        }
        let e = chosen.expect("DP reconstruction");
        boundaries.push(occ[e].0);
        k = e + 1;
    }
    debug_assert_eq!(k, n);

    Ok((
        Bucketing::new(boundaries)?,
        PaddingBreakdown { cross_interval: cross, intra_interval: hist.intra_padding() },
    ))
}

/// Total padding tokens when each sequence is rounded up to the smallest
/// boundary at or above its length.
pub fn padding_cost(lengths: &[u32], bucketing: &Bucketing) -> Result<u64> {
    let mut total = 0u64;
    for &len in lengths {
        let j = bucketing.bucket_of(len)?;
        total += (bucketing.boundaries()[j] - len) as u64;
    }
    Ok(total)
}

/// Empirical per-bucket composition of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchHistogram {
    /// Sequences per active bucket.
    pub counts: Vec<u64>,
    pub total: u64,
    /// Fraction of sequences per bucket (sums to 1 when total > 0).
    pub fractions: Vec<f64>,
}

impl BatchHistogram {
    pub fn from_lengths(lengths: &[u32], bucketing: &Bucketing) -> Result<Self> {
        let mut counts = vec![0u64; bucketing.len()];
        for &len in lengths {
            counts[bucketing.bucket_of(len)?] += 1;
        }
        Ok(Self::from_counts(counts))
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total: u64 = counts.iter().sum();
        let fractions = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        Self { counts, total, fractions }
    }
}

/// Sample `multiplier * B` lengths from the task mixture (each task
/// contributes `multiplier * batch_size` draws), pick padding-optimal
/// boundaries for them, and report the empirical bucket fractions used by
/// expectation-level planning. Deterministic for a fixed seed.
pub fn sample_boundaries(
    workload: &WorkloadSpec,
    multiplier: u64,
    r: usize,
    grid: &BoundaryGrid,
    seed: u64,
) -> Result<(Bucketing, BatchHistogram, PaddingBreakdown)> {
    if multiplier == 0 {
        return Err(Error::Invalid("multiplier must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lengths = Vec::with_capacity((workload.global_batch() * multiplier) as usize);
    for task in workload.tasks() {
        for _ in 0..task.batch_size * multiplier {
            lengths.push(task.dist.sample(&mut rng));
        }
    }
    let hist = histogram(&lengths, grid)?;
    let (bucketing, padding) = dynamic_buckets(&hist, r)?;
    let batch = BatchHistogram::from_lengths(&lengths, &bucketing)?;
    Ok((bucketing, batch, padding))
}
