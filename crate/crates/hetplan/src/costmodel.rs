//! Fitted time model for fine-tuning replicas.
//!
//! Per configuration, the time of one micro-batch of `b` sequences padded
//! to length `s` is `t(b,s) = b * (a2*s^2 + a1*s + a0)`: quadratic in the
//! length (attention) and proportional to the batch size. A replica
//! processing per-bucket counts splits each bucket into memory-saturating
//! chunks of `b_j = floor(M / s_j)` sequences plus a remainder, runs the
//! chunks back to back, and (for pipelined configs) pays a bubble of
//! `(p - 1)` times the largest chunk time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::bucketing::Bucketing;
use crate::configspace::ParallelConfig;
use crate::error::{Error, Result};

/// One offline profiling measurement of a micro-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilingSample {
    pub tp_degree: u32,
    pub pp_stages: u32,
    pub batch_size: u64,
    pub seq_len: u32,
    pub time_s: f64,
}

/// Per-sequence time polynomial `a2*s^2 + a1*s + a0` (seconds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCurve {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
}

impl CostCurve {
    pub fn per_seq_time(&self, seq_len: u32) -> f64 {
        let s = seq_len as f64;
        self.a2 * s * s + self.a1 * s + self.a0
    }
}

/// Fitted curve for one configuration plus fit diagnostics.
#[derive(Debug, Clone)]
pub struct ConfigCost {
    pub config: ParallelConfig,
    pub curve: CostCurve,
    /// Largest |predicted/observed - 1| over the samples used in the fit.
    pub max_rel_residual: f64,
}

/// Chunking of one bucket's per-replica share into micro-batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MicroBatchSchedule {
    /// Memory-saturating chunk size `floor(M / s_j)`.
    pub chunk_size: u64,
    /// Number of full chunks.
    pub full_chunks: u64,
    /// Leftover sequences (0 <= rem < chunk_size).
    pub remainder: u64,
}

impl MicroBatchSchedule {
    pub fn for_count(config: &ParallelConfig, count: u64, seq_len: u32) -> Result<Self> {
        if seq_len > config.max_seq_len {
            return Err(Error::SeqLenUnsupported { seq_len, max_seq_len: config.max_seq_len });
        }
        let chunk_size = (config.max_seq_len / seq_len) as u64;
        Ok(Self { chunk_size, full_chunks: count / chunk_size, remainder: count % chunk_size })
    }
}

/// Fitted cost curves for a set of configurations.
#[derive(Debug, Clone, Default)]
pub struct CostProfile {
    entries: Vec<ConfigCost>,
}

impl CostProfile {
    pub fn from_entries(mut entries: Vec<ConfigCost>) -> Self {
        entries.sort_by_key(|e| {
            (e.config.gpus_per_replica(), e.config.tp_degree, e.config.pp_stages)
        });
        Self { entries }
    }

    pub fn entries(&self) -> &[ConfigCost] {
        &self.entries
    }

    pub fn configs(&self) -> Vec<ParallelConfig> {
        self.entries.iter().map(|e| e.config).collect()
    }

    pub fn find(&self, tp: u32, pp: u32) -> Result<&ConfigCost> {
        self.entries
            .iter()
            .find(|e| e.config.tp_degree == tp && e.config.pp_stages == pp)
            .ok_or(Error::UnknownConfig { tp, pp })
    }

    /// Keep only the given configs (by tp/pp), preserving order.
    pub fn restrict(&self, configs: &[ParallelConfig]) -> Result<CostProfile> {
        let mut entries = Vec::with_capacity(configs.len());
        for c in configs {
            entries.push(self.find(c.tp_degree, c.pp_stages)?.clone());
        }
        Ok(CostProfile::from_entries(entries))
    }

    /// Scale every curve by a layer count, for profiles fitted from
    /// single-layer samples of an N-layer model.
    pub fn scaled_by_layers(&self, layers: u32) -> Result<CostProfile> {
        if layers == 0 {
            return Err(Error::Invalid("layer count must be positive".into()));
        }
        let f = layers as f64;
        let entries = self
            .entries
            .iter()
            .map(|e| ConfigCost {
                config: e.config,
                curve: CostCurve { a2: e.curve.a2 * f, a1: e.curve.a1 * f, a0: e.curve.a0 * f },
                max_rel_residual: e.max_rel_residual,
            })
            .collect();
        Ok(CostProfile::from_entries(entries))
    }

    /// Serialize as CSV `tp,pp,max_seq_len,a2,a1,a0` (floats round-trip).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("tp,pp,max_seq_len,a2,a1,a0\n");
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                e.config.tp_degree,
                e.config.pp_stages,
                e.config.max_seq_len,
                e.curve.a2,
                e.curve.a1,
                e.curve.a0
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv_str(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?;
        if header != "tp,pp,max_seq_len,a2,a1,a0" {
            return Err(Error::parse(path, format!("unexpected header: {header}")));
        }
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::parse(path, format!("line {}: expected 6 fields", lineno + 2)));
            }
            let bad = |what: &str| Error::parse(path, format!("line {}: bad {what}", lineno + 2));
            let tp: u32 = fields[0].trim().parse().map_err(|_| bad("tp"))?;
            let pp: u32 = fields[1].trim().parse().map_err(|_| bad("pp"))?;
            let max_seq_len: u32 = fields[2].trim().parse().map_err(|_| bad("max_seq_len"))?;
            let a2: f64 = fields[3].trim().parse().map_err(|_| bad("a2"))?;
            let a1: f64 = fields[4].trim().parse().map_err(|_| bad("a1"))?;
            let a0: f64 = fields[5].trim().parse().map_err(|_| bad("a0"))?;
            entries.push(ConfigCost {
                config: ParallelConfig::new(tp, pp, max_seq_len)?,
                curve: CostCurve { a2, a1, a0 },
                max_rel_residual: 0.0,
            });
        }
        Ok(Self::from_entries(entries))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, path)
    }
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<ProfilingSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    samples_from_csv_str(&text, path)
}

/// Parse samples CSV with header `tp,pp,batch_size,seq_len,time_s`.
pub fn samples_from_csv_str(text: &str, path: &Path) -> Result<Vec<ProfilingSample>> {
    let mut samples = Vec::new();
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?;
    if header != "tp,pp,batch_size,seq_len,time_s" {
        return Err(Error::parse(path, format!("unexpected header: {header}")));
    }
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, format!("line {}: expected 5 fields", lineno + 2)));
        }
        let bad = |what: &str| Error::parse(path, format!("line {}: bad {what}", lineno + 2));
        samples.push(ProfilingSample {
            tp_degree: fields[0].trim().parse().map_err(|_| bad("tp"))?,
            pp_stages: fields[1].trim().parse().map_err(|_| bad("pp"))?,
            batch_size: fields[2].trim().parse().map_err(|_| bad("batch_size"))?,
            seq_len: fields[3].trim().parse().map_err(|_| bad("seq_len"))?,
            time_s: fields[4].trim().parse().map_err(|_| bad("time_s"))?,
        });
    }
    Ok(samples)
}

/// Least-squares fit of per-sequence time (`time / b`) against
/// `{s^2, s, 1}`, one curve per configuration. Needs at least three
/// distinct lengths per config; a fit predicting a non-positive time at
/// any profiled point (or genuinely negative curvature) is rejected as
/// degenerate. Max supported length is the largest profiled length.
pub fn fit_cost_curve(samples: &[ProfilingSample]) -> Result<CostProfile> {
    let mut by_config: BTreeMap<(u32, u32), Vec<&ProfilingSample>> = BTreeMap::new();
    for s in samples {
        if s.batch_size == 0 || s.seq_len == 0 || !(s.time_s > 0.0) {
            return Err(Error::Invalid(format!(
                "invalid sample for <{},{}>: b={} s={} t={}",
                s.tp_degree, s.pp_stages, s.batch_size, s.seq_len, s.time_s
            )));
        }
        by_config.entry((s.tp_degree, s.pp_stages)).or_default().push(s);
    }
    if by_config.is_empty() {
        return Err(Error::EmptyTable);
    }

    let mut entries = Vec::new();
    for ((tp, pp), group) in by_config {
        let label = format!("<{tp},{pp}>");
        let mut lens: Vec<u32> = group.iter().map(|s| s.seq_len).collect();
        lens.sort_unstable();
        lens.dedup();
        if lens.len() < 3 {
            return Err(Error::TooFewLengths { config: label, found: lens.len() });
        }
        let max_seq_len = *lens.last().unwrap();

        // Scale lengths to [0, 1] before forming normal equations; the raw
        // Vandermonde in s^2 is too ill-conditioned at 16k tokens.
        let scale = max_seq_len as f64;
        let mut ata = [[0.0f64; 3]; 3];
        let mut aty = [0.0f64; 3];
        for s in &group {
            let x = s.seq_len as f64 / scale;
            let y = s.time_s / s.batch_size as f64;
            let basis = [x * x, x, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += basis[i] * basis[j];
                }
                aty[i] += basis[i] * y;
            }
        }
        let coef = solve3(ata, aty)
            .ok_or_else(|| Error::DegenerateFit(label.clone()))?;
        let mut curve = CostCurve {
            a2: coef[0] / (scale * scale),
            a1: coef[1] / scale,
            a0: coef[2],
        };

        // Residuals and positivity over the profiled points.
        let mut max_rel_residual = 0.0f64;
        let mut max_pred = 0.0f64;
        for s in &group {
            let pred = s.batch_size as f64 * curve.per_seq_time(s.seq_len);
            max_pred = max_pred.max(pred.abs());
            if !(pred > 0.0) {
                return Err(Error::DegenerateFit(label.clone()));
            }
            max_rel_residual = max_rel_residual.max((pred / s.time_s - 1.0).abs());
        }
        if curve.a2 < 0.0 {
            // Round-off on exactly-linear data is fine; real negative
            // curvature is not in the model class.
            if curve.a2.abs() * scale * scale > 1e-9 * max_pred {
                return Err(Error::DegenerateFit(label));
            }
            curve.a2 = 0.0;
        }

        entries.push(ConfigCost {
            config: ParallelConfig::new(tp, pp, max_seq_len)?,
            curve,
            max_rel_residual,
        });
    }
    Ok(CostProfile::from_entries(entries))
}

/// Gaussian elimination with partial pivoting for the 3x3 normal equations.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut acc = b[col];
        for k in col + 1..3 {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

/// Time of one micro-batch of `b` sequences at length `s`:
/// `b * (a2*s^2 + a1*s + a0)`. The chunk must fit the token budget
/// (`b*s <= max_seq_len`), mirroring the memory rule that defines the
/// saturating chunk size.
pub fn micro_time(profile: &CostProfile, config: &ParallelConfig, b: u64, s: u32) -> Result<f64> {
    let entry = profile.find(config.tp_degree, config.pp_stages)?;
    if s > entry.config.max_seq_len {
        return Err(Error::SeqLenUnsupported { seq_len: s, max_seq_len: entry.config.max_seq_len });
    }
    if b * s as u64 > entry.config.max_seq_len as u64 {
        return Err(Error::ChunkExceedsBudget {
            batch: b,
            seq_len: s,
            max_seq_len: entry.config.max_seq_len,
        });
    }
    Ok(b as f64 * entry.curve.per_seq_time(s))
}

/// Time for one replica to process per-bucket sequence counts.
///
/// Each bucket is chunked per [`MicroBatchSchedule`]; compute time is the
/// sum of chunk times and the pipeline bubble is `(p - 1)` times the
/// largest chunk time actually present. With one pipeline stage the
/// bubble vanishes and this reduces to the plain sum.
///
/// The float evaluation here is the single source of timing truth: the
/// dispatch optimizer mirrors it operation for operation.
pub fn replica_time(
    profile: &CostProfile,
    config: &ParallelConfig,
    counts: &[u64],
    boundaries: &Bucketing,
) -> Result<f64> {
    let entry = profile.find(config.tp_degree, config.pp_stages)?;
    let bounds = boundaries.boundaries();
    if counts.len() > bounds.len() {
        return Err(Error::Invalid(format!(
            "{} bucket counts for {} boundaries",
            counts.len(),
            bounds.len()
        )));
    }
    let mut compute = 0.0f64;
    let mut max_chunk = 0.0f64;
    for (j, &d) in counts.iter().enumerate() {
        if d == 0 {
            continue;
        }
        let s = bounds[j];
        if s > entry.config.max_seq_len {
            return Err(Error::UnsupportedBucket {
                boundary: s,
                max_seq_len: entry.config.max_seq_len,
            });
        }
        let sched = MicroBatchSchedule::for_count(&entry.config, d, s)?;
        let g = entry.curve.per_seq_time(s);
        let full_time = sched.chunk_size as f64 * g;
        let rem_time = sched.remainder as f64 * g;
        compute += sched.full_chunks as f64 * full_time + rem_time;
        if sched.full_chunks >= 1 && full_time > max_chunk {
            max_chunk = full_time;
        }
        if sched.remainder >= 1 && rem_time > max_chunk {
            max_chunk = rem_time;
        }
    }
    let bubble = (entry.config.pp_stages - 1) as f64 * max_chunk;
    Ok(compute + bubble)
}

/// Average throughput bound at length `s`: tokens/GPU/s when running the
/// memory-saturating chunk `b = floor(M/s)`, i.e. `b*s / (n * t(b,s))`.
pub fn atb(profile: &CostProfile, config: &ParallelConfig, s: u32) -> Result<f64> {
    let entry = profile.find(config.tp_degree, config.pp_stages)?;
    if s > entry.config.max_seq_len {
        return Err(Error::SeqLenUnsupported { seq_len: s, max_seq_len: entry.config.max_seq_len });
    }
    let b = (entry.config.max_seq_len / s) as u64;
    let t = b as f64 * entry.curve.per_seq_time(s);
    Ok((b * s as u64) as f64 / (entry.config.gpus_per_replica() as f64 * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn sample(tp: u32, pp: u32, b: u64, s: u32, t: f64) -> ProfilingSample {
        ProfilingSample { tp_degree: tp, pp_stages: pp, batch_size: b, seq_len: s, time_s: t }
    }

    /// Profile with a single hand-set curve, for direct formula checks.
    fn profile_with(curve: CostCurve, tp: u32, pp: u32, max_seq_len: u32) -> CostProfile {
        CostProfile::from_entries(vec![ConfigCost {
            config: ParallelConfig::new(tp, pp, max_seq_len).unwrap(),
            curve,
            max_rel_residual: 0.0,
        }])
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let law = |b: u64, s: u32| b as f64 * (2.0 * (s as f64).powi(2) + 3.0 * s as f64 + 5.0);
        let mut samples = Vec::new();
        for &s in &[128u32, 512, 1024, 2048, 4096] {
            for &b in &[1u64, 2, 4] {
                samples.push(sample(1, 1, b, s, law(b, s)));
            }
        }
        let profile = fit_cost_curve(&samples).unwrap();
        let e = profile.find(1, 1).unwrap();
        assert!((e.curve.a2 / 2.0 - 1.0).abs() < 1e-9);
        assert!((e.curve.a1 / 3.0 - 1.0).abs() < 1e-9);
        assert!((e.curve.a0 / 5.0 - 1.0).abs() < 1e-9);
        assert!(e.max_rel_residual < 1e-9);
    }

    #[test]
    fn fit_sees_proportionality_in_batch_size() {
        // b in {1,2,4} at fixed lengths from the same law: per-sequence
        // times coincide, so the fit is exact and residuals vanish.
        let law = |s: u32| 0.5 * (s as f64).powi(2) + 1.0;
        let mut samples = Vec::new();
        for &s in &[256u32, 1024, 2048] {
            for &b in &[1u64, 2, 4] {
                samples.push(sample(2, 1, b, s, b as f64 * law(s)));
            }
        }
        let profile = fit_cost_curve(&samples).unwrap();
        assert!(profile.find(2, 1).unwrap().max_rel_residual < 1e-12);
    }

    #[test]
    fn fit_requires_three_distinct_lengths() {
        let samples =
            vec![sample(1, 1, 1, 512, 1.0), sample(1, 1, 2, 512, 2.0), sample(1, 1, 1, 1024, 2.0)];
        match fit_cost_curve(&samples) {
            Err(Error::TooFewLengths { config, found }) => {
                assert_eq!(config, "<1,1>");
                assert_eq!(found, 2);
            }
            other => panic!("expected TooFewLengths, got {other:?}"),
        }
    }

    #[test]
    fn fit_rejects_negative_curvature() {
        // Strongly concave in s: not in the model class.
        let law = |s: u32| -1e-4 * (s as f64).powi(2) + 10.0 * s as f64;
        let samples: Vec<_> =
            [256u32, 512, 1024, 2048].iter().map(|&s| sample(1, 1, 1, s, law(s))).collect();
        assert!(matches!(fit_cost_curve(&samples), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn fixture_leave_one_out_within_ten_percent() {
        let samples = fixtures::profiling_samples();
        let mut checked = 0usize;
        for hold in 0..samples.len() {
            let held = samples[hold];
            let rest: Vec<ProfilingSample> = samples
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != hold)
                .map(|(_, s)| *s)
                .collect();
            let lens: std::collections::BTreeSet<u32> = rest
                .iter()
                .filter(|s| (s.tp_degree, s.pp_stages) == (held.tp_degree, held.pp_stages))
                .map(|s| s.seq_len)
                .collect();
            if lens.len() < 3 || !lens.contains(&held.seq_len) {
                // Holding out the only sample at a config's max length
                // would shrink its supported range; skip extrapolation.
                continue;
            }
            let profile = fit_cost_curve(&rest).unwrap();
            let e = profile.find(held.tp_degree, held.pp_stages).unwrap();
            let pred = held.batch_size as f64 * e.curve.per_seq_time(held.seq_len);
            let rel = (pred / held.time_s - 1.0).abs();
            assert!(
                rel < 0.10,
                "LOO error {:.3} for <{},{}> b={} s={}",
                rel,
                held.tp_degree,
                held.pp_stages,
                held.batch_size,
                held.seq_len
            );
            checked += 1;
        }
        assert!(checked > 20, "LOO exercised only {checked} holdouts");
    }

    #[test]
    fn micro_time_linear_law() {
        let p = profile_with(CostCurve { a2: 0.0, a1: 1.0, a0: 0.0 }, 1, 1, 64);
        let c = p.configs()[0];
        assert_eq!(micro_time(&p, &c, 2, 4).unwrap(), 8.0);
        assert_eq!(micro_time(&p, &c, 0, 4).unwrap(), 0.0);
        assert!(matches!(
            micro_time(&p, &c, 33, 2),
            Err(Error::ChunkExceedsBudget { .. })
        ));
    }

    #[test]
    fn micro_time_matches_profiled_throughput() {
        let profile = fixtures::cost_profile();
        let c = *profile.find(1, 1).map(|e| &e.config).unwrap();
        let t = micro_time(&profile, &c, 1, 2048).unwrap();
        let expected = 2048.0 / (5.11 * 1.0);
        assert!((t / expected - 1.0).abs() < 0.10, "t={t} expected~{expected}");
    }

    #[test]
    fn replica_time_chunks_and_remainder() {
        // t(b,s) = b*s, M=8, one bucket s=4, d=5 -> chunks 2+2+1 -> 2*8+4.
        let p = profile_with(CostCurve { a2: 0.0, a1: 1.0, a0: 0.0 }, 1, 1, 8);
        let c = p.configs()[0];
        let bounds = Bucketing::new(vec![4, 8]).unwrap();
        let t = replica_time(&p, &c, &[5, 0], &bounds).unwrap();
        assert_eq!(t, 20.0);
    }

    #[test]
    fn replica_time_fixed_length_pipeline() {
        // 8 unit-time chunks on 4 stages: 8 + (4-1)*1 = 11.
        let p = profile_with(CostCurve { a2: 0.0, a1: 0.0, a0: 1.0 }, 1, 4, 4);
        let c = p.configs()[0];
        let bounds = Bucketing::new(vec![4]).unwrap();
        // chunk_size = 1, so 8 sequences = 8 full chunks of time 1.
        let t = replica_time(&p, &c, &[8], &bounds).unwrap();
        assert_eq!(t, 11.0);
    }

    #[test]
    fn replica_time_variable_length_pipeline() {
        // Bucket A: 2 chunks of 2s, bucket B: 3 chunks of 1s, pp=2:
        // compute 7, bubble max(2,1) = 2 -> 9.
        let p = profile_with(CostCurve { a2: 0.0, a1: 0.5, a0: 0.0 }, 1, 2, 4);
        let c = p.configs()[0];
        let bounds = Bucketing::new(vec![2, 4]).unwrap();
        // s=4: chunk_size 1, per-chunk 2s; s=2: chunk_size 2, per-chunk 2s?
        // Pick counts so schedule is exactly 2 chunks of 2s + 3 chunks of 1s:
        // bucket s=4 (g=2): d=2 -> 2 full chunks of time 2.
        // bucket s=2 (g=1): chunk_size=2, d=5 -> 2 full chunks of 2s... use
        // explicit small law instead: s=2 g=1, chunk(1 seq)=1s.
        // d=3 at chunk_size 2 -> 1 full chunk (2s) + rem 1 (1s). Simpler to
        // assert the formula directly:
        let t = replica_time(&p, &c, &[3, 2], &bounds).unwrap();
        // bucket 1: g=1, chunk_size=2: 1 full (2.0) + rem 1 (1.0) = 3.0
        // bucket 2: g=2, chunk_size=1: 2 full (2.0 each) = 4.0
        // compute 7.0, bubble (2-1)*max(2,1,2) = 2.0
        assert_eq!(t, 9.0);
    }

    #[test]
    fn replica_time_rejects_unsupported_bucket() {
        let p = profile_with(CostCurve { a2: 0.0, a1: 1.0, a0: 0.0 }, 1, 1, 4);
        let c = p.configs()[0];
        let bounds = Bucketing::new(vec![4, 8]).unwrap();
        assert!(matches!(
            replica_time(&p, &c, &[0, 1], &bounds),
            Err(Error::UnsupportedBucket { .. })
        ));
    }

    #[test]
    fn replica_time_monotone_and_additive() {
        let profile = fixtures::cost_profile();
        let c = *profile.find(8, 1).map(|e| &e.config).unwrap();
        let bounds = Bucketing::new(vec![2048, 4096, 8192, 16384]).unwrap();
        let mut prev = 0.0;
        for d in 0..20u64 {
            let t = replica_time(&profile, &c, &[d, d / 2, d / 3, d / 5], &bounds).unwrap();
            assert!(t >= prev);
            prev = t;
        }
        // Per-sequence linearity: compute part equals sum of per-bucket
        // shares times per-seq cost (t is proportional to b by construction).
        let counts = [7u64, 3, 2, 1];
        let t = replica_time(&profile, &c, &counts, &bounds).unwrap();
        let e = profile.find(8, 1).unwrap();
        let mut linear = 0.0;
        let mut max_chunk = 0.0f64;
        for (j, &d) in counts.iter().enumerate() {
            let g = e.curve.per_seq_time(bounds.boundaries()[j]);
            linear += d as f64 * g;
            let b = (c.max_seq_len / bounds.boundaries()[j]) as u64;
            max_chunk = max_chunk.max(d.min(b) as f64 * g);
        }
        let expected = linear; // pp=1: no bubble
        let _ = max_chunk;
        assert!((t - expected).abs() <= 1e-9 * expected.abs());
    }

    #[test]
    fn atb_constant_under_throughput_law() {
        // t(b,s) = b*s/(n*c) with n=2, c=4 -> per-seq time s/8.
        let p = profile_with(CostCurve { a2: 0.0, a1: 1.0 / 8.0, a0: 0.0 }, 2, 1, 4096);
        let c = p.configs()[0];
        for s in [256u32, 512, 1024, 4096] {
            let v = atb(&p, &c, s).unwrap();
            assert!((v - 4.0).abs() < 1e-12);
        }
        // s = M: b = 1, ATB = M / (n * t(1, M)).
        let v = atb(&p, &c, 4096).unwrap();
        assert!((v - 4096.0 / (2.0 * (4096.0 / 8.0))).abs() < 1e-12);
        assert!(atb(&p, &c, 8192).is_err());
    }

    #[test]
    fn atb_matches_profiled_table_anchor() {
        let profile = fixtures::cost_profile();
        let c = *profile.find(2, 4).map(|e| &e.config).unwrap();
        let v = atb(&profile, &c, 8192).unwrap();
        assert!((v / 3.79 - 1.0).abs() < 0.10, "ATB {v} vs 3.79");
    }

    #[test]
    fn atb_ordering_matches_throughput_table() {
        let table = fixtures::throughput_table();
        let profile = fixtures::cost_profile();
        for ea in table.entries() {
            for eb in table.entries() {
                if ea.seq_len != eb.seq_len
                    || (ea.tp_degree, ea.pp_stages) >= (eb.tp_degree, eb.pp_stages)
                {
                    continue;
                }
                let ca = profile.find(ea.tp_degree, ea.pp_stages).unwrap().config;
                let cb = profile.find(eb.tp_degree, eb.pp_stages).unwrap().config;
                let aa = atb(&profile, &ca, ea.seq_len).unwrap();
                let ab = atb(&profile, &cb, ea.seq_len).unwrap();
                assert!(
                    (ea.thruput - eb.thruput) * (aa - ab) >= 0.0,
                    "ATB ordering flip at s={} for {:?} vs {:?}",
                    ea.seq_len,
                    (ea.tp_degree, ea.pp_stages),
                    (eb.tp_degree, eb.pp_stages)
                );
            }
        }
    }

    #[test]
    fn profile_csv_round_trips() {
        let profile = fixtures::cost_profile();
        let text = profile.to_csv_string();
        let back = CostProfile::from_csv_str(&text, Path::new("mem")).unwrap();
        for (a, b) in profile.entries().iter().zip(back.entries()) {
            assert_eq!(a.config, b.config);
            assert_eq!(a.curve, b.curve);
        }
    }
}
