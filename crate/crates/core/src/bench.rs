//! Wall-time scaling of the fast layer against the pairwise oracle.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::LayerError;
use crate::oracle::naive_layer;
use crate::rankformer::{attention_step, RankformerConfig};
use crate::seed::derive_seed;
use crate::synthetic::random_graph_with_edges;
use crate::verify::Check;
use crate::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchPoint {
    pub n: usize,
    pub m: usize,
    pub e: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerPath {
    Fast,
    Naive,
}

impl LayerPath {
    pub fn label(self) -> &'static str {
        match self {
            LayerPath::Fast => "fast",
            LayerPath::Naive => "naive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub median: f64,
    /// `(max − min) / median`.
    pub spread: f64,
    pub samples: Vec<f64>,
}

impl Timing {
    fn from_samples(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        let median = samples[samples.len() / 2];
        let spread = (samples[samples.len() - 1] - samples[0]) / median;
        Self { median, spread, samples }
    }
}

/// Each sample averages enough back-to-back runs to cover this much wall time,
/// so millisecond-scale layers are not dominated by scheduler noise.
const MIN_SAMPLE_SECONDS: f64 = 0.2;

/// One prepared grid point: graph, embeddings and the number of runs per sample.
struct Prepared {
    g: crate::InteractionGraph,
    z: EmbeddingMatrix,
    path: LayerPath,
    inner: usize,
}

impl Prepared {
    fn new(point: BenchPoint, path: LayerPath, seed: u64) -> Result<Self, LayerError> {
        let g = random_graph_with_edges(point.n, point.m, point.e, derive_seed(seed, "bench-graph"));
        let z = EmbeddingMatrix::gaussian(point.n, point.m, point.d, 1.0, derive_seed(seed, "bench-init"));
        let mut p = Self { g, z, path, inner: 1 };
        // Warm-up run, also used to size the sample.
        let once = p.sample()?.max(1e-6);
        p.inner = ((MIN_SAMPLE_SECONDS / once).ceil() as usize).clamp(1, 1000);
        Ok(p)
    }

    fn sample(&self) -> Result<f64, LayerError> {
        let cfg = RankformerConfig {
            layers: 1,
            warmup_first_layer: false,
            ..Default::default()
        };
        let start = Instant::now();
        for _ in 0..self.inner {
            let out = match self.path {
                LayerPath::Fast => attention_step(&self.g, &self.z, &cfg),
                LayerPath::Naive => naive_layer(&self.g, &self.z, &cfg),
            };
            std::hint::black_box(out?);
        }
        Ok(start.elapsed().as_secs_f64() / self.inner as f64)
    }
}

/// Times several grid points in interleaved rounds, so slow drift in machine
/// speed hits every point alike. Returns one timing per point.
pub fn time_points(points: &[(BenchPoint, LayerPath)], reps: usize, seed: u64) -> Result<Vec<Timing>, LayerError> {
    let prepared = points
        .iter()
        .map(|&(pt, path)| Prepared::new(pt, path, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut samples = vec![Vec::with_capacity(reps); points.len()];
    for _ in 0..reps.max(1) {
        for (p, s) in prepared.iter().zip(&mut samples) {
            s.push(p.sample()?);
        }
    }
    Ok(samples.into_iter().map(Timing::from_samples).collect())
}

/// Median of `reps` timed samples (after one untimed warm-up run).
pub fn time_layer(point: BenchPoint, path: LayerPath, reps: usize, seed: u64) -> Result<Timing, LayerError> {
    Ok(time_points(&[(point, path)], reps, seed)?.remove(0))
}

#[derive(Debug, Clone, Copy)]
pub struct BenchGrid {
    /// Same `n`, `m`, `d`; the second point has twice the edges.
    pub edge_doubling: (BenchPoint, BenchPoint),
    /// Same `n`, `e`, `d`; the second point has four times the items.
    pub item_quadrupling: (BenchPoint, BenchPoint),
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            edge_doubling: (
                BenchPoint { n: 4000, m: 4000, e: 200_000, d: 8 },
                BenchPoint { n: 4000, m: 4000, e: 400_000, d: 8 },
            ),
            item_quadrupling: (
                BenchPoint { n: 1000, m: 250, e: 50_000, d: 8 },
                BenchPoint { n: 1000, m: 1000, e: 50_000, d: 8 },
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub group: &'static str,
    pub point: BenchPoint,
    pub path: LayerPath,
    pub timing: Timing,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub checks: Vec<Check>,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.gating).all(|c| c.passed)
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "group,path,n,m,e,d,median_s,spread")?;
        for r in &self.rows {
            let p = r.point;
            writeln!(
                f,
                "{},{},{},{},{},{},{:.6},{:.3}",
                r.group,
                r.path.label(),
                p.n,
                p.m,
                p.e,
                p.d,
                r.timing.median,
                r.timing.spread
            )?;
        }
        f.flush()
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        gating: true,
        detail,
        seconds: 0.0,
    }
}

/// Times the grid and evaluates the scaling properties:
/// fast time grows by a factor in `[1.3, 2.5]` when `E` doubles; fast time
/// grows by less than 8× when `m` quadruples, while the oracle grows roughly
/// with `n·m` (factor in `[2.5, 6]`), the oracle/fast gap widens by at least
/// 3×, and the oracle is at least 10× slower at the largest point. Every
/// grid point must repeat within 50% spread.
pub fn run_bench(grid: &BenchGrid, reps: usize, seed: u64) -> Result<BenchReport, LayerError> {
    let mut report = BenchReport::default();
    let (e1, e2) = grid.edge_doubling;
    let (m1, m2) = grid.item_quadrupling;
    let plan = [
        ("edge_doubling", e1, LayerPath::Fast),
        ("edge_doubling", e2, LayerPath::Fast),
        ("item_quadrupling", m1, LayerPath::Fast),
        ("item_quadrupling", m1, LayerPath::Naive),
        ("item_quadrupling", m2, LayerPath::Fast),
        ("item_quadrupling", m2, LayerPath::Naive),
    ];
    let points: Vec<_> = plan.iter().map(|&(_, pt, path)| (pt, path)).collect();
    let timings = time_points(&points, reps, seed)?;
    let medians: Vec<f64> = timings.iter().map(|t| t.median).collect();
    for (&(group, point, path), timing) in plan.iter().zip(timings) {
        report.rows.push(BenchRow {
            group,
            point,
            path,
            timing,
        });
    }
    let [fast_e1, fast_e2, fast_m1, naive_m1, fast_m2, naive_m2] = medians[..] else {
        unreachable!("six grid points")
    };

    let edge_ratio = fast_e2 / fast_e1;
    report.checks.push(check(
        "fast_edge_doubling",
        (1.3..=2.5).contains(&edge_ratio),
        format!("E {}→{}: fast time ×{edge_ratio:.2} (band [1.3, 2.5])", e1.e, e2.e),
    ));
    let fast_m_ratio = fast_m2 / fast_m1;
    report.checks.push(check(
        "fast_item_quadrupling",
        fast_m_ratio < 8.0,
        format!("m {}→{}: fast time ×{fast_m_ratio:.2} (< 8)", m1.m, m2.m),
    ));
    let naive_m_ratio = naive_m2 / naive_m1;
    report.checks.push(check(
        "naive_item_quadrupling",
        (2.5..=6.0).contains(&naive_m_ratio),
        format!("m {}→{}: naive time ×{naive_m_ratio:.2} (n·m grows ×4, band [2.5, 6])", m1.m, m2.m),
    ));
    let gap_growth = (naive_m2 / fast_m2) / (naive_m1 / fast_m1);
    let gap = naive_m2 / fast_m2;
    report.checks.push(check(
        "naive_fast_gap",
        gap_growth >= 3.0 && gap >= 10.0,
        format!("naive/fast ×{gap:.1} at m={} (≥ 10), gap grew ×{gap_growth:.2} (≥ 3)", m2.m),
    ));
    let worst_spread = report.rows.iter().map(|r| r.timing.spread).fold(0.0, f64::max);
    report.checks.push(check(
        "repeat_spread",
        worst_spread < 0.5,
        format!("worst spread over {reps} repeats {:.0}% (< 50%)", worst_spread * 100.0),
    ));
    Ok(report)
}
