//! Rank-correlation and stability harness.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{parse_encoding, CellArch};
use crate::error::{Error, Result};
use crate::proxy::{ProxySeeds, Scorer};

/// Fractional ranks (1-based); tied values share the average of their positions.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share their mean
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in spearman input".into()));
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub encoding: CellArch,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkTable {
    pub dataset: String,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn new(dataset: impl Into<String>, rows: Vec<BenchmarkRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, row) in rows.iter().enumerate() {
            let line = i + 2;
            if !seen.insert(row.encoding) {
                return Err(Error::Benchmark { line, reason: format!("duplicate encoding {}", row.encoding) });
            }
            if !(row.accuracy.is_finite() && (0.0..=100.0).contains(&row.accuracy)) {
                return Err(Error::Benchmark { line, reason: format!("accuracy {} outside [0, 100]", row.accuracy) });
            }
        }
        Ok(BenchmarkTable { dataset: dataset.into(), rows })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["encoding", "accuracy"])?;
        for r in &self.rows {
            out.write_record([r.encoding.encode(), r.accuracy.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a `encoding,accuracy` CSV. Line numbers in errors count the header as line 1.
pub fn load_benchmark(path: impl AsRef<Path>) -> Result<BenchmarkTable> {
    let path = path.as_ref();
    let dataset = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_benchmark(std::fs::File::open(path)?, dataset)
}

pub fn read_benchmark<R: std::io::Read>(reader: R, dataset: String) -> Result<BenchmarkTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["encoding", "accuracy"] {
        return Err(Error::Benchmark { line: 1, reason: format!("expected header `encoding,accuracy`, got `{}`", header.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Benchmark { line, reason: e.to_string() })?;
        let encoding = parse_encoding(&rec[0]).map_err(|e| Error::Benchmark { line, reason: e.to_string() })?;
        let accuracy: f64 = rec[1]
            .parse()
            .map_err(|_| Error::Benchmark { line, reason: format!("cannot parse accuracy `{}`", &rec[1]) })?;
        rows.push(BenchmarkRow { encoding, accuracy });
    }
    BenchmarkTable::new(dataset, rows)
}

/// Runs `f` on a pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(Error::InvalidArgument("thread count must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

/// Scores `archs` in parallel; output order matches input order.
pub fn score_all(scorer: &Scorer, archs: &[CellArch], threads: usize) -> Result<Vec<Option<f64>>> {
    with_threads(threads, || archs.par_iter().map(|a| scorer.value(a)).collect::<Result<Vec<_>>>())?
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub dataset: String,
    pub variant: String,
    pub n: usize,
    /// ρ of each run.
    pub rhos: Vec<f64>,
    pub rho_mean: f64,
    pub rho_std: f64,
    /// Invalid scores, summed over runs.
    pub invalid: usize,
    /// Master seed of each run.
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Spearman ρ between `scorer`'s variant and accuracy, once per master seed.
pub fn correlate(table: &BenchmarkTable, scorer: &Scorer, seeds: &[u64], threads: usize) -> Result<CorrelationReport> {
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument("benchmark table is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one run".into()));
    }
    let start = Instant::now();
    let archs: Vec<CellArch> = table.rows.iter().map(|r| r.encoding).collect();
    let mut rhos = Vec::with_capacity(seeds.len());
    let mut invalid = 0;
    for &seed in seeds {
        let run_scorer = scorer.clone().with_seeds(ProxySeeds::from_master(seed));
        let scores = score_all(&run_scorer, &archs, threads)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            scores.iter().zip(&table.rows).filter_map(|(s, r)| s.map(|s| (s, r.accuracy))).unzip();
        let bad = archs.len() - xs.len();
        if 2 * bad > archs.len() {
            return Err(Error::TooManyInvalid { invalid: bad, total: archs.len() });
        }
        invalid += bad;
        rhos.push(spearman(&xs, &ys)?);
        log::info!("run seed {seed}: rho {:.4} ({bad} invalid)", rhos.last().unwrap());
    }
    let (rho_mean, rho_std) = mean_std(&rhos);
    Ok(CorrelationReport {
        dataset: table.dataset.clone(),
        variant: scorer.variant.label().to_string(),
        n: archs.len(),
        rhos,
        rho_mean,
        rho_std,
        invalid,
        seeds: seeds.to_vec(),
        elapsed: start.elapsed(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub arch: CellArch,
    pub mean: f64,
    /// Population standard deviation over the draws.
    pub std: f64,
    pub scores: Vec<f64>,
    /// (data seed, circular seed) of each draw.
    pub draws: Vec<(u64, u64)>,
}

/// Dextr of a fixed network over `k` paired (data sample, circular input) draws.
pub fn stability(arch: &CellArch, scorer: &Scorer, k: usize, threads: usize) -> Result<StabilityReport> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("stability needs k >= 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scorer.seeds.data ^ scorer.seeds.circular);
    let draws: Vec<(u64, u64)> = (0..k).map(|_| (rng.random(), rng.random())).collect();
    let net = crate::space::instantiate(arch, &scorer.space, scorer.seeds.init)?;
    let scores = with_threads(threads, || {
        draws
            .par_iter()
            .map(|&(data, circular)| {
                let mut s = scorer.clone().with_seeds(ProxySeeds { init: scorer.seeds.init, data, circular });
                s.data = None;
                s.report_network(&net).map(|r| r.dextr)
            })
            .collect::<Result<Vec<f64>>>()
    })??;
    let (mean, std) = mean_std(&scores);
    Ok(StabilityReport { arch: *arch, mean, std, scores, draws })
}

/// `(layer_id, σ_min/σ_max)` for each qualifying layer, in execution order.
pub fn layer_profile(arch: &CellArch, scorer: &Scorer) -> Result<Vec<(usize, f64)>> {
    let report = scorer.report(arch)?;
    Ok(report.qualifying().map(|r| (r.layer_id, r.inv_cond)).collect())
}

pub fn write_profile_csv<W: Write>(profile: &[(usize, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["layer_id", "fmi"])?;
    for (id, fmi) in profile {
        out.write_record([id.to_string(), fmi.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
