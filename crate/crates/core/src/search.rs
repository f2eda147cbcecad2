//! Zero-shot search over the cell space: constrained random search and
//! regularized (aging) evolution.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::arch::{mutate_with, sample_with, CellArch, SPACE_SIZE};
use crate::error::{Error, Result};
use crate::space::{arch_cost, SpaceConfig};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Random,
    Evolutionary,
}

impl std::str::FromStr for SearchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SearchMode::Random),
            "evolutionary" | "evolution" => Ok(SearchMode::Evolutionary),
            _ => Err(Error::InvalidArgument(format!("unknown search mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchConfig {
    pub mode: SearchMode,
    /// Candidates drawn, including constraint-rejected ones.
    pub budget: usize,
    pub population: usize,
    pub max_params: Option<u64>,
    pub max_flops: Option<u64>,
    pub seed: u64,
}

impl SearchConfig {
    pub fn new(mode: SearchMode, budget: usize, seed: u64) -> Self {
        SearchConfig { mode, budget, population: 32, max_params: None, max_flops: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::InvalidArgument("budget must be >= 1".into()));
        }
        if self.mode == SearchMode::Evolutionary {
            if self.population == 0 {
                return Err(Error::InvalidArgument("population must be >= 1".into()));
            }
            if self.population > self.budget {
                return Err(Error::InvalidArgument(format!(
                    "population {} exceeds budget {}",
                    self.population, self.budget
                )));
            }
        }
        Ok(())
    }

    fn admits(&self, params: u64, flops: u64) -> bool {
        self.max_params.is_none_or(|m| params <= m) && self.max_flops.is_none_or(|m| flops <= m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub encoding: CellArch,
    /// `None` when the candidate was rejected by a constraint or scored invalid.
    pub score: Option<f64>,
    pub params: u64,
    pub flops: u64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchResult {
    pub best: CellArch,
    pub best_score: f64,
    pub evaluated: usize,
    pub rejected: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SearchResult {
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "encoding", "score", "params", "flops", "accepted"])?;
        for r in &self.trace {
            out.write_record([
                r.step.to_string(),
                r.encoding.encode(),
                r.score.map(|s| s.to_string()).unwrap_or_default(),
                r.params.to_string(),
                r.flops.to_string(),
                r.accepted.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Pure scoring function; `Ok(None)` marks an invalid score.
pub type ScoreFn<'a> = dyn Fn(&CellArch) -> Result<Option<f64>> + Sync + 'a;

struct Candidate {
    arch: CellArch,
    params: u64,
    flops: u64,
    admitted: bool,
}

struct Run<'a> {
    cfg: &'a SearchConfig,
    space: &'a SpaceConfig,
    score: &'a ScoreFn<'a>,
    cache: HashMap<CellArch, Option<f64>>,
    trace: Vec<TraceRow>,
    best: Option<(CellArch, f64)>,
    rejected: usize,
}

impl<'a> Run<'a> {
    fn candidate(&self, arch: CellArch) -> Candidate {
        let (params, flops) = arch_cost(&arch, self.space);
        Candidate { arch, params, flops, admitted: self.cfg.admits(params, flops) }
    }

    /// Scores admitted candidates (in parallel) and appends them to the trace.
    fn evaluate(&mut self, batch: Vec<Candidate>) -> Result<Vec<Option<f64>>> {
        let todo: Vec<CellArch> = batch
            .iter()
            .filter(|c| c.admitted && !self.cache.contains_key(&c.arch))
            .map(|c| c.arch)
            .collect();
        let score = self.score;
        let fresh = todo.par_iter().map(score).collect::<Result<Vec<_>>>()?;
        self.cache.extend(todo.into_iter().zip(fresh));
        let mut out = Vec::with_capacity(batch.len());
        for c in batch {
            let s = if c.admitted { self.cache[&c.arch] } else { None };
            if !c.admitted {
                self.rejected += 1;
            }
            if let Some(v) = s {
                if self.best.is_none_or(|(_, b)| v > b) {
                    self.best = Some((c.arch, v));
                }
            }
            self.trace.push(TraceRow {
                step: self.trace.len(),
                encoding: c.arch,
                score: s,
                params: c.params,
                flops: c.flops,
                accepted: s.is_some(),
            });
            out.push(s);
        }
        Ok(out)
    }

    fn finish(self) -> Result<SearchResult> {
        let (best, best_score) = self
            .best
            .ok_or_else(|| Error::NoValidCandidates(format!("{} candidates, {} rejected by constraints", self.trace.len(), self.rejected)))?;
        Ok(SearchResult { best, best_score, evaluated: self.trace.len(), rejected: self.rejected, trace: self.trace })
    }
}

/// `n` distinct architectures (all of them once `n` reaches the space size).
fn distinct_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<CellArch> {
    let n = n.min(SPACE_SIZE);
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = sample_with(rng);
        if seen.insert(a) {
            out.push(a);
        }
    }
    out
}

pub fn search(cfg: &SearchConfig, space: &SpaceConfig, score: &ScoreFn<'_>) -> Result<SearchResult> {
    match cfg.mode {
        SearchMode::Random => random_search(cfg, space, score),
        SearchMode::Evolutionary => evolutionary_search(cfg, space, score),
    }
}

/// Scores `budget` distinct random cells that satisfy the constraints and keeps the best.
pub fn random_search(cfg: &SearchConfig, space: &SpaceConfig, score: &ScoreFn<'_>) -> Result<SearchResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = Run { cfg, space, score, cache: HashMap::new(), trace: Vec::new(), best: None, rejected: 0 };
    let batch = distinct_samples(&mut rng, cfg.budget).into_iter().map(|a| run.candidate(a)).collect();
    run.evaluate(batch)?;
    run.finish()
}

/// Regularized evolution: binary tournament, one-edge mutation, oldest member retired.
pub fn evolutionary_search(cfg: &SearchConfig, space: &SpaceConfig, score: &ScoreFn<'_>) -> Result<SearchResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut run = Run { cfg, space, score, cache: HashMap::new(), trace: Vec::new(), best: None, rejected: 0 };

    let init: Vec<Candidate> = distinct_samples(&mut rng, cfg.population).into_iter().map(|a| run.candidate(a)).collect();
    let archs: Vec<CellArch> = init.iter().map(|c| c.arch).collect();
    let scores = run.evaluate(init)?;
    let mut population: VecDeque<(CellArch, f64)> =
        archs.into_iter().zip(scores).filter_map(|(a, s)| s.map(|s| (a, s))).collect();
    if population.is_empty() {
        return run.finish();
    }

    while run.trace.len() < cfg.budget {
        let i = rng.random_range(0..population.len());
        let j = rng.random_range(0..population.len());
        let parent = if population[j].1 > population[i].1 { population[j].0 } else { population[i].0 };
        let child = run.candidate(mutate_with(&parent, &mut rng));
        let arch = child.arch;
        if let Some(s) = run.evaluate(vec![child])?[0] {
            population.push_back((arch, s));
            if population.len() > cfg.population {
                population.pop_front();
            }
        }
    }
    run.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Op;

    // cheap deterministic stand-in: counts 3x3 convs, breaks ties by index
    fn toy(a: &CellArch) -> Result<Option<f64>> {
        let convs = a.edges.iter().filter(|&&o| o == Op::NorConv3x3).count() as f64;
        Ok(Some(convs + a.index() as f64 / SPACE_SIZE as f64))
    }

    #[test]
    fn budget_one_returns_that_candidate() {
        let space = SpaceConfig::default();
        let r = random_search(&SearchConfig::new(SearchMode::Random, 1, 3), &space, &toy).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.best, r.trace[0].encoding);
    }

    #[test]
    fn zero_param_budget_has_no_valid_candidates() {
        let space = SpaceConfig::default();
        let mut cfg = SearchConfig::new(SearchMode::Random, 20, 3);
        cfg.max_params = Some(0);
        assert!(matches!(random_search(&cfg, &space, &toy), Err(Error::NoValidCandidates(_))));
        cfg.mode = SearchMode::Evolutionary;
        cfg.population = 5;
        assert!(matches!(search(&cfg, &space, &toy), Err(Error::NoValidCandidates(_))));
    }

    #[test]
    fn population_equal_to_budget_is_random_search() {
        let space = SpaceConfig::default();
        let mut cfg = SearchConfig::new(SearchMode::Evolutionary, 16, 9);
        cfg.population = 16;
        let e = evolutionary_search(&cfg, &space, &toy).unwrap();
        let r = random_search(&SearchConfig { mode: SearchMode::Random, ..cfg }, &space, &toy).unwrap();
        assert_eq!(e, r);
    }

    #[test]
    fn evolution_is_deterministic_and_respects_constraints() {
        let space = SpaceConfig::default();
        let mut cfg = SearchConfig::new(SearchMode::Evolutionary, 120, 4);
        cfg.population = 10;
        let cap = CellArch::new([Op::NorConv3x3, Op::NorConv3x3, Op::NorConv1x1, Op::None, Op::None, Op::None]);
        let (max_p, _) = arch_cost(&cap, &space);
        cfg.max_params = Some(max_p);
        let a = evolutionary_search(&cfg, &space, &toy).unwrap();
        let b = evolutionary_search(&cfg, &space, &toy).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 120);
        assert!(arch_cost(&a.best, &space).0 <= max_p);
        assert!(a.trace.iter().any(|r| r.encoding == a.best && r.score == Some(a.best_score)));
        for r in &a.trace {
            assert_eq!(r.score.is_some(), r.params <= max_p);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let space = SpaceConfig::default();
        assert!(random_search(&SearchConfig::new(SearchMode::Random, 0, 0), &space, &toy).is_err());
        let mut cfg = SearchConfig::new(SearchMode::Evolutionary, 10, 0);
        cfg.population = 11;
        assert!(evolutionary_search(&cfg, &space, &toy).is_err());
    }

    #[test]
    fn trace_csv_header_and_blank_scores() {
        let space = SpaceConfig::default();
        let mut cfg = SearchConfig::new(SearchMode::Random, 3, 1);
        cfg.max_params = Some(0);
        let mut run = Run { cfg: &cfg, space: &space, score: &toy, cache: HashMap::new(), trace: Vec::new(), best: None, rejected: 0 };
        let c = run.candidate(CellArch::uniform(Op::None));
        run.evaluate(vec![c]).unwrap();
        let res = SearchResult { best: CellArch::uniform(Op::None), best_score: 0.0, evaluated: 1, rejected: 1, trace: run.trace };
        let mut buf = Vec::new();
        res.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("step,encoding,score,params,flops,accepted"));
        assert!(lines.next().unwrap().ends_with(",false"));
    }
}
