use dextr::arch::{CellArch, Op};
use dextr::search::{evolutionary_search, random_search, SearchConfig, SearchMode};
use dextr::space::{arch_cost, SpaceConfig};
use proptest::prelude::*;

/// Cheap deterministic stand-in for a proxy.
fn toy(a: &CellArch) -> dextr::Result<Option<f64>> {
    let v = 3.0 * a.count(Op::NorConv3x3) as f64 + 2.0 * a.count(Op::NorConv1x1) as f64 + (a.index() % 7) as f64 * 0.01;
    Ok((!a.index().is_multiple_of(11)).then_some(v))
}

fn best_so_far(scores: impl Iterator<Item = Option<f64>>) -> Vec<f64> {
    scores
        .scan(f64::NEG_INFINITY, |b, s| {
            *b = b.max(s.unwrap_or(f64::NEG_INFINITY));
            Some(*b)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn best_so_far_is_monotone_and_matches_result(seed in any::<u64>(), budget in 20usize..120, evo in any::<bool>()) {
        let space = SpaceConfig::default();
        let mode = if evo { SearchMode::Evolutionary } else { SearchMode::Random };
        let mut cfg = SearchConfig::new(mode, budget, seed);
        cfg.population = 10;
        let res = if evo { evolutionary_search(&cfg, &space, &toy) } else { random_search(&cfg, &space, &toy) }.unwrap();
        prop_assert_eq!(res.trace.len(), budget);
        let curve = best_so_far(res.trace.iter().map(|r| r.score));
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*curve.last().unwrap(), res.best_score);
        prop_assert_eq!(toy(&res.best).unwrap(), Some(res.best_score));
    }

    #[test]
    fn constraints_are_never_violated_by_the_winner(seed in any::<u64>(), cap_arch in 0usize..15625) {
        let space = SpaceConfig::default();
        let (cap, _) = arch_cost(&CellArch::from_index(cap_arch), &space);
        let mut cfg = SearchConfig::new(SearchMode::Evolutionary, 60, seed);
        cfg.population = 8;
        cfg.max_params = Some(cap);
        if let Ok(res) = evolutionary_search(&cfg, &space, &toy) {
            prop_assert!(arch_cost(&res.best, &space).0 <= cap);
            for r in res.trace.iter().filter(|r| r.accepted) {
                prop_assert!(r.params <= cap);
            }
        }
    }
}

#[test]
fn searches_are_reproducible() {
    let space = SpaceConfig::default();
    for mode in [SearchMode::Random, SearchMode::Evolutionary] {
        let cfg = SearchConfig::new(mode, 80, 5);
        let a = dextr::search::search(&cfg, &space, &toy).unwrap();
        let b = dextr::search::search(&cfg, &space, &toy).unwrap();
        assert_eq!(a, b);
    }
}
