//! Generator ranges and overload transformations.

use impresched::priority::mandatory_relevance;
use impresched::utilization::utilizations;
use impresched::workload::{apply_task_set_increase, generate, GeneratorConfig};
use impresched::{assign_priorities, Scheme};

#[test]
fn generator_respects_every_range() {
    let base = GeneratorConfig::default();
    for seed in 0..1000 {
        let cfg = base.with_seed(seed);
        let ts = generate(&cfg).unwrap();
        assert_eq!(ts.n_tasks(), cfg.n_tasks);
        assert_eq!(ts.n_processors(), cfg.n_processors);
        assert!(utilizations(&ts).iter().all(|&u| u <= cfg.per_processor_target_utilization + 1e-6));
        for t in &ts.tasks {
            assert!(t.chain.len() <= cfg.max_chain_length);
            assert!((cfg.period_range.0..=cfg.period_range.1).contains(&t.period));
            let f = t.deadline / t.period;
            assert!(f >= cfg.deadline_factor_range.0 - 1e-9 && f <= cfg.deadline_factor_range.1 + 1e-9);
            let mut procs: Vec<&str> = t.chain.iter().map(|s| s.processor()).collect();
            procs.sort();
            procs.dedup();
            assert_eq!(procs.len(), t.chain.len());
            for s in &t.chain {
                let c = s.spec.mandatory + s.spec.optional;
                if c > 0.0 {
                    let m = s.spec.mandatory / c;
                    assert!(m >= cfg.mandatory_fraction_range.0 - 1e-9 && m <= cfg.mandatory_fraction_range.1 + 1e-9);
                }
                assert_eq!(s.spec.mandatory_error_factor, cfg.default_h);
                assert_eq!(s.spec.optional_error_factor, cfg.default_k);
            }
        }
    }
}

#[test]
fn full_mandatory_fraction_gives_mr_one() {
    let cfg = GeneratorConfig {
        mandatory_fraction_range: (1.0, 1.0),
        ..GeneratorConfig::default()
    };
    let ts = generate(&cfg).unwrap();
    assert!(ts.tasks.iter().all(|t| mandatory_relevance(t).unwrap() == 1.0));
}

#[test]
fn added_tasks_rank_high() {
    let mut hits = 0;
    for seed in 0..100 {
        let cfg = GeneratorConfig::default().with_seed(seed);
        let base = generate(&cfg).unwrap();
        let mut ts = apply_task_set_increase(&base, 3, &cfg.with_seed(seed + 10_000)).unwrap();
        assert_eq!(ts.n_tasks(), base.n_tasks() + 3);
        let ord = assign_priorities(&mut ts, Scheme::Global).unwrap();
        let rank = |id: &str| ord.ranked.iter().position(|r| r == id).unwrap();
        let mut original: Vec<usize> = base.tasks.iter().map(|t| rank(&t.id)).collect();
        original.sort_unstable();
        let median = original[original.len() / 2];
        let added: Vec<usize> = ts.tasks[base.n_tasks()..].iter().map(|t| rank(&t.id)).collect();
        if added.iter().all(|&r| r < median) {
            hits += 1;
        }
    }
    assert!(hits >= 90, "only {hits}/100 seeds ranked the added tasks above the median");
}
