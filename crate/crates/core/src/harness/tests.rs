use super::*;
use crate::dataset::tests::panel;
use crate::dataset::{synthesize_panel, SynthesisConfig};
use crate::par::Execution;
use crate::seed;
use crate::stats::{median, rmse};
use rand::Rng;

fn task(h: usize, target: Option<&str>, q: bool) -> ForecastTask {
    ForecastTask::new(h, target.map(str::to_string), q)
}

fn small_hyper(lookback: usize) -> ModelHyperparams {
    let mut h = ModelHyperparams {
        lookback,
        tree_count: 10,
        ..Default::default()
    };
    h.gru.epochs = 5;
    h
}

fn synthetic(weeks: usize, locations: usize, queries: usize, seed: u64) -> crate::PanelDataset {
    let cfg = SynthesisConfig {
        weeks,
        locations,
        queries,
        seed,
        ..Default::default()
    };
    synthesize_panel(&cfg, seed).unwrap()
}

fn sequential() -> WalkOptions {
    WalkOptions {
        execution: Execution::Sequential,
        ..Default::default()
    }
}

#[test]
fn persistence_shifts() {
    let p = panel(&[("a", vec![5.0, 7.0, 9.0])], &[]);
    let one = persistence_forecast(&p, &task(1, Some("a"), false), WeekRange::new(2, 3)).unwrap();
    assert_eq!((one[0].predicted, one[0].actual), (7.0, 9.0));
    let two = persistence_forecast(&p, &task(2, Some("a"), false), WeekRange::new(2, 3)).unwrap();
    assert_eq!(two[0].predicted, 5.0);
    assert!(persistence_forecast(&p, &task(3, Some("a"), false), WeekRange::new(2, 3)).is_err());
    assert!(persistence_forecast(&p, &task(1, Some("zz"), false), WeekRange::new(2, 3)).is_err());

    let flat = panel(&[("a", vec![4.0; 20]), ("b", vec![0.5; 20])], &[]);
    for h in [1, 2, 4, 8] {
        let recs =
            persistence_forecast(&flat, &task(h, None, false), WeekRange::new(10, 20)).unwrap();
        assert_eq!(recs.len(), 20);
        assert!(recs.iter().all(|r| r.predicted == r.actual));
    }
}

#[test]
fn model_kind_labels() {
    for k in ModelKind::ALL {
        assert_eq!(k.label().parse::<ModelKind>().unwrap(), k);
        assert_eq!(
            serde_json::to_string(&k).unwrap(),
            format!("\"{}\"", k.label())
        );
    }
    assert_eq!("gru".parse::<ModelKind>().unwrap(), ModelKind::Gru);
    assert!("XGB".parse::<ModelKind>().is_err());
    assert_eq!(ModelSpec::new(ModelKind::Lr, true).label(), "LR+q");
}

#[test]
fn candidate_order_and_clipping() {
    let base = ModelHyperparams::default();
    let p = ModelSpec::new(ModelKind::Persistence, false)
        .candidates(&base, 5, 0)
        .unwrap();
    assert_eq!(p, vec![base]);

    let ar = ModelSpec::new(ModelKind::Ar, true)
        .candidates(&base, 5, 3)
        .unwrap();
    assert_eq!(ar.len(), 5);
    assert_eq!(ar[0].l1_penalty, 1e-1);
    assert!(ar.iter().all(|c| c.query_count == Count::All));

    let lr = ModelSpec::new(ModelKind::Lr, true)
        .candidates(&base, 15, 30)
        .unwrap();
    // λ × R{10, 15} × Rq{10, 20, 30}
    assert_eq!(lr.len(), 5 * 2 * 3);
    assert_eq!(
        (lr[0].region_count, lr[0].query_count),
        (Count::Top(10), Count::Top(10))
    );
    assert_eq!(lr[5].region_count, Count::Top(15));

    let rf = ModelSpec::new(ModelKind::Rf, false)
        .candidates(&base, 4, 0)
        .unwrap();
    assert_eq!(
        rf.iter().map(|c| c.max_depth).collect::<Vec<_>>(),
        vec![2, 4, 8, 16]
    );
    assert!(rf
        .iter()
        .all(|c| c.region_count == Count::Top(4) && c.l1_penalty == base.l1_penalty));

    assert!(ModelSpec::new(ModelKind::Ar, true)
        .candidates(&base, 5, 0)
        .is_err());
    let empty = HyperGrid {
        l1_penalty: vec![],
        ..Default::default()
    };
    assert!(ModelSpec::new(ModelKind::Ar, false)
        .with_grid(empty)
        .candidates(&base, 5, 0)
        .is_err());
}

#[test]
fn singleton_grid_is_returned() {
    let prep = Prepared::from_fraction(synthetic(60, 2, 0, 1), 0.5).unwrap();
    let grid = HyperGrid {
        l1_penalty: vec![0.01],
        ..Default::default()
    };
    let spec = ModelSpec::new(ModelKind::Ar, false).with_grid(grid);
    let base = small_hyper(4);
    let got = select_hyperparams(
        &prep,
        &spec,
        &task(1, Some("loc00"), false),
        &base,
        prep.split.train,
        0,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!(got.l1_penalty, 0.01);
}

#[test]
fn noise_target_selects_strongest_penalty() {
    let spec = ModelSpec::new(ModelKind::Ar, false);
    let mut strongest = 0;
    for s in 0..10 {
        let mut rng = seed::rng(s);
        let noise: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..1.0)).collect();
        let prep = Prepared::from_fraction(panel(&[("n", noise)], &[]), 0.5).unwrap();
        let got = select_hyperparams(
            &prep,
            &spec,
            &task(1, Some("n"), false),
            &small_hyper(26),
            prep.split.train,
            0,
            Execution::Parallel,
        )
        .unwrap();
        strongest += (got.l1_penalty == 1e-1) as usize;
    }
    assert!(
        strongest >= 7,
        "largest penalty chosen for {strongest} of 10 noise series"
    );
}

#[test]
fn planted_shallow_rule_selects_shallow_trees() {
    // x(s) = 0.8 inside (0.25, 0.75) of x(s−1), 0.2 outside, plus noise: a
    // two-level tree on the single lag recovers the rule exactly.
    let mut rng = seed::rng(17);
    let mut x = vec![0.5];
    for _ in 1..400 {
        let prev = *x.last().unwrap();
        let level = if prev > 0.25 && prev < 0.75 { 0.8 } else { 0.2 };
        x.push(level + rng.random_range(-0.3..0.3));
    }
    let prep = Prepared::from_fraction(panel(&[("t", x)], &[]), 0.5).unwrap();
    let spec = ModelSpec::new(ModelKind::Rf, false);
    let mut base = small_hyper(1);
    base.tree_count = 30;
    let got = select_hyperparams(
        &prep,
        &spec,
        &task(1, Some("t"), false),
        &base,
        prep.split.train,
        3,
        Execution::Parallel,
    )
    .unwrap();
    assert!(
        matches!(got.max_depth, 2 | 4),
        "selected depth {}",
        got.max_depth
    );
}

#[test]
fn too_few_examples_for_folds() {
    let prep = Prepared::from_fraction(synthetic(24, 2, 0, 1), 0.5).unwrap();
    let spec = ModelSpec::new(ModelKind::Ar, false);
    let err = select_hyperparams(
        &prep,
        &spec,
        &task(1, Some("loc00"), false),
        &small_hyper(10),
        prep.split.train,
        0,
        Execution::Sequential,
    )
    .unwrap_err();
    assert!(matches!(err, Error::InsufficientHistory(_)), "{err}");
}

#[test]
fn persistence_through_walk_forward_is_exact() {
    let prep = Prepared::from_fraction(synthetic(80, 3, 2, 4), 0.5).unwrap();
    for h in [1, 2, 4, 8] {
        for q in [false, true] {
            let t = task(h, None, q);
            let spec = ModelSpec::new(ModelKind::Persistence, q);
            let wf = walk_forward(&prep, &spec, &t, &small_hyper(4), &sequential()).unwrap();
            let direct = persistence_forecast(&prep.raw, &t, prep.split.test).unwrap();
            assert_eq!(wf.records, direct);
        }
    }
}

#[test]
fn autoregression_beats_persistence_on_periodic_series() {
    // Period 6 so that persistence at h = 4 is not trivially exact.
    let series: Vec<f64> = (0..150)
        .map(|t| 2.0 + (std::f64::consts::TAU * t as f64 / 6.0).sin())
        .collect();
    let prep = Prepared::from_fraction(panel(&[("s", series)], &[]), 0.5).unwrap();
    let t = task(4, Some("s"), false);
    let base = small_hyper(8);
    let ar = walk_forward(
        &prep,
        &ModelSpec::new(ModelKind::Ar, false),
        &t,
        &base,
        &sequential(),
    )
    .unwrap();
    let p = walk_forward(
        &prep,
        &ModelSpec::new(ModelKind::Persistence, false),
        &t,
        &base,
        &sequential(),
    )
    .unwrap();
    let score = |r: &[ForecastRecord]| {
        let (a, b): (Vec<f64>, Vec<f64>) = r.iter().map(|r| (r.predicted, r.actual)).unzip();
        rmse(&a, &b).unwrap()
    };
    assert_eq!(ar.records.len(), p.records.len());
    assert!(
        score(&ar.records) < 0.1 * score(&p.records),
        "{} vs {}",
        score(&ar.records),
        score(&p.records)
    );
}

fn poison(panel: &crate::PanelDataset, after: usize) -> crate::PanelDataset {
    panel.map_values(|_, week, v| if week > after { 1e9 } else { v })
}

#[test]
fn future_values_do_not_leak() {
    let raw = synthetic(120, 3, 3, 8);
    let prep = Prepared::from_fraction(raw.clone(), 0.5).unwrap();
    let base = small_hyper(6);
    let grid = HyperGrid {
        l1_penalty: vec![1e-2, 1e-3],
        region_count: vec![Count::Top(2), Count::Top(3)],
        query_count: vec![Count::Top(2)],
        max_depth: vec![2, 4],
    };
    let as_of = prep.split.test.start + 5;
    for kind in ModelKind::ALL {
        for q in [false, true] {
            let spec = ModelSpec::new(kind, q).with_grid(grid.clone());
            let target = kind.is_tabular().then_some("loc01");
            let t = task(2, target, q);
            let opts = WalkOptions {
                last_week: Some(as_of),
                ..sequential()
            };
            let clean = walk_forward(&prep, &spec, &t, &base, &opts).unwrap();
            let dirty_prep = Prepared::new(poison(&raw, as_of), prep.split).unwrap();
            let dirty = walk_forward(&dirty_prep, &spec, &t, &base, &opts).unwrap();
            let week = raw.weeks()[as_of];
            let pick = |r: &WalkForwardResult| -> Vec<f64> {
                r.records
                    .iter()
                    .filter(|r| r.week == week)
                    .map(|r| r.predicted)
                    .collect()
            };
            assert!(!pick(&clean).is_empty(), "{kind} {q}");
            assert_eq!(pick(&clean), pick(&dirty), "{kind} queries={q}");
        }
    }
}

#[test]
fn recurrent_run_covers_every_location() {
    let prep = Prepared::from_fraction(synthetic(90, 3, 4, 2), 0.5).unwrap();
    let mut base = small_hyper(8);
    base.query_count = Count::Top(2);
    let opts = WalkOptions {
        attribution_locations: vec!["loc02".into()],
        gru_retrain: GruRetrain::Warm,
        warm_epochs: 2,
        ..sequential()
    };
    let t = task(2, None, true);
    let res = walk_forward(
        &prep,
        &ModelSpec::new(ModelKind::Gru, true),
        &t,
        &base,
        &opts,
    )
    .unwrap();
    assert_eq!(res.records.len(), 3 * prep.split.test.len());
    assert!(res.records.windows(2).all(|w| w[0].week <= w[1].week));
    assert_eq!(res.attributions.len(), 1);
    let sal = &res.attributions[0];
    assert_eq!(sal.shape(), (8, 5));
    assert_eq!(sal.row_labels[0], "lag9");
    assert_eq!(sal.row_labels[7], "lag2");
    assert!(
        sal.column_labels[3].starts_with("query:"),
        "{}",
        sal.column_labels[3]
    );
    assert!(sal.values.iter().flatten().all(|v| *v >= 0.0));

    let full = walk_forward(
        &prep,
        &ModelSpec::new(ModelKind::Gru, true),
        &t,
        &base,
        &WalkOptions {
            gru_retrain: GruRetrain::Full,
            ..opts.clone()
        },
    )
    .unwrap();
    assert_ne!(full.records, res.records);
}

#[test]
fn actuals_are_in_original_units() {
    let prep = Prepared::from_fraction(synthetic(80, 3, 0, 6), 0.5).unwrap();
    let t = task(1, Some("loc02"), false);
    let res = walk_forward(
        &prep,
        &ModelSpec::new(ModelKind::Lr, false),
        &t,
        &small_hyper(4),
        &sequential(),
    )
    .unwrap();
    assert_eq!(res.records.len(), prep.split.test.len());
    let scale = prep.normalizer.location("loc02").unwrap();
    let l = prep.normalized.location_index("loc02").unwrap();
    for (r, w) in res.records.iter().zip(prep.split.test.iter()) {
        assert_eq!(r.week, prep.raw.weeks()[w]);
        assert!((scale.forward(r.actual) - prep.normalized.incidence(l)[w]).abs() < 1e-12);
    }
}

#[test]
fn periodic_reselection_runs() {
    let prep = Prepared::from_fraction(synthetic(100, 2, 0, 3), 0.5).unwrap();
    let t = task(1, Some("loc00"), false);
    let opts = WalkOptions {
        reselect_every: Some(10),
        attribution_locations: vec!["loc00".into()],
        ..sequential()
    };
    let res = walk_forward(
        &prep,
        &ModelSpec::new(ModelKind::Ar, false),
        &t,
        &small_hyper(4),
        &opts,
    )
    .unwrap();
    assert_eq!(res.records.len(), 50);
    assert_eq!(res.attributions.len(), 1);
    assert_eq!(res.attributions[0].row_labels[0], "epi:loc00:lag1");
}

#[test]
fn jobs_are_planned_and_run_in_order() {
    let prep = Prepared::from_fraction(synthetic(70, 3, 0, 9), 0.5).unwrap();
    let specs = vec![
        ModelSpec::new(ModelKind::Persistence, false),
        ModelSpec::new(ModelKind::Ar, false),
    ];
    let jobs = plan_jobs(&specs, &[1, 4], &prep.raw);
    assert_eq!(jobs.len(), 2 + 2 * 3);
    let base = small_hyper(4);
    let par = run_jobs(&prep, &jobs, &base, &WalkOptions::default()).unwrap();
    let seq = run_jobs(&prep, &jobs, &base, &sequential()).unwrap();
    assert_eq!(par, seq);
    assert_eq!(par[2].job.task.target.as_deref(), Some("loc00"));

    let medians: Vec<f64> = par
        .iter()
        .filter(|o| o.job.task.horizon == 4)
        .map(|o| {
            let (a, b): (Vec<f64>, Vec<f64>) = o
                .result
                .records
                .iter()
                .map(|r| (r.predicted, r.actual))
                .unzip();
            rmse(&a, &b).unwrap()
        })
        .collect();
    assert!(median(&medians).unwrap().is_finite());
}

#[test]
fn errors_name_the_failing_job() {
    let prep = Prepared::from_fraction(synthetic(70, 2, 0, 9), 0.5).unwrap();
    let jobs = vec![Job {
        spec: ModelSpec::new(ModelKind::Ar, false),
        task: task(1, None, false),
    }];
    let err = run_jobs(&prep, &jobs, &small_hyper(4), &sequential()).unwrap_err();
    assert!(err.to_string().starts_with("AR h=1 all locations"), "{err}");
}
