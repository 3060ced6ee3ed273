use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safecast::backbone::{BackboneParams, TreeParams};
use safecast::calibration::{
    boundary_search, budget_scale_calibrate, choose, default_c_grid, evaluate_candidate, lin_space,
    run_selection, select_quantile, Candidate, CandidateSource, Evaluation, Evaluator,
    QuantileFamily, RiskBudgetConfig, SearchRegime,
};
use safecast::data::{
    generate_synthetic, make_windows, NoiseModel, Split, SplitRatios, SyntheticSpec,
};
use safecast::metrics::{mae, over_rate, PredictionBatch};
use safecast::Error;

/// Closed-form risk and accuracy curves standing in for trained models.
struct Curves<R, A> {
    risk: R,
    acc: A,
    calls: AtomicUsize,
}

impl<R, A> Curves<R, A>
where
    R: Fn(f64) -> f64 + Sync,
    A: Fn(f64) -> f64 + Sync,
{
    fn new(risk: R, acc: A) -> Self {
        Curves {
            risk,
            acc,
            calls: AtomicUsize::new(0),
        }
    }
}

impl<R, A> CandidateSource for Curves<R, A>
where
    R: Fn(f64) -> f64 + Sync,
    A: Fn(f64) -> f64 + Sync,
{
    type Artifact = ();

    fn build(&self, tau: f64) -> safecast::Result<Candidate<()>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Candidate {
            evaluation: Evaluation {
                tau,
                mae: (self.acc)(tau),
                over_rate: (self.risk)(tau),
            },
            artifact: (),
        })
    }
}

fn config(epsilon: f64, lambda: f64) -> RiskBudgetConfig {
    RiskBudgetConfig {
        epsilon,
        lambda: Some(lambda),
        ..RiskBudgetConfig::default()
    }
}

fn decreasing_acc(tau: f64) -> f64 {
    10.0 - 8.0 * tau
}

#[test]
fn lin_space_examples() {
    let g = lin_space(0.2, 0.3, 5).unwrap();
    for (a, b) in g.iter().zip([0.200, 0.225, 0.250, 0.275, 0.300]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(g[0], 0.2);
    assert_eq!(g[4], 0.3);
    assert_eq!(lin_space(0.4, 0.4, 1).unwrap(), vec![0.4]);
    assert_eq!(lin_space(0.0, 1.0, 2).unwrap(), vec![0.0, 1.0]);
    assert!(matches!(lin_space(0.3, 0.2, 3), Err(Error::InvalidGrid(_))));
    assert!(matches!(lin_space(0.2, 0.3, 1), Err(Error::InvalidGrid(_))));
    assert!(matches!(lin_space(0.2, 0.3, 0), Err(Error::InvalidGrid(_))));
}

proptest! {
    #[test]
    fn lin_space_gaps_are_equal(a in 0.0f64..1.0, w in 0.0f64..1.0, m in 2usize..40) {
        let g = lin_space(a, a + w, m).unwrap();
        prop_assert_eq!(g.len(), m);
        prop_assert_eq!(g[0], a);
        prop_assert_eq!(g[m - 1], a + w);
        let step = w / (m - 1) as f64;
        for pair in g.windows(2) {
            prop_assert!((pair[1] - pair[0] - step).abs() <= 1e-12);
        }
    }
}

#[test]
fn ideal_calibration_brackets_budget() {
    let ev = Evaluator::new(Curves::new(|t| t, decreasing_acc));
    let b = boundary_search(&config(0.35, 1.0), &ev).unwrap();
    assert_eq!(b.regime, SearchRegime::Bisection);
    assert!((0.30..=0.35).contains(&b.lower), "{b:?}");
    assert!(b.upper - b.lower < 0.05);
    // hand-simulated: 0.275, 0.3375, 0.36875
    let mids: Vec<f64> = b.evaluations[2..].iter().map(|e| e.tau).collect();
    assert_eq!(mids, vec![0.275, 0.3375, 0.36875]);
    assert_eq!((b.lower, b.upper), (0.3375, 0.36875));
}

#[test]
fn degenerate_branches() {
    let ev = Evaluator::new(Curves::new(|_| 0.1, decreasing_acc));
    let b = boundary_search(&config(0.35, 1.0), &ev).unwrap();
    assert_eq!(
        (b.lower, b.upper, b.regime),
        (0.40, 0.40, SearchRegime::AllFeasible)
    );

    let ev = Evaluator::new(Curves::new(|_| 0.9, decreasing_acc));
    let b = boundary_search(&config(0.35, 1.0), &ev).unwrap();
    assert_eq!(
        (b.lower, b.upper, b.regime),
        (0.15, 0.15, SearchRegime::BudgetViolation)
    );
    let s = run_selection(&config(0.35, 1.0), &ev).unwrap();
    assert_eq!(s.fine_grid.len(), 1);
    assert_eq!(s.tau_star, 0.15);
    assert!(s.fallback_used && !s.feasible);
}

#[test]
fn fallback_penalty_weight() {
    let e = |tau, mae, over_rate| Evaluation {
        tau,
        mae,
        over_rate,
    };
    let grid = [e(0.15, 9.0, 0.40), e(0.20, 6.0, 0.50), e(0.25, 3.0, 0.70)];
    let (pick, feasible) = choose(&grid, 0.35, 1e6).unwrap();
    assert!(!feasible);
    assert_eq!(pick.tau, 0.15);
    assert_eq!(choose(&grid, 0.35, 0.0).unwrap().0.tau, 0.25);
    // J = 10, 9, 10 at λ = 20
    assert_eq!(choose(&grid, 0.35, 20.0).unwrap().0.tau, 0.20);
    // penalized ties resolve to the smaller level
    let tied = [e(0.30, 2.0, 0.45), e(0.20, 3.0, 0.40)];
    assert_eq!(choose(&tied, 0.35, 20.0).unwrap().0.tau, 0.20);

    // feasible ties resolve to the larger level, and feasibility wins outright
    let mixed = [e(0.15, 4.0, 0.1), e(0.25, 4.0, 0.3), e(0.35, 1.0, 0.5)];
    assert_eq!(choose(&mixed, 0.35, 1e6).unwrap(), (mixed[1], true));
    assert_eq!(choose(&[], 0.35, 1.0).unwrap_err(), Error::EmptyGrid);

    // end to end the fallback only arises when even tau_min violates the budget
    let ev = Evaluator::new(Curves::new(|t| 0.5 + t, decreasing_acc));
    let s = run_selection(&config(0.35, 1e6), &ev).unwrap();
    assert_eq!(
        (s.tau_star, s.feasible, s.fallback_used),
        (0.15, false, true)
    );
}

#[test]
fn non_monotone_risk_triggers_full_scan() {
    // the first midpoint (0.275) lands on a spike above R(tau_max)
    let risk = |t: f64| match t {
        t if t < 0.27 => 0.3,
        t if t < 0.28 => 0.6,
        t if (0.3..0.39).contains(&t) => 0.1,
        _ => 0.5,
    };
    let ev = Evaluator::new(Curves::new(risk, decreasing_acc));
    let cfg = config(0.35, 1.0);
    let s = run_selection(&cfg, &ev).unwrap();
    assert_eq!(s.regime, SearchRegime::NonMonotone);
    assert_eq!(s.fine_grid.len(), 4 * cfg.m);
    assert_eq!(s.fine_grid.first().unwrap().tau, cfg.tau_min);
    assert_eq!(s.fine_grid.last().unwrap().tau, cfg.tau_max);
    // bisection alone would have stopped below 0.27
    assert!(s.feasible);
    assert!((0.3..0.39).contains(&s.tau_star), "{}", s.tau_star);
}

#[test]
fn cache_prevents_retraining() {
    let ev = Evaluator::new(Curves::new(|t| t, decreasing_acc));
    ev.evaluate(0.2).unwrap();
    ev.evaluate(0.2).unwrap();
    assert_eq!(ev.trainings(), 1);
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| ev.evaluate(0.3).unwrap());
        }
    });
    assert_eq!(ev.trainings(), 2);
    assert_eq!(ev.source().calls.load(Ordering::SeqCst), 2);

    let first = run_selection(&config(0.35, 1.0), &ev).unwrap();
    let before = ev.trainings();
    let again = run_selection(&config(0.35, 1.0), &ev).unwrap();
    assert_eq!(again.n_trainings, 0);
    assert_eq!(ev.trainings(), before);
    assert_eq!(again.tau_star, first.tau_star);
}

#[test]
fn evaluator_errors_are_attributed() {
    struct Failing;
    impl CandidateSource for Failing {
        type Artifact = ();
        fn build(&self, _tau: f64) -> safecast::Result<Candidate<()>> {
            Err(Error::EmptyTrainingSet)
        }
    }
    match boundary_search(&config(0.35, 1.0), &Evaluator::new(Failing)).unwrap_err() {
        Error::EvaluatorFailure { tau, .. } => assert!(tau == 0.15 || tau == 0.40),
        e => panic!("unexpected {e:?}"),
    }
}

/// A random strictly increasing risk curve through `k` knots.
fn risk_curve(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 + Sync + Clone {
    let mut knots: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    knots.sort_by(f64::total_cmp);
    let lo = rng.random_range(0.0..0.4);
    let span = rng.random_range(0.05..0.6);
    move |t: f64| {
        let x = t.clamp(0.0, 1.0) * 5.0;
        let i = (x.floor() as usize).min(4);
        let f = x - i as f64;
        lo + span * (knots[i] + f * (knots[i + 1] - knots[i]) + 0.01 * t)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bisection_invariant_and_budget(seed in 0u64..u64::MAX, eps in 0.05f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let risk = risk_curve(&mut rng);
        let ev = Evaluator::new(Curves::new(risk, decreasing_acc));
        let cfg = config(eps, 1.0);
        let s = run_selection(&cfg, &ev).unwrap();
        for step in &s.steps {
            prop_assert!(step.r_l <= eps && step.r_r > eps, "{:?}", step);
        }
        prop_assert!(s.steps.len() <= cfg.max_bisection_steps());
        prop_assert!(s.n_trainings <= cfg.training_budget());
        prop_assert!((cfg.tau_min..=cfg.tau_max).contains(&s.tau_star));
        prop_assert_eq!(s.fine_grid.first().unwrap().tau, s.boundary.0);
        prop_assert_eq!(s.fine_grid.last().unwrap().tau, s.boundary.1);
        if s.feasible {
            prop_assert!(s.selected.over_rate <= eps);
        }
    }
}

#[test]
fn budget_scale_examples() {
    let t: Vec<f64> = (1..=50).map(|v| v as f64).collect();
    let exact = PredictionBatch::new(t.clone(), t.clone(), 5).unwrap();
    let s = budget_scale_calibrate(&exact, 0.35, &default_c_grid()).unwrap();
    assert_eq!((s.c_star, s.over_rate, s.mae), (1.0, 0.0, 0.0));

    let doubled = PredictionBatch::new(t.iter().map(|v| 2.0 * v).collect(), t.clone(), 5).unwrap();
    let grid: Vec<f64> = (40..=100).map(|k| k as f64 / 100.0).collect();
    let s = budget_scale_calibrate(&doubled, 0.35, &grid).unwrap();
    assert!(s.c_star <= 0.5 && s.feasible);

    assert_eq!(
        budget_scale_calibrate(&exact, 0.35, &[]).unwrap_err(),
        Error::EmptyGrid
    );
    assert!(budget_scale_calibrate(&exact, 0.35, &[0.0]).is_err());

    // nothing feasible: lowest risk, smallest c on ties
    let over = PredictionBatch::new(t.iter().map(|v| 10.0 * v).collect(), t, 5).unwrap();
    let s = budget_scale_calibrate(&over, 0.35, &[0.5, 0.6, 0.9]).unwrap();
    assert!(!s.feasible);
    assert_eq!(s.c_star, 0.5);
}

fn brute_force_scale(batch: &PredictionBatch, eps: f64, grid: &[f64]) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for &c in grid {
        let mut abs = 0.0;
        for (p, t) in batch.preds().iter().zip(batch.truths()) {
            abs += (c * p - t).abs();
        }
        let over = batch
            .preds()
            .iter()
            .zip(batch.truths())
            .filter(|(p, t)| c * **p > **t)
            .count();
        let (a, r) = (abs / batch.len() as f64, over as f64 / batch.len() as f64);
        if r <= eps {
            match best {
                Some((_, ba)) if ba < a => {}
                Some((bc, ba)) if ba == a && bc > c => {}
                _ => best = Some((c, a)),
            }
        }
    }
    if let Some((c, _)) = best {
        return c;
    }
    let mut best: Option<(f64, f64)> = None;
    for &c in grid {
        let over = batch
            .preds()
            .iter()
            .zip(batch.truths())
            .filter(|(p, t)| c * **p > **t)
            .count();
        let r = over as f64 / batch.len() as f64;
        match best {
            Some((_, br)) if br < r => {}
            Some((bc, br)) if br == r && bc < c => {}
            _ => best = Some((c, r)),
        }
    }
    best.unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn budget_scale_matches_brute_force(seed in 0u64..u64::MAX, eps in 0.05f64..0.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..80) * 3;
        let truths: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..200.0)).collect();
        let preds: Vec<f64> = truths.iter().map(|t| t * rng.random_range(0.7..1.6)).collect();
        let batch = PredictionBatch::new(preds, truths, 3).unwrap();
        let grid = default_c_grid();
        let got = budget_scale_calibrate(&batch, eps, &grid).unwrap();
        prop_assert_eq!(got.c_star, brute_force_scale(&batch, eps, &grid));
    }
}

#[test]
fn calibration_risk_tracks_tau_under_independent_noise() {
    let synth = generate_synthetic(&SyntheticSpec {
        length: 36_000,
        seed: 17,
        noise_model: NoiseModel::Gaussian { sigma: 15.0 },
        ..SyntheticSpec::default()
    })
    .unwrap();
    let ds = make_windows(&synth.trace, 4, 2, SplitRatios::default()).unwrap();
    let cal = ds.view(Split::Calibration);
    assert!(cal.len() * 2 >= 10_000);
    let params = BackboneParams::BoostedTrees(TreeParams {
        n_trees: 40,
        max_depth: 3,
        min_samples_leaf: 50,
        ..Default::default()
    });
    let c = evaluate_candidate(0.25, &ds.view(Split::Train), &cal, &params).unwrap();
    assert!(
        (c.evaluation.over_rate - 0.25).abs() <= 0.05,
        "{:?}",
        c.evaluation
    );
}

#[test]
fn selection_on_data_is_feasible_and_reproducible() {
    let synth = generate_synthetic(&SyntheticSpec {
        length: 8_000,
        seed: 23,
        noise_model: NoiseModel::Laplace { scale: 10.0 },
        ..SyntheticSpec::default()
    })
    .unwrap();
    let ds = make_windows(&synth.trace, 4, 2, SplitRatios::default()).unwrap();
    let params = BackboneParams::BoostedTrees(TreeParams {
        n_trees: 25,
        max_depth: 3,
        ..Default::default()
    });
    let cfg = RiskBudgetConfig::default();
    let (train, cal) = (ds.view(Split::Train), ds.view(Split::Calibration));
    let (s, chosen) = select_quantile(&cfg, train.clone(), cal.clone(), &params).unwrap();
    assert_eq!(s.lambda, 1000.0 * train.mean_target());
    assert!(s.n_trainings <= cfg.training_budget());
    assert_eq!(chosen.evaluation, s.selected);
    if s.feasible {
        let preds = chosen.artifact.predict_view(&cal).unwrap();
        let batch = PredictionBatch::new(preds, cal.targets().to_vec(), 2).unwrap();
        assert!(over_rate(&batch).unwrap() <= cfg.epsilon);
        assert_eq!(mae(&batch).unwrap(), s.selected.mae);
    }
    let (again, _) = select_quantile(&cfg, train.clone(), cal.clone(), &params).unwrap();
    assert_eq!(again, s);

    let lambda_cfg = cfg.resolve_lambda(train.mean_target());
    let ev = Evaluator::new(QuantileFamily { train, cal, params });
    let direct = run_selection(&lambda_cfg, &ev).unwrap();
    assert_eq!(direct, s);
}
