use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::equilibrium::solve_ne;
use crate::generator::{generate, GeneratorSpec};
use crate::iom::average_aoi;
use crate::market::{initial_channel, validate_config, Allocation, PriceMatrix};

fn market_of(num_mus: usize, num_msps: usize, seed: u64) -> (Market, ChannelState) {
    let spec = GeneratorSpec {
        num_mus,
        num_msps,
        ..GeneratorSpec::default()
    };
    let cfg = generate(&spec, seed);
    let channel = initial_channel(&cfg);
    (validate_config(cfg).unwrap(), channel)
}

fn equilibrium_allocation(market: &Market, channel: &ChannelState) -> Allocation {
    solve_ne(market, channel, &PriceMatrix::midpoint(market), 1e-6, 500)
        .unwrap()
        .allocation
}

fn latency(market: &Market, channel: &ChannelState, a: &Allocation, m: usize, n: usize) -> f64 {
    let t = PairTerms::new(market, channel, m, n);
    t.training_time(a.f[(m, n)]) + t.upload_time(a.bandwidth[(m, n)])
}

fn model(w: &[f64]) -> ToyModel {
    ToyModel {
        weights: w.to_vec(),
    }
}

#[test]
fn fedavg_of_two_equal_sizes_is_the_midpoint() {
    let avg = fedavg_aggregate(&[(model(&[0.0, 0.0]), 5.0), (model(&[2.0, 2.0]), 5.0)]).unwrap();
    assert_eq!(avg.weights, vec![1.0, 1.0]);
}

#[test]
fn fedavg_of_one_local_is_that_local() {
    let w = model(&[0.3, -1.7, 2.2]);
    assert_eq!(fedavg_aggregate(&[(w.clone(), 42.0)]).unwrap(), w);
}

#[test]
fn fedavg_matches_direct_weighted_sum() {
    let locals = [
        (model(&[1.0, -2.0]), 1.0),
        (model(&[0.5, 4.0]), 2.0),
        (model(&[-3.0, 1.0]), 3.0),
    ];
    let avg = fedavg_aggregate(&locals).unwrap();
    let expected = [
        (1.0 * 1.0 + 2.0 * 0.5 + 3.0 * -3.0) / 6.0,
        (1.0 * -2.0 + 2.0 * 4.0 + 3.0 * 1.0) / 6.0,
    ];
    for (a, b) in avg.weights.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn fedavg_rejects_empty_round() {
    assert!(matches!(fedavg_aggregate(&[]), Err(FlError::EmptyRound)));
}

#[test]
fn epoch_count_is_ceiling_of_log_inverse_theta() {
    assert_eq!(local_epochs(0.99), 1);
    assert_eq!(local_epochs(0.5), 1);
    assert_eq!(local_epochs(0.3), 2);
    assert_eq!(local_epochs(0.1), 3);
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (train, _) = synth_dataset(4, 50, 2.0, &mut rng);
    let w = model(&[0.1, 0.2, 0.3, 0.4, 0.5]);
    assert_eq!(local_train(&w, &train, 0.1, 0.0, 0.9, &mut rng), w);
}

#[test]
fn training_loss_decreases_every_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (train, _) = synth_dataset(5, 200, 6.0, &mut rng);
    let mut w = ToyModel::zeros(5);
    let mut last = w.loss(&train);
    // theta = 0.5 is one epoch per call; three calls make up the three
    // epochs of theta = 0.1.
    for _ in 0..local_epochs(0.1) {
        w = local_train(&w, &train, 0.5, 0.001, 0.9, &mut rng);
        let loss = w.loss(&train);
        assert!(loss < last, "{loss} >= {last}");
        last = loss;
    }
}

#[test]
fn indistinguishable_classes_stay_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (train, test) = synth_dataset(5, 2000, 0.0, &mut rng);
    let w = local_train(&ToyModel::zeros(5), &train, 0.1, 0.001, 0.9, &mut rng);
    assert!((w.accuracy(&test) - 0.5).abs() < 0.05);
}

#[test]
fn well_separated_classes_are_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (train, test) = synth_dataset(5, 2000, 6.0, &mut rng);
    let w = local_train(&ToyModel::zeros(5), &train, 0.1, 0.001, 0.9, &mut rng);
    assert!(w.accuracy(&test) > 0.99);
}

#[test]
fn datasets_are_seed_deterministic() {
    let a = synth_dataset(3, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let b = synth_dataset(3, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(a, b);
}

#[test]
fn single_pair_receptions_at_known_times() {
    let (market, channel) = market_of(1, 1, 4);
    let allocation = equilibrium_allocation(&market, &channel);
    assert!(allocation.participating[0][0]);
    let settings = FlSettings::default();
    let tasks = FlTasks::new(&settings, 1, 1, 9);
    let tau = market.msps[0].tau;
    let run = run_synchronous_rounds(&market, &channel, &allocation, &tasks, &settings, 3.0 * tau)
        .unwrap();
    let lat = latency(&market, &channel, &allocation, 0, 0);
    let received: Vec<f64> = run
        .events
        .iter()
        .filter(|e| e.kind == EventKind::ModelReceived)
        .map(|e| e.time)
        .collect();
    assert_eq!(received.len(), 3);
    for (r, t) in received.iter().enumerate() {
        assert!((t - (r as f64 * tau + lat)).abs() < 1e-12);
    }
    assert_eq!(run.traces[0].len(), 4);
    assert!((run.traces[0][1].time - lat).abs() < 1e-12);
}

#[test]
fn no_participants_keep_the_initial_accuracy() {
    let (market, channel) = market_of(2, 2, 5);
    let allocation = Allocation::empty(2, 2);
    let settings = FlSettings::default();
    let tasks = FlTasks::new(&settings, 2, 2, 1);
    let run =
        run_synchronous_rounds(&market, &channel, &allocation, &tasks, &settings, 30.0).unwrap();
    for trace in &run.traces {
        assert!(trace.len() > 1);
        assert!(trace.iter().all(|p| p.accuracy == trace[0].accuracy));
    }
    assert!(run
        .events
        .iter()
        .all(|e| e.kind == EventKind::RoundDeadline));
}

#[test]
fn event_log_is_ordered_and_complete() {
    let (market, channel) = market_of(5, 3, 6);
    let allocation = equilibrium_allocation(&market, &channel);
    let settings = FlSettings::default();
    let tasks = FlTasks::new(&settings, 5, 3, 2);
    let run = run_synchronous_rounds(
        &market,
        &channel,
        &allocation,
        &tasks,
        &settings,
        market.period,
    )
    .unwrap();
    assert!(run.events.windows(2).all(|w| w[0].time <= w[1].time));
    for n in 0..3 {
        for m in 0..5 {
            let count = run
                .events
                .iter()
                .filter(|e| e.kind == EventKind::ModelReceived && e.mu == Some(m) && e.msp == n)
                .count() as u64;
            let expected = if allocation.participating[m][n] {
                market.rounds(n)
            } else {
                0
            };
            assert_eq!(count, expected);
            if allocation.participating[m][n] {
                assert!(latency(&market, &channel, &allocation, m, n) <= market.msps[n].tau);
            }
        }
    }
}

#[test]
fn deadline_violation_is_reported() {
    let (market, channel) = market_of(1, 1, 7);
    let mut allocation = equilibrium_allocation(&market, &channel);
    allocation.f[(0, 0)] *= 1e-6;
    let settings = FlSettings::default();
    let tasks = FlTasks::new(&settings, 1, 1, 3);
    assert!(matches!(
        run_synchronous_rounds(&market, &channel, &allocation, &tasks, &settings, 10.0),
        Err(FlError::DeadlineViolation { mu: 0, msp: 0, .. })
    ));
}

fn cycle_events(tau: f64, lat: f64, rounds: u64) -> Vec<FlEvent> {
    let mut events = Vec::new();
    for r in 0..rounds {
        let start = r as f64 * tau;
        for (time, kind) in [
            (start, EventKind::TrainStart),
            (start + lat, EventKind::ModelReceived),
        ] {
            events.push(FlEvent {
                time,
                kind,
                mu: Some(0),
                msp: 0,
                round: r,
            });
        }
    }
    events
}

#[test]
fn single_cycle_aoi_matches_hand_integration() {
    // tau = 4, T_c + T_t = 2: the age climbs 0 -> 2, drops to 2 at the
    // reception and climbs to 4 at the horizon. Area 2 + 6 = 8 over 4 s.
    let avg = aoi_timeline(&cycle_events(4.0, 2.0, 1), 1, 1, 4.0, 0.0);
    assert!((avg[(0, 0)] - 2.0).abs() < 1e-12);
}

#[test]
fn steady_state_aoi_matches_closed_form() {
    let (tau, lat) = (2.5, 0.7);
    let rounds = 200;
    let avg = aoi_timeline(
        &cycle_events(tau, lat, rounds),
        1,
        1,
        rounds as f64 * tau,
        0.0,
    );
    let closed = average_aoi(tau, lat, 0.0);
    assert!((avg[(0, 0)] - closed).abs() / closed < 0.01);
}

#[test]
fn aoi_without_updates_grows_linearly() {
    let avg = aoi_timeline(&[], 1, 1, 10.0, 3.0);
    assert!((avg[(0, 0)] - (3.0 + 5.0)).abs() < 1e-12);
}

#[test]
fn potential_value_is_nonnegative_and_falls_with_training() {
    let (market, channel) = market_of(5, 3, 8);
    let allocation = equilibrium_allocation(&market, &channel);
    let settings = FlSettings::default();
    let tasks = FlTasks::new(&settings, 5, 3, 4);
    let before = tasks.omega();
    assert!(before.iter().all(|&w| w >= 0.0));
    let run = run_synchronous_rounds(
        &market,
        &channel,
        &allocation,
        &tasks,
        &settings,
        market.period,
    )
    .unwrap();
    let trained = FlTasks {
        initial_models: run.final_models.clone(),
        ..tasks.clone()
    };
    let after = trained.omega();
    let mean = |m: &Matrix| m.iter().sum::<f64>() / m.as_slice().len() as f64;
    assert!(mean(&after) < mean(&before));
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn fedavg_stays_in_the_coordinatewise_hull(
            locals in proptest::collection::vec(
                (proptest::collection::vec(-10.0f64..10.0, 4), 0.1f64..1e4),
                1..8,
            ),
        ) {
            let locals: Vec<(ToyModel, f64)> = locals.into_iter().map(|(w, s)| (model(&w), s)).collect();
            let avg = fedavg_aggregate(&locals).unwrap();
            for (i, w) in avg.weights.iter().enumerate() {
                let lo = locals.iter().map(|(l, _)| l.weights[i]).fold(f64::INFINITY, f64::min);
                let hi = locals.iter().map(|(l, _)| l.weights[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*w >= lo - 1e-9 && *w <= hi + 1e-9);
            }
        }
    }
}
