use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::equilibrium::solve_ne;
use crate::generator::{generate, GeneratorSpec};
use crate::market::{
    initial_channel, validate_config, ChannelMode, ChannelState, Market, PriceMatrix,
};
use crate::verify::gradcheck::{
    mlp_layer_errors, ppo_gradient_errors, random_fixture, random_ppo_fixture,
};

fn default_market(seed: u64) -> (Market, ChannelState) {
    let cfg = generate(&GeneratorSpec::default(), seed);
    let channel = initial_channel(&cfg);
    (validate_config(cfg).unwrap(), channel)
}

fn small_hp() -> Hyperparams {
    Hyperparams {
        hidden: 16,
        buffer: 8,
        minibatch: 4,
        stages_per_episode: 4,
        ..Hyperparams::default()
    }
}

#[test]
fn layer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (net, x, c) = random_fixture(&mut rng);
        for e in mlp_layer_errors(&net, &x, &c) {
            assert!(e < 1e-6, "relative error {e}");
        }
    }
}

#[test]
fn full_size_actor_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::new(&[5, 256, 10], 0.01, &mut rng);
    let x = [0.3, -1.2, 0.8, 2.0, -0.1];
    let c = [1.0, -0.5, 0.2, 0.0, 0.7, -1.0, 0.4, 0.9, -0.3, 0.1];
    for e in mlp_layer_errors(&net, &x, &c) {
        assert!(e < 1e-6, "relative error {e}");
    }
}

#[test]
fn surrogate_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (actor, critic, batch) = random_ppo_fixture(&mut rng);
        let (ea, ec) = ppo_gradient_errors(&actor, &critic, &batch, 0.2, 0.01);
        assert!(ea < 1e-5 && ec < 1e-6, "actor {ea}, critic {ec}");
    }
}

#[test]
fn zero_advantage_leaves_only_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (actor, critic, mut batch) = random_ppo_fixture(&mut rng);
    for s in &mut batch {
        s.advantage = 0.0;
    }
    let (_, ga, _) = loss_and_grads(&actor, &critic, &batch, 0.2, 0.0);
    assert!(ga.iter().all(|&g| g == 0.0));
    let (_, ga, _) = loss_and_grads(&actor, &critic, &batch, 0.2, 0.01);
    // Entropy only depends on the log-std outputs, i.e. on the log-std rows
    // of the last layer and everything feeding them.
    let m = actor.sizes()[0];
    let last = actor.layer_range(1);
    let hidden = actor.sizes()[1];
    let mean_rows = &ga[last.start..last.start + m * hidden];
    assert!(mean_rows.iter().all(|&g| g == 0.0));
    assert!(ga.iter().any(|&g| g != 0.0));
}

#[test]
fn clipped_ratio_blocks_policy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (actor, critic, mut batch) = random_ppo_fixture(&mut rng);
    for s in &mut batch {
        // Ratio e^{1} far above 1 + clip with positive advantage.
        s.old_log_prob -= 1.0;
        s.advantage = 1.0;
    }
    let (stats, ga, _) = loss_and_grads(&actor, &critic, &batch, 0.2, 0.0);
    assert!(ga.iter().all(|&g| g == 0.0));
    assert!((stats.clip_fraction - 1.0).abs() < 1e-12);
    assert!((stats.actor + 1.2).abs() < 1e-12);
}

#[test]
fn gae_with_zero_discount_is_one_step_error() {
    let g = compute_gae(
        &[1.0, 2.0, 3.0],
        &[0.5, 0.5, 0.5],
        &[9.0, 9.0, 9.0],
        &[false; 3],
        0.0,
        0.0,
    )
    .unwrap();
    assert_eq!(g.raw_advantages, vec![0.5, 1.5, 2.5]);
    assert_eq!(g.returns, vec![1.0, 2.0, 3.0]);
    let mean: f64 = g.advantages.iter().sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn gae_with_exact_values_has_zero_advantage() {
    // Constant reward r with V = r / (1 - gamma) everywhere.
    let (r, gamma) = (2.0, 0.9);
    let v = r / (1.0 - gamma);
    let g = compute_gae(&[r; 5], &[v; 5], &[v; 5], &[false; 5], gamma, 0.95).unwrap();
    for a in &g.raw_advantages {
        assert!(a.abs() < 1e-12);
    }
}

#[test]
fn gae_matches_unrolled_recursion() {
    let rewards = [1.0, -0.5, 0.25, 2.0];
    let values = [0.1, 0.2, -0.3, 0.4];
    let next = [0.2, -0.3, 0.4, 0.7];
    let ends = [false, true, false, false];
    let (gamma, lambda) = (0.95, 0.9);
    let g = compute_gae(&rewards, &values, &next, &ends, gamma, lambda).unwrap();
    let d: Vec<f64> = (0..4)
        .map(|k| rewards[k] + gamma * next[k] - values[k])
        .collect();
    let gl = gamma * lambda;
    let expected = [d[0] + gl * d[1], d[1], d[2] + gl * d[3], d[3]];
    for k in 0..4 {
        assert!((g.raw_advantages[k] - expected[k]).abs() < 1e-12);
    }
}

#[test]
fn gae_rejects_mismatched_lengths() {
    assert!(matches!(
        compute_gae(&[1.0], &[1.0, 2.0], &[1.0], &[false], 0.9, 0.9),
        Err(MddrError::LengthMismatch(1, 2))
    ));
}

#[test]
fn tiny_log_std_samples_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = Mlp::from_parts(vec![2, 4], vec![0.0; 2 * 4 + 4]).unwrap();
    net.bias_mut(0).copy_from_slice(&[0.3, -0.7, -50.0, -50.0]);
    let (action, log_prob) = actor_forward(&net, &[1.0, 1.0], &mut rng);
    assert!((action[0] - 0.3).abs() < 0.05 && (action[1] + 0.7).abs() < 0.05);
    // Log-std is clamped at LOG_STD_MIN, so the density is finite.
    assert!(log_prob.is_finite() && log_prob > 0.0);
}

#[test]
fn unit_gaussian_log_prob() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Mlp::from_parts(vec![1, 2], vec![0.0; 4]).unwrap();
    let (a, lp) = actor_forward(&net, &[0.0], &mut rng);
    let expected = -0.5 * a[0] * a[0] - 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((lp - expected).abs() < 1e-12);
}

#[test]
fn sampling_is_seed_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Mlp::new(&[3, 8, 6], 1.0, &mut rng);
    let a = actor_forward(&net, &[0.1, 0.2, 0.3], &mut ChaCha8Rng::seed_from_u64(77));
    let b = actor_forward(&net, &[0.1, 0.2, 0.3], &mut ChaCha8Rng::seed_from_u64(77));
    assert_eq!(a, b);
}

#[test]
fn price_mapping_round_trips_and_clips() {
    assert_eq!(to_price(-1.0, 0.2, 5.0), 0.2);
    assert_eq!(to_price(1.0, 0.2, 5.0), 5.0);
    assert_eq!(to_price(7.0, 0.2, 5.0), 5.0);
    assert_eq!(to_price(-3.0, 0.2, 5.0), 0.2);
    assert!((to_price(from_price(1.7, 0.2, 5.0), 0.2, 5.0) - 1.7).abs() < 1e-12);
}

#[test]
fn running_norm_matches_sample_statistics() {
    let mut n = RunningNorm::new(1);
    for x in [1.0, 2.0, 4.0, 7.0] {
        n.update(&[x]);
    }
    assert!((n.mean[0] - 3.5).abs() < 1e-12);
    assert!((n.std(0) - 7.0f64.sqrt()).abs() < 1e-12);
    assert_eq!(n.normalize(&[1e9]), vec![5.0]);
}

#[test]
fn env_is_deterministic_per_seed() {
    let (market, channel) = default_market(1);
    let prices = PriceMatrix::midpoint(&market);
    let run = |seed| {
        let mut env = Env::new(
            &market,
            channel.clone(),
            ChannelMode::Dynamic,
            stream_rng(seed, 0),
        );
        env.reset();
        (0..3)
            .map(|_| env.step(&prices).utilities)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn static_env_reproduces_equilibrium_utilities() {
    let (market, channel) = default_market(2);
    let ne = solve_ne(
        &market,
        &channel,
        &PriceMatrix::midpoint(&market),
        1e-8,
        500,
    )
    .unwrap();
    let mut env = Env::new(
        &market,
        channel.clone(),
        ChannelMode::Static,
        stream_rng(0, 0),
    );
    env.reset();
    for _ in 0..3 {
        let step = env.step(&ne.prices);
        for (a, b) in step.utilities.iter().zip(&ne.msp_utilities) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}

#[test]
fn negligible_service_value_turns_payments_into_losses() {
    let (market, channel) = default_market(3);
    let mut cfg = market.config().clone();
    for msp in &mut cfg.msps {
        msp.profit_coef = 1e-12;
    }
    let market = validate_config(cfg).unwrap();
    let prices = PriceMatrix::new(Matrix::filled(
        market.num_msps(),
        market.num_mus(),
        market.msps[0].price_min,
    ));
    let mut env = Env::new(&market, channel, ChannelMode::Static, stream_rng(0, 0));
    let step = env.step(&prices);
    for (u, v) in step.utilities.iter().zip(0..) {
        let paid: f64 = (0..market.num_mus())
            .map(|m| prices.get(v, m) * step.outcome.values[(m, v)])
            .sum();
        assert!(paid > 0.0 && (u + paid).abs() < 1e-9 * paid);
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_bit_identical() {
    let (market, channel) = default_market(4);
    let hp = Hyperparams {
        learning_rate: 0.0,
        ..small_hp()
    };
    let fresh: Vec<Agent> = (0..market.num_msps())
        .map(|n| {
            Agent::new(
                market.num_mus(),
                (0.2, 5.0),
                &hp,
                stream_rng(9, n as u64 + 1),
            )
        })
        .collect();
    let t = train(&market, &channel, ChannelMode::Static, 6, &hp, 9).unwrap();
    for (a, b) in t.agents.iter().zip(&fresh) {
        assert_eq!(a.actor.params(), b.actor.params());
        assert_eq!(a.critic.params(), b.critic.params());
    }
}

#[test]
fn update_empties_the_buffer_and_moves_parameters() {
    let (market, channel) = default_market(5);
    let hp = small_hp();
    let mut agent = Agent::new(market.num_mus(), (0.2, 5.0), &hp, stream_rng(1, 1));
    let before = agent.actor.params().to_vec();
    let mut env = Env::new(&market, channel, ChannelMode::Static, stream_rng(1, 0));
    let mut obs = env.reset();
    let mut updated = false;
    for k in 0..hp.buffer {
        let d = agent.act(&obs[0]);
        assert!(d.prices.iter().all(|p| (0.2..=5.0).contains(p)));
        let mut prices = PriceMatrix::midpoint(&market);
        prices.p.row_mut(0).copy_from_slice(&d.prices);
        let step = env.step(&prices);
        let r = agent
            .observe(d, step.utilities[0], &step.observations[0], k % 4 == 3)
            .unwrap();
        updated |= r.is_some();
        obs = step.observations;
    }
    assert!(updated);
    assert_eq!(agent.buffer_len(), 0);
    assert_ne!(agent.actor.params(), &before[..]);
}

#[test]
fn zero_episodes_give_empty_traces() {
    let (market, channel) = default_market(6);
    let t = train(&market, &channel, ChannelMode::Static, 0, &small_hp(), 1).unwrap();
    assert_eq!(t.utility_traces.len(), market.num_msps());
    assert!(t.utility_traces.iter().all(Vec::is_empty));
    assert!(t.final_prices.is_none());
    assert!(t.total_trace().is_empty());
}

#[test]
fn training_is_deterministic_per_seed() {
    let (market, channel) = default_market(7);
    let hp = small_hp();
    let a = train(&market, &channel, ChannelMode::Dynamic, 5, &hp, 3).unwrap();
    let b = train(&market, &channel, ChannelMode::Dynamic, 5, &hp, 3).unwrap();
    assert_eq!(a.utility_traces, b.utility_traces);
    assert_eq!(a.agents[0].actor.params(), b.agents[0].actor.params());
}

#[test]
fn checkpoint_round_trips_bit_for_bit() {
    let (market, channel) = default_market(8);
    let hp = small_hp();
    let t = train(&market, &channel, ChannelMode::Static, 3, &hp, 2).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&t.agents, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice(), &hp, 2).unwrap();
    assert_eq!(back.len(), t.agents.len());
    for (a, b) in t.agents.iter().zip(&back) {
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.critic, b.critic);
        assert_eq!(a.obs_norm, b.obs_norm);
        assert_eq!(a.utility_norm, b.utility_norm);
        assert_eq!(a.price_range(), b.price_range());
    }
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn checkpoint_rejects_garbage() {
    let hp = small_hp();
    assert!(matches!(
        read_checkpoint(&b"hello\n"[..], &hp, 0),
        Err(MddrError::Checkpoint(_))
    ));
    let truncated = b"iomtrade-mddr 1\nagents 1\nprice_range 0.2 5\nactor 2 2\n1 2 3\n";
    assert!(matches!(
        read_checkpoint(&truncated[..], &hp, 0),
        Err(MddrError::Checkpoint(_))
    ));
}
