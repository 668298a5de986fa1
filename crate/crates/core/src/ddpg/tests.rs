use super::*;
use crate::env::InitKind;
use rand::SeedableRng;

fn random_batch(n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let s = env::random_state(&mut rng);
            let u = rng.random_range(-2.0..2.0);
            let (next, cost) = env::step(&s, u, &EnvParams::default()).unwrap();
            Transition {
                x: s.observation(),
                u,
                cost,
                x_next: next.observation(),
            }
        })
        .collect()
}

fn agent(seed: u64) -> DdpgAgent {
    DdpgAgent::new(&DdpgConfig::default(), &mut rng::seeded(seed)).unwrap()
}

fn transition(u: f64) -> Transition {
    Transition {
        x: [1.0, 0.0, 0.0],
        u,
        cost: 0.0,
        x_next: [1.0, 0.0, 0.0],
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn buffer_ring_semantics() {
    let mut buf = ReplayBuffer::new(2).unwrap();
    assert!(buf.is_empty());
    buf.push(transition(0.0));
    assert_eq!(buf.len(), 1);
    buf.push(transition(1.0));
    buf.push(transition(2.0));
    assert_eq!(buf.len(), 2);
    let us: Vec<f64> = (0..2).map(|i| buf.get(i).unwrap().u).collect();
    assert_eq!(us, vec![2.0, 1.0]);
    assert!(ReplayBuffer::new(0).is_err());
}

#[test]
fn buffer_fill_never_exceeds_capacity() {
    let mut buf = ReplayBuffer::new(1000).unwrap();
    for i in 0..1_000_000 {
        buf.push(transition(i as f64));
        assert!(buf.len() <= buf.capacity());
    }
    assert_eq!(buf.len(), 1000);
}

#[test]
fn empty_buffer_sample_errors() {
    let buf = ReplayBuffer::new(4).unwrap();
    assert!(matches!(buf.sample(8, &mut rng::seeded(0)), Err(Error::EmptyBuffer)));
}

#[test]
fn single_item_buffer_fills_batch() {
    let mut buf = ReplayBuffer::new(10).unwrap();
    buf.push(transition(0.7));
    let batch = buf.sample(64, &mut rng::seeded(3)).unwrap();
    assert_eq!(batch.len(), 64);
    assert!(batch.iter().all(|t| t.u == 0.7));
}

#[test]
fn seeded_sampling_is_reproducible() {
    let mut buf = ReplayBuffer::new(100).unwrap();
    for i in 0..100 {
        buf.push(transition(i as f64));
    }
    let a = buf.sample_indices(64, &mut rng::seeded(9)).unwrap();
    let b = buf.sample_indices(64, &mut rng::seeded(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(1000).unwrap();
    for i in 0..100 {
        buf.push(transition(i as f64));
    }
    let draws = 100_000;
    let mut counts = [0usize; 100];
    let mut rng = rng::seeded(17);
    for _ in 0..draws / 100 {
        for i in buf.sample_indices(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let p = 0.01;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - mean).abs() <= 5.0 * sigma, "count {c}");
    }
}

#[test]
fn td_target_hand_cases() {
    assert_eq!(td_target(1.0, 2.0, 0.9), 2.8);
    assert_eq!(td_target(-3.5, 100.0, 0.0), -3.5);
}

#[test]
fn zero_target_critic_gives_reward() {
    let mut a = agent(0);
    a.target_critic = MlpNetwork::zeros(&[4, 64, 64, 1], &[Activation::Relu, Activation::Relu, Activation::Linear]).unwrap();
    let batch = random_batch(16, 1);
    let y = a.td_targets(&batch).unwrap();
    for (t, v) in batch.iter().zip(y) {
        assert_eq!(v, -t.cost);
    }
}

#[test]
fn gamma_zero_gives_reward() {
    let cfg = DdpgConfig {
        gamma: 0.0,
        ..Default::default()
    };
    let a = DdpgAgent::new(&cfg, &mut rng::seeded(2)).unwrap();
    let batch = random_batch(16, 2);
    for (t, v) in batch.iter().zip(a.td_targets(&batch).unwrap()) {
        assert_eq!(v, -t.cost);
    }
}

#[test]
fn zero_actor_outputs_zero() {
    let mut a = agent(0);
    a.actor = MlpNetwork::zeros(
        &[3, 64, 64, 1],
        &[Activation::Relu, Activation::Relu, Activation::ScaledTanh { scale: 2.0 }],
    )
    .unwrap();
    assert_eq!(a.act(&[0.3, -0.2, 4.0]).unwrap(), 0.0);
}

#[test]
fn actions_stay_in_bounds() {
    let a = agent(4);
    let mut rng = rng::seeded(4);
    for s in random_batch(200, 4) {
        let g = a.act(&s.x).unwrap();
        assert!(g.abs() <= 2.0);
        let e = a.act_explore(&s.x, 5.0, &mut rng).unwrap();
        assert!(e.abs() <= 2.0);
    }
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let a = agent(5);
    let batch = random_batch(32, 5);
    let targets = a.td_targets(&batch).unwrap();
    let (_, grads) = a.critic_loss_and_gradient(&batch, &targets).unwrap();
    let analytic = grads.flatten();
    let mut rng = rng::seeded(55);
    let eps = 1e-5;
    for _ in 0..60 {
        let idx = rng.random_range(0..analytic.len());
        let mut plus = a.clone();
        *plus.critic.parameter_mut(idx) += eps;
        let mut minus = a.clone();
        *minus.critic.parameter_mut(idx) -= eps;
        let lp = plus.critic_loss_and_gradient(&batch, &targets).unwrap().0;
        let lm = minus.critic_loss_and_gradient(&batch, &targets).unwrap().0;
        let fd = (lp - lm) / (2.0 * eps);
        let err = (fd - analytic[idx]).abs() / fd.abs().max(analytic[idx].abs()).max(1e-6);
        assert!(err <= 1e-3, "param {idx}: fd {fd} analytic {}", analytic[idx]);
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let a = agent(6);
    let batch = random_batch(32, 6);
    let (_, grads) = a.actor_loss_and_gradient(&batch).unwrap();
    let analytic = grads.flatten();
    let eps = 1e-5;
    let mut fd = vec![0.0; analytic.len()];
    for (idx, slot) in fd.iter_mut().enumerate() {
        let mut plus = a.clone();
        *plus.actor.parameter_mut(idx) += eps;
        let mut minus = a.clone();
        *minus.actor.parameter_mut(idx) -= eps;
        let lp = plus.actor_loss_and_gradient(&batch).unwrap().0;
        let lm = minus.actor_loss_and_gradient(&batch).unwrap().0;
        *slot = (lp - lm) / (2.0 * eps);
    }
    assert!(cosine(&fd, &analytic) >= 0.99);
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (f, g) in fd.iter().zip(&analytic) {
        assert!((f - g).abs() <= 1e-3 * f.abs().max(g.abs()).max(1e-3 * scale));
    }
}

#[test]
fn critic_constant_in_action_leaves_actor_unchanged() {
    let mut a = agent(7);
    // Zeroing the action column of the first critic layer makes Q independent of u.
    let w = &mut a.critic.weights_mut()[0];
    for o in 0..w.rows() {
        w[(o, 3)] = 0.0;
    }
    let before = a.actor.flatten_parameters();
    let batch = random_batch(16, 7);
    let (_, grads) = a.actor_loss_and_gradient(&batch).unwrap();
    assert_eq!(grads.max_abs(), 0.0);
    a.actor_update(&batch).unwrap();
    assert_eq!(a.actor.flatten_parameters(), before);
}

#[test]
fn critic_overfits_one_batch() {
    let mut a = agent(8);
    let batch = random_batch(64, 8);
    let first = a.critic_update(&batch).unwrap();
    let mut last = first;
    for _ in 0..500 {
        last = a.critic_update(&batch).unwrap();
        assert!(last.is_finite() && last >= 0.0);
    }
    assert!(last <= 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn critic_at_targets_has_zero_loss() {
    let mut a = agent(9);
    let zero = MlpNetwork::zeros(&[4, 64, 64, 1], &[Activation::Relu, Activation::Relu, Activation::Linear]).unwrap();
    a.critic = zero.clone();
    a.target_critic = zero;
    let batch: Vec<Transition> = (0..8).map(|_| transition(0.5)).collect();
    let before = a.critic.flatten_parameters();
    assert_eq!(a.critic_update(&batch).unwrap(), 0.0);
    assert_eq!(a.critic.flatten_parameters(), before);
}

/// Piecewise-linear interpolant of `−(u − 1)²` on knots spaced 0.125 over
/// `[−3, 3]`, as a 4→k→k→1 ReLU network. Its maximum is exactly at `u = 1`.
fn surrogate_critic() -> MlpNetwork {
    let knots: Vec<f64> = (0..=48).map(|i| -3.0 + 0.125 * i as f64).collect();
    let f = |u: f64| -(u - 1.0) * (u - 1.0);
    let k = knots.len();
    // Unit 0 carries relu(u + 10) = u + 10 for the base slope; unit i ≥ 1
    // carries relu(u − knot_i).
    let mut w1 = Matrix::zeros(k, 4);
    let mut b1 = vec![0.0; k];
    w1[(0, 3)] = 1.0;
    b1[0] = 10.0;
    for i in 1..k {
        w1[(i, 3)] = 1.0;
        b1[i] = -knots[i];
    }
    let w2 = Matrix::identity(k);
    let slopes: Vec<f64> = knots.windows(2).map(|w| (f(w[1]) - f(w[0])) / (w[1] - w[0])).collect();
    let mut w3 = Matrix::zeros(1, k);
    w3[(0, 0)] = slopes[0];
    for i in 1..k - 1 {
        w3[(0, i)] = slopes[i] - slopes[i - 1];
    }
    let b3 = vec![f(knots[0]) - slopes[0] * (knots[0] + 10.0)];
    MlpNetwork::from_parameters(
        &[Activation::Relu, Activation::Relu, Activation::Linear],
        vec![w1, w2, w3],
        vec![b1, vec![0.0; k], b3],
    )
    .unwrap()
}

#[test]
fn surrogate_critic_is_the_intended_function() {
    let c = surrogate_critic();
    for u in [-2.0, -0.5, 0.0, 1.0, 1.75] {
        let q = c.forward(&[0.0, 0.0, 0.0, u]).unwrap()[0];
        assert!((q + (u - 1.0) * (u - 1.0)).abs() < 1e-12, "u {u}: {q}");
    }
}

#[test]
fn actor_converges_to_surrogate_optimum() {
    let mut a = agent(10);
    a.critic = surrogate_critic();
    let batch = random_batch(64, 10);
    for _ in 0..2000 {
        a.actor_update(&batch).unwrap();
    }
    for t in &batch {
        let u = a.act(&t.x).unwrap();
        assert!((u - 1.0).abs() <= 0.05, "u = {u}");
    }
}

#[test]
fn soft_update_stays_between_target_and_online() {
    let mut a = agent(11);
    let batch = random_batch(64, 11);
    for _ in 0..5 {
        a.critic_update(&batch).unwrap();
        a.actor_update(&batch).unwrap();
        let prev_ta = a.target_actor.flatten_parameters();
        let prev_tc = a.target_critic.flatten_parameters();
        a.soft_update_targets().unwrap();
        let tau = a.config.tau;
        for (prev, new, online) in [
            (prev_ta, a.target_actor.flatten_parameters(), a.actor.flatten_parameters()),
            (prev_tc, a.target_critic.flatten_parameters(), a.critic.flatten_parameters()),
        ] {
            for i in 0..prev.len() {
                assert!((new[i] - prev[i]).abs() <= tau * (online[i] - prev[i]).abs() + 1e-12);
                assert_eq!(new[i], tau * online[i] + (1.0 - tau) * prev[i]);
            }
        }
    }
}

#[test]
fn noise_schedule_decays_over_first_half() {
    let cfg = DdpgConfig::default();
    assert_eq!(cfg.noise_sigma(0, 100), 1.0);
    assert!((cfg.noise_sigma(25, 100) - 0.525).abs() < 1e-12);
    assert_eq!(cfg.noise_sigma(50, 100), 0.05);
    assert_eq!(cfg.noise_sigma(99, 100), 0.05);
}

#[test]
fn zero_episodes_gives_untrained_agent() {
    let cfg = DdpgConfig::default();
    let (a, curve) = train(0, &cfg).unwrap();
    assert!(curve.returns.is_empty());
    assert_eq!(a, DdpgAgent::new(&cfg, &mut rng::derived(cfg.seed, 0)).unwrap());
}

#[test]
fn training_is_reproducible() {
    let cfg = DdpgConfig {
        seed: 3,
        ..Default::default()
    };
    let (a, ca) = train(50, &cfg).unwrap();
    let (b, cb) = train(50, &cfg).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a, b);
    assert_eq!(ca.returns.len(), 50);
}

#[test]
fn greedy_episodes_are_identical() {
    let a = agent(12);
    let init = crate::env::reset(InitKind::LeftHorizontal, 1.0, 0).unwrap();
    let mut first = TrajectoryRecord::new("ddpg", "left", 0);
    run_episode(&a, init, 200, None, &EnvParams::default(), &mut first).unwrap();
    for _ in 0..49 {
        let mut again = TrajectoryRecord::new("ddpg", "left", 0);
        run_episode(&a, init, 200, None, &EnvParams::default(), &mut again).unwrap();
        assert_eq!(again, first);
    }
    assert!(first.rows.iter().all(|r| r.planned.is_none()));
}

#[test]
fn checkpoint_round_trip() {
    let a = agent(13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.json");
    a.save_json(&path).unwrap();
    assert_eq!(DdpgAgent::load_json(&path).unwrap(), a);
    assert!(matches!(
        DdpgAgent::load_json(dir.path().join("absent.json")),
        Err(Error::MissingCheckpoint(_))
    ));
}

#[test]
fn window_mean() {
    let c = LearningCurve {
        returns: vec![-4.0, -2.0, -1.0],
    };
    assert_eq!(c.window_mean(0, 2), Some(-3.0));
    assert_eq!(c.window_mean(2, 2), None);
}

#[test]
fn std_rng_unaffected() {
    // Exploration draws come from the caller's generator only.
    let a = agent(14);
    let x = [0.0, 1.0, 0.0];
    let u1 = a.act_explore(&x, 0.3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
    let u2 = a.act_explore(&x, 0.3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(u1, u2);
}
