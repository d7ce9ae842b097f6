use oracle_ql::agent::{train, AgentConfig, GreedyPolicy};
use oracle_ql::es::EsConfig;
use oracle_ql::nnet::{adam_step, AdamConfig, AdamState, MlpNetwork};
use oracle_ql::sim::{rollout, Bandit, BanditConfig, EnvironmentConfig, PhotoproductionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 1000 points of `y = sin(2 x_1 - x_2 + 0.5 x_3)` on `[-1, 1]^3`; budget of
/// 3000 Adam steps on minibatches of 100.
#[test]
fn mlp_fits_a_sine() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs.chunks(3).map(|x| (2.0 * x[0] - x[1] + 0.5 * x[2]).sin()).collect();
    let mut net = MlpNetwork::new(3, &[32, 32], &mut rng);
    let mut adam = AdamState::new(AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() }, net.params().len());
    let initial = net.loss(&xs, &ys, 1.0).unwrap();
    let (mut bx, mut by) = (Vec::with_capacity(300), Vec::with_capacity(100));
    for _ in 0..3000 {
        bx.clear();
        by.clear();
        for _ in 0..100 {
            let i = rng.random_range(0..ys.len());
            bx.extend_from_slice(&xs[3 * i..3 * i + 3]);
            by.push(ys[i]);
        }
        let (_, grad) = net.backward(&bx, &by, 1.0).unwrap();
        adam_step(&mut net, &grad, &mut adam).unwrap();
    }
    let last = net.loss(&xs, &ys, 1.0).unwrap();
    assert!(last < 0.05 * initial, "loss {initial:.4e} -> {last:.4e}");
}

fn bandit_config() -> AgentConfig {
    AgentConfig {
        iterations: 60,
        episodes_per_iteration: 10,
        epsilon_decay: 0.93,
        backoff_decay: 0.9,
        hidden: vec![16, 16],
        q_batch: 64,
        g_batch: vec![64],
        gradient_steps: 30,
        adam: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
        es: EsConfig { generations: 20, ..EsConfig::default() },
        ..AgentConfig::default()
    }
}

#[test]
fn bandit_policy_reaches_constrained_optimum() {
    let env = Bandit::new(BanditConfig::default()).unwrap();
    let optimum = env.reward_of(0.5);
    for seed in [3, 4, 5] {
        let outcome = train(&env, &bandit_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let traj = rollout(&env, &mut GreedyPolicy { bundle: &outcome.bundle }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let u = traj.controls[0][0];
        assert!(traj.total_reward() >= 0.95 * optimum, "seed {seed}: u = {u}, reward {}", traj.total_reward());
        // Within 5 % of the control range of the constraint boundary.
        assert!((u - 0.5).abs() <= 0.05, "seed {seed}: u = {u}");
    }
}

#[test]
fn smoke_training_follows_the_schedules() {
    let env = EnvironmentConfig::Cs1(PhotoproductionConfig::default()).build().unwrap();
    let cfg = AgentConfig {
        iterations: 5,
        episodes_per_iteration: 2,
        epsilon_decay: 0.5,
        backoff_decay: 0.8,
        hidden: vec![8],
        q_buffer: 30,
        q_batch: 8,
        g_batch: vec![8],
        es: EsConfig { population: 8, parents: 2, generations: 2, ..EsConfig::default() },
        ..AgentConfig::default()
    };
    let outcome = train(env.as_ref(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(outcome.log.len(), 5);
    let steps = env.spec().horizon * cfg.episodes_per_iteration;
    for (m, rec) in outcome.log.iter().enumerate() {
        assert_eq!(rec.iteration, m);
        assert!((rec.epsilon - 0.99 * 0.5f64.powi(m as i32)).abs() < 1e-12);
        // b_m = b_0 D_2^m from the photoproduction preset.
        for (b, b0) in rec.backoffs.iter().zip([-500.0, -0.05]) {
            assert!((b - b0 * 0.8f64.powi(m as i32)).abs() <= 1e-12 * b0.abs());
        }
        assert_eq!(rec.q_buffer_len, (steps * (m + 1)).min(30));
        assert_eq!(rec.g_buffer_len, steps * (m + 1));
        assert_eq!(rec.failed_episodes, 0);
        assert!(rec.q_loss.is_finite() && rec.g_losses.iter().all(|l| l.is_finite()));
    }
    // Deployment backoffs start at zero.
    assert_eq!(outcome.bundle.backoffs.0, vec![0.0, 0.0]);
}
