use proptest::prelude::*;
use strange_marl::envs::EnvSpec;
use strange_marl::marl::{
    argmax, epsilon_greedy_actions, exp_td_loss, exp_td_target, goal_td_loss, goal_td_target, greedy_actions, mix,
    JointQFunction, Mixer, MixerKind, Role,
};
use strange_marl::nn::{check_gradients, OptimizerKind, OptimizerState, Tape};
use strange_marl::replay::{EpisodeRecord, MiniBatch};
use strange_marl::{Error, Rng, Tensor};

fn spec(n_agents: usize, obs_dim: usize, n_actions: usize) -> EnvSpec {
    EnvSpec { n_agents, obs_dim, state_dim: 3, n_actions, max_steps: 8 }
}

/// Sets every head weight to zero and the head bias to `bias`.
fn pin_head(q: &mut JointQFunction, bias: &[f32]) {
    let (w, b) = (q.agent.head.w, q.agent.head.b);
    q.params.get_mut(w).data_mut().fill(0.0);
    q.params.get_mut(b).data_mut().copy_from_slice(bias);
}

fn random_episode(spec: &EnvSpec, len: usize, terminal: bool, rng: &mut Rng) -> EpisodeRecord {
    let frame = |rng: &mut Rng| {
        let obs: Vec<Vec<f32>> =
            (0..spec.n_agents).map(|_| (0..spec.obs_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).collect();
        let state: Vec<f32> = (0..spec.state_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        (obs, state)
    };
    let (o, s) = frame(rng);
    let mut e = EpisodeRecord::start(spec, &o, &s).unwrap();
    for t in 0..len {
        let (o, s) = frame(rng);
        let actions: Vec<usize> = (0..spec.n_agents).map(|_| rng.below(spec.n_actions)).collect();
        let r = rng.uniform_range(0.0, 1.0);
        e.push_step(&actions, r, &o, &s, terminal && t + 1 == len).unwrap();
    }
    e
}

fn one_step_batch(spec: &EnvSpec, reward: f32, terminal: bool) -> MiniBatch {
    let obs = vec![vec![0.5; spec.obs_dim]; spec.n_agents];
    let state = vec![0.1; spec.state_dim];
    let mut e = EpisodeRecord::start(spec, &obs, &state).unwrap();
    e.push_step(&vec![0; spec.n_agents], reward, &obs, &state, terminal).unwrap();
    MiniBatch::from_episodes(&[&e])
}

#[test]
fn zero_head_outputs_bias() {
    let sp = spec(2, 4, 3);
    let mut q = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 8, 8, &mut Rng::new(1));
    pin_head(&mut q, &[0.3, -0.2, 0.7]);
    let obs = vec![vec![0.9, -1.0, 0.2, 0.0], vec![0.1; 4]];
    let (out, h) = q.agent_q_step(&obs, &[None, Some(2)], &q.initial_hidden()).unwrap();
    for i in 0..2 {
        assert_eq!(out.row(i), &[0.3, -0.2, 0.7]);
    }
    assert!(h.data().iter().all(|v| v.abs() < 1.0));
    let again = q.agent_q_step(&obs, &[None, Some(2)], &q.initial_hidden()).unwrap();
    assert_eq!(again.0, out);
    assert_eq!(again.1, h);
}

#[test]
fn agent_step_matches_scalar_reference() {
    let sp = EnvSpec { n_agents: 1, obs_dim: 1, state_dim: 1, n_actions: 1, max_steps: 4 };
    let q = JointQFunction::new(Role::Goal, &sp, MixerKind::Vdn, 1, 1, &mut Rng::new(9));
    let g = |id| q.params.get(id).data().to_vec();
    let (fw, fb) = (g(q.agent.fc.w), g(q.agent.fc.b)[0] as f64);
    let lin = |l: &strange_marl::nn::Linear, x: &[f64]| {
        let w = g(l.w);
        g(l.b)[0] as f64 + w.iter().zip(x).map(|(&a, &b)| a as f64 * b).sum::<f64>()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (z, last) = (0.37f64, Some(0usize));
    let h0 = 0.25f64;
    // input is [obs, last action one-hot, agent id one-hot]
    let x = [z, 1.0, 1.0];
    let e = (fb + fw.iter().zip(&x).map(|(&a, &b)| a as f64 * b).sum::<f64>()).max(0.0);
    let r = sig(lin(&q.agent.gru.reset, &[e, h0]));
    let u = sig(lin(&q.agent.gru.update, &[e, h0]));
    let n = lin(&q.agent.gru.candidate, &[e, r * h0]).tanh();
    let h1 = (1.0 - u) * n + u * h0;
    let out = lin(&q.agent.head, &[h1]);
    let (qv, hv) = q
        .agent_q_step(&[vec![z as f32]], &[last], &Tensor::matrix(1, 1, vec![h0 as f32]).unwrap())
        .unwrap();
    assert!((qv.item() as f64 - out).abs() < 1e-6);
    assert!((hv.item() as f64 - h1).abs() < 1e-6);
}

#[test]
fn agent_step_rejects_bad_shapes() {
    let sp = spec(2, 4, 3);
    let q = JointQFunction::new(Role::Goal, &sp, MixerKind::Vdn, 8, 8, &mut Rng::new(1));
    let bad = q.agent_q_step(&[vec![0.0; 3], vec![0.0; 4]], &[None, None], &q.initial_hidden());
    assert!(matches!(bad, Err(Error::Nn(_))));
    let bad = q.agent_q_step(&[vec![0.0; 4]], &[None], &q.initial_hidden());
    assert!(bad.is_err());
}

#[test]
fn vdn_sums_and_qmix_needs_state() {
    let sp = spec(2, 4, 3);
    let v = JointQFunction::new(Role::Goal, &sp, MixerKind::Vdn, 8, 8, &mut Rng::new(1));
    assert_eq!(mix(&v.mixer, &v.params, &[1.5, -0.5], None).unwrap(), 1.0);
    let q = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 8, 8, &mut Rng::new(1));
    assert!(mix(&q.mixer, &q.params, &[1.5, -0.5], None).is_err());
    assert!(mix(&q.mixer, &q.params, &[1.5, -0.5], Some(&[0.0, 1.0, 0.5])).unwrap().is_finite());
}

#[test]
fn qmix_with_unit_weights_is_elu_of_sum() {
    let sp = EnvSpec { n_agents: 1, obs_dim: 1, state_dim: 2, n_actions: 2, max_steps: 4 };
    let mut q = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 4, 1, &mut Rng::new(3));
    let Mixer::Qmix(m) = q.mixer.clone() else { unreachable!() };
    for l in [&m.hyper_w1, &m.hyper_w2] {
        q.params.get_mut(l.w).data_mut().fill(0.0);
        q.params.get_mut(l.b).data_mut().fill(1.0);
    }
    for l in [&m.hyper_b1, &m.v1, &m.v2] {
        q.params.get_mut(l.w).data_mut().fill(0.0);
        q.params.get_mut(l.b).data_mut().fill(0.0);
    }
    let s = [0.3, -0.4];
    let mut prev = f32::NEG_INFINITY;
    for k in -20..=20 {
        let x = k as f32 * 0.25;
        let out = mix(&q.mixer, &q.params, &[x], Some(&s)).unwrap();
        let elu = if x > 0.0 { x } else { x.exp() - 1.0 };
        assert!((out - elu).abs() < 1e-6);
        assert!(out > prev);
        prev = out;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn qmix_is_monotone(seed in any::<u64>(), q in prop::collection::vec(-3.0f32..3.0, 3), s in prop::collection::vec(-2.0f32..2.0, 3)) {
        let sp = spec(3, 2, 2);
        let jq = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 4, 8, &mut Rng::new(seed));
        let h = 1e-3f32;
        for i in 0..3 {
            let mut up = q.clone();
            let mut down = q.clone();
            up[i] += h;
            down[i] -= h;
            let d = (mix(&jq.mixer, &jq.params, &up, Some(&s)).unwrap() - mix(&jq.mixer, &jq.params, &down, Some(&s)).unwrap()) / (2.0 * h);
            prop_assert!(d >= -1e-6, "dQ/dq{} = {}", i, d);
        }
    }

    #[test]
    fn vdn_is_exact_sum(q in prop::collection::vec(-100.0f32..100.0, 4)) {
        let sp = spec(4, 2, 2);
        let jq = JointQFunction::new(Role::Goal, &sp, MixerKind::Vdn, 4, 8, &mut Rng::new(0));
        let sum = q.iter().map(|&v| v as f64).sum::<f64>() as f32;
        prop_assert_eq!(mix(&jq.mixer, &jq.params, &q, None).unwrap(), sum);
    }

    #[test]
    fn argmax_invariant_to_positive_scaling(q in prop::collection::vec(-5.0f32..5.0, 2..6), c in 0.01f32..100.0) {
        let scaled: Vec<f32> = q.iter().map(|v| v * c).collect();
        let a = argmax(&q);
        prop_assert!(q.iter().all(|&v| v <= q[a]));
        prop_assert_eq!(argmax(&scaled), a);
    }
}

#[test]
fn greedy_ties_and_epsilon() {
    let q = Tensor::matrix(2, 2, vec![0.1, 0.9, 0.5, 0.5]).unwrap();
    assert_eq!(greedy_actions(&q), vec![1, 0]);
    let mut rng = Rng::new(4);
    for _ in 0..100 {
        assert_eq!(epsilon_greedy_actions(&q, 0.0, &mut rng), vec![1, 0]);
    }
    let a = epsilon_greedy_actions(&q, 0.5, &mut Rng::new(8));
    assert_eq!(a, epsilon_greedy_actions(&q, 0.5, &mut Rng::new(8)));
}

#[test]
fn full_epsilon_is_uniform() {
    let q = Tensor::matrix(1, 4, vec![9.0, 0.0, 0.0, 0.0]).unwrap();
    let mut rng = Rng::new(21);
    let draws = 10_000usize;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[epsilon_greedy_actions(&q, 1.0, &mut rng)[0]] += 1;
    }
    let (p, n) = (0.25f64, draws as f64);
    let sd = (n * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n * p).abs() <= 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn goal_loss_terminal_example() {
    let sp = spec(1, 2, 2);
    let mut theta = JointQFunction::new(Role::Goal, &sp, MixerKind::Vdn, 4, 4, &mut Rng::new(1));
    pin_head(&mut theta, &[0.0, 0.0]);
    let target = theta.clone_as(Role::Target);
    let b = one_step_batch(&sp, 1.0, true);
    let out = goal_td_loss(&theta, &target, &b, &b.rewards, 0.99).unwrap();
    assert!((out.loss - 1.0).abs() < 1e-6);
}

#[test]
fn goal_loss_bootstrap_example() {
    let sp = spec(1, 2, 2);
    let mut theta = JointQFunction::new(Role::Goal, &sp, MixerKind::Vdn, 4, 4, &mut Rng::new(1));
    let mut target = theta.clone_as(Role::Target);
    pin_head(&mut theta, &[1.0, -3.0]);
    pin_head(&mut target, &[-1.0, 2.0]);
    let b = one_step_batch(&sp, 0.0, false);
    let out = goal_td_loss(&theta, &target, &b, &b.rewards, 0.99).unwrap();
    assert!((out.loss - 0.9604).abs() < 1e-6, "{}", out.loss);
    let y = goal_td_target(&target, &b, &b.rewards, 0.0).unwrap();
    assert_eq!(y, b.rewards);
}

#[test]
fn exp_target_hand_case() {
    let sp = spec(1, 2, 2);
    let mut omega = JointQFunction::new(Role::Exploration, &sp, MixerKind::Vdn, 4, 4, &mut Rng::new(1));
    let mut target = JointQFunction::new(Role::Target, &sp, MixerKind::Vdn, 4, 4, &mut Rng::new(2));
    pin_head(&mut omega, &[0.0, 1.0]);
    pin_head(&mut target, &[5.0, 2.0]);
    let b = one_step_batch(&sp, 0.5, false);
    let y = exp_td_target(&omega, &target, &b, &[0.5], 0.9).unwrap();
    assert!((y[0] - 2.3).abs() < 1e-6, "{y:?}");
    let g = goal_td_target(&target, &b, &[0.5], 0.9).unwrap();
    assert!((g[0] - 5.0).abs() < 1e-6);
    let bt = one_step_batch(&sp, 0.5, true);
    assert_eq!(exp_td_target(&omega, &target, &bt, &[0.5], 0.9).unwrap(), vec![0.5]);
}

#[test]
fn exp_loss_one_step_example() {
    let sp = spec(1, 2, 2);
    let mut omega = JointQFunction::new(Role::Exploration, &sp, MixerKind::Vdn, 4, 4, &mut Rng::new(1));
    let target = JointQFunction::new(Role::Target, &sp, MixerKind::Vdn, 4, 4, &mut Rng::new(2));
    pin_head(&mut omega, &[0.0, 0.0]);
    let b = one_step_batch(&sp, 1.0, true);
    let out = exp_td_loss(&omega, &target, &b, &[1.045], 0.99).unwrap();
    assert!((out.loss - 1.045f32 * 1.045).abs() < 1e-6);
}

#[test]
fn exp_target_equals_goal_target_when_selector_matches() {
    let sp = spec(2, 3, 3);
    let mut rng = Rng::new(5);
    let target = JointQFunction::new(Role::Target, &sp, MixerKind::Qmix, 8, 8, &mut rng);
    let omega = target.clone_as(Role::Exploration);
    let eps: Vec<_> = (0..4).map(|k| random_episode(&sp, 2 + k, k % 2 == 0, &mut rng)).collect();
    let b = MiniBatch::from_episodes(&eps.iter().collect::<Vec<_>>());
    let r: Vec<f32> = b.rewards.iter().map(|v| v + 0.3).collect();
    assert_eq!(exp_td_target(&omega, &target, &b, &r, 0.9).unwrap(), goal_td_target(&target, &b, &r, 0.9).unwrap());
}

#[test]
fn decoupled_target_never_exceeds_target_max() {
    let sp = spec(1, 3, 4);
    let mut rng = Rng::new(6);
    for _ in 0..20 {
        let target = JointQFunction::new(Role::Target, &sp, MixerKind::Vdn, 8, 8, &mut rng);
        let omega = JointQFunction::new(Role::Exploration, &sp, MixerKind::Vdn, 8, 8, &mut rng);
        let eps: Vec<_> = (0..3).map(|_| random_episode(&sp, 5, false, &mut rng)).collect();
        let b = MiniBatch::from_episodes(&eps.iter().collect::<Vec<_>>());
        let e = exp_td_target(&omega, &target, &b, &b.rewards, 0.9).unwrap();
        let g = goal_td_target(&target, &b, &b.rewards, 0.9).unwrap();
        for (x, y) in e.iter().zip(&g) {
            assert!(x <= y);
        }
    }
}

#[test]
fn empty_batch_is_rejected() {
    let sp = spec(1, 2, 2);
    let theta = JointQFunction::new(Role::Goal, &sp, MixerKind::Vdn, 4, 4, &mut Rng::new(1));
    let mut b = one_step_batch(&sp, 1.0, true);
    b.mask = vec![0.0];
    assert!(matches!(goal_td_loss(&theta, &theta, &b, &b.rewards, 0.9), Err(Error::EmptyBatch)));
}

#[test]
fn sync_copies_and_training_leaves_target_alone() {
    let sp = spec(2, 3, 3);
    let mut rng = Rng::new(7);
    let mut theta = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 8, 8, &mut rng);
    let mut target = JointQFunction::new(Role::Target, &sp, MixerKind::Qmix, 8, 8, &mut rng);
    target.sync_from(&theta).unwrap();
    assert_eq!(target.params.fingerprint(), theta.params.fingerprint());
    let obs = vec![vec![0.2; 3]; 2];
    let h = theta.initial_hidden();
    assert_eq!(
        theta.agent_q_step(&obs, &[None, None], &h).unwrap(),
        target.agent_q_step(&obs, &[None, None], &h).unwrap()
    );
    let before = target.params.fingerprint();
    let eps: Vec<_> = (0..2).map(|_| random_episode(&sp, 4, true, &mut rng)).collect();
    let b = MiniBatch::from_episodes(&eps.iter().collect::<Vec<_>>());
    let mut opt = OptimizerState::new(OptimizerKind::Adam, &theta.params);
    for _ in 0..5 {
        let out = goal_td_loss(&theta, &target, &b, &b.rewards, 0.99).unwrap();
        opt.step(&mut theta.params, &out.grads, 1e-3).unwrap();
    }
    assert_eq!(target.params.fingerprint(), before);
    assert_ne!(theta.params.fingerprint(), before);
}

#[test]
fn unrolled_q_matches_stepwise_execution() {
    let sp = spec(2, 3, 3);
    let mut rng = Rng::new(8);
    let q = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 8, 8, &mut rng);
    let e = random_episode(&sp, 6, true, &mut rng);
    let b = MiniBatch::from_episodes(&[&e]);
    let batched = q.batch_q_values(&b, 6).unwrap();
    let mut h = q.initial_hidden();
    let mut last = vec![None, None];
    for t in 0..6 {
        let obs: Vec<Vec<f32>> = (0..2).map(|i| e.obs(t, i).to_vec()).collect();
        let (qs, h2) = q.agent_q_step(&obs, &last, &h).unwrap();
        for i in 0..2 {
            for (a, b) in qs.row(i).iter().zip(batched.row(t * 2 + i)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        h = h2;
        last = e.actions(t).iter().map(|&a| Some(a)).collect();
    }
    let l1 = goal_td_loss(&q, &q, &b, &b.rewards, 0.9).unwrap();
    let l2 = goal_td_loss(&q, &q, &b, &b.rewards, 0.9).unwrap();
    assert_eq!(l1.loss.to_bits(), l2.loss.to_bits());
}

#[test]
fn padding_does_not_change_loss() {
    let sp = spec(2, 3, 2);
    let mut rng = Rng::new(10);
    let q = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 8, 8, &mut rng);
    let t = JointQFunction::new(Role::Target, &sp, MixerKind::Qmix, 8, 8, &mut rng);
    let short = random_episode(&sp, 2, true, &mut rng);
    let long = random_episode(&sp, 7, true, &mut rng);
    let alone = goal_td_loss(&q, &t, &MiniBatch::from_episodes(&[&short]), &[0.0; 2], 0.9).unwrap();
    let b = MiniBatch::from_episodes(&[&short, &long]);
    let y = goal_td_target(&t, &b, &b.rewards, 0.9).unwrap();
    let y_alone = goal_td_target(&t, &MiniBatch::from_episodes(&[&short]), &[0.0; 2], 0.9).unwrap();
    // the short episode's rows are (t, 0) for t < 2
    for k in 0..2 {
        assert!((y[k * 2] - short.reward(k) - (y_alone[k] - 0.0)).abs() < 1e-5);
    }
    assert!(alone.loss.is_finite());
}

#[test]
fn agent_and_mixer_gradients_match_finite_differences() {
    let sp = spec(2, 3, 3);
    let (mut accepted, mut seed) = (0, 100u64);
    while accepted < 10 {
        seed += 1;
        assert!(seed < 300, "too many draws rejected near kinks");
        let mut rng = Rng::new(seed);
        let q = JointQFunction::new(Role::Goal, &sp, MixerKind::Qmix, 5, 4, &mut rng);
        let eps: Vec<_> = (0..2).map(|_| random_episode(&sp, 3, true, &mut rng)).collect();
        let b = MiniBatch::from_episodes(&eps.iter().collect::<Vec<_>>());
        let y: Vec<f32> = (0..b.rewards.len()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let build = |tape: &mut Tape<'_>, p: &_| Ok(strange_marl::marl::td_loss_on(tape, p, &q, &b, &y)?.0);
        let report = check_gradients(&q.params, 1e-3, build).unwrap();
        if report.kink_crossings > 0 {
            continue;
        }
        assert!(report.rel_error < 1e-3, "seed {seed}: {report:?}");
        accepted += 1;
    }
}

#[test]
fn exploration_loss_matches_explicit_target() {
    let sp = spec(2, 3, 3);
    let mut rng = Rng::new(77);
    let omega = JointQFunction::new(Role::Exploration, &sp, MixerKind::Qmix, 6, 4, &mut rng);
    let target = JointQFunction::new(Role::Target, &sp, MixerKind::Qmix, 6, 4, &mut rng);
    let eps: Vec<_> = (0..3).map(|k| random_episode(&sp, 2 + k, k != 1, &mut rng)).collect();
    let b = MiniBatch::from_episodes(&eps.iter().collect::<Vec<_>>());
    let r: Vec<f32> = (0..b.rewards.len()).map(|_| rng.uniform_range(0.0, 1.0)).collect();
    let y = exp_td_target(&omega, &target, &b, &r, 0.9).unwrap();
    let mut tape = Tape::new();
    let p = tape.bind(&omega.params);
    let (loss, _) = strange_marl::marl::td_loss_on(&mut tape, &p, &omega, &b, &y).unwrap();
    let grads = tape.backward(loss).unwrap().for_bound(&p);
    let out = exp_td_loss(&omega, &target, &b, &r, 0.9).unwrap();
    assert_eq!(out.loss.to_bits(), tape.value(loss).item().to_bits());
    for (a, e) in out.grads.iter().zip(&grads) {
        assert_eq!(a, e);
    }
}
