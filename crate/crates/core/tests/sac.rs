mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use sqnrec::data::{ReplayTuple, RewardSchema};
use sqnrec::encoder::{EncoderKind, SeqRef};
use sqnrec::model::{DualHeadModel, Network, Role};
use sqnrec::nn::Parameters;
use sqnrec::train::{
    compute_gradients, Batch, CriticWeight, LossComponents, Objective, SacSettings, StepRngs,
    SupervisedTerm, TrainConfig, Trainer, Variant,
};

fn run(model: &DualHeadModel, role: Role, tuples: &[ReplayTuple], obj: &Objective) -> (Network, LossComponents) {
    let mut d = ChaCha8Rng::seed_from_u64(1);
    let mut n = ChaCha8Rng::seed_from_u64(2);
    compute_gradients(
        model,
        role,
        &Batch::from_tuples(tuples),
        &RewardSchema::default(),
        obj,
        StepRngs { dropout: &mut d, negatives: &mut n },
    )
    .unwrap()
}

fn actor(weight: CriticWeight, td_weight: f64) -> Objective {
    Objective {
        supervised: SupervisedTerm::Actor { weight, plus_cross_entropy: false },
        td_weight,
        negatives: 0,
    }
}

fn all_zero(net: &sqnrec::heads::LinearHead) -> bool {
    net.weight.iter().chain(net.bias.iter()).all(|&x| x == 0.0)
}

fn max_diff(a: &Network, b: &Network) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.data.iter().zip(y.data.iter()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

#[test]
fn actor_term_sends_no_gradient_to_the_critic() {
    let tuples = tiny_tuples(4, &RewardSchema::default());
    for kind in [EncoderKind::Recurrent, EncoderKind::SelfAttention] {
        let model = tiny_model(kind, 0);
        for clip in [false, true] {
            let (g, l) = run(&model, Role::AOnline, &tuples, &actor(CriticWeight::Critic { clip_at_zero: clip }, 0.0));
            assert!(all_zero(&g.q_head), "{kind:?} clip {clip}");
            assert!(l.actor.is_some());
        }
        let literal = SacSettings { threshold: Some(0), actor_plus_cross_entropy: true, clip_at_zero: false };
        let (g, l) = run(&model, Role::BOnline, &tuples, &literal.objective(1));
        assert!(all_zero(&g.q_head));
        assert_eq!(l.td, None);
    }
}

#[test]
fn critic_weight_is_the_detached_q_value() {
    let tuples = tiny_tuples(4, &RewardSchema::default());
    let model = tiny_model(EncoderKind::Recurrent, 3);
    let net = &model.copies[0];
    for t in &tuples {
        let s = net.encoder.encode_batch(&[SeqRef::new(&t.state, t.state_len)]).unwrap();
        let q = net.q_batch(s.view()).unwrap()[[0, t.action]];
        let one = std::slice::from_ref(t);
        let (g_critic, l_critic) = run(&model, Role::AOnline, one, &actor(CriticWeight::Critic { clip_at_zero: false }, 0.0));
        let (g_const, l_const) = run(&model, Role::AOnline, one, &actor(CriticWeight::Constant(q), 0.0));
        assert!(max_diff(&g_critic, &g_const) < 1e-12);
        assert!((l_critic.loss - l_const.loss).abs() < 1e-12);
        assert!((l_critic.loss - q * l_critic.ce.unwrap()).abs() < 1e-12);

        let (g_clip, _) = run(&model, Role::AOnline, one, &actor(CriticWeight::Critic { clip_at_zero: true }, 0.0));
        let (g_expect, _) = run(&model, Role::AOnline, one, &actor(CriticWeight::Constant(q.max(0.0)), 0.0));
        assert!(max_diff(&g_clip, &g_expect) < 1e-12);
    }
}

#[test]
fn unit_weight_actor_matches_sqn() {
    let tuples = tiny_tuples(4, &RewardSchema::default());
    let model = tiny_model(EncoderKind::SelfAttention, 2);
    for role in [Role::AOnline, Role::BOnline] {
        let (g_sqn, l_sqn) = run(&model, role, &tuples, &Objective::sqn());
        let (g_act, l_act) = run(&model, role, &tuples, &actor(CriticWeight::Constant(1.0), 1.0));
        assert!(max_diff(&g_sqn, &g_act) < 1e-14);
        assert!((l_sqn.loss - l_act.loss).abs() < 1e-14);
    }
}

#[test]
fn zeroed_critic_zeroes_the_actor_term() {
    let tuples = tiny_tuples(4, &RewardSchema::default());
    let mut model = tiny_model(EncoderKind::Recurrent, 1);
    model.copies[0].q_head.weight.fill(0.0);
    model.copies[0].q_head.bias.fill(0.0);
    let (g, l) = run(&model, Role::AOnline, &tuples, &actor(CriticWeight::Critic { clip_at_zero: false }, 0.0));
    assert_eq!(l.actor, Some(0.0));
    assert_eq!(l.loss, 0.0);
    assert!(g.tensors().iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
}

#[test]
fn threshold_boundary() {
    let s = SacSettings { threshold: Some(3), actor_plus_cross_entropy: false, clip_at_zero: false };
    for t in 0..=3 {
        assert_eq!(s.objective(t), Objective::sqn(), "t = {t}");
    }
    let after = s.objective(4);
    assert_eq!(after, actor(CriticWeight::Critic { clip_at_zero: false }, 1.0));
    let never = SacSettings { threshold: None, ..s };
    assert_eq!(never.objective(u64::MAX), Objective::sqn());
}

fn trained(variant: Variant, threshold: Option<u64>, steps: u64) -> Trainer {
    let set = random_sessions(30, 8, 3, 7, 5);
    let mut encoder = tiny_config(EncoderKind::Recurrent);
    encoder.n_items = 8;
    let config = TrainConfig {
        batch_size: 16,
        max_updates: steps,
        eval_every: steps,
        eval_max_events: Some(20),
        sac_threshold: threshold,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(variant, config, &encoder, RewardSchema::default(), &set, set.clone()).unwrap();
    t.run().unwrap();
    t
}

#[test]
fn never_switching_is_sqn() {
    let sqn = trained(Variant::Sqn, None, 60);
    for threshold in [None, Some(60), Some(1000)] {
        let sac = trained(Variant::Sac, threshold, 60);
        assert_eq!(sac.model, sqn.model, "{threshold:?}");
    }
    let switched = trained(Variant::Sac, Some(30), 60);
    assert_ne!(switched.model, sqn.model);
}
