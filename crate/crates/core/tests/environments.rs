use pkmdp::env::{
    self, check_measurability, check_specs_equivalence, check_variant_equivalence, exact_return, exact_return_model,
    load_unload, make_environment, perturb_unknown_dynamics, sample_episode, EnvName,
};
use pkmdp::model::{CondTable, FiniteSpace, FullModel};
use pkmdp::oracle::{random_known_model, random_policy};
use pkmdp::Policy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_variant_matches_the_world_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for name in EnvName::ALL {
        let world = name.world();
        let specs = env::all_variants(name).unwrap();
        for _ in 0..20 {
            let policy = random_policy(&mut rng, world.n_obs, world.n_actions, 2.0);
            let truth = world.exact_return(&policy, 30).unwrap();
            for spec in &specs {
                let r = exact_return(spec, &policy, 30).unwrap();
                assert!((r - truth).abs() < 1e-9, "{name} v{}: {r} vs {truth}", spec.variant);
            }
        }
    }
}

#[test]
fn uniform_policy_equivalence_report() {
    for name in EnvName::ALL {
        let spec = make_environment(name, 1).unwrap();
        let report = check_variant_equivalence(name, &spec.uniform_policy(), 10).unwrap();
        assert!(report.is_consistent(), "{report}");
        assert_eq!(report.returns.len(), 3);
        assert!(report.ensure().is_ok());
    }
}

#[test]
fn corrupted_variant_is_named() {
    for name in EnvName::ALL {
        let mut specs = env::all_variants(name).unwrap();
        perturb_unknown_dynamics(&mut specs[1].full_model, 0.2);
        let report = check_specs_equivalence(&specs, &specs[0].uniform_policy(), 20, 1e-9).unwrap();
        assert!(!report.is_consistent());
        assert_eq!(report.suspects(), vec![2], "{report}");
        let err = report.ensure().unwrap_err().to_string();
        assert!(err.contains("[2]"), "{err}");
    }
}

#[test]
fn first_slice_of_load_unload_has_no_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for v in 1..=3 {
        let spec = make_environment(EnvName::LoadUnload, v).unwrap();
        for _ in 0..5 {
            let policy = random_policy(&mut rng, 14, 4, 3.0);
            assert_eq!(exact_return(&spec, &policy, 1).unwrap(), 0.0);
        }
    }
}

#[test]
fn cycling_policy_approaches_step_through_count() {
    let world = load_unload::world();
    let policy = load_unload::cycling_policy(40.0);
    let delivered: f64 = world.step_through(&policy.greedy_actions(), 100).unwrap().iter().sum();
    assert_eq!(delivered, 8.0);
    for v in 1..=3 {
        let spec = make_environment(EnvName::LoadUnload, v).unwrap();
        let r = exact_return(&spec, &policy, 100).unwrap();
        assert!((r - delivered).abs() < 1e-6, "variant {v}: {r}");
    }
}

#[test]
fn interface_measurability() {
    let cases = [
        (EnvName::LoadUnload, 1, true),
        (EnvName::LoadUnload, 2, true),
        (EnvName::LoadUnload, 3, true),
        (EnvName::CloggedPipe, 1, true),
        (EnvName::CloggedPipe, 2, false),
        (EnvName::CloggedPipe, 3, false),
    ];
    for (name, v, expected) in cases {
        let spec = make_environment(name, v).unwrap();
        let report = check_measurability(&spec.full_model);
        assert_eq!(report.is_measurable(), expected, "{name} v{v}");
    }
}

#[test]
fn recorded_interface_follows_observation_and_action() {
    for v in 1..=3 {
        let spec = make_environment(EnvName::LoadUnload, v).unwrap();
        let map = check_measurability(&spec.full_model).interface;
        for seed in 0..20 {
            let ep = sample_episode(&spec, &spec.uniform_policy(), 40, seed).unwrap();
            for step in ep.debug_trace.as_ref().unwrap() {
                assert_eq!(map[step.o * 4 + step.a], Some((step.y, step.z)));
            }
        }
    }
}

#[test]
fn sampling_is_deterministic_and_consistent() {
    let spec = make_environment(EnvName::CloggedPipe, 2).unwrap();
    let policy = random_policy(&mut ChaCha8Rng::seed_from_u64(102), 12, 8, 1.0);
    let a = sample_episode(&spec, &policy, 50, 9).unwrap();
    let b = sample_episode(&spec, &policy, 50, 9).unwrap();
    assert_eq!(a, b);
    let trace = a.debug_trace.as_ref().unwrap();
    assert_eq!(trace.len(), 50);
    assert_eq!(a.y_seq, trace.iter().map(|s| s.y).collect::<Vec<_>>());
    assert_eq!(a.z_seq, trace.iter().map(|s| s.z).collect::<Vec<_>>());
    assert_ne!(a, sample_episode(&spec, &policy, 50, 10).unwrap());
}

#[test]
fn single_action_world_ignores_the_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut known = random_known_model(&mut rng, 3);
    known.a_space = FiniteSpace::singleton("a");
    let (x, y, o, a) = (known.x_space.clone(), known.y_space.clone(), known.o_space.clone(), known.a_space.clone());
    known.p_x = CondTable::from_fn("p_x", &x, &[&x, &y, &a], |_, r| r.fill(1.0 / r.len() as f64));
    known.p_z = CondTable::from_fn("p_z", &known.z_space.clone(), &[&x, &a], |_, r| r.fill(1.0 / r.len() as f64));
    let model = random_full_model(&mut rng, known).validated().unwrap();
    let p1 = Policy::uniform(o.size(), 1);
    let p2 = Policy::from_logits(o.size(), 1, vec![5.0; o.size()]).unwrap();
    assert_eq!(exact_return_model(&model, &p1, 5).unwrap(), exact_return_model(&model, &p2, 5).unwrap());
}

fn random_row<R: Rng>(rng: &mut R, row: &mut [f64]) {
    row.iter_mut().for_each(|p| *p = rng.gen_range(0.05..1.0));
    let t: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= t);
}

fn random_full_model<R: Rng>(rng: &mut R, known: pkmdp::KnownModel) -> FullModel {
    let s = FiniteSpace::new("s", rng.gen_range(1..=3)).unwrap();
    FullModel {
        p_s0: CondTable::from_fn("p_s0", &s, &[], |_, r| random_row(rng, r)),
        p_s: CondTable::from_fn("p_s", &s, &[&s, &known.z_space], |_, r| random_row(rng, r)),
        p_y: CondTable::from_fn("p_y", &known.y_space, &[&s], |_, r| random_row(rng, r)),
        r_s: (0..s.size()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        s_space: s,
        known,
    }
}

/// Expected return by summing over every length-2 trajectory.
fn enumerate_two_slices(m: &FullModel, probs: &[f64]) -> f64 {
    let k = &m.known;
    let n_a = k.n_actions();
    let mut total = 0.0;
    for s0 in 0..m.s_space.size() {
        for y0 in 0..k.y_space.size() {
            for x0 in 0..k.x_space.size() {
                for o0 in 0..k.o_space.size() {
                    for a0 in 0..n_a {
                        for z0 in 0..k.z_space.size() {
                            let p0 = m.p_s0.prob(&[], s0)
                                * m.p_y.prob(&[s0], y0)
                                * k.p_x0.prob(&[y0], x0)
                                * k.p_o.prob(&[x0], o0)
                                * probs[o0 * n_a + a0]
                                * k.p_z.prob(&[x0, a0], z0);
                            if p0 == 0.0 {
                                continue;
                            }
                            for s1 in 0..m.s_space.size() {
                                for y1 in 0..k.y_space.size() {
                                    for x1 in 0..k.x_space.size() {
                                        let p1 = p0
                                            * m.p_s.prob(&[s0, z0], s1)
                                            * m.p_y.prob(&[s1], y1)
                                            * k.p_x.prob(&[x0, y1, a0], x1);
                                        total += p1 * (m.r_s[s0] + k.r_x[x0] + m.r_s[s1] + k.r_x[x1]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    total
}

#[test]
fn exact_return_matches_trajectory_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..30 {
        let known = random_known_model(&mut rng, 3);
        let model = random_full_model(&mut rng, known).validated().unwrap();
        let uniform = Policy::uniform(model.known.n_obs(), model.known.n_actions());
        for policy in [uniform.clone(), random_policy(&mut rng, uniform.n_obs(), uniform.n_actions(), 2.0)] {
            let exact = exact_return_model(&model, &policy, 2).unwrap();
            let brute = enumerate_two_slices(&model, &policy.action_probs());
            assert!((exact - brute).abs() < 1e-12, "{exact} vs {brute}");
        }
    }
}

#[test]
fn monte_carlo_mean_agrees_with_exact_return() {
    let cases = [(EnvName::LoadUnload, 2u8, 105u64), (EnvName::CloggedPipe, 3, 106), (EnvName::CloggedPipe, 1, 107)];
    for (name, v, seed) in cases {
        let spec = make_environment(name, v).unwrap();
        let k = spec.known();
        let policy = random_policy(&mut ChaCha8Rng::seed_from_u64(seed), k.n_obs(), k.n_actions(), 1.0);
        let horizon = 30;
        let n = 100_000u64;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for i in 0..n {
            let ep = sample_episode(&spec, &policy, horizon, seed * 1_000_000 + i).unwrap();
            let total = ep.unknown_return + ep.known_return_from_trace().unwrap();
            sum += total;
            sum_sq += total * total;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = exact_return(&spec, &policy, horizon).unwrap();
        assert!((mean - exact).abs() <= 3.0 * se, "{name} v{v}: {mean} vs {exact} (se {se})");
    }
}

#[test]
fn planning_model_matches_world() {
    let model = load_unload::planning_model();
    let world = load_unload::world();
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for _ in 0..5 {
        let policy = random_policy(&mut rng, 14, 4, 2.0);
        let a = exact_return_model(&model, &policy, 40).unwrap();
        let b = world.exact_return(&policy, 40).unwrap();
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn returns_stay_within_horizon() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for name in EnvName::ALL {
        for spec in env::all_variants(name).unwrap() {
            let k = spec.known();
            let policy = random_policy(&mut rng, k.n_obs(), k.n_actions(), 4.0);
            let r = exact_return(&spec, &policy, 25).unwrap();
            assert!((0.0..=25.0).contains(&r));
        }
    }
}

#[test]
fn names_parse() {
    assert_eq!("load_unload".parse::<EnvName>().unwrap(), EnvName::LoadUnload);
    assert_eq!("clogged_pipe".parse::<EnvName>().unwrap(), EnvName::CloggedPipe);
    assert!("maze".parse::<EnvName>().is_err());
    assert_eq!(EnvName::CloggedPipe.default_episodes(), 50);
}
