use super::*;
use proptest::prelude::*;
use rand::Rng;

fn cfg() -> Arc<EnvConfig> {
    Arc::new(EnvConfig::default())
}

fn rules(c: Condition) -> Arc<RuleSet> {
    Arc::new(RuleSet::new(c, &EnvConfig::default()))
}

fn agent(x: usize, y: usize, o: Orientation) -> AgentState {
    fresh_agent(Pos::new(x, y), o)
}

fn berry(x: usize, y: usize, b: BerryType) -> BerrySite {
    BerrySite { position: Pos::new(x, y), berry: b, present: true }
}

fn scenario(c: Condition, agents: Vec<AgentState>, berries: Vec<BerrySite>) -> WorldState {
    WorldState::from_parts(cfg(), rules(c), 0, agents, berries, 7).unwrap()
}

fn noops(n: usize) -> Vec<Action> {
    vec![Action::NoOp; n]
}

#[test]
fn reset_is_deterministic() {
    let a = WorldState::reset(cfg(), rules(Condition::Important), 42).unwrap();
    let b = WorldState::reset(cfg(), rules(Condition::Important), 42).unwrap();
    assert_eq!(a, b);
    let c = WorldState::reset(cfg(), rules(Condition::Important), 43).unwrap();
    assert_ne!(a, c);
}

#[test]
fn reset_default_population() {
    let s = WorldState::reset(cfg(), rules(Condition::ImportantPlusSilly), 1).unwrap();
    assert_eq!(s.agents().len(), 8);
    assert!(s.agents().iter().all(|a| !a.marked && !a.poisoned && a.pending_poison.is_empty()));
    assert_eq!(s.timestep(), 0);
    assert_eq!(s.berries().len(), 48);
    assert_eq!(s.present_berries(), 48);
}

#[test]
fn reset_assigns_two_sites_per_type() {
    for seed in 0..20 {
        let s = WorldState::reset(cfg(), rules(Condition::None), seed).unwrap();
        let mut counts = vec![0; 24];
        for b in s.berries() {
            counts[b.berry as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2), "{counts:?}");
    }
}

#[test]
fn reset_places_entities_on_distinct_cells() {
    let s = WorldState::reset(cfg(), rules(Condition::None), 9).unwrap();
    let mut cells = std::collections::HashSet::new();
    for a in s.agents() {
        assert!(cells.insert(a.position));
    }
    for b in s.berries() {
        assert!(cells.insert(b.position));
    }
}

#[test]
fn reset_rejects_infeasible() {
    let small = EnvConfig { grid_width: 4, grid_height: 4, berry_sites: 10, ..EnvConfig::default() };
    let rules = Arc::new(RuleSet::new(Condition::None, &small));
    let err = WorldState::reset(Arc::new(small), rules, 0).unwrap_err();
    assert_eq!(err, EnvError::Infeasible { needed: 18, cells: 16 });
}

#[test]
fn reset_rejects_mismatched_rules() {
    let mut r = RuleSet::new(Condition::Important, &EnvConfig::default());
    r.wrongful.insert(5);
    assert!(WorldState::reset(cfg(), Arc::new(r), 0).is_err());
}

#[test]
fn eating_permitted_berry_pays_four() {
    let mut s = scenario(Condition::Important, vec![agent(5, 5, Orientation::North)], vec![berry(6, 5, 3)]);
    let out = s.step(&[Action::MoveRight]).unwrap();
    assert_eq!(out.rewards, vec![4]);
    assert_eq!(out.events, vec![EnvEvent::BerryEaten { player: 0, berry: 3, wrongful: false, reward: 4 }]);
    assert!(!s.agents()[0].marked);
    assert_eq!(s.berry_at(Pos::new(6, 5)), None);
}

#[test]
fn poisoned_eater_gets_one() {
    let mut a = agent(5, 5, Orientation::North);
    a.poisoned = true;
    let mut s = scenario(Condition::None, vec![a], vec![berry(5, 4, 3)]);
    let out = s.step(&[Action::MoveUp]).unwrap();
    assert_eq!(out.rewards, vec![1]);
}

#[test]
fn wrongful_eat_marks_and_schedules_poison() {
    let mut s = scenario(Condition::Important, vec![agent(5, 5, Orientation::North)], vec![berry(5, 6, 0)]);
    let out = s.step(&[Action::MoveDown]).unwrap();
    assert_eq!(out.rewards, vec![4]);
    assert_eq!(
        out.events,
        vec![
            EnvEvent::BerryEaten { player: 0, berry: 0, wrongful: true, reward: 4 },
            EnvEvent::MarkApplied { player: 0 },
        ]
    );
    assert!(s.agents()[0].marked);
    assert_eq!(s.agents()[0].pending_poison, vec![101]);
}

#[test]
fn poisonous_eat_in_norm_free_condition_does_not_mark() {
    let mut s = scenario(Condition::None, vec![agent(5, 5, Orientation::North)], vec![berry(5, 6, 0)]);
    let out = s.step(&[Action::MoveDown]).unwrap();
    assert_eq!(out.events, vec![EnvEvent::BerryEaten { player: 0, berry: 0, wrongful: false, reward: 4 }]);
    assert!(!s.agents()[0].marked);
    assert_eq!(s.agents()[0].pending_poison, vec![101]);
}

#[test]
fn silly_berry_marks_without_poison() {
    let mut s = scenario(Condition::ImportantPlusSilly, vec![agent(5, 5, Orientation::North)], vec![berry(4, 5, 1)]);
    s.step(&[Action::MoveLeft]).unwrap();
    assert!(s.agents()[0].marked);
    assert!(s.agents()[0].pending_poison.is_empty());
}

#[test]
fn second_wrongful_eat_keeps_single_mark() {
    let mut s = scenario(
        Condition::ImportantPlusSilly,
        vec![agent(5, 5, Orientation::North)],
        vec![berry(6, 5, 1), berry(7, 5, 1)],
    );
    s.step(&[Action::MoveRight]).unwrap();
    let out = s.step(&[Action::MoveRight]).unwrap();
    assert_eq!(out.events, vec![EnvEvent::BerryEaten { player: 0, berry: 1, wrongful: true, reward: 4 }]);
    assert!(s.agents()[0].marked);
}

#[test]
fn beam_on_marked_target_transfers_bounty() {
    let mut target = agent(5, 4, Orientation::South);
    target.marked = true;
    let mut s = scenario(Condition::Important, vec![agent(5, 6, Orientation::North), target], vec![]);
    let out = s.step(&[Action::FireBeam, Action::NoOp]).unwrap();
    assert_eq!(out.rewards, vec![15, -35]);
    assert_eq!(
        out.events,
        vec![
            EnvEvent::PunishHit { punisher: 0, target: 1, target_was_marked: true },
            EnvEvent::MarkRemoved { player: 1 },
        ]
    );
    assert!(!s.agents()[1].marked);
    assert_eq!(out.rewards.iter().sum::<i32>(), -20);
}

#[test]
fn beam_on_unmarked_target_costs_both() {
    let mut s = scenario(
        Condition::Important,
        vec![agent(5, 6, Orientation::North), agent(5, 4, Orientation::South)],
        vec![],
    );
    let out = s.step(&[Action::FireBeam, Action::NoOp]).unwrap();
    assert_eq!(out.rewards, vec![-20, -35]);
    assert_eq!(out.events, vec![EnvEvent::PunishHit { punisher: 0, target: 1, target_was_marked: false }]);
    assert_eq!(out.rewards.iter().sum::<i32>(), -55);
}

#[test]
fn missed_beam_is_free_unless_configured() {
    let mut s = scenario(Condition::None, vec![agent(5, 6, Orientation::North)], vec![]);
    let out = s.step(&[Action::FireBeam]).unwrap();
    assert_eq!(out.rewards, vec![0]);
    assert_eq!(out.events, vec![EnvEvent::BeamMissed { punisher: 0 }]);

    let charged = Arc::new(EnvConfig { charge_beam_on_miss: true, ..EnvConfig::default() });
    let mut s = WorldState::from_parts(
        charged.clone(),
        Arc::new(RuleSet::new(Condition::None, &charged)),
        0,
        vec![agent(5, 6, Orientation::North)],
        vec![],
        0,
    )
    .unwrap();
    assert_eq!(s.step(&[Action::FireBeam]).unwrap().rewards, vec![-20]);
}

#[test]
fn beam_geometry() {
    // adjacent
    let s = scenario(Condition::None, vec![agent(5, 5, Orientation::East), agent(6, 5, Orientation::East)], vec![]);
    assert_eq!(s.resolve_beam(0), Some(1));
    // nearer of two on the ray
    let s = scenario(
        Condition::None,
        vec![agent(5, 5, Orientation::East), agent(9, 5, Orientation::East), agent(7, 5, Orientation::East)],
        vec![],
    );
    assert_eq!(s.resolve_beam(0), Some(2));
    // just beyond range (default range 5)
    let s = scenario(Condition::None, vec![agent(5, 5, Orientation::East), agent(11, 5, Orientation::East)], vec![]);
    assert_eq!(s.resolve_beam(0), None);
    let s = scenario(Condition::None, vec![agent(5, 5, Orientation::East), agent(10, 5, Orientation::East)], vec![]);
    assert_eq!(s.resolve_beam(0), Some(1));
    // stops at the border, ignores berries, only along the facing ray
    let s = scenario(
        Condition::None,
        vec![agent(1, 0, Orientation::North), agent(2, 0, Orientation::North)],
        vec![berry(1, 1, 2)],
    );
    assert_eq!(s.resolve_beam(0), None);
    let s = scenario(
        Condition::None,
        vec![agent(1, 5, Orientation::South), agent(1, 7, Orientation::North)],
        vec![berry(1, 6, 2)],
    );
    assert_eq!(s.resolve_beam(0), Some(1));
    assert_eq!(s.resolve_beam(1), Some(0));
}

#[test]
fn beams_resolve_against_pre_move_positions() {
    let mut s = scenario(
        Condition::None,
        vec![agent(5, 5, Orientation::East), agent(6, 5, Orientation::East)],
        vec![],
    );
    let out = s.step(&[Action::FireBeam, Action::MoveUp]).unwrap();
    assert_eq!(out.rewards, vec![-20, -35]);
    assert_eq!(s.agents()[1].position, Pos::new(6, 4));
}

#[test]
fn two_punishers_one_marked_target() {
    let mut target = agent(5, 5, Orientation::North);
    target.marked = true;
    let mut s = scenario(
        Condition::Important,
        vec![agent(5, 7, Orientation::North), agent(5, 3, Orientation::South), target],
        vec![],
    );
    let out = s.step(&[Action::FireBeam, Action::FireBeam, Action::NoOp]).unwrap();
    // one punisher collects the bounty, the other pays for an unmarked hit
    let mut shooter_rewards = vec![out.rewards[0], out.rewards[1]];
    shooter_rewards.sort();
    assert_eq!(shooter_rewards, vec![-20, 15]);
    assert_eq!(out.rewards[2], -70);
    assert!(!s.agents()[2].marked);
}

#[test]
fn absolute_movement_and_rotation() {
    let mut s = scenario(Condition::None, vec![agent(5, 5, Orientation::East)], vec![]);
    s.step(&[Action::MoveUp]).unwrap();
    assert_eq!(s.agents()[0].position, Pos::new(5, 4));
    assert_eq!(s.agents()[0].orientation, Orientation::East);
    s.step(&[Action::RotateLeft]).unwrap();
    assert_eq!(s.agents()[0].orientation, Orientation::North);
    assert_eq!(s.agents()[0].position, Pos::new(5, 4));
    s.step(&[Action::RotateRight]).unwrap();
    s.step(&[Action::RotateRight]).unwrap();
    assert_eq!(s.agents()[0].orientation, Orientation::South);
}

#[test]
fn walls_block_movement() {
    let mut s = scenario(Condition::None, vec![agent(0, 0, Orientation::North)], vec![]);
    s.step(&[Action::MoveUp]).unwrap();
    s.step(&[Action::MoveLeft]).unwrap();
    assert_eq!(s.agents()[0].position, Pos::new(0, 0));
}

#[test]
fn contested_cell_goes_to_exactly_one() {
    let mut winners = [0; 2];
    for seed in 0..200 {
        let mut s = WorldState::from_parts(
            cfg(),
            rules(Condition::None),
            0,
            vec![agent(4, 5, Orientation::North), agent(6, 5, Orientation::North)],
            vec![berry(5, 5, 3)],
            seed,
        )
        .unwrap();
        let out = s.step(&[Action::MoveRight, Action::MoveLeft]).unwrap();
        let at = s.agent_at(Pos::new(5, 5)).unwrap();
        winners[at] += 1;
        assert_eq!(out.rewards[at], 4);
        assert_eq!(out.rewards[1 - at], 0);
        let loser = &s.agents()[1 - at];
        assert_eq!(loser.position, if at == 0 { Pos::new(6, 5) } else { Pos::new(4, 5) });
    }
    assert!(winners[0] > 60 && winners[1] > 60, "{winners:?}");
}

#[test]
fn swap_through_is_forbidden() {
    let mut s = scenario(Condition::None, vec![agent(4, 5, Orientation::North), agent(5, 5, Orientation::North)], vec![]);
    s.step(&[Action::MoveRight, Action::MoveLeft]).unwrap();
    assert_eq!(s.agents()[0].position, Pos::new(4, 5));
    assert_eq!(s.agents()[1].position, Pos::new(5, 5));
}

#[test]
fn poison_activates_after_delay() {
    let mut s = scenario(Condition::None, vec![agent(5, 5, Orientation::North)], vec![berry(6, 5, 0)]);
    for _ in 0..39 {
        s.step(&[Action::NoOp]).unwrap();
    }
    let out = s.step(&[Action::MoveRight]).unwrap();
    assert_eq!(s.timestep(), 40);
    assert!(matches!(out.events[0], EnvEvent::BerryEaten { berry: 0, .. }));
    let mut activated_at = None;
    while s.timestep() < 200 {
        let out = s.step(&[Action::NoOp]).unwrap();
        if out.events.contains(&EnvEvent::PoisonActivated { player: 0 }) {
            activated_at = Some(s.timestep());
        }
        assert_eq!(s.agents()[0].poisoned, s.timestep() >= 140);
    }
    assert_eq!(activated_at, Some(140));
}

#[test]
fn double_dose_poisons_at_first_activation() {
    let mut s = scenario(
        Condition::None,
        vec![agent(5, 5, Orientation::North)],
        vec![berry(6, 5, 0), berry(7, 5, 0)],
    );
    // one step at a time; eat at t=10 and t=20
    let mut activations = Vec::new();
    while s.timestep() < 300 {
        let a = match s.timestep() + 1 {
            10 | 20 => Action::MoveRight,
            _ => Action::NoOp,
        };
        let out = s.step(&[a]).unwrap();
        for e in out.events {
            if e == (EnvEvent::PoisonActivated { player: 0 }) {
                activations.push(s.timestep());
            }
        }
        assert_eq!(s.agents()[0].poisoned, s.timestep() >= 110, "t={}", s.timestep());
        assert!(s.agents()[0].pending_poison.iter().all(|&p| p > s.timestep()));
    }
    assert_eq!(activations, vec![110]);
}

#[test]
fn already_poisoned_eater_stays_poisoned() {
    let mut a = agent(5, 5, Orientation::North);
    a.poisoned = true;
    let mut s = scenario(Condition::None, vec![a], vec![berry(6, 5, 0)]);
    let out = s.step(&[Action::MoveRight]).unwrap();
    assert_eq!(out.rewards, vec![1]);
    assert!(s.agents()[0].poisoned);
    assert!(s.agents()[0].pending_poison.is_empty());
}

#[test]
fn respawn_certain_and_blocked_under_agent() {
    let one = Arc::new(EnvConfig { respawn_prob: 1.0, ..EnvConfig::default() });
    let r = Arc::new(RuleSet::new(Condition::None, &one));
    let mut s = WorldState::from_parts(one, r, 0, vec![agent(5, 5, Orientation::North)], vec![berry(6, 5, 2)], 0).unwrap();
    s.step(&[Action::MoveRight]).unwrap();
    // the agent stands on the site: no regrowth yet
    assert_eq!(s.present_berries(), 0);
    s.step(&[Action::MoveRight]).unwrap();
    assert_eq!(s.berry_at(Pos::new(6, 5)), Some(2));
}

#[test]
fn respawn_rate_matches_probability() {
    let cfg = Arc::new(EnvConfig { respawn_prob: 0.05, ..EnvConfig::default() });
    let r = Arc::new(RuleSet::new(Condition::None, &cfg));
    let sites: Vec<BerrySite> = (0..50)
        .map(|i| BerrySite { position: Pos::new(i % 33, 1 + i / 33), berry: (i % 24) as BerryType, present: false })
        .collect();
    let mut regrown = 0usize;
    let rounds = 2000;
    for seed in 0..rounds {
        let mut s = WorldState::from_parts(cfg.clone(), r.clone(), 0, vec![agent(0, 0, Orientation::North)], sites.clone(), seed)
            .unwrap();
        s.respawn_berries();
        regrown += s.present_berries();
    }
    let rate = regrown as f64 / (rounds as f64 * 50.0);
    assert!((rate - 0.05).abs() <= 0.003, "rate {rate}");
}

#[test]
fn noop_world_is_silent() {
    let mut s = scenario(
        Condition::Important,
        vec![agent(0, 0, Orientation::North), agent(10, 10, Orientation::North)],
        vec![berry(20, 5, 0)],
    );
    for _ in 0..50 {
        let out = s.step(&noops(2)).unwrap();
        assert_eq!(out.rewards, vec![0, 0]);
        assert!(out.events.is_empty());
    }
}

#[test]
fn finished_episode_rejects_step() {
    let short = Arc::new(EnvConfig { episode_length: 3, ..EnvConfig::default() });
    let r = Arc::new(RuleSet::new(Condition::None, &short));
    let mut s = WorldState::reset(short, r, 0).unwrap();
    for _ in 0..3 {
        s.step(&noops(8)).unwrap();
    }
    assert!(s.is_finished());
    assert_eq!(s.step(&noops(8)).unwrap_err(), EnvError::EpisodeFinished(3));
}

#[test]
fn wrong_action_count_rejected() {
    let mut s = WorldState::reset(cfg(), rules(Condition::None), 0).unwrap();
    assert_eq!(s.step(&noops(3)).unwrap_err(), EnvError::WrongActionCount { expected: 8, got: 3 });
}

fn random_actions(n: usize, seed: u64) -> impl FnMut() -> Vec<Action> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move || (0..n).map(|_| Action::ALL[rng.gen_range(0..Action::COUNT)]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_invariants_hold(seed in 0u64..10_000, cond in 0usize..3) {
        let cfg = Arc::new(EnvConfig { episode_length: 150, poison_delay: 7, ..EnvConfig::default() });
        let r = Arc::new(RuleSet::new(Condition::ALL[cond], &cfg));
        let mut s = WorldState::reset(cfg.clone(), r.clone(), seed).unwrap();
        let mut next = random_actions(8, seed ^ 0xabc);
        let layout: Vec<(Pos, BerryType)> = s.berries().iter().map(|b| (b.position, b.berry)).collect();
        while !s.is_finished() {
            let before = s.clone();
            let out = s.step(&next()).unwrap();
            // no shared cells, no agent on a present berry
            let mut seen = std::collections::HashSet::new();
            for a in s.agents() {
                prop_assert!(seen.insert(a.position));
                prop_assert!(s.berry_at(a.position).is_none());
                prop_assert!(a.pending_poison.iter().all(|&p| p > s.timestep()));
            }
            // marks only change through the documented events
            for (i, (a, b)) in before.agents().iter().zip(s.agents()).enumerate() {
                prop_assert!(!a.poisoned || b.poisoned);
                let applied = out.events.contains(&EnvEvent::MarkApplied { player: i });
                let removed = out.events.contains(&EnvEvent::MarkRemoved { player: i });
                if !a.marked && b.marked { prop_assert!(applied); }
                if a.marked && !b.marked { prop_assert!(removed); }
            }
            // every marked hit is immediately followed by its MarkRemoved
            for (k, e) in out.events.iter().enumerate() {
                if let EnvEvent::PunishHit { target, target_was_marked: true, .. } = *e {
                    prop_assert_eq!(out.events.get(k + 1), Some(&EnvEvent::MarkRemoved { player: target }));
                }
            }
            let now: Vec<(Pos, BerryType)> = s.berries().iter().map(|b| (b.position, b.berry)).collect();
            prop_assert_eq!(&now, &layout);
            prop_assert_eq!(s.agents().len(), 8);
        }
    }

    #[test]
    fn replay_is_deterministic(seed in 0u64..10_000) {
        let cfg = Arc::new(EnvConfig { episode_length: 120, ..EnvConfig::default() });
        let r = Arc::new(RuleSet::new(Condition::ImportantPlusSilly, &cfg));
        let run = || {
            let mut s = WorldState::reset(cfg.clone(), r.clone(), seed).unwrap();
            let mut next = random_actions(8, seed);
            let mut log = Vec::new();
            while !s.is_finished() {
                let out = s.step(&next()).unwrap();
                log.push(out);
            }
            (s, log)
        };
        prop_assert_eq!(run(), run());
    }
}
