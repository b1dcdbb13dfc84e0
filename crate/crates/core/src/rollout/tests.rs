use super::*;
use crate::learner::Group;
use crate::metrics::EpisodeMetrics;

fn tiny_shape() -> NetShape {
    NetShape { conv_channels: 2, mlp: [8, 8], lstm: 8, ..NetShape::default() }
}

fn tiny_config() -> RunConfig {
    let env = EnvConfig { episode_length: 40, ..EnvConfig::desk() };
    let mut cfg = RunConfig::new(env, Condition::Important);
    cfg.shape = tiny_shape();
    cfg.hyper.unroll_length = 20;
    cfg.hyper.batch_size = 4;
    cfg.population_size = 6;
    cfg.envs = 2;
    cfg.total_episodes = 12;
    cfg.seed = 5;
    cfg.queue_capacity = 64;
    cfg
}

#[derive(Default)]
struct Collect {
    metrics: Vec<EpisodeMetrics>,
    events: Vec<Vec<TimedEvent>>,
    assignments: Vec<MatchAssignment>,
    updates: Vec<(usize, u64)>,
    batches: Vec<(usize, Vec<Trajectory>)>,
    stop_after_rounds: Option<usize>,
    rounds: usize,
}

impl RunSink for Collect {
    fn episode(&mut self, r: &EpisodeResult) -> Result<(), RolloutError> {
        self.metrics.push(r.metrics.clone());
        self.events.push(r.events.clone());
        self.assignments.push(r.assignment.clone());
        Ok(())
    }

    fn update(&mut self, learner: usize, update: u64, _stats: &crate::learner::UpdateStats) -> Result<(), RolloutError> {
        self.updates.push((learner, update));
        Ok(())
    }

    fn consumed(&mut self, learner: usize, batch: &[Trajectory]) {
        self.batches.push((learner, batch.to_vec()));
    }

    fn round_end(&mut self, _state: &RunState) -> Result<bool, RolloutError> {
        self.rounds += 1;
        Ok(self.stop_after_rounds != Some(self.rounds))
    }
}

#[test]
fn full_draw_is_a_permutation() {
    let mut rng = derived_rng(1, "t", 0);
    let mut s = sample_players(12, 12, &mut rng).unwrap();
    s.sort();
    assert_eq!(s, (0..12).collect::<Vec<_>>());
    assert!(sample_players(12, 13, &mut rng).is_err());
}

#[test]
fn inclusion_frequency_is_k_over_n() {
    let mut rng = derived_rng(2, "t", 0);
    let mut hits = [0u32; 12];
    let draws = 100_000;
    for _ in 0..draws {
        let s = sample_players(12, 8, &mut rng).unwrap();
        let mut seen = [false; 12];
        for l in s {
            assert!(!seen[l], "drawn twice");
            seen[l] = true;
            hits[l] += 1;
        }
    }
    for h in hits {
        assert!((h as f64 / draws as f64 - 8.0 / 12.0).abs() < 0.005);
    }
}

#[test]
fn singleton_draws_are_uniform() {
    let mut rng = derived_rng(3, "t", 0);
    let mut hits = [0u32; 12];
    for _ in 0..60_000 {
        hits[sample_players(12, 1, &mut rng).unwrap()[0]] += 1;
    }
    for h in hits {
        assert!((h as f64 / 60_000.0 - 1.0 / 12.0).abs() < 0.006);
    }
}

#[test]
fn full_length_episode_yields_ten_trajectories_per_player() {
    let mut cfg = RunConfig::new(EnvConfig::default(), Condition::None);
    cfg.shape = tiny_shape();
    cfg.validate().unwrap();
    let pop = Population::init(&cfg);
    let rules = Arc::new(RuleSet::new(cfg.condition, &cfg.env));
    let palette = Palette::new(cfg.env.num_berry_types).unwrap();
    let assignment = assignment_for(&cfg, 0);
    let r = run_episode(&cfg, &rules, &palette, &assignment, &pop.snapshots()).unwrap();
    assert_eq!(r.trajectories.len(), 8 * 10);
    for &l in &assignment.learners {
        let mine: Vec<_> = r.trajectories.iter().filter(|(id, _)| *id == l).collect();
        assert_eq!(mine.len(), 10);
        for (k, (_, t)) in mine.iter().enumerate() {
            t.validate(100, cfg.shape.lstm, 8).unwrap();
            assert_eq!(t.dones[99], k == 9);
        }
    }
    let total: i64 = r.trajectories.iter().flat_map(|(_, t)| t.rewards.iter()).map(|&x| x as i64).sum();
    assert_eq!(total, r.metrics.counts.collective_return);
}

#[test]
fn noop_policies_are_silent() {
    let cfg = tiny_config();
    let mut pop = Population::init(&cfg);
    for l in &mut pop.learners {
        let b = l.params.group_mut(Group::PolicyB);
        for (a, v) in b.iter_mut().enumerate() {
            *v = if a == Action::NoOp.index() { 60.0 } else { -60.0 };
        }
        l.params.group_mut(Group::PolicyW).fill(0.0);
    }
    let rules = Arc::new(RuleSet::new(cfg.condition, &cfg.env));
    let palette = Palette::new(cfg.env.num_berry_types).unwrap();
    let r = run_episode(&cfg, &rules, &palette, &assignment_for(&cfg, 3), &pop.snapshots()).unwrap();
    assert!(r.events.is_empty());
    assert!(r.trajectories.iter().all(|(_, t)| t.rewards.iter().all(|&x| x == 0)));
    assert!(r.trajectories.iter().all(|(_, t)| t.actions.iter().all(|&a| a as usize == Action::NoOp.index())));
}

#[test]
fn episodes_replay_identically() {
    let cfg = tiny_config();
    let pop = Population::init(&cfg);
    let rules = Arc::new(RuleSet::new(cfg.condition, &cfg.env));
    let palette = Palette::new(cfg.env.num_berry_types).unwrap();
    let a = assignment_for(&cfg, 7);
    let r1 = run_episode(&cfg, &rules, &palette, &a, &pop.snapshots()).unwrap();
    let r2 = run_episode(&cfg, &rules, &palette, &a, &pop.snapshots()).unwrap();
    assert_eq!(r1.events, r2.events);
    assert_eq!(r1.metrics, r2.metrics);
    assert_eq!(r1.trajectories.len(), r2.trajectories.len());
    for ((l1, t1), (l2, t2)) in r1.trajectories.iter().zip(&r2.trajectories) {
        assert_eq!(l1, l2);
        assert_eq!(t1, t2);
    }
}

#[test]
fn deterministic_runs_match_and_consume_each_trajectory_once() {
    let cfg = tiny_config();
    let run = || {
        let mut state = RunState::new(&cfg);
        let mut sink = Collect::default();
        run_deterministic(&cfg, &mut state, &mut sink).unwrap();
        (state, sink)
    };
    let (s1, c1) = run();
    let (s2, c2) = run();
    assert_eq!(c1.metrics, c2.metrics);
    assert_eq!(s1, s2);
    assert_eq!(c1.metrics.len(), 12);
    assert!(c1.metrics.windows(2).all(|w| w[0].episode + 1 == w[1].episode));
    for a in &c1.assignments {
        let mut l = a.learners.clone();
        l.sort();
        l.dedup();
        assert_eq!(l.len(), a.learners.len());
    }
    // every produced trajectory is consumed once or still pending
    let per_player = cfg.trajectories_per_player() as u64;
    for i in 0..cfg.population_size {
        let produced = c1.assignments.iter().filter(|a| a.learners.contains(&i)).count() as u64 * per_player;
        let learner = &s1.population.learners[i];
        assert_eq!(produced, learner.updates * cfg.hyper.batch_size as u64 + s1.queue.len(i) as u64);
        assert!(s1.queue.len(i) < cfg.hyper.batch_size);
    }
}

#[test]
fn zero_budget_leaves_initialization() {
    let mut cfg = tiny_config();
    cfg.total_episodes = 0;
    let mut state = RunState::new(&cfg);
    run_deterministic(&cfg, &mut state, &mut NullSink).unwrap();
    assert_eq!(state, RunState::new(&cfg));
}

#[test]
fn learners_do_not_leak_into_each_other() {
    let cfg = tiny_config();
    let mut state = RunState::new(&cfg);
    let mut sink = Collect::default();
    run_deterministic(&cfg, &mut state, &mut sink).unwrap();
    // replaying only a learner's own batches from its own initialization
    // reproduces it bit for bit
    let init = Population::init(&cfg);
    for i in 0..cfg.population_size {
        let mut solo = init.learners[i].clone();
        for (l, batch) in &sink.batches {
            if *l == i {
                solo.update(batch, &cfg.hyper, None).unwrap();
            }
        }
        assert_eq!(solo, state.population.learners[i]);
    }
}

#[test]
fn interrupted_run_resumes_identically() {
    let cfg = tiny_config();
    let mut full = RunState::new(&cfg);
    let mut full_sink = Collect::default();
    run_deterministic(&cfg, &mut full, &mut full_sink).unwrap();

    let mut part = RunState::new(&cfg);
    let mut first = Collect { stop_after_rounds: Some(3), ..Default::default() };
    run_deterministic(&cfg, &mut part, &mut first).unwrap();
    assert_eq!(part.next_episode, 6);
    let bytes = encode_run_checkpoint(&part, [9; 32]);
    let (mut restored, hash) = decode_run_checkpoint(&bytes).unwrap();
    assert_eq!(hash, [9; 32]);
    assert_eq!(restored, part);
    let mut second = Collect::default();
    run_deterministic(&cfg, &mut restored, &mut second).unwrap();
    let mut joined = first.metrics.clone();
    joined.extend(second.metrics);
    assert_eq!(joined, full_sink.metrics);
    assert_eq!(restored, full);
}

#[test]
fn corrupted_run_checkpoint_is_refused() {
    let cfg = tiny_config();
    let mut state = RunState::new(&cfg);
    let mut sink = Collect { stop_after_rounds: Some(1), ..Default::default() };
    run_deterministic(&cfg, &mut state, &mut sink).unwrap();
    let mut bytes = encode_run_checkpoint(&state, [1; 32]);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let err = decode_run_checkpoint(&bytes).unwrap_err().to_string();
    assert!(err.contains("checksum mismatch"), "{err}");
}

#[test]
fn threaded_run_emits_every_episode_in_order() {
    let mut cfg = tiny_config();
    cfg.envs = 3;
    cfg.total_episodes = 15;
    let mut state = RunState::new(&cfg);
    let mut sink = Collect::default();
    run_threaded(&cfg, &mut state, &mut sink, None).unwrap();
    assert_eq!(sink.metrics.iter().map(|m| m.episode).collect::<Vec<_>>(), (0..15).collect::<Vec<_>>());
    assert_eq!(state.next_episode, 15);
    let total_updates: u64 = state.population.learners.iter().map(|l| l.updates).sum();
    let produced = 15 * cfg.env.players_per_episode as u64 * cfg.trajectories_per_player() as u64;
    let pending: u64 = (0..cfg.population_size).map(|i| state.queue.len(i) as u64).sum();
    assert_eq!(total_updates * cfg.hyper.batch_size as u64 + pending, produced);
    assert!(state.population.learners.iter().all(|l| l.params.all_finite()));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = tiny_config();
    cfg.hyper.unroll_length = 30;
    assert!(matches!(cfg.validate(), Err(RolloutError::InvalidConfig(_))));
    let mut cfg = tiny_config();
    cfg.population_size = 3;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_config();
    cfg.queue_capacity = 5;
    assert!(cfg.validate().is_err());
}
