use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taboo_core::env::*;

fn world(cfg: &EnvConfig, cond: Condition, seed: u64) -> WorldState {
    WorldState::reset(Arc::new(cfg.clone()), Arc::new(RuleSet::new(cond, cfg)), seed).unwrap()
}

fn small_config() -> impl Strategy<Value = EnvConfig> {
    (3usize..12, 3usize..10, 2usize..6, 1usize..5, 1u32..20).prop_map(|(w, h, types, players, delay)| {
        let sites = (w * h - players).min(12);
        EnvConfig {
            grid_width: w,
            grid_height: h,
            num_berry_types: types,
            players_per_episode: players,
            berry_sites: sites,
            poison_delay: delay,
            episode_length: 60,
            ..EnvConfig::desk()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn entities_are_conserved(cfg in small_config(), seed in any::<u64>(), cond in 0usize..3) {
        let mut s = world(&cfg, Condition::ALL[cond], seed);
        let sites: Vec<(Pos, BerryType)> = s.berries().iter().map(|b| (b.position, b.berry)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while !s.is_finished() {
            let actions: Vec<Action> = (0..cfg.players_per_episode).map(|_| Action::ALL[rng.gen_range(0..8)]).collect();
            s.step(&actions).unwrap();
            prop_assert_eq!(s.agents().len(), cfg.players_per_episode);
            let now: Vec<(Pos, BerryType)> = s.berries().iter().map(|b| (b.position, b.berry)).collect();
            prop_assert_eq!(&now, &sites);
            let mut cells: Vec<Pos> = s.agents().iter().map(|a| a.position).collect();
            cells.sort_by_key(|p| (p.y, p.x));
            cells.dedup();
            prop_assert_eq!(cells.len(), cfg.players_per_episode);
            for a in s.agents() {
                prop_assert!(s.berry_at(a.position).is_none(), "agent stands on an uneaten berry");
            }
        }
    }

    #[test]
    fn marks_follow_the_rules(cfg in small_config(), seed in any::<u64>(), cond in 0usize..3) {
        let condition = Condition::ALL[cond];
        let rules = RuleSet::new(condition, &cfg);
        let mut s = world(&cfg, condition, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        while !s.is_finished() {
            let before: Vec<bool> = s.agents().iter().map(|a| a.marked).collect();
            let actions: Vec<Action> = (0..cfg.players_per_episode).map(|_| Action::ALL[rng.gen_range(0..8)]).collect();
            let out = s.step(&actions).unwrap();
            for (p, a) in s.agents().iter().enumerate() {
                let ate_wrongful = out.events.iter().any(|e| matches!(*e, EnvEvent::BerryEaten { player, berry, .. } if player == p && rules.is_wrongful(berry)));
                let punished = out.events.iter().any(|e| matches!(*e, EnvEvent::MarkRemoved { player } if player == p));
                prop_assert_eq!(a.marked, ate_wrongful || (before[p] && !punished));
            }
            if condition == Condition::None {
                prop_assert!(s.agents().iter().all(|a| !a.marked));
            }
        }
    }

    #[test]
    fn same_seed_same_episode(cfg in small_config(), seed in any::<u64>()) {
        let run = || {
            let mut s = world(&cfg, Condition::ImportantPlusSilly, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
            let mut log = Vec::new();
            while !s.is_finished() {
                let actions: Vec<Action> = (0..cfg.players_per_episode).map(|_| Action::ALL[rng.gen_range(0..8)]).collect();
                log.push(s.step(&actions).unwrap());
            }
            (log, s)
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn event_records_round_trip() {
    let cfg = EnvConfig::desk();
    let mut s = world(&cfg, Condition::Important, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = std::collections::BTreeSet::new();
    while !s.is_finished() {
        let actions: Vec<Action> = (0..4).map(|_| Action::ALL[rng.gen_range(0..8)]).collect();
        let out = s.step(&actions).unwrap();
        for event in out.events {
            let timed = TimedEvent { t: s.timestep(), event };
            let rec = timed.to_record();
            let line = serde_json::to_string(&rec).unwrap();
            let back: EventRecord = serde_json::from_str(&line).unwrap();
            assert_eq!(TimedEvent::from_record(&back).unwrap(), timed);
            seen.insert(rec.kind);
        }
    }
    assert!(seen.contains("BerryEaten") && seen.contains("PunishHit"), "{seen:?}");
}

#[test]
fn config_text_round_trips_through_key_values() {
    let cfg = EnvConfig { poison_delay: 17, charge_beam_on_miss: true, ..EnvConfig::desk() };
    let text = cfg.to_config_text() + "condition = silly\n";
    let (parsed, cond) = EnvConfig::from_config_text(&text).unwrap();
    assert_eq!(parsed, cfg);
    assert_eq!(cond, Some(Condition::ImportantPlusSilly));
    assert!(matches!(EnvConfig::from_config_text("grid_width = 3\ngrid_height = 3\n"), Err(EnvError::Infeasible { .. })));
    assert!(matches!(EnvConfig::from_config_text("no_such_key = 1\n"), Err(EnvError::Parse { .. })));
}
