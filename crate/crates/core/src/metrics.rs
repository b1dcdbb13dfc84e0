//! Per-episode group metrics and learning-curve binning.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{BerryType, Condition, EnvEvent, TimedEvent};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("truncated episode log: {0}")]
    Truncated(String),
    #[error("need at least {bins} episodes, got {episodes}")]
    TooFewEpisodes { bins: usize, episodes: usize },
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("no populations to summarize")]
    Empty,
}

/// Everything recorded about one finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode_length: u32,
    pub num_players: usize,
    pub events: Vec<TimedEvent>,
    /// `rewards[s][p]`: reward of player `p` on step `s`.
    pub rewards: Vec<Vec<i32>>,
}

/// Group-level measurements of one episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeCounts {
    pub punish_unmarked: u64,
    pub punish_marked: u64,
    /// Agent-steps spent marked, over post-step states `1..=L`.
    pub time_marked: u64,
    /// Agent-steps spent poisoned, over post-step states `1..=L`.
    pub time_poisoned: u64,
    pub taboo_berries_eaten: u64,
    pub collective_return: i64,
    /// Mean over agents that ate a poisonous berry of the steps from their
    /// first such eat to the end of the episode.
    pub steps_since_first_poison: Option<f64>,
}

/// One line of the metrics JSONL stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub population: u32,
    pub condition: Condition,
    /// Learner id seated in each player slot.
    pub learners: Vec<u32>,
    #[serde(flatten)]
    pub counts: EpisodeCounts,
}

impl EpisodeMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// Derives the episode metrics from its log.
pub fn compute_episode_metrics(log: &EpisodeLog, poisonous_berry: BerryType) -> Result<EpisodeCounts, MetricsError> {
    let len = log.episode_length;
    if log.rewards.len() != len as usize {
        return Err(MetricsError::Truncated(format!("{} of {len} reward rows", log.rewards.len())));
    }
    if let Some(row) = log.rewards.iter().position(|r| r.len() != log.num_players) {
        return Err(MetricsError::Truncated(format!("reward row {row} has the wrong width")));
    }
    let n = log.num_players;
    let mut out = EpisodeCounts::default();
    let mut mark_since: Vec<Option<u32>> = vec![None; n];
    let mut first_poison_eat: Vec<Option<u32>> = vec![None; n];
    let mut prev_t = 0;
    for ev in &log.events {
        if ev.t == 0 || ev.t > len || ev.t < prev_t {
            return Err(MetricsError::Truncated(format!("event at t={} out of order or range", ev.t)));
        }
        prev_t = ev.t;
        let player = ev.event.player();
        if player >= n {
            return Err(MetricsError::Truncated(format!("event for unknown player {player}")));
        }
        match ev.event {
            EnvEvent::PunishHit { target_was_marked: true, .. } => out.punish_marked += 1,
            EnvEvent::PunishHit { target_was_marked: false, .. } => out.punish_unmarked += 1,
            EnvEvent::BerryEaten { player, berry, wrongful, .. } => {
                if wrongful {
                    out.taboo_berries_eaten += 1;
                }
                if berry == poisonous_berry && first_poison_eat[player].is_none() {
                    // the eat happens during step t-1 -> t
                    first_poison_eat[player] = Some(ev.t - 1);
                }
            }
            EnvEvent::MarkApplied { player } => mark_since[player] = Some(ev.t),
            EnvEvent::MarkRemoved { player } => {
                if let Some(start) = mark_since[player].take() {
                    out.time_marked += (ev.t - start) as u64;
                }
            }
            EnvEvent::PoisonActivated { .. } => out.time_poisoned += (len - ev.t + 1) as u64,
            EnvEvent::BeamMissed { .. } => {}
        }
    }
    for start in mark_since.into_iter().flatten() {
        out.time_marked += (len + 1 - start) as u64;
    }
    let eaters: Vec<f64> = first_poison_eat.into_iter().flatten().map(|t| (len - t) as f64).collect();
    if !eaters.is_empty() {
        out.steps_since_first_poison = Some(eaters.iter().sum::<f64>() / eaters.len() as f64);
    }
    out.collective_return = log.rewards.iter().flatten().map(|&r| r as i64).sum();
    Ok(out)
}

/// Collective return rebuilt from the event log alone:
/// berry rewards, plus every hit's net effect on the group (a marked hit
/// costs `beam_cost + penalty - bounty`, an unmarked one `beam_cost + penalty`),
/// plus beam charges on misses when those are billed.
pub fn collective_return_from_events(events: &[TimedEvent], beam_cost: i32, penalty: i32, bounty: i32, miss_cost: i32) -> i64 {
    events
        .iter()
        .map(|ev| match ev.event {
            EnvEvent::BerryEaten { reward, .. } => reward as i64,
            EnvEvent::PunishHit { target_was_marked: true, .. } => (-beam_cost - penalty + bounty) as i64,
            EnvEvent::PunishHit { target_was_marked: false, .. } => (-beam_cost - penalty) as i64,
            EnvEvent::BeamMissed { .. } => -miss_cost as i64,
            _ => 0,
        })
        .sum()
}

/// Metric selectable for curves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PunishUnmarked,
    PunishMarked,
    TimeMarked,
    TimePoisoned,
    TabooBerriesEaten,
    CollectiveReturn,
    StepsSinceFirstPoison,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::PunishUnmarked,
        Metric::PunishMarked,
        Metric::TimeMarked,
        Metric::TimePoisoned,
        Metric::TabooBerriesEaten,
        Metric::CollectiveReturn,
        Metric::StepsSinceFirstPoison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PunishUnmarked => "punish_unmarked",
            Metric::PunishMarked => "punish_marked",
            Metric::TimeMarked => "time_marked",
            Metric::TimePoisoned => "time_poisoned",
            Metric::TabooBerriesEaten => "taboo_berries_eaten",
            Metric::CollectiveReturn => "collective_return",
            Metric::StepsSinceFirstPoison => "steps_since_first_poison",
        }
    }

    /// Value for one episode; episodes without a poisonous eat count as 0
    /// for the since-first-eat metric.
    pub fn value(self, c: &EpisodeCounts) -> f64 {
        match self {
            Metric::PunishUnmarked => c.punish_unmarked as f64,
            Metric::PunishMarked => c.punish_marked as f64,
            Metric::TimeMarked => c.time_marked as f64,
            Metric::TimePoisoned => c.time_poisoned as f64,
            Metric::TabooBerriesEaten => c.taboo_berries_eaten as f64,
            Metric::CollectiveReturn => c.collective_return as f64,
            Metric::StepsSinceFirstPoison => c.steps_since_first_poison.unwrap_or(0.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| MetricsError::UnknownMetric(s.to_string()))
    }
}

/// Bin of episode `e` out of `episodes` when cut into `bins` equal parts.
pub fn bin_of(e: usize, episodes: usize, bins: usize) -> usize {
    e * bins / episodes
}

/// Means of `series` (indexed by episode) over `bins` equal-width bins.
pub fn bin_curves(series: &[f64], bins: usize) -> Result<Vec<f64>, MetricsError> {
    let n = series.len();
    if bins == 0 || n < bins {
        return Err(MetricsError::TooFewEpisodes { bins, episodes: n });
    }
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (e, v) in series.iter().enumerate() {
        let b = bin_of(e, n, bins);
        sums[b] += v;
        counts[b] += 1;
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

/// Binned curve of one metric for one population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBins {
    pub condition: Condition,
    pub population: u32,
    pub metric: Metric,
    pub means: Vec<f64>,
}

impl CurveBins {
    pub fn from_episodes(
        condition: Condition,
        population: u32,
        metric: Metric,
        episodes: &[EpisodeMetrics],
        bins: usize,
    ) -> Result<Self, MetricsError> {
        let mut sorted: Vec<&EpisodeMetrics> = episodes.iter().collect();
        sorted.sort_by_key(|m| m.episode);
        let series: Vec<f64> = sorted.iter().map(|m| metric.value(&m.counts)).collect();
        Ok(Self { condition, population, metric, means: bin_curves(&series, bins)? })
    }
}

/// Averaged curve point across populations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub bin: usize,
    pub mean: f64,
    /// Half-width of the confidence interval across populations; NaN with
    /// a single population.
    pub ci_half_width: f64,
}

/// Per-bin mean and confidence half-width across populations.
pub fn summarize_curves(curves: &[CurveBins], confidence: f64) -> Result<Vec<CurvePoint>, MetricsError> {
    let first = curves.first().ok_or(MetricsError::Empty)?;
    let bins = first.means.len();
    let n = curves.len();
    let t = if n >= 2 { crate::stats::t_quantile(0.5 + confidence / 2.0, (n - 1) as f64) } else { f64::NAN };
    Ok((0..bins)
        .map(|b| {
            let xs: Vec<f64> = curves.iter().map(|c| c.means[b]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let half = if n >= 2 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                t * (var / n as f64).sqrt()
            } else {
                f64::NAN
            };
            CurvePoint { bin: b + 1, mean, ci_half_width: half }
        })
        .collect())
}

/// `bin,mean,ci99_half_width` lines with a header.
pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("bin,mean,ci99_half_width\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.bin, p.mean, p.ci_half_width));
    }
    out
}

/// One population's contribution to a sweep analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub condition: Condition,
    pub level: u32,
    pub population: u32,
    pub value: f64,
}

/// Mean of bins 3 to 5 (1-based) of a 10-bin curve.
pub fn sweep_value(bins: &[f64]) -> f64 {
    bins[2..5].iter().sum::<f64>() / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvEvent::*;

    fn ev(t: u32, event: EnvEvent) -> TimedEvent {
        TimedEvent { t, event }
    }

    fn log(len: u32, events: Vec<TimedEvent>) -> EpisodeLog {
        EpisodeLog { episode_length: len, num_players: 2, events, rewards: vec![vec![0, 0]; len as usize] }
    }

    #[test]
    fn counts_hits_by_target_state() {
        let hit = |m| PunishHit { punisher: 0, target: 1, target_was_marked: m };
        let events = vec![ev(1, hit(true)), ev(2, hit(true)), ev(3, hit(false)), ev(4, hit(true))];
        let m = compute_episode_metrics(&log(10, events), 0).unwrap();
        assert_eq!((m.punish_marked, m.punish_unmarked), (3, 1));
    }

    #[test]
    fn mark_lifecycle_time() {
        let events = vec![ev(100, MarkApplied { player: 1 }), ev(150, MarkRemoved { player: 1 })];
        assert_eq!(compute_episode_metrics(&log(1000, events), 0).unwrap().time_marked, 50);
        // still marked at the end: states 990..=1000
        let events = vec![ev(990, MarkApplied { player: 0 })];
        assert_eq!(compute_episode_metrics(&log(1000, events), 0).unwrap().time_marked, 11);
    }

    #[test]
    fn poison_time_and_first_eat() {
        let eat = |p| BerryEaten { player: p, berry: 0, wrongful: false, reward: 4 };
        let events = vec![ev(41, eat(0)), ev(60, eat(0)), ev(141, PoisonActivated { player: 0 })];
        let m = compute_episode_metrics(&log(200, events), 0).unwrap();
        assert_eq!(m.time_poisoned, 60);
        assert_eq!(m.steps_since_first_poison, Some(160.0));
        assert_eq!(m.taboo_berries_eaten, 0);
    }

    #[test]
    fn truncated_logs_are_rejected() {
        let mut l = log(10, vec![]);
        l.rewards.pop();
        assert!(matches!(compute_episode_metrics(&l, 0), Err(MetricsError::Truncated(_))));
        let l = log(10, vec![ev(11, MarkApplied { player: 0 })]);
        assert!(compute_episode_metrics(&l, 0).is_err());
    }

    #[test]
    fn index_series_bins() {
        let series: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let bins = bin_curves(&series, 10).unwrap();
        for (b, m) in bins.iter().enumerate() {
            assert_eq!(*m, 10.0 * b as f64 + 4.5);
        }
        let raw: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        assert_eq!(bin_curves(&raw, 10).unwrap(), raw);
        assert!(bin_curves(&[1.0; 9], 10).is_err());
        assert_eq!(bin_curves(&[2.5; 37], 10).unwrap(), vec![2.5; 10]);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("nope".parse::<Metric>().is_err());
    }

    #[test]
    fn metrics_line_round_trip() {
        let m = EpisodeMetrics {
            episode: 3,
            population: 1,
            condition: Condition::Important,
            learners: vec![4, 0],
            counts: EpisodeCounts { punish_marked: 2, collective_return: -7, ..Default::default() },
        };
        let line = m.to_json_line();
        assert!(line.contains("\"punish_marked\":2"));
        assert_eq!(EpisodeMetrics::from_json_line(&line).unwrap(), m);
    }
}
