use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::spec::{config_hash, parse_run_file, run_file_text, Cell, ExperimentSpec, Mode, RunOptions, SweepAxis};
use super::{analysis, ExperimentError};
use crate::env::{Condition, WorldState};
use crate::metrics::EpisodeMetrics;
use crate::percept::{render_world, write_ppm, Palette};
use crate::rollout::{
    decode_run_checkpoint, encode_run_checkpoint, run_deterministic, run_threaded, EpisodeResult, RolloutError, RunConfig,
    RunSink, RunState, StopFlag,
};

pub const RUN_FILE: &str = "run.cfg";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const STATUS_FILE: &str = "status.json";
pub const EXPERIMENT_FILE: &str = "experiment.cfg";
pub const MANIFEST_FILE: &str = "manifest.json";

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Ways to end a run early.
#[derive(Clone, Debug, Default)]
pub struct Control {
    /// Checked at every round boundary (deterministic) or episode
    /// (threaded).
    pub stop: StopFlag,
    /// Stop at the first resumable point at or after this many episodes.
    pub stop_after: Option<u64>,
}

/// First line of every JSONL artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub kind: String,
    pub version: u32,
    pub config_hash: String,
}

impl ArtifactHeader {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Self { kind: kind.into(), version: 1, config_hash: config_hash.into() }
    }

    pub fn line(&self) -> String {
        serde_json::to_string(self).expect("header serializes")
    }
}

/// Progress of one run directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatus {
    pub config_hash: String,
    pub episodes_done: u64,
    pub total_episodes: u64,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// The run was already complete; nothing was done.
    pub already_complete: bool,
}

/// Reads a metrics JSONL file: header hash and the episode lines.
pub fn read_metrics(path: &Path) -> Result<(String, Vec<EpisodeMetrics>), ExperimentError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(f).lines();
    let bad = |m: String| ExperimentError::Analysis(format!("{}: {m}", path.display()));
    let header: ArtifactHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(io_err(path))?).map_err(|e| bad(format!("bad header: {e}")))?,
        None => return Err(bad("empty file".into())),
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        out.push(EpisodeMetrics::from_json_line(&line).map_err(|e| bad(format!("line {}: {e}", i + 2)))?);
    }
    Ok((header.config_hash, out))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Keeps the header and the first `episodes` lines of a metrics file.
fn truncate_metrics(path: &Path, hash: &str, episodes: u64) -> Result<(), ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header: Option<ArtifactHeader> = lines.next().and_then(|l| serde_json::from_str(l).ok());
    if header.as_ref().map(|h| h.config_hash.as_str()) != Some(hash) {
        return Err(ExperimentError::Refused(format!("{} was written under a different configuration", path.display())));
    }
    let kept: Vec<&str> = lines.take(episodes as usize).collect();
    if (kept.len() as u64) < episodes {
        return Err(ExperimentError::Refused(format!(
            "{} holds {} episodes but the checkpoint is at {episodes}",
            path.display(),
            kept.len()
        )));
    }
    let mut out = String::with_capacity(text.len());
    out.push_str(&header.expect("checked").line());
    out.push('\n');
    for l in kept {
        out.push_str(l);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

struct DirSink<'a> {
    dir: &'a Path,
    cfg: &'a RunConfig,
    options: &'a RunOptions,
    control: &'a Control,
    /// Stops a threaded run; set from `control`.
    local_stop: StopFlag,
    hash: String,
    metrics: BufWriter<File>,
    palette: Palette,
    rounds: u64,
    error: Option<ExperimentError>,
}

impl DirSink<'_> {
    fn fail(&mut self, e: ExperimentError) -> RolloutError {
        let msg = e.to_string();
        self.error.get_or_insert(e);
        RolloutError::Io(std::io::Error::other(msg))
    }

    fn io(&mut self, path: &Path, e: std::io::Error) -> RolloutError {
        self.fail(ExperimentError::Io { path: path.to_path_buf(), source: e })
    }

    fn checkpoint(&mut self, state: &RunState) -> Result<(), ExperimentError> {
        let path = self.dir.join(METRICS_FILE);
        self.metrics.flush().map_err(io_err(&path))?;
        save_checkpoint(self.dir, self.cfg, &self.hash, state)
    }

    fn should_stop(&self, episodes_done: u64) -> bool {
        self.control.stop.is_set() || self.control.stop_after.is_some_and(|n| episodes_done >= n)
    }
}

fn save_checkpoint(dir: &Path, cfg: &RunConfig, hash: &str, state: &RunState) -> Result<(), ExperimentError> {
    let mut raw = [0u8; 32];
    raw.copy_from_slice(&config_hash(cfg));
    write_atomic(&dir.join(CHECKPOINT_FILE), &encode_run_checkpoint(state, raw))?;
    let status = RunStatus {
        config_hash: hash.to_string(),
        episodes_done: state.next_episode,
        total_episodes: cfg.total_episodes,
        complete: state.is_complete(cfg),
    };
    let text = serde_json::to_string_pretty(&status).expect("status serializes") + "\n";
    write_atomic(&dir.join(STATUS_FILE), text.as_bytes())
}

impl RunSink for DirSink<'_> {
    fn episode(&mut self, r: &EpisodeResult) -> Result<(), RolloutError> {
        let e = r.metrics.episode;
        if let Err(err) = writeln!(self.metrics, "{}", r.metrics.to_json_line()) {
            return Err(self.io(&self.dir.join(METRICS_FILE), err));
        }
        let every = self.options.event_sample_every;
        if every > 0 && e % every == 0 {
            let dir = self.dir.join("events");
            let path = dir.join(format!("episode-{e:06}.jsonl"));
            let mut text = ArtifactHeader::new("events", &self.hash).line() + "\n";
            for ev in &r.events {
                text.push_str(&ev.to_json_line());
                text.push('\n');
            }
            if let Err(err) = fs::create_dir_all(&dir).and_then(|_| fs::write(&path, text)) {
                return Err(self.io(&path, err));
            }
        }
        if self.options.mode == Mode::Threaded && self.should_stop(e + 1) {
            self.local_stop.stop();
        }
        Ok(())
    }

    fn wants_frames(&self, episode: u64) -> bool {
        self.options.frames_episode == Some(episode)
    }

    fn frame(&mut self, episode: u64, state: &WorldState) {
        if self.error.is_some() {
            return;
        }
        let dir = self.dir.join(format!("frames/episode-{episode:06}"));
        let path = dir.join(format!("step-{:04}.ppm", state.timestep()));
        let (w, h, rgb) = render_world(state, &self.palette);
        let comment = format!("config_hash={}", self.hash);
        if let Err(e) = fs::create_dir_all(&dir).and_then(|_| write_ppm(&path, w, h, &rgb, Some(&comment))) {
            self.error = Some(ExperimentError::Io { path, source: e });
        }
    }

    fn round_end(&mut self, state: &RunState) -> Result<bool, RolloutError> {
        if let Some(e) = self.error.take() {
            return Err(self.fail(e));
        }
        self.rounds += 1;
        let stop = self.should_stop(state.next_episode);
        let every = self.options.checkpoint_every;
        if stop || (every > 0 && self.rounds % every == 0) {
            if let Err(e) = self.checkpoint(state) {
                return Err(self.fail(e));
            }
        }
        Ok(!stop)
    }
}

/// Drives one run directory to completion or to a requested stop, starting
/// from `state`.
fn drive(
    dir: &Path,
    cfg: &RunConfig,
    options: &RunOptions,
    mut state: RunState,
    control: &Control,
) -> Result<RunStatus, ExperimentError> {
    let hash = hex(&config_hash(cfg));
    let metrics_path = dir.join(METRICS_FILE);
    if state.next_episode == 0 {
        let header = ArtifactHeader::new("metrics", &hash).line() + "\n";
        fs::write(&metrics_path, header).map_err(io_err(&metrics_path))?;
    } else {
        truncate_metrics(&metrics_path, &hash, state.next_episode)?;
    }
    let file = OpenOptions::new().append(true).open(&metrics_path).map_err(io_err(&metrics_path))?;
    let palette = Palette::new(cfg.env.num_berry_types).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut sink = DirSink {
        dir,
        cfg,
        options,
        control,
        local_stop: StopFlag::default(),
        hash: hash.clone(),
        metrics: BufWriter::new(file),
        palette,
        rounds: 0,
        error: None,
    };
    let result = match options.mode {
        Mode::Deterministic => run_deterministic(cfg, &mut state, &mut sink),
        Mode::Threaded => {
            if sink.should_stop(state.next_episode) {
                Ok(())
            } else {
                let stop = sink.local_stop.clone();
                let global = control.stop.clone();
                // forward an external stop request to this run
                let watcher_done = StopFlag::default();
                std::thread::scope(|s| {
                    let done = watcher_done.clone();
                    let stop_w = stop.clone();
                    s.spawn(move || {
                        while !done.is_set() && !stop_w.is_set() {
                            if global.is_set() {
                                stop_w.stop();
                            }
                            std::thread::sleep(std::time::Duration::from_millis(50));
                        }
                    });
                    let r = run_threaded(cfg, &mut state, &mut sink, Some(&stop));
                    watcher_done.stop();
                    r
                })
            }
        }
    };
    if let Some(e) = sink.error.take() {
        return Err(e);
    }
    result?;
    sink.checkpoint(&state)?;
    Ok(RunStatus {
        config_hash: hash,
        episodes_done: state.next_episode,
        total_episodes: cfg.total_episodes,
        complete: state.is_complete(cfg),
    })
}

/// Starts a run in `dir`, or continues it if the directory already holds
/// the same configuration.
pub fn start_run(dir: &Path, cfg: &RunConfig, options: &RunOptions, control: &Control) -> Result<RunOutcome, ExperimentError> {
    cfg.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
    let run_file = dir.join(RUN_FILE);
    if run_file.exists() {
        let (existing, _) = parse_run_file(&fs::read_to_string(&run_file).map_err(io_err(&run_file))?)?;
        if config_hash(&existing) != config_hash(cfg) {
            return Err(ExperimentError::Refused(format!(
                "{} already holds a run with config hash {}",
                dir.display(),
                hex(&config_hash(&existing))
            )));
        }
        return resume_run(dir, control);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    fs::write(&run_file, run_file_text(cfg, options)).map_err(io_err(&run_file))?;
    let status = drive(dir, cfg, options, RunState::new(cfg), control)?;
    Ok(RunOutcome { status, already_complete: false })
}

/// Continues the run in `dir` from its last checkpoint. Refuses if the
/// checkpoint is corrupt or was written under another configuration.
pub fn resume_run(dir: &Path, control: &Control) -> Result<RunOutcome, ExperimentError> {
    let run_file = dir.join(RUN_FILE);
    let text = fs::read_to_string(&run_file).map_err(io_err(&run_file))?;
    let (cfg, options) = parse_run_file(&text)?;
    let expected = config_hash(&cfg);
    let ck_path = dir.join(CHECKPOINT_FILE);
    let state = if ck_path.exists() {
        let bytes = fs::read(&ck_path).map_err(io_err(&ck_path))?;
        let (state, stored) = decode_run_checkpoint(&bytes)
            .map_err(|e| ExperimentError::Refused(format!("{}: {e}", ck_path.display())))?;
        if stored != expected {
            return Err(ExperimentError::Refused(format!(
                "config hash mismatch: checkpoint {}, {} {}",
                hex(&stored),
                RUN_FILE,
                hex(&expected)
            )));
        }
        if state.population.learners.len() != cfg.population_size {
            return Err(ExperimentError::Refused("checkpoint population size differs from the run file".into()));
        }
        state
    } else {
        RunState::new(&cfg)
    };
    if state.is_complete(&cfg) {
        let status = RunStatus {
            config_hash: hex(&expected),
            episodes_done: state.next_episode,
            total_episodes: cfg.total_episodes,
            complete: true,
        };
        return Ok(RunOutcome { status, already_complete: true });
    }
    let status = drive(dir, &cfg, &options, state, control)?;
    Ok(RunOutcome { status, already_complete: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Pending,
    Incomplete,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub condition: Condition,
    pub level: Option<u32>,
    pub population: u32,
    pub seed: u64,
    pub config_hash: String,
    /// Relative to the experiment root.
    pub dir: String,
    pub status: CellStatus,
    pub episodes_done: u64,
    pub total_episodes: u64,
    /// Every file of the run directory, relative to the experiment root.
    pub files: Vec<String>,
}

/// Index of an experiment directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub spec_hash: String,
    pub spec_file: String,
    pub sweep: SweepAxis,
    pub conditions: Vec<Condition>,
    pub levels: Vec<u32>,
    pub seeds: Vec<u64>,
    pub cells: Vec<ManifestCell>,
    /// Analysis outputs, relative to the experiment root.
    pub analysis: Vec<String>,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self, ExperimentError> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, root: &Path) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_atomic(&root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|c| c.status == CellStatus::Complete)
    }
}

/// Files under `dir`, relative to `root`, sorted.
pub(crate) fn list_files(root: &Path, dir: &Path) -> Vec<String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, out);
            } else if p.extension().is_none_or(|x| x != "tmp") {
                out.push(p);
            }
        }
    }
    let mut found = Vec::new();
    walk(dir, &mut found);
    let mut out: Vec<String> =
        found.iter().filter_map(|p| p.strip_prefix(root).ok()).map(|p| p.to_string_lossy().into_owned()).collect();
    out.sort();
    out
}

fn manifest_cell(root: &Path, spec: &ExperimentSpec, cell: &Cell) -> ManifestCell {
    let cfg = spec.run_config(cell);
    let dir = cell.dir_name(spec.sweep);
    let status_path = root.join(&dir).join(STATUS_FILE);
    let status: Option<RunStatus> = fs::read_to_string(status_path).ok().and_then(|t| serde_json::from_str(&t).ok());
    let (state, done) = match status {
        Some(s) if s.complete => (CellStatus::Complete, s.episodes_done),
        Some(s) => (CellStatus::Incomplete, s.episodes_done),
        None => (CellStatus::Pending, 0),
    };
    ManifestCell {
        condition: cell.condition,
        level: cell.level,
        population: cell.population,
        seed: cell.seed,
        config_hash: hex(&config_hash(&cfg)),
        files: list_files(root, &root.join(&dir)),
        dir,
        status: state,
        episodes_done: done,
        total_episodes: cfg.total_episodes,
    }
}

fn build_manifest(root: &Path, spec: &ExperimentSpec) -> Manifest {
    Manifest {
        version: 1,
        spec_hash: hex(&spec.hash()),
        spec_file: EXPERIMENT_FILE.into(),
        sweep: spec.sweep,
        conditions: spec.conditions.clone(),
        levels: spec.levels.clone(),
        seeds: spec.seeds.clone(),
        cells: spec.cells().iter().map(|c| manifest_cell(root, spec, c)).collect(),
        analysis: list_files(root, &root.join("analysis")),
    }
}

/// What happened to an experiment invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    /// Runs that were already complete and left untouched.
    pub skipped: usize,
    pub errors: Vec<(String, String)>,
}

impl ExperimentOutcome {
    pub fn is_complete(&self) -> bool {
        self.manifest.is_complete()
    }
}

/// Runs (or continues) every cell of the experiment under `root`, up to `jobs`
/// cells at a time, then writes the analysis bundle once all are complete.
pub fn run_experiment(
    spec: &ExperimentSpec,
    root: &Path,
    jobs: usize,
    control: &Control,
) -> Result<ExperimentOutcome, ExperimentError> {
    spec.validate()?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let spec_path = root.join(EXPERIMENT_FILE);
    let text = spec.to_text();
    if root.join(MANIFEST_FILE).exists() {
        let old = Manifest::read(root)?;
        if old.spec_hash != hex(&spec.hash()) {
            return Err(ExperimentError::Refused(format!(
                "{} holds a different experiment (experiment hash {})",
                root.display(),
                old.spec_hash
            )));
        }
    }
    fs::write(&spec_path, &text).map_err(io_err(&spec_path))?;
    build_manifest(root, spec).write(root)?;

    let cells = spec.cells();
    let next = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);
    let errors = Mutex::new(Vec::new());
    let manifest_lock = Mutex::new(());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(i) else { break };
        if control.stop.is_set() {
            break;
        }
        let dir = root.join(cell.dir_name(spec.sweep));
        let cfg = spec.run_config(cell);
        match start_run(&dir, &cfg, &spec.options, control) {
            Ok(o) if o.already_complete => {
                skipped.fetch_add(1, Ordering::SeqCst);
            }
            Ok(_) => {}
            Err(e) => errors.lock().expect("errors lock").push((cell.dir_name(spec.sweep), e.to_string())),
        }
        let _guard = manifest_lock.lock().expect("manifest lock");
        if let Err(e) = build_manifest(root, spec).write(root) {
            errors.lock().expect("errors lock").push((MANIFEST_FILE.into(), e.to_string()));
        }
    };
    let jobs = jobs.clamp(1, cells.len().max(1));
    std::thread::scope(|s| {
        for _ in 1..jobs {
            s.spawn(worker);
        }
        worker();
    });

    let mut manifest = build_manifest(root, spec);
    let mut errors = errors.into_inner().expect("errors lock");
    for (dir, _) in &errors {
        if let Some(c) = manifest.cells.iter_mut().find(|c| &c.dir == dir) {
            c.status = CellStatus::Failed;
        }
    }
    if manifest.is_complete() {
        if let Err(e) = analysis::write_bundle(root, &manifest, spec.options.bins) {
            errors.push(("analysis".into(), e.to_string()));
        }
        manifest.analysis = list_files(root, &root.join("analysis"));
    }
    manifest.write(root)?;
    Ok(ExperimentOutcome { manifest, skipped: skipped.into_inner(), errors })
}

/// What `resume` found at a path.
#[derive(Clone, Debug, PartialEq)]
pub enum Resumed {
    Experiment(ExperimentOutcome),
    Run(RunOutcome),
}

/// Continues an experiment directory (holding a manifest) or a single run
/// directory (holding a run file).
pub fn resume(path: &Path, jobs: usize, control: &Control) -> Result<Resumed, ExperimentError> {
    if path.join(MANIFEST_FILE).exists() {
        let manifest = Manifest::read(path)?;
        let spec_path = path.join(&manifest.spec_file);
        let text = fs::read_to_string(&spec_path).map_err(io_err(&spec_path))?;
        let spec = ExperimentSpec::from_text(&text, None)?;
        if hex(&spec.hash()) != manifest.spec_hash {
            return Err(ExperimentError::Refused(format!(
                "{} does not match the manifest's experiment hash {}",
                spec_path.display(),
                manifest.spec_hash
            )));
        }
        return run_experiment(&spec, path, jobs, control).map(Resumed::Experiment);
    }
    if path.join(RUN_FILE).exists() {
        return resume_run(path, control).map(Resumed::Run);
    }
    Err(ExperimentError::Config(format!("{} holds neither {MANIFEST_FILE} nor {RUN_FILE}", path.display())))
}
