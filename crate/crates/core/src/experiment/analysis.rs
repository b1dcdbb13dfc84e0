use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::store::{hex, io_err, read_metrics, CellStatus, Manifest, ManifestCell, METRICS_FILE};
use super::ExperimentError;
use super::spec::SweepAxis;
use crate::env::Condition;
use crate::metrics::{curves_csv, summarize_curves, sweep_value, CurveBins, CurvePoint, EpisodeMetrics, Metric};
use crate::stats::{anova_two_way, bonferroni, format_f, format_p, format_t, t_test_two_sample, StatRecord};

/// Confidence level of the exported curve bands.
pub const CURVE_CONFIDENCE: f64 = 0.99;

/// One finished run loaded for analysis.
#[derive(Clone, Debug)]
pub struct RunData {
    pub cell: ManifestCell,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Loads the metrics of every complete run of an experiment, checking each
/// file's header against the manifest.
pub fn load_runs(root: &Path, manifest: &Manifest) -> Result<Vec<RunData>, ExperimentError> {
    let mut out = Vec::new();
    for cell in manifest.cells.iter().filter(|c| c.status == CellStatus::Complete) {
        let path = root.join(&cell.dir).join(METRICS_FILE);
        let (hash, episodes) = read_metrics(&path)?;
        if hash != cell.config_hash {
            return Err(ExperimentError::Analysis(format!(
                "{}: header hash {hash} does not match the manifest ({})",
                path.display(),
                cell.config_hash
            )));
        }
        out.push(RunData { cell: cell.clone(), episodes });
    }
    if out.is_empty() {
        return Err(ExperimentError::Analysis("no complete runs to analyze".into()));
    }
    Ok(out)
}

/// Curve group: condition and sweep level.
pub type GroupKey = (Condition, Option<u32>);

fn binned(runs: &[RunData], metric: Metric, bins: usize) -> Result<BTreeMap<GroupKey, Vec<CurveBins>>, ExperimentError> {
    let mut groups: BTreeMap<GroupKey, Vec<CurveBins>> = BTreeMap::new();
    for r in runs {
        let c = CurveBins::from_episodes(r.cell.condition, r.cell.population, metric, &r.episodes, bins)
            .map_err(|e| ExperimentError::Analysis(format!("{}: {e}", r.cell.dir)))?;
        groups.entry((r.cell.condition, r.cell.level)).or_default().push(c);
    }
    Ok(groups)
}

/// Mean curve and 99% band per condition and level.
pub fn curves(runs: &[RunData], metric: Metric, bins: usize) -> Result<BTreeMap<GroupKey, Vec<CurvePoint>>, ExperimentError> {
    binned(runs, metric, bins)?
        .into_iter()
        .map(|(k, v)| {
            summarize_curves(&v, CURVE_CONFIDENCE).map(|p| (k, p)).map_err(|e| ExperimentError::Analysis(e.to_string()))
        })
        .collect()
}

fn curve_file_name(sweep: SweepAxis, metric: Metric, (cond, level): GroupKey) -> String {
    match level {
        Some(l) => format!("{metric}-{cond}-{sweep}{l}.csv"),
        None => format!("{metric}-{cond}.csv"),
    }
}

/// Writes one CSV per metric, condition and level into `dest`.
pub fn export_curves(
    root: &Path,
    dest: &Path,
    metrics: &[Metric],
    bins: usize,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let manifest = Manifest::read(root)?;
    let runs = load_runs(root, &manifest)?;
    write_curves(dest, &manifest, &runs, metrics, bins)
}

fn write_curves(
    dest: &Path,
    manifest: &Manifest,
    runs: &[RunData],
    metrics: &[Metric],
    bins: usize,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    let mut written = Vec::new();
    for &m in metrics {
        for (key, points) in curves(runs, m, bins)? {
            let n = runs.iter().filter(|r| (r.cell.condition, r.cell.level) == key).count();
            let path = dest.join(curve_file_name(manifest.sweep, m, key));
            let text = format!(
                "# config_hash={} metric={m} condition={} populations={n} band=99% t interval across populations\n{}",
                manifest.spec_hash,
                key.0,
                curves_csv(&points)
            );
            fs::write(&path, text).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Stats rows with one human-readable line each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub records: Vec<StatRecord>,
    pub lines: Vec<String>,
}

fn bin_column(curves: &[CurveBins], b: usize) -> Vec<f64> {
    curves.iter().map(|c| c.means[b]).collect()
}

/// Binned comparisons between conditions (Bonferroni over bins), first
/// versus last bin within each condition, and for sweeps the two-way ANOVA
/// of condition by level on the mean of bins 3 to 5.
pub fn stats_report(manifest: &Manifest, runs: &[RunData], bins: usize) -> Result<Report, ExperimentError> {
    let mut rep = Report::default();
    for &metric in &Metric::ALL {
        let groups = binned(runs, metric, bins)?;
        if manifest.sweep == SweepAxis::None {
            comparisons(&mut rep, metric, &groups, bins);
        } else {
            anova(&mut rep, manifest, metric, &groups, bins);
        }
        trends(&mut rep, metric, &groups, bins);
    }
    Ok(rep)
}

fn comparisons(rep: &mut Report, metric: Metric, groups: &BTreeMap<GroupKey, Vec<CurveBins>>, bins: usize) {
    let conds: Vec<Condition> = groups.keys().map(|k| k.0).collect();
    for (i, &early) in conds.iter().enumerate() {
        for &late in &conds[i + 1..] {
            let (a, b) = (&groups[&(late, None)], &groups[&(early, None)]);
            let mut tests = Vec::new();
            for bin in 0..bins {
                match t_test_two_sample(&bin_column(a, bin), &bin_column(b, bin)) {
                    Ok(t) => tests.push((bin, t)),
                    Err(e) => rep.lines.push(format!("{metric} bin {} {late} vs {early}: skipped ({e})", bin + 1)),
                }
            }
            let ps: Vec<f64> = tests.iter().map(|(_, t)| t.p).collect();
            let adjusted = bonferroni(&ps, bins).expect("one test per bin at most");
            for ((bin, t), p_adj) in tests.into_iter().zip(adjusted) {
                let name = format!("{metric} bin {} {late} vs {early}", bin + 1);
                rep.lines.push(format!("{name}: {} (Bonferroni {})", format_t(&t), format_p(p_adj)));
                rep.records.push(StatRecord { test: name, statistic: t.t, df: vec![t.df], p: t.p, p_adjusted: p_adj });
            }
        }
    }
}

fn trends(rep: &mut Report, metric: Metric, groups: &BTreeMap<GroupKey, Vec<CurveBins>>, bins: usize) {
    if bins < 2 {
        return;
    }
    for ((cond, level), curves) in groups {
        let label = match level {
            Some(l) => format!("{cond} level {l}"),
            None => cond.to_string(),
        };
        let name = format!("{metric} {label} bin 1 vs bin {bins}");
        match t_test_two_sample(&bin_column(curves, 0), &bin_column(curves, bins - 1)) {
            Ok(t) => {
                rep.lines.push(format!("{name}: {}", format_t(&t)));
                rep.records.push(StatRecord { test: name, statistic: t.t, df: vec![t.df], p: t.p, p_adjusted: t.p });
            }
            Err(e) => rep.lines.push(format!("{name}: skipped ({e})")),
        }
    }
}

fn anova(
    rep: &mut Report,
    manifest: &Manifest,
    metric: Metric,
    groups: &BTreeMap<GroupKey, Vec<CurveBins>>,
    bins: usize,
) {
    if bins < 5 {
        rep.lines.push(format!("{metric} anova: skipped (needs at least 5 bins)"));
        return;
    }
    let present: Vec<Condition> = manifest.conditions.clone();
    // the taboo comparison is between the two rule conditions when both ran
    let conds: Vec<Condition> = if present.contains(&Condition::Important) && present.contains(&Condition::ImportantPlusSilly) {
        vec![Condition::Important, Condition::ImportantPlusSilly]
    } else {
        present
    };
    let cells: Vec<Vec<Vec<f64>>> = conds
        .iter()
        .map(|&c| {
            manifest
                .levels
                .iter()
                .map(|&l| {
                    groups.get(&(c, Some(l))).map_or_else(Vec::new, |v| v.iter().map(|cb| sweep_value(&cb.means)).collect())
                })
                .collect()
        })
        .collect();
    let axis = manifest.sweep;
    match anova_two_way(&cells) {
        Ok(table) => {
            let rows = [
                ("condition".to_string(), table.factor_a),
                (axis.to_string(), table.factor_b),
                (format!("condition x {axis}"), table.interaction),
            ];
            for (effect, e) in rows {
                let name = format!("{metric} bins 3-5 anova {effect}");
                rep.lines.push(format!("{name}: {}", format_f(&e, table.error_df)));
                rep.records.push(StatRecord { test: name, statistic: e.f, df: vec![e.df, table.error_df], p: e.p, p_adjusted: e.p });
            }
        }
        Err(e) => rep.lines.push(format!("{metric} bins 3-5 anova: skipped ({e})")),
    }
}

/// Writes `analysis/stats.json`, `analysis/report.txt` and every curve CSV
/// under `analysis/curves/`.
pub fn write_bundle(root: &Path, manifest: &Manifest, bins: usize) -> Result<Report, ExperimentError> {
    let runs = load_runs(root, manifest)?;
    let dir = root.join("analysis");
    write_curves(&dir.join("curves"), manifest, &runs, &Metric::ALL, bins)?;
    let report = stats_report(manifest, &runs, bins)?;
    let json = serde_json::to_string_pretty(&report.records).expect("records serialize") + "\n";
    let path = dir.join("stats.json");
    fs::write(&path, json).map_err(io_err(&path))?;
    let mut text = format!("# config_hash={}\n", manifest.spec_hash);
    for l in &report.lines {
        text.push_str(l);
        text.push('\n');
    }
    let path = dir.join("report.txt");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(report)
}

/// Curve bins declared by the experiment file.
pub fn spec_bins(root: &Path, manifest: &Manifest) -> Result<usize, ExperimentError> {
    let path = root.join(&manifest.spec_file);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let spec = super::ExperimentSpec::from_text(&text, None)?;
    if hex(&spec.hash()) != manifest.spec_hash {
        return Err(ExperimentError::Refused(format!("{} does not match the manifest", path.display())));
    }
    Ok(spec.options.bins)
}

/// Analysis of an experiment directory; rewrites the bundle and updates the
/// manifest.
pub fn analyze(root: &Path) -> Result<Report, ExperimentError> {
    let mut manifest = Manifest::read(root)?;
    if !manifest.is_complete() {
        let done = manifest.cells.iter().filter(|c| c.status == CellStatus::Complete).count();
        return Err(ExperimentError::Incomplete(format!("{done} of {} runs complete", manifest.cells.len())));
    }
    let bins = spec_bins(root, &manifest)?;
    let report = write_bundle(root, &manifest, bins)?;
    manifest.analysis = super::store::list_files(root, &root.join("analysis"));
    manifest.write(root)?;
    Ok(report)
}
