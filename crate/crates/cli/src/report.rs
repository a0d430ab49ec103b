//! Post-campaign analysis: turning logs (and an optional baseline
//! table) into per-relation rate tables, selection-frequency tables,
//! and a machine-readable summary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use morphic_core::relations::{param_grid, MrKind, ALL_MRS};
use morphic_core::verdicts::Verdict;
use serde::Serialize;
use thiserror::Error;

use crate::campaign::{LogRecord, RunMeta};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Malformed or inconsistent inputs. Usage errors for exit-code
    /// purposes.
    #[error("{0}")]
    Invalid(String),
}

impl ReportError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ReportError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn is_usage(&self) -> bool {
        matches!(self, ReportError::Invalid(_))
    }
}

/// Reads a campaign log, rejecting empty files and malformed lines.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let record: LogRecord = serde_json::from_str(line).map_err(|e| {
            ReportError::Invalid(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(ReportError::Invalid(format!(
            "{}: log holds no records",
            path.display()
        )));
    }
    Ok(records)
}

fn log_name(path: &Path) -> Result<String, ReportError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| {
            ReportError::Invalid(format!("{}: cannot derive a log name", path.display()))
        })
}

/// Reads the timing sidecar next to an artifact, if one exists.
fn read_meta(artifact: &Path) -> Option<RunMeta> {
    let mut os = artifact.as_os_str().to_os_string();
    os.push(".meta.json");
    let bytes = fs::read(os).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// Per-relation violation rates parsed back out of a baseline table:
/// the unweighted mean of the row averages belonging to each relation.
/// `None` when every row of the relation was empty.
fn read_baseline_rates(path: &Path) -> Result<BTreeMap<MrKind, Option<f64>>, ReportError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| ReportError::Invalid(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| ReportError::Invalid(format!("{}: {e}", path.display())))?;
    if headers.len() < 3 || &headers[0] != "mr" || &headers[1] != "param" {
        return Err(ReportError::Invalid(format!(
            "{}: not a baseline table (header starts {:?})",
            path.display(),
            headers.iter().take(2).collect::<Vec<_>>()
        )));
    }
    let avg_col = headers.len() - 1;
    if &headers[avg_col] != "avg" {
        return Err(ReportError::Invalid(format!(
            "{}: last column is {:?}, expected avg",
            path.display(),
            &headers[avg_col]
        )));
    }
    let mut sums: BTreeMap<MrKind, (f64, u64)> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| ReportError::Invalid(format!("{}: {e}", path.display())))?;
        let mr = ALL_MRS
            .into_iter()
            .find(|mr| mr.name() == &row[0])
            .ok_or_else(|| {
                ReportError::Invalid(format!("{}: unknown relation {:?}", path.display(), &row[0]))
            })?;
        let avg = &row[avg_col];
        if !avg.is_empty() {
            let value: f64 = avg.parse().map_err(|e| {
                ReportError::Invalid(format!("{}: bad avg {avg:?}: {e}", path.display()))
            })?;
            let entry = sums.entry(mr).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
        } else {
            sums.entry(mr).or_insert((0.0, 0));
        }
    }
    if sums.is_empty() {
        return Err(ReportError::Invalid(format!(
            "{}: table holds no rows",
            path.display()
        )));
    }
    Ok(sums
        .into_iter()
        .map(|(mr, (sum, n))| (mr, (n > 0).then(|| sum / n as f64)))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct LogSummary {
    pub records: u64,
    pub failed: u64,
    pub violations: u64,
    pub scored: u64,
    pub violation_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms_per_iteration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overhead_ms_per_iteration: Option<f64>,
}

/// Artifacts written by [`report`], in write order.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub mr_rates: PathBuf,
    pub selection_frequencies: PathBuf,
    pub rotation_params: PathBuf,
    pub shear_params: PathBuf,
    pub summary: PathBuf,
}

impl ReportPaths {
    pub fn all(&self) -> [&Path; 5] {
        [
            &self.mr_rates,
            &self.selection_frequencies,
            &self.rotation_params,
            &self.shear_params,
            &self.summary,
        ]
    }
}

struct LoadedLog {
    name: String,
    records: Vec<LogRecord>,
    meta: Option<RunMeta>,
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<LoadedLog>, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::Invalid("no logs given".into()));
    }
    let mut logs = Vec::with_capacity(paths.len());
    let mut registry: Option<String> = None;
    for path in paths {
        let name = log_name(path)?;
        if logs.iter().any(|l: &LoadedLog| l.name == name) {
            return Err(ReportError::Invalid(format!(
                "two logs share the name {name:?}; rename one"
            )));
        }
        let records = read_log(path)?;
        for record in &records {
            match &registry {
                None => registry = Some(record.registry.clone()),
                Some(expected) if *expected != record.registry => {
                    return Err(ReportError::Invalid(format!(
                        "{}: registry {} does not match {} seen earlier; \
                         these logs come from different relation sets",
                        path.display(),
                        record.registry,
                        expected
                    )));
                }
                Some(_) => {}
            }
        }
        let meta = read_meta(path);
        logs.push(LoadedLog {
            name,
            records,
            meta,
        });
    }
    Ok(logs)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ReportError> {
    csv::Writer::from_path(path).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })
}

fn csv_row(
    writer: &mut csv::Writer<fs::File>,
    path: &Path,
    row: &[String],
) -> Result<(), ReportError> {
    writer.write_record(row).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })
}

/// Builds the full report set under `out_dir`.
pub fn report(
    logs: &[PathBuf],
    baseline: Option<&Path>,
    out_dir: &Path,
) -> Result<ReportPaths, ReportError> {
    let loaded = load_logs(logs)?;
    let baseline_rates = baseline.map(read_baseline_rates).transpose()?;
    fs::create_dir_all(out_dir).map_err(|e| ReportError::io(out_dir, e))?;
    let paths = ReportPaths {
        mr_rates: out_dir.join("mr_rates.csv"),
        selection_frequencies: out_dir.join("selection_frequencies.csv"),
        rotation_params: out_dir.join("rotation_params.csv"),
        shear_params: out_dir.join("shear_params.csv"),
        summary: out_dir.join("summary.json"),
    };

    // Per-relation violation rates: scored selections only.
    let mut writer = csv_writer(&paths.mr_rates)?;
    csv_row(
        &mut writer,
        &paths.mr_rates,
        &["source", "mr", "selections", "violations", "rate"].map(String::from),
    )?;
    for log in &loaded {
        for mr in ALL_MRS {
            let scored = log
                .records
                .iter()
                .filter(|r| r.mr == mr && !r.failed)
                .count() as u64;
            let violations = log
                .records
                .iter()
                .filter(|r| r.mr == mr && r.verdict == Some(Verdict::Violated))
                .count() as u64;
            let rate = if scored == 0 {
                String::new()
            } else {
                format!("{}", violations as f64 / scored as f64)
            };
            csv_row(
                &mut writer,
                &paths.mr_rates,
                &[
                    log.name.clone(),
                    mr.name().into(),
                    scored.to_string(),
                    violations.to_string(),
                    rate,
                ],
            )?;
        }
    }
    if let Some(rates) = &baseline_rates {
        for mr in ALL_MRS {
            let rate = rates
                .get(&mr)
                .copied()
                .flatten()
                .map(|r| format!("{r}"))
                .unwrap_or_default();
            csv_row(
                &mut writer,
                &paths.mr_rates,
                &[
                    "baseline".into(),
                    mr.name().into(),
                    String::new(),
                    String::new(),
                    rate,
                ],
            )?;
        }
    }
    writer
        .flush()
        .map_err(|e| ReportError::io(&paths.mr_rates, e))?;

    // How often each relation was picked, failures included: the
    // selection happened whether or not the SUT answered.
    let mut writer = csv_writer(&paths.selection_frequencies)?;
    csv_row(
        &mut writer,
        &paths.selection_frequencies,
        &["source", "mr", "count", "frequency"].map(String::from),
    )?;
    for log in &loaded {
        let total = log.records.len() as u64;
        for mr in ALL_MRS {
            let count = log.records.iter().filter(|r| r.mr == mr).count() as u64;
            csv_row(
                &mut writer,
                &paths.selection_frequencies,
                &[
                    log.name.clone(),
                    mr.name().into(),
                    count.to_string(),
                    format!("{}", count as f64 / total as f64),
                ],
            )?;
        }
    }
    writer
        .flush()
        .map_err(|e| ReportError::io(&paths.selection_frequencies, e))?;

    write_param_table(&paths.rotation_params, MrKind::Rotation, &loaded)?;
    write_param_table(&paths.shear_params, MrKind::Shear, &loaded)?;

    let summaries: BTreeMap<&str, LogSummary> = loaded
        .iter()
        .map(|log| (log.name.as_str(), summarize(log)))
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&summaries).expect("summary serialises");
    bytes.push(b'\n');
    fs::write(&paths.summary, bytes).map_err(|e| ReportError::io(&paths.summary, e))?;
    Ok(paths)
}

/// Parameter pick counts for one parameterized relation, every grid
/// value listed even at zero so the table shape is fixed.
fn write_param_table(
    path: &Path,
    mr: MrKind,
    loaded: &[LoadedLog],
) -> Result<(), ReportError> {
    let grid = param_grid(mr).expect("parameterized");
    let mut writer = csv_writer(path)?;
    csv_row(
        &mut writer,
        path,
        &["source", "param", "count", "share"].map(String::from),
    )?;
    for log in loaded {
        let total = log.records.iter().filter(|r| r.mr == mr).count() as u64;
        for &param in grid {
            let count = log
                .records
                .iter()
                .filter(|r| r.mr == mr && r.param == Some(param))
                .count() as u64;
            let share = if total == 0 {
                String::new()
            } else {
                format!("{}", count as f64 / total as f64)
            };
            csv_row(
                &mut writer,
                path,
                &[log.name.clone(), param.to_string(), count.to_string(), share],
            )?;
        }
    }
    writer.flush().map_err(|e| ReportError::io(path, e))
}

fn summarize(log: &LoadedLog) -> LogSummary {
    let records = log.records.len() as u64;
    let failed = log.records.iter().filter(|r| r.failed).count() as u64;
    let violations = log
        .records
        .iter()
        .filter(|r| r.verdict == Some(Verdict::Violated))
        .count() as u64;
    let scored = records - failed;
    LogSummary {
        records,
        failed,
        violations,
        scored,
        violation_rate: if scored == 0 {
            0.0
        } else {
            violations as f64 / scored as f64
        },
        wall_ms_per_iteration: log.meta.as_ref().map(|m| m.wall_ms_per_iteration),
        overhead_ms_per_iteration: log.meta.as_ref().map(|m| m.overhead_ms_per_iteration),
    }
}

/// Head-to-head outcome of two campaigns, by final cumulative
/// violation rate.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub amt_rate: f64,
    pub random_rate: f64,
    pub difference: f64,
    pub amt_exceeds_random: bool,
}

pub fn compare(amt: &Path, random: &Path) -> Result<Comparison, ReportError> {
    let final_rate = |path: &Path| -> Result<f64, ReportError> {
        let records = read_log(path)?;
        Ok(records.last().expect("read_log rejects empty").cumulative_violation_rate)
    };
    let amt_rate = final_rate(amt)?;
    let random_rate = final_rate(random)?;
    Ok(Comparison {
        amt_rate,
        random_rate,
        difference: amt_rate - random_rate,
        amt_exceeds_random: amt_rate > random_rate,
    })
}

/// Writes a comparison as a single JSON line.
pub fn write_comparison(
    comparison: &Comparison,
    mut out: impl Write,
) -> Result<(), std::io::Error> {
    let bytes = serde_json::to_vec(comparison).expect("comparison serialises");
    out.write_all(&bytes)?;
    out.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{RngTrace, SourceOutput};
    use morphic_core::hierarchy::registry_hash;
    use morphic_core::relations::MR_COUNT;

    fn record(iteration: u64, mr: MrKind, param: Option<i32>, verdict: Option<Verdict>) -> LogRecord {
        LogRecord {
            iteration,
            source_id: format!("img-{iteration}"),
            source_class: Some(0),
            source_output: verdict.is_some().then_some(SourceOutput::Label(0)),
            mr,
            param,
            main_propensity: 1.0 / MR_COUNT as f64,
            param_propensity: param.map(|_| 0.5),
            failed: verdict.is_none(),
            verdict,
            main_reward: verdict.map(|v| match v {
                Verdict::Violated => 1.0,
                Verdict::Pass => 0.0,
            }),
            param_reward: None,
            cumulative_violation_rate: 0.0,
            registry: registry_hash(),
            rng: RngTrace {
                source_pos: 0,
                explore_pos: None,
                main_pos: None,
                rotation_pos: None,
                shear_pos: None,
                oracle_pos: None,
            },
        }
    }

    fn write_log(dir: &Path, name: &str, records: &[LogRecord]) -> PathBuf {
        let path = dir.join(name);
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).unwrap());
            text.push('\n');
        }
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn empty_log_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let err = read_log(&path).unwrap_err();
        assert!(err.to_string().contains("no records"), "{err}");
    }

    #[test]
    fn mixed_registries_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_log(
            dir.path(),
            "a.jsonl",
            &[record(1, MrKind::Blur, None, Some(Verdict::Pass))],
        );
        let mut tampered = record(1, MrKind::Blur, None, Some(Verdict::Pass));
        tampered.registry = "0000000000000000".into();
        let b = write_log(dir.path(), "b.jsonl", &[tampered]);
        let err = report(&[a, b], None, &dir.path().join("out")).unwrap_err();
        assert!(err.to_string().contains("different relation sets"), "{err}");
    }

    #[test]
    fn duplicate_log_names_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("sub");
        fs::create_dir(&sub).unwrap();
        let a = write_log(
            dir.path(),
            "run.jsonl",
            &[record(1, MrKind::Blur, None, Some(Verdict::Pass))],
        );
        let b = write_log(&sub, "run.jsonl", &[record(1, MrKind::Invert, None, None)]);
        let err = report(&[a, b], None, &dir.path().join("out")).unwrap_err();
        assert!(err.to_string().contains("share the name"), "{err}");
    }

    #[test]
    fn rate_table_counts_scored_selections_only() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_log(
            dir.path(),
            "run.jsonl",
            &[
                record(1, MrKind::FlipUd, None, Some(Verdict::Violated)),
                record(2, MrKind::FlipUd, None, Some(Verdict::Pass)),
                record(3, MrKind::FlipUd, None, None), // failed
                record(4, MrKind::Blur, None, Some(Verdict::Violated)),
            ],
        );
        let out = dir.path().join("out");
        let paths = report(&[log], None, &out).unwrap();
        let table = fs::read_to_string(&paths.mr_rates).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 1 + MR_COUNT);
        assert_eq!(lines[1], "run,blur,1,1,1");
        assert_eq!(lines[3], "run,flip_ud,2,1,0.5");
        // Never-selected relations get an empty rate, not 0.
        assert_eq!(lines[4], "run,grayscale,0,0,");
    }

    #[test]
    fn selection_frequencies_sum_to_one_and_include_failures() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_log(
            dir.path(),
            "run.jsonl",
            &[
                record(1, MrKind::FlipUd, None, Some(Verdict::Violated)),
                record(2, MrKind::FlipUd, None, None),
                record(3, MrKind::Blur, None, Some(Verdict::Pass)),
                record(4, MrKind::Rotation, Some(45), Some(Verdict::Pass)),
            ],
        );
        let out = dir.path().join("out");
        let paths = report(&[log], None, &out).unwrap();
        let table = fs::read_to_string(&paths.selection_frequencies).unwrap();
        let mut total = 0.0;
        for line in table.lines().skip(1) {
            let freq: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            total += freq;
        }
        assert_eq!(total, 1.0);
        assert!(table.contains("run,flip_ud,2,0.5"));
    }

    #[test]
    fn param_tables_cover_the_whole_grid() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_log(
            dir.path(),
            "run.jsonl",
            &[
                record(1, MrKind::Rotation, Some(-30), Some(Verdict::Pass)),
                record(2, MrKind::Rotation, Some(-30), Some(Verdict::Violated)),
                record(3, MrKind::Rotation, Some(5), None),
                record(4, MrKind::Blur, None, Some(Verdict::Pass)),
            ],
        );
        let out = dir.path().join("out");
        let paths = report(&[log], None, &out).unwrap();
        let rotation = fs::read_to_string(&paths.rotation_params).unwrap();
        assert_eq!(rotation.lines().count(), 1 + 36);
        assert!(rotation.contains("run,-30,2,"));
        // The failed pick at +5 still counts as a selection.
        assert!(rotation.contains("run,5,1,"));
        let shear = fs::read_to_string(&paths.shear_params).unwrap();
        assert_eq!(shear.lines().count(), 1 + 18);
        // Untouched relation: counts zero, shares empty.
        assert!(shear.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn summary_counts_and_optional_meta() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_log(
            dir.path(),
            "run.jsonl",
            &[
                record(1, MrKind::FlipUd, None, Some(Verdict::Violated)),
                record(2, MrKind::Blur, None, None),
            ],
        );
        let meta = RunMeta {
            iterations: 2,
            wall_ms_total: 10.0,
            wall_ms_per_iteration: 5.0,
            overhead_ms_per_iteration: 1.25,
        };
        fs::write(
            dir.path().join("run.jsonl.meta.json"),
            serde_json::to_vec(&meta).unwrap(),
        )
        .unwrap();
        let out = dir.path().join("out");
        let paths = report(&[log], None, &out).unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&paths.summary).unwrap()).unwrap();
        assert_eq!(summary["run"]["records"], 2);
        assert_eq!(summary["run"]["failed"], 1);
        assert_eq!(summary["run"]["violations"], 1);
        assert_eq!(summary["run"]["scored"], 1);
        assert_eq!(summary["run"]["violation_rate"], 1.0);
        assert_eq!(summary["run"]["overhead_ms_per_iteration"], 1.25);
    }

    #[test]
    fn baseline_rows_average_the_row_avgs() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_log(
            dir.path(),
            "run.jsonl",
            &[record(1, MrKind::Blur, None, Some(Verdict::Pass))],
        );
        let baseline = dir.path().join("baseline.csv");
        fs::write(
            &baseline,
            "mr,param,class_0,avg\n\
             blur,,0.1,0.1\n\
             rotation,5,0.2,0.2\n\
             rotation,10,0.4,0.4\n\
             shear,5,,\n",
        )
        .unwrap();
        let out = dir.path().join("out");
        let paths = report(&[log], None, &out).unwrap(); // smoke without baseline
        assert!(paths.mr_rates.exists());
        let paths = report(&[dir.path().join("run.jsonl")], Some(&baseline), &out).unwrap();
        let table = fs::read_to_string(&paths.mr_rates).unwrap();
        assert!(table.contains("baseline,blur,,,0.1"));
        assert!(table.contains("baseline,rotation,,,0.30000000000000004"));
        // All-empty relation rows stay empty; absent relations too.
        assert!(table.contains("baseline,shear,,,\n"));
        assert!(table.contains("baseline,invert,,,\n"));
    }

    #[test]
    fn compare_reads_final_cumulative_rates() {
        let dir = tempfile::tempdir().unwrap();
        let mut winning = record(1, MrKind::FlipUd, None, Some(Verdict::Violated));
        winning.cumulative_violation_rate = 0.5;
        let mut losing = record(1, MrKind::Blur, None, Some(Verdict::Pass));
        losing.cumulative_violation_rate = 0.125;
        let amt = write_log(dir.path(), "amt.jsonl", &[winning]);
        let random = write_log(dir.path(), "random.jsonl", &[losing]);
        let c = compare(&amt, &random).unwrap();
        assert_eq!(c.amt_rate, 0.5);
        assert_eq!(c.random_rate, 0.125);
        assert_eq!(c.difference, 0.375);
        assert!(c.amt_exceeds_random);
        let mut buf = Vec::new();
        write_comparison(&c, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"amt_rate\":0.5,\"random_rate\":0.125,\"difference\":0.375,\"amt_exceeds_random\":true}\n"
        );
    }
}
