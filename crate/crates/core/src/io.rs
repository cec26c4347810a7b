//! Corpus files and run outputs.
//!
//! A corpus directory holds `<id>.feat.csv` (one frame per row, comma-separated, no header)
//! and optionally `<id>.labels.csv` (one integer per line, 0 = background). Ids are sorted
//! lexicographically to fix the video order.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureCorpus;
use crate::error::{Error, Result};
use crate::evalmetrics::Scores;
use crate::inference::{IterationDiagnostics, RunConfig};

pub const FEATURE_SUFFIX: &str = ".feat.csv";
pub const LABEL_SUFFIX: &str = ".labels.csv";
pub const SEGMENTATION_SUFFIX: &str = ".seg.csv";

fn list_ids(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(id) = entry
            .file_name()
            .to_str()
            .and_then(|n| n.strip_suffix(suffix))
        {
            if !id.is_empty() {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e
        .position()
        .map(|p| format!(" line {}", p.line()))
        .unwrap_or_default();
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::input(format!("{}{line}: {kind:?}", path.display())),
    }
}

/// Parses one feature matrix; every row must have the same number of numeric cells.
pub fn read_feature_file(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv_reader(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::input(format!(
                    "{} line {line}: expected {c} values, found {}",
                    path.display(),
                    record.len()
                )))
            }
            _ => {}
        }
        for cell in record.iter() {
            let x: f64 = cell.parse().map_err(|_| {
                Error::input(format!(
                    "{} line {line}: '{cell}' is not a number",
                    path.display()
                ))
            })?;
            if !x.is_finite() {
                return Err(Error::input(format!(
                    "{} line {line}: non-finite value '{cell}'",
                    path.display()
                )));
            }
            values.push(x);
        }
        rows += 1;
    }
    let cols =
        cols.ok_or_else(|| Error::input(format!("{} contains no frames", path.display())))?;
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::state(e.to_string()))
}

/// Loads every `<id>.feat.csv` in `dir`.
pub fn read_features(dir: &Path) -> Result<FeatureCorpus> {
    let ids = list_ids(dir, FEATURE_SUFFIX)?;
    if ids.is_empty() {
        return Err(Error::input(format!(
            "{} contains no *{FEATURE_SUFFIX} files",
            dir.display()
        )));
    }
    let mut videos: Vec<Array2<f64>> = Vec::with_capacity(ids.len());
    for id in &ids {
        let path = dir.join(format!("{id}{FEATURE_SUFFIX}"));
        let x = read_feature_file(&path)?;
        if let Some(first) = videos.first() {
            if first.ncols() != x.ncols() {
                return Err(Error::input(format!(
                    "{} has {} columns but {} has {}",
                    path.display(),
                    x.ncols(),
                    dir.join(format!("{}{FEATURE_SUFFIX}", ids[0])).display(),
                    first.ncols()
                )));
            }
        }
        videos.push(x);
    }
    FeatureCorpus::new(ids, videos)
}

/// Parses one label file: a non-negative integer per line, blank lines ignored.
pub fn read_label_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        let label = cell.parse::<usize>().map_err(|_| {
            Error::input(format!(
                "{} line {}: '{cell}' is not a non-negative integer label",
                path.display(),
                i + 1
            ))
        })?;
        labels.push(label);
    }
    Ok(labels)
}

/// Labels for `ids`, or `None` when any of them lacks a label file.
pub fn read_labels(dir: &Path, ids: &[String]) -> Result<Option<Vec<Vec<usize>>>> {
    let paths: Vec<PathBuf> = ids
        .iter()
        .map(|id| dir.join(format!("{id}{LABEL_SUFFIX}")))
        .collect();
    if !paths.iter().all(|p| p.is_file()) {
        return Ok(None);
    }
    paths
        .iter()
        .map(|p| read_label_file(p))
        .collect::<Result<_>>()
        .map(Some)
}

/// Checks that every label sequence has one entry per frame.
pub fn check_label_lengths(corpus: &FeatureCorpus, labels: &[Vec<usize>]) -> Result<()> {
    if labels.len() != corpus.len() {
        return Err(Error::input(format!(
            "{} label sequences for {} videos",
            labels.len(),
            corpus.len()
        )));
    }
    for ((id, x), z) in corpus.ids().iter().zip(corpus.videos()).zip(labels) {
        if x.nrows() != z.len() {
            return Err(Error::input(format!(
                "video {id}: {} frames but {} labels",
                x.nrows(),
                z.len()
            )));
        }
    }
    Ok(())
}

/// Reads `frame,label` rows; frames must run 0, 1, 2, ... in order.
pub fn read_segmentation_file(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv_reader(path)?;
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record
            .position()
            .map_or(labels.len() + 1, |p| p.line() as usize);
        let bad = || {
            Error::input(format!(
                "{} line {line}: expected 'frame,label'",
                path.display()
            ))
        };
        if record.len() != 2 {
            return Err(bad());
        }
        let frame: usize = record[0].parse().map_err(|_| bad())?;
        let label: usize = record[1].parse().map_err(|_| bad())?;
        if frame != labels.len() {
            return Err(Error::input(format!(
                "{} line {line}: frame {frame} out of sequence",
                path.display()
            )));
        }
        labels.push(label);
    }
    Ok(labels)
}

/// Predicted labels for `id`: `<id>.seg.csv` if present, else `<id>.labels.csv`.
pub fn read_prediction(dir: &Path, id: &str) -> Result<Vec<usize>> {
    let seg = dir.join(format!("{id}{SEGMENTATION_SUFFIX}"));
    if seg.is_file() {
        return read_segmentation_file(&seg);
    }
    let labels = dir.join(format!("{id}{LABEL_SUFFIX}"));
    if labels.is_file() {
        return read_label_file(&labels);
    }
    Err(Error::input(format!(
        "{} has no prediction for video {id}",
        dir.display()
    )))
}

/// Ids that have ground-truth label files in `dir`.
pub fn label_ids(dir: &Path) -> Result<Vec<String>> {
    list_ids(dir, LABEL_SUFFIX)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<id>.feat.csv` per video. Values use the shortest exact decimal form.
pub fn write_features(dir: &Path, corpus: &FeatureCorpus) -> Result<()> {
    create_dir(dir)?;
    for (id, x) in corpus.ids().iter().zip(corpus.videos()) {
        let mut text = String::new();
        for row in x.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write_text(&dir.join(format!("{id}{FEATURE_SUFFIX}")), &text)?;
    }
    Ok(())
}

pub fn write_labels(dir: &Path, ids: &[String], labels: &[Vec<usize>]) -> Result<()> {
    create_dir(dir)?;
    for (id, z) in ids.iter().zip(labels) {
        let text: String = z.iter().map(|l| format!("{l}\n")).collect();
        write_text(&dir.join(format!("{id}{LABEL_SUFFIX}")), &text)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::state(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Maximal run of one label, frames `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: usize,
    pub start: usize,
    pub end: usize,
}

pub fn segments_from_labels(z: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (j, &label) in z.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.label == label => s.end = j + 1,
            _ => out.push(Segment {
                label,
                start: j,
                end: j + 1,
            }),
        }
    }
    out
}

pub fn labels_from_segments(segments: &[Segment]) -> Vec<usize> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, s.end - s.start))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSegments {
    pub id: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub scores: Scores,
}

/// Everything `summary.json` records about a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub seed: u64,
    pub iterations: Vec<IterationDiagnostics>,
    /// Scores of the final segmentation when ground truth was supplied.
    pub metrics: Option<Scores>,
    pub metrics_per_iteration: Vec<IterationMetrics>,
    pub videos: Vec<VideoSegments>,
}

impl RunSummary {
    pub fn labels(&self) -> Vec<Vec<usize>> {
        self.videos
            .iter()
            .map(|v| labels_from_segments(&v.segments))
            .collect()
    }
}

/// Writes per-video segmentations, `summary.json`, `trace.csv` and `segments_sample.csv`.
///
/// The sampled frame per segment is drawn from a generator seeded with the run seed.
pub fn write_outputs(dir: &Path, summary: &RunSummary) -> Result<()> {
    create_dir(dir)?;
    for video in &summary.videos {
        let z = labels_from_segments(&video.segments);
        let text: String = z
            .iter()
            .enumerate()
            .map(|(j, l)| format!("{j},{l}\n"))
            .collect();
        write_text(
            &dir.join(format!("{}{SEGMENTATION_SUFFIX}", video.id)),
            &text,
        )?;
    }
    write_json(&dir.join("summary.json"), summary)?;

    let mut trace = String::from("iteration,log_joint,background_frames,embedding_loss");
    let k = summary.config.k;
    for i in 1..k {
        trace.push_str(&format!(",rho_{i}"));
    }
    trace.push('\n');
    for d in &summary.iterations {
        trace.push_str(&format!(
            "{},{},{}",
            d.iteration, d.log_joint, d.background_frames
        ));
        trace.push_str(
            &d.embedding_loss
                .map_or_else(|| ",".to_string(), |l| format!(",{l}")),
        );
        for r in &d.rho {
            trace.push_str(&format!(",{r}"));
        }
        trace.push('\n');
    }
    write_text(&dir.join("trace.csv"), &trace)?;

    let mut rng = ChaCha8Rng::seed_from_u64(summary.seed);
    let mut sample = String::from("video,label,start,end,frame\n");
    for video in &summary.videos {
        for s in &video.segments {
            let frame = rng.random_range(s.start..s.end);
            sample.push_str(&format!(
                "{},{},{},{},{frame}\n",
                video.id, s.label, s.start, s.end
            ));
        }
    }
    write_text(&dir.join("segments_sample.csv"), &sample)
}
