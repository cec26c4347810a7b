//! End-to-end entry points behind the command-line tool.

use std::path::Path;

use serde::Serialize;

use crate::corpus::FeatureCorpus;
use crate::error::Result;
use crate::evalmetrics::{evaluate_corpus, Scores};
use crate::inference::{run_inference_with, RunConfig};
use crate::io::{
    check_label_lengths, segments_from_labels, write_features, write_json, write_labels,
    IterationMetrics, RunSummary, VideoSegments,
};
use crate::synth::{GeneratorConfig, GroundTruth, SyntheticCorpus};

/// Segments a corpus; with ground truth, scores every iteration and the final result.
pub fn segment_corpus(
    corpus: &FeatureCorpus,
    truth: Option<&[Vec<usize>]>,
    config: &RunConfig,
) -> Result<RunSummary> {
    if let Some(labels) = truth {
        check_label_lengths(corpus, labels)?;
    }
    let mut per_iteration = Vec::new();
    let mut failure = None;
    let result = run_inference_with(corpus, config, |iteration, states| {
        if let Some(gt) = truth {
            let pred: Vec<Vec<usize>> = states.iter().map(|s| s.z.clone()).collect();
            match evaluate_corpus(gt, &pred) {
                Ok(scores) => per_iteration.push(IterationMetrics { iteration, scores }),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let pred: Vec<Vec<usize>> = result.states.iter().map(|s| s.z.clone()).collect();
    let metrics = truth.map(|gt| evaluate_corpus(gt, &pred)).transpose()?;
    Ok(RunSummary {
        config: config.clone(),
        seed: config.seed,
        iterations: result.diagnostics,
        metrics,
        metrics_per_iteration: per_iteration,
        videos: corpus
            .ids()
            .iter()
            .zip(&pred)
            .map(|(id, z)| VideoSegments {
                id: id.clone(),
                segments: segments_from_labels(z),
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct TruthFile<'a> {
    config: &'a GeneratorConfig,
    ids: &'a [String],
    truth: &'a GroundTruth,
}

/// Writes features, labels and `truth.json` for a generated corpus.
pub fn write_synthetic(dir: &Path, config: &GeneratorConfig, data: &SyntheticCorpus) -> Result<()> {
    write_features(dir, &data.corpus)?;
    write_labels(dir, data.corpus.ids(), &data.labels)?;
    write_json(
        &dir.join("truth.json"),
        &TruthFile {
            config,
            ids: data.corpus.ids(),
            truth: &data.truth,
        },
    )
}

/// Prints scores as `metric=value` lines.
pub fn format_scores(scores: &Scores) -> String {
    let mut out = format!(
        "mof={:.6}\njaccard={:.6}\nf1={:.6}\n",
        scores.mof, scores.jaccard, scores.f1
    );
    if let Some(r) = scores.background_recall {
        out.push_str(&format!("background_recall={r:.6}\n"));
    }
    out
}
