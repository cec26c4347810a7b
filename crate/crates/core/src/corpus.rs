//! Raw per-frame feature sequences.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// `M` videos of the same procedure, each a `J_i x V` matrix of raw frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCorpus {
    ids: Vec<String>,
    videos: Vec<Array2<f64>>,
}

impl FeatureCorpus {
    pub fn new(ids: Vec<String>, videos: Vec<Array2<f64>>) -> Result<Self> {
        if ids.len() != videos.len() {
            return Err(Error::input(format!(
                "{} ids for {} videos",
                ids.len(),
                videos.len()
            )));
        }
        if videos.is_empty() {
            return Err(Error::input("corpus contains no videos"));
        }
        let dim = videos[0].ncols();
        for (id, video) in ids.iter().zip(&videos) {
            if video.nrows() == 0 {
                return Err(Error::input(format!("video {id} has no frames")));
            }
            if video.ncols() != dim {
                return Err(Error::input(format!(
                    "video {id} has feature dimension {} but {} has {dim}",
                    video.ncols(),
                    ids[0]
                )));
            }
            if video.iter().any(|x| !x.is_finite()) {
                return Err(Error::input(format!(
                    "video {id} contains non-finite values"
                )));
            }
        }
        Ok(FeatureCorpus { ids, videos })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn videos(&self) -> &[Array2<f64>] {
        &self.videos
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Raw feature dimension `V`.
    pub fn dim(&self) -> usize {
        self.videos[0].ncols()
    }

    pub fn frame_counts(&self) -> Vec<usize> {
        self.videos.iter().map(|v| v.nrows()).collect()
    }

    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.nrows()).sum()
    }
}

/// Per-dimension affine map to zero mean and unit variance over a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(corpus: &FeatureCorpus) -> Self {
        let dim = corpus.dim();
        let n = corpus.total_frames() as f64;
        let mut mean = Array1::<f64>::zeros(dim);
        for video in corpus.videos() {
            mean += &video.sum_axis(Axis(0));
        }
        mean /= n;
        let mut var = Array1::<f64>::zeros(dim);
        for video in corpus.videos() {
            for row in video.rows() {
                let d = &row - &mean;
                var += &(&d * &d);
            }
        }
        var /= n;
        // Constant dimensions are left unscaled.
        let scale = var.mapv(|v| if v > 1e-12 { v.sqrt() } else { 1.0 });
        Standardizer { mean, scale }
    }

    pub fn apply(&self, corpus: &FeatureCorpus) -> FeatureCorpus {
        let videos = corpus
            .videos()
            .iter()
            .map(|v| (v - &self.mean) / &self.scale)
            .collect();
        FeatureCorpus {
            ids: corpus.ids.clone(),
            videos,
        }
    }
}
