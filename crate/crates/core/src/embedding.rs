//! Linear embedding of raw frames next to `K` learned anchors.
//!
//! Frames are mapped by `W_f` (E x V) and anchors are the columns of `W_a` (E x K). The
//! score vector of a frame is its similarity to every anchor, `W_a^T W_f x`, and is the
//! K-dimensional observation consumed by the mixture likelihoods. The maps are trained with
//! a pairwise hinge ranking loss that pushes the anchor of the frame's current label above
//! every other anchor by a margin.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::FeatureCorpus;
use crate::error::{Error, Result};

/// Hyper-parameters of the embedding and its SGD training.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub embed_dim: usize,
    /// Hinge margin.
    pub margin: f64,
    /// Weight of the squared Frobenius norm of both maps.
    pub l2: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            embed_dim: 200,
            margin: 1.0,
            l2: 1e-4,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 200,
            epochs: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingWeights {
    /// Frame map, E x V.
    pub w_f: Array2<f64>,
    /// Anchor locations as columns, E x K.
    pub w_a: Array2<f64>,
    pub margin: f64,
    pub l2: f64,
}

impl EmbeddingWeights {
    pub fn new(w_f: Array2<f64>, w_a: Array2<f64>, margin: f64, l2: f64) -> Result<Self> {
        if w_f.nrows() != w_a.nrows() {
            return Err(Error::input(format!(
                "frame map has embedding dimension {} but anchor map has {}",
                w_f.nrows(),
                w_a.nrows()
            )));
        }
        if w_f.iter().chain(w_a.iter()).any(|x| !x.is_finite()) {
            return Err(Error::input("embedding weights must be finite"));
        }
        if !(margin > 0.0) || !(l2 >= 0.0) {
            return Err(Error::input("margin must be positive and l2 non-negative"));
        }
        Ok(EmbeddingWeights {
            w_f,
            w_a,
            margin,
            l2,
        })
    }

    /// Entries drawn i.i.d. uniform in `[-1/sqrt(E), 1/sqrt(E)]`.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        num_labels: usize,
        config: &EmbeddingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.embed_dim == 0 || input_dim == 0 || num_labels == 0 {
            return Err(Error::input("embedding dimensions must be positive"));
        }
        let bound = 1.0 / (config.embed_dim as f64).sqrt();
        let mut draw = |rows, cols| {
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
        };
        let w_f = draw(config.embed_dim, input_dim);
        let w_a = draw(config.embed_dim, num_labels);
        EmbeddingWeights::new(w_f, w_a, config.margin, config.l2)
    }

    pub fn embed_dim(&self) -> usize {
        self.w_f.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_f.ncols()
    }

    pub fn num_labels(&self) -> usize {
        self.w_a.ncols()
    }

    /// `W_a^T W_f`, the K x V map from raw features straight to scores.
    pub fn projection(&self) -> Array2<f64> {
        self.w_a.t().dot(&self.w_f)
    }

    pub fn squared_norm(&self) -> f64 {
        self.w_f.iter().chain(self.w_a.iter()).map(|x| x * x).sum()
    }

    /// Anchor similarities of one raw feature vector.
    pub fn scores(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::input(format!(
                "feature has dimension {} but the embedding expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.w_a.t().dot(&self.w_f.dot(&x)))
    }

    /// Scores of every frame of a `J x V` matrix, as a `J x K` matrix.
    pub fn score_matrix(&self, frames: &Array2<f64>) -> Result<Array2<f64>> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::input(format!(
                "features have dimension {} but the embedding expects {}",
                frames.ncols(),
                self.input_dim()
            )));
        }
        Ok(frames.dot(&self.projection().t()))
    }

    /// Label (1-based) of the most similar anchor.
    pub fn nearest_anchor(&self, x: ArrayView1<f64>) -> Result<usize> {
        let s = self.scores(x)?;
        let mut best = 0;
        for (k, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = k;
            }
        }
        Ok(best + 1)
    }
}

/// One training example: a raw feature vector and its 1-based label.
pub type LabeledFrame<'a> = (ArrayView1<'a, f64>, usize);

struct HingeTerms {
    loss: f64,
    grad_f: Array2<f64>,
    grad_a: Array2<f64>,
}

fn check_batch(weights: &EmbeddingWeights, batch: &[LabeledFrame<'_>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("ranking loss needs a non-empty batch"));
    }
    let k = weights.num_labels();
    for (x, label) in batch {
        if *label == 0 || *label > k {
            return Err(Error::input(format!("label {label} outside 1..={k}")));
        }
        if x.len() != weights.input_dim() {
            return Err(Error::input(format!(
                "feature has dimension {} but the embedding expects {}",
                x.len(),
                weights.input_dim()
            )));
        }
    }
    Ok(())
}

// Summed hinge terms and their subgradient; a hinge exactly at zero is inactive.
fn hinge_terms(weights: &EmbeddingWeights, batch: &[LabeledFrame<'_>]) -> HingeTerms {
    let (e, v, k) = (
        weights.embed_dim(),
        weights.input_dim(),
        weights.num_labels(),
    );
    let mut loss = 0.0;
    let mut grad_f = Array2::<f64>::zeros((e, v));
    let mut grad_a = Array2::<f64>::zeros((e, k));
    let mut anchor_dir = Array1::<f64>::zeros(e);
    for (x, label) in batch {
        let star = label - 1;
        let h = weights.w_f.dot(x);
        let f = weights.w_a.t().dot(&h);
        anchor_dir.fill(0.0);
        let mut active = 0usize;
        for j in 0..k {
            if j == star {
                continue;
            }
            let term = f[j] - f[star] + weights.margin;
            if term > 0.0 {
                loss += term;
                active += 1;
                anchor_dir += &weights.w_a.column(j);
                grad_a.column_mut(j).scaled_add(1.0, &h);
            }
        }
        if active == 0 {
            continue;
        }
        anchor_dir.scaled_add(-(active as f64), &weights.w_a.column(star));
        grad_a.column_mut(star).scaled_add(-(active as f64), &h);
        let outer = anchor_dir
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        grad_f += &outer;
    }
    HingeTerms {
        loss,
        grad_f,
        grad_a,
    }
}

/// Summed pairwise hinge loss over the batch plus `l2 * (|W_f|^2 + |W_a|^2)`.
pub fn ranking_loss(weights: &EmbeddingWeights, batch: &[LabeledFrame<'_>]) -> Result<f64> {
    check_batch(weights, batch)?;
    Ok(hinge_terms(weights, batch).loss + weights.l2 * weights.squared_norm())
}

/// Subgradient of [`ranking_loss`] with respect to `(W_f, W_a)`.
pub fn ranking_loss_grad(
    weights: &EmbeddingWeights,
    batch: &[LabeledFrame<'_>],
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_batch(weights, batch)?;
    let HingeTerms {
        mut grad_f,
        mut grad_a,
        ..
    } = hinge_terms(weights, batch);
    grad_f.scaled_add(2.0 * weights.l2, &weights.w_f);
    grad_a.scaled_add(2.0 * weights.l2, &weights.w_a);
    Ok((grad_f, grad_a))
}

/// Training objective: hinge loss averaged over frames plus the weight penalty.
///
/// Averaging keeps the step size independent of the batch size.
pub fn mean_objective(weights: &EmbeddingWeights, batch: &[LabeledFrame<'_>]) -> Result<f64> {
    check_batch(weights, batch)?;
    Ok(hinge_terms(weights, batch).loss / batch.len() as f64 + weights.l2 * weights.squared_norm())
}

fn collect_training_set<'a>(
    corpus: &'a FeatureCorpus,
    labels: &[Vec<usize>],
    num_labels: usize,
) -> Result<Vec<LabeledFrame<'a>>> {
    if labels.len() != corpus.len() {
        return Err(Error::input(format!(
            "{} label sequences for {} videos",
            labels.len(),
            corpus.len()
        )));
    }
    let mut frames = Vec::new();
    for (i, (video, z)) in corpus.videos().iter().zip(labels).enumerate() {
        if z.len() != video.nrows() {
            return Err(Error::input(format!(
                "video {} has {} frames but {} labels",
                corpus.ids()[i],
                video.nrows(),
                z.len()
            )));
        }
        for (row, &label) in video.rows().into_iter().zip(z) {
            if label > num_labels {
                return Err(Error::input(format!(
                    "label {label} outside 0..={num_labels}"
                )));
            }
            if label != 0 {
                frames.push((row, label));
            }
        }
    }
    if frames.is_empty() {
        return Err(Error::input("no labelled foreground frames to train on"));
    }
    Ok(frames)
}

/// Continues training `weights` with momentum SGD on the frames whose label is non-zero.
///
/// Returns the training objective over the whole training set before the first epoch and
/// after each epoch.
pub fn fit_embedding<R: Rng + ?Sized>(
    weights: &mut EmbeddingWeights,
    corpus: &FeatureCorpus,
    labels: &[Vec<usize>],
    config: &EmbeddingConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let frames = collect_training_set(corpus, labels, weights.num_labels())?;
    if config.batch_size == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    let mut trace = vec![mean_objective(weights, &frames)?];
    let mut vel_f = Array2::<f64>::zeros(weights.w_f.raw_dim());
    let mut vel_a = Array2::<f64>::zeros(weights.w_a.raw_dim());
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| frames[i]));
            let HingeTerms {
                mut grad_f,
                mut grad_a,
                ..
            } = hinge_terms(weights, &batch);
            let inv = 1.0 / batch.len() as f64;
            grad_f *= inv;
            grad_a *= inv;
            grad_f.scaled_add(2.0 * weights.l2, &weights.w_f);
            grad_a.scaled_add(2.0 * weights.l2, &weights.w_a);

            vel_f *= config.momentum;
            vel_f.scaled_add(-config.learning_rate, &grad_f);
            vel_a *= config.momentum;
            vel_a.scaled_add(-config.learning_rate, &grad_a);
            weights.w_f += &vel_f;
            weights.w_a += &vel_a;
        }
        trace.push(mean_objective(weights, &frames)?);
    }
    if weights
        .w_f
        .iter()
        .chain(weights.w_a.iter())
        .any(|x| !x.is_finite())
    {
        return Err(Error::state("embedding training diverged"));
    }
    Ok(trace)
}

/// Randomly initializes and trains an embedding for labels `1..=num_labels`.
pub fn train_embedding<R: Rng + ?Sized>(
    corpus: &FeatureCorpus,
    labels: &[Vec<usize>],
    num_labels: usize,
    config: &EmbeddingConfig,
    rng: &mut R,
) -> Result<EmbeddingWeights> {
    collect_training_set(corpus, labels, num_labels)?;
    let mut weights = EmbeddingWeights::random(corpus.dim(), num_labels, config, rng)?;
    fit_embedding(&mut weights, corpus, labels, config, rng)?;
    Ok(weights)
}
