//! Per-label Gaussian mixtures over score vectors and the frame log-likelihood cache.
//!
//! Every sub-activity (and the background class, when modelled) owns a `Q`-component
//! mixture whose components share one diagonal covariance. The samplers never evaluate a
//! density directly: they sum entries of a [`LogLikCache`] built once per outer iteration.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::{log_sum_exp, sample_index};
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A Gaussian mixture with one diagonal covariance shared by all components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl Mixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::input("mixture needs one mean per weight"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::input("mixture weights must lie on the simplex"));
        }
        let dim = variances.len();
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::input(
                "mixture means and variances disagree on dimension",
            ));
        }
        if variances
            .iter()
            .any(|v| !(*v >= VARIANCE_FLOOR) || !v.is_finite())
        {
            return Err(Error::input(
                "mixture variances must be finite and at least the floor",
            ));
        }
        Ok(Mixture {
            weights,
            means,
            variances,
        })
    }

    /// A single unit-variance component at `center`.
    pub fn unit(center: Vec<f64>) -> Self {
        let dim = center.len();
        Mixture {
            weights: vec![1.0],
            means: vec![center],
            variances: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    fn log_normalizer(&self) -> f64 {
        -0.5 * self.variances.iter().map(|v| LN_2PI + v.ln()).sum::<f64>()
    }

    fn component_log_densities(&self, f: ArrayView1<f64>, norm: f64, out: &mut [f64]) {
        for (q, (w, mean)) in self.weights.iter().zip(&self.means).enumerate() {
            let quad: f64 = f
                .iter()
                .zip(mean)
                .zip(&self.variances)
                .map(|((x, m), v)| (x - m) * (x - m) / v)
                .sum();
            out[q] = w.ln() + norm - 0.5 * quad;
        }
    }

    fn log_density(&self, f: ArrayView1<f64>) -> f64 {
        let mut terms = vec![0.0; self.num_components()];
        self.component_log_densities(f, self.log_normalizer(), &mut terms);
        log_sum_exp(&terms)
    }
}

/// Log of the mixture density at `f`.
pub fn frame_log_likelihood(mixture: &Mixture, f: ArrayView1<f64>) -> Result<f64> {
    if f.len() != mixture.dim() {
        return Err(Error::input(format!(
            "score vector has dimension {} but the mixture has {}",
            f.len(),
            mixture.dim()
        )));
    }
    Ok(mixture.log_density(f))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once an iteration improves the log-likelihood by less than this.
    pub tolerance: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 50,
            tolerance: 1e-6,
        }
    }
}

/// A fitted mixture and the data log-likelihood before the first and after every M-step.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: Mixture,
    pub log_likelihood: Vec<f64>,
}

fn kmeanspp_centers<R: Rng + ?Sized>(
    points: ArrayView2<f64>,
    q: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let mut centers = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, &centers[0]))
        .collect();
    while centers.len() < q {
        let total: f64 = nearest.iter().sum();
        // Fewer distinct points than components: duplicate an existing point.
        let pick = if total > 0.0 {
            sample_index(&nearest, rng)
        } else {
            rng.random_range(0..n)
        };
        let center = points.row(pick).to_vec();
        for (d, p) in nearest.iter_mut().zip(points.rows()) {
            *d = d.min(sq_dist(p, &center));
        }
        centers.push(center);
    }
    centers
}

fn sq_dist(p: ArrayView1<f64>, c: &[f64]) -> f64 {
    p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn e_step(mixture: &Mixture, points: ArrayView2<f64>, resp: &mut Array2<f64>) -> f64 {
    let norm = mixture.log_normalizer();
    let mut total = 0.0;
    let mut terms = vec![0.0; mixture.num_components()];
    for (p, mut r) in points.rows().into_iter().zip(resp.rows_mut()) {
        mixture.component_log_densities(p, norm, &mut terms);
        let lse = log_sum_exp(&terms);
        total += lse;
        for (slot, t) in r.iter_mut().zip(&terms) {
            *slot = (t - lse).exp();
        }
    }
    total
}

fn m_step(mixture: &mut Mixture, points: ArrayView2<f64>, resp: &Array2<f64>) {
    let n = points.nrows() as f64;
    let mass = resp.sum_axis(Axis(0));
    for q in 0..mixture.num_components() {
        mixture.weights[q] = mass[q] / n;
        if mass[q] > 0.0 {
            let mean = resp.column(q).dot(&points) / mass[q];
            mixture.means[q] = mean.to_vec();
        }
    }
    let total_weight: f64 = mixture.weights.iter().sum();
    for w in &mut mixture.weights {
        *w /= total_weight;
    }
    let dim = points.ncols();
    let mut var = Array1::<f64>::zeros(dim);
    for (p, r) in points.rows().into_iter().zip(resp.rows()) {
        for (q, mean) in mixture.means.iter().enumerate() {
            if r[q] == 0.0 {
                continue;
            }
            for d in 0..dim {
                let diff = p[d] - mean[d];
                var[d] += r[q] * diff * diff;
            }
        }
    }
    for (slot, v) in mixture.variances.iter_mut().zip(var.iter()) {
        *slot = (v / n).max(VARIANCE_FLOOR);
    }
}

/// Fits a `q`-component shared-diagonal mixture to the rows of `points` by EM.
///
/// Components are seeded k-means++ style from `rng`; the variances start at the pooled
/// per-dimension variance of the data.
pub fn fit_mixture<R: Rng + ?Sized>(
    points: ArrayView2<f64>,
    q: usize,
    rng: &mut R,
    config: &EmConfig,
) -> Result<EmFit> {
    if points.nrows() == 0 {
        return Err(Error::input("cannot fit a mixture to an empty point set"));
    }
    if q == 0 {
        return Err(Error::input("a mixture needs at least one component"));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("mixture data contains non-finite values"));
    }
    let n = points.nrows() as f64;
    let mean = points.sum_axis(Axis(0)) / n;
    let variances = points
        .rows()
        .into_iter()
        .fold(Array1::<f64>::zeros(points.ncols()), |acc, p| {
            let d = &p - &mean;
            acc + &d * &d
        })
        .mapv(|v| (v / n).max(VARIANCE_FLOOR))
        .to_vec();
    let mut mixture = Mixture {
        weights: vec![1.0 / q as f64; q],
        means: kmeanspp_centers(points, q, rng),
        variances,
    };

    let mut resp = Array2::<f64>::zeros((points.nrows(), q));
    let mut ll = e_step(&mixture, points, &mut resp);
    let mut trace = vec![ll];
    for _ in 0..config.max_iters {
        m_step(&mut mixture, points, &resp);
        let next = e_step(&mixture, points, &mut resp);
        trace.push(next);
        if next - ll < config.tolerance {
            break;
        }
        ll = next;
    }
    Ok(EmFit {
        mixture,
        log_likelihood: trace,
    })
}

/// One mixture per sub-activity plus the optional background mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubActivityMixtures {
    /// Index `k - 1` holds the mixture of label `k`.
    pub labels: Vec<Mixture>,
    pub background: Option<Mixture>,
}

impl SubActivityMixtures {
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Mixture for `label`, where 0 is background.
    pub fn get(&self, label: usize) -> Option<&Mixture> {
        if label == 0 {
            self.background.as_ref()
        } else {
            self.labels.get(label - 1)
        }
    }
}

/// Refits every label's mixture on the score rows currently assigned to it.
///
/// A class with no frames keeps its mixture from `previous`, or falls back to a single
/// unit-variance component at the mean score of the whole corpus.
#[allow(clippy::too_many_arguments)]
pub fn fit_sub_activity_mixtures<R: Rng + ?Sized>(
    scores: &[Array2<f64>],
    labels: &[Vec<usize>],
    num_labels: usize,
    q: usize,
    background: bool,
    previous: Option<&SubActivityMixtures>,
    config: &EmConfig,
    rng: &mut R,
) -> Result<SubActivityMixtures> {
    if scores.len() != labels.len() {
        return Err(Error::input("scores and labels cover different videos"));
    }
    let dim = scores.first().map_or(0, |s| s.ncols());
    let mut rows: Vec<Vec<ArrayView1<f64>>> = vec![Vec::new(); num_labels + 1];
    let mut global = Array1::<f64>::zeros(dim);
    let mut total = 0usize;
    for (s, z) in scores.iter().zip(labels) {
        if s.nrows() != z.len() {
            return Err(Error::input(
                "score matrix and label sequence lengths differ",
            ));
        }
        for (row, &label) in s.rows().into_iter().zip(z) {
            if label > num_labels || (label == 0 && !background) {
                return Err(Error::state(format!("frame label {label} is not modelled")));
            }
            global += &row;
            total += 1;
            rows[label].push(row);
        }
    }
    if total > 0 {
        global /= total as f64;
    }

    let classes: Vec<usize> = if background {
        (0..=num_labels).collect()
    } else {
        (1..=num_labels).collect()
    };
    let seeds: Vec<u64> = classes.iter().map(|_| rng.random()).collect();
    let fitted: Vec<Result<Mixture>> = classes
        .par_iter()
        .zip(seeds)
        .map(|(&class, seed)| {
            let members = &rows[class];
            if members.is_empty() {
                return Ok(previous
                    .and_then(|p| p.get(class).cloned())
                    .unwrap_or_else(|| Mixture::unit(global.to_vec())));
            }
            let views: Vec<ArrayView2<f64>> = members
                .iter()
                .map(|r| r.view().insert_axis(Axis(0)))
                .collect();
            let points = ndarray::concatenate(Axis(0), &views)
                .map_err(|e| Error::state(format!("stacking score rows: {e}")))?;
            let mut child = ChaCha8Rng::seed_from_u64(seed);
            Ok(fit_mixture(points.view(), q, &mut child, config)?.mixture)
        })
        .collect();
    let mut fitted = fitted.into_iter().collect::<Result<Vec<_>>>()?;
    let background_mixture = if background {
        Some(fitted.remove(0))
    } else {
        None
    };
    Ok(SubActivityMixtures {
        labels: fitted,
        background: background_mixture,
    })
}

/// Frame log-likelihoods of one video under every class.
///
/// Columns `0..K` hold labels `1..=K`; column `K` holds the background class when present.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoLogLik {
    table: Array2<f64>,
    num_labels: usize,
}

impl VideoLogLik {
    pub fn from_table(table: Array2<f64>, num_labels: usize) -> Result<Self> {
        if table.ncols() != num_labels && table.ncols() != num_labels + 1 {
            return Err(Error::input(
                "log-likelihood table has the wrong number of columns",
            ));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::input(
                "log-likelihood table contains non-finite values",
            ));
        }
        Ok(VideoLogLik { table, num_labels })
    }

    pub fn num_frames(&self) -> usize {
        self.table.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn has_background(&self) -> bool {
        self.table.ncols() == self.num_labels + 1
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    fn column(&self, label: usize) -> usize {
        if label == 0 {
            self.num_labels
        } else {
            label - 1
        }
    }

    /// `log P(F_j | z_j = label)`, with label 0 meaning background.
    pub fn get(&self, frame: usize, label: usize) -> f64 {
        self.table[[frame, self.column(label)]]
    }

    /// Sum over frames without validating `z`; callers guarantee every label is modelled.
    pub(crate) fn sum_labels(&self, z: &[usize]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(j, &label)| self.get(j, label))
            .sum()
    }
}

/// Per-video log-likelihood tables for a whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikCache {
    pub videos: Vec<VideoLogLik>,
}

impl LogLikCache {
    pub fn video(&self, i: usize) -> &VideoLogLik {
        &self.videos[i]
    }
}

pub fn build_video_cache(
    scores: &Array2<f64>,
    mixtures: &SubActivityMixtures,
) -> Result<VideoLogLik> {
    let k = mixtures.num_labels();
    if k == 0 {
        return Err(Error::state("no sub-activity mixtures fitted"));
    }
    let mut classes: Vec<&Mixture> = mixtures.labels.iter().collect();
    classes.extend(mixtures.background.as_ref());
    if classes.iter().any(|m| m.dim() != scores.ncols()) {
        return Err(Error::input(format!(
            "scores have dimension {} but a mixture disagrees",
            scores.ncols()
        )));
    }
    let norms: Vec<f64> = classes.iter().map(|m| m.log_normalizer()).collect();
    let mut table = Array2::<f64>::zeros((scores.nrows(), classes.len()));
    let max_q = classes
        .iter()
        .map(|m| m.num_components())
        .max()
        .unwrap_or(1);
    let mut terms = vec![0.0; max_q];
    for (f, mut out) in scores.rows().into_iter().zip(table.rows_mut()) {
        for (c, m) in classes.iter().enumerate() {
            let t = &mut terms[..m.num_components()];
            m.component_log_densities(f, norms[c], t);
            out[c] = log_sum_exp(t);
        }
    }
    VideoLogLik::from_table(table, k)
        .map_err(|e| Error::state(format!("log-likelihood cache: {e}")))
}

/// Evaluates every frame of every video under every fitted class.
pub fn build_loglik_cache(
    scores: &[Array2<f64>],
    mixtures: &SubActivityMixtures,
) -> Result<LogLikCache> {
    let videos = scores
        .par_iter()
        .map(|s| build_video_cache(s, mixtures))
        .collect::<Result<Vec<_>>>()?;
    Ok(LogLikCache { videos })
}

/// `sum_j log P(F_j | z_j)`; label 0 selects the background column.
pub fn video_log_likelihood(cache: &VideoLogLik, z: &[usize]) -> Result<f64> {
    if z.len() != cache.num_frames() {
        return Err(Error::input(format!(
            "{} labels for a video with {} frames",
            z.len(),
            cache.num_frames()
        )));
    }
    for &label in z {
        if label > cache.num_labels() {
            return Err(Error::input(format!(
                "label {label} exceeds K = {}",
                cache.num_labels()
            )));
        }
        if label == 0 && !cache.has_background() {
            return Err(Error::input(
                "background label used but background is not modelled",
            ));
        }
    }
    Ok(cache.sum_labels(z))
}
