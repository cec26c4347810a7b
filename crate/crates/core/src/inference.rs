//! Corpus latent state and the alternating inference loop.
//!
//! Each video carries a bag of sub-activity counts `a`, an ordering `pi` (stored together
//! with its inversion vector `v`), per-frame background flags `b` and the derived labels
//! `z`. The bag is kept as one token per foreground frame so that resampling a frame's
//! token is an exact collapsed Gibbs step: the token leaves `a`, every candidate label (or
//! background) is scored by its collapsed prior times the likelihood of the whole video
//! relabelled accordingly, and a new token is drawn. A token's label need not equal the
//! label `z` eventually assigns to its frame, because `z` is rebuilt by laying the bag out
//! in the order `pi` over the foreground frames.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::categorical::{normalize_log_weights, sample_index};
use crate::corpus::{FeatureCorpus, Standardizer};
use crate::embedding::{fit_embedding, EmbeddingConfig, EmbeddingWeights};
use crate::error::{Error, Result};
use crate::likelihood::{
    build_loglik_cache, fit_sub_activity_mixtures, EmConfig, LogLikCache, SubActivityMixtures,
    VideoLogLik,
};
use crate::mallows::{
    gmm_log_prob, inversions_from_permutation, log_prior_rho, permutation_from_inversions,
    position_log_prob, position_size, posterior_rho_params, slice_sample_rho, InversionVector,
    MallowsParams, Permutation,
};

/// Everything a run needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Number of sub-activities `K`.
    pub k: usize,
    /// Mixture components per sub-activity.
    pub q: usize,
    pub embed_dim: usize,
    pub margin: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub outer_iterations: usize,
    /// Gibbs sweeps over the corpus per outer iteration.
    pub sweeps_per_iteration: usize,
    /// Dirichlet concentration of the sub-activity proportions.
    pub theta0: f64,
    pub rho0: f64,
    pub nu0: f64,
    /// Beta prior pseudo-count of background frames.
    pub alpha: f64,
    /// Beta prior pseudo-count of sub-activity frames.
    pub beta: f64,
    pub background: bool,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(k: usize) -> Self {
        RunConfig {
            k,
            q: 3,
            embed_dim: 200,
            margin: 1.0,
            l2: 1e-4,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 200,
            epochs: 12,
            outer_iterations: 5,
            sweeps_per_iteration: 1,
            theta0: 0.1,
            rho0: 1.0,
            nu0: 0.1,
            alpha: 0.2,
            beta: 0.2,
            background: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.q == 0 || self.embed_dim == 0 || self.batch_size == 0 {
            return Err(Error::input(
                "k, q, embed_dim and batch_size must be at least 1",
            ));
        }
        let positive = [
            ("margin", self.margin),
            ("learning_rate", self.learning_rate),
            ("theta0", self.theta0),
            ("rho0", self.rho0),
            ("nu0", self.nu0),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::input(format!(
                    "{name} must be positive (got {value})"
                )));
            }
        }
        if !(self.l2 >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input(
                "l2 must be non-negative and momentum in [0, 1)",
            ));
        }
        Ok(())
    }

    pub fn embedding(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            embed_dim: self.embed_dim,
            margin: self.margin,
            l2: self.l2,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }
}

/// Latent variables of one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoState {
    /// Bag of sub-activities: `a[k - 1]` frames carry label `k`.
    pub a: Vec<usize>,
    pub pi: Permutation,
    pub v: InversionVector,
    /// `true` marks a background frame.
    pub b: Vec<bool>,
    /// Bag token of each foreground frame (0 on background frames); `a` counts these.
    pub tokens: Vec<usize>,
    /// Frame labels, 0 for background.
    pub z: Vec<usize>,
}

impl VideoState {
    pub fn num_frames(&self) -> usize {
        self.b.len()
    }

    /// Verifies every redundancy between the fields.
    pub fn check(&self, k: usize) -> Result<()> {
        let j = self.b.len();
        if self.a.len() != k || self.pi.len() != k || self.tokens.len() != j || self.z.len() != j {
            return Err(Error::state("video state has inconsistent dimensions"));
        }
        let mut bag = vec![0; k];
        for (&token, &bg) in self.tokens.iter().zip(&self.b) {
            match (bg, token) {
                (true, 0) => {}
                (false, t) if (1..=k).contains(&t) => bag[t - 1] += 1,
                _ => return Err(Error::state("bag token disagrees with background flag")),
            }
        }
        if bag != self.a {
            return Err(Error::state("bag counts disagree with frame tokens"));
        }
        if inversions_from_permutation(&self.pi) != self.v {
            return Err(Error::state("inversion vector disagrees with ordering"));
        }
        if construct_z(&self.a, &self.pi, &self.b)? != self.z {
            return Err(Error::state(
                "labels disagree with bag, ordering and background",
            ));
        }
        Ok(())
    }
}

fn fill_z(a: &[usize], pi: &Permutation, b: &[bool], out: &mut Vec<usize>) {
    out.clear();
    let mut order = pi.as_slice().iter();
    let mut label = 0;
    let mut remaining = 0;
    for &bg in b {
        if bg {
            out.push(0);
            continue;
        }
        while remaining == 0 {
            // Callers guarantee sum(a) equals the foreground count.
            label = *order.next().expect("bag smaller than foreground");
            remaining = a[label - 1];
        }
        out.push(label);
        remaining -= 1;
    }
}

/// Lays the bag `a` out over the foreground frames in the order `pi`.
pub fn construct_z(a: &[usize], pi: &Permutation, b: &[bool]) -> Result<Vec<usize>> {
    if a.len() != pi.len() {
        return Err(Error::state(format!(
            "bag has {} labels but ordering has {}",
            a.len(),
            pi.len()
        )));
    }
    let foreground = b.iter().filter(|bg| !**bg).count();
    let total: usize = a.iter().sum();
    if total != foreground {
        return Err(Error::state(format!(
            "bag holds {total} frames but {foreground} frames are foreground"
        )));
    }
    let mut z = Vec::with_capacity(b.len());
    fill_z(a, pi, b, &mut z);
    Ok(z)
}

/// Initial state: alternate background flags (when modelled), an even split of the
/// foreground over the labels with the remainder going to the lowest labels, and the
/// canonical ordering.
pub fn init_state(frame_count: usize, config: &RunConfig) -> Result<VideoState> {
    if frame_count == 0 {
        return Err(Error::input("a video needs at least one frame"));
    }
    let k = config.k;
    let b: Vec<bool> = (0..frame_count)
        .map(|j| config.background && j % 2 == 0)
        .collect();
    let foreground = b.iter().filter(|bg| !**bg).count();
    let a: Vec<usize> = (0..k)
        .map(|label| foreground / k + usize::from(label < foreground % k))
        .collect();
    let pi = Permutation::identity(k);
    let z = construct_z(&a, &pi, &b)?;
    Ok(VideoState {
        v: inversions_from_permutation(&pi),
        tokens: z.clone(),
        a,
        pi,
        b,
        z,
    })
}

/// Corpus-wide counts that stand in for the integrated-out proportions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    /// `n_k[k - 1]` foreground frames carry a token of label `k`.
    pub n_k: Vec<usize>,
    pub n_f: usize,
    pub n_b: usize,
}

impl CorpusCounts {
    pub fn from_states(states: &[VideoState], k: usize) -> Self {
        let mut counts = CorpusCounts {
            n_k: vec![0; k],
            n_f: 0,
            n_b: 0,
        };
        for s in states {
            for (n, a) in counts.n_k.iter_mut().zip(&s.a) {
                *n += a;
            }
            counts.n_b += s.b.iter().filter(|bg| **bg).count();
        }
        counts.n_f = counts.n_k.iter().sum();
        counts
    }
}

/// Joint value of a frame's (background flag, bag token).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameChoice {
    Foreground(usize),
    Background,
}

fn check_frame(state: &VideoState, frame: usize, cache: &VideoLogLik, k: usize) -> Result<()> {
    if frame >= state.num_frames() {
        return Err(Error::input(format!("frame {frame} out of range")));
    }
    if cache.num_frames() != state.num_frames() || cache.num_labels() != k {
        return Err(Error::state(
            "log-likelihood cache does not match the video",
        ));
    }
    Ok(())
}

// Candidates and their log-weights after removing the frame's current contribution.
fn frame_log_weights(
    state: &VideoState,
    frame: usize,
    counts: &CorpusCounts,
    cache: &VideoLogLik,
    config: &RunConfig,
    with_background: bool,
) -> Result<Vec<(FrameChoice, f64)>> {
    let k = config.k;
    check_frame(state, frame, cache, k)?;
    if with_background && !cache.has_background() {
        return Err(Error::state(
            "background sampling needs a background likelihood column",
        ));
    }
    let mut a = state.a.clone();
    let mut n_k = counts.n_k.clone();
    let (mut n_f, mut n_b) = (counts.n_f, counts.n_b);
    let mut b = state.b.clone();
    if state.b[frame] {
        n_b = n_b
            .checked_sub(1)
            .ok_or_else(|| Error::state("background count underflow"))?;
    } else {
        let t = state.tokens[frame] - 1;
        if a[t] == 0 || n_k[t] == 0 || n_f == 0 {
            return Err(Error::state("sub-activity count underflow"));
        }
        a[t] -= 1;
        n_k[t] -= 1;
        n_f -= 1;
    }

    let theta0 = config.theta0;
    let denom = (n_f as f64 + k as f64 * theta0).ln();
    let fg_prior = if with_background {
        (n_f as f64 + config.beta).ln()
    } else {
        0.0
    };
    let mut z = Vec::with_capacity(b.len());
    let mut out = Vec::with_capacity(k + 1);
    b[frame] = false;
    for label in 1..=k {
        a[label - 1] += 1;
        fill_z(&a, &state.pi, &b, &mut z);
        let prior = fg_prior + (n_k[label - 1] as f64 + theta0).ln() - denom;
        out.push((FrameChoice::Foreground(label), prior + cache.sum_labels(&z)));
        a[label - 1] -= 1;
    }
    if with_background {
        b[frame] = true;
        fill_z(&a, &state.pi, &b, &mut z);
        let prior = (n_b as f64 + config.alpha).ln();
        out.push((FrameChoice::Background, prior + cache.sum_labels(&z)));
    }
    Ok(out)
}

fn to_probabilities(weights: Vec<(FrameChoice, f64)>) -> Vec<(FrameChoice, f64)> {
    let logs: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    weights
        .into_iter()
        .map(|(c, _)| c)
        .zip(normalize_log_weights(&logs))
        .collect()
}

/// Conditional over the frame's bag token (standard model, no background).
pub fn frame_conditional_standard(
    state: &VideoState,
    frame: usize,
    counts: &CorpusCounts,
    cache: &VideoLogLik,
    config: &RunConfig,
) -> Result<Vec<(FrameChoice, f64)>> {
    Ok(to_probabilities(frame_log_weights(
        state, frame, counts, cache, config, false,
    )?))
}

/// Joint conditional over (background flag, bag token) for the full model.
pub fn frame_conditional_joint(
    state: &VideoState,
    frame: usize,
    counts: &CorpusCounts,
    cache: &VideoLogLik,
    config: &RunConfig,
) -> Result<Vec<(FrameChoice, f64)>> {
    Ok(to_probabilities(frame_log_weights(
        state, frame, counts, cache, config, true,
    )?))
}

fn apply_choice(
    state: &mut VideoState,
    frame: usize,
    counts: &mut CorpusCounts,
    choice: FrameChoice,
) -> Result<()> {
    if state.b[frame] {
        counts.n_b -= 1;
    } else {
        let t = state.tokens[frame] - 1;
        state.a[t] -= 1;
        counts.n_k[t] -= 1;
        counts.n_f -= 1;
    }
    match choice {
        FrameChoice::Foreground(label) => {
            state.b[frame] = false;
            state.tokens[frame] = label;
            state.a[label - 1] += 1;
            counts.n_k[label - 1] += 1;
            counts.n_f += 1;
        }
        FrameChoice::Background => {
            state.b[frame] = true;
            state.tokens[frame] = 0;
            counts.n_b += 1;
        }
    }
    state.z = construct_z(&state.a, &state.pi, &state.b)?;
    Ok(())
}

fn sample_frame<R: Rng + ?Sized>(
    state: &mut VideoState,
    frame: usize,
    counts: &mut CorpusCounts,
    cache: &VideoLogLik,
    config: &RunConfig,
    rng: &mut R,
    with_background: bool,
) -> Result<FrameChoice> {
    let probs = to_probabilities(frame_log_weights(
        state,
        frame,
        counts,
        cache,
        config,
        with_background,
    )?);
    let weights: Vec<f64> = probs.iter().map(|(_, p)| *p).collect();
    let choice = probs[sample_index(&weights, rng)].0;
    apply_choice(state, frame, counts, choice)?;
    Ok(choice)
}

/// Resamples one frame's bag token in the standard model.
pub fn sample_frame_standard<R: Rng + ?Sized>(
    state: &mut VideoState,
    frame: usize,
    counts: &mut CorpusCounts,
    cache: &VideoLogLik,
    config: &RunConfig,
    rng: &mut R,
) -> Result<FrameChoice> {
    if config.background {
        return Err(Error::input(
            "standard frame sampler used with background enabled",
        ));
    }
    sample_frame(state, frame, counts, cache, config, rng, false)
}

/// Jointly resamples one frame's background flag and bag token in the full model.
pub fn sample_frame_joint<R: Rng + ?Sized>(
    state: &mut VideoState,
    frame: usize,
    counts: &mut CorpusCounts,
    cache: &VideoLogLik,
    config: &RunConfig,
    rng: &mut R,
) -> Result<FrameChoice> {
    if !config.background {
        return Err(Error::input(
            "joint frame sampler used with background disabled",
        ));
    }
    sample_frame(state, frame, counts, cache, config, rng, true)
}

/// Conditional over the values `0..=K-k` of inversion position `position` (zero-based).
pub fn inversion_conditional(
    state: &VideoState,
    position: usize,
    cache: &VideoLogLik,
    rho: &[f64],
) -> Result<Vec<f64>> {
    let k = state.pi.len();
    if position + 1 >= k || rho.len() != k - 1 {
        return Err(Error::input(format!(
            "no inversion position {position} for K = {k}"
        )));
    }
    if cache.num_frames() != state.num_frames() {
        return Err(Error::state(
            "log-likelihood cache does not match the video",
        ));
    }
    let n = position_size(k, position);
    let mut z = Vec::with_capacity(state.num_frames());
    let mut logs = Vec::with_capacity(n);
    for c in 0..n {
        let pi = permutation_from_inversions(&state.v.with(position, c)?);
        fill_z(&state.a, &pi, &state.b, &mut z);
        logs.push(position_log_prob(rho[position], n, c) + cache.sum_labels(&z));
    }
    Ok(normalize_log_weights(&logs))
}

/// Resamples one inversion count of the video's ordering; `a` and `b` stay fixed.
pub fn sample_inversion_position<R: Rng + ?Sized>(
    state: &mut VideoState,
    position: usize,
    cache: &VideoLogLik,
    rho: &[f64],
    rng: &mut R,
) -> Result<usize> {
    let probs = inversion_conditional(state, position, cache, rho)?;
    let c = sample_index(&probs, rng);
    state.v = state.v.with(position, c)?;
    state.pi = permutation_from_inversions(&state.v);
    state.z = construct_z(&state.a, &state.pi, &state.b)?;
    Ok(c)
}

/// One slice-sampling step per dispersion given the corpus inversion counts.
pub fn update_rho<R: Rng + ?Sized>(
    states: &[VideoState],
    params: &MallowsParams,
    rng: &mut R,
) -> Result<MallowsParams> {
    if states.is_empty() {
        return Err(Error::input("dispersion update needs at least one video"));
    }
    let k = params.num_items();
    let mut rho = params.rho.clone();
    for (i, r) in rho.iter_mut().enumerate() {
        let sum_v: usize = states.iter().map(|s| s.v.as_slice()[i]).sum();
        let (v_post, nu_post) =
            posterior_rho_params(sum_v, states.len(), params.prior_mean(i), params.nu0);
        *r = slice_sample_rho(*r, v_post, nu_post, position_size(k, i), rng)?;
    }
    MallowsParams::new(rho, params.rho0, params.nu0)
}

/// One Gibbs pass: for every video, each frame left to right, then each inversion position.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    states: &mut [VideoState],
    counts: &mut CorpusCounts,
    cache: &LogLikCache,
    params: &MallowsParams,
    config: &RunConfig,
    rng: &mut R,
) -> Result<()> {
    for (i, state) in states.iter_mut().enumerate() {
        let video = cache.video(i);
        for j in 0..state.num_frames() {
            sample_frame(state, j, counts, video, config, rng, config.background)?;
        }
        for position in 0..config.k.saturating_sub(1) {
            sample_inversion_position(state, position, video, &params.rho, rng)?;
        }
    }
    Ok(())
}

/// Collapsed log-joint of the whole corpus (up to constants of the dispersion prior).
pub fn log_joint(
    states: &[VideoState],
    counts: &CorpusCounts,
    cache: &LogLikCache,
    params: &MallowsParams,
    config: &RunConfig,
) -> Result<f64> {
    let k = config.k;
    if *counts != CorpusCounts::from_states(states, k) {
        return Err(Error::state("corpus counts disagree with the video states"));
    }
    if cache.videos.len() != states.len() {
        return Err(Error::state(
            "log-likelihood cache covers a different corpus",
        ));
    }
    let theta0 = config.theta0;
    let mut total = ln_gamma(k as f64 * theta0) - ln_gamma(counts.n_f as f64 + k as f64 * theta0);
    for &n in &counts.n_k {
        total += ln_gamma(n as f64 + theta0) - ln_gamma(theta0);
    }
    if config.background {
        let (a, b) = (config.alpha, config.beta);
        let (nb, nf) = (counts.n_b as f64, counts.n_f as f64);
        total += ln_gamma(nb + a) + ln_gamma(nf + b)
            - ln_gamma(nb + nf + a + b)
            - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    } else if counts.n_b != 0 {
        return Err(Error::state(
            "background frames present with background disabled",
        ));
    }
    for i in 0..k.saturating_sub(1) {
        let n = position_size(k, i);
        total += log_prior_rho(params.rho[i], params.prior_mean(i), params.nu0, n)?;
    }
    for (state, video) in states.iter().zip(&cache.videos) {
        state.check(k)?;
        total += gmm_log_prob(&state.v, params)?;
        total += crate::likelihood::video_log_likelihood(video, &state.z)
            .map_err(|e| Error::state(e.to_string()))?;
    }
    Ok(total)
}

/// Per-iteration trace of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub log_joint: f64,
    pub rho: Vec<f64>,
    pub background_frames: usize,
    /// Embedding objective at the end of this iteration's training (absent when skipped).
    pub embedding_loss: Option<f64>,
}

pub struct InferenceResult {
    pub states: Vec<VideoState>,
    pub params: MallowsParams,
    pub weights: EmbeddingWeights,
    pub standardizer: Standardizer,
    pub mixtures: SubActivityMixtures,
    pub diagnostics: Vec<IterationDiagnostics>,
}

/// Runs the alternating schedule without observing intermediate states.
pub fn run_inference(corpus: &FeatureCorpus, config: &RunConfig) -> Result<InferenceResult> {
    run_inference_with(corpus, config, |_, _| {})
}

/// Runs `outer_iterations` rounds of: embedding refresh on the current labels, mixture
/// refit, cache rebuild, Gibbs sweep(s) over frames and orderings, dispersion update.
///
/// `observer` sees the states after every round, e.g. to score intermediate segmentations.
pub fn run_inference_with<F>(
    corpus: &FeatureCorpus,
    config: &RunConfig,
    mut observer: F,
) -> Result<InferenceResult>
where
    F: FnMut(usize, &[VideoState]),
{
    config.validate()?;
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let standardizer = Standardizer::fit(corpus);
    let data = standardizer.apply(corpus);

    let mut states = data
        .frame_counts()
        .into_iter()
        .map(|j| init_state(j, config))
        .collect::<Result<Vec<_>>>()?;
    let mut counts = CorpusCounts::from_states(&states, k);
    let mut params = MallowsParams::from_prior(k, config.rho0, config.nu0)?;
    let embedding = config.embedding();
    let mut weights = EmbeddingWeights::random(data.dim(), k, &embedding, &mut rng)?;
    let em = EmConfig::default();
    let mut mixtures: Option<SubActivityMixtures> = None;
    let mut diagnostics = Vec::with_capacity(config.outer_iterations);

    for iteration in 1..=config.outer_iterations {
        let labels: Vec<Vec<usize>> = states.iter().map(|s| s.z.clone()).collect();
        let embedding_loss = if counts.n_f > 0 {
            fit_embedding(&mut weights, &data, &labels, &embedding, &mut rng)?
                .last()
                .copied()
        } else {
            None
        };
        let scores: Vec<Array2<f64>> = data
            .videos()
            .iter()
            .map(|x| weights.score_matrix(x))
            .collect::<Result<_>>()?;
        let fitted = fit_sub_activity_mixtures(
            &scores,
            &labels,
            k,
            config.q,
            config.background,
            mixtures.as_ref(),
            &em,
            &mut rng,
        )?;
        let cache = build_loglik_cache(&scores, &fitted)?;
        for _ in 0..config.sweeps_per_iteration {
            gibbs_sweep(&mut states, &mut counts, &cache, &params, config, &mut rng)?;
        }
        params = update_rho(&states, &params, &mut rng)?;
        let lj = log_joint(&states, &counts, &cache, &params, config)?;
        diagnostics.push(IterationDiagnostics {
            iteration,
            log_joint: lj,
            rho: params.rho.clone(),
            background_frames: counts.n_b,
            embedding_loss,
        });
        mixtures = Some(fitted);
        observer(iteration, &states);
    }

    let mixtures = match mixtures {
        Some(m) => m,
        None => {
            let labels: Vec<Vec<usize>> = states.iter().map(|s| s.z.clone()).collect();
            let scores: Vec<Array2<f64>> = data
                .videos()
                .iter()
                .map(|x| weights.score_matrix(x))
                .collect::<Result<_>>()?;
            fit_sub_activity_mixtures(
                &scores,
                &labels,
                k,
                config.q,
                config.background,
                None,
                &em,
                &mut rng,
            )?
        }
    };
    Ok(InferenceResult {
        states,
        params,
        weights,
        standardizer,
        mixtures,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn config(k: usize, background: bool) -> RunConfig {
        RunConfig {
            background,
            ..RunConfig::new(k)
        }
    }

    fn flat_cache(frames: usize, k: usize, background: bool) -> VideoLogLik {
        VideoLogLik::from_table(Array2::zeros((frames, k + usize::from(background))), k).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_examples() {
        let s = init_state(4, &config(2, false)).unwrap();
        assert_eq!((s.a.clone(), s.z.clone()), (vec![2, 2], vec![1, 1, 2, 2]));
        let s = init_state(5, &config(2, false)).unwrap();
        assert_eq!(s.a, vec![3, 2]);
        let s = init_state(6, &config(2, true)).unwrap();
        assert_eq!(s.b, vec![true, false, true, false, true, false]);
        assert_eq!(s.a, vec![2, 1]);
        assert_eq!(s.z, vec![0, 1, 0, 1, 0, 2]);
        s.check(2).unwrap();
        assert!(init_state(0, &config(2, false)).is_err());
    }

    #[test]
    fn construct_z_worked_example() {
        let fg = [1, 2, 3, 6, 7, 8, 11, 12, 16, 17, 18, 19, 22, 23];
        let b: Vec<bool> = (1..=23).map(|j| !fg.contains(&j)).collect();
        let pi = Permutation::new(vec![2, 3, 1]).unwrap();
        let z = construct_z(&[6, 3, 5], &pi, &b).unwrap();
        assert_eq!(
            z,
            vec![2, 2, 2, 0, 0, 3, 3, 3, 0, 0, 3, 3, 0, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1]
        );
    }

    #[test]
    fn construct_z_edge_cases() {
        let z = construct_z(&[5], &Permutation::identity(1), &[false; 5]).unwrap();
        assert_eq!(z, vec![1; 5]);
        let z = construct_z(&[0, 0, 0], &Permutation::identity(3), &[true; 4]).unwrap();
        assert_eq!(z, vec![0; 4]);
        assert!(matches!(
            construct_z(&[1, 0, 0], &Permutation::identity(3), &[true; 4]),
            Err(Error::State(_))
        ));
    }

    fn probs(c: &[(FrameChoice, f64)]) -> Vec<f64> {
        c.iter().map(|(_, p)| *p).collect()
    }

    #[test]
    fn standard_symmetric_case() {
        let cfg = config(2, false);
        let state = init_state(4, &cfg).unwrap();
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 2);
        // Uniform likelihood columns: every frame equally likely under both labels.
        let cache = VideoLogLik::from_table(
            array![[-1.0, -1.0], [-2.0, -2.0], [0.5, 0.5], [0.0, 0.0]],
            2,
        )
        .unwrap();
        let p = frame_conditional_standard(&state, 0, &counts, &cache, &cfg).unwrap();
        // Removing frame 0's token leaves counts (1, 2), so only the likelihood is flat here.
        let expected = [(1.0 + 0.1) / (3.0 + 0.2), (2.0 + 0.1) / (3.0 + 0.2)];
        for (got, want) in probs(&p).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        let state = init_state(5, &cfg).unwrap();
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 2);
        let p =
            frame_conditional_standard(&state, 0, &counts, &flat_cache(5, 2, false), &cfg).unwrap();
        assert!((p[0].1 - 0.5).abs() < 1e-12 && (p[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn standard_prior_arithmetic() {
        let cfg = config(2, false);
        let state = construct_state(&[1, 1, 1, 1], &[false; 4], &[1, 2]);
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 2);
        let p =
            frame_conditional_standard(&state, 0, &counts, &flat_cache(4, 2, false), &cfg).unwrap();
        assert!((p[0].1 - 0.96875).abs() < 1e-12);
        assert!((p[1].1 - 0.03125).abs() < 1e-12);
    }

    fn construct_state(tokens: &[usize], b: &[bool], pi: &[usize]) -> VideoState {
        let k = pi.len();
        let mut a = vec![0; k];
        for (&t, &bg) in tokens.iter().zip(b) {
            if !bg {
                a[t - 1] += 1;
            }
        }
        let pi = Permutation::new(pi.to_vec()).unwrap();
        let z = construct_z(&a, &pi, b).unwrap();
        let tokens = tokens
            .iter()
            .zip(b)
            .map(|(&t, &bg)| if bg { 0 } else { t })
            .collect();
        let state = VideoState {
            v: inversions_from_permutation(&pi),
            a,
            pi,
            b: b.to_vec(),
            tokens,
            z,
        };
        state.check(k).unwrap();
        state
    }

    #[test]
    fn standard_matches_enumeration() {
        // Two frames, K = 2; frame 0 carries token 1, frame 1 token 2, ordering (2, 1).
        let cfg = config(2, false);
        let state = construct_state(&[1, 2], &[false, false], &[2, 1]);
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 2);
        let table = array![[-0.3, -2.0], [-1.5, -0.1]];
        let cache = VideoLogLik::from_table(table.clone(), 2).unwrap();
        let p = frame_conditional_standard(&state, 0, &counts, &cache, &cfg).unwrap();
        // Candidate 1: bag (1, 1) laid out as (2, 1); candidate 2: bag (0, 2) gives (2, 2).
        let w1 = (0.0 + 0.1f64).ln() - (1.0 + 0.2f64).ln() + table[[0, 1]] + table[[1, 0]];
        let w2 = (1.0 + 0.1f64).ln() - (1.0 + 0.2f64).ln() + table[[0, 1]] + table[[1, 1]];
        let p1 = 1.0 / (1.0 + (w2 - w1).exp());
        assert!((p[0].1 - p1).abs() < 1e-12);
        assert!((p[1].1 - (1.0 - p1)).abs() < 1e-12);
    }

    #[test]
    fn joint_symmetric_and_arithmetic() {
        let cfg = RunConfig {
            alpha: 0.2,
            beta: 0.2,
            ..config(1, true)
        };
        let state = construct_state(&[1, 0, 1, 0, 1], &[false, true, false, true, false], &[1]);
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 1);
        // Resampling frame 0 leaves N_f = 2, N_b = 2.
        let p = frame_conditional_joint(&state, 0, &counts, &flat_cache(5, 1, true), &cfg).unwrap();
        assert_eq!(p[1].0, FrameChoice::Background);
        assert!((p[0].1 - 0.5).abs() < 1e-12 && (p[1].1 - 0.5).abs() < 1e-12);

        let state = construct_state(
            &[1, 1, 1, 1, 1, 0],
            &[false, false, false, false, false, true],
            &[1],
        );
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 1);
        let p = frame_conditional_joint(&state, 0, &counts, &flat_cache(6, 1, true), &cfg).unwrap();
        assert!((p[1].1 - 1.2 / 5.4).abs() < 1e-12);
        assert!((p[1].1 - 0.2222).abs() < 1e-4);
    }

    #[test]
    fn joint_without_background_reduces_to_standard() {
        let std_cfg = config(3, false);
        let joint_cfg = config(3, true);
        let state = construct_state(&[1, 3, 2, 2, 1, 3], &[false; 6], &[3, 1, 2]);
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 3);
        let mut rng = rng(4);
        let table = Array2::from_shape_simple_fn((6, 4), || rng.random_range(-3.0..0.0));
        let with_bg = VideoLogLik::from_table(table.clone(), 3).unwrap();
        let without =
            VideoLogLik::from_table(table.slice(ndarray::s![.., 0..3]).to_owned(), 3).unwrap();
        for frame in 0..6 {
            let s = frame_conditional_standard(&state, frame, &counts, &without, &std_cfg).unwrap();
            let j = frame_conditional_joint(&state, frame, &counts, &with_bg, &joint_cfg).unwrap();
            let fg_mass: f64 = j[..3].iter().map(|(_, p)| p).sum();
            for (a, b) in s.iter().zip(&j[..3]) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1 / fg_mass).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_draw_frequencies() {
        let cfg = config(2, true);
        let state = construct_state(&[1, 0, 2], &[false, true, false], &[1, 2]);
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 2);
        let cache = VideoLogLik::from_table(
            array![[-0.5, -1.5, -1.0], [-2.0, -0.2, -0.7], [-1.0, -0.4, -3.0]],
            2,
        )
        .unwrap();
        let exact = frame_conditional_joint(&state, 1, &counts, &cache, &cfg).unwrap();
        let mut r = rng(17);
        let draws = 100_000;
        let mut freq = std::collections::HashMap::new();
        for _ in 0..draws {
            let mut s = state.clone();
            let mut c = counts.clone();
            let choice = sample_frame_joint(&mut s, 1, &mut c, &cache, &cfg, &mut r).unwrap();
            *freq.entry(choice).or_insert(0usize) += 1;
        }
        for (choice, p) in exact {
            let f = *freq.get(&choice).unwrap_or(&0) as f64 / draws as f64;
            assert!((f - p).abs() < 0.01, "{choice:?}: {f} vs {p}");
        }
    }

    #[test]
    fn inversion_conditional_flat_and_enumerated() {
        let state = construct_state(&[1, 2, 3, 3], &[false; 4], &[1, 2, 3]);
        let rho = [1.3, 0.4];
        let p = inversion_conditional(&state, 0, &flat_cache(4, 3, false), &rho).unwrap();
        let z: f64 = (0..3).map(|c| (-1.3 * c as f64).exp()).sum();
        for (c, pc) in p.iter().enumerate() {
            assert!((pc - (-1.3 * c as f64).exp() / z).abs() < 1e-12);
        }
        let p = inversion_conditional(&state, 1, &flat_cache(4, 3, false), &[1e-9, 1e-9]).unwrap();
        assert!(p.iter().all(|x| (x - 0.5).abs() < 1e-8));

        // Asymmetric cache: enumerate the three orderings reachable through v_1.
        let table = array![
            [-0.1, -2.0, -3.0],
            [-1.0, -0.2, -2.5],
            [-2.0, -1.0, -0.3],
            [-0.4, -1.7, -0.9]
        ];
        let cache = VideoLogLik::from_table(table.clone(), 3).unwrap();
        let p = inversion_conditional(&state, 0, &cache, &rho).unwrap();
        let orderings = [[1, 2, 3], [2, 1, 3], [2, 3, 1]];
        let logs: Vec<f64> = orderings
            .iter()
            .enumerate()
            .map(|(c, order)| {
                let pi = Permutation::new(order.to_vec()).unwrap();
                assert_eq!(inversions_from_permutation(&pi).as_slice(), &[c, 0]);
                let z = construct_z(&state.a, &pi, &state.b).unwrap();
                let ll: f64 = z.iter().enumerate().map(|(j, &l)| table[[j, l - 1]]).sum();
                -1.3 * c as f64 - crate::mallows::log_psi(1.3, 3).unwrap() + ll
            })
            .collect();
        let expected = normalize_log_weights(&logs);
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn samplers_keep_state_consistent() {
        let cfg = config(3, true);
        let mut r = rng(1);
        let mut states: Vec<VideoState> = [7, 9, 4]
            .iter()
            .map(|&j| init_state(j, &cfg).unwrap())
            .collect();
        let mut counts = CorpusCounts::from_states(&states, 3);
        let cache = LogLikCache {
            videos: states
                .iter()
                .map(|s| {
                    VideoLogLik::from_table(
                        Array2::from_shape_simple_fn((s.num_frames(), 4), || {
                            r.random_range(-4.0..0.0)
                        }),
                        3,
                    )
                    .unwrap()
                })
                .collect(),
        };
        let params = MallowsParams::from_prior(3, 1.0, 0.1).unwrap();
        for _ in 0..30 {
            gibbs_sweep(&mut states, &mut counts, &cache, &params, &cfg, &mut r).unwrap();
            for s in &states {
                s.check(3).unwrap();
            }
            assert_eq!(counts, CorpusCounts::from_states(&states, 3));
            assert_eq!(counts.n_f + counts.n_b, 20);
        }
    }

    #[test]
    fn rho_update_concentrates_on_identity_orderings() {
        let cfg = config(4, false);
        let states: Vec<VideoState> = (0..100).map(|_| init_state(8, &cfg).unwrap()).collect();
        let mut r = rng(6);
        let mut params = MallowsParams::from_prior(4, 1.0, 0.1).unwrap();
        let mut large = 0;
        let sweeps = 400;
        for _ in 0..sweeps {
            params = update_rho(&states, &params, &mut r).unwrap();
            large += params.rho.iter().filter(|r| **r > 3.0).count();
        }
        assert!(large as f64 / (sweeps * 3) as f64 > 0.95);
        let single = vec![init_state(3, &cfg).unwrap()];
        update_rho(&single, &params, &mut r).unwrap();
        assert!(update_rho(&[], &params, &mut r).is_err());
    }

    #[test]
    fn log_joint_single_frame_by_hand() {
        let cfg = config(1, false);
        let state = init_state(1, &cfg).unwrap();
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 1);
        let cache = LogLikCache {
            videos: vec![VideoLogLik::from_table(array![[-0.7]], 1).unwrap()],
        };
        let params = MallowsParams::from_prior(1, 1.0, 0.1).unwrap();
        let lj = log_joint(&[state], &counts, &cache, &params, &cfg).unwrap();
        // Dirichlet-multinomial of a single token with K = 1 is exactly 1.
        assert!((lj - -0.7).abs() < 1e-12);

        let cfg = config(1, true);
        let state = construct_state(&[1], &[false], &[1]);
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 1);
        let cache = LogLikCache {
            videos: vec![VideoLogLik::from_table(array![[-0.7, -0.2]], 1).unwrap()],
        };
        let lj = log_joint(&[state], &counts, &cache, &params, &cfg).unwrap();
        assert!((lj - (-0.7 + (0.2f64 / 0.4).ln())).abs() < 1e-12);
    }

    #[test]
    fn log_joint_background_only_and_relabeling() {
        let cfg = config(3, true);
        let state = construct_state(&[0, 0, 0], &[true; 3], &[1, 2, 3]);
        let counts = CorpusCounts::from_states(std::slice::from_ref(&state), 3);
        let table = array![
            [-1.0, -1.0, -1.0, -0.5],
            [-1.0, -1.0, -1.0, -0.25],
            [-1.0, -1.0, -1.0, -2.0]
        ];
        let cache = LogLikCache {
            videos: vec![VideoLogLik::from_table(table, 3).unwrap()],
        };
        let params = MallowsParams::from_prior(3, 1.0, 0.1).unwrap();
        let lj = log_joint(std::slice::from_ref(&state), &counts, &cache, &params, &cfg).unwrap();
        let ll = crate::likelihood::video_log_likelihood(cache.video(0), &state.z).unwrap();
        assert!((ll - -2.75).abs() < 1e-12);
        let mut rest = 0.0;
        rest += ln_gamma(3.0 + 0.2) + ln_gamma(0.2)
            - ln_gamma(3.4)
            - (2.0 * ln_gamma(0.2) - ln_gamma(0.4));
        for i in 0..2 {
            rest += log_prior_rho(1.0, params.prior_mean(i), 0.1, 3 - i).unwrap();
        }
        rest += gmm_log_prob(&state.v, &params).unwrap();
        assert!((lj - (ll + rest)).abs() < 1e-10);

        let bad = CorpusCounts { n_b: 2, ..counts };
        assert!(matches!(
            log_joint(&[state], &bad, &cache, &params, &cfg),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn single_video_single_label_run() {
        let corpus = FeatureCorpus::new(
            vec!["only".into()],
            vec![Array2::from_shape_fn((12, 3), |(j, d)| {
                (j * 3 + d) as f64 * 0.1
            })],
        )
        .unwrap();
        let cfg = RunConfig {
            embed_dim: 4,
            epochs: 2,
            outer_iterations: 3,
            ..config(1, false)
        };
        let result = run_inference(&corpus, &cfg).unwrap();
        assert_eq!(result.states[0].z, vec![1; 12]);
        assert_eq!(result.diagnostics.len(), 3);
    }
}
