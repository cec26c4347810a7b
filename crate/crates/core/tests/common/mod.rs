#![allow(dead_code)]

use std::collections::HashMap;

use mallowseg::inference::{gibbs_sweep, init_state, CorpusCounts, RunConfig};
use mallowseg::likelihood::{LogLikCache, VideoLogLik};
use mallowseg::mallows::{MallowsParams, RHO_MAX, RHO_MIN};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

/// All orderings of `1..=k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k);
            out.push(q);
        }
    }
    out
}

/// `ln sum_{c < n} e^{-rho c}` by direct summation.
pub fn log_normalizer(rho: f64, n: usize) -> f64 {
    (0..n).map(|c| (-rho * c as f64).exp()).sum::<f64>().ln()
}

/// Mean count under `P(c) ∝ e^{-rho c}`, `c < n`.
pub fn expected_count(rho: f64, n: usize) -> f64 {
    let w: Vec<f64> = (0..n).map(|c| (-rho * c as f64).exp()).collect();
    w.iter().enumerate().map(|(c, x)| c as f64 * x).sum::<f64>() / w.iter().sum::<f64>()
}

/// Unnormalized log-density of a dispersion given posterior parameters.
pub fn rho_log_target(rho: f64, v_post: f64, nu_post: f64, n: usize) -> f64 {
    -nu_post * (rho * v_post + log_normalizer(rho, n))
}

/// Grid over the dispersion domain with trapezoid weights, log-spaced to resolve mass near 0.
pub fn rho_grid(v_post: f64, nu_post: f64, n: usize, points: usize) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = (RHO_MIN.ln(), RHO_MAX.ln());
    let xs: Vec<f64> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect();
    let logs: Vec<f64> = xs
        .iter()
        .map(|&x| rho_log_target(x, v_post, nu_post, n))
        .collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let mut mass = vec![0.0; points];
    for i in 0..points - 1 {
        let h = xs[i + 1] - xs[i];
        mass[i] += 0.5 * h * dens[i];
        mass[i + 1] += 0.5 * h * dens[i + 1];
    }
    let total: f64 = mass.iter().sum();
    (xs, mass.into_iter().map(|m| m / total).collect())
}

pub fn rho_posterior_mean(v_post: f64, nu_post: f64, n: usize) -> f64 {
    let (xs, w) = rho_grid(v_post, nu_post, n, 400_001);
    xs.iter().zip(&w).map(|(x, w)| x * w).sum()
}

/// Exact draws from the discretized target by inverse CDF.
pub fn rho_exact_draws(v_post: f64, nu_post: f64, n: usize, u: &[f64]) -> Vec<f64> {
    let (xs, w) = rho_grid(v_post, nu_post, n, 200_001);
    let mut cdf = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for p in &w {
        acc += p;
        cdf.push(acc);
    }
    u.iter()
        .map(|&q| xs[cdf.partition_point(|&c| c < q).min(xs.len() - 1)])
        .collect()
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
pub fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// Parameters of the enumerable two-video toy corpus.
pub struct ToyModel {
    pub tables: Vec<Vec<[f64; 3]>>,
    pub rho: f64,
    pub theta0: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ToyModel {
    fn default() -> Self {
        ToyModel {
            // Columns: label 1, label 2, background.
            tables: vec![
                vec![
                    [-0.2, -1.5, -1.0],
                    [-0.4, -1.0, -0.8],
                    [-1.2, -0.3, -1.3],
                    [-1.6, -0.1, -0.9],
                ],
                vec![
                    [-0.7, -0.9, -0.5],
                    [-1.1, -0.5, -1.4],
                    [-0.6, -0.8, -0.7],
                    [-0.9, -0.6, -1.0],
                ],
            ],
            rho: 0.7,
            theta0: 0.1,
            alpha: 0.2,
            beta: 0.2,
        }
    }
}

/// Labels from per-frame tokens (0 = background) and an ordering of `{1, 2}`.
fn toy_labels(tokens: &[usize], order: [usize; 2]) -> Vec<usize> {
    let count = |l| tokens.iter().filter(|&&t| t == l).count();
    let mut queue: Vec<usize> = Vec::new();
    for l in order {
        queue.extend(std::iter::repeat_n(l, count(l)));
    }
    let mut next = queue.into_iter();
    tokens
        .iter()
        .map(|&t| if t == 0 { 0 } else { next.next().unwrap() })
        .collect()
}

/// Labels, unit counts and weight of one configuration of a video.
type VideoOption = (Vec<usize>, [usize; 2], f64);

/// Exact posterior over the pair of label sequences, summing out tokens and orderings.
pub fn toy_posterior(model: &ToyModel, background: bool) -> HashMap<(Vec<usize>, Vec<usize>), f64> {
    let values: Vec<usize> = if background {
        vec![0, 1, 2]
    } else {
        vec![1, 2]
    };
    let mut per_video: Vec<Vec<VideoOption>> = Vec::new();
    for table in &model.tables {
        let mut options = Vec::new();
        let frames = table.len();
        let total = values.len().pow(frames as u32);
        for code in 0..total {
            let tokens: Vec<usize> = (0..frames)
                .map(|j| values[(code / values.len().pow(j as u32)) % values.len()])
                .collect();
            for (order, swaps) in [([1, 2], 0usize), ([2, 1], 1)] {
                let z = toy_labels(&tokens, order);
                let ll: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(j, &l)| table[j][if l == 0 { 2 } else { l - 1 }])
                    .sum();
                let mallows = -model.rho * swaps as f64 - (1.0 + (-model.rho).exp()).ln();
                options.push((tokens.clone(), order, ll + mallows));
            }
        }
        per_video.push(options);
    }
    let (t0, k) = (model.theta0, 2.0);
    let mut post: HashMap<(Vec<usize>, Vec<usize>), f64> = HashMap::new();
    let mut logs = Vec::new();
    for (ta, oa, la) in &per_video[0] {
        for (tb, ob, lb) in &per_video[1] {
            let n1 = ta.iter().chain(tb).filter(|&&t| t == 1).count() as f64;
            let n2 = ta.iter().chain(tb).filter(|&&t| t == 2).count() as f64;
            let nb = ta.iter().chain(tb).filter(|&&t| t == 0).count() as f64;
            let nf = n1 + n2;
            let mut lp =
                ln_gamma(k * t0) - ln_gamma(nf + k * t0) + ln_gamma(n1 + t0) + ln_gamma(n2 + t0)
                    - 2.0 * ln_gamma(t0);
            if background {
                let (a, b) = (model.alpha, model.beta);
                lp += ln_gamma(nb + a) + ln_gamma(nf + b)
                    - ln_gamma(nb + nf + a + b)
                    - ln_gamma(a)
                    - ln_gamma(b)
                    + ln_gamma(a + b);
            }
            lp += la + lb;
            logs.push(((toy_labels(ta, *oa), toy_labels(tb, *ob)), lp));
        }
    }
    let peak = logs
        .iter()
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|(_, l)| (l - peak).exp()).sum();
    for (key, l) in logs {
        *post.entry(key).or_insert(0.0) += (l - peak).exp() / total;
    }
    post
}

pub fn total_variation<K: std::hash::Hash + Eq + Clone>(
    p: &HashMap<K, f64>,
    q: &HashMap<K, f64>,
) -> f64 {
    let mut keys: Vec<&K> = p.keys().collect();
    keys.extend(q.keys().filter(|k| !p.contains_key(*k)));
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Long-run frequencies of the label pair under the library's Gibbs sweeps.
pub fn toy_chain(
    model: &ToyModel,
    background: bool,
    sweeps: usize,
    seed: u64,
) -> HashMap<(Vec<usize>, Vec<usize>), f64> {
    let config = RunConfig {
        theta0: model.theta0,
        alpha: model.alpha,
        beta: model.beta,
        background,
        ..RunConfig::new(2)
    };
    let cols = if background { 3 } else { 2 };
    let cache = LogLikCache {
        videos: model
            .tables
            .iter()
            .map(|t| {
                let table = Array2::from_shape_fn((t.len(), cols), |(j, c)| t[j][c]);
                VideoLogLik::from_table(table, 2).unwrap()
            })
            .collect(),
    };
    let mut states: Vec<_> = model
        .tables
        .iter()
        .map(|t| init_state(t.len(), &config).unwrap())
        .collect();
    let mut counts = CorpusCounts::from_states(&states, 2);
    let params = MallowsParams::new(vec![model.rho], 1.0, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1_000 {
        gibbs_sweep(&mut states, &mut counts, &cache, &params, &config, &mut rng).unwrap();
    }
    let mut freq: HashMap<(Vec<usize>, Vec<usize>), f64> = HashMap::new();
    for _ in 0..sweeps {
        gibbs_sweep(&mut states, &mut counts, &cache, &params, &config, &mut rng).unwrap();
        *freq
            .entry((states[0].z.clone(), states[1].z.clone()))
            .or_insert(0.0) += 1.0 / sweeps as f64;
    }
    freq
}

/// Marginal over one coordinate of a pair distribution.
pub fn marginal(
    p: &HashMap<(Vec<usize>, Vec<usize>), f64>,
    first: bool,
) -> HashMap<Vec<usize>, f64> {
    let mut out = HashMap::new();
    for ((a, b), w) in p {
        *out.entry(if first { a.clone() } else { b.clone() })
            .or_insert(0.0) += w;
    }
    out
}
