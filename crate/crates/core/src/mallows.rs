//! Generalized Mallows model over permutations of `K` items.
//!
//! Permutations are measured against the identity ordering `(1, ..., K)` and encoded as
//! inversion vectors: entry `k` counts the items larger than `k` that appear before `k`.
//! Under per-position dispersions `rho`, the positions are independent and position `k`
//! follows a truncated geometric law on `{0, ..., K - k}`.
//!
//! The single-dispersion Mallows model is the special case where every `rho_k` is equal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::sample_index;
use crate::error::{Error, Result};
use crate::slice::{slice_step, SliceConfig};

/// Lower end of the support used when sampling dispersions.
pub const RHO_MIN: f64 = 1e-4;
/// Upper end of the support used when sampling dispersions; `psi` is numerically 1 beyond it.
pub const RHO_MAX: f64 = 50.0;

/// An ordering of the labels `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    /// Validates that `order` contains each of `1..=order.len()` exactly once.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let k = order.len();
        if k == 0 {
            return Err(Error::input("permutation must contain at least one item"));
        }
        let mut seen = vec![false; k];
        for &item in &order {
            if item == 0 || item > k {
                return Err(Error::input(format!(
                    "permutation value {item} outside 1..={k}"
                )));
            }
            if std::mem::replace(&mut seen[item - 1], true) {
                return Err(Error::input(format!("permutation repeats value {item}")));
            }
        }
        Ok(Permutation(order))
    }

    pub fn identity(k: usize) -> Self {
        Permutation((1..=k).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(order: Vec<usize>) -> Result<Self> {
        Permutation::new(order)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// Inversion counts `v_1..v_{K-1}` of a permutation of `K` items, with `0 <= v_k <= K - k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct InversionVector(Vec<usize>);

impl InversionVector {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        let k = counts.len() + 1;
        for (i, &c) in counts.iter().enumerate() {
            let max = position_size(k, i) - 1;
            if c > max {
                return Err(Error::input(format!(
                    "inversion count v_{} = {c} exceeds its maximum {max}",
                    i + 1
                )));
            }
        }
        Ok(InversionVector(counts))
    }

    /// The all-zero vector, encoding the identity ordering of `k` items.
    pub fn zeros(k: usize) -> Self {
        InversionVector(vec![0; k.saturating_sub(1)])
    }

    /// Number of items `K` in the encoded permutation.
    pub fn num_items(&self) -> usize {
        self.0.len() + 1
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Replaces the count at zero-based `position`.
    pub fn with(&self, position: usize, count: usize) -> Result<Self> {
        let mut counts = self.0.clone();
        match counts.get_mut(position) {
            Some(slot) => *slot = count,
            None => return Err(Error::input(format!("no inversion position {position}"))),
        }
        InversionVector::new(counts)
    }
}

impl TryFrom<Vec<usize>> for InversionVector {
    type Error = Error;

    fn try_from(counts: Vec<usize>) -> Result<Self> {
        InversionVector::new(counts)
    }
}

impl From<InversionVector> for Vec<usize> {
    fn from(v: InversionVector) -> Self {
        v.0
    }
}

/// Number of admissible values `n = K - k + 1` at zero-based inversion position `index`.
pub fn position_size(num_items: usize, index: usize) -> usize {
    num_items - index
}

pub fn inversions_from_permutation(perm: &Permutation) -> InversionVector {
    let k = perm.len();
    let mut counts = vec![0; k - 1];
    for (pos, &item) in perm.as_slice().iter().enumerate() {
        if item < k {
            counts[item - 1] = perm.as_slice()[..pos]
                .iter()
                .filter(|&&earlier| earlier > item)
                .count();
        }
    }
    InversionVector(counts)
}

/// Inverse codec: inserts `K - 1, ..., 1` into `[K]` so that exactly `v_k` larger items precede `k`.
pub fn permutation_from_inversions(v: &InversionVector) -> Permutation {
    let k = v.num_items();
    let mut order = Vec::with_capacity(k);
    order.push(k);
    for item in (1..k).rev() {
        order.insert(v.0[item - 1], item);
    }
    Permutation(order)
}

/// Dispersions of the model plus the hyper-parameters of their conjugate prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MallowsParams {
    pub rho: Vec<f64>,
    pub rho0: f64,
    pub nu0: f64,
}

impl MallowsParams {
    pub fn new(rho: Vec<f64>, rho0: f64, nu0: f64) -> Result<Self> {
        if let Some(bad) = rho.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::input(format!("dispersion {bad} is not positive")));
        }
        if !(rho0 > 0.0 && rho0.is_finite()) || !(nu0 > 0.0 && nu0.is_finite()) {
            return Err(Error::input("rho0 and nu0 must be positive"));
        }
        Ok(MallowsParams { rho, rho0, nu0 })
    }

    /// Every dispersion set to the prior value `rho0`.
    pub fn from_prior(num_items: usize, rho0: f64, nu0: f64) -> Result<Self> {
        MallowsParams::new(vec![rho0; num_items.saturating_sub(1)], rho0, nu0)
    }

    pub fn num_items(&self) -> usize {
        self.rho.len() + 1
    }

    /// Prior mean inversion count `v_{k,0}` at zero-based position `index`.
    pub fn prior_mean(&self, index: usize) -> f64 {
        prior_inversion_mean_unchecked(self.rho0, position_size(self.num_items(), index))
    }
}

fn ln_psi(rho: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    // (1 - e^{-n rho}) / (1 - e^{-rho}) without cancellation for small rho.
    (-(-(n as f64) * rho).exp_m1()).ln() - (-(-rho).exp_m1()).ln()
}

/// `log psi(rho, n) = log sum_{c < n} exp(-rho c)`, the normalizer of one inversion position.
pub fn log_psi(rho: f64, n: usize) -> Result<f64> {
    if !(rho > 0.0) || n < 1 {
        return Err(Error::input(format!(
            "log_psi needs rho > 0 and n >= 1 (got rho = {rho}, n = {n})"
        )));
    }
    Ok(ln_psi(rho, n))
}

/// Log-probability of an inversion vector under the generalized Mallows model.
pub fn gmm_log_prob(v: &InversionVector, params: &MallowsParams) -> Result<f64> {
    if v.0.len() != params.rho.len() {
        return Err(Error::input(format!(
            "inversion vector has {} positions but {} dispersions were given",
            v.0.len(),
            params.rho.len()
        )));
    }
    let k = v.num_items();
    Ok(v.0
        .iter()
        .zip(&params.rho)
        .enumerate()
        .map(|(i, (&c, &rho))| -rho * c as f64 - ln_psi(rho, position_size(k, i)))
        .sum())
}

/// Log-probability of one inversion position taking the value `count`.
pub fn position_log_prob(rho: f64, n: usize, count: usize) -> f64 {
    -rho * count as f64 - ln_psi(rho, n)
}

fn prior_inversion_mean_unchecked(rho0: f64, n: usize) -> f64 {
    1.0 / rho0.exp_m1() - n as f64 / (n as f64 * rho0).exp_m1()
}

/// Expected inversion count at a position with `n` admissible values under dispersion `rho0`.
///
/// This is the `v_{k,0}` hyper-parameter of the dispersion prior.
pub fn prior_inversion_mean(rho0: f64, n: usize) -> Result<f64> {
    if !(rho0 > 0.0) || n < 2 {
        return Err(Error::input(format!(
            "prior_inversion_mean needs rho0 > 0 and n >= 2 (got {rho0}, {n})"
        )));
    }
    Ok(prior_inversion_mean_unchecked(rho0, n))
}

fn log_prior_rho_unchecked(rho: f64, v_k0: f64, nu0: f64, n: usize) -> f64 {
    -nu0 * (rho * v_k0 + ln_psi(rho, n))
}

/// Unnormalized log-density of the conjugate prior on one dispersion:
/// `-nu0 * (rho * v_k0 + log psi(rho, n))`.
pub fn log_prior_rho(rho: f64, v_k0: f64, nu0: f64, n: usize) -> Result<f64> {
    if !(rho > 0.0) || v_k0 < 0.0 || nu0 < 0.0 || n < 1 {
        return Err(Error::input(format!(
            "log_prior_rho needs rho > 0, v_k0 >= 0, nu0 >= 0, n >= 1 \
             (got {rho}, {v_k0}, {nu0}, {n})"
        )));
    }
    Ok(log_prior_rho_unchecked(rho, v_k0, nu0, n))
}

/// Draws one inversion count in `0..n` with probability proportional to `exp(-rho c)`.
pub fn sample_inversion_count<R: Rng + ?Sized>(rho: f64, n: usize, rng: &mut R) -> usize {
    let weights: Vec<f64> = (0..n).map(|c| (-rho * c as f64).exp()).collect();
    sample_index(&weights, rng)
}

/// Conjugate update: folds `count` observed counts summing to `sum_v` into the prior `(v_k0, nu0)`.
pub fn posterior_rho_params(sum_v: usize, count: usize, v_k0: f64, nu0: f64) -> (f64, f64) {
    let nu_post = count as f64 + nu0;
    let v_post = (sum_v as f64 + nu0 * v_k0) / nu_post;
    (v_post, nu_post)
}

/// Slice tuning used for dispersions.
pub fn rho_slice_config() -> SliceConfig {
    SliceConfig {
        width: 1.0,
        max_steps: 50,
        lower: RHO_MIN,
        upper: RHO_MAX,
    }
}

/// One slice-sampling step for a dispersion whose posterior has parameters `(v_post, nu_post)`.
pub fn slice_sample_rho<R: Rng + ?Sized>(
    current: f64,
    v_post: f64,
    nu_post: f64,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(current > 0.0) {
        return Err(Error::input(format!(
            "dispersion {current} is not positive"
        )));
    }
    if v_post < 0.0 || !(nu_post > 0.0) || n < 1 {
        return Err(Error::input("invalid dispersion posterior parameters"));
    }
    let start = current.clamp(RHO_MIN, RHO_MAX);
    Ok(slice_step(
        start,
        |rho| log_prior_rho_unchecked(rho, v_post, nu_post, n),
        &rho_slice_config(),
        rng,
    ))
}
