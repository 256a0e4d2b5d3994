//! Robustness, fidelity and ranking metrics for attributions.
//!
//! The neighbourhood metrics take the attribution method as an
//! [`Explainer`] so that any `g` (a real method or a test double) can be
//! plugged in.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attribution::{cross_entropy_gradient, Attributor, Method};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, ModelParams};
use crate::rng::RngState;
use crate::similar::{distances, SimilarSet, SimilarityConfig};
use crate::tensor::Tensor;
use crate::train::Regime;

/// Maps a batch of inputs, all of predicted class `y`, to attributions.
pub trait Explainer {
    fn explain(&self, xs: &Tensor, y: usize, rng: &mut RngState) -> Result<Tensor>;
}

impl<F> Explainer for F
where
    F: Fn(&Tensor, usize, &mut RngState) -> Result<Tensor>,
{
    fn explain(&self, xs: &Tensor, y: usize, rng: &mut RngState) -> Result<Tensor> {
        self(xs, y, rng)
    }
}

/// One attribution method bound to a model.
#[derive(Debug, Clone, Copy)]
pub struct MethodExplainer<'a> {
    pub attributor: &'a Attributor<'a>,
    pub method: Method,
}

impl Explainer for MethodExplainer<'_> {
    fn explain(&self, xs: &Tensor, y: usize, rng: &mut RngState) -> Result<Tensor> {
        self.attributor.batch(self.method, xs, y, rng)
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    distances(a, b).0
}

fn stack<'a>(first: &[f64], rest: impl Iterator<Item = &'a [f64]>) -> Result<Tensor> {
    let d = first.len();
    let mut data = first.to_vec();
    let mut n = 1;
    for r in rest {
        data.extend_from_slice(r);
        n += 1;
    }
    Tensor::matrix(n, d, data)
}

/// Mean ℓ2 distance from `anchor` to each of `others`.
pub fn mean_l2_distance<'a>(
    anchor: &[f64],
    others: impl IntoIterator<Item = &'a [f64]>,
) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for o in others {
        total += l2(anchor, o);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyNeighborhood(
            "no similar inputs to average over".into(),
        ));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OsrConfig {
    pub similarity: SimilarityConfig,
    /// Threshold for the robust / not-robust verdict; `None` skips it.
    pub epsilon: Option<f64>,
    /// At most this many similar inputs are used.
    pub sample_count: usize,
}

impl Default for OsrConfig {
    fn default() -> Self {
        Self {
            similarity: SimilarityConfig::default(),
            epsilon: None,
            sample_count: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsrValue {
    pub value: f64,
    pub samples: usize,
    /// `value <= epsilon`, when a threshold was given.
    pub robust: Option<bool>,
}

/// Sample mean of `‖g(x) - g(x̃)‖₂` over the similar set.
pub fn osr(
    g: &impl Explainer,
    x: &[f64],
    similar: &SimilarSet,
    config: &OsrConfig,
    rng: &mut RngState,
) -> Result<OsrValue> {
    if config.sample_count == 0 {
        return Err(Error::Parameter("sample_count must be at least 1".into()));
    }
    if similar.anchor != x {
        return Err(Error::Contract(
            "similar set was built for a different anchor".into(),
        ));
    }
    if similar.is_empty() {
        return Err(Error::EmptyNeighborhood(format!(
            "{:?} similar set is empty ({} candidates rejected)",
            similar.source, similar.rejected
        )));
    }
    let used = similar.len().min(config.sample_count);
    let batch = stack(x, similar.inputs().take(used))?;
    let attr = g.explain(&batch, similar.anchor_prediction.class, rng)?;
    let value = mean_l2_distance(attr.row(0), (1..=used).map(|i| attr.row(i)))?;
    Ok(OsrValue {
        value,
        samples: used,
        robust: config.epsilon.map(|e| value <= e),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Maximizer {
    /// Maximum over the candidate pool.
    Random,
    /// Pool maximum, then refined by a zeroth-order ascent on the
    /// attribution distance.
    Ascent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// ℓ∞ radius of the neighbourhood.
    pub radius: f64,
    pub sample_count: usize,
    pub include_training_points: bool,
    pub maximizer: Maximizer,
    pub ascent_steps: usize,
    /// Ascent step as a fraction of `radius`.
    pub ascent_step: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            radius: 0.05,
            sample_count: 50,
            include_training_points: true,
            maximizer: Maximizer::Random,
            ascent_steps: 20,
            ascent_step: 0.25,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Parameter(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        Ok(())
    }
}

/// Same-class neighbours of `x` inside the ℓ∞ ball.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityPool {
    pub anchor: Vec<f64>,
    pub class: usize,
    /// Uniform draws `clamp(x + U(-r, r)^d, 0, 1)` that kept the class.
    pub ball: Vec<Vec<f64>>,
    /// Training points within the ball that kept the class.
    pub training: Vec<Vec<f64>>,
}

impl SensitivityPool {
    pub fn len(&self) -> usize {
        self.ball.len() + self.training.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws the candidate pool for [`sensitivity_from_pool`].
pub fn sensitivity_pool(
    model: &ModelParams,
    x: &[f64],
    config: &SensitivityConfig,
    training: Option<&Dataset>,
    rng: &mut RngState,
) -> Result<SensitivityPool> {
    config.validate()?;
    let class = model.predict(x)?.class;
    let r = config.radius;
    let d = x.len();
    let mut draws = Vec::with_capacity(config.sample_count * d);
    for _ in 0..config.sample_count {
        draws.extend(
            x.iter()
                .map(|&v| (v + rng.uniform_range(-r, r)).clamp(0.0, 1.0)),
        );
    }
    let draws = Tensor::matrix(config.sample_count, d, draws)?;
    let ball = if config.sample_count == 0 {
        Vec::new()
    } else {
        model
            .predict_batch(&draws)?
            .iter()
            .enumerate()
            .filter(|(_, p)| p.class == class)
            .map(|(i, _)| draws.row(i).to_vec())
            .collect()
    };
    let mut near = Vec::new();
    if let (true, Some(train)) = (config.include_training_points, training) {
        for i in 0..train.len() {
            let img = train.image(i);
            if img.len() == d && img.iter().zip(x).all(|(a, b)| libm::fabs(a - b) <= r) {
                near.push(img.to_vec());
            }
        }
    }
    let training = if near.is_empty() {
        near
    } else {
        let t = Tensor::matrix(near.len(), d, near.concat())?;
        model
            .predict_batch(&t)?
            .iter()
            .zip(near)
            .filter(|(p, _)| p.class == class)
            .map(|(_, v)| v)
            .collect()
    };
    Ok(SensitivityPool {
        anchor: x.to_vec(),
        class,
        ball,
        training,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityValue {
    pub value: f64,
    pub ball_max: Option<f64>,
    pub training_max: Option<f64>,
    pub ball_candidates: usize,
    pub training_candidates: usize,
    /// Best distance found by the ascent, when it ran.
    pub ascent_max: Option<f64>,
}

/// `max ‖g(x) - g(x')‖₂` over the pool, optionally refined by ascent.
///
/// The ascent treats `g` as a black box: each step compares the distance
/// at `x' ± c·Δ` for a random sign vector `Δ` (`c = step / 4`) and moves
/// `x'` by `step · Δ` towards the larger one, projected back onto the ball
/// and `[0, 1]`. Moves that change the predicted class are discarded.
pub fn sensitivity_from_pool(
    g: &impl Explainer,
    model: &ModelParams,
    pool: &SensitivityPool,
    config: &SensitivityConfig,
    rng: &mut RngState,
) -> Result<SensitivityValue> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyNeighborhood(format!(
            "no same-class point within l-inf radius {}",
            config.radius
        )));
    }
    let x = &pool.anchor;
    let batch = stack(x, pool.ball.iter().chain(&pool.training).map(Vec::as_slice))?;
    let attr = g.explain(&batch, pool.class, rng)?;
    let base = attr.row(0).to_vec();
    let dists: Vec<f64> = (1..=pool.len()).map(|i| l2(&base, attr.row(i))).collect();
    let max_of = |s: &[f64]| s.iter().copied().reduce(f64::max);
    let (ball_d, train_d) = dists.split_at(pool.ball.len());
    let ball_max = max_of(ball_d);
    let training_max = max_of(train_d);
    let mut value = max_of(&dists).expect("non-empty pool");

    let mut ascent_max = None;
    if config.maximizer == Maximizer::Ascent && config.ascent_steps > 0 {
        let best = dists
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v > dists[b] { i } else { b });
        let mut cur = batch.row(best + 1).to_vec();
        let mut cur_val = dists[best];
        let step = config.ascent_step * config.radius;
        let probe = step / 4.0;
        let project = |p: &mut [f64]| {
            for (v, &a) in p.iter_mut().zip(x.iter()) {
                *v = v
                    .clamp(a - config.radius, a + config.radius)
                    .clamp(0.0, 1.0);
            }
        };
        for _ in 0..config.ascent_steps {
            let signs: Vec<f64> = (0..x.len())
                .map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 })
                .collect();
            let mut plus = cur.clone();
            let mut minus = cur.clone();
            for ((p, m), s) in plus.iter_mut().zip(minus.iter_mut()).zip(&signs) {
                *p += probe * s;
                *m -= probe * s;
            }
            project(&mut plus);
            project(&mut minus);
            let dir = match (
                same_class_distance(g, model, pool, &base, &plus, rng)?,
                same_class_distance(g, model, pool, &base, &minus, rng)?,
            ) {
                (Some(a), Some(b)) if a < b => -1.0,
                (None, Some(_)) => -1.0,
                (None, None) => continue,
                _ => 1.0,
            };
            let mut next = cur.clone();
            next.iter_mut()
                .zip(&signs)
                .for_each(|(v, s)| *v += dir * step * s);
            project(&mut next);
            if let Some(v) = same_class_distance(g, model, pool, &base, &next, rng)? {
                if v > cur_val {
                    cur = next;
                    cur_val = v;
                }
            }
        }
        ascent_max = Some(cur_val);
        value = value.max(cur_val);
    }
    Ok(SensitivityValue {
        value,
        ball_max,
        training_max,
        ball_candidates: pool.ball.len(),
        training_candidates: pool.training.len(),
        ascent_max,
    })
}

fn same_class_distance(
    g: &impl Explainer,
    model: &ModelParams,
    pool: &SensitivityPool,
    base: &[f64],
    p: &[f64],
    rng: &mut RngState,
) -> Result<Option<f64>> {
    if model.predict(p)?.class != pool.class {
        return Ok(None);
    }
    let a = g.explain(&Tensor::matrix(1, p.len(), p.to_vec())?, pool.class, rng)?;
    Ok(Some(l2(base, a.data())))
}

/// Builds the pool and evaluates it in one call.
pub fn sensitivity_mu(
    g: &impl Explainer,
    model: &ModelParams,
    x: &[f64],
    config: &SensitivityConfig,
    training: Option<&Dataset>,
    rng: &mut RngState,
) -> Result<SensitivityValue> {
    let pool = sensitivity_pool(model, x, config, training, rng)?;
    sensitivity_from_pool(g, model, &pool, config, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    /// Features replaced per trial; `None` means `d / 2`.
    pub subset_size: Option<usize>,
    pub n_subsets: usize,
    /// Replacement values; `None` is the all-zero image.
    pub baseline: Option<Vec<f64>>,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            subset_size: None,
            n_subsets: 100,
            baseline: None,
        }
    }
}

impl FidelityConfig {
    pub fn resolved_subset_size(&self, d: usize) -> usize {
        self.subset_size.unwrap_or(d / 2)
    }
}

/// Pearson correlation; errors when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape {
            op: "pearson",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation {
            var_a: saa / n,
            var_b: sbb / n,
        });
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Correlation, across random feature subsets `S`, between
/// `Σ_{i∈S} a_i` and the logit drop `F_y(x) - F_y(x with x_S := x_b)`.
pub fn fidelity_mu(
    attribution: &[f64],
    model: &ModelParams,
    x: &[f64],
    config: &FidelityConfig,
    rng: &mut RngState,
) -> Result<f64> {
    let d = x.len();
    if attribution.len() != d {
        return Err(Error::Shape {
            op: "fidelity_mu",
            left: vec![d],
            right: vec![attribution.len()],
        });
    }
    let k = config.resolved_subset_size(d);
    if k == 0 || k > d {
        return Err(Error::Parameter(format!("subset size {k} not in [1, {d}]")));
    }
    if config.n_subsets < 2 {
        return Err(Error::Parameter("fidelity needs at least 2 subsets".into()));
    }
    let base = match &config.baseline {
        None => vec![0.0; d],
        Some(b) if b.len() == d => b.clone(),
        Some(b) => {
            return Err(Error::Shape {
                op: "fidelity_mu",
                left: vec![d],
                right: vec![b.len()],
            })
        }
    };
    let anchor = model.predict(x)?;
    let mut sums = Vec::with_capacity(config.n_subsets);
    let mut masked = Vec::with_capacity(config.n_subsets * d);
    for _ in 0..config.n_subsets {
        let subset = rng.sample_indices(d, k);
        sums.push(subset.iter().map(|&i| attribution[i]).sum::<f64>());
        let start = masked.len();
        masked.extend_from_slice(x);
        for &i in &subset {
            masked[start + i] = base[i];
        }
    }
    let out = model.eval(&Tensor::matrix(config.n_subsets, d, masked)?)?;
    let drops: Vec<f64> = (0..config.n_subsets)
        .map(|i| anchor.logit - out.row(i)[anchor.class])
        .collect();
    pearson(&sums, &drops)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrConfig {
    /// Size of the attacked feature set; `None` means `⌈0.2·d⌉`.
    pub k: Option<usize>,
    pub bisection_lo: f64,
    /// Upper budget; `None` means `‖x‖₂`.
    pub bisection_hi: Option<f64>,
    pub bisection_iters: usize,
    pub inner_attack_steps: usize,
    /// Inner step length as a fraction of the current budget.
    pub inner_step_size: f64,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            k: None,
            bisection_lo: 0.0,
            bisection_hi: None,
            bisection_iters: 20,
            inner_attack_steps: 50,
            inner_step_size: 0.25,
        }
    }
}

impl SrConfig {
    pub fn resolved_k(&self, d: usize) -> usize {
        self.k
            .unwrap_or_else(|| libm::ceil(0.2 * d as f64) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SrOutcome {
    /// Smallest budget that caused a misclassification.
    Found { budget: f64 },
    /// Even the upper budget did not.
    NotFound { hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrValue {
    pub outcome: SrOutcome,
    /// Width of the final bisection bracket.
    pub resolution: f64,
    pub support_size: usize,
}

impl SrValue {
    pub fn budget(&self) -> Option<f64> {
        match self.outcome {
            SrOutcome::Found { budget } => Some(budget),
            SrOutcome::NotFound { .. } => None,
        }
    }
}

/// Indices of the `k` largest `|values|`, lower index first on ties.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        libm::fabs(values[b])
            .total_cmp(&libm::fabs(values[a]))
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Whether a projected-gradient attack restricted to `support` finds a
/// misclassified point within ℓ2 `budget`.
fn attack_succeeds(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    support: &[usize],
    budget: f64,
    config: &SrConfig,
) -> bool {
    let mut delta = vec![0.0; x.len()];
    let step = config.inner_step_size * budget;
    let mut point = x.to_vec();
    for t in 0..=config.inner_attack_steps {
        let (logits, grad) = cross_entropy_gradient(model, &point, y);
        if t > 0 && argmax(&logits) != y {
            return true;
        }
        if t == config.inner_attack_steps {
            break;
        }
        let norm = libm::sqrt(support.iter().map(|&i| grad[i] * grad[i]).sum::<f64>());
        if norm == 0.0 || !norm.is_finite() {
            return false;
        }
        for &i in support {
            delta[i] += step * grad[i] / norm;
        }
        let dn = libm::sqrt(support.iter().map(|&i| delta[i] * delta[i]).sum::<f64>());
        if dn > budget {
            support.iter().for_each(|&i| delta[i] *= budget / dn);
        }
        for &i in support {
            point[i] = x[i] + delta[i];
        }
    }
    false
}

/// Minimal ℓ2 perturbation, restricted to the top-k features of
/// `attribution`, that changes the prediction away from `y`.
pub fn robustness_sr(
    model: &ModelParams,
    x: &[f64],
    y: usize,
    attribution: &[f64],
    config: &SrConfig,
) -> Result<SrValue> {
    let d = x.len();
    if attribution.len() != d {
        return Err(Error::Shape {
            op: "robustness_sr",
            left: vec![d],
            right: vec![attribution.len()],
        });
    }
    let k = config.resolved_k(d);
    if k == 0 || k > d {
        return Err(Error::Parameter(format!("k = {k} not in [1, {d}]")));
    }
    if model.predict(x)?.class != y {
        return Ok(SrValue {
            outcome: SrOutcome::Found { budget: 0.0 },
            resolution: 0.0,
            support_size: k,
        });
    }
    let mut lo = config.bisection_lo;
    let hi0 = config
        .bisection_hi
        .unwrap_or_else(|| libm::sqrt(x.iter().map(|v| v * v).sum::<f64>()));
    if !(lo >= 0.0 && lo < hi0) {
        return Err(Error::Parameter(format!(
            "bisection bracket [{lo}, {hi0}] is empty"
        )));
    }
    let support = top_k_indices(attribution, k);
    if !attack_succeeds(model, x, y, &support, hi0, config) {
        return Ok(SrValue {
            outcome: SrOutcome::NotFound { hi: hi0 },
            resolution: hi0 - lo,
            support_size: k,
        });
    }
    let mut hi = hi0;
    for _ in 0..config.bisection_iters {
        let mid = 0.5 * (lo + hi);
        if attack_succeeds(model, x, y, &support, mid, config) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SrValue {
        outcome: SrOutcome::Found { budget: hi },
        resolution: hi - lo,
        support_size: k,
    })
}

/// `|top-k(|a|) ∩ top-k(|b|)| / k`.
pub fn topk_intersection(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "topk_intersection",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if k == 0 || k > a.len() {
        return Err(Error::Parameter(format!("k = {k} not in [1, {}]", a.len())));
    }
    let ta = top_k_indices(a, k);
    let mut in_b = vec![false; a.len()];
    top_k_indices(b, k).into_iter().for_each(|i| in_b[i] = true);
    Ok(ta.iter().filter(|&&i| in_b[i]).count() as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankCorrelation {
    Kendall,
    Spearman,
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

fn tie_pairs(sorted: impl Iterator<Item = f64>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<f64> = None;
    for v in sorted {
        if prev == Some(v) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Sorts `v` and returns the number of inversions (pairs `i < j` with
/// `v[i] > v[j]`).
fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        count_inversions(l, &mut buf[..mid]) + count_inversions(r, &mut buf[mid..])
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            j += 1;
            swaps += (mid - i) as u64;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k = k + mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall τ-b in `O(n log n)` (Knight's merge-sort algorithm).
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let n0 = (n * (n - 1) / 2) as u64;
    let n1 = tie_pairs(pairs.iter().map(|p| p.0));
    // joint ties: equal in both coordinates
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;
    let mut bs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = count_inversions(&mut bs, &mut buf);
    let n2 = tie_pairs(bs.iter().copied());
    let denom_a = n0 - n1;
    let denom_b = n0 - n2;
    if denom_a == 0 || denom_b == 0 {
        return Err(Error::UndefinedCorrelation {
            var_a: variance(a),
            var_b: variance(b),
        });
    }
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    Ok(num / libm::sqrt(denom_a as f64 * denom_b as f64))
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        idx[start..end].iter().for_each(|&i| ranks[i] = r);
        start = end;
    }
    ranks
}

/// Spearman ρ: Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b)).map_err(|e| match e {
        Error::UndefinedCorrelation { .. } => Error::UndefinedCorrelation {
            var_a: variance(a),
            var_b: variance(b),
        },
        e => e,
    })
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape {
            op: "rank_correlation",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "rank_correlation",
        });
    }
    Ok(())
}

pub fn rank_correlation(a: &[f64], b: &[f64], kind: RankCorrelation) -> Result<f64> {
    match kind {
        RankCorrelation::Kendall => kendall_tau_b(a, b),
        RankCorrelation::Spearman => spearman_rho(a, b),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

/// Method ids ordered best first; equal values fall back to alphabetical
/// order of the id.
pub fn rank_methods(values: &[(String, f64)], direction: Direction) -> Result<Vec<String>> {
    if let Some((m, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Parameter(format!(
            "non-finite value {v} for method {m}"
        )));
    }
    let mut sorted: Vec<&(String, f64)> = values.iter().collect();
    sorted.sort_by(|(ma, a), (mb, b)| {
        let by_value = match direction {
            Direction::LowerBetter => a.total_cmp(b),
            Direction::HigherBetter => b.total_cmp(a),
        };
        by_value.then_with(|| ma.cmp(mb))
    });
    Ok(sorted.into_iter().map(|(m, _)| m.clone()).collect())
}

/// Kendall τ between two orderings of the same method set.
pub fn ranking_stability(order_well: &[String], order_bad: &[String]) -> Result<f64> {
    let mut a: Vec<&String> = order_well.iter().collect();
    let mut b: Vec<&String> = order_bad.iter().collect();
    a.sort();
    b.sort();
    if a != b || a.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parameter(format!(
            "rankings are not permutations of one method set: {order_well:?} vs {order_bad:?}"
        )));
    }
    if a.len() < 2 {
        return Err(Error::Parameter(
            "ranking stability needs at least 2 methods".into(),
        ));
    }
    let pos_bad: BTreeMap<&String, usize> =
        order_bad.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let x: Vec<f64> = (0..order_well.len()).map(|i| i as f64).collect();
    let y: Vec<f64> = order_well.iter().map(|m| pos_bad[m] as f64).collect();
    kendall_tau_b(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// OSR over GAN-generated similar inputs.
    Osr,
    /// OSR over the uniform-noise neighbourhood.
    OsrUniform,
    /// OSR over the Gaussian-noise neighbourhood.
    OsrNormal,
    Sensitivity,
    Fidelity,
    RobustnessSr,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Osr,
        MetricKind::OsrUniform,
        MetricKind::OsrNormal,
        MetricKind::Sensitivity,
        MetricKind::Fidelity,
        MetricKind::RobustnessSr,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MetricKind::Osr => "osr",
            MetricKind::OsrUniform => "osr_uniform",
            MetricKind::OsrNormal => "osr_normal",
            MetricKind::Sensitivity => "sensitivity",
            MetricKind::Fidelity => "fidelity",
            MetricKind::RobustnessSr => "robustness_sr",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            MetricKind::Fidelity => Direction::HigherBetter,
            _ => Direction::LowerBetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub input_index: usize,
    pub method: String,
    pub regime: Regime,
    pub metric: MetricKind,
    pub value: f64,
    /// Seed of the random stream the cell consumed.
    pub seed: u64,
}

/// A grid cell with no value, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub input_index: usize,
    pub method: String,
    pub regime: Regime,
    pub metric: MetricKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: MetricKind,
    pub regime: Regime,
    pub method: String,
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub metric: MetricKind,
    pub regime: Regime,
    pub order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub metric: MetricKind,
    /// Kendall τ between the well and bad rankings; `None` when the two
    /// regimes did not rank the same method set.
    pub kendall_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub skipped: Vec<SkippedCell>,
    pub summaries: Vec<Summary>,
    pub rankings: Vec<Ranking>,
    pub stability: Vec<Stability>,
    /// `τ_osr >= τ_sensitivity`, when both are defined.
    pub osr_at_least_as_stable: Option<bool>,
}

impl MetricReport {
    /// Aggregates rows (mean per method), ranks methods per metric and
    /// regime, and compares the regimes.
    pub fn build(rows: Vec<MetricRow>, skipped: Vec<SkippedCell>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| !r.value.is_finite()) {
            return Err(Error::NonFinite { op: r.metric.id() });
        }
        let mut groups: BTreeMap<(MetricKind, Regime, &str), Vec<f64>> = BTreeMap::new();
        for r in &rows {
            groups
                .entry((r.metric, r.regime, &r.method))
                .or_default()
                .push(r.value);
        }
        let summaries: Vec<Summary> = groups
            .iter()
            .map(|(&(metric, regime, method), vals)| {
                let n = vals.len();
                let mean = vals.iter().sum::<f64>() / n as f64;
                let std = if n > 1 {
                    libm::sqrt(
                        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64,
                    )
                } else {
                    0.0
                };
                Summary {
                    metric,
                    regime,
                    method: method.to_string(),
                    mean,
                    std,
                    n,
                }
            })
            .collect();
        let mut rankings = Vec::new();
        let mut stability = Vec::new();
        for metric in MetricKind::ALL {
            let mut orders = BTreeMap::new();
            for regime in Regime::ALL {
                let means: Vec<(String, f64)> = summaries
                    .iter()
                    .filter(|s| s.metric == metric && s.regime == regime)
                    .map(|s| (s.method.clone(), s.mean))
                    .collect();
                if means.is_empty() {
                    continue;
                }
                let order = rank_methods(&means, metric.direction())?;
                orders.insert(regime, order.clone());
                rankings.push(Ranking {
                    metric,
                    regime,
                    order,
                });
            }
            if let (Some(w), Some(b)) = (orders.get(&Regime::Well), orders.get(&Regime::Bad)) {
                stability.push(Stability {
                    metric,
                    kendall_tau: ranking_stability(w, b).ok(),
                });
            }
        }
        let tau = |m| {
            stability
                .iter()
                .find(|s| s.metric == m)
                .and_then(|s| s.kendall_tau)
        };
        let osr_at_least_as_stable = match (tau(MetricKind::Osr), tau(MetricKind::Sensitivity)) {
            (Some(o), Some(s)) => Some(o >= s),
            _ => None,
        };
        Ok(Self {
            rows,
            skipped,
            summaries,
            rankings,
            stability,
            osr_at_least_as_stable,
        })
    }

    pub fn ranking(&self, metric: MetricKind, regime: Regime) -> Option<&[String]> {
        self.rankings
            .iter()
            .find(|r| r.metric == metric && r.regime == regime)
            .map(|r| r.order.as_slice())
    }

    pub fn stability_of(&self, metric: MetricKind) -> Option<f64> {
        self.stability
            .iter()
            .find(|s| s.metric == metric)
            .and_then(|s| s.kendall_tau)
    }
}
