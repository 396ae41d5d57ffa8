//! Randomized simultaneous perturbation stochastic approximation over binary
//! coding patterns.
//!
//! The optimizer keeps a continuous relaxation `θ ∈ [0, 1]^{M×P}`. Each step draws
//! `R` Rademacher perturbations `Δ`, scores the rounded candidates
//! `round(clip(θ ± c_k·Δ))`, averages the two-sided estimates
//! `(L⁺ − L⁻) / (2c_k) · Δ` and moves `θ ← clip(θ − a_k·ĝ)`. Only bits whose
//! relaxed value sits within `c_k` of one half can change between `L⁺` and `L⁻`.

use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::pattern::{CodingPattern, PatternOrigin};
use crate::rng::{rng_from, tag};

/// Gain sequences `a_k = a / (A + k)^α`, `c_k = c / k^γ`, `R` perturbation pairs per step.
/// `calibration_pairs` extra pairs at the starting point set the loss scale
/// (see [`calibrate_loss_scale`]); zero disables calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsaSchedule {
    pub a: f64,
    pub big_a: f64,
    pub alpha: f64,
    pub c: f64,
    pub gamma: f64,
    pub pairs: usize,
    pub max_steps: usize,
    pub calibration_pairs: usize,
}

impl Default for SpsaSchedule {
    fn default() -> Self {
        Self {
            a: 0.01,
            big_a: 10.0,
            alpha: 0.602,
            c: 0.2,
            gamma: 0.101,
            pairs: 2,
            max_steps: 250,
            calibration_pairs: 0,
        }
    }
}

impl SpsaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a > 0.0
            && self.c > 0.0
            && self.big_a >= 0.0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.pairs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid SPSA schedule {self:?}")))
        }
    }

    pub fn step_size(&self, k: u64) -> f64 {
        self.a / (self.big_a + k as f64).powf(self.alpha)
    }

    pub fn perturbation(&self, k: u64) -> f64 {
        self.c / (k as f64).powf(self.gamma)
    }
}

/// Continuous surrogate `θ` of a binary pattern, row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    rows: usize,
    cols: usize,
    theta: Vec<f64>,
}

impl Relaxation {
    pub fn uniform(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn new(rows: usize, cols: usize, theta: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Domain("relaxation needs positive dimensions".into()));
        }
        ensure_dim("relaxation entries", rows * cols, theta.len())?;
        if theta.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Domain("relaxation entries must lie in [0, 1]".into()));
        }
        Ok(Self { rows, cols, theta })
    }

    /// Relaxation that rounds back to `pattern`, with each entry placed at a
    /// seeded random distance in `(0, 1/2]` from the rounding threshold on the
    /// side of its bit. Entries close to the threshold are the ones the first
    /// perturbations can flip.
    pub fn from_pattern(pattern: &CodingPattern, seed: u64) -> Self {
        let mut rng = rng_from(seed, &[tag::RELAXATION]);
        let theta = pattern
            .bits()
            .iter()
            .map(|&b| {
                let u = 1.0 - rng.random::<f64>();
                0.5 + (f64::from(b) - 0.5) * u
            })
            .collect();
        Self {
            rows: pattern.rows(),
            cols: pattern.cols(),
            theta,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn round(&self) -> CodingPattern {
        round_to_binary(&self.theta, self.rows, self.cols).expect("relaxation stays in [0, 1]")
    }
}

/// `bit = 1` iff `θ ≥ 1/2`.
pub fn round_to_binary(theta: &[f64], rows: usize, cols: usize) -> Result<CodingPattern> {
    ensure_dim("rounded relaxation", rows * cols, theta.len())?;
    if let Some(t) = theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Domain(format!("relaxed bit {t} outside [0, 1]")));
    }
    let bits = theta.iter().map(|&t| u8::from(t >= 0.5)).collect();
    CodingPattern::new(rows, cols, bits, PatternOrigin::Learned)
}

/// Losses of the candidates already scored in this step. `loss_fn` sees a
/// fixed batch within a step, so a repeated candidate is not re-evaluated.
type Memo = Vec<(Vec<u8>, f64)>;

#[allow(clippy::too_many_arguments)]
fn two_sided<F>(
    loss_fn: &mut F,
    relaxation: &Relaxation,
    delta: &[f64],
    c_k: f64,
    k: u64,
    shifted: &mut [f64],
    memo: &mut Memo,
) -> Result<(f64, f64)>
where
    F: FnMut(&CodingPattern) -> Result<f64>,
{
    let mut evaluate = |sign: f64| -> Result<f64> {
        for i in 0..shifted.len() {
            shifted[i] = (relaxation.theta[i] + sign * c_k * delta[i]).clamp(0.0, 1.0);
        }
        let candidate = round_to_binary(shifted, relaxation.rows, relaxation.cols)?;
        if let Some((_, v)) = memo.iter().find(|(bits, _)| bits.as_slice() == candidate.bits()) {
            return Ok(*v);
        }
        let value = loss_fn(&candidate)?;
        if !value.is_finite() {
            return Err(Error::Optimizer(format!("non-finite loss {value} at SPSA step {k}")));
        }
        memo.push((candidate.bits().to_vec(), value));
        Ok(value)
    };
    let plus = evaluate(1.0)?;
    let minus = evaluate(-1.0)?;
    Ok((plus, minus))
}

fn rademacher<R: Rng>(rng: &mut R, delta: &mut [f64]) {
    delta
        .iter_mut()
        .for_each(|d| *d = if rng.random::<bool>() { 1.0 } else { -1.0 });
}

/// Mean `|L⁺ − L⁻|` over `schedule.calibration_pairs` perturbations of size `c_1`
/// around `relaxation` (stream `[SPSA, 0]`). Dividing the loss by this value
/// makes the gain `a` independent of the objective's units. Returns 1 when
/// calibration is disabled or every difference vanishes.
pub fn calibrate_loss_scale<F>(
    mut loss_fn: F,
    schedule: &SpsaSchedule,
    relaxation: &Relaxation,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&CodingPattern) -> Result<f64>,
{
    schedule.validate()?;
    if schedule.calibration_pairs == 0 {
        return Ok(1.0);
    }
    let n = relaxation.theta.len();
    let c_1 = schedule.perturbation(1);
    let mut rng = rng_from(seed, &[tag::SPSA, 0]);
    let mut delta = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut memo = Memo::new();
    let mut total = 0.0;
    for _ in 0..schedule.calibration_pairs {
        rademacher(&mut rng, &mut delta);
        let (plus, minus) = two_sided(&mut loss_fn, relaxation, &delta, c_1, 0, &mut shifted, &mut memo)?;
        total += (plus - minus).abs();
    }
    let scale = total / schedule.calibration_pairs as f64;
    Ok(if scale > 0.0 { scale } else { 1.0 })
}

/// One r-SPSA step (`k ≥ 1`) on `relaxation`, returning the rounded candidate.
/// `loss_fn` must be deterministic within a step: candidates that round to
/// the same code are scored once.
pub fn rspsa_step<F>(
    mut loss_fn: F,
    schedule: &SpsaSchedule,
    relaxation: &mut Relaxation,
    k: u64,
    seed: u64,
) -> Result<CodingPattern>
where
    F: FnMut(&CodingPattern) -> Result<f64>,
{
    if k == 0 {
        return Err(Error::Domain("SPSA step index starts at 1".into()));
    }
    schedule.validate()?;
    let a_k = schedule.step_size(k);
    let c_k = schedule.perturbation(k);
    let n = relaxation.theta.len();
    let mut rng = rng_from(seed, &[tag::SPSA, k]);
    let mut grad = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut memo = Memo::new();
    for _ in 0..schedule.pairs {
        rademacher(&mut rng, &mut delta);
        let (plus, minus) = two_sided(&mut loss_fn, relaxation, &delta, c_k, k, &mut shifted, &mut memo)?;
        let scale = (plus - minus) / (2.0 * c_k);
        for (g, d) in grad.iter_mut().zip(&delta) {
            *g += scale * d;
        }
    }
    let inv_pairs = 1.0 / schedule.pairs as f64;
    for (t, g) in relaxation.theta.iter_mut().zip(&grad) {
        *t = (*t - a_k * g * inv_pairs).clamp(0.0, 1.0);
    }
    Ok(relaxation.round())
}
