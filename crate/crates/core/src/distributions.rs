//! Seedable random primitives used by every conditional update.
//!
//! All samplers draw from an [`RngStream`], a ChaCha8 generator keyed by a
//! 64-bit seed and a stream id. ChaCha output is platform independent, so
//! equal `(seed, stream_id)` pairs replay the same draws everywhere.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{BarcodeError, Result};

/// Per-chain random number stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives an independent stream for a sub-task, e.g. one replicate of a
    /// simulation study. The derived seed mixes the parent seed and `index`.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream::new(
            splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(1))),
            index,
        )
    }

    /// Uniform draw on the open interval (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gamma draw under the shape-rate convention (mean `shape / rate`).
pub fn gamma_draw(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(BarcodeError::InvalidParameter(format!(
            "gamma requires positive finite shape and rate, got ({shape}, {rate})"
        )));
    }
    Ok(gamma(shape, rate, rng))
}

/// Unchecked gamma draw for hot loops. Shapes below one use the boosting
/// identity `Ga(a) = Ga(a + 1) * U^(1/a)`, evaluated in log space so that
/// very small shapes underflow to the smallest positive double rather than 0.
#[inline]
pub(crate) fn gamma(shape: f64, rate: f64, rng: &mut RngStream) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0);
    if shape < 1.0 {
        let g = marsaglia_tsang(shape + 1.0, rng);
        let log_u = rng.open01().ln();
        let x = (g.ln() + log_u / shape).exp() / rate;
        return x.max(f64::MIN_POSITIVE);
    }
    (marsaglia_tsang(shape, rng) / rate).max(f64::MIN_POSITIVE)
}

#[inline]
fn marsaglia_tsang(shape: f64, rng: &mut RngStream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.std_normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.open01();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

pub fn beta_draw(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    let x = gamma_draw(a, 1.0, rng)?;
    let y = gamma_draw(b, 1.0, rng)?;
    Ok(x / (x + y))
}

pub fn dirichlet_draw(alpha: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(BarcodeError::InvalidParameter(
            "dirichlet needs at least one component".into(),
        ));
    }
    let mut g = alpha
        .iter()
        .map(|&a| gamma_draw(a, 1.0, rng))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= total);
    Ok(g)
}

pub fn poisson_draw(mean: f64, rng: &mut RngStream) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = rand_distr::Poisson::new(mean).expect("positive finite poisson mean");
    let x: f64 = d.sample(rng);
    x as u64
}

/// Multinomial draw by sequential binomial conditioning.
pub fn multinomial_draw(total: u64, weights: &[f64], rng: &mut RngStream) -> Result<Vec<u64>> {
    let mut out = vec![0u64; weights.len()];
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(BarcodeError::InvalidParameter(
            "multinomial weights must be nonnegative and finite".into(),
        ));
    }
    if total == 0 {
        return Ok(out);
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(BarcodeError::InvalidParameter(
            "multinomial weights sum to zero with positive total".into(),
        ));
    }
    multinomial_fill(total, weights, sum, &mut out, rng);
    Ok(out)
}

const SMALL_MULTINOMIAL: u64 = 8;

/// Fills `out` with a Mult(total, weights / sum) draw. The last component
/// with positive weight absorbs the remainder, so zero-weight components
/// never receive counts and a single-support draw consumes no randomness.
pub(crate) fn multinomial_fill<T>(
    total: u64,
    weights: &[f64],
    sum: f64,
    out: &mut [T],
    rng: &mut RngStream,
) where
    T: Copy + TryFrom<u64> + Default,
    <T as TryFrom<u64>>::Error: std::fmt::Debug,
{
    out.iter_mut().for_each(|x| *x = T::default());
    let last = match weights.iter().rposition(|&w| w > 0.0) {
        Some(k) => k,
        None => return,
    };
    if total <= SMALL_MULTINOMIAL && weights[..last].iter().any(|&w| w > 0.0) {
        // few units: one categorical draw per unit
        let mut tally = [0u64; 64];
        if weights.len() <= tally.len() {
            for _ in 0..total {
                let target = rng.open01() * sum;
                let mut acc = 0.0;
                let mut pick = last;
                for (k, &w) in weights[..last].iter().enumerate() {
                    acc += w;
                    if target < acc {
                        pick = k;
                        break;
                    }
                }
                tally[pick] += 1;
            }
            for (o, &t) in out.iter_mut().zip(tally.iter()) {
                *o = T::try_from(t).expect("count fits target type");
            }
            return;
        }
    }
    let mut remaining = total;
    let mut mass = sum;
    for k in 0..last {
        if remaining == 0 {
            break;
        }
        let w = weights[k];
        if w <= 0.0 {
            continue;
        }
        let prob = (w / mass).min(1.0);
        let draw = if prob >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, prob)
                .expect("valid binomial probability")
                .sample(rng)
        };
        out[k] = T::try_from(draw).expect("count fits target type");
        remaining -= draw;
        mass -= w;
    }
    out[last] = T::try_from(remaining).expect("count fits target type");
}

/// Half-line for a unit-variance truncated normal draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Support `(-inf, 0]`.
    BelowZero,
    /// Support `(0, inf)`.
    AboveZero,
}

/// Draw from N(mean, 1) conditioned on the given half-line.
pub fn truncated_normal_draw(mean: f64, side: Side, rng: &mut RngStream) -> f64 {
    match side {
        Side::AboveZero => mean + std_normal_above(-mean, rng),
        Side::BelowZero => {
            let x = -(-mean + std_normal_above(mean, rng));
            x.min(0.0)
        }
    }
}

/// Standard normal truncated to `(a, inf)`. Uses plain rejection when the
/// bound sits left of zero and the exponential proposal of Robert (1995)
/// otherwise, which keeps acceptance bounded away from zero in the tail.
fn std_normal_above(a: f64, rng: &mut RngStream) -> f64 {
    if a <= 0.0 {
        loop {
            let z = rng.std_normal();
            if z > a {
                return z;
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - rng.open01().ln() / lambda;
        let d = z - lambda;
        if rng.open01().ln() <= -0.5 * d * d {
            return z;
        }
    }
}

/// Sample an index with probability proportional to `exp(log_weights)`.
/// Entries equal to `-inf` are never selected.
pub fn log_categorical_draw(log_weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(BarcodeError::Inadmissible(
            "every candidate configuration has zero probability".into(),
        ));
    }
    let mut total = 0.0;
    for &w in log_weights {
        if w > f64::NEG_INFINITY {
            total += (w - max).exp();
        }
    }
    let target = rng.open01() * total;
    let mut acc = 0.0;
    let mut chosen = None;
    for (k, &w) in log_weights.iter().enumerate() {
        if w == f64::NEG_INFINITY || w.is_nan() {
            continue;
        }
        acc += (w - max).exp();
        chosen = Some(k);
        if target < acc {
            break;
        }
    }
    Ok(chosen.expect("at least one finite weight"))
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)` for the standard normal CDF, accurate far into both tails.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 0.0 {
        (-0.5 * erfc(x / std::f64::consts::SQRT_2)).ln_1p()
    } else if x > -35.0 {
        (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Mills ratio expansion.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
    }
}

/// Log density of Ga(shape, rate) at `x`.
pub fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub fn ln_factorial(k: u64) -> f64 {
    ln_gamma(k as f64 + 1.0)
}
