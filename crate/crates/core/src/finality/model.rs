use crate::error::FinalityError;

/// Probabilities below this are reported as exactly zero.
pub const UNDERFLOW_CLAMP: f64 = 1e-15;

/// Beyond this many confirmations the depth search switches from a linear
/// scan to galloping + bisection.
const LINEAR_SCAN_LIMIT: u32 = 4096;
const MAX_CONFIRMATIONS: u32 = 1 << 26;

/// A reversal-probability model: chance that a transaction buried under `z`
/// blocks is later reversed by an adversary holding fraction `q` of the power.
///
/// Implementations must return values in [0,1], nonincreasing in `z` for
/// `q < 0.5` and nondecreasing in `q`.
pub trait FinalityModel: Send + Sync {
    fn id(&self) -> &'static str;
    fn reversal_probability(&self, q: f64, z: u32) -> Result<f64, FinalityError>;
}

/// Attacker catch-up race: attacker progress during the `z` honest blocks is
/// Poisson with mean `z q / (1-q)`, after which the attacker must close the
/// remaining gap in a biased random walk.
#[derive(Debug, Clone, Copy, Default)]
pub struct CatchUpRace;

impl FinalityModel for CatchUpRace {
    fn id(&self) -> &'static str {
        "catch-up-race"
    }

    fn reversal_probability(&self, q: f64, z: u32) -> Result<f64, FinalityError> {
        catch_up_probability(q, z)
    }
}

pub(crate) fn check_fraction(q: f64) -> Result<(), FinalityError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(FinalityError::InvalidFraction(q))
    }
}

/// Probability that an attacker with power fraction `q` ever overtakes a
/// transaction with `z` confirmations.
///
/// Evaluated as `P(K > z) + sum_{k<=z} P(K = k) r^(z-k)` with `K ~ Poisson(z r)`
/// and `r = q / (1-q)`, which keeps every term nonnegative so small results
/// do not cancel. Poisson weights are accumulated in log space.
pub fn catch_up_probability(q: f64, z: u32) -> Result<f64, FinalityError> {
    check_fraction(q)?;
    if z == 0 || q >= 0.5 {
        return Ok(1.0);
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let ratio = q / (1.0 - q);
    let ln_ratio = ratio.ln();
    let lambda = f64::from(z) * ratio;
    let ln_lambda = lambda.ln();

    let mut ln_weight = -lambda; // ln P(K = 0)
    let mut caught = 0.0;
    for k in 0..=z {
        if k > 0 {
            ln_weight += ln_lambda - f64::from(k).ln();
        }
        caught += (ln_weight + f64::from(z - k) * ln_ratio).exp();
    }

    // upper tail P(K > z); terms shrink geometrically because z > lambda
    let mut tail = 0.0;
    let mut k = z;
    loop {
        k += 1;
        ln_weight += ln_lambda - f64::from(k).ln();
        let term = ln_weight.exp();
        tail += term;
        if term <= tail * 1e-17 || term == 0.0 {
            break;
        }
    }

    let p = (caught + tail).clamp(0.0, 1.0);
    Ok(if p < UNDERFLOW_CLAMP { 0.0 } else { p })
}

/// Smallest `z >= 1` with `reversal_probability(q, z) <= epsilon`.
pub fn min_confirmations_with(model: &dyn FinalityModel, q: f64, epsilon: f64) -> Result<u32, FinalityError> {
    check_fraction(q)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(FinalityError::InvalidEpsilon(epsilon));
    }
    if q >= 0.5 {
        return Err(FinalityError::NoFiniteDepth { q });
    }
    let meets = |z: u32| -> Result<bool, FinalityError> { Ok(model.reversal_probability(q, z)? <= epsilon) };
    for z in 1..=LINEAR_SCAN_LIMIT {
        if meets(z)? {
            return Ok(z);
        }
    }
    let mut lo = LINEAR_SCAN_LIMIT; // fails
    let mut hi = LINEAR_SCAN_LIMIT * 2;
    while !meets(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).filter(|h| *h <= MAX_CONFIRMATIONS).ok_or(FinalityError::NoFiniteDepth { q })?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// [`min_confirmations_with`] under the default catch-up race.
pub fn min_confirmations(q: f64, epsilon: f64) -> Result<u32, FinalityError> {
    min_confirmations_with(&CatchUpRace, q, epsilon)
}

/// Advisory waiting time: `z` blocks at the estimated mean interval.
pub fn acceptance_period(z: u32, block_interval: f64) -> f64 {
    f64::from(z) * block_interval
}
