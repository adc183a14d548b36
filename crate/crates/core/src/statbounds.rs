//! Binomial and Hypergeometric distributions, the Ahrens parameter map, and
//! Clopper-Pearson confidence intervals with worst-case selection.
//!
//! Sampling without replacement follows `HG(N, n, K, ·)`. Ahrens showed that
//! after permuting `(n, K, N-n, N-K)` so that the smallest of the four becomes
//! the number of trials, a Binomial scaled by `√2` dominates the
//! Hypergeometric pointwise:
//!
//! ```text
//! HG(N, n, K, k) ≤ √2 · BI(ñ, K̃/N, k̃)
//! ```
//!
//! The outcome map `k ↦ k̃` is assembled from the three exact symmetries of
//! the Hypergeometric law, so `HG(N, n, K, k) = HG(N, ñ, K̃, k̃)` holds exactly.
//! Confidence bounds derived from the permuted Binomial are solved at `ε/√2`
//! to retain the nominal confidence, and [`worst_case_bounds`] keeps whichever
//! candidate is looser on each side.

use std::fmt;
use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{binom_cdf, binom_sf, ln_binom_density};

/// Number of bisection steps allowed when inverting a Binomial tail.
pub const CP_MAX_ITER: usize = 200;

/// Absolute tolerance the Clopper-Pearson roots are guaranteed to meet.
pub const CP_ABS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialParams<T> {
    pub trials: u64,
    pub success_prob: T,
}

impl<T: Real> BinomialParams<T> {
    pub fn new(trials: u64, success_prob: T) -> Result<Self> {
        if !(success_prob >= T::zero() && success_prob <= T::one()) {
            return Err(Error::domain(format!(
                "success probability {success_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            trials,
            success_prob,
        })
    }
}

/// Urn with `population` balls of which `successes` are white; `draws` are
/// taken without replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HypergeomParams {
    pub population: u64,
    pub draws: u64,
    pub successes: u64,
}

impl HypergeomParams {
    pub fn new(population: u64, draws: u64, successes: u64) -> Result<Self> {
        let p = Self {
            population,
            draws,
            successes,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws > self.population || self.successes > self.population {
            return Err(Error::domain(format!(
                "hypergeometric parameters violate n ≤ N, K ≤ N: {self:?}"
            )));
        }
        Ok(())
    }

    /// Outcomes with positive probability.
    pub fn support(&self) -> RangeInclusive<u64> {
        let lo = (self.draws + self.successes).saturating_sub(self.population);
        lo..=self.draws.min(self.successes)
    }

    pub fn mean(&self) -> f64 {
        if self.population == 0 {
            0.0
        } else {
            self.draws as f64 * self.successes as f64 / self.population as f64
        }
    }
}

/// Affine relabelling `k ↦ k̃` of Hypergeometric outcomes under the Ahrens map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeMap {
    /// `k̃ = k`
    Identity,
    /// `k̃ = K - k`
    SuccessComplement { successes: u64 },
    /// `k̃ = n - k`
    DrawComplement { draws: u64 },
    /// `k̃ = k - (n + K - N)`, the composition of both complements.
    Shift { by: u64 },
}

impl OutcomeMap {
    pub fn apply(&self, k: u64) -> Option<u64> {
        match *self {
            OutcomeMap::Identity => Some(k),
            OutcomeMap::SuccessComplement { successes } => successes.checked_sub(k),
            OutcomeMap::DrawComplement { draws } => draws.checked_sub(k),
            OutcomeMap::Shift { by } => k.checked_sub(by),
        }
    }

    /// Inverse map extended to real-valued outcomes (e.g. expected counts).
    pub fn invert<T: Real>(&self, kt: T) -> T {
        match *self {
            OutcomeMap::Identity => kt,
            OutcomeMap::SuccessComplement { successes } => T::count(successes) - kt,
            OutcomeMap::DrawComplement { draws } => T::count(draws) - kt,
            OutcomeMap::Shift { by } => kt + T::count(by),
        }
    }

    /// True when the map reverses the order of outcomes.
    pub fn is_reversing(&self) -> bool {
        matches!(
            self,
            OutcomeMap::SuccessComplement { .. } | OutcomeMap::DrawComplement { .. }
        )
    }
}

impl fmt::Display for OutcomeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeMap::Identity => write!(f, "k"),
            OutcomeMap::SuccessComplement { successes } => write!(f, "{successes}-k"),
            OutcomeMap::DrawComplement { draws } => write!(f, "{draws}-k"),
            OutcomeMap::Shift { by } => write!(f, "k-{by}"),
        }
    }
}

/// Permuted parameters `(ñ, K̃)` and the outcome map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AhrensImage {
    pub population: u64,
    pub permuted_draws: u64,
    pub permuted_successes: u64,
    pub outcome_map: OutcomeMap,
}

impl AhrensImage {
    /// Success probability `K̃/N` of the dominating Binomial.
    pub fn success_prob<T: Real>(&self) -> T {
        if self.population == 0 {
            T::zero()
        } else {
            T::count(self.permuted_successes) / T::count(self.population)
        }
    }

    pub fn as_hypergeom(&self) -> HypergeomParams {
        HypergeomParams {
            population: self.population,
            draws: self.permuted_draws,
            successes: self.permuted_successes,
        }
    }
}

/// Which distribution produced a confidence limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundSource {
    #[default]
    Binomial,
    PermutedBinomial,
}

impl fmt::Display for BoundSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundSource::Binomial => "binomial",
            BoundSource::PermutedBinomial => "permuted_binomial",
        })
    }
}

/// Two-sided bound on a success probability, each side failing with
/// probability at most `epsilon_each_side`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceBound<T> {
    pub lower: T,
    pub upper: T,
    pub epsilon_each_side: T,
    pub lower_source: BoundSource,
    pub upper_source: BoundSource,
}

impl<T: Real> ConfidenceBound<T> {
    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    pub fn contains(&self, p: T) -> bool {
        self.lower <= p && p <= self.upper
    }
}

pub fn binomial_pmf<T: Real>(params: &BinomialParams<T>, k: u64) -> Result<T> {
    if k > params.trials {
        return Err(Error::domain(format!(
            "k = {k} outside Binomial support 0..={}",
            params.trials
        )));
    }
    let p = params.success_prob;
    Ok(ln_binom_density(T::count(k), T::count(params.trials), p, T::one() - p).exp())
}

/// Natural log of the Hypergeometric pmf; `-inf` off the support.
pub fn ln_hypergeom_pmf<T: Real>(params: &HypergeomParams, k: u64) -> T {
    let &HypergeomParams {
        population: nn,
        draws: n,
        successes: kk,
    } = params;
    if !params.support().contains(&k) {
        return T::neg_infinity();
    }
    if nn == 0 {
        return T::zero();
    }
    // HG = BI(k; K, p) BI(n-k; N-K, p) / BI(n; N, p) for any p, take p = n/N
    let p = T::count(n) / T::count(nn);
    let q = T::count(nn - n) / T::count(nn);
    let c = |x: u64| T::count(x);
    ln_binom_density(c(k), c(kk), p, q) + ln_binom_density(c(n - k), c(nn - kk), p, q)
        - ln_binom_density(c(n), c(nn), p, q)
}

pub fn hypergeom_pmf<T: Real>(params: &HypergeomParams, k: u64) -> Result<T> {
    params.validate()?;
    Ok(ln_hypergeom_pmf::<T>(params, k).exp())
}

/// `P(X ≤ k)` by summation over the support; intended for small supports.
pub fn hypergeom_cdf<T: Real>(params: &HypergeomParams, k: u64) -> Result<T> {
    params.validate()?;
    let s = params.support();
    let hi = k.min(*s.end());
    if hi < *s.start() {
        return Ok(T::zero());
    }
    let total: T = (*s.start()..=hi)
        .map(|j| ln_hypergeom_pmf::<T>(params, j).exp())
        .sum();
    Ok(total.min(T::one()))
}

/// Permute `(n, K, N-n, N-K)` per the Ahrens selection rules.
pub fn ahrens_map(params: &HypergeomParams) -> AhrensImage {
    let &HypergeomParams {
        population: nn,
        draws: n,
        successes: kk,
    } = params;
    let n_c = nn - n;
    let k_c = nn - kk;
    let small = n.min(kk).min(n_c).min(k_c);

    let (draws, successes, outcome_map) = if small == n {
        if kk <= k_c {
            (n, kk, OutcomeMap::Identity)
        } else {
            (n, k_c, OutcomeMap::DrawComplement { draws: n })
        }
    } else if small == n_c {
        if kk <= k_c {
            (n_c, kk, OutcomeMap::SuccessComplement { successes: kk })
        } else {
            (n_c, k_c, OutcomeMap::Shift { by: n + kk - nn })
        }
    } else if small == kk {
        if n <= n_c {
            (kk, n, OutcomeMap::Identity)
        } else {
            (kk, n_c, OutcomeMap::SuccessComplement { successes: kk })
        }
    } else if n <= n_c {
        (k_c, n, OutcomeMap::DrawComplement { draws: n })
    } else {
        (k_c, n_c, OutcomeMap::Shift { by: n + kk - nn })
    };

    AhrensImage {
        population: nn,
        permuted_draws: draws,
        permuted_successes: successes,
        outcome_map,
    }
}

/// `√2 · BI(ñ, K̃/N, k̃)`, an upper bound on `HG(N, n, K, k)` at every `k`.
pub fn ahrens_upper_bound<T: Real>(params: &HypergeomParams, k: u64) -> T {
    let img = ahrens_map(params);
    match img.outcome_map.apply(k) {
        Some(kt) if kt <= img.permuted_draws => {
            let p = img.success_prob::<T>();
            let d = ln_binom_density(
                T::count(kt),
                T::count(img.permuted_draws),
                p,
                T::one() - p,
            );
            T::SQRT_2() * d.exp()
        }
        _ => T::zero(),
    }
}

/// Which tail of the Hypergeometric outcome a cumulative bound covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// `P(X ≤ k)`
    Lower,
    /// `P(X ≥ k)`
    Upper,
}

/// `√2` times the permuted-Binomial probability of the image of the event
/// `{X ≤ k}` (or `{X ≥ k}`), with the tail flipped when the outcome map
/// reverses order. Dominates the corresponding Hypergeometric tail.
pub fn ahrens_tail_bound<T: Real>(params: &HypergeomParams, k: u64, tail: Tail) -> T {
    let img = ahrens_map(params);
    let nt = img.permuted_draws;
    let p = img.success_prob::<T>();
    let flipped = match (tail, img.outcome_map.is_reversing()) {
        (Tail::Lower, false) | (Tail::Upper, true) => Tail::Lower,
        _ => Tail::Upper,
    };
    // image of k, possibly off the permuted support on either side
    let kt: i128 = match img.outcome_map {
        OutcomeMap::Identity => k as i128,
        OutcomeMap::SuccessComplement { successes } => successes as i128 - k as i128,
        OutcomeMap::DrawComplement { draws } => draws as i128 - k as i128,
        OutcomeMap::Shift { by } => k as i128 - by as i128,
    };
    let prob = match flipped {
        Tail::Lower if kt < 0 => T::zero(),
        Tail::Lower => binom_cdf(nt, kt.min(nt as i128) as u64, p),
        Tail::Upper if kt <= 0 => T::one(),
        Tail::Upper if kt > nt as i128 => T::zero(),
        Tail::Upper => binom_sf(nt, kt as u64, p),
    };
    T::SQRT_2() * prob
}

fn check_epsilon<T: Real>(eps: T) -> Result<()> {
    if !(eps > T::zero() && eps < T::half()) {
        return Err(Error::domain(format!("epsilon {eps} outside (0, 0.5)")));
    }
    Ok(())
}

/// Bisection on `[lo, hi]` for a function that is negative at `lo` and
/// non-negative at `hi`. Returns the final bracket.
fn bisect<T: Real>(mut lo: T, mut hi: T, f: impl Fn(T) -> T) -> (T, T) {
    let abs_tol = T::lit(CP_ABS_TOL).min(T::epsilon());
    for _ in 0..CP_MAX_ITER {
        let mid = lo + (hi - lo) * T::half();
        if mid <= lo || mid >= hi || hi - lo <= abs_tol.max(T::epsilon() * hi) {
            break;
        }
        if f(mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Clopper-Pearson interval for `k` successes in `n` Bernoulli trials.
///
/// `lower` solves `P(X ≥ k; p) = ε` and `upper` solves `P(X ≤ k; p) = ε`, so the
/// interval covers the true `p` with probability at least `1 - 2ε`.
pub fn cp_interval<T: Real>(n: u64, k: u64, epsilon: T) -> Result<ConfidenceBound<T>> {
    check_epsilon(epsilon)?;
    if k > n {
        return Err(Error::domain(format!("k = {k} exceeds n = {n}")));
    }
    let phat = if n == 0 {
        T::zero()
    } else {
        T::count(k) / T::count(n)
    };
    let lower = if k == 0 {
        T::zero()
    } else {
        // P(X ≥ k; p) increases in p; at p = k/n it is at least ½
        bisect(T::zero(), phat, |p| binom_sf(n, k, p) - epsilon).0
    };
    let upper = if k == n {
        T::one()
    } else {
        // P(X ≤ k; p) decreases in p
        bisect(phat, T::one(), |p| epsilon - binom_cdf(n, k, p)).1
    };
    Ok(ConfidenceBound {
        lower,
        upper,
        epsilon_each_side: epsilon,
        lower_source: BoundSource::Binomial,
        upper_source: BoundSource::Binomial,
    })
}

/// Bound on the per-trial rate derived from the Ahrens-permuted Binomial of
/// `HG(N, n, K, ·)` with `K = round(N·k/n)`, solved at `ε/√2`.
///
/// The interval for the mean of `k̃` is pulled back through the outcome map to
/// an interval for the mean of `k`, then divided by `n`.
pub fn permuted_candidate<T: Real>(
    population: u64,
    n: u64,
    k: u64,
    epsilon: T,
) -> Result<ConfidenceBound<T>> {
    check_epsilon(epsilon)?;
    if n > population || k > n {
        return Err(Error::domain(format!(
            "need k ≤ n ≤ N, got k={k}, n={n}, N={population}"
        )));
    }
    if n == 0 {
        return cp_interval(0, 0, epsilon);
    }
    let scaled = (population as f64 * k as f64 / n as f64).round() as u64;
    let successes = scaled.clamp(k, population - (n - k));
    let params = HypergeomParams::new(population, n, successes)?;
    let img = ahrens_map(&params);
    let nt = img.permuted_draws;
    let kt = img
        .outcome_map
        .apply(k)
        .unwrap_or(0)
        .min(nt);
    let inner = cp_interval(nt, kt, epsilon / T::SQRT_2())?;
    let a = img.outcome_map.invert(T::count(nt) * inner.lower);
    let b = img.outcome_map.invert(T::count(nt) * inner.upper);
    let nn = T::count(n);
    let clamp = |x: T| x.max(T::zero()).min(T::one());
    Ok(ConfidenceBound {
        lower: clamp(a.min(b) / nn),
        upper: clamp(a.max(b) / nn),
        epsilon_each_side: epsilon,
        lower_source: BoundSource::PermutedBinomial,
        upper_source: BoundSource::PermutedBinomial,
    })
}

/// Loosest of the plain-Binomial and permuted-Binomial bounds on each side.
///
/// Ties keep the Binomial tag.
pub fn worst_case_bounds<T: Real>(
    population: u64,
    n: u64,
    k: u64,
    epsilon: T,
) -> Result<ConfidenceBound<T>> {
    if n > population {
        return Err(Error::domain(format!(
            "sample size {n} exceeds population {population}"
        )));
    }
    let plain = cp_interval(n, k, epsilon)?;
    let permuted = permuted_candidate(population, n, k, epsilon)?;
    Ok(select_loosest(&plain, &permuted))
}

pub(crate) fn select_loosest<T: Real>(
    plain: &ConfidenceBound<T>,
    permuted: &ConfidenceBound<T>,
) -> ConfidenceBound<T> {
    let (lower, lower_source) = if permuted.lower < plain.lower {
        (permuted.lower, BoundSource::PermutedBinomial)
    } else {
        (plain.lower, BoundSource::Binomial)
    };
    let (upper, upper_source) = if permuted.upper > plain.upper {
        (permuted.upper, BoundSource::PermutedBinomial)
    } else {
        (plain.upper, BoundSource::Binomial)
    };
    ConfidenceBound {
        lower,
        upper,
        epsilon_each_side: plain.epsilon_each_side,
        lower_source,
        upper_source,
    }
}
