//! Parametric fiber and threshold-detector model.
//!
//! Stands in for a real link: given physical parameters it produces the
//! protocol tallies `N_μbb`, `C_μbb`, `E_μbb` either as rounded expectations or
//! as a seeded Monte Carlo draw.
//!
//! Per sent pulse of mean photon number `μ`, with `η` the end-to-end
//! transmittance, `d` the dark-count probability per detector and gate, `a` the
//! afterpulse probability and `D` detectors:
//!
//! ```text
//! D_μ = [1 - (1-d)^D e^{-ημ}] (1 + a)
//! e_μ = e_det (1 - e^{-ημ}) + ½ e^{-ημ} (1 - (1-d)^D) + ½ a [1 - (1-d)^D e^{-ημ}]
//! ```
//!
//! Dark-count and afterpulse clicks carry a uniformly random bit.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::scalar::{round_count, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [
        IntensityClass::Signal,
        IntensityClass::Decoy,
        IntensityClass::Vacuum,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for IntensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntensityClass::Signal => "u",
            IntensityClass::Decoy => "v",
            IntensityClass::Vacuum => "w",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
        })
    }
}

/// Fiber and detector parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig<T> {
    pub fiber_length_km: T,
    pub attenuation_db_per_km: T,
    pub detector_efficiency: T,
    /// Per gate, per detector.
    pub dark_count_prob: T,
    pub afterpulse_prob: T,
    pub receiver_loss_db: T,
    /// Optical misalignment error `e_det`.
    pub misalignment_error: T,
    pub num_detectors: u32,
}

impl<T: Real> Default for ChannelConfig<T> {
    fn default() -> Self {
        Self {
            fiber_length_km: T::lit(50.0),
            attenuation_db_per_km: T::lit(0.2),
            detector_efficiency: T::lit(0.225),
            dark_count_prob: T::lit(2.1e-5),
            afterpulse_prob: T::lit(0.05),
            receiver_loss_db: T::lit(3.0),
            misalignment_error: T::lit(0.015),
            num_detectors: 2,
        }
    }
}

fn check_prob<T: Real>(name: &str, x: T) -> Result<()> {
    if x >= T::zero() && x <= T::one() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {x} outside [0, 1]")))
    }
}

fn check_nonneg<T: Real>(name: &str, x: T) -> Result<()> {
    if x >= T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} = {x} must be finite and ≥ 0")))
    }
}

impl<T: Real> ChannelConfig<T> {
    pub fn with_length(mut self, km: T) -> Self {
        self.fiber_length_km = km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_nonneg("fiber_length", self.fiber_length_km)?;
        check_nonneg("attenuation", self.attenuation_db_per_km)?;
        check_nonneg("receiver_loss", self.receiver_loss_db)?;
        check_prob("detector_efficiency", self.detector_efficiency)?;
        check_prob("dark_count_prob", self.dark_count_prob)?;
        check_prob("afterpulse_prob", self.afterpulse_prob)?;
        check_prob("misalignment_error", self.misalignment_error)?;
        if self.num_detectors == 0 {
            return Err(Error::domain("num_detectors must be ≥ 1"));
        }
        Ok(())
    }

    /// End-to-end transmittance including detector efficiency.
    pub fn transmittance(&self) -> T {
        let loss_db = self.attenuation_db_per_km * self.fiber_length_km + self.receiver_loss_db;
        self.detector_efficiency * T::lit(10.0).powf(-loss_db / T::lit(10.0))
    }

    /// Probability that no detector fires from dark counts alone.
    fn dark_silent(&self) -> T {
        (T::one() - self.dark_count_prob).powi(self.num_detectors as i32)
    }

    /// Non-vacuum detection probability per pulse of mean photon number `mu`.
    pub fn detection_prob(&self, mu: T) -> T {
        let raw = T::one() - self.dark_silent() * (-self.transmittance() * mu).exp();
        (raw * (T::one() + self.afterpulse_prob)).min(T::one())
    }

    /// Bit-error probability per pulse of mean photon number `mu`.
    pub fn error_prob(&self, mu: T) -> T {
        let half = T::half();
        let vac = (-self.transmittance() * mu).exp();
        let silent = self.dark_silent();
        let e = self.misalignment_error * (T::one() - vac)
            + half * vac * (T::one() - silent)
            + half * self.afterpulse_prob * (T::one() - silent * vac);
        e.min(self.detection_prob(mu))
    }

    /// Detection probability conditioned on exactly `k` photons sent.
    pub fn photon_yield(&self, k: u32) -> T {
        let pass = (T::one() - self.transmittance()).powi(k as i32);
        ((T::one() - self.dark_silent() * pass) * (T::one() + self.afterpulse_prob)).min(T::one())
    }

    /// Error probability (per pulse) conditioned on exactly `k` photons sent.
    pub fn photon_error_yield(&self, k: u32) -> T {
        let half = T::half();
        let pass = (T::one() - self.transmittance()).powi(k as i32);
        let silent = self.dark_silent();
        self.misalignment_error * (T::one() - pass)
            + half * pass * (T::one() - silent)
            + half * self.afterpulse_prob * (T::one() - silent * pass)
    }

    /// Bit-error rate of `k`-photon detections.
    pub fn photon_error_rate(&self, k: u32) -> T {
        let y = self.photon_yield(k);
        if y == T::zero() {
            T::zero()
        } else {
            self.photon_error_yield(k) / y
        }
    }
}

/// Protocol settings: basis and class probabilities, intensities, security
/// parameters and post-processing model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig<T> {
    pub clock_rate_hz: T,
    pub acquisition_time_s: T,
    pub p_z: T,
    /// `p_u, p_v, p_w`
    pub class_probs: [T; 3],
    /// `u, v, w`
    pub intensities: [T; 3],
    pub gamma: T,
    pub eps_sec: T,
    pub eps_ver: T,
    pub q_tol_cap: T,
    pub photon_cutoff: usize,
    pub ec_efficiency: T,
    pub z1_dominance_ratio: T,
}

impl<T: Real> Default for ProtocolConfig<T> {
    fn default() -> Self {
        Self {
            clock_rate_hz: T::lit(1e9),
            acquisition_time_s: T::lit(1200.0),
            p_z: T::lit(1.0 - 0.036),
            class_probs: [T::lit(0.935), T::lit(0.028), T::lit(0.037)],
            intensities: [T::lit(0.415), T::lit(0.05), T::lit(1e-4)],
            gamma: T::one(),
            eps_sec: T::lit(1e-10),
            eps_ver: T::lit(1e-15),
            q_tol_cap: T::half(),
            photon_cutoff: 9,
            ec_efficiency: T::lit(1.16),
            z1_dominance_ratio: T::lit(10.0),
        }
    }
}

/// Number of ε-weighted estimation constraints the secrecy budget is split into.
pub const EPS_SHARES: f64 = 46.0;

impl<T: Real> ProtocolConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let one = T::one();
        if !(self.p_z > T::half() && self.p_z < one) {
            return Err(Error::domain(format!("p_Z = {} outside (0.5, 1)", self.p_z)));
        }
        for (c, &p) in IntensityClass::ALL.iter().zip(&self.class_probs) {
            if !(p > T::zero() && p < one) {
                return Err(Error::domain(format!("p_{c} = {p} outside (0, 1)")));
            }
        }
        let total: T = self.class_probs.iter().copied().sum();
        if (total - one).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(8.0)) {
            return Err(Error::domain(format!("class probabilities sum to {total}, not 1")));
        }
        let [u, v, w] = self.intensities;
        if !(u > v && v > w && w >= T::zero() && u.is_finite()) {
            return Err(Error::domain(format!(
                "intensities must satisfy u > v > w ≥ 0, got {u}, {v}, {w}"
            )));
        }
        if !(self.gamma > T::zero() && self.gamma <= one) {
            return Err(Error::domain(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        for (name, x) in [("eps_sec", self.eps_sec), ("eps_ver", self.eps_ver)] {
            if !(x > T::zero() && x < one) {
                return Err(Error::domain(format!("{name} = {x} outside (0, 1)")));
            }
        }
        if !(self.q_tol_cap > T::zero() && self.q_tol_cap <= T::half()) {
            return Err(Error::domain("q_tol_cap must lie in (0, 0.5]"));
        }
        if !(self.clock_rate_hz > T::zero() && self.acquisition_time_s > T::zero()) {
            return Err(Error::domain("clock rate and acquisition time must be positive"));
        }
        if self.photon_cutoff < 1 {
            return Err(Error::domain("photon cutoff must be ≥ 1"));
        }
        if !(self.ec_efficiency >= one) {
            return Err(Error::domain("EC efficiency must be ≥ 1"));
        }
        if !(self.z1_dominance_ratio > T::zero()) {
            return Err(Error::domain("z1 dominance ratio must be positive"));
        }
        Ok(())
    }

    pub fn p_x(&self) -> T {
        T::one() - self.p_z
    }

    pub fn basis_prob(&self, b: Basis) -> T {
        match b {
            Basis::Z => self.p_z,
            Basis::X => self.p_x(),
        }
    }

    pub fn class_prob(&self, c: IntensityClass) -> T {
        self.class_probs[c.index()]
    }

    pub fn intensity(&self, c: IntensityClass) -> T {
        self.intensities[c.index()]
    }

    pub fn signal(&self) -> T {
        self.intensities[0]
    }

    pub fn total_pulses(&self) -> u64 {
        round_count(self.clock_rate_hz * self.acquisition_time_s)
    }

    /// Failure probability assigned to each estimation constraint.
    pub fn eps_per_constraint(&self) -> T {
        self.eps_sec / T::lit(EPS_SHARES)
    }
}

/// Tallies for one (class, matched basis) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellCounts {
    pub pulses: u64,
    pub detections: u64,
    pub errors: u64,
}

/// Sifted protocol statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ObservedCounts {
    pub total_pulses: u64,
    /// Indexed `[class][basis]`.
    pub cells: [[CellCounts; 2]; 3],
    /// Pulses whose bases did not match, per class; discarded by sifting.
    pub mismatched_pulses: [u64; 3],
}

impl ObservedCounts {
    pub fn cell(&self, c: IntensityClass, b: Basis) -> &CellCounts {
        &self.cells[c.index()][b.index()]
    }

    pub fn cell_mut(&mut self, c: IntensityClass, b: Basis) -> &mut CellCounts {
        &mut self.cells[c.index()][b.index()]
    }

    /// `C_uZZ`, the raw key length.
    pub fn raw_key_length(&self) -> u64 {
        self.cell(IntensityClass::Signal, Basis::Z).detections
    }

    /// Sum of every cell's pulse count, matched or not.
    pub fn accounted_pulses(&self) -> u64 {
        let matched: u64 = self.cells.iter().flatten().map(|c| c.pulses).sum();
        matched + self.mismatched_pulses.iter().sum::<u64>()
    }

    pub fn validate(&self) -> Result<()> {
        for c in IntensityClass::ALL {
            for b in Basis::ALL {
                let cell = self.cell(c, b);
                if !(cell.errors <= cell.detections && cell.detections <= cell.pulses) {
                    return Err(Error::domain(format!(
                        "cell {c}{b}{b} violates E ≤ C ≤ N: {cell:?}"
                    )));
                }
            }
        }
        if self.accounted_pulses() > self.total_pulses {
            return Err(Error::domain("cell pulses exceed the total pulse count"));
        }
        Ok(())
    }
}

/// Rounded expected tallies.
pub fn expected_counts<T: Real>(ch: &ChannelConfig<T>, pr: &ProtocolConfig<T>) -> Result<ObservedCounts> {
    ch.validate()?;
    pr.validate()?;
    let total = pr.total_pulses();
    let n = T::count(total);
    let mut out = ObservedCounts {
        total_pulses: total,
        ..Default::default()
    };
    for c in IntensityClass::ALL {
        let mu = pr.intensity(c);
        let det = ch.detection_prob(mu);
        let err = ch.error_prob(mu);
        for b in Basis::ALL {
            let pb = pr.basis_prob(b);
            let pulses_f = n * pr.class_prob(c) * pb * pb;
            let detections = round_count(pulses_f * det);
            let errors = round_count(pulses_f * err).min(detections);
            *out.cell_mut(c, b) = CellCounts {
                pulses: round_count(pulses_f),
                detections,
                errors,
            };
        }
        out.mismatched_pulses[c.index()] =
            round_count(n * pr.class_prob(c) * T::two() * pr.p_z * pr.p_x());
    }
    // independent rounding of the cells can overshoot the total by a few pulses
    let mut excess = out.accounted_pulses().saturating_sub(total);
    for m in out.mismatched_pulses.iter_mut() {
        let d = excess.min(*m);
        *m -= d;
        excess -= d;
    }
    Ok(out)
}

fn binomial_draw(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("probability checked to lie in (0, 1)")
        .sample(rng)
}

/// One Monte Carlo realization of the protocol tallies, deterministic in `seed`.
///
/// Pulses are split over the twelve (class, Alice basis, Bob basis) cells by a
/// multinomial draw; detections and errors in matched cells are Binomial.
pub fn sample_counts<T: Real>(
    ch: &ChannelConfig<T>,
    pr: &ProtocolConfig<T>,
    seed: u64,
) -> Result<ObservedCounts> {
    ch.validate()?;
    pr.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = pr.total_pulses();
    let f = |x: T| x.to_f64().unwrap_or(0.0);

    // (class, alice, bob) in a fixed order so the stream is reproducible
    let mut cells = Vec::with_capacity(12);
    for c in IntensityClass::ALL {
        for a in Basis::ALL {
            for b in Basis::ALL {
                let p = f(pr.class_prob(c)) * f(pr.basis_prob(a)) * f(pr.basis_prob(b));
                cells.push((c, a, b, p));
            }
        }
    }

    let mut out = ObservedCounts {
        total_pulses: total,
        ..Default::default()
    };
    let mut remaining = total;
    let mut mass = 1.0_f64;
    let last = cells.len() - 1;
    for (i, &(c, a, b, p)) in cells.iter().enumerate() {
        let drawn = if i == last {
            remaining
        } else {
            let x = binomial_draw(&mut rng, remaining, (p / mass).clamp(0.0, 1.0));
            mass -= p;
            x
        };
        remaining -= drawn;
        if a == b {
            let mu = pr.intensity(c);
            let det = f(ch.detection_prob(mu));
            let err = f(ch.error_prob(mu));
            let detections = binomial_draw(&mut rng, drawn, det);
            let err_given_det = if det > 0.0 { (err / det).min(1.0) } else { 0.0 };
            let errors = binomial_draw(&mut rng, detections, err_given_det);
            *out.cell_mut(c, a) = CellCounts {
                pulses: drawn,
                detections,
                errors,
            };
        } else {
            out.mismatched_pulses[c.index()] += drawn;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> ChannelConfig<f64> {
        ChannelConfig {
            dark_count_prob: 0.0,
            afterpulse_prob: 0.0,
            misalignment_error: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn transmittance_50km() {
        let ch = ChannelConfig::<f64>::default();
        let want = 0.225 * 10f64.powf(-1.3);
        assert!((ch.transmittance() - want).abs() < 1e-15);
        assert!((ch.transmittance() - 1.128e-2).abs() < 1e-5);
    }

    #[test]
    fn no_light_no_clicks() {
        let ch = quiet();
        assert_eq!(ch.detection_prob(0.0), 0.0);
        assert_eq!(ch.error_prob(0.0), 0.0);
        let pr = ProtocolConfig {
            intensities: [0.5, 0.1, 0.0],
            ..Default::default()
        };
        let counts = expected_counts(&ch, &pr).unwrap();
        let w = counts.cell(IntensityClass::Vacuum, Basis::Z);
        assert_eq!((w.detections, w.errors), (0, 0));
        let sampled = sample_counts(&ch, &pr, 3).unwrap();
        for b in Basis::ALL {
            let w = sampled.cell(IntensityClass::Vacuum, b);
            assert_eq!((w.detections, w.errors), (0, 0));
        }
    }

    #[test]
    fn saturating_detection() {
        let ch = ChannelConfig {
            detector_efficiency: 1.0,
            attenuation_db_per_km: 0.0,
            receiver_loss_db: 0.0,
            ..quiet()
        };
        assert!((ch.detection_prob(50.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn error_free_channel_has_no_errors() {
        let ch = quiet();
        for mu in [0.0, 1e-4, 0.05, 0.4, 3.0] {
            assert_eq!(ch.error_prob(mu), 0.0);
        }
    }

    #[test]
    fn error_prob_is_bounded() {
        let ch = ChannelConfig::<f64>::default();
        let ap = ch.afterpulse_prob;
        for mu in [0.0, 1e-4, 0.05, 0.415, 2.0] {
            let d = ch.detection_prob(mu);
            assert!(ch.error_prob(mu) <= d / (1.0 + ap) + 0.5 * ap * d / (1.0 + ap) + 1e-18);
        }
    }

    #[test]
    fn photon_decomposition_reproduces_class_rates() {
        let ch = ChannelConfig::<f64>::default();
        for mu in [1e-4_f64, 0.05, 0.415] {
            let mut term = (-mu).exp();
            let (mut y, mut e) = (0.0, 0.0);
            for k in 0..60u32 {
                y += term * ch.photon_yield(k);
                e += term * ch.photon_error_yield(k);
                term *= mu / (k + 1) as f64;
            }
            assert!((y - ch.detection_prob(mu)).abs() < 1e-15);
            assert!((e - ch.error_prob(mu)).abs() < 1e-15);
        }
        // vacuum clicks are coin flips
        assert!((ch.photon_error_rate(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_length_and_intensity() {
        let pr = ProtocolConfig::<f64>::default();
        let mut prev = u64::MAX;
        for km in [0.0, 10.0, 30.0, 50.0, 90.0, 150.0] {
            let ch = ChannelConfig::default().with_length(km);
            let c = expected_counts(&ch, &pr).unwrap().raw_key_length();
            assert!(c <= prev);
            prev = c;
        }
        let ch = ChannelConfig::<f64>::default();
        let mut prev = 0.0;
        for mu in [0.0, 0.01, 0.1, 0.5, 1.0] {
            let d = ch.detection_prob(mu);
            assert!(d >= prev);
            prev = d;
        }
    }

    #[test]
    fn expected_counts_never_overaccount() {
        // half-integer cell sizes all round up
        let mut pr = ProtocolConfig::<f64> {
            clock_rate_hz: 1.0,
            acquisition_time_s: 50.0,
            p_z: 0.9,
            class_probs: [0.5, 0.3, 0.2],
            ..Default::default()
        };
        let ch = ChannelConfig::<f64>::default();
        for t in 1..400 {
            pr.acquisition_time_s = t as f64 * 0.37;
            let c = expected_counts(&ch, &pr).unwrap();
            assert!(c.accounted_pulses() <= c.total_pulses, "t = {t}");
            c.validate().unwrap();
        }
    }

    #[test]
    fn sample_is_deterministic_and_complete() {
        let ch = ChannelConfig::<f64>::default();
        let pr = ProtocolConfig::<f64>::default();
        let a = sample_counts(&ch, &pr, 42).unwrap();
        let b = sample_counts(&ch, &pr, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.accounted_pulses(), a.total_pulses);
        a.validate().unwrap();
        assert_ne!(a, sample_counts(&ch, &pr, 43).unwrap());
    }

    #[test]
    fn sample_mean_matches_expectation() {
        let ch = ChannelConfig::<f64>::default();
        let pr = ProtocolConfig {
            acquisition_time_s: 1e-3,
            ..Default::default()
        };
        let expect = expected_counts(&ch, &pr).unwrap().raw_key_length() as f64;
        let runs = 1000;
        let xs: Vec<f64> = (0..runs)
            .map(|s| sample_counts(&ch, &pr, s).unwrap().raw_key_length() as f64)
            .collect();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * se + 0.5, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn config_validation() {
        let mut pr = ProtocolConfig::<f64>::default();
        pr.p_z = 0.4;
        assert!(pr.validate().is_err());
        let mut pr = ProtocolConfig::<f64>::default();
        pr.intensities = [0.1, 0.2, 0.0];
        assert!(pr.validate().is_err());
        let mut pr = ProtocolConfig::<f64>::default();
        pr.class_probs = [0.5, 0.2, 0.2];
        assert!(pr.validate().is_err());
        let ch = ChannelConfig {
            dark_count_prob: 1.5,
            ..ChannelConfig::<f64>::default()
        };
        assert!(ch.validate().is_err());
        assert!(expected_counts(&ch, &ProtocolConfig::default()).is_err());
    }
}
