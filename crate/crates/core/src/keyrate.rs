//! Secure key length, finite-size overhead and the failure-probability ledger.

use std::fmt;
use std::io::Write;

use crate::channel::{Basis, IntensityClass, ObservedCounts, ProtocolConfig, EPS_SHARES};
use crate::decoy::{estimate, EstimationResult};
use crate::error::{AbortReason, Error, Result};
use crate::scalar::{ceil_count, floor_count, show, Real};

/// A truncated binary entropy together with its argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyValue<T> {
    pub argument: T,
    pub value: T,
}

/// `h(x)` for `x ≤ ½`, and 1 above.
pub fn binary_entropy_truncated<T: Real>(x: T) -> Result<T> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::domain(format!("entropy argument {x} outside [0, 1]")));
    }
    if x > T::half() {
        return Ok(T::one());
    }
    if x == T::zero() {
        return Ok(T::zero());
    }
    Ok(-x * x.log2() - (T::one() - x) * (-x).ln_1p() / T::LN_2())
}

pub fn entropy<T: Real>(x: T) -> Result<EntropyValue<T>> {
    Ok(EntropyValue {
        argument: x,
        value: binary_entropy_truncated(x)?,
    })
}

/// `log₂(2/ε_ver) + 6·log₂(46/ε_sec)`.
pub fn delta_overhead<T: Real>(eps_ver: T, eps_sec: T) -> T {
    (T::two() / eps_ver).log2() + T::lit(6.0) * (T::lit(EPS_SHARES) / eps_sec).log2()
}

/// `⌊n̄_Z1 · q_tol / γ⌋`.
pub fn phase_error_count_bound<T: Real>(n_z1_upper: u64, q_tol: T, gamma: T) -> Result<u64> {
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::domain(format!("gamma = {gamma} outside (0, 1]")));
    }
    Ok(floor_count(T::count(n_z1_upper) * q_tol / gamma))
}

/// Error-correction leakage `⌈f_EC · C · h(qber)⌉`.
pub fn ec_leakage<T: Real>(raw_key: u64, qber: T, f_ec: T) -> u64 {
    let q = qber.max(T::zero()).min(T::one());
    let h = binary_entropy_truncated(q).unwrap_or(T::one());
    ceil_count(f_ec * T::count(raw_key) * h)
}

/// The five contributions to the key length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyTerms<T> {
    pub n_z0_lower: u64,
    /// `γ · n̲_Z1`
    pub gamma_n_z1_lower: T,
    /// `n̄_Z1 · h(q_tol)`
    pub max_entropy: T,
    pub n_ec: u64,
    pub delta: T,
}

impl<T: Real> KeyTerms<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_z0_lower: u64,
        n_z1_lower: u64,
        n_z1_upper: u64,
        q_tol: T,
        gamma: T,
        n_ec: u64,
        delta: T,
    ) -> Result<Self> {
        Ok(Self {
            n_z0_lower,
            gamma_n_z1_lower: gamma * T::count(n_z1_lower),
            max_entropy: T::count(n_z1_upper) * binary_entropy_truncated(q_tol)?,
            n_ec,
            delta,
        })
    }

    /// Unclamped, unrounded key length.
    pub fn raw(&self) -> T {
        T::count(self.n_z0_lower) + self.gamma_n_z1_lower
            - self.max_entropy
            - T::count(self.n_ec)
            - self.delta
    }

    pub fn n_sec(&self) -> u64 {
        floor_count(self.raw())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsLedgerEntry {
    pub quantity: &'static str,
    pub failure_probability: f64,
}

/// Failure probability charged to each estimated quantity.
pub fn eps_ledger(eps_sec: f64, eps_ver: f64) -> Vec<EpsLedgerEntry> {
    let e = eps_sec / EPS_SHARES;
    let rows: [(&'static str, f64); 6] = [
        ("y_Z(0,1) from Y_Z(u,v,w)", 6.0 * e),
        ("y_X(0,1) from Y_X(u,v,w)", 6.0 * e),
        ("n_b(k) photon-count bounds", 6.0 * e),
        ("q_bit_X(1) upper bound incl. B_X(u)", 19.0 * e),
        ("smooth-entropy proof steps", 9.0 * e),
        ("E_uZZ after verification", eps_ver),
    ];
    rows.into_iter()
        .map(|(quantity, failure_probability)| EpsLedgerEntry {
            quantity,
            failure_probability,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityClaim {
    pub eps_ver: f64,
    pub eps_sec: f64,
}

impl fmt::Display for SecurityClaim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:e}-correct, {:e}-secret ({:e}-secure)",
            self.eps_ver,
            self.eps_sec,
            self.eps_ver + self.eps_sec
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRateReport<T> {
    pub n_sec: u64,
    pub rate_bps: T,
    pub terms: KeyTerms<T>,
    /// `C_uZZ`, the sifted block size.
    pub block_size: u64,
    pub qber1_upper: T,
    pub q_tol: T,
    pub w_ph_bound: u64,
    pub abort: Option<AbortReason>,
    pub eps_ledger: Vec<EpsLedgerEntry>,
    pub security: SecurityClaim,
}

/// CSV header matching [`KeyRateReport::csv_record`].
pub const CSV_HEADER: [&str; 11] = [
    "distance_km",
    "block_size",
    "n_sec",
    "rate_bps",
    "n_z0_lower",
    "gamma_n_z1_lower",
    "n_z1_upper_h_q_tol",
    "n_ec",
    "delta",
    "q_tol_x",
    "abort_reason",
];

impl<T: Real> KeyRateReport<T> {
    fn empty(counts: &ObservedCounts, pr: &ProtocolConfig<T>) -> Self {
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        Self {
            n_sec: 0,
            rate_bps: T::zero(),
            terms: KeyTerms {
                n_z0_lower: 0,
                gamma_n_z1_lower: T::zero(),
                max_entropy: T::zero(),
                n_ec: 0,
                delta: delta_overhead(pr.eps_ver, pr.eps_sec),
            },
            block_size: counts.raw_key_length(),
            qber1_upper: T::zero(),
            q_tol: T::zero(),
            w_ph_bound: 0,
            abort: None,
            eps_ledger: eps_ledger(f(pr.eps_sec), f(pr.eps_ver)),
            security: SecurityClaim {
                eps_ver: f(pr.eps_ver),
                eps_sec: f(pr.eps_sec),
            },
        }
    }

    pub fn aborted(reason: AbortReason, counts: &ObservedCounts, pr: &ProtocolConfig<T>) -> Self {
        Self {
            abort: Some(reason),
            ..Self::empty(counts, pr)
        }
    }

    pub fn is_aborted(&self) -> bool {
        self.abort.is_some()
    }

    /// `n_sec` equals the clamped floor of the term sum.
    pub fn recomposes(&self) -> bool {
        self.abort.is_some() && self.n_sec == 0 || self.n_sec == self.terms.n_sec()
    }

    pub fn eps_total(&self) -> f64 {
        self.eps_ledger.iter().map(|e| e.failure_probability).sum()
    }

    pub fn abort_tag(&self) -> &'static str {
        self.abort.as_ref().map_or("", AbortReason::tag)
    }

    pub fn csv_record(&self, distance_km: T) -> Vec<String> {
        let t = &self.terms;
        vec![
            show(distance_km),
            self.block_size.to_string(),
            self.n_sec.to_string(),
            show(self.rate_bps),
            t.n_z0_lower.to_string(),
            show(t.gamma_n_z1_lower),
            show(t.max_entropy),
            t.n_ec.to_string(),
            show(t.delta),
            show(self.q_tol),
            self.abort_tag().to_string(),
        ]
    }

    /// Flat `key = value` record.
    pub fn write_key_value<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let t = &self.terms;
        writeln!(out, "n_sec = {}", self.n_sec)?;
        writeln!(out, "rate_bps = {}", show(self.rate_bps))?;
        writeln!(out, "block_size = {}", self.block_size)?;
        writeln!(out, "n_z0_lower = {}", t.n_z0_lower)?;
        writeln!(out, "gamma_n_z1_lower = {}", show(t.gamma_n_z1_lower))?;
        writeln!(out, "n_z1_upper_h_q_tol = {}", show(t.max_entropy))?;
        writeln!(out, "n_ec = {}", t.n_ec)?;
        writeln!(out, "delta = {}", show(t.delta))?;
        writeln!(out, "raw_key_length_bits = {}", show(t.raw()))?;
        writeln!(out, "qber1_x_upper = {}", show(self.qber1_upper))?;
        writeln!(out, "q_tol_x = {}", show(self.q_tol))?;
        writeln!(out, "w_ph_z_bound = {}", self.w_ph_bound)?;
        match &self.abort {
            Some(r) => {
                writeln!(out, "abort = {}", r.tag())?;
                writeln!(out, "abort_detail = {r}")?;
            }
            None => writeln!(out, "abort = none")?,
        }
        for e in &self.eps_ledger {
            writeln!(out, "eps[{}] = {:e}", e.quantity, e.failure_probability)?;
        }
        writeln!(out, "eps_total = {:e}", self.eps_total())?;
        writeln!(out, "security = {}", self.security)
    }
}

/// Key length from a completed estimation, with the dominance and
/// phase-error abort checks.
pub fn secure_key_length<T: Real>(
    est: &EstimationResult<T>,
    counts: &ObservedCounts,
    pr: &ProtocolConfig<T>,
) -> Result<KeyRateReport<T>> {
    pr.validate()?;
    let p = &est.photons;
    let mut report = KeyRateReport::empty(counts, pr);
    report.qber1_upper = p.qber1_upper;
    report.q_tol = p.q_tol;

    let n_z1_lower = p.n_lower(Basis::Z, 1);
    let n_x1_upper = p.n_upper(Basis::X, 1);
    if T::count(n_z1_lower) < pr.z1_dominance_ratio * T::count(n_x1_upper) {
        report.abort = Some(AbortReason::Dominance {
            n_z1_lower,
            n_x1_upper,
            ratio: pr.z1_dominance_ratio.to_f64().unwrap_or(f64::NAN),
        });
        return Ok(report);
    }
    if p.qber1_upper > p.q_tol {
        report.abort = Some(AbortReason::PhaseErrorAboveThreshold {
            qber1: p.qber1_upper.to_f64().unwrap_or(f64::NAN),
            q_tol: p.q_tol.to_f64().unwrap_or(f64::NAN),
        });
        return Ok(report);
    }

    let uzz = counts.cell(IntensityClass::Signal, Basis::Z);
    let qber_z = if uzz.detections > 0 {
        T::count(uzz.errors) / T::count(uzz.detections)
    } else {
        T::zero()
    };
    let n_z1_upper = p.n_upper(Basis::Z, 1);
    report.terms = KeyTerms::new(
        p.n_lower(Basis::Z, 0),
        n_z1_lower,
        n_z1_upper,
        p.q_tol,
        pr.gamma,
        ec_leakage(uzz.detections, qber_z, pr.ec_efficiency),
        report.terms.delta,
    )?;
    report.w_ph_bound = phase_error_count_bound(n_z1_upper, p.q_tol, pr.gamma)?;
    report.n_sec = report.terms.n_sec();
    report.rate_bps = T::count(report.n_sec) / pr.acquisition_time_s;
    Ok(report)
}

/// Estimation followed by [`secure_key_length`]; protocol aborts become
/// zero-key reports, invalid inputs stay errors.
pub fn evaluate<T: Real>(counts: &ObservedCounts, pr: &ProtocolConfig<T>) -> Result<KeyRateReport<T>> {
    match estimate(counts, pr) {
        Ok(est) => secure_key_length(&est, counts, pr),
        Err(Error::Abort(reason)) => Ok(KeyRateReport::aborted(reason, counts, pr)),
        Err(e) => Err(e),
    }
}
