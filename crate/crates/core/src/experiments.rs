//! Parameter optimization, distance and block-size sweeps, and the
//! Binomial/Hypergeometric comparison table.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{expected_counts, ChannelConfig, ProtocolConfig};
use crate::error::{AbortReason, Error, Result};
use crate::keyrate::{evaluate, KeyRateReport, CSV_HEADER};
use crate::scalar::{round_count, show, Real};
use crate::statbounds::{
    ahrens_tail_bound, ahrens_upper_bound, binomial_pmf, cp_interval, hypergeom_pmf,
    permuted_candidate, worst_case_bounds, BinomialParams, BoundSource, ConfidenceBound,
    HypergeomParams, Tail,
};

/// Names of the free variables, in order.
pub const FREE_VARIABLES: [&str; 5] = ["p_x", "p_u", "p_v", "u", "v"];

/// Smallest vacuum-class probability left by the simplex repair.
const MIN_P_W: f64 = 1e-3;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationSpec<T> {
    /// Box for `[p_x, p_u, p_v, u, v]`.
    pub bounds: [(T, T); 5],
    /// Additional deterministic start points tried after the input point.
    pub extra_starts: Vec<[T; 5]>,
    pub starts: usize,
    pub seed: u64,
    pub max_evals: usize,
    /// Coordinate sweeps per start.
    pub sweeps: usize,
    /// Golden-section evaluations per line search.
    pub line_evals: usize,
}

impl<T: Real> Default for OptimizationSpec<T> {
    fn default() -> Self {
        let l = |a: f64, b: f64| (T::lit(a), T::lit(b));
        Self {
            bounds: [l(0.005, 0.5), l(0.2, 0.99), l(0.005, 0.5), l(0.1, 0.9), l(0.01, 0.2)],
            extra_starts: vec![
                [0.036, 0.935, 0.028, 0.415, 0.05].map(T::lit),
                [0.461, 0.256, 0.392, 0.485, 0.097].map(T::lit),
            ],
            starts: 8,
            seed: 0x5eed,
            max_evals: 4000,
            sweeps: 8,
            line_evals: 10,
        }
    }
}

impl<T: Real> OptimizationSpec<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, &(lo, hi)) in FREE_VARIABLES.iter().zip(&self.bounds) {
            if !(lo < hi && lo > T::zero()) {
                return Err(Error::domain(format!("bad box for {name}: [{lo}, {hi}]")));
            }
        }
        if self.starts == 0 || self.max_evals == 0 {
            return Err(Error::domain("optimizer needs at least one start and one evaluation"));
        }
        Ok(())
    }

    fn clamp(&self, x: [T; 5]) -> [T; 5] {
        let mut out = x;
        for (v, &(lo, hi)) in out.iter_mut().zip(&self.bounds) {
            *v = v.max(lo).min(hi);
        }
        out
    }
}

/// The free variables of a protocol configuration.
pub fn free_variables<T: Real>(pr: &ProtocolConfig<T>) -> [T; 5] {
    [
        pr.p_x(),
        pr.class_probs[0],
        pr.class_probs[1],
        pr.intensities[0],
        pr.intensities[1],
    ]
}

/// Write the free variables into a copy of `base`, shrinking `p_v` so the
/// vacuum class keeps a positive probability.
pub fn apply_free_variables<T: Real>(base: &ProtocolConfig<T>, x: [T; 5]) -> ProtocolConfig<T> {
    let [p_x, p_u, p_v, u, v] = x;
    let p_v = p_v.min(T::one() - p_u - T::lit(MIN_P_W));
    let mut pr = *base;
    pr.p_z = T::one() - p_x;
    pr.class_probs = [p_u, p_v, T::one() - p_u - p_v];
    pr.intensities = [u, v, base.intensities[2]];
    pr
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult<T> {
    pub protocol: ProtocolConfig<T>,
    pub report: KeyRateReport<T>,
    pub start_report: Option<KeyRateReport<T>>,
    pub evaluations: usize,
}

struct Objective<'a, T> {
    ch: &'a ChannelConfig<T>,
    base: &'a ProtocolConfig<T>,
    evals: usize,
    limit: usize,
}

impl<T: Real> Objective<'_, T> {
    fn exhausted(&self) -> bool {
        self.evals >= self.limit
    }

    /// Unclamped key rate. Aborted points score below every completed one,
    /// ordered by how far they miss the acceptance tests; invalid points
    /// score `-inf`.
    fn score(&mut self, x: [T; 5]) -> (T, Option<KeyRateReport<T>>) {
        self.evals += 1;
        let pr = apply_free_variables(self.base, x);
        let report = expected_counts(self.ch, &pr).and_then(|c| evaluate(&c, &pr));
        match report {
            Ok(r) => match &r.abort {
                None => (r.terms.raw() / pr.acquisition_time_s, Some(r)),
                Some(reason) => (-T::lit(ABORT_PENALTY * (1.0 + abort_excess(reason))), Some(r)),
            },
            Err(_) => (T::neg_infinity(), None),
        }
    }
}

/// Coordinate-wise golden-section search from several starts; the first
/// start is the input point.
pub fn optimize_parameters<T: Real>(
    ch: &ChannelConfig<T>,
    pr: &ProtocolConfig<T>,
    spec: &OptimizationSpec<T>,
) -> Result<OptimizationResult<T>> {
    ch.validate()?;
    spec.validate()?;
    let mut obj = Objective {
        ch,
        base: pr,
        evals: 0,
        limit: spec.max_evals,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut starts = vec![free_variables(pr)];
    starts.extend(spec.extra_starts.iter().map(|&x| spec.clamp(x)));
    while starts.len() < spec.starts.max(1 + spec.extra_starts.len()) {
        starts.push(spec.bounds.map(|(lo, hi)| {
            lo + (hi - lo) * T::lit(rng.random::<f64>())
        }));
    }
    starts.truncate(spec.starts.max(1));

    let (first_score, start_report) = obj.score(starts[0]);
    let mut best = (first_score, starts[0], start_report.clone());
    for (s, &x0) in starts.iter().enumerate() {
        if obj.exhausted() {
            break;
        }
        let (mut fx, mut rep) = if s == 0 {
            (first_score, start_report.clone())
        } else {
            obj.score(x0)
        };
        let mut x = x0;
        let mut radius = spec.bounds.map(|(lo, hi)| (hi - lo) * T::lit(0.25));
        for _ in 0..spec.sweeps {
            for i in 0..5 {
                if obj.exhausted() {
                    break;
                }
                let (lo, hi) = spec.bounds[i];
                let a = (x[i] - radius[i]).max(lo);
                let b = (x[i] + radius[i]).min(hi);
                if let Some((xi, f, r)) = golden_section(&mut obj, x, i, a, b, spec.line_evals) {
                    if f > fx {
                        x[i] = xi;
                        fx = f;
                        rep = r;
                    }
                }
            }
            radius = radius.map(|r| r * T::half());
        }
        if fx > best.0 || (best.2.is_none() && rep.is_some()) {
            best = (fx, x, rep);
        }
    }

    let protocol = apply_free_variables(pr, best.1);
    let report = match best.2 {
        Some(r) => r,
        None => {
            let counts = expected_counts(ch, &protocol)?;
            evaluate(&counts, &protocol)?
        }
    };
    Ok(OptimizationResult {
        protocol,
        report,
        start_report,
        evaluations: obj.evals,
    })
}

const ABORT_PENALTY: f64 = 1e15;

/// How badly an aborted point misses, at least 1.
fn abort_excess(reason: &AbortReason) -> f64 {
    let excess = match *reason {
        AbortReason::PhaseErrorAboveThreshold { qber1, q_tol } => qber1 / q_tol.max(1e-12),
        AbortReason::Dominance {
            n_z1_lower,
            n_x1_upper,
            ratio,
        } => 1.0 + ratio * n_x1_upper as f64 / (n_z1_lower as f64).max(1.0),
        _ => 1e3,
    };
    if excess.is_finite() {
        excess.clamp(1.0, 1e3)
    } else {
        1e3
    }
}

/// Maximize along coordinate `i` on `[a, b]`.
fn golden_section<T: Real>(
    obj: &mut Objective<'_, T>,
    x: [T; 5],
    i: usize,
    mut a: T,
    mut b: T,
    evals: usize,
) -> Option<(T, T, Option<KeyRateReport<T>>)> {
    let r = T::lit(INV_PHI);
    let at = |t: T| {
        let mut y = x;
        y[i] = t;
        y
    };
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    if obj.evals + 2 > obj.limit {
        return None;
    }
    let mut fc = obj.score(at(c));
    let mut fd = obj.score(at(d));
    for _ in 2..evals {
        if obj.exhausted() {
            break;
        }
        if fc.0 >= fd.0 {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = obj.score(at(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = obj.score(at(d));
        }
    }
    let (t, (f, rep)) = if fc.0 >= fd.0 { (c, fc) } else { (d, fd) };
    Some((t, f, rep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    DistanceKm,
    AcquisitionTimeS,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<T> {
    pub axis_value: T,
    pub distance_km: T,
    pub protocol: ProtocolConfig<T>,
    pub report: KeyRateReport<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult<T> {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint<T>>,
}

impl<T: Real> SweepResult<T> {
    pub fn rates(&self) -> Vec<T> {
        self.points.iter().map(|p| p.report.rate_bps).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = CSV_HEADER.to_vec();
        header.extend([
            "acquisition_time_s",
            "qber1_x_upper",
            "p_x",
            "p_u",
            "p_v",
            "p_w",
            "u",
            "v",
            "w",
        ]);
        w.write_record(&header)?;
        for p in &self.points {
            let pr = &p.protocol;
            let mut rec = p.report.csv_record(p.distance_km);
            rec.extend(
                [
                    pr.acquisition_time_s,
                    p.report.qber1_upper,
                    pr.p_x(),
                    pr.class_probs[0],
                    pr.class_probs[1],
                    pr.class_probs[2],
                    pr.intensities[0],
                    pr.intensities[1],
                    pr.intensities[2],
                ]
                .iter()
                .map(|&v| show(v)),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text rate table.
    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let label = match self.axis {
            SweepAxis::DistanceKm => "Distance (km)",
            SweepAxis::AcquisitionTimeS => "Time (s)",
        };
        writeln!(out, "{label:>14}  {:>12}  {:>14}  {:>8}", "Block size", "Key rate (bps)", "q_tol_X")?;
        for p in &self.points {
            let r = &p.report;
            let rate = if r.is_aborted() {
                format!("0 ({})", r.abort_tag())
            } else {
                format!("{:.0}", r.rate_bps.to_f64().unwrap_or(f64::NAN))
            };
            writeln!(
                out,
                "{:>14}  {:>12}  {:>14}  {:>8.4}",
                p.axis_value.to_string(),
                r.block_size,
                rate,
                r.q_tol.to_f64().unwrap_or(f64::NAN)
            )?;
        }
        Ok(())
    }
}

pub const DEFAULT_DISTANCES_KM: [f64; 5] = [30.0, 50.0, 70.0, 90.0, 110.0];

/// `count` log-spaced acquisition times from 16 ms to 1200 s.
pub fn default_times(count: usize) -> Vec<f64> {
    let (a, b) = (0.016_f64.ln(), 1200.0_f64.ln());
    if count < 2 {
        return vec![1200.0];
    }
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn check_axis<T: Real>(values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::domain("sweep axis is empty"));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("sweep axis must be strictly increasing"));
    }
    Ok(())
}

pub fn distance_sweep<T: Real>(
    ch: &ChannelConfig<T>,
    pr: &ProtocolConfig<T>,
    distances_km: &[T],
    spec: &OptimizationSpec<T>,
) -> Result<SweepResult<T>> {
    check_axis(distances_km)?;
    let points = distances_km
        .par_iter()
        .map(|&d| {
            let ch = ch.with_length(d);
            let opt = optimize_parameters(&ch, pr, spec)?;
            Ok(SweepPoint {
                axis_value: d,
                distance_km: d,
                protocol: opt.protocol,
                report: opt.report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::DistanceKm,
        points,
    })
}

pub fn blocksize_sweep<T: Real>(
    ch: &ChannelConfig<T>,
    pr: &ProtocolConfig<T>,
    times_s: &[T],
    spec: &OptimizationSpec<T>,
) -> Result<SweepResult<T>> {
    check_axis(times_s)?;
    let points = times_s
        .par_iter()
        .map(|&t| {
            let mut p = *pr;
            p.acquisition_time_s = t;
            let opt = optimize_parameters(ch, &p, spec)?;
            Ok(SweepPoint {
                axis_value: t,
                distance_km: ch.fiber_length_km,
                protocol: opt.protocol,
                report: opt.report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis: SweepAxis::AcquisitionTimeS,
        points,
    })
}

/// One row of the Binomial/Hypergeometric comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsRow<T> {
    pub k: u64,
    /// `BI(n, K/N, k)`
    pub binomial: T,
    /// `HG(N, n, K, k)`
    pub hypergeom: T,
    /// `√2 · BI(ñ, K̃/N, k̃)`
    pub permuted: T,
    pub binomial_cdf: T,
    pub hypergeom_cdf: T,
    pub permuted_cdf: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsTable<T> {
    pub params: HypergeomParams,
    pub epsilon: T,
    /// Observed count used for the confidence bounds, `round(nK/N)`.
    pub observed: u64,
    pub rows: Vec<BoundsRow<T>>,
    pub binomial_interval: ConfidenceBound<T>,
    pub permuted_interval: ConfidenceBound<T>,
    pub selected: ConfidenceBound<T>,
}

impl<T: Real> BoundsTable<T> {
    pub fn selected_lower_source(&self) -> BoundSource {
        self.selected.lower_source
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "k",
            "bi_pmf",
            "hg_pmf",
            "permuted_bi_bound",
            "bi_cdf",
            "hg_cdf",
            "permuted_bi_cdf_bound",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                show(r.binomial),
                show(r.hypergeom),
                show(r.permuted),
                show(r.binomial_cdf),
                show(r.hypergeom_cdf),
                show(r.permuted_cdf),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let HypergeomParams {
            population,
            draws,
            successes,
        } = self.params;
        writeln!(out, "N = {population}, n = {draws}, K = {successes}, observed k = {}", self.observed)?;
        writeln!(out, "epsilon = {}", show(self.epsilon))?;
        let n = T::count(draws);
        for (name, b) in [
            ("binomial", &self.binomial_interval),
            ("permuted_binomial", &self.permuted_interval),
        ] {
            writeln!(out, "{name}: k in [{}, {}]", n * b.lower, n * b.upper)?;
        }
        writeln!(
            out,
            "selected lower bound: {} ({})",
            n * self.selected.lower,
            self.selected.lower_source
        )?;
        writeln!(
            out,
            "selected upper bound: {} ({})",
            n * self.selected.upper,
            self.selected.upper_source
        )
    }
}

/// Pointwise and cumulative comparison of `BI(n, K/N)`, `HG(N, n, K)` and its
/// Ahrens bound for `k = 0..=min(n, K)`, plus the confidence bounds each route
/// gives at the mean.
pub fn bounds_demo<T: Real>(population: u64, draws: u64, successes: u64, epsilon: T) -> Result<BoundsTable<T>> {
    let params = HypergeomParams::new(population, draws, successes)?;
    let bi = BinomialParams::new(draws, T::count(successes) / T::count(population))?;
    let mut rows = Vec::new();
    let (mut bi_cdf, mut hg_cdf) = (T::zero(), T::zero());
    for k in 0..=draws.min(successes) {
        let binomial = binomial_pmf(&bi, k)?;
        let hypergeom = hypergeom_pmf(&params, k)?;
        bi_cdf += binomial;
        hg_cdf += hypergeom;
        rows.push(BoundsRow {
            k,
            binomial,
            hypergeom,
            permuted: if params.support().contains(&k) {
                ahrens_upper_bound(&params, k)
            } else {
                T::zero()
            },
            binomial_cdf: bi_cdf.min(T::one()),
            hypergeom_cdf: hg_cdf.min(T::one()),
            permuted_cdf: ahrens_tail_bound(&params, k, Tail::Lower),
        });
    }
    let observed = round_count(T::count(draws) * T::count(successes) / T::count(population));
    Ok(BoundsTable {
        params,
        epsilon,
        observed,
        rows,
        binomial_interval: cp_interval(draws, observed, epsilon)?,
        permuted_interval: permuted_candidate(population, draws, observed, epsilon)?,
        selected: worst_case_bounds(population, draws, observed, epsilon)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyrate::evaluate;

    fn quick_spec() -> OptimizationSpec<f64> {
        OptimizationSpec {
            max_evals: 400,
            starts: 3,
            sweeps: 3,
            ..Default::default()
        }
    }

    #[test]
    fn single_evaluation_returns_start() {
        let ch = ChannelConfig::<f64>::default();
        let pr = ProtocolConfig::<f64>::default();
        let spec = OptimizationSpec {
            max_evals: 1,
            ..Default::default()
        };
        let out = optimize_parameters(&ch, &pr, &spec).unwrap();
        assert_eq!(out.protocol, apply_free_variables(&pr, free_variables(&pr)));
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn optimizer_never_worse_and_deterministic() {
        let ch = ChannelConfig::<f64>::default();
        let pr = ProtocolConfig::<f64>::default();
        let start = evaluate(&expected_counts(&ch, &pr).unwrap(), &pr).unwrap();
        let a = optimize_parameters(&ch, &pr, &quick_spec()).unwrap();
        let b = optimize_parameters(&ch, &pr, &quick_spec()).unwrap();
        assert_eq!(a, b);
        assert!(a.report.rate_bps >= start.rate_bps);
        assert!(a.report.recomposes());
        assert!(a.protocol.validate().is_ok());
    }

    #[test]
    fn simplex_repair_keeps_vacuum_class() {
        let pr = ProtocolConfig::<f64>::default();
        let out = apply_free_variables(&pr, [0.1, 0.9, 0.3, 0.5, 0.1]);
        assert!(out.class_probs[2] > 0.0);
        assert!((out.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_rejects_bad_axis() {
        let ch = ChannelConfig::<f64>::default();
        let pr = ProtocolConfig::<f64>::default();
        assert!(distance_sweep(&ch, &pr, &[], &quick_spec()).is_err());
        assert!(distance_sweep(&ch, &pr, &[50.0, 30.0], &quick_spec()).is_err());
    }

    #[test]
    fn default_time_grid() {
        let t = default_times(12);
        assert!((t[0] - 0.016).abs() < 1e-12 && (t[11] - 1200.0).abs() < 1e-9);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn shorter_fiber_gives_more_key() {
        let pr = ProtocolConfig::<f64>::default();
        let spec = quick_spec();
        let sweep = distance_sweep(&ChannelConfig::default(), &pr, &[0.0, 30.0], &spec).unwrap();
        let r = sweep.rates();
        assert!(r[0] > r[1], "{r:?}");
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("distance_km,block_size,n_sec,rate_bps,"));
    }

    /// Exhaustive oracle: HG by counting subsets of an explicit urn.
    fn brute_hypergeom(nn: usize, n: usize, kk: usize) -> Vec<f64> {
        let mut counts = vec![0u64; n + 1];
        let mut total = 0u64;
        for mask in 0u32..(1 << nn) {
            if mask.count_ones() as usize == n {
                let white = (mask & ((1 << kk) - 1)).count_ones() as usize;
                counts[white] += 1;
                total += 1;
            }
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    #[test]
    fn tiny_table_matches_enumeration() {
        let t = bounds_demo::<f64>(20, 10, 6, 1e-3).unwrap();
        let hg = brute_hypergeom(20, 10, 6);
        let mut c = [0.0_f64; 11];
        for i in 0..=10 {
            c[i] = (1..=i).fold(1.0, |acc, j| acc * (10 - j + 1) as f64 / j as f64);
        }
        assert_eq!(t.rows.len(), 7);
        for r in &t.rows {
            let k = r.k as usize;
            assert!((r.hypergeom - hg[k]).abs() < 1e-12, "k={k}");
            let bi = c[k] * 0.3_f64.powi(k as i32) * 0.7_f64.powi(10 - k as i32);
            assert!((r.binomial - bi).abs() < 1e-12);
            assert!(r.permuted >= r.hypergeom);
            assert!(r.permuted_cdf >= r.hypergeom_cdf - 1e-12);
        }
    }

    #[test]
    fn exhaustive_draw_is_a_spike() {
        let t = bounds_demo::<f64>(50, 50, 7, 1e-3).unwrap();
        for r in &t.rows {
            let want = if r.k == 7 { 1.0 } else { 0.0 };
            assert!((r.hypergeom - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fig_one_parameters() {
        let t = bounds_demo::<f64>(120_000, 103_820, 600, 1e-10 / 46.0).unwrap();
        assert!(t.rows.iter().all(|r| r.permuted >= r.hypergeom));
        assert_eq!(t.selected_lower_source(), BoundSource::Binomial);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 602);
    }
}
