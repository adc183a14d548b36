//! Decoy-state parameter estimation.
//!
//! Per-class yields are bounded with the worst case of the Binomial and
//! permuted-Binomial intervals, the 0- and 1-photon yields are bracketed by
//! linear programs over the Poisson photon-number decomposition, and the
//! single-photon bit-error rate in the X basis is bounded in closed form.

use std::io::Write;

use crate::channel::{Basis, IntensityClass, ObservedCounts, ProtocolConfig};
use crate::error::{AbortReason, Error, Result};
use crate::lp::{LinearProgram, LpError, Relation, Sense};
use crate::scalar::{ceil_count, floor_count, show, Real};
use crate::statbounds::{worst_case_bounds, ConfidenceBound};

/// Per-class, per-basis yield bounds plus the X-basis bit-error-rate bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YieldBounds<T> {
    /// `C_μbb / N_μbb`, indexed `[class][basis]`.
    pub means: [[T; 2]; 3],
    pub bounds: [[ConfidenceBound<T>; 2]; 3],
    /// `E_uXX / N_uXX`.
    pub x_error_mean: T,
    pub x_error: ConfidenceBound<T>,
    pub eps_each: T,
}

impl<T: Real> YieldBounds<T> {
    pub fn mean(&self, c: IntensityClass, b: Basis) -> T {
        self.means[c.index()][b.index()]
    }

    pub fn lower(&self, c: IntensityClass, b: Basis) -> T {
        self.bounds[c.index()][b.index()].lower
    }

    pub fn upper(&self, c: IntensityClass, b: Basis) -> T {
        self.bounds[c.index()][b.index()].upper
    }

    /// `B̄_X^(u)`.
    pub fn x_error_upper(&self) -> T {
        self.x_error.upper
    }

    fn basis_row(&self, b: Basis, upper: bool) -> [T; 3] {
        IntensityClass::ALL.map(|c| {
            if upper {
                self.upper(c, b)
            } else {
                self.lower(c, b)
            }
        })
    }
}

/// Bounds on the 0- and 1-photon yields of one basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonYields<T> {
    /// Indexed by photon number.
    pub lower: [T; 2],
    pub upper: [T; 2],
}

/// Everything downstream of the linear programs, indexed `[basis][k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonYieldBounds<T> {
    pub yield_lower: [[T; 2]; 2],
    pub yield_upper: [[T; 2]; 2],
    pub count_lower: [[u64; 2]; 2],
    pub count_upper: [[u64; 2]; 2],
    pub qber1_upper: T,
    pub q_tol: T,
}

impl<T: Real> PhotonYieldBounds<T> {
    pub fn n_lower(&self, b: Basis, k: usize) -> u64 {
        self.count_lower[b.index()][k]
    }

    pub fn n_upper(&self, b: Basis, k: usize) -> u64 {
        self.count_upper[b.index()][k]
    }

    pub fn y_lower(&self, b: Basis, k: usize) -> T {
        self.yield_lower[b.index()][k]
    }

    pub fn y_upper(&self, b: Basis, k: usize) -> T {
        self.yield_upper[b.index()][k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationResult<T> {
    pub yields: YieldBounds<T>,
    pub photons: PhotonYieldBounds<T>,
}

impl<T: Real> EstimationResult<T> {
    /// Dump every estimated quantity as `quantity,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "value"])?;
        let mut row = |name: String, v: String| w.write_record([name, v]);
        for c in IntensityClass::ALL {
            for b in Basis::ALL {
                let bound = &self.yields.bounds[c.index()][b.index()];
                row(format!("Y_{b}_{c}"), show(self.yields.mean(c, b)))?;
                row(format!("Y_{b}_{c}_lower"), show(bound.lower))?;
                row(format!("Y_{b}_{c}_upper"), show(bound.upper))?;
                row(format!("Y_{b}_{c}_lower_source"), bound.lower_source.to_string())?;
                row(format!("Y_{b}_{c}_upper_source"), bound.upper_source.to_string())?;
            }
        }
        row("B_X_u".into(), show(self.yields.x_error_mean))?;
        row("B_X_u_upper".into(), show(self.yields.x_error.upper))?;
        let p = &self.photons;
        for b in Basis::ALL {
            for k in 0..2 {
                row(format!("y_{b}_{k}_lower"), show(p.y_lower(b, k)))?;
                row(format!("y_{b}_{k}_upper"), show(p.y_upper(b, k)))?;
                row(format!("n_{b}_{k}_lower"), p.n_lower(b, k).to_string())?;
                row(format!("n_{b}_{k}_upper"), p.n_upper(b, k).to_string())?;
            }
        }
        row("qber1_X_upper".into(), show(p.qber1_upper))?;
        row("q_tol_X".into(), show(p.q_tol))?;
        w.flush()?;
        Ok(())
    }
}

/// Bound every per-class yield and the X-basis bit-error rate.
pub fn bound_yields<T: Real>(counts: &ObservedCounts, eps_each: T) -> Result<YieldBounds<T>> {
    counts.validate()?;
    if !(eps_each > T::zero() && eps_each < T::half()) {
        return Err(Error::domain(format!("eps_each = {eps_each} outside (0, 0.5)")));
    }
    let population = counts.total_pulses;
    let mut means = [[T::zero(); 2]; 3];
    let mut bounds = [[None; 2]; 3];
    for c in IntensityClass::ALL {
        for b in Basis::ALL {
            let cell = counts.cell(c, b);
            if cell.pulses == 0 {
                return Err(AbortReason::EmptySample { class: c, basis: b }.into());
            }
            means[c.index()][b.index()] = T::count(cell.detections) / T::count(cell.pulses);
            bounds[c.index()][b.index()] =
                Some(worst_case_bounds(population, cell.pulses, cell.detections, eps_each)?);
        }
    }
    let ux = counts.cell(IntensityClass::Signal, Basis::X);
    let x_error = worst_case_bounds(population, ux.pulses, ux.errors, eps_each)?;
    Ok(YieldBounds {
        means,
        bounds: bounds.map(|row| row.map(|b| b.expect("every cell bounded above"))),
        x_error_mean: T::count(ux.errors) / T::count(ux.pulses),
        x_error,
        eps_each,
    })
}

/// `e^(−μ) μ^k / k!` for `k = 0..=cutoff`.
pub fn poisson_weights<T: Real>(mu: T, cutoff: usize) -> Vec<T> {
    let mut w = Vec::with_capacity(cutoff + 1);
    let mut term = (-mu).exp();
    for k in 0..=cutoff {
        if k > 0 {
            term = term * mu / T::count(k as u64);
        }
        w.push(term);
    }
    w
}

/// Bracket `y^(0)` and `y^(1)` given per-class yield intervals.
///
/// Photon numbers above `cutoff` are dropped from the model; their weight
/// `τ_μ` is subtracted from each lower constraint. Weights below `√ε` of a
/// row's largest weight are dropped the same way, which only enlarges the
/// feasible set and keeps the tableau well conditioned.
pub fn solve_photon_lp<T: Real>(
    intensities: [T; 3],
    lower: [T; 3],
    upper: [T; 3],
    cutoff: usize,
) -> std::result::Result<PhotonYields<T>, LpError> {
    let vars = cutoff + 1;
    let mut lp = LinearProgram::new(vars);
    for (i, &mu) in intensities.iter().enumerate() {
        let mut w = poisson_weights(mu, cutoff);
        let covered: T = w.iter().copied().sum();
        let mut tail = (T::one() - covered).max(T::zero());
        let floor = w.iter().fold(T::zero(), |a, &b| a.max(b)) * T::epsilon().sqrt();
        for x in w.iter_mut().filter(|x| **x < floor) {
            tail += *x;
            *x = T::zero();
        }
        let lo = lower[i] - tail;
        if lo > T::zero() {
            lp.add_constraint(w.clone(), Relation::Ge, lo);
        }
        lp.add_constraint(w, Relation::Le, upper[i]);
    }
    for k in 0..vars {
        lp.add_upper_bound(k, T::one());
    }
    let mut out = PhotonYields {
        lower: [T::zero(); 2],
        upper: [T::zero(); 2],
    };
    for k in 0..2 {
        let mut obj = vec![T::zero(); vars];
        obj[k] = T::one();
        lp.set_objective(Sense::Minimize, obj.clone());
        out.lower[k] = lp.solve()?.objective.max(T::zero());
        lp.set_objective(Sense::Maximize, obj);
        out.upper[k] = lp.solve()?.objective.min(T::one());
    }
    Ok(out)
}

pub fn estimate_photon_yields<T: Real>(
    yb: &YieldBounds<T>,
    pr: &ProtocolConfig<T>,
    basis: Basis,
) -> Result<PhotonYields<T>> {
    solve_photon_lp(
        pr.intensities,
        yb.basis_row(basis, false),
        yb.basis_row(basis, true),
        pr.photon_cutoff,
    )
    .map_err(|e| {
        AbortReason::Infeasible {
            basis,
            detail: e.to_string(),
        }
        .into()
    })
}

/// `(n̲, n̄)` for photon number `k` among the `pulses` signal pulses of a basis.
pub fn photon_count_bounds<T: Real>(
    pulses: u64,
    signal: T,
    k: usize,
    yields: &PhotonYields<T>,
) -> (u64, u64) {
    let weight = poisson_weights(signal, k)[k];
    let n = T::count(pulses);
    (
        floor_count(n * yields.lower[k] * weight),
        ceil_count(n * yields.upper[k] * weight),
    )
}

/// `(e^u·B̄ − ½·y̲0) / (u·y̲1)` without clamping.
pub fn qber1_upper_bound_raw<T: Real>(signal: T, b_upper: T, y0_lower: T, y1_lower: T) -> T {
    (signal.exp() * b_upper - T::half() * y0_lower) / (signal * y1_lower)
}

/// Upper bound on the single-photon bit-error rate in the X basis, in `[0, ½]`.
pub fn qber1_upper_bound<T: Real>(signal: T, b_upper: T, y0_lower: T, y1_lower: T) -> Result<T> {
    if !(y1_lower > T::zero()) {
        return Err(AbortReason::LooseEstimate.into());
    }
    let q = qber1_upper_bound_raw(signal, b_upper, y0_lower, y1_lower);
    Ok(q.max(T::zero()).min(T::half()))
}

/// Finite-size correction `ξ` added to the single-photon error bound.
pub fn phase_error_correction<T: Real>(n_z1_lower: u64, n_x1_upper: u64, eps_each: T) -> T {
    let (a, b) = (T::count(n_z1_lower), T::count(n_x1_upper));
    ((T::one() / eps_each).ln() * (a + b) / (T::two() * a * b)).sqrt()
}

pub fn tolerated_phase_error<T: Real>(
    qber1: T,
    n_z1_lower: u64,
    n_x1_upper: u64,
    eps_each: T,
    cap: T,
) -> Result<T> {
    if n_z1_lower == 0 {
        return Err(AbortReason::NoSinglePhotons { basis: Basis::Z }.into());
    }
    if n_x1_upper == 0 {
        return Err(AbortReason::NoSinglePhotons { basis: Basis::X }.into());
    }
    let xi = phase_error_correction(n_z1_lower, n_x1_upper, eps_each);
    Ok(cap.min(qber1 + xi))
}

/// Full estimation chain from tallies to the tolerated phase error.
pub fn estimate<T: Real>(counts: &ObservedCounts, pr: &ProtocolConfig<T>) -> Result<EstimationResult<T>> {
    pr.validate()?;
    let eps = pr.eps_per_constraint();
    let yields = bound_yields(counts, eps)?;
    let u = pr.signal();
    let mut photons = PhotonYieldBounds {
        yield_lower: [[T::zero(); 2]; 2],
        yield_upper: [[T::zero(); 2]; 2],
        count_lower: [[0; 2]; 2],
        count_upper: [[0; 2]; 2],
        qber1_upper: T::zero(),
        q_tol: T::zero(),
    };
    let mut per_basis = [None; 2];
    for b in Basis::ALL {
        let y = estimate_photon_yields(&yields, pr, b)?;
        let pulses = counts.cell(IntensityClass::Signal, b).pulses;
        let i = b.index();
        photons.yield_lower[i] = y.lower;
        photons.yield_upper[i] = y.upper;
        for k in 0..2 {
            let (lo, hi) = photon_count_bounds(pulses, u, k, &y);
            photons.count_lower[i][k] = lo;
            photons.count_upper[i][k] = hi;
        }
        per_basis[i] = Some(y);
    }
    let x = per_basis[Basis::X.index()].expect("X basis estimated");
    photons.qber1_upper = qber1_upper_bound(u, yields.x_error_upper(), x.lower[0], x.lower[1])?;
    photons.q_tol = tolerated_phase_error(
        photons.qber1_upper,
        photons.n_lower(Basis::Z, 1),
        photons.n_upper(Basis::X, 1),
        eps,
        pr.q_tol_cap,
    )?;
    Ok(EstimationResult { yields, photons })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{expected_counts, ChannelConfig, CellCounts};
    use crate::statbounds::cp_interval;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn yields_from_truth(mus: [f64; 3], truth: &[f64]) -> [f64; 3] {
        mus.map(|mu| {
            truth
                .iter()
                .enumerate()
                .map(|(k, &y)| poisson_weights(mu, k)[k] * y)
                .sum()
        })
    }

    /// Independent oracle for a two-variable projection: grid over `(y0, y1)`
    /// with `y2 ∈ [0, 1]` eliminated exactly (cutoff 2).
    fn grid_feasible(mus: [f64; 3], lo: [f64; 3], hi: [f64; 3], step: f64) -> Vec<(f64, f64)> {
        let w: Vec<Vec<f64>> = mus.iter().map(|&m| poisson_weights(m, 2)).collect();
        let tau: Vec<f64> = w.iter().map(|r| 1.0 - r.iter().sum::<f64>()).collect();
        let steps = (1.0 / step).round() as usize;
        let mut pts = Vec::new();
        for i in 0..=steps {
            let y0 = i as f64 * step;
            for j in 0..=steps {
                let y1 = j as f64 * step;
                let (mut a, mut b) = (0.0_f64, 1.0_f64);
                for m in 0..3 {
                    let r = w[m][0] * y0 + w[m][1] * y1;
                    a = a.max((lo[m] - tau[m] - r) / w[m][2]);
                    b = b.min((hi[m] - r) / w[m][2]);
                }
                if a <= b {
                    pts.push((y0, y1));
                }
            }
        }
        pts
    }

    /// Exact oracle for cutoff 2: every vertex of the polytope in
    /// `(y0, y1, y2)` is the intersection of three bounding planes.
    fn vertex_extremes(mus: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> ([f64; 2], [f64; 2]) {
        let mut planes: Vec<([f64; 3], f64)> = Vec::new();
        let mut rows: Vec<([f64; 3], f64, f64)> = Vec::new();
        for m in 0..3 {
            let w = poisson_weights(mus[m], 2);
            let a = [w[0], w[1], w[2]];
            let tau = 1.0 - a.iter().sum::<f64>();
            planes.push((a, lo[m] - tau));
            planes.push((a, hi[m]));
            rows.push((a, lo[m] - tau, hi[m]));
        }
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            planes.push((e, 0.0));
            planes.push((e, 1.0));
            rows.push((e, 0.0, 1.0));
        }
        let det3 = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let (mut vmin, mut vmax) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for i in 0..planes.len() {
            for j in i + 1..planes.len() {
                for l in j + 1..planes.len() {
                    let m = [planes[i].0, planes[j].0, planes[l].0];
                    let r = [planes[i].1, planes[j].1, planes[l].1];
                    let d = det3(m);
                    if d.abs() < 1e-14 {
                        continue;
                    }
                    // Cramer's rule
                    let x: Vec<f64> = (0..3)
                        .map(|c| {
                            let mut mc = m;
                            for row in 0..3 {
                                mc[row][c] = r[row];
                            }
                            det3(mc) / d
                        })
                        .collect();
                    let ok = rows.iter().all(|(a, lo, hi)| {
                        let v = a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
                        v >= lo - 1e-12 && v <= hi + 1e-12
                    });
                    if ok {
                        for k in 0..2 {
                            vmin[k] = vmin[k].min(x[k]);
                            vmax[k] = vmax[k].max(x[k]);
                        }
                    }
                }
            }
        }
        (vmin, vmax)
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> ([f64; 3], [f64; 3], [f64; 3], Vec<f64>) {
        let mus = [
            rng.random_range(0.4..0.9),
            rng.random_range(0.1..0.25),
            rng.random_range(0.0..0.02),
        ];
        // k_max' = 6 exceeds the LP cutoff of 2
        let truth: Vec<f64> = (0..=6)
            .map(|k| match k {
                0 => rng.random_range(0.05..0.3),
                _ => rng.random_range(0.2..0.9),
            })
            .collect();
        let y = yields_from_truth(mus, &truth);
        let width = rng.random_range(0.02..0.06);
        (
            mus,
            y.map(|v| v * (1.0 - width)),
            y.map(|v| v * (1.0 + width)),
            truth,
        )
    }

    #[test]
    fn trivial_yield_bounds() {
        let mut counts = ObservedCounts {
            total_pulses: 10_000,
            ..Default::default()
        };
        for c in IntensityClass::ALL {
            for b in Basis::ALL {
                *counts.cell_mut(c, b) = CellCounts {
                    pulses: 1000,
                    detections: 500,
                    errors: 10,
                };
            }
        }
        counts.cell_mut(IntensityClass::Decoy, Basis::Z).detections = 0;
        counts.cell_mut(IntensityClass::Decoy, Basis::Z).errors = 0;
        counts.cell_mut(IntensityClass::Vacuum, Basis::X).detections = 1000;
        let yb = bound_yields(&counts, 1e-6).unwrap();
        assert_eq!(yb.lower(IntensityClass::Decoy, Basis::Z), 0.0);
        assert_eq!(yb.upper(IntensityClass::Vacuum, Basis::X), 1.0);
        assert!(yb.x_error_upper() >= yb.x_error_mean);
        for c in IntensityClass::ALL {
            for b in Basis::ALL {
                assert!(yb.lower(c, b) <= yb.mean(c, b) && yb.mean(c, b) <= yb.upper(c, b));
            }
        }
    }

    #[test]
    fn empty_cell_aborts() {
        let counts = ObservedCounts {
            total_pulses: 10,
            ..Default::default()
        };
        assert!(matches!(
            bound_yields::<f64>(&counts, 1e-3),
            Err(Error::Abort(AbortReason::EmptySample { .. }))
        ));
    }

    #[test]
    fn yield_width_scales_as_inverse_sqrt() {
        let eps = 1e-10 / 46.0;
        let width = |n: u64| {
            let mut counts = ObservedCounts {
                total_pulses: 1000 * n,
                ..Default::default()
            };
            for c in IntensityClass::ALL {
                for b in Basis::ALL {
                    *counts.cell_mut(c, b) = CellCounts {
                        pulses: n,
                        detections: n / 100,
                        errors: 0,
                    };
                }
            }
            let yb = bound_yields(&counts, eps).unwrap();
            let cp = cp_interval(n, n / 100, eps).unwrap();
            let (lo, hi) = (
                yb.lower(IntensityClass::Signal, Basis::Z),
                yb.upper(IntensityClass::Signal, Basis::Z),
            );
            assert!(lo <= cp.lower && hi >= cp.upper);
            hi - lo
        };
        let ratio: f64 = width(1_000_000) / width(4_000_000);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn lp_brackets_truth_with_exact_yields() {
        let mus = [0.415, 0.05, 1e-4];
        let truth: Vec<f64> = (0..=15).map(|k| 1.0 - 0.99_f64.powi(k) * 0.999_95).collect();
        let y = yields_from_truth(mus, &truth);
        let out = solve_photon_lp(mus, y, y, 9).unwrap();
        for k in 0..2 {
            assert!(out.lower[k] <= truth[k] + 1e-12 && truth[k] <= out.upper[k] + 1e-12);
        }
    }

    #[test]
    fn lp_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-3;
        for _ in 0..6 {
            let (mus, lo, hi, truth) = random_instance(&mut rng);
            let lp = solve_photon_lp(mus, lo, hi, 2).unwrap();
            let pts = grid_feasible(mus, lo, hi, step);
            assert!(!pts.is_empty());
            let min0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let max0 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let min1 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let max1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            // grid points are feasible, so the LP is never tighter than the grid
            assert!(lp.lower[0] <= min0 + 1e-12 && lp.upper[0] >= max0 - 1e-12);
            assert!(lp.lower[1] <= min1 + 1e-12 && lp.upper[1] >= max1 - 1e-12);
            let (vmin, vmax) = vertex_extremes(mus, lo, hi);
            for k in 0..2 {
                assert!((lp.lower[k] - vmin[k]).abs() < 1e-9, "{lp:?} {vmin:?}");
                assert!((lp.upper[k] - vmax[k]).abs() < 1e-9, "{lp:?} {vmax:?}");
            }
            assert!(lp.lower[1] <= truth[1] && truth[1] <= lp.upper[1]);
        }
    }

    #[test]
    fn near_equal_intensities_stay_feasible() {
        // X-basis bounds from a 29 ms block with u ≈ v; the true yields are feasible
        let mus = [0.18734902439144963, 0.18239793156904086, 1e-4];
        let lo = [0.0020541300308705014, 0.0016022086098652672, 0.0];
        let hi = [0.0024793254435682118, 0.0029389960498237217, 0.010112972339242132];
        let mut ch = ChannelConfig::<f64>::default();
        ch.misalignment_error = 0.005;
        for cutoff in 2..=12 {
            let out = solve_photon_lp(mus, lo, hi, cutoff)
                .unwrap_or_else(|e| panic!("cutoff {cutoff}: {e}"));
            for k in 0..2 {
                let truth = ch.photon_yield(k as u32);
                assert!(
                    out.lower[k] <= truth && truth <= out.upper[k],
                    "cutoff {cutoff}, k {k}: {out:?} vs {truth}"
                );
            }
        }
    }

    #[test]
    fn random_channels_are_bracketed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..400 {
            let ch = ChannelConfig::<f64> {
                fiber_length_km: rng.random_range(0.0..150.0),
                dark_count_prob: rng.random_range(0.0..1e-4),
                afterpulse_prob: rng.random_range(0.0..0.1),
                ..Default::default()
            };
            let u = rng.random_range(0.1..0.9);
            let v = if case % 4 == 0 {
                u * rng.random_range(0.95..0.999)
            } else {
                rng.random_range(0.01..u)
            };
            let w = [0.0, 1e-4, 1e-3][case % 3];
            let mus = [u, v, w];
            let y = mus.map(|m| ch.detection_prob(m));
            let lo = y.map(|t| t * (1.0 - rng.random_range(0.0..0.5)) * [1.0, 0.0][usize::from(rng.random_bool(0.1))]);
            let hi = y.map(|t| (t * (1.0 + rng.random_range(0.0..0.5))).min(1.0));
            let cutoff = rng.random_range(2..=12);
            let out = solve_photon_lp(mus, lo, hi, cutoff)
                .unwrap_or_else(|e| panic!("case {case}: {e}"));
            for k in 0..2 {
                let truth = ch.photon_yield(k as u32);
                assert!(
                    out.lower[k] <= truth * (1.0 + 1e-9) && truth <= out.upper[k] * (1.0 + 1e-9),
                    "case {case}, k {k}: {out:?} vs {truth}"
                );
            }
        }
    }

    #[test]
    fn inconsistent_bounds_are_infeasible() {
        let mus = [0.5, 0.1, 0.0];
        // vacuum yield above the signal yield cannot come from yields in [0, 1]
        let lo = [0.001, 0.001, 0.9];
        let hi = [0.002, 0.002, 1.0];
        assert!(matches!(
            solve_photon_lp(mus, lo, hi, 9),
            Err(LpError::Infeasible(_))
        ));
    }

    #[test]
    fn count_bounds_examples() {
        let zero = PhotonYields {
            lower: [0.0, 0.0],
            upper: [0.5, 0.5],
        };
        assert_eq!(photon_count_bounds(1000, 0.4, 1, &zero).0, 0);
        // e^(-u)u = 0.25 at u = -W(-1/4)
        let mut u: f64 = 0.25;
        for _ in 0..100 {
            u = 0.25 * u.exp();
        }
        assert!((u * (-u).exp() - 0.25).abs() < 1e-15);
        let one = PhotonYields {
            lower: [1.0, 1.0],
            upper: [1.0, 1.0],
        };
        // the product may land a hair either side of 25
        let (lo, hi) = photon_count_bounds(100, u, 1, &one);
        assert!((24..=25).contains(&lo) && (25..=26).contains(&hi) && lo <= hi);
        assert!(lo == 25 || hi == 25);
    }

    #[test]
    fn qber_bound_examples() {
        let q: f64 = qber1_upper_bound(0.415, 9.1e-5, 4.2e-5, 1.13e-2).unwrap();
        assert!((q - 0.0249).abs() < 5e-5, "{q}");
        let y0 = 4.2e-5;
        let b = 0.5 * y0 * (-0.415_f64).exp();
        assert_eq!(qber1_upper_bound(0.415, b * 0.999, y0, 1e-2).unwrap(), 0.0);
        assert!(qber1_upper_bound(0.415, b, y0, 1e-2).unwrap().abs() < 1e-12);
        assert!(matches!(
            qber1_upper_bound(0.415, 1e-4, y0, 0.0),
            Err(Error::Abort(AbortReason::LooseEstimate))
        ));
        assert_eq!(qber1_upper_bound(0.415, 0.9, 0.0, 1e-2).unwrap(), 0.5);
    }

    #[test]
    fn phase_error_examples() {
        let eps = 1e-10 / 46.0;
        let xi = phase_error_correction(10_000, 10_000, eps);
        assert!((xi - (4.6e11_f64.ln() / 1e4).sqrt()).abs() < 1e-12);
        assert!((xi - 0.0518).abs() < 5e-5, "{xi}");
        assert_eq!(tolerated_phase_error(0.49, 100, 100, eps, 0.5).unwrap(), 0.5);
        let big = 1_000_000_000_000_u64;
        let q = tolerated_phase_error(0.034, big, big, eps, 0.5).unwrap();
        assert!(q > 0.034 && q - 0.034 < 1e-5);
        assert!(tolerated_phase_error(0.034, 0, 5, eps, 0.5).is_err());
    }

    #[test]
    fn pipeline_at_fifty_km() {
        let ch = ChannelConfig::<f64>::default();
        let pr = ProtocolConfig::<f64>::default();
        let counts = expected_counts(&ch, &pr).unwrap();
        let est = estimate(&counts, &pr).unwrap();
        let p = &est.photons;
        let y1 = ch.photon_yield(1);
        assert!(p.y_lower(Basis::Z, 1) <= y1 && y1 <= p.y_upper(Basis::Z, 1));
        assert!((p.y_lower(Basis::Z, 1) - ch.transmittance()).abs() < 0.05 * y1);
        assert!(p.n_lower(Basis::Z, 1) as f64 > 10.0 * p.n_upper(Basis::X, 1) as f64);
        assert!(p.qber1_upper >= ch.photon_error_rate(1));
        assert!(p.q_tol > p.qber1_upper);
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("quantity,value\n") && text.contains("q_tol_X,"));
    }

    #[test]
    fn larger_eps_never_loosens_single_photon_bound() {
        let ch = ChannelConfig::<f64>::default();
        let pr = ProtocolConfig::<f64>::default();
        let counts = expected_counts(&ch, &pr).unwrap();
        let mut prev: f64 = 0.0;
        for eps in [1e-14, 1e-10, 1e-6, 1e-3] {
            let yb = bound_yields(&counts, eps).unwrap();
            let y = estimate_photon_yields(&yb, &pr, Basis::Z).unwrap();
            assert!(y.lower[1] >= prev - 1e-15);
            prev = y.lower[1];
        }
    }
}
