//! Space-time norms, interval policies and the scalar bounds used to read
//! trajectories: admissible exponents, adaptive partitions, the local step
//! size, the nonlinear Gronwall bound and the energy-bound right-hand sides.

use serde::{Deserialize, Serialize};

use crate::error::{NlwError, Result};
use crate::grid::{fft_inverse, lebesgue_norm_values};
use crate::solver::Trajectory;

/// `(q, r)` of the X-norm: `L^{(d+2)/(d-2)}_t L^{2(d+2)/(d-2)}_x`.
pub fn x_exponents(dim: usize) -> Result<(f64, f64)> {
    if !(3..=5).contains(&dim) {
        return Err(NlwError::UnsupportedDimension(dim));
    }
    let d = dim as f64;
    Ok(((d + 2.0) / (d - 2.0), 2.0 * (d + 2.0) / (d - 2.0)))
}

/// Minimum number of samples inside an interval for a time quadrature.
pub const MIN_SAMPLES: usize = 8;

/// Linear interpolation of `values` at time `t`.
fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let i = times.partition_point(|&s| s <= t);
    if i == 0 {
        return values[0];
    }
    if i >= times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let w = (t - t0) / (t1 - t0);
    values[i - 1] * (1.0 - w) + values[i] * w
}

/// `(int_a^b f(t)^q dt)^{1/q}` by trapezoid on the samples, with `f^q`
/// interpolated linearly at interval endpoints that fall between samples.
/// `q = inf` takes the maximum over the samples in `[a, b]`.
pub fn spacetime_norm_samples(times: &[f64], values: &[f64], q: f64, interval: (f64, f64)) -> Result<f64> {
    if times.len() != values.len() {
        return Err(NlwError::ShapeMismatch {
            expected: times.len(),
            actual: values.len(),
        });
    }
    if q.is_nan() || q < 1.0 {
        return Err(NlwError::InvalidExponent(format!("time exponent {q} must be >= 1")));
    }
    let (a, b) = interval;
    if times.is_empty() {
        return Err(NlwError::InsufficientSamples { needed: MIN_SAMPLES, got: 0 });
    }
    let slack = 1e-9 * (times[times.len() - 1] - times[0]).abs().max(1e-300);
    if !(a <= b) || a < times[0] - slack || b > times[times.len() - 1] + slack {
        return Err(NlwError::InvalidArgument(format!(
            "interval [{a}, {b}] is not inside the recorded range [{}, {}]",
            times[0],
            times[times.len() - 1]
        )));
    }
    let inside: Vec<usize> = (0..times.len())
        .filter(|&i| times[i] >= a - slack && times[i] <= b + slack)
        .collect();
    if inside.len() < MIN_SAMPLES {
        return Err(NlwError::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: inside.len(),
        });
    }
    if q.is_infinite() {
        return Ok(inside.iter().map(|&i| values[i]).fold(0.0, f64::max));
    }
    let powered: Vec<f64> = values.iter().map(|v| v.powf(q)).collect();
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(inside.len() + 2);
    if times[inside[0]] > a + slack {
        nodes.push((a, interpolate(times, &powered, a)));
    }
    nodes.extend(inside.iter().map(|&i| (times[i], powered[i])));
    if times[*inside.last().expect("nonempty")] < b - slack {
        nodes.push((b, interpolate(times, &powered, b)));
    }
    let integral: f64 = nodes.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    Ok(integral.powf(1.0 / q))
}

/// `(int_{t_0}^{t_i} f^q)^{1/q}` at every sample; nondecreasing.
pub fn running_spacetime_norm(times: &[f64], values: &[f64], q: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    if q.is_infinite() {
        let mut m = 0.0f64;
        for &v in values {
            m = m.max(v);
            out.push(m);
        }
        return out;
    }
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..times.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i - 1].powf(q) + values[i].powf(q));
        out.push(acc.powf(1.0 / q));
    }
    out
}

/// `(q, r)` is `\dot H^gamma` wave admissible in dimension `dim`:
/// `q >= 2`, `2 <= r < inf`, `1/q + (d-1)/(2r) <= (d-1)/4` and
/// `1/q + d/r = d/2 - gamma`. `q = inf` is allowed, so `(inf, 2)` with
/// `gamma = 0` is included.
pub fn admissible_pair_check(dim: usize, gamma: f64, q: f64, r: f64) -> bool {
    if dim < 2 || q.is_nan() || r.is_nan() || !(q >= 2.0) || !(r >= 2.0) || r.is_infinite() {
        return false;
    }
    let d = dim as f64;
    let inv_q = if q.is_infinite() { 0.0 } else { 1.0 / q };
    let tol = 1e-12;
    let line = inv_q + (d - 1.0) / (2.0 * r) <= (d - 1.0) / 4.0 + tol;
    let scaling = (inv_q + d / r - (d / 2.0 - gamma)).abs() <= tol;
    line && scaling
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    pub target: f64,
    pub intervals: Vec<(f64, f64)>,
    /// `L^q_t` norm of the recorded series on each interval.
    pub norms: Vec<f64>,
}

impl IntervalPartition {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Left-to-right cuts at the first samples where the cumulative `L^q_t` mass
/// `int f^q` of `values` reaches `target^q`, `2 target^q`, .... Anchoring to
/// the cumulative mass keeps each cut within one sample of its continuum
/// position. With one step carrying at most half of `target^q`, every
/// interval but the last has norm in `[target/2, 2 target]`.
pub fn adaptive_partition(times: &[f64], values: &[f64], q: f64, target: f64) -> Result<IntervalPartition> {
    if times.len() != values.len() {
        return Err(NlwError::ShapeMismatch {
            expected: times.len(),
            actual: values.len(),
        });
    }
    if times.len() < 2 {
        return Err(NlwError::InsufficientSamples {
            needed: 2,
            got: times.len(),
        });
    }
    if !(target > 0.0) || q.is_nan() || q < 1.0 || q.is_infinite() {
        return Err(NlwError::InvalidArgument(format!(
            "partition needs target > 0 and finite q >= 1, got {target}, {q}"
        )));
    }
    let step_mass: Vec<f64> = times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0].powf(q) + v[1].powf(q)))
        .collect();
    let goal = target.powf(q);
    if let Some(worst) = step_mass.iter().cloned().reduce(f64::max) {
        if worst > 0.5 * goal {
            return Err(NlwError::InvalidArgument(format!(
                "target {target} is below the sampling resolution (one step carries {})",
                worst.powf(1.0 / q)
            )));
        }
    }
    let mut intervals = Vec::new();
    let mut norms = Vec::new();
    let mut start = 0usize;
    let mut total = 0.0;
    let mut since_cut = 0.0;
    let mut next_level = goal;
    for (i, m) in step_mass.iter().enumerate() {
        total += m;
        since_cut += m;
        if total >= next_level && i + 1 < times.len() - 1 {
            intervals.push((times[start], times[i + 1]));
            norms.push(since_cut.powf(1.0 / q));
            start = i + 1;
            since_cut = 0.0;
            while next_level <= total {
                next_level += goal;
            }
        }
    }
    intervals.push((times[start], times[times.len() - 1]));
    norms.push(since_cut.powf(1.0 / q));
    Ok(IntervalPartition {
        target,
        intervals,
        norms,
    })
}

/// One calibrated local step: Picard contracted with step `tau` for data
/// at energy level `energy_level` and forcing size `forcing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauEntry {
    pub energy_level: f64,
    pub forcing: f64,
    pub tau: f64,
}

/// Empirical first branch of the local step size.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TauTable {
    pub dim: usize,
    pub entries: Vec<TauEntry>,
}

impl TauTable {
    /// Largest calibrated step among entries that dominate `(a, k)`; when
    /// none does, the smallest step rescaled by `(a_e/a)^q (k_e/k)^q` with
    /// `q` the X-norm time exponent.
    pub fn lookup(&self, a: f64, k: f64) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(NlwError::InvalidArgument("empty step-size table".into()));
        }
        let dominating = self
            .entries
            .iter()
            .filter(|e| e.energy_level >= a && e.forcing >= k)
            .map(|e| e.tau)
            .reduce(f64::max);
        if let Some(tau) = dominating {
            return Ok(tau);
        }
        let (q, _) = x_exponents(self.dim)?;
        Ok(self
            .entries
            .iter()
            .map(|e| e.tau * (e.energy_level / a).min(1.0).powf(q) * (e.forcing / k).min(1.0).powf(q))
            .fold(f64::INFINITY, f64::min))
    }
}

/// `1/2 (c / (2 T^2 log(2T/eps)))^{(d+2) / (2(d - 2 - gamma (d+2)))}`.
pub fn tau_second_branch(dim: usize, gamma: f64, horizon: f64, eps: f64, c: f64) -> Result<f64> {
    let d = dim as f64;
    if dim < 3 {
        return Err(NlwError::UnsupportedDimension(dim));
    }
    if !(gamma >= 0.0 && gamma < (d - 2.0) / (d + 2.0)) {
        return Err(NlwError::InvalidArgument(format!(
            "gamma = {gamma} must lie in [0, (d-2)/(d+2))"
        )));
    }
    if !(horizon > 0.0 && eps > 0.0 && c > 0.0) || 2.0 * horizon <= eps {
        return Err(NlwError::InvalidArgument(format!(
            "need T, eps, c > 0 and eps < 2T, got T = {horizon}, eps = {eps}, c = {c}"
        )));
    }
    let exponent = (d + 2.0) / (2.0 * (d - 2.0 - gamma * (d + 2.0)));
    let base = c / (2.0 * horizon * horizon * (2.0 * horizon / eps).ln());
    Ok(0.5 * base.powf(exponent))
}

/// `min(table(A, K), second branch)` with `c = 1`.
pub fn tau_star(energy_level: f64, forcing: f64, gamma: f64, horizon: f64, eps: f64, table: &TauTable) -> Result<f64> {
    if !(energy_level > 0.0 && forcing > 0.0) {
        return Err(NlwError::InvalidArgument("energy level and forcing size must be positive".into()));
    }
    let second = tau_second_branch(table.dim, gamma, horizon, eps, 1.0)?;
    Ok(table.lookup(energy_level, forcing)?.min(second))
}

/// `(c^{1-alpha} + (1 - alpha) int_{t_0}^t b)^{1/(1-alpha)}`, the bound for
/// `u(t) <= c + int b u^alpha`. The integral is trapezoid on the samples.
pub fn gronwall_bound(c: f64, alpha: f64, times: &[f64], b: &[f64], t: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(NlwError::InvalidArgument(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    if !(c >= 0.0) || b.iter().any(|v| !(*v >= 0.0)) {
        return Err(NlwError::InvalidArgument("c and b must be nonnegative".into()));
    }
    if times.len() != b.len() || times.len() < 2 {
        return Err(NlwError::ShapeMismatch {
            expected: times.len().max(2),
            actual: b.len(),
        });
    }
    if t < times[0] || t > times[times.len() - 1] {
        return Err(NlwError::InvalidArgument(format!("t = {t} outside the sampled range")));
    }
    let mut integral = 0.0;
    for i in 1..times.len() {
        let (t0, t1) = (times[i - 1], times[i]);
        if t0 >= t {
            break;
        }
        let hi = t1.min(t);
        let b_hi = if hi < t1 { interpolate(times, b, hi) } else { b[i] };
        integral += 0.5 * (hi - t0) * (b[i - 1] + b_hi);
    }
    let e = 1.0 - alpha;
    Ok((c.powf(e) + e * integral).powf(1.0 / e))
}

/// Right-hand side of the energy bound on `[t_0, t_0 + horizon]`, with unit
/// constants:
/// `|z|_X^3 exp(|z|_{L^1 L^inf})` for `d = 4`,
/// `|z|_X^{7/3} + |z|_{L^1 L^10}^5` for `d = 5`.
pub fn energy_bound_rhs(traj: &Trajectory, horizon: f64) -> Result<f64> {
    let dim = traj.grid.dim();
    let iv = (traj.t_start(), traj.t_start() + horizon);
    let (q, r) = x_exponents(dim)?;
    match dim {
        4 => {
            let x = traj.z_spacetime_norm(q, r, iv)?;
            let l1 = traj.z_spacetime_norm(1.0, f64::INFINITY, iv)?;
            Ok(x.powi(3) * l1.exp())
        }
        5 => {
            let x = traj.z_spacetime_norm(q, r, iv)?;
            let l1 = traj.z_spacetime_norm(1.0, 10.0, iv)?;
            Ok(x.powf(7.0 / 3.0) + l1.powi(5))
        }
        _ => Err(NlwError::UnsupportedDimension(dim)),
    }
}

/// Right-hand side of the differential inequality for `E(v)^{1/2}` at one
/// recorded time, with unit constants: `a(t) + b(t) E^{alpha/2}` where
/// `d = 4`: `a = |z|_{L^6}^3`, `b = |z|_{L^inf}`, `alpha = 1`;
/// `d = 5`: `a = |z|_{L^{14/3}}^{7/3}`, `b = |z|_{L^10}`, `alpha = 4/5`.
pub fn energy_rate_terms(traj: &Trajectory, index: usize) -> Result<(f64, f64, f64)> {
    match traj.grid.dim() {
        4 => Ok((
            traj.z_series(6.0)?[index].powi(3),
            traj.z_series(f64::INFINITY)?[index],
            1.0,
        )),
        5 => Ok((
            traj.z_series(14.0 / 3.0)?[index].powf(7.0 / 3.0),
            traj.z_series(10.0)?[index],
            0.8,
        )),
        d => Err(NlwError::UnsupportedDimension(d)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    /// `|(v - w)(t_0)|_{\dot H^1 x L^2}`.
    pub initial_difference: f64,
    /// `sup_t |(v - w)(t)|_{\dot H^1 x L^2}`.
    pub sup_difference: f64,
    /// X-norm of `v - w`.
    pub x_difference: f64,
    /// X-norm of `v`.
    pub v_x_norm: f64,
    /// `|e|_{L^1_t L^2_x}` with `e = F(v) - F(v + z)`.
    pub error_l1l2: f64,
}

/// Compare a forced solution `v` against an unforced solution `w`; both
/// trajectories must keep their states on the same time grid.
pub fn perturbation_compare(v: &Trajectory, w: &Trajectory) -> Result<PerturbationReport> {
    if v.grid != w.grid {
        return Err(NlwError::GridMismatch);
    }
    if v.times.len() != w.times.len() || v.times.iter().zip(&w.times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(NlwError::InvalidArgument("trajectories use different time grids".into()));
    }
    if v.states.len() != v.times.len() || w.states.len() != w.times.len() {
        return Err(NlwError::InvalidArgument("both trajectories must keep their states".into()));
    }
    let grid = v.grid;
    let (q, r) = x_exponents(grid.dim())?;
    let mut sup = 0.0f64;
    let mut initial = 0.0;
    let mut spatial = Vec::with_capacity(v.times.len());
    for (i, (a, b)) in v.states.iter().zip(&w.states).enumerate() {
        let diff = a.sub(b)?;
        let energy_norm = diff.sobolev_pair_norm(1.0, true)?;
        if i == 0 {
            initial = energy_norm;
        }
        sup = sup.max(energy_norm);
        spatial.push(lebesgue_norm_values(fft_inverse(&diff.pos).values(), &grid, r)?);
    }
    let iv = (v.t_start(), v.t_end());
    let error_l1l2 = if v.forcing_error.is_empty() {
        0.0
    } else {
        spacetime_norm_samples(&v.times, &v.forcing_error, 1.0, iv)?
    };
    Ok(PerturbationReport {
        initial_difference: initial,
        sup_difference: sup,
        x_difference: spacetime_norm_samples(&v.times, &spatial, q, iv)?,
        v_x_norm: v.spacetime_norm(q, r, iv)?,
        error_l1l2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform(n: usize, t: f64) -> Vec<f64> {
        (0..n).map(|i| t * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn x_exponents_by_dimension() {
        assert_eq!(x_exponents(4).unwrap(), (3.0, 6.0));
        let (q, r) = x_exponents(5).unwrap();
        assert_relative_eq!(q, 7.0 / 3.0);
        assert_relative_eq!(r, 14.0 / 3.0);
        assert!(x_exponents(2).is_err());
    }

    #[test]
    fn spacetime_norm_of_constant_series() {
        let t = uniform(11, 2.0);
        let v = vec![1.5; 11];
        assert_relative_eq!(
            spacetime_norm_samples(&t, &v, 3.0, (0.0, 2.0)).unwrap(),
            2f64.powf(1.0 / 3.0) * 1.5,
            max_relative = 1e-14
        );
        assert_eq!(spacetime_norm_samples(&t, &v, f64::INFINITY, (0.0, 2.0)).unwrap(), 1.5);
        assert_eq!(spacetime_norm_samples(&t, &[0.0; 11], 3.0, (0.0, 2.0)).unwrap(), 0.0);
        // Interval endpoints between samples.
        assert_relative_eq!(
            spacetime_norm_samples(&t, &v, 1.0, (0.05, 1.95)).unwrap(),
            1.9 * 1.5,
            max_relative = 1e-14
        );
    }

    #[test]
    fn spacetime_norm_needs_samples() {
        let t = uniform(11, 1.0);
        let v = vec![1.0; 11];
        assert!(matches!(
            spacetime_norm_samples(&t, &v, 2.0, (0.0, 0.3)),
            Err(NlwError::InsufficientSamples { .. })
        ));
        assert!(spacetime_norm_samples(&t, &v, 2.0, (0.0, 1.5)).is_err());
    }

    #[test]
    fn running_norm_is_nondecreasing_and_ends_at_total() {
        let t = uniform(50, 1.0);
        let v: Vec<f64> = t.iter().map(|s| (3.0 * s).sin().abs()).collect();
        let run = running_spacetime_norm(&t, &v, 3.0);
        assert!(run.windows(2).all(|w| w[1] >= w[0]));
        assert_relative_eq!(
            *run.last().unwrap(),
            spacetime_norm_samples(&t, &v, 3.0, (0.0, 1.0)).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn admissible_pairs() {
        assert!(admissible_pair_check(4, 1.0, 3.0, 6.0));
        assert!(admissible_pair_check(4, 1.0, 2.0, 8.0));
        assert!(admissible_pair_check(4, 0.0, f64::INFINITY, 2.0));
        assert!(admissible_pair_check(5, 1.0, 7.0 / 3.0, 14.0 / 3.0));
        assert!(!admissible_pair_check(4, 1.0, 3.0, 7.0));
        assert!(!admissible_pair_check(4, 1.0, 1.5, 12.0));
        assert!(!admissible_pair_check(4, 1.0, 3.0, f64::INFINITY));
        assert!(!admissible_pair_check(1, 0.0, f64::INFINITY, 2.0));
    }

    #[test]
    fn partition_of_zero_series_is_one_interval() {
        let t = uniform(21, 1.0);
        let p = adaptive_partition(&t, &[0.0; 21], 3.0, 0.1).unwrap();
        assert_eq!(p.intervals, vec![(0.0, 1.0)]);
        assert_eq!(p.norms, vec![0.0]);
    }

    #[test]
    fn partition_counts_additive_mass() {
        // q = 1 and a constant series of total mass 3.7 eta.
        let t = uniform(3701, 1.0);
        let eta = 1.0;
        let v = vec![3.7; 3701];
        let p = adaptive_partition(&t, &v, 1.0, eta).unwrap();
        assert_eq!(p.len(), 4);
        for n in &p.norms[..3] {
            assert!(*n >= 0.5 * eta && *n <= 2.0 * eta);
        }
    }

    #[test]
    fn partition_norms_stay_in_band() {
        let t = uniform(2001, 2.0);
        let v: Vec<f64> = t.iter().map(|s| 1.0 + (5.0 * s).sin().powi(2)).collect();
        let eta = 0.4;
        let p = adaptive_partition(&t, &v, 3.0, eta).unwrap();
        assert!(p.len() > 2);
        for n in &p.norms[..p.len() - 1] {
            assert!(*n >= 0.5 * eta && *n <= 2.0 * eta, "{n}");
        }
        let first = p.intervals[0].0;
        let last = p.intervals[p.len() - 1].1;
        assert_eq!((first, last), (0.0, 2.0));
        for w in p.intervals.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn partition_refinement_moves_cuts_by_one_spacing() {
        let f = |s: f64| 1.0 + 0.5 * (4.0 * s).cos();
        let coarse_t = uniform(401, 2.0);
        let fine_t = uniform(801, 2.0);
        let coarse = adaptive_partition(&coarse_t, &coarse_t.iter().map(|&s| f(s)).collect::<Vec<_>>(), 3.0, 0.5).unwrap();
        let fine = adaptive_partition(&fine_t, &fine_t.iter().map(|&s| f(s)).collect::<Vec<_>>(), 3.0, 0.5).unwrap();
        // The trailing remainder may be split off or not; interior cuts must agree.
        assert!(coarse.len().abs_diff(fine.len()) <= 1);
        let h = coarse_t[1] - coarse_t[0];
        let shared = coarse.len().min(fine.len()) - 1;
        for (a, b) in coarse.intervals[..shared].iter().zip(&fine.intervals[..shared]) {
            assert!((a.1 - b.1).abs() <= h + 1e-12);
        }
    }

    #[test]
    fn partition_rejects_target_below_resolution() {
        let t = uniform(5, 1.0);
        assert!(adaptive_partition(&t, &[10.0; 5], 1.0, 0.1).is_err());
    }

    #[test]
    fn tau_second_branch_spot_value() {
        let v = tau_second_branch(4, 0.0, 1.0, 0.1, 1.0).unwrap();
        let expected = 0.5 * (1.0 / (2.0 * 20f64.ln())).powf(1.5);
        assert_relative_eq!(v, expected, max_relative = 1e-14);
        assert_relative_eq!(v, 0.0340934, max_relative = 1e-5);
        assert!(tau_second_branch(4, 1.0 / 3.0, 1.0, 0.1, 1.0).is_err());
        assert!(tau_second_branch(4, 0.0, 1.0, 1e-9, 1.0).unwrap() < tau_second_branch(4, 0.0, 1.0, 1e-3, 1.0).unwrap());
    }

    #[test]
    fn tau_star_is_monotone() {
        let table = TauTable {
            dim: 4,
            entries: vec![
                TauEntry { energy_level: 1.0, forcing: 1.0, tau: 0.2 },
                TauEntry { energy_level: 4.0, forcing: 1.0, tau: 0.05 },
                TauEntry { energy_level: 1.0, forcing: 4.0, tau: 0.04 },
            ],
        };
        let mut prev = f64::INFINITY;
        for a in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let t = tau_star(a, 0.5, 0.0, 1.0, 0.1, &table).unwrap();
            assert!(t <= prev);
            prev = t;
            assert!(tau_star(2.0 * a, 0.5, 0.0, 1.0, 0.1, &table).unwrap() <= t);
            assert!(tau_star(a, 1.0, 0.0, 1.0, 0.1, &table).unwrap() <= t);
            assert!(tau_star(a, 0.5, 0.0, 2.0, 0.1, &table).unwrap() <= t);
        }
    }

    #[test]
    fn gronwall_closed_forms() {
        let t = uniform(201, 2.0);
        let ones = vec![1.0; 201];
        assert_relative_eq!(gronwall_bound(1.0, 0.5, &t, &ones, 2.0).unwrap(), 4.0, max_relative = 1e-12);
        assert_relative_eq!(gronwall_bound(3.0, 0.0, &t, &ones, 2.0).unwrap(), 5.0, max_relative = 1e-12);
        assert_relative_eq!(gronwall_bound(3.0, 0.0, &t, &ones, 0.75).unwrap(), 3.75, max_relative = 1e-12);
        assert!(gronwall_bound(1.0, 1.0, &t, &ones, 2.0).is_err());
    }

    #[test]
    fn gronwall_matches_ode_equality_case() {
        // u' = b(t) u^alpha, u(0) = c, with b(t) = 1 + sin(t)^2.
        let (c, alpha) = (0.7, 0.8);
        let b = |t: f64| 1.0 + t.sin().powi(2);
        let n = 20001;
        let times = uniform(n, 3.0);
        let samples: Vec<f64> = times.iter().map(|&t| b(t)).collect();
        let bound = gronwall_bound(c, alpha, &times, &samples, 3.0).unwrap();
        let steps = 30000;
        let h = 3.0 / steps as f64;
        let mut u = c;
        let rhs = |t: f64, u: f64| b(t) * u.powf(alpha);
        for i in 0..steps {
            let t = i as f64 * h;
            let k1 = rhs(t, u);
            let k2 = rhs(t + 0.5 * h, u + 0.5 * h * k1);
            let k3 = rhs(t + 0.5 * h, u + 0.5 * h * k2);
            let k4 = rhs(t + h, u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        assert_relative_eq!(bound, u, max_relative = 1e-6);
    }
}
