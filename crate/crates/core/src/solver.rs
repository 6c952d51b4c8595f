//! Time integration of the defocusing wave equation.
//!
//! The production integrator is kick-drift-kick splitting around the exact
//! linear flow. With the force sampled at step nodes this equals trapezoid
//! quadrature of the Duhamel formula, which is what `picard_local_solve`
//! iterates to a fixed point.

use serde::{Deserialize, Serialize};

use crate::analysis::{spacetime_norm_samples, x_exponents};
use crate::error::{NlwError, Result};
use crate::grid::{fft_inverse_two, lebesgue_norm_values, FieldPair, Grid, RealField, SpectralField};
use crate::nonlinear::{Dealias, ForceEvaluator};
use crate::propagator::{duhamel_series, linear_energy, PropagatorCache};

/// `f64` lists that accept `"inf"` for infinity.
pub mod exponent_list {
    use serde::de::{self, Deserializer, SeqAccess, Visitor};
    use serde::ser::{SerializeSeq, Serializer};
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(crate) enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(values.len()))?;
        for &v in values {
            if v.is_infinite() {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element(&v)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Vec<f64>;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a list of exponents (numbers or \"inf\")")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Vec<f64>, A::Error> {
                let mut out = Vec::new();
                while let Some(r) = seq.next_element::<Repr>()? {
                    out.push(match r {
                        Repr::Num(v) => v,
                        Repr::Text(t) if t == "inf" || t == "infinity" => f64::INFINITY,
                        Repr::Text(t) => return Err(de::Error::custom(format!("bad exponent {t:?}"))),
                    });
                }
                Ok(out)
            }
        }
        d.deserialize_seq(V)
    }
}

fn default_blowup() -> f64 {
    1e12
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub dealias: Dealias,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Record every `sample_stride` steps (the last step is always recorded).
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    /// Spatial `L^r` norms recorded along the trajectory.
    #[serde(with = "exponent_list", default)]
    pub record_exponents: Vec<f64>,
    /// Drop the nonlinearity.
    #[serde(default)]
    pub linear: bool,
    /// Keep the state at every recorded time.
    #[serde(default)]
    pub keep_states: bool,
    /// When set, require `t_end <= L/2 - radius`: the data, supported in a
    /// ball of this radius, must not wrap around the box.
    #[serde(default)]
    pub horizon_radius: Option<f64>,
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,
}

impl SolverConfig {
    /// Defaults for a dimension: records the exponents used by the
    /// space-time norms and energy bounds of that dimension.
    pub fn for_dimension(dim: usize, dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            dealias: if dim == 5 { Dealias::Padded } else { Dealias::TwoThirds },
            picard_tol: 1e-10,
            picard_max_iters: 50,
            sample_stride: 1,
            record_exponents: default_exponents(dim),
            linear: false,
            keep_states: false,
            horizon_radius: None,
            blowup_threshold: default_blowup(),
        }
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(NlwError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(NlwError::InvalidConfig(format!("t_end = {} must be nonnegative", self.t_end)));
        }
        let steps = (self.t_end / self.dt).round();
        if (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(NlwError::InvalidConfig(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self, grid: &Grid) -> Result<usize> {
        let steps = self.steps()?;
        if self.sample_stride == 0 {
            return Err(NlwError::InvalidConfig("sample_stride must be at least 1".into()));
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iters == 0 {
            return Err(NlwError::InvalidConfig("Picard tolerance and iteration cap must be positive".into()));
        }
        if let Some(&r) = self.record_exponents.iter().find(|r| !(**r >= 1.0)) {
            return Err(NlwError::InvalidExponent(format!("recorded exponent {r} must be >= 1")));
        }
        if let Some(radius) = self.horizon_radius {
            let horizon = 0.5 * grid.side() - radius;
            if self.t_end > horizon + 1e-12 {
                return Err(NlwError::InvalidConfig(format!(
                    "t_end = {} exceeds the wraparound horizon {horizon}",
                    self.t_end
                )));
            }
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(NlwError::InvalidConfig("blowup threshold must be positive".into()));
        }
        Ok(steps)
    }
}

/// Exponents needed by the X-norm and the energy-bound norms.
pub fn default_exponents(dim: usize) -> Vec<f64> {
    match dim {
        4 => vec![2.0, 6.0, f64::INFINITY],
        5 => vec![2.0, 14.0 / 3.0, 10.0, f64::INFINITY],
        3 => vec![2.0, 10.0, f64::INFINITY],
        _ => vec![2.0, 4.0, f64::INFINITY],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSeries {
    #[serde(with = "exponent_scalar")]
    pub exponent: f64,
    pub values: Vec<f64>,
}

pub mod exponent_scalar {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match super::exponent_list::Repr::deserialize(d)? {
            super::exponent_list::Repr::Num(v) => Ok(v),
            super::exponent_list::Repr::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            super::exponent_list::Repr::Text(t) => Err(serde::de::Error::custom(format!("bad exponent {t:?}"))),
        }
    }
}

fn find_series(series: &[NormSeries], r: f64) -> Result<&[f64]> {
    series
        .iter()
        .find(|s| s.exponent == r || (s.exponent - r).abs() < 1e-12)
        .map(|s| s.values.as_slice())
        .ok_or_else(|| NlwError::MissingSeries(format!("{r}")))
}

/// One evolution: recorded times, energy of `v`, spatial norm series of
/// `v` and of the forcing `z`, and optionally the states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub times: Vec<f64>,
    /// `E(v(t))` with the potential on the dealiasing grid.
    pub energy: Vec<f64>,
    pub norms: Vec<NormSeries>,
    /// Empty for unforced runs.
    pub z_norms: Vec<NormSeries>,
    /// `|F(v + z) - F(v)|_{L^2}`; empty for unforced runs.
    pub forcing_error: Vec<f64>,
    pub states: Vec<FieldPair>,
    pub final_state: FieldPair,
}

impl Trajectory {
    pub fn series(&self, r: f64) -> Result<&[f64]> {
        find_series(&self.norms, r)
    }

    pub fn z_series(&self, r: f64) -> Result<&[f64]> {
        find_series(&self.z_norms, r)
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectories record their start")
    }

    /// `|v|_{L^q_t L^r_x(interval)}`.
    pub fn spacetime_norm(&self, q: f64, r: f64, interval: (f64, f64)) -> Result<f64> {
        spacetime_norm_samples(&self.times, self.series(r)?, q, interval)
    }

    /// `|z|_{L^q_t L^r_x(interval)}`.
    pub fn z_spacetime_norm(&self, q: f64, r: f64, interval: (f64, f64)) -> Result<f64> {
        spacetime_norm_samples(&self.times, self.z_series(r)?, q, interval)
    }

    /// X-norm of `v` over the whole run.
    pub fn x_norm(&self) -> Result<f64> {
        let (q, r) = x_exponents(self.grid.dim())?;
        self.spacetime_norm(q, r, (self.t_start(), self.t_end()))
    }

    pub fn max_energy(&self) -> f64 {
        self.energy.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    /// `max_t |E(t) - E(0)| / E(0)`.
    pub fn relative_energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        self.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE)
    }
}

struct Recorder<'a> {
    cfg: &'a SolverConfig,
    traj: Trajectory,
}

impl<'a> Recorder<'a> {
    fn new(grid: Grid, cfg: &'a SolverConfig, forced: bool) -> Self {
        let series = || {
            cfg.record_exponents
                .iter()
                .map(|&r| NormSeries {
                    exponent: r,
                    values: Vec::new(),
                })
                .collect::<Vec<_>>()
        };
        Self {
            cfg,
            traj: Trajectory {
                grid,
                times: Vec::new(),
                energy: Vec::new(),
                norms: series(),
                z_norms: if forced { series() } else { Vec::new() },
                forcing_error: Vec::new(),
                states: Vec::new(),
                final_state: FieldPair::zeros(grid),
            },
        }
    }

    fn record(&mut self, t: f64, v: &FieldPair, v_real: &RealField, z_real: Option<&RealField>, ev: &ForceEvaluator) -> Result<()> {
        let grid = *v.grid();
        let potential = if self.cfg.linear {
            0.0
        } else if ev.evaluates_on_base_grid() {
            ev.nonlinearity().potential_energy(v_real.values(), &grid)
        } else {
            ev.potential_energy(&v.pos)?
        };
        let e = linear_energy(v) + potential;
        if !e.is_finite() || e > self.cfg.blowup_threshold {
            return Err(blowup(self.traj.times.last().copied().unwrap_or(t), format!("energy {e:e}")));
        }
        self.traj.times.push(t);
        self.traj.energy.push(e);
        for s in &mut self.traj.norms {
            s.values.push(lebesgue_norm_values(v_real.values(), &grid, s.exponent)?);
        }
        if let Some(z) = z_real {
            for s in &mut self.traj.z_norms {
                s.values.push(lebesgue_norm_values(z.values(), &grid, s.exponent)?);
            }
            let nl = ev.nonlinearity();
            let diff: Vec<f64> = if self.cfg.linear {
                vec![0.0; grid.points()]
            } else {
                v_real
                    .values()
                    .iter()
                    .zip(z.values())
                    .map(|(&a, &b)| nl.eval(a + b) - nl.eval(a))
                    .collect()
            };
            self.traj.forcing_error.push(lebesgue_norm_values(&diff, &grid, 2.0)?);
        }
        if self.cfg.keep_states {
            self.traj.states.push(v.clone());
        }
        Ok(())
    }
}

fn blowup(last_good_time: f64, reason: String) -> NlwError {
    NlwError::Blowup { last_good_time, reason }
}

/// State after each step, shared by the unforced and forced evolvers.
struct Stepper {
    ev: ForceEvaluator,
    flow: PropagatorCache,
    linear: bool,
    threshold: f64,
}

impl Stepper {
    /// Force at the current position `v + z`, plus real values of `v` and `z`
    /// on the base grid.
    fn evaluate(&self, v: &FieldPair, z: Option<&FieldPair>, t: f64) -> Result<(SpectralField, RealField, Option<RealField>)> {
        let grid = *v.grid();
        let (v_real, z_real) = match z {
            Some(z) => {
                let (a, b) = fft_inverse_two(&v.pos, &z.pos)?;
                (a, Some(b))
            }
            None => (crate::grid::fft_inverse(&v.pos), None),
        };
        if self.linear {
            return Ok((SpectralField::zeros(grid), v_real, z_real));
        }
        let (force, max) = if self.ev.evaluates_on_base_grid() {
            let u = match &z_real {
                Some(zr) => v_real.add(zr)?,
                None => v_real.clone(),
            };
            self.ev.force_from_values(&u)?
        } else {
            let u = match z {
                Some(z) => v.pos.add(&z.pos)?,
                None => v.pos.clone(),
            };
            self.ev.force(&u)?
        };
        if !max.is_finite() || max > self.threshold {
            return Err(blowup(t, format!("field amplitude {max:e}")));
        }
        Ok((force, v_real, z_real))
    }
}

fn evolve(v_init: &FieldPair, z_init: Option<&FieldPair>, t0: f64, cfg: &SolverConfig) -> Result<Trajectory> {
    let grid = *v_init.grid();
    if let Some(z) = z_init {
        if z.grid() != &grid {
            return Err(NlwError::GridMismatch);
        }
    }
    let steps = cfg.validate(&grid)?;
    let ev = ForceEvaluator::critical(&grid, cfg.dealias)?;
    let stepper = Stepper {
        flow: PropagatorCache::new(&grid, cfg.dt),
        linear: cfg.linear,
        threshold: cfg.blowup_threshold,
        ev,
    };
    let mut v = if cfg.linear {
        v_init.clone()
    } else {
        stepper.ev.project_pair(v_init)
    };
    let mut z = z_init.cloned();
    let mut rec = Recorder::new(grid, cfg, z.is_some());

    let (mut force, v_real, z_real) = stepper.evaluate(&v, z.as_ref(), t0)?;
    rec.record(t0, &v, &v_real, z_real.as_ref(), &stepper.ev)?;
    let half = 0.5 * cfg.dt;
    for i in 0..steps {
        let t = t0 + (i + 1) as f64 * cfg.dt;
        v.vel.axpy(-half, &force)?;
        stepper.flow.apply(&mut v)?;
        if let Some(z) = z.as_mut() {
            stepper.flow.apply(z)?;
        }
        let (f, v_real, z_real) = stepper
            .evaluate(&v, z.as_ref(), t)
            .map_err(|e| relabel_blowup(e, t - cfg.dt))?;
        force = f;
        v.vel.axpy(-half, &force)?;
        if (i + 1) % cfg.sample_stride == 0 || i + 1 == steps {
            rec.record(t, &v, &v_real, z_real.as_ref(), &stepper.ev)
                .map_err(|e| relabel_blowup(e, t - cfg.dt))?;
        }
    }
    rec.traj.final_state = v;
    Ok(rec.traj)
}

fn relabel_blowup(e: NlwError, last_good_time: f64) -> NlwError {
    match e {
        NlwError::Blowup { reason, .. } => NlwError::Blowup { last_good_time, reason },
        other => other,
    }
}

/// Evolve `u_tt - Lap u + F(u) = 0` from `initial` on `[0, t_end]`.
pub fn strang_evolve(initial: &FieldPair, cfg: &SolverConfig) -> Result<Trajectory> {
    evolve(initial, None, 0.0, cfg)
}

/// Evolve `v_tt - Lap v + F(v + z) = 0` from `v_init` on `[0, t_end]`, where
/// `z` is the free evolution of `z_init`, advanced alongside `v` by the same
/// exact flow.
pub fn solve_v_equation(z_init: &FieldPair, v_init: &FieldPair, cfg: &SolverConfig) -> Result<Trajectory> {
    evolve(v_init, Some(z_init), 0.0, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardStep {
    pub iteration: usize,
    /// X-norm of the difference between successive iterates.
    pub difference: f64,
    /// `difference / previous difference`.
    pub ratio: Option<f64>,
    /// X-norm of the current iterate.
    pub iterate_norm: f64,
    /// `2 a^{p-1} + |z|_X^{p-1}` with `a` the iterate norm.
    pub predicted_factor: f64,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub times: Vec<f64>,
    pub states: Vec<FieldPair>,
    pub log: Vec<PicardStep>,
    pub z_norm: f64,
}

impl PicardOutcome {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    /// Largest contraction ratio observed after the first two iterations.
    pub fn max_ratio(&self) -> Option<f64> {
        self.log.iter().filter_map(|s| s.ratio).reduce(f64::max)
    }
}

/// Fixed-point iteration `v <- -int S(t - s)(0, F(v + z)(s)) ds` on
/// `quad_points` uniform nodes of `[t0, t0 + length]`, from `v = 0`.
/// `z_start` is the free solution at `t0`.
pub fn picard_local_solve(
    z_start: &FieldPair,
    t0: f64,
    length: f64,
    quad_points: usize,
    tol: f64,
    max_iters: usize,
    dealias: Dealias,
) -> Result<PicardOutcome> {
    let zero = FieldPair::zeros(*z_start.grid());
    picard_local_solve_from(&zero, z_start, t0, length, quad_points, tol, max_iters, dealias)
}

/// Picard iteration for `v = S(t - t0) v_start - Duhamel[F(v + z)]` on the
/// same quadrature nodes as [`picard_local_solve`].
#[allow(clippy::too_many_arguments)]
pub fn picard_local_solve_from(
    v_start: &FieldPair,
    z_start: &FieldPair,
    t0: f64,
    length: f64,
    quad_points: usize,
    tol: f64,
    max_iters: usize,
    dealias: Dealias,
) -> Result<PicardOutcome> {
    let grid = *z_start.grid();
    if v_start.grid() != &grid {
        return Err(NlwError::GridMismatch);
    }
    let (q, r) = x_exponents(grid.dim())?;
    if quad_points < 8 {
        return Err(NlwError::InsufficientSamples {
            needed: 8,
            got: quad_points,
        });
    }
    if !(length > 0.0 && tol > 0.0) || max_iters == 0 {
        return Err(NlwError::InvalidArgument("Picard needs positive length, tolerance and iterations".into()));
    }
    let ev = ForceEvaluator::critical(&grid, dealias)?;
    let p1 = ev.nonlinearity().power() - 1.0;
    let h = length / (quad_points - 1) as f64;
    let times: Vec<f64> = (0..quad_points).map(|i| t0 + i as f64 * h).collect();
    let flow = PropagatorCache::new(&grid, h);
    let mut z_pos = Vec::with_capacity(quad_points);
    let mut free = Vec::with_capacity(quad_points);
    let mut z = z_start.clone();
    let mut v = v_start.clone();
    for i in 0..quad_points {
        if i > 0 {
            flow.apply(&mut z)?;
            flow.apply(&mut v)?;
        }
        z_pos.push(z.pos.clone());
        free.push(v.clone());
    }
    let x_norm = |fields: &[SpectralField]| -> Result<f64> {
        let values: Vec<f64> = fields
            .iter()
            .map(|f| lebesgue_norm_values(crate::grid::fft_inverse(f).values(), &grid, r))
            .collect::<Result<_>>()?;
        spacetime_norm_samples(&times, &values, q, (times[0], times[quad_points - 1]))
    };
    let z_norm = x_norm(&z_pos)?;

    let mut states: Vec<FieldPair> = free.clone();
    let mut log: Vec<PicardStep> = Vec::new();
    for iteration in 1..=max_iters {
        let mut forcing = Vec::with_capacity(quad_points);
        for (s, zp) in states.iter().zip(&z_pos) {
            let (f, max) = ev.force(&s.pos.add(zp)?)?;
            if !max.is_finite() || max > 1e12 {
                return Err(NlwError::PicardDiverged {
                    iterations: iteration,
                    last_ratio: log.last().and_then(|s| s.ratio).unwrap_or(f64::INFINITY),
                });
            }
            forcing.push(f);
        }
        let next: Vec<FieldPair> = duhamel_series(&forcing, &times)?
            .iter()
            .zip(&free)
            .map(|(d, f)| f.add(d))
            .collect::<Result<_>>()?;
        let diffs: Vec<SpectralField> = next.iter().zip(&states).map(|(a, b)| a.pos.sub(&b.pos)).collect::<Result<_>>()?;
        let difference = x_norm(&diffs)?;
        let positions: Vec<SpectralField> = next.iter().map(|s| s.pos.clone()).collect();
        let iterate_norm = x_norm(&positions)?;
        let ratio = log.last().filter(|s| s.difference > 0.0).map(|s| difference / s.difference);
        log.push(PicardStep {
            iteration,
            difference,
            ratio,
            iterate_norm,
            predicted_factor: 2.0 * iterate_norm.powf(p1) + z_norm.powf(p1),
        });
        states = next;
        if difference <= tol {
            return Ok(PicardOutcome {
                times,
                states,
                log,
                z_norm,
            });
        }
        if !difference.is_finite() || difference > 1e12 {
            break;
        }
    }
    Err(NlwError::PicardDiverged {
        iterations: log.len(),
        last_ratio: log.last().and_then(|s| s.ratio).unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{fft_forward, RealField};
    use crate::propagator::linear_evolve;
    use approx::assert_relative_eq;

    fn bump(grid: &Grid, amp: f64, width: f64, shift: f64) -> SpectralField {
        let f = RealField::from_fn(*grid, |x| {
            let r2: f64 = x.iter().enumerate().map(|(a, v)| (v - if a == 0 { shift } else { 0.0 }).powi(2)).sum();
            amp * (-r2 / (width * width)).exp()
        });
        fft_forward(f.values(), grid).unwrap().without_nyquist()
    }

    fn data(grid: &Grid, amp: f64) -> FieldPair {
        FieldPair::new(bump(grid, amp, 1.0, 0.0), bump(grid, 0.5 * amp, 0.8, 0.3)).unwrap()
    }

    fn sup_l2_diff(a: &[FieldPair], b: &[FieldPair]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.pos.sub(&y.pos).unwrap().l2())
            .fold(0.0, f64::max)
    }

    #[test]
    fn config_validation() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let mut cfg = SolverConfig::for_dimension(2, 0.1, 1.0);
        assert_eq!(cfg.validate(&g).unwrap(), 10);
        cfg.t_end = 1.05;
        assert!(cfg.validate(&g).is_err());
        cfg.t_end = 3.5;
        cfg.horizon_radius = Some(1.0);
        assert!(cfg.validate(&g).is_err());
        cfg.t_end = 3.0;
        assert!(cfg.validate(&g).is_ok());
        cfg.dt = -1.0;
        assert!(cfg.validate(&g).is_err());
    }

    #[test]
    fn config_round_trips_infinite_exponents() {
        let cfg = SolverConfig::for_dimension(4, 0.01, 1.0);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"inf\""));
        let back: SolverConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn linear_mode_matches_exact_flow() {
        let g = Grid::new(3, 12, 8.0).unwrap();
        let u = data(&g, 1.0);
        let mut cfg = SolverConfig::for_dimension(3, 0.05, 1.0);
        cfg.linear = true;
        cfg.keep_states = true;
        let traj = strang_evolve(&u, &cfg).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let exact = linear_evolve(&u, *t);
            let err = s.sub(&exact).unwrap();
            assert!(err.pos.l2() + err.vel.l2() <= 1e-11 * (u.pos.l2() + u.vel.l2()));
        }
    }

    #[test]
    fn zero_forcing_and_zero_data_stay_zero() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let cfg = SolverConfig::for_dimension(4, 0.05, 0.5);
        let traj = solve_v_equation(&FieldPair::zeros(g), &FieldPair::zeros(g), &cfg).unwrap();
        assert_eq!(traj.final_state, FieldPair::zeros(g));
        assert!(traj.energy.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn zero_forcing_reduces_to_unforced_evolution() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let u = data(&g, 0.8);
        let mut cfg = SolverConfig::for_dimension(4, 0.02, 0.4);
        cfg.keep_states = true;
        let a = strang_evolve(&u, &cfg).unwrap();
        let b = solve_v_equation(&FieldPair::zeros(g), &u, &cfg).unwrap();
        assert!(sup_l2_diff(&a.states, &b.states) < 1e-13);
        assert_eq!(a.energy.len(), b.energy.len());
    }

    #[test]
    fn forced_and_direct_routes_agree() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let ev = ForceEvaluator::critical(&g, Dealias::TwoThirds).unwrap();
        let z0 = ev.project_pair(&data(&g, 0.6));
        let mut cfg = SolverConfig::for_dimension(4, 0.01, 0.5);
        cfg.keep_states = true;
        let v = solve_v_equation(&z0, &FieldPair::zeros(g), &cfg).unwrap();
        let u = strang_evolve(&z0, &cfg).unwrap();
        let sum: Vec<FieldPair> = v
            .times
            .iter()
            .zip(&v.states)
            .map(|(t, s)| linear_evolve(&z0, *t).add(s).unwrap())
            .collect();
        let diff = sup_l2_diff(&sum, &u.states);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn energy_is_nearly_conserved() {
        let g = Grid::new(3, 16, 8.0).unwrap();
        let u = data(&g, 1.0);
        let drift = |dt: f64| {
            let cfg = SolverConfig::for_dimension(3, dt, 1.0);
            strang_evolve(&u, &cfg).unwrap().relative_energy_drift()
        };
        let (a, b) = (drift(0.02), drift(0.01));
        assert!(b < 1e-3);
        assert!(a / b > 3.0 && a / b < 5.0, "ratio {}", a / b);
    }

    #[test]
    fn padded_energy_is_nearly_conserved() {
        let g = Grid::new(5, 8, 8.0).unwrap();
        let u = data(&g, 1.0);
        let cfg = SolverConfig::for_dimension(5, 0.02, 0.4);
        assert_eq!(cfg.dealias, Dealias::Padded);
        let traj = strang_evolve(&u, &cfg).unwrap();
        assert!(traj.relative_energy_drift() < 1e-3, "{}", traj.relative_energy_drift());
    }

    #[test]
    fn blowup_guard_trips() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let u = data(&g, 1.0);
        let mut cfg = SolverConfig::for_dimension(4, 0.05, 0.5);
        cfg.blowup_threshold = 1e-3;
        assert!(matches!(strang_evolve(&u, &cfg), Err(NlwError::Blowup { .. })));
    }

    #[test]
    fn picard_with_zero_forcing_converges_immediately() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let out = picard_local_solve(&FieldPair::zeros(g), 0.0, 0.05, 9, 1e-12, 10, Dealias::TwoThirds).unwrap();
        assert_eq!(out.iterations(), 1);
        assert!(out.states.iter().all(|s| s.pos.max_abs_coeff() == 0.0));
    }

    #[test]
    fn picard_matches_splitting_on_matching_nodes() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let z0 = data(&g, 1.0);
        let t_len = 0.05;
        let nodes = 11;
        let out = picard_local_solve(&z0, 0.0, t_len, nodes, 1e-13, 40, Dealias::TwoThirds).unwrap();
        let mut cfg = SolverConfig::for_dimension(4, t_len / (nodes - 1) as f64, t_len);
        cfg.keep_states = true;
        let v = solve_v_equation(&z0, &FieldPair::zeros(g), &cfg).unwrap();
        let diff = sup_l2_diff(&out.states, &v.states);
        assert!(diff < 1e-11, "{diff}");
        for (a, b) in out.times.iter().zip(&v.times) {
            assert_relative_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn picard_from_nonzero_start_matches_splitting() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let ev = ForceEvaluator::critical(&g, Dealias::TwoThirds).unwrap();
        let z0 = ev.project_pair(&data(&g, 1.0));
        let v0 = ev.project_pair(&data(&g, 0.5).scaled(-1.0));
        let t_len = 0.05;
        let nodes = 11;
        let out = picard_local_solve_from(&v0, &z0, 0.0, t_len, nodes, 1e-13, 40, Dealias::TwoThirds).unwrap();
        let mut cfg = SolverConfig::for_dimension(4, t_len / (nodes - 1) as f64, t_len);
        cfg.keep_states = true;
        let v = solve_v_equation(&z0, &v0, &cfg).unwrap();
        let diff = sup_l2_diff(&out.states, &v.states);
        assert!(diff < 1e-11, "{diff}");
    }

    #[test]
    fn picard_contracts_faster_on_shorter_intervals() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let z0 = data(&g, 3.0);
        let long = picard_local_solve(&z0, 0.0, 0.2, 17, 1e-12, 60, Dealias::TwoThirds).unwrap();
        let short = picard_local_solve(&z0, 0.0, 0.1, 17, 1e-12, 60, Dealias::TwoThirds).unwrap();
        assert!(short.max_ratio().unwrap() <= long.max_ratio().unwrap());
    }

    #[test]
    fn picard_reports_divergence() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let z0 = data(&g, 40.0);
        let r = picard_local_solve(&z0, 0.0, 1.0, 9, 1e-12, 8, Dealias::TwoThirds);
        assert!(matches!(r, Err(NlwError::PicardDiverged { .. })), "{r:?}");
    }
}
