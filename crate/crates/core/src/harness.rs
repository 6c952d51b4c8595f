//! Monte Carlo ensembles over randomized data and the statistical verdicts
//! built on them.
//!
//! Every sample is a pure function of `(master_seed, index)`: samples run on
//! a worker pool, rows are merged by index, and statistics are computed only
//! after the merge, so tables do not depend on the worker count.

use std::collections::HashMap;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    admissible_pair_check, energy_bound_rhs, energy_rate_terms, spacetime_norm_samples, x_exponents, TauEntry,
    TauTable, MIN_SAMPLES,
};
use crate::error::{NlwError, Result};
use crate::grid::{fft_inverse, fft_inverse_two, lebesgue_norm_values, sobolev_norm, FieldPair, Grid, SpectralField};
use crate::io::exponent_key;
use crate::nonlinear::{Dealias, ForceEvaluator, Nonlinearity};
use crate::propagator::linear_evolve;
use crate::randomization::{
    build_cutoff, cube_project, draw_coefficient, index_class, randomize_pair, CoefficientDistribution,
    CutoffFamily, CutoffKind, IndexClass, RandomizedDraw,
};
use crate::solver::{exponent_scalar, picard_local_solve_from, solve_v_equation, strang_evolve, SolverConfig, Trajectory};
use crate::stats::{linear_fit, median, moment_estimate, tail_fit, MomentEstimate, TailFit, DEFAULT_QUANTILES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Record norms of the free evolution `z = S(t) u^omega`.
    #[default]
    LinearOnly,
    /// Solve for `v` with forcing `z` and record energies and bounds.
    FullSolve,
}

/// A space-time norm `|z|_{L^q_t L^r_x(interval)}` to record per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormRequest {
    #[serde(with = "exponent_scalar")]
    pub q: f64,
    #[serde(with = "exponent_scalar")]
    pub r: f64,
    pub interval: [f64; 2],
    /// Regularity `gamma` when the pair is claimed to be admissible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissible: Option<f64>,
}

impl NormRequest {
    pub fn new(q: f64, r: f64, interval: (f64, f64)) -> Self {
        Self {
            q,
            r,
            interval: [interval.0, interval.1],
            admissible: None,
        }
    }

    pub fn tagged(mut self, gamma: f64) -> Self {
        self.admissible = Some(gamma);
        self
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.interval[0], self.interval[1])
    }

    /// Table column, e.g. `z_L3_L6_0_1`.
    pub fn column(&self) -> String {
        format!(
            "z_L{}_L{}_{}_{}",
            exponent_key(self.q),
            exponent_key(self.r),
            self.interval[0],
            self.interval[1]
        )
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let (a, b) = self.interval();
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(NlwError::InvalidArgument(format!("norm interval [{a}, {b}] is empty")));
        }
        if !(self.q >= 1.0 && self.r >= 1.0) {
            return Err(NlwError::InvalidExponent(format!("(q, r) = ({}, {}) needs q, r >= 1", self.q, self.r)));
        }
        if let Some(gamma) = self.admissible {
            if !admissible_pair_check(dim, gamma, self.q, self.r) {
                return Err(NlwError::InvalidArgument(format!(
                    "(q, r) = ({}, {}) is tagged admissible but fails the check for d = {dim}, gamma = {gamma}",
                    self.q, self.r
                )));
            }
        }
        Ok(())
    }
}

/// An ensemble: base data, randomization, per-sample pipeline and recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub base: FieldPair,
    /// Regularity of the data; `hs_norm` is the `H^s x H^{s-1}` norm.
    pub s: f64,
    pub n_samples: usize,
    pub master_seed: u64,
    /// Index of the first sample; batches use disjoint index ranges.
    pub first_index: u64,
    pub distribution: CoefficientDistribution,
    pub cutoff: CutoffKind,
    pub pipeline: Pipeline,
    pub norms: Vec<NormRequest>,
    /// Time samples per interval for linear-only norms.
    pub time_samples: usize,
    /// Required by the full-solve pipeline; its `t_end` is the horizon.
    pub solver: Option<SolverConfig>,
    pub workers: usize,
}

impl EnsembleSpec {
    pub fn new(base: FieldPair, distribution: CoefficientDistribution, cutoff: CutoffKind, n_samples: usize, master_seed: u64) -> Self {
        Self {
            base,
            s: 0.0,
            n_samples,
            master_seed,
            first_index: 0,
            distribution,
            cutoff,
            pipeline: Pipeline::LinearOnly,
            norms: Vec::new(),
            time_samples: 9,
            solver: None,
            workers: 1,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.base.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(NlwError::InsufficientSamples { needed: 1, got: 0 });
        }
        self.distribution.validate()?;
        let dim = self.grid().dim();
        for n in &self.norms {
            n.validate(dim)?;
        }
        match self.pipeline {
            Pipeline::LinearOnly => {
                if self.time_samples < MIN_SAMPLES {
                    return Err(NlwError::InsufficientSamples {
                        needed: MIN_SAMPLES,
                        got: self.time_samples,
                    });
                }
            }
            Pipeline::FullSolve => {
                let cfg = self
                    .solver
                    .as_ref()
                    .ok_or_else(|| NlwError::InvalidConfig("the full-solve pipeline needs a solver block".into()))?;
                cfg.validate(self.grid())?;
                for n in &self.norms {
                    if !cfg.record_exponents.contains(&n.r) {
                        return Err(NlwError::InvalidConfig(format!(
                            "norm L^{} is not among the recorded exponents",
                            exponent_key(n.r)
                        )));
                    }
                    if n.interval[0] < 0.0 || n.interval[1] > cfg.t_end + 1e-12 {
                        return Err(NlwError::InvalidConfig(format!(
                            "norm interval {:?} leaves the solve horizon [0, {}]",
                            n.interval, cfg.t_end
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Column order of [`run_ensemble`] tables.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["hs_norm".to_string()];
        cols.extend(self.norms.iter().map(NormRequest::column));
        if self.pipeline == Pipeline::FullSolve {
            cols.extend(FULL_SOLVE_COLUMNS.iter().map(|c| c.to_string()));
        }
        cols
    }

    /// Randomized data of sample `index`.
    pub fn randomized(&self, cutoff: &CutoffFamily, index: u64) -> Result<FieldPair> {
        let draw = RandomizedDraw::generate(self.master_seed, index, self.distribution, cutoff);
        randomize_pair(&self.base, cutoff, &draw)
    }
}

/// Columns appended by the full-solve pipeline.
pub const FULL_SOLVE_COLUMNS: [&str; 6] = [
    "sup_energy_sqrt",
    "v_x_norm",
    "z_x_norm",
    "energy_bound_rhs",
    "rate_ratio_max",
    "v_x_tail_fraction",
];

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub index: u64,
    pub status: RowStatus,
    /// `NaN` throughout for diverged rows.
    pub values: Vec<f64>,
}

impl SampleRow {
    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

/// Per-sample scalars in index order. CSV layout: `index,status,<columns>`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub columns: Vec<String>,
    pub rows: Vec<SampleRow>,
}

impl SampleTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| NlwError::InvalidArgument(format!("no column {name:?}")))
    }

    /// Values of `name` over the rows that did not diverge.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().filter(|r| r.is_ok()).map(|r| r.values[i]).collect())
    }

    pub fn diverged(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    /// Prepend a constant column, used to stack tables of a sweep.
    pub fn with_leading_column(&self, name: &str, value: f64) -> Self {
        let mut columns = vec![name.to_string()];
        columns.extend(self.columns.iter().cloned());
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut values = vec![value];
                values.extend(&r.values);
                SampleRow {
                    index: r.index,
                    status: r.status.clone(),
                    values,
                }
            })
            .collect();
        Self { columns, rows }
    }

    /// Concatenate tables with identical columns.
    pub fn stack(tables: &[SampleTable]) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| NlwError::InvalidArgument("nothing to stack".into()))?;
        if tables.iter().any(|t| t.columns != first.columns) {
            return Err(NlwError::InvalidArgument("stacked tables have different columns".into()));
        }
        Ok(Self {
            columns: first.columns.clone(),
            rows: tables.iter().flat_map(|t| t.rows.iter().cloned()).collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string(), "status".to_string()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.index.to_string(),
                match &row.status {
                    RowStatus::Ok => "ok".to_string(),
                    RowStatus::Diverged(why) => format!("diverged: {why}"),
                },
            ];
            rec.extend(row.values.iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| NlwError::Format(e.to_string()))
    }
}

fn is_divergence(e: &NlwError) -> bool {
    matches!(e, NlwError::Blowup { .. } | NlwError::PicardDiverged { .. })
}

/// Evaluate `sample(index)` for `n` consecutive indices on a pool of
/// `workers` threads. Divergences become flagged rows; any other error
/// aborts with the index of the first failing sample.
pub fn run_samples<F>(n: usize, first_index: u64, workers: usize, columns: Vec<String>, sample: F) -> Result<SampleTable>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| NlwError::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<(u64, Result<Vec<f64>>)> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|k| {
                let index = first_index + k;
                (index, sample(index))
            })
            .collect()
    });
    let width = columns.len();
    let mut rows = Vec::with_capacity(n);
    for (index, res) in results {
        let row = match res {
            Ok(values) => {
                if values.len() != width {
                    return Err(NlwError::ShapeMismatch {
                        expected: width,
                        actual: values.len(),
                    });
                }
                SampleRow {
                    index,
                    status: RowStatus::Ok,
                    values,
                }
            }
            Err(e) if is_divergence(&e) => SampleRow {
                index,
                status: RowStatus::Diverged(e.to_string()),
                values: vec![f64::NAN; width],
            },
            Err(e) => {
                return Err(NlwError::Sample {
                    index,
                    source: Box::new(e),
                })
            }
        };
        rows.push(row);
    }
    Ok(SampleTable { columns, rows })
}

/// `n` equally spaced times covering `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// `|S(t) pair|_{L^r_x}` at each time, two inverse transforms at a time.
pub fn linear_spatial_norms(pair: &FieldPair, times: &[f64], exponents: &[f64]) -> Result<Vec<Vec<f64>>> {
    let grid = *pair.grid();
    let mut out = vec![Vec::with_capacity(times.len()); exponents.len()];
    let mut push = |values: &[f64]| -> Result<()> {
        for (series, &r) in out.iter_mut().zip(exponents) {
            series.push(lebesgue_norm_values(values, &grid, r)?);
        }
        Ok(())
    };
    for chunk in times.chunks(2) {
        let a = linear_evolve(pair, chunk[0]).pos;
        if let Some(&t) = chunk.get(1) {
            let (ra, rb) = fft_inverse_two(&a, &linear_evolve(pair, t).pos)?;
            push(ra.values())?;
            push(rb.values())?;
        } else {
            push(fft_inverse(&a).values())?;
        }
    }
    Ok(out)
}

/// `|S(t) pair|_{L^q_t L^r_x(interval)}` from `samples` equally spaced times.
pub fn linear_spacetime_norm(pair: &FieldPair, q: f64, r: f64, interval: (f64, f64), samples: usize) -> Result<f64> {
    let times = linspace(interval.0, interval.1, samples);
    let values = linear_spatial_norms(pair, &times, &[r])?;
    spacetime_norm_samples(&times, &values[0], q, interval)
}

fn linear_row(spec: &EnsembleSpec, data: &FieldPair) -> Result<Vec<f64>> {
    let mut row = vec![data.sobolev_pair_norm(spec.s, false)?];
    // Group requests by interval so each time sample is transformed once.
    let mut by_interval: Vec<((f64, f64), Vec<f64>)> = Vec::new();
    for n in &spec.norms {
        let iv = n.interval();
        match by_interval.iter_mut().find(|(i, _)| *i == iv) {
            Some((_, rs)) if rs.contains(&n.r) => {}
            Some((_, rs)) => rs.push(n.r),
            None => by_interval.push((iv, vec![n.r])),
        }
    }
    type IntervalSeries = ((f64, f64), Vec<f64>, Vec<Vec<f64>>);
    let mut series: Vec<IntervalSeries> = Vec::with_capacity(by_interval.len());
    for (iv, rs) in by_interval {
        let times = linspace(iv.0, iv.1, spec.time_samples);
        let values = linear_spatial_norms(data, &times, &rs)?;
        series.push((iv, rs, values));
    }
    for n in &spec.norms {
        let iv = n.interval();
        let (_, rs, values) = series.iter().find(|(i, _, _)| *i == iv).expect("grouped above");
        let k = rs.iter().position(|&r| r == n.r).expect("grouped above");
        let times = linspace(iv.0, iv.1, spec.time_samples);
        row.push(spacetime_norm_samples(&times, &values[k], n.q, iv)?);
    }
    Ok(row)
}

fn or_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(NlwError::UnsupportedDimension(_)) | Err(NlwError::InsufficientSamples { .. }) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den > 0.0 {
        num / den
    } else {
        f64::INFINITY
    }
}

/// `max_i |Delta E^{1/2}| / Delta t` over `(a + b E^{alpha/2})` averaged on
/// each recorded step, with the unit-constant rate terms.
pub fn rate_ratio_max(traj: &Trajectory) -> Result<f64> {
    let mut worst = 0.0f64;
    let root: Vec<f64> = traj.energy.iter().map(|e| e.max(0.0).sqrt()).collect();
    let mut prev = energy_rate_terms(traj, 0)?;
    for i in 1..traj.times.len() {
        let cur = energy_rate_terms(traj, i)?;
        let dt = traj.times[i] - traj.times[i - 1];
        let lhs = (root[i] - root[i - 1]).abs() / dt;
        let side = |(a, b, alpha): (f64, f64, f64), e: f64| a + b * e.powf(alpha);
        let rhs = 0.5 * (side(prev, root[i - 1]) + side(cur, root[i]));
        worst = worst.max(ratio_or_zero(lhs, rhs));
        prev = cur;
    }
    Ok(worst)
}

fn full_row(spec: &EnsembleSpec, data: &FieldPair) -> Result<Vec<f64>> {
    let cfg = spec.solver.as_ref().expect("validated");
    let grid = *data.grid();
    let traj = solve_v_equation(data, &FieldPair::zeros(grid), cfg)?;
    let mut row = vec![data.sobolev_pair_norm(spec.s, false)?];
    for n in &spec.norms {
        row.push(traj.z_spacetime_norm(n.q, n.r, n.interval())?);
    }
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let x = || x_exponents(grid.dim());
    let v_x = or_nan(traj.x_norm())?;
    let z_x = or_nan(x().and_then(|(q, r)| traj.z_spacetime_norm(q, r, (t0, t1))))?;
    let tail = or_nan(x().and_then(|(q, r)| traj.spacetime_norm(q, r, (0.5 * (t0 + t1), t1))))?;
    row.push(traj.max_energy().sqrt());
    row.push(v_x);
    row.push(z_x);
    row.push(or_nan(energy_bound_rhs(&traj, t1 - t0))?);
    row.push(or_nan(rate_ratio_max(&traj))?);
    row.push(if v_x.is_nan() || tail.is_nan() { f64::NAN } else { ratio_or_zero(tail, v_x) });
    Ok(row)
}

/// Run the configured pipeline on every sample.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<SampleTable> {
    spec.validate()?;
    let cutoff = build_cutoff(spec.cutoff, spec.grid());
    run_samples(spec.n_samples, spec.first_index, spec.workers, spec.columns(), |index| {
        let data = spec.randomized(&cutoff, index)?;
        match spec.pipeline {
            Pipeline::LinearOnly => linear_row(spec, &data),
            Pipeline::FullSolve => full_row(spec, &data),
        }
    })
}

/// Machine-readable outcome of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub experiment: String,
    pub parameters: Value,
    pub statistics: Value,
    pub pass: bool,
}

fn ensemble_parameters(spec: &EnsembleSpec) -> Value {
    let g = spec.grid();
    json!({
        "grid": {"dim": g.dim(), "n": g.n(), "side": g.side()},
        "s": spec.s,
        "n_samples": spec.n_samples,
        "master_seed": spec.master_seed,
        "first_index": spec.first_index,
        "distribution": spec.distribution,
        "cutoff": spec.cutoff,
        "pipeline": spec.pipeline,
        "time_samples": spec.time_samples,
        "solver": spec.solver,
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Value::Object(x), Value::Object(y)) = (&mut a, b) {
        x.extend(y);
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    pub quantiles: (f64, f64),
    /// Exponents `gamma` of the thresholds `|I|^gamma (|u0|_{L^2} + |u1|_{H^{-1}})`.
    pub gammas: Vec<f64>,
    pub min_r2: f64,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            quantiles: DEFAULT_QUANTILES,
            gammas: Vec::new(),
            min_r2: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exceedance {
    pub gamma: f64,
    pub threshold: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailExperiment {
    pub table: SampleTable,
    pub column: String,
    pub fit: TailFit,
    pub exceedance: Vec<Exceedance>,
    pub pass: bool,
    pub verdict: Verdict,
}

/// Tail of `|S(t) u^omega|_{L^q_t L^r_x(interval)}` (or of `|u^omega|_{H^s}`
/// with `hs_flag`) over a linear-only ensemble.
pub fn strichartz_tail_experiment(spec: &EnsembleSpec, norm: &NormRequest, hs_flag: bool, opts: &TailOptions) -> Result<TailExperiment> {
    if spec.pipeline != Pipeline::LinearOnly {
        return Err(NlwError::InvalidConfig("the tail experiment uses the linear-only pipeline".into()));
    }
    let mut run = spec.clone();
    run.norms = vec![norm.clone()];
    let table = run_ensemble(&run)?;
    let column = if hs_flag { "hs_norm".to_string() } else { norm.column() };
    let samples = table.column(&column)?;
    let fit = tail_fit(&samples, opts.quantiles)?;
    let (a, b) = norm.interval();
    let base_size = sobolev_norm(&spec.base.pos, 0.0, false)? + sobolev_norm(&spec.base.vel, -1.0, false)?;
    let exceedance: Vec<Exceedance> = if hs_flag {
        Vec::new()
    } else {
        opts.gammas
            .iter()
            .map(|&gamma| {
                let threshold = (b - a).powf(gamma) * base_size;
                let above = samples.iter().filter(|&&x| x > threshold).count();
                Exceedance {
                    gamma,
                    threshold,
                    frequency: above as f64 / samples.len() as f64,
                }
            })
            .collect()
    };
    let pass = fit.is_gaussian(opts.min_r2);
    let verdict = Verdict {
        experiment: "strichartz-mc".into(),
        parameters: merge(
            ensemble_parameters(spec),
            json!({"norm": norm, "hs_flag": hs_flag, "options": opts}),
        ),
        statistics: json!({
            "column": column,
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r2": fit.r2,
            "samples": fit.samples,
            "diverged": table.diverged(),
            "base_l2_plus_h_minus_1": base_size,
            "exceedance": exceedance,
        }),
        pass,
    };
    Ok(TailExperiment {
        table,
        column,
        fit,
        exceedance,
        pass,
        verdict,
    })
}

/// Slope ratio of two tail fits against an expected factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeScaling {
    pub ratio: f64,
    pub expected: f64,
    pub pass: bool,
}

/// `slope(scaled) / slope(reference)` within `expected (1 +- tolerance)`.
pub fn slope_scaling(reference: &TailFit, scaled: &TailFit, expected: f64, tolerance: f64) -> SlopeScaling {
    let ratio = scaled.slope / reference.slope;
    SlopeScaling {
        ratio,
        expected,
        pass: (ratio / expected - 1.0).abs() <= tolerance,
    }
}

/// A coefficient `c_m` attached to cube `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeCoefficient {
    pub cube: Vec<i64>,
    pub value: Complex64,
}

/// `c_m = (psi(D - m) u)(x_point)` for every cube with a nonzero piece.
/// Hermitian whenever `u` is real.
pub fn pointwise_cube_coefficients(field: &SpectralField, cutoff: &CutoffFamily, point: usize) -> Result<Vec<CubeCoefficient>> {
    if point >= field.grid().points() {
        return Err(NlwError::InvalidArgument(format!("point index {point} is outside the grid")));
    }
    let mut out = Vec::new();
    for m in cutoff.cubes() {
        let proj = cube_project(field, &m, cutoff)?;
        if proj.outside || proj.field.max_abs_coeff() == 0.0 {
            continue;
        }
        let value = proj.field.to_complex_values()[point];
        out.push(CubeCoefficient { cube: m, value });
    }
    Ok(out)
}

fn check_hermitian(coeffs: &[CubeCoefficient]) -> Result<()> {
    let scale = coeffs.iter().fold(0.0f64, |a, c| a.max(c.value.norm()));
    let lookup: HashMap<&[i64], Complex64> = coeffs.iter().map(|c| (c.cube.as_slice(), c.value)).collect();
    for c in coeffs {
        let neg: Vec<i64> = c.cube.iter().map(|v| -v).collect();
        let mirror = lookup.get(neg.as_slice()).copied().unwrap_or_default();
        let defect = (mirror - c.value.conj()).norm();
        if defect > 1e-12 * scale {
            return Err(NlwError::SymmetryViolation {
                cube: c.cube.clone(),
                defect,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KhintchineReport {
    pub distribution: CoefficientDistribution,
    pub active_cubes: usize,
    pub l2_norm: f64,
    pub moments: Vec<MomentEstimate>,
    /// `R_p = M_p / (sqrt(p) |c|_{l^2})`.
    pub ratios: Vec<f64>,
    /// Slope of `log M_p` on `log p`.
    pub moment_slope: f64,
    /// Slope of `log R_p` on `log p`.
    pub ratio_slope: f64,
    pub pass: bool,
}

impl KhintchineReport {
    pub fn verdict(&self, p_list: &[f64], n_samples: usize, seed: u64) -> Verdict {
        Verdict {
            experiment: "khintchine".into(),
            parameters: json!({
                "distribution": self.distribution,
                "p_list": p_list,
                "n_samples": n_samples,
                "master_seed": seed,
                "active_cubes": self.active_cubes,
            }),
            statistics: json!({
                "l2_norm": self.l2_norm,
                "moments": self.moments,
                "ratios": self.ratios,
                "moment_slope": self.moment_slope,
                "ratio_slope": self.ratio_slope,
            }),
            pass: self.pass,
        }
    }
}

/// Samples of `X = sum_m g_m c_m` for draws `(seed, 0..n)`.
pub fn random_sum_samples(coeffs: &[CubeCoefficient], dist: &CoefficientDistribution, n: usize, seed: u64, workers: usize) -> Result<Vec<f64>> {
    check_hermitian(coeffs)?;
    dist.validate()?;
    // g_{-m} c_{-m} is the conjugate of g_m c_m, so pairs contribute 2 Re.
    let terms: Vec<(&[i64], Complex64, f64)> = coeffs
        .iter()
        .filter_map(|c| match index_class(&c.cube) {
            IndexClass::Zero => Some((c.cube.as_slice(), c.value, 1.0)),
            IndexClass::Positive => Some((c.cube.as_slice(), c.value, 2.0)),
            IndexClass::Negative => None,
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| NlwError::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                terms
                    .iter()
                    .map(|(m, c, w)| w * (draw_coefficient(dist, seed, i, m, 0) * c).re)
                    .sum()
            })
            .collect()
    }))
}

/// Moments of random sums against the `sqrt(p)` growth: passes iff
/// `max_p R_p <= 1.5 R_2` and the slope of `log M_p` on `log p` is at most 0.55.
pub fn khintchine_verdict(
    coeffs: &[CubeCoefficient],
    dist: &CoefficientDistribution,
    p_list: &[f64],
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> Result<KhintchineReport> {
    let i2 = p_list
        .iter()
        .position(|&p| p == 2.0)
        .ok_or_else(|| NlwError::InvalidArgument("p_list must contain 2".into()))?;
    if p_list.len() < 2 {
        return Err(NlwError::InsufficientSamples { needed: 2, got: p_list.len() });
    }
    let samples = random_sum_samples(coeffs, dist, n_samples, seed, workers)?;
    let l2_norm = coeffs.iter().map(|c| c.value.norm_sqr()).sum::<f64>().sqrt();
    if l2_norm == 0.0 {
        return Err(NlwError::DegenerateSamples("all coefficients vanish".into()));
    }
    let moments: Vec<MomentEstimate> = p_list.iter().map(|&p| moment_estimate(&samples, p)).collect::<Result<_>>()?;
    let ratios: Vec<f64> = moments.iter().map(|m| m.value / (m.p.sqrt() * l2_norm)).collect();
    let logp: Vec<f64> = p_list.iter().map(|p| p.ln()).collect();
    let moment_slope = linear_fit(&logp, &moments.iter().map(|m| m.value.ln()).collect::<Vec<_>>())?.slope;
    let ratio_slope = linear_fit(&logp, &ratios.iter().map(|r| r.ln()).collect::<Vec<_>>())?.slope;
    let max_ratio = ratios.iter().fold(0.0f64, |a, &b| a.max(b));
    let pass = max_ratio <= 1.5 * ratios[i2] && moment_slope <= 0.55;
    Ok(KhintchineReport {
        distribution: *dist,
        active_cubes: coeffs.len(),
        l2_norm,
        moments,
        ratios,
        moment_slope,
        ratio_slope,
        pass,
    })
}

/// Two-batch check `stat <= factor * C`, with `C` the batch-1 maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoBatch {
    pub fitted_constant: f64,
    pub batch2_max: f64,
    pub factor: f64,
    pub pass: bool,
}

pub fn two_batch(batch1: &[f64], batch2: &[f64], factor: f64) -> TwoBatch {
    let fitted_constant = batch1.iter().fold(0.0f64, |a, &b| a.max(b));
    let batch2_max = batch2.iter().fold(0.0f64, |a, &b| a.max(b));
    TwoBatch {
        fitted_constant,
        batch2_max,
        factor,
        pass: batch2_max <= factor * fitted_constant,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBoundReport {
    pub table: SampleTable,
    /// `sup_t E(v)^{1/2} / rhs` per surviving row, in index order.
    pub ratios: Vec<f64>,
    pub energy: TwoBatch,
    pub rate: TwoBatch,
    pub diverged: usize,
    pub pass: bool,
    pub verdict: Verdict,
}

/// Largest tolerated fraction of diverged rows.
pub const MAX_DIVERGED_FRACTION: f64 = 0.01;

/// Fit `sup_t E(v)^{1/2} <= C * rhs` on the first half of the samples and
/// check the second half with `2C`; the same for the differential inequality.
pub fn energy_bound_experiment(spec: &EnsembleSpec, horizon: f64) -> Result<EnergyBoundReport> {
    if spec.pipeline != Pipeline::FullSolve {
        return Err(NlwError::InvalidConfig("the energy bound needs the full-solve pipeline".into()));
    }
    let dim = spec.grid().dim();
    if dim != 4 && dim != 5 {
        return Err(NlwError::UnsupportedDimension(dim));
    }
    if spec.n_samples < 2 {
        return Err(NlwError::InsufficientSamples { needed: 2, got: spec.n_samples });
    }
    let mut run = spec.clone();
    if let Some(cfg) = run.solver.as_mut() {
        cfg.t_end = horizon;
    }
    let table = run_ensemble(&run)?;
    let (e, rhs, rate) = (
        table.column_index("sup_energy_sqrt")?,
        table.column_index("energy_bound_rhs")?,
        table.column_index("rate_ratio_max")?,
    );
    let split = spec.first_index + (spec.n_samples / 2) as u64;
    let (mut r1, mut r2, mut q1, mut q2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut ratios = Vec::new();
    for row in table.rows.iter().filter(|r| r.is_ok()) {
        let ratio = ratio_or_zero(row.values[e], row.values[rhs]);
        ratios.push(ratio);
        if row.index < split {
            r1.push(ratio);
            q1.push(row.values[rate]);
        } else {
            r2.push(ratio);
            q2.push(row.values[rate]);
        }
    }
    let energy = two_batch(&r1, &r2, 2.0);
    let rate_check = two_batch(&q1, &q2, 2.0);
    let diverged = table.diverged();
    let diverged_ok = diverged as f64 <= MAX_DIVERGED_FRACTION * spec.n_samples as f64;
    let pass = energy.pass && rate_check.pass && diverged_ok;
    let verdict = Verdict {
        experiment: "energy-bound".into(),
        parameters: merge(ensemble_parameters(&run), json!({"horizon": horizon, "safety_factor": 2.0})),
        statistics: json!({
            "energy": energy,
            "rate": rate_check,
            "batch1_samples": r1.len(),
            "batch2_samples": r2.len(),
            "diverged": diverged,
            "max_diverged_fraction": MAX_DIVERGED_FRACTION,
        }),
        pass,
    };
    Ok(EnergyBoundReport {
        table,
        ratios,
        energy,
        rate: rate_check,
        diverged,
        pass,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallDataLevel {
    pub eps: f64,
    pub median_x: f64,
    pub max_x: f64,
    /// Median of `|v|_{X[T/2,T]} / |v|_{X[0,T]}`.
    pub median_tail_fraction: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallDataReport {
    pub table: SampleTable,
    pub levels: Vec<SmallDataLevel>,
    /// Median reduction between consecutive levels.
    pub ratios: Vec<f64>,
    /// `(eps_k / eps_{k+1})^p` with `p` the critical power.
    pub expected: Vec<f64>,
    pub below_threshold: bool,
    pub pass: bool,
    pub verdict: Verdict,
}

/// `|v|_X` for data `eps u^omega` at decreasing `eps`. Passes iff every
/// median reduction lies within `[0.7, 1.4]` times `(eps_k/eps_{k+1})^p`
/// and every sample at the smallest `eps` has `|v|_X < threshold`.
pub fn smalldata_experiment(spec: &EnsembleSpec, eps_list: &[f64], horizon: f64, threshold: f64) -> Result<SmallDataReport> {
    if spec.pipeline != Pipeline::FullSolve {
        return Err(NlwError::InvalidConfig("the small-data sweep needs the full-solve pipeline".into()));
    }
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e >= 0.0)) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(NlwError::InvalidArgument("eps values must be nonnegative and strictly decreasing".into()));
    }
    let dim = spec.grid().dim();
    x_exponents(dim)?;
    let power = Nonlinearity::critical(dim)?.power();
    let mut tables = Vec::new();
    let mut levels = Vec::new();
    for &eps in eps_list {
        let mut run = spec.clone();
        run.base = spec.base.scaled(eps);
        if let Some(cfg) = run.solver.as_mut() {
            cfg.t_end = horizon;
        }
        let table = run_ensemble(&run)?;
        let x = table.column("v_x_norm")?;
        let tail = table.column("v_x_tail_fraction")?;
        levels.push(SmallDataLevel {
            eps,
            median_x: if x.is_empty() { f64::NAN } else { median(&x)? },
            max_x: x.iter().fold(0.0f64, |a, &b| a.max(b)),
            median_tail_fraction: if tail.is_empty() || tail.iter().any(|v| v.is_nan()) {
                f64::NAN
            } else {
                median(&tail)?
            },
            diverged: table.diverged(),
        });
        tables.push(table.with_leading_column("eps", eps));
    }
    let mut ratios = Vec::new();
    let mut expected = Vec::new();
    let mut in_band = true;
    for w in levels.windows(2) {
        if w[1].median_x > 0.0 {
            let ratio = w[0].median_x / w[1].median_x;
            let target = (w[0].eps / w[1].eps).powf(power);
            in_band &= ratio >= 0.7 * target && ratio <= 1.4 * target;
            ratios.push(ratio);
            expected.push(target);
        }
    }
    let last = levels.last().expect("nonempty");
    let below_threshold = last.diverged == 0 && last.max_x < threshold;
    let diverged: usize = levels.iter().map(|l| l.diverged).sum();
    let pass = in_band && below_threshold && diverged == 0;
    let verdict = Verdict {
        experiment: "smalldata".into(),
        parameters: merge(
            ensemble_parameters(spec),
            json!({"eps": eps_list, "horizon": horizon, "threshold": threshold, "power": power, "band": [0.7, 1.4]}),
        ),
        statistics: json!({
            "levels": levels,
            "ratios": ratios,
            "expected": expected,
            "below_threshold": below_threshold,
            "diverged": diverged,
        }),
        pass,
    };
    Ok(SmallDataReport {
        table: SampleTable::stack(&tables)?,
        levels,
        ratios,
        expected,
        below_threshold,
        pass,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityLevel {
    pub eta: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    pub table: SampleTable,
    pub levels: Vec<ContinuityLevel>,
    pub monotone: bool,
    /// Smallest-eta median over largest-eta median.
    pub end_ratio: f64,
    pub pass: bool,
    pub verdict: Verdict,
}

/// States of the evolution from `data` at the recorded times: exact flow
/// on `time_samples` times for linear-only, splitting otherwise.
fn evolution_states(spec: &EnsembleSpec, data: &FieldPair, horizon: f64) -> Result<Vec<FieldPair>> {
    match spec.pipeline {
        Pipeline::LinearOnly => Ok(linspace(0.0, horizon, spec.time_samples)
            .into_iter()
            .map(|t| linear_evolve(data, t))
            .collect()),
        Pipeline::FullSolve => {
            let mut cfg = spec.solver.clone().expect("validated");
            cfg.t_end = horizon;
            cfg.keep_states = true;
            cfg.record_exponents = vec![2.0];
            Ok(strang_evolve(data, &cfg)?.states)
        }
    }
}

/// Coupled-pair probe: evolve from `randomize(base)` and from
/// `randomize(base + eta rho)` with shared coefficients and record
/// `sup_t |difference|_{H^s x H^{s-1}}`. Passes iff the medians do not
/// increase as `eta` decreases and the smallest-`eta` median is at most a
/// quarter of the largest-`eta` median.
pub fn continuity_probe(spec: &EnsembleSpec, rho: &FieldPair, eta_list: &[f64], horizon: f64) -> Result<ContinuityReport> {
    if spec.cutoff != CutoffKind::Sharp {
        return Err(NlwError::InvalidConfig("the continuity probe needs the sharp cutoff".into()));
    }
    if !spec.distribution.is_symmetric() {
        return Err(NlwError::InvalidConfig("the continuity probe needs a symmetric distribution".into()));
    }
    if rho.grid() != spec.grid() {
        return Err(NlwError::GridMismatch);
    }
    let rho_norm = rho.sobolev_pair_norm(spec.s, false)?;
    if (rho_norm - 1.0).abs() > 1e-9 {
        return Err(NlwError::InvalidArgument(format!("perturbation has norm {rho_norm}, expected 1")));
    }
    if eta_list.is_empty() || eta_list.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
        return Err(NlwError::InvalidArgument("eta values must be finite and nonnegative".into()));
    }
    let mut run = spec.clone();
    if let Some(cfg) = run.solver.as_mut() {
        cfg.t_end = horizon;
    }
    run.validate()?;
    let cutoff = build_cutoff(spec.cutoff, spec.grid());
    let columns: Vec<String> = eta_list.iter().map(|e| format!("sup_diff_eta_{e}")).collect();
    let s = spec.s;
    let table = run_samples(run.n_samples, run.first_index, run.workers, columns, |index| {
        let draw = RandomizedDraw::generate(run.master_seed, index, run.distribution, &cutoff);
        let data = randomize_pair(&run.base, &cutoff, &draw)?;
        let reference = evolution_states(&run, &data, horizon)?;
        eta_list
            .iter()
            .map(|&eta| {
                let perturbed = randomize_pair(&run.base.add(&rho.scaled(eta))?, &cutoff, &draw)?;
                let states = evolution_states(&run, &perturbed, horizon)?;
                let mut sup = 0.0f64;
                for (a, b) in states.iter().zip(&reference) {
                    sup = sup.max(a.sub(b)?.sobolev_pair_norm(s, false)?);
                }
                Ok(sup)
            })
            .collect()
    })?;
    let mut levels = Vec::with_capacity(eta_list.len());
    for (k, &eta) in eta_list.iter().enumerate() {
        let col = table.column(&table.columns[k])?;
        levels.push(ContinuityLevel {
            eta,
            median: if col.is_empty() { f64::NAN } else { median(&col)? },
            max: col.iter().fold(0.0f64, |a, &b| a.max(b)),
        });
    }
    let mut by_eta = levels.clone();
    by_eta.sort_by(|a, b| b.eta.total_cmp(&a.eta));
    let top = by_eta[0].median;
    let monotone = by_eta.windows(2).all(|w| w[1].median <= w[0].median + 1e-12 * top.abs());
    let end_ratio = ratio_or_zero(by_eta[by_eta.len() - 1].median, top);
    let diverged = table.diverged();
    let pass = monotone && end_ratio <= 0.25 && diverged == 0;
    let verdict = Verdict {
        experiment: "continuity".into(),
        parameters: merge(
            ensemble_parameters(&run),
            json!({
                "eta": eta_list,
                "horizon": horizon,
                "coupling": "shared coefficients across a deterministic eta-perturbation of the base profile",
            }),
        ),
        statistics: json!({
            "levels": levels,
            "monotone": monotone,
            "end_ratio": end_ratio,
            "diverged": diverged,
        }),
        pass,
    };
    Ok(ContinuityReport {
        table,
        levels,
        monotone,
        end_ratio,
        pass,
        verdict,
    })
}

/// Picard settings for step calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSettings {
    pub quad_points: usize,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub dealias: Dealias,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauAttempt {
    pub energy_scale: f64,
    pub forcing_scale: f64,
    pub energy_level: f64,
    pub forcing: f64,
    /// Largest candidate step at which Picard converged.
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauCalibration {
    pub table: TauTable,
    pub attempts: Vec<TauAttempt>,
    pub pass: bool,
    pub verdict: Verdict,
}

/// Fill a [`TauTable`]: for each `(a, k)` scaling of the `v` and `z` data,
/// the largest step in `steps` at which Picard from `a v_base` with forcing
/// `S(t)(k z_base)` converges. The energy level is `E(a v_base)` and the
/// forcing size is the X-norm of the forcing over the largest step.
pub fn calibrate_tau(
    v_base: &FieldPair,
    z_base: &FieldPair,
    energy_scales: &[f64],
    forcing_scales: &[f64],
    steps: &[f64],
    picard: &PicardSettings,
) -> Result<TauCalibration> {
    let grid = *v_base.grid();
    if z_base.grid() != &grid {
        return Err(NlwError::GridMismatch);
    }
    if steps.is_empty() || steps.iter().any(|s| !(*s > 0.0)) {
        return Err(NlwError::InvalidArgument("candidate steps must be positive".into()));
    }
    let (q, r) = x_exponents(grid.dim())?;
    let ev = ForceEvaluator::critical(&grid, picard.dealias)?;
    let mut candidates = steps.to_vec();
    candidates.sort_by(|a, b| b.total_cmp(a));
    let longest = candidates[0];
    let mut attempts = Vec::new();
    let mut entries = Vec::new();
    for &a in energy_scales {
        let v0 = ev.project_pair(&v_base.scaled(a));
        let energy_level = ev.energy(&v0)?;
        for &k in forcing_scales {
            let z0 = ev.project_pair(&z_base.scaled(k));
            let forcing = linear_spacetime_norm(&z0, q, r, (0.0, longest), picard.quad_points.max(MIN_SAMPLES))?;
            let mut tau = None;
            for &step in &candidates {
                match picard_local_solve_from(&v0, &z0, 0.0, step, picard.quad_points, picard.tol, picard.max_iters, picard.dealias) {
                    Ok(_) => {
                        tau = Some(step);
                        break;
                    }
                    Err(NlwError::PicardDiverged { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            if let Some(tau) = tau {
                entries.push(TauEntry {
                    energy_level,
                    forcing,
                    tau,
                });
            }
            attempts.push(TauAttempt {
                energy_scale: a,
                forcing_scale: k,
                energy_level,
                forcing,
                tau,
            });
        }
    }
    let pass = !attempts.is_empty() && attempts.iter().all(|a| a.tau.is_some());
    let table = TauTable {
        dim: grid.dim(),
        entries,
    };
    let verdict = Verdict {
        experiment: "calibrate-tau".into(),
        parameters: json!({
            "grid": {"dim": grid.dim(), "n": grid.n(), "side": grid.side()},
            "energy_scales": energy_scales,
            "forcing_scales": forcing_scales,
            "steps": steps,
            "picard": picard,
        }),
        statistics: json!({"attempts": attempts, "table": table}),
        pass,
    };
    Ok(TauCalibration {
        table,
        attempts,
        pass,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{fft_forward, RealField};
    use crate::stats::bootstrap_se;
    use approx::assert_relative_eq;

    fn bump(grid: &Grid, amp: f64, width: f64, shift: f64) -> SpectralField {
        let f = RealField::from_fn(*grid, |x| {
            let r2: f64 = x
                .iter()
                .enumerate()
                .map(|(a, v)| (v - if a == 0 { shift } else { 0.0 }).powi(2))
                .sum();
            amp * (-r2 / (width * width)).exp()
        });
        fft_forward(f.values(), grid).unwrap().without_nyquist()
    }

    fn base(grid: &Grid, amp: f64) -> FieldPair {
        FieldPair::new(bump(grid, amp, 0.7, 0.0), bump(grid, 0.5 * amp, 0.6, 0.4)).unwrap()
    }

    fn gaussian() -> CoefficientDistribution {
        CoefficientDistribution::Gaussian { variance: 1.0 }
    }

    fn linear_spec(grid: &Grid, n: usize) -> EnsembleSpec {
        let mut spec = EnsembleSpec::new(base(grid, 1.0), gaussian(), CutoffKind::Smooth, n, 17);
        spec.norms = vec![NormRequest::new(4.0, 4.0, (0.0, 1.0)), NormRequest::new(f64::INFINITY, f64::INFINITY, (0.0, 1.0))];
        spec
    }

    #[test]
    fn unimodular_sharp_sample_keeps_base_norm() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let mut spec = linear_spec(&g, 1);
        spec.distribution = CoefficientDistribution::Unimodular;
        spec.cutoff = CutoffKind::Sharp;
        spec.s = 0.5;
        let table = run_ensemble(&spec).unwrap();
        assert_eq!(table.rows.len(), 1);
        let base_norm = spec.base.sobolev_pair_norm(0.5, false).unwrap();
        assert_relative_eq!(table.column("hs_norm").unwrap()[0], base_norm, max_relative = 1e-12);
    }

    #[test]
    fn tables_do_not_depend_on_workers() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let mut spec = linear_spec(&g, 12);
        let one = run_ensemble(&spec).unwrap();
        spec.workers = 3;
        let three = run_ensemble(&spec).unwrap();
        assert_eq!(one.to_csv_string().unwrap(), three.to_csv_string().unwrap());
        assert_eq!(run_ensemble(&spec).unwrap(), three);
    }

    #[test]
    fn csv_layout() {
        let g = Grid::new(2, 8, 8.0).unwrap();
        let table = run_ensemble(&linear_spec(&g, 3)).unwrap();
        let text = table.to_csv_string().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "index,status,hs_norm,z_L4_L4_0_1,z_Linf_Linf_0_1");
        assert!(lines.next().unwrap().starts_with("0,ok,"));
        let flagged = SampleTable {
            columns: vec!["x".into()],
            rows: vec![SampleRow {
                index: 4,
                status: RowStatus::Diverged("blowup, t = 1".into()),
                values: vec![f64::NAN],
            }],
        };
        assert_eq!(flagged.to_csv_string().unwrap(), "index,status,x\n4,\"diverged: blowup, t = 1\",NaN\n");
        assert_eq!(flagged.column("x").unwrap(), Vec::<f64>::new());
        assert_eq!(flagged.diverged(), 1);
    }

    #[test]
    fn half_medians_within_bootstrap_error() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let table = run_ensemble(&linear_spec(&g, 200)).unwrap();
        let col = table.column("z_L4_L4_0_1").unwrap();
        let full = median(&col).unwrap();
        let se = bootstrap_se(&col, 200, 3, |s| median(s).unwrap()).unwrap();
        for half in col.chunks(100) {
            let m = median(half).unwrap();
            assert!((m - full).abs() <= 3.0 * se, "half {m} full {full} se {se}");
        }
    }

    #[test]
    fn divergence_is_flagged_and_other_errors_carry_the_index() {
        let table = run_samples(4, 10, 2, vec!["a".into()], |i| {
            if i == 12 {
                Err(NlwError::Blowup {
                    last_good_time: 0.5,
                    reason: "test".into(),
                })
            } else {
                Ok(vec![i as f64])
            }
        })
        .unwrap();
        assert_eq!(table.rows.iter().map(|r| r.index).collect::<Vec<_>>(), vec![10, 11, 12, 13]);
        assert_eq!(table.diverged(), 1);
        assert_eq!(table.column("a").unwrap(), vec![10.0, 11.0, 13.0]);
        let err = run_samples(3, 0, 1, vec!["a".into()], |i| {
            if i == 1 {
                Err(NlwError::InvalidArgument("bad".into()))
            } else {
                Ok(vec![0.0])
            }
        })
        .unwrap_err();
        assert!(matches!(err, NlwError::Sample { index: 1, .. }));
    }

    #[test]
    fn tagged_pairs_are_checked() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let mut spec = linear_spec(&g, 2);
        spec.norms = vec![NormRequest::new(3.0, 7.0, (0.0, 1.0)).tagged(0.5)];
        assert!(matches!(run_ensemble(&spec), Err(NlwError::InvalidArgument(_))));
        spec.norms = vec![NormRequest::new(3.0, 6.0, (0.0, 1.0)).tagged(1.0)];
        assert!(spec.validate().is_ok());
        spec.norms = vec![NormRequest::new(3.0, 7.0, (0.0, 1.0))];
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn linear_norms_match_direct_evaluation() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let u = base(&g, 1.0);
        let times = linspace(0.0, 1.0, 9);
        let paired = linear_spatial_norms(&u, &times, &[6.0]).unwrap();
        for (t, v) in times.iter().zip(&paired[0]) {
            let direct = lebesgue_norm_values(fft_inverse(&linear_evolve(&u, *t).pos).values(), &g, 6.0).unwrap();
            assert_relative_eq!(*v, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn constant_coefficients_abort_the_tail_experiment() {
        let g = Grid::new(2, 8, 8.0).unwrap();
        let mut spec = linear_spec(&g, 1000);
        spec.distribution = CoefficientDistribution::Constant { value: 1.0 };
        let r = strichartz_tail_experiment(&spec, &NormRequest::new(4.0, 4.0, (0.0, 1.0)), false, &TailOptions::default());
        assert!(matches!(r, Err(NlwError::DegenerateSamples(_))), "{r:?}");
    }

    #[test]
    fn tail_experiment_on_a_small_grid() {
        let g = Grid::new(2, 8, 8.0).unwrap();
        let spec = linear_spec(&g, 2000);
        let opts = TailOptions {
            gammas: vec![0.0, 0.5],
            ..TailOptions::default()
        };
        let out = strichartz_tail_experiment(&spec, &NormRequest::new(4.0, 4.0, (0.0, 1.0)), false, &opts).unwrap();
        assert!(out.fit.slope < 0.0);
        assert_eq!(out.exceedance.len(), 2);
        assert!(out.exceedance.iter().all(|e| (0.0..=1.0).contains(&e.frequency)));
        assert_eq!(out.verdict.experiment, "strichartz-mc");
        let hs = strichartz_tail_experiment(&spec, &NormRequest::new(4.0, 4.0, (0.0, 1.0)), true, &opts).unwrap();
        assert_eq!(hs.column, "hs_norm");
        assert!(hs.exceedance.is_empty());
    }

    fn single(value: f64) -> Vec<CubeCoefficient> {
        vec![CubeCoefficient {
            cube: vec![0, 0],
            value: Complex64::new(value, 0.0),
        }]
    }

    #[test]
    fn single_rademacher_coefficient() {
        let p = [2.0, 4.0, 8.0, 16.0];
        let rep = khintchine_verdict(&single(-1.5), &CoefficientDistribution::Rademacher, &p, 2000, 1, 1).unwrap();
        for (m, r) in rep.moments.iter().zip(&rep.ratios) {
            assert_relative_eq!(m.value, 1.5, epsilon = 1e-12);
            assert_relative_eq!(*r, 1.0 / m.p.sqrt(), epsilon = 1e-12);
        }
        assert_relative_eq!(rep.moment_slope, 0.0, epsilon = 1e-12);
        assert_relative_eq!(rep.ratio_slope, -0.5, epsilon = 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn khintchine_rejects_non_hermitian_input() {
        let coeffs = vec![
            CubeCoefficient {
                cube: vec![1, 0],
                value: Complex64::new(1.0, 1.0),
            },
            CubeCoefficient {
                cube: vec![-1, 0],
                value: Complex64::new(1.0, 1.0),
            },
        ];
        let r = khintchine_verdict(&coeffs, &gaussian(), &[2.0, 4.0], 100, 0, 1);
        assert!(matches!(r, Err(NlwError::SymmetryViolation { .. })));
    }

    #[test]
    fn pointwise_coefficients_are_hermitian_and_sum_to_the_value() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let u = bump(&g, 1.0, 0.3, 0.2);
        let cutoff = build_cutoff(CutoffKind::Smooth, &g);
        let point = g.points() / 2 + 3;
        let coeffs = pointwise_cube_coefficients(&u, &cutoff, point).unwrap();
        check_hermitian(&coeffs).unwrap();
        let total: Complex64 = coeffs.iter().map(|c| c.value).sum();
        assert_relative_eq!(total.re, fft_inverse(&u).values()[point], epsilon = 1e-12);
        assert!(total.im.abs() < 1e-12);
    }

    #[test]
    fn gaussian_sums_match_closed_form_moments() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let u = bump(&g, 1.0, 0.3, 0.2);
        let cutoff = build_cutoff(CutoffKind::Sharp, &g);
        let coeffs = pointwise_cube_coefficients(&u, &cutoff, 5).unwrap();
        let rep = khintchine_verdict(&coeffs, &gaussian(), &[2.0, 4.0], 20_000, 5, 2).unwrap();
        // A real Gaussian sum with variance |c|^2 has M_4 = 3^{1/4} |c|.
        assert!((rep.moments[0].value / rep.l2_norm - 1.0).abs() < 0.03);
        assert!((rep.moments[1].value / (3f64.powf(0.25) * rep.l2_norm) - 1.0).abs() < 0.03);
        assert!(rep.pass);
    }

    fn solve_spec(grid: &Grid, amp: f64, n: usize) -> EnsembleSpec {
        let mut spec = EnsembleSpec::new(base(grid, amp), gaussian(), CutoffKind::Smooth, n, 5);
        spec.pipeline = Pipeline::FullSolve;
        spec.solver = Some(SolverConfig::for_dimension(grid.dim(), 0.05, 0.5));
        spec
    }

    #[test]
    fn zero_data_energy_bound_is_zero_on_both_sides() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let spec = solve_spec(&g, 0.0, 4);
        let rep = energy_bound_experiment(&spec, 0.5).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.table.column("sup_energy_sqrt").unwrap(), vec![0.0; 4]);
        assert_eq!(rep.table.column("energy_bound_rhs").unwrap(), vec![0.0; 4]);
        assert!(rep.ratios.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn halving_data_lowers_every_energy_sup() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let full = run_ensemble(&solve_spec(&g, 1.0, 4)).unwrap();
        let half = run_ensemble(&solve_spec(&g, 0.5, 4)).unwrap();
        let a = full.column("sup_energy_sqrt").unwrap();
        let b = half.column("sup_energy_sqrt").unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| y < x && *y > 0.0), "{a:?} {b:?}");
    }

    #[test]
    fn smalldata_rejects_bad_sweeps_and_handles_zero() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let spec = solve_spec(&g, 1.0, 2);
        assert!(smalldata_experiment(&spec, &[0.1, 0.2], 0.5, 1.0).is_err());
        let rep = smalldata_experiment(&spec, &[0.0], 0.5, 1.0).unwrap();
        assert_eq!(rep.levels[0].median_x, 0.0);
        assert!(rep.below_threshold);
    }

    #[test]
    fn smalldata_scaling_on_a_coarse_grid() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let spec = solve_spec(&g, 1.0, 4);
        let rep = smalldata_experiment(&spec, &[0.2, 0.1], 0.5, 1.0).unwrap();
        assert!((rep.ratios[0] / 8.0 - 1.0).abs() < 0.1, "{:?}", rep.ratios);
        assert!(rep.pass);
    }

    fn unit_rho(grid: &Grid, s: f64) -> FieldPair {
        let r = FieldPair::new(bump(grid, 1.0, 0.5, -0.3), SpectralField::zeros(*grid)).unwrap();
        let n = r.sobolev_pair_norm(s, false).unwrap();
        r.scaled(1.0 / n)
    }

    #[test]
    fn linear_continuity_is_exactly_proportional() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let mut spec = linear_spec(&g, 6);
        spec.cutoff = CutoffKind::Sharp;
        spec.s = 0.75;
        let rho = unit_rho(&g, 0.75);
        let eta = [0.1, 0.05, 0.025, 0.0125, 0.0];
        let rep = continuity_probe(&spec, &rho, &eta, 1.0).unwrap();
        for row in &rep.table.rows {
            for k in 1..4 {
                assert_relative_eq!(row.values[k] / row.values[0], eta[k] / eta[0], max_relative = 1e-10);
            }
            assert_eq!(row.values[4], 0.0);
        }
        assert!(rep.monotone && rep.pass);
    }

    #[test]
    fn continuity_preconditions() {
        let g = Grid::new(2, 8, 8.0).unwrap();
        let mut spec = linear_spec(&g, 2);
        let rho = unit_rho(&g, 0.0);
        assert!(continuity_probe(&spec, &rho, &[0.1], 1.0).is_err());
        spec.cutoff = CutoffKind::Sharp;
        assert!(continuity_probe(&spec, &rho.scaled(2.0), &[0.1], 1.0).is_err());
        spec.distribution = CoefficientDistribution::Constant { value: 1.0 };
        assert!(continuity_probe(&spec, &rho, &[0.1], 1.0).is_err());
        spec.distribution = CoefficientDistribution::Rademacher;
        assert!(continuity_probe(&spec, &rho, &[0.1], 1.0).is_ok());
    }

    #[test]
    fn tau_calibration_shrinks_with_size() {
        let g = Grid::new(4, 8, 8.0).unwrap();
        let settings = PicardSettings {
            quad_points: 9,
            tol: 1e-10,
            max_iters: 30,
            dealias: Dealias::TwoThirds,
        };
        let steps = [0.8, 0.4, 0.2, 0.1, 0.05, 0.025];
        let cal = calibrate_tau(&base(&g, 1.0), &base(&g, 1.0), &[1.0, 4.0], &[1.0, 4.0], &steps, &settings).unwrap();
        assert!(cal.pass, "{:?}", cal.attempts);
        let tau = |i: usize| cal.attempts[i].tau.unwrap();
        assert!(tau(3) <= tau(0));
        assert!(tau(1) <= tau(0) && tau(2) <= tau(0));
        assert!(cal.table.lookup(cal.attempts[3].energy_level, cal.attempts[3].forcing).unwrap() <= tau(0));
    }
}
