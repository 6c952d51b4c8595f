//! Wiener-decomposition randomization.
//!
//! Frequency space is tiled by unit cubes centred at integer points `m`. A
//! cutoff family assigns each lattice frequency a weight `psi(xi - m)` for
//! every cube; the weights sum to one. A random pair multiplies each cube's
//! piece of the data by its own coefficient `g_{m,j}`, with `g_{-m,j}` the
//! complex conjugate of `g_{m,j}` so the result stays real.
//!
//! Both cutoff kinds factor over axes, so a lattice point touches at most two
//! cubes per axis (smooth) or exactly one (sharp).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NlwError, Result};
use crate::grid::{japanese_bracket, lebesgue_norm_values, FieldPair, Grid, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffKind {
    Smooth,
    Sharp,
}

/// `exp(-1/t)` glue, zero for `t <= 0`.
fn glue(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// One-dimensional C-infinity plateau: 1 on `[-1/2, 1/2]`, 0 outside
/// `(-1, 1)`, and `h(1-|x|) / (h(1-|x|) + h(|x|-1/2))` in between.
pub fn plateau(x: f64) -> f64 {
    let a = x.abs();
    if a <= 0.5 {
        1.0
    } else if a >= 1.0 {
        0.0
    } else {
        let up = glue(1.0 - a);
        up / (up + glue(a - 0.5))
    }
}

/// Normalized one-dimensional cutoff `plateau(x) / sum_j plateau(x - j)`.
pub fn smooth_cutoff_1d(x: f64) -> f64 {
    let base = x.floor() as i64;
    let total: f64 = (base - 1..=base + 2).map(|j| plateau(x - j as f64)).sum();
    plateau(x) / total
}

/// Nearest integer with ties broken toward zero, so that the sharp cube
/// assignment is odd: `cube(-x) == -cube(x)`.
pub fn sharp_cube(x: f64) -> i64 {
    let a = x.abs();
    let whole = a.floor();
    let mag = if a - whole > 0.5 + 1e-12 { whole + 1.0 } else { whole };
    (x.signum() * mag) as i64
}

/// Index-set class of a cube: `Z^d = I u (-I) u {0}` where `I` holds the
/// points whose last nonzero coordinate is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexClass {
    Zero,
    Positive,
    Negative,
}

pub fn index_class(m: &[i64]) -> IndexClass {
    match m.iter().rev().find(|&&c| c != 0) {
        None => IndexClass::Zero,
        Some(&c) if c > 0 => IndexClass::Positive,
        Some(_) => IndexClass::Negative,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutoffFamily {
    kind: CutoffKind,
    grid: Grid,
    radius: i64,
    /// For each FFT-order axis index: the cubes `m_a` with nonzero weight.
    axis_weights: Vec<Vec<(i64, f64)>>,
}

pub fn build_cutoff(kind: CutoffKind, grid: &Grid) -> CutoffFamily {
    let mut axis_weights = Vec::with_capacity(grid.n());
    let mut radius = 0i64;
    for i in 0..grid.n() {
        if grid.is_nyquist_axis(i) {
            axis_weights.push(Vec::new());
            continue;
        }
        let xi = grid.frequency(grid.wavenumber(i));
        let w: Vec<(i64, f64)> = match kind {
            CutoffKind::Sharp => vec![(sharp_cube(xi), 1.0)],
            CutoffKind::Smooth => {
                let base = xi.floor() as i64;
                (base - 1..=base + 2)
                    .map(|m| (m, smooth_cutoff_1d(xi - m as f64)))
                    .filter(|&(_, v)| v > 0.0)
                    .collect()
            }
        };
        for &(m, _) in &w {
            radius = radius.max(m.abs());
        }
        axis_weights.push(w);
    }
    CutoffFamily {
        kind,
        grid: *grid,
        radius,
        axis_weights,
    }
}

impl CutoffFamily {
    pub fn kind(&self) -> CutoffKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Cube coordinates range over `[-radius, radius]` on each axis.
    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn cube_count(&self) -> usize {
        ((2 * self.radius + 1) as usize).pow(self.grid.dim() as u32)
    }

    pub fn cube_index(&self, m: &[i64]) -> Option<usize> {
        let side = 2 * self.radius + 1;
        let mut idx = 0i64;
        for &c in m {
            if c.abs() > self.radius {
                return None;
            }
            idx = idx * side + (c + self.radius);
        }
        Some(idx as usize)
    }

    pub fn cube_at(&self, mut idx: usize) -> Vec<i64> {
        let side = (2 * self.radius + 1) as usize;
        let d = self.grid.dim();
        let mut m = vec![0i64; d];
        for a in (0..d).rev() {
            m[a] = (idx % side) as i64 - self.radius;
            idx /= side;
        }
        m
    }

    pub fn cubes(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.cube_count()).map(|i| self.cube_at(i))
    }

    /// True when the cube's support reaches past the resolved band, so its
    /// projection is cut off by the lattice.
    pub fn is_truncated(&self, m: &[i64]) -> bool {
        let reach = match self.kind {
            CutoffKind::Sharp => 0.5,
            CutoffKind::Smooth => 1.0,
        };
        let xmax = self.grid.max_frequency();
        m.iter().any(|&c| c.abs() as f64 + reach > xmax + 1e-12)
    }

    pub fn truncated_cube_count(&self) -> usize {
        self.cubes().filter(|m| self.is_truncated(m)).count()
    }

    /// Weight of cube `m_a` at axis index `i`.
    fn axis_weight(&self, i: usize, m: i64) -> f64 {
        self.axis_weights[i]
            .iter()
            .find(|(c, _)| *c == m)
            .map_or(0.0, |&(_, w)| w)
    }

    /// `psi(xi_k - m)` at flat lattice index `idx`.
    pub fn weight(&self, idx: usize, m: &[i64]) -> f64 {
        let mut axes = [0usize; 5];
        self.grid.unravel(idx, &mut axes[..self.grid.dim()]);
        m.iter()
            .enumerate()
            .map(|(a, &c)| self.axis_weight(axes[a], c))
            .product()
    }

    /// Sum of all cube weights at flat lattice index `idx`.
    pub fn weight_sum(&self, idx: usize) -> f64 {
        let mut axes = [0usize; 5];
        self.grid.unravel(idx, &mut axes[..self.grid.dim()]);
        axes[..self.grid.dim()]
            .iter()
            .map(|&i| self.axis_weights[i].iter().map(|(_, w)| w).sum::<f64>())
            .product()
    }

    /// `sum_m coeff(m) psi(xi - m)` at every lattice point, where `coeff`
    /// is indexed by dense cube index.
    pub fn combine(&self, coeff: &[Complex64]) -> Vec<Complex64> {
        let d = self.grid.dim();
        let side = 2 * self.radius + 1;
        let mut axes = [0usize; 5];
        let mut out = vec![Complex64::default(); self.grid.points()];
        for (idx, slot) in out.iter_mut().enumerate() {
            self.grid.unravel(idx, &mut axes[..d]);
            let lists: Vec<&[(i64, f64)]> = axes[..d].iter().map(|&i| &self.axis_weights[i][..]).collect();
            if lists.iter().any(|l| l.is_empty()) {
                continue;
            }
            let mut pos = [0usize; 5];
            let mut acc = Complex64::default();
            'odometer: loop {
                let mut w = 1.0;
                let mut ci = 0i64;
                for a in 0..d {
                    let (m, v) = lists[a][pos[a]];
                    w *= v;
                    ci = ci * side + (m + self.radius);
                }
                acc += coeff[ci as usize] * w;
                for a in (0..d).rev() {
                    pos[a] += 1;
                    if pos[a] < lists[a].len() {
                        continue 'odometer;
                    }
                    pos[a] = 0;
                }
                break;
            }
            *slot = acc;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CubeProjection {
    pub field: SpectralField,
    /// Set when the cube misses the lattice entirely.
    pub outside: bool,
}

/// `psi(D - m) u`.
pub fn cube_project(field: &SpectralField, m: &[i64], cutoff: &CutoffFamily) -> Result<CubeProjection> {
    if field.grid() != cutoff.grid() {
        return Err(NlwError::GridMismatch);
    }
    if m.len() != cutoff.grid().dim() {
        return Err(NlwError::InvalidArgument(format!(
            "cube {m:?} has wrong dimension"
        )));
    }
    let mut out = field.clone();
    let mut any = false;
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        let w = cutoff.weight(idx, m);
        if w != 0.0 {
            any = true;
        }
        *c *= w;
    }
    if !any {
        log::warn!("cube {m:?} lies outside the lattice frequency range");
    }
    Ok(CubeProjection {
        field: out,
        outside: !any,
    })
}

/// `L^p` norm of `|f|` for a field that need not be real.
fn modulus_norm(field: &SpectralField, p: f64) -> Result<f64> {
    let moduli: Vec<f64> = field.to_complex_values().iter().map(|z| z.norm()).collect();
    lebesgue_norm_values(&moduli, field.grid(), p)
}

/// `|psi(D-m) f|_{L^q} / |psi(D-m) f|_{L^p}`.
pub fn bernstein_ratio(field: &SpectralField, m: &[i64], p: f64, q: f64, cutoff: &CutoffFamily) -> Result<f64> {
    if !(p >= 1.0 && q >= p) {
        return Err(NlwError::InvalidExponent(format!(
            "need 1 <= p <= q, got p = {p}, q = {q}"
        )));
    }
    let proj = cube_project(field, m, cutoff)?.field;
    let den = modulus_norm(&proj, p)?;
    if den < 1e-30 {
        return Err(NlwError::UndefinedRatio(den));
    }
    if p == q {
        return Ok(1.0);
    }
    Ok(modulus_norm(&proj, q)? / den)
}

/// Law of the real components of the coefficients `g_{m,j}`.
///
/// Every kind is normalized per cube: complex coefficients split their
/// second moment evenly between real and imaginary parts, and the real
/// coefficient at `m = 0` carries the full second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientDistribution {
    /// `E|g|^2 = variance`.
    Gaussian { variance: f64 },
    /// Components `+-1/sqrt(2)`, `g_0 = +-1`.
    Rademacher,
    /// Components uniform on `[-radius, radius]`; `g_0` on `sqrt(2)` times that.
    Uniform { radius: f64 },
    /// `g = exp(i theta)`, `theta` uniform; `g_0 = +-1`.
    Unimodular,
    /// Deterministic `g = value`; a control, not a randomization.
    Constant { value: f64 },
}

impl CoefficientDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { variance } if !(variance.is_finite() && variance > 0.0) => Err(
                NlwError::Distribution(format!("gaussian variance {variance} must be positive")),
            ),
            Self::Uniform { radius } if !(radius.is_finite() && radius > 0.0) => Err(
                NlwError::Distribution(format!("uniform radius {radius} must be positive")),
            ),
            Self::Constant { value } if !value.is_finite() => {
                Err(NlwError::Distribution(format!("constant {value} is not finite")))
            }
            _ => Ok(()),
        }
    }

    /// Constant `c` with `E exp(gamma X) <= exp(c gamma^2)` for every real
    /// component `X`; `None` for the deterministic control.
    pub fn subgaussian_constant(&self) -> Option<f64> {
        match *self {
            Self::Gaussian { variance } => Some(0.5 * variance),
            Self::Rademacher => Some(0.5),
            Self::Uniform { radius } => Some(radius * radius / 3.0),
            Self::Unimodular => Some(0.5),
            Self::Constant { .. } => None,
        }
    }

    /// `E|g_m|^2`, the same for every cube.
    pub fn second_moment(&self) -> f64 {
        match *self {
            Self::Gaussian { variance } => variance,
            Self::Rademacher | Self::Unimodular => 1.0,
            Self::Uniform { radius } => 2.0 * radius * radius / 3.0,
            Self::Constant { value } => value * value,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        !matches!(self, Self::Constant { value } if *value != 0.0)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Rademacher => "rademacher",
            Self::Uniform { .. } => "uniform",
            Self::Unimodular => "unimodular",
            Self::Constant { .. } => "constant",
        }
    }

    fn sample_real(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Gaussian { variance } => variance.sqrt() * rng.sample::<f64, _>(StandardNormal),
            Self::Rademacher | Self::Unimodular => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Uniform { radius } => {
                let r = radius * std::f64::consts::SQRT_2;
                rng.gen_range(-r..=r)
            }
            Self::Constant { value } => value,
        }
    }

    fn sample_component(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Gaussian { variance } => (0.5 * variance).sqrt() * rng.sample::<f64, _>(StandardNormal),
            Self::Rademacher => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                if rng.gen::<bool>() {
                    a
                } else {
                    -a
                }
            }
            Self::Uniform { radius } => rng.gen_range(-radius..=radius),
            Self::Unimodular | Self::Constant { .. } => unreachable!("sampled jointly"),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream key for one real random variable.
pub fn coefficient_key(seed: u64, index: u64, m: &[i64], j: usize, component: usize) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ index);
    for &c in m {
        h = splitmix(h ^ c as u64);
    }
    h = splitmix(h ^ j as u64);
    splitmix(h ^ component as u64)
}

/// One realization of the coefficient family `{g_{m,j}}`, `j in {0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedDraw {
    pub seed: u64,
    pub index: u64,
    /// `None` for explicitly supplied coefficients.
    pub distribution: Option<CoefficientDistribution>,
    dim: usize,
    radius: i64,
    coeffs: [Vec<Complex64>; 2],
}

impl RandomizedDraw {
    /// Draw every coefficient from keys `(seed, index, m, j, component)`.
    pub fn generate(seed: u64, index: u64, distribution: CoefficientDistribution, cutoff: &CutoffFamily) -> Self {
        let dim = cutoff.grid().dim();
        let radius = cutoff.radius();
        let count = cutoff.cube_count();
        let mut coeffs = [vec![Complex64::default(); count], vec![Complex64::default(); count]];
        for ci in 0..count {
            let m = cutoff.cube_at(ci);
            for (j, arr) in coeffs.iter_mut().enumerate() {
                arr[ci] = draw_coefficient(&distribution, seed, index, &m, j);
            }
        }
        Self {
            seed,
            index,
            distribution: Some(distribution),
            dim,
            radius,
            coeffs,
        }
    }

    /// Build a draw from explicit coefficient arrays (dense cube order).
    pub fn from_coefficients(cutoff: &CutoffFamily, pos: Vec<Complex64>, vel: Vec<Complex64>) -> Result<Self> {
        let count = cutoff.cube_count();
        if pos.len() != count || vel.len() != count {
            return Err(NlwError::ShapeMismatch {
                expected: count,
                actual: pos.len().min(vel.len()),
            });
        }
        let draw = Self {
            seed: 0,
            index: 0,
            distribution: None,
            dim: cutoff.grid().dim(),
            radius: cutoff.radius(),
            coeffs: [pos, vel],
        };
        Ok(draw)
    }

    /// Every coefficient equal to `value`.
    pub fn constant(cutoff: &CutoffFamily, value: f64) -> Self {
        let count = cutoff.cube_count();
        let c = vec![Complex64::new(value, 0.0); count];
        Self {
            seed: 0,
            index: 0,
            distribution: Some(CoefficientDistribution::Constant { value }),
            dim: cutoff.grid().dim(),
            radius: cutoff.radius(),
            coeffs: [c.clone(), c],
        }
    }

    pub fn coefficients(&self, j: usize) -> &[Complex64] {
        &self.coeffs[j]
    }

    fn cube_at(&self, mut idx: usize) -> Vec<i64> {
        let side = (2 * self.radius + 1) as usize;
        let mut m = vec![0i64; self.dim];
        for a in (0..self.dim).rev() {
            m[a] = (idx % side) as i64 - self.radius;
            idx /= side;
        }
        m
    }

    /// Checks `g_{-m,j} == conj(g_{m,j})` and `g_{0,j}` real.
    pub fn check_symmetry(&self) -> Result<()> {
        let count = self.coeffs[0].len();
        for arr in &self.coeffs {
            for ci in 0..count {
                // Dense cube order is symmetric: index of -m is count - 1 - ci.
                let mirror = count - 1 - ci;
                let defect = (arr[mirror] - arr[ci].conj()).norm();
                let scale = arr[ci].norm().max(1.0);
                if !(defect <= 1e-14 * scale) {
                    return Err(NlwError::SymmetryViolation {
                        cube: self.cube_at(ci),
                        defect,
                    });
                }
            }
        }
        Ok(())
    }
}

/// The coefficient `g_{m,j}` of draw `(seed, index)`: real for `m = 0`,
/// conjugate-mirrored for `m` in the negative half.
pub fn draw_coefficient(dist: &CoefficientDistribution, seed: u64, index: u64, m: &[i64], j: usize) -> Complex64 {
    match index_class(m) {
        IndexClass::Zero => {
            let mut rng = ChaCha8Rng::seed_from_u64(coefficient_key(seed, index, m, j, 0));
            Complex64::new(dist.sample_real(&mut rng), 0.0)
        }
        IndexClass::Positive => draw_complex(dist, seed, index, m, j),
        IndexClass::Negative => {
            let neg: Vec<i64> = m.iter().map(|c| -c).collect();
            draw_complex(dist, seed, index, &neg, j).conj()
        }
    }
}

fn draw_complex(dist: &CoefficientDistribution, seed: u64, index: u64, m: &[i64], j: usize) -> Complex64 {
    let mut re_rng = ChaCha8Rng::seed_from_u64(coefficient_key(seed, index, m, j, 0));
    match *dist {
        CoefficientDistribution::Unimodular => {
            let theta = re_rng.gen_range(0.0..2.0 * PI);
            Complex64::from_polar(1.0, theta)
        }
        CoefficientDistribution::Constant { value } => Complex64::new(value, 0.0),
        _ => {
            let mut im_rng = ChaCha8Rng::seed_from_u64(coefficient_key(seed, index, m, j, 1));
            Complex64::new(dist.sample_component(&mut re_rng), dist.sample_component(&mut im_rng))
        }
    }
}

/// `u_j^omega = sum_m g_{m,j} psi(D - m) u_j` for `j = 0, 1`.
pub fn randomize_pair(pair: &FieldPair, cutoff: &CutoffFamily, draw: &RandomizedDraw) -> Result<FieldPair> {
    if pair.grid() != cutoff.grid() {
        return Err(NlwError::GridMismatch);
    }
    if draw.dim != cutoff.grid().dim() || draw.radius != cutoff.radius() {
        return Err(NlwError::InvalidArgument(
            "draw was generated for a different cube family".into(),
        ));
    }
    draw.check_symmetry()?;
    if let Some(dist) = &draw.distribution {
        dist.validate()?;
    }
    let fields = [&pair.pos, &pair.vel];
    let mut out = Vec::with_capacity(2);
    for (j, f) in fields.iter().enumerate() {
        let mult = cutoff.combine(&draw.coeffs[j]);
        let coeffs = f.coeffs().iter().zip(&mult).map(|(c, m)| c * m).collect();
        out.push(SpectralField::new(*f.grid(), coeffs)?);
    }
    let vel = out.pop().expect("two fields");
    let pos = out.pop().expect("two fields");
    FieldPair::new(pos, vel)
}

/// `| <m>^s |psi(D-m) u|_{L^p} |_{l^q_m}`.
pub fn modulation_norm(field: &SpectralField, p: f64, q: f64, s: f64, cutoff: &CutoffFamily) -> Result<f64> {
    if p.is_nan() || p < 1.0 || q.is_nan() || q < 1.0 {
        return Err(NlwError::InvalidExponent(format!(
            "modulation norm needs p, q >= 1, got p = {p}, q = {q}"
        )));
    }
    let mut terms = Vec::with_capacity(cutoff.cube_count());
    for m in cutoff.cubes() {
        let proj = cube_project(field, &m, cutoff)?;
        if proj.outside {
            continue;
        }
        let mnorm = m.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
        let w = japanese_bracket(mnorm).powf(s);
        terms.push(w * modulus_norm(&proj.field, p)?);
    }
    if q.is_infinite() {
        return Ok(terms.iter().fold(0.0f64, |a, &b| a.max(b)));
    }
    Ok(terms.iter().map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q))
}

/// One JSONL line of the draw manifest. Coefficients are re-derived from
/// `(master_seed, index)`, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub master_seed: u64,
    pub index: u64,
    pub distribution: CoefficientDistribution,
    pub cutoff: CutoffKind,
}
