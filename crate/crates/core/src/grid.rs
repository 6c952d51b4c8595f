//! Periodic box discretization, spectral fields and the norms built on them.
//!
//! The box is `[-L/2, L/2)^d` sampled at `n` points per axis. Frequencies live
//! on the lattice `xi_k = k / L` with `k` in `{-n/2, ..., n/2 - 1}^d`, stored
//! in FFT order. Fourier coefficients use the `exp(2 pi i x . xi)` convention
//! against the orthonormal basis `L^{-d/2} exp(2 pi i k . x / L)`, so that
//! `sum_x |f|^2 dx^d == sum_k |f_hat(k)|^2` holds exactly.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::error::{NlwError, Result};
use crate::fft;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    side: f64,
}

impl Grid {
    /// Hard cap on `n^d`; keeps a single complex field below 4 GiB.
    pub const MAX_POINTS: usize = 1 << 28;

    pub fn new(dim: usize, n: usize, side: f64) -> Result<Self> {
        if !(2..=5).contains(&dim) {
            return Err(NlwError::InvalidGrid(format!("dimension {dim} outside 2..=5")));
        }
        if n < 4 || !n.is_multiple_of(2) {
            return Err(NlwError::InvalidGrid(format!("n = {n} must be even and >= 4")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(NlwError::InvalidGrid(format!("side length {side} must be positive")));
        }
        match n.checked_pow(dim as u32) {
            Some(p) if p <= Self::MAX_POINTS => {}
            _ => {
                return Err(NlwError::InvalidGrid(format!(
                    "{n}^{dim} points exceed the addressable limit"
                )))
            }
        }
        Ok(Self { dim, n, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn dx(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Same box, different resolution.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.side)
    }

    /// Signed wavenumber of FFT-order index `i` along one axis.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// FFT-order index of wavenumber `k`, if it is on the lattice.
    pub fn axis_index(&self, k: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if k < -half || k >= half {
            None
        } else if k >= 0 {
            Some(k as usize)
        } else {
            Some((k + self.n as i64) as usize)
        }
    }

    pub fn frequency(&self, k: i64) -> f64 {
        k as f64 / self.side
    }

    /// Largest resolved frequency per axis once the Nyquist row is dropped.
    pub fn max_frequency(&self) -> f64 {
        self.frequency(self.n as i64 / 2 - 1)
    }

    pub fn is_nyquist_axis(&self, i: usize) -> bool {
        i == self.n / 2
    }

    /// Decompose a flat index into per-axis indices (axis 0 slowest).
    pub fn unravel(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = idx % self.n;
            idx /= self.n;
        }
    }

    pub fn ravel(&self, axes: &[usize]) -> usize {
        axes.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Flat index of the frequency `-k` for the frequency stored at `idx`.
    pub fn mirror_index(&self, idx: usize) -> usize {
        let mut axes = [0usize; 5];
        self.unravel(idx, &mut axes[..self.dim]);
        for a in axes[..self.dim].iter_mut() {
            *a = (self.n - *a) % self.n;
        }
        self.ravel(&axes[..self.dim])
    }

    pub fn touches_nyquist(&self, idx: usize) -> bool {
        let mut axes = [0usize; 5];
        self.unravel(idx, &mut axes[..self.dim]);
        axes[..self.dim].iter().any(|&i| self.is_nyquist_axis(i))
    }

    /// Wavenumber vector of flat index `idx`.
    pub fn wavenumbers(&self, idx: usize, out: &mut [i64]) {
        let mut axes = [0usize; 5];
        self.unravel(idx, &mut axes[..self.dim]);
        for a in 0..self.dim {
            out[a] = self.wavenumber(axes[a]);
        }
    }

    /// `|xi_k|` at every lattice point, in storage order.
    pub fn frequency_norms(&self) -> Vec<f64> {
        let axis_sq: Vec<f64> = (0..self.n)
            .map(|i| self.frequency(self.wavenumber(i)).powi(2))
            .collect();
        let mut out = vec![0.0; self.points()];
        let mut axes = [0usize; 5];
        for (idx, v) in out.iter_mut().enumerate() {
            self.unravel(idx, &mut axes[..self.dim]);
            *v = axes[..self.dim].iter().map(|&i| axis_sq[i]).sum::<f64>().sqrt();
        }
        out
    }

    /// Physical coordinate of sample index `j` along one axis.
    pub fn coordinate(&self, j: usize) -> f64 {
        -0.5 * self.side + j as f64 * self.dx()
    }

    /// Mask keeping `|k_a| <= n / 3` on every axis (two-thirds rule).
    pub fn two_thirds_mask(&self) -> Vec<bool> {
        self.box_mask((self.n / 3) as i64)
    }

    /// Mask keeping `|k_a| <= kmax` on every axis; Nyquist always dropped.
    pub fn box_mask(&self, kmax: i64) -> Vec<bool> {
        let axis_ok: Vec<bool> = (0..self.n)
            .map(|i| !self.is_nyquist_axis(i) && self.wavenumber(i).abs() <= kmax)
            .collect();
        let mut axes = [0usize; 5];
        (0..self.points())
            .map(|idx| {
                self.unravel(idx, &mut axes[..self.dim]);
                axes[..self.dim].iter().all(|&i| axis_ok[i])
            })
            .collect()
    }
}

/// A real field sampled on the grid, row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(NlwError::ShapeMismatch {
                expected: grid.points(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            values: vec![0.0; grid.points()],
            grid,
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            values: vec![c; grid.points()],
            grid,
        }
    }

    /// Sample `f(x)` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut axes = [0usize; 5];
        let mut x = [0.0; 5];
        let d = grid.dim();
        let values = (0..grid.points())
            .map(|idx| {
                grid.unravel(idx, &mut axes[..d]);
                for a in 0..d {
                    x[a] = grid.coordinate(axes[a]);
                }
                f(&x[..d])
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &RealField) -> Result<RealField> {
        if self.grid != other.grid {
            return Err(NlwError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(RealField {
            grid: self.grid,
            values,
        })
    }

    pub fn add(&self, other: &RealField) -> Result<RealField> {
        if self.grid != other.grid {
            return Err(NlwError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(RealField {
            grid: self.grid,
            values,
        })
    }
}

/// Fourier coefficients of a field on the frequency lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.points() {
            return Err(NlwError::ShapeMismatch {
                expected: grid.points(),
                actual: coeffs.len(),
            });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            coeffs: vec![Complex64::default(); grid.points()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Zero every coefficient on a Nyquist row.
    pub fn zero_nyquist(&mut self) {
        let half = self.grid.n() / 2;
        let n = self.grid.n();
        let d = self.grid.dim();
        for a in 0..d {
            let stride = n.pow((d - 1 - a) as u32);
            let block = n * stride;
            for blk in self.coeffs.chunks_mut(block) {
                for c in &mut blk[half * stride..(half + 1) * stride] {
                    *c = Complex64::default();
                }
            }
        }
    }

    pub fn without_nyquist(mut self) -> Self {
        self.zero_nyquist();
        self
    }

    /// Zero coefficients outside `mask`.
    pub fn apply_mask(&mut self, mask: &[bool]) {
        for (c, &keep) in self.coeffs.iter_mut().zip(mask) {
            if !keep {
                *c = Complex64::default();
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        if self.grid != other.grid {
            return Err(NlwError::GridMismatch);
        }
        Ok(Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        if self.grid != other.grid {
            return Err(NlwError::GridMismatch);
        }
        Ok(Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
        })
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) -> Result<()> {
        if self.grid != other.grid {
            return Err(NlwError::GridMismatch);
        }
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += y * a;
        }
        Ok(())
    }

    /// `(sum_k |c_k|^2)^{1/2}`, i.e. the L^2 norm by Plancherel.
    pub fn l2(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()))
    }

    /// Largest `|c(-k) - conj(c(k))|` relative to the largest coefficient.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.max_abs_coeff();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for idx in 0..self.coeffs.len() {
            if self.grid.touches_nyquist(idx) {
                continue;
            }
            let m = self.grid.mirror_index(idx);
            worst = worst.max((self.coeffs[m] - self.coeffs[idx].conj()).norm());
        }
        worst / scale
    }

    /// Complex-valued inverse transform (no realness assumed).
    pub fn to_complex_values(&self) -> Vec<Complex64> {
        fft_inverse_complex(self)
    }

    /// `(max |Im f(x)|, max |f(x)|)` over the grid after inverse transform.
    pub fn imaginary_residue(&self) -> (f64, f64) {
        let vals = self.to_complex_values();
        vals.iter().fold((0.0f64, 0.0f64), |(mi, ma), v| {
            (mi.max(v.im.abs()), ma.max(v.norm()))
        })
    }

    /// Real part of the inverse transform.
    pub fn to_real(&self) -> RealField {
        fft_inverse(self)
    }

    /// Copy onto a finer grid with the same box; new modes are zero.
    pub fn pad_to(&self, target: &Grid) -> Result<SpectralField> {
        self.resample(target)
    }

    /// Restrict to a coarser grid with the same box, dropping modes that do
    /// not fit (and the target's Nyquist row).
    pub fn truncate_to(&self, target: &Grid) -> Result<SpectralField> {
        let mut out = self.resample(target)?;
        out.zero_nyquist();
        Ok(out)
    }

    fn resample(&self, target: &Grid) -> Result<SpectralField> {
        if target.dim() != self.grid.dim() || target.side() != self.grid.side() {
            return Err(NlwError::GridMismatch);
        }
        let d = self.grid.dim();
        let axis_map: Vec<Option<usize>> = (0..self.grid.n())
            .map(|i| {
                if self.grid.is_nyquist_axis(i) {
                    None
                } else {
                    target.axis_index(self.grid.wavenumber(i))
                }
            })
            .collect();
        let mut out = SpectralField::zeros(*target);
        let mut axes = [0usize; 5];
        let mut taxes = [0usize; 5];
        'outer: for (idx, c) in self.coeffs.iter().enumerate() {
            self.grid.unravel(idx, &mut axes[..d]);
            for a in 0..d {
                match axis_map[axes[a]] {
                    Some(t) => taxes[a] = t,
                    None => continue 'outer,
                }
            }
            out.coeffs[target.ravel(&taxes[..d])] = *c;
        }
        Ok(out)
    }
}

/// A state `(u, d_t u)` in spectral form.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub pos: SpectralField,
    pub vel: SpectralField,
}

impl FieldPair {
    pub fn new(pos: SpectralField, vel: SpectralField) -> Result<Self> {
        if pos.grid() != vel.grid() {
            return Err(NlwError::GridMismatch);
        }
        Ok(Self { pos, vel })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            pos: SpectralField::zeros(grid),
            vel: SpectralField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.pos.grid()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            pos: self.pos.scaled(a),
            vel: self.vel.scaled(a),
        }
    }

    pub fn add(&self, other: &FieldPair) -> Result<Self> {
        Ok(Self {
            pos: self.pos.add(&other.pos)?,
            vel: self.vel.add(&other.vel)?,
        })
    }

    pub fn sub(&self, other: &FieldPair) -> Result<Self> {
        Ok(Self {
            pos: self.pos.sub(&other.pos)?,
            vel: self.vel.sub(&other.vel)?,
        })
    }

    /// Product norm `(|u|_{H^s}^2 + |u_t|_{H^{s-1}}^2)^{1/2}`.
    pub fn sobolev_pair_norm(&self, s: f64, homogeneous: bool) -> Result<f64> {
        let a = sobolev_norm(&self.pos, s, homogeneous)?;
        let b = sobolev_norm(&self.vel, s - 1.0, homogeneous)?;
        Ok((a * a + b * b).sqrt())
    }

    pub fn max_hermitian_defect(&self) -> f64 {
        self.pos.hermitian_defect().max(self.vel.hermitian_defect())
    }
}

/// `(-1)^{sum_a i_a}` for every flat index; shifts the sample origin to `-L/2`.
fn parity_signs(grid: &Grid) -> Arc<Vec<f64>> {
    type SignMap = HashMap<(usize, usize), Arc<Vec<f64>>>;
    static CACHE: Lazy<Mutex<SignMap>> =
        Lazy::new(|| Mutex::new(HashMap::new()));
    let mut cache = CACHE.lock().expect("sign cache poisoned");
    cache
        .entry((grid.dim(), grid.n()))
        .or_insert_with(|| {
            let mut signs = vec![1.0];
            for _ in 0..grid.dim() {
                let prev = std::mem::take(&mut signs);
                signs.reserve(prev.len() * grid.n());
                for s in prev {
                    for i in 0..grid.n() {
                        signs.push(if i % 2 == 0 { s } else { -s });
                    }
                }
            }
            Arc::new(signs)
        })
        .clone()
}

/// `dx^d L^{-d/2}`: converts raw DFT sums into coefficients.
fn forward_scale(grid: &Grid) -> f64 {
    grid.cell_volume() * grid.side().powf(-0.5 * grid.dim() as f64)
}

/// Fourier coefficients of a real-space array on `grid`.
///
/// The transform is exact: no Nyquist filtering happens here, so that the
/// round trip and Plancherel hold for arbitrary arrays. Generated fields
/// drop their Nyquist rows explicitly.
pub fn fft_forward(values: &[f64], grid: &Grid) -> Result<SpectralField> {
    if values.len() != grid.points() {
        return Err(NlwError::ShapeMismatch {
            expected: grid.points(),
            actual: values.len(),
        });
    }
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft::forward(&mut buf, grid.dim(), grid.n());
    let scale = forward_scale(grid);
    let signs = parity_signs(grid);
    for (c, s) in buf.iter_mut().zip(signs.iter()) {
        *c *= scale * s;
    }
    SpectralField::new(*grid, buf)
}

fn fft_inverse_complex(field: &SpectralField) -> Vec<Complex64> {
    let grid = field.grid();
    let scale = grid.side().powf(-0.5 * grid.dim() as f64);
    let signs = parity_signs(grid);
    let mut buf: Vec<Complex64> = field
        .coeffs()
        .iter()
        .zip(signs.iter())
        .map(|(c, s)| c * (scale * s))
        .collect();
    fft::inverse(&mut buf, grid.dim(), grid.n());
    buf
}

/// Real-space values of a spectral field (imaginary residue discarded).
pub fn fft_inverse(field: &SpectralField) -> RealField {
    let values = fft_inverse_complex(field).into_iter().map(|c| c.re).collect();
    RealField {
        grid: *field.grid(),
        values,
    }
}

/// Real-space values of two real fields through one complex transform:
/// the inverse of `a + i b` has real part `a` and imaginary part `b`.
pub fn fft_inverse_two(a: &SpectralField, b: &SpectralField) -> Result<(RealField, RealField)> {
    if a.grid() != b.grid() {
        return Err(NlwError::GridMismatch);
    }
    let i = Complex64::new(0.0, 1.0);
    let packed: Vec<Complex64> = a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x + i * y).collect();
    let buf = fft_inverse_complex(&SpectralField::new(*a.grid(), packed)?);
    let (re, im) = buf.into_iter().map(|c| (c.re, c.im)).unzip();
    Ok((
        RealField { grid: *a.grid(), values: re },
        RealField { grid: *a.grid(), values: im },
    ))
}

/// Riemann-sum `L^p` norm; `p = f64::INFINITY` gives the grid maximum.
pub fn lebesgue_norm(field: &RealField, p: f64) -> Result<f64> {
    lebesgue_norm_values(field.values(), field.grid(), p)
}

pub fn lebesgue_norm_values(values: &[f64], grid: &Grid, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(NlwError::InvalidExponent(format!("L^p needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let sum: f64 = if p == p.round() && p <= 16.0 {
        let ip = p as i32;
        values.iter().map(|v| v.abs().powi(ip)).sum()
    } else {
        values.iter().map(|v| v.abs().powf(p)).sum()
    };
    Ok((sum * grid.cell_volume()).powf(1.0 / p))
}

/// `<xi> = (1 + 4 pi^2 |xi|^2)^{1/2}`.
pub fn japanese_bracket(xi_norm: f64) -> f64 {
    (1.0 + 4.0 * PI * PI * xi_norm * xi_norm).sqrt()
}

/// Discrete `H^s` (or `\dot H^s`) norm of a spectral field.
pub fn sobolev_norm(field: &SpectralField, s: f64, homogeneous: bool) -> Result<f64> {
    let grid = field.grid();
    let norms = grid.frequency_norms();
    if homogeneous && s < 0.0 {
        let zero = field.coeffs()[0].norm();
        let total = field.l2();
        if zero > 1e-12 * total {
            return Err(NlwError::NonzeroMean { s, zero_mode: zero });
        }
    }
    let mut sum = 0.0;
    for (c, &xi) in field.coeffs().iter().zip(&norms) {
        let weight = if homogeneous {
            if xi == 0.0 {
                continue;
            }
            (2.0 * PI * xi).powf(2.0 * s)
        } else {
            japanese_bracket(xi).powf(2.0 * s)
        };
        sum += weight * c.norm_sqr();
    }
    Ok(sum.sqrt())
}

/// Multiply every coefficient by `symbol(xi_k)`.
pub fn apply_symbol(field: &SpectralField, symbol: impl Fn(&[f64]) -> f64) -> Result<SpectralField> {
    let grid = *field.grid();
    let d = grid.dim();
    let mut ks = [0i64; 5];
    let mut xi = [0.0; 5];
    let mut out = field.clone();
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        grid.wavenumbers(idx, &mut ks[..d]);
        for a in 0..d {
            xi[a] = grid.frequency(ks[a]);
        }
        let m = symbol(&xi[..d]);
        let v = *c * m;
        if !m.is_finite() || !v.re.is_finite() || !v.im.is_finite() {
            return Err(NlwError::NonFiniteSymbol(idx));
        }
        *c = v;
    }
    Ok(out)
}

/// Initial-data rescaling `u_lambda(0, x) = lambda^{(d-2)/2} u(0, lambda x)`,
/// `d_t u_lambda(0, x) = lambda^{d/2} d_t u(0, lambda x)`, realized on the
/// companion grid of side `L / lambda` with the same resolution.
pub fn rescale(pair: &FieldPair, lambda: f64) -> Result<FieldPair> {
    let log2 = lambda.log2();
    if !(lambda.is_finite() && lambda >= 1.0) || log2 != log2.round() {
        return Err(NlwError::InvalidScale(lambda));
    }
    let grid = *pair.grid();
    let companion = Grid::new(grid.dim(), grid.n(), grid.side() / lambda)?;
    // Sampled values pick up lambda^{(d-2)/2} (resp. lambda^{d/2}); the
    // coefficient normalization contributes lambda^{-d/2}.
    let pos = SpectralField::new(companion, pair.pos.scaled(1.0 / lambda).into_coeffs())?;
    let vel = SpectralField::new(companion, pair.vel.coeffs().to_vec())?;
    FieldPair::new(pos, vel)
}
