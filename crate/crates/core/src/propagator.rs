//! Exact linear wave flow and Duhamel quadrature.
//!
//! The flow acts diagonally on Fourier coefficients with frequency
//! `w = 2 pi |xi|`:
//!
//! ```text
//! pos <- cos(t w) pos + sin(t w)/w vel
//! vel <- -w sin(t w) pos + cos(t w) vel
//! ```
//!
//! The zero mode of `sin(t w)/w` is its limit `t`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;

use crate::error::{NlwError, Result};
use crate::grid::{FieldPair, Grid, SpectralField};

#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorCache {
    grid: Grid,
    t: f64,
    cos: Vec<f64>,
    sinc: Vec<f64>,
    wsin: Vec<f64>,
}

impl PropagatorCache {
    pub fn new(grid: &Grid, t: f64) -> Self {
        let norms = grid.frequency_norms();
        let mut cos = Vec::with_capacity(norms.len());
        let mut sinc = Vec::with_capacity(norms.len());
        let mut wsin = Vec::with_capacity(norms.len());
        for &xi in &norms {
            let w = 2.0 * PI * xi;
            let (s, c) = (t * w).sin_cos();
            cos.push(c);
            sinc.push(if w == 0.0 { t } else { s / w });
            wsin.push(w * s);
        }
        Self {
            grid: *grid,
            t,
            cos,
            sinc,
            wsin,
        }
    }

    /// Process-wide cache keyed by grid and the exact bits of `t`.
    pub fn shared(grid: &Grid, t: f64) -> Arc<Self> {
        type Key = (usize, usize, u64, u64);
        static CACHE: Lazy<Mutex<HashMap<Key, Arc<PropagatorCache>>>> =
            Lazy::new(|| Mutex::new(HashMap::new()));
        const CAPACITY: usize = 64;
        let key = (grid.dim(), grid.n(), grid.side().to_bits(), t.to_bits());
        let mut cache = CACHE.lock().expect("propagator cache poisoned");
        if let Some(hit) = cache.get(&key) {
            return hit.clone();
        }
        if cache.len() >= CAPACITY {
            cache.clear();
        }
        let built = Arc::new(Self::new(grid, t));
        cache.insert(key, built.clone());
        built
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn cos(&self) -> &[f64] {
        &self.cos
    }

    pub fn sinc(&self) -> &[f64] {
        &self.sinc
    }

    /// Apply the flow in place.
    pub fn apply(&self, pair: &mut FieldPair) -> Result<()> {
        if pair.grid() != &self.grid {
            return Err(NlwError::GridMismatch);
        }
        let FieldPair { pos, vel } = pair;
        let (p, v) = (pos.coeffs_mut(), vel.coeffs_mut());
        for i in 0..p.len() {
            let (a, b) = (p[i], v[i]);
            p[i] = a * self.cos[i] + b * self.sinc[i];
            v[i] = b * self.cos[i] - a * self.wsin[i];
        }
        Ok(())
    }

    /// Flow applied to `(0, f)`: returns `(sin(t w)/w f, cos(t w) f)`.
    pub fn apply_to_velocity(&self, f: &SpectralField) -> Result<FieldPair> {
        if f.grid() != &self.grid {
            return Err(NlwError::GridMismatch);
        }
        let pos = f.coeffs().iter().zip(&self.sinc).map(|(c, s)| c * s).collect();
        let vel = f.coeffs().iter().zip(&self.cos).map(|(c, k)| c * k).collect();
        FieldPair::new(SpectralField::new(self.grid, pos)?, SpectralField::new(self.grid, vel)?)
    }
}

/// `S(t)(u0, u1)`.
pub fn linear_evolve(pair: &FieldPair, t: f64) -> FieldPair {
    let mut out = pair.clone();
    PropagatorCache::shared(pair.grid(), t)
        .apply(&mut out)
        .expect("cache built for this grid");
    out
}

/// Spacing of a uniform time grid.
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(NlwError::InsufficientSamples {
            needed: 2,
            got: times.len(),
        });
    }
    let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(NlwError::NonUniformTimeGrid(h));
    }
    for w in times.windows(2) {
        let dev = (w[1] - w[0] - h).abs();
        if dev > 1e-9 * h {
            return Err(NlwError::NonUniformTimeGrid(dev));
        }
    }
    Ok(h)
}

/// Trapezoid Duhamel increments at every node:
/// `D_i = -int_{t_0}^{t_i} S(t_i - s)(0, F(s)) ds`.
///
/// Uses the recurrence `C_i = S(h) C_{i-1} + h (0, F_i)`, so the cost is one
/// flow application per node.
pub fn duhamel_series(forcing: &[SpectralField], times: &[f64]) -> Result<Vec<FieldPair>> {
    if forcing.len() != times.len() {
        return Err(NlwError::ShapeMismatch {
            expected: times.len(),
            actual: forcing.len(),
        });
    }
    let h = uniform_step(times)?;
    let grid = *forcing[0].grid();
    if forcing.iter().any(|f| f.grid() != &grid) {
        return Err(NlwError::GridMismatch);
    }
    let step = PropagatorCache::shared(&grid, h);
    let mut out = Vec::with_capacity(forcing.len());
    out.push(FieldPair::zeros(grid));
    // running = sum_{j<=i} w_j S(t_i - t_j)(0, F_j) with w_0 = h/2, w_j = h.
    let mut running = FieldPair::new(SpectralField::zeros(grid), forcing[0].scaled(0.5 * h))?;
    for f in &forcing[1..] {
        step.apply(&mut running)?;
        running.vel.axpy(h, f)?;
        let mut inc = running.scaled(-1.0);
        inc.vel.axpy(0.5 * h, f)?;
        out.push(inc);
    }
    Ok(out)
}

/// Trapezoid approximation of `-int_{t_0}^{t_N} S(t_N - s)(0, F(s)) ds`.
pub fn duhamel_integral(forcing: &[SpectralField], times: &[f64]) -> Result<FieldPair> {
    Ok(duhamel_series(forcing, times)?.pop().expect("at least two nodes"))
}

/// `1/2 |vel|_{L^2}^2 + 1/2 |pos|_{\dot H^1}^2`.
pub fn linear_energy(pair: &FieldPair) -> f64 {
    let norms = pair.grid().frequency_norms();
    let kinetic: f64 = pair.vel.coeffs().iter().map(|c| c.norm_sqr()).sum();
    let gradient: f64 = pair
        .pos
        .coeffs()
        .iter()
        .zip(&norms)
        .map(|(c, &xi)| (2.0 * PI * xi).powi(2) * c.norm_sqr())
        .sum();
    0.5 * (kinetic + gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{fft_forward, RealField};
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(grid: &Grid, seed: u64) -> FieldPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = || {
            let vals: Vec<f64> = (0..grid.points()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            fft_forward(&vals, grid).unwrap().without_nyquist()
        };
        let pos = field();
        let vel = field();
        FieldPair::new(pos, vel).unwrap()
    }

    fn rel_diff(a: &FieldPair, b: &FieldPair) -> f64 {
        let d = a.sub(b).unwrap();
        (d.pos.l2().powi(2) + d.vel.l2().powi(2)).sqrt() / (b.pos.l2().powi(2) + b.vel.l2().powi(2)).sqrt()
    }

    #[test]
    fn zero_time_is_identity() {
        let g = Grid::new(3, 8, 4.0).unwrap();
        let p = random_pair(&g, 1);
        assert_eq!(linear_evolve(&p, 0.0), p);
    }

    #[test]
    fn zero_mode_moves_linearly() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        let pos = fft_forward(RealField::constant(g, 1.5).values(), &g).unwrap();
        let vel = fft_forward(RealField::constant(g, -0.5).values(), &g).unwrap();
        let out = linear_evolve(&FieldPair::new(pos, vel).unwrap(), 3.0);
        let real = out.pos.to_real();
        for v in real.values() {
            assert_relative_eq!(*v, 1.5 - 3.0 * 0.5, epsilon = 1e-12);
        }
        let cache = PropagatorCache::new(&g, 3.0);
        assert_eq!(cache.sinc()[0], 3.0);
    }

    #[test]
    fn single_mode_follows_scalar_cosine() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let lside = 8.0;
        let k = [3.0, -2.0];
        let u0 = RealField::from_fn(g, |x| (2.0 * PI * (k[0] * x[0] + k[1] * x[1]) / lside).cos());
        let pair = FieldPair::new(fft_forward(u0.values(), &g).unwrap(), SpectralField::zeros(g)).unwrap();
        let omega = 2.0 * PI * (k[0] * k[0] + k[1] * k[1]).sqrt() / lside;
        for t in [0.1, 0.7, 2.3] {
            let out = linear_evolve(&pair, t).pos.to_real();
            let expected = RealField::from_fn(g, |x| {
                (omega * t).cos() * (2.0 * PI * (k[0] * x[0] + k[1] * x[1]) / lside).cos()
            });
            assert!(out.sub(&expected).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn group_property_and_time_reversal() {
        let g = Grid::new(3, 12, 8.0).unwrap();
        let p = random_pair(&g, 4);
        for (s, t) in [(0.3, 1.1), (2.5, -0.7), (4.0, 6.0)] {
            let two = linear_evolve(&linear_evolve(&p, s), t);
            let one = linear_evolve(&p, s + t);
            assert!(rel_diff(&two, &one) < 1e-11);
        }
        let back = linear_evolve(&linear_evolve(&p, 7.3), -7.3);
        assert!(rel_diff(&back, &p) < 1e-11);
    }

    #[test]
    fn linear_energy_is_conserved() {
        let g = Grid::new(3, 12, 8.0).unwrap();
        let p = random_pair(&g, 5);
        let e0 = linear_energy(&p);
        for t in [0.5, 3.0, 10.0] {
            assert_relative_eq!(linear_energy(&linear_evolve(&p, t)), e0, max_relative = 1e-9);
        }
        assert_eq!(linear_energy(&FieldPair::zeros(g)), 0.0);
    }

    #[test]
    fn linear_energy_single_mode() {
        // u0 = cos(2 pi k x / L) on [−L/2, L/2)^2: |grad u0|^2 integrates to
        // (2 pi |k| / L)^2 L^2 / 2.
        let g = Grid::new(2, 16, 4.0).unwrap();
        let lside = 4.0;
        let u0 = RealField::from_fn(g, |x| (2.0 * PI * (x[0] + 2.0 * x[1]) / lside).cos());
        let pair = FieldPair::new(fft_forward(u0.values(), &g).unwrap(), SpectralField::zeros(g)).unwrap();
        let w2 = (2.0 * PI / lside).powi(2) * 5.0;
        assert_relative_eq!(linear_energy(&pair), 0.5 * w2 * lside * lside / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn symbol_arrays_are_even() {
        let g = Grid::new(2, 10, 3.0).unwrap();
        let c = PropagatorCache::new(&g, 0.37);
        for idx in 0..g.points() {
            if g.touches_nyquist(idx) {
                continue;
            }
            let m = g.mirror_index(idx);
            assert_eq!(c.cos()[idx], c.cos()[m]);
            assert_eq!(c.sinc()[idx], c.sinc()[m]);
        }
    }

    #[test]
    fn duhamel_rejects_bad_grids() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        let f = vec![SpectralField::zeros(g); 3];
        assert!(matches!(
            duhamel_integral(&f, &[0.0, 0.1, 0.3]),
            Err(NlwError::NonUniformTimeGrid(_))
        ));
        assert!(matches!(
            duhamel_integral(&f[..1], &[0.0]),
            Err(NlwError::InsufficientSamples { .. })
        ));
        let inc = duhamel_integral(&f, &[0.0, 0.1, 0.2]).unwrap();
        assert_eq!(inc.pos.max_abs_coeff(), 0.0);
    }

    #[test]
    fn duhamel_recurrence_matches_direct_sum() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        let n = 7;
        let h = 0.13;
        let times: Vec<f64> = (0..n).map(|i| 0.2 + i as f64 * h).collect();
        let forcing: Vec<SpectralField> = (0..n).map(|i| random_pair(&g, 10 + i as u64).pos).collect();
        let series = duhamel_series(&forcing, &times).unwrap();
        for i in 1..n {
            let mut direct = FieldPair::zeros(g);
            for j in 0..=i {
                let w = if j == 0 || j == i { 0.5 * h } else { h };
                let kick = FieldPair::new(SpectralField::zeros(g), forcing[j].scaled(w)).unwrap();
                direct = direct.sub(&linear_evolve(&kick, times[i] - times[j])).unwrap();
            }
            assert!(rel_diff(&series[i], &direct) < 1e-12);
        }
    }

    #[test]
    fn duhamel_constant_zero_mode_forcing() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        let f = fft_forward(RealField::constant(g, 2.0).values(), &g).unwrap();
        let t = 1.7;
        let n = 18;
        let times: Vec<f64> = (0..n).map(|i| t * i as f64 / (n - 1) as f64).collect();
        let inc = duhamel_integral(&vec![f.clone(); n], &times).unwrap();
        let pos = inc.pos.to_real();
        let vel = inc.vel.to_real();
        for (p, v) in pos.values().iter().zip(vel.values()) {
            assert_relative_eq!(*p, -t * t / 2.0 * 2.0, max_relative = 1e-12);
            assert_relative_eq!(*v, -t * 2.0, max_relative = 1e-12);
        }
    }

    /// Zero-data solution of `u'' + w^2 u = -sin(nu t)`.
    fn forced_mode(w: f64, nu: f64, t: f64) -> f64 {
        (nu * (w * t).sin() - w * (nu * t).sin()) / (w * (w * w - nu * nu))
    }

    #[test]
    fn duhamel_sinusoidal_forcing_converges_second_order() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        let k = [1i64, 1];
        let idx = g.ravel(&[g.axis_index(k[0]).unwrap(), g.axis_index(k[1]).unwrap()]);
        let w = 2.0 * PI * g.frequency(k[0]).hypot(g.frequency(k[1]));
        let nu = 2.3;
        let t_end = 2.0;
        let err = |n: usize| {
            let times: Vec<f64> = (0..=n).map(|i| t_end * i as f64 / n as f64).collect();
            let forcing: Vec<SpectralField> = times
                .iter()
                .map(|&t| {
                    let mut f = SpectralField::zeros(g);
                    f.coeffs_mut()[idx] = Complex64::new((nu * t).sin(), 0.0);
                    f
                })
                .collect();
            let inc = duhamel_integral(&forcing, &times).unwrap();
            (inc.pos.coeffs()[idx].re - forced_mode(w, nu, t_end)).abs()
        };
        let (e1, e2) = (err(40), err(80));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
    }
}
