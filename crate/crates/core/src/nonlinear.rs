//! Defocusing power nonlinearity, its dealiased spectral evaluation, and the
//! conserved energy.

use serde::{Deserialize, Serialize};

use crate::error::{NlwError, Result};
use crate::grid::{fft_forward, fft_inverse, FieldPair, Grid, RealField, SpectralField};
use crate::propagator::linear_energy;

/// `F(u) = |u|^{p-1} u` with potential `G(u) = |u|^{p+1} / (p+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    power: f64,
}

impl Nonlinearity {
    /// Energy-critical power `(d+2)/(d-2)`; `d = 2` has none and uses the
    /// cubic power for smoke tests.
    pub fn critical(dim: usize) -> Result<Self> {
        let power = match dim {
            2 => 3.0,
            3..=5 => (dim as f64 + 2.0) / (dim as f64 - 2.0),
            _ => return Err(NlwError::UnsupportedDimension(dim)),
        };
        Ok(Self { power })
    }

    pub fn with_power(power: f64) -> Result<Self> {
        if !(power.is_finite() && power >= 1.0) {
            return Err(NlwError::InvalidExponent(format!("power {power} must be >= 1")));
        }
        Ok(Self { power })
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let p = self.power;
        if p == 3.0 {
            u * u * u
        } else if p == 5.0 {
            let u2 = u * u;
            u2 * u2 * u
        } else if p == 7.0 / 3.0 {
            u * u.abs() * u.abs().cbrt()
        } else {
            u * u.abs().powf(p - 1.0)
        }
    }

    #[inline]
    pub fn potential(&self, u: f64) -> f64 {
        let p = self.power;
        let a = u.abs();
        let pow = if p == 3.0 {
            let a2 = a * a;
            a2 * a2
        } else if p == 5.0 {
            let a2 = a * a;
            a2 * a2 * a2
        } else if p == 7.0 / 3.0 {
            a * a * a * a.cbrt()
        } else {
            a.powf(p + 1.0)
        };
        pow / (p + 1.0)
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&u| self.eval(u)).collect()
    }

    /// Riemann sum of `G(u)`.
    pub fn potential_energy(&self, values: &[f64], grid: &Grid) -> f64 {
        values.iter().map(|&u| self.potential(u)).sum::<f64>() * grid.cell_volume()
    }
}

/// Pointwise `F(u)` for the critical power of dimension `dim`.
pub fn nonlinearity(values: &[f64], dim: usize) -> Result<Vec<f64>> {
    Ok(Nonlinearity::critical(dim)?.apply(values))
}

/// Constant `C` in `|F(u) - F(v)| <= C |u - v| (|u|^{p-1} + |v|^{p-1})`.
///
/// Cubic: `|u^2 + uv + v^2| <= 3/2 (u^2 + v^2)`, and 3 is kept as the
/// documented constant. Power `7/3`: `7/3` from the mean value theorem
/// times `2^{1/3}` of slack.
pub fn difference_bound_constant(dim: usize) -> Result<f64> {
    match dim {
        4 => Ok(3.0),
        5 => Ok(7.0 / 3.0 * 2f64.cbrt()),
        _ => Err(NlwError::UnsupportedDimension(dim)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DifferenceBound {
    /// `max_x |F(u) - F(v)|`.
    pub lhs: f64,
    /// `max_x |u - v| (|u|^{p-1} + |v|^{p-1})`.
    pub rhs: f64,
    /// `max_x` of the pointwise ratio, over points where the majorant is positive.
    pub worst_ratio: f64,
}

pub fn nonlinearity_difference_bound(u: &RealField, v: &RealField, dim: usize) -> Result<DifferenceBound> {
    if u.grid() != v.grid() {
        return Err(NlwError::GridMismatch);
    }
    let nl = Nonlinearity::critical(dim)?;
    let q = nl.power() - 1.0;
    let mut out = DifferenceBound {
        lhs: 0.0,
        rhs: 0.0,
        worst_ratio: 0.0,
    };
    for (&a, &b) in u.values().iter().zip(v.values()) {
        let l = (nl.eval(a) - nl.eval(b)).abs();
        let r = (a - b).abs() * (a.abs().powf(q) + b.abs().powf(q));
        out.lhs = out.lhs.max(l);
        out.rhs = out.rhs.max(r);
        if r > 0.0 {
            out.worst_ratio = out.worst_ratio.max(l / r);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dealias {
    /// Keep `|k_a| <= n/3` on every axis.
    #[default]
    #[serde(rename = "two-thirds")]
    TwoThirds,
    /// Evaluate on a `3n/2` grid and truncate back.
    #[serde(rename = "padded-3/2")]
    Padded,
}

/// Spectral evaluation of `F(u)` under a dealiasing rule.
///
/// The discrete potential energy is the Riemann sum of `G` on the
/// evaluation grid, so the force is its exact gradient on the retained
/// modes and the splitting integrator stays Hamiltonian.
#[derive(Debug, Clone)]
pub struct ForceEvaluator {
    grid: Grid,
    nonlinearity: Nonlinearity,
    dealias: Dealias,
    mask: Vec<bool>,
    fine: Option<Grid>,
}

impl ForceEvaluator {
    pub fn new(grid: &Grid, dealias: Dealias, nonlinearity: Nonlinearity) -> Result<Self> {
        let (mask, fine) = match dealias {
            Dealias::TwoThirds => (grid.two_thirds_mask(), None),
            Dealias::Padded => {
                let m = 3 * grid.n() / 2;
                if !grid.n().is_multiple_of(4) {
                    return Err(NlwError::InvalidGrid(format!(
                        "3/2 padding needs n divisible by 4, got {}",
                        grid.n()
                    )));
                }
                let mask = (0..grid.points()).map(|i| !grid.touches_nyquist(i)).collect();
                (mask, Some(grid.with_n(m)?))
            }
        };
        Ok(Self {
            grid: *grid,
            nonlinearity,
            dealias,
            mask,
            fine,
        })
    }

    pub fn critical(grid: &Grid, dealias: Dealias) -> Result<Self> {
        Self::new(grid, dealias, Nonlinearity::critical(grid.dim())?)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn dealias(&self) -> Dealias {
        self.dealias
    }

    /// Restrict a field to the retained modes.
    pub fn project(&self, field: &SpectralField) -> SpectralField {
        let mut out = field.clone();
        out.apply_mask(&self.mask);
        out
    }

    pub fn project_pair(&self, pair: &FieldPair) -> FieldPair {
        FieldPair {
            pos: self.project(&pair.pos),
            vel: self.project(&pair.vel),
        }
    }

    /// Real-space values of `u` on the evaluation grid.
    pub fn evaluation_values(&self, u: &SpectralField) -> Result<RealField> {
        match &self.fine {
            None => Ok(fft_inverse(u)),
            Some(fine) => Ok(fft_inverse(&u.pad_to(fine)?)),
        }
    }

    /// Dealiased `F(u)` and `max |u|` on the evaluation grid.
    pub fn force(&self, u: &SpectralField) -> Result<(SpectralField, f64)> {
        if u.grid() != &self.grid {
            return Err(NlwError::GridMismatch);
        }
        let values = self.evaluation_values(u)?;
        self.force_from_values(&values)
    }

    /// Dealiased `F(u)` from values on the evaluation grid.
    pub fn force_from_values(&self, values: &RealField) -> Result<(SpectralField, f64)> {
        let eval_grid = self.fine.unwrap_or(self.grid);
        if values.grid() != &eval_grid {
            return Err(NlwError::GridMismatch);
        }
        let max = values.max_abs();
        let f = self.nonlinearity.apply(values.values());
        let spec = fft_forward(&f, &eval_grid)?;
        let mut out = match &self.fine {
            None => spec,
            Some(_) => spec.truncate_to(&self.grid)?,
        };
        out.apply_mask(&self.mask);
        Ok((out, max))
    }

    /// `true` when values on the base grid can feed `force_from_values`.
    pub fn evaluates_on_base_grid(&self) -> bool {
        self.fine.is_none()
    }

    /// Riemann sum of `G(u)` on the evaluation grid.
    pub fn potential_energy(&self, u: &SpectralField) -> Result<f64> {
        let values = self.evaluation_values(u)?;
        Ok(self.nonlinearity.potential_energy(values.values(), values.grid()))
    }

    /// Energy with the potential measured on the evaluation grid.
    pub fn energy(&self, pair: &FieldPair) -> Result<f64> {
        Ok(linear_energy(pair) + self.potential_energy(&pair.pos)?)
    }
}

/// `int 1/2 u_t^2 + 1/2 |grad u|^2 + (d-2)/(2d) |u|^{2d/(d-2)}`, potential by
/// Riemann sum on the pair's own grid.
pub fn energy(pair: &FieldPair, dim: usize) -> Result<f64> {
    if pair.grid().dim() != dim {
        return Err(NlwError::InvalidArgument(format!(
            "pair lives in dimension {}, not {dim}",
            pair.grid().dim()
        )));
    }
    let nl = Nonlinearity::critical(dim)?;
    let values = fft_inverse(&pair.pos);
    Ok(linear_energy(pair) + nl.potential_energy(values.values(), values.grid()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_values(grid: &Grid, seed: u64, amp: f64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealField::new(*grid, (0..grid.points()).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(nonlinearity(&[0.0, 0.0], 4).unwrap(), vec![0.0, 0.0]);
        assert_eq!(nonlinearity(&[2.0], 4).unwrap(), vec![8.0]);
        assert_eq!(nonlinearity(&[-1.0], 5).unwrap(), vec![-1.0]);
        assert_relative_eq!(nonlinearity(&[2.0], 5).unwrap()[0], 2f64.powf(7.0 / 3.0), max_relative = 1e-15);
        assert_relative_eq!(nonlinearity(&[1.5], 3).unwrap()[0], 1.5f64.powi(5), max_relative = 1e-15);
        assert!(nonlinearity(&[1.0], 6).is_err());
    }

    #[test]
    fn odd_and_monotone() {
        for d in 2..=5 {
            let nl = Nonlinearity::critical(d).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in -200..=200 {
                let u = i as f64 * 0.037;
                assert_eq!(nl.eval(-u), -nl.eval(u));
                assert!(nl.eval(u) >= prev);
                prev = nl.eval(u);
            }
        }
    }

    #[test]
    fn potential_is_antiderivative() {
        for d in 3..=5 {
            let nl = Nonlinearity::critical(d).unwrap();
            for &u in &[-1.3, -0.2, 0.4, 2.1] {
                let h = 1e-5;
                let fd = (nl.potential(u + h) - nl.potential(u - h)) / (2.0 * h);
                assert_relative_eq!(fd, nl.eval(u), max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn difference_bound_examples() {
        let g = Grid::new(4, 4, 2.0).unwrap();
        let u = RealField::constant(g, 1.0);
        let z = RealField::zeros(g);
        let b = nonlinearity_difference_bound(&u, &z, 4).unwrap();
        assert_eq!((b.lhs, b.rhs), (1.0, 1.0));
        let b = nonlinearity_difference_bound(&u, &u, 4).unwrap();
        assert_eq!((b.lhs, b.rhs), (0.0, 0.0));
    }

    #[test]
    fn difference_bound_holds_on_random_pairs() {
        for d in [4, 5] {
            let g = Grid::new(d, 4, 2.0).unwrap();
            let c = difference_bound_constant(d).unwrap();
            for seed in 0..100 {
                let u = random_values(&g, seed, 3.0);
                let v = random_values(&g, seed + 500, 3.0);
                let b = nonlinearity_difference_bound(&u, &v, d).unwrap();
                assert!(b.worst_ratio <= c, "d = {d}: ratio {}", b.worst_ratio);
            }
        }
    }

    #[test]
    fn energy_of_constant_field() {
        let g = Grid::new(4, 4, 8.0).unwrap();
        let pos = fft_forward(RealField::constant(g, 0.5).values(), &g).unwrap();
        let pair = FieldPair::new(pos, SpectralField::zeros(g)).unwrap();
        assert_relative_eq!(energy(&pair, 4).unwrap(), 8f64.powi(4) * 0.5f64.powi(4) / 4.0, max_relative = 1e-12);
        assert_eq!(energy(&FieldPair::zeros(g), 4).unwrap(), 0.0);
    }

    #[test]
    fn two_thirds_force_matches_projected_cube() {
        let g = Grid::new(2, 12, 4.0).unwrap();
        let ev = ForceEvaluator::critical(&g, Dealias::TwoThirds).unwrap();
        let u = ev.project(&fft_forward(random_values(&g, 3, 1.0).values(), &g).unwrap());
        let (f, _) = ev.force(&u).unwrap();
        let cube: Vec<f64> = fft_inverse(&u).values().iter().map(|v| v * v * v).collect();
        let expected = ev.project(&fft_forward(&cube, &g).unwrap());
        assert!(f.sub(&expected).unwrap().max_abs_coeff() < 1e-12 * expected.max_abs_coeff());
        for (c, keep) in f.coeffs().iter().zip(g.two_thirds_mask()) {
            if !keep {
                assert_eq!(c.norm(), 0.0);
            }
        }
    }

    #[test]
    fn padded_force_is_gradient_of_padded_potential() {
        // Directional derivative of the potential along a random real field
        // equals <F, h> on the retained modes.
        let g = Grid::new(3, 8, 4.0).unwrap();
        let ev = ForceEvaluator::critical(&g, Dealias::Padded).unwrap();
        let u = ev.project(&fft_forward(random_values(&g, 4, 1.0).values(), &g).unwrap());
        let h = ev.project(&fft_forward(random_values(&g, 5, 1.0).values(), &g).unwrap());
        let (f, _) = ev.force(&u).unwrap();
        let eps = 1e-5;
        let plus = ev.potential_energy(&u.add(&h.scaled(eps)).unwrap()).unwrap();
        let minus = ev.potential_energy(&u.add(&h.scaled(-eps)).unwrap()).unwrap();
        let fd = (plus - minus) / (2.0 * eps);
        let inner: f64 = f.coeffs().iter().zip(h.coeffs()).map(|(a, b)| (a * b.conj()).re).sum();
        assert_relative_eq!(fd, inner, max_relative = 1e-6);
    }

    #[test]
    fn padding_needs_divisible_n() {
        let g = Grid::new(2, 10, 4.0).unwrap();
        assert!(ForceEvaluator::critical(&g, Dealias::Padded).is_err());
    }
}
