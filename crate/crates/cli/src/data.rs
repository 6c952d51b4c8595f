//! Test data profiles for `make-data` and inline `[data]` blocks.

use std::collections::BTreeMap;

use anyhow::{bail, ensure, Result};
use nlwlab_core::grid::{fft_forward, japanese_bracket, sobolev_norm, FieldPair, Grid, RealField, SpectralField};
use nlwlab_core::io::{Sidecar, NLWP_VERSION};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `amplitude * exp(-|x|^2 / width^2)` at the box centre.
    GaussianBump,
    /// Sum of `bumps` signed Gaussians at seeded centres.
    MultiBump,
    /// `|u^(xi)| ~ <xi>^{-s-d/2-delta}` with seeded phases.
    SpectralPower,
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GaussianBump => "gaussian-bump",
            Self::MultiBump => "multi-bump",
            Self::SpectralPower => "spectral-power",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

fn tenth() -> f64 {
    0.1
}

/// Profile parameters and optional target norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub profile: Profile,
    /// Regularity: targets are `|u0|_{H^s}` and `|u1|_{H^{s-1}}`.
    #[serde(default)]
    pub s: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default = "four")]
    pub bumps: usize,
    #[serde(default = "tenth")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Rescale `u0` to this `H^s` norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_norm: Option<f64>,
    /// Give `u1` the same profile (next seed) with this `H^{s-1}` norm;
    /// `u1 = 0` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vel_norm: Option<f64>,
}

impl DataSpec {
    pub fn new(profile: Profile, s: f64) -> Self {
        Self {
            profile,
            s,
            amplitude: 1.0,
            width: 1.0,
            bumps: 4,
            delta: 0.1,
            seed: 0,
            pos_norm: None,
            vel_norm: None,
        }
    }
}

fn gaussian(grid: &Grid, centre: &[f64], width: f64) -> RealField {
    RealField::from_fn(*grid, |x| {
        let r2: f64 = x.iter().zip(centre).map(|(a, c)| (a - c).powi(2)).sum();
        (-r2 / (width * width)).exp()
    })
}

fn spectral_power(grid: &Grid, decay: f64, seed: u64) -> Result<SpectralField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norms = grid.frequency_norms();
    let mut coeffs = vec![Complex64::default(); grid.points()];
    for idx in 0..grid.points() {
        let mirror = grid.mirror_index(idx);
        if mirror < idx {
            continue;
        }
        let modulus = japanese_bracket(norms[idx]).powf(-decay);
        if mirror == idx {
            coeffs[idx] = Complex64::new(if rng.gen::<bool>() { modulus } else { -modulus }, 0.0);
        } else {
            let c = Complex64::from_polar(modulus, rng.gen_range(0.0..std::f64::consts::TAU));
            coeffs[idx] = c;
            coeffs[mirror] = c.conj();
        }
    }
    Ok(SpectralField::new(*grid, coeffs)?.without_nyquist())
}

/// Unnormalized shape of one component; `regularity` sets the decay of
/// the spectral-power profile.
fn shape(spec: &DataSpec, grid: &Grid, regularity: f64, seed: u64) -> Result<SpectralField> {
    let d = grid.dim() as f64;
    let real = match spec.profile {
        Profile::GaussianBump => gaussian(grid, &vec![0.0; grid.dim()], spec.width),
        Profile::MultiBump => {
            ensure!(spec.bumps > 0, "multi-bump needs at least one bump");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reach = 0.25 * grid.side();
            let mut total = RealField::zeros(*grid);
            for _ in 0..spec.bumps {
                let centre: Vec<f64> = (0..grid.dim()).map(|_| rng.gen_range(-reach..reach)).collect();
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let width = spec.width * rng.gen_range(0.5..1.0);
                let b = gaussian(grid, &centre, width);
                for (t, v) in total.values_mut().iter_mut().zip(b.values()) {
                    *t += sign * v;
                }
            }
            total
        }
        Profile::SpectralPower => {
            ensure!(spec.delta > 0.0, "spectral-power needs delta > 0");
            return Ok(spectral_power(grid, regularity + 0.5 * d + spec.delta, seed)?.scaled(spec.amplitude));
        }
    };
    Ok(fft_forward(real.values(), grid)?.without_nyquist().scaled(spec.amplitude))
}

fn normalize(field: SpectralField, s: f64, target: f64, what: &str) -> Result<SpectralField> {
    ensure!(target.is_finite() && target > 0.0, "target norm of {what} must be positive, got {target}");
    let current = sobolev_norm(&field, s, false)?;
    if current.is_nan() || current <= 0.0 || current.is_infinite() {
        bail!("target norm {target} of {what} is unreachable: the profile has norm {current} on this grid");
    }
    Ok(field.scaled(target / current))
}

/// Build the pair and its sidecar.
pub fn generate(spec: &DataSpec, grid: &Grid) -> Result<(FieldPair, Sidecar)> {
    ensure!(spec.amplitude.is_finite(), "amplitude must be finite");
    if spec.amplitude == 0.0 {
        bail!("zero amplitude gives a zero field");
    }
    ensure!(spec.width > 0.0, "width must be positive");
    let mut pos = shape(spec, grid, spec.s, spec.seed)?;
    if pos.max_abs_coeff() == 0.0 {
        bail!("profile vanishes on this grid");
    }
    if let Some(t) = spec.pos_norm {
        pos = normalize(pos, spec.s, t, "u0")?;
    }
    let vel = match spec.vel_norm {
        Some(0.0) => SpectralField::zeros(*grid),
        Some(t) => normalize(shape(spec, grid, spec.s - 1.0, spec.seed.wrapping_add(1))?, spec.s - 1.0, t, "u1")?,
        None => SpectralField::zeros(*grid),
    };
    let pair = FieldPair::new(pos, vel)?;
    let sidecar = Sidecar {
        format_version: NLWP_VERSION,
        profile: spec.profile.name().to_string(),
        seed: Some(spec.seed),
        cutoff: None,
        s: spec.s,
        norms: reported_norms(&pair, spec.s)?,
    };
    Ok((pair, sidecar))
}

/// `H^s`, `H^{s-1}`, `L^2` and `H^{-1}` norms of the components.
pub fn reported_norms(pair: &FieldPair, s: f64) -> Result<BTreeMap<String, f64>> {
    Ok(BTreeMap::from([
        (format!("u0_H^{s}"), sobolev_norm(&pair.pos, s, false)?),
        (format!("u1_H^{}", s - 1.0), sobolev_norm(&pair.vel, s - 1.0, false)?),
        ("u0_L^2".to_string(), sobolev_norm(&pair.pos, 0.0, false)?),
        ("u1_H^-1".to_string(), sobolev_norm(&pair.vel, -1.0, false)?),
    ]))
}
