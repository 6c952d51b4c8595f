//! `run <config>`: resolve the configuration, dispatch the experiment and
//! write its artifacts.
//!
//! Every output directory holds `config.toml` (the resolved configuration
//! without run-local settings), `manifest.json`, `verdict.json`, the sample
//! tables as CSV and two-column `.dat` series for plotting.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nlwlab_core::analysis::energy_bound_rhs;
use nlwlab_core::grid::{FieldPair, Grid};
use nlwlab_core::harness::{
    calibrate_tau, continuity_probe, energy_bound_experiment, khintchine_verdict, pointwise_cube_coefficients,
    slope_scaling, smalldata_experiment, strichartz_tail_experiment, EnsembleSpec, Pipeline, SampleRow, SampleTable,
    TailOptions, Verdict,
};
use nlwlab_core::io::{load_pair, save_pair, write_trajectory_jsonl, Sidecar, NLWP_VERSION};
use nlwlab_core::propagator::{linear_energy, linear_evolve};
use nlwlab_core::randomization::{build_cutoff, randomize_pair, DrawRecord, RandomizedDraw};
use nlwlab_core::solver::{solve_v_equation, strang_evolve};
use serde_json::json;

use crate::config::{Experiment, RunConfig, SCHEMA_VERSION};
use crate::data::{generate, reported_norms};

/// Run-local settings from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub force: bool,
    pub seed: Option<u64>,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub verdict: Verdict,
}

/// Refuse a nonempty directory unless `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if nonempty && !force {
            bail!("output directory {} already exists; pass --force to overwrite", dir.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

pub fn write_dat(path: &Path, columns: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# {} {}\n", columns.0, columns.1));
    for (x, y) in points {
        out.push_str(&format!("{x} {y}\n"));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_table(path: &Path, table: &SampleTable) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    table.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = RunConfig::load(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    run_config(cfg, &base_dir, opts)
}

/// Resolve the base pair: the data file (relative to `base_dir`) or the
/// inline profile.
pub fn resolve_base(cfg: &RunConfig, base_dir: &Path) -> Result<FieldPair> {
    let grid = cfg.grid.grid()?;
    let pair = match (&cfg.data_file, &cfg.data) {
        (Some(file), _) => {
            let path = base_dir.join(file);
            load_pair(&path).with_context(|| format!("loading base data {}", path.display()))?
        }
        (None, Some(spec)) => generate(spec, &grid)?.0,
        (None, None) => bail!("missing base data"),
    };
    ensure!(
        pair.grid() == &grid,
        "base data grid (d = {}, n = {}, L = {}) differs from the [grid] block",
        pair.grid().dim(),
        pair.grid().n(),
        pair.grid().side()
    );
    Ok(pair)
}

pub fn run_config(mut cfg: RunConfig, base_dir: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dir = match (&opts.out, &cfg.output) {
        (Some(out), _) => out.clone(),
        (None, Some(out)) => base_dir.join(out),
        (None, None) => bail!("no output directory: pass --out or set `output`"),
    };
    let base = resolve_base(&cfg, base_dir)?;
    prepare_dir(&dir, opts.force)?;

    let mut frozen = cfg.clone();
    frozen.output = None;
    fs::write(dir.join("config.toml"), frozen.to_toml()?)?;
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "tool": concat!("nlwlab ", env!("CARGO_PKG_VERSION")),
            "schema_version": SCHEMA_VERSION,
            "field_format_version": NLWP_VERSION,
            "experiment": cfg.experiment.name(),
            "seed": cfg.seed,
        }),
    )?;
    let verdict = dispatch(&cfg, &base, &dir, opts.workers.max(1))?;
    write_json(&dir.join("verdict.json"), &verdict)?;
    Ok(RunOutcome { dir, verdict })
}

fn ensemble(cfg: &RunConfig, base: &FieldPair, samples: usize, s: f64, workers: usize) -> EnsembleSpec {
    let mut spec = EnsembleSpec::new(base.clone(), cfg.distribution, cfg.cutoff, samples, cfg.seed);
    spec.s = s;
    spec.workers = workers;
    spec.solver = cfg.solver.clone();
    spec
}

fn relative_l2(a: &FieldPair, b: &FieldPair, scale: f64) -> Result<f64> {
    let d = a.sub(b)?;
    Ok((d.pos.l2().powi(2) + d.vel.l2().powi(2)).sqrt() / scale)
}

fn dispatch(cfg: &RunConfig, base: &FieldPair, dir: &Path, workers: usize) -> Result<Verdict> {
    let grid = *base.grid();
    match &cfg.experiment {
        Experiment::Randomize { samples, s } => randomize(cfg, base, dir, *samples, *s),
        Experiment::LinearEvolve { times } => linear(base, dir, times),
        Experiment::Solve { sample, max_drift } => solve(cfg, base, dir, *sample, *max_drift),
        Experiment::StrichartzMc {
            samples,
            s,
            norm,
            hs_tail,
            quantiles,
            gammas,
            min_r2,
            time_samples,
            halving_tolerance,
        } => {
            let mut spec = ensemble(cfg, base, *samples, *s, workers);
            spec.pipeline = Pipeline::LinearOnly;
            spec.time_samples = *time_samples;
            let opts = TailOptions {
                quantiles: (quantiles[0], quantiles[1]),
                gammas: gammas.clone(),
                min_r2: *min_r2,
            };
            let full = strichartz_tail_experiment(&spec, norm, *hs_tail, &opts)?;
            write_table(&dir.join("samples.csv"), &full.table)?;
            write_dat(&dir.join("tail.dat"), ("lambda^2", "log_survival"), &full.fit.plot_points())?;
            let mut verdict = full.verdict.clone();
            if let Some(tol) = halving_tolerance {
                let mut half_spec = spec.clone();
                half_spec.base = base.scaled(0.5);
                half_spec.master_seed = cfg.seed.wrapping_add(1);
                let half = strichartz_tail_experiment(&half_spec, norm, *hs_tail, &opts)?;
                write_table(&dir.join("samples_half.csv"), &half.table)?;
                write_dat(&dir.join("tail_half.dat"), ("lambda^2", "log_survival"), &half.fit.plot_points())?;
                let scaling = slope_scaling(&full.fit, &half.fit, 4.0, *tol);
                if let serde_json::Value::Object(stats) = &mut verdict.statistics {
                    stats.insert("halved".into(), half.verdict.statistics.clone());
                    stats.insert("slope_scaling".into(), serde_json::to_value(scaling)?);
                }
                verdict.pass = full.pass && half.pass && scaling.pass;
            }
            Ok(verdict)
        }
        Experiment::Khintchine {
            samples,
            p_list,
            point,
            distributions,
        } => {
            let cutoff = build_cutoff(cfg.cutoff, &grid);
            let coeffs = pointwise_cube_coefficients(&base.pos, &cutoff, *point)?;
            let dists = if distributions.is_empty() {
                vec![cfg.distribution]
            } else {
                distributions.clone()
            };
            let mut reports = Vec::new();
            let mut rows = Vec::new();
            let mut dat = String::from("# log_p log_moment\n");
            for (k, dist) in dists.iter().enumerate() {
                let rep = khintchine_verdict(&coeffs, dist, p_list, *samples, cfg.seed, workers)?;
                if k > 0 {
                    dat.push_str("\n\n");
                }
                dat.push_str(&format!("# {}\n", dist.name()));
                for (m, r) in rep.moments.iter().zip(&rep.ratios) {
                    dat.push_str(&format!("{} {}\n", m.p.ln(), m.value.ln()));
                    rows.push(SampleRow {
                        index: k as u64,
                        status: nlwlab_core::harness::RowStatus::Ok,
                        values: vec![m.p, m.value, m.ci_low, m.ci_high, *r],
                    });
                }
                reports.push(rep);
            }
            let table = SampleTable {
                columns: ["p", "moment", "ci_low", "ci_high", "ratio"].iter().map(|c| c.to_string()).collect(),
                rows,
            };
            write_table(&dir.join("moments.csv"), &table)?;
            fs::write(dir.join("moments.dat"), dat)?;
            Ok(Verdict {
                experiment: "khintchine".into(),
                parameters: json!({
                    "grid": {"dim": grid.dim(), "n": grid.n(), "side": grid.side()},
                    "cutoff": cfg.cutoff,
                    "distributions": dists,
                    "p_list": p_list,
                    "n_samples": samples,
                    "master_seed": cfg.seed,
                    "point": point,
                }),
                statistics: json!({ "reports": reports }),
                pass: reports.iter().all(|r| r.pass),
            })
        }
        Experiment::EnergyBound { samples, s, horizon } => {
            let mut spec = ensemble(cfg, base, *samples, *s, workers);
            spec.pipeline = Pipeline::FullSolve;
            let rep = energy_bound_experiment(&spec, *horizon)?;
            write_table(&dir.join("samples.csv"), &rep.table)?;
            let points: Vec<(f64, f64)> = rep
                .table
                .rows
                .iter()
                .filter(|r| r.is_ok())
                .zip(&rep.ratios)
                .map(|(r, q)| (r.index as f64, *q))
                .collect();
            write_dat(&dir.join("ratios.dat"), ("index", "ratio"), &points)?;
            Ok(rep.verdict)
        }
        Experiment::Smalldata {
            samples,
            s,
            eps,
            horizon,
            threshold,
        } => {
            let mut spec = ensemble(cfg, base, *samples, *s, workers);
            spec.pipeline = Pipeline::FullSolve;
            let rep = smalldata_experiment(&spec, eps, *horizon, *threshold)?;
            write_table(&dir.join("samples.csv"), &rep.table)?;
            let points: Vec<(f64, f64)> = rep.levels.iter().map(|l| (l.eps, l.median_x)).collect();
            write_dat(&dir.join("scaling.dat"), ("eps", "median_v_x"), &points)?;
            Ok(rep.verdict)
        }
        Experiment::Continuity {
            samples,
            s,
            eta,
            horizon,
            pipeline,
            time_samples,
            perturbation,
        } => {
            let mut spec = ensemble(cfg, base, *samples, *s, workers);
            spec.pipeline = *pipeline;
            spec.time_samples = *time_samples;
            let (rho, _) = generate(perturbation, &grid)?;
            let norm = rho.sobolev_pair_norm(*s, false)?;
            ensure!(norm > 0.0, "perturbation profile vanishes");
            let rep = continuity_probe(&spec, &rho.scaled(1.0 / norm), eta, *horizon)?;
            write_table(&dir.join("samples.csv"), &rep.table)?;
            let points: Vec<(f64, f64)> = rep.levels.iter().map(|l| (l.eta, l.median)).collect();
            write_dat(&dir.join("continuity.dat"), ("eta", "median_sup_difference"), &points)?;
            Ok(rep.verdict)
        }
        Experiment::CalibrateTau {
            energy_scales,
            forcing_scales,
            steps,
            picard,
            forcing,
        } => {
            let (z, _) = generate(forcing, &grid)?;
            let cal = calibrate_tau(base, &z, energy_scales, forcing_scales, steps, picard)?;
            write_json(&dir.join("tau_table.json"), &cal.table)?;
            Ok(cal.verdict)
        }
    }
}

fn randomize(cfg: &RunConfig, base: &FieldPair, dir: &Path, samples: usize, s: f64) -> Result<Verdict> {
    ensure!(samples > 0, "randomize needs at least one sample");
    let grid = *base.grid();
    let cutoff = build_cutoff(cfg.cutoff, &grid);
    let scale = (base.pos.l2().powi(2) + base.vel.l2().powi(2)).sqrt().max(f64::MIN_POSITIVE);
    let rebuilt = randomize_pair(base, &cutoff, &RandomizedDraw::constant(&cutoff, 1.0))?;
    let reconstruction = relative_l2(&rebuilt, base, scale)?;
    let mut manifest = fs::File::create(dir.join("draws.jsonl"))?;
    let mut rows = Vec::with_capacity(samples);
    let mut worst_residue = 0.0f64;
    for index in 0..samples as u64 {
        let draw = RandomizedDraw::generate(cfg.seed, index, cfg.distribution, &cutoff);
        let data = randomize_pair(base, &cutoff, &draw)?;
        let (im_pos, max_pos) = data.pos.imaginary_residue();
        let (im_vel, max_vel) = data.vel.imaginary_residue();
        let residue = (im_pos / max_pos.max(f64::MIN_POSITIVE)).max(im_vel / max_vel.max(f64::MIN_POSITIVE));
        worst_residue = worst_residue.max(residue);
        let hs = data.sobolev_pair_norm(s, false)?;
        rows.push(SampleRow {
            index,
            status: nlwlab_core::harness::RowStatus::Ok,
            values: vec![hs, residue],
        });
        let sidecar = Sidecar {
            format_version: NLWP_VERSION,
            profile: "randomized".into(),
            seed: Some(cfg.seed),
            cutoff: Some(cfg.cutoff),
            s,
            norms: reported_norms(&data, s)?,
        };
        save_pair(&dir.join(format!("sample_{index:05}.nlwp")), &data, &sidecar)?;
        let record = DrawRecord {
            master_seed: cfg.seed,
            index,
            distribution: cfg.distribution,
            cutoff: cfg.cutoff,
        };
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n")?;
    }
    let table = SampleTable {
        columns: vec!["hs_norm".into(), "realness_residue".into()],
        rows,
    };
    write_table(&dir.join("samples.csv"), &table)?;
    let pass = worst_residue <= 1e-11 && reconstruction <= 1e-12;
    Ok(Verdict {
        experiment: "randomize".into(),
        parameters: json!({
            "grid": {"dim": grid.dim(), "n": grid.n(), "side": grid.side()},
            "samples": samples,
            "s": s,
            "master_seed": cfg.seed,
            "distribution": cfg.distribution,
            "cutoff": cfg.cutoff,
        }),
        statistics: json!({
            "max_realness_residue": worst_residue,
            "partition_reconstruction_error": reconstruction,
            "cubes": cutoff.cube_count(),
            "truncated_cubes": cutoff.truncated_cube_count(),
        }),
        pass,
    })
}

fn linear(base: &FieldPair, dir: &Path, times: &[f64]) -> Result<Verdict> {
    ensure!(!times.is_empty(), "linear-evolve needs at least one time");
    let grid: Grid = *base.grid();
    let e0 = linear_energy(base);
    let scale = (base.pos.l2().powi(2) + base.vel.l2().powi(2)).sqrt().max(f64::MIN_POSITIVE);
    let mut rows = Vec::with_capacity(times.len());
    let mut points = Vec::with_capacity(times.len());
    let mut worst = 0.0f64;
    let mut last = base.clone();
    for (i, &t) in times.iter().enumerate() {
        let state = linear_evolve(base, t);
        let energy = linear_energy(&state);
        let drift = (energy - e0).abs() / e0.max(f64::MIN_POSITIVE);
        let group = relative_l2(&linear_evolve(&state, t), &linear_evolve(base, 2.0 * t), scale)?;
        let reversal = relative_l2(&linear_evolve(&state, -t), base, scale)?;
        worst = worst.max(drift).max(group).max(reversal);
        rows.push(SampleRow {
            index: i as u64,
            status: nlwlab_core::harness::RowStatus::Ok,
            values: vec![t, energy, drift, group, reversal],
        });
        points.push((t, energy));
        last = state;
    }
    let table = SampleTable {
        columns: ["t", "energy", "energy_drift", "group_residual", "reversal_residual"]
            .iter()
            .map(|c| c.to_string())
            .collect(),
        rows,
    };
    write_table(&dir.join("samples.csv"), &table)?;
    write_dat(&dir.join("energy.dat"), ("t", "linear_energy"), &points)?;
    let sidecar = Sidecar {
        format_version: NLWP_VERSION,
        profile: "linear-evolve".into(),
        seed: None,
        cutoff: None,
        s: 1.0,
        norms: reported_norms(&last, 1.0)?,
    };
    save_pair(&dir.join("final.nlwp"), &last, &sidecar)?;
    Ok(Verdict {
        experiment: "linear-evolve".into(),
        parameters: json!({
            "grid": {"dim": grid.dim(), "n": grid.n(), "side": grid.side()},
            "times": times,
        }),
        statistics: json!({"initial_energy": e0, "max_residual": worst}),
        pass: worst <= 1e-9,
    })
}

fn solve(cfg: &RunConfig, base: &FieldPair, dir: &Path, sample: Option<u64>, max_drift: f64) -> Result<Verdict> {
    let solver = cfg.solver.as_ref().expect("validated");
    let grid = *base.grid();
    let (traj, forced) = match sample {
        None => (strang_evolve(base, solver)?, false),
        Some(index) => {
            let cutoff = build_cutoff(cfg.cutoff, &grid);
            let draw = RandomizedDraw::generate(cfg.seed, index, cfg.distribution, &cutoff);
            let data = randomize_pair(base, &cutoff, &draw)?;
            (solve_v_equation(&data, &FieldPair::zeros(grid), solver)?, true)
        }
    };
    write_trajectory_jsonl(std::io::BufWriter::new(fs::File::create(dir.join("trajectory.jsonl"))?), &traj)?;
    let points: Vec<(f64, f64)> = traj.times.iter().copied().zip(traj.energy.iter().copied()).collect();
    write_dat(&dir.join("energy.dat"), ("t", "energy"), &points)?;
    let sidecar = Sidecar {
        format_version: NLWP_VERSION,
        profile: "solve".into(),
        seed: sample.map(|_| cfg.seed),
        cutoff: sample.map(|_| cfg.cutoff),
        s: 1.0,
        norms: reported_norms(&traj.final_state, 1.0)?,
    };
    save_pair(&dir.join("final.nlwp"), &traj.final_state, &sidecar)?;
    let drift = traj.relative_energy_drift();
    let mut statistics = json!({
        "initial_energy": traj.energy[0],
        "final_energy": traj.energy[traj.energy.len() - 1],
        "relative_energy_drift": drift,
        "recorded_times": traj.times.len(),
    });
    if forced {
        let rhs = energy_bound_rhs(&traj, traj.t_end() - traj.t_start()).ok();
        if let serde_json::Value::Object(m) = &mut statistics {
            m.insert("sup_energy_sqrt".into(), json!(traj.max_energy().sqrt()));
            m.insert("energy_bound_rhs".into(), json!(rhs));
        }
    }
    Ok(Verdict {
        experiment: "solve".into(),
        parameters: json!({
            "grid": {"dim": grid.dim(), "n": grid.n(), "side": grid.side()},
            "solver": solver,
            "sample": sample,
            "master_seed": cfg.seed,
            "max_drift": max_drift,
        }),
        statistics,
        pass: forced || drift <= max_drift,
    })
}
