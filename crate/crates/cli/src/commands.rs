use std::fmt::Write as _;
use std::fs;

use anyhow::{bail, ensure, Context, Result};
use log::info;
use patk_core::acoustics::{build_operator, synthesize_rf, add_noise, Medium, ProbeConfig};
use patk_core::beamform::{das, DasOptions};
use patk_core::dataset::{build_dataset, DatasetConfig, Provenance};
use patk_core::grid::max_normalized;
use patk_core::invert::{deconvolve, estimate_lipschitz, FistaConfig, SolveReport};
use patk_core::metrics::{abs_error_map, evaluate_set, sssim};
use patk_core::phantom::{augment, generate_branching_phantom, prepare_ground_truth, AugmentSpec, BranchingConfig};
use patk_core::preview::{tile_panel, write_png, Colormap};
use patk_core::register::{apply_transform, register as register_images, RegistrationBounds};
use patk_core::tensorio::{write_image, Manifest, Split};
use patk_core::uncertainty::{aggregate, noise_variability, overlap_score, stack_images};
use patk_core::Grid;
use serde::{Deserialize, Serialize};

use crate::files::*;
use crate::{
    BeamformArgs, DatasetArgs, DeconvArgs, MetricsArgs, PanelArgs, PhantomArgs, RegisterArgs, SimulateArgs,
    UncertaintyArgs,
};

/// Acquisition settings shared by `simulate` and `uncertainty --object`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub probe: ProbeConfig,
    pub medium: Medium,
    pub snr: Option<f64>,
    pub noise_seed: u64,
}

fn check_record(probe: &ProbeConfig, grid: &Grid, medium: &Medium) -> Result<()> {
    let need = probe.samples_to_cover(grid, medium);
    ensure!(
        probe.n_samples >= need,
        "record of {} samples is too short for this grid; need {need} (pass --samples 0 to size it automatically)",
        probe.n_samples
    );
    Ok(())
}

pub fn phantom(a: PhantomArgs) -> Result<()> {
    let mut cfg: BranchingConfig = load_config(a.config.as_deref())?;
    let g = cfg.grid;
    let depth = a.depth.unwrap_or(g.origin_z + 0.5 * (g.rows as f64 - 1.0) * g.pitch);
    let cx = g.origin_x + 0.5 * (g.cols as f64 - 1.0) * g.pitch;
    let size = a.size.unwrap_or(g.rows);
    let pitch = a.pitch.unwrap_or(g.pitch);
    if a.size.is_some() || a.pitch.is_some() || a.depth.is_some() {
        cfg.grid = Grid::centered(size, size, pitch, cx, depth);
    }
    cfg.validate()?;
    let mut img = generate_branching_phantom(a.seed, &cfg)?;
    let aug = a.augment_seed.map(AugmentSpec::from_seed);
    if let Some(spec) = &aug {
        img = augment(&img, spec)?;
    }
    if let Some(t) = a.threshold {
        img = prepare_ground_truth(&img, t)?;
    }
    out_dir(&a.out)?;
    save_image(&a.out, "phantom", &img.pixels, Some(img.grid), None, Colormap::Gray)?;
    #[derive(Serialize)]
    struct Record<'a> {
        seed: u64,
        config: &'a BranchingConfig,
        augment: Option<AugmentSpec>,
        threshold: Option<f64>,
    }
    write_json(
        &a.out.join("phantom_config.json"),
        &Record {
            seed: a.seed,
            config: &cfg,
            augment: aug,
            threshold: a.threshold,
        },
    )?;
    info!("phantom {}x{} written to {}", cfg.grid.rows, cfg.grid.cols, a.out.display());
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let obj = load_image(&a.object)?;
    let mut cfg: SimConfig = load_config(a.config.as_deref())?;
    if let Some(n) = a.elements {
        cfg.probe.n_elements = n;
    }
    if let Some(snr) = a.snr {
        cfg.snr = Some(snr);
    }
    if let Some(s) = a.seed {
        cfg.noise_seed = s;
    }
    match a.samples {
        Some(0) => cfg.probe.n_samples = cfg.probe.samples_to_cover(&obj.grid, &cfg.medium),
        Some(n) => cfg.probe.n_samples = n,
        None => {}
    }
    let op = build_operator(&obj.grid, &cfg.probe, &cfg.medium)?;
    check_record(&cfg.probe, &obj.grid, &cfg.medium)?;
    let mut rf = synthesize_rf(&obj, &op)?;
    if let Some(snr) = cfg.snr {
        rf = add_noise(&rf, snr, cfg.noise_seed)?;
    }
    out_dir(&a.out)?;
    save_rf(
        &a.out,
        &rf,
        &RfMeta {
            fs: rf.fs,
            t0: rf.t0,
            probe: cfg.probe.clone(),
            medium: cfg.medium.clone(),
            source_grid: obj.grid,
            snr: cfg.snr,
            noise_seed: cfg.noise_seed,
        },
    )?;
    info!("rf {}x{} written to {}", rf.n_elements(), rf.n_samples(), a.out.display());
    Ok(())
}

pub fn beamform(a: BeamformArgs) -> Result<()> {
    let (rf, meta) = load_rf(&a.rf)?;
    let grid = match a.crop {
        Some(n) => meta.source_grid.centered_crop(n, n)?.0,
        None => meta.source_grid,
    };
    let img = das(
        &rf,
        &grid,
        &meta.probe,
        &meta.medium,
        a.kind,
        DasOptions { zero_fill: a.zero_fill },
    )?;
    out_dir(&a.out)?;
    save_image(
        &a.out,
        "beamformed",
        &img.image.pixels,
        Some(grid),
        Some(a.kind.to_string()),
        Colormap::Gray,
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    alpha: f64,
    sssim: f64,
    iterations: usize,
}

pub fn deconv(a: DeconvArgs) -> Result<()> {
    let (rf, meta) = load_rf(&a.rf)?;
    let mut cfg: FistaConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(p) = a.penalty {
        cfg.penalty = p;
    }
    if let Some(n) = a.max_iters {
        cfg.max_iters = n;
    }
    cfg.nonnegativity |= a.nonneg;
    cfg.validate()?;
    let op = build_operator(&meta.source_grid, &meta.probe, &meta.medium)?;
    out_dir(&a.out)?;

    let (img, report, alpha) = if a.sweep {
        let gt_path = a.gt.as_deref().context("--sweep needs --gt")?;
        let gt = load_pixels(gt_path)?;
        ensure!(
            gt.dim() == meta.source_grid.shape(),
            "ground truth {:?} does not match the reconstruction grid {:?}",
            gt.dim(),
            meta.source_grid.shape()
        );
        let lip = match cfg.lipschitz {
            Some(l) => l,
            None => estimate_lipschitz(&op, cfg.power_iters, cfg.seed)?,
        };
        let centre = if cfg.alpha > 0.0 { cfg.alpha } else { (0.01 * lip).sqrt() };
        let mut best: Option<(f64, f64, patk_core::Image, SolveReport)> = None;
        let mut rows = Vec::new();
        for k in 0..5 {
            let alpha = centre * 10f64.powf((k as f64 - 2.0) / 2.0);
            let c = FistaConfig {
                alpha,
                lipschitz: Some(lip),
                ..cfg.clone()
            };
            let (img, rep) = deconvolve(&rf, &op, &c)?;
            let s = sssim(&img.pixels, &gt)?;
            info!("alpha {alpha:.4e}: sSSIM {s:.4}");
            rows.push(SweepRow {
                alpha,
                sssim: s,
                iterations: rep.iterations,
            });
            if best.as_ref().is_none_or(|b| s > b.0) {
                best = Some((s, alpha, img, rep));
            }
        }
        let mut table = format!("{:>12} {:>8} {:>6}\n", "alpha", "sSSIM", "iters");
        for r in &rows {
            let _ = writeln!(table, "{:>12.4e} {:>8.4} {:>6}", r.alpha, r.sssim, r.iterations);
        }
        print!("{table}");
        fs::write(a.out.join("sweep.txt"), &table)?;
        write_json(&a.out.join("sweep.json"), &rows)?;
        let (_, alpha, img, rep) = best.expect("five sweep points");
        (img, rep, alpha)
    } else {
        let (img, rep) = deconvolve(&rf, &op, &cfg)?;
        (img, rep, cfg.alpha)
    };

    save_image(&a.out, "deconv", &img.pixels, Some(img.grid), None, Colormap::Gray)?;
    #[derive(Serialize)]
    struct Report<'a> {
        alpha: f64,
        penalty: String,
        solve: &'a SolveReport,
    }
    write_json(
        &a.out.join("report.json"),
        &Report {
            alpha,
            penalty: cfg.penalty.to_string(),
            solve: &report,
        },
    )?;
    println!(
        "alpha {alpha:.4e}: {} iterations, relative residual {:.4e}",
        report.iterations, report.relative_residual
    );
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let pairs = if let Some(dir) = &a.dataset {
        let m = Manifest::load(dir)?;
        m.validate(dir)?;
        let split: Split = serde_json::from_value(serde_json::Value::String(a.split.clone()))
            .with_context(|| format!("unknown split {:?}", a.split))?;
        m.split(split)
            .map(|p| Ok((load_pixels(&dir.join(&p.input))?, load_pixels(&dir.join(&p.target))?)))
            .collect::<Result<Vec<_>>>()?
    } else {
        ensure!(
            !a.pred.is_empty() && a.pred.len() == a.gt.len(),
            "need matching --pred and --gt lists (got {} and {})",
            a.pred.len(),
            a.gt.len()
        );
        a.pred
            .iter()
            .zip(&a.gt)
            .map(|(p, g)| Ok((load_pixels(p)?, load_pixels(g)?)))
            .collect::<Result<Vec<_>>>()?
    };
    ensure!(!pairs.is_empty(), "no pairs to evaluate");
    let report = evaluate_set(&pairs)?;
    let table = report.table(&a.label);
    print!("{table}");
    out_dir(&a.out)?;
    fs::write(a.out.join("table.txt"), &table)?;
    write_json(&a.out.join("report.json"), &report)?;
    Ok(())
}

pub fn register(a: RegisterArgs) -> Result<()> {
    let reference = load_pixels(&a.reference)?;
    let moving = load_pixels(&a.moving)?;
    let mut bounds = RegistrationBounds::default();
    if let Some(d) = a.max_rotation_deg {
        bounds.max_rotation = d.to_radians();
    }
    if let Some(s) = a.max_shift {
        bounds.max_shift_fraction = s;
    }
    if let Some(s) = a.scale_min {
        bounds.scale_min = s;
    }
    if let Some(s) = a.scale_max {
        bounds.scale_max = s;
    }
    let reg = register_images(&reference, &moving, &bounds)?;
    let warped = apply_transform(&moving, &reg.transform);
    out_dir(&a.out)?;
    let grid = load_image(&a.reference).ok().map(|i| i.grid);
    save_image(&a.out, "registered", &warped, grid, None, Colormap::Gray)?;
    #[derive(Serialize)]
    struct Record {
        transform: patk_core::register::SimilarityTransform,
        rotation_deg: f64,
        score: f64,
        bounds: RegistrationBounds,
    }
    write_json(
        &a.out.join("transform.json"),
        &Record {
            transform: reg.transform,
            rotation_deg: reg.transform.rotation.to_degrees(),
            score: reg.score,
            bounds,
        },
    )?;
    println!(
        "rotation {:.3} deg, shift ({:.3}, {:.3}) px, scale {:.4}, correlation {:.4}",
        reg.transform.rotation.to_degrees(),
        reg.transform.tx,
        reg.transform.tz,
        reg.transform.scale,
        reg.score
    );
    Ok(())
}

pub fn dataset(a: DatasetArgs) -> Result<()> {
    let mut cfg: DatasetConfig = load_config(a.config.as_deref())?;
    if let Some(n) = a.n_train {
        cfg.n_train = n;
    }
    if let Some(n) = a.n_val {
        cfg.n_val = n;
    }
    if let Some(n) = a.n_test {
        cfg.n_test = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.kind {
        cfg.input_kind = k;
    }
    if let Some(snr) = a.snr {
        cfg.provenance = Provenance::Noisy { snr };
    }
    cfg.validate()?;
    let m = build_dataset(&cfg, &a.out, a.force)?;
    println!("{} pairs written to {}", m.pairs.len(), a.out.display());
    println!("manifest sha256 {}", m.hash()?);
    Ok(())
}

#[derive(Serialize)]
struct UncertaintyReport {
    n: usize,
    mean_std: f64,
    q: f64,
    overlap: Option<f64>,
    chance_level: f64,
}

pub fn uncertainty(a: UncertaintyArgs) -> Result<()> {
    let (stack, grid) = if let Some(p) = &a.stack {
        (load_stack(p)?, None)
    } else if let Some(obj_path) = &a.object {
        let obj = load_image(obj_path)?;
        let cfg: SimConfig = load_config(a.config.as_deref())?;
        let op = build_operator(&obj.grid, &cfg.probe, &cfg.medium)?;
        check_record(&cfg.probe, &obj.grid, &cfg.medium)?;
        let rfs = noise_variability(&obj, &op, a.snr, a.n_acq, a.seed)?;
        let images = rfs
            .iter()
            .map(|rf| Ok(das(rf, &obj.grid, &cfg.probe, &cfg.medium, a.kind, DasOptions::default())?.image.pixels))
            .collect::<Result<Vec<_>>>()?;
        (stack_images(&images)?, Some(obj.grid))
    } else if !a.inputs.is_empty() {
        let images = a.inputs.iter().map(|p| load_pixels(p)).collect::<Result<Vec<_>>>()?;
        (stack_images(&images)?, None)
    } else {
        bail!("give one of --stack, --inputs or --object");
    };
    let maps = aggregate(&stack)?;
    out_dir(&a.out)?;
    save_image(&a.out, "mean", &maps.mean, grid, None, Colormap::Gray)?;
    save_image(&a.out, "std", &maps.std, grid, None, Colormap::Hot)?;
    let mut overlap = None;
    if let Some(gt) = &a.gt {
        let gt = load_pixels(gt)?;
        let err = abs_error_map(&max_normalized(&maps.mean), &max_normalized(&gt))?;
        save_image(&a.out, "abs_error", &err, grid, None, Colormap::Hot)?;
        overlap = Some(overlap_score(&maps.std, &err, a.q)?);
    }
    let report = UncertaintyReport {
        n: maps.n,
        mean_std: maps.std.mean().unwrap_or(0.0),
        q: a.q,
        overlap,
        chance_level: 2.0 * a.q,
    };
    write_json(&a.out.join("report.json"), &report)?;
    println!("aggregated {} samples; mean std {:.4e}", report.n, report.mean_std);
    if let Some(o) = overlap {
        println!("overlap score {o:.3} (chance {:.3})", report.chance_level);
    }
    Ok(())
}

pub fn panel(a: PanelArgs) -> Result<()> {
    let images = a.inputs.iter().map(|p| load_pixels(p)).collect::<Result<Vec<_>>>()?;
    let tiled = tile_panel(&images)?;
    out_dir(&a.out)?;
    write_image(a.out.join("panel.patk"), &tiled)?;
    write_png(&a.out.join("panel.png"), &tiled, Colormap::Gray)?;
    println!("panel {}x{} from {} tiles", tiled.nrows(), tiled.ncols(), images.len());
    Ok(())
}
