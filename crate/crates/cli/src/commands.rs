use std::fs;
use std::path::Path;
use std::time::Instant;

use dsn_core::alpha_est::{corrected_covariance, AlphaEstimate, AlphaSearch};
use dsn_core::baselines::{gdm, gdm_mc, spa};
use dsn_core::eval::evaluate;
use dsn_core::experiment::{
    generate_datasets, run, AlphaValue, ExperimentConfig, GammaBuildSpec, GammaSource, Method,
    Scale, Sweep, SweepParameter, DEFAULT_DOCUMENT_LENGTH,
};
use dsn_core::extension::{build_gamma_table, log_spaced, GammaTable};
use dsn_core::io::{
    ensure_dir, load_dataset, load_vertices, write_json, write_matrix, DATASET_SIDECAR,
};
use dsn_core::rng::seeded;
use dsn_core::vlad::{fit_auto, fit_known_alpha, FitMeta, FitOptions};
use dsn_core::{vlad, DsnError, Kernel, Result};
use serde_json::json;

use crate::{
    AlphaCurveArgs, ConfigArgs, EvalArgs, ExperimentArgs, FitArgs, GammaTableArgs, GenerateArgs,
    GridArgs, KernelArg, SweepArg,
};

fn config_error(msg: impl Into<String>) -> DsnError {
    DsnError::InvalidParameter(msg.into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DsnError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Scale preset, then the JSON manifest, then individual flags.
fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let scale = if args.quick {
        Scale::Quick
    } else if args.paper_scale {
        Scale::Paper
    } else {
        Scale::Desk
    };
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| DsnError::Io {
                path: path.clone(),
                source: e,
            })?;
            ExperimentConfig::from_json_over(&ExperimentConfig::default(), &text).map_err(|e| {
                DsnError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                }
            })?
        }
        None => ExperimentConfig::default(),
    };
    if args.quick || args.paper_scale {
        cfg.scale = scale;
    }
    if let Some(kind) = args.kernel {
        cfg.kernel = match kind {
            KernelArg::Noiseless => Kernel::Noiseless,
            KernelArg::Gaussian => Kernel::Gaussian { sigma: 1.0 },
            KernelArg::Poisson => Kernel::Poisson,
            KernelArg::Multinomial => Kernel::Multinomial {
                trials: DEFAULT_DOCUMENT_LENGTH,
            },
        };
    }
    match (&mut cfg.kernel, args.sigma, args.trials) {
        (Kernel::Gaussian { sigma }, Some(s), _) => *sigma = s,
        (Kernel::Multinomial { trials }, _, Some(t)) => *trials = t,
        (_, Some(_), _) => return Err(config_error("--sigma applies to the gaussian kernel only")),
        (_, _, Some(_)) => {
            return Err(config_error(
                "--trials applies to the multinomial kernel only",
            ))
        }
        _ => {}
    }
    if args.dim.is_some() {
        cfg.dim = args.dim;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(alpha) = &args.alpha {
        cfg.alpha = match alpha.as_slice() {
            [a] => AlphaValue::Symmetric(*a),
            v => AlphaValue::Vector(v.to_vec()),
        };
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(n) = args.n_test {
        cfg.n_test = n;
    }
    if let Some(c) = args.c_min {
        cfg.c_min = c;
    }
    if args.seeds.is_some() {
        cfg.seeds = args.seeds.clone();
    }
    if let (Some(param), Some(values)) = (args.sweep, &args.values) {
        let parameter = match param {
            SweepArg::N => SweepParameter::N,
            SweepArg::CMin => SweepParameter::CMin,
            SweepArg::Alpha => SweepParameter::Alpha,
        };
        cfg.sweep = Some(Sweep {
            parameter,
            values: values.clone(),
        });
    }
    Ok(cfg)
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    for cell in generate_datasets(&cfg, &args.out)? {
        println!("{}", cell.display());
    }
    Ok(())
}

pub fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(methods) = &args.methods {
        cfg.methods = methods
            .iter()
            .map(|m| Method::parse(m))
            .collect::<Result<_>>()?;
    }
    if let Some(path) = &args.gamma_table {
        cfg.gamma_table = GammaSource::Path(path.clone());
    }
    if let Some(m) = args.gamma_m {
        cfg.gamma_mc_samples = m;
        if let GammaSource::Build(spec) = &mut cfg.gamma_table {
            spec.m = m;
        }
    }
    if let Some(r) = args.restarts {
        cfg.restarts = r;
    }
    if args.no_normalize {
        cfg.normalize_counts = false;
    }
    if args.no_artifacts {
        cfg.save_artifacts = false;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let outcome = run(&cfg, args.threads)?;
    if outcome.failures > 0 {
        log::warn!(
            "{} of {} fits failed; see results.csv",
            outcome.failures,
            outcome.rows.len()
        );
    }
    println!("{}", outcome.root.display());
    Ok(())
}

fn resolve_table(path: Option<&Path>, k: usize, m: usize, seed: u64) -> Result<GammaTable> {
    let table = match path {
        Some(p) => GammaTable::load(p)?,
        None => {
            log::info!("building gamma table for K={k} ({m} samples per grid point)");
            GammaBuildSpec {
                m,
                seed,
                ..GammaBuildSpec::default()
            }
            .build(k)?
        }
    };
    if table.k != k {
        return Err(config_error(format!(
            "gamma table is for K={}, requested K={k}",
            table.k
        )));
    }
    Ok(table)
}

fn write_alpha_estimate(
    dir: &Path,
    estimate: &AlphaEstimate,
    sigma2_hat: Option<f64>,
) -> Result<()> {
    let mut curve = String::from("alpha,objective\n");
    for (a, f) in &estimate.curve {
        curve.push_str(&format!("{a:.16e},{f:.16e}\n"));
    }
    write_text(&dir.join("grid_curve.csv"), &curve)?;
    write_json(
        &dir.join("alpha_estimate.json"),
        &json!({
            "alpha_hat": estimate.alpha,
            "objective_value": estimate.objective,
            "sigma2_hat": sigma2_hat,
        }),
    )
}

pub fn fit(args: FitArgs) -> Result<()> {
    let method = Method::parse(&args.method)?;
    let data = load_dataset(&args.data, false)?;
    let opts = FitOptions {
        restarts: args.restarts,
        normalize_counts: !args.no_normalize,
        clip_to_probability_simplex: !args.no_clip,
    };
    let search = AlphaSearch::new(args.alpha_lo, args.alpha_hi)?;
    let mut rng = seeded(args.seed);
    let table = || resolve_table(args.gamma_table.as_deref(), args.k, args.gamma_m, args.seed);
    let need_alpha = || {
        args.alpha
            .ok_or_else(|| config_error(format!("method {} needs --alpha", method.label())))
    };
    let gamma = || -> Result<f64> {
        match args.gamma {
            Some(g) => Ok(g),
            None => Ok(table()?.lookup(need_alpha()?)),
        }
    };
    ensure_dir(&args.out)?;

    let start = Instant::now();
    let summary = match &method {
        Method::Vlad => {
            let f = match args.gamma {
                Some(g) => {
                    let mut f = vlad::fit(&data, args.k, g, &opts, &mut rng)?;
                    f.alpha = args.alpha;
                    f
                }
                None => fit_known_alpha(&data, args.k, need_alpha()?, &table()?, &opts, &mut rng)?,
            };
            f.save(&args.out, Some(args.seed))?;
            json!({ "gamma": f.gamma, "alpha": f.alpha })
        }
        Method::VladAlpha => {
            let table = table()?;
            let (f, est) = fit_auto(&data, args.k, &table, &search, &opts, &mut rng)?;
            f.save(&args.out, Some(args.seed))?;
            let target = corrected_covariance(&data, args.k, opts.normalize_counts)?;
            write_alpha_estimate(&args.out, &est, target.sigma2_hat)?;
            json!({ "gamma": f.gamma, "alpha": est.alpha })
        }
        Method::Gdm => {
            let f = gdm(
                &data,
                args.k,
                gamma()?,
                args.restarts,
                opts.normalize_counts,
                &mut rng,
            )?;
            f.save(&args.out, Some(args.seed))?;
            json!({ "gamma": f.gamma })
        }
        Method::GdmMc => {
            let f = gdm_mc(
                &data,
                args.k,
                need_alpha()?,
                Some(args.gamma_m),
                args.restarts,
                opts.normalize_counts,
                &mut rng,
            )?;
            f.save(&args.out, Some(args.seed))?;
            json!({ "gamma": f.gamma })
        }
        Method::Spa => {
            let f = spa(&data, args.k, opts.normalize_counts)?;
            f.save(&args.out, Some(args.seed))?;
            json!({ "anchors": f.anchors })
        }
        Method::External(path) => {
            let vertices = load_vertices(Path::new(path))?;
            if vertices.nrows() != data.dim() || vertices.ncols() != args.k {
                return Err(DsnError::ShapeMismatch(format!(
                    "external vertices are {}x{}, expected {}x{}",
                    vertices.nrows(),
                    vertices.ncols(),
                    data.dim(),
                    args.k
                )));
            }
            write_matrix(&args.out.join("vertices.csv"), &vertices, "beta", false)?;
            let meta = FitMeta {
                method: "external".into(),
                k: args.k,
                gamma: None,
                alpha: None,
                kmeans_cost: None,
                seed: None,
                clipped: false,
            };
            write_json(&args.out.join("meta.json"), &meta)?;
            json!({ "source": path })
        }
    };
    let wall_time_s = start.elapsed().as_secs_f64();
    write_json(
        &args.out.join("timing.json"),
        &json!({ "wall_time_s": wall_time_s }),
    )?;
    let mut line = summary;
    line["method"] = json!(method.label());
    line["K"] = json!(args.k);
    line["wall_time_s"] = json!(wall_time_s);
    println!("{line}");
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let vertices = load_vertices(&args.vertices)?;
    let truth_vertices = if args.truth.join(DATASET_SIDECAR).exists() {
        let data = load_dataset(&args.truth, true)?;
        let truth = data
            .truth
            .ok_or_else(|| config_error(format!("{} has no ground truth", args.truth.display())))?;
        truth.simplex.vertices().clone()
    } else {
        load_vertices(&args.truth)?
    };
    let test_dir = args.test.clone().or_else(|| {
        let default = args.truth.join("test");
        default.join(DATASET_SIDECAR).exists().then_some(default)
    });
    let test = test_dir.map(|dir| load_dataset(&dir, false)).transpose()?;
    let report = evaluate(
        &vertices,
        &truth_vertices,
        test.as_ref(),
        !args.no_normalize,
    )?;
    match &args.out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn build_from_grid(grid: &GridArgs) -> Result<GammaTable> {
    build_gamma_table(
        grid.k,
        &log_spaced(grid.lo, grid.hi, grid.points)?,
        grid.m,
        grid.seed,
    )
}

pub fn gamma_table(args: GammaTableArgs) -> Result<()> {
    let table = build_from_grid(&args.grid)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    table.save(&args.out)?;
    println!("{}", args.out.display());
    Ok(())
}

pub fn alpha_curve(args: AlphaCurveArgs) -> Result<()> {
    let table = match &args.gamma_table {
        Some(path) => resolve_table(Some(path), args.grid.k, args.grid.m, args.grid.seed)?,
        None => build_from_grid(&args.grid)?,
    };
    ensure_dir(&args.out)?;
    write_text(&args.out.join("curve.csv"), &table.curve_csv())?;
    table.save(&args.out.join("gamma_table.json"))?;
    if let Some(dir) = &args.data {
        let data = load_dataset(dir, false)?;
        let opts = FitOptions {
            normalize_counts: !args.no_normalize,
            ..FitOptions::default()
        };
        let (lo, hi) = table.alpha_range();
        let search = AlphaSearch::new(lo, hi)?;
        let (_, est) = fit_auto(
            &data,
            table.k,
            &table,
            &search,
            &opts,
            &mut seeded(args.fit_seed),
        )?;
        let target = corrected_covariance(&data, table.k, opts.normalize_counts)?;
        write_alpha_estimate(&args.out, &est, target.sigma2_hat)?;
        println!(
            "{}",
            json!({ "alpha_hat": est.alpha, "objective_value": est.objective, "sigma2_hat": target.sigma2_hat })
        );
    }
    println!("{}", args.out.join("curve.csv").display());
    Ok(())
}
