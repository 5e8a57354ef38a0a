//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use snh_core::baselines::{ug_granularity, GridAnswerer, UG_CONSTANT};
use snh_core::derive_seed;
use snh_core::dp::collect;
use snh_core::eval::{
    evaluate, gen_mixture, gen_uniform, gen_workload, random_mixture_components,
};
use snh_core::geo::{GeoPoint, PlanarDataset, PlanarPoint, RangeQuery, Region};
use snh_core::model::{fit, SnhModel};
use snh_core::paramselect::{
    features, fit_ensemble, predict_rho, read_samples_csv, TreeEnsemble,
};

use crate::config::{echo_config, load_file_config, resolve_fit, RhoNamed, RhoSpec};
use crate::dataset::{load_dataset, save_dataset};
use crate::errors::{CliError, CliResult};
use crate::{
    AnswerArgs, AuditArgs, EvalArgs, FitArgs, IngestArgs, ParamselectPredictArgs,
    ParamselectTrainArgs, SweepArgs, SynthArgs,
};

/// Relative paths resolve against `SNH_DATA_DIR` when it is set.
pub fn resolve_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os("SNH_DATA_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn region_from_args(lat: f64, lon: f64, side: f64) -> CliResult<Region> {
    let center = GeoPoint::new(lat, lon)
        .map_err(|e| CliError::user("INVALID_CONFIG", e.to_string()))?;
    Region::new(center, side).map_err(|e| CliError::user("INVALID_CONFIG", e.to_string()))
}

pub fn cmd_ingest(args: &IngestArgs) -> CliResult<()> {
    let input = resolve_path(&args.input);
    let output = resolve_path(&args.output);
    let region = region_from_args(args.center_lat, args.center_lon, args.side)?;
    echo_config(
        "ingest",
        serde_json::json!({
            "input": input, "output": output,
            "center_lat": args.center_lat, "center_lon": args.center_lon,
            "side": args.side,
        }),
    );
    if !input.exists() {
        return Err(CliError::user(
            "DATASET_NOT_FOUND",
            format!("no input at {}", input.display()),
        ));
    }
    let d = PlanarDataset::from_csv_path(&input, region)
        .map_err(|e| CliError::user("INVALID_DATASET", e.to_string()))?;
    save_dataset(&d, &output)?;
    println!(
        "{}",
        serde_json::json!({ "dataset": output, "n": d.n(), "side": region.side })
    );
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let output = resolve_path(&args.output);
    let region = region_from_args(args.center_lat, args.center_lon, args.side)?;
    echo_config(
        "synth",
        serde_json::json!({
            "kind": args.kind, "n": args.n, "side": args.side,
            "components": args.components, "sigma": args.sigma,
            "seed": args.seed, "output": output,
        }),
    );
    let d = match args.kind.as_str() {
        "uniform" => gen_uniform(args.n, region, args.seed),
        "gaussian-mixture" => {
            let comps = random_mixture_components(
                &region,
                args.components,
                args.sigma,
                derive_seed(args.seed, "components", 0),
            );
            gen_mixture(args.n, region, &comps, derive_seed(args.seed, "points", 0))
        }
        other => {
            return Err(CliError::user(
                "INVALID_CONFIG",
                format!("kind must be uniform or gaussian-mixture, got {other:?}"),
            ))
        }
    };
    save_dataset(&d, &output)?;
    println!("{}", serde_json::json!({ "dataset": output, "n": d.n() }));
    Ok(())
}

fn pin_rho(
    spec: RhoSpec,
    args: &FitArgs,
    dataset: &PlanarDataset,
) -> CliResult<f64> {
    match spec {
        RhoSpec::Meters(m) => Ok(m),
        RhoSpec::Named(RhoNamed::Paramselect) => {
            let Some(model_path) = &args.paramselect_model else {
                return Err(CliError::user(
                    "PARAMSELECT_MODEL_REQUIRED",
                    "rho=paramselect needs --paramselect-model",
                ));
            };
            let model_path = resolve_path(model_path);
            if !model_path.exists() {
                return Err(CliError::user(
                    "PARAMSELECT_MODEL_REQUIRED",
                    format!("no selector model at {}", model_path.display()),
                ));
            }
            let value: serde_json::Value =
                serde_json::from_reader(std::fs::File::open(&model_path)?)
                    .map_err(|e| CliError::user("INVALID_MODEL", e.to_string()))?;
            let ensemble = TreeEnsemble::from_json(&value)
                .map_err(|e| CliError::user("INVALID_MODEL", e.to_string()))?;
            let surrogate = match &args.surrogate {
                Some(p) => load_dataset(&resolve_path(p))?,
                None => {
                    eprintln!(
                        "warning: no --surrogate given; using the dataset itself for the entropy feature"
                    );
                    dataset.fresh_audit()
                }
            };
            predict_rho(&ensemble, &surrogate, dataset.n(), fit_epsilon(args)?)
                .map_err(|e| CliError::runtime("PARAMSELECT_FAILED", e.to_string()))
        }
    }
}

fn fit_epsilon(args: &FitArgs) -> CliResult<f64> {
    let file = load_file_config(args.config.as_deref())?;
    Ok(resolve_fit(&file, &args.flags)?.epsilon)
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let file = load_file_config(args.config.as_deref())?;
    let resolved = resolve_fit(&file, &args.flags)?;
    let dataset_path = resolve_path(&args.dataset);
    let out = resolve_path(&args.out);
    let dataset = load_dataset(&dataset_path)?;
    let rho = pin_rho(resolved.rho, args, &dataset)?;
    let cfg = resolved.to_fit_config(rho);
    echo_config(
        "fit",
        serde_json::json!({
            "dataset": dataset_path, "out": out,
            "fit": cfg, "workload": args.workload,
        }),
    );
    let workload = match &args.workload {
        Some(p) => read_queries_csv(&resolve_path(p))?,
        None => Vec::new(),
    };
    let (model, audit) =
        fit(&dataset, &cfg, &workload).map_err(|e| CliError::runtime("FIT_FAILED", e.to_string()))?;
    model
        .save(&out)
        .map_err(|e| CliError::runtime("IO_ERROR", e.to_string()))?;
    let audit_json = serde_json::json!({
        "point_reads": audit.point_reads,
        "post_collection_reads": audit.post_collection_reads,
        "compliant": audit.is_compliant(),
    });
    std::fs::write(
        out.join("audit.json"),
        serde_json::to_string_pretty(&audit_json).unwrap(),
    )?;
    println!(
        "{}",
        serde_json::json!({ "bundle": out, "rho": rho, "audit": audit_json })
    );
    Ok(())
}

/// Reads a `cx,cy,r` query CSV (corner coordinates in meters).
pub fn read_queries_csv(path: &Path) -> CliResult<Vec<RangeQuery>> {
    if !path.exists() {
        return Err(CliError::user(
            "QUERIES_NOT_FOUND",
            format!("no query file at {}", path.display()),
        ));
    }
    let text = std::fs::read_to_string(path)?;
    let mut queries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(CliError::user(
                "INVALID_QUERIES",
                format!("line {}: expected cx,cy,r", i + 1),
            ));
        }
        let parse = |j: usize| {
            fields[j].trim().parse::<f64>().map_err(|e| {
                CliError::user("INVALID_QUERIES", format!("line {}: {e}", i + 1))
            })
        };
        let q = RangeQuery::new(PlanarPoint::new(parse(0)?, parse(1)?), parse(2)?)
            .map_err(|e| CliError::user("INVALID_QUERIES", format!("line {}: {e}", i + 1)))?;
        queries.push(q);
    }
    Ok(queries)
}

fn load_bundle(path: &Path) -> CliResult<SnhModel> {
    if !path.join("manifest.json").exists() {
        return Err(CliError::user(
            "MODEL_NOT_FOUND",
            format!("no model bundle at {}", path.display()),
        ));
    }
    SnhModel::load(path).map_err(|e| CliError::runtime("INVALID_MODEL", e.to_string()))
}

pub fn cmd_answer(args: &AnswerArgs) -> CliResult<()> {
    let bundle = resolve_path(&args.bundle);
    let queries_path = resolve_path(&args.queries);
    echo_config(
        "answer",
        serde_json::json!({ "bundle": bundle, "queries": queries_path, "output": args.output }),
    );
    let model = load_bundle(&bundle)?;
    let queries = read_queries_csv(&queries_path)?;
    let mut out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(std::fs::File::create(resolve_path(p))?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "cx,cy,r,answer")?;
    for q in &queries {
        writeln!(
            out,
            "{},{},{},{}",
            q.corner.x,
            q.corner.y,
            q.side,
            model.answer(q)
        )?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let bundle = resolve_path(&args.bundle);
    let dataset_path = resolve_path(&args.dataset);
    echo_config(
        "eval",
        serde_json::json!({
            "bundle": bundle, "dataset": dataset_path,
            "count": args.count, "l": args.l, "u": args.u, "seed": args.seed,
            "output": args.output,
        }),
    );
    let model = load_bundle(&bundle)?;
    let dataset = load_dataset(&dataset_path)?;
    let workload = gen_workload(dataset.region(), args.count, args.l, args.u, args.seed);
    let report = evaluate(&model, &workload, &dataset, None);
    if let Some(p) = &args.output {
        let file = std::fs::File::create(resolve_path(p))?;
        report
            .write_csv(file)
            .map_err(|e| CliError::runtime("IO_ERROR", e.to_string()))?;
    }
    println!("{}", report.summary_json());
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let file = load_file_config(args.config.as_deref())?;
    let resolved = resolve_fit(&file, &args.flags)?;
    let dataset_path = resolve_path(&args.dataset);
    let out = resolve_path(&args.out);
    let epsilons = if args.epsilons.is_empty() {
        vec![0.05, 0.1, 0.2, 0.4, 0.8]
    } else {
        args.epsilons.clone()
    };
    let seeds = if args.seeds.is_empty() {
        vec![resolved.seed]
    } else {
        args.seeds.clone()
    };
    echo_config(
        "sweep",
        serde_json::json!({
            "dataset": dataset_path, "out": out,
            "epsilons": epsilons, "seeds": seeds,
            "count": args.count, "fit": resolved,
        }),
    );
    let dataset = load_dataset(&dataset_path)?;
    let RhoSpec::Meters(rho) = resolved.rho else {
        return Err(CliError::user(
            "INVALID_CONFIG",
            "sweep needs a concrete rho in meters",
        ));
    };
    let side = dataset.region().side;
    let mut file = std::fs::File::create(&out)?;
    writeln!(file, "method,epsilon,seed,mean,median,p90,status,error")?;
    for &epsilon in &epsilons {
        for &seed in &seeds {
            let workload = gen_workload(
                dataset.region(),
                args.count,
                resolved.ladder_l,
                resolved.ladder_u,
                derive_seed(seed, "sweep-workload", 0),
            );
            // one method failing must not kill the other rows
            let snh_row = (|| -> Result<_, String> {
                let mut cfg = resolved.to_fit_config(rho);
                cfg.epsilon = epsilon;
                cfg.seed = seed;
                let d = dataset.fresh_audit();
                let (model, _) = fit(&d, &cfg, &workload.queries).map_err(|e| e.to_string())?;
                Ok(evaluate(&model, &workload, &dataset, None))
            })();
            write_sweep_row(&mut file, "snh", epsilon, seed, snh_row)?;
            let ug_row = (|| -> Result<_, String> {
                let m = ug_granularity(dataset.n(), epsilon, UG_CONSTANT);
                let d = dataset.fresh_audit();
                let hist = collect(&d, side / m as f64, epsilon, derive_seed(seed, "ug", 0))
                    .map_err(|e| e.to_string())?;
                Ok(evaluate(&GridAnswerer::new(hist), &workload, &dataset, None))
            })();
            write_sweep_row(&mut file, "ug", epsilon, seed, ug_row)?;
        }
    }
    println!("{}", serde_json::json!({ "sweep": out }));
    Ok(())
}

fn write_sweep_row(
    out: &mut dyn Write,
    method: &str,
    epsilon: f64,
    seed: u64,
    result: Result<snh_core::eval::EvalReport, String>,
) -> CliResult<()> {
    match result {
        Ok(report) => writeln!(
            out,
            "{method},{epsilon},{seed},{},{},{},ok,",
            report.mean, report.median, report.p90
        )?,
        Err(e) => writeln!(
            out,
            "{method},{epsilon},{seed},,,,error,{}",
            e.replace(',', ";")
        )?,
    }
    Ok(())
}

pub fn cmd_paramselect_train(args: &ParamselectTrainArgs) -> CliResult<()> {
    let samples_path = resolve_path(&args.samples);
    let out = resolve_path(&args.out);
    echo_config(
        "paramselect-train",
        serde_json::json!({
            "samples": samples_path, "out": out,
            "n_trees": args.n_trees, "max_depth": args.max_depth, "seed": args.seed,
        }),
    );
    if !samples_path.exists() {
        return Err(CliError::user(
            "SAMPLES_NOT_FOUND",
            format!("no sample file at {}", samples_path.display()),
        ));
    }
    let samples = read_samples_csv(std::fs::File::open(&samples_path)?)
        .map_err(|e| CliError::user("INVALID_SAMPLES", e.to_string()))?;
    let ensemble = fit_ensemble(&samples, args.n_trees, args.max_depth, args.seed)
        .map_err(|e| CliError::user("INVALID_SAMPLES", e.to_string()))?;
    std::fs::write(&out, serde_json::to_string(&ensemble.to_json()).unwrap())?;
    println!(
        "{}",
        serde_json::json!({ "model": out, "samples": samples.len() })
    );
    Ok(())
}

pub fn cmd_paramselect_predict(args: &ParamselectPredictArgs) -> CliResult<()> {
    let model_path = resolve_path(&args.model);
    let surrogate_path = resolve_path(&args.surrogate);
    echo_config(
        "paramselect-predict",
        serde_json::json!({
            "model": model_path, "surrogate": surrogate_path,
            "n": args.n, "epsilon": args.epsilon,
        }),
    );
    if !model_path.exists() {
        return Err(CliError::user(
            "PARAMSELECT_MODEL_REQUIRED",
            format!("no selector model at {}", model_path.display()),
        ));
    }
    let value: serde_json::Value = serde_json::from_reader(std::fs::File::open(&model_path)?)
        .map_err(|e| CliError::user("INVALID_MODEL", e.to_string()))?;
    let ensemble = TreeEnsemble::from_json(&value)
        .map_err(|e| CliError::user("INVALID_MODEL", e.to_string()))?;
    let surrogate = load_dataset(&surrogate_path)?;
    let phi = features(&surrogate, args.n, args.epsilon)
        .map_err(|e| CliError::runtime("PARAMSELECT_FAILED", e.to_string()))?;
    let rho = ensemble.predict(&phi);
    println!("{}", serde_json::json!({ "rho": rho, "features": phi }));
    Ok(())
}

pub fn cmd_audit(args: &AuditArgs) -> CliResult<()> {
    let bundle = resolve_path(&args.bundle);
    echo_config("audit", serde_json::json!({ "bundle": bundle }));
    let path = bundle.join("audit.json");
    if !path.exists() {
        return Err(CliError::user(
            "AUDIT_NOT_FOUND",
            format!("no audit report at {}", path.display()),
        ));
    }
    let value: serde_json::Value = serde_json::from_reader(std::fs::File::open(&path)?)
        .map_err(|e| CliError::runtime("INVALID_AUDIT", e.to_string()))?;
    println!("{value}");
    Ok(())
}
