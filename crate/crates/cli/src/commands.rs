//! Subcommand implementations.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use kswap::beta_search::{averaged_optimal, grid_search, optimal_per_pair, BetaCurve, PairFailure};
use kswap::donors::{DonorAssignment, DonorRef, DonorSelector};
use kswap::evaluate::{evaluate_pair_with_predictions, EvalConfig, EvalReport, Mode, REPORT_SCHEMA};
use kswap::metrics::SurfaceDiceParams;
use kswap::phantom::{generate_benchmark_with_shape, write_benchmarks};
use kswap::predictor::PredictorSpec;
use kswap::srsim::SrsimParams;
use kswap::transfer::{adapt_volume, TransferConfig};
use kswap::{load_volume, save_volume, ScanCollection, Volume};

use crate::manifest::{create_dir, kind_code, CliError, CliResult, Recorder};
use crate::{parse_severities, AdaptArgs, BetaSearchArgs, DonorArgs, EvalArgs, PhantomArgs, ScoringArgs, SelectionArgs};

#[derive(Serialize)]
struct DonorReport<'a> {
    schema: u32,
    target: &'a str,
    per_slice: &'a [Vec<DonorRef>],
}

fn donor_report<'a>(target: &'a Volume, d: &'a DonorAssignment) -> DonorReport<'a> {
    DonorReport {
        schema: REPORT_SCHEMA,
        target: target.id(),
        per_slice: &d.per_slice,
    }
}

fn check_selection(s: &SelectionArgs) -> CliResult<()> {
    if s.n_mst == 0 {
        return Err(CliError::Args("--n-mst must be at least 1".into()));
    }
    Ok(())
}

fn selection_config(s: &SelectionArgs) -> serde_json::Value {
    json!({ "strategy": s.strategy, "n_mst": s.n_mst, "m": s.m })
}

fn select_donors(target: &Volume, sources: &ScanCollection, s: &SelectionArgs) -> CliResult<DonorAssignment> {
    let selector = DonorSelector::new(sources, &SrsimParams::default())?;
    Ok(selector.for_target(target)?.select(s.strategy, s.n_mst, s.m)?)
}

fn save(rec: &mut Recorder, v: &Volume, path: &Path) -> CliResult<()> {
    save_volume(v, path)?;
    rec.output(path);
    Ok(())
}

pub fn adapt(a: AdaptArgs) -> CliResult<()> {
    check_selection(&a.selection)?;
    TransferConfig { beta: a.beta, ..Default::default() }.validate()?;
    let mut rec = Recorder::new("adapt");
    rec.input_volume(&a.target)?;
    rec.input_dir(&a.sources)?;
    let target = load_volume(&a.target)?;
    let sources = ScanCollection::load_dir(&a.sources)?;
    let donors = select_donors(&target, &sources, &a.selection)?;
    let adapted = adapt_volume(&target, &sources, &donors, a.beta)?;

    create_dir(&a.out)?;
    for v in adapted.per_rank.iter().chain(std::iter::once(&adapted.composite)) {
        save(&mut rec, v, &a.out.join(format!("{}.vol", v.id())))?;
    }
    rec.write_json(&a.out.join("donors.json"), &donor_report(&target, &donors))?;
    let mut config = selection_config(&a.selection);
    config["beta"] = json!(a.beta);
    config["srsim"] = json!(SrsimParams::default());
    rec.finish(&a.out, config)
}

pub fn donors(a: DonorArgs) -> CliResult<()> {
    check_selection(&a.selection)?;
    let mut rec = Recorder::new("donors");
    rec.input_volume(&a.target)?;
    rec.input_dir(&a.sources)?;
    let target = load_volume(&a.target)?;
    let sources = ScanCollection::load_dir(&a.sources)?;
    let donors = select_donors(&target, &sources, &a.selection)?;
    create_dir(&a.out)?;
    rec.write_json(&a.out.join("donors.json"), &donor_report(&target, &donors))?;
    let mut config = selection_config(&a.selection);
    config["srsim"] = json!(SrsimParams::default());
    rec.finish(&a.out, config)
}

fn eval_config(mode: Mode, beta: f64, s: &ScoringArgs) -> CliResult<(EvalConfig, PredictorSpec)> {
    check_selection(&s.selection)?;
    let predictor: PredictorSpec = s.predictor.parse()?;
    let cfg = EvalConfig {
        mode,
        strategy: s.selection.strategy,
        m: s.selection.m,
        transfer: TransferConfig {
            beta,
            n_mst: s.selection.n_mst,
            aggregation: s.aggregation,
            binarize_threshold: s.threshold,
        },
        srsim: SrsimParams::default(),
        surface: SurfaceDiceParams {
            tolerance: s.tolerance,
            unit: s.tolerance_unit,
            ..Default::default()
        },
        seed: s.seed,
    };
    cfg.validate()?;
    Ok((cfg, predictor))
}

fn config_json(cfg: &EvalConfig, predictor: &PredictorSpec) -> serde_json::Value {
    let mut v = json!(cfg);
    v["predictor"] = json!(predictor.to_string());
    v
}

fn record_predictor(rec: &mut Recorder, p: &PredictorSpec) -> CliResult<()> {
    if let PredictorSpec::Precomputed { path } = p {
        if path.is_dir() {
            rec.input_dir(path)?;
        } else {
            rec.input_volume(path)?;
        }
    }
    Ok(())
}

pub fn evaluate(a: EvalArgs) -> CliResult<()> {
    let (cfg, predictor) = eval_config(a.mode, a.beta, &a.scoring)?;
    let mut rec = Recorder::new("evaluate");
    rec.input_dir(&a.sources)?;
    rec.input_dir(&a.targets)?;
    record_predictor(&mut rec, &predictor)?;
    let sources = ScanCollection::load_dir(&a.sources)?;
    let targets = ScanCollection::load_dir(&a.targets)?;
    let (report, probs): (EvalReport, Vec<Volume>) =
        evaluate_pair_with_predictions(&sources, &targets, &cfg, &predictor)?;
    create_dir(&a.out)?;
    rec.write_json(&a.out.join("report.json"), &report)?;
    if a.save_predictions {
        for p in &probs {
            save(&mut rec, p, &a.out.join("predictions").join(format!("{}_prob.vol", p.id())))?;
        }
    }
    println!(
        "{} -> {} [{}]: surface Dice {:.4}, Dice {:.4}",
        report.pair[0], report.pair[1], report.mode, report.surface_dice, report.dice
    );
    rec.finish(&a.out, config_json(&cfg, &predictor))
}

#[derive(Serialize)]
struct PairBeta<'a> {
    source: &'a str,
    target: &'a str,
    beta: f64,
}

#[derive(Serialize)]
struct BetaReport<'a> {
    schema: u32,
    mode: Mode,
    grid: &'a [f64],
    curves: &'a [BetaCurve],
    optimal_per_pair: Vec<PairBeta<'a>>,
    averaged_optimal: Option<f64>,
    failures: &'a [PairFailure],
}

pub fn beta_search(a: BetaSearchArgs) -> CliResult<()> {
    if a.sources.len() != a.targets.len() {
        return Err(CliError::Args(format!(
            "got {} --sources but {} --targets; give one of each per pair",
            a.sources.len(),
            a.targets.len()
        )));
    }
    kswap::beta_search::check_grid(&a.grid)?;
    let (cfg, predictor) = eval_config(a.mode, a.grid[0], &a.scoring)?;
    let mut rec = Recorder::new("beta-search");
    record_predictor(&mut rec, &predictor)?;
    let mut pairs = Vec::with_capacity(a.sources.len());
    for (s, t) in a.sources.iter().zip(&a.targets) {
        rec.input_dir(s)?;
        rec.input_dir(t)?;
        let targets = ScanCollection::load_dir(t)?;
        let targets = match a.validation_scans {
            Some(n) => targets.split_at(n).0,
            None => targets,
        };
        pairs.push((ScanCollection::load_dir(s)?, targets));
    }
    let gs = grid_search(&pairs, &a.grid, &cfg, &predictor)?;
    let per_pair = optimal_per_pair(&gs.curves);
    let averaged = if gs.curves.is_empty() {
        None
    } else {
        Some(averaged_optimal(&gs.curves)?)
    };
    let report = BetaReport {
        schema: REPORT_SCHEMA,
        mode: cfg.mode,
        grid: &a.grid,
        curves: &gs.curves,
        optimal_per_pair: per_pair
            .iter()
            .map(|((s, t), &beta)| PairBeta { source: s, target: t, beta })
            .collect(),
        averaged_optimal: averaged,
        failures: &gs.failures,
    };
    create_dir(&a.out)?;
    rec.write_json(&a.out.join("beta_search.json"), &report)?;
    rec.write_json(&a.out.join("beta_reports.json"), &gs.reports)?;
    if !gs.curves.is_empty() {
        let png = a.out.join("beta_curves.png");
        crate::plot::render(&gs.curves, &png).map_err(|e| CliError::Failed {
            message: format!("could not write {}: {e}", png.display()),
            code: 3,
        })?;
        rec.output(&png);
    }
    for ((s, t), b) in &per_pair {
        println!("{s} -> {t}: best beta {b}");
    }
    if let Some(b) = averaged {
        println!("averaged optimal beta {b}");
    }
    let mut config = config_json(&cfg, &predictor);
    config["grid"] = json!(a.grid);
    config["validation_scans"] = json!(a.validation_scans);
    rec.finish(&a.out, config)?;
    match gs.failures.first() {
        Some(f) if gs.curves.is_empty() => Err(CliError::Failed {
            message: format!("every pair failed; first: {}", f.error),
            code: kind_code(f.kind),
        }),
        _ => Ok(()),
    }
}

pub fn phantom(a: PhantomArgs) -> CliResult<()> {
    let severities = parse_severities(&a.severity)?;
    let shape = match a.shape[..] {
        [s, h, w] => (s, h, w),
        _ => return Err(CliError::Args("--shape takes three comma-separated sizes".into())),
    };
    let mut rec = Recorder::new("phantom");
    let benchmarks = severities
        .iter()
        .map(|&sev| generate_benchmark_with_shape(shape, a.domains, a.scans, sev, a.seed))
        .collect::<Result<Vec<_>, _>>()?;
    for p in write_benchmarks(&a.out, &benchmarks)? {
        rec.output(&p);
    }
    println!(
        "wrote {} domain(s) of {} scan(s) to {}",
        benchmarks.iter().map(|b| b.collections.len()).sum::<usize>(),
        a.scans,
        a.out.display()
    );
    let config = json!({
        "seed": a.seed,
        "severity": severities,
        "domains": a.domains,
        "scans": a.scans,
        "shape": a.shape,
    });
    rec.finish(&a.out, config)
}
