use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use adaptevo::compare::{
    bias_study_cells, compare_models, quartile_summary, run_cell, BiasRow, BiasStudyConfig,
    BiasStudyTable, CompareConfig, QuartileRow,
};
use adaptevo::format::fmt12;
use adaptevo::phylo::{generate_tree, serialize_newick};
use adaptevo::simulate::{simulate_path, simulate_tips, PredictorModel, SimConfig};
use adaptevo::{fit_model, FitConfig, FitResult, InitialState, ModelParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{BiasStudyArgs, Command, CompareArgs, FitArgs, FitOptions, Format, RerunArgs, SimulateArgs};
use crate::data::{read_dataset, read_text, read_tree};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::output::{to_json, write};

pub fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::Fit(a) => fit(command, a),
        Command::Simulate(a) => simulate(command, a),
        Command::Compare(a) => compare(command, a),
        Command::BiasStudy(a) => bias(command, a),
        Command::Rerun(a) => rerun(a),
    }
}

fn emit(out: Option<&Path>, name: &str, contents: &str) -> CliResult<()> {
    match out {
        Some(dir) => write(dir, name, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn fit_config(o: &FitOptions) -> FitConfig {
    FitConfig { seed: o.seed, tol: o.tol, free_initial_rate: o.free_initial_rate, ..FitConfig::default() }
}

const FIT_TSV_HEADER: &str =
    "kind\tb0\tb1\talpha_y\talpha_theta\tsigma_y\tsigma_theta\ttau\tlogL\tr2\tk\tn\tconverged\titers\tseed\n";

fn fit_tsv_row(f: &FitResult) -> String {
    let p = &f.params;
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
        f.kind,
        fmt12(f.b[0]),
        fmt12(f.b[1]),
        fmt12(p.alpha_y),
        fmt12(p.alpha_theta),
        fmt12(p.sigma_y),
        fmt12(p.sigma_theta),
        fmt12(p.tau),
        fmt12(f.log_likelihood),
        fmt12(f.r_squared),
        f.k,
        f.n,
        f.converged,
        f.iterations,
        f.seed
    )
}

/// 101 evenly spaced samples of the fitted line over the observed x range.
fn line_tsv(fit: &FitResult, xs: &[f64]) -> String {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::from("x\ty_hat\n");
    for i in 0..=100 {
        let x = lo + (hi - lo) * i as f64 / 100.0;
        out.push_str(&format!("{}\t{}\n", fmt12(x), fmt12(fit.predict(x))));
    }
    out
}

fn fit(command: &Command, a: &FitArgs) -> CliResult<()> {
    let tree = read_tree(&a.input.tree)?;
    let data = read_dataset(&a.input.data, a.input.log10)?;
    let config = fit_config(&a.options);
    let result = fit_model(&tree, &data, a.kind, &config)?;
    let out = a.out.as_deref();
    match a.format {
        Format::Json => emit(out, "fit.json", &to_json(&result))?,
        Format::Tsv => emit(out, "fit.tsv", &format!("{FIT_TSV_HEADER}{}", fit_tsv_row(&result)))?,
    }
    if let Some(dir) = out {
        write(dir, "line.tsv", &line_tsv(&result, &data.x))?;
        RunManifest::new(command, inputs(&[&a.input.tree, &a.input.data]), config.seed, &config).write(dir)?;
    }
    if !result.converged {
        return Err(CliError::NotConverged(format!("{} fit did not converge", a.kind)));
    }
    Ok(())
}

fn inputs(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn compare(command: &Command, a: &CompareArgs) -> CliResult<()> {
    let tree = read_tree(&a.input.tree)?;
    let data = read_dataset(&a.input.data, a.input.log10)?;
    let config = CompareConfig { fit: fit_config(&a.options), aicc_form: a.aicc_form() };
    let report = compare_models(&tree, &data, &a.kinds, &config)?;
    let out = a.out.as_deref();
    match a.format {
        Format::Tsv => emit(out, "comparison.tsv", &report.to_tsv())?,
        Format::Json => emit(out, "comparison.json", &to_json(&report))?,
    }
    if let Some(dir) = out {
        RunManifest::new(command, inputs(&[&a.input.tree, &a.input.data]), a.options.seed, &config).write(dir)?;
    }
    if report.selected.is_none() {
        return Err(CliError::NotConverged("no model kind produced a usable fit".into()));
    }
    if report.has_failures {
        log::warn!("some kinds failed and were excluded from the weights");
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationSetup {
    params: ModelParams,
    init: InitialState,
    config: SimConfig,
}

fn simulate(command: &Command, a: &SimulateArgs) -> CliResult<()> {
    let params = ModelParams::new(
        a.kind,
        a.alpha_y.unwrap_or(0.0),
        a.alpha_theta.unwrap_or(0.0),
        a.sigma_y.unwrap_or(0.0),
        a.sigma_theta.unwrap_or(0.0),
        a.tau.unwrap_or(0.0),
    )
    .map_err(|e| CliError::Input(e.to_string()))?;
    let theta0 = a.theta0.unwrap_or(a.b0);
    let init = InitialState { y0: a.y0.unwrap_or(theta0), theta0, sigma0: params.sigma_y };
    let predictor = match a.alpha_x {
        Some(alpha_x) => PredictorModel::Ou { alpha_x, sigma_x: a.sigma_x },
        None => PredictorModel::Bm { sigma_x: a.sigma_x },
    };
    let config = SimConfig { dt: a.dt, seed: a.seed, predictor, b0: a.b0, b1: a.b1, x0: 0.0, record_path: false };
    let out = a.out.as_deref();
    if a.paths && out.is_none() {
        return Err(CliError::Input("--paths needs --out".into()));
    }

    let (tree, generated) = match (&a.tree, a.generate) {
        (Some(path), _) => (Some(read_tree(path)?), false),
        (None, Some(kind)) => (Some(generate_tree(kind, a.tips, a.depth, a.seed)?), true),
        (None, None) => (None, false),
    };
    if tree.is_none() && !a.paths {
        return Err(CliError::Input("give --tree or --generate (or --paths with --duration)".into()));
    }
    if let Some(tree) = &tree {
        let data = simulate_tips(tree, &params, &init, &config)?;
        emit(out, "tips.tsv", &data.to_tsv())?;
        if generated {
            if let Some(dir) = out {
                write(dir, "tree.nwk", &format!("{}\n", serialize_newick(tree)))?;
            }
        }
    }
    if a.paths {
        let duration = a
            .duration
            .or_else(|| tree.as_ref().map(|t| t.max_tip_depth()))
            .ok_or_else(|| CliError::Input("--paths without a tree needs --duration".into()))?;
        let path_cfg = SimConfig { record_path: true, ..config.clone() };
        let path = simulate_path(&params, &init, &path_cfg, duration)?;
        write(out.unwrap(), "path.tsv", &path.to_tsv())?;
    }
    if let Some(dir) = out {
        let ins = a.tree.iter().map(|p| p.display().to_string()).collect();
        RunManifest::new(command, ins, a.seed, &SimulationSetup { params, init, config }).write(dir)?;
    }
    Ok(())
}

const CELLS_FILE: &str = "cells.jsonl";

#[derive(Serialize, Deserialize)]
struct CellRecord {
    cell: usize,
    rows: Vec<BiasRow>,
}

/// Completed cells from an earlier, possibly interrupted, run. A torn last
/// line is ignored.
fn load_cells(path: &Path) -> CliResult<BTreeMap<usize, Vec<BiasRow>>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    for line in read_text(path)?.lines() {
        if let Ok(rec) = serde_json::from_str::<CellRecord>(line) {
            done.insert(rec.cell, rec.rows);
        }
    }
    Ok(done)
}

fn bias(command: &Command, a: &BiasStudyArgs) -> CliResult<()> {
    let text = read_text(&a.config)?;
    let mut config: BiasStudyConfig =
        toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", a.config.display())))?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out = a.out.as_path();
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let manifest = RunManifest::new(command, inputs(&[&a.config]), config.seed, &config);
    let manifest_path = out.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let previous = RunManifest::read(&manifest_path)?;
        if previous.resolved != manifest.resolved {
            return Err(CliError::Input(format!(
                "{} holds a run with a different configuration",
                out.display()
            )));
        }
    }
    manifest.write(out)?;

    let cells_path = out.join(CELLS_FILE);
    let mut done = load_cells(&cells_path)?;
    let all = bias_study_cells(&config);
    let todo: Vec<_> = all.iter().filter(|c| !done.contains_key(&c.index)).copied().collect();
    if !done.is_empty() {
        log::info!("resuming: {} of {} cells already done", done.len(), all.len());
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&cells_path)
        .map_err(|e| CliError::io(&cells_path, e))?;
    let chunk = 4 * rayon::current_num_threads();
    for batch in todo.chunks(chunk) {
        let results: Vec<Vec<BiasRow>> =
            batch.par_iter().map(|c| run_cell(&config, c)).collect::<Result<_, _>>()?;
        for (cell, rows) in batch.iter().zip(results) {
            let line = serde_json::to_string(&CellRecord { cell: cell.index, rows: rows.clone() })
                .expect("serializable rows");
            writeln!(file, "{line}").map_err(|e| CliError::io(&cells_path, e))?;
            done.insert(cell.index, rows);
        }
        file.flush().map_err(|e| CliError::io(&cells_path, e))?;
    }

    let table = BiasStudyTable { rows: done.into_values().flatten().collect() };
    write(out, "bias_table.tsv", &table.to_tsv())?;
    write(out, "bias_summary.tsv", &QuartileRow::to_tsv(&quartile_summary(&table.rows)))?;
    Ok(())
}

fn rerun(a: &RerunArgs) -> CliResult<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    let mut command = manifest.command;
    if let Some(dir) = &a.out {
        match &mut command {
            Command::Fit(c) => c.out = Some(dir.clone()),
            Command::Compare(c) => c.out = Some(dir.clone()),
            Command::Simulate(c) => c.out = Some(dir.clone()),
            Command::BiasStudy(c) => c.out = dir.clone(),
            Command::Rerun(_) => return Err(CliError::Input("a manifest cannot record a rerun".into())),
        }
    }
    if matches!(command, Command::Rerun(_)) {
        return Err(CliError::Input("a manifest cannot record a rerun".into()));
    }
    run(&command)
}

