use std::fs;
use std::path::{Path, PathBuf};

use hfsm::cv::{DatasetSource, ExperimentPlan};
use hfsm::data::{load_table, load_table_unlabeled, save_table, INTERCEPT};
use hfsm::interpret::{
    code_frequency_csv, compare_documents, comparison_csv, smr, stratify_document, stratum_code_frequencies,
};
use hfsm::kernels::{data_hash, diagonal_dominance, FittedKernel};
use hfsm::solver::{fit as fit_model, ModelDocument, ModelSpec};
use hfsm::synth::{gen_causal_example, gen_primal_dual, gen_scenario, CausalExampleSpec, ScenarioSpec};
use hfsm::{run_experiment, Error, Result, Table};
use serde_json::json;

use crate::args::{CvArgs, FitArgs, GenArgs, InterpretArgs, KernelCmdArgs, PredictArgs};
use crate::manifest::RunManifest;

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

/// `<file>.manifest.json` next to an output file.
fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    stem.with_file_name(name)
}

pub fn gen(a: &GenArgs) -> Result<u8> {
    let (table, config): (Table, serde_json::Value) = if let Some(s) = a.scenario {
        let spec = ScenarioSpec::named(s, a.n, a.seed)?;
        (gen_scenario(&spec)?, json!({ "generator": "scenario", "spec": spec }))
    } else if let (Some(beta0), Some(delta)) = (a.beta0, a.delta) {
        let spec = ScenarioSpec::custom(beta0, delta, a.n, a.seed);
        (gen_scenario(&spec)?, json!({ "generator": "scenario", "spec": spec }))
    } else if let Some(kind) = a.causal {
        let spec = CausalExampleSpec {
            kind: kind.into(),
            n: a.n,
            seed: a.seed,
        };
        (gen_causal_example(&spec)?, json!({ "generator": "causal", "spec": spec }))
    } else if a.primal_dual {
        (
            gen_primal_dual(a.n, a.seed)?,
            json!({ "generator": "primal_dual", "n": a.n, "seed": a.seed }),
        )
    } else {
        return Err(Error::Config(
            "choose one of --scenario, --beta0/--delta, --causal, --primal-dual".into(),
        ));
    };
    save_table(&table, &a.out)?;
    let mut manifest = RunManifest::new("gen", config, vec![a.seed])?;
    manifest.artifact(&a.out)?;
    manifest.write(&manifest_path(&a.out))?;
    println!("wrote {} rows to {}", table.len(), a.out.display());
    Ok(0)
}

pub fn kernel(a: &KernelCmdArgs) -> Result<u8> {
    let train: Table = load_table(&a.data, None)?;
    let spec = a
        .kernel
        .spec()?
        .ok_or_else(|| Error::Config("a kernel is required (--kernel-json or --kind)".into()))?;
    let fitted = FittedKernel::fit(&spec, &train)?;
    let rows: Option<Table> = a.rows.as_deref().map(|p| load_table(p, None)).transpose()?;
    let row_table = rows.as_ref().unwrap_or(&train);
    let matrix = fitted.matrix(row_table, &train)?;
    let hash = format!(
        "{}:{}",
        data_hash(row_table.ids(), &fitted.inputs(row_table)?),
        data_hash(train.ids(), &fitted.inputs(&train)?)
    );
    matrix.save(&a.out, &hash)?;
    let fitted_path = with_suffix(&a.out, ".kernel.json");
    write(&fitted_path, &serde_json::to_string_pretty(&fitted)?)?;

    let mut code = 0;
    let dominance_path = with_suffix(&a.out, ".dominance.json");
    let report = if matrix.is_square() && a.rows.is_none() {
        match diagonal_dominance(&matrix.values) {
            Ok(d) => {
                println!("diagonal dominance {d} (n = {})", matrix.values.nrows());
                json!({ "n": matrix.values.nrows(), "dominance": d, "lower_bound": lower_bound(matrix.values.nrows()) })
            }
            Err(e @ Error::ZeroOffDiagonal { .. }) => {
                eprintln!("error: {e}");
                code = 4;
                json!({ "n": matrix.values.nrows(), "dominance": null, "error": e.to_string() })
            }
            Err(e) => return Err(e),
        }
    } else {
        json!({ "dominance": null, "note": "not a training-by-training block" })
    };
    write(&dominance_path, &serde_json::to_string_pretty(&report)?)?;

    let mut manifest = RunManifest::new("kernel", json!({ "spec": spec }), vec![])?;
    manifest.input(&a.data)?;
    if let Some(r) = &a.rows {
        manifest.input(r)?;
    }
    for p in [
        a.out.with_extension("bin"),
        a.out.with_extension("json"),
        fitted_path,
        dominance_path,
    ] {
        manifest.artifact(&p)?;
    }
    manifest.write(&with_suffix(&a.out, ".manifest.json"))?;
    Ok(code)
}

fn lower_bound(n: usize) -> Option<f64> {
    (n > 1).then(|| n as f64 / (n as f64 - 1.0))
}

pub fn fit(a: &FitArgs) -> Result<u8> {
    let mut train: Table = load_table(&a.data, None)?;
    if !a.features.is_empty() {
        let mut keep = vec![INTERCEPT];
        keep.extend(a.features.iter().map(String::as_str).filter(|f| *f != INTERCEPT));
        train = train.select_features(&keep)?;
    }
    let kernel_spec = a.kernel.spec()?;
    let mut spec = ModelSpec::new(a.variant.into(), a.lambda, kernel_spec.clone());
    if !a.fixed_beta.is_empty() {
        spec.fixed_beta = Some(a.fixed_beta.clone());
    }
    spec.validate()?;
    let config = a.solver.config();
    let (result, fitted) = match &kernel_spec {
        Some(ks) => {
            let fk = FittedKernel::fit(ks, &train)?;
            let k = fk.operator(&train, &train)?;
            (fit_model(&spec, &train, Some(k.as_ref()), &config)?, Some(fk))
        }
        None => (fit_model(&spec, &train, None, &config)?, None),
    };
    let doc = ModelDocument::from_fit(&result, fitted.as_ref(), &train)?;
    doc.save(&a.out)?;
    let d = &result.diagnostics;
    println!(
        "{} lambda={} objective={} iterations={} kkt={:.3e} converged={} representatives={}",
        spec.variant.name(),
        spec.lambda,
        d.objective,
        d.iterations,
        d.kkt,
        d.converged,
        result.n_representatives()
    );
    if !d.converged {
        eprintln!("warning: solver stopped at the iteration limit before meeting the optimality tolerance");
    }
    let mut manifest = RunManifest::new("fit", json!({ "model": spec, "solver": config }), vec![])?;
    manifest.input(&a.data)?;
    manifest.artifact(&a.out)?;
    manifest.write(&manifest_path(&a.out))?;
    Ok(0)
}

pub fn cv(a: &CvArgs) -> Result<u8> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if let Some(p) = a.parallelism {
        plan.parallelism = p;
    }
    let out = a
        .out
        .clone()
        .or_else(|| plan.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output` in the plan".into()))?;
    plan.output = Some(out.clone());
    plan.validate()?;
    let report = run_experiment(&plan)?;
    let written = report.write(&out)?;

    let failed: usize = report.aggregates.iter().map(|(_, a)| a.n_failed).sum();
    let mut seeds = vec![plan.seed];
    let mut manifest = RunManifest::new(
        "cv",
        json!({ "plan": &plan, "failed_cells": failed }),
        Vec::new(),
    )?;
    manifest.input(&a.plan)?;
    match &plan.dataset {
        DatasetSource::File { path, .. } => manifest.input(path)?,
        DatasetSource::Scenario { seed, .. }
        | DatasetSource::Causal { seed, .. }
        | DatasetSource::PrimalDual { seed, .. } => seeds.push(*seed),
    }
    manifest.seeds = seeds;
    for p in &written {
        manifest.artifact(p)?;
    }
    manifest.write(&out.join("manifest.json"))?;

    println!("model,auroc,auprc,calibration_intercept,calibration_slope,failed_cells");
    for (name, agg) in &report.aggregates {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
        println!(
            "{name},{},{},{},{},{}",
            f(agg.auroc),
            f(agg.auprc),
            f(agg.calibration_intercept),
            f(agg.calibration_slope),
            agg.n_failed
        );
    }
    if failed > 0 {
        eprintln!("error: {failed} cell(s) failed; see the status column of results.csv");
        return Ok(4);
    }
    Ok(0)
}

pub fn predict(a: &PredictArgs) -> Result<u8> {
    let doc = ModelDocument::load(&a.model)?;
    let table: Table = load_table_unlabeled(&a.data, None)?;
    let probabilities = if table.is_empty() {
        Vec::new()
    } else {
        doc.predict(&table)?
    };
    let mut text = String::from("id,probability\n");
    for (id, p) in table.ids().iter().zip(&probabilities) {
        text.push_str(&format!("{id},{p}\n"));
    }
    write(&a.out, &text)?;
    let mut manifest = RunManifest::new("predict", json!({ "model": &a.model }), vec![])?;
    manifest.input(&a.model)?;
    manifest.input(&a.data)?;
    manifest.artifact(&a.out)?;
    manifest.write(&manifest_path(&a.out))?;
    Ok(0)
}

pub fn interpret(a: &InterpretArgs) -> Result<u8> {
    let docs = a
        .model
        .iter()
        .map(|p| ModelDocument::load(p))
        .collect::<Result<Vec<_>>>()?;
    let table: Table = load_table(&a.data, None)?;
    fs::create_dir_all(&a.out).map_err(|e| io(&a.out, e))?;
    let mut written = Vec::new();

    let coefficients = a.out.join("coefficients.csv");
    let text = match docs.as_slice() {
        [one] => {
            let mut t = String::from("feature,beta\n");
            for c in &one.beta {
                t.push_str(&format!("{},{}\n", c.name, c.value));
            }
            t
        }
        [first, second] => comparison_csv(&compare_documents(first, second)?),
        _ => unreachable!("clap limits --model to one or two values"),
    };
    write(&coefficients, &text)?;
    written.push(coefficients);

    let doc = &docs[0];
    if doc.variant.uses_kernel() {
        let index = table.index_of();
        if let Some(r) = doc.representatives.iter().find(|r| !index.contains_key(r.id.as_str())) {
            return Err(Error::Data(format!(
                "representative `{}` is not in {}; pass the model's training table",
                r.id,
                a.data.display()
            )));
        }
        let strata = stratify_document(doc, table.ids());
        let summary = a.out.join("strata.csv");
        write(&summary, &strata.summary_csv())?;
        written.push(summary);
        let members = a.out.join("strata_ids.csv");
        let mut t = String::from("id,alpha_rounded,stratum\n");
        for (id, r) in &strata.rounded {
            t.push_str(&format!("{id},{r},{}\n", strata.stratum_of(id).unwrap_or("")));
        }
        write(&members, &t)?;
        written.push(members);

        if let Some(group) = &a.smr_group {
            for (label, ids) in [("positive", &strata.positive_ids), ("negative", &strata.negative_ids)] {
                if ids.is_empty() {
                    continue;
                }
                let path = a.out.join(format!("smr_{label}.csv"));
                let text = match smr(&table, ids, group) {
                    Ok(report) => report.to_csv(),
                    Err(e @ Error::UndefinedSmr(_)) => format!("undefined\n{e}\n"),
                    Err(e) => return Err(e),
                };
                write(&path, &text)?;
                written.push(path);
            }
        }
        if let Some(domain) = &a.code_domain {
            let path = a.out.join("code_frequencies.csv");
            write(&path, &code_frequency_csv(&stratum_code_frequencies(&table, &strata, domain)?))?;
            written.push(path);
        }
    }

    let mut manifest = RunManifest::new(
        "interpret",
        json!({ "models": &a.model, "smr_group": &a.smr_group, "code_domain": &a.code_domain }),
        vec![],
    )?;
    for m in &a.model {
        manifest.input(m)?;
    }
    manifest.input(&a.data)?;
    for p in &written {
        manifest.artifact(p)?;
    }
    manifest.write(&a.out.join("manifest.json"))?;
    Ok(0)
}
