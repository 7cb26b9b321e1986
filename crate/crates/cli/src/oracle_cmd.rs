//! The `oracle` subcommand: exact target, kernels and stationary
//! distributions of small models, written as CSV.
//!
//! The input holds a `[model]` table and optional `[[samplers]]` entries in
//! the experiment config syntax; other keys are ignored, so an experiment
//! config works as is.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use discrete_langevin::oracle::{
    detailed_balance_defect, exact_kernel_with_cap, exact_target_with_cap, stationary_with, tv_distance,
    write_distribution_csv, write_kernel_csv, StationaryMethod, KERNEL_STATE_CAP,
};
use discrete_langevin::{EnergyModel, Result};
use serde_json::Value;

use crate::build::{alpha_field, build_model, sampler_runs};
use crate::config::{parse_document, ConfigIssue, Format, ModelSpec, SamplerSpec};
use crate::output::{ensure_dir, num, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub model: ModelSpec,
    pub samplers: Vec<SamplerSpec>,
}

pub fn parse_oracle_config(text: &str) -> std::result::Result<OracleConfig, Vec<ConfigIssue>> {
    let map = parse_document(text, Format::sniff(text))?;
    let mut issues = Vec::new();
    let model = match map.get("model") {
        None => {
            issues.push(issue("model", "missing required field"));
            None
        }
        Some(v) => serde_json::from_value::<ModelSpec>(v.clone())
            .map_err(|e| issues.push(issue("model", &e.to_string())))
            .ok(),
    };
    let mut samplers = Vec::new();
    match map.get("samplers") {
        None => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                match serde_json::from_value::<SamplerSpec>(item.clone()) {
                    Ok(s) => samplers.push(s),
                    Err(e) => issues.push(issue(&format!("samplers[{i}]"), &e.to_string())),
                }
            }
        }
        Some(_) => issues.push(issue("samplers", "expected an array of tables")),
    }
    for (i, s) in samplers.iter().enumerate() {
        for a in s.alpha_values().into_iter().flatten() {
            if !(a > 0.0) {
                issues.push(issue(&format!("samplers[{i}]"), &format!("stepsize must be positive, got {a}")));
            }
        }
        if s.batch_size.is_some() {
            issues.push(issue(&format!("samplers[{i}].batch_size"), "exact kernels use full-batch gradients"));
        }
    }
    match model {
        Some(model) if issues.is_empty() => Ok(OracleConfig { model, samplers }),
        _ => Err(issues),
    }
}

fn issue(path: &str, message: &str) -> ConfigIssue {
    ConfigIssue {
        path: path.to_string(),
        line: None,
        message: message.to_string(),
    }
}

fn slug(label: &str, alpha: Option<f64>) -> String {
    let a = alpha_field(alpha);
    if a.is_empty() {
        label.to_string()
    } else {
        format!("{label}_alpha{a}")
    }
}

/// Write `target.csv`, one kernel and stationary file per sampler setting
/// and `oracle_summary.csv` into `out_dir`.
pub fn run_oracle(cfg: &OracleConfig, out_dir: &Path, state_cap: u128, base_dir: Option<&Path>) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let model = build_model(&cfg.model, base_dir)?;
    let target = exact_target_with_cap(&model, state_cap)?;
    let mut files = Vec::new();
    let path = out_dir.join("target.csv");
    write_distribution_csv(BufWriter::new(File::create(&path)?), &target)?;
    files.push(path);
    let mut summary = Table::new(
        "oracle_summary.csv",
        &["sampler", "alpha", "states", "tv_to_target", "detailed_balance_defect"],
    );
    let cap = state_cap.min(KERNEL_STATE_CAP as u128) as usize;
    for spec in &cfg.samplers {
        for run in sampler_runs(spec) {
            let k = exact_kernel_with_cap(&model, &run.kind, cap)?;
            let pi = stationary_with(&k, StationaryMethod::Auto)?;
            let name = slug(&run.label, run.alpha);
            let kpath = out_dir.join(format!("kernel_{name}.csv"));
            write_kernel_csv(BufWriter::new(File::create(&kpath)?), &k)?;
            files.push(kpath);
            let mut stationary = Table::new(format!("stationary_{name}.csv"), &["index", "state", "prob"]);
            let domain = model.domain();
            for (i, p) in pi.iter().enumerate() {
                let levels: Vec<String> = domain
                    .state_at(i)
                    .levels()
                    .iter()
                    .map(|l| domain.level_value(*l).to_string())
                    .collect();
                stationary.push(vec![i.to_string(), levels.join(" "), num(*p)]);
            }
            files.push(stationary.write(out_dir)?);
            summary.push(vec![
                run.label.clone(),
                alpha_field(run.alpha),
                k.n().to_string(),
                num(tv_distance(&pi, target.probs())?),
                num(detailed_balance_defect(&k, &pi)),
            ]);
        }
    }
    files.push(summary.write(out_dir)?);
    Ok(files)
}
