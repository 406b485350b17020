//! AICc model comparison and the parameter-recovery study harness.

mod bias;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_model, FitConfig, FitResult};
use crate::format::fmt12;
use crate::moments::ModelKind;
use crate::phylo::PhyloTree;
use crate::simulate::TipDataset;

pub use bias::{
    bias_study, bias_study_cells, quartile_summary, run_cell, BiasCell, BiasRow, BiasStudyConfig,
    BiasStudyTable, QuartileRow, TrueValues,
};

/// Small-sample correction term of AICc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AiccForm {
    /// `−2 log L + 2nk / (n − k + 1)`.
    #[default]
    PlusOne,
    /// `−2 log L + 2k + 2k(k + 1) / (n − k − 1)`, i.e. `2nk / (n − k − 1)`.
    Conventional,
}

/// `−2 log L + 2nk / (n − k + 1)`.
pub fn aicc(log_likelihood: f64, k: usize, n: usize) -> Result<f64> {
    aicc_with(AiccForm::PlusOne, log_likelihood, k, n)
}

pub fn aicc_with(form: AiccForm, log_likelihood: f64, k: usize, n: usize) -> Result<f64> {
    let (nf, kf) = (n as f64, k as f64);
    let denom = match form {
        AiccForm::PlusOne => nf - kf + 1.0,
        AiccForm::Conventional => nf - kf - 1.0,
    };
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(format!("AICc undefined for n = {n}, k = {k}")));
    }
    Ok(-2.0 * log_likelihood + 2.0 * nf * kf / denom)
}

/// `exp(−½ ΔAICc)`, normalized to sum to one.
pub fn akaike_weights(aiccs: &[f64]) -> Result<Vec<f64>> {
    if aiccs.is_empty() || aiccs.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("Akaike weights need a non-empty list of finite AICc values".into()));
    }
    let min = aiccs.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = aiccs.iter().map(|a| (-0.5 * (a - min)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub fit: FitConfig,
    pub aicc_form: AiccForm,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { fit: FitConfig::default(), aicc_form: AiccForm::PlusOne }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub kind: ModelKind,
    pub fit: Option<FitResult>,
    /// Why the kind was left out of the weights, if it was.
    pub failure: Option<String>,
    pub aicc: Option<f64>,
    pub delta_aicc: Option<f64>,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub entries: Vec<ComparisonEntry>,
    pub selected: Option<ModelKind>,
    /// Set when at least one kind failed and was excluded from the weights.
    pub has_failures: bool,
}

impl ComparisonReport {
    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt12);
        let mut out = String::from("kind\tlogL\tk\tn\taicc\tdelta_aicc\tweight\tr2\tconverged\tstatus\n");
        for e in &self.entries {
            let (ll, k, n, r2, conv) = match &e.fit {
                Some(f) => (fmt12(f.log_likelihood), f.k.to_string(), f.n.to_string(), fmt12(f.r_squared), f.converged.to_string()),
                None => ("NA".into(), "NA".into(), "NA".into(), "NA".into(), "false".into()),
            };
            let status = e.failure.as_deref().unwrap_or("ok").replace(['\t', '\n'], " ");
            out.push_str(&format!(
                "{}\t{ll}\t{k}\t{n}\t{}\t{}\t{}\t{r2}\t{conv}\t{status}\n",
                e.kind,
                opt(e.aicc),
                opt(e.delta_aicc),
                opt(e.weight)
            ));
        }
        out
    }
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed used to fit `kind`; depends only on the run seed and the kind, so a
/// kind listed twice is fitted identically.
pub fn kind_seed(seed: u64, kind: ModelKind) -> u64 {
    let idx = ModelKind::ALL.iter().position(|k| *k == kind).unwrap() as u64;
    mix_seed(seed, 1 + idx)
}

/// Fits every kind and ranks them by AICc. Kinds whose fit fails or does not
/// converge are kept in the report but excluded from the weights.
pub fn compare_models(
    tree: &PhyloTree,
    dataset: &TipDataset,
    kinds: &[ModelKind],
    config: &CompareConfig,
) -> Result<ComparisonReport> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no model kinds to compare".into()));
    }
    dataset.align_to(tree)?;
    let fits: Vec<Result<FitResult>> = kinds
        .par_iter()
        .map(|&kind| {
            let cfg = FitConfig { seed: kind_seed(config.fit.seed, kind), ..config.fit.clone() };
            fit_model(tree, dataset, kind, &cfg)
        })
        .collect();

    let mut entries = Vec::with_capacity(kinds.len());
    for (&kind, fit) in kinds.iter().zip(fits) {
        let entry = match fit {
            Err(e) if !e.is_numerical() && !matches!(e, Error::NoConvergence(_)) => return Err(e),
            Err(e) => ComparisonEntry { kind, fit: None, failure: Some(e.to_string()), aicc: None, delta_aicc: None, weight: None },
            Ok(f) => {
                let a = aicc_with(config.aicc_form, f.log_likelihood, f.k, f.n);
                let failure = match (&a, f.converged) {
                    (Err(e), _) => Some(e.to_string()),
                    (Ok(_), false) => Some("did not converge".to_string()),
                    _ => None,
                };
                ComparisonEntry { kind, aicc: a.ok(), fit: Some(f), failure, delta_aicc: None, weight: None }
            }
        };
        entries.push(entry);
    }

    let ok: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].failure.is_none()).collect();
    let mut selected = None;
    if !ok.is_empty() {
        let vals: Vec<f64> = ok.iter().map(|&i| entries[i].aicc.unwrap()).collect();
        let weights = akaike_weights(&vals)?;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        for (j, &i) in ok.iter().enumerate() {
            entries[i].delta_aicc = Some(vals[j] - min);
            entries[i].weight = Some(weights[j]);
        }
        let best = ok.iter().copied().min_by(|&a, &b| entries[a].aicc.unwrap().total_cmp(&entries[b].aicc.unwrap()));
        selected = best.map(|i| entries[i].kind);
    }
    let has_failures = ok.len() < entries.len();
    if has_failures {
        log::warn!("{} of {} kinds excluded from the Akaike weights", entries.len() - ok.len(), entries.len());
    }
    Ok(ComparisonReport { entries, selected, has_failures })
}
