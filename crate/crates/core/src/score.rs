//! The composite score `EICS = ΔẼI / (1 + C_sh)` and its ablations.

use serde::{Deserialize, Serialize};

use crate::circuit::{ActivationState, Circuit, Partition};
use crate::ei::{delta_ei, EiConfig, EiReport};
use crate::error::{EicsError, Result};
use crate::sheaf::{self, EdgeWeighting, SheafReport};

/// Which node assignment feeds the inconsistency term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CshSource {
    #[default]
    Raw,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lambda2Config {
    pub weighting: EdgeWeighting,
    pub beta: f64,
}

impl Default for Lambda2Config {
    fn default() -> Self {
        Self {
            weighting: EdgeWeighting::inverse_operator_norm(),
            beta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EicsConfig {
    pub ei: EiConfig,
    pub csh_source: CshSource,
    /// Compute the λ2 diagnostic. It never enters the score.
    pub lambda2: Option<Lambda2Config>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EicsResult {
    pub score: f64,
    pub c_sh: f64,
    pub consistency_factor: f64,
    pub emergence: f64,
    /// `1 / (1 + C_sh)` alone
    pub ablation_a1: f64,
    /// `ΔẼI` alone
    pub ablation_a2: f64,
    pub lambda2: Option<f64>,
    /// First-order standard error of the score in fast mode, from the
    /// emergence difference's error with the macro term held fixed.
    pub score_std_error: Option<f64>,
    pub sheaf: SheafReport,
    pub ei: EiReport,
    pub config: EicsConfig,
    pub seed: u64,
}

/// Combines components into the final score.
pub fn combine(emergence: f64, c_sh: f64) -> f64 {
    emergence / (1.0 + c_sh)
}

/// Scores one forward state of a circuit.
///
/// Everything is a deterministic function of the circuit, the state and the
/// config (fast mode draws only from the configured seed).
pub fn eics_score(
    circuit: &Circuit,
    a: &ActivationState,
    partition: &Partition,
    config: &EicsConfig,
) -> Result<EicsResult> {
    circuit.ensure_valid()?;
    a.check_against(circuit)?;
    let mut sheaf_report = match config.csh_source {
        CshSource::Raw => sheaf::sheaf_inconsistency(circuit, a, config.ei.epsilon)?,
        CshSource::Projected => {
            let (s, _) = sheaf::least_squares_section(circuit, a)?;
            sheaf::sheaf_inconsistency(circuit, &s, config.ei.epsilon)?
        }
    };
    let ei = delta_ei(circuit, partition, &config.ei)?;
    let lambda2 = match &config.lambda2 {
        Some(l) => {
            let rep = sheaf::lambda2(circuit, &l.weighting, l.beta)?;
            sheaf_report.lambda2 = Some(rep.lambda2);
            sheaf_report.beta = Some(l.beta);
            Some(rep.lambda2)
        }
        None => None,
    };
    let c_sh = sheaf_report.c_sh;
    let emergence = ei.normalized;
    let consistency = 1.0 / (1.0 + c_sh);
    let score_std_error = ei
        .delta_std_error
        .map(|se| se / (config.ei.epsilon + ei.ei_macro.abs()) * consistency);
    Ok(EicsResult {
        score: combine(emergence, c_sh),
        c_sh,
        consistency_factor: consistency,
        emergence,
        ablation_a1: consistency,
        ablation_a2: emergence,
        lambda2,
        score_std_error,
        sheaf: sheaf_report,
        ei,
        config: config.clone(),
        seed: config.ei.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub tau: f64,
    pub auroc: f64,
    pub f1: f64,
}

/// AUROC by the Mann-Whitney rank statistic (average ranks for ties).
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EicsError::InvalidArgument(
            "threshold selection needs both positive and negative labels".into(),
        ));
    }
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(EicsError::InvalidArgument("scores must be finite".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]].0 == scores[idx[i]].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len())
        .filter(|&k| scores[k].1)
        .map(|k| ranks[k])
        .sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Picks the threshold maximizing F1 for the rule `score >= tau` over the
/// minimum score and all midpoints between distinct scores. Ties go to the
/// lowest threshold.
pub fn threshold_select(scores: &[(f64, bool)]) -> Result<ThresholdSelection> {
    let auroc = auroc(scores)?;
    let mut distinct: Vec<f64> = scores.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![distinct[0]];
    candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));

    let f1_at = |tau: f64| {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for &(s, y) in scores {
            match (s >= tau, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fneg;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let mut best = (candidates[0], f1_at(candidates[0]));
    for &t in &candidates[1..] {
        let f = f1_at(t);
        if f > best.1 {
            best = (t, f);
        }
    }
    Ok(ThresholdSelection {
        tau: best.0,
        auroc,
        f1: best.1,
    })
}
