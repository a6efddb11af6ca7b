//! Mask selection from supplied weights.
//!
//! Blocks are ranked by an importance measure and the lowest ranked ones are
//! zeroed, either in one shot or in rounds of a fixed fraction of what is
//! still left to zero. The penalty functions that would drive Γ during
//! training are provided as plain objective evaluators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bscore::{BlockMask, BlockShape, BsError};
use crate::tensor::Tensor4;

#[derive(Debug, Error)]
pub enum SparsifyError {
    #[error(transparent)]
    Block(#[from] BsError),
    #[error("target sparsity {0} is outside [0, 1]")]
    Target(f64),
    #[error("step fraction {0} is outside (0, 1]")]
    Step(f64),
    #[error("penalty: {0}")]
    Penalty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMeasure {
    L1,
    L2,
    Variance,
}

impl std::str::FromStr for ImportanceMeasure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "variance" | "var" => Ok(Self::Variance),
            other => Err(format!("unknown importance measure `{other}` (l1, l2, variance)")),
        }
    }
}

/// Which mean the variance measure subtracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MeanScope {
    #[default]
    Block,
    Tensor,
}

/// One score per mask cell, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ScoreGrid {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

pub fn score_blocks(w: &Tensor4<f64>, shape: BlockShape, measure: ImportanceMeasure) -> Result<ScoreGrid, SparsifyError> {
    score_blocks_with(w, shape, measure, MeanScope::Block)
}

pub fn score_blocks_with(
    w: &Tensor4<f64>,
    shape: BlockShape,
    measure: ImportanceMeasure,
    mean: MeanScope,
) -> Result<ScoreGrid, SparsifyError> {
    let [o, h, k, i] = w.dims();
    let (rows, cols) = BlockMask::grid_for(o, i, shape);
    if rows * cols == 0 {
        return Err(BsError::Shape("weight tensor has no channels".into()).into());
    }
    let tensor_mean = w.data().iter().sum::<f64>() / w.data().len().max(1) as f64;
    let mut values = Vec::with_capacity(rows * cols);
    let mut buf = Vec::new();
    for br in 0..rows {
        for bc in 0..cols {
            buf.clear();
            for oc in br * shape.bo..((br + 1) * shape.bo).min(o) {
                for y in 0..h {
                    for x in 0..k {
                        for ic in bc * shape.bi..((bc + 1) * shape.bi).min(i) {
                            buf.push(w.get([oc, y, x, ic]));
                        }
                    }
                }
            }
            values.push(measure_of(&buf, measure, mean, tensor_mean));
        }
    }
    Ok(ScoreGrid { rows, cols, values })
}

fn measure_of(vals: &[f64], measure: ImportanceMeasure, mean: MeanScope, tensor_mean: f64) -> f64 {
    match measure {
        ImportanceMeasure::L1 => vals.iter().map(|v| v.abs()).sum(),
        ImportanceMeasure::L2 => vals.iter().map(|v| v * v).sum::<f64>().sqrt(),
        ImportanceMeasure::Variance => {
            let n = vals.len() as f64;
            let mu = match mean {
                MeanScope::Block => vals.iter().sum::<f64>() / n,
                MeanScope::Tensor => tensor_mean,
            };
            vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScheduleMode {
    #[default]
    OneShot,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    pub mode: ScheduleMode,
    pub target: f64,
    pub step_fraction: f64,
    pub granularity: BlockShape,
}

impl SparsitySchedule {
    pub fn one_shot(target: f64, granularity: BlockShape) -> Self {
        Self { mode: ScheduleMode::OneShot, target, step_fraction: 0.05, granularity }
    }

    pub fn incremental(target: f64, granularity: BlockShape) -> Self {
        Self { mode: ScheduleMode::Incremental, ..Self::one_shot(target, granularity) }
    }

    fn validate(&self) -> Result<(), SparsifyError> {
        if !(0.0..=1.0).contains(&self.target) {
            return Err(SparsifyError::Target(self.target));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(SparsifyError::Step(self.step_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSelection {
    pub mask: BlockMask,
    /// Blocks zeroed in each round; a single entry for one-shot selection.
    pub rounds: Vec<usize>,
}

/// Scores `w` and selects the mask.
pub fn select_mask(w: &Tensor4<f64>, measure: ImportanceMeasure, schedule: &SparsitySchedule) -> Result<BlockMask, SparsifyError> {
    let scores = score_blocks(w, schedule.granularity, measure)?;
    Ok(select_from_scores(&scores, schedule)?.mask)
}

/// Zeroes the `⌊target · cells⌋` lowest scoring cells.
///
/// Incremental selection zeroes `max(1, ⌊step · remaining⌋)` cells per round,
/// where `remaining` is the number still needed to reach the target. Scores
/// are not refreshed between rounds. Ties go to the lower `(row, col)`.
pub fn select_from_scores(scores: &ScoreGrid, schedule: &SparsitySchedule) -> Result<MaskSelection, SparsifyError> {
    schedule.validate()?;
    let cells = scores.values.len();
    let goal = (schedule.target * cells as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..cells).collect();
    order.sort_by(|&a, &b| scores.values[a].total_cmp(&scores.values[b]).then(a.cmp(&b)));

    let mut mask = BlockMask::ones(scores.rows, scores.cols, schedule.granularity);
    let mut rounds = Vec::new();
    let mut zeroed = 0;
    match schedule.mode {
        ScheduleMode::OneShot => {
            for &cell in &order[..goal] {
                mask.set(cell / scores.cols, cell % scores.cols, false);
            }
            rounds.push(goal);
        }
        ScheduleMode::Incremental => {
            while zeroed < goal {
                let remaining = goal - zeroed;
                let step = ((schedule.step_fraction * remaining as f64).floor() as usize).clamp(1, remaining);
                // Lowest scoring cells that are still set.
                let picked: Vec<usize> = order.iter().copied().filter(|&c| mask.get(c / scores.cols, c % scores.cols)).take(step).collect();
                for cell in &picked {
                    mask.set(cell / scores.cols, cell % scores.cols, false);
                }
                zeroed += picked.len();
                rounds.push(picked.len());
            }
        }
    }
    Ok(MaskSelection { mask, rounds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyVariant {
    /// `-(max Γ - min Γ) + β·L2(ΣΓ - T) + ι·L1(Γ)`
    V1,
    /// V1 plus the soft interval terms `max(-γ, 0) + max(γ - 1, 0)`.
    V2,
    /// Interval terms, `-min Γ / max Γ`, and the same norm terms.
    V3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub alpha: f64,
    pub beta: f64,
    pub iota: f64,
    /// Target count of nonzero blocks.
    pub t_target: f64,
    pub variant: PenaltyVariant,
}

/// Log-sum-exp `(1/α) log Σ exp(α xᵢ)`, evaluated with a max shift.
pub fn lse(x: &[f64], alpha: f64) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = x.iter().map(|v| ((v - m) * alpha).exp()).sum();
    m + s.ln() / alpha
}

/// Smooth minimum `-LSE(-x, α)`.
pub fn lse_min(x: &[f64], alpha: f64) -> f64 {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    -lse(&neg, alpha)
}

/// Evaluates the mask penalty λ with every max/min replaced by its LSE form.
pub fn penalty(gamma: &[f64], params: &PenaltyParams) -> Result<f64, SparsifyError> {
    if params.alpha.is_nan() || params.alpha <= 0.0 {
        return Err(SparsifyError::Penalty(format!("alpha must be positive, got {}", params.alpha)));
    }
    if gamma.is_empty() {
        return Err(SparsifyError::Penalty("empty mask".into()));
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(SparsifyError::Penalty("non-finite mask value".into()));
    }
    let a = params.alpha;
    let hi = lse(gamma, a);
    let lo = lse_min(gamma, a);
    let sum: f64 = gamma.iter().sum();
    let norms = params.beta * (sum - params.t_target).abs() + params.iota * gamma.iter().map(|v| v.abs()).sum::<f64>();
    let interval = || -> f64 { gamma.iter().map(|&g| lse(&[-g, 0.0], a) + lse(&[g - 1.0, 0.0], a)).sum() };
    let value = match params.variant {
        PenaltyVariant::V1 => -(hi - lo) + norms,
        PenaltyVariant::V2 => interval() - (hi - lo) + norms,
        PenaltyVariant::V3 => {
            if hi == 0.0 {
                return Err(SparsifyError::Penalty("max(Γ) is zero, ratio undefined".into()));
            }
            interval() - lo / hi + norms
        }
    };
    if !value.is_finite() {
        return Err(SparsifyError::Penalty("penalty is not finite".into()));
    }
    Ok(value)
}
