//! Segmentation accuracy with phase alignment.

use crate::error::{Result, SegError};
use crate::types::LabelMap;

/// Largest phase count accepted by the exhaustive alignment.
pub const MAX_ALIGN_PHASES: usize = 8;

fn confusion(pred: &LabelMap, truth: &LabelMap, k: usize) -> Result<Vec<Vec<usize>>> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(SegError::DimensionMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut m = vec![vec![0usize; k]; k];
    for (&a, &b) in pred.labels().iter().zip(truth.labels()) {
        if a >= k || b >= k {
            return Err(SegError::InvalidInput(format!("label {} out of range for {k} phases", a.max(b))));
        }
        m[a][b] += 1;
    }
    Ok(m)
}

fn for_each_permutation(k: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(perm: &mut Vec<usize>, used: &mut [bool], visit: &mut dyn FnMut(&[usize])) {
        if perm.len() == used.len() {
            visit(perm);
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                perm.push(i);
                rec(perm, used, visit);
                perm.pop();
                used[i] = false;
            }
        }
    }
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut visit);
}

/// Relabels `pred` by the permutation that maximizes agreement with `truth`.
///
/// Ties between permutations go to the first in lexicographic order, so the
/// identity wins whenever it is optimal.
pub fn align_labels(pred: &LabelMap, truth: &LabelMap, phases: usize) -> Result<LabelMap> {
    if phases > MAX_ALIGN_PHASES {
        return Err(SegError::InvalidInput(format!(
            "alignment is exhaustive and supports at most {MAX_ALIGN_PHASES} phases, got {phases}"
        )));
    }
    let m = confusion(pred, truth, phases)?;
    let mut best = (0usize, (0..phases).collect::<Vec<_>>());
    let mut first = true;
    for_each_permutation(phases, |perm| {
        let agree: usize = perm.iter().enumerate().map(|(a, &b)| m[a][b]).sum();
        if first || agree > best.0 {
            best = (agree, perm.to_vec());
            first = false;
        }
    });
    let relabeled = pred.labels().iter().map(|&l| best.1[l]).collect();
    LabelMap::new(pred.width(), pred.height(), phases, relabeled)
}

/// Percentage of pixels whose aligned label matches the ground truth.
pub fn segmentation_accuracy(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    let phases = pred
        .phases()
        .max(truth.phases())
        .max(pred.labels().iter().chain(truth.labels()).max().map_or(0, |m| m + 1));
    let aligned = align_labels(pred, truth, phases)?;
    let hits = aligned.labels().iter().zip(truth.labels()).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / truth.pixels() as f64)
}
