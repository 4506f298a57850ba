//! CLS replacement and similarity-guided patch retention.
//!
//! The audio vector takes the CLS slot; the `k` patches most cosine-similar
//! to it are kept and the rest are zeroed. Ties go to the lower patch index.

use std::cmp::Ordering;

use crate::store::VisualTokenGrid;
use crate::{Error, Result, CLIP_DIM};

/// Budget presets: audio-leaning and vision-leaning.
pub const AUDIO_BUDGET: usize = 15;
pub const VISION_BUDGET: usize = 150;

/// Cosine similarity in `f64`; zero when either vector has zero norm.
pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_unchecked(a, b))
}

pub(crate) fn cosine_unchecked(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubstitutionResult {
    pub grid: VisualTokenGrid,
    /// Retained patch rows (1-based grid row indices), ascending.
    pub selected_indices: Vec<usize>,
    /// `similarities[i - 1]` is the cosine between `f_a` and patch row `i`.
    pub similarities: Vec<f64>,
}

/// Orders patch positions by descending similarity, lower index first on ties.
pub fn rank_order(similarities: &[f64], a: usize, b: usize) -> Ordering {
    similarities[b]
        .total_cmp(&similarities[a])
        .then_with(|| a.cmp(&b))
}

pub fn substitute(f_a: &[f32], grid: &VisualTokenGrid, k: usize) -> Result<SubstitutionResult> {
    if f_a.len() != CLIP_DIM {
        return Err(Error::Shape(format!(
            "audio vector has {} entries, expected {CLIP_DIM}",
            f_a.len()
        )));
    }
    let n = grid.patches();
    let k = k.min(n);
    let similarities: Vec<f64> = (1..=n)
        .map(|i| cosine_unchecked(f_a, grid.row(i)))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    if k > 0 && k < n {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(&similarities, a, b));
    }
    let mut selected: Vec<usize> = order[..k].iter().map(|&i| i + 1).collect();
    selected.sort_unstable();

    let mut out = grid.clone();
    out.row_mut(0).copy_from_slice(f_a);
    let mut keep = vec![false; n + 1];
    for &i in &selected {
        keep[i] = true;
    }
    for (i, &kept) in keep.iter().enumerate().skip(1) {
        if !kept {
            out.row_mut(i).fill(0.0);
        }
    }
    Ok(SubstitutionResult {
        grid: out,
        selected_indices: selected,
        similarities,
    })
}
