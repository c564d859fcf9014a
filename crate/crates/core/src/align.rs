//! Ordering of separated components across frequency bins and across
//! successive dynamic updates.
//!
//! Both problems maximize an l1 x l-infinity objective: the sum over
//! channels of the largest absolute correlation coefficient over a window of
//! time lags. Across bins the correlated quantities are raw spectral
//! magnitudes `|s_i(w, t)|` over frames; across updates they are the
//! time-domain outputs on the shared overlap interval.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{best_lag, lag_score, LagAggregation};

/// Below this ratio of margin to best objective a permutation choice is
/// flagged as low confidence.
pub const LOW_CONFIDENCE_RATIO: f64 = 0.5;

/// Bin used as the reference in mode B (`w_1 = 4/T`).
pub const FIXED_REFERENCE_BIN: usize = 4;

/// How the reference bin is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReferenceMode {
    /// Search `[w_L, w_U]` for the bin with the least cross-channel
    /// correlation.
    #[default]
    A,
    /// Always bin 4.
    B,
}

/// `C(w) = sum_{i != j} score(|s_i|, |s_j|)` for one bin. For two channels
/// both ordered pairs are counted, so a perfectly correlated pair gives 2.
pub fn separation_quality(
    amplitudes: &[Vec<f64>],
    max_lag: usize,
    mode: LagAggregation,
) -> Result<f64> {
    let n = amplitudes.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += lag_score(&amplitudes[i], &amplitudes[j], max_lag, mode)?;
            }
        }
    }
    Ok(total)
}

/// Reference bin: bin 4 in mode B; in mode A the minimizer of `C` over the
/// sortable bins of `band` (inclusive), ties resolved to the lowest bin.
pub fn select_reference(
    quality: &[Option<f64>],
    mode: ReferenceMode,
    band: (usize, usize),
) -> Result<usize> {
    match mode {
        ReferenceMode::B => Ok(FIXED_REFERENCE_BIN),
        ReferenceMode::A => {
            let hi = band.1.min(quality.len().saturating_sub(1));
            let mut best: Option<(usize, f64)> = None;
            for (b, q) in quality.iter().enumerate().take(hi + 1).skip(band.0) {
                if let Some(q) = q {
                    if best.is_none_or(|(_, v)| *q < v) {
                        best = Some((b, *q));
                    }
                }
            }
            best.map(|(b, _)| b).ok_or_else(|| {
                Error::Degenerate(format!(
                    "no sortable bin in reference band {}..={}",
                    band.0, band.1
                ))
            })
        }
    }
}

/// All permutations of `0..n` in lexicographic order (identity first).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Best and runner-up permutation for a score matrix `s[i][j]` (reference
/// channel `i` against candidate channel `j`).
fn best_assignment(scores: &[Vec<f64>]) -> (Vec<usize>, f64, f64) {
    let n = scores.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut second = f64::NEG_INFINITY;
    for sigma in permutations(n) {
        let obj: f64 = sigma.iter().enumerate().map(|(i, &j)| scores[i][j]).sum();
        match &best {
            Some((_, b)) if obj <= *b => second = second.max(obj),
            _ => {
                if let Some((_, b)) = &best {
                    second = second.max(*b);
                }
                best = Some((sigma, obj));
            }
        }
    }
    let (sigma, obj) = best.unwrap_or_else(|| ((0..n).collect(), 0.0));
    let margin = if second.is_finite() { obj - second } else { obj };
    (sigma, obj, margin)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationChoice {
    /// Candidate channel `sigma[i]` is matched with reference channel `i`.
    pub sigma: Vec<usize>,
    pub objective: f64,
    /// Objective of the best permutation minus that of the runner-up.
    pub margin: f64,
    /// False when some channel had zero amplitude variance; `sigma` is then
    /// the identity.
    pub sortable: bool,
    pub low_confidence: bool,
}

/// Permutation of `candidate` channels maximizing
/// `sum_i score(reference_i, candidate_sigma(i))` over all `n!` orderings.
pub fn frequency_permutation(
    reference: &[Vec<f64>],
    candidate: &[Vec<f64>],
    max_lag: usize,
    mode: LagAggregation,
) -> Result<PermutationChoice> {
    let n = reference.len();
    if candidate.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} reference channels vs {} candidate channels",
            n,
            candidate.len()
        )));
    }
    let mut scores = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if reference[i].len() != candidate[j].len() {
                return Err(Error::DimensionMismatch("frame counts differ".into()));
            }
            match lag_score(&reference[i], &candidate[j], max_lag, mode) {
                Ok(s) => scores[i][j] = s,
                Err(Error::Degenerate(_)) => {
                    return Ok(PermutationChoice {
                        sigma: (0..n).collect(),
                        objective: 0.0,
                        margin: 0.0,
                        sortable: false,
                        low_confidence: true,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
    let (sigma, objective, margin) = best_assignment(&scores);
    Ok(PermutationChoice {
        sigma,
        objective,
        margin,
        sortable: true,
        low_confidence: margin < LOW_CONFIDENCE_RATIO * objective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAlignment {
    /// New channel `sigma[i]` continues previous channel `i`.
    pub sigma: Vec<usize>,
    /// Sign of the correlation at the best lag for each matched pair.
    pub signs: Vec<f64>,
    pub objective: f64,
    pub margin: f64,
    pub low_confidence: bool,
}

/// Order and polarity of a new output segment relative to previously emitted
/// output on their common interval.
pub fn time_permutation(
    previous: &[&[f64]],
    new: &[&[f64]],
    max_lag: usize,
    mode: LagAggregation,
) -> Result<TimeAlignment> {
    let n = previous.len();
    if new.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} previous channels vs {} new channels",
            n,
            new.len()
        )));
    }
    let len = previous.first().map_or(0, |c| c.len());
    if previous.iter().chain(new).any(|c| c.len() != len) {
        return Err(Error::DimensionMismatch("overlap segments differ in length".into()));
    }
    if len <= 2 * max_lag + 1 {
        return Err(Error::InvalidInput(format!(
            "overlap of {len} samples too short for max lag {max_lag}"
        )));
    }
    let mut scores = vec![vec![0.0; n]; n];
    let mut signed = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (s, r) = match (
                lag_score(previous[i], new[j], max_lag, mode),
                best_lag(previous[i], new[j], max_lag),
            ) {
                (Ok(s), Ok((_, r))) => (s, r),
                (Err(Error::Degenerate(_)), _) | (_, Err(Error::Degenerate(_))) => {
                    return Ok(TimeAlignment {
                        sigma: (0..n).collect(),
                        signs: vec![1.0; n],
                        objective: 0.0,
                        margin: 0.0,
                        low_confidence: true,
                    })
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            scores[i][j] = s;
            signed[i][j] = r;
        }
    }
    let (sigma, objective, margin) = best_assignment(&scores);
    let signs = sigma
        .iter()
        .enumerate()
        .map(|(i, &j)| if signed[i][j] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    Ok(TimeAlignment {
        sigma,
        signs,
        objective,
        margin,
        low_confidence: margin < LOW_CONFIDENCE_RATIO * objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignOptions {
    pub max_lag: usize,
    pub reference: ReferenceMode,
    /// Inclusive bin range searched in mode A.
    pub band: (usize, usize),
    pub lag_mode: LagAggregation,
}

/// Per-bin permutations resolving the ordering ambiguity of a window.
#[derive(Debug, Clone, Serialize)]
pub struct PermutationPlan {
    pub reference_bin: usize,
    /// `sigma[b][i]` is the component at bin `b` that becomes output `i`.
    pub sigma: Vec<Vec<usize>>,
    pub objective: Vec<f64>,
    pub margin: Vec<f64>,
    /// `C(w)` where it was computed.
    pub quality: Vec<Option<f64>>,
    pub sortable: Vec<bool>,
    pub low_confidence: Vec<bool>,
}

impl PermutationPlan {
    pub fn reference_quality(&self) -> Option<f64> {
        self.quality.get(self.reference_bin).copied().flatten()
    }
}

/// Chooses a reference bin and aligns every other bin directly against it.
///
/// `amplitudes[b]` holds `|s_i(b, t)|` for each component, or `None` for a
/// bin that could not be separated. Bins whose alignment is undefined inherit
/// the permutation of the nearest lower aligned bin (identity if none).
pub fn plan_permutations(
    amplitudes: &[Option<Vec<Vec<f64>>>],
    opts: &AlignOptions,
) -> Result<PermutationPlan> {
    let num_bins = amplitudes.len();
    let n = amplitudes
        .iter()
        .flatten()
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::Degenerate("no separable bin to align".into()))?;

    let in_band = |b: usize| opts.reference == ReferenceMode::A && b >= opts.band.0 && b <= opts.band.1;
    let quality: Vec<Option<f64>> = amplitudes
        .par_iter()
        .enumerate()
        .map(|(b, a)| match a {
            Some(a) if in_band(b) => separation_quality(a, opts.max_lag, opts.lag_mode).ok(),
            _ => None,
        })
        .collect();

    let reference_bin = match select_reference(&quality, opts.reference, opts.band) {
        Ok(b) if amplitudes.get(b).is_some_and(Option::is_some) => b,
        Ok(b) => {
            log::warn!("reference bin {b} is not separable; searching the band instead");
            let fallback: Vec<Option<f64>> = amplitudes
                .iter()
                .map(|a| {
                    a.as_ref()
                        .and_then(|a| separation_quality(a, opts.max_lag, opts.lag_mode).ok())
                })
                .collect();
            select_reference(&fallback, ReferenceMode::A, (0, num_bins - 1))?
        }
        Err(e) => return Err(e),
    };
    let reference = amplitudes[reference_bin]
        .as_ref()
        .ok_or_else(|| Error::Degenerate("reference bin is not separable".into()))?;

    let choices: Vec<Option<PermutationChoice>> = amplitudes
        .par_iter()
        .enumerate()
        .map(|(b, a)| {
            if b == reference_bin {
                return Ok(Some(PermutationChoice {
                    sigma: (0..n).collect(),
                    objective: 0.0,
                    margin: f64::INFINITY,
                    sortable: true,
                    low_confidence: false,
                }));
            }
            match a {
                Some(a) => frequency_permutation(reference, a, opts.max_lag, opts.lag_mode).map(Some),
                None => Ok(None),
            }
        })
        .collect::<Result<_>>()?;

    let mut sigma = Vec::with_capacity(num_bins);
    let mut objective = Vec::with_capacity(num_bins);
    let mut margin = Vec::with_capacity(num_bins);
    let mut sortable = Vec::with_capacity(num_bins);
    let mut low_confidence = Vec::with_capacity(num_bins);
    let mut last_sorted: Vec<usize> = (0..n).collect();
    for choice in choices {
        match choice {
            Some(c) if c.sortable => {
                last_sorted = c.sigma.clone();
                sigma.push(c.sigma);
                objective.push(c.objective);
                margin.push(c.margin);
                sortable.push(true);
                low_confidence.push(c.low_confidence);
            }
            _ => {
                sigma.push(last_sorted.clone());
                objective.push(0.0);
                margin.push(0.0);
                sortable.push(false);
                low_confidence.push(true);
            }
        }
    }
    Ok(PermutationPlan {
        reference_bin,
        sigma,
        objective,
        margin,
        quality,
        sortable,
        low_confidence,
    })
}
