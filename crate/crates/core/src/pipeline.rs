//! Batch and dynamic (sliding-window) separation.
//!
//! A window of frames is separated in three steps: JADE in every bin,
//! alignment of the per-bin orderings against a reference bin, and the
//! support-minimizing rescaling that yields time-domain filters. The dynamic
//! mode repeats this every `dnT` frames on updated moment sums, aligns each
//! new filter bank to the previous output on a shared interval and appends
//! only the samples that were not emitted before.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{plan_permutations, time_permutation, AlignOptions, PermutationPlan, ReferenceMode, TimeAlignment};
use crate::error::{Error, Result};
use crate::jade::{estimate_mixing, CMatrix};
use crate::rescale::{align_and_normalize, apply_demix_range, build_filter_bank, solve_scaling, DemixFilterBank, ScalingOptions};
use crate::signal_io::{partial_path, TimeSeries};
use crate::spectral::{hop_for, SpectralTransform};
use crate::stats::{LagAggregation, MomentSums, Sample};

/// Number of channels (and sources) the separator handles.
pub const CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    #[serde(rename = "T")]
    pub frame_len: usize,
    pub overlap: f64,
    /// Frames in the statistics window (`n_T`).
    #[serde(rename = "nT")]
    pub window_frames: usize,
    /// Frames the window advances per update (`dn_T`).
    #[serde(rename = "dnT")]
    pub stride_frames: usize,
    /// Frames shared by consecutive outputs for order/sign alignment (`Dn_T`).
    #[serde(rename = "DnT")]
    pub align_frames: usize,
    /// Minimum number of frames for batch processing.
    #[serde(rename = "nT_batch")]
    pub batch_frames: usize,
    #[serde(rename = "K0")]
    pub k0: usize,
    #[serde(rename = "K1")]
    pub k1: usize,
    #[serde(rename = "K2")]
    pub k2: usize,
    pub beta: f64,
    pub q: usize,
    pub reference: ReferenceMode,
    /// Lowest bin searched for the reference in mode A (default 0).
    pub w_lo: Option<usize>,
    /// Highest bin searched for the reference in mode A (default `T/2`).
    pub w_hi: Option<usize>,
    pub lag_mode: LagAggregation,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Case1,
    Case2,
    Case3,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" | "1" => Ok(Preset::Case1),
            "case2" | "2" => Ok(Preset::Case2),
            "case3" | "3" => Ok(Preset::Case3),
            _ => Err(Error::InvalidInput(format!("unknown preset {s:?}"))),
        }
    }
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self::preset(Preset::Case2)
    }
}

impl SeparationConfig {
    /// Parameter rows used for the three experiments.
    pub fn preset(preset: Preset) -> Self {
        let base = SeparationConfig {
            frame_len: 256,
            overlap: 0.5,
            window_frames: 100,
            stride_frames: 20,
            align_frames: 40,
            batch_frames: 160,
            k0: 15,
            k1: 20,
            k2: 20,
            beta: 1.04,
            q: 2,
            reference: ReferenceMode::A,
            w_lo: None,
            w_hi: None,
            lag_mode: LagAggregation::Max,
            seed: 0,
        };
        match preset {
            Preset::Case1 => SeparationConfig {
                frame_len: 512,
                overlap: 0.0,
                align_frames: 30,
                batch_frames: 200,
                k0: 4,
                k1: 10,
                ..base
            },
            Preset::Case2 => base,
            Preset::Case3 => SeparationConfig { k0: 10, ..base },
        }
    }

    pub fn hop(&self) -> Result<usize> {
        hop_for(self.frame_len, self.overlap)
    }

    pub fn band(&self) -> (usize, usize) {
        (self.w_lo.unwrap_or(0), self.w_hi.unwrap_or(self.frame_len / 2))
    }

    pub fn validate(&self) -> Result<()> {
        let hop = self.hop()?;
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.frame_len < 8 {
            return bad(format!("T = {} is too small", self.frame_len));
        }
        if self.window_frames < 4 || self.stride_frames == 0 || self.align_frames == 0 || self.batch_frames < 4 {
            return bad("frame counts must be positive (nT and batch nT at least 4)".into());
        }
        if self.stride_frames >= self.window_frames {
            return bad(format!("dnT = {} must be below nT = {}", self.stride_frames, self.window_frames));
        }
        if self.align_frames > self.window_frames - self.stride_frames {
            return bad(format!(
                "DnT = {} exceeds nT - dnT = {}",
                self.align_frames,
                self.window_frames - self.stride_frames
            ));
        }
        if self.k0 == 0 || self.k1 == 0 {
            return bad("K0 and K1 must be positive".into());
        }
        if self.k0 >= self.window_frames / 2 {
            return bad(format!("K0 = {} too large for nT = {}", self.k0, self.window_frames));
        }
        if self.align_frames * hop <= 2 * self.k1 + 1 {
            return bad(format!("alignment interval of {} samples too short for K1 = {}", self.align_frames * hop, self.k1));
        }
        if !(self.beta > 1.0) || !self.beta.is_finite() {
            return bad(format!("beta = {} must exceed 1", self.beta));
        }
        if self.q < 1 || self.q >= self.frame_len {
            return bad(format!("q = {} must lie in [1, T)", self.q));
        }
        let (lo, hi) = self.band();
        if lo > hi || hi > self.frame_len / 2 {
            return bad(format!("reference band {lo}..={hi} outside 0..={}", self.frame_len / 2));
        }
        Ok(())
    }

    fn align_options(&self) -> AlignOptions {
        AlignOptions {
            max_lag: self.k0,
            reference: self.reference,
            band: self.band(),
            lag_mode: self.lag_mode,
        }
    }

    fn scaling_options(&self) -> ScalingOptions {
        ScalingOptions { beta: self.beta, q: self.q }
    }

    /// Samples covered by `frames` consecutive frames.
    pub fn span(&self, frames: usize) -> Result<usize> {
        Ok(if frames == 0 { 0 } else { (frames - 1) * self.hop()? + self.frame_len })
    }
}

/// Diagnostics of one window solve (`update = 0` is the initial window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub window_start: usize,
    pub window_end: usize,
    /// Output samples emitted after this update.
    pub emitted_end: usize,
    pub reference_bin: usize,
    /// Cross-channel amplitude correlation at the reference bin, when it was
    /// computed.
    pub reference_quality: Option<f64>,
    pub margin_min: f64,
    pub margin_median: f64,
    pub low_confidence_bins: usize,
    pub unsortable_bins: usize,
    pub degenerate_bins: usize,
    pub poorly_identified_bins: usize,
    pub wls_objective: Vec<f64>,
    pub wls_baseline: Vec<f64>,
    pub wls_regularized: Vec<bool>,
    pub wls_fell_back: Vec<bool>,
    pub support_metric: Vec<f64>,
    pub filter_residue: f64,
    pub time_alignment: Option<TimeAlignment>,
    pub continuity_gains: Option<Vec<f64>>,
}

/// Filter bank of one window together with the diagnostics of its solve.
#[derive(Debug, Clone)]
pub struct WindowSolution {
    pub bank: DemixFilterBank,
    pub plan: PermutationPlan,
    pub degenerate: Vec<bool>,
    pub poorly_identified: usize,
    pub wls_objective: Vec<f64>,
    pub wls_baseline: Vec<f64>,
    pub wls_regularized: Vec<bool>,
    pub wls_fell_back: Vec<bool>,
    pub filter_residue: f64,
}

/// Rotates a demixing row so that it is as close to real as possible and
/// drops the imaginary part. Used at the DC and Nyquist bins, where the data
/// are real.
fn project_row_real(m: &mut CMatrix, i: usize) {
    let s: Complex64 = (0..m.ncols()).map(|j| m[(i, j)] * m[(i, j)]).sum();
    let rot = Complex64::from_polar(1.0, -0.5 * s.arg());
    for j in 0..m.ncols() {
        m[(i, j)] = Complex64::new((m[(i, j)] * rot).re, 0.0);
    }
}

/// Steps I-III on a set of per-bin moment sums and the bin data they came
/// from: `bins[b][t]` is the mixture sample of frame `t` at bin `b`.
pub fn solve_window(moments: &[MomentSums], bins: &[Vec<Sample>], cfg: &SeparationConfig) -> Result<WindowSolution> {
    let half = cfg.frame_len / 2 + 1;
    if moments.len() != half || bins.len() != half {
        return Err(Error::DimensionMismatch(format!(
            "{} moment sums and {} bin streams for {half} bins",
            moments.len(),
            bins.len()
        )));
    }
    let estimates: Vec<Option<(CMatrix, bool)>> = moments
        .par_iter()
        .enumerate()
        .map(|(b, m)| match m.cumulants().and_then(|c| estimate_mixing(&c)) {
            Ok(est) => {
                let finite = est.h_inv.iter().all(|z| z.re.is_finite() && z.im.is_finite());
                finite.then_some((est.h_inv, est.diagnostics.poorly_identified))
            }
            Err(e) => {
                log::debug!("bin {b} left unseparated: {e}");
                None
            }
        })
        .collect();
    let degenerate: Vec<bool> = estimates.iter().map(Option::is_none).collect();
    let poorly_identified = estimates.iter().flatten().filter(|(_, p)| *p).count();
    let n_degenerate = degenerate.iter().filter(|d| **d).count();
    if n_degenerate > 0 {
        log::info!("{n_degenerate} of {half} bins are degenerate and use the identity");
    }

    let amplitudes: Vec<Option<Vec<Vec<f64>>>> = estimates
        .par_iter()
        .zip(bins.par_iter())
        .map(|(est, data)| {
            est.as_ref().map(|(h_inv, _)| {
                (0..CHANNELS)
                    .map(|p| data.iter().map(|x| (h_inv[(p, 0)] * x[0] + h_inv[(p, 1)] * x[1]).norm()).collect())
                    .collect()
            })
        })
        .collect();
    let plan = plan_permutations(&amplitudes, &cfg.align_options())?;

    let mut h_inv: Vec<CMatrix> = estimates
        .iter()
        .zip(&plan.sigma)
        .map(|(est, sigma)| match est {
            Some((m, _)) => DMatrix::from_fn(CHANNELS, CHANNELS, |i, j| m[(sigma[i], j)]),
            None => CMatrix::identity(CHANNELS, CHANNELS),
        })
        .collect();
    for b in [0, half - 1] {
        for i in 0..CHANNELS {
            project_row_real(&mut h_inv[b], i);
        }
    }

    let opts = cfg.scaling_options();
    let solutions = (0..CHANNELS)
        .into_par_iter()
        .map(|i| {
            let entries: Vec<Vec<Complex64>> = (0..CHANNELS).map(|j| h_inv.iter().map(|m| m[(i, j)]).collect()).collect();
            solve_scaling(&entries, &degenerate, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let lambdas: Vec<Vec<Complex64>> = solutions.iter().map(|s| s.lambda.clone()).collect();
    let (bank, filter_residue) = build_filter_bank(&h_inv, &lambdas)?;
    Ok(WindowSolution {
        bank,
        plan,
        degenerate,
        poorly_identified,
        wls_objective: solutions.iter().map(|s| s.objective).collect(),
        wls_baseline: solutions.iter().map(|s| s.baseline_objective).collect(),
        wls_regularized: solutions.iter().map(|s| s.regularized).collect(),
        wls_fell_back: solutions.iter().map(|s| s.fell_back).collect(),
        filter_residue,
    })
}

fn record(sol: &WindowSolution, update: usize, window: (usize, usize), emitted_end: usize) -> UpdateRecord {
    let plan = &sol.plan;
    let mut margins: Vec<f64> = (0..plan.sigma.len())
        .filter(|&b| plan.sortable[b] && b != plan.reference_bin)
        .map(|b| plan.margin[b])
        .collect();
    margins.sort_by(f64::total_cmp);
    UpdateRecord {
        update,
        window_start: window.0,
        window_end: window.1,
        emitted_end,
        reference_bin: plan.reference_bin,
        reference_quality: plan.reference_quality(),
        margin_min: margins.first().copied().unwrap_or(0.0),
        margin_median: margins.get(margins.len() / 2).copied().unwrap_or(0.0),
        low_confidence_bins: plan.low_confidence.iter().filter(|f| **f).count(),
        unsortable_bins: plan.sortable.iter().filter(|s| !**s).count(),
        degenerate_bins: sol.degenerate.iter().filter(|d| **d).count(),
        poorly_identified_bins: sol.poorly_identified,
        wls_objective: sol.wls_objective.clone(),
        wls_baseline: sol.wls_baseline.clone(),
        wls_regularized: sol.wls_regularized.clone(),
        wls_fell_back: sol.wls_fell_back.clone(),
        support_metric: sol.bank.support_metrics(),
        filter_residue: sol.filter_residue,
        time_alignment: None,
        continuity_gains: None,
    }
}

fn check_mixture(mix: &TimeSeries) -> Result<()> {
    if mix.num_channels() != CHANNELS {
        return Err(Error::InvalidInput(format!("need {CHANNELS} channels, got {}", mix.num_channels())));
    }
    mix.check_finite()
}

/// Frames that fit in `len` samples.
fn frames_in(len: usize, frame_len: usize, hop: usize) -> usize {
    if len < frame_len {
        0
    } else {
        (len - frame_len) / hop + 1
    }
}

fn frame_spectrum(fft: &SpectralTransform, mix: &TimeSeries, start: usize) -> Result<Vec<Sample>> {
    let len = fft.len();
    let a = fft.forward_half(&mix.channel(0)[start..start + len])?;
    let b = fft.forward_half(&mix.channel(1)[start..start + len])?;
    Ok(a.into_iter().zip(b).map(|(x, y)| [x, y]).collect())
}

fn transpose(frames: &VecDeque<Vec<Sample>>, half: usize) -> Vec<Vec<Sample>> {
    (0..half).map(|b| frames.iter().map(|f| f[b]).collect()).collect()
}

/// Sliding-window separation state.
#[derive(Debug, Clone)]
pub struct SeparationState {
    cfg: SeparationConfig,
    hop: usize,
    fft: SpectralTransform,
    /// First frame of the current window.
    window_start: usize,
    spectra: VecDeque<Vec<Sample>>,
    moments: Vec<MomentSums>,
    bank: DemixFilterBank,
    emitted: Vec<Vec<f64>>,
    updates: usize,
    log: Vec<UpdateRecord>,
}

impl SeparationState {
    pub fn config(&self) -> &SeparationConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &DemixFilterBank {
        &self.bank
    }

    pub fn emitted(&self) -> &[Vec<f64>] {
        &self.emitted
    }

    pub fn emitted_len(&self) -> usize {
        self.emitted[0].len()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Current window as a frame range.
    pub fn window(&self) -> (usize, usize) {
        (self.window_start, self.window_start + self.cfg.window_frames)
    }

    pub fn diagnostics(&self) -> &[UpdateRecord] {
        &self.log
    }

    /// Whether `mix` holds the frames needed for another update.
    pub fn can_step(&self, mix: &TimeSeries) -> bool {
        frames_in(mix.len(), self.cfg.frame_len, self.hop) >= self.window().1 + self.cfg.stride_frames
    }
}

/// Separates the first `nT` frames of `mix` and emits their output.
pub fn init_state(mix: &TimeSeries, cfg: &SeparationConfig) -> Result<SeparationState> {
    cfg.validate()?;
    check_mixture(mix)?;
    let hop = cfg.hop()?;
    let available = frames_in(mix.len(), cfg.frame_len, hop);
    if available < cfg.window_frames {
        return Err(Error::InsufficientData(format!(
            "{} frames needed for the initial window, {available} available",
            cfg.window_frames
        )));
    }
    let fft = SpectralTransform::new(cfg.frame_len);
    let half = cfg.frame_len / 2 + 1;
    let spectra = (0..cfg.window_frames)
        .map(|t| frame_spectrum(&fft, mix, t * hop))
        .collect::<Result<VecDeque<_>>>()?;
    let bins = transpose(&spectra, half);
    let moments = bins.iter().map(|d| MomentSums::accumulate(d)).collect::<Result<Vec<_>>>()?;
    let sol = solve_window(&moments, &bins, cfg)?;
    let end = cfg.span(cfg.window_frames)?;
    let emitted = apply_demix_range(mix, &sol.bank, 0, end)?;
    let log = vec![record(&sol, 0, (0, cfg.window_frames), end)];
    Ok(SeparationState {
        cfg: cfg.clone(),
        hop,
        fft,
        window_start: 0,
        spectra,
        moments,
        bank: sol.bank,
        emitted,
        updates: 0,
        log,
    })
}

/// Advances the window by `dnT` frames and appends the output of the new
/// frames. `mix` is the mixture received so far; it must extend the data the
/// state has already seen.
pub fn step_update(state: &mut SeparationState, mix: &TimeSeries) -> Result<()> {
    check_mixture(mix)?;
    let cfg = state.cfg.clone();
    let hop = state.hop;
    if !state.can_step(mix) {
        return Err(Error::InsufficientData(format!(
            "update needs {} frames, {} available",
            state.window().1 + cfg.stride_frames,
            frames_in(mix.len(), cfg.frame_len, hop)
        )));
    }
    let half = cfg.frame_len / 2 + 1;
    let (_, old_end) = state.window();
    let added = (old_end..old_end + cfg.stride_frames)
        .map(|t| frame_spectrum(&state.fft, mix, t * hop))
        .collect::<Result<Vec<_>>>()?;
    let removed: Vec<Vec<Sample>> = state.spectra.drain(..cfg.stride_frames).collect();
    state
        .moments
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(b, m)| {
            let rem: Vec<Sample> = removed.iter().map(|f| f[b]).collect();
            let add: Vec<Sample> = added.iter().map(|f| f[b]).collect();
            m.slide_update(&rem, &add)
        })?;
    state.spectra.extend(added);
    state.window_start += cfg.stride_frames;

    let bins = transpose(&state.spectra, half);
    let sol = solve_window(&state.moments, &bins, &cfg)?;

    let emitted_end = state.emitted_len();
    let overlap_start = emitted_end - cfg.align_frames * hop;
    let candidate = apply_demix_range(mix, &sol.bank, overlap_start, emitted_end)?;
    let previous: Vec<&[f64]> = state.emitted.iter().map(|c| &c[overlap_start..]).collect();
    let new: Vec<&[f64]> = candidate.iter().map(Vec::as_slice).collect();
    let alignment = time_permutation(&previous, &new, cfg.k1, cfg.lag_mode)?;
    if alignment.low_confidence {
        log::info!("update {}: low-confidence order alignment (margin {:.3e})", state.updates + 1, alignment.margin);
    }
    let (bank, gains) = align_and_normalize(&sol.bank, &state.bank, &alignment.sigma, &alignment.signs)?;

    let new_end = cfg.span(state.window().1)?;
    let out = apply_demix_range(mix, &bank, emitted_end, new_end)?;
    for (e, o) in state.emitted.iter_mut().zip(out) {
        e.extend(o);
    }
    state.updates += 1;
    let mut rec = record(&sol, state.updates, state.window(), new_end);
    rec.support_metric = bank.support_metrics();
    rec.time_alignment = Some(alignment);
    rec.continuity_gains = Some(gains);
    state.log.push(rec);
    state.bank = bank;
    Ok(())
}

/// Separated output together with the filters and per-update diagnostics.
#[derive(Debug, Clone)]
pub struct SeparationOutput {
    pub output: TimeSeries,
    pub bank: DemixFilterBank,
    pub diagnostics: Vec<UpdateRecord>,
}

/// Dynamic separation of a whole recording. The output covers the frames
/// that were processed, `(F - 1) hop + T` samples for `F` frames.
pub fn separate_dynamic(mix: &TimeSeries, cfg: &SeparationConfig) -> Result<SeparationOutput> {
    let mut state = init_state(mix, cfg)?;
    while state.can_step(mix) {
        step_update(&mut state, mix)?;
    }
    Ok(SeparationOutput {
        output: TimeSeries::new(state.emitted, mix.sample_rate())?,
        bank: state.bank,
        diagnostics: state.log,
    })
}

/// One separation over statistics of every frame of the recording, applied
/// to the full signal.
pub fn separate_batch(mix: &TimeSeries, cfg: &SeparationConfig) -> Result<SeparationOutput> {
    cfg.validate()?;
    check_mixture(mix)?;
    let hop = cfg.hop()?;
    let frames = frames_in(mix.len(), cfg.frame_len, hop);
    if frames < cfg.batch_frames {
        return Err(Error::InsufficientData(format!(
            "batch processing needs {} frames, {frames} available",
            cfg.batch_frames
        )));
    }
    let fft = SpectralTransform::new(cfg.frame_len);
    let spectra = (0..frames)
        .into_par_iter()
        .map(|t| frame_spectrum(&fft, mix, t * hop))
        .collect::<Result<Vec<_>>>()?;
    let spectra: VecDeque<_> = spectra.into();
    let bins = transpose(&spectra, cfg.frame_len / 2 + 1);
    let moments = bins.par_iter().map(|d| MomentSums::accumulate(d)).collect::<Result<Vec<_>>>()?;
    let sol = solve_window(&moments, &bins, cfg)?;
    let out = apply_demix_range(mix, &sol.bank, 0, mix.len())?;
    let diagnostics = vec![record(&sol, 0, (0, frames), mix.len())];
    Ok(SeparationOutput {
        output: TimeSeries::new(out, mix.sample_rate())?,
        bank: sol.bank,
        diagnostics,
    })
}

/// Incremental front end: push blocks of mixture samples and receive the
/// output samples that became final.
#[derive(Debug, Clone)]
pub struct StreamingSeparator {
    cfg: SeparationConfig,
    buffer: TimeSeries,
    state: Option<SeparationState>,
    delivered: usize,
}

impl StreamingSeparator {
    pub fn new(cfg: SeparationConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        Ok(StreamingSeparator {
            buffer: TimeSeries::zeros(CHANNELS, 0, sample_rate)?,
            cfg,
            state: None,
            delivered: 0,
        })
    }

    /// Appends `block[channel][k]` and returns the newly emitted samples per
    /// channel (possibly empty).
    pub fn push(&mut self, block: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.buffer.append(block)?;
        self.buffer.check_finite()?;
        let hop = self.cfg.hop()?;
        if self.state.is_none() && frames_in(self.buffer.len(), self.cfg.frame_len, hop) >= self.cfg.window_frames {
            self.state = Some(init_state(&self.buffer, &self.cfg)?);
        }
        if let Some(state) = self.state.as_mut() {
            while state.can_step(&self.buffer) {
                step_update(state, &self.buffer)?;
            }
        }
        Ok(self.take_new())
    }

    fn take_new(&mut self) -> Vec<Vec<f64>> {
        match &self.state {
            Some(state) => {
                let out = state.emitted.iter().map(|c| c[self.delivered..].to_vec()).collect();
                self.delivered = state.emitted_len();
                out
            }
            None => vec![Vec::new(); CHANNELS],
        }
    }

    pub fn emitted_len(&self) -> usize {
        self.delivered
    }

    pub fn sample_rate(&self) -> u32 {
        self.buffer.sample_rate()
    }

    pub fn state(&self) -> Option<&SeparationState> {
        self.state.as_ref()
    }

    pub fn diagnostics(&self) -> &[UpdateRecord] {
        self.state.as_ref().map_or(&[], |s| s.diagnostics())
    }
}

/// Writes one JSON object per record.
pub fn write_diagnostics(records: &[UpdateRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = partial_path(path);
    let mut text = Vec::new();
    for r in records {
        serde_json::to_writer(&mut text, r)?;
        text.push(b'\n');
    }
    std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&text))
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
