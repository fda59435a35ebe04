//! Frequency warpings and their triangular filter banks: the mel scale,
//! its frequency-flipped inverse, and a corpus-adaptive warp that
//! partitions the log ensemble spectrum into equal areas.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::PowerSpectrumSequence;

/// Which frequency scale a warp or bank realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WarpKind {
    Mel,
    InvertedMel,
    Sfcc,
    InvertedSfcc,
}

impl WarpKind {
    pub fn inverted(self) -> WarpKind {
        match self {
            WarpKind::Mel => WarpKind::InvertedMel,
            WarpKind::InvertedMel => WarpKind::Mel,
            WarpKind::Sfcc => WarpKind::InvertedSfcc,
            WarpKind::InvertedSfcc => WarpKind::Sfcc,
        }
    }

    pub fn is_inverted(self) -> bool {
        matches!(self, WarpKind::InvertedMel | WarpKind::InvertedSfcc)
    }
}

/// Monotone frequency map given as filter boundary frequencies from 0 Hz
/// to Nyquist; n_filters + 2 points define n_filters triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingFunction {
    pub kind: WarpKind,
    boundaries_hz: Vec<f64>,
    pub sample_rate: u32,
}

impl WarpingFunction {
    pub fn new(kind: WarpKind, boundaries_hz: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let w = WarpingFunction {
            kind,
            boundaries_hz,
            sample_rate,
        };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        let b = &self.boundaries_hz;
        if b.len() < 3 {
            return Err(Error::Config(format!(
                "warp needs at least 3 boundaries, got {}",
                b.len()
            )));
        }
        if b[0] != 0.0 {
            return Err(Error::Config(format!(
                "first warp boundary must be 0 Hz, got {}",
                b[0]
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if *b.last().unwrap() != nyquist {
            return Err(Error::Config(format!(
                "last warp boundary must be the Nyquist frequency {nyquist}, got {}",
                b.last().unwrap()
            )));
        }
        for pair in b.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "warp boundaries not strictly increasing at {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    pub fn n_filters(&self) -> usize {
        self.boundaries_hz.len() - 2
    }

    pub fn boundaries_hz(&self) -> &[f64] {
        &self.boundaries_hz
    }

    /// Same boundaries interpreted on the flipped frequency axis.
    pub fn inverted(&self) -> WarpingFunction {
        WarpingFunction {
            kind: self.kind.inverted(),
            boundaries_hz: self.boundaries_hz.clone(),
            sample_rate: self.sample_rate,
        }
    }

    /// Write as a plain-text warp file: header `sfcc-warp v1 <n_filters>
    /// <sample_rate>`, then one boundary per line at 9 significant digits.
    /// Boundaries produced by this library are already canonicalized to
    /// that precision, so a reload is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.kind != WarpKind::Sfcc {
            return Err(Error::Config(
                "only sfcc warps have a file representation".into(),
            ));
        }
        let mut text = format!("sfcc-warp v1 {} {}\n", self.n_filters(), self.sample_rate);
        for &b in &self.boundaries_hz {
            let _ = writeln!(text, "{}", format_sig9(b));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reload a warp file written by [`WarpingFunction::save`].
    pub fn load(path: &Path) -> Result<WarpingFunction> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path, e))?
            .ok_or_else(|| Error::Format {
                what: "warp file",
                reason: "empty file".into(),
            })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "sfcc-warp" || fields[1] != "v1" {
            return Err(Error::Format {
                what: "warp file",
                reason: format!("bad header: {header:?}"),
            });
        }
        let n_filters: usize = fields[2].parse().map_err(|_| Error::Format {
            what: "warp file",
            reason: format!("bad filter count: {:?}", fields[2]),
        })?;
        let sample_rate: u32 = fields[3].parse().map_err(|_| Error::Format {
            what: "warp file",
            reason: format!("bad sample rate: {:?}", fields[3]),
        })?;

        let mut boundaries = Vec::with_capacity(n_filters + 2);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            boundaries.push(t.parse::<f64>().map_err(|_| Error::Format {
                what: "warp file",
                reason: format!("bad boundary value: {t:?}"),
            })?);
        }
        if boundaries.len() != n_filters + 2 {
            return Err(Error::Format {
                what: "warp file",
                reason: format!(
                    "expected {} boundaries, found {}",
                    n_filters + 2,
                    boundaries.len()
                ),
            });
        }
        WarpingFunction::new(WarpKind::Sfcc, boundaries, sample_rate)
    }
}

/// Render with 9 significant digits in plain decimal.
fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (8 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Round to the value the 9-significant-digit text form parses back to.
fn quantize_sig9(x: f64) -> f64 {
    format_sig9(x).parse().unwrap()
}

/// Mel value of a frequency in Hz.
pub fn mel_from_hz(f: f64) -> Result<f64> {
    if f < 0.0 {
        return Err(Error::NegativeFrequency(f));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

/// Hz value of a mel frequency; inverse of [`mel_from_hz`].
pub fn hz_from_mel(m: f64) -> f64 {
    700.0 * (10.0_f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters as per-FFT-bin weights; one row per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    weights: Matrix,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub kind: WarpKind,
}

impl FilterBank {
    /// Build a bank from explicit per-bin weights. Every filter must have
    /// non-negative weights and at least one strictly positive entry.
    pub fn from_weights(
        weights: Matrix,
        fft_size: usize,
        sample_rate: u32,
        kind: WarpKind,
    ) -> Result<FilterBank> {
        if weights.cols() != fft_size / 2 + 1 {
            return Err(Error::Config(format!(
                "weight rows have {} bins, fft size {fft_size} implies {}",
                weights.cols(),
                fft_size / 2 + 1
            )));
        }
        for j in 0..weights.rows() {
            let row = weights.row(j);
            if row.iter().any(|&w| w < 0.0) {
                return Err(Error::Config(format!("filter {} has a negative weight", j + 1)));
            }
            if !row.iter().any(|&w| w > 0.0) {
                return Err(Error::Config(format!("filter {} has no positive weight", j + 1)));
            }
        }
        Ok(FilterBank {
            weights,
            fft_size,
            sample_rate,
            kind,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn filter(&self, j: usize) -> &[f64] {
        self.weights.row(j)
    }

    pub fn peak_bin(&self, j: usize) -> usize {
        let row = self.weights.row(j);
        let mut best = 0;
        for (b, &w) in row.iter().enumerate() {
            if w > row[best] {
                best = b;
            }
        }
        best
    }

    /// Per-filter weighted sums of one spectrum row.
    ///
    /// Terms are accumulated in mirror-symmetric pairs so that flipping
    /// both the filter and the spectrum leaves the result bit-identical,
    /// which makes the inverted-bank identity exact.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        assert_eq!(spectrum.len(), self.n_bins(), "bin count mismatch");
        (0..self.n_filters())
            .map(|j| dot_symmetric(self.filter(j), spectrum))
            .collect()
    }
}

fn dot_symmetric(w: &[f64], p: &[f64]) -> f64 {
    let n = w.len();
    let mut acc = 0.0;
    let mut i = 0;
    let mut j = n - 1;
    while i < j {
        acc += w[i] * p[i] + w[j] * p[j];
        i += 1;
        j -= 1;
    }
    if i == j {
        acc += w[i] * p[i];
    }
    acc
}

/// Build triangular filters with unit peaks from a boundary list,
/// evaluated at bin center frequencies.
fn triangular_bank(
    boundaries: &[f64],
    kind: WarpKind,
    fft_size: usize,
    sample_rate: u32,
) -> Result<FilterBank> {
    let n_filters = boundaries.len() - 2;
    let n_bins = fft_size / 2 + 1;
    let mut weights = Matrix::zeros(n_filters, n_bins);
    for j in 0..n_filters {
        let (left, center, right) = (boundaries[j], boundaries[j + 1], boundaries[j + 2]);
        let row = weights.row_mut(j);
        let mut any_positive = false;
        for (b, slot) in row.iter_mut().enumerate() {
            let f = b as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if w > 0.0 {
                any_positive = true;
            }
            *slot = w;
        }
        if !any_positive {
            return Err(Error::Config(format!(
                "filter {} ({left:.1}-{right:.1} Hz) has no positive weight at fft size \
                 {fft_size}; reduce the filter count",
                j + 1
            )));
        }
    }
    Ok(FilterBank {
        weights,
        fft_size,
        sample_rate,
        kind,
    })
}

/// Boundary list of the mel-scaled bank: n_filters + 2 points equally
/// spaced in mel between 0 and the Nyquist frequency, mapped back to Hz.
pub fn mel_warp(n_filters: usize, sample_rate: u32) -> Result<WarpingFunction> {
    if n_filters < 1 {
        return Err(Error::Config("filter count must be at least 1".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let mel_top = mel_from_hz(nyquist)?;
    let count = n_filters + 2;
    let mut boundaries = Vec::with_capacity(count);
    for i in 0..count {
        boundaries.push(hz_from_mel(i as f64 * mel_top / (n_filters + 1) as f64));
    }
    boundaries[0] = 0.0;
    boundaries[count - 1] = nyquist;
    WarpingFunction::new(WarpKind::Mel, boundaries, sample_rate)
}

/// Mel-scaled triangular filter bank.
pub fn build_mel_filterbank(
    n_filters: usize,
    fft_size: usize,
    sample_rate: u32,
) -> Result<FilterBank> {
    build_warped_filterbank(&mel_warp(n_filters, sample_rate)?, fft_size)
}

/// Materialize a warp as a triangular bank over FFT bins. Inverted warps
/// build the base bank first and then flip it, so the identity
/// `bank(inverted warp) == invert_filterbank(bank(warp))` holds bit-exactly.
pub fn build_warped_filterbank(warp: &WarpingFunction, fft_size: usize) -> Result<FilterBank> {
    match warp.kind {
        WarpKind::Mel | WarpKind::Sfcc => triangular_bank(
            &warp.boundaries_hz,
            warp.kind,
            fft_size,
            warp.sample_rate,
        ),
        WarpKind::InvertedMel | WarpKind::InvertedSfcc => {
            let base = triangular_bank(
                &warp.boundaries_hz,
                warp.kind.inverted(),
                fft_size,
                warp.sample_rate,
            )?;
            Ok(invert_filterbank(&base))
        }
    }
}

/// Flip a bank onto the inverted frequency scale: filter j of the result
/// reads filter n_filters+1-j of the input at bin K/2-b, so applying it
/// equals applying the original bank to the bin-reversed spectrum.
pub fn invert_filterbank(bank: &FilterBank) -> FilterBank {
    let n_filters = bank.n_filters();
    let n_bins = bank.n_bins();
    let mut weights = Matrix::zeros(n_filters, n_bins);
    for j in 0..n_filters {
        let src = bank.filter(n_filters - 1 - j);
        let dst = weights.row_mut(j);
        for b in 0..n_bins {
            dst[b] = src[n_bins - 1 - b];
        }
    }
    FilterBank {
        weights,
        fft_size: bank.fft_size,
        sample_rate: bank.sample_rate,
        kind: bank.kind.inverted(),
    }
}

/// Running sum of per-frame power spectra over a corpus; the division by
/// the frame count is deferred so partial accumulators merge associatively.
#[derive(Debug, Clone)]
pub struct EnsembleSpectrum {
    power_sum: Vec<f64>,
    n_frames: u64,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl EnsembleSpectrum {
    pub fn new(fft_size: usize, sample_rate: u32) -> Self {
        EnsembleSpectrum {
            power_sum: vec![0.0; fft_size / 2 + 1],
            n_frames: 0,
            fft_size,
            sample_rate,
        }
    }

    pub fn n_frames_accumulated(&self) -> u64 {
        self.n_frames
    }

    /// Add every frame of one utterance's spectra.
    pub fn accumulate(&mut self, spectra: &PowerSpectrumSequence) -> Result<()> {
        if spectra.fft_size != self.fft_size || spectra.sample_rate != self.sample_rate {
            return Err(Error::DimensionMismatch(format!(
                "ensemble is {} bins at {} Hz, spectra are {} bins at {} Hz",
                self.fft_size, self.sample_rate, spectra.fft_size, spectra.sample_rate
            )));
        }
        for row in spectra.spectra.iter_rows() {
            for (acc, &p) in self.power_sum.iter_mut().zip(row) {
                *acc += p;
            }
        }
        self.n_frames += spectra.n_frames() as u64;
        Ok(())
    }

    /// Fold another partial accumulator into this one.
    pub fn merge(&mut self, other: &EnsembleSpectrum) -> Result<()> {
        if other.fft_size != self.fft_size || other.sample_rate != self.sample_rate {
            return Err(Error::DimensionMismatch(
                "ensemble accumulator shape mismatch".into(),
            ));
        }
        for (acc, &p) in self.power_sum.iter_mut().zip(&other.power_sum) {
            *acc += p;
        }
        self.n_frames += other.n_frames;
        Ok(())
    }

    /// Ensemble average spectrum.
    pub fn mean_power(&self) -> Vec<f64> {
        let n = self.n_frames.max(1) as f64;
        self.power_sum.iter().map(|&s| s / n).collect()
    }
}

/// Estimate the corpus-adaptive warp: floor the ensemble mean, take its
/// log, shift it non-negative, and place boundaries so every interval
/// carries an equal share of the integral.
///
/// The cumulative trapezoidal integral is inverted exactly on each bin
/// segment (it is quadratic there), and the resulting boundaries are
/// canonicalized to 9 significant digits, the warp-file precision.
pub fn estimate_sfcc_warp(ens: &EnsembleSpectrum, n_filters: usize) -> Result<WarpingFunction> {
    if n_filters < 1 {
        return Err(Error::Config("filter count must be at least 1".into()));
    }
    if ens.n_frames == 0 {
        return Err(Error::DegenerateSpectrum);
    }
    let mean = ens.mean_power();
    let max = mean.iter().cloned().fold(0.0_f64, f64::max);
    if !max.is_finite() || max <= 0.0 {
        return Err(Error::DegenerateSpectrum);
    }

    let floor = 1e-10 * max;
    let mut g: Vec<f64> = mean.iter().map(|&p| p.max(floor).ln()).collect();
    let g_min = g.iter().cloned().fold(f64::INFINITY, f64::min);
    for v in &mut g {
        *v -= g_min;
    }

    let nyquist = ens.sample_rate as f64 / 2.0;
    let n_intervals = n_filters + 1;
    let mut boundaries = vec![0.0; n_filters + 2];
    boundaries[n_filters + 1] = nyquist;

    if g.iter().all(|&v| v == 0.0) {
        // Constant log spectrum: equal area degenerates to equal width.
        for (i, b) in boundaries.iter_mut().enumerate().skip(1).take(n_filters) {
            *b = i as f64 * nyquist / n_intervals as f64;
        }
    } else {
        let df = ens.sample_rate as f64 / ens.fft_size as f64;
        let mut cumulative = Vec::with_capacity(g.len());
        cumulative.push(0.0);
        let mut acc = 0.0;
        for pair in g.windows(2) {
            acc += 0.5 * (pair[0] + pair[1]) * df;
            cumulative.push(acc);
        }
        let total = *cumulative.last().unwrap();
        debug_assert!(total > 0.0);

        let mut seg = 0;
        for (i, slot) in boundaries.iter_mut().enumerate().skip(1).take(n_filters) {
            let target = total * i as f64 / n_intervals as f64;
            while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
                seg += 1;
            }
            let d = (target - cumulative[seg]).max(0.0);
            let u = if d == 0.0 {
                0.0
            } else {
                // Solve (s/2) u^2 + g0 u = d on this segment.
                let g0 = g[seg];
                let s = (g[seg + 1] - g[seg]) / df;
                let disc = (g0 * g0 + 2.0 * s * d).max(0.0);
                let denom = g0 + disc.sqrt();
                if denom > 0.0 {
                    (2.0 * d / denom).clamp(0.0, df)
                } else {
                    df
                }
            };
            *slot = seg as f64 * df + u;
        }
    }

    for b in boundaries.iter_mut() {
        *b = quantize_sig9(*b);
    }
    for pair in boundaries.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(format!(
                "estimated warp boundaries collapse near {} Hz; reduce the filter count",
                pair[0]
            )));
        }
    }
    WarpingFunction::new(WarpKind::Sfcc, boundaries, ens.sample_rate)
}
