//! The eight cepstral feature families: full-band DCT features (MFCC,
//! IMFCC, SFCC, ISFCC) and their formant-block counterparts (MOBT, IMOBT,
//! SOBT, ISOBT), each in three dynamics configurations.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::PowerSpectrumSequence;
use crate::warping::{FilterBank, WarpKind};

/// Log-energy floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureFamily {
    Mfcc,
    Imfcc,
    Sfcc,
    Isfcc,
    Mobt,
    Imobt,
    Sobt,
    Isobt,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 8] = [
        FeatureFamily::Mfcc,
        FeatureFamily::Imfcc,
        FeatureFamily::Sfcc,
        FeatureFamily::Isfcc,
        FeatureFamily::Mobt,
        FeatureFamily::Imobt,
        FeatureFamily::Sobt,
        FeatureFamily::Isobt,
    ];

    /// Wire id used by the cache and model file formats.
    pub fn id(self) -> u8 {
        match self {
            FeatureFamily::Mfcc => 0,
            FeatureFamily::Imfcc => 1,
            FeatureFamily::Sfcc => 2,
            FeatureFamily::Isfcc => 3,
            FeatureFamily::Mobt => 4,
            FeatureFamily::Imobt => 5,
            FeatureFamily::Sobt => 6,
            FeatureFamily::Isobt => 7,
        }
    }

    pub fn from_id(id: u8) -> Result<FeatureFamily> {
        FeatureFamily::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Format {
                what: "feature family id",
                reason: format!("unknown id {id}"),
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureFamily::Mfcc => "mfcc",
            FeatureFamily::Imfcc => "imfcc",
            FeatureFamily::Sfcc => "sfcc",
            FeatureFamily::Isfcc => "isfcc",
            FeatureFamily::Mobt => "mobt",
            FeatureFamily::Imobt => "imobt",
            FeatureFamily::Sobt => "sobt",
            FeatureFamily::Isobt => "isobt",
        }
    }

    pub fn parse(s: &str) -> Result<FeatureFamily> {
        let lower = s.to_ascii_lowercase();
        FeatureFamily::ALL
            .into_iter()
            .find(|f| f.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown feature family {s:?}")))
    }

    /// Block-transform families apply the DCT per formant block instead of
    /// over the full band.
    pub fn is_block(self) -> bool {
        matches!(
            self,
            FeatureFamily::Mobt | FeatureFamily::Imobt | FeatureFamily::Sobt | FeatureFamily::Isobt
        )
    }

    /// Families on the corpus-adaptive scale need a learned warp.
    pub fn needs_learned_warp(self) -> bool {
        matches!(
            self,
            FeatureFamily::Sfcc | FeatureFamily::Isfcc | FeatureFamily::Sobt | FeatureFamily::Isobt
        )
    }

    /// The frequency scale this family's filter bank must carry.
    pub fn bank_kind(self) -> WarpKind {
        match self {
            FeatureFamily::Mfcc | FeatureFamily::Mobt => WarpKind::Mel,
            FeatureFamily::Imfcc | FeatureFamily::Imobt => WarpKind::InvertedMel,
            FeatureFamily::Sfcc | FeatureFamily::Sobt => WarpKind::Sfcc,
            FeatureFamily::Isfcc | FeatureFamily::Isobt => WarpKind::InvertedSfcc,
        }
    }
}

impl std::fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dynamics {
    Static,
    StaticDeltas,
    DeltasOnly,
}

impl Dynamics {
    pub const ALL: [Dynamics; 3] = [Dynamics::Static, Dynamics::StaticDeltas, Dynamics::DeltasOnly];

    pub fn id(self) -> u8 {
        match self {
            Dynamics::Static => 0,
            Dynamics::StaticDeltas => 1,
            Dynamics::DeltasOnly => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Dynamics> {
        Dynamics::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Format {
                what: "dynamics id",
                reason: format!("unknown id {id}"),
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            Dynamics::Static => "static",
            Dynamics::StaticDeltas => "static+dd",
            Dynamics::DeltasOnly => "dd",
        }
    }

    pub fn parse(s: &str) -> Result<Dynamics> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(Dynamics::Static),
            "static+dd" | "static+deltas" | "static-dd" => Ok(Dynamics::StaticDeltas),
            "dd" | "deltas" | "deltas-only" => Ok(Dynamics::DeltasOnly),
            _ => Err(Error::Config(format!("unknown dynamics mode {s:?}"))),
        }
    }

    /// Output width as a multiple of the static width.
    pub fn width_factor(self) -> usize {
        match self {
            Dynamics::Static => 1,
            Dynamics::StaticDeltas => 3,
            Dynamics::DeltasOnly => 2,
        }
    }
}

impl std::fmt::Display for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Filter-index blocks for the block-transform families, 1-based inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub blocks: Vec<(usize, usize)>,
}

impl BlockSpec {
    /// The formant-aligned default: filters 1-7 under F1 and filters 6-20
    /// under F2/F3, overlapping at filters 6-7 for 7 + 15 = 22 outputs.
    pub fn default_two_block() -> BlockSpec {
        BlockSpec {
            blocks: vec![(1, 7), (6, 20)],
        }
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.iter().map(|(s, e)| e - s + 1).sum()
    }

    pub fn validate(&self, n_filters: usize) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("block spec has no blocks".into()));
        }
        let mut covered = vec![false; n_filters];
        for &(s, e) in &self.blocks {
            if s == 0 || e < s || e > n_filters {
                return Err(Error::Config(format!(
                    "block {s}-{e} out of range for {n_filters} filters"
                )));
            }
            for c in covered.iter_mut().take(e).skip(s - 1) {
                *c = true;
            }
        }
        if let Some(gap) = covered.iter().position(|&c| !c) {
            return Err(Error::Config(format!(
                "filter {} not covered by any block",
                gap + 1
            )));
        }
        Ok(())
    }
}

/// Everything that pins down one feature configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub family: FeatureFamily,
    pub dynamics: Dynamics,
    pub n_filters: usize,
    pub n_ceps: usize,
    pub block_spec: Option<BlockSpec>,
}

impl FeatureConfig {
    pub fn new(family: FeatureFamily, dynamics: Dynamics) -> FeatureConfig {
        FeatureConfig {
            family,
            dynamics,
            n_filters: 20,
            n_ceps: 20,
            block_spec: if family.is_block() {
                Some(BlockSpec::default_two_block())
            } else {
                None
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.is_block() != self.block_spec.is_some() {
            return Err(Error::Config(format!(
                "family {} {} a block spec",
                self.family,
                if self.family.is_block() {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        if self.n_ceps > self.n_filters {
            return Err(Error::Config(format!(
                "n_ceps {} exceeds n_filters {}",
                self.n_ceps, self.n_filters
            )));
        }
        if let Some(spec) = &self.block_spec {
            spec.validate(self.n_filters)?;
        }
        Ok(())
    }

    /// Width of one static frame before dynamics.
    pub fn static_dim(&self) -> usize {
        match &self.block_spec {
            Some(spec) => spec.output_dim(),
            None => self.n_ceps,
        }
    }

    /// Final per-frame feature width.
    pub fn dim(&self) -> usize {
        self.static_dim() * self.dynamics.width_factor()
    }
}

/// Per-utterance feature values with their configuration.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub config: FeatureConfig,
    pub utterance_id: String,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// Log of the per-filter weighted power sums, floored at [`LOG_FLOOR`].
pub fn filterbank_log_energies(
    spectra: &PowerSpectrumSequence,
    bank: &FilterBank,
) -> Result<Matrix> {
    if bank.n_bins() != spectra.n_bins() {
        return Err(Error::DimensionMismatch(format!(
            "bank has {} bins, spectra have {}",
            bank.n_bins(),
            spectra.n_bins()
        )));
    }
    let mut out = Matrix::zeros(spectra.n_frames(), bank.n_filters());
    for (t, row) in spectra.spectra.iter_rows().enumerate() {
        let energies = bank.apply(row);
        for (slot, e) in out.row_mut(t).iter_mut().zip(energies) {
            *slot = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II basis: basis[k*n + i] = a_k cos(pi (2i+1) k / 2n).
fn dct_basis(n: usize) -> Vec<f64> {
    let mut basis = vec![0.0; n * n];
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let a = if k == 0 { scale0 } else { scale };
        for i in 0..n {
            basis[k * n + i] =
                a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    basis
}

/// Orthonormal type-II DCT along the filter axis, keeping coefficients
/// 0..n_ceps-1. Coefficient 0 carries the frame energy.
pub fn dct_full(log_energies: &Matrix, n_ceps: usize) -> Result<Matrix> {
    let n = log_energies.cols();
    if n_ceps > n {
        return Err(Error::Config(format!(
            "n_ceps {n_ceps} exceeds the {n} filter outputs"
        )));
    }
    let basis = dct_basis(n);
    let mut out = Matrix::zeros(log_energies.rows(), n_ceps);
    for (t, row) in log_energies.iter_rows().enumerate() {
        let dst = out.row_mut(t);
        for (k, slot) in dst.iter_mut().enumerate() {
            let b = &basis[k * n..(k + 1) * n];
            *slot = row.iter().zip(b).map(|(x, w)| x * w).sum();
        }
    }
    Ok(out)
}

/// Per-block orthonormal DCT-II, all coefficients kept, blocks concatenated.
pub fn dct_block(log_energies: &Matrix, spec: &BlockSpec) -> Result<Matrix> {
    let n = log_energies.cols();
    spec.validate(n)?;
    let dim = spec.output_dim();
    let bases: Vec<(usize, usize, Vec<f64>)> = spec
        .blocks
        .iter()
        .map(|&(s, e)| {
            let len = e - s + 1;
            (s - 1, len, dct_basis(len))
        })
        .collect();
    let mut out = Matrix::zeros(log_energies.rows(), dim);
    for (t, row) in log_energies.iter_rows().enumerate() {
        let dst = out.row_mut(t);
        let mut col = 0;
        for (start, len, basis) in &bases {
            let slice = &row[*start..start + len];
            for k in 0..*len {
                let b = &basis[k * len..(k + 1) * len];
                dst[col] = slice.iter().zip(b).map(|(x, w)| x * w).sum();
                col += 1;
            }
        }
    }
    Ok(out)
}

/// First differences over three consecutive frames with edge replication.
fn deltas(x: &Matrix) -> Matrix {
    let t_max = x.rows();
    let d = x.cols();
    let mut out = Matrix::zeros(t_max, d);
    for t in 0..t_max {
        let prev = x.row(t.saturating_sub(1));
        let next = x.row((t + 1).min(t_max - 1));
        let dst = out.row_mut(t);
        for i in 0..d {
            dst[i] = (next[i] - prev[i]) / 2.0;
        }
    }
    out
}

/// Assemble the requested dynamics layout from static features.
pub fn append_dynamics(static_features: &Matrix, mode: Dynamics) -> Matrix {
    let t_max = static_features.rows();
    let d = static_features.cols();
    let delta = deltas(static_features);
    let delta2 = deltas(&delta);
    let mut out = Matrix::zeros(t_max, d * mode.width_factor());
    for t in 0..t_max {
        let dst = out.row_mut(t);
        match mode {
            Dynamics::Static => dst.copy_from_slice(static_features.row(t)),
            Dynamics::StaticDeltas => {
                dst[0..d].copy_from_slice(static_features.row(t));
                dst[d..2 * d].copy_from_slice(delta.row(t));
                dst[2 * d..3 * d].copy_from_slice(delta2.row(t));
            }
            Dynamics::DeltasOnly => {
                dst[0..d].copy_from_slice(delta.row(t));
                dst[d..2 * d].copy_from_slice(delta2.row(t));
            }
        }
    }
    out
}

/// Run the full front end for one utterance: filter-bank log energies,
/// the family's DCT, then dynamics.
pub fn extract(
    spectra: &PowerSpectrumSequence,
    config: &FeatureConfig,
    bank: &FilterBank,
    utterance_id: &str,
) -> Result<FeatureMatrix> {
    config.validate()?;
    if bank.kind != config.family.bank_kind() {
        return Err(Error::Config(format!(
            "family {} requires a {:?} bank, got {:?}",
            config.family,
            config.family.bank_kind(),
            bank.kind
        )));
    }
    if bank.n_filters() != config.n_filters {
        return Err(Error::Config(format!(
            "config expects {} filters, bank has {}",
            config.n_filters,
            bank.n_filters()
        )));
    }
    let log_energies = filterbank_log_energies(spectra, bank)?;
    let static_features = match &config.block_spec {
        Some(spec) => dct_block(&log_energies, spec)?,
        None => dct_full(&log_energies, config.n_ceps)?,
    };
    let values = append_dynamics(&static_features, config.dynamics);
    debug_assert_eq!(values.cols(), config.dim());
    debug_assert!(values.data().iter().all(|v| v.is_finite()));
    Ok(FeatureMatrix {
        values,
        config: config.clone(),
        utterance_id: utterance_id.to_string(),
    })
}

const CACHE_MAGIC: [u8; 4] = *b"FTR1";
const CACHE_HEADER_LEN: usize = 4 + 4 + 4 + 1 + 1;

/// Serialize to the binary cache layout: magic `FTR1`, u32 frame count,
/// u32 dimension, family id, dynamics id, then float32 values row-major,
/// all little-endian.
pub fn encode_cache(features: &FeatureMatrix) -> Vec<u8> {
    let t = features.n_frames() as u32;
    let d = features.dim() as u32;
    let mut buf = Vec::with_capacity(CACHE_HEADER_LEN + features.values.data().len() * 4);
    buf.extend_from_slice(&CACHE_MAGIC);
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    buf.push(features.config.family.id());
    buf.push(features.config.dynamics.id());
    for &v in features.values.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

/// Decode a cache payload, validating it against the configuration it was
/// requested for.
pub fn decode_cache(
    bytes: &[u8],
    config: &FeatureConfig,
    utterance_id: &str,
) -> Result<FeatureMatrix> {
    if bytes.len() < CACHE_HEADER_LEN {
        return Err(Error::CacheCorrupt(format!(
            "{utterance_id}: payload shorter than header"
        )));
    }
    if bytes[0..4] != CACHE_MAGIC {
        return Err(Error::CacheCorrupt(format!(
            "{utterance_id}: bad magic {:?}",
            &bytes[0..4]
        )));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let family = FeatureFamily::from_id(bytes[12])?;
    let dynamics = Dynamics::from_id(bytes[13])?;
    let expected_len = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(CACHE_HEADER_LEN))
        .ok_or_else(|| Error::CacheCorrupt(format!("{utterance_id}: size overflow")))?;
    if bytes.len() != expected_len {
        return Err(Error::CacheCorrupt(format!(
            "{utterance_id}: expected {expected_len} bytes, got {}",
            bytes.len()
        )));
    }
    if family != config.family || dynamics != config.dynamics {
        return Err(Error::FingerprintMismatch(format!(
            "{utterance_id}: cache holds {family}/{dynamics}, expected {}/{}",
            config.family, config.dynamics
        )));
    }
    if d != config.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{utterance_id}: cache dimension {d} differs from configured {}",
            config.dim()
        )));
    }
    let mut data = Vec::with_capacity(t * d);
    for chunk in bytes[CACHE_HEADER_LEN..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Ok(FeatureMatrix {
        values: Matrix::from_vec(t, d, data),
        config: config.clone(),
        utterance_id: utterance_id.to_string(),
    })
}
