//! The experiment lifecycle behind each subcommand.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use antispoof_core::corpus::{
    parse_protocol, read_wav, summarize, verify_paths, FeatureCache, ProtocolEntry, Split,
};
use antispoof_core::eval::{per_attack_report, Label, ReportTable, ScoreEntry, ScoreSet};
use antispoof_core::features::{extract as extract_features, FeatureConfig, FeatureMatrix};
use antispoof_core::gmm::{llr_score, load_model, save_model, train as train_gmm};
use antispoof_core::matrix::Matrix;
use antispoof_core::signal::{
    apply_hamming, frame_signal, power_spectrum, pre_emphasis, PowerSpectrumSequence,
};
use antispoof_core::warping::{
    build_warped_filterbank, estimate_sfcc_warp, invert_filterbank, mel_warp, EnsembleSpectrum,
    FilterBank, WarpKind, WarpingFunction,
};

use crate::config::{ExperimentConfig, WarpSource};

fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<ProtocolEntry>> {
    let path = match split {
        Split::Train => &cfg.train_protocol,
        Split::Dev => &cfg.dev_protocol,
    };
    let entries = parse_protocol(path, split)
        .with_context(|| format!("while reading the {} protocol", split.name()))?;
    if entries.is_empty() {
        bail!("{} protocol {} lists no utterances", split.name(), path.display());
    }
    verify_paths(&entries, &cfg.corpus_root)?;
    let s = summarize(&entries);
    println!(
        "{}: {} genuine + {} spoof utterances",
        split.name(),
        s.genuine,
        s.spoof
    );
    Ok(entries)
}

/// Read one utterance and run the front end up to its power spectra.
fn utterance_spectra(cfg: &ExperimentConfig, entry: &ProtocolEntry) -> Result<PowerSpectrumSequence> {
    let path = cfg.corpus_root.join(&entry.audio_path);
    let audio = read_wav(&path)?;
    if audio.sample_rate != cfg.sample_rate {
        bail!(
            "utterance {}: sample rate {} does not match the configured {}",
            entry.utterance_id,
            audio.sample_rate,
            cfg.sample_rate
        );
    }
    let audio = pre_emphasis(&audio, cfg.pre_emphasis);
    let frames = frame_signal(&audio, cfg.frame_ms, cfg.overlap)
        .with_context(|| format!("utterance {}", entry.utterance_id))?;
    let frames = apply_hamming(frames)?;
    Ok(power_spectrum(&frames, cfg.resolved_fft_size())?)
}

/// Materialize the filter bank for every frequency scale the configured
/// families need. Inverted scales reuse the base bank through the flip.
fn resolve_banks(cfg: &ExperimentConfig) -> Result<HashMap<WarpKind, FilterBank>> {
    let fft_size = cfg.resolved_fft_size();
    let kinds: Vec<WarpKind> = {
        let mut k: Vec<WarpKind> = cfg.families.iter().map(|f| f.bank_kind()).collect();
        k.sort_by_key(|k| *k as u8);
        k.dedup();
        k
    };
    let mut banks = HashMap::new();
    if kinds.iter().any(|k| matches!(k, WarpKind::Mel | WarpKind::InvertedMel)) {
        let warp = mel_warp(cfg.n_filters, cfg.sample_rate)?;
        let mel = build_warped_filterbank(&warp, fft_size)?;
        banks.insert(WarpKind::InvertedMel, invert_filterbank(&mel));
        banks.insert(WarpKind::Mel, mel);
    }
    if kinds.iter().any(|k| matches!(k, WarpKind::Sfcc | WarpKind::InvertedSfcc)) {
        let warp_path = cfg.warp_path();
        if !warp_path.is_file() {
            bail!(
                "the configured families need the learned warp, but {} does not exist; \
                 run `antispoof learn-warp` first",
                warp_path.display()
            );
        }
        let warp = WarpingFunction::load(&warp_path)?;
        if warp.n_filters() != cfg.n_filters {
            bail!(
                "warp file {} holds {} filters, config expects {}",
                warp_path.display(),
                warp.n_filters(),
                cfg.n_filters
            );
        }
        let sfcc = build_warped_filterbank(&warp, fft_size)?;
        banks.insert(WarpKind::InvertedSfcc, invert_filterbank(&sfcc));
        banks.insert(WarpKind::Sfcc, sfcc);
    }
    Ok(banks)
}

/// Accumulate the training ensemble spectrum and write the warp file.
pub fn learn_warp(cfg: &ExperimentConfig) -> Result<()> {
    let entries = load_split(cfg, Split::Train)?;
    let selected: Vec<&ProtocolEntry> = entries
        .iter()
        .filter(|e| cfg.warp_source == WarpSource::All || e.label == Label::Genuine)
        .collect();
    if selected.is_empty() {
        bail!("no training utterances match the warp source selection");
    }

    let fft_size = cfg.resolved_fft_size();
    let partials: Vec<EnsembleSpectrum> = selected
        .par_iter()
        .map(|entry| -> Result<EnsembleSpectrum> {
            let spectra = utterance_spectra(cfg, entry)?;
            let mut ens = EnsembleSpectrum::new(fft_size, cfg.sample_rate);
            ens.accumulate(&spectra)?;
            Ok(ens)
        })
        .collect::<Result<_>>()?;
    let mut ensemble = EnsembleSpectrum::new(fft_size, cfg.sample_rate);
    for p in &partials {
        ensemble.merge(p)?;
    }

    let warp = estimate_sfcc_warp(&ensemble, cfg.n_filters)?;
    std::fs::create_dir_all(&cfg.work_dir)
        .with_context(|| format!("cannot create {}", cfg.work_dir.display()))?;
    warp.save(&cfg.warp_path())?;
    println!(
        "learned warp from {} utterances ({} frames) -> {}",
        selected.len(),
        ensemble.n_frames_accumulated(),
        cfg.warp_path().display()
    );
    Ok(())
}

/// Extract every configured (family, dynamics) for both splits into the
/// cache, skipping digest-valid entries and repairing corrupt ones.
pub fn extract(cfg: &ExperimentConfig) -> Result<()> {
    let mut entries = load_split(cfg, Split::Train)?;
    entries.extend(load_split(cfg, Split::Dev)?);
    let banks = resolve_banks(cfg)?;
    let configs: Vec<FeatureConfig> = cfg
        .families
        .iter()
        .flat_map(|&f| cfg.dynamics.iter().map(move |&d| cfg.feature_config(f, d)))
        .collect();
    for c in &configs {
        c.validate()?;
    }

    let mut cache = FeatureCache::open(&cfg.cache_dir())?;
    let mut extracted = 0usize;
    let mut skipped = 0usize;
    for batch in entries.chunks(128) {
        let results: Vec<Vec<FeatureMatrix>> = batch
            .par_iter()
            .map(|entry| -> Result<Vec<FeatureMatrix>> {
                let missing: Vec<&FeatureConfig> = configs
                    .iter()
                    .filter(|c| !cache.contains_valid(&entry.utterance_id, c))
                    .collect();
                if missing.is_empty() {
                    return Ok(Vec::new());
                }
                let spectra = utterance_spectra(cfg, entry)?;
                missing
                    .into_iter()
                    .map(|c| {
                        let bank = &banks[&c.family.bank_kind()];
                        Ok(extract_features(&spectra, c, bank, &entry.utterance_id)?)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for features in &results {
            skipped += configs.len() - features.len();
            for fm in features {
                cache.store(fm)?;
                extracted += 1;
            }
        }
    }
    cache.flush_manifest()?;
    println!(
        "extracted {extracted} feature files ({skipped} already valid) -> {}",
        cfg.cache_dir().display()
    );
    Ok(())
}

fn model_paths(cfg: &ExperimentConfig, config: &FeatureConfig) -> (PathBuf, PathBuf) {
    let tag = ExperimentConfig::config_tag(config.family, config.dynamics);
    (
        cfg.model_dir().join(format!("{tag}.natural.gmm")),
        cfg.model_dir().join(format!("{tag}.synthetic.gmm")),
    )
}

/// Pool the cached frames of one label into a single training matrix.
fn pool_frames(
    cache: &FeatureCache,
    entries: &[ProtocolEntry],
    config: &FeatureConfig,
    label: Label,
) -> Result<Matrix> {
    let wanted: Vec<&ProtocolEntry> = entries.iter().filter(|e| e.label == label).collect();
    let matrices: Vec<FeatureMatrix> = wanted
        .par_iter()
        .map(|e| Ok(cache.load(&e.utterance_id, config)?))
        .collect::<Result<_>>()?;
    let views: Vec<&Matrix> = matrices.iter().map(|m| &m.values).collect();
    if views.is_empty() {
        bail!("no {} utterances in the training split", label.name());
    }
    Ok(Matrix::vstack(views))
}

/// Train the natural/synthetic model pair for every configuration.
pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let entries = load_split(cfg, Split::Train)?;
    let cache = FeatureCache::open(&cfg.cache_dir())?;
    std::fs::create_dir_all(cfg.model_dir())
        .with_context(|| format!("cannot create {}", cfg.model_dir().display()))?;
    let opts = cfg.training_options();

    for &family in &cfg.families {
        for &dynamics in &cfg.dynamics {
            let config = cfg.feature_config(family, dynamics);
            let (natural_path, synthetic_path) = model_paths(cfg, &config);
            for (label, path) in [
                (Label::Genuine, &natural_path),
                (Label::Spoof, &synthetic_path),
            ] {
                let pooled = pool_frames(&cache, &entries, &config, label)
                    .with_context(|| format!("pooling {} frames for {family}/{dynamics}", label.name()))?;
                let model = train_gmm(&pooled, &opts)
                    .with_context(|| format!("training the {} model for {family}/{dynamics}", label.name()))?
                    .with_fingerprint(family, dynamics);
                save_model(&model, path)?;
                println!(
                    "trained {}/{} {} model on {} frames -> {}",
                    family,
                    dynamics,
                    label.name(),
                    pooled.rows(),
                    path.display()
                );
            }
        }
    }
    Ok(())
}

/// Score every development utterance with the log-likelihood ratio and
/// write one score file per configuration.
pub fn score(cfg: &ExperimentConfig) -> Result<()> {
    let mut entries = load_split(cfg, Split::Dev)?;
    entries.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
    let cache = FeatureCache::open(&cfg.cache_dir())?;
    std::fs::create_dir_all(cfg.score_dir())
        .with_context(|| format!("cannot create {}", cfg.score_dir().display()))?;

    for &family in &cfg.families {
        for &dynamics in &cfg.dynamics {
            let config = cfg.feature_config(family, dynamics);
            let (natural_path, synthetic_path) = model_paths(cfg, &config);
            for p in [&natural_path, &synthetic_path] {
                if !p.is_file() {
                    bail!(
                        "model {} does not exist; run `antispoof train` first",
                        p.display()
                    );
                }
            }
            let natural = load_model(&natural_path)?;
            let synthetic = load_model(&synthetic_path)?;

            let scored: Vec<ScoreEntry> = entries
                .par_iter()
                .map(|e| -> Result<ScoreEntry> {
                    let features = cache.load(&e.utterance_id, &config)?;
                    let llr = llr_score(&features, &natural, &synthetic)
                        .with_context(|| format!("scoring utterance {}", e.utterance_id))?;
                    Ok(ScoreEntry {
                        utterance_id: e.utterance_id.clone(),
                        score: llr,
                        label: e.label,
                        attack: e.attack,
                    })
                })
                .collect::<Result<_>>()?;
            let set = ScoreSet { entries: scored };
            let tag = ExperimentConfig::config_tag(family, dynamics);
            let path = cfg.score_dir().join(format!("{tag}.tsv"));
            set.save(&path)?;
            println!("scored {} trials for {family}/{dynamics} -> {}", set.entries.len(), path.display());
        }
    }
    Ok(())
}

/// Assemble the per-attack EER table from the score files.
pub fn report(cfg: &ExperimentConfig) -> Result<()> {
    let mut table = ReportTable::default();
    for &family in &cfg.families {
        for &dynamics in &cfg.dynamics {
            let tag = ExperimentConfig::config_tag(family, dynamics);
            let path = cfg.score_dir().join(format!("{tag}.tsv"));
            if !path.is_file() {
                bail!(
                    "score file {} does not exist; run `antispoof score` first",
                    path.display()
                );
            }
            let set = ScoreSet::load(&path)?;
            table.rows.push(per_attack_report(&set, family, dynamics)?);
        }
    }
    let tsv_path = cfg.work_dir.join("report.tsv");
    let text_path = cfg.work_dir.join("report.txt");
    table.save(&tsv_path, &text_path)?;
    print!("{}", table.to_text());
    println!("report -> {} and {}", tsv_path.display(), text_path.display());
    Ok(())
}

/// The whole lifecycle in order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.families.iter().any(|f| f.needs_learned_warp()) {
        learn_warp(cfg)?;
    }
    extract(cfg)?;
    train(cfg)?;
    score(cfg)?;
    report(cfg)
}
