use antispoof_core::{corpus, features, signal, warping, Result};

fn features_for(path: &std::path::Path) -> Result<features::FeatureMatrix> {
    let audio = corpus::read_wav(path)?;
    let frames = signal::apply_hamming(signal::frame_signal(&audio, 20.0, 0.5)?)?;
    let spectra = signal::power_spectrum(&frames, 512)?;

    let bank = warping::build_mel_filterbank(20, 512, audio.sample_rate)?;
    let config = features::FeatureConfig::new(
        features::FeatureFamily::Mfcc,
        features::Dynamics::StaticDeltas,
    );
    features::extract(&spectra, &config, &bank, "utt")
}

#[test]
fn readme_snippet_compiles_and_runs() {
    let dir = std::env::temp_dir().join(format!("antispoof-readme-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let wav = dir.join("utt.wav");
    let samples: Vec<f64> = (0..3200)
        .map(|i| 0.3 * (std::f64::consts::TAU * 440.0 * i as f64 / 16000.0).sin())
        .collect();
    corpus::write_wav(&wav, &signal::AudioBuffer::new(samples, 16000)).unwrap();
    let feats = features_for(&wav).unwrap();
    assert_eq!(feats.dim(), 60);
}
