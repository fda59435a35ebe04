//! Short-term analysis front end: framing, Hamming windowing and
//! periodogram power spectra.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mono audio with amplitudes in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioBuffer {
            samples,
            sample_rate,
        }
    }
}

/// Frames of a signal, one row per analysis window.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    pub frames: Matrix,
    pub hop: usize,
    pub sample_rate: u32,
}

impl FrameMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn frame_len(&self) -> usize {
        self.frames.cols()
    }
}

/// Per-frame periodogram power spectra over bins 0..=fft_size/2.
#[derive(Debug, Clone)]
pub struct PowerSpectrumSequence {
    pub spectra: Matrix,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl PowerSpectrumSequence {
    pub fn n_frames(&self) -> usize {
        self.spectra.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.spectra.cols()
    }

    /// Center frequency of bin b in Hz.
    pub fn bin_freq(&self, b: usize) -> f64 {
        b as f64 * self.sample_rate as f64 / self.fft_size as f64
    }
}

/// Smallest power of two that holds a frame of `frame_len` samples.
pub fn default_fft_size(frame_len: usize) -> usize {
    frame_len.next_power_of_two()
}

/// First-order pre-emphasis y[n] = x[n] - a x[n-1]. Off by default in the
/// pipeline; a = 0 returns the input unchanged.
pub fn pre_emphasis(audio: &AudioBuffer, coefficient: f64) -> AudioBuffer {
    if coefficient == 0.0 {
        return audio.clone();
    }
    let mut out = Vec::with_capacity(audio.samples.len());
    let mut prev = 0.0;
    for &x in &audio.samples {
        out.push(x - coefficient * prev);
        prev = x;
    }
    AudioBuffer::new(out, audio.sample_rate)
}

/// Split a signal into overlapping frames. The trailing partial frame is
/// dropped, never zero-padded.
pub fn frame_signal(
    audio: &AudioBuffer,
    frame_ms: f64,
    overlap_fraction: f64,
) -> Result<FrameMatrix> {
    let frame_len = (frame_ms * audio.sample_rate as f64 / 1000.0).round() as usize;
    if frame_len < 2 {
        return Err(Error::Config(format!(
            "frame of {frame_ms} ms at {} Hz is under 2 samples",
            audio.sample_rate
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::Config(format!(
            "overlap fraction {overlap_fraction} outside [0, 1)"
        )));
    }
    let hop = ((frame_len as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    if audio.samples.len() < frame_len {
        return Err(Error::UtteranceTooShort {
            got: audio.samples.len(),
            need: frame_len,
        });
    }

    let n_frames = (audio.samples.len() - frame_len) / hop + 1;
    let mut frames = Matrix::zeros(n_frames, frame_len);
    for t in 0..n_frames {
        let start = t * hop;
        frames
            .row_mut(t)
            .copy_from_slice(&audio.samples[start..start + frame_len]);
    }
    Ok(FrameMatrix {
        frames,
        hop,
        sample_rate: audio.sample_rate,
    })
}

/// Hamming window of length n, built symmetrically so w[i] == w[n-1-i]
/// holds bit-exactly.
pub fn hamming_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "window length must be at least 2");
    let mut w = vec![0.0; n];
    for i in 0..=(n - 1) / 2 {
        let v = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
        w[i] = v;
        w[n - 1 - i] = v;
    }
    w
}

/// Multiply every frame elementwise by a Hamming window.
pub fn apply_hamming(mut frames: FrameMatrix) -> Result<FrameMatrix> {
    let n = frames.frame_len();
    if n < 2 {
        return Err(Error::Config("frame length must be at least 2".into()));
    }
    let w = hamming_window(n);
    for t in 0..frames.n_frames() {
        for (x, wi) in frames.frames.row_mut(t).iter_mut().zip(&w) {
            *x *= wi;
        }
    }
    Ok(frames)
}

/// Periodogram power spectrum of every frame: |DFT_K(frame)|^2 / N over
/// bins 0..=K/2, with N the analysis-window length. Frames are zero-padded
/// up to `fft_size`.
pub fn power_spectrum(frames: &FrameMatrix, fft_size: usize) -> Result<PowerSpectrumSequence> {
    let n = frames.frame_len();
    if fft_size < n {
        return Err(Error::Config(format!(
            "fft size {fft_size} smaller than frame length {n}"
        )));
    }

    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let n_bins = fft_size / 2 + 1;
    let norm = 1.0 / n as f64;

    let mut spectra = Matrix::zeros(frames.n_frames(), n_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..frames.n_frames() {
        for (slot, &x) in buf.iter_mut().zip(frames.frames.row(t)) {
            *slot = Complex::new(x, 0.0);
        }
        for slot in buf.iter_mut().skip(n) {
            *slot = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        let out = spectra.row_mut(t);
        for (b, slot) in out.iter_mut().enumerate() {
            *slot = buf[b].norm_sqr() * norm;
        }
    }
    Ok(PowerSpectrumSequence {
        spectra,
        fft_size,
        sample_rate: frames.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, sample_rate: u32, n: usize) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).cos())
            .collect();
        AudioBuffer::new(samples, sample_rate)
    }

    #[test]
    fn frame_count_matches_hop_arithmetic() {
        // floor((3200 - 320) / 160) + 1 = 19
        let audio = AudioBuffer::new(vec![0.0; 3200], 16000);
        let fm = frame_signal(&audio, 20.0, 0.5).unwrap();
        assert_eq!(fm.n_frames(), 19);
        assert_eq!(fm.frame_len(), 320);
        assert_eq!(fm.hop, 160);
    }

    #[test]
    fn exactly_one_frame_at_boundary() {
        let audio = AudioBuffer::new(vec![0.0; 320], 16000);
        let fm = frame_signal(&audio, 20.0, 0.5).unwrap();
        assert_eq!(fm.n_frames(), 1);
    }

    #[test]
    fn short_utterance_is_an_error() {
        let audio = AudioBuffer::new(vec![0.0; 319], 16000);
        let err = frame_signal(&audio, 20.0, 0.5).unwrap_err();
        assert!(err.to_string().contains("utterance too short"));
    }

    #[test]
    fn frames_are_contiguous_hops() {
        let samples: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let audio = AudioBuffer::new(samples, 16000);
        let fm = frame_signal(&audio, 20.0, 0.5).unwrap();
        for t in 0..fm.n_frames() {
            assert_eq!(fm.frames.row(t)[0], (t * fm.hop) as f64);
        }
    }

    #[test]
    fn zero_overlap_hops_a_full_frame() {
        let audio = AudioBuffer::new(vec![0.0; 3200], 16000);
        let half = frame_signal(&audio, 20.0, 0.5).unwrap();
        let none = frame_signal(&audio, 20.0, 0.0).unwrap();
        assert_eq!(none.hop, 320);
        assert_eq!(none.n_frames(), 10);
        assert_eq!(half.n_frames(), 19);
    }

    #[test]
    fn hamming_on_ones_is_the_window_itself() {
        let audio = AudioBuffer::new(vec![1.0; 320], 16000);
        let fm = apply_hamming(frame_signal(&audio, 20.0, 0.5).unwrap()).unwrap();
        let w = hamming_window(320);
        assert_eq!(fm.frames.row(0), w.as_slice());
    }

    #[test]
    fn hamming_endpoints_are_0_08() {
        for n in [2usize, 3, 17, 320] {
            let w = hamming_window(n);
            assert!((w[0] - 0.08).abs() < 1e-15);
            assert!((w[n - 1] - 0.08).abs() < 1e-15);
        }
    }

    #[test]
    fn hamming_symmetry_is_exact() {
        for n in [2usize, 5, 320, 321] {
            let w = hamming_window(n);
            for i in 0..n {
                assert_eq!(w[i].to_bits(), w[n - 1 - i].to_bits(), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn hamming_on_zeros_is_zeros() {
        let audio = AudioBuffer::new(vec![0.0; 640], 16000);
        let fm = apply_hamming(frame_signal(&audio, 20.0, 0.5).unwrap()).unwrap();
        assert!(fm.frames.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pre_emphasis_zero_is_identity_and_nonzero_filters() {
        let audio = AudioBuffer::new(vec![1.0, 1.0, 1.0, 1.0], 16000);
        let same = pre_emphasis(&audio, 0.0);
        assert_eq!(same.samples, audio.samples);
        let hp = pre_emphasis(&audio, 0.97);
        assert_eq!(hp.samples[0], 1.0);
        for &y in &hp.samples[1..] {
            assert!((y - 0.03).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_frame_gives_zero_spectrum() {
        let audio = AudioBuffer::new(vec![0.0; 320], 16000);
        let fm = frame_signal(&audio, 20.0, 0.5).unwrap();
        let ps = power_spectrum(&fm, 512).unwrap();
        assert!(ps.spectra.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fft_size_below_frame_len_is_config_error() {
        let audio = AudioBuffer::new(vec![0.0; 320], 16000);
        let fm = frame_signal(&audio, 20.0, 0.5).unwrap();
        assert!(matches!(power_spectrum(&fm, 256), Err(Error::Config(_))));
    }

    #[test]
    fn unit_impulse_spectrum_is_flat_quarter() {
        // 4-point DFT of [1,0,0,0] has |X[b]| = 1 everywhere; /N = 1/4.
        let frames = FrameMatrix {
            frames: Matrix::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]),
            hop: 4,
            sample_rate: 16000,
        };
        let ps = power_spectrum(&frames, 4).unwrap();
        assert_eq!(ps.n_bins(), 3);
        for b in 0..3 {
            assert!((ps.spectra.row(0)[b] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_bin_cosine_concentrates_and_satisfies_parseval() {
        // bin 32 of a 512-point transform at 16 kHz = 1000 Hz; frame length
        // 512 so the tone lands exactly on the bin. Window bypassed.
        let audio = tone(1000.0, 16000, 512);
        let frames = FrameMatrix {
            frames: Matrix::from_vec(1, 512, audio.samples.clone()),
            hop: 512,
            sample_rate: 16000,
        };
        let ps = power_spectrum(&frames, 512).unwrap();
        let row = ps.spectra.row(0);
        let peak = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 32);
        let off_peak: f64 = row
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != 32)
            .map(|(_, v)| v)
            .sum();
        assert!(off_peak < 1e-18 * row[32]);
        assert_parseval(&audio.samples, &ps, 512);
    }

    // Time-domain energy of the padded frame must equal sum over all K bins
    // of |X|^2 / K. Stored spectra hold |X|^2 / N on bins 0..=K/2, so the
    // full-spectrum sum is rebuilt through conjugate symmetry.
    fn assert_parseval(samples: &[f64], ps: &PowerSpectrumSequence, n: usize) {
        let k = ps.fft_size;
        let row = ps.spectra.row(0);
        let mut spec_energy = row[0] + row[k / 2];
        spec_energy += 2.0 * row[1..k / 2].iter().sum::<f64>();
        spec_energy *= n as f64 / k as f64;
        let time_energy: f64 = samples.iter().map(|x| x * x).sum();
        let rel = (spec_energy - time_energy).abs() / time_energy.max(1e-300);
        assert!(rel < 1e-9, "parseval relative error {rel}");
    }

    proptest! {
        #[test]
        fn power_spectra_are_non_negative(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..640).map(|_| rng.random_range(-1.0..1.0)).collect();
            let audio = AudioBuffer::new(samples, 16000);
            let fm = apply_hamming(frame_signal(&audio, 20.0, 0.5).unwrap()).unwrap();
            let ps = power_spectrum(&fm, 512).unwrap();
            prop_assert!(ps.spectra.data().iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn parseval_holds_for_random_frames(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..320).map(|_| rng.random_range(-1.0..1.0)).collect();
            let frames = FrameMatrix {
                frames: Matrix::from_vec(1, 320, samples.clone()),
                hop: 320,
                sample_rate: 16000,
            };
            let ps = power_spectrum(&frames, 512).unwrap();
            // padded frame energy equals raw frame energy: padding is zeros
            let k = ps.fft_size;
            let row = ps.spectra.row(0);
            let mut spec_energy = row[0] + row[k / 2];
            spec_energy += 2.0 * row[1..k / 2].iter().sum::<f64>();
            spec_energy *= 320.0 / k as f64;
            let time_energy: f64 = samples.iter().map(|x| x * x).sum();
            prop_assert!((spec_energy - time_energy).abs() / time_energy < 1e-9);
        }
    }
}
