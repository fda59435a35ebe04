//! Two-class detector back end: diagonal-covariance Gaussian mixtures
//! trained by maximum-likelihood EM, scored by average log-likelihood
//! ratio.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{Dynamics, FeatureFamily, FeatureMatrix};
use crate::matrix::Matrix;

/// Frames per E-step work unit. Partial statistics are folded in chunk
/// order, so results do not depend on the worker count.
const CHUNK_FRAMES: usize = 4096;
/// Chunk results held in memory at once while folding.
const CHUNK_BATCH: usize = 64;
/// Responsibility mass below which a component is re-seeded.
const EMPTY_RESP: f64 = 1e-8;
/// Absolute lower bound for the variance floor, for dimensions whose
/// global variance is zero.
const VAR_FLOOR_ABS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TrainingOptions {
    pub n_components: usize,
    pub n_em_iterations: usize,
    pub seed: u64,
    pub variance_floor_factor: f64,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            n_components: 512,
            n_em_iterations: 10,
            seed: 1,
            variance_floor_factor: 0.01,
        }
    }
}

impl TrainingOptions {
    fn validate(&self) -> Result<()> {
        if self.n_components == 0 || self.n_em_iterations == 0 {
            return Err(Error::Config(
                "component and iteration counts must be positive".into(),
            ));
        }
        if !self.variance_floor_factor.is_finite() || self.variance_floor_factor <= 0.0 {
            return Err(Error::Config("variance floor factor must be positive".into()));
        }
        Ok(())
    }
}

/// Feature configuration a model is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint {
    pub family: FeatureFamily,
    pub dynamics: Dynamics,
}

/// One class-conditional mixture: weights on the simplex, per-component
/// means and strictly positive diagonal variances.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Matrix,
    pub variances: Matrix,
    pub seed: u64,
    pub fingerprint: Option<Fingerprint>,
    /// Training-set average log-likelihood seen entering each EM
    /// iteration. Not serialized.
    pub em_avg_log_likelihood: Vec<f64>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Bind the model to the feature configuration it was trained on.
    pub fn with_fingerprint(mut self, family: FeatureFamily, dynamics: Dynamics) -> GmmModel {
        self.fingerprint = Some(Fingerprint { family, dynamics });
        self
    }
}

struct ChunkStats {
    log_lik: f64,
    resp: Vec<f64>,
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
}

/// Per-component quantities the E-step needs.
struct Params {
    log_weights: Vec<f64>,
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
    means: Vec<f64>,
    c: usize,
    d: usize,
}

impl Params {
    fn new(weights: &[f64], means: &Matrix, variances: &Matrix) -> Params {
        let c = weights.len();
        let d = means.cols();
        let log_2pi = (2.0 * std::f64::consts::PI).ln();
        let mut log_norm = Vec::with_capacity(c);
        let mut inv_var = Vec::with_capacity(c * d);
        for j in 0..c {
            let var = variances.row(j);
            let log_det: f64 = var.iter().map(|v| v.ln()).sum();
            log_norm.push(-0.5 * (d as f64 * log_2pi + log_det));
            inv_var.extend(var.iter().map(|v| 1.0 / v));
        }
        Params {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            log_norm,
            inv_var,
            means: means.data().to_vec(),
            c,
            d,
        }
    }

    /// log( w_j N(x; mu_j, sigma_j^2) ) for every component.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            let mu = &self.means[j * self.d..(j + 1) * self.d];
            let iv = &self.inv_var[j * self.d..(j + 1) * self.d];
            let mut maha = 0.0;
            for ((&xi, &mi), &ivi) in x.iter().zip(mu).zip(iv) {
                let diff = xi - mi;
                maha += diff * diff * ivi;
            }
            *slot = self.log_weights[j] + self.log_norm[j] - 0.5 * maha;
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn e_step_chunk(data: &Matrix, range: std::ops::Range<usize>, params: &Params) -> ChunkStats {
    let c = params.c;
    let d = params.d;
    let mut stats = ChunkStats {
        log_lik: 0.0,
        resp: vec![0.0; c],
        sum_x: vec![0.0; c * d],
        sum_x2: vec![0.0; c * d],
    };
    let mut lp = vec![0.0; c];
    for t in range {
        let x = data.row(t);
        params.log_joint(x, &mut lp);
        let lse = log_sum_exp(&lp);
        stats.log_lik += lse;
        for (j, &lpj) in lp.iter().enumerate() {
            let gamma = (lpj - lse).exp();
            if gamma == 0.0 {
                continue;
            }
            stats.resp[j] += gamma;
            let s1 = &mut stats.sum_x[j * d..(j + 1) * d];
            let s2 = &mut stats.sum_x2[j * d..(j + 1) * d];
            for ((s1i, s2i), &xi) in s1.iter_mut().zip(s2.iter_mut()).zip(x) {
                *s1i += gamma * xi;
                *s2i += gamma * xi * xi;
            }
        }
    }
    stats
}

/// Full-data E-step with a deterministic chunk-ordered reduction.
fn e_step(data: &Matrix, params: &Params) -> ChunkStats {
    let n = data.rows();
    let c = params.c;
    let d = params.d;
    let mut total = ChunkStats {
        log_lik: 0.0,
        resp: vec![0.0; c],
        sum_x: vec![0.0; c * d],
        sum_x2: vec![0.0; c * d],
    };
    let chunk_starts: Vec<usize> = (0..n).step_by(CHUNK_FRAMES).collect();
    for batch in chunk_starts.chunks(CHUNK_BATCH) {
        let partials: Vec<ChunkStats> = batch
            .par_iter()
            .map(|&start| e_step_chunk(data, start..(start + CHUNK_FRAMES).min(n), params))
            .collect();
        for p in partials {
            total.log_lik += p.log_lik;
            for (a, b) in total.resp.iter_mut().zip(&p.resp) {
                *a += b;
            }
            for (a, b) in total.sum_x.iter_mut().zip(&p.sum_x) {
                *a += b;
            }
            for (a, b) in total.sum_x2.iter_mut().zip(&p.sum_x2) {
                *a += b;
            }
        }
    }
    total
}

fn global_mean_var(data: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = data.rows() as f64;
    let d = data.cols();
    let mut mean = vec![0.0; d];
    for row in data.iter_rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for row in data.iter_rows() {
        for (v, (&x, &m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
            let diff = x - m;
            *v += diff * diff;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

/// Train one mixture: seeded random frames as initial means, the global
/// diagonal variance everywhere, uniform weights, then exactly
/// `n_em_iterations` EM updates with per-dimension variance flooring.
pub fn train(data: &Matrix, opts: &TrainingOptions) -> Result<GmmModel> {
    opts.validate()?;
    let n = data.rows();
    let d = data.cols();
    if d == 0 {
        return Err(Error::Config("training data has zero dimensions".into()));
    }
    if n < opts.n_components {
        return Err(Error::InsufficientFrames {
            got: n,
            need: opts.n_components,
        });
    }
    if data.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }

    let c = opts.n_components;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (_gmean, gvar) = global_mean_var(data);
    let floor: Vec<f64> = gvar
        .iter()
        .map(|&v| (opts.variance_floor_factor * v).max(VAR_FLOOR_ABS))
        .collect();
    let init_var: Vec<f64> = gvar.iter().zip(&floor).map(|(&v, &f)| v.max(f)).collect();

    let picks = rand::seq::index::sample(&mut rng, n, c);
    let mut means = Matrix::zeros(c, d);
    let mut variances = Matrix::zeros(c, d);
    for (j, t) in picks.into_iter().enumerate() {
        means.row_mut(j).copy_from_slice(data.row(t));
        variances.row_mut(j).copy_from_slice(&init_var);
    }
    let mut weights = vec![1.0 / c as f64; c];
    let mut em_ll = Vec::with_capacity(opts.n_em_iterations);

    for _ in 0..opts.n_em_iterations {
        let params = Params::new(&weights, &means, &variances);
        let stats = e_step(data, &params);
        em_ll.push(stats.log_lik / n as f64);

        let mut raw_mass = vec![0.0; c];
        for (j, mass_slot) in raw_mass.iter_mut().enumerate() {
            let mass = stats.resp[j];
            if mass < EMPTY_RESP {
                // dead component: restart it on a random training frame
                let t = rng.random_range(0..n);
                means.row_mut(j).copy_from_slice(data.row(t));
                variances.row_mut(j).copy_from_slice(&init_var);
                *mass_slot = 1.0;
                continue;
            }
            *mass_slot = mass;
            let mu = means.row_mut(j);
            for (slot, &s1) in mu.iter_mut().zip(&stats.sum_x[j * d..(j + 1) * d]) {
                *slot = s1 / mass;
            }
            let mu = means.row(j).to_vec();
            let var = variances.row_mut(j);
            let s2 = &stats.sum_x2[j * d..(j + 1) * d];
            for ((slot, &s2i), (&mi, &fi)) in
                var.iter_mut().zip(s2).zip(mu.iter().zip(&floor))
            {
                *slot = (s2i / mass - mi * mi).max(fi);
            }
        }
        let mass_total: f64 = raw_mass.iter().sum();
        for (w, m) in weights.iter_mut().zip(&raw_mass) {
            *w = m / mass_total;
        }

        #[cfg(debug_assertions)]
        {
            let sum: f64 = weights.iter().sum();
            debug_assert!((sum - 1.0).abs() < 1e-12, "weight simplex violated: {sum}");
            debug_assert!(weights.iter().all(|&w| w >= 0.0));
            for j in 0..c {
                for (v, f) in variances.row(j).iter().zip(&floor) {
                    debug_assert!(v >= f);
                }
            }
        }
    }

    Ok(GmmModel {
        weights,
        means,
        variances,
        seed: opts.seed,
        fingerprint: None,
        em_avg_log_likelihood: em_ll,
    })
}

/// Average per-frame log-likelihood of a frame matrix under one model,
/// with log-sum-exp stabilization.
pub fn avg_log_likelihood(values: &Matrix, model: &GmmModel) -> Result<f64> {
    if values.cols() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "frames are {}-dimensional, model expects {}",
            values.cols(),
            model.dim()
        )));
    }
    if values.rows() == 0 {
        return Err(Error::Config("cannot score an empty frame matrix".into()));
    }
    let params = Params::new(&model.weights, &model.means, &model.variances);
    let mut lp = vec![0.0; model.n_components()];
    let mut total = 0.0;
    for row in values.iter_rows() {
        params.log_joint(row, &mut lp);
        total += log_sum_exp(&lp);
    }
    Ok(total / values.rows() as f64)
}

/// Log-likelihood ratio of one utterance: positive favors the natural
/// class.
pub fn llr_score(
    features: &FeatureMatrix,
    natural: &GmmModel,
    synthetic: &GmmModel,
) -> Result<f64> {
    for (name, model) in [("natural", natural), ("synthetic", synthetic)] {
        if let Some(fp) = model.fingerprint {
            if fp.family != features.config.family || fp.dynamics != features.config.dynamics {
                return Err(Error::FingerprintMismatch(format!(
                    "{name} model was trained on {}/{}, features are {}/{}",
                    fp.family, fp.dynamics, features.config.family, features.config.dynamics
                )));
            }
        }
    }
    Ok(avg_log_likelihood(&features.values, natural)?
        - avg_log_likelihood(&features.values, synthetic)?)
}

const MODEL_MAGIC: [u8; 4] = *b"GMM1";

/// Serialize to the binary model layout: magic `GMM1`, u32 component
/// count, u32 dimension, family id, dynamics id, u64 seed, then weights,
/// means and variances as little-endian f64.
pub fn save_model(model: &GmmModel, path: &Path) -> Result<()> {
    let fp = model.fingerprint.ok_or_else(|| {
        Error::Config("model has no feature fingerprint; stamp it before saving".into())
    })?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&(model.n_components() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    buf.push(fp.family.id());
    buf.push(fp.dynamics.id());
    buf.extend_from_slice(&model.seed.to_le_bytes());
    for &w in &model.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    for &m in model.means.data() {
        buf.extend_from_slice(&m.to_le_bytes());
    }
    for &v in model.variances.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GmmModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    const HEADER: usize = 4 + 4 + 4 + 1 + 1 + 8;
    if bytes.len() < HEADER {
        return Err(Error::Format {
            what: "model file",
            reason: "shorter than header".into(),
        });
    }
    if bytes[0..4] != MODEL_MAGIC {
        return Err(Error::Format {
            what: "model file",
            reason: format!("bad magic {:?}", &bytes[0..4]),
        });
    }
    let c = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if c == 0 || d == 0 {
        return Err(Error::Format {
            what: "model file",
            reason: format!("degenerate shape: {c} components x {d} dimensions"),
        });
    }
    let family = FeatureFamily::from_id(bytes[12])?;
    let dynamics = Dynamics::from_id(bytes[13])?;
    let seed = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let expected = HEADER + 8 * (c + 2 * c * d);
    if bytes.len() != expected {
        return Err(Error::Format {
            what: "model file",
            reason: format!("expected {expected} bytes, got {}", bytes.len()),
        });
    }
    let mut cursor = HEADER;
    let read_f64s = |count: usize, cursor: &mut usize| {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(f64::from_le_bytes(bytes[*cursor..*cursor + 8].try_into().unwrap()));
            *cursor += 8;
        }
        out
    };
    let weights = read_f64s(c, &mut cursor);
    let means = Matrix::from_vec(c, d, read_f64s(c * d, &mut cursor));
    let variances = Matrix::from_vec(c, d, read_f64s(c * d, &mut cursor));
    if variances.data().iter().any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(Error::Format {
            what: "model file",
            reason: "non-positive variance".into(),
        });
    }
    Ok(GmmModel {
        weights,
        means,
        variances,
        seed,
        fingerprint: Some(Fingerprint { family, dynamics }),
        em_avg_log_likelihood: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn opts(c: usize, seed: u64) -> TrainingOptions {
        TrainingOptions {
            n_components: c,
            n_em_iterations: 10,
            seed,
            variance_floor_factor: 0.01,
        }
    }

    fn gaussian_blob(rng: &mut ChaCha8Rng, center: &[f64], std: f64, count: usize) -> Vec<f64> {
        let normal = Normal::new(0.0, std).unwrap();
        let mut data = Vec::with_capacity(count * center.len());
        for _ in 0..count {
            for &c in center {
                data.push(c + normal.sample(rng));
            }
        }
        data
    }

    #[test]
    fn single_component_reaches_the_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 200;
        let d = 3;
        let data = Matrix::from_vec(n, d, gaussian_blob(&mut rng, &[1.0, -2.0, 0.5], 1.3, n));

        let mut o = opts(1, 5);
        o.n_em_iterations = 1;
        let model = train(&data, &o).unwrap();

        // oracle: plain sample mean and population variance
        let mut mean = vec![0.0; d];
        for row in data.iter_rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in data.iter_rows() {
            for (v, (&x, &m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
                *v += (x - m) * (x - m);
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }

        assert_eq!(model.weights, vec![1.0]);
        for (got, expect) in model.means.row(0).iter().zip(&mean) {
            assert!((got - expect).abs() < 1e-12);
        }
        for (got, expect) in model.variances.row(0).iter().zip(&var) {
            assert!((got - expect).abs() < 1e-12);
        }

        // and it is a fixed point of further iterations
        let mut o10 = opts(1, 5);
        o10.n_em_iterations = 10;
        let model10 = train(&data, &o10).unwrap();
        for (got, expect) in model10.means.row(0).iter().zip(&mean) {
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn two_separated_clusters_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let low = gaussian_blob(&mut rng, &[-10.0], 1.0, 500);
        let high = gaussian_blob(&mut rng, &[10.0], 1.0, 500);
        let mut data = low.clone();
        data.extend(high.clone());
        let data = Matrix::from_vec(1000, 1, data);
        let model = train(&data, &opts(2, 1)).unwrap();

        let mut centers: Vec<f64> = (0..2).map(|j| model.means.row(j)[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] + 10.0).abs() < 0.2, "low center {}", centers[0]);
        assert!((centers[1] - 10.0).abs() < 0.2, "high center {}", centers[1]);
        for &w in &model.weights {
            assert!((w - 0.5).abs() < 0.05, "weight {w}");
        }

        // brute-force oracle: with this separation the fitted means land
        // on the per-cluster sample means
        let low_mean: f64 = low.iter().sum::<f64>() / 500.0;
        let high_mean: f64 = high.iter().sum::<f64>() / 500.0;
        assert!((centers[0] - low_mean).abs() < 1e-3);
        assert!((centers[1] - high_mean).abs() < 1e-3);
    }

    #[test]
    fn em_log_likelihood_is_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = gaussian_blob(&mut rng, &[0.0, 0.0], 1.0, 400);
        data.extend(gaussian_blob(&mut rng, &[4.0, -1.0], 0.7, 300));
        data.extend(gaussian_blob(&mut rng, &[-3.0, 2.0], 1.5, 300));
        let data = Matrix::from_vec(1000, 2, data);
        let model = train(&data, &opts(4, 11)).unwrap();
        assert_eq!(model.em_avg_log_likelihood.len(), 10);
        for pair in model.em_avg_log_likelihood.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-8,
                "likelihood dipped: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn training_is_bit_deterministic_across_reruns_and_workers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // spans several E-step chunks
        let n = 10000;
        let data = Matrix::from_vec(n, 3, gaussian_blob(&mut rng, &[0.0, 1.0, -1.0], 2.0, n));

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| train(&data, &opts(8, 13)).unwrap())
        };
        let a = run(1);
        let b = run(1);
        let c = run(4);
        for (x, y) in [(&a, &b), (&a, &c)] {
            assert_eq!(x.weights.len(), y.weights.len());
            for (p, q) in x.weights.iter().zip(&y.weights) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
            for (p, q) in x.means.data().iter().zip(y.means.data()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
            for (p, q) in x.variances.data().iter().zip(y.variances.data()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn simplex_and_floor_hold_after_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = Matrix::from_vec(600, 2, gaussian_blob(&mut rng, &[0.0, 0.0], 1.0, 600));
        let model = train(&data, &opts(16, 2)).unwrap();
        let sum: f64 = model.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(model.weights.iter().all(|&w| w >= 0.0));
        let (_m, gvar) = global_mean_var(&data);
        for j in 0..16 {
            for (v, g) in model.variances.row(j).iter().zip(&gvar) {
                assert!(*v >= 0.01 * g - 1e-15);
            }
        }
    }

    #[test]
    fn too_few_frames_errors() {
        let data = Matrix::zeros(5, 2);
        assert!(matches!(
            train(&data, &opts(8, 1)),
            Err(Error::InsufficientFrames { got: 5, need: 8 })
        ));
    }

    #[test]
    fn non_finite_data_errors() {
        let mut data = Matrix::zeros(10, 2);
        data.row_mut(3)[1] = f64::NAN;
        assert!(matches!(train(&data, &opts(2, 1)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn likelihood_at_the_mean_matches_the_closed_form() {
        let d = 4;
        let model = GmmModel {
            weights: vec![1.0],
            means: Matrix::from_vec(1, d, vec![0.5; d]),
            variances: Matrix::from_vec(1, d, vec![1.0; d]),
            seed: 0,
            fingerprint: None,
            em_avg_log_likelihood: Vec::new(),
        };
        let x = Matrix::from_vec(1, d, vec![0.5; d]);
        let ll = avg_log_likelihood(&x, &model).unwrap();
        let expect = -(d as f64 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn duplicated_component_scores_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Matrix::from_vec(6, 2, gaussian_blob(&mut rng, &[0.3, -0.4], 1.0, 6));
        let single = GmmModel {
            weights: vec![1.0],
            means: Matrix::from_vec(1, 2, vec![0.1, 0.2]),
            variances: Matrix::from_vec(1, 2, vec![0.5, 2.0]),
            seed: 0,
            fingerprint: None,
            em_avg_log_likelihood: Vec::new(),
        };
        let split = GmmModel {
            weights: vec![0.5, 0.5],
            means: Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.1, 0.2]),
            variances: Matrix::from_vec(2, 2, vec![0.5, 2.0, 0.5, 2.0]),
            seed: 0,
            fingerprint: None,
            em_avg_log_likelihood: Vec::new(),
        };
        let a = avg_log_likelihood(&x, &single).unwrap();
        let b = avg_log_likelihood(&x, &split).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn likelihood_matches_a_naive_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 3;
        let x = Matrix::from_vec(5, d, gaussian_blob(&mut rng, &[0.0, 0.0, 0.0], 1.0, 5));
        let model = GmmModel {
            weights: vec![0.3, 0.7],
            means: Matrix::from_vec(2, d, vec![0.5, -0.2, 0.1, -1.0, 0.8, 0.0]),
            variances: Matrix::from_vec(2, d, vec![0.9, 1.1, 0.6, 2.0, 0.4, 1.5]),
            seed: 0,
            fingerprint: None,
            em_avg_log_likelihood: Vec::new(),
        };
        let got = avg_log_likelihood(&x, &model).unwrap();

        // direct density summation, no log-sum-exp
        let mut total = 0.0;
        for t in 0..5 {
            let mut density = 0.0;
            for j in 0..2 {
                let mut q = 0.0;
                let mut det = 1.0;
                for i in 0..d {
                    let diff = x.row(t)[i] - model.means.row(j)[i];
                    q += diff * diff / model.variances.row(j)[i];
                    det *= model.variances.row(j)[i];
                }
                let norm = (2.0 * std::f64::consts::PI).powi(d as i32) * det;
                density += model.weights[j] * (-0.5 * q).exp() / norm.sqrt();
            }
            total += density.ln();
        }
        let expect = total / 5.0;
        assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
    }

    #[test]
    fn llr_of_identical_models_is_zero_and_antisymmetric() {
        use crate::features::{FeatureConfig, FeatureMatrix};
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let natural = {
            let data = Matrix::from_vec(100, 2, gaussian_blob(&mut rng, &[1.0, 1.0], 1.0, 100));
            train(&data, &opts(2, 3)).unwrap()
        };
        let synthetic = {
            let data = Matrix::from_vec(100, 2, gaussian_blob(&mut rng, &[-4.0, -4.0], 1.0, 100));
            train(&data, &opts(2, 4)).unwrap()
        };
        let config = FeatureConfig {
            family: FeatureFamily::Mfcc,
            dynamics: Dynamics::Static,
            n_filters: 2,
            n_ceps: 2,
            block_spec: None,
        };
        let features = FeatureMatrix {
            values: Matrix::from_vec(10, 2, gaussian_blob(&mut rng, &[1.0, 1.0], 1.0, 10)),
            config,
            utterance_id: "u".into(),
        };
        let same = llr_score(&features, &natural, &natural).unwrap();
        assert_eq!(same, 0.0);
        let ab = llr_score(&features, &natural, &synthetic).unwrap();
        let ba = llr_score(&features, &synthetic, &natural).unwrap();
        assert_eq!(ab.to_bits(), (-ba).to_bits());
        // features drawn near the natural model score positive
        assert!(ab > 0.0);
    }

    #[test]
    fn llr_rejects_mismatched_fingerprints() {
        use crate::features::{FeatureConfig, FeatureMatrix};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Matrix::from_vec(50, 2, gaussian_blob(&mut rng, &[0.0, 0.0], 1.0, 50));
        let model = train(&data, &opts(2, 1))
            .unwrap()
            .with_fingerprint(FeatureFamily::Sfcc, Dynamics::Static);
        let features = FeatureMatrix {
            values: Matrix::zeros(3, 2),
            config: FeatureConfig {
                family: FeatureFamily::Mfcc,
                dynamics: Dynamics::Static,
                n_filters: 2,
                n_ceps: 2,
                block_spec: None,
            },
            utterance_id: "u".into(),
        };
        assert!(matches!(
            llr_score(&features, &model, &model),
            Err(Error::FingerprintMismatch(_))
        ));
    }

    #[test]
    fn dimension_mismatch_errors() {
        let model = GmmModel {
            weights: vec![1.0],
            means: Matrix::zeros(1, 3),
            variances: Matrix::from_vec(1, 3, vec![1.0; 3]),
            seed: 0,
            fingerprint: None,
            em_avg_log_likelihood: Vec::new(),
        };
        let x = Matrix::zeros(2, 4);
        assert!(matches!(
            avg_log_likelihood(&x, &model),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn model_file_round_trips_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data = Matrix::from_vec(300, 4, gaussian_blob(&mut rng, &[0.0; 4], 1.0, 300));
        let model = train(&data, &opts(4, 9))
            .unwrap()
            .with_fingerprint(FeatureFamily::Imobt, Dynamics::StaticDeltas);
        let dir = std::env::temp_dir().join(format!("antispoof-gmm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.gmm");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.seed, model.seed);
        assert_eq!(back.fingerprint, model.fingerprint);
        for (a, b) in model.weights.iter().zip(&back.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in model.means.data().iter().zip(back.means.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in model.variances.data().iter().zip(back.variances.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        // corrupt tail
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        let bad = dir.join("bad.gmm");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(load_model(&bad).is_err());
    }
}
