//! Corpus ingestion: PCM WAV reading, protocol files, and the on-disk
//! feature cache with its manifest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{AttackTag, Label};
use crate::features::{decode_cache, encode_cache, Dynamics, FeatureConfig, FeatureMatrix};
use crate::signal::AudioBuffer;

/// Read a mono 16-bit PCM RIFF/WAVE file, scaling samples to [-1, 1].
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav(format!("{}: not a RIFF/WAVE file", path.display())));
    }

    let mut sample_rate: Option<u32> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        let Some(body_end) = body_end else {
            return Err(Error::Wav(format!(
                "{}: chunk {:?} overruns the file",
                path.display(),
                String::from_utf8_lossy(id)
            )));
        };
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav(format!("{}: fmt chunk too short", path.display())));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                if format != 1 {
                    return Err(Error::Wav(format!(
                        "{}: unsupported audio format: {format} (expected PCM)",
                        path.display()
                    )));
                }
                if channels != 1 {
                    return Err(Error::Wav(format!(
                        "{}: unsupported channel count: {channels}",
                        path.display()
                    )));
                }
                if bits != 16 {
                    return Err(Error::Wav(format!(
                        "{}: unsupported bit depth: {bits}",
                        path.display()
                    )));
                }
                sample_rate = Some(rate);
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunk bodies are padded to even lengths
        pos = body_end + (size & 1);
    }

    let sample_rate = sample_rate
        .ok_or_else(|| Error::Wav(format!("{}: missing fmt chunk", path.display())))?;
    let data =
        data.ok_or_else(|| Error::Wav(format!("{}: missing data chunk", path.display())))?;
    if data.len() % 2 != 0 {
        return Err(Error::Wav(format!("{}: odd data chunk length", path.display())));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64 / 32768.0)
        .collect();
    Ok(AudioBuffer::new(samples, sample_rate))
}

/// Write a mono 16-bit PCM WAV file; the inverse of [`read_wav`].
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let n = audio.samples.len();
    let data_len = (n * 2) as u32;
    let mut buf = Vec::with_capacity(44 + n * 2);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVE");
    buf.extend_from_slice(b"fmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes()); // PCM
    buf.extend_from_slice(&1u16.to_le_bytes()); // mono
    buf.extend_from_slice(&audio.sample_rate.to_le_bytes());
    buf.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    for &x in &audio.samples {
        let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
        }
    }
}

/// One protocol line: an utterance with its label and provenance.
#[derive(Debug, Clone)]
pub struct ProtocolEntry {
    pub utterance_id: String,
    pub audio_path: PathBuf,
    pub label: Label,
    pub attack: Option<AttackTag>,
    pub split: Split,
}

/// Label/attack counts for sanity reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProtocolSummary {
    pub genuine: usize,
    pub spoof: usize,
    pub per_attack: [usize; 5],
}

pub fn summarize(entries: &[ProtocolEntry]) -> ProtocolSummary {
    let mut s = ProtocolSummary::default();
    for e in entries {
        match e.label {
            Label::Genuine => s.genuine += 1,
            Label::Spoof => s.spoof += 1,
        }
        if let Some(tag) = e.attack {
            s.per_attack[tag.index()] += 1;
        }
    }
    s
}

/// Parse a whitespace-delimited protocol file: utt_id, relative audio
/// path, label (`human` | `spoof`), attack (`S1`..`S5` | `-`).
pub fn parse_protocol(path: &Path, split: Split) -> Result<Vec<ProtocolEntry>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Protocol {
                line: i + 1,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let label = match fields[2] {
            "human" => Label::Genuine,
            "spoof" => Label::Spoof,
            other => {
                return Err(Error::Protocol {
                    line: i + 1,
                    reason: format!("unknown label {other:?} (expected human or spoof)"),
                })
            }
        };
        let attack = match fields[3] {
            "-" => None,
            tag => Some(AttackTag::parse(tag).map_err(|_| Error::Protocol {
                line: i + 1,
                reason: format!("unknown attack tag {tag:?}"),
            })?),
        };
        if label == Label::Genuine && attack.is_some() {
            return Err(Error::Protocol {
                line: i + 1,
                reason: "genuine entry carries an attack tag".into(),
            });
        }
        entries.push(ProtocolEntry {
            utterance_id: fields[0].to_string(),
            audio_path: PathBuf::from(fields[1]),
            label,
            attack,
            split,
        });
    }
    Ok(entries)
}

/// Convert an ASVspoof-2015-style release protocol (four fields:
/// speaker, utterance, method `-`|`S1`..`S5`, key `human`|`spoof`) into
/// the native format, deriving audio paths from a template in which
/// `{utt}` and `{speaker}` are substituted.
pub fn convert_asvspoof_protocol(
    release_text: &str,
    audio_path_template: &str,
) -> Result<String> {
    let mut out = String::new();
    for (i, line) in release_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Protocol {
                line: i + 1,
                reason: format!(
                    "expected 4 fields (speaker, utterance, method, key), got {}",
                    fields.len()
                ),
            });
        }
        let (speaker, utt, method, key) = (fields[0], fields[1], fields[2], fields[3]);
        if key != "human" && key != "spoof" {
            return Err(Error::Protocol {
                line: i + 1,
                reason: format!("unknown key {key:?}"),
            });
        }
        if method != "-" {
            AttackTag::parse(method).map_err(|_| Error::Protocol {
                line: i + 1,
                reason: format!("unknown method {method:?}"),
            })?;
        }
        let path = audio_path_template
            .replace("{utt}", utt)
            .replace("{speaker}", speaker);
        use std::fmt::Write as _;
        let _ = writeln!(out, "{utt} {path} {key} {method}");
    }
    Ok(out)
}

/// Check that every protocol entry's audio file exists under `root`.
pub fn verify_paths(entries: &[ProtocolEntry], root: &Path) -> Result<()> {
    for e in entries {
        let full = root.join(&e.audio_path);
        if !full.is_file() {
            return Err(Error::Protocol {
                line: 0,
                reason: format!(
                    "audio for {} not found at {}",
                    e.utterance_id,
                    full.display()
                ),
            });
        }
    }
    Ok(())
}

/// FNV-1a 64-bit content digest.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ManifestEntry {
    rel_path: PathBuf,
    digest: u64,
}

/// On-disk feature cache: one file per (utterance, family, dynamics),
/// tracked by a manifest of content digests.
#[derive(Debug)]
pub struct FeatureCache {
    root: PathBuf,
    manifest: BTreeMap<(String, u8, u8), ManifestEntry>,
}

impl FeatureCache {
    const MANIFEST_NAME: &'static str = "manifest.tsv";

    /// Open (or create) a cache directory and load its manifest if present.
    pub fn open(root: &Path) -> Result<FeatureCache> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut cache = FeatureCache {
            root: root.to_path_buf(),
            manifest: BTreeMap::new(),
        };
        let manifest_path = root.join(Self::MANIFEST_NAME);
        if manifest_path.is_file() {
            let f = std::fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&manifest_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 5 {
                    return Err(Error::Format {
                        what: "cache manifest",
                        reason: format!("line {}: expected 5 fields", i + 1),
                    });
                }
                let family: u8 = fields[1].parse().map_err(|_| Error::Format {
                    what: "cache manifest",
                    reason: format!("line {}: bad family id", i + 1),
                })?;
                let dynamics: u8 = fields[2].parse().map_err(|_| Error::Format {
                    what: "cache manifest",
                    reason: format!("line {}: bad dynamics id", i + 1),
                })?;
                let digest = u64::from_str_radix(fields[4], 16).map_err(|_| Error::Format {
                    what: "cache manifest",
                    reason: format!("line {}: bad digest", i + 1),
                })?;
                cache.manifest.insert(
                    (fields[0].to_string(), family, dynamics),
                    ManifestEntry {
                        rel_path: PathBuf::from(fields[3]),
                        digest,
                    },
                );
            }
        }
        Ok(cache)
    }

    fn key(utterance_id: &str, config: &FeatureConfig) -> (String, u8, u8) {
        (
            utterance_id.to_string(),
            config.family.id(),
            config.dynamics.id(),
        )
    }

    fn file_tag(dynamics: Dynamics) -> &'static str {
        match dynamics {
            Dynamics::Static => "static",
            Dynamics::StaticDeltas => "staticdd",
            Dynamics::DeltasOnly => "dd",
        }
    }

    fn rel_path_for(utterance_id: &str, config: &FeatureConfig) -> PathBuf {
        PathBuf::from(format!(
            "{utterance_id}.{}.{}.ftr",
            config.family.name(),
            Self::file_tag(config.dynamics)
        ))
    }

    /// Serialize, write atomically (temp then rename) and record the digest.
    pub fn store(&mut self, features: &FeatureMatrix) -> Result<()> {
        let bytes = encode_cache(features);
        let digest = fnv1a64(&bytes);
        let rel = Self::rel_path_for(&features.utterance_id, &features.config);
        let full = self.root.join(&rel);
        let tmp = self.root.join(format!(
            "{}.tmp-{}",
            rel.display(),
            std::process::id()
        ));
        {
            let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::rename(&tmp, &full).map_err(|e| Error::io(&full, e))?;
        self.manifest.insert(
            Self::key(&features.utterance_id, &features.config),
            ManifestEntry {
                rel_path: rel,
                digest,
            },
        );
        Ok(())
    }

    /// Reload a cached matrix, verifying the manifest digest first.
    pub fn load(&self, utterance_id: &str, config: &FeatureConfig) -> Result<FeatureMatrix> {
        let entry = self
            .manifest
            .get(&Self::key(utterance_id, config))
            .ok_or_else(|| {
                Error::CacheCorrupt(format!(
                    "{utterance_id}: no cache entry for {}/{}",
                    config.family, config.dynamics
                ))
            })?;
        let full = self.root.join(&entry.rel_path);
        let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
        let digest = fnv1a64(&bytes);
        if digest != entry.digest {
            return Err(Error::CacheCorrupt(format!(
                "{utterance_id}: digest mismatch on {} (expected {:016x}, got {digest:016x})",
                entry.rel_path.display(),
                entry.digest
            )));
        }
        decode_cache(&bytes, config, utterance_id)
    }

    /// True when a manifest entry exists and the file still matches its
    /// digest; used to skip work on resume.
    pub fn contains_valid(&self, utterance_id: &str, config: &FeatureConfig) -> bool {
        let Some(entry) = self.manifest.get(&Self::key(utterance_id, config)) else {
            return false;
        };
        let Ok(bytes) = std::fs::read(self.root.join(&entry.rel_path)) else {
            return false;
        };
        fnv1a64(&bytes) == entry.digest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    /// Persist the manifest, atomically and in deterministic key order.
    pub fn flush_manifest(&self) -> Result<()> {
        let mut text = String::new();
        for ((utt, family, dynamics), entry) in &self.manifest {
            use std::fmt::Write as _;
            let _ = writeln!(
                text,
                "{utt}\t{family}\t{dynamics}\t{}\t{:016x}",
                entry.rel_path.display(),
                entry.digest
            );
        }
        let path = self.root.join(Self::MANIFEST_NAME);
        let tmp = self.root.join(format!("{}.tmp-{}", Self::MANIFEST_NAME, std::process::id()));
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}
