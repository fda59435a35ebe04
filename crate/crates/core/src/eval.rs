//! Detection evaluation: equal error rate via the ROC convex hull and
//! per-attack report tables.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{Dynamics, FeatureFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Genuine,
    Spoof,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Spoof => "spoof",
        }
    }
}

/// The five spoofing algorithms of the evaluation corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackTag {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl AttackTag {
    pub const ALL: [AttackTag; 5] = [
        AttackTag::S1,
        AttackTag::S2,
        AttackTag::S3,
        AttackTag::S4,
        AttackTag::S5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackTag::S1 => "S1",
            AttackTag::S2 => "S2",
            AttackTag::S3 => "S3",
            AttackTag::S4 => "S4",
            AttackTag::S5 => "S5",
        }
    }

    pub fn parse(s: &str) -> Result<AttackTag> {
        AttackTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Format {
                what: "attack tag",
                reason: format!("unknown attack tag {s:?}"),
            })
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone)]
pub struct ScoreEntry {
    pub utterance_id: String,
    pub score: f64,
    pub label: Label,
    pub attack: Option<AttackTag>,
}

/// Labeled trial scores for one feature configuration.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn push(&mut self, entry: ScoreEntry) {
        self.entries.push(entry);
    }

    pub fn genuine_scores(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label == Label::Genuine)
            .map(|e| e.score)
            .collect()
    }

    pub fn spoof_scores(&self, tag: Option<AttackTag>) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.label == Label::Spoof && (tag.is_none() || e.attack == tag))
            .map(|e| e.score)
            .collect()
    }

    /// Write as TSV: utt_id, score, label, attack. Scores use the shortest
    /// decimal form that parses back to the same value.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.entries {
            let attack = e.attack.map_or("-", |t| t.name());
            let _ = writeln!(
                text,
                "{}\t{}\t{}\t{}",
                e.utterance_id,
                e.score,
                e.label.name(),
                attack
            );
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ScoreSet> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = ScoreSet::default();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Protocol {
                    line: i + 1,
                    reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let score: f64 = fields[1].parse().map_err(|_| Error::Protocol {
                line: i + 1,
                reason: format!("bad score {:?}", fields[1]),
            })?;
            let label = match fields[2] {
                "genuine" => Label::Genuine,
                "spoof" => Label::Spoof,
                other => {
                    return Err(Error::Protocol {
                        line: i + 1,
                        reason: format!("bad label {other:?}"),
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
            set.push(ScoreEntry {
                utterance_id: fields[0].to_string(),
                score,
                label,
                attack,
            });
        }
        Ok(set)
    }
}

/// Convex hull of the empirical ROC, from (Pmiss, Pfa) = (0, 1) to (1, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct RocchCurve {
    pub vertices: Vec<(f64, f64)>,
}

#[derive(Clone, Copy)]
struct Block {
    width: u64,
    genuine: u64,
}

impl Block {
    /// mean(self) >= mean(other), compared exactly in integers.
    fn dominates(&self, other: &Block) -> bool {
        (self.genuine as u128) * (other.width as u128)
            >= (other.genuine as u128) * (self.width as u128)
    }
}

/// ROC convex hull from labeled scores via pool-adjacent-violators
/// isotonic regression. Trials with equal scores are pooled before the
/// regression, so the result does not depend on tie order.
pub fn rocch(scores: &ScoreSet) -> Result<RocchCurve> {
    rocch_split(&scores.genuine_scores(), &scores.spoof_scores(None))
}

/// ROCCH of an explicit genuine/spoof score split.
pub fn rocch_split(genuine: &[f64], spoof: &[f64]) -> Result<RocchCurve> {
    if genuine.is_empty() || spoof.is_empty() {
        return Err(Error::SingleClass);
    }
    if genuine.iter().chain(spoof).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let n_gen = genuine.len() as u64;
    let n_spf = spoof.len() as u64;

    let mut trials: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(spoof.iter().map(|&s| (s, false)))
        .collect();
    trials.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // initial blocks: one per distinct score
    let mut blocks: Vec<Block> = Vec::new();
    let mut i = 0;
    while i < trials.len() {
        let mut block = Block { width: 0, genuine: 0 };
        let score = trials[i].0;
        while i < trials.len() && trials[i].0 == score {
            block.width += 1;
            block.genuine += trials[i].1 as u64;
            i += 1;
        }
        blocks.push(block);
    }

    // pool adjacent violators; merging equal means canonicalizes the hull
    let mut stack: Vec<Block> = Vec::with_capacity(blocks.len());
    for b in blocks {
        stack.push(b);
        while stack.len() >= 2 && stack[stack.len() - 2].dominates(&stack[stack.len() - 1]) {
            let top = stack.pop().unwrap();
            let prev = stack.last_mut().unwrap();
            prev.width += top.width;
            prev.genuine += top.genuine;
        }
    }

    // block boundaries are the hull vertices
    let mut vertices = Vec::with_capacity(stack.len() + 1);
    let mut miss = 0u64;
    let mut seen = 0u64;
    vertices.push((0.0, 1.0));
    for b in &stack {
        miss += b.genuine;
        seen += b.width;
        let fa = n_spf - (seen - miss);
        vertices.push((miss as f64 / n_gen as f64, fa as f64 / n_spf as f64));
    }
    Ok(RocchCurve { vertices })
}

/// Equal error rate in percent: the hull's intersection with
/// Pmiss = Pfa.
pub fn eer_from_rocch(curve: &RocchCurve) -> f64 {
    let v = &curve.vertices;
    for i in 0..v.len() {
        let (m, f) = v[i];
        if m == f {
            return m * 100.0;
        }
        if i + 1 < v.len() {
            let (m2, f2) = v[i + 1];
            if m2 - f2 >= 0.0 {
                // crossing lies on this segment
                let t = (f - m) / ((m2 - m) - (f2 - f));
                return (m + t * (m2 - m)) * 100.0;
            }
        }
    }
    // hull always spans d = -1 .. +1, so the loop returns
    unreachable!("rocch curve does not cross the chance diagonal");
}

/// EER in percent of a genuine/spoof split.
pub fn eer_percent(genuine: &[f64], spoof: &[f64]) -> Result<f64> {
    Ok(eer_from_rocch(&rocch_split(genuine, spoof)?))
}

/// One row of the results table: per-attack EERs plus their mean.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub family: FeatureFamily,
    pub dynamics: Dynamics,
    pub cells: [Option<f64>; 5],
    pub average: Option<f64>,
}

impl EvalReport {
    /// Assemble a row; the average is the unweighted mean of the filled
    /// cells.
    pub fn new(family: FeatureFamily, dynamics: Dynamics, cells: [Option<f64>; 5]) -> EvalReport {
        let filled: Vec<f64> = cells.iter().flatten().copied().collect();
        let average = if filled.is_empty() {
            None
        } else {
            Some(filled.iter().sum::<f64>() / filled.len() as f64)
        };
        EvalReport {
            family,
            dynamics,
            cells,
            average,
        }
    }
}

/// Compute one report row: for each attack, the EER of all genuine trials
/// against that attack's spoof trials. Attacks without trials stay empty.
pub fn per_attack_report(
    scores: &ScoreSet,
    family: FeatureFamily,
    dynamics: Dynamics,
) -> Result<EvalReport> {
    for e in &scores.entries {
        if e.label == Label::Spoof && e.attack.is_none() {
            return Err(Error::Config(format!(
                "spoof trial {} carries no attack tag",
                e.utterance_id
            )));
        }
    }
    let genuine = scores.genuine_scores();
    let mut cells = [None; 5];
    for tag in AttackTag::ALL {
        let spoof = scores.spoof_scores(Some(tag));
        if spoof.is_empty() {
            continue;
        }
        cells[tag.index()] = Some(eer_percent(&genuine, &spoof)?);
    }
    Ok(EvalReport::new(family, dynamics, cells))
}

/// Full results table, one row per (family, dynamics).
#[derive(Debug, Clone, Default)]
pub struct ReportTable {
    pub rows: Vec<EvalReport>,
}

fn cell_text(cell: Option<f64>) -> String {
    match cell {
        Some(v) => format!("{v:.3}"),
        None => "-".to_string(),
    }
}

impl ReportTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("family\tdynamics\tS1\tS2\tS3\tS4\tS5\tavg\n");
        for row in &self.rows {
            let _ = write!(out, "{}\t{}", row.family, row.dynamics);
            for cell in row.cells {
                let _ = write!(out, "\t{}", cell_text(cell));
            }
            let _ = writeln!(out, "\t{}", cell_text(row.average));
        }
        out
    }

    /// Human-readable aligned rendering of the same table.
    pub fn to_text(&self) -> String {
        let header = ["family", "dynamics", "S1", "S2", "S3", "S4", "S5", "avg"];
        let mut grid: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for row in &self.rows {
            let mut cols = vec![row.family.to_string(), row.dynamics.to_string()];
            cols.extend(row.cells.iter().map(|&c| cell_text(c)));
            cols.push(cell_text(row.average));
            grid.push(cols);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| grid.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for (i, row) in grid.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    out.push_str("  ");
                }
                let _ = write!(out, "{cell:>width$}", width = widths[c]);
            }
            out.push('\n');
            if i == 0 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, tsv_path: &Path, text_path: &Path) -> Result<()> {
        std::fs::write(tsv_path, self.to_tsv()).map_err(|e| Error::io(tsv_path, e))?;
        std::fs::write(text_path, self.to_text()).map_err(|e| Error::io(text_path, e))?;
        Ok(())
    }
}
