//! Reference library of single-phase patterns and crystal-level dataset splits.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::pattern::{DiffractionPattern, Grid, PatternError};

/// One normalized single-phase pattern per crystal id, all on a shared grid.
/// Entry order is the insertion order and is part of the contract.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLibrary {
    entries: Vec<(String, DiffractionPattern)>,
    grid: Grid,
}

impl ReferenceLibrary {
    /// Build from (id, pattern) pairs; normalizes each pattern to max 1 and
    /// checks ids are unique and grids agree.
    pub fn new(entries: Vec<(String, DiffractionPattern)>) -> Result<Self, DataError> {
        let entries = entries
            .into_iter()
            .map(|(id, mut p)| {
                p.normalize_max();
                (id, p)
            })
            .collect();
        Self::from_normalized(entries)
    }

    /// Build from patterns that are already normalized (e.g. reloaded from
    /// disk), validating without rescaling so round trips are bit-exact.
    fn from_normalized(entries: Vec<(String, DiffractionPattern)>) -> Result<Self, DataError> {
        let grid = entries
            .first()
            .map(|(_, p)| p.grid)
            .ok_or(PatternError::EmptyInput)?;
        let mut seen: Vec<&str> = Vec::with_capacity(entries.len());
        for (id, p) in &entries {
            if p.grid != grid {
                return Err(PatternError::GridMismatch(format!("entry '{id}'")).into());
            }
            if seen.contains(&id.as_str()) {
                return Err(DataError::DuplicateIds(id.clone()));
            }
            seen.push(id);
        }
        Ok(ReferenceLibrary { entries, grid })
    }

    /// Pick one render per crystal from its candidate list, keyed by `seed`.
    pub fn from_candidates(
        candidates: Vec<(String, Vec<DiffractionPattern>)>,
        seed: u64,
    ) -> Result<Self, DataError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(candidates.len());
        for (id, renders) in candidates {
            if renders.is_empty() {
                return Err(PatternError::EmptyInput.into());
            }
            let pick = rng.gen_range(0..renders.len());
            entries.push((id, renders.into_iter().nth(pick).unwrap()));
        }
        ReferenceLibrary::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|(e, _)| e == id)
    }

    pub fn id_at(&self, index: usize) -> &str {
        &self.entries[index].0
    }

    pub fn pattern_at(&self, index: usize) -> &DiffractionPattern {
        &self.entries[index].1
    }

    pub fn get(&self, id: &str) -> Option<&DiffractionPattern> {
        self.index_of(id).map(|i| self.pattern_at(i))
    }

    /// Restrict to the given ids (library order preserved). Unknown ids error.
    pub fn subset(&self, ids: &[String]) -> Result<Self, DataError> {
        for id in ids {
            if self.index_of(id).is_none() {
                return Err(DataError::UnknownAnchor(id.clone()));
            }
        }
        let entries = self
            .entries
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .cloned()
            .collect();
        Ok(ReferenceLibrary {
            entries,
            grid: self.grid,
        })
    }

    /// Persist as a directory: an index file listing ids and one binary
    /// pattern file per entry.
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        let mut index = String::new();
        for (i, (id, p)) in self.entries.iter().enumerate() {
            let file = format!("{i:05}.xdp");
            p.write_binary(&dir.join(&file))?;
            index.push_str(&format!("{id}\t{file}\n"));
        }
        fs::write(dir.join("index.tsv"), index)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(dir.join("index.tsv"))?;
        let mut entries = Vec::new();
        for line in text.lines() {
            let (id, file) = line
                .split_once('\t')
                .ok_or_else(|| DataError::MalformedLibrary(line.to_string()))?;
            let p = DiffractionPattern::read_binary(&dir.join(file))?;
            entries.push((id.to_string(), p));
        }
        ReferenceLibrary::from_normalized(entries)
    }
}

/// Disjoint train/val/test partition of crystal ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn split(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Line-oriented text form: header then one id per line under each
    /// bracketed split name.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "seed={}\nratios={} {} {}\n",
            self.seed, self.ratios[0], self.ratios[1], self.ratios[2]
        );
        for (name, ids) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            out.push_str(&format!("[{name}]\n"));
            for id in ids {
                out.push_str(id);
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut seed = None;
        let mut ratios = None;
        let mut current: Option<usize> = None;
        let mut splits: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("seed=") {
                seed = Some(
                    rest.parse::<u64>()
                        .map_err(|_| DataError::MalformedManifest(line.to_string()))?,
                );
            } else if let Some(rest) = line.strip_prefix("ratios=") {
                let nums: Vec<f64> = rest
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| DataError::MalformedManifest(line.to_string()))?;
                if nums.len() != 3 {
                    return Err(DataError::MalformedManifest(line.to_string()));
                }
                ratios = Some([nums[0], nums[1], nums[2]]);
            } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(match name {
                    "train" => 0,
                    "val" => 1,
                    "test" => 2,
                    _ => return Err(DataError::MalformedManifest(line.to_string())),
                });
            } else {
                let idx =
                    current.ok_or_else(|| DataError::MalformedManifest(line.to_string()))?;
                splits[idx].push(line.to_string());
            }
        }
        let [train, val, test] = splits;
        Ok(SplitManifest {
            ratios: ratios.ok_or_else(|| DataError::MalformedManifest("missing ratios".into()))?,
            seed: seed.ok_or_else(|| DataError::MalformedManifest("missing seed".into()))?,
            train,
            val,
            test,
        })
    }
}

/// Partition ids at the crystal level: deterministic Fisher-Yates shuffle by
/// seed, then contiguous cut at cumulative-ratio boundaries.
pub fn split_by_crystal(
    ids: &[String],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitManifest, DataError> {
    for id in ids {
        if ids.iter().filter(|x| *x == id).count() > 1 {
            return Err(DataError::DuplicateIds(id.clone()));
        }
    }
    if ratios.iter().any(|&r| r <= 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios);
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let n = shuffled.len() as f64;
    let cut1 = (ratios[0] * n).round() as usize;
    let cut2 = ((ratios[0] + ratios[1]) * n).round() as usize;
    let test = shuffled.split_off(cut2.min(shuffled.len()));
    let val = shuffled.split_off(cut1.min(shuffled.len()));
    Ok(SplitManifest {
        ratios,
        seed,
        train: shuffled,
        val,
        test,
    })
}
