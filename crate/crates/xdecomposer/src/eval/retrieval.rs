//! Two-stage phase retrieval: cosine recall, shift-aligned Pearson rerank.

use super::{pearson, EvalError};
use crate::data::ReferenceLibrary;
use crate::pattern::{DiffractionPattern, Grid};

/// Maximum alignment shift during rerank, degrees.
const RERANK_SHIFT: f64 = 0.1;
/// Default coarse candidate count.
pub const DEFAULT_CANDIDATES: usize = 64;

/// Immutable reference index for retrieval.
pub struct RetrievalIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
    grid: Grid,
    /// Candidate count surviving the cosine stage.
    pub candidates: usize,
}

impl RetrievalIndex {
    pub fn build(library: &ReferenceLibrary, candidates: usize) -> Result<Self, EvalError> {
        if library.len() == 0 {
            return Err(EvalError::EmptyIndex);
        }
        let mut ids = Vec::with_capacity(library.len());
        let mut vectors = Vec::with_capacity(library.len());
        let mut norms = Vec::with_capacity(library.len());
        for i in 0..library.len() {
            let p = library.pattern_at(i);
            let norm = p.intensities.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 0.0 {
                return Err(EvalError::DegenerateInput(format!(
                    "reference {} has zero norm",
                    library.id_at(i)
                )));
            }
            ids.push(library.id_at(i).to_string());
            vectors.push(p.intensities.clone());
            norms.push(norm);
        }
        Ok(RetrievalIndex {
            ids,
            vectors,
            norms,
            grid: library.grid(),
            candidates: candidates.max(1),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Top-k reference ids for the query: cosine recall of `candidates`
    /// entries, then shift-aligned Pearson rerank.
    pub fn retrieve_topk(&self, query: &DiffractionPattern, k: usize) -> Result<Vec<String>, EvalError> {
        if query.grid != self.grid {
            return Err(EvalError::GridMismatch);
        }
        let q = &query.intensities;
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if qn <= 0.0 {
            return Err(EvalError::DegenerateInput("zero-norm query".into()));
        }
        let mut stage1: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let dot: f64 = q.iter().zip(r).map(|(a, b)| a * b).sum();
                (i, dot / (qn * self.norms[i]))
            })
            .collect();
        stage1.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        stage1.truncate(self.candidates);

        let max_shift = (RERANK_SHIFT / self.grid.step).round() as isize;
        // quantize the rerank score so floating-point jitter between
        // shift-aligned near-duplicates falls through to the cosine tie-break
        let quantize = |s: f64| (s * 1e9).round() as i64;
        let mut reranked: Vec<(usize, i64, f64)> = stage1
            .iter()
            .map(|&(i, cos)| {
                (
                    i,
                    quantize(shift_aligned_pearson(q, &self.vectors[i], max_shift)),
                    cos,
                )
            })
            .collect();
        reranked.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(b.2.partial_cmp(&a.2).unwrap())
                .then(a.0.cmp(&b.0))
        });
        Ok(reranked
            .into_iter()
            .take(k)
            .map(|(i, _, _)| self.ids[i].clone())
            .collect())
    }
}

/// Best Pearson correlation over integer-step shifts of the query within
/// +/- max_shift steps; constant inputs score negative infinity.
fn shift_aligned_pearson(q: &[f64], r: &[f64], max_shift: isize) -> f64 {
    let n = q.len() as isize;
    let mut best = f64::NEG_INFINITY;
    for s in -max_shift..=max_shift {
        // overlap region of q shifted by s steps against r, zero-extended
        let shifted: Vec<f64> = (0..n)
            .map(|i| {
                let j = i + s;
                if j >= 0 && j < n {
                    q[j as usize]
                } else {
                    0.0
                }
            })
            .collect();
        if let Ok(p) = pearson(&shifted, r) {
            best = best.max(p);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn library(n: usize, len: usize) -> ReferenceLibrary {
        let grid = Grid::new(10.0, 0.02, len);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let entries: Vec<(String, DiffractionPattern)> = (0..n)
            .map(|i| {
                let mut v = vec![0.0; len];
                // three distinct triangular peaks per phase
                for _ in 0..3 {
                    let c = rng.gen_range(5..len - 5);
                    let h = rng.gen_range(0.3..1.0);
                    v[c] += h;
                    v[c - 1] += h * 0.5;
                    v[c + 1] += h * 0.5;
                }
                (format!("ref{i:03}"), DiffractionPattern::new(grid, v).unwrap())
            })
            .collect();
        ReferenceLibrary::new(entries).unwrap()
    }

    #[test]
    fn exact_member_query_is_rank_one() {
        let lib = library(100, 400);
        let index = RetrievalIndex::build(&lib, DEFAULT_CANDIDATES).unwrap();
        for i in [0, 17, 99] {
            let top = index.retrieve_topk(lib.pattern_at(i), 1).unwrap();
            assert_eq!(top[0], lib.id_at(i));
        }
    }

    #[test]
    fn noisy_queries_stay_top1_on_100_entry_index() {
        let lib = library(100, 400);
        let index = RetrievalIndex::build(&lib, DEFAULT_CANDIDATES).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut hits = 0;
        for i in 0..100 {
            let mut q = lib.pattern_at(i).clone();
            let sigma = 0.01 * q.max_intensity();
            for v in &mut q.intensities {
                *v += sigma * rng.gen_range(-1.0..1.0);
            }
            let top = index.retrieve_topk(&q, 1).unwrap();
            if top[0] == lib.id_at(i) {
                hits += 1;
            }
        }
        assert!(hits >= 90, "top-1 hits: {hits}/100");
    }

    #[test]
    fn k_equals_m_is_a_permutation_of_stage1() {
        let lib = library(20, 200);
        let index = RetrievalIndex::build(&lib, 8).unwrap();
        let got = index.retrieve_topk(lib.pattern_at(3), 8).unwrap();
        assert_eq!(got.len(), 8);
        let mut sorted = got.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8); // all distinct -> permutation of the candidate set
    }

    #[test]
    fn grid_mismatch_rejected() {
        let lib = library(5, 200);
        let index = RetrievalIndex::build(&lib, 4).unwrap();
        let other = DiffractionPattern::zeros(Grid::new(10.0, 0.02, 100));
        assert!(matches!(
            index.retrieve_topk(&other, 1),
            Err(EvalError::GridMismatch)
        ));
    }

    #[test]
    fn shifted_query_survives_rerank() {
        let lib = library(50, 400);
        let index = RetrievalIndex::build(&lib, DEFAULT_CANDIDATES).unwrap();
        // shift an exact member by 3 grid steps (0.06 degrees < 0.1)
        let p = lib.pattern_at(7);
        let mut shifted = vec![0.0; p.intensities.len()];
        shifted[3..].copy_from_slice(&p.intensities[..p.intensities.len() - 3]);
        let q = DiffractionPattern::new(lib.grid(), shifted).unwrap();
        let top = index.retrieve_topk(&q, 1).unwrap();
        assert_eq!(top[0], lib.id_at(7));
    }
}
