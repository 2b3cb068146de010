//! Online mixture synthesis, crystal-level dataset splits, reference-library
//! persistence, and experimental-pattern preprocessing.

mod library;
mod snip;

pub use library::{split_by_crystal, ReferenceLibrary, SplitManifest};
pub use snip::{resample_to_grid, snip_background, SnipSchedule, SNIP_DEFAULT_M};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pattern::{superpose, DiffractionPattern, PatternError};
use crate::sim::sample_normal;

/// Maximum number of mixture components a sample is padded to.
pub const K_MAX: usize = 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("infeasible weight floor: {n} components with floor {floor}")]
    InfeasibleFloor { n: usize, floor: f64 },
    #[error("rejection sampling cap exceeded ({0} attempts)")]
    RejectionCap(usize),
    #[error("unknown anchor id '{0}'")]
    UnknownAnchor(String),
    #[error("library holds {got} patterns, need at least {need}")]
    InsufficientLibrary { need: usize, got: usize },
    #[error("duplicate crystal id '{0}'")]
    DuplicateIds(String),
    #[error("ratios must be positive and sum to 1")]
    InvalidRatios,
    #[error("negative intensity at index {0}")]
    NegativeInput(usize),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("malformed library index: {0}")]
    MalformedLibrary(String),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Knobs of the online mixture generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MixConfig {
    /// Symmetric Dirichlet concentration for the weights.
    pub alpha: f64,
    /// Minimum admissible weight per component.
    pub weight_floor: f64,
    /// Gaussian noise std as a fraction of the pre-noise mixture max.
    pub noise_sigma: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            alpha: 1.0,
            weight_floor: 0.15,
            noise_sigma: 0.01,
        }
    }
}

/// One training sample: a noisy mixture and its single-phase targets,
/// all scaled by one shared max-normalization factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixed: DiffractionPattern,
    /// Exactly K_MAX entries; inactive slots are zero patterns.
    pub components: Vec<DiffractionPattern>,
    /// One weight per active component.
    pub weights: Vec<f64>,
    pub active_count: usize,
    pub component_ids: Vec<String>,
    pub noise_sigma: f64,
    /// Key of the RNG stream that generated this sample.
    pub seed: u64,
}

/// Per-sample RNG stream keyed by (epoch, sample index, global seed), so
/// generation order and worker count cannot change the corpus.
pub fn sample_stream(epoch: u64, index: u64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(epoch, index, seed))
}

pub(crate) fn stream_key(epoch: u64, index: u64, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for word in [epoch, index, seed] {
        for b in word.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Number of mixture components, uniform on {2, 3, 4}.
pub fn sample_cardinality(rng: &mut impl Rng) -> usize {
    rng.gen_range(2..=4)
}

/// Unit-rate exponential; Gamma(1,1).
fn sample_exponential(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -u.ln()
}

/// Gamma(alpha, 1) via Marsaglia-Tsang, with the alpha < 1 boost.
fn sample_gamma(alpha: f64, rng: &mut impl Rng) -> f64 {
    if alpha < 1.0 {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        return sample_gamma(alpha + 1.0, rng) * u.powf(1.0 / alpha);
    }
    let d = alpha - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = sample_normal(rng);
        let v = (1.0 + c * x).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

const REJECTION_CAP: usize = 10_000;

/// Symmetric Dirichlet(alpha) weights, rejection-sampled until min(w) >= floor.
///
/// For alpha = 1 the draws are normalized unit-rate exponentials; general
/// alpha uses Gamma draws.
pub fn sample_weights(
    n: usize,
    alpha: f64,
    floor: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, DataError> {
    if n == 0 || alpha <= 0.0 || floor < 0.0 {
        return Err(DataError::InfeasibleFloor { n, floor });
    }
    if n as f64 * floor >= 1.0 {
        return Err(DataError::InfeasibleFloor { n, floor });
    }
    for _ in 0..REJECTION_CAP {
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                if (alpha - 1.0).abs() < 1e-12 {
                    sample_exponential(rng)
                } else {
                    sample_gamma(alpha, rng)
                }
            })
            .collect();
        let sum: f64 = draws.iter().sum();
        let weights: Vec<f64> = draws.iter().map(|d| d / sum).collect();
        if weights.iter().all(|&w| w >= floor) {
            return Ok(weights);
        }
    }
    Err(DataError::RejectionCap(REJECTION_CAP))
}

/// Build one mixture around `anchor_id` from the library: draw N, pick N-1
/// distinct other components, draw floored Dirichlet weights, superpose, add
/// Gaussian noise, then divide everything by the shared factor
/// c = max(max noisy mixture, max over components).
pub fn make_mixture(
    library: &ReferenceLibrary,
    anchor_id: &str,
    rng: &mut ChaCha8Rng,
    cfg: &MixConfig,
) -> Result<MixtureSample, DataError> {
    if library.len() < K_MAX {
        return Err(DataError::InsufficientLibrary {
            need: K_MAX,
            got: library.len(),
        });
    }
    let anchor_idx = library
        .index_of(anchor_id)
        .ok_or_else(|| DataError::UnknownAnchor(anchor_id.to_string()))?;
    let seed = rng.gen::<u64>();

    let n = sample_cardinality(rng);
    let mut chosen = vec![anchor_idx];
    while chosen.len() < n {
        let idx = rng.gen_range(0..library.len());
        if !chosen.contains(&idx) {
            chosen.push(idx);
        }
    }
    let weights = sample_weights(n, cfg.alpha, cfg.weight_floor, rng)?;

    let parts: Vec<&DiffractionPattern> = chosen.iter().map(|&i| library.pattern_at(i)).collect();
    let mut mixed = superpose(&parts, &weights)?;
    let sigma = cfg.noise_sigma * mixed.max_intensity();
    if sigma > 0.0 {
        for v in &mut mixed.intensities {
            *v += sigma * sample_normal(rng);
        }
    }

    let mut components: Vec<DiffractionPattern> = chosen
        .iter()
        .zip(&weights)
        .map(|(&i, &w)| {
            let mut p = library.pattern_at(i).clone();
            p.scale(w);
            p
        })
        .collect();
    let c = components
        .iter()
        .map(|p| p.max_intensity())
        .fold(mixed.max_intensity(), f64::max);
    if c > 0.0 {
        mixed.scale(1.0 / c);
        for p in &mut components {
            p.scale(1.0 / c);
        }
    }
    while components.len() < K_MAX {
        components.push(DiffractionPattern::zeros(mixed.grid));
    }

    Ok(MixtureSample {
        mixed,
        components,
        weights,
        active_count: n,
        component_ids: chosen.iter().map(|&i| library.id_at(i).to_string()).collect(),
        noise_sigma: sigma,
        seed,
    })
}
