use std::hash::Hasher;

use fnv::FnvHasher;

use super::BackendConfig;
use crate::corpus::Utterance;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Hashed n-gram multiset of one utterance.
///
/// Indices lie in `0..hash_dim`; the bias feature is the reserved index
/// `hash_dim` and is always present exactly once. Indices are sorted, so equal
/// multisets compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    indices: Vec<u32>,
    bias: u32,
}

impl FeatureSet {
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn bias_index(&self) -> u32 {
        self.bias
    }

    /// Number of active entries, counting repeats and the bias.
    pub fn active_len(&self) -> usize {
        self.indices.len()
    }
}

pub fn featurize(u: &Utterance, config: &BackendConfig) -> FeatureSet {
    featurize_surfaces(u.surfaces(), config)
}

pub fn featurize_surfaces<'a, I>(surfaces: I, config: &BackendConfig) -> FeatureSet
where
    I: IntoIterator<Item = &'a str>,
{
    let dim = config.hash_dim as u64;
    let slot = |s: &str| (fnv1a64(s.as_bytes()) % dim) as u32;
    let surfaces: Vec<&str> = surfaces.into_iter().collect();

    let mut indices: Vec<u32> = surfaces.iter().map(|s| slot(s)).collect();
    if config.ngram_max >= 2 {
        let mut buf = String::new();
        for pair in surfaces.windows(2) {
            buf.clear();
            buf.push_str(pair[0]);
            buf.push('_');
            buf.push_str(pair[1]);
            indices.push(slot(&buf));
        }
    }
    let bias = config.hash_dim as u32;
    indices.push(bias);
    indices.sort_unstable();
    FeatureSet { indices, bias }
}
