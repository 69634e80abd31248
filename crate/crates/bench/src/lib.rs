//! Fixed inputs shared by the benchmarks in `benches/`.

use mobsel_core::synthgen::{generate, generate_stream, random_no_repeat_chain, SourceKind, SourceSpec, SplitMix64};
use mobsel_core::{Dataset, PoiId};

/// Copy-with-gap stream without self-transitions: long-range structure for
/// the MI and match estimators.
pub fn copy_stream(n: usize, alphabet: usize, k: usize) -> Vec<PoiId> {
    let kind = SourceKind::CopyWithGap { k, noise: 0.1, alphabet, no_repeat: true };
    generate_stream(&kind, n, &mut SplitMix64::new(7))
}

/// A few users drawn from one random first-order chain.
pub fn chain_dataset(users: usize, n: usize, alphabet: usize) -> Dataset {
    generate(&SourceSpec {
        source: random_no_repeat_chain(alphabet, &mut SplitMix64::new(3)),
        n_symbols: n,
        n_users: users,
        seed: 11,
    })
    .expect("valid source")
    .dataset
}
