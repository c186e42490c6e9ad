//! Seeded inputs shared by the Criterion benchmarks under `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentread_core::corpus::Discourse;
use sentread_core::gamlite::FeatureRow;

/// A discourse of `sentences` sentences with 8 to 24 words each.
pub fn discourse(sentences: usize, seed: u64) -> Discourse {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texts: Vec<String> = (0..sentences)
        .map(|_| {
            let n = rng.random_range(8..=24);
            (0..n)
                .map(|_| format!("w{}", rng.random_range(0..500)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Discourse::from_sentences("bench", "en", &texts)
}

/// Reading rows for 20 participants with one metric column `m`.
pub fn feature_rows(n: usize, seed: u64) -> Vec<FeatureRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let wl: f64 = rng.random_range(3.5..7.5);
            let lf: f64 = rng.random_range(3.0..6.5);
            let m: f64 = rng.random_range(0.0..1.0);
            FeatureRow {
                participant_id: format!("p{}", i % 20),
                language: ["en", "fi", "tr"][i % 3].into(),
                text_id: format!("t{}", i / 20),
                sentence_index: i % 20,
                reading_speed: 3.0 - 0.1 * wl + 0.2 * lf.sin() - 0.3 * m + rng.random_range(-0.4..0.4),
                mean_word_length: wl,
                mean_log_freq: lf,
                metrics: [("m".to_string(), Some(m))].into(),
            }
        })
        .collect()
}

/// Token vectors for mean pooling.
pub fn token_matrix(tokens: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..tokens)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}
