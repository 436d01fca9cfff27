//! Seeded synthetic instruction corpus.
//!
//! Clean samples come from a few task families whose responses follow short
//! local patterns (counting, alphabet runs, repetition), so a
//! small model can learn them. Noise samples take a clean response and
//! shuffle its characters, which destroys the pattern while keeping the
//! character distribution.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_heldout: usize,
    /// Clean samples used to warm up the probe model before scoring.
    pub n_pretrain: usize,
    /// Share of training samples replaced by noise.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_heldout: 200,
            n_pretrain: 300,
            noise_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub train: Vec<SampleRecord>,
    pub heldout: Vec<SampleRecord>,
    pub pretrain: Vec<SampleRecord>,
    pub noisy_ids: BTreeSet<String>,
}

const WORDS: &[&str] = &[
    "cat", "dog", "sun", "tree", "moon", "fish", "bird", "rock", "leaf", "star", "rain", "wind",
];
const SYMBOLS: &[char] = &['x', 'o', 'a', 'b', '+', '-', '#', '*'];

fn grouped(chars: impl Iterator<Item = char>, len: usize) -> String {
    let chars: Vec<char> = chars.take(len).collect();
    chars
        .chunks(3)
        .map(|c| c.iter().collect::<String>())
        .collect::<Vec<_>>()
        .join(" ")
}

fn clean_sample(rng: &mut ChaCha8Rng) -> (String, String) {
    match rng.gen_range(0..4) {
        0 => {
            let start = rng.gen_range(0..10u32);
            let len = rng.gen_range(9..16);
            let digits = (start..).map(|i| char::from_digit(i % 10, 10).unwrap());
            (format!("Count up from {start}."), grouped(digits, len))
        }
        1 => {
            let start = rng.gen_range(0..14u8);
            let len = rng.gen_range(9..13);
            let letters = (start..).map(|i| (b'a' + i) as char);
            (
                format!("Continue the alphabet from {}.", (b'a' + start) as char),
                grouped(letters, len),
            )
        }
        2 => {
            let word = WORDS.choose(rng).unwrap();
            let len = rng.gen_range(3..6);
            (format!("Repeat the word {word}."), vec![*word; len].join(" "))
        }
        _ => {
            let a = *SYMBOLS.choose(rng).unwrap();
            let mut b = *SYMBOLS.choose(rng).unwrap();
            while b == a {
                b = *SYMBOLS.choose(rng).unwrap();
            }
            let len = rng.gen_range(4..7);
            (format!("Repeat the pair {a}{b}."), vec![format!("{a}{b}"); len].join(" "))
        }
    }
}

fn shuffled(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    chars.shuffle(rng);
    chars.into_iter().collect()
}

fn clean_split(prefix: &str, n: usize, rng: &mut ChaCha8Rng) -> Vec<SampleRecord> {
    (0..n)
        .map(|i| {
            let (q, a) = clean_sample(rng);
            SampleRecord::new(format!("{prefix}-{i:05}"), q, a)
        })
        .collect()
}

pub fn generate(spec: &CorpusSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_noise = (spec.noise_fraction.clamp(0.0, 1.0) * spec.n_train as f64).round() as usize;
    let mut noisy_slots: Vec<usize> = (0..spec.n_train).collect();
    noisy_slots.shuffle(&mut rng);
    noisy_slots.truncate(n_noise);
    let noisy_slots: BTreeSet<usize> = noisy_slots.into_iter().collect();

    let mut train = clean_split("train", spec.n_train, &mut rng);
    let mut noisy_ids = BTreeSet::new();
    for &i in &noisy_slots {
        let s = &mut train[i];
        // Reshuffle until the pattern is actually broken.
        let mut r = shuffled(&s.response, &mut rng);
        for _ in 0..8 {
            if r != s.response {
                break;
            }
            r = shuffled(&s.response, &mut rng);
        }
        s.response = r;
        noisy_ids.insert(s.id.clone());
    }
    let heldout = clean_split("heldout", spec.n_heldout, &mut rng);
    let pretrain = clean_split("pretrain", spec.n_pretrain, &mut rng);
    SyntheticCorpus {
        train,
        heldout,
        pretrain,
        noisy_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let spec = CorpusSpec {
            n_train: 100,
            n_heldout: 20,
            n_pretrain: 30,
            noise_fraction: 0.25,
            seed: 3,
        };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.train, b.train);
        assert_eq!(a.train.len(), 100);
        assert_eq!(a.heldout.len(), 20);
        assert_eq!(a.pretrain.len(), 30);
        assert_eq!(a.noisy_ids.len(), 25);
        assert!(a.train.iter().all(|s| !s.response.trim().is_empty()));
        let c = generate(&CorpusSpec { seed: 4, ..spec });
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn noise_breaks_patterns_but_keeps_characters() {
        let corpus = generate(&CorpusSpec {
            n_train: 200,
            seed: 1,
            ..CorpusSpec::default()
        });
        let clean = generate(&CorpusSpec {
            n_train: 200,
            noise_fraction: 0.0,
            seed: 1,
            ..CorpusSpec::default()
        });
        let mut changed = 0;
        for (noisy, orig) in corpus.train.iter().zip(&clean.train) {
            if corpus.noisy_ids.contains(&noisy.id) {
                let mut a: Vec<char> = noisy.response.chars().collect();
                let mut b: Vec<char> = orig.response.chars().collect();
                a.sort();
                b.sort();
                assert_eq!(a, b);
                changed += (noisy.response != orig.response) as usize;
            }
        }
        assert!(changed as f64 > 0.95 * corpus.noisy_ids.len() as f64);
    }
}
