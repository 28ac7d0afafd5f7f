//! Synthetic corpora and embeddings for tests, benchmarks and demos.
//!
//! [`planted_direction`] draws audio and text vectors whose components along
//! one hidden unit direction carry the label: matched pairs agree in sign,
//! hallucinated pairs disagree. A fusion head can pick this up through the
//! product of its ReLU branches; the cosine of the raw vectors mostly can't.

use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{Annotation, Corpus, HallucType, Sample, SplitCounts};
use crate::embed_store::{EmbeddingStore, Modality};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub samples: usize,
    pub dim: usize,
    pub positive_fraction: f64,
    pub splits: SplitCounts,
    pub seed: u64,
    /// Range of the magnitude of the planted component.
    pub margin: (f64, f64),
    /// Standard deviation of the components orthogonal to the planted direction.
    pub noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            samples: 1000,
            dim: 32,
            positive_fraction: 1.0 / 3.0,
            splits: SplitCounts::new(600, 200, 200),
            seed: 0,
            margin: (1.0, 3.0),
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub corpus: Corpus,
    pub audio: EmbeddingStore,
    pub text: EmbeddingStore,
    pub direction: Vec<f64>,
}

const SUBJECTS: [&str; 8] = ["a dog", "a man", "a woman", "birds", "a car", "a crowd", "a baby", "the wind"];
const ACTIONS: [&str; 8] = ["barking", "talking", "singing", "chirping", "driving by", "cheering", "crying", "blowing"];

fn response(i: usize) -> String {
    format!(
        "I hear {} {} in the background.",
        SUBJECTS[i % SUBJECTS.len()],
        ACTIONS[(i / SUBJECTS.len()) % ACTIONS.len()]
    )
}

pub fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn with_component<R: Rng + ?Sized>(direction: &[f64], value: f64, noise: f64, rng: &mut R) -> Vec<f32> {
    let mut v: Vec<f64> = (0..direction.len())
        .map(|_| { let z: f64 = StandardNormal.sample(rng); noise * z })
        .collect();
    let along: f64 = v.iter().zip(direction).map(|(a, b)| a * b).sum();
    for (x, u) in v.iter_mut().zip(direction) {
        *x += (value - along) * u;
    }
    v.into_iter().map(|x| x as f32).collect()
}

pub fn planted_direction(config: &PlantedConfig) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let direction = random_unit(config.dim, &mut rng);
    let positives = (config.samples as f64 * config.positive_fraction).round() as usize;
    let mut labels: Vec<bool> = (0..config.samples).map(|i| i < positives).collect();
    labels.shuffle(&mut rng);

    let stamp = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut audio = EmbeddingStore::new(Modality::Audio, "synthetic-audio", config.dim).expect("dim > 0");
    let mut text = EmbeddingStore::new(Modality::Text, "synthetic-text", config.dim).expect("dim > 0");
    let mut samples = Vec::with_capacity(config.samples);
    let (lo, hi) = config.margin;
    for (i, &hallucinated) in labels.iter().enumerate() {
        let id = format!("syn{i:05}");
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let a = sign * rng.random_range(lo..=hi);
        let t = if hallucinated { -sign } else { sign } * rng.random_range(lo..=hi);
        audio.insert(&id, with_component(&direction, a, config.noise, &mut rng)).expect("valid vector");
        text.insert(&id, with_component(&direction, t, config.noise, &mut rng)).expect("valid vector");
        let annotation = if hallucinated {
            let ty = HallucType::ALL[rng.random_range(0..3)];
            Annotation::hallucinated_as(ty, Some("synthetic".into()), stamp)
        } else {
            Annotation::not_hallucinated(Some("synthetic".into()), stamp)
        };
        samples.push(Sample::new(&id, format!("clips/{id}.wav"), response(i)).with_annotation(annotation));
    }
    let corpus = Corpus::new(samples)
        .expect("generated ids are unique")
        .assign_splits(config.splits, config.seed, true)
        .expect("split counts fit the corpus");
    SyntheticSet {
        corpus,
        audio,
        text,
        direction,
    }
}

/// An (audio, text) pair of random vectors whose cosine is `score`.
pub fn pair_with_cosine<R: Rng + ?Sized>(dim: usize, score: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    assert!(dim >= 2, "need two dimensions for an arbitrary angle");
    let u = random_unit(dim, rng);
    let w = loop {
        let r = random_unit(dim, rng);
        let along: f64 = r.iter().zip(&u).map(|(a, b)| a * b).sum();
        let mut w: Vec<f64> = r.iter().zip(&u).map(|(r, u)| r - along * u).collect();
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            w.iter_mut().for_each(|x| *x /= n);
            break w;
        }
    };
    let s = score.clamp(-1.0, 1.0);
    let c = (1.0 - s * s).sqrt();
    let scale_a = rng.random_range(0.5..2.0);
    let scale_t = rng.random_range(0.5..2.0);
    let a = u.iter().map(|x| x * scale_a).collect();
    let t = u.iter().zip(&w).map(|(u, w)| (s * u + c * w) * scale_t).collect();
    (a, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::zeroshot::cosine;

    #[test]
    fn planted_set_shape() {
        let set = planted_direction(&PlantedConfig {
            samples: 90,
            splits: SplitCounts::new(50, 20, 20),
            ..PlantedConfig::default()
        });
        assert_eq!(set.corpus.len(), 90);
        assert_eq!(set.audio.len(), 90);
        assert_eq!(set.corpus.split_len(Split::Train), 50);
        let positives = set.corpus.samples().iter().filter(|s| s.label() == Some(true)).count();
        assert_eq!(positives, 30);
        for s in set.corpus.samples() {
            let a: f64 = set.audio.get(&s.id).unwrap().iter().zip(&set.direction).map(|(x, u)| f64::from(*x) * u).sum();
            let t: f64 = set.text.get(&s.id).unwrap().iter().zip(&set.direction).map(|(x, u)| f64::from(*x) * u).sum();
            assert_eq!(a.signum() != t.signum(), s.label().unwrap());
            assert!(a.abs() > 0.99 && t.abs() > 0.99);
        }
    }

    #[test]
    fn planted_set_is_seeded() {
        let cfg = PlantedConfig { samples: 30, splits: SplitCounts::new(10, 10, 10), ..PlantedConfig::default() };
        let (a, b) = (planted_direction(&cfg), planted_direction(&cfg));
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.audio.to_bytes(), b.audio.to_bytes());
    }

    #[test]
    fn pair_has_requested_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in [-0.9, -0.1, 0.0, 0.3, 0.45, 0.99] {
            let (a, t) = pair_with_cosine(16, s, &mut rng);
            assert!((cosine(&a, &t).unwrap() - s).abs() < 1e-12);
        }
    }
}
