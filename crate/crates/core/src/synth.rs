//! Synthetic multimodal classification data with a planted commonsense
//! signal.
//!
//! Every class owns two concept words (its prototype is their toy embedding)
//! and a few entities, each named by four entity words. A sample's question
//! and language context mention the concept words, one entity of its class
//! and random filler words; the filler count sets the noise level. With
//! probability `mask_prob` the concept words are dropped, so only the entity
//! mention ties the sample to its class. Visual contexts are stored vectors
//! with the same statistics. The triplet store holds facts
//! `entity REL concept`, which is how retrieval brings the class back.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{empty_text_vector, normalize, token_row, toy_embed, EmbeddingStore};
use crate::error::{Error, Result};
use crate::graph::{text_embedding_id, NodeKind};
use crate::manifest::{json_err, Dataset, Sample, Split, VisualContext};
use crate::triplets::{render_triplets_tsv, Triplet, TripletStore};

/// Concept words per class.
const CONCEPT_WORDS: usize = 2;
const ENTITY_WORDS: usize = 4;
/// Triplets per entity, one per relation.
const FACTS_PER_ENTITY: usize = 3;
const FILLER_VOCAB: usize = 4096;
const GROUPS: usize = 3;
const RELATIONS: [&str; 4] = ["IsA", "PartOf", "MadeOf", "InstanceOf"];

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VISUAL_FILE: &str = "visual.gemb";
pub const TEXT_FILE: &str = "text.gemb";
pub const TRIPLETS_FILE: &str = "triplets.tsv";
pub const TRIPLET_EMBEDDINGS_FILE: &str = "triplets.gemb";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    /// Noise level of content embeddings; sets the number of filler words.
    pub noise: f64,
    /// Probability that a sample's texts omit the concept words.
    pub mask_prob: f64,
    pub triplets_per_class: usize,
    pub splits: SplitFractions,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples: 2000,
            classes: 4,
            dim: 64,
            noise: 0.4,
            mask_prob: 0.5,
            triplets_per_class: 48,
            splits: SplitFractions::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let SplitFractions { train, val, test } = self.splits;
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be in [0, 1] and sum to 1, got {train}/{val}/{test}"
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("at least 2 classes are required".into()));
        }
        if self.samples < self.classes {
            return Err(Error::Config(format!(
                "{} samples cannot cover {} classes",
                self.samples, self.classes
            )));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be at least 2".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and non-negative, got {}", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask probability must lie in [0, 1], got {}", self.mask_prob)));
        }
        if self.triplets_per_class == 0 {
            return Err(Error::Config("triplets-per-class must be at least 1".into()));
        }
        Ok(())
    }

    /// Filler words that give a text the configured noise level.
    fn filler_words(&self) -> usize {
        (self.noise * self.noise * (CONCEPT_WORDS * self.dim) as f64).round() as usize
    }

    fn entities_per_class(&self) -> usize {
        self.triplets_per_class.div_ceil(FACTS_PER_ENTITY)
    }

    /// Sample counts per split; the test split takes the rounding remainder.
    fn split_sizes(&self) -> [usize; 3] {
        let train = (self.samples as f64 * self.splits.train).round() as usize;
        let val = ((self.samples as f64 * self.splits.val).round() as usize).min(self.samples - train);
        [train, val, self.samples - train - val]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub id: String,
    pub label: usize,
    /// Entity index within the class.
    pub entity: usize,
    pub masked: bool,
}

/// White-box sidecar: prototypes and per-sample mask flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub prototypes: Vec<Vec<f64>>,
    pub samples: Vec<SampleTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Visual-context vectors referenced by the manifest.
    pub visual: EmbeddingStore,
    /// Toy embeddings of every question and language-context text.
    pub text: EmbeddingStore,
    pub triplets: TripletStore,
    pub truth: GroundTruth,
}

fn concept_words(class: usize) -> Vec<String> {
    (0..CONCEPT_WORDS).map(|j| format!("concept{class}{}", (b'a' + j as u8) as char)).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn entity_words(class: usize, entity: usize) -> Vec<String> {
    (0..ENTITY_WORDS).map(|j| format!("entity{class}x{entity}{}", (b'a' + j as u8) as char)).collect()
}

fn text(rng: &mut ChaCha8Rng, class: usize, entity: usize, masked: bool, filler: usize) -> String {
    let mut words: Vec<String> = if masked { Vec::new() } else { concept_words(class) };
    words.extend(entity_words(class, entity));
    let fill = if masked { filler + CONCEPT_WORDS } else { filler };
    words.extend((0..fill).map(|_| format!("w{}", rng.random_range(0..FILLER_VOCAB))));
    words.shuffle(rng);
    words.join(" ")
}

/// Stored visual embedding with the same statistics as a text embedding:
/// concept rows (unless masked) plus entity rows plus Gaussian noise
/// standing in for the filler words.
fn visual_vector(config: &SynthConfig, class: usize, entity: usize, masked: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut words = entity_words(class, entity);
    if !masked {
        words.extend(concept_words(class));
    }
    let fill = config.filler_words() + if masked { CONCEPT_WORDS } else { 0 };
    let mut v = vec![0.0; config.dim];
    for w in &words {
        for (x, r) in v.iter_mut().zip(token_row(w, config.dim, config.seed)) {
            *x += r;
        }
    }
    let scale = (fill as f64).sqrt();
    for (x, g) in v.iter_mut().zip(gaussian(rng, config.dim)) {
        *x += scale * g;
    }
    normalize(&v).unwrap_or_else(|| empty_text_vector(config.dim))
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let (c, dim) = (config.classes, config.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prototypes: Vec<Vec<f64>> = (0..c)
        .map(|k| toy_embed(&concept_words(k).join(" "), dim, config.seed))
        .collect::<Result<_>>()?;

    // Balanced labels inside each split, then one shuffle over all samples.
    let mut slots: Vec<(Split, usize)> = Vec::with_capacity(config.samples);
    for (split, n) in Split::ALL.into_iter().zip(config.split_sizes()) {
        slots.extend((0..n).map(|i| (split, i % c)));
    }
    slots.shuffle(&mut rng);

    let filler = config.filler_words();
    let mut samples = Vec::with_capacity(config.samples);
    let mut truth = Vec::with_capacity(config.samples);
    let mut visual = EmbeddingStore::new(dim);
    let mut text_store = EmbeddingStore::new(dim);
    let width = config.samples.to_string().len().max(4);
    for (i, (split, label)) in slots.into_iter().enumerate() {
        let id = format!("s{i:0width$}");
        let masked = rng.random::<f64>() < config.mask_prob;
        let entity = rng.random_range(0..config.entities_per_class());
        let question = text(&mut rng, label, entity, masked, filler);
        let language = text(&mut rng, label, entity, masked, filler);
        let visual_id = format!("{id}@visual");
        visual.insert(visual_id.clone(), &visual_vector(config, label, entity, masked, &mut rng))?;
        text_store.insert(text_embedding_id(&id, NodeKind::Question), &toy_embed(&question, dim, config.seed)?)?;
        text_store.insert(
            text_embedding_id(&id, NodeKind::LanguageContext),
            &toy_embed(&language, dim, config.seed)?,
        )?;
        truth.push(SampleTruth {
            id: id.clone(),
            label,
            entity,
            masked,
        });
        samples.push(Sample {
            id,
            question,
            language_context: language,
            visual: VisualContext::Embedding(visual_id),
            vl_embedding: None,
            label,
            group: format!("g{}", i % GROUPS),
            split,
        });
    }

    let mut triplets = Vec::new();
    for k in 0..c {
        let tail = concept_words(k).join(" ");
        for j in 0..config.triplets_per_class {
            let entity = j / FACTS_PER_ENTITY;
            triplets.push(Triplet::new(entity_words(k, entity).join(" "), RELATIONS[j % FACTS_PER_ENTITY], tail.clone()));
        }
    }

    let echo = serde_json::to_value(config).map_err(json_err)?;
    Ok(SynthData {
        dataset: Dataset {
            labels: (0..c).map(|k| format!("class{k}")).collect(),
            samples,
            config: serde_json::json!({ "generator": echo, "embed_seed": config.seed }),
        },
        visual,
        text: text_store,
        triplets: TripletStore::embed(triplets, dim, config.seed)?,
        truth: GroundTruth {
            config: config.clone(),
            prototypes,
            samples: truth,
        },
    })
}

impl SynthData {
    /// Content embeddings for graph building: visual vectors plus text
    /// embeddings in one store.
    pub fn content_store(&self) -> Result<EmbeddingStore> {
        let mut store = self.visual.clone();
        store.merge(&self.text)?;
        Ok(store)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), self.dataset.render()?)?;
        self.visual.write(dir.join(VISUAL_FILE))?;
        self.text.write(dir.join(TEXT_FILE))?;
        std::fs::write(dir.join(TRIPLETS_FILE), render_triplets_tsv(self.triplets.triplets())?)?;
        self.triplets.embeddings().write(dir.join(TRIPLET_EMBEDDINGS_FILE))?;
        let mut truth = serde_json::to_string_pretty(&self.truth).map_err(json_err)?;
        truth.push('\n');
        std::fs::write(dir.join(TRUTH_FILE), truth)?;
        Ok(())
    }
}
