//! Planted synthetic corpus with known ground truth.
//!
//! Every pair is built around an entity (a name word and a place word from
//! procedurally generated vocabularies). The URL names the entity; the
//! caption names the entity, a category noun and filler text; the image
//! vector mixes a category prototype with per-word directions. A fraction of
//! images is pure noise, so a query's usefulness per modality varies.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{clean_url, CaptionRecord, Dataset, QueryRecord};
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mir", "ten", "sa", "vo", "ri", "dun", "pel", "ha", "zu", "bor", "ne", "fi", "gal", "ost", "ur",
    "wen", "tas", "ki", "mo", "ber", "lin", "da",
];

const CATEGORIES: &[&str] = &[
    "bridge", "castle", "river", "church", "tower", "harbour", "mountain", "square", "station", "garden",
    "lighthouse", "market", "statue", "palace", "lake", "library",
];

const TEMPLATES: &[&str] = &[
    "The {cat} of {name} in {place}",
    "{name} {cat}, {place}, {filler}",
    "View of the {name} {cat} near {place} {filler}",
    "{place}: the old {cat} called {name}",
    "A {cat} in {place} known as {name}, {filler}",
];

const FILLERS: &[&str] = &[
    "photographed in the early morning",
    "seen from the north side",
    "after restoration works",
    "during the summer festival",
    "on a cloudy afternoon",
    "from the historic archive",
    "as it appears today",
    "with visitors in the foreground",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_pairs: usize,
    /// Captions with no matching query.
    pub n_distractors: usize,
    pub name_vocab: usize,
    pub place_vocab: usize,
    pub image_dim: usize,
    /// Fraction of queries whose image vector carries no signal.
    pub noisy_image_fraction: f64,
    /// Relative noise amplitude on informative images.
    pub image_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1000,
            n_distractors: 0,
            name_vocab: 120,
            place_vocab: 60,
            image_dim: 64,
            noisy_image_fraction: 0.3,
            image_noise: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// 1000 pairs; splitting off 200 gives the 200-query validation and
    /// submission set.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    /// One row per query, in query order.
    pub images: EmbeddingMatrix,
}

fn make_vocab(rng: &mut ChaCha8Rng, n: usize, syllables: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if let Some(first) = w.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn planted_corpus(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let combos = config.name_vocab * config.place_vocab;
    if config.n_pairs < 2 || config.n_pairs > combos / 2 {
        return Err(Error::out_of_range(
            "n_pairs",
            config.n_pairs,
            format!("[2, {}] for the configured vocabularies", combos / 2),
        ));
    }
    if config.image_dim == 0 || !(0.0..=1.0).contains(&config.noisy_image_fraction) {
        return Err(Error::Config(format!("invalid synthetic config {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let names = make_vocab(&mut rng, config.name_vocab, 3);
    let places = make_vocab(&mut rng, config.place_vocab, 2);
    let dim = config.image_dim;
    let cat_dirs: Vec<Vec<f64>> = CATEGORIES.iter().map(|_| random_direction(&mut rng, dim)).collect();
    let name_dirs: Vec<Vec<f64>> = names.iter().map(|_| random_direction(&mut rng, dim)).collect();
    let place_dirs: Vec<Vec<f64>> = places.iter().map(|_| random_direction(&mut rng, dim)).collect();

    let mut used = HashSet::new();
    let mut queries = Vec::with_capacity(config.n_pairs);
    let mut caption_texts = Vec::with_capacity(config.n_pairs + config.n_distractors);
    let mut images = Vec::with_capacity(config.n_pairs);
    let total = config.n_pairs + config.n_distractors;
    while caption_texts.len() < total {
        let (ni, pi) = (rng.gen_range(0..names.len()), rng.gen_range(0..places.len()));
        if !used.insert((ni, pi)) {
            continue;
        }
        let ci = rng.gen_range(0..CATEGORIES.len());
        let caption = TEMPLATES
            .choose(&mut rng)
            .unwrap()
            .replace("{name}", &names[ni])
            .replace("{place}", &places[pi])
            .replace("{cat}", CATEGORIES[ci])
            .replace("{filler}", FILLERS.choose(&mut rng).unwrap());
        caption_texts.push(caption);
        if queries.len() == config.n_pairs {
            continue;
        }

        let i = queries.len();
        let stem = if rng.gen_bool(0.5) {
            format!("{}_{}", names[ni], places[pi])
        } else {
            format!("{}_({})", names[ni], places[pi])
        };
        let suffix = ["jpg", "JPG", "png", "jpeg"].choose(&mut rng).unwrap();
        let hex = format!("{:02x}", rng.gen::<u8>());
        let raw_url = format!(
            "https://upload.wikimedia.org/wikipedia/commons/{}/{hex}/{}.{suffix}",
            &hex[..1],
            stem.replace('(', "%28").replace(')', "%29")
        );
        let cleaned_url = clean_url(&raw_url)?;
        queries.push(QueryRecord {
            id: 1 + i as u64,
            raw_url,
            cleaned_url,
            image_embedding_ref: Some(i),
            language: Some("en".into()),
        });

        let image = if rng.gen_bool(config.noisy_image_fraction) {
            random_direction(&mut rng, dim)
        } else {
            let noise = random_direction(&mut rng, dim);
            (0..dim)
                .map(|k| cat_dirs[ci][k] + name_dirs[ni][k] + place_dirs[pi][k] + config.image_noise * 1.7 * noise[k])
                .collect()
        };
        let n = image.iter().map(|x| x * x).sum::<f64>().sqrt();
        images.push(image.iter().map(|x| (x / n) as f32).collect::<Vec<f32>>());
    }

    // Caption ids are a shuffled range so caption order carries no signal.
    let mut caption_ids: Vec<u64> = (0..total as u64).map(|i| 100_000 + i).collect();
    caption_ids.shuffle(&mut rng);
    let mut captions: Vec<CaptionRecord> = caption_texts
        .into_iter()
        .zip(&caption_ids)
        .map(|(text, &id)| CaptionRecord {
            id,
            text,
            language: Some("en".into()),
        })
        .collect();
    let gt: BTreeMap<u64, u64> = queries.iter().zip(&caption_ids).map(|(q, &c)| (q.id, c)).collect();
    captions.sort_by_key(|c| c.id);
    Ok(SyntheticCorpus {
        dataset: Dataset::new(queries, captions, Some(gt))?,
        images: EmbeddingMatrix::from_rows(&images)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig {
            n_pairs: 50,
            n_distractors: 5,
            ..SyntheticConfig::default()
        };
        let a = planted_corpus(&cfg).unwrap();
        let b = planted_corpus(&cfg).unwrap();
        assert_eq!(a.dataset.queries(), b.dataset.queries());
        assert_eq!(a.images, b.images);
        assert_eq!(a.dataset.captions().len(), 55);
        assert_eq!(a.dataset.ground_truth().unwrap().len(), 50);
        assert_eq!(a.images.rows(), 50);
        assert!(a.images.is_normalized());
    }

    #[test]
    fn url_names_its_entity() {
        let c = planted_corpus(&SyntheticConfig {
            n_pairs: 20,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let gt = c.dataset.ground_truth().unwrap();
        for q in c.dataset.queries() {
            let caption = &c.dataset.caption(gt[&q.id]).unwrap().text;
            for word in q.cleaned_url.split([' ', '(', ')']).filter(|w| !w.is_empty()) {
                assert!(caption.contains(word), "{word} not in {caption}");
            }
        }
    }
}
