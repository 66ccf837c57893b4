//! Synthetic planted-rule VQA task.
//!
//! Every image places `k` distinct objects in random regions and gives them
//! `k` distinct attributes; the other regions are background. The question
//! names one of the placed objects and the answer is its attribute. A
//! region-blind summary of the image only reveals which attributes are
//! present, so without binding the question word to a region the best
//! guess is right about `1/k` of the time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::DcnConfig;
use crate::encoder::{level_dims, MultiScaleFeatures, TokenSequence, NUM_LEVELS};
use crate::error::{DcnError, Result};
use crate::model::Example;
use crate::tensor::Tensor;

const WORDS: [&str; 8] = ["what", "is", "the", "which", "attribute", "does", "have", "describe"];
/// Placeholder for the object word inside a template.
const OBJ: i32 = -1;
const TEMPLATES: [&[i32]; 3] = [&[0, 1, 2, OBJ], &[3, 4, 5, 2, OBJ, 6], &[7, 2, OBJ]];

pub const NUM_QUESTION_TYPES: usize = TEMPLATES.len();
/// Template with a three-word question.
pub const SHORT_TEMPLATE: usize = 2;

/// Token id layout: 0 is `unk`, then template words, object names and
/// attribute names.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub n_objects: usize,
    pub n_attributes: usize,
}

impl Vocabulary {
    pub fn new(n_objects: usize, n_attributes: usize) -> Self {
        Vocabulary {
            n_objects,
            n_attributes,
        }
    }

    pub fn from_config(cfg: &DcnConfig) -> Self {
        Self::new(cfg.n_objects, cfg.n_attributes)
    }

    pub fn size(&self) -> usize {
        1 + WORDS.len() + self.n_objects + self.n_attributes
    }

    pub fn object_token(&self, object: usize) -> u32 {
        (1 + WORDS.len() + object) as u32
    }

    pub fn attribute_token(&self, attribute: usize) -> u32 {
        (1 + WORDS.len() + self.n_objects + attribute) as u32
    }

    pub fn object_of_token(&self, token: u32) -> Option<usize> {
        let first = self.object_token(0);
        (token >= first && ((token - first) as usize) < self.n_objects).then(|| (token - first) as usize)
    }

    pub fn question(&self, question_type: usize, object: usize) -> Vec<u32> {
        TEMPLATES[question_type]
            .iter()
            .map(|&w| if w == OBJ { self.object_token(object) } else { (1 + w) as u32 })
            .collect()
    }

    /// One-word answer sequences, one per attribute.
    pub fn answer_sequences(&self) -> Vec<Vec<u32>> {
        (0..self.n_attributes).map(|a| vec![self.attribute_token(a)]).collect()
    }

    pub fn word(&self, token: u32) -> String {
        let t = token as usize;
        if t == 0 {
            "<unk>".into()
        } else if t <= WORDS.len() {
            WORDS[t - 1].into()
        } else if let Some(o) = self.object_of_token(token) {
            format!("obj{o}")
        } else if t < self.size() {
            format!("attr{}", t - 1 - WORDS.len() - self.n_objects)
        } else {
            "<oov>".into()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionContent {
    pub object: usize,
    pub attribute: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSample {
    /// One entry per region in row-major grid order; `None` is background.
    pub regions: Vec<Option<RegionContent>>,
    pub question: Vec<u32>,
    pub question_type: usize,
    pub answer: usize,
    pub noise_seed: u64,
}

impl SyntheticSample {
    pub fn tokens(&self, vocab: &Vocabulary, n_max: usize) -> Result<TokenSequence> {
        TokenSequence::new(self.question.clone(), vocab.size(), n_max)
    }
}

/// Ground truth by direct lookup: find the region holding the named object.
pub fn oracle_answer(sample: &SyntheticSample, vocab: &Vocabulary) -> Option<usize> {
    let object = sample.question.iter().find_map(|&t| vocab.object_of_token(t))?;
    sample
        .regions
        .iter()
        .flatten()
        .find(|r| r.object == object)
        .map(|r| r.attribute)
}

pub fn oracle_table(samples: &[SyntheticSample], vocab: &Vocabulary) -> Result<Vec<usize>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| oracle_answer(s, vocab).ok_or_else(|| DcnError::Input(format!("sample {i} has no answer"))))
        .collect()
}

/// `n` reproducible samples over a grid of `t` regions with `per_image`
/// objects in each image.
pub fn gen_dataset(n: usize, t: usize, vocab: &Vocabulary, per_image: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    if vocab.n_objects < 4 || vocab.n_attributes < 4 {
        return Err(DcnError::Input(format!(
            "need at least 4 objects and 4 attributes to plant distractors, got {} and {}",
            vocab.n_objects, vocab.n_attributes
        )));
    }
    let limit = vocab.n_objects.min(vocab.n_attributes).min(t);
    if !(2..=limit).contains(&per_image) {
        return Err(DcnError::Input(format!(
            "{per_image} objects per image; need between 2 and {limit} for {} objects, {} attributes, {t} regions",
            vocab.n_objects, vocab.n_attributes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..t).collect();
    let mut objects: Vec<usize> = (0..vocab.n_objects).collect();
    let mut attrs: Vec<usize> = (0..vocab.n_attributes).collect();
    let samples = (0..n)
        .map(|_| {
            cells.shuffle(&mut rng);
            objects.shuffle(&mut rng);
            attrs.shuffle(&mut rng);
            let mut regions = vec![None; t];
            for i in 0..per_image {
                regions[cells[i]] = Some(RegionContent {
                    object: objects[i],
                    attribute: attrs[i],
                });
            }
            let pick = rng.random_range(0..per_image);
            let question_type = rng.random_range(0..NUM_QUESTION_TYPES);
            SyntheticSample {
                regions,
                question: vocab.question(question_type, objects[pick]),
                question_type,
                answer: attrs[pick],
                noise_seed: rng.random(),
            }
        })
        .collect();
    Ok(samples)
}

/// Fixed random vocabulary of region descriptors and the linear "backbone"
/// that renders them into four feature maps.
#[derive(Clone, Debug)]
pub struct World {
    objects: Vec<Vec<f64>>,
    attributes: Vec<Vec<f64>>,
    backbone: [Tensor; NUM_LEVELS],
    dims: [(usize, usize); NUM_LEVELS],
    t: usize,
    feature_dim: usize,
    region_noise: f64,
    pixel_noise: f64,
}

fn gaussian_rows<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect())
        .collect()
}

impl World {
    pub fn new(cfg: &DcnConfig) -> Result<Self> {
        let f = cfg.data.feature_dim;
        let dims = level_dims(cfg.c, cfg.t)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data.seed ^ 0x05ee_d0f3_011d);
        let scale = 1.0 / (f as f64).sqrt();
        let objects = gaussian_rows(cfg.n_objects, f, scale, &mut rng);
        let attributes = gaussian_rows(cfg.n_attributes, f, scale, &mut rng);
        let backbone = std::array::from_fn(|j| {
            let rows = gaussian_rows(dims[j].0, f, scale, &mut rng);
            Tensor::new(&[dims[j].0, f], rows.concat()).expect("backbone shape")
        });
        Ok(World {
            objects,
            attributes,
            backbone,
            dims,
            t: cfg.t,
            feature_dim: f,
            region_noise: cfg.data.region_noise,
            pixel_noise: cfg.data.pixel_noise,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Latent descriptor of every region: object + attribute vectors plus
    /// Gaussian noise (noise only for background). Row-major `T x F`.
    pub fn region_features(&self, sample: &SyntheticSample) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(sample.noise_seed);
        self.region_features_with(sample, &mut rng)
    }

    fn region_features_with(&self, sample: &SyntheticSample, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        sample
            .regions
            .iter()
            .map(|r| {
                (0..self.feature_dim)
                    .map(|k| {
                        let base = r.map_or(0.0, |c| self.objects[c.object][k] + self.attributes[c.attribute][k]);
                        base + self.region_noise * Distribution::<f64>::sample(&StandardNormal, rng)
                    })
                    .collect()
            })
            .collect()
    }

    /// Renders the four maps: every pixel of a region's cell at level `j`
    /// holds `B_j f_t` plus independent pixel noise.
    pub fn render(&self, sample: &SyntheticSample) -> Result<MultiScaleFeatures> {
        if sample.regions.len() != self.t {
            return Err(DcnError::Input(format!(
                "sample has {} regions, world expects {}",
                sample.regions.len(),
                self.t
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sample.noise_seed);
        let feats = self.region_features_with(sample, &mut rng);
        let side = (self.t as f64).sqrt().round() as usize;
        let levels = std::array::from_fn(|j| {
            let (ch, h) = self.dims[j];
            let cell = h / side;
            let b = &self.backbone[j];
            let mut data = vec![0.0; ch * h * h];
            for (t, f) in feats.iter().enumerate() {
                let (gy, gx) = (t / side, t % side);
                for c in 0..ch {
                    let val: f64 = b.row(c).iter().zip(f).map(|(x, y)| x * y).sum();
                    for y in gy * cell..(gy + 1) * cell {
                        for x in gx * cell..(gx + 1) * cell {
                            data[(c * h + y) * h + x] = val + self.pixel_noise * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                        }
                    }
                }
            }
            Tensor::new(&[ch, h, h], data).expect("level shape")
        });
        MultiScaleFeatures::new(levels)
    }
}

/// World, vocabulary and both splits of one synthetic task.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub world: World,
    pub n_max: usize,
    pub train: Vec<SyntheticSample>,
    pub test: Vec<SyntheticSample>,
}

impl Dataset {
    /// Train and test splits come from `data.seed` and `data.seed + 1`.
    pub fn generate(cfg: &DcnConfig) -> Result<Self> {
        let vocab = Vocabulary::from_config(cfg);
        let world = World::new(cfg)?;
        let train = gen_dataset(cfg.data.n_train, cfg.t, &vocab, cfg.data.objects_per_image, cfg.data.seed)?;
        let test = gen_dataset(cfg.data.n_test, cfg.t, &vocab, cfg.data.objects_per_image, cfg.data.seed.wrapping_add(1))?;
        Ok(Dataset {
            vocab,
            world,
            n_max: cfg.n_max,
            train,
            test,
        })
    }

    pub fn example(&self, sample: &SyntheticSample) -> Result<Example> {
        Ok(Example {
            question: sample.tokens(&self.vocab, self.n_max)?,
            features: self.world.render(sample)?,
        })
    }
}
