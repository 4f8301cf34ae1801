//! Deterministic stand-in for an image generator.
//!
//! A prompt is parsed into counted objects ("two dogs", "a green fire
//! hydrant"). The base render of `(positive, seed)` gets each object wrong
//! with probability `error_rate`. A negative prompt naming the wrong
//! attribute fixes it with probability `fix_rate`; one naming the requested
//! attribute breaks a correct object with the same probability; anything
//! else fixes it with `untargeted_fix_rate`. Draws are keyed by hashes of
//! the inputs, so the whole thing is a pure function of the request.

use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::store::{ArtifactMeta, ArtifactStore};
use super::{GenerationError, GenerationOutput, GenerationRequest, Generator};
use crate::attention::{write_dump, AttentionDump, Dims, DumpKind};
use crate::embedding::MockEmbeddingBackend;
use crate::text::{is_quantity, stem, words, STOPWORDS, STOP_NOUNS};

const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
];

const COLORS: &[&str] = &[
    "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black", "white", "gray",
];

/// Words that end an object phrase.
const BOUNDARY: &[&str] = &[
    "and", "with", "on", "in", "next", "to", "near", "above", "below", "beside", "left", "right",
    "of", "under", "behind", "the", "at", "is", "are", "holding", "sitting", "standing", "while",
    "for", "from", "by", "over", "into", "its", "their",
];

const BACKGROUND: &[&str] = &[
    "wooden table",
    "potted plant",
    "street lamp",
    "cloudy sky",
    "brick wall",
    "parked car",
    "tree branch",
    "bookshelf",
    "window frame",
    "grass field",
    "stone path",
    "picnic bench",
];

const MAX_PHRASE_WORDS: usize = 3;
const MAX_COUNT: u32 = 20;
const BMP_SIDE: u32 = 16;
const DUMP_HEADS: usize = 2;
const DUMP_QUERIES: usize = 8;
/// Logit boost on salient columns during active steps with a negative.
const SALIENT_BOOST: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSceneConfig {
    pub error_rate: f64,
    pub fix_rate: f64,
    pub untargeted_fix_rate: f64,
    pub background_items: usize,
}

impl Default for MockSceneConfig {
    fn default() -> Self {
        Self {
            error_rate: 0.5,
            fix_rate: 0.8,
            untargeted_fix_rate: 0.15,
            background_items: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Phrase words after the quantity, as written in the prompt.
    pub words: Vec<String>,
    pub requested_count: u32,
    pub rendered_count: u32,
    pub requested_color: Option<String>,
    pub rendered_color: Option<String>,
}

fn count_word(n: u32) -> String {
    NUMBER_WORDS
        .get(n as usize)
        .map(|w| w.to_string())
        .unwrap_or_else(|| n.to_string())
}

fn parse_count(word: &str) -> Option<u32> {
    match word {
        "a" | "an" => Some(1),
        _ => NUMBER_WORDS
            .iter()
            .position(|w| *w == word)
            .map(|i| i as u32)
            .or_else(|| word.parse().ok())
            .map(|n: u32| n.min(MAX_COUNT)),
    }
}

fn count_tokens(n: u32) -> Vec<String> {
    let mut out = vec![count_word(n), n.to_string()];
    if n == 1 {
        out.extend(["a", "an", "single"].map(String::from));
    }
    out
}

fn plural(word: &str) -> String {
    if stem(word) != word {
        word.to_string()
    } else if ["s", "x", "ch", "sh"].iter().any(|e| word.ends_with(e)) {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

impl SceneObject {
    pub fn noun(&self) -> &str {
        self.words.last().map(String::as_str).unwrap_or("")
    }

    pub fn is_correct(&self) -> bool {
        self.rendered_count == self.requested_count && self.rendered_color == self.requested_color
    }

    pub fn describe(&self, count: u32, color: Option<&str>) -> String {
        let mut parts = vec![count_word(count)];
        let last = self.words.len().saturating_sub(1);
        for (i, w) in self.words.iter().enumerate() {
            let w = if Some(w) == self.requested_color.as_ref() {
                color.unwrap_or(w).to_string()
            } else if i == last {
                if count == 1 {
                    stem(w).to_string()
                } else {
                    plural(w)
                }
            } else {
                w.clone()
            };
            parts.push(w);
        }
        parts.join(" ")
    }

    pub fn requested_text(&self) -> String {
        self.describe(self.requested_count, self.requested_color.as_deref())
    }

    pub fn rendered_text(&self) -> String {
        self.describe(self.rendered_count, self.rendered_color.as_deref())
    }

    /// Tokens a negative must contain to address the current rendering:
    /// the wrong attribute if there is one, else the requested attribute.
    fn attribute_tokens(&self) -> Vec<String> {
        if self.rendered_color != self.requested_color {
            self.rendered_color.iter().cloned().collect()
        } else if self.rendered_count != self.requested_count {
            count_tokens(self.rendered_count)
        } else {
            let mut t = count_tokens(self.requested_count);
            t.extend(self.requested_color.iter().cloned());
            t
        }
    }

    fn named_by(&self, negative_words: &[String]) -> bool {
        let noun = stem(self.noun());
        negative_words.iter().any(|w| stem(w) == noun)
            && self
                .attribute_tokens()
                .iter()
                .any(|t| negative_words.iter().any(|w| w == t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub objects: Vec<SceneObject>,
    pub background: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suppressed: Vec<String>,
}

impl SceneDescriptor {
    pub fn is_correct(&self) -> bool {
        self.objects.iter().all(SceneObject::is_correct)
    }

    pub fn satisfied_fraction(&self) -> f64 {
        if self.objects.is_empty() {
            return 1.0;
        }
        self.objects.iter().filter(|o| o.is_correct()).count() as f64 / self.objects.len() as f64
    }

    pub fn failures(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(|o| !o.is_correct())
    }

    /// Plain-language description, the way a captioner would put it.
    pub fn caption(&self) -> String {
        let subjects: Vec<String> = self
            .objects
            .iter()
            .map(SceneObject::rendered_text)
            .collect();
        let mut out = if subjects.is_empty() {
            "The image shows an abstract scene.".to_string()
        } else {
            format!("The image shows {}.", subjects.join(" and "))
        };
        if !self.background.is_empty() {
            out.push_str(&format!(
                " Background elements: {}.",
                self.background.join(", ")
            ));
        }
        out
    }
}

fn seeded_rng(domain: &[u8], parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(domain);
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub(crate) fn parse_objects(prompt: &str) -> Vec<SceneObject> {
    let w = words(prompt);
    let mut out = Vec::new();
    let mut i = 0;
    while i < w.len() {
        let count = if is_quantity(&w[i]) {
            parse_count(&w[i])
        } else {
            None
        };
        let Some(count) = count.filter(|&c| c >= 1) else {
            i += 1;
            continue;
        };
        if w.get(i + 1)
            .is_some_and(|n| STOP_NOUNS.contains(&n.as_str()))
        {
            i += 2;
            continue;
        }
        let mut phrase = Vec::new();
        let mut j = i + 1;
        while j < w.len()
            && phrase.len() < MAX_PHRASE_WORDS
            && !BOUNDARY.contains(&w[j].as_str())
            && !is_quantity(&w[j])
        {
            phrase.push(w[j].clone());
            j += 1;
        }
        if !phrase.is_empty() {
            let color = phrase[..phrase.len() - 1]
                .iter()
                .find(|p| COLORS.contains(&p.as_str()))
                .cloned();
            out.push(SceneObject {
                words: phrase,
                requested_count: count,
                rendered_count: count,
                requested_color: color.clone(),
                rendered_color: color,
            });
        }
        i = j.max(i + 1);
    }
    out
}

fn wrong_count(requested: u32, pick: u32) -> u32 {
    if requested == 1 {
        2 + pick % 2
    } else if pick.is_multiple_of(2) {
        requested - 1
    } else {
        (requested + 1).min(MAX_COUNT + 1)
    }
}

pub(crate) fn wrong_color(requested: &str, pick: u32) -> String {
    let others: Vec<&&str> = COLORS.iter().filter(|c| **c != requested).collect();
    others[pick as usize % others.len()].to_string()
}

fn base_scene(positive: &str, seed: u64, cfg: &MockSceneConfig) -> SceneDescriptor {
    let mut rng = seeded_rng(
        b"npc-mock-scene/v1",
        &[&seed.to_le_bytes(), positive.as_bytes()],
    );
    let mut objects = parse_objects(positive);
    for o in &mut objects {
        let u: f64 = rng.random();
        let color_error: f64 = rng.random();
        let pick: u32 = rng.random();
        if u >= cfg.error_rate {
            continue;
        }
        match &o.requested_color {
            Some(c) if color_error < 0.5 => o.rendered_color = Some(wrong_color(c, pick)),
            _ => o.rendered_count = wrong_count(o.requested_count, pick),
        }
    }
    let prompt_stems: BTreeSet<String> = words(positive)
        .iter()
        .map(|w| stem(w).to_string())
        .collect();
    let mut pool: Vec<&str> = BACKGROUND
        .iter()
        .copied()
        .filter(|item| item.split(' ').all(|w| !prompt_stems.contains(stem(w))))
        .collect();
    let mut background = Vec::new();
    while background.len() < cfg.background_items && !pool.is_empty() {
        let idx = rng.random_range(0..pool.len());
        background.push(pool.remove(idx).to_string());
    }
    SceneDescriptor {
        objects,
        background,
        suppressed: Vec::new(),
    }
}

/// Symbolic content of the image a request would produce.
pub fn mock_scene(req: &GenerationRequest, cfg: &MockSceneConfig) -> SceneDescriptor {
    let mut scene = base_scene(&req.positive_prompt, req.params.seed, cfg);
    let Some(negative) = req.negative_prompt.as_deref() else {
        return scene;
    };
    let neg_words = words(negative);
    let neg_content: Vec<&str> = neg_words
        .iter()
        .map(String::as_str)
        .filter(|w| !STOPWORDS.contains(w))
        .collect();
    let mut rng = seeded_rng(
        b"npc-mock-negative/v1",
        &[
            &req.params.seed.to_le_bytes(),
            req.positive_prompt.as_bytes(),
            negative.as_bytes(),
        ],
    );
    for o in &mut scene.objects {
        let u: f64 = rng.random();
        let pick: u32 = rng.random();
        let named = o.named_by(&neg_words);
        if o.is_correct() {
            if named && u < cfg.fix_rate {
                match &o.requested_color {
                    Some(c) if neg_words.contains(c) => {
                        o.rendered_color = Some(wrong_color(c, pick))
                    }
                    _ => o.rendered_count = wrong_count(o.requested_count, pick),
                }
            }
        } else if (named && u < cfg.fix_rate) || (!named && u < cfg.untargeted_fix_rate) {
            o.rendered_count = o.requested_count;
            o.rendered_color = o.requested_color.clone();
        }
    }
    let (removed, kept): (Vec<String>, Vec<String>) =
        scene.background.drain(..).partition(|item| {
            item.split(' ')
                .any(|w| neg_content.iter().any(|n| stem(n) == stem(w)))
        });
    scene.background = kept;
    scene.suppressed = removed;
    scene
}

/// 24-bit uncompressed BMP, `BMP_SIDE` pixels square.
fn bitmap(pixels: &[u8]) -> Vec<u8> {
    let row = (BMP_SIDE * 3) as usize;
    let data_len = row * BMP_SIDE as usize;
    debug_assert_eq!(pixels.len(), data_len);
    let file_len = 54 + data_len as u32;
    let mut out = Vec::with_capacity(file_len as usize);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&file_len.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&54u32.to_le_bytes());
    out.extend_from_slice(&40u32.to_le_bytes());
    out.extend_from_slice(&(BMP_SIDE as i32).to_le_bytes());
    out.extend_from_slice(&(BMP_SIDE as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Mock attention probabilities over the positive prompt's tokens.
fn mock_dump(req: &GenerationRequest) -> AttentionDump {
    let tokens = MockEmbeddingBackend::tokenize(&req.positive_prompt);
    let l = tokens.len().max(1);
    let salient: Vec<usize> = crate::saliency::extract_salient_tokens(&req.positive_prompt)
        .tokens()
        .iter()
        .filter_map(|s| tokens.iter().position(|t| t == s))
        .collect();
    let t_steps = req.params.steps as usize;
    let dims = Dims::new(t_steps, 1, DUMP_HEADS, DUMP_QUERIES, l);
    let mut rng = seeded_rng(b"npc-mock-attn/v1", &[&req.canonical_bytes()]);
    let mut values = Vec::with_capacity(dims.numel());
    for t in 0..t_steps {
        let boosted = req.negative_prompt.is_some()
            && req.params.negative_active_steps.contains(&(t as u32 + 1));
        for _ in 0..dims.rows_per_step() {
            let mut row: Vec<f64> = (0..l)
                .map(|k| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    if boosted && salient.contains(&k) {
                        x + SALIENT_BOOST
                    } else {
                        x
                    }
                })
                .collect();
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x = (*x - m).exp());
            let z: f64 = row.iter().sum();
            values.extend(row.iter().map(|x| (x / z) as f32));
        }
    }
    AttentionDump::new(dims, DumpKind::Probabilities, values)
        .expect("softmax rows are valid probabilities")
        .with_salient_indices(salient)
        .expect("indices come from the token list")
        .with_producer("npc-mock")
}

/// Writes a hash-derived bitmap and the scene it stands for into the store.
pub struct MockGenerator {
    store: ArtifactStore,
    scene: MockSceneConfig,
}

impl MockGenerator {
    pub fn new(store: ArtifactStore, scene: MockSceneConfig) -> Self {
        Self { store, scene }
    }

    pub fn store(&self) -> &ArtifactStore {
        &self.store
    }

    pub fn scene_config(&self) -> &MockSceneConfig {
        &self.scene
    }
}

impl Generator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationOutput, GenerationError> {
        req.validate()?;
        let mut rng = seeded_rng(b"npc-mock-image/v1", &[&req.canonical_bytes()]);
        let mut pixels = vec![0u8; (BMP_SIDE * BMP_SIDE * 3) as usize];
        rng.fill_bytes(&mut pixels);
        let image_ref = self.store.put(&bitmap(&pixels), "bmp")?;
        let meta = ArtifactMeta {
            request: req.clone(),
            scene: Some(mock_scene(req, &self.scene)),
        };
        self.store.put_meta(&image_ref, &meta)?;
        let attention_dump_ref = if req.want_attention_dump {
            let mut buf = Vec::new();
            write_dump(&mock_dump(req), &mut buf)
                .map_err(|e| GenerationError::GenerationFailed(e.to_string()))?;
            Some(self.store.put(&buf, "npcattn")?)
        } else {
            None
        };
        Ok(GenerationOutput {
            image_ref,
            attention_dump_ref,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PipelineConfig;

    fn req(positive: &str, negative: Option<&str>, seed: u64) -> GenerationRequest {
        let r = GenerationRequest::new(positive, PipelineConfig::default().generator_params(seed));
        match negative {
            Some(n) => r.with_negative(n),
            None => r,
        }
    }

    #[test]
    fn parses_counted_objects() {
        let objs = parse_objects("A photo of two dogs and a green fire hydrant on the grass");
        assert_eq!(objs.len(), 2);
        assert_eq!(objs[0].words, vec!["dogs"]);
        assert_eq!(objs[0].requested_count, 2);
        assert_eq!(objs[1].words, vec!["green", "fire", "hydrant"]);
        assert_eq!(objs[1].requested_color.as_deref(), Some("green"));
        assert_eq!(objs[1].requested_text(), "one green fire hydrant");
        assert!(parse_objects("sunset over mountains").is_empty());
    }

    #[test]
    fn descriptions_inflect() {
        let mut o = parse_objects("two dogs").remove(0);
        o.rendered_count = 1;
        assert_eq!(o.rendered_text(), "one dog");
        let mut o = parse_objects("a box").remove(0);
        o.rendered_count = 2;
        assert_eq!(o.rendered_text(), "two boxes");
    }

    #[test]
    fn two_dogs_fixture() {
        let cfg = MockSceneConfig::default();
        let seed = (0..1000)
            .find(|&s| {
                let base = mock_scene(&req("two dogs", None, s), &cfg);
                base.objects[0].rendered_count == 1
                    && mock_scene(&req("two dogs", Some("one dog"), s), &cfg).is_correct()
            })
            .expect("some seed renders one dog and is fixed by the negative");
        let base = mock_scene(&req("two dogs", None, seed), &cfg);
        assert!(!base.is_correct());
        assert_eq!(base.objects[0].rendered_text(), "one dog");
        let fixed = mock_scene(&req("two dogs", Some("one dog"), seed), &cfg);
        assert_eq!(fixed.objects[0].rendered_text(), "two dogs");
    }

    #[test]
    fn removal_rate_matches_configuration() {
        let cfg = MockSceneConfig::default();
        let (mut trials, mut fixed, mut seed) = (0, 0, 0u64);
        while trials < 100 {
            let base = mock_scene(&req("two dogs", None, seed), &cfg);
            if let Some(err) = base.failures().next() {
                let neg = err.rendered_text();
                trials += 1;
                if mock_scene(&req("two dogs", Some(&neg), seed), &cfg).is_correct() {
                    fixed += 1;
                }
            }
            seed += 1;
        }
        let rate = fixed as f64 / trials as f64;
        assert!((rate - cfg.fix_rate).abs() <= 0.1, "rate {rate}");
    }

    #[test]
    fn negative_naming_the_request_can_break_it() {
        let cfg = MockSceneConfig {
            error_rate: 0.0,
            fix_rate: 1.0,
            ..Default::default()
        };
        let s = mock_scene(&req("two dogs", Some("two dogs"), 3), &cfg);
        assert!(!s.is_correct());
        let s = mock_scene(&req("two dogs", Some("blurry"), 3), &cfg);
        assert!(s.is_correct());
    }

    #[test]
    fn background_suppression() {
        let cfg = MockSceneConfig::default();
        let base = mock_scene(&req("two dogs", None, 5), &cfg);
        assert_eq!(base.background.len(), 2);
        let item = base.background[0].clone();
        let s = mock_scene(&req("two dogs", Some(&item), 5), &cfg);
        assert!(!s.background.contains(&item));
        assert_eq!(s.suppressed, vec![item]);
    }

    #[test]
    fn generator_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let g = MockGenerator::new(
            ArtifactStore::open(dir.path()).unwrap(),
            MockSceneConfig::default(),
        );
        let a = g.generate(&req("a red fire hydrant", None, 1)).unwrap();
        let b = g.generate(&req("a red fire hydrant", None, 1)).unwrap();
        assert_eq!(a, b);
        let c = g
            .generate(&req("a red fire hydrant", Some("yellow fire hydrant"), 1))
            .unwrap();
        assert_ne!(a.image_ref, c.image_ref);
        let art = g.store().load(&a.image_ref).unwrap();
        assert_eq!(&art.bytes[..2], b"BM");
        assert_eq!(art.bytes.len(), 54 + 16 * 16 * 3);
        assert!(art.meta.unwrap().scene.is_some());
    }

    #[test]
    fn dump_on_request() {
        let dir = tempfile::tempdir().unwrap();
        let g = MockGenerator::new(
            ArtifactStore::open(dir.path()).unwrap(),
            MockSceneConfig::default(),
        );
        let mut r = req("a photo of two dogs", Some("one dog"), 1);
        r.params.steps = 6;
        r.params.negative_active_steps = [1, 2].into_iter().collect();
        r.want_attention_dump = true;
        let out = g.generate(&r).unwrap();
        let bytes = g
            .store()
            .read_bytes(out.attention_dump_ref.as_ref().unwrap())
            .unwrap();
        let dump = crate::attention::read_dump(bytes.as_slice()).unwrap();
        assert_eq!(dump.dims(), Dims::new(6, 1, 2, 8, 5));
        assert_eq!(dump.salient_indices(), Some(&[4usize][..]));
    }
}
