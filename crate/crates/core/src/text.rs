//! Text primitives shared by the corpus generator, the engine's simulated
//! external services, and the typo-corruption shadow pipeline.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// FNV-1a, 64 bit.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// L2-normalized term-frequency vector of hashed character trigrams over the
/// text padded with one space on each side. Texts without any trigram map to
/// the all-zero vector.
pub fn embed_text(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let chars: Vec<char> = std::iter::once(' ')
        .chain(text.chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let slot = (fnv1a(&buf[..len]) % dim as u64) as usize;
        v[slot] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Dot product; equals cosine similarity for unit vectors and 0 against the
/// zero vector. A zero result is always `+0.0` so that `total_cmp` treats
/// every zero similarity as a tie.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() + 0.0
}

/// Regex weak labeler: 1 iff some positive pattern matches and no override
/// pattern matches.
#[derive(Debug, Clone)]
pub struct WeakLabeler {
    positive: Vec<Regex>,
    overrides: Vec<Regex>,
}

impl WeakLabeler {
    pub fn new(positive: &[String], overrides: &[String]) -> Result<Self, regex::Error> {
        Ok(WeakLabeler {
            positive: positive.iter().map(|p| Regex::new(p)).collect::<Result<_, _>>()?,
            overrides: overrides.iter().map(|p| Regex::new(p)).collect::<Result<_, _>>()?,
        })
    }

    /// The patterns of the bundled reference pipelines.
    pub fn listing_default() -> Self {
        let (pos, neg) = default_patterns();
        WeakLabeler::new(&pos, &neg).expect("default patterns compile")
    }

    pub fn label(&self, text: &str) -> u8 {
        let pos = self.positive.iter().any(|r| r.is_match(text));
        let neg = self.overrides.iter().any(|r| r.is_match(text));
        u8::from(pos && !neg)
    }
}

pub fn default_patterns() -> (Vec<String>, Vec<String>) {
    (
        vec![
            "(0|no|zero) (motivation)".to_string(),
            "lost (interest|motivation)".to_string(),
        ],
        vec!["recover from (0|no|zero) interest".to_string()],
    )
}

/// Bijective word dictionary between English and the corpus' pseudo-foreign
/// language, plus the spelling vocabulary (both sides of the dictionary).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub language: String,
    /// English word -> foreign token.
    pub dictionary: BTreeMap<String, String>,
    #[serde(skip)]
    reverse: BTreeMap<String, String>,
    #[serde(skip)]
    vocabulary: BTreeSet<String>,
}

impl Lexicon {
    pub fn new(language: &str, dictionary: BTreeMap<String, String>) -> Self {
        let mut lex = Lexicon {
            language: language.to_string(),
            dictionary,
            reverse: BTreeMap::new(),
            vocabulary: BTreeSet::new(),
        };
        lex.rebuild();
        lex
    }

    fn rebuild(&mut self) {
        self.reverse = self.dictionary.iter().map(|(e, f)| (f.clone(), e.clone())).collect();
        self.vocabulary = self
            .dictionary
            .keys()
            .chain(self.dictionary.values())
            .cloned()
            .collect();
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut lex: Lexicon = serde_json::from_str(text)?;
        lex.rebuild();
        Ok(lex)
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn to_foreign(&self, text: &str) -> String {
        tokens(text)
            .map(|t| self.dictionary.get(t).map_or(t, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Maps every known foreign token back to English; unknown tokens pass
    /// through.
    pub fn translate(&self, text: &str) -> String {
        tokens(text)
            .map(|t| self.reverse.get(t).map_or(t, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn needs_spellcheck(&self, text: &str) -> bool {
        tokens(text).any(|t| !self.vocabulary.contains(t))
    }

    /// Nearest vocabulary word within Damerau-Levenshtein distance 2, ties to
    /// the lexicographically smallest; `None` if the word is known or nothing
    /// is close enough.
    pub fn correction(&self, word: &str) -> Option<&str> {
        if self.vocabulary.contains(word) {
            return None;
        }
        let mut best: Option<(usize, &str)> = None;
        for cand in &self.vocabulary {
            if cand.len().abs_diff(word.len()) > 2 {
                continue;
            }
            let d = strsim::damerau_levenshtein(word, cand);
            if d <= 2 && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, cand));
            }
        }
        best.map(|(_, w)| w)
    }

    pub fn spellcheck(&self, text: &str) -> String {
        tokens(text)
            .map(|t| self.correction(t).unwrap_or(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Single-edit typo operations (classic Damerau edits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypoOp {
    SwapAdjacent,
    DeleteChar,
    SubstituteChar,
}

/// Applies `op` at a random position. Returns `None` when the word is too
/// short for the op to change it.
pub fn apply_typo<R: Rng>(word: &str, op: TypoOp, rng: &mut R) -> Option<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let mut out = chars.clone();
    match op {
        TypoOp::SwapAdjacent => {
            if n < 2 {
                return None;
            }
            let i = rng.gen_range(0..n - 1);
            out.swap(i, i + 1);
        }
        TypoOp::DeleteChar => {
            if n < 2 {
                return None;
            }
            out.remove(rng.gen_range(0..n));
        }
        TypoOp::SubstituteChar => {
            if n == 0 {
                return None;
            }
            let i = rng.gen_range(0..n);
            let c = (b'a' + rng.gen_range(0..26u8)) as char;
            out[i] = c;
        }
    }
    let s: String = out.into_iter().collect();
    (s != word).then_some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        dot(v, v).sqrt()
    }

    #[test]
    fn embeddings_are_unit_or_zero() {
        for t in ["a", "zero motivation", "great day outside", "ü ß"] {
            assert!((norm(&embed_text(t, 256)) - 1.0).abs() < 1e-9, "{t}");
        }
        assert!(embed_text("", 256).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn identical_text_identical_vector() {
        assert_eq!(embed_text("lost interest", 64), embed_text("lost interest", 64));
    }

    /// Oracle: cosine of raw trigram multisets, no hashing.
    fn trigram_cosine(a: &str, b: &str) -> f64 {
        fn grams(s: &str) -> BTreeMap<String, f64> {
            let c: Vec<char> = format!(" {s} ").chars().collect();
            let mut m = BTreeMap::new();
            for w in c.windows(3) {
                *m.entry(w.iter().collect()).or_insert(0.0) += 1.0;
            }
            m
        }
        let (ga, gb) = (grams(a), grams(b));
        let num: f64 = ga.iter().map(|(k, v)| v * gb.get(k).unwrap_or(&0.0)).sum();
        num / (ga.values().map(|v| v * v).sum::<f64>().sqrt() * gb.values().map(|v| v * v).sum::<f64>().sqrt())
    }

    #[test]
    fn typo_variant_is_closer_than_unrelated_text() {
        let base = "zero motivation";
        let typo = "zero motivatoin";
        let other = "great day outside";
        assert!(trigram_cosine(base, typo) > trigram_cosine(base, other));
        let (e0, e1, e2) = (embed_text(base, 256), embed_text(typo, 256), embed_text(other, 256));
        assert!(dot(&e0, &e1) > dot(&e0, &e2));
    }

    #[test]
    fn weak_label_examples() {
        let wl = WeakLabeler::listing_default();
        assert_eq!(wl.label("i have zero motivation lately"), 1);
        assert_eq!(wl.label("i lost interest in music"), 1);
        assert_eq!(wl.label("i lost interest but now i recover from zero interest"), 0);
        assert_eq!(wl.label("trying to recover from zero interest in things"), 0);
        assert_eq!(wl.label(""), 0);
    }

    fn lexicon() -> Lexicon {
        let dict = [("zero", "vekatu"), ("motivation", "dorimasa"), ("lost", "gupeno")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Lexicon::new("xx", dict)
    }

    #[test]
    fn translation_inverts_rendering() {
        let lex = lexicon();
        let foreign = lex.to_foreign("zero motivation today");
        assert_eq!(foreign, "vekatu dorimasa today");
        assert_eq!(lex.translate(&foreign), "zero motivation today");
    }

    #[test]
    fn spellcheck_fixes_transposition() {
        let lex = lexicon();
        assert_eq!(lex.correction("motivatoin"), Some("motivation"));
        assert_eq!(lex.correction("motivation"), None);
        assert_eq!(lex.correction("qqqqqqq"), None);
        assert_eq!(lex.spellcheck("zreo motivatoin"), "zero motivation");
    }

    #[test]
    fn spellcheck_tie_prefers_smallest() {
        let dict = [("cat", "ab"), ("car", "cd")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let lex = Lexicon::new("xx", dict);
        // "caz" is distance 1 from both "car" and "cat"
        assert_eq!(lex.correction("caz"), Some("car"));
    }

    #[test]
    fn lexicon_json_round_trip_restores_indexes() {
        let lex = lexicon();
        let json = serde_json::to_string(&lex).unwrap();
        let back = Lexicon::from_json(&json).unwrap();
        assert_eq!(back.translate("gupeno"), "lost");
        assert!(back.vocabulary().contains("vekatu"));
    }

    #[test]
    fn typos_always_change_long_enough_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for op in [TypoOp::SwapAdjacent, TypoOp::DeleteChar, TypoOp::SubstituteChar] {
            for _ in 0..50 {
                if let Some(t) = apply_typo("motivation", op, &mut rng) {
                    assert_ne!(t, "motivation");
                    assert!(strsim::damerau_levenshtein(&t, "motivation") <= 1);
                }
            }
        }
        assert!(apply_typo("a", TypoOp::DeleteChar, &mut rng).is_none());
    }
}
