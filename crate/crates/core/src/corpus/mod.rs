//! Seeded synthetic corpus: users, weakly-labeled training posts and an
//! expert-labeled test set, with planted defects the shadow pipelines are
//! meant to find.
//!
//! Train posts are drawn from template families so that the default weak
//! labeling patterns label most of them correctly, while a configured share
//! is written to defeat the patterns (foreign-language positives, typo'd
//! trigger phrases, misleading phrasings). A share of test posts is rendered
//! in a pseudo-foreign language through a seeded bijective word dictionary.

mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::Fingerprint;
use crate::relation::{Column, Relation, RelationError, RowId};
use crate::text::{apply_typo, Lexicon, TypoOp, WeakLabeler};

pub use templates::TRIGGER_WORDS;

pub const USERS_FILE: &str = "users.csv";
pub const TRAIN_FILE: &str = "train_posts.csv";
pub const TEST_FILE: &str = "test_posts.csv";
pub const LEXICON_FILE: &str = "lexicon.json";

pub const FOREIGN_LANGUAGE: &str = "xx";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("infeasible corpus config: {0}")]
    Infeasible(String),
    #[error("template pool exhausted while generating {0}")]
    TemplatePool(&'static str),
    #[error("table `{0}` not found in dataset")]
    MissingTable(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("lexicon: {0}")]
    Lexicon(#[from] serde_json::Error),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

/// Column names of the corpus tables, keyed by file name.
pub fn known_schema(path: &str) -> Option<&'static [&'static str]> {
    match file_name(path) {
        USERS_FILE => Some(&["user_id", "country"]),
        TRAIN_FILE => Some(&["post_id", "user_id", "post_text", "language", "true_label"]),
        TEST_FILE => Some(&[
            "post_id",
            "user_id",
            "post_text",
            "language",
            "length_bucket",
            "signs_of_anhedonia",
        ]),
        _ => None,
    }
}

fn file_name(path: &str) -> &str {
    Path::new(path).file_name().and_then(|s| s.to_str()).unwrap_or(path)
}

fn table_tag(path: &str) -> &str {
    let name = file_name(path);
    name.strip_suffix(".csv").unwrap_or(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryWeight {
    pub code: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_train_posts: usize,
    pub n_test_posts: usize,
    pub n_users: usize,
    pub countries: Vec<CountryWeight>,
    pub non_english_fraction: f64,
    pub planted_mislabel_fraction: f64,
    pub typo_prone_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let countries = [("US", 0.4), ("CAN", 0.2), ("UK", 0.2), ("DE", 0.2)]
            .into_iter()
            .map(|(c, w)| CountryWeight {
                code: c.to_string(),
                weight: w,
            })
            .collect();
        CorpusConfig {
            n_train_posts: 1000,
            n_test_posts: 200,
            n_users: 150,
            countries,
            non_english_fraction: 0.15,
            planted_mislabel_fraction: 0.08,
            typo_prone_fraction: 0.10,
            seed: 42,
        }
    }
}

/// Countries whose users author the foreign-language training posts, so that
/// those posts survive the reference pipelines' country filter.
const FOREIGN_AUTHOR_COUNTRIES: &[&str] = &["US", "CAN"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Positive,
    Neutral,
    Override,
    FalsePositive,
    FalseNegative,
    /// Positive sentence with a typo in its trigger word.
    TypoTrigger,
    /// Positive sentence rendered in the pseudo-foreign language.
    Foreign,
    /// Correctly labeled sentence of the wrapped family with a typo in a
    /// non-trigger word.
    FillerTypo(Base),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Base {
    Positive,
    Neutral,
    Override,
}

impl Family {
    fn truth(self) -> u8 {
        match self {
            Family::Positive | Family::FalseNegative | Family::TypoTrigger | Family::Foreign => 1,
            Family::FillerTypo(Base::Positive) => 1,
            _ => 0,
        }
    }

    fn expected_weak_label(self) -> u8 {
        match self {
            Family::FalsePositive => 1,
            Family::FalseNegative | Family::TypoTrigger | Family::Foreign => 0,
            other => other.truth(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusBundle {
    pub users: Relation,
    pub train_posts: Relation,
    pub test_posts: Relation,
    pub lexicon: Lexicon,
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    lexicon: Lexicon,
    labeler: WeakLabeler,
    config: &'a CorpusConfig,
}

const MAX_ATTEMPTS: usize = 1000;

impl Generator<'_> {
    fn pick(&mut self, pool: &[&'static str]) -> &'static str {
        pool[self.rng.gen_range(0..pool.len())]
    }

    fn join(parts: &[&str]) -> String {
        parts
            .iter()
            .filter(|p| !p.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn base_sentence(&mut self, base: Base) -> String {
        match base {
            Base::Positive => {
                let p = self.pick(templates::PREFIXES);
                let t = self.pick(templates::POSITIVE_TRIGGERS);
                let s = self.pick(templates::POSITIVE_TAILS);
                Self::join(&[p, t, s])
            }
            Base::Neutral => {
                let p = self.pick(templates::PREFIXES);
                let c = self.pick(templates::NEUTRAL_CORES);
                let s = self.pick(templates::NEUTRAL_TAILS);
                Self::join(&[p, c, s])
            }
            Base::Override => {
                let p = self.pick(templates::PREFIXES);
                let c = self.pick(templates::OVERRIDE_NEGATIVES);
                Self::join(&[p, c])
            }
        }
    }

    fn typo_word(&mut self, word: &str) -> Option<String> {
        let op = [TypoOp::SwapAdjacent, TypoOp::DeleteChar, TypoOp::SubstituteChar][self.rng.gen_range(0..3)];
        let typo = apply_typo(word, op, &mut self.rng)?;
        let recoverable = !self.lexicon.vocabulary().contains(&typo) && self.lexicon.correction(&typo) == Some(word);
        recoverable.then_some(typo)
    }

    /// Replaces one word of `sentence` accepted by `eligible` with a typo that
    /// the spellchecker maps back to the original.
    fn with_typo(&mut self, sentence: &str, eligible: impl Fn(&str) -> bool) -> Option<String> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let candidates: Vec<usize> = (0..words.len()).filter(|&i| eligible(words[i])).collect();
        if candidates.is_empty() {
            return None;
        }
        let i = candidates[self.rng.gen_range(0..candidates.len())];
        let typo = self.typo_word(words[i])?;
        let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        out[i] = typo;
        Some(out.join(" "))
    }

    fn sentence(&mut self, family: Family) -> Result<String, CorpusError> {
        for _ in 0..MAX_ATTEMPTS {
            let candidate = match family {
                Family::Positive => Some(self.base_sentence(Base::Positive)),
                Family::Neutral => Some(self.base_sentence(Base::Neutral)),
                Family::Override => Some(self.base_sentence(Base::Override)),
                Family::FalsePositive => {
                    let p = self.pick(templates::PREFIXES);
                    let c = self.pick(templates::FALSE_POSITIVES);
                    Some(Self::join(&[p, c]))
                }
                Family::FalseNegative => {
                    let p = self.pick(templates::PREFIXES);
                    let c = self.pick(templates::FALSE_NEGATIVES);
                    Some(Self::join(&[p, c]))
                }
                Family::TypoTrigger => {
                    let s = self.base_sentence(Base::Positive);
                    self.with_typo(&s, |w| templates::TRIGGER_WORDS.contains(&w))
                }
                Family::Foreign => {
                    let s = self.base_sentence(Base::Positive);
                    Some(self.lexicon.to_foreign(&s))
                }
                Family::FillerTypo(base) => {
                    let s = self.base_sentence(base);
                    self.with_typo(&s, |w| w.len() >= 4 && !templates::PROTECTED_WORDS.contains(&w))
                }
            };
            if let Some(s) = candidate {
                if self.labeler.label(&s) == family.expected_weak_label() {
                    return Ok(s);
                }
            }
        }
        Err(CorpusError::TemplatePool(match family {
            Family::TypoTrigger => "typo'd trigger phrases",
            Family::FillerTypo(_) => "filler typos",
            _ => "sentences",
        }))
    }
}

/// Seeded bijective dictionary from every template word to a pronounceable
/// pseudo-word. Tokens keep Damerau-Levenshtein distance >= 3 from every other
/// vocabulary entry so single-edit typos stay unambiguous.
fn build_lexicon(rng: &mut ChaCha8Rng) -> Lexicon {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let english: BTreeSet<&str> = templates::all_sentences_words().collect();
    let mut taken: Vec<String> = english.iter().map(|s| s.to_string()).collect();
    let mut dictionary = BTreeMap::new();
    for word in &english {
        let token = loop {
            let syllables = rng.gen_range(3..=4);
            let mut t = String::new();
            for _ in 0..syllables {
                t.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                t.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
            }
            if taken.iter().all(|w| strsim::damerau_levenshtein(w, &t) >= 3) {
                break t;
            }
        };
        taken.push(token.clone());
        dictionary.insert(word.to_string(), token);
    }
    Lexicon::new(FOREIGN_LANGUAGE, dictionary)
}

fn validate(config: &CorpusConfig) -> Result<(), CorpusError> {
    let bad = |m: &str| Err(CorpusError::Infeasible(m.to_string()));
    for (name, f) in [
        ("non_english_fraction", config.non_english_fraction),
        ("planted_mislabel_fraction", config.planted_mislabel_fraction),
        ("typo_prone_fraction", config.typo_prone_fraction),
    ] {
        if !(0.0..=1.0).contains(&f) {
            return bad(&format!("{name} must lie in [0, 1]"));
        }
    }
    if config.n_train_posts == 0 || config.n_users == 0 {
        return bad("n_train_posts and n_users must be positive");
    }
    if config.countries.is_empty() || config.countries.iter().any(|c| c.weight < 0.0) {
        return bad("countries need non-negative weights");
    }
    if config.countries.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
        return bad("country weights sum to zero");
    }
    Ok(())
}

fn round_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Per-family row counts for the training set.
fn train_families(config: &CorpusConfig) -> Result<Vec<Family>, CorpusError> {
    let n = config.n_train_posts;
    let mislabels = round_count(config.planted_mislabel_fraction, n);
    let typo_prone = round_count(config.typo_prone_fraction, n);
    let foreign = if config.non_english_fraction > 0.0 { mislabels / 4 } else { 0 };
    let typo_trigger = (mislabels / 4).min(typo_prone);
    let rest = mislabels - foreign - typo_trigger;
    let false_pos = rest / 2;
    let false_neg = rest - false_pos;
    let filler = typo_prone - typo_trigger;
    let clean = n
        .checked_sub(mislabels + filler)
        .ok_or_else(|| CorpusError::Infeasible("planted mislabels plus typo-prone posts exceed n_train_posts".into()))?;

    let mut families = Vec::with_capacity(n);
    families.extend(std::iter::repeat_n(Family::Foreign, foreign));
    families.extend(std::iter::repeat_n(Family::TypoTrigger, typo_trigger));
    families.extend(std::iter::repeat_n(Family::FalsePositive, false_pos));
    families.extend(std::iter::repeat_n(Family::FalseNegative, false_neg));
    // correctly labeled rows: 35% positive, 8% override negatives, rest neutral
    let correct = clean + filler;
    let n_pos = round_count(0.35, correct);
    let n_override = round_count(0.08, correct);
    let mut bases: Vec<Base> = std::iter::repeat_n(Base::Positive, n_pos)
        .chain(std::iter::repeat_n(Base::Override, n_override))
        .chain(std::iter::repeat_n(Base::Neutral, correct - n_pos - n_override))
        .collect();
    // spread filler typos evenly over the correct bases
    let stride = correct.checked_div(filler).unwrap_or(0);
    for (i, b) in bases.drain(..).enumerate() {
        let typo = filler > 0 && i % stride.max(1) == 0 && i / stride.max(1) < filler;
        families.push(if typo {
            Family::FillerTypo(b)
        } else {
            match b {
                Base::Positive => Family::Positive,
                Base::Neutral => Family::Neutral,
                Base::Override => Family::Override,
            }
        });
    }
    Ok(families)
}

fn test_families(config: &CorpusConfig) -> Vec<Family> {
    let n = config.n_test_posts;
    let foreign = round_count(config.non_english_fraction, n);
    let english = n - foreign;
    let pos = round_count(0.40, english);
    let ovr = round_count(0.08, english);
    let fp = round_count(0.06, english);
    let fneg = round_count(0.06, english);
    let neutral = english - pos - ovr - fp - fneg;
    let mut families = Vec::with_capacity(n);
    families.extend(std::iter::repeat_n(Family::Foreign, foreign));
    families.extend(std::iter::repeat_n(Family::Positive, pos));
    families.extend(std::iter::repeat_n(Family::Override, ovr));
    families.extend(std::iter::repeat_n(Family::FalsePositive, fp));
    families.extend(std::iter::repeat_n(Family::FalseNegative, fneg));
    families.extend(std::iter::repeat_n(Family::Neutral, neutral));
    families
}

fn str_col(v: Vec<String>) -> Column {
    Column::Str(v)
}

/// Generates the corpus. A pure function of `config`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<CorpusBundle, CorpusError> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lexicon = build_lexicon(&mut rng);
    let mut gen = Generator {
        rng,
        lexicon,
        labeler: WeakLabeler::listing_default(),
        config,
    };

    // users
    let total_weight: f64 = config.countries.iter().map(|c| c.weight).sum();
    let mut user_ids = Vec::with_capacity(config.n_users);
    let mut countries = Vec::with_capacity(config.n_users);
    for i in 0..config.n_users {
        let mut x = gen.rng.gen::<f64>() * total_weight;
        let mut code = &config.countries[config.countries.len() - 1].code;
        for c in &config.countries {
            if x < c.weight {
                code = &c.code;
                break;
            }
            x -= c.weight;
        }
        user_ids.push(format!("u{:04}", i + 1));
        countries.push(code.clone());
    }
    let foreign_authors: Vec<usize> = (0..config.n_users)
        .filter(|&i| FOREIGN_AUTHOR_COUNTRIES.contains(&countries[i].as_str()))
        .collect();

    // train posts
    let mut families = train_families(gen.config)?;
    families.shuffle(&mut gen.rng);
    if families.contains(&Family::Foreign) && foreign_authors.is_empty() {
        return Err(CorpusError::Infeasible("foreign posts need at least one US or CAN user".into()));
    }
    let mut train = PostColumns::default();
    for (i, fam) in families.iter().enumerate() {
        let text = gen.sentence(*fam)?;
        let author = if *fam == Family::Foreign {
            foreign_authors[gen.rng.gen_range(0..foreign_authors.len())]
        } else {
            gen.rng.gen_range(0..config.n_users)
        };
        train.push(format!("p{:05}", i + 1), &user_ids[author], text, *fam);
    }

    // test posts
    let mut families = test_families(config);
    families.shuffle(&mut gen.rng);
    let mut test = PostColumns::default();
    for (i, fam) in families.iter().enumerate() {
        let text = gen.sentence(*fam)?;
        let author = gen.rng.gen_range(0..config.n_users);
        test.push(format!("q{:05}", i + 1), &user_ids[author], text, *fam);
    }
    let buckets = length_buckets(&test.text);

    let users = Relation::new(
        user_ids.iter().map(|u| RowId::source("users", u)).collect(),
        vec![
            ("user_id".into(), str_col(user_ids.clone())),
            ("country".into(), str_col(countries)),
        ],
    )?;
    let train_posts = Relation::new(
        train.ids.iter().map(|p| RowId::source("train_posts", p)).collect(),
        vec![
            ("post_id".into(), str_col(train.ids)),
            ("user_id".into(), str_col(train.users)),
            ("post_text".into(), str_col(train.text)),
            ("language".into(), str_col(train.language)),
            ("true_label".into(), Column::Int(train.truth)),
        ],
    )?;
    let test_posts = Relation::new(
        test.ids.iter().map(|p| RowId::source("test_posts", p)).collect(),
        vec![
            ("post_id".into(), str_col(test.ids)),
            ("user_id".into(), str_col(test.users)),
            ("post_text".into(), str_col(test.text)),
            ("language".into(), str_col(test.language)),
            ("length_bucket".into(), str_col(buckets)),
            ("signs_of_anhedonia".into(), Column::Int(test.truth)),
        ],
    )?;
    Ok(CorpusBundle {
        users,
        train_posts,
        test_posts,
        lexicon: gen.lexicon,
    })
}

#[derive(Default)]
struct PostColumns {
    ids: Vec<String>,
    users: Vec<String>,
    text: Vec<String>,
    language: Vec<String>,
    truth: Vec<i64>,
}

impl PostColumns {
    fn push(&mut self, id: String, user: &str, text: String, family: Family) {
        self.ids.push(id);
        self.users.push(user.to_string());
        self.text.push(text);
        self.language.push(if family == Family::Foreign { FOREIGN_LANGUAGE } else { "en" }.to_string());
        self.truth.push(i64::from(family.truth()));
    }
}

/// Terciles of character length; ties broken by row position.
fn length_buckets(texts: &[String]) -> Vec<String> {
    let n = texts.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (texts[i].chars().count(), i));
    let mut out = vec![String::new(); n];
    for (rank, i) in order.into_iter().enumerate() {
        out[i] = if rank * 3 < n {
            "short"
        } else if rank * 3 < 2 * n {
            "medium"
        } else {
            "long"
        }
        .to_string();
    }
    out
}

/// Writes `users.csv`, `train_posts.csv`, `test_posts.csv` and the
/// `lexicon.json` the translate/spellcheck services read.
pub fn export_corpus(bundle: &CorpusBundle, dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (name, rel) in [
        (USERS_FILE, &bundle.users),
        (TRAIN_FILE, &bundle.train_posts),
        (TEST_FILE, &bundle.test_posts),
    ] {
        let path = dir.join(name);
        let mut buf = Vec::new();
        rel.write_csv(&mut buf)?;
        fs::write(&path, buf).map_err(io(&path))?;
        written.push(path);
    }
    let path = dir.join(LEXICON_FILE);
    let json = serde_json::to_string_pretty(&bundle.lexicon)?;
    fs::write(&path, json).map_err(io(&path))?;
    written.push(path);
    Ok(written)
}

/// The raw input files a pipeline reads, keyed by file name, plus the lexicon
/// backing the translate and spellcheck services.
#[derive(Debug, Clone)]
pub struct Dataset {
    files: BTreeMap<String, Arc<[u8]>>,
    digests: BTreeMap<String, u64>,
    lexicon: Arc<Lexicon>,
}

impl Dataset {
    pub fn from_bundle(bundle: &CorpusBundle) -> Dataset {
        let mut ds = Dataset {
            files: BTreeMap::new(),
            digests: BTreeMap::new(),
            lexicon: Arc::new(bundle.lexicon.clone()),
        };
        for (name, rel) in [
            (USERS_FILE, &bundle.users),
            (TRAIN_FILE, &bundle.train_posts),
            (TEST_FILE, &bundle.test_posts),
        ] {
            ds = ds.with_table(name, rel);
        }
        ds
    }

    /// Loads every `*.csv` in `dir` and, if present, `lexicon.json`.
    pub fn load(dir: &Path) -> Result<Dataset, CorpusError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };
        let mut ds = Dataset {
            files: BTreeMap::new(),
            digests: BTreeMap::new(),
            lexicon: Arc::new(Lexicon::default()),
        };
        for entry in fs::read_dir(dir).map_err(io(dir))? {
            let path = entry.map_err(io(dir))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("csv") {
                let bytes = fs::read(&path).map_err(io(&path))?;
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                ds.insert(name, bytes);
            }
        }
        let lex_path = dir.join(LEXICON_FILE);
        if lex_path.exists() {
            let text = fs::read_to_string(&lex_path).map_err(io(&lex_path))?;
            ds.lexicon = Arc::new(Lexicon::from_json(&text)?);
        }
        Ok(ds)
    }

    fn insert(&mut self, name: String, bytes: Vec<u8>) {
        self.digests.insert(name.clone(), Fingerprint::of_bytes(&bytes).0);
        self.files.insert(name, bytes.into());
    }

    /// A copy of the dataset with `name` replaced by `rel`.
    pub fn with_table(&self, name: &str, rel: &Relation) -> Dataset {
        let mut buf = Vec::new();
        rel.write_csv(&mut buf).expect("writing csv to memory");
        let mut out = self.clone();
        out.insert(name.to_string(), buf);
        out
    }

    pub fn digest(&self, path: &str) -> Option<u64> {
        self.digests.get(file_name(path)).copied()
    }

    pub fn table(&self, path: &str, id_column: &str) -> Result<Relation, CorpusError> {
        let bytes = self
            .files
            .get(file_name(path))
            .ok_or_else(|| CorpusError::MissingTable(path.to_string()))?;
        Ok(Relation::read_csv(&bytes[..], table_tag(path), id_column)?)
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn file_names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }
}
