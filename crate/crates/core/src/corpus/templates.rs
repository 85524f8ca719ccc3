//! Sentence template families. Every family is written against the default
//! weak-labeling patterns; the generator re-checks each sentence anyway.

pub const PREFIXES: &[&str] = &[
    "",
    "honestly",
    "lately",
    "these days",
    "since the winter",
    "for weeks now",
    "again",
    "to be fair",
];

/// Matched by the default positive patterns.
pub const POSITIVE_TRIGGERS: &[&str] = &[
    "i have zero motivation",
    "no motivation",
    "i lost interest",
    "lost motivation",
    "there is 0 motivation",
    "i lost motivation",
    "zero motivation left",
];

pub const POSITIVE_TAILS: &[&str] = &[
    "",
    "for anything at all",
    "in my old hobbies",
    "to see my friends",
    "and i stay in bed all day",
    "at work and at home",
    "even for music i used to love",
    "and nothing feels worth it",
    "to cook or clean",
];

pub const NEUTRAL_CORES: &[&str] = &[
    "went hiking with friends",
    "tried a new recipe",
    "watched the game with my brother",
    "finished a long book",
    "started a new job",
    "planted tomatoes in the garden",
    "went for a morning run",
    "visited my parents",
    "played guitar all evening",
    "cleaned the whole apartment",
    "baked bread for the neighbors",
    "signed up for a pottery class",
];

pub const NEUTRAL_TAILS: &[&str] = &[
    "",
    "and had a great day",
    "and it felt good",
    "this weekend",
    "and loved every minute",
    "with lots of energy",
    "and i feel motivated",
];

/// Contain a positive trigger and the negative override: correctly labeled 0.
pub const OVERRIDE_NEGATIVES: &[&str] = &[
    "i lost interest for a while but i recover from zero interest step by step",
    "i lost motivation last year and now i recover from no interest with therapy",
    "after i lost interest in running i recover from 0 interest by joining a club",
];

/// Match a positive pattern although the author is fine: weak label 1, truth 0.
pub const FALSE_POSITIVES: &[&str] = &[
    "i never lost motivation even in hard times",
    "no motivation problems here i feel great",
    "glad i never lost interest in painting",
    "zero motivation issues this month feeling strong",
];

/// Signs of anhedonia the default patterns miss: weak label 0, truth 1.
pub const FALSE_NEGATIVES: &[&str] = &[
    "i have lost all interest in things",
    "zero drive to do anything",
    "i cannot find any motivation anymore",
    "nothing interests me and i feel empty",
    "no energy and no will to get up",
];

/// Words a typo may target to break a positive match.
pub const TRIGGER_WORDS: &[&str] = &["motivation", "interest", "lost"];

/// Words filler typos must not touch.
pub const PROTECTED_WORDS: &[&str] = &[
    "motivation",
    "interest",
    "lost",
    "zero",
    "no",
    "0",
    "recover",
    "from",
];

pub fn all_sentences_words() -> impl Iterator<Item = &'static str> {
    PREFIXES
        .iter()
        .chain(POSITIVE_TRIGGERS)
        .chain(POSITIVE_TAILS)
        .chain(NEUTRAL_CORES)
        .chain(NEUTRAL_TAILS)
        .chain(OVERRIDE_NEGATIVES)
        .chain(FALSE_POSITIVES)
        .chain(FALSE_NEGATIVES)
        .flat_map(|s| s.split_whitespace())
}
