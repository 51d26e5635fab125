//! Training data generation: question templates over triples, a seeded
//! question stream, paraphrase pair loading, and the word vocabulary.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Triple};
use crate::seed::mix2;

/// Splits text into lowercase word tokens. Dashes and whitespace separate;
/// an apostrophe glues to the letters after it ("churchill's" -> "churchill",
/// "'s"); any other punctuation becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = lower.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if c == '\'' && chars.peek().is_some_and(|n| n.is_alphanumeric()) {
                cur.push('\'');
            } else if !c.is_whitespace() && c != '-' {
                out.push(c.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PatternTok {
    Lit(&'static str),
    /// The entity kept in the question (the side not being asked about).
    Ent,
    /// The relationship's rendered name.
    Rel,
}

/// Which side of the triple the question asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuestionedSlot {
    Left,
    Right,
}

/// Restriction on which relationships a pattern accepts. `In`/`On` patterns
/// only fire on relationships whose raw name ends in `-in.r` / `-on.r`; the
/// trailing particle is then folded into the question word and dropped from
/// the rendered relationship.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelConstraint {
    None,
    In,
    On,
}

#[derive(Debug)]
pub struct QuestionPattern {
    pub id: u8,
    tokens: &'static [PatternTok],
    pub asked: QuestionedSlot,
    pub constraint: RelConstraint,
}

use PatternTok::{Ent, Lit, Rel};
use QuestionedSlot::{Left, Right};

macro_rules! pat {
    ($id:expr, $asked:expr, $cons:expr, [$($tok:expr),+]) => {
        QuestionPattern { id: $id, tokens: &[$($tok),+], asked: $asked, constraint: $cons }
    };
}

static PATTERNS: [QuestionPattern; 16] = [
    pat!(1, Left, RelConstraint::None, [Lit("who"), Rel, Ent, Lit("?")]),
    pat!(2, Left, RelConstraint::None, [Lit("what"), Rel, Ent, Lit("?")]),
    pat!(3, Right, RelConstraint::None, [Lit("who"), Lit("does"), Ent, Rel, Lit("?")]),
    pat!(4, Right, RelConstraint::None, [Lit("what"), Lit("does"), Ent, Rel, Lit("?")]),
    pat!(5, Left, RelConstraint::None, [Lit("what"), Lit("is"), Lit("the"), Rel, Lit("of"), Ent, Lit("?")]),
    pat!(6, Left, RelConstraint::None, [Lit("who"), Lit("is"), Lit("the"), Rel, Lit("of"), Ent, Lit("?")]),
    pat!(7, Right, RelConstraint::None, [Lit("what"), Lit("is"), Rel, Lit("by"), Ent, Lit("?")]),
    pat!(8, Left, RelConstraint::None, [Lit("who"), Lit("is"), Ent, Lit("'s"), Rel, Lit("?")]),
    pat!(9, Left, RelConstraint::None, [Lit("what"), Lit("is"), Ent, Lit("'s"), Rel, Lit("?")]),
    pat!(10, Right, RelConstraint::None, [Lit("who"), Lit("is"), Rel, Lit("by"), Ent, Lit("?")]),
    pat!(11, Right, RelConstraint::In, [Lit("when"), Lit("did"), Ent, Rel, Lit("?")]),
    pat!(12, Right, RelConstraint::On, [Lit("when"), Lit("did"), Ent, Rel, Lit("?")]),
    pat!(13, Right, RelConstraint::In, [Lit("when"), Lit("was"), Ent, Rel, Lit("?")]),
    pat!(14, Right, RelConstraint::On, [Lit("when"), Lit("was"), Ent, Rel, Lit("?")]),
    pat!(15, Right, RelConstraint::In, [Lit("where"), Lit("was"), Ent, Rel, Lit("?")]),
    pat!(16, Right, RelConstraint::In, [Lit("where"), Lit("did"), Ent, Rel, Lit("?")]),
];

/// All sixteen question patterns, in id order.
pub fn patterns() -> &'static [QuestionPattern] {
    &PATTERNS
}

impl QuestionPattern {
    pub fn applies_to(&self, kb: &KnowledgeBase, t: &Triple) -> bool {
        let name = kb.symbol_name(t.rel);
        match self.constraint {
            RelConstraint::None => true,
            RelConstraint::In => name.ends_with("-in.r"),
            RelConstraint::On => name.ends_with("-on.r"),
        }
    }
}

/// Patterns whose constraint matches the triple's relationship. Never empty:
/// the ten unconstrained patterns always apply.
pub fn applicable_patterns(kb: &KnowledgeBase, t: &Triple) -> Vec<&'static QuestionPattern> {
    PATTERNS.iter().filter(|p| p.applies_to(kb, t)).collect()
}

/// One training question with the triple that answers it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAPair {
    pub question: Vec<String>,
    pub answer: Triple,
}

/// Renders one question from a triple using a pattern. The asked side is
/// left out; the other entity and the relationship are spelled out in
/// rendered form. Constrained patterns drop the relationship's final word
/// (the particle already implied by the question word).
pub fn generate_question(
    kb: &KnowledgeBase,
    t: &Triple,
    pattern: &QuestionPattern,
) -> Result<QAPair> {
    if !pattern.applies_to(kb, t) {
        return Err(Error::InvalidConfig(format!(
            "pattern {} does not apply to relationship {}",
            pattern.id,
            kb.symbol_name(t.rel)
        )));
    }
    let named = match pattern.asked {
        Left => t.right,
        Right => t.left,
    };
    let mut question = Vec::new();
    for tok in pattern.tokens {
        match tok {
            Lit(s) => question.push((*s).to_string()),
            Ent => question.extend(kb.rendered_name(named).split(' ').map(String::from)),
            Rel => {
                let mut words: Vec<String> =
                    kb.rendered_name(t.rel).split(' ').map(String::from).collect();
                if pattern.constraint != RelConstraint::None {
                    words.pop();
                }
                question.extend(words);
            }
        }
    }
    Ok(QAPair { question, answer: *t })
}

/// Lazily generated question corpus. Sample `i` is a pure function of
/// `(seed, i)`: triple uniform over the store, then pattern uniform over the
/// patterns applicable to that triple. Nothing is materialized.
pub struct QuestionStream<'a> {
    kb: &'a KnowledgeBase,
    seed: u64,
    count: u64,
}

/// Default corpus size used when none is given: sixteen questions per triple.
pub fn default_question_count(kb: &KnowledgeBase) -> u64 {
    16 * kb.len() as u64
}

impl<'a> QuestionStream<'a> {
    pub fn new(kb: &'a KnowledgeBase, seed: u64, count: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyInput("question stream with count 0".into()));
        }
        Ok(QuestionStream { kb, seed, count })
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sample `i`, plus the id of the pattern that produced it.
    pub fn sample_detailed(&self, i: u64) -> (QAPair, u8) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix2(self.seed, i));
        let t = &self.kb.triples()[rng.random_range(0..self.kb.len())];
        let applicable = applicable_patterns(self.kb, t);
        let pattern = applicable[rng.random_range(0..applicable.len())];
        let pair = generate_question(self.kb, t, pattern)
            .expect("applicable pattern renders");
        (pair, pattern.id)
    }

    pub fn sample_at(&self, i: u64) -> QAPair {
        self.sample_detailed(i).0
    }

    pub fn iter(&self) -> impl Iterator<Item = QAPair> + '_ {
        (0..self.count).map(move |i| self.sample_at(i))
    }
}

/// Two wordings of the same underlying question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaphrasePair {
    pub first: Vec<String>,
    pub second: Vec<String>,
}

/// Loads paraphrase pairs, one `text<TAB>text` per line, tokenizing both
/// sides. An empty file yields an empty list; paraphrases are optional.
pub fn load_paraphrases(path: impl AsRef<Path>) -> Result<Vec<ParaphrasePair>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_paraphrases(std::io::BufReader::new(file), path)
}

pub fn parse_paraphrases(reader: impl BufRead, origin: impl AsRef<Path>) -> Result<Vec<ParaphrasePair>> {
    let origin = origin.as_ref();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected 2 tab-separated fields, got {}", fields.len()),
            ));
        }
        let first = tokenize(fields[0]);
        let second = tokenize(fields[1]);
        if first.is_empty() || second.is_empty() {
            return Err(Error::parse(origin, lineno, "paraphrase side has no tokens"));
        }
        out.push(ParaphrasePair { first, second });
    }
    Ok(out)
}

/// Word table mapping tokens to dense indices in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Debug, Default)]
pub struct VocabBuilder {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl VocabBuilder {
    pub fn add_tokens(&mut self, tokens: &[String]) {
        for tok in tokens {
            if !self.index.contains_key(tok) {
                self.index.insert(tok.clone(), self.words.len() as u32);
                self.words.push(tok.clone());
            }
        }
    }

    pub fn finish(self) -> Result<Vocabulary> {
        if self.words.is_empty() {
            return Err(Error::EmptyInput("vocabulary has no words".into()));
        }
        Ok(Vocabulary { words: self.words, index: self.index })
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from an ordered word list (the serialized form).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() {
                return Err(Error::InvalidConfig(format!("empty word at index {i}")));
            }
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate word {w:?}")));
            }
        }
        if words.is_empty() {
            return Err(Error::EmptyInput("vocabulary has no words".into()));
        }
        Ok(Vocabulary { words, index })
    }

    pub fn lookup(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, idx: u32) -> &str {
        &self.words[idx as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
