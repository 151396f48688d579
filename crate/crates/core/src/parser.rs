//! Grammar-constrained parsing of referring expressions.
//!
//! ```text
//! expr   := chunk | clause ("and" clause)*
//! clause := chunk RELATION chunk
//! chunk  := COLOR* NOUN
//! ```
//!
//! Every clause becomes one sub-expression; a lone chunk becomes a single
//! sub-expression whose two chunk slots point at the same chunk.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{GrammarConfig, Order};
use crate::error::{Error, Result};

pub type TokenId = usize;

pub const UNK: TokenId = 0;
const UNK_TEXT: &str = "<unk>";
const AND: &str = "and";

/// Spatial predicates available to the expression grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    LeftOf,
    RightOf,
    Above,
    Below,
    Touching,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::LeftOf,
        RelationKind::RightOf,
        RelationKind::Above,
        RelationKind::Below,
        RelationKind::Touching,
    ];

    pub fn phrase(self) -> &'static str {
        match self {
            RelationKind::LeftOf => "left of",
            RelationKind::RightOf => "right of",
            RelationKind::Above => "above",
            RelationKind::Below => "below",
            RelationKind::Touching => "touching",
        }
    }

    pub fn from_phrase(phrase: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.phrase() == phrase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Unknown,
    And,
    Color(usize),
    Noun(usize),
    RelationWord,
}

/// Token table derived from the grammar vocabularies.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    words: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, TokenId>,
    relations: Vec<(RelationKind, Vec<TokenId>)>,
}

impl Vocabulary {
    pub fn new(grammar: &GrammarConfig) -> Result<Self> {
        let mut vocab = Vocabulary {
            words: Vec::new(),
            kinds: Vec::new(),
            index: HashMap::new(),
            relations: Vec::new(),
        };
        vocab.insert(UNK_TEXT, TokenKind::Unknown)?;
        vocab.insert(AND, TokenKind::And)?;
        for phrase in &grammar.relations {
            let kind = RelationKind::from_phrase(phrase)
                .ok_or_else(|| Error::Config(format!("unknown relation `{phrase}`")))?;
            let mut ids = Vec::new();
            for word in phrase.split_whitespace() {
                let id = match vocab.index.get(word) {
                    Some(&id) if vocab.kinds[id] == TokenKind::RelationWord => id,
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "relation word `{word}` clashes with another vocabulary"
                        )))
                    }
                    None => vocab.insert(word, TokenKind::RelationWord)?,
                };
                ids.push(id);
            }
            if vocab.relations.iter().any(|(k, _)| *k == kind) {
                return Err(Error::Config(format!("relation `{phrase}` listed twice")));
            }
            vocab.relations.push((kind, ids));
        }
        for (i, color) in grammar.colors.iter().enumerate() {
            vocab.insert(color, TokenKind::Color(i))?;
        }
        for (i, noun) in grammar.nouns.iter().enumerate() {
            vocab.insert(noun, TokenKind::Noun(i))?;
        }
        if grammar.nouns.len() < 2 || grammar.colors.len() < 2 || grammar.relations.is_empty() {
            return Err(Error::Config(
                "grammar needs >= 2 nouns, >= 2 colors and >= 1 relation".into(),
            ));
        }
        // Longest phrases first so "left of" is never cut short by a prefix.
        vocab
            .relations
            .sort_by_key(|(_, ids)| std::cmp::Reverse(ids.len()));
        Ok(vocab)
    }

    fn insert(&mut self, word: &str, kind: TokenKind) -> Result<TokenId> {
        let word = word.to_lowercase();
        if word.is_empty() || word.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid vocabulary word `{word}`")));
        }
        if self.index.contains_key(&word) {
            return Err(Error::Config(format!(
                "word `{word}` appears twice in the grammar"
            )));
        }
        let id = self.words.len();
        self.words.push(word.clone());
        self.kinds.push(kind);
        self.index.insert(word, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: TokenId) -> &str {
        &self.words[id]
    }

    pub fn kind(&self, id: TokenId) -> TokenKind {
        self.kinds.get(id).copied().unwrap_or(TokenKind::Unknown)
    }

    pub fn noun_id(&self, category: usize) -> TokenId {
        self.kinds
            .iter()
            .position(|k| *k == TokenKind::Noun(category))
            .expect("category in vocabulary")
    }

    pub fn color_id(&self, color: usize) -> TokenId {
        self.kinds
            .iter()
            .position(|k| *k == TokenKind::Color(color))
            .expect("color in vocabulary")
    }

    pub fn relation_tokens(&self, kind: RelationKind) -> Option<&[TokenId]> {
        self.relations
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, ids)| ids.as_slice())
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationKind> + '_ {
        self.relations.iter().map(|(k, _)| *k)
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Whitespace split with case folding; unknown words map to [`UNK`].
pub fn tokenize(expression: &str, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    let tokens: Vec<TokenId> = expression
        .split_whitespace()
        .map(|w| vocab.id(&w.to_lowercase()))
        .collect();
    if tokens.is_empty() {
        return Err(Error::Parse {
            position: 0,
            message: "empty expression".into(),
        });
    }
    Ok(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounChunk {
    pub tokens: Vec<TokenId>,
    pub category: usize,
    pub colors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub subject: usize,
    pub kind: RelationKind,
    pub tokens: Vec<TokenId>,
    pub object: usize,
}

/// One clause: the chunk pair guiding a reasoning step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubExpression {
    /// Position of the clause in the parsed expression.
    pub clause: usize,
    /// Chunk indices; both equal for a single-chunk expression.
    pub chunks: (usize, usize),
    pub tokens: Vec<TokenId>,
}

impl SubExpression {
    pub fn is_single_chunk(&self) -> bool {
        self.chunks.0 == self.chunks.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageSceneGraph {
    pub tokens: Vec<TokenId>,
    pub chunks: Vec<NounChunk>,
    pub relations: Vec<Relation>,
    pub sub_expressions: Vec<SubExpression>,
}

impl LanguageSceneGraph {
    pub fn num_sub_expressions(&self) -> usize {
        self.sub_expressions.len()
    }

    /// Indented text rendering for debugging.
    pub fn dump(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "expression: {}", vocab.render(&self.tokens));
        let _ = writeln!(out, "chunks: {}", self.chunks.len());
        for (i, c) in self.chunks.iter().enumerate() {
            let _ = writeln!(out, "  [{i}] {}", vocab.render(&c.tokens));
        }
        let _ = writeln!(out, "relations: {}", self.relations.len());
        for r in &self.relations {
            let _ = writeln!(
                out,
                "  [{}] --{}--> [{}]",
                r.subject,
                vocab.render(&r.tokens),
                r.object
            );
        }
        let _ = writeln!(out, "sub-expressions: {}", self.sub_expressions.len());
        for s in &self.sub_expressions {
            let _ = writeln!(
                out,
                "  #{} chunks=({}, {}) \"{}\"",
                s.clause,
                s.chunks.0,
                s.chunks.1,
                vocab.render(&s.tokens)
            );
        }
        out
    }
}

struct Cursor<'a> {
    tokens: &'a [TokenId],
    vocab: &'a Vocabulary,
    pos: usize,
}

impl Cursor<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            position: self.pos,
            message: message.into(),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn describe(&self) -> String {
        match self.tokens.get(self.pos) {
            Some(&t) if t == UNK => "unknown word".into(),
            Some(&t) => format!("`{}`", self.vocab.word(t)),
            None => "end of expression".into(),
        }
    }

    fn chunk(&mut self) -> Result<NounChunk> {
        let start = self.pos;
        let mut colors = Vec::new();
        while let Some(&t) = self.tokens.get(self.pos) {
            match self.vocab.kind(t) {
                TokenKind::Color(c) => {
                    colors.push(c);
                    self.pos += 1;
                }
                TokenKind::Noun(n) => {
                    self.pos += 1;
                    return Ok(NounChunk {
                        tokens: self.tokens[start..self.pos].to_vec(),
                        category: n,
                        colors,
                    });
                }
                _ => break,
            }
        }
        Err(self.error(format!("expected a noun, found {}", self.describe())))
    }

    fn relation(&mut self) -> Result<(RelationKind, Vec<TokenId>)> {
        let rest = &self.tokens[self.pos.min(self.tokens.len())..];
        for (kind, ids) in &self.vocab.relations {
            if rest.starts_with(ids) {
                self.pos += ids.len();
                return Ok((*kind, ids.clone()));
            }
        }
        Err(self.error(format!("expected a relation, found {}", self.describe())))
    }
}

pub fn parse(tokens: &[TokenId], vocab: &Vocabulary) -> Result<LanguageSceneGraph> {
    if tokens.is_empty() {
        return Err(Error::Parse {
            position: 0,
            message: "empty expression".into(),
        });
    }
    let mut cur = Cursor {
        tokens,
        vocab,
        pos: 0,
    };
    let mut graph = LanguageSceneGraph {
        tokens: tokens.to_vec(),
        chunks: Vec::new(),
        relations: Vec::new(),
        sub_expressions: Vec::new(),
    };

    let first = cur.chunk()?;
    graph.chunks.push(first);
    if cur.at_end() {
        graph.sub_expressions.push(SubExpression {
            clause: 0,
            chunks: (0, 0),
            tokens: tokens.to_vec(),
        });
        return Ok(graph);
    }

    let mut clause_start = 0;
    loop {
        let subject = graph.chunks.len() - 1;
        let (kind, rel_tokens) = cur.relation()?;
        let object_chunk = cur.chunk()?;
        graph.chunks.push(object_chunk);
        let object = graph.chunks.len() - 1;
        graph.relations.push(Relation {
            subject,
            kind,
            tokens: rel_tokens,
            object,
        });
        graph.sub_expressions.push(SubExpression {
            clause: graph.sub_expressions.len(),
            chunks: (subject, object),
            tokens: tokens[clause_start..cur.pos].to_vec(),
        });
        if cur.at_end() {
            break;
        }
        match vocab.kind(tokens[cur.pos]) {
            TokenKind::And => cur.pos += 1,
            _ => return Err(cur.error(format!("expected `and`, found {}", cur.describe()))),
        }
        clause_start = cur.pos;
        let subject_chunk = cur.chunk()?;
        graph.chunks.push(subject_chunk);
    }
    Ok(graph)
}

/// Sub-expressions in processing order.
pub fn order_sub_expressions(graph: &LanguageSceneGraph, order: Order) -> Vec<SubExpression> {
    let mut subs = graph.sub_expressions.clone();
    if order == Order::Backward {
        subs.reverse();
    }
    subs
}
