//! Text encoders: token embeddings, a bidirectional tanh recurrent
//! encoder for whole sequences, and mean-pooled chunk embeddings.

use grounder_autodiff::{Tape, Var};

use crate::parser::{LanguageSceneGraph, SubExpression, TokenId};
use crate::weights::{EncoderParams, RnnParams};

fn run_direction(
    tape: &mut Tape<'_>,
    rnn: &RnnParams,
    inputs: impl Iterator<Item = Var>,
) -> Option<Var> {
    let bias = tape.param(rnn.bias);
    let mut hidden: Option<Var> = None;
    for x in inputs {
        let proj = tape.matvec(rnn.input, x);
        let pre = match hidden {
            Some(h) => {
                let rec = tape.matvec(rnn.recurrent, h);
                tape.sum(&[proj, rec, bias])
            }
            None => tape.add(proj, bias),
        };
        hidden = Some(tape.tanh(pre));
    }
    hidden
}

pub fn embed_tokens(tape: &mut Tape<'_>, params: &EncoderParams, tokens: &[TokenId]) -> Vec<Var> {
    tokens
        .iter()
        .map(|&t| tape.row(params.token_embedding, t))
        .collect()
}

/// Final forward and backward hidden states, concatenated (`2H` values).
pub fn encode_expression(tape: &mut Tape<'_>, params: &EncoderParams, tokens: &[TokenId]) -> Var {
    assert!(!tokens.is_empty(), "cannot encode an empty token sequence");
    let embedded = embed_tokens(tape, params, tokens);
    let fwd = run_direction(tape, &params.forward, embedded.iter().copied()).expect("non-empty");
    let bwd =
        run_direction(tape, &params.backward, embedded.iter().rev().copied()).expect("non-empty");
    tape.concat(&[fwd, bwd])
}

/// Mean of the chunk's token embeddings (`D_t` values).
pub fn encode_chunk(tape: &mut Tape<'_>, params: &EncoderParams, tokens: &[TokenId]) -> Var {
    assert!(!tokens.is_empty(), "cannot encode an empty chunk");
    let embedded = embed_tokens(tape, params, tokens);
    tape.mean(&embedded)
}

/// Encoding of the visited sub-expressions: their tokens, concatenated in
/// processing order, through the sequence encoder.
pub fn encode_visited(
    tape: &mut Tape<'_>,
    params: &EncoderParams,
    visited: &[SubExpression],
) -> Var {
    let tokens: Vec<TokenId> = visited
        .iter()
        .flat_map(|s| s.tokens.iter().copied())
        .collect();
    encode_expression(tape, params, &tokens)
}

/// Tape handles for the text side of one expression.
#[derive(Debug, Clone)]
pub struct LanguageEncoding {
    pub expression: Var,
    pub chunks: Vec<Var>,
}

impl LanguageEncoding {
    /// `(γ1, γ2)` of a sub-expression; identical for single-chunk clauses.
    pub fn gammas(&self, sub: &SubExpression) -> (Var, Var) {
        (self.chunks[sub.chunks.0], self.chunks[sub.chunks.1])
    }
}

pub fn encode_language(
    tape: &mut Tape<'_>,
    params: &EncoderParams,
    graph: &LanguageSceneGraph,
) -> LanguageEncoding {
    let expression = encode_expression(tape, params, &graph.tokens);
    let chunks = graph
        .chunks
        .iter()
        .map(|c| encode_chunk(tape, params, &c.tokens))
        .collect();
    LanguageEncoding { expression, chunks }
}
