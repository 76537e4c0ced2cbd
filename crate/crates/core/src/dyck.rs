//! Bounded-depth Dyck languages.
//!
//! Token ids are 1-indexed: for bracket type `t ∈ 1..=k` the open bracket is
//! `2t − 1` and the close bracket is `2t`. The start token `2k + 1` is never
//! stored in a [`DyckPrefix`]; it is prepended when a model consumes one.
//! Depth always means the post-token depth: `#open − #closed` over the tokens
//! up to and including the current one.

use crate::error::{capacity, domain, input, Result};
use crate::numerics::rng::Rng;
use serde::{Deserialize, Serialize};
use std::ops::RangeInclusive;

/// Parameters `(k, D, N, q)` of the prefix distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarParams {
    pub k: usize,
    #[serde(rename = "depth")]
    pub d: usize,
    #[serde(rename = "length")]
    pub n: usize,
    pub q: f64,
}

impl GrammarParams {
    pub fn new(k: usize, d: usize, n: usize, q: f64) -> Result<Self> {
        let p = GrammarParams { k, d, n, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.n == 0 {
            return input(format!("k, D, N must be positive: {self:?}"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return input(format!("q must lie in (0,1), got {}", self.q));
        }
        Ok(())
    }

    /// Vocabulary size without the start token.
    pub fn vocab(&self) -> usize {
        2 * self.k
    }

    pub fn start_token(&self) -> usize {
        2 * self.k + 1
    }

    pub fn with_length(&self, n: usize) -> Self {
        GrammarParams { n, ..*self }
    }
}

pub fn is_open(id: usize) -> bool {
    id % 2 == 1
}

/// Bracket type `⌈id/2⌉`.
pub fn bracket_type(id: usize) -> usize {
    id.div_ceil(2)
}

pub fn open_token(t: usize) -> usize {
    2 * t - 1
}

pub fn close_token(t: usize) -> usize {
    2 * t
}

/// `#open − #closed` after each token. Computed for any sequence.
pub fn depth_profile(tokens: &[usize]) -> Vec<i64> {
    let mut depth = 0i64;
    tokens
        .iter()
        .map(|&t| {
            depth += if is_open(t) { 1 } else { -1 };
            depth
        })
        .collect()
}

fn check_ids(tokens: &[usize], k: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t == 0 || t > 2 * k) {
        Some(t) => input(format!("token id {t} outside [1, {}]", 2 * k)),
        None => Ok(()),
    }
}

/// Membership in the prefix set of `Dyck_{k,D}`.
pub fn is_valid_prefix(tokens: &[usize], params: &GrammarParams) -> Result<bool> {
    check_ids(tokens, params.k)?;
    Ok(BracketStack::replay(tokens, params.d).is_some())
}

/// Open-bracket types of the unmatched opens, bottom first. Its length is the
/// current depth.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BracketStack {
    types: Vec<usize>,
}

impl BracketStack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replays `tokens`; `None` as soon as the sequence leaves the prefix set.
    pub fn replay(tokens: &[usize], max_depth: usize) -> Option<Self> {
        let mut s = Self::new();
        for &t in tokens {
            if !s.push(t, max_depth) {
                return None;
            }
        }
        Some(s)
    }

    /// Applies one token; false if it is not a valid continuation.
    pub fn push(&mut self, token: usize, max_depth: usize) -> bool {
        if is_open(token) {
            if self.types.len() == max_depth {
                return false;
            }
            self.types.push(bracket_type(token));
            true
        } else {
            match self.types.last() {
                Some(&t) if t == bracket_type(token) => {
                    self.types.pop();
                    true
                }
                _ => false,
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.types.len()
    }

    pub fn top(&self) -> Option<usize> {
        self.types.last().copied()
    }

    pub fn types(&self) -> &[usize] {
        &self.types
    }

    /// Def. 1 conditional distribution over the 2k tokens given this stack.
    pub fn next_distribution(&self, params: &GrammarParams) -> Vec<f64> {
        let k = params.k;
        let mut p = vec![0.0; 2 * k];
        match self.top() {
            None => {
                for t in 1..=k {
                    p[open_token(t) - 1] = 1.0 / k as f64;
                }
            }
            Some(top) if self.depth() == params.d => p[close_token(top) - 1] = 1.0,
            Some(top) => {
                for t in 1..=k {
                    p[open_token(t) - 1] = params.q / k as f64;
                }
                p[close_token(top) - 1] = 1.0 - params.q;
            }
        }
        p
    }
}

/// A valid prefix with its cached depth profile.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DyckPrefix {
    tokens: Vec<usize>,
    depths: Vec<usize>,
}

impl DyckPrefix {
    pub fn new(tokens: Vec<usize>, params: &GrammarParams) -> Result<Self> {
        if !is_valid_prefix(&tokens, params)? {
            return domain(format!("not a valid prefix for k={}, D={}: {tokens:?}", params.k, params.d));
        }
        Ok(Self::from_valid(tokens))
    }

    fn from_valid(tokens: Vec<usize>) -> Self {
        let depths = depth_profile(&tokens).into_iter().map(|d| d as usize).collect();
        DyckPrefix { tokens, depths }
    }

    pub fn empty() -> Self {
        DyckPrefix { tokens: vec![], depths: vec![] }
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn depths(&self) -> &[usize] {
        &self.depths
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depths.last().copied().unwrap_or(0)
    }

    pub fn stack(&self) -> BracketStack {
        BracketStack::replay(&self.tokens, usize::MAX).expect("validated at construction")
    }

    /// Type and depth of the top of the bracket stack.
    pub fn last_unmatched_open(&self) -> Option<(usize, usize)> {
        let s = self.stack();
        s.top().map(|t| (t, s.depth()))
    }

    /// All tokens but the last.
    pub fn without_last(&self) -> DyckPrefix {
        let n = self.len().saturating_sub(1);
        DyckPrefix {
            tokens: self.tokens[..n].to_vec(),
            depths: self.depths[..n].to_vec(),
        }
    }
}

pub fn next_token_distribution(prefix: &DyckPrefix, params: &GrammarParams) -> Result<Vec<f64>> {
    match BracketStack::replay(prefix.tokens(), params.d) {
        Some(s) if prefix.tokens().iter().all(|&t| t >= 1 && t <= 2 * params.k) => {
            Ok(s.next_distribution(params))
        }
        _ => domain("prefix is not valid under these grammar params"),
    }
}

pub fn last_unmatched_open(prefix: &DyckPrefix) -> Option<(usize, usize)> {
    prefix.last_unmatched_open()
}

/// Probability of `tokens` under the sequential sampler (product of conditionals).
pub fn prefix_probability(tokens: &[usize], params: &GrammarParams) -> f64 {
    let mut s = BracketStack::new();
    let mut p = 1.0;
    for &t in tokens {
        p *= s.next_distribution(params)[t - 1];
        if p == 0.0 || !s.push(t, params.d) {
            return 0.0;
        }
    }
    p
}

/// Samples a prefix of `params.n` tokens.
pub fn sample_prefix(params: &GrammarParams, rng: &mut Rng) -> DyckPrefix {
    sample_prefix_of_length(params, params.n, rng)
}

pub fn sample_prefix_of_length(params: &GrammarParams, len: usize, rng: &mut Rng) -> DyckPrefix {
    let mut s = BracketStack::new();
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let t = rng.categorical(&s.next_distribution(params)) + 1;
        s.push(t, params.d);
        tokens.push(t);
    }
    DyckPrefix::from_valid(tokens)
}

/// Samples prefixes of length N conditioned on ending at depth 0.
pub fn sample_balanced_prefix(params: &GrammarParams, rng: &mut Rng) -> Result<DyckPrefix> {
    if params.n % 2 == 1 {
        return domain("balanced prefixes need even length");
    }
    for _ in 0..1_000_000 {
        let p = sample_prefix(params, rng);
        if p.depth() == 0 {
            return Ok(p);
        }
    }
    capacity("balanced rejection sampling exhausted its budget")
}

const ENUMERATION_GUARD: f64 = 1e7;

/// Every valid prefix of length `params.n`, in lexicographic order.
pub fn enumerate_prefixes(params: &GrammarParams) -> Result<Vec<DyckPrefix>> {
    let estimate = (2.0 * params.k as f64).powi(params.n as i32);
    if estimate > ENUMERATION_GUARD {
        return capacity(format!("(2k)^N = {estimate:.3e} exceeds the enumeration guard"));
    }
    let mut out = Vec::new();
    let mut tokens = Vec::with_capacity(params.n);
    fn rec(params: &GrammarParams, s: &BracketStack, tokens: &mut Vec<usize>, out: &mut Vec<DyckPrefix>) {
        if tokens.len() == params.n {
            out.push(DyckPrefix::from_valid(tokens.clone()));
            return;
        }
        for t in 1..=2 * params.k {
            let mut next = s.clone();
            if next.push(t, params.d) {
                tokens.push(t);
                rec(params, &next, tokens, out);
                tokens.pop();
            }
        }
    }
    rec(params, &BracketStack::new(), &mut tokens, &mut out);
    Ok(out)
}

/// One last-bracket evaluation item: the model sees `input`, must predict `label`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalItem {
    pub input: DyckPrefix,
    pub label: usize,
}

impl EvalItem {
    /// The full prefix, label included.
    pub fn full_tokens(&self) -> Vec<usize> {
        let mut t = self.input.tokens().to_vec();
        t.push(self.label);
        t
    }
}

/// Prefixes ending in a closed bracket, drawn from the sampler conditioned on
/// that event. Lengths are uniform in `lengths` (which must start at 2 or more).
pub fn closing_eval_set(
    params: &GrammarParams,
    count: usize,
    lengths: RangeInclusive<usize>,
    rng: &mut Rng,
) -> Result<Vec<EvalItem>> {
    if *lengths.start() < 2 || lengths.is_empty() {
        return input("closing eval lengths must be at least 2");
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let len = rng.range_inclusive(*lengths.start(), *lengths.end());
        let body = sample_prefix_of_length(params, len - 1, rng);
        let s = body.stack();
        let Some(top) = s.top() else { continue };
        // Accept with the probability that the next token is a close.
        let p_close = s.next_distribution(params)[close_token(top) - 1];
        if rng.uniform() < p_close {
            out.push(EvalItem { input: body, label: close_token(top) });
        }
    }
    Ok(out)
}

/// Whitespace-separated ids, one prefix per line.
pub fn format_prefixes<'a>(prefixes: impl IntoIterator<Item = &'a DyckPrefix>) -> String {
    let mut s = String::new();
    for p in prefixes {
        let line: Vec<String> = p.tokens().iter().map(|t| t.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_prefixes(text: &str, params: &GrammarParams) -> Result<Vec<DyckPrefix>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let tokens = l
                .split_whitespace()
                .map(|w| w.parse::<usize>().map_err(|e| crate::Error::Format(format!("{w:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            DyckPrefix::new(tokens, params)
        })
        .collect()
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
