use crate::dyck::{enumerate_prefixes, next_token_distribution, sample_prefix_of_length, total_variation, DyckPrefix, GrammarParams};
use crate::error::{input, Result};
use crate::numerics::ops::softmax;
use crate::numerics::Rng;
use crate::transformer::{final_outputs, ModelParams};
use serde::{Deserialize, Serialize};

/// How a model's final outputs become a next-token distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Outputs already are probabilities (the exact constructions).
    Probabilities,
    /// Outputs are logits; softmax first.
    Logits,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleComparison {
    pub prefixes: usize,
    pub max_tv: f64,
    pub mean_tv: f64,
    /// Bracket ids of the worst prefix.
    pub worst: Vec<usize>,
}

pub fn compare_with_oracle(params: &ModelParams, grammar: &GrammarParams, prefixes: &[DyckPrefix], kind: OutputKind) -> Result<OracleComparison> {
    if prefixes.is_empty() {
        return input("no prefixes to compare");
    }
    let refs: Vec<&[usize]> = prefixes.iter().map(|p| p.tokens()).collect();
    let outs = final_outputs(params, &refs)?;
    let (mut max_tv, mut sum, mut worst) = (0.0f64, 0.0, 0);
    for (i, (p, o)) in prefixes.iter().zip(outs).enumerate() {
        let dist = match kind {
            OutputKind::Probabilities => o,
            OutputKind::Logits => softmax(&o),
        };
        let tv = total_variation(&dist, &next_token_distribution(p, grammar)?);
        // NaN counts as the worst possible distance.
        let tv = if tv.is_nan() { f64::INFINITY } else { tv };
        sum += tv;
        if tv > max_tv || i == 0 {
            max_tv = tv;
            worst = i;
        }
    }
    Ok(OracleComparison { prefixes: prefixes.len(), max_tv, mean_tv: sum / prefixes.len() as f64, worst: prefixes[worst].tokens().to_vec() })
}

/// Every valid prefix with `1..=max_len` tokens.
pub fn all_prefixes_up_to(grammar: &GrammarParams, max_len: usize) -> Result<Vec<DyckPrefix>> {
    let mut out = Vec::new();
    for n in 1..=max_len {
        out.extend(enumerate_prefixes(&grammar.with_length(n))?);
    }
    Ok(out)
}

/// `count` sampled prefixes with lengths uniform in `lengths`.
pub fn sampled_prefixes(grammar: &GrammarParams, count: usize, lengths: [usize; 2], rng: &mut Rng) -> Vec<DyckPrefix> {
    (0..count)
        .map(|_| {
            let n = rng.range_inclusive(lengths[0], lengths[1]);
            sample_prefix_of_length(grammar, n, rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::build_uniform_attention_model;

    #[test]
    fn counts_match_brute_force() {
        // k = 1, D = 1 alternates, so there is exactly one prefix per length.
        let g = GrammarParams::new(1, 1, 1, 0.5).unwrap();
        assert_eq!(all_prefixes_up_to(&g, 6).unwrap().len(), 6);
        let g = GrammarParams::new(2, 3, 1, 0.5).unwrap();
        let all = all_prefixes_up_to(&g, 5).unwrap();
        let brute: usize = (1..=5u32)
            .map(|n| {
                (0..4usize.pow(n))
                    .filter(|&code| {
                        let toks: Vec<usize> = (0..n).map(|i| code / 4usize.pow(i) % 4 + 1).collect();
                        crate::dyck::is_valid_prefix(&toks, &g.with_length(n as usize)).unwrap()
                    })
                    .count()
            })
            .sum();
        assert_eq!(all.len(), brute);
    }

    #[test]
    fn construction_is_exact() {
        let g = GrammarParams::new(2, 2, 6, 0.5).unwrap();
        let c = build_uniform_attention_model(&g, 1).unwrap();
        let cmp = compare_with_oracle(&c.params, &g, &all_prefixes_up_to(&g, 6).unwrap(), OutputKind::Probabilities).unwrap();
        assert!(cmp.max_tv <= 1e-6, "{cmp:?}");
        let logits = compare_with_oracle(&c.params, &g, &all_prefixes_up_to(&g, 3).unwrap(), OutputKind::Logits).unwrap();
        assert!(logits.max_tv > 0.01);
    }
}
