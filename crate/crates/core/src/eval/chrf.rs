//! Character n-gram F-score between two strings.

use std::collections::HashMap;

pub const MAX_ORDER: usize = 6;
pub const BETA: f64 = 2.0;

fn ngrams(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut m = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// chrF of `hypothesis` against `reference` on a 0 to 100 scale.
///
/// Whitespace is ignored. Precision and recall are averaged over the orders
/// 1 to 6 for which both strings have n-grams, then combined with recall
/// weighted by `BETA`. Two empty strings score 100; one empty string scores 0.
pub fn chrf(hypothesis: &str, reference: &str) -> f64 {
    let h: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if h.is_empty() && r.is_empty() {
        return 100.0;
    }
    let (mut prec, mut rec, mut orders) = (0.0, 0.0, 0usize);
    for n in 1..=MAX_ORDER {
        let (hg, rg) = (ngrams(&h, n), ngrams(&r, n));
        let hyp_total: usize = hg.values().sum();
        let ref_total: usize = rg.values().sum();
        if hyp_total == 0 || ref_total == 0 {
            continue;
        }
        let matched: usize = hg.iter().map(|(g, &c)| c.min(rg.get(g).copied().unwrap_or(0))).sum();
        prec += matched as f64 / hyp_total as f64;
        rec += matched as f64 / ref_total as f64;
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let (p, r) = (prec / orders as f64, rec / orders as f64);
    let b2 = BETA * BETA;
    if p + r == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + b2) * p * r / (b2 * p + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_100() {
        for s in ["a", "Kevin Durant | PTS | 22", "xyzxyzxyz"] {
            assert!((chrf(s, s) - 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cases() {
        assert_eq!(chrf("", ""), 100.0);
        assert_eq!(chrf("", "a"), 0.0);
        assert_eq!(chrf("a", ""), 0.0);
        assert_eq!(chrf("ab", "cd"), 0.0);
    }

    #[test]
    fn whitespace_is_ignored() {
        assert_eq!(chrf("a b c", "abc"), 100.0);
    }

    #[test]
    fn one_substitution_hand_computed() {
        // "abcd" vs "abce": n=1 3/4, n=2 2/3, n=3 1/2, n=4 0/1; n=5,6 absent.
        let p: f64 = (0.75 + 2.0 / 3.0 + 0.5 + 0.0) / 4.0;
        let expect = 100.0 * 5.0 * p * p / (4.0 * p + p);
        assert!((chrf("abcd", "abce") - expect).abs() < 1e-12);
    }
}
