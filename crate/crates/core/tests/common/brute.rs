//! Brute-force n-gram scorer with exact rational arithmetic.
//!
//! Shares nothing with the library model except the character inventory:
//! counts are kept per string key and scores are exact products.

use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Sym {
    Bos,
    Unk,
    Ch(char),
}

pub struct BruteForce {
    n: usize,
    known: BTreeSet<char>,
    v: u64,
    /// label -> (history key, next) -> count
    grams: Vec<HashMap<(Vec<Sym>, Sym), u64>>,
    hists: Vec<HashMap<Vec<Sym>, u64>>,
    pub labels: Vec<String>,
    alpha_num: i64,
    alpha_den: i64,
}

impl BruteForce {
    /// `alpha = alpha_num / alpha_den`, `known` the charset characters.
    pub fn train(
        pairs: &[(String, String)],
        n: usize,
        known: &[char],
        alpha_num: i64,
        alpha_den: i64,
    ) -> Self {
        let labels: Vec<String> = pairs
            .iter()
            .map(|(_, l)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let known: BTreeSet<char> = known.iter().copied().collect();
        let mut bf = BruteForce {
            n,
            v: known.len() as u64 + 1,
            known,
            grams: vec![HashMap::new(); labels.len()],
            hists: vec![HashMap::new(); labels.len()],
            labels,
            alpha_num,
            alpha_den,
        };
        for (text, label) in pairs {
            let li = bf.labels.iter().position(|l| l == label).unwrap();
            let syms = bf.symbols(text);
            for t in (n - 1)..syms.len() {
                let hist = syms[t + 1 - n..t].to_vec();
                *bf.grams[li].entry((hist.clone(), syms[t])).or_default() += 1;
                *bf.hists[li].entry(hist).or_default() += 1;
            }
        }
        bf
    }

    fn symbols(&self, text: &str) -> Vec<Sym> {
        let mut out = vec![Sym::Bos; self.n - 1];
        out.extend(text.chars().map(|c| {
            if self.known.contains(&c) {
                Sym::Ch(c)
            } else {
                Sym::Unk
            }
        }));
        out
    }

    /// Exact likelihood of `text` under label `li`.
    pub fn likelihood(&self, text: &str, li: usize) -> BigRational {
        let syms = self.symbols(text);
        let (an, ad) = (self.alpha_num, self.alpha_den);
        let mut p = BigRational::one();
        for t in (self.n - 1)..syms.len() {
            let hist = syms[t + 1 - self.n..t].to_vec();
            let total = self.hists[li].get(&hist).copied().unwrap_or(0) as i64;
            let c = self.grams[li].get(&(hist, syms[t])).copied().unwrap_or(0) as i64;
            // (c + a) / (t + aV) with a = an/ad
            let num = BigInt::from(c * ad + an);
            let den = BigInt::from(total * ad + an * self.v as i64);
            p *= BigRational::new(num, den);
        }
        p
    }

    /// Exact argmax, ties to the smallest label, plus every likelihood.
    pub fn classify(&self, text: &str) -> (usize, Vec<BigRational>) {
        let scores: Vec<BigRational> =
            (0..self.labels.len()).map(|li| self.likelihood(text, li)).collect();
        let mut best = 0;
        for (i, s) in scores.iter().enumerate().skip(1) {
            if *s > scores[best] {
                best = i;
            }
        }
        (best, scores)
    }

    /// `|ln(a / b)|`, for judging how close two exact scores are.
    pub fn log_gap(a: &BigRational, b: &BigRational) -> f64 {
        (a / b).to_f64().map(|r| r.ln().abs()).unwrap_or(f64::INFINITY)
    }
}
