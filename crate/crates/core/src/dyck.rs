//! The Dyck language over the alphabet {u, d}: membership, prefix
//! labels, exact counting, exactly-uniform sampling, and brute-force
//! enumeration oracles for tests.
//!
//! A word is Dyck iff its height profile (running sum with u = +1,
//! d = −1) ends at 0 and never goes negative. Counting uses big-integer
//! arithmetic throughout: at evaluation lengths the counts exceed u64
//! by a wide margin.

use crate::tensor::Tensor;
use num_bigint::{BigUint, RandBigInt};
use rand::seq::SliceRandom;
use rand::Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DyckError {
    #[error("invalid symbol {0:?}, expected 'u' or 'd'")]
    InvalidSymbol(char),
    #[error("word must be nonempty")]
    EmptyWord,
    #[error("no valid word lengths below {0} (need max_len_exclusive ≥ 3)")]
    NoValidLengths(usize),
    #[error("enumeration bound k = {0} exceeds the combinatorial guard (k ≤ 12)")]
    EnumerationTooLarge(usize),
    #[error("invalid encoding at position {0}")]
    InvalidEncoding(usize),
    #[error("malformed dataset record: {0}")]
    MalformedRecord(String),
}

/// One input symbol: u opens, d closes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sym {
    D,
    U,
}

impl Sym {
    pub fn step(self) -> i64 {
        match self {
            Sym::U => 1,
            Sym::D => -1,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Sym::U => 'u',
            Sym::D => 'd',
        }
    }
}

/// A word over {u, d}.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word(Vec<Sym>);

impl Word {
    pub fn new(symbols: Vec<Sym>) -> Self {
        Word(symbols)
    }

    pub fn symbols(&self) -> &[Sym] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for Word {
    type Err = DyckError;

    fn from_str(s: &str) -> Result<Self, DyckError> {
        let mut symbols = Vec::with_capacity(s.len());
        for c in s.chars() {
            symbols.push(match c {
                'u' => Sym::U,
                'd' => Sym::D,
                other => return Err(DyckError::InvalidSymbol(other)),
            });
        }
        Ok(Word(symbols))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.as_char())?;
        }
        Ok(())
    }
}

/// Running sums h_t = (#u − #d) over prefixes; the "path" view of a word.
pub fn height_profile(w: &Word) -> Vec<i64> {
    let mut h = 0;
    w.symbols()
        .iter()
        .map(|s| {
            h += s.step();
            h
        })
        .collect()
}

/// True iff the word is balanced and no prefix dips below zero.
pub fn is_dyck(w: &Word) -> bool {
    let mut h: i64 = 0;
    for s in w.symbols() {
        h += s.step();
        if h < 0 {
            return false;
        }
    }
    h == 0
}

/// label_t = 1 iff the length-t prefix is itself a Dyck word. Once the
/// height goes negative every later label is 0.
pub fn prefix_labels(w: &Word) -> Vec<u8> {
    let mut h: i64 = 0;
    let mut violated = false;
    w.symbols()
        .iter()
        .map(|s| {
            h += s.step();
            violated |= h < 0;
            u8::from(!violated && h == 0)
        })
        .collect()
}

/// A word with its per-prefix supervision targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub word: Word,
    pub prefix_labels: Vec<u8>,
    pub word_label: u8,
}

impl LabeledSample {
    pub fn new(word: Word) -> Self {
        let prefix_labels = prefix_labels(&word);
        let word_label = *prefix_labels.last().expect("sample words are nonempty");
        LabeledSample {
            word,
            prefix_labels,
            word_label,
        }
    }
}

/// Exact binomial coefficient.
pub fn binomial(n: usize, r: usize) -> BigUint {
    if r > n {
        return BigUint::from(0u32);
    }
    let r = r.min(n - r);
    let mut acc = BigUint::from(1u32);
    for i in 1..=r {
        acc = acc * BigUint::from(n - r + i) / BigUint::from(i);
    }
    acc
}

/// Catalan number C_k = (2k choose k) / (k + 1): the number of Dyck
/// words of length 2k.
pub fn catalan(k: usize) -> BigUint {
    binomial(2 * k, k) / BigUint::from(k + 1)
}

/// Number of ±1 paths of length `m` from height `h` to 0 that never go
/// below 0; 0 when parity or reachability forbids.
pub fn ballot_completions(h: usize, m: usize) -> BigUint {
    CompletionTable::new(m).count(h, m).clone()
}

/// Precomputed table of ballot completion counts f(h, m) for m ≤ max_m.
///
/// f(h, m) = f(h+1, m−1) + [h > 0]·f(h−1, m−1), f(0, 0) = 1.
pub struct CompletionTable {
    // rows[m][h] for h in 0..=m
    rows: Vec<Vec<BigUint>>,
}

impl CompletionTable {
    pub fn new(max_m: usize) -> Self {
        let zero = BigUint::from(0u32);
        let mut rows: Vec<Vec<BigUint>> = Vec::with_capacity(max_m + 1);
        rows.push(vec![BigUint::from(1u32)]);
        for m in 1..=max_m {
            let prev = &rows[m - 1];
            let at = |h: usize| prev.get(h).unwrap_or(&zero);
            let mut row = Vec::with_capacity(m + 1);
            for h in 0..=m {
                let mut v = at(h + 1).clone();
                if h > 0 {
                    v += at(h - 1);
                }
                row.push(v);
            }
            rows.push(row);
        }
        CompletionTable { rows }
    }

    pub fn max_m(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn count(&self, h: usize, m: usize) -> &BigUint {
        static ZERO: std::sync::OnceLock<BigUint> = std::sync::OnceLock::new();
        if m > self.max_m() || h > m {
            return ZERO.get_or_init(|| BigUint::from(0u32));
        }
        &self.rows[m][h]
    }
}

/// Draws one index with probability weights[i] / Σ weights, exactly.
fn draw_weighted(weights: &[BigUint], rng: &mut impl Rng) -> usize {
    let total: BigUint = weights.iter().sum();
    debug_assert!(total > BigUint::from(0u32));
    let mut r = rng.gen_biguint_below(&total);
    for (i, w) in weights.iter().enumerate() {
        if &r < w {
            return i;
        }
        r -= w;
    }
    unreachable!("weights exhausted");
}

/// Samples uniformly over ALL Dyck words of even length 2k <
/// `max_len_exclusive` (k ≥ 1): first the length in proportion to C_k,
/// then a ballot-counted left-to-right walk. Exact by construction.
pub fn sample_dyck_uniform(
    max_len_exclusive: usize,
    rng: &mut impl Rng,
) -> Result<Word, DyckError> {
    let k_max = max_len_exclusive.saturating_sub(1) / 2;
    if k_max < 1 {
        return Err(DyckError::NoValidLengths(max_len_exclusive));
    }
    let weights: Vec<BigUint> = (1..=k_max).map(catalan).collect();
    let k = 1 + draw_weighted(&weights, rng);
    let table = CompletionTable::new(2 * k);
    Ok(sample_dyck_of_length(k, &table, rng))
}

/// Uniform Dyck word of exactly length 2k given a completion table
/// covering m = 2k.
pub fn sample_dyck_of_length(k: usize, table: &CompletionTable, rng: &mut impl Rng) -> Word {
    let mut symbols = Vec::with_capacity(2 * k);
    let mut h: usize = 0;
    for m in (1..=2 * k).rev() {
        let up = table.count(h + 1, m - 1);
        let total = table.count(h, m);
        let r = rng.gen_biguint_below(total);
        if &r < up {
            symbols.push(Sym::U);
            h += 1;
        } else {
            symbols.push(Sym::D);
            h -= 1;
        }
    }
    debug_assert_eq!(h, 0);
    Word(symbols)
}

/// Samples uniformly over all non-Dyck words with equal u/d counts and
/// even length < `max_len_exclusive`: length drawn ∝ (binom(2k,k) −
/// C_k), then rejection over uniform balanced arrangements.
pub fn sample_negative(max_len_exclusive: usize, rng: &mut impl Rng) -> Result<Word, DyckError> {
    let k_max = max_len_exclusive.saturating_sub(1) / 2;
    if k_max < 1 {
        return Err(DyckError::NoValidLengths(max_len_exclusive));
    }
    let weights: Vec<BigUint> = (1..=k_max)
        .map(|k| binomial(2 * k, k) - catalan(k))
        .collect();
    let k = 1 + draw_weighted(&weights, rng);
    let mut symbols: Vec<Sym> = std::iter::repeat(Sym::U)
        .take(k)
        .chain(std::iter::repeat(Sym::D).take(k))
        .collect();
    loop {
        symbols.shuffle(rng);
        let w = Word(symbols);
        if !is_dyck(&w) {
            return Ok(w);
        }
        symbols = w.0;
    }
}

/// u → [1, 0], d → [0, 1]; no start/end markers.
pub fn encode(w: &Word) -> Vec<Tensor> {
    w.symbols()
        .iter()
        .map(|s| match s {
            Sym::U => Tensor::vector(vec![1.0, 0.0]),
            Sym::D => Tensor::vector(vec![0.0, 1.0]),
        })
        .collect()
}

pub fn decode(inputs: &[Tensor]) -> Result<Word, DyckError> {
    let mut symbols = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let d = t.data();
        if d == [1.0, 0.0] {
            symbols.push(Sym::U);
        } else if d == [0.0, 1.0] {
            symbols.push(Sym::D);
        } else {
            return Err(DyckError::InvalidEncoding(i));
        }
    }
    Ok(Word(symbols))
}

const ENUMERATION_GUARD: usize = 12;

/// All Dyck words of length 2k, lexicographically sorted (d < u).
pub fn enumerate_dyck(k: usize) -> Result<Vec<Word>, DyckError> {
    if k > ENUMERATION_GUARD {
        return Err(DyckError::EnumerationTooLarge(k));
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(2 * k);
    fn rec(prefix: &mut Vec<Sym>, h: usize, m: usize, out: &mut Vec<Word>) {
        if m == 0 {
            if h == 0 {
                out.push(Word(prefix.clone()));
            }
            return;
        }
        // d before u keeps the output lexicographically sorted.
        if h > 0 {
            prefix.push(Sym::D);
            rec(prefix, h - 1, m - 1, out);
            prefix.pop();
        }
        if h + 1 <= m - 1 {
            prefix.push(Sym::U);
            rec(prefix, h + 1, m - 1, out);
            prefix.pop();
        }
    }
    rec(&mut prefix, 0, 2 * k, &mut out);
    Ok(out)
}

/// All words of length 2k with equal u/d counts, lexicographically sorted.
pub fn enumerate_balanced(k: usize) -> Result<Vec<Word>, DyckError> {
    if k > ENUMERATION_GUARD {
        return Err(DyckError::EnumerationTooLarge(k));
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(2 * k);
    fn rec(prefix: &mut Vec<Sym>, us: usize, ds: usize, out: &mut Vec<Word>) {
        if us == 0 && ds == 0 {
            out.push(Word(prefix.clone()));
            return;
        }
        if ds > 0 {
            prefix.push(Sym::D);
            rec(prefix, us, ds - 1, out);
            prefix.pop();
        }
        if us > 0 {
            prefix.push(Sym::U);
            rec(prefix, us - 1, ds, out);
            prefix.pop();
        }
    }
    rec(&mut prefix, k, k, &mut out);
    Ok(out)
}

/// Column header of the dataset file format.
pub fn dataset_header() -> &'static str {
    "word\tprefix_labels\tword_label\tsplit"
}

/// One dataset record: word, per-prefix 0/1 labels, word label, split tag.
pub fn format_record(sample: &LabeledSample, split: &str) -> String {
    let labels: String = sample
        .prefix_labels
        .iter()
        .map(|&b| char::from(b'0' + b))
        .collect();
    format!("{}\t{}\t{}\t{}", sample.word, labels, sample.word_label, split)
}

/// Parses a record produced by [`format_record`]; returns the sample
/// and its split tag. Labels are revalidated against the word.
pub fn parse_record(line: &str) -> Result<(LabeledSample, String), DyckError> {
    let mut fields = line.split('\t');
    let (Some(word), Some(labels), Some(word_label), Some(split), None) = (
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
    ) else {
        return Err(DyckError::MalformedRecord(line.to_string()));
    };
    let word: Word = word.parse()?;
    let sample = LabeledSample::new(word);
    let expect_labels: String = sample
        .prefix_labels
        .iter()
        .map(|&b| char::from(b'0' + b))
        .collect();
    if labels != expect_labels || word_label != sample.word_label.to_string() {
        return Err(DyckError::MalformedRecord(format!(
            "labels do not match word in {line:?}"
        )));
    }
    Ok((sample, split.to_string()))
}
