//! Corpus handling: vocabularies, copy-span supervision and copy statistics.
//!
//! Corpus files hold one `source<TAB>target` pair per line with
//! whitespace-separated, pre-tokenized text. Vocabulary files hold
//! `token<TAB>count` on line `i` for id `i`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Default span length cap.
pub const DEFAULT_MAX_COPY_LEN: usize = 5;

/// Which half of a corpus pair a vocabulary is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// One tokenized `(source, target)` pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl Pair {
    pub fn new(source: &str, target: &str) -> Self {
        Self {
            source: tokenize(source),
            target: tokenize(target),
        }
    }

    pub fn side(&self, side: Side) -> &[String] {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Parses `source<TAB>target` lines; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| {
            Error::InvalidArgument(format!("corpus line {} has no tab separator", lineno + 1))
        })?;
        let pair = Pair::new(src, tgt);
        if pair.source.is_empty() || pair.target.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "corpus line {} has an empty side",
                lineno + 1
            )));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Pair>> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_corpus(&text)
}

pub fn format_corpus(pairs: &[Pair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{}\t{}", p.source.join(" "), p.target.join(" "));
    }
    out
}

/// Bidirectional token/id map with reserved symbols at ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Reserved symbols followed by `entries` in the given order.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            counts: Vec::new(),
            ids: HashMap::new(),
        };
        for r in RESERVED {
            vocab.push(r.to_owned(), 0)?;
        }
        for (tok, count) in entries {
            vocab.push(tok.into(), count)?;
        }
        Ok(vocab)
    }

    fn push(&mut self, tok: String, count: u64) -> Result<()> {
        if tok.is_empty() || tok.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "vocabulary token {tok:?} is empty or contains whitespace"
            )));
        }
        if self.ids.contains_key(&tok) {
            return Err(Error::InvalidArgument(format!("duplicate vocabulary token {tok}")));
        }
        self.ids.insert(tok.clone(), self.tokens.len());
        self.tokens.push(tok);
        self.counts.push(count);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: TokenId) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            let _ = writeln!(out, "{t}\t{c}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        for (i, r) in RESERVED.iter().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| Error::InvalidArgument("vocabulary file too short".into()))?;
            let tok = line.split('\t').next().unwrap_or("");
            if tok != *r {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary line {} must be {r}, found {tok:?}",
                    i + 1
                )));
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let (tok, count) = line.split_once('\t').ok_or_else(|| {
                Error::InvalidArgument(format!("vocabulary line {} lacks a count", i + 5))
            })?;
            let count = count.trim().parse::<u64>().map_err(|_| {
                Error::InvalidArgument(format!("vocabulary line {} has a bad count", i + 5))
            })?;
            entries.push((tok.to_owned(), count));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_file_string()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }
}

/// Keeps tokens seen at least `min_count` times on `side`, ordered by
/// descending count and then lexicographically.
pub fn build_vocab(corpus: &[Pair], min_count: u64, side: Side) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot build a vocabulary from an empty corpus".into()));
    }
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be positive".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for pair in corpus {
        for tok in pair.side(side) {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(kept.into_iter().map(|(t, c)| (t.to_owned(), c)))
}

/// Aligns `target[tgt_start..=tgt_end]` with `source[src_start..=src_end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CopySpan {
    pub tgt_start: usize,
    pub tgt_end: usize,
    pub src_start: usize,
    pub src_end: usize,
}

impl CopySpan {
    pub fn len(&self) -> usize {
        self.tgt_end - self.tgt_start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Derives copy supervision by a greedy left-to-right scan of the target.
///
/// At each target position the longest source match (capped at
/// `max_copy_len`, earliest source position on ties) is taken. Matches of two
/// or more tokens always become spans; a single-token match becomes a span only
/// when the token is missing from `target_vocab`. Otherwise the scan moves on
/// by one token.
pub fn annotate_spans(
    source: &[String],
    target: &[String],
    max_copy_len: usize,
    target_vocab: &Vocabulary,
) -> Vec<CopySpan> {
    if max_copy_len == 0 || source.is_empty() || target.is_empty() {
        return Vec::new();
    }
    let (n, m) = (source.len(), target.len());
    // run[i][j]: length of the common run starting at target i / source j.
    let mut run = vec![0usize; (m + 1) * (n + 1)];
    for i in (0..m).rev() {
        for j in (0..n).rev() {
            if target[i] == source[j] {
                run[i * (n + 1) + j] = 1 + run[(i + 1) * (n + 1) + j + 1];
            }
        }
    }
    let mut spans = Vec::new();
    let mut i = 0;
    while i < m {
        let mut best = (0usize, 0usize);
        for j in 0..n {
            let len = run[i * (n + 1) + j].min(max_copy_len);
            if len > best.0 {
                best = (len, j);
            }
        }
        let (len, j) = best;
        let take = len >= 2 || (len == 1 && !target_vocab.contains(&target[i]));
        if take {
            spans.push(CopySpan {
                tgt_start: i,
                tgt_end: i + len - 1,
                src_start: j,
                src_end: j + len - 1,
            });
            i += len;
        } else {
            i += 1;
        }
    }
    spans
}

/// Source/target ids plus the copy spans that supervise one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// Source ids in the source vocabulary.
    pub x: Vec<TokenId>,
    /// Source tokens looked up in the target vocabulary (fed back when copying).
    pub x_tgt: Vec<TokenId>,
    /// Target ids in the target vocabulary with [`EOS`] appended.
    pub y: Vec<TokenId>,
    pub spans: Vec<CopySpan>,
}

impl TrainingInstance {
    pub fn from_pair(
        pair: &Pair,
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
        max_copy_len: usize,
    ) -> Result<Self> {
        if pair.source.is_empty() || pair.target.is_empty() {
            return Err(Error::EmptyInput("pair with an empty side".into()));
        }
        let mut y = tgt_vocab.encode(&pair.target);
        y.push(EOS);
        let inst = Self {
            x: src_vocab.encode(&pair.source),
            x_tgt: tgt_vocab.encode(&pair.source),
            y,
            spans: annotate_spans(&pair.source, &pair.target, max_copy_len, tgt_vocab),
            source: pair.source.clone(),
            target: pair.target.clone(),
        };
        inst.validate(max_copy_len)?;
        Ok(inst)
    }

    /// Checks the span invariants against the surface tokens.
    pub fn validate(&self, max_copy_len: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        if self.x.len() != self.source.len()
            || self.x_tgt.len() != self.source.len()
            || self.y.len() != self.target.len() + 1
        {
            return bad("id and surface lengths disagree".into());
        }
        if self.x.is_empty() {
            return bad("empty source".into());
        }
        if self.y.last() != Some(&EOS) {
            return bad("target must end with the end-of-sequence id".into());
        }
        let mut next_free = 0;
        for s in &self.spans {
            if s.tgt_end < s.tgt_start || s.src_end < s.src_start {
                return bad(format!("reversed span {s:?}"));
            }
            if s.tgt_end - s.tgt_start != s.src_end - s.src_start {
                return bad(format!("span sides differ in length: {s:?}"));
            }
            if s.len() > max_copy_len {
                return bad(format!("span {s:?} longer than {max_copy_len}"));
            }
            if s.tgt_start < next_free {
                return bad(format!("span {s:?} overlaps or is out of order"));
            }
            if s.tgt_end >= self.target.len() || s.src_end >= self.source.len() {
                return bad(format!("span {s:?} out of bounds"));
            }
            for k in 0..s.len() {
                if self.target[s.tgt_start + k] != self.source[s.src_start + k] {
                    return bad(format!("span {s:?} aligns different tokens"));
                }
            }
            next_free = s.tgt_end + 1;
        }
        Ok(())
    }
}

/// Share of target tokens generated, copied alone, or copied inside a
/// multi-token span.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusStats {
    pub fraction_generated: f64,
    pub fraction_single_copy: f64,
    pub fraction_multi_copy: f64,
    pub target_tokens: usize,
}

impl CorpusStats {
    pub fn fraction_copied(&self) -> f64 {
        self.fraction_single_copy + self.fraction_multi_copy
    }

    pub fn report(&self) -> String {
        format!(
            "target_tokens\t{}\ngenerated\t{:.6}\nsingle_copy\t{:.6}\nmulti_copy\t{:.6}\ncopied\t{:.6}\n",
            self.target_tokens,
            self.fraction_generated,
            self.fraction_single_copy,
            self.fraction_multi_copy,
            self.fraction_copied()
        )
    }
}

/// Classifies every target token (end-of-sequence excluded).
pub fn corpus_stats(instances: &[TrainingInstance]) -> Result<CorpusStats> {
    let (mut single, mut multi, mut total) = (0usize, 0usize, 0usize);
    for inst in instances {
        total += inst.target.len();
        for s in &inst.spans {
            if s.len() >= 2 {
                multi += s.len();
            } else {
                single += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("no target tokens".into()));
    }
    let t = total as f64;
    let fraction_single_copy = single as f64 / t;
    let fraction_multi_copy = multi as f64 / t;
    Ok(CorpusStats {
        fraction_generated: (total - single - multi) as f64 / t,
        fraction_single_copy,
        fraction_multi_copy,
        target_tokens: total,
    })
}

/// Formats spans as `tgt_start-tgt_end:src_start-src_end` separated by spaces.
pub fn format_spans(spans: &[CopySpan]) -> String {
    spans
        .iter()
        .map(|s| format!("{}-{}:{}-{}", s.tgt_start, s.tgt_end, s.src_start, s.src_end))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_entries(words.iter().map(|w| (*w, 1))).unwrap()
    }

    #[test]
    fn build_vocab_threshold() {
        let corpus = vec![Pair::new("a a b", "x")];
        let v = build_vocab(&corpus, 2, Side::Source).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), Some(4));
        assert!(!v.contains("b"));
        let all = build_vocab(&corpus, 1, Side::Source).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all.token(5), Some("b"));
        assert!(matches!(
            build_vocab(&[], 1, Side::Source),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn vocab_order_and_round_trip() {
        let corpus = vec![Pair::new("c b b a a", "z"), Pair::new("c", "z")];
        let v = build_vocab(&corpus, 1, Side::Source).unwrap();
        let order: Vec<_> = (4..v.len()).map(|i| v.token(i).unwrap()).collect();
        assert_eq!(order, ["a", "b", "c"]);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(EOS), Some("</s>"));
        let text = v.to_file_string();
        assert!(text.starts_with("<pad>\t0\n<s>\t0\n</s>\t0\n<unk>\t0\na\t2\n"));
        assert_eq!(Vocabulary::parse(&text).unwrap(), v);
        assert_eq!(v.id_or_unk("zzz"), UNK);
    }

    #[test]
    fn corpus_parsing() {
        let pairs = parse_corpus("a b\tb c\n\nx\ty\n").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].target, toks("b c"));
        assert!(parse_corpus("no tab here").is_err());
        assert_eq!(parse_corpus(&format_corpus(&pairs)).unwrap(), pairs);
    }

    #[test]
    fn annotate_two_word_span() {
        let spans = annotate_spans(&toks("a b c d"), &toks("x b c y"), 5, &vocab(&["b", "c"]));
        assert_eq!(
            spans,
            vec![CopySpan {
                tgt_start: 1,
                tgt_end: 2,
                src_start: 1,
                src_end: 2
            }]
        );
    }

    #[test]
    fn annotate_disjoint_is_empty() {
        assert!(annotate_spans(&toks("a b"), &toks("c d"), 5, &vocab(&[])).is_empty());
    }

    #[test]
    fn annotate_identity_splits_at_cap() {
        let x = toks("a b c d e f g");
        let spans = annotate_spans(&x, &x, 5, &vocab(&[]));
        let lens: Vec<_> = spans.iter().map(CopySpan::len).collect();
        assert_eq!(lens, [5, 2]);
        assert_eq!(spans[1].src_start, 5);
    }

    #[test]
    fn single_tokens_copy_only_when_oov() {
        let tv = vocab(&["a"]);
        let spans = annotate_spans(&toks("a q"), &toks("a z q"), 5, &tv);
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].tgt_start, 2);
        assert_eq!(spans[0].len(), 1);
    }

    #[test]
    fn earliest_source_on_ties() {
        let spans = annotate_spans(&toks("b c x b c"), &toks("b c"), 5, &vocab(&[]));
        assert_eq!(spans[0].src_start, 0);
    }

    #[test]
    fn instance_validation() {
        let sv = vocab(&["a", "b", "c"]);
        let tv = vocab(&["a"]);
        let inst = TrainingInstance::from_pair(&Pair::new("a b c", "b c a"), &sv, &tv, 5).unwrap();
        assert_eq!(inst.y, vec![UNK, UNK, 4, EOS]);
        assert_eq!(inst.spans.len(), 1);
        let mut broken = inst.clone();
        broken.spans[0].src_start = 0;
        assert!(matches!(broken.validate(5), Err(Error::InvalidInstance(_))));
        let mut long = inst;
        long.spans[0].tgt_end = 3;
        long.spans[0].src_end = 3;
        assert!(long.validate(5).is_err());
    }

    #[test]
    fn stats_cases() {
        let tv = vocab(&[]);
        let sv = vocab(&[]);
        let none = TrainingInstance::from_pair(&Pair::new("a b", "c d"), &sv, &tv, 5).unwrap();
        let s = corpus_stats(&[none]).unwrap();
        assert_eq!(
            (s.fraction_generated, s.fraction_single_copy, s.fraction_multi_copy),
            (1.0, 0.0, 0.0)
        );
        let three = TrainingInstance::from_pair(&Pair::new("a b c", "a b c z"), &sv, &tv, 5).unwrap();
        let s = corpus_stats(&[three]).unwrap();
        assert_eq!(
            (s.fraction_generated, s.fraction_single_copy, s.fraction_multi_copy),
            (0.25, 0.0, 0.75)
        );
        assert!(corpus_stats(&[]).is_err());
    }
}
