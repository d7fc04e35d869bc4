//! Prompt-token scoring against a fixed vocabulary of aesthetic anchor words.
//!
//! Each prompt token gets the best cosine similarity to any anchor. Tokens at
//! or above the similarity threshold form the aesthetic token set used when
//! aggregating cross-attention. A prompt with no such token takes the
//! uniform-weighting fallback downstream.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_SIM_THRESHOLD: f64 = 0.60;

/// Built-in anchor vocabulary, grouped by category.
pub const ANCHOR_CATEGORIES: [(&str, &[&str]); 6] = [
    (
        "style / rendering quality",
        &[
            "photorealistic",
            "realistic",
            "cinematic",
            "highly detailed",
            "artistic",
            "masterpiece",
            "professional photography",
            "soft bokeh",
            "bokeh",
            "dramatic lighting",
            "fantasy art",
            "studio lighting",
        ],
    ),
    ("detail / sharpness", &["detailed", "intricate", "sharp focus", "sharp"]),
    (
        "aesthetic judgment",
        &["stunning", "beautiful", "elegant", "vivid", "vibrant"],
    ),
    (
        "photography / composition",
        &["depth of field", "volumetric lighting", "close up", "portrait", "full body"],
    ),
    ("subject emphasis", &["main subject", "foreground", "focused"]),
    (
        "content-level fallback",
        &["subject", "character", "object", "figure", "person"],
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    anchors: Vec<String>,
}

impl AnchorSet {
    /// The 34-word built-in vocabulary.
    pub fn builtin() -> Self {
        Self {
            anchors: ANCHOR_CATEGORIES
                .iter()
                .flat_map(|(_, words)| words.iter().map(|w| w.to_string()))
                .collect(),
        }
    }

    pub fn new<S: Into<String>>(anchors: impl IntoIterator<Item = S>) -> Result<Self> {
        let anchors: Vec<String> = anchors
            .into_iter()
            .map(|a| normalize_phrase(&a.into()))
            .filter(|a| !a.is_empty())
            .collect();
        if anchors.is_empty() {
            return Err(Error::config("anchor set is empty"));
        }
        Ok(Self { anchors })
    }

    /// One anchor per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn anchors(&self) -> &[String] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Prompt words after lowercasing and punctuation stripping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTokens {
    tokens: Vec<String>,
}

impl PromptTokens {
    /// Whitespace split, lowercase, strip non-alphanumeric characters other
    /// than `-` and `'`. Tokens that strip to nothing are dropped.
    pub fn tokenize(prompt: &str) -> Result<Self> {
        let tokens: Vec<String> = prompt.split_whitespace().filter_map(clean_word).collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::config("prompt has no tokens"));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Keeps the first `max` tokens.
    pub fn truncated(&self, max: usize) -> Self {
        Self {
            tokens: self.tokens.iter().take(max.max(1)).cloned().collect(),
        }
    }
}

fn clean_word(word: &str) -> Option<String> {
    let cleaned: String = word
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '-' || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect();
    let cleaned = cleaned.trim_matches(|c| c == '-' || c == '\'').to_string();
    (!cleaned.is_empty()).then_some(cleaned)
}

fn normalize_phrase(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .filter_map(clean_word)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

/// A parsed table plus the non-fatal issues found while reading it.
#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub table: EmbeddingTable,
    pub warnings: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
        }
    }

    /// Table of [`synthetic_embedding`] vectors for the given tokens.
    pub fn synthetic<S: AsRef<str>>(
        tokens: impl IntoIterator<Item = S>,
        dim: usize,
        seed: u64,
    ) -> Self {
        let mut table = Self::new(dim);
        for t in tokens {
            let t = t.as_ref();
            table
                .entries
                .entry(t.to_string())
                .or_insert_with(|| synthetic_embedding(t, dim, seed));
        }
        table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Inserts or replaces an entry; returns true if it replaced one.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "vector of length {} in a table of dim {}",
                vector.len(),
                self.dim
            )));
        }
        Ok(self.entries.insert(token.into(), vector).is_some())
    }

    /// Serializes in the same text format [`load_embedding_table`] reads,
    /// sorted by token.
    pub fn to_text(&self) -> String {
        let sorted: BTreeMap<_, _> = self.entries.iter().collect();
        let mut out = String::new();
        for (token, v) in sorted {
            out.push_str(token);
            out.push('\t');
            let nums: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&nums.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Reads a `token<TAB>v1 v2 ... v_dim` table. `#` lines are comments and the
/// first data line fixes the dimension. Duplicate tokens keep the last entry
/// and produce a warning.
pub fn load_embedding_table(path: &Path) -> Result<LoadedTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_table(&text, path)
}

pub fn parse_embedding_table(text: &str, source: &Path) -> Result<LoadedTable> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut table: Option<EmbeddingTable> = None;
    let mut warnings = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let (token, values) = raw
            .split_once('\t')
            .ok_or_else(|| parse_err(line_no, "expected `token<TAB>values`".into()))?;
        let token = token.trim();
        if token.is_empty() {
            return Err(parse_err(line_no, "empty token".into()));
        }
        let vector = values
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(line_no, format!("bad number {s:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(parse_err(line_no, "no vector values".into()));
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(line_no, format!("non-finite value {bad}")));
        }
        let table = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != table.dim {
            return Err(Error::Format(format!(
                "{}:{line_no}: vector has {} values, table dim is {}",
                source.display(),
                vector.len(),
                table.dim
            )));
        }
        if table.insert(token, vector)? {
            let msg = format!("{}:{line_no}: duplicate token {token:?}, last entry wins", source.display());
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let table = table.ok_or_else(|| {
        Error::Format(format!("{}: embedding table has no entries", source.display()))
    })?;
    Ok(LoadedTable { table, warnings })
}

/// Deterministic unit-norm vector for a token: a SHA-256 of the seed and the
/// token seeds a ChaCha stream of standard normals, which is then normalized.
pub fn synthetic_embedding(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let dim = dim.max(2);
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((dim as u64).to_le_bytes());
    hasher.update(token.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub sim_threshold: f64,
    pub top_r: Option<usize>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            top_r: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAffinity {
    /// Best anchor similarity per prompt token; -1 for tokens the table lacks.
    pub scores: Vec<f64>,
    /// Selected aesthetic token indices, ascending.
    pub selected: Vec<usize>,
    pub triggered: bool,
    /// Indices into the anchor set of every anchor that some prompt token
    /// (or multi-word window) matched at or above the threshold.
    pub matched_anchors: Vec<usize>,
    /// Prompt token indices absent from the table.
    pub missing_tokens: Vec<usize>,
    /// Anchors absent from the table; they never match.
    pub missing_anchors: Vec<String>,
}

/// Scores every prompt token against every anchor.
///
/// Multi-word anchors match windows of 2-3 consecutive prompt words whose
/// space-joined text is in the table; a window's similarity is credited to
/// each word it spans. Selection is threshold first, then the optional top-r
/// cut (ties go to the lower token index).
pub fn score_tokens(
    prompt: &PromptTokens,
    anchors: &AnchorSet,
    table: &EmbeddingTable,
    config: &ScoringConfig,
) -> TokenAffinity {
    let mut missing_anchors = Vec::new();
    let anchor_vecs: Vec<(usize, &[f64])> = anchors
        .anchors()
        .iter()
        .enumerate()
        .filter_map(|(k, a)| match table.get(a) {
            Some(v) if v.iter().any(|x| *x != 0.0) => Some((k, v)),
            _ => {
                missing_anchors.push(a.clone());
                None
            }
        })
        .collect();

    let tokens = prompt.tokens();
    let m = tokens.len();
    let mut scores = vec![-1.0f64; m];
    let mut missing_tokens = Vec::new();
    let mut matched = BTreeSet::new();

    // (span start, span length, embedding)
    let mut units: Vec<(usize, usize, &[f64])> = Vec::new();
    for (j, tok) in tokens.iter().enumerate() {
        match table.get(tok) {
            Some(v) if v.iter().any(|x| *x != 0.0) => units.push((j, 1, v)),
            _ => missing_tokens.push(j),
        }
    }
    for len in 2..=3 {
        for start in 0..m.saturating_sub(len - 1) {
            let phrase = tokens[start..start + len].join(" ");
            if let Some(v) = table.get(&phrase) {
                if v.iter().any(|x| *x != 0.0) {
                    units.push((start, len, v));
                }
            }
        }
    }

    for (start, len, v) in units {
        let mut best = -1.0f64;
        for &(k, a) in &anchor_vecs {
            // Dimensions agree by table construction and norms are nonzero.
            let s = cosine_similarity(v, a).unwrap_or(-1.0);
            if s >= config.sim_threshold {
                matched.insert(k);
            }
            best = best.max(s);
        }
        for score in &mut scores[start..start + len] {
            *score = score.max(best);
        }
    }
    if !missing_tokens.is_empty() {
        log::debug!("{} prompt token(s) missing from the embedding table", missing_tokens.len());
    }

    let mut selected: Vec<usize> = (0..m).filter(|&j| scores[j] >= config.sim_threshold).collect();
    if let Some(r) = config.top_r {
        // Stable sort keeps ascending index order among equal scores.
        selected.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        selected.truncate(r);
        selected.sort_unstable();
    }

    TokenAffinity {
        scores,
        triggered: !selected.is_empty(),
        selected,
        matched_anchors: matched.into_iter().collect(),
        missing_tokens,
        missing_anchors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_vocabulary_has_34_anchors_in_six_groups() {
        let sizes: Vec<usize> = ANCHOR_CATEGORIES.iter().map(|(_, w)| w.len()).collect();
        assert_eq!(sizes, vec![12, 4, 5, 5, 3, 5]);
        let set = AnchorSet::builtin();
        assert_eq!(set.len(), 34);
        let unique: BTreeSet<_> = set.anchors().iter().collect();
        assert_eq!(unique.len(), 34);
        assert!(set.anchors().contains(&"cinematic".to_string()));
        assert!(set.anchors().contains(&"depth of field".to_string()));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn tokenizer_lowercases_and_strips_punctuation() {
        let p = PromptTokens::tokenize("A Cinematic, highly-detailed portrait!! of a cat's \"eye\" ...").unwrap();
        assert_eq!(
            p.tokens(),
            &["a", "cinematic", "highly-detailed", "portrait", "of", "a", "cat's", "eye"]
        );
        assert!(PromptTokens::tokenize(" ... !! ").is_err());
    }

    #[test]
    fn synthetic_embedding_is_deterministic_unit_norm() {
        let a = synthetic_embedding("cinematic", 16, 7);
        assert_eq!(a, synthetic_embedding("cinematic", 16, 7));
        assert!((a.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        let b = synthetic_embedding("intricate", 16, 7);
        assert!(cosine_similarity(&a, &b).unwrap() < 1.0);
        assert_ne!(a, synthetic_embedding("cinematic", 16, 8));
    }

    #[test]
    fn literal_anchor_word_triggers() {
        let anchors = AnchorSet::builtin();
        let prompt = PromptTokens::tokenize("a cinematic shot of a lighthouse").unwrap();
        let table = EmbeddingTable::synthetic(
            anchors.anchors().iter().map(String::as_str).chain(prompt.tokens().iter().map(String::as_str)),
            32,
            1,
        );
        let aff = score_tokens(&prompt, &anchors, &table, &ScoringConfig::default());
        assert!((aff.scores[1] - 1.0).abs() < 1e-12);
        assert!(aff.triggered);
        assert!(aff.selected.contains(&1));
    }

    #[test]
    fn orthogonal_prompt_does_not_trigger() {
        let mut table = EmbeddingTable::new(4);
        table.insert("anchor", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        table.insert("x", vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        table.insert("y", vec![0.0, 0.0, 0.0, 2.0]).unwrap();
        let aff = score_tokens(
            &PromptTokens::from_tokens(["x", "y"]).unwrap(),
            &AnchorSet::new(["anchor"]).unwrap(),
            &table,
            &ScoringConfig::default(),
        );
        assert!(!aff.triggered);
        assert!(aff.selected.is_empty());
        assert_eq!(aff.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn scores_match_exhaustive_pairwise_max() {
        let tokens = ["t0", "t1", "t2", "t3", "t4"];
        let anchor_words = ["a0", "a1", "a2"];
        let mut table = EmbeddingTable::new(3);
        let vecs: [[f64; 3]; 8] = [
            [1.0, 0.2, -0.3],
            [0.1, 1.0, 0.4],
            [-0.5, 0.5, 0.5],
            [0.9, 0.1, 0.0],
            [0.0, -1.0, 0.2],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.3, 0.3, 0.9],
        ];
        for (t, v) in tokens.iter().chain(&anchor_words).zip(&vecs) {
            table.insert(*t, v.to_vec()).unwrap();
        }
        let aff = score_tokens(
            &PromptTokens::from_tokens(tokens).unwrap(),
            &AnchorSet::new(anchor_words).unwrap(),
            &table,
            &ScoringConfig::default(),
        );
        for (j, t) in tokens.iter().enumerate() {
            let u = table.get(t).unwrap();
            let mut best = f64::NEG_INFINITY;
            for a in &anchor_words {
                let v = table.get(a).unwrap();
                let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                best = best.max(dot / (nu * nv));
            }
            assert!((aff.scores[j] - best).abs() < 1e-12, "token {j}");
        }
    }

    #[test]
    fn missing_tokens_score_minus_one_and_are_flagged() {
        let mut table = EmbeddingTable::new(2);
        table.insert("bokeh", vec![1.0, 0.0]).unwrap();
        let aff = score_tokens(
            &PromptTokens::from_tokens(["unknown", "bokeh"]).unwrap(),
            &AnchorSet::new(["bokeh", "vivid"]).unwrap(),
            &table,
            &ScoringConfig::default(),
        );
        assert_eq!(aff.scores[0], -1.0);
        assert_eq!(aff.missing_tokens, vec![0]);
        assert_eq!(aff.missing_anchors, vec!["vivid".to_string()]);
        assert_eq!(aff.selected, vec![1]);
    }

    #[test]
    fn multi_word_anchor_matches_a_window() {
        let anchors = AnchorSet::builtin();
        let prompt = PromptTokens::tokenize("castle with depth of field and fog").unwrap();
        let table = EmbeddingTable::synthetic(
            anchors.anchors().iter().map(String::as_str).chain(prompt.tokens().iter().map(String::as_str)),
            64,
            3,
        );
        let aff = score_tokens(&prompt, &anchors, &table, &ScoringConfig::default());
        assert_eq!(aff.selected, vec![2, 3, 4]);
        let k = anchors.anchors().iter().position(|a| a == "depth of field").unwrap();
        assert!(aff.matched_anchors.contains(&k));
    }

    #[test]
    fn top_r_keeps_highest_scores_with_index_tiebreak() {
        let mut table = EmbeddingTable::new(2);
        table.insert("a", vec![1.0, 0.0]).unwrap();
        table.insert("p", vec![1.0, 0.0]).unwrap();
        table.insert("q", vec![0.9, 0.1]).unwrap();
        table.insert("r", vec![1.0, 0.0]).unwrap();
        let prompt = PromptTokens::from_tokens(["q", "p", "r"]).unwrap();
        let cfg = ScoringConfig { sim_threshold: 0.6, top_r: Some(1) };
        let aff = score_tokens(&prompt, &AnchorSet::new(["a"]).unwrap(), &table, &cfg);
        assert_eq!(aff.selected, vec![1]);
    }

    #[test]
    fn table_loading() {
        let p = Path::new("t.tsv");
        let loaded = parse_embedding_table("# header\nfoo\t1 2 3 4\nbar\t1e-1 0 0 -2.5E2\n", p).unwrap();
        assert_eq!(loaded.table.dim(), 4);
        assert_eq!(loaded.table.len(), 2);
        assert!(loaded.warnings.is_empty());

        assert!(matches!(parse_embedding_table("", p), Err(Error::Format(_))));

        let dup = parse_embedding_table("foo\t1 2\nfoo\t3 4\n", p).unwrap();
        assert_eq!(dup.table.len(), 1);
        assert_eq!(dup.warnings.len(), 1);
        assert_eq!(dup.table.get("foo").unwrap(), &[3.0, 4.0]);

        match parse_embedding_table("foo\t1 2\nbar\t1 x\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_embedding_table("foo\t1 2\nbar\t1 2 3\n", p), Err(Error::Format(_))));
        assert!(matches!(parse_embedding_table("no tab here\n", p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn text_round_trip() {
        let t = EmbeddingTable::synthetic(["soft bokeh", "cat"], 5, 9);
        let back = parse_embedding_table(&t.to_text(), Path::new("x")).unwrap().table;
        assert_eq!(back, t);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn fixture(seed: u64) -> (PromptTokens, AnchorSet, EmbeddingTable) {
        let prompt = PromptTokens::from_tokens((0..6).map(|i| format!("w{i}"))).unwrap();
        let anchors = AnchorSet::new((0..5).map(|i| format!("a{i}"))).unwrap();
        // Low dimension so similarities spread across [-1, 1].
        let table = EmbeddingTable::synthetic(
            prompt.tokens().iter().chain(anchors.anchors()).map(String::as_str),
            3,
            seed,
        );
        (prompt, anchors, table)
    }

    proptest! {
        #[test]
        fn scores_ignore_anchor_order(seed in any::<u64>(), rot in 0usize..5) {
            let (prompt, anchors, table) = fixture(seed);
            let mut rotated = anchors.anchors().to_vec();
            rotated.rotate_left(rot);
            let a = score_tokens(&prompt, &anchors, &table, &ScoringConfig::default());
            let b = score_tokens(&prompt, &AnchorSet::new(rotated).unwrap(), &table, &ScoringConfig::default());
            prop_assert_eq!(a.scores, b.scores);
            prop_assert_eq!(a.selected, b.selected);
        }

        #[test]
        fn scores_invariant_to_positive_scaling(seed in any::<u64>(), scale in 1e-3f64..1e3) {
            let (prompt, anchors, table) = fixture(seed);
            let mut scaled = EmbeddingTable::new(table.dim());
            for t in prompt.tokens().iter().chain(anchors.anchors()) {
                let v = table.get(t).unwrap().iter().map(|x| x * scale).collect();
                scaled.insert(t.clone(), v).unwrap();
            }
            let a = score_tokens(&prompt, &anchors, &table, &ScoringConfig::default());
            let b = score_tokens(&prompt, &anchors, &scaled, &ScoringConfig::default());
            for (x, y) in a.scores.iter().zip(&b.scores) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn raising_threshold_shrinks_selection(seed in any::<u64>(), lo in -1.0f64..1.0, bump in 0.0f64..1.0) {
            let (prompt, anchors, table) = fixture(seed);
            let low = score_tokens(&prompt, &anchors, &table, &ScoringConfig { sim_threshold: lo, top_r: None });
            let high = score_tokens(&prompt, &anchors, &table, &ScoringConfig { sim_threshold: lo + bump, top_r: None });
            let low_set: BTreeSet<_> = low.selected.iter().collect();
            prop_assert!(high.selected.iter().all(|j| low_set.contains(j)));
            prop_assert_eq!(low.triggered, !low.selected.is_empty());
        }
    }
}
