//! Instruction tokenization, phrase extraction, and vocabularies.
//!
//! Parsing is lexicon-driven: a [`Lexicon`] maps surface forms to either
//! a direction phrase or a landmark category, and [`Lexicon::parse`]
//! scans a tokenized instruction left to right taking the longest match
//! at each position. Matches never overlap and the scan is fully
//! deterministic, so generated instructions parse back to the exact
//! spans they were assembled from.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../assets/default_lexicon.toml");

/// Lowercases and splits text into alphanumeric runs; every other
/// non-whitespace character becomes its own single-character token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// What a matched surface form denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhraseKind {
    Direction,
    Landmark,
}

/// One non-overlapping phrase match over the token stream.
/// `label` is the canonical direction pattern or the landmark category;
/// `start..end` are token indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseMatch {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub label: String,
}

/// Result of parsing one instruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedInstruction {
    pub tokens: Vec<String>,
    pub directions: Vec<PhraseMatch>,
    pub landmarks: Vec<PhraseMatch>,
}

impl ParsedInstruction {
    /// Indices of every token inside a direction phrase, ascending.
    pub fn direction_token_ids(&self) -> Vec<usize> {
        span_token_ids(&self.directions)
    }

    /// Indices of every token inside a landmark phrase, ascending.
    pub fn landmark_token_ids(&self) -> Vec<usize> {
        span_token_ids(&self.landmarks)
    }
}

fn span_token_ids(spans: &[PhraseMatch]) -> Vec<usize> {
    let mut ids = Vec::new();
    for s in spans {
        ids.extend(s.start..s.end);
    }
    ids
}

#[derive(Debug)]
struct SurfaceEntry {
    kind: PhraseKind,
    label: String,
}

#[derive(Deserialize)]
struct LexiconFile {
    directions: Vec<String>,
    #[serde(default)]
    blocklist: Vec<String>,
    landmarks: BTreeMap<String, Vec<String>>,
}

/// Surface-form dictionary for instruction parsing.
#[derive(Debug)]
pub struct Lexicon {
    surfaces: BTreeMap<String, SurfaceEntry>,
    max_phrase_tokens: usize,
    categories: Vec<String>,
    blocklist: BTreeSet<String>,
    directions: Vec<String>,
}

impl Lexicon {
    /// The lexicon embedded in the binary.
    pub fn default_lexicon() -> Lexicon {
        Lexicon::from_toml_str(DEFAULT_LEXICON, "<builtin lexicon>")
            .expect("builtin lexicon must be valid")
    }

    pub fn from_path(path: &Path) -> Result<Lexicon> {
        let pd = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(pd.clone(), e))?;
        Lexicon::from_toml_str(&text, &pd)
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Lexicon> {
        let file: LexiconFile = toml::from_str(text)
            .map_err(|e| Error::format(origin, format!("bad lexicon: {e}")))?;
        let mut surfaces: BTreeMap<String, SurfaceEntry> = BTreeMap::new();
        let mut max_phrase_tokens = 0;
        let mut add = |surface: &str, kind: PhraseKind, label: &str| -> Result<usize> {
            let toks = tokenize(surface);
            if toks.is_empty() {
                return Err(Error::Config(format!(
                    "{origin}: empty surface form under {label}"
                )));
            }
            let key = toks.join(" ");
            if surfaces.contains_key(&key) {
                return Err(Error::Config(format!(
                    "{origin}: surface form \"{key}\" appears more than once"
                )));
            }
            surfaces.insert(
                key,
                SurfaceEntry {
                    kind,
                    label: label.to_string(),
                },
            );
            Ok(toks.len())
        };
        let mut directions = Vec::new();
        for d in &file.directions {
            let n = add(d, PhraseKind::Direction, d)?;
            max_phrase_tokens = max_phrase_tokens.max(n);
            directions.push(d.clone());
        }
        for (category, forms) in &file.landmarks {
            if forms.is_empty() {
                return Err(Error::Config(format!(
                    "{origin}: category {category} has no surface forms"
                )));
            }
            for form in forms {
                let n = add(form, PhraseKind::Landmark, category)?;
                max_phrase_tokens = max_phrase_tokens.max(n);
            }
        }
        let categories: Vec<String> = file.landmarks.keys().cloned().collect();
        let blocklist: BTreeSet<String> = file.blocklist.iter().cloned().collect();
        for b in &blocklist {
            if !file.landmarks.contains_key(b) {
                return Err(Error::Config(format!(
                    "{origin}: blocklist entry {b} is not a landmark category"
                )));
            }
        }
        if categories.len() == blocklist.len() {
            return Err(Error::Config(format!(
                "{origin}: every category is blocklisted; nothing can be a goal"
            )));
        }
        directions.sort();
        Ok(Lexicon {
            surfaces,
            max_phrase_tokens,
            categories,
            blocklist,
            directions,
        })
    }

    /// All landmark categories, sorted, including blocklisted ones.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Categories eligible as navigation goals.
    pub fn goal_categories(&self) -> Vec<String> {
        self.categories
            .iter()
            .filter(|c| !self.blocklist.contains(*c))
            .cloned()
            .collect()
    }

    pub fn is_blocked(&self, category: &str) -> bool {
        self.blocklist.contains(category)
    }

    /// Surface forms that resolve to `category`, sorted.
    pub fn surfaces_of(&self, category: &str) -> Vec<&str> {
        self.surfaces
            .iter()
            .filter(|(_, e)| e.kind == PhraseKind::Landmark && e.label == category)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Canonical direction patterns, sorted.
    pub fn directions(&self) -> &[String] {
        &self.directions
    }

    /// Tokenizes and extracts direction and landmark phrases. Matching
    /// is greedy longest-first from left to right; blocklisted
    /// categories are recognized but not reported.
    pub fn parse(&self, text: &str) -> ParsedInstruction {
        let tokens = tokenize(text);
        let mut directions = Vec::new();
        let mut landmarks = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.max_phrase_tokens.min(tokens.len() - i);
            let mut matched = None;
            for len in (1..=longest).rev() {
                let key = tokens[i..i + len].join(" ");
                if let Some(entry) = self.surfaces.get(&key) {
                    matched = Some((len, key, entry));
                    break;
                }
            }
            match matched {
                Some((len, surface, entry)) => {
                    let m = PhraseMatch {
                        start: i,
                        end: i + len,
                        surface,
                        label: entry.label.clone(),
                    };
                    match entry.kind {
                        PhraseKind::Direction => directions.push(m),
                        PhraseKind::Landmark => {
                            if !self.blocklist.contains(&entry.label) {
                                landmarks.push(m);
                            }
                        }
                    }
                    i += len;
                }
                None => i += 1,
            }
        }
        ParsedInstruction {
            tokens,
            directions,
            landmarks,
        }
    }
}

/// Token-to-id mapping. An open vocabulary reserves id 0 for unknown
/// tokens; a closed one rejects lookups of unknown items.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    items: Vec<String>,
    open: bool,
}

pub const UNK_TOKEN: &str = "<unk>";

impl Vocab {
    /// Open vocabulary: sorted unique tokens after a leading unknown
    /// marker.
    pub fn open(tokens: impl IntoIterator<Item = String>) -> Vocab {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .filter(|t| t != UNK_TOKEN)
            .collect();
        let mut items = vec![UNK_TOKEN.to_string()];
        items.extend(set);
        Vocab { items, open: true }
    }

    /// Closed vocabulary over a fixed item set.
    pub fn closed(items: impl IntoIterator<Item = String>) -> Vocab {
        let set: BTreeSet<String> = items.into_iter().collect();
        Vocab {
            items: set.into_iter().collect(),
            open: false,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn find(&self, item: &str) -> Option<usize> {
        let tail_start = if self.open { 1 } else { 0 };
        self.items[tail_start..]
            .binary_search_by(|probe| probe.as_str().cmp(item))
            .ok()
            .map(|i| i + tail_start)
    }

    /// Id of an item; open vocabularies map unknowns to 0, closed ones
    /// report a contract error.
    pub fn id(&self, item: &str) -> Result<usize> {
        match self.find(item) {
            Some(i) => Ok(i),
            None if self.open => Ok(0),
            None => Err(Error::contract(format!(
                "item {item} not in closed vocabulary"
            ))),
        }
    }

    pub fn item(&self, id: usize) -> Result<&str> {
        self.items
            .get(id)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::contract(format!("id {id} out of vocabulary range")))
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}
