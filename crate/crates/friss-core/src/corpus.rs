//! Corpus ingestion, validation, filtering and split construction.
//!
//! Documents arrive pre-annotated with semantic role spans (one JSON object
//! per line, see [`load_corpus`]). The filter enforces the training limits
//! (sentence/token/predicate caps and the predicate/argument sentence rule)
//! before anything downstream sees a document.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FrissError, Result};

/// Semantic role channel of a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "pred")]
    Pred,
    #[serde(rename = "arg0")]
    Arg0,
    #[serde(rename = "arg1")]
    Arg1,
}

impl View {
    pub const ALL: [View; 3] = [View::Pred, View::Arg0, View::Arg1];

    pub fn index(self) -> usize {
        match self {
            View::Pred => 0,
            View::Arg0 => 1,
            View::Arg1 => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            View::Pred => "p",
            View::Arg0 => "a0",
            View::Arg1 => "a1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub id: usize,
    pub name: String,
}

/// Bijective id <-> name mapping over the frame inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRegistry {
    labels: Vec<FrameLabel>,
}

/// The 15 generic media frame categories.
pub const MFC_FRAMES: [&str; 15] = [
    "Economic",
    "Capacity and Resources",
    "Morality",
    "Fairness and Equality",
    "Legality, Constitutionality, Jurisdiction",
    "Policy Prescription and Evaluation",
    "Crime and Punishment",
    "Security and Defense",
    "Health and Safety",
    "Quality of Life",
    "Cultural Identity",
    "Public Sentiment",
    "Political",
    "External Regulation and Reputation",
    "Other",
];

impl LabelRegistry {
    pub fn mfc_default() -> Self {
        Self::from_names(MFC_FRAMES.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let distinct: BTreeSet<&String> = names.iter().collect();
        if distinct.len() != names.len() {
            return Err(FrissError::Config("duplicate frame names in registry".into()));
        }
        if names.is_empty() {
            return Err(FrissError::Config("empty label registry".into()));
        }
        Ok(Self {
            labels: names
                .into_iter()
                .enumerate()
                .map(|(id, name)| FrameLabel { id, name })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn name_of(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(|l| l.name.as_str())
    }

    pub fn labels(&self) -> &[FrameLabel] {
        &self.labels
    }
}

/// One role assignment: a token range in one sentence, tied to a predicate
/// instance (`predicate_group`) of that sentence. `token_end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpan {
    pub view: View,
    pub sentence_index: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub predicate_group: usize,
}

impl RoleSpan {
    pub fn len(&self) -> usize {
        self.token_end.saturating_sub(self.token_start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub spans: Vec<RoleSpan>,
    /// Frame id in the label registry; `None` for unlabeled documents.
    pub label: Option<usize>,
}

impl Document {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }

    /// Spans of one sentence grouped by predicate instance.
    pub fn groups_of_sentence(&self, sentence: usize) -> BTreeMap<usize, Vec<&RoleSpan>> {
        let mut groups: BTreeMap<usize, Vec<&RoleSpan>> = BTreeMap::new();
        for s in self.spans.iter().filter(|s| s.sentence_index == sentence) {
            groups.entry(s.predicate_group).or_default().push(s);
        }
        groups
    }

    pub fn span_text(&self, span: &RoleSpan) -> String {
        self.sentences[span.sentence_index][span.token_start..span.token_end].join(" ")
    }
}

/// Caps applied by [`filter_document`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterLimits {
    pub max_sentences: usize,
    pub max_tokens_per_sentence: usize,
    pub max_groups_per_sentence: usize,
}

impl Default for FilterLimits {
    fn default() -> Self {
        Self {
            max_sentences: 32,
            max_tokens_per_sentence: 64,
            max_groups_per_sentence: 10,
        }
    }
}

// ---------------------------------------------------------------------------
// JSONL wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    sentence: usize,
    group: usize,
    view: View,
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    label: Option<String>,
    sentences: Vec<Vec<String>>,
    srl: Vec<SpanRecord>,
}

pub fn validate_document(d: &Document) -> Result<()> {
    let err = |message: String| FrissError::InvalidDocument {
        doc_id: d.doc_id.clone(),
        message,
    };
    if d.sentences.is_empty() {
        return Err(err("document has no sentences".into()));
    }
    let mut seen: BTreeSet<(usize, usize, View)> = BTreeSet::new();
    for s in &d.spans {
        if s.sentence_index >= d.sentences.len() {
            return Err(err(format!("span sentence index {} out of range", s.sentence_index)));
        }
        if s.token_end <= s.token_start {
            return Err(err(format!(
                "span token_end {} <= token_start {}",
                s.token_end, s.token_start
            )));
        }
        let n = d.sentences[s.sentence_index].len();
        if s.token_end > n {
            return Err(err(format!(
                "span [{}, {}) exceeds sentence {} length {}",
                s.token_start, s.token_end, s.sentence_index, n
            )));
        }
        if !seen.insert((s.sentence_index, s.predicate_group, s.view)) {
            return Err(err(format!(
                "duplicate {:?} span in sentence {} group {}",
                s.view, s.sentence_index, s.predicate_group
            )));
        }
    }
    Ok(())
}

/// Load a JSONL corpus, validating every record. Malformed records are
/// rejected with their line number.
/// Parse and validate a single document from its JSON wire form.
pub fn parse_document(json: &str, registry: &LabelRegistry) -> Result<Document> {
    let rec: DocRecord = serde_json::from_str(json)?;
    let label = match rec.label {
        Some(name) => Some(
            registry
                .id_of(&name)
                .ok_or_else(|| FrissError::UnknownFrame(name))?,
        ),
        None => None,
    };
    let doc = Document {
        doc_id: rec.doc_id,
        sentences: rec.sentences,
        spans: rec
            .srl
            .into_iter()
            .map(|s| RoleSpan {
                view: s.view,
                sentence_index: s.sentence,
                token_start: s.start,
                token_end: s.end,
                predicate_group: s.group,
            })
            .collect(),
        label,
    };
    validate_document(&doc)?;
    Ok(doc)
}

pub fn load_corpus(path: &Path, registry: &LabelRegistry) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_document(&line, registry).map_err(|e| FrissError::CorpusLoad {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Write documents back out in the same JSONL schema [`load_corpus`] reads.
pub fn save_corpus(docs: &[Document], registry: &LabelRegistry, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for d in docs {
        let rec = DocRecord {
            doc_id: d.doc_id.clone(),
            label: d.label.map(|id| registry.name_of(id).unwrap_or("?").to_string()),
            sentences: d.sentences.clone(),
            srl: d
                .spans
                .iter()
                .map(|s| SpanRecord {
                    sentence: s.sentence_index,
                    group: s.predicate_group,
                    view: s.view,
                    start: s.token_start,
                    end: s.token_end,
                })
                .collect(),
        };
        serde_json::to_writer(&mut file, &rec)?;
        writeln!(file)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Apply the training caps to one document.
///
/// Order: keep the first `max_sentences` sentences, truncate each to
/// `max_tokens_per_sentence` tokens, clip or drop spans against the truncated
/// sentence (a span keeps its clipped range only if at least half of its
/// tokens survive), drop groups without a predicate span, cap the number of
/// groups per sentence, then remove sentences that have no group with a
/// predicate and at least one argument. Idempotent.
pub fn filter_document(d: &Document, limits: &FilterLimits) -> Result<Document> {
    let n_sent = d.sentences.len().min(limits.max_sentences);
    let mut sentences: Vec<Vec<String>> = d.sentences[..n_sent]
        .iter()
        .map(|s| s[..s.len().min(limits.max_tokens_per_sentence)].to_vec())
        .collect();

    // Clip or drop spans against the truncated token sequences.
    let mut spans: Vec<RoleSpan> = Vec::new();
    for s in &d.spans {
        if s.sentence_index >= n_sent {
            continue;
        }
        let cap = sentences[s.sentence_index].len();
        if s.token_start >= cap {
            continue;
        }
        let clipped_end = s.token_end.min(cap);
        let surviving = clipped_end - s.token_start;
        // Keep a boundary-straddling span only if >= 50% of it survives.
        if surviving * 2 < s.len() {
            continue;
        }
        spans.push(RoleSpan {
            token_end: clipped_end,
            ..*s
        });
    }

    // Per sentence: drop groups without a PRED span, cap group count, and
    // decide whether the sentence survives.
    let mut keep_sentence = vec![false; n_sent];
    let mut kept_spans: Vec<RoleSpan> = Vec::new();
    for sent in 0..n_sent {
        let mut groups: BTreeMap<usize, Vec<RoleSpan>> = BTreeMap::new();
        for s in spans.iter().filter(|s| s.sentence_index == sent) {
            groups.entry(s.predicate_group).or_default().push(*s);
        }
        groups.retain(|_, members| members.iter().any(|s| s.view == View::Pred));
        let capped: Vec<(usize, Vec<RoleSpan>)> = groups
            .into_iter()
            .take(limits.max_groups_per_sentence)
            .collect();
        let usable = capped.iter().any(|(_, members)| {
            members.iter().any(|s| s.view == View::Arg0 || s.view == View::Arg1)
        });
        if usable {
            keep_sentence[sent] = true;
            for (_, members) in capped {
                kept_spans.extend(members);
            }
        }
    }

    // Reindex surviving sentences.
    let mut new_index = vec![usize::MAX; n_sent];
    let mut next = 0usize;
    for (i, keep) in keep_sentence.iter().enumerate() {
        if *keep {
            new_index[i] = next;
            next += 1;
        }
    }
    sentences = sentences
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep_sentence[*i])
        .map(|(_, s)| s)
        .collect();
    for s in &mut kept_spans {
        s.sentence_index = new_index[s.sentence_index];
    }
    kept_spans.sort_by_key(|s| (s.sentence_index, s.predicate_group, s.view));

    if sentences.is_empty() {
        return Err(FrissError::UnusableDocument(d.doc_id.clone()));
    }
    Ok(Document {
        doc_id: d.doc_id.clone(),
        sentences,
        spans: kept_spans,
        label: d.label,
    })
}

// ---------------------------------------------------------------------------
// Splits and batches
// ---------------------------------------------------------------------------

/// Stratified fold assignment over document ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub folds: Vec<Vec<String>>,
    pub unlabeled: Vec<String>,
}

impl CorpusSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }
}

/// Partition labeled documents into `k` folds preserving the per-class
/// distribution within one document per class. Unlabeled documents go into
/// the `unlabeled` set. Deterministic under `seed`.
pub fn stratified_folds(docs: &[Document], k: usize, seed: u64) -> Result<CorpusSplit> {
    if k < 1 {
        return Err(FrissError::InvalidArgument("fold count must be >= 1".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<&Document>> = BTreeMap::new();
    let mut unlabeled = Vec::new();
    for d in docs {
        match d.label {
            Some(y) => by_class.entry(y).or_default().push(d),
            None => unlabeled.push(d.doc_id.clone()),
        }
    }
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (class, members) in by_class {
        let mut ids: Vec<String> = members.iter().map(|d| d.doc_id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        ids.shuffle(&mut rng);
        if ids.len() < k {
            log::warn!(
                "class {class} has {} documents for {k} folds; placing greedily",
                ids.len()
            );
        }
        // Deal round-robin, starting from the currently smallest folds so
        // overall fold sizes stay balanced.
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&f| (folds[f].len(), f));
        for (i, id) in ids.into_iter().enumerate() {
            folds[order[i % k]].push(id);
        }
    }
    Ok(CorpusSplit { folds, unlabeled })
}

/// Shuffle `n_docs` indices under a seeded RNG and chunk them into batches.
/// The final short batch is retained. Callers derive a fresh seed per epoch.
pub fn make_batches(n_docs: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(FrissError::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n_docs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
