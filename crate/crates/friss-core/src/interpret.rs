//! Post-hoc interpretation of a trained model: per-(frame, view) descriptor
//! reports ranked by inverse-document frequency, and per-span frame
//! highlighting exported as standalone HTML.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{descriptor_distribution, gumbel_sample};
use crate::classifier::{predict, InferenceCombine};
use crate::corpus::{Document, RoleSpan, View};
use crate::encoding::{encode_document, Encoder};
use crate::error::{FrissError, Result};
use crate::model::ModelParams;

// ---------------------------------------------------------------------------
// Text normalization
// ---------------------------------------------------------------------------

/// Pluggable text normalization for descriptor deduplication. The built-in
/// implementation is deliberately lightweight: lowercase, a fixed stopword
/// list and a suffix-stripping stemmer.
pub trait TextNormalizer {
    fn normalize(&self, text: &str) -> String;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "he",
    "her", "his", "in", "is", "it", "its", "of", "on", "or", "she", "that", "the", "their",
    "they", "this", "to", "was", "were", "will", "with",
];

const SUFFIXES: &[&str] = &["ments", "ment", "ings", "tion", "ing", "edly", "ely", "ies", "ed", "es", "ly", "s"];

pub struct SimpleNormalizer {
    stopwords: HashSet<&'static str>,
}

impl Default for SimpleNormalizer {
    fn default() -> Self {
        Self {
            stopwords: STOPWORDS.iter().copied().collect(),
        }
    }
}

fn stem(word: &str) -> String {
    for suffix in SUFFIXES {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return base.to_string();
            }
        }
    }
    word.to_string()
}

impl TextNormalizer for SimpleNormalizer {
    fn normalize(&self, text: &str) -> String {
        text.split_whitespace()
            .map(|t| {
                t.chars()
                    .filter(|c| c.is_alphanumeric())
                    .collect::<String>()
                    .to_lowercase()
            })
            .filter(|t| !t.is_empty() && !self.stopwords.contains(t.as_str()))
            .map(|t| stem(&t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

// ---------------------------------------------------------------------------
// Descriptor report
// ---------------------------------------------------------------------------

/// How descriptor weights are obtained from a span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DescriptorMode {
    /// Evaluation mode: the plain softmax distribution d.
    EvalD,
    /// One sharpened sample g at a fixed temperature.
    SampledG { tau: f64, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorEntry {
    pub text: String,
    pub idf: f64,
    pub max_weight: f64,
    pub frequency: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorCell {
    pub frame: usize,
    pub view: View,
    pub entries: Vec<DescriptorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorReport {
    pub threshold: f64,
    pub weight_mode: DescriptorMode,
    pub cells: Vec<DescriptorCell>,
}

/// One span's contribution before thresholding.
pub struct SpanObservation {
    pub view: View,
    pub doc_id: String,
    pub text: String,
    pub weights: Array1<f64>,
}

/// Threshold, deduplicate and rank observations into a report. Ranking is by
/// descending idf with ties broken by descending frequency, then text.
pub fn build_report(
    observations: &[SpanObservation],
    k: usize,
    threshold: f64,
    mode: DescriptorMode,
    normalizer: &dyn TextNormalizer,
) -> DescriptorReport {
    struct Acc {
        docs: HashSet<String>,
        max_weight: f64,
        frequency: usize,
    }
    // (frame, view) -> normalized text -> accumulator, plus per-cell doc sets.
    let mut cells: BTreeMap<(usize, usize), BTreeMap<String, Acc>> = BTreeMap::new();
    let mut cell_docs: BTreeMap<(usize, usize), HashSet<String>> = BTreeMap::new();
    for obs in observations {
        for (frame, &w) in obs.weights.iter().enumerate() {
            if w <= threshold {
                continue;
            }
            let text = normalizer.normalize(&obs.text);
            if text.is_empty() {
                continue;
            }
            let key = (frame, obs.view.index());
            cell_docs.entry(key).or_default().insert(obs.doc_id.clone());
            let acc = cells
                .entry(key)
                .or_default()
                .entry(text)
                .or_insert_with(|| Acc {
                    docs: HashSet::new(),
                    max_weight: f64::NEG_INFINITY,
                    frequency: 0,
                });
            acc.docs.insert(obs.doc_id.clone());
            acc.max_weight = acc.max_weight.max(w);
            acc.frequency += 1;
        }
    }
    let mut out = Vec::new();
    for frame in 0..k {
        for view in View::ALL {
            let key = (frame, view.index());
            let mut entries: Vec<DescriptorEntry> = match cells.get(&key) {
                Some(map) => {
                    let n_cell = cell_docs[&key].len() as f64;
                    map.iter()
                        .map(|(text, acc)| DescriptorEntry {
                            text: text.clone(),
                            // Add-one smoothing on document frequency.
                            idf: (n_cell / (1.0 + acc.docs.len() as f64)).ln(),
                            max_weight: acc.max_weight,
                            frequency: acc.frequency,
                        })
                        .collect()
                }
                None => {
                    log::debug!("no spans above threshold for frame {frame}, view {}", view.tag());
                    Vec::new()
                }
            };
            entries.sort_by(|a, b| {
                b.idf
                    .partial_cmp(&a.idf)
                    .unwrap()
                    .then(b.frequency.cmp(&a.frequency))
                    .then(a.text.cmp(&b.text))
            });
            out.push(DescriptorCell { frame, view, entries });
        }
    }
    DescriptorReport {
        threshold,
        weight_mode: mode,
        cells: out,
    }
}

/// Collect per-span descriptor weights over a corpus and build the report.
/// Documents must already be filtered.
pub fn extract_descriptors(
    params: &ModelParams,
    encoder: &dyn Encoder,
    docs: &[Document],
    threshold: f64,
    mode: DescriptorMode,
    normalizer: &dyn TextNormalizer,
) -> Result<DescriptorReport> {
    let k = params.dims().k;
    let mut observations = Vec::new();
    let mut rng = match mode {
        DescriptorMode::SampledG { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        DescriptorMode::EvalD => None,
    };
    for doc in docs {
        let encoded = encode_document(encoder, doc)?;
        for span in &encoded.spans {
            let d = descriptor_distribution(params, &span.v_tilde, span.view)?;
            let weights = match mode {
                DescriptorMode::EvalD => d,
                DescriptorMode::SampledG { tau, .. } => {
                    gumbel_sample(&d, tau, rng.as_mut().unwrap())?
                }
            };
            observations.push(SpanObservation {
                view: span.view,
                doc_id: doc.doc_id.clone(),
                text: doc.span_text(&span.source.span),
                weights,
            });
        }
    }
    Ok(build_report(&observations, k, threshold, mode, normalizer))
}

// ---------------------------------------------------------------------------
// Highlighting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanHighlight {
    pub span: RoleSpan,
    pub text: String,
    /// argmax of the span's descriptor distribution; ties go to the lowest id.
    pub frame: usize,
    /// max of the distribution, in [1/K, 1].
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightedDocument {
    pub doc_id: String,
    pub gold: Option<usize>,
    pub predicted: usize,
    pub sentences: Vec<Vec<String>>,
    pub spans: Vec<SpanHighlight>,
}

/// The (argmax, max) of a distribution, with deterministic low-id tie-breaks.
pub fn span_assignment(d: &Array1<f64>) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in d.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        } else if v == best_val {
            log::debug!("argmax tie between frames {best} and {i}; keeping {best}");
        }
    }
    (best, best_val)
}

/// Tag every span of a filtered document with its most associated frame.
pub fn highlight_document(
    params: &ModelParams,
    encoder: &dyn Encoder,
    doc: &Document,
    views: &[View],
    combine: InferenceCombine,
) -> Result<HighlightedDocument> {
    let encoded = encode_document(encoder, doc)?;
    let prediction = predict(params, &encoded, views, combine)?;
    let mut spans = Vec::new();
    for span in &encoded.spans {
        let d = descriptor_distribution(params, &span.v_tilde, span.view)?;
        let (frame, confidence) = span_assignment(&d);
        spans.push(SpanHighlight {
            span: span.source.span,
            text: doc.span_text(&span.source.span),
            frame,
            confidence,
        });
    }
    Ok(HighlightedDocument {
        doc_id: doc.doc_id.clone(),
        gold: doc.label,
        predicted: prediction.combined_argmax,
        sentences: doc.sentences.clone(),
        spans,
    })
}

// ---------------------------------------------------------------------------
// HTML export
// ---------------------------------------------------------------------------

/// An evenly-hue-spaced palette of `k` hex colors.
pub fn default_palette(k: usize) -> HashMap<usize, String> {
    (0..k)
        .map(|i| {
            let h = i as f64 / k as f64 * 360.0;
            let (r, g, b) = hsl_to_rgb(h, 0.65, 0.55);
            (i, format!("#{r:02x}{g:02x}{b:02x}"))
        })
        .collect()
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to8 = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to8(r1), to8(g1), to8(b1))
}

fn parse_hex(color: &str) -> Result<(u8, u8, u8)> {
    let hex = color.strip_prefix('#').unwrap_or(color);
    if hex.len() != 6 {
        return Err(FrissError::InvalidArgument(format!("bad color {color}")));
    }
    let byte = |i: usize| {
        u8::from_str_radix(&hex[i..i + 2], 16)
            .map_err(|_| FrissError::InvalidArgument(format!("bad color {color}")))
    };
    Ok((byte(0)?, byte(2)?, byte(4)?))
}

/// Linear map of confidence from [1/K, 1] to opacity [0.2, 1.0].
pub fn confidence_opacity(confidence: f64, k: usize) -> f64 {
    let lo = 1.0 / k as f64;
    let t = ((confidence - lo) / (1.0 - lo)).clamp(0.0, 1.0);
    0.2 + 0.8 * t
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render a highlighted document as a standalone HTML page. Each span is a
/// `<mark>` with machine-readable `data-view`, `data-frame` and
/// `data-opacity` attributes; the view tag is rendered as a superscript.
/// The palette must cover all `k` frames.
pub fn export_html(
    h: &HighlightedDocument,
    palette: &HashMap<usize, String>,
    k: usize,
) -> Result<String> {
    for frame in 0..k {
        if !palette.contains_key(&frame) {
            return Err(FrissError::InvalidArgument(format!(
                "palette missing entry for frame {frame}"
            )));
        }
    }
    let mut body = String::new();
    for (si, tokens) in h.sentences.iter().enumerate() {
        // Sentence spans sorted by start; overlapping spans each get their own
        // mark, laid out greedily with overlaps appended after the sentence.
        let mut sentence_spans: Vec<&SpanHighlight> = h
            .spans
            .iter()
            .filter(|s| s.span.sentence_index == si)
            .collect();
        sentence_spans.sort_by_key(|s| (s.span.token_start, s.span.token_end, s.span.view.index()));
        let mut inline = Vec::new();
        let mut overflow = Vec::new();
        let mut covered = 0usize;
        for s in sentence_spans {
            if s.span.token_start >= covered {
                covered = s.span.token_end;
                inline.push(s);
            } else {
                overflow.push(s);
            }
        }
        body.push_str("<p class=\"sent\">");
        let mut cursor = 0usize;
        for s in &inline {
            if cursor < s.span.token_start {
                body.push_str(&escape(&tokens[cursor..s.span.token_start].join(" ")));
                body.push(' ');
            }
            body.push_str(&render_mark(s, palette, k)?);
            body.push(' ');
            cursor = s.span.token_end;
        }
        if cursor < tokens.len() {
            body.push_str(&escape(&tokens[cursor..].join(" ")));
        }
        body.push_str("</p>\n");
        if !overflow.is_empty() {
            body.push_str("<p class=\"overlap\">");
            for s in &overflow {
                body.push_str(&render_mark(s, palette, k)?);
                body.push(' ');
            }
            body.push_str("</p>\n");
        }
    }
    let gold = h
        .gold
        .map(|g| g.to_string())
        .unwrap_or_else(|| "unlabeled".into());
    Ok(format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\
<style>body{{font-family:serif;max-width:48em;margin:2em auto}}\
mark{{padding:0 .15em;border-radius:.2em}}sup{{font-size:.6em}}\
.overlap{{font-size:.85em;color:#444}}</style>\
<title>{}</title></head>\n<body>\n<h1>{}</h1>\n\
<p class=\"meta\">gold: {} &middot; predicted: {}</p>\n{}</body></html>\n",
        escape(&h.doc_id),
        escape(&h.doc_id),
        gold,
        h.predicted,
        body
    ))
}

fn render_mark(s: &SpanHighlight, palette: &HashMap<usize, String>, k: usize) -> Result<String> {
    let color = palette
        .get(&s.frame)
        .ok_or_else(|| FrissError::InvalidArgument(format!("palette missing entry for frame {}", s.frame)))?;
    let (r, g, b) = parse_hex(color)?;
    let opacity = confidence_opacity(s.confidence, k);
    Ok(format!(
        "<mark data-view=\"{}\" data-frame=\"{}\" data-opacity=\"{:.4}\" \
style=\"background-color:rgba({},{},{},{:.4})\">{}<sup>{}</sup></mark>",
        s.span.view.tag(),
        s.frame,
        opacity,
        r,
        g,
        b,
        opacity,
        escape(&s.text),
        s.span.view.tag(),
    ))
}

/// Recover (text, view tag, frame, opacity) from HTML produced by
/// [`export_html`]. Used by round-trip tests and kept simple on purpose: it
/// only understands this module's own markup.
pub fn parse_marks(html: &str) -> Vec<(String, String, usize, f64)> {
    let mut out = Vec::new();
    let mut rest = html;
    while let Some(start) = rest.find("<mark ") {
        let tag_end = match rest[start..].find('>') {
            Some(i) => start + i + 1,
            None => break,
        };
        let attrs = &rest[start..tag_end];
        let get = |name: &str| -> Option<String> {
            let pat = format!("{name}=\"");
            let i = attrs.find(&pat)? + pat.len();
            let j = attrs[i..].find('"')?;
            Some(attrs[i..i + j].to_string())
        };
        let close = match rest[tag_end..].find("<sup>") {
            Some(i) => tag_end + i,
            None => break,
        };
        let text = rest[tag_end..close]
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
        if let (Some(view), Some(frame), Some(op)) = (get("data-view"), get("data-frame"), get("data-opacity")) {
            if let (Ok(frame), Ok(op)) = (frame.parse(), op.parse()) {
                out.push((text, view, frame, op));
            }
        }
        rest = &rest[tag_end..];
    }
    out
}
