//! Unified diff ingestion and before/after reconstruction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilang::{AstGraph, AstParser, ParseError};

/// Line inserted for an unknown stretch of the file between hunks when the
/// original file is not available. The mini-language lexer skips it as a
/// comment.
pub const ELIDED_MARKER: &str = "// ...";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineTag {
    Context,
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub tag: LineTag,
    pub text: String,
    /// 1-based line in the old file (context and minus lines).
    pub old_line: Option<usize>,
    /// 1-based line in the new file (context and plus lines).
    pub new_line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<DiffLine>,
}

impl Hunk {
    fn old_side(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| l.tag != LineTag::Plus)
            .map(|l| l.text.as_str())
    }

    fn new_side(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| l.tag != LineTag::Minus)
            .map(|l| l.text.as_str())
    }

    /// First old-file line the hunk covers; a zero-length hunk sits after
    /// `old_start`.
    fn old_first(&self) -> usize {
        if self.old_len == 0 {
            self.old_start + 1
        } else {
            self.old_start
        }
    }

    fn new_first(&self) -> usize {
        if self.new_len == 0 {
            self.new_start + 1
        } else {
            self.new_start
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPatch {
    pub hunks: Vec<Hunk>,
}

impl RawPatch {
    pub fn lines(&self) -> impl Iterator<Item = &DiffLine> {
        self.hunks.iter().flat_map(|h| h.lines.iter())
    }

    pub fn count(&self, tag: LineTag) -> usize {
        self.lines().filter(|l| l.tag == tag).count()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("empty diff")]
    EmptyInput,
    #[error("malformed diff at line {line}: {reason}")]
    MalformedDiff { line: usize, reason: String },
    #[error("context mismatch at old line {line}: expected {expected:?}, found {found:?}")]
    ContextMismatch {
        line: usize,
        expected: String,
        found: String,
    },
}

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedDiff {
        line,
        reason: reason.into(),
    }
}

fn parse_range(s: &str, line: usize) -> Result<(usize, usize), IngestError> {
    let (start, len) = match s.split_once(',') {
        Some((a, b)) => (a, Some(b)),
        None => (s, None),
    };
    let start = start
        .parse()
        .map_err(|_| malformed(line, format!("bad range start {start:?}")))?;
    let len = match len {
        Some(l) => l
            .parse()
            .map_err(|_| malformed(line, format!("bad range length {l:?}")))?,
        None => 1,
    };
    Ok((start, len))
}

fn parse_hunk_header(text: &str, line: usize) -> Result<(usize, usize, usize, usize), IngestError> {
    let rest = text
        .strip_prefix("@@ ")
        .ok_or_else(|| malformed(line, "expected hunk header"))?;
    let end = rest
        .find(" @@")
        .ok_or_else(|| malformed(line, "unterminated hunk header"))?;
    let mut parts = rest[..end].split_whitespace();
    let old = parts
        .next()
        .and_then(|p| p.strip_prefix('-'))
        .ok_or_else(|| malformed(line, "missing old range"))?;
    let new = parts
        .next()
        .and_then(|p| p.strip_prefix('+'))
        .ok_or_else(|| malformed(line, "missing new range"))?;
    if parts.next().is_some() {
        return Err(malformed(line, "combined diffs are not supported"));
    }
    let (os, ol) = parse_range(old, line)?;
    let (ns, nl) = parse_range(new, line)?;
    Ok((os, ol, ns, nl))
}

fn is_file_header(line: &str) -> bool {
    line.starts_with("diff ")
        || line.starts_with("--- ")
        || line.starts_with("+++ ")
        || line.starts_with("index ")
        || line.starts_with("new file mode")
        || line.starts_with("deleted file mode")
        || line.starts_with("similarity index")
        || line.starts_with("old mode")
        || line.starts_with("new mode")
}

/// Parses a single-file unified diff. File headers are optional; a second
/// file section is rejected (use [`split_file_diffs`] first).
pub fn parse_unified_diff(text: &str) -> Result<RawPatch, IngestError> {
    if text.trim().is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let lines: Vec<&str> = text.lines().collect();
    let mut hunks: Vec<Hunk> = Vec::new();
    let mut i = 0;
    let mut seen_new_header = false;
    while i < lines.len() {
        let line = lines[i];
        let lineno = i + 1;
        if line.starts_with("@@") {
            let (old_start, old_len, new_start, new_len) = parse_hunk_header(line, lineno)?;
            i += 1;
            let (mut old_seen, mut new_seen) = (0, 0);
            let mut body = Vec::new();
            let mut old_no = if old_len == 0 { old_start + 1 } else { old_start };
            let mut new_no = if new_len == 0 { new_start + 1 } else { new_start };
            while old_seen < old_len || new_seen < new_len {
                let Some(&l) = lines.get(i) else {
                    return Err(malformed(
                        lineno,
                        format!(
                            "hunk body ended early: header says -{old_len} +{new_len}, body has -{old_seen} +{new_seen}"
                        ),
                    ));
                };
                i += 1;
                if l.starts_with('\\') {
                    continue;
                }
                let (tag, content) = match l.chars().next() {
                    Some('+') => (LineTag::Plus, &l[1..]),
                    Some('-') => (LineTag::Minus, &l[1..]),
                    Some(' ') => (LineTag::Context, &l[1..]),
                    // Some tools strip the single space off empty context lines.
                    None => (LineTag::Context, ""),
                    Some(_) => {
                        return Err(malformed(i, format!("unexpected line in hunk body: {l:?}")));
                    }
                };
                let (old_line, new_line) = match tag {
                    LineTag::Context => {
                        old_seen += 1;
                        new_seen += 1;
                        old_no += 1;
                        new_no += 1;
                        (Some(old_no - 1), Some(new_no - 1))
                    }
                    LineTag::Minus => {
                        old_seen += 1;
                        old_no += 1;
                        (Some(old_no - 1), None)
                    }
                    LineTag::Plus => {
                        new_seen += 1;
                        new_no += 1;
                        (None, Some(new_no - 1))
                    }
                };
                if old_seen > old_len || new_seen > new_len {
                    return Err(malformed(
                        i,
                        format!("hunk body longer than header -{old_len} +{new_len}"),
                    ));
                }
                body.push(DiffLine {
                    tag,
                    text: content.to_string(),
                    old_line,
                    new_line,
                });
            }
            while lines.get(i).is_some_and(|l| l.starts_with('\\')) {
                i += 1;
            }
            if let Some(next) = lines.get(i) {
                if next.starts_with(' ') || (next.starts_with('+') && !next.starts_with("+++ ")) || (next.starts_with('-') && !next.starts_with("--- ")) {
                    return Err(malformed(
                        i + 1,
                        format!("hunk body longer than header -{old_len} +{new_len}"),
                    ));
                }
            }
            let hunk = Hunk {
                old_start,
                old_len,
                new_start,
                new_len,
                lines: body,
            };
            if let Some(prev) = hunks.last() {
                if hunk.old_first() < prev.old_first() + prev.old_len {
                    return Err(malformed(lineno, "hunks overlap or are out of order"));
                }
            }
            hunks.push(hunk);
            continue;
        }
        if line.starts_with("+++ ") {
            if seen_new_header {
                return Err(malformed(lineno, "multiple files in one diff; split it first"));
            }
            seen_new_header = true;
        } else if !is_file_header(line) && !line.trim().is_empty() && !hunks.is_empty() {
            return Err(malformed(lineno, format!("unexpected line between hunks: {line:?}")));
        }
        i += 1;
    }
    if hunks.is_empty() {
        return Err(malformed(lines.len(), "no hunks found"));
    }
    Ok(RawPatch { hunks })
}

/// Splits a multi-file diff into one text per file. A file section starts at
/// a `diff ` line, or at a `--- ` line directly followed by `+++ ` when no
/// `diff ` line precedes it.
pub fn split_file_diffs(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().collect();
    let mut starts = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let l = lines[i];
        if l.starts_with("diff ") {
            starts.push(i);
            // Skip the extended header so its ---/+++ pair is not counted again.
            while i + 1 < lines.len() && !lines[i + 1].starts_with("@@") && !lines[i + 1].starts_with("diff ") {
                i += 1;
            }
        } else if l.starts_with("--- ") && lines.get(i + 1).is_some_and(|n| n.starts_with("+++ ")) {
            starts.push(i);
            i += 1;
        }
        i += 1;
    }
    if starts.is_empty() {
        return if text.trim().is_empty() { vec![] } else { vec![text.to_string()] };
    }
    if starts[0] != 0 && lines[..starts[0]].iter().any(|l| l.starts_with("@@")) {
        starts.insert(0, 0);
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let e = starts.get(k + 1).copied().unwrap_or(lines.len());
            let mut chunk = lines[s..e].join("\n");
            chunk.push('\n');
            chunk
        })
        .collect()
}

/// Rebuilds the code before and after the patch.
///
/// With `original`, the before-code is the original text (checked against
/// every context and minus line) and the after-code is the patched text.
/// Without it, both sides are assembled from hunk lines alone with one
/// [`ELIDED_MARKER`] line standing in for each unknown gap.
pub fn reconstruct(raw: &RawPatch, original: Option<&str>) -> Result<(String, String), IngestError> {
    match original {
        Some(orig) => {
            let old: Vec<&str> = orig.lines().collect();
            for h in &raw.hunks {
                for l in &h.lines {
                    if let (Some(n), LineTag::Context | LineTag::Minus) = (l.old_line, l.tag) {
                        let found = old.get(n - 1).copied().unwrap_or("<end of file>");
                        if found != l.text {
                            return Err(IngestError::ContextMismatch {
                                line: n,
                                expected: l.text.clone(),
                                found: found.to_string(),
                            });
                        }
                    }
                }
            }
            let mut out: Vec<&str> = Vec::with_capacity(old.len());
            let mut next = 1;
            for h in &raw.hunks {
                let first = h.old_first();
                out.extend_from_slice(&old[next - 1..first - 1]);
                out.extend(h.new_side());
                next = first + h.old_len;
            }
            if next <= old.len() {
                out.extend_from_slice(&old[next - 1..]);
            }
            Ok((join_lines(&old), join_lines(&out)))
        }
        None => {
            let (mut before, mut after): (Vec<&str>, Vec<&str>) = (Vec::new(), Vec::new());
            let (mut old_next, mut new_next) = (1, 1);
            for h in &raw.hunks {
                let gap = h.old_first() > old_next || h.new_first() > new_next;
                if gap {
                    before.push(ELIDED_MARKER);
                    after.push(ELIDED_MARKER);
                }
                before.extend(h.old_side());
                after.extend(h.new_side());
                old_next = h.old_first() + h.old_len;
                new_next = h.new_first() + h.new_len;
            }
            Ok((join_lines(&before), join_lines(&after)))
        }
    }
}

fn join_lines(lines: &[&str]) -> String {
    let mut s = lines.join("\n");
    if !lines.is_empty() {
        s.push('\n');
    }
    s
}

/// Applies the patch to `before`, locating each hunk by its exact old-side
/// lines (nearest match to the recorded position wins, like `patch` with an
/// offset and no fuzz).
pub fn apply_patch(raw: &RawPatch, before: &str) -> Result<String, IngestError> {
    let old: Vec<&str> = before.lines().collect();
    let mut out: Vec<&str> = Vec::new();
    let mut cursor = 0usize;
    let mut offset: isize = 0;
    for h in &raw.hunks {
        let needle: Vec<&str> = h.old_side().collect();
        let expected = (h.old_first() as isize - 1 + offset).max(cursor as isize) as usize;
        let fits = |p: usize| p + needle.len() <= old.len() && old[p..p + needle.len()] == needle[..];
        let mut candidates: Vec<usize> = (cursor..=old.len().saturating_sub(needle.len()).max(cursor)).collect();
        candidates.sort_by_key(|&p| p.abs_diff(expected));
        let found = candidates
            .into_iter()
            .find(|&p| fits(p))
            .ok_or_else(|| IngestError::ContextMismatch {
                line: h.old_first(),
                expected: needle.first().copied().unwrap_or("").to_string(),
                found: old.get(expected).copied().unwrap_or("<end of file>").to_string(),
            })?;
        out.extend_from_slice(&old[cursor..found]);
        out.extend(h.new_side());
        offset = found as isize - (h.old_first() as isize - 1);
        cursor = found + needle.len();
    }
    out.extend_from_slice(&old[cursor..]);
    Ok(join_lines(&out))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberedLine {
    /// 1-based position in the reconstructed code (`cap` for added lines,
    /// `cbp` for removed lines).
    pub line: usize,
    pub text: String,
}

/// The six inputs extracted from one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedPatch {
    pub plus_lines: Vec<NumberedLine>,
    pub minus_lines: Vec<NumberedLine>,
    pub before: String,
    pub after: String,
    pub before_graph: AstGraph,
    pub after_graph: AstGraph,
}

impl PreprocessedPatch {
    pub fn plus_text(&self) -> String {
        self.plus_lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn minus_text(&self) -> String {
        self.minus_lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn has_graphs(&self) -> bool {
        self.before_graph.node_count() > 0 || self.after_graph.node_count() > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Before,
    After,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Before => "before",
            Side::After => "after",
        })
    }
}

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("parse error in {side} code: {source}")]
    Parse { side: Side, source: ParseError },
}

/// Positions of changed lines inside the reconstructed code, found by
/// walking the hunks in order over the reconstructed line list.
fn locate_changed(raw: &RawPatch, code: &str, tag: LineTag) -> Vec<NumberedLine> {
    let lines: Vec<&str> = code.lines().collect();
    let mut out = Vec::new();
    let mut cursor = 0usize;
    for h in &raw.hunks {
        let side: Vec<&DiffLine> = h
            .lines
            .iter()
            .filter(|l| l.tag == LineTag::Context || l.tag == tag)
            .collect();
        let texts: Vec<&str> = side.iter().map(|l| l.text.as_str()).collect();
        let start = (cursor..=lines.len().saturating_sub(texts.len()))
            .find(|&p| lines[p..p + texts.len()] == texts[..])
            .unwrap_or(cursor);
        for (k, l) in side.iter().enumerate() {
            if l.tag == tag {
                out.push(NumberedLine {
                    line: start + k + 1,
                    text: l.text.clone(),
                });
            }
        }
        cursor = start + texts.len();
    }
    out
}

fn assemble(raw: &RawPatch, before: String, after: String, before_graph: AstGraph, after_graph: AstGraph) -> PreprocessedPatch {
    PreprocessedPatch {
        plus_lines: locate_changed(raw, &after, LineTag::Plus),
        minus_lines: locate_changed(raw, &before, LineTag::Minus),
        before,
        after,
        before_graph,
        after_graph,
    }
}

/// Full preprocessing: parse the diff, rebuild both sides and parse them.
pub fn preprocess_patch(
    text: &str,
    original: Option<&str>,
    parser: &dyn AstParser,
) -> Result<PreprocessedPatch, PreprocessError> {
    let raw = parse_unified_diff(text)?;
    let (before, after) = reconstruct(&raw, original)?;
    let gb = parser
        .parse_graph(&before)
        .map_err(|source| PreprocessError::Parse { side: Side::Before, source })?;
    let ga = parser
        .parse_graph(&after)
        .map_err(|source| PreprocessError::Parse { side: Side::After, source })?;
    Ok(assemble(&raw, before, after, gb, ga))
}

/// Preprocessing with ASTs supplied by an external parser.
pub fn preprocess_with_graphs(
    text: &str,
    original: Option<&str>,
    before_graph: AstGraph,
    after_graph: AstGraph,
) -> Result<PreprocessedPatch, IngestError> {
    let raw = parse_unified_diff(text)?;
    let (before, after) = reconstruct(&raw, original)?;
    Ok(assemble(&raw, before, after, before_graph, after_graph))
}

/// Sequence-only preprocessing: both graphs are left empty.
pub fn preprocess_sequence_only(text: &str, original: Option<&str>) -> Result<PreprocessedPatch, IngestError> {
    preprocess_with_graphs(text, original, AstGraph::default(), AstGraph::default())
}
