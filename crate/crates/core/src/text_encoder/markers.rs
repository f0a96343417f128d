use crate::amr::Span;
use crate::error::{Error, Result};

use super::vocab::{close_marker, open_marker, MAX_MARKERS};

/// Tokens with `[Ei]`/`[/Ei]` pairs inserted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedSentence {
    pub tokens: Vec<String>,
    /// Per input span (in the caller's order): (open, close) positions.
    pub markers: Vec<(usize, usize)>,
    /// Position of each original token in `tokens`.
    pub token_positions: Vec<usize>,
}

/// Wraps each span in its own marker pair. Marker numbers follow span start
/// order, independent of the order the spans are passed in.
pub fn insert_markers<S: AsRef<str>>(tokens: &[S], spans: &[Span]) -> Result<MarkedSentence> {
    let n = tokens.len();
    if spans.len() > MAX_MARKERS {
        return Err(Error::TooManyMarkers {
            requested: spans.len(),
            max: MAX_MARKERS,
        });
    }
    for s in spans {
        if s.end <= s.start || s.end > n {
            return Err(Error::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len: n,
            });
        }
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].start, spans[i].end));
    for w in order.windows(2) {
        let (a, b) = (spans[w[0]], spans[w[1]]);
        if a.overlaps(&b) {
            return Err(Error::OverlappingSpans(a.start, a.end, b.start, b.end));
        }
    }
    // rank[i] = 1-based marker number of input span i
    let mut rank = vec![0; spans.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }

    let mut out = Vec::with_capacity(n + 2 * spans.len());
    let mut markers = vec![(0, 0); spans.len()];
    let mut token_positions = Vec::with_capacity(n);
    for (pos, tok) in tokens.iter().enumerate() {
        for &i in &order {
            if spans[i].start == pos {
                markers[i].0 = out.len();
                out.push(open_marker(rank[i]));
            }
        }
        token_positions.push(out.len());
        out.push(tok.as_ref().to_string());
        for &i in &order {
            if spans[i].end == pos + 1 {
                markers[i].1 = out.len();
                out.push(close_marker(rank[i]));
            }
        }
    }
    Ok(MarkedSentence {
        tokens: out,
        markers,
        token_positions,
    })
}

/// Truncates to `max_len` tokens without splitting a marker pair. Any pair
/// whose close marker falls at or beyond `max_len` is removed entirely.
/// Returns the surviving tokens, per-span positions (None when lost), and
/// per-original-token positions (None when cut).
pub fn truncate(
    marked: &MarkedSentence,
    max_len: usize,
) -> (Vec<String>, Vec<Option<(usize, usize)>>, Vec<Option<usize>>) {
    let lost: Vec<bool> = marked.markers.iter().map(|&(_, c)| c >= max_len).collect();
    let mut drop = vec![false; marked.tokens.len()];
    for (i, &(o, c)) in marked.markers.iter().enumerate() {
        if lost[i] {
            drop[o] = true;
            if c < drop.len() {
                drop[c] = true;
            }
        }
    }
    let mut new_pos = vec![None; marked.tokens.len()];
    let mut tokens = Vec::new();
    for (p, tok) in marked.tokens.iter().enumerate() {
        if drop[p] || tokens.len() >= max_len {
            continue;
        }
        new_pos[p] = Some(tokens.len());
        tokens.push(tok.clone());
    }
    let markers = marked
        .markers
        .iter()
        .enumerate()
        .map(|(i, &(o, c))| {
            if lost[i] {
                None
            } else {
                Some((new_pos[o]?, new_pos[c]?))
            }
        })
        .collect();
    let token_positions = marked.token_positions.iter().map(|&p| new_pos[p]).collect();
    (tokens, markers, token_positions)
}
