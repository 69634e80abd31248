//! Distance back to the previous occurrence of the substring starting at each
//! position, for several substring lengths.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::SymbolStream;

pub const DEFAULT_MATCH_LENGTHS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub pos: usize,
    pub len: usize,
    /// Smallest `delta > 0` with `s[pos..pos+len] == s[pos-delta..pos-delta+len]`.
    pub delta: Option<usize>,
}

impl MatchRecord {
    pub fn log10_delta(&self) -> Option<f64> {
        self.delta.map(|d| (d as f64).log10())
    }
}

/// One record per `(len, pos)` for every window `s[pos..pos+len]` that fits
/// and contains no separator, ordered by length then position.
pub fn match_structure(stream: &SymbolStream, lengths: &[usize]) -> Vec<MatchRecord> {
    let s = &stream.symbols;
    let mut out = Vec::new();
    for &len in lengths {
        if len == 0 || len > s.len() {
            continue;
        }
        // most recent start of every window content seen so far
        let mut last: HashMap<&[u32], usize> = HashMap::new();
        // count of separators in the current window
        let mut seps = s[..len - 1]
            .iter()
            .filter(|&&x| stream.is_separator(x))
            .count();
        for pos in 0..=s.len() - len {
            if stream.is_separator(s[pos + len - 1]) {
                seps += 1;
            }
            if seps == 0 {
                let w = &s[pos..pos + len];
                let delta = last.insert(w, pos).map(|prev| pos - prev);
                out.push(MatchRecord { pos, len, delta });
            }
            if stream.is_separator(s[pos]) {
                seps -= 1;
            }
        }
    }
    out
}
