//! Lempel-Ziv entropy rate and the Fano predictability bound.

use log::warn;

use crate::error::{Error, Result};
use crate::model::PoiId;

/// Online suffix automaton over `u32` symbols. Transitions are kept in small
/// sorted vectors; mobility alphabets are large but each state has few
/// outgoing edges.
struct SuffixAutomaton {
    len: Vec<u32>,
    link: Vec<u32>,
    next: Vec<Vec<(PoiId, u32)>>,
    last: u32,
}

const NONE: u32 = u32::MAX;

impl SuffixAutomaton {
    fn with_capacity(n: usize) -> Self {
        let mut sa = SuffixAutomaton {
            len: Vec::with_capacity(2 * n + 1),
            link: Vec::with_capacity(2 * n + 1),
            next: Vec::with_capacity(2 * n + 1),
            last: 0,
        };
        sa.len.push(0);
        sa.link.push(NONE);
        sa.next.push(Vec::new());
        sa
    }

    fn go(&self, state: u32, c: PoiId) -> Option<u32> {
        let edges = &self.next[state as usize];
        edges
            .binary_search_by_key(&c, |e| e.0)
            .ok()
            .map(|i| edges[i].1)
    }

    fn set(&mut self, state: u32, c: PoiId, to: u32) {
        let edges = &mut self.next[state as usize];
        match edges.binary_search_by_key(&c, |e| e.0) {
            Ok(i) => edges[i].1 = to,
            Err(i) => edges.insert(i, (c, to)),
        }
    }

    fn new_state(&mut self, len: u32, link: u32, next: Vec<(PoiId, u32)>) -> u32 {
        self.len.push(len);
        self.link.push(link);
        self.next.push(next);
        (self.len.len() - 1) as u32
    }

    /// Appends `c`. If the state `tracked` is split and a string of length
    /// `tracked_len` moves to the clone, the clone is returned in its place.
    fn extend(&mut self, c: PoiId, tracked: u32, tracked_len: u32) -> u32 {
        let mut tracked = tracked;
        let cur = self.new_state(self.len[self.last as usize] + 1, NONE, Vec::new());
        let mut p = self.last;
        while p != NONE && self.go(p, c).is_none() {
            self.set(p, c, cur);
            p = self.link[p as usize];
        }
        if p == NONE {
            self.link[cur as usize] = 0;
        } else {
            let q = self.go(p, c).unwrap();
            if self.len[p as usize] + 1 == self.len[q as usize] {
                self.link[cur as usize] = q;
            } else {
                let clone_len = self.len[p as usize] + 1;
                let clone = self.new_state(
                    clone_len,
                    self.link[q as usize],
                    self.next[q as usize].clone(),
                );
                while p != NONE && self.go(p, c) == Some(q) {
                    self.set(p, c, clone);
                    p = self.link[p as usize];
                }
                self.link[q as usize] = clone;
                self.link[cur as usize] = clone;
                if tracked == q && tracked_len <= clone_len {
                    tracked = clone;
                }
            }
        }
        self.last = cur;
        tracked
    }
}

/// For every position `i`, the length of the longest prefix of `seq[i..]`
/// that occurs as a substring of `seq[..i]`. Runs in amortised linear time
/// (times the per-state edge lookup) by tracking the match across positions.
pub fn longest_past_matches(seq: &[PoiId]) -> Vec<usize> {
    let n = seq.len();
    let mut sa = SuffixAutomaton::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    // the current match is seq[i..i+len], living in `state`
    let mut state = 0u32;
    let mut len = 0u32;
    for i in 0..n {
        while i + (len as usize) < n {
            match sa.go(state, seq[i + len as usize]) {
                Some(s) => {
                    state = s;
                    len += 1;
                }
                None => break,
            }
        }
        out.push(len as usize);
        // text grows by seq[i]; the match keeps occurring in the longer text
        state = sa.extend(seq[i], state, len);
        // drop the first symbol of the match for position i + 1
        if len > 0 {
            len -= 1;
            let link = sa.link[state as usize];
            if link != NONE && len <= sa.len[link as usize] {
                state = link;
            }
        }
    }
    out
}

/// Match-length entropy rate estimate in bits per symbol:
/// `S = n log2(n) / sum_i L_i` where `L_i` is the length of the shortest
/// substring starting at `i` that does not occur in `seq[..i]` (the longest
/// past match plus one, capped at `n - i + 1`).
pub fn lz_entropy_rate(seq: &[PoiId]) -> Result<f64> {
    let n = seq.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "entropy rate needs at least 2 symbols, got {n}"
        )));
    }
    let total: u64 = longest_past_matches(seq)
        .iter()
        .enumerate()
        .map(|(i, &m)| (m + 1).min(n - i + 1) as u64)
        .sum();
    let n = n as f64;
    Ok(n * n.log2() / total as f64)
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

fn fano_lhs(pi: f64, n: f64) -> f64 {
    binary_entropy(pi) + (1.0 - pi) * (n - 1.0).log2()
}

/// Tolerance for entropy estimates slightly outside `[0, log2 N]`.
pub const FANO_CLAMP_TOLERANCE: f64 = 0.1;

/// Upper bound on predictability: the `pi` in `[1/N, 1]` solving
/// `H_b(pi) + (1 - pi) log2(N - 1) = S`.
///
/// Estimates within [`FANO_CLAMP_TOLERANCE`] outside the feasible range are
/// clamped with a warning.
pub fn fano_predictability(entropy_bits: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "predictability needs an alphabet of at least 2, got {n}"
        )));
    }
    if !entropy_bits.is_finite() {
        return Err(Error::invalid("entropy is not finite"));
    }
    let nf = n as f64;
    let max = nf.log2();
    let mut s = entropy_bits;
    if s < 0.0 || s > max {
        let excess = if s < 0.0 { -s } else { s - max };
        if excess > FANO_CLAMP_TOLERANCE {
            return Err(Error::invalid(format!(
                "entropy {s} bits outside [0, {max}] for N = {n}"
            )));
        }
        warn!("entropy {s} bits clamped to [0, {max}] for N = {n}");
        s = s.clamp(0.0, max);
    }
    if s == 0.0 {
        return Ok(1.0);
    }
    if s == max {
        return Ok(1.0 / nf);
    }
    // lhs decreases from log2 N at 1/N to 0 at 1
    let (mut lo, mut hi) = (1.0 / nf, 1.0);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = fano_lhs(mid, nf) - s;
        if r.abs() <= 1e-12 || hi - lo <= f64::EPSILON {
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}
