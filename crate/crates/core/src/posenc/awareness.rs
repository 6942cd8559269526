//! Empirical forward/backward-awareness test over a finite set of lengths.
//!
//! A dimension is forward-consistent when every position takes the same value
//! on it for every pair of tested lengths; backward-consistency is the same
//! test on reverse indices. A scheme is aware in a direction when the set of
//! consistent dimensions is nonempty and separates all positions.

use std::collections::BTreeSet;

use super::scheme::EncodingScheme;
use crate::error::{invalid, Result};

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_DELTA: f64 = 1e-6;
pub const DEFAULT_MAX_TESTED_LEN: usize = 12;

pub fn default_lengths() -> Vec<usize> {
    (1..=DEFAULT_MAX_TESTED_LEN).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AwarenessReport {
    pub forward_aware: bool,
    pub backward_aware: bool,
    pub forward_dims: Vec<usize>,
    pub backward_dims: Vec<usize>,
    pub tested_lengths: Vec<usize>,
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

pub fn check_awareness(
    scheme: &EncodingScheme,
    lengths: &[usize],
    epsilon: f64,
    delta: f64,
) -> Result<AwarenessReport> {
    let lengths: Vec<usize> = lengths.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if lengths.len() < 2 {
        return Err(invalid!(
            "awareness compares encodings across lengths; need at least 2 distinct lengths"
        ));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > scheme.max_len()) {
        return Err(invalid!("tested length {bad} outside [1, {}]", scheme.max_len()));
    }

    // table[k][pos] = encoding at position pos for lengths[k]
    let table: Vec<Vec<Vec<f64>>> = lengths
        .iter()
        .map(|&l| (0..l).map(|p| scheme.encode(p, l)).collect::<Result<_>>())
        .collect::<Result<_>>()?;

    let (forward_aware, forward_dims) =
        direction_report(&table, &lengths, scheme.dim(), epsilon, delta, Direction::Forward);
    let (backward_aware, backward_dims) =
        direction_report(&table, &lengths, scheme.dim(), epsilon, delta, Direction::Backward);

    Ok(AwarenessReport {
        forward_aware,
        backward_aware,
        forward_dims,
        backward_dims,
        tested_lengths: lengths,
        epsilon,
        delta,
    })
}

fn direction_report(
    table: &[Vec<Vec<f64>>],
    lengths: &[usize],
    dim: usize,
    epsilon: f64,
    delta: f64,
    dir: Direction,
) -> (bool, Vec<usize>) {
    // Encoding at index `k` counted in direction `dir` for the length at slot `li`.
    let at = |li: usize, k: usize| -> &[f64] {
        let l = lengths[li];
        let pos = match dir {
            Direction::Forward => k,
            Direction::Backward => l - 1 - k,
        };
        &table[li][pos]
    };

    let dims: Vec<usize> = (0..dim)
        .filter(|&j| {
            (0..lengths.len()).all(|a| {
                (a + 1..lengths.len()).all(|b| {
                    let shared = lengths[a].min(lengths[b]);
                    (0..shared).all(|k| (at(a, k)[j] - at(b, k)[j]).abs() <= epsilon)
                })
            })
        })
        .collect();

    if dims.is_empty() {
        return (false, dims);
    }

    let longest = lengths.len() - 1;
    let l = lengths[longest];
    let distinct = (0..l).all(|x| {
        (x + 1..l).all(|y| {
            let linf = dims
                .iter()
                .map(|&j| (at(longest, x)[j] - at(longest, y)[j]).abs())
                .fold(0.0, f64::max);
            linf > delta
        })
    });
    (distinct, dims)
}
