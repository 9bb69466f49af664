//! Total-degree multi-index sets in graded lexicographic order.
//!
//! Indices are sorted by total degree; within one degree the exponent of the
//! first coordinate descends, then the second, and so on. For `d = 2, p = 2`
//! this yields `1, x1, x2, x1^2, x1 x2, x2^2`.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Number of `d`-variate monomials of total degree at most `p`, i.e. `C(p + d, d)`.
pub fn num_terms(dim: usize, order: u32) -> usize {
    let p = order as u128;
    let d = dim as u128;
    // C(p+d, d) built incrementally stays integral at every step.
    let mut acc: u128 = 1;
    for k in 1..=d {
        acc = acc * (p + k) / k;
    }
    acc as usize
}

/// Ordered set of exponent vectors `alpha` with `|alpha| <= order`.
#[derive(Debug, Clone)]
pub struct MultiIndexSet {
    dim: usize,
    order: u32,
    indices: Vec<Vec<u32>>,
    rank: HashMap<Vec<u32>, usize>,
}

impl PartialEq for MultiIndexSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.order == other.order
    }
}

impl MultiIndexSet {
    pub fn new(dim: usize, order: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("dimension must be at least 1"));
        }
        let mut indices = Vec::with_capacity(num_terms(dim, order));
        let mut buf = vec![0u32; dim];
        for degree in 0..=order {
            push_degree(&mut indices, &mut buf, 0, degree);
        }
        let rank = indices
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        Ok(MultiIndexSet {
            dim,
            order,
            indices,
            rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn get(&self, rank: usize) -> Option<&[u32]> {
        self.indices.get(rank).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.indices.iter().map(Vec::as_slice)
    }

    /// Position of `alpha` in the ordering, if it belongs to the set.
    pub fn rank(&self, alpha: &[u32]) -> Option<usize> {
        self.rank.get(alpha).copied()
    }

    /// Rank of the componentwise sum `a + b`.
    pub fn rank_of_sum(&self, a: &[u32], b: &[u32]) -> Option<usize> {
        let sum: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        self.rank(&sum)
    }

    /// Number of indices with total degree at most `order`: the length of the
    /// leading block that forms the set of that smaller order.
    pub fn leading(&self, order: u32) -> usize {
        num_terms(self.dim, order.min(self.order))
    }

    /// Evaluates every monomial `x^alpha` of the set at `point`.
    pub fn monomials(&self, point: &[f64], out: &mut [f64]) {
        let n = out.len().min(self.indices.len());
        let pows = self.power_table(point);
        for (slot, alpha) in out[..n].iter_mut().zip(&self.indices) {
            *slot = alpha
                .iter()
                .enumerate()
                .map(|(k, &e)| pows[k][e as usize])
                .product();
        }
    }

    /// Gradients of the monomials at `point`, written row-major into `out`
    /// (`out[i * dim + t] = d x^alpha_i / d x_t`).
    pub fn monomial_gradients(&self, point: &[f64], n: usize, out: &mut [f64]) {
        let d = self.dim;
        let pows = self.power_table(point);
        for (i, alpha) in self.indices.iter().take(n).enumerate() {
            for t in 0..d {
                let g = if alpha[t] == 0 {
                    0.0
                } else {
                    let mut v = alpha[t] as f64;
                    for (k, &e) in alpha.iter().enumerate() {
                        let e = if k == t { e - 1 } else { e };
                        v *= pows[k][e as usize];
                    }
                    v
                };
                out[i * d + t] = g;
            }
        }
    }

    fn power_table(&self, point: &[f64]) -> Vec<Vec<f64>> {
        let top = self.order as usize;
        point
            .iter()
            .map(|&x| {
                let mut row = Vec::with_capacity(top + 1);
                let mut acc = 1.0;
                row.push(acc);
                for _ in 0..top {
                    acc *= x;
                    row.push(acc);
                }
                row
            })
            .collect()
    }
}

fn push_degree(out: &mut Vec<Vec<u32>>, buf: &mut [u32], pos: usize, remaining: u32) {
    if pos + 1 == buf.len() {
        buf[pos] = remaining;
        out.push(buf.to_vec());
        return;
    }
    for e in (0..=remaining).rev() {
        buf[pos] = e;
        push_degree(out, buf, pos + 1, remaining - e);
    }
}
