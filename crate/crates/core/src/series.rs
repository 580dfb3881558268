//! Truncated bivariate series `Σ X^j λ^k c_{j,k}` with function-valued
//! coefficients, where `X = ib` and the truncation keeps `j + 2k < limit`.
//!
//! Complex conjugation maps `X` to `−X`, so a series with real coefficients
//! conjugates by flipping the sign of the odd-`j` coefficients.

use std::collections::BTreeMap;

pub type Key = (usize, usize);

/// Weight of a monomial: `b² ~ λ`, so `X^j λ^k` has weight `j + 2k`.
pub fn weight(key: Key) -> usize {
    key.0 + 2 * key.1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    len: usize,
    terms: BTreeMap<Key, Vec<f64>>,
}

impl Series {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            terms: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn insert(&mut self, key: Key, values: Vec<f64>) {
        assert_eq!(values.len(), self.len);
        self.terms.insert(key, values);
    }

    pub fn get(&self, key: Key) -> Option<&[f64]> {
        self.terms.get(&key).map(|v| v.as_slice())
    }

    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.terms.keys().copied()
    }

    pub fn conj(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(&k, v)| {
                (
                    k,
                    if k.0 % 2 == 1 {
                        v.iter().map(|x| -x).collect()
                    } else {
                        v.clone()
                    },
                )
            })
            .collect();
        Self {
            len: self.len,
            terms,
        }
    }

    /// Product truncated to `weight < limit`.
    pub fn mul(&self, other: &Self, limit: usize) -> Self {
        let mut out = Self::new(self.len);
        for (&ka, va) in &self.terms {
            for (&kb, vb) in &other.terms {
                let key = (ka.0 + kb.0, ka.1 + kb.1);
                if weight(key) >= limit {
                    continue;
                }
                let acc = out.terms.entry(key).or_insert_with(|| vec![0.0; self.len]);
                for ((a, x), y) in acc.iter_mut().zip(va).zip(vb) {
                    *a += x * y;
                }
            }
        }
        out
    }

    /// Coefficients of `|P|⁴P = P³ P̄²` truncated to `weight < limit`.
    pub fn quintic(&self, limit: usize) -> Self {
        let c = self.conj();
        let p2 = self.mul(self, limit);
        let p3 = p2.mul(self, limit);
        let c2 = c.mul(&c, limit);
        p3.mul(&c2, limit)
    }
}
