//! Exact inner-product retrieval over unit-norm embeddings.
//!
//! Search is brute force: every query scores every entry. Knowledge bases in
//! this setting hold around a thousand entries, so exactness costs little
//! and keeps results comparable against an exhaustive sort.

use thiserror::Error;

use crate::records::{l2_norm, KbEntry, NORM_TOLERANCE};

/// Hits fetched when computing the knowledge-similarity signal.
pub const KS_TOP_K: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum KbError {
    #[error("knowledge base is empty")]
    Empty,
    #[error("entry `{id}`: embedding norm {norm} is not 1 within {NORM_TOLERANCE}")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("entry `{id}`: dimension {got} differs from {expected}")]
    EntryDimension { id: String, expected: usize, got: usize },
    #[error("query vector has dimension {got}, index has {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error("query vector norm {0} is not 1 within {NORM_TOLERANCE}")]
    QueryNorm(f64),
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone)]
pub struct KnowledgeIndex {
    entries: Vec<KbEntry>,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub entry: &'a KbEntry,
    /// Inner product of unit vectors, i.e. cosine similarity.
    pub score: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl KnowledgeIndex {
    /// Builds an index, preserving entry order.
    pub fn build(entries: Vec<KbEntry>) -> Result<Self, KbError> {
        let dim = entries.first().ok_or(KbError::Empty)?.embedding.len();
        for e in &entries {
            if e.embedding.len() != dim {
                return Err(KbError::EntryDimension { id: e.id.clone(), expected: dim, got: e.embedding.len() });
            }
            let norm = l2_norm(&e.embedding);
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(KbError::NotUnitNorm { id: e.id.clone(), norm });
            }
        }
        Ok(Self { entries, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    fn check_query(&self, query: &[f64]) -> Result<(), KbError> {
        if query.len() != self.dim {
            return Err(KbError::QueryDimension { expected: self.dim, got: query.len() });
        }
        let norm = l2_norm(query);
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(KbError::QueryNorm(norm));
        }
        Ok(())
    }

    /// The `k` highest-scoring entries, best first. Equal scores are ordered
    /// by ascending entry id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit<'_>>, KbError> {
        if k == 0 {
            return Err(KbError::ZeroK);
        }
        self.check_query(query)?;
        let mut hits: Vec<Hit<'_>> =
            self.entries.iter().map(|entry| Hit { entry, score: dot(&entry.embedding, query) }).collect();
        let order = |a: &Hit<'_>, b: &Hit<'_>| b.score.total_cmp(&a.score).then_with(|| a.entry.id.cmp(&b.entry.id));
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_by(order);
        Ok(hits)
    }

    /// Highest cosine similarity among the top [`KS_TOP_K`] hits.
    pub fn max_similarity(&self, query: &[f64]) -> Result<f64, KbError> {
        let hits = self.top_k(query, KS_TOP_K)?;
        Ok(hits.first().map(|h| h.score).unwrap_or(f64::NEG_INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, v: &[f64]) -> KbEntry {
        let n = l2_norm(v);
        KbEntry { id: id.into(), text: format!("text of {id}"), embedding: v.iter().map(|x| x / n).collect() }
    }

    fn axis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn builds_and_preserves_order() {
        let idx =
            KnowledgeIndex::build(vec![entry("c", &[1.0, 0.0]), entry("a", &[0.0, 1.0]), entry("b", &[1.0, 1.0])])
                .unwrap();
        assert_eq!(idx.len(), 3);
        let ids: Vec<_> = idx.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn rejects_bad_entries() {
        assert_eq!(KnowledgeIndex::build(vec![]).unwrap_err(), KbError::Empty);
        let bad = KbEntry { id: "half".into(), text: String::new(), embedding: vec![0.5, 0.0] };
        assert!(matches!(KnowledgeIndex::build(vec![bad]), Err(KbError::NotUnitNorm { id, .. }) if id == "half"));
        let mixed = vec![entry("a", &axis(1024, 0)), entry("b", &axis(768, 0))];
        assert!(
            matches!(KnowledgeIndex::build(mixed), Err(KbError::EntryDimension { id, expected: 1024, got: 768 }) if id == "b")
        );
    }

    #[test]
    fn self_similarity_and_orthogonality() {
        let idx = KnowledgeIndex::build((0..3).map(|i| entry(&format!("e{i}"), &axis(4, i))).collect()).unwrap();
        let hits = idx.top_k(&axis(4, 1), 5).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].entry.id, "e1");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert!((idx.max_similarity(&axis(4, 1)).unwrap() - 1.0).abs() < 1e-6);

        let hits = idx.top_k(&axis(4, 3), 5).unwrap();
        assert!(hits.iter().all(|h| h.score.abs() < 1e-6));
        // all tied at zero: ascending id
        let ids: Vec<_> = hits.iter().map(|h| h.entry.id.as_str()).collect();
        assert_eq!(ids, ["e0", "e1", "e2"]);
        assert!(idx.max_similarity(&axis(4, 3)).unwrap().abs() < 1e-6);
    }

    #[test]
    fn five_entry_fixture_matches_exhaustive_sort() {
        let raw: [(&str, [f64; 3]); 5] = [
            ("k1", [1.0, 2.0, 0.5]),
            ("k2", [-1.0, 0.3, 0.2]),
            ("k3", [0.2, 0.2, 0.9]),
            ("k4", [0.9, -0.4, 0.1]),
            ("k5", [0.0, 1.0, 1.0]),
        ];
        let entries: Vec<KbEntry> = raw.iter().map(|(id, v)| entry(id, v)).collect();
        let idx = KnowledgeIndex::build(entries.clone()).unwrap();
        let q = {
            let v = [0.3, 0.8, 0.52];
            let n = l2_norm(&v);
            v.map(|x| x / n)
        };

        // oracle: score everything, sort descending
        let mut oracle: Vec<(String, f64)> =
            entries.iter().map(|e| (e.id.clone(), e.embedding.iter().zip(&q).map(|(a, b)| a * b).sum())).collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

        for k in 1..=6 {
            let got: Vec<_> = idx.top_k(&q, k).unwrap().iter().map(|h| h.entry.id.clone()).collect();
            let want: Vec<_> = oracle.iter().take(k).map(|(id, _)| id.clone()).collect();
            assert_eq!(got, want, "k={k}");
        }
        assert_eq!(idx.max_similarity(&q).unwrap(), oracle[0].1);
    }

    #[test]
    fn query_errors() {
        let idx = KnowledgeIndex::build(vec![entry("a", &[1.0, 0.0])]).unwrap();
        assert!(matches!(idx.top_k(&[1.0, 0.0, 0.0], 1), Err(KbError::QueryDimension { expected: 2, got: 3 })));
        assert!(matches!(idx.top_k(&[0.5, 0.0], 1), Err(KbError::QueryNorm(_))));
        assert_eq!(idx.top_k(&[1.0, 0.0], 0).unwrap_err(), KbError::ZeroK);
    }
}
