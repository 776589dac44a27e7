//! Exact top-k cosine retrieval over a persisted embedding index.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::Document;
use crate::embedding::{DocumentEmbedding, Producer};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize};
use crate::pipeline::Embedder;

const MAGIC: &[u8; 8] = b"JMEMBIDX";
const VERSION: u32 = 1;

/// Unit-normalized document vectors in build order. Zero vectors are kept,
/// flagged, and score 0 against every query.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    /// Row-major `ids.len() × dim`.
    matrix: Vec<f64>,
    zero: Vec<bool>,
    producer: Producer,
}

/// Normalizes `v`; returns whether it was the zero vector.
fn unit(mut v: Vec<f64>) -> (Vec<f64>, bool) {
    let is_zero = v.iter().all(|&x| x == 0.0);
    if !is_zero {
        l2_normalize(&mut v);
    }
    (v, is_zero)
}

impl EmbeddingIndex {
    pub fn empty(dim: usize, producer: Producer) -> Self {
        Self {
            ids: Vec::new(),
            dim,
            matrix: Vec::new(),
            zero: Vec::new(),
            producer,
        }
    }

    /// Builds an index from raw vectors, normalizing each.
    pub fn from_vectors(ids: Vec<String>, vectors: Vec<Vec<f64>>, dim: usize, producer: Producer) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Shape(format!("{} ids but {} vectors", ids.len(), vectors.len())));
        }
        let mut index = Self::empty(dim, producer);
        let mut seen = HashSet::new();
        for (id, v) in ids.into_iter().zip(vectors) {
            index.push(&mut seen, id, v)?;
        }
        Ok(index)
    }

    fn push(&mut self, seen: &mut HashSet<String>, id: String, v: Vec<f64>) -> Result<()> {
        let fail = |reason: String| Error::IndexBuild {
            doc_id: id.clone(),
            reason,
        };
        if v.len() != self.dim {
            return Err(fail(format!("dimension {} but index dimension is {}", v.len(), self.dim)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(fail("non-finite embedding".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(fail("duplicate document id".into()));
        }
        let (v, is_zero) = unit(v);
        self.matrix.extend_from_slice(&v);
        self.zero.push(is_zero);
        self.ids.push(id);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn producer(&self) -> Producer {
        self.producer
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_zero(&self, i: usize) -> bool {
        self.zero[i]
    }

    /// Cosine of the query against every stored vector, in index order.
    pub fn scores(&self, query: &DocumentEmbedding) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::Shape(format!(
                "query dimension {} but index dimension {}",
                query.dim(),
                self.dim
            )));
        }
        if !query.is_finite() {
            return Err(Error::Shape("query embedding is not finite".into()));
        }
        let (q, q_zero) = unit(query.vector.clone());
        Ok((0..self.len())
            .map(|i| if q_zero || self.zero[i] { 0.0 } else { dot(self.vector(i), &q) })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + self.matrix.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        let producer = serde_json::to_vec(&self.producer)?;
        write_bytes(&mut buf, &producer);
        for id in &self.ids {
            write_bytes(&mut buf, id.as_bytes());
        }
        buf.extend(self.zero.iter().map(|&z| z as u8));
        for x in &self.matrix {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        // Write-then-rename so readers never see a partial index.
        let tmp = path.with_extension("partial");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut raw))
            .map_err(|e| Error::io(path, e))?;
        let mut r = Cursor { raw: &raw, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not an embedding index".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let dim = r.u64()? as usize;
        let count = r.u64()? as usize;
        let producer: Producer = serde_json::from_slice(r.bytes()?)?;
        let mut ids = Vec::with_capacity(count.min(raw.len()));
        for _ in 0..count {
            let id = std::str::from_utf8(r.bytes()?).map_err(|e| Error::Format(e.to_string()))?;
            ids.push(id.to_string());
        }
        let zero: Vec<bool> = r.take(count)?.iter().map(|&b| b != 0).collect();
        let n = count
            .checked_mul(dim)
            .ok_or_else(|| Error::Format("index size overflows".into()))?;
        let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("index size overflows".into()))?)?;
        let matrix = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if r.pos != raw.len() {
            return Err(Error::Format("trailing bytes after index payload".into()));
        }
        Ok(Self {
            ids,
            dim,
            matrix,
            zero,
            producer,
        })
    }
}

fn write_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    buf.extend_from_slice(&(b.len() as u64).to_le_bytes());
    buf.extend_from_slice(b);
}

struct Cursor<'a> {
    raw: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.raw.len())
            .ok_or_else(|| Error::Format("truncated index file".into()))?;
        let s = &self.raw[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
}

/// Embeds and indexes every document; the error names the first document
/// that could not be embedded.
pub fn index_build(docs: &[Document], embedder: &dyn Embedder) -> Result<EmbeddingIndex> {
    let mut index = EmbeddingIndex::empty(embedder.dim(), embedder.producer());
    let mut seen = HashSet::new();
    for doc in docs {
        let emb = embedder.embed_document(doc).map_err(|e| Error::IndexBuild {
            doc_id: doc.doc_id.clone(),
            reason: e.to_string(),
        })?;
        index.push(&mut seen, doc.doc_id.clone(), emb.vector)?;
    }
    Ok(index)
}

/// Higher score first, then ascending id.
struct Ranked<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

/// The `k` best documents by cosine, descending, ties by ascending id.
pub fn topk_query(index: &EmbeddingIndex, query: &DocumentEmbedding, k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let scores = index.scores(query)?;
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k.min(index.len()) + 1);
    for (id, &score) in index.ids.iter().zip(&scores) {
        let cand = Ranked { score, id };
        if heap.len() < k {
            heap.push(Reverse(cand));
        } else if heap.peek().is_some_and(|Reverse(worst)| cand > *worst) {
            heap.pop();
            heap.push(Reverse(cand));
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|Reverse(r)| (r.id.to_string(), r.score))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> DocumentEmbedding {
        DocumentEmbedding::new(v.to_vec(), Producer::Tfidf, None)
    }

    fn toy() -> EmbeddingIndex {
        let ids = ["a", "b", "c", "d", "e"].map(String::from).to_vec();
        let vectors = vec![
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![3.0, 3.0],
            vec![-1.0, 0.0],
            vec![0.0, 0.0],
        ];
        EmbeddingIndex::from_vectors(ids, vectors, 2, Producer::Tfidf).unwrap()
    }

    fn exhaustive(index: &EmbeddingIndex, query: &DocumentEmbedding) -> Vec<(String, f64)> {
        let scores = index.scores(query).unwrap();
        let mut all: Vec<(String, f64)> = index.ids().iter().cloned().zip(scores).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all
    }

    #[test]
    fn stored_vectors_are_unit_or_flagged_zero() {
        let idx = toy();
        for i in 0..idx.len() {
            let n = dot(idx.vector(i), idx.vector(i)).sqrt();
            if idx.is_zero(i) {
                assert_eq!(n, 0.0);
            } else {
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
        assert!(idx.is_zero(4));
    }

    #[test]
    fn toy_ordering() {
        // Query (1, 1): cosines a = b = 1/sqrt2, c = 1, d = -1/sqrt2, e = 0.
        let got = topk_query(&toy(), &emb(&[1.0, 1.0]), 10).unwrap();
        let ids: Vec<&str> = got.iter().map(|g| g.0.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b", "e", "d"]);
        assert!((got[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(got[3].1, 0.0);
    }

    #[test]
    fn query_equal_to_stored_vector() {
        let got = topk_query(&toy(), &emb(&[0.0, 5.0]), 1).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, "b");
        assert!((got[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors_and_empty_index() {
        assert!(matches!(topk_query(&toy(), &emb(&[1.0]), 1), Err(Error::Shape(_))));
        assert!(topk_query(&toy(), &emb(&[1.0, 0.0]), 0).is_err());
        let empty = EmbeddingIndex::empty(2, Producer::Tfidf);
        assert!(topk_query(&empty, &emb(&[1.0, 0.0]), 3).unwrap().is_empty());
        let dup = EmbeddingIndex::from_vectors(
            vec!["x".into(), "x".into()],
            vec![vec![1.0], vec![2.0]],
            1,
            Producer::Tfidf,
        );
        assert!(matches!(dup, Err(Error::IndexBuild { doc_id, .. }) if doc_id == "x"));
    }

    #[test]
    fn persisted_index_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        let idx = toy();
        idx.save(&path).unwrap();
        let back = EmbeddingIndex::load(&path).unwrap();
        assert_eq!(back, idx);
        let q = emb(&[0.3, -0.7]);
        assert_eq!(topk_query(&back, &q, 5).unwrap(), topk_query(&idx, &q, 5).unwrap());
        std::fs::write(&path, b"JMEMBIDX").unwrap();
        assert!(EmbeddingIndex::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn topk_matches_exhaustive_sort(
            rows in proptest::collection::vec(proptest::collection::vec(-3i8..4, 3), 0..60),
            q in proptest::collection::vec(-3i8..4, 3),
            k in 1usize..70,
        ) {
            // Small integer coordinates produce many exact ties.
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("d{:03}", (i * 37) % 101)).collect();
            let unique: HashSet<&String> = ids.iter().collect();
            prop_assume!(unique.len() == ids.len());
            let vectors = rows.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
            let idx = EmbeddingIndex::from_vectors(ids, vectors, 3, Producer::Tfidf).unwrap();
            let query = emb(&q.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let mut want = exhaustive(&idx, &query);
            want.truncate(k);
            prop_assert_eq!(topk_query(&idx, &query, k).unwrap(), want);
        }
    }
}
