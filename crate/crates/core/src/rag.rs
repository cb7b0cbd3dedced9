//! Vector store for retrieval-augmented generation.
//!
//! The default embedder is a deterministic feature-hashing recipe: lowercase,
//! split on non-alphanumerics, FNV-1a 64 each token into one of 256 buckets,
//! then L2-normalise the bucket counts.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;

pub const DIMENSIONS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zero() -> Self {
        Embedding(vec![0.0; DIMENSIONS])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Dot product; equals cosine similarity for unit vectors.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Embedding;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HashingEmbedder;

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Embedding {
        embed(text)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn embed(text: &str) -> Embedding {
    let mut counts = vec![0.0f64; DIMENSIONS];
    for tok in tokens(text) {
        counts[(fnv1a64(tok.as_bytes()) % DIMENSIONS as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        for c in &mut counts {
            *c /= norm;
        }
    }
    Embedding(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub source: String,
    pub embedding: Embedding,
}

/// What leaves a store during retrieval. Carries no document text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub doc_id: String,
    pub score: f64,
    pub store_id: String,
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("document id `{0}` already exists in store")]
    DuplicateDocId(String),
    #[error("rag store io: {0}")]
    Io(#[from] io::Error),
    #[error("rag store line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredDocument {
    doc_id: String,
    source: String,
    text: String,
}

/// Descending score, then ascending doc id.
fn local_order(a: &RetrievedChunk, b: &RetrievedChunk) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Descending score, then store id, then doc id.
fn federated_order(a: &RetrievedChunk, b: &RetrievedChunk) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.store_id.cmp(&b.store_id))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

pub struct RagStore {
    id: String,
    embedder: Arc<dyn Embedder>,
    docs: RwLock<BTreeMap<String, Document>>,
    journal: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for RagStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RagStore")
            .field("id", &self.id)
            .field("len", &self.len())
            .field("path", &self.path)
            .finish()
    }
}

impl RagStore {
    pub fn new(id: impl Into<String>) -> Self {
        Self::with_embedder(id, Arc::new(HashingEmbedder))
    }

    pub fn with_embedder(id: impl Into<String>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            id: id.into(),
            embedder,
            docs: RwLock::default(),
            journal: None,
            path: None,
        }
    }

    /// Opens (or creates) a store persisted as JSON Lines of
    /// `{"doc_id","source","text"}`; embeddings are recomputed on load.
    pub fn open(id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, RagError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::new(id);
        // journal is attached after replay so existing lines are not re-appended
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let d: StoredDocument = serde_json::from_str(&line).map_err(|e| RagError::Corrupt {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                store.add_document(d.doc_id, d.text, d.source)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.journal = Some(Mutex::new(file));
        store.path = Some(path);
        Ok(store)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.docs.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_document(
        &self,
        doc_id: impl Into<String>,
        text: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Document, RagError> {
        let (doc_id, text, source) = (doc_id.into(), text.into(), source.into());
        let mut docs = self.docs.write();
        if docs.contains_key(&doc_id) {
            return Err(RagError::DuplicateDocId(doc_id));
        }
        if let Some(journal) = &self.journal {
            let mut line = canonical::to_vec(&StoredDocument {
                doc_id: doc_id.clone(),
                source: source.clone(),
                text: text.clone(),
            });
            line.push(b'\n');
            let mut f = journal.lock();
            f.write_all(&line)?;
            f.sync_data()?;
        }
        let doc = Document {
            embedding: self.embedder.embed(&text),
            doc_id: doc_id.clone(),
            text,
            source,
        };
        docs.insert(doc_id, doc.clone());
        Ok(doc)
    }

    pub fn get(&self, doc_id: &str) -> Option<Document> {
        self.docs.read().get(doc_id).cloned()
    }

    /// Top-`k` documents by cosine similarity to `query_text`.
    pub fn retrieve(&self, query_text: &str, k: usize) -> Vec<RetrievedChunk> {
        let q = self.embedder.embed(query_text);
        if q.is_zero() || k == 0 {
            return Vec::new();
        }
        let docs = self.docs.read();
        let mut scored: Vec<RetrievedChunk> = docs
            .values()
            .map(|d| RetrievedChunk {
                doc_id: d.doc_id.clone(),
                score: q.cosine(&d.embedding),
                store_id: self.id.clone(),
            })
            .collect();
        scored.sort_by(local_order);
        scored.truncate(k);
        scored
    }
}

/// Merges per-store rankings into a global top-`k`.
pub fn merge_top_k(local: Vec<Vec<RetrievedChunk>>, k: usize) -> Vec<RetrievedChunk> {
    let mut all: Vec<RetrievedChunk> = local.into_iter().flatten().collect();
    all.sort_by(federated_order);
    all.truncate(k);
    all
}

/// Each store ranks locally; only `(doc_id, score, store_id)` triples are
/// merged centrally.
pub fn federated_retrieve(stores: &[&RagStore], query_text: &str, k: usize) -> Vec<RetrievedChunk> {
    let local = stores.iter().map(|s| s.retrieve(query_text, k)).collect();
    merge_top_k(local, k)
}
