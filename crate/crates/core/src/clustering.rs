//! Online clustering of exemplars.
//!
//! A new exemplar joins the cluster maximizing `s_p + s_r` among clusters
//! where both the prompt similarity `s_p` and the response similarity `s_r`
//! strictly exceed their thresholds; otherwise it seeds a new cluster. Ties
//! go to the lowest cluster id.
//!
//! Centroids are kept as running sums and normalized on update, so the
//! centroid of a cluster is the normalized mean of its members.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{cosine, EmbedError, Embedder, Embedding};
use crate::prompt::{Exemplar, PromptRecord, ResponseDoc, ResponseShape};

pub type ClusterId = u64;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("response arity {got} does not match cluster arity {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("embedding dimension {got} does not match cluster dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("snapshot record {line}: {message}")]
    Snapshot { line: usize, message: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterThresholds {
    pub t_prompt: f64,
    pub t_response: f64,
}

impl Default for ClusterThresholds {
    fn default() -> Self {
        Self {
            t_prompt: 0.8,
            t_response: 0.75,
        }
    }
}

impl ClusterThresholds {
    pub fn new(t_prompt: f64, t_response: f64) -> Result<Self, ClusterError> {
        let t = Self {
            t_prompt,
            t_response,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        for (name, v) in [("t_prompt", self.t_prompt), ("t_response", self.t_response)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ClusterError::Thresholds(format!(
                    "{name} must be in (0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Centroid {
    sum: Vec<f64>,
    unit: Embedding,
}

impl Centroid {
    fn new(first: &Embedding) -> Self {
        let sum = first.values().to_vec();
        let unit = Embedding::from_values(sum.clone()).normalized();
        Self { sum, unit }
    }

    fn add(&mut self, e: &Embedding) {
        for (s, v) in self.sum.iter_mut().zip(e.values()) {
            *s += v;
        }
        self.unit = Embedding::from_values(self.sum.clone()).normalized();
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    id: ClusterId,
    exemplars: Vec<Exemplar>,
    capacity: usize,
    prompt_centroid: Centroid,
    response_centroids: Vec<Centroid>,
    shape: ResponseShape,
    pub retries_used: u32,
    pub has_cache: bool,
}

impl Cluster {
    /// A cluster seeded with one exemplar, holding at most `capacity` members.
    pub fn seed(id: ClusterId, exemplar: Exemplar, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            id,
            prompt_centroid: Centroid::new(&exemplar.prompt_embedding),
            response_centroids: exemplar
                .response_embeddings
                .iter()
                .map(Centroid::new)
                .collect(),
            shape: exemplar.response.shape(),
            exemplars: vec![exemplar],
            capacity,
            retries_used: 0,
            has_cache: false,
        }
    }

    pub fn id(&self) -> ClusterId {
        self.id
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sealed(&self) -> bool {
        self.exemplars.len() >= self.capacity
    }

    pub fn response_arity(&self) -> usize {
        self.response_centroids.len()
    }

    /// Shape of the responses stored in this cluster (taken from its seed).
    pub fn response_shape(&self) -> ResponseShape {
        self.shape
    }

    pub fn prompt_centroid(&self) -> &Embedding {
        &self.prompt_centroid.unit
    }

    pub fn response_centroids(&self) -> impl Iterator<Item = &Embedding> {
        self.response_centroids.iter().map(|c| &c.unit)
    }

    pub fn prompt_similarity(&self, e_p: &Embedding) -> f64 {
        cosine(e_p, &self.prompt_centroid.unit)
    }

    /// Mean per-slot cosine against the response centroids, or `None` when the
    /// value counts differ. Two empty documents are fully similar.
    pub fn response_similarity(&self, resp: &[Embedding]) -> Option<f64> {
        if resp.len() != self.response_centroids.len() {
            return None;
        }
        if resp.is_empty() {
            return Some(1.0);
        }
        let total: f64 = resp
            .iter()
            .zip(&self.response_centroids)
            .map(|(e, c)| cosine(e, &c.unit))
            .sum();
        Some(total / resp.len() as f64)
    }

    /// Appends a member unless the cluster is full. Returns whether it was stored.
    pub fn add_exemplar(&mut self, exemplar: Exemplar) -> Result<bool, ClusterError> {
        if exemplar.response_arity() != self.response_arity() {
            return Err(ClusterError::ArityMismatch {
                expected: self.response_arity(),
                got: exemplar.response_arity(),
            });
        }
        if exemplar.prompt_embedding.dims() != self.prompt_centroid.unit.dims() {
            return Err(ClusterError::DimensionMismatch {
                expected: self.prompt_centroid.unit.dims(),
                got: exemplar.prompt_embedding.dims(),
            });
        }
        if self.sealed() {
            return Ok(false);
        }
        self.prompt_centroid.add(&exemplar.prompt_embedding);
        for (c, e) in self
            .response_centroids
            .iter_mut()
            .zip(&exemplar.response_embeddings)
        {
            c.add(e);
        }
        self.exemplars.push(exemplar);
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub cluster_id: ClusterId,
    pub created: bool,
    /// Whether the exemplar was stored (false when the chosen cluster was sealed).
    pub stored: bool,
    pub s_p: f64,
    pub s_r: f64,
}

/// All clusters, ordered by id.
#[derive(Debug, Clone)]
pub struct ClusterStore {
    clusters: Vec<Cluster>,
    next_id: ClusterId,
    capacity: usize,
}

impl ClusterStore {
    /// `capacity` is the per-cluster exemplar cap (three times the codegen minimum).
    pub fn new(capacity: usize) -> Self {
        Self {
            clusters: Vec::new(),
            next_id: 0,
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter()
    }

    pub fn get(&self, id: ClusterId) -> Option<&Cluster> {
        self.index_of(id).map(|i| &self.clusters[i])
    }

    pub fn get_mut(&mut self, id: ClusterId) -> Option<&mut Cluster> {
        self.index_of(id).map(move |i| &mut self.clusters[i])
    }

    fn index_of(&self, id: ClusterId) -> Option<usize> {
        self.clusters.binary_search_by_key(&id, |c| c.id).ok()
    }

    pub fn assign(&mut self, exemplar: Exemplar, thresholds: &ClusterThresholds) -> Assignment {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, cluster) in self.clusters.iter().enumerate() {
            let s_p = cluster.prompt_similarity(&exemplar.prompt_embedding);
            if s_p <= thresholds.t_prompt {
                continue;
            }
            let Some(s_r) = cluster.response_similarity(&exemplar.response_embeddings) else {
                continue;
            };
            if s_r <= thresholds.t_response {
                continue;
            }
            if best.is_none_or(|(_, bp, br)| s_p + s_r > bp + br) {
                best = Some((i, s_p, s_r));
            }
        }

        match best {
            Some((i, s_p, s_r)) => {
                let cluster = &mut self.clusters[i];
                // arity and dims were checked by the similarity gate
                let stored = cluster.add_exemplar(exemplar).unwrap_or(false);
                Assignment {
                    cluster_id: cluster.id,
                    created: false,
                    stored,
                    s_p,
                    s_r,
                }
            }
            None => {
                let id = self.next_id;
                self.next_id += 1;
                let cluster = Cluster::seed(id, exemplar, self.capacity);
                let e = &cluster.exemplars[0];
                let s_p = cluster.prompt_similarity(&e.prompt_embedding);
                let s_r = cluster
                    .response_similarity(&e.response_embeddings)
                    .unwrap_or(0.0);
                self.clusters.push(cluster);
                Assignment {
                    cluster_id: id,
                    created: true,
                    stored: true,
                    s_p,
                    s_r,
                }
            }
        }
    }

    /// The cluster with the highest prompt similarity, if it strictly exceeds `t_prompt`.
    pub fn nearest_cluster_by_prompt(
        &self,
        e_p: &Embedding,
        t_prompt: f64,
    ) -> Option<(ClusterId, f64)> {
        let mut best: Option<(ClusterId, f64)> = None;
        for cluster in &self.clusters {
            let s = cluster.prompt_similarity(e_p);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((cluster.id, s));
            }
        }
        best.filter(|(_, s)| *s > t_prompt)
    }

    pub fn to_records(&self) -> Vec<ClusterRecord> {
        self.clusters
            .iter()
            .map(|c| ClusterRecord {
                id: c.id,
                sealed: c.sealed(),
                retries_used: c.retries_used,
                exemplars: c
                    .exemplars
                    .iter()
                    .map(|e| ExemplarRecord {
                        prompt: e.prompt.clone(),
                        response: e.response.to_wire(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// Rebuilds a store from snapshot records, re-embedding every exemplar.
    pub fn from_records(
        records: Vec<ClusterRecord>,
        embedder: &dyn Embedder,
        capacity: usize,
    ) -> Result<Self, ClusterError> {
        let mut store = Self::new(capacity);
        for (line, record) in records.into_iter().enumerate() {
            let line = line + 1;
            if store.clusters.last().is_some_and(|c| c.id >= record.id) {
                return Err(ClusterError::Snapshot {
                    line,
                    message: format!("cluster id {} out of order", record.id),
                });
            }
            let mut cluster: Option<Cluster> = None;
            for ex in record.exemplars {
                let exemplar =
                    Exemplar::embed(embedder, ex.prompt, ResponseDoc::parse(&ex.response))?;
                match cluster.as_mut() {
                    None => cluster = Some(Cluster::seed(record.id, exemplar, capacity)),
                    Some(c) => {
                        c.add_exemplar(exemplar).map_err(|e| ClusterError::Snapshot {
                            line,
                            message: e.to_string(),
                        })?;
                    }
                }
            }
            let Some(mut cluster) = cluster else {
                return Err(ClusterError::Snapshot {
                    line,
                    message: "cluster has no exemplars".into(),
                });
            };
            cluster.retries_used = record.retries_used;
            store.next_id = record.id + 1;
            store.clusters.push(cluster);
        }
        Ok(store)
    }
}

/// One line of the cluster snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub id: ClusterId,
    pub sealed: bool,
    pub retries_used: u32,
    pub exemplars: Vec<ExemplarRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRecord {
    pub prompt: PromptRecord,
    /// Response in its wire form.
    pub response: String,
}
