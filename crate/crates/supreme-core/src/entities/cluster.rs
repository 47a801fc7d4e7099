//! Embedding-similarity deduplication of extracted entities.

use std::collections::HashMap;

use super::{cosine, require_threshold, require_unit, EntityError, Result};
use crate::entities::ExtractionResult;

use super::extraction::filter_uncertain;

/// A group of entity strings judged to name the same concept.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityCluster {
    /// The member kept as the cluster's face: highest corpus frequency,
    /// ties broken toward the lexicographically smaller string.
    pub representative: String,
    /// `(entity, corpus frequency)` pairs, ordered by frequency descending
    /// then string ascending.
    pub members: Vec<(String, u64)>,
    /// Unit vectors aligned with `members`.
    pub member_vectors: Vec<Vec<f32>>,
}

/// Count certain entities across a corpus of extraction results: unique
/// entity strings with their corpus frequencies, sorted lexicographically.
pub fn count_entities(results: &[ExtractionResult]) -> Vec<(String, u64)> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for result in results {
        for entity in filter_uncertain(result) {
            *counts.entry(entity).or_insert(0) += 1;
        }
    }
    let mut out: Vec<(String, u64)> = counts.into_iter().collect();
    out.sort();
    out
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Merge entities whose embeddings are transitively similar: clusters are the
/// connected components of the graph with an edge wherever cosine similarity
/// reaches `theta_dup`. Clusters come back sorted by representative.
pub fn dedup_entities(
    entities: &[(String, u64)],
    vectors: &[Vec<f32>],
    theta_dup: f64,
) -> Result<Vec<EntityCluster>> {
    require_threshold("theta_dup", theta_dup)?;
    if entities.len() != vectors.len() {
        return Err(EntityError::Config(format!(
            "{} entities but {} vectors",
            entities.len(),
            vectors.len()
        )));
    }
    for (i, v) in vectors.iter().enumerate() {
        require_unit("dedup_entities", i, v)?;
        if i > 0 && v.len() != vectors[0].len() {
            return Err(EntityError::Config("vectors of mixed dimension".into()));
        }
    }

    let n = entities.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if cosine(&vectors[i], &vectors[j]) >= theta_dup {
                uf.union(i, j);
            }
        }
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        groups.entry(uf.find(i)).or_default().push(i);
    }

    let mut clusters: Vec<EntityCluster> = groups
        .into_values()
        .map(|mut idx| {
            // Frequency descending, then entity string ascending; the head is
            // the representative.
            idx.sort_by(|&a, &b| {
                entities[b].1.cmp(&entities[a].1).then_with(|| entities[a].0.cmp(&entities[b].0))
            });
            EntityCluster {
                representative: entities[idx[0]].0.clone(),
                members: idx.iter().map(|&i| entities[i].clone()).collect(),
                member_vectors: idx.iter().map(|&i| vectors[i].clone()).collect(),
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.representative.cmp(&b.representative));
    Ok(clusters)
}
