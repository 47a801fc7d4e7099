//! The standardized query vocabulary, cluster-to-vocabulary mapping, and
//! cross-vocabulary overlap analysis.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cluster::EntityCluster;
use super::{cosine, require_threshold, require_unit, EntityError, Result};

/// Ordered list of standardized query terms; index is the label id. Terms
/// must stay unique after case-folding. `scp_codes`, when present, aligns a
/// diagnostic code with each term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scp_codes: Option<Vec<String>>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        if terms.is_empty() {
            return Err(EntityError::EmptyVocabulary);
        }
        let mut seen = HashSet::new();
        for term in &terms {
            let folded = term.trim().to_lowercase();
            if folded.is_empty() {
                return Err(EntityError::Format("vocabulary contains an empty term".into()));
            }
            if !seen.insert(folded.clone()) {
                return Err(EntityError::Format(format!(
                    "vocabulary terms collide after case folding: {folded:?}"
                )));
            }
        }
        Ok(Vocabulary { terms, scp_codes: None })
    }

    pub fn with_scp_codes(mut self, codes: Vec<String>) -> Result<Self> {
        if codes.len() != self.terms.len() {
            return Err(EntityError::Format(format!(
                "{} codes for {} terms",
                codes.len(),
                self.terms.len()
            )));
        }
        self.scp_codes = Some(codes);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn scp_codes(&self) -> Option<&[String]> {
        self.scp_codes.as_deref()
    }

    /// One term per line; the line number is the label index.
    pub fn load(path: &Path) -> Result<Self> {
        let lines: Vec<String> =
            BufReader::new(File::open(path)?).lines().collect::<std::io::Result<_>>()?;
        let terms: Vec<String> =
            lines.into_iter().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect();
        Vocabulary::new(terms)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for term in &self.terms {
            writeln!(w, "{term}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Map one cluster onto the vocabulary: the vocab term with the highest mean
/// cosine over the cluster's members wins if that mean exceeds `theta_map`
/// strictly; otherwise the cluster stays unmapped. Mean ties resolve to the
/// lower vocabulary index.
pub fn map_to_vocabulary(
    cluster: &EntityCluster,
    vocab: &Vocabulary,
    vocab_vectors: &[Vec<f32>],
    theta_map: f64,
) -> Result<Option<(usize, f64)>> {
    require_threshold("theta_map", theta_map)?;
    if vocab.is_empty() || vocab_vectors.is_empty() {
        return Err(EntityError::EmptyVocabulary);
    }
    if vocab_vectors.len() != vocab.len() {
        return Err(EntityError::Config(format!(
            "{} vectors for {} vocabulary terms",
            vocab_vectors.len(),
            vocab.len()
        )));
    }
    for (i, v) in vocab_vectors.iter().enumerate() {
        require_unit("map_to_vocabulary vocab", i, v)?;
    }
    for (i, v) in cluster.member_vectors.iter().enumerate() {
        require_unit("map_to_vocabulary cluster", i, v)?;
    }
    if cluster.member_vectors.is_empty() {
        return Err(EntityError::Config("cluster with no member vectors".into()));
    }

    let mut best: Option<(usize, f64)> = None;
    for (idx, vv) in vocab_vectors.iter().enumerate() {
        let mean: f64 = cluster.member_vectors.iter().map(|mv| cosine(mv, vv)).sum::<f64>()
            / cluster.member_vectors.len() as f64;
        // Strictly-greater comparison keeps the lowest index on ties.
        if best.map_or(true, |(_, b)| mean > b) {
            best = Some((idx, mean));
        }
    }
    let (idx, mean) = best.expect("vocabulary is non-empty");
    Ok((mean > theta_map).then_some((idx, mean)))
}

/// Convenience: map every cluster, preserving cluster order.
pub fn map_cluster_to_vocabulary(
    clusters: &[EntityCluster],
    vocab: &Vocabulary,
    vocab_vectors: &[Vec<f32>],
    theta_map: f64,
) -> Result<Vec<Option<(usize, f64)>>> {
    clusters.iter().map(|c| map_to_vocabulary(c, vocab, vocab_vectors, theta_map)).collect()
}

/// One cross-vocabulary match from `overlap_analysis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPair {
    pub term_a: String,
    pub term_b: String,
    pub similarity: f64,
}

/// Report each b-term's single best a-term wherever the cosine reaches
/// `theta`, sorted by similarity descending.
pub fn overlap_analysis(
    vocab_a: &Vocabulary,
    vectors_a: &[Vec<f32>],
    vocab_b: &Vocabulary,
    vectors_b: &[Vec<f32>],
    theta: f64,
) -> Result<Vec<OverlapPair>> {
    require_threshold("theta_overlap", theta)?;
    if vectors_a.len() != vocab_a.len() || vectors_b.len() != vocab_b.len() {
        return Err(EntityError::Config("vocabulary/vector length mismatch".into()));
    }
    for (i, v) in vectors_a.iter().enumerate() {
        require_unit("overlap_analysis a", i, v)?;
    }
    for (i, v) in vectors_b.iter().enumerate() {
        require_unit("overlap_analysis b", i, v)?;
    }

    let mut pairs = Vec::new();
    for (bi, bv) in vectors_b.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ai, av) in vectors_a.iter().enumerate() {
            let sim = cosine(av, bv);
            if best.map_or(true, |(_, s)| sim > s) {
                best = Some((ai, sim));
            }
        }
        if let Some((ai, sim)) = best {
            if sim >= theta {
                pairs.push(OverlapPair {
                    term_a: vocab_a.term(ai).to_string(),
                    term_b: vocab_b.term(bi).to_string(),
                    similarity: sim,
                });
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.similarity
            .partial_cmp(&x.similarity)
            .expect("finite similarities")
            .then_with(|| x.term_b.cmp(&y.term_b))
    });
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planar(theta_rad: f64) -> Vec<f32> {
        vec![theta_rad.cos() as f32, theta_rad.sin() as f32]
    }

    /// 2-D unit vector pair at an exact target cosine: [1,0] and [c, sin].
    fn pair_at_cosine(c: f64) -> (Vec<f32>, Vec<f32>) {
        let s = (1.0 - c * c).sqrt();
        (vec![1.0, 0.0], vec![c as f32, s as f32])
    }

    fn singleton_cluster(term: &str, vector: Vec<f32>) -> EntityCluster {
        EntityCluster {
            representative: term.to_string(),
            members: vec![(term.to_string(), 1)],
            member_vectors: vec![vector],
        }
    }

    fn vocab(terms: &[&str]) -> Vocabulary {
        Vocabulary::new(terms.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn engineered_similarity_maps_above_threshold() {
        // Realistic observed similarity between an abbreviation and its
        // expansion; well above the 0.75 mapping threshold.
        let (ev, vv) = pair_at_cosine(0.8976);
        let cluster = singleton_cluster("pacs", ev);
        let v = vocab(&["premature atrial complex"]);
        let (idx, sim) = map_to_vocabulary(&cluster, &v, &[vv], 0.75).unwrap().unwrap();
        assert_eq!(idx, 0);
        assert!((sim - 0.8976).abs() < 1e-6, "sim {sim}");
    }

    #[test]
    fn orthogonal_cluster_stays_unmapped() {
        let cluster = singleton_cluster("x", planar(std::f64::consts::FRAC_PI_2));
        let v = vocab(&["term"]);
        assert_eq!(map_to_vocabulary(&cluster, &v, &[planar(0.0)], 0.75).unwrap(), None);
    }

    #[test]
    fn identical_vector_maps_with_similarity_one() {
        let cluster = singleton_cluster("afib", planar(0.4));
        let v = vocab(&["atrial fibrillation"]);
        let (idx, sim) = map_to_vocabulary(&cluster, &v, &[planar(0.4)], 0.75).unwrap().unwrap();
        assert_eq!(idx, 0);
        assert!((sim - 1.0).abs() < 1e-6);
    }

    #[test]
    fn threshold_boundary_is_strict() {
        // Means straddling theta_map: strictly below and strictly above by
        // the same 1e-4 margin. The boundary itself is exclusive.
        for (target, expect_mapped) in [(0.7499, false), (0.7501, true)] {
            let (ev, vv) = pair_at_cosine(target);
            let cluster = singleton_cluster("t", ev);
            let v = vocab(&["ref"]);
            let mapped = map_to_vocabulary(&cluster, &v, &[vv], 0.75).unwrap();
            assert_eq!(mapped.is_some(), expect_mapped, "target {target}");
        }
    }

    #[test]
    fn mean_over_members_decides_and_ties_take_lower_index() {
        // Two members at ±0.2 rad around zero; vocab term at zero has mean
        // cosine cos(0.2) ≈ 0.980; a term at 0.9 rad scores lower.
        let cluster = EntityCluster {
            representative: "a".into(),
            members: vec![("a".into(), 1), ("b".into(), 1)],
            member_vectors: vec![planar(0.2), planar(-0.2)],
        };
        let v = vocab(&["far", "near"]);
        let vecs = vec![planar(0.9), planar(0.0)];
        let (idx, sim) = map_to_vocabulary(&cluster, &v, &vecs, 0.75).unwrap().unwrap();
        assert_eq!(idx, 1);
        assert!((sim - 0.2f64.cos()).abs() < 1e-6);

        // Exact tie: two identical vocab vectors; the lower index wins.
        let tied = vec![planar(0.0), planar(0.0)];
        let (idx, _) = map_to_vocabulary(&cluster, &v, &tied, 0.75).unwrap().unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        assert!(matches!(Vocabulary::new(vec![]), Err(EntityError::EmptyVocabulary)));
        let cluster = singleton_cluster("x", planar(0.0));
        let v = vocab(&["a"]);
        assert!(matches!(
            map_to_vocabulary(&cluster, &v, &[], 0.75),
            Err(EntityError::EmptyVocabulary)
        ));
    }

    #[test]
    fn vocabulary_rejects_case_fold_collisions_and_round_trips() {
        assert!(matches!(
            Vocabulary::new(vec!["PACs".into(), "pacs".into()]),
            Err(EntityError::Format(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = vocab(&["atrial fibrillation", "sinus rhythm"]);
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
        let coded = v.clone().with_scp_codes(vec!["AFIB".into(), "SR".into()]).unwrap();
        assert_eq!(coded.scp_codes().unwrap()[0], "AFIB");
        assert!(coded.clone().with_scp_codes(vec!["X".into()]).is_err());
    }

    #[test]
    fn overlap_reports_best_match_per_b_term_sorted() {
        let a = vocab(&["atrial fibrillation", "inferior infarction"]);
        let av = vec![planar(0.0), planar(1.2)];
        // b0 duplicates a0 exactly; b1 sits at the engineered near-duplicate
        // angle from a1; b2 is far from everything.
        let target = 0.9512f64;
        let b = vocab(&["afib exact", "myocardial infarction inferior", "unrelated"]);
        let bv = vec![planar(0.0), planar(1.2 + target.acos()), planar(-1.4)];

        let pairs = overlap_analysis(&a, &av, &b, &bv, 0.95).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].term_a, "atrial fibrillation");
        assert_eq!(pairs[0].term_b, "afib exact");
        assert!((pairs[0].similarity - 1.0).abs() < 1e-6);
        assert_eq!(pairs[1].term_a, "inferior infarction");
        assert!((pairs[1].similarity - target).abs() < 1e-6);

        // Tightening theta past the engineered similarity drops that pair.
        let pairs = overlap_analysis(&a, &av, &b, &bv, 0.96).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].term_b, "afib exact");
    }

    #[test]
    fn disjoint_orthogonal_vocabularies_have_no_overlap() {
        let a = vocab(&["a"]);
        let b = vocab(&["b"]);
        let pairs =
            overlap_analysis(&a, &[planar(0.0)], &b, &[planar(std::f64::consts::FRAC_PI_2)], 0.95)
                .unwrap();
        assert!(pairs.is_empty());
    }
}
