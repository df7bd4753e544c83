//! Linkographs of a session and process metrics over them, output
//! diversity, and the suggestion-set evaluation harness.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::unionfind::UnionFind;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingGateway;
use crate::error::{Error, Result, Stage};
use crate::model::{BlockId, Session};
use crate::numeric::{self, Scalar};
use crate::provider::ImageStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    ParentChild,
    Reuse,
    /// Imported by an analyst.
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub i: usize,
    pub j: usize,
    pub kind: LinkKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Linkograph {
    /// Blocks in creation order; a node's index is its position.
    pub nodes: Vec<BlockId>,
    pub links: BTreeSet<Link>,
}

impl Linkograph {
    /// Graph over `n` anonymous nodes.
    pub fn with_nodes(n: usize) -> Self {
        Self {
            nodes: (1..=n).map(|k| BlockId(format!("n{k}"))).collect(),
            links: BTreeSet::new(),
        }
    }

    /// Add a link; endpoints are ordered so that `i < j`.
    pub fn add_link(&mut self, a: usize, b: usize, kind: LinkKind) -> Result<bool> {
        let (i, j) = (a.min(b), a.max(b));
        if i == j {
            return Err(Error::Validation(format!("self-link on node {i}")));
        }
        if j >= self.nodes.len() {
            return Err(Error::Validation(format!("link ({i},{j}) outside {} nodes", self.nodes.len())));
        }
        Ok(self.links.insert(Link { i, j, kind }))
    }
}

/// Nodes are blocks by creation order; links are parent edges and reuse
/// origins (source → copy).
pub fn build_linkograph(session: &Session) -> Linkograph {
    let order = session.blocks_in_order();
    let index: BTreeMap<&BlockId, usize> = order.iter().enumerate().map(|(n, b)| (&b.id, n)).collect();
    let mut g = Linkograph {
        nodes: order.iter().map(|b| b.id.clone()).collect(),
        links: BTreeSet::new(),
    };
    for e in session.edges() {
        g.add_link(index[&e.parent], index[&e.child], LinkKind::ParentChild)
            .expect("session edges are valid");
    }
    for b in &order {
        if let Some(origin) = &b.reuse_origin {
            g.add_link(index[&origin.source_block_id], index[&b.id], LinkKind::Reuse)
                .expect("reuse sources exist");
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualLink {
    pub i: usize,
    pub j: usize,
}

/// Add analyst links from a JSON list of `{i, j}`.
pub fn import_manual_links(graph: &mut Linkograph, json: &str) -> Result<usize> {
    let links: Vec<ManualLink> = serde_json::from_str(json).map_err(|e| Error::Validation(format!("manual links: {e}")))?;
    let mut added = 0;
    for l in links {
        if l.i >= l.j {
            return Err(Error::Validation(format!("manual link ({},{}) must have i < j", l.i, l.j)));
        }
        added += usize::from(graph.add_link(l.i, l.j, LinkKind::Manual)?);
    }
    Ok(added)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<F = f64> {
    pub n_nodes: usize,
    pub n_links: usize,
    /// Mean of `j - i`; absent without links.
    pub avg_link_distance: Option<F>,
    /// Undirected components, isolated nodes included.
    pub connected_components: usize,
    /// Shannon entropy (bits) of the link-distance histogram.
    pub link_entropy: F,
}

pub fn linkograph_metrics<F: Scalar>(graph: &Linkograph) -> MetricsReport<F> {
    let n = graph.nodes.len();
    let mut uf = UnionFind::<usize>::new(n);
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for l in &graph.links {
        uf.union(l.i, l.j);
        *histogram.entry(l.j - l.i).or_default() += 1;
    }
    let roots: BTreeSet<usize> = (0..n).map(|v| uf.find(v)).collect();
    let total: usize = histogram.iter().map(|(d, c)| d * c).sum();
    let n_links = graph.links.len();
    MetricsReport {
        n_nodes: n,
        n_links,
        avg_link_distance: (n_links > 0).then(|| F::count(total) / F::count(n_links)),
        connected_components: roots.len(),
        link_entropy: numeric::shannon_entropy_bits(&histogram.values().copied().collect::<Vec<_>>()),
    }
}

/// Largest `1 - cos` over all pairs of `vectors`.
pub fn max_cosine_distance<F: Scalar>(vectors: &[Vec<F>]) -> Result<F> {
    if vectors.len() < 2 {
        return Err(Error::NotEnoughData(format!("need at least 2 embeddings, have {}", vectors.len())));
    }
    numeric::max_pairwise_cosine_distance(vectors)
        .map_err(|e| Error::Validation(e.to_string()))
        .map(|best| best.expect("two or more points").0)
}

/// Max pairwise cosine distance over every generated image of the session,
/// in the joint embedding space.
pub fn session_diversity(session: &Session, store: &dyn ImageStore, emb: &EmbeddingGateway) -> Result<f64> {
    let images: Vec<_> = session
        .results()
        .values()
        .flat_map(|r| r.items.iter().filter_map(|i| i.image.clone()))
        .collect();
    if images.len() < 2 {
        return Err(Error::NotEnoughData(format!("need at least 2 images, have {}", images.len())));
    }
    let vectors = images
        .iter()
        .map(|img| {
            let bytes = store.get(img).map_err(Error::provider(Stage::Diversity))?;
            Ok(emb.embed_image(img, &bytes).map_err(Error::embedding(Stage::Diversity))?.into_values())
        })
        .collect::<Result<Vec<_>>>()?;
    max_cosine_distance(&vectors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub name: String,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub name: String,
    /// Mean cosine to the input direction.
    pub relevance: Option<f64>,
    /// Mean pairwise cosine within the set; absent for fewer than 2 items.
    pub within_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sets: Vec<SetReport>,
}

impl EvalReport {
    pub fn set(&self, name: &str) -> Option<&SetReport> {
        self.sets.iter().find(|s| s.name == name)
    }
}

/// Relevance and within-set similarity for each suggestion set.
pub fn eval_pipeline(direction: &[f64], sets: &[EvalSet]) -> Result<EvalReport> {
    let mismatch = |e: numeric::NumericError| Error::Validation(format!("evaluation embeddings: {e}"));
    let sets = sets
        .iter()
        .map(|s| {
            let sims = s
                .vectors
                .iter()
                .map(|v| numeric::cosine(direction, v))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(mismatch)?;
            Ok(SetReport {
                name: s.name.clone(),
                relevance: (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64),
                within_similarity: numeric::mean_pairwise_similarity(&s.vectors).map_err(mismatch)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { sets })
}

/// Mean within-set similarity over `trials` uniformly random `k`-subsets.
pub fn random_subset_similarity<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, trials: usize, rng: &mut R) -> Result<Option<f64>> {
    if k < 2 || points.len() < k || trials == 0 {
        return Ok(None);
    }
    let mut total = 0.0;
    for _ in 0..trials {
        let subset: Vec<Vec<f64>> = sample(rng, points.len(), k).iter().map(|i| points[i].clone()).collect();
        total += numeric::mean_pairwise_similarity(&subset)
            .map_err(|e| Error::Validation(e.to_string()))?
            .expect("k >= 2");
    }
    Ok(Some(total / trials as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn graph(n: usize, links: &[(usize, usize)]) -> Linkograph {
        let mut g = Linkograph::with_nodes(n);
        for &(i, j) in links {
            g.add_link(i, j, LinkKind::ParentChild).unwrap();
        }
        g
    }

    #[test]
    fn chain_of_four() {
        let m = linkograph_metrics::<f64>(&graph(4, &[(0, 1), (1, 2), (2, 3)]));
        assert_eq!(m.avg_link_distance, Some(1.0));
        assert_eq!(m.connected_components, 1);
        assert_eq!(m.link_entropy, 0.0);
    }

    #[test]
    fn fan_out() {
        let m = linkograph_metrics::<f64>(&graph(3, &[(0, 1), (0, 2)]));
        assert_eq!(m.avg_link_distance, Some(1.5));
        assert_eq!(m.connected_components, 1);
        assert_relative_eq!(m.link_entropy, 1.0);
    }

    #[test]
    fn no_links() {
        let m = linkograph_metrics::<f32>(&graph(3, &[]));
        assert_eq!(m.avg_link_distance, None);
        assert_eq!(m.connected_components, 3);
        assert_eq!(m.link_entropy, 0.0);
    }

    #[test]
    fn link_validation() {
        let mut g = Linkograph::with_nodes(3);
        assert!(g.add_link(1, 1, LinkKind::Reuse).is_err());
        assert!(g.add_link(0, 3, LinkKind::Reuse).is_err());
        assert!(g.add_link(2, 0, LinkKind::Reuse).unwrap());
        assert!(!g.add_link(0, 2, LinkKind::Reuse).unwrap());
        assert_eq!(import_manual_links(&mut g, r#"[{"i":0,"j":1}]"#).unwrap(), 1);
        assert!(import_manual_links(&mut g, r#"[{"i":1,"j":0}]"#).is_err());
        assert!(import_manual_links(&mut g, r#"[{"i":0,"j":1,"x":2}]"#).is_err());
    }

    #[test]
    fn diversity_needs_two() {
        assert!(matches!(max_cosine_distance(&[vec![1.0, 0.0]]), Err(Error::NotEnoughData(_))));
        assert_eq!(max_cosine_distance(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(), 0.0);
    }

    #[test]
    fn eval_single_element_sets() {
        let r = eval_pipeline(&[1.0, 0.0], &[EvalSet { name: "one".into(), vectors: vec![vec![1.0, 1.0]] }]).unwrap();
        assert_eq!(r.sets[0].within_similarity, None);
        assert_relative_eq!(r.sets[0].relevance.unwrap(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(eval_pipeline(&[1.0], &[EvalSet { name: "x".into(), vectors: vec![vec![1.0, 1.0]] }]).is_err());
    }
}
