//! Feature-space matching with Lowe ratio weights.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::lowe_ratio_weight;
use crate::error::{Error, Result};
use crate::features::{FeatureCloud, Modality};

pub const DEFAULT_TOP_K: usize = 400;

/// Rows of the similarity matrix computed per block during matching.
const MATCH_BLOCK: usize = 256;

/// Which cloud the matched query point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Index into cloud 0.
    pub p: usize,
    /// Index into cloud 1.
    pub q: usize,
    pub weight: f64,
    pub query: Side,
    /// Second nearest neighbor of the query point in the other cloud; the
    /// ratio weight is a function of the query, `q`-or-`p` and this index.
    pub second: usize,
}

impl Correspondence {
    /// A correspondence with no ratio-test provenance.
    pub fn new(p: usize, q: usize, weight: f64) -> Self {
        Self {
            p,
            q,
            weight,
            query: Side::Source,
            second: q,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub items: Vec<Correspondence>,
    pub provenance: Modality,
    pub source_ids: Option<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    p: usize,
    q: usize,
    weight: f64,
    provenance: Modality,
}

/// Weight descending, then `(p, q)` ascending.
fn ranking(a: &Correspondence, b: &Correspondence) -> Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(a.p.cmp(&b.p))
        .then(a.q.cmp(&b.q))
}

impl CorrespondenceSet {
    /// Sorts the items into canonical order.
    pub fn new(mut items: Vec<Correspondence>, provenance: Modality) -> Self {
        items.sort_by(ranking);
        Self {
            items,
            provenance,
            source_ids: None,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.items.iter()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.items.iter().map(|c| c.weight).collect()
    }

    /// The same pairs with every weight set to one.
    pub fn uniform(&self) -> Self {
        let items = self
            .items
            .iter()
            .map(|c| Correspondence { weight: 1.0, ..*c })
            .collect();
        Self {
            source_ids: self.source_ids.clone(),
            ..Self::new(items, self.provenance)
        }
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        for c in &self.items {
            let rec = Record {
                p: c.p,
                q: c.q,
                weight: c.weight,
                provenance: self.provenance,
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<correspondences>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let mut items = Vec::new();
        let mut provenance = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !(0.0..=1.0).contains(&rec.weight) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("weight {} outside [0, 1]", rec.weight),
                });
            }
            if provenance.is_some_and(|p| p != rec.provenance) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "mixed provenance".into(),
                });
            }
            provenance = Some(rec.provenance);
            items.push(Correspondence::new(rec.p, rec.q, rec.weight));
        }
        Ok(Self::new(items, provenance.unwrap_or(Modality::Geometric)))
    }
}

#[derive(Debug, Clone, Copy)]
struct TopTwo {
    best: (f64, usize),
    second: (f64, usize),
}

impl TopTwo {
    const EMPTY: TopTwo = TopTwo {
        best: (f64::INFINITY, usize::MAX),
        second: (f64::INFINITY, usize::MAX),
    };

    /// Candidates must arrive in increasing index order so that strict
    /// comparison keeps the lower index on ties.
    #[inline]
    fn push(&mut self, d: f64, i: usize) {
        if d < self.best.0 {
            self.second = self.best;
            self.best = (d, i);
        } else if d < self.second.0 {
            self.second = (d, i);
        }
    }
}

/// Cosine distance `1 − a·b` between two unit vectors, evaluated as
/// `½‖a − b‖²` so that identical vectors are exactly zero apart.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

/// Two nearest neighbors by cosine distance, in both directions.
fn two_nn_both_ways(f0: &DMatrix<f64>, f1: &DMatrix<f64>) -> (Vec<TopTwo>, Vec<TopTwo>) {
    let (n0, n1) = (f0.nrows(), f1.nrows());
    let f1t = f1.transpose();
    let mut rows = vec![TopTwo::EMPTY; n0];
    let mut cols = vec![TopTwo::EMPTY; n1];
    let mut start = 0;
    while start < n0 {
        let len = MATCH_BLOCK.min(n0 - start);
        let sim = f0.rows(start, len) * &f1t;
        for c in 0..n1 {
            let col = sim.column(c);
            let col_state = &mut cols[c];
            for (r, &s) in col.iter().enumerate() {
                let d = 1.0 - s;
                rows[start + r].push(d, c);
                col_state.push(d, start + r);
            }
        }
        start += len;
    }
    (rows, cols)
}

/// Ratio-test candidates from every point of both clouds, `N0 + N1` in
/// total, sorted by weight.
pub fn match_ratio_test(f0: &FeatureCloud, f1: &FeatureCloud) -> Result<CorrespondenceSet> {
    if f0.dim() != f1.dim() {
        return Err(Error::param(format!(
            "feature dimensions differ: {} vs {}",
            f0.dim(),
            f1.dim()
        )));
    }
    if f0.len() < 2 || f1.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: f0.len().min(f1.len()),
        });
    }
    let (rows, cols) = two_nn_both_ways(&f0.features, &f1.features);
    let row = |f: &FeatureCloud, i: usize| f.features.row(i).iter().copied().collect::<Vec<_>>();
    let weight = |query: &[f64], first: &[f64], second: &[f64]| {
        lowe_ratio_weight(cosine_distance(query, first), cosine_distance(query, second))
    };
    let mut items = Vec::with_capacity(f0.len() + f1.len());
    for (p, t) in rows.iter().enumerate() {
        items.push(Correspondence {
            p,
            q: t.best.1,
            weight: weight(&row(f0, p), &row(f1, t.best.1), &row(f1, t.second.1)),
            query: Side::Source,
            second: t.second.1,
        });
    }
    for (q, t) in cols.iter().enumerate() {
        items.push(Correspondence {
            p: t.best.1,
            q,
            weight: weight(&row(f1, q), &row(f0, t.best.1), &row(f0, t.second.1)),
            query: Side::Target,
            second: t.second.1,
        });
    }
    let provenance = if f0.modality == f1.modality {
        f0.modality
    } else {
        Modality::Geometric
    };
    Ok(CorrespondenceSet::new(items, provenance))
}

/// The `k` highest-weight correspondences in canonical order.
pub fn top_k_filter(set: &CorrespondenceSet, k: usize) -> Result<CorrespondenceSet> {
    if k == 0 {
        return Err(Error::param("top-k filter needs k >= 1"));
    }
    let mut items = set.items.clone();
    items.sort_by(ranking);
    items.truncate(k);
    Ok(CorrespondenceSet {
        items,
        provenance: set.provenance,
        source_ids: set.source_ids.clone(),
    })
}

/// Geometric feature pairs at the indices of (visual) correspondences.
pub fn transfer_correspondences(
    set: &CorrespondenceSet,
    g0: &FeatureCloud,
    g1: &FeatureCloud,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    set.items
        .iter()
        .map(|c| {
            assert!(c.p < g0.len() && c.q < g1.len(), "correspondence index out of range");
            (g0.feature(c.p), g1.feature(c.q))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::normalize_rows;
    use crate::geometry::PointCloud;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(seed: u64, n: usize, d: usize) -> FeatureCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = normalize_rows(&DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0)));
        FeatureCloud::new(PointCloud::new(vec![Vector3::zeros(); n]), f, Modality::Visual).unwrap()
    }

    #[test]
    fn lowe_weight_cases() {
        assert_eq!(lowe_ratio_weight(0.0, 0.5), 1.0);
        assert_eq!(lowe_ratio_weight(0.4, 0.4), 0.0);
        assert!((lowe_ratio_weight(0.2, 0.8) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn identical_features_match_themselves() {
        let f = random_features(1, 50, 32);
        let set = match_ratio_test(&f, &f).unwrap();
        assert_eq!(set.len(), 100);
        for c in set.iter() {
            assert_eq!(c.p, c.q);
            assert_eq!(c.weight, 1.0);
        }
    }

    #[test]
    fn matches_are_sorted_and_bounded() {
        let set = match_ratio_test(&random_features(2, 80, 32), &random_features(3, 60, 32)).unwrap();
        assert_eq!(set.len(), 140);
        for w in set.items.windows(2) {
            assert!(ranking(&w[0], &w[1]) != Ordering::Greater);
        }
        assert!(set.iter().all(|c| (0.0..=1.0).contains(&c.weight)));
    }

    #[test]
    fn top_k_edge_cases() {
        let set = match_ratio_test(&random_features(4, 30, 8), &random_features(5, 30, 8)).unwrap();
        assert_eq!(top_k_filter(&set, 1000).unwrap(), set);
        let one = top_k_filter(&set, 1).unwrap();
        assert_eq!(one.len(), 1);
        let max = set.iter().map(|c| c.weight).fold(f64::MIN, f64::max);
        assert_eq!(one.items[0].weight, max);
        assert!(top_k_filter(&set, 0).is_err());
    }

    #[test]
    fn transfer_indexes_geometric_features() {
        let g0 = random_features(6, 10, 32);
        let g1 = random_features(7, 10, 32);
        let empty = CorrespondenceSet::new(vec![], Modality::Visual);
        assert!(transfer_correspondences(&empty, &g0, &g1).is_empty());
        let set = CorrespondenceSet::new(vec![Correspondence::new(3, 7, 0.5)], Modality::Visual);
        let pairs = transfer_correspondences(&set, &g0, &g1);
        assert_eq!(pairs, vec![(g0.feature(3), g1.feature(7))]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(match_ratio_test(&random_features(1, 10, 8), &random_features(1, 10, 9)).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let set = match_ratio_test(&random_features(8, 20, 8), &random_features(9, 20, 8)).unwrap();
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        let back = CorrespondenceSet::read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.len(), set.len());
        for (a, b) in back.iter().zip(set.iter()) {
            assert_eq!((a.p, a.q, a.weight), (b.p, b.q, b.weight));
        }
    }
}
