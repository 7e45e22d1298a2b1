//! Simplicial complexes with a fixed reference orientation.
//!
//! Vertex labels are arbitrary non-negative integers; internally they are
//! re-indexed to `0..N_0` in increasing label order, so sorted tuples keep
//! the same order under either labelling. Every simplex is a strictly
//! increasing tuple and each order is listed lexicographically.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GsanError, Result};
use crate::sparse::SparseOperator;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimplicialComplex {
    max_order: usize,
    simplices: Vec<Vec<Vec<usize>>>,
    index: Vec<HashMap<Vec<usize>, usize>>,
    vertex_labels: Vec<usize>,
}

/// On-disk form: `{ "max_order": K, "simplices": { "0": [[v]], "1": [[u, v]], ... } }`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComplexFile {
    max_order: usize,
    simplices: BTreeMap<String, Vec<Vec<usize>>>,
}

fn check_tuple(t: &[usize], max_order: usize) -> Result<Vec<usize>> {
    if t.is_empty() {
        return Err(GsanError::InvalidSimplex {
            simplex: vec![],
            reason: "empty tuple".into(),
        });
    }
    let mut s = t.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(GsanError::InvalidSimplex {
            simplex: t.to_vec(),
            reason: "repeated vertex".into(),
        });
    }
    if s.len() - 1 > max_order {
        return Err(GsanError::OrderExceeded {
            simplex: t.to_vec(),
            order: s.len() - 1,
            max_order,
        });
    }
    Ok(s)
}

/// Downward closure of `top_simplices`, truncated nowhere: a tuple longer
/// than `max_order + 1` is an error.
pub fn build_complex(top_simplices: &[Vec<usize>], max_order: usize) -> Result<SimplicialComplex> {
    let mut sorted = Vec::with_capacity(top_simplices.len());
    for t in top_simplices {
        sorted.push(check_tuple(t, max_order)?);
    }
    let labels: BTreeSet<usize> = sorted.iter().flatten().copied().collect();
    let vertex_labels: Vec<usize> = labels.into_iter().collect();
    let dense: HashMap<usize, usize> = vertex_labels
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();

    let mut sets: Vec<BTreeSet<Vec<usize>>> = vec![BTreeSet::new(); max_order + 1];
    for s in &sorted {
        let d: Vec<usize> = s.iter().map(|v| dense[v]).collect();
        let n = d.len();
        for mask in 1u64..(1u64 << n) {
            let face: Vec<usize> = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| d[b]).collect();
            sets[face.len() - 1].insert(face);
        }
    }
    Ok(SimplicialComplex::from_sets(max_order, sets, vertex_labels))
}

impl SimplicialComplex {
    fn from_sets(
        max_order: usize,
        sets: Vec<BTreeSet<Vec<usize>>>,
        vertex_labels: Vec<usize>,
    ) -> Self {
        let simplices: Vec<Vec<Vec<usize>>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let index = simplices
            .iter()
            .map(|order| order.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect())
            .collect();
        SimplicialComplex {
            max_order,
            simplices,
            index,
            vertex_labels,
        }
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// `N_k`; zero for orders above `max_order`.
    pub fn num_simplices(&self, k: usize) -> usize {
        self.simplices.get(k).map_or(0, |s| s.len())
    }

    /// `[N_0, ..., N_K]`.
    pub fn sizes(&self) -> Vec<usize> {
        self.simplices.iter().map(|s| s.len()).collect()
    }

    pub fn total_simplices(&self) -> usize {
        self.sizes().iter().sum()
    }

    /// k-simplices as tuples of internal (dense) vertex ids.
    pub fn simplices(&self, k: usize) -> &[Vec<usize>] {
        self.simplices.get(k).map_or(&[], |s| s.as_slice())
    }

    /// Position of a tuple of internal vertex ids within its order.
    pub fn index_of(&self, simplex: &[usize]) -> Option<usize> {
        if simplex.is_empty() {
            return None;
        }
        self.index.get(simplex.len() - 1)?.get(simplex).copied()
    }

    /// Original label of each internal vertex id.
    pub fn vertex_labels(&self) -> &[usize] {
        &self.vertex_labels
    }

    /// A simplex expressed with the original vertex labels.
    pub fn labeled(&self, k: usize, i: usize) -> Vec<usize> {
        self.simplices[k][i].iter().map(|&v| self.vertex_labels[v]).collect()
    }

    fn check_order(&self, k: usize, min: usize) -> Result<()> {
        if k < min || k > self.max_order {
            return Err(GsanError::OrderOutOfRange {
                order: k,
                min,
                max: self.max_order,
            });
        }
        Ok(())
    }

    /// `B_k` for `1 <= k <= K`, allowed to have zero rows or columns. The face
    /// omitting vertex `j` carries sign `(-1)^j`.
    pub fn boundary(&self, k: usize) -> Result<SparseOperator> {
        self.check_order(k, 1)?;
        let mut t = Vec::with_capacity(self.num_simplices(k) * (k + 1));
        for (col, s) in self.simplices[k].iter().enumerate() {
            for j in 0..s.len() {
                let face: Vec<usize> = s.iter().enumerate().filter(|&(p, _)| p != j).map(|(_, &v)| v).collect();
                let row = self.index[k - 1][&face];
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                t.push((row, col, sign));
            }
        }
        SparseOperator::from_triplets(self.num_simplices(k - 1), self.num_simplices(k), t)
    }

    /// `B_k`, requiring both orders to be nonempty.
    pub fn incidence_matrix(&self, k: usize) -> Result<SparseOperator> {
        self.check_order(k, 1)?;
        for order in [k - 1, k] {
            if self.num_simplices(order) == 0 {
                return Err(GsanError::EmptyOrder(order));
            }
        }
        self.boundary(k)
    }

    /// Lower and upper neighborhoods of every k-simplex, each including the
    /// simplex itself, sorted ascending.
    pub fn neighborhoods(&self, k: usize) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        self.check_order(k, 0)?;
        let n = self.num_simplices(k);
        let support = |op: Option<SparseOperator>| -> Vec<Vec<usize>> {
            (0..n)
                .map(|i| {
                    let mut row: BTreeSet<usize> = BTreeSet::from([i]);
                    if let Some(op) = &op {
                        row.extend(op.row(i).0.iter().copied());
                    }
                    row.into_iter().collect()
                })
                .collect()
        };
        let lower = if k > 0 {
            let b = self.boundary(k)?;
            Some(b.transpose().matmul(&b)?)
        } else {
            None
        };
        let upper = if k < self.max_order {
            let b = self.boundary(k + 1)?;
            Some(b.matmul(&b.transpose())?)
        } else {
            None
        };
        Ok((support(lower), support(upper)))
    }

    /// Loads the JSON complex format, rejecting unsorted tuples and missing faces.
    pub fn from_json(text: &str) -> Result<SimplicialComplex> {
        let file: ComplexFile = serde_json::from_str(text)?;
        let k_max = file.max_order;
        let mut by_order: Vec<Vec<Vec<usize>>> = vec![Vec::new(); k_max + 1];
        for (key, list) in file.simplices {
            let k: usize = key
                .parse()
                .map_err(|_| GsanError::Parse(format!("order key `{key}` is not an integer")))?;
            if k > k_max {
                return Err(GsanError::OrderOutOfRange {
                    order: k,
                    min: 0,
                    max: k_max,
                });
            }
            for t in list {
                if t.len() != k + 1 {
                    return Err(GsanError::InvalidSimplex {
                        simplex: t,
                        reason: format!("listed under order {k}"),
                    });
                }
                if t.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(GsanError::InvalidSimplex {
                        simplex: t,
                        reason: "not strictly increasing".into(),
                    });
                }
                by_order[k].push(t);
            }
        }
        let present: Vec<BTreeSet<&Vec<usize>>> = by_order.iter().map(|o| o.iter().collect()).collect();
        for (k, order) in by_order.iter().enumerate() {
            if present[k].len() != order.len() {
                return Err(GsanError::Parse(format!("duplicate simplex at order {k}")));
            }
            if k == 0 {
                continue;
            }
            for s in order {
                for j in 0..s.len() {
                    let face: Vec<usize> = s.iter().enumerate().filter(|&(p, _)| p != j).map(|(_, &v)| v).collect();
                    if !present[k - 1].contains(&face) {
                        return Err(GsanError::InvalidSimplex {
                            simplex: s.clone(),
                            reason: format!("face {face:?} missing"),
                        });
                    }
                }
            }
        }
        let all: Vec<Vec<usize>> = by_order.into_iter().flatten().collect();
        build_complex(&all, k_max)
    }

    pub fn to_json(&self) -> String {
        let simplices = (0..=self.max_order)
            .map(|k| {
                let list = (0..self.num_simplices(k)).map(|i| self.labeled(k, i)).collect();
                (k.to_string(), list)
            })
            .collect();
        serde_json::to_string(&ComplexFile {
            max_order: self.max_order,
            simplices,
        })
        .expect("serializable")
    }
}

/// Random complex: `n_top` random tuples over `n_vertices` vertices with
/// sizes in `1..=max_order + 1`, closed downward.
pub fn random_complex<R: Rng>(
    rng: &mut R,
    n_vertices: usize,
    n_top: usize,
    max_order: usize,
) -> SimplicialComplex {
    let verts: Vec<usize> = (0..n_vertices).collect();
    let top: Vec<Vec<usize>> = (0..n_top)
        .map(|_| {
            let size = rng.gen_range(1..=(max_order + 1).min(n_vertices));
            verts.choose_multiple(rng, size).copied().collect()
        })
        .collect();
    build_complex(&top, max_order).expect("valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled() -> SimplicialComplex {
        build_complex(&[vec![0, 1, 2]], 2).unwrap()
    }

    fn hollow() -> SimplicialComplex {
        build_complex(&[vec![0, 1], vec![1, 2], vec![0, 2]], 2).unwrap()
    }

    #[test]
    fn closure_of_one_triangle() {
        let x = filled();
        assert_eq!(x.simplices(0), &[vec![0], vec![1], vec![2]]);
        assert_eq!(x.simplices(1), &[vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(x.simplices(2), &[vec![0, 1, 2]]);
    }

    #[test]
    fn hollow_triangle_has_no_faces_of_order_two() {
        let x = hollow();
        assert_eq!(x.sizes(), vec![3, 3, 0]);
    }

    #[test]
    fn two_triangles_sharing_an_edge() {
        let x = build_complex(&[vec![0, 1, 2], vec![1, 2, 3]], 2).unwrap();
        assert_eq!(x.sizes(), vec![4, 5, 2]);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            build_complex(&[vec![0, 0, 1]], 2),
            Err(GsanError::InvalidSimplex { .. })
        ));
        assert!(matches!(
            build_complex(&[vec![0, 1, 2]], 1),
            Err(GsanError::OrderExceeded { .. })
        ));
    }

    #[test]
    fn filled_triangle_incidences() {
        let x = filled();
        let b1 = x.incidence_matrix(1).unwrap().to_dense();
        assert_eq!(b1.column(0), vec![-1.0, 1.0, 0.0]);
        assert_eq!(b1.column(1), vec![-1.0, 0.0, 1.0]);
        assert_eq!(b1.column(2), vec![0.0, -1.0, 1.0]);
        let b2 = x.incidence_matrix(2).unwrap().to_dense();
        assert_eq!(b2.column(0), vec![1.0, -1.0, 1.0]);
        assert!(x.incidence_matrix(1).unwrap().is_integer_exact());
    }

    #[test]
    fn incidence_errors() {
        let x = hollow();
        assert_eq!(x.incidence_matrix(2), Err(GsanError::EmptyOrder(2)));
        assert!(matches!(x.incidence_matrix(0), Err(GsanError::OrderOutOfRange { .. })));
        assert!(matches!(x.incidence_matrix(3), Err(GsanError::OrderOutOfRange { .. })));
        assert_eq!(x.boundary(2).unwrap().shape(), (3, 0));
    }

    #[test]
    fn neighborhood_examples() {
        let (lower, upper) = filled().neighborhoods(1).unwrap();
        assert!(upper.iter().all(|u| u == &vec![0, 1, 2]));
        assert!(lower.iter().all(|l| l == &vec![0, 1, 2]));
        let (_, upper) = hollow().neighborhoods(1).unwrap();
        assert_eq!(upper, vec![vec![0], vec![1], vec![2]]);
        let (lower, upper) = filled().neighborhoods(0).unwrap();
        assert_eq!(lower, vec![vec![0], vec![1], vec![2]]);
        assert!(upper.iter().all(|u| u == &vec![0, 1, 2]));
        let (_, upper) = filled().neighborhoods(2).unwrap();
        assert_eq!(upper, vec![vec![0]]);
    }

    #[test]
    fn labels_are_reindexed() {
        let x = build_complex(&[vec![40, 7], vec![7, 1000]], 1).unwrap();
        assert_eq!(x.vertex_labels(), &[7, 40, 1000]);
        assert_eq!(x.simplices(1), &[vec![0, 1], vec![0, 2]]);
        assert_eq!(x.labeled(1, 1), vec![7, 1000]);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let x = build_complex(&[vec![3, 5, 9], vec![9, 11]], 2).unwrap();
        let back = SimplicialComplex::from_json(&x.to_json()).unwrap();
        assert_eq!(back, x);
        let unsorted = r#"{"max_order":1,"simplices":{"0":[[0],[1]],"1":[[1,0]]}}"#;
        assert!(SimplicialComplex::from_json(unsorted).is_err());
        let missing = r#"{"max_order":1,"simplices":{"0":[[0]],"1":[[0,1]]}}"#;
        assert!(SimplicialComplex::from_json(missing).is_err());
        let unknown = r#"{"max_order":0,"simplices":{"0":[[0]]},"extra":1}"#;
        assert!(SimplicialComplex::from_json(unknown).is_err());
    }
}
