//! Clique lifting and open/closed simplex enumeration.

use std::collections::BTreeSet;

use crate::complex::{build_complex, SimplicialComplex};
use crate::error::{GsanError, Result};

/// Fills every `(j + 1)`-clique of the graph as a `j`-simplex for `j <= max_order`.
pub fn clique_lift(edges: &[(usize, usize)], max_order: usize) -> Result<SimplicialComplex> {
    let mut adj: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for &(u, v) in edges {
        if u == v {
            return Err(GsanError::InvalidSimplex {
                simplex: vec![u, v],
                reason: "self-loop".into(),
            });
        }
        adj.entry(u).or_default().insert(v);
        adj.entry(v).or_default().insert(u);
    }
    let mut all: Vec<Vec<usize>> = adj.keys().map(|&v| vec![v]).collect();
    let mut frontier = all.clone();
    for _ in 0..max_order {
        let mut next = Vec::new();
        for c in &frontier {
            let last = *c.last().expect("non-empty clique");
            for &v in adj[&last].range(last + 1..) {
                if c.iter().all(|u| adj[u].contains(&v)) {
                    let mut t = c.clone();
                    t.push(v);
                    next.push(t);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    build_complex(&all, max_order)
}

/// Candidate `k`-simplices on the vertex set of `x`: `closed` ones belong
/// to `x`, `open` ones have every face in `x` but are missing themselves.
/// Both lists hold sorted dense vertex tuples in lexicographic order.
pub fn enumerate_simplex_candidates(x: &SimplicialComplex, k: usize) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if k == 0 {
        return Err(GsanError::OrderOutOfRange {
            order: 0,
            min: 1,
            max: x.max_order() + 1,
        });
    }
    if k > x.max_order() + 1 {
        return Err(GsanError::OrderOutOfRange {
            order: k,
            min: 1,
            max: x.max_order() + 1,
        });
    }
    let n0 = x.num_simplices(0);
    let mut closed = Vec::new();
    let mut open = Vec::new();
    for s in x.simplices(k - 1) {
        let last = *s.last().expect("non-empty simplex");
        for v in last + 1..n0 {
            let mut t = s.clone();
            t.push(v);
            let faces_present = (0..t.len() - 1).all(|j| {
                let mut f = t.clone();
                f.remove(j);
                x.index_of(&f).is_some()
            });
            if !faces_present {
                continue;
            }
            if x.index_of(&t).is_some() {
                closed.push(t);
            } else {
                open.push(t);
            }
        }
    }
    Ok((closed, open))
}
