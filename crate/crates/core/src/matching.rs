//! Maximum-cardinality bipartite matching (Hopcroft–Karp).
//!
//! Left vertices are scanned in index order and each adjacency list in the
//! order given, so the matching returned is a deterministic function of the
//! input. Callers that need a particular maximum matching among several
//! control it through vertex and adjacency ordering.

use std::collections::VecDeque;

const INF: usize = usize::MAX;

/// Dense boolean matrix, rows are left vertices (defenders), columns are
/// right vertices (intruders).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    /// Panics if rows differ in length.
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged feasibility matrix");
        BoolMatrix {
            rows: rows.len(),
            cols,
            cells: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.cols + c] = v;
    }
}

/// A matching between defenders and intruders.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(defender, intruder)` pairs, sorted by defender.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_defenders: Vec<usize>,
    pub unmatched_intruders: Vec<usize>,
}

impl Assignment {
    pub fn size(&self) -> usize {
        self.pairs.len()
    }

    pub fn partner_of_defender(&self, d: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == d).map(|p| p.1)
    }

    /// Build from a left-to-right mate table; unmatched lists are in index order.
    pub fn from_mates(left_mate: &[Option<usize>], n_right: usize) -> Self {
        let mut right_used = vec![false; n_right];
        let mut pairs = Vec::new();
        let mut unmatched_defenders = Vec::new();
        for (l, m) in left_mate.iter().enumerate() {
            match m {
                Some(r) => {
                    pairs.push((l, *r));
                    right_used[*r] = true;
                }
                None => unmatched_defenders.push(l),
            }
        }
        let unmatched_intruders = (0..n_right).filter(|&r| !right_used[r]).collect();
        Assignment {
            pairs,
            unmatched_defenders,
            unmatched_intruders,
        }
    }
}

/// Hopcroft–Karp over adjacency lists. Returns the mate of every left vertex.
pub fn hopcroft_karp(adjacency: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    let n_left = adjacency.len();
    let mut left_mate: Vec<Option<usize>> = vec![None; n_left];
    let mut right_mate: Vec<Option<usize>> = vec![None; n_right];
    let mut dist = vec![INF; n_left];

    loop {
        // BFS layering from free left vertices; `found` is the length of the
        // shortest augmenting path, INF if none.
        let mut queue = VecDeque::new();
        for l in 0..n_left {
            if left_mate[l].is_none() {
                dist[l] = 0;
                queue.push_back(l);
            } else {
                dist[l] = INF;
            }
        }
        let mut found = INF;
        while let Some(l) = queue.pop_front() {
            if dist[l] >= found {
                continue;
            }
            for &r in &adjacency[l] {
                match right_mate[r] {
                    None => {
                        if found == INF {
                            found = dist[l] + 1;
                        }
                    }
                    Some(l2) if dist[l2] == INF => {
                        dist[l2] = dist[l] + 1;
                        queue.push_back(l2);
                    }
                    Some(_) => {}
                }
            }
        }
        if found == INF {
            break;
        }

        let mut next_edge = vec![0usize; n_left];
        for l in 0..n_left {
            if left_mate[l].is_none() {
                augment(
                    l,
                    found,
                    adjacency,
                    &mut left_mate,
                    &mut right_mate,
                    &mut dist,
                    &mut next_edge,
                );
            }
        }
    }
    left_mate
}

/// Layered DFS. Iterative to keep deep instances off the call stack.
fn augment(
    root: usize,
    path_len: usize,
    adjacency: &[Vec<usize>],
    left_mate: &mut [Option<usize>],
    right_mate: &mut [Option<usize>],
    dist: &mut [usize],
    next_edge: &mut [usize],
) -> bool {
    // stack of (left vertex, right vertex used to reach the next layer)
    let mut stack: Vec<usize> = vec![root];
    let mut via: Vec<usize> = Vec::new();
    while let Some(&l) = stack.last() {
        let mut advanced = false;
        while next_edge[l] < adjacency[l].len() {
            let r = adjacency[l][next_edge[l]];
            next_edge[l] += 1;
            match right_mate[r] {
                None if dist[l] + 1 == path_len => {
                    // flip the alternating path
                    via.push(r);
                    for (&pl, &pr) in stack.iter().zip(&via) {
                        left_mate[pl] = Some(pr);
                        right_mate[pr] = Some(pl);
                    }
                    return true;
                }
                Some(l2) if dist[l2] == dist[l] + 1 => {
                    via.push(r);
                    stack.push(l2);
                    advanced = true;
                    break;
                }
                _ => {}
            }
        }
        if !advanced {
            dist[l] = INF;
            stack.pop();
            via.pop();
        }
    }
    false
}

/// Maximum matching of a feasibility matrix, columns scanned in index order.
pub fn max_matching(feasible: &BoolMatrix) -> Assignment {
    let adjacency: Vec<Vec<usize>> = (0..feasible.rows())
        .map(|r| (0..feasible.cols()).filter(|&c| feasible.get(r, c)).collect())
        .collect();
    let mates = hopcroft_karp(&adjacency, feasible.cols());
    Assignment::from_mates(&mates, feasible.cols())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_needs_augmentation() {
        let m = BoolMatrix::from_rows(&[vec![true, true], vec![true, false]]);
        let a = max_matching(&m);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert!(a.unmatched_defenders.is_empty() && a.unmatched_intruders.is_empty());
    }

    #[test]
    fn empty_graph() {
        let a = max_matching(&BoolMatrix::new(3, 4));
        assert_eq!(a.size(), 0);
        assert_eq!(a.unmatched_defenders, vec![0, 1, 2]);
        assert_eq!(a.unmatched_intruders, vec![0, 1, 2, 3]);
        assert_eq!(max_matching(&BoolMatrix::new(0, 0)).size(), 0);
    }

    #[test]
    fn diagonal_is_perfect() {
        let mut m = BoolMatrix::new(3, 3);
        for i in 0..3 {
            m.set(i, i, true);
        }
        assert_eq!(max_matching(&m).pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn long_augmenting_chain() {
        // staircase: row i feasible for i and i+1; greedy takes (i, i) and the
        // last row must push every earlier row one column over
        let n = 6;
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i, i + 1]).collect();
        adj.push(vec![0]);
        let mates = hopcroft_karp(&adj, n + 1);
        assert_eq!(mates.iter().filter(|m| m.is_some()).count(), n + 1);
    }
}
