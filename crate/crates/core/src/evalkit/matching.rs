//! One-to-one onset matching as a maximum bipartite matching.

use std::collections::VecDeque;

use crate::events::NoteList;

/// Pairs are `(ref index, est index)` into the note lists' sorted order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_ref: Vec<usize>,
    pub unmatched_est: Vec<usize>,
}

impl MatchResult {
    pub fn n_matched(&self) -> usize {
        self.pairs.len()
    }
}

/// Distances are rounded to 7 decimals before the comparison so that
/// boundary cases like `0.15 - 0.10` count as inside a 50 ms window.
pub fn within(a: f64, b: f64, tolerance: f64) -> bool {
    ((a - b).abs() * 1e7).round() / 1e7 <= tolerance
}

/// Hopcroft–Karp on an adjacency list of left vertices. Returns, for each
/// left vertex, its matched right vertex.
pub fn hopcroft_karp(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    const INF: usize = usize::MAX;
    let n_left = adj.len();
    let mut pair_l: Vec<Option<usize>> = vec![None; n_left];
    let mut pair_r: Vec<Option<usize>> = vec![None; n_right];
    let mut dist = vec![INF; n_left];

    loop {
        // BFS layers from free left vertices.
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if pair_l[u].is_none() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = INF;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                match pair_r[v] {
                    None => found = true,
                    Some(w) if dist[w] == INF => {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                    Some(_) => {}
                }
            }
        }
        if !found {
            break;
        }
        for u in 0..n_left {
            if pair_l[u].is_none() {
                augment(u, adj, &mut pair_l, &mut pair_r, &mut dist);
            }
        }
    }
    pair_l
}

fn augment(
    u: usize,
    adj: &[Vec<usize>],
    pair_l: &mut [Option<usize>],
    pair_r: &mut [Option<usize>],
    dist: &mut [usize],
) -> bool {
    for &v in &adj[u] {
        let ok = match pair_r[v] {
            None => true,
            Some(w) => dist[w] == dist[u].wrapping_add(1) && augment(w, adj, pair_l, pair_r, dist),
        };
        if ok {
            pair_l[u] = Some(v);
            pair_r[v] = Some(u);
            return true;
        }
    }
    dist[u] = usize::MAX;
    false
}

/// Maximum-cardinality matching of same-component notes within `tolerance`
/// seconds, solved independently per component.
pub fn match_notes(reference: &NoteList, estimate: &NoteList, tolerance: f64) -> MatchResult {
    let refs = reference.notes();
    let ests = estimate.notes();
    let span = reference.component_span().max(estimate.component_span());
    let mut pairs = Vec::new();
    for c in 0..span {
        let ri: Vec<usize> = (0..refs.len()).filter(|&i| refs[i].component == c).collect();
        let ei: Vec<usize> = (0..ests.len()).filter(|&j| ests[j].component == c).collect();
        if ri.is_empty() || ei.is_empty() {
            continue;
        }
        let adj: Vec<Vec<usize>> = ri
            .iter()
            .map(|&i| {
                (0..ei.len())
                    .filter(|&k| within(refs[i].time, ests[ei[k]].time, tolerance))
                    .collect()
            })
            .collect();
        for (a, m) in hopcroft_karp(&adj, ei.len()).into_iter().enumerate() {
            if let Some(b) = m {
                pairs.push((ri[a], ei[b]));
            }
        }
    }
    pairs.sort_unstable();
    let mut ref_used = vec![false; refs.len()];
    let mut est_used = vec![false; ests.len()];
    for &(i, j) in &pairs {
        ref_used[i] = true;
        est_used[j] = true;
    }
    MatchResult {
        pairs,
        unmatched_ref: (0..refs.len()).filter(|&i| !ref_used[i]).collect(),
        unmatched_est: (0..ests.len()).filter(|&j| !est_used[j]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Note;
    use proptest::prelude::*;

    fn notes(v: &[(f64, usize)]) -> NoteList {
        NoteList::new(v.iter().map(|&(t, c)| Note::new(t, c, 100)).collect()).unwrap()
    }

    /// Exhaustive search over all one-to-one assignments.
    fn brute_force(adj: &[Vec<usize>], used: &mut Vec<bool>, u: usize) -> usize {
        if u == adj.len() {
            return 0;
        }
        let mut best = brute_force(adj, used, u + 1);
        for &v in &adj[u] {
            if !used[v] {
                used[v] = true;
                best = best.max(1 + brute_force(adj, used, u + 1));
                used[v] = false;
            }
        }
        best
    }

    fn brute_force_notes(r: &NoteList, e: &NoteList, tol: f64) -> usize {
        let span = r.component_span().max(e.component_span());
        (0..span)
            .map(|c| {
                let rs: Vec<f64> = r.component(c).map(|n| n.time).collect();
                let es: Vec<f64> = e.component(c).map(|n| n.time).collect();
                let adj: Vec<Vec<usize>> = rs
                    .iter()
                    .map(|&a| (0..es.len()).filter(|&k| within(a, es[k], tol)).collect())
                    .collect();
                brute_force(&adj, &mut vec![false; es.len()], 0)
            })
            .sum()
    }

    #[test]
    fn close_pair_gets_one_match() {
        let r = notes(&[(0.10, 0), (0.14, 0)]);
        assert_eq!(match_notes(&r, &notes(&[(0.12, 0)]), 0.05).n_matched(), 1);
        let m = match_notes(&r, &notes(&[(0.12, 0), (0.16, 0)]), 0.05);
        assert_eq!(m.n_matched(), 2);
        assert!(m.unmatched_ref.is_empty() && m.unmatched_est.is_empty());
    }

    #[test]
    fn greedy_trap_is_avoided() {
        // Nearest-first would pair 0.05 with 0.04 and strand 0.00.
        let r = notes(&[(0.00, 0), (0.05, 0)]);
        let e = notes(&[(0.04, 0), (0.09, 0)]);
        assert_eq!(match_notes(&r, &e, 0.05).n_matched(), 2);
    }

    #[test]
    fn tolerance_boundary_is_inclusive() {
        let r = notes(&[(0.10, 0)]);
        assert_eq!(match_notes(&r, &notes(&[(0.15, 0)]), 0.05).n_matched(), 1);
        assert_eq!(match_notes(&r, &notes(&[(0.16, 0)]), 0.05).n_matched(), 0);
    }

    #[test]
    fn components_never_cross() {
        let r = notes(&[(0.1, 0)]);
        let m = match_notes(&r, &notes(&[(0.1, 1)]), 0.05);
        assert_eq!(m.n_matched(), 0);
        assert_eq!(m.unmatched_ref, vec![0]);
        assert_eq!(m.unmatched_est, vec![0]);
    }

    fn instance() -> impl Strategy<Value = (Vec<(f64, usize)>, Vec<(f64, usize)>)> {
        let note = (0u32..40, 0usize..2).prop_map(|(t, c)| (t as f64 * 0.01, c));
        (prop::collection::vec(note.clone(), 0..=8), prop::collection::vec(note, 0..=8))
    }

    proptest! {
        #[test]
        fn matches_brute_force((r, e) in instance()) {
            let (r, e) = (notes(&r), notes(&e));
            let m = match_notes(&r, &e, 0.05);
            prop_assert_eq!(m.n_matched(), brute_force_notes(&r, &e, 0.05));
            for &(i, j) in &m.pairs {
                let (a, b) = (r.notes()[i], e.notes()[j]);
                prop_assert_eq!(a.component, b.component);
                prop_assert!(within(a.time, b.time, 0.05));
            }
            prop_assert_eq!(m.n_matched() + m.unmatched_ref.len(), r.len());
            prop_assert_eq!(m.n_matched() + m.unmatched_est.len(), e.len());
        }

        #[test]
        fn symmetric_cardinality((r, e) in instance()) {
            let (r, e) = (notes(&r), notes(&e));
            prop_assert_eq!(match_notes(&r, &e, 0.05).n_matched(), match_notes(&e, &r, 0.05).n_matched());
        }
    }
}
