//! Dominator and post-dominator trees (Cooper, Harvey and Kennedy's
//! iterative algorithm over reverse postorder).

use alloc::vec;
use alloc::vec::Vec;

/// Minimal successor-list view of a control flow graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGraph {
    pub succs: Vec<Vec<usize>>,
    pub entry: usize,
}

impl BlockGraph {
    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    pub fn preds(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.succs.len()];
        for (b, ss) in self.succs.iter().enumerate() {
            for &s in ss {
                if !preds[s].contains(&b) {
                    preds[s].push(b);
                }
            }
        }
        preds
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> =
            self.succs.iter().enumerate().flat_map(|(b, ss)| ss.iter().map(move |&s| (b, s))).collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Reverse postorder of the blocks reachable from `entry`.
    pub fn reverse_postorder(&self) -> Vec<usize> {
        reverse_postorder(&self.succs, self.entry)
    }
}

fn reverse_postorder(succs: &[Vec<usize>], entry: usize) -> Vec<usize> {
    let mut visited = vec![false; succs.len()];
    let mut post = Vec::with_capacity(succs.len());
    let mut stack: Vec<(usize, usize)> = vec![(entry, 0)];
    visited[entry] = true;
    while let Some(top) = stack.last_mut() {
        let b = top.0;
        if let Some(&s) = succs[b].get(top.1) {
            top.1 += 1;
            if !visited[s] {
                visited[s] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(b);
            stack.pop();
        }
    }
    post.reverse();
    post
}

/// Immediate-dominator tree. Unreachable nodes have no idom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomTree {
    idom: Vec<Option<usize>>,
    root: usize,
}

impl DomTree {
    pub fn root(&self) -> usize {
        self.root
    }

    /// Immediate dominator; the root is its own.
    pub fn idom(&self, b: usize) -> Option<usize> {
        self.idom.get(b).copied().flatten()
    }

    pub fn is_reachable(&self, b: usize) -> bool {
        self.idom(b).is_some()
    }

    /// Reflexive dominance.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if !self.is_reachable(a) || !self.is_reachable(b) {
            return false;
        }
        let mut x = b;
        loop {
            if x == a {
                return true;
            }
            if x == self.root {
                return false;
            }
            x = self.idom[x].unwrap();
        }
    }

    pub fn len(&self) -> usize {
        self.idom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idom.is_empty()
    }
}

fn idoms(succs: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let n = succs.len();
    let rpo = reverse_postorder(succs, root);
    let mut order = vec![usize::MAX; n];
    for (i, &b) in rpo.iter().enumerate() {
        order[b] = i;
    }
    let mut preds = vec![Vec::new(); n];
    for (b, ss) in succs.iter().enumerate() {
        for &s in ss {
            preds[s].push(b);
        }
    }
    let mut idom = vec![None; n];
    idom[root] = Some(root);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].unwrap();
            }
            while order[b] > order[a] {
                b = idom[b].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new = None;
            for &p in &preds[b] {
                if idom[p].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom
}

/// Returns the dominator tree and the post-dominator tree. The
/// post-dominator tree has one extra node, index `graph.len()`, standing for
/// a virtual exit reached from every block without successors.
pub fn compute_dominators(graph: &BlockGraph) -> (DomTree, DomTree) {
    let n = graph.len();
    if n == 0 {
        return (DomTree { idom: Vec::new(), root: 0 }, DomTree { idom: vec![Some(0)], root: 0 });
    }
    let dom = DomTree { idom: idoms(&graph.succs, graph.entry), root: graph.entry };

    let exit = n;
    let mut rev = vec![Vec::new(); n + 1];
    for (b, ss) in graph.succs.iter().enumerate() {
        if !dom.is_reachable(b) {
            continue;
        }
        if ss.is_empty() {
            rev[exit].push(b);
        }
        for &s in ss {
            rev[s].push(b);
        }
    }
    let pdom = DomTree { idom: idoms(&rev, exit), root: exit };
    (dom, pdom)
}
