//! Control structure recovery: natural loops from back edges, conditionals
//! from immediate post-dominators, and irreducible cycles as unstructured
//! regions.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::dom::{BlockGraph, DomTree};
use crate::ir::{NodeId, OpKind};
use crate::isa::Reg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopShape {
    /// Exit test in the header.
    PreTested,
    /// Exit test in a latch.
    PostTested,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    Seq,
    IfThen,
    IfThenElse,
    Loop(LoopShape),
    Unstructured,
}

/// Exit comparison of an induction variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bound {
    pub compare: OpKind,
    pub node: NodeId,
    /// Constant bound, when known.
    pub value: Option<u32>,
    /// Whether the comparison reads the updated value rather than the phi.
    pub on_update: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Induction {
    pub reg: Option<Reg>,
    pub phi: NodeId,
    pub update: NodeId,
    pub init: Option<u32>,
    pub step: i32,
    pub bound: Option<Bound>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub kind: RegionKind,
    /// Entry block: loop header, branching block, or graph entry.
    pub header: usize,
    pub blocks: BTreeSet<usize>,
    pub back_edges: Vec<(usize, usize)>,
    /// Control edges owned by this region: both ends inside it and not both
    /// inside a single child.
    pub edges: Vec<(usize, usize)>,
    pub children: Vec<Region>,
    pub inductions: Vec<Induction>,
}

impl Induction {
    /// Iterations of a loop that exits when the updated value reaches a
    /// constant bound, assuming the bound is hit exactly.
    pub fn trip_count(&self) -> Option<u64> {
        let b = self.bound.as_ref()?;
        if !b.on_update || !matches!(b.compare, OpKind::Ne | OpKind::Eq) {
            return None;
        }
        let dist = b.value?.wrapping_sub(self.init?) as i32 as i64;
        let step = self.step as i64;
        (dist % step == 0 && dist / step > 0).then(|| (dist / step) as u64)
    }
}

impl Region {
    fn new(kind: RegionKind, header: usize, blocks: BTreeSet<usize>) -> Self {
        Region {
            kind,
            header,
            blocks,
            back_edges: Vec::new(),
            edges: Vec::new(),
            children: Vec::new(),
            inductions: Vec::new(),
        }
    }

    /// Pre-order walk.
    pub fn walk(&self) -> Vec<&Region> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Region)) {
        f(self);
        for c in &mut self.children {
            c.walk_mut(f);
        }
    }

    pub fn is_loop(&self) -> bool {
        matches!(self.kind, RegionKind::Loop(_))
    }

    pub fn contains_unstructured(&self) -> bool {
        self.walk().iter().any(|r| r.kind == RegionKind::Unstructured)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureTree {
    pub root: Region,
}

impl Default for StructureTree {
    fn default() -> Self {
        StructureTree { root: Region::new(RegionKind::Seq, 0, BTreeSet::new()) }
    }
}

impl StructureTree {
    pub fn regions(&self) -> Vec<&Region> {
        self.root.walk()
    }

    pub fn loops(&self) -> Vec<&Region> {
        self.regions().into_iter().filter(|r| r.is_loop()).collect()
    }

    /// Union of every region's owned edges.
    pub fn flatten_edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self.regions().iter().flat_map(|r| r.edges.iter().copied()).collect();
        e.sort_unstable();
        e
    }

    /// Innermost loop containing `b`.
    pub fn innermost_loop(&self, b: usize) -> Option<&Region> {
        self.loops().into_iter().filter(|l| l.blocks.contains(&b)).min_by_key(|l| l.blocks.len())
    }
}

/// Blocks of the natural loop with header `h` and the given latches.
pub fn natural_loop(preds: &[Vec<usize>], h: usize, latches: &[usize]) -> BTreeSet<usize> {
    let mut body = BTreeSet::new();
    body.insert(h);
    let mut stack: Vec<usize> = latches.to_vec();
    while let Some(x) = stack.pop() {
        if body.insert(x) {
            stack.extend(preds[x].iter().copied());
        }
    }
    body
}

/// Strongly connected components (Tarjan), restricted to `nodes`.
fn sccs(succs: &[Vec<usize>], nodes: &BTreeSet<usize>) -> Vec<Vec<usize>> {
    struct St<'a> {
        succs: &'a [Vec<usize>],
        nodes: &'a BTreeSet<usize>,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }
    fn visit(st: &mut St<'_>, v: usize) {
        st.index[v] = Some(st.next);
        st.low[v] = st.next;
        st.next += 1;
        st.stack.push(v);
        st.on[v] = true;
        for &w in &st.succs[v] {
            if !st.nodes.contains(&w) {
                continue;
            }
            match st.index[w] {
                None => {
                    visit(st, w);
                    st.low[v] = st.low[v].min(st.low[w]);
                }
                Some(iw) if st.on[w] => st.low[v] = st.low[v].min(iw),
                _ => {}
            }
        }
        if Some(st.low[v]) == st.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = st.stack.pop().unwrap();
                st.on[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            comp.sort_unstable();
            st.out.push(comp);
        }
    }
    let n = succs.len();
    let mut st = St {
        succs,
        nodes,
        index: vec![None; n],
        low: vec![0; n],
        on: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for &v in nodes {
        if st.index[v].is_none() {
            visit(&mut st, v);
        }
    }
    st.out
}

fn insert(parent: &mut Region, mut cand: Region) {
    if let Some(child) =
        parent.children.iter_mut().find(|c| cand.blocks.is_subset(&c.blocks) && c.blocks != cand.blocks)
    {
        return insert(child, cand);
    }
    if parent.children.iter().any(|c| c.blocks == cand.blocks) {
        return;
    }
    let overlaps =
        parent.children.iter().any(|c| !c.blocks.is_disjoint(&cand.blocks) && !c.blocks.is_subset(&cand.blocks));
    if overlaps {
        // Not properly nested with an existing sibling; leave it flat.
        return;
    }
    let (inside, outside): (Vec<Region>, Vec<Region>) =
        core::mem::take(&mut parent.children).into_iter().partition(|c| c.blocks.is_subset(&cand.blocks));
    cand.children = inside;
    parent.children = outside;
    parent.children.push(cand);
    parent.children.sort_by_key(|c| (*c.blocks.iter().next().unwrap(), c.blocks.len()));
}

fn assign_edges(region: &mut Region, u: usize, v: usize) {
    for c in &mut region.children {
        if c.blocks.contains(&u) && c.blocks.contains(&v) {
            return assign_edges(c, u, v);
        }
    }
    region.edges.push((u, v));
}

/// Recovers the region tree of `graph` from its dominator and
/// post-dominator trees (as returned by `compute_dominators`).
pub fn recover_structures(graph: &BlockGraph, dom: &DomTree, pdom: &DomTree) -> StructureTree {
    let n = graph.len();
    let reach: BTreeSet<usize> = (0..n).filter(|&b| dom.is_reachable(b)).collect();
    let preds = graph.preds();
    let edges: Vec<(usize, usize)> =
        graph.edges().into_iter().filter(|(u, v)| reach.contains(u) && reach.contains(v)).collect();

    let mut latches: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(u, h) in &edges {
        if dom.dominates(h, u) {
            latches.entry(h).or_default().push(u);
        }
    }
    let mut candidates: Vec<Region> = Vec::new();
    let mut loops: Vec<BTreeSet<usize>> = Vec::new();
    for (&h, ls) in &latches {
        let body = natural_loop(&preds, h, ls);
        let post_tested = ls.iter().any(|&l| graph.succs[l].iter().any(|s| !body.contains(s)));
        let shape = if post_tested { LoopShape::PostTested } else { LoopShape::PreTested };
        let mut r = Region::new(RegionKind::Loop(shape), h, body.clone());
        r.back_edges = ls.iter().map(|&u| (u, h)).collect();
        loops.push(body);
        candidates.push(r);
    }

    // Cycles that survive removing back edges are irreducible.
    let mut forward = vec![Vec::new(); n];
    for &(u, v) in &edges {
        if !dom.dominates(v, u) {
            forward[u].push(v);
        }
    }
    for comp in sccs(&forward, &reach) {
        if comp.len() > 1 {
            let blocks: BTreeSet<usize> = comp.iter().copied().collect();
            let header = *comp.iter().min().unwrap();
            candidates.push(Region::new(RegionKind::Unstructured, header, blocks));
        }
    }

    for &b in &reach {
        let ss: Vec<usize> = {
            let mut s = graph.succs[b].clone();
            s.dedup();
            s
        };
        if ss.len() != 2 {
            continue;
        }
        let enclosing = loops.iter().filter(|l| l.contains(&b)).min_by_key(|l| l.len());
        if let Some(l) = enclosing {
            let header = latches.keys().copied().find(|h| l.contains(h) && natural_header(l, *h, &latches, &preds));
            if ss.iter().any(|s| !l.contains(s) || Some(*s) == header) {
                continue;
            }
        }
        let join = pdom.idom(b).filter(|&j| j < n);
        let arm = |s: usize| -> BTreeSet<usize> {
            let mut seen = BTreeSet::new();
            let mut stack = vec![s];
            while let Some(x) = stack.pop() {
                if Some(x) == join || x == b {
                    continue;
                }
                if let Some(l) = enclosing {
                    if !l.contains(&x) || latches.contains_key(&x) && l.contains(&x) && x != s && dom.dominates(x, b) {
                        continue;
                    }
                }
                if seen.insert(x) {
                    stack.extend(graph.succs[x].iter().copied());
                }
            }
            seen
        };
        let (a1, a2) = (arm(ss[0]), arm(ss[1]));
        let mut blocks: BTreeSet<usize> = a1.union(&a2).copied().collect();
        blocks.insert(b);
        let single_entry = blocks.iter().all(|&x| dom.dominates(b, x));
        let kind = if join.is_none() || !single_entry {
            RegionKind::Unstructured
        } else if a1.is_empty() || a2.is_empty() {
            RegionKind::IfThen
        } else if a1.is_disjoint(&a2) {
            RegionKind::IfThenElse
        } else {
            RegionKind::Unstructured
        };
        candidates.push(Region::new(kind, b, blocks));
    }

    let rank = |k: RegionKind| match k {
        RegionKind::Loop(_) => 0,
        RegionKind::Unstructured => 1,
        _ => 2,
    };
    candidates.sort_by(|a, b| {
        b.blocks.len().cmp(&a.blocks.len()).then(rank(a.kind).cmp(&rank(b.kind))).then(a.header.cmp(&b.header))
    });
    let mut root = Region::new(RegionKind::Seq, graph.entry, reach.clone());
    for c in candidates {
        insert(&mut root, c);
    }
    for &(u, v) in &edges {
        assign_edges(&mut root, u, v);
    }
    StructureTree { root }
}

fn natural_header(
    body: &BTreeSet<usize>,
    h: usize,
    latches: &BTreeMap<usize, Vec<usize>>,
    preds: &[Vec<usize>],
) -> bool {
    latches.get(&h).is_some_and(|ls| natural_loop(preds, h, ls) == *body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompile::dom::compute_dominators;

    fn recover(succs: Vec<Vec<usize>>) -> StructureTree {
        let g = BlockGraph { succs, entry: 0 };
        let (d, p) = compute_dominators(&g);
        recover_structures(&g, &d, &p)
    }

    #[test]
    fn diamond_is_if_then_else() {
        let t = recover(vec![vec![1, 2], vec![3], vec![3], vec![]]);
        let kinds: Vec<RegionKind> = t.regions().iter().map(|r| r.kind).collect();
        assert_eq!(kinds, [RegionKind::Seq, RegionKind::IfThenElse]);
        assert_eq!(t.root.children[0].blocks, [0, 1, 2].into_iter().collect());
    }

    #[test]
    fn triangle_is_if_then() {
        let t = recover(vec![vec![1, 2], vec![2], vec![]]);
        assert_eq!(t.root.children[0].kind, RegionKind::IfThen);
    }

    #[test]
    fn top_tested_loop() {
        // 0 -> 1 (header) -> {2 body, 3 exit}; 2 -> 1
        let t = recover(vec![vec![1], vec![2, 3], vec![1], vec![]]);
        let l = t.loops();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].kind, RegionKind::Loop(LoopShape::PreTested));
        assert_eq!(l[0].blocks, [1, 2].into_iter().collect());
        assert_eq!(l[0].back_edges, [(2, 1)]);
    }

    #[test]
    fn self_loop_is_post_tested() {
        let t = recover(vec![vec![1], vec![1, 2], vec![]]);
        assert_eq!(t.loops()[0].kind, RegionKind::Loop(LoopShape::PostTested));
    }

    #[test]
    fn irreducible_loop_is_unstructured() {
        // entry branches into both 1 and 2, which form a cycle
        let t = recover(vec![vec![1, 2], vec![2], vec![1, 3], vec![]]);
        assert!(t.loops().is_empty());
        assert!(t
            .regions()
            .iter()
            .any(|r| r.kind == RegionKind::Unstructured && r.blocks.contains(&1) && r.blocks.contains(&2)));
    }

    #[test]
    fn nested_loops_nest() {
        // 0 -> 1 outer header -> 2 inner header (self loop) -> 3 latch -> 1 | 4
        let t = recover(vec![vec![1], vec![2], vec![2, 3], vec![1, 4], vec![]]);
        let loops = t.loops();
        assert_eq!(loops.len(), 2);
        let outer = loops.iter().find(|l| l.header == 1).unwrap();
        assert!(outer.children.iter().any(|c| c.header == 2 && c.is_loop()));
    }

    #[test]
    fn flattened_edges_match_graph() {
        let g = BlockGraph { succs: vec![vec![1], vec![2, 5], vec![3, 4], vec![1], vec![1], vec![]], entry: 0 };
        let (d, p) = compute_dominators(&g);
        let t = recover_structures(&g, &d, &p);
        assert_eq!(t.flatten_edges(), g.edges());
    }
}
