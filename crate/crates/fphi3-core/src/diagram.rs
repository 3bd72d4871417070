//! Feynman (vacuum) diagrams: typed oriented multigraphs produced by Wick
//! pairings of tree leaves, and their kernel reductions.
//!
//! The five edge types stand for the kernel roles K_ρ, K^ε_ρ, G_ρ∗ₓP̃_ρ,
//! G^ε_ρ∗ₓP̃^ε_ρ and the composite Q kernel. The Q-type kernel carries a
//! −2 normalisation so that every one of the 1 + p/2 reduction steps of a
//! diagram contributes exactly −1/2 to the prefactor; the same convention
//! applies to the constant loop left by a fully collapsed diagram.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_rational::Ratio;
use num_traits::Zero;

use crate::index::MultiIndex;
use crate::params::{DegreeScale, Rational};
use crate::tree::{DecoratedTree, IndexedTree};

/// Kernel type of a diagram edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    /// K_ρ, degree −d, bare.
    K,
    /// K^ε_ρ, degree −d, mollified.
    Keps,
    /// G_ρ ∗ₓ P̃_ρ, degree ρ−d, bare, symmetric.
    GK,
    /// G^ε_ρ ∗ₓ P̃^ε_ρ, degree ρ−d, mollified, symmetric.
    GKeps,
    /// −2·(K_ρ ∗ G^ε_ρ ∗ₓ P̃^ε_ρ), degree 2ρ−d, mollified, oriented.
    KGK,
}

impl EdgeType {
    /// Degree as (coefficient of d, coefficient of ρ).
    pub fn degree_parts(self) -> (i64, i64) {
        match self {
            EdgeType::K | EdgeType::Keps => (-1, 0),
            EdgeType::GK | EdgeType::GKeps => (-1, 1),
            EdgeType::KGK => (-1, 2),
        }
    }

    pub fn degree(self, scale: DegreeScale) -> Rational {
        let (c, r) = self.degree_parts();
        scale.eval(
            Ratio::from_integer(c),
            Ratio::from_integer(r),
            Ratio::zero(),
        )
    }

    pub fn mollified(self) -> bool {
        matches!(self, EdgeType::Keps | EdgeType::GKeps | EdgeType::KGK)
    }

    /// Kernels symmetric in their endpoints lose their orientation.
    pub fn symmetric(self) -> bool {
        matches!(self, EdgeType::GK | EdgeType::GKeps)
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::K => "K",
            EdgeType::Keps => "Keps",
            EdgeType::GK => "GK",
            EdgeType::GKeps => "GKeps",
            EdgeType::KGK => "KGK",
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DiagEdge {
    pub from: u32,
    pub to: u32,
    pub ty: EdgeType,
    pub depth: u32,
    pub dec: MultiIndex,
}

impl DiagEdge {
    pub fn new(from: u32, to: u32, ty: EdgeType) -> Self {
        let (from, to) = if ty.symmetric() && from > to {
            (to, from)
        } else {
            (from, to)
        };
        DiagEdge {
            from,
            to,
            ty,
            depth: 0,
            dec: MultiIndex::zero(),
        }
    }

    pub fn touches(&self, v: u32) -> bool {
        self.from == v || self.to == v
    }

    pub fn other(&self, v: u32) -> u32 {
        if self.from == v {
            self.to
        } else {
            self.from
        }
    }

    pub fn is_loop(&self) -> bool {
        self.from == self.to
    }
}

/// A vacuum Feynman diagram. Vertices are 0..n_vertices; the vertex order
/// used by the depth-labelled contraction is the index order. A fully
/// collapsed diagram (the cherry) has no vertices and records its constant
/// loop kernels instead.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeynmanDiagram {
    pub n_vertices: u32,
    pub root: Option<u32>,
    pub edges: Vec<DiagEdge>,
    pub node_dec: BTreeMap<u32, MultiIndex>,
    pub collapsed_loops: Vec<EdgeType>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiagramError {
    OddLeafCount(usize),
    NotBinary,
    Decorated,
    Disconnected,
    ReductionPattern(&'static str),
}

impl fmt::Display for DiagramError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiagramError::OddLeafCount(p) => write!(f, "odd number of leaves ({p})"),
            DiagramError::NotBinary => write!(f, "tree has a node with out-degree > 2"),
            DiagramError::Decorated => write!(f, "decorated trees not supported here"),
            DiagramError::Disconnected => write!(f, "diagram is disconnected"),
            DiagramError::ReductionPattern(what) => write!(f, "reduction pattern failed: {what}"),
        }
    }
}

impl FeynmanDiagram {
    pub fn new(n_vertices: u32, root: Option<u32>, edges: Vec<DiagEdge>) -> Self {
        FeynmanDiagram {
            n_vertices,
            root,
            edges,
            node_dec: BTreeMap::new(),
            collapsed_loops: Vec::new(),
        }
    }

    /// deg Γ = (ρ+d)(|V|−1) + Σ_e [deg(e) − |𝔢(e)|_𝔰] + Σ_v |𝔫(v)|_𝔰,
    /// plus the degrees of collapsed constant loops.
    pub fn degree(&self, scale: DegreeScale) -> Rational {
        let mut per_d = Ratio::zero();
        let mut per_rho = Ratio::zero();
        let mut plain = Ratio::zero();
        if self.n_vertices > 0 {
            let nv = Ratio::from_integer(self.n_vertices as i64 - 1);
            per_d += nv;
            per_rho += nv;
        }
        for e in &self.edges {
            let (c, r) = e.ty.degree_parts();
            per_d += Ratio::from_integer(c);
            per_rho += Ratio::from_integer(r);
            let (t, s) = e.dec.scaled_size_parts();
            per_rho -= Ratio::from_integer(t);
            plain -= Ratio::from_integer(s);
        }
        for dec in self.node_dec.values() {
            let (t, s) = dec.scaled_size_parts();
            per_rho += Ratio::from_integer(t);
            plain += Ratio::from_integer(s);
        }
        for ty in &self.collapsed_loops {
            let (c, r) = ty.degree_parts();
            per_d += Ratio::from_integer(c);
            per_rho += Ratio::from_integer(r);
        }
        scale.eval(per_d, per_rho, plain)
    }

    pub fn incident(&self, v: u32) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.touches(v))
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of incident edge slots (self-loops count twice).
    pub fn slot_degree(&self, v: u32) -> usize {
        self.edges
            .iter()
            .map(|e| usize::from(e.from == v) + usize::from(e.to == v))
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        if self.n_vertices == 0 {
            return true;
        }
        let mut seen = vec![false; self.n_vertices as usize];
        let mut stack = vec![0u32];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for e in &self.edges {
                if e.touches(v) {
                    let w = e.other(v);
                    if !seen[w as usize] {
                        seen[w as usize] = true;
                        stack.push(w);
                    }
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// A perfect matching of leaf positions (preorder among noise leaves).
pub type Pairing = Vec<(u32, u32)>;

/// All perfect matchings of 0..p, deterministic order.
pub fn pairings_of(p: usize) -> Result<Vec<Pairing>, DiagramError> {
    if p % 2 != 0 {
        return Err(DiagramError::OddLeafCount(p));
    }
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn go(free: &mut Vec<u32>, current: &mut Vec<(u32, u32)>, out: &mut Vec<Pairing>) {
        if free.is_empty() {
            out.push(current.clone());
            return;
        }
        let a = free.remove(0);
        for i in 0..free.len() {
            let b = free.remove(i);
            current.push((a, b));
            go(free, current, out);
            current.pop();
            free.insert(i, b);
        }
        free.insert(0, a);
    }
    let mut free: Vec<u32> = (0..p as u32).collect();
    go(&mut free, &mut current, &mut out);
    Ok(out)
}

/// All pairings of a tree's leaves; |pairings| = (p−1)!!.
pub fn pairings(tree: &DecoratedTree) -> Result<Vec<Pairing>, DiagramError> {
    pairings_of(tree.p_leaves())
}

/// Builds the unreduced diagram Γ(τ,P): leaves of a block are merged,
/// edges adjacent to a former leaf are typed K^ε, others K. The tree root
/// becomes the distinguished vertex 0.
pub fn build_diagram(
    tree: &DecoratedTree,
    pairing: &Pairing,
) -> Result<FeynmanDiagram, DiagramError> {
    let it = IndexedTree::new(tree);
    for n in &it.nodes {
        if n.children.len() > 2 {
            return Err(DiagramError::NotBinary);
        }
        if !n.dec.is_zero() || !n.edge_dec.is_zero() {
            return Err(DiagramError::Decorated);
        }
    }
    let leaves = it.leaves();
    if leaves.len() % 2 != 0 {
        return Err(DiagramError::OddLeafCount(leaves.len()));
    }
    // vertex ids: inner nodes in preorder, then one vertex per block
    let mut vertex_of_node: BTreeMap<u32, u32> = BTreeMap::new();
    let mut next = 0u32;
    for (id, n) in it.nodes.iter().enumerate() {
        if !n.noise {
            vertex_of_node.insert(id as u32, next);
            next += 1;
        }
    }
    let mut vertex_of_leafpos: BTreeMap<u32, u32> = BTreeMap::new();
    for &(a, b) in pairing {
        for x in [a, b] {
            if x as usize >= leaves.len() || vertex_of_leafpos.insert(x, next).is_some() {
                return Err(DiagramError::ReductionPattern("pairing is not a matching"));
            }
        }
        next += 1;
    }
    if vertex_of_leafpos.len() != leaves.len() {
        return Err(DiagramError::ReductionPattern("pairing misses leaves"));
    }
    let leaf_pos: BTreeMap<u32, u32> = leaves
        .iter()
        .enumerate()
        .map(|(pos, &node)| (node, pos as u32))
        .collect();
    let mut edges = Vec::new();
    for (id, n) in it.nodes.iter().enumerate() {
        if let Some(parent) = n.parent {
            let pv = vertex_of_node[&parent];
            if n.noise {
                let lv = vertex_of_leafpos[&leaf_pos[&(id as u32)]];
                edges.push(DiagEdge::new(lv, pv, EdgeType::Keps));
            } else {
                edges.push(DiagEdge::new(vertex_of_node[&(id as u32)], pv, EdgeType::K));
            }
        }
    }
    Ok(FeynmanDiagram::new(next, Some(0), edges))
}

/// A reduced diagram together with its exact prefactor. The O(1)
/// remainders of the kernel identities are dropped; `modulo_o1` records
/// that the value is only tracked modulo bounded terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedDiagram {
    pub diagram: FeynmanDiagram,
    pub prefactor: Rational,
    pub modulo_o1: bool,
}

/// Performs only the p/2 leaf-pair merges (prefactor (−1/2)^{p/2}),
/// keeping the root star intact. This is the embedded form in which
/// extracted subdiagrams appear inside a fully reduced diagram.
pub fn leaf_merge(input: &FeynmanDiagram) -> Result<ReducedDiagram, DiagramError> {
    let (mut g, prefactor, removed) = leaf_merge_stage(input, None)?;
    let old_ids: Vec<u32> = (0..g.n_vertices).filter(|v| !removed.contains(v)).collect();
    let relabel: BTreeMap<u32, u32> = old_ids
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new as u32))
        .collect();
    for e in g.edges.iter_mut() {
        let ne = DiagEdge::new(relabel[&e.from], relabel[&e.to], e.ty);
        e.from = ne.from;
        e.to = ne.to;
    }
    g.edges.sort();
    g.root = g.root.map(|r| relabel[&r]);
    g.n_vertices = old_ids.len() as u32;
    Ok(ReducedDiagram {
        diagram: g,
        prefactor,
        modulo_o1: true,
    })
}

fn leaf_merge_stage(
    input: &FeynmanDiagram,
    order: Option<&[u32]>,
) -> Result<(FeynmanDiagram, Rational, BTreeSet<u32>), DiagramError> {
    let mut g = input.clone();
    let root = g.root.ok_or(DiagramError::ReductionPattern("no root"))?;
    let mut prefactor = Ratio::from_integer(1);
    let half = Ratio::new(-1i64, 2);

    // leaf-pair vertices: non-root, exactly two incident slots, all Keps
    let mut blocks: Vec<u32> = (0..g.n_vertices)
        .filter(|&v| {
            v != root
                && g.slot_degree(v) == 2
                && g.edges
                    .iter()
                    .filter(|e| e.touches(v))
                    .all(|e| e.ty == EdgeType::Keps)
        })
        .collect();
    if let Some(order) = order {
        let set: BTreeSet<u32> = blocks.iter().copied().collect();
        let given: BTreeSet<u32> = order.iter().copied().collect();
        if set != given {
            return Err(DiagramError::ReductionPattern("bad merge order"));
        }
        blocks = order.to_vec();
    }
    let mut removed: BTreeSet<u32> = BTreeSet::new();
    for &w in &blocks {
        let inc: Vec<usize> = g.incident(w);
        let ends: Vec<u32> = inc
            .iter()
            .flat_map(|&i| {
                let e = &g.edges[i];
                if e.is_loop() {
                    vec![e.from, e.to]
                } else {
                    vec![e.other(w)]
                }
            })
            .collect();
        debug_assert_eq!(ends.len(), 2);
        let mut keep = Vec::new();
        for (i, e) in g.edges.iter().enumerate() {
            if !inc.contains(&i) {
                keep.push(e.clone());
            }
        }
        keep.push(DiagEdge::new(ends[0], ends[1], EdgeType::GKeps));
        g.edges = keep;
        removed.insert(w);
        prefactor *= half;
    }
    Ok((g, prefactor, removed))
}

/// Applies the p/2 leaf merges and the root merge, each contributing a
/// −1/2, so the prefactor is (−1/2)^{1+p/2} and the result has q−p
/// vertices. `order` permutes the leaf-merge processing order (used by the
/// confluence tests); `None` means ascending.
pub fn reduce_with_order(
    input: &FeynmanDiagram,
    order: Option<&[u32]>,
) -> Result<ReducedDiagram, DiagramError> {
    let (mut g, mut prefactor, mut removed) = leaf_merge_stage(input, order)?;
    let root = g.root.unwrap();
    let half = Ratio::new(-1i64, 2);

    // root merge: the root has exactly two slots left
    let inc = g.incident(root);
    if g.slot_degree(root) != 2 {
        return Err(DiagramError::ReductionPattern("root degree is not 2"));
    }
    let new_root;
    if inc.len() == 1 {
        // a single self-loop at the root: full collapse (the cherry)
        let e = &g.edges[inc[0]];
        if e.ty != EdgeType::GKeps {
            return Err(DiagramError::ReductionPattern("unexpected root loop type"));
        }
        let loop_idx = inc[0];
        g.edges.remove(loop_idx);
        g.collapsed_loops.push(EdgeType::GKeps);
        removed.insert(root);
        new_root = None;
        prefactor *= half;
    } else {
        let (i, j) = (inc[0], inc[1]);
        let (ti, tj) = (g.edges[i].ty, g.edges[j].ty);
        let merged = match (ti, tj) {
            (EdgeType::K, EdgeType::K) => {
                let c1 = g.edges[i].other(root);
                let c2 = g.edges[j].other(root);
                new_root = Some(c1.min(c2));
                DiagEdge::new(c1, c2, EdgeType::GK)
            }
            (EdgeType::K, EdgeType::GKeps) | (EdgeType::GKeps, EdgeType::K) => {
                let (ke, ge) = if ti == EdgeType::K { (i, j) } else { (j, i) };
                let c = g.edges[ke].other(root);
                let u = g.edges[ge].other(root);
                new_root = Some(c);
                DiagEdge::new(c, u, EdgeType::KGK)
            }
            _ => return Err(DiagramError::ReductionPattern("unexpected root edge types")),
        };
        let mut keep = Vec::new();
        for (k, e) in g.edges.iter().enumerate() {
            if k != i && k != j {
                keep.push(e.clone());
            }
        }
        keep.push(merged);
        g.edges = keep;
        removed.insert(root);
        prefactor *= half;
    }

    // compact relabel: new root first, then ascending
    let mut old_ids: Vec<u32> = (0..g.n_vertices).filter(|v| !removed.contains(v)).collect();
    if let Some(r) = new_root {
        old_ids.retain(|&v| v != r);
        old_ids.insert(0, r);
    }
    let relabel: BTreeMap<u32, u32> = old_ids
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new as u32))
        .collect();
    for e in g.edges.iter_mut() {
        let ne = DiagEdge::new(relabel[&e.from], relabel[&e.to], e.ty);
        e.from = ne.from;
        e.to = ne.to;
    }
    g.edges.sort();
    g.n_vertices = old_ids.len() as u32;
    g.root = new_root.map(|_| 0);
    Ok(ReducedDiagram {
        diagram: g,
        prefactor,
        modulo_o1: true,
    })
}

pub fn reduce(input: &FeynmanDiagram) -> Result<ReducedDiagram, DiagramError> {
    reduce_with_order(input, None)
}

/// Canonical form with the distinguished vertex forgotten. Vacuum-diagram
/// values are translation invariant, so term merging identifies diagrams
/// that differ only in the choice of base point.
pub fn canonical_rootless(g: &FeynmanDiagram) -> CanonicalDiagram {
    let mut h = g.clone();
    h.root = None;
    canonical_form(&h)
}

/// Restricts a diagram to a subdiagram, relabelling the induced vertices
/// in ascending order. The result has no distinguished vertex.
pub fn standalone(g: &FeynmanDiagram, sub: &SubDiagram) -> FeynmanDiagram {
    let vs: Vec<u32> = sub.vertex_set(g).into_iter().collect();
    let relabel: BTreeMap<u32, u32> = vs
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new as u32))
        .collect();
    let mut edges = Vec::new();
    for &i in &sub.edges {
        let e = &g.edges[i as usize];
        let mut ne = DiagEdge::new(relabel[&e.from], relabel[&e.to], e.ty);
        ne.depth = e.depth;
        ne.dec = e.dec.clone();
        edges.push(ne);
    }
    let mut out = FeynmanDiagram::new(vs.len() as u32, None, edges);
    for (&v, dec) in &g.node_dec {
        if let Some(&nv) = relabel.get(&v) {
            out.node_dec.insert(nv, dec.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    OneConnected,
    TwoConnectedOrMore,
}

/// One-connected iff removing some single edge disconnects the diagram.
pub fn connectivity(g: &FeynmanDiagram) -> Result<Connectivity, DiagramError> {
    if !g.is_connected() {
        return Err(DiagramError::Disconnected);
    }
    for skip in 0..g.edges.len() {
        if g.edges[skip].is_loop() {
            continue;
        }
        if !connected_without(g, skip) {
            return Ok(Connectivity::OneConnected);
        }
    }
    Ok(Connectivity::TwoConnectedOrMore)
}

fn connected_without(g: &FeynmanDiagram, skip: usize) -> bool {
    if g.n_vertices == 0 {
        return true;
    }
    let mut seen = vec![false; g.n_vertices as usize];
    let mut stack = vec![0u32];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for (i, e) in g.edges.iter().enumerate() {
            if i != skip && e.touches(v) {
                let w = e.other(v);
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    stack.push(w);
                }
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// A subdiagram: a set of edge indices with the induced vertex set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubDiagram {
    pub edges: Vec<u32>,
}

impl SubDiagram {
    pub fn vertex_set(&self, g: &FeynmanDiagram) -> BTreeSet<u32> {
        let mut vs = BTreeSet::new();
        for &i in &self.edges {
            vs.insert(g.edges[i as usize].from);
            vs.insert(g.edges[i as usize].to);
        }
        vs
    }

    pub fn edge_set(&self) -> BTreeSet<u32> {
        self.edges.iter().copied().collect()
    }

    pub fn degree(&self, g: &FeynmanDiagram, scale: DegreeScale) -> Rational {
        let vs = self.vertex_set(g);
        let nv = Ratio::from_integer(vs.len() as i64 - 1);
        let mut per_d = nv;
        let mut per_rho = nv;
        let mut plain = Ratio::zero();
        for &i in &self.edges {
            let e = &g.edges[i as usize];
            let (c, r) = e.ty.degree_parts();
            per_d += Ratio::from_integer(c);
            per_rho += Ratio::from_integer(r);
            let (t, s) = e.dec.scaled_size_parts();
            per_rho -= Ratio::from_integer(t);
            plain -= Ratio::from_integer(s);
        }
        for (&v, dec) in &g.node_dec {
            if vs.contains(&v) {
                let (t, s) = dec.scaled_size_parts();
                per_rho += Ratio::from_integer(t);
                plain += Ratio::from_integer(s);
            }
        }
        scale.eval(per_d, per_rho, plain)
    }

    pub fn is_connected(&self, g: &FeynmanDiagram) -> bool {
        let vs: Vec<u32> = self.vertex_set(g).into_iter().collect();
        if vs.is_empty() {
            return false;
        }
        self.reachable_from(g, vs[0], None).len() == vs.len()
    }

    fn reachable_from(&self, g: &FeynmanDiagram, start: u32, skip: Option<u32>) -> BTreeSet<u32> {
        let mut seen = BTreeSet::new();
        seen.insert(start);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &i in &self.edges {
                if Some(i) == skip {
                    continue;
                }
                let e = &g.edges[i as usize];
                if e.touches(v) {
                    let w = e.other(v);
                    if seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
        }
        seen
    }

    pub fn is_bridgeless(&self, g: &FeynmanDiagram) -> bool {
        let vs = self.vertex_set(g);
        let start = match vs.iter().next() {
            Some(&v) => v,
            None => return false,
        };
        for &skip in &self.edges {
            if g.edges[skip as usize].is_loop() {
                continue;
            }
            if self.reachable_from(g, start, Some(skip)).len() != vs.len() {
                return false;
            }
        }
        true
    }
}

/// All connected, bridgeless, proper edge-subsets of strictly negative
/// degree (marginal ones too when `include_marginal` is set). Sorted by
/// edge set.
pub fn divergent_subdiagrams(
    g: &FeynmanDiagram,
    scale: DegreeScale,
    include_marginal: bool,
) -> Vec<SubDiagram> {
    let m = g.edges.len();
    assert!(m <= 24, "diagram too large for subset enumeration");
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << m).wrapping_sub(1) {
        let edges: Vec<u32> = (0..m as u32).filter(|&i| mask & (1 << i) != 0).collect();
        let sub = SubDiagram { edges };
        let deg = sub.degree(g, scale);
        let admissible = deg < Ratio::zero() || (include_marginal && deg.is_zero());
        if !admissible {
            continue;
        }
        if !sub.is_connected(g) || !sub.is_bridgeless(g) {
            continue;
        }
        out.push(sub);
    }
    out.sort();
    out
}

/// True iff the set of divergent subdiagrams is a forest: any two are
/// nested (edge-set inclusion) or vertex-disjoint.
pub fn check_forest_property(g: &FeynmanDiagram, scale: DegreeScale) -> bool {
    let subs = divergent_subdiagrams(g, scale, false);
    for (i, a) in subs.iter().enumerate() {
        for b in subs.iter().skip(i + 1) {
            let ea = a.edge_set();
            let eb = b.edge_set();
            let nested = ea.is_subset(&eb) || eb.is_subset(&ea);
            let disjoint = a.vertex_set(g).is_disjoint(&b.vertex_set(g));
            if !nested && !disjoint {
                return false;
            }
        }
    }
    true
}

/// Canonical labelled form of a diagram, used for merging terms and for
/// golden tests. Obtained by colour refinement followed by exhaustive
/// tie-breaking inside colour classes (diagrams here are tiny).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalDiagram {
    pub n_vertices: u32,
    pub has_root: bool,
    pub edges: Vec<DiagEdge>,
    pub node_dec: Vec<(u32, MultiIndex)>,
    pub collapsed_loops: Vec<EdgeType>,
}

pub fn canonical_form(g: &FeynmanDiagram) -> CanonicalDiagram {
    let n = g.n_vertices as usize;
    if n == 0 {
        let mut loops = g.collapsed_loops.clone();
        loops.sort();
        return CanonicalDiagram {
            n_vertices: 0,
            has_root: false,
            edges: Vec::new(),
            node_dec: Vec::new(),
            collapsed_loops: loops,
        };
    }
    // colour refinement
    let mut colors: Vec<u64> = (0..n)
        .map(|v| {
            let mut c = if g.root == Some(v as u32) { 0u64 } else { 1 };
            if let Some(dec) = g.node_dec.get(&(v as u32)) {
                c = c.wrapping_mul(31).wrapping_add(hash_dec(dec));
            }
            c
        })
        .collect();
    for _ in 0..n {
        let sigs: Vec<(u64, Vec<(u8, u8, u32, u64, u64)>)> = (0..n as u32)
            .map(|v| {
                let mut around = Vec::new();
                for e in &g.edges {
                    if e.from == v {
                        let dir = if e.ty.symmetric() { 0 } else { 1 };
                        around.push((
                            type_code(e.ty),
                            dir,
                            e.depth,
                            hash_dec(&e.dec),
                            colors[e.to as usize],
                        ));
                    }
                    if e.to == v {
                        let dir = if e.ty.symmetric() { 0 } else { 2 };
                        around.push((
                            type_code(e.ty),
                            dir,
                            e.depth,
                            hash_dec(&e.dec),
                            colors[e.from as usize],
                        ));
                    }
                }
                around.sort();
                (colors[v as usize], around)
            })
            .collect();
        let mut classes: Vec<&(u64, Vec<(u8, u8, u32, u64, u64)>)> = sigs.iter().collect();
        classes.sort();
        classes.dedup();
        let next: Vec<u64> = sigs
            .iter()
            .map(|s| classes.binary_search(&s).unwrap() as u64)
            .collect();
        if next == colors {
            break;
        }
        colors = next;
    }
    // exhaustive tie-breaking inside colour classes
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by_key(|&v| (colors[v as usize], v));
    let mut best: Option<CanonicalDiagram> = None;
    let mut perm = vec![u32::MAX; n];
    let mut used = vec![false; n];
    fn try_assign(
        g: &FeynmanDiagram,
        order: &[u32],
        colors: &[u64],
        pos: usize,
        used: &mut Vec<bool>,
        perm: &mut Vec<u32>,
        best: &mut Option<CanonicalDiagram>,
    ) {
        let n = order.len();
        if pos == n {
            let cand = relabelled(g, perm);
            if best.as_ref().is_none_or(|b| cand < *b) {
                *best = Some(cand);
            }
            return;
        }
        let slot = order[pos];
        for v in 0..n as u32 {
            if used[v as usize] || colors[v as usize] != colors[slot as usize] {
                continue;
            }
            used[v as usize] = true;
            perm[v as usize] = pos as u32;
            try_assign(g, order, colors, pos + 1, used, perm, best);
            used[v as usize] = false;
            perm[v as usize] = u32::MAX;
        }
    }
    try_assign(g, &order, &colors, 0, &mut used, &mut perm, &mut best);
    best.unwrap()
}

fn type_code(t: EdgeType) -> u8 {
    match t {
        EdgeType::K => 0,
        EdgeType::Keps => 1,
        EdgeType::GK => 2,
        EdgeType::GKeps => 3,
        EdgeType::KGK => 4,
    }
}

fn hash_dec(dec: &MultiIndex) -> u64 {
    let mut h = 1469598103934665603u64;
    for &k in &dec.0 {
        h = h.wrapping_mul(1099511628211).wrapping_add(k as u64 + 1);
    }
    h
}

fn relabelled(g: &FeynmanDiagram, perm: &[u32]) -> CanonicalDiagram {
    let mut edges: Vec<DiagEdge> = g
        .edges
        .iter()
        .map(|e| {
            let mut ne = DiagEdge::new(perm[e.from as usize], perm[e.to as usize], e.ty);
            ne.depth = e.depth;
            ne.dec = e.dec.clone();
            ne
        })
        .collect();
    edges.sort();
    let mut node_dec: Vec<(u32, MultiIndex)> = g
        .node_dec
        .iter()
        .map(|(&v, dec)| (perm[v as usize], dec.clone()))
        .collect();
    node_dec.sort();
    let mut loops = g.collapsed_loops.clone();
    loops.sort();
    CanonicalDiagram {
        n_vertices: g.n_vertices,
        has_root: g.root.is_some(),
        edges,
        node_dec,
        collapsed_loops: loops,
    }
}
