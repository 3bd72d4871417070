//! Hepp-sector machinery: the depth-labelled contraction of a forest, the
//! shape-based safe/unsafe classification, sector partitions into forest
//! intervals, and the exponent recursion that bounds a diagram's value by
//! ε^{deg Γ} times a power of log(ε^{-1}).
//!
//! A Hepp tree is a binary tree whose leaves are the diagram vertices;
//! node labels, when present, are non-decreasing from the root. Safety of
//! a forest member depends only on the tree shape: the member is safe iff
//! some adjacent parent edge has its common ancestor inside the subtree
//! spanned by the member's contracted vertex set.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use num_rational::Ratio;
use num_traits::Zero;

use crate::diagram::{divergent_subdiagrams, FeynmanDiagram, SubDiagram};
use crate::forest::{Forest, ForestInterval};
use crate::params::{DegreeScale, ModelParams, Rational};

/// Binary tree over diagram vertices, optional non-decreasing labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeppTree {
    Leaf(u32),
    Node {
        label: Option<u32>,
        left: Box<HeppTree>,
        right: Box<HeppTree>,
    },
}

impl HeppTree {
    pub fn node(left: HeppTree, right: HeppTree) -> HeppTree {
        HeppTree::Node {
            label: None,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn labelled(label: u32, left: HeppTree, right: HeppTree) -> HeppTree {
        HeppTree::Node {
            label: Some(label),
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn leaves(&self) -> Vec<u32> {
        match self {
            HeppTree::Leaf(v) => vec![*v],
            HeppTree::Node { left, right, .. } => {
                let mut l = left.leaves();
                l.extend(right.leaves());
                l
            }
        }
    }

    /// Labels must be non-decreasing from the root towards the leaves.
    pub fn labels_monotone(&self) -> bool {
        fn go(t: &HeppTree, floor: Option<u32>) -> bool {
            match t {
                HeppTree::Leaf(_) => true,
                HeppTree::Node { label, left, right } => {
                    if let (Some(f), Some(l)) = (floor, *label) {
                        if l < f {
                            return false;
                        }
                    }
                    let next = label.or(floor);
                    go(left, next) && go(right, next)
                }
            }
        }
        go(self, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeppError {
    LeafMismatch,
    NotAForest,
    MemberNotInduced,
    DepthOrderViolation,
    SelfLoopEdge,
    MissingClusterNode,
    BoundNotDerivable,
}

impl fmt::Display for HeppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HeppError::LeafMismatch => "hepp tree leaves do not match diagram vertices",
            HeppError::NotAForest => "members are not pairwise nested or vertex-disjoint",
            HeppError::MemberNotInduced => "forest member does not contain all internal edges",
            HeppError::DepthOrderViolation => "depth ordering rule violated by contraction",
            HeppError::SelfLoopEdge => "diagram has a self-loop; Hepp scales are undefined",
            HeppError::MissingClusterNode => {
                "no hepp-tree node spans exactly the member's vertices"
            }
            HeppError::BoundNotDerivable => {
                "geometric-sum condition failed; bound not derivable by this scheme"
            }
        };
        f.write_str(s)
    }
}

/// Indexed view of a shape: inner nodes in preorder with leaf masks.
pub(crate) struct ShapeIndex {
    pub children: Vec<[ShapeChild; 2]>,
    pub leafmask: Vec<u64>,
    pub depth: Vec<usize>,
    pub labels: Vec<Option<u32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ShapeChild {
    Leaf(u32),
    Inner(usize),
}

impl ShapeIndex {
    pub fn build(tree: &HeppTree, n_vertices: u32) -> Result<ShapeIndex, HeppError> {
        let mut leaves = tree.leaves();
        leaves.sort();
        let want: Vec<u32> = (0..n_vertices).collect();
        if leaves != want || n_vertices < 2 {
            return Err(HeppError::LeafMismatch);
        }
        let mut idx = ShapeIndex {
            children: Vec::new(),
            leafmask: Vec::new(),
            depth: Vec::new(),
            labels: Vec::new(),
        };
        fn go(t: &HeppTree, depth: usize, idx: &mut ShapeIndex) -> (ShapeChild, u64) {
            match t {
                HeppTree::Leaf(v) => (ShapeChild::Leaf(*v), 1u64 << *v),
                HeppTree::Node { label, left, right } => {
                    let id = idx.children.len();
                    idx.children.push([ShapeChild::Leaf(0), ShapeChild::Leaf(0)]);
                    idx.leafmask.push(0);
                    idx.depth.push(depth);
                    idx.labels.push(*label);
                    let (lc, lm) = go(left, depth + 1, idx);
                    let (rc, rm) = go(right, depth + 1, idx);
                    idx.children[id] = [lc, rc];
                    idx.leafmask[id] = lm | rm;
                    (ShapeChild::Inner(id), lm | rm)
                }
            }
        }
        go(tree, 0, &mut idx);
        Ok(idx)
    }

    /// Deepest inner node whose leaf set contains `mask`.
    pub fn meet(&self, mask: u64) -> usize {
        let mut cur = 0usize;
        'outer: loop {
            for ch in self.children[cur] {
                if let ShapeChild::Inner(c) = ch {
                    if self.leafmask[c] & mask == mask {
                        cur = c;
                        continue 'outer;
                    }
                }
            }
            return cur;
        }
    }

    /// x lies in the subtree of y (x is y or a descendant).
    pub fn is_descendant(&self, x: usize, y: usize) -> bool {
        self.leafmask[x] & self.leafmask[y] == self.leafmask[x]
    }

    pub fn n_inner(&self) -> usize {
        self.children.len()
    }
}

/// All binary shapes over the given labelled leaves ((2n−3)!! of them).
pub fn enumerate_shapes(leaves: &[u32]) -> Vec<HeppTree> {
    assert!(!leaves.is_empty());
    if leaves.len() == 1 {
        return vec![HeppTree::Leaf(leaves[0])];
    }
    let mut out = Vec::new();
    let first = leaves[0];
    let rest = &leaves[1..];
    // the block containing the first leaf, against its complement
    for mask in 0u32..(1 << rest.len()) {
        let left: Vec<u32> = core::iter::once(first)
            .chain(
                rest.iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &v)| v),
            )
            .collect();
        let right: Vec<u32> = rest
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) == 0)
            .map(|(_, &v)| v)
            .collect();
        if right.is_empty() {
            continue;
        }
        for l in enumerate_shapes(&left) {
            for r in enumerate_shapes(&right) {
                out.push(HeppTree::node(l.clone(), r.clone()));
            }
        }
    }
    out
}

/// State of the depth-labelled contraction: per original edge, its current
/// endpoints and depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractedDiagram {
    pub endpoints: Vec<(u32, u32)>,
    pub depths: Vec<u32>,
}

impl ContractedDiagram {
    fn identity(g: &FeynmanDiagram) -> ContractedDiagram {
        ContractedDiagram {
            endpoints: g.edges.iter().map(|e| (e.from, e.to)).collect(),
            depths: g.edges.iter().map(|e| e.depth).collect(),
        }
    }

    fn current_vertices(&self, edges: &[u32]) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for &i in edges {
            let (a, b) = self.endpoints[i as usize];
            out.insert(a);
            out.insert(b);
        }
        out
    }
}

fn is_induced(g: &FeynmanDiagram, sub: &SubDiagram) -> bool {
    let vs = sub.vertex_set(g);
    let es = sub.edge_set();
    g.edges
        .iter()
        .enumerate()
        .all(|(i, e)| es.contains(&(i as u32)) || !(vs.contains(&e.from) && vs.contains(&e.to)))
}

/// Applies the reconnect-to-first-vertex contraction for every member, in
/// the given order, incrementing the depth of member edges and enforcing
/// the zero rule (adjacent depths must stay below member depths).
pub fn contract_in_order(
    g: &FeynmanDiagram,
    members: &[&SubDiagram],
) -> Result<ContractedDiagram, HeppError> {
    let member_list: Vec<SubDiagram> = members.iter().map(|m| (*m).clone()).collect();
    if !crate::forest::is_forest(g, &member_list) {
        return Err(HeppError::NotAForest);
    }
    for m in members {
        if !is_induced(g, m) {
            return Err(HeppError::MemberNotInduced);
        }
    }
    let mut state = ContractedDiagram::identity(g);
    for gamma in members {
        let vs = state.current_vertices(&gamma.edges);
        let first = *vs.iter().next().unwrap();
        let in_gamma = gamma.edge_set();
        // increment depths first, then verify the ordering rule
        for &i in &gamma.edges {
            state.depths[i as usize] += 1;
        }
        let gamma_min = gamma
            .edges
            .iter()
            .map(|&i| state.depths[i as usize])
            .min()
            .unwrap();
        for (i, ends) in state.endpoints.iter_mut().enumerate() {
            if in_gamma.contains(&(i as u32)) {
                continue;
            }
            let mut touched = false;
            if vs.contains(&ends.0) {
                ends.0 = first;
                touched = true;
            }
            if vs.contains(&ends.1) {
                ends.1 = first;
                touched = true;
            }
            if touched && state.depths[i] >= gamma_min {
                return Err(HeppError::DepthOrderViolation);
            }
        }
    }
    Ok(state)
}

/// Contraction over all members, roots first (any order commutes; the
/// default is descending edge count).
pub fn contract_for_forest(
    g: &FeynmanDiagram,
    forest: &Forest,
) -> Result<ContractedDiagram, HeppError> {
    let mut order: Vec<&SubDiagram> = forest.members.iter().collect();
    order.sort_by_key(|m| core::cmp::Reverse(m.edges.len()));
    contract_in_order(g, &order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Safety {
    Safe,
    Unsafe,
}

struct SafetyScratch<'a> {
    g: &'a FeynmanDiagram,
    shape: &'a ShapeIndex,
}

impl SafetyScratch<'_> {
    /// Edges of `gamma` minus its children's edges.
    fn own_edges(gamma: &SubDiagram, children: &[&SubDiagram]) -> Vec<u32> {
        let child_edges: BTreeSet<u32> = children
            .iter()
            .flat_map(|c| c.edges.iter().copied())
            .collect();
        gamma
            .edges
            .iter()
            .copied()
            .filter(|e| !child_edges.contains(e))
            .collect()
    }

    fn edge_meet(&self, state: &ContractedDiagram, edge: u32) -> Result<usize, HeppError> {
        let (a, b) = state.endpoints[edge as usize];
        if a == b {
            return Err(HeppError::SelfLoopEdge);
        }
        Ok(self.shape.meet((1u64 << a) | (1u64 << b)))
    }

    /// Shape-based safety of `gamma` inside the full forest `forest`.
    fn member_safe(
        &self,
        state: &ContractedDiagram,
        forest: &Forest,
        gamma: &SubDiagram,
    ) -> Result<Safety, HeppError> {
        let children = forest.children_of(gamma);
        let own = Self::own_edges(gamma, &children);
        let cluster = state.current_vertices(&own);
        let mask = cluster.iter().fold(0u64, |m, &v| m | (1u64 << v));
        let meet = self.shape.meet(mask);

        // edges of the parent member (or of the whole diagram)
        let parent_own: Vec<u32> = match forest.parent_of(gamma) {
            Some(parent) => {
                let siblings = forest.children_of(parent);
                Self::own_edges(parent, &siblings)
            }
            None => {
                let roots = forest.roots();
                let root_edges: BTreeSet<u32> =
                    roots.iter().flat_map(|r| r.edges.iter().copied()).collect();
                (0..self.g.edges.len() as u32)
                    .filter(|e| !root_edges.contains(e))
                    .collect()
            }
        };
        for e in parent_own {
            let (a, b) = state.endpoints[e as usize];
            if cluster.contains(&a) || cluster.contains(&b) {
                let up = self.edge_meet(state, e)?;
                if self.shape.is_descendant(up, meet) {
                    return Ok(Safety::Safe);
                }
            }
        }
        Ok(Safety::Unsafe)
    }
}

/// Safety of every member within the given full forest.
pub fn classify_safety(
    g: &FeynmanDiagram,
    forest: &Forest,
    shape: &HeppTree,
) -> Result<Vec<(SubDiagram, Safety)>, HeppError> {
    let idx = ShapeIndex::build(shape, g.n_vertices)?;
    let state = contract_for_forest(g, forest)?;
    let scratch = SafetyScratch { g, shape: &idx };
    forest
        .members
        .iter()
        .map(|m| Ok((m.clone(), scratch.member_safe(&state, forest, m)?)))
        .collect()
}

/// γ (not in the forest) is safe/unsafe for it: adjoin γ and classify it
/// inside the enlarged forest.
pub fn is_safe_for(
    g: &FeynmanDiagram,
    safe_forest: &Forest,
    shape: &HeppTree,
    gamma: &SubDiagram,
) -> Result<Safety, HeppError> {
    let mut members = safe_forest.members.clone();
    members.push(gamma.clone());
    members.sort();
    members.dedup();
    if !crate::forest::is_forest(g, &members) {
        return Err(HeppError::NotAForest);
    }
    let enlarged = Forest { members };
    let idx = ShapeIndex::build(shape, g.n_vertices)?;
    let state = contract_for_forest(g, &enlarged)?;
    let scratch = SafetyScratch { g, shape: &idx };
    scratch.member_safe(&state, &enlarged, gamma)
}

/// 𝓕_u: all universe members unsafe for the given safe forest.
pub fn unsafe_completion(
    g: &FeynmanDiagram,
    safe_forest: &Forest,
    shape: &HeppTree,
    universe: &[SubDiagram],
) -> Result<Forest, HeppError> {
    let mut members = Vec::new();
    for gamma in universe {
        if safe_forest.contains(gamma) {
            continue;
        }
        let mut enlarged = safe_forest.members.clone();
        enlarged.push(gamma.clone());
        if !crate::forest::is_forest(g, &enlarged) {
            continue;
        }
        if is_safe_for(g, safe_forest, shape, gamma)? == Safety::Unsafe {
            members.push(gamma.clone());
        }
    }
    members.sort();
    Ok(Forest { members })
}

/// The induced divergent subdiagrams: the universe over which full forests
/// and sector partitions are formed.
pub fn forest_universe(
    g: &FeynmanDiagram,
    scale: DegreeScale,
    include_marginal: bool,
) -> Vec<SubDiagram> {
    divergent_subdiagrams(g, scale, include_marginal)
        .into_iter()
        .filter(|s| is_induced(g, s))
        .collect()
}

/// All forests whose members come from the given universe.
pub fn forests_over(g: &FeynmanDiagram, universe: &[SubDiagram]) -> Vec<Forest> {
    let mut out = Vec::new();
    let mut current: Vec<SubDiagram> = Vec::new();
    fn go(
        g: &FeynmanDiagram,
        universe: &[SubDiagram],
        from: usize,
        current: &mut Vec<SubDiagram>,
        out: &mut Vec<Forest>,
    ) {
        out.push(Forest {
            members: current.clone(),
        });
        for i in from..universe.len() {
            let cand = &universe[i];
            let mut trial = current.clone();
            trial.push(cand.clone());
            if crate::forest::is_forest(g, &trial) {
                current.push(cand.clone());
                go(g, universe, i + 1, current, out);
                current.pop();
            }
        }
    }
    go(g, universe, 0, &mut current, &mut out);
    out
}

/// All safe forests for the shape (every member safe within the forest).
pub fn safe_forests(
    g: &FeynmanDiagram,
    shape: &HeppTree,
    universe: &[SubDiagram],
) -> Result<Vec<Forest>, HeppError> {
    let mut out = Vec::new();
    for forest in forests_over(g, universe) {
        let classified = classify_safety(g, &forest, shape)?;
        if classified.iter().all(|(_, s)| *s == Safety::Safe) {
            out.push(forest);
        }
    }
    Ok(out)
}

/// The partition of the full forests into intervals [𝓕_s, 𝓕_s ∪ 𝓕_u],
/// one per safe forest.
pub fn sector_partition(
    g: &FeynmanDiagram,
    shape: &HeppTree,
    universe: &[SubDiagram],
) -> Result<Vec<ForestInterval>, HeppError> {
    let mut out = Vec::new();
    for forest in safe_forests(g, shape, universe)? {
        let fu = unsafe_completion(g, &forest, shape, universe)?;
        let mut upper = forest.members.clone();
        upper.extend(fu.members.iter().cloned());
        upper.sort();
        if !crate::forest::is_forest(g, &upper) {
            return Err(HeppError::NotAForest);
        }
        out.push(ForestInterval {
            lower: forest,
            upper: Forest { members: upper },
        });
    }
    out.sort();
    Ok(out)
}

/// Per-inner-node exponents of the sector bound.
#[derive(Debug, Clone)]
pub struct BoundRow {
    pub node: usize,
    pub leaves: Vec<u32>,
    pub eta_circ: Rational,
    pub eta_eps: Rational,
    pub eta: Rational,
    pub eta_geq: Rational,
    pub lambda: Rational,
    pub alpha: Rational,
    pub beta: Rational,
    pub gamma: u32,
    pub alpha_bar: Rational,
    pub beta_bar: Rational,
}

#[derive(Debug, Clone)]
pub struct BoundProfile {
    pub rows: Vec<BoundRow>,
    /// Exponent of ε in the sector bound (= deg Γ for divergent diagrams).
    pub eps_exponent: Rational,
    /// Power of log(ε^{-1}).
    pub log_power: u32,
}

impl BoundProfile {
    pub fn row_for_leaves(&self, leaves: &[u32]) -> Option<&BoundRow> {
        let mut want = leaves.to_vec();
        want.sort();
        self.rows.iter().find(|r| {
            let mut have = r.leaves.clone();
            have.sort();
            have == want
        })
    }

    /// The root spans all leaves; rows are stored in preorder.
    pub fn root_row(&self) -> &BoundRow {
        &self.rows[0]
    }
}

/// η°, η^ε and the unsafe corrections per inner node.
pub struct EtaProfile {
    pub eta_circ: Vec<Rational>,
    pub eta_eps: Vec<Rational>,
    /// Σ N(γ)[𝟙_{γ↑} − 𝟙_{γ↑↑}] per node; folds into η° in the recursion.
    pub correction: Vec<Rational>,
    /// (member, γ↑, γ↑↑) for each unsafe member.
    pub gamma_arrows: Vec<(SubDiagram, usize, usize)>,
}

impl EtaProfile {
    pub fn eta(&self, v: usize) -> Rational {
        self.eta_circ[v] + self.eta_eps[v] + self.correction[v]
    }

    pub fn eta_circ_hat(&self, v: usize) -> Rational {
        self.eta_circ[v] + self.correction[v]
    }
}

/// Computes η°(v) = ρ+d + Σ_{bare e: e↑=v} deg e and η^ε(v) over mollified
/// edges, plus — for each unsafe member — the Taylor correction
/// N(γ)[𝟙_{γ↑}(v) − 𝟙_{γ↑↑}(v)].
pub fn eta_profiles(
    g: &FeynmanDiagram,
    safe_forest: &Forest,
    unsafe_family: &Forest,
    shape: &HeppTree,
    params: &ModelParams,
    scale: DegreeScale,
) -> Result<EtaProfile, HeppError> {
    let idx = ShapeIndex::build(shape, g.n_vertices)?;
    let state = contract_for_forest(g, safe_forest)?;
    let scratch = SafetyScratch { g, shape: &idx };

    let n = idx.n_inner();
    let mut eta_circ = vec![Rational::zero(); n];
    let mut eta_eps = vec![Rational::zero(); n];
    let vertex_weight = scale.vertex_weight();
    for slot in eta_circ.iter_mut() {
        *slot += vertex_weight;
    }
    for (i, e) in g.edges.iter().enumerate() {
        let up = scratch.edge_meet(&state, i as u32)?;
        let deg = e.ty.degree(scale);
        if e.ty.mollified() {
            eta_eps[up] += deg;
        } else {
            eta_circ[up] += deg;
        }
    }

    let mut correction = vec![Rational::zero(); n];
    let mut gamma_arrows = Vec::new();
    let raw_scale = params.scale();
    for gamma in &unsafe_family.members {
        // children of γ inside the safe forest
        let gs = gamma.edge_set();
        let children: Vec<&SubDiagram> = safe_forest
            .members
            .iter()
            .filter(|c| c.edge_set().is_subset(&gs) && *c != gamma)
            .filter(|c| {
                !safe_forest.members.iter().any(|b| {
                    b != *c
                        && b.edge_set() != gs
                        && c.edge_set().is_subset(&b.edge_set())
                        && b.edge_set().is_subset(&gs)
                })
            })
            .collect();
        let own = SafetyScratch::own_edges(gamma, &children);
        let cluster = state.current_vertices(&own);
        let mask = cluster.iter().fold(0u64, |m, &v| m | (1u64 << v));
        let up = (0..n)
            .find(|&v| idx.leafmask[v] == mask)
            .ok_or(HeppError::MissingClusterNode)?;
        // parent of γ in 𝓕_s ∪ {γ}: γ's boundary edges live there
        let parent_own: Vec<u32> = {
            let parent = safe_forest
                .members
                .iter()
                .filter(|b| gs.is_subset(&b.edge_set()) && b.edge_set() != gs)
                .min_by_key(|b| b.edges.len());
            match parent {
                Some(p) => {
                    let ps = p.edge_set();
                    let mut kids: Vec<&SubDiagram> = safe_forest
                        .members
                        .iter()
                        .filter(|c| {
                            c.edge_set().is_subset(&ps)
                                && c.edge_set() != ps
                                && !safe_forest.members.iter().any(|b| {
                                    b != *c
                                        && b.edge_set() != ps
                                        && c.edge_set().is_subset(&b.edge_set())
                                        && b.edge_set().is_subset(&ps)
                                })
                        })
                        .collect();
                    kids.push(gamma);
                    SafetyScratch::own_edges(p, &kids)
                }
                None => {
                    let mut roots: Vec<&SubDiagram> = safe_forest.roots();
                    roots.push(gamma);
                    let root_edges: BTreeSet<u32> =
                        roots.iter().flat_map(|r| r.edges.iter().copied()).collect();
                    (0..g.edges.len() as u32)
                        .filter(|e| !root_edges.contains(e))
                        .collect()
                }
            }
        };
        let mut upup: Option<usize> = None;
        for e in parent_own {
            let (a, b) = state.endpoints[e as usize];
            if cluster.contains(&a) || cluster.contains(&b) {
                let m = scratch.edge_meet(&state, e)?;
                upup = Some(match upup {
                    None => m,
                    Some(prev) => {
                        if idx.depth[m] > idx.depth[prev] {
                            m
                        } else {
                            prev
                        }
                    }
                });
            }
        }
        let upup = upup.ok_or(HeppError::MissingClusterNode)?;
        let n_gamma = crate::forest::taylor_order(g, gamma, raw_scale);
        let ng = Ratio::from_integer(n_gamma as i64);
        correction[up] += ng;
        correction[upup] -= ng;
        gamma_arrows.push((gamma.clone(), up, upup));
    }
    Ok(EtaProfile {
        eta_circ,
        eta_eps,
        correction,
        gamma_arrows,
    })
}

/// Leaf-initialised bottom-up recursion over the shape; returns the full
/// per-node table and the resulting ε-exponent and log power.
pub fn bound_recursion(
    g: &FeynmanDiagram,
    safe_forest: &Forest,
    unsafe_family: &Forest,
    shape: &HeppTree,
    params: &ModelParams,
    scale: DegreeScale,
) -> Result<BoundProfile, HeppError> {
    let idx = ShapeIndex::build(shape, g.n_vertices)?;
    let eta = eta_profiles(g, safe_forest, unsafe_family, shape, params, scale)?;
    let n = idx.n_inner();
    let zero = Rational::zero();

    let mut alpha = vec![zero; n];
    let mut beta = vec![zero; n];
    let mut gamma_pow = vec![0u32; n];
    let mut alpha_bar = vec![zero; n];
    let mut beta_bar = vec![zero; n];
    let mut eta_geq = vec![zero; n];
    let mut lambda_v = vec![zero; n];

    // children come later in preorder, so process in reverse
    for v in (0..n).rev() {
        let mut sum_alpha = zero;
        let mut sum_beta = zero;
        let mut sum_gamma = 0u32;
        let mut sum_alpha_bar = zero;
        let mut sum_beta_bar = zero;
        let mut sum_eta_geq = zero;
        for ch in idx.children[v] {
            if let ShapeChild::Inner(w) = ch {
                sum_alpha += alpha[w];
                sum_beta += beta[w];
                sum_gamma += gamma_pow[w];
                sum_alpha_bar += alpha_bar[w];
                sum_beta_bar += beta_bar[w];
                sum_eta_geq += eta_geq[w];
            }
        }
        // geometric-sum condition for the n ≥ n_ε branch
        if eta.eta_circ_hat(v) + sum_beta_bar <= zero {
            return Err(HeppError::BoundNotDerivable);
        }
        let eta_v = eta.eta(v);
        let lambda = eta_v + sum_beta;
        lambda_v[v] = lambda;
        alpha[v] = if lambda < zero {
            sum_alpha - lambda
        } else {
            sum_alpha
        };
        beta[v] = if lambda <= zero { zero } else { lambda };
        gamma_pow[v] = if lambda < zero {
            0
        } else if lambda.is_zero() {
            sum_gamma + 1
        } else {
            sum_gamma
        };
        alpha_bar[v] = sum_alpha_bar - eta.eta_eps[v];
        beta_bar[v] = sum_beta_bar + eta.eta_circ_hat(v);
        eta_geq[v] = sum_eta_geq + eta_v;
    }

    let rows: Vec<BoundRow> = (0..n)
        .map(|v| BoundRow {
            node: v,
            leaves: (0..64u32)
                .filter(|b| idx.leafmask[v] & (1u64 << b) != 0)
                .collect(),
            eta_circ: eta.eta_circ_hat(v),
            eta_eps: eta.eta_eps[v],
            eta: eta.eta(v),
            eta_geq: eta_geq[v],
            lambda: lambda_v[v],
            alpha: alpha[v],
            beta: beta[v],
            gamma: gamma_pow[v],
            alpha_bar: alpha_bar[v],
            beta_bar: beta_bar[v],
        })
        .collect();
    Ok(BoundProfile {
        eps_exponent: -alpha[0],
        log_power: gamma_pow[0],
        rows,
    })
}

/// Report of the η_≥ properties for one context.
#[derive(Debug, Clone)]
pub struct EtaReport {
    pub deg: Rational,
    pub root_equals_deg: bool,
    pub all_geq_deg: bool,
    /// η_≥(v) = deg Γ away from the root only with a degree-0 child.
    pub equality_needs_marginal_child: bool,
    /// At binary offspring, one branch is positive throughout.
    pub offspring_property: bool,
    pub eta_circ_geq_positive: bool,
}

impl EtaReport {
    pub fn all_hold(&self) -> bool {
        self.root_equals_deg
            && self.all_geq_deg
            && self.equality_needs_marginal_child
            && self.offspring_property
            && self.eta_circ_geq_positive
    }
}

/// η_≥ per inner node (preorder), with unsafe corrections when present.
pub fn eta_geq(
    g: &FeynmanDiagram,
    safe_forest: &Forest,
    unsafe_family: &Forest,
    shape: &HeppTree,
    params: &ModelParams,
    scale: DegreeScale,
) -> Result<Vec<Rational>, HeppError> {
    let idx = ShapeIndex::build(shape, g.n_vertices)?;
    let eta = eta_profiles(g, safe_forest, unsafe_family, shape, params, scale)?;
    let n = idx.n_inner();
    let mut out = vec![Rational::zero(); n];
    for v in (0..n).rev() {
        let mut s = eta.eta(v);
        for ch in idx.children[v] {
            if let ShapeChild::Inner(w) = ch {
                s += out[w];
            }
        }
        out[v] = s;
    }
    Ok(out)
}

/// Verifies the η_≥ lemma on one context.
pub fn check_eta_lemma(
    g: &FeynmanDiagram,
    safe_forest: &Forest,
    unsafe_family: &Forest,
    shape: &HeppTree,
    params: &ModelParams,
    scale: DegreeScale,
) -> Result<EtaReport, HeppError> {
    let idx = ShapeIndex::build(shape, g.n_vertices)?;
    let eta = eta_profiles(g, safe_forest, unsafe_family, shape, params, scale)?;
    let state = contract_for_forest(g, safe_forest)?;
    let scratch = SafetyScratch { g, shape: &idx };
    let n = idx.n_inner();
    let deg = g.degree(scale);

    // e↑ per edge, for the Γ₀(v)-nonempty test
    let mut ups = Vec::new();
    for i in 0..g.edges.len() as u32 {
        ups.push(scratch.edge_meet(&state, i)?);
    }
    let gamma0_nonempty = |v: usize| -> bool { ups.iter().any(|&u| idx.is_descendant(u, v)) };

    let mut eta_geq = vec![Rational::zero(); n];
    let mut eta_circ_geq = vec![Rational::zero(); n];
    for v in (0..n).rev() {
        let mut s = eta.eta(v);
        let mut sc = eta.eta_circ_hat(v);
        for ch in idx.children[v] {
            if let ShapeChild::Inner(w) = ch {
                s += eta_geq[w];
                sc += eta_circ_geq[w];
            }
        }
        eta_geq[v] = s;
        eta_circ_geq[v] = sc;
    }

    let root_equals_deg = eta_geq[0] == deg;
    let all_geq_deg = (0..n)
        .filter(|&v| gamma0_nonempty(v))
        .all(|v| eta_geq[v] >= deg);

    // equality below the root requires a degree-0 child of Γ
    let marginal_child_exists = safe_forest
        .roots()
        .iter()
        .any(|r| r.degree(g, scale).is_zero());
    let equality_needs_marginal_child = (1..n)
        .filter(|&v| gamma0_nonempty(v))
        .all(|v| eta_geq[v] > deg || marginal_child_exists);

    // at binary offspring, at least one branch has η_≥ > 0 throughout
    let mut offspring_property = true;
    for v in 0..n {
        let inner: Vec<usize> = idx.children[v]
            .iter()
            .filter_map(|c| match c {
                ShapeChild::Inner(w) => Some(*w),
                ShapeChild::Leaf(_) => None,
            })
            .collect();
        if inner.len() == 2 {
            let branch_positive = |w0: usize| -> bool {
                (0..n)
                    .filter(|&w| idx.is_descendant(w, w0))
                    .all(|w| eta_geq[w] > Rational::zero())
            };
            if !branch_positive(inner[0]) && !branch_positive(inner[1]) {
                offspring_property = false;
            }
        }
    }

    let has_mollified = g.edges.iter().any(|e| e.ty.mollified());
    let eta_circ_geq_positive = !has_mollified
        || (0..n)
            .filter(|&v| gamma0_nonempty(v))
            .all(|v| eta_circ_geq[v] > Rational::zero());

    Ok(EtaReport {
        deg,
        root_equals_deg,
        all_geq_deg,
        equality_needs_marginal_child,
        offspring_property,
        eta_circ_geq_positive,
    })
}

/// ζ(Γ): the number of degree-0 children of Γ, i.e. maximal members of the
/// marginal-inclusive divergence family with vanishing degree.
pub fn zeta(g: &FeynmanDiagram, scale: DegreeScale) -> usize {
    let universe = forest_universe(g, scale, true);
    universe
        .iter()
        .filter(|s| {
            s.degree(g, scale).is_zero()
                && !universe
                    .iter()
                    .any(|b| *b != **s && s.edge_set().is_subset(&b.edge_set()))
        })
        .count()
}

/// Reference Hepp shapes over the six vertices of the nested reference
/// diagram, in the vertex ordering used by the worked exponent table.
pub mod fixtures {
    use super::*;
    use crate::diagram::{DiagEdge, EdgeType};

    /// The nested reference diagram with its vertices ordered around the
    /// ring starting from the distinguished one; under this order the
    /// contraction reconnects boundary edges to the expected vertices.
    pub fn ordered_nested_diagram() -> FeynmanDiagram {
        let edges = vec![
            DiagEdge::new(0, 1, EdgeType::KGK),
            DiagEdge::new(0, 1, EdgeType::GKeps),
            DiagEdge::new(2, 5, EdgeType::GKeps),
            DiagEdge::new(3, 4, EdgeType::GKeps),
            DiagEdge::new(1, 2, EdgeType::K),
            DiagEdge::new(2, 3, EdgeType::K),
            DiagEdge::new(3, 4, EdgeType::K),
            DiagEdge::new(4, 5, EdgeType::K),
            DiagEdge::new(5, 0, EdgeType::K),
        ];
        FeynmanDiagram::new(6, Some(0), edges)
    }

    /// The inner bubble {3,4} and the outer divergence {2,3,4,5} of the
    /// ordered nested diagram, as edge-index sets.
    pub fn ordered_gammas() -> (SubDiagram, SubDiagram) {
        (
            SubDiagram { edges: vec![3, 6] },
            SubDiagram {
                edges: vec![2, 3, 5, 6, 7],
            },
        )
    }

    fn leaf(v: u32) -> HeppTree {
        HeppTree::Leaf(v)
    }

    /// Shape for which both members of the nested forest are safe and the
    /// recursion reproduces the worked exponent table.
    pub fn table_shape() -> HeppTree {
        HeppTree::labelled(
            0,
            HeppTree::labelled(
                1,
                HeppTree::labelled(2, HeppTree::labelled(3, leaf(0), leaf(1)), leaf(2)),
                HeppTree::labelled(2, leaf(3), leaf(5)),
            ),
            leaf(4),
        )
    }

    /// Shape for which the bubble is unsafe while the outer member stays
    /// safe.
    pub fn unsafe_shape() -> HeppTree {
        HeppTree::node(
            HeppTree::node(
                HeppTree::node(
                    HeppTree::node(leaf(3), leaf(4)),
                    HeppTree::node(leaf(0), leaf(1)),
                ),
                leaf(5),
            ),
            leaf(2),
        )
    }

    /// Shape realising the degenerate η_≥ pattern at ρ = 2d/5: zero at the
    /// top two nodes, strictly positive below.
    pub fn degenerate_shape() -> HeppTree {
        HeppTree::node(
            HeppTree::node(HeppTree::node(leaf(0), leaf(1)), leaf(2)),
            HeppTree::node(HeppTree::node(leaf(5), leaf(3)), leaf(4)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::parse_rational;

    fn params(d: u32, rho: &str) -> ModelParams {
        ModelParams::new(d, parse_rational(rho).unwrap()).unwrap()
    }

    fn nested_setup() -> (FeynmanDiagram, SubDiagram, SubDiagram, Forest) {
        let g = fixtures::ordered_nested_diagram();
        let (g1, g2) = fixtures::ordered_gammas();
        let forest = Forest {
            members: vec![g1.clone(), g2.clone()],
        };
        (g, g1, g2, forest)
    }

    #[test]
    fn ordered_fixture_matches_generated_diagram() {
        let g = fixtures::ordered_nested_diagram();
        let generated = crate::forest::fixtures::nested_bubbles();
        assert_eq!(
            crate::diagram::canonical_form(&g),
            crate::diagram::canonical_form(&generated)
        );
        let p = params(3, "1.15");
        let (g1, g2) = fixtures::ordered_gammas();
        assert!(g1.degree(&g, p.scale()) < Rational::zero());
        assert!(g2.degree(&g, p.scale()) < Rational::zero());
        assert!(g1.edge_set().is_subset(&g2.edge_set()));
        let divs = divergent_subdiagrams(&g, p.scale(), false);
        assert_eq!(divs.len(), 2);
        assert!(divs.contains(&g1) && divs.contains(&g2));
    }

    #[test]
    fn contraction_depths_and_commutation() {
        let (g, g1, g2, forest) = nested_setup();
        // single contraction of the bubble: its edges at depth 1, and the
        // boundary edge from vertex 4 reconnects to the first vertex 3
        let s1 = contract_in_order(&g, &[&g1]).unwrap();
        assert_eq!(s1.depths[3], 1);
        assert_eq!(s1.depths[6], 1);
        assert_eq!(s1.endpoints[7], (3, 5));

        let s2 = contract_in_order(&g, &[&g2]).unwrap();
        // outer contraction: (5,0) reconnects to its first vertex 2
        assert_eq!(s2.endpoints[8], (2, 0));
        assert_eq!(s2.depths[2], 1);

        // both orders agree
        let both_a = contract_in_order(&g, &[&g2, &g1]).unwrap();
        let both_b = contract_in_order(&g, &[&g1, &g2]).unwrap();
        assert_eq!(both_a, both_b);
        assert_eq!(both_a, contract_for_forest(&g, &forest).unwrap());
        // bubble edges reach depth 2, the rest of the outer member depth 1
        assert_eq!(both_a.depths[3], 2);
        assert_eq!(both_a.depths[6], 2);
        assert_eq!(both_a.depths[2], 1);
        assert_eq!(both_a.depths[5], 1);
        assert_eq!(both_a.depths[7], 1);

        // empty forest: identity
        let id = contract_for_forest(&g, &Forest::empty()).unwrap();
        assert_eq!(id.depths, vec![0; 9]);
    }

    #[test]
    fn safety_on_reference_shapes() {
        let (g, g1, g2, forest) = nested_setup();
        let table = fixtures::table_shape();
        assert!(table.labels_monotone());
        let safety = classify_safety(&g, &forest, &table).unwrap();
        assert!(safety.iter().all(|(_, s)| *s == Safety::Safe));

        let unsafe_t = fixtures::unsafe_shape();
        let safety = classify_safety(&g, &forest, &unsafe_t).unwrap();
        for (m, s) in &safety {
            if *m == g1 {
                assert_eq!(*s, Safety::Unsafe);
            } else {
                assert_eq!(*s, Safety::Safe);
            }
        }
        // γ↑ and γ↑↑ of the unsafe bubble with 𝓕_s = {γ₂}
        let p = params(3, "1.05");
        let fs = Forest {
            members: vec![g2.clone()],
        };
        let fu = Forest {
            members: vec![g1.clone()],
        };
        let eta = eta_profiles(&g, &fs, &fu, &unsafe_t, &p, p.scale()).unwrap();
        assert_eq!(eta.gamma_arrows.len(), 1);
        let idx = ShapeIndex::build(&unsafe_t, g.n_vertices).unwrap();
        let (_, up, upup) = eta.gamma_arrows[0];
        assert_eq!(idx.leafmask[up], (1 << 3) | (1 << 4));
        assert_eq!(
            idx.leafmask[upup],
            (1 << 0) | (1 << 1) | (1 << 3) | (1 << 4) | (1 << 5)
        );
        // corrections: +N at γ↑, −N at γ↑↑ with N = 1 for d = 3
        assert_eq!(eta.correction[up], Ratio::from_integer(1));
        assert_eq!(eta.correction[upup], Ratio::from_integer(-1));

        // no subdivergences: empty classification
        let empty = classify_safety(&g, &Forest::empty(), &table).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn exponent_table_in_critical_units() {
        let (g, _, _, forest) = nested_setup();
        let p = params(3, "1.15");
        let units = p.critical_scale();
        let profile = bound_recursion(
            &g,
            &forest,
            &Forest::empty(),
            &fixtures::table_shape(),
            &p,
            units,
        )
        .unwrap();
        let r = Ratio::from_integer;
        // (leaves) → (η°, η^ε, η, η_≥, λ, α, β, ᾱ, β̄), γ
        let expected: [(&[u32], [i64; 9], u32); 5] = [
            (&[3, 5], [1, 0, 1, 1, 1, 0, 1, 0, 1], 0),
            (&[0, 1], [4, -3, 1, 1, 1, 0, 1, 3, 4], 0),
            (&[0, 1, 2], [-2, 0, -2, -1, -1, 1, 0, 3, 2], 0),
            (&[0, 1, 2, 3, 5], [1, -2, -1, -1, 0, 1, 0, 5, 4], 1),
            (&[0, 1, 2, 3, 4, 5], [1, -2, -1, -2, -1, 2, 0, 7, 5], 0),
        ];
        for (leaves, vals, gamma) in expected {
            let row = profile.row_for_leaves(leaves).unwrap();
            assert_eq!(row.eta_circ, r(vals[0]), "eta_circ at {leaves:?}");
            assert_eq!(row.eta_eps, r(vals[1]), "eta_eps at {leaves:?}");
            assert_eq!(row.eta, r(vals[2]), "eta at {leaves:?}");
            assert_eq!(row.eta_geq, r(vals[3]), "eta_geq at {leaves:?}");
            assert_eq!(row.lambda, r(vals[4]), "lambda at {leaves:?}");
            assert_eq!(row.alpha, r(vals[5]), "alpha at {leaves:?}");
            assert_eq!(row.beta, r(vals[6]), "beta at {leaves:?}");
            assert_eq!(row.alpha_bar, r(vals[7]), "alpha_bar at {leaves:?}");
            assert_eq!(row.beta_bar, r(vals[8]), "beta_bar at {leaves:?}");
            assert_eq!(row.gamma, gamma, "gamma at {leaves:?}");
        }
        // α(root) = 2 units, so the bound is ε^{−2d/3}
        assert_eq!(profile.eps_exponent, r(-2));
        assert_eq!(profile.eps_exponent, g.degree(units));
        assert_eq!(profile.log_power, 0);
    }

    #[test]
    fn alpha_beta_eta_relations() {
        let (g, _, _, forest) = nested_setup();
        let p = params(3, "1.15");
        for scale in [p.scale(), p.critical_scale()] {
            for shape in [fixtures::table_shape(), fixtures::degenerate_shape()] {
                let profile =
                    bound_recursion(&g, &forest, &Forest::empty(), &shape, &p, scale).unwrap();
                for row in &profile.rows {
                    // both differences collapse to −η_≥ (the worked table
                    // confirms the sign: ᾱ−β̄ = 3−2 = +1 where η_≥ = −1)
                    assert_eq!(row.alpha - row.beta, -row.eta_geq);
                    assert_eq!(row.alpha_bar - row.beta_bar, -row.eta_geq);
                }
            }
        }
    }

    #[test]
    fn trivial_contexts() {
        // divergence-free two-vertex diagram: α(root) = max(0, −deg Γ)
        let p = params(3, "1.3");
        let bubble = FeynmanDiagram::new(
            2,
            Some(0),
            vec![
                crate::diagram::DiagEdge::new(1, 0, crate::diagram::EdgeType::K),
                crate::diagram::DiagEdge::new(0, 1, crate::diagram::EdgeType::GKeps),
            ],
        );
        let shape = HeppTree::node(HeppTree::Leaf(0), HeppTree::Leaf(1));
        let profile = bound_recursion(
            &bubble,
            &Forest::empty(),
            &Forest::empty(),
            &shape,
            &p,
            p.scale(),
        )
        .unwrap();
        assert_eq!(profile.rows.len(), 1);
        assert_eq!(profile.eps_exponent, bubble.degree(p.scale()));
        assert_eq!(profile.log_power, 0);
        let row = profile.root_row();
        assert_eq!(row.eta_circ, p.scale().vertex_weight() - p.scale().d);
        assert_eq!(
            row.eta_eps,
            crate::diagram::EdgeType::GKeps.degree(p.scale())
        );
    }

    #[test]
    fn sector_partition_cases_on_nested_pair() {
        let (g, g1, g2, _) = nested_setup();
        let p = params(3, "1.15");
        let universe = forest_universe(&g, p.scale(), false);
        assert_eq!(universe.len(), 2);

        // all-safe shape: four singleton intervals
        let parts = sector_partition(&g, &fixtures::table_shape(), &universe).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|i| i.lower == i.upper));

        // the unsafe shape: the bubble is unsafe for ∅ and for {γ₂}
        let parts = sector_partition(&g, &fixtures::unsafe_shape(), &universe).unwrap();
        assert_eq!(parts.len(), 2);
        for i in &parts {
            let delta: Vec<_> = i.delta();
            if i.lower.is_empty() {
                assert_eq!(delta.len(), 1);
                assert_eq!(*delta[0], g1);
            } else {
                assert_eq!(i.lower.members, vec![g2.clone()]);
                assert_eq!(delta.len(), 1);
            }
        }

        // every full forest lies in exactly one interval, for all shapes
        let shapes = [
            fixtures::table_shape(),
            fixtures::unsafe_shape(),
            fixtures::degenerate_shape(),
        ];
        let all = forests_over(&g, &universe);
        for shape in &shapes {
            let parts = sector_partition(&g, shape, &universe).unwrap();
            for f in &all {
                let count = parts.iter().filter(|i| i.contains(f)).count();
                assert_eq!(count, 1, "forest {f:?} not in exactly one interval");
            }
        }
    }

    #[test]
    fn degenerate_eta_pattern_at_two_fifths() {
        // d = 5, ρ = 2 = 2d/5: deg Γ = 0, deg γ₂ = 0, and the degenerate
        // shape gives η_≥ = 0 at the top two nodes, positive below
        let p = params(5, "2");
        let (g, _, g2, forest) = nested_setup();
        assert!(g.degree(p.scale()).is_zero());
        assert!(g2.degree(&g, p.scale()).is_zero());
        let shape = fixtures::degenerate_shape();
        let safety = classify_safety(&g, &forest, &shape).unwrap();
        assert!(safety.iter().all(|(_, s)| *s == Safety::Safe));
        let geq = eta_geq(&g, &forest, &Forest::empty(), &shape, &p, p.scale()).unwrap();
        let idx = ShapeIndex::build(&shape, g.n_vertices).unwrap();
        for v in 0..idx.n_inner() {
            let mask = idx.leafmask[v];
            let top = mask == 0b111111 || mask == 0b000111;
            if top {
                assert!(geq[v].is_zero(), "expected 0 at node {v}, got {:?}", geq[v]);
            } else {
                assert!(geq[v] > Rational::zero(), "expected positive at node {v}");
            }
        }
        let report =
            check_eta_lemma(&g, &forest, &Forest::empty(), &shape, &p, p.scale()).unwrap();
        assert!(report.all_hold(), "{report:?}");
        // marginal diagram with a marginal child: log power 1 + ζ
        let profile =
            bound_recursion(&g, &forest, &Forest::empty(), &shape, &p, p.scale()).unwrap();
        assert_eq!(profile.log_power, 2);
        assert_eq!(zeta(&g, p.scale()), 1);
    }

    #[test]
    fn zeta_values() {
        let (g, _, _, _) = nested_setup();
        let p = params(3, "1.15");
        assert_eq!(zeta(&g, p.scale()), 0);
        let bubble = FeynmanDiagram::new(
            2,
            Some(0),
            vec![
                crate::diagram::DiagEdge::new(1, 0, crate::diagram::EdgeType::K),
                crate::diagram::DiagEdge::new(0, 1, crate::diagram::EdgeType::GKeps),
            ],
        );
        assert_eq!(zeta(&bubble, p.scale()), 0);
    }

    #[test]
    fn shape_enumeration_counts() {
        assert_eq!(enumerate_shapes(&[0, 1]).len(), 1);
        assert_eq!(enumerate_shapes(&[0, 1, 2]).len(), 3);
        assert_eq!(enumerate_shapes(&[0, 1, 2, 3]).len(), 15);
        assert_eq!(enumerate_shapes(&[0, 1, 2, 3, 4]).len(), 105);
    }

    #[test]
    fn safety_is_label_free() {
        let (g, _, _, forest) = nested_setup();
        let labelled = fixtures::table_shape();
        fn strip(t: &HeppTree) -> HeppTree {
            match t {
                HeppTree::Leaf(v) => HeppTree::Leaf(*v),
                HeppTree::Node { left, right, .. } => HeppTree::node(strip(left), strip(right)),
            }
        }
        let a = classify_safety(&g, &forest, &labelled).unwrap();
        let b = classify_safety(&g, &forest, &strip(&labelled)).unwrap();
        assert_eq!(a, b);
    }
}
