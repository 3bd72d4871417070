//! Forests of subdivergences, Zimmermann's forest formula, and the
//! diagram-level twisted antipode, with a cross-check against the
//! tree-level antipode.
//!
//! Terms are merged on canonical rootless diagram forms: vacuum-diagram
//! values are translation invariant, so the base point carries no
//! information. Terms containing a one-connected component are dropped
//! (their value vanishes); on the tree side the matching exclusion is the
//! continuation rule of the subtree extraction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use num_rational::Ratio;
use num_traits::Zero;

use crate::antipode::twisted_antipode;
use crate::diagram::{
    build_diagram, canonical_rootless, connectivity, divergent_subdiagrams, leaf_merge, pairings,
    reduce, standalone, CanonicalDiagram, Connectivity, DiagEdge, FeynmanDiagram, SubDiagram,
};
use crate::index::MultiIndex;
use crate::params::{DegreeScale, ModelParams, Rational};
use crate::tree::DecoratedTree;

/// A forest: subdiagrams of a fixed diagram, pairwise nested or
/// vertex-disjoint, sorted by edge set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Forest {
    pub members: Vec<SubDiagram>,
}

impl Forest {
    pub fn empty() -> Self {
        Forest {
            members: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, sub: &SubDiagram) -> bool {
        self.members.contains(sub)
    }

    /// Maximal members: those not strictly contained in another member.
    pub fn roots(&self) -> Vec<&SubDiagram> {
        self.members
            .iter()
            .filter(|a| {
                !self
                    .members
                    .iter()
                    .any(|b| b != *a && a.edge_set().is_subset(&b.edge_set()))
            })
            .collect()
    }

    /// Maximal members strictly contained in `gamma`.
    pub fn children_of(&self, gamma: &SubDiagram) -> Vec<&SubDiagram> {
        let gs = gamma.edge_set();
        self.members
            .iter()
            .filter(|a| *a != gamma && a.edge_set().is_subset(&gs))
            .filter(|a| {
                !self.members.iter().any(|b| {
                    b != *a
                        && b != gamma
                        && a.edge_set().is_subset(&b.edge_set())
                        && b.edge_set().is_subset(&gs)
                })
            })
            .collect()
    }

    /// Smallest member strictly containing `gamma`, if any.
    pub fn parent_of(&self, gamma: &SubDiagram) -> Option<&SubDiagram> {
        let gs = gamma.edge_set();
        self.members
            .iter()
            .filter(|b| *b != gamma && gs.is_subset(&b.edge_set()))
            .min_by_key(|b| b.edges.len())
    }
}

/// Checks the forest condition: pairwise nested or vertex-disjoint.
pub fn is_forest(g: &FeynmanDiagram, members: &[SubDiagram]) -> bool {
    for (i, a) in members.iter().enumerate() {
        for b in members.iter().skip(i + 1) {
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

/// All subsets of the divergent subdiagrams satisfying the forest
/// condition, the empty forest included.
pub fn all_forests(g: &FeynmanDiagram, scale: DegreeScale, include_marginal: bool) -> Vec<Forest> {
    let divs = divergent_subdiagrams(g, scale, include_marginal);
    let mut out = Vec::new();
    let mut current: Vec<SubDiagram> = Vec::new();
    fn go(
        g: &FeynmanDiagram,
        divs: &[SubDiagram],
        from: usize,
        current: &mut Vec<SubDiagram>,
        out: &mut Vec<Forest>,
    ) {
        out.push(Forest {
            members: current.clone(),
        });
        for i in from..divs.len() {
            let cand = &divs[i];
            let compatible = current.iter().all(|a| {
                let ea = a.edge_set();
                let eb = cand.edge_set();
                ea.is_subset(&eb)
                    || eb.is_subset(&ea)
                    || a.vertex_set(g).is_disjoint(&cand.vertex_set(g))
            });
            if compatible {
                current.push(cand.clone());
                go(g, divs, i + 1, current, out);
                current.pop();
            }
        }
    }
    go(g, &divs, 0, &mut current, &mut out);
    out.sort();
    out
}

/// A forest interval [lower, upper]: all forests between the two.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ForestInterval {
    pub lower: Forest,
    pub upper: Forest,
}

impl ForestInterval {
    pub fn contains(&self, f: &Forest) -> bool {
        self.lower.members.iter().all(|m| f.contains(m))
            && f.members.iter().all(|m| self.upper.contains(m))
    }

    /// δ = upper ∖ lower.
    pub fn delta(&self) -> Vec<&SubDiagram> {
        self.upper
            .members
            .iter()
            .filter(|m| !self.lower.contains(m))
            .collect()
    }
}

/// Contracts pairwise vertex-disjoint parts of a diagram, each to a single
/// vertex (placed at the part's minimal vertex id). Edges belonging to the
/// parts disappear; other edges are reattached.
pub fn contract_parts(g: &FeynmanDiagram, parts: &[&SubDiagram]) -> FeynmanDiagram {
    let mut dropped: BTreeSet<u32> = BTreeSet::new();
    let mut vmap: BTreeMap<u32, u32> = (0..g.n_vertices).map(|v| (v, v)).collect();
    for part in parts {
        let vs = part.vertex_set(g);
        let rep = *vs.iter().next().unwrap();
        for &v in &vs {
            vmap.insert(v, rep);
        }
        for &i in &part.edges {
            dropped.insert(i);
        }
    }
    let kept: Vec<u32> = {
        let reps: BTreeSet<u32> = (0..g.n_vertices).map(|v| vmap[&v]).collect();
        reps.into_iter().collect()
    };
    let compact: BTreeMap<u32, u32> = kept
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new as u32))
        .collect();
    let mut edges = Vec::new();
    for (i, e) in g.edges.iter().enumerate() {
        if dropped.contains(&(i as u32)) {
            continue;
        }
        let mut ne = DiagEdge::new(compact[&vmap[&e.from]], compact[&vmap[&e.to]], e.ty);
        ne.depth = e.depth;
        ne.dec = e.dec.clone();
        edges.push(ne);
    }
    let root = g.root.map(|r| compact[&vmap[&r]]);
    let mut out = FeynmanDiagram::new(kept.len() as u32, root, edges);
    for (&v, dec) in &g.node_dec {
        let target = compact[&vmap[&v]];
        let entry = out.node_dec.entry(target).or_insert_with(MultiIndex::zero);
        if entry.is_zero() {
            *entry = dec.clone();
        } else {
            let mut merged = entry.0.clone();
            if merged.len() < dec.0.len() {
                merged.resize(dec.0.len(), 0);
            }
            for (slot, &k) in merged.iter_mut().zip(dec.0.iter()) {
                *slot += k;
            }
            *entry = MultiIndex(merged);
        }
    }
    out.collapsed_loops = g.collapsed_loops.clone();
    out
}

fn has_bridge(g: &FeynmanDiagram) -> bool {
    matches!(connectivity(g), Ok(Connectivity::OneConnected))
}

/// One term of a diagram combination: a multiset of extracted diagrams and
/// the residual, all in canonical rootless form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DiagTerm {
    pub extracted: Vec<CanonicalDiagram>,
    pub residual: CanonicalDiagram,
    pub coefficient: Rational,
}

/// A merged linear combination of (extracted multiset, residual) pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DiagramCombination {
    terms: BTreeMap<(Vec<CanonicalDiagram>, CanonicalDiagram), Rational>,
}

impl DiagramCombination {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        extracted: Vec<CanonicalDiagram>,
        residual: CanonicalDiagram,
        c: Rational,
    ) {
        let mut key = extracted;
        key.sort();
        *self.terms.entry((key, residual)).or_insert_with(Ratio::zero) += c;
    }

    pub fn purge_zeros(&mut self) {
        self.terms.retain(|_, c| !c.is_zero());
    }

    pub fn scaled(&self, by: Rational) -> DiagramCombination {
        let mut out = DiagramCombination::new();
        for ((e, r), c) in &self.terms {
            out.terms.insert((e.clone(), r.clone()), *c * by);
        }
        out
    }

    pub fn merge_from(&mut self, other: &DiagramCombination) {
        for ((e, r), c) in &other.terms {
            *self
                .terms
                .entry((e.clone(), r.clone()))
                .or_insert_with(Ratio::zero) += *c;
        }
        self.purge_zeros();
    }

    pub fn terms(&self) -> Vec<DiagTerm> {
        self.terms
            .iter()
            .map(|((e, r), c)| DiagTerm {
                extracted: e.clone(),
                residual: r.clone(),
                coefficient: *c,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Direct recursion Ã⁻Γ = −Γ − Σ_{Γ̄⊊Γ} Ã⁻Γ̄ · Γ/Γ̄ over families of
/// pairwise vertex-disjoint divergent subdiagrams. Terms whose residual
/// acquires a bridge are dropped (value zero).
pub fn antipode_diagrams(g: &FeynmanDiagram, scale: DegreeScale) -> DiagramCombination {
    let mut out = DiagramCombination::new();
    for (extracted, residual, coeff) in antipode_rec(g, scale, 0) {
        out.add(extracted, residual, Ratio::from_integer(coeff));
    }
    out.purge_zeros();
    out
}

fn antipode_rec(
    g: &FeynmanDiagram,
    scale: DegreeScale,
    depth: usize,
) -> Vec<(Vec<CanonicalDiagram>, CanonicalDiagram, i64)> {
    assert!(depth < 16, "antipode recursion too deep");
    let divs = divergent_subdiagrams(g, scale, false);
    let mut raw: Vec<(Vec<CanonicalDiagram>, CanonicalDiagram, i64)> = Vec::new();
    raw.push((Vec::new(), canonical_rootless(g), -1));

    fn families(
        g: &FeynmanDiagram,
        divs: &[SubDiagram],
        scale: DegreeScale,
        from: usize,
        family: &mut Vec<usize>,
        depth: usize,
        raw: &mut Vec<(Vec<CanonicalDiagram>, CanonicalDiagram, i64)>,
    ) {
        for i in from..divs.len() {
            let disjoint = family
                .iter()
                .all(|&j| divs[j].vertex_set(g).is_disjoint(&divs[i].vertex_set(g)));
            if !disjoint {
                continue;
            }
            family.push(i);
            emit(g, divs, scale, family, depth, raw);
            families(g, divs, scale, i + 1, family, depth, raw);
            family.pop();
        }
    }
    fn emit(
        g: &FeynmanDiagram,
        divs: &[SubDiagram],
        scale: DegreeScale,
        family: &[usize],
        depth: usize,
        raw: &mut Vec<(Vec<CanonicalDiagram>, CanonicalDiagram, i64)>,
    ) {
        let parts: Vec<&SubDiagram> = family.iter().map(|&i| &divs[i]).collect();
        let residual = contract_parts(g, &parts);
        if has_bridge(&residual) {
            return;
        }
        let residual_canon = canonical_rootless(&residual);
        let mut product: Vec<(Vec<CanonicalDiagram>, i64)> = vec![(Vec::new(), 1)];
        for part in &parts {
            let piece = standalone(g, part);
            let expansion = antipode_rec(&piece, scale, depth + 1);
            let mut next = Vec::new();
            for (trees, coeff) in &product {
                for (fs, r, c) in &expansion {
                    let mut ts = trees.clone();
                    ts.extend(fs.iter().cloned());
                    ts.push(r.clone());
                    next.push((ts, coeff * c));
                }
            }
            product = next;
        }
        for (ts, c) in product {
            // outer minus sign of the recursion
            raw.push((ts, residual_canon.clone(), -c));
        }
    }
    let mut family: Vec<usize> = Vec::new();
    families(g, &divs, scale, 0, &mut family, depth, &mut raw);
    raw
}

/// A Taylor companion term generated by the extraction operator and pruned
/// because its extracted factor is odd in one spatial coordinate.
#[derive(Debug, Clone)]
pub struct PrunedCompanion {
    pub extracted: CanonicalDiagram,
    pub residual: CanonicalDiagram,
    pub coefficient: Rational,
    pub odd_coordinate: u32,
}

/// Taylor order N(γ) = 1 + ⌊−deg γ⌋.
pub fn taylor_order(g: &FeynmanDiagram, gamma: &SubDiagram, scale: DegreeScale) -> u32 {
    let deg = gamma.degree(g, scale);
    let floor = (-deg).floor().to_integer();
    1 + floor.max(0) as u32
}

/// The extraction–contraction operator for a single subdiagram: the pair
/// (γ, Γ/γ) with coefficient 1, plus — at Taylor order 2 — the
/// edge/node-decorated companions, which all vanish by spatial parity and
/// are returned pruned.
pub fn extract_contract(
    g: &FeynmanDiagram,
    gamma: &SubDiagram,
    taylor_order: u32,
    d: u32,
    scale: DegreeScale,
) -> (DiagramCombination, Vec<PrunedCompanion>) {
    let mut combo = DiagramCombination::new();
    let piece = standalone(g, gamma);
    let residual = contract_parts(g, &[gamma]);
    combo.add(
        vec![canonical_rootless(&piece)],
        canonical_rootless(&residual),
        Ratio::from_integer(1),
    );
    let mut pruned = Vec::new();
    if taylor_order >= 2 {
        let vs = gamma.vertex_set(g);
        let deg = gamma.degree(g, scale);
        // companions carry one spatial derivative; admissible only when
        // the decorated extracted degree deg(γ) + 1 stays negative
        if deg + Ratio::from_integer(1) < Ratio::zero() {
            for (i, e) in g.edges.iter().enumerate() {
                if gamma.edges.contains(&(i as u32)) {
                    continue;
                }
                let from_in = vs.contains(&e.from);
                let to_in = vs.contains(&e.to);
                if !from_in && !to_in {
                    continue;
                }
                let gamma_end = if from_in { e.from } else { e.to };
                let sign = if from_in { -1i64 } else { 1 };
                for coord in 1..=d {
                    let mut piece_dec = piece.clone();
                    let local = standalone_vertex(g, gamma, gamma_end);
                    piece_dec
                        .node_dec
                        .insert(local, MultiIndex::unit(coord as usize, d));
                    let mut residual_dec = residual.clone();
                    mark_residual_edge(&mut residual_dec, i, g, gamma, coord, d);
                    pruned.push(PrunedCompanion {
                        extracted: canonical_rootless(&piece_dec),
                        residual: canonical_rootless(&residual_dec),
                        coefficient: Ratio::from_integer(sign),
                        odd_coordinate: coord,
                    });
                }
            }
        }
    }
    (combo, pruned)
}

fn standalone_vertex(g: &FeynmanDiagram, sub: &SubDiagram, v: u32) -> u32 {
    let vs: Vec<u32> = sub.vertex_set(g).into_iter().collect();
    vs.iter().position(|&x| x == v).unwrap() as u32
}

fn mark_residual_edge(
    residual_dec: &mut FeynmanDiagram,
    orig_edge: usize,
    g: &FeynmanDiagram,
    gamma: &SubDiagram,
    coord: u32,
    d: u32,
) {
    // residual edges are g's edges minus gamma's, in order
    let mut pos = 0usize;
    for (i, _) in g.edges.iter().enumerate() {
        if gamma.edges.contains(&(i as u32)) {
            continue;
        }
        if i == orig_edge {
            residual_dec.edges[pos].dec = MultiIndex::unit(coord as usize, d);
            return;
        }
        pos += 1;
    }
    unreachable!("edge not found in residual");
}

/// Zimmermann's forest formula Ã⁻Γ = −Σ_𝓕 (−1)^{|𝓕|} 𝒞_𝓕 Γ, the
/// extraction applied root-first. Returns the merged combination and the
/// number of Taylor companions generated and pruned along the way.
pub fn zimmermann(
    g: &FeynmanDiagram,
    params: &ModelParams,
    scale: DegreeScale,
) -> (DiagramCombination, usize) {
    let mut out = DiagramCombination::new();
    let mut pruned_count = 0usize;
    for forest in all_forests(g, scale, false) {
        let sign = if forest.len() % 2 == 0 { -1i64 } else { 1 };
        let mut extracted = Vec::new();
        let mut ok = true;
        for gamma in &forest.members {
            let children = forest.children_of(gamma);
            let piece_full = standalone(g, gamma);
            // re-express the children in the standalone labelling
            let child_subs: Vec<SubDiagram> = children
                .iter()
                .map(|c| SubDiagram {
                    edges: c
                        .edges
                        .iter()
                        .map(|&ge| gamma.edges.iter().position(|&x| x == ge).unwrap() as u32)
                        .collect(),
                })
                .collect();
            let refs: Vec<&SubDiagram> = child_subs.iter().collect();
            let piece = contract_parts(&piece_full, &refs);
            if has_bridge(&piece) {
                ok = false;
                break;
            }
            if taylor_order(g, gamma, scale) >= 2 {
                let (_, pruned) = extract_contract(g, gamma, 2, params.d, scale);
                pruned_count += pruned.len();
            }
            extracted.push(canonical_rootless(&piece));
        }
        if !ok {
            continue;
        }
        let roots: Vec<&SubDiagram> = forest.roots();
        let residual = contract_parts(g, &roots);
        if has_bridge(&residual) {
            continue;
        }
        out.add(
            extracted,
            canonical_rootless(&residual),
            Ratio::from_integer(sign),
        );
    }
    out.purge_zeros();
    (out, pruned_count)
}

/// Σ_P over pairings of the fully reduced diagrams (residual role), with
/// one-connected values dropped.
fn tree_to_residuals(tree: &DecoratedTree) -> Vec<(CanonicalDiagram, Rational)> {
    let mut out: BTreeMap<CanonicalDiagram, Rational> = BTreeMap::new();
    for pairing in pairings(tree).expect("even leaves") {
        let g = build_diagram(tree, &pairing).expect("buildable");
        let red = reduce(&g).expect("reducible");
        if red.diagram.n_vertices > 0 && has_bridge(&red.diagram) {
            continue;
        }
        *out.entry(canonical_rootless(&red.diagram))
            .or_insert_with(Ratio::zero) += red.prefactor;
    }
    out.into_iter().filter(|(_, c)| !c.is_zero()).collect()
}

/// Σ_P over pairings of the leaf-merged diagrams (factor role): this is
/// the embedded form in which extracted subdiagrams sit inside a reduced
/// diagram.
fn tree_to_factors(tree: &DecoratedTree) -> Vec<(CanonicalDiagram, Rational)> {
    let mut out: BTreeMap<CanonicalDiagram, Rational> = BTreeMap::new();
    for pairing in pairings(tree).expect("even leaves") {
        let g = build_diagram(tree, &pairing).expect("buildable");
        let lm = leaf_merge(&g).expect("mergeable");
        if has_bridge(&lm.diagram) {
            continue;
        }
        *out.entry(canonical_rootless(&lm.diagram))
            .or_insert_with(Ratio::zero) += lm.prefactor;
    }
    out.into_iter().filter(|(_, c)| !c.is_zero()).collect()
}

/// Checks that Σ_P of the diagram antipode of Γ(τ,P) equals the tree
/// antipode of τ pushed to diagram level, as merged combinations.
pub fn cross_check_tree_vs_diagram(tree: &DecoratedTree, params: &ModelParams) -> bool {
    let (lhs, rhs) = cross_check_parts(tree, params);
    lhs == rhs
}

/// Both sides of the cross-check, for reporting.
pub fn cross_check_parts(
    tree: &DecoratedTree,
    params: &ModelParams,
) -> (DiagramCombination, DiagramCombination) {
    let scale = params.scale();

    let mut lhs = DiagramCombination::new();
    for term in twisted_antipode(tree, params) {
        let mut partials: Vec<(Vec<CanonicalDiagram>, Rational)> =
            vec![(Vec::new(), Ratio::from_integer(term.coefficient))];
        for factor in &term.factors {
            let choices = tree_to_factors(factor);
            let mut next = Vec::new();
            for (fs, c) in &partials {
                for (canon, w) in &choices {
                    let mut nfs = fs.clone();
                    nfs.push(canon.clone());
                    next.push((nfs, *c * *w));
                }
            }
            partials = next;
        }
        for (residual, w) in tree_to_residuals(&term.contracted) {
            for (fs, c) in &partials {
                lhs.add(fs.clone(), residual.clone(), *c * w);
            }
        }
    }
    lhs.purge_zeros();

    let mut rhs = DiagramCombination::new();
    for pairing in pairings(tree).expect("even leaves") {
        let g = build_diagram(tree, &pairing).expect("buildable");
        let red = reduce(&g).expect("reducible");
        if red.diagram.n_vertices > 0 && has_bridge(&red.diagram) {
            continue;
        }
        let anti = antipode_diagrams(&red.diagram, scale);
        rhs.merge_from(&anti.scaled(red.prefactor));
    }
    rhs.purge_zeros();

    (lhs, rhs)
}

/// Fixed reference diagrams used in tests, the acceptance suite and the
/// documentation: the eight-leaf comb paired so that three disjoint
/// bubbles appear, and paired so that a nested chain appears.
pub mod fixtures {
    use super::*;
    use crate::tree::parse_tree;

    /// The comb tree with p leaves: every generation below the root has
    /// exactly two individuals.
    pub fn comb_tree(p: usize) -> DecoratedTree {
        assert!(p >= 2);
        let mut expr = alloc::string::String::from("(* (I Xi) (I Xi))");
        for _ in 2..p {
            expr = alloc::format!("(* (I Xi) (I {expr}))");
        }
        parse_tree(&expr, 3).unwrap()
    }

    /// The comb with its leaf positions sorted by depth (shallowest
    /// first).
    pub fn comb_leaf_positions(p: usize) -> (DecoratedTree, Vec<u32>) {
        let tree = comb_tree(p);
        let it = crate::tree::IndexedTree::new(&tree);
        let leaves = it.leaves();
        let mut by_depth: Vec<(usize, u32)> = leaves
            .iter()
            .enumerate()
            .map(|(pos, &node)| {
                let mut depth = 0;
                let mut cur = node;
                while let Some(parent) = it.nodes[cur as usize].parent {
                    depth += 1;
                    cur = parent;
                }
                (depth, pos as u32)
            })
            .collect();
        by_depth.sort();
        (tree, by_depth.into_iter().map(|(_, pos)| pos).collect())
    }

    /// Pairing of the 8-leaf comb yielding three disjoint bubbles.
    pub fn disjoint_pairing() -> (DecoratedTree, crate::diagram::Pairing) {
        let (tree, order) = comb_leaf_positions(8);
        let pairing = vec![
            (order[0], order[7]),
            (order[1], order[2]),
            (order[3], order[4]),
            (order[5], order[6]),
        ];
        (tree, pairing)
    }

    /// Pairing of the 8-leaf comb yielding a nested divergence chain.
    pub fn nested_pairing() -> (DecoratedTree, crate::diagram::Pairing) {
        let (tree, order) = comb_leaf_positions(8);
        let pairing = vec![
            (order[0], order[7]),
            (order[1], order[6]),
            (order[2], order[5]),
            (order[3], order[4]),
        ];
        (tree, pairing)
    }

    /// Γ(comb₈, P₁) reduced: three disjoint divergent bubbles.
    pub fn disjoint_bubbles() -> FeynmanDiagram {
        let (tree, pairing) = disjoint_pairing();
        reduce(&build_diagram(&tree, &pairing).unwrap())
            .unwrap()
            .diagram
    }

    /// Γ(comb₈, P₂) reduced: a bubble nested inside a larger divergence.
    pub fn nested_bubbles() -> FeynmanDiagram {
        let (tree, pairing) = nested_pairing();
        reduce(&build_diagram(&tree, &pairing).unwrap())
            .unwrap()
            .diagram
    }

    /// The two-edge bubble and the five-edge divergence containing it,
    /// as subdiagrams of `nested_bubbles()`.
    pub fn nested_gammas(g: &FeynmanDiagram, scale: DegreeScale) -> (SubDiagram, SubDiagram) {
        let divs = divergent_subdiagrams(g, scale, true);
        let bubble = divs.iter().find(|s| s.edges.len() == 2).unwrap().clone();
        let outer = divs.iter().find(|s| s.edges.len() == 5).unwrap().clone();
        (bubble, outer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::EdgeType;
    use crate::params::parse_rational;
    use crate::tree::parse_tree;

    fn params(d: u32, rho: &str) -> ModelParams {
        ModelParams::new(d, parse_rational(rho).unwrap()).unwrap()
    }

    fn lone_bubble() -> FeynmanDiagram {
        FeynmanDiagram::new(
            2,
            Some(0),
            vec![
                DiagEdge::new(1, 0, EdgeType::K),
                DiagEdge::new(0, 1, EdgeType::GKeps),
            ],
        )
    }

    #[test]
    fn forest_counts_on_reference_diagrams() {
        // three disjoint bubbles: 2³ = 8 forests (ρ chosen so only the
        // bubbles are divergent)
        let p = params(3, "1.3");
        let g1 = fixtures::disjoint_bubbles();
        let divs = divergent_subdiagrams(&g1, p.scale(), false);
        assert_eq!(divs.len(), 3);
        assert!(divs.iter().all(|s| s.edges.len() == 2));
        assert_eq!(all_forests(&g1, p.scale(), false).len(), 8);

        // nested pair: 4 forests (all subsets of a chain)
        let p = params(3, "1.15");
        let g2 = fixtures::nested_bubbles();
        let divs = divergent_subdiagrams(&g2, p.scale(), false);
        assert_eq!(divs.len(), 2);
        let (inner, outer) = fixtures::nested_gammas(&g2, p.scale());
        assert!(inner.edge_set().is_subset(&outer.edge_set()));
        assert_eq!(all_forests(&g2, p.scale(), false).len(), 4);

        // a lone bubble has only the empty forest
        assert_eq!(all_forests(&lone_bubble(), p.scale(), false).len(), 1);
        assert!(crate::diagram::check_forest_property(&g1, p.scale()));
        assert!(crate::diagram::check_forest_property(&g2, p.scale()));
    }

    #[test]
    fn zimmermann_matches_antipode_on_reference_diagrams() {
        for (rho, g) in [
            ("1.15", fixtures::nested_bubbles()),
            ("1.3", fixtures::disjoint_bubbles()),
            ("1.05", fixtures::nested_bubbles()),
            ("1.05", fixtures::disjoint_bubbles()),
        ] {
            let p = params(3, rho);
            let (z, _) = zimmermann(&g, &p, p.scale());
            let a = antipode_diagrams(&g, p.scale());
            assert_eq!(z, a, "mismatch at rho={rho}");
        }
    }

    #[test]
    fn zimmermann_term_structure() {
        // nested pair: −Γ + Ĉ_{γ₁}Γ + Ĉ_{γ₂}Γ − Ĉ_{γ₁}Ĉ_{γ₂}Γ
        let p = params(3, "1.15");
        let g2 = fixtures::nested_bubbles();
        let (z, pruned) = zimmermann(&g2, &p, p.scale());
        assert_eq!(pruned, 0);
        let terms = z.terms();
        assert_eq!(terms.len(), 4);
        for t in &terms {
            let n = t.extracted.len();
            let sign = if (n + 1) % 2 == 0 { 1 } else { -1 };
            assert_eq!(t.coefficient, Ratio::from_integer(sign));
        }

        // a divergence-free diagram: −Γ only
        let (z, _) = zimmermann(&lone_bubble(), &p, p.scale());
        let terms = z.terms();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].coefficient, Ratio::from_integer(-1));
        assert!(terms[0].extracted.is_empty());

        // three disjoint bubbles: the 8 forests stay distinct, because
        // the residuals sit at inequivalent positions relative to the
        // oriented composite edge of the ring
        let p = params(3, "1.3");
        let g1 = fixtures::disjoint_bubbles();
        let (z, _) = zimmermann(&g1, &p, p.scale());
        assert_eq!(z.terms().len(), 8);
        let by_count = |n: usize| {
            z.terms()
                .iter()
                .filter(|t| t.extracted.len() == n)
                .count()
        };
        assert_eq!((by_count(0), by_count(1), by_count(2), by_count(3)), (1, 3, 3, 1));
    }

    #[test]
    fn inclusion_exclusion_on_three_commuting_extractions() {
        // Π(id − C_i)Γ = Σ_B (−1)^{|B|} Π_{i∈B} C_i Γ on the three
        // disjoint bubbles
        let p = params(3, "1.3");
        let g = fixtures::disjoint_bubbles();
        let divs = divergent_subdiagrams(&g, p.scale(), false);
        assert_eq!(divs.len(), 3);
        let term_for = |members: &[&SubDiagram], sign: i64| {
            let extracted: Vec<CanonicalDiagram> = members
                .iter()
                .map(|m| canonical_rootless(&standalone(&g, m)))
                .collect();
            let residual = contract_parts(&g, members);
            (extracted, canonical_rootless(&residual), sign)
        };
        let mut rhs = DiagramCombination::new();
        for mask in 0u8..8 {
            let members: Vec<&SubDiagram> = (0..3)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &divs[i])
                .collect();
            let sign = if members.len() % 2 == 0 { 1 } else { -1 };
            let (e, r, s) = term_for(&members, sign);
            rhs.add(e, r, Ratio::from_integer(s));
        }
        // sequential expansion of Π(id − C_i)
        let mut states: Vec<(Vec<usize>, i64)> = vec![(vec![], 1)];
        for i in 0..3 {
            let mut next = Vec::new();
            for (taken, sign) in &states {
                next.push((taken.clone(), *sign));
                let mut t = taken.clone();
                t.push(i);
                next.push((t, -sign));
            }
            states = next;
        }
        let mut lhs = DiagramCombination::new();
        for (taken, sign) in states {
            let members: Vec<&SubDiagram> = taken.iter().map(|&i| &divs[i]).collect();
            let (e, r, s) = term_for(&members, sign);
            lhs.add(e, r, Ratio::from_integer(s));
        }
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn extract_contract_basics() {
        let p = params(3, "1.15");
        let g2 = fixtures::nested_bubbles();
        let (inner, _) = fixtures::nested_gammas(&g2, p.scale());
        assert_eq!(taylor_order(&g2, &inner, p.scale()), 1);
        let (combo, pruned) = extract_contract(&g2, &inner, 1, p.d, p.scale());
        assert!(pruned.is_empty());
        let terms = combo.terms();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].coefficient, Ratio::from_integer(1));
        assert_eq!(terms[0].extracted.len(), 1);

        // degree additivity: extracted + residual = whole
        let residual = contract_parts(&g2, &[&inner]);
        assert_eq!(
            inner.degree(&g2, p.scale()) + residual.degree(p.scale()),
            g2.degree(p.scale())
        );

        // C_γ on Γ = γ: single-vertex residual
        let bubble = lone_bubble();
        let whole = SubDiagram { edges: vec![0, 1] };
        let res = contract_parts(&bubble, &[&whole]);
        assert_eq!(res.n_vertices, 1);
        assert!(res.edges.is_empty());
    }

    #[test]
    fn taylor_companions_generated_then_pruned_in_d5() {
        // d = 5, ρ = 1.7: the bubble has degree 2ρ−d = −1.6, so N(γ) = 2
        let p = params(5, "1.7");
        let g2 = fixtures::nested_bubbles();
        let (inner, _) = fixtures::nested_gammas(&g2, p.scale());
        let n = taylor_order(&g2, &inner, p.scale());
        assert_eq!(n, 2);
        let (combo, pruned) = extract_contract(&g2, &inner, n, p.d, p.scale());
        assert_eq!(combo.terms().len(), 1);
        // two boundary edges × d spatial coordinates
        assert_eq!(pruned.len(), 2 * 5);
        for c in &pruned {
            assert!(c.odd_coordinate >= 1 && c.odd_coordinate <= 5);
            assert!(!c.extracted.node_dec.is_empty());
        }
        let (_, count) = zimmermann(&g2, &p, p.scale());
        assert!(count > 0);
    }

    #[test]
    fn cross_check_cherry_and_comb6() {
        let p = params(3, "1.05");
        let cherry = parse_tree("(* (I Xi)(I Xi))", 3).unwrap();
        assert!(cross_check_tree_vs_diagram(&cherry, &p));
        let comb6 = parse_tree(
            "(* (I (* (I (* (I Xi)(I Xi))) (I Xi))) (I (* (I (* (I Xi)(I Xi))) (I Xi))))",
            3,
        )
        .unwrap();
        assert!(cross_check_tree_vs_diagram(&comb6, &p));
    }

    #[test]
    fn cross_check_caterpillar_with_nesting() {
        // the 6-leaf comb (deep caterpillar) exercises nested extraction
        let p = params(3, "1.05");
        let cat6 = fixtures::comb_tree(6);
        assert!(cross_check_tree_vs_diagram(&cat6, &p));
    }
}
