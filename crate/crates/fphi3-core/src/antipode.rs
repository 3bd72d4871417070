//! The reduced twisted antipode on trees.
//!
//! On the quotient by the kernel of E the twisted antipode collapses to an
//! extraction–contraction recursion: Ã⁻τ = −τ − Σ Ã⁻(τ₁·…·τ_n)·τ/(τ₁·…·τ_n),
//! where the sum runs over nonempty subforests of pairwise node-disjoint
//! divergent subtrees. Subforests are enumerated on embedded node sets of
//! the ambient tree, which is what produces embedding multiplicities.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Zero;

use crate::params::{ModelParams, Rational};
use crate::tree::{DecoratedTree, IndexedTree, TreeClass};

/// An embedded subtree: the root node id and the bitmask of member nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubtreeHandle {
    pub root: u32,
    pub mask: u64,
}

/// One term of the expanded antipode: coefficient × (forest of non-root
/// trees) × (root component). Directly-extracted factors have strictly
/// negative degree; nested contractions of extracted factors can have any
/// degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeForestTerm {
    pub factors: Vec<DecoratedTree>,
    pub contracted: DecoratedTree,
    pub coefficient: i64,
}

/// All embedded subtrees τ̄ that are almost-full, have an even number of
/// leaves, strictly negative κ=0 degree, and do not contain the root.
/// Every leaf of τ̄ is a noise leaf of τ.
pub fn divergent_subtrees(tree: &DecoratedTree, params: &ModelParams) -> Vec<SubtreeHandle> {
    let it = IndexedTree::new(tree);
    divergent_subtrees_indexed(&it, params)
}

pub(crate) fn divergent_subtrees_indexed(
    it: &IndexedTree,
    params: &ModelParams,
) -> Vec<SubtreeHandle> {
    assert!(it.len() <= 64, "tree too large for bitmask handles");
    let scale = params.scale();
    let mut out = Vec::new();
    for root in 1..it.len() as u32 {
        if it.nodes[root as usize].noise {
            continue;
        }
        // grow all connected node sets below `root` whose minimal nodes
        // are noise leaves, tracking out-degree defects as we go
        let mut stack: Vec<(Vec<u32>, u64)> = vec![(vec![root], 1u64 << root)];
        let mut sets: Vec<u64> = Vec::new();
        while let Some((frontier, mask)) = stack.pop() {
            if frontier.is_empty() {
                sets.push(mask);
                continue;
            }
            let mut frontier = frontier;
            let node = frontier.pop().unwrap();
            let children = &it.nodes[node as usize].children;
            if it.nodes[node as usize].noise {
                stack.push((frontier, mask));
                continue;
            }
            // every non-leaf member keeps a nonempty child subset
            let m = children.len();
            for choice in 1u32..(1 << m) {
                let mut fr = frontier.clone();
                let mut msk = mask;
                for (j, &c) in children.iter().enumerate() {
                    if choice & (1 << j) != 0 {
                        fr.push(c);
                        msk |= 1u64 << c;
                    }
                }
                stack.push((fr, msk));
            }
        }
        for mask in sets {
            let sub = it.subtree(root, mask);
            if sub.classify() != TreeClass::AlmostFull || sub.is_planted() {
                continue;
            }
            if sub.p_leaves() % 2 != 0 {
                continue;
            }
            if sub.degree_exact(scale) >= Rational::zero() {
                continue;
            }
            // exactly one continuation edge must leave the embedded set,
            // so that contraction leaves a node of out-degree one; with
            // zero continuations the contracted tree carries a childless
            // non-noise node and its expectation vanishes
            let leaving: usize = (0..it.len() as u32)
                .filter(|&v| mask & (1u64 << v) != 0)
                .map(|v| {
                    it.nodes[v as usize]
                        .children
                        .iter()
                        .filter(|&&c| mask & (1u64 << c) == 0)
                        .count()
                })
                .sum();
            if leaving != 1 {
                continue;
            }
            out.push(SubtreeHandle { root, mask });
        }
    }
    out.sort();
    out
}

/// All nonempty sets of pairwise node-disjoint divergent subtrees.
pub fn admissible_subforests(tree: &DecoratedTree, params: &ModelParams) -> Vec<Vec<SubtreeHandle>> {
    let it = IndexedTree::new(tree);
    let handles = divergent_subtrees_indexed(&it, params);
    let mut out = Vec::new();
    let mut current: Vec<SubtreeHandle> = Vec::new();
    fn go(
        handles: &[SubtreeHandle],
        from: usize,
        used: u64,
        current: &mut Vec<SubtreeHandle>,
        out: &mut Vec<Vec<SubtreeHandle>>,
    ) {
        for i in from..handles.len() {
            let h = handles[i];
            if used & h.mask != 0 {
                continue;
            }
            current.push(h);
            out.push(current.clone());
            go(handles, i + 1, used | h.mask, current, out);
            current.pop();
        }
    }
    go(&handles, 0, 0, &mut current, &mut out);
    out.sort();
    out
}

/// Contracts each subtree of the forest to a single node. Handles must be
/// pairwise disjoint. The contracted node keeps the subtree's outgoing
/// continuation edge, so it has out-degree 1.
pub fn contract(tree: &DecoratedTree, forest: &[SubtreeHandle]) -> DecoratedTree {
    let it = IndexedTree::new(tree);
    contract_indexed(&it, forest)
}

pub(crate) fn contract_indexed(it: &IndexedTree, forest: &[SubtreeHandle]) -> DecoratedTree {
    let mut used = 0u64;
    for h in forest {
        assert_eq!(used & h.mask, 0, "overlapping handles");
        used |= h.mask;
    }
    use crate::index::MultiIndex;
    use crate::tree::Node;
    // rebuilds the tree, collapsing each handle's node set to one node
    fn build(it: &IndexedTree, id: u32, forest: &[SubtreeHandle]) -> Node {
        if let Some(h) = forest.iter().find(|h| h.root == id) {
            // gather continuation edges leaving the collapsed set
            let mut kids = Vec::new();
            for m in 0..64u32 {
                if h.mask & (1u64 << m) == 0 {
                    continue;
                }
                for &c in &it.nodes[m as usize].children {
                    if h.mask & (1u64 << c) == 0 {
                        kids.push((it.nodes[c as usize].edge_dec.clone(), build(it, c, forest)));
                    }
                }
            }
            return Node {
                noise: false,
                dec: MultiIndex::zero(),
                children: kids,
            };
        }
        let n = &it.nodes[id as usize];
        let children = n
            .children
            .iter()
            .map(|&c| (it.nodes[c as usize].edge_dec.clone(), build(it, c, forest)))
            .collect();
        Node {
            noise: n.noise,
            dec: n.dec.clone(),
            children,
        }
    }
    DecoratedTree::from_node(build(it, 0, forest))
}

/// Extracted factor of a handle as a standalone canonical tree.
pub fn extract(tree: &DecoratedTree, handle: SubtreeHandle) -> DecoratedTree {
    let it = IndexedTree::new(tree);
    it.subtree(handle.root, handle.mask)
}

/// Full recursive expansion of the reduced twisted antipode, terms merged.
pub fn twisted_antipode(tree: &DecoratedTree, params: &ModelParams) -> Vec<TreeForestTerm> {
    let mut memo: BTreeMap<DecoratedTree, Vec<TreeForestTerm>> = BTreeMap::new();
    antipode_memo(tree, params, &mut memo, 0)
}

const MAX_RECURSION: usize = 64;

fn antipode_memo(
    tree: &DecoratedTree,
    params: &ModelParams,
    memo: &mut BTreeMap<DecoratedTree, Vec<TreeForestTerm>>,
    depth: usize,
) -> Vec<TreeForestTerm> {
    assert!(depth < MAX_RECURSION, "antipode recursion too deep");
    if let Some(terms) = memo.get(tree) {
        return terms.clone();
    }
    let it = IndexedTree::new(tree);
    let handles = divergent_subtrees_indexed(&it, params);

    // terms: start from −τ
    let mut acc: BTreeMap<(Vec<DecoratedTree>, DecoratedTree), i64> = BTreeMap::new();
    acc.insert((Vec::new(), tree.clone()), -1);

    // Σ over nonempty disjoint subforests of Ã(τ₁·…·τ_n)·τ/(forest)
    let mut current: Vec<SubtreeHandle> = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        it: &IndexedTree,
        handles: &[SubtreeHandle],
        from: usize,
        used: u64,
        current: &mut Vec<SubtreeHandle>,
        params: &ModelParams,
        memo: &mut BTreeMap<DecoratedTree, Vec<TreeForestTerm>>,
        depth: usize,
        acc: &mut BTreeMap<(Vec<DecoratedTree>, DecoratedTree), i64>,
    ) {
        for i in from..handles.len() {
            let h = handles[i];
            if used & h.mask != 0 {
                continue;
            }
            current.push(h);
            emit(it, current, params, memo, depth, acc);
            recurse(
                it,
                handles,
                i + 1,
                used | h.mask,
                current,
                params,
                memo,
                depth,
                acc,
            );
            current.pop();
        }
    }
    // one subforest: multiply the factor antipodes and attach the residue
    fn emit(
        it: &IndexedTree,
        forest: &[SubtreeHandle],
        params: &ModelParams,
        memo: &mut BTreeMap<DecoratedTree, Vec<TreeForestTerm>>,
        depth: usize,
        acc: &mut BTreeMap<(Vec<DecoratedTree>, DecoratedTree), i64>,
    ) {
        let residue = contract_indexed(it, forest);
        // product over factors of their antipode expansions
        let mut product: Vec<(Vec<DecoratedTree>, i64)> = vec![(Vec::new(), 1)];
        for h in forest {
            let factor = it.subtree(h.root, h.mask);
            let expansion = antipode_memo(&factor, params, memo, depth + 1);
            let mut next = Vec::new();
            for (trees, coeff) in &product {
                for term in &expansion {
                    let mut ts = trees.clone();
                    ts.extend(term.factors.iter().cloned());
                    ts.push(term.contracted.clone());
                    next.push((ts, coeff * term.coefficient));
                }
            }
            product = next;
        }
        for (mut trees, coeff) in product {
            trees.sort();
            // outer minus sign of the defining recursion
            *acc.entry((trees, residue.clone())).or_insert(0) -= coeff;
        }
    }
    recurse(
        &it, &handles, 0, 0, &mut current, params, memo, depth, &mut acc,
    );

    let terms: Vec<TreeForestTerm> = acc
        .into_iter()
        .filter(|(_, c)| *c != 0)
        .map(|((factors, contracted), coefficient)| TreeForestTerm {
            factors,
            contracted,
            coefficient,
        })
        .collect();
    memo.insert(tree.clone(), terms.clone());
    terms
}

/// Independent Hopf-style consistency check: Σ over ALL subforests
/// (empty and full included) of Ã(F)·τ/F must vanish componentwise.
/// Contracting all of τ yields the unit symbol, which multiplies as the
/// scalar 1, so the F = τ slice contributes Ã(τ) itself.
pub fn hopf_consistency(tree: &DecoratedTree, params: &ModelParams) -> bool {
    let it = IndexedTree::new(tree);
    let handles = divergent_subtrees_indexed(&it, params);
    let mut memo = BTreeMap::new();
    let mut acc: BTreeMap<(Vec<DecoratedTree>, DecoratedTree), i64> = BTreeMap::new();
    // F = 1 term: Ã(1)·τ = τ
    *acc.entry((Vec::new(), tree.clone())).or_insert(0) += 1;
    // F = τ term: Ã(τ)·1
    for term in antipode_memo(tree, params, &mut memo, 0) {
        *acc.entry((term.factors, term.contracted)).or_insert(0) += term.coefficient;
    }
    // proper subforests, enumerated independently of the recursion
    let mut all_forests: Vec<Vec<SubtreeHandle>> = Vec::new();
    let mut current = Vec::new();
    fn collect(
        handles: &[SubtreeHandle],
        from: usize,
        used: u64,
        current: &mut Vec<SubtreeHandle>,
        out: &mut Vec<Vec<SubtreeHandle>>,
    ) {
        for i in from..handles.len() {
            let h = handles[i];
            if used & h.mask != 0 {
                continue;
            }
            current.push(h);
            out.push(current.clone());
            collect(handles, i + 1, used | h.mask, current, out);
            current.pop();
        }
    }
    collect(&handles, 0, 0, &mut current, &mut all_forests);
    for forest in all_forests {
        let residue = contract_indexed(&it, &forest);
        let mut product: Vec<(Vec<DecoratedTree>, i64)> = vec![(Vec::new(), 1)];
        for h in &forest {
            let factor = it.subtree(h.root, h.mask);
            let expansion = antipode_memo(&factor, params, &mut memo, 0);
            let mut next = Vec::new();
            for (trees, coeff) in &product {
                for term in &expansion {
                    let mut ts = trees.clone();
                    ts.extend(term.factors.iter().cloned());
                    ts.push(term.contracted.clone());
                    next.push((ts, coeff * term.coefficient));
                }
            }
            product = next;
        }
        for (mut trees, coeff) in product {
            trees.sort();
            *acc.entry((trees, residue.clone())).or_insert(0) += coeff;
        }
    }
    acc.values().all(|&c| c == 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::parse_rational;
    use crate::tree::parse_tree;

    fn params(d: u32, rho: &str) -> ModelParams {
        ModelParams::new(d, parse_rational(rho).unwrap()).unwrap()
    }

    fn comb6() -> DecoratedTree {
        // τ = [I(I(I(Ξ)²) I(Ξ))]², the six-leaf tree of the worked antipode
        parse_tree(
            "(* (I (* (I (* (I Xi)(I Xi))) (I Xi))) (I (* (I (* (I Xi)(I Xi))) (I Xi))))",
            3,
        )
        .unwrap()
    }

    fn bubble_tree() -> DecoratedTree {
        parse_tree("(* (I (I Xi)) (I Xi))", 3).unwrap()
    }

    #[test]
    fn cherry_has_no_divergent_subtrees() {
        let p = params(3, "1.05");
        let cherry = parse_tree("(* (I Xi)(I Xi))", 3).unwrap();
        assert!(divergent_subtrees(&cherry, &p).is_empty());
        assert!(admissible_subforests(&cherry, &p).is_empty());
        let terms = twisted_antipode(&cherry, &p);
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].coefficient, -1);
        assert!(terms[0].factors.is_empty());
        assert_eq!(terms[0].contracted, cherry);
    }

    #[test]
    fn comb6_has_four_embedded_bubbles() {
        let p = params(3, "1.05");
        let handles = divergent_subtrees(&comb6(), &p);
        assert_eq!(handles.len(), 4);
        for h in &handles {
            assert_eq!(extract(&comb6(), *h), bubble_tree());
        }
        let forests = admissible_subforests(&comb6(), &p);
        assert_eq!(forests.len(), 8);
        assert_eq!(forests.iter().filter(|f| f.len() == 1).count(), 4);
        assert_eq!(forests.iter().filter(|f| f.len() == 2).count(), 4);
    }

    #[test]
    fn no_divergent_subtrees_when_d_below_2rho() {
        let p = params(3, "1.6");
        assert!(divergent_subtrees(&comb6(), &p).is_empty());
        let terms = twisted_antipode(&comb6(), &p);
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].coefficient, -1);
    }

    #[test]
    fn regular_four_leaf_tree_has_no_extractions() {
        let p = params(3, "1.01");
        let reg4 = parse_tree("(* (I (* (I Xi)(I Xi))) (I (* (I Xi)(I Xi))))", 3).unwrap();
        assert!(divergent_subtrees(&reg4, &p).is_empty());
    }

    #[test]
    fn contraction_examples() {
        let p = params(3, "1.05");
        let tau = comb6();
        let handles = divergent_subtrees(&tau, &p);
        // single extraction: almost-full 4-leaf residue I(I(Ξ))·I(I(Ξ)²)I(Ξ)-side
        let single = contract(&tau, &handles[..1]);
        assert_eq!(single.p_leaves(), 4);
        assert_eq!(single.q_edges(), 7);
        assert_eq!(single.classify(), crate::tree::TreeClass::AlmostFull);
        // empty forest: identity
        assert_eq!(contract(&tau, &[]), tau);
        // both bubbles, one per branch
        let disjoint: Vec<_> = admissible_subforests(&tau, &p)
            .into_iter()
            .find(|f| f.len() == 2)
            .unwrap();
        let double = contract(&tau, &disjoint);
        assert_eq!(double.p_leaves(), 2);
        assert_eq!(double.q_edges(), 4);
    }

    #[test]
    fn antipode_of_comb6_matches_worked_example() {
        let p = params(3, "1.05");
        let tau = comb6();
        let mut terms = twisted_antipode(&tau, &p);
        terms.sort_by_key(|t| t.factors.len());
        assert_eq!(terms.len(), 3);

        assert_eq!(terms[0].factors.len(), 0);
        assert_eq!(terms[0].contracted, tau);
        assert_eq!(terms[0].coefficient, -1);

        assert_eq!(terms[1].factors, vec![bubble_tree()]);
        assert_eq!(terms[1].coefficient, 4);
        assert_eq!(terms[1].contracted.p_leaves(), 4);

        assert_eq!(terms[2].factors, vec![bubble_tree(), bubble_tree()]);
        assert_eq!(terms[2].coefficient, -4);
        assert_eq!(terms[2].contracted.p_leaves(), 2);
    }

    #[test]
    fn degree_is_conserved_and_signs_alternate() {
        let p = params(3, "1.05");
        let scale = p.scale();
        for k in 0..=2usize {
            for tree in crate::tree::enumerate_full(k, 8).unwrap() {
                let total = tree.degree_exact(scale);
                for term in twisted_antipode(&tree, &p) {
                    let sum: Rational = term
                        .factors
                        .iter()
                        .map(|f| f.degree_exact(scale))
                        .sum::<Rational>()
                        + term.contracted.degree_exact(scale);
                    assert_eq!(sum, total);
                    // sign is (−1)^{n+1}, n = number of non-root trees
                    let n = term.factors.len();
                    assert_eq!(
                        term.coefficient.signum(),
                        if (n + 1) % 2 == 0 { 1 } else { -1 }
                    );
                }
            }
        }
    }

    #[test]
    fn expansion_is_idempotent_under_merging() {
        let p = params(3, "1.05");
        let tau = comb6();
        let a = twisted_antipode(&tau, &p);
        let b = twisted_antipode(&tau, &p);
        assert_eq!(a, b);
    }

    #[test]
    fn hopf_consistency_small_trees() {
        let p = params(3, "1.05");
        for k in 0..=2usize {
            for tree in crate::tree::enumerate_full(k, 8).unwrap() {
                assert!(hopf_consistency(&tree, &p), "failed for {tree}");
            }
        }
    }
}
