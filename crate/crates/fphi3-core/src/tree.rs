//! Decorated rooted trees: the symbols τ of the model space.
//!
//! Edges stand for the integration operator I_ρ (optionally decorated by a
//! derivative multi-index), leaves for the noise Ξ, node decorations for
//! polynomial factors X^k. Trees are kept in canonical form: at every node
//! the child edges are sorted by their rendered expression, so structural
//! equality is tree equality.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use num_rational::Ratio;
use num_traits::Zero;

use crate::index::MultiIndex;
use crate::params::{DegreeScale, ModelParams, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Node {
    pub noise: bool,
    pub dec: MultiIndex,
    /// (edge decoration, child), sorted by rendered edge expression.
    pub children: Vec<(MultiIndex, Node)>,
}

/// A decorated rooted tree in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DecoratedTree {
    pub(crate) root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TreeClass {
    Full,
    AlmostFull,
    Other,
}

impl fmt::Display for TreeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TreeClass::Full => "full",
            TreeClass::AlmostFull => "almost-full",
            TreeClass::Other => "other",
        };
        f.write_str(s)
    }
}

/// What the elementary differential Υ^F(τ)(u) evaluates to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsilonKind {
    /// Υ = coefficient (full trees).
    Constant,
    /// Υ = coefficient · u (almost-full, undecorated).
    LinearInU,
    /// Υ = coefficient · ∂_{x_i} u (almost-full with one X_i decoration).
    Gradient(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeError {
    Syntax { offset: usize, message: String },
    WrongArity { offset: usize, got: usize, want: usize },
    ResourceCap { requested: usize, cap: usize },
    NotCountertermClass,
    BadDecoration,
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::Syntax { offset, message } => {
                write!(f, "syntax error at byte {offset}: {message}")
            }
            TreeError::WrongArity { offset, got, want } => write!(
                f,
                "multi-index at byte {offset} has {got} components, expected d+1 = {want}"
            ),
            TreeError::ResourceCap { requested, cap } => {
                write!(f, "enumeration size k={requested} exceeds cap {cap}")
            }
            TreeError::NotCountertermClass => {
                write!(f, "tree is neither full nor admissible almost-full")
            }
            TreeError::BadDecoration => write!(f, "decoration not admissible for this operation"),
        }
    }
}

impl Node {
    fn leaf() -> Node {
        Node {
            noise: true,
            dec: MultiIndex::zero(),
            children: Vec::new(),
        }
    }

    fn inner(children: Vec<(MultiIndex, Node)>) -> Node {
        Node {
            noise: false,
            dec: MultiIndex::zero(),
            children,
        }
    }

    fn canonicalize(&mut self) {
        for (_, c) in self.children.iter_mut() {
            c.canonicalize();
        }
        self.children
            .sort_by(|a, b| render_edge(&a.0, &a.1).cmp(&render_edge(&b.0, &b.1)));
    }
}

fn render_edge(dec: &MultiIndex, child: &Node) -> String {
    let inner = render_node(child);
    if dec.is_zero() {
        alloc::format!("(I {inner})")
    } else if dec.total() == 1 {
        let i = dec.0.iter().position(|&k| k == 1).unwrap();
        alloc::format!("(D {i} {inner})")
    } else {
        // not reachable from the public grammar; kept total for debugging
        alloc::format!("(E {} {inner})", dec.render())
    }
}

fn render_node(n: &Node) -> String {
    let core = if n.noise {
        String::from("Xi")
    } else if n.children.is_empty() {
        String::from("1")
    } else if n.children.len() == 1 {
        render_edge(&n.children[0].0, &n.children[0].1)
    } else {
        let mut s = String::from("(*");
        for (dec, c) in &n.children {
            s.push(' ');
            s.push_str(&render_edge(dec, c));
        }
        s.push(')');
        s
    };
    if n.dec.is_zero() {
        core
    } else {
        alloc::format!("(X {} {core})", n.dec.render())
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    d: u32,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn err<T>(&self, message: &str) -> Result<T, TreeError> {
        Err(TreeError::Syntax {
            offset: self.pos,
            message: String::from(message),
        })
    }

    fn expect(&mut self, b: u8) -> Result<(), TreeError> {
        self.skip_ws();
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b {
            self.pos += 1;
            Ok(())
        } else {
            Err(TreeError::Syntax {
                offset: self.pos,
                message: alloc::format!("expected '{}'", b as char),
            })
        }
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() || b == b'(' || b == b')' || b == b'[' {
                break;
            }
            self.pos += 1;
        }
        core::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("")
    }

    fn integer(&mut self) -> Result<u32, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected integer");
        }
        core::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(TreeError::Syntax {
                offset: start,
                message: String::from("integer out of range"),
            })
    }

    fn multiindex(&mut self) -> Result<MultiIndex, TreeError> {
        self.skip_ws();
        let open = self.pos;
        self.expect(b'[')?;
        let mut comps = Vec::new();
        loop {
            comps.push(self.integer()?);
            self.skip_ws();
            match self.bytes.get(self.pos) {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                _ => return self.err("expected ',' or ']'"),
            }
        }
        let want = self.d as usize + 1;
        if comps.len() != want {
            return Err(TreeError::WrongArity {
                offset: open,
                got: comps.len(),
                want,
            });
        }
        Ok(MultiIndex(comps))
    }

    /// Parses one tree expression into a node.
    fn node(&mut self) -> Result<Node, TreeError> {
        self.skip_ws();
        match self.bytes.get(self.pos) {
            Some(b'(') => {
                self.pos += 1;
                let head = self.word();
                match head {
                    "I" => {
                        let child = self.node()?;
                        self.expect(b')')?;
                        Ok(Node::inner(vec![(MultiIndex::zero(), child)]))
                    }
                    "D" => {
                        let at = self.pos;
                        let i = self.integer()? as usize;
                        if i > self.d as usize {
                            return Err(TreeError::Syntax {
                                offset: at,
                                message: alloc::format!(
                                    "derivative index {i} exceeds d = {}",
                                    self.d
                                ),
                            });
                        }
                        let child = self.node()?;
                        self.expect(b')')?;
                        Ok(Node::inner(vec![(MultiIndex::unit(i, self.d), child)]))
                    }
                    "X" => {
                        let idx = self.multiindex()?;
                        let mut child = self.node()?;
                        self.expect(b')')?;
                        if child.dec.is_zero() {
                            child.dec = idx;
                        } else {
                            let mut merged = child.dec.0.clone();
                            merged.resize(self.d as usize + 1, 0);
                            for (slot, k) in merged.iter_mut().zip(idx.0.iter()) {
                                *slot += k;
                            }
                            child.dec = MultiIndex(merged);
                        }
                        Ok(child)
                    }
                    "*" => {
                        let mut children = Vec::new();
                        loop {
                            self.skip_ws();
                            if self.bytes.get(self.pos) == Some(&b')') {
                                self.pos += 1;
                                break;
                            }
                            let at = self.pos;
                            let factor = self.node()?;
                            if factor.children.len() != 1 || !factor.dec.is_zero() {
                                return Err(TreeError::Syntax {
                                    offset: at,
                                    message: String::from(
                                        "product factors must be (I ...) or (D ...) expressions",
                                    ),
                                });
                            }
                            children.extend(factor.children);
                        }
                        if children.is_empty() {
                            return self.err("empty product");
                        }
                        Ok(Node::inner(children))
                    }
                    other => Err(TreeError::Syntax {
                        offset: self.pos,
                        message: alloc::format!("unknown operator '{other}'"),
                    }),
                }
            }
            Some(_) => {
                let at = self.pos;
                match self.word() {
                    "Xi" => Ok(Node::leaf()),
                    "1" => Ok(Node::inner(Vec::new())),
                    other => Err(TreeError::Syntax {
                        offset: at,
                        message: alloc::format!("unknown symbol '{other}'"),
                    }),
                }
            }
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parses a tree expression; the result is canonical.
pub fn parse_tree(text: &str, d: u32) -> Result<DecoratedTree, TreeError> {
    let mut p = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        d,
    };
    let mut root = p.node()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return p.err("trailing input");
    }
    root.canonicalize();
    Ok(DecoratedTree { root })
}

impl PartialOrd for DecoratedTree {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DecoratedTree {
    fn cmp(&self, other: &Self) -> Ordering {
        self.render().cmp(&other.render())
    }
}

impl fmt::Display for DecoratedTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl DecoratedTree {
    /// The single noise leaf Ξ.
    pub fn leaf() -> Self {
        DecoratedTree { root: Node::leaf() }
    }

    /// The unit symbol (a childless non-noise node), the image of a fully
    /// contracted tree.
    pub fn unit() -> Self {
        DecoratedTree {
            root: Node::inner(Vec::new()),
        }
    }

    pub fn is_unit(&self) -> bool {
        !self.root.noise && self.root.children.is_empty() && self.root.dec.is_zero()
    }

    pub(crate) fn from_node(mut root: Node) -> Self {
        root.canonicalize();
        DecoratedTree { root }
    }

    /// Canonical text form; `parse_tree ∘ render` is the identity.
    pub fn render(&self) -> String {
        render_node(&self.root)
    }

    /// Re-sorts children; public constructors already do this, so the
    /// operation is idempotent.
    pub fn canonicalize(&mut self) {
        self.root.canonicalize();
    }

    fn fold<T>(&self, f: &mut impl FnMut(&Node, Vec<T>) -> T) -> T {
        fn go<T>(n: &Node, f: &mut impl FnMut(&Node, Vec<T>) -> T) -> T {
            let kids = n.children.iter().map(|(_, c)| go(c, f)).collect();
            f(n, kids)
        }
        go(&self.root, f)
    }

    /// Number of noise leaves p.
    pub fn p_leaves(&self) -> usize {
        self.fold(&mut |n, kids: Vec<usize>| {
            kids.iter().sum::<usize>() + usize::from(n.noise)
        })
    }

    /// Number of edges q.
    pub fn q_edges(&self) -> usize {
        self.fold(&mut |n, kids: Vec<usize>| kids.iter().sum::<usize>() + n.children.len())
    }

    /// Number of non-leaf nodes, root included.
    pub fn n_inner(&self) -> usize {
        self.fold(&mut |n, kids: Vec<usize>| {
            kids.iter().sum::<usize>() + usize::from(!n.noise)
        })
    }

    /// Inner nodes whose two child edges have identical canonical encodings.
    pub fn n_sym(&self) -> usize {
        self.fold(&mut |n, kids: Vec<usize>| {
            let mut s: usize = kids.iter().sum();
            if n.children.len() == 2
                && render_edge(&n.children[0].0, &n.children[0].1)
                    == render_edge(&n.children[1].0, &n.children[1].1)
            {
                s += 1;
            }
            s
        })
    }

    /// Order of the tree symmetry group, S(τ) = 2^{n_sym}.
    pub fn symmetry_factor(&self) -> u64 {
        1u64 << self.n_sym()
    }

    pub fn classify(&self) -> TreeClass {
        let mut unary = 0usize;
        let mut bad = false;
        self.fold(&mut |n, _: Vec<()>| {
            match n.children.len() {
                0 => {
                    if !n.noise {
                        bad = true;
                    }
                }
                1 => unary += 1,
                2 => {}
                _ => bad = true,
            }
            if n.noise && !n.children.is_empty() {
                bad = true;
            }
        });
        if bad {
            TreeClass::Other
        } else {
            match unary {
                0 => TreeClass::Full,
                1 => TreeClass::AlmostFull,
                _ => TreeClass::Other,
            }
        }
    }

    /// True iff the root has out-degree exactly 1.
    pub fn is_planted(&self) -> bool {
        self.root.children.len() == 1
    }

    fn decoration_totals(&self) -> (MultiIndexSums, MultiIndexSums) {
        let mut nodes = MultiIndexSums::default();
        let mut edges = MultiIndexSums::default();
        self.fold(&mut |n, _: Vec<()>| {
            nodes.add(&n.dec);
            for (dec, _) in &n.children {
                edges.add(dec);
            }
        });
        (nodes, edges)
    }

    /// Degree at κ = 0, exact in the given scale.
    pub fn degree_exact(&self, scale: DegreeScale) -> Rational {
        let p = self.p_leaves() as i64;
        let q = self.q_edges() as i64;
        let (nd, ed) = self.decoration_totals();
        // (−(ρ+d)/2)p + ρq + |k|_s − |ℓ|_s
        let per_d = Ratio::new(-p, 2);
        let per_rho = Ratio::new(-p, 2)
            + Ratio::from_integer(q)
            + Ratio::from_integer(nd.time - ed.time);
        let plain = Ratio::from_integer(nd.spatial - ed.spatial);
        scale.eval(per_d, per_rho, plain)
    }

    /// Degree including the κ offset, as a float.
    pub fn degree(&self, params: &ModelParams) -> f64 {
        let exact = self.degree_exact(params.scale());
        crate::params::ratio_to_f64(exact) - params.kappa * self.p_leaves() as f64
    }

    /// Υ^F(τ), the elementary differential produced by F(u,ξ) = u² + ξ.
    pub fn upsilon(&self) -> Result<(UpsilonKind, u64), TreeError> {
        #[derive(Clone, Copy)]
        enum St {
            Const(u64),
            U(u64),
            Du(u32, u64),
        }
        fn go(n: &Node) -> Result<St, TreeError> {
            if n.noise {
                return if n.dec.is_zero() {
                    Ok(St::Const(1))
                } else {
                    Err(TreeError::BadDecoration)
                };
            }
            let mut coeff = 1u64;
            let mut linear = 0usize;
            let mut grad: Option<u32> = None;
            for (edec, c) in &n.children {
                if !edec.is_zero() {
                    // ∂_{∂u} F = 0: derivative edges never reach Υ^F
                    return Err(TreeError::BadDecoration);
                }
                match go(c)? {
                    St::Const(k) => coeff *= k,
                    St::U(k) => {
                        coeff *= k;
                        linear += 1;
                    }
                    St::Du(i, k) => {
                        coeff *= k;
                        linear += 1;
                        grad = Some(i);
                    }
                }
            }
            if linear > 1 {
                return Err(TreeError::NotCountertermClass);
            }
            // ∂^k ∂_u^m u² for m children
            let m = n.children.len();
            let dec_spatial = if n.dec.is_zero() {
                None
            } else {
                let (t, s) = n.dec.scaled_size_parts();
                if t != 0 || s != 1 {
                    return Err(TreeError::BadDecoration);
                }
                Some(n.dec.0.iter().position(|&k| k == 1).unwrap() as u32)
            };
            match (m, dec_spatial) {
                (2, None) => Ok(if linear == 1 {
                    match grad {
                        None => St::U(2 * coeff),
                        Some(i) => St::Du(i, 2 * coeff),
                    }
                } else {
                    St::Const(2 * coeff)
                }),
                (1, None) => {
                    if linear == 1 {
                        return Err(TreeError::NotCountertermClass);
                    }
                    Ok(St::U(2 * coeff))
                }
                (1, Some(i)) => {
                    if linear == 1 {
                        return Err(TreeError::NotCountertermClass);
                    }
                    Ok(St::Du(i, 2 * coeff))
                }
                // ∂^k of a constant (m = 2) vanishes; m = 0 or ≥ 3 is
                // outside the counterterm classes
                _ => Err(TreeError::NotCountertermClass),
            }
        }
        if self.classify() == TreeClass::Other {
            return Err(TreeError::NotCountertermClass);
        }
        match go(&self.root)? {
            St::Const(k) => Ok((UpsilonKind::Constant, k)),
            St::U(k) => Ok((UpsilonKind::LinearInU, k)),
            St::Du(i, k) => Ok((UpsilonKind::Gradient(i), k)),
        }
    }

    /// Membership in the kernel ideal I_E: odd leaves, planted, or an X_i
    /// node decoration with no matching ∂_{x_i}I_ρ edge.
    pub fn in_kernel_of_e(&self) -> bool {
        if self.p_leaves() % 2 == 1 || self.is_planted() {
            return true;
        }
        let (nd, ed) = self.decoration_totals();
        for i in 0..nd.per_component.len().max(ed.per_component.len()) {
            if i == 0 {
                continue; // time decorations X_0 do not enter the parity rule
            }
            let n_i = nd.per_component.get(i).copied().unwrap_or(0);
            let e_i = ed.per_component.get(i).copied().unwrap_or(0);
            if n_i > 0 && e_i == 0 {
                return true;
            }
        }
        false
    }
}

#[derive(Default)]
struct MultiIndexSums {
    time: i64,
    spatial: i64,
    per_component: Vec<i64>,
}

impl MultiIndexSums {
    fn add(&mut self, idx: &MultiIndex) {
        let (t, s) = idx.scaled_size_parts();
        self.time += t;
        self.spatial += s;
        if self.per_component.len() < idx.0.len() {
            self.per_component.resize(idx.0.len(), 0);
        }
        for (slot, &k) in self.per_component.iter_mut().zip(idx.0.iter()) {
            *slot += k as i64;
        }
    }
}

/// Wedderburn–Etherington number: unordered full binary trees with p leaves.
pub fn wedderburn_etherington(p: usize) -> u128 {
    assert!(p >= 1);
    let mut w = vec![0u128; p + 1];
    w[1] = 1;
    for n in 2..=p {
        let mut total = 0u128;
        for i in 1..=(n - 1) / 2 {
            total += w[i] * w[n - i];
        }
        if n % 2 == 0 {
            let h = w[n / 2];
            total += h * (h + 1) / 2;
        }
        w[n] = total;
    }
    w[p]
}

fn full_shapes(p: usize, memo: &mut BTreeMap<usize, Vec<Node>>) -> Vec<Node> {
    if let Some(v) = memo.get(&p) {
        return v.clone();
    }
    let out = if p == 1 {
        vec![Node::leaf()]
    } else {
        let mut out = Vec::new();
        for a in 1..=p / 2 {
            let left = full_shapes(a, memo);
            let right = full_shapes(p - a, memo);
            for (i, l) in left.iter().enumerate() {
                for (j, r) in right.iter().enumerate() {
                    if 2 * a == p && j < i {
                        continue;
                    }
                    let mut n = Node::inner(vec![
                        (MultiIndex::zero(), l.clone()),
                        (MultiIndex::zero(), r.clone()),
                    ]);
                    n.canonicalize();
                    out.push(n);
                }
            }
        }
        out
    };
    memo.insert(p, out.clone());
    out
}

fn almost_full_shapes(
    p: usize,
    full_memo: &mut BTreeMap<usize, Vec<Node>>,
    memo: &mut BTreeMap<usize, Vec<Node>>,
) -> Vec<Node> {
    if let Some(v) = memo.get(&p) {
        return v.clone();
    }
    let mut out = Vec::new();
    // planted: unary root over a full tree
    for f in full_shapes(p, full_memo) {
        out.push(Node::inner(vec![(MultiIndex::zero(), f)]));
    }
    // binary root with the defect in one branch
    for a in 1..p {
        let fulls = full_shapes(a, full_memo);
        let defects = almost_full_shapes(p - a, full_memo, memo);
        for f in &fulls {
            for g in &defects {
                let mut n = Node::inner(vec![
                    (MultiIndex::zero(), f.clone()),
                    (MultiIndex::zero(), g.clone()),
                ]);
                n.canonicalize();
                out.push(n);
            }
        }
    }
    memo.insert(p, out.clone());
    out
}

fn sorted_dedup(mut trees: Vec<DecoratedTree>) -> Vec<DecoratedTree> {
    trees.sort();
    trees.dedup();
    trees
}

pub const DEFAULT_ENUMERATION_CAP: usize = 8;

/// All undecorated full binary trees with p = 2k+2 leaves, canonical order.
pub fn enumerate_full(k: usize, cap: usize) -> Result<Vec<DecoratedTree>, TreeError> {
    if k > cap {
        return Err(TreeError::ResourceCap { requested: k, cap });
    }
    let mut memo = BTreeMap::new();
    let shapes = full_shapes(2 * k + 2, &mut memo);
    Ok(sorted_dedup(
        shapes.into_iter().map(DecoratedTree::from_node).collect(),
    ))
}

/// All undecorated almost-full binary trees with p = 2k+2 leaves (planted
/// ones included), canonical order.
pub fn enumerate_almost_full(k: usize, cap: usize) -> Result<Vec<DecoratedTree>, TreeError> {
    if k > cap {
        return Err(TreeError::ResourceCap { requested: k, cap });
    }
    let mut full_memo = BTreeMap::new();
    let mut memo = BTreeMap::new();
    let shapes = almost_full_shapes(2 * k + 2, &mut full_memo, &mut memo);
    Ok(sorted_dedup(
        shapes.into_iter().map(DecoratedTree::from_node).collect(),
    ))
}

/// A member of the counterterm model space T_-.
#[derive(Debug, Clone)]
pub struct CountertermTree {
    pub tree: DecoratedTree,
    pub k: usize,
    /// κ = 0 degree (equals the diagram degree of any pairing).
    pub degree: Rational,
    /// Degree exactly zero: contributes the log(ε^{-1}) terms.
    pub marginal: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CountertermTrees {
    pub full: Vec<CountertermTree>,
    pub almost_full: Vec<CountertermTree>,
}

/// Enumerates the negative/marginal-degree model space: full trees for
/// k = 0..⌊k_max⌋ and non-vanishing almost-full trees for k = 0..⌊k̄_max⌋.
/// Trees in the kernel of E (planted; X_i-decorated) are excluded; the
/// enumerators only build undecorated shapes, so the X_i exclusion is
/// structural.
pub fn enumerate_counterterm_trees(
    params: &ModelParams,
    cap: usize,
) -> Result<CountertermTrees, TreeError> {
    let scale = params.scale();
    let mut out = CountertermTrees::default();
    for k in 0.. {
        // full family: degree (3k+1)ρ − (k+1)d
        let deg = scale.eval(
            Ratio::from_integer(-(k as i64 + 1)),
            Ratio::from_integer(3 * k as i64 + 1),
            Ratio::zero(),
        );
        if deg > Ratio::zero() {
            break;
        }
        for tree in enumerate_full(k, cap)? {
            debug_assert_eq!(tree.degree_exact(scale), deg);
            out.full.push(CountertermTree {
                tree,
                k,
                degree: deg,
                marginal: deg.is_zero(),
            });
        }
        if deg.is_zero() {
            break;
        }
    }
    for k in 0.. {
        // almost-full family: degree (3k+2)ρ − (k+1)d
        let deg = scale.eval(
            Ratio::from_integer(-(k as i64 + 1)),
            Ratio::from_integer(3 * k as i64 + 2),
            Ratio::zero(),
        );
        if deg > Ratio::zero() {
            break;
        }
        for tree in enumerate_almost_full(k, cap)? {
            if tree.in_kernel_of_e() {
                continue;
            }
            debug_assert_eq!(tree.degree_exact(scale), deg);
            out.almost_full.push(CountertermTree {
                tree,
                k,
                degree: deg,
                marginal: deg.is_zero(),
            });
        }
        if deg.is_zero() {
            break;
        }
    }
    Ok(out)
}

/// Arena view of a tree with stable node ids (preorder, root = 0); the
/// subtree machinery of the antipode works on these ids.
#[derive(Debug, Clone)]
pub struct IndexedTree {
    pub nodes: Vec<IndexedNode>,
}

#[derive(Debug, Clone)]
pub struct IndexedNode {
    pub parent: Option<u32>,
    /// Decoration of the edge from the parent (zero at the root).
    pub edge_dec: MultiIndex,
    pub noise: bool,
    pub dec: MultiIndex,
    pub children: Vec<u32>,
}

impl IndexedTree {
    pub fn new(tree: &DecoratedTree) -> Self {
        let mut it = IndexedTree { nodes: Vec::new() };
        fn go(
            it: &mut IndexedTree,
            n: &Node,
            parent: Option<u32>,
            edge_dec: MultiIndex,
        ) -> u32 {
            let id = it.nodes.len() as u32;
            it.nodes.push(IndexedNode {
                parent,
                edge_dec,
                noise: n.noise,
                dec: n.dec.clone(),
                children: Vec::new(),
            });
            for (dec, c) in &n.children {
                let cid = go(it, c, Some(id), dec.clone());
                it.nodes[id as usize].children.push(cid);
            }
            id
        }
        go(&mut it, &tree.root, None, MultiIndex::zero());
        it
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> Vec<u32> {
        (0..self.nodes.len() as u32)
            .filter(|&i| self.nodes[i as usize].noise)
            .collect()
    }

    /// Rebuilds the decorated tree spanned by `keep` below `root`,
    /// restricted to kept children. Node decorations are preserved; the
    /// root's incoming edge decoration is dropped.
    pub fn subtree(&self, root: u32, keep: u64) -> DecoratedTree {
        fn build(it: &IndexedTree, id: u32, keep: u64) -> Node {
            let n = &it.nodes[id as usize];
            let children = n
                .children
                .iter()
                .filter(|&&c| keep & (1u64 << c) != 0)
                .map(|&c| (it.nodes[c as usize].edge_dec.clone(), build(it, c, keep)))
                .collect();
            Node {
                noise: n.noise,
                dec: n.dec.clone(),
                children,
            }
        }
        DecoratedTree::from_node(build(self, root, keep))
    }

    /// Whole tree back as a decorated tree.
    pub fn to_tree(&self) -> DecoratedTree {
        self.subtree(0, u64::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::parse_rational;

    fn params(d: u32, rho: &str) -> ModelParams {
        ModelParams::new(d, parse_rational(rho).unwrap()).unwrap()
    }

    pub(crate) fn cherry() -> DecoratedTree {
        parse_tree("(* (I Xi) (I Xi))", 3).unwrap()
    }

    #[test]
    fn parse_examples_from_grammar() {
        let t = cherry();
        assert_eq!(t.p_leaves(), 2);
        assert_eq!(t.q_edges(), 2);
        assert_eq!(t.classify(), TreeClass::Full);

        let planted = parse_tree("(I (* (I Xi) (I Xi)))", 3).unwrap();
        assert_eq!(planted.p_leaves(), 2);
        assert_eq!(planted.q_edges(), 3);
        assert!(planted.is_planted());
        assert_eq!(planted.classify(), TreeClass::AlmostFull);

        let comb3 = parse_tree("(* (I (* (I Xi)(I Xi))) (I Xi))", 3).unwrap();
        assert_eq!(comb3.p_leaves(), 3);
        assert_eq!(comb3.q_edges(), 4);
        assert_eq!(comb3.classify(), TreeClass::Full);
    }

    #[test]
    fn parse_reports_offsets_and_arity() {
        match parse_tree("(* (I Xi) (I Zi))", 3) {
            Err(TreeError::Syntax { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("unexpected {other:?}"),
        }
        match parse_tree("(X [1,0] Xi)", 3) {
            Err(TreeError::WrongArity { got, want, .. }) => {
                assert_eq!((got, want), (2, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_form_sorts_children() {
        let a = parse_tree("(* (I (* (I Xi)(I Xi))) (I Xi))", 3).unwrap();
        let b = parse_tree("(* (I Xi) (I (* (I Xi)(I Xi))))", 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.render(), b.render());
        let reparsed = parse_tree(&a.render(), 3).unwrap();
        assert_eq!(reparsed, a);
    }

    #[test]
    fn degree_examples() {
        let p = params(3, "1.2");
        assert!((cherry().degree(&p) - (-1.8)).abs() < 1e-12);
        let leaf = DecoratedTree::leaf();
        assert!((leaf.degree(&p) + (1.2 + 3.0) / 2.0).abs() < 1e-12);
        // full tree with 2k+2 leaves: −(2/3)d + (3k+1)(ρ−ρ_c)
        for k in 0..4usize {
            let tree = &enumerate_full(k, 8).unwrap()[0];
            let expect = -2.0 / 3.0 * 3.0 + (3.0 * k as f64 + 1.0) * (1.2 - 1.0);
            assert!((tree.degree(&p) - expect).abs() < 1e-12);
        }
        // kappa shifts by −κp
        let pk = ModelParams::with_kappa(3, parse_rational("1.2").unwrap(), 0.01).unwrap();
        assert!((cherry().degree(&pk) - (-1.8 - 0.02)).abs() < 1e-12);
    }

    #[test]
    fn symmetry_of_combs_and_regular_trees() {
        // combs: stacked cherries, S = 2 at every height
        let mut comb = cherry();
        for _ in 0..3 {
            assert_eq!(comb.n_sym(), 1);
            assert_eq!(comb.symmetry_factor(), 2);
            let expr = alloc::format!("(* (I {}) (I Xi))", comb.render());
            comb = parse_tree(&expr, 3).unwrap();
        }
        // regular trees: maximal symmetry 2^{2^s − 1}
        let reg4 = parse_tree("(* (I (* (I Xi)(I Xi))) (I (* (I Xi)(I Xi))))", 3).unwrap();
        assert_eq!(reg4.n_sym(), 3);
        assert_eq!(reg4.symmetry_factor(), 8);
        let reg8 = parse_tree(
            &alloc::format!("(* (I {r}) (I {r}))", r = reg4.render()),
            3,
        )
        .unwrap();
        assert_eq!(reg8.n_sym(), 7);
        assert_eq!(reg8.symmetry_factor(), 128);
        let leaf = DecoratedTree::leaf();
        assert_eq!((leaf.n_inner(), leaf.n_sym()), (0, 0));
    }

    #[test]
    fn upsilon_examples() {
        assert_eq!(cherry().upsilon().unwrap(), (UpsilonKind::Constant, 2));
        let comb3 = parse_tree("(* (I (* (I Xi)(I Xi))) (I Xi))", 3).unwrap();
        // 3-leaf comb is full: constant with n_inner = 2
        assert_eq!(comb3.upsilon().unwrap(), (UpsilonKind::Constant, 4));
        // almost-full 3-leaf comb: unary node instead of the deep cherry
        let af = parse_tree("(* (I (I Xi)) (I Xi))", 3).unwrap();
        assert_eq!(af.classify(), TreeClass::AlmostFull);
        assert_eq!(af.upsilon().unwrap(), (UpsilonKind::LinearInU, 4));
        // with an X_1 decoration at the unary node
        let grad = parse_tree("(* (I (X [0,1,0,0] (I Xi))) (I Xi))", 3).unwrap();
        assert_eq!(grad.upsilon().unwrap(), (UpsilonKind::Gradient(1), 4));
        // X_i at a binary node kills Υ
        let bad = parse_tree("(X [0,1,0,0] (* (I Xi) (I Xi)))", 3).unwrap();
        assert!(bad.upsilon().is_err());
        // out-degree 3 rejected
        let other = parse_tree("(* (I Xi)(I Xi)(I Xi))", 3).unwrap();
        assert_eq!(other.classify(), TreeClass::Other);
        assert!(other.upsilon().is_err());
    }

    #[test]
    fn kernel_of_e_examples() {
        assert!(parse_tree("(I Xi)", 3).unwrap().in_kernel_of_e());
        assert!(!cherry().in_kernel_of_e());
        let comb3 = parse_tree("(* (I (* (I Xi)(I Xi))) (I Xi))", 3).unwrap();
        assert!(comb3.in_kernel_of_e());
        // X_1 with no D_1 edge: kernel; with a matching edge: not
        let dec = parse_tree("(* (I (X [0,1,0,0] (I Xi))) (I Xi))", 3).unwrap();
        assert!(dec.in_kernel_of_e());
        let matched = parse_tree("(* (I (X [0,1,0,0] (D 1 Xi))) (I Xi))", 3).unwrap();
        assert!(!matched.in_kernel_of_e());
    }

    #[test]
    fn wedderburn_etherington_values() {
        assert_eq!(wedderburn_etherington(1), 1);
        assert_eq!(wedderburn_etherington(4), 2);
        assert_eq!(wedderburn_etherington(8), 23);
        let expected = [1u128, 2, 6, 23, 98, 451, 2179];
        for (k, &w) in expected.iter().enumerate() {
            assert_eq!(wedderburn_etherington(2 * k + 2), w);
        }
    }

    #[test]
    fn enumeration_matches_oracle_and_edge_counts() {
        for k in 0..=3usize {
            let full = enumerate_full(k, 8).unwrap();
            assert_eq!(full.len() as u128, wedderburn_etherington(2 * k + 2));
            for t in &full {
                assert_eq!(t.classify(), TreeClass::Full);
                assert_eq!(t.q_edges(), 2 * t.p_leaves() - 2);
                let (kind, coeff) = t.upsilon().unwrap();
                assert_eq!(kind, UpsilonKind::Constant);
                // Υ/S = 2^{n_inner − n_sym} is a positive integer
                assert_eq!(coeff % t.symmetry_factor(), 0);
            }
            let af = enumerate_almost_full(k, 8).unwrap();
            for t in &af {
                assert_eq!(t.classify(), TreeClass::AlmostFull);
                assert_eq!(t.q_edges(), 2 * t.p_leaves() - 1);
            }
            // lists are sorted and duplicate-free
            let mut sorted = full.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted, full);
        }
        assert_eq!(enumerate_full(1, 8).unwrap().len(), 2);
        assert_eq!(enumerate_full(3, 8).unwrap().len(), 23);
        assert!(matches!(
            enumerate_full(9, 8),
            Err(TreeError::ResourceCap { .. })
        ));
    }

    #[test]
    fn counterterm_enumeration_thresholds() {
        // d=3, ρ=1.6: full = {cherry}, almost-full empty (d < 2ρ)
        let ct = enumerate_counterterm_trees(&params(3, "1.6"), 8).unwrap();
        assert_eq!(ct.full.len(), 1);
        assert_eq!(ct.full[0].tree, cherry());
        assert!(!ct.full[0].marginal);
        assert!(ct.almost_full.is_empty());

        // d=3, ρ=1.5: k_max = 1 integer, the two 4-leaf trees are marginal
        let ct = enumerate_counterterm_trees(&params(3, "1.5"), 8).unwrap();
        let marg: Vec<_> = ct.full.iter().filter(|t| t.marginal).collect();
        assert_eq!(ct.full.len(), 3);
        assert_eq!(marg.len(), 2);
        assert!(marg.iter().all(|t| t.k == 1));
        // k̄_max = 0: the non-planted 2-leaf almost-full tree, marginal
        assert_eq!(ct.almost_full.len(), 1);
        assert!(ct.almost_full[0].marginal);

        // d=3, ρ=1.2: k_max = 3 and k̄_max = 1, both integers; the top
        // families are marginal and no kernel elements appear anywhere
        let ct = enumerate_counterterm_trees(&params(3, "1.2"), 8).unwrap();
        assert_eq!(ct.full.len(), 1 + 2 + 6 + 23);
        assert!(ct.full.iter().all(|t| t.marginal == (t.k == 3)));
        assert!(ct.almost_full.iter().all(|t| t.marginal == (t.k == 1)));
        for t in ct.full.iter().chain(ct.almost_full.iter()) {
            assert!(!t.tree.in_kernel_of_e());
        }
    }

    #[test]
    fn indexed_tree_roundtrip() {
        for expr in [
            "(* (I Xi) (I Xi))",
            "(* (I (* (I Xi)(I Xi))) (I Xi))",
            "(* (I (I Xi)) (I Xi))",
        ] {
            let t = parse_tree(expr, 3).unwrap();
            let it = IndexedTree::new(&t);
            assert_eq!(it.to_tree(), t);
        }
    }
}
