//! Decision trees over finite-domain variables.
//!
//! A [`Tree`] is the common factored representation used everywhere in the
//! crate: CPDs, rewards, value functions, Q functions and policies are all
//! trees whose internal nodes test one variable and whose leaves carry a label.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Deref;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Index of a variable (or attribute) in a variable table.
pub type VarId = usize;

/// Domain sizes of a variable table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domain {
    sizes: Vec<usize>,
}

impl Domain {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if let Some((i, &s)) = sizes.iter().enumerate().find(|(_, &s)| s < 2) {
            return Err(Error::Domain(format!(
                "variable {i} has domain size {s}, need at least 2"
            )));
        }
        Ok(Domain { sizes })
    }

    pub fn binary(n: usize) -> Self {
        Domain { sizes: vec![2; n] }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn size(&self, var: VarId) -> usize {
        self.sizes[var]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of states, i.e. the product of all domain sizes.
    pub fn state_count(&self) -> u128 {
        self.sizes.iter().map(|&s| s as u128).product()
    }

    /// A new table with one more variable appended.
    pub fn with_extra(&self, size: usize) -> Domain {
        let mut sizes = self.sizes.clone();
        sizes.push(size);
        Domain { sizes }
    }

    pub fn check(&self, state: &[usize]) -> Result<()> {
        if state.len() != self.sizes.len() {
            return Err(Error::Domain(format!(
                "state has {} values, table has {} variables",
                state.len(),
                self.sizes.len()
            )));
        }
        for (i, (&v, &s)) in state.iter().zip(&self.sizes).enumerate() {
            if v >= s {
                return Err(Error::Domain(format!(
                    "value {v} of variable {i} outside domain of size {s}"
                )));
            }
        }
        Ok(())
    }

    /// Mixed-radix index of a state, variable 0 least significant.
    pub fn index_of(&self, state: &[usize]) -> usize {
        let mut idx = 0usize;
        for (&v, &s) in state.iter().zip(&self.sizes).rev() {
            idx = idx * s + v;
        }
        idx
    }

    pub fn state_at(&self, mut index: usize) -> State {
        let mut values = Vec::with_capacity(self.sizes.len());
        for &s in &self.sizes {
            values.push(index % s);
            index /= s;
        }
        State(values)
    }

    /// Every state in index order. Only sensible for small tables.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        let n = self.state_count() as usize;
        (0..n).map(move |i| self.state_at(i))
    }
}

/// One value index per variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State(pub Vec<usize>);

impl Deref for State {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for State {
    fn from(v: Vec<usize>) -> Self {
        State(v)
    }
}

/// Leaf labels that can be compared when collapsing redundant tests.
pub trait Label: Clone {
    fn same(&self, other: &Self) -> bool;
}

/// Tolerance used when comparing real-valued leaves.
pub const NUMERIC_LABEL_TOL: f64 = 1e-12;

impl Label for f64 {
    fn same(&self, other: &Self) -> bool {
        self == other || (self - other).abs() <= NUMERIC_LABEL_TOL
    }
}

impl Label for usize {
    fn same(&self, other: &Self) -> bool {
        self == other
    }
}

impl Label for bool {
    fn same(&self, other: &Self) -> bool {
        self == other
    }
}

impl<T: Label> Label for Vec<T> {
    fn same(&self, other: &Self) -> bool {
        self.len() == other.len() && self.iter().zip(other).all(|(a, b)| a.same(b))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tree<L> {
    Leaf(L),
    Node { var: VarId, children: Vec<Tree<L>> },
}

/// A leaf together with the part of the state space it covers.
#[derive(Clone, Debug)]
pub struct LeafRegion<'a, L> {
    pub label: &'a L,
    pub assignment: Vec<(VarId, usize)>,
    pub size: u128,
}

impl<L> Tree<L> {
    pub fn leaf(label: L) -> Self {
        Tree::Leaf(label)
    }

    pub fn node(var: VarId, children: Vec<Tree<L>>) -> Self {
        Tree::Node { var, children }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf(_))
    }

    /// Label of the leaf reached by `state`.
    pub fn evaluate(&self, state: &[usize]) -> Result<&L> {
        let mut t = self;
        loop {
            match t {
                Tree::Leaf(l) => return Ok(l),
                Tree::Node { var, children } => {
                    let v = *state.get(*var).ok_or_else(|| {
                        Error::Domain(format!("state has no variable {var}"))
                    })?;
                    t = children.get(v).ok_or_else(|| {
                        Error::Structure(format!(
                            "node on variable {var} has {} children, value {v} requested",
                            children.len()
                        ))
                    })?;
                }
            }
        }
    }

    /// Like [`Tree::evaluate`] but panics on malformed input. For trees that
    /// were validated against the state's table.
    pub fn get(&self, state: &[usize]) -> &L {
        let mut t = self;
        loop {
            match t {
                Tree::Leaf(l) => return l,
                Tree::Node { var, children } => t = &children[state[*var]],
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node { children, .. } => 1 + children.iter().map(Tree::node_count).sum::<usize>(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::leaf_count).sum(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Tree::Leaf(_) => 0,
            Tree::Node { children, .. } => 1 + children.iter().map(Tree::depth).max().unwrap_or(0),
        }
    }

    /// Variables tested anywhere in the tree.
    pub fn tested_vars(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<VarId>) {
        if let Tree::Node { var, children } = self {
            out.insert(*var);
            for c in children {
                c.collect_vars(out);
            }
        }
    }

    pub fn leaves(&self) -> Vec<&L> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a L>) {
        match self {
            Tree::Leaf(l) => out.push(l),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> Tree<M> {
        match self {
            Tree::Leaf(l) => Tree::Leaf(f(l)),
            Tree::Node { var, children } => Tree::Node {
                var: *var,
                children: children.iter().map(|c| c.map(f)).collect(),
            },
        }
    }

    pub fn try_map<M, E>(&self, f: &mut impl FnMut(&L) -> std::result::Result<M, E>) -> std::result::Result<Tree<M>, E> {
        Ok(match self {
            Tree::Leaf(l) => Tree::Leaf(f(l)?),
            Tree::Node { var, children } => Tree::Node {
                var: *var,
                children: children.iter().map(|c| c.try_map(f)).collect::<std::result::Result<_, E>>()?,
            },
        })
    }

    /// Checks child counts against `domain` and that no variable is tested
    /// twice on a path.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let mut on_path = vec![false; domain.len()];
        self.validate_rec(domain, &mut on_path)
    }

    fn validate_rec(&self, domain: &Domain, on_path: &mut [bool]) -> Result<()> {
        if let Tree::Node { var, children } = self {
            if *var >= domain.len() {
                return Err(Error::Structure(format!("test on unknown variable {var}")));
            }
            if on_path[*var] {
                return Err(Error::Structure(format!("variable {var} tested twice on a path")));
            }
            if children.len() != domain.size(*var) {
                return Err(Error::Structure(format!(
                    "node on variable {var} has {} children, domain size is {}",
                    children.len(),
                    domain.size(*var)
                )));
            }
            on_path[*var] = true;
            for c in children {
                c.validate_rec(domain, on_path)?;
            }
            on_path[*var] = false;
        }
        Ok(())
    }

    /// Partition of the state space induced by the leaves.
    pub fn leaf_regions(&self, domain: &Domain) -> Vec<LeafRegion<'_, L>> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.regions_rec(domain, &mut path, &mut out);
        out
    }

    fn regions_rec<'a>(
        &'a self,
        domain: &Domain,
        path: &mut Vec<(VarId, usize)>,
        out: &mut Vec<LeafRegion<'a, L>>,
    ) {
        match self {
            Tree::Leaf(l) => {
                let fixed: u128 = path
                    .iter()
                    .filter(|(v, _)| *v < domain.len())
                    .map(|(v, _)| domain.size(*v) as u128)
                    .product();
                out.push(LeafRegion {
                    label: l,
                    assignment: path.clone(),
                    size: domain.state_count() / fixed,
                });
            }
            Tree::Node { var, children } => {
                for (k, c) in children.iter().enumerate() {
                    path.push((*var, k));
                    c.regions_rec(domain, path, out);
                    path.pop();
                }
            }
        }
    }
}

impl<L: Label> Tree<L> {
    /// Builds a node, collapsing it when every child is the same leaf.
    pub fn node_simplified(var: VarId, children: Vec<Tree<L>>) -> Self {
        let collapse = match children.first() {
            Some(Tree::Leaf(first)) => children[1..]
                .iter()
                .all(|c| matches!(c, Tree::Leaf(l) if l.same(first))),
            _ => false,
        };
        if collapse {
            children.into_iter().next().unwrap()
        } else {
            Tree::Node { var, children }
        }
    }

    pub fn simplify(&self) -> Tree<L> {
        match self {
            Tree::Leaf(l) => Tree::Leaf(l.clone()),
            Tree::Node { var, children } => {
                Tree::node_simplified(*var, children.iter().map(Tree::simplify).collect())
            }
        }
    }

    /// The tree obtained by fixing `var` to `value`.
    pub fn restrict(&self, var: VarId, value: usize) -> Tree<L> {
        match self {
            Tree::Leaf(l) => Tree::Leaf(l.clone()),
            Tree::Node { var: v, children } if *v == var => children[value].restrict(var, value),
            Tree::Node { var: v, children } => Tree::node_simplified(
                *v,
                children.iter().map(|c| c.restrict(var, value)).collect(),
            ),
        }
    }

    /// Restriction by a partial assignment, indexed by variable.
    pub fn restrict_partial(&self, path: &Assignment) -> Tree<L> {
        match self {
            Tree::Leaf(l) => Tree::Leaf(l.clone()),
            Tree::Node { var, children } => match path.get(*var) {
                Some(k) => children[k].restrict_partial(path),
                None => Tree::node_simplified(
                    *var,
                    children.iter().map(|c| c.restrict_partial(path)).collect(),
                ),
            },
        }
    }
}

/// Partial assignment of values to variables, used while walking trees.
#[derive(Clone, Debug, Default)]
pub struct Assignment {
    values: Vec<Option<usize>>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, var: VarId) -> Option<usize> {
        self.values.get(var).copied().flatten()
    }

    pub fn set(&mut self, var: VarId, value: usize) {
        if self.values.len() <= var {
            self.values.resize(var + 1, None);
        }
        self.values[var] = Some(value);
    }

    pub fn unset(&mut self, var: VarId) {
        if let Some(slot) = self.values.get_mut(var) {
            *slot = None;
        }
    }

    pub fn pairs(&self) -> Vec<(VarId, usize)> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(v, x)| x.map(|x| (v, x)))
            .collect()
    }
}

fn descend<'a, L>(mut t: &'a Tree<L>, path: &Assignment) -> &'a Tree<L> {
    while let Tree::Node { var, children } = t {
        match path.get(*var) {
            Some(k) => t = &children[k],
            None => break,
        }
    }
    t
}

/// Merges several trees into one whose partition refines all of them. Each
/// leaf of the result is labeled by `combine` applied to the labels the input
/// trees assign to that region.
pub fn try_merge_all<L, M, E, F>(trees: &[&Tree<L>], mut combine: F) -> std::result::Result<Tree<M>, E>
where
    M: Label,
    F: FnMut(&[&L]) -> std::result::Result<M, E>,
{
    assert!(!trees.is_empty(), "merge needs at least one tree");
    let mut path = Assignment::new();
    merge_rec(trees, &mut path, &mut combine)
}

pub fn merge_all<L, M, F>(trees: &[&Tree<L>], mut combine: F) -> Tree<M>
where
    M: Label,
    F: FnMut(&[&L]) -> M,
{
    match try_merge_all(trees, |ls| Ok::<M, std::convert::Infallible>(combine(ls))) {
        Ok(t) => t,
        Err(e) => match e {},
    }
}

fn merge_rec<L, M, E, F>(trees: &[&Tree<L>], path: &mut Assignment, combine: &mut F) -> std::result::Result<Tree<M>, E>
where
    M: Label,
    F: FnMut(&[&L]) -> std::result::Result<M, E>,
{
    let resolved: Vec<&Tree<L>> = trees.iter().map(|t| descend(t, path)).collect();
    let split = resolved.iter().find_map(|t| match t {
        Tree::Node { var, children } => Some((*var, children.len())),
        Tree::Leaf(_) => None,
    });
    match split {
        None => {
            let labels: Vec<&L> = resolved
                .iter()
                .map(|t| match t {
                    Tree::Leaf(l) => l,
                    Tree::Node { .. } => unreachable!(),
                })
                .collect();
            Ok(Tree::Leaf(combine(&labels)?))
        }
        Some((var, arity)) => {
            let mut children = Vec::with_capacity(arity);
            for k in 0..arity {
                path.set(var, k);
                let child = merge_rec(&resolved, path, combine);
                if child.is_err() {
                    path.unset(var);
                }
                children.push(child?);
            }
            path.unset(var);
            Ok(Tree::node_simplified(var, children))
        }
    }
}

/// Two-tree merge with differently typed labels.
pub fn merge2<A, B, M, F>(a: &Tree<A>, b: &Tree<B>, mut combine: F) -> Tree<M>
where
    M: Label,
    F: FnMut(&A, &B) -> M,
{
    let mut path = Assignment::new();
    merge2_rec(a, b, &mut path, &mut combine)
}

fn merge2_rec<A, B, M, F>(a: &Tree<A>, b: &Tree<B>, path: &mut Assignment, combine: &mut F) -> Tree<M>
where
    M: Label,
    F: FnMut(&A, &B) -> M,
{
    let a = descend(a, path);
    let b = descend(b, path);
    let (var, arity) = match (a, b) {
        (Tree::Leaf(x), Tree::Leaf(y)) => return Tree::Leaf(combine(x, y)),
        (Tree::Node { var, children }, _) => (*var, children.len()),
        (Tree::Leaf(_), Tree::Node { var, children }) => (*var, children.len()),
    };
    let mut children = Vec::with_capacity(arity);
    for k in 0..arity {
        path.set(var, k);
        children.push(merge2_rec(a, b, path, combine));
    }
    path.unset(var);
    Tree::node_simplified(var, children)
}

impl<L: fmt::Display> fmt::Display for Tree<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf(l) => write!(f, "{l}"),
            Tree::Node { var, children } => {
                write!(f, "(x{var}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Encodes a tree as nested records: `{"leaf": ...}` or
/// `{"test": name, "children": [...]}` with children in domain order.
pub fn tree_to_json<L>(tree: &Tree<L>, names: &[String], leaf: &impl Fn(&L) -> Value) -> Value {
    match tree {
        Tree::Leaf(l) => json!({ "leaf": leaf(l) }),
        Tree::Node { var, children } => json!({
            "test": names[*var],
            "children": children.iter().map(|c| tree_to_json(c, names, leaf)).collect::<Vec<_>>(),
        }),
    }
}

/// Decodes the nested-record form. `resolve` maps a test name to its
/// variable id and domain size; `leaf` decodes a leaf payload. `at` names the
/// enclosing field for error messages.
pub fn tree_from_json<L>(
    value: &Value,
    at: &str,
    resolve: &impl Fn(&str) -> Option<(VarId, usize)>,
    leaf: &impl Fn(&Value, &str) -> Result<L>,
) -> Result<Tree<L>> {
    let obj: &Map<String, Value> = value
        .as_object()
        .ok_or_else(|| Error::Validation(format!("{at}: expected a tree record")))?;
    if let Some(payload) = obj.get("leaf") {
        return leaf(payload, &format!("{at}.leaf")).map(Tree::Leaf);
    }
    let name = obj
        .get("test")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Validation(format!("{at}: tree record needs \"leaf\" or \"test\"")))?;
    let (var, arity) =
        resolve(name).ok_or_else(|| Error::Validation(format!("{at}: unknown test variable {name:?}")))?;
    let kids = obj
        .get("children")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Validation(format!("{at}: test on {name:?} has no children list")))?;
    if kids.len() != arity {
        return Err(Error::Validation(format!(
            "{at}: test on {name:?} has {} children, domain has {arity} values",
            kids.len()
        )));
    }
    let children = kids
        .iter()
        .enumerate()
        .map(|(k, c)| tree_from_json(c, &format!("{at}.children[{k}]"), resolve, leaf))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tree::Node { var, children })
}
