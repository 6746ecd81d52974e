//! Incremental decision-tree induction with chi-square gated splits.
//!
//! A [`LearnerTree`] ingests ⟨attributes, class⟩ examples one at a time and
//! keeps every example at the leaf it reaches. Each node carries
//! attribute-by-class contingency tables for the attributes still available
//! below it, so the best test can be re-checked after every arrival. When the
//! installed test is no longer the best one (or no longer passes the
//! threshold) the subtree is rebuilt top-down from its stored examples, which
//! keeps the incremental tree identical to the tree a batch learner would
//! build from the same examples.

use crate::error::{Error, Result};
use crate::stats::{chi2_statistic, ContingencyTable};
use crate::tree::{Label, Tree, VarId};

/// Default split threshold, the 0.995 quantile of χ²(1).
pub const DEFAULT_TAU: f64 = 7.88;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InductionConfig {
    pub tau_chi2: f64,
    /// How far below the best candidate an installed test may fall before
    /// its subtree is rebuilt.
    pub restructure_margin: f64,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig { tau_chi2: DEFAULT_TAU, restructure_margin: 0.0 }
    }
}

impl InductionConfig {
    pub fn with_tau(tau_chi2: f64) -> Self {
        InductionConfig { tau_chi2, ..Default::default() }
    }
}

/// Per-class example counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassDistribution {
    counts: Vec<u64>,
}

impl ClassDistribution {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        ClassDistribution { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Maximum-likelihood probabilities, uniform when no example was seen.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total();
        let k = self.counts.len();
        if total == 0 {
            return vec![1.0 / k as f64; k];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// Expected class value, 0.0 when empty.
    pub fn mean(&self, class_values: &[f64]) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.counts
            .iter()
            .zip(class_values)
            .map(|(&c, &v)| c as f64 * v)
            .sum::<f64>()
            / total as f64
    }
}

impl Label for ClassDistribution {
    fn same(&self, other: &Self) -> bool {
        self == other
    }
}

/// Class counts of a node plus one contingency table per candidate attribute.
#[derive(Clone, Debug)]
pub struct NodeStatistics {
    classes: Vec<u64>,
    tables: Vec<Option<ContingencyTable>>,
}

impl NodeStatistics {
    fn new(arities: &[usize], num_classes: usize, excluded: &[bool]) -> Self {
        let tables = arities
            .iter()
            .zip(excluded)
            .map(|(&a, &ex)| {
                if ex {
                    None
                } else {
                    Some(ContingencyTable::new(a, num_classes).expect("arity and classes are >= 2"))
                }
            })
            .collect();
        NodeStatistics { classes: vec![0; num_classes], tables }
    }

    fn add(&mut self, attrs: &[usize], class: usize) {
        self.classes[class] += 1;
        for (v, t) in self.tables.iter_mut().enumerate() {
            if let Some(t) = t {
                t.add(attrs[v], class, 1);
            }
        }
    }

    fn grow_classes(&mut self, num_classes: usize) {
        if self.classes.len() < num_classes {
            self.classes.resize(num_classes, 0);
        }
        for t in self.tables.iter_mut().flatten() {
            t.grow_cols(num_classes);
        }
    }

    pub fn total(&self) -> u64 {
        self.classes.iter().sum()
    }

    pub fn distribution(&self) -> ClassDistribution {
        ClassDistribution::from_counts(self.classes.clone())
    }

    pub fn table(&self, var: VarId) -> Option<&ContingencyTable> {
        self.tables.get(var).and_then(Option::as_ref)
    }

    /// χ² of a candidate attribute, 0 when the node holds no example.
    pub fn candidate_chi2(&self, var: VarId) -> Option<f64> {
        let t = self.table(var)?;
        Some(chi2_statistic(t).unwrap_or(0.0))
    }

    pub fn candidates(&self) -> impl Iterator<Item = VarId> + '_ {
        self.tables
            .iter()
            .enumerate()
            .filter_map(|(v, t)| t.as_ref().map(|_| v))
    }

    #[cfg(test)]
    pub(crate) fn from_tables(classes: Vec<u64>, tables: Vec<Option<ContingencyTable>>) -> Self {
        NodeStatistics { classes, tables }
    }
}

/// The candidate attribute with the largest χ², lowest id on ties.
pub fn best_test(stats: &NodeStatistics) -> Option<(VarId, f64)> {
    let mut best: Option<(VarId, f64)> = None;
    for v in stats.candidates() {
        let c = stats.candidate_chi2(v).unwrap_or(0.0);
        if best.map_or(true, |(_, b)| c > b) {
            best = Some((v, c));
        }
    }
    best
}

/// Whether a test with statistic `chi2` may be installed.
pub fn split_decision(chi2: f64, config: &InductionConfig) -> bool {
    chi2 >= config.tau_chi2
}

#[derive(Clone, Debug)]
struct Example {
    attrs: Box<[usize]>,
    class: usize,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        stats: NodeStatistics,
        examples: Vec<Example>,
    },
    Internal {
        var: VarId,
        /// χ² of the test when it was installed.
        installed_chi2: f64,
        stats: NodeStatistics,
        children: Vec<Node>,
    },
}

impl Node {
    fn stats(&self) -> &NodeStatistics {
        match self {
            Node::Leaf { stats, .. } | Node::Internal { stats, .. } => stats,
        }
    }

    fn stats_mut(&mut self) -> &mut NodeStatistics {
        match self {
            Node::Leaf { stats, .. } | Node::Internal { stats, .. } => stats,
        }
    }

    fn drain_examples(self, out: &mut Vec<Example>) {
        match self {
            Node::Leaf { examples, .. } => out.extend(examples),
            Node::Internal { children, .. } => children.into_iter().for_each(|c| c.drain_examples(out)),
        }
    }

    fn grow_classes(&mut self, num_classes: usize) {
        self.stats_mut().grow_classes(num_classes);
        if let Node::Internal { children, .. } = self {
            children.iter_mut().for_each(|c| c.grow_classes(num_classes));
        }
    }
}

/// Counters exposed for instrumentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LearnerCounters {
    pub examples: u64,
    pub rebuilds: u64,
}

/// Decision tree under incremental construction.
#[derive(Clone, Debug)]
pub struct LearnerTree {
    arities: Vec<usize>,
    num_classes: usize,
    /// Interned class values for numeric-class learners.
    class_values: Option<Vec<f64>>,
    config: InductionConfig,
    root: Node,
    counters: LearnerCounters,
}

impl LearnerTree {
    /// A learner over attributes with the given arities and a fixed number of
    /// classes.
    pub fn new(arities: Vec<usize>, num_classes: usize, config: InductionConfig) -> Self {
        let num_classes = num_classes.max(2);
        let excluded = vec![false; arities.len()];
        let root = Node::Leaf {
            stats: NodeStatistics::new(&arities, num_classes, &excluded),
            examples: Vec::new(),
        };
        LearnerTree { arities, num_classes, class_values: None, config, root, counters: LearnerCounters::default() }
    }

    /// A learner whose classes are real values discovered as examples arrive.
    pub fn numeric(arities: Vec<usize>, config: InductionConfig) -> Self {
        let mut t = LearnerTree::new(arities, 2, config);
        t.class_values = Some(Vec::new());
        t
    }

    pub fn config(&self) -> &InductionConfig {
        &self.config
    }

    pub fn arities(&self) -> &[usize] {
        &self.arities
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_values(&self) -> Option<&[f64]> {
        self.class_values.as_deref()
    }

    pub fn counters(&self) -> LearnerCounters {
        self.counters
    }

    pub fn example_count(&self) -> u64 {
        self.counters.examples
    }

    fn check_attrs(&self, attrs: &[usize]) -> Result<()> {
        if attrs.len() != self.arities.len() {
            return Err(Error::Domain(format!(
                "example has {} attributes, learner expects {}",
                attrs.len(),
                self.arities.len()
            )));
        }
        for (i, (&v, &a)) in attrs.iter().zip(&self.arities).enumerate() {
            if v >= a {
                return Err(Error::Domain(format!("attribute {i} value {v} outside domain of size {a}")));
            }
        }
        Ok(())
    }

    /// Adds one example, attempts a split at the reached leaf and re-checks
    /// the tests installed on its path.
    pub fn add_example(&mut self, attrs: &[usize], class: usize) -> Result<()> {
        self.check_attrs(attrs)?;
        if self.class_values.is_none() && class >= self.num_classes {
            return Err(Error::Domain(format!(
                "class {class} outside {} classes",
                self.num_classes
            )));
        }
        if class >= self.num_classes {
            self.num_classes = class + 1;
            self.root.grow_classes(self.num_classes);
        }
        let ex = Example { attrs: attrs.into(), class };
        let mut excluded = vec![false; self.arities.len()];
        insert(&mut self.root, ex, &self.arities, self.num_classes, &self.config, &mut excluded);
        excluded.iter_mut().for_each(|e| *e = false);
        let rebuilt = ensure_path(&mut self.root, attrs, &self.arities, self.num_classes, &self.config, &mut excluded);
        self.counters.examples += 1;
        self.counters.rebuilds += rebuilt as u64;
        Ok(())
    }

    /// Adds an example whose class is a real value.
    pub fn add_value_example(&mut self, attrs: &[usize], value: f64) -> Result<()> {
        let values = self
            .class_values
            .as_mut()
            .ok_or_else(|| Error::Domain("learner has categorical classes".into()))?;
        let value = if value == 0.0 { 0.0 } else { value };
        let class = match values.iter().position(|v| v.to_bits() == value.to_bits()) {
            Some(c) => c,
            None => {
                values.push(value);
                values.len() - 1
            }
        };
        self.add_example(attrs, class)
    }

    /// Re-checks every internal node and rebuilds subtrees whose test is not
    /// the best available one.
    pub fn ensure_best_test(&mut self) {
        let mut excluded = vec![false; self.arities.len()];
        let n = ensure_all(&mut self.root, &self.arities, self.num_classes, &self.config, &mut excluded);
        self.counters.rebuilds += n;
    }

    fn leaf_for(&self, attrs: &[usize]) -> &Node {
        let mut node = &self.root;
        while let Node::Internal { var, children, .. } = node {
            node = &children[attrs[*var]];
        }
        node
    }

    pub fn predict_distribution(&self, attrs: &[usize]) -> ClassDistribution {
        self.leaf_for(attrs).stats().distribution()
    }

    /// Empirical mean class value at the reached leaf; 0.0 when empty or when
    /// the learner is categorical.
    pub fn predict_value(&self, attrs: &[usize]) -> f64 {
        match &self.class_values {
            Some(values) => self.predict_distribution(attrs).mean(values),
            None => 0.0,
        }
    }

    /// Read-only snapshot of the current tree.
    pub fn freeze(&self) -> Tree<ClassDistribution> {
        fn rec(n: &Node) -> Tree<ClassDistribution> {
            match n {
                Node::Leaf { stats, .. } => Tree::Leaf(stats.distribution()),
                Node::Internal { var, children, .. } => Tree::Node {
                    var: *var,
                    children: children.iter().map(rec).collect(),
                },
            }
        }
        rec(&self.root)
    }

    /// Snapshot with leaves replaced by their mean class value.
    pub fn freeze_values(&self) -> Tree<f64> {
        let values = self.class_values.clone().unwrap_or_default();
        self.freeze().map(&mut |d| d.mean(&values))
    }

    pub fn node_count(&self) -> usize {
        fn rec(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Internal { children, .. } => 1 + children.iter().map(rec).sum::<usize>(),
            }
        }
        rec(&self.root)
    }

    /// Installed tests with their χ² on the examples seen so far, in preorder.
    pub fn installed_tests(&self) -> Vec<(VarId, f64)> {
        fn rec(n: &Node, out: &mut Vec<(VarId, f64)>) {
            if let Node::Internal { var, installed_chi2, stats, children } = n {
                out.push((*var, stats.candidate_chi2(*var).unwrap_or(*installed_chi2)));
                children.iter().for_each(|c| rec(c, out));
            }
        }
        let mut out = Vec::new();
        rec(&self.root, &mut out);
        out
    }

    /// All stored examples as (attributes, class) pairs.
    pub fn stored_examples(&self) -> Vec<(Vec<usize>, usize)> {
        fn rec(n: &Node, out: &mut Vec<(Vec<usize>, usize)>) {
            match n {
                Node::Leaf { examples, .. } => {
                    out.extend(examples.iter().map(|e| (e.attrs.to_vec(), e.class)))
                }
                Node::Internal { children, .. } => children.iter().for_each(|c| rec(c, out)),
            }
        }
        let mut out = Vec::new();
        rec(&self.root, &mut out);
        out
    }

    /// Checks that node statistics agree with the examples stored below and
    /// that stored examples sit at the leaf their attributes lead to.
    pub fn check_consistency(&self) -> Result<()> {
        fn rec(n: &Node, path: &mut Vec<(VarId, usize)>) -> Result<u64> {
            match n {
                Node::Leaf { stats, examples } => {
                    for e in examples {
                        if path.iter().any(|&(v, x)| e.attrs[v] != x) {
                            return Err(Error::Consistency("example stored at a leaf its attributes do not reach".into()));
                        }
                    }
                    if stats.total() != examples.len() as u64 {
                        return Err(Error::Consistency("leaf count differs from stored examples".into()));
                    }
                    Ok(stats.total())
                }
                Node::Internal { var, stats, children, .. } => {
                    let mut sum = 0;
                    for (k, c) in children.iter().enumerate() {
                        path.push((*var, k));
                        sum += rec(c, path)?;
                        path.pop();
                    }
                    if sum != stats.total() {
                        return Err(Error::Consistency("internal count differs from its children".into()));
                    }
                    for v in stats.candidates() {
                        if stats.table(v).map(ContingencyTable::total) != Some(sum) {
                            return Err(Error::Consistency("table total differs from node count".into()));
                        }
                    }
                    Ok(sum)
                }
            }
        }
        let total = rec(&self.root, &mut Vec::new())?;
        if total != self.counters.examples {
            return Err(Error::Consistency(format!(
                "{total} stored examples, {} ingested",
                self.counters.examples
            )));
        }
        Ok(())
    }
}

fn insert(
    node: &mut Node,
    ex: Example,
    arities: &[usize],
    num_classes: usize,
    config: &InductionConfig,
    excluded: &mut [bool],
) {
    match node {
        Node::Internal { var, stats, children, .. } => {
            stats.add(&ex.attrs, ex.class);
            let v = ex.attrs[*var];
            excluded[*var] = true;
            insert(&mut children[v], ex, arities, num_classes, config, excluded);
        }
        Node::Leaf { stats, examples } => {
            stats.add(&ex.attrs, ex.class);
            examples.push(ex);
            let can_split = best_test(stats).is_some_and(|(_, c)| split_decision(c, config));
            if can_split {
                let old = std::mem::replace(examples, Vec::new());
                *node = build(old, arities, num_classes, config, excluded);
            }
        }
    }
}

/// Batch top-down construction from a set of examples.
fn build(
    examples: Vec<Example>,
    arities: &[usize],
    num_classes: usize,
    config: &InductionConfig,
    excluded: &mut [bool],
) -> Node {
    let mut stats = NodeStatistics::new(arities, num_classes, excluded);
    for e in &examples {
        stats.add(&e.attrs, e.class);
    }
    match best_test(&stats) {
        Some((var, chi2)) if split_decision(chi2, config) => {
            let mut parts: Vec<Vec<Example>> = (0..arities[var]).map(|_| Vec::new()).collect();
            for e in examples {
                parts[e.attrs[var]].push(e);
            }
            excluded[var] = true;
            let children = parts
                .into_iter()
                .map(|p| build(p, arities, num_classes, config, excluded))
                .collect();
            excluded[var] = false;
            Node::Internal { var, installed_chi2: chi2, stats, children }
        }
        _ => Node::Leaf { stats, examples },
    }
}

fn needs_rebuild(var: VarId, stats: &NodeStatistics, config: &InductionConfig) -> bool {
    let installed = stats.candidate_chi2(var).unwrap_or(0.0);
    if !split_decision(installed, config) {
        return true;
    }
    match best_test(stats) {
        Some((best_var, best)) => best_var != var && installed <= best - config.restructure_margin,
        None => false,
    }
}

fn rebuild(node: &mut Node, arities: &[usize], num_classes: usize, config: &InductionConfig, excluded: &mut [bool]) {
    let placeholder = Node::Leaf { stats: NodeStatistics { classes: Vec::new(), tables: Vec::new() }, examples: Vec::new() };
    let old = std::mem::replace(node, placeholder);
    let mut examples = Vec::new();
    old.drain_examples(&mut examples);
    *node = build(examples, arities, num_classes, config, excluded);
}

/// Top-down check along the path of `attrs`; returns whether a rebuild
/// happened.
fn ensure_path(
    node: &mut Node,
    attrs: &[usize],
    arities: &[usize],
    num_classes: usize,
    config: &InductionConfig,
    excluded: &mut [bool],
) -> bool {
    let (var, rebuild_here) = match node {
        Node::Leaf { .. } => return false,
        Node::Internal { var, stats, .. } => (*var, needs_rebuild(*var, stats, config)),
    };
    if rebuild_here {
        rebuild(node, arities, num_classes, config, excluded);
        return true;
    }
    let Node::Internal { children, .. } = node else { unreachable!() };
    excluded[var] = true;
    let r = ensure_path(&mut children[attrs[var]], attrs, arities, num_classes, config, excluded);
    excluded[var] = false;
    r
}

fn ensure_all(
    node: &mut Node,
    arities: &[usize],
    num_classes: usize,
    config: &InductionConfig,
    excluded: &mut [bool],
) -> u64 {
    match node {
        Node::Leaf { stats, .. } => {
            if best_test(stats).is_some_and(|(_, c)| split_decision(c, config)) {
                rebuild(node, arities, num_classes, config, excluded);
                1
            } else {
                0
            }
        }
        Node::Internal { var, stats, .. } => {
            let var = *var;
            if needs_rebuild(var, stats, config) {
                rebuild(node, arities, num_classes, config, excluded);
                return 1;
            }
            let Node::Internal { children, .. } = node else { unreachable!() };
            excluded[var] = true;
            let n = children
                .iter_mut()
                .map(|c| ensure_all(c, arities, num_classes, config, excluded))
                .sum();
            excluded[var] = false;
            n
        }
    }
}
