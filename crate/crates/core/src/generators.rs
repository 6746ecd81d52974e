//! Benchmark problem families and the bundled problem files.

use crate::error::{Error, Result};
use crate::model::{Distribution, InitialRule, ProblemSpec, Variable, ENUMERATION_CAP};
use crate::problem_file::{parse_problem, persistence_cpd};
use crate::tree::{Tree, VarId};

pub const COFFEE_ROBOT: &str = include_str!("../problems/coffee_robot.json");
pub const PROCESS_PLANNING: &str = include_str!("../problems/process_planning.json");

const TRUE: [f64; 2] = [0.0, 1.0];
const FALSE: [f64; 2] = [1.0, 0.0];

fn sure(p: [f64; 2]) -> Tree<Distribution> {
    Tree::leaf(p.to_vec())
}

/// Tests X_0..X_{k-1} in order; `enabled` is reached when all are true,
/// `disabled(m)` when X_m is the first false one.
fn chain<L>(k: usize, enabled: Tree<L>, disabled: &impl Fn(VarId) -> Tree<L>) -> Tree<L> {
    let mut tree = enabled;
    for m in (0..k).rev() {
        tree = Tree::node(m, vec![disabled(m), tree]);
    }
    tree
}

/// Persistence of X_j where the path so far has fixed X_0..X_m: X_0..X_{m-1}
/// true and X_m false.
fn persist_after(j: VarId, m: VarId) -> Tree<Distribution> {
    use std::cmp::Ordering::*;
    match j.cmp(&m) {
        Less => sure(TRUE),
        Equal => sure(FALSE),
        Greater => persistence_cpd(j, 2),
    }
}

fn family(name: String, n: usize, cpds: Vec<Vec<Tree<Distribution>>>, goal: Tree<f64>, terminal: Tree<bool>) -> ProblemSpec {
    let pairs = (1u128 << n) * n as u128;
    ProblemSpec {
        name,
        variables: (1..=n).map(|i| Variable::binary(format!("x{i}"))).collect(),
        actions: (1..=n).map(|k| format!("a{k}")).collect(),
        cpds,
        reward: goal,
        terminal,
        discount: 0.9,
        // every non-terminal state of these families can reach the goal, so
        // the two rules agree; reachability is only computed when feasible
        initial: if pairs <= ENUMERATION_CAP { InitialRule::Reachable } else { InitialRule::NonTerminal },
        r_max: Some(1.0),
    }
}

fn check_size(n: usize) -> Result<()> {
    if !(2..=64).contains(&n) {
        return Err(Error::Validation(format!("family size {n} outside 2..=64")));
    }
    Ok(())
}

/// Linear(n): a_k makes X_k true when X_1..X_{k-1} are all true and has no
/// effect otherwise. Reward 1 and termination when X_n is true.
pub fn gen_linear(n: usize) -> Result<ProblemSpec> {
    check_size(n)?;
    let cpds = (0..n)
        .map(|k| {
            (0..n)
                .map(|j| {
                    if j == k {
                        chain(k, sure(TRUE), &|m| persist_after(j, m))
                    } else {
                        persistence_cpd(j, 2)
                    }
                })
                .collect()
        })
        .collect();
    let last = n - 1;
    Ok(family(
        format!("linear{n}"),
        n,
        cpds,
        Tree::node(last, vec![Tree::leaf(0.0), Tree::leaf(1.0)]),
        Tree::node(last, vec![Tree::leaf(false), Tree::leaf(true)]),
    ))
}

/// Expon(n): a binary counter. a_k, when X_1..X_{k-1} are all true, sets X_k
/// and clears X_1..X_{k-1}. Reward 1 and termination when every variable is
/// true.
pub fn gen_expon(n: usize) -> Result<ProblemSpec> {
    check_size(n)?;
    let cpds = (0..n)
        .map(|k| {
            (0..n)
                .map(|j| {
                    if j == k {
                        chain(k, sure(TRUE), &|m| persist_after(j, m))
                    } else if j < k {
                        chain(k, sure(FALSE), &|m| persist_after(j, m))
                    } else {
                        persistence_cpd(j, 2)
                    }
                })
                .collect()
        })
        .collect();
    Ok(family(
        format!("expon{n}"),
        n,
        cpds,
        chain(n, Tree::leaf(1.0), &|_| Tree::leaf(0.0)),
        chain(n, Tree::leaf(true), &|_| Tree::leaf(false)),
    ))
}

/// Noisy(n, θ): Linear(n) where every outcome is inverted with probability θ.
pub fn gen_noisy(n: usize, theta: f64) -> Result<ProblemSpec> {
    if !(theta > 0.0 && theta < 0.5) {
        return Err(Error::Validation(format!("noise level {theta} outside (0, 0.5)")));
    }
    Ok(add_noise(gen_linear(n)?, theta))
}

/// Applies p ↦ p(1−θ) + (1−p)θ to every binary CPD leaf.
pub fn add_noise(mut spec: ProblemSpec, theta: f64) -> ProblemSpec {
    for row in &mut spec.cpds {
        for cpd in row.iter_mut() {
            *cpd = cpd.map(&mut |d: &Distribution| {
                let p = d[1] * (1.0 - theta) + (1.0 - d[1]) * theta;
                vec![1.0 - p, p]
            });
        }
    }
    spec.name = format!("{}_noisy", spec.name);
    spec
}

pub fn coffee_robot() -> ProblemSpec {
    parse_problem(COFFEE_ROBOT).expect("bundled problem file is valid")
}

pub fn process_planning() -> ProblemSpec {
    parse_problem(PROCESS_PLANNING).expect("bundled problem file is valid")
}

/// True parent sets of Linear-family CPDs (shared by the noisy variant).
/// a_1 sets X_1 unconditionally, so that CPD has no parents.
pub fn linear_parents(n: usize) -> Vec<Vec<std::collections::BTreeSet<VarId>>> {
    (0..n)
        .map(|k| {
            (0..n)
                .map(|j| match (j == k, k) {
                    (true, 0) => Default::default(),
                    (true, _) => (0..=k).collect(),
                    (false, _) => [j].into(),
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{extract_parents, ground_mdp, initial_states, InitialSet};
    use crate::tree::State;

    #[test]
    fn linear2_initial_states() {
        let spec = gen_linear(2).unwrap();
        spec.validate().unwrap();
        assert_eq!(
            initial_states(&spec).unwrap(),
            InitialSet::Explicit(vec![State(vec![0, 0]), State(vec![1, 0])])
        );
    }

    #[test]
    fn families_validate() {
        for n in 2..=6 {
            gen_linear(n).unwrap().validate().unwrap();
            gen_expon(n).unwrap().validate().unwrap();
            gen_noisy(n, 0.2).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn linear_parents_match_trees() {
        let spec = gen_linear(5).unwrap();
        assert_eq!(extract_parents(&spec.cpds).parents, linear_parents(5));
        let noisy = gen_noisy(5, 0.4).unwrap();
        assert_eq!(extract_parents(&noisy.cpds).parents, linear_parents(5));
    }

    #[test]
    fn noise_formula() {
        let spec = gen_noisy(3, 0.2).unwrap();
        assert_eq!(spec.cpds[0][0], Tree::leaf(vec![0.19999999999999996, 0.8]));
    }

    #[test]
    fn expon3_shortest_path_is_seven() {
        let spec = gen_expon(3).unwrap();
        let g = ground_mdp(&spec).unwrap();
        let mut dist = vec![usize::MAX; g.num_states()];
        dist[0] = 0;
        let mut frontier = vec![0];
        while let Some(s) = frontier.first().copied() {
            frontier.remove(0);
            for row in &g.transitions[s] {
                for &(t, _) in row {
                    if dist[t] == usize::MAX {
                        dist[t] = dist[s] + 1;
                        frontier.push(t);
                    }
                }
            }
        }
        assert_eq!(dist[7], 7);
    }

    #[test]
    fn bad_parameters() {
        assert!(gen_linear(1).is_err());
        assert!(gen_noisy(4, 0.5).is_err());
    }
}
