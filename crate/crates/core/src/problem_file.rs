//! JSON problem files and solution dumps.
//!
//! A problem file is one object:
//!
//! ```text
//! {
//!   "schema_version": 1,
//!   "name": "coffee",
//!   "discount": 0.9,
//!   "variables": [{"name": "huc", "values": ["false", "true"]}, ...],
//!   "actions": ["go", ...],
//!   "cpds": {"go": {"huc": <tree>, ...}, ...},
//!   "reward": <tree>,          // may test the pseudo-variable "action"
//!   "terminal": <tree>,        // boolean leaves
//!   "initial": "reachable" | "non_terminal" | {"states": [["false", ...], ...]},
//!   "r_max": 1.0
//! }
//! ```
//!
//! Trees are `{"leaf": payload}` or `{"test": name, "children": [...]}` with
//! one child per domain value, in declaration order. CPD leaves are
//! probability lists. A CPD left out of an action's table means the variable
//! keeps its value under that action.

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::model::{Distribution, InitialRule, ProblemSpec, Variable};
use crate::planner::{PolicyTree, ValueTree};
use crate::tree::{tree_from_json, tree_to_json, State, Tree, VarId};

pub const SCHEMA_VERSION: u64 = 1;

/// The reserved test name for the action attribute of reward trees.
pub const ACTION_ATTRIBUTE: &str = "action";

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Validation(format!("{at}: missing field {key:?}")))
}

fn as_str<'a>(v: &'a Value, at: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::Validation(format!("{at}: expected a string")))
}

fn as_array<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::Validation(format!("{at}: expected a list")))
}

fn as_f64(v: &Value, at: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Validation(format!("{at}: expected a number")))
}

fn check_version(obj: &Map<String, Value>) -> Result<()> {
    let version = field(obj, "schema_version", "document")?
        .as_u64()
        .ok_or_else(|| Error::Validation("schema_version: expected an integer".into()))?;
    if version != SCHEMA_VERSION {
        return Err(Error::Validation(format!(
            "schema_version {version} unsupported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn parse_variables(v: &Value) -> Result<Vec<Variable>> {
    let mut out: Vec<Variable> = Vec::new();
    for (i, item) in as_array(v, "variables")?.iter().enumerate() {
        let at = format!("variables[{i}]");
        let obj = item.as_object().ok_or_else(|| Error::Validation(format!("{at}: expected a record")))?;
        let name = as_str(field(obj, "name", &at)?, &format!("{at}.name"))?.to_string();
        if name == ACTION_ATTRIBUTE {
            return Err(Error::Validation(format!("{at}: {ACTION_ATTRIBUTE:?} is reserved")));
        }
        if out.iter().any(|o| o.name == name) {
            return Err(Error::Validation(format!("{at}: duplicate variable {name:?}")));
        }
        let values = as_array(field(obj, "values", &at)?, &format!("{at}.values"))?
            .iter()
            .map(|x| as_str(x, &format!("{at}.values")).map(String::from))
            .collect::<Result<Vec<_>>>()?;
        out.push(Variable { name, values });
    }
    Ok(out)
}

fn probability_leaf(arity: usize) -> impl Fn(&Value, &str) -> Result<Distribution> {
    move |v, at| {
        let ps = as_array(v, at)?
            .iter()
            .map(|p| as_f64(p, at))
            .collect::<Result<Vec<f64>>>()?;
        if ps.len() != arity {
            return Err(Error::Validation(format!("{at}: {} probabilities for {arity} values", ps.len())));
        }
        Ok(ps)
    }
}

/// CPD under which a variable keeps its current value.
pub fn persistence_cpd(var: VarId, arity: usize) -> Tree<Distribution> {
    Tree::node(
        var,
        (0..arity)
            .map(|k| {
                let mut p = vec![0.0; arity];
                p[k] = 1.0;
                Tree::leaf(p)
            })
            .collect(),
    )
}

fn parse_state(v: &Value, variables: &[Variable], at: &str) -> Result<State> {
    let items = as_array(v, at)?;
    if items.len() != variables.len() {
        return Err(Error::Validation(format!("{at}: {} values for {} variables", items.len(), variables.len())));
    }
    items
        .iter()
        .zip(variables)
        .map(|(x, var)| {
            let name = as_str(x, at)?;
            var.values
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| Error::Validation(format!("{at}: {name:?} is not a value of {:?}", var.name)))
        })
        .collect::<Result<Vec<usize>>>()
        .map(State)
}

/// Parses and validates a problem file.
pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let doc = parse_json(text)?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Validation("document: expected a record".into()))?;
    check_version(obj)?;
    let name = obj.get("name").and_then(Value::as_str).unwrap_or("unnamed").to_string();
    let discount = as_f64(field(obj, "discount", "document")?, "discount")?;
    let variables = parse_variables(field(obj, "variables", "document")?)?;
    let actions = as_array(field(obj, "actions", "document")?, "actions")?
        .iter()
        .map(|a| as_str(a, "actions").map(String::from))
        .collect::<Result<Vec<String>>>()?;
    for (i, a) in actions.iter().enumerate() {
        if actions[..i].contains(a) {
            return Err(Error::Validation(format!("actions: duplicate action {a:?}")));
        }
    }

    let resolve_state = |name: &str| {
        variables
            .iter()
            .position(|v| v.name == name)
            .map(|i| (i, variables[i].values.len()))
    };
    let resolve_reward = |name: &str| {
        if name == ACTION_ATTRIBUTE {
            Some((variables.len(), actions.len()))
        } else {
            resolve_state(name)
        }
    };

    let cpd_table = field(obj, "cpds", "document")?
        .as_object()
        .ok_or_else(|| Error::Validation("cpds: expected a record keyed by action".into()))?;
    for key in cpd_table.keys() {
        if !actions.contains(key) {
            return Err(Error::Validation(format!("cpds: unknown action {key:?}")));
        }
    }
    let mut cpds = Vec::with_capacity(actions.len());
    for action in &actions {
        let per_action = match cpd_table.get(action) {
            None => Map::new(),
            Some(v) => v
                .as_object()
                .cloned()
                .ok_or_else(|| Error::Validation(format!("cpds.{action}: expected a record keyed by variable")))?,
        };
        for key in per_action.keys() {
            if resolve_state(key).is_none() {
                return Err(Error::Validation(format!("cpds.{action}: unknown variable {key:?}")));
            }
        }
        let mut row = Vec::with_capacity(variables.len());
        for (i, var) in variables.iter().enumerate() {
            let tree = match per_action.get(&var.name) {
                None => persistence_cpd(i, var.values.len()),
                Some(t) => tree_from_json(
                    t,
                    &format!("cpds.{action}.{}", var.name),
                    &resolve_state,
                    &probability_leaf(var.values.len()),
                )?,
            };
            row.push(tree);
        }
        cpds.push(row);
    }

    let reward = tree_from_json(field(obj, "reward", "document")?, "reward", &resolve_reward, &|v, at| {
        as_f64(v, at)
    })?;
    let terminal = match obj.get("terminal") {
        None => Tree::leaf(false),
        Some(t) => tree_from_json(t, "terminal", &resolve_state, &|v, at| {
            v.as_bool()
                .ok_or_else(|| Error::Validation(format!("{at}: expected true or false")))
        })?,
    };
    let initial = match obj.get("initial") {
        None => InitialRule::Reachable,
        Some(Value::String(s)) if s == "reachable" => InitialRule::Reachable,
        Some(Value::String(s)) if s == "non_terminal" => InitialRule::NonTerminal,
        Some(Value::Object(o)) => {
            let states = as_array(field(o, "states", "initial")?, "initial.states")?
                .iter()
                .enumerate()
                .map(|(k, s)| parse_state(s, &variables, &format!("initial.states[{k}]")))
                .collect::<Result<Vec<State>>>()?;
            InitialRule::Explicit(states)
        }
        Some(_) => {
            return Err(Error::Validation(
                "initial: expected \"reachable\", \"non_terminal\" or {\"states\": [...]}".into(),
            ))
        }
    };
    let r_max = obj.get("r_max").map(|v| as_f64(v, "r_max")).transpose()?;

    let spec = ProblemSpec { name, variables, actions, cpds, reward, terminal, discount, initial, r_max };
    spec.validate()?;
    Ok(spec)
}

pub fn load_problem(path: &std::path::Path) -> Result<ProblemSpec> {
    parse_problem(&std::fs::read_to_string(path)?)
}

fn variables_json(spec: &ProblemSpec) -> Value {
    Value::Array(
        spec.variables
            .iter()
            .map(|v| json!({ "name": v.name, "values": v.values }))
            .collect(),
    )
}

/// Serializes a problem; every CPD is written out explicitly.
pub fn problem_to_json(spec: &ProblemSpec) -> Value {
    let names = spec.var_names();
    let mut reward_names = names.clone();
    reward_names.push(ACTION_ATTRIBUTE.into());
    let mut cpds = Map::new();
    for (a, action) in spec.actions.iter().enumerate() {
        let mut row = Map::new();
        for (i, var) in spec.variables.iter().enumerate() {
            row.insert(var.name.clone(), tree_to_json(&spec.cpds[a][i], &names, &|p| json!(p)));
        }
        cpds.insert(action.clone(), Value::Object(row));
    }
    let initial = match &spec.initial {
        InitialRule::Reachable => json!("reachable"),
        InitialRule::NonTerminal => json!("non_terminal"),
        InitialRule::Explicit(states) => json!({
            "states": states
                .iter()
                .map(|s| s.iter().zip(&spec.variables).map(|(&k, v)| v.values[k].clone()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        }),
    };
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "discount": spec.discount,
        "variables": variables_json(spec),
        "actions": spec.actions,
        "cpds": Value::Object(cpds),
        "reward": tree_to_json(&spec.reward, &reward_names, &|r| json!(r)),
        "terminal": tree_to_json(&spec.terminal, &names, &|b| json!(b)),
        "initial": initial,
    });
    if let Some(r) = spec.r_max {
        doc["r_max"] = json!(r);
    }
    doc
}

/// Value and policy trees of a solved problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub value: ValueTree,
    pub policy: PolicyTree,
}

pub fn solution_to_json(spec: &ProblemSpec, solution: &Solution) -> Value {
    let names = spec.var_names();
    json!({
        "schema_version": SCHEMA_VERSION,
        "problem": spec.name,
        "variables": variables_json(spec),
        "actions": spec.actions,
        "value": tree_to_json(&solution.value, &names, &|v| json!(v)),
        "policy": tree_to_json(&solution.policy, &names, &|&a| json!(spec.actions[a])),
    })
}

/// Reads a solution dump against the variable and action tables of `spec`.
pub fn parse_solution(text: &str, spec: &ProblemSpec) -> Result<Solution> {
    let doc = parse_json(text)?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Validation("document: expected a record".into()))?;
    check_version(obj)?;
    let variables = parse_variables(field(obj, "variables", "document")?)?;
    if variables != spec.variables {
        return Err(Error::Validation("variables differ from the problem's".into()));
    }
    let resolve = |name: &str| {
        spec.variables
            .iter()
            .position(|v| v.name == name)
            .map(|i| (i, spec.variables[i].values.len()))
    };
    let value = tree_from_json(field(obj, "value", "document")?, "value", &resolve, &|v, at| as_f64(v, at))?;
    let policy = tree_from_json(field(obj, "policy", "document")?, "policy", &resolve, &|v, at| {
        let name = as_str(v, at)?;
        spec.actions
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::Validation(format!("{at}: unknown action {name:?}")))
    })?;
    let domain = spec.domain();
    value.validate(&domain).map_err(|e| Error::Validation(format!("value: {e}")))?;
    policy.validate(&domain).map_err(|e| Error::Validation(format!("policy: {e}")))?;
    Ok(Solution { value, policy })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
      "schema_version": 1,
      "name": "small",
      "discount": 0.9,
      "variables": [{"name": "x", "values": ["f", "t"]}],
      "actions": ["set", "wait"],
      "cpds": {"set": {"x": {"leaf": [0.0, 1.0]}}},
      "reward": {"test": "action", "children": [{"leaf": 0.0}, {"test": "x", "children": [{"leaf": 0.0}, {"leaf": 1.0}]}]},
      "terminal": {"leaf": false}
    }"#;

    #[test]
    fn parses_and_defaults_to_persistence() {
        let spec = parse_problem(SMALL).unwrap();
        assert_eq!(spec.cpds[1][0], persistence_cpd(0, 2));
        assert_eq!(spec.true_reward(&[1], 1), 1.0);
        assert_eq!(spec.true_reward(&[1], 0), 0.0);
    }

    #[test]
    fn round_trip() {
        let spec = parse_problem(SMALL).unwrap();
        let again = parse_problem(&problem_to_json(&spec).to_string()).unwrap();
        assert_eq!(again.cpds, spec.cpds);
        assert_eq!(again.reward, spec.reward);
        assert_eq!(again.terminal, spec.terminal);
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_problem("{\n  \"schema_version\": 1,\n  oops }") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_sum_names_pair() {
        let text = SMALL.replace("[0.0, 1.0]", "[0.0, 0.9]");
        let err = parse_problem(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("(set, x)"), "{err}");
    }

    #[test]
    fn version_required() {
        let text = SMALL.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(parse_problem(&text), Err(Error::Validation(_))));
    }
}
