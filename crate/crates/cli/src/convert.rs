//! Best-effort conversion of a boosted-tree text dump, e.g.
//!
//! ```text
//! booster[0]:
//! 0:[f2<0.5] yes=1,no=2,missing=1
//!     1:leaf=0.3
//!     2:leaf=-0.1
//! ```
//!
//! Features must be binary. A split `[f<t]` with `0 < t <= 1` sends 0 to
//! `yes` and 1 to `no`; other thresholds send both values the same way and
//! the split is collapsed. Missing-value routing is ignored.

use std::collections::HashMap;
use std::fs;

use suffx_core::{Ensemble, Tree, TreeNode};

use crate::error::{CliError, CliResult};
use crate::input::load_instances;
use crate::RunConfig;

#[derive(Debug, Clone, PartialEq)]
enum DumpNode {
    Split { feature: String, threshold: f64, yes: usize, no: usize },
    Leaf(f64),
}

fn parse_line(line: &str) -> Result<(usize, DumpNode), String> {
    let (id, rest) = line
        .split_once(':')
        .ok_or_else(|| format!("missing node id in {line:?}"))?;
    let id: usize = id.trim().parse().map_err(|_| format!("bad node id in {line:?}"))?;
    let rest = rest.trim();
    if let Some(leaf) = rest.strip_prefix("leaf=") {
        let value = leaf.split(',').next().unwrap_or("");
        let w: f64 = value.parse().map_err(|_| format!("bad leaf value in {line:?}"))?;
        return Ok((id, DumpNode::Leaf(w)));
    }
    let inner = rest
        .strip_prefix('[')
        .and_then(|r| r.split_once(']'))
        .ok_or_else(|| format!("expected [feature<threshold] in {line:?}"))?;
    let (cond, links) = inner;
    let (feature, threshold) = cond
        .split_once('<')
        .ok_or_else(|| format!("only '<' splits are supported: {line:?}"))?;
    let threshold: f64 = threshold
        .trim()
        .parse()
        .map_err(|_| format!("bad threshold in {line:?}"))?;
    let mut yes = None;
    let mut no = None;
    for part in links.split(',') {
        if let Some((k, v)) = part.trim().split_once('=') {
            let v = v.trim().parse::<usize>().ok();
            match k.trim() {
                "yes" => yes = v,
                "no" => no = v,
                _ => {}
            }
        }
    }
    match (yes, no) {
        (Some(yes), Some(no)) => Ok((
            id,
            DumpNode::Split {
                feature: feature.trim().to_string(),
                threshold,
                yes,
                no,
            },
        )),
        _ => Err(format!("missing yes/no children in {line:?}")),
    }
}

/// Parses all boosters of a dump; each is a map from node id to node.
fn parse_dump(text: &str) -> Result<Vec<HashMap<usize, DumpNode>>, String> {
    let mut trees: Vec<HashMap<usize, DumpNode>> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if line.starts_with("booster") {
            trees.push(HashMap::new());
            continue;
        }
        if trees.is_empty() {
            trees.push(HashMap::new());
        }
        let (id, node) = parse_line(line)?;
        if trees.last_mut().unwrap().insert(id, node).is_some() {
            return Err(format!("node {id} defined twice"));
        }
    }
    if trees.is_empty() {
        return Err("no trees in dump".into());
    }
    Ok(trees)
}

fn resolve_feature(name: &str, names: Option<&[String]>) -> Result<usize, String> {
    if let Some(i) = names.and_then(|ns| ns.iter().position(|n| n == name)) {
        return Ok(i);
    }
    name.strip_prefix('f')
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| format!("unknown feature {name:?}"))
}

fn build_tree(dump: &HashMap<usize, DumpNode>, names: Option<&[String]>) -> Result<(Tree, usize), String> {
    fn go(
        dump: &HashMap<usize, DumpNode>,
        id: usize,
        names: Option<&[String]>,
        out: &mut Vec<TreeNode>,
        max_feature: &mut usize,
        depth: usize,
    ) -> Result<usize, String> {
        if depth > dump.len() {
            return Err("cycle in dump".into());
        }
        let node = dump.get(&id).ok_or_else(|| format!("missing node {id}"))?;
        match node {
            DumpNode::Leaf(w) => {
                out.push(TreeNode::Leaf { weight: *w });
                Ok(out.len() - 1)
            }
            DumpNode::Split { feature, threshold, yes, no } => {
                if *threshold > 1.0 {
                    return go(dump, *yes, names, out, max_feature, depth + 1);
                }
                if *threshold <= 0.0 {
                    return go(dump, *no, names, out, max_feature, depth + 1);
                }
                let feature = resolve_feature(feature, names)?;
                *max_feature = (*max_feature).max(feature + 1);
                let slot = out.len();
                out.push(TreeNode::Leaf { weight: 0.0 });
                let false_child = go(dump, *yes, names, out, max_feature, depth + 1)?;
                let true_child = go(dump, *no, names, out, max_feature, depth + 1)?;
                out[slot] = TreeNode::Split { feature, false_child, true_child };
                Ok(slot)
            }
        }
    }
    let mut nodes = Vec::new();
    let mut max_feature = 0;
    let root = go(dump, 0, names, &mut nodes, &mut max_feature, 0)?;
    Ok((Tree::new(nodes, root), max_feature))
}

/// Converts dump text into an ensemble with decision threshold 0.
pub fn convert_dump(
    text: &str,
    names: Option<&[String]>,
    features: Option<usize>,
    base_score: f64,
) -> CliResult<Ensemble> {
    let dumps = parse_dump(text).map_err(CliError::Parse)?;
    let mut trees = Vec::with_capacity(dumps.len());
    let mut needed = 0;
    for (i, d) in dumps.iter().enumerate() {
        let (tree, max_feature) = build_tree(d, names).map_err(|e| CliError::Parse(format!("booster {i}: {e}")))?;
        needed = needed.max(max_feature);
        trees.push(tree);
    }
    let n = features.or(names.map(<[String]>::len)).unwrap_or(needed);
    if needed > n {
        return Err(CliError::Parse(format!("dump uses feature {} but n = {n}", needed - 1)));
    }
    Ok(Ensemble::new(n, trees, base_score, 0.0)?)
}

pub fn cmd_convert(cfg: &RunConfig) -> CliResult<String> {
    let path = cfg
        .ensemble_path
        .as_deref()
        .ok_or_else(|| CliError::Usage("--ensemble (the dump file) is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::input(&path.display().to_string(), e))?;
    let names = match &cfg.instances_path {
        Some(p) => Some(load_instances(p)?.names),
        None => None,
    };
    let e = convert_dump(&text, names.as_deref(), cfg.features, cfg.base_score)?;
    let mut out = e.to_json();
    out.push('\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUMP: &str = "booster[0]:\n0:[f1<0.5] yes=1,no=2,missing=1\n\t1:leaf=0.25\n\t2:[f0<0.5] yes=3,no=4,missing=3\n\t\t3:leaf=-0.5\n\t\t4:leaf=1\nbooster[1]:\n0:leaf=0.125\n";

    #[test]
    fn converts_splits_and_leaves() {
        let e = convert_dump(DUMP, None, None, 0.0).unwrap();
        assert_eq!(e.num_features(), 2);
        assert_eq!(e.trees().len(), 2);
        assert_eq!(e.log_odds_full(&[false, false]), 0.375);
        assert_eq!(e.log_odds_full(&[false, true]), -0.375);
        assert_eq!(e.log_odds_full(&[true, true]), 1.125);
    }

    #[test]
    fn named_features_and_collapsed_splits() {
        let dump = "0:[age<2] yes=1,no=2\n1:[sex<0.5] yes=3,no=4\n2:leaf=9\n3:leaf=1\n4:leaf=2\n";
        let names = vec!["sex".to_string(), "age".to_string()];
        let e = convert_dump(dump, Some(&names), None, 0.5).unwrap();
        assert_eq!(e.log_odds_full(&[false, true]), 1.5);
        assert_eq!(e.log_odds_full(&[true, false]), 2.5);
    }

    #[test]
    fn malformed_dumps_fail() {
        assert!(convert_dump("", None, None, 0.0).is_err());
        assert!(convert_dump("0:[f0<0.5] yes=1\n1:leaf=0\n", None, None, 0.0).is_err());
        assert!(convert_dump("0:[f0<0.5] yes=1,no=2\n1:leaf=0\n", None, None, 0.0).is_err());
        assert!(convert_dump("0:[f3<0.5] yes=1,no=2\n1:leaf=0\n2:leaf=1\n", None, Some(2), 0.0).is_err());
    }
}
