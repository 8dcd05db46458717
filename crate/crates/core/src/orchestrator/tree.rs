use serde::{Deserialize, Serialize};

use super::log::EventLog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub role: String,
    /// Round the task was delegated to this node; `None` for roots.
    pub delegated: Option<usize>,
    /// Round the node reported back; `None` is an open delegation.
    pub reported: Option<usize>,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    fn leaf(role: &str, delegated: Option<usize>) -> Self {
        Self {
            role: role.to_string(),
            delegated,
            reported: None,
            children: Vec::new(),
        }
    }

    pub fn is_open(&self) -> bool {
        self.delegated.is_some() && self.reported.is_none()
    }

    fn find_mut(&mut self, role: &str) -> Option<&mut TreeNode> {
        if self.role == role {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(role))
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a TreeNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }

    /// Compact shape, e.g. `CEO->CTO->{MM->PM}`.
    pub fn shape(&self) -> String {
        match self.children.len() {
            0 => self.role.clone(),
            1 => format!("{}->{}", self.role, self.children[0].shape()),
            _ => {
                let kids: Vec<String> = self.children.iter().map(TreeNode::shape).collect();
                format!("{}->[{}]", self.role, kids.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationTree {
    pub roots: Vec<TreeNode>,
}

impl DelegationTree {
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        for r in &self.roots {
            r.walk(&mut out);
        }
        out
    }

    pub fn open_count(&self) -> usize {
        self.nodes().iter().filter(|n| n.is_open()).count()
    }

    pub fn all_closed(&self) -> bool {
        self.open_count() == 0
    }

    fn find_mut(&mut self, role: &str) -> Option<&mut TreeNode> {
        self.roots.iter_mut().find_map(|r| r.find_mut(role))
    }

    pub fn render(&self) -> String {
        fn go(n: &TreeNode, depth: usize, out: &mut String) {
            out.push_str(&"  ".repeat(depth));
            out.push_str(&n.role);
            match (n.delegated, n.reported) {
                (Some(d), Some(r)) => out.push_str(&format!(" (delegated r{d}, reported r{r})")),
                (Some(d), None) => out.push_str(&format!(" (delegated r{d}, OPEN)")),
                _ => {}
            }
            out.push('\n');
            for c in &n.children {
                go(c, depth + 1, out);
            }
        }
        let mut out = String::new();
        for r in &self.roots {
            go(r, 0, &mut out);
        }
        out
    }
}

/// Rebuilds the tree from `delegate` and `report` events. Roles that act but
/// never receive a delegation become roots.
pub fn report_chain(log: &EventLog) -> DelegationTree {
    let mut tree = DelegationTree::default();
    let mut delegated_to: Vec<String> = Vec::new();
    for e in log.events() {
        if e.kind == "delegate" {
            if let Some(to) = e.detail["to"].as_array() {
                delegated_to.extend(to.iter().filter_map(|v| v.as_str()).map(String::from));
            }
        }
    }
    for e in log.events() {
        match e.kind.as_str() {
            "action" if !delegated_to.contains(&e.role) && tree.find_mut(&e.role).is_none() => {
                tree.roots.push(TreeNode::leaf(&e.role, None));
            }
            "delegate" => {
                if tree.find_mut(&e.role).is_none() {
                    tree.roots.push(TreeNode::leaf(&e.role, None));
                }
                let targets: Vec<String> = e.detail["to"]
                    .as_array()
                    .map(|a| a.iter().filter_map(|v| v.as_str()).map(String::from).collect())
                    .unwrap_or_default();
                for t in targets {
                    let parent = tree.find_mut(&e.role).expect("inserted above");
                    match parent.children.iter_mut().find(|c| c.role == t) {
                        // re-delegation reopens the node
                        Some(c) => {
                            c.delegated = Some(e.round);
                            c.reported = None;
                        }
                        None => parent.children.push(TreeNode::leaf(&t, Some(e.round))),
                    }
                }
            }
            "report" => {
                if let Some(n) = tree.find_mut(&e.role) {
                    if n.delegated.is_some() {
                        n.reported = Some(e.round);
                    }
                }
            }
            _ => {}
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::log::Phase;
    use serde_json::json;

    #[test]
    fn chain_with_open_marker() {
        let mut log = EventLog::new(0, "h");
        log.emit(1, Phase::Vertical, "CEO", "action", json!({}));
        log.emit(1, Phase::Vertical, "CEO", "delegate", json!({"to": ["CTO"]}));
        log.emit(1, Phase::Vertical, "CTO", "action", json!({}));
        log.emit(1, Phase::Vertical, "CTO", "delegate", json!({"to": ["MM"]}));
        log.emit(2, Phase::Vertical, "MM", "report", json!({"to": "CTO"}));
        let tree = report_chain(&log);
        assert_eq!(tree.roots.len(), 1);
        assert_eq!(tree.roots[0].shape(), "CEO->CTO->MM");
        assert_eq!(tree.open_count(), 1);
        assert!(tree.render().contains("CTO (delegated r1, OPEN)"));
    }

    #[test]
    fn single_role() {
        let mut log = EventLog::new(0, "h");
        log.emit(1, Phase::Vertical, "solo", "action", json!({}));
        log.emit(2, Phase::Vertical, "solo", "action", json!({}));
        let tree = report_chain(&log);
        assert_eq!(tree.nodes().len(), 1);
        assert!(tree.all_closed());
    }
}
