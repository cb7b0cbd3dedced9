//! Task plans produced by the coordinator agent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::InvokeError;
use crate::guardrail::ReasonCode;
use crate::recorder::RecorderError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    pub depends_on: Vec<String>,
    pub capability: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskPlan {
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("coordinator output is not a valid plan: {0}")]
    Parse(String),
    #[error("plan has a dependency cycle through {0:?}")]
    Cyclic(Vec<String>),
    #[error("no registered worker for the capability of task `{0}`")]
    UnroutableCapability(String),
    #[error("worker for task `{0}` has no registered AIBOM")]
    AibomRefused(String),
    #[error("mid-stage guardrail rejected task `{task_id}`: {reason}")]
    GuardrailAbort { task_id: String, reason: ReasonCode },
    #[error("task `{task_id}`: {source}")]
    Invoke { task_id: String, source: InvokeError },
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

impl PlanError {
    pub fn code(&self) -> &'static str {
        match self {
            PlanError::Parse(_) => "plan_parse_error",
            PlanError::Cyclic(_) => "cyclic_plan",
            PlanError::UnroutableCapability(_) => "unroutable_capability",
            PlanError::AibomRefused(_) => "aibom_refused",
            PlanError::GuardrailAbort { reason, .. } => reason.as_str(),
            PlanError::Invoke { source, .. } => source.code(),
            PlanError::Recorder(_) => "recording_unavailable",
        }
    }
}

/// The fixed prompt sent to the coordinator.
pub fn planning_prompt(goal: &str) -> String {
    format!(
        "You are the coordinator agent. Break the goal into tasks.\n\
         Reply with only a JSON array. Each element is an object with keys \
         \"task_id\" (string), \"description\" (string), \"depends_on\" (array of task_id) \
         and \"capability\" (string).\n\
         Goal: {goal}"
    )
}

impl TaskPlan {
    /// Parses coordinator output and checks the plan invariants.
    pub fn parse(output: &str) -> Result<TaskPlan, PlanError> {
        let tasks: Vec<TaskSpec> =
            serde_json::from_str(output.trim()).map_err(|e| PlanError::Parse(e.to_string()))?;
        let plan = TaskPlan { tasks };
        plan.topo_order()?;
        Ok(plan)
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Kahn's algorithm; among ready tasks the smallest task id goes first.
    /// Returns indices into `tasks`.
    pub fn topo_order(&self) -> Result<Vec<usize>, PlanError> {
        let mut index = BTreeMap::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if t.task_id.is_empty() {
                return Err(PlanError::Parse(format!("task {i} has an empty task_id")));
            }
            if index.insert(t.task_id.as_str(), i).is_some() {
                return Err(PlanError::Parse(format!("duplicate task_id `{}`", t.task_id)));
            }
        }
        let mut pending: Vec<usize> = vec![0; self.tasks.len()];
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); self.tasks.len()];
        for (i, t) in self.tasks.iter().enumerate() {
            let deps: BTreeSet<&str> = t.depends_on.iter().map(String::as_str).collect();
            for d in deps {
                let &j = index
                    .get(d)
                    .ok_or_else(|| PlanError::Parse(format!("task `{}` depends on unknown `{d}`", t.task_id)))?;
                pending[i] += 1;
                dependents[j].push(i);
            }
        }
        let mut ready: BTreeSet<(&str, usize)> = self
            .tasks
            .iter()
            .enumerate()
            .filter(|(i, _)| pending[*i] == 0)
            .map(|(i, t)| (t.task_id.as_str(), i))
            .collect();
        let mut order = Vec::with_capacity(self.tasks.len());
        while let Some((_, i)) = ready.pop_first() {
            order.push(i);
            for &k in &dependents[i] {
                pending[k] -= 1;
                if pending[k] == 0 {
                    ready.insert((self.tasks[k].task_id.as_str(), k));
                }
            }
        }
        if order.len() < self.tasks.len() {
            let stuck = self
                .tasks
                .iter()
                .enumerate()
                .filter(|(i, _)| pending[*i] > 0)
                .map(|(_, t)| t.task_id.clone())
                .collect();
            return Err(PlanError::Cyclic(stuck));
        }
        Ok(order)
    }

    /// Tasks nothing else depends on, in execution order.
    pub fn sinks(&self) -> Result<Vec<&TaskSpec>, PlanError> {
        let used: BTreeSet<&str> = self.tasks.iter().flat_map(|t| t.depends_on.iter().map(String::as_str)).collect();
        Ok(self
            .topo_order()?
            .into_iter()
            .map(|i| &self.tasks[i])
            .filter(|t| !used.contains(t.task_id.as_str()))
            .collect())
    }
}

/// Task description followed by the results of its dependencies.
pub fn task_prompt(task: &TaskSpec, results: &BTreeMap<String, String>) -> String {
    if task.depends_on.is_empty() {
        return task.description.clone();
    }
    let mut prompt = format!("{}\n\nInputs:", task.description);
    for dep in &task.depends_on {
        let result = results.get(dep).map(String::as_str).unwrap_or_default();
        prompt.push_str(&format!("\n[{dep}] {result}"));
    }
    prompt
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, deps: &[&str]) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            description: format!("do {id}"),
            depends_on: deps.iter().map(|d| d.to_string()).collect(),
            capability: "work".into(),
        }
    }

    fn ids(plan: &TaskPlan) -> Vec<&str> {
        plan.topo_order()
            .unwrap()
            .into_iter()
            .map(|i| plan.tasks[i].task_id.as_str())
            .collect()
    }

    #[test]
    fn empty_array_is_empty_plan() {
        assert_eq!(TaskPlan::parse("[]").unwrap(), TaskPlan::default());
    }

    #[test]
    fn single_task_plan() {
        let plan =
            TaskPlan::parse(r#"[{"task_id":"t1","description":"x","depends_on":[],"capability":"summarise"}]"#).unwrap();
        assert_eq!(plan.tasks.len(), 1);
        assert_eq!(plan.tasks[0].capability, "summarise");
    }

    #[test]
    fn cycle_detected() {
        let out = r#"[{"task_id":"t1","description":"a","depends_on":["t2"],"capability":"c"},
                      {"task_id":"t2","description":"b","depends_on":["t1"],"capability":"c"}]"#;
        assert!(matches!(TaskPlan::parse(out), Err(PlanError::Cyclic(_))));
    }

    #[test]
    fn schema_violations_are_parse_errors() {
        for bad in [
            "not json",
            "{}",
            r#"[{"task_id":"t1"}]"#,
            r#"[{"task_id":"t1","description":"a","depends_on":[],"capability":"c","extra":1}]"#,
            r#"[{"task_id":"t1","description":"a","depends_on":["zz"],"capability":"c"}]"#,
            r#"[{"task_id":"t1","description":"a","depends_on":[],"capability":"c"},
                {"task_id":"t1","description":"b","depends_on":[],"capability":"c"}]"#,
        ] {
            assert!(matches!(TaskPlan::parse(bad), Err(PlanError::Parse(_))), "{bad}");
        }
    }

    #[test]
    fn diamond_order_is_lexicographic() {
        let plan = TaskPlan {
            tasks: vec![task("t4", &["t2", "t3"]), task("t3", &["t1"]), task("t2", &["t1"]), task("t1", &[])],
        };
        assert_eq!(ids(&plan), vec!["t1", "t2", "t3", "t4"]);
        let sinks: Vec<_> = plan.sinks().unwrap().into_iter().map(|t| t.task_id.as_str()).collect();
        assert_eq!(sinks, vec!["t4"]);
    }

    #[test]
    fn self_dependency_is_a_cycle() {
        let plan = TaskPlan { tasks: vec![task("a", &["a"])] };
        assert_eq!(plan.topo_order(), Err(PlanError::Cyclic(vec!["a".into()])));
    }

    #[test]
    fn task_prompt_lists_inputs() {
        let mut results = BTreeMap::new();
        results.insert("t2".to_string(), "two".to_string());
        results.insert("t3".to_string(), "three".to_string());
        assert_eq!(task_prompt(&task("t1", &[]), &results), "do t1");
        assert_eq!(
            task_prompt(&task("t4", &["t2", "t3"]), &results),
            "do t4\n\nInputs:\n[t2] two\n[t3] three"
        );
    }

    #[test]
    fn parse_is_deterministic() {
        let out = r#" [{"task_id":"b","description":"x","depends_on":[],"capability":"c"}] "#;
        let a = serde_json::to_vec(&TaskPlan::parse(out).unwrap()).unwrap();
        let b = serde_json::to_vec(&TaskPlan::parse(out).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
