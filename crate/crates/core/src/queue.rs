//! Durable task queue with per-key deduplication and per-term ordering.
//!
//! Tasks live in the store, so a file-backed deployment keeps its backlog
//! across restarts. A claimed task holds a lease; if the worker dies the lease
//! expires and the task becomes claimable again (at-least-once execution).
//! Tasks that share a `term` run one at a time in enqueue order.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Clock;
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Running,
    Done,
    Dead,
}

impl TaskState {
    fn is_pending(self) -> bool {
        matches!(self, TaskState::Queued | TaskState::Running)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: u64,
    pub dedup_key: String,
    pub term: Option<String>,
    pub kind: String,
    pub payload: Value,
    pub attempts: u32,
    pub state: TaskState,
    pub enqueued_at: DateTime<Utc>,
    pub run_after: DateTime<Utc>,
    pub lease_expires: Option<DateTime<Utc>>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskTable {
    tasks: BTreeMap<u64, Task>,
    by_key: BTreeMap<String, u64>,
    next_id: u64,
}

impl TaskTable {
    pub fn get(&self, task_id: u64) -> Option<&Task> {
        self.tasks.get(&task_id)
    }

    pub fn by_dedup_key(&self, key: &str) -> Option<&Task> {
        self.by_key.get(key).and_then(|id| self.tasks.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: i32,
    pub max_attempts: u32,
    pub lease: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::seconds(2),
            factor: 4,
            max_attempts: 5,
            lease: Duration::seconds(60),
        }
    }
}

impl RetryPolicy {
    /// Delay before the next run after `attempts` failed executions.
    pub fn backoff(&self, attempts: u32) -> Duration {
        let exponent = attempts.saturating_sub(1).min(16);
        self.base * self.factor.pow(exponent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enqueued {
    pub task: Task,
    /// False when an existing live task with the same key was returned.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProcessOutcome {
    /// Nothing is due.
    Idle,
    Done { task_id: u64, attempts: u32 },
    Retry { task_id: u64, attempts: u32, run_after: DateTime<Utc> },
    Dead { task_id: u64, attempts: u32, error: String },
}

pub struct TaskQueue {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    policy: RetryPolicy,
}

impl TaskQueue {
    pub fn new(store: Arc<Store>, clock: Arc<dyn Clock>, policy: RetryPolicy) -> Self {
        TaskQueue { store, clock, policy }
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn enqueue(
        &self,
        kind: &str,
        payload: Value,
        dedup_key: &str,
        term: Option<&str>,
    ) -> Result<Enqueued, StoreError> {
        let now = self.clock.now();
        self.store.write(|state| {
            let table = &mut state.tasks;
            if let Some(existing) = table.by_dedup_key(dedup_key) {
                if existing.state != TaskState::Dead {
                    return Ok(Enqueued {
                        task: existing.clone(),
                        created: false,
                    });
                }
            }
            table.next_id += 1;
            let task = Task {
                task_id: table.next_id,
                dedup_key: dedup_key.to_string(),
                term: term.map(str::to_string),
                kind: kind.to_string(),
                payload,
                attempts: 0,
                state: TaskState::Queued,
                enqueued_at: now,
                run_after: now,
                lease_expires: None,
                last_error: None,
            };
            table.by_key.insert(task.dedup_key.clone(), task.task_id);
            table.tasks.insert(task.task_id, task.clone());
            Ok(Enqueued { task, created: true })
        })
    }

    /// Lease the oldest runnable task, honouring per-term order.
    pub fn claim(&self) -> Result<Option<Task>, StoreError> {
        let now = self.clock.now();
        let policy = self.policy;
        self.store.write(|state| {
            let mut blocked: HashSet<String> = HashSet::new();
            let mut chosen = None;
            for task in state.tasks.tasks.values_mut() {
                if !task.state.is_pending() {
                    continue;
                }
                let lease_lapsed = task.state == TaskState::Running && task.lease_expires.is_some_and(|t| t <= now);
                if lease_lapsed && task.attempts >= policy.max_attempts {
                    task.state = TaskState::Dead;
                    task.lease_expires = None;
                    task.last_error = Some("lease expired on final attempt".into());
                    continue;
                }
                let runnable = (task.state == TaskState::Queued && task.run_after <= now) || lease_lapsed;
                let free = task.term.as_ref().is_none_or(|t| !blocked.contains(t));
                if runnable && free {
                    task.state = TaskState::Running;
                    task.attempts += 1;
                    task.lease_expires = Some(now + policy.lease);
                    chosen = Some(task.clone());
                    break;
                }
                if let Some(term) = &task.term {
                    blocked.insert(term.clone());
                }
            }
            Ok(chosen)
        })
    }

    /// Record the result of running a claimed task.
    pub fn finish(&self, task_id: u64, result: Result<(), String>) -> Result<ProcessOutcome, StoreError> {
        let now = self.clock.now();
        let policy = self.policy;
        self.store.write(|state| {
            let Some(task) = state.tasks.tasks.get_mut(&task_id) else {
                return Ok(ProcessOutcome::Idle);
            };
            if task.state != TaskState::Running {
                // A stale worker whose lease was taken over.
                return Ok(ProcessOutcome::Idle);
            }
            task.lease_expires = None;
            Ok(match result {
                Ok(()) => {
                    task.state = TaskState::Done;
                    task.last_error = None;
                    ProcessOutcome::Done {
                        task_id,
                        attempts: task.attempts,
                    }
                }
                Err(error) if task.attempts >= policy.max_attempts => {
                    task.state = TaskState::Dead;
                    task.last_error = Some(error.clone());
                    ProcessOutcome::Dead {
                        task_id,
                        attempts: task.attempts,
                        error,
                    }
                }
                Err(error) => {
                    task.state = TaskState::Queued;
                    task.run_after = now + policy.backoff(task.attempts);
                    task.last_error = Some(error);
                    ProcessOutcome::Retry {
                        task_id,
                        attempts: task.attempts,
                        run_after: task.run_after,
                    }
                }
            })
        })
    }

    pub fn process_next<F>(&self, handler: F) -> Result<ProcessOutcome, StoreError>
    where
        F: FnOnce(&Task) -> Result<(), String>,
    {
        match self.claim()? {
            None => Ok(ProcessOutcome::Idle),
            Some(task) => {
                let result = handler(&task);
                self.finish(task.task_id, result)
            }
        }
    }

    pub fn get(&self, task_id: u64) -> Option<Task> {
        self.store.read(|s| s.tasks.get(task_id).cloned())
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.store.read(|s| s.tasks.iter().cloned().collect())
    }

    pub fn pending(&self) -> usize {
        self.store
            .read(|s| s.tasks.iter().filter(|t| t.state.is_pending()).count())
    }

    /// Earliest moment a queued task becomes runnable.
    pub fn next_due(&self) -> Option<DateTime<Utc>> {
        self.store.read(|s| {
            s.tasks
                .iter()
                .filter_map(|t| match t.state {
                    TaskState::Queued => Some(t.run_after),
                    TaskState::Running => t.lease_expires,
                    _ => None,
                })
                .min()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use serde_json::json;

    fn queue() -> (TaskQueue, ManualClock) {
        let clock = ManualClock::default();
        let q = TaskQueue::new(Arc::new(Store::memory()), Arc::new(clock.clone()), RetryPolicy::default());
        (q, clock)
    }

    #[test]
    fn dedup_by_key() {
        let (q, _) = queue();
        let a = q.enqueue("webhook", json!({}), "d-1", None).unwrap();
        let b = q.enqueue("webhook", json!({}), "d-1", None).unwrap();
        assert!(a.created);
        assert!(!b.created);
        assert_eq!(a.task.task_id, b.task.task_id);
        let c = q.enqueue("webhook", json!({}), "d-2", None).unwrap();
        assert_ne!(c.task.task_id, a.task.task_id);
        assert_eq!(q.tasks().len(), 2);
    }

    #[test]
    fn same_term_waits_for_running_task() {
        let (q, _) = queue();
        q.enqueue("k", json!(1), "a", Some("hpc")).unwrap();
        q.enqueue("k", json!(2), "b", Some("hpc")).unwrap();
        q.enqueue("k", json!(3), "c", Some("other")).unwrap();
        let first = q.claim().unwrap().unwrap();
        assert_eq!(first.dedup_key, "a");
        let next = q.claim().unwrap().unwrap();
        assert_eq!(next.dedup_key, "c", "hpc task must wait");
        assert!(q.claim().unwrap().is_none());
        q.finish(first.task_id, Ok(())).unwrap();
        assert_eq!(q.claim().unwrap().unwrap().dedup_key, "b");
    }

    #[test]
    fn retries_then_succeeds() {
        let (q, clock) = queue();
        let id = q.enqueue("k", json!({}), "a", None).unwrap().task.task_id;
        let mut failures = 2;
        loop {
            let outcome = q
                .process_next(|_| {
                    if failures > 0 {
                        failures -= 1;
                        Err("nope".into())
                    } else {
                        Ok(())
                    }
                })
                .unwrap();
            match outcome {
                ProcessOutcome::Done { attempts, .. } => {
                    assert_eq!(attempts, 3);
                    break;
                }
                ProcessOutcome::Retry { .. } => {}
                ProcessOutcome::Idle => clock.advance(Duration::seconds(1)),
                other => panic!("unexpected {other:?}"),
            }
        }
        let task = q.get(id).unwrap();
        assert_eq!(task.state, TaskState::Done);
        assert_eq!(task.attempts, 3);
    }

    #[test]
    fn backoff_schedule() {
        let (q, clock) = queue();
        q.enqueue("k", json!({}), "a", None).unwrap();
        let start = clock.now();
        let mut delays = Vec::new();
        loop {
            match q.process_next(|_| Err("always".into())).unwrap() {
                ProcessOutcome::Retry { run_after, .. } => {
                    delays.push((run_after - clock.now()).num_seconds());
                    clock.set(run_after);
                }
                ProcessOutcome::Dead { attempts, .. } => {
                    assert_eq!(attempts, 5);
                    break;
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(delays, vec![2, 8, 32, 128]);
        assert_eq!((clock.now() - start).num_seconds(), 170);
        assert_eq!(q.tasks()[0].state, TaskState::Dead);
    }

    #[test]
    fn retrying_task_still_blocks_its_term() {
        let (q, clock) = queue();
        q.enqueue("k", json!({}), "t1", Some("hpc")).unwrap();
        q.enqueue("k", json!({}), "t2", Some("hpc")).unwrap();
        assert!(matches!(q.process_next(|_| Err("x".into())).unwrap(), ProcessOutcome::Retry { .. }));
        assert_eq!(q.process_next(|_| Ok(())).unwrap(), ProcessOutcome::Idle);
        clock.advance(Duration::seconds(2));
        let done = q.process_next(|t| {
            assert_eq!(t.dedup_key, "t1");
            Ok(())
        });
        assert!(matches!(done.unwrap(), ProcessOutcome::Done { .. }));
    }

    #[test]
    fn lease_expiry_makes_task_claimable_again() {
        let (q, clock) = queue();
        q.enqueue("k", json!({}), "a", Some("hpc")).unwrap();
        let crashed = q.claim().unwrap().unwrap();
        assert!(q.claim().unwrap().is_none());
        clock.advance(Duration::seconds(61));
        let again = q.claim().unwrap().unwrap();
        assert_eq!(again.task_id, crashed.task_id);
        assert_eq!(again.attempts, 2);
    }

    #[test]
    fn dead_key_can_be_enqueued_again() {
        let (q, clock) = queue();
        q.enqueue("k", json!({}), "a", None).unwrap();
        for _ in 0..5 {
            clock.advance(Duration::seconds(200));
            q.process_next(|_| Err("x".into())).unwrap();
        }
        assert_eq!(q.tasks()[0].state, TaskState::Dead);
        assert!(q.enqueue("k", json!({}), "a", None).unwrap().created);
    }
}
