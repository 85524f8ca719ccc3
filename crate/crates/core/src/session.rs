//! The interactive improvement loop: one plan, its latest run, and the
//! suggestions the shadow pipelines derived from it.
//!
//! Mutations (apply, dismiss, plan edits) go through `&mut Session`. Shadow
//! analysis is split into [`Session::snapshot`], [`AnalysisJob::run`] and
//! [`Session::complete`] so that a server can run the shadows without holding
//! the session lock; results computed against an outdated run are dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::corpus::Dataset;
use crate::engine::{
    data_fingerprints, execute, execute_with, CallKind, EngineError, ExecOptions, LatencyConfig, RunResult,
};
use crate::ivm::{incremental_update_with, IvmError, MaintenanceReport};
use crate::plan::{apply_patch, PipelinePlan, PlanError};
use crate::shadow::{run_shadow, ShadowConfig, ShadowContext, ShadowKind};
use crate::suggest::{rank_suggestions, ExplanationTuple, Status, Suggestion};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown suggestion `{0}`")]
    UnknownSuggestion(String),
    #[error("suggestion `{id}` is {status:?}, not ready")]
    NotReady { id: String, status: Status },
    #[error("suggestion `{0}` was computed against an earlier plan")]
    Stale(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ivm(#[from] IvmError),
}

/// One point of the session's plan history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub event: String,
    pub plan_fingerprint: String,
    pub accuracy: f64,
}

/// Progress of one shadow pipeline against the current run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ShadowState {
    Running,
    Done,
    Failed { error: String },
}

/// Everything a background analysis needs, detached from the session.
#[derive(Clone)]
pub struct AnalysisJob {
    generation: u64,
    data: Arc<Dataset>,
    base: Arc<RunResult>,
    config: ShadowConfig,
    latency: LatencyConfig,
    earlier: BTreeMap<ShadowKind, Arc<Vec<RunResult>>>,
    kinds: Vec<ShadowKind>,
}

/// Result of one shadow pipeline, ready to be merged into the session.
pub struct ShadowReport {
    generation: u64,
    kind: ShadowKind,
    result: Result<Computed, String>,
}

struct Computed {
    finding: Json,
    /// With the run that installs it, when the shadow built one.
    suggestion: Option<(Suggestion, Option<RunResult>)>,
    runs: Vec<RunResult>,
}

impl AnalysisJob {
    pub fn kinds(&self) -> &[ShadowKind] {
        &self.kinds
    }

    /// Runs the shadows of this job concurrently.
    pub fn run(&self) -> Vec<ShadowReport> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .kinds
                .iter()
                .map(|&kind| scope.spawn(move || self.run_one(kind)))
                .collect();
            handles
                .into_iter()
                .zip(&self.kinds)
                .map(|(h, &kind)| {
                    h.join().unwrap_or_else(|_| ShadowReport {
                        generation: self.generation,
                        kind,
                        result: Err("shadow pipeline panicked".into()),
                    })
                })
                .collect()
        })
    }

    pub fn run_one(&self, kind: ShadowKind) -> ShadowReport {
        let earlier: Vec<&RunResult> = self.earlier.get(&kind).map(|r| r.iter().collect()).unwrap_or_default();
        let mut ctx = ShadowContext::new(&self.data, &self.base, &self.config, self.latency);
        ctx.extra_sources = &earlier;
        let result = run_shadow(kind, &ctx)
            .map(|outcome| Computed {
                suggestion: outcome.proposal.map(|p| {
                    let s = Suggestion::from_proposal(kind, &p, &self.base);
                    (s, p.run)
                }),
                finding: outcome.finding,
                runs: outcome.runs,
            })
            .map_err(|e| e.to_string());
        ShadowReport {
            generation: self.generation,
            kind,
            result,
        }
    }
}

/// Outcome of applying a suggestion.
#[derive(Debug, Clone, Serialize)]
pub struct Applied {
    pub suggestion: Suggestion,
    pub accuracy: f64,
    pub metrics: BTreeMap<String, f64>,
    /// External calls made while applying.
    pub invocations: BTreeMap<CallKind, usize>,
    /// The fix came with a ready run from the shadow pipeline.
    pub installed: bool,
}

pub struct Session {
    pub id: String,
    data: Arc<Dataset>,
    config: ShadowConfig,
    latency: LatencyConfig,
    run: Arc<RunResult>,
    generation: u64,
    suggestions: Vec<Suggestion>,
    prepared: BTreeMap<String, Option<RunResult>>,
    shadows: BTreeMap<ShadowKind, ShadowState>,
    findings: BTreeMap<ShadowKind, Json>,
    earlier: BTreeMap<ShadowKind, Arc<Vec<RunResult>>>,
    dismissed: BTreeSet<String>,
    history: Vec<HistoryEntry>,
    last_maintenance: Option<MaintenanceReport>,
}

impl Session {
    /// Executes `plan` cold and opens a session on it.
    pub fn open(
        id: &str,
        plan: PipelinePlan,
        data: Arc<Dataset>,
        config: ShadowConfig,
        latency: LatencyConfig,
    ) -> Result<Session, SessionError> {
        let run = execute(&plan, &data, latency)?;
        let mut session = Session {
            id: id.to_string(),
            data,
            config,
            latency,
            run: Arc::new(run),
            generation: 0,
            suggestions: Vec::new(),
            prepared: BTreeMap::new(),
            shadows: BTreeMap::new(),
            findings: BTreeMap::new(),
            earlier: BTreeMap::new(),
            dismissed: BTreeSet::new(),
            history: Vec::new(),
            last_maintenance: None,
        };
        session.record("open");
        Ok(session)
    }

    pub fn plan(&self) -> &PipelinePlan {
        &self.run.plan
    }

    pub fn run(&self) -> &RunResult {
        &self.run
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn accuracy(&self) -> f64 {
        self.run.accuracy()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Suggestions in rank order.
    pub fn suggestions(&self) -> &[Suggestion] {
        &self.suggestions
    }

    pub fn suggestion(&self, id: &str) -> Result<&Suggestion, SessionError> {
        self.suggestions
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| SessionError::UnknownSuggestion(id.to_string()))
    }

    pub fn explanations(&self, id: &str) -> Result<&[ExplanationTuple], SessionError> {
        Ok(&self.suggestion(id)?.explanation)
    }

    pub fn shadow_states(&self) -> &BTreeMap<ShadowKind, ShadowState> {
        &self.shadows
    }

    pub fn findings(&self) -> &BTreeMap<ShadowKind, Json> {
        &self.findings
    }

    pub fn last_maintenance(&self) -> Option<&MaintenanceReport> {
        self.last_maintenance.as_ref()
    }

    /// True while any shadow of the current generation has not reported.
    pub fn analyzing(&self) -> bool {
        self.shadows.values().any(|s| *s == ShadowState::Running)
    }

    /// Marks `kinds` as running and detaches what they need.
    pub fn snapshot(&mut self, kinds: &[ShadowKind]) -> AnalysisJob {
        for &kind in kinds {
            self.shadows.insert(kind, ShadowState::Running);
        }
        AnalysisJob {
            generation: self.generation,
            data: Arc::clone(&self.data),
            base: Arc::clone(&self.run),
            config: self.config.clone(),
            latency: self.latency,
            earlier: self.earlier.clone(),
            kinds: kinds.to_vec(),
        }
    }

    /// Merges shadow results; returns false when they belong to an outdated
    /// run and were dropped.
    pub fn complete(&mut self, reports: Vec<ShadowReport>) -> bool {
        let mut current = true;
        for report in reports {
            if report.generation != self.generation {
                current = false;
                continue;
            }
            let kind = report.kind;
            self.suggestions.retain(|s| s.source != kind || s.status == Status::Applied);
            self.prepared.retain(|id, _| !id.starts_with(&format!("{kind}-")));
            match report.result {
                Ok(computed) => {
                    self.findings.insert(kind, computed.finding);
                    self.earlier.insert(kind, Arc::new(computed.runs));
                    if let Some((mut suggestion, prepared)) = computed.suggestion {
                        if self.dismissed.contains(&suggestion.id) {
                            suggestion.status = Status::Dismissed;
                        }
                        self.prepared.insert(suggestion.id.clone(), prepared);
                        self.suggestions.push(suggestion);
                    }
                    self.shadows.insert(kind, ShadowState::Done);
                }
                Err(error) => {
                    self.shadows.insert(kind, ShadowState::Failed { error });
                }
            }
        }
        self.suggestions = rank_suggestions(std::mem::take(&mut self.suggestions));
        current
    }

    /// Runs the given shadows in the calling thread and merges the results.
    pub fn analyze(&mut self, kinds: &[ShadowKind]) {
        let job = self.snapshot(kinds);
        let reports = job.run();
        self.complete(reports);
    }

    pub fn dismiss(&mut self, id: &str) -> Result<&Suggestion, SessionError> {
        let s = self
            .suggestions
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or_else(|| SessionError::UnknownSuggestion(id.to_string()))?;
        if s.status == Status::Applied {
            return Err(SessionError::NotReady {
                id: id.to_string(),
                status: s.status,
            });
        }
        s.status = Status::Dismissed;
        self.dismissed.insert(id.to_string());
        Ok(s)
    }

    /// Applies a ready suggestion: installs the run the shadow pipeline
    /// prepared, or re-executes with every earlier run as reuse source when
    /// none was prepared. Other suggestions turn pending until the shadows
    /// are re-run against the new run.
    pub fn apply(&mut self, id: &str) -> Result<Applied, SessionError> {
        let s = self.suggestion(id)?;
        let not_ready = || SessionError::NotReady {
            id: id.to_string(),
            status: s.status,
        };
        if matches!(s.status, Status::Applied | Status::Dismissed) {
            return Err(not_ready());
        }
        if s.base_fingerprint != self.run.plan_fingerprint().to_string() {
            return Err(SessionError::Stale(id.to_string()));
        }
        if s.status != Status::Ready {
            return Err(not_ready());
        }
        let plan = apply_patch(&self.run.plan, &s.patch)?;
        let prepared = self.prepared.get(id);
        let ready = prepared
            .and_then(Option::as_ref)
            .filter(|r| r.plan == plan && r.fingerprints == data_fingerprints(&plan, &self.data));
        let (run, installed) = match ready {
            Some(r) => {
                let mut r = r.clone();
                r.invocations = Default::default();
                (r, true)
            }
            None => {
                let mut sources: Vec<&RunResult> = vec![&self.run];
                sources.extend(self.earlier.values().flat_map(|r| r.iter()));
                let opts = ExecOptions {
                    latency: self.latency,
                    sources: &sources,
                    replay: None,
                };
                (execute_with(&plan, &self.data, &opts)?, false)
            }
        };
        let invocations = run.invocations.counts();
        self.install(run);
        let fingerprint = self.run.plan_fingerprint().to_string();
        let suggestion = {
            let s = self
                .suggestions
                .iter_mut()
                .find(|s| s.id == id)
                .expect("looked up above");
            s.status = Status::Applied;
            s.applied_fingerprint = Some(fingerprint);
            s.clone()
        };
        self.record(&format!("apply {id}"));
        Ok(Applied {
            suggestion,
            accuracy: self.run.accuracy(),
            metrics: self.run.metrics.clone(),
            invocations,
            installed,
        })
    }

    /// Replaces the plan, maintaining the run incrementally when the edit
    /// allows it. Earlier shadow runs serve as extra reuse sources.
    pub fn update_plan(&mut self, plan: PipelinePlan) -> Result<MaintenanceReport, SessionError> {
        plan.validate()?;
        let extra: Vec<&RunResult> = self.earlier.values().flat_map(|r| r.iter()).collect();
        let maintained = incremental_update_with(&self.run, &self.run.plan, &plan, &self.data, self.latency, &extra)?;
        let report = maintained.report.clone();
        self.install(maintained.run);
        self.record("edit");
        self.last_maintenance = Some(report.clone());
        Ok(report)
    }

    /// Makes `run` current and turns every open suggestion pending. Callers
    /// re-run the shadows afterwards.
    fn install(&mut self, run: RunResult) {
        self.run = Arc::new(run);
        self.generation += 1;
        self.prepared.clear();
        for s in &mut self.suggestions {
            if matches!(s.status, Status::Ready | Status::Pending) {
                s.status = Status::Pending;
                s.accuracy_after = None;
            }
        }
        self.suggestions = rank_suggestions(std::mem::take(&mut self.suggestions));
    }

    fn record(&mut self, event: &str) {
        self.history.push(HistoryEntry {
            event: event.to_string(),
            plan_fingerprint: self.run.plan_fingerprint().to_string(),
            accuracy: self.run.accuracy(),
        });
    }
}
