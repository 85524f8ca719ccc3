//! Timing harness for shadow pipelines and for maintaining them across a
//! plan edit. Artificial latencies actually sleep here.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::corpus::Dataset;
use crate::engine::{execute, EngineError, LatencyConfig, RunResult};
use crate::ivm::{incremental_update_with, IvmError};
use crate::plan::{PipelinePlan, PlanError};
use crate::shadow::{
    run_shadow, LabelMode, PipelineKind, ShadowConfig, ShadowContext, ShadowError, ShadowKind, ShadowOutcome,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("opt_proxy only applies to the train pipeline's label-error shadow")]
    ProxyScenario,
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("the scripted edit found no positive pattern `{0}` to change")]
    EditTarget(String),
    #[error("incremental and full re-execution disagree for {0}")]
    Divergence(String),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ivm(#[from] IvmError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// The shadow re-executes everything from scratch.
    Naive,
    /// The shadow reuses the user run's intermediates.
    Optimised,
    /// As optimised, estimating label-flip impact with a KNN proxy instead
    /// of retraining.
    OptProxy,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Naive => "naive",
            BenchMode::Optimised => "optimised",
            BenchMode::OptProxy => "opt_proxy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct BenchScenario {
    pub pipeline: PipelineKind,
    pub shadow: ShadowKind,
    pub mode: BenchMode,
}

impl BenchScenario {
    pub fn name(&self) -> String {
        format!("{}_{}", self.pipeline, self.shadow)
    }
}

/// Every pipeline x shadow cell in naive and optimised mode, plus opt_proxy
/// for the train pipeline's label errors.
pub fn scenario_grid() -> Vec<BenchScenario> {
    let mut grid = Vec::new();
    for pipeline in PipelineKind::ALL {
        for shadow in ShadowKind::ALL {
            for mode in [BenchMode::Naive, BenchMode::Optimised] {
                grid.push(BenchScenario { pipeline, shadow, mode });
            }
            if pipeline == PipelineKind::Train && shadow == ShadowKind::LabelErrors {
                grid.push(BenchScenario {
                    pipeline,
                    shadow,
                    mode: BenchMode::OptProxy,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub warmup: usize,
    pub latency: LatencyConfig,
    pub shadow: ShadowConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repetitions: 7,
            warmup: 1,
            latency: LatencyConfig::sleeping(),
            shadow: ShadowConfig::default(),
        }
    }
}

impl BenchConfig {
    fn validate(&self) -> Result<(), BenchError> {
        if self.repetitions == 0 {
            return Err(BenchError::NoRepetitions);
        }
        Ok(())
    }

    fn instant(&self) -> LatencyConfig {
        LatencyConfig {
            sleep: false,
            ..self.latency
        }
    }
}

/// Timings of one scenario after warm-up.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub scenario: BenchScenario,
    pub ms: Vec<f64>,
}

impl Timing {
    pub fn median_ms(&self) -> f64 {
        median(&self.ms)
    }
}

/// Middle element for odd counts, mean of the two middle elements for even
/// counts, NaN when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T, BenchError>) -> Result<(T, f64), BenchError> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64() * 1000.0))
}

fn shadow_config(base: &ShadowConfig, scenario: &BenchScenario) -> Result<ShadowConfig, BenchError> {
    let mut cfg = base.clone();
    let label_mode = match (scenario.mode, scenario.pipeline) {
        (BenchMode::OptProxy, PipelineKind::Train) if scenario.shadow == ShadowKind::LabelErrors => {
            LabelMode::TrainProxy
        }
        (BenchMode::OptProxy, _) => return Err(BenchError::ProxyScenario),
        (_, kind) => LabelMode::default_for(kind),
    };
    cfg.label_errors.mode = Some(label_mode);
    Ok(cfg)
}

/// One timed execution of a shadow. The base run is only read for its plan
/// in naive mode.
fn shadow_once(
    data: &Dataset,
    base: &RunResult,
    cfg: &ShadowConfig,
    kind: ShadowKind,
    latency: LatencyConfig,
    reuse: bool,
    extra: &[&RunResult],
) -> Result<(ShadowOutcome, f64), BenchError> {
    let mut ctx = ShadowContext::new(data, base, cfg, latency);
    ctx.reuse = reuse;
    ctx.prepare = false;
    ctx.extra_sources = extra;
    timed(|| Ok(run_shadow(kind, &ctx)?))
}

/// Runs `scenarios` against `data`. User runs are computed once per
/// pipeline without sleeping; only shadow execution is timed.
pub fn run_bench(
    data: &Dataset,
    scenarios: &[BenchScenario],
    config: &BenchConfig,
    mut progress: impl FnMut(&Timing),
) -> Result<Vec<Timing>, BenchError> {
    config.validate()?;
    let mut bases: Vec<(PipelineKind, RunResult)> = Vec::new();
    let mut out = Vec::new();
    for scenario in scenarios {
        let cfg = shadow_config(&config.shadow, scenario)?;
        if !bases.iter().any(|(k, _)| *k == scenario.pipeline) {
            bases.push((scenario.pipeline, execute(&scenario.pipeline.plan(), data, config.instant())?));
        }
        let base = &bases.iter().find(|(k, _)| *k == scenario.pipeline).expect("inserted above").1;
        let reuse = scenario.mode != BenchMode::Naive;
        let mut ms = Vec::with_capacity(config.repetitions);
        for rep in 0..config.warmup + config.repetitions {
            let (_, t) = shadow_once(data, base, &cfg, scenario.shadow, config.latency, reuse, &[])?;
            if rep >= config.warmup {
                ms.push(t);
            }
        }
        let timing = Timing {
            scenario: *scenario,
            ms,
        };
        progress(&timing);
        out.push(timing);
    }
    Ok(out)
}

/// Median-based speedup of `mode` over naive for one pipeline x shadow cell.
pub fn speedup(timings: &[Timing], pipeline: PipelineKind, shadow: ShadowKind, mode: BenchMode) -> Option<f64> {
    let find = |m: BenchMode| {
        timings
            .iter()
            .find(|t| t.scenario.pipeline == pipeline && t.scenario.shadow == shadow && t.scenario.mode == m)
            .map(Timing::median_ms)
    };
    Some(find(BenchMode::Naive)? / find(mode)?)
}

/// Per-repetition rows followed by a summary block with medians and
/// speedups over naive.
pub fn bench_csv(timings: &[Timing]) -> String {
    let mut s = String::from("scenario,pipeline,shadow,mode,rep,ms\n");
    for t in timings {
        for (rep, ms) in t.ms.iter().enumerate() {
            let sc = &t.scenario;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.3}",
                sc.name(),
                sc.pipeline,
                sc.shadow,
                sc.mode.as_str(),
                rep + 1,
                ms
            );
        }
    }
    s.push_str("\n# summary\nscenario,pipeline,shadow,mode,median_ms,speedup\n");
    for t in timings {
        let sc = &t.scenario;
        let up = speedup(timings, sc.pipeline, sc.shadow, sc.mode).map_or(String::new(), |x| format!("{x:.2}"));
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3},{}",
            sc.name(),
            sc.pipeline,
            sc.shadow,
            sc.mode.as_str(),
            t.median_ms(),
            up
        );
    }
    s
}

/// The pattern the scripted maintenance edit rewrites, and its replacement.
pub const EDIT_FROM: &str = "lost (interest|motivation)";
pub const EDIT_TO: &str = "lost (all )?(interest|motivation)";

/// `plan` with the weak-labeling pattern [`EDIT_FROM`] widened to
/// [`EDIT_TO`]: a single-operator parameter edit.
pub fn regex_edit(plan: &PipelinePlan) -> Result<PipelinePlan, BenchError> {
    let mut out = plan.clone();
    let mut hit = false;
    for node in &mut out.nodes {
        if let Some(serde_json::Value::Array(patterns)) = node.params.get_mut("positive_patterns") {
            for p in patterns.iter_mut() {
                if p.as_str() == Some(EDIT_FROM) {
                    *p = json!(EDIT_TO);
                    hit = true;
                }
            }
        }
    }
    if !hit {
        return Err(BenchError::EditTarget(EDIT_FROM.into()));
    }
    out.validate()?;
    Ok(out)
}

/// Timings of maintaining one pipeline and shadow across the scripted edit.
#[derive(Debug, Clone, Serialize)]
pub struct MaintenanceTiming {
    pub pipeline: PipelineKind,
    pub shadow: ShadowKind,
    /// Pipeline and shadow re-executed from scratch.
    pub naive_ms: Vec<f64>,
    /// Incremental pipeline update plus shadow re-run reusing the prior
    /// user and shadow runs.
    pub incremental_ms: Vec<f64>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub llm_reinferred: usize,
}

impl MaintenanceTiming {
    pub fn speedup(&self) -> f64 {
        median(&self.naive_ms) / median(&self.incremental_ms)
    }
}

/// What the two paths must agree on: pipeline metrics and the proposed fix.
fn signature(run: &RunResult, outcome: &ShadowOutcome) -> serde_json::Value {
    let proposal = outcome.proposal.as_ref().map(|p| {
        json!({
            "patch": p.patch,
            "before": p.accuracy_before.to_bits(),
            "after": p.accuracy_after.to_bits(),
        })
    });
    let metrics: Vec<(String, u64)> = run.metrics.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect();
    json!({"metrics": metrics, "proposal": proposal})
}

/// Runs the scripted regex edit for each cell; verifies every repetition
/// against full re-execution.
pub fn run_maintenance_bench(
    data: &Dataset,
    cells: &[(PipelineKind, ShadowKind)],
    config: &BenchConfig,
    mut progress: impl FnMut(&MaintenanceTiming),
) -> Result<Vec<MaintenanceTiming>, BenchError> {
    config.validate()?;
    let instant = config.instant();
    let mut out = Vec::new();
    for &(pipeline, shadow) in cells {
        let scenario = BenchScenario {
            pipeline,
            shadow,
            mode: BenchMode::Optimised,
        };
        let cfg = shadow_config(&config.shadow, &scenario)?;
        let old = pipeline.plan();
        let new = regex_edit(&old)?;
        let prior = execute(&old, data, instant)?;
        let (prior_shadow, _) = shadow_once(data, &prior, &cfg, shadow, instant, true, &[])?;
        let cold = execute(&new, data, instant)?;
        let mut timing = MaintenanceTiming {
            pipeline,
            shadow,
            naive_ms: Vec::new(),
            incremental_ms: Vec::new(),
            accuracy_before: prior.accuracy(),
            accuracy_after: cold.accuracy(),
            llm_reinferred: 0,
        };
        for rep in 0..config.warmup + config.repetitions {
            let (naive, naive_ms) = shadow_once(data, &cold, &cfg, shadow, config.latency, false, &[])?;
            let extra: Vec<&RunResult> = prior_shadow.runs.iter().collect();
            let ((maintained, incremental), incremental_ms) = timed(|| {
                let m = incremental_update_with(&prior, &old, &new, data, config.latency, &extra)?;
                let mut ctx = ShadowContext::new(data, &m.run, &cfg, config.latency);
                ctx.prepare = false;
                ctx.extra_sources = &extra;
                let outcome = run_shadow(shadow, &ctx)?;
                Ok((m, outcome))
            })?;
            if !maintained.run.same_results(&cold) || signature(&cold, &naive) != signature(&maintained.run, &incremental)
            {
                return Err(BenchError::Divergence(format!("{pipeline}/{shadow}")));
            }
            timing.llm_reinferred = maintained.run.invocations.count(crate::engine::CallKind::LlmInfer);
            if rep >= config.warmup {
                timing.naive_ms.push(naive_ms);
                timing.incremental_ms.push(incremental_ms);
            }
        }
        progress(&timing);
        out.push(timing);
    }
    Ok(out)
}

/// Per-repetition rows followed by a summary block.
pub fn maintenance_csv(timings: &[MaintenanceTiming]) -> String {
    let mut s = String::from("scenario,pipeline,shadow,mode,rep,ms\n");
    for t in timings {
        for (mode, ms) in [("naive", &t.naive_ms), ("incremental", &t.incremental_ms)] {
            for (rep, v) in ms.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{}_{},{},{},{},{},{:.3}",
                    t.pipeline,
                    t.shadow,
                    t.pipeline,
                    t.shadow,
                    mode,
                    rep + 1,
                    v
                );
            }
        }
    }
    s.push_str("\n# summary\nscenario,pipeline,shadow,naive_median_ms,incremental_median_ms,speedup,accuracy_before,accuracy_after,llm_reinferred\n");
    for t in timings {
        let _ = writeln!(
            s,
            "{}_{},{},{},{:.3},{:.3},{:.2},{},{},{}",
            t.pipeline,
            t.shadow,
            t.pipeline,
            t.shadow,
            median(&t.naive_ms),
            median(&t.incremental_ms),
            t.speedup(),
            t.accuracy_before,
            t.accuracy_after,
            t.llm_reinferred
        );
    }
    s
}
