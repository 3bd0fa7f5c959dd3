//! End-to-end refinement: keyframes → agents per provider → cross-provider
//! mean → debate → propagation → fusion, plus the component ablation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::agents::{self, AgentError, AgentRun};
use crate::config::RefinementConfig;
use crate::debate::{self, DebateOutcome};
use crate::eval::{ablation_report, AblationTable, EvalError};
use crate::fusion::fuse_set;
use crate::ingest::{with_fused_scores, FusedScores, IngestError};
use crate::model::{Agent, AgentScoreTable, Components, GroundTruthSet, VideoPredictionSet};
use crate::par::parallel_map;
use crate::provider::{ChatModel, Provider, ProviderError, ProviderStats, ResponseCache};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cache directory: {0}")]
    Cache(std::io::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Config(String),
}

/// Agent runs of one provider over the keyframes.
#[derive(Debug, Clone)]
pub struct ProviderRun {
    pub provider: String,
    pub runs: BTreeMap<Agent, AgentRun>,
}

impl ProviderRun {
    /// All of this provider's agent scores in one table.
    pub fn table(&self) -> AgentScoreTable {
        let mut t = AgentScoreTable::new();
        for run in self.runs.values() {
            t.merge(&run.table);
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct StageOne {
    pub keyframes: BTreeSet<usize>,
    pub providers: Vec<ProviderRun>,
}

impl StageOne {
    pub fn tables(&self) -> Vec<(String, AgentScoreTable)> {
        self.providers.iter().map(|p| (p.provider.clone(), p.table())).collect()
    }
}

/// Everything a refinement produced.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub stage_one: StageOne,
    pub debate: DebateOutcome,
    /// Keyframe scores (provider mean plus debate) propagated to all frames.
    pub scores: AgentScoreTable,
}

impl Refinement {
    pub fn fused(&self, set: &VideoPredictionSet, components: &Components, config: &RefinementConfig) -> FusedScores {
        fuse_set(set, &self.scores.masked(components), &config.weights)
    }

    /// Provider failures that make the run incomplete: retries exhausted or
    /// credentials rejected.
    pub fn fatal_errors(&self) -> Vec<&ProviderError> {
        let stage = self.stage_one.providers.iter().flat_map(|p| p.runs.values()).flat_map(|r| &r.errors);
        let debates = self.debate.transcripts.iter().flat_map(|t| &t.errors);
        stage
            .chain(debates)
            .filter(|e| matches!(e, ProviderError::Exhausted { .. } | ProviderError::Auth(_)))
            .collect()
    }
}

pub struct Pipeline {
    config: RefinementConfig,
    providers: Vec<Provider>,
    judge: usize,
}

impl Pipeline {
    /// Builds providers from the configuration, sharing one response cache
    /// when `cache_dir` is set.
    pub fn from_config(config: RefinementConfig) -> Result<Self, PipelineError> {
        let cache = match &config.cache_dir {
            Some(dir) => Some(Arc::new(ResponseCache::open(dir).map_err(PipelineError::Cache)?)),
            None => None,
        };
        let mut providers = Vec::with_capacity(config.providers.len());
        for spec in &config.providers {
            let p = Provider::from_spec(spec.clone())?;
            providers.push(match &cache {
                Some(c) => p.with_cache(c.clone()),
                None => p,
            });
        }
        Self::new(config, providers)
    }

    pub fn new(config: RefinementConfig, providers: Vec<Provider>) -> Result<Self, PipelineError> {
        if providers.is_empty() {
            return Err(PipelineError::Config("no providers".into()));
        }
        let judge_id = config.judge.clone().unwrap_or_else(|| providers[0].id().to_string());
        let judge = providers
            .iter()
            .position(|p| p.id() == judge_id)
            .ok_or_else(|| PipelineError::Config(format!("judge `{judge_id}` is not a configured provider")))?;
        Ok(Self { config, providers, judge })
    }

    pub fn config(&self) -> &RefinementConfig {
        &self.config
    }

    pub fn providers(&self) -> &[Provider] {
        &self.providers
    }

    pub fn provider_stats(&self) -> Vec<(String, ProviderStats)> {
        self.providers.iter().map(|p| (p.id().to_string(), p.stats())).collect()
    }

    /// Agents over the keyframes, every provider in parallel.
    pub fn stage_one(&self, set: &VideoPredictionSet) -> Result<StageOne, PipelineError> {
        let keyframes = agents::select_keyframes(&set.frame_indices(), self.config.keyframe_interval)?;
        let view = set.restrict_frames(&keyframes);
        let mut settings = self.config.agent_settings();
        settings.parallelism = (settings.parallelism / self.providers.len()).max(1);
        let providers = parallel_map(&self.providers, self.providers.len(), |p| ProviderRun {
            provider: p.id().to_string(),
            runs: agents::run_all(p, &view, &settings),
        });
        Ok(StageOne { keyframes, providers })
    }

    pub fn debate(&self, set: &VideoPredictionSet, stage: &StageOne) -> DebateOutcome {
        let view = set.restrict_frames(&stage.keyframes);
        let candidates = debate::select_debate_candidates(
            &view,
            &stage.tables(),
            &self.config.weights,
            self.config.debate_mode,
            self.config.disagreement_delta,
            self.config.candidate_floor,
        );
        if candidates.is_empty() {
            return DebateOutcome::default();
        }
        let debaters: Vec<&dyn ChatModel> = self.providers.iter().map(|p| p as &dyn ChatModel).collect();
        let outcome = debate::run_debates(&candidates, &debaters, &self.providers[self.judge], self.config.parallelism);
        if let Some(dir) = &self.config.transcript_dir {
            for t in &outcome.transcripts {
                if let Err(e) = debate::write_transcript(t, dir) {
                    tracing::warn!(dir = %dir.display(), error = %e, "could not write transcript");
                }
            }
        }
        outcome
    }

    pub fn refine(&self, set: &VideoPredictionSet) -> Result<Refinement, PipelineError> {
        let stage_one = self.stage_one(set)?;
        let tables: Vec<AgentScoreTable> = stage_one.providers.iter().map(ProviderRun::table).collect();
        let mut keyframe_scores = AgentScoreTable::mean(&tables);
        let debate = self.debate(set, &stage_one);
        for (key, v) in &debate.scores {
            keyframe_scores.set(*key, Agent::Debate, *v);
        }
        let scores = agents::propagate_scores(&keyframe_scores, set, &stage_one.keyframes);
        Ok(Refinement { stage_one, debate, scores })
    }

    /// Refined copy of `set` with every component enabled.
    pub fn refined_set(&self, set: &VideoPredictionSet, refinement: &Refinement) -> Result<VideoPredictionSet, PipelineError> {
        Ok(with_fused_scores(set, &refinement.fused(set, &Components::ALL, &self.config))?)
    }

    /// Baseline plus all 16 component combinations. Agents and debates run
    /// once; each row masks the components it leaves out.
    pub fn ablate(
        &self,
        set: &VideoPredictionSet,
        gt: &GroundTruthSet,
        ks: &[usize],
    ) -> Result<(AblationTable, Refinement), PipelineError> {
        let refinement = self.refine(set)?;
        let mut variants = Vec::new();
        for c in Components::combinations() {
            let fused = refinement.fused(set, &c, &self.config);
            variants.push((c, with_fused_scores(set, &fused)?));
        }
        let table = ablation_report(set, &variants, gt, self.config.weights.threshold, ks)?;
        Ok((table, refinement))
    }

    pub fn summary(&self, refinement: &Refinement) -> RunSummary {
        let mut coverage = Vec::new();
        for p in &refinement.stage_one.providers {
            for (agent, run) in &p.runs {
                coverage.push(Coverage {
                    provider: p.provider.clone(),
                    agent: *agent,
                    prompts: run.prompts,
                    candidates: run.candidates,
                    scored: run.table.count(*agent),
                });
            }
        }
        let selected: usize = refinement.debate.transcripts.len();
        let judged = refinement.debate.transcripts.iter().filter(|t| t.judge_score.is_some()).count();
        RunSummary {
            providers: self.provider_stats(),
            coverage,
            debates: selected,
            debates_judged: judged,
            fatal: refinement.fatal_errors().iter().map(|e| e.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub provider: String,
    pub agent: Agent,
    pub prompts: usize,
    pub candidates: usize,
    pub scored: usize,
}

/// Call, cache and coverage figures of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub providers: Vec<(String, ProviderStats)>,
    pub coverage: Vec<Coverage>,
    pub debates: usize,
    pub debates_judged: usize,
    pub fatal: Vec<String>,
}

impl RunSummary {
    pub fn remote_calls(&self) -> u64 {
        self.providers.iter().map(|(_, s)| s.remote_calls).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.providers {
            let _ = writeln!(
                out,
                "provider {id}: {} calls, {} attempts, {} cache hits ({:.1}%), {} failures",
                s.remote_calls,
                s.attempts,
                s.cache_hits,
                100.0 * s.cache_hit_rate(),
                s.failures
            );
        }
        for c in &self.coverage {
            let frac = if c.candidates == 0 { 1.0 } else { c.scored as f64 / c.candidates as f64 };
            let _ = writeln!(
                out,
                "  {} / {}: {} prompts, {}/{} candidates scored ({:.1}%)",
                c.provider,
                c.agent.name(),
                c.prompts,
                c.scored,
                c.candidates,
                100.0 * frac
            );
        }
        let _ = writeln!(out, "debates: {} held, {} judged", self.debates, self.debates_judged);
        for f in &self.fatal {
            let _ = writeln!(out, "provider failure: {f}");
        }
        out
    }
}
