//! End-to-end stages: annotate a corpus into the store, turn stored
//! annotations into per-strategy reports, run the significance tests, and
//! run desk-scale studies against a simulated labeler.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{
    annotate, build_request, AnnotateError, AnnotationRecord, Backend, ChatRequest, LabelerSpec, PromptTemplate,
    RecordRole, RequestContext, RequestMode, SimulatedBackend, Throttle, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL_ID,
};
use crate::corpus::{AnnotationStore, CorpusError, SegmentRecord};
use crate::evaluation::{classification_report, confusion_from_predictions, ClassificationReport, ConfusionMatrix};
use crate::labels::{map_to_sentiment, parse_label, ClassLabel, Emotion, Label, Taxonomy};
use crate::sampling::{build_composite, select_frames, CompositeEncoding, PositionRole};
use crate::statistics::{dunn, friedman, DunnResult, FriedmanResult, StatsError};
use crate::strategies::{
    apply_to_sentiment_votes, apply_to_votes, strategy_d, Family, SegmentPrediction, SegmentVotes, StrategyId,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no annotations available for strategy {strategy}")]
    MissingAnnotations { strategy: StrategyId },
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct AnnotateOptions {
    pub strategies: Vec<StrategyId>,
    pub template: PromptTemplate,
    pub model_id: String,
    pub max_output_tokens: u32,
    pub encoding: CompositeEncoding,
    pub workers: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            strategies: StrategyId::ALL.to_vec(),
            template: PromptTemplate::default(),
            model_id: DEFAULT_MODEL_ID.to_string(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            encoding: CompositeEncoding::default(),
            workers: 8,
        }
    }
}

/// The `(role, taxonomy)` annotations a strategy set needs for each segment.
pub fn required_jobs(strategies: &[StrategyId]) -> Vec<(RecordRole, Taxonomy)> {
    let mut jobs = Vec::new();
    if strategies.iter().any(|s| s.needs_frames()) {
        jobs.extend(PositionRole::ALL.map(|r| (RecordRole::from(r), Taxonomy::SevenClass)));
    }
    for (id, taxonomy) in [
        (StrategyId::D1, Taxonomy::SevenClass),
        (StrategyId::D2, Taxonomy::ThreeClass),
    ] {
        if strategies.contains(&id) {
            jobs.push((RecordRole::Composite, taxonomy));
        }
    }
    jobs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentFailure {
    pub segment_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnnotateSummary {
    pub segments: usize,
    pub jobs: usize,
    /// Jobs already present in the store.
    pub cached: usize,
    /// Jobs answered by the backend in this run.
    pub backend_jobs: usize,
    /// Jobs answered by copying a stored record with the same prompt hash.
    pub reused: usize,
    pub invalid: usize,
    pub failures: Vec<SegmentFailure>,
    pub aborted: bool,
}

impl AnnotateSummary {
    pub fn new_records(&self) -> usize {
        self.backend_jobs + self.reused
    }
}

#[derive(Debug, Clone)]
struct Job {
    segment_id: String,
    ground_truth: Emotion,
    role: RecordRole,
    request: ChatRequest,
    hash: String,
}

fn plan_segment(segment: &SegmentRecord, opts: &AnnotateOptions) -> Result<Vec<Job>, String> {
    let needed = required_jobs(&opts.strategies);
    let frames = select_frames(segment).map_err(|e| e.to_string())?;
    let composite = if needed.iter().any(|(r, _)| *r == RecordRole::Composite) {
        Some(build_composite(&frames, opts.encoding).map_err(|e| e.to_string())?)
    } else {
        None
    };
    Ok(needed
        .into_iter()
        .map(|(role, taxonomy)| {
            let (bytes, mode) = match role.position() {
                Some(p) => (&frames[p.index()].image_bytes, RequestMode::Single),
                None => (
                    &composite.as_ref().expect("built above").image_bytes,
                    RequestMode::Composite,
                ),
            };
            let request = build_request(
                bytes,
                taxonomy,
                mode,
                &opts.template,
                &opts.model_id,
                opts.max_output_tokens,
                Some(&opts.encoding),
            );
            Job {
                segment_id: segment.segment_id.clone(),
                ground_truth: segment.ground_truth,
                role,
                hash: request.prompt_hash(),
                request,
            }
        })
        .collect())
}

/// Annotates every job implied by the strategy set that the store does not
/// already hold.
///
/// Jobs sharing a prompt hash call the backend once; the others receive a
/// copy of that answer. Records reach the store through this thread only.
pub fn run_annotate(
    segments: &[SegmentRecord],
    store: &mut AnnotationStore,
    backend: &dyn Backend,
    throttle: &Throttle,
    opts: &AnnotateOptions,
) -> Result<AnnotateSummary, PipelineError> {
    if opts.strategies.is_empty() {
        return Err(PipelineError::Config("at least one strategy is required".into()));
    }
    let mut summary = AnnotateSummary {
        segments: segments.len(),
        ..Default::default()
    };

    let mut primaries: Vec<Job> = Vec::new();
    let mut followers: Vec<Job> = Vec::new();
    let mut pending_hashes = std::collections::HashSet::new();
    for segment in segments {
        let jobs = match plan_segment(segment, opts) {
            Ok(j) => j,
            Err(error) => {
                warn!("segment {}: {error}", segment.segment_id);
                summary.failures.push(SegmentFailure {
                    segment_id: segment.segment_id.clone(),
                    error,
                });
                continue;
            }
        };
        for job in jobs {
            summary.jobs += 1;
            let done = store
                .lookup_job(&job.segment_id, job.role, job.request.taxonomy, &job.hash)
                .is_some();
            if done {
                summary.cached += 1;
            } else if store.lookup(&job.hash).is_some() || pending_hashes.contains(&job.hash) {
                followers.push(job);
            } else {
                pending_hashes.insert(job.hash.clone());
                primaries.push(job);
            }
        }
    }
    info!(
        "{} jobs: {} cached, {} to send, {} duplicates",
        summary.jobs,
        summary.cached,
        primaries.len(),
        followers.len()
    );

    let workers = opts.workers.max(1);
    let abort = AtomicBool::new(false);
    let (job_tx, job_rx) = crossbeam::channel::unbounded::<Job>();
    let (res_tx, res_rx) = crossbeam::channel::unbounded::<(Job, Result<AnnotationRecord, AnnotateError>)>();
    for job in primaries {
        job_tx.send(job).expect("receiver alive");
    }
    drop(job_tx);

    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let job_rx = job_rx.clone();
            let res_tx = res_tx.clone();
            let abort = &abort;
            scope.spawn(move || {
                for job in job_rx.iter() {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let ctx = RequestContext {
                        segment_id: &job.segment_id,
                        role: job.role,
                        ground_truth: job.ground_truth,
                        draw_index: 0,
                    };
                    let result = annotate(&job.request, &ctx, backend, throttle, &opts.template);
                    if matches!(result, Err(AnnotateError::Auth(_))) {
                        abort.store(true, Ordering::SeqCst);
                    }
                    if res_tx.send((job, result)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(res_tx);

        for (job, result) in res_rx.iter() {
            match result {
                Ok(record) => {
                    summary.backend_jobs += 1;
                    summary.invalid += usize::from(!record.is_valid());
                    if write_error.is_none() {
                        if let Err(e) = store.append(record) {
                            abort.store(true, Ordering::SeqCst);
                            write_error = Some(e);
                        }
                    }
                }
                Err(e) => {
                    warn!("segment {} {}: {e}", job.segment_id, job.role);
                    summary.failures.push(SegmentFailure {
                        segment_id: job.segment_id,
                        error: format!("{} {}: {e}", job.role, job.request.taxonomy),
                    });
                }
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e.into());
    }
    summary.aborted = abort.load(Ordering::SeqCst);

    for job in followers {
        match store.lookup(&job.hash).cloned() {
            Some(source) => {
                summary.reused += 1;
                summary.invalid += usize::from(!source.is_valid());
                store.append(source.reuse_for(&job.segment_id, job.role))?;
            }
            None => summary.failures.push(SegmentFailure {
                segment_id: job.segment_id.clone(),
                error: format!("{} {}: shared request failed", job.role, job.request.taxonomy),
            }),
        }
    }
    summary
        .failures
        .sort_by(|a, b| a.segment_id.cmp(&b.segment_id).then(a.error.cmp(&b.error)));
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub strategy: StrategyId,
    pub segment_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyEvaluation {
    pub strategy: StrategyId,
    pub taxonomy: Taxonomy,
    pub predictions: Vec<SegmentPrediction>,
    pub exclusions: Vec<Exclusion>,
    pub confusion: ConfusionMatrix,
    pub report: ClassificationReport,
}

/// Per-segment 0/1 correctness of each segment-level strategy, aligned with
/// `segment_ids`. `None` marks an excluded segment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessTable {
    pub segment_ids: Vec<String>,
    pub strategies: BTreeMap<String, Vec<Option<u8>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationOutput {
    pub strategies: Vec<StrategyEvaluation>,
    pub correctness: CorrectnessTable,
}

type RecordIndex<'a> = HashMap<(&'a str, RecordRole, Taxonomy), &'a AnnotationRecord>;

enum Lookup<T> {
    Found(T),
    Invalid,
    Missing,
}

fn frame_votes(index: &RecordIndex<'_>, segment_id: &str) -> Lookup<SegmentVotes<Emotion>> {
    let mut votes = [Emotion::Neutral; 5];
    let mut invalid = false;
    for role in PositionRole::ALL {
        match index.get(&(segment_id, role.into(), Taxonomy::SevenClass)) {
            None => return Lookup::Missing,
            Some(r) => match r.label().and_then(Label::as_emotion) {
                Some(e) => votes[role.index()] = e,
                None => invalid = true,
            },
        }
    }
    if invalid {
        Lookup::Invalid
    } else {
        Lookup::Found(SegmentVotes::new(segment_id, votes))
    }
}

/// Builds predictions and reports for every requested strategy from stored
/// annotations. The newest record per segment, role and taxonomy is used;
/// with `model_id` set, only that model's records count.
pub fn run_evaluate(
    segments: &[SegmentRecord],
    records: &[AnnotationRecord],
    strategies: &[StrategyId],
    model_id: Option<&str>,
) -> Result<EvaluationOutput, PipelineError> {
    let mut index: RecordIndex<'_> = HashMap::new();
    for r in records.iter().filter(|r| model_id.is_none_or(|m| r.model_id == m)) {
        index.insert((r.segment_id.as_str(), r.role, r.taxonomy), r);
    }
    let ground_truth: HashMap<String, Emotion> = segments
        .iter()
        .map(|s| (s.segment_id.clone(), s.ground_truth))
        .collect();

    let mut strategies = strategies.to_vec();
    strategies.sort();
    strategies.dedup();

    let mut out = Vec::new();
    let mut correctness = CorrectnessTable {
        segment_ids: segments.iter().map(|s| s.segment_id.clone()).collect(),
        strategies: BTreeMap::new(),
    };
    for strategy in strategies {
        let mut predictions = Vec::new();
        let mut exclusions = Vec::new();
        let mut seen_any = false;
        for seg in segments {
            let id = seg.segment_id.as_str();
            let outcome = match strategy.family() {
                Family::Composite => match index.get(&(id, RecordRole::Composite, strategy.taxonomy())) {
                    None => Lookup::Missing,
                    Some(r) => match strategy_d(r) {
                        Ok(p) => Lookup::Found(p),
                        Err(_) => Lookup::Invalid,
                    },
                },
                _ => match frame_votes(&index, id) {
                    Lookup::Found(v) => Lookup::Found(apply_to_votes(strategy, &v)),
                    Lookup::Invalid => Lookup::Invalid,
                    Lookup::Missing => Lookup::Missing,
                },
            };
            match outcome {
                Lookup::Found(p) => {
                    seen_any = true;
                    predictions.push(p);
                }
                Lookup::Invalid => {
                    seen_any = true;
                    exclusions.push(Exclusion {
                        strategy,
                        segment_id: id.to_string(),
                        reason: "invalid annotation".into(),
                    });
                }
                Lookup::Missing => exclusions.push(Exclusion {
                    strategy,
                    segment_id: id.to_string(),
                    reason: "missing annotation".into(),
                }),
            }
        }
        if !seen_any {
            return Err(PipelineError::MissingAnnotations { strategy });
        }
        let confusion = confusion_from_predictions(&predictions, &ground_truth, strategy.taxonomy())
            .map_err(|e| PipelineError::Shape(e.to_string()))?;
        let report = classification_report(&confusion).with_excluded(exclusions.len() as u64);

        if strategy.family() != Family::PerFrame {
            let by_segment: HashMap<&str, u8> = predictions
                .iter()
                .map(|p| {
                    let gt = ground_truth[&p.segment_id];
                    let truth = match p.labels[0] {
                        Label::Emotion(_) => Label::Emotion(gt),
                        Label::Sentiment(_) => Label::Sentiment(map_to_sentiment(gt)),
                    };
                    (p.segment_id.as_str(), u8::from(truth == p.labels[0]))
                })
                .collect();
            let column = segments
                .iter()
                .map(|s| by_segment.get(s.segment_id.as_str()).copied())
                .collect();
            correctness.strategies.insert(strategy.to_string(), column);
        }

        out.push(StrategyEvaluation {
            strategy,
            taxonomy: strategy.taxonomy(),
            predictions,
            exclusions,
            confusion,
            report,
        });
    }
    Ok(EvaluationOutput {
        strategies: out,
        correctness,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ReportFile<'a> {
    strategy: StrategyId,
    taxonomy: Taxonomy,
    report: &'a ClassificationReport,
    confusion: &'a ConfusionMatrix,
}

/// Writes predictions, exclusions, reports, confusion matrices and the
/// correctness table under `dir`.
pub fn write_evaluation(dir: &Path, output: &EvaluationOutput) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut predictions = String::new();
    let mut exclusions = String::new();
    let mut summary = String::from("strategy,taxonomy,accuracy,uar,macro_f1,weighted_f1,evaluated,excluded\n");
    for s in &output.strategies {
        for p in &s.predictions {
            predictions.push_str(&serde_json::to_string(p).expect("serializable"));
            predictions.push('\n');
        }
        for e in &s.exclusions {
            exclusions.push_str(&serde_json::to_string(e).expect("serializable"));
            exclusions.push('\n');
        }
        let r = &s.report;
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.strategy, s.taxonomy, r.accuracy, r.uar, r.macro_avg.f1, r.weighted_avg.f1, r.total, r.excluded_count
        ));
        let file = ReportFile {
            strategy: s.strategy,
            taxonomy: s.taxonomy,
            report: r,
            confusion: &s.confusion,
        };
        write_file(&dir.join(format!("report_{}.json", s.strategy)), &json_pretty(&file))?;
        let text = format!(
            "Strategy {} ({})\n\n{}\nConfusion matrix (rows = true, columns = predicted)\n{}",
            s.strategy,
            s.taxonomy,
            r.render_table(),
            s.confusion.to_csv()
        );
        write_file(&dir.join(format!("report_{}.txt", s.strategy)), &text)?;
        write_file(
            &dir.join(format!("confusion_{}.csv", s.strategy)),
            &s.confusion.to_csv(),
        )?;
    }
    write_file(&dir.join("predictions.jsonl"), &predictions)?;
    write_file(&dir.join("exclusions.jsonl"), &exclusions)?;
    write_file(&dir.join("summary.csv"), &summary)?;
    write_file(&dir.join("correctness.json"), &json_pretty(&output.correctness))?;
    Ok(())
}

pub fn read_correctness(path: &Path) -> Result<CorrectnessTable, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Shape(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyStats {
    pub methods: Vec<String>,
    pub n_blocks: usize,
    /// Segments left out because one of the methods excluded them.
    pub dropped: usize,
    pub friedman: FriedmanResult,
    pub dunn: DunnResult,
}

impl FamilyStats {
    pub fn render(&self) -> String {
        format!(
            "Friedman test ({}), n = {} segments{}\n{}\nDunn post-hoc test (Bonferroni adjusted)\n{}",
            self.methods.join(", "),
            self.n_blocks,
            if self.dropped > 0 {
                format!(", {} dropped", self.dropped)
            } else {
                String::new()
            },
            self.friedman.render_table(),
            self.dunn.render_table()
        )
    }
}

pub const DEFAULT_STAT_FAMILIES: [[StrategyId; 3]; 2] = [
    [StrategyId::B1, StrategyId::C1, StrategyId::D1],
    [StrategyId::B2, StrategyId::C2, StrategyId::D2],
];

/// Friedman and Dunn over the correctness columns of `methods`, using the
/// segments every method scored.
pub fn family_stats(table: &CorrectnessTable, methods: &[String]) -> Result<FamilyStats, PipelineError> {
    let n = table.segment_ids.len();
    let mut columns = Vec::with_capacity(methods.len());
    for m in methods {
        let col = table
            .strategies
            .get(m)
            .ok_or_else(|| PipelineError::Shape(format!("no correctness vector for {m}")))?;
        if col.len() != n {
            return Err(PipelineError::Shape(format!(
                "vector for {m} has {} entries, expected {n}",
                col.len()
            )));
        }
        columns.push(col);
    }
    let mut blocks = Vec::new();
    for i in 0..n {
        let row: Option<Vec<f64>> = columns.iter().map(|c| c[i].map(f64::from)).collect();
        if let Some(row) = row {
            blocks.push(row);
        }
    }
    let groups: Vec<Vec<f64>> = (0..methods.len())
        .map(|j| blocks.iter().map(|b| b[j]).collect())
        .collect();
    Ok(FamilyStats {
        methods: methods.to_vec(),
        n_blocks: blocks.len(),
        dropped: n - blocks.len(),
        friedman: friedman(&blocks)?,
        dunn: dunn(&groups, methods)?,
    })
}

/// Runs [`family_stats`] for each default family whose columns are all present.
pub fn run_stats(table: &CorrectnessTable) -> Result<Vec<FamilyStats>, PipelineError> {
    let mut out = Vec::new();
    for family in DEFAULT_STAT_FAMILIES {
        let names: Vec<String> = family.iter().map(|s| s.to_string()).collect();
        if names.iter().all(|m| table.strategies.contains_key(m)) {
            out.push(family_stats(table, &names)?);
        }
    }
    if out.is_empty() {
        return Err(PipelineError::Shape(
            "correctness table holds no complete B/C/D family".into(),
        ));
    }
    Ok(out)
}

/// Where the three-class frame labels of a simulation come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreeClassSource {
    /// Seven-class frame labels mapped to sentiment, as in the real pipeline.
    Mapped,
    /// A three-class labeler annotating each frame directly.
    Direct,
}

impl std::str::FromStr for ThreeClassSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mapped" => Ok(ThreeClassSource::Mapped),
            "direct" => Ok(ThreeClassSource::Direct),
            other => Err(format!("unknown three-class source {other:?} (mapped|direct)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_segments: usize,
    pub seed: u64,
    pub labeler: LabelerSpec,
    pub three_class_source: ThreeClassSource,
    pub strategies: Vec<StrategyId>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_segments: 2_000,
            seed: 42,
            labeler: LabelerSpec::Uniform,
            three_class_source: ThreeClassSource::Mapped,
            strategies: StrategyId::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyOutcome {
    pub strategy: StrategyId,
    pub taxonomy: Taxonomy,
    pub accuracy: f64,
    pub uar: f64,
    pub predictions: u64,
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub n_segments: usize,
    pub seed: u64,
    pub labeler: String,
    pub three_class_source: ThreeClassSource,
    pub outcomes: Vec<StrategyOutcome>,
    /// Accuracy gains over the per-frame baseline of the same taxonomy, in
    /// accuracy points (fractions), keyed like `B1-A1`.
    pub deltas: BTreeMap<String, f64>,
}

impl SimulationReport {
    pub fn accuracy(&self, strategy: StrategyId) -> Option<f64> {
        self.outcomes
            .iter()
            .find(|o| o.strategy == strategy)
            .map(|o| o.accuracy)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "Simulated labeler {} ({} segments, seed {}, three-class frames {:?})\n",
            self.labeler, self.n_segments, self.seed, self.three_class_source
        );
        out.push_str(&format!(
            "{:<9}{:>13}{:>11}{:>9}{:>9}\n",
            "strategy", "predictions", "accuracy", "UAR", "chance"
        ));
        for o in &self.outcomes {
            out.push_str(&format!(
                "{:<9}{:>13}{:>11.4}{:>9.4}{:>9.4}\n",
                o.strategy, o.predictions, o.accuracy, o.uar, o.chance
            ));
        }
        for (k, v) in &self.deltas {
            out.push_str(&format!("{k}: {:+.4}\n", v));
        }
        out
    }
}

/// Synthetic segments with ground truth drawn uniformly over the seven
/// emotions, keyed by `seed`.
pub fn synthetic_segments(n: usize, seed: u64) -> Vec<SegmentRecord> {
    (0..n)
        .map(|i| {
            let segment_id = format!("sim-{i:06}");
            let u = crate::annotator::uniform_draw(seed, &segment_id, "ground_truth", 0);
            let ground_truth = Emotion::ALL[((u * 7.0) as usize).min(6)];
            SegmentRecord {
                segment_id,
                ground_truth,
                frames_dir: Default::default(),
            }
        })
        .collect()
}

fn placeholder_request(taxonomy: Taxonomy, mode: RequestMode) -> ChatRequest {
    ChatRequest {
        model_id: "simulated".into(),
        system_text: String::new(),
        user_text: String::new(),
        image_payload: String::new(),
        temperature: 0.0,
        max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        taxonomy,
        mode,
        encoding_tag: String::new(),
    }
}

/// Runs every requested strategy against a simulated labeler over synthetic
/// segments. No images or network are involved: answers come from the
/// simulated backend and go through the same parsing, aggregation and
/// evaluation code as a real run.
pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport, PipelineError> {
    let backend =
        SimulatedBackend::from_spec(config.labeler, config.seed).map_err(|e| PipelineError::Config(e.to_string()))?;
    let segments = synthetic_segments(config.n_segments, config.seed);
    let ground_truth: HashMap<String, Emotion> = segments
        .iter()
        .map(|s| (s.segment_id.clone(), s.ground_truth))
        .collect();

    let ask = |seg: &SegmentRecord, role: RecordRole, request: &ChatRequest| -> Label {
        let ctx = RequestContext {
            segment_id: &seg.segment_id,
            role,
            ground_truth: seg.ground_truth,
            draw_index: 0,
        };
        let completion = backend
            .complete(request, &ctx)
            .expect("simulated backend is infallible");
        parse_label(&completion.content, request.taxonomy).expect("simulated answers are canonical")
    };
    let single7 = placeholder_request(Taxonomy::SevenClass, RequestMode::Single);
    let single3 = placeholder_request(Taxonomy::ThreeClass, RequestMode::Single);
    let composite7 = placeholder_request(Taxonomy::SevenClass, RequestMode::Composite);
    let composite3 = placeholder_request(Taxonomy::ThreeClass, RequestMode::Composite);

    let mut strategies = config.strategies.clone();
    strategies.sort();
    strategies.dedup();
    let mut preds: BTreeMap<StrategyId, Vec<SegmentPrediction>> = BTreeMap::new();

    for seg in &segments {
        let votes7 = SegmentVotes::new(
            seg.segment_id.clone(),
            PositionRole::ALL.map(|r| ask(seg, r.into(), &single7).as_emotion().expect("seven-class")),
        );
        let votes3_direct = (config.three_class_source == ThreeClassSource::Direct).then(|| {
            SegmentVotes::new(
                seg.segment_id.clone(),
                PositionRole::ALL.map(|r| ask(seg, r.into(), &single3).as_sentiment().expect("three-class")),
            )
        });
        for &s in &strategies {
            let p = match (s, &votes3_direct) {
                (StrategyId::D1, _) => composite_prediction(s, ask(seg, RecordRole::Composite, &composite7), seg),
                (StrategyId::D2, _) => composite_prediction(s, ask(seg, RecordRole::Composite, &composite3), seg),
                (StrategyId::A2 | StrategyId::B2 | StrategyId::C2, Some(v3)) => apply_to_sentiment_votes(s, v3),
                _ => apply_to_votes(s, &votes7),
            };
            preds.entry(s).or_default().push(p);
        }
    }

    let mut outcomes = Vec::new();
    for (strategy, p) in &preds {
        let cm = confusion_from_predictions(p, &ground_truth, strategy.taxonomy())
            .map_err(|e| PipelineError::Shape(e.to_string()))?;
        let report = classification_report(&cm);
        outcomes.push(StrategyOutcome {
            strategy: *strategy,
            taxonomy: strategy.taxonomy(),
            accuracy: report.accuracy,
            uar: report.uar,
            predictions: cm.total,
            chance: 1.0 / strategy.taxonomy().len() as f64,
        });
    }

    let acc = |s: StrategyId| outcomes.iter().find(|o| o.strategy == s).map(|o| o.accuracy);
    let mut deltas = BTreeMap::new();
    for (s, base) in [
        (StrategyId::B1, StrategyId::A1),
        (StrategyId::C1, StrategyId::A1),
        (StrategyId::D1, StrategyId::A1),
        (StrategyId::B2, StrategyId::A2),
        (StrategyId::C2, StrategyId::A2),
        (StrategyId::D2, StrategyId::A2),
    ] {
        if let (Some(a), Some(b)) = (acc(s), acc(base)) {
            deltas.insert(format!("{s}-{base}"), a - b);
        }
    }

    Ok(SimulationReport {
        n_segments: config.n_segments,
        seed: config.seed,
        labeler: config.labeler.to_string(),
        three_class_source: config.three_class_source,
        outcomes,
        deltas,
    })
}

fn composite_prediction(strategy: StrategyId, label: Label, seg: &SegmentRecord) -> SegmentPrediction {
    SegmentPrediction {
        segment_id: seg.segment_id.clone(),
        strategy,
        granularity: strategy.granularity(),
        labels: vec![label],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jobs_for_strategy_sets() {
        assert_eq!(required_jobs(&[StrategyId::A1]).len(), 5);
        assert_eq!(required_jobs(&[StrategyId::B2, StrategyId::C1]).len(), 5);
        assert_eq!(
            required_jobs(&[StrategyId::D1]),
            vec![(RecordRole::Composite, Taxonomy::SevenClass)]
        );
        assert_eq!(required_jobs(&StrategyId::ALL).len(), 7);
    }

    #[test]
    fn synthetic_ground_truth_is_seeded() {
        let a = synthetic_segments(50, 1);
        let b = synthetic_segments(50, 1);
        let c = synthetic_segments(50, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_labeler_is_perfect() {
        let r = run_simulation(&SimulationConfig {
            n_segments: 50,
            labeler: LabelerSpec::Identity,
            ..Default::default()
        })
        .unwrap();
        for o in &r.outcomes {
            assert_eq!(o.accuracy, 1.0, "{}", o.strategy);
        }
        assert_eq!(r.accuracy(StrategyId::A1).unwrap(), 1.0);
        assert_eq!(
            r.outcomes
                .iter()
                .find(|o| o.strategy == StrategyId::A1)
                .unwrap()
                .predictions,
            250
        );
    }

    fn table(cols: &[(&str, Vec<Option<u8>>)]) -> CorrectnessTable {
        CorrectnessTable {
            segment_ids: (0..cols[0].1.len()).map(|i| format!("s{i}")).collect(),
            strategies: cols.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    #[test]
    fn stats_on_identical_vectors() {
        let v: Vec<Option<u8>> = (0..30).map(|i| Some((i % 3 == 0) as u8)).collect();
        let t = table(&[("B1", v.clone()), ("C1", v.clone()), ("D1", v)]);
        let fams = run_stats(&t).unwrap();
        assert_eq!(fams.len(), 1);
        assert_eq!(fams[0].friedman.w, 0.0);
        assert_eq!(fams[0].friedman.p, 1.0);
        assert!(fams[0].dunn.p_adj.iter().flatten().all(|p| *p == 1.0));
    }

    #[test]
    fn stats_detects_a_better_method() {
        let n = 200;
        let weak: Vec<Option<u8>> = (0..n).map(|i| Some((i % 4 == 0) as u8)).collect();
        let weak2: Vec<Option<u8>> = (0..n).map(|i| Some((i % 4 == 1) as u8)).collect();
        let strong: Vec<Option<u8>> = (0..n).map(|i| Some((i % 10 != 0) as u8)).collect();
        let t = table(&[("B2", weak), ("C2", weak2), ("D2", strong)]);
        let fams = run_stats(&t).unwrap();
        assert!(fams[0].friedman.p < 0.05);
        assert!(fams[0].dunn.p_adj[0][2] < 0.05);
        let text = fams[0].render();
        let header = text.lines().nth(1).unwrap();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(cols, vec!["Source", "W", "df", "Q", "p-unc"]);
    }

    #[test]
    fn stats_drop_excluded_rows_and_check_shape() {
        let t = table(&[
            ("B1", vec![Some(1), None, Some(0), Some(1)]),
            ("C1", vec![Some(1), Some(1), Some(0), Some(0)]),
            ("D1", vec![Some(0), Some(1), Some(1), Some(1)]),
        ]);
        let f = family_stats(&t, &["B1".into(), "C1".into(), "D1".into()]).unwrap();
        assert_eq!((f.n_blocks, f.dropped), (3, 1));

        let mut bad = t.clone();
        bad.strategies.get_mut("C1").unwrap().pop();
        assert!(matches!(run_stats(&bad), Err(PipelineError::Shape(_))));
        assert!(matches!(
            family_stats(&t, &["B1".into(), "X9".into()]),
            Err(PipelineError::Shape(_))
        ));
    }
}
