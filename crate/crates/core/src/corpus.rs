//! Dataset manifest, the append-only annotation store, and request cost
//! estimates.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{AnnotationRecord, RecordRole};
use crate::labels::{Emotion, Taxonomy};
use crate::strategies::{Family, StrategyId};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: line {line}: unknown label {label:?}")]
    UnknownLabel { path: PathBuf, line: u64, label: String },
    #[error("duplicate segment id {0:?}")]
    DuplicateSegment(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub ground_truth: Emotion,
    pub frames_dir: PathBuf,
}

impl SegmentRecord {
    pub fn n_frames(&self) -> usize {
        crate::sampling::list_frames(&self.frames_dir)
            .map(|f| f.len())
            .unwrap_or(0)
    }
}

pub const MANIFEST_HEADER: [&str; 3] = ["segment_id", "label", "frames_dir"];

/// Reads a `segment_id,label,frames_dir` CSV. Relative frame directories are
/// resolved against the manifest's own directory.
pub fn load_manifest(path: &Path) -> Result<Vec<SegmentRecord>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let parse_err = |line: u64, message: String| CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(parse_err(1, format!("expected header {}", MANIFEST_HEADER.join(","))));
    }

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let (id, label, dir) = (&row[0], &row[1], &row[2]);
        if id.is_empty() || dir.is_empty() {
            return Err(parse_err(line, "empty segment_id or frames_dir".into()));
        }
        let ground_truth: Emotion = label.parse().map_err(|_| CorpusError::UnknownLabel {
            path: path.to_path_buf(),
            line,
            label: label.to_string(),
        })?;
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateSegment(id.to_string()));
        }
        let dir = PathBuf::from(dir);
        out.push(SegmentRecord {
            segment_id: id.to_string(),
            ground_truth,
            frames_dir: if dir.is_absolute() { dir } else { base.join(dir) },
        });
    }
    Ok(out)
}

/// Writes a manifest; frame directories are written as given.
pub fn write_manifest(path: &Path, segments: &[SegmentRecord]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CorpusError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let to_err = |e: csv::Error| CorpusError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    w.write_record(MANIFEST_HEADER).map_err(to_err)?;
    for s in segments {
        w.write_record([
            s.segment_id.as_str(),
            s.ground_truth.to_string().as_str(),
            s.frames_dir.to_string_lossy().as_ref(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct JobKey {
    segment_id: String,
    role: RecordRole,
    taxonomy: Taxonomy,
    prompt_hash: String,
}

impl JobKey {
    fn of(r: &AnnotationRecord) -> Self {
        JobKey {
            segment_id: r.segment_id.clone(),
            role: r.role,
            taxonomy: r.taxonomy,
            prompt_hash: r.prompt_hash.clone(),
        }
    }
}

/// Append-only JSONL file of [`AnnotationRecord`]s with an in-memory index.
///
/// A torn final line left by an interrupted write is cut off when the store
/// is opened; a malformed line anywhere else is an error.
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    records: Vec<AnnotationRecord>,
    by_hash: HashMap<String, usize>,
    by_job: HashMap<JobKey, usize>,
}

impl std::fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationStore")
            .field("path", &self.path)
            .field("records", &self.records.len())
            .finish()
    }
}

impl AnnotationStore {
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;

        let mut records = Vec::new();
        let mut good_len = 0u64;
        let mut torn = false;
        {
            let mut reader = BufReader::new(&file);
            let mut buf = String::new();
            let mut line_no = 0u64;
            loop {
                buf.clear();
                let n = reader.read_line(&mut buf).map_err(io_err(path))?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                let complete = buf.ends_with('\n');
                let text = buf.trim_end();
                if text.is_empty() {
                    if complete {
                        good_len += n as u64;
                    }
                    continue;
                }
                if !complete {
                    torn = true;
                    break;
                }
                match serde_json::from_str::<AnnotationRecord>(text) {
                    Ok(r) => {
                        records.push(r);
                        good_len += n as u64;
                    }
                    Err(e) => {
                        // a bad line is only forgivable as the last one
                        let mut rest = Vec::new();
                        reader.read_to_end(&mut rest).map_err(io_err(path))?;
                        if rest.iter().all(u8::is_ascii_whitespace) {
                            torn = true;
                            break;
                        }
                        return Err(CorpusError::Parse {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        if torn {
            warn!("{}: dropping torn trailing record", path.display());
            file.set_len(good_len).map_err(io_err(path))?;
            file.seek(SeekFrom::End(0)).map_err(io_err(path))?;
        }

        let mut store = AnnotationStore {
            path: path.to_path_buf(),
            file,
            records: Vec::new(),
            by_hash: HashMap::new(),
            by_job: HashMap::new(),
        };
        for r in records {
            store.index(r);
        }
        Ok(store)
    }

    fn index(&mut self, record: AnnotationRecord) {
        let i = self.records.len();
        self.by_hash.entry(record.prompt_hash.clone()).or_insert(i);
        self.by_job.insert(JobKey::of(&record), i);
        self.records.push(record);
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: AnnotationRecord) -> Result<(), CorpusError> {
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.index(record);
        Ok(())
    }

    /// First record stored under `prompt_hash`.
    pub fn lookup(&self, prompt_hash: &str) -> Option<&AnnotationRecord> {
        self.by_hash.get(prompt_hash).map(|&i| &self.records[i])
    }

    /// Record for exactly this segment, role, taxonomy and prompt.
    pub fn lookup_job(
        &self,
        segment_id: &str,
        role: RecordRole,
        taxonomy: Taxonomy,
        prompt_hash: &str,
    ) -> Option<&AnnotationRecord> {
        let key = JobKey {
            segment_id: segment_id.to_string(),
            role,
            taxonomy,
            prompt_hash: prompt_hash.to_string(),
        };
        self.by_job.get(&key).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Modeled prices; the defaults are placeholders to be replaced with the
/// provider's current rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriceTable {
    pub input_per_million_tokens: f64,
    pub output_per_million_tokens: f64,
    pub single_input_tokens: u64,
    pub composite_input_tokens: u64,
    pub output_tokens_per_request: u64,
}

impl Default for PriceTable {
    fn default() -> Self {
        Self {
            input_per_million_tokens: 0.15,
            output_per_million_tokens: 0.60,
            single_input_tokens: 1_000,
            composite_input_tokens: 3_000,
            output_tokens_per_request: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCost {
    pub strategy: String,
    /// Requests the strategy needs when run on its own.
    pub requests: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub n_segments: u64,
    pub per_strategy: Vec<StrategyCost>,
    /// Distinct single-frame requests for the whole strategy set (the
    /// seven-class frame labels are shared by every frame-vote strategy).
    pub single_frame_requests: u64,
    pub composite_requests: u64,
    pub total_requests: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

pub fn estimate_cost(n_segments: u64, strategies: &[StrategyId], prices: &PriceTable) -> CostEstimate {
    let per_strategy = strategies
        .iter()
        .map(|s| StrategyCost {
            strategy: s.to_string(),
            requests: match s.family() {
                Family::Composite => n_segments,
                _ => 5 * n_segments,
            },
        })
        .collect();
    let single_frame_requests = if strategies.iter().any(|s| s.needs_frames()) {
        5 * n_segments
    } else {
        0
    };
    let composites = strategies.iter().filter(|s| s.family() == Family::Composite).count() as u64;
    let composite_requests = composites * n_segments;
    let input_tokens =
        single_frame_requests * prices.single_input_tokens + composite_requests * prices.composite_input_tokens;
    let total_requests = single_frame_requests + composite_requests;
    let output_tokens = total_requests * prices.output_tokens_per_request;
    let cost = input_tokens as f64 * prices.input_per_million_tokens / 1e6
        + output_tokens as f64 * prices.output_per_million_tokens / 1e6;
    CostEstimate {
        n_segments,
        per_strategy,
        single_frame_requests,
        composite_requests,
        total_requests,
        input_tokens,
        output_tokens,
        cost,
    }
}

/// Measured usage over a store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub records: u64,
    pub backend_calls: u64,
    pub reused: u64,
    pub invalid: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Records whose token counts were not reported by the endpoint.
    pub unreported: u64,
}

pub fn usage_summary(records: &[AnnotationRecord]) -> UsageSummary {
    let mut s = UsageSummary::default();
    for r in records {
        s.records += 1;
        s.backend_calls += r.attempts as u64;
        s.reused += u64::from(r.reused);
        s.invalid += u64::from(!r.is_valid());
        s.input_tokens += r.request_cost.input_tokens;
        s.output_tokens += r.request_cost.output_tokens;
        s.unreported += u64::from(!r.reused && !r.request_cost.reported);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{BackendKind, RequestCost};

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn manifest_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.csv",
            "segment_id,label,frames_dir\na,Happy,frames/a\nb,Sad,/abs/b\nc,Neutral,c\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].ground_truth, Emotion::Happy);
        assert_eq!(m[0].frames_dir, dir.path().join("frames/a"));
        assert_eq!(m[1].frames_dir, PathBuf::from("/abs/b"));
    }

    #[test]
    fn manifest_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.csv",
            "segment_id,label,frames_dir\na,Happy,x\nb,Bored,y\n",
        );
        match load_manifest(&p) {
            Err(CorpusError::UnknownLabel { line, label, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(label, "Bored");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "segment_id,label,frames_dir\na,Happy,x\na,Sad,y\n");
        assert!(matches!(load_manifest(&p), Err(CorpusError::DuplicateSegment(id)) if id == "a"));
    }

    #[test]
    fn manifest_bad_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "id,label,dir\na,Happy,x\n");
        assert!(matches!(load_manifest(&p), Err(CorpusError::Parse { line: 1, .. })));
        let p = write(dir.path(), "m2.csv", "segment_id,label,frames_dir\na,Happy\n");
        assert!(matches!(load_manifest(&p), Err(CorpusError::Parse { .. })));
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let segs = vec![SegmentRecord {
            segment_id: "x1".into(),
            ground_truth: Emotion::Fear,
            frames_dir: dir.path().join("f"),
        }];
        let p = dir.path().join("m.csv");
        write_manifest(&p, &segs).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), segs);
    }

    pub(crate) fn record(seg: &str, role: RecordRole, hash: &str) -> AnnotationRecord {
        AnnotationRecord {
            segment_id: seg.into(),
            role,
            taxonomy: Taxonomy::SevenClass,
            model_id: "m".into(),
            prompt_hash: hash.into(),
            raw_response: "Happy".into(),
            parsed: Some("Happy".into()),
            request_cost: RequestCost::default(),
            attempts: 1,
            reused: false,
            timestamp: "2026-01-01T00:00:00.000Z".into(),
            backend: BackendKind::Simulated { seed: 1 },
        }
    }

    #[test]
    fn store_append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        {
            let mut s = AnnotationStore::open(&p).unwrap();
            s.append(record("a", RecordRole::First, "h1")).unwrap();
            s.append(record("a", RecordRole::Q1, "h2")).unwrap();
            assert_eq!(s.lookup("h1").unwrap().role, RecordRole::First);
        }
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        let s = AnnotationStore::open(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.lookup("h2").unwrap(), &record("a", RecordRole::Q1, "h2"));
        assert!(s.lookup("nope").is_none());
        assert!(s.lookup_job("a", RecordRole::Q1, Taxonomy::SevenClass, "h2").is_some());
        assert!(s.lookup_job("a", RecordRole::Q1, Taxonomy::ThreeClass, "h2").is_none());
    }

    #[test]
    fn store_first_record_wins_hash_index() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = AnnotationStore::open(&dir.path().join("s.jsonl")).unwrap();
        s.append(record("a", RecordRole::First, "same")).unwrap();
        s.append(record("a", RecordRole::Q1, "same")).unwrap();
        assert_eq!(s.lookup("same").unwrap().role, RecordRole::First);
        assert!(s
            .lookup_job("a", RecordRole::Q1, Taxonomy::SevenClass, "same")
            .is_some());
    }

    #[test]
    fn store_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        {
            let mut s = AnnotationStore::open(&p).unwrap();
            s.append(record("a", RecordRole::First, "h1")).unwrap();
            s.append(record("a", RecordRole::Q1, "h2")).unwrap();
        }
        let full = std::fs::read(&p).unwrap();
        std::fs::write(&p, &full[..full.len() - 20]).unwrap();
        let mut s = AnnotationStore::open(&p).unwrap();
        assert_eq!(s.len(), 1);
        s.append(record("a", RecordRole::Q1, "h2")).unwrap();
        drop(s);
        let s = AnnotationStore::open(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(std::fs::read(&p).unwrap(), full);
    }

    #[test]
    fn store_rejects_corrupt_middle_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let good = serde_json::to_string(&record("a", RecordRole::First, "h1")).unwrap();
        std::fs::write(&p, format!("{good}\n{{oops\n{good}\n")).unwrap();
        assert!(matches!(
            AnnotationStore::open(&p),
            Err(CorpusError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn cost_examples() {
        let p = PriceTable::default();
        let a1 = estimate_cost(2339, &[StrategyId::A1], &p);
        assert_eq!(a1.total_requests, 11_695);
        let d1 = estimate_cost(2339, &[StrategyId::D1], &p);
        assert_eq!(d1.total_requests, 2_339);
        assert_eq!(a1.total_requests, 5 * d1.total_requests);

        let all = estimate_cost(10, &StrategyId::ALL, &p);
        assert_eq!(all.single_frame_requests, 50);
        assert_eq!(all.composite_requests, 20);
        assert_eq!(
            all.per_strategy.iter().find(|c| c.strategy == "B2").unwrap().requests,
            50
        );
        let expected = (50.0 * 1000.0 + 20.0 * 3000.0) * 0.15 / 1e6 + 70.0 * 2.0 * 0.60 / 1e6;
        assert!((all.cost - expected).abs() < 1e-15);
    }

    #[test]
    fn usage_totals() {
        let mut a = record("a", RecordRole::First, "h");
        a.request_cost = RequestCost {
            input_tokens: 10,
            output_tokens: 1,
            reported: true,
        };
        let mut b = a.reuse_for("b", RecordRole::First);
        b.parsed = None;
        let u = usage_summary(&[a, b]);
        assert_eq!(u.records, 2);
        assert_eq!(u.backend_calls, 1);
        assert_eq!(u.reused, 1);
        assert_eq!(u.invalid, 1);
        assert_eq!(u.input_tokens, 10);
    }
}
