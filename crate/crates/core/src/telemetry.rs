//! Line-delimited JSON run logs and the behavioural statistics computed
//! from them: decision state counts, run lengths and term frequencies.
//!
//! Each line is one [`LogRecord`] serialized with fields in declaration
//! order: `timestamp_ms, seq, agent, kind, text, flag?, pose?, run_id`.
//! `flag` appears only on decision records and `pose` only when known.
//! Text is JSON-escaped, so embedded newlines never split a record.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Utterance,
    Decision,
    Motor,
    World,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp_ms: u64,
    pub seq: u64,
    pub agent: String,
    pub kind: RecordKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 3]>,
    pub run_id: String,
}

impl LogRecord {
    /// Schema checks beyond what the JSON shape enforces.
    pub fn is_well_formed(&self) -> bool {
        let flag_ok = match (self.kind, self.flag) {
            (RecordKind::Decision, Some(f)) => f <= 1,
            (RecordKind::Decision, None) => false,
            (_, Some(_)) => false,
            (_, None) => true,
        };
        flag_ok && !self.agent.is_empty()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot open log {path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
    #[error("record seq {seq} does not follow {last}")]
    SeqOrder { seq: u64, last: u64 },
    #[error("malformed record: flag must be present exactly on decision records")]
    Malformed,
}

/// Append-only writer. Flushes after every record.
pub struct LogSink {
    out: Box<dyn Write + Send>,
    run_id: String,
    last_seq: u64,
    written: u64,
}

impl LogSink {
    pub fn create(path: &Path, run_id: &str) -> Result<Self, LogError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|source| LogError::Open {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self::from_writer(Box::new(BufWriter::new(file)), run_id))
    }

    pub fn from_writer(out: Box<dyn Write + Send>, run_id: &str) -> Self {
        Self {
            out,
            run_id: run_id.to_owned(),
            last_seq: 0,
            written: 0,
        }
    }

    /// Discards everything; used when no log path is configured.
    pub fn null(run_id: &str) -> Self {
        Self::from_writer(Box::new(std::io::sink()), run_id)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    /// Builds and writes the next record, assigning its seq.
    pub fn record(
        &mut self,
        timestamp_ms: u64,
        agent: &str,
        kind: RecordKind,
        text: &str,
        flag: Option<u8>,
        pose: Option<[f64; 3]>,
    ) -> Result<LogRecord, LogError> {
        let rec = LogRecord {
            timestamp_ms,
            seq: self.last_seq + 1,
            agent: agent.to_owned(),
            kind,
            text: text.to_owned(),
            flag,
            pose,
            run_id: self.run_id.clone(),
        };
        append_record(self, &rec)?;
        Ok(rec)
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn append_record(sink: &mut LogSink, record: &LogRecord) -> Result<(), LogError> {
    if record.seq <= sink.last_seq {
        return Err(LogError::SeqOrder {
            seq: record.seq,
            last: sink.last_seq,
        });
    }
    if !record.is_well_formed() {
        return Err(LogError::Malformed);
    }
    writeln!(sink.out, "{}", record.to_line())?;
    sink.out.flush()?;
    sink.last_seq = record.seq;
    sink.written += 1;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedLog {
    pub records: Vec<LogRecord>,
    pub malformed: usize,
}

pub fn parse_record(line: &str) -> Option<LogRecord> {
    serde_json::from_str::<LogRecord>(line)
        .ok()
        .filter(LogRecord::is_well_formed)
}

/// Reads records in file order, skipping (and counting) malformed lines.
pub fn load_records(path: &Path) -> Result<LoadedLog, LogError> {
    let file = File::open(path).map_err(|source| LogError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = LoadedLog::default();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Some(r) => out.records.push(r),
            None => out.malformed += 1,
        }
    }
    Ok(out)
}

/// Decision records grouped per run (in order of first appearance) and
/// sorted by seq within each run.
fn decisions_by_run(records: &[LogRecord]) -> Vec<Vec<u8>> {
    let mut order: Vec<&str> = Vec::new();
    let mut runs: HashMap<&str, Vec<(u64, u8)>> = HashMap::new();
    for r in records {
        if let (RecordKind::Decision, Some(f)) = (r.kind, r.flag) {
            if !runs.contains_key(r.run_id.as_str()) {
                order.push(&r.run_id);
            }
            runs.entry(&r.run_id).or_default().push((r.seq, f));
        }
    }
    order
        .into_iter()
        .map(|id| {
            let mut v = runs.remove(id).unwrap_or_default();
            v.sort_by_key(|(seq, _)| *seq);
            v.into_iter().map(|(_, f)| f).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StateCounts {
    pub stop: usize,
    #[serde(rename = "move")]
    pub moving: usize,
}

pub fn state_counts(records: &[LogRecord]) -> StateCounts {
    let mut c = StateCounts::default();
    for r in records.iter().filter(|r| r.kind == RecordKind::Decision) {
        match r.flag {
            Some(1) => c.moving += 1,
            Some(_) => c.stop += 1,
            None => {}
        }
    }
    c
}

/// Histograms of maximal same-flag runs, keyed by run length.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunLengths {
    pub stop: BTreeMap<usize, usize>,
    #[serde(rename = "move")]
    pub moving: BTreeMap<usize, usize>,
}

impl RunLengths {
    pub fn max_stop(&self) -> usize {
        self.stop.keys().next_back().copied().unwrap_or(0)
    }

    pub fn max_move(&self) -> usize {
        self.moving.keys().next_back().copied().unwrap_or(0)
    }

    /// Σ length × count for one histogram.
    pub fn weighted_total(h: &BTreeMap<usize, usize>) -> usize {
        h.iter().map(|(len, n)| len * n).sum()
    }
}

pub fn run_lengths(records: &[LogRecord]) -> RunLengths {
    let mut out = RunLengths::default();
    for flags in decisions_by_run(records) {
        let mut iter = flags.into_iter().peekable();
        while let Some(f) = iter.next() {
            let mut len = 1;
            while iter.peek() == Some(&f) {
                iter.next();
                len += 1;
            }
            let h = if f == 1 { &mut out.moving } else { &mut out.stop };
            *h.entry(len).or_default() += 1;
        }
    }
    out
}

/// Lowercasing whitespace/punctuation tokenizer with a stop-word list.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::with_stopwords(parse_stopwords(include_str!("../assets/stopwords.txt")))
    }
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl Tokenizer {
    pub fn with_stopwords(stopwords: HashSet<String>) -> Self {
        Self { stopwords }
    }

    pub fn none() -> Self {
        Self::with_stopwords(HashSet::new())
    }

    pub fn tokens<'a>(&'a self, text: &'a str) -> impl Iterator<Item = String> + 'a {
        text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’'))
            .map(|t| t.trim_matches(['\'', '’']).to_lowercase())
            .filter(move |t| !t.is_empty() && !self.stopwords.contains(t))
    }
}

fn rank(counts: HashMap<String, usize>, top_k: usize) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(top_k);
    v
}

fn count_terms<'a>(texts: impl Iterator<Item = &'a str>, tok: &Tokenizer) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for t in texts {
        for w in tok.tokens(t) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Term counts over utterances, optionally restricted to one agent.
/// Ranked by count (descending), ties broken lexicographically.
pub fn term_frequency(
    records: &[LogRecord],
    agent: Option<&str>,
    top_k: usize,
    tok: &Tokenizer,
) -> Vec<(String, usize)> {
    let texts = records
        .iter()
        .filter(|r| r.kind == RecordKind::Utterance)
        .filter(|r| agent.is_none_or(|a| r.agent == a))
        .map(|r| r.text.as_str());
    rank(count_terms(texts, tok), top_k.max(1))
}

/// Agent whose utterances are examined before transitions.
pub const TRANSITION_SOURCE: &str = "chat";

/// Terms of chat utterances found within `window` records before each
/// decision that switches into `target`. The robot starts stopped, so a
/// first decision of 1 counts as a transition into move.
pub fn pre_transition_terms(
    records: &[LogRecord],
    target: u8,
    window: usize,
    top_k: usize,
    tok: &Tokenizer,
) -> Vec<(String, usize)> {
    let window = window.max(1);
    let mut runs: Vec<&str> = Vec::new();
    for r in records {
        if !runs.contains(&r.run_id.as_str()) {
            runs.push(&r.run_id);
        }
    }
    let mut picked: Vec<&str> = Vec::new();
    for run in runs {
        let mut recs: Vec<&LogRecord> = records.iter().filter(|r| r.run_id == run).collect();
        recs.sort_by_key(|r| r.seq);
        let mut prev = 0u8;
        let mut taken: HashSet<usize> = HashSet::new();
        for (i, r) in recs.iter().enumerate() {
            let Some(flag) = r.flag.filter(|_| r.kind == RecordKind::Decision) else {
                continue;
            };
            if flag != prev && flag == target {
                for j in i.saturating_sub(window)..i {
                    let c = recs[j];
                    if c.kind == RecordKind::Utterance
                        && c.agent == TRANSITION_SOURCE
                        && taken.insert(j)
                    {
                        picked.push(&c.text);
                    }
                }
            }
            prev = flag;
        }
    }
    rank(count_terms(picked.into_iter(), tok), top_k.max(1))
}

/// Writes one utterance per line; embedded newlines become spaces.
pub fn export_corpus(records: &[LogRecord], agent: Option<&str>, path: &Path) -> Result<usize, LogError> {
    let file = File::create(path).map_err(|source| LogError::Open {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for r in records
        .iter()
        .filter(|r| r.kind == RecordKind::Utterance && agent.is_none_or(|a| r.agent == a))
    {
        let line = r.text.replace("\r\n", " ").replace(['\n', '\r'], " ");
        writeln!(out, "{line}")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn decisions(flags: &[u8]) -> Vec<LogRecord> {
        flags
            .iter()
            .enumerate()
            .map(|(i, &f)| LogRecord {
                timestamp_ms: i as u64,
                seq: i as u64 + 1,
                agent: "action1".into(),
                kind: RecordKind::Decision,
                text: String::new(),
                flag: Some(f),
                pose: None,
                run_id: "r".into(),
            })
            .collect()
    }

    fn utter(seq: u64, agent: &str, text: &str) -> LogRecord {
        LogRecord {
            timestamp_ms: seq,
            seq,
            agent: agent.into(),
            kind: RecordKind::Utterance,
            text: text.into(),
            flag: None,
            pose: None,
            run_id: "r".into(),
        }
    }

    fn decision(seq: u64, flag: u8) -> LogRecord {
        LogRecord {
            flag: Some(flag),
            kind: RecordKind::Decision,
            ..utter(seq, "action1", "")
        }
    }

    #[test]
    fn counts_and_runs_from_fixture() {
        let recs = decisions(&[0, 0, 0, 1, 0, 0]);
        assert_eq!(state_counts(&recs), StateCounts { stop: 5, moving: 1 });
        let runs = run_lengths(&recs);
        assert_eq!(runs.stop, BTreeMap::from([(3, 1), (2, 1)]));
        assert_eq!(runs.moving, BTreeMap::from([(1, 1)]));

        assert_eq!(state_counts(&[]), StateCounts::default());
        assert_eq!(state_counts(&decisions(&[1, 1])), StateCounts { stop: 0, moving: 2 });
        assert_eq!(run_lengths(&decisions(&[0])).stop, BTreeMap::from([(1, 1)]));
        assert_eq!(run_lengths(&[]), RunLengths::default());
    }

    #[test]
    fn term_counts() {
        let recs = vec![utter(1, "sensor", "a a b")];
        assert_eq!(
            term_frequency(&recs, None, 10, &Tokenizer::none()),
            vec![("a".to_string(), 2), ("b".to_string(), 1)]
        );
        assert!(term_frequency(&[], None, 10, &Tokenizer::default()).is_empty());
        let recs = vec![utter(1, "sensor", "The soil is dry. The SOIL, sadly!")];
        let top = term_frequency(&recs, Some("sensor"), 1, &Tokenizer::default());
        assert_eq!(top, vec![("soil".to_string(), 2)]);
        assert!(term_frequency(&recs, Some("chat"), 5, &Tokenizer::default()).is_empty());
    }

    #[test]
    fn pre_transition_windows() {
        let recs = vec![
            utter(1, "chat", "we are stable here"),
            decision(2, 0),
            utter(3, "chat", "let us move now"),
            utter(4, "action1", "[1] move"),
            decision(5, 1),
            utter(6, "chat", "calm and stable"),
            decision(7, 0),
        ];
        let tok = Tokenizer::default();
        let mv = pre_transition_terms(&recs, 1, 3, 10, &tok);
        assert!(mv.iter().any(|(t, _)| t == "move"));
        assert!(!mv.iter().any(|(t, _)| t == "stable"));
        let st = pre_transition_terms(&recs, 0, 3, 10, &tok);
        // the first [0] is not a transition
        assert_eq!(st, vec![("calm".to_string(), 1), ("stable".to_string(), 1)]);
        // huge window clamps to the log start
        let all = pre_transition_terms(&recs, 1, 1000, 10, &tok);
        assert!(all.iter().any(|(t, _)| t == "stable"));
        // no transitions at all
        assert!(pre_transition_terms(&decisions(&[0, 0, 0]), 1, 3, 10, &tok).is_empty());
    }

    #[test]
    fn sink_and_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        let mut sink = LogSink::create(&path, "run-1").unwrap();
        sink.record(0, "sensor", RecordKind::Utterance, "a\nb", None, None).unwrap();
        sink.record(1, "action1", RecordKind::Decision, "[1]", Some(1), None).unwrap();
        sink.record(2, "world", RecordKind::World, "pose", None, Some([1.0, 2.0, 0.5])).unwrap();
        drop(sink);
        let loaded = load_records(&path).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.malformed, 0);
        assert_eq!(loaded.records[0].text, "a\nb");
        assert_eq!(
            loaded.records.iter().map(|r| r.seq).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        text.push_str(&decisions(&[0])[0].to_line().replace("\"flag\":0,", ""));
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        let loaded = load_records(&path).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.malformed, 2);

        let empty = dir.path().join("empty.log");
        std::fs::write(&empty, "").unwrap();
        assert!(load_records(&empty).unwrap().records.is_empty());
    }

    #[test]
    fn sink_rejects_bad_records() {
        let mut sink = LogSink::null("r");
        let mut rec = utter(1, "chat", "x");
        rec.flag = Some(1);
        assert!(matches!(append_record(&mut sink, &rec), Err(LogError::Malformed)));
        append_record(&mut sink, &utter(2, "chat", "x")).unwrap();
        assert!(matches!(
            append_record(&mut sink, &utter(2, "chat", "y")),
            Err(LogError::SeqOrder { .. })
        ));
    }

    #[test]
    fn corpus_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chat.txt");
        let recs = vec![
            utter(1, "chat", "one"),
            utter(2, "sensor", "skip"),
            utter(3, "chat", "two\nlines"),
            utter(4, "chat", "three"),
        ];
        assert_eq!(export_corpus(&recs, Some("chat"), &path).unwrap(), 3);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "one\ntwo lines\nthree\n");
        assert_eq!(export_corpus(&recs, Some("vision"), &path).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    }
}
