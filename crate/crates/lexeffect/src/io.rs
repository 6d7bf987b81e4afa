//! File formats for the pipeline: JSON-lines records with an optional
//! leading meta line, TSV tables and the ratings CSV.
//!
//! Pipeline outputs start with one meta line recording the config hash
//! and seed that produced the file; readers accept files with or without
//! it.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::candidates::ParaphraseTable;
use crate::corpus::{most_frequent_pos, Corpus, Domain, PosMap, Sentence};
use crate::error::{Error, Result};
use crate::rct::RatingRecord;

/// Provenance stamp embedded in every pipeline output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
}

/// One corpus input line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub label: u8,
    pub domain: Domain,
}

impl From<&Sentence> for SentenceRecord {
    fn from(s: &Sentence) -> Self {
        SentenceRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            label: s.label,
            domain: s.domain,
        }
    }
}

/// Writes records as JSON lines behind a leading meta line.
pub fn write_jsonl<T: Serialize>(path: &Path, meta: Option<&Meta>, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(meta) = meta {
        serde_json::to_writer(&mut out, meta)?;
        out.write_all(b"\n")?;
    }
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads JSON lines, skipping a leading meta line when present.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Meta>, Vec<T>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut meta = None;
    let mut items = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 0 {
            if let Ok(m) = serde_json::from_str::<Meta>(&line) {
                meta = Some(m);
                continue;
            }
        }
        let item: T = serde_json::from_str(&line).map_err(|e| {
            Error::Schema(format!(
                "{}:{}: {e}",
                path.display(),
                line_no + 1
            ))
        })?;
        items.push(item);
    }
    Ok((meta, items))
}

/// Loads a corpus from JSON lines, recomputing tokens and enforcing a
/// single domain.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let (_, records): (_, Vec<SentenceRecord>) = read_jsonl(path)?;
    if records.is_empty() {
        return Err(Error::Schema(format!(
            "{}: empty corpus file",
            path.display()
        )));
    }
    let domain = records[0].domain;
    let sentences = records
        .into_iter()
        .map(|r| Sentence::new(r.id, r.text, r.label, r.domain))
        .collect();
    Corpus::new(sentences, domain)
}

pub fn write_corpus(path: &Path, meta: Option<&Meta>, corpus: &Corpus) -> Result<()> {
    let records: Vec<SentenceRecord> = corpus.sentences.iter().map(SentenceRecord::from).collect();
    write_jsonl(path, meta, &records)
}

fn tsv_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        lines.push((no + 1, line));
    }
    Ok(lines)
}

/// Reads a `w1<TAB>w2<TAB>equivalence` paraphrase table.
pub fn read_paraphrase_table(path: &Path) -> Result<ParaphraseTable> {
    let mut table = ParaphraseTable::default();
    for (no, line) in tsv_lines(path)? {
        let mut fields = line.split('\t');
        let (Some(w1), Some(w2), Some(eq)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Schema(format!(
                "{}:{no}: expected w1<TAB>w2<TAB>equivalence",
                path.display()
            )));
        };
        let eq: f64 = eq.trim().parse().map_err(|_| {
            Error::Schema(format!("{}:{no}: bad equivalence {eq:?}", path.display()))
        })?;
        if !(0.0..=1.0).contains(&eq) {
            return Err(Error::Schema(format!(
                "{}:{no}: equivalence {eq} outside [0, 1]",
                path.display()
            )));
        }
        table.insert(w1, w2, eq);
    }
    Ok(table)
}

pub fn write_paraphrase_table(
    path: &Path,
    meta: Option<&Meta>,
    rows: &[(String, String, f64)],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(meta) = meta {
        writeln!(out, "# config_hash={} seed={}", meta.config_hash, meta.seed)?;
    }
    for (w1, w2, eq) in rows {
        writeln!(out, "{w1}\t{w2}\t{eq}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `word<TAB>tag<TAB>count` tag lexicon into a modal-tag map.
pub fn read_tag_lexicon(path: &Path) -> Result<PosMap> {
    let mut observations = Vec::new();
    for (no, line) in tsv_lines(path)? {
        let mut fields = line.split('\t');
        let (Some(word), Some(tag), Some(count)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Schema(format!(
                "{}:{no}: expected word<TAB>tag<TAB>count",
                path.display()
            )));
        };
        let count: u64 = count.trim().parse().map_err(|_| {
            Error::Schema(format!("{}:{no}: bad count {count:?}", path.display()))
        })?;
        observations.push((word.to_string(), tag.to_string(), count));
    }
    Ok(most_frequent_pos(observations))
}

pub fn write_tag_lexicon(
    path: &Path,
    meta: Option<&Meta>,
    rows: &[(String, String, u64)],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(meta) = meta {
        writeln!(out, "# config_hash={} seed={}", meta.config_hash, meta.seed)?;
    }
    for (word, tag, count) in rows {
        writeln!(out, "{word}\t{tag}\t{count}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a stop-list: one word per line.
pub fn read_stoplist(path: &Path) -> Result<HashSet<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut words = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let word = line.trim();
        if !word.is_empty() && !word.starts_with('#') {
            words.insert(word.to_string());
        }
    }
    Ok(words)
}

/// Reads the `worker_id,batch_id,sentence_key,rating` ratings CSV.
pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut ratings = Vec::new();
    for record in reader.deserialize() {
        let record: RatingRecord = record?;
        if !(1..=5).contains(&record.rating) {
            return Err(Error::Schema(format!(
                "{}: rating {} outside 1..=5 for worker {:?}",
                path.display(),
                record.rating,
                record.worker_id
            )));
        }
        ratings.push(record);
    }
    Ok(ratings)
}

pub fn write_ratings(path: &Path, ratings: &[RatingRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in ratings {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes ROC curve points as `threshold,fpr,tpr` CSV.
pub fn write_roc_curve(
    path: &Path,
    meta: Option<&Meta>,
    points: &[crate::eval::RocPoint],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(meta) = meta {
        writeln!(out, "# config_hash={} seed={}", meta.config_hash, meta.seed)?;
    }
    writeln!(out, "threshold,fpr,tpr")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    out.flush()?;
    Ok(())
}
