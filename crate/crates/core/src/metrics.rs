//! Average precision, normalized DCG and their micro/macro aggregates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// Binary relevance of a ranked list: `gains[i]` is 1 when item `i` shares
/// the query's class. `class_size` counts same-class items, query excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceList {
    pub gains: Vec<u8>,
    pub class_size: usize,
}

impl RelevanceList {
    pub fn new(gains: Vec<u8>) -> Self {
        let class_size = gains.iter().filter(|&&g| g == 1).count();
        Self { gains, class_size }
    }

    /// Relevance of `list` given each id's class label.
    pub fn from_ranking(list: &RankedList, query_label: &str, labels: &BTreeMap<String, String>) -> Self {
        Self::new(
            list.entries
                .iter()
                .map(|(id, _)| u8::from(labels.get(id).map(String::as_str) == Some(query_label)))
                .collect(),
        )
    }
}

/// Mean of precision@i over the relevant positions; `None` for an empty class.
pub fn average_precision(g: &RelevanceList) -> Option<f64> {
    if g.class_size == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &v) in g.gains.iter().enumerate() {
        if v == 1 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / g.class_size as f64)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::Metrics("no scored queries".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Discount of rank `i` (1-based): 1 for the first item, `1/log2 i` after.
fn discount(i: usize) -> f64 {
    if i == 1 {
        1.0
    } else {
        1.0 / (i as f64).log2()
    }
}

/// DCG of the list divided by the DCG of the ideal ranking.
pub fn dcg(g: &RelevanceList) -> Option<f64> {
    if g.class_size == 0 {
        return None;
    }
    let gained: f64 = g
        .gains
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=g.class_size).map(discount).sum();
    Some(gained / ideal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryScore {
    pub query_id: String,
    pub label: String,
    pub ap: f64,
    pub dcg: f64,
}

/// Scores one ranked list, or `None` when the query's class has no other member.
pub fn score_query(list: &RankedList, labels: &BTreeMap<String, String>) -> Result<Option<QueryScore>> {
    let label = labels
        .get(&list.query_id)
        .ok_or_else(|| Error::Metrics(format!("no label for query {}", list.query_id)))?;
    let g = RelevanceList::from_ranking(list, label, labels);
    Ok(average_precision(&g).zip(dcg(&g)).map(|(ap, dcg)| QueryScore {
        query_id: list.query_id.clone(),
        label: label.clone(),
        ap,
        dcg,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassScore {
    pub queries: usize,
    pub map: f64,
    pub dcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub micro_map: f64,
    pub micro_dcg: f64,
    pub macro_map: f64,
    pub macro_dcg: f64,
    pub per_class: BTreeMap<String, ClassScore>,
    pub queries: usize,
    /// Queries left unscored because their class had no other member.
    pub skipped: Vec<String>,
}

/// Micro averages over queries and macro averages over per-class means.
pub fn aggregate(scores: &[QueryScore], skipped: Vec<String>) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Metrics("no scored queries".into()));
    }
    let n = scores.len() as f64;
    let mut per_class: BTreeMap<String, ClassScore> = BTreeMap::new();
    for s in scores {
        let c = per_class.entry(s.label.clone()).or_default();
        c.queries += 1;
        c.map += s.ap;
        c.dcg += s.dcg;
    }
    for c in per_class.values_mut() {
        c.map /= c.queries as f64;
        c.dcg /= c.queries as f64;
    }
    let classes = per_class.len() as f64;
    Ok(MetricsReport {
        micro_map: scores.iter().map(|s| s.ap).sum::<f64>() / n,
        micro_dcg: scores.iter().map(|s| s.dcg).sum::<f64>() / n,
        macro_map: per_class.values().map(|c| c.map).sum::<f64>() / classes,
        macro_dcg: per_class.values().map(|c| c.dcg).sum::<f64>() / classes,
        per_class,
        queries: scores.len(),
        skipped,
    })
}

/// Scores every ranked list and aggregates; singleton-class queries are skipped.
pub fn evaluate(lists: &[RankedList], labels: &BTreeMap<String, String>) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(lists.len());
    let mut skipped = Vec::new();
    for l in lists {
        match score_query(l, labels)? {
            Some(s) => scores.push(s),
            None => skipped.push(l.query_id.clone()),
        }
    }
    aggregate(&scores, skipped)
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub views: usize,
    pub report: MetricsReport,
}

const HEADER: [&str; 6] = ["Model", "Views", "micro DCG", "micro MAP", "macro DCG", "macro MAP"];

fn cells(r: &TableRow) -> [String; 6] {
    let m = &r.report;
    [
        r.model.clone(),
        r.views.to_string(),
        format!("{:.3}", m.micro_dcg),
        format!("{:.3}", m.micro_map),
        format!("{:.3}", m.macro_dcg),
        format!("{:.3}", m.macro_map),
    ]
}

/// Column-aligned text table.
pub fn format_table(rows: &[TableRow]) -> String {
    let body: Vec<[String; 6]> = rows.iter().map(cells).collect();
    let widths: Vec<usize> = (0..6)
        .map(|c| body.iter().map(|r| r[c].len()).chain([HEADER[c].len()]).max().unwrap())
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| match c {
                0 => format!("{v:<w$}", w = widths[c]),
                _ => format!("{v:>w$}", w = widths[c]),
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &HEADER);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in &body {
        line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Full-precision CSV with the same columns as [`format_table`].
pub fn write_table_csv<W: Write>(rows: &[TableRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "views", "micro_dcg", "micro_map", "macro_dcg", "macro_map"])?;
    for r in rows {
        let m = &r.report;
        out.write_record([
            r.model.clone(),
            r.views.to_string(),
            m.micro_dcg.to_string(),
            m.micro_map.to_string(),
            m.macro_dcg.to_string(),
            m.macro_map.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Metrics(e.to_string()))
}
