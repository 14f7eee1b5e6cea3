//! Labeled fingerprint storage, pairwise browser reports, and
//! nearest-similarity classification.
//!
//! The store is a JSON-lines file, one record per line:
//! `{"browser":...,"url":...,"mode":"frame","lengths":[...],"suite_fingerprint":...}`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, LengthVector, MetricsError, VectorMode};

/// A labeled stored vector. `(browser, url, mode)` is unique within a
/// database.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintRecord {
    pub browser: String,
    pub url: String,
    pub mode: VectorMode,
    pub vector: LengthVector,
    pub suite_fingerprint: Option<String>,
}

#[derive(Debug, Error)]
pub enum DbError {
    #[error("insufficient data for a pairwise report: {0}")]
    InsufficientData(String),
    #[error("database holds no vectors for mode {0}")]
    EmptyDatabase(VectorMode),
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct FingerprintDb {
    records: BTreeMap<(String, String, VectorMode), FingerprintRecord>,
}

/// Serialized line format of the store.
#[derive(Serialize, Deserialize)]
struct StoredRecord {
    browser: String,
    url: String,
    mode: VectorMode,
    lengths: LengthVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    suite_fingerprint: Option<String>,
}

/// One per-URL row of a pairwise report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrlComparison {
    pub url: String,
    pub similarity: f64,
    pub dissimilarity: f64,
}

/// Comparison of one browser pair across the URLs both have vectors for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub browsers: (String, String),
    pub per_url: Vec<UrlComparison>,
    pub mean_dissimilarity: f64,
}

impl PairReport {
    pub fn pair_label(&self) -> String {
        format!("{}-{}", self.browsers.0, self.browsers.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrowserMatch {
    pub browser: String,
    pub best_similarity: f64,
    pub matched_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationResult {
    /// Browsers sorted by best similarity descending, ties broken by label.
    pub ranked: Vec<BrowserMatch>,
    pub decision: String,
    /// Similarity gap between rank 1 and rank 2; with a single stored
    /// browser this is the rank-1 similarity itself.
    pub margin: f64,
}

/// A malformed line skipped while loading a store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub message: String,
}

/// Load outcome: the usable records, plus every line that failed to parse.
#[derive(Debug, Default)]
pub struct LoadOutcome {
    pub db: FingerprintDb,
    pub malformed: Vec<MalformedLine>,
    pub replaced: usize,
}

impl FingerprintDb {
    pub fn new() -> Self {
        FingerprintDb::default()
    }

    /// Insert or replace by `(browser, url, mode)`. Returns true when an
    /// existing record was replaced.
    pub fn add(&mut self, record: FingerprintRecord) -> bool {
        let key = (
            record.browser.clone(),
            record.url.clone(),
            record.mode,
        );
        self.records.insert(key, record).is_some()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &FingerprintRecord> {
        self.records.values()
    }

    pub fn get(&self, browser: &str, url: &str, mode: VectorMode) -> Option<&FingerprintRecord> {
        self.records
            .get(&(browser.to_string(), url.to_string(), mode))
    }

    /// Sorted distinct browser labels present for `mode`.
    pub fn browsers(&self, mode: VectorMode) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for record in self.records.values() {
            if record.mode == mode && out.last().map(String::as_str) != Some(&record.browser) {
                out.push(record.browser.clone());
            }
        }
        out.dedup();
        out
    }

    fn urls_for(&self, browser: &str, mode: VectorMode) -> Vec<&FingerprintRecord> {
        self.records
            .values()
            .filter(|r| r.browser == browser && r.mode == mode)
            .collect()
    }

    /// One report per unordered browser pair, rows for the URLs both sides
    /// share (sorted by URL), mean over the present rows.
    pub fn pairwise_report(&self, mode: VectorMode) -> Result<Vec<PairReport>, DbError> {
        let browsers = self.browsers(mode);
        if browsers.len() < 2 {
            return Err(DbError::InsufficientData(format!(
                "found {} browser(s) with {mode}-mode vectors, need at least 2",
                browsers.len()
            )));
        }
        let mut reports = Vec::new();
        for (i, left) in browsers.iter().enumerate() {
            for right in &browsers[i + 1..] {
                let mut per_url = Vec::new();
                for record in self.urls_for(left, mode) {
                    let Some(other) = self.get(right, &record.url, mode) else {
                        continue;
                    };
                    let cmp = metrics::compare(&record.vector, &other.vector)?;
                    per_url.push(UrlComparison {
                        url: record.url.clone(),
                        similarity: cmp.similarity,
                        dissimilarity: cmp.dissimilarity,
                    });
                }
                if per_url.is_empty() {
                    continue;
                }
                let mean_dissimilarity = per_url
                    .iter()
                    .map(|row| row.dissimilarity)
                    .sum::<f64>()
                    / per_url.len() as f64;
                reports.push(PairReport {
                    browsers: (left.clone(), right.clone()),
                    per_url,
                    mean_dissimilarity,
                });
            }
        }
        if reports.is_empty() {
            return Err(DbError::InsufficientData(
                "no browser pair shares a url".to_string(),
            ));
        }
        Ok(reports)
    }

    /// Rank browsers by their best similarity against `unknown` over every
    /// stored vector of the given mode.
    pub fn classify(
        &self,
        unknown: &LengthVector,
        mode: VectorMode,
    ) -> Result<ClassificationResult, DbError> {
        let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
        for record in self.records.values() {
            if record.mode != mode {
                continue;
            }
            let cmp = metrics::compare(unknown, &record.vector)?;
            match best.get_mut(record.browser.as_str()) {
                Some(slot) if cmp.similarity <= slot.0 => {}
                Some(slot) => *slot = (cmp.similarity, &record.url),
                None => {
                    best.insert(&record.browser, (cmp.similarity, &record.url));
                }
            }
        }
        if best.is_empty() {
            return Err(DbError::EmptyDatabase(mode));
        }
        let mut ranked: Vec<BrowserMatch> = best
            .into_iter()
            .map(|(browser, (best_similarity, url))| BrowserMatch {
                browser: browser.to_string(),
                best_similarity,
                matched_url: url.to_string(),
            })
            .collect();
        ranked.sort_by(|x, y| {
            y.best_similarity
                .total_cmp(&x.best_similarity)
                .then_with(|| x.browser.cmp(&y.browser))
        });
        let margin = if ranked.len() > 1 {
            ranked[0].best_similarity - ranked[1].best_similarity
        } else {
            ranked[0].best_similarity
        };
        Ok(ClassificationResult {
            decision: ranked[0].browser.clone(),
            ranked,
            margin,
        })
    }

    /// Render all records as JSON lines, in key order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in self.records.values() {
            let stored = StoredRecord {
                browser: record.browser.clone(),
                url: record.url.clone(),
                mode: record.mode,
                lengths: record.vector.clone(),
                suite_fingerprint: record.suite_fingerprint.clone(),
            };
            out.push_str(&serde_json::to_string(&stored).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parse JSON lines. Malformed lines are skipped and reported with their
    /// 1-based line number; the remaining lines still load.
    pub fn from_jsonl(text: &str) -> LoadOutcome {
        let mut outcome = LoadOutcome::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<StoredRecord>(line) {
                Ok(stored) => {
                    let replaced = outcome.db.add(FingerprintRecord {
                        browser: stored.browser,
                        url: stored.url,
                        mode: stored.mode,
                        vector: stored.lengths,
                        suite_fingerprint: stored.suite_fingerprint,
                    });
                    if replaced {
                        outcome.replaced += 1;
                    }
                }
                Err(err) => outcome.malformed.push(MalformedLine {
                    line: i + 1,
                    message: err.to_string(),
                }),
            }
        }
        outcome
    }

    pub fn save(&self, path: &Path) -> Result<(), DbError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LoadOutcome, DbError> {
        let text = fs::read_to_string(path)?;
        Ok(Self::from_jsonl(&text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(browser: &str, url: &str, values: &[u32]) -> FingerprintRecord {
        FingerprintRecord {
            browser: browser.to_string(),
            url: url.to_string(),
            mode: VectorMode::Frame,
            vector: LengthVector::new(values.to_vec()).unwrap(),
            suite_fingerprint: None,
        }
    }

    #[test]
    fn add_replaces_by_key() {
        let mut db = FingerprintDb::new();
        assert!(!db.add(record("Chrome", "url-1", &[1, 2, 3])));
        assert_eq!(db.len(), 1);
        assert!(db.add(record("Chrome", "url-1", &[4, 5, 6])));
        assert_eq!(db.len(), 1);
        assert_eq!(
            db.get("Chrome", "url-1", VectorMode::Frame)
                .unwrap()
                .vector
                .values(),
            &[4, 5, 6]
        );
    }

    #[test]
    fn three_browsers_six_urls_is_eighteen_records() {
        let mut db = FingerprintDb::new();
        for browser in ["Chrome", "Edge", "Firefox"] {
            for url in 1..=6 {
                db.add(record(browser, &format!("url-{url}"), &[url, url + 1]));
            }
        }
        assert_eq!(db.len(), 18);
    }

    #[test]
    fn pairwise_report_counts_pairs_and_shared_urls() {
        let mut db = FingerprintDb::new();
        for browser in ["Chrome", "Edge", "Firefox"] {
            for url in 1..=3 {
                db.add(record(browser, &format!("url-{url}"), &[10, 20, 30 + url]));
            }
        }
        let reports = db.pairwise_report(VectorMode::Frame).unwrap();
        assert_eq!(reports.len(), 3);
        for report in &reports {
            assert_eq!(report.per_url.len(), 3);
        }
        assert_eq!(reports[0].browsers, ("Chrome".into(), "Edge".into()));
        assert_eq!(reports[1].browsers, ("Chrome".into(), "Firefox".into()));
        assert_eq!(reports[2].browsers, ("Edge".into(), "Firefox".into()));
    }

    #[test]
    fn identical_vectors_make_a_zero_mean_pair() {
        let mut db = FingerprintDb::new();
        db.add(record("Chrome", "url-1", &[5, 6, 7]));
        db.add(record("Edge", "url-1", &[5, 6, 7]));
        let reports = db.pairwise_report(VectorMode::Frame).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].per_url.len(), 1);
        assert_eq!(reports[0].per_url[0].similarity, 1.0);
        assert_eq!(reports[0].per_url[0].dissimilarity, 0.0);
        assert_eq!(reports[0].mean_dissimilarity, 0.0);
    }

    #[test]
    fn one_browser_is_insufficient() {
        let mut db = FingerprintDb::new();
        db.add(record("Chrome", "url-1", &[1, 2]));
        assert!(matches!(
            db.pairwise_report(VectorMode::Frame),
            Err(DbError::InsufficientData(_))
        ));
    }

    #[test]
    fn mean_is_invariant_under_url_permutation() {
        let mut db1 = FingerprintDb::new();
        let mut db2 = FingerprintDb::new();
        let vectors: [(&str, &[u32]); 3] =
            [("url-1", &[1, 9, 4]), ("url-2", &[7, 7, 7]), ("url-3", &[2, 100, 5])];
        for (url, values) in vectors {
            db1.add(record("A", url, values));
            db2.add(record("A", url, values));
        }
        db1.add(record("B", "url-1", &[3, 1, 4]));
        db1.add(record("B", "url-2", &[5, 9, 2]));
        db1.add(record("B", "url-3", &[6, 5, 3]));
        // same data added under permuted url labels pairing the same vectors
        db2.add(record("B", "url-3", &[6, 5, 3]));
        db2.add(record("B", "url-1", &[3, 1, 4]));
        db2.add(record("B", "url-2", &[5, 9, 2]));
        let r1 = db1.pairwise_report(VectorMode::Frame).unwrap();
        let r2 = db2.pairwise_report(VectorMode::Frame).unwrap();
        assert_eq!(r1[0].mean_dissimilarity, r2[0].mean_dissimilarity);
    }

    #[test]
    fn classify_finds_exact_and_scaled_matches() {
        let mut db = FingerprintDb::new();
        db.add(record("Chrome", "url-1", &[100, 200, 50]));
        db.add(record("Firefox", "url-1", &[9, 1, 900]));
        let unknown = LengthVector::new(vec![100, 200, 50]).unwrap();
        let result = db.classify(&unknown, VectorMode::Frame).unwrap();
        assert_eq!(result.decision, "Chrome");
        assert_eq!(result.ranked[0].best_similarity, 1.0);
        let scaled = LengthVector::new(vec![300, 600, 150]).unwrap();
        let result = db.classify(&scaled, VectorMode::Frame).unwrap();
        assert_eq!(result.decision, "Chrome");
        assert!((result.ranked[0].best_similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classify_empty_mode_is_an_error() {
        let db = FingerprintDb::new();
        let unknown = LengthVector::new(vec![1, 2]).unwrap();
        assert!(matches!(
            db.classify(&unknown, VectorMode::Frame),
            Err(DbError::EmptyDatabase(VectorMode::Frame))
        ));
    }

    #[test]
    fn jsonl_round_trip_preserves_the_database() {
        let mut db = FingerprintDb::new();
        for browser in ["Chrome", "Edge", "Firefox"] {
            for url in 1..=6 {
                let mut rec = record(browser, &format!("url-{url}"), &[url * 3, url * 5, 44]);
                rec.suite_fingerprint = Some(format!("1301;{url:04x}"));
                db.add(rec);
            }
        }
        assert_eq!(db.len(), 18);
        let outcome = FingerprintDb::from_jsonl(&db.to_jsonl());
        assert_eq!(outcome.db, db);
        assert!(outcome.malformed.is_empty());
    }

    #[test]
    fn corrupt_lines_are_reported_with_line_numbers() {
        let mut db = FingerprintDb::new();
        for url in 1..=5 {
            db.add(record("Chrome", &format!("url-{url}"), &[1, 2, 3]));
        }
        let mut text = db.to_jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "{\"browser\": 42}";
        text = lines.join("\n");
        let outcome = FingerprintDb::from_jsonl(&text);
        assert_eq!(outcome.db.len(), 4);
        assert_eq!(outcome.malformed.len(), 1);
        assert_eq!(outcome.malformed[0].line, 3);
    }

    #[test]
    fn zero_length_entries_are_rejected_per_line() {
        let text = "{\"browser\":\"X\",\"url\":\"u\",\"mode\":\"frame\",\"lengths\":[3,0,1]}\n";
        let outcome = FingerprintDb::from_jsonl(text);
        assert!(outcome.db.is_empty());
        assert_eq!(outcome.malformed.len(), 1);
    }

    #[test]
    fn empty_file_is_an_empty_db() {
        let outcome = FingerprintDb::from_jsonl("");
        assert!(outcome.db.is_empty());
        assert!(outcome.malformed.is_empty());
    }

    #[test]
    fn save_and_load_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.jsonl");
        let mut db = FingerprintDb::new();
        db.add(record("Chrome", "url-1", &[327, 1514, 70]));
        db.save(&path).unwrap();
        let outcome = FingerprintDb::load(&path).unwrap();
        assert_eq!(outcome.db, db);
    }
}
