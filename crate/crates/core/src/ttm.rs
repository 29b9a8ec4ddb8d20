//! Ingestion of multiple-choice test results and per-topic aggregation.

use std::collections::BTreeMap;

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClassId, StudentId, Timestamp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TtmError {
    #[error("no test attempts for {student} in {class}/{topic}")]
    NoData { student: String, class: String, topic: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestAttempt {
    pub student_id: StudentId,
    pub class_id: ClassId,
    pub topic: String,
    pub test_id: String,
    pub attempt_no: u32,
    pub score: f64,
    pub taken_at: Timestamp,
}

impl TestAttempt {
    pub fn validate(&self) -> Result<(), String> {
        if self.topic.trim().is_empty() {
            return Err("topic is empty".into());
        }
        if self.test_id.trim().is_empty() {
            return Err("test_id is empty".into());
        }
        if self.attempt_no < 1 {
            return Err("attempt_no must be at least 1".into());
        }
        if !(0.0..=100.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 100]", self.score));
        }
        Ok(())
    }

    fn key(&self) -> (StudentId, String, u32) {
        (self.student_id.clone(), self.test_id.clone(), self.attempt_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Zero-based row index within the batch.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    /// Rows whose key was already stored with identical content.
    pub duplicates: usize,
    pub rejected: Vec<Rejection>,
}

/// Parses JSON-lines; blank lines are skipped and unparseable lines become rejections.
pub fn parse_jsonl(text: &str) -> (Vec<(usize, TestAttempt)>, Vec<Rejection>) {
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TestAttempt>(line) {
            Ok(a) => rows.push((row, a)),
            Err(e) => rejected.push(Rejection { row, reason: e.to_string() }),
        }
    }
    (rows, rejected)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TtmStore {
    attempts: BTreeMap<String, TestAttempt>,
}

fn store_key(a: &TestAttempt) -> String {
    let (s, t, n) = a.key();
    format!("{s}\u{1f}{t}\u{1f}{n:010}")
}

impl TtmStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    pub fn attempts(&self) -> impl Iterator<Item = &TestAttempt> {
        self.attempts.values()
    }

    pub fn ingest(&mut self, batch: impl IntoIterator<Item = TestAttempt>) -> IngestReport {
        self.ingest_rows(batch.into_iter().enumerate())
    }

    pub fn ingest_jsonl(&mut self, text: &str) -> IngestReport {
        let (rows, rejected) = parse_jsonl(text);
        let mut report = self.ingest_rows(rows);
        report.rejected.extend(rejected);
        report.rejected.sort_by_key(|r| r.row);
        report
    }

    fn ingest_rows(&mut self, rows: impl IntoIterator<Item = (usize, TestAttempt)>) -> IngestReport {
        let mut report = IngestReport::default();
        for (row, attempt) in rows {
            if let Err(reason) = attempt.validate() {
                report.rejected.push(Rejection { row, reason });
                continue;
            }
            let key = store_key(&attempt);
            match self.attempts.get(&key) {
                None => {
                    self.attempts.insert(key, attempt);
                    report.accepted += 1;
                }
                Some(existing) if *existing == attempt => report.duplicates += 1,
                Some(_) => report.rejected.push(Rejection {
                    row,
                    reason: format!("conflicts with stored attempt {} of {}", attempt.attempt_no, attempt.test_id),
                }),
            }
        }
        report
    }

    fn best_per_test<'a>(&self, rows: impl Iterator<Item = &'a TestAttempt>) -> BTreeMap<&'a str, f64> {
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for a in rows {
            let slot = best.entry(a.test_id.as_str()).or_insert(a.score);
            *slot = slot.max(a.score);
        }
        best
    }

    /// Mean over tests of the best attempt on each test.
    pub fn topic_score(&self, student: &StudentId, class: &ClassId, topic: &str) -> Result<f64, TtmError> {
        let best = self.best_per_test(
            self.attempts().filter(|a| &a.student_id == student && &a.class_id == class && a.topic == topic),
        );
        if best.is_empty() {
            return Err(TtmError::NoData {
                student: student.to_string(),
                class: class.to_string(),
                topic: topic.to_string(),
            });
        }
        Ok(best.values().sum::<f64>() / best.len() as f64)
    }

    /// Topic scores of every student with data for (class, topic).
    pub fn roster_scores(&self, class: &ClassId, topic: &str) -> BTreeMap<StudentId, f64> {
        let students: std::collections::BTreeSet<&StudentId> =
            self.attempts().filter(|a| &a.class_id == class && a.topic == topic).map(|a| &a.student_id).collect();
        students
            .into_iter()
            .map(|s| (s.clone(), self.topic_score(s, class, topic).expect("student has data")))
            .collect()
    }

    /// Mean over the class's students of their mean best-attempt score across all tests.
    pub fn class_mean(&self, class: &ClassId) -> Option<f64> {
        let mut per_student: BTreeMap<&StudentId, Vec<&TestAttempt>> = BTreeMap::new();
        for a in self.attempts().filter(|a| &a.class_id == class) {
            per_student.entry(&a.student_id).or_default().push(a);
        }
        if per_student.is_empty() {
            return None;
        }
        let scores: Vec<f64> = per_student
            .values()
            .map(|rows| {
                let best = self.best_per_test(rows.iter().copied());
                best.values().sum::<f64>() / best.len() as f64
            })
            .collect();
        Some(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    pub fn topics(&self, class: &ClassId) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.attempts().filter(|a| &a.class_id == class).map(|a| a.topic.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Seeded synthetic test results: each student has a latent skill, every test gets one to
/// three attempts that tend to improve.
pub fn mock_attempts(
    students: &[StudentId],
    class: &ClassId,
    topics: &[&str],
    tests_per_topic: u32,
    start: Timestamp,
    seed: u64,
) -> Vec<TestAttempt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for student in students {
        let skill: f64 = rng.random_range(30.0..95.0);
        for (ti, topic) in topics.iter().enumerate() {
            for test in 1..=tests_per_topic {
                let attempts = rng.random_range(1..=3u32);
                let mut score: f64 = (skill + rng.random_range(-15.0..15.0)).clamp(0.0, 100.0);
                for attempt_no in 1..=attempts {
                    out.push(TestAttempt {
                        student_id: student.clone(),
                        class_id: class.clone(),
                        topic: topic.to_string(),
                        test_id: format!("{class}-{topic}-t{test}"),
                        attempt_no,
                        score: score.round(),
                        taken_at: start + Duration::days(7 * ti as i64) + Duration::hours(attempt_no as i64),
                    });
                    score = (score + rng.random_range(0.0..10.0)).min(100.0);
                }
            }
        }
    }
    out
}
