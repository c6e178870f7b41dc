//! Evaluation harness: run any prompt on any split of any task with any
//! registered model, score with the exact-match metric, and compare
//! reports (including cross-model transfer rows).

use crate::data::{metric, Split, TaskDataset, NO_ANSWER};
use crate::error::{Error, Result};
use crate::model::{DecodeConfig, Model};
use crate::reasoning::{extract_answer_text, ExtractionTemplate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    pub prediction: String,
    pub gold: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub model_id: String,
    pub prompt: String,
    pub split: Split,
    pub decode: DecodeConfig,
    pub samples: Vec<SampleOutcome>,
    pub accuracy: f64,
    pub timestamp: String,
    /// Hash over (task, split, decode): rows compared side by side must
    /// share identical evaluation settings.
    pub config_hash: String,
}

fn eval_config_hash(task: &str, split: Split, decode: &DecodeConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(task.as_bytes());
    hasher.update(format!("{split}").as_bytes());
    hasher.update(serde_json::to_vec(decode).expect("decode serializes"));
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Evaluate `prompt` on one split: generate reasoning per sample, extract
/// the answer, score exact match. A model failure on a sample marks it
/// incorrect with a diagnostic instead of aborting the report.
pub fn evaluate(
    model: &Model,
    dataset: &TaskDataset,
    split: Split,
    prompt: &str,
    decode: &DecodeConfig,
) -> Result<EvalReport> {
    decode.validate()?;
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "split {split} of task {} is empty",
            dataset.name
        )));
    }
    let template =
        ExtractionTemplate::for_task(dataset.kind, dataset.extraction_template.as_deref())?;
    let prompt_tokens = model.tokenize(prompt);

    let mut outcomes = Vec::with_capacity(samples.len());
    let mut hits = 0usize;
    for sample in samples {
        let (prediction, diagnostic) =
            match extract_answer_text(model, sample, &prompt_tokens, &template, decode) {
                Ok(p) => (p, None),
                Err(e) => (NO_ANSWER.to_string(), Some(e.to_string())),
            };
        let correct = metric(&prediction, &sample.target, dataset.kind) == 1;
        hits += correct as usize;
        outcomes.push(SampleOutcome {
            id: sample.id.clone(),
            prediction,
            gold: sample.target.clone(),
            correct,
            diagnostic,
        });
    }

    Ok(EvalReport {
        task: dataset.name.clone(),
        model_id: model.handle().id.clone(),
        prompt: prompt.to_string(),
        split,
        decode: decode.clone(),
        accuracy: hits as f64 / outcomes.len() as f64,
        samples: outcomes,
        timestamp: chrono::Utc::now().to_rfc3339(),
        config_hash: eval_config_hash(&dataset.name, split, decode),
    })
}

/// Write a report atomically (temp file then rename).
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report.json".into())
    ));
    std::fs::write(&tmp, serde_json::to_string_pretty(report)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Win,
    Draw,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_id: String,
    pub prompt: String,
    pub accuracy: f64,
    /// Accuracy minus the baseline row's accuracy.
    pub delta: f64,
    /// Win/draw/loss against the baseline (the first report given).
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task: String,
    pub split: Split,
    pub baseline_model: String,
    pub rows: Vec<ComparisonRow>,
}

/// Compare reports over the same task and split. The first report is the
/// baseline; rows come back sorted by accuracy (best first).
pub fn compare(reports: &[EvalReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::ReportMismatch("no reports given".into()))?;
    for r in reports {
        if r.task != first.task || r.split != first.split {
            return Err(Error::ReportMismatch(format!(
                "({}, {}) vs ({}, {})",
                r.task, r.split, first.task, first.split
            )));
        }
        if r.config_hash != first.config_hash {
            return Err(Error::ReportMismatch(
                "reports were produced under different decode settings".into(),
            ));
        }
    }

    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| {
            let delta = r.accuracy - first.accuracy;
            let outcome = if delta > 0.0 {
                Outcome::Win
            } else if delta < 0.0 {
                Outcome::Loss
            } else {
                Outcome::Draw
            };
            ComparisonRow {
                model_id: r.model_id.clone(),
                prompt: r.prompt.clone(),
                accuracy: r.accuracy,
                delta,
                outcome,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.model_id.cmp(&b.model_id))
            .then(a.prompt.cmp(&b.prompt))
    });
    Ok(Comparison {
        task: first.task.clone(),
        split: first.split,
        baseline_model: first.model_id.clone(),
        rows,
    })
}

impl Comparison {
    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "task {}  split {}  (baseline: {})\n",
            self.task, self.split, self.baseline_model
        );
        out.push_str(&format!(
            "{:<4} {:<14} {:>9} {:>8}  {:<7} {}\n",
            "#", "model", "accuracy", "delta", "outcome", "prompt"
        ));
        for (i, row) in self.rows.iter().enumerate() {
            let prompt = if row.prompt.chars().count() > 48 {
                let cut: String = row.prompt.chars().take(45).collect();
                format!("{cut}...")
            } else {
                row.prompt.clone()
            };
            out.push_str(&format!(
                "{:<4} {:<14} {:>9.4} {:>+8.4}  {:<7} {}\n",
                i + 1,
                row.model_id,
                row.accuracy,
                row.delta,
                match row.outcome {
                    Outcome::Win => "win",
                    Outcome::Draw => "draw",
                    Outcome::Loss => "loss",
                },
                prompt
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_echo_dataset, EchoTaskConfig};

    fn toy() -> Model {
        Model::load("toy:v1", "cpu").unwrap()
    }

    fn echo() -> TaskDataset {
        synthetic_echo_dataset(&EchoTaskConfig {
            train: 6,
            dev: 6,
            test: 6,
            ..EchoTaskConfig::default()
        })
    }

    #[test]
    fn accuracy_is_mean_of_correct_flags() {
        let m = toy();
        let ds = echo();
        let decode = DecodeConfig::greedy(5).unwrap();
        let report = evaluate(&m, &ds, Split::Dev, "say it again", &decode).unwrap();
        assert_eq!(report.samples.len(), 6);
        let mean =
            report.samples.iter().filter(|s| s.correct).count() as f64 / report.samples.len() as f64;
        assert_eq!(report.accuracy, mean);
        assert!((0.0..=1.0).contains(&report.accuracy));
    }

    #[test]
    fn evaluation_is_pure_and_repeatable() {
        let m = toy();
        let ds = echo();
        let decode = DecodeConfig::greedy(5).unwrap();
        let a = evaluate(&m, &ds, Split::Dev, "think step by step", &decode).unwrap();
        let b = evaluate(&m, &ds, Split::Dev, "think step by step", &decode).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn transfer_report_carries_target_model_id() {
        let a = toy();
        let b = Model::load("toy:v1@5", "cpu").unwrap();
        let ds = echo();
        let decode = DecodeConfig::greedy(5).unwrap();
        // prompt "optimized" on a, evaluated on b
        let report = evaluate(&b, &ds, Split::Dev, "use logical reasoning", &decode).unwrap();
        assert_eq!(report.model_id, "toy:v1@5");
        assert_ne!(report.model_id, a.handle().id);
    }

    #[test]
    fn report_round_trips_and_reruns_identically() {
        let m = toy();
        let ds = echo();
        let decode = DecodeConfig::greedy(4).unwrap();
        let report = evaluate(&m, &ds, Split::Test, "copy the answer", &decode).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&report, &path).unwrap();
        let loaded = read_report(&path).unwrap();
        assert_eq!(loaded, report);

        // transfer closure: the report alone carries model, prompt, decode
        let again = Model::load(&loaded.model_id, "cpu").unwrap();
        let rerun = evaluate(&again, &ds, loaded.split, &loaded.prompt, &loaded.decode).unwrap();
        assert_eq!(rerun.accuracy, loaded.accuracy);
        assert_eq!(rerun.samples, loaded.samples);
    }

    #[test]
    fn single_report_compares_as_draw() {
        let m = toy();
        let ds = echo();
        let decode = DecodeConfig::greedy(4).unwrap();
        let report = evaluate(&m, &ds, Split::Dev, "a prompt", &decode).unwrap();
        let cmp = compare(std::slice::from_ref(&report)).unwrap();
        assert_eq!(cmp.rows.len(), 1);
        assert_eq!(cmp.rows[0].delta, 0.0);
        assert_eq!(cmp.rows[0].outcome, Outcome::Draw);
    }

    #[test]
    fn identical_reports_draw() {
        let m = toy();
        let ds = echo();
        let decode = DecodeConfig::greedy(4).unwrap();
        let r = evaluate(&m, &ds, Split::Dev, "same prompt", &decode).unwrap();
        let cmp = compare(&[r.clone(), r]).unwrap();
        assert!(cmp.rows.iter().all(|row| row.outcome == Outcome::Draw));
    }

    #[test]
    fn three_reports_sort_like_a_hand_sorted_oracle() {
        let m = toy();
        let ds = echo();
        let decode = DecodeConfig::greedy(4).unwrap();
        let prompts = ["use proper logic", "say the answer", "think step by step"];
        let reports: Vec<EvalReport> = prompts
            .iter()
            .map(|p| evaluate(&m, &ds, Split::Dev, p, &decode).unwrap())
            .collect();
        let cmp = compare(&reports).unwrap();
        let mut want: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
        want.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let got: Vec<f64> = cmp.rows.iter().map(|r| r.accuracy).collect();
        assert_eq!(got, want);
        assert!(!cmp.render_text().is_empty());
    }

    #[test]
    fn mismatched_splits_refuse_to_compare() {
        let m = toy();
        let ds = echo();
        let decode = DecodeConfig::greedy(4).unwrap();
        let a = evaluate(&m, &ds, Split::Dev, "p", &decode).unwrap();
        let b = evaluate(&m, &ds, Split::Test, "p", &decode).unwrap();
        assert!(matches!(
            compare(&[a, b]).unwrap_err(),
            Error::ReportMismatch(_)
        ));
    }

    #[test]
    fn mismatched_decode_settings_refuse_to_compare() {
        let m = toy();
        let ds = echo();
        let a = evaluate(&m, &ds, Split::Dev, "p", &DecodeConfig::greedy(4).unwrap()).unwrap();
        let b = evaluate(&m, &ds, Split::Dev, "p", &DecodeConfig::greedy(5).unwrap()).unwrap();
        assert!(compare(&[a, b]).is_err());
    }
}
