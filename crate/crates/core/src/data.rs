//! Task datasets: JSONL loading, deterministic splits, answer
//! normalization, and the exact-match metric. Also ships a synthetic
//! echo task sized for the builtin toy model.

use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerKind {
    Numeric,
    MultipleChoice,
    Label,
}

impl fmt::Display for AnswerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerKind::Numeric => write!(f, "numeric"),
            AnswerKind::MultipleChoice => write!(f, "multiple-choice"),
            AnswerKind::Label => write!(f, "label"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSample {
    pub id: String,
    pub input: String,
    pub target: String,
    pub kind: AnswerKind,
}

impl TaskSample {
    fn validate(&self) -> Result<()> {
        if self.input.is_empty() || self.target.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "sample {}: input and target must be non-empty",
                self.id
            )));
        }
        if self.kind == AnswerKind::MultipleChoice {
            let t = self.target.trim();
            if !(t.len() == 1 && t.chars().all(|c| c.is_ascii_uppercase())) {
                return Err(Error::InvalidConfig(format!(
                    "sample {}: multiple-choice target must be a single letter A-Z, got {:?}",
                    self.id, self.target
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Dev => write!(f, "dev"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Number of records a split takes from the shuffled pool: a count, or
/// "rest" to consume everything left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SplitCountRepr", into = "SplitCountRepr")]
pub enum SplitCount {
    N(usize),
    Rest,
}

impl SplitCount {
    pub fn rest() -> Self {
        SplitCount::Rest
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SplitCountRepr {
    Num(usize),
    Text(String),
}

impl TryFrom<SplitCountRepr> for SplitCount {
    type Error = String;
    fn try_from(repr: SplitCountRepr) -> std::result::Result<Self, String> {
        match repr {
            SplitCountRepr::Num(n) => Ok(SplitCount::N(n)),
            SplitCountRepr::Text(s) if s == "rest" || s == "all" => Ok(SplitCount::Rest),
            SplitCountRepr::Text(s) => Err(format!("split count must be a number or \"rest\", got {s:?}")),
        }
    }
}

impl From<SplitCount> for SplitCountRepr {
    fn from(c: SplitCount) -> Self {
        match c {
            SplitCount::N(n) => SplitCountRepr::Num(n),
            SplitCount::Rest => SplitCountRepr::Text("rest".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: SplitCount,
    pub dev: SplitCount,
    pub test: SplitCount,
    pub seed: u64,
}

impl SplitSpec {
    /// The 50/100/100 split used for BBH-style tasks.
    pub fn bbh(seed: u64) -> Self {
        Self {
            train: SplitCount::N(50),
            dev: SplitCount::N(100),
            test: SplitCount::N(100),
            seed,
        }
    }

    /// Counts parsed from "50/100/100" or "50/100/rest".
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let parts: Vec<&str> = text.split('/').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "split spec must look like 50/100/100, got {text:?}"
            )));
        }
        let count = |s: &str| -> Result<SplitCount> {
            if s == "rest" || s == "all" {
                Ok(SplitCount::rest())
            } else {
                s.parse::<usize>().map(SplitCount::N).map_err(|_| {
                    Error::InvalidConfig(format!("bad split count {s:?} in {text:?}"))
                })
            }
        };
        Ok(Self {
            train: count(parts[0])?,
            dev: count(parts[1])?,
            test: count(parts[2])?,
            seed,
        })
    }

    fn minimum_records(&self) -> usize {
        [self.train, self.dev, self.test]
            .iter()
            .map(|c| match c {
                SplitCount::N(n) => *n,
                SplitCount::Rest => 0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDataset {
    pub name: String,
    pub kind: AnswerKind,
    pub train: Vec<TaskSample>,
    pub dev: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
    /// Per-task override of the extraction template text.
    pub extraction_template: Option<String>,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[TaskSample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in self.train.iter().chain(&self.dev).chain(&self.test) {
            s.validate()?;
            if !seen.insert(&s.id) {
                return Err(Error::InvalidConfig(format!(
                    "sample id {:?} appears in more than one split",
                    s.id
                )));
            }
        }
        Ok(())
    }
}

/// One line of the canonical JSONL format. `id` is optional; line numbers
/// name anonymous records.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    input: String,
    target: String,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<(String, String, String)>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::RunDir(format!("{display}: {e}")))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: display.clone(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let id = rec.id.unwrap_or_else(|| format!("r{}", idx + 1));
        out.push((id, rec.input, rec.target));
    }
    Ok(out)
}

pub fn write_jsonl(samples: &[TaskSample], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for s in samples {
        let rec = RawRecord {
            id: Some(s.id.clone()),
            input: s.input.clone(),
            target: s.target.clone(),
        };
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

/// Load a canonical JSONL file and materialize seeded splits.
pub fn load(path: &Path, name: &str, kind: AnswerKind, spec: &SplitSpec) -> Result<TaskDataset> {
    let records = read_jsonl(path)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let need = spec.minimum_records();
    if records.len() < need {
        return Err(Error::InsufficientRecords {
            path: path.display().to_string(),
            have: records.len(),
            need,
        });
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let mut cursor = 0usize;
    let mut take = |count: SplitCount| -> Vec<TaskSample> {
        let n = match count {
            SplitCount::N(n) => n,
            SplitCount::Rest => records.len() - cursor,
        };
        let slice = &order[cursor..cursor + n];
        cursor += n;
        slice
            .iter()
            .map(|&i| {
                let (id, input, target) = records[i].clone();
                TaskSample {
                    id,
                    input,
                    target,
                    kind,
                }
            })
            .collect()
    };
    let dataset = TaskDataset {
        name: name.to_string(),
        kind,
        train: take(spec.train),
        dev: take(spec.dev),
        test: take(spec.test),
        extraction_template: None,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Load with the test split taken (whole) from a separate file, as in
/// benchmark layouts that publish a fixed test set.
pub fn load_with_test_file(
    train_pool: &Path,
    test_file: &Path,
    name: &str,
    kind: AnswerKind,
    spec: &SplitSpec,
) -> Result<TaskDataset> {
    let pool_spec = SplitSpec {
        test: SplitCount::N(0),
        ..*spec
    };
    let mut dataset = load(train_pool, name, kind, &pool_spec)?;
    let records = read_jsonl(test_file)?;
    dataset.test = records
        .into_iter()
        .map(|(id, input, target)| TaskSample {
            id: format!("test-{id}"),
            input,
            target,
            kind,
        })
        .collect();
    dataset.validate()?;
    Ok(dataset)
}

fn normalize_text(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c.is_ascii_punctuation())
        .trim()
        .to_lowercase()
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().replace(',', "").parse::<f64>().ok()
}

pub const NO_ANSWER: &str = "no-answer";

/// Exact match after normalization. Numeric predictions compare by value
/// ("72.0" matches "72"); choice and label compare case-insensitively.
/// The no-answer sentinel never matches.
pub fn metric(prediction: &str, gold: &str, kind: AnswerKind) -> u8 {
    if prediction == NO_ANSWER || gold == NO_ANSWER {
        return 0;
    }
    let hit = match kind {
        AnswerKind::Numeric => match (parse_number(prediction), parse_number(gold)) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0),
            _ => normalize_text(prediction) == normalize_text(gold),
        },
        AnswerKind::MultipleChoice | AnswerKind::Label => {
            !normalize_text(prediction).is_empty()
                && normalize_text(prediction) == normalize_text(gold)
        }
    };
    hit as u8
}

/// Synthetic echo task for the toy model: each input names a payload
/// letter right after "say", repeated, followed by a competing letter.
/// The gold answer is the payload. Solving it requires the model's copy
/// path to settle on the right letter, which the prompt steers.
#[derive(Debug, Clone, Copy)]
pub struct EchoTaskConfig {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub payload_reps: usize,
    pub distractor_reps: usize,
    pub seed: u64,
}

impl Default for EchoTaskConfig {
    fn default() -> Self {
        Self {
            train: 30,
            dev: 30,
            test: 30,
            payload_reps: 4,
            distractor_reps: 3,
            seed: 0,
        }
    }
}

pub fn synthetic_echo_dataset(cfg: &EchoTaskConfig) -> TaskDataset {
    const LETTERS: [&str; 26] = [
        "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q",
        "r", "s", "t", "u", "v", "w", "x", "y", "z",
    ];
    let mut pairs = Vec::new();
    for p in LETTERS {
        for q in LETTERS {
            if p != q {
                pairs.push((p, q));
            }
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    pairs.shuffle(&mut rng);

    let total = cfg.train + cfg.dev + cfg.test;
    assert!(total <= pairs.len(), "echo task supports up to 650 samples");
    let make = |(p, q): (&str, &str)| TaskSample {
        id: format!("echo-{p}{q}"),
        input: format!(
            "say {} then {} .",
            vec![p; cfg.payload_reps].join(" "),
            vec![q; cfg.distractor_reps].join(" ")
        ),
        target: p.to_string(),
        kind: AnswerKind::Label,
    };
    let samples: Vec<TaskSample> = pairs.into_iter().take(total).map(make).collect();
    TaskDataset {
        name: "echo".into(),
        kind: AnswerKind::Label,
        train: samples[..cfg.train].to_vec(),
        dev: samples[cfg.train..cfg.train + cfg.dev].to_vec(),
        test: samples[cfg.train + cfg.dev..].to_vec(),
        extraction_template: Some("therefore of by then of by then of the answer is {answer}".into()),
    }
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn metric_is_symmetric(a in "[a-zA-Z0-9,.]{0,8}", b in "[a-zA-Z0-9,.]{0,8}") {
            for kind in [AnswerKind::Numeric, AnswerKind::MultipleChoice, AnswerKind::Label] {
                prop_assert_eq!(metric(&a, &b, kind), metric(&b, &a, kind));
            }
        }

        #[test]
        fn metric_is_reflexive_on_clean_labels(a in "[a-z][a-z0-9]{0,6}") {
            prop_assert_eq!(metric(&a, &a, AnswerKind::Label), 1);
        }
    }
}
