//! Consensus VQA accuracy and the per-question-type means used on TDIUC.

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Number of human answers collected per question.
pub const HUMAN_ANSWERS: usize = 10;

/// The twelve TDIUC question types, in table order.
pub const TDIUC_TYPES: [&str; 12] = [
    "Scene",
    "Sport",
    "Color Att.",
    "Other Att.",
    "Activity",
    "Position",
    "Sub-Obj",
    "Absurd",
    "Utility",
    "Presence",
    "Counting",
    "Sentiment",
];

/// One prediction together with the ten human answers for its question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusRecord {
    pub predicted: usize,
    pub human_answers: Vec<usize>,
}

impl ConsensusRecord {
    pub fn new(predicted: usize, human_answers: Vec<usize>) -> ConsensusRecord {
        ConsensusRecord {
            predicted,
            human_answers,
        }
    }

    /// `min(#humans agreeing / 3, 1)`.
    pub fn accuracy(&self) -> Result<f64> {
        if self.human_answers.len() != HUMAN_ANSWERS {
            return Err(Error::Validation(format!(
                "expected {HUMAN_ANSWERS} human answers, got {}",
                self.human_answers.len()
            )));
        }
        let agree = self.human_answers.iter().filter(|&&a| a == self.predicted).count();
        Ok((agree as f64 / 3.0).min(1.0))
    }
}

/// Mean consensus accuracy over `records`.
pub fn vqa_accuracy(records: &[ConsensusRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Validation("no records to score".into()));
    }
    let total = records.iter().map(ConsensusRecord::accuracy).sum::<Result<f64>>()?;
    Ok(total / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MptKind {
    Arithmetic,
    Harmonic,
}

/// Accuracy in `[0, 1]` per question type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TypedAccuracyTable {
    entries: IndexMap<String, f64>,
}

fn check_unit(name: &str, a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Validation(format!("accuracy for '{name}' is {a}, outside [0, 1]")));
    }
    Ok(())
}

impl TypedAccuracyTable {
    pub fn new() -> TypedAccuracyTable {
        TypedAccuracyTable::default()
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<TypedAccuracyTable> {
        let mut t = TypedAccuracyTable::new();
        for (name, a) in pairs {
            t.insert(name, a)?;
        }
        Ok(t)
    }

    /// Unnamed types `t0, t1, ...`.
    pub fn from_values(values: &[f64]) -> Result<TypedAccuracyTable> {
        TypedAccuracyTable::from_pairs(values.iter().enumerate().map(|(i, &a)| (format!("t{i}"), a)))
    }

    pub fn insert(&mut self, name: impl Into<String>, accuracy: f64) -> Result<()> {
        let name = name.into();
        check_unit(&name, accuracy)?;
        if self.entries.insert(name.clone(), accuracy).is_some() {
            return Err(Error::Validation(format!("question type '{name}' listed twice")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

fn mean_of(values: &[f64], kind: MptKind) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation("mean-per-type of an empty table".into()));
    }
    let n = values.len() as f64;
    Ok(match kind {
        MptKind::Arithmetic => values.iter().sum::<f64>() / n,
        // A type nobody gets right drives the harmonic mean to its limit, 0.
        MptKind::Harmonic if values.contains(&0.0) => 0.0,
        MptKind::Harmonic => n / values.iter().map(|a| 1.0 / a).sum::<f64>(),
    })
}

/// Arithmetic or harmonic mean over question types.
pub fn mpt(table: &TypedAccuracyTable, kind: MptKind) -> Result<f64> {
    let values: Vec<f64> = table.entries.values().copied().collect();
    mean_of(&values, kind)
}

/// Mean-per-type after averaging uniformly over the distinct answers within
/// each type. `per_answer` maps each type to its per-answer accuracies.
pub fn normalized_mpt(per_answer: &IndexMap<String, Vec<f64>>, kind: MptKind) -> Result<f64> {
    let mut per_type = Vec::with_capacity(per_answer.len());
    for (name, accs) in per_answer {
        if accs.is_empty() {
            return Err(Error::Validation(format!("question type '{name}' has no answers")));
        }
        for &a in accs {
            check_unit(name, a)?;
        }
        per_type.push(accs.iter().sum::<f64>() / accs.len() as f64);
    }
    mean_of(&per_type, kind)
}
