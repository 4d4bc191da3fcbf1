//! Published accuracy tables as CSV fixtures.
//!
//! The format is `dataset,feature,feature_kind,fusion,attention,accuracy`
//! with `#` comment lines carrying provenance. Only `feature`,
//! `feature_kind`, `fusion`, `attention` and `accuracy` are required, and
//! unknown columns are ignored, so report CSVs written by [`crate::emit`]
//! parse as fixtures too (rows with an empty accuracy are skipped).

use std::collections::HashMap;
use std::path::Path;

use vqa_fusion::assembly::{AttentionMode, FeatureKind, FeatureProfile};
use vqa_fusion::fusion::FusionKind;

use crate::error::{BenchError, Result};
use crate::key::ConfigKey;

/// Comment line marking accuracies that came from toy training on synthetic
/// data. Such files parse but are never joined with complexity reports.
pub const TOY_MARKER: &str = "# source: toy-training";

/// `(name, file, contents)` of the fixtures shipped with the crate.
pub const BUNDLED: [(&str, &str, &str); 3] = [
    ("table1", "table1_vqav2_val.csv", include_str!("../fixtures/table1_vqav2_val.csv")),
    ("table2", "table2_vqacp2_test.csv", include_str!("../fixtures/table2_vqacp2_test.csv")),
    ("table4", "table4_tdiuc_test.csv", include_str!("../fixtures/table4_tdiuc_test.csv")),
];

const ALIASES: [(&str, &str); 5] = [
    ("vqav2", "table1"),
    ("vqa-cpv2", "table2"),
    ("vqacp2", "table2"),
    ("vqacpv2", "table2"),
    ("tdiuc", "table4"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureRow {
    pub dataset: String,
    pub key: ConfigKey,
    pub accuracy: f64,
    /// The accuracy cell exactly as written.
    pub accuracy_text: String,
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyFixture {
    /// File name or bundled table name, used in error messages.
    pub source: String,
    /// `(line, text)` of every comment line.
    pub comments: Vec<(u64, String)>,
    pub rows: Vec<FixtureRow>,
    pub toy: bool,
}

fn parse_err(source: &str, line: u64, message: impl Into<String>) -> BenchError {
    BenchError::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

impl AccuracyFixture {
    pub fn parse(source: &str, text: &str) -> Result<AccuracyFixture> {
        let comments: Vec<(u64, String)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| l.trim_start().starts_with('#'))
            .map(|(i, l)| (i as u64 + 1, l.trim().to_string()))
            .collect();
        let toy = comments.iter().any(|(_, c)| c == TOY_MARKER);

        // Comment and blank lines are dropped up front; `physical` maps each
        // remaining line back to its number in the file.
        let mut body = String::with_capacity(text.len());
        let mut physical = Vec::new();
        for (i, l) in text.lines().enumerate() {
            let t = l.trim_start();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            body.push_str(l);
            body.push('\n');
            physical.push(i as u64 + 1);
        }
        let line_of = |pos: Option<&csv::Position>| {
            let n = pos.map_or(1, |p| p.line()).max(1);
            physical.get(n as usize - 1).copied().unwrap_or(n)
        };

        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| parse_err(source, line_of(e.position()), e.to_string()))?
            .clone();
        let header_line = line_of(None);
        let column = |name: &str| headers.iter().position(|h| h == name);
        let mut cols = [0usize; 5];
        for (slot, name) in cols
            .iter_mut()
            .zip(["feature", "feature_kind", "fusion", "attention", "accuracy"])
        {
            *slot = column(name).ok_or_else(|| {
                parse_err(source, header_line, format!("missing column '{name}' in header {:?}", headers.iter().collect::<Vec<_>>()))
            })?;
        }
        let [c_feature, c_kind, c_fusion, c_att, c_acc] = cols;
        let c_dataset = column("dataset");

        let mut rows = Vec::new();
        let mut seen: HashMap<(String, ConfigKey), u64> = HashMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| parse_err(source, line_of(e.position()), e.to_string()))?;
            let line = line_of(record.position());
            let cell = |i: usize| record.get(i).unwrap_or("");
            let bad = |what: &str, e: vqa_fusion::Error| parse_err(source, line, format!("{what}: {e}"));

            let acc_text = cell(c_acc);
            if acc_text.is_empty() {
                continue;
            }
            let accuracy: f64 = acc_text
                .parse()
                .map_err(|_| parse_err(source, line, format!("accuracy '{acc_text}' is not a number")))?;
            if !(0.0..=100.0).contains(&accuracy) {
                return Err(parse_err(source, line, format!("accuracy {accuracy} outside [0, 100]")));
            }
            let feature_kind: FeatureKind = cell(c_kind).parse().map_err(|e| bad("feature_kind", e))?;
            let profile = FeatureProfile::lookup(cell(c_feature), feature_kind).map_err(|e| bad("feature", e))?;
            let key = ConfigKey {
                feature: profile.name,
                feature_kind,
                fusion: cell(c_fusion).parse::<FusionKind>().map_err(|e| bad("fusion", e))?,
                attention: cell(c_att).parse::<AttentionMode>().map_err(|e| bad("attention", e))?,
            };
            let dataset = c_dataset.map(|i| cell(i).to_string()).unwrap_or_default();
            if let Some(first) = seen.insert((dataset.clone(), key.clone()), line) {
                return Err(parse_err(
                    source,
                    line,
                    format!("duplicate row for {key} in dataset '{dataset}' (first on line {first})"),
                ));
            }
            rows.push(FixtureRow {
                dataset,
                key,
                accuracy,
                accuracy_text: acc_text.to_string(),
                line,
            });
        }
        Ok(AccuracyFixture {
            source: source.to_string(),
            comments,
            rows,
            toy,
        })
    }

    pub fn load(path: &Path) -> Result<AccuracyFixture> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        AccuracyFixture::parse(&path.display().to_string(), &text)
    }

    /// A shipped table by name (`table1`, `table2`, `table4`) or dataset
    /// alias (`vqav2`, `vqa-cpv2`, `tdiuc`).
    pub fn bundled(name: &str) -> Result<AccuracyFixture> {
        let lower = name.to_ascii_lowercase();
        let canon = ALIASES
            .iter()
            .find(|(a, _)| *a == lower)
            .map_or(lower.as_str(), |(_, t)| t);
        let (table, file, text) = BUNDLED.iter().find(|(t, _, _)| *t == canon).ok_or_else(|| {
            let names: Vec<&str> = BUNDLED.iter().map(|b| b.0).chain(ALIASES.iter().map(|a| a.0)).collect();
            BenchError::Config(format!("unknown bundled fixture '{name}' (valid: {})", names.join(", ")))
        })?;
        AccuracyFixture::parse(&format!("{table} ({file})"), text)
    }

    /// A file path if the argument looks like one, otherwise a bundled name.
    pub fn resolve(name_or_path: &str) -> Result<AccuracyFixture> {
        let path = Path::new(name_or_path);
        if name_or_path.contains(std::path::MAIN_SEPARATOR) || path.extension().is_some() || path.exists() {
            AccuracyFixture::load(path)
        } else {
            AccuracyFixture::bundled(name_or_path)
        }
    }

    /// Distinct datasets in file order.
    pub fn datasets(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.dataset.as_str()) {
                out.push(&r.dataset);
            }
        }
        out
    }

    /// Only the rows of `dataset`; an unknown dataset is a configuration
    /// error listing the valid ones.
    pub fn for_dataset(&self, dataset: &str) -> Result<AccuracyFixture> {
        let datasets = self.datasets();
        if !datasets.contains(&dataset) {
            return Err(BenchError::Config(format!(
                "{} has no dataset '{dataset}' (valid: {})",
                self.source,
                datasets.join(", ")
            )));
        }
        Ok(AccuracyFixture {
            rows: self.rows.iter().filter(|r| r.dataset == dataset).cloned().collect(),
            ..self.clone()
        })
    }

    pub fn get(&self, dataset: &str, key: &ConfigKey) -> Option<&FixtureRow> {
        self.rows.iter().find(|r| r.dataset == dataset && &r.key == key)
    }
}
