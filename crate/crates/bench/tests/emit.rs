use vqa_tradeoff::emit::{self, sidecar_path, Format, ReportRow, CSV_HEADER};
use vqa_tradeoff::fixture::AccuracyFixture;
use vqa_tradeoff::sweep::{run_sweep, SweepConfig};
use vqa_tradeoff::tradeoff::{join_tradeoff, Axis};

fn sweep_rows() -> Vec<ReportRow> {
    run_sweep(&SweepConfig::full_grid())
        .unwrap()
        .into_iter()
        .map(|r| ReportRow::new(r, None))
        .collect()
}

fn validator() -> jsonschema::Validator {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(json: &str) {
    let v = validator();
    let instance: serde_json::Value = serde_json::from_str(json).unwrap();
    let errors: Vec<String> = v.iter_errors(&instance).map(|e| e.to_string()).take(5).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn csv_layout() {
    let csv = emit::to_csv(&sweep_rows()).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert!(!csv.contains('\r'));
    assert!(csv.ends_with('\n'));
    let keys: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(keys.len(), 136);
}

#[test]
fn reordered_input_gives_identical_output() {
    let rows = sweep_rows();
    let mut rev = rows.clone();
    rev.reverse();
    assert_eq!(emit::to_csv(&rows).unwrap(), emit::to_csv(&rev).unwrap());
    assert_eq!(emit::to_json(&rows).unwrap(), emit::to_json(&rev).unwrap());
}

#[test]
fn joined_csv_round_trips_through_the_fixture_parser() {
    let t1 = AccuracyFixture::bundled("table1").unwrap();
    let records = run_sweep(&SweepConfig::full_grid()).unwrap();
    let t = join_tradeoff(&records, &t1, Axis::Params).unwrap();
    assert_eq!(t.rows.len(), 80);
    let csv = emit::to_csv(&t.rows).unwrap();
    let back = AccuracyFixture::parse("report.csv", &csv).unwrap();
    assert_eq!(back.rows.len(), t1.rows.len());
    for row in &back.rows {
        let orig = t1.get("VQAv2", &row.key).unwrap();
        assert_eq!(row.accuracy, orig.accuracy, "{}", row.key);
    }
}

#[test]
fn unjoined_csv_parses_to_an_empty_fixture() {
    let back = AccuracyFixture::parse("sweep.csv", &emit::to_csv(&sweep_rows()).unwrap()).unwrap();
    assert!(back.rows.is_empty());
}

#[test]
fn json_validates_against_the_schema() {
    assert_valid(&emit::to_json(&sweep_rows()).unwrap());
    let t1 = AccuracyFixture::bundled("table1").unwrap();
    let records = run_sweep(&SweepConfig::full_grid()).unwrap();
    let t = join_tradeoff(&records, &t1, Axis::Flops).unwrap();
    assert_valid(&emit::tradeoff_to_json(&t).unwrap());
    assert_valid(&emit::tradeoff_to_json(&t.frontier()).unwrap());
}

#[test]
fn schema_rejects_a_broken_row() {
    let json = emit::to_json(&sweep_rows()[..1]).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
    value[0]["accuracy"] = serde_json::json!(140.0);
    assert!(!validator().is_valid(&value));
    value[0].as_object_mut().unwrap().remove("accuracy");
    assert!(!validator().is_valid(&value));
}

#[test]
fn json_mirrors_the_report() {
    let rows = sweep_rows();
    let value: serde_json::Value = serde_json::from_str(&emit::to_json(&rows).unwrap()).unwrap();
    let first = &value[0];
    let r = rows.iter().find(|r| r.config_key() == first["config_key"]).unwrap();
    assert_eq!(first["total_params"], r.report.total_params);
    assert_eq!(first["environment"]["prng"], "chacha8");
    assert!(first["accuracy"].is_null());
}

#[test]
fn files_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("front.csv");
    let t1 = AccuracyFixture::bundled("table1").unwrap();
    let records = run_sweep(&SweepConfig::full_grid()).unwrap();
    let t = join_tradeoff(&records, &t1, Axis::Params).unwrap();
    emit::emit_tradeoff(&t, Format::Csv, Some(&out)).unwrap();
    let side = std::fs::read_to_string(sidecar_path(&out)).unwrap();
    assert_eq!(side.lines().count(), 1 + t.unmatched_reports.len() + t.unmatched_fixture.len());
    assert!(side.contains("report,BU:BU/mfh/co"));
    assert_eq!(Format::for_path(Some(&dir.path().join("x.JSON"))), Format::Json);

    let bad = dir.path().join("missing").join("x.csv");
    let err = emit::emit_rows(&sweep_rows(), Format::Csv, Some(&bad)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("missing"), "{err}");
}
