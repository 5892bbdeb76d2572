mod common;

use snb_cli::{load_cohort, read_cohort, write_cohort};

fn read(text: &str) -> anyhow::Result<snb_core::Cohort> {
    read_cohort(text.as_bytes(), "group")
}

fn message(e: anyhow::Error) -> String {
    format!("{e:#}")
}

#[test]
fn synthetic_cohort_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let original = common::small_cohort(3);
    let path = dir.path().join("c.csv");
    write_cohort(&original, &path).unwrap();
    let loaded = load_cohort(&path, "group").unwrap();
    assert_eq!(loaded, original);
}

#[test]
fn header_only_is_empty_cohort() {
    let err = message(read("id,group,outcome,x\n").unwrap_err());
    assert!(err.contains("no rows"), "{err}");
}

#[test]
fn non_binary_outcome_names_the_line() {
    let err = message(read("id,group,outcome,x\n1,a,0,0.5\n2,a,2,0.1\n").unwrap_err());
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("outcome"), "{err}");
}

#[test]
fn missing_value_names_line_and_column() {
    let err = message(read("id,group,outcome,x\n1,a,0,0.5\n2,a,1,\n").unwrap_err());
    assert!(err.contains("line 3") && err.contains("`x`"), "{err}");
}

#[test]
fn empty_group_rejected() {
    let err = message(read("id,group,outcome,x\n1,,0,0.5\n").unwrap_err());
    assert!(err.contains("line 2") && err.contains("empty group"), "{err}");
}

#[test]
fn duplicate_id_rejected() {
    let err = message(read("id,group,outcome,x\n1,a,0,0.5\n1,b,1,0.1\n").unwrap_err());
    assert!(err.contains("duplicate id"), "{err}");
}

#[test]
fn missing_required_column_rejected() {
    assert!(message(read("id,group,x\n1,a,0.5\n").unwrap_err()).contains("outcome"));
    assert!(message(read("id,outcome,x\n1,0,0.5\n").unwrap_err()).contains("group"));
}

#[test]
fn categorical_columns_are_one_hot_with_modal_reference() {
    let c = read("id,group,outcome,smoke,age\n1,a,0,never,50\n2,a,1,current,61\n3,b,0,never,40\n4,b,1,former,70\n")
        .unwrap();
    assert_eq!(c.feature_names(), ["smoke=current", "smoke=former", "age"]);
    assert_eq!(c.row(0), [0.0, 0.0, 50.0]);
    assert_eq!(c.row(1), [1.0, 0.0, 61.0]);
    assert_eq!(c.row(3), [0.0, 1.0, 70.0]);
}

#[test]
fn categorical_tie_uses_first_sorted_level_as_reference() {
    let c = read("id,group,outcome,s\n1,a,0,y\n2,a,1,x\n").unwrap();
    assert_eq!(c.feature_names(), ["s=y"]);
}

#[test]
fn custom_group_column() {
    let c = read_cohort("id,ethnicity,outcome,x\n1,a,0,1\n2,b,1,2\n".as_bytes(), "ethnicity").unwrap();
    assert_eq!(c.groups().levels(), ["a", "b"]);
    assert!(read_cohort("id,ethnicity,outcome,x\n1,a,0,1\n".as_bytes(), "group").is_err());
}
