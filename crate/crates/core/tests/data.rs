use std::fs;

use mogel::data::*;
use mogel::Error;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn loads_comma_file_with_named_target() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "d.csv", "a,y,b\n1,10,2\n# note\n\n3,30,4\n5,50,6\n");
    assert!(sniff_header(&p, Delimiter::Auto).unwrap());
    let d = load_delimited(&p, &TargetColumn::Name("y".into()), Delimiter::Auto, true).unwrap();
    assert_eq!(d.n_samples(), 3);
    assert_eq!(d.feature_names(), ["a", "b"]);
    assert_eq!(d.target_name(), "y");
    assert_eq!(d.targets().to_vec(), vec![10.0, 30.0, 50.0]);
    assert_eq!(d.features()[[2, 1]], 6.0);
}

#[test]
fn whitespace_file_without_header() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "d.txt", "1 2\t3\n4  5 6\n");
    assert!(!sniff_header(&p, Delimiter::Auto).unwrap());
    let d = load_delimited(&p, &TargetColumn::Index(0), Delimiter::Auto, false).unwrap();
    assert_eq!(d.targets().to_vec(), vec![1.0, 4.0]);
    assert_eq!(d.features().row(1).to_vec(), vec![5.0, 6.0]);
}

#[test]
fn malformed_cells_report_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "bad.csv", "1,2\n3,x\n");
    match load_delimited(&p, &TargetColumn::Last, Delimiter::Comma, false) {
        Err(Error::Parse { row, column, cell, .. }) => {
            assert_eq!((row, column, cell.as_str()), (2, 2, "x"));
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    let p = write(&dir, "ragged.csv", "1,2\n3,4,5\n");
    assert!(matches!(
        load_delimited(&p, &TargetColumn::Last, Delimiter::Comma, false),
        Err(Error::Schema(_))
    ));
    let p = write(&dir, "nan.csv", "1,2\n3,nan\n");
    assert!(matches!(
        load_delimited(&p, &TargetColumn::Last, Delimiter::Comma, false),
        Err(Error::Parse { .. })
    ));
    assert!(matches!(
        load_delimited(dir.path().join("missing.csv"), &TargetColumn::Last, Delimiter::Auto, false),
        Err(Error::Io { .. })
    ));
}

#[test]
fn split_is_deterministic_partition_with_train_statistics() {
    let spec = SyntheticSpec::with_defaults(SyntheticKind::Cubic, 200, 3);
    let d = make_synthetic(&spec).unwrap();
    let a = d.clone().split([0.7, 0.2, 0.1], 11).unwrap();
    let b = d.clone().split([0.7, 0.2, 0.1], 11).unwrap();
    let c = d.split([0.7, 0.2, 0.1], 12).unwrap();
    assert_eq!(a.split_assignment(), b.split_assignment());
    assert_ne!(a.indices(Split::Train).unwrap(), c.indices(Split::Train).unwrap());

    let mut all: Vec<usize> = Split::ALL
        .iter()
        .flat_map(|s| a.indices(*s).unwrap())
        .collect();
    assert_eq!(
        Split::ALL.map(|s| a.indices(s).unwrap().len()),
        [140, 40, 20]
    );
    all.sort_unstable();
    assert_eq!(all, (0..200).collect::<Vec<_>>());

    let (_, y_train) = a.raw(Split::Train).unwrap();
    let st = a.standardization().unwrap();
    let mean = y_train.mean().unwrap();
    assert!((st.target_mean - mean).abs() < 1e-12);
    let (_, z) = a.standardized(Split::Train).unwrap();
    assert!(z.mean().unwrap().abs() < 1e-12);
    let var = z.mapv(|v| v * v).mean().unwrap();
    assert!((var - 1.0).abs() < 1e-12);
}

#[test]
fn synthetic_generators_are_seeded() {
    for kind in [
        SyntheticKind::Linear,
        SyntheticKind::Cubic,
        SyntheticKind::HeteroscedasticBimodal,
    ] {
        let spec = SyntheticSpec::with_defaults(kind, 50, 9);
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.targets(), b.targets());
        let (lo, hi) = spec.x_range;
        assert!(a.features().iter().all(|x| (lo..=hi).contains(x)));
    }
    let small = SyntheticSpec::with_defaults(SyntheticKind::Linear, 5, 0);
    assert!(make_synthetic(&small).is_err());
}
