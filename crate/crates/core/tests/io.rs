mod common;

use std::path::Path;

use elastreg::io::{self, report, Format};
use elastreg::metrics;
use elastreg::{AdaptiveParams, Dims, DisplacementField, Error, LabelMap, Volume};

#[test]
fn golden_csv_fixtures() {
    let bad = common::golden_mismatches();
    assert!(bad.is_empty(), "tables differ from tests/fixtures: {bad:?}");
}

#[test]
fn curves_first_row_and_length() {
    let csv = report::curves_csv(&metrics::response_curves(&AdaptiveParams::default(), 1.0, metrics::CURVE_POINTS));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "g,lambda_hat,mu_hat,alpha_hat");
    // mu(0) = 0.5 * (1 + sigmoid(5)) = 0.99665357...
    assert_eq!(lines[1], "0,2,0.996654,2");
    assert_eq!(lines.len(), 201);
    assert!(lines[200].starts_with("1,"));
}

#[test]
fn empty_dice_report_is_header_only() {
    let d = Dims([3; 3]);
    let empty = LabelMap::new(d, vec![0; 27]).unwrap();
    let rep = metrics::evaluate(&empty, &empty, &elastreg::identity_displacement(d).unwrap(), &[]).unwrap();
    assert_eq!(report::dice_csv(&rep), "label,dice\n");
    assert_eq!(report::summary_csv(&rep).lines().nth(1).unwrap(), "undefined,100,0,0");
}

#[test]
fn missing_structure_is_undefined_in_csv_and_null_in_json() {
    let d = Dims([4; 3]);
    let l = LabelMap::new(d, (0..64).map(|i| u32::from(i % 2 == 0)).collect()).unwrap();
    let rep = metrics::evaluate(&l, &l, &elastreg::identity_displacement(d).unwrap(), &[1, 4]).unwrap();
    assert_eq!(report::volume_change_csv(&rep), "structure,pct_change\n1,0\n4,undefined\n");
    let json: serde_json::Value = serde_json::from_str(&report::report_json(&rep)).unwrap();
    assert!(json["volume_changes"]["4"].is_null());
    assert_eq!(json["dice_per_label"]["1"], 1.0);
}

#[test]
fn trace_csv_has_one_row_per_iteration() {
    let f = common::random_volume(Dims([8; 3]), &mut common::rng(4));
    let m = common::random_volume(Dims([8; 3]), &mut common::rng(5));
    let cfg = elastreg::RegistrationConfig {
        pyramid_levels: 1,
        iters_per_level: 7,
        ..Default::default()
    };
    let (_, trace) = elastreg::register(&f, &m, &cfg).unwrap();
    assert_eq!(report::trace_csv(&trace).lines().count(), 1 + trace.records.len());
    assert_eq!(trace.records.len(), 7);
}

#[test]
fn format_detection() {
    assert_eq!(io::detect_format(Path::new("a/b.nii")).unwrap(), Format::Nifti);
    assert_eq!(io::detect_format(Path::new("b.bin")).unwrap(), Format::Tensor);
    assert_eq!(io::detect_format(Path::new("b.json")).unwrap(), Format::Tensor);
    let gz = io::detect_format(Path::new("b.nii.gz")).unwrap_err();
    assert!(matches!(gz, Error::CompressedNifti(_)));
    assert!(matches!(io::detect_format(Path::new("b.mha")), Err(Error::UnsupportedFormat(_))));
    assert!(io::write_displacement(Path::new("u.nii"), &elastreg::identity_displacement(Dims([2; 3])).unwrap()).is_err());
}

#[test]
fn volume_and_label_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dims([6, 5, 4]);
    let v = Volume::from_fn(d, [0.5, 1.5, 2.0], |x, y, z| ((x * y) as f32 - 0.25 * z as f32) as f64).unwrap();
    let l = LabelMap::new(d, (0..120).map(|i| (i * 7 % 11) as u32).collect()).unwrap();
    for ext in ["bin", "nii"] {
        let pv = dir.path().join(format!("v.{ext}"));
        let pl = dir.path().join(format!("l.{ext}"));
        io::write_volume(&pv, &v).unwrap();
        io::write_labels(&pl, &l).unwrap();
        assert_eq!(io::read_volume(&pv).unwrap(), v);
        assert_eq!(io::read_labels(&pl).unwrap(), l);
    }
    let pu = dir.path().join("u.bin");
    let u = DisplacementField::from_fn(d, |x, y, z| [x as f64 * 0.1, y as f64 / 7.0, -(z as f64)]).unwrap();
    io::write_displacement(&pu, &u).unwrap();
    let back = io::read_displacement(&pu).unwrap();
    for (a, b) in u.vectors().iter().zip(back.vectors()) {
        assert_eq!(a.map(|c| c as f32 as f64), *b);
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = io::read_volume(Path::new("/nonexistent/x.nii")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/x.nii"));
}
