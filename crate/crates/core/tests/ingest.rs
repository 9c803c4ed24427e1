mod common;

use common::{write_voc_fixture, EXPECTED};
use occlupose::voc::{build_library, load_library, FilterRules};

#[test]
fn fixture_counts_match_hand_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let voc = dir.path().join("voc");
    write_voc_fixture(&voc);
    let (lib, report) = build_library(&voc, &FilterRules::default(), &dir.path().join("lib")).unwrap();

    assert_eq!(report.split, "trainval");
    assert_eq!(report.images, EXPECTED.images);
    assert_eq!(report.absent_from_mask, EXPECTED.absent);
    let b = report.breakdown;
    assert_eq!(
        [b.total, b.after_class, b.after_difficult, b.after_truncated, b.after_area],
        [
            EXPECTED.total,
            EXPECTED.after_class,
            EXPECTED.after_difficult,
            EXPECTED.after_truncated,
            EXPECTED.after_area
        ]
    );
    assert_eq!(report.retained, EXPECTED.retained);
    assert_eq!(report.retained_train, Some(EXPECTED.retained_train));

    let ids: Vec<&str> = lib.manifest().iter().map(|m| m.id.as_str()).collect();
    assert_eq!(ids, EXPECTED.retained_ids);
    let areas: Vec<u64> = lib.manifest().iter().map(|m| m.area_px).collect();
    assert_eq!(areas, [600, 600, 500]);
}

#[test]
fn library_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let voc = dir.path().join("voc");
    write_voc_fixture(&voc);
    let out = dir.path().join("lib");
    let (built, _) = build_library(&voc, &FilterRules::default(), &out).unwrap();
    let loaded = load_library(&out).unwrap();
    assert_eq!(built, loaded);
    for o in loaded.objects() {
        o.check_invariants().unwrap();
        assert_eq!(o.alpha.pixels().filter(|p| p.0[0] == 255).count() as u64, o.area_px);
    }
}

#[test]
fn void_pixels_never_join_an_object() {
    let dir = tempfile::tempdir().unwrap();
    let voc = dir.path().join("voc");
    write_voc_fixture(&voc);
    let (lib, _) = build_library(&voc, &FilterRules::default(), &dir.path().join("lib")).unwrap();
    let car = lib.objects().iter().find(|o| o.class_name == "car").unwrap();
    assert_eq!((car.width(), car.height()), (25, 24));
}

#[test]
fn relaxed_area_rule_keeps_small_objects() {
    let dir = tempfile::tempdir().unwrap();
    let voc = dir.path().join("voc");
    write_voc_fixture(&voc);
    let rules = FilterRules {
        min_area_px: 0,
        ..FilterRules::default()
    };
    let (_, report) = build_library(&voc, &rules, &dir.path().join("lib")).unwrap();
    assert_eq!(report.retained, 5);
}

#[test]
fn missing_directories_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = build_library(dir.path(), &FilterRules::default(), &dir.path().join("lib")).unwrap_err();
    assert!(err.to_string().contains("Annotations"), "{err}");
}
