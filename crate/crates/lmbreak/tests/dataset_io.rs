//! Annotation-format round trips and ingestion diagnostics.

use lmbreak::faces::{load_annotated_dataset, DatasetHandle, DEFAULT_IMAGE_SIZE};

#[test]
fn export_import_export_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let ds = DatasetHandle::generate(3, 900, DEFAULT_IMAGE_SIZE);
    ds.export(dir.path()).unwrap();
    let first = std::fs::read(dir.path().join("annotations.json")).unwrap();

    let (imported, diags) = load_annotated_dataset(dir.path()).unwrap();
    assert!(diags.is_empty());
    assert_eq!(imported.len(), 3);

    // imported coordinates equal the 2-decimal serialization of the
    // originals exactly
    for (orig, imp) in ds.records.iter().zip(&imported.records) {
        for (o, i) in orig.landmarks.coords().iter().zip(imp.landmarks.coords()) {
            let rx: f64 = format!("{:.2}", o[0]).parse().unwrap();
            let ry: f64 = format!("{:.2}", o[1]).parse().unwrap();
            assert_eq!([rx, ry], *i);
        }
    }

    let dir2 = tempfile::tempdir().unwrap();
    imported.export(dir2.path()).unwrap();
    let second = std::fs::read(dir2.path().join("annotations.json")).unwrap();
    assert_eq!(first, second, "annotation export is not byte-stable");

    // and the image pixels survive the PNG round trip untouched
    let orig_img = ds.load_image(0).unwrap();
    let imp_img = imported.load_image(0).unwrap();
    assert_eq!(orig_img, imp_img);
}

#[test]
fn three_valid_records_import_as_three() {
    let dir = tempfile::tempdir().unwrap();
    DatasetHandle::generate(3, 901, DEFAULT_IMAGE_SIZE)
        .export(dir.path())
        .unwrap();
    let (handle, diags) = load_annotated_dataset(dir.path()).unwrap();
    assert_eq!(handle.len(), 3);
    assert!(diags.is_empty());
}

#[test]
fn missing_image_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let ds = DatasetHandle::generate(2, 902, DEFAULT_IMAGE_SIZE);
    ds.export(dir.path()).unwrap();
    let victim = dir.path().join("images").join(format!("{}.png", ds.records[1].id));
    std::fs::remove_file(&victim).unwrap();
    let (handle, diags) = load_annotated_dataset(dir.path()).unwrap();
    assert_eq!(handle.len(), 1);
    assert_eq!(diags.len(), 1);
    assert!(
        diags[0].contains(&ds.records[1].id),
        "diagnostic should name the file: {}",
        diags[0]
    );
}

#[test]
fn all_records_invalid_is_a_hard_failure_naming_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = DatasetHandle::generate(1, 903, DEFAULT_IMAGE_SIZE);
    ds.export(dir.path()).unwrap();
    std::fs::remove_file(
        dir.path().join("images").join(format!("{}.png", ds.records[0].id)),
    )
    .unwrap();
    let err = load_annotated_dataset(dir.path()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains(&ds.records[0].id), "{msg}");
}

#[test]
fn malformed_records_are_skipped_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let ds = DatasetHandle::generate(2, 904, DEFAULT_IMAGE_SIZE);
    ds.export(dir.path()).unwrap();
    // truncate one record's landmark list
    let ann_path = dir.path().join("annotations.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&ann_path).unwrap()).unwrap();
    let lms = doc["records"][0]["landmarks"].as_array().unwrap().clone();
    doc["records"][0]["landmarks"] = serde_json::json!(lms[..5].to_vec());
    std::fs::write(&ann_path, doc.to_string()).unwrap();
    let (handle, diags) = load_annotated_dataset(dir.path()).unwrap();
    assert_eq!(handle.len(), 1);
    assert_eq!(diags.len(), 1);
    assert!(diags[0].contains("5 landmarks"), "{}", diags[0]);
}

#[test]
fn non_13_point_schema_with_normalization_pair_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir_all(&images).unwrap();
    let (img, _) = lmbreak::faces::render_face(
        &lmbreak::faces::sample_face_params(905),
        DEFAULT_IMAGE_SIZE,
    )
    .unwrap();
    img.save_png(&images.join("a.png")).unwrap();
    let ann = serde_json::json!({
        "schema": ["left eye outer corner", "right eye outer corner", "nose tip"],
        "records": [
            {"image": "images/a.png", "landmarks": [[10.0, 20.0], [60.0, 20.0], [35.0, 50.0]]}
        ]
    });
    std::fs::write(dir.path().join("annotations.json"), ann.to_string()).unwrap();
    let (handle, diags) = load_annotated_dataset(dir.path()).unwrap();
    assert!(diags.is_empty());
    assert_eq!(handle.schema.len(), 3);
    assert_eq!(handle.len(), 1);
}

#[test]
fn schema_without_normalization_pair_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    let ann = serde_json::json!({
        "schema": ["nose tip", "chin"],
        "records": []
    });
    std::fs::write(dir.path().join("annotations.json"), ann.to_string()).unwrap();
    let err = load_annotated_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("left eye outer corner"));
}
