use super::*;
use crate::raster::Rgb;

const GREEN: [u8; 3] = [0, 255, 0];

fn allowed(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Green canvas with a red rectangle `[x0, x1) x [y0, y1)`.
fn keyed_rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        if x >= x0 && x < x1 && y >= y0 && y < y1 {
            Rgb([200, 30, 30])
        } else {
            Rgb(GREEN)
        }
    })
}

struct StubBackend {
    boxes: Vec<BoundingBox>,
    mask: Option<Mask>,
}

impl ExtractorBackend for StubBackend {
    fn name(&self) -> &str {
        "stub"
    }
    fn detect(&self, _: &ObjectImage, _: &[String]) -> Result<Vec<BoundingBox>> {
        Ok(self.boxes.clone())
    }
    fn segment(&self, _: &ObjectImage, _: &BoundingBox) -> Result<Mask> {
        self.mask
            .clone()
            .ok_or_else(|| Error::Plugin("stub has no mask".into()))
    }
}

fn bbox(x0: usize, y0: usize, x1: usize, y1: usize, cat: &str, conf: f64) -> BoundingBox {
    BoundingBox {
        x_min: x0,
        y_min: y0,
        x_max: x1,
        y_max: y1,
        category: cat.into(),
        confidence: conf,
    }
}

#[test]
fn oracle_detects_one_tight_box() {
    let img = ObjectImage::in_memory("o", keyed_rect(50, 40, 12, 7, 30, 33)).with_hint("person");
    let be = OracleBackend::new(GREEN, 10);
    let boxes = detect_objects(&img, &allowed(&["person"]), &be, 0.5).unwrap();
    assert_eq!(boxes, vec![bbox(12, 7, 30, 33, "person", 1.0)]);
}

#[test]
fn disallowed_category_is_filtered() {
    let img = ObjectImage::in_memory("o", keyed_rect(50, 40, 12, 7, 30, 33)).with_hint("person");
    let be = OracleBackend::new(GREEN, 10);
    assert!(detect_objects(&img, &allowed(&["animal"]), &be, 0.0)
        .unwrap()
        .is_empty());
}

#[test]
fn boxes_sorted_by_confidence() {
    let be = StubBackend {
        boxes: vec![bbox(0, 0, 2, 2, "person", 0.4), bbox(3, 3, 6, 6, "person", 0.9)],
        mask: None,
    };
    let img = ObjectImage::in_memory("s", RgbImage::new(10, 10));
    let boxes = detect_objects(&img, &allowed(&["person"]), &be, 0.0).unwrap();
    let confs: Vec<f64> = boxes.iter().map(|b| b.confidence).collect();
    assert_eq!(confs, vec![0.9, 0.4]);
    // The default threshold drops the weak one.
    assert_eq!(detect_objects(&img, &allowed(&["person"]), &be, 0.5).unwrap().len(), 1);
}

#[test]
fn detect_preconditions_and_backend_errors() {
    let img = ObjectImage::in_memory("s", RgbImage::new(10, 10));
    let be = OracleBackend::new(GREEN, 10);
    assert!(detect_objects(&img, &BTreeSet::new(), &be, 0.5).is_err());
    let empty = ObjectImage::in_memory("e", RgbImage::new(0, 0));
    assert!(detect_objects(&empty, &allowed(&["person"]), &be, 0.5).is_err());

    let failing = StubBackend {
        boxes: vec![bbox(0, 0, 5, 5, "person", 1.0)],
        mask: None,
    };
    match segment_from_box(&img, &bbox(0, 0, 5, 5, "person", 1.0), &failing) {
        Err(Error::Backend { backend, .. }) => assert_eq!(backend, "stub"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn zero_detections_is_empty_not_error() {
    let img = ObjectImage::in_memory("g", RgbImage::from_pixel(20, 20, Rgb(GREEN))).with_hint("person");
    let be = OracleBackend::new(GREEN, 10);
    assert!(detect_objects(&img, &allowed(&["person"]), &be, 0.5).unwrap().is_empty());
}

#[test]
fn oracle_segment_is_exact_pixel_set() {
    // A square with a notch so the mask is not simply the box.
    let mut raw = keyed_rect(40, 40, 10, 10, 30, 30);
    for y in 10..15 {
        for x in 10..15 {
            raw.put_pixel(x, y, Rgb(GREEN));
        }
    }
    let img = ObjectImage::in_memory("n", raw.clone()).with_hint("person");
    let be = OracleBackend::new(GREEN, 10);
    let boxes = detect_objects(&img, &allowed(&["person"]), &be, 0.5).unwrap();
    let mask = segment_from_box(&img, &boxes[0], &be).unwrap();
    let expected = Mask::from_fn(40, 40, |x, y| {
        (10..30).contains(&x) && (10..30).contains(&y) && !(x < 15 && y < 15)
    });
    assert_eq!(mask, expected);

    // Round trip through extract_cutout recovers the rendered object.
    let cut = extract_cutout(&raw, &mask, Category::Person, "n").unwrap();
    assert_eq!((cut.width(), cut.height()), (20, 20));
    assert_eq!(cut.alpha(), &expected.crop(expected.bounding_box().unwrap()));
}

#[test]
fn uniform_background_box_is_extraction_empty() {
    let img = ObjectImage::in_memory("g", keyed_rect(40, 40, 30, 30, 35, 35));
    let be = OracleBackend::new(GREEN, 10);
    let err = segment_from_box(&img, &bbox(0, 0, 20, 20, "person", 1.0), &be).unwrap_err();
    assert!(matches!(err, Error::ExtractionEmpty(_)), "{err:?}");
    assert!(err.to_string().contains("[0, 0, 20, 20]"));
}

#[test]
fn spilled_mask_is_clipped_to_box() {
    let bx = bbox(10, 10, 20, 20, "person", 1.0);
    // Backend marks the box grown by 3 px on every side.
    let spill = Mask::from_fn(40, 40, |x, y| (7..23).contains(&x) && (7..23).contains(&y));
    let be = StubBackend {
        boxes: vec![bx.clone()],
        mask: Some(spill),
    };
    let img = ObjectImage::in_memory("s", RgbImage::new(40, 40));
    let mask = segment_from_box(&img, &bx, &be).unwrap();
    assert_eq!(mask.count(), 100);
    assert_eq!(mask.bounding_box().unwrap(), bx.rect());
}

#[test]
fn extract_cutout_crop_arithmetic() {
    let img = RgbImage::from_fn(100, 100, |x, y| Rgb([x as u8, y as u8, 7]));
    let mask = Mask::from_fn(100, 100, |x, y| (20..=59).contains(&x) && (10..=49).contains(&y));
    let cut = extract_cutout(&img, &mask, Category::Animal, "a").unwrap();
    assert_eq!((cut.height(), cut.width()), (40, 40));
    assert_eq!(cut.native_size, (40, 40));
    assert_eq!(cut.patch().get_pixel(0, 0).0, [20, 10, 7]);
}

#[test]
fn full_mask_cutout_is_identity() {
    let img = RgbImage::from_fn(16, 12, |x, y| Rgb([x as u8 * 3, y as u8 * 5, 1]));
    let cut = extract_cutout(&img, &Mask::filled(16, 12), Category::Texture, "f").unwrap();
    assert_eq!(cut.patch(), &img);
    assert!(cut.alpha().is_full());
}

#[test]
fn l_shaped_mask_is_reproduced() {
    let img = RgbImage::from_pixel(30, 30, Rgb([5, 5, 5]));
    let l = Mask::from_fn(30, 30, |x, y| {
        ((5..8).contains(&x) && (4..20).contains(&y)) || ((5..15).contains(&x) && (17..20).contains(&y))
    });
    let cut = extract_cutout(&img, &l, Category::Person, "l").unwrap();
    assert_eq!((cut.width(), cut.height()), (10, 16));
    assert_eq!(cut.alpha(), &l.crop(l.bounding_box().unwrap()));
    assert!(!cut.alpha().get(9, 0));
    assert!(cut.alpha().get(9, 15));
}

#[test]
fn extract_cutout_rejects_empty_and_mismatch() {
    let img = RgbImage::new(8, 8);
    assert!(matches!(
        extract_cutout(&img, &Mask::new(8, 8), Category::Person, "e"),
        Err(Error::ExtractionEmpty(_))
    ));
    assert!(extract_cutout(&img, &Mask::filled(8, 7), Category::Person, "e").is_err());
}

#[test]
fn oracle_extract_red_square() {
    let img = keyed_rect(64, 64, 20, 24, 36, 40);
    let cut = oracle_extract(&img, GREEN, 10, Category::Person, "sq").unwrap();
    assert_eq!((cut.width(), cut.height()), (16, 16));
    assert!(cut.alpha().is_full());
    assert!(cut.patch().pixels().all(|p| p.0 == [200, 30, 30]));
}

#[test]
fn oracle_extract_pure_key_is_empty() {
    let img = RgbImage::from_pixel(10, 10, Rgb(GREEN));
    assert!(matches!(
        oracle_extract(&img, GREEN, 10, Category::Person, "g"),
        Err(Error::ExtractionEmpty(_))
    ));
}

#[test]
fn zero_tolerance_picks_up_off_by_one_noise() {
    let mut img = keyed_rect(32, 32, 10, 10, 20, 20);
    // +/-1 noise on a few background pixels far from the square.
    img.put_pixel(1, 1, Rgb([1, 255, 0]));
    img.put_pixel(30, 30, Rgb([0, 254, 0]));
    let strict = oracle_extract(&img, GREEN, 0, Category::Person, "n").unwrap();
    assert_eq!((strict.width(), strict.height()), (30, 30));
    assert_eq!(strict.alpha().count(), 100 + 2);
    let lenient = oracle_extract(&img, GREEN, 1, Category::Person, "n").unwrap();
    assert_eq!((lenient.width(), lenient.height()), (10, 10));
}

#[test]
fn extract_objects_pipeline_with_two_objects() {
    let mut raw = keyed_rect(60, 40, 5, 5, 15, 30);
    for y in 10..20 {
        for x in 30..55 {
            raw.put_pixel(x, y, Rgb([40, 40, 200]));
        }
    }
    let img = ObjectImage::in_memory("two", raw).with_hint("animal");
    let be = OracleBackend::new(GREEN, 10);
    let cuts = extract_objects(&img, Category::Animal, &allowed(&["animal"]), &be, 0.5).unwrap();
    assert_eq!(cuts.len(), 2);
    let mut sizes: Vec<_> = cuts.iter().map(|c| (c.width(), c.height())).collect();
    sizes.sort();
    assert_eq!(sizes, vec![(10, 25), (25, 10)]);
}

#[test]
fn precomputed_masks_split_instances() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("ped01.png");
    crate::raster::save_rgb(&RgbImage::from_pixel(20, 10, Rgb([9, 9, 9])), &img_path).unwrap();
    let gray = image::GrayImage::from_fn(20, 10, |x, _| {
        image::Luma([if x < 5 { 1 } else if (10..15).contains(&x) { 2 } else { 0 }])
    });
    gray.save(dir.path().join("ped01_mask.png")).unwrap();

    let be = PrecomputedMaskBackend::default();
    let img = ObjectImage {
        id: "ped01".into(),
        image: RgbImage::from_pixel(20, 10, Rgb([9, 9, 9])),
        path: Some(img_path),
        category_hint: Some("person".into()),
    };
    let boxes = detect_objects(&img, &allowed(&["person"]), &be, 0.5).unwrap();
    assert_eq!(boxes.len(), 2);
    let m = segment_from_box(&img, &boxes[1], &be).unwrap();
    assert_eq!(m.bounding_box().unwrap(), boxes[1].rect());
    assert_eq!(m.count(), 50);
}

#[test]
fn plugin_backend_speaks_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let mask_path = dir.path().join("m.png");
    Mask::from_fn(30, 20, |x, y| (4..12).contains(&x) && (3..9).contains(&y))
        .save(&mask_path)
        .unwrap();
    let script = format!(
        r#"while read line; do
  case "$line" in
    *'"op":"detect"'*) echo '{{"boxes":[{{"box":[4,3,12,9],"category":"person","confidence":0.8}},{{"box":[0,0,2,2],"category":"cow","confidence":0.99}}]}}' ;;
    *'"op":"segment"'*) echo '{{"mask":"{}"}}' ;;
    *) echo '{{"error":"bad op"}}' ;;
  esac
done"#,
        mask_path.display()
    );
    let be = PluginBackend::new(&script, crate::plugin::DEFAULT_TIMEOUT, dir.path().to_path_buf());
    let img = ObjectImage::in_memory("p", RgbImage::new(30, 20));
    let boxes = detect_objects(&img, &allowed(&["person"]), &be, 0.5).unwrap();
    assert_eq!(boxes, vec![bbox(4, 3, 12, 9, "person", 0.8)]);
    let cuts = extract_objects(&img, Category::Person, &allowed(&["person"]), &be, 0.5).unwrap();
    assert_eq!(cuts.len(), 1);
    assert_eq!((cuts[0].width(), cuts[0].height()), (8, 6));
}

#[test]
fn detect_response_parser_rejects_garbage() {
    use serde_json::json;
    assert!(backends::parse_detect_response(&json!({"boxes": [{"box": [1, 2, 3]}]})).is_err());
    assert!(backends::parse_detect_response(&json!({"boxes": [{"box": [1, 2, 3, 4], "category": "a", "confidence": 2.0}]})).is_err());
    assert!(backends::parse_detect_response(&json!({"nothing": 1})).is_err());
    assert_eq!(backends::parse_detect_response(&json!({"boxes": []})).unwrap(), vec![]);
}
