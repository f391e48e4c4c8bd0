mod common;

use nuclei::config::RunConfig;
use nuclei::error::Error;
use nuclei::{io, plot};
use nuclei_core::fcn::{build, UNetSpec};
use nuclei_core::groundtruth::InstanceSet;
use nuclei_core::stainsep::StainModel;
use nuclei_core::synth::{generate_scene, SceneSpec};
use nuclei_core::{Mask, Plane, RgbImage};
use proptest::prelude::*;
use tempfile::tempdir;

fn gradient_image(h: usize, w: usize) -> RgbImage {
    let data = (0..h * w).map(|i| [(i % 251) as u8, (i * 7 % 256) as u8, (i / w * 13 % 256) as u8]).collect();
    RgbImage::new(h, w, data).unwrap()
}

#[test]
fn rgb_png_round_trip() {
    let dir = tempdir().unwrap();
    let img = gradient_image(17, 23);
    let p = dir.path().join("a.png");
    io::write_rgb_png(&p, &img).unwrap();
    assert_eq!(io::read_rgb(&p).unwrap(), img);
}

#[test]
fn tile_dir_reassembles_the_image() {
    let dir = tempdir().unwrap();
    let img = gradient_image(50, 37);
    let tiles = dir.path().join("slide");
    io::write_tile_dir(&tiles, &img, 16).unwrap();
    assert!(io::is_tile_dir(&tiles));
    assert!(tiles.join("3_2.png").is_file());
    assert_eq!(io::read_input(&tiles).unwrap(), img);
}

#[test]
fn missing_tile_is_a_data_error() {
    let dir = tempdir().unwrap();
    let tiles = dir.path().join("slide");
    io::write_tile_dir(&tiles, &gradient_image(20, 20), 8).unwrap();
    std::fs::remove_file(tiles.join("1_1.png")).unwrap();
    assert!(matches!(io::read_tile_dir(&tiles), Err(Error::Data(_))));
}

#[test]
fn mask_png_round_trip() {
    let dir = tempdir().unwrap();
    let m = Mask::new(3, 4, (0..12).map(|i| i % 3 == 0).collect()).unwrap();
    let p = dir.path().join("m.mask.png");
    io::write_mask_png(&p, &m).unwrap();
    assert_eq!(io::read_mask_png(&p).unwrap(), m);
}

#[test]
fn instances_round_trip_through_jsonl() {
    let dir = tempdir().unwrap();
    let scene = generate_scene(&SceneSpec {
        seed: 4,
        ..SceneSpec::default()
    })
    .unwrap();
    let p = dir.path().join("s.jsonl");
    io::write_instances(&p, &scene.instances).unwrap();
    let back = io::read_instances(&p, None).unwrap();
    assert_eq!(back, scene.instances);
}

#[test]
fn empty_annotation_needs_a_canvas() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("e.jsonl");
    io::write_instances(&p, &InstanceSet::new(8, 9, vec![]).unwrap()).unwrap();
    assert!(matches!(io::read_instances(&p, None), Err(Error::Data(_))));
    let set = io::read_instances(&p, Some((8, 9))).unwrap();
    assert!(set.is_empty());
    assert_eq!((set.height, set.width), (8, 9));
}

#[test]
fn malformed_annotation_line_is_a_data_error() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    std::fs::write(&p, "{\"id\": 1, \"height\": 4}\n").unwrap();
    assert!(matches!(io::read_instances(&p, None), Err(Error::Data(_))));
}

#[test]
fn centroid_csv_has_header_and_round_trips() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("c.csv");
    io::write_centroids(&p, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), "id,row,col\n");
    let pts = vec![(1.5, 2.25), (10.0, 0.125)];
    io::write_centroids(&p, &pts).unwrap();
    assert_eq!(io::read_centroids(&p).unwrap(), pts);
}

#[test]
fn weights_round_trip_preserves_predictions() {
    let dir = tempdir().unwrap();
    let spec = UNetSpec {
        depth: 2,
        base_channels: 2,
        input_channels: 1,
    };
    let model = build(spec, 3).unwrap();
    let p = dir.path().join("w.bin");
    io::write_weights(&p, &model).unwrap();
    let back = io::read_weights(&p, None).unwrap();
    let x = Plane::new(8, 8, (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
    assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
    let other = UNetSpec { depth: 1, ..spec };
    assert!(matches!(io::read_weights(&p, Some(&other)), Err(Error::Data(_))));
}

#[test]
fn truncated_weights_are_a_data_error() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("w.bin");
    io::write_weights(&p, &common::threshold_model(1.0, 0.0)).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(io::read_weights(&p, None), Err(Error::Data(_))));
}

#[test]
fn stain_model_file_round_trip() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("stain.txt");
    let m = StainModel::ruifrok();
    io::write_stain_model(&p, &m).unwrap();
    assert_eq!(io::read_stain_model(&p).unwrap(), m);
}

#[test]
fn list_images_skips_outputs_and_sorts() {
    let dir = tempdir().unwrap();
    let img = gradient_image(2, 2);
    for name in ["b.png", "a.png", "a.mask.png", "notes.txt"] {
        if name.ends_with(".png") {
            io::write_rgb_png(&dir.path().join(name), &img).unwrap();
        } else {
            std::fs::write(dir.path().join(name), "x").unwrap();
        }
    }
    let ids: Vec<String> = io::list_images(dir.path()).unwrap().into_iter().map(|(id, _)| id).collect();
    assert_eq!(ids, ["a", "b"]);
}

#[test]
fn config_defaults_unknown_keys_and_echo() {
    let cfg = RunConfig::from_json("{}").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.loss.lambda, 0.8);
    assert_eq!(cfg.pipeline.grid.patch_size, 256);
    assert!(matches!(RunConfig::from_json(r#"{"sede": 1}"#), Err(Error::Usage(_))));
    assert!(matches!(RunConfig::from_json(r#"{"loss": {"lambda": 2.0}}"#), Err(Error::Usage(_))));
    // patch size must suit the model's pooling depth
    assert!(RunConfig::from_json(r#"{"pipeline": {"grid": {"patch_size": 30, "stride": 30}}}"#).is_err());

    let dir = tempdir().unwrap();
    let cfg = RunConfig::from_json(r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
    cfg.echo(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
}

#[test]
fn linear_fit_and_svg() {
    let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 + 3.0 * i as f64)).collect();
    let (a, b, r2) = plot::linear_fit(&pts);
    assert!((a - 2.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    let svg = plot::line_plot_svg("t <1>", "x", "y", &pts);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<circle").count(), 5);
    assert!(svg.contains("t &lt;1&gt;"));
    // an empty series still renders axes
    assert!(plot::line_plot_svg("", "", "", &[]).contains("<path"));
}

proptest! {
    #[test]
    fn density_gray_rgb_agree(vals in proptest::collection::vec(0.0f64..1.0, 1..64)) {
        let n = vals.len();
        let plane = Plane::new(1, n, vals).unwrap();
        let gray = io::density_to_gray(&plane);
        let rgb = io::density_to_rgb(&plane);
        for (g, p) in gray.iter().zip(&rgb.data) {
            prop_assert_eq!(*p, [*g; 3]);
        }
        for (d, g) in plane.data.iter().zip(&gray) {
            prop_assert!((255.0 * (1.0 - d) - *g as f64).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn centroid_csv_round_trips_to_three_decimals(pts in proptest::collection::vec((0.0f64..5000.0, 0.0f64..5000.0), 0..20)) {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.csv");
        io::write_centroids(&p, &pts).unwrap();
        let back = io::read_centroids(&p).unwrap();
        prop_assert_eq!(back.len(), pts.len());
        for (a, b) in pts.iter().zip(&back) {
            prop_assert!((a.0 - b.0).abs() <= 5e-4 && (a.1 - b.1).abs() <= 5e-4);
        }
    }
}
