//! Shared fixtures for the integration suites: a synthetic corpus of
//! smooth gradient images, oracle specifications, and config-file
//! helpers.
#![allow(dead_code)] // each test binary uses a different subset

use std::fs;
use std::path::{Path, PathBuf};

use morphic_core::relations::RasterImage;
use morphic_core::rng::SeededStream;
use rand::Rng;

use morphic_cli::campaign::{self, RunSummary};
use morphic_cli::config::{load_config, resolve, Overrides, ResolvedConfig};
use morphic_cli::formats::ppm::write_ppm;

/// A smooth image: four random corner colours, bilinearly interpolated.
/// Smoothness matters for the rotation round-trip — resampling noise
/// has no inverse, resampling gradients nearly does.
pub fn smooth_image(rng: &mut SeededStream, width: u32, height: u32) -> RasterImage {
    let corners: [[u8; 3]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.rng().random()));
    let mut image = RasterImage::filled(width, height, [0; 3]).unwrap();
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / (width - 1).max(1) as f64;
            let fy = y as f64 / (height - 1).max(1) as f64;
            let px = std::array::from_fn(|c| {
                let top = (1.0 - fx) * corners[0][c] as f64 + fx * corners[1][c] as f64;
                let bottom = (1.0 - fx) * corners[2][c] as f64 + fx * corners[3][c] as f64;
                ((1.0 - fy) * top + fy * bottom).round() as u8
            });
            image.set(x, y, px);
        }
    }
    image
}

/// Writes `count` smooth 32×32 images plus a classification manifest
/// (classes cycle through `classes`). Returns the manifest path.
pub fn write_corpus(dir: &Path, count: usize, classes: u32) -> PathBuf {
    let images = dir.join("images");
    fs::create_dir_all(&images).unwrap();
    let mut stream = SeededStream::new(90210, 0);
    let mut manifest = String::from("id,image,class\n");
    for i in 0..count {
        let image = smooth_image(&mut stream, 32, 32);
        let name = format!("img-{i:03}.ppm");
        write_ppm(&images.join(&name), &image).unwrap();
        manifest.push_str(&format!("img-{i:03},images/{name},{}\n", i as u32 % classes));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).unwrap();
    path
}

/// Detection variant: same images, two axis-aligned ground-truth boxes
/// per source, annotations in sidecar JSON files.
pub fn write_detection_corpus(dir: &Path, count: usize) -> PathBuf {
    let images = dir.join("images");
    fs::create_dir_all(&images).unwrap();
    let mut stream = SeededStream::new(90210, 1);
    let mut manifest = String::from("id,image,annotations\n");
    for i in 0..count {
        let image = smooth_image(&mut stream, 32, 32);
        let name = format!("img-{i:03}.ppm");
        write_ppm(&images.join(&name), &image).unwrap();
        let truths = serde_json::json!([
            {"box": {"x_min": 4.0, "y_min": 4.0, "x_max": 14.0, "y_max": 12.0}, "class_id": 0},
            {"box": {"x_min": 18.0, "y_min": 16.0, "x_max": 30.0, "y_max": 28.0}, "class_id": 1},
        ]);
        let ann = format!("img-{i:03}.json");
        fs::write(images.join(&ann), serde_json::to_vec(&truths).unwrap()).unwrap();
        manifest.push_str(&format!("img-{i:03},images/{name},images/{ann}\n"));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest).unwrap();
    path
}

/// Per-relation violation probabilities with one clearly dominant
/// relation (`flip_ud`), in registry order.
pub const SCALAR_PROBS: [(&str, f64); 7] = [
    ("blur", 0.1046),
    ("flip_lr", 0.0307),
    ("flip_ud", 0.5106),
    ("grayscale", 0.1213),
    ("invert", 0.3633),
    ("rotation", 0.4043),
    ("shear", 0.3070),
];

/// Oracle with the scalar table above. `mode` is `"bernoulli"` or
/// `"deterministic-hash"`.
pub fn write_scalar_oracle(dir: &Path, mode: &str, seed: u64) -> PathBuf {
    let table: serde_json::Map<String, serde_json::Value> = SCALAR_PROBS
        .iter()
        .map(|&(mr, p)| (mr.to_string(), serde_json::json!(p)))
        .collect();
    let spec = serde_json::json!({
        "class_count": 10,
        "mode": mode,
        "seed": seed,
        "table": table,
    });
    write_json(&dir.join("oracle.json"), &spec)
}

/// Oracle whose violation probability climbs with the angle:
/// `min(0.95, 0.1 + |φ|/100)`.
pub fn write_ramp_oracle(dir: &Path, mode: &str, seed: u64) -> PathBuf {
    let spec = serde_json::json!({
        "class_count": 10,
        "mode": mode,
        "seed": seed,
        "ramp": {"p0": 0.1, "slope_per_degree": 0.01, "p_max": 0.95},
    });
    write_json(&dir.join("oracle.json"), &spec)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> PathBuf {
    fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path.to_path_buf()
}

/// Resolves a config file with a seed override and a per-seed artifact
/// directory, then runs the campaign.
pub fn run_seeded(config_path: &Path, seed: u64, out_dir: &Path) -> RunSummary {
    campaign::run(&resolve_seeded(config_path, seed, out_dir)).unwrap()
}

pub fn resolve_seeded(config_path: &Path, seed: u64, out_dir: &Path) -> ResolvedConfig {
    fs::create_dir_all(out_dir).unwrap();
    let config = load_config(config_path).unwrap();
    let overrides = Overrides {
        seed: Some(seed),
        out_dir: Some(out_dir.to_path_buf()),
        ..Overrides::default()
    };
    resolve(&config, config_path, &overrides).unwrap()
}
