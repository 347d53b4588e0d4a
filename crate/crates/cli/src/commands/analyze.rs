//! Spectral post-processing: spatially averaged spectrum, peak detection (or
//! user-specified regions), and quadrature-weighted region integration into
//! spatial maps.

use std::path::{Path, PathBuf};

use mdspec_core::analysis::{
    detect_peaks, integrate_region, mean_spectrum, region_node_indices, SpectralRegion,
};
use mdspec_core::Result;
use ndarray::Array2;

use crate::commands::ensure_dir;
use crate::config::RunConfig;
use crate::container::{read_image, write_map_stack, Provenance};
use crate::csvout::{fmt, write_csv};
use crate::manifest::Manifest;
use crate::{guard_output, Overrides};

#[derive(Debug)]
pub struct AnalyzeOutputs {
    pub mean_spectrum_csv: PathBuf,
    pub peaks_csv: PathBuf,
    pub maps: PathBuf,
    pub maps_csv: PathBuf,
    pub manifest: PathBuf,
    pub peak_count: usize,
    pub region_labels: Vec<String>,
}

pub fn cmd_analyze(
    image_path: &Path,
    config: &RunConfig,
    out_dir: &Path,
    ov: &Overrides,
) -> Result<AnalyzeOutputs> {
    ensure_dir(out_dir)?;
    let (image, header) = read_image(image_path)?;
    let mask = header
        .mask
        .clone()
        .unwrap_or_else(|| vec![1; image.voxel_count()]);

    let mean = mean_spectrum(&image, &mask)?;

    // User-specified regions take precedence over automatic detection.
    let (regions, source, peak_rows): (Vec<SpectralRegion>, &str, Vec<String>) =
        if let Some(user) = &config.regions {
            let regions: Vec<SpectralRegion> = user
                .iter()
                .map(|r| {
                    SpectralRegion::new(
                        r.label.clone(),
                        (r.t1_min_ms, r.t1_max_ms),
                        (r.t2_min_ms, r.t2_max_ms),
                    )
                })
                .collect::<Result<_>>()?;
            let rows = regions
                .iter()
                .map(|r| {
                    format!(
                        "{},,,,{},{},{},{},user",
                        r.label,
                        fmt(r.t1_range.0),
                        fmt(r.t1_range.1),
                        fmt(r.t2_range.0),
                        fmt(r.t2_range.1)
                    )
                })
                .collect();
            (regions, "user", rows)
        } else {
            let (min_height_frac, min_separation) = config.detect_params();
            let peaks = detect_peaks(&mean, &image.grid, min_height_frac, min_separation)?;
            let rows = peaks
                .peaks
                .iter()
                .map(|p| {
                    format!(
                        "{},{},{},{},{},{},{},{},auto",
                        p.region.label,
                        fmt(p.t1_ms),
                        fmt(p.t2_ms),
                        fmt(p.height),
                        fmt(p.region.t1_range.0),
                        fmt(p.region.t1_range.1),
                        fmt(p.region.t2_range.0),
                        fmt(p.region.t2_range.1)
                    )
                })
                .collect();
            (
                peaks.peaks.into_iter().map(|p| p.region).collect(),
                "auto",
                rows,
            )
        };

    let mean_csv_path = out_dir.join("mean_spectrum.csv");
    let peaks_csv_path = out_dir.join("peaks.csv");
    let maps_path = out_dir.join("region_maps.mdcsi");
    let maps_csv_path = out_dir.join("region_maps.csv");
    let manifest_path = out_dir.join("manifest.json");
    for p in [
        &mean_csv_path,
        &peaks_csv_path,
        &maps_path,
        &maps_csv_path,
        &manifest_path,
    ] {
        guard_output(p, ov.force)?;
    }

    write_csv(
        &mean_csv_path,
        "t1_ms,t2_ms,weight,value",
        (0..image.grid.len()).map(|q| {
            let (t1, t2) = image.grid.node(q);
            format!(
                "{},{},{},{}",
                fmt(t1),
                fmt(t2),
                fmt(image.grid.weights()[q]),
                fmt(mean[q])
            )
        }),
    )?;
    write_csv(
        &peaks_csv_path,
        "label,t1_ms,t2_ms,height,t1_min_ms,t1_max_ms,t2_min_ms,t2_max_ms,source",
        peak_rows,
    )?;

    let mut maps: Vec<(String, Array2<f64>)> = Vec::with_capacity(regions.len());
    for region in &regions {
        if region_node_indices(&image.grid, region).is_empty() {
            eprintln!(
                "warning: region {} does not intersect the spectral grid; its map is zero",
                region.label
            );
        }
        maps.push((region.label.clone(), integrate_region(&image, region)?));
    }
    if maps.is_empty() {
        // No peaks detected: still emit a well-formed (single zero plane) stack.
        maps.push((
            "empty".to_string(),
            Array2::zeros((image.height, image.width)),
        ));
    }
    write_map_stack(
        &maps_path,
        &maps,
        Provenance {
            config_hash: Some(config.content_hash()),
            ..Default::default()
        },
    )?;
    write_csv(
        &maps_csv_path,
        "region,x,y,value",
        maps.iter().flat_map(|(label, m)| {
            let label = label.clone();
            let (h, w) = m.dim();
            (0..h).flat_map(move |y| {
                let label = label.clone();
                let row: Vec<String> = (0..w)
                    .map(|x| format!("{label},{x},{y},{}", fmt(m[(y, x)])))
                    .collect();
                row
            })
        }),
    )?;

    let mut manifest = Manifest::new("analyze", config.content_hash(), None);
    manifest
        .input("image", image_path)
        .output("mean_spectrum", &mean_csv_path)
        .output("peaks", &peaks_csv_path)
        .output("region_maps", &maps_path)
        .output("region_maps_csv", &maps_csv_path);
    manifest.write(&manifest_path)?;

    println!(
        "analyze: {} {source} region(s): {}",
        regions.len(),
        regions
            .iter()
            .map(|r| r.label.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    );

    Ok(AnalyzeOutputs {
        mean_spectrum_csv: mean_csv_path,
        peaks_csv: peaks_csv_path,
        maps: maps_path,
        maps_csv: maps_csv_path,
        manifest: manifest_path,
        peak_count: regions.len(),
        region_labels: regions.iter().map(|r| r.label.clone()).collect(),
    })
}
