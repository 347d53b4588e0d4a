//! TI=0 polarity restoration and scale correction.

use std::path::{Path, PathBuf};

use mdspec_core::analysis::{scale_correct_ti0, signed_ti0, ScaleAggregate};
use mdspec_core::{Error, Result};

use crate::commands::ensure_dir;
use crate::config::RunConfig;
use crate::container::{read_dataset, write_dataset, Provenance};
use crate::csvout::{fmt, write_csv};
use crate::manifest::Manifest;
use crate::{guard_output, Overrides};

#[derive(Debug)]
pub struct ScaleOutputs {
    pub corrected: PathBuf,
    pub scales_csv: PathBuf,
    pub manifest: PathBuf,
    pub global_scale: f64,
    pub excluded: usize,
}

pub fn cmd_scale_correct(
    dataset_path: &Path,
    config: &RunConfig,
    out_dir: &Path,
    ov: &Overrides,
) -> Result<ScaleOutputs> {
    ensure_dir(out_dir)?;
    let (ds, header) = read_dataset(dataset_path)?;

    let aggregate = match config
        .scale
        .as_ref()
        .and_then(|s| s.aggregate.as_deref())
        .unwrap_or("mean")
    {
        "mean" => ScaleAggregate::Mean,
        "median" => ScaleAggregate::Median,
        other => {
            return Err(Error::Config(format!(
                "unknown scale aggregate {other:?} (expected \"mean\" or \"median\")"
            )))
        }
    };

    let signed = signed_ti0(&ds);
    let correction = scale_correct_ti0(&signed, aggregate)?;

    let corrected_path = out_dir.join("corrected.mdcsi");
    let scales_csv = out_dir.join("voxel_scales.csv");
    let manifest_path = out_dir.join("manifest.json");
    for p in [&corrected_path, &scales_csv, &manifest_path] {
        guard_output(p, ov.force)?;
    }

    let hash = config.content_hash();
    write_dataset(
        &corrected_path,
        &correction.dataset,
        Provenance {
            config_hash: Some(hash.clone()),
            scale: Some(correction.global_scale),
            seed: header.provenance.seed,
            sigma: header.provenance.sigma,
            ..Default::default()
        },
    )?;
    write_csv(
        &scales_csv,
        "voxel,scale",
        correction
            .voxel_scales
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|v| format!("{i},{}", fmt(v)))),
    )?;

    let mut manifest = Manifest::new("scale-correct", hash, None);
    manifest
        .input("dataset", dataset_path)
        .output("corrected", &corrected_path)
        .output("voxel_scales", &scales_csv);
    manifest.write(&manifest_path)?;

    if correction.excluded > 0 {
        eprintln!(
            "warning: {} masked voxels excluded from the scale fit",
            correction.excluded
        );
    }
    println!(
        "scale-correct: global scale {:.6} ({} voxel fits, {} excluded)",
        correction.global_scale,
        correction.voxel_scales.iter().flatten().count(),
        correction.excluded
    );

    Ok(ScaleOutputs {
        corrected: corrected_path,
        scales_csv,
        manifest: manifest_path,
        global_scale: correction.global_scale,
        excluded: correction.excluded,
    })
}
