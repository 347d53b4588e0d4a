//! Synthetic-data generation: rasterize the phantom, project it through the
//! dictionary, calibrate the noise level, and write the noiseless/noisy
//! datasets plus the ground-truth spectroscopic image and compartment maps.

use std::path::{Path, PathBuf};

use mdspec_core::model::build_dictionary;
use mdspec_core::phantom::{
    add_noise, calibrate_sigma, compute_snr, forward_project, rasterize_phantom, NoiseSpec,
};
use mdspec_core::Result;

use crate::commands::ensure_dir;
use crate::config::RunConfig;
use crate::container::{write_dataset, write_image, write_map_stack, Provenance};
use crate::manifest::Manifest;
use crate::{guard_output, Overrides};

#[derive(Debug)]
pub struct SimulateOutputs {
    pub ground_truth: PathBuf,
    pub compartment_maps: PathBuf,
    pub noiseless: PathBuf,
    pub noisy: PathBuf,
    pub manifest: PathBuf,
    pub sigma: f64,
    pub snr_min: f64,
    pub snr_max: f64,
    pub seed: u64,
}

pub fn cmd_simulate(config: &RunConfig, out_dir: &Path, ov: &Overrides) -> Result<SimulateOutputs> {
    ensure_dir(out_dir)?;
    let phantom = config.phantom_spec()?;
    let grid = config.spectral_grid()?;
    let mode = config.kernel_mode()?;
    let schedule = config.schedule()?;
    let dict = build_dictionary(&schedule, &grid, mode)?;

    let truth = rasterize_phantom(&phantom, &grid)?;
    let noiseless = forward_project(&truth, &dict)?;

    let noise_section = config.noise.clone().unwrap_or_default();
    let sigma = match noise_section.sigma {
        Some(s) => s,
        None => calibrate_sigma(&noiseless, noise_section.target_max_snr.unwrap_or(200.0))?,
    };
    let seed = ov
        .seed
        .or(noise_section.seed)
        .or(config.run.as_ref().and_then(|r| r.seed))
        .unwrap_or(0);
    let noise = NoiseSpec {
        sigma,
        seed,
        model: config.noise_model()?,
    };
    let noisy = add_noise(&noiseless, &noise)?;

    let (snr_min, snr_max) = if sigma > 0.0 {
        let snr = compute_snr(&noiseless, sigma)?;
        (
            snr.iter().cloned().fold(f64::INFINITY, f64::min),
            snr.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };

    let hash = config.content_hash();
    let prov = |generator: Option<&str>| Provenance {
        seed: Some(seed),
        config_hash: Some(hash.clone()),
        sigma: Some(sigma),
        generator: generator.map(|s| s.to_string()),
        ..Default::default()
    };

    let ground_truth = out_dir.join("ground_truth.mdcsi");
    let compartment_maps = out_dir.join("phantom_maps.mdcsi");
    let noiseless_path = out_dir.join("noiseless.mdcsi");
    let noisy_path = out_dir.join("noisy.mdcsi");
    let manifest_path = out_dir.join("manifest.json");
    for p in [
        &ground_truth,
        &compartment_maps,
        &noiseless_path,
        &noisy_path,
        &manifest_path,
    ] {
        guard_output(p, ov.force)?;
    }

    write_image(&ground_truth, &truth, Some(&noiseless.mask), prov(None))?;
    let maps: Vec<(String, ndarray::Array2<f64>)> = phantom
        .compartments
        .iter()
        .enumerate()
        .map(|(c, comp)| (format!("compartment{}", c + 1), comp.map.clone()))
        .collect();
    write_map_stack(&compartment_maps, &maps, prov(None))?;
    write_dataset(&noiseless_path, &noiseless, prov(None))?;
    write_dataset(&noisy_path, &noisy, prov(Some("chacha8/voxel-stream")))?;

    let mut manifest = Manifest::new("simulate", hash, Some(seed));
    manifest
        .output("ground_truth", &ground_truth)
        .output("compartment_maps", &compartment_maps)
        .output("noiseless", &noiseless_path)
        .output("noisy", &noisy_path);
    manifest.write(&manifest_path)?;

    println!(
        "simulate: {} encodings x {} voxels, {} spectral nodes; sigma {sigma:.6e}; SNR {snr_min:.3} - {snr_max:.1}",
        noiseless.encoding_count(),
        noiseless.voxel_count(),
        grid.len(),
    );

    Ok(SimulateOutputs {
        ground_truth,
        compartment_maps,
        noiseless: noiseless_path,
        noisy: noisy_path,
        manifest: manifest_path,
        sigma,
        snr_min,
        snr_max,
        seed,
    })
}
