//! Declarative run configuration (JSON). Unknown keys are rejected, and
//! parse errors carry the JSON path of the offending field.

use std::path::Path;

use mdspec_core::model::{ContrastEncoding, KernelMode, SpectralGrid};
use mdspec_core::phantom::{
    default_2d_schedule, default_t1_schedule, default_t2_schedule, NoiseModel, PhantomSpec,
};
use mdspec_core::solver::SolverConfig;
use mdspec_core::{log_grid, CompartmentModel, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: Option<RunSection>,
    pub phantom: Option<PhantomSection>,
    pub protocol: Option<ProtocolSection>,
    pub noise: Option<NoiseSection>,
    pub grid: Option<GridSection>,
    pub solver: Option<SolverSection>,
    pub detect: Option<DetectSection>,
    pub regions: Option<Vec<RegionSection>>,
    pub scale: Option<ScaleSection>,
    pub crlb: Option<CrlbSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub width: Option<usize>,
    pub height: Option<usize>,
    /// Lineshape width override, log10 units per axis.
    pub lineshape_sigma_log10: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    /// "ir-mse-7x15" (default), "t2-32", "t1-7", or "custom".
    pub kind: Option<String>,
    /// Explicit encodings for kind = "custom".
    pub encodings: Option<Vec<crate::container::ScheduleEntry>>,
    pub averages: Option<u32>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// "rician" (default) or "gaussian".
    pub model: Option<String>,
    /// Explicit noise level; when absent, calibrated from `target_max_snr`.
    pub sigma: Option<f64>,
    pub target_max_snr: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// "t1t2" (default), "t1", or "t2".
    pub mode: Option<String>,
    pub t1_min_ms: Option<f64>,
    pub t1_max_ms: Option<f64>,
    pub t1_count: Option<usize>,
    pub t2_min_ms: Option<f64>,
    pub t2_max_ms: Option<f64>,
    pub t2_count: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub max_iters: Option<usize>,
    pub tolerance: Option<f64>,
    /// "zero" (default) or "nnls": initialize from the per-voxel active-set
    /// NNLS solution, which sharply reduces the iterations needed before the
    /// spatial coupling takes over.
    pub init: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub min_height_frac: Option<f64>,
    pub min_separation_decades: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub label: String,
    pub t1_min_ms: f64,
    pub t1_max_ms: f64,
    pub t2_min_ms: f64,
    pub t2_max_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleSection {
    /// "mean" (default) or "median".
    pub aggregate: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrlbSection {
    /// Identifiability cap on the Fisher condition number. The bundled
    /// protocol comparison needs ~1e20 (those experiments are deliberately
    /// near-degenerate), so the command default is 1e22.
    pub condition_cap: Option<f64>,
    pub protocols: Option<Vec<CrlbProtocolSection>>,
    pub compare: Option<Vec<CompareSection>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrlbProtocolSection {
    pub name: String,
    /// Schedule kind, as in [`ProtocolSection`].
    pub kind: String,
    #[serde(default)]
    pub encodings: Option<Vec<crate::container::ScheduleEntry>>,
    /// "t1t2", "t1", or "t2".
    pub mode: String,
    #[serde(default)]
    pub averages: Option<u32>,
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Per-voxel compartment amplitude sets; one inner vec per voxel.
    /// Defaults to the single-voxel three-compartment toy model.
    #[serde(default)]
    pub voxel_amplitudes: Option<Vec<Vec<f64>>>,
    /// Explicit compartments (amplitude, t1, t2) overriding the toy model.
    #[serde(default)]
    pub compartments: Option<Vec<CompartmentSection>>,
    /// "per-voxel" (default) or "shared-relaxation".
    #[serde(default)]
    pub sharing: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompartmentSection {
    pub amplitude: f64,
    pub t1_ms: f64,
    pub t2_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Baseline protocol name (denominator of the std-bound ratio).
    pub a: String,
    /// Comparison protocol name (numerator).
    pub b: String,
    pub parameters: Vec<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| Error::Config(format!("at {}: {}", e.path(), e.inner())))
    }

    /// Stable content hash of the configuration (FNV-1a over the canonical
    /// JSON serialization), recorded in output provenance.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in json.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        let section = self.phantom.clone().unwrap_or_default();
        let width = section.width.unwrap_or(64);
        let height = section.height.unwrap_or(64);
        let mut spec = PhantomSpec::three_compartment_sized(width, height);
        if let Some(sigma) = section.lineshape_sigma_log10 {
            if !(sigma > 0.0) {
                return Err(Error::Config("lineshape_sigma_log10 must be positive".into()));
            }
            for comp in spec.compartments.iter_mut() {
                comp.sigma_log10 = sigma;
            }
        }
        Ok(spec)
    }

    pub fn kernel_mode(&self) -> Result<KernelMode> {
        let mode = self
            .grid
            .as_ref()
            .and_then(|g| g.mode.clone())
            .unwrap_or_else(|| "t1t2".to_string());
        parse_mode(&mode)
    }

    pub fn spectral_grid(&self) -> Result<SpectralGrid> {
        let g = self.grid.clone().unwrap_or_default();
        let mode = self.kernel_mode()?;
        let t1 = || -> Result<Vec<f64>> {
            log_grid(
                g.t1_min_ms.unwrap_or(100.0),
                g.t1_max_ms.unwrap_or(3000.0),
                g.t1_count.unwrap_or(100),
            )
        };
        let t2 = || -> Result<Vec<f64>> {
            log_grid(
                g.t2_min_ms.unwrap_or(2.0),
                g.t2_max_ms.unwrap_or(300.0),
                g.t2_count.unwrap_or(100),
            )
        };
        match mode {
            KernelMode::T1T2 => SpectralGrid::new(t1()?, t2()?),
            KernelMode::T1Only => SpectralGrid::t1_only(t1()?),
            KernelMode::T2Only => SpectralGrid::t2_only(t2()?),
        }
    }

    pub fn schedule(&self) -> Result<Vec<ContrastEncoding>> {
        let section = self.protocol.clone().unwrap_or_default();
        schedule_for(
            section.kind.as_deref().unwrap_or("ir-mse-7x15"),
            section.encodings.as_deref(),
        )
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        match self
            .noise
            .as_ref()
            .and_then(|n| n.model.as_deref())
            .unwrap_or("rician")
        {
            "rician" => Ok(NoiseModel::GaussianMagnitude),
            "gaussian" => Ok(NoiseModel::Gaussian),
            other => Err(Error::Config(format!(
                "unknown noise model {other:?} (expected \"rician\" or \"gaussian\")"
            ))),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = self.solver.clone().unwrap_or_default();
        let mut config = SolverConfig::default();
        if let Some(v) = s.lambda {
            config.lambda = v;
        }
        if let Some(v) = s.mu {
            config.mu = v;
        }
        if let Some(v) = s.max_iters {
            config.max_iters = v;
        }
        if let Some(v) = s.tolerance {
            config.tolerance = v;
        }
        config
    }

    pub fn detect_params(&self) -> (f64, f64) {
        let d = self.detect.clone().unwrap_or_default();
        (
            d.min_height_frac.unwrap_or(0.05),
            d.min_separation_decades.unwrap_or(0.1),
        )
    }
}

pub fn parse_mode(mode: &str) -> Result<KernelMode> {
    match mode {
        "t1t2" => Ok(KernelMode::T1T2),
        "t1" => Ok(KernelMode::T1Only),
        "t2" => Ok(KernelMode::T2Only),
        other => Err(Error::Config(format!(
            "unknown grid mode {other:?} (expected \"t1t2\", \"t1\", or \"t2\")"
        ))),
    }
}

pub fn schedule_for(
    kind: &str,
    encodings: Option<&[crate::container::ScheduleEntry]>,
) -> Result<Vec<ContrastEncoding>> {
    match kind {
        "ir-mse-7x15" => Ok(default_2d_schedule()),
        "t2-32" => Ok(default_t2_schedule()),
        "t1-7" => Ok(default_t1_schedule()),
        "custom" => {
            let entries = encodings.ok_or_else(|| {
                Error::Config("protocol kind \"custom\" requires an encodings list".into())
            })?;
            Ok(entries.iter().map(ContrastEncoding::from).collect())
        }
        other => Err(Error::Config(format!(
            "unknown protocol kind {other:?} (expected \"ir-mse-7x15\", \"t2-32\", \"t1-7\", or \"custom\")"
        ))),
    }
}

/// Build the compartment models for a CRLB protocol section.
pub fn crlb_models(section: &CrlbProtocolSection) -> Result<Vec<CompartmentModel>> {
    if let Some(comps) = &section.compartments {
        let model = CompartmentModel::new(
            comps
                .iter()
                .map(|c| mdspec_core::Compartment {
                    amplitude: c.amplitude,
                    t1_ms: c.t1_ms,
                    t2_ms: c.t2_ms,
                })
                .collect(),
        )?;
        return Ok(vec![model]);
    }
    if let Some(voxels) = &section.voxel_amplitudes {
        return voxels
            .iter()
            .map(|amps| {
                if amps.len() != 3 {
                    return Err(Error::Config(
                        "voxel_amplitudes entries must have 3 amplitudes for the toy model".into(),
                    ));
                }
                Ok(CompartmentModel::toy_with_amplitudes([amps[0], amps[1], amps[2]]))
            })
            .collect();
    }
    Ok(vec![CompartmentModel::toy_three_compartment()])
}
