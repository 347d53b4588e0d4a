//! Protocol comparison through Cramér-Rao bounds: per-protocol bound tables,
//! pairwise std-bound ratio tables, and shared-vs-per-voxel improvement
//! factors for the joint multi-voxel experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdspec_core::crlb::{crlb_with_cap, CrlbResult, FisherSpec, Sharing};
use mdspec_core::{Error, Result};
use serde::Serialize;

use crate::commands::ensure_dir;
use crate::config::{crlb_models, parse_mode, schedule_for, CompareSection, CrlbProtocolSection, RunConfig};
use crate::csvout::{fmt, write_csv};
use crate::manifest::Manifest;
use crate::{guard_output, Overrides};

/// Default identifiability cap for the command. The bundled protocols are
/// deliberately near-degenerate (that is what the comparison demonstrates),
/// with Fisher condition numbers up to ~1e20.
const DEFAULT_COMMAND_CAP: f64 = 1e22;

#[derive(Debug)]
pub struct CrlbOutputs {
    pub summary_csv: PathBuf,
    pub ratio_csvs: Vec<PathBuf>,
    pub improvement_csv: Option<PathBuf>,
    pub meta_json: PathBuf,
    pub manifest: PathBuf,
    /// (table name, per-parameter ratios b/a).
    pub ratios: Vec<(String, Vec<(String, f64)>)>,
    /// Improvement factors per shared relaxation parameter.
    pub improvements: Vec<(String, f64)>,
    pub unidentifiable: Vec<String>,
}

fn builtin_protocols() -> Vec<CrlbProtocolSection> {
    let single = |name: &str, kind: &str, mode: &str, averages: u32| CrlbProtocolSection {
        name: name.to_string(),
        kind: kind.to_string(),
        encodings: None,
        mode: mode.to_string(),
        averages: Some(averages),
        sigma: Some(1.0),
        voxel_amplitudes: None,
        compartments: None,
        sharing: None,
    };
    let mut protocols = vec![
        single("2d", "ir-mse-7x15", "t1t2", 1),
        single("t2-1d", "t2-32", "t2", 7),
        single("t1-1d", "t1-7", "t1", 1),
    ];
    let three_voxel = vec![
        vec![1.0, 1.0, 1.0],
        vec![0.8, 0.6, 1.8],
        vec![2.0, 0.5, 0.5],
    ];
    protocols.push(CrlbProtocolSection {
        name: "3vox-pervoxel".to_string(),
        kind: "ir-mse-7x15".to_string(),
        encodings: None,
        mode: "t1t2".to_string(),
        averages: Some(1),
        sigma: Some(1.0),
        voxel_amplitudes: Some(three_voxel.clone()),
        compartments: None,
        sharing: Some("per-voxel".to_string()),
    });
    protocols.push(CrlbProtocolSection {
        name: "3vox-shared".to_string(),
        kind: "ir-mse-7x15".to_string(),
        encodings: None,
        mode: "t1t2".to_string(),
        averages: Some(1),
        sigma: Some(1.0),
        voxel_amplitudes: Some(three_voxel),
        compartments: None,
        sharing: Some("shared-relaxation".to_string()),
    });
    protocols
}

fn builtin_compares() -> Vec<CompareSection> {
    vec![
        CompareSection {
            a: "2d".to_string(),
            b: "t2-1d".to_string(),
            parameters: (1..=3).map(|s| format!("T2[{s}]")).collect(),
        },
        CompareSection {
            a: "2d".to_string(),
            b: "t1-1d".to_string(),
            parameters: (1..=3).map(|s| format!("T1[{s}]")).collect(),
        },
    ]
}

fn fisher_spec(section: &CrlbProtocolSection) -> Result<FisherSpec> {
    let schedule = schedule_for(&section.kind, section.encodings.as_deref())?;
    let mode = parse_mode(&section.mode)?;
    let sharing = match section.sharing.as_deref().unwrap_or("per-voxel") {
        "per-voxel" => Sharing::PerVoxel,
        "shared-relaxation" => Sharing::SharedRelaxation,
        other => {
            return Err(Error::Config(format!(
                "unknown sharing {other:?} (expected \"per-voxel\" or \"shared-relaxation\")"
            )))
        }
    };
    Ok(FisherSpec {
        voxels: crlb_models(section)?,
        schedule,
        sigma: section.sigma.unwrap_or(1.0),
        averages: section.averages.unwrap_or(1),
        mode,
        sharing,
    })
}

#[derive(Serialize)]
struct CrlbMeta {
    condition_cap: f64,
    noise_model: &'static str,
    t1_baseline_model: &'static str,
    duration_matching: &'static str,
    ratio_convention: &'static str,
    improvement_convention: &'static str,
    fisher_conditions: BTreeMap<String, f64>,
}

/// Mean per-voxel CRLB over voxels divided by the shared-model CRLB, for each
/// shared relaxation parameter.
fn improvement_factors(
    shared: &CrlbResult,
    per_voxel: &CrlbResult,
    compartments: usize,
    voxels: usize,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for s in 1..=compartments {
        for rx in ["T1", "T2"] {
            let name = format!("{rx}[{s}]");
            let Some(shared_idx) = shared.parameter_names.iter().position(|n| *n == name) else {
                continue;
            };
            let mut mean_pv = 0.0;
            let mut count = 0;
            for v in 1..=voxels {
                let label = format!("v{v}.{name}");
                if let Some(i) = per_voxel.parameter_names.iter().position(|n| *n == label) {
                    mean_pv += per_voxel.crlb[i];
                    count += 1;
                }
            }
            if count > 0 {
                out.push((name, (mean_pv / count as f64) / shared.crlb[shared_idx]));
            }
        }
    }
    out
}

pub fn cmd_crlb(config: &RunConfig, out_dir: &Path, ov: &Overrides) -> Result<CrlbOutputs> {
    ensure_dir(out_dir)?;
    let section = config.crlb.clone().unwrap_or_default();
    let cap = section.condition_cap.unwrap_or(DEFAULT_COMMAND_CAP);
    let protocols = section.protocols.unwrap_or_else(builtin_protocols);
    let compares = section.compare.unwrap_or_else(builtin_compares);

    let mut results: BTreeMap<String, CrlbResult> = BTreeMap::new();
    let mut conditions = BTreeMap::new();
    let mut unidentifiable = Vec::new();
    let mut specs: BTreeMap<String, FisherSpec> = BTreeMap::new();

    for protocol in &protocols {
        let spec = fisher_spec(protocol)?;
        match crlb_with_cap(&spec, cap) {
            Ok(result) => {
                conditions.insert(protocol.name.clone(), result.fisher_condition);
                let csv = out_dir.join(format!("crlb_{}.csv", protocol.name));
                guard_output(&csv, ov.force)?;
                write_csv(
                    &csv,
                    "parameter,crlb,std_bound",
                    result
                        .parameter_names
                        .iter()
                        .zip(result.crlb.iter().zip(result.std_bound.iter()))
                        .map(|(name, (c, s))| format!("{name},{},{}", fmt(*c), fmt(*s))),
                )?;
                results.insert(protocol.name.clone(), result);
            }
            Err(Error::Numerical(msg)) => {
                eprintln!("protocol {}: {msg}", protocol.name);
                unidentifiable.push(protocol.name.clone());
            }
            Err(e) => return Err(e),
        }
        specs.insert(protocol.name.clone(), spec);
    }

    let summary_csv = out_dir.join("protocols.csv");
    guard_output(&summary_csv, ov.force)?;
    write_csv(
        &summary_csv,
        "protocol,parameters,fisher_condition,status",
        protocols.iter().map(|p| {
            if let Some(r) = results.get(&p.name) {
                format!(
                    "{},{},{},ok",
                    p.name,
                    r.parameter_names.len(),
                    fmt(r.fisher_condition)
                )
            } else {
                format!("{},,,unidentifiable", p.name)
            }
        }),
    )?;

    let mut ratio_csvs = Vec::new();
    let mut ratios = Vec::new();
    for cmp in &compares {
        let table = format!("{}_vs_{}", cmp.b, cmp.a);
        let path = out_dir.join(format!("ratios_{table}.csv"));
        guard_output(&path, ov.force)?;
        match (results.get(&cmp.a), results.get(&cmp.b)) {
            (Some(a), Some(b)) => {
                let pairs = mdspec_core::crlb::compare_results(a, b, &cmp.parameters)?;
                write_csv(
                    &path,
                    "parameter,std_bound_a,std_bound_b,ratio_b_over_a",
                    pairs.iter().map(|(name, ratio)| {
                        format!(
                            "{name},{},{},{}",
                            fmt(a.std_bound_for(name).unwrap()),
                            fmt(b.std_bound_for(name).unwrap()),
                            fmt(*ratio)
                        )
                    }),
                )?;
                println!("ratio table {table}:");
                for (name, ratio) in &pairs {
                    println!("  {name}: {ratio:.4e}");
                }
                ratios.push((table, pairs));
            }
            _ => {
                write_csv(
                    &path,
                    "parameter,std_bound_a,std_bound_b,ratio_b_over_a",
                    cmp.parameters
                        .iter()
                        .map(|p| format!("{p},unidentifiable,unidentifiable,unidentifiable")),
                )?;
            }
        }
        ratio_csvs.push(path);
    }

    // Shared-vs-per-voxel improvement factors when both variants are present.
    let mut improvement_csv = None;
    let mut improvements = Vec::new();
    if let (Some(shared), Some(per_voxel)) = (results.get("3vox-shared"), results.get("3vox-pervoxel"))
    {
        let compartments = specs["3vox-shared"].voxels[0].len();
        let voxels = specs["3vox-shared"].voxels.len();
        improvements = improvement_factors(shared, per_voxel, compartments, voxels);
        let path = out_dir.join("improvement_factors.csv");
        guard_output(&path, ov.force)?;
        write_csv(
            &path,
            "parameter,crlb_per_voxel_mean,crlb_shared,improvement",
            improvements.iter().map(|(name, f)| {
                let shared_idx = shared.parameter_names.iter().position(|n| n == name).unwrap();
                let c_shared = shared.crlb[shared_idx];
                format!("{name},{},{},{}", fmt(c_shared * f), fmt(c_shared), fmt(*f))
            }),
        )?;
        println!("shared-relaxation improvement factors (mean per-voxel CRLB / shared CRLB):");
        for (name, f) in &improvements {
            println!("  {name}: {f:.1}");
        }
        improvement_csv = Some(path);
    }

    let meta = CrlbMeta {
        condition_cap: cap,
        noise_model: "white Gaussian, identical sigma across protocols",
        t1_baseline_model: "inversion recovery without echo attenuation: sum_s f_s (1 - 2 exp(-TI/T1_s))",
        duration_matching: "expressed through per-encoding averages (the 32-echo protocol uses 7)",
        ratio_convention: "ratio = std_bound(B) / std_bound(A), A = first-named protocol",
        improvement_convention:
            "per shared relaxation parameter: mean per-voxel CRLB across voxels / shared CRLB",
        fisher_conditions: conditions,
    };
    let meta_json = out_dir.join("crlb_meta.json");
    guard_output(&meta_json, ov.force)?;
    std::fs::write(
        &meta_json,
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|e| Error::Data(format!("cannot write {}: {e}", meta_json.display())))?;

    let manifest_path = out_dir.join("manifest.json");
    guard_output(&manifest_path, ov.force)?;
    let mut manifest = Manifest::new("crlb", config.content_hash(), None);
    manifest.output("summary", &summary_csv).output("meta", &meta_json);
    for p in &ratio_csvs {
        manifest.output(
            p.file_stem().and_then(|s| s.to_str()).unwrap_or("ratios"),
            p,
        );
    }
    if let Some(p) = &improvement_csv {
        manifest.output("improvement_factors", p);
    }
    manifest.write(&manifest_path)?;

    let outputs = CrlbOutputs {
        summary_csv,
        ratio_csvs,
        improvement_csv,
        meta_json,
        manifest: manifest_path,
        ratios,
        improvements,
        unidentifiable: unidentifiable.clone(),
    };
    if !unidentifiable.is_empty() {
        return Err(Error::Numerical(format!(
            "unidentifiable protocols: {} (tables written; see {})",
            unidentifiable.join(", "),
            outputs.summary_csv.display()
        )));
    }
    Ok(outputs)
}
