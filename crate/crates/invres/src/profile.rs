//! Activation-memory sweeps over architectures, depths and storage policies.

use std::fmt;

use invres_core::autodiff::{profile_memory, StoragePolicy};
use invres_core::models::{Arch, Model, ModelSpec};
use invres_core::rng::SeededRng;
use invres_core::{Precision, Scalar};
use serde::Serialize;

use crate::error::Result;
use crate::train::MemorySummary;

#[derive(Debug, Clone, Serialize)]
pub struct ProfileRow {
    pub arch: String,
    pub blocks_per_level: usize,
    pub policy: String,
    #[serde(flatten)]
    pub memory: MemorySummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileTable {
    pub precision: String,
    pub patch: [usize; 3],
    pub rows: Vec<ProfileRow>,
}

impl fmt::Display for ProfileTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<18} {:>6} {:>11} {:>14} {:>14} {:>10}",
            "arch", "blocks", "policy", "peak_scalars", "peak_bytes", "recomputes"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:>6} {:>11} {:>14} {:>14} {:>10}",
                r.arch,
                r.blocks_per_level,
                r.policy,
                r.memory.peak_stored_scalars,
                r.memory.peak_bytes,
                r.memory.recompute_count
            )?;
        }
        Ok(())
    }
}

/// One metered training pass of `spec` under `policy`.
pub fn profile_one<T: Scalar>(spec: &ModelSpec, policy: StoragePolicy) -> Result<MemorySummary> {
    let model = Model::<T>::build(spec)?;
    let mut rng = SeededRng::derive(spec.seed, "profile-input");
    let image = rng.uniform_tensor(&spec.input_shape(), 0.0, 1.0);
    let eps = model.sample_eps(&mut rng);
    let report = profile_memory(model.graph(), model.params(), policy, model.inputs(image, eps)?)?;
    Ok(MemorySummary::from(&report))
}

/// Every combination of `archs`, `blocks` and `policies` on `base`.
pub fn profile_table(
    base: &ModelSpec,
    archs: &[Arch],
    blocks: &[usize],
    policies: &[StoragePolicy],
    precision: Precision,
) -> Result<ProfileTable> {
    let mut rows = Vec::new();
    for &arch in archs {
        for &b in blocks {
            let spec = ModelSpec { arch, blocks_per_level: b, ..base.clone() };
            for &policy in policies {
                let memory = match precision {
                    Precision::F32 => profile_one::<f32>(&spec, policy)?,
                    Precision::F64 => profile_one::<f64>(&spec, policy)?,
                };
                rows.push(ProfileRow {
                    arch: arch.name().into(),
                    blocks_per_level: b,
                    policy: policy.name().into(),
                    memory,
                });
            }
        }
    }
    let precision = match precision {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    };
    Ok(ProfileTable { precision: precision.into(), patch: base.patch, rows })
}
