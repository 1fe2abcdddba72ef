//! Artifact serialization: fields and profiles as CSV with a JSON header,
//! reports as JSON, and a manifest with content hashes. All numbers print
//! with 17 significant digits and a locale-independent decimal point, so
//! identical runs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{DualField, GraphField, NodeClass, ScalarField};
use crate::radial::RadialProfile;

/// 17 significant digits, shortest-faithful not required; deterministic.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0.0000000000000000e0".into();
    }
    format!("{v:.16e}")
}

/// Grid/domain metadata header accompanying a field CSV.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct FieldHeader {
    pub n: usize,
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub mode: String,
    pub in_domain_nodes: usize,
}

fn field_rows(sf: &ScalarField, with_derivatives: bool) -> String {
    let n = sf.grid.n;
    let mut out = String::new();
    for d in 0..n {
        out.push_str(&format!("x{}", d + 1));
        out.push(',');
    }
    out.push('u');
    if with_derivatives {
        for d in 0..n {
            out.push_str(&format!(",du{}", d + 1));
        }
    }
    out.push('\n');
    for i in 0..sf.grid.len() {
        if !sf.mask.in_domain(i) {
            continue;
        }
        let x = sf.grid.position(i);
        for d in 0..n {
            out.push_str(&fmt_f64(x[d]));
            out.push(',');
        }
        out.push_str(&fmt_f64(sf.values[i]));
        if with_derivatives {
            let g = if sf.mask.class[i] == NodeClass::Interior {
                Some(sf.gradient_at(i))
            } else {
                sf.one_sided_gradient_at(i)
            };
            match g {
                Some(g) => {
                    for d in 0..n {
                        out.push(',');
                        out.push_str(&fmt_f64(g[d]));
                    }
                }
                None => {
                    for _ in 0..n {
                        out.push_str(",nan");
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Write a graph field: `<stem>.csv` plus `<stem>.json` header.
pub fn write_graph_field(dir: &Path, stem: &str, f: &GraphField) -> Result<Vec<PathBuf>> {
    let header = FieldHeader {
        n: f.field.grid.n,
        shape: f.field.grid.shape.clone(),
        origin: f.field.grid.origin.clone(),
        spacing: f.field.grid.h,
        mode: format!("primal slope_bound={}", fmt_f64(f.slope_bound)),
        in_domain_nodes: f.field.mask.interior.len() + f.field.mask.boundary.len(),
    };
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, field_rows(&f.field, true))?;
    fs::write(&json_path, to_json_pretty(&header)?)?;
    Ok(vec![csv_path, json_path])
}

/// Write a dual field (total values: base plus correction).
pub fn write_dual_field(dir: &Path, stem: &str, g: &DualField) -> Result<Vec<PathBuf>> {
    let mut total = ScalarField::new(g.field.grid.clone(), g.field.mask.clone());
    for i in 0..g.field.grid.len() {
        if g.field.mask.in_domain(i) {
            total.values[i] = g.total_value_at(i)?;
        }
    }
    let header = FieldHeader {
        n: g.field.grid.n,
        shape: g.field.grid.shape.clone(),
        origin: g.field.grid.origin.clone(),
        spacing: g.field.grid.h,
        mode: format!("dual ball_radius={}", fmt_f64(g.ball_radius)),
        in_domain_nodes: g.field.mask.interior.len() + g.field.mask.boundary.len(),
    };
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, field_rows(&total, false))?;
    fs::write(&json_path, to_json_pretty(&header)?)?;
    Ok(vec![csv_path, json_path])
}

/// Profile CSV with columns (r, y, z0, z, kappa_max).
pub fn write_profile(dir: &Path, stem: &str, prof: &RadialProfile) -> Result<Vec<PathBuf>> {
    let mut out = String::from("r,y,z0,z,kappa_max\n");
    let lim = prof.params.slope_limit();
    for i in 0..prof.r.len() {
        let r = prof.r[i];
        let z = r * (lim - prof.y[i]);
        let kmax = prof.kappa_max_at(r);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(r),
            fmt_f64(prof.y[i]),
            fmt_f64(prof.z0[i]),
            fmt_f64(z),
            fmt_f64(kmax)
        ));
    }
    let path = dir.join(format!("{stem}.csv"));
    fs::write(&path, out)?;
    Ok(vec![path])
}

/// Read back a graph-field CSV (coordinates + u) onto its recorded grid.
pub fn read_graph_field(dir: &Path, stem: &str) -> Result<GraphField> {
    let header: FieldHeader =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let grid = crate::field::Grid {
        n: header.n,
        shape: header.shape,
        origin: header.origin,
        h: header.spacing,
    };
    let csv = fs::read_to_string(dir.join(format!("{stem}.csv")))?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = vec![false; grid.len()];
    for (ln, line) in csv.lines().enumerate() {
        if ln == 0 || line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < header.n + 1 {
            return Err(Error::Schema(format!("short row at line {}", ln + 1)));
        }
        let mut multi = Vec::with_capacity(header.n);
        for d in 0..header.n {
            let x: f64 = cols[d]
                .parse()
                .map_err(|e| Error::Schema(format!("bad number at line {}: {e}", ln + 1)))?;
            let idx = ((x - grid.origin[d]) / grid.h).round() as i64;
            if idx < 0 || idx >= grid.shape[d] as i64 {
                return Err(Error::Schema(format!(
                    "coordinate off-grid at line {}",
                    ln + 1
                )));
            }
            multi.push(idx as usize);
        }
        let flat = grid.flat(&multi);
        values[flat] = cols[header.n]
            .parse()
            .map_err(|e| Error::Schema(format!("bad value at line {}: {e}", ln + 1)))?;
        seen[flat] = true;
    }
    let mask = std::sync::Arc::new(crate::field::DomainMask::from_predicate(&grid, |x| {
        let mut multi = Vec::with_capacity(grid.n);
        for d in 0..grid.n {
            let idx = ((x[d] - grid.origin[d]) / grid.h).round() as i64;
            if idx < 0 || idx >= grid.shape[d] as i64 {
                return false;
            }
            multi.push(idx as usize);
        }
        seen[grid.flat(&multi)]
    }));
    let mut sf = ScalarField::new(grid, mask);
    for i in 0..sf.grid.len() {
        if sf.mask.in_domain(i) {
            sf.values[i] = values[i];
        }
    }
    let slope_bound = 1.0; // conservative; refined by the caller when known
    Ok(GraphField::new(sf, slope_bound))
}

/// Stable-key-order pretty JSON (struct field order is declaration order).
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, to_json_pretty(value)?)?;
    Ok(path)
}

/// Run manifest: inputs, parameters and content hashes of every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(data: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data);
    hex::encode(hasher.finalize())
}

/// Hash the listed files (relative names inside dir) into a manifest.
pub fn build_manifest(
    dir: &Path,
    command: &str,
    config_text: &str,
    seed: u64,
    files: &[PathBuf],
) -> Result<Manifest> {
    let mut artifacts = Vec::new();
    for f in files {
        let data = fs::read(f)?;
        let name = f
            .strip_prefix(dir)
            .unwrap_or(f)
            .to_string_lossy()
            .to_string();
        artifacts.push(ManifestEntry {
            name,
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
        });
    }
    artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(Manifest {
        command: command.to_string(),
        config_hash: sha256_hex(config_text.as_bytes()),
        seed,
        artifacts,
    })
}

/// Verify that the manifest hashes match the files on disk.
pub fn verify_manifest(dir: &Path, manifest: &Manifest) -> Result<Vec<String>> {
    let mut mismatched = Vec::new();
    for entry in &manifest.artifacts {
        let data = fs::read(dir.join(&entry.name))?;
        if sha256_hex(&data) != entry.sha256 {
            mismatched.push(entry.name.clone());
        }
    }
    Ok(mismatched)
}
