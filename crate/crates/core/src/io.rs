//! Site CSV files, the generator manifest and score files.
//!
//! One file per site, `<site_id>.csv`, with header
//! `f1,...,fd,y,demo_gender,demo_age,demo_race`. Floats are written in their
//! shortest round-trip form, so save followed by load is exact.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{Matrix, SiteDataset, DEMOGRAPHICS};
use crate::divergence::DivergenceScore;
use crate::error::{CoreError, Result};
use crate::synth::Manifest;

pub const MANIFEST_FILE: &str = "manifest.json";
const DEMO_PREFIX: &str = "demo_";

fn schema(file: &Path, row: usize, column: &str, message: impl Into<String>) -> CoreError {
    CoreError::Schema {
        file: file.display().to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

pub fn site_path(dir: &Path, site_id: &str) -> PathBuf {
    dir.join(format!("{site_id}.csv"))
}

pub fn write_site<W: Write>(site: &SiteDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = site.d();
    let mut header: Vec<String> = (1..=d).map(|j| format!("f{j}")).collect();
    header.push("y".into());
    let attrs: Vec<&str> = DEMOGRAPHICS
        .iter()
        .map(|(a, _)| *a)
        .filter(|a| site.demographics.contains_key(*a))
        .collect();
    header.extend(attrs.iter().map(|a| format!("{DEMO_PREFIX}{a}")));
    out.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..site.n() {
        rec.clear();
        rec.extend(site.x.row(i).iter().map(|v| v.to_string()));
        rec.push(site.y[i].to_string());
        rec.extend(attrs.iter().map(|a| site.demographics[*a][i].to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one site file; the site id is the file stem.
pub fn read_site(path: &Path) -> Result<SiteDataset> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| schema(path, 0, "", "file name is not a site id"))?
        .to_string();
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut d = 0;
    let mut y_col = None;
    let mut demo_cols: Vec<(String, usize)> = Vec::new();
    for (c, name) in header.iter().enumerate() {
        if name == "y" {
            y_col = Some(c);
        } else if let Some(attr) = name.strip_prefix(DEMO_PREFIX) {
            if !DEMOGRAPHICS.iter().any(|(a, _)| *a == attr) {
                return Err(schema(path, 0, name, "unknown demographic attribute"));
            }
            demo_cols.push((attr.to_string(), c));
        } else if name == &format!("f{}", d + 1) && c == d {
            d += 1;
        } else {
            return Err(schema(path, 0, name, "unexpected column"));
        }
    }
    let y_col = y_col.ok_or_else(|| schema(path, 0, "y", "missing label column"))?;
    if d == 0 {
        return Err(schema(path, 0, "f1", "no feature columns"));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut demo: Vec<Vec<u32>> = vec![Vec::new(); demo_cols.len()];
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(schema(path, row, "", format!("{} fields, expected {}", rec.len(), header.len())));
        }
        for j in 0..d {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| schema(path, row, &header[j], format!("`{}` is not a number", &rec[j])))?;
            if !v.is_finite() {
                return Err(schema(path, row, &header[j], "value is not finite"));
            }
            x.push(v);
        }
        y.push(match rec[y_col].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(schema(path, row, "y", format!("label `{other}` is not 0 or 1"))),
        });
        for (k, (attr, c)) in demo_cols.iter().enumerate() {
            let levels = crate::data::demographic_levels(attr).unwrap_or(0);
            let code: u32 = rec[*c]
                .trim()
                .parse()
                .ok()
                .filter(|&v: &u32| (v as usize) < levels)
                .ok_or_else(|| schema(path, row, &header[*c], format!("`{}` is not a level below {levels}", &rec[*c])))?;
            demo[k].push(code);
        }
    }
    let n = y.len();
    let demographics: BTreeMap<String, Vec<u32>> =
        demo_cols.into_iter().map(|(a, _)| a).zip(demo).collect();
    SiteDataset::new(id, Matrix::new(n, d, x)?, y, demographics)
}

pub fn save_sites(sites: &[SiteDataset], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in sites {
        let f = BufWriter::new(File::create(site_path(dir, &s.site_id))?);
        write_site(s, f)?;
    }
    Ok(())
}

/// Loads the sites listed in the directory's manifest, or every `*.csv` in
/// name order when there is no manifest.
pub fn load_sites(dir: &Path) -> Result<Vec<SiteDataset>> {
    let manifest = dir.join(MANIFEST_FILE);
    let paths: Vec<PathBuf> = if manifest.exists() {
        let m: Manifest = read_json(&manifest)?;
        m.sites.iter().map(|s| site_path(dir, &s.site_id)).collect()
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        v.sort();
        v
    };
    if paths.is_empty() {
        return Err(CoreError::ConfigInvalid(format!("no site files in {}", dir.display())));
    }
    paths.iter().map(|p| read_site(p)).collect()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Scores from a JSON array or an object with a `scores` array.
pub fn read_scores(path: &Path) -> Result<Vec<DivergenceScore>> {
    let v: serde_json::Value = read_json(path)?;
    let arr = match v {
        serde_json::Value::Object(mut o) => o
            .remove("scores")
            .ok_or_else(|| schema(path, 0, "scores", "missing scores array"))?,
        other => other,
    };
    Ok(serde_json::from_value(arr)?)
}
