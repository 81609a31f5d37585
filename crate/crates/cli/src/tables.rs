//! CSV formats read and written by the commands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hwtemporal::hwcore::Signature;
use hwtemporal::io::write_atomic;

/// Serializes rows through a CSV writer and writes the file atomically.
pub fn write_csv<F>(path: &Path, header: &[String], mut rows: F) -> Result<()>
where
    F: FnMut(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    rows(&mut w)?;
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

/// `name,s0,s1,...`, one row per item, values in shortest round-trip form.
pub fn write_signatures(path: &Path, sigs: &[(String, Signature)]) -> Result<()> {
    let dim = sigs.first().map(|s| s.1.len()).unwrap_or(0);
    let mut header = vec!["name".to_string()];
    header.extend((0..dim).map(|i| format!("s{i}")));
    write_csv(path, &header, |w| {
        for (name, s) in sigs {
            let mut rec = vec![name.clone()];
            rec.extend(s.0.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

pub fn read_signatures(path: &Path) -> Result<BTreeMap<String, Signature>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        let name = rec.get(0).unwrap_or_default().to_string();
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {} has a non-numeric value", path.display(), line + 2))?;
        if *dim.get_or_insert(vals.len()) != vals.len() {
            bail!("{}: row {} has {} values, expected {}", path.display(), line + 2, vals.len(), dim.unwrap());
        }
        if out.insert(name.clone(), Signature(vals)).is_some() {
            bail!("{}: duplicate item {name}", path.display());
        }
    }
    if out.is_empty() {
        bail!("{}: no signatures", path.display());
    }
    Ok(out)
}

/// `name,label` rows.
pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        match (rec.get(0), rec.get(1)) {
            (Some(n), Some(l)) => out.push((n.to_string(), l.trim().to_string())),
            _ => bail!("{}: expected name,label rows", path.display()),
        }
    }
    Ok(out)
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| match v.trim() {
            "none" => Ok(0.0),
            t => t.parse::<f64>().with_context(|| format!("bad number {t:?}")),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let sigs = vec![
            ("a".to_string(), Signature(vec![0.1, 1.0 / 3.0, -2e-17])),
            ("b".to_string(), Signature(vec![f64::MIN_POSITIVE, 0.0, 7.0])),
        ];
        write_signatures(&p, &sigs).unwrap();
        let back = read_signatures(&p).unwrap();
        for (n, s) in &sigs {
            assert_eq!(&back[n], s);
        }
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("none,2, 10,60").unwrap(), vec![0.0, 2.0, 10.0, 60.0]);
        assert!(parse_list("1,x").is_err());
    }
}
