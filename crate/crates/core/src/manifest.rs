//! Sample manifests: `id,path,domain,label,split` CSV plus the hidden-label
//! sidecar `<name>.eval.csv` (`id,label`) for target domains.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    pub domain: Domain,
    pub label: Option<f64>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

#[derive(Serialize, Deserialize)]
struct EvalRow {
    id: String,
    label: f64,
}

/// `dir/name.csv` -> `dir/name.eval.csv`.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    manifest.with_file_name(format!("{stem}.eval.csv"))
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Self {
        Manifest {
            root: root.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rec: &SampleRecord) -> PathBuf {
        if rec.path.is_absolute() {
            rec.path.clone()
        } else {
            self.root.join(&rec.path)
        }
    }

    pub fn filter(&self, keep: impl Fn(&SampleRecord) -> bool) -> Manifest {
        Manifest {
            root: self.root.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
        for r in &self.records {
            let mut r = r.clone();
            if r.domain == Domain::Target {
                r.label = None;
            }
            w.serialize(&r).map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn eval_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            if let (Domain::Target, Some(label)) = (r.domain, r.label) {
                w.serialize(EvalRow {
                    id: r.id.clone(),
                    label,
                })
                .map_err(|e| Error::Manifest(e.to_string()))?;
            }
        }
        w.into_inner().map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Writes the manifest; target labels, if any, go to the sidecar only.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))?;
        if self.records.iter().any(|r| r.domain == Domain::Target && r.label.is_some()) {
            let side = sidecar_path(path);
            std::fs::write(&side, self.eval_csv()?).map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    /// Reads a manifest without hidden labels.
    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let headers = rdr.headers().map_err(|e| Error::Manifest(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["id", "path", "domain", "label", "split"] {
            return Err(Error::Manifest(format!(
                "{}: header must be id,path,domain,label,split",
                path.display()
            )));
        }
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<SampleRecord>().enumerate() {
            let rec = row.map_err(|e| Error::Manifest(format!("{}: row {}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { root, records })
    }

    /// Reads a manifest and attaches labels from its sidecar, if present.
    pub fn read_with_hidden_labels(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let mut m = Manifest::read(path)?;
        let side = sidecar_path(path);
        if !side.exists() {
            return Ok(m);
        }
        let bytes = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let mut labels = HashMap::new();
        for row in rdr.deserialize::<EvalRow>() {
            let row = row.map_err(|e| Error::Manifest(format!("{}: {e}", side.display())))?;
            labels.insert(row.id, row.label);
        }
        for r in &mut m.records {
            if let Some(l) = labels.get(&r.id) {
                r.label = Some(*l);
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, domain: Domain, label: Option<f64>, split: Split) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            path: PathBuf::from(format!("{id}.ppm")),
            domain,
            label,
            split,
        }
    }

    #[test]
    fn round_trip_hides_target_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(
            dir.path(),
            vec![
                rec("s0", Domain::Source, Some(0.5), Split::Train),
                rec("t0", Domain::Target, Some(0.25), Split::None),
            ],
        );
        let p = dir.path().join("m.csv");
        m.write(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "id,path,domain,label,split\ns0,s0.ppm,source,0.5,train\nt0,t0.ppm,target,,none\n");
        assert_eq!(std::fs::read_to_string(dir.path().join("m.eval.csv")).unwrap(), "id,label\nt0,0.25\n");
        let plain = Manifest::read(&p).unwrap();
        assert_eq!(plain.records[1].label, None);
        let full = Manifest::read_with_hidden_labels(&p).unwrap();
        assert_eq!(full.records, m.records);
    }

    #[test]
    fn rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "id,file\n").unwrap();
        assert!(matches!(Manifest::read(&p), Err(Error::Manifest(_))));
    }
}
