use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use derm_core::data::{decode_ppm, encode_ppm, parse_label, Image, ImageSample};

use crate::error::{CliError, CliResult};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_image(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| CliError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())))
}

pub fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    let bytes = encode_ppm(img).map_err(|e| CliError::Internal(e.to_string()))?;
    atomic_write(path, &bytes)
}

pub const MANIFEST_HEADER: [&str; 2] = ["image_path", "label"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image_path: String,
    /// The label as written, kept so derived manifests copy it verbatim.
    pub raw_label: String,
    pub label: u8,
}

pub fn read_manifest(path: &Path) -> CliResult<Vec<ManifestRow>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(bad(format!("header must be `image_path,label`, found `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let (image_path, raw) = (&rec[0], &rec[1]);
        if image_path.is_empty() {
            return Err(bad(format!("row {line}: empty image_path")));
        }
        let label = parse_label(raw).map_err(|e| bad(format!("row {line}: {e}")))?;
        rows.push(ManifestRow {
            image_path: image_path.to_string(),
            raw_label: raw.to_string(),
            label,
        });
    }
    if rows.is_empty() {
        return Err(bad("manifest has no rows".into()));
    }
    Ok(rows)
}

pub fn write_manifest<'a>(path: &Path, rows: impl IntoIterator<Item = &'a ManifestRow>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Internal(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([&r.image_path, &r.raw_label]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    atomic_write(path, &bytes)
}

pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

pub fn load_samples(rows: &[ManifestRow], data_root: &Path) -> CliResult<Vec<ImageSample>> {
    rows.iter()
        .map(|r| {
            Ok(ImageSample {
                id: r.image_path.clone(),
                image: read_image(&resolve(data_root, &r.image_path))?,
                label: r.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "image_path,label\na.ppm,mel\nb.ppm,0\nc.ppm, nv\n").unwrap();
        let rows = read_manifest(&p).unwrap();
        assert_eq!(rows.iter().map(|r| r.label).collect::<Vec<_>>(), [1, 0, 0]);
        let q = dir.path().join("out/q.csv");
        write_manifest(&q, &rows).unwrap();
        assert_eq!(read_manifest(&q).unwrap(), rows);

        fs::write(&p, "image_path,label\na.ppm,mel\nb.ppm,xyz\n").unwrap();
        match read_manifest(&p) {
            Err(CliError::Config(m)) => assert!(m.contains("row 3"), "{m}"),
            r => panic!("{r:?}"),
        }
        fs::write(&p, "path,label\na.ppm,1\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(CliError::Config(_))));
        assert!(matches!(read_manifest(&dir.path().join("none.csv")), Err(CliError::Io { .. })));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
