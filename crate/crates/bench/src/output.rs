//! Plot-ready CSV files.

use std::io;
use std::path::{Path, PathBuf};

use crate::stats::BenchRecord;

pub const CSV_HEADER: [&str; 10] =
    ["size", "n", "mean_ns", "std_ns", "min_ns", "q25_ns", "median_ns", "q75_ns", "q99_ns", "max_ns"];

pub const OUTLIER_HEADER: [&str; 2] = ["size", "latency_ns"];

/// `runs.csv` -> `runs.outliers.csv`; other names get the suffix appended.
pub fn outliers_path(path: &Path) -> PathBuf {
    match path.extension() {
        Some(ext) if ext == "csv" => path.with_extension("outliers.csv"),
        _ => {
            let mut name = path.as_os_str().to_owned();
            name.push(".outliers.csv");
            PathBuf::from(name)
        }
    }
}

fn float(v: f64) -> String {
    // Shortest round-trip decimal; std never switches to exponent notation.
    format!("{v}")
}

fn row(r: &BenchRecord) -> [String; 10] {
    [
        r.size.to_string(),
        r.n.to_string(),
        float(r.mean_ns),
        float(r.std_ns),
        r.min_ns.to_string(),
        float(r.q25_ns),
        float(r.median_ns),
        float(r.q75_ns),
        float(r.q99_ns),
        r.max_ns.to_string(),
    ]
}

/// The CSV text for `records`.
pub fn render_csv(records: &[BenchRecord]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(row(r))?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn render_outliers(records: &[BenchRecord]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(OUTLIER_HEADER)?;
    for r in records {
        for o in &r.outliers {
            w.write_record([r.size.to_string(), o.to_string()])?;
        }
    }
    w.into_inner().map_err(|e| e.into_error())
}

/// Writes `path` and its outlier sibling; returns the sibling's path.
pub fn emit_csv(records: &[BenchRecord], path: &Path) -> io::Result<PathBuf> {
    std::fs::write(path, render_csv(records)?)?;
    let sibling = outliers_path(path);
    std::fs::write(&sibling, render_outliers(records)?)?;
    Ok(sibling)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(size: u64, samples: &[u64]) -> BenchRecord {
        BenchRecord::from_samples(size, samples).unwrap()
    }

    #[test]
    fn header_and_rows() {
        let records = [record(1, &[1, 2, 3, 4]), record(2, &[10, 10]), record(4, &[5, 7, 9])];
        let text = String::from_utf8(render_csv(&records).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "size,n,mean_ns,std_ns,min_ns,q25_ns,median_ns,q75_ns,q99_ns,max_ns");
        assert_eq!(lines[2], "2,2,10,0,10,10,10,10,10,10");
        assert!(lines[1].starts_with("1,4,2.5,"));
    }

    #[test]
    fn sibling_names() {
        assert_eq!(outliers_path(Path::new("/tmp/a.csv")), Path::new("/tmp/a.outliers.csv"));
        assert_eq!(outliers_path(Path::new("out")), Path::new("out.outliers.csv"));
    }

    #[test]
    fn outlier_rows() {
        let mut samples = vec![100u64; 300];
        samples.extend([9_000, 9_500, 9_900]);
        let records = [record(8, &samples)];
        let text = String::from_utf8(render_outliers(&records).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 1 + records[0].outliers.len());
        assert!(text.contains("8,9900\n"));
    }

    #[test]
    fn emit_twice_identical() {
        let dir = tempfile::tempdir().unwrap();
        let records = [record(1, &[482, 470, 495, 10_480, 481])];
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        emit_csv(&records, &a).unwrap();
        emit_csv(&records, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(std::fs::read(outliers_path(&a)).unwrap(), std::fs::read(outliers_path(&b)).unwrap());
    }
}
