use std::path::Path;

use decolite::{Error, Result};

fn fmt(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Sets the `(dataset, classifier)` cell of a wide results table and
/// returns the new file contents. Missing rows and columns are added;
/// cells nobody has filled yet stay blank.
pub fn upsert(path: &Path, dataset: &str, classifier: &str, accuracy: f64) -> Result<String> {
    let mut header = vec!["dataset".to_string()];
    let mut rows: Vec<Vec<String>> = Vec::new();
    if path.exists() {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(fmt)?;
        header = r.headers().map_err(fmt)?.iter().map(str::to_string).collect();
        for rec in r.records() {
            rows.push(rec.map_err(fmt)?.iter().map(str::to_string).collect());
        }
    }
    let col = match header.iter().position(|h| h == classifier) {
        Some(c) => c,
        None => {
            header.push(classifier.to_string());
            header.len() - 1
        }
    };
    let row = match rows.iter().position(|r| r.first().map(String::as_str) == Some(dataset)) {
        Some(i) => i,
        None => {
            rows.push(vec![dataset.to_string()]);
            rows.len() - 1
        }
    };
    for r in &mut rows {
        r.resize(header.len(), String::new());
    }
    rows[row][col] = accuracy.to_string();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(fmt)?;
    for r in &rows {
        w.write_record(r).map_err(fmt)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_cells_and_keeps_others() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        std::fs::write(&path, upsert(&path, "A", "X", 0.5).unwrap()).unwrap();
        std::fs::write(&path, upsert(&path, "B", "Y", 0.75).unwrap()).unwrap();
        let text = upsert(&path, "A", "X", 1.0).unwrap();
        assert_eq!(text, "dataset,X,Y\nA,1,\nB,,0.75\n");
    }
}
