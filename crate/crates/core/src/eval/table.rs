use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy per (classifier, dataset), each cell averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub classifiers: Vec<String>,
    pub datasets: Vec<String>,
    /// `acc[classifier][dataset]`.
    pub acc: Vec<Vec<f64>>,
}

impl ResultsTable {
    pub fn new(classifiers: Vec<String>, datasets: Vec<String>, acc: Vec<Vec<f64>>) -> Result<Self> {
        let t = ResultsTable {
            classifiers,
            datasets,
            acc,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.acc.len() != self.classifiers.len() {
            return Err(Error::Data(format!(
                "{} classifier names for {} accuracy rows",
                self.classifiers.len(),
                self.acc.len()
            )));
        }
        for (name, row) in self.classifiers.iter().zip(&self.acc) {
            if row.len() != self.datasets.len() {
                return Err(Error::Data(format!("{name}: {} cells for {} datasets", row.len(), self.datasets.len())));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("{name}: accuracy {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn classifier_row(&self, name: &str) -> Option<&[f64]> {
        let i = self.classifiers.iter().position(|c| c == name)?;
        Some(&self.acc[i])
    }

    /// Writes rows = datasets, columns = classifiers, with a header row and
    /// a leading `dataset` column.
    pub fn to_csv(&self) -> Result<String> {
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["dataset".to_string()];
        header.extend(self.classifiers.iter().cloned());
        w.write_record(&header).map_err(fmt)?;
        for (j, ds) in self.datasets.iter().enumerate() {
            let mut rec = vec![ds.clone()];
            rec.extend(self.acc.iter().map(|row| row[j].to_string()));
            w.write_record(&rec).map_err(fmt)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = r.headers().map_err(fmt)?.clone();
        if header.len() < 2 {
            return Err(Error::Format("results table needs a dataset column and at least one classifier".into()));
        }
        let classifiers: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut datasets = Vec::new();
        let mut acc = vec![Vec::new(); classifiers.len()];
        for rec in r.records() {
            let rec = rec.map_err(fmt)?;
            let ds = rec.get(0).unwrap_or_default().trim().to_string();
            for (i, cell) in rec.iter().skip(1).enumerate() {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Err(Error::Data(format!("{ds}: missing accuracy for {}", classifiers[i])));
                }
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Format(format!("{ds}: cannot parse accuracy {cell:?}")))?;
                acc[i].push(v);
            }
            datasets.push(ds);
        }
        ResultsTable::new(classifiers, datasets, acc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}
