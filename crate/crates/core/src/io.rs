//! Dataset CSV files (`time,event,z1,…,zd`) and JSON helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::survival::{Dataset, SurvivalRecord};

pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "event".to_string()];
    header.extend((1..=data.dimension()).map(|j| format!("z{j}")));
    w.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.time.to_string(), if r.event { "1" } else { "0" }.to_string()];
        row.extend(r.covariates.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let d = header.len().saturating_sub(2);
    let ok = header.get(0) == Some("time")
        && header.get(1) == Some("event")
        && d >= 1
        && (1..=d).all(|j| header.get(j + 1) == Some(format!("z{j}").as_str()));
    if !ok {
        return Err(Error::Parse(format!(
            "expected header time,event,z1..zd, got {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: column {}: {e}", line + 1, &header[i])))
        };
        let event = match row[1].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse(format!("row {}: event must be 0 or 1, got {other:?}", line + 1))),
        };
        let covariates = (2..d + 2).map(num).collect::<Result<Vec<_>>>()?;
        records.push(SurvivalRecord::new(num(0)?, event, covariates)?);
    }
    Dataset::new(d, records)
}

pub fn write_dataset_file(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(data, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_json_file<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let d = Dataset::from_records(vec![
            SurvivalRecord::new(0.25, true, vec![0.1, -0.3]).unwrap(),
            SurvivalRecord::new(1.0, false, vec![1.0 / 3.0, 0.0]).unwrap(),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,event,z1,z2\n"));
        assert_eq!(read_dataset(text.as_bytes()).unwrap().records(), d.records());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read_dataset("t,e,z1\n0.1,1,0\n".as_bytes()).is_err());
        assert!(read_dataset("time,event,z1\n0.1,2,0\n".as_bytes()).is_err());
        assert!(read_dataset("time,event,z1\n1.5,1,0\n".as_bytes()).is_err());
        assert!(read_dataset("time,event,z1\n0.5,1,abc\n".as_bytes()).is_err());
        assert!(read_dataset("time,event\n0.5,1\n".as_bytes()).is_err());
    }
}
