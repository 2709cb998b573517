//! Dataset files: JSON Lines, one header record followed by one record per
//! instance.
//!
//! ```text
//! {"format":"menunet-dataset","version":1,"split":"train","master_seed":7,"count":2,"config":{...}}
//! {"n_students":100,"n_schools":10,"utilities":{"rows":100,"cols":11,"data":[...]},...}
//! {...}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::{GenerationConfig, Split};
use super::instance::MarketInstance;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "menunet-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub split: Split,
    pub master_seed: u64,
    pub count: usize,
    pub config: GenerationConfig,
}

impl DatasetHeader {
    pub fn new(split: Split, master_seed: u64, count: usize, config: GenerationConfig) -> Self {
        DatasetHeader {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            split,
            master_seed,
            count,
            config,
        }
    }
}

pub fn write_dataset(
    path: impl AsRef<Path>,
    header: &DatasetHeader,
    instances: &[MarketInstance],
) -> Result<()> {
    let path = path.as_ref();
    if header.count != instances.len() {
        return Err(Error::Format(
            "header count does not match the instances".into(),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = |text: String| writeln!(w, "{text}").map_err(|e| Error::io(path, e));
    line(serde_json::to_string(header)?)?;
    for inst in instances {
        line(serde_json::to_string(inst)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<MarketInstance>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty dataset file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported dataset {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut instances = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: MarketInstance = serde_json::from_str(&line)?;
        inst.validate()?;
        instances.push(inst);
    }
    if instances.len() != header.count {
        return Err(Error::Format(format!(
            "{}: header announces {} instances, found {}",
            path.display(),
            header.count,
            instances.len()
        )));
    }
    Ok((header, instances))
}
