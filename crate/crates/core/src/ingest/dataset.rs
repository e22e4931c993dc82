//! On-disk dataset directory: `dataset.json`, `split.json` and one JSON file
//! per graph under `graphs/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GasGroup, SensorGraph};

use super::{DatasetSplit, GasMaxima, IngestConfig, StageRecord};

const DATASET_FORMAT: &str = "gvit-dataset-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub format: String,
    pub graph_count: usize,
    pub gas_maxima: BTreeMap<GasGroup, GasMaxima>,
    pub ingest: IngestConfig,
    pub provenance: Vec<StageRecord>,
}

impl DatasetInfo {
    pub fn new(
        graph_count: usize,
        gas_maxima: BTreeMap<GasGroup, GasMaxima>,
        ingest: IngestConfig,
        provenance: Vec<StageRecord>,
    ) -> Self {
        DatasetInfo {
            format: DATASET_FORMAT.into(),
            graph_count,
            gas_maxima,
            ingest,
            provenance,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub graphs: Vec<SensorGraph>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn select(&self, indices: &[usize]) -> Vec<SensorGraph> {
        indices.iter().map(|&i| self.graphs[i].clone()).collect()
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_dataset(dir: &Path, graphs: &[SensorGraph], split: &DatasetSplit, info: &DatasetInfo) -> Result<()> {
    let graph_dir = dir.join("graphs");
    fs::create_dir_all(&graph_dir).map_err(|e| Error::io(&graph_dir, e))?;
    for (i, g) in graphs.iter().enumerate() {
        let path = graph_dir.join(format!("graph_{i:05}.json"));
        fs::write(&path, serde_json::to_string(g)?).map_err(|e| Error::io(&path, e))?;
    }
    write_json(&dir.join("split.json"), split)?;
    write_json(&dir.join("dataset.json"), info)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let info: DatasetInfo = read_json(&dir.join("dataset.json"))?;
    if info.format != DATASET_FORMAT {
        return Err(Error::Data(format!("unsupported dataset format {:?}", info.format)));
    }
    let split: DatasetSplit = read_json(&dir.join("split.json"))?;
    let graphs = (0..info.graph_count)
        .map(|i| {
            let g: SensorGraph = read_json(&dir.join("graphs").join(format!("graph_{i:05}.json")))?;
            g.validate()
        })
        .collect::<Result<Vec<_>>>()?;
    let in_range = |v: &[usize]| v.iter().all(|&i| i < graphs.len());
    if !in_range(&split.train_val) || !in_range(&split.test) || !split.folds.iter().all(|f| in_range(f)) {
        return Err(Error::Data("split manifest references missing graphs".into()));
    }
    Ok(Dataset { info, graphs, split })
}
