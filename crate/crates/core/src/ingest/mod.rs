//! From continuous sensor recordings to labelled [`SensorGraph`]s.
//!
//! The stages run in a fixed order: parse, downsample, air-baseline
//! correction, segmentation, target normalisation and splitting. The stage a
//! stream has reached is tracked on [`RawStream`] so out-of-order use fails.

mod dataset;
mod split;
mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Composition, GasGroup, GraphMeta, SensorGraph, SENSOR_CHANNELS};
use crate::tensor::Tensor;

pub use dataset::{read_dataset, write_dataset, Dataset, DatasetInfo};
pub use split::{class_counts, kfold, stratified_split, ClassKey, DatasetSplit};
pub use synth::{demo_schedule, synth_stream, synthesize, DemoSchedule, Phase, SensorParams, SynthConfig, SynthOutput};

/// Columns per recording row: time, two setpoints, 16 sensors.
pub const STREAM_COLUMNS: usize = 3 + SENSOR_CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamRow {
    pub time: f64,
    /// ppm setpoints of (gas A, gas B).
    pub conc: [f64; 2],
    pub sensors: [f64; SENSOR_CHANNELS],
}

impl StreamRow {
    pub fn is_air(&self) -> bool {
        self.conc[0] == 0.0 && self.conc[1] == 0.0
    }
}

/// Processing stage reached by a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Downsampled,
    BaselineCorrected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawStream {
    group: GasGroup,
    source: String,
    rows: Vec<StreamRow>,
    stage: Stage,
}

impl RawStream {
    pub fn new(group: GasGroup, source: impl Into<String>, rows: Vec<StreamRow>) -> Result<Self> {
        let source = source.into();
        for (i, r) in rows.iter().enumerate() {
            if !r.time.is_finite() || !r.sensors.iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!("{source}: non-finite value in row {i}")));
            }
            if !(r.conc[0] >= 0.0 && r.conc[1] >= 0.0) {
                return Err(Error::Data(format!("{source}: negative concentration in row {i}")));
            }
            if i > 0 && r.time < rows[i - 1].time {
                return Err(Error::Data(format!("{source}: time decreases at row {i}")));
            }
        }
        Ok(RawStream {
            group,
            source,
            rows,
            stage: Stage::Raw,
        })
    }

    pub fn group(&self) -> GasGroup {
        self.group
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn rows(&self) -> &[StreamRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    fn with_rows(&self, rows: Vec<StreamRow>, stage: Stage) -> RawStream {
        RawStream {
            group: self.group,
            source: self.source.clone(),
            rows,
            stage,
        }
    }

    /// Writes the stream in the 19-column whitespace format.
    pub fn write_text<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "Time (seconds), {} conc (ppm), {} conc (ppm), sensor readings (16 channels)",
            self.group.gas_names()[0],
            self.group.gas_names()[1]
        )?;
        for r in &self.rows {
            write!(w, "{:.2} {} {}", r.time, r.conc[0], r.conc[1])?;
            for s in &r.sensors {
                write!(w, " {s:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Reads a whitespace-delimited 19-column recording. A non-numeric first line
/// is treated as a header and skipped.
pub fn parse_stream(path: &Path, group: GasGroup) -> Result<RawStream> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(BufReader::new(file), &path.display().to_string(), group)
}

pub fn parse_reader<R: BufRead>(reader: R, source: &str, group: GasGroup) -> Result<RawStream> {
    let mut rows = Vec::new();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if lineno == 1 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() != STREAM_COLUMNS {
            return Err(parse_err(
                lineno,
                format!("expected {STREAM_COLUMNS} columns, found {}", fields.len()),
            ));
        }
        let mut values = [0.0; STREAM_COLUMNS];
        for (slot, field) in values.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(lineno, format!("non-numeric field {field:?}")))?;
        }
        let mut sensors = [0.0; SENSOR_CHANNELS];
        sensors.copy_from_slice(&values[3..]);
        rows.push(StreamRow {
            time: values[0],
            conc: [values[1], values[2]],
            sensors,
        });
    }
    if rows.is_empty() {
        return Err(parse_err(0, "no data rows".into()));
    }
    RawStream::new(group, source, rows)
}

fn check_not_corrected(s: &RawStream, op: &str) -> Result<()> {
    if s.stage >= Stage::BaselineCorrected {
        return Err(Error::Contract(format!(
            "{op} must run before baseline correction ({})",
            s.source
        )));
    }
    Ok(())
}

/// Keeps rows `0, factor, 2·factor, …`.
pub fn downsample(s: &RawStream, factor: usize) -> Result<RawStream> {
    if factor == 0 {
        return Err(Error::Domain("downsample factor must be >= 1".into()));
    }
    check_not_corrected(s, "downsample")?;
    let rows = s.rows.iter().step_by(factor).copied().collect();
    Ok(s.with_rows(rows, Stage::Downsampled))
}

/// Averaging variant of [`downsample`]: each output row carries the time and
/// setpoints of the first row in its window and the mean sensor readings of
/// the window.
pub fn downsample_mean(s: &RawStream, factor: usize) -> Result<RawStream> {
    if factor == 0 {
        return Err(Error::Domain("downsample factor must be >= 1".into()));
    }
    check_not_corrected(s, "downsample")?;
    let rows = s
        .rows
        .chunks(factor)
        .map(|window| {
            let mut out = window[0];
            for c in 0..SENSOR_CHANNELS {
                out.sensors[c] = window.iter().map(|r| r.sensors[c]).sum::<f64>() / window.len() as f64;
            }
            out
        })
        .collect();
    Ok(s.with_rows(rows, Stage::Downsampled))
}

/// Maximal runs of rows satisfying `pred`, as `(start, end)` half-open ranges.
fn runs(rows: &[StreamRow], same: impl Fn(&StreamRow, &StreamRow) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || !same(&rows[i - 1], &rows[i]) {
            out.push((start, i));
            start = i;
        }
    }
    out
}

/// Subtracts from every row the per-channel mean of the most recent air
/// phase (both setpoints zero). Air rows use their own phase's mean; rows
/// preceding the first air phase use the first one.
pub fn baseline_correct(s: &RawStream) -> Result<RawStream> {
    check_not_corrected(s, "baseline_correct")?;
    let phases = runs(&s.rows, |a, b| a.conc == b.conc);
    let air_means: Vec<(usize, [f64; SENSOR_CHANNELS])> = phases
        .iter()
        .filter(|(start, _)| s.rows[*start].is_air())
        .map(|&(start, end)| {
            let mut mean = [0.0; SENSOR_CHANNELS];
            for r in &s.rows[start..end] {
                for (m, v) in mean.iter_mut().zip(&r.sensors) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= (end - start) as f64;
            }
            (start, mean)
        })
        .collect();
    if air_means.is_empty() {
        return Err(Error::Data(format!(
            "{}: no air phase, cannot establish a baseline",
            s.source
        )));
    }

    let mut rows = s.rows.clone();
    let mut current = 0;
    for (start, end) in phases {
        while current + 1 < air_means.len() && air_means[current + 1].0 <= start {
            current += 1;
        }
        let base = &air_means[current].1;
        for r in &mut rows[start..end] {
            for (v, b) in r.sensors.iter_mut().zip(base) {
                *v -= b;
            }
        }
    }
    Ok(s.with_rows(rows, Stage::BaselineCorrected))
}

/// Label-homogeneous slice of a baseline-corrected stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub group: GasGroup,
    pub source: String,
    /// Row range in the downsampled stream.
    pub start_row: usize,
    pub end_row: usize,
    /// ppm setpoints, constant over the segment.
    pub conc: [f64; 2],
    /// `len × 16` baseline-corrected readings.
    pub features: Tensor,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_row - self.start_row
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits at every setpoint change and drops air phases.
pub fn segment(s: &RawStream) -> Result<Vec<Segment>> {
    if s.stage != Stage::BaselineCorrected {
        return Err(Error::Contract(format!(
            "segment needs a baseline-corrected stream, {} is at {:?}",
            s.source, s.stage
        )));
    }
    let segments = runs(&s.rows, |a, b| a.conc == b.conc)
        .into_iter()
        .filter(|&(start, _)| !s.rows[start].is_air())
        .map(|(start, end)| {
            let data: Vec<f64> = s.rows[start..end]
                .iter()
                .flat_map(|r| r.sensors)
                .collect();
            Segment {
                group: s.group,
                source: s.source.clone(),
                start_row: start,
                end_row: end,
                conc: s.rows[start].conc,
                features: Tensor::from_parts(vec![end - start, SENSOR_CHANNELS], data),
            }
        })
        .collect();
    Ok(segments)
}

/// Per-gas ppm maxima used to scale targets into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasMaxima(pub [f64; 2]);

impl GasMaxima {
    /// Maxima of the public dynamic-mixtures recordings.
    pub fn uci(group: GasGroup) -> Self {
        match group {
            GasGroup::CoEthylene => GasMaxima([533.33, 20.0]),
            GasGroup::MethaneEthylene => GasMaxima([296.67, 20.0]),
        }
    }

    /// Largest setpoint per gas over `segments`.
    pub fn from_segments(segments: &[Segment]) -> Self {
        let mut m = [0.0f64; 2];
        for s in segments {
            m[0] = m[0].max(s.conc[0]);
            m[1] = m[1].max(s.conc[1]);
        }
        GasMaxima(m)
    }
}

/// `y = y_ppm / max(y)` per gas, turning segments into graphs.
pub fn normalize_targets(segments: &[Segment], maxima: GasMaxima) -> Result<Vec<SensorGraph>> {
    if maxima.0.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::Domain(format!(
            "gas maxima must be positive, got {:?}",
            maxima.0
        )));
    }
    segments
        .iter()
        .map(|s| {
            let targets = [s.conc[0] / maxima.0[0], s.conc[1] / maxima.0[1]];
            SensorGraph::new(
                s.features.clone(),
                targets,
                s.conc,
                s.group,
                GraphMeta {
                    source: s.source.clone(),
                    start_row: s.start_row,
                    end_row: s.end_row,
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub downsample_factor: usize,
    /// Average each decimation window instead of keeping its first row.
    pub average: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            downsample_factor: 20,
            average: false,
        }
    }
}

/// One line of the provenance log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub source: String,
    pub stage: String,
    pub count: usize,
}

/// Parse-independent part of the chain for one stream: downsample, correct,
/// segment. Appends a record per stage to `log`.
pub fn process_stream(raw: &RawStream, cfg: &IngestConfig, log: &mut Vec<StageRecord>) -> Result<Vec<Segment>> {
    let mut record = |stage: &str, count: usize| {
        log.push(StageRecord {
            source: raw.source.clone(),
            stage: stage.into(),
            count,
        })
    };
    record("parse.rows", raw.len());
    let down = if cfg.average {
        downsample_mean(raw, cfg.downsample_factor)?
    } else {
        downsample(raw, cfg.downsample_factor)?
    };
    record("downsample.rows", down.len());
    let corrected = baseline_correct(&down)?;
    record("baseline_correct.rows", corrected.len());
    let segments = segment(&corrected)?;
    record("segment.count", segments.len());
    Ok(segments)
}

/// Runs [`process_stream`] over every stream of one gas group and normalises
/// the pooled segments by `maxima`.
pub fn build_graphs(
    streams: &[RawStream],
    cfg: &IngestConfig,
    maxima: GasMaxima,
    log: &mut Vec<StageRecord>,
) -> Result<Vec<SensorGraph>> {
    let Some(first) = streams.first() else {
        return Err(Error::Data("no input streams".into()));
    };
    if let Some(s) = streams.iter().find(|s| s.group() != first.group()) {
        return Err(Error::Data(format!(
            "streams {} and {} belong to different gas groups",
            first.source(),
            s.source()
        )));
    }
    let mut segments = Vec::new();
    for s in streams {
        segments.extend(process_stream(s, cfg, log)?);
    }
    normalize_targets(&segments, maxima)
}

/// Segment counts per composition class.
pub fn composition_counts(graphs: &[SensorGraph]) -> [usize; 3] {
    let mut counts = [0; 3];
    for g in graphs {
        counts[g.composition().index()] += 1;
    }
    counts
}

/// Composition a segment's setpoints imply.
pub fn segment_composition(s: &Segment) -> Option<Composition> {
    Composition::from_presence(s.conc[0] > 0.0, s.conc[1] > 0.0)
}
