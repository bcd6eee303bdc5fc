use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A multichannel sensor stream with one terminal label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub sample_rate_hz: f64,
    pub channels: Vec<String>,
    /// One row of `channels.len()` values per time step.
    pub samples: Vec<Vec<f32>>,
    pub labels: Vec<String>,
}

const RATE_KEY: &str = "# sample_rate_hz=";

impl RawRecording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Uniform row width, one label per row, positive rate, and (if given)
    /// labels drawn from `vocabulary`.
    pub fn validate(&self, vocabulary: Option<&[String]>) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::Data("recording has no channels".into()));
        }
        if self.labels.len() != self.samples.len() {
            return Err(Error::Data(format!(
                "{} sample rows but {} labels",
                self.samples.len(),
                self.labels.len()
            )));
        }
        for (i, row) in self.samples.iter().enumerate() {
            if row.len() != self.channels.len() {
                return Err(Error::Data(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    self.channels.len()
                )));
            }
        }
        if let Some(vocab) = vocabulary {
            if let Some((i, l)) = self
                .labels
                .iter()
                .enumerate()
                .find(|(_, l)| !vocab.contains(l))
            {
                return Err(Error::Data(format!(
                    "row {i}: label `{l}` is not in the declared vocabulary"
                )));
            }
        }
        Ok(())
    }

    /// CSV text: a `# sample_rate_hz=<rate>` line, a header naming the channels
    /// followed by `label`, then one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Data(format!("writing csv: {e}"));
        writeln!(out, "{RATE_KEY}{}", self.sample_rate_hz).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Data(format!("writing csv: {e}"));
        let mut header = self.channels.clone();
        header.push("label".into());
        w.write_record(&header).map_err(csv_err)?;
        for (row, label) in self.samples.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.clone());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut first = String::new();
        reader
            .read_line(&mut first)
            .map_err(|e| Error::Data(format!("reading csv: {e}")))?;
        let rate: f64 = first
            .trim()
            .strip_prefix(RATE_KEY)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| {
                Error::Data(format!("first line must be `{RATE_KEY}<rate>`, got `{}`", first.trim()))
            })?;

        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Data(format!("csv header: {e}")))?
            .clone();
        let label_col = header
            .iter()
            .position(|h| h == "label")
            .ok_or_else(|| Error::Data("csv header has no `label` column".into()))?;
        let channels: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_col)
            .map(|(_, h)| h.to_string())
            .collect();

        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("csv row {}: {e}", i + 1)))?;
            if rec.len() != header.len() {
                return Err(Error::Data(format!(
                    "csv row {}: {} fields, header has {}",
                    i + 1,
                    rec.len(),
                    header.len()
                )));
            }
            let mut row = Vec::with_capacity(channels.len());
            for (j, field) in rec.iter().enumerate() {
                if j == label_col {
                    labels.push(field.to_string());
                } else {
                    let v: f32 = field.parse().map_err(|_| {
                        Error::Data(format!("csv row {}: `{field}` is not a number", i + 1))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Data(format!("csv row {}: non-finite value", i + 1)));
                    }
                    row.push(v);
                }
            }
            samples.push(row);
        }
        let rec = Self {
            sample_rate_hz: rate,
            channels,
            samples,
            labels,
        };
        rec.validate(None)?;
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }
}
