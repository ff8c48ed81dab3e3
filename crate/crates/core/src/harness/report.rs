//! Report store: append-only JSONL, one header record plus one record per
//! experiment cell, and a human-readable summary table.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportHeader {
    pub record: String,
    pub fingerprint: String,
    pub tool_version: String,
}

impl ReportHeader {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Self {
            record: "header".into(),
            fingerprint: fingerprint.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// One experiment cell. Which metric fields are set depends on the cell
/// family; unset fields are omitted from the serialized record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellRecord {
    pub record: String,
    pub key: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_clock_secs: Scalar,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_queries: Option<usize>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_f1: Option<Vec<Scalar>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_change: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_mean: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_std: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tpr: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fpr: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_success_rate: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_pre_mean: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_post_mean: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_pairs_post_greater: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppl_pairs_post_less: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_test_p: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_rate_watermarked: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_rate_clean: Option<Scalar>,
}

impl CellRecord {
    pub fn new(key: impl Into<String>) -> Self {
        Self {
            record: "cell".into(),
            key: key.into(),
            status: "ok".into(),
            error: None,
            wall_clock_secs: 0.0,
            scenario: None,
            scheme: None,
            attack: None,
            model: None,
            seed: None,
            train_size: None,
            num_queries: None,
            macro_f1: None,
            per_class_f1: None,
            f1_change: None,
            ppl_mean: None,
            ppl_std: None,
            tpr: None,
            fpr: None,
            attack_success_rate: None,
            ppl_pre_mean: None,
            ppl_post_mean: None,
            ppl_pairs: None,
            ppl_pairs_post_greater: None,
            ppl_pairs_post_less: None,
            sign_test_p: None,
            flag_rate_watermarked: None,
            flag_rate_clean: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Serialized writer; each cell record is flushed as its own line so a
/// crashed run can resume from everything already written.
pub struct ReportWriter {
    out: BufWriter<File>,
}

impl ReportWriter {
    pub fn create(path: &Path, fingerprint: &str) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
        };
        w.write_line(&ReportHeader::new(fingerprint))?;
        Ok(w)
    }

    pub fn append(&mut self, cell: &CellRecord) -> Result<()> {
        self.write_line(cell)
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub struct LoadedReport {
    pub header: ReportHeader,
    pub cells: Vec<CellRecord>,
}

impl LoadedReport {
    pub fn cell_map(&self) -> HashMap<String, CellRecord> {
        self.cells.iter().map(|c| (c.key.clone(), c.clone())).collect()
    }
}

/// Reads a report back. A malformed trailing line (interrupted write) is
/// tolerated and truncated; malformed interior lines are errors.
pub fn load_report(path: &Path) -> Result<LoadedReport> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty report", path.display())))??;
    let header: ReportHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::InvalidInput(format!("{}: bad header: {e}", path.display())))?;
    if header.record != "header" {
        return Err(Error::InvalidInput(format!(
            "{}: first record is {:?}, expected header",
            path.display(),
            header.record
        )));
    }
    let mut cells = Vec::new();
    let mut pending_error: Option<String> = None;
    for line in lines {
        let line = line?;
        if let Some(bad) = pending_error.take() {
            return Err(Error::InvalidInput(format!(
                "{}: malformed interior record: {bad}",
                path.display()
            )));
        }
        match serde_json::from_str::<CellRecord>(&line) {
            Ok(c) => cells.push(c),
            Err(_) => pending_error = Some(line),
        }
    }
    Ok(LoadedReport { header, cells })
}

/// Fixed-width human-readable summary, one row per cell.
pub fn summary_table(cells: &[CellRecord]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<34} {:>6}  {}\n",
        "cell", "status", "headline"
    ));
    for c in cells {
        let headline = if let Some(e) = &c.error {
            format!("error: {e}")
        } else if let Some(f1) = c.macro_f1 {
            match c.f1_change {
                Some(d) => format!("macro_f1 {f1:.4}  f1_change {d:+.4}"),
                None => format!("macro_f1 {f1:.4}"),
            }
        } else if let (Some(t), Some(f)) = (c.tpr, c.fpr) {
            format!("tpr {t:.4}  fpr {f:.4}")
        } else if let Some(p) = c.ppl_mean {
            format!("ppl {p:.3} ± {:.3}", c.ppl_std.unwrap_or(0.0))
        } else if let Some(s) = c.attack_success_rate {
            format!(
                "success {s:.3}  ppl {:.3} -> {:.3}",
                c.ppl_pre_mean.unwrap_or(Scalar::NAN),
                c.ppl_post_mean.unwrap_or(Scalar::NAN)
            )
        } else if let Some(w) = c.flag_rate_watermarked {
            format!(
                "flag_rate wm {w:.3} vs clean {:.3}",
                c.flag_rate_clean.unwrap_or(Scalar::NAN)
            )
        } else {
            String::new()
        };
        out.push_str(&format!("{:<34} {:>6}  {}\n", c.key, c.status, headline));
    }
    out
}
