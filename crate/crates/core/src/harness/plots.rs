//! Report post-processing: the perplexity-delta table and columnar plot-data
//! files. Everything here reads finished cell records; nothing recomputes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::Scalar;

use super::config::ExperimentConfig;
use super::report::CellRecord;

/// Percent with one decimal, rounded half-up, explicit sign on positives.
pub fn format_percent(relative: Scalar) -> String {
    let tenths = (relative * 1000.0 + 0.5).floor();
    let v = tenths / 10.0;
    if v >= 0.0 {
        format!("+{v:.1}%")
    } else {
        format!("{v:.1}%")
    }
}

#[derive(Clone, Debug)]
pub struct PerplexityRow {
    pub scheme: String,
    pub ppl_mean: Scalar,
    /// Relative change vs. the no-watermark baseline; the baseline row
    /// carries 0.
    pub relative_change: Scalar,
    pub formatted: String,
}

fn ok_cells<'a>(cells: &'a [CellRecord]) -> HashMap<&'a str, &'a CellRecord> {
    cells
        .iter()
        .filter(|c| c.is_ok())
        .map(|c| (c.key.as_str(), c))
        .collect()
}

/// Per-scheme mean perplexity across models with relative change against the
/// no-watermark baseline, presented "value (+x.x%)".
pub fn perplexity_delta_table(
    cfg: &ExperimentConfig,
    cells: &[CellRecord],
) -> Result<Vec<PerplexityRow>> {
    let by_key = ok_cells(cells);
    let mean_over_models = |variant: &str| -> std::result::Result<Scalar, Vec<String>> {
        let mut vals = Vec::new();
        let mut missing = Vec::new();
        for m in &cfg.models {
            let key = format!("ppl/{}/{variant}", m.id);
            match by_key.get(key.as_str()).and_then(|c| c.ppl_mean) {
                Some(p) => vals.push(p),
                None => missing.push(key),
            }
        }
        if missing.is_empty() {
            Ok(crate::num::mean(&vals))
        } else {
            Err(missing)
        }
    };
    let baseline = mean_over_models("nw").map_err(Error::MissingCells)?;
    let mut rows = vec![PerplexityRow {
        scheme: "nw".into(),
        ppl_mean: baseline,
        relative_change: 0.0,
        formatted: format!("{baseline:.2} (+0.0%)"),
    }];
    for s in &cfg.schemes {
        let ppl = mean_over_models(&s.name).map_err(Error::MissingCells)?;
        let rel = (ppl - baseline) / baseline;
        rows.push(PerplexityRow {
            scheme: s.name.clone(),
            ppl_mean: ppl,
            relative_change: rel,
            formatted: format!("{ppl:.2} ({})", format_percent(rel)),
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    F1Bars,
    AttackTradeoff,
    LearningCurve,
    NSweep,
}

impl PlotKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "f1_bars" => Ok(Self::F1Bars),
            "attack_tradeoff" => Ok(Self::AttackTradeoff),
            "learning_curve" => Ok(Self::LearningCurve),
            "n_sweep" => Ok(Self::NSweep),
            other => Err(Error::InvalidParameter(format!(
                "unknown plot kind {other:?}; expected f1_bars, attack_tradeoff, learning_curve, or n_sweep"
            ))),
        }
    }

    pub fn file_name(&self) -> &'static str {
        match self {
            Self::F1Bars => "f1_bars.tsv",
            Self::AttackTradeoff => "attack_tradeoff.tsv",
            Self::LearningCurve => "learning_curve.tsv",
            Self::NSweep => "n_sweep.tsv",
        }
    }
}

/// Writes one columnar file for the requested figure and returns its path.
/// Any required cell that is absent or failed makes the whole emission fail
/// with the full list of missing keys.
pub fn emit_plot_data(
    cfg: &ExperimentConfig,
    cells: &[CellRecord],
    kind: PlotKind,
    out_dir: &Path,
) -> Result<PathBuf> {
    let by_key = ok_cells(cells);
    let mut missing: Vec<String> = Vec::new();
    fn need<'a>(
        by_key: &HashMap<&'a str, &'a CellRecord>,
        missing: &mut Vec<String>,
        key: String,
    ) -> Option<&'a CellRecord> {
        match by_key.get(key.as_str()) {
            Some(c) => Some(c),
            None => {
                missing.push(key);
                None
            }
        }
    }

    let mut body = String::new();
    match kind {
        PlotKind::F1Bars => {
            body.push_str("scheme\tf1_nw\tf1_wm\n");
            let mut rows = Vec::new();
            for s in &cfg.schemes {
                let mut nw = Vec::new();
                let mut wm = Vec::new();
                for &seed in &cfg.seeds {
                    if let Some(c) = need(&by_key, &mut missing, format!("scenario/A/seed{seed}")) {
                        nw.extend(c.macro_f1);
                    }
                    if let Some(c) = need(&by_key, &mut missing, format!("scenario/C/{}/seed{seed}", s.name)) {
                        wm.extend(c.macro_f1);
                    }
                }
                rows.push((s.name.clone(), nw, wm));
            }
            if missing.is_empty() {
                for (name, nw, wm) in rows {
                    body.push_str(&format!(
                        "{name}\t{:.4}\t{:.4}\n",
                        crate::num::mean(&nw),
                        crate::num::mean(&wm)
                    ));
                }
            }
        }
        PlotKind::AttackTradeoff => {
            body.push_str("scheme\tattack\tsuccess_rate\tppl_pre\tppl_post\n");
            for s in &cfg.schemes {
                for a in &cfg.attacks {
                    if let Some(c) = need(&by_key, &mut missing, format!("attack/{}/{}", s.name, a.name)) {
                        body.push_str(&format!(
                            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                            s.name,
                            a.name,
                            c.attack_success_rate.unwrap_or(Scalar::NAN),
                            c.ppl_pre_mean.unwrap_or(Scalar::NAN),
                            c.ppl_post_mean.unwrap_or(Scalar::NAN),
                        ));
                    }
                }
            }
        }
        PlotKind::LearningCurve => {
            body.push_str("train_size\tmacro_f1\n");
            for &size in &cfg.dataset.learning_curve_sizes {
                let mut vals = Vec::new();
                for &seed in &cfg.seeds {
                    if let Some(c) = need(&by_key, &mut missing, format!("curve/seed{seed}/size{size}")) {
                        vals.extend(c.macro_f1);
                    }
                }
                if missing.is_empty() {
                    body.push_str(&format!("{size}\t{:.4}\n", crate::num::mean(&vals)));
                }
            }
        }
        PlotKind::NSweep => {
            let st = cfg.stealing.as_ref().ok_or_else(|| {
                Error::Config("n_sweep needs a [stealing] section".into())
            })?;
            body.push_str("scheme\tnum_queries\tflag_rate_watermarked\tflag_rate_clean\n");
            for s in &cfg.schemes {
                for &n in &st.query_counts {
                    if let Some(c) = need(&by_key, &mut missing, format!("steal/{}/n{n}", s.name)) {
                        body.push_str(&format!(
                            "{}\t{n}\t{:.4}\t{:.4}\n",
                            s.name,
                            c.flag_rate_watermarked.unwrap_or(Scalar::NAN),
                            c.flag_rate_clean.unwrap_or(Scalar::NAN),
                        ));
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::MissingCells(missing));
    }
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(kind.file_name());
    std::fs::write(&path, body)?;
    Ok(path)
}
