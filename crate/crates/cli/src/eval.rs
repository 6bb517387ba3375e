//! Regime × (test set, fine-tune) Dice matrix and its text rendering.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cardiogen::segmentation::DiceReport;
use cardiogen::{Error, Result};
use serde::{Deserialize, Serialize};

/// Checkpoint reference that predicts the ground truth itself.
pub const TRUTH: &str = "truth";
pub const NO_FINETUNE: &str = "none";

/// Requested cells. Rows are training regimes; columns pair a test set with
/// a fine-tune variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub regimes: Vec<String>,
    pub testsets: Vec<String>,
    #[serde(default = "default_finetunes")]
    pub finetunes: Vec<String>,
    /// Which checkpoint fills a (regime, fine-tune) pair; the same model is
    /// scored on every test set.
    #[serde(default, rename = "cell")]
    pub cells: Vec<GridCell>,
}

fn default_finetunes() -> Vec<String> {
    vec![NO_FINETUNE.to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub regime: String,
    #[serde(default = "no_finetune")]
    pub finetune: String,
    pub checkpoint: String,
}

fn no_finetune() -> String {
    NO_FINETUNE.to_string()
}

impl Grid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, format!("cannot read grid: {e}")))?;
        let grid: Grid = toml::from_str(&text).map_err(|e| Error::file(path, format!("bad grid: {}", e.message())))?;
        grid.validate()?;
        Ok(grid)
    }

    /// One row per checkpoint, no fine-tune variants.
    pub fn per_checkpoint(checkpoints: &[String], testsets: &[String]) -> Self {
        Self {
            regimes: checkpoints.to_vec(),
            testsets: testsets.to_vec(),
            finetunes: default_finetunes(),
            cells: checkpoints
                .iter()
                .map(|c| GridCell {
                    regime: c.clone(),
                    finetune: no_finetune(),
                    checkpoint: c.clone(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() || self.testsets.is_empty() || self.finetunes.is_empty() {
            return Err(Error::invalid("grid needs at least one regime, test set and fine-tune variant"));
        }
        for c in &self.cells {
            if !self.regimes.contains(&c.regime) || !self.finetunes.contains(&c.finetune) {
                return Err(Error::invalid(format!(
                    "grid cell ({}, {}) is outside the declared regimes/fine-tunes",
                    c.regime, c.finetune
                )));
            }
        }
        Ok(())
    }

    pub fn checkpoint_for(&self, regime: &str, finetune: &str) -> Option<&str> {
        self.cells
            .iter()
            .find(|c| c.regime == regime && c.finetune == finetune)
            .map(|c| c.checkpoint.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub testset: String,
    pub finetune: String,
}

impl Column {
    pub fn label(&self) -> String {
        if self.finetune == NO_FINETUNE {
            self.testset.clone()
        } else {
            format!("{} +{}", self.testset, self.finetune)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub regime: String,
    pub column: usize,
    pub checkpoint: String,
    /// Scored by predicting the labels themselves: a reference row.
    pub ground_truth: bool,
    /// Resolved checkpoint file; absent for the ground-truth predictor.
    pub checkpoint_path: Option<PathBuf>,
    /// Training seed recorded in the checkpoint.
    pub seed: Option<u64>,
    pub testset_path: PathBuf,
    pub report: DiceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub regime: String,
    pub column: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub regimes: Vec<String>,
    pub columns: Vec<Column>,
    pub cells: Vec<Cell>,
    pub holes: Vec<Hole>,
}

impl EvalMatrix {
    pub fn columns_of(grid: &Grid) -> Vec<Column> {
        grid.testsets
            .iter()
            .flat_map(|t| {
                grid.finetunes.iter().map(|f| Column {
                    testset: t.clone(),
                    finetune: f.clone(),
                })
            })
            .collect()
    }

    pub fn cell(&self, regime: &str, column: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.regime == regime && c.column == column)
    }
}

/// Mean Dice per cell, best learned entry per column in bold. The
/// ground-truth row is a reference and never competes for bold.
pub fn render_table(m: &EvalMatrix) -> String {
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for c in m.cells.iter().filter(|c| !c.ground_truth) {
        let b = best.entry(c.column).or_insert(f64::NEG_INFINITY);
        *b = b.max(c.report.mean);
    }
    let mut rows = vec![std::iter::once("regime".to_string()).chain(m.columns.iter().map(Column::label)).collect::<Vec<_>>()];
    for r in &m.regimes {
        let mut row = vec![r.clone()];
        for j in 0..m.columns.len() {
            row.push(match m.cell(r, j) {
                Some(c) if !c.ground_truth && best.get(&j) == Some(&c.report.mean) => {
                    format!("**{:.3}**", c.report.mean)
                }
                Some(c) => format!("{:.3}", c.report.mean),
                None => "(hole)".to_string(),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len()).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
    let line = |r: &[String]| {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, &w)| format!("{s:<w$}")).collect();
        format!("| {} |\n", cells.join(" | "))
    };
    let mut out = line(&rows[0]);
    out.push_str(&format!("|{}|\n", widths.iter().map(|&w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")));
    for r in &rows[1..] {
        out.push_str(&line(r));
    }
    if !m.holes.is_empty() {
        out.push_str("\nholes:\n");
        for h in &m.holes {
            out.push_str(&format!("- {} / {}: {}\n", h.regime, m.columns[h.column].label(), h.reason));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cardiogen::segmentation::{EmptyRule, FinetuneTag, PerClass, PerClassCount};

    fn report(mean: f64) -> DiceReport {
        DiceReport {
            regime: None,
            test_split: None,
            finetune: FinetuneTag::default(),
            per_class: PerClass::default(),
            mean,
            n_slices: 1,
            seed: None,
            empty_rule: EmptyRule::Exclude,
            excluded: PerClassCount::default(),
        }
    }

    fn cell(regime: &str, column: usize, checkpoint: &str, mean: f64) -> Cell {
        Cell {
            regime: regime.into(),
            column,
            checkpoint: checkpoint.into(),
            ground_truth: checkpoint == TRUTH,
            checkpoint_path: None,
            seed: None,
            testset_path: PathBuf::new(),
            report: report(mean),
        }
    }

    #[test]
    fn best_learned_entry_bolded_and_holes_marked() {
        let m = EvalMatrix {
            regimes: vec!["gt".into(), "real".into(), "synthetic".into()],
            columns: vec![
                Column { testset: "A".into(), finetune: "none".into() },
                Column { testset: "B".into(), finetune: "none".into() },
            ],
            cells: vec![
                cell("gt", 0, TRUTH, 1.0),
                cell("gt", 1, TRUTH, 1.0),
                cell("real", 0, "r", 0.81),
                cell("synthetic", 0, "s", 0.85),
                cell("real", 1, "r", 0.7),
            ],
            holes: vec![Hole { regime: "synthetic".into(), column: 1, reason: "no checkpoint".into() }],
        };
        let t = render_table(&m);
        assert!(t.contains("**0.850**") && t.contains("**0.700**"), "{t}");
        assert!(t.contains(" 0.810 ") && t.contains(" 1.000 "), "{t}");
        assert!(!t.contains("**1.000**"));
        assert!(t.contains("(hole)") && t.contains("synthetic / B: no checkpoint"));
    }

    #[test]
    fn grid_cells_must_use_declared_rows() {
        let g: Grid = toml::from_str(
            "regimes = [\"real\"]\ntestsets = [\"A\"]\n[[cell]]\nregime = \"synthetic\"\ncheckpoint = \"s\"\n",
        )
        .unwrap();
        assert!(g.validate().is_err());
        let g = Grid::per_checkpoint(&["a".into(), "b".into()], &["T".into()]);
        g.validate().unwrap();
        assert_eq!(g.checkpoint_for("b", NO_FINETUNE), Some("b"));
        assert_eq!(EvalMatrix::columns_of(&g).len(), 1);
    }
}
