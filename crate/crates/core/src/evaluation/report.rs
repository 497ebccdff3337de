//! Plain-text and JSON result tables.

use serde::Serialize;

use super::metrics::ClassificationReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub mean: Option<f64>,
    /// Spread across folds or runs, when aggregated.
    pub std: Option<f64>,
}

impl Cell {
    pub fn value(v: f64) -> Self {
        Self { mean: Some(v), std: None }
    }

    pub fn missing() -> Self {
        Self { mean: None, std: None }
    }

    /// Mean and population standard deviation of the present values.
    pub fn aggregate(values: &[Option<f64>]) -> Self {
        let v: Vec<f64> = values.iter().flatten().copied().collect();
        if v.is_empty() {
            return Self::missing();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean: Some(mean),
            std: (v.len() > 1).then(|| var.sqrt()),
        }
    }

    fn render(&self) -> String {
        match (self.mean, self.std) {
            (None, _) => "n/a".to_string(),
            (Some(m), None) => format!("{m:.3}"),
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

pub const CLASSIFICATION_COLUMNS: [&str; 4] = ["Accuracy", "AUC", "F1", "Precision"];
pub const SEGMENTATION_COLUMNS: [&str; 3] = ["MoF", "IoU", "MoF (balanced)"];

impl Table {
    pub fn new(title: &str, row_header: &str, columns: &[&str]) -> Self {
        Self {
            title: title.to_string(),
            row_header: row_header.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(Row {
            label: label.into(),
            cells,
        });
    }

    /// One row per model; cells aggregate over the given reports (e.g. folds).
    pub fn push_classification(&mut self, label: impl Into<String>, reports: &[ClassificationReport]) {
        let col = |f: fn(&ClassificationReport) -> Option<f64>| {
            Cell::aggregate(&reports.iter().map(f).collect::<Vec<_>>())
        };
        self.push(
            label,
            vec![
                col(|r| Some(r.acc)),
                col(|r| r.auc),
                col(|r| Some(r.f1_macro)),
                col(|r| Some(r.precision_macro)),
            ],
        );
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut grid: Vec<Vec<String>> = vec![std::iter::once(self.row_header.clone())
            .chain(self.columns.iter().cloned())
            .collect()];
        for r in &self.rows {
            grid.push(
                std::iter::once(r.label.clone())
                    .chain(r.cells.iter().map(Cell::render))
                    .collect(),
            );
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
            .collect();
        let line = |row: &[String]| {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, &w))| {
                    let pad = w - c.chars().count();
                    if j == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1));
        let mut out = format!("{}\n{rule}\n{}\n{rule}\n", self.title, line(&grid[0]));
        for row in &grid[1..] {
            out.push_str(&line(row));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_aligned_columns() {
        let mut t = Table::new("SA classification", "Method", &CLASSIFICATION_COLUMNS);
        t.push("Ternary", vec![Cell::value(0.63), Cell::missing(), Cell::value(0.62), Cell::value(0.625)]);
        let text = t.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "SA classification");
        assert!(lines[2].starts_with("Method"));
        assert!(lines[2].ends_with("Precision"));
        assert!(lines[4].contains("0.630"));
        assert!(lines[4].contains("n/a"));
        assert_eq!(lines[2].len(), lines[4].len());
    }

    #[test]
    fn aggregate_mean_std() {
        let c = Cell::aggregate(&[Some(1.0), Some(3.0), None]);
        assert_eq!((c.mean, c.std), (Some(2.0), Some(1.0)));
        assert_eq!(Cell::aggregate(&[Some(0.5)]).std, None);
        assert_eq!(Cell::aggregate(&[None]).mean, None);
    }
}
