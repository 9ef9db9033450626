//! CSV and JSON writers.  Every CSV starts with a comment line naming the code version
//! and the SHA-256 of the configuration that produced it.

use qsmooth::costs::{CostId, EstimatorId};
use qsmooth::pipeline::CostTable;
use qsmooth::{BlochYZ, CdjSolution, CostReport, EffectTable, Params, ThetaPdf};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub fn config_hash(params: &Params) -> String {
    let json = serde_json::to_string(params).expect("params serialize");
    Sha256::digest(json.as_bytes()).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(params: &Params, columns: &[&str]) -> Self {
        let text = format!("# qsmooth {} config-sha256={}\n{}\n", env!("CARGO_PKG_VERSION"), config_hash(params), columns.join(","));
        Self { text }
    }

    pub fn row<I: IntoIterator<Item = Cell>>(&mut self, cells: I) {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push(',');
            }
            first = false;
            match c {
                Cell::Num(x) if x.is_finite() => {
                    let _ = write!(self.text, "{x}");
                }
                Cell::Num(_) => self.text.push_str("NA"),
                Cell::Text(s) => self.text.push_str(&s),
            }
        }
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, &self.text)
    }
}

pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

/// t, y, z, theta, R, with an optional record column.
pub fn trajectory(params: &Params, times: &[f64], states: &[BlochYZ], record: Option<&[f64]>) -> Csv {
    let mut cols = vec!["t", "y", "z", "theta", "R"];
    if record.is_some() {
        cols.push("u");
    }
    let mut csv = Csv::new(params, &cols);
    for (k, (t, s)) in times.iter().zip(states).enumerate() {
        let mut cells: Vec<Cell> = vec![(*t).into(), s.y.into(), s.z.into(), s.theta().into(), s.radius().into()];
        if let Some(r) = record {
            cells.push(r.get(k).copied().unwrap_or(f64::NAN).into());
        }
        csv.row(cells);
    }
    csv
}

pub fn effects(params: &Params, table: &EffectTable) -> Csv {
    let mut csv = Csv::new(params, &["t", "alpha", "beta", "zeta", "log_scale"]);
    for (k, (e, ls)) in table.effects.iter().zip(&table.log_scale).enumerate() {
        csv.row([(k as f64 * table.dt).into(), e.alpha.into(), e.beta.into(), e.zeta.into(), (*ls).into()]);
    }
    csv
}

pub fn pdf(params: &Params, pdf: &ThetaPdf) -> Csv {
    let mut csv = Csv::new(params, &["theta", "value"]);
    for (i, v) in pdf.values.iter().enumerate() {
        csv.row([pdf.theta(i).into(), (*v).into()]);
    }
    csv
}

/// Optimal path with its costate and record, plus a JSON sidecar.
pub fn cdj(params: &Params, sol: &CdjSolution, n_roots: usize) -> (Csv, serde_json::Value) {
    let mut csv = Csv::new(params, &["t", "theta", "p", "u"]);
    for (k, (th, p)) in sol.thetas.iter().zip(&sol.ps).enumerate() {
        let u = sol.us.values.get(k).copied().unwrap_or(f64::NAN);
        csv.row([(k as f64 * params.dt).into(), th.theta().into(), (*p).into(), u.into()]);
    }
    let meta = serde_json::json!({
        "score": sol.score,
        "residual": sol.residual,
        "n_roots": n_roots,
        "divergent": sol.divergent,
        "config_sha256": config_hash(params),
    });
    (csv, meta)
}

pub const COST_COLUMNS: [CostId; 5] = [CostId::C1, CostId::C2, CostId::C3, CostId::C67, CostId::C8];

/// Per-time costs of one estimator; NA where a cost does not apply.
pub fn per_time_costs(params: &Params, report: &CostReport, only: Option<CostId>) -> Csv {
    let cols: Vec<CostId> = COST_COLUMNS.into_iter().filter(|c| only.is_none_or(|o| o == *c)).collect();
    let mut names = vec!["t"];
    names.extend(cols.iter().map(|c| c.name()));
    let mut csv = Csv::new(params, &names);
    for (k, t) in report.times.iter().enumerate() {
        let mut cells: Vec<Cell> = vec![(*t).into()];
        for c in &cols {
            cells.push(report.per_time.get(c.name()).map_or(f64::NAN, |v| v[k]).into());
        }
        csv.row(cells);
    }
    csv
}

/// Cost × estimator matrix with the row minimum named and flagged.
pub fn table(params: &Params, table: &CostTable<f64>) -> Csv {
    let mut names = vec!["cost"];
    let col_names: Vec<String> = table.cols.iter().map(|e| if *e == EstimatorId::Q6 { "q6_q7".into() } else { e.name().to_string() }).collect();
    names.extend(col_names.iter().map(String::as_str));
    names.extend(["min", "flags"]);
    let mut csv = Csv::new(params, &names);
    for (i, row) in table.values.iter().enumerate() {
        let cost = table.rows[i];
        let mut cells: Vec<Cell> = vec![cost.name().into()];
        cells.extend(row.iter().map(|v| v.map_or(Cell::Text("NA".into()), Cell::Num)));
        let min = table.row_minimum(i);
        cells.push(min.map_or(Cell::Text("NA".into()), |j| Cell::Text(col_names[j].clone())));
        let on_diag = min.map(|j| table.cols[j]) == Some(cost.optimal_estimator());
        cells.push(Cell::Text(if on_diag { "min-on-diagonal".into() } else { "min-off-diagonal".into() }));
        csv.row(cells);
    }
    csv
}
