use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{check_dim, Error, Result};
use crate::kv::KvBlock;

/// Row-major table of equally sized real rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rows {
    data: Vec<f64>,
    width: usize,
    len: usize,
}

impl Rows {
    pub fn with_width(width: usize) -> Self {
        Rows { data: Vec::new(), width, len: 0 }
    }

    pub fn from_vecs(width: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut out = Rows::with_width(width);
        for r in rows {
            check_dim("row width", width, r.len())?;
            out.push(r);
        }
        Ok(out)
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.width, "row width mismatch");
        self.data.extend_from_slice(row);
        self.len += 1;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.len).map(move |k| self.row(k))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.iter().map(|r| r[j]).collect()
    }

    /// Population standard deviation of each column.
    pub fn column_std(&self) -> Vec<f64> {
        (0..self.width)
            .map(|j| {
                let col = self.column(j);
                let n = col.len().max(1) as f64;
                let mean = col.iter().sum::<f64>() / n;
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Rows {
        let n = n.min(self.len);
        Rows {
            data: self.data[..n * self.width].to_vec(),
            width: self.width,
            len: n,
        }
    }
}

/// Maps the measured state history to the feedback vector the controller sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    State,
    /// `(y_t, y_{t-1})` built from state component `output`, with `y_{-1} = 0`.
    DelayedOutput { output: usize },
}

impl Regressor {
    pub fn dim(&self, n_state: usize) -> usize {
        match self {
            Regressor::State => n_state,
            Regressor::DelayedOutput { .. } => 2,
        }
    }

    pub fn apply(&self, current: &[f64], previous: Option<&[f64]>) -> Vec<f64> {
        match *self {
            Regressor::State => current.to_vec(),
            Regressor::DelayedOutput { output } => vec![current[output], previous.map_or(0.0, |p| p[output])],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "state" {
            return Ok(Regressor::State);
        }
        if let Some(rest) = s.strip_prefix("delayed-output:") {
            let output = rest
                .trim()
                .parse()
                .map_err(|_| Error::parse("regressor", format!("bad output index in {s:?}")))?;
            return Ok(Regressor::DelayedOutput { output });
        }
        Err(Error::parse("regressor", format!("unknown regressor {s:?}")))
    }
}

impl fmt::Display for Regressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regressor::State => write!(f, "state"),
            Regressor::DelayedOutput { output } => write!(f, "delayed-output:{output}"),
        }
    }
}

/// Maps the feedback vector to the scheduling parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchedulingMap {
    Identity,
    /// `p = x_1^2`.
    FirstSquared,
    /// Selected components of the feedback vector.
    Select(Vec<usize>),
}

impl SchedulingMap {
    pub fn dim(&self, n_x: usize) -> usize {
        match self {
            SchedulingMap::Identity => n_x,
            SchedulingMap::FirstSquared => 1,
            SchedulingMap::Select(idx) => idx.len(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SchedulingMap::Identity => x.to_vec(),
            SchedulingMap::FirstSquared => vec![x[0] * x[0]],
            SchedulingMap::Select(idx) => idx.iter().map(|&i| x[i]).collect(),
        }
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        if let SchedulingMap::Select(idx) = self {
            if idx.is_empty() || idx.iter().any(|&i| i >= n_x) {
                return Err(Error::invalid(format!("scheduling selection {idx:?} out of range for {n_x} states")));
            }
        }
        Ok(())
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(SchedulingMap::Identity),
            "first-squared" => Ok(SchedulingMap::FirstSquared),
            _ => {
                let rest = s
                    .strip_prefix("select:")
                    .ok_or_else(|| Error::parse("scheduling map", format!("unknown map {s:?}")))?;
                let idx = rest
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::parse("scheduling map", format!("bad index list in {s:?}")))?;
                Ok(SchedulingMap::Select(idx))
            }
        }
    }
}

impl fmt::Display for SchedulingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulingMap::Identity => write!(f, "identity"),
            SchedulingMap::FirstSquared => write!(f, "first-squared"),
            SchedulingMap::Select(idx) => {
                let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
                write!(f, "select:{}", parts.join(","))
            }
        }
    }
}

/// Measured design data: `L` scheduling rows, `L + 1` feedback-vector rows and `L` input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LpvDataset {
    pub ts: f64,
    pub p: Rows,
    pub x: Rows,
    pub u: Rows,
    pub regressor: Regressor,
    pub scheduling: SchedulingMap,
    /// Free-form provenance (seeds, noise, plant) carried into the sidecar.
    pub metadata: KvBlock,
}

impl LpvDataset {
    pub fn new(ts: f64, p: Rows, x: Rows, u: Rows, regressor: Regressor, scheduling: SchedulingMap) -> Result<Self> {
        let ds = LpvDataset {
            ts,
            p,
            x,
            u,
            regressor,
            scheduling,
            metadata: KvBlock::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset from a feedback-vector sequence of length `L + 1`, deriving `p` through
    /// the scheduling map.
    pub fn from_states(ts: f64, x: Rows, u: Rows, scheduling: SchedulingMap) -> Result<Self> {
        scheduling.validate(x.width())?;
        let mut p = Rows::with_width(scheduling.dim(x.width()));
        for k in 0..x.len().saturating_sub(1) {
            p.push(&scheduling.apply(x.row(k)));
        }
        LpvDataset::new(ts, p, x, u, Regressor::State, scheduling)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.p.len();
        if l < 2 {
            return Err(Error::invalid(format!("dataset needs L >= 2, got {l}")));
        }
        if !(self.ts > 0.0) {
            return Err(Error::invalid("sampling period must be positive"));
        }
        check_dim("dataset state rows (L + 1)", l + 1, self.x.len())?;
        check_dim("dataset input rows", l, self.u.len())?;
        if self.p.width() == 0 || self.x.width() == 0 || self.u.width() == 0 {
            return Err(Error::invalid("dataset columns must be nonempty"));
        }
        if !(self.p.all_finite() && self.x.all_finite() && self.u.all_finite()) {
            return Err(Error::invalid("dataset entries must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn n_p(&self) -> usize {
        self.p.width()
    }

    pub fn n_x(&self) -> usize {
        self.x.width()
    }

    pub fn n_u(&self) -> usize {
        self.u.width()
    }

    /// Copy keeping only input channel `j`.
    pub fn channel(&self, j: usize) -> Result<LpvDataset> {
        if j >= self.n_u() {
            return Err(Error::invalid(format!("input channel {j} out of range")));
        }
        let mut u = Rows::with_width(1);
        for r in self.u.iter() {
            u.push(&[r[j]]);
        }
        Ok(LpvDataset { u, ..self.clone() })
    }

    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        let mut s = csv_path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn sidecar(&self) -> KvBlock {
        let mut kv = KvBlock::new();
        kv.push("ts", self.ts)
            .push("length", self.len())
            .push("n_p", self.n_p())
            .push("n_x", self.n_x())
            .push("n_u", self.n_u())
            .push("regressor", self.regressor)
            .push("scheduling", &self.scheduling)
            .extend_prefixed("meta.", &self.metadata);
        kv
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.n_p()).map(|i| format!("p_{i}")));
        header.extend((1..=self.n_x()).map(|i| format!("x_{i}")));
        header.extend((1..=self.n_u()).map(|i| format!("u_{i}")));
        w.write_record(&header).map_err(csv_err)?;

        let l = self.len();
        for k in 0..=l {
            let mut rec = vec![k.to_string()];
            if k < l {
                rec.extend(self.p.row(k).iter().map(f64::to_string));
                rec.extend(self.x.row(k).iter().map(f64::to_string));
                rec.extend(self.u.row(k).iter().map(f64::to_string));
            } else {
                rec.extend(std::iter::repeat(String::new()).take(self.n_p()));
                rec.extend(self.x.row(k).iter().map(f64::to_string));
                rec.extend(std::iter::repeat(String::new()).take(self.n_u()));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::parse("dataset csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes the CSV file and its `.meta` sidecar.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv_string()?).map_err(|e| Error::io(csv_path, e))?;
        let side = Self::sidecar_path(csv_path);
        fs::write(&side, self.sidecar().to_string()).map_err(|e| Error::io(&side, e))
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let csv_text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let side = Self::sidecar_path(csv_path);
        let side_text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Self::from_text(&csv_text, &KvBlock::parse(&side_text)?)
    }

    pub fn from_text(csv_text: &str, sidecar: &KvBlock) -> Result<Self> {
        let ts: f64 = sidecar.parse_value("ts")?;
        let l: usize = sidecar.parse_value("length")?;
        let (n_p, n_x, n_u): (usize, usize, usize) =
            (sidecar.parse_value("n_p")?, sidecar.parse_value("n_x")?, sidecar.parse_value("n_u")?);
        let regressor = Regressor::parse(sidecar.require("regressor")?)?;
        let scheduling = SchedulingMap::parse(sidecar.require("scheduling")?)?;

        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let header = reader.headers().map_err(csv_err)?;
        check_dim("dataset csv columns", 1 + n_p + n_x + n_u, header.len())?;

        let mut p = Rows::with_width(n_p);
        let mut x = Rows::with_width(n_x);
        let mut u = Rows::with_width(n_u);
        for (k, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse("dataset csv", format!("row {k}, column {i}: {:?}", &rec[i])))
            };
            let read = |range: std::ops::Range<usize>| range.map(field).collect::<Result<Vec<f64>>>();
            x.push(&read(1 + n_p..1 + n_p + n_x)?);
            if k < l {
                p.push(&read(1..1 + n_p)?);
                u.push(&read(1 + n_p + n_x..1 + n_p + n_x + n_u)?);
            }
        }

        let mut ds = LpvDataset::new(ts, p, x, u, regressor, scheduling)?;
        ds.metadata = sidecar.strip_prefix("meta.");
        Ok(ds)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse("dataset csv", e.to_string())
}
