//! Spot datasets and their on-disk layout.
//!
//! A dataset directory holds
//!
//! * `spots.csv`: header `spot_id,x,y,<gene>...`, one row per spot;
//! * `tokens.bin`: row-major little-endian `f64`, with `tokens.meta` beside it;
//! * optionally `transcriptomic.bin` / `transcriptomic.meta` in the same format.
//!
//! A `.meta` sidecar is three `key=value` lines: `dtype=f64le`, `rows=N`, `cols=D`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{HexstError, Result};
use crate::hexgeom::CartesianPoint;
use crate::numerics::Tensor;

pub const SPOTS_FILE: &str = "spots.csv";
pub const TOKENS_FILE: &str = "tokens.bin";
pub const TRANSCRIPTOMIC_FILE: &str = "transcriptomic.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct SpotDataset {
    pub spot_ids: Vec<String>,
    pub coords: Vec<CartesianPoint>,
    pub genes: Vec<String>,
    pub tokens: Tensor,
    pub expression: Tensor,
    pub transcriptomic: Option<Tensor>,
}

impl SpotDataset {
    pub fn new(
        spot_ids: Vec<String>,
        coords: Vec<CartesianPoint>,
        genes: Vec<String>,
        tokens: Tensor,
        expression: Tensor,
        transcriptomic: Option<Tensor>,
    ) -> Result<Self> {
        let n = coords.len();
        let rows_ok = |t: &Tensor| t.shape().len() == 2 && t.rows() == n;
        if spot_ids.len() != n || !rows_ok(&tokens) || !rows_ok(&expression) {
            return Err(HexstError::Structural(format!(
                "row counts disagree: {} ids, {n} coords, tokens {:?}, expression {:?}",
                spot_ids.len(),
                tokens.shape(),
                expression.shape()
            )));
        }
        if expression.cols() != genes.len() {
            return Err(HexstError::Structural(format!(
                "{} gene names for {} expression columns",
                genes.len(),
                expression.cols()
            )));
        }
        if let Some(t) = &transcriptomic {
            if !rows_ok(t) {
                return Err(HexstError::Structural(format!(
                    "transcriptomic embedding {:?} for {n} spots",
                    t.shape()
                )));
            }
        }
        Ok(SpotDataset {
            spot_ids,
            coords,
            genes,
            tokens,
            expression,
            transcriptomic,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn gene_count(&self) -> usize {
        self.genes.len()
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.cols()
    }

    /// Same dataset with every coordinate moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> SpotDataset {
        SpotDataset {
            coords: self.coords.iter().map(|p| p.offset(dx, dy)).collect(),
            ..self.clone()
        }
    }

    /// Keeps the first `n` spots.
    pub fn truncated(&self, n: usize) -> SpotDataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        SpotDataset {
            spot_ids: self.spot_ids[..n].to_vec(),
            coords: self.coords[..n].to_vec(),
            genes: self.genes.clone(),
            tokens: self.tokens.select_rows(&idx),
            expression: self.expression.select_rows(&idx),
            transcriptomic: self.transcriptomic.as_ref().map(|t| t.select_rows(&idx)),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| HexstError::io(dir, e))?;
        write_spot_table(&dir.join(SPOTS_FILE), &self.spot_ids, &self.coords, &self.genes, &self.expression)?;
        write_matrix(&dir.join(TOKENS_FILE), &self.tokens)?;
        let tpath = dir.join(TRANSCRIPTOMIC_FILE);
        match &self.transcriptomic {
            Some(t) => write_matrix(&tpath, t)?,
            None => {
                for p in [tpath.clone(), meta_path(&tpath)] {
                    if p.exists() {
                        fs::remove_file(&p).map_err(|e| HexstError::io(&p, e))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<SpotDataset> {
        let table = read_spot_table(&dir.join(SPOTS_FILE))?;
        let tokens = read_matrix(&dir.join(TOKENS_FILE))?;
        let tpath = dir.join(TRANSCRIPTOMIC_FILE);
        let transcriptomic = if tpath.exists() {
            Some(read_matrix(&tpath)?)
        } else {
            None
        };
        SpotDataset::new(table.spot_ids, table.coords, table.genes, tokens, table.values, transcriptomic)
            .map_err(|e| HexstError::format(dir, e.to_string()))
    }
}

/// Parsed `spot_id,x,y,<gene>...` table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotTable {
    pub spot_ids: Vec<String>,
    pub coords: Vec<CartesianPoint>,
    pub genes: Vec<String>,
    pub values: Tensor,
}

pub fn write_spot_table(
    path: &Path,
    spot_ids: &[String],
    coords: &[CartesianPoint],
    genes: &[String],
    values: &Tensor,
) -> Result<()> {
    let io = |e: csv::Error| HexstError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => HexstError::io(path, e),
        other => HexstError::format(path, format!("{other:?}")),
    })?;
    let mut header = vec!["spot_id".to_string(), "x".into(), "y".into()];
    header.extend(genes.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (i, id) in spot_ids.iter().enumerate() {
        let mut rec = vec![id.clone(), coords[i].x.to_string(), coords[i].y.to_string()];
        rec.extend(values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| HexstError::io(path, e))
}

pub fn read_spot_table(path: &Path) -> Result<SpotTable> {
    let bad = |m: String| HexstError::format(path, m);
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(e) => HexstError::io(path, e),
        other => bad(format!("{other:?}")),
    })?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "spot_id" || &header[1] != "x" || &header[2] != "y" {
        return Err(bad("header must start with spot_id,x,y".into()));
    }
    let genes: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let (mut ids, mut coords, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("row {}: column {} is not a number: {:?}", line + 2, k + 1, &rec[k])))
        };
        ids.push(rec[0].to_string());
        coords.push(CartesianPoint::new(num(1)?, num(2)?));
        for k in 3..rec.len() {
            values.push(num(k)?);
        }
    }
    let values = Tensor::new(vec![ids.len(), genes.len()], values).map_err(|e| bad(e.to_string()))?;
    Ok(SpotTable {
        spot_ids: ids,
        coords,
        genes,
        values,
    })
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Row-major little-endian `f64` matrix plus its `.meta` sidecar.
pub fn write_matrix(path: &Path, m: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| HexstError::io(path, e))?;
    let meta = meta_path(path);
    let mut f = fs::File::create(&meta).map_err(|e| HexstError::io(&meta, e))?;
    write!(f, "dtype=f64le\nrows={}\ncols={}\n", m.rows(), m.cols()).map_err(|e| HexstError::io(&meta, e))
}

pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta).map_err(|e| HexstError::io(&meta, e))?;
    let (mut rows, mut cols, mut dtype) = (None, None, None);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HexstError::format(&meta, format!("expected key=value, got {line:?}")))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| HexstError::format(&meta, format!("bad {k}")));
        match k.trim() {
            "rows" => rows = Some(parse(v)?),
            "cols" => cols = Some(parse(v)?),
            "dtype" => dtype = Some(v.trim().to_string()),
            other => return Err(HexstError::format(&meta, format!("unknown key {other:?}"))),
        }
    }
    if dtype.as_deref() != Some("f64le") {
        return Err(HexstError::format(&meta, format!("unsupported dtype {dtype:?}")));
    }
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(HexstError::format(&meta, "rows and cols are required")),
    };
    let bytes = fs::read(path).map_err(|e| HexstError::io(path, e))?;
    if bytes.len() != rows * cols * 8 {
        return Err(HexstError::format(
            path,
            format!("{} bytes, sidecar promises {rows}x{cols} f64", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::matrix(rows, cols, data)
}
