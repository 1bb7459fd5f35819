//! File formats: rollout batches as CSV with a JSON sidecar, identified
//! models as JSON, Markov sequences and reports as CSV.
//!
//! Matrices are written row-major. CSV floats use 17 significant digits so
//! that every value reads back bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arma::{ArmaCoefficients, TvArmaModel};
use crate::error::{Error, Result};
use crate::plants::{LtvSystem, NoiseSpec, Rollout, RolloutBatch};
use crate::realization::{InfoStateModel, MarkovSequence};

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Parse(format!("expected {} entries for a {rows}x{cols} matrix, got {}", rows * cols, data.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_nested(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// A CSV cell: blank, integer or float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Empty,
    Int(usize),
    Float(f64),
}

impl Cell {
    fn render(self) -> String {
        match self {
            Cell::Empty => String::new(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format_f64(x),
        }
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<Cell>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(Cell::render))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRecord {
    pub process: Vec<f64>,
    pub measurement: Vec<f64>,
}

/// Sidecar describing a batch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchMetadata {
    pub plant: String,
    pub n_rollouts: usize,
    pub m: usize,
    pub r: usize,
    pub horizon: usize,
    pub seed: u64,
    pub nonzero_ic: bool,
    pub noise: Option<NoiseRecord>,
}

impl BatchMetadata {
    pub fn of(batch: &RolloutBatch) -> Self {
        Self {
            plant: batch.plant.clone(),
            n_rollouts: batch.len(),
            m: batch.m,
            r: batch.r,
            horizon: batch.horizon,
            seed: batch.seed,
            nonzero_ic: batch.nonzero_ic,
            noise: batch.noise.as_ref().map(|n| NoiseRecord {
                process: row_major(n.process()),
                measurement: row_major(n.measurement()),
            }),
        }
    }
}

fn batch_header(m: usize, r: usize) -> Vec<String> {
    let mut h = vec!["rollout".to_string(), "t".to_string()];
    h.extend((1..=r).map(|i| format!("u_{i}")));
    h.extend((1..=m).map(|i| format!("z_{i}")));
    h
}

/// Writes `{stem}.csv` and `{stem}.meta.json` into `dir`.
pub fn write_batch(batch: &RolloutBatch, dir: &Path, stem: &str) -> Result<()> {
    let rows = batch.rollouts.iter().enumerate().flat_map(|(i, ro)| {
        (0..=batch.horizon).map(move |t| {
            let mut row = vec![Cell::Int(i), Cell::Int(t)];
            match ro.inputs.get(t) {
                Some(u) => row.extend(u.iter().map(|&x| Cell::Float(x))),
                None => row.extend(std::iter::repeat_n(Cell::Empty, batch.r)),
            }
            row.extend(ro.outputs[t].iter().map(|&x| Cell::Float(x)));
            row
        })
    });
    write_table(&dir.join(format!("{stem}.csv")), &batch_header(batch.m, batch.r), rows)?;
    write_json(&BatchMetadata::of(batch), &dir.join(format!("{stem}.meta.json")))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad number {s:?} on line {line}")))
}

/// Reads a batch written by [`write_batch`]. Hidden states are not stored,
/// so the rollouts come back without them.
pub fn read_batch(csv_path: &Path, meta_path: &Path) -> Result<RolloutBatch> {
    let meta: BatchMetadata = read_json(meta_path)?;
    let (m, r, h) = (meta.m, meta.r, meta.horizon);
    let mut rdr = csv::Reader::from_path(csv_path)?;
    if rdr.headers()?.iter().collect::<Vec<_>>() != batch_header(m, r) {
        return Err(Error::Parse("batch CSV header does not match its metadata".into()));
    }
    let mut rollouts: Vec<Rollout> = Vec::with_capacity(meta.n_rollouts);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        if rec.len() != 2 + m + r {
            return Err(Error::Parse(format!("line {line} has {} fields", rec.len())));
        }
        let i: usize = rec[0].parse().map_err(|_| Error::Parse(format!("bad rollout index on line {line}")))?;
        let t: usize = rec[1].parse().map_err(|_| Error::Parse(format!("bad step on line {line}")))?;
        if i == rollouts.len() && t == 0 {
            rollouts.push(Rollout {
                inputs: Vec::with_capacity(h),
                outputs: Vec::with_capacity(h + 1),
                states: Vec::new(),
                process_noise: None,
                measurement_noise: None,
            });
        }
        let count = rollouts.len();
        let ro = rollouts.last_mut().filter(|_| i + 1 == count);
        let Some(ro) = ro.filter(|ro| ro.outputs.len() == t) else {
            return Err(Error::Parse(format!("rows out of order at line {line}")));
        };
        if t < h {
            let u = (0..r).map(|k| parse_f64(&rec[2 + k], line)).collect::<Result<Vec<_>>>()?;
            ro.inputs.push(DVector::from_vec(u));
        } else if (0..r).any(|k| !rec[2 + k].is_empty()) {
            return Err(Error::Parse(format!("inputs at t = H must be empty (line {line})")));
        }
        let z = (0..m).map(|k| parse_f64(&rec[2 + r + k], line)).collect::<Result<Vec<_>>>()?;
        ro.outputs.push(DVector::from_vec(z));
    }
    if rollouts.len() != meta.n_rollouts {
        return Err(Error::Parse(format!("metadata lists {} rollouts, CSV has {}", meta.n_rollouts, rollouts.len())));
    }
    let mut batch = RolloutBatch::from_rollouts(meta.plant, rollouts, m, r, meta.seed)?;
    if batch.horizon != h {
        return Err(Error::Parse(format!("metadata horizon {h}, CSV horizon {}", batch.horizon)));
    }
    batch.nonzero_ic = meta.nonzero_ic;
    batch.noise = meta
        .noise
        .map(|n| NoiseSpec::new(from_row_major(r, r, &n.process)?, from_row_major(m, m, &n.measurement)?))
        .transpose()?;
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmaRecord {
    t: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    residual_norm: f64,
    rank_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmaFile {
    q: usize,
    m: usize,
    r: usize,
    #[serde(rename = "H")]
    horizon: usize,
    records: Vec<ArmaRecord>,
}

pub fn write_arma_model(model: &TvArmaModel, path: &Path) -> Result<()> {
    let file = ArmaFile {
        q: model.q,
        m: model.m,
        r: model.r,
        horizon: model.horizon,
        records: model
            .coefficients
            .iter()
            .map(|c| ArmaRecord {
                t: c.t,
                alpha: row_major(&c.alpha),
                beta: row_major(&c.beta),
                residual_norm: c.residual_norm,
                rank_used: c.rank_used,
            })
            .collect(),
    };
    write_json(&file, path)
}

pub fn read_arma_model(path: &Path) -> Result<TvArmaModel> {
    let f: ArmaFile = read_json(path)?;
    let coefficients = f
        .records
        .into_iter()
        .map(|rec| {
            Ok(ArmaCoefficients {
                t: rec.t,
                q: f.q,
                alpha: from_row_major(f.m, f.m * f.q, &rec.alpha)?,
                beta: from_row_major(f.m, f.r * f.q, &rec.beta)?,
                residual_norm: rec.residual_norm,
                rank_used: rec.rank_used,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TvArmaModel::new(f.q, f.m, f.r, f.horizon, coefficients)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InfoStep {
    t: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InfoFile {
    q: usize,
    m: usize,
    r: usize,
    t_range: [usize; 2],
    steps: Vec<InfoStep>,
}

pub fn write_info_state_model(model: &InfoStateModel, path: &Path) -> Result<()> {
    let start = model.q() - 1;
    let file = InfoFile {
        q: model.q(),
        m: model.m(),
        r: model.r(),
        t_range: [start, model.horizon()],
        steps: model
            .a_seq()
            .iter()
            .zip(model.b_seq())
            .enumerate()
            .map(|(k, (a, b))| InfoStep { t: start + k, a: row_major(a), b: row_major(b) })
            .collect(),
    };
    write_json(&file, path)
}

pub fn read_info_state_model(path: &Path) -> Result<InfoStateModel> {
    let f: InfoFile = read_json(path)?;
    if f.q == 0 || f.t_range[0] + 1 != f.q {
        return Err(Error::Parse(format!("t_range must start at q - 1, got {:?} for q = {}", f.t_range, f.q)));
    }
    let d = crate::realization::info_state_dim(f.m, f.r, f.q);
    let mut a = Vec::with_capacity(f.steps.len());
    let mut b = Vec::with_capacity(f.steps.len());
    for (k, s) in f.steps.iter().enumerate() {
        if s.t != f.t_range[0] + k {
            return Err(Error::Parse(format!("step {k} has t = {}", s.t)));
        }
        a.push(from_row_major(d, d, &s.a)?);
        b.push(from_row_major(d, f.r, &s.b)?);
    }
    InfoStateModel::new(f.q, f.m, f.r, f.t_range[1], a, b)
}

pub fn write_markov_csv(markov: &MarkovSequence, path: &Path) -> Result<()> {
    let (m, r) = markov.blocks.first().map_or((0, 0), |b| b.shape());
    let mut header = vec!["k".to_string()];
    for i in 1..=m {
        header.extend((1..=r).map(|j| format!("y_{i}_{j}")));
    }
    let rows = markov.blocks.iter().enumerate().map(|(k, y)| {
        let mut row = vec![Cell::Int(k)];
        row.extend(row_major(y).into_iter().map(Cell::Float));
        row
    });
    write_table(path, &header, rows)
}

/// Plant given as explicit matrix sequences. Sequences of length one are
/// broadcast over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub name: String,
    pub horizon: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<Vec<f64>>>,
}

impl SystemFile {
    pub fn of(sys: &LtvSystem) -> Self {
        let conv = |seq: &[DMatrix<f64>]| seq.iter().map(nested).collect();
        Self {
            name: sys.name().to_string(),
            horizon: sys.horizon(),
            a: conv(sys.a_seq()),
            b: conv(sys.b_seq()),
            c: conv(sys.c_seq()),
        }
    }

    pub fn into_system(self) -> Result<LtvSystem> {
        let conv = |seq: Vec<Vec<Vec<f64>>>| seq.iter().map(|m| from_nested(m)).collect::<Result<Vec<_>>>();
        if self.a.is_empty() || self.b.is_empty() || self.c.is_empty() {
            return Err(Error::Parse("system file needs non-empty A, B and C".into()));
        }
        LtvSystem::new(self.name, self.horizon, conv(self.a)?, conv(self.b)?, conv(self.c)?)
    }
}

pub fn read_system(path: &Path) -> Result<LtvSystem> {
    read_json::<SystemFile>(path)?.into_system()
}

pub fn write_system(sys: &LtvSystem, path: &Path) -> Result<()> {
    write_json(&SystemFile::of(sys), path)
}

pub fn write_summary<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_json(value, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::fit_all;
    use crate::plants::{generate_batch, make_ltv_oscillator, make_spring_mass_3dof, InitLaw, InputLaw};
    use crate::realization::{markov_from_arma, realize_tv};

    fn noisy_batch() -> RolloutBatch {
        let sm = make_spring_mass_3dof().unwrap();
        let noise = NoiseSpec::new(DMatrix::identity(1, 1) * 0.01, DMatrix::identity(2, 2) * 0.02).unwrap();
        generate_batch(&sm, 7, &InputLaw::Gaussian { sigma: 1.0 }, &InitLaw::Gaussian { sigma: 1.0 }, Some(&noise), 11)
            .unwrap()
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, f64::MAX, 5e-324, 0.0, 123456.789] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn batch_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let b = noisy_batch();
        write_batch(&b, dir.path(), "train").unwrap();
        let back = read_batch(&dir.path().join("train.csv"), &dir.path().join("train.meta.json")).unwrap();
        assert_eq!((back.len(), back.m, back.r, back.horizon, back.seed), (7, 2, 1, 40, 11));
        assert!(back.nonzero_ic);
        assert_eq!(back.noise, b.noise);
        for (x, y) in b.rollouts.iter().zip(&back.rollouts) {
            assert_eq!(x.inputs, y.inputs);
            assert_eq!(x.outputs, y.outputs);
        }
        let text = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
        assert!(text.starts_with("rollout,t,u_1,z_1,z_2\n"));
        assert!(text.lines().nth(41).unwrap().starts_with("0,40,,"));
    }

    #[test]
    fn corrupted_batch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_batch(&noisy_batch(), dir.path(), "b").unwrap();
        let path = dir.path().join("b.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let swapped = [&[lines[0], lines[2], lines[1]][..], &lines[3..]].concat().join("\n");
        std::fs::write(&path, swapped).unwrap();
        assert!(matches!(read_batch(&path, &dir.path().join("b.meta.json")), Err(Error::Parse(_))));
    }

    #[test]
    fn models_round_trip_exactly() {
        let osc = make_ltv_oscillator().unwrap();
        let b = generate_batch(&osc, 40, &InputLaw::Gaussian { sigma: 1.0 }, &InitLaw::Zero, None, 1).unwrap();
        let arma = fit_all(&b, 4, 1e-8).unwrap();
        let info = realize_tv(&arma).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_arma_model(&arma, &dir.path().join("arma.json")).unwrap();
        write_info_state_model(&info, &dir.path().join("info.json")).unwrap();
        assert_eq!(read_arma_model(&dir.path().join("arma.json")).unwrap(), arma);
        assert_eq!(read_info_state_model(&dir.path().join("info.json")).unwrap(), info);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("arma.json")).unwrap()).unwrap();
        assert_eq!(json["records"][0]["alpha"].as_array().unwrap().len(), 16);
        assert_eq!(json["records"][0]["alpha"][1].as_f64().unwrap(), arma.coefficients[0].alpha[(0, 1)]);
    }

    #[test]
    fn tampered_info_model_fails_structure_check() {
        let sm = make_spring_mass_3dof().unwrap();
        let b = generate_batch(&sm, 40, &InputLaw::Gaussian { sigma: 1.0 }, &InitLaw::Zero, None, 1).unwrap();
        let info = realize_tv(&fit_all(&b, 4, 1e-8).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("info.json");
        write_info_state_model(&info, &p).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let last = json["steps"][0]["A"].as_array().unwrap().len() - 1;
        json["steps"][0]["A"][last] = 0.5.into();
        std::fs::write(&p, json.to_string()).unwrap();
        assert!(read_info_state_model(&p).is_err());
    }

    #[test]
    fn system_file_round_trip_and_markov_csv() {
        let dir = tempfile::tempdir().unwrap();
        let osc = make_ltv_oscillator().unwrap();
        write_system(&osc, &dir.path().join("sys.json")).unwrap();
        assert_eq!(read_system(&dir.path().join("sys.json")).unwrap(), osc);
        let bad = r#"{"name": "x", "horizon": 2, "A": [[[1.0]]], "B": [[[1.0]]], "C": [[[1.0]]], "D": []}"#;
        std::fs::write(dir.path().join("bad.json"), bad).unwrap();
        assert!(matches!(read_system(&dir.path().join("bad.json")), Err(Error::Json(_))));

        let sm = make_spring_mass_3dof().unwrap();
        let fund = crate::arma::fundamental_arma(&sm, 10, 4).unwrap();
        let mk = markov_from_arma(&fund, 3);
        write_markov_csv(&mk, &dir.path().join("markov.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("markov.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,y_1_1,y_2_1");
        assert_eq!(text.lines().count(), 4);
    }
}
