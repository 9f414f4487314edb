//! Versioned plain-text formats.
//!
//! All floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips any `f64` exactly. Blank lines are ignored on read.
//!
//! Dataset:
//! ```text
//! mlds-dataset v1, N=<N>, T=<T>, m=<m>, labeled=<0|1>
//! traj <i> label <k|->
//! <u_0 … u_{m-1} y>          (T lines: u_{t-1} and y_t for t = 1..T)
//! ```
//!
//! Mixture:
//! ```text
//! mlds-mixture v1, K=<K>, n=<n>, m=<m>
//! weight <p>                 (then n rows of A, n rows of B, 1 row of C)
//! ```
//!
//! Estimate:
//! ```text
//! mlds-estimate v1, K=<K>, L=<L>, m=<m>
//! weight <p>                 (then L lines of m floats: g(1) … g(L))
//! ```
//! optionally followed by state-space realizations, one per component:
//! ```text
//! realization <k> n=<n>      (then n rows of A, n rows of B, 1 row of C)
//! ```

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{MldsError, Result};
use crate::lds::{MarkovVector, MixtureModel, StateSpace, Trajectory, TrajectoryDataset};
use crate::pipeline::MarkovEstimate;

pub const DATASET_MAGIC: &str = "mlds-dataset v1";
pub const MIXTURE_MAGIC: &str = "mlds-mixture v1";
pub const ESTIMATE_MAGIC: &str = "mlds-estimate v1";

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row<W: Write>(out: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    let row: Vec<String> = values.into_iter().map(fmt_float).collect();
    writeln!(out, "{}", row.join(" "))?;
    Ok(())
}

fn write_matrix<W: Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        write_row(out, m.row(r).iter().copied())?;
    }
    Ok(())
}

fn write_system<W: Write>(out: &mut W, ss: &StateSpace) -> Result<()> {
    write_matrix(out, ss.a())?;
    write_matrix(out, ss.b())?;
    write_matrix(out, ss.c())
}

pub fn write_dataset<W: Write>(out: &mut W, data: &TrajectoryDataset) -> Result<()> {
    let labeled = data.is_labeled();
    writeln!(
        out,
        "{DATASET_MAGIC}, N={}, T={}, m={}, labeled={}",
        data.n_trajectories(),
        data.horizon(),
        data.input_dim(),
        u8::from(labeled)
    )?;
    for (i, tr) in data.trajectories().iter().enumerate() {
        match tr.label.filter(|_| labeled) {
            Some(k) => writeln!(out, "traj {i} label {k}")?,
            None => writeln!(out, "traj {i} label -")?,
        }
        for t in 1..=tr.len() {
            write_row(out, tr.input(t - 1).iter().copied().chain([tr.output(t)]))?;
        }
    }
    Ok(())
}

pub fn write_mixture<W: Write>(out: &mut W, model: &MixtureModel) -> Result<()> {
    writeln!(
        out,
        "{MIXTURE_MAGIC}, K={}, n={}, m={}",
        model.n_components(),
        model.order(),
        model.input_dim()
    )?;
    for (p, ss) in model.weights().iter().zip(model.systems()) {
        writeln!(out, "weight {}", fmt_float(*p))?;
        write_system(out, ss)?;
    }
    Ok(())
}

pub fn write_estimate<W: Write>(out: &mut W, est: &MarkovEstimate) -> Result<()> {
    writeln!(
        out,
        "{ESTIMATE_MAGIC}, K={}, L={}, m={}",
        est.n_components(),
        est.horizon(),
        est.input_dim()
    )?;
    for (p, g) in est.weights.iter().zip(&est.markov) {
        writeln!(out, "weight {}", fmt_float(*p))?;
        for t in 1..=g.horizon() {
            write_row(out, g.block(t).iter().copied())?;
        }
    }
    Ok(())
}

/// Append realization blocks after an estimate.
pub fn write_realizations<W: Write>(out: &mut W, systems: &[StateSpace]) -> Result<()> {
    for (k, ss) in systems.iter().enumerate() {
        writeln!(out, "realization {k} n={}", ss.order())?;
        write_system(out, ss)?;
    }
    Ok(())
}

struct Lines<'a> {
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)> + 'a> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty()),
        );
        Lines {
            inner: it.peekable(),
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.inner.next().ok_or_else(|| MldsError::Parse {
            line: 0,
            msg: format!("unexpected end of input, expected {what}"),
        })
    }

    fn peek(&mut self) -> Option<&(usize, &'a str)> {
        self.inner.peek()
    }

    fn floats(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let (no, line) = self.next_line(what)?;
        let vals = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| MldsError::Parse {
                    line: no,
                    msg: format!("bad number {tok:?} in {what}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != count {
            return Err(MldsError::Parse {
                line: no,
                msg: format!("expected {count} values in {what}, found {}", vals.len()),
            });
        }
        Ok(vals)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.floats(cols, what)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn system(&mut self, n: usize, m: usize, require_stable: bool) -> Result<StateSpace> {
        let a = self.matrix(n, n, "A")?;
        let b = self.matrix(n, m, "B")?;
        let c = self.matrix(1, n, "C")?;
        if require_stable {
            StateSpace::new(a, b, c)
        } else {
            StateSpace::unchecked_stability(a, b, c)
        }
    }

    fn weight(&mut self) -> Result<f64> {
        let (no, line) = self.next_line("weight line")?;
        let val = line
            .strip_prefix("weight ")
            .and_then(|v| v.trim().parse::<f64>().ok());
        val.ok_or_else(|| MldsError::Parse {
            line: no,
            msg: format!("expected `weight <p>`, found {line:?}"),
        })
    }

    fn expect_end(&mut self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(&(no, line)) => Err(MldsError::Parse {
                line: no,
                msg: format!("trailing content {line:?}"),
            }),
        }
    }
}

fn parse_header(line: &str, no: usize, magic: &str) -> Result<HashMap<String, usize>> {
    let rest = line.strip_prefix(magic).ok_or_else(|| MldsError::Parse {
        line: no,
        msg: format!("expected header starting with {magic:?}"),
    })?;
    let mut fields = HashMap::new();
    for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| MldsError::Parse {
            line: no,
            msg: format!("bad header field {part:?}"),
        })?;
        let v = v.trim().parse::<usize>().map_err(|_| MldsError::Parse {
            line: no,
            msg: format!("bad header value in {part:?}"),
        })?;
        fields.insert(k.trim().to_string(), v);
    }
    Ok(fields)
}

fn field(fields: &HashMap<String, usize>, key: &str, no: usize) -> Result<usize> {
    fields.get(key).copied().ok_or_else(|| MldsError::Parse {
        line: no,
        msg: format!("header is missing {key}"),
    })
}

pub fn parse_dataset(text: &str) -> Result<TrajectoryDataset> {
    let mut lines = Lines::new(text);
    let (no, header) = lines.next_line("dataset header")?;
    let h = parse_header(header, no, DATASET_MAGIC)?;
    let (n, t_len, m) = (
        field(&h, "N", no)?,
        field(&h, "T", no)?,
        field(&h, "m", no)?,
    );
    let labeled = field(&h, "labeled", no)? == 1;
    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n {
        let (no, line) = lines.next_line("trajectory header")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let ok =
            toks.len() == 4 && toks[0] == "traj" && toks[1] == i.to_string() && toks[2] == "label";
        if !ok {
            return Err(MldsError::Parse {
                line: no,
                msg: format!("expected `traj {i} label <k|->`, found {line:?}"),
            });
        }
        let label = match toks[3] {
            "-" => None,
            k => Some(k.parse::<usize>().map_err(|_| MldsError::Parse {
                line: no,
                msg: format!("bad label {k:?}"),
            })?),
        };
        if labeled && label.is_none() {
            return Err(MldsError::Parse {
                line: no,
                msg: "labeled dataset has an unlabeled trajectory".into(),
            });
        }
        let mut inputs = Vec::with_capacity(t_len * m);
        let mut outputs = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            let row = lines.floats(m + 1, "sample row")?;
            inputs.extend_from_slice(&row[..m]);
            outputs.push(row[m]);
        }
        trajectories.push(Trajectory {
            inputs,
            outputs,
            label,
        });
    }
    lines.expect_end()?;
    TrajectoryDataset::new(t_len, m, trajectories)
}

pub fn parse_mixture(text: &str) -> Result<MixtureModel> {
    let mut lines = Lines::new(text);
    let (no, header) = lines.next_line("mixture header")?;
    let h = parse_header(header, no, MIXTURE_MAGIC)?;
    let (k, n, m) = (
        field(&h, "K", no)?,
        field(&h, "n", no)?,
        field(&h, "m", no)?,
    );
    let mut weights = Vec::with_capacity(k);
    let mut systems = Vec::with_capacity(k);
    for _ in 0..k {
        weights.push(lines.weight()?);
        systems.push(lines.system(n, m, true)?);
    }
    lines.expect_end()?;
    MixtureModel::new(weights, systems)
}

/// Parsed estimate file, with any realization blocks that follow it.
#[derive(Debug, Clone)]
pub struct EstimateFile {
    pub estimate: MarkovEstimate,
    pub realizations: Vec<StateSpace>,
}

pub fn parse_estimate(text: &str) -> Result<EstimateFile> {
    let mut lines = Lines::new(text);
    let (no, header) = lines.next_line("estimate header")?;
    let h = parse_header(header, no, ESTIMATE_MAGIC)?;
    let (k, l, m) = (
        field(&h, "K", no)?,
        field(&h, "L", no)?,
        field(&h, "m", no)?,
    );
    let mut weights = Vec::with_capacity(k);
    let mut markov = Vec::with_capacity(k);
    for _ in 0..k {
        weights.push(lines.weight()?);
        let mut values = Vec::with_capacity(l * m);
        for _ in 0..l {
            values.extend(lines.floats(m, "Markov parameter")?);
        }
        markov.push(MarkovVector::new(l, m, DVector::from_vec(values))?);
    }
    let mut realizations = Vec::new();
    while let Some(&(no, line)) = lines.peek() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let order = match toks.as_slice() {
            ["realization", _, n] => n.strip_prefix("n=").and_then(|v| v.parse::<usize>().ok()),
            _ => None,
        };
        let Some(n) = order else {
            return Err(MldsError::Parse {
                line: no,
                msg: format!("expected `realization <k> n=<n>`, found {line:?}"),
            });
        };
        lines.next_line("realization header")?;
        realizations.push(lines.system(n, m, false)?);
    }
    Ok(EstimateFile {
        estimate: MarkovEstimate {
            weights,
            markov,
            low_confidence: false,
            refinement_skipped: false,
        },
        realizations,
    })
}
