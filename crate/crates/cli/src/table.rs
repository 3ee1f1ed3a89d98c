//! CSV input and output: task data files, query files and prediction tables.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use mtgp_core::MultiTaskDataset;
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

/// Formats a float so that parsing it back yields the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn invalid(msg: String) -> CliError {
    CliError::Validation(msg)
}

/// Column positions of `x1..xP` plus named columns, from a header row.
struct Layout {
    x: Vec<usize>,
    task: Option<usize>,
    y: Option<usize>,
}

fn layout(headers: &csv::StringRecord, allow_extra: bool) -> CliResult<Layout> {
    let mut xs: Vec<(usize, usize)> = Vec::new();
    let mut task = None;
    let mut y = None;
    for (col, name) in headers.iter().enumerate() {
        let name = name.trim();
        let dup = |n: &str| invalid(format!("header: column `{n}` appears more than once"));
        match name {
            "task" => {
                if task.replace(col).is_some() {
                    return Err(dup(name));
                }
            }
            "y" => {
                if y.replace(col).is_some() {
                    return Err(dup(name));
                }
            }
            _ => match name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                Some(k) if k >= 1 && name == format!("x{k}") => {
                    if xs.iter().any(|(kk, _)| *kk == k) {
                        return Err(dup(name));
                    }
                    xs.push((k, col));
                }
                _ if allow_extra => {}
                _ => return Err(invalid(format!("header: unexpected column `{name}`"))),
            },
        }
    }
    xs.sort();
    if xs.is_empty() {
        return Err(invalid("header: no input columns (expected x1, x2, ...)".into()));
    }
    for (i, (k, _)) in xs.iter().enumerate() {
        if *k != i + 1 {
            return Err(invalid(format!(
                "header: input columns must be x1..x{}, missing x{}",
                xs.len(),
                i + 1
            )));
        }
    }
    Ok(Layout {
        x: xs.into_iter().map(|(_, c)| c).collect(),
        task,
        y,
    })
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> u64 {
    rec.position().map_or(fallback as u64, |p| p.line())
}

fn parse_real(rec: &csv::StringRecord, col: usize, name: &str, line: u64) -> CliResult<f64> {
    let raw = rec.get(col).unwrap_or("").trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(invalid(format!("row {line}: column `{name}` is not finite (`{raw}`)"))),
        Err(_) => Err(invalid(format!(
            "row {line}: column `{name}` is not a number (`{raw}`)"
        ))),
    }
}

fn parse_task(rec: &csv::StringRecord, col: usize, line: u64) -> CliResult<usize> {
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse::<usize>().map_err(|_| {
        invalid(format!(
            "row {line}: column `task` must be a non-negative integer, got `{raw}`"
        ))
    })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_error(e: csv::Error) -> CliError {
    invalid(format!("malformed CSV: {e}"))
}

/// Reads a task data file (`x1..xP, task, y`, rows in any order). Tasks must
/// form the contiguous range `0..D`.
pub fn parse_task_data<R: Read>(input: R) -> CliResult<MultiTaskDataset> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let lay = layout(&headers, false)?;
    let task_col = lay
        .task
        .ok_or_else(|| invalid("header: missing column `task`".into()))?;
    let y_col = lay.y.ok_or_else(|| invalid("header: missing column `y`".into()))?;
    let p = lay.x.len();
    let mut rows: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec, i + 2);
        let x = lay
            .x
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_real(&rec, c, &format!("x{}", k + 1), line))
            .collect::<CliResult<Vec<_>>>()?;
        rows.push((
            parse_task(&rec, task_col, line)?,
            x,
            parse_real(&rec, y_col, "y", line)?,
        ));
    }
    if rows.is_empty() {
        return Err(invalid("data file has no rows".into()));
    }
    let present: BTreeSet<usize> = rows.iter().map(|r| r.0).collect();
    let d = present.iter().next_back().map_or(0, |m| m + 1);
    if let Some(gap) = (0..d).find(|t| !present.contains(t)) {
        let found: Vec<String> = present.iter().map(|t| t.to_string()).collect();
        return Err(invalid(format!(
            "task indices must be contiguous from 0: task {gap} is missing (found {})",
            found.join(", ")
        )));
    }
    let mut inputs = Vec::with_capacity(d);
    let mut targets = Vec::with_capacity(d);
    for t in 0..d {
        let mine: Vec<&(usize, Vec<f64>, f64)> = rows.iter().filter(|r| r.0 == t).collect();
        inputs.push(DMatrix::from_fn(mine.len(), p, |i, j| mine[i].1[j]));
        targets.push(DVector::from_iterator(mine.len(), mine.iter().map(|r| r.2)));
    }
    Ok(MultiTaskDataset::new(inputs, targets)?)
}

pub fn read_task_data(path: &Path) -> CliResult<MultiTaskDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::read(path, e))?;
    parse_task_data(file).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes a dataset in task data file layout, task-major.
pub fn write_task_data<W: Write>(out: W, dataset: &MultiTaskDataset) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = dataset.input_dim();
    let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    header.push("task".into());
    header.push("y".into());
    w.write_record(&header)
        .map_err(|e| CliError::Computation(e.to_string()))?;
    for t in 0..dataset.num_tasks() {
        let x = dataset.inputs(t);
        for i in 0..x.nrows() {
            let mut rec: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            rec.push(t.to_string());
            rec.push(fmt_f64(dataset.targets(t)[i]));
            w.write_record(&rec).map_err(|e| CliError::Computation(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CliError::Computation(e.to_string()))
}

/// A query file: every original column is kept for echoing.
#[derive(Debug, Clone)]
pub struct QueryTable {
    pub headers: Vec<String>,
    pub raw: Vec<Vec<String>>,
    pub inputs: DMatrix<f64>,
    pub tasks: Vec<usize>,
}

/// Reads `x1..xP` and `task` (optional for single-task models); other columns
/// pass through untouched.
pub fn parse_query<R: Read>(input: R, input_dim: usize, num_tasks: usize) -> CliResult<QueryTable> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let lay = layout(&headers, true)?;
    if lay.x.len() != input_dim {
        return Err(invalid(format!(
            "query has {} input columns, model expects {input_dim}",
            lay.x.len()
        )));
    }
    if lay.task.is_none() && num_tasks > 1 {
        return Err(invalid(
            "header: missing column `task` (model has several tasks)".into(),
        ));
    }
    let mut raw = Vec::new();
    let mut xs = Vec::new();
    let mut tasks = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec, i + 2);
        for (k, &c) in lay.x.iter().enumerate() {
            xs.push(parse_real(&rec, c, &format!("x{}", k + 1), line)?);
        }
        let t = match lay.task {
            Some(c) => parse_task(&rec, c, line)?,
            None => 0,
        };
        if t >= num_tasks {
            return Err(invalid(format!(
                "row {line}: task {t} out of range for a {num_tasks}-task model"
            )));
        }
        tasks.push(t);
        raw.push(rec.iter().map(str::to_string).collect());
    }
    Ok(QueryTable {
        headers: headers.iter().map(str::to_string).collect(),
        inputs: DMatrix::from_row_slice(tasks.len(), input_dim, &xs),
        raw,
        tasks,
    })
}

/// Query columns followed by `mean` and `stddev`, row-aligned with the query.
pub fn write_predictions<W: Write>(out: W, query: &QueryTable, predictions: &[(f64, f64)]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::Computation(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = query.headers.clone();
    header.push("mean".into());
    header.push("stddev".into());
    w.write_record(&header).map_err(err)?;
    for (row, (m, s)) in query.raw.iter().zip(predictions) {
        let mut rec = row.clone();
        rec.push(fmt_f64(*m));
        rec.push(fmt_f64(*s));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Computation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows_in_any_order() {
        let csv = "y,task,x1\n1.5,1,0.2\n-1,0,0.5\n2,1,0.9\n";
        let ds = parse_task_data(csv.as_bytes()).unwrap();
        assert_eq!(ds.num_tasks(), 2);
        assert_eq!(ds.task_len(0), 1);
        assert_eq!(ds.targets(1).as_slice(), &[1.5, 2.0]);
        assert_eq!(ds.inputs(1)[(1, 0)], 0.9);
    }

    #[test]
    fn task_gap_is_named() {
        let csv = "x1,task,y\n0.1,0,1\n0.2,2,1\n";
        let e = parse_task_data(csv.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("task 1 is missing"), "{e}");
    }

    #[test]
    fn bad_cells_name_their_row() {
        let e = parse_task_data("x1,task,y\n0.1,0,1\n0.2,0,abc\n".as_bytes())
            .unwrap_err()
            .to_string();
        assert!(e.contains("row 3") && e.contains("`y`"), "{e}");
        let e = parse_task_data("x1,task,y\n0.1,-1,1\n".as_bytes())
            .unwrap_err()
            .to_string();
        assert!(e.contains("row 2") && e.contains("task"), "{e}");
        let e = parse_task_data("x1,task,y\n0.1,0,NaN\n".as_bytes())
            .unwrap_err()
            .to_string();
        assert!(e.contains("not finite"), "{e}");
    }

    #[test]
    fn header_problems() {
        assert!(parse_task_data("x1,x3,task,y\n".as_bytes())
            .unwrap_err()
            .to_string()
            .contains("x2"));
        assert!(parse_task_data("x1,y\n0,1\n".as_bytes())
            .unwrap_err()
            .to_string()
            .contains("task"));
        assert!(parse_task_data("x1,task,y,z\n".as_bytes())
            .unwrap_err()
            .to_string()
            .contains("`z`"));
        assert!(parse_task_data("x1,task,y\n".as_bytes())
            .unwrap_err()
            .to_string()
            .contains("no rows"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(parse_task_data("x1,task,y\n0.1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip_is_lossless() {
        let csv = "x1,x2,task,y\n0.1,0.30000000000000004,0,1e-300\n0.7,0.2,1,-3.25\n";
        let ds = parse_task_data(csv.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_task_data(&mut buf, &ds).unwrap();
        let again = parse_task_data(buf.as_slice()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn query_passes_extra_columns_through() {
        let q = parse_query("id,x1,task\na,0.5,1\nb,0.25,0\n".as_bytes(), 1, 2).unwrap();
        assert_eq!(q.tasks, vec![1, 0]);
        let mut buf = Vec::new();
        write_predictions(&mut buf, &q, &[(1.0, 0.5), (-2.0, 0.0)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,x1,task,mean,stddev\na,0.5,1,1.0,0.5\nb,0.25,0,-2.0,0.0\n");
    }

    #[test]
    fn query_checks() {
        assert!(parse_query("x1,x2,task\n".as_bytes(), 1, 1).is_err());
        assert!(parse_query("x1\n0.5\n".as_bytes(), 1, 2).is_err());
        assert!(parse_query("x1,task\n0.5,3\n".as_bytes(), 1, 2)
            .unwrap_err()
            .to_string()
            .contains("row 2"));
        let q = parse_query("x1\n".as_bytes(), 1, 1).unwrap();
        assert_eq!(q.inputs.nrows(), 0);
    }
}
