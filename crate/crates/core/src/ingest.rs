//! Reading data tables and group files, writing numeric tables.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path as FsPath;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grouped_model::{encode_categorical, GroupedDesign};

pub const CATEGORICAL_PREFIX: &str = "categorical:";

/// Raw string cells with the source line of each record.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub lines: Vec<usize>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || ["na", "nan", "n/a", "null"].iter().any(|m| c.eq_ignore_ascii_case(m))
}

pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse { line: 1, msg: "missing header row".into() });
    }
    let mut seen = HashMap::new();
    for (j, h) in header.iter().enumerate() {
        if let Some(prev) = seen.insert(h.as_str(), j) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("duplicate column name {h:?} (columns {} and {})", prev + 1, j + 1),
            });
        }
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push(rec.iter().map(str::to_string).collect());
        lines.push(line);
    }
    Ok(Table { header, rows, lines })
}

pub fn read_table_file(path: &FsPath) -> Result<Table> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_table(file)
}

fn csv_error(e: csv::Error, fallback: usize) -> Error {
    let line = e.position().map_or(fallback, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(e),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            msg: format!("expected {expected_len} fields, found {len}"),
        },
        _ => Error::Parse { line, msg: e.to_string() },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnRef {
    pub name: String,
    pub categorical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSpec {
    pub name: String,
    pub columns: Vec<ColumnRef>,
    pub weight: f64,
}

/// One group per line: `name col1,col2[,…] [weight]`. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_group_file(text: &str) -> Result<Vec<GroupSpec>> {
    let mut out: Vec<GroupSpec> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let bad = |msg: String| Err(Error::Parse { line, msg });
        if !(2..=3).contains(&fields.len()) {
            return bad(format!("expected `name columns [weight]`, found {} fields", fields.len()));
        }
        let weight = match fields.get(2) {
            None => 1.0,
            Some(w) => match w.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => v,
                _ => return bad(format!("weight {w:?} is not a positive number")),
            },
        };
        let mut columns = Vec::new();
        for tok in fields[1].split(',') {
            let (name, categorical) = match tok.strip_prefix(CATEGORICAL_PREFIX) {
                Some(rest) => (rest, true),
                None => (tok, false),
            };
            if name.is_empty() {
                return bad("empty column name".into());
            }
            columns.push(ColumnRef { name: name.to_string(), categorical });
        }
        if out.iter().any(|g| g.name == fields[0]) {
            return bad(format!("group {} defined twice", fields[0]));
        }
        out.push(GroupSpec { name: fields[0].to_string(), columns, weight });
    }
    if out.is_empty() {
        return Err(Error::Parse { line: 0, msg: "group file defines no groups".into() });
    }
    Ok(out)
}

pub fn format_group_file(groups: &[GroupSpec]) -> String {
    let mut s = String::new();
    for g in groups {
        let cols: Vec<String> = g
            .columns
            .iter()
            .map(|c| if c.categorical { format!("{CATEGORICAL_PREFIX}{}", c.name) } else { c.name.clone() })
            .collect();
        s.push_str(&g.name);
        s.push(' ');
        s.push_str(&cols.join(","));
        if g.weight != 1.0 {
            s.push_str(&format!(" {}", g.weight));
        }
        s.push('\n');
    }
    s
}

/// A design read from a table, on its raw (unnormalized) scale.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub design: GroupedDesign<f64>,
    pub y: Option<DVector<f64>>,
    pub groups: Vec<GroupSpec>,
    /// Rows dropped for missing values.
    pub dropped: usize,
}

/// Orders categorical levels numerically when every value is a number,
/// lexicographically otherwise.
fn level_order(values: &[&str]) -> Vec<String> {
    let mut uniq: Vec<&str> = values.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let nums: Option<Vec<f64>> = uniq.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(nums) = nums {
        let mut pairs: Vec<(f64, &str)> = nums.into_iter().zip(uniq.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        pairs.into_iter().map(|(_, s)| s.to_string()).collect()
    } else {
        uniq.into_iter().map(str::to_string).collect()
    }
}

/// Builds the design from `groups` (every non-response column a singleton
/// group when `None`) and the response column if present. Rows with a
/// missing value in any used column are dropped.
pub fn load_dataset(table: &Table, groups: Option<&[GroupSpec]>, response: Option<&str>) -> Result<Dataset> {
    let y_idx = match response {
        Some(name) => Some(
            table
                .column_index(name)
                .ok_or_else(|| Error::InvalidDesign(format!("response column {name:?} not found")))?,
        ),
        None => None,
    };
    let groups: Vec<GroupSpec> = match groups {
        Some(g) => g.to_vec(),
        None => table
            .header
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != y_idx)
            .map(|(_, h)| GroupSpec {
                name: h.clone(),
                columns: vec![ColumnRef { name: h.clone(), categorical: false }],
                weight: 1.0,
            })
            .collect(),
    };
    if groups.is_empty() {
        return Err(Error::InvalidDesign("no predictor columns".into()));
    }
    let mut used: BTreeMap<usize, bool> = BTreeMap::new();
    let mut resolved = Vec::with_capacity(groups.len());
    for g in &groups {
        let mut idx = Vec::with_capacity(g.columns.len());
        for c in &g.columns {
            let j = table.column_index(&c.name).ok_or_else(|| {
                Error::InvalidDesign(format!("group {} references unknown column {:?}", g.name, c.name))
            })?;
            if Some(j) == y_idx {
                return Err(Error::InvalidDesign(format!(
                    "group {} uses the response column {:?}",
                    g.name, c.name
                )));
            }
            *used.entry(j).or_insert(false) |= c.categorical;
            idx.push(j);
        }
        resolved.push(idx);
    }
    if let Some(j) = y_idx {
        used.insert(j, false);
    }

    let keep: Vec<usize> = (0..table.rows.len())
        .filter(|&i| used.keys().all(|&j| !is_missing(&table.rows[i][j])))
        .collect();
    let dropped = table.rows.len() - keep.len();
    if keep.is_empty() {
        return Err(Error::InvalidDesign("no complete rows".into()));
    }

    let numeric = |j: usize| -> Result<Vec<f64>> {
        keep.iter()
            .map(|&i| {
                let cell = table.rows[i][j].trim();
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line: table.lines[i],
                    msg: format!("column {:?}: {cell:?} is not a finite number", table.header[j]),
                })
            })
            .collect()
    };

    let mut blocks: Vec<(String, DMatrix<f64>)> = Vec::with_capacity(groups.len());
    let mut column_names = Vec::new();
    for (g, idx) in groups.iter().zip(&resolved) {
        let mut parts: Vec<DMatrix<f64>> = Vec::new();
        for (c, &j) in g.columns.iter().zip(idx) {
            if c.categorical {
                let cells: Vec<&str> = keep.iter().map(|&i| table.rows[i][j].trim()).collect();
                let levels = level_order(&cells);
                let code: HashMap<&str, usize> =
                    levels.iter().enumerate().map(|(l, s)| (s.as_str(), l + 1)).collect();
                let codes: Vec<usize> = cells.iter().map(|s| code[s]).collect();
                parts.push(encode_categorical(&codes, levels.len())?);
                column_names.extend(levels.iter().map(|l| format!("{}={l}", c.name)));
            } else {
                let v = numeric(j)?;
                parts.push(DMatrix::from_column_slice(v.len(), 1, &v));
                column_names.push(c.name.clone());
            }
        }
        let width: usize = parts.iter().map(|m| m.ncols()).sum();
        let mut block = DMatrix::zeros(keep.len(), width);
        let mut at = 0;
        for m in parts {
            block.columns_mut(at, m.ncols()).copy_from(&m);
            at += m.ncols();
        }
        blocks.push((g.name.clone(), block));
    }
    let weights = groups.iter().map(|g| g.weight).collect();
    let design = GroupedDesign::from_blocks(blocks)?
        .with_column_names(column_names)?
        .with_weights(weights)?;
    let y = y_idx.map(|j| numeric(j).map(DVector::from_vec)).transpose()?;
    Ok(Dataset { design, y, groups, dropped })
}

/// Writes a header and rows of numbers using shortest round-trip formatting.
pub fn write_numeric_csv<W: Write>(writer: W, header: &[String], columns: &[&[f64]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    let n = columns.first().map_or(0, |c| c.len());
    let mut row = Vec::with_capacity(columns.len());
    for i in 0..n {
        row.clear();
        row.extend(columns.iter().map(|c| c[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DATA: &str = "y,a,b,c\n1.5,0.1,x,3\n2.0,NA,y,4\n-1,0.3,x,5\n0.5,0.7,z,\n4,0.9,y,1\n";

    #[test]
    fn table_and_missing_rows() {
        let t = read_table(DATA.as_bytes()).unwrap();
        assert_eq!(t.header, ["y", "a", "b", "c"]);
        assert_eq!(t.rows.len(), 5);
        assert_eq!(t.lines, [2, 3, 4, 5, 6]);
        let groups = parse_group_file("A a\nB categorical:b 2\nC a,c\n").unwrap();
        let d = load_dataset(&t, Some(&groups), Some("y")).unwrap();
        assert_eq!(d.dropped, 2);
        assert_eq!(d.design.n_rows(), 3);
        assert_eq!(d.design.n_groups(), 3);
        assert_eq!(d.design.group_size(1), 2);
        assert_eq!(d.design.column_names()[1..3], ["b=x".to_string(), "b=y".to_string()]);
        assert_eq!(d.design.weights(), &[1.0, 2.0, 1.0]);
        assert_eq!(d.y.unwrap().as_slice(), &[1.5, -1.0, 4.0]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let t = read_table("y,a\n1,2\n3,oops\n".as_bytes()).unwrap();
        match load_dataset(&t, None, Some("y")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match read_table("y,a\n1,2\n3\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_group_file("# comment\nA a\nB b 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_column_is_an_error() {
        let t = read_table(DATA.as_bytes()).unwrap();
        let groups = parse_group_file("A nope\n").unwrap();
        assert!(matches!(load_dataset(&t, Some(&groups), Some("y")), Err(Error::InvalidDesign(_))));
        assert!(load_dataset(&t, None, Some("missing")).is_err());
    }

    #[test]
    fn numeric_levels_sort_numerically() {
        assert_eq!(level_order(&["10", "9", "2", "9"]), ["2", "9", "10"]);
        assert_eq!(level_order(&["b", "a", "10"]), ["10", "a", "b"]);
    }

    #[test]
    fn group_file_round_trip() {
        let text = "A a,categorical:b\nB c 2.5\n";
        let g = parse_group_file(text).unwrap();
        assert_eq!(format_group_file(&g), text);
    }

    #[test]
    fn numeric_round_trip() {
        let x = [0.1, 1.0 / 3.0, -2.5e-300, 12345.678];
        let mut buf = Vec::new();
        write_numeric_csv(&mut buf, &["x".into()], &[&x]).unwrap();
        let t = read_table(buf.as_slice()).unwrap();
        let back: Vec<f64> = t.rows.iter().map(|r| r[0].parse().unwrap()).collect();
        assert_eq!(back, x);
    }
}
