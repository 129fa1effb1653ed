//! File formats for correlation matrices, s-vectors, scores, statistics,
//! groups and Z-score tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corr::{CorrelationMatrix, Matrix};
use crate::dsolve::SVector;
use crate::error::{Error, Result};
use crate::groups::GroupStructure;
use crate::sampler::KnockoffScores;
use crate::stats::KnockoffStats;

fn is_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: '{field}' is not a number")))
}

/// Headerless CSV of equal-length numeric rows.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<Matrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        rows.push(
            rec.iter()
                .map(|f| parse_f64(f, i + 1))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Matrix::from_rows(&rows)
}

pub fn write_matrix_csv<W: Write>(writer: W, mat: &Matrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    for i in 0..mat.rows() {
        w.write_record(mat.row(i).iter().map(|x| format!("{x:?}")))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `u64` LE dimension followed by `p²` row-major `f64` LE values.
pub fn read_matrix_bin<R: Read>(mut reader: R) -> Result<Matrix<f64>> {
    let mut head = [0u8; 8];
    reader.read_exact(&mut head)?;
    let p = usize::try_from(u64::from_le_bytes(head))
        .map_err(|_| Error::Parse("matrix dimension does not fit in memory".into()))?;
    let n = p
        .checked_mul(p)
        .ok_or_else(|| Error::Parse(format!("matrix dimension {p} overflows")))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(Error::Parse(format!(
            "expected {} bytes of matrix data for p = {p}, found {}",
            n * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Matrix::from_vec(p, p, data)
}

pub fn write_matrix_bin<W: Write>(mut writer: W, mat: &Matrix<f64>) -> Result<()> {
    if !mat.is_square() {
        return Err(Error::Dimension {
            expected: mat.rows(),
            got: mat.cols(),
        });
    }
    writer.write_all(&(mat.rows() as u64).to_le_bytes())?;
    for x in mat.as_slice() {
        writer.write_all(&x.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a square matrix, `.bin` as binary and anything else as CSV.
pub fn read_matrix(path: &Path) -> Result<Matrix<f64>> {
    let reader = BufReader::new(File::open(path)?);
    if is_ext(path, "bin") {
        read_matrix_bin(reader)
    } else {
        read_matrix_csv(reader)
    }
}

pub fn write_matrix(path: &Path, mat: &Matrix<f64>) -> Result<()> {
    let writer = BufWriter::new(File::create(path)?);
    if is_ext(path, "bin") {
        write_matrix_bin(writer, mat)
    } else {
        write_matrix_csv(writer, mat)
    }
}

pub fn read_correlation(path: &Path) -> Result<CorrelationMatrix<f64>> {
    CorrelationMatrix::new(read_matrix(path)?)
}

pub fn write_correlation(path: &Path, sigma: &CorrelationMatrix<f64>) -> Result<()> {
    write_matrix(path, sigma.as_matrix())
}

/// JSON sidecar stored next to an s-vector CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SVectorMeta {
    #[serde(rename = "M")]
    pub m: usize,
    pub gamma: f64,
    pub feasibility_margin: f64,
    pub converged: bool,
}

/// `s.csv` pairs with `s.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes one `s_j` per line plus the JSON sidecar.
pub fn write_svector(path: &Path, s: &SVector<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for x in s.values() {
        writeln!(w, "{x:?}")?;
    }
    w.flush()?;
    let meta = SVectorMeta {
        m: s.m(),
        gamma: s.gamma(),
        feasibility_margin: s.feasibility_margin(),
        converged: s.converged(),
    };
    let side = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(side, &meta)?;
    Ok(())
}

/// Reads an s-vector CSV and its sidecar; stored values are not re-validated.
pub fn read_svector(path: &Path) -> Result<SVector<f64>> {
    let text = std::fs::read_to_string(path)?;
    let values = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_f64(l, i + 1))
        .collect::<Result<Vec<_>>>()?;
    let meta: SVectorMeta =
        serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    Ok(SVector::from_parts(
        values,
        meta.m,
        meta.gamma,
        meta.feasibility_margin,
        meta.converged,
    ))
}

/// `z0,…,zM` header then one row per item.
pub fn write_scores_csv<W: Write>(writer: W, scores: &KnockoffScores<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..=scores.m()).map(|m| format!("z{m}")))
        .map_err(csv_err)?;
    for j in 0..scores.n_items() {
        w.write_record(scores.row(j).iter().map(|x| format!("{x:?}")))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StatsRow {
    index: usize,
    kappa: usize,
    tau: f64,
}

pub fn write_stats_csv<W: Write>(writer: W, stats: &KnockoffStats<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (index, (&kappa, &tau)) in stats.kappa().iter().zip(stats.tau()).enumerate() {
        w.serialize(StatsRow { index, kappa, tau })
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(reader: R, m: usize) -> Result<KnockoffStats<f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut kappa = Vec::new();
    let mut tau = Vec::new();
    for (i, row) in rdr.deserialize::<StatsRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        if row.index != i {
            return Err(Error::Parse(format!("row {i} has index {}", row.index)));
        }
        kappa.push(row.kappa);
        tau.push(row.tau);
    }
    KnockoffStats::new(kappa, tau, m)
}

#[derive(Serialize, Deserialize)]
struct GroupRow {
    feature_index: usize,
    group_id: usize,
}

pub fn write_groups_csv<W: Write>(writer: W, groups: &GroupStructure) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (feature_index, &group_id) in groups.assignment().iter().enumerate() {
        w.serialize(GroupRow {
            feature_index,
            group_id,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_groups_csv<R: Read>(reader: R) -> Result<GroupStructure> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut pairs = Vec::new();
    for row in rdr.deserialize::<GroupRow>() {
        let row = row.map_err(csv_err)?;
        pairs.push((row.feature_index, row.group_id));
    }
    let p = pairs.len();
    let mut assignment = vec![None; p];
    for (f, g) in pairs {
        let slot = assignment
            .get_mut(f)
            .ok_or_else(|| Error::Groups(format!("feature index {f} out of range for {p} rows")))?;
        if slot.replace(g).is_some() {
            return Err(Error::Groups(format!("feature {f} assigned twice")));
        }
    }
    let labels = assignment
        .into_iter()
        .map(|g| g.ok_or_else(|| Error::Groups("feature indices are not contiguous".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupStructure::from_labels(&labels))
}

/// Reads groups from `.json` (serialized [`GroupStructure`]) or CSV.
pub fn read_groups(path: &Path) -> Result<GroupStructure> {
    let reader = BufReader::new(File::open(path)?);
    if is_ext(path, "json") {
        let g: GroupStructure = serde_json::from_reader(reader)?;
        GroupStructure::from_assignment(g.assignment().to_vec())
    } else {
        read_groups_csv(reader)
    }
}

pub fn write_groups(path: &Path, groups: &GroupStructure) -> Result<()> {
    let writer = BufWriter::new(File::create(path)?);
    if is_ext(path, "json") {
        serde_json::to_writer_pretty(writer, groups)?;
        Ok(())
    } else {
        write_groups_csv(writer, groups)
    }
}

/// Z-scores with their identifiers, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct ZTable {
    pub ids: Vec<String>,
    pub z: Vec<f64>,
}

#[derive(Deserialize)]
struct ZRow {
    id: String,
    z: f64,
}

/// CSV with header `id,z`.
pub fn read_zscores<R: Read>(reader: R) -> Result<ZTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "z"] {
        return Err(Error::Parse(format!(
            "Z-score file must have header 'id,z', found '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut table = ZTable {
        ids: Vec::new(),
        z: Vec::new(),
    };
    for row in rdr.deserialize::<ZRow>() {
        let row = row.map_err(csv_err)?;
        if !row.z.is_finite() {
            return Err(Error::NonFinite(format!("Z-score for '{}'", row.id)));
        }
        table.ids.push(row.id);
        table.z.push(row.z);
    }
    Ok(table)
}

pub fn write_zscores<W: Write>(writer: W, table: &ZTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "z"]).map_err(csv_err)?;
    for (id, z) in table.ids.iter().zip(&table.z) {
        w.write_record([id.clone(), format!("{z:?}")])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::make_ar1;

    #[test]
    fn binary_round_trip() {
        let sigma = make_ar1(4, 0.3).unwrap();
        let mut buf = Vec::new();
        write_matrix_bin(&mut buf, sigma.as_matrix()).unwrap();
        assert_eq!(buf.len(), 8 + 16 * 8);
        assert_eq!(&buf[..8], &4u64.to_le_bytes());
        assert_eq!(&read_matrix_bin(&buf[..]).unwrap(), sigma.as_matrix());
        assert!(read_matrix_bin(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let sigma = make_ar1(3, 0.7).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, sigma.as_matrix()).unwrap();
        assert_eq!(&read_matrix_csv(&buf[..]).unwrap(), sigma.as_matrix());
    }

    #[test]
    fn ragged_csv_rejected() {
        assert!(read_matrix_csv("1,0\n0\n".as_bytes()).is_err());
        assert!(read_matrix_csv("1,x\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn zscores_keep_ids() {
        let t = read_zscores("id,z\n19:45416178,3.5\nrs2,-1\n".as_bytes()).unwrap();
        assert_eq!(t.ids, vec!["19:45416178", "rs2"]);
        assert_eq!(t.z, vec![3.5, -1.0]);
        assert!(read_zscores("name,z\na,1\n".as_bytes()).is_err());
        assert!(read_zscores("id,z\na,NaN\n".as_bytes()).is_err());
    }

    #[test]
    fn groups_csv_round_trip() {
        let g = GroupStructure::from_assignment(vec![0, 0, 1, 2, 1]).unwrap();
        let mut buf = Vec::new();
        write_groups_csv(&mut buf, &g).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("feature_index,group_id\n"));
        assert_eq!(read_groups_csv(&buf[..]).unwrap(), g);
    }

    #[test]
    fn stats_csv_round_trip() {
        let s = KnockoffStats::new(vec![0, 2, 1], vec![1.5, 0.0, 3.25], 2).unwrap();
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &s).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("index,kappa,tau\n"));
        assert_eq!(read_stats_csv(&buf[..], 2).unwrap(), s);
    }

    #[test]
    fn scores_header() {
        let sc = KnockoffScores::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &sc).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "z0,z1,z2\n1.0,2.0,3.0\n");
    }

    #[test]
    fn svector_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let sigma = make_ar1(3, 0.5).unwrap();
        let s = crate::dsolve::solve_equi(&sigma, 19).unwrap();
        write_svector(&path, &s).unwrap();
        let back = read_svector(&path).unwrap();
        assert_eq!(back.values(), s.values());
        assert_eq!(back.m(), 19);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap())
                .unwrap();
        for key in ["M", "gamma", "feasibility_margin", "converged"] {
            assert!(meta.get(key).is_some(), "{key}");
        }
    }
}
