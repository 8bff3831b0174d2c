//! Representation tables, the canonical optimal constructions and the
//! geometric audits used by the sample-optimality characterization.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::world::{EquivalenceRelation, MaximalInvariant};

/// Relative singular-value cutoff for rank computations.
pub const RANK_TOL: f64 = 1e-8;

/// An encoder on a finite input space: row `x` is `φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    reps: DMatrix<f64>,
}

impl Encoder {
    pub fn new(reps: DMatrix<f64>) -> Result<Self> {
        if reps.ncols() == 0 || reps.nrows() == 0 {
            return Err(invalid("encoder", "empty representation table"));
        }
        if reps.iter().any(|v| !v.is_finite()) {
            return Err(invalid("encoder", "non-finite entry"));
        }
        Ok(Self { reps })
    }

    pub fn reps(&self) -> &DMatrix<f64> {
        &self.reps
    }

    pub fn into_reps(self) -> DMatrix<f64> {
        self.reps
    }

    pub fn dim(&self) -> usize {
        self.reps.ncols()
    }

    pub fn size(&self) -> usize {
        self.reps.nrows()
    }

    /// One representative row per class (the class's smallest member).
    pub fn class_points(&self, eq: &EquivalenceRelation) -> DMatrix<f64> {
        let reps = eq.representatives();
        DMatrix::from_fn(reps.len(), self.dim(), |i, j| self.reps[(reps[i], j)])
    }

    /// Parses the CSV format: a `d=<int>` header, then one row per input.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty encoder file".into()))?;
        let d: usize = header
            .strip_prefix("d=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("expected `d=<int>` header, got `{header}`")))?;
        let mut data = Vec::new();
        let mut n = 0;
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {i}: {e}")))?;
            if row.len() != d {
                return Err(Error::Parse(format!("row {i} has {} values, header says d={d}", row.len())));
            }
            data.extend(row);
            n += 1;
        }
        Self::new(DMatrix::from_row_slice(n, d, &data))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("d={}\n", self.dim());
        for r in 0..self.size() {
            let row: Vec<String> = self.reps.row(r).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: EncoderFile = serde_json::from_str(text)?;
        if f.reps.iter().any(|r| r.len() != f.d) {
            return Err(Error::SizeMismatch(format!("rows must have d={} entries", f.d)));
        }
        let n = f.reps.len();
        Self::new(DMatrix::from_row_slice(n, f.d, &f.reps.concat()))
    }

    pub fn to_json(&self) -> String {
        let reps = (0..self.size()).map(|r| self.reps.row(r).iter().copied().collect()).collect();
        serde_json::to_string(&EncoderFile { d: self.dim(), reps }).expect("encoder serializes")
    }

    /// Loads either format, chosen by extension (`.json` or anything else as CSV).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderFile {
    pub d: usize,
    pub reps: Vec<Vec<f64>>,
}

/// Vertices of a simplex equiangular tight frame embedded in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetfFrame {
    vertices: DMatrix<f64>,
}

impl SetfFrame {
    pub fn vertices(&self) -> &DMatrix<f64> {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }
}

/// `reps(x) = e_{m(x)}` in `R^C`.
pub fn one_hot_encoder(m: &MaximalInvariant) -> Encoder {
    let c = m.num_classes();
    let reps = DMatrix::from_fn(m.size(), c, |x, j| if m.get(x) == j { 1.0 } else { 0.0 });
    Encoder { reps }
}

/// Orthonormal basis of the complement of the all-ones direction in `R^C`,
/// from Gram-Schmidt over `e_0, e_1, ...` in order. Returned as columns.
fn centered_basis(c: usize) -> DMatrix<f64> {
    let ones = DVector::from_element(c, 1.0 / (c as f64).sqrt());
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(c - 1);
    for i in 0..c {
        if basis.len() == c - 1 {
            break;
        }
        let mut v = DVector::zeros(c);
        v[i] = 1.0;
        // Two passes of modified Gram-Schmidt keep the basis orthonormal to ~1e-16.
        for _ in 0..2 {
            v -= &ones * ones.dot(&v);
            for b in &basis {
                v -= b * b.dot(&v);
            }
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    DMatrix::from_columns(&basis)
}

/// The simplex ETF with `C` vertices in `R^d`.
///
/// One-hot vectors are centered and scaled to unit norm, expressed in a fixed
/// orthonormal basis of their `(C-1)`-dimensional span, and zero-padded to `d`.
pub fn setf(c: usize, d: usize) -> Result<SetfFrame> {
    if c < 2 {
        return Err(Error::Dimension(format!("sETF needs C >= 2, got {c}")));
    }
    if d + 1 < c {
        return Err(Error::Dimension(format!("sETF with C = {c} needs d >= {}, got {d}", c - 1)));
    }
    let basis = centered_basis(c);
    let scale = (c as f64 / (c as f64 - 1.0)).sqrt();
    let inv_c = 1.0 / c as f64;
    let mut vertices = DMatrix::zeros(c, d);
    for i in 0..c {
        let mut v = DVector::from_element(c, -inv_c);
        v[i] += 1.0;
        v *= scale;
        let coords = basis.transpose() * v;
        for j in 0..c - 1 {
            vertices[(i, j)] = coords[j];
        }
    }
    Ok(SetfFrame { vertices })
}

/// `reps(x) = setf(C, d).vertices[m(x)]`.
pub fn setf_encoder(m: &MaximalInvariant, d: usize) -> Result<Encoder> {
    let frame = setf(m.num_classes(), d)?;
    let reps = DMatrix::from_fn(m.size(), d, |x, j| frame.vertices[(m.get(x), j)]);
    Ok(Encoder { reps })
}

/// Max-abs gap between representations of equivalent inputs is within `tol`.
pub fn is_invariant(e: &Encoder, eq: &EquivalenceRelation, tol: f64) -> Result<bool> {
    if e.size() != eq.size() {
        return Err(Error::SizeMismatch(format!(
            "encoder has {} rows, relation has {} inputs",
            e.size(),
            eq.size()
        )));
    }
    for cls in eq.members() {
        let first = e.reps.row(cls[0]);
        for &x in &cls[1..] {
            if (e.reps.row(x) - first).amax() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Number of singular values above `tol * σ_max`.
pub fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// `dim span {φ(x)}`.
pub fn effective_dimension(e: &Encoder, tol: f64) -> usize {
    matrix_rank(&e.reps, tol)
}

/// Distinct rows after snapping coordinates to a grid of spacing `tol`.
pub fn image_cardinality(e: &Encoder, tol: f64) -> usize {
    distinct_rows(&e.reps, tol)
}

pub(crate) fn distinct_rows(m: &DMatrix<f64>, tol: f64) -> usize {
    let mut seen = HashSet::new();
    for r in 0..m.nrows() {
        let key: Vec<i64> = m.row(r).iter().map(|v| grid_key(*v, tol)).collect();
        seen.insert(key);
    }
    seen.len()
}

fn grid_key(v: f64, tol: f64) -> i64 {
    if tol > 0.0 {
        (v / tol).round() as i64
    } else {
        v.to_bits() as i64
    }
}

pub fn unit_normalize(e: &Encoder) -> Result<Encoder> {
    let mut reps = e.reps.clone();
    for r in 0..reps.nrows() {
        let n = reps.row(r).norm();
        if n == 0.0 {
            return Err(Error::ZeroRow(r));
        }
        reps.row_mut(r).unscale_mut(n);
    }
    Ok(Encoder { reps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::maximal_invariant;

    fn mi(v: &[usize]) -> MaximalInvariant {
        maximal_invariant(&EquivalenceRelation::from_labels(v.to_vec()).unwrap())
    }

    #[test]
    fn one_hot_rows() {
        let e = one_hot_encoder(&mi(&[0, 0, 1, 1]));
        assert_eq!(e.reps(), &DMatrix::from_row_slice(4, 2, &[1., 0., 1., 0., 0., 1., 0., 1.]));
        assert_eq!(one_hot_encoder(&mi(&[0, 1, 2])).reps(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn setf_small_cases() {
        let f = setf(2, 1).unwrap();
        assert!((f.vertices()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((f.vertices()[(1, 0)] + 1.0).abs() < 1e-15);

        let f = setf(3, 2).unwrap();
        let g = f.vertices() * f.vertices().transpose();
        for i in 0..3 {
            assert!((g[(i, i)] - 1.0).abs() < 1e-15);
            for j in 0..3 {
                if i != j {
                    assert!((g[(i, j)] + 0.5).abs() < 1e-15);
                }
            }
        }
        assert!(matches!(setf(4, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn setf_encoder_rows() {
        let e = setf_encoder(&mi(&[0, 0, 1, 1]), 1).unwrap();
        let col: Vec<f64> = e.reps().column(0).iter().map(|v| v.round()).collect();
        assert_eq!(col, vec![1.0, 1.0, -1.0, -1.0]);
        let e = setf_encoder(&mi(&[0, 1, 2, 2]), 2).unwrap();
        assert_eq!(e.reps().row(2), e.reps().row(3));
        assert!(matches!(setf_encoder(&mi(&[0, 1, 2, 3]), 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn invariance_with_perturbation() {
        let m = mi(&[0, 0, 1, 1]);
        let eq = m.relation();
        let e = one_hot_encoder(&m);
        assert!(is_invariant(&e, &eq, 0.0).unwrap());
        let mut reps = e.reps().clone();
        reps[(1, 0)] += 1e-3;
        assert!(!is_invariant(&Encoder::new(reps.clone()).unwrap(), &eq, 1e-6).unwrap());
        reps[(1, 0)] = 1.0 + 1e-9;
        assert!(is_invariant(&Encoder::new(reps).unwrap(), &eq, 1e-6).unwrap());
    }

    #[test]
    fn dimension_and_cardinality() {
        assert_eq!(effective_dimension(&one_hot_encoder(&mi(&[0, 1, 2])), RANK_TOL), 3);
        let e = setf_encoder(&mi(&[0, 1, 2, 3]), 8).unwrap();
        assert_eq!(effective_dimension(&e, RANK_TOL), 3);
        let constant = Encoder::new(DMatrix::from_element(4, 3, 0.7)).unwrap();
        assert_eq!(effective_dimension(&constant, RANK_TOL), 1);
        assert_eq!(image_cardinality(&constant, 1e-9), 1);

        assert_eq!(image_cardinality(&one_hot_encoder(&mi(&[0, 1, 2, 0])), 1e-9), 3);
        let e = setf_encoder(&mi(&[0, 1, 2, 3, 4, 4]), 4).unwrap();
        assert_eq!(image_cardinality(&e, 1e-9), 5);
    }

    #[test]
    fn normalization() {
        let e = Encoder::new(DMatrix::from_row_slice(1, 2, &[3.0, 4.0])).unwrap();
        let n = unit_normalize(&e).unwrap();
        assert!((n.reps()[(0, 0)] - 0.6).abs() < 1e-15 && (n.reps()[(0, 1)] - 0.8).abs() < 1e-15);
        let again = unit_normalize(&n).unwrap();
        assert!((again.reps() - n.reps()).amax() < 1e-15);
        let z = Encoder::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(matches!(unit_normalize(&z), Err(Error::ZeroRow(1))));
    }

    #[test]
    fn csv_and_json_formats() {
        let e = setf_encoder(&mi(&[0, 1, 2]), 3).unwrap();
        assert_eq!(Encoder::from_csv(&e.to_csv()).unwrap(), e);
        assert_eq!(Encoder::from_json(&e.to_json()).unwrap(), e);
        assert!(Encoder::from_csv("d=2\n1,2,3\n").is_err());
        assert!(Encoder::from_csv("2\n1,2\n").is_err());
    }
}
