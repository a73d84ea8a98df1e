//! Vandermonde matrices over GF(2^u), the encoding c = A·b, and the
//! Gaussian-elimination machinery behind the security oracle.
//!
//! Row/column indices are 1-based in the documentation, matching the usual
//! Vandermonde convention entry(i, j) = a_j^(i-1) with an all-ones first row.
//! Internal storage is 0-based.

use crate::gf::{FieldSpec, GfError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinalgError {
    #[error("coefficient at index {0} is zero")]
    ZeroCoefficient(usize),
    #[error("duplicate coefficient {0}")]
    DuplicateCoefficient(u16),
    #[error("dimension n={n} requires field size q > n, got q={q}")]
    DimensionExceedsField { n: usize, q: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("segment (p={p}, k={k}) out of range for n={n}")]
    SegmentOutOfRange { p: usize, k: usize, n: usize },
    #[error("singular {0}x{0} submatrix")]
    SingularSubmatrix(usize),
    #[error(transparent)]
    Gf(#[from] GfError),
}

/// An ordered vector of field symbols, all validated against one field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SymbolVector {
    spec: FieldSpec,
    symbols: Vec<u16>,
}

impl SymbolVector {
    pub fn new(spec: FieldSpec, symbols: Vec<u16>) -> Result<Self, LinalgError> {
        for &s in &symbols {
            spec.element(s as u32)?;
        }
        Ok(SymbolVector { spec, symbols })
    }

    pub fn zeros(spec: FieldSpec, len: usize) -> Self {
        SymbolVector {
            spec,
            symbols: vec![0; len],
        }
    }

    pub fn spec(&self) -> FieldSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[u16] {
        &self.symbols
    }

    /// Componentwise field addition (XOR in characteristic 2).
    pub fn xor(&self, other: &SymbolVector) -> Result<SymbolVector, LinalgError> {
        if self.spec != other.spec || self.len() != other.len() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(SymbolVector {
            spec: self.spec,
            symbols: self
                .symbols
                .iter()
                .zip(&other.symbols)
                .map(|(&a, &b)| a ^ b)
                .collect(),
        })
    }

    /// Subvector of positions `range` (0-based, half-open).
    pub fn segment(&self, start: usize, len: usize) -> SymbolVector {
        SymbolVector {
            spec: self.spec,
            symbols: self.symbols[start..start + len].to_vec(),
        }
    }

    pub fn concat(&self, other: &SymbolVector) -> Result<SymbolVector, LinalgError> {
        if self.spec != other.spec {
            return Err(LinalgError::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        let mut symbols = self.symbols.clone();
        symbols.extend_from_slice(&other.symbols);
        Ok(SymbolVector {
            spec: self.spec,
            symbols,
        })
    }
}

/// An n x n Vandermonde matrix with entry(i, j) = a_j^(i-1) over distinct
/// nonzero coefficients a_j. Nonsingular by construction; a rank check runs
/// at build time as a safety net.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VandermondeMatrix {
    spec: FieldSpec,
    n: usize,
    coeffs: Vec<u16>,
    entries: Vec<Vec<u16>>,
}

impl VandermondeMatrix {
    /// Builds the matrix from explicit coefficients.
    pub fn build(spec: FieldSpec, coeffs: &[u16]) -> Result<Self, LinalgError> {
        let n = coeffs.len();
        if n as u32 >= spec.q() {
            return Err(LinalgError::DimensionExceedsField { n, q: spec.q() });
        }
        let mut seen = std::collections::HashSet::new();
        for (idx, &a) in coeffs.iter().enumerate() {
            spec.element(a as u32)?;
            if a == 0 {
                return Err(LinalgError::ZeroCoefficient(idx));
            }
            if !seen.insert(a) {
                return Err(LinalgError::DuplicateCoefficient(a));
            }
        }
        let entries: Vec<Vec<u16>> = (0..n)
            .map(|i| coeffs.iter().map(|&a| spec.pow_raw(a, i as u64)).collect())
            .collect();
        let m = VandermondeMatrix {
            spec,
            n,
            coeffs: coeffs.to_vec(),
            entries,
        };
        debug_assert_eq!(rank(spec, &m.entries), n);
        Ok(m)
    }

    /// Default reproducible coefficients a_j = j (the j-th nonzero field
    /// element in ascending integer order).
    pub fn with_default_coeffs(spec: FieldSpec, n: usize) -> Result<Self, LinalgError> {
        if n as u32 >= spec.q() {
            return Err(LinalgError::DimensionExceedsField { n, q: spec.q() });
        }
        let coeffs: Vec<u16> = (1..=n as u16).collect();
        Self::build(spec, &coeffs)
    }

    pub fn spec(&self) -> FieldSpec {
        self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[u16] {
        &self.coeffs
    }

    /// Entry at 0-based (row, col); equals coeffs[col]^row.
    pub fn entry(&self, row: usize, col: usize) -> u16 {
        self.entries[row][col]
    }

    pub fn rows(&self) -> &[Vec<u16>] {
        &self.entries
    }

    /// c = A·b.
    pub fn encode(&self, b: &SymbolVector) -> Result<SymbolVector, LinalgError> {
        if b.len() != self.n || b.spec() != self.spec {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let symbols = self
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .zip(b.symbols())
                    .fold(0u16, |acc, (&a, &x)| acc ^ self.spec.mul_raw(a, x))
            })
            .collect();
        Ok(SymbolVector {
            spec: self.spec,
            symbols,
        })
    }

    /// Gaussian elimination of rows p+1..p+k (1-based) so that columns
    /// p+1..p+k become the k x k identity. Returns the reduced matrix and the
    /// row-operation record.
    pub fn reduce_segment(&self, p: usize, k: usize) -> Result<ReducedSystem, LinalgError> {
        if k == 0 || k > self.n || p > self.n - k {
            return Err(LinalgError::SegmentOutOfRange { p, k, n: self.n });
        }
        let spec = self.spec;
        // Working rows: the k rows of A covering the observed segment,
        // augmented with the identity to record the row operations.
        let mut rows: Vec<Vec<u16>> = self.entries[p..p + k].to_vec();
        let mut transform: Vec<Vec<u16>> = (0..k)
            .map(|i| (0..k).map(|j| u16::from(i == j)).collect())
            .collect();

        for pivot in 0..k {
            let col = p + pivot;
            let Some(src) = (pivot..k).find(|&r| rows[r][col] != 0) else {
                // Cannot happen for a Vandermonde submatrix with distinct
                // nonzero coefficients.
                return Err(LinalgError::SingularSubmatrix(k));
            };
            rows.swap(pivot, src);
            transform.swap(pivot, src);
            let inv = spec.inv_raw(rows[pivot][col])?;
            for j in 0..self.n {
                rows[pivot][j] = spec.mul_raw(rows[pivot][j], inv);
            }
            for j in 0..k {
                transform[pivot][j] = spec.mul_raw(transform[pivot][j], inv);
            }
            for r in 0..k {
                if r == pivot || rows[r][col] == 0 {
                    continue;
                }
                let factor = rows[r][col];
                for j in 0..self.n {
                    rows[r][j] ^= spec.mul_raw(factor, rows[pivot][j]);
                }
                for j in 0..k {
                    transform[r][j] ^= spec.mul_raw(factor, transform[pivot][j]);
                }
            }
        }
        Ok(ReducedSystem {
            spec,
            n: self.n,
            p,
            k,
            reduced: rows,
            transform,
        })
    }
}

/// The adversary's view of the encoding after observing one k-symbol segment:
/// k equations in n unknowns, with an identity block in the observed columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedSystem {
    spec: FieldSpec,
    n: usize,
    p: usize,
    k: usize,
    /// k x n reduced matrix M; columns p+1..p+k (1-based) are the identity.
    reduced: Vec<Vec<u16>>,
    /// k x k row-operation record T, so that M = T · A_rows and v = T · c_seg.
    transform: Vec<Vec<u16>>,
}

impl ReducedSystem {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn reduced_rows(&self) -> &[Vec<u16>] {
        &self.reduced
    }

    pub fn transform_rows(&self) -> &[Vec<u16>] {
        &self.transform
    }

    /// Maps the observed codeword segment c_{p+1..p+k} to the reduced vector
    /// v, so that v_i = sum_j M[i][j]·b_j for the unknown source vector b.
    pub fn apply_transform(&self, observed: &SymbolVector) -> Result<SymbolVector, LinalgError> {
        if observed.len() != self.k || observed.spec() != self.spec {
            return Err(LinalgError::DimensionMismatch {
                expected: self.k,
                got: observed.len(),
            });
        }
        let symbols = self
            .transform
            .iter()
            .map(|row| {
                row.iter()
                    .zip(observed.symbols())
                    .fold(0u16, |acc, (&t, &c)| acc ^ self.spec.mul_raw(t, c))
            })
            .collect();
        Ok(SymbolVector {
            spec: self.spec,
            symbols,
        })
    }

    /// Right-hand side of the reduced equations for a known source vector b.
    pub fn apply_reduced(&self, b: &SymbolVector) -> Result<SymbolVector, LinalgError> {
        if b.len() != self.n || b.spec() != self.spec {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let symbols = self
            .reduced
            .iter()
            .map(|row| {
                row.iter()
                    .zip(b.symbols())
                    .fold(0u16, |acc, (&m, &x)| acc ^ self.spec.mul_raw(m, x))
            })
            .collect();
        Ok(SymbolVector {
            spec: self.spec,
            symbols,
        })
    }
}

/// Row rank over F_q via forward elimination. Consumes a copy of the rows.
pub fn rank(spec: FieldSpec, rows: &[Vec<u16>]) -> usize {
    let mut m: Vec<Vec<u16>> = rows.to_vec();
    let nrows = m.len();
    let ncols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for col in 0..ncols {
        if r == nrows {
            break;
        }
        let Some(src) = (r..nrows).find(|&i| m[i][col] != 0) else {
            continue;
        };
        m.swap(r, src);
        let inv = spec
            .inv_raw(m[r][col])
            .expect("pivot is nonzero by selection");
        for j in col..ncols {
            m[r][j] = spec.mul_raw(m[r][j], inv);
        }
        for i in 0..nrows {
            if i != r && m[i][col] != 0 {
                let f = m[i][col];
                for j in col..ncols {
                    m[i][j] ^= spec.mul_raw(f, m[r][j]);
                }
            }
        }
        r += 1;
    }
    r
}
