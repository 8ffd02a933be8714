//! Sparse 0/1 measurement matrices with fixed column weight and the noisy
//! linear measurement `y = Phi x0 + w`.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalInstance;

/// Column-major sparse binary matrix. Each column lists its `L` row indices
/// in increasing order; a row-major adjacency is derived once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBinaryMatrix {
    n_rows: usize,
    n_cols: usize,
    column_weight: usize,
    columns: Vec<Vec<usize>>,
    rows: Vec<Vec<usize>>,
    girth: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub y: Vec<f64>,
    pub sigma_w: f64,
}

impl SparseBinaryMatrix {
    pub fn from_columns(n_rows: usize, columns: Vec<Vec<usize>>) -> Result<Self> {
        let n_cols = columns.len();
        if n_cols == 0 || n_rows == 0 {
            return Err(Error::invalid("matrix must have at least one row and column"));
        }
        let column_weight = columns[0].len();
        let mut columns = columns;
        for (i, col) in columns.iter_mut().enumerate() {
            col.sort_unstable();
            if col.len() != column_weight {
                return Err(Error::invalid(format!(
                    "column {i} has weight {}, expected {column_weight}",
                    col.len()
                )));
            }
            if col.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("column {i} repeats a row index")));
            }
            if col.last().is_some_and(|&r| r >= n_rows) {
                return Err(Error::invalid(format!("column {i} indexes past row {n_rows}")));
            }
        }
        if column_weight == 0 {
            return Err(Error::invalid("column weight must be >= 1"));
        }
        let mut rows = vec![Vec::new(); n_rows];
        for (i, col) in columns.iter().enumerate() {
            for &r in col {
                rows[r].push(i);
            }
        }
        let girth = compute_girth(&columns, &rows);
        Ok(Self {
            n_rows,
            n_cols,
            column_weight,
            columns,
            rows,
            girth,
            seed: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn column_weight(&self) -> usize {
        self.column_weight
    }

    pub fn column(&self, i: usize) -> &[usize] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    /// Columns touching row `j`, in increasing order.
    pub fn row(&self, j: usize) -> &[usize] {
        &self.rows[j]
    }

    /// Shortest cycle length of the bipartite graph; `None` when acyclic.
    pub fn girth(&self) -> Option<usize> {
        self.girth
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn nnz(&self) -> usize {
        self.n_cols * self.column_weight
    }

    /// `true` iff the graph has a cycle of length at most `bound`.
    ///
    /// For `bound < 6` this checks directly whether two columns share two rows,
    /// independently of the stored girth.
    pub fn girth_at_most(&self, bound: usize) -> bool {
        if bound < 4 {
            return false;
        }
        if bound < 6 {
            return self.has_four_cycle();
        }
        self.girth.is_some_and(|g| g <= bound)
    }

    fn has_four_cycle(&self) -> bool {
        let mut seen = vec![usize::MAX; self.n_cols];
        for i in 0..self.n_cols {
            // mark every column sharing a row with i; a second hit is a 4-cycle
            for &r in &self.columns[i] {
                for &k in &self.rows[r] {
                    if k <= i {
                        continue;
                    }
                    if seen[k] == i {
                        return true;
                    }
                    seen[k] = i;
                }
            }
        }
        false
    }

    pub fn multiply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::Dimension {
                expected: self.n_cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_rows];
        for (col, &v) in self.columns.iter().zip(x) {
            if v != 0.0 {
                for &r in col {
                    y[r] += v;
                }
            }
        }
        Ok(y)
    }

    /// Header `N M L seed`, then one line of row indices per column.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seed = self.seed.map_or_else(|| "-".to_string(), |v| v.to_string());
        let _ = writeln!(s, "{} {} {} {}", self.n_cols, self.n_rows, self.column_weight, seed);
        for col in &self.columns {
            let line: Vec<String> = col.iter().map(|r| r.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text).map_err(|e| match e {
            Error::InvalidParameter(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::invalid("empty matrix file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::invalid(format!("bad header `{header}`, want `N M L seed`")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad header field `{s}`: {e}")))
        };
        let (n, m, l) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
        let seed = match fields[3] {
            "-" => None,
            s => Some(
                s.parse::<u64>()
                    .map_err(|e| Error::invalid(format!("bad seed `{s}`: {e}")))?,
            ),
        };
        let columns = lines
            .map(|line| {
                line.split_whitespace()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|e| Error::invalid(format!("bad row index `{t}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if columns.len() != n {
            return Err(Error::invalid(format!("header says {n} columns, found {}", columns.len())));
        }
        let mut mat = Self::from_columns(m, columns)?;
        if mat.column_weight != l {
            return Err(Error::invalid(format!(
                "header says weight {l}, columns have {}",
                mat.column_weight
            )));
        }
        mat.seed = seed;
        Ok(mat)
    }
}

/// Random column-weight-`l` matrix with no 4-cycles.
///
/// Columns are placed one at a time; each draws uniform `l`-subsets of rows
/// and rejects any that would share two rows with an earlier column.
pub fn build_matrix<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    l: usize,
    rng: &mut R,
    max_retries: usize,
) -> Result<SparseBinaryMatrix> {
    if l == 0 || l > m {
        return Err(Error::invalid(format!("need 1 <= L <= M, got L = {l}, M = {m}")));
    }
    if n == 0 {
        return Err(Error::invalid("need N >= 1"));
    }
    if m >= n {
        log::warn!("M = {m} >= N = {n}: the system is not underdetermined");
    }
    // row pairs already covered by some column
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut columns = Vec::with_capacity(n);
    for column in 0..n {
        let mut placed = None;
        for _ in 0..max_retries.max(1) {
            let mut rows = sample(rng, m, l).into_vec();
            rows.sort_unstable();
            let clash = rows
                .iter()
                .enumerate()
                .any(|(a, &ra)| rows[a + 1..].iter().any(|&rb| used.contains(&(ra, rb))));
            if !clash {
                placed = Some(rows);
                break;
            }
        }
        let rows = placed.ok_or(Error::Construction {
            column,
            weight: l,
            rows: m,
            retries: max_retries,
        })?;
        for (a, &ra) in rows.iter().enumerate() {
            for &rb in &rows[a + 1..] {
                used.insert((ra, rb));
            }
        }
        columns.push(rows);
    }
    SparseBinaryMatrix::from_columns(m, columns)
}

/// Random acyclic (forest) matrix: `n` columns of weight `l` over
/// `n * (l - 1) + 1 + extra_rows` rows.
pub fn build_forest<R: Rng + ?Sized>(
    n: usize,
    l: usize,
    extra_rows: usize,
    rng: &mut R,
) -> Result<SparseBinaryMatrix> {
    if n == 0 || l == 0 {
        return Err(Error::invalid("need N >= 1 and L >= 1"));
    }
    let m = n * (l - 1) + 1 + extra_rows;
    // union-find over rows; a column may join rows only from distinct components
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    let mut columns = Vec::with_capacity(n);
    for _ in 0..n {
        let mut order: Vec<usize> = sample(rng, m, m).into_vec();
        let mut chosen = Vec::with_capacity(l);
        let mut roots = Vec::with_capacity(l);
        for r in order.drain(..) {
            let root = find(&mut parent, r);
            if !roots.contains(&root) {
                roots.push(root);
                chosen.push(r);
                if chosen.len() == l {
                    break;
                }
            }
        }
        if chosen.len() < l {
            return Err(Error::invalid("ran out of components for an acyclic column"));
        }
        for &root in &roots[1..] {
            parent[root] = roots[0];
        }
        columns.push(chosen);
    }
    SparseBinaryMatrix::from_columns(m, columns)
}

/// `y = Phi x0 + w`, `w ~ N(0, sigma_w^2 I)`.
pub fn measure<R: Rng + ?Sized>(
    matrix: &SparseBinaryMatrix,
    signal: &SignalInstance,
    sigma_w: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if !(sigma_w.is_finite() && sigma_w >= 0.0) {
        return Err(Error::invalid(format!("sigma_w must be >= 0, got {sigma_w}")));
    }
    let mut y = matrix.multiply(&signal.values)?;
    if sigma_w > 0.0 {
        let noise = Normal::new(0.0, sigma_w).expect("sigma_w validated");
        y.iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    Ok(Measurement { y, sigma_w })
}

/// Girth by BFS from every column node; every cycle passes through one.
fn compute_girth(columns: &[Vec<usize>], rows: &[Vec<usize>]) -> Option<usize> {
    let n = columns.len();
    // node ids: columns 0..n, rows n..n+m
    let total = n + rows.len();
    let mut dist = vec![usize::MAX; total];
    let mut parent = vec![usize::MAX; total];
    let mut best = usize::MAX;
    let mut queue = VecDeque::new();
    let mut touched = Vec::new();
    for start in 0..n {
        for &t in &touched {
            dist[t] = usize::MAX;
            parent[t] = usize::MAX;
        }
        touched.clear();
        queue.clear();
        dist[start] = 0;
        touched.push(start);
        queue.push_back(start);
        'bfs: while let Some(u) = queue.pop_front() {
            if 2 * dist[u] + 1 >= best {
                break;
            }
            let neighbors: Box<dyn Iterator<Item = usize>> = if u < n {
                Box::new(columns[u].iter().map(|r| r + n))
            } else {
                Box::new(rows[u - n].iter().copied())
            };
            for v in neighbors {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    parent[v] = u;
                    touched.push(v);
                    queue.push_back(v);
                } else if parent[u] != v {
                    best = best.min(dist[u] + dist[v] + 1);
                    if best == 4 {
                        break 'bfs;
                    }
                }
            }
        }
        if best == 4 {
            break;
        }
    }
    (best != usize::MAX).then_some(best)
}
