//! Independent reference implementations shared by the integration tests.
//! Everything here works on plain nested loops over scalars and only reads
//! parameters through `Matrix::get`.

#![allow(dead_code, clippy::needless_range_loop)]

use battrae::corpus::EmbeddingTable;
use battrae::linalg::Matrix;
use battrae::rae::RaeParams;

/// Greedy merge sequence by exhaustive re-evaluation: at each step every
/// adjacent pair of the current node list is composed and scored from
/// scratch, and the first pair with the smallest error wins.
pub struct GreedyRun {
    pub merges: Vec<(usize, usize)>,
    pub total_error: f64,
    pub root: Vec<f64>,
}

fn tanh_affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|k| {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += w.get(k, j) * xj;
            }
            (acc + b[k]).tanh()
        })
        .collect()
}

fn merge_error(left: &[f64], right: &[f64], p: &RaeParams) -> (Vec<f64>, f64) {
    let x: Vec<f64> = left.iter().chain(right).copied().collect();
    let y = tanh_affine(&p.w1, &p.b1, &x);
    let r = tanh_affine(&p.w2, &p.b2, &y);
    let mut sq = 0.0;
    for i in 0..x.len() {
        sq += (x[i] - r[i]) * (x[i] - r[i]);
    }
    (y, 0.5 * sq)
}

pub fn brute_force_greedy(tokens: &[usize], table: &EmbeddingTable, p: &RaeParams) -> GreedyRun {
    let d = table.dim();
    let mut nodes: Vec<(Vec<f64>, (usize, usize))> = tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (
                (0..d).map(|k| table.matrix().get(k, t)).collect(),
                (i, i + 1),
            )
        })
        .collect();
    let mut merges = Vec::new();
    let mut total_error = 0.0;
    while nodes.len() > 1 {
        let candidates: Vec<(Vec<f64>, f64)> = (0..nodes.len() - 1)
            .map(|i| merge_error(&nodes[i].0, &nodes[i + 1].0, p))
            .collect();
        let mut best = 0;
        for i in 1..candidates.len() {
            if candidates[i].1 < candidates[best].1 {
                best = i;
            }
        }
        let span = (nodes[best].1 .0, nodes[best + 1].1 .1);
        let (parent, err) = candidates.into_iter().nth(best).unwrap();
        total_error += err;
        merges.push(span);
        nodes.splice(best..best + 2, [(parent, span)]);
    }
    GreedyRun {
        merges,
        total_error,
        root: nodes.pop().unwrap().0,
    }
}

/// Loop-based attention: projections, matching matrix, pooled weights and
/// attended phrase vectors.
pub struct AttentionReference {
    pub b: Vec<Vec<f64>>,
    pub a_s: Vec<f64>,
    pub a_t: Vec<f64>,
    pub p_s: Vec<f64>,
    pub p_t: Vec<f64>,
}

fn project(w: &Matrix, bias: &[f64], m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.cols())
        .map(|i| {
            (0..w.rows())
                .map(|k| {
                    let mut acc = bias[k];
                    for j in 0..w.cols() {
                        acc += w.get(k, j) * m.get(j, i);
                    }
                    acc.tanh()
                })
                .collect()
        })
        .collect()
}

fn reference_softmax(x: &[f64]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let mut z = 0.0;
    for v in &e {
        z += v;
    }
    e.iter().map(|v| v / z).collect()
}

fn pool(m: &Matrix, a: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|k| {
            let mut acc = 0.0;
            for (i, ai) in a.iter().enumerate() {
                acc += ai * m.get(k, i);
            }
            acc
        })
        .collect()
}

pub fn reference_attention(
    m_s: &Matrix,
    m_t: &Matrix,
    w_s: &Matrix,
    w_t: &Matrix,
    bias: &[f64],
) -> AttentionReference {
    let a_src = project(w_s, bias, m_s);
    let a_tgt = project(w_t, bias, m_t);
    let b: Vec<Vec<f64>> = a_src
        .iter()
        .map(|u| {
            a_tgt
                .iter()
                .map(|v| {
                    let mut z = 0.0;
                    for k in 0..u.len() {
                        z += u[k] * v[k];
                    }
                    1.0 / (1.0 + (-z).exp())
                })
                .collect()
        })
        .collect();
    let rows: Vec<f64> = b.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..a_tgt.len())
        .map(|j| b.iter().map(|r| r[j]).sum())
        .collect();
    let a_s = reference_softmax(&rows);
    let a_t = reference_softmax(&cols);
    let p_s = pool(m_s, &a_s);
    let p_t = pool(m_t, &a_t);
    AttentionReference {
        b,
        a_s,
        a_t,
        p_s,
        p_t,
    }
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major) by
/// Cholesky factorization.
pub fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_battrae"))
}
