//! Small dense 6×6 helpers and the Padé matrix exponential.

use crate::error::{Error, Result};

pub const N: usize = 6;

pub type Mat6 = [[f64; N]; N];
pub type Vec6 = [f64; N];

pub fn zeros() -> Mat6 {
    [[0.0; N]; N]
}

pub fn identity() -> Mat6 {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn matmul(a: &Mat6, b: &Mat6) -> Mat6 {
    let mut c = zeros();
    for i in 0..N {
        for k in 0..N {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..N {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

/// Row vector times matrix.
pub fn vecmul(v: &Vec6, m: &Mat6) -> Vec6 {
    let mut out = [0.0; N];
    for (k, &vk) in v.iter().enumerate() {
        if vk == 0.0 {
            continue;
        }
        for j in 0..N {
            out[j] += vk * m[k][j];
        }
    }
    out
}

pub fn scale(a: &Mat6, s: f64) -> Mat6 {
    let mut c = *a;
    c.iter_mut().flatten().for_each(|v| *v *= s);
    c
}

fn axpy(acc: &mut Mat6, s: f64, a: &Mat6) {
    for i in 0..N {
        for j in 0..N {
            acc[i][j] += s * a[i][j];
        }
    }
}

pub fn norm_1(a: &Mat6) -> f64 {
    (0..N)
        .map(|j| (0..N).map(|i| a[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Mat6, b: &Mat6) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Mat6, b: &Mat6) -> Result<Mat6> {
    let mut a = *a;
    let mut x = *b;
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
            return Err(Error::Domain("singular matrix in linear solve".into()));
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for r in col + 1..N {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..N {
                a[r][c] -= f * a[col][c];
            }
            for c in 0..N {
                x[r][c] -= f * x[col][c];
            }
        }
    }
    for col in (0..N).rev() {
        for c in 0..N {
            let mut s = x[col][c];
            for k in col + 1..N {
                s -= a[col][k] * x[k][c];
            }
            x[col][c] = s / a[col][col];
        }
    }
    Ok(x)
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &Mat6) -> Result<Mat6> {
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite entry in matrix exponential".into()));
    }
    const THETA13: f64 = 5.371920351148152;
    let norm = norm_1(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = scale(a, 0.5f64.powi(squarings));

    let b = &PADE13;
    let a2 = matmul(&a, &a);
    let a4 = matmul(&a2, &a2);
    let a6 = matmul(&a4, &a2);
    let id = identity();

    let mut u_inner = zeros();
    axpy(&mut u_inner, b[13], &a6);
    axpy(&mut u_inner, b[11], &a4);
    axpy(&mut u_inner, b[9], &a2);
    let mut u_poly = matmul(&a6, &u_inner);
    axpy(&mut u_poly, b[7], &a6);
    axpy(&mut u_poly, b[5], &a4);
    axpy(&mut u_poly, b[3], &a2);
    axpy(&mut u_poly, b[1], &id);
    let u = matmul(&a, &u_poly);

    let mut v_inner = zeros();
    axpy(&mut v_inner, b[12], &a6);
    axpy(&mut v_inner, b[10], &a4);
    axpy(&mut v_inner, b[8], &a2);
    let mut v = matmul(&a6, &v_inner);
    axpy(&mut v, b[6], &a6);
    axpy(&mut v, b[4], &a4);
    axpy(&mut v, b[2], &a2);
    axpy(&mut v, b[0], &id);

    let mut p = v;
    axpy(&mut p, 1.0, &u);
    let mut q = v;
    axpy(&mut q, -1.0, &u);
    let mut r = solve(&q, &p)?;
    for _ in 0..squarings {
        r = matmul(&r, &r);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Truncated Taylor series with heavy scaling; slow but independent of Padé.
    fn expm_taylor(a: &Mat6) -> Mat6 {
        let s = (norm_1(a) / 0.25).log2().ceil().max(0.0) as i32;
        let a = scale(a, 0.5f64.powi(s));
        let mut term = identity();
        let mut sum = identity();
        for k in 1..30 {
            term = scale(&matmul(&term, &a), 1.0 / k as f64);
            axpy(&mut sum, 1.0, &term);
        }
        for _ in 0..s {
            sum = matmul(&sum, &sum);
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(expm(&zeros()).unwrap(), identity());
    }

    #[test]
    fn two_state_closed_form() {
        let mut q = zeros();
        q[0][0] = -0.1;
        q[0][1] = 0.1;
        let p = expm(&q).unwrap();
        assert!((p[0][0] - (-0.1f64).exp()).abs() < 1e-15);
        assert!((p[0][1] - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn agrees_with_taylor_oracle() {
        let mut q = zeros();
        let rates = [0.3, 1.7, 0.02, 4.0, 0.6, 0.05, 2.2, 0.9, 0.01];
        let arcs = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 5), (1, 5), (2, 5), (3, 5), (4, 5)];
        for (&(i, j), &r) in arcs.iter().zip(&rates) {
            q[i][j] = r;
            q[i][i] -= r;
        }
        for dt in [0.01, 1.0, 7.5] {
            let qa = scale(&q, dt);
            let diff = max_abs_diff(&expm(&qa).unwrap(), &expm_taylor(&qa));
            assert!(diff < 1e-12, "dt={dt} diff={diff}");
        }
    }

    #[test]
    fn solve_recovers_identity() {
        let mut a = identity();
        a[0][3] = 2.0;
        a[4][1] = -1.5;
        a[2][2] = 3.0;
        let x = solve(&a, &a).unwrap();
        assert!(max_abs_diff(&x, &identity()) < 1e-14);
        assert!(solve(&zeros(), &identity()).is_err());
    }
}
