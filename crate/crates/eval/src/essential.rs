//! Minimal five-point essential-matrix solver and pose decomposition.
//!
//! The four-dimensional null space of the epipolar constraints is combined
//! as `E = x X + y Y + z Z + W`. The cubic constraints `det E = 0` and
//! `2 E E^T E - tr(E E^T) E = 0` are eliminated down to a 10x10 action
//! matrix for multiplication by `x`, whose real eigenvectors give the
//! solutions.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};

/// Dense polynomial in `(x, y, z)` of total degree at most 3, indexed by
/// exponents `a * 16 + b * 4 + c`.
#[derive(Clone, Copy)]
struct Poly([f64; 64]);

impl Poly {
    fn zero() -> Self {
        Poly([0.0; 64])
    }

    fn linear(x: f64, y: f64, z: f64, c: f64) -> Self {
        let mut p = Self::zero();
        p.0[16] = x;
        p.0[4] = y;
        p.0[1] = z;
        p.0[0] = c;
        p
    }

    fn mul(&self, o: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let (ia, ib, ic) = (i / 16, (i / 4) % 4, i % 4);
            for (j, &b) in o.0.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let (ja, jb, jc) = (j / 16, (j / 4) % 4, j % 4);
                debug_assert!(ia + ja + ib + jb + ic + jc <= 3);
                out.0[(ia + ja) * 16 + (ib + jb) * 4 + ic + jc] += a * b;
            }
        }
        out
    }

    fn add(&self, o: &Poly) -> Poly {
        let mut out = *self;
        out.0.iter_mut().zip(&o.0).for_each(|(a, b)| *a += b);
        out
    }

    fn scale(&self, s: f64) -> Poly {
        let mut out = *self;
        out.0.iter_mut().for_each(|a| *a *= s);
        out
    }
}

/// Column order of the elimination template; the last ten form the
/// quotient-ring basis.
const MONOMIALS: [(usize, usize, usize); 20] = [
    (3, 0, 0),
    (2, 1, 0),
    (2, 0, 1),
    (1, 2, 0),
    (1, 1, 1),
    (1, 0, 2),
    (0, 3, 0),
    (0, 2, 1),
    (0, 1, 2),
    (0, 0, 3),
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];

/// Essential matrices consistent with five correspondences given in
/// normalized camera coordinates (`q2^T E q1 = 0`). Returns up to ten.
pub fn five_point(q1: &[[f64; 2]; 5], q2: &[[f64; 2]; 5]) -> Vec<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..5 {
        let [x1, y1] = q1[i];
        let [x2, y2] = q2[i];
        let row = [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    // The four right singular vectors with the smallest singular values span
    // the null space.
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let basis: Vec<[f64; 9]> = order[5..]
        .iter()
        .map(|&r| std::array::from_fn(|c| v_t[(r, c)]))
        .collect();
    let (bx, by, bz, bw) = (basis[0], basis[1], basis[2], basis[3]);
    let e: Vec<Poly> = (0..9).map(|k| Poly::linear(bx[k], by[k], bz[k], bw[k])).collect();
    let at = |r: usize, c: usize| &e[r * 3 + c];

    let det = at(0, 1)
        .mul(at(1, 2))
        .add(&at(0, 2).mul(at(1, 1)).scale(-1.0))
        .mul(at(2, 0))
        .add(&at(0, 2).mul(at(1, 0)).add(&at(0, 0).mul(at(1, 2)).scale(-1.0)).mul(at(2, 1)))
        .add(&at(0, 0).mul(at(1, 1)).add(&at(0, 1).mul(at(1, 0)).scale(-1.0)).mul(at(2, 2)));

    let mut eet = vec![Poly::zero(); 9];
    for r in 0..3 {
        for c in 0..3 {
            let mut s = Poly::zero();
            for k in 0..3 {
                s = s.add(&at(r, k).mul(at(c, k)));
            }
            eet[r * 3 + c] = s;
        }
    }
    let trace = eet[0].add(&eet[4]).add(&eet[8]);
    let mut rows = vec![det];
    for r in 0..3 {
        for c in 0..3 {
            let mut s = Poly::zero();
            for k in 0..3 {
                s = s.add(&eet[r * 3 + k].mul(at(k, c)));
            }
            rows.push(s.scale(2.0).add(&trace.mul(at(r, c)).scale(-1.0)));
        }
    }

    let mut m = DMatrix::<f64>::zeros(10, 20);
    for (i, p) in rows.iter().enumerate() {
        for (j, &(ea, eb, ec)) in MONOMIALS.iter().enumerate() {
            m[(i, j)] = p.0[ea * 16 + eb * 4 + ec];
        }
    }
    if !gauss_jordan(&mut m) {
        return Vec::new();
    }
    let mut action = DMatrix::<f64>::zeros(10, 10);
    for i in 0..6 {
        for j in 0..10 {
            action[(i, j)] = -m[(i, 10 + j)];
        }
    }
    action[(6, 0)] = 1.0;
    action[(7, 1)] = 1.0;
    action[(8, 2)] = 1.0;
    action[(9, 6)] = 1.0;

    let mut out = Vec::new();
    for lambda in action.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-8 * lambda.re.abs().max(1.0) {
            continue;
        }
        let shifted = &action - DMatrix::<f64>::identity(10, 10) * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        let v = v_t.row(k);
        if v[9].abs() < 1e-12 {
            continue;
        }
        let (x, y, z) = (v[6] / v[9], v[7] / v[9], v[8] / v[9]);
        let ev: Vec<f64> = (0..9).map(|i| x * bx[i] + y * by[i] + z * bz[i] + bw[i]).collect();
        let mat = Matrix3::from_row_slice(&ev);
        let n = mat.norm();
        if n > 0.0 && n.is_finite() {
            out.push(mat / n);
        }
    }
    out
}

/// Reduces the left 10x10 block to the identity with partial pivoting.
fn gauss_jordan(m: &mut DMatrix<f64>) -> bool {
    let (rows, cols) = m.shape();
    for c in 0..rows {
        let (p, best) = (c..rows)
            .map(|r| (r, m[(r, c)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if best < 1e-12 {
            return false;
        }
        m.swap_rows(c, p);
        let inv = 1.0 / m[(c, c)];
        for j in 0..cols {
            m[(c, j)] *= inv;
        }
        for r in 0..rows {
            if r != c {
                let f = m[(r, c)];
                if f != 0.0 {
                    for j in 0..cols {
                        m[(r, j)] -= f * m[(c, j)];
                    }
                }
            }
        }
    }
    true
}

/// Linear least-squares essential matrix from eight or more correspondences,
/// projected onto the essential manifold.
pub fn eight_point(q1: &[[f64; 2]], q2: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    eight_point_weighted(q1, q2, &vec![1.0; q1.len()])
}

/// [`eight_point`] minimizing `sum w_i (q2_i^T E q1_i)^2`.
pub fn eight_point_weighted(q1: &[[f64; 2]], q2: &[[f64; 2]], weights: &[f64]) -> Option<Matrix3<f64>> {
    if q1.len() < 8 || q1.len() != q2.len() || weights.len() != q1.len() {
        return None;
    }
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for ((a, b), &w) in q1.iter().zip(q2).zip(weights) {
        let row = SMatrix::<f64, 1, 9>::from_row_slice(&[
            b[0] * a[0],
            b[0] * a[1],
            b[0],
            b[1] * a[0],
            b[1] * a[1],
            b[1],
            a[0],
            a[1],
            1.0,
        ]);
        ata += row.transpose() * row * w;
    }
    let eig = ata.symmetric_eigen();
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let e = Matrix3::from_row_slice(eig.eigenvectors.column(k).as_slice());
    let svd = e.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let e = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t;
    Some(e / e.norm())
}

/// Linear triangulation; returns the point in the camera-1 frame.
fn triangulate(r: &Matrix3<f64>, t: &Vector3<f64>, a: &[f64; 2], b: &[f64; 2]) -> Option<Vector3<f64>> {
    let p2 = |i: usize| nalgebra::RowVector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
    let p1 = |i: usize| {
        let mut v = nalgebra::RowVector4::zeros();
        v[i] = 1.0;
        v
    };
    let mut m = nalgebra::Matrix4::<f64>::zeros();
    m.set_row(0, &(p1(2) * a[0] - p1(0)));
    m.set_row(1, &(p1(2) * a[1] - p1(1)));
    m.set_row(2, &(p2(2) * b[0] - p2(0)));
    m.set_row(3, &(p2(2) * b[1] - p2(1)));
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (k, _) = svd.singular_values.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1))?;
    let h = v_t.row(k);
    if h[3].abs() < 1e-15 {
        return None;
    }
    Some(Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Picks, among the four `(R, t)` factorizations of `e`, the one placing the
/// most correspondences in front of both cameras. Returns `(R, t, count)`.
pub fn decompose_essential(
    e: &Matrix3<f64>,
    q1: &[[f64; 2]],
    q2: &[[f64; 2]],
) -> Option<(Matrix3<f64>, Vector3<f64>, usize)> {
    let svd = e.svd(true, true);
    let mut u = svd.u?;
    let mut v_t = svd.v_t?;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t0: Vector3<f64> = u.column(2).into_owned();
    let candidates = [
        (u * w * v_t, t0),
        (u * w * v_t, -t0),
        (u * w.transpose() * v_t, t0),
        (u * w.transpose() * v_t, -t0),
    ];
    candidates
        .into_iter()
        .map(|(r, t)| {
            let count = q1
                .iter()
                .zip(q2)
                .filter(|(a, b)| {
                    triangulate(&r, &t, a, b).is_some_and(|x| {
                        let x2 = r * x + t;
                        x.z > 0.0 && x2.z > 0.0
                    })
                })
                .count();
            (r, t, count)
        })
        .max_by_key(|c| c.2)
}
