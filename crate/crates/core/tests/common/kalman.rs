//! Scalar-loop constant-velocity Kalman filter with the table parameters
//! typed in directly.

pub const N: usize = 10;
pub const M: usize = 7;

pub type Mat = [[f64; N]; N];

#[derive(Clone, Debug)]
pub struct Filter {
    pub x: [f64; N],
    pub p: Mat,
    q: [f64; N],
}

const R: [f64; M] = [0.1, 0.1, 0.1, 1e4, 0.1, 0.1, 0.1];
const P0: [f64; N] = [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4];

pub fn process_noise(group: &str) -> [f64; N] {
    match group {
        "pedestrian" => [0.0, 0.0, 0.0, 1.0, 0.4, 0.4, 0.4, 0.01, 0.01, 0.01],
        _ => [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3, 0.01, 0.01, 0.01],
    }
}

fn transition() -> Mat {
    let mut f = [[0.0; N]; N];
    for (i, row) in f.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    f[0][7] = 1.0;
    f[1][8] = 1.0;
    f[2][9] = 1.0;
    f
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            let mut s = 0.0;
            for k in 0..N {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

fn transpose(a: &Mat) -> Mat {
    let mut t = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            t[j][i] = a[i][j];
        }
    }
    t
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(mut a: [[f64; M]; M]) -> [[f64; M]; M] {
    let mut inv = [[0.0; M]; M];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..M {
        let piv = (col..M)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..M {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..M {
            if r != col {
                let f = a[r][col];
                for j in 0..M {
                    a[r][j] -= f * a[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

impl Filter {
    pub fn new(z: [f64; M], group: &str) -> Self {
        let mut x = [0.0; N];
        x[..M].copy_from_slice(&z);
        let mut p = [[0.0; N]; N];
        for i in 0..N {
            p[i][i] = P0[i];
        }
        Filter {
            x,
            p,
            q: process_noise(group),
        }
    }

    pub fn predict(&mut self) {
        let f = transition();
        let mut x = [0.0; N];
        for i in 0..N {
            for k in 0..N {
                x[i] += f[i][k] * self.x[k];
            }
        }
        self.x = x;
        let mut p = matmul(&matmul(&f, &self.p), &transpose(&f));
        for i in 0..N {
            p[i][i] += self.q[i];
        }
        self.p = p;
    }

    pub fn update(&mut self, z: [f64; M]) {
        // H picks the first M components, so H P H^T is the top-left block
        let mut s = [[0.0; M]; M];
        for i in 0..M {
            for j in 0..M {
                s[i][j] = self.p[i][j];
            }
            s[i][i] += R[i];
        }
        let s_inv = invert(s);
        // K = P H^T S^-1
        let mut k = [[0.0; M]; N];
        for i in 0..N {
            for j in 0..M {
                let mut acc = 0.0;
                for l in 0..M {
                    acc += self.p[i][l] * s_inv[l][j];
                }
                k[i][j] = acc;
            }
        }
        let mut y = [0.0; M];
        for i in 0..M {
            y[i] = z[i] - self.x[i];
        }
        for i in 0..N {
            for j in 0..M {
                self.x[i] += k[i][j] * y[j];
            }
        }
        // (I - K H) P
        let mut ikh = [[0.0; N]; N];
        for i in 0..N {
            ikh[i][i] = 1.0;
            for j in 0..M {
                ikh[i][j] -= k[i][j];
            }
        }
        let p = matmul(&ikh, &self.p);
        for i in 0..N {
            for j in 0..N {
                self.p[i][j] = 0.5 * (p[i][j] + p[j][i]);
            }
        }
        for i in 4..7 {
            self.x[i] = self.x[i].max(0.01);
        }
    }
}
