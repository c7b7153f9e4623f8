//! Closed-form 2x2 symmetric matrix routines.

use serde::{Deserialize, Serialize};

/// Symmetric matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { a: 1.0, b: 0.0, c: 1.0 };
    pub const ZERO: Sym2 = Sym2 { a: 0.0, b: 0.0, c: 0.0 };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn diag(a: f64, c: f64) -> Self {
        Self { a, b: 0.0, c }
    }

    pub fn scaled_identity(s: f64) -> Self {
        Self::diag(s, s)
    }

    /// Symmetric part of a general matrix.
    pub fn from_matrix(m: [[f64; 2]; 2]) -> Self {
        Self {
            a: m[0][0],
            b: 0.5 * (m[0][1] + m[1][0]),
            c: m[1][1],
        }
    }

    pub fn to_matrix(self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.b, self.c]]
    }

    pub fn row_major(self) -> [f64; 4] {
        [self.a, self.b, self.b, self.c]
    }

    pub fn trace(self) -> f64 {
        self.a + self.c
    }

    pub fn det(self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn frobenius(self) -> f64 {
        (self.a * self.a + 2.0 * self.b * self.b + self.c * self.c).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    pub fn sub(self, o: Sym2) -> Sym2 {
        Sym2::new(self.a - o.a, self.b - o.b, self.c - o.c)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(self) -> [f64; 2] {
        let mean = 0.5 * (self.a + self.c);
        let half_diff = 0.5 * (self.a - self.c);
        let r = half_diff.hypot(self.b);
        [mean - r, mean + r]
    }

    /// Unit eigenvectors matching [`Sym2::eigenvalues`].
    pub fn eigenvectors(self) -> [[f64; 2]; 2] {
        if self.b == 0.0 {
            return if self.a <= self.c {
                [[1.0, 0.0], [0.0, 1.0]]
            } else {
                [[0.0, 1.0], [1.0, 0.0]]
            };
        }
        let [l0, _] = self.eigenvalues();
        // (A - l0 I) v = 0 with the better conditioned of the two rows
        let v = if (self.a - l0).abs() > (self.c - l0).abs() {
            [-self.b, self.a - l0]
        } else {
            [self.c - l0, -self.b]
        };
        let n = v[0].hypot(v[1]);
        let v0 = [v[0] / n, v[1] / n];
        [v0, [-v0[1], v0[0]]]
    }

    /// Rebuilds the matrix after passing its eigenvalues through `f`.
    pub fn map_eigenvalues(self, f: impl Fn(f64) -> f64) -> Sym2 {
        let l = self.eigenvalues();
        let v = self.eigenvectors();
        let (f0, f1) = (f(l[0]), f(l[1]));
        Sym2::new(
            f0 * v[0][0] * v[0][0] + f1 * v[1][0] * v[1][0],
            f0 * v[0][0] * v[0][1] + f1 * v[1][0] * v[1][1],
            f0 * v[0][1] * v[0][1] + f1 * v[1][1] * v[1][1],
        )
    }

    /// Nearest positive semi-definite matrix in Frobenius norm.
    pub fn psd_projection(self) -> Sym2 {
        if self.eigenvalues()[0] >= 0.0 {
            return self;
        }
        self.map_eigenvalues(|l| l.max(0.0))
    }

    /// Principal square root of a positive semi-definite matrix:
    /// `sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det))`.
    pub fn sqrt(self) -> Sym2 {
        let s = self.det().max(0.0).sqrt();
        let t = (self.trace() + 2.0 * s).sqrt();
        if t == 0.0 {
            return Sym2::ZERO;
        }
        Sym2::new((self.a + s) / t, self.b / t, (self.c + s) / t)
    }

    pub fn inverse(self) -> Sym2 {
        let d = self.det();
        Sym2::new(self.c / d, -self.b / d, self.a / d)
    }

    /// `self * m * self`, symmetric whenever `m` is.
    pub fn sandwich(self, m: Sym2) -> Sym2 {
        let p = mul(self.to_matrix(), m.to_matrix());
        Sym2::from_matrix(mul(p, self.to_matrix()))
    }

    pub fn apply(self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.b * v[0] + self.c * v[1]]
    }
}

pub fn mul(x: [[f64; 2]; 2], y: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [x[0][0] * y[0][0] + x[0][1] * y[1][0], x[0][0] * y[0][1] + x[0][1] * y[1][1]],
        [x[1][0] * y[0][0] + x[1][1] * y[1][0], x[1][0] * y[0][1] + x[1][1] * y[1][1]],
    ]
}
