//! Degree-3 real spherical harmonics for view-dependent color.
//!
//! Basis ordering and constants follow the usual splatting convention so
//! that PLY files interoperate with common viewers.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix3, Vector3};

/// Number of basis functions for degree 3.
pub const SH_BASIS: usize = 16;

/// 16 coefficients × 3 channels, indexed `[basis][channel]`.
pub type ShCoeffs = [[f64; 3]; SH_BASIS];

pub const SH_C0: f64 = 0.28209479177387814;
pub const SH_C1: f64 = 0.4886025119029199;
pub const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
pub const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// Offset added to the SH expansion before clamping.
pub const COLOR_OFFSET: f64 = 0.5;

/// DC coefficient that reproduces `rgb` (before clamping).
pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - COLOR_OFFSET) / SH_C0
}

/// Basis values at a unit direction.
pub fn basis(d: &Vector3<f64>) -> [f64; SH_BASIS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components (treating them as independent).
pub fn basis_jacobian(d: &Vector3<f64>) -> [[f64; 3]; SH_BASIS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [SH_C2[0] * y, SH_C2[0] * x, 0.0],
        [0.0, SH_C2[1] * z, SH_C2[1] * y],
        [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z],
        [SH_C2[3] * z, 0.0, SH_C2[3] * x],
        [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0],
        [
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ],
        [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y],
        [
            -2.0 * SH_C3[2] * x * y,
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * SH_C3[2] * y * z,
        ],
        [
            -6.0 * SH_C3[3] * x * z,
            -6.0 * SH_C3[3] * y * z,
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ],
        [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * SH_C3[4] * x * y,
            8.0 * SH_C3[4] * x * z,
        ],
        [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)],
        [
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            -6.0 * SH_C3[6] * x * y,
            0.0,
        ],
    ]
}

/// Unclamped color: `Σ_k Y_k(d) h_k + 0.5` per channel.
pub fn eval_sh_raw(h: &ShCoeffs, view_dir: &Vector3<f64>) -> [f64; 3] {
    let y = basis(view_dir);
    let mut rgb = [COLOR_OFFSET; 3];
    for (yk, hk) in y.iter().zip(h) {
        for c in 0..3 {
            rgb[c] += yk * hk[c];
        }
    }
    rgb
}

/// View-dependent color, clamped below at 0.
pub fn eval_sh(h: &ShCoeffs, view_dir: &Vector3<f64>) -> [f64; 3] {
    eval_sh_raw(h, view_dir).map(|v| v.max(0.0))
}

/// Band-wise linear map that carries coefficients through a rotation.
///
/// For `R` taking local directions to world directions, `apply` returns
/// world coefficients whose color at world direction `d` equals the local
/// color at `Rᵀ d`. Band 0 is untouched. The blocks are orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ShRotation {
    /// Blocks for bands 1, 2, 3 (sizes 3, 5, 7), row-major.
    blocks: [DMatrix<f64>; 3],
}

/// First coefficient index of band `l`.
const fn band_start(l: usize) -> usize {
    l * l
}

/// Fixed, well-spread sample directions (golden-angle spiral).
fn sample_directions() -> Vec<Vector3<f64>> {
    let n = 32;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64 + 0.3;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Basis values of band `l` at each direction, one row per direction.
fn band_matrix(l: usize, dirs: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(dirs.len(), 2 * l + 1, |i, j| basis(&dirs[i])[band_start(l) + j])
}

/// Least-squares solvers `(AᵀA)⁻¹Aᵀ` for the band matrices at the sample
/// directions. The fit is exact because a rotated band stays in its band.
fn sample_solvers() -> &'static [DMatrix<f64>; 3] {
    static SOLVERS: OnceLock<[DMatrix<f64>; 3]> = OnceLock::new();
    SOLVERS.get_or_init(|| {
        let dirs = sample_directions();
        [1, 2, 3].map(|l| {
            let a = band_matrix(l, &dirs);
            let normal = (a.transpose() * &a).try_inverse().expect("sample directions span every band");
            normal * a.transpose()
        })
    })
}

impl ShRotation {
    pub fn identity() -> Self {
        Self { blocks: [3, 5, 7].map(|n| DMatrix::identity(n, n)) }
    }

    /// Blocks for the local-to-world rotation `r`.
    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        let dirs = sample_directions();
        let rotated: Vec<Vector3<f64>> = dirs.iter().map(|d| r.transpose() * d).collect();
        let solvers = sample_solvers();
        let blocks = [1, 2, 3].map(|l| &solvers[l - 1] * band_matrix(l, &rotated));
        Self { blocks }
    }

    fn map(&self, h: &ShCoeffs, transpose: bool) -> ShCoeffs {
        let mut out = *h;
        for (b, block) in self.blocks.iter().enumerate() {
            let l = b + 1;
            let start = band_start(l);
            for i in 0..2 * l + 1 {
                let mut acc = [0.0; 3];
                for j in 0..2 * l + 1 {
                    let w = if transpose { block[(j, i)] } else { block[(i, j)] };
                    for c in 0..3 {
                        acc[c] += w * h[start + j][c];
                    }
                }
                out[start + i] = acc;
            }
        }
        out
    }

    pub fn apply(&self, h: &ShCoeffs) -> ShCoeffs {
        self.map(h, false)
    }

    /// Transpose map: the inverse rotation, and the gradient pullback.
    pub fn apply_transpose(&self, h: &ShCoeffs) -> ShCoeffs {
        self.map(h, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Associated Legendre polynomial with the Condon–Shortley phase.
    fn legendre(l: i32, m: i32, x: f64) -> f64 {
        let mut pmm = 1.0;
        if m > 0 {
            let s = ((1.0 - x) * (1.0 + x)).sqrt();
            let mut fact = 1.0;
            for _ in 0..m {
                pmm *= -fact * s;
                fact += 2.0;
            }
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    fn factorial(n: i32) -> f64 {
        (1..=n).map(|v| v as f64).product()
    }

    /// Real SH from spherical coordinates, ordered m = -l..l.
    fn oracle_basis(d: &Vector3<f64>) -> Vec<f64> {
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let phi = d.y.atan2(d.x);
        let mut out = Vec::new();
        for l in 0i32..=3 {
            for m in -l..=l {
                let am = m.abs();
                let k = (((2 * l + 1) as f64) / (4.0 * std::f64::consts::PI) * factorial(l - am)
                    / factorial(l + am))
                .sqrt();
                let p = legendre(l, am, theta.cos());
                let v = match m.cmp(&0) {
                    std::cmp::Ordering::Equal => k * p,
                    std::cmp::Ordering::Greater => 2f64.sqrt() * k * (m as f64 * phi).cos() * p,
                    std::cmp::Ordering::Less => 2f64.sqrt() * k * (am as f64 * phi).sin() * p,
                };
                out.push(v);
            }
        }
        out
    }

    fn unit() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    }

    #[test]
    fn dc_only_is_view_independent() {
        let mut h = [[0.0; 3]; SH_BASIS];
        h[0] = [1.0, -0.5, 3.0];
        for d in [Vector3::x(), -Vector3::z(), Vector3::new(1., 2., 3.).normalize()] {
            let rgb = eval_sh(&h, &d);
            assert!((rgb[0] - (0.282095 + 0.5)).abs() < 1e-6);
            assert!((rgb[1] - (0.5 - 0.5 * 0.282095)).abs() < 1e-6);
            assert!((rgb[2] - (3.0 * 0.282095 + 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_coefficients_give_gray() {
        let h = [[0.0; 3]; SH_BASIS];
        assert_eq!(eval_sh(&h, &Vector3::y()), [0.5; 3]);
    }

    #[test]
    fn degree_one_term_flips_with_view_direction() {
        let mut h = [[0.0; 3]; SH_BASIS];
        h[0] = [0.3, 0.3, 0.3];
        h[2] = [0.4, -0.2, 0.1];
        let plus = eval_sh(&h, &Vector3::z());
        let minus = eval_sh(&h, &-Vector3::z());
        let oracle = oracle_basis(&Vector3::z())[2];
        for c in 0..3 {
            assert!((plus[c] - minus[c] - 2.0 * oracle * h[2][c]).abs() < 1e-12);
        }
    }

    #[test]
    fn clamps_negative_channels() {
        let mut h = [[0.0; 3]; SH_BASIS];
        h[0] = [-10.0, 0.0, 0.0];
        assert_eq!(eval_sh(&h, &Vector3::x())[0], 0.0);
    }

    proptest! {
        #[test]
        fn basis_matches_legendre_oracle(d in unit()) {
            let b = basis(&d);
            let o = oracle_basis(&d);
            for k in 0..SH_BASIS {
                prop_assert!((b[k] - o[k]).abs() < 1e-12, "basis {} : {} vs {}", k, b[k], o[k]);
            }
        }

        #[test]
        fn jacobian_matches_finite_differences(d in unit()) {
            let j = basis_jacobian(&d);
            let h = 1e-6;
            for axis in 0..3 {
                let mut p = d;
                let mut m = d;
                p[axis] += h;
                m[axis] -= h;
                let bp = basis(&p);
                let bm = basis(&m);
                for k in 0..SH_BASIS {
                    let fd = (bp[k] - bm[k]) / (2.0 * h);
                    prop_assert!((fd - j[k][axis]).abs() < 1e-7);
                }
            }
        }
    }

    fn random_coeffs(seed: u64) -> ShCoeffs {
        let mut s = seed;
        let mut h = [[0.0; 3]; SH_BASIS];
        for k in h.iter_mut().flatten() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *k = ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
        }
        h
    }

    fn rotation(ax: f64, ay: f64, az: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_euler_angles(ax, ay, az).matrix()
    }

    #[test]
    fn identity_rotation_is_identity() {
        let h = random_coeffs(3);
        let out = ShRotation::from_matrix(&Matrix3::identity()).apply(&h);
        for (a, b) in h.iter().flatten().zip(out.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn rotated_coefficients_follow_the_rotation(ax in -3.0f64..3.0, ay in -3.0f64..3.0, az in -3.0f64..3.0, d in unit(), seed in 0u64..1000) {
            let r = rotation(ax, ay, az);
            let h = random_coeffs(seed);
            let rot = ShRotation::from_matrix(&r);
            let world = rot.apply(&h);
            let a = eval_sh_raw(&world, &d);
            let b = eval_sh_raw(&h, &(r.transpose() * d));
            for c in 0..3 {
                prop_assert!((a[c] - b[c]).abs() < 1e-10);
            }
            let back = rot.apply_transpose(&world);
            for (x, y) in h.iter().flatten().zip(back.iter().flatten()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            prop_assert_eq!(world[0], h[0]);
        }

        #[test]
        fn rotations_compose(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let (r1, r2) = (rotation(a, 0.3, b), rotation(b, a, -0.7));
            let h = random_coeffs(seed);
            let composed = ShRotation::from_matrix(&(r1 * r2)).apply(&h);
            let stepwise = ShRotation::from_matrix(&r1).apply(&ShRotation::from_matrix(&r2).apply(&h));
            for (x, y) in composed.iter().flatten().zip(stepwise.iter().flatten()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
