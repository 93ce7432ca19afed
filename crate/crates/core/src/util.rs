//! Small numerical helpers shared by several modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser; decorrelates derived seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for sub-task `index` of `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(parent ^ mix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Generator for chunk `stream` of a run seeded with `seed`.
///
/// Chunks get disjoint ChaCha streams, so results do not depend on how
/// chunks are scheduled across threads.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    adaptive_simpson_rel(f, a, b, tol, 0.0)
}

/// Adaptive Simpson quadrature that also accepts a panel once its error
/// estimate is below `rel_tol` times the panel value.
pub fn adaptive_simpson_rel<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    rel_tol: f64,
) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, rel_tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    rel_tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0
        || diff.abs() <= 15.0 * tol.max(rel_tol * (left + right).abs())
        || !diff.is_finite()
    {
        return left + right + diff / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, rel_tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, rel_tol, depth - 1)
}

/// Solves `A x = d` for tridiagonal `A` with sub-diagonal `lower`, diagonal
/// `diag` and super-diagonal `upper` (`lower[0]`, `upper[n-1]` unused).
#[derive(Clone, Debug)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    // Modified super-diagonal and reciprocal pivots from the forward sweep.
    upper_mod: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    /// Factorises once; fails with the offending row on a tiny pivot.
    pub fn factor(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self, (f64, usize)> {
        let n = diag.len();
        let mut upper_mod = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev_upper = 0.0;
        for i in 0..n {
            let pivot = if i == 0 {
                diag[0]
            } else {
                diag[i] - lower[i] * prev_upper
            };
            if !(pivot.abs() >= 1e-30) {
                return Err((pivot, i));
            }
            inv_pivot[i] = 1.0 / pivot;
            upper_mod[i] = if i + 1 < n {
                upper[i] * inv_pivot[i]
            } else {
                0.0
            };
            prev_upper = upper_mod[i];
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper_mod,
            inv_pivot,
        })
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        for i in 0..n {
            let prev = if i == 0 {
                0.0
            } else {
                self.lower[i] * rhs[i - 1]
            };
            rhs[i] = (rhs[i] - prev) * self.inv_pivot[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.upper_mod[i] * rhs[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-13);
        assert_relative_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-12);
        let v = adaptive_simpson(&|x: f64| 1.0 / x, 1.0, 2.0, 1e-13);
        assert_relative_eq!(v, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn tridiagonal_matches_dense_solution() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, 2.0, 3.0, 4.0];
        let mut rhs = [
            4.0 * x[0] - x[1],
            -x[0] + 4.0 * x[1] - x[2],
            -x[1] + 4.0 * x[2] - x[3],
            -x[2] + 4.0 * x[3],
        ];
        Tridiagonal::factor(&lower, &diag, &upper)
            .unwrap()
            .solve_in_place(&mut rhs);
        for (a, b) in rhs.iter().zip(x) {
            assert_relative_eq!(*a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn tridiagonal_reports_singular_pivot() {
        let err = Tridiagonal::factor(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]).unwrap_err();
        assert_eq!(err.1, 0);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(7, 0));
    }
}
