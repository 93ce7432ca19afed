//! Uniform cell-centred velocity grid and densities on it.
//!
//! Values are stored row by row: all `v_x` cells of the first `v_y` row,
//! then the next row, so index `j * n_x + i` addresses cell `(i, j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    n_x: usize,
    n_y: usize,
    epsilon: f64,
}

impl VelocityGrid {
    /// `n_x` cells on `[0, 1]` and `n_y` cells on `[-epsilon, epsilon]`.
    pub fn new(n_x: usize, n_y: usize, epsilon: f64) -> Result<Self> {
        if n_x == 0 {
            return Err(Error::param("n_x", "need at least one cell"));
        }
        if n_y == 0 {
            return Err(Error::param("n_y", "need at least one cell"));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::param("epsilon", "must lie in (0, 1]"));
        }
        Ok(Self { n_x, n_y, epsilon })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dv_x(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    pub fn dv_y(&self) -> f64 {
        2.0 * self.epsilon / self.n_y as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dv_x() * self.dv_y()
    }

    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n_x as f64
    }

    pub fn y_center(&self, j: usize) -> f64 {
        -self.epsilon + (j as f64 + 0.5) * self.dv_y()
    }

    /// Interface `i` sits at `i * dv_x`; `0` and `n_x` are the domain ends.
    pub fn x_interface(&self, i: usize) -> f64 {
        i as f64 / self.n_x as f64
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x_center(i)).collect()
    }

    pub fn y_centers(&self) -> Vec<f64> {
        (0..self.n_y).map(|j| self.y_center(j)).collect()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n_x + i
    }

    /// Cell containing `v_x`; the right end belongs to the last cell.
    pub fn x_cell(&self, v_x: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&v_x) {
            return None;
        }
        Some(((v_x * self.n_x as f64) as usize).min(self.n_x - 1))
    }

    /// Cell containing `v_y`; the right end belongs to the last cell.
    pub fn y_cell(&self, v_y: f64) -> Option<usize> {
        if !(-self.epsilon..=self.epsilon).contains(&v_y) {
            return None;
        }
        let s = (v_y + self.epsilon) / self.dv_y();
        Some((s as usize).min(self.n_y - 1))
    }

    /// Integer block sizes `(fx, fy)` mapping `fine` onto `self`.
    pub fn refinement_factors(&self, fine: &VelocityGrid) -> Result<(usize, usize)> {
        if (self.epsilon - fine.epsilon).abs() > 1e-12 {
            return Err(Error::GridMismatch("different lateral bounds".into()));
        }
        if fine.n_x % self.n_x != 0 || fine.n_y % self.n_y != 0 {
            return Err(Error::GridMismatch(format!(
                "{}x{} cells do not nest inside {}x{}",
                fine.n_x, fine.n_y, self.n_x, self.n_y
            )));
        }
        Ok((fine.n_x / self.n_x, fine.n_y / self.n_y))
    }
}

/// Mean speeds and energies of a density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub u_x: f64,
    pub u_y: f64,
    pub e_x: f64,
    pub e_y: f64,
}

impl MomentSet {
    pub fn var_x(&self) -> f64 {
        self.e_x - self.u_x * self.u_x
    }

    pub fn var_y(&self) -> f64 {
        self.e_y - self.u_y * self.u_y
    }
}

/// Non-negative density per unit velocity area on a [`VelocityGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridDistribution {
    grid: VelocityGrid,
    values: Vec<f64>,
}

impl GridDistribution {
    /// Wraps raw values without normalising them.
    pub fn from_values(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input(format!(
                "cell {k} holds {} (must be finite and non-negative)",
                values[k]
            )));
        }
        Ok(Self { grid, values })
    }

    /// Like [`from_values`](Self::from_values) but rescaled to unit mass.
    pub fn normalized(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        let mut d = Self::from_values(grid, values)?;
        d.normalize()?;
        Ok(d)
    }

    /// All mass in cell `(i, j)`.
    pub fn point_mass(grid: VelocityGrid, i: usize, j: usize) -> Result<Self> {
        if i >= grid.n_x || j >= grid.n_y {
            return Err(Error::GridMismatch(format!("cell ({i}, {j}) outside grid")));
        }
        let mut values = vec![0.0; grid.len()];
        values[grid.index(i, j)] = 1.0 / grid.cell_area();
        Ok(Self { grid, values })
    }

    /// Product density `fx(v_x) fy(v_y)` sampled at cell centres, normalised.
    pub fn from_product(
        grid: VelocityGrid,
        fx: impl Fn(f64) -> f64,
        fy: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let xs: Vec<f64> = grid.x_centers().into_iter().map(&fx).collect();
        let ys: Vec<f64> = grid.y_centers().into_iter().map(&fy).collect();
        let mut values = Vec::with_capacity(grid.len());
        for y in &ys {
            values.extend(xs.iter().map(|x| x * y));
        }
        Self::normalized(grid, values)
    }

    /// Uniform in `v_x` on `[0, 1]` and uniform in `v_y` on `[-epsilon, epsilon]`.
    pub fn initial_condition(grid: VelocityGrid) -> Self {
        let h = 1.0 / (2.0 * grid.epsilon);
        Self {
            grid,
            values: vec![h; grid.len()],
        }
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.grid.n_x;
        &self.values[j * n..(j + 1) * n]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Degenerate(format!("cannot normalise mass {m}")));
        }
        let s = 1.0 / m;
        self.values.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    /// Midpoint-rule moments.
    pub fn moments(&self) -> MomentSet {
        let g = &self.grid;
        let xs = g.x_centers();
        let area = g.cell_area();
        let mut m = MomentSet::default();
        for j in 0..g.n_y {
            let y = g.y_center(j);
            let row = self.row(j);
            let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
            for (v, x) in row.iter().zip(&xs) {
                s0 += v;
                s1 += v * x;
                s2 += v * x * x;
            }
            m.u_x += s1;
            m.e_x += s2;
            m.u_y += s0 * y;
            m.e_y += s0 * y * y;
        }
        m.u_x *= area;
        m.e_x *= area;
        m.u_y *= area;
        m.e_y *= area;
        m
    }

    /// Density of `v_x` alone (length `n_x`).
    pub fn marginal_x(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.n_x];
        for j in 0..g.n_y {
            for (o, v) in out.iter_mut().zip(self.row(j)) {
                *o += v;
            }
        }
        let dy = g.dv_y();
        out.iter_mut().for_each(|v| *v *= dy);
        out
    }

    /// Density of `v_y` alone (length `n_y`).
    pub fn marginal_y(&self) -> Vec<f64> {
        let dx = self.grid.dv_x();
        (0..self.grid.n_y)
            .map(|j| self.row(j).iter().sum::<f64>() * dx)
            .collect()
    }

    /// Conservative block-average restriction of `self` onto a nested coarse grid.
    pub fn restrict_to(&self, coarse: &VelocityGrid) -> Result<Self> {
        let (fx, fy) = coarse.refinement_factors(&self.grid)?;
        let mut values = vec![0.0; coarse.len()];
        let nf = self.grid.n_x;
        for jf in 0..self.grid.n_y {
            let jc = jf / fy;
            for i in 0..nf {
                values[coarse.index(i / fx, jc)] += self.values[jf * nf + i];
            }
        }
        let s = 1.0 / (fx * fy) as f64;
        values.iter_mut().for_each(|v| *v *= s);
        Ok(Self {
            grid: *coarse,
            values,
        })
    }
}

/// Block-average restriction of a 1D cell density by an integer factor.
pub fn restrict_1d(fine: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || fine.len() % factor != 0 {
        return Err(Error::GridMismatch(format!(
            "{} cells cannot be grouped in blocks of {factor}",
            fine.len()
        )));
    }
    Ok(fine
        .chunks(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect())
}

/// `sum |a - b| / sum |b|` over cells of a common grid.
pub fn rel_l1_error(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "{} cells against {}",
            a.len(),
            b.len()
        )));
    }
    let den: f64 = b.iter().map(|v| v.abs()).sum();
    if den == 0.0 {
        return Err(Error::Degenerate(
            "reference density is identically zero".into(),
        ));
    }
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(num / den)
}

/// Relative L1 error of `a` against `b`, restricting `b` to `a`'s grid first
/// when `b` is finer.
pub fn rel_l1_between(a: &GridDistribution, b: &GridDistribution) -> Result<f64> {
    if a.grid == b.grid {
        return rel_l1_error(&a.values, &b.values);
    }
    let coarse = b.restrict_to(&a.grid)?;
    rel_l1_error(&a.values, &coarse.values)
}
