//! Kuhn triangulations of hyperbox regions with optional origin exclusion.
//!
//! Each grid cell is split into `n!` simplices by the standard Kuhn
//! (Freudenthal) construction, which is face-compatible across cells. Per
//! simplex we store the matrix `X` whose j-th row is `x_j - x_0`, its
//! inverse, and the Taylor-remainder scale constants `c_j`: the squared-
//! distance form when the simplex is origin-free, or the distance-product
//! form (which vanishes at the origin vertex) when the origin is a vertex.

use nalgebra::{DMatrix, DVector};

use crate::expr::BoxRegion;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum MeshError {
    #[error("divisions must be positive on every axis")]
    BadDivisions,
    #[error("the origin lies strictly inside the region but is not a grid vertex")]
    OriginNotOnGrid,
    #[error("exclusion box is not aligned to whole grid cells centered on the origin")]
    ExclusionNotCellAligned,
    #[error("point {0:?} lies outside the triangulated set")]
    PointOutside(Vec<f64>),
    #[error("simplex {0} is affinely dependent (|det X| <= 1e-12)")]
    SingularSimplex(usize),
}

/// Per-simplex geometric data.
#[derive(Debug, Clone)]
pub struct SimplexGeometry {
    /// n x n matrix with `x_j - x_0` as its j-th row.
    pub x: DMatrix<f64>,
    pub x_inv: DMatrix<f64>,
    /// n+1 Taylor-remainder scale constants `c_j`.
    pub c: Vec<f64>,
    pub contains_origin: bool,
    pub bounding_box: BoxRegion,
}

impl SimplexGeometry {
    /// Geometry of a free-standing simplex given its n+1 vertices. If the
    /// origin is a vertex it must be listed first; the distance-product
    /// constants are then used in place of the squared-distance ones.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, MeshError> {
        let n = points.len() - 1;
        assert!(points.iter().all(|p| p.len() == n), "need n+1 points in R^n");
        let contains_origin = points.iter().any(|p| p.iter().all(|&c| c == 0.0));
        if contains_origin {
            assert!(
                points[0].iter().all(|&c| c == 0.0),
                "origin vertex must be listed first"
            );
        }
        let mut x = DMatrix::zeros(n, n);
        for j in 1..=n {
            for k in 0..n {
                x[(j - 1, k)] = points[j][k] - points[0][k];
            }
        }
        let det = x.clone().determinant();
        if det.abs() <= 1e-12 {
            return Err(MeshError::SingularSimplex(0));
        }
        let x_inv = x.clone().try_inverse().ok_or(MeshError::SingularSimplex(0))?;
        let c = remainder_constants(points, contains_origin);
        let mut lo = points[0].clone();
        let mut hi = points[0].clone();
        for p in &points[1..] {
            for k in 0..n {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Ok(SimplexGeometry {
            x,
            x_inv,
            c,
            contains_origin,
            bounding_box: BoxRegion::new(lo, hi),
        })
    }
}

fn remainder_constants(points: &[Vec<f64>], contains_origin: bool) -> Vec<f64> {
    let n = points.len() - 1;
    if contains_origin {
        // ||x_j - x_0|| (max_k ||x_k - x_0|| + ||x_j - x_0||); zero at j = 0.
        let dists: Vec<f64> = points.iter().map(|p| dist(p, &points[0])).collect();
        let dmax = dists.iter().cloned().fold(0.0, f64::max);
        dists.iter().map(|&dj| dj * (dmax + dj)).collect()
    } else {
        // max_nu ||x_j - x_nu||^2.
        (0..=n)
            .map(|j| {
                (0..=n)
                    .map(|nu| {
                        let d = dist(&points[j], &points[nu]);
                        d * d
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// A triangulation of `region \ exclusion` into Kuhn simplices.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub dim: usize,
    /// Kept grid vertices, in lexicographic grid order.
    pub vertices: Vec<Vec<f64>>,
    /// Each simplex as n+1 vertex indices. If the origin is a vertex of the
    /// simplex it is stored at local index 0; otherwise the Kuhn walk order
    /// is kept.
    pub simplices: Vec<Vec<usize>>,
    pub region: BoxRegion,
    pub exclusion: Option<BoxRegion>,
    /// Maximum simplex diameter (longest edge over the whole mesh).
    pub max_diameter: f64,
    grid_lo: Vec<f64>,
    grid_delta: Vec<f64>,
    grid_cells: Vec<usize>,
    /// Flat cell index -> first simplex id of that cell (n! consecutive), or
    /// usize::MAX for excluded cells.
    cell_start: Vec<usize>,
    n_factorial: usize,
    geometries: Vec<SimplexGeometry>,
}

/// Builds the Kuhn triangulation of `region` with `divisions[k]` cells per
/// axis, omitting cells inside the exclusion box.
pub fn kuhn_triangulate(
    region: &BoxRegion,
    divisions: &[usize],
    exclusion: Option<&BoxRegion>,
) -> Result<Triangulation, MeshError> {
    let n = region.dim();
    assert_eq!(divisions.len(), n, "divisions must match region dimension");
    if divisions.iter().any(|&d| d == 0) {
        return Err(MeshError::BadDivisions);
    }
    let delta: Vec<f64> = (0..n)
        .map(|k| (region.hi[k] - region.lo[k]) / divisions[k] as f64)
        .collect();
    let grid_tol: f64 = 1e-9 * delta.iter().cloned().fold(f64::INFINITY, f64::min);

    let on_grid = |v: f64, k: usize| -> bool {
        let t = (v - region.lo[k]) / delta[k];
        (t - t.round()).abs() * delta[k] <= grid_tol
    };

    let origin_strictly_inside = (0..n).all(|k| region.lo[k] < 0.0 && 0.0 < region.hi[k]);
    if origin_strictly_inside && !(0..n).all(|k| on_grid(0.0, k)) {
        return Err(MeshError::OriginNotOnGrid);
    }

    if let Some(ex) = exclusion {
        assert_eq!(ex.dim(), n, "exclusion dimension mismatch");
        for k in 0..n {
            if !on_grid(ex.lo[k], k) || !on_grid(ex.hi[k], k) {
                return Err(MeshError::ExclusionNotCellAligned);
            }
            if (ex.lo[k] + ex.hi[k]).abs() > grid_tol {
                return Err(MeshError::ExclusionNotCellAligned);
            }
        }
    }

    let cell_counts = divisions.to_vec();
    let vert_counts: Vec<usize> = divisions.iter().map(|d| d + 1).collect();
    let total_cells: usize = cell_counts.iter().product();
    let total_grid_vertices: usize = vert_counts.iter().product();

    let vertex_coord = |idx: &[usize]| -> Vec<f64> {
        (0..n)
            .map(|k| {
                let v = region.lo[k] + idx[k] as f64 * delta[k];
                // Snap exact zeros so origin detection is robust.
                if v.abs() <= grid_tol {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    };

    let flat_vertex = |idx: &[usize]| -> usize {
        let mut f = 0;
        for k in 0..n {
            f = f * vert_counts[k] + idx[k];
        }
        f
    };

    let cell_excluded = |cell: &[usize]| -> bool {
        let Some(ex) = exclusion else { return false };
        (0..n).all(|k| {
            let center = region.lo[k] + (cell[k] as f64 + 0.5) * delta[k];
            center > ex.lo[k] && center < ex.hi[k]
        })
    };

    let permutations = lexicographic_permutations(n);

    // First pass: mark grid vertices used by kept cells.
    let mut used = vec![false; total_grid_vertices];
    let mut cell = vec![0usize; n];
    let mut kept_cells = Vec::new();
    for flat in 0..total_cells {
        unflatten(flat, &cell_counts, &mut cell);
        if cell_excluded(&cell) {
            continue;
        }
        kept_cells.push(flat);
        let mut corner = vec![0usize; n];
        for mask in 0..(1usize << n) {
            for k in 0..n {
                corner[k] = cell[k] + ((mask >> k) & 1);
            }
            used[flat_vertex(&corner)] = true;
        }
    }

    let mut vertex_id = vec![usize::MAX; total_grid_vertices];
    let mut vertices = Vec::new();
    let mut idx = vec![0usize; n];
    for (flat, &u) in used.iter().enumerate() {
        if u {
            vertex_id[flat] = vertices.len();
            unflatten(flat, &vert_counts, &mut idx);
            vertices.push(vertex_coord(&idx));
        }
    }

    let origin_vertex_id = if origin_strictly_inside {
        let idx: Vec<usize> = (0..n)
            .map(|k| ((0.0 - region.lo[k]) / delta[k]).round() as usize)
            .collect();
        let f = flat_vertex(&idx);
        (vertex_id[f] != usize::MAX).then(|| vertex_id[f])
    } else {
        None
    };

    // Second pass: emit n! Kuhn simplices per kept cell.
    let mut simplices = Vec::with_capacity(kept_cells.len() * permutations.len());
    let mut cell_start = vec![usize::MAX; total_cells];
    for &flat in &kept_cells {
        unflatten(flat, &cell_counts, &mut cell);
        cell_start[flat] = simplices.len();
        for perm in &permutations {
            let mut walk = cell.clone();
            let mut verts = Vec::with_capacity(n + 1);
            verts.push(vertex_id[flat_vertex(&walk)]);
            for &axis in perm {
                walk[axis] += 1;
                verts.push(vertex_id[flat_vertex(&walk)]);
            }
            if let Some(origin) = origin_vertex_id {
                if let Some(pos) = verts.iter().position(|&v| v == origin) {
                    // Origin-first rule overrides the Kuhn walk order.
                    let v = verts.remove(pos);
                    verts.insert(0, v);
                }
            }
            simplices.push(verts);
        }
    }

    let max_diameter = simplices
        .iter()
        .map(|s| {
            let mut d = 0.0f64;
            for a in 0..s.len() {
                for b in (a + 1)..s.len() {
                    d = d.max(dist(&vertices[s[a]], &vertices[s[b]]));
                }
            }
            d
        })
        .fold(0.0, f64::max);

    let mut tri = Triangulation {
        dim: n,
        vertices,
        simplices,
        region: region.clone(),
        exclusion: exclusion.cloned(),
        max_diameter,
        grid_lo: region.lo.clone(),
        grid_delta: delta,
        grid_cells: cell_counts,
        cell_start,
        n_factorial: permutations.len(),
        geometries: Vec::new(),
    };
    tri.geometries = (0..tri.simplices.len())
        .map(|i| tri.build_geometry(i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(tri)
}

fn unflatten(flat: usize, counts: &[usize], out: &mut [usize]) {
    let mut rest = flat;
    for k in (0..counts.len()).rev() {
        out[k] = rest % counts[k];
        rest /= counts[k];
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lexicographic_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(current: &mut Vec<usize>, remaining: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.is_empty() {
            out.push(current.clone());
            return;
        }
        for i in 0..remaining.len() {
            let v = remaining.remove(i);
            current.push(v);
            rec(current, remaining, out);
            current.pop();
            remaining.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

impl Triangulation {
    pub fn num_simplices(&self) -> usize {
        self.simplices.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Smallest grid spacing; sets integrator steps and the epsilon rule.
    pub fn min_delta(&self) -> f64 {
        self.grid_delta.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn geometry(&self, i: usize) -> &SimplexGeometry {
        &self.geometries[i]
    }

    fn build_geometry(&self, i: usize) -> Result<SimplexGeometry, MeshError> {
        let points: Vec<Vec<f64>> = self.simplices[i]
            .iter()
            .map(|&v| self.vertices[v].clone())
            .collect();
        SimplexGeometry::from_points(&points).map_err(|e| match e {
            MeshError::SingularSimplex(_) => MeshError::SingularSimplex(i),
            other => other,
        })
    }

    /// Gradient of the affine interpolant of `values` (one per local vertex)
    /// on a simplex with geometry `g`: `X^{-1} Wbar`.
    pub fn cpa_gradient(values: &[f64], g: &SimplexGeometry) -> DVector<f64> {
        let n = g.x.nrows();
        assert_eq!(values.len(), n + 1);
        let wbar = DVector::from_fn(n, |j, _| values[j + 1] - values[0]);
        &g.x_inv * wbar
    }

    /// Value of the affine interpolant of `vertex_values` at `x` on simplex `i`.
    pub fn interpolate(&self, i: usize, vertex_values: &[f64], x: &[f64]) -> f64 {
        let verts = &self.simplices[i];
        let local: Vec<f64> = verts.iter().map(|&v| vertex_values[v]).collect();
        let g = self.geometry(i);
        let grad = Self::cpa_gradient(&local, g);
        let v0 = &self.vertices[verts[0]];
        local[0]
            + grad
                .iter()
                .zip(x.iter().zip(v0.iter()))
                .map(|(gq, (xq, vq))| gq * (xq - vq))
                .sum::<f64>()
    }

    /// Locates `x` in the triangulated set, returning a simplex index and
    /// barycentric weights (nonnegative, summing to one).
    pub fn locate(&self, x: &[f64]) -> Result<(usize, Vec<f64>), MeshError> {
        let n = self.dim;
        assert_eq!(x.len(), n);
        if !self.region.contains(x, 1e-12) {
            return Err(MeshError::PointOutside(x.to_vec()));
        }
        if let Some(ex) = &self.exclusion {
            let strictly_inside =
                (0..n).all(|k| x[k] > ex.lo[k] + 1e-12 && x[k] < ex.hi[k] - 1e-12);
            if strictly_inside {
                return Err(MeshError::PointOutside(x.to_vec()));
            }
        }

        // Candidate cells: the floor cell plus the lower neighbor along any
        // axis where x sits on a grid line (covers exclusion boundaries).
        let mut axis_candidates: Vec<Vec<usize>> = Vec::with_capacity(n);
        for k in 0..n {
            let t = (x[k] - self.grid_lo[k]) / self.grid_delta[k];
            let max_cell = self.grid_cells[k] - 1;
            let floor = (t.floor() as isize).clamp(0, max_cell as isize) as usize;
            let mut cands = vec![floor];
            if (t - t.round()).abs() <= 1e-9 {
                let line = t.round() as isize;
                for c in [line - 1, line] {
                    if c >= 0 && c <= max_cell as isize && !cands.contains(&(c as usize)) {
                        cands.push(c as usize);
                    }
                }
            }
            axis_candidates.push(cands);
        }

        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        let mut choice = vec![0usize; n];
        let combos: usize = axis_candidates.iter().map(|c| c.len()).product();
        for combo in 0..combos {
            let mut rest = combo;
            for k in 0..n {
                let c = &axis_candidates[k];
                choice[k] = c[rest % c.len()];
                rest /= c.len();
            }
            let mut flat = 0usize;
            for k in 0..n {
                flat = flat * self.grid_cells[k] + choice[k];
            }
            let start = self.cell_start[flat];
            if start == usize::MAX {
                continue;
            }
            for s in start..start + self.n_factorial {
                let lam = self.barycentric(s, x);
                let worst = lam.iter().cloned().fold(f64::INFINITY, f64::min);
                if worst >= -1e-10 {
                    return Ok((s, clamp_weights(lam)));
                }
                match &best {
                    Some((_, _, w)) if *w >= worst => {}
                    _ => best = Some((s, lam, worst)),
                }
            }
        }
        // Boundary rounding can leave every candidate slightly negative.
        if let Some((s, lam, worst)) = best {
            if worst >= -1e-7 {
                return Ok((s, clamp_weights(lam)));
            }
        }
        Err(MeshError::PointOutside(x.to_vec()))
    }

    fn barycentric(&self, s: usize, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let verts = &self.simplices[s];
        let g = self.geometry(s);
        let v0 = &self.vertices[verts[0]];
        let rhs = DVector::from_fn(n, |k, _| x[k] - v0[k]);
        let lam_tail = g.x_inv.transpose() * rhs;
        let mut lam = Vec::with_capacity(n + 1);
        lam.push(1.0 - lam_tail.iter().sum::<f64>());
        lam.extend(lam_tail.iter().cloned());
        lam
    }

    /// Kept vertices lying on the exclusion boundary (the CPA/quadratic
    /// coupling set of the combined storage function).
    pub fn exclusion_boundary_vertices(&self) -> Vec<usize> {
        let Some(ex) = &self.exclusion else { return Vec::new() };
        let tol = 1e-9 * self.min_delta();
        (0..self.vertices.len())
            .filter(|&v| {
                let x = &self.vertices[v];
                (0..self.dim).all(|k| x[k] >= ex.lo[k] - tol && x[k] <= ex.hi[k] + tol)
            })
            .collect()
    }

    /// Kept vertices strictly inside the two-norm ball of radius `eps`,
    /// excluding those inside or on the exclusion box.
    pub fn vertices_strictly_in_ball(&self, eps: f64) -> Vec<usize> {
        let boundary: std::collections::BTreeSet<usize> =
            self.exclusion_boundary_vertices().into_iter().collect();
        (0..self.vertices.len())
            .filter(|&v| {
                if boundary.contains(&v) {
                    return false;
                }
                let norm = self.vertices[v].iter().map(|c| c * c).sum::<f64>().sqrt();
                norm < eps * (1.0 - 1e-9)
            })
            .collect()
    }

    /// Vertex table CSV: `id,x1,...,xn`.
    pub fn vertices_csv(&self) -> String {
        let mut out = String::from("id");
        for k in 1..=self.dim {
            out.push_str(&format!(",x{k}"));
        }
        out.push('\n');
        for (i, v) in self.vertices.iter().enumerate() {
            out.push_str(&format!("{i}"));
            for c in v {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    /// Simplex table CSV: `id,v0,...,vn,contains_origin`.
    pub fn simplices_csv(&self) -> String {
        let mut out = String::from("id");
        for j in 0..=self.dim {
            out.push_str(&format!(",v{j}"));
        }
        out.push_str(",contains_origin\n");
        for (i, s) in self.simplices.iter().enumerate() {
            out.push_str(&format!("{i}"));
            for v in s {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", self.geometry(i).contains_origin as u8));
        }
        out
    }

    /// Simplex volume |det X| / n!.
    pub fn simplex_volume(&self, i: usize) -> f64 {
        let n_fact: f64 = (1..=self.dim).map(|k| k as f64).product();
        self.geometry(i).x.clone().determinant().abs() / n_fact
    }
}

fn clamp_weights(mut lam: Vec<f64>) -> Vec<f64> {
    for l in lam.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let sum: f64 = lam.iter().sum();
    for l in lam.iter_mut() {
        *l /= sum;
    }
    lam
}
