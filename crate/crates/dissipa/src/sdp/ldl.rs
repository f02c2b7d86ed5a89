//! Sparse LDL^T factorization for the interior-point normal equations.
//!
//! Up-looking LDL^T without pivoting (the Schur-complement matrix is
//! positive semidefinite; tiny or negative pivots are clamped by a static
//! regularization and corrected through iterative refinement). Columns are
//! permuted by reverse Cuthill-McKee on the sparsity graph, with
//! high-degree columns ordered last so the dense coupling rows of the
//! global decision variables do not inflate fill elsewhere.

/// Symmetric sparsity pattern given as cliques; the factorization works on
/// the union graph.
pub struct LdlFactor {
    n: usize,
    /// perm[k] = original index of the k-th pivot.
    perm: Vec<usize>,
    // Upper-triangular CSC pattern of the permuted matrix (diag excluded).
    up_col_ptr: Vec<usize>,
    up_row_idx: Vec<u32>,
    /// Values aligned with `up_row_idx`; diagonal stored separately.
    up_val: Vec<f64>,
    diag: Vec<f64>,
    // L factor (CSC by column, strictly lower).
    l_col_ptr: Vec<usize>,
    l_nz: Vec<usize>,
    l_row_idx: Vec<u32>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    parent: Vec<isize>,
    /// Map from caller (i, j) upper-triangle slot order to `up_val`/`diag`.
    slot_map: Vec<Slot>,
    pub regularized_pivots: usize,
}

#[derive(Clone, Copy)]
enum Slot {
    Diag(usize),
    Off(usize),
}

impl LdlFactor {
    /// Builds the symbolic factorization from the set of symmetric entries
    /// `(i, j)` with `i <= j` (duplicates allowed; they share a slot).
    /// `set_values` later receives values in the same order as `entries`.
    /// When geometric positions are known for (most of) the variables, a
    /// nested-dissection ordering replaces reverse Cuthill-McKee, which
    /// matters on three-dimensional meshes.
    pub fn symbolic(n: usize, entries: &[(usize, usize)]) -> Self {
        Self::symbolic_with_positions(n, entries, None)
    }

    pub fn symbolic_with_positions(
        n: usize,
        entries: &[(usize, usize)],
        positions: Option<&[Option<Vec<f64>>]>,
    ) -> Self {
        // Adjacency for ordering (dedup via sort).
        let mut adj_pairs: Vec<(usize, usize)> = entries
            .iter()
            .filter(|&&(i, j)| i != j)
            .flat_map(|&(i, j)| [(i, j), (j, i)])
            .collect();
        adj_pairs.sort_unstable();
        adj_pairs.dedup();
        let mut adj_ptr = vec![0usize; n + 1];
        for &(i, _) in &adj_pairs {
            adj_ptr[i + 1] += 1;
        }
        for k in 0..n {
            adj_ptr[k + 1] += adj_ptr[k];
        }
        let adj: Vec<usize> = adj_pairs.iter().map(|&(_, j)| j).collect();

        let perm = match positions {
            Some(pos) if pos.len() == n => nd_with_dense_last(n, &adj_ptr, &adj, pos),
            _ => rcm_with_dense_last(n, &adj_ptr, &adj),
        };
        let mut iperm = vec![0usize; n];
        for (k, &orig) in perm.iter().enumerate() {
            iperm[orig] = k;
        }

        // Permuted upper-triangle pattern with slot map.
        let mut unique: std::collections::HashMap<(u32, u32), usize> =
            std::collections::HashMap::with_capacity(entries.len());
        let mut pattern: Vec<(u32, u32)> = Vec::new();
        let mut slot_keys = Vec::with_capacity(entries.len());
        for &(i, j) in entries {
            let (a, b) = (iperm[i], iperm[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            let key = (r as u32, c as u32);
            let idx = *unique.entry(key).or_insert_with(|| {
                pattern.push(key);
                pattern.len() - 1
            });
            slot_keys.push(idx);
        }
        // CSC by column of the permuted upper triangle, diagonal separate.
        let mut order: Vec<usize> = (0..pattern.len()).collect();
        order.sort_unstable_by_key(|&k| (pattern[k].1, pattern[k].0));
        let mut up_col_ptr = vec![0usize; n + 1];
        let mut up_row_idx = Vec::new();
        let mut pattern_slot = vec![Slot::Diag(0); pattern.len()];
        let mut diag_count = 0usize;
        for &k in &order {
            let (r, c) = pattern[k];
            if r == c {
                pattern_slot[k] = Slot::Diag(r as usize);
                diag_count += 1;
            } else {
                pattern_slot[k] = Slot::Off(up_row_idx.len());
                up_row_idx.push(r);
                up_col_ptr[c as usize + 1] += 1;
            }
        }
        let _ = diag_count;
        for k in 0..n {
            up_col_ptr[k + 1] += up_col_ptr[k];
        }
        let slot_map: Vec<Slot> = slot_keys.iter().map(|&k| pattern_slot[k]).collect();

        // Symbolic analysis (elimination tree + column counts).
        let mut parent = vec![-1isize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz_count = vec![0usize; n];
        for j in 0..n {
            flag[j] = j;
            for p in up_col_ptr[j]..up_col_ptr[j + 1] {
                let mut i = up_row_idx[p] as usize;
                while flag[i] != j {
                    if parent[i] == -1 {
                        parent[i] = j as isize;
                    }
                    lnz_count[i] += 1;
                    flag[i] = j;
                    i = parent[i] as usize;
                }
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            l_col_ptr[j + 1] = l_col_ptr[j] + lnz_count[j];
        }
        let total = l_col_ptr[n];

        LdlFactor {
            n,
            perm,
            up_col_ptr,
            up_row_idx,
            up_val: Vec::new(),
            diag: vec![0.0; n],
            l_col_ptr,
            l_nz: vec![0; n],
            l_row_idx: vec![0; total],
            l_val: vec![0.0; total],
            d: vec![0.0; n],
            parent,
            slot_map,
            regularized_pivots: 0,
        }
    }

    /// Number of stored L entries (fill included).
    #[cfg(test)]
    pub fn l_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    /// Loads values aligned with the `entries` order given to `symbolic`,
    /// accumulating duplicates.
    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.slot_map.len());
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        if self.up_val.len() != self.up_row_idx.len() {
            self.up_val = vec![0.0; self.up_row_idx.len()];
        } else {
            self.up_val.iter_mut().for_each(|v| *v = 0.0);
        }
        for (slot, &v) in self.slot_map.iter().zip(values) {
            match *slot {
                Slot::Diag(i) => self.diag[i] += v,
                Slot::Off(p) => self.up_val[p] += v,
            }
        }
    }

    /// Numeric factorization with pivot clamping at `reg`.
    pub fn factor(&mut self, reg: f64) -> Result<(), ()> {
        let n = self.n;
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        self.regularized_pivots = 0;
        for j in 0..n {
            let mut top = n;
            flag[j] = j;
            self.l_nz[j] = 0;
            y[j] = self.diag[j];
            for p in self.up_col_ptr[j]..self.up_col_ptr[j + 1] {
                let i = self.up_row_idx[p] as usize;
                y[i] += self.up_val[p];
                let mut len = 0usize;
                let mut k = i;
                while flag[k] != j {
                    pattern[len] = k;
                    len += 1;
                    flag[k] = j;
                    k = self.parent[k] as usize;
                }
                // Reverse the path onto the stack.
                for q in (0..len).rev() {
                    top -= 1;
                    pattern[top] = pattern[q];
                }
            }
            let mut dj = y[j];
            y[j] = 0.0;
            for q in top..n {
                let i = pattern[q];
                let yi = y[i];
                y[i] = 0.0;
                let p0 = self.l_col_ptr[i];
                let p1 = p0 + self.l_nz[i];
                for p in p0..p1 {
                    y[self.l_row_idx[p] as usize] -= self.l_val[p] * yi;
                }
                let lji = yi / self.d[i];
                dj -= lji * yi;
                self.l_row_idx[p1] = j as u32;
                self.l_val[p1] = lji;
                self.l_nz[i] += 1;
            }
            if dj <= reg {
                self.regularized_pivots += 1;
                dj = reg.max(1e-300);
            }
            self.d[j] = dj;
        }
        Ok(())
    }

    /// Solves `A x = b` using the current factorization (in original index
    /// order).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|k| b[self.perm[k]]).collect();
        // L y = b
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l_col_ptr[j]..self.l_col_ptr[j] + self.l_nz[j] {
                    x[self.l_row_idx[p] as usize] -= self.l_val[p] * xj;
                }
            }
        }
        // D z = y
        for j in 0..n {
            x[j] /= self.d[j];
        }
        // L^T x = z
        for j in (0..n).rev() {
            let mut xj = x[j];
            for p in self.l_col_ptr[j]..self.l_col_ptr[j] + self.l_nz[j] {
                xj -= self.l_val[p] * x[self.l_row_idx[p] as usize];
            }
            x[j] = xj;
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[self.perm[k]] = x[k];
        }
        out
    }

    /// y = A x for the loaded symmetric values (original index order); used
    /// for iterative refinement.
    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let xp: Vec<f64> = (0..n).map(|k| x[self.perm[k]]).collect();
        let mut yp = vec![0.0f64; n];
        for j in 0..n {
            yp[j] += self.diag[j] * xp[j];
            for p in self.up_col_ptr[j]..self.up_col_ptr[j + 1] {
                let i = self.up_row_idx[p] as usize;
                let v = self.up_val[p];
                yp[i] += v * xp[j];
                yp[j] += v * xp[i];
            }
        }
        let mut out = vec![0.0; n];
        for k in 0..n {
            out[self.perm[k]] = yp[k];
        }
        out
    }
}

/// Geometric nested dissection: recursively bisect the coordinate cloud,
/// ordering each half before the (wide) separator of nodes with neighbors
/// across the cut. Dense columns and position-less nodes go last.
fn nd_with_dense_last(
    n: usize,
    adj_ptr: &[usize],
    adj: &[usize],
    positions: &[Option<Vec<f64>>],
) -> Vec<usize> {
    let degree = |v: usize| adj_ptr[v + 1] - adj_ptr[v];
    let dense_threshold = (n / 4).max(64);
    let mut tail: Vec<usize> = Vec::new();
    let mut placed = vec![false; n];
    for v in 0..n {
        if degree(v) > dense_threshold || positions[v].is_none() {
            tail.push(v);
            placed[v] = true;
        }
    }
    let mut order = Vec::with_capacity(n);
    let nodes: Vec<usize> = (0..n).filter(|&v| !placed[v]).collect();

    fn dissect(
        nodes: &[usize],
        adj_ptr: &[usize],
        adj: &[usize],
        positions: &[Option<Vec<f64>>],
        in_set: &mut [i32],
        tag: &mut i32,
        order: &mut Vec<usize>,
    ) {
        if nodes.len() <= 48 {
            order.extend_from_slice(nodes);
            return;
        }
        // Widest coordinate axis of this cluster.
        let dim = positions[nodes[0]].as_ref().map(|p| p.len()).unwrap_or(0);
        let mut axis = 0;
        let mut best_spread = -1.0;
        for k in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in nodes {
                let c = positions[v].as_ref().unwrap()[k];
                lo = lo.min(c);
                hi = hi.max(c);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = k;
            }
        }
        let mut sorted: Vec<usize> = nodes.to_vec();
        sorted.sort_unstable_by(|&a, &b| {
            positions[a].as_ref().unwrap()[axis]
                .partial_cmp(&positions[b].as_ref().unwrap()[axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let half = sorted.len() / 2;
        // Tag sides, then pull boundary nodes into the separator.
        *tag += 1;
        let side_a = *tag;
        *tag += 1;
        let side_b = *tag;
        for (i, &v) in sorted.iter().enumerate() {
            in_set[v] = if i < half { side_a } else { side_b };
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut sep = Vec::new();
        for &v in &sorted {
            let mine = in_set[v];
            let other = if mine == side_a { side_b } else { side_a };
            if adj[adj_ptr[v]..adj_ptr[v + 1]]
                .iter()
                .any(|&u| in_set[u] == other)
            {
                sep.push(v);
            } else if mine == side_a {
                a.push(v);
            } else {
                b.push(v);
            }
        }
        if a.is_empty() || b.is_empty() {
            // Degenerate split (fully coupled cluster); fall back to the
            // sorted order.
            order.extend_from_slice(&sorted);
            return;
        }
        dissect(&a, adj_ptr, adj, positions, in_set, tag, order);
        dissect(&b, adj_ptr, adj, positions, in_set, tag, order);
        order.extend_from_slice(&sep);
    }

    let mut in_set = vec![0i32; n];
    let mut tag = 0i32;
    dissect(&nodes, adj_ptr, adj, positions, &mut in_set, &mut tag, &mut order);
    order.extend(tail);
    debug_assert_eq!(order.len(), n);
    order
}

/// Reverse Cuthill-McKee with high-degree columns pushed to the end.
fn rcm_with_dense_last(n: usize, adj_ptr: &[usize], adj: &[usize]) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let degree = |v: usize| adj_ptr[v + 1] - adj_ptr[v];
    let dense_threshold = (n / 4).max(64);
    let dense: Vec<usize> = (0..n).filter(|&v| degree(v) > dense_threshold).collect();
    let is_dense: Vec<bool> = {
        let mut m = vec![false; n];
        for &v in &dense {
            m[v] = true;
        }
        m
    };

    let mut order = Vec::with_capacity(n);
    let mut visited = is_dense.clone();
    let mut queue = std::collections::VecDeque::new();
    loop {
        // Start each component from a minimum-degree unvisited node.
        let start = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree(v), v));
        let Some(start) = start else { break };
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[adj_ptr[v]..adj_ptr[v + 1]]
                .iter()
                .cloned()
                .filter(|&u| !visited[u])
                .collect();
            nbrs.sort_unstable_by_key(|&u| (degree(u), u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order.extend(dense);
    debug_assert_eq!(order.len(), n);
    order
}
