//! Single-batch bipartite matching: greedy, Kuhn-Munkres, Gale-Shapley and
//! an exhaustive oracle.
//!
//! Rows are orders and columns are drivers. Every solver returns a
//! one-to-one assignment that never uses a forbidden entry. The optimal
//! solvers ([`km_match`], [`brute_force_match`]) rank assignments first by
//! the number of pairs, then by total cost (or gain): a dispatcher never
//! leaves a feasible pair unmatched just to lower the cost sum.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `(row, col)` pairs, sorted by row.
pub type Assignment = Vec<(usize, usize)>;

/// Dense rectangular matrix with optional (forbidden) entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Option<f64>>,
    sense: Sense,
}

impl CostMatrix {
    /// All entries forbidden until set.
    pub fn new(rows: usize, cols: usize, sense: Sense) -> Self {
        Self { rows, cols, entries: vec![None; rows * cols], sense }
    }

    pub fn from_rows(rows: &[Vec<f64>], sense: Sense) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(rows.len(), cols, sense);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged matrix");
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, Some(v));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.entries[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Option<f64>) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut t = CostMatrix::new(self.cols, self.rows, self.sense);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Sum of the assigned entries, in row order.
    pub fn total(&self, a: &[(usize, usize)]) -> f64 {
        a.iter().map(|&(r, c)| self.get(r, c).expect("assignment uses a forbidden entry")).sum()
    }

    /// True if `a` is better than `b` under (cardinality, objective).
    fn better(&self, a: (usize, f64), b: (usize, f64)) -> bool {
        if a.0 != b.0 {
            return a.0 > b.0;
        }
        match self.sense {
            Sense::Minimize => a.1 < b.1,
            Sense::Maximize => a.1 > b.1,
        }
    }

    fn eligible(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).filter_map(move |c| self.get(r, c).map(|v| (r, c, v))))
    }
}

/// Repeatedly takes the best remaining entry; ties go to the smallest (row, col).
pub fn greedy_match(m: &CostMatrix) -> Assignment {
    let mut entries: Vec<(usize, usize, f64)> = m.eligible().collect();
    entries.sort_by(|a, b| {
        let by_value = match m.sense {
            Sense::Minimize => a.2.total_cmp(&b.2),
            Sense::Maximize => b.2.total_cmp(&a.2),
        };
        by_value.then((a.0, a.1).cmp(&(b.0, b.1)))
    });
    let mut row_used = vec![false; m.rows];
    let mut col_used = vec![false; m.cols];
    let mut out = Vec::new();
    for (r, c, _) in entries {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            out.push((r, c));
        }
    }
    out.sort_unstable();
    out
}

/// Optimal assignment by the Hungarian method (shortest augmenting paths
/// with potentials), O(n² m) for n = min(rows, cols).
pub fn km_match(m: &CostMatrix) -> Assignment {
    if m.rows == 0 || m.cols == 0 || m.eligible().next().is_none() {
        return Vec::new();
    }
    if m.rows > m.cols {
        let mut a: Assignment = km_match(&m.transpose()).into_iter().map(|(r, c)| (c, r)).collect();
        a.sort_unstable();
        return a;
    }
    let (n, w) = (m.rows, m.cols);
    let (lo, hi) = m
        .eligible()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, _, v)| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    // Any assignment with one more real pair beats any with one fewer.
    let forbidden = n as f64 * span + 1.0;
    let cost = |r: usize, c: usize| -> f64 {
        match (m.get(r, c), m.sense) {
            (Some(v), Sense::Minimize) => v - lo,
            (Some(v), Sense::Maximize) => hi - v,
            (None, _) => forbidden,
        }
    };

    // 1-indexed rows and columns; column 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; w + 1];
    let mut owner = vec![0usize; w + 1];
    let mut way = vec![0usize; w + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; w + 1];
        let mut used = vec![false; w + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=w {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=w {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Assignment = (1..=w)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .filter(|&(r, c)| m.get(r, c).is_some())
        .collect();
    out.sort_unstable();
    out
}

/// Preference lists derived from a cost matrix: each side ranks its
/// eligible partners best first (nearer or pricier), ties by index.
pub fn preferences_from_cost(m: &CostMatrix) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let rank = |items: &mut Vec<(usize, f64)>| {
        items.sort_by(|a, b| {
            let by_value = match m.sense {
                Sense::Minimize => a.1.total_cmp(&b.1),
                Sense::Maximize => b.1.total_cmp(&a.1),
            };
            by_value.then(a.0.cmp(&b.0))
        });
        items.iter().map(|&(i, _)| i).collect::<Vec<_>>()
    };
    let rows = (0..m.rows)
        .map(|r| rank(&mut (0..m.cols).filter_map(|c| m.get(r, c).map(|v| (c, v))).collect()))
        .collect();
    let cols = (0..m.cols)
        .map(|c| rank(&mut (0..m.rows).filter_map(|r| m.get(r, c).map(|v| (r, v))).collect()))
        .collect();
    (rows, cols)
}

/// Order-proposing deferred acceptance. Lists may be incomplete; a pair
/// can only form if each side lists the other. Returns `(order, driver)`.
pub fn gs_match(order_prefs: &[Vec<usize>], driver_prefs: &[Vec<usize>]) -> Assignment {
    let n_drivers = driver_prefs.len();
    let rank: Vec<Vec<Option<usize>>> = driver_prefs
        .iter()
        .map(|prefs| {
            let mut r = vec![None; order_prefs.len()];
            for (k, &o) in prefs.iter().enumerate() {
                if o < r.len() {
                    r[o] = Some(k);
                }
            }
            r
        })
        .collect();
    let mut next = vec![0usize; order_prefs.len()];
    let mut holder: Vec<Option<usize>> = vec![None; n_drivers];
    let mut free: Vec<usize> = (0..order_prefs.len()).rev().collect();
    while let Some(o) = free.pop() {
        let Some(&d) = order_prefs[o].get(next[o]) else { continue };
        next[o] += 1;
        let Some(my_rank) = rank.get(d).and_then(|r| r[o]) else {
            free.push(o);
            continue;
        };
        match holder[d] {
            None => holder[d] = Some(o),
            Some(cur) if my_rank < rank[d][cur].expect("holder is listed") => {
                holder[d] = Some(o);
                free.push(cur);
            }
            Some(_) => free.push(o),
        }
    }
    let mut out: Assignment = holder.iter().enumerate().filter_map(|(d, o)| o.map(|o| (o, d))).collect();
    out.sort_unstable();
    out
}

/// Exhaustive search over every one-to-one assignment.
///
/// Refuses instances whose short side exceeds 8.
pub fn brute_force_match(m: &CostMatrix) -> Result<Assignment> {
    let short = m.rows.min(m.cols);
    if short > 8 {
        return Err(Error::TooLarge(short));
    }
    if m.rows > m.cols {
        let mut a: Assignment = brute_force_match(&m.transpose())?.into_iter().map(|(r, c)| (c, r)).collect();
        a.sort_unstable();
        return Ok(a);
    }
    struct Search<'a> {
        m: &'a CostMatrix,
        used: Vec<bool>,
        current: Vec<(usize, usize)>,
        best: Option<(usize, f64, Assignment)>,
    }
    impl Search<'_> {
        fn run(&mut self, row: usize) {
            if row == self.m.rows {
                let score = (self.current.len(), self.m.total(&self.current));
                let improves = match &self.best {
                    None => true,
                    Some((n, t, _)) => self.m.better(score, (*n, *t)),
                };
                if improves {
                    self.best = Some((score.0, score.1, self.current.clone()));
                }
                return;
            }
            for c in 0..self.m.cols {
                if !self.used[c] && self.m.get(row, c).is_some() {
                    self.used[c] = true;
                    self.current.push((row, c));
                    self.run(row + 1);
                    self.current.pop();
                    self.used[c] = false;
                }
            }
            self.run(row + 1);
        }
    }
    let mut s = Search { m, used: vec![false; m.cols], current: Vec::new(), best: None };
    s.run(0);
    Ok(s.best.map(|(_, _, a)| a).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn min(rows: &[Vec<f64>]) -> CostMatrix {
        CostMatrix::from_rows(rows, Sense::Minimize)
    }

    fn one_to_one(a: &[(usize, usize)]) -> bool {
        let mut r: Vec<_> = a.iter().map(|p| p.0).collect();
        let mut c: Vec<_> = a.iter().map(|p| p.1).collect();
        r.sort_unstable();
        c.sort_unstable();
        r.windows(2).all(|w| w[0] != w[1]) && c.windows(2).all(|w| w[0] != w[1])
    }

    #[test]
    fn greedy_examples() {
        let m = min(&[vec![5.0]]);
        assert_eq!(greedy_match(&m), vec![(0, 0)]);
        let m = min(&[vec![1.0, 2.0], vec![2.0, 100.0]]);
        let g = greedy_match(&m);
        assert_eq!(g, vec![(0, 0), (1, 1)]);
        assert_eq!(m.total(&g), 101.0);
        assert!(greedy_match(&CostMatrix::new(3, 2, Sense::Minimize)).is_empty());
    }

    #[test]
    fn km_examples() {
        let m = min(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]]);
        assert_eq!(m.total(&km_match(&m)), 5.0);
        let m = min(&[vec![1.0, 2.0], vec![2.0, 100.0]]);
        let a = km_match(&m);
        assert_eq!(a, vec![(0, 1), (1, 0)]);
        assert_eq!(m.total(&a), 4.0);
        let m = min(&[vec![0.0, 9.0, 9.0], vec![9.0, 0.0, 9.0], vec![9.0, 9.0, 0.0]]);
        assert_eq!(km_match(&m), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn km_maximizes_cardinality_before_cost() {
        // Taking (0,0) alone is cheaper, but blocks row 1 entirely.
        let mut m = CostMatrix::new(2, 2, Sense::Minimize);
        m.set(0, 0, Some(1.0));
        m.set(0, 1, Some(10.0));
        m.set(1, 0, Some(10.0));
        assert_eq!(km_match(&m), vec![(0, 1), (1, 0)]);
        assert_eq!(brute_force_match(&m).unwrap(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn km_rectangular_and_maximize() {
        let m = CostMatrix::from_rows(&[vec![3.0, 9.0, 1.0]], Sense::Maximize);
        assert_eq!(km_match(&m), vec![(0, 1)]);
        let m = CostMatrix::from_rows(&[vec![3.0], vec![9.0], vec![1.0]], Sense::Minimize);
        assert_eq!(km_match(&m), vec![(2, 0)]);
    }

    #[test]
    fn brute_force_examples() {
        let m = min(&[vec![7.0, 2.0, 9.0]]);
        assert_eq!(brute_force_match(&m).unwrap(), vec![(0, 1)]);
        assert!(brute_force_match(&CostMatrix::new(0, 0, Sense::Minimize)).unwrap().is_empty());
        assert!(matches!(brute_force_match(&CostMatrix::new(9, 9, Sense::Minimize)), Err(Error::TooLarge(9))));
    }

    #[test]
    fn gs_examples() {
        assert_eq!(gs_match(&[vec![0]], &[vec![0]]), vec![(0, 0)]);
        // Both orders prefer driver A (0); A prefers order 1 (index 1 here is "o1").
        let orders = vec![vec![0, 1], vec![0, 1]];
        let drivers = vec![vec![0, 1], vec![0, 1]];
        assert_eq!(gs_match(&orders, &drivers), vec![(0, 0), (1, 1)]);
        let aligned_o = vec![vec![1, 0], vec![0, 1]];
        let aligned_d = vec![vec![1, 0], vec![0, 1]];
        assert_eq!(gs_match(&aligned_o, &aligned_d), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn gs_respects_acceptability() {
        // Driver 0 does not list order 1.
        let a = gs_match(&[vec![0], vec![0]], &[vec![0]]);
        assert_eq!(a, vec![(0, 0)]);
    }

    #[test]
    fn preferences_follow_cost() {
        let m = min(&[vec![3.0, 1.0], vec![1.0, 1.0]]);
        let (o, d) = preferences_from_cost(&m);
        assert_eq!(o, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(d, vec![vec![1, 0], vec![0, 1]]);
    }

    fn matrix() -> impl Strategy<Value = CostMatrix> {
        (1usize..6, 1usize..6, any::<bool>()).prop_flat_map(|(r, c, maximize)| {
            proptest::collection::vec(proptest::option::weighted(0.8, 0u8..30), r * c).prop_map(move |v| {
                let sense = if maximize { Sense::Maximize } else { Sense::Minimize };
                let mut m = CostMatrix::new(r, c, sense);
                for (i, x) in v.into_iter().enumerate() {
                    m.set(i / c, i % c, x.map(f64::from));
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn solvers_are_one_to_one_and_respect_forbidden(m in matrix()) {
            for a in [greedy_match(&m), km_match(&m), brute_force_match(&m).unwrap()] {
                prop_assert!(one_to_one(&a));
                prop_assert!(a.iter().all(|&(r, c)| m.get(r, c).is_some()));
            }
        }

        #[test]
        fn km_matches_brute_force(m in matrix()) {
            let k = km_match(&m);
            let b = brute_force_match(&m).unwrap();
            prop_assert_eq!(k.len(), b.len());
            prop_assert_eq!(m.total(&k), m.total(&b));
        }
    }
}
