//! Splitting the blocks into the two super blocks `B₁`, `B₂` used by M-ADMM.

use std::collections::VecDeque;

use crate::blockspace::{estimate_subset_norm_sq, gram_cross_is_zero, BlockOperatorFamily};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How a partition was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionCase {
    I,
    II,
    III,
    User,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub b1: Vec<usize>,
    pub b2: Vec<usize>,
    /// `L_{B₁} + L_{B₂}` of the chosen split (Case I and III only).
    pub score: Option<f64>,
    pub case: PartitionCase,
}

impl Partition {
    /// Checks that `b1` and `b2` are disjoint and cover `0..n`; both are sorted.
    pub fn new(mut b1: Vec<usize>, mut b2: Vec<usize>, n: usize, case: PartitionCase) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in b1.iter().chain(&b2) {
            if i >= n {
                return Err(Error::Argument(format!("block {i} out of range for {n} blocks")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Argument(format!("block {i} assigned twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Argument(format!("block {i} not assigned")));
        }
        b1.sort_unstable();
        b2.sort_unstable();
        Ok(Partition { b1, b2, score: None, case })
    }

    /// `B₁` as given, `B₂` its complement.
    pub fn user(b1: Vec<usize>, n: usize) -> Result<Self> {
        let b2 = (0..n).filter(|i| !b1.contains(i)).collect();
        Self::new(b1, b2, n, PartitionCase::User)
    }

    pub fn n_blocks(&self) -> usize {
        self.b1.len() + self.b2.len()
    }

    pub fn n1(&self) -> usize {
        self.b1.len()
    }

    pub fn n2(&self) -> usize {
        self.b2.len()
    }

    pub fn in_b1(&self, i: usize) -> bool {
        self.b1.contains(&i)
    }
}

/// Block order by descending `‖Aᵢ‖²`, ties by index.
pub fn descending_order<T: Scalar>(norms_sq: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..norms_sq.len()).collect();
    order.sort_by(|&a, &b| norms_sq[b].partial_cmp(&norms_sq[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Scores `L_{B₁} + L_{B₂}` for `n₁ = 1..n` over the descending order.
///
/// The `‖A_{B₁}‖²` correction is used only when `a` is given and `n₁ ≤ 3`.
pub fn case1_score_curve<T: Scalar>(
    norms_sq: &[T],
    a: Option<&BlockOperatorFamily<T>>,
) -> Result<(Vec<usize>, Vec<T>)> {
    let n = norms_sq.len();
    if n == 0 {
        return Err(Error::Argument("no block norms given".into()));
    }
    if let Some(f) = a {
        if f.n_blocks() != n {
            return Err(Error::Dimension(format!("{n} norms for {} operators", f.n_blocks())));
        }
    }
    let order = descending_order(norms_sq);
    let mut scores = Vec::with_capacity(n);
    for n1 in 1..=n {
        let n2 = n - n1;
        let s1 = order[..n1].iter().fold(T::zero(), |acc, &i| acc + norms_sq[i]);
        let s2 = order[n1..].iter().fold(T::zero(), |acc, &i| acc + norms_sq[i]);
        let mut l1 = T::from_count(n1 - 1) * s1;
        if let Some(f) = a {
            if n1 <= 3 {
                l1 -= estimate_subset_norm_sq(f, &order[..n1], T::lit(1e-10), 5000);
            }
        }
        let l2 = if n2 == 0 { T::zero() } else { T::from_count(n2 - 1) * s2 };
        scores.push(l1 + l2);
    }
    Ok((order, scores))
}

/// Sort-and-split heuristic: the prefix of the descending order minimizing the score.
pub fn case1_partition<T: Scalar>(norms_sq: &[T], a: Option<&BlockOperatorFamily<T>>) -> Result<Partition> {
    let (order, scores) = case1_score_curve(norms_sq, a)?;
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = k;
        }
    }
    let n1 = best + 1;
    let mut p = Partition::new(order[..n1].to_vec(), order[n1..].to_vec(), norms_sq.len(), PartitionCase::I)?;
    p.score = Some(scores[best].as_f64());
    Ok(p)
}

const ORTHO_TOL: f64 = 1e-10;

fn coupling_graph<T: Scalar>(a: &BlockOperatorFamily<T>, tol: T) -> Vec<Vec<usize>> {
    let n = a.n_blocks();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if !gram_cross_is_zero(a.operator(i), a.operator(j), tol) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

/// Two-colors the non-orthogonality graph. `Ok(None)` when it has an odd cycle.
///
/// Each connected component is oriented to keep the classes balanced; `B₁` is the larger
/// class, or the one holding block 0 on a tie.
pub fn case2_partition<T: Scalar>(a: &BlockOperatorFamily<T>, tol: T) -> Result<Option<Partition>> {
    let n = a.n_blocks();
    if n < 2 {
        return Err(Error::Argument("case II needs at least two blocks".into()));
    }
    let tol = if tol > T::zero() { tol } else { T::lit(ORTHO_TOL) };
    let adj = coupling_graph(a, tol);
    let mut color: Vec<Option<bool>> = vec![None; n];
    let (mut x, mut y): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for start in 0..n {
        if color[start].is_some() {
            continue;
        }
        let (mut same, mut other) = (Vec::new(), Vec::new());
        color[start] = Some(false);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let cu = color[u].expect("colored");
            if cu {
                other.push(u)
            } else {
                same.push(u)
            }
            for &v in &adj[u] {
                match color[v] {
                    None => {
                        color[v] = Some(!cu);
                        queue.push_back(v);
                    }
                    Some(cv) if cv == cu => return Ok(None),
                    Some(_) => {}
                }
            }
        }
        if same.len() < other.len() {
            std::mem::swap(&mut same, &mut other);
        }
        if x.len() <= y.len() {
            x.extend(same);
            y.extend(other);
        } else {
            y.extend(same);
            x.extend(other);
        }
    }
    let (b1, b2) = if y.len() > x.len() { (y, x) } else { (x, y) };
    Ok(Some(Partition::new(b1, b2, n, PartitionCase::II)?))
}

/// Greedy pairwise-orthogonal groups in descending-norm order, contracted to supernodes
/// (norm² = member maximum, counted once) and split by Case I.
pub fn case3_partition<T: Scalar>(a: &BlockOperatorFamily<T>, tol: T) -> Result<Partition> {
    let n = a.n_blocks();
    if n < 2 {
        return Err(Error::Argument("case III needs at least two blocks".into()));
    }
    let tol = if tol > T::zero() { tol } else { T::lit(ORTHO_TOL) };
    let norms = a.norms_sq();
    let adj = coupling_graph(a, tol);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in descending_order(&norms) {
        match groups.iter_mut().find(|g| g.iter().all(|j| !adj[i].contains(j))) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    let super_norms: Vec<T> = groups.iter().map(|g| g.iter().fold(T::zero(), |acc, &i| acc.max(norms[i]))).collect();
    let sp = case1_partition(&super_norms, None)?;
    let expand = |s: &[usize]| s.iter().flat_map(|&g| groups[g].iter().copied()).collect::<Vec<_>>();
    let mut p = Partition::new(expand(&sp.b1), expand(&sp.b2), n, PartitionCase::III)?;
    p.score = sp.score;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn uncorrected_scores() {
        let (order, s) = case1_score_curve::<f64>(&[4.0, 3.0, 2.0, 1.0], None).unwrap();
        assert_eq!(order, vec![0, 1, 2, 3]);
        assert_eq!(s, vec![12.0, 10.0, 18.0, 30.0]);
        let p = case1_partition::<f64>(&[1.0, 3.0, 4.0, 2.0], None).unwrap();
        assert_eq!(p.b1, vec![1, 2]);
        assert_eq!(p.score, Some(10.0));
    }

    #[test]
    fn equal_pair() {
        let p = case1_partition::<f64>(&[2.0, 2.0], None).unwrap();
        assert_eq!((p.b1.clone(), p.b2.clone()), (vec![0], vec![1]));
        assert_eq!(p.score, Some(0.0));
    }

    #[test]
    fn empty_norms() {
        assert!(case1_partition::<f64>(&[], None).is_err());
    }

    #[test]
    fn triangle_fails() {
        let m = |v: f64| DMatrix::from_element(2, 1, v);
        let a = BlockOperatorFamily::dense(vec![m(1.0), m(2.0), m(3.0)]).unwrap();
        assert_eq!(case2_partition(&a, 0.0).unwrap(), None);
    }

    #[test]
    fn orthogonal_blocks_balance() {
        let e = |k: usize| DMatrix::from_fn(4, 1, |r, _| if r == k { 1.0 } else { 0.0 });
        let a = BlockOperatorFamily::dense((0..4).map(e).collect()).unwrap();
        let p = case2_partition(&a, 0.0).unwrap().unwrap();
        assert_eq!(p.n1(), 2);
        assert_eq!(p.n2(), 2);
    }

    #[test]
    fn user_partition_checks() {
        assert!(Partition::user(vec![0, 3], 3).is_err());
        let p = Partition::user(vec![], 3).unwrap();
        assert_eq!(p.b2, vec![0, 1, 2]);
        assert!(Partition::new(vec![0], vec![0, 1], 2, PartitionCase::User).is_err());
    }
}
