use super::{dist, Coord};
use crate::{Error, Result};

/// Quasi-random maximin ordering.
///
/// Starts from the point nearest the centroid, then repeatedly appends the
/// point whose minimum distance to the already-ordered set is largest. Ties
/// go to the lowest original index.
pub fn maximin_ordering(locs: &[Coord]) -> Result<Vec<usize>> {
    let n = locs.len();
    if n == 0 {
        return Err(Error::Validation("maximin ordering needs at least one location".into()));
    }
    let cx = locs.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let cy = locs.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    let centroid = [cx, cy];
    let mut first = 0;
    let mut best = f64::INFINITY;
    for (i, p) in locs.iter().enumerate() {
        let d = dist(p, &centroid);
        if d < best {
            best = d;
            first = i;
        }
    }

    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = first;
    for _ in 0..n {
        placed[next] = true;
        order.push(next);
        let p = locs[next];
        let mut arg = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for j in 0..n {
            if placed[j] {
                continue;
            }
            let d = dist(&locs[j], &p);
            if d == 0.0 {
                return Err(Error::Validation(format!(
                    "locations {next} and {j} coincide; conditional variances would vanish"
                )));
            }
            if d < min_dist[j] {
                min_dist[j] = d;
            }
            if min_dist[j] > far {
                far = min_dist[j];
                arg = j;
            }
        }
        next = arg;
    }
    Ok(order)
}

/// For each ordered position `i`, the `min(i, k)` nearest points among
/// `order[..i]`, as original indices sorted by distance (ties by index).
pub fn build_conditioning(order: &[usize], locs: &[Coord], k: usize) -> Vec<Vec<usize>> {
    let mut sets = Vec::with_capacity(order.len());
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(order.len());
    for (i, &p) in order.iter().enumerate() {
        cand.clear();
        cand.extend(order[..i].iter().map(|&q| (dist(&locs[p], &locs[q]), q)));
        let m = k.min(i);
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if m > 0 && m < cand.len() {
            cand.select_nth_unstable_by(m - 1, cmp);
        }
        cand.truncate(m);
        cand.sort_by(cmp);
        sets.push(cand.iter().map(|&(_, q)| q).collect());
    }
    sets
}
