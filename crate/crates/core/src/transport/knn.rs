//! Nearest neighbours on a uniform bucket grid.

use crate::geometry::Point2;
use rayon::prelude::*;

pub(crate) struct Grid<'a> {
    pts: &'a [Point2],
    lo: Point2,
    cw: f64,
    ch: f64,
    gx: usize,
    gy: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> Grid<'a> {
    /// Buckets the points `ids` of `pts` over the box `[lo, hi]`.
    pub(crate) fn new(pts: &'a [Point2], ids: &[usize], lo: Point2, hi: Point2) -> Self {
        let g = ((ids.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let cw = ((hi.x - lo.x) / g as f64).max(f64::MIN_POSITIVE);
        let ch = ((hi.y - lo.y) / g as f64).max(f64::MIN_POSITIVE);
        let mut b = Self {
            pts,
            lo,
            cw,
            ch,
            gx: g,
            gy: g,
            start: vec![0; g * g + 1],
            items: vec![0; ids.len()],
        };
        let cells: Vec<usize> = ids.iter().map(|&i| b.cell(pts[i])).collect();
        for &c in &cells {
            b.start[c + 1] += 1;
        }
        for c in 0..g * g {
            b.start[c + 1] += b.start[c];
        }
        let mut fill = b.start.clone();
        for (&i, &c) in ids.iter().zip(&cells) {
            b.items[fill[c]] = i;
            fill[c] += 1;
        }
        b
    }

    fn coords(&self, p: Point2) -> (usize, usize) {
        let cx = ((p.x - self.lo.x) / self.cw).floor().clamp(0.0, (self.gx - 1) as f64) as usize;
        let cy = ((p.y - self.lo.y) / self.ch).floor().clamp(0.0, (self.gy - 1) as f64) as usize;
        (cx, cy)
    }

    fn cell(&self, p: Point2) -> usize {
        let (cx, cy) = self.coords(p);
        cy * self.gx + cx
    }

    /// Visits buckets in square rings around `p`. Before each ring after the
    /// first, `done` gets a lower bound on the distance from `p` to every
    /// point not yet visited; returning true stops the scan. The bound holds
    /// for `p` inside the box the grid was built over.
    pub(crate) fn scan(&self, p: Point2, mut visit: impl FnMut(usize), mut done: impl FnMut(f64) -> bool) {
        let (cx, cy) = self.coords(p);
        let (cx, cy) = (cx as isize, cy as isize);
        let reach = self.gx.max(self.gy) as isize;
        for r in 0..=reach {
            if r > 0 && done((r - 1) as f64 * self.cw.min(self.ch)) {
                return;
            }
            for y in cy - r..=cy + r {
                if y < 0 || y >= self.gy as isize {
                    continue;
                }
                let step = if y == cy - r || y == cy + r { 1 } else { (2 * r).max(1) as usize };
                for x in (cx - r..=cx + r).step_by(step) {
                    if x < 0 || x >= self.gx as isize {
                        continue;
                    }
                    let c = y as usize * self.gx + x as usize;
                    for &i in &self.items[self.start[c]..self.start[c + 1]] {
                        visit(i);
                    }
                }
            }
        }
    }

    /// The `k` nearest bucketed points to `p`, nearest first.
    fn nearest(&self, p: Point2, k: usize) -> Vec<usize> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let best_ref = std::cell::RefCell::new(&mut best);
        self.scan(
            p,
            |i| {
                let mut best = best_ref.borrow_mut();
                let d = p.dist2(self.pts[i]);
                if best.len() < k || d < best[best.len() - 1].0 {
                    let at = best.partition_point(|e| e.0 <= d);
                    best.insert(at, (d, i));
                    best.truncate(k);
                }
            },
            |free| {
                let best = best_ref.borrow();
                best.len() == k && free > 0.0 && free * free >= best[k - 1].0
            },
        );
        best.into_iter().map(|e| e.1).collect()
    }
}

/// Bounding box of a point cloud.
pub(crate) fn bbox<'p>(pts: impl IntoIterator<Item = &'p Point2>) -> (Point2, Point2) {
    pts.into_iter().fold(
        (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

/// Pairs each source in `src` with its `k` nearest targets in `tgt` and each
/// target with its `k` nearest sources.
pub fn mutual_pairs(pa: &[Point2], pb: &[Point2], src: &[usize], tgt: &[usize], k: usize) -> Vec<(usize, usize)> {
    if src.is_empty() || tgt.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = bbox(src.iter().map(|&i| &pa[i]).chain(tgt.iter().map(|&j| &pb[j])));
    let bt = Grid::new(pb, tgt, lo, hi);
    let bs = Grid::new(pa, src, lo, hi);
    let mut out: Vec<(usize, usize)> = src
        .par_iter()
        .flat_map_iter(|&i| bt.nearest(pa[i], k).into_iter().map(move |j| (i, j)))
        .collect();
    out.extend(
        tgt.par_iter()
            .flat_map_iter(|&j| bs.nearest(pb[j], k).into_iter().map(move |i| (i, j)))
            .collect::<Vec<_>>(),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_brute_force() {
        let pts: Vec<Point2> = (0..300)
            .map(|i| Point2::new((i as f64 * 0.618).fract(), (i as f64 * 0.377).fract()))
            .collect();
        let ids: Vec<usize> = (0..300).step_by(2).collect();
        let b = Grid::new(&pts, &ids, Point2::new(0.0, 0.0), Point2::new(1.0, 1.0));
        for q in [Point2::new(0.3, 0.7), Point2::new(0.0, 0.0), Point2::new(0.99, 0.5)] {
            let got = b.nearest(q, 5);
            let mut all = ids.clone();
            all.sort_by(|&x, &y| q.dist2(pts[x]).total_cmp(&q.dist2(pts[y])));
            assert_eq!(got, all[..5].to_vec());
        }
    }
}
