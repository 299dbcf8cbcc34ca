//! Node features and grid pseudo-images for the upper-level policy.

use crate::decompose::PartialTour;
use crate::instance::TspInstance;

/// Number of per-node features.
pub const NODE_FEATURES: usize = 11;

/// `N x 11` feature matrix (row-major) plus each node's grid cell.
///
/// Columns: `x, y, dx_grid, dy_grid, dx_cluster, dy_cluster, x_pre, y_pre,
/// x_nxt, y_nxt, visited`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub data: Vec<f64>,
    pub cells: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

impl NodeFeatures {
    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * NODE_FEATURES..(i + 1) * NODE_FEATURES]
    }
}

/// Grid cell of a unit-square coordinate; 1.0 falls into the last cell.
#[inline]
pub fn cell_id(x: f64, y: f64, height: usize, width: usize) -> usize {
    let row = ((y * height as f64) as usize).min(height - 1);
    let col = ((x * width as f64) as usize).min(width - 1);
    row * width + col
}

pub fn featurize(instance: &TspInstance, tour: &PartialTour, height: usize, width: usize) -> NodeFeatures {
    assert!(height >= 1 && width >= 1, "grid must be non-empty");
    let n = instance.n();
    let pts = instance.nodes();
    let cells: Vec<usize> = pts.iter().map(|p| cell_id(p.x, p.y, height, width)).collect();

    let mut sum = vec![(0.0f64, 0.0f64, 0usize); height * width];
    for (p, &c) in pts.iter().zip(&cells) {
        sum[c].0 += p.x;
        sum[c].1 += p.y;
        sum[c].2 += 1;
    }

    let mut data = vec![0.0; n * NODE_FEATURES];
    for (i, (p, &c)) in pts.iter().zip(&cells).enumerate() {
        let row = &mut data[i * NODE_FEATURES..(i + 1) * NODE_FEATURES];
        let (sx, sy, cnt) = sum[c];
        let gx = ((c % width) as f64 + 0.5) / width as f64;
        let gy = ((c / width) as f64 + 0.5) / height as f64;
        row[0] = p.x;
        row[1] = p.y;
        row[2] = p.x - gx;
        row[3] = p.y - gy;
        row[4] = p.x - sx / cnt as f64;
        row[5] = p.y - sy / cnt as f64;
        if let (Some(pre), Some(nxt)) = (tour.pred(i), tour.succ(i)) {
            row[6] = pts[pre].x;
            row[7] = pts[pre].y;
            row[8] = pts[nxt].x;
            row[9] = pts[nxt].y;
            row[10] = 1.0;
        }
    }
    NodeFeatures { data, cells, height, width }
}

/// `H x W x C` grid embedding (row-major, channel innermost).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl PseudoImage {
    pub fn at(&self, h: usize, w: usize, c: usize) -> f64 {
        self.data[(h * self.width + w) * self.channels + c]
    }
}

/// Per-channel max over the nodes of each cell; empty cells stay zero.
pub fn scatter_max(embedded: &[f64], channels: usize, cells: &[usize], height: usize, width: usize) -> PseudoImage {
    assert_eq!(embedded.len(), cells.len() * channels, "row count must match cell ids");
    let mut data = vec![f64::NEG_INFINITY; height * width * channels];
    let mut filled = vec![false; height * width];
    for (row, &c) in embedded.chunks_exact(channels).zip(cells) {
        filled[c] = true;
        let dst = &mut data[c * channels..(c + 1) * channels];
        for (d, &v) in dst.iter_mut().zip(row) {
            if v > *d {
                *d = v;
            }
        }
    }
    for (c, f) in filled.iter().enumerate() {
        if !f {
            data[c * channels..(c + 1) * channels].fill(0.0);
        }
    }
    PseudoImage { data, height, width, channels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_uniform, Point};
    use proptest::prelude::*;
    use std::collections::HashMap;

    #[test]
    fn lone_unvisited_node_at_cell_center() {
        let inst = TspInstance::new(
            vec![Point::new(0.125, 0.375), Point::new(0.9, 0.9), Point::new(0.95, 0.95)],
            1,
        )
        .unwrap();
        let tour = PartialTour::pair(3, 1, 2);
        let f = featurize(&inst, &tour, 4, 4);
        assert_eq!(f.row(0), &[0.125, 0.375, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.cells[0], 4);
        // two-node cycle: both neighbors are the other node
        assert_eq!(&f.row(1)[6..], &[0.95, 0.95, 0.95, 0.95, 1.0]);
        assert_eq!(f.cells[2], 15);
    }

    #[test]
    fn unit_coordinate_clamps_into_last_cell() {
        assert_eq!(cell_id(1.0, 1.0, 32, 32), 32 * 32 - 1);
        assert_eq!(cell_id(0.0, 1.0, 8, 4), 7 * 4);
    }

    #[test]
    fn cluster_means_match_group_by() {
        let inst = generate_uniform(1000, 3).unwrap();
        let tour = PartialTour::pair(1000, 0, 1);
        let f = featurize(&inst, &tour, 8, 8);
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, p) in inst.nodes().iter().enumerate() {
            let key = (p.y * 8.0).floor() as usize * 8 + (p.x * 8.0).floor() as usize;
            groups.entry(key).or_default().push(i);
        }
        for (cell, members) in groups {
            let mx: f64 = members.iter().map(|&i| inst.point(i).x).sum::<f64>() / members.len() as f64;
            let my: f64 = members.iter().map(|&i| inst.point(i).y).sum::<f64>() / members.len() as f64;
            for &i in &members {
                assert_eq!(f.cells[i], cell);
                assert!((f.row(i)[4] - (inst.point(i).x - mx)).abs() < 1e-12);
                assert!((f.row(i)[5] - (inst.point(i).y - my)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scatter_examples() {
        let img = scatter_max(&[1.0, -2.0, 0.0, 5.0], 2, &[3, 3], 2, 2);
        assert_eq!(&img.data[6..8], &[1.0, 5.0]);
        assert!(img.data[..6].iter().all(|&v| v == 0.0));

        let img = scatter_max(&[1.0, 2.0, 3.0, 4.0], 1, &[2, 0, 3, 1], 2, 2);
        assert_eq!(img.data, vec![2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn scatter_matches_naive_double_loop() {
        let inst = generate_uniform(200, 6).unwrap();
        let cells: Vec<usize> = inst.nodes().iter().map(|p| cell_id(p.x, p.y, 5, 7)).collect();
        let emb: Vec<f64> = (0..200 * 3).map(|i| ((i * 7919) % 1013) as f64 / 100.0 - 5.0).collect();
        let img = scatter_max(&emb, 3, &cells, 5, 7);
        for cell in 0..35 {
            for c in 0..3 {
                let mut best: Option<f64> = None;
                for i in 0..200 {
                    if cells[i] == cell {
                        best = Some(best.map_or(emb[i * 3 + c], |b: f64| b.max(emb[i * 3 + c])));
                    }
                }
                assert_eq!(img.at(cell / 7, cell % 7, c), best.unwrap_or(0.0));
            }
        }
    }

    proptest! {
        #[test]
        fn features_are_bounded_and_permutation_equivariant(seed in 0u64..300, n in 3usize..80) {
            let inst = generate_uniform(n, seed).unwrap();
            let tour = PartialTour::from_cycle(n, &[0, 2, 1]).unwrap();
            let f = featurize(&inst, &tour, 6, 6);
            prop_assert!(f.data.iter().all(|v| (-1.0..=1.0).contains(v)));
            for i in 0..n {
                prop_assert!(f.row(i)[10] == 0.0 || f.row(i)[10] == 1.0);
                if f.row(i)[10] == 0.0 {
                    prop_assert!(f.row(i)[6..10].iter().all(|&v| v == 0.0));
                }
            }
            // reverse node order
            let perm: Vec<usize> = (0..n).rev().collect();
            let pts: Vec<Point> = perm.iter().map(|&i| inst.point(i)).collect();
            let inst2 = TspInstance::new(pts, n - 1).unwrap();
            let tour2 = PartialTour::from_cycle(n, &[n - 1, n - 3, n - 2]).unwrap();
            let f2 = featurize(&inst2, &tour2, 6, 6);
            // cluster means may differ in the last bits from summation order
            for (new_i, &old_i) in perm.iter().enumerate() {
                for (a, b) in f2.row(new_i).iter().zip(f.row(old_i)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn scatter_ignores_order_within_cells(seed in 0u64..200) {
            let inst = generate_uniform(60, seed).unwrap();
            let cells: Vec<usize> = inst.nodes().iter().map(|p| cell_id(p.x, p.y, 3, 3)).collect();
            let emb: Vec<f64> = inst.nodes().iter().flat_map(|p| [p.x - p.y, p.x * p.y]).collect();
            let img = scatter_max(&emb, 2, &cells, 3, 3);
            let idx: Vec<usize> = (0..60).rev().collect();
            let emb2: Vec<f64> = idx.iter().flat_map(|&i| [emb[2 * i], emb[2 * i + 1]]).collect();
            let cells2: Vec<usize> = idx.iter().map(|&i| cells[i]).collect();
            prop_assert_eq!(scatter_max(&emb2, 2, &cells2, 3, 3), img);
        }
    }
}
