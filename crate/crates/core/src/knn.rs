//! Euclidean nearest-neighbour queries over a point cloud.

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use rayon::prelude::*;

use crate::data::PointCloud;
use crate::error::{Error, Result};

pub struct NeighborIndex<'a> {
    cloud: &'a PointCloud,
    tree: KdTree<f64, usize, &'a [f64]>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(cloud: &'a PointCloud) -> Result<Self> {
        let mut tree = KdTree::with_capacity(cloud.dim(), 32);
        for i in 0..cloud.len() {
            tree.add(cloud.point(i), i).map_err(|e| Error::invalid(format!("kd-tree: {e:?}")))?;
        }
        Ok(Self { cloud, tree })
    }

    /// The `k` nearest other points of point `i` as (squared distance, index), closest first.
    pub fn neighbors_of(&self, i: usize, k: usize) -> Result<Vec<(f64, usize)>> {
        if k >= self.cloud.len() {
            return Err(Error::invalid(format!(
                "k = {k} neighbours requested but the cloud has only {} points",
                self.cloud.len()
            )));
        }
        let found = self
            .tree
            .nearest(self.cloud.point(i), k + 1, &squared_euclidean)
            .map_err(|e| Error::invalid(format!("kd-tree: {e:?}")))?;
        let mut out: Vec<(f64, usize)> =
            found.into_iter().filter(|&(_, &j)| j != i).map(|(d, &j)| (d, j)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.truncate(k);
        Ok(out)
    }

    /// Neighbour lists for every point, computed in parallel.
    pub fn all_neighbors(&self, k: usize) -> Result<Vec<Vec<(f64, usize)>>> {
        (0..self.cloud.len()).into_par_iter().map(|i| self.neighbors_of(i, k)).collect()
    }
}
