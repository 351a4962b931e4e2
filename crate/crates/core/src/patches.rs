//! Patch grouping by windowed block matching, group extraction and the
//! scatter-add aggregation of group estimates back onto the image.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::par;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("invalid patch geometry: {0}")]
    Geometry(String),
    #[error("image {height}x{width} smaller than patch side {patch_side}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        patch_side: usize,
    },
    #[error("group size {group_size} exceeds the {available} candidates in the search window")]
    GroupTooLarge { group_size: usize, available: usize },
    #[error("group id {id} out of range ({count} groups)")]
    BadGroup { id: usize, count: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Patch side, reference stride, group size and search window side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchGeometry {
    pub patch_side: usize,
    pub stride: usize,
    pub group_size: usize,
    pub window: usize,
}

impl Default for PatchGeometry {
    fn default() -> Self {
        Self {
            patch_side: 7,
            stride: 4,
            group_size: 60,
            window: 20,
        }
    }
}

impl PatchGeometry {
    pub fn validate(&self) -> Result<(), PatchError> {
        if self.patch_side == 0 || self.stride == 0 || self.group_size == 0 {
            return Err(PatchError::Geometry(format!("{self:?} has a zero field")));
        }
        if self.patch_side > self.window {
            return Err(PatchError::Geometry(format!(
                "patch side {} exceeds window {}",
                self.patch_side, self.window
            )));
        }
        Ok(())
    }

    /// Pixels per patch, `b`.
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side
    }
}

/// Reference positions along one axis: every `stride`, plus the last valid
/// position so the far border is covered.
pub fn reference_positions(extent: usize, patch_side: usize, stride: usize) -> Vec<usize> {
    let last = extent - patch_side;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Candidate positions of the search window around `center` on one axis,
/// shifted inward at the borders.
pub fn window_range(center: usize, positions: usize, window: usize) -> std::ops::Range<usize> {
    if positions <= window {
        return 0..positions;
    }
    let lo = center.saturating_sub(window / 2).min(positions - window);
    lo..lo + window
}

/// Top-left coordinates `(row, col)` of each reference patch and of its
/// matched group. `neighbors[i][0] == refs[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGroupIndex {
    geometry: PatchGeometry,
    dims: (usize, usize),
    refs: Vec<(usize, usize)>,
    neighbors: Vec<Vec<(usize, usize)>>,
}

fn patch_distance(img: &Image, a: (usize, usize), b: (usize, usize), side: usize) -> f64 {
    let w = img.width();
    let data = img.data();
    let mut acc = 0.0;
    for r in 0..side {
        let ra = &data[(a.0 + r) * w + a.1..][..side];
        let rb = &data[(b.0 + r) * w + b.1..][..side];
        for (x, y) in ra.iter().zip(rb) {
            let d = x - y;
            acc += d * d;
        }
    }
    acc
}

impl PatchGroupIndex {
    /// Block matching: for each reference patch on the stride grid, keep the
    /// reference plus the `group_size - 1` closest other candidates in its
    /// window by squared Euclidean distance, ties broken by the candidate's
    /// row-major linear index.
    pub fn build(img: &Image, geom: &PatchGeometry) -> Result<Self, PatchError> {
        Self::build_with(img, geom, true)
    }

    pub fn build_with(img: &Image, geom: &PatchGeometry, parallel: bool) -> Result<Self, PatchError> {
        geom.validate()?;
        let (h, w) = img.dims();
        let p = geom.patch_side;
        if h < p || w < p {
            return Err(PatchError::ImageTooSmall {
                height: h,
                width: w,
                patch_side: p,
            });
        }
        let (pos_y, pos_x) = (h - p + 1, w - p + 1);
        let available = pos_y.min(geom.window) * pos_x.min(geom.window);
        if geom.group_size > available {
            return Err(PatchError::GroupTooLarge {
                group_size: geom.group_size,
                available,
            });
        }
        let rows = reference_positions(h, p, geom.stride);
        let cols = reference_positions(w, p, geom.stride);
        let refs: Vec<(usize, usize)> = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
            .collect();
        let m = geom.group_size;
        let neighbors = par::map_indexed(refs.len(), parallel, |i| {
            let reference = refs[i];
            let mut cands: Vec<(f64, usize)> = Vec::with_capacity(available);
            for r in window_range(reference.0, pos_y, geom.window) {
                for c in window_range(reference.1, pos_x, geom.window) {
                    if (r, c) != reference {
                        cands.push((patch_distance(img, reference, (r, c), p), r * w + c));
                    }
                }
            }
            let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            let keep = m - 1;
            if keep > 0 && keep < cands.len() {
                cands.select_nth_unstable_by(keep - 1, order);
                cands.truncate(keep);
            }
            cands.sort_unstable_by(order);
            let mut group = Vec::with_capacity(m);
            group.push(reference);
            group.extend(cands.into_iter().take(keep).map(|(_, idx)| (idx / w, idx % w)));
            group
        });
        Ok(Self {
            geometry: *geom,
            dims: (h, w),
            refs,
            neighbors,
        })
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    /// Number of groups, `n`.
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn refs(&self) -> &[(usize, usize)] {
        &self.refs
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.neighbors[i]
    }

    /// `R_i x`: patch `j` of group `i` vectorized row-major into column `j`.
    pub fn extract(&self, img: &Image, i: usize) -> Result<GroupMatrix, PatchError> {
        if i >= self.len() {
            return Err(PatchError::BadGroup { id: i, count: self.len() });
        }
        if img.dims() != self.dims {
            return Err(PatchError::Shape(format!(
                "index built for {:?}, image is {:?}",
                self.dims,
                img.dims()
            )));
        }
        let p = self.geometry.patch_side;
        let w = img.width();
        let data = img.data();
        let mut col_major = Vec::with_capacity(p * p * self.neighbors[i].len());
        for &(r0, c0) in &self.neighbors[i] {
            for r in 0..p {
                col_major.extend_from_slice(&data[(r0 + r) * w + c0..][..p]);
            }
        }
        Ok(GroupMatrix(DMatrix::from_vec(p * p, self.neighbors[i].len(), col_major)))
    }

    /// Coverage map `C`: number of (group, column) pairs touching each pixel,
    /// i.e. the diagonal of `sum_i R_i^T R_i`.
    pub fn coverage(&self) -> Image {
        let (h, w) = self.dims;
        let p = self.geometry.patch_side;
        let mut counts = vec![0.0; h * w];
        for group in &self.neighbors {
            for &(r0, c0) in group {
                for r in 0..p {
                    for v in &mut counts[(r0 + r) * w + c0..][..p] {
                        *v += 1.0;
                    }
                }
            }
        }
        Image::new(h, w, counts).expect("finite counts")
    }
}

/// `b x m` matrix whose columns are the patches of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatrix(pub DMatrix<f64>);

impl GroupMatrix {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// `S = sum_i R_i^T L_i` and the coverage map `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub sum: Image,
    pub weights: Image,
}

impl Aggregation {
    /// `S / C` pixelwise, the plain patch-averaged estimate.
    pub fn average(&self) -> Image {
        Image::new(
            self.sum.height(),
            self.sum.width(),
            self.sum
                .data()
                .iter()
                .zip(self.weights.data())
                .map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 })
                .collect(),
        )
        .expect("finite average")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationMode {
    /// Fixed group order; bit-reproducible.
    #[default]
    Sequential,
    /// Per-chunk partial sums merged in chunk order.
    Parallel,
}

fn check_groups(groups: &[GroupMatrix], index: &PatchGroupIndex, dims: (usize, usize)) -> Result<(), PatchError> {
    if dims != index.dims {
        return Err(PatchError::Shape(format!("dims {dims:?} vs index {:?}", index.dims)));
    }
    if groups.len() != index.len() {
        return Err(PatchError::Shape(format!(
            "{} groups for {} references",
            groups.len(),
            index.len()
        )));
    }
    let b = index.geometry.patch_len();
    for (i, g) in groups.iter().enumerate() {
        if g.rows() != b || g.cols() != index.neighbors[i].len() {
            return Err(PatchError::Shape(format!(
                "group {i} is {}x{}, expected {b}x{}",
                g.rows(),
                g.cols(),
                index.neighbors[i].len()
            )));
        }
    }
    Ok(())
}

fn scatter(range: std::ops::Range<usize>, groups: &[GroupMatrix], index: &PatchGroupIndex, acc: &mut [f64]) {
    let w = index.dims.1;
    let p = index.geometry.patch_side;
    for i in range {
        let data = groups[i].0.as_slice();
        for (j, &(r0, c0)) in index.neighbors[i].iter().enumerate() {
            let col = &data[j * p * p..(j + 1) * p * p];
            for r in 0..p {
                let dst = &mut acc[(r0 + r) * w + c0..][..p];
                for (d, s) in dst.iter_mut().zip(&col[r * p..(r + 1) * p]) {
                    *d += s;
                }
            }
        }
    }
}

/// Scatter-add group estimates onto the image grid.
pub fn aggregate(groups: &[GroupMatrix], index: &PatchGroupIndex, dims: (usize, usize)) -> Result<Aggregation, PatchError> {
    aggregate_with(groups, index, dims, AggregationMode::Sequential)
}

pub fn aggregate_with(
    groups: &[GroupMatrix],
    index: &PatchGroupIndex,
    dims: (usize, usize),
    mode: AggregationMode,
) -> Result<Aggregation, PatchError> {
    check_groups(groups, index, dims)?;
    let (h, w) = dims;
    let n = groups.len();
    let sum = match mode {
        AggregationMode::Sequential => {
            let mut acc = vec![0.0; h * w];
            scatter(0..n, groups, index, &mut acc);
            acc
        }
        AggregationMode::Parallel => {
            let chunks = par::current_threads().clamp(1, n.max(1));
            let per = n.div_ceil(chunks);
            let partials = par::map_indexed(chunks, true, |k| {
                let mut acc = vec![0.0; h * w];
                scatter(k * per..((k + 1) * per).min(n), groups, index, &mut acc);
                acc
            });
            let mut acc = vec![0.0; h * w];
            for part in partials {
                for (a, b) in acc.iter_mut().zip(part) {
                    *a += b;
                }
            }
            acc
        }
    };
    Ok(Aggregation {
        sum: Image::new(h, w, sum).map_err(|e| PatchError::Shape(e.to_string()))?,
        weights: index.coverage(),
    })
}
