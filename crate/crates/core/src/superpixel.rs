//! SLIC over the joint `[L, a, b, t]` raster, connectivity enforcement, and
//! per-segment features and geometry.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{rgb_to_lab, AlignedImagePair};
use crate::raster::Plane;

/// Number of assignment/update rounds.
pub const SLIC_ITERATIONS: usize = 10;

/// One side of the image frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl Side {
    /// Order in which the boundary-prior rankings are run.
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Top, Side::Left, Side::Right];

    fn bit(self) -> u8 {
        match self {
            Side::Top => 1,
            Side::Bottom => 2,
            Side::Left => 4,
            Side::Right => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Top => "top",
            Side::Bottom => "bottom",
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Set of image sides touched by a segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Sides(u8);

impl Sides {
    pub const EMPTY: Sides = Sides(0);

    pub fn contains(self, side: Side) -> bool {
        self.0 & side.bit() != 0
    }

    pub fn insert(&mut self, side: Side) {
        self.0 |= side.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Side> {
        [Side::Top, Side::Bottom, Side::Left, Side::Right]
            .into_iter()
            .filter(move |s| self.contains(*s))
    }
}

impl FromIterator<Side> for Sides {
    fn from_iter<I: IntoIterator<Item = Side>>(iter: I) -> Self {
        let mut s = Sides::EMPTY;
        iter.into_iter().for_each(|side| s.insert(side));
        s
    }
}

impl fmt::Display for Sides {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Side::name).collect();
        f.write_str(&names.join(";"))
    }
}

/// Pixel-to-segment labelling with per-segment geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    centroids: Vec<(f64, f64)>,
    sizes: Vec<usize>,
    sides: Vec<Sides>,
}

impl SuperpixelMap {
    /// Wrap a label raster. Labels must be exactly `0..n` with every id used.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::Dimension(format!(
                "label raster has {} entries for a {width}x{height} image",
                labels.len()
            )));
        }
        let n = *labels.iter().max().unwrap() as usize + 1;
        let mut sizes = vec![0usize; n];
        let mut sums = vec![(0.0f64, 0.0f64); n];
        for (p, &l) in labels.iter().enumerate() {
            let l = l as usize;
            sizes[l] += 1;
            sums[l].0 += (p % width) as f64;
            sums[l].1 += (p / width) as f64;
        }
        if let Some(missing) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Dimension(format!(
                "labels are not contiguous: id {missing} unused"
            )));
        }
        let centroids = sums
            .iter()
            .zip(&sizes)
            .map(|(&(sx, sy), &s)| (sx / s as f64, sy / s as f64))
            .collect();
        let mut map = Self {
            width,
            height,
            labels,
            centroids,
            sizes,
            sides: Vec::new(),
        };
        map.sides = boundary_sides(&map);
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// Number of segments.
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn sides(&self) -> &[Sides] {
        &self.sides
    }

    /// Paint each segment's value onto its pixels.
    pub fn broadcast(&self, values: &[f64]) -> Plane {
        assert_eq!(values.len(), self.len());
        let data = self.labels.iter().map(|&l| values[l as usize]).collect();
        Plane::new(self.width, self.height, data).expect("label raster sized to image")
    }

    /// Export the label raster as a 16-bit grayscale PNG.
    pub fn write_label_png(&self, path: &Path) -> Result<()> {
        if self.len() > u16::MAX as usize + 1 {
            return Err(Error::Parameter(format!(
                "{} segments do not fit a 16-bit label image",
                self.len()
            )));
        }
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> = image::ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.labels.iter().map(|&l| l as u16).collect(),
        )
        .expect("buffer sized to image");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Export `id,cx,cy,size,sides`.
    pub fn write_segment_table(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::from("id,cx,cy,size,sides\n");
        for i in 0..self.len() {
            let (cx, cy) = self.centroids[i];
            out.push_str(&format!(
                "{i},{cx:.3},{cy:.3},{},{}\n",
                self.sizes[i], self.sides[i]
            ));
        }
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Sides of the image frame each segment touches.
pub fn boundary_sides(map: &SuperpixelMap) -> Vec<Sides> {
    let (w, h) = (map.width, map.height);
    let mut sides = vec![Sides::EMPTY; map.len()];
    for x in 0..w {
        sides[map.label(x, 0)].insert(Side::Top);
        sides[map.label(x, h - 1)].insert(Side::Bottom);
    }
    for y in 0..h {
        sides[map.label(0, y)].insert(Side::Left);
        sides[map.label(w - 1, y)].insert(Side::Right);
    }
    sides
}

/// Segment the pair into roughly `n` superpixels over `[L, a, b, t]`.
pub fn slic_segment(pair: &AlignedImagePair, n: usize, compactness: f64) -> Result<SuperpixelMap> {
    let lab = rgb_to_lab(pair);
    slic_channels(&[&lab[0], &lab[1], &lab[2], pair.thermal()], n, compactness)
}

#[derive(Clone)]
struct Cluster {
    x: f64,
    y: f64,
    feature: Vec<f64>,
}

/// Grid-seeded SLIC over an arbitrary stack of equally weighted channels.
///
/// Distance is `|f_i - f_k|^2 + (compactness / g)^2 |p_i - p_k|^2` with grid
/// interval `g = sqrt(w h / n)`; pixel positions are taken at pixel centres.
pub fn slic_channels(channels: &[&Plane], n: usize, compactness: f64) -> Result<SuperpixelMap> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Parameter("no feature channels".into()))?;
    let (w, h) = (first.width(), first.height());
    if channels.iter().any(|c| !c.same_size(first)) {
        return Err(Error::Dimension("feature channels differ in size".into()));
    }
    if n < 4 {
        return Err(Error::Parameter(format!("superpixel count {n} < 4")));
    }
    if n > w * h / 16 {
        return Err(Error::Parameter(format!(
            "superpixel count {n} exceeds w*h/16 = {}",
            w * h / 16
        )));
    }
    if !(compactness > 0.0) || !compactness.is_finite() {
        return Err(Error::Parameter(format!(
            "compactness must be positive, got {compactness}"
        )));
    }

    let d = channels.len();
    let npix = w * h;
    let grid = ((w * h) as f64 / n as f64).sqrt();
    let nx = ((w as f64 / grid).round() as usize).max(1);
    let ny = ((h as f64 / grid).round() as usize).max(1);
    let spatial = (compactness / grid).powi(2);

    let mut clusters: Vec<Cluster> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * w as f64 / nx as f64;
            let y = (j as f64 + 0.5) * h as f64 / ny as f64;
            let (px, py) = ((x as usize).min(w - 1), (y as usize).min(h - 1));
            let feature = channels.iter().map(|c| c.get(px, py)).collect();
            clusters.push(Cluster { x, y, feature });
        }
    }

    let mut labels: Vec<u32> = (0..npix)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            ((y * ny / h) * nx + x * nx / w) as u32
        })
        .collect();
    let mut dist = vec![f64::INFINITY; npix];
    let mut pixel = vec![0.0; d];

    for _ in 0..SLIC_ITERATIONS {
        dist.iter_mut().for_each(|v| *v = f64::INFINITY);
        for (k, c) in clusters.iter().enumerate() {
            let x0 = (c.x - grid).floor().max(0.0) as usize;
            let x1 = ((c.x + grid).ceil() as usize).min(w - 1);
            let y0 = (c.y - grid).floor().max(0.0) as usize;
            let y1 = ((c.y + grid).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                let dy = y as f64 + 0.5 - c.y;
                for x in x0..=x1 {
                    let p = y * w + x;
                    let dx = x as f64 + 0.5 - c.x;
                    let mut dc = 0.0;
                    for (ch, cf) in channels.iter().zip(&c.feature) {
                        let diff = ch.data()[p] - cf;
                        dc += diff * diff;
                    }
                    let dist_p = dc + spatial * (dx * dx + dy * dy);
                    if dist_p < dist[p] {
                        dist[p] = dist_p;
                        labels[p] = k as u32;
                    }
                }
            }
        }

        let mut acc = vec![(0.0f64, 0.0f64, 0usize); clusters.len()];
        let mut feat = vec![0.0f64; clusters.len() * d];
        for (p, &l) in labels.iter().enumerate() {
            let l = l as usize;
            acc[l].0 += (p % w) as f64 + 0.5;
            acc[l].1 += (p / w) as f64 + 0.5;
            acc[l].2 += 1;
            for (ch, slot) in channels.iter().zip(pixel.iter_mut()) {
                *slot = ch.data()[p];
            }
            for (f, v) in feat[l * d..(l + 1) * d].iter_mut().zip(&pixel) {
                *f += v;
            }
        }
        for (k, c) in clusters.iter_mut().enumerate() {
            let (sx, sy, count) = acc[k];
            if count == 0 {
                continue;
            }
            let inv = 1.0 / count as f64;
            c.x = sx * inv;
            c.y = sy * inv;
            for (f, s) in c.feature.iter_mut().zip(&feat[k * d..(k + 1) * d]) {
                *f = s * inv;
            }
        }
    }

    let min_size = ((grid * grid) / 4.0).ceil() as usize;
    let labels = enforce_connectivity(w, h, &labels, min_size);
    SuperpixelMap::from_labels(w, h, labels)
}

/// Split every label into 4-connected components, fold components smaller
/// than `min_size` into their largest 4-adjacent neighbour, and renumber in
/// raster order of first appearance.
fn enforce_connectivity(w: usize, h: usize, labels: &[u32], min_size: usize) -> Vec<u32> {
    const UNSET: usize = usize::MAX;
    let npix = w * h;
    let mut comp = vec![UNSET; npix];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..npix {
        if comp[start] != UNSET {
            continue;
        }
        let id = sizes.len();
        let label = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == UNSET && labels[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        sizes.push(size);
    }

    let ncomp = sizes.len();
    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ncomp];
    for p in 0..npix {
        let (x, y) = (p % w, p / w);
        if x + 1 < w && comp[p] != comp[p + 1] {
            neighbours[comp[p]].insert(comp[p + 1]);
            neighbours[comp[p + 1]].insert(comp[p]);
        }
        if y + 1 < h && comp[p] != comp[p + w] {
            neighbours[comp[p]].insert(comp[p + w]);
            neighbours[comp[p + w]].insert(comp[p]);
        }
    }

    // Union-find over components; roots carry the merged size and neighbours.
    let mut parent: Vec<usize> = (0..ncomp).collect();
    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }
    let mut order: Vec<usize> = (0..ncomp).filter(|&c| sizes[c] < min_size).collect();
    order.sort_by_key(|&c| (sizes[c], c));
    for c in order {
        let root = find(&mut parent, c);
        if sizes[root] >= min_size {
            continue;
        }
        let adjacent: BTreeSet<usize> = std::mem::take(&mut neighbours[root])
            .into_iter()
            .map(|nb| find(&mut parent, nb))
            .filter(|&nb| nb != root)
            .collect();
        let Some(&target) = adjacent
            .iter()
            .max_by_key(|&&nb| (sizes[nb], std::cmp::Reverse(nb)))
        else {
            continue;
        };
        parent[root] = target;
        sizes[target] += sizes[root];
        let mut merged = std::mem::take(&mut neighbours[target]);
        merged.extend(adjacent.into_iter().filter(|&nb| nb != target));
        neighbours[target] = merged;
    }

    let mut renumber: BTreeMap<usize, u32> = BTreeMap::new();
    let mut out = Vec::with_capacity(npix);
    for &c in comp.iter() {
        let root = find(&mut parent, c);
        let next = renumber.len() as u32;
        out.push(*renumber.entry(root).or_insert(next));
    }
    out
}

/// Per-segment mean of a modality's normalised channels, one row per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    dims: usize,
    data: Vec<f64>,
}

impl ModalityFeatures {
    pub fn new(rows: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dims || dims == 0 {
            return Err(Error::Dimension(format!(
                "feature matrix {rows}x{dims} needs {} values, got {}",
                rows * dims,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite feature value".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::Dimension("ragged feature rows".into()));
        }
        Self::new(rows.len(), dims, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }
}

/// Mean of each channel over each segment.
pub fn mean_features(map: &SuperpixelMap, channels: &[&Plane]) -> Result<ModalityFeatures> {
    if channels
        .iter()
        .any(|c| c.width() != map.width() || c.height() != map.height())
    {
        return Err(Error::Dimension(
            "feature raster does not match the superpixel map".into(),
        ));
    }
    let d = channels.len();
    let mut sums = vec![0.0; map.len() * d];
    for (p, &l) in map.labels().iter().enumerate() {
        let row = &mut sums[l as usize * d..(l as usize + 1) * d];
        for (s, c) in row.iter_mut().zip(channels) {
            *s += c.data()[p];
        }
    }
    for (i, &size) in map.sizes().iter().enumerate() {
        sums[i * d..(i + 1) * d]
            .iter_mut()
            .for_each(|s| *s /= size as f64);
    }
    ModalityFeatures::new(map.len(), d, sums)
}

/// RGB (mean normalised Lab, 3-d) and thermal (1-d) features.
pub fn compute_features(
    map: &SuperpixelMap,
    lab: &[Plane; 3],
    thermal: &Plane,
) -> Result<(ModalityFeatures, ModalityFeatures)> {
    Ok((
        mean_features(map, &[&lab[0], &lab[1], &lab[2]])?,
        mean_features(map, &[thermal])?,
    ))
}
