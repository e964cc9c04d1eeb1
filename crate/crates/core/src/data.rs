//! Point clouds, the synthetic manifolds used throughout the crate, and CSV I/O.
//!
//! Points are stored row-major so that `point(i)` is a contiguous slice.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmt_num;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<f64>,
    dim: usize,
    intrinsic: Option<Vec<f64>>,
    intrinsic_dim: usize,
    labels: Option<Vec<String>>,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates.
    pub fn new(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "cannot shape {} values into points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate in point {}", pos / dim)));
        }
        Ok(Self { coords, dim, intrinsic: None, intrinsic_dim: 0, labels: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows have different lengths"));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn with_intrinsic(mut self, coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || coords.len() != dim * self.len() {
            return Err(Error::invalid("intrinsic coordinates must have one row per point"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite intrinsic coordinate"));
        }
        self.intrinsic = Some(coords);
        self.intrinsic_dim = dim;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invalid("one label per point is required"));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::invalid(format!("duplicate label {l:?}")));
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn intrinsic(&self, i: usize) -> Option<&[f64]> {
        let d = self.intrinsic_dim;
        self.intrinsic.as_ref().map(|t| &t[i * d..(i + 1) * d])
    }

    pub fn has_intrinsic(&self) -> bool {
        self.intrinsic.is_some()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Column `c` of the intrinsic coordinates, if present.
    pub fn intrinsic_column(&self, c: usize) -> Option<Vec<f64>> {
        let d = self.intrinsic_dim;
        if c >= d {
            return None;
        }
        self.intrinsic.as_ref().map(|t| t.chunks(d).map(|r| r[c]).collect())
    }

    /// Applies `f` to every point, keeping intrinsic coordinates and labels.
    pub fn map_points(&self, out_dim: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let mut coords = vec![0.0; self.len() * out_dim];
        for (i, out) in coords.chunks_mut(out_dim).enumerate() {
            f(self.point(i), out);
        }
        let mut c = Self::new(coords, out_dim)?;
        c.intrinsic = self.intrinsic.clone();
        c.intrinsic_dim = self.intrinsic_dim;
        c.labels = self.labels.clone();
        Ok(c)
    }

    /// Reorders points (and their metadata) so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation of the point indices"));
        }
        let gather = |v: &[f64], d: usize| -> Vec<f64> {
            perm.iter().flat_map(|&p| v[p * d..(p + 1) * d].iter().copied()).collect()
        };
        Ok(Self {
            coords: gather(&self.coords, self.dim),
            dim: self.dim,
            intrinsic: self.intrinsic.as_ref().map(|t| gather(t, self.intrinsic_dim)),
            intrinsic_dim: self.intrinsic_dim,
            labels: self.labels.as_ref().map(|l| perm.iter().map(|&p| l[p].clone()).collect()),
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads the `x1,...,xn[,t1,...,td][,label]` layout.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(Error::Parse { row: 1, msg: "empty file".into() }),
            Some(h) => h.map_err(|e| Error::Parse { row: 1, msg: e.to_string() })?,
        };
        let layout = Layout::from_header(&header)?;
        let mut coords = Vec::new();
        let mut intrinsic = Vec::new();
        let mut labels = Vec::new();
        for (k, rec) in records.enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
            if rec.len() != layout.width() {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {} fields, found {}", layout.width(), rec.len()),
                });
            }
            for (c, field) in rec.iter().enumerate() {
                if layout.label && c + 1 == rec.len() {
                    labels.push(field.to_string());
                    continue;
                }
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    row,
                    msg: format!("non-numeric field {:?} in column {}", field, c + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, msg: format!("non-finite value in column {}", c + 1) });
                }
                if c < layout.ambient {
                    coords.push(v);
                } else {
                    intrinsic.push(v);
                }
            }
        }
        if coords.is_empty() {
            return Err(Error::Parse { row: 2, msg: "no data rows".into() });
        }
        let mut cloud = Self::new(coords, layout.ambient)?;
        if layout.intrinsic > 0 {
            cloud = cloud.with_intrinsic(intrinsic, layout.intrinsic)?;
        }
        if layout.label {
            cloud = cloud.with_labels(labels)?;
        }
        Ok(cloud)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.extend((1..=self.intrinsic_dim).map(|i| format!("t{i}")));
        if self.labels.is_some() {
            header.push("label".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = self.point(i).iter().map(|&v| fmt_num(v)).collect();
            if let Some(t) = self.intrinsic(i) {
                fields.extend(t.iter().map(|&v| fmt_num(v)));
            }
            if let Some(l) = &self.labels {
                fields.push(l[i].clone());
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Layout {
    ambient: usize,
    intrinsic: usize,
    label: bool,
}

impl Layout {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let bad = |msg: String| Error::Parse { row: 1, msg };
        let mut layout = Layout { ambient: 0, intrinsic: 0, label: false };
        for (c, name) in header.iter().map(str::trim).enumerate() {
            if layout.label {
                return Err(bad("label must be the last column".into()));
            }
            if name == "label" {
                layout.label = true;
            } else if name == format!("x{}", layout.ambient + 1) && layout.intrinsic == 0 {
                layout.ambient += 1;
            } else if name == format!("t{}", layout.intrinsic + 1) && layout.ambient > 0 {
                layout.intrinsic += 1;
            } else {
                return Err(bad(format!("unexpected header {:?} in column {}", name, c + 1)));
            }
        }
        if layout.ambient == 0 {
            return Err(bad("header has no coordinate columns".into()));
        }
        Ok(layout)
    }

    fn width(&self) -> usize {
        self.ambient + self.intrinsic + usize::from(self.label)
    }
}

fn grid_angles(m: usize) -> impl Iterator<Item = (f64, f64)> + Clone {
    let h = 2.0 * PI / m as f64;
    (0..m).flat_map(move |a| (0..m).map(move |b| (a as f64 * h, b as f64 * h)))
}

fn random_angles(count: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)))
        .collect()
}

fn from_angles(
    angles: impl Iterator<Item = (f64, f64)>,
    dim: usize,
    embed: impl Fn(f64, f64) -> Vec<f64>,
) -> Result<PointCloud> {
    let mut coords = Vec::new();
    let mut intrinsic = Vec::new();
    for (t, p) in angles {
        coords.extend(embed(t, p));
        intrinsic.extend([t, p]);
    }
    PointCloud::new(coords, dim)?.with_intrinsic(intrinsic, 2)
}

pub fn flat_torus_r4_point(theta: f64, phi: f64) -> Vec<f64> {
    vec![theta.sin(), theta.cos(), phi.sin(), phi.cos()]
}

pub fn torus_r3_point(theta: f64, phi: f64, major_radius: f64) -> Vec<f64> {
    let r = major_radius + theta.sin();
    vec![r * phi.cos(), r * phi.sin(), theta.cos()]
}

/// M×M uniform grid on [0,2π)² embedded isometrically in R⁴; θ is the slow index.
pub fn generate_flat_torus_r4(grid_size: usize) -> Result<PointCloud> {
    if grid_size < 2 {
        return Err(Error::invalid("grid size must be at least 2"));
    }
    from_angles(grid_angles(grid_size), 4, flat_torus_r4_point)
}

/// I.i.d. uniform samples of (θ,φ) on the flat torus in R⁴.
pub fn sample_flat_torus_r4(count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    from_angles(random_angles(count, seed).into_iter(), 4, flat_torus_r4_point)
}

fn check_radius(major_radius: f64) -> Result<()> {
    if !(major_radius > 1.0) || !major_radius.is_finite() {
        return Err(Error::invalid(format!("major radius must exceed 1, got {major_radius}")));
    }
    Ok(())
}

/// M×M grid on the torus of revolution ((R+sinθ)cosφ, (R+sinθ)sinφ, cosθ).
pub fn generate_embedded_torus_r3(grid_size: usize, major_radius: f64) -> Result<PointCloud> {
    check_radius(major_radius)?;
    if grid_size < 2 {
        return Err(Error::invalid("grid size must be at least 2"));
    }
    from_angles(grid_angles(grid_size), 3, |t, p| torus_r3_point(t, p, major_radius))
}

pub fn sample_embedded_torus_r3(count: usize, major_radius: f64, seed: u64) -> Result<PointCloud> {
    check_radius(major_radius)?;
    if count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    from_angles(random_angles(count, seed).into_iter(), 3, |t, p| torus_r3_point(t, p, major_radius))
}

/// Points (cosθ_j, a·sinθ_j) with θ_j = 2πj/count, j = 1..count.
pub fn generate_ellipse(count: usize, minor_axis: f64) -> Result<PointCloud> {
    if count < 3 {
        return Err(Error::invalid("an ellipse needs at least 3 points"));
    }
    if !(minor_axis > 0.0) || !minor_axis.is_finite() {
        return Err(Error::invalid("minor axis must be positive"));
    }
    let mut coords = Vec::with_capacity(2 * count);
    let mut theta = Vec::with_capacity(count);
    for j in 1..=count {
        let t = 2.0 * PI * j as f64 / count as f64;
        coords.extend([t.cos(), minor_axis * t.sin()]);
        theta.push(t);
    }
    PointCloud::new(coords, 2)?.with_intrinsic(theta, 1)
}

/// H(x,y,z) = (x, y, (2 + sin(3·atan2(y,x))/2)·z).
pub fn torus_diffeomorphism(p: &[f64]) -> [f64; 3] {
    let angle = p[1].atan2(p[0]);
    [p[0], p[1], (2.0 + 0.5 * (3.0 * angle).sin()) * p[2]]
}

pub fn apply_torus_diffeomorphism(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.dim() != 3 {
        return Err(Error::invalid("the torus diffeomorphism acts on points in R³"));
    }
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        if p[0] == 0.0 && p[1] == 0.0 {
            return Err(Error::invalid(format!("point {i} lies on the z-axis, angle undefined")));
        }
    }
    cloud.map_points(3, |p, out| out.copy_from_slice(&torus_diffeomorphism(p)))
}
