//! Space–time grids and sampled fields, plus their plain-text container.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Minimum number of samples on every axis.
pub const MIN_POINTS: usize = 8;

/// One sampled coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Self {
        Axis { min, max, n }
    }

    pub fn len(&self) -> f64 {
        self.max - self.min
    }
}

/// Spatial boundary treatment of a grid.
///
/// Non-periodic grids include both endpoints; periodic grids exclude the
/// right endpoint, which coincides with the left one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Dirichlet => "dirichlet",
            Boundary::Periodic => "periodic",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dirichlet" => Ok(Boundary::Dirichlet),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::Config(format!("unknown boundary `{other}`"))),
        }
    }
}

/// Rectangular space–time sampling grid, 1D or 2D in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: Axis,
    pub y: Option<Axis>,
    pub t: Axis,
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new_1d(x: (f64, f64, usize), t: (f64, f64, usize), boundary: Boundary) -> Result<Self> {
        let g = GridSpec {
            x: Axis::new(x.0, x.1, x.2),
            y: None,
            t: Axis::new(t.0, t.1, t.2),
            boundary,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn new_2d(
        x: (f64, f64, usize),
        y: (f64, f64, usize),
        t: (f64, f64, usize),
        boundary: Boundary,
    ) -> Result<Self> {
        let g = GridSpec {
            x: Axis::new(x.0, x.1, x.2),
            y: Some(Axis::new(y.0, y.1, y.2)),
            t: Axis::new(t.0, t.1, t.2),
            boundary,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut axes = vec![("x", self.x), ("t", self.t)];
        if let Some(y) = self.y {
            axes.push(("y", y));
        }
        for (name, a) in axes {
            if !(a.max > a.min) || !a.min.is_finite() || !a.max.is_finite() {
                return Err(Error::Config(format!(
                    "axis {name}: need max > min, got [{}, {}]",
                    a.min, a.max
                )));
            }
            if a.n < MIN_POINTS {
                return Err(Error::Config(format!(
                    "axis {name}: need at least {MIN_POINTS} points, got {}",
                    a.n
                )));
            }
        }
        Ok(())
    }

    pub fn is_2d(&self) -> bool {
        self.y.is_some()
    }

    pub fn ny(&self) -> usize {
        self.y.map_or(1, |a| a.n)
    }

    /// Number of samples in one time slice.
    pub fn slice_len(&self) -> usize {
        self.x.n * self.ny()
    }

    pub fn len(&self) -> usize {
        self.t.n * self.slice_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spatial_step(&self, a: Axis) -> f64 {
        match self.boundary {
            Boundary::Periodic => a.len() / a.n as f64,
            Boundary::Dirichlet => a.len() / (a.n - 1) as f64,
        }
    }

    pub fn dx(&self) -> f64 {
        self.spatial_step(self.x)
    }

    pub fn dy(&self) -> Option<f64> {
        self.y.map(|a| self.spatial_step(a))
    }

    pub fn dt(&self) -> f64 {
        self.t.len() / (self.t.n - 1) as f64
    }

    pub fn x_coords(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.x.n).map(|j| self.x.min + j as f64 * dx).collect()
    }

    pub fn y_coords(&self) -> Vec<f64> {
        match (self.y, self.dy()) {
            (Some(a), Some(dy)) => (0..a.n).map(|j| a.min + j as f64 * dy).collect(),
            _ => Vec::new(),
        }
    }

    pub fn t_coords(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.t.n).map(|k| self.t.min + k as f64 * dt).collect()
    }

    /// Flat index of sample (time k, row iy, column ix).
    #[inline]
    pub fn index(&self, k: usize, iy: usize, ix: usize) -> usize {
        (k * self.ny() + iy) * self.x.n + ix
    }

    /// Same spatial layout with a different time axis.
    pub fn with_time(&self, t: Axis) -> GridSpec {
        GridSpec { t, ..*self }
    }

    /// Removes `layers` samples from both ends of every axis. The result is
    /// always a closed (non-periodic) grid.
    pub fn trimmed(&self, layers: usize) -> Result<GridSpec> {
        let dx = self.dx();
        let cut = |a: Axis, step: f64| -> Result<Axis> {
            if a.n < 2 * layers + MIN_POINTS {
                return Err(Error::Config(format!(
                    "cannot trim {layers} layers from an axis with {} points",
                    a.n
                )));
            }
            let n = a.n - 2 * layers;
            let min = a.min + layers as f64 * step;
            Ok(Axis::new(min, min + (n - 1) as f64 * step, n))
        };
        let x = cut(self.x, dx)?;
        let y = match (self.y, self.dy()) {
            (Some(a), Some(dy)) => Some(cut(a, dy)?),
            _ => None,
        };
        let t = cut(self.t, self.dt())?;
        Ok(GridSpec {
            x,
            y,
            t,
            boundary: Boundary::Dirichlet,
        })
    }

    /// Keeps every `space`-th spatial and every `time`-th temporal sample.
    ///
    /// Closed axes must keep both endpoints, so `(n − 1)` has to be divisible by
    /// the stride; periodic spatial axes need `n` divisible by it.
    pub fn subsampled(&self, space: usize, time: usize) -> Result<GridSpec> {
        if space == 0 || time == 0 {
            return Err(Error::Config(
                "subsampling strides must be at least 1".into(),
            ));
        }
        let periodic = self.boundary == Boundary::Periodic;
        let thin = |name: &str, a: Axis, s: usize, periodic: bool| -> Result<Axis> {
            let n = if periodic {
                (a.n % s == 0).then(|| a.n / s)
            } else {
                ((a.n - 1) % s == 0).then(|| (a.n - 1) / s + 1)
            };
            let n = n.ok_or_else(|| {
                Error::Config(format!(
                    "axis {name} with {} points cannot be subsampled by {s}",
                    a.n
                ))
            })?;
            Ok(Axis::new(a.min, a.max, n))
        };
        let g = GridSpec {
            x: thin("x", self.x, space, periodic)?,
            y: self.y.map(|a| thin("y", a, space, periodic)).transpose()?,
            t: thin("t", self.t, time, false)?,
            boundary: self.boundary,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Where a field came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Clean,
    Noisy,
    Denoised,
    Simulated,
    Derived,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Clean => "clean",
            Provenance::Noisy => "noisy",
            Provenance::Denoised => "denoised",
            Provenance::Simulated => "simulated",
            Provenance::Derived => "derived",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "clean" => Provenance::Clean,
            "noisy" => Provenance::Noisy,
            "denoised" => Provenance::Denoised,
            "simulated" => Provenance::Simulated,
            "derived" => Provenance::Derived,
            other => return Err(Error::Config(format!("unknown provenance `{other}`"))),
        })
    }
}

/// A scalar field sampled on a [`GridSpec`], stored time-major
/// (t outer, then y, then x innermost).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries<T> {
    pub grid: GridSpec,
    pub values: Vec<T>,
    pub provenance: Provenance,
    /// Free-form metadata carried through the text container (seed, noise level, ...).
    pub meta: BTreeMap<String, String>,
}

impl<T: Real> FieldSeries<T> {
    pub fn new(grid: GridSpec, values: Vec<T>, provenance: Provenance) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "field has {} values but grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(FieldSeries {
            grid,
            values,
            provenance,
            meta: BTreeMap::new(),
        })
    }

    pub fn zeros(grid: GridSpec, provenance: Provenance) -> Self {
        FieldSeries {
            grid,
            values: vec![T::zero(); grid.len()],
            provenance,
            meta: BTreeMap::new(),
        }
    }

    /// Samples `f(t, y, x)` on every grid point (y = 0 for 1D grids).
    pub fn from_fn(
        grid: GridSpec,
        provenance: Provenance,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Self {
        let xs = grid.x_coords();
        let ys = if grid.is_2d() {
            grid.y_coords()
        } else {
            vec![0.0]
        };
        let mut values = Vec::with_capacity(grid.len());
        for t in grid.t_coords() {
            for &y in &ys {
                for &x in &xs {
                    values.push(T::of(f(t, y, x)));
                }
            }
        }
        FieldSeries {
            grid,
            values,
            provenance,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn slice(&self, k: usize) -> &[T] {
        let n = self.grid.slice_len();
        &self.values[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn at(&self, k: usize, iy: usize, ix: usize) -> T {
        self.values[self.grid.index(k, iy, ix)]
    }

    pub fn mean(&self) -> T {
        let n = T::of(self.values.len() as f64);
        self.values.iter().copied().sum::<T>() / n
    }

    /// Population standard deviation over all samples.
    pub fn std(&self) -> T {
        std_dev(&self.values)
    }

    pub fn rms(&self) -> T {
        rms(&self.values)
    }

    pub fn l2_norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FieldSeries {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            provenance: self.provenance,
            meta: self.meta.clone(),
        }
    }

    /// Elementwise difference; grids must match.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        Ok(FieldSeries {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
            provenance: Provenance::Derived,
            meta: BTreeMap::new(),
        })
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Config(
                "fields are sampled on different grids".into(),
            ));
        }
        Ok(())
    }

    /// Keeps the interior after dropping `layers` samples at both ends of every axis.
    pub fn trim(&self, layers: usize) -> Result<Self> {
        let grid = self.grid.trimmed(layers)?;
        let ny = self.grid.ny();
        let (y0, y1) = if self.grid.is_2d() {
            (layers, ny - layers)
        } else {
            (0, 1)
        };
        let mut values = Vec::with_capacity(grid.len());
        for k in layers..self.grid.t.n - layers {
            for iy in y0..y1 {
                let start = self.grid.index(k, iy, layers);
                let end = self.grid.index(k, iy, self.grid.x.n - layers);
                values.extend_from_slice(&self.values[start..end]);
            }
        }
        Ok(FieldSeries {
            grid,
            values,
            provenance: self.provenance,
            meta: self.meta.clone(),
        })
    }

    /// Restriction to [`GridSpec::subsampled`].
    pub fn subsample(&self, space: usize, time: usize) -> Result<Self> {
        let grid = self.grid.subsampled(space, time)?;
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.t.n {
            for iy in 0..grid.ny() {
                for ix in 0..grid.x.n {
                    values.push(self.at(k * time, iy * space, ix * space));
                }
            }
        }
        Ok(FieldSeries {
            grid,
            values,
            provenance: self.provenance,
            meta: self.meta.clone(),
        })
    }

    /// Converts the scalar type, e.g. for handing an `f32` field to an `f64` sampler.
    pub fn cast<U: Real>(&self) -> FieldSeries<U> {
        FieldSeries {
            grid: self.grid,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
            provenance: self.provenance,
            meta: self.meta.clone(),
        }
    }

    /// Writes the text container: `#key: value` header lines, then one CSV
    /// row per (t, y) pair holding the x samples.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let g = &self.grid;
        writeln!(w, "#pesbl-field v1")?;
        writeln!(w, "#provenance: {}", self.provenance)?;
        writeln!(w, "#boundary: {}", g.boundary)?;
        writeln!(w, "#x: {},{},{}", g.x.min, g.x.max, g.x.n)?;
        if let Some(y) = g.y {
            writeln!(w, "#y: {},{},{}", y.min, y.max, y.n)?;
        }
        writeln!(w, "#t: {},{},{}", g.t.min, g.t.max, g.t.n)?;
        for (k, v) in &self.meta {
            writeln!(w, "#{k}: {v}")?;
        }
        let mut line = String::new();
        for row in self.values.chunks(g.x.n) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&v.as_f64().to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let ctx = "field container";
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut values: Vec<T> = Vec::new();
        let mut first = true;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if first {
                if line != "#pesbl-field v1" {
                    return Err(Error::parse(ctx, "missing `#pesbl-field v1` magic line"));
                }
                first = false;
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let (k, v) = h
                    .split_once(':')
                    .ok_or_else(|| Error::parse(ctx, format!("malformed header `{line}`")))?;
                header.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            for tok in line.split(',') {
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(ctx, format!("bad number `{tok}`")))?;
                values.push(T::of(v));
            }
        }
        let mut header = header;
        let x = axis_from(&mut header, "x")?;
        let y = axis_from(&mut header, "y")?;
        let t = axis_from(&mut header, "t")?;
        let x = x.ok_or_else(|| Error::parse(ctx, "missing x axis"))?;
        let t = t.ok_or_else(|| Error::parse(ctx, "missing t axis"))?;
        let boundary: Boundary = header
            .remove("boundary")
            .ok_or_else(|| Error::parse(ctx, "missing boundary"))?
            .parse()?;
        let provenance: Provenance = header
            .remove("provenance")
            .ok_or_else(|| Error::parse(ctx, "missing provenance"))?
            .parse()?;
        let grid = GridSpec { x, y, t, boundary };
        let mut field = FieldSeries::new(grid, values, provenance)?;
        field.meta = header;
        Ok(field)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.display().to_string()));
        }
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn axis_from(header: &mut BTreeMap<String, String>, key: &str) -> Result<Option<Axis>> {
    let ctx = "field container";
    let Some(s) = header.remove(key) else {
        return Ok(None);
    };
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::parse(ctx, format!("axis `{key}` needs min,max,n")));
    }
    let num = |p: &str| -> Result<f64> {
        p.parse()
            .map_err(|_| Error::parse(ctx, format!("axis `{key}`: bad number `{p}`")))
    };
    let n: usize = parts[2]
        .parse()
        .map_err(|_| Error::parse(ctx, format!("axis `{key}`: bad count `{}`", parts[2])))?;
    Ok(Some(Axis::new(num(parts[0])?, num(parts[1])?, n)))
}

pub fn std_dev<T: Real>(v: &[T]) -> T {
    let n = T::of(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    (v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n).sqrt()
}

pub fn rms<T: Real>(v: &[T]) -> T {
    let n = T::of(v.len() as f64);
    (v.iter().map(|&x| x * x).sum::<T>() / n).sqrt()
}
