//! Structured, orthogonal hexahedral grid of the quarter-symmetry cuboid.
//!
//! The quarter domain spans `[0, L/2] x [0, W/2] x [0, H]`. The planes
//! `x = 0` and `y = 0` are symmetry planes, `z = 0` is the bottom (plate or
//! pan contact) and every other outer face belongs to the `surface` patch.
//! Boundary inflation layers grow geometrically from `first_layer_height`
//! towards the interior spacing next to `bottom` and `surface`.

use serde::{Deserialize, Serialize};

use crate::error::MeshError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSpec {
    /// Full cuboid `L x W x H` in m; the mesh covers one quarter of it.
    pub dims_m: [f64; 3],
    /// Interior spacing `h` in m.
    pub spacing_m: f64,
    pub inflation_layers: usize,
    /// Thickness of the wall-adjacent cell in m.
    pub first_layer_height_m: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec {
            dims_m: [0.070, 0.040, 0.030],
            spacing_m: 5e-4,
            inflation_layers: 10,
            first_layer_height_m: 1e-4,
        }
    }
}

impl MeshSpec {
    /// Extent of the quarter domain.
    pub fn quarter_extent(&self) -> [f64; 3] {
        [self.dims_m[0] / 2.0, self.dims_m[1] / 2.0, self.dims_m[2]]
    }

    /// Growth ratio `r` such that `h1 r^n = h`.
    pub fn layer_growth_rate(&self) -> f64 {
        if self.inflation_layers == 0 {
            return 1.0;
        }
        (self.spacing_m / self.first_layer_height_m).powf(1.0 / self.inflation_layers as f64)
    }

    /// Inflation-layer thicknesses from the wall inwards.
    pub fn layer_thicknesses(&self) -> Vec<f64> {
        let r = self.layer_growth_rate();
        (0..self.inflation_layers)
            .map(|k| self.first_layer_height_m * r.powi(k as i32))
            .collect()
    }

    pub fn inflation_thickness(&self) -> f64 {
        self.layer_thicknesses().iter().sum()
    }

    /// Same spec with the interior spacing and first-layer height scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> MeshSpec {
        MeshSpec {
            spacing_m: self.spacing_m * factor,
            first_layer_height_m: self.first_layer_height_m * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: &str| Err(MeshError::InvalidSpec(m.to_string()));
        if self.dims_m.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return bad("cuboid dimensions must be positive");
        }
        if !(self.spacing_m > 0.0) {
            return bad("interior spacing must be positive");
        }
        if self.inflation_layers > 0 {
            if !(self.first_layer_height_m > 0.0) {
                return bad("first layer height must be positive");
            }
            if self.first_layer_height_m > self.spacing_m {
                return bad("first layer height exceeds the interior spacing");
            }
            let ext = self.quarter_extent();
            let min_dim = ext.iter().cloned().fold(f64::INFINITY, f64::min);
            if self.inflation_thickness() >= min_dim / 2.0 {
                return bad("inflation stack exceeds half the domain");
            }
        }
        Ok(())
    }
}

/// Boundary patch labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Patch {
    Bottom,
    Surface,
    SymmetryX,
    SymmetryY,
}

/// Cell faces and centres along one coordinate axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub faces: Vec<f64>,
    pub centers: Vec<f64>,
}

impl Axis {
    fn from_widths(widths: &[f64]) -> Axis {
        let mut faces = Vec::with_capacity(widths.len() + 1);
        faces.push(0.0);
        let mut x = 0.0;
        for w in widths {
            x += w;
            faces.push(x);
        }
        let centers = faces.windows(2).map(|f| 0.5 * (f[0] + f[1])).collect();
        Axis { faces, centers }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.faces[i + 1] - self.faces[i]
    }

    pub fn length(&self) -> f64 {
        *self.faces.last().unwrap()
    }

    /// Index of the lower bracketing centre and interpolation weight of the
    /// upper one; positions outside the centre hull are clamped.
    fn bracket(&self, p: f64) -> (usize, usize, f64) {
        let n = self.centers.len();
        if n == 1 || p <= self.centers[0] {
            return (0, 0, 0.0);
        }
        if p >= self.centers[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let i = self.centers.partition_point(|&c| c <= p) - 1;
        let w = (p - self.centers[i]) / (self.centers[i + 1] - self.centers[i]);
        (i, i + 1, w)
    }
}

fn build_axis(length: f64, spacing: f64, layers: &[f64], low: bool, high: bool) -> Axis {
    let stack: f64 = layers.iter().sum();
    let sides = low as usize + high as usize;
    let core = length - stack * sides as f64;
    let n_core = ((core / spacing).round() as usize).max(1);
    let dc = core / n_core as f64;
    let mut widths = Vec::with_capacity(n_core + layers.len() * sides);
    if low {
        widths.extend(layers.iter());
    }
    widths.extend(std::iter::repeat(dc).take(n_core));
    if high {
        widths.extend(layers.iter().rev());
    }
    // Pin the last face exactly to the domain length.
    let mut axis = Axis::from_widths(&widths);
    let n = axis.faces.len();
    axis.faces[n - 1] = length;
    let last = axis.centers.len() - 1;
    axis.centers[last] = 0.5 * (axis.faces[n - 2] + axis.faces[n - 1]);
    axis
}

/// Orthogonal structured mesh; cell `(i, j, k)` has linear index `i + nx (j + ny k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    pub spec: MeshSpec,
    pub axes: [Axis; 3],
}

impl StructuredMesh {
    pub fn nx(&self) -> usize {
        self.axes[0].len()
    }
    pub fn ny(&self) -> usize {
        self.axes[1].len()
    }
    pub fn nz(&self) -> usize {
        self.axes[2].len()
    }
    pub fn dims(&self) -> [usize; 3] {
        [self.nx(), self.ny(), self.nz()]
    }
    pub fn n_cells(&self) -> usize {
        self.nx() * self.ny() * self.nz()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx() * (j + self.ny() * k)
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.axes[0].length(),
            self.axes[1].length(),
            self.axes[2].length(),
        ]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.axes[0].centers[i],
            self.axes[1].centers[j],
            self.axes[2].centers[k],
        ]
    }

    pub fn volume(&self, i: usize, j: usize, k: usize) -> f64 {
        self.axes[0].width(i) * self.axes[1].width(j) * self.axes[2].width(k)
    }

    /// Cell volumes in linear-index order.
    pub fn volumes(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_cells());
        for k in 0..self.nz() {
            for j in 0..self.ny() {
                for i in 0..self.nx() {
                    v.push(self.volume(i, j, k));
                }
            }
        }
        v
    }

    /// Area of the face normal to `axis` of cell `(i, j, k)`.
    pub fn face_area(&self, axis: usize, i: usize, j: usize, k: usize) -> f64 {
        let w = [
            self.axes[0].width(i),
            self.axes[1].width(j),
            self.axes[2].width(k),
        ];
        match axis {
            0 => w[1] * w[2],
            1 => w[0] * w[2],
            _ => w[0] * w[1],
        }
    }

    /// Patch on the low (`high = false`) or high side of `axis`.
    pub fn patch(axis: usize, high: bool) -> Patch {
        match (axis, high) {
            (0, false) => Patch::SymmetryX,
            (1, false) => Patch::SymmetryY,
            (2, false) => Patch::Bottom,
            _ => Patch::Surface,
        }
    }

    /// Representative spacing `(V / N)^(1/3)`.
    pub fn representative_spacing(&self) -> f64 {
        let v: f64 = self.extent().iter().product();
        (v / self.n_cells() as f64).cbrt()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let ext = self.extent();
        (0..3).all(|d| p[d] >= -1e-12 && p[d] <= ext[d] * (1.0 + 1e-12) + 1e-15)
    }
}

pub fn build_quarter_cuboid(spec: &MeshSpec) -> Result<StructuredMesh, MeshError> {
    spec.validate()?;
    let ext = spec.quarter_extent();
    let layers = spec.layer_thicknesses();
    let axes = [
        build_axis(ext[0], spec.spacing_m, &layers, false, true),
        build_axis(ext[1], spec.spacing_m, &layers, false, true),
        build_axis(ext[2], spec.spacing_m, &layers, true, true),
    ];
    Ok(StructuredMesh {
        spec: spec.clone(),
        axes,
    })
}

/// Trilinear interpolation of cell-centred data. Between the outermost
/// centre and the wall the nearest centre value is used, which is the
/// mirrored value on symmetry planes.
pub fn probe_value(mesh: &StructuredMesh, field: &[f64], position: [f64; 3]) -> Result<f64, MeshError> {
    if !mesh.contains(position) || position.iter().any(|p| !p.is_finite()) {
        return Err(MeshError::OutsideDomain(position));
    }
    let (i0, i1, wx) = mesh.axes[0].bracket(position[0]);
    let (j0, j1, wy) = mesh.axes[1].bracket(position[1]);
    let (k0, k1, wz) = mesh.axes[2].bracket(position[2]);
    let f = |i, j, k| field[mesh.index(i, j, k)];
    let lerp = |a: f64, b: f64, w: f64| a + w * (b - a);
    let c00 = lerp(f(i0, j0, k0), f(i1, j0, k0), wx);
    let c10 = lerp(f(i0, j1, k0), f(i1, j1, k0), wx);
    let c01 = lerp(f(i0, j0, k1), f(i1, j0, k1), wx);
    let c11 = lerp(f(i0, j1, k1), f(i1, j1, k1), wx);
    let c0 = lerp(c00, c10, wy);
    let c1 = lerp(c01, c11, wy);
    Ok(lerp(c0, c1, wz))
}

/// Named virtual sensor positions in quarter-domain coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    /// Cuboid centre (`T_core`).
    pub a: [f64; 3],
    /// 1 mm below the top surface above `a` (`T_surface`).
    pub b: [f64; 3],
    /// 15 mm above the bottom on the long symmetry plane.
    pub c: [f64; 3],
    pub d: [f64; 3],
}

impl ProbeSet {
    pub fn for_cuboid(dims_m: [f64; 3]) -> ProbeSet {
        let half_len = dims_m[0] / 2.0;
        let h = dims_m[2];
        let side_height = 0.015f64.min(h / 2.0);
        ProbeSet {
            a: [0.0, 0.0, h / 2.0],
            b: [0.0, 0.0, h - 1e-3],
            c: [half_len / 3.0, 0.0, side_height],
            d: [2.0 * half_len / 3.0, 0.0, side_height],
        }
    }

    pub fn validate(&self, mesh: &StructuredMesh) -> Result<(), MeshError> {
        for p in [self.a, self.b, self.c, self.d] {
            if !mesh.contains(p) {
                return Err(MeshError::OutsideDomain(p));
            }
        }
        Ok(())
    }
}
