//! Conductivity fields and sequences: constants, radial layers, laminates,
//! diffeomorphism push-forwards, and boundary-blended bump families.
//!
//! Every field evaluates to a 2x2 symmetric positive-definite matrix and
//! carries an ellipticity constant `K` with eigenvalues in `[1/K, K]`.

use nalgebra::Matrix2;

use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::mesh::BoundaryLayer;
use crate::oracles::{laminate_g_limit, RadialLayers};

/// Position-dependent 2x2 symmetric conductivity with ellipticity constant.
#[derive(Debug, Clone)]
pub struct ConductivityField {
    kind: FieldKind,
    k_ellipticity: f64,
    description: String,
}

#[derive(Debug, Clone)]
enum FieldKind {
    Constant(Matrix2<f64>),
    RadialLayered(RadialLayers),
    Laminate {
        a: f64,
        b: f64,
        n: usize,
        direction: [f64; 2],
        support_radius: f64,
    },
    /// Homogenized limit of the laminate family: constant matrix inside the
    /// support disc, identity outside.
    HomogenizedLaminate {
        matrix: Matrix2<f64>,
        support_radius: f64,
    },
    Pushforward {
        base: Box<ConductivityField>,
        map: Box<Diffeomorphism>,
    },
    /// `base + amplitude * w(|x|) * I` with a C1 radial bump `w` supported on
    /// `(r_lo, r_hi)`, `max w = 1`.
    Blended {
        base: Box<ConductivityField>,
        amplitude: f64,
        r_lo: f64,
        r_hi: f64,
    },
}

fn bump(r: f64, lo: f64, hi: f64) -> f64 {
    if r <= lo || r >= hi {
        return 0.0;
    }
    let z = (2.0 * r - (lo + hi)) / (hi - lo);
    (1.0 - z * z).powi(2)
}

/// Area of the part of a triangle whose projection onto the lamination
/// direction lies below `c`. `ts` are the sorted vertex projections; the cut
/// area grows quadratically from each end.
fn area_below(ts: [f64; 3], area: f64, c: f64) -> f64 {
    let [t0, t1, t2] = ts;
    if c <= t0 {
        return 0.0;
    }
    if c >= t2 {
        return area;
    }
    let span = t2 - t0;
    if span <= 0.0 {
        return area;
    }
    if c <= t1 {
        let d1 = t1 - t0;
        if d1 <= 0.0 {
            return 0.0;
        }
        area * (c - t0) * (c - t0) / (d1 * span)
    } else {
        let d2 = t2 - t1;
        if d2 <= 0.0 {
            return area;
        }
        area - area * (t2 - c) * (t2 - c) / (d2 * span)
    }
}

fn spectral_bounds(m: &Matrix2<f64>) -> (f64, f64) {
    let half_tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let disc = (0.25 * (m[(0, 0)] - m[(1, 1)]).powi(2) + m[(0, 1)] * m[(1, 0)]).max(0.0);
    let d = disc.sqrt();
    (half_tr - d, half_tr + d)
}

/// Spectral norm of a symmetric 2x2 matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &Matrix2<f64>) -> f64 {
    let (lo, hi) = spectral_bounds(m);
    lo.abs().max(hi.abs())
}

impl ConductivityField {
    /// Isotropic constant `c * I`.
    pub fn constant_iso(c: f64) -> Result<ConductivityField> {
        if !(c > 0.0) {
            return Err(Error::Field(format!("constant value {c} must be positive")));
        }
        Ok(ConductivityField {
            kind: FieldKind::Constant(Matrix2::identity() * c),
            k_ellipticity: c.max(1.0 / c),
            description: format!("constant {c}*I"),
        })
    }

    pub fn identity() -> ConductivityField {
        Self::constant_iso(1.0).expect("1 is positive")
    }

    /// Constant symmetric positive-definite matrix field.
    pub fn constant_matrix(m: Matrix2<f64>) -> Result<ConductivityField> {
        if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-14 * spectral_norm_sym(&m).max(1.0) {
            return Err(Error::Field("constant matrix must be symmetric".into()));
        }
        let sym = 0.5 * (m + m.transpose());
        let (lo, hi) = spectral_bounds(&sym);
        if lo <= 0.0 {
            return Err(Error::Field(format!(
                "constant matrix must be positive definite (min eigenvalue {lo})"
            )));
        }
        Ok(ConductivityField {
            kind: FieldKind::Constant(sym),
            k_ellipticity: hi.max(1.0 / lo),
            description: "constant matrix".into(),
        })
    }

    /// Isotropic piecewise-constant radial layers.
    pub fn radial_layered(radii: Vec<f64>, values: Vec<f64>) -> Result<ConductivityField> {
        let layers = RadialLayers::new(radii, values).map_err(rewrap_oracle)?;
        let k = layers
            .values()
            .iter()
            .map(|&v| v.max(1.0 / v))
            .fold(1.0_f64, f64::max);
        Ok(ConductivityField {
            kind: FieldKind::RadialLayered(layers),
            k_ellipticity: k,
            description: "radial layered".into(),
        })
    }

    /// The ring conductivity `(1 + alpha) * I` on `R^2 < |x| < R`, identity
    /// elsewhere. `alpha = 0` degenerates to the identity field.
    pub fn counterexample_sigma(alpha: f64, r: f64) -> Result<ConductivityField> {
        if alpha < 0.0 {
            return Err(Error::Field(format!("alpha {alpha} must be nonnegative")));
        }
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Field(format!("R {r} outside (0,1)")));
        }
        let mut field = Self::radial_layered(vec![r * r, r], vec![1.0, 1.0 + alpha, 1.0])?;
        field.k_ellipticity = 1.0 + alpha.max(0.0);
        field.description = format!("ring (1+{alpha})*I on ({:.6}, {r})", r * r);
        Ok(field)
    }

    /// Equal-width two-phase stripes of period `1/n` along `direction`,
    /// values `a` then `b`, restricted to `|x| < support_radius`.
    pub fn laminate(
        a: f64,
        b: f64,
        n: usize,
        direction: [f64; 2],
        support_radius: f64,
    ) -> Result<ConductivityField> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Field(format!(
                "laminate phases must be positive, got {a}, {b}"
            )));
        }
        if n == 0 {
            return Err(Error::Field(
                "laminate period count must be positive".into(),
            ));
        }
        let norm = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
        if norm < 1e-14 {
            return Err(Error::Field("laminate direction must be nonzero".into()));
        }
        if !(support_radius > 0.0 && support_radius <= 1.0) {
            return Err(Error::Field(format!(
                "support radius {support_radius} outside (0, 1]"
            )));
        }
        let k = a.max(1.0 / a).max(b.max(1.0 / b));
        Ok(ConductivityField {
            kind: FieldKind::Laminate {
                a,
                b,
                n,
                direction: [direction[0] / norm, direction[1] / norm],
                support_radius,
            },
            k_ellipticity: k,
            description: format!("laminate ({a},{b}) x{n} in |x|<{support_radius}"),
        })
    }

    /// Homogenized limit of [`ConductivityField::laminate`] as `n` grows.
    pub fn laminate_limit(
        a: f64,
        b: f64,
        direction: [f64; 2],
        support_radius: f64,
    ) -> Result<ConductivityField> {
        if !(support_radius > 0.0 && support_radius <= 1.0) {
            return Err(Error::Field(format!(
                "support radius {support_radius} outside (0, 1]"
            )));
        }
        let matrix = laminate_g_limit(a, b, direction).map_err(rewrap_oracle)?;
        let k = a.max(1.0 / a).max(b.max(1.0 / b));
        Ok(ConductivityField {
            kind: FieldKind::HomogenizedLaminate {
                matrix,
                support_radius,
            },
            k_ellipticity: k,
            description: format!("homogenized laminate ({a},{b}) in |x|<{support_radius}"),
        })
    }

    /// Homogenized laminate limit given directly by its effective matrix.
    pub fn homogenized_matrix(
        matrix: Matrix2<f64>,
        support_radius: f64,
    ) -> Result<ConductivityField> {
        if !(support_radius > 0.0 && support_radius <= 1.0) {
            return Err(Error::Field(format!(
                "support radius {support_radius} outside (0, 1]"
            )));
        }
        let sym = 0.5 * (matrix + matrix.transpose());
        let (lo, hi) = spectral_bounds(&sym);
        if lo <= 0.0 {
            return Err(Error::Field(format!(
                "effective matrix must be positive definite (min eigenvalue {lo})"
            )));
        }
        Ok(ConductivityField {
            kind: FieldKind::HomogenizedLaminate {
                matrix: sym,
                support_radius,
            },
            k_ellipticity: hi.max(1.0 / lo),
            description: format!("homogenized laminate matrix in |x|<{support_radius}"),
        })
    }

    /// Change of variables `y = F(x)`: the field
    /// `J_F^{-1} DF sigma DF^T` evaluated at `x = F^{-1}(y)`. The ellipticity
    /// constant is `K(F)^2 * K(sigma)` with `K(F)` the sampled supremum of
    /// `||DF||^2 / J_F`.
    pub fn push_forward(
        sigma: ConductivityField,
        map: Diffeomorphism,
    ) -> Result<ConductivityField> {
        let kf = map.quasiconformal_constant()?;
        let k = kf * kf * sigma.k_ellipticity;
        let description = format!(
            "pushforward of [{}] by {}",
            sigma.description, map.description
        );
        Ok(ConductivityField {
            kind: FieldKind::Pushforward {
                base: Box::new(sigma),
                map: Box::new(map),
            },
            k_ellipticity: k,
            description,
        })
    }

    /// `base + amplitude * w(|x|) * I` with the C1 bump `w` supported on
    /// `(r_lo, r_hi)`.
    pub fn blended_bump(
        base: ConductivityField,
        amplitude: f64,
        r_lo: f64,
        r_hi: f64,
    ) -> Result<ConductivityField> {
        if !(r_lo >= 0.0 && r_lo < r_hi && r_hi <= 1.0) {
            return Err(Error::Field(format!(
                "bump support ({r_lo}, {r_hi}) is not a sub-interval of (0, 1)"
            )));
        }
        let description = format!("[{}] + {amplitude}*bump({r_lo},{r_hi})*I", base.description);
        let mut field = ConductivityField {
            k_ellipticity: 1.0,
            kind: FieldKind::Blended {
                base: Box::new(base),
                amplitude,
                r_lo,
                r_hi,
            },
            description,
        };
        field.k_ellipticity = field.sampled_ellipticity()?;
        Ok(field)
    }

    /// Approximate-cloaking composite: the two-layer field (`beta` inside
    /// `B_rho`, free space outside) pushed through the cloaking map, i.e.
    /// free space blown up over the annulus and a `beta * I` core hidden in
    /// the disc of radius `(1+rho)/2`.
    pub fn cloaking_field(rho: f64, beta: f64) -> Result<ConductivityField> {
        if !(beta > 0.0) {
            return Err(Error::Field(format!(
                "inclusion value {beta} must be positive"
            )));
        }
        let base = Self::radial_layered(vec![rho], vec![beta, 1.0])?;
        let map = Diffeomorphism::cloaking_map(rho)?;
        Self::push_forward(base, map)
    }

    /// Mean of the field over a triangle. For laminates this is exact (the
    /// triangle is clipped against the stripe planes); every other kind uses
    /// the centroid value. P1 Galerkin stiffness depends on the field only
    /// through this mean, so the laminate case assembles the exact matrix
    /// even though stripes cannot align with a polar mesh.
    pub fn element_average(&self, p: &[[f64; 2]; 3]) -> Matrix2<f64> {
        let centroid = [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ];
        if let FieldKind::Laminate {
            a,
            b,
            n,
            direction,
            support_radius,
        } = &self.kind
        {
            // Inside/outside the support disc is decided at the centroid;
            // meshes snap a ring onto the support circle so no element
            // straddles it.
            let rc = (centroid[0] * centroid[0] + centroid[1] * centroid[1]).sqrt();
            if rc >= *support_radius {
                return Matrix2::identity();
            }
            let mut ts = [0.0_f64; 3];
            for (t, q) in ts.iter_mut().zip(p) {
                *t = q[0] * direction[0] + q[1] * direction[1];
            }
            ts.sort_unstable_by(f64::total_cmp);
            let area = 0.5
                * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                    - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
                    .abs();
            if !(area > 0.0) {
                return self.eval(centroid);
            }
            // Walk the stripe boundaries t = j/(2n) crossing the projection
            // range and accumulate phase-weighted clipped areas.
            let half = 0.5 / *n as f64;
            let mut acc = 0.0;
            let mut lo = ts[0];
            let mut covered = 0.0;
            let mut j = (ts[0] / half).floor() as i64 + 1;
            loop {
                let hi = (j as f64 * half).min(ts[2]);
                if hi > lo {
                    let slab = area_below(ts, area, hi) - covered;
                    let mid = 0.5 * (lo + hi) * *n as f64;
                    let phase = if mid - mid.floor() < 0.5 { *a } else { *b };
                    acc += slab * phase;
                    covered += slab;
                    lo = hi;
                }
                if hi >= ts[2] {
                    break;
                }
                j += 1;
            }
            return Matrix2::identity() * (acc / area);
        }
        self.eval(centroid)
    }

    pub fn eval(&self, x: [f64; 2]) -> Matrix2<f64> {
        match &self.kind {
            FieldKind::Constant(m) => *m,
            FieldKind::RadialLayered(layers) => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                Matrix2::identity() * layers.value_at(r)
            }
            FieldKind::Laminate {
                a,
                b,
                n,
                direction,
                support_radius,
            } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r >= *support_radius {
                    return Matrix2::identity();
                }
                let t = (x[0] * direction[0] + x[1] * direction[1]) * *n as f64;
                let s = t - t.floor();
                Matrix2::identity() * if s < 0.5 { *a } else { *b }
            }
            FieldKind::HomogenizedLaminate {
                matrix,
                support_radius,
            } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r >= *support_radius {
                    Matrix2::identity()
                } else {
                    *matrix
                }
            }
            FieldKind::Pushforward { base, map } => {
                let pre = map.inverse(x);
                let d = map.jacobian(pre);
                let j = d[(0, 0)] * d[(1, 1)] - d[(0, 1)] * d[(1, 0)];
                assert!(
                    j > 0.0,
                    "push-forward Jacobian not positive at ({}, {})",
                    x[0],
                    x[1]
                );
                let m = d * base.eval(pre) * d.transpose() / j;
                0.5 * (m + m.transpose())
            }
            FieldKind::Blended {
                base,
                amplitude,
                r_lo,
                r_hi,
            } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                base.eval(x) + Matrix2::identity() * (*amplitude * bump(r, *r_lo, *r_hi))
            }
        }
    }

    pub fn k_ellipticity(&self) -> f64 {
        self.k_ellipticity
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Descriptor tag of the field family.
    pub fn kind_tag(&self) -> &'static str {
        match &self.kind {
            FieldKind::Constant(_) => "constant",
            FieldKind::RadialLayered(_) => "radial-layered",
            FieldKind::Laminate { .. } | FieldKind::HomogenizedLaminate { .. } => "laminate",
            FieldKind::Pushforward { .. } => "pushforward",
            FieldKind::Blended { .. } => "blended",
        }
    }

    /// Radii of discontinuity circles, for mesh snapping. Push-forwards map
    /// the base radii through the diffeomorphism.
    pub fn interface_radii(&self) -> Vec<f64> {
        let radii = match &self.kind {
            FieldKind::Constant(_) => vec![],
            FieldKind::RadialLayered(layers) => layers.radii().to_vec(),
            FieldKind::Laminate { support_radius, .. }
            | FieldKind::HomogenizedLaminate { support_radius, .. } => vec![*support_radius],
            FieldKind::Pushforward { base, map } => base
                .interface_radii()
                .iter()
                .map(|&r| {
                    let y = map.forward([r, 0.0]);
                    (y[0] * y[0] + y[1] * y[1]).sqrt()
                })
                .collect(),
            FieldKind::Blended {
                base, r_lo, r_hi, ..
            } => {
                let mut v = base.interface_radii();
                v.push(*r_lo);
                v.push(*r_hi);
                v
            }
        };
        let mut radii: Vec<f64> = radii
            .into_iter()
            .filter(|&r| r > 1e-12 && r < 1.0 - 1e-12)
            .collect();
        radii.sort_by(f64::total_cmp);
        radii.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        radii
    }

    /// Underlying radial layer structure, when the field has one.
    pub fn as_radial_layers(&self) -> Option<&RadialLayers> {
        match &self.kind {
            FieldKind::RadialLayered(layers) => Some(layers),
            _ => None,
        }
    }

    /// Checks symmetry and the sampled ellipticity bounds at one point.
    pub fn validate_at(&self, x: [f64; 2]) -> Result<()> {
        let m = self.eval(x);
        if m[(0, 1)] != m[(1, 0)] {
            return Err(Error::Field(format!(
                "asymmetric value at ({}, {}): {} vs {}",
                x[0],
                x[1],
                m[(0, 1)],
                m[(1, 0)]
            )));
        }
        let k = self.k_ellipticity;
        let dirs = [
            [1.0, 0.0],
            [0.0, 1.0],
            [
                std::f64::consts::FRAC_1_SQRT_2,
                std::f64::consts::FRAC_1_SQRT_2,
            ],
        ];
        for xi in dirs {
            let q = m[(0, 0)] * xi[0] * xi[0]
                + 2.0 * m[(0, 1)] * xi[0] * xi[1]
                + m[(1, 1)] * xi[1] * xi[1];
            if q < 1.0 / k - 1e-9 || q > k + 1e-9 {
                return Err(Error::Field(format!(
                    "quadratic form {q} outside [1/{k}, {k}] at ({}, {})",
                    x[0], x[1]
                )));
            }
        }
        Ok(())
    }

    fn sampled_ellipticity(&self) -> Result<f64> {
        let mut k = 1.0_f64;
        for x in sample_grid() {
            let (lo, hi) = spectral_bounds(&self.eval(x));
            if lo <= 0.0 {
                return Err(Error::Field(format!(
                    "field not positive definite at ({}, {})",
                    x[0], x[1]
                )));
            }
            k = k.max(hi).max(1.0 / lo);
        }
        Ok(k)
    }

    /// Serializes the descriptor to key=value text.
    pub fn to_config_text(&self) -> String {
        let mut out = format!("kind={}\n", self.kind_tag());
        match &self.kind {
            FieldKind::Constant(m) => {
                if m[(0, 1)] == 0.0 && m[(0, 0)] == m[(1, 1)] {
                    out.push_str(&format!("value={}\n", m[(0, 0)]));
                } else {
                    out.push_str(&format!(
                        "matrix=[{},{},{}]\n",
                        m[(0, 0)],
                        m[(0, 1)],
                        m[(1, 1)]
                    ));
                }
            }
            FieldKind::RadialLayered(layers) => {
                out.push_str(&format!("radii={}\n", fmt_list(layers.radii())));
                out.push_str(&format!("values={}\n", fmt_list(layers.values())));
            }
            FieldKind::Laminate {
                a,
                b,
                n,
                direction,
                support_radius,
            } => {
                out.push_str(&format!("a={a}\nb={b}\nn={n}\n"));
                out.push_str(&format!("direction=[{},{}]\n", direction[0], direction[1]));
                out.push_str(&format!("support_radius={support_radius}\n"));
            }
            FieldKind::HomogenizedLaminate {
                matrix,
                support_radius,
            } => {
                out.push_str("n=0\n");
                out.push_str(&format!(
                    "matrix=[{},{},{}]\n",
                    matrix[(0, 0)],
                    matrix[(0, 1)],
                    matrix[(1, 1)]
                ));
                out.push_str(&format!("support_radius={support_radius}\n"));
            }
            FieldKind::Pushforward { base, map } => {
                out.push_str(&format!("map={}\n", map.descriptor_tag()));
                for line in base.to_config_text().lines() {
                    out.push_str(&format!("base.{line}\n"));
                }
            }
            FieldKind::Blended {
                base,
                amplitude,
                r_lo,
                r_hi,
            } => {
                out.push_str(&format!(
                    "amplitude={amplitude}\nr_lo={r_lo}\nr_hi={r_hi}\n"
                ));
                for line in base.to_config_text().lines() {
                    out.push_str(&format!("base.{line}\n"));
                }
            }
        }
        out
    }

    /// Parses a descriptor produced by [`ConductivityField::to_config_text`]
    /// or written by hand.
    pub fn from_config_text(text: &str) -> Result<ConductivityField> {
        let doc = KvDoc::parse(text)?;
        Self::from_kv(&doc)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<ConductivityField> {
        match doc.require("kind")? {
            "constant" => {
                doc.check_known(&["kind", "value", "matrix"], &[])?;
                if let Some(c) = doc.get_f64("value")? {
                    Self::constant_iso(c)
                } else {
                    let m = doc.require_list_f64("matrix")?;
                    if m.len() != 3 {
                        return Err(Error::Config(
                            "matrix must be [m00,m01,m11] (symmetric)".into(),
                        ));
                    }
                    Self::constant_matrix(Matrix2::new(m[0], m[1], m[1], m[2]))
                }
            }
            "radial-layered" => {
                doc.check_known(&["kind", "radii", "values"], &[])?;
                Self::radial_layered(
                    doc.require_list_f64("radii")?,
                    doc.require_list_f64("values")?,
                )
            }
            "laminate" => {
                doc.check_known(
                    &[
                        "kind",
                        "a",
                        "b",
                        "n",
                        "direction",
                        "support_radius",
                        "matrix",
                    ],
                    &[],
                )?;
                let n = doc.require_usize("n")?;
                let support = doc.get_f64("support_radius")?.unwrap_or(1.0);
                let dir = doc
                    .get_list_f64("direction")?
                    .unwrap_or_else(|| vec![1.0, 0.0]);
                if dir.len() != 2 {
                    return Err(Error::Config("direction must be [dx,dy]".into()));
                }
                if n == 0 {
                    // Homogenized limit: either the stored effective matrix
                    // (as written by to_config_text) or explicit phases.
                    if let Some(m) = doc.get_list_f64("matrix")? {
                        if m.len() != 3 {
                            return Err(Error::Config(
                                "matrix must be [m00,m01,m11] (symmetric)".into(),
                            ));
                        }
                        Self::homogenized_matrix(Matrix2::new(m[0], m[1], m[1], m[2]), support)
                    } else {
                        Self::laminate_limit(
                            doc.require_f64("a")?,
                            doc.require_f64("b")?,
                            [dir[0], dir[1]],
                            support,
                        )
                    }
                } else {
                    Self::laminate(
                        doc.require_f64("a")?,
                        doc.require_f64("b")?,
                        n,
                        [dir[0], dir[1]],
                        support,
                    )
                }
            }
            "pushforward" => {
                doc.check_known(&["kind", "map"], &["base."])?;
                let map = Diffeomorphism::from_descriptor_tag(doc.require("map")?)?;
                let base = Self::from_kv(&doc.scoped("base"))?;
                Self::push_forward(base, map)
            }
            "blended" => {
                doc.check_known(&["kind", "amplitude", "r_lo", "r_hi"], &["base."])?;
                let base = Self::from_kv(&doc.scoped("base"))?;
                Self::blended_bump(
                    base,
                    doc.require_f64("amplitude")?,
                    doc.require_f64("r_lo")?,
                    doc.require_f64("r_hi")?,
                )
            }
            other => Err(Error::Config(format!(
                "unknown conductivity kind {other:?}"
            ))),
        }
    }
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(","))
}

fn rewrap_oracle(e: Error) -> Error {
    match e {
        Error::Oracle(m) => Error::Field(m),
        other => other,
    }
}

/// A homeomorphism of the disc with analytic Jacobian, used for push-forwards.
#[derive(Debug, Clone)]
pub struct Diffeomorphism {
    kind: MapKind,
    pub boundary_identity: bool,
    description: String,
}

#[derive(Debug, Clone)]
enum MapKind {
    Identity,
    Radial(RadialProfile),
    Composed(Box<Diffeomorphism>, Box<Diffeomorphism>),
}

#[derive(Debug, Clone, Copy)]
enum RadialProfile {
    /// `f(r) = r + c r (1 - r)`; increasing on [0,1] for |c| < 1, f(1) = 1.
    Polynomial { c: f64 },
    /// `f(r) = (1 + r)/2` on `[rho, 1]`, linear `r (1+rho)/(2 rho)` inside.
    Cloak { rho: f64 },
}

impl RadialProfile {
    fn f(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Polynomial { c } => (1.0 + c) * r - c * r * r,
            RadialProfile::Cloak { rho } => {
                if r < rho {
                    r * (1.0 + rho) / (2.0 * rho)
                } else {
                    0.5 * (1.0 + r)
                }
            }
        }
    }

    fn fp(&self, r: f64) -> f64 {
        match *self {
            RadialProfile::Polynomial { c } => 1.0 + c - 2.0 * c * r,
            RadialProfile::Cloak { rho } => {
                if r < rho {
                    (1.0 + rho) / (2.0 * rho)
                } else {
                    0.5
                }
            }
        }
    }

    fn f_inv(&self, s: f64) -> f64 {
        match *self {
            RadialProfile::Polynomial { c } => {
                if c.abs() < 1e-14 {
                    s
                } else {
                    let one_c = 1.0 + c;
                    (one_c - (one_c * one_c - 4.0 * c * s).sqrt()) / (2.0 * c)
                }
            }
            RadialProfile::Cloak { rho } => {
                if s < 0.5 * (1.0 + rho) {
                    2.0 * rho * s / (1.0 + rho)
                } else {
                    2.0 * s - 1.0
                }
            }
        }
    }
}

impl Diffeomorphism {
    pub fn identity() -> Diffeomorphism {
        Diffeomorphism {
            kind: MapKind::Identity,
            boundary_identity: true,
            description: "identity".into(),
        }
    }

    /// Radial map with profile `f(r) = r + c r (1 - r)`; requires |c| < 1 so
    /// that f' > 0 on [0, 1]. Fixes the boundary pointwise.
    pub fn radial_polynomial(c: f64) -> Result<Diffeomorphism> {
        if !(c.abs() < 1.0) {
            return Err(Error::Field(format!(
                "radial profile parameter {c} outside (-1, 1)"
            )));
        }
        Ok(Diffeomorphism {
            kind: MapKind::Radial(RadialProfile::Polynomial { c }),
            boundary_identity: true,
            description: format!("radial-poly:{c}"),
        })
    }

    /// Blow-up map for approximate cloaking: the annulus `(rho, 1)` maps onto
    /// `((1+rho)/2, 1)` with profile `(1+r)/2` and `B_rho` expands linearly
    /// onto the cloaked disc of radius `(1+rho)/2`. Fixes the boundary.
    pub fn cloaking_map(rho: f64) -> Result<Diffeomorphism> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Field(format!("cloak parameter {rho} outside (0,1)")));
        }
        Ok(Diffeomorphism {
            kind: MapKind::Radial(RadialProfile::Cloak { rho }),
            boundary_identity: true,
            description: format!("cloak:{rho}"),
        })
    }

    /// Composition `outer . inner` (apply `inner` first).
    pub fn compose(outer: Diffeomorphism, inner: Diffeomorphism) -> Diffeomorphism {
        let boundary_identity = outer.boundary_identity && inner.boundary_identity;
        let description = format!("{} . {}", outer.description, inner.description);
        Diffeomorphism {
            kind: MapKind::Composed(Box::new(outer), Box::new(inner)),
            boundary_identity,
            description,
        }
    }

    pub fn forward(&self, x: [f64; 2]) -> [f64; 2] {
        match &self.kind {
            MapKind::Identity => x,
            MapKind::Radial(p) => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r < 1e-300 {
                    return [0.0, 0.0];
                }
                let scale = p.f(r) / r;
                [x[0] * scale, x[1] * scale]
            }
            MapKind::Composed(outer, inner) => outer.forward(inner.forward(x)),
        }
    }

    pub fn inverse(&self, y: [f64; 2]) -> [f64; 2] {
        match &self.kind {
            MapKind::Identity => y,
            MapKind::Radial(p) => {
                let s = (y[0] * y[0] + y[1] * y[1]).sqrt();
                if s < 1e-300 {
                    return [0.0, 0.0];
                }
                let scale = p.f_inv(s) / s;
                [y[0] * scale, y[1] * scale]
            }
            MapKind::Composed(outer, inner) => inner.inverse(outer.inverse(y)),
        }
    }

    /// Jacobian matrix DF at `x`. Radial maps have
    /// `DF = f'(r) P_r + (f(r)/r) P_theta`; at the center this limits to
    /// `f'(0) I` for profiles with `f(0) = 0`.
    pub fn jacobian(&self, x: [f64; 2]) -> Matrix2<f64> {
        match &self.kind {
            MapKind::Identity => Matrix2::identity(),
            MapKind::Radial(p) => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if r < 1e-12 {
                    return Matrix2::identity() * p.fp(0.0);
                }
                let (cx, cy) = (x[0] / r, x[1] / r);
                let fp = p.fp(r);
                let ft = p.f(r) / r;
                Matrix2::new(
                    fp * cx * cx + ft * cy * cy,
                    (fp - ft) * cx * cy,
                    (fp - ft) * cx * cy,
                    fp * cy * cy + ft * cx * cx,
                )
            }
            MapKind::Composed(outer, inner) => outer.jacobian(inner.forward(x)) * inner.jacobian(x),
        }
    }

    /// Sampled supremum of `||DF||^2 / det DF` over the disc; errors if the
    /// Jacobian determinant is not positive at a sample point.
    pub fn quasiconformal_constant(&self) -> Result<f64> {
        let mut k = 0.0_f64;
        for x in sample_grid() {
            let d = self.jacobian(x);
            let j = d[(0, 0)] * d[(1, 1)] - d[(0, 1)] * d[(1, 0)];
            if j <= 1e-12 {
                return Err(Error::Field(format!(
                    "Jacobian determinant {j} not positive at ({}, {})",
                    x[0], x[1]
                )));
            }
            // Spectral norm squared of a 2x2 matrix from its Gram matrix.
            let g = d.transpose() * d;
            let (_, hi) = spectral_bounds(&g);
            k = k.max(hi / j);
        }
        Ok(k)
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Compact tag used in config files (`identity`, `radial-poly:<c>`,
    /// `cloak:<rho>`).
    pub fn descriptor_tag(&self) -> String {
        self.description.clone()
    }

    pub fn from_descriptor_tag(tag: &str) -> Result<Diffeomorphism> {
        if tag == "identity" {
            return Ok(Diffeomorphism::identity());
        }
        if let Some(c) = tag.strip_prefix("radial-poly:") {
            let c: f64 = c
                .parse()
                .map_err(|_| Error::Config(format!("bad map parameter in {tag:?}")))?;
            return Self::radial_polynomial(c);
        }
        if let Some(rho) = tag.strip_prefix("cloak:") {
            let rho: f64 = rho
                .parse()
                .map_err(|_| Error::Config(format!("bad map parameter in {tag:?}")))?;
            return Self::cloaking_map(rho);
        }
        Err(Error::Config(format!("unknown map descriptor {tag:?}")))
    }
}

/// Deterministic evaluation grid covering the disc and its boundary.
pub fn sample_grid() -> Vec<[f64; 2]> {
    let mut pts = vec![[0.0, 0.0], [1e-9, -1e-9]];
    for i in 0..24 {
        let r = (i as f64 + 0.5) / 24.0;
        for j in 0..16 {
            let theta = 2.0 * std::f64::consts::PI * (j as f64 + 0.37) / 16.0;
            pts.push([r * theta.cos(), r * theta.sin()]);
        }
    }
    for j in 0..32 {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / 32.0;
        pts.push([theta.cos(), theta.sin()]);
    }
    pts
}

/// Indexed family of conductivities with a designated limit.
#[derive(Debug, Clone)]
pub struct ConductivitySequence {
    family: SequenceFamily,
    limit: ConductivityField,
    description: String,
}

#[derive(Debug, Clone)]
enum SequenceFamily {
    Constant(ConductivityField),
    /// `at(n) = ` ring field at `r_grid[min(n, len) - 1]`.
    RingApproach {
        alpha: f64,
        r_grid: Vec<f64>,
    },
    /// `at(n) = ` laminate with `n` periods.
    LaminateRefining {
        a: f64,
        b: f64,
        direction: [f64; 2],
        support_radius: f64,
    },
    /// `at(n) = base + (amplitude / n) * bump * I`.
    BlendedBump {
        base: Box<ConductivityField>,
        amplitude: f64,
        r_lo: f64,
        r_hi: f64,
    },
}

impl ConductivitySequence {
    /// The constant sequence `sigma_n = sigma`.
    pub fn constant(field: ConductivityField) -> ConductivitySequence {
        ConductivitySequence {
            limit: field.clone(),
            description: format!("constant sequence of [{}]", field.description()),
            family: SequenceFamily::Constant(field),
        }
    }

    /// Ring conductivities whose rings march toward the boundary along
    /// `r_grid`; the limit is free space.
    pub fn ring_approach(alpha: f64, r_grid: Vec<f64>) -> Result<ConductivitySequence> {
        if r_grid.is_empty() {
            return Err(Error::Field("ring sequence needs a nonempty R grid".into()));
        }
        for &r in &r_grid {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Field(format!("R {r} outside (0,1)")));
            }
        }
        Ok(ConductivitySequence {
            family: SequenceFamily::RingApproach {
                alpha,
                r_grid: r_grid.clone(),
            },
            limit: ConductivityField::identity(),
            description: format!("ring approach alpha={alpha}, R in {r_grid:?}"),
        })
    }

    /// Laminates refining in period; the limit is the homogenized matrix
    /// inside the support.
    pub fn laminate_refining(
        a: f64,
        b: f64,
        direction: [f64; 2],
        support_radius: f64,
    ) -> Result<ConductivitySequence> {
        let limit = ConductivityField::laminate_limit(a, b, direction, support_radius)?;
        Ok(ConductivitySequence {
            family: SequenceFamily::LaminateRefining {
                a,
                b,
                direction,
                support_radius,
            },
            limit,
            description: format!("laminate ({a},{b}) refining in |x|<{support_radius}"),
        })
    }

    /// `sigma_n = base + (amplitude/n) * bump * I`; the limit is `base`.
    pub fn blended_bump(
        base: ConductivityField,
        amplitude: f64,
        r_lo: f64,
        r_hi: f64,
    ) -> Result<ConductivitySequence> {
        // Validate the support once via the n = 1 member.
        let _ = ConductivityField::blended_bump(base.clone(), amplitude, r_lo, r_hi)?;
        Ok(ConductivitySequence {
            description: format!(
                "[{}] + (1/n)*{amplitude}*bump({r_lo},{r_hi})",
                base.description()
            ),
            limit: base.clone(),
            family: SequenceFamily::BlendedBump {
                base: Box::new(base),
                amplitude,
                r_lo,
                r_hi,
            },
        })
    }

    /// Member `n >= 1` of the sequence.
    pub fn at(&self, n: usize) -> Result<ConductivityField> {
        if n == 0 {
            return Err(Error::Field("sequence index starts at 1".into()));
        }
        match &self.family {
            SequenceFamily::Constant(f) => Ok(f.clone()),
            SequenceFamily::RingApproach { alpha, r_grid } => {
                let r = r_grid[n.min(r_grid.len()) - 1];
                ConductivityField::counterexample_sigma(*alpha, r)
            }
            SequenceFamily::LaminateRefining {
                a,
                b,
                direction,
                support_radius,
            } => ConductivityField::laminate(*a, *b, n, *direction, *support_radius),
            SequenceFamily::BlendedBump {
                base,
                amplitude,
                r_lo,
                r_hi,
            } => ConductivityField::blended_bump(
                (**base).clone(),
                amplitude / n as f64,
                *r_lo,
                *r_hi,
            ),
        }
    }

    pub fn limit(&self) -> &ConductivityField {
        &self.limit
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// One row of the boundary-layer sup-norm scan.
#[derive(Debug, Clone, Copy)]
pub struct ScanRow {
    pub delta: f64,
    pub sup: f64,
    /// `sup / delta`, the quantity that must vanish for DN-norm convergence.
    pub scaled: f64,
}

/// Estimates, for each `delta`, the supremum over the boundary layer and over
/// the given sequence indices of the spectral norm `|sigma_n(x) - sigma(x)|`.
pub fn boundary_condition_scan_grid(
    seq: &ConductivitySequence,
    deltas: &[f64],
    n_grid: &[usize],
) -> Result<Vec<ScanRow>> {
    if deltas.is_empty() {
        return Err(Error::Field("delta list must be nonempty".into()));
    }
    for w in deltas.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Field("deltas must be strictly decreasing".into()));
        }
    }
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::Field(
            "sequence index grid must be nonempty, >= 1".into(),
        ));
    }
    let members: Vec<ConductivityField> = n_grid
        .iter()
        .map(|&n| seq.at(n))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Field(format!("delta {delta} outside (0,1)")));
        }
        let layer = BoundaryLayer::polar_grid(delta)?;
        let mut sup = 0.0_f64;
        for member in &members {
            for &x in &layer.sample_points {
                let diff = member.eval(x) - seq.limit().eval(x);
                sup = sup.max(spectral_norm_sym(&diff));
            }
        }
        rows.push(ScanRow {
            delta,
            sup,
            scaled: sup / delta,
        });
    }
    Ok(rows)
}

/// Scan over all indices `1..=n_max`.
pub fn boundary_condition_scan(
    seq: &ConductivitySequence,
    deltas: &[f64],
    n_max: usize,
) -> Result<Vec<ScanRow>> {
    let n_grid: Vec<usize> = (1..=n_max.max(1)).collect();
    boundary_condition_scan_grid(seq, deltas, &n_grid)
}

/// Verdict: the scaled values decrease along the (decreasing) delta grid and
/// end near zero, so the vanishing-near-the-boundary condition is plausible.
pub fn scan_plausible(rows: &[ScanRow]) -> bool {
    if rows.is_empty() {
        return false;
    }
    for w in rows.windows(2) {
        if w[1].scaled > w[0].scaled + 1e-12 {
            return false;
        }
    }
    let first = rows[0].scaled;
    let last = rows[rows.len() - 1].scaled;
    last <= (0.5 * first).max(1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ring_field_values() {
        let f = ConductivityField::counterexample_sigma(1.0, 0.9).unwrap();
        assert_eq!(f.eval([0.85, 0.0]), Matrix2::identity() * 2.0);
        assert_eq!(f.eval([0.95, 0.0]), Matrix2::identity());
        assert_eq!(f.eval([0.5, 0.0]), Matrix2::identity());
        assert_eq!(f.k_ellipticity(), 2.0);
        assert_eq!(f.interface_radii(), vec![0.81, 0.9]);

        let id = ConductivityField::counterexample_sigma(0.0, 0.5).unwrap();
        assert_eq!(id.eval([0.3, 0.2]), Matrix2::identity());
        assert!(ConductivityField::counterexample_sigma(-0.5, 0.5).is_err());
        assert!(ConductivityField::counterexample_sigma(1.0, 1.5).is_err());
    }

    #[test]
    fn ring_values_are_two_valued() {
        let f = ConductivityField::counterexample_sigma(0.7, 0.8).unwrap();
        for x in sample_grid() {
            let m = f.eval(x);
            let v = m[(0, 0)];
            assert!(m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0 && m[(1, 1)] == v);
            assert!(
                (v - 1.0).abs() < 1e-15 || (v - 1.7).abs() < 1e-15,
                "unexpected ring value {v}"
            );
        }
    }

    #[test]
    fn pushforward_identity_map_is_identity() {
        let sigma = ConductivityField::counterexample_sigma(1.0, 0.9).unwrap();
        let pf =
            ConductivityField::push_forward(sigma.clone(), Diffeomorphism::identity()).unwrap();
        for x in sample_grid() {
            assert_relative_eq!(pf.eval(x), sigma.eval(x), max_relative = 1e-14);
        }
        assert_relative_eq!(
            pf.k_ellipticity(),
            sigma.k_ellipticity(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn pushforward_radial_eigenvalues() {
        // Identity pushed through f(r) = (1+r)/2 extended linearly inside:
        // at |y| = 0.75 (image of r = 0.5) the frame eigenvalues are
        // f' r / f = 1/3 radially and f / (f' r) = 3 tangentially.
        let field = ConductivityField::cloaking_field(0.3, 1.0).unwrap();
        let y = [0.75, 0.0];
        let m = field.eval(y);
        assert_relative_eq!(m[(0, 0)], 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(m[(1, 1)], 3.0, max_relative = 1e-12);
        assert!(m[(0, 1)].abs() < 1e-14);

        // Radial eigenvalue (2s - 1)/(2s) at radius s, tested off-axis.
        let s = 0.8_f64;
        let y2 = [s / 2.0_f64.sqrt(), s / 2.0_f64.sqrt()];
        let m2 = field.eval(y2);
        let radial = [1.0 / 2.0_f64.sqrt(), 1.0 / 2.0_f64.sqrt()];
        let q = m2[(0, 0)] * radial[0] * radial[0]
            + 2.0 * m2[(0, 1)] * radial[0] * radial[1]
            + m2[(1, 1)] * radial[1] * radial[1];
        assert_relative_eq!(q, (2.0 * s - 1.0) / (2.0 * s), max_relative = 1e-12);
    }

    #[test]
    fn pushforward_determinant_is_one_for_identity_base() {
        for map in [
            Diffeomorphism::radial_polynomial(0.5).unwrap(),
            Diffeomorphism::radial_polynomial(-0.8).unwrap(),
            Diffeomorphism::cloaking_map(0.25).unwrap(),
        ] {
            let f = ConductivityField::push_forward(ConductivityField::identity(), map).unwrap();
            for x in sample_grid() {
                let m = f.eval(x);
                let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
                assert!(
                    (det - 1.0).abs() <= 1e-10,
                    "det {det} != 1 at ({}, {})",
                    x[0],
                    x[1]
                );
            }
        }
    }

    #[test]
    fn pushforward_respects_composition() {
        let f = Diffeomorphism::radial_polynomial(0.4).unwrap();
        let g = Diffeomorphism::radial_polynomial(-0.3).unwrap();
        let sigma = ConductivityField::counterexample_sigma(1.0, 0.8).unwrap();

        let composed = ConductivityField::push_forward(
            sigma.clone(),
            Diffeomorphism::compose(g.clone(), f.clone()),
        )
        .unwrap();
        let staged =
            ConductivityField::push_forward(ConductivityField::push_forward(sigma, f).unwrap(), g)
                .unwrap();
        for x in sample_grid() {
            let d = composed.eval(x) - staged.eval(x);
            assert!(
                spectral_norm_sym(&d) <= 1e-8,
                "composition mismatch {} at ({}, {})",
                spectral_norm_sym(&d),
                x[0],
                x[1]
            );
        }
    }

    #[test]
    fn boundary_identity_maps_fix_boundary_points() {
        // The map fixes every boundary point; the push-forward tensor still
        // differs there because DF is not the identity on the circle.
        for map in [
            Diffeomorphism::radial_polynomial(0.5).unwrap(),
            Diffeomorphism::cloaking_map(0.3).unwrap(),
        ] {
            assert!(map.boundary_identity);
            for j in 0..16 {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / 16.0;
                let x = [theta.cos(), theta.sin()];
                let y = map.forward(x);
                let z = map.inverse(x);
                let err = ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2)).sqrt()
                    + ((z[0] - x[0]).powi(2) + (z[1] - x[1]).powi(2)).sqrt();
                assert!(err <= 1e-12, "boundary point moved by {err}");
            }
        }
    }

    #[test]
    fn map_inverse_roundtrip_and_orientation() {
        for map in [
            Diffeomorphism::identity(),
            Diffeomorphism::radial_polynomial(0.5).unwrap(),
            Diffeomorphism::radial_polynomial(-0.6).unwrap(),
            Diffeomorphism::cloaking_map(0.2).unwrap(),
            Diffeomorphism::compose(
                Diffeomorphism::radial_polynomial(0.3).unwrap(),
                Diffeomorphism::cloaking_map(0.5).unwrap(),
            ),
        ] {
            for x in sample_grid() {
                let y = map.forward(x);
                let back = map.inverse(y);
                let err = ((back[0] - x[0]).powi(2) + (back[1] - x[1]).powi(2)).sqrt();
                assert!(err <= 1e-10, "{}: roundtrip error {err}", map.description());
                let d = map.jacobian(x);
                assert!(d[(0, 0)] * d[(1, 1)] - d[(0, 1)] * d[(1, 0)] > 0.0);
            }
            if map.boundary_identity {
                for j in 0..8 {
                    let theta = 2.0 * std::f64::consts::PI * j as f64 / 8.0;
                    let x = [theta.cos(), theta.sin()];
                    let y = map.forward(x);
                    let err = ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2)).sqrt();
                    assert!(err <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn cloaking_map_radii() {
        let map = Diffeomorphism::cloaking_map(0.2).unwrap();
        let y = map.forward([0.2, 0.0]);
        assert_relative_eq!(y[0], 0.6, max_relative = 1e-14);
        let b = map.forward([1.0, 0.0]);
        assert_relative_eq!(b[0], 1.0, max_relative = 1e-14);
        // Quasiconformal constant of the cloak map blows up as rho -> 0.
        let k_02 = map.quasiconformal_constant().unwrap();
        let k_04 = Diffeomorphism::cloaking_map(0.4)
            .unwrap()
            .quasiconformal_constant()
            .unwrap();
        assert!(k_02 > k_04 && k_04 > 1.0);
    }

    #[test]
    fn laminate_stripes_and_support() {
        let f = ConductivityField::laminate(1.0, 2.0, 4, [1.0, 0.0], 0.5).unwrap();
        assert_eq!(f.eval([0.0, 0.0]), Matrix2::identity() * 1.0);
        // Second half of the first period along e1.
        assert_eq!(f.eval([0.15, 0.0]), Matrix2::identity() * 2.0);
        // Outside the support: identity.
        assert_eq!(f.eval([0.7, 0.0]), Matrix2::identity());
        assert_eq!(f.k_ellipticity(), 2.0);

        let c = ConductivityField::laminate(3.0, 3.0, 5, [0.0, 1.0], 1.0).unwrap();
        for x in sample_grid() {
            if (x[0] * x[0] + x[1] * x[1]).sqrt() < 1.0 {
                assert_eq!(c.eval(x), Matrix2::identity() * 3.0);
            }
        }
    }

    #[test]
    fn laminate_element_average_is_exact() {
        // Period 1/2 along e1: stripe boundaries at x = j/4.
        let f = ConductivityField::laminate(1.0, 3.0, 2, [1.0, 0.0], 1.0).unwrap();

        // Triangle strictly inside one stripe: plain phase value.
        let inside = [[0.01, 0.0], [0.2, 0.0], [0.1, 0.2]];
        assert_eq!(f.element_average(&inside), Matrix2::identity());

        // Rectangle split into two triangles across the x = 0.25 boundary,
        // exactly half in each phase: average (1+3)/2 = 2.
        let t1 = [[0.2, 0.0], [0.3, 0.0], [0.3, 0.1]];
        let t2 = [[0.2, 0.0], [0.3, 0.1], [0.2, 0.1]];
        let m1 = f.element_average(&t1);
        let m2 = f.element_average(&t2);
        let combined = 0.5 * (m1[(0, 0)] + m2[(0, 0)]);
        assert!((combined - 2.0).abs() < 1e-12, "got {combined}");

        // Oblique direction: cross-check against dense subdivision sampling.
        let g = ConductivityField::laminate(1.0, 2.0, 5, [0.6, 0.8], 1.0).unwrap();
        let tri = [[0.12, -0.3], [0.4, -0.1], [0.2, 0.15]];
        let exact = g.element_average(&tri)[(0, 0)];
        let mut acc = 0.0;
        let m = 400usize;
        let mut count = 0u64;
        let mut push = |l1: f64, l2: f64| {
            let l0 = 1.0 - l1 - l2;
            let x = [
                l0 * tri[0][0] + l1 * tri[1][0] + l2 * tri[2][0],
                l0 * tri[0][1] + l1 * tri[1][1] + l2 * tri[2][1],
            ];
            acc += g.eval(x)[(0, 0)];
            count += 1;
        };
        // Centroids of all m^2 congruent subtriangles (both orientations):
        // an equal-weight, unbiased quadrature of the mean.
        for i in 0..m {
            for j in 0..(m - i) {
                push(
                    (i as f64 + 1.0 / 3.0) / m as f64,
                    (j as f64 + 1.0 / 3.0) / m as f64,
                );
                if i + j + 2 <= m {
                    push(
                        (i as f64 + 2.0 / 3.0) / m as f64,
                        (j as f64 + 2.0 / 3.0) / m as f64,
                    );
                }
            }
        }
        let sampled = acc / count as f64;
        assert!(
            (exact - sampled).abs() < 5e-3,
            "exact {exact} vs sampled {sampled}"
        );

        // Non-laminate kinds fall back to the centroid value.
        let ring = ConductivityField::counterexample_sigma(1.0, 0.9).unwrap();
        let tri = [[0.8, 0.0], [0.9, 0.0], [0.85, 0.05]];
        assert_eq!(ring.element_average(&tri), ring.eval([0.85, 0.05 / 3.0]));
    }

    #[test]
    fn laminate_limit_matches_g_limit() {
        let lim = ConductivityField::laminate_limit(1.0, 2.0, [1.0, 0.0], 0.5).unwrap();
        let inside = lim.eval([0.1, 0.1]);
        assert_eq!(inside[(0, 0)], 4.0 / 3.0);
        assert_eq!(inside[(1, 1)], 1.5);
        assert_eq!(lim.eval([0.9, 0.0]), Matrix2::identity());
        assert_eq!(lim.kind_tag(), "laminate");
    }

    #[test]
    fn ellipticity_holds_on_sample_grid() {
        let fields = vec![
            ConductivityField::identity(),
            ConductivityField::counterexample_sigma(2.0, 0.85).unwrap(),
            ConductivityField::laminate(0.5, 4.0, 7, [0.6, 0.8], 0.9).unwrap(),
            ConductivityField::cloaking_field(0.3, 100.0).unwrap(),
            ConductivityField::blended_bump(ConductivityField::identity(), 0.5, 0.5, 1.0).unwrap(),
        ];
        for f in &fields {
            for x in sample_grid() {
                f.validate_at(x).unwrap();
            }
        }
    }

    #[test]
    fn config_text_roundtrip() {
        let fields = vec![
            ConductivityField::constant_iso(2.5).unwrap(),
            ConductivityField::constant_matrix(Matrix2::new(4.0 / 3.0, 0.0, 0.0, 1.5)).unwrap(),
            ConductivityField::counterexample_sigma(1.0, 0.9).unwrap(),
            ConductivityField::laminate(1.0, 2.0, 8, [1.0, 0.0], 0.5).unwrap(),
            ConductivityField::laminate_limit(1.0, 2.0, [1.0, 0.0], 0.5).unwrap(),
            ConductivityField::cloaking_field(0.3, 100.0).unwrap(),
            ConductivityField::blended_bump(ConductivityField::identity(), 0.25, 0.5, 1.0).unwrap(),
        ];
        for f in &fields {
            let text = f.to_config_text();
            let back = ConductivityField::from_config_text(&text).unwrap();
            assert_eq!(back.kind_tag(), f.kind_tag(), "tag for {text}");
            for x in sample_grid() {
                let d = back.eval(x) - f.eval(x);
                assert!(
                    spectral_norm_sym(&d) <= 1e-12,
                    "roundtrip mismatch for {text} at ({}, {})",
                    x[0],
                    x[1]
                );
            }
        }
    }

    #[test]
    fn config_parses_spec_example() {
        let f = ConductivityField::from_config_text(
            "kind=radial-layered\nradii=[0.81,0.9]\nvalues=[1.0,2.0,1.0]\n",
        )
        .unwrap();
        assert_eq!(f.eval([0.85, 0.0]), Matrix2::identity() * 2.0);
        assert!(ConductivityField::from_config_text("kind=warp").is_err());
        assert!(ConductivityField::from_config_text("kind=constant\nvalue=-1").is_err());
        assert!(ConductivityField::from_config_text("kind=constant\nvalue=1\nbananas=2").is_err());
    }

    #[test]
    fn scan_zero_difference_is_plausible() {
        let seq = ConductivitySequence::constant(
            ConductivityField::counterexample_sigma(1.0, 0.9).unwrap(),
        );
        let rows = boundary_condition_scan(&seq, &[0.4, 0.2, 0.1], 3).unwrap();
        for row in &rows {
            assert_eq!(row.sup, 0.0);
            assert_eq!(row.scaled, 0.0);
        }
        assert!(scan_plausible(&rows));
    }

    #[test]
    fn scan_interior_support_gives_zero_rows() {
        let seq = ConductivitySequence::laminate_refining(1.0, 2.0, [1.0, 0.0], 0.5).unwrap();
        let rows = boundary_condition_scan_grid(&seq, &[0.4, 0.2, 0.1], &[2, 4, 8]).unwrap();
        for row in &rows {
            assert_eq!(
                row.sup, 0.0,
                "delta {} sees the interior support",
                row.delta
            );
        }
        assert!(scan_plausible(&rows));
    }

    #[test]
    fn scan_ring_approach_fails_plausibility() {
        let seq =
            ConductivitySequence::ring_approach(1.0, vec![0.8, 0.9, 0.95, 0.99, 0.999]).unwrap();
        let rows = boundary_condition_scan(&seq, &[0.2, 0.1, 0.05, 0.02, 0.01], 5).unwrap();
        // Once some ring enters each layer the sup sticks at alpha = 1.
        for row in &rows {
            assert!(
                (row.sup - 1.0).abs() < 1e-12,
                "sup {} at delta {}",
                row.sup,
                row.delta
            );
            assert!(row.scaled >= 1.0 / row.delta - 1e-9);
        }
        assert!(!scan_plausible(&rows));
    }

    #[test]
    fn scan_bump_values_vanish_linearly() {
        let seq = ConductivitySequence::blended_bump(ConductivityField::identity(), 1.0, 0.5, 1.0)
            .unwrap();
        let deltas = [0.3, 0.2];
        let mut values = Vec::new();
        for n in [1, 2, 4, 8] {
            let rows = boundary_condition_scan_grid(&seq, &deltas, &[n]).unwrap();
            values.push(rows[0].sup);
        }
        for w in values.windows(2) {
            assert_relative_eq!(w[0] / w[1], 2.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let seq = ConductivitySequence::constant(ConductivityField::identity());
        assert!(boundary_condition_scan(&seq, &[], 3).is_err());
        assert!(boundary_condition_scan(&seq, &[0.1, 0.2], 3).is_err());
        assert!(boundary_condition_scan(&seq, &[1.2, 0.1], 3).is_err());
        assert!(boundary_condition_scan_grid(&seq, &[0.2, 0.1], &[]).is_err());
        assert!(boundary_condition_scan_grid(&seq, &[0.2, 0.1], &[0]).is_err());
        assert!(seq.at(0).is_err());
    }

    #[test]
    fn sequence_members_share_bounded_ellipticity() {
        let seq = ConductivitySequence::laminate_refining(0.5, 2.0, [1.0, 0.0], 1.0).unwrap();
        let k_limit = 2.0; // phases 0.5 and 2 both have eigenvalue bound 2
        for n in [1, 3, 9] {
            let f = seq.at(n).unwrap();
            assert!(f.k_ellipticity() <= k_limit);
            for x in sample_grid() {
                f.validate_at(x).unwrap();
            }
        }
        seq.limit().validate_at([0.1, 0.0]).unwrap();
    }
}
