//! Structured polar triangulations of the unit disc.
//!
//! Meshes are deterministic: one center vertex, `n_rings` concentric rings of
//! `n_sectors` vertices each, a fan around the center, and two triangles per
//! quad in every ring strip. Ring radii follow the uniform grid except that
//! each requested snap radius replaces the nearest free ring, so circles of
//! discontinuity of layered conductivities are exactly represented by mesh
//! edges.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Triangulation of the unit disc with angle-ordered boundary vertices.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    /// Vertex coordinates, center first, then rings inside out.
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary vertex indices ordered by increasing polar angle, angle 0 first.
    pub boundary: Vec<usize>,
    /// Radii whose circles are exactly represented by mesh edges.
    pub interfaces: Vec<f64>,
    n_rings: usize,
    n_sectors: usize,
    h: f64,
}

/// Quadrature points inside the boundary layer `1 - |x| < delta`.
#[derive(Debug, Clone)]
pub struct BoundaryLayer {
    pub delta: f64,
    pub sample_points: Vec<[f64; 2]>,
}

impl BoundaryLayer {
    /// Mesh-free polar sampling grid of the layer with radial and arc spacing
    /// `<= delta/4`. Used by sup-norm scans that have no mesh at hand.
    pub fn polar_grid(delta: f64) -> Result<BoundaryLayer> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Mesh(format!("delta {delta} outside (0, 1]")));
        }
        let n_angular = (8.0 * std::f64::consts::PI / delta).ceil() as usize;
        let mut sample_points = Vec::with_capacity(4 * n_angular);
        for m in 0..4 {
            let r = 1.0 - delta + (m as f64 + 0.5) * delta / 4.0;
            for i in 0..n_angular {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / n_angular as f64;
                sample_points.push([r * theta.cos(), r * theta.sin()]);
            }
        }
        Ok(BoundaryLayer {
            delta,
            sample_points,
        })
    }
}

/// Builds the structured polar mesh with `1 + n_rings * n_sectors` vertices.
///
/// Each snap radius replaces the nearest free ring of the uniform radial grid;
/// the outermost ring stays on the unit circle.
pub fn build_polar_mesh(
    n_rings: usize,
    n_sectors: usize,
    snap_radii: &[f64],
) -> Result<TriangleMesh> {
    if n_rings == 0 {
        return Err(Error::Mesh("n_rings must be positive".into()));
    }
    if n_sectors < 3 {
        return Err(Error::Mesh(format!(
            "n_sectors must be at least 3, got {n_sectors}"
        )));
    }
    for &s in snap_radii {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Mesh(format!("snap radius {s} outside (0,1)")));
        }
    }
    for w in snap_radii.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Mesh(format!(
                "snap radii must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if snap_radii.len() > n_rings.saturating_sub(1) {
        return Err(Error::Mesh(format!(
            "{} snap radii cannot be placed on {} interior rings",
            snap_radii.len(),
            n_rings - 1
        )));
    }

    // Uniform radial grid; the boundary ring (index n_rings - 1) is never moved.
    let mut radii: Vec<f64> = (1..=n_rings).map(|i| i as f64 / n_rings as f64).collect();
    let mut taken = vec![false; n_rings];
    taken[n_rings - 1] = true;
    for &s in snap_radii {
        let mut best: Option<(usize, f64)> = None;
        for (i, &r) in radii.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = (r - s).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("free ring exists by the count check above");
        radii[i] = s;
        taken[i] = true;
    }
    for w in radii.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Mesh(format!(
                "snapping produced non-monotone ring radii near {}",
                w[0]
            )));
        }
    }

    let mut vertices = Vec::with_capacity(1 + n_rings * n_sectors);
    vertices.push([0.0, 0.0]);
    for &r in &radii {
        for j in 0..n_sectors {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_sectors as f64;
            vertices.push([r * theta.cos(), r * theta.sin()]);
        }
    }

    let node = |ring: usize, j: usize| 1 + ring * n_sectors + (j % n_sectors);
    let mut triangles = Vec::with_capacity(n_sectors * (2 * n_rings - 1));
    for j in 0..n_sectors {
        triangles.push([0, node(0, j), node(0, j + 1)]);
    }
    for ring in 0..n_rings - 1 {
        for j in 0..n_sectors {
            let a = node(ring, j);
            let b = node(ring + 1, j);
            let c = node(ring + 1, j + 1);
            let d = node(ring, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }

    let boundary: Vec<usize> = (0..n_sectors).map(|j| node(n_rings - 1, j)).collect();
    let h = max_edge_length(&vertices, &triangles);

    let mesh = TriangleMesh {
        vertices,
        triangles,
        boundary,
        interfaces: snap_radii.to_vec(),
        n_rings,
        n_sectors,
        h,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn max_edge_length(vertices: &[[f64; 2]], triangles: &[[usize; 3]]) -> f64 {
    let mut h: f64 = 0.0;
    for t in triangles {
        for e in 0..3 {
            let p = vertices[t[e]];
            let q = vertices[t[(e + 1) % 3]];
            h = h.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
        }
    }
    h
}

/// Twice the signed area of the triangle `(p, q, r)`.
fn cross2(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
}

impl TriangleMesh {
    /// Maximum edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_rings(&self) -> usize {
        self.n_rings
    }

    pub fn n_sectors(&self) -> usize {
        self.n_sectors
    }

    /// Signed area of triangle `t` (positive for valid meshes).
    pub fn area(&self, t: usize) -> f64 {
        let [i, j, k] = self.triangles[t];
        0.5 * cross2(self.vertices[i], self.vertices[j], self.vertices[k])
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [i, j, k] = self.triangles[t];
        let (p, q, r) = (self.vertices[i], self.vertices[j], self.vertices[k]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Uniform refinement: doubles rings and sectors, regenerating from
    /// parameters so snapped interfaces are preserved exactly.
    pub fn refine(&self) -> Result<TriangleMesh> {
        build_polar_mesh(2 * self.n_rings, 2 * self.n_sectors, &self.interfaces)
    }

    /// Checks the structural invariants: positive triangle areas, boundary
    /// vertices on the unit circle to 1e-12, Euler characteristic 1, and
    /// strictly increasing boundary angles starting at angle 0.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            for &v in &self.triangles[t] {
                if v >= self.vertices.len() {
                    return Err(Error::Mesh(format!("triangle {t} references vertex {v}")));
                }
            }
            if self.area(t) <= 0.0 {
                return Err(Error::Mesh(format!(
                    "triangle {t} has non-positive area {}",
                    self.area(t)
                )));
            }
        }
        for &b in &self.boundary {
            let [x, y] = self.vertices[b];
            if ((x * x + y * y).sqrt() - 1.0).abs() > 1e-12 {
                return Err(Error::Mesh(format!(
                    "boundary vertex {b} is off the unit circle"
                )));
            }
        }
        let mut edges = BTreeSet::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let euler = self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64;
        if euler != 1 {
            return Err(Error::Mesh(format!(
                "Euler characteristic {euler}, expected 1"
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for (pos, &b) in self.boundary.iter().enumerate() {
            let [x, y] = self.vertices[b];
            let mut theta = y.atan2(x);
            if theta < 0.0 {
                theta += 2.0 * std::f64::consts::PI;
            }
            if pos == 0 && theta.min(2.0 * std::f64::consts::PI - theta) > 1e-12 {
                return Err(Error::Mesh(
                    "first boundary vertex is not at angle 0".into(),
                ));
            }
            let theta = if pos == 0 { 0.0 } else { theta };
            if theta <= prev {
                return Err(Error::Mesh(format!(
                    "boundary angles not strictly increasing at position {pos}"
                )));
            }
            prev = theta;
        }
        Ok(())
    }

    /// Writes the text format: `disc-mesh v1 <V> <T> <B>`, V coordinate lines,
    /// T triangle lines, B boundary index lines, and (when nonempty) a trailing
    /// `interfaces r1 r2 ...` line so refinement keeps working after a roundtrip.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "disc-mesh v1 {} {} {}",
            self.vertices.len(),
            self.triangles.len(),
            self.boundary.len()
        )?;
        for [x, y] in &self.vertices {
            writeln!(w, "{x} {y}")?;
        }
        for [i, j, k] in &self.triangles {
            writeln!(w, "{i} {j} {k}")?;
        }
        for b in &self.boundary {
            writeln!(w, "{b}")?;
        }
        if !self.interfaces.is_empty() {
            let list: Vec<String> = self.interfaces.iter().map(|r| r.to_string()).collect();
            writeln!(w, "interfaces {}", list.join(" "))?;
        }
        Ok(())
    }

    /// Reads the text format written by [`TriangleMesh::write_text`]. The mesh
    /// must have the polar structure `V = 1 + R * S`, `B = S`.
    pub fn read_text<R: BufRead>(r: R) -> Result<TriangleMesh> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty mesh file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "disc-mesh" || parts[1] != "v1" {
            return Err(Error::Format(format!("bad mesh header: {header}")));
        }
        let nv: usize = parse_num(parts[2], "vertex count")?;
        let nt: usize = parse_num(parts[3], "triangle count")?;
        let nb: usize = parse_num(parts[4], "boundary count")?;

        let mut next_line = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of mesh file".into()))?
                .map_err(Error::Io)
        };

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = next_line()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(Error::Format(format!("bad vertex line: {line}")));
            }
            vertices.push([parse_num(f[0], "x")?, parse_num(f[1], "y")?]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = next_line()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Format(format!("bad triangle line: {line}")));
            }
            triangles.push([
                parse_num(f[0], "i")?,
                parse_num(f[1], "j")?,
                parse_num(f[2], "k")?,
            ]);
        }
        let mut boundary = Vec::with_capacity(nb);
        for _ in 0..nb {
            boundary.push(parse_num(next_line()?.trim(), "boundary index")?);
        }
        let mut interfaces = Vec::new();
        if let Some(line) = lines.next() {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if !f.is_empty() {
                if f[0] != "interfaces" {
                    return Err(Error::Format(format!("unexpected trailing line: {line}")));
                }
                for v in &f[1..] {
                    interfaces.push(parse_num(v, "interface radius")?);
                }
            }
        }

        let n_sectors = nb;
        if n_sectors == 0 || !(nv - 1).is_multiple_of(n_sectors) {
            return Err(Error::Format(format!(
                "vertex count {nv} is not 1 + rings * {n_sectors}"
            )));
        }
        let n_rings = (nv - 1) / n_sectors;
        let h = max_edge_length(&vertices, &triangles);
        let mesh = TriangleMesh {
            vertices,
            triangles,
            boundary,
            interfaces,
            n_rings,
            n_sectors,
            h,
        };
        mesh.validate()?;
        Ok(mesh)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

/// Collects element centroids inside the layer `1 - |x| < delta` together with
/// a polar sampling grid of the layer with radial and arc spacing `<= delta/4`.
pub fn boundary_layer(mesh: &TriangleMesh, delta: f64) -> Result<BoundaryLayer> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Mesh(format!("delta {delta} outside (0, 1]")));
    }
    let mut layer = BoundaryLayer::polar_grid(delta)?;
    let mut centroids = Vec::new();
    for t in 0..mesh.triangles.len() {
        let c = mesh.centroid(t);
        if 1.0 - (c[0] * c[0] + c[1] * c[1]).sqrt() < delta {
            centroids.push(c);
        }
    }
    centroids.extend_from_slice(&layer.sample_points);
    layer.sample_points = centroids;
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_fan_plus_strips() {
        let m = build_polar_mesh(2, 8, &[]).unwrap();
        assert_eq!(m.vertices.len(), 17);
        assert_eq!(m.triangles.len(), 24);
        let mut edges = BTreeSet::new();
        for t in &m.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        assert_eq!(edges.len(), 40);
        assert_eq!(17 - 40 + 24, 1);
    }

    #[test]
    fn smallest_mesh_is_center_fan() {
        let m = build_polar_mesh(1, 3, &[]).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 3);
    }

    #[test]
    fn snap_radii_become_rings() {
        let m = build_polar_mesh(10, 32, &[0.64, 0.8]).unwrap();
        let radii: Vec<f64> = m.vertices[1..]
            .iter()
            .map(|[x, y]| (x * x + y * y).sqrt())
            .collect();
        assert!(radii.contains(&0.64));
        assert!(radii.contains(&0.8));
        assert_eq!(m.interfaces, vec![0.64, 0.8]);
    }

    #[test]
    fn snapped_circle_splits_no_triangle() {
        let m = build_polar_mesh(10, 32, &[0.64, 0.8]).unwrap();
        for &s in &m.interfaces {
            for t in &m.triangles {
                let mut inside = false;
                let mut outside = false;
                for &v in t {
                    let [x, y] = m.vertices[v];
                    let r = (x * x + y * y).sqrt();
                    if r < s - 1e-12 {
                        inside = true;
                    }
                    if r > s + 1e-12 {
                        outside = true;
                    }
                }
                assert!(
                    !(inside && outside),
                    "triangle straddles snapped radius {s}"
                );
            }
        }
    }

    #[test]
    fn refine_doubles_parameters_and_halves_h() {
        let m = build_polar_mesh(2, 8, &[]).unwrap();
        let r = m.refine().unwrap();
        assert_eq!(r.n_rings(), 4);
        assert_eq!(r.n_sectors(), 16);
        let ratio = r.h() / m.h();
        assert!(
            (0.45..=0.55).contains(&ratio),
            "h ratio {ratio} outside [0.45, 0.55]"
        );
        assert_eq!(r.interfaces, m.interfaces);
    }

    #[test]
    fn refinement_chain_strictly_decreases_h() {
        let mut m = build_polar_mesh(3, 9, &[0.5]).unwrap();
        let mut prev = m.h();
        for _ in 0..3 {
            m = m.refine().unwrap();
            assert!(m.h() < prev);
            prev = m.h();
        }
    }

    #[test]
    fn boundary_layer_delta_one_takes_all_centroids() {
        let m = build_polar_mesh(2, 8, &[]).unwrap();
        let layer = boundary_layer(&m, 1.0).unwrap();
        let centroid_count = layer
            .sample_points
            .iter()
            .take_while(|_| true)
            .filter(|p| {
                m.triangles
                    .iter()
                    .enumerate()
                    .any(|(t, _)| m.centroid(t) == [p[0], p[1]])
            })
            .count();
        assert!(centroid_count >= m.triangles.len());
    }

    #[test]
    fn boundary_layer_small_delta_keeps_outer_strip_only() {
        let m = build_polar_mesh(2, 8, &[]).unwrap();
        let layer = boundary_layer(&m, 0.1).unwrap();
        for p in &layer.sample_points {
            let d = 1.0 - (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(d < 0.1, "point at distance {d} from the boundary");
        }
        // Inner-strip centroids sit at radius < 0.5, distance > 0.1: excluded.
        assert!(layer
            .sample_points
            .iter()
            .all(|p| (p[0] * p[0] + p[1] * p[1]).sqrt() > 0.5));
    }

    #[test]
    fn boundary_layer_grid_spacing_is_fine_enough() {
        let m = build_polar_mesh(4, 16, &[]).unwrap();
        let delta = 0.3;
        let layer = boundary_layer(&m, delta).unwrap();
        // Radial shells appear at four distinct radii spaced delta/4 apart.
        let mut radii: Vec<f64> = layer
            .sample_points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .collect();
        radii.sort_by(f64::total_cmp);
        radii.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        assert!(radii.len() >= 4);
    }

    #[test]
    fn rejects_degenerate_and_out_of_range_parameters() {
        assert!(build_polar_mesh(0, 8, &[]).is_err());
        assert!(build_polar_mesh(2, 2, &[]).is_err());
        assert!(build_polar_mesh(4, 8, &[1.5]).is_err());
        assert!(build_polar_mesh(4, 8, &[0.0]).is_err());
        assert!(build_polar_mesh(4, 8, &[0.5, 0.4]).is_err());
        assert!(build_polar_mesh(2, 8, &[0.2, 0.5]).is_err());
        assert!(boundary_layer(&build_polar_mesh(2, 8, &[]).unwrap(), 0.0).is_err());
        assert!(boundary_layer(&build_polar_mesh(2, 8, &[]).unwrap(), 1.2).is_err());
    }

    #[test]
    fn text_format_roundtrips() {
        let m = build_polar_mesh(3, 12, &[0.4, 0.7]).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = TriangleMesh::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.boundary, m.boundary);
        assert_eq!(back.interfaces, m.interfaces);
        assert_eq!(back.n_rings(), m.n_rings());
        assert_eq!(back.h(), m.h());
        // A refined reload still honors the snapped interfaces.
        let rr = back.refine().unwrap();
        assert_eq!(rr.interfaces, m.interfaces);
    }

    #[test]
    fn read_rejects_malformed_input() {
        assert!(TriangleMesh::read_text(&b"nonsense"[..]).is_err());
        assert!(TriangleMesh::read_text(&b"disc-mesh v2 1 1 1"[..]).is_err());
        assert!(TriangleMesh::read_text(&b"disc-mesh v1 4 3 3\n0 0\n1 0"[..]).is_err());
    }
}
