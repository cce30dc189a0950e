//! The fine structured grid: pixel classification against the implicit
//! domain, mask ingestion, and extraction of the discrete boundary.

use crate::geometry::{delta_along, sigma_direction, ImplicitDomain};
use nalgebra::{Point2, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PixelError {
    #[error("no pixel selected: the grid does not resolve the domain")]
    EmptyDomain,
    #[error("domain mask has {0} hole(s); only simply connected domains are supported")]
    Holes(usize),
    #[error("mask parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pixel classification rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifyRule {
    /// All four corners inside the closed domain (level set <= 0).
    Contained,
    /// Pixel center strictly inside.
    Center,
    /// At least one corner inside.
    Intersecting,
}

impl std::str::FromStr for ClassifyRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "contained" => Ok(Self::Contained),
            "center" => Ok(Self::Center),
            "intersecting" => Ok(Self::Intersecting),
            other => Err(format!("unknown classification rule '{other}'")),
        }
    }
}

/// The fine structured grid with inside flags per pixel.
#[derive(Debug, Clone)]
pub struct PixelGrid {
    pub origin: Point2<f64>,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    inside: Vec<bool>,
}

/// One fine edge of the discrete boundary. Endpoints are lattice points
/// `(i, j)` with coordinates `origin + h * (i, j)`.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub a: (usize, usize),
    pub b: (usize, usize),
    pub outward_normal: Vector2<f64>,
    pub owner_pixel: usize,
}

impl PixelGrid {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn is_inside(&self, ix: i64, iy: i64) -> bool {
        if ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
            return false;
        }
        self.inside[iy as usize * self.nx + ix as usize]
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn inside_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny).flat_map(move |iy| {
            (0..self.nx).filter_map(move |ix| {
                if self.inside[self.index(ix, iy)] {
                    Some((ix, iy))
                } else {
                    None
                }
            })
        })
    }

    pub fn point(&self, i: usize, j: usize) -> Point2<f64> {
        Point2::new(self.origin.x + self.h * i as f64, self.origin.y + self.h * j as f64)
    }

    pub fn pixel_center(&self, ix: usize, iy: usize) -> Point2<f64> {
        Point2::new(
            self.origin.x + self.h * (ix as f64 + 0.5),
            self.origin.y + self.h * (iy as f64 + 0.5),
        )
    }
}

/// Classifies all pixels of the grid covering the domain's bounding box.
///
/// Keeps the largest 4-connected component (with a warning if more than one
/// exists) and rejects masks with holes.
pub fn classify_pixels(
    domain: &ImplicitDomain,
    h: f64,
    rule: ClassifyRule,
) -> Result<PixelGrid, PixelError> {
    assert!(h > 0.0);
    let bb = domain.bounding_box;
    let nx = ((bb.max.x - bb.min.x) / h - 1e-9).ceil().max(1.0) as usize;
    let ny = ((bb.max.y - bb.min.y) / h - 1e-9).ceil().max(1.0) as usize;
    let tol = 1e-12 * bb.diameter();
    let mut inside = vec![false; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let x0 = bb.min.x + h * ix as f64;
            let y0 = bb.min.y + h * iy as f64;
            let flag = match rule {
                ClassifyRule::Contained => {
                    [(x0, y0), (x0 + h, y0), (x0, y0 + h), (x0 + h, y0 + h)]
                        .iter()
                        .all(|&(x, y)| domain.level_set(Point2::new(x, y)) <= tol)
                }
                ClassifyRule::Center => {
                    domain.level_set(Point2::new(x0 + 0.5 * h, y0 + 0.5 * h)) < 0.0
                }
                ClassifyRule::Intersecting => {
                    [(x0, y0), (x0 + h, y0), (x0, y0 + h), (x0 + h, y0 + h)]
                        .iter()
                        .any(|&(x, y)| domain.level_set(Point2::new(x, y)) < -tol)
                }
            };
            inside[iy * nx + ix] = flag;
        }
    }
    let mut grid = PixelGrid { origin: bb.min, h, nx, ny, inside };
    finalize(&mut grid)?;
    Ok(grid)
}

/// Builds a grid directly from inside flags (row 0 = bottom row).
pub fn grid_from_flags(
    origin: Point2<f64>,
    h: f64,
    nx: usize,
    ny: usize,
    inside: Vec<bool>,
) -> Result<PixelGrid, PixelError> {
    assert_eq!(inside.len(), nx * ny);
    let mut grid = PixelGrid { origin, h, nx, ny, inside };
    finalize(&mut grid)?;
    Ok(grid)
}

fn finalize(grid: &mut PixelGrid) -> Result<(), PixelError> {
    if grid.inside.iter().all(|&b| !b) {
        return Err(PixelError::EmptyDomain);
    }
    let components = label_components(&grid.inside, grid.nx, grid.ny, true);
    if components.count > 1 {
        log::warn!(
            "domain mask has {} connected components; keeping the largest",
            components.count
        );
        let keep = components.largest_label;
        for (i, flag) in grid.inside.iter_mut().enumerate() {
            *flag = components.labels[i] == keep;
        }
    }
    // Holes: outside pixels not reachable from the grid border.
    let outside: Vec<bool> = grid.inside.iter().map(|&b| !b).collect();
    let holes = count_holes(&outside, grid.nx, grid.ny);
    if holes > 0 {
        return Err(PixelError::Holes(holes));
    }
    Ok(())
}

struct Components {
    labels: Vec<u32>,
    count: usize,
    largest_label: u32,
}

fn label_components(flags: &[bool], nx: usize, ny: usize, value: bool) -> Components {
    let mut labels = vec![0u32; flags.len()];
    let mut next = 0u32;
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..flags.len() {
        if flags[start] != value || labels[start] != 0 {
            continue;
        }
        next += 1;
        let mut size = 0usize;
        stack.push(start);
        labels[start] = next;
        while let Some(i) = stack.pop() {
            size += 1;
            let (ix, iy) = (i % nx, i / nx);
            let mut push = |jx: i64, jy: i64| {
                if jx < 0 || jy < 0 || jx >= nx as i64 || jy >= ny as i64 {
                    return;
                }
                let j = jy as usize * nx + jx as usize;
                if flags[j] == value && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            push(ix as i64 - 1, iy as i64);
            push(ix as i64 + 1, iy as i64);
            push(ix as i64, iy as i64 - 1);
            push(ix as i64, iy as i64 + 1);
        }
        sizes.push(size);
    }
    let largest_label = sizes
        .iter()
        .enumerate()
        .max_by_key(|&(_, s)| *s)
        .map(|(i, _)| i as u32 + 1)
        .unwrap_or(0);
    Components { labels, count: next as usize, largest_label }
}

fn count_holes(outside: &[bool], nx: usize, ny: usize) -> usize {
    let comps = label_components(outside, nx, ny, true);
    if comps.count == 0 {
        return 0;
    }
    // Labels touching the border are the true exterior.
    let mut exterior = vec![false; comps.count + 1];
    for ix in 0..nx {
        for iy in [0, ny - 1] {
            let l = comps.labels[iy * nx + ix];
            if l > 0 {
                exterior[l as usize] = true;
            }
        }
    }
    for iy in 0..ny {
        for ix in [0, nx - 1] {
            let l = comps.labels[iy * nx + ix];
            if l > 0 {
                exterior[l as usize] = true;
            }
        }
    }
    (1..=comps.count).filter(|&l| !exterior[l]).count()
}

/// Loads a mask from a PGM (P2/P5) image or a CSV of 0/1 rows.
///
/// Image rows are top-to-bottom; the grid stores them bottom-up. Gray values
/// above half of the maximum count as inside.
pub fn load_mask(path: &std::path::Path) -> Result<PixelGrid, PixelError> {
    let bytes = std::fs::read(path)?;
    let flags;
    let (nx, ny);
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        let (w, h, maxval, data) = parse_pgm(&bytes)?;
        nx = w;
        ny = h;
        let mut f = vec![false; nx * ny];
        for row in 0..ny {
            for col in 0..nx {
                // flip rows: image row 0 is the top
                f[(ny - 1 - row) * nx + col] = 2 * data[row * nx + col] > maxval;
            }
        }
        flags = f;
    } else {
        let text = String::from_utf8_lossy(&bytes);
        let mut rows: Vec<Vec<bool>> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Result<Vec<bool>, _> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| match s {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(PixelError::Parse(format!("expected 0/1, got '{other}'"))),
                })
                .collect();
            rows.push(row?);
        }
        if rows.is_empty() {
            return Err(PixelError::Parse("empty mask file".into()));
        }
        nx = rows[0].len();
        ny = rows.len();
        if rows.iter().any(|r| r.len() != nx) {
            return Err(PixelError::Parse("ragged mask rows".into()));
        }
        let mut f = vec![false; nx * ny];
        for (row, data) in rows.iter().enumerate() {
            for (col, &v) in data.iter().enumerate() {
                f[(ny - 1 - row) * nx + col] = v;
            }
        }
        flags = f;
    }
    let h = 1.0 / nx.max(ny) as f64;
    grid_from_flags(Point2::new(0.0, 0.0), h, nx, ny, flags)
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, u32, Vec<u32>), PixelError> {
    let binary = bytes.starts_with(b"P5");
    // Header tokens: magic, width, height, maxval (comments allowed).
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 && pos < bytes.len() {
        let c = bytes[pos];
        if c == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else if c.is_ascii_whitespace() {
            pos += 1;
        } else {
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
    }
    if tokens.len() < 4 {
        return Err(PixelError::Parse("truncated pgm header".into()));
    }
    let w: usize = tokens[1].parse().map_err(|_| PixelError::Parse("bad width".into()))?;
    let h: usize = tokens[2].parse().map_err(|_| PixelError::Parse("bad height".into()))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| PixelError::Parse("bad maxval".into()))?;
    let mut data = Vec::with_capacity(w * h);
    if binary {
        pos += 1; // single whitespace after maxval
        if maxval > 255 {
            return Err(PixelError::Parse("16-bit P5 not supported".into()));
        }
        if bytes.len() < pos + w * h {
            return Err(PixelError::Parse("truncated P5 payload".into()));
        }
        data.extend(bytes[pos..pos + w * h].iter().map(|&b| b as u32));
    } else {
        let text = String::from_utf8_lossy(&bytes[pos..]);
        for tok in text.split_ascii_whitespace() {
            if data.len() == w * h {
                break;
            }
            data.push(tok.parse().map_err(|_| PixelError::Parse("bad P2 sample".into()))?);
        }
        if data.len() != w * h {
            return Err(PixelError::Parse("truncated P2 payload".into()));
        }
    }
    Ok((w, h, maxval, data))
}

/// Returns every fine edge with exactly one inside pixel, plus the closed
/// loops they form, ordered counterclockwise around the domain (interior on
/// the left).
pub fn extract_boundary(grid: &PixelGrid) -> (Vec<BoundaryEdge>, Vec<Vec<usize>>) {
    let mut edges = Vec::new();
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if !grid.inside[grid.index(ix, iy)] {
                continue;
            }
            let owner = grid.index(ix, iy);
            // bottom
            if !grid.is_inside(ix as i64, iy as i64 - 1) {
                edges.push(BoundaryEdge {
                    a: (ix, iy),
                    b: (ix + 1, iy),
                    outward_normal: Vector2::new(0.0, -1.0),
                    owner_pixel: owner,
                });
            }
            // right
            if !grid.is_inside(ix as i64 + 1, iy as i64) {
                edges.push(BoundaryEdge {
                    a: (ix + 1, iy),
                    b: (ix + 1, iy + 1),
                    outward_normal: Vector2::new(1.0, 0.0),
                    owner_pixel: owner,
                });
            }
            // top
            if !grid.is_inside(ix as i64, iy as i64 + 1) {
                edges.push(BoundaryEdge {
                    a: (ix + 1, iy + 1),
                    b: (ix, iy + 1),
                    outward_normal: Vector2::new(0.0, 1.0),
                    owner_pixel: owner,
                });
            }
            // left
            if !grid.is_inside(ix as i64 - 1, iy as i64) {
                edges.push(BoundaryEdge {
                    a: (ix, iy + 1),
                    b: (ix, iy),
                    outward_normal: Vector2::new(-1.0, 0.0),
                    owner_pixel: owner,
                });
            }
        }
    }
    // Chain edges a -> b into loops. Edge directions above already have the
    // interior on the left. At pinch vertices (two diagonal inside pixels)
    // two outgoing edges share a start point; picking by owner-pixel
    // adjacency keeps each loop locally consistent.
    let mut from: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        from.entry(e.a).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut chain = vec![start];
        used[start] = true;
        let mut cur = start;
        loop {
            let tail = edges[cur].b;
            let candidates = from.get(&tail).map(Vec::as_slice).unwrap_or(&[]);
            let next = candidates
                .iter()
                .copied()
                .filter(|&i| !used[i])
                .min_by_key(|&i| {
                    // prefer the edge that turns most sharply left (keeps the
                    // same pocket at pinch points)
                    let d1 = direction(&edges[cur]);
                    let d2 = direction(&edges[i]);
                    let cross = d1.0 * d2.1 - d1.1 * d2.0;
                    let dot = d1.0 * d2.0 + d1.1 * d2.1;
                    // order: left turn, straight, right turn
                    match (cross, dot) {
                        (c, _) if c > 0 => 0,
                        (0, d) if d > 0 => 1,
                        _ => 2,
                    }
                });
            match next {
                Some(i) => {
                    used[i] = true;
                    chain.push(i);
                    cur = i;
                    if edges[cur].b == edges[start].a {
                        break;
                    }
                }
                None => break,
            }
        }
        loops.push(chain);
    }
    (edges, loops)
}

fn direction(e: &BoundaryEdge) -> (i64, i64) {
    (e.b.0 as i64 - e.a.0 as i64, e.b.1 as i64 - e.a.1 as i64)
}

/// Mask health report.
#[derive(Debug, Clone)]
pub struct SanityReport {
    pub components: usize,
    pub holes: usize,
    pub boundary_edges: usize,
    pub max_delta: f64,
    /// max delta / h; the discrete boundary should stay within O(h) of the
    /// true one.
    pub delta_over_h: f64,
}

pub fn sanity_check(grid: &PixelGrid, domain: &ImplicitDomain) -> SanityReport {
    let comps = label_components(&grid.inside, grid.nx, grid.ny, true);
    let outside: Vec<bool> = grid.inside.iter().map(|&b| !b).collect();
    let holes = count_holes(&outside, grid.nx, grid.ny);
    let (edges, _) = extract_boundary(grid);
    let mut max_delta: f64 = 0.0;
    for e in &edges {
        let pa = grid.point(e.a.0, e.a.1);
        let pb = grid.point(e.b.0, e.b.1);
        let mid = Point2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y));
        if let Ok(sigma) = sigma_direction(domain, mid) {
            if let Ok(d) = delta_along(domain, mid, sigma, 0.25 * grid.h) {
                max_delta = max_delta.max(d);
            }
        }
    }
    SanityReport {
        components: comps.count,
        holes,
        boundary_edges: edges.len(),
        max_delta,
        delta_over_h: max_delta / grid.h,
    }
}
