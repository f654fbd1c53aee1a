//! Genus-2 surface from the regular hyperbolic octagon with side pairings
//! `a b a⁻¹ b⁻¹ c d c⁻¹ d⁻¹`.

use crate::error::{Error, Result};
use crate::hypgeo::{dist_from_origin, hyp_distance_z, BoundaryPoint, DiskPoint, Isometry, UnitTangent};
use num_complex::Complex64 as Complex;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;

/// Side-membership tolerance; ties go to "inside".
pub const SIDE_TOL: f64 = 1e-10;
/// Guard on the number of greedy reduction steps.
pub const MAX_REDUCTION_STEPS: usize = 10_000;

/// Side `i` is glued to side `PAIR[i]`.
pub const PAIR: [usize; 8] = [2, 3, 0, 1, 6, 7, 4, 5];
/// Letter names per pairing index. With `b` and `d` crossing sides 3 and 7,
/// the vertex cycle gives the relator `a b a⁻¹ b⁻¹ c d c⁻¹ d⁻¹`.
const LABELS: [&str; 8] = ["a", "B", "A", "b", "c", "D", "C", "d"];

#[derive(Debug, Clone)]
pub struct Surface {
    /// Vertices in counterclockwise order; side `k` joins vertex `k` to `k+1`.
    pub polygon: [DiskPoint; 8],
    /// `pairings[i]` carries the polygon across side `i`, mapping side `PAIR[i]` onto side `i`.
    pub pairings: [Isometry; 8],
    /// Elements whose closed tile meets the closed polygon, identity first.
    pub neighbor_set: Vec<(GroupWord, Isometry)>,
    pub area: f64,
    pub circumradius: f64,
    pub inradius: f64,
    /// Centres `pairings[i](0)` of the tiles across each side.
    side_centers: [Complex; 8],
    /// Frame at the midpoint of side `i`, pointing counterclockwise, so the
    /// polygon lies to the left of the framed line.
    side_frames: [Isometry; 8],
    /// `corner_maps[c][a]` sends vertex `c` to vertex `a`; its tile meets the polygon at `a`.
    corner_maps: [[Isometry; 8]; 8],
    /// Elements that turn part way around the vertex, with one canonical word each.
    corner_words: Vec<(Isometry, GroupWord)>,
}

impl Surface {
    /// Direction of the midpoint of side `i`.
    pub fn side_direction(i: usize) -> f64 {
        i as f64 * PI / 4.0
    }

    /// Signed hyperbolic amount by which `z` lies beyond side `i` (positive = outside).
    #[inline]
    pub fn side_violation(&self, z: Complex, i: usize) -> f64 {
        dist_from_origin(z) - hyp_distance_z(z, self.side_centers[i])
    }

    /// Index and amount of the most violated side, if any exceeds the tolerance.
    pub fn worst_side(&self, z: Complex, tol: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..8 {
            let v = self.side_violation(z, i);
            if v > tol && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best
    }

    pub fn contains(&self, z: Complex) -> bool {
        z.norm() < 1.0 && self.worst_side(z, SIDE_TOL).is_none()
    }

    /// Strict interior test with margin `tol`.
    pub fn contains_strictly(&self, z: Complex, tol: f64) -> bool {
        z.norm() < 1.0 && (0..8).all(|i| self.side_violation(z, i) < -tol)
    }

    pub fn side_frame(&self, i: usize) -> &Isometry {
        &self.side_frames[i]
    }

    pub fn corner_map(&self, from: usize, to: usize) -> &Isometry {
        &self.corner_maps[from][to]
    }

    /// Index of the polygon vertex within hyperbolic distance `tol` of `z`.
    pub fn vertex_near(&self, z: Complex, tol: f64) -> Option<usize> {
        (0..8).find(|&k| hyp_distance_z(z, self.polygon[k].z) < tol)
    }

    /// Moves a unit tangent into the closed polygon.
    pub fn reduce_tangent(&self, u: &UnitTangent) -> Result<(UnitTangent, Isometry)> {
        let (_, g, _) = self.reduce_z(u.base.z)?;
        Ok((g.apply_tangent(u), g))
    }

    /// Canonical word of an element turning around the vertex, if `g` is one.
    pub fn corner_word(&self, g: &Isometry) -> Option<&GroupWord> {
        self.corner_words.iter().find(|(h, _)| h.distance_to(g) < 1e-9).map(|(_, w)| w)
    }

    pub fn vertex_angle(&self, k: usize) -> f64 {
        vertex_angle_of(&self.polygon, k)
    }

    /// Generators in relator order, as isometries.
    pub fn relator(&self) -> GroupWord {
        GroupWord::parse("abABcdCD").expect("static word")
    }

    pub fn letter(&self, l: u8) -> &Isometry {
        &self.pairings[l as usize]
    }

    /// Isometry of a word: letters applied right to left.
    pub fn word_isometry(&self, w: &GroupWord) -> Isometry {
        w.letters.iter().fold(Isometry::IDENTITY, |acc, &l| acc.compose(&self.pairings[l as usize]))
    }

    /// All group elements `g` with `d(0, g(0)) ≤ radius`, by tile adjacency search.
    pub fn ball(&self, radius: f64) -> Vec<(GroupWord, Isometry)> {
        let prune = radius + self.circumradius + 1e-9;
        let mut out = vec![(GroupWord::identity(), Isometry::IDENTITY)];
        let mut seen = CenterIndex::default();
        seen.insert(Complex::new(0.0, 0.0), 0);
        let mut frontier = vec![0usize];
        let mut all: Vec<(GroupWord, Isometry)> = out.clone();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for idx in frontier {
                let (w, g) = all[idx].clone();
                for (i, gi) in self.pairings.iter().enumerate() {
                    if w.letters.last() == Some(&(PAIR[i] as u8)) {
                        continue;
                    }
                    let h = g.compose(gi);
                    let c = h.map(Complex::new(0.0, 0.0));
                    let d = dist_from_origin(c);
                    if d > prune || seen.find(c).is_some() {
                        continue;
                    }
                    let mut wl = w.letters.clone();
                    wl.push(i as u8);
                    let id = all.len();
                    seen.insert(c, id);
                    all.push((GroupWord { letters: wl }, h));
                    next.push(id);
                    if d <= radius {
                        out.push(all[id].clone());
                    }
                }
            }
            frontier = next;
        }
        out
    }

    /// Returns `(q, g)` with `q = g(p)` in the closed polygon.
    pub fn reduce_to_domain(&self, p: DiskPoint) -> Result<(DiskPoint, Isometry)> {
        let (q, g, _) = self.reduce_z(p.z)?;
        Ok((DiskPoint { z: q }, g))
    }

    /// Like [`Surface::reduce_to_domain`], also returning the word applied.
    pub fn reduce_z(&self, z: Complex) -> Result<(Complex, Isometry, GroupWord)> {
        if !(z.norm() < 1.0) {
            return Err(Error::Domain(z.norm()));
        }
        let mut g = Isometry::IDENTITY;
        let mut w = GroupWord::identity();
        let mut q = z;
        for _ in 0..MAX_REDUCTION_STEPS {
            match self.worst_side(q, SIDE_TOL) {
                None => return Ok((q, g, w)),
                Some((i, _)) => {
                    let inv = PAIR[i];
                    g = self.pairings[inv].compose(&g);
                    w = GroupWord::from_letters([inv as u8]).mul(&w);
                    q = g.map(z);
                }
            }
        }
        Err(Error::NonTermination(MAX_REDUCTION_STEPS))
    }

    /// Translation length and axis endpoints (attracting, repelling) of a word.
    pub fn axis_and_length(&self, w: &GroupWord) -> Result<(f64, BoundaryPoint, BoundaryPoint)> {
        let g = self.word_isometry(w);
        if !g.is_hyperbolic() {
            return Err(Error::NotHyperbolic(g.trace().abs()));
        }
        let (att, rep) = g.fixed_points()?;
        Ok((g.translation_length(), att, rep))
    }

    /// Shortest translation length among words up to `max_len` letters.
    pub fn shortest_length(&self, max_len: usize) -> f64 {
        let mut best = f64::INFINITY;
        for w in GroupWord::all_cyclically_reduced(max_len) {
            let l = self.word_isometry(&w).translation_length();
            if l > 1e-6 {
                best = best.min(l);
            }
        }
        best
    }
}

fn vertex_angle_of(poly: &[DiskPoint; 8], k: usize) -> f64 {
    let v = poly[k].z;
    let to = |p: Complex| {
        // Direction at v of the geodesic towards p.
        let m = Isometry::moving_origin_to(v).inverse();
        m.map(p).arg()
    };
    let a1 = to(poly[(k + 1) % 8].z);
    let a2 = to(poly[(k + 7) % 8].z);
    let d = (a1 - a2).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn octagon(circumradius: f64) -> [DiskPoint; 8] {
    let r = (circumradius / 2.0).tanh();
    std::array::from_fn(|k| DiskPoint { z: Complex::from_polar(r, k as f64 * PI / 4.0 - PI / 8.0) })
}

/// Builds the regular octagon with interior angles π/4 and its pairings.
pub fn build_genus2_surface() -> Result<Surface> {
    let target = PI / 4.0;
    // Interior angle decreases monotonically with the circumradius.
    let (mut lo, mut hi) = (0.1f64, 10.0f64);
    let f = |r: f64| vertex_angle_of(&octagon(r), 0) - target;
    if f(lo) <= 0.0 || f(hi) >= 0.0 {
        return Err(Error::Config("circumradius not bracketed".into()));
    }
    let mut iters = 0;
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
        if iters > 200 {
            return Err(Error::Config("circumradius root-finding did not converge".into()));
        }
    }
    let circumradius = 0.5 * (lo + hi);
    let polygon = octagon(circumradius);
    // Right triangle (origin, side midpoint, vertex) with angle π/8 at the origin.
    let inradius = ((circumradius.tanh()) * (PI / 8.0).cos()).atanh();
    let pairings: [Isometry; 8] = std::array::from_fn(|i| {
        let j = PAIR[i];
        Isometry::rotation(Surface::side_direction(i))
            .compose(&Isometry::translation(2.0 * inradius))
            .compose(&Isometry::rotation(PI - Surface::side_direction(j)))
    });
    let side_centers = std::array::from_fn(|i| pairings[i].map(Complex::new(0.0, 0.0)));
    let angle_sum: f64 = (0..8).map(|k| vertex_angle_of(&polygon, k)).sum();
    let side_frames = std::array::from_fn(|i| {
        Isometry::rotation(Surface::side_direction(i))
            .compose(&Isometry::translation(inradius))
            .compose(&Isometry::rotation(PI / 2.0))
    });
    let mut s = Surface {
        polygon,
        pairings,
        neighbor_set: Vec::new(),
        area: 6.0 * PI - angle_sum,
        circumradius,
        inradius,
        side_centers,
        side_frames,
        corner_maps: [[Isometry::IDENTITY; 8]; 8],
        corner_words: Vec::new(),
    };
    s.corner_words = corner_words(&s);
    let candidates = s.ball(2.0 * circumradius + 1e-6);
    s.neighbor_set = candidates
        .into_iter()
        .filter(|(_, g)| polygon.iter().any(|v| polygon.iter().any(|u| (g.map(v.z) - u.z).norm() < 1e-9)))
        .collect();
    let mut found = [[false; 8]; 8];
    for (_, g) in &s.neighbor_set {
        for c in 0..8 {
            if let Some(a) = s.vertex_near(g.map(polygon[c].z), 1e-9) {
                // The tile g(P) has its corner c at vertex a.
                s.corner_maps[c][a] = *g;
                found[c][a] = true;
            }
        }
    }
    if found.iter().flatten().any(|f| !f) {
        return Err(Error::Config("vertex cycle incomplete".into()));
    }
    Ok(s)
}

/// Turning around the vertex by `k` tiles is a cyclic subword of the relator of
/// length `k`, or its complement read backwards. Several shortest words can
/// name one element; pick the least, oriented so that `g⁻¹` gets the inverse word.
fn corner_words(s: &Surface) -> Vec<(Isometry, GroupWord)> {
    let r = s.relator();
    let mut shortest: Vec<(Isometry, Vec<GroupWord>)> = Vec::new();
    for base in [r.clone(), r.inverse()] {
        for start in 0..8 {
            let rot = base.rotated(start);
            for len in 1..8 {
                let w = GroupWord { letters: rot.letters[..len].to_vec() };
                let g = s.word_isometry(&w);
                match shortest.iter_mut().find(|(h, _)| h.distance_to(&g) < 1e-9) {
                    Some((_, ws)) if ws[0].len() > w.len() => *ws = vec![w],
                    Some((_, ws)) if ws[0].len() == w.len() && !ws.contains(&w) => ws.push(w),
                    Some(_) => {}
                    None => shortest.push((g, vec![w])),
                }
            }
        }
    }
    let least = |g: &Isometry| -> GroupWord {
        let (_, ws) = shortest.iter().find(|(h, _)| h.distance_to(g) < 1e-9).expect("closed under inverse");
        ws.iter().min().unwrap().clone()
    };
    shortest
        .iter()
        .map(|(g, _)| {
            let (mine, theirs) = (least(g), least(&g.inverse()));
            (*g, if mine <= theirs { mine } else { theirs.inverse() })
        })
        .collect()
}

/// Element of the free group on the four pairing generators, stored as
/// pairing indices (`a=0, b⁻¹=1, a⁻¹=2, b=3, c=4, d⁻¹=5, c⁻¹=6, d=7`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, serde::Serialize)]
pub struct GroupWord {
    pub letters: Vec<u8>,
}

impl GroupWord {
    pub fn identity() -> Self {
        Self { letters: Vec::new() }
    }

    /// Freely reduces the given letters.
    pub fn from_letters(letters: impl IntoIterator<Item = u8>) -> Self {
        let mut out: Vec<u8> = Vec::new();
        for l in letters {
            assert!(l < 8, "letter out of range");
            if out.last() == Some(&(PAIR[l as usize] as u8)) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Self { letters: out }
    }

    /// Parses `a`..`d`, `A`..`D` or `a⁻¹` style inverses.
    pub fn parse(s: &str) -> Result<Self> {
        let mut letters = Vec::new();
        let mut chars = s.chars().filter(|c| !c.is_whitespace()).peekable();
        while let Some(c) = chars.next() {
            let base = match c.to_ascii_lowercase() {
                'a' => 0u8,
                'b' => 3,
                'c' => 4,
                'd' => 7,
                _ => return Err(Error::Config(format!("bad letter {c:?} in word {s:?}"))),
            };
            let mut inv = c.is_ascii_uppercase();
            if chars.peek() == Some(&'⁻') {
                chars.next();
                if chars.next() != Some('¹') {
                    return Err(Error::Config(format!("bad exponent in word {s:?}")));
                }
                inv = !inv;
            }
            letters.push(if inv { PAIR[base as usize] as u8 } else { base });
        }
        Ok(Self::from_letters(letters))
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn inverse(&self) -> Self {
        Self { letters: self.letters.iter().rev().map(|&l| PAIR[l as usize] as u8).collect() }
    }

    pub fn mul(&self, other: &GroupWord) -> Self {
        Self::from_letters(self.letters.iter().chain(other.letters.iter()).copied())
    }

    pub fn pow(&self, k: usize) -> Self {
        Self::from_letters(std::iter::repeat_n(self.letters.iter().copied(), k).flatten())
    }

    pub fn is_cyclically_reduced(&self) -> bool {
        match (self.letters.first(), self.letters.last()) {
            (Some(&f), Some(&l)) => self.letters.len() == 1 || PAIR[l as usize] as u8 != f,
            _ => true,
        }
    }

    pub fn cyclically_reduced(&self) -> Self {
        let mut v = self.letters.clone();
        while v.len() >= 2 && PAIR[*v.last().unwrap() as usize] as u8 == v[0] {
            v.pop();
            v.remove(0);
        }
        Self { letters: v }
    }

    pub fn rotated(&self, k: usize) -> Self {
        let mut v = self.letters.clone();
        if !v.is_empty() {
            let k = k % v.len();
            v.rotate_left(k);
        }
        Self { letters: v }
    }

    /// Lexicographically least word over rotations of the word and its inverse.
    pub fn canonical(&self) -> Self {
        let w = self.cyclically_reduced();
        let inv = w.inverse();
        (0..w.len().max(1)).flat_map(|k| [w.rotated(k), inv.rotated(k)]).min().unwrap_or_default()
    }

    /// True if the word is a proper power of a shorter word.
    pub fn is_proper_power(&self) -> bool {
        let n = self.letters.len();
        (1..n).any(|p| n % p == 0 && (p..n).all(|i| self.letters[i] == self.letters[i - p]))
    }

    /// All cyclically reduced words with 1..=max_len letters.
    pub fn all_cyclically_reduced(max_len: usize) -> Vec<GroupWord> {
        let mut out = Vec::new();
        let mut layer: Vec<Vec<u8>> = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for w in &layer {
                for l in 0..8u8 {
                    if w.last() == Some(&(PAIR[l as usize] as u8)) {
                        continue;
                    }
                    let mut v = w.clone();
                    v.push(l);
                    next.push(v);
                }
            }
            for v in &next {
                let g = GroupWord { letters: v.clone() };
                if g.is_cyclically_reduced() {
                    out.push(g);
                }
            }
            layer = next;
        }
        out
    }
}

impl fmt::Display for GroupWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "1");
        }
        for &l in &self.letters {
            write!(f, "{}", LABELS[l as usize])?;
        }
        Ok(())
    }
}

/// Spatial index of tile centres for de-duplication.
#[derive(Default)]
struct CenterIndex {
    cells: HashMap<(i64, i64), Vec<(Complex, usize)>>,
}

impl CenterIndex {
    const CELL: f64 = 1e-6;

    fn key(z: Complex) -> (i64, i64) {
        ((z.re / Self::CELL).floor() as i64, (z.im / Self::CELL).floor() as i64)
    }

    fn insert(&mut self, z: Complex, id: usize) {
        self.cells.entry(Self::key(z)).or_default().push((z, id));
    }

    fn find(&self, z: Complex) -> Option<usize> {
        let (kx, ky) = Self::key(z);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(v) = self.cells.get(&(kx + dx, ky + dy)) {
                    for &(c, id) in v {
                        if hyp_distance_z(c, z) < 1e-3 {
                            return Some(id);
                        }
                    }
                }
            }
        }
        None
    }
}
