//! Procedural terrain with a difficulty curriculum.
//!
//! Four terrain classes over a regular heightfield grid:
//!
//! * `flat`   — all zeros (difficulty-independent);
//! * `steps`  — platforms separated by risers of height 0.05 + 0.30·(level/9) m;
//! * `slope`  — a constant incline of 2 + 32·(level/9) degrees;
//! * `uneven` — multi-octave value noise, peak amplitude 0.02 + 0.08·(level/9) m.
//!
//! The simulator is sagittal-plane, so heights vary only along x; the y
//! dimension is synthesized (constant rows) to keep the critic's 17×11
//! global map and 5×5 foot patches shaped as designed. Fields are pure
//! functions of (class, level, seed) and immutable after generation. All
//! point queries are bilinear with edge clamping, so they are total.

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write as _;
use std::path::Path;

pub const MAX_LEVEL: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    Flat,
    Steps,
    Slope,
    Uneven,
}

impl TerrainClass {
    pub const ALL: [TerrainClass; 4] = [
        TerrainClass::Flat,
        TerrainClass::Steps,
        TerrainClass::Slope,
        TerrainClass::Uneven,
    ];

    pub fn parse(s: &str) -> Result<TerrainClass> {
        match s {
            "flat" => Ok(TerrainClass::Flat),
            "steps" => Ok(TerrainClass::Steps),
            "slope" => Ok(TerrainClass::Slope),
            "uneven" => Ok(TerrainClass::Uneven),
            other => Err(Error::config(format!(
                "unknown terrain class '{}', expected flat|steps|slope|uneven",
                other
            ))),
        }
    }
}

impl fmt::Display for TerrainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TerrainClass::Flat => "flat",
            TerrainClass::Steps => "steps",
            TerrainClass::Slope => "slope",
            TerrainClass::Uneven => "uneven",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    /// Grid cell edge length, meters.
    pub cell_size: f64,
    /// Field x extent: [x_min, x_min + length].
    pub x_min: f64,
    pub length: f64,
    /// Field y extent: [-width/2, width/2].
    pub width: f64,
    /// Obstacles start this far past x = 0 so the spawn region stays flat.
    pub spawn_flat_until: f64,
    /// Goal line, meters ahead of the start.
    pub goal_distance: f64,
    /// Steps: tread length range, meters.
    pub step_tread: [f64; 2],
    /// Global critic map: rows (forward) x cols (lateral), spacing meters.
    pub global_patch_rows: usize,
    pub global_patch_cols: usize,
    pub global_patch_spacing: f64,
    /// Foot-level patches.
    pub foot_patch_size: usize,
    pub foot_patch_spacing: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig {
            cell_size: 0.05,
            x_min: -2.0,
            length: 12.0,
            width: 4.0,
            spawn_flat_until: 1.0,
            goal_distance: 8.0,
            step_tread: [0.6, 1.2],
            global_patch_rows: 17,
            global_patch_cols: 11,
            global_patch_spacing: 0.1,
            foot_patch_size: 5,
            foot_patch_spacing: 0.05,
        }
    }
}

impl TerrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::config("terrain.cell_size must be > 0".to_string()));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::config("terrain field extents must be > 0".to_string()));
        }
        if !(self.goal_distance > 0.0) {
            return Err(Error::config("terrain.goal_distance must be > 0".to_string()));
        }
        if self.step_tread[0] > self.step_tread[1] || self.step_tread[0] <= 0.0 {
            return Err(Error::config(format!(
                "terrain.step_tread range invalid: {:?}",
                self.step_tread
            )));
        }
        if self.global_patch_rows == 0 || self.global_patch_cols == 0 || self.foot_patch_size == 0
        {
            return Err(Error::config("terrain patch dims must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Immutable generated heightfield.
#[derive(Debug, Clone)]
pub struct TerrainField {
    heights: Vec<f64>,
    nx: usize,
    ny: usize,
    cell_size: f64,
    x0: f64,
    y0: f64,
    class: TerrainClass,
    level: u32,
    start: [f64; 2],
    goal: [f64; 2],
    difficulty: f64,
}

/// Relative heights sampled around a body position.
#[derive(Debug, Clone)]
pub struct HeightPatch {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// Difficulty parameter controlling each class at a given level.
pub fn difficulty_param(class: TerrainClass, level: u32) -> f64 {
    let frac = level.min(MAX_LEVEL) as f64 / MAX_LEVEL as f64;
    match class {
        TerrainClass::Flat => 0.0,
        TerrainClass::Steps => 0.05 + 0.30 * frac,
        TerrainClass::Slope => 2.0 + 32.0 * frac,
        TerrainClass::Uneven => 0.02 + 0.08 * frac,
    }
}

/// Generate a field. Deterministic: (class, level, seed) fixes every byte.
pub fn generate(
    class: TerrainClass,
    level: u32,
    seed: u64,
    cfg: &TerrainConfig,
) -> Result<TerrainField> {
    cfg.validate()?;
    if level > MAX_LEVEL {
        return Err(Error::config(format!(
            "terrain level {} out of range 0..={}",
            level, MAX_LEVEL
        )));
    }
    let nx = (cfg.length / cfg.cell_size).round() as usize + 1;
    let ny = (cfg.width / cfg.cell_size).round() as usize + 1;
    let x0 = cfg.x_min;
    let y0 = -cfg.width / 2.0;
    let difficulty = difficulty_param(class, level);

    // Heights are a function of x alone (sagittal-plane world).
    let profile: Vec<f64> = match class {
        TerrainClass::Flat => vec![0.0; nx],
        TerrainClass::Steps => steps_profile(nx, x0, cfg, difficulty, seed),
        TerrainClass::Slope => slope_profile(nx, x0, cfg, difficulty),
        TerrainClass::Uneven => uneven_profile(nx, x0, cfg, level, difficulty, seed),
    };

    let mut heights = Vec::with_capacity(nx * ny);
    for _iy in 0..ny {
        heights.extend_from_slice(&profile);
    }

    Ok(TerrainField {
        heights,
        nx,
        ny,
        cell_size: cfg.cell_size,
        x0,
        y0,
        class,
        level,
        start: [0.0, 0.0],
        goal: [cfg.goal_distance, 0.0],
        difficulty,
    })
}

/// Alternating platforms. Each riser is exactly `riser` tall; the platform
/// elevation random-walks within [0, 2·riser] so the course mixes ups and
/// downs without drifting away.
fn steps_profile(nx: usize, x0: f64, cfg: &TerrainConfig, riser: f64, seed: u64) -> Vec<f64> {
    let mut rng = SeedStream::new(seed).with_str("terrain-steps").rng();
    let mut boundaries: Vec<(f64, f64)> = Vec::new(); // (start_x, height)
    let mut h = 0.0;
    let mut x = cfg.spawn_flat_until;
    let x_end = x0 + cfg.length;
    while x < x_end {
        let up = if h <= 0.0 {
            true
        } else if h >= 2.0 * riser - 1e-9 {
            false
        } else {
            rng.gen_bool(0.5)
        };
        h += if up { riser } else { -riser };
        boundaries.push((x, h));
        x += rng.gen_range(cfg.step_tread[0]..cfg.step_tread[1]);
    }
    (0..nx)
        .map(|ix| {
            let xi = x0 + ix as f64 * cfg.cell_size;
            let mut cur = 0.0;
            for &(bx, bh) in &boundaries {
                if xi >= bx {
                    cur = bh;
                } else {
                    break;
                }
            }
            cur
        })
        .collect()
}

fn slope_profile(nx: usize, x0: f64, cfg: &TerrainConfig, angle_deg: f64) -> Vec<f64> {
    let grade = angle_deg.to_radians().tan();
    (0..nx)
        .map(|ix| {
            let xi = x0 + ix as f64 * cfg.cell_size;
            grade * (xi - cfg.spawn_flat_until).max(0.0)
        })
        .collect()
}

/// Multi-octave 1-D value noise: random lattice values, smoothstep-blended,
/// halving wavelength and amplitude per octave. 2 octaves at level 0 up to
/// 5 at level 9. Amplitude fades in past the spawn region.
fn uneven_profile(
    nx: usize,
    x0: f64,
    cfg: &TerrainConfig,
    level: u32,
    amplitude: f64,
    seed: u64,
) -> Vec<f64> {
    let octaves = 2 + (level.min(MAX_LEVEL) as usize * 3) / MAX_LEVEL as usize; // 2..=5
    let base_wavelength = 1.6;
    let mut profile = vec![0.0; nx];
    let mut norm = 0.0;
    for o in 0..octaves {
        let lambda = base_wavelength / 2f64.powi(o as i32);
        let gain = 0.5f64.powi(o as i32);
        norm += gain;
        let n_lattice = (cfg.length / lambda).ceil() as usize + 2;
        let mut rng = SeedStream::new(seed)
            .with_str("terrain-uneven")
            .with(o as u64)
            .rng();
        let lattice: Vec<f64> = (0..n_lattice).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (ix, p) in profile.iter_mut().enumerate() {
            let xi = x0 + ix as f64 * cfg.cell_size;
            let u = (xi - x0) / lambda;
            let i = (u.floor() as usize).min(n_lattice - 2);
            let t = u - i as f64;
            let t = t * t * (3.0 - 2.0 * t); // smoothstep
            *p += gain * (lattice[i] * (1.0 - t) + lattice[i + 1] * t);
        }
    }
    for (ix, p) in profile.iter_mut().enumerate() {
        let xi = x0 + ix as f64 * cfg.cell_size;
        let fade = ((xi - cfg.spawn_flat_until + 0.7) / 0.7).clamp(0.0, 1.0);
        *p *= amplitude / norm * fade * fade * (3.0 - 2.0 * fade);
    }
    profile
}

impl TerrainField {
    pub fn class(&self) -> TerrainClass {
        self.class
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// The class-controlling difficulty parameter: riser height (m), slope
    /// angle (deg), or noise amplitude (m).
    pub fn difficulty(&self) -> f64 {
        self.difficulty
    }

    pub fn start(&self) -> [f64; 2] {
        self.start
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn raw_heights(&self) -> &[f64] {
        &self.heights
    }

    fn grid(&self, ix: usize, iy: usize) -> f64 {
        self.heights[iy * self.nx + ix]
    }

    /// Bilinear height lookup, clamped to the field edges (total function).
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let u = ((x - self.x0) / self.cell_size).clamp(0.0, (self.nx - 1) as f64);
        let v = ((y - self.y0) / self.cell_size).clamp(0.0, (self.ny - 1) as f64);
        let ix = (u.floor() as usize).min(self.nx - 2);
        let iy = (v.floor() as usize).min(self.ny - 2);
        let tx = u - ix as f64;
        let ty = v - iy as f64;
        let h00 = self.grid(ix, iy);
        let h10 = self.grid(ix + 1, iy);
        let h01 = self.grid(ix, iy + 1);
        let h11 = self.grid(ix + 1, iy + 1);
        h00 * (1.0 - tx) * (1.0 - ty) + h10 * tx * (1.0 - ty) + h01 * (1.0 - tx) * ty
            + h11 * tx * ty
    }

    /// Surface x-gradient (dh/dx) by central difference at the query point;
    /// used for contact normals.
    pub fn slope_x_at(&self, x: f64, y: f64) -> f64 {
        let d = self.cell_size;
        (self.height_at(x + d, y) - self.height_at(x - d, y)) / (2.0 * d)
    }

    /// Heights around `center`, relative to `body_z`, row index advancing
    /// along +x (forward), column index along +y. The patch center lands on
    /// the grid's middle element for odd dims.
    pub fn sample_patch(
        &self,
        center: [f64; 2],
        rows: usize,
        cols: usize,
        spacing: f64,
        body_z: f64,
    ) -> HeightPatch {
        let mut values = Vec::with_capacity(rows * cols);
        let r_mid = (rows as f64 - 1.0) / 2.0;
        let c_mid = (cols as f64 - 1.0) / 2.0;
        for r in 0..rows {
            let x = center[0] + (r as f64 - r_mid) * spacing;
            for c in 0..cols {
                let y = center[1] + (c as f64 - c_mid) * spacing;
                values.push(self.height_at(x, y) - body_z);
            }
        }
        HeightPatch { values, rows, cols }
    }

    /// Export the grid as CSV (one row per y line) plus a JSON metadata
    /// sidecar describing geometry, class, level, and difficulty.
    pub fn export(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# schema: terrain_grid/v1\n");
        for iy in 0..self.ny {
            let row: Vec<String> = (0..self.nx)
                .map(|ix| format!("{:.6}", self.grid(ix, iy)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))?;

        let meta = serde_json::json!({
            "schema": "terrain_meta/v1",
            "class": self.class.to_string(),
            "level": self.level,
            "difficulty": self.difficulty,
            "cell_size": self.cell_size,
            "x0": self.x0,
            "y0": self.y0,
            "nx": self.nx,
            "ny": self.ny,
            "start": self.start,
            "goal": self.goal,
        });
        let mut f = std::fs::File::create(meta_path).map_err(|e| Error::io(meta_path, e))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&meta).expect("json"))
            .map_err(|e| Error::io(meta_path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> TerrainConfig {
        TerrainConfig::default()
    }

    #[test]
    fn flat_terrain_is_identically_zero() {
        let f = generate(TerrainClass::Flat, 5, 42, &cfg()).unwrap();
        assert!(f.raw_heights().iter().all(|&h| h == 0.0));
        assert_eq!(f.height_at(3.3, 0.7), 0.0);
    }

    #[test]
    fn difficulty_endpoints_match_the_published_ranges() {
        // Steps: 5 cm at level 0, 35 cm at level 9.
        assert_relative_eq!(difficulty_param(TerrainClass::Steps, 0), 0.05);
        assert_relative_eq!(difficulty_param(TerrainClass::Steps, 9), 0.35);
        // Slopes: 2 degrees at level 0, 34 at level 9.
        assert_relative_eq!(difficulty_param(TerrainClass::Slope, 0), 2.0);
        assert_relative_eq!(difficulty_param(TerrainClass::Slope, 9), 34.0);
        let f = generate(TerrainClass::Steps, 0, 7, &cfg()).unwrap();
        assert_relative_eq!(f.difficulty(), 0.05);
        let s = generate(TerrainClass::Slope, 9, 7, &cfg()).unwrap();
        assert_relative_eq!(s.difficulty(), 34.0);
    }

    #[test]
    fn difficulty_is_strictly_increasing_in_level() {
        for class in [TerrainClass::Steps, TerrainClass::Slope, TerrainClass::Uneven] {
            for level in 0..MAX_LEVEL {
                assert!(
                    difficulty_param(class, level + 1) > difficulty_param(class, level),
                    "{class} level {level}"
                );
            }
        }
    }

    #[test]
    fn generation_is_deterministic_in_class_level_seed() {
        for class in TerrainClass::ALL {
            let a = generate(class, 4, 1234, &cfg()).unwrap();
            let b = generate(class, 4, 1234, &cfg()).unwrap();
            assert_eq!(a.raw_heights(), b.raw_heights(), "{class}");
            let c = generate(class, 4, 1235, &cfg()).unwrap();
            if class != TerrainClass::Flat && class != TerrainClass::Slope {
                assert_ne!(a.raw_heights(), c.raw_heights(), "{class} ignores seed");
            }
        }
    }

    #[test]
    fn steps_risers_have_exactly_the_level_height() {
        let f = generate(TerrainClass::Steps, 3, 99, &cfg()).unwrap();
        let expect = difficulty_param(TerrainClass::Steps, 3);
        let (nx, _) = f.grid_dims();
        let mut risers = 0;
        for ix in 1..nx {
            let dh = (f.grid(ix, 0) - f.grid(ix - 1, 0)).abs();
            if dh > 1e-12 {
                assert_relative_eq!(dh, expect, epsilon = 1e-12);
                risers += 1;
            }
        }
        assert!(risers >= 5, "expected several risers, got {risers}");
    }

    #[test]
    fn slope_grade_matches_the_angle() {
        let f = generate(TerrainClass::Slope, 9, 0, &cfg()).unwrap();
        let grade = (f.height_at(6.0, 0.0) - f.height_at(4.0, 0.0)) / 2.0;
        assert_relative_eq!(grade, 34f64.to_radians().tan(), epsilon = 1e-9);
        // Spawn region stays flat.
        assert_eq!(f.height_at(0.0, 0.0), 0.0);
    }

    #[test]
    fn uneven_amplitude_is_bounded_and_level_scaled() {
        let lo = generate(TerrainClass::Uneven, 0, 5, &cfg()).unwrap();
        let hi = generate(TerrainClass::Uneven, 9, 5, &cfg()).unwrap();
        let peak = |f: &TerrainField| {
            f.raw_heights()
                .iter()
                .map(|h| h.abs())
                .fold(0.0f64, f64::max)
        };
        assert!(peak(&lo) <= difficulty_param(TerrainClass::Uneven, 0) + 1e-12);
        assert!(peak(&hi) <= difficulty_param(TerrainClass::Uneven, 9) + 1e-12);
        assert!(peak(&hi) > peak(&lo));
        // Not degenerate: at least half the max amplitude is realized.
        assert!(peak(&hi) > 0.05);
    }

    #[test]
    fn height_at_cell_corners_is_exact_and_midpoints_interpolate() {
        let f = generate(TerrainClass::Uneven, 6, 11, &cfg()).unwrap();
        let (nx, _) = f.grid_dims();
        for ix in [0usize, nx / 3, nx - 1] {
            let x = f.x0 + ix as f64 * f.cell_size;
            assert_relative_eq!(f.height_at(x, 0.0), f.grid(ix, 40), epsilon = 1e-12);
        }
        // Midpoint of two corners at h0 and h1 is their average (profile is
        // constant in y, so pick the x midpoint).
        let ix = nx / 2;
        let x = f.x0 + (ix as f64 + 0.5) * f.cell_size;
        let expect = 0.5 * (f.grid(ix, 0) + f.grid(ix + 1, 0));
        assert_relative_eq!(f.height_at(x, 0.0), expect, epsilon = 1e-12);
    }

    #[test]
    fn bilinear_midpoint_of_known_cell() {
        // Hand-built 2x2-cell field via the flat generator, then patched.
        let mut f = generate(TerrainClass::Flat, 0, 0, &cfg()).unwrap();
        f.heights[1] = 0.1; // grid (ix=1, iy=0)
        let x_mid = f.x0 + 0.5 * f.cell_size;
        let y_at0 = f.y0;
        assert_relative_eq!(f.height_at(x_mid, y_at0), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn out_of_field_queries_clamp_to_the_edge() {
        let f = generate(TerrainClass::Slope, 5, 3, &cfg()).unwrap();
        let (nx, _) = f.grid_dims();
        let x_max = f.x0 + (nx - 1) as f64 * f.cell_size;
        let edge = f.height_at(x_max, 0.0);
        assert_relative_eq!(f.height_at(x_max + 50.0, 0.0), edge, epsilon = 1e-12);
        assert_relative_eq!(f.height_at(x_max + 1.0, 123.0), edge, epsilon = 1e-12);
        // A patch fully outside is constant at the edge height.
        let p = f.sample_patch([x_max + 10.0, 0.0], 3, 3, 0.1, 0.0);
        assert!(p.values.iter().all(|&v| (v - edge).abs() < 1e-12));
    }

    #[test]
    fn random_queries_stay_within_one_cell_of_nearest_grid_value() {
        use rand::Rng;
        let f = generate(TerrainClass::Steps, 7, 21, &cfg()).unwrap();
        let mut rng = SeedStream::new(55).with_str("terrain-query").rng();
        for _ in 0..2000 {
            let x = rng.gen_range(-3.0..11.0);
            let y = rng.gen_range(-3.0..3.0);
            let h = f.height_at(x, y);
            // Nearest-neighbor oracle on the dense grid.
            let ix = (((x - f.x0) / f.cell_size).round() as i64)
                .clamp(0, f.nx as i64 - 1) as usize;
            let iy = (((y - f.y0) / f.cell_size).round() as i64)
                .clamp(0, f.ny as i64 - 1) as usize;
            let nn = f.grid(ix, iy);
            // Bilinear value lies within the local height variation: for a
            // step field this is at most one riser.
            assert!(
                (h - nn).abs() <= f.difficulty() + 1e-9,
                "x={x} y={y} h={h} nn={nn}"
            );
        }
    }

    #[test]
    fn single_cell_patch_equals_height_at_minus_body_height() {
        let f = generate(TerrainClass::Uneven, 8, 17, &cfg()).unwrap();
        for (x, y, z) in [(1.0, 0.2, 0.8), (4.4, -0.9, 0.75), (7.9, 1.3, 0.9)] {
            let p = f.sample_patch([x, y], 1, 1, 0.05, z);
            assert_relative_eq!(p.values[0], f.height_at(x, y) - z, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_edge_partitions_patch_values() {
        // A 0.3 m riser under the patch: every sample is either ~0 - z or
        // ~0.3 - z, split by the edge.
        let mut tc = cfg();
        tc.step_tread = [5.0, 5.00001]; // one long tread: single riser near x=1
        let mut f = generate(TerrainClass::Flat, 0, 0, &tc).unwrap();
        let riser_x = 2.0;
        for iy in 0..f.ny {
            for ix in 0..f.nx {
                let x = f.x0 + ix as f64 * f.cell_size;
                if x >= riser_x {
                    f.heights[iy * f.nx + ix] = 0.3;
                }
            }
        }
        let body_z = 0.8;
        let p = f.sample_patch([riser_x, 0.0], 9, 3, 0.1, body_z);
        let mut low = 0;
        let mut high = 0;
        for &v in &p.values {
            if (v - (0.0 - body_z)).abs() < 1e-9 {
                low += 1;
            } else if (v - (0.3 - body_z)).abs() < 1e-9 {
                high += 1;
            }
            // Values on the interpolated edge column are allowed between.
            assert!(v >= -body_z - 1e-9 && v <= 0.3 - body_z + 1e-9);
        }
        assert!(low >= 9 && high >= 9, "low={low} high={high}");
    }

    #[test]
    fn unknown_class_and_bad_level_are_config_errors() {
        assert!(TerrainClass::parse("stairs").is_err());
        assert!(generate(TerrainClass::Steps, 10, 0, &cfg()).is_err());
    }

    #[test]
    fn patch_rows_advance_along_x() {
        let f = generate(TerrainClass::Slope, 9, 0, &cfg()).unwrap();
        let p = f.sample_patch([5.0, 0.0], 5, 3, 0.1, 0.0);
        // On an uphill slope, later rows (larger x) must be higher.
        let row_mean = |r: usize| -> f64 {
            p.values[r * p.cols..(r + 1) * p.cols].iter().sum::<f64>() / p.cols as f64
        };
        for r in 1..5 {
            assert!(row_mean(r) > row_mean(r - 1));
        }
    }
}
