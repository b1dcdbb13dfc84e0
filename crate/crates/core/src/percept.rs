//! Egocentric partial observations.
//!
//! Each player sees a 15x15 RGB window centred on itself, one pixel per
//! entity. Marks are drawn for every agent except the viewer, which always
//! appears in the plain agent colour in its own window.

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{BerryType, Orientation, Pos, WorldState};

pub const VIEW_SIZE: usize = 15;
pub const VIEW_RADIUS: i32 = 7;
pub const OBS_LEN: usize = VIEW_SIZE * VIEW_SIZE * 3;

pub type Rgb = [u8; 3];

/// Whether the window turns with the viewer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Viewer always faces the top of the window.
    #[default]
    Egocentric,
    /// North is always up.
    AxisAligned,
}

impl ViewMode {
    pub fn name(self) -> &'static str {
        match self {
            ViewMode::Egocentric => "egocentric",
            ViewMode::AxisAligned => "axis_aligned",
        }
    }
}

impl std::fmt::Display for ViewMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ViewMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [ViewMode::Egocentric, ViewMode::AxisAligned]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown view mode {s:?}"))
    }
}

/// One player's view, stored as bytes; channel intensity is `byte / 255`.
#[derive(Clone, PartialEq, Eq)]
pub struct Observation {
    pub pixels: [u8; OBS_LEN],
}

impl std::fmt::Debug for Observation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observation").finish_non_exhaustive()
    }
}

impl Default for Observation {
    fn default() -> Self {
        Self { pixels: [0; OBS_LEN] }
    }
}

impl Observation {
    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = (row * VIEW_SIZE + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel intensities in `[0, 1]`, row-major, channels last.
    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&b| b as f64 / 255.0)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PaletteError {
    #[error("palette colours {0:?} and {1:?} coincide")]
    Duplicate(String, String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub berries: Vec<Rgb>,
    pub agent: Rgb,
    pub marked_agent: Rgb,
    pub empty: Rgb,
    pub out_of_bounds: Rgb,
}

impl Palette {
    /// Fully saturated hues for berries, evenly spread around the colour
    /// wheel. Every berry colour has one zero channel, so the agent colours
    /// (no zero channel) can never collide with them.
    pub fn new(num_berry_types: usize) -> Result<Self, PaletteError> {
        let berries = (0..num_berry_types).map(|i| hue_to_rgb(i as f64 / num_berry_types as f64)).collect();
        let p = Self {
            berries,
            agent: [255, 255, 255],
            marked_agent: [255, 160, 200],
            empty: [40, 40, 40],
            out_of_bounds: [0, 0, 0],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PaletteError> {
        let mut named: Vec<(String, Rgb)> = vec![
            ("agent".into(), self.agent),
            ("marked_agent".into(), self.marked_agent),
            ("empty".into(), self.empty),
            ("out_of_bounds".into(), self.out_of_bounds),
        ];
        named.extend(self.berries.iter().enumerate().map(|(i, &c)| (format!("berry {i}"), c)));
        for i in 0..named.len() {
            for j in i + 1..named.len() {
                if named[i].1 == named[j].1 {
                    return Err(PaletteError::Duplicate(named[i].0.clone(), named[j].0.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn berry(&self, b: BerryType) -> Rgb {
        self.berries[b as usize]
    }
}

fn hue_to_rgb(h: f64) -> Rgb {
    let h6 = h * 6.0;
    let sector = h6.floor() as i32 % 6;
    let frac = h6 - h6.floor();
    let up = (frac * 255.0).round() as u8;
    let down = 255 - up;
    match sector {
        0 => [255, up, 0],
        1 => [down, 255, 0],
        2 => [0, 255, up],
        3 => [0, down, 255],
        4 => [up, 0, 255],
        _ => [255, 0, down],
    }
}

/// World coordinates shown at window cell `(row, col)`.
fn window_to_world(center: Pos, facing: Orientation, mode: ViewMode, row: usize, col: usize) -> (i32, i32) {
    let ahead = VIEW_RADIUS - row as i32;
    let right = col as i32 - VIEW_RADIUS;
    let (f, r) = match mode {
        ViewMode::Egocentric => (facing.forward(), facing.right()),
        ViewMode::AxisAligned => (Orientation::North.forward(), Orientation::North.right()),
    };
    (center.x as i32 + ahead * f.0 + right * r.0, center.y as i32 + ahead * f.1 + right * r.1)
}

fn cell_color(state: &WorldState, viewer: usize, palette: &Palette, x: i32, y: i32) -> Rgb {
    let cfg = state.config();
    if x < 0 || y < 0 || x >= cfg.grid_width as i32 || y >= cfg.grid_height as i32 {
        return palette.out_of_bounds;
    }
    let p = Pos { x: x as u16, y: y as u16 };
    if let Some(a) = state.agent_at(p) {
        return if a != viewer && state.agents()[a].marked { palette.marked_agent } else { palette.agent };
    }
    match state.berry_at(p) {
        Some(b) => palette.berry(b),
        None => palette.empty,
    }
}

/// Renders `viewer`'s window into `out`.
pub fn render_into(state: &WorldState, viewer: usize, palette: &Palette, mode: ViewMode, out: &mut Observation) {
    let me = &state.agents()[viewer];
    for row in 0..VIEW_SIZE {
        for col in 0..VIEW_SIZE {
            let (x, y) = window_to_world(me.position, me.orientation, mode, row, col);
            let c = cell_color(state, viewer, palette, x, y);
            let i = (row * VIEW_SIZE + col) * 3;
            out.pixels[i..i + 3].copy_from_slice(&c);
        }
    }
}

pub fn render_observation(state: &WorldState, viewer: usize, palette: &Palette, mode: ViewMode) -> Observation {
    let mut obs = Observation::default();
    render_into(state, viewer, palette, mode, &mut obs);
    obs
}

/// Top-down image of the whole grid with every mark visible, for debugging.
pub fn render_world(state: &WorldState, palette: &Palette) -> (usize, usize, Vec<u8>) {
    let cfg = state.config();
    let (w, h) = (cfg.grid_width, cfg.grid_height);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&cell_color(state, usize::MAX, palette, x as i32, y as i32));
        }
    }
    (w, h, data)
}

/// Writes a binary PPM (P6) image, with an optional `#` comment line in
/// the header.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8], comment: Option<&str>) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"P6\n")?;
    if let Some(c) = comment {
        writeln!(f, "# {c}")?;
    }
    write!(f, "{width} {height}\n255\n")?;
    f.write_all(rgb)?;
    f.flush()
}
