//! Metadata-level dSprites task: move the sprite to the bottom-left corner
//! for squares and the bottom-right corner for ellipses and hearts, then
//! drop it into the absorbing row below the image.
//!
//! The environment tracks true pixel positions. The agent only perceives
//! coarse cells of `granularity × granularity` pixels, and the reward is
//! computed from the pixel column at which the sprite leaves the image.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ObservationMap;
use crate::model::{TemporalSliceBuilder, TemporalSliceModel};
use crate::tensor::{Table, VarName};

pub const IMAGE_SIZE: usize = 32;
pub const N_SHAPES: usize = 3;
pub const N_SCALES: usize = 6;
pub const N_ORIENTATIONS: usize = 40;
pub const N_ACTIONS: usize = 4;
pub const LIKELIHOOD_NOISE: f64 = 1e-3;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

pub const SQUARE: usize = 0;

pub const ACTION_VAR: &str = "A_1";
pub const STATES: [&str; 5] = ["S_pos_x", "S_pos_y", "S_shape", "S_scale", "S_orientation"];
pub const OBSERVATIONS: [&str; 5] = ["O_pos_x", "O_pos_y", "O_shape", "O_scale", "O_orientation"];
pub const PREFERENCE: [&str; 3] = ["O_pos_x", "O_pos_y", "O_shape"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub granularity: usize,
    /// Pixel moves per action.
    pub repeat: usize,
    pub max_cycles: usize,
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            granularity: 8,
            repeat: 8,
            max_cycles: 50,
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let g = self.granularity;
        if g == 0 || !IMAGE_SIZE.is_multiple_of(g) {
            return Err(Error::InvalidConfig(format!(
                "granularity {g} does not divide {IMAGE_SIZE}"
            )));
        }
        if self.repeat == 0 || !self.repeat.is_multiple_of(g) {
            // Otherwise the cell-level dynamics are not a function of the cell.
            return Err(Error::InvalidConfig(format!(
                "repeat {} must be a positive multiple of granularity {g}",
                self.repeat
            )));
        }
        if self.max_cycles == 0 {
            return Err(Error::InvalidConfig("max_cycles must be positive".into()));
        }
        Ok(())
    }

    /// Number of x cells.
    pub fn n_x(&self) -> usize {
        IMAGE_SIZE / self.granularity
    }

    /// Number of y cells including the absorbing row.
    pub fn n_y(&self) -> usize {
        self.n_x() + 1
    }

    pub fn absorbing_y(&self) -> usize {
        self.n_x()
    }

    /// Cells crossed by one action away from the borders.
    pub fn cells_per_move(&self) -> usize {
        self.repeat / self.granularity
    }
}

/// Target x cell (or pixel, with `width` = 32) for a shape.
pub fn x_target(shape: usize, width: usize) -> usize {
    if shape == SQUARE {
        0
    } else {
        width - 1
    }
}

/// Cell-level effect of one action. `y == n_y - 1` is the absorbing row,
/// which only DOWN from the bottom image row can reach and nothing leaves.
pub fn move_cell(x: usize, y: usize, action: usize, cells: usize, n_x: usize) -> (usize, usize) {
    let absorbing = n_x;
    match action {
        UP if y < absorbing => (x, y.saturating_sub(cells)),
        DOWN if y < absorbing => (x, (y + cells).min(absorbing)),
        LEFT => (x.saturating_sub(cells), y),
        RIGHT => ((x + cells).min(n_x - 1), y),
        _ => (x, y),
    }
}

/// Full simulator state. Positions are in pixels; `y == 32` is the
/// absorbing row. y grows downwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub shape: usize,
    pub scale: usize,
    pub orientation: usize,
    pub x: usize,
    pub y: usize,
    pub done: bool,
    pub absorbed: bool,
    pub cycles_elapsed: usize,
}

impl EnvState {
    pub fn x_cell(&self, granularity: usize) -> usize {
        self.x / granularity
    }

    pub fn y_cell(&self, granularity: usize) -> usize {
        self.y / granularity
    }
}

/// Schematic grid for display: cells, agent cell and goal cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvView {
    pub granularity: usize,
    pub width: usize,
    pub height: usize,
    pub absorbing_row: usize,
    pub agent: [usize; 2],
    pub goal: [usize; 2],
    pub pixel: [usize; 2],
    pub shape: usize,
    pub scale: usize,
    pub orientation: usize,
    pub done: bool,
    pub cycles_elapsed: usize,
    pub reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DSpritesEnv {
    config: EnvConfig,
    state: EnvState,
    rng: ChaCha8Rng,
}

impl DSpritesEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Self::with_rng(config, rng)
    }

    pub fn with_rng(config: EnvConfig, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: EnvState {
                shape: 0,
                scale: 0,
                orientation: 0,
                x: 0,
                y: 0,
                done: true,
                absorbed: false,
                cycles_elapsed: 0,
            },
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Overrides the simulator state (tests, replays).
    pub fn set_state(&mut self, state: EnvState) {
        self.state = state;
    }

    pub fn done(&self) -> bool {
        self.state.done
    }

    /// Samples a fresh sprite anywhere inside the image.
    pub fn reset(&mut self) -> ObservationMap {
        let rng = &mut self.rng;
        self.state = EnvState {
            shape: rng.random_range(0..N_SHAPES),
            scale: rng.random_range(0..N_SCALES),
            orientation: rng.random_range(0..N_ORIENTATIONS),
            x: rng.random_range(0..IMAGE_SIZE),
            y: rng.random_range(0..IMAGE_SIZE),
            done: false,
            absorbed: false,
            cycles_elapsed: 0,
        };
        self.observations()
    }

    pub fn observations(&self) -> ObservationMap {
        let g = self.config.granularity;
        let s = &self.state;
        let values = [s.x_cell(g), s.y_cell(g), s.shape, s.scale, s.orientation];
        OBSERVATIONS
            .iter()
            .zip(values)
            .map(|(n, v)| (VarName::new(n).expect("static name"), v))
            .collect()
    }

    /// Applies `action` `repeat` times, one pixel at a time.
    pub fn execute(&mut self, action: usize) -> Result<ObservationMap> {
        if self.state.done {
            return Err(Error::EpisodeFinished);
        }
        if action >= N_ACTIONS {
            return Err(Error::ActionOutOfRange {
                action,
                n_actions: N_ACTIONS,
            });
        }
        let s = &mut self.state;
        for _ in 0..self.config.repeat {
            match action {
                UP => s.y = s.y.saturating_sub(1),
                DOWN => s.y += 1,
                LEFT => s.x = s.x.saturating_sub(1),
                _ => s.x = (s.x + 1).min(IMAGE_SIZE - 1),
            }
            if s.y == IMAGE_SIZE {
                s.absorbed = true;
                break;
            }
        }
        s.cycles_elapsed += 1;
        s.done = s.absorbed || s.cycles_elapsed >= self.config.max_cycles;
        Ok(self.observations())
    }

    /// `1 - 2·|x - x_target| / 31` on entering the absorbing row, else -1.
    pub fn reward(&self) -> Result<f64> {
        let s = &self.state;
        if !s.done {
            return Err(Error::EpisodeNotFinished);
        }
        if !s.absorbed {
            return Ok(-1.0);
        }
        let target = x_target(s.shape, IMAGE_SIZE);
        Ok(1.0 - 2.0 * s.x.abs_diff(target) as f64 / (IMAGE_SIZE - 1) as f64)
    }

    pub fn view(&self) -> EnvView {
        let g = self.config.granularity;
        let s = &self.state;
        EnvView {
            granularity: g,
            width: self.config.n_x(),
            height: self.config.n_y(),
            absorbing_row: self.config.absorbing_y(),
            agent: [s.x_cell(g), s.y_cell(g)],
            goal: [x_target(s.shape, self.config.n_x()), self.config.absorbing_y()],
            pixel: [s.x, s.y],
            shape: s.shape,
            scale: s.scale,
            orientation: s.orientation,
            done: s.done,
            cycles_elapsed: s.cycles_elapsed,
            reward: self.reward().ok(),
        }
    }
}

/// `(total_rewards + n_runs) / (2 · n_runs)`.
pub fn p_solved(total_rewards: f64, n_runs: usize) -> f64 {
    (total_rewards + n_runs as f64) / (2.0 * n_runs as f64)
}

fn noisy_eye(n: usize) -> Table {
    let off = LIKELIHOOD_NOISE / n as f64;
    Table::from_fn(vec![n, n], |i| {
        if i[0] == i[1] {
            1.0 - LIKELIHOOD_NOISE + off
        } else {
            off
        }
    })
}

fn cardinalities(config: &EnvConfig) -> [usize; 5] {
    [config.n_x(), config.n_y(), N_SHAPES, N_SCALES, N_ORIENTATIONS]
}

/// Likelihoods: a noisy identity per modality, keyed by observation name.
pub fn gen_a(config: &EnvConfig) -> BTreeMap<String, Table> {
    OBSERVATIONS
        .iter()
        .zip(cardinalities(config))
        .map(|(n, c)| (n.to_string(), noisy_eye(c)))
        .collect()
}

/// Transitions keyed by state name. Position tensors have axes
/// `[next, current, action]`; the others are identities.
pub fn gen_b(config: &EnvConfig) -> BTreeMap<String, Table> {
    let (n_x, n_y, cells) = (config.n_x(), config.n_y(), config.cells_per_move());
    let x = Table::from_fn(vec![n_x, n_x, N_ACTIONS], |i| {
        (move_cell(i[1], 0, i[2], cells, n_x).0 == i[0]) as u8 as f64
    });
    let y = Table::from_fn(vec![n_y, n_y, N_ACTIONS], |i| {
        (move_cell(0, i[1], i[2], cells, n_x).1 == i[0]) as u8 as f64
    });
    let mut b = BTreeMap::from([("S_pos_x".to_string(), x), ("S_pos_y".to_string(), y)]);
    for (n, c) in STATES.iter().zip(cardinalities(config)).skip(2) {
        b.insert(n.to_string(), Table::eye(c));
    }
    b
}

/// How the preference over positions decays away from the goal cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreferenceShape {
    /// `|x - x_target| + (absorbing - y)` everywhere.
    Manhattan,
    /// As `Manhattan` inside the image, but absorbing cells other than the
    /// goal rank below every image cell. The model lets x keep moving inside
    /// the absorbing row, so without this, dropping early looks as good as
    /// lining up first.
    #[default]
    GoalGated,
}

impl std::str::FromStr for PreferenceShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manhattan" => Ok(Self::Manhattan),
            "goal-gated" => Ok(Self::GoalGated),
            other => Err(Error::InvalidConfig(format!("unknown preference shape {other:?}"))),
        }
    }
}

/// Distance of an observed position from the goal of `shape`.
pub fn goal_distance(config: &EnvConfig, shape_kind: PreferenceShape, x: usize, y: usize, shape: usize) -> usize {
    let (n_x, absorbing) = (config.n_x(), config.absorbing_y());
    let dx = x.abs_diff(x_target(shape, n_x));
    match shape_kind {
        PreferenceShape::GoalGated if y == absorbing && dx > 0 => n_x + absorbing + dx,
        _ => dx + (absorbing - y),
    }
}

/// Joint preference over `[O_pos_x, O_pos_y, O_shape]`:
/// `ln C ∝ -precision · goal_distance`.
pub fn gen_c(config: &EnvConfig, precision: f64, shape_kind: PreferenceShape) -> Table {
    let (n_x, n_y) = (config.n_x(), config.n_y());
    let logits = Table::from_fn(vec![n_x, n_y, N_SHAPES], |i| {
        -precision * goal_distance(config, shape_kind, i[0], i[1], i[2]) as f64
    });
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.data().iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Table::new(vec![n_x, n_y, N_SHAPES], weights.iter().map(|w| w / total).collect()).expect("shape matches data")
}

/// Priors keyed by state name. Without `uniform`, y excludes the absorbing
/// row, where no episode starts.
pub fn gen_d(config: &EnvConfig, uniform: bool) -> BTreeMap<String, Vec<f64>> {
    STATES
        .iter()
        .zip(cardinalities(config))
        .map(|(n, c)| {
            let mut p = vec![1.0 / c as f64; c];
            if !uniform && *n == "S_pos_y" {
                p = vec![1.0 / (c - 1) as f64; c];
                p[c - 1] = 0.0;
            }
            (n.to_string(), p)
        })
        .collect()
}

/// The five-state dSprites model with uniform priors.
pub fn build_model(config: &EnvConfig, precision: f64, shape_kind: PreferenceShape) -> Result<TemporalSliceModel> {
    config.validate()?;
    let mut a = gen_a(config);
    let mut b = gen_b(config);
    let mut d = gen_d(config, true);
    let mut builder = TemporalSliceBuilder::new(ACTION_VAR, N_ACTIONS)?;
    for s in STATES {
        builder = builder.add_state(s, d.remove(s).expect("prior generated"))?;
    }
    for (o, s) in OBSERVATIONS.iter().zip(STATES) {
        builder = builder.add_observation(o, a.remove(*o).expect("likelihood generated"), &[s])?;
    }
    for (i, s) in STATES.iter().enumerate() {
        let parents: &[&str] = if i < 2 { &[s, ACTION_VAR] } else { &[s] };
        builder = builder.add_transition(s, b.remove(*s).expect("transition generated"), parents)?;
    }
    builder
        .add_preference(&PREFERENCE, gen_c(config, precision, shape_kind))?
        .build()
}
