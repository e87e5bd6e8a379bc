//! ColorReach: reach the goal cell on a small grid, observed through pixels.
//!
//! The underlying dynamics never depend on the rendering variant; variants
//! only change the background behind the agent and goal.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augbox::{DistractorBank, ImageObservation, RGB};
use crate::gradtape::Tensor;
use crate::seed::{derive_seed, rng_from_seed};

pub const STEP_COST: f64 = 0.01;
pub const GOAL_REWARD: f64 = 1.0;
pub const NUM_ACTIONS: usize = 4;

const TRAIN_BACKGROUND: [u8; 3] = [128, 128, 128];
const GOAL_COLOR: [u8; 3] = [40, 200, 80];
const AGENT_COLOR: [u8; 3] = [220, 50, 50];

const PLACEMENT_STREAM: u64 = 0;
const BACKGROUND_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(&'static str),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvVariant {
    Train,
    RandomColors,
    TextureBackground,
    DynamicBackground,
}

impl EnvVariant {
    pub const ALL: [EnvVariant; 4] = [
        EnvVariant::Train,
        EnvVariant::RandomColors,
        EnvVariant::TextureBackground,
        EnvVariant::DynamicBackground,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::RandomColors => "random_colors",
            Self::TextureBackground => "texture_background",
            Self::DynamicBackground => "dynamic_background",
        }
    }
}

impl fmt::Display for EnvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvVariant {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| EnvError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Cells per side.
    pub grid: usize,
    /// Pixels per cell side.
    pub cell_px: usize,
    pub horizon: usize,
    /// Stacked frames per observation.
    pub frames: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            cell_px: 6,
            horizon: 100,
            frames: 3,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(EnvError::Config("grid must be at least 2".into()));
        }
        if self.cell_px == 0 || self.horizon == 0 || self.frames == 0 {
            return Err(EnvError::Config(
                "cell_px, horizon and frames must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Image side length in pixels.
    pub fn resolution(&self) -> usize {
        self.grid * self.cell_px
    }

    /// Observation shape `[frames*3, H, W]`.
    pub fn observation_shape(&self) -> [usize; 3] {
        let r = self.resolution();
        [self.frames * RGB, r, r]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub fn manhattan(&self, other: &Position) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent: Position,
    pub goal: Position,
    pub steps: usize,
    pub variant: EnvVariant,
    pub episode_seed: u64,
    pub done: bool,
}

impl EnvState {
    /// Return of the shortest-path policy from this state.
    pub fn optimal_return(&self) -> f64 {
        GOAL_REWARD - STEP_COST * self.agent.manhattan(&self.goal) as f64
    }
}

/// Stacked `u8` frames; frames are shared between consecutive observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedObservation {
    frames: Vec<Arc<[u8]>>,
    height: usize,
    width: usize,
}

impl PackedObservation {
    pub fn frames(&self) -> &[Arc<[u8]>] {
        &self.frames
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames.len() * RGB, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.frames.len() * RGB * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `value / 255` into `out`, which must hold `len()` values.
    pub fn write_unit(&self, out: &mut [f64]) {
        let n = RGB * self.height * self.width;
        for (frame, dst) in self.frames.iter().zip(out.chunks_exact_mut(n)) {
            for (d, &v) in dst.iter_mut().zip(frame.iter()) {
                *d = f64::from(v) / 255.0;
            }
        }
    }

    pub fn to_observation(&self) -> ImageObservation {
        let mut data = vec![0.0; self.len()];
        self.write_unit(&mut data);
        let tensor =
            Tensor::new(self.shape().to_vec(), data).expect("packed frames are well formed");
        ImageObservation::new(tensor).expect("u8 frames map into [0, 1]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: PackedObservation,
    pub reward: f64,
    /// Episode over: goal reached or horizon hit.
    pub done: bool,
    /// The goal was reached on this step; a horizon cut-off alone is not terminal.
    pub goal_reached: bool,
}

#[derive(Debug, Clone)]
enum Background {
    Solid([u8; 3]),
    Texture(Arc<[u8]>),
    Stripes {
        a: [u8; 3],
        b: [u8; 3],
        period: usize,
        phase: usize,
    },
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [u8; 3] {
    hsv_to_rgb(
        rng.random_range(0.0..1.0),
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..0.9),
    )
}

#[derive(Debug, Clone)]
pub struct ColorReach {
    config: EnvConfig,
    state: Option<EnvState>,
    background: Background,
    stack: VecDeque<Arc<[u8]>>,
}

impl ColorReach {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
            background: Background::Solid(TRAIN_BACKGROUND),
            stack: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn reset(&mut self, seed: u64, variant: EnvVariant) -> (EnvState, PackedObservation) {
        let g = self.config.grid;
        let mut rng = rng_from_seed(derive_seed(seed, PLACEMENT_STREAM));
        let cells = g * g;
        let a = rng.random_range(0..cells);
        let mut b = rng.random_range(0..cells - 1);
        if b >= a {
            b += 1;
        }
        let state = EnvState {
            agent: Position {
                row: a / g,
                col: a % g,
            },
            goal: Position {
                row: b / g,
                col: b % g,
            },
            steps: 0,
            variant,
            episode_seed: seed,
            done: false,
        };
        self.background = self.make_background(seed, variant);
        self.state = Some(state);
        let frame = self.render();
        self.stack = std::iter::repeat_n(frame, self.config.frames).collect();
        (state, self.observation())
    }

    fn make_background(&self, seed: u64, variant: EnvVariant) -> Background {
        let mut rng = rng_from_seed(derive_seed(seed, BACKGROUND_STREAM));
        let r = self.config.resolution();
        match variant {
            EnvVariant::Train => Background::Solid(TRAIN_BACKGROUND),
            EnvVariant::RandomColors => Background::Solid(random_color(&mut rng)),
            EnvVariant::TextureBackground => {
                let bank = DistractorBank::generate(rng.random(), 3, r, r);
                let img = bank.image(rng.random_range(0..bank.len()));
                Background::Texture(img.iter().map(|v| (v * 255.0).round() as u8).collect())
            }
            EnvVariant::DynamicBackground => Background::Stripes {
                a: random_color(&mut rng),
                b: random_color(&mut rng),
                period: rng.random_range(2..=self.config.cell_px.max(2) * 2),
                phase: rng.random_range(0..r),
            },
        }
    }

    pub fn step(&mut self, action: Action) -> Result<(EnvState, StepResult)> {
        let state = self
            .state
            .as_mut()
            .ok_or(EnvError::Protocol("step before reset"))?;
        if state.done {
            return Err(EnvError::Protocol("step after episode end"));
        }
        let last = self.config.grid - 1;
        let p = &mut state.agent;
        match action {
            Action::Up => p.row = p.row.saturating_sub(1),
            Action::Down => p.row = (p.row + 1).min(last),
            Action::Left => p.col = p.col.saturating_sub(1),
            Action::Right => p.col = (p.col + 1).min(last),
        }
        state.steps += 1;
        let goal_reached = state.agent == state.goal;
        let reward = if goal_reached { GOAL_REWARD } else { 0.0 } - STEP_COST;
        state.done = goal_reached || state.steps >= self.config.horizon;
        let snapshot = *state;
        if let Background::Stripes { phase, .. } = &mut self.background {
            *phase += 1;
        }
        let frame = self.render();
        self.stack.pop_front();
        self.stack.push_back(frame);
        let result = StepResult {
            observation: self.observation(),
            reward,
            done: snapshot.done,
            goal_reached,
        };
        Ok((snapshot, result))
    }

    pub fn observation(&self) -> PackedObservation {
        let r = self.config.resolution();
        PackedObservation {
            frames: self.stack.iter().cloned().collect(),
            height: r,
            width: r,
        }
    }

    /// Most recent frame, `3 x H x W`.
    pub fn current_frame(&self) -> Option<&Arc<[u8]>> {
        self.stack.back()
    }

    fn render(&self) -> Arc<[u8]> {
        let state = self.state.as_ref().expect("render after reset");
        let r = self.config.resolution();
        let plane = r * r;
        let mut px = vec![0u8; RGB * plane];
        let mut put = |y: usize, x: usize, c: [u8; 3]| {
            for (k, v) in c.into_iter().enumerate() {
                px[k * plane + y * r + x] = v;
            }
        };
        for y in 0..r {
            for x in 0..r {
                let c = match &self.background {
                    Background::Solid(c) => *c,
                    Background::Texture(t) => {
                        [t[y * r + x], t[plane + y * r + x], t[2 * plane + y * r + x]]
                    }
                    Background::Stripes {
                        a,
                        b,
                        period,
                        phase,
                    } => {
                        if ((x + y + phase) / period) % 2 == 0 {
                            *a
                        } else {
                            *b
                        }
                    }
                };
                put(y, x, c);
            }
        }
        // The goal fills its cell. The agent is an inset square, or a
        // checkerboard when cells are too small to inset, so the two differ in
        // shape as well as colour.
        let cp = self.config.cell_px;
        let inset = usize::from(cp >= 3);
        let mut fill = |pos: Position, pad: usize, checker: bool, c: [u8; 3]| {
            for y in pos.row * cp + pad..(pos.row + 1) * cp - pad {
                for x in pos.col * cp + pad..(pos.col + 1) * cp - pad {
                    if !checker || (y + x) % 2 == 0 {
                        put(y, x, c);
                    }
                }
            }
        };
        fill(state.goal, 0, false, GOAL_COLOR);
        fill(state.agent, inset, cp == 2, AGENT_COLOR);
        px.into()
    }
}

/// Writes one channel-first RGB frame as a binary PPM image.
pub fn write_ppm<W: Write>(
    mut w: W,
    frame: &[u8],
    height: usize,
    width: usize,
) -> std::io::Result<()> {
    let plane = height * width;
    if frame.len() != RGB * plane {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "frame size does not match dimensions",
        ));
    }
    write!(w, "P6\n{width} {height}\n255\n")?;
    let mut buf = Vec::with_capacity(frame.len());
    for i in 0..plane {
        buf.extend_from_slice(&[frame[i], frame[plane + i], frame[2 * plane + i]]);
    }
    w.write_all(&buf)
}
