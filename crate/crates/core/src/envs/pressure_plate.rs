use std::path::Path;

use super::{EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::nn::Rng;

/// Built-in 9x19, four-room, four-agent layout.
pub const DEFAULT_LAYOUT: &str = include_str!("../../layouts/pressureplate_4p.txt");
/// Compact two-room, two-agent layout for quick runs.
pub const SMALL_LAYOUT: &str = include_str!("../../layouts/pressureplate_2p.txt");
/// Two-agent layout cut from the default one: its first room and the chest
/// room, same room sizes and start cells.
pub const TWO_ROOM_LAYOUT: &str = include_str!("../../layouts/pressureplate_2room.txt");

pub const VIEW: usize = 5;
const LAYERS: usize = 4;
const DOOR_REWARD: f32 = 1.0;
const CHEST_REWARD: f32 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Noop = 4,
}

impl Move {
    pub fn from_index(a: usize) -> Option<Move> {
        [Move::Up, Move::Down, Move::Left, Move::Right, Move::Noop].get(a).copied()
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Move::Up => (0, -1),
            Move::Down => (0, 1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
            Move::Noop => (0, 0),
        }
    }
}

/// Grid cell as `(x, y)`.
pub type Cell = (usize, usize);

/// Parsed grid: rooms are indexed by plate letter (`a` is room 0); door `i`
/// separates room `i` from room `i + 1` and the chest sits in the last room.
#[derive(Clone, Debug, PartialEq)]
pub struct PressurePlateLayout {
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    pub plates: Vec<Cell>,
    pub doors: Vec<Cell>,
    pub chest: Cell,
    pub starts: Vec<Cell>,
    /// Agent standing on plate `i`.
    pub plate_agent: Vec<usize>,
    pub chest_agent: usize,
}

impl PressurePlateLayout {
    /// Parses `#` walls, `.` floor, `0-9` agent starts, `a-j` plates, `A-J`
    /// doorways and `$` chest, followed by a line such as
    /// `assign a:0 b:1 $:2`.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let (assign_line, grid) = match lines.split_last() {
            Some((last, grid)) if last.starts_with("assign") => (*last, grid),
            _ => return Err(Error::Layout("missing assignment line".into())),
        };
        if grid.is_empty() {
            return Err(Error::Layout("empty grid".into()));
        }
        let width = grid[0].chars().count();
        let height = grid.len();
        let mut walls = vec![false; width * height];
        let mut plates: Vec<Option<Cell>> = vec![None; 10];
        let mut doors: Vec<Option<Cell>> = vec![None; 10];
        let mut starts: Vec<Option<Cell>> = vec![None; 10];
        let mut chest = None;
        let dup = |what: String| Error::Layout(format!("duplicate {what}"));
        for (y, row) in grid.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Layout(format!("row {y} has width {} (expected {width})", row.chars().count())));
            }
            for (x, c) in row.chars().enumerate() {
                let cell = (x, y);
                match c {
                    '#' => walls[y * width + x] = true,
                    '.' => {}
                    '$' => {
                        if chest.replace(cell).is_some() {
                            return Err(dup("chest".into()));
                        }
                    }
                    '0'..='9' => {
                        let i = c as usize - '0' as usize;
                        if starts[i].replace(cell).is_some() {
                            return Err(dup(format!("agent start {c}")));
                        }
                    }
                    'a'..='j' => {
                        let i = c as usize - 'a' as usize;
                        if plates[i].replace(cell).is_some() {
                            return Err(dup(format!("plate {c}")));
                        }
                    }
                    'A'..='J' => {
                        let i = c as usize - 'A' as usize;
                        if doors[i].replace(cell).is_some() {
                            return Err(dup(format!("doorway {c}")));
                        }
                    }
                    _ => return Err(Error::Layout(format!("unknown cell character {c:?}"))),
                }
            }
        }
        let contiguous = |v: &[Option<Cell>], what: &str| -> Result<Vec<Cell>> {
            let n = v.iter().take_while(|c| c.is_some()).count();
            if v[n..].iter().any(Option::is_some) {
                return Err(Error::Layout(format!("{what} identifiers must be contiguous from the first")));
            }
            Ok(v[..n].iter().map(|c| c.unwrap()).collect())
        };
        let plates = contiguous(&plates, "plate")?;
        let doors = contiguous(&doors, "doorway")?;
        let starts = contiguous(&starts, "agent")?;
        let chest = chest.ok_or_else(|| Error::Layout("no chest".into()))?;
        if plates.len() != doors.len() {
            return Err(Error::Layout(format!("{} plates but {} doorways", plates.len(), doors.len())));
        }
        if starts.len() != plates.len() + 1 {
            return Err(Error::Layout(format!(
                "{} agents for {} plates plus a chest",
                starts.len(),
                plates.len()
            )));
        }

        let n = starts.len();
        let mut plate_agent: Vec<Option<usize>> = vec![None; plates.len()];
        let mut chest_agent = None;
        let mut taken = vec![false; n];
        for item in assign_line.split_whitespace().skip(1) {
            let (key, agent) = item
                .split_once(':')
                .ok_or_else(|| Error::Layout(format!("bad assignment {item:?}")))?;
            let agent: usize = agent.parse().map_err(|_| Error::Layout(format!("bad agent id in {item:?}")))?;
            if agent >= n || std::mem::replace(&mut taken[agent], true) {
                return Err(Error::Layout(format!("assignment is not a bijection at {item:?}")));
            }
            let slot = match key {
                "$" => &mut chest_agent,
                k if k.len() == 1 && ('a'..='j').contains(&k.chars().next().unwrap()) => {
                    let i = k.as_bytes()[0] as usize - b'a' as usize;
                    plate_agent.get_mut(i).ok_or_else(|| Error::Layout(format!("no plate {k}")))?
                }
                _ => return Err(Error::Layout(format!("bad assignment key {key:?}"))),
            };
            if slot.replace(agent).is_some() {
                return Err(Error::Layout(format!("{key} assigned twice")));
            }
        }
        let plate_agent: Vec<usize> = plate_agent
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Layout("every plate needs an assigned agent".into()))?;
        let chest_agent = chest_agent.ok_or_else(|| Error::Layout("chest needs an assigned agent".into()))?;

        // Rooms must form a chain ordered from the start area to the chest:
        // room 0 (below door 0) holds plate 0, and so on.
        let mut prev = usize::MAX;
        for (i, d) in doors.iter().enumerate() {
            if d.1 >= prev {
                return Err(Error::Layout("doorways must be ordered along the chain".into()));
            }
            prev = d.1;
            let room_lo = d.1;
            let room_hi = if i == 0 { height } else { doors[i - 1].1 };
            if !(plates[i].1 > room_lo && plates[i].1 < room_hi) {
                return Err(Error::Layout(format!("plate {i} is not in room {i}")));
            }
        }
        if let Some(last) = doors.last() {
            if chest.1 >= last.1 {
                return Err(Error::Layout("chest must be in the last room".into()));
            }
        }
        Ok(PressurePlateLayout { width, height, walls, plates, doors, chest, starts, plate_agent, chest_agent })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn n_agents(&self) -> usize {
        self.starts.len()
    }

    pub fn is_wall(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return true;
        }
        self.walls[y as usize * self.width + x as usize]
    }

    pub fn obs_dim(&self) -> usize {
        LAYERS * VIEW * VIEW + 2
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_agents() + self.doors.len()
    }

    /// Door `i` is open iff its assigned agent stands on plate `i`.
    pub fn doors_open(&self, positions: &[Cell]) -> Vec<bool> {
        self.plates
            .iter()
            .zip(&self.plate_agent)
            .map(|(p, &a)| positions[a] == *p)
            .collect()
    }

    fn norm(&self, c: Cell) -> [f32; 2] {
        [
            c.0 as f32 / (self.width - 1).max(1) as f32,
            c.1 as f32 / (self.height - 1).max(1) as f32,
        ]
    }

    /// Four 5x5 binary layers centred on the agent (agents, walls, closed
    /// doors, plates and chest) followed by its normalised `(x, y)`.
    pub fn observe(&self, positions: &[Cell], doors_open: &[bool], agent: usize) -> Vec<f32> {
        let mut obs = vec![0.0f32; self.obs_dim()];
        let (cx, cy) = (positions[agent].0 as i64, positions[agent].1 as i64);
        let half = (VIEW / 2) as i64;
        let plane = VIEW * VIEW;
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (cx + dx, cy + dy);
                let k = ((dy + half) as usize) * VIEW + (dx + half) as usize;
                if self.is_wall(x, y) {
                    obs[plane + k] = 1.0;
                    continue;
                }
                let cell = (x as usize, y as usize);
                if positions.contains(&cell) {
                    obs[k] = 1.0;
                }
                if let Some(i) = self.doors.iter().position(|&d| d == cell) {
                    if !doors_open[i] {
                        obs[2 * plane + k] = 1.0;
                    }
                }
                if self.plates.contains(&cell) || self.chest == cell {
                    obs[3 * plane + k] = 1.0;
                }
            }
        }
        let xy = self.norm(positions[agent]);
        obs[LAYERS * plane] = xy[0];
        obs[LAYERS * plane + 1] = xy[1];
        obs
    }

    /// All agent coordinates (normalised) then the door-open bits.
    pub fn global_state(&self, positions: &[Cell], doors_open: &[bool]) -> Vec<f32> {
        let mut s: Vec<f32> = positions.iter().flat_map(|&p| self.norm(p)).collect();
        s.extend(doors_open.iter().map(|&o| if o { 1.0 } else { 0.0 }));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PressurePlateConfig {
    pub layout: PressurePlateLayout,
    pub max_steps: usize,
}

impl PressurePlateConfig {
    pub fn default_layout() -> Self {
        PressurePlateConfig { layout: PressurePlateLayout::parse(DEFAULT_LAYOUT).expect("built-in layout"), max_steps: 250 }
    }

    pub fn small_layout(max_steps: usize) -> Self {
        PressurePlateConfig { layout: PressurePlateLayout::parse(SMALL_LAYOUT).expect("built-in layout"), max_steps }
    }

    pub fn two_room_layout(max_steps: usize) -> Self {
        PressurePlateConfig { layout: PressurePlateLayout::parse(TWO_ROOM_LAYOUT).expect("built-in layout"), max_steps }
    }
}

pub struct PressurePlate {
    config: PressurePlateConfig,
    positions: Vec<Cell>,
    doors_open: Vec<bool>,
    door_rewarded: Vec<bool>,
    step: usize,
    done: bool,
    solved: bool,
}

impl PressurePlate {
    pub fn new(config: PressurePlateConfig) -> Result<Self> {
        if config.max_steps == 0 {
            return Err(Error::Config("pressureplate max_steps must be >= 1".into()));
        }
        let n_doors = config.layout.doors.len();
        let positions = config.layout.starts.clone();
        Ok(PressurePlate {
            doors_open: vec![false; n_doors],
            door_rewarded: vec![false; n_doors],
            positions,
            config,
            step: 0,
            done: false,
            solved: false,
        })
    }

    pub fn layout(&self) -> &PressurePlateLayout {
        &self.config.layout
    }

    pub fn positions(&self) -> &[Cell] {
        &self.positions
    }

    pub fn doors_open(&self) -> &[bool] {
        &self.doors_open
    }

    fn result(&self, reward: f32) -> StepResult {
        let layout = &self.config.layout;
        StepResult {
            observations: (0..layout.n_agents()).map(|i| layout.observe(&self.positions, &self.doors_open, i)).collect(),
            state: layout.global_state(&self.positions, &self.doors_open),
            reward,
            terminal: self.done,
            step_index: self.step,
        }
    }

    fn passable(&self, x: i64, y: i64) -> bool {
        let layout = &self.config.layout;
        if layout.is_wall(x, y) {
            return false;
        }
        let cell = (x as usize, y as usize);
        match layout.doors.iter().position(|&d| d == cell) {
            Some(i) => self.doors_open[i],
            None => true,
        }
    }
}

impl Environment for PressurePlate {
    fn spec(&self) -> EnvSpec {
        let l = &self.config.layout;
        EnvSpec {
            n_agents: l.n_agents(),
            obs_dim: l.obs_dim(),
            state_dim: l.state_dim(),
            n_actions: 5,
            max_steps: self.config.max_steps,
        }
    }

    fn reset(&mut self, _rng: &mut Rng) -> StepResult {
        self.positions = self.config.layout.starts.clone();
        self.doors_open = self.config.layout.doors_open(&self.positions);
        self.door_rewarded.fill(false);
        self.step = 0;
        self.done = false;
        self.solved = false;
        self.result(0.0)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EnvUsage("step called on a terminal pressureplate episode".into()));
        }
        let n = self.config.layout.n_agents();
        if joint_action.len() != n {
            return Err(Error::EnvUsage(format!("expected {n} actions, got {}", joint_action.len())));
        }
        let moves: Vec<Move> = joint_action
            .iter()
            .map(|&a| Move::from_index(a).ok_or_else(|| Error::EnvUsage(format!("invalid action {a}"))))
            .collect::<Result<_>>()?;

        // Sequential resolution in agent order against the door state at
        // the start of the step.
        for (i, m) in moves.iter().enumerate() {
            let (dx, dy) = m.delta();
            let (x, y) = (self.positions[i].0 as i64 + dx, self.positions[i].1 as i64 + dy);
            if (dx, dy) == (0, 0) || !self.passable(x, y) {
                continue;
            }
            let target = (x as usize, y as usize);
            if self.positions.iter().any(|&p| p == target) {
                continue;
            }
            self.positions[i] = target;
        }

        let layout = &self.config.layout;
        self.doors_open = layout.doors_open(&self.positions);
        let mut reward = 0.0;
        for (open, rewarded) in self.doors_open.iter().zip(self.door_rewarded.iter_mut()) {
            if *open && !*rewarded {
                *rewarded = true;
                reward += DOOR_REWARD;
            }
        }
        self.step += 1;
        if self.positions[layout.chest_agent] == layout.chest {
            reward += CHEST_REWARD;
            self.solved = true;
            self.done = true;
        }
        if self.step >= self.config.max_steps {
            self.done = true;
        }
        Ok(self.result(reward))
    }

    fn state(&self) -> Vec<f32> {
        self.config.layout.global_state(&self.positions, &self.doors_open)
    }

    fn solved(&self) -> bool {
        self.solved
    }
}
