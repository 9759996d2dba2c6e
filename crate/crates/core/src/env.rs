//! The 5x5 safe-navigation environment: textual state rendering, deterministic
//! clamped movement, danger zones, goal reward, and the scheduled domain shift.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Side length of the square grid.
pub const GRID_SIZE: u8 = 5;
/// Episodes are cut off after this many steps.
pub const MAX_EPISODE_STEPS: usize = 50;

/// A cell on the grid, always within bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridState {
    x: u8,
    y: u8,
}

/// Start cell (0, 0).
pub const START: GridState = GridState { x: 0, y: 0 };
/// Goal cell (4, 4); entering it ends the episode with reward 1.
pub const GOAL: GridState = GridState { x: 4, y: 4 };

impl GridState {
    /// Constructs a state from trusted coordinates.
    ///
    /// Panics if either coordinate is out of bounds; use [`GridState::new`]
    /// for untrusted input.
    pub const fn at(x: u8, y: u8) -> Self {
        assert!(x < GRID_SIZE && y < GRID_SIZE);
        Self { x, y }
    }

    pub fn new(x: u8, y: u8) -> Option<Self> {
        (x < GRID_SIZE && y < GRID_SIZE).then_some(Self { x, y })
    }

    pub fn x(self) -> u8 {
        self.x
    }

    pub fn y(self) -> u8 {
        self.y
    }

    /// Row-major index used by all tabular parameterizations: `y * 5 + x`.
    pub fn index(self) -> usize {
        self.y as usize * GRID_SIZE as usize + self.x as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        let n = GRID_SIZE as usize;
        (index < n * n).then(|| Self {
            x: (index % n) as u8,
            y: (index / n) as u8,
        })
    }

    /// All 25 states in index order.
    pub fn all() -> impl Iterator<Item = GridState> {
        (0..GRID_SIZE as usize * GRID_SIZE as usize).map(|i| Self::from_index(i).unwrap())
    }
}

impl fmt::Display for GridState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The four movement commands, in the fixed order used for tabular indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    North,
    South,
    East,
    West,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::North, Action::South, Action::East, Action::West];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Action::North => 0,
            Action::South => 1,
            Action::East => 2,
            Action::West => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::North => "north",
            Action::South => "south",
            Action::East => "east",
            Action::West => "west",
        }
    }

    /// Unit displacement (dx, dy); north increases y.
    pub fn delta(self) -> (i8, i8) {
        match self {
            Action::North => (0, 1),
            Action::South => (0, -1),
            Action::East => (1, 0),
            Action::West => (-1, 0),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown action {0:?}; expected one of north, south, east, west")]
pub struct ParseActionError(pub String);

impl FromStr for Action {
    type Err = ParseActionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "north" => Ok(Action::North),
            "south" => Ok(Action::South),
            "east" => Ok(Action::East),
            "west" => Ok(Action::West),
            other => Err(ParseActionError(other.to_string())),
        }
    }
}

/// A named environment variant: the label and the set of active danger cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainTag {
    label: String,
    danger_cells: BTreeSet<GridState>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("cell {0} cannot be a danger zone: it is the start or goal")]
    ReservedCell(GridState),
}

impl DomainTag {
    pub fn new(
        label: impl Into<String>,
        danger_cells: impl IntoIterator<Item = GridState>,
    ) -> Result<Self, DomainError> {
        let danger_cells: BTreeSet<GridState> = danger_cells.into_iter().collect();
        for &cell in &danger_cells {
            if cell == START || cell == GOAL {
                return Err(DomainError::ReservedCell(cell));
            }
        }
        Ok(Self {
            label: label.into(),
            danger_cells,
        })
    }

    /// The pre-shift variant: one danger zone at (2, 2).
    pub fn pre_shift() -> Self {
        Self::new("theta1", [GridState::at(2, 2)]).unwrap()
    }

    /// The post-shift variant: danger zones at (2, 2) and (3, 3).
    pub fn post_shift() -> Self {
        Self::new("theta2", [GridState::at(2, 2), GridState::at(3, 3)]).unwrap()
    }

    /// Resolves one of the two default labels.
    pub fn by_label(label: &str) -> Option<Self> {
        match label {
            "theta1" => Some(Self::pre_shift()),
            "theta2" => Some(Self::post_shift()),
            _ => None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn danger_cells(&self) -> &BTreeSet<GridState> {
        &self.danger_cells
    }

    pub fn is_danger(&self, s: GridState) -> bool {
        self.danger_cells.contains(&s)
    }
}

/// Switches from `pre` to `post` once `shift_epoch` is reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftSchedule {
    shift_epoch: usize,
    pre: DomainTag,
    post: DomainTag,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("shift_epoch must be positive")]
    ZeroShiftEpoch,
}

impl ShiftSchedule {
    pub fn new(shift_epoch: usize, pre: DomainTag, post: DomainTag) -> Result<Self, ScheduleError> {
        if shift_epoch == 0 {
            return Err(ScheduleError::ZeroShiftEpoch);
        }
        Ok(Self {
            shift_epoch,
            pre,
            post,
        })
    }

    pub fn shift_epoch(&self) -> usize {
        self.shift_epoch
    }

    /// The domain in effect at `epoch`: `pre` before the shift epoch, `post` from it on.
    pub fn active(&self, epoch: usize) -> &DomainTag {
        if epoch < self.shift_epoch {
            &self.pre
        } else {
            &self.post
        }
    }
}

impl Default for ShiftSchedule {
    fn default() -> Self {
        Self::new(100, DomainTag::pre_shift(), DomainTag::post_shift()).unwrap()
    }
}

/// Deterministic transition: one cell in the action's direction, clamped to the
/// grid (attempting to move off-grid leaves the state unchanged). Danger cells
/// neither block movement nor terminate the episode.
pub fn step(s: GridState, a: Action) -> GridState {
    let (dx, dy) = a.delta();
    let max = GRID_SIZE as i16 - 1;
    let x = (s.x as i16 + dx as i16).clamp(0, max) as u8;
    let y = (s.y as i16 + dy as i16).clamp(0, max) as u8;
    GridState { x, y }
}

/// Canonical textual rendering of a state.
pub fn render(s: GridState) -> String {
    format!("You are in room ({}, {})", s.x, s.y)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseStateError {
    #[error("state text {0:?} does not match template \"You are in room (x, y)\"")]
    TemplateMismatch(String),
    #[error("{field} coordinate {value} out of range 0..={}", GRID_SIZE - 1)]
    OutOfRange { field: &'static str, value: i64 },
}

pub(crate) fn parse_coordinate(
    text: &str,
    field: &'static str,
    original: &str,
) -> Result<u8, ParseStateError> {
    // Reject signs, whitespace, and leading zeros so parse is an exact inverse
    // of render.
    if text.is_empty()
        || !text.bytes().all(|b| b.is_ascii_digit())
        || (text.len() > 1 && text.starts_with('0'))
    {
        return Err(ParseStateError::TemplateMismatch(original.to_string()));
    }
    let value: i64 = text
        .parse()
        .map_err(|_| ParseStateError::TemplateMismatch(original.to_string()))?;
    if value >= GRID_SIZE as i64 {
        return Err(ParseStateError::OutOfRange { field, value });
    }
    Ok(value as u8)
}

pub(crate) fn parse_cell_pair(
    text: &str,
    original: &str,
) -> Result<(u8, u8), ParseStateError> {
    let (x_text, y_text) = text
        .split_once(", ")
        .ok_or_else(|| ParseStateError::TemplateMismatch(original.to_string()))?;
    let x = parse_coordinate(x_text, "x", original)?;
    let y = parse_coordinate(y_text, "y", original)?;
    Ok((x, y))
}

/// Exact inverse of [`render`] on canonical strings.
pub fn parse(text: &str) -> Result<GridState, ParseStateError> {
    let inner = text
        .strip_prefix("You are in room (")
        .and_then(|rest| rest.strip_suffix(')'))
        .ok_or_else(|| ParseStateError::TemplateMismatch(text.to_string()))?;
    let (x, y) = parse_cell_pair(inner, text)?;
    Ok(GridState { x, y })
}

/// Goal-entry reward: 1 when the transition reaches the goal cell, else 0.
/// Reaching the goal terminates the episode.
pub fn reward(_s: GridState, _a: Action, next: GridState) -> f64 {
    if next == GOAL {
        1.0
    } else {
        0.0
    }
}

/// True iff `s` is a danger cell of `d`.
pub fn is_danger(s: GridState, d: &DomainTag) -> bool {
    d.is_danger(s)
}
