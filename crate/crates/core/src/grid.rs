//! Hourly time grid shared by all series in a study.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hours in one week; scaling-factor mappings cycle with this period.
pub const HOURS_PER_WEEK: usize = 168;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid must have at least one step")]
    EmptyGrid,
    #[error("start weekday {0} out of range 0..=6")]
    BadWeekday(u8),
}

/// An hourly time grid of `steps` steps starting at midnight of `start_weekday`
/// (0 = Monday .. 6 = Sunday).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
    start_weekday: u8,
}

impl TimeGrid {
    /// Step length; the toolkit is hourly throughout.
    pub const STEP_HOURS: f64 = 1.0;

    pub fn new(steps: usize, start_weekday: u8) -> Result<Self, GridError> {
        if steps == 0 {
            return Err(GridError::EmptyGrid);
        }
        if start_weekday > 6 {
            return Err(GridError::BadWeekday(start_weekday));
        }
        Ok(Self {
            steps,
            start_weekday,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn start_weekday(&self) -> u8 {
        self.start_weekday
    }

    /// Weekday of step `t` (0 = Monday), assuming the horizon starts at
    /// midnight of `start_weekday`.
    pub fn weekday_of_step(&self, t: usize) -> u8 {
        ((self.start_weekday as usize + t / 24) % 7) as u8
    }

    pub fn hour_of_day(&self, t: usize) -> usize {
        t % 24
    }

    /// Day index within the horizon (0-based).
    pub fn day_of_step(&self, t: usize) -> usize {
        t / 24
    }
}

pub fn weekday_name(wd: u8) -> &'static str {
    match wd {
        0 => "Mon",
        1 => "Tue",
        2 => "Wed",
        3 => "Thu",
        4 => "Fri",
        5 => "Sat",
        _ => "Sun",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(TimeGrid::new(0, 0), Err(GridError::EmptyGrid));
        assert_eq!(TimeGrid::new(24, 7), Err(GridError::BadWeekday(7)));
    }

    #[test]
    fn weekday_advances_every_24_steps() {
        let g = TimeGrid::new(168, 0).unwrap();
        assert_eq!(g.weekday_of_step(0), 0);
        assert_eq!(g.weekday_of_step(23), 0);
        assert_eq!(g.weekday_of_step(24), 1);
        assert_eq!(g.weekday_of_step(167), 6);
        let g2 = TimeGrid::new(48, 5).unwrap();
        assert_eq!(g2.weekday_of_step(0), 5);
        assert_eq!(g2.weekday_of_step(24), 6);
    }
}
